//! Arc-standard transitions extended with SWAP, and a static oracle.
//!
//! Token index 0 is the artificial root; words are 1..=n in surface order.

use std::fmt;

use thiserror::Error;

/// Action kinds, in classifier output order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ActionKind {
    Shift,
    Swap,
    RightArc,
    LeftArc,
}

impl ActionKind {
    pub const ALL: [ActionKind; 4] = [ActionKind::Shift, ActionKind::Swap, ActionKind::RightArc, ActionKind::LeftArc];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<ActionKind> {
        Self::ALL.get(i).copied()
    }

    pub fn is_arc(self) -> bool {
        matches!(self, ActionKind::RightArc | ActionKind::LeftArc)
    }

    pub fn name(self) -> &'static str {
        match self {
            ActionKind::Shift => "SHIFT",
            ActionKind::Swap => "SWAP",
            ActionKind::RightArc => "RIGHT-ARC",
            ActionKind::LeftArc => "LEFT-ARC",
        }
    }

    pub fn parse(s: &str) -> Option<ActionKind> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

/// A transition; arc actions carry a label id, the others never do.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Action {
    kind: ActionKind,
    label: Option<usize>,
}

impl Action {
    pub const SHIFT: Action = Action {
        kind: ActionKind::Shift,
        label: None,
    };
    pub const SWAP: Action = Action {
        kind: ActionKind::Swap,
        label: None,
    };

    pub fn left_arc(label: usize) -> Action {
        Action {
            kind: ActionKind::LeftArc,
            label: Some(label),
        }
    }

    pub fn right_arc(label: usize) -> Action {
        Action {
            kind: ActionKind::RightArc,
            label: Some(label),
        }
    }

    /// Builds an action of `kind`; `label` is used only for arc kinds.
    pub fn new(kind: ActionKind, label: usize) -> Action {
        match kind {
            ActionKind::Shift => Action::SHIFT,
            ActionKind::Swap => Action::SWAP,
            ActionKind::LeftArc => Action::left_arc(label),
            ActionKind::RightArc => Action::right_arc(label),
        }
    }

    pub fn kind(&self) -> ActionKind {
        self.kind
    }

    pub fn label(&self) -> Option<usize> {
        self.label
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.label {
            Some(l) => write!(f, "{}({l})", self.kind.name()),
            None => f.write_str(self.kind.name()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Arc {
    pub head: usize,
    pub dependent: usize,
    pub label: usize,
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
#[error("illegal {action}: {reason}")]
pub struct TransitionError {
    pub action: String,
    pub reason: &'static str,
}

/// A gold dependency tree: `heads[i]` and `labels[i]` for words 1..=n; index 0 is unused.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DepTree {
    pub heads: Vec<usize>,
    pub labels: Vec<usize>,
}

impl DepTree {
    /// `heads` and `labels` for words 1..=n, without the root placeholder.
    pub fn new(heads: &[usize], labels: &[usize]) -> DepTree {
        assert_eq!(heads.len(), labels.len());
        DepTree {
            heads: std::iter::once(0).chain(heads.iter().copied()).collect(),
            labels: std::iter::once(0).chain(labels.iter().copied()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.heads.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn arcs(&self) -> Vec<Arc> {
        (1..=self.len())
            .map(|d| Arc {
                head: self.heads[d],
                dependent: d,
                label: self.labels[d],
            })
            .collect()
    }

    pub fn children(&self) -> Vec<Vec<usize>> {
        let mut children = vec![Vec::new(); self.len() + 1];
        for d in 1..=self.len() {
            children[self.heads[d]].push(d);
        }
        children
    }

    /// True if no two arcs cross when drawn above the sentence (root arc included).
    pub fn is_projective(&self) -> bool {
        let arcs = self.arcs();
        arcs.iter().all(|a| {
            let (l1, r1) = (a.head.min(a.dependent), a.head.max(a.dependent));
            arcs.iter().all(|b| {
                let (l2, r2) = (b.head.min(b.dependent), b.head.max(b.dependent));
                !((l1 < l2 && l2 < r1 && r1 < r2) || (l2 < l1 && l1 < r2 && r2 < r1))
            })
        })
    }
}

/// Parser configuration. The stack holds ROOT at the bottom; the buffer front is index 0.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParserState {
    stack: Vec<usize>,
    buffer: Vec<usize>,
    deleted: Vec<usize>,
    heads: Vec<Option<usize>>,
    labels: Vec<Option<usize>>,
    step: usize,
}

impl ParserState {
    pub fn initial(num_words: usize) -> ParserState {
        ParserState {
            stack: vec![0],
            buffer: (1..=num_words).collect(),
            deleted: Vec::new(),
            heads: vec![None; num_words + 1],
            labels: vec![None; num_words + 1],
            step: 0,
        }
    }

    pub fn num_words(&self) -> usize {
        self.heads.len() - 1
    }

    pub fn stack(&self) -> &[usize] {
        &self.stack
    }

    pub fn buffer(&self) -> &[usize] {
        &self.buffer
    }

    /// Words that have been reduced, in sentence order.
    pub fn deleted(&self) -> &[usize] {
        &self.deleted
    }

    pub fn step(&self) -> usize {
        self.step
    }

    /// `i`-th element from the stack top, 1-based (`s(1)` is the top).
    pub fn s(&self, i: usize) -> Option<usize> {
        self.stack.len().checked_sub(i).map(|k| self.stack[k])
    }

    pub fn b1(&self) -> Option<usize> {
        self.buffer.first().copied()
    }

    pub fn head_of(&self, word: usize) -> Option<usize> {
        self.heads[word]
    }

    pub fn label_of(&self, word: usize) -> Option<usize> {
        self.labels[word]
    }

    /// Attached arcs ordered by dependent.
    pub fn arcs(&self) -> Vec<Arc> {
        (1..=self.num_words())
            .filter_map(|d| {
                self.heads[d].map(|head| Arc {
                    head,
                    dependent: d,
                    label: self.labels[d].expect("label set with head"),
                })
            })
            .collect()
    }

    pub fn is_terminal(&self) -> bool {
        self.buffer.is_empty() && self.stack == [0]
    }

    /// Checks an action kind against the current configuration.
    pub fn check(&self, kind: ActionKind) -> Result<(), &'static str> {
        let two = self.stack.len() >= 2;
        let s2_is_root = self.s(2) == Some(0);
        match kind {
            ActionKind::Shift if self.buffer.is_empty() => Err("buffer is empty"),
            ActionKind::Shift => Ok(()),
            _ if !two => Err("stack holds fewer than two elements"),
            ActionKind::LeftArc if s2_is_root => Err("ROOT cannot be a dependent"),
            ActionKind::LeftArc => Ok(()),
            ActionKind::RightArc if s2_is_root && !(self.buffer.is_empty() && self.stack.len() == 2) => {
                Err("attachment to ROOT only once the buffer is empty")
            }
            ActionKind::RightArc => Ok(()),
            ActionKind::Swap if s2_is_root => Err("ROOT cannot be swapped"),
            // Stack elements are word indices, i.e. original positions.
            ActionKind::Swap if self.s(2) > self.s(1) => Err("top two stack elements are already out of order"),
            ActionKind::Swap => Ok(()),
        }
    }

    pub fn is_legal(&self, kind: ActionKind) -> bool {
        self.check(kind).is_ok()
    }

    /// Legality mask in `ActionKind` index order.
    pub fn legal_mask(&self) -> [bool; 4] {
        ActionKind::ALL.map(|k| self.is_legal(k))
    }

    pub fn legal_actions(&self) -> Vec<ActionKind> {
        ActionKind::ALL.into_iter().filter(|&k| self.is_legal(k)).collect()
    }

    /// Applies `action` in place.
    pub fn apply_mut(&mut self, action: Action) -> Result<(), TransitionError> {
        self.check(action.kind).map_err(|reason| TransitionError {
            action: action.to_string(),
            reason,
        })?;
        match action.kind {
            ActionKind::Shift => {
                let w = self.buffer.remove(0);
                self.stack.push(w);
            }
            ActionKind::Swap => {
                let s1 = self.stack.pop().expect("checked");
                let s2 = self.stack.pop().expect("checked");
                self.stack.push(s1);
                self.buffer.insert(0, s2);
            }
            ActionKind::LeftArc | ActionKind::RightArc => {
                let s1 = self.stack.pop().expect("checked");
                let s2 = self.stack.pop().expect("checked");
                let (head, dep) = if action.kind == ActionKind::LeftArc { (s1, s2) } else { (s2, s1) };
                self.stack.push(head);
                self.heads[dep] = Some(head);
                self.labels[dep] = action.label;
                let at = self.deleted.partition_point(|&d| d < dep);
                self.deleted.insert(at, dep);
            }
        }
        self.step += 1;
        Ok(())
    }

    pub fn apply(&self, action: Action) -> Result<ParserState, TransitionError> {
        let mut next = self.clone();
        next.apply_mut(action)?;
        Ok(next)
    }

    /// The parsed tree as (heads, labels) without the root placeholder, if terminal.
    pub fn to_tree(&self) -> Option<DepTree> {
        if !self.is_terminal() {
            return None;
        }
        let heads: Vec<usize> = self.heads[1..].iter().map(|h| h.expect("terminal")).collect();
        let labels: Vec<usize> = self.labels[1..].iter().map(|l| l.expect("terminal")).collect();
        Some(DepTree::new(&heads, &labels))
    }
}

/// In-order traversal rank per token (index 0 is the root, rank 0).
///
/// Each head is visited after the subtrees of its left dependents and before those of
/// its right dependents; dependents are taken in surface order. For a projective tree
/// this reproduces the surface order.
pub fn projective_order(tree: &DepTree) -> Vec<usize> {
    let children = tree.children();
    let mut rank = vec![0; tree.len() + 1];
    let mut next = 0;
    // Explicit stack of (node, expanded) to avoid recursion depth issues.
    let mut work = vec![(0usize, false)];
    while let Some((node, expanded)) = work.pop() {
        if expanded {
            rank[node] = next;
            next += 1;
            continue;
        }
        // Push in reverse visiting order.
        for &c in children[node].iter().rev().filter(|&&c| c > node) {
            work.push((c, false));
        }
        work.push((node, true));
        for &c in children[node].iter().rev().filter(|&&c| c < node) {
            work.push((c, false));
        }
    }
    rank
}

/// Gold action sequence for `tree` under the eager-SWAP static oracle.
pub fn oracle_sequence(tree: &DepTree) -> Vec<Action> {
    let order = projective_order(tree);
    let n = tree.len();
    let mut missing = vec![0usize; n + 1];
    for d in 1..=n {
        missing[tree.heads[d]] += 1;
    }
    let mut state = ParserState::initial(n);
    let mut actions = Vec::new();
    while !state.is_terminal() {
        let action = match (state.s(2), state.s(1)) {
            (Some(s2), Some(s1)) if s2 != 0 && tree.heads[s2] == s1 && missing[s2] == 0 => {
                Action::left_arc(tree.labels[s2])
            }
            (Some(s2), Some(s1))
                if tree.heads[s1] == s2 && missing[s1] == 0 && state.is_legal(ActionKind::RightArc) =>
            {
                Action::right_arc(tree.labels[s1])
            }
            (Some(s2), Some(s1)) if s2 != 0 && order[s2] > order[s1] => Action::SWAP,
            _ => Action::SHIFT,
        };
        match action.kind {
            ActionKind::LeftArc => missing[state.s(1).unwrap()] -= 1,
            ActionKind::RightArc => missing[state.s(2).unwrap()] -= 1,
            _ => {}
        }
        state
            .apply_mut(action)
            .unwrap_or_else(|e| panic!("oracle produced an illegal action on a valid tree: {e}"));
        actions.push(action);
    }
    actions
}

/// Replays `actions` from the initial state.
pub fn replay(num_words: usize, actions: &[Action]) -> Result<ParserState, TransitionError> {
    let mut state = ParserState::initial(num_words);
    for &a in actions {
        state.apply_mut(a)?;
    }
    Ok(state)
}
