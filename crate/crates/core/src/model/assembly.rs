//! Laying out a parser state as an encoder input sequence.

use crate::encoder::{InputAssembly, RelationMatrix, REL_DEPENDENT_OF, REL_HEAD_OF, REL_NONE};
use crate::transition::ParserState;
use crate::vocab;

use super::variant::{Base, ModelVariant};

/// What a sequence position stands for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    Cls,
    Sep,
    /// Sentence index; 0 is the root.
    Word(usize),
}

/// The partial dependency graph over sentence indices (root included), updated arc by arc.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GraphMatrix {
    size: usize,
    codes: Vec<u8>,
    labels: Vec<Option<usize>>,
}

impl GraphMatrix {
    pub fn new(num_words: usize) -> GraphMatrix {
        let size = num_words + 1;
        GraphMatrix {
            size,
            codes: vec![REL_NONE; size * size],
            labels: vec![None; size],
        }
    }

    pub fn add_arc(&mut self, head: usize, dependent: usize, label: usize) {
        self.codes[head * self.size + dependent] = REL_HEAD_OF;
        self.codes[dependent * self.size + head] = REL_DEPENDENT_OF;
        self.labels[dependent] = Some(label);
    }

    pub fn code(&self, a: usize, b: usize) -> u8 {
        self.codes[a * self.size + b]
    }

    pub fn label(&self, word: usize) -> Option<usize> {
        self.labels[word]
    }

    /// The sub-matrix over a sequence of sources; special symbols relate to nothing.
    pub fn select(&self, sources: &[Source]) -> RelationMatrix {
        let n = sources.len();
        let mut codes = vec![REL_NONE; n * n];
        for (p, sp) in sources.iter().enumerate() {
            let Source::Word(a) = *sp else { continue };
            for (q, sq) in sources.iter().enumerate() {
                if let Source::Word(b) = *sq {
                    codes[p * n + q] = self.code(a, b);
                }
            }
        }
        let labels = sources
            .iter()
            .map(|s| match *s {
                Source::Word(a) => self.labels[a],
                _ => None,
            })
            .collect();
        RelationMatrix::from_parts(n, codes, labels)
    }
}

/// An encoder input built from a parser state, with pointers back into the state.
#[derive(Clone, Debug, PartialEq)]
pub struct StateAssembly {
    pub input: InputAssembly,
    pub relations: RelationMatrix,
    pub sources: Vec<Source>,
    /// Sequence positions of the top two stack elements and the buffer front.
    pub s2: Option<usize>,
    pub s1: Option<usize>,
    pub b1: Option<usize>,
}

impl StateAssembly {
    /// Recovers (stack, buffer, deleted) from a state-encoder layout.
    pub fn decode(&self) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
        let mut parts: [Vec<usize>; 3] = Default::default();
        for (i, src) in self.sources.iter().enumerate() {
            if let Source::Word(w) = *src {
                parts[self.input.segments[i]].push(w);
            }
        }
        let [stack, buffer, deleted] = parts;
        (stack, buffer, deleted)
    }
}

/// Word-level ids of one sentence; index 0 is the root symbol.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SentenceIds {
    pub forms: Vec<usize>,
    pub upos: Vec<usize>,
}

impl SentenceIds {
    pub fn num_words(&self) -> usize {
        self.forms.len() - 1
    }
}

fn push(input: &mut InputAssembly, sources: &mut Vec<Source>, ids: &SentenceIds, src: Source, segment: Option<usize>) {
    let (form, upos) = match src {
        Source::Cls => (vocab::CLS, vocab::CLS),
        Source::Sep => (vocab::SEP, vocab::SEP),
        Source::Word(w) => (ids.forms[w], ids.upos[w]),
    };
    input.positions.push(input.forms.len());
    input.forms.push(form);
    input.upos.push(upos);
    if let Some(s) = segment {
        input.segments.push(s);
    }
    sources.push(src);
}

/// Builds the encoder input for `state` under `variant`.
///
/// State layout: `CLS, stack bottom→top, SEP, buffer front→back[, SEP, deleted]`, with
/// segment ids 0/1/2 and SEP taking the segment it opens. Sentence layout:
/// `CLS, ROOT, w1..wn, SEP`, independent of the state.
pub fn assemble(state: &ParserState, ids: &SentenceIds, graph: &GraphMatrix, variant: &ModelVariant) -> StateAssembly {
    let mut input = InputAssembly::default();
    let mut sources = Vec::new();
    let (s2, s1, b1);
    match variant.base {
        Base::State => {
            push(&mut input, &mut sources, ids, Source::Cls, Some(0));
            for &w in state.stack() {
                push(&mut input, &mut sources, ids, Source::Word(w), Some(0));
            }
            let depth = state.stack().len();
            s1 = (depth >= 1).then_some(depth);
            s2 = (depth >= 2).then(|| depth - 1);
            push(&mut input, &mut sources, ids, Source::Sep, Some(1));
            b1 = (!state.buffer().is_empty()).then_some(sources.len());
            for &w in state.buffer() {
                push(&mut input, &mut sources, ids, Source::Word(w), Some(1));
            }
            if variant.graph_input {
                push(&mut input, &mut sources, ids, Source::Sep, Some(2));
                for &w in state.deleted() {
                    push(&mut input, &mut sources, ids, Source::Word(w), Some(2));
                }
            }
        }
        Base::Sentence => {
            push(&mut input, &mut sources, ids, Source::Cls, None);
            for w in 0..=ids.num_words() {
                push(&mut input, &mut sources, ids, Source::Word(w), None);
            }
            push(&mut input, &mut sources, ids, Source::Sep, None);
            s1 = state.s(1).map(|w| w + 1);
            s2 = state.s(2).map(|w| w + 1);
            b1 = state.b1().map(|w| w + 1);
        }
    }
    let relations = if variant.graph_input {
        graph.select(&sources)
    } else {
        RelationMatrix::empty(sources.len())
    };
    input.dep_labels = relations.dep_labels().to_vec();
    StateAssembly {
        input,
        relations,
        sources,
        s2,
        s1,
        b1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transition::Action;

    fn ids(n: usize) -> SentenceIds {
        SentenceIds {
            forms: std::iter::once(vocab::ROOT).chain((0..n).map(|i| 10 + i)).collect(),
            upos: std::iter::once(vocab::ROOT).chain((0..n).map(|i| 20 + i)).collect(),
        }
    }

    #[test]
    fn initial_state_layout() {
        let v = ModelVariant::preset("state-tr-g2g").unwrap();
        let state = ParserState::initial(2);
        let a = assemble(&state, &ids(2), &GraphMatrix::new(2), &v);
        assert_eq!(
            a.sources,
            vec![Source::Cls, Source::Word(0), Source::Sep, Source::Word(1), Source::Word(2), Source::Sep]
        );
        assert_eq!(a.input.segments, vec![0, 0, 1, 1, 1, 2]);
        assert_eq!(a.input.forms, vec![vocab::CLS, vocab::ROOT, vocab::SEP, 10, 11, vocab::SEP]);
        assert!(a.relations.is_all_none());
        assert_eq!((a.s2, a.s1, a.b1), (None, Some(1), Some(3)));
    }

    #[test]
    fn left_arc_moves_word_to_deleted_segment() {
        let v = ModelVariant::preset("state-tr-g2g").unwrap();
        let mut state = ParserState::initial(2);
        let mut g = GraphMatrix::new(2);
        state.apply_mut(Action::SHIFT).unwrap();
        state.apply_mut(Action::SHIFT).unwrap();
        state.apply_mut(Action::left_arc(4)).unwrap();
        g.add_arc(2, 1, 4);
        let a = assemble(&state, &ids(2), &g, &v);
        // CLS ROOT w2 SEP SEP w1
        assert_eq!(a.sources[2], Source::Word(2));
        assert_eq!(a.sources[5], Source::Word(1));
        assert_eq!(a.relations.code(2, 5), REL_HEAD_OF);
        assert_eq!(a.relations.code(5, 2), REL_DEPENDENT_OF);
        assert_eq!(a.input.dep_labels[5], Some(4));
        assert_eq!(a.decode(), (vec![0, 2], vec![], vec![1]));
        a.relations.check_invariants().unwrap();

        let sv = ModelVariant::preset("sent-tr-g2g").unwrap();
        let s = assemble(&state, &ids(2), &g, &sv);
        // CLS ROOT w1 w2 SEP: fixed positions
        assert_eq!(s.relations.code(3, 2), REL_HEAD_OF);
        assert_eq!(s.input.dep_labels[2], Some(4));
        assert_eq!((s.s2, s.s1, s.b1), (Some(1), Some(3), None));
    }

    #[test]
    fn baseline_has_no_deleted_segment() {
        let v = ModelVariant::preset("state-tr").unwrap();
        let a = assemble(&ParserState::initial(3), &ids(3), &GraphMatrix::new(3), &v);
        assert_eq!(a.input.len(), 6);
        assert!(a.input.segments.iter().all(|&s| s < 2));
    }
}
