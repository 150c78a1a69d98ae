//! Recursive composition of partial subtrees into token vectors.
//!
//! Each word carries a vector `C` (initially its token embedding), the vector `ω` of its
//! most recently attached dependent and that attachment's label embedding `l`. After
//! every transition the words still on the stack or buffer are updated residually:
//! `C ← Comp([C; ω; l]) + C` with `Comp(x) = W2·tanh(W1·x + b1) + b2`. Words without a
//! dependent use a learned null dependent and the learned null label of their
//! position in the input sequence.

use rand::RngCore;

use crate::encoder::{embedding_table, xavier, EncoderError};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Debug)]
pub struct CompositionParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    /// `2L × m`: left-arc labels first, then right-arc labels.
    pub label: ParamId,
    pub null_dep: ParamId,
    /// One row per sentence position.
    pub null_label: ParamId,
    pub num_labels: usize,
}

impl CompositionParams {
    pub fn init(m: usize, num_labels: usize, max_positions: usize, store: &mut ParamStore, rng: &mut dyn RngCore) -> Self {
        CompositionParams {
            w1: store.add("comp.w1", xavier(3 * m, m, rng)),
            b1: store.add("comp.b1", Tensor::zeros(1, m)),
            w2: store.add("comp.w2", xavier(m, m, rng)),
            b2: store.add("comp.b2", Tensor::zeros(1, m)),
            label: store.add("comp.label", embedding_table(2 * num_labels.max(1), m, rng)),
            null_dep: store.add("comp.null_dep", embedding_table(1, m, rng)),
            null_label: store.add("comp.null_label", embedding_table(max_positions, m, rng)),
            num_labels,
        }
    }

    pub fn bind(store: &ParamStore, num_labels: usize) -> Option<Self> {
        Some(CompositionParams {
            w1: store.id("comp.w1")?,
            b1: store.id("comp.b1")?,
            w2: store.id("comp.w2")?,
            b2: store.id("comp.b2")?,
            label: store.id("comp.label")?,
            null_dep: store.id("comp.null_dep")?,
            null_label: store.id("comp.null_label")?,
            num_labels,
        })
    }

    /// Label embedding of an arc; `right` selects the second block.
    pub fn arc_label(&self, tape: &mut Tape, label: usize, right: bool) -> Result<Var, EncoderError> {
        let row = label + if right { self.num_labels } else { 0 };
        let table = tape.param(self.label);
        Ok(tape.select_rows(table, &[row])?)
    }

    /// Applies one residual composition step to the listed `(word, sequence position)`
    /// pairs; the position selects the null label of words without dependents.
    pub fn update(&self, tape: &mut Tape, state: &mut CompositionState, slots: &[(usize, usize)]) -> Result<(), EncoderError> {
        if slots.is_empty() {
            return Ok(());
        }
        let rows_c: Vec<Var> = slots.iter().map(|&(w, _)| state.c[w]).collect();
        let null_dep = tape.param(self.null_dep);
        let rows_o: Vec<Var> = slots.iter().map(|&(w, _)| state.omega[w].unwrap_or(null_dep)).collect();
        let null_table = tape.param(self.null_label);
        let max = tape.value(null_table).rows();
        let mut rows_l = Vec::with_capacity(slots.len());
        for &(w, pos) in slots {
            rows_l.push(match state.label[w] {
                Some(l) => l,
                None => tape.select_rows(null_table, &[pos.min(max - 1)])?,
            });
        }
        let c = tape.concat_rows(&rows_c)?;
        let o = tape.concat_rows(&rows_o)?;
        let l = tape.concat_rows(&rows_l)?;
        let x = tape.concat_cols(&[c, o, l])?;
        let (w1, b1, w2, b2) = (
            tape.param(self.w1),
            tape.param(self.b1),
            tape.param(self.w2),
            tape.param(self.b2),
        );
        let h = tape.matmul(x, w1)?;
        let h = tape.add_row(h, b1)?;
        let h = tape.tanh(h);
        let y = tape.matmul(h, w2)?;
        let y = tape.add_row(y, b2)?;
        let out = tape.add(y, c)?;
        for (k, &(w, _)) in slots.iter().enumerate() {
            state.c[w] = tape.select_rows(out, &[k])?;
        }
        Ok(())
    }
}

/// Per-word composition vectors on a tape; index 0 is the root.
#[derive(Clone, Debug)]
pub struct CompositionState {
    pub c: Vec<Var>,
    pub omega: Vec<Option<Var>>,
    pub label: Vec<Option<Var>>,
}

impl CompositionState {
    /// Starts from `T_w`, one `1 × m` row per word.
    pub fn new(token_rows: Vec<Var>) -> Self {
        let n = token_rows.len();
        CompositionState {
            c: token_rows,
            omega: vec![None; n],
            label: vec![None; n],
        }
    }

    /// Records that `head` just received `dependent` with the given label vector.
    pub fn attach(&mut self, head: usize, dependent: usize, label: Var) {
        self.omega[head] = Some(self.c[dependent]);
        self.label[head] = Some(label);
    }
}
