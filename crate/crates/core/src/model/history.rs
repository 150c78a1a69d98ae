//! LSTM over the sequence of previous transitions.

use rand::RngCore;

use crate::encoder::{embedding_table, xavier, EncoderError};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::transition::Action;

#[derive(Clone, Debug)]
pub struct HistoryParams {
    /// One row per action kind.
    pub action: ParamId,
    /// One row per label plus a final row for unlabeled actions.
    pub label: ParamId,
    pub wx: ParamId,
    pub wh: ParamId,
    pub bias: ParamId,
    pub dim: usize,
    pub num_labels: usize,
}

impl HistoryParams {
    pub fn init(m: usize, num_labels: usize, store: &mut ParamStore, rng: &mut dyn RngCore) -> Self {
        HistoryParams {
            action: store.add("history.action", embedding_table(4, m, rng)),
            label: store.add("history.label", embedding_table(num_labels + 1, m, rng)),
            wx: store.add("history.wx", xavier(m, 4 * m, rng)),
            wh: store.add("history.wh", xavier(m, 4 * m, rng)),
            bias: store.add("history.bias", Tensor::zeros(1, 4 * m)),
            dim: m,
            num_labels,
        }
    }

    pub fn bind(store: &ParamStore, m: usize, num_labels: usize) -> Option<Self> {
        Some(HistoryParams {
            action: store.id("history.action")?,
            label: store.id("history.label")?,
            wx: store.id("history.wx")?,
            wh: store.id("history.wh")?,
            bias: store.id("history.bias")?,
            dim: m,
            num_labels,
        })
    }

    /// Zero hidden and cell state.
    pub fn start(&self, tape: &mut Tape) -> HistoryState {
        HistoryState {
            h: tape.constant(Tensor::zeros(1, self.dim)),
            c: tape.constant(Tensor::zeros(1, self.dim)),
        }
    }

    /// Feeds one action (gates ordered input, forget, cell, output).
    pub fn step(&self, tape: &mut Tape, state: &HistoryState, action: Action) -> Result<HistoryState, EncoderError> {
        let m = self.dim;
        let at = tape.param(self.action);
        let lt = tape.param(self.label);
        let a = tape.select_rows(at, &[action.kind().index()])?;
        let l = tape.select_rows(lt, &[action.label().unwrap_or(self.num_labels)])?;
        let x = tape.add(a, l)?;
        let (wx, wh, b) = (tape.param(self.wx), tape.param(self.wh), tape.param(self.bias));
        let gx = tape.matmul(x, wx)?;
        let gh = tape.matmul(state.h, wh)?;
        let g = tape.add(gx, gh)?;
        let g = tape.add_row(g, b)?;
        let i = tape.slice_cols(g, 0, m)?;
        let f = tape.slice_cols(g, m, m)?;
        let u = tape.slice_cols(g, 2 * m, m)?;
        let o = tape.slice_cols(g, 3 * m, m)?;
        let (i, f, u, o) = (tape.sigmoid(i), tape.sigmoid(f), tape.tanh(u), tape.sigmoid(o));
        let keep = tape.mul(f, state.c)?;
        let write = tape.mul(i, u)?;
        let c = tape.add(keep, write)?;
        let tc = tape.tanh(c);
        let h = tape.mul(o, tc)?;
        Ok(HistoryState { h, c })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct HistoryState {
    pub h: Var,
    pub c: Var,
}
