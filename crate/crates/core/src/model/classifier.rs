use rand::RngCore;
use rand_chacha::ChaCha8Rng;

use crate::encoder::{xavier, EncoderError};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

/// One-hidden-layer ReLU perceptron.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl Mlp {
    pub fn init(name: &str, input: usize, hidden: usize, output: usize, store: &mut ParamStore, rng: &mut dyn RngCore) -> Mlp {
        Mlp {
            w1: store.add(format!("{name}.w1"), xavier(input, hidden, rng)),
            b1: store.add(format!("{name}.b1"), Tensor::zeros(1, hidden)),
            w2: store.add(format!("{name}.w2"), xavier(hidden, output, rng)),
            b2: store.add(format!("{name}.b2"), Tensor::zeros(1, output)),
        }
    }

    pub fn bind(name: &str, store: &ParamStore) -> Option<Mlp> {
        Some(Mlp {
            w1: store.id(&format!("{name}.w1"))?,
            b1: store.id(&format!("{name}.b1"))?,
            w2: store.id(&format!("{name}.w2"))?,
            b2: store.id(&format!("{name}.b2"))?,
        })
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        x: Var,
        dropout: Option<(f64, &mut ChaCha8Rng)>,
    ) -> Result<Var, EncoderError> {
        let (w1, b1, w2, b2) = (
            tape.param(self.w1),
            tape.param(self.b1),
            tape.param(self.w2),
            tape.param(self.b2),
        );
        let h = tape.matmul(x, w1)?;
        let h = tape.add_row(h, b1)?;
        let mut h = tape.relu(h);
        if let Some((rate, rng)) = dropout {
            h = tape.dropout(h, rate, rng);
        }
        let y = tape.matmul(h, w2)?;
        Ok(tape.add_row(y, b2)?)
    }
}
