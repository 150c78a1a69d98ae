//! Central finite-difference validation of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Grads, ParamStore};

/// Denominator floor for the relative error, so coordinates whose true gradient is
/// zero are judged by absolute error instead of dividing by round-off.
pub const REL_ERR_FLOOR: f64 = 1e-6;

/// `|a − n| / max(|a|, |n|, REL_ERR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    /// Worst relative error per parameter tensor, by name.
    pub per_param: Vec<(String, f64)>,
    pub coordinates_checked: usize,
    /// (parameter, flat index, analytic, numeric) of the worst coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.per_param.iter().map(|(_, e)| *e).fold(0.0, f64::max)
    }
}

/// Compares `analytic` against `(f(θ+ε) − f(θ−ε)) / 2ε` on up to `samples` coordinates
/// of every parameter (all coordinates of smaller tensors). `params` is restored afterwards.
pub fn finite_difference_check<F>(
    mut f: F,
    params: &mut ParamStore,
    analytic: &Grads,
    eps: f64,
    samples: usize,
    seed: u64,
) -> GradCheckReport
where
    F: FnMut(&ParamStore) -> f64,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport::default();
    let mut worst = -1.0;
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let len = params.value(id).len();
        let coords: Vec<usize> = if len <= samples {
            (0..len).collect()
        } else {
            let mut v = sample(&mut rng, len, samples).into_vec();
            v.sort_unstable();
            v
        };
        let mut tensor_worst: f64 = 0.0;
        for k in coords {
            let orig = params.value(id).data()[k];
            params.value_mut(id).data_mut()[k] = orig + eps;
            let plus = f(params);
            params.value_mut(id).data_mut()[k] = orig - eps;
            let minus = f(params);
            params.value_mut(id).data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.get(id).data()[k];
            let err = relative_error(a, numeric);
            tensor_worst = tensor_worst.max(err);
            report.coordinates_checked += 1;
            if err > worst {
                worst = err;
                report.worst = Some((params.name(id).to_string(), k, a, numeric));
            }
        }
        report.per_param.push((params.name(id).to_string(), tensor_worst));
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Tape, Tensor};

    #[test]
    fn linear_function_is_exact_to_round_off() {
        let mut params = ParamStore::new();
        let w = params.add("w", Tensor::from_rows(&[&[0.5, -1.5, 2.0]]));
        let c = Tensor::from_rows(&[&[3.0], &[1.0], &[-2.0]]);
        let f = |p: &ParamStore| p.value(w).matmul(&c).unwrap().item();
        let mut grads = Grads::zeros_like(&params);
        {
            let mut tape = Tape::new(&params);
            let wv = tape.param(w);
            let cv = tape.constant(c.clone());
            let y = tape.matmul(wv, cv).unwrap();
            tape.backward_into(y, &mut grads).unwrap();
        }
        let report = finite_difference_check(f, &mut params, &grads, 1e-5, 32, 0);
        assert!(report.max_relative_error() < 1e-9, "{report:?}");
        assert_eq!(report.coordinates_checked, 3);
    }
}
