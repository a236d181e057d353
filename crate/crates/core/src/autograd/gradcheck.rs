use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor;

const DENOM_FLOOR: f64 = 1e-6;

/// How many entries to probe and with which step.
#[derive(Clone, Debug)]
pub struct GradcheckSpec {
    pub eps: f64,
    /// Probe at most this many entries per tensor (chosen at random);
    /// `None` probes every entry.
    pub max_entries_per_tensor: Option<usize>,
    pub seed: u64,
}

impl Default for GradcheckSpec {
    fn default() -> Self {
        Self {
            eps: 1e-6,
            max_entries_per_tensor: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub max_rel_err: f64,
    /// (tensor index, flat entry) of the worst disagreement.
    pub worst: Option<(usize, usize)>,
    pub entries_checked: usize,
}

/// Compares tape gradients of the scalar `f(params)` against central
/// differences `(f(θ+εeᵢ) − f(θ−εeᵢ)) / 2ε`. Relative error uses a
/// `max(|a|, |b|, 1e-6)` denominator; the floor sits above the roundoff of
/// a central difference at ε = 1e-6, so exactly-zero gradients are not
/// reported as failures.
///
/// `params` is restored to its original values before returning.
pub fn finite_diff_gradcheck<F>(f: F, params: &mut [Tensor], spec: &GradcheckSpec) -> Result<GradcheckReport>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let loss = f(&tape, &vars)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.get(v)).collect();
    drop(grads);
    drop(tape);

    let eval = |params: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.constant(p.clone())).collect();
        let loss = f(&tape, &vars)?;
        tape.value(loss).item()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut report = GradcheckReport {
        max_rel_err: 0.0,
        worst: None,
        entries_checked: 0,
    };
    for t in 0..params.len() {
        let n = params[t].numel();
        let entries: Vec<usize> = match spec.max_entries_per_tensor {
            Some(k) if k < n => {
                let mut picked = sample(&mut rng, n, k).into_vec();
                picked.sort_unstable();
                picked
            }
            _ => (0..n).collect(),
        };
        for i in entries {
            let original = params[t].data()[i];
            params[t].data_mut()[i] = original + spec.eps;
            let plus = eval(params);
            params[t].data_mut()[i] = original - spec.eps;
            let minus = eval(params);
            params[t].data_mut()[i] = original;
            let numeric = (plus? - minus?) / (2.0 * spec.eps);
            let a = analytic[t].data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(DENOM_FLOOR);
            report.entries_checked += 1;
            if rel > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(rel);
                report.worst = Some((t, i));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_quadratic() {
        let mut params = vec![Tensor::from_fn(&[5], |i| i as f64 - 2.0)];
        let report = finite_diff_gradcheck(
            |tape, p| {
                let sq = tape.mul(p[0], p[0])?;
                tape.sum(sq)
            },
            &mut params,
            &GradcheckSpec {
                eps: 1e-3,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-6, "{report:?}");
        assert_eq!(report.entries_checked, 5);
    }

    #[test]
    fn constant_function_has_zero_gradients() {
        let mut params = vec![Tensor::ones(&[3])];
        let report = finite_diff_gradcheck(
            |tape, _| Ok(tape.constant(Tensor::scalar(7.0))),
            &mut params,
            &GradcheckSpec::default(),
        )
        .unwrap();
        assert_eq!(report.max_rel_err, 0.0);
    }

    #[test]
    fn sampling_limits_entries_and_restores_params() {
        let original = Tensor::from_fn(&[10, 10], |i| i as f64 * 0.01);
        let mut params = vec![original.clone()];
        let report = finite_diff_gradcheck(
            |tape, p| {
                let s = tape.gelu(p[0])?;
                tape.sum(s)
            },
            &mut params,
            &GradcheckSpec {
                eps: 1e-5,
                max_entries_per_tensor: Some(7),
                seed: 3,
            },
        )
        .unwrap();
        assert_eq!(report.entries_checked, 7);
        assert_eq!(params[0], original);
    }
}
