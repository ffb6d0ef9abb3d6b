use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::matrix::Tensor;
use super::tape::{Tape, Var};
use super::Result;

fn evaluate<F>(f: &F, params: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    Ok(tape.value(out).item())
}

/// Maximum relative error between analytic gradients of `f` and central
/// differences with the given `step`, over every coordinate of every
/// parameter. Relative error is `|a - n| / max(1, |a|, |n|)`.
pub fn grad_check<F>(f: F, params: &[Tensor], step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    check(&f, params, step, None)
}

/// Like [`grad_check`] but probes at most `per_param` seeded random
/// coordinates of each parameter.
pub fn grad_check_sampled<F>(
    f: F,
    params: &[Tensor],
    step: f64,
    per_param: usize,
    seed: u64,
) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    check(&f, params, step, Some((per_param, seed)))
}

fn check<F>(f: &F, params: &[Tensor], step: f64, sampling: Option<(usize, u64)>) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.get(v)).collect();

    let mut rng = sampling.map(|(_, seed)| ChaCha8Rng::seed_from_u64(seed));
    let mut probe = params.to_vec();
    let mut worst: f64 = 0.0;
    for (p, grad) in analytic.iter().enumerate() {
        let n = params[p].len();
        let coords: Vec<usize> = match (&mut rng, sampling) {
            (Some(rng), Some((k, _))) if k < n => sample(rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        for k in coords {
            let original = params[p].data()[k];
            probe[p].data_mut()[k] = original + step;
            let plus = evaluate(f, &probe)?;
            probe[p].data_mut()[k] = original - step;
            let minus = evaluate(f, &probe)?;
            probe[p].data_mut()[k] = original;
            let numeric = (plus - minus) / (2.0 * step);
            let a = grad.data()[k];
            let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
