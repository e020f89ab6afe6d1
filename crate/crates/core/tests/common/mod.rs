#![allow(dead_code)]

use gteforge::tensor::{Tape, Tensor, Var};
use gteforge::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), data).unwrap().with_grad()
}

/// `|a - n| / max(|a|, |n|, floor)`: relative error, falling back to an
/// absolute comparison for gradients smaller than `floor`.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Evaluates `f` on fresh leaves of `inputs`, returning the scalar output.
pub fn eval<F>(inputs: &[Tensor], f: &F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let out = f(&mut tape, &vars).unwrap();
    tape.item(out)
}

/// Analytic gradients of `f` with respect to every input.
pub fn analytic_grads<F>(inputs: &[Tensor], f: &F) -> Vec<Vec<f64>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let out = f(&mut tape, &vars).unwrap();
    tape.backward(out).unwrap();
    vars.iter()
        .zip(inputs)
        .map(|(v, t)| {
            tape.grad(*v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect()
}

/// Central finite differences of `f` with respect to every input element.
pub fn numeric_grads<F>(inputs: &[Tensor], f: &F, step: f64) -> Vec<Vec<f64>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut work = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for t in 0..inputs.len() {
        let mut g = vec![0.0; inputs[t].numel()];
        for (i, gi) in g.iter_mut().enumerate() {
            let orig = work[t].data()[i];
            work[t].data_mut()[i] = orig + step;
            let plus = eval(&work, f);
            work[t].data_mut()[i] = orig - step;
            let minus = eval(&work, f);
            work[t].data_mut()[i] = orig;
            *gi = (plus - minus) / (2.0 * step);
        }
        out.push(g);
    }
    out
}

/// Largest element-wise relative error between analytic and numeric gradients.
pub fn max_grad_error<F>(inputs: &[Tensor], f: F, floor: f64) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let a = analytic_grads(inputs, &f);
    let n = numeric_grads(inputs, &f, FD_STEP);
    a.iter()
        .flatten()
        .zip(n.iter().flatten())
        .map(|(x, y)| rel_err(*x, *y, floor))
        .fold(0.0, f64::max)
}
