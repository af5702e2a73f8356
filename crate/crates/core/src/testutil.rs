//! Finite-difference oracles shared by unit tests.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::Var;
use crate::nn::{Bound, ParamStore};
use crate::tensor::Tensor;

type F = f64;

/// Central-difference check of `f` at `inputs`. `f` must build a scalar.
pub(crate) fn check(inputs: &[Tensor<F>], f: impl Fn(&[Var<F>]) -> Var<F>) -> f64 {
    let leaves: Vec<Var<F>> = inputs.iter().cloned().map(Var::leaf).collect();
    let out = f(&leaves);
    let grads = out.backward();
    let h = 1e-4;
    let mut worst = 0.0f64;
    for (which, input) in inputs.iter().enumerate() {
        let analytic = grads.wrt(&leaves[which]);
        for idx in 0..input.len() {
            let eval = |delta: f64| {
                let vars: Vec<Var<F>> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, t)| {
                        let mut t = t.clone();
                        if j == which {
                            t.data_mut()[idx] += delta;
                        }
                        Var::constant(t)
                    })
                    .collect();
                f(&vars).value().item()
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let a = analytic.data()[idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
            worst = worst.max(rel);
        }
    }
    worst
}

/// `sum(out ⊙ probe)` so every output element is weighted differently.
pub(crate) fn probe(out: &Var<F>, seed: u64) -> Var<F> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let w = Var::constant(Tensor::randn(out.shape(), &mut r));
    out.mul(&w).unwrap().sum()
}

/// [`check`] over the parameters whose names satisfy `pick` plus `extra`
/// inputs; the other parameters stay constant. `f` receives the bound
/// parameters and the extra inputs.
pub(crate) fn check_params(
    params: &ParamStore<F>,
    pick: impl Fn(&str) -> bool,
    extra: Vec<Tensor<F>>,
    f: impl Fn(&Bound<F>, &[Var<F>]) -> Var<F>,
) -> f64 {
    let picked: Vec<usize> = params
        .iter()
        .enumerate()
        .filter(|(_, p)| pick(&p.name))
        .map(|(i, _)| i)
        .collect();
    let mut inputs: Vec<Tensor<F>> = picked
        .iter()
        .map(|&i| params.iter().nth(i).unwrap().value.clone())
        .collect();
    let n = inputs.len();
    inputs.extend(extra);
    check(&inputs, |v| {
        let vars = params
            .iter()
            .enumerate()
            .map(|(i, p)| match picked.iter().position(|&j| j == i) {
                Some(k) => v[k].clone(),
                None => Var::constant(p.value.clone()),
            })
            .collect();
        f(&Bound::from_vars(vars), &v[n..])
    })
}
