//! Finite-difference gradient oracle.
//!
//! Re-evaluates the forward pass at perturbed inputs and compares central
//! differences against the tape's analytic gradients. Only the forward path
//! is shared with the implementation; the differencing itself is independent
//! of `Graph::backward`.

use super::graph::{Graph, VarId};
use super::rng::Rng;
use super::tensor::Tensor;

pub const FD_STEP: f32 = 1e-3;
pub const REL_TOL: f32 = 1e-2;
/// Floor for near-zero gradient entries where relative error is meaningless.
pub const ABS_TOL: f32 = 2e-3;

/// Checks d(sum(w . f(inputs)))/d(inputs) for every input marked
/// `requires_grad`, against central finite differences.
///
/// `f` builds the op under test and returns its output var. Returns the worst
/// relative error seen, panicking with context on failure.
pub fn check<F>(inputs: &[Tensor], f: F, rng: &mut Rng) -> f32
where
    F: Fn(&mut Graph, &[VarId]) -> VarId,
{
    // Fixed random probe weights make the scalarized loss sensitive to every
    // output element.
    let probe: Vec<f32> = {
        let mut g = Graph::new();
        let ids: Vec<VarId> = inputs.iter().map(|t| g.input(t.clone())).collect();
        let out = f(&mut g, &ids);
        (0..g.value(out).numel()).map(|_| if rng.uniform() < 0.5 { -1.0 } else { 1.0 }).collect()
    };

    let eval = |perturbed: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let ids: Vec<VarId> = perturbed.iter().map(|t| g.input(t.clone())).collect();
        let out = f(&mut g, &ids);
        g.value(out).data().iter().zip(&probe).map(|(&v, &w)| v as f64 * w as f64).sum()
    };

    // Analytic gradients of the same scalarization.
    let mut g = Graph::new();
    let ids: Vec<VarId> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = f(&mut g, &ids);
    let probe_t = Tensor::new(g.value(out).shape().to_vec(), probe.clone()).unwrap();
    let pid = g.input(probe_t);
    let prod = g.mul(out, pid);
    let loss = g.sum_all(prod);
    let grads = g.backward(loss).expect("scalar loss");

    let mut worst = 0.0f32;
    for (idx, input) in inputs.iter().enumerate() {
        if !input.requires_grad() {
            continue;
        }
        let analytic = grads.get(ids[idx]).expect("gradient for requires_grad input");
        for e in 0..input.numel() {
            let mut plus = inputs.to_vec();
            let mut minus = inputs.to_vec();
            let mut dp = plus[idx].data().to_vec();
            let mut dm = minus[idx].data().to_vec();
            dp[e] += FD_STEP;
            dm[e] -= FD_STEP;
            plus[idx] = Tensor::new(input.shape().to_vec(), dp).unwrap();
            minus[idx] = Tensor::new(input.shape().to_vec(), dm).unwrap();
            let fd = ((eval(&plus) - eval(&minus)) / (2.0 * FD_STEP as f64)) as f32;
            let a = analytic[e];
            let denom = a.abs().max(fd.abs());
            let err = (a - fd).abs();
            let rel = if denom > ABS_TOL { err / denom } else { 0.0 };
            if err > ABS_TOL && rel > REL_TOL {
                panic!(
                    "gradient mismatch: input {idx} elem {e}: analytic {a}, fd {fd} \
                     (rel {rel:.4})"
                );
            }
            worst = worst.max(rel);
        }
    }
    worst
}

/// Reference check for the cheap pointwise ops, used by unit tests.
pub fn check_elementwise() {
    let mut rng = Rng::new(0xE1E, 0);
    let x = Tensor::randn(vec![3, 4], 1.0, &mut rng).with_grad();
    let y = Tensor::randn(vec![3, 4], 1.0, &mut rng).with_grad();
    check(&[x.clone(), y.clone()], |g, ids| g.add(ids[0], ids[1]), &mut rng);
    check(&[x.clone(), y.clone()], |g, ids| g.sub(ids[0], ids[1]), &mut rng);
    check(&[x.clone(), y.clone()], |g, ids| g.mul(ids[0], ids[1]), &mut rng);
    check(&[x.clone()], |g, ids| g.silu(ids[0]), &mut rng);
    check(&[x.clone()], |g, ids| g.scale(ids[0], -1.7), &mut rng);
    check(&[x], |g, ids| g.softmax_rows(ids[0]), &mut rng);
}
