//! Repainting, alignment and classification losses with their gradients,
//! plus a central-difference gradient checker.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::seq::index;
use rand::SeedableRng;
use thiserror::Error;

use crate::seed::Rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("point sets must be non-empty")]
    EmptySet,
    #[error("dimension mismatch: {0} vs {1}")]
    Dim(usize, usize),
    #[error("non-finite input")]
    NonFinite,
    #[error("class {target} outside 0..{classes}")]
    Label { target: usize, classes: usize },
    #[error("need at least two classes, got {0}")]
    Classes(usize),
    #[error("loss is not finite at probe coordinate {0}")]
    NonFiniteProbe(usize),
    #[error("step must be positive")]
    Step,
}

/// Directed terms of the symmetric Chamfer distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Chamfer {
    /// `max(forward, backward)`.
    pub value: f64,
    /// Mean distance from each target point to its nearest prediction.
    pub forward: f64,
    /// Mean distance from each prediction to its nearest target point.
    pub backward: f64,
}

struct Nearest {
    /// For each target row: (nearest prediction, distance).
    fwd: Vec<(usize, f64)>,
    /// For each prediction row: (nearest target, distance).
    bwd: Vec<(usize, f64)>,
}

fn check_sets(p: &ArrayView2<f64>, q: &ArrayView2<f64>) -> Result<(), LossError> {
    if p.nrows() == 0 || q.nrows() == 0 {
        return Err(LossError::EmptySet);
    }
    if p.ncols() != q.ncols() {
        return Err(LossError::Dim(p.ncols(), q.ncols()));
    }
    if p.iter().chain(q.iter()).any(|v| !v.is_finite()) {
        return Err(LossError::NonFinite);
    }
    Ok(())
}

/// Exact nearest neighbours in both directions. Ties go to the lowest index.
fn nearest(p: &ArrayView2<f64>, q: &ArrayView2<f64>) -> Nearest {
    let mut fwd = vec![(0, f64::INFINITY); p.nrows()];
    let mut bwd = vec![(0, f64::INFINITY); q.nrows()];
    let pc = p.as_standard_layout();
    let qc = q.as_standard_layout();
    let dim = p.ncols();
    let ps = pc.as_slice().expect("standard layout");
    let qs = qc.as_slice().expect("standard layout");
    for (i, pi) in ps.chunks_exact(dim).enumerate() {
        for (j, qj) in qs.chunks_exact(dim).enumerate() {
            let d2: f64 = pi.iter().zip(qj).map(|(a, b)| (a - b) * (a - b)).sum();
            if d2 < fwd[i].1 {
                fwd[i] = (j, d2);
            }
            if d2 < bwd[j].1 {
                bwd[j] = (i, d2);
            }
        }
    }
    for e in fwd.iter_mut().chain(bwd.iter_mut()) {
        e.1 = e.1.sqrt();
    }
    Nearest { fwd, bwd }
}

fn summarize(nn: &Nearest) -> Chamfer {
    let forward = nn.fwd.iter().map(|e| e.1).sum::<f64>() / nn.fwd.len() as f64;
    let backward = nn.bwd.iter().map(|e| e.1).sum::<f64>() / nn.bwd.len() as f64;
    Chamfer {
        value: forward.max(backward),
        forward,
        backward,
    }
}

/// `max(A, B)` of the mean non-squared nearest-neighbour distances between
/// `target` and `pred`, over all feature columns.
pub fn chamfer(target: ArrayView2<f64>, pred: ArrayView2<f64>) -> Result<Chamfer, LossError> {
    check_sets(&target, &pred)?;
    Ok(summarize(&nearest(&target, &pred)))
}

/// Chamfer distance and its gradient with respect to `pred`.
///
/// Only the larger directed term carries gradient (the forward term wins
/// ties). Coincident pairs contribute a zero subgradient.
pub fn chamfer_grad(
    target: ArrayView2<f64>,
    pred: ArrayView2<f64>,
) -> Result<(Chamfer, Array2<f64>), LossError> {
    check_sets(&target, &pred)?;
    let nn = nearest(&target, &pred);
    let c = summarize(&nn);
    let mut grad = Array2::zeros(pred.raw_dim());
    if c.forward >= c.backward {
        let scale = 1.0 / target.nrows() as f64;
        for (i, &(j, d)) in nn.fwd.iter().enumerate() {
            if d > 0.0 {
                let mut g = grad.row_mut(j);
                g.scaled_add(scale / d, &pred.row(j));
                g.scaled_add(-scale / d, &target.row(i));
            }
        }
    } else {
        let scale = 1.0 / pred.nrows() as f64;
        for (j, &(i, d)) in nn.bwd.iter().enumerate() {
            if d > 0.0 {
                let mut g = grad.row_mut(j);
                g.scaled_add(scale / d, &pred.row(j));
                g.scaled_add(-scale / d, &target.row(i));
            }
        }
    }
    Ok((c, grad))
}

/// Mean squared difference between two latent vectors.
pub fn mse_align(fine: ArrayView1<f64>, coarse: ArrayView1<f64>) -> Result<f64, LossError> {
    if fine.len() != coarse.len() {
        return Err(LossError::Dim(fine.len(), coarse.len()));
    }
    if fine.is_empty() {
        return Err(LossError::EmptySet);
    }
    let sum: f64 = fine
        .iter()
        .zip(coarse.iter())
        .map(|(a, b)| (b - a) * (b - a))
        .sum();
    Ok(sum / fine.len() as f64)
}

/// [`mse_align`] with gradients `(d/d fine, d/d coarse)`.
pub fn mse_align_grad(
    fine: ArrayView1<f64>,
    coarse: ArrayView1<f64>,
) -> Result<(f64, Array1<f64>, Array1<f64>), LossError> {
    let value = mse_align(fine, coarse)?;
    let scale = 2.0 / fine.len() as f64;
    let g_fine = (&fine - &coarse) * scale;
    let g_coarse = -&g_fine;
    Ok((value, g_fine, g_coarse))
}

/// Numerically stable softmax.
pub fn softmax(logits: ArrayView1<f64>) -> Array1<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let exp = logits.mapv(|v| (v - max).exp());
    let sum = exp.sum();
    exp / sum
}

fn check_logits(logits: &ArrayView1<f64>, target: usize) -> Result<(), LossError> {
    if logits.len() < 2 {
        return Err(LossError::Classes(logits.len()));
    }
    if target >= logits.len() {
        return Err(LossError::Label {
            target,
            classes: logits.len(),
        });
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(LossError::NonFinite);
    }
    Ok(())
}

/// `-log softmax(logits)[target]` in nats; `target` is 0-based.
pub fn cross_entropy(logits: ArrayView1<f64>, target: usize) -> Result<f64, LossError> {
    check_logits(&logits, target)?;
    let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    Ok(lse - logits[target])
}

/// [`cross_entropy`] and its gradient `softmax - onehot`.
pub fn cross_entropy_grad(
    logits: ArrayView1<f64>,
    target: usize,
) -> Result<(f64, Array1<f64>), LossError> {
    let value = cross_entropy(logits, target)?;
    let mut grad = softmax(logits);
    grad[target] -= 1.0;
    Ok((value, grad))
}

/// Outcome of [`grad_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub probes: Vec<usize>,
}

/// Compares analytic partials with central differences at `probe_count`
/// coordinates drawn without replacement. `f` returns the loss and its full
/// gradient at the given parameters.
pub fn grad_check<F>(
    f: F,
    params: &[f64],
    probe_count: usize,
    step: f64,
    seed: u64,
) -> Result<GradCheck, LossError>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    if step.is_nan() || step <= 0.0 {
        return Err(LossError::Step);
    }
    let (base, analytic) = f(params);
    if !base.is_finite() {
        return Err(LossError::NonFinite);
    }
    let mut rng = Rng::seed_from_u64(seed);
    let mut probes =
        index::sample(&mut rng, params.len(), probe_count.min(params.len())).into_vec();
    probes.sort_unstable();
    let mut theta = params.to_vec();
    let mut max_rel_error: f64 = 0.0;
    for &i in &probes {
        theta[i] = params[i] + step;
        let plus = f(&theta).0;
        theta[i] = params[i] - step;
        let minus = f(&theta).0;
        theta[i] = params[i];
        if !(plus.is_finite() && minus.is_finite()) {
            return Err(LossError::NonFiniteProbe(i));
        }
        let numeric = (plus - minus) / (2.0 * step);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        max_rel_error = max_rel_error.max(rel);
    }
    Ok(GradCheck {
        max_rel_error,
        probes,
    })
}
