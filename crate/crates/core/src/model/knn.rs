use ndarray::{Array2, ArrayView2};

use super::ModelError;

/// Indices of the `k` nearest other rows of `points` for every row, ordered
/// by (distance, index). Distances are exact squared Euclidean sums, so ties
/// resolve to the smaller index deterministically.
pub fn knn_graph(points: ArrayView2<f64>, k: usize) -> Result<Array2<u32>, ModelError> {
    let n = points.nrows();
    if n < 2 || k == 0 || k >= n {
        return Err(ModelError::Neighbors { k, points: n });
    }
    let pts = points.as_standard_layout();
    let dim = points.ncols();
    let flat = pts.as_slice().expect("standard layout");
    let mut out = Array2::<u32>::zeros((n, k));
    let mut cand: Vec<(f64, u32)> = Vec::with_capacity(n - 1);
    for (i, pi) in flat.chunks_exact(dim).enumerate() {
        cand.clear();
        for (j, pj) in flat.chunks_exact(dim).enumerate() {
            if i != j {
                let d2: f64 = pi.iter().zip(pj).map(|(a, b)| (a - b) * (a - b)).sum();
                cand.push((d2, j as u32));
            }
        }
        let order = |a: &(f64, u32), b: &(f64, u32)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < cand.len() {
            cand.select_nth_unstable_by(k - 1, order);
        }
        let head = &mut cand[..k];
        head.sort_unstable_by(order);
        for (slot, &(_, j)) in out.row_mut(i).iter_mut().zip(head.iter()) {
            *slot = j;
        }
    }
    Ok(out)
}
