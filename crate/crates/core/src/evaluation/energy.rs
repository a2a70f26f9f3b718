//! Two-sample energy distance, `2E‖A − B‖ − E‖A − A′‖ − E‖B − B′‖`, as a
//! V-statistic over all pairs. One-dimensional samples take a sorted
//! `O(n log n)` path.

use crate::error::{Error, Result};
use crate::numerics::DenseTensor;

pub fn energy_distance(a: &DenseTensor, b: &DenseTensor) -> Result<f64> {
    if a.cols() != b.cols() {
        return Err(Error::ShapeMismatch(format!(
            "sample dimensions {} and {}",
            a.cols(),
            b.cols()
        )));
    }
    let ab = mean_pair_distance(a, b);
    let aa = mean_pair_distance(a, a);
    let bb = mean_pair_distance(b, b);
    Ok((2.0 * ab - aa - bb).max(0.0))
}

/// `E‖X − Y‖` over all `(x, y)` pairs.
pub fn mean_pair_distance(x: &DenseTensor, y: &DenseTensor) -> f64 {
    let total = if x.cols() == 1 {
        sorted_abs_sum(x.data(), y.data())
    } else {
        pair_sum(x, y)
    };
    total / (x.rows() as f64 * y.rows() as f64)
}

/// `Σ_i Σ_j |x_i − y_j|` by merging sorted copies.
fn sorted_abs_sum(x: &[f64], y: &[f64]) -> f64 {
    let mut xs = x.to_vec();
    let mut ys = y.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let total_y: f64 = ys.iter().sum();
    let mut below = 0usize;
    let mut below_sum = 0.0;
    let mut acc = 0.0;
    let m = ys.len() as f64;
    for &v in &xs {
        while below < ys.len() && ys[below] <= v {
            below_sum += ys[below];
            below += 1;
        }
        let k = below as f64;
        acc += v * k - below_sum + (total_y - below_sum) - v * (m - k);
    }
    acc
}

fn row_sum(row: &[f64], y: &DenseTensor) -> f64 {
    let d = row.len();
    let mut s = 0.0;
    for other in y.data().chunks_exact(d) {
        let mut q = 0.0;
        for k in 0..d {
            let t = row[k] - other[k];
            q += t * t;
        }
        s += q.sqrt();
    }
    s
}

#[cfg(feature = "parallel")]
fn pair_sum(x: &DenseTensor, y: &DenseTensor) -> f64 {
    use rayon::prelude::*;
    let rows: Vec<&[f64]> = x.iter_rows().collect();
    let partial: Vec<f64> = rows.par_iter().map(|r| row_sum(r, y)).collect();
    partial.iter().sum()
}

#[cfg(not(feature = "parallel"))]
fn pair_sum(x: &DenseTensor, y: &DenseTensor) -> f64 {
    x.iter_rows().map(|r| row_sum(r, y)).sum()
}
