// SPDX-License-Identifier: MIT OR Apache-2.0

//! Pairwise cosine penalty over probe rows:
//! `L_R(W) = Σ_{i<j} |ŵ_i · ŵ_j|`, with `ŵ = w / ‖w‖`.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

fn unit_rows(w: ArrayView2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
    let norms: Array1<f64> = w.map_axis(Axis(1), |r| r.dot(&r).sqrt());
    if let Some(i) = norms.iter().position(|&n| n == 0.0 || !n.is_finite()) {
        return Err(Error::arg(format!(
            "probe row {i} has zero or non-finite norm"
        )));
    }
    let unit = &w / &norms.view().insert_axis(Axis(1));
    Ok((unit, norms))
}

/// Sum of absolute pairwise cosines between rows of `w`.
pub fn cos_reg_loss(w: ArrayView2<f64>) -> Result<f64> {
    if w.nrows() < 2 {
        return Err(Error::arg("the cosine penalty needs at least two rows"));
    }
    let (unit, _) = unit_rows(w)?;
    let gram = unit.dot(&unit.t());
    let n = w.nrows();
    Ok((0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .map(|(i, j)| gram[[i, j]].abs())
        .sum())
}

/// Loss and its gradient with respect to `w`. The subgradient of `|c|` at
/// `c = 0` is taken as 0.
pub fn cos_reg_loss_and_grad(w: ArrayView2<f64>) -> Result<(f64, Array2<f64>)> {
    if w.nrows() < 2 {
        return Err(Error::arg("the cosine penalty needs at least two rows"));
    }
    let (unit, norms) = unit_rows(w)?;
    let gram = unit.dot(&unit.t());
    let n = w.nrows();
    let mut loss = 0.0;
    let mut grad = Array2::<f64>::zeros(w.dim());
    for i in 0..n {
        for j in i + 1..n {
            let c = gram[[i, j]];
            loss += c.abs();
            let s = c.signum() * (c != 0.0) as u8 as f64;
            if s == 0.0 {
                continue;
            }
            // d(ŵ_i·ŵ_j)/dw_i = (ŵ_j - c ŵ_i) / ‖w_i‖
            let gi = (&unit.row(j) - &(&unit.row(i) * c)) * (s / norms[i]);
            let gj = (&unit.row(i) - &(&unit.row(j) * c)) * (s / norms[j]);
            let mut ri = grad.row_mut(i);
            ri += &gi;
            let mut rj = grad.row_mut(j);
            rj += &gj;
        }
    }
    Ok((loss, grad))
}
