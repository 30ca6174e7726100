//! Dense kernels shared by the decompositions: reorthogonalized Gram-Schmidt
//! QR with basis completion, and one-sided Jacobi SVD for small square
//! factors.

use ndarray::{Array1, Array2, ArrayView1, Axis};

const DEGENERATE_RATIO: f64 = 1e-10;

fn dot(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn norm(a: ArrayView1<f64>) -> f64 {
    dot(a, a).sqrt()
}

/// Orthogonalize `v` against the first `upto` columns of `q`, twice.
/// Returns the accumulated projection coefficients.
fn project_out(q: &Array2<f64>, upto: usize, v: &mut Array1<f64>) -> Vec<f64> {
    let mut coeffs = vec![0.0; upto];
    for _ in 0..2 {
        for (j, c) in coeffs.iter_mut().enumerate() {
            let qj = q.column(j);
            let r = dot(qj, v.view());
            v.scaled_add(-r, &qj);
            *c += r;
        }
    }
    coeffs
}

/// Thin QR of an m×l matrix (l ≤ m) by classical Gram-Schmidt with
/// reorthogonalization. Columns that are numerically dependent get a zero
/// diagonal in R and are replaced in Q by the first standard basis vector
/// that completes the orthonormal set.
pub fn qr(a: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let (m, l) = a.dim();
    assert!(l <= m, "qr expects a tall matrix");
    let mut q = Array2::<f64>::zeros((m, l));
    let mut r = Array2::<f64>::zeros((l, l));
    for j in 0..l {
        let mut v = a.column(j).to_owned();
        let before = norm(v.view());
        let coeffs = project_out(&q, j, &mut v);
        for (i, c) in coeffs.into_iter().enumerate() {
            r[[i, j]] = c;
        }
        let after = norm(v.view());
        if before > 0.0 && after > DEGENERATE_RATIO * before {
            r[[j, j]] = after;
            q.column_mut(j).assign(&(v / after));
        } else {
            // keep the residual in R so that A = QR still holds to rounding
            r[[j, j]] = 0.0;
            let mut best: Option<(f64, Array1<f64>)> = None;
            for b in 0..m {
                let mut e = Array1::<f64>::zeros(m);
                e[b] = 1.0;
                project_out(&q, j, &mut e);
                let n = norm(e.view());
                if best.as_ref().is_none_or(|(bn, _)| n > *bn) {
                    best = Some((n, e));
                }
            }
            let (n, e) = best.expect("m > 0");
            q.column_mut(j).assign(&(e / n));
        }
    }
    (q, r)
}

/// Orthonormal basis for the column space of `a` (with completion).
pub fn orthonormalize(a: &Array2<f64>) -> Array2<f64> {
    qr(a).0
}

/// One-sided Jacobi SVD of a small square matrix `r` (l×l).
/// Returns (singular values, left singular vectors as columns), sorted by
/// non-increasing singular value. Left vectors for zero singular values are
/// completed to an orthonormal set.
pub fn jacobi_svd_left(r: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let l = r.ncols();
    let mut w = r.clone();
    for _sweep in 0..100 {
        let mut rotated = false;
        for p in 0..l {
            for q in (p + 1)..l {
                let alpha = dot(w.column(p), w.column(p));
                let beta = dot(w.column(q), w.column(q));
                let gamma = dot(w.column(p), w.column(q));
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..w.nrows() {
                    let wp = w[[i, p]];
                    let wq = w[[i, q]];
                    w[[i, p]] = c * wp - s * wq;
                    w[[i, q]] = s * wp + c * wq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut order: Vec<(f64, usize)> = (0..l).map(|j| (norm(w.column(j)), j)).collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let sigma_max = order.first().map_or(0.0, |o| o.0);
    let mut u = Array2::<f64>::zeros((w.nrows(), l));
    let mut sigmas = Vec::with_capacity(l);
    let mut filled = 0usize;
    let mut pending = Vec::new();
    for &(s, j) in &order {
        if s > 0.0 && s > 1e-13 * sigma_max {
            u.column_mut(filled).assign(&(&w.column(j) / s));
            sigmas.push(s);
            filled += 1;
        } else {
            pending.push(s.max(0.0));
        }
    }
    // complete the null directions
    let mut next_basis = 0;
    for s in pending {
        loop {
            let mut e = Array1::<f64>::zeros(w.nrows());
            e[next_basis] = 1.0;
            next_basis += 1;
            project_out(&u, filled, &mut e);
            let n = norm(e.view());
            if n > 0.5 {
                u.column_mut(filled).assign(&(e / n));
                break;
            }
        }
        sigmas.push(s);
        filled += 1;
    }
    (sigmas, u)
}

/// Flip each row so its entry of largest magnitude is positive (first such
/// entry on ties).
pub fn canonicalize_signs(rows: &mut Array2<f64>) {
    for mut row in rows.axis_iter_mut(Axis(0)) {
        let mut best = 0usize;
        for (i, v) in row.iter().enumerate() {
            if v.abs() > row[best].abs() {
                best = i;
            }
        }
        if row[best] < 0.0 {
            row.mapv_inplace(|v| -v);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn qr_reconstructs_and_is_orthonormal() {
        let a = array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.5], [7.0, 8.0, 10.0], [1.0, 0.0, 1.0]];
        let (q, r) = qr(&a);
        let recon = q.dot(&r);
        assert!((&recon - &a).iter().all(|v| v.abs() < 1e-12));
        let g = q.t().dot(&q);
        for i in 0..3 {
            for j in 0..3 {
                assert!((g[[i, j]] - f64::from(u8::from(i == j))).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn qr_completes_rank_deficient_input() {
        let a = array![[1.0, 2.0, 0.0], [1.0, 2.0, 0.0], [0.0, 0.0, 0.0]];
        let (q, r) = qr(&a);
        assert!((&q.dot(&r) - &a).iter().all(|v| v.abs() < 1e-12));
        let g = q.t().dot(&q);
        assert!((&g - &Array2::<f64>::eye(3)).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn jacobi_matches_known_singular_values() {
        let r = array![[3.0, 0.0], [4.0, 5.0]];
        // singular values of [[3,0],[4,5]] are sqrt(45) and sqrt(5)
        let (s, u) = jacobi_svd_left(&r);
        assert!((s[0] - 45f64.sqrt()).abs() < 1e-12);
        assert!((s[1] - 5f64.sqrt()).abs() < 1e-12);
        let g = u.t().dot(&u);
        assert!((&g - &Array2::<f64>::eye(2)).iter().all(|v| v.abs() < 1e-12));
    }
}
