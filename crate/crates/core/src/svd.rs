//! Dense singular value decomposition by one-sided Jacobi rotations.
//!
//! Columns of a working copy of `A` are orthogonalised pairwise until every
//! pair is numerically orthogonal; the column norms are then the singular
//! values. Accurate to working precision, which is what the co-occurrence
//! matrices here (at most a few thousand features) need.

/// `A = U diag(σ) Vᵀ` with singular values in descending order.
#[derive(Debug, Clone)]
pub struct Svd {
    /// Left singular vectors, one `rows`-long column per singular value.
    /// Columns belonging to zero singular values are left as zeros.
    pub u: Vec<Vec<f64>>,
    pub singular_values: Vec<f64>,
    /// Right singular vectors, one `cols`-long column per singular value.
    pub v: Vec<Vec<f64>>,
}

const MAX_SWEEPS: usize = 80;

/// SVD of a row-major `rows × cols` matrix.
pub fn jacobi_svd(a: &[f64], rows: usize, cols: usize) -> Svd {
    assert_eq!(a.len(), rows * cols, "matrix buffer does not match its shape");
    let mut w: Vec<Vec<f64>> = (0..cols).map(|j| (0..rows).map(|i| a[i * cols + j]).collect()).collect();
    let mut v: Vec<Vec<f64>> = (0..cols)
        .map(|j| {
            let mut e = vec![0.0; cols];
            e[j] = 1.0;
            e
        })
        .collect();
    let eps = f64::EPSILON;

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let (alpha, beta, gamma) = {
                    let (wp, wq) = (&w[p], &w[q]);
                    let mut alpha = 0.0;
                    let mut beta = 0.0;
                    let mut gamma = 0.0;
                    for k in 0..rows {
                        alpha += wp[k] * wp[k];
                        beta += wq[k] * wq[k];
                        gamma += wp[k] * wq[k];
                    }
                    (alpha, beta, gamma)
                };
                if gamma == 0.0 || gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut w, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let norms: Vec<f64> = w.iter().map(|col| col.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]).then(i.cmp(&j)));
    let scale = norms.iter().cloned().fold(0.0, f64::max);
    let mut u = Vec::with_capacity(cols);
    let mut vs = Vec::with_capacity(cols);
    let mut sigma = Vec::with_capacity(cols);
    for &j in &order {
        let s = norms[j];
        if s > scale * eps * cols as f64 && s > 0.0 {
            u.push(w[j].iter().map(|x| x / s).collect());
            sigma.push(s);
        } else {
            u.push(vec![0.0; rows]);
            sigma.push(if s > 0.0 { s } else { 0.0 });
        }
        vs.push(v[j].clone());
    }
    Svd {
        u,
        singular_values: sigma,
        v: vs,
    }
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (head, tail) = cols.split_at_mut(q);
    let (cp, cq) = (&mut head[p], &mut tail[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let a = *x;
        let b = *y;
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}
