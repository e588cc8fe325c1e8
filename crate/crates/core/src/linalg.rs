//! Small dense vector helpers. Every vector in this crate is a few entries long.

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm2_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// `a + s * b`
pub fn axpy(a: &[f64], s: f64, b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + s * y).collect()
}

pub fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|x| x.is_finite())
}

/// Row vector times a row-major `n x m` matrix given as `n` rows.
pub fn row_times_matrix(row: &[f64], mat: &[Vec<f64>]) -> Vec<f64> {
    let m = mat.first().map_or(0, Vec::len);
    let mut out = vec![0.0; m];
    for (r, mrow) in row.iter().zip(mat) {
        for (o, v) in out.iter_mut().zip(mrow) {
            *o += r * v;
        }
    }
    out
}

/// `mat * v` for `n` rows of length `m`.
pub fn matrix_times_vec(mat: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    mat.iter().map(|row| dot(row, v)).collect()
}

/// Solves the square system `a x = b` by Gaussian elimination with partial
/// pivoting; `None` when a pivot falls below `1e-12` times the largest entry.
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    let scale = a.iter().flatten().fold(0.0_f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return None;
    }
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() <= 1e-12 * scale {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f != 0.0 {
                for k in col..n {
                    a[r][k] -= f * a[col][k];
                }
                b[r] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    Some(x)
}

/// Central finite-difference gradient with per-coordinate step `step * (1 + |x_i|)`.
pub fn fd_gradient<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let hstep = step * (1.0 + x[i].abs());
            probe[i] = x[i] + hstep;
            let up = f(&probe);
            probe[i] = x[i] - hstep;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * hstep)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_solve() {
        let x = solve_dense(vec![vec![0.0, 2.0], vec![1.0, 1.0]], vec![4.0, 3.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 2.0).abs() < 1e-15);
        assert!(solve_dense(vec![vec![1.0, 2.0], vec![2.0, 4.0]], vec![1.0, 2.0]).is_none());
    }

    #[test]
    fn matrix_products() {
        let g = vec![vec![0.0], vec![1.0]];
        assert_eq!(row_times_matrix(&[1.0, -1.0], &g), vec![-1.0]);
        assert_eq!(matrix_times_vec(&g, &[2.0]), vec![0.0, 2.0]);
    }

    #[test]
    fn fd_gradient_of_quadratic() {
        let g = fd_gradient(|x| x[0] * x[0] + 3.0 * x[1], &[2.0, -1.0], 1e-6);
        assert!((g[0] - 4.0).abs() < 1e-7);
        assert!((g[1] - 3.0).abs() < 1e-7);
    }
}
