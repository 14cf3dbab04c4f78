//! Dense linear-algebra oracles for the acceptance suite, deliberately
//! independent of the library's factored kernels.

pub fn identity(n: usize) -> Vec<Vec<f64>> {
    let mut m = vec![vec![0.0; n]; n];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    m
}

/// Gauss-Jordan inverse with partial pivoting.
pub fn invert(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut work: Vec<Vec<f64>> = a
        .iter()
        .zip(identity(n))
        .map(|(row, id)| row.iter().copied().chain(id).collect())
        .collect();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| work[i][col].abs().partial_cmp(&work[j][col].abs()).unwrap())
            .unwrap();
        work.swap(col, pivot);
        let p = work[col][col];
        assert!(p.abs() > 1e-14, "singular matrix in oracle inverse");
        for v in &mut work[col] {
            *v /= p;
        }
        for row in 0..n {
            if row != col {
                let factor = work[row][col];
                for k in 0..2 * n {
                    work[row][k] -= factor * work[col][k];
                }
            }
        }
    }
    work.into_iter().map(|row| row[n..].to_vec()).collect()
}

/// Lower Cholesky factor of an SPD matrix.
pub fn cholesky(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                assert!(s > 0.0, "matrix not positive definite in oracle");
                l[i][j] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    l
}

pub fn ln_det_spd(a: &[Vec<f64>]) -> f64 {
    let l = cholesky(a);
    2.0 * (0..a.len()).map(|i| l[i][i].ln()).sum::<f64>()
}

/// Solves `A x = b` for SPD `A` via Cholesky.
pub fn solve_spd(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let l = cholesky(a);
    let n = b.len();
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            let carry = l[i][k] * y[k];
            y[i] -= carry;
        }
        y[i] /= l[i][i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            let carry = l[k][i] * y[k];
            y[i] -= carry;
        }
        y[i] /= l[i][i];
    }
    y
}

pub fn quad_form(a: &[Vec<f64>], x: &[f64]) -> f64 {
    let mut q = 0.0;
    for (i, row) in a.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            q += x[i] * v * x[j];
        }
    }
    q
}

pub fn kron(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (ra, ca) = (a.len(), a[0].len());
    let (rb, cb) = (b.len(), b[0].len());
    let mut out = vec![vec![0.0; ca * cb]; ra * rb];
    for ia in 0..ra {
        for ja in 0..ca {
            for ib in 0..rb {
                for jb in 0..cb {
                    out[ia * rb + ib][ja * cb + jb] = a[ia][ja] * b[ib][jb];
                }
            }
        }
    }
    out
}

/// Analytic stationary AR(1) covariance: sigma^2 rho^|s-t| / (1 - rho^2).
pub fn ar1_covariance(t: usize, rho: f64, sigma: f64) -> Vec<Vec<f64>> {
    let mut m = vec![vec![0.0; t]; t];
    for s in 0..t {
        for u in 0..t {
            m[s][u] = sigma * sigma * rho.powi((s as i32 - u as i32).abs()) / (1.0 - rho * rho);
        }
    }
    m
}

/// Multivariate normal log density at `x` (zero mean) with dense
/// covariance, evaluated entirely through dense routines.
pub fn ln_mvn_dense(x: &[f64], covariance: &[Vec<f64>]) -> f64 {
    let n = x.len() as f64;
    let precision = invert(covariance);
    -0.5 * quad_form(&precision, x)
        - 0.5 * ln_det_spd(covariance)
        - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
}
