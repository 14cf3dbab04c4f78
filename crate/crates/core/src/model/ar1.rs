//! AR(1) structure matrices, block-diagonal interaction precisions and the
//! symmetric tridiagonal kernels the Gibbs sampler is built on.

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::ModelDims;
use crate::num::{Real, LN_TWO_PI};

/// Symmetric tridiagonal matrix stored as its diagonal and first
/// off-diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SymTridiag<F> {
    pub diag: Vec<F>,
    pub off: Vec<F>,
}

impl<F: Real> SymTridiag<F> {
    pub fn n(&self) -> usize {
        self.diag.len()
    }

    /// Adds `a` to the diagonal in place.
    pub fn add_diag(&mut self, a: &[F]) {
        debug_assert_eq!(a.len(), self.diag.len());
        for (d, &x) in self.diag.iter_mut().zip(a) {
            *d += x;
        }
    }

    /// Scales every entry by `s`.
    pub fn scale(&mut self, s: F) {
        for d in &mut self.diag {
            *d *= s;
        }
        for e in &mut self.off {
            *e *= s;
        }
    }

    /// `self += factor * other` (shapes must match).
    pub fn axpy(&mut self, other: &SymTridiag<F>, factor: F) {
        debug_assert_eq!(self.n(), other.n());
        for (d, &o) in self.diag.iter_mut().zip(&other.diag) {
            *d += factor * o;
        }
        for (e, &o) in self.off.iter_mut().zip(&other.off) {
            *e += factor * o;
        }
    }

    /// `out = A v`.
    pub fn matvec(&self, v: &[F], out: &mut [F]) {
        let n = self.n();
        debug_assert_eq!(v.len(), n);
        debug_assert_eq!(out.len(), n);
        for t in 0..n {
            let mut acc = self.diag[t] * v[t];
            if t > 0 {
                acc += self.off[t - 1] * v[t - 1];
            }
            if t + 1 < n {
                acc += self.off[t] * v[t + 1];
            }
            out[t] = acc;
        }
    }

    /// x' A x.
    pub fn quad_form(&self, x: &[F]) -> F {
        debug_assert_eq!(x.len(), self.n());
        let mut q = F::zero();
        for t in 0..self.n() {
            q += self.diag[t] * x[t] * x[t];
        }
        for t in 0..self.n().saturating_sub(1) {
            q += F::of(2.0) * self.off[t] * x[t] * x[t + 1];
        }
        q
    }

    /// Dense copy, for oracles and small-instance checks only.
    pub fn to_dense(&self) -> Vec<Vec<F>> {
        let n = self.n();
        let mut m = vec![vec![F::zero(); n]; n];
        for t in 0..n {
            m[t][t] = self.diag[t];
        }
        for t in 0..n.saturating_sub(1) {
            m[t][t + 1] = self.off[t];
            m[t + 1][t] = self.off[t];
        }
        m
    }

    /// Cholesky factor `L` (lower bidiagonal) with `A = L L'`.
    /// Returns `None` if the matrix is not positive definite.
    pub fn cholesky(&self) -> Option<BidiagChol<F>> {
        let n = self.n();
        let mut ld = vec![F::zero(); n];
        let mut le = vec![F::zero(); n.saturating_sub(1)];
        let mut prev: F = F::zero();
        for t in 0..n {
            let mut d = self.diag[t];
            if t > 0 {
                let m = self.off[t - 1] / prev;
                le[t - 1] = m;
                d -= m * m;
            }
            if !(d > F::zero()) || !d.is_finite() {
                return None;
            }
            prev = d.sqrt();
            ld[t] = prev;
        }
        Some(BidiagChol { ld, le })
    }
}

/// Lower-bidiagonal Cholesky factor of a symmetric tridiagonal matrix.
#[derive(Debug, Clone)]
pub struct BidiagChol<F> {
    /// Diagonal of L.
    ld: Vec<F>,
    /// Sub-diagonal of L.
    le: Vec<F>,
}

impl<F: Real> BidiagChol<F> {
    pub fn n(&self) -> usize {
        self.ld.len()
    }

    /// log det(L L') = 2 sum(log L_tt).
    pub fn ln_det(&self) -> F {
        let mut s = F::zero();
        for &d in &self.ld {
            s += d.ln();
        }
        F::of(2.0) * s
    }

    /// Solves `L z = b` in place.
    fn forward(&self, b: &mut [F]) {
        let n = self.n();
        for t in 0..n {
            if t > 0 {
                let carry = self.le[t - 1] * b[t - 1];
                b[t] -= carry;
            }
            b[t] /= self.ld[t];
        }
    }

    /// Solves `L' z = b` in place.
    fn backward(&self, b: &mut [F]) {
        let n = self.n();
        for t in (0..n).rev() {
            if t + 1 < n {
                let carry = self.le[t] * b[t + 1];
                b[t] -= carry;
            }
            b[t] /= self.ld[t];
        }
    }

    /// Solves `(L L') x = b` in place.
    pub fn solve(&self, b: &mut [F]) {
        self.forward(b);
        self.backward(b);
    }

    /// Draws from N(Q^{-1} b, Q^{-1}) where `Q = L L'`, overwriting `b`.
    pub fn sample_posterior<R: Rng + ?Sized>(&self, b: &mut [F], rng: &mut R) {
        self.solve(b);
        let mut z: Vec<F> = (0..self.n()).map(|_| F::std_normal(rng)).collect();
        self.backward(&mut z);
        for (x, u) in b.iter_mut().zip(z) {
            *x += u;
        }
    }
}

/// Tridiagonal structure matrix `R` of a stationary AR(1) process:
/// unit corners, `1 + rho^2` interior diagonal and `-rho` off-diagonal.
/// The scaled inverse `(R / sigma^2)^{-1}` has entries
/// `sigma^2 rho^{|s-t|} / (1 - rho^2)`. For `T = 1` the matrix is
/// `[1 - rho^2]`, recovering the stationary marginal.
pub fn ar1_structure<F: Real>(t: usize, rho: F) -> Result<SymTridiag<F>> {
    if t == 0 {
        return Err(Error::Domain("ar1_structure requires T >= 1".into()));
    }
    if !(rho.abs() < F::one()) {
        return Err(Error::Domain(format!(
            "ar1_structure requires |rho| < 1, got {rho}"
        )));
    }
    if t == 1 {
        return Ok(SymTridiag {
            diag: vec![F::one() - rho * rho],
            off: vec![],
        });
    }
    let mut diag = vec![F::one() + rho * rho; t];
    diag[0] = F::one();
    diag[t - 1] = F::one();
    Ok(SymTridiag {
        diag,
        off: vec![-rho; t - 1],
    })
}

/// v' R(rho) v without materializing the matrix:
/// `(1 - rho^2) v_1^2 + sum_{t>=2} (v_t - rho v_{t-1})^2`.
pub fn ar1_quad_form<F: Real>(v: &[F], rho: F) -> F {
    let mut q = (F::one() - rho * rho) * v[0] * v[0];
    for t in 1..v.len() {
        let d = v[t] - rho * v[t - 1];
        q += d * d;
    }
    q
}

/// Log density of a stationary AR(1) vector with innovation scale `sigma`,
/// including all constants: the log-determinant of `R / sigma^2` is
/// `log(1 - rho^2) - 2 T log(sigma)` in closed form.
pub fn ar1_ln_density<F: Real>(v: &[F], rho: F, sigma: F) -> F {
    let t = F::of(v.len() as f64);
    let half = F::of(0.5);
    half * (F::one() - rho * rho).ln()
        - t * sigma.ln()
        - half * ar1_quad_form(v, rho) / (sigma * sigma)
        - half * t * F::of(LN_TWO_PI)
}

/// Coefficients of the constant-shift expansion
/// `q(v + c) = q(v) + 2 c g + c^2 h` under the AR(1) quadratic form.
pub fn ar1_shift_stats<F: Real>(v: &[F], rho: F) -> (F, F) {
    let one = F::one();
    let mut g = (one - rho * rho) * v[0];
    for t in 1..v.len() {
        g += (one - rho) * (v[t] - rho * v[t - 1]);
    }
    let h = (one - rho * rho) + F::of((v.len() - 1) as f64) * (one - rho) * (one - rho);
    (g, h)
}

/// Which interaction a block precision describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InteractionKind {
    /// Country-time: one AR(1) block per country.
    Phi,
    /// Vaccine-time: one AR(1) block per vaccine.
    Delta,
    /// Country-vaccine-time: one AR(1) block per country-vaccine pair.
    Omega,
}

/// Block-diagonal interaction precision `I_B (x) R(rho) / sigma^2`, kept in
/// factored form: the per-block tridiagonal matrix is the only thing ever
/// materialized.
#[derive(Debug, Clone)]
pub struct BlockAr1<F> {
    pub n_blocks: usize,
    pub block_len: usize,
    pub rho: F,
    pub sigma: F,
}

impl<F: Real> BlockAr1<F> {
    pub fn dim(&self) -> usize {
        self.n_blocks * self.block_len
    }

    /// The per-block precision `R(rho) / sigma^2`.
    pub fn block_matrix(&self) -> SymTridiag<F> {
        let mut m = ar1_structure(self.block_len, self.rho).expect("validated at construction");
        m.scale(F::one() / (self.sigma * self.sigma));
        m
    }

    /// x' Q x over all blocks.
    pub fn quad_form(&self, x: &[F]) -> F {
        debug_assert_eq!(x.len(), self.dim());
        let mut q = F::zero();
        for b in 0..self.n_blocks {
            let v = &x[b * self.block_len..(b + 1) * self.block_len];
            q += ar1_quad_form(v, self.rho);
        }
        q / (self.sigma * self.sigma)
    }

    /// log det Q, in closed form per block.
    pub fn ln_det(&self) -> F {
        let t = F::of(self.block_len as f64);
        let per_block = (F::one() - self.rho * self.rho).ln() - F::of(2.0) * t * self.sigma.ln();
        F::of(self.n_blocks as f64) * per_block
    }
}

/// Builds the factored interaction precision for `phi`, `delta` or `omega`.
pub fn interaction_precision<F: Real>(
    kind: InteractionKind,
    dims: ModelDims,
    rho: F,
    sigma: F,
) -> Result<BlockAr1<F>> {
    if !(sigma > F::zero()) {
        return Err(Error::Domain(format!(
            "interaction precision requires sigma > 0, got {sigma}"
        )));
    }
    // Validates T and rho.
    ar1_structure::<F>(dims.times, rho)?;
    let n_blocks = match kind {
        InteractionKind::Phi => dims.countries,
        InteractionKind::Delta => dims.vaccines,
        InteractionKind::Omega => dims.countries * dims.vaccines,
    };
    Ok(BlockAr1 {
        n_blocks,
        block_len: dims.times,
        rho,
        sigma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn structure_t2_rho0_is_identity() {
        let r = ar1_structure::<f64>(2, 0.0).unwrap();
        assert_eq!(r.diag, vec![1.0, 1.0]);
        assert_eq!(r.off, vec![0.0]);
    }

    #[test]
    fn structure_t3_rho_half() {
        let r = ar1_structure::<f64>(3, 0.5).unwrap();
        assert_eq!(r.diag, vec![1.0, 1.25, 1.0]);
        assert_eq!(r.off, vec![-0.5, -0.5]);
    }

    #[test]
    fn structure_t1_recovers_stationary_marginal() {
        let r = ar1_structure::<f64>(1, 0.6).unwrap();
        assert_relative_eq!(r.diag[0], 1.0 - 0.36, epsilon = 1e-15);
    }

    #[test]
    fn structure_rejects_unit_rho() {
        assert!(ar1_structure::<f64>(4, 1.0).is_err());
        assert!(ar1_structure::<f64>(4, -1.0).is_err());
        assert!(ar1_structure::<f64>(0, 0.3).is_err());
    }

    #[test]
    fn quad_form_matches_matrix() {
        let rho = 0.7;
        let v = [0.3, -1.2, 0.5, 2.0, -0.1];
        let r = ar1_structure::<f64>(5, rho).unwrap();
        assert_relative_eq!(ar1_quad_form(&v, rho), r.quad_form(&v), epsilon = 1e-12);
    }

    #[test]
    fn closed_form_ln_det_matches_cholesky() {
        for t in 1..=20 {
            for &rho in &[-0.9, -0.3, 0.0, 0.4, 0.8] {
                let r = ar1_structure::<f64>(t, rho).unwrap();
                let chol = r.cholesky().unwrap();
                let closed = (1.0 - rho * rho).ln();
                assert_relative_eq!(chol.ln_det(), closed, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn shift_stats_expand_quad_form() {
        let rho = 0.4;
        let v = [0.3, -1.2, 0.5, 2.0];
        let (g, h) = ar1_shift_stats(&v, rho);
        for &c in &[-0.7, 0.0, 1.3] {
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let direct = ar1_quad_form(&shifted, rho);
            let expanded = ar1_quad_form(&v, rho) + 2.0 * c * g + c * c * h;
            assert_relative_eq!(direct, expanded, epsilon = 1e-12);
        }
    }

    #[test]
    fn tridiag_solve_matches_dense_elimination() {
        let mut q = ar1_structure::<f64>(6, 0.55).unwrap();
        q.add_diag(&[0.9, 0.1, 2.0, 0.0, 1.3, 0.4]);
        let chol = q.cholesky().unwrap();
        let b = [1.0, -2.0, 0.5, 3.0, -1.0, 0.25];
        let mut x = b;
        chol.solve(&mut x);
        // Residual check: Q x == b.
        let dense = q.to_dense();
        for t in 0..6 {
            let mut acc = 0.0;
            for s in 0..6 {
                acc += dense[t][s] * x[s];
            }
            assert_relative_eq!(acc, b[t], epsilon = 1e-10);
        }
    }

    #[test]
    fn posterior_sampling_moments() {
        // Q = diag-dominant tridiagonal; the sampler must hit
        // mean = Q^{-1} b and covariance Q^{-1} in the long run.
        let mut q = ar1_structure::<f64>(3, 0.5).unwrap();
        q.add_diag(&[1.0, 1.0, 1.0]);
        let chol = q.cholesky().unwrap();
        let b = [1.0, 0.0, -1.0];
        let mut expected = b;
        chol.solve(&mut expected);

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 40_000;
        let mut mean = [0.0; 3];
        for _ in 0..n {
            let mut draw = b;
            chol.sample_posterior(&mut draw, &mut rng);
            for (m, d) in mean.iter_mut().zip(draw) {
                *m += d;
            }
        }
        for t in 0..3 {
            mean[t] /= n as f64;
            // Marginal sd is bounded by 1 here, so 4 sigma / sqrt(n) ~ 0.02.
            assert!(
                (mean[t] - expected[t]).abs() < 0.02,
                "component {t}: {} vs {}",
                mean[t],
                expected[t]
            );
        }
    }

    #[test]
    fn block_precision_shapes() {
        let dims = ModelDims {
            countries: 3,
            vaccines: 2,
            times: 4,
        };
        let phi = interaction_precision::<f64>(InteractionKind::Phi, dims, 0.3, 1.0).unwrap();
        assert_eq!(phi.n_blocks, 3);
        assert_eq!(phi.dim(), 12);
        let omega = interaction_precision::<f64>(InteractionKind::Omega, dims, 0.3, 1.0).unwrap();
        assert_eq!(omega.n_blocks, 6);
        let delta = interaction_precision::<f64>(InteractionKind::Delta, dims, 0.3, 1.0).unwrap();
        assert_eq!(delta.n_blocks, 2);
    }

    #[test]
    fn block_quad_form_is_blockwise() {
        let dims = ModelDims {
            countries: 2,
            vaccines: 2,
            times: 3,
        };
        let omega = interaction_precision::<f64>(InteractionKind::Omega, dims, 0.6, 0.8).unwrap();
        let x: Vec<f64> = (0..omega.dim()).map(|i| (i as f64) * 0.37 - 1.0).collect();
        let mut manual = 0.0;
        for b in 0..4 {
            manual += ar1_quad_form(&x[b * 3..(b + 1) * 3], 0.6);
        }
        manual /= 0.64;
        assert_relative_eq!(omega.quad_form(&x), manual, epsilon = 1e-12);
    }

    #[test]
    fn generic_kernels_compile_for_f32() {
        let r = ar1_structure::<f32>(4, 0.5f32).unwrap();
        let chol = r.cholesky().unwrap();
        assert!(chol.ln_det().is_finite());
    }
}
