//! Blocked Gibbs sweep over the latent field with slice-sampled
//! hyperparameters.
//!
//! Every latent block has an exact multivariate-normal full conditional
//! because all likelihood and prior terms are Gaussian. Temporal blocks
//! (gamma, phi/delta/omega rows) have tridiagonal conditional precisions
//! and are drawn with bidiagonal Cholesky solves. BDSL missing cells are
//! imputed by data augmentation at the start of each sweep. Recentering
//! moves resample the likelihood-flat directions (intercepts against main
//! effects, main effects against their interaction rows) so soft
//! identifiability does not stall mixing.

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{
    ar1_quad_form, ar1_shift_stats, ar1_structure, ln_half_cauchy, ln_trunc_half_cauchy,
    log_likelihood, shared_mean_into, Hyperparams, LatentField, ModelDims, ModelKind, Observations,
    PriorConfig,
};
use crate::num::Real;
use crate::sampler::slice::slice_sample;

pub(crate) struct GibbsContext<'a, F> {
    pub kind: ModelKind,
    pub obs: &'a Observations<F>,
    pub priors: &'a PriorConfig<F>,
    pub dims: ModelDims,
    /// Missing (source, cell) pairs in enumeration order; empty for IDML.
    pub missing: Vec<(usize, usize)>,
    pub fix_hyper: bool,
}

pub(crate) struct GibbsState<F> {
    pub field: LatentField<F>,
    pub hyper: Hyperparams<F>,
    /// Working copy of the data, source-major; BDSL missing cells hold the
    /// current imputations.
    pub y: Vec<F>,
    /// Shared mean over the grid.
    pub mu: Vec<F>,
    /// Per-cell precision-weighted sums of bias-corrected data.
    m: Vec<F>,
    /// Per-cell total observation precision.
    d: Vec<F>,
}

impl<'a, F: Real> GibbsContext<'a, F> {
    pub fn new(
        kind: ModelKind,
        obs: &'a Observations<F>,
        priors: &'a PriorConfig<F>,
        fix_hyper: bool,
    ) -> Self {
        let missing = match kind {
            ModelKind::Bdsl => obs.missing_cells(),
            ModelKind::Idml => Vec::new(),
        };
        GibbsContext {
            kind,
            obs,
            priors,
            dims: obs.dims(),
            missing,
            fix_hyper,
        }
    }

    pub fn init_state(&self, field: LatentField<F>, hyper: Hyperparams<F>) -> GibbsState<F> {
        let cells = self.dims.cells();
        let mut y = vec![F::zero(); 3 * cells];
        for k in 0..3 {
            for cell in 0..cells {
                if self.obs.is_present(k, cell) {
                    y[k * cells + cell] = self.obs.value(k, cell);
                }
            }
        }
        let mut state = GibbsState {
            field,
            hyper,
            y,
            mu: vec![F::zero(); cells],
            m: vec![F::zero(); cells],
            d: vec![F::zero(); cells],
        };
        shared_mean_into(self.kind, self.dims, &state.field, &mut state.mu);
        state
    }

    fn weights(&self, hyper: &Hyperparams<F>) -> [F; 3] {
        match self.kind {
            ModelKind::Bdsl => {
                let w = F::one() / (hyper.sigma * hyper.sigma);
                [w, w, w]
            }
            ModelKind::Idml => [
                F::one() / (hyper.sigma_src[0] * hyper.sigma_src[0]),
                F::one() / (hyper.sigma_src[1] * hyper.sigma_src[1]),
                F::one() / (hyper.sigma_src[2] * hyper.sigma_src[2]),
            ],
        }
    }

    fn intercepts(&self, state: &GibbsState<F>) -> [F; 3] {
        match self.kind {
            ModelKind::Bdsl => state.field.nu,
            ModelKind::Idml => state.field.lambda_src,
        }
    }

    /// Recomputes mu exactly and rebuilds the per-cell (m, d) caches.
    fn refresh(&self, state: &mut GibbsState<F>) {
        let cells = self.dims.cells();
        // A full recompute each sweep also clears incremental round-off.
        let (field, mu) = (&state.field, &mut state.mu);
        shared_mean_into(self.kind, self.dims, field, mu);
        let w = self.weights(&state.hyper);
        let ints = self.intercepts(state);
        let balanced = self.kind == ModelKind::Bdsl;
        for cell in 0..cells {
            let mut m = F::zero();
            let mut d = F::zero();
            for k in 0..3 {
                if balanced || self.obs.is_present(k, cell) {
                    m += w[k] * (state.y[k * cells + cell] - ints[k]);
                    d += w[k];
                }
            }
            state.m[cell] = m;
            state.d[cell] = d;
        }
    }

    /// BDSL data augmentation: draws every missing cell from its
    /// conditional N(mu + nu_k, sigma^2).
    fn impute_missing<R: Rng + ?Sized>(&self, state: &mut GibbsState<F>, rng: &mut R) {
        let cells = self.dims.cells();
        let sigma = state.hyper.sigma;
        for &(k, cell) in &self.missing {
            let z = F::std_normal(rng);
            state.y[k * cells + cell] = state.mu[cell] + state.field.nu[k] + sigma * z;
        }
    }

    #[inline]
    fn draw_scalar<R: Rng + ?Sized>(prior_prec: F, lik_prec: F, b: F, rng: &mut R) -> F {
        let p = prior_prec + lik_prec;
        b / p + F::std_normal(rng) / p.sqrt()
    }

    fn update_intercepts<R: Rng + ?Sized>(&self, state: &mut GibbsState<F>, rng: &mut R) {
        let cells = self.dims.cells();
        let w = self.weights(&state.hyper);
        match self.kind {
            ModelKind::Bdsl => {
                // Global intercept (inside mu).
                let old = state.field.lambda;
                let mut lik_prec = F::zero();
                let mut b = F::zero();
                for cell in 0..cells {
                    lik_prec += state.d[cell];
                    b += state.m[cell] - state.d[cell] * (state.mu[cell] - old);
                }
                let new = Self::draw_scalar(F::one() / self.priors.lambda_var, lik_prec, b, rng);
                state.field.lambda = new;
                let delta = new - old;
                for mu in &mut state.mu {
                    *mu += delta;
                }
                // Source biases (outside mu), complete data after
                // augmentation.
                let prior_prec = F::one() / (state.hyper.sigma_nu * state.hyper.sigma_nu);
                for k in 0..3 {
                    let old = state.field.nu[k];
                    let mut b = F::zero();
                    for cell in 0..cells {
                        b += w[k] * (state.y[k * cells + cell] - state.mu[cell]);
                    }
                    let lik_prec = w[k] * F::of(cells as f64);
                    let new = Self::draw_scalar(prior_prec, lik_prec, b, rng);
                    state.field.nu[k] = new;
                    let delta = new - old;
                    for cell in 0..cells {
                        state.m[cell] -= w[k] * delta;
                    }
                }
            }
            ModelKind::Idml => {
                for k in 0..3 {
                    let old = state.field.lambda_src[k];
                    let mut b = F::zero();
                    let mut n = 0usize;
                    for cell in 0..cells {
                        if self.obs.is_present(k, cell) {
                            b += w[k] * (state.y[k * cells + cell] - state.mu[cell]);
                            n += 1;
                        }
                    }
                    let lik_prec = w[k] * F::of(n as f64);
                    let new = Self::draw_scalar(F::one() / self.priors.v[k], lik_prec, b, rng);
                    state.field.lambda_src[k] = new;
                    let delta = new - old;
                    for cell in 0..cells {
                        if self.obs.is_present(k, cell) {
                            state.m[cell] -= w[k] * delta;
                        }
                    }
                }
            }
        }
    }

    fn update_beta<R: Rng + ?Sized>(&self, state: &mut GibbsState<F>, rng: &mut R) {
        let span = self.dims.vaccines * self.dims.times;
        let prior_prec = F::one() / (state.hyper.sigma_beta * state.hyper.sigma_beta);
        for i in 0..self.dims.countries {
            let old = state.field.beta[i];
            let base = i * span;
            let mut lik_prec = F::zero();
            let mut b = F::zero();
            for cell in base..base + span {
                lik_prec += state.d[cell];
                b += state.m[cell] - state.d[cell] * (state.mu[cell] - old);
            }
            let new = Self::draw_scalar(prior_prec, lik_prec, b, rng);
            state.field.beta[i] = new;
            let delta = new - old;
            for cell in base..base + span {
                state.mu[cell] += delta;
            }
        }
    }

    fn update_alpha<R: Rng + ?Sized>(&self, state: &mut GibbsState<F>, rng: &mut R) {
        let (c, v, t) = (self.dims.countries, self.dims.vaccines, self.dims.times);
        let prior_prec = F::one() / (state.hyper.sigma_alpha * state.hyper.sigma_alpha);
        for j in 0..v {
            let old = state.field.alpha[j];
            let mut lik_prec = F::zero();
            let mut b = F::zero();
            for i in 0..c {
                let base = (i * v + j) * t;
                for cell in base..base + t {
                    lik_prec += state.d[cell];
                    b += state.m[cell] - state.d[cell] * (state.mu[cell] - old);
                }
            }
            let new = Self::draw_scalar(prior_prec, lik_prec, b, rng);
            state.field.alpha[j] = new;
            let delta = new - old;
            for i in 0..c {
                let base = (i * v + j) * t;
                for cell in base..base + t {
                    state.mu[cell] += delta;
                }
            }
        }
    }

    fn update_psi<R: Rng + ?Sized>(&self, state: &mut GibbsState<F>, rng: &mut R) {
        let (c, v, t) = (self.dims.countries, self.dims.vaccines, self.dims.times);
        let prior_prec = F::one() / (state.hyper.sigma_psi * state.hyper.sigma_psi);
        for i in 0..c {
            for j in 0..v {
                let old = state.field.psi[i * v + j];
                let base = (i * v + j) * t;
                let mut lik_prec = F::zero();
                let mut b = F::zero();
                for cell in base..base + t {
                    lik_prec += state.d[cell];
                    b += state.m[cell] - state.d[cell] * (state.mu[cell] - old);
                }
                let new = Self::draw_scalar(prior_prec, lik_prec, b, rng);
                state.field.psi[i * v + j] = new;
                let delta = new - old;
                for cell in base..base + t {
                    state.mu[cell] += delta;
                }
            }
        }
    }

    /// Draws an AR(1)-prior vector from its tridiagonal full conditional.
    /// `lik_prec[t]`/`b[t]` are the per-time likelihood precision and
    /// linear terms; `b` is overwritten with the draw.
    fn sample_ar1_block<R: Rng + ?Sized>(
        rho: F,
        sigma: F,
        lik_prec: &[F],
        b: &mut [F],
        rng: &mut R,
    ) {
        let mut q = ar1_structure(lik_prec.len(), rho).expect("rho validated in-domain");
        q.scale(F::one() / (sigma * sigma));
        q.add_diag(lik_prec);
        let chol = q
            .cholesky()
            .expect("AR(1) conditional precision is positive definite");
        chol.sample_posterior(b, rng);
    }

    fn update_gamma<R: Rng + ?Sized>(&self, state: &mut GibbsState<F>, rng: &mut R) {
        let (c, v, t) = (self.dims.countries, self.dims.vaccines, self.dims.times);
        let mut lik_prec = vec![F::zero(); t];
        let mut b = vec![F::zero(); t];
        for row in 0..c * v {
            let base = row * t;
            for s in 0..t {
                let cell = base + s;
                lik_prec[s] += state.d[cell];
                b[s] += state.m[cell] - state.d[cell] * (state.mu[cell] - state.field.gamma[s]);
            }
        }
        Self::sample_ar1_block(
            state.hyper.rho_gamma,
            state.hyper.sigma_gamma,
            &lik_prec,
            &mut b,
            rng,
        );
        for row in 0..c * v {
            let base = row * t;
            for s in 0..t {
                state.mu[base + s] += b[s] - state.field.gamma[s];
            }
        }
        state.field.gamma.copy_from_slice(&b);
    }

    fn update_phi<R: Rng + ?Sized>(&self, state: &mut GibbsState<F>, rng: &mut R) {
        let (c, v, t) = (self.dims.countries, self.dims.vaccines, self.dims.times);
        let mut lik_prec = vec![F::zero(); t];
        let mut b = vec![F::zero(); t];
        for i in 0..c {
            lik_prec.iter_mut().for_each(|x| *x = F::zero());
            b.iter_mut().for_each(|x| *x = F::zero());
            for j in 0..v {
                let base = (i * v + j) * t;
                for s in 0..t {
                    let cell = base + s;
                    let old = state.field.phi[i * t + s];
                    lik_prec[s] += state.d[cell];
                    b[s] += state.m[cell] - state.d[cell] * (state.mu[cell] - old);
                }
            }
            Self::sample_ar1_block(
                state.hyper.rho_phi,
                state.hyper.sigma_phi,
                &lik_prec,
                &mut b,
                rng,
            );
            for j in 0..v {
                let base = (i * v + j) * t;
                for s in 0..t {
                    state.mu[base + s] += b[s] - state.field.phi[i * t + s];
                }
            }
            state.field.phi[i * t..(i + 1) * t].copy_from_slice(&b);
        }
    }

    fn update_delta<R: Rng + ?Sized>(&self, state: &mut GibbsState<F>, rng: &mut R) {
        let (c, v, t) = (self.dims.countries, self.dims.vaccines, self.dims.times);
        let mut lik_prec = vec![F::zero(); t];
        let mut b = vec![F::zero(); t];
        for j in 0..v {
            lik_prec.iter_mut().for_each(|x| *x = F::zero());
            b.iter_mut().for_each(|x| *x = F::zero());
            for i in 0..c {
                let base = (i * v + j) * t;
                for s in 0..t {
                    let cell = base + s;
                    let old = state.field.delta[j * t + s];
                    lik_prec[s] += state.d[cell];
                    b[s] += state.m[cell] - state.d[cell] * (state.mu[cell] - old);
                }
            }
            Self::sample_ar1_block(
                state.hyper.rho_delta,
                state.hyper.sigma_delta,
                &lik_prec,
                &mut b,
                rng,
            );
            for i in 0..c {
                let base = (i * v + j) * t;
                for s in 0..t {
                    state.mu[base + s] += b[s] - state.field.delta[j * t + s];
                }
            }
            state.field.delta[j * t..(j + 1) * t].copy_from_slice(&b);
        }
    }

    fn update_omega<R: Rng + ?Sized>(&self, state: &mut GibbsState<F>, rng: &mut R) {
        let (c, v, t) = (self.dims.countries, self.dims.vaccines, self.dims.times);
        let mut lik_prec = vec![F::zero(); t];
        let mut b = vec![F::zero(); t];
        for row in 0..c * v {
            let base = row * t;
            for s in 0..t {
                let cell = base + s;
                let old = state.field.omega[cell];
                lik_prec[s] = state.d[cell];
                b[s] = state.m[cell] - state.d[cell] * (state.mu[cell] - old);
            }
            Self::sample_ar1_block(
                state.hyper.rho_omega,
                state.hyper.sigma_omega,
                &lik_prec,
                &mut b,
                rng,
            );
            for s in 0..t {
                let cell = base + s;
                state.mu[cell] += b[s] - state.field.omega[cell];
                state.field.omega[cell] = b[s];
            }
        }
    }

    /// Draws `c ~ N(-lin/p, 1/p)` for a recentering direction.
    #[inline]
    fn recenter_draw<R: Rng + ?Sized>(lin: F, p: F, rng: &mut R) -> F {
        -lin / p + F::std_normal(rng) / p.sqrt()
    }

    /// Precision and linear term of the IDML intercept group that absorbs
    /// `-c` in global moves.
    fn intercept_terms(&self, state: &GibbsState<F>) -> (F, F) {
        let mut prec = F::zero();
        let mut lin = F::zero();
        for k in 0..3 {
            prec += F::one() / self.priors.v[k];
            lin += state.field.lambda_src[k] / self.priors.v[k];
        }
        (prec, lin)
    }

    /// Applies `lambda_src -= c`, updating caches: the intercepts sit
    /// outside mu, so mu absorbs the +c and the weighted data sums shift
    /// with them.
    fn shift_intercepts(&self, state: &mut GibbsState<F>, c: F) {
        for k in 0..3 {
            state.field.lambda_src[k] -= c;
        }
        for cell in 0..self.dims.cells() {
            state.mu[cell] += c;
            state.m[cell] += c * state.d[cell];
        }
    }

    /// Resamples the likelihood-flat linear directions.
    fn recenter<R: Rng + ?Sized>(&self, state: &mut GibbsState<F>, rng: &mut R) {
        let (c_dim, v_dim, t_dim) = (self.dims.countries, self.dims.vaccines, self.dims.times);
        let h = state.hyper.clone();
        let sb2 = h.sigma_beta * h.sigma_beta;
        let sa2 = h.sigma_alpha * h.sigma_alpha;
        let sg2 = h.sigma_gamma * h.sigma_gamma;
        let sphi2 = h.sigma_phi * h.sigma_phi;
        let sdel2 = h.sigma_delta * h.sigma_delta;
        let spsi2 = h.sigma_psi * h.sigma_psi;
        let som2 = h.sigma_omega * h.sigma_omega;

        // Global trades between the main effects and the source
        // intercepts. These run for IDML only: its intercepts carry
        // proper informative priors, so the direction is well identified
        // and worth resampling jointly. The BDSL decomposition between
        // the global intercept and the source biases is left to the plain
        // blocked updates.
        if self.kind == ModelKind::Idml {
            // beta vs intercepts.
            {
                let (iprec, ilin) = self.intercept_terms(state);
                let sum_beta: F = state.field.beta.iter().copied().sum();
                let lin = sum_beta / sb2 - ilin;
                let p = F::of(c_dim as f64) / sb2 + iprec;
                let c = Self::recenter_draw(lin, p, rng);
                for b in &mut state.field.beta {
                    *b += c;
                }
                self.shift_intercepts(state, c);
            }
            // alpha vs intercepts.
            {
                let (iprec, ilin) = self.intercept_terms(state);
                let sum_alpha: F = state.field.alpha.iter().copied().sum();
                let lin = sum_alpha / sa2 - ilin;
                let p = F::of(v_dim as f64) / sa2 + iprec;
                let c = Self::recenter_draw(lin, p, rng);
                for a in &mut state.field.alpha {
                    *a += c;
                }
                self.shift_intercepts(state, c);
            }
            // gamma vs intercepts.
            {
                let (iprec, ilin) = self.intercept_terms(state);
                let (g, hq) = ar1_shift_stats(&state.field.gamma, h.rho_gamma);
                let lin = g / sg2 - ilin;
                let p = hq / sg2 + iprec;
                let c = Self::recenter_draw(lin, p, rng);
                for gt in &mut state.field.gamma {
                    *gt += c;
                }
                self.shift_intercepts(state, c);
            }
        }
        // Per-country: beta_i vs its phi row and psi row.
        for i in 0..c_dim {
            let phi_row = &state.field.phi[i * t_dim..(i + 1) * t_dim];
            let (g, hq) = ar1_shift_stats(phi_row, h.rho_phi);
            let lin = state.field.beta[i] / sb2 - g / sphi2;
            let p = F::one() / sb2 + hq / sphi2;
            let c = Self::recenter_draw(lin, p, rng);
            state.field.beta[i] += c;
            for t in 0..t_dim {
                state.field.phi[i * t_dim + t] -= c;
            }

            let psi_sum: F = (0..v_dim).map(|j| state.field.psi[i * v_dim + j]).sum();
            let lin = state.field.beta[i] / sb2 - psi_sum / spsi2;
            let p = F::one() / sb2 + F::of(v_dim as f64) / spsi2;
            let c = Self::recenter_draw(lin, p, rng);
            state.field.beta[i] += c;
            for j in 0..v_dim {
                state.field.psi[i * v_dim + j] -= c;
            }
        }
        // Per-vaccine: alpha_j vs its delta row and psi column.
        for j in 0..v_dim {
            let delta_row = &state.field.delta[j * t_dim..(j + 1) * t_dim];
            let (g, hq) = ar1_shift_stats(delta_row, h.rho_delta);
            let lin = state.field.alpha[j] / sa2 - g / sdel2;
            let p = F::one() / sa2 + hq / sdel2;
            let c = Self::recenter_draw(lin, p, rng);
            state.field.alpha[j] += c;
            for t in 0..t_dim {
                state.field.delta[j * t_dim + t] -= c;
            }

            let psi_sum: F = (0..c_dim).map(|i| state.field.psi[i * v_dim + j]).sum();
            let lin = state.field.alpha[j] / sa2 - psi_sum / spsi2;
            let p = F::one() / sa2 + F::of(c_dim as f64) / spsi2;
            let c = Self::recenter_draw(lin, p, rng);
            state.field.alpha[j] += c;
            for i in 0..c_dim {
                state.field.psi[i * v_dim + j] -= c;
            }
        }
        // Per-pair: psi_ij vs its omega row.
        for i in 0..c_dim {
            for j in 0..v_dim {
                let base = (i * v_dim + j) * t_dim;
                let omega_row = &state.field.omega[base..base + t_dim];
                let (g, hq) = ar1_shift_stats(omega_row, h.rho_omega);
                let lin = state.field.psi[i * v_dim + j] / spsi2 - g / som2;
                let p = F::one() / spsi2 + hq / som2;
                let c = Self::recenter_draw(lin, p, rng);
                state.field.psi[i * v_dim + j] += c;
                for t in 0..t_dim {
                    state.field.omega[base + t] -= c;
                }
            }
        }

        self.recenter_temporal(state, rng);
    }

    /// Resamples the time-varying likelihood-flat directions: adding a
    /// trajectory c_t to one temporal group while subtracting it from the
    /// rows of another leaves every shared mean unchanged, so the
    /// conditional of c is a T-dimensional Gaussian whose precision is the
    /// (tridiagonal) sum of the groups' AR(1) precisions.
    fn recenter_temporal<R: Rng + ?Sized>(&self, state: &mut GibbsState<F>, rng: &mut R) {
        let (c_dim, v_dim, t_dim) = (self.dims.countries, self.dims.vaccines, self.dims.times);
        let h = state.hyper.clone();

        let scaled = |rho: F, sigma: F| {
            let mut m = ar1_structure(t_dim, rho).expect("rho validated in-domain");
            m.scale(F::one() / (sigma * sigma));
            m
        };
        let r_gamma = scaled(h.rho_gamma, h.sigma_gamma);
        let r_phi = scaled(h.rho_phi, h.sigma_phi);
        let r_delta = scaled(h.rho_delta, h.sigma_delta);
        let r_omega = scaled(h.rho_omega, h.sigma_omega);

        let sum_rows = |rows: &[F], n_blocks: usize| -> Vec<F> {
            let mut s = vec![F::zero(); t_dim];
            for b in 0..n_blocks {
                for t in 0..t_dim {
                    s[t] += rows[b * t_dim + t];
                }
            }
            s
        };

        // Draw c for: group A (n_a blocks, scaled precision ra, block sum
        // sum_a) taking +c against group B taking -c.
        let draw_direction = |ra: &crate::model::SymTridiag<F>,
                              n_a: usize,
                              sum_a: &[F],
                              rb: &crate::model::SymTridiag<F>,
                              n_b: usize,
                              sum_b: &[F],
                              rng: &mut R|
         -> Vec<F> {
            let mut p = ra.clone();
            p.scale(F::of(n_a as f64));
            p.axpy(rb, F::of(n_b as f64));
            let mut b = vec![F::zero(); t_dim];
            let mut tmp = vec![F::zero(); t_dim];
            rb.matvec(sum_b, &mut b);
            ra.matvec(sum_a, &mut tmp);
            for t in 0..t_dim {
                b[t] -= tmp[t];
            }
            let chol = p.cholesky().expect("recentering precision is PD");
            chol.sample_posterior(&mut b, rng);
            b
        };

        // gamma against each interaction group.
        {
            let sum_b = sum_rows(&state.field.phi, c_dim);
            let c = draw_direction(
                &r_gamma,
                1,
                &state.field.gamma.clone(),
                &r_phi,
                c_dim,
                &sum_b,
                rng,
            );
            for t in 0..t_dim {
                state.field.gamma[t] += c[t];
            }
            for b in 0..c_dim {
                for t in 0..t_dim {
                    state.field.phi[b * t_dim + t] -= c[t];
                }
            }
        }
        {
            let sum_b = sum_rows(&state.field.delta, v_dim);
            let c = draw_direction(
                &r_gamma,
                1,
                &state.field.gamma.clone(),
                &r_delta,
                v_dim,
                &sum_b,
                rng,
            );
            for t in 0..t_dim {
                state.field.gamma[t] += c[t];
            }
            for b in 0..v_dim {
                for t in 0..t_dim {
                    state.field.delta[b * t_dim + t] -= c[t];
                }
            }
        }
        {
            let n_b = c_dim * v_dim;
            let sum_b = sum_rows(&state.field.omega, n_b);
            let c = draw_direction(
                &r_gamma,
                1,
                &state.field.gamma.clone(),
                &r_omega,
                n_b,
                &sum_b,
                rng,
            );
            for t in 0..t_dim {
                state.field.gamma[t] += c[t];
            }
            for b in 0..n_b {
                for t in 0..t_dim {
                    state.field.omega[b * t_dim + t] -= c[t];
                }
            }
        }

        // phi (all countries) against delta (all vaccines).
        {
            let sum_a = sum_rows(&state.field.phi, c_dim);
            let sum_b = sum_rows(&state.field.delta, v_dim);
            let c = draw_direction(&r_phi, c_dim, &sum_a, &r_delta, v_dim, &sum_b, rng);
            for i in 0..c_dim {
                for t in 0..t_dim {
                    state.field.phi[i * t_dim + t] += c[t];
                }
            }
            for j in 0..v_dim {
                for t in 0..t_dim {
                    state.field.delta[j * t_dim + t] -= c[t];
                }
            }
        }

        // Each country's phi row against its omega rows.
        for i in 0..c_dim {
            let sum_a = state.field.phi[i * t_dim..(i + 1) * t_dim].to_vec();
            let mut sum_b = vec![F::zero(); t_dim];
            for j in 0..v_dim {
                let base = (i * v_dim + j) * t_dim;
                for t in 0..t_dim {
                    sum_b[t] += state.field.omega[base + t];
                }
            }
            let c = draw_direction(&r_phi, 1, &sum_a, &r_omega, v_dim, &sum_b, rng);
            for t in 0..t_dim {
                state.field.phi[i * t_dim + t] += c[t];
            }
            for j in 0..v_dim {
                let base = (i * v_dim + j) * t_dim;
                for t in 0..t_dim {
                    state.field.omega[base + t] -= c[t];
                }
            }
        }

        // Each vaccine's delta row against its omega rows.
        for j in 0..v_dim {
            let sum_a = state.field.delta[j * t_dim..(j + 1) * t_dim].to_vec();
            let mut sum_b = vec![F::zero(); t_dim];
            for i in 0..c_dim {
                let base = (i * v_dim + j) * t_dim;
                for t in 0..t_dim {
                    sum_b[t] += state.field.omega[base + t];
                }
            }
            let c = draw_direction(&r_delta, 1, &sum_a, &r_omega, c_dim, &sum_b, rng);
            for t in 0..t_dim {
                state.field.delta[j * t_dim + t] += c[t];
            }
            for i in 0..c_dim {
                let base = (i * v_dim + j) * t_dim;
                for t in 0..t_dim {
                    state.field.omega[base + t] -= c[t];
                }
            }
        }
    }

    /// Ancillarity-sufficiency moves for the random-effect scales: holding
    /// the whitened group v/sigma fixed, the log-likelihood is quadratic
    /// in sigma, so its conditional (flat prior) is slice-sampled cheaply
    /// and the group is rescaled. Breaks the scale-field funnel that
    /// plain Gibbs mixes through very slowly.
    fn asis_scales<R: Rng + ?Sized>(&self, state: &mut GibbsState<F>, rng: &mut R) {
        let dims = self.dims;
        let (c_dim, v_dim, t_dim) = (dims.countries, dims.vaccines, dims.times);

        // Per-cell direction s = (group contribution to mu) / sigma.
        enum Group {
            Beta,
            Alpha,
            Psi,
            Gamma,
            Phi,
            Delta,
            Omega,
        }
        let groups = [
            Group::Beta,
            Group::Alpha,
            Group::Psi,
            Group::Gamma,
            Group::Phi,
            Group::Delta,
            Group::Omega,
        ];
        for group in groups {
            let sigma_old = match group {
                Group::Beta => state.hyper.sigma_beta,
                Group::Alpha => state.hyper.sigma_alpha,
                Group::Psi => state.hyper.sigma_psi,
                Group::Gamma => state.hyper.sigma_gamma,
                Group::Phi => state.hyper.sigma_phi,
                Group::Delta => state.hyper.sigma_delta,
                Group::Omega => state.hyper.sigma_omega,
            };
            let value_at = |field: &LatentField<F>, i: usize, j: usize, t: usize| match group {
                Group::Beta => field.beta[i],
                Group::Alpha => field.alpha[j],
                Group::Psi => field.psi[i * v_dim + j],
                Group::Gamma => field.gamma[t],
                Group::Phi => field.phi[i * t_dim + t],
                Group::Delta => field.delta[j * t_dim + t],
                Group::Omega => field.omega[dims.cell(i, j, t)],
            };
            // Quadratic likelihood coefficients in sigma.
            let mut a = F::zero();
            let mut b = F::zero();
            for i in 0..c_dim {
                for j in 0..v_dim {
                    for t in 0..t_dim {
                        let cell = dims.cell(i, j, t);
                        let s = value_at(&state.field, i, j, t) / sigma_old;
                        let rest = state.mu[cell] - sigma_old * s;
                        a += state.d[cell] * s * s;
                        b += s * (state.m[cell] - state.d[cell] * rest);
                    }
                }
            }
            let sigma_new = slice_sample(
                sigma_old,
                |s| b * s - a * s * s * F::of(0.5),
                (sigma_old * F::of(0.5)).max(F::of(0.2)),
                F::zero(),
                F::infinity(),
                rng,
            );
            let ratio = sigma_new / sigma_old;
            match group {
                Group::Beta => {
                    for x in &mut state.field.beta {
                        *x *= ratio;
                    }
                    state.hyper.sigma_beta = sigma_new;
                }
                Group::Alpha => {
                    for x in &mut state.field.alpha {
                        *x *= ratio;
                    }
                    state.hyper.sigma_alpha = sigma_new;
                }
                Group::Psi => {
                    for x in &mut state.field.psi {
                        *x *= ratio;
                    }
                    state.hyper.sigma_psi = sigma_new;
                }
                Group::Gamma => {
                    for x in &mut state.field.gamma {
                        *x *= ratio;
                    }
                    state.hyper.sigma_gamma = sigma_new;
                }
                Group::Phi => {
                    for x in &mut state.field.phi {
                        *x *= ratio;
                    }
                    state.hyper.sigma_phi = sigma_new;
                }
                Group::Delta => {
                    for x in &mut state.field.delta {
                        *x *= ratio;
                    }
                    state.hyper.sigma_delta = sigma_new;
                }
                Group::Omega => {
                    for x in &mut state.field.omega {
                        *x *= ratio;
                    }
                    state.hyper.sigma_omega = sigma_new;
                }
            }
            // mu shifts by (sigma_new - sigma_old) * s at every cell.
            for i in 0..c_dim {
                for j in 0..v_dim {
                    for t in 0..t_dim {
                        let cell = dims.cell(i, j, t);
                        // value_at now returns the rescaled effect.
                        let contribution = value_at(&state.field, i, j, t);
                        state.mu[cell] = state.mu[cell] - contribution / ratio + contribution;
                    }
                }
            }
        }
    }

    fn slice_hyper<R: Rng + ?Sized>(&self, state: &mut GibbsState<F>, rng: &mut R) {
        let cells = self.dims.cells();
        let (c_dim, v_dim, t_dim) = (self.dims.countries, self.dims.vaccines, self.dims.times);
        let inf = F::infinity();
        let zero = F::zero();
        let half = F::of(0.5);
        let width_for = |x: F| (x * half).max(F::of(0.2));

        // Likelihood scales.
        match self.kind {
            ModelKind::Bdsl => {
                let mut ssr = F::zero();
                for k in 0..3 {
                    for cell in 0..cells {
                        let r = state.y[k * cells + cell] - state.field.nu[k] - state.mu[cell];
                        ssr += r * r;
                    }
                }
                let n = F::of((3 * cells) as f64);
                let scale = self.priors.sigma_scale;
                state.hyper.sigma = slice_sample(
                    state.hyper.sigma,
                    |s| -n * s.ln() - ssr / (F::of(2.0) * s * s) + ln_half_cauchy(s, scale),
                    width_for(state.hyper.sigma),
                    zero,
                    inf,
                    rng,
                );

                let nu_ss: F = state.field.nu.iter().map(|&x| x * x).sum();
                let scale_nu = self.priors.sigma_nu_scale;
                state.hyper.sigma_nu = slice_sample(
                    state.hyper.sigma_nu,
                    |s| {
                        -F::of(3.0) * s.ln() - nu_ss / (F::of(2.0) * s * s)
                            + ln_half_cauchy(s, scale_nu)
                    },
                    width_for(state.hyper.sigma_nu),
                    zero,
                    inf,
                    rng,
                );
            }
            ModelKind::Idml => {
                for k in 0..3 {
                    let mut ssr = F::zero();
                    let mut n = 0usize;
                    for cell in 0..cells {
                        if self.obs.is_present(k, cell) {
                            let r = state.y[k * cells + cell]
                                - state.field.lambda_src[k]
                                - state.mu[cell];
                            ssr += r * r;
                            n += 1;
                        }
                    }
                    let n = F::of(n as f64);
                    let scale = self.priors.sigma_src_scale[k];
                    let upper = if k == 2 {
                        self.priors.sigma3_upper
                    } else {
                        None
                    };
                    let hi = upper.unwrap_or(inf);
                    state.hyper.sigma_src[k] = slice_sample(
                        state.hyper.sigma_src[k],
                        |s| {
                            let prior = match upper {
                                Some(u) => ln_trunc_half_cauchy(s, scale, u),
                                None => ln_half_cauchy(s, scale),
                            };
                            -n * s.ln() - ssr / (F::of(2.0) * s * s) + prior
                        },
                        width_for(state.hyper.sigma_src[k]).min(hi * half),
                        zero,
                        hi,
                        rng,
                    );
                }
            }
        }

        // Flat-prior scales of the iid effects.
        let iid_scale = |xs: &[F], cur: F, rng: &mut R| -> F {
            let n = F::of(xs.len() as f64);
            let ss: F = xs.iter().map(|&x| x * x).sum();
            slice_sample(
                cur,
                |s| -n * s.ln() - ss / (F::of(2.0) * s * s),
                width_for(cur),
                zero,
                inf,
                rng,
            )
        };
        state.hyper.sigma_beta = iid_scale(&state.field.beta, state.hyper.sigma_beta, rng);
        state.hyper.sigma_alpha = iid_scale(&state.field.alpha, state.hyper.sigma_alpha, rng);
        state.hyper.sigma_psi = iid_scale(&state.field.psi, state.hyper.sigma_psi, rng);

        // AR(1) blocks: autocorrelation then innovation scale.
        let rho_width = F::of(0.4);
        {
            let gamma = &state.field.gamma;
            let sg2 = state.hyper.sigma_gamma * state.hyper.sigma_gamma;
            state.hyper.rho_gamma = slice_sample(
                state.hyper.rho_gamma,
                |r| half * (F::one() - r * r).ln() - ar1_quad_form(gamma, r) / (F::of(2.0) * sg2),
                rho_width,
                -F::one(),
                F::one(),
                rng,
            );
            let q = ar1_quad_form(gamma, state.hyper.rho_gamma);
            let n = F::of(t_dim as f64);
            state.hyper.sigma_gamma = slice_sample(
                state.hyper.sigma_gamma,
                |s| -n * s.ln() - q / (F::of(2.0) * s * s),
                width_for(state.hyper.sigma_gamma),
                zero,
                inf,
                rng,
            );
        }

        let ar1_group = |rows: &[F], n_blocks: usize, rho: F, sigma: F, rng: &mut R| -> (F, F) {
            let quad_at = |r: F| -> F {
                let mut q = F::zero();
                for bl in 0..n_blocks {
                    q += ar1_quad_form(&rows[bl * t_dim..(bl + 1) * t_dim], r);
                }
                q
            };
            let s2 = sigma * sigma;
            let nb = F::of(n_blocks as f64);
            let new_rho = slice_sample(
                rho,
                |r| nb * half * (F::one() - r * r).ln() - quad_at(r) / (F::of(2.0) * s2),
                rho_width,
                -F::one(),
                F::one(),
                rng,
            );
            let q = quad_at(new_rho);
            let n = F::of((n_blocks * t_dim) as f64);
            let new_sigma = slice_sample(
                sigma,
                |s| -n * s.ln() - q / (F::of(2.0) * s * s),
                width_for(sigma),
                zero,
                inf,
                rng,
            );
            (new_rho, new_sigma)
        };

        let (r, s) = ar1_group(
            &state.field.phi,
            c_dim,
            state.hyper.rho_phi,
            state.hyper.sigma_phi,
            rng,
        );
        state.hyper.rho_phi = r;
        state.hyper.sigma_phi = s;
        let (r, s) = ar1_group(
            &state.field.delta,
            v_dim,
            state.hyper.rho_delta,
            state.hyper.sigma_delta,
            rng,
        );
        state.hyper.rho_delta = r;
        state.hyper.sigma_delta = s;
        let (r, s) = ar1_group(
            &state.field.omega,
            c_dim * v_dim,
            state.hyper.rho_omega,
            state.hyper.sigma_omega,
            rng,
        );
        state.hyper.rho_omega = r;
        state.hyper.sigma_omega = s;
    }

    /// One full sweep over all blocks.
    pub fn sweep<R: Rng + ?Sized>(&self, state: &mut GibbsState<F>, rng: &mut R) {
        if self.kind == ModelKind::Bdsl {
            // Uses last sweep's mu; exact because mu is recomputed below
            // before any block conditional reads the imputed data.
            shared_mean_into(self.kind, self.dims, &state.field, &mut state.mu);
            self.impute_missing(state, rng);
        }
        self.refresh(state);
        self.update_intercepts(state, rng);
        self.update_beta(state, rng);
        self.update_alpha(state, rng);
        self.update_gamma(state, rng);
        self.update_phi(state, rng);
        self.update_delta(state, rng);
        self.update_psi(state, rng);
        self.update_omega(state, rng);
        self.recenter(state, rng);
        if !self.fix_hyper {
            self.slice_hyper(state, rng);
            self.asis_scales(state, rng);
        }
    }

    /// Extracts the imputed values in missing-cell enumeration order.
    pub fn missing_values(&self, state: &GibbsState<F>) -> Vec<F> {
        let cells = self.dims.cells();
        self.missing
            .iter()
            .map(|&(k, cell)| state.y[k * cells + cell])
            .collect()
    }

    /// Verifies each density component is finite, naming the failing block.
    pub fn check_init(&self, state: &GibbsState<F>) -> Result<()> {
        let missing = self.missing_values(state);
        let lik = log_likelihood(
            self.kind,
            &state.field,
            &state.hyper,
            self.obs,
            match self.kind {
                ModelKind::Bdsl => Some(&missing),
                ModelKind::Idml => None,
            },
        );
        if !lik.is_finite() {
            return Err(Error::BadInit("likelihood".into()));
        }
        let checks: [(&str, bool); 7] = [
            ("beta", state.field.beta.iter().all(|x| x.is_finite())),
            ("alpha", state.field.alpha.iter().all(|x| x.is_finite())),
            ("gamma", state.field.gamma.iter().all(|x| x.is_finite())),
            ("phi", state.field.phi.iter().all(|x| x.is_finite())),
            ("delta", state.field.delta.iter().all(|x| x.is_finite())),
            ("psi", state.field.psi.iter().all(|x| x.is_finite())),
            ("omega", state.field.omega.iter().all(|x| x.is_finite())),
        ];
        for (name, ok) in checks {
            if !ok {
                return Err(Error::BadInit(name.into()));
            }
        }
        if !state.hyper.in_domain(self.kind, self.priors) {
            return Err(Error::BadInit("hyperparameters".into()));
        }
        Ok(())
    }
}
