//! Model definitions shared by the sampler and the posterior summaries:
//! dimensions, observation container, latent field, hyperparameters, prior
//! configuration, the shared mean and the exact joint log-posterior
//! densities of the BDSL and IDML models.
//!
//! BDSL treats the three sources as one balanced Gaussian likelihood with a
//! common residual variance and source-bias random effects; unobserved
//! cells are imputed. IDML gives each source its own likelihood with a
//! fixed intercept and variance, defined only on observed time indices.

pub mod ar1;

use std::collections::BTreeMap;

pub use ar1::{
    ar1_ln_density, ar1_quad_form, ar1_shift_stats, ar1_structure, interaction_precision, BlockAr1,
    InteractionKind, SymTridiag,
};

use crate::data::SourceKind;
use crate::error::{Error, Result};
use crate::num::{ln_normal_pdf, Real};

/// Which of the two models is being fitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Bdsl,
    Idml,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Bdsl => "bdsl",
            ModelKind::Idml => "idml",
        }
    }

    pub fn parse(s: &str) -> Option<ModelKind> {
        match s.to_ascii_lowercase().as_str() {
            "bdsl" => Some(ModelKind::Bdsl),
            "idml" => Some(ModelKind::Idml),
            _ => None,
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Index ranges of the (country, vaccine, time) grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub countries: usize,
    pub vaccines: usize,
    pub times: usize,
}

impl ModelDims {
    pub fn cells(&self) -> usize {
        self.countries * self.vaccines * self.times
    }

    #[inline]
    pub fn cell(&self, i: usize, j: usize, t: usize) -> usize {
        (i * self.vaccines + j) * self.times + t
    }

    pub fn validate(&self) -> Result<()> {
        if self.countries == 0 || self.vaccines == 0 || self.times == 0 {
            return Err(Error::Domain("model dimensions must all be >= 1".into()));
        }
        Ok(())
    }
}

/// Dense container of logit-scale observations: per source, one optional
/// value per (country, vaccine, time) cell. The per-(i, j) observed time
/// index sets (and their sizes T1, T2, T3, possibly zero) are derived
/// views of the presence mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Observations<F> {
    dims: ModelDims,
    y: Vec<F>,
    present: Vec<bool>,
}

impl<F: Real> Observations<F> {
    pub fn new(dims: ModelDims) -> Self {
        let n = 3 * dims.cells();
        Observations {
            dims,
            y: vec![F::zero(); n],
            present: vec![false; n],
        }
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    #[inline]
    fn slot(&self, k: usize, cell: usize) -> usize {
        k * self.dims.cells() + cell
    }

    pub fn set(&mut self, source: SourceKind, i: usize, j: usize, t: usize, y: F) {
        let slot = self.slot(source.index(), self.dims.cell(i, j, t));
        self.y[slot] = y;
        self.present[slot] = true;
    }

    #[inline]
    pub fn is_present(&self, k: usize, cell: usize) -> bool {
        self.present[self.slot(k, cell)]
    }

    #[inline]
    pub fn value(&self, k: usize, cell: usize) -> F {
        self.y[self.slot(k, cell)]
    }

    pub fn get(&self, source: SourceKind, i: usize, j: usize, t: usize) -> Option<F> {
        let slot = self.slot(source.index(), self.dims.cell(i, j, t));
        self.present[slot].then(|| self.y[slot])
    }

    /// Observed time indices for source `k` at (i, j); irregular and
    /// possibly empty.
    pub fn observed_times(&self, source: SourceKind, i: usize, j: usize) -> Vec<usize> {
        (0..self.dims.times)
            .filter(|&t| self.is_present(source.index(), self.dims.cell(i, j, t)))
            .collect()
    }

    pub fn n_observed(&self, source: SourceKind) -> usize {
        let k = source.index();
        let cells = self.dims.cells();
        self.present[k * cells..(k + 1) * cells]
            .iter()
            .filter(|&&p| p)
            .count()
    }

    pub fn n_observed_total(&self) -> usize {
        self.present.iter().filter(|&&p| p).count()
    }

    pub fn n_missing(&self) -> usize {
        3 * self.dims.cells() - self.n_observed_total()
    }

    /// Missing (source index, cell) pairs in the fixed enumeration order
    /// (source-major, then cell). BDSL imputed values follow this order.
    pub fn missing_cells(&self) -> Vec<(usize, usize)> {
        let cells = self.dims.cells();
        let mut out = Vec::with_capacity(self.n_missing());
        for k in 0..3 {
            for cell in 0..cells {
                if !self.present[k * cells + cell] {
                    out.push((k, cell));
                }
            }
        }
        out
    }

    /// Copy restricted to times `t < t_max`, for rolling-origin fits.
    pub fn restrict_times(&self, t_max: usize) -> Observations<F> {
        let dims = ModelDims {
            times: t_max,
            ..self.dims
        };
        let mut out = Observations::new(dims);
        for k in 0..3 {
            for i in 0..dims.countries {
                for j in 0..dims.vaccines {
                    for t in 0..t_max {
                        let slot = self.slot(k, self.dims.cell(i, j, t));
                        if self.present[slot] {
                            out.set(SourceKind::from_index(k), i, j, t, self.y[slot]);
                        }
                    }
                }
            }
        }
        out
    }
}

/// The full set of latent effects. `lambda` and `nu` are BDSL-only;
/// `lambda_src` is IDML-only; the inactive fields stay at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentField<F> {
    /// Global intercept (BDSL).
    pub lambda: F,
    /// Source intercepts (IDML), indexed by `SourceKind::index`.
    pub lambda_src: [F; 3],
    /// Source bias random effects (BDSL).
    pub nu: [F; 3],
    /// Country effects, length C.
    pub beta: Vec<F>,
    /// Vaccine effects, length V.
    pub alpha: Vec<F>,
    /// Temporal effect, length T.
    pub gamma: Vec<F>,
    /// Country-time interaction, row-major C x T.
    pub phi: Vec<F>,
    /// Vaccine-time interaction, row-major V x T.
    pub delta: Vec<F>,
    /// Country-vaccine interaction, row-major C x V.
    pub psi: Vec<F>,
    /// Country-vaccine-time interaction, C x V x T in cell order.
    pub omega: Vec<F>,
}

impl<F: Real> LatentField<F> {
    pub fn zeros(dims: ModelDims) -> Self {
        LatentField {
            lambda: F::zero(),
            lambda_src: [F::zero(); 3],
            nu: [F::zero(); 3],
            beta: vec![F::zero(); dims.countries],
            alpha: vec![F::zero(); dims.vaccines],
            gamma: vec![F::zero(); dims.times],
            phi: vec![F::zero(); dims.countries * dims.times],
            delta: vec![F::zero(); dims.vaccines * dims.times],
            psi: vec![F::zero(); dims.countries * dims.vaccines],
            omega: vec![F::zero(); dims.cells()],
        }
    }

    /// The shared mean at one cell.
    #[inline]
    pub fn mu_at(&self, kind: ModelKind, dims: ModelDims, i: usize, j: usize, t: usize) -> F {
        let base = match kind {
            ModelKind::Bdsl => self.lambda,
            ModelKind::Idml => F::zero(),
        };
        base + self.beta[i]
            + self.alpha[j]
            + self.gamma[t]
            + self.phi[i * dims.times + t]
            + self.delta[j * dims.times + t]
            + self.psi[i * dims.vaccines + j]
            + self.omega[dims.cell(i, j, t)]
    }
}

/// Computes the shared mean over the whole grid into `out` (length
/// `dims.cells()`). BDSL includes the global intercept; neither model's
/// source-bias terms enter.
pub fn shared_mean_into<F: Real>(
    kind: ModelKind,
    dims: ModelDims,
    field: &LatentField<F>,
    out: &mut [F],
) {
    debug_assert_eq!(out.len(), dims.cells());
    for i in 0..dims.countries {
        for j in 0..dims.vaccines {
            for t in 0..dims.times {
                out[dims.cell(i, j, t)] = field.mu_at(kind, dims, i, j, t);
            }
        }
    }
}

pub fn shared_mean<F: Real>(kind: ModelKind, dims: ModelDims, field: &LatentField<F>) -> Vec<F> {
    let mut out = vec![F::zero(); dims.cells()];
    shared_mean_into(kind, dims, field, &mut out);
    out
}

/// Variance and autocorrelation parameters. `sigma`/`sigma_nu` are
/// BDSL-only and `sigma_src` is IDML-only; the inactive fields are ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams<F> {
    /// BDSL residual scale.
    pub sigma: F,
    /// IDML per-source residual scales (sigma_1, sigma_2, sigma_3).
    pub sigma_src: [F; 3],
    /// BDSL source-bias scale.
    pub sigma_nu: F,
    pub sigma_beta: F,
    pub sigma_alpha: F,
    pub rho_gamma: F,
    pub sigma_gamma: F,
    pub rho_phi: F,
    pub sigma_phi: F,
    pub rho_delta: F,
    pub sigma_delta: F,
    pub sigma_psi: F,
    pub rho_omega: F,
    pub sigma_omega: F,
}

impl<F: Real> Hyperparams<F> {
    pub fn unit() -> Self {
        Hyperparams {
            sigma: F::one(),
            sigma_src: [F::one(); 3],
            sigma_nu: F::one(),
            sigma_beta: F::one(),
            sigma_alpha: F::one(),
            rho_gamma: F::zero(),
            sigma_gamma: F::one(),
            rho_phi: F::zero(),
            sigma_phi: F::one(),
            rho_delta: F::zero(),
            sigma_delta: F::one(),
            sigma_psi: F::one(),
            rho_omega: F::zero(),
            sigma_omega: F::one(),
        }
    }

    /// All scales positive, all autocorrelations strictly inside (-1, 1),
    /// and sigma_3 under its truncation bound when one is active.
    pub fn in_domain(&self, kind: ModelKind, priors: &PriorConfig<F>) -> bool {
        let pos = |x: F| x.is_finite() && x > F::zero();
        let corr = |r: F| r.is_finite() && r.abs() < F::one();
        let shared = pos(self.sigma_beta)
            && pos(self.sigma_alpha)
            && pos(self.sigma_gamma)
            && pos(self.sigma_phi)
            && pos(self.sigma_delta)
            && pos(self.sigma_psi)
            && pos(self.sigma_omega)
            && corr(self.rho_gamma)
            && corr(self.rho_phi)
            && corr(self.rho_delta)
            && corr(self.rho_omega);
        let likelihood = match kind {
            ModelKind::Bdsl => pos(self.sigma) && pos(self.sigma_nu),
            ModelKind::Idml => {
                let bound = match priors.sigma3_upper {
                    Some(u) => self.sigma_src[2] <= u,
                    None => true,
                };
                self.sigma_src.iter().all(|&s| pos(s)) && bound
            }
        };
        shared && likelihood
    }
}

/// Prior configuration. Unbounded random-effect scales get flat improper
/// priors and every autocorrelation gets a uniform(-1, 1) prior; those have
/// no tunable parameters and do not appear here.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorConfig<F> {
    /// Variance of the normal prior on the BDSL global intercept.
    pub lambda_var: F,
    /// Variances (v_1, v_2, v_3) of the normal priors on the IDML source
    /// intercepts.
    pub v: [F; 3],
    /// Half-Cauchy scale on the BDSL residual scale sigma.
    pub sigma_scale: F,
    /// Half-Cauchy scale on the BDSL source-bias scale sigma_nu.
    pub sigma_nu_scale: F,
    /// Half-Cauchy scales on the IDML source scales (sigma_1..3).
    pub sigma_src_scale: [F; 3],
    /// Optional truncation bound on sigma_3.
    pub sigma3_upper: Option<F>,
}

impl<F: Real> Default for PriorConfig<F> {
    fn default() -> Self {
        PriorConfig {
            lambda_var: F::one(),
            v: [F::of(0.25); 3],
            sigma_scale: F::of(2.0),
            sigma_nu_scale: F::of(2.0),
            sigma_src_scale: [F::of(2.0), F::of(2.0), F::of(0.2)],
            sigma3_upper: Some(F::of(0.4)),
        }
    }
}

impl<F: Real> PriorConfig<F> {
    /// The configuration used in the simulation experiments: sigma_3 gets
    /// the same untruncated Half-Cauchy(0, 2) prior as sigma_1 and sigma_2.
    pub fn simulation() -> Self {
        PriorConfig {
            sigma_src_scale: [F::of(2.0); 3],
            sigma3_upper: None,
            ..PriorConfig::default()
        }
    }

    /// Flat `key=value` rendering; see [`PriorConfig::from_kv`].
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("prior.lambda.var={}\n", self.lambda_var));
        out.push_str(&format!("prior.v1={}\n", self.v[0]));
        out.push_str(&format!("prior.v2={}\n", self.v[1]));
        out.push_str(&format!("prior.v3={}\n", self.v[2]));
        out.push_str(&format!("prior.sigma.scale={}\n", self.sigma_scale));
        out.push_str(&format!("prior.sigma_nu.scale={}\n", self.sigma_nu_scale));
        out.push_str(&format!("prior.sigma1.scale={}\n", self.sigma_src_scale[0]));
        out.push_str(&format!("prior.sigma2.scale={}\n", self.sigma_src_scale[1]));
        out.push_str(&format!("prior.sigma3.scale={}\n", self.sigma_src_scale[2]));
        match self.sigma3_upper {
            Some(u) => out.push_str(&format!("prior.sigma3.upper={u}\n")),
            None => out.push_str("prior.sigma3.upper=none\n"),
        }
        out
    }

    /// Parses the flat `key=value` format, starting from defaults. Unknown
    /// keys are rejected; blank lines and `#` comments are ignored.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = PriorConfig::default();
        cfg.apply_kv(text)?;
        Ok(cfg)
    }

    /// Applies `key=value` overrides onto `self`.
    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", lineno + 1)))?;
            let key = key.trim();
            let value = value.trim();
            let parse = |v: &str| -> Result<F> {
                v.parse::<f64>()
                    .map(F::of)
                    .map_err(|_| Error::Config(format!("bad numeric value '{v}' for {key}")))
            };
            match key {
                "prior.lambda.var" => self.lambda_var = parse(value)?,
                "prior.v1" => self.v[0] = parse(value)?,
                "prior.v2" => self.v[1] = parse(value)?,
                "prior.v3" => self.v[2] = parse(value)?,
                "prior.sigma.scale" => self.sigma_scale = parse(value)?,
                "prior.sigma_nu.scale" => self.sigma_nu_scale = parse(value)?,
                "prior.sigma1.scale" => self.sigma_src_scale[0] = parse(value)?,
                "prior.sigma2.scale" => self.sigma_src_scale[1] = parse(value)?,
                "prior.sigma3.scale" => self.sigma_src_scale[2] = parse(value)?,
                "prior.sigma3.upper" => {
                    self.sigma3_upper = if value.eq_ignore_ascii_case("none") {
                        None
                    } else {
                        Some(parse(value)?)
                    };
                }
                other => return Err(Error::Config(format!("unknown prior key '{other}'"))),
            }
        }
        Ok(())
    }
}

/// Log density of a Half-Cauchy(0, scale) distribution at `x > 0`.
pub fn ln_half_cauchy<F: Real>(x: F, scale: F) -> F {
    if !(x > F::zero()) {
        return F::neg_infinity();
    }
    let z = x / scale;
    F::of(2.0 / std::f64::consts::PI).ln() - scale.ln() - (F::one() + z * z).ln()
}

/// Log density of a Half-Cauchy(0, scale) truncated to `(0, upper]`.
pub fn ln_trunc_half_cauchy<F: Real>(x: F, scale: F, upper: F) -> F {
    if !(x > F::zero() && x <= upper) {
        return F::neg_infinity();
    }
    let norm = (F::of(2.0 / std::f64::consts::PI) * (upper / scale).atan()).ln();
    ln_half_cauchy(x, scale) - norm
}

/// Gaussian likelihood of the observed (and, for BDSL, imputed) data.
///
/// For BDSL `missing_y` must supply one value per unobserved cell in
/// [`Observations::missing_cells`] order.
pub fn log_likelihood<F: Real>(
    kind: ModelKind,
    field: &LatentField<F>,
    hyper: &Hyperparams<F>,
    obs: &Observations<F>,
    missing_y: Option<&[F]>,
) -> F {
    let dims = obs.dims();
    let mu = shared_mean(kind, dims, field);
    let mut lp = F::zero();
    match kind {
        ModelKind::Bdsl => {
            let missing = missing_y.expect("BDSL likelihood requires imputed values");
            assert_eq!(
                missing.len(),
                obs.n_missing(),
                "missing_y must cover every unobserved cell"
            );
            let mut m = 0;
            for k in 0..3 {
                for cell in 0..dims.cells() {
                    let y = if obs.is_present(k, cell) {
                        obs.value(k, cell)
                    } else {
                        let y = missing[m];
                        m += 1;
                        y
                    };
                    lp += ln_normal_pdf(y, mu[cell] + field.nu[k], hyper.sigma);
                }
            }
        }
        ModelKind::Idml => {
            for k in 0..3 {
                for cell in 0..dims.cells() {
                    if obs.is_present(k, cell) {
                        lp += ln_normal_pdf(
                            obs.value(k, cell),
                            field.lambda_src[k] + mu[cell],
                            hyper.sigma_src[k],
                        );
                    }
                }
            }
        }
    }
    lp
}

/// Log density of the latent field given the hyperparameters, including
/// the intercept priors.
pub fn log_latent_prior<F: Real>(
    kind: ModelKind,
    field: &LatentField<F>,
    hyper: &Hyperparams<F>,
    priors: &PriorConfig<F>,
    dims: ModelDims,
) -> F {
    let mut lp = F::zero();
    for &b in &field.beta {
        lp += ln_normal_pdf(b, F::zero(), hyper.sigma_beta);
    }
    for &a in &field.alpha {
        lp += ln_normal_pdf(a, F::zero(), hyper.sigma_alpha);
    }
    lp += ar1_ln_density(&field.gamma, hyper.rho_gamma, hyper.sigma_gamma);
    for i in 0..dims.countries {
        lp += ar1_ln_density(
            &field.phi[i * dims.times..(i + 1) * dims.times],
            hyper.rho_phi,
            hyper.sigma_phi,
        );
    }
    for j in 0..dims.vaccines {
        lp += ar1_ln_density(
            &field.delta[j * dims.times..(j + 1) * dims.times],
            hyper.rho_delta,
            hyper.sigma_delta,
        );
    }
    for &p in &field.psi {
        lp += ln_normal_pdf(p, F::zero(), hyper.sigma_psi);
    }
    for b in 0..dims.countries * dims.vaccines {
        lp += ar1_ln_density(
            &field.omega[b * dims.times..(b + 1) * dims.times],
            hyper.rho_omega,
            hyper.sigma_omega,
        );
    }
    match kind {
        ModelKind::Bdsl => {
            lp += ln_normal_pdf(field.lambda, F::zero(), priors.lambda_var.sqrt());
            for &n in &field.nu {
                lp += ln_normal_pdf(n, F::zero(), hyper.sigma_nu);
            }
        }
        ModelKind::Idml => {
            for k in 0..3 {
                lp += ln_normal_pdf(field.lambda_src[k], F::zero(), priors.v[k].sqrt());
            }
        }
    }
    lp
}

/// Log prior of the hyperparameters: Half-Cauchy terms on the likelihood
/// scales, uniform(-1, 1) on autocorrelations, flat on the remaining
/// scales. Out-of-domain values yield negative infinity.
pub fn log_hyper_prior<F: Real>(
    kind: ModelKind,
    hyper: &Hyperparams<F>,
    priors: &PriorConfig<F>,
) -> F {
    if !hyper.in_domain(kind, priors) {
        return F::neg_infinity();
    }
    let mut lp = F::of(4.0) * F::of(0.5).ln(); // four uniform(-1,1) terms
    match kind {
        ModelKind::Bdsl => {
            lp += ln_half_cauchy(hyper.sigma, priors.sigma_scale);
            lp += ln_half_cauchy(hyper.sigma_nu, priors.sigma_nu_scale);
        }
        ModelKind::Idml => {
            lp += ln_half_cauchy(hyper.sigma_src[0], priors.sigma_src_scale[0]);
            lp += ln_half_cauchy(hyper.sigma_src[1], priors.sigma_src_scale[1]);
            lp += match priors.sigma3_upper {
                Some(u) => ln_trunc_half_cauchy(hyper.sigma_src[2], priors.sigma_src_scale[2], u),
                None => ln_half_cauchy(hyper.sigma_src[2], priors.sigma_src_scale[2]),
            };
        }
    }
    lp
}

/// Unnormalized joint log posterior of either model. Out-of-domain
/// hyperparameters return negative infinity (rejection semantics), never
/// an error.
pub fn log_posterior<F: Real>(
    kind: ModelKind,
    field: &LatentField<F>,
    hyper: &Hyperparams<F>,
    priors: &PriorConfig<F>,
    obs: &Observations<F>,
    missing_y: Option<&[F]>,
) -> F {
    if !hyper.in_domain(kind, priors) {
        return F::neg_infinity();
    }
    log_likelihood(kind, field, hyper, obs, missing_y)
        + log_latent_prior(kind, field, hyper, priors, obs.dims())
        + log_hyper_prior(kind, hyper, priors)
}

/// Labels for the scalar parameters of a model instance, in the order used
/// by the draw storage.
pub fn parameter_names(kind: ModelKind, dims: ModelDims, n_missing: usize) -> Vec<String> {
    let mut names = Vec::new();
    match kind {
        ModelKind::Bdsl => {
            names.push("lambda".into());
            for k in ["a", "o", "s"] {
                names.push(format!("nu_{k}"));
            }
        }
        ModelKind::Idml => {
            for k in ["a", "o", "s"] {
                names.push(format!("lambda_{k}"));
            }
        }
    }
    for i in 1..=dims.countries {
        names.push(format!("beta[{i}]"));
    }
    for j in 1..=dims.vaccines {
        names.push(format!("alpha[{j}]"));
    }
    for t in 1..=dims.times {
        names.push(format!("gamma[{t}]"));
    }
    for i in 1..=dims.countries {
        for t in 1..=dims.times {
            names.push(format!("phi[{i},{t}]"));
        }
    }
    for j in 1..=dims.vaccines {
        for t in 1..=dims.times {
            names.push(format!("delta[{j},{t}]"));
        }
    }
    for i in 1..=dims.countries {
        for j in 1..=dims.vaccines {
            names.push(format!("psi[{i},{j}]"));
        }
    }
    for i in 1..=dims.countries {
        for j in 1..=dims.vaccines {
            for t in 1..=dims.times {
                names.push(format!("omega[{i},{j},{t}]"));
            }
        }
    }
    match kind {
        ModelKind::Bdsl => {
            names.push("sigma".into());
            names.push("sigma_nu".into());
        }
        ModelKind::Idml => {
            names.push("sigma1".into());
            names.push("sigma2".into());
            names.push("sigma3".into());
        }
    }
    for n in [
        "sigma_beta",
        "sigma_alpha",
        "rho_gamma",
        "sigma_gamma",
        "rho_phi",
        "sigma_phi",
        "rho_delta",
        "sigma_delta",
        "sigma_psi",
        "rho_omega",
        "sigma_omega",
    ] {
        names.push(n.into());
    }
    for m in 1..=n_missing {
        names.push(format!("ymis[{m}]"));
    }
    names
}

/// Offsets of the parameter groups inside a flattened draw row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamLayout {
    pub kind: ModelKind,
    pub dims: ModelDims,
    pub n_missing: usize,
    pub intercepts: usize,
    pub beta: usize,
    pub alpha: usize,
    pub gamma: usize,
    pub phi: usize,
    pub delta: usize,
    pub psi: usize,
    pub omega: usize,
    pub hyper: usize,
    pub missing: usize,
    pub len: usize,
}

impl ParamLayout {
    pub fn new(kind: ModelKind, dims: ModelDims, n_missing: usize) -> Self {
        let intercepts = 0;
        let n_intercepts = match kind {
            ModelKind::Bdsl => 4, // lambda + nu[3]
            ModelKind::Idml => 3, // lambda_src[3]
        };
        let beta = intercepts + n_intercepts;
        let alpha = beta + dims.countries;
        let gamma = alpha + dims.vaccines;
        let phi = gamma + dims.times;
        let delta = phi + dims.countries * dims.times;
        let psi = delta + dims.vaccines * dims.times;
        let omega = psi + dims.countries * dims.vaccines;
        let hyper = omega + dims.cells();
        let n_hyper = match kind {
            ModelKind::Bdsl => 2 + 11,
            ModelKind::Idml => 3 + 11,
        };
        let missing = hyper + n_hyper;
        let len = missing + n_missing;
        ParamLayout {
            kind,
            dims,
            n_missing,
            intercepts,
            beta,
            alpha,
            gamma,
            phi,
            delta,
            psi,
            omega,
            hyper,
            missing,
            len,
        }
    }

    /// Serializes state into a flat row. The row layout matches
    /// [`parameter_names`].
    pub fn pack<F: Real>(
        &self,
        field: &LatentField<F>,
        hyper: &Hyperparams<F>,
        missing_y: &[F],
        out: &mut Vec<F>,
    ) {
        out.clear();
        out.reserve(self.len);
        match self.kind {
            ModelKind::Bdsl => {
                out.push(field.lambda);
                out.extend_from_slice(&field.nu);
            }
            ModelKind::Idml => out.extend_from_slice(&field.lambda_src),
        }
        out.extend_from_slice(&field.beta);
        out.extend_from_slice(&field.alpha);
        out.extend_from_slice(&field.gamma);
        out.extend_from_slice(&field.phi);
        out.extend_from_slice(&field.delta);
        out.extend_from_slice(&field.psi);
        out.extend_from_slice(&field.omega);
        match self.kind {
            ModelKind::Bdsl => {
                out.push(hyper.sigma);
                out.push(hyper.sigma_nu);
            }
            ModelKind::Idml => out.extend_from_slice(&hyper.sigma_src),
        }
        out.extend_from_slice(&[
            hyper.sigma_beta,
            hyper.sigma_alpha,
            hyper.rho_gamma,
            hyper.sigma_gamma,
            hyper.rho_phi,
            hyper.sigma_phi,
            hyper.rho_delta,
            hyper.sigma_delta,
            hyper.sigma_psi,
            hyper.rho_omega,
            hyper.sigma_omega,
        ]);
        out.extend_from_slice(missing_y);
        debug_assert_eq!(out.len(), self.len);
    }

    /// Shared mean at one cell, read directly from a flat row.
    #[inline]
    pub fn mu_at<F: Real>(&self, row: &[F], i: usize, j: usize, t: usize) -> F {
        let d = self.dims;
        let base = match self.kind {
            ModelKind::Bdsl => row[0],
            ModelKind::Idml => F::zero(),
        };
        base + row[self.beta + i]
            + row[self.alpha + j]
            + row[self.gamma + t]
            + row[self.phi + i * d.times + t]
            + row[self.delta + j * d.times + t]
            + row[self.psi + i * d.vaccines + j]
            + row[self.omega + d.cell(i, j, t)]
    }

    /// Reconstructs the latent field from a flat row.
    pub fn unpack_field<F: Real>(&self, row: &[F]) -> LatentField<F> {
        let dims = self.dims;
        let mut field = LatentField::zeros(dims);
        match self.kind {
            ModelKind::Bdsl => {
                field.lambda = row[0];
                field.nu.copy_from_slice(&row[1..4]);
            }
            ModelKind::Idml => field.lambda_src.copy_from_slice(&row[0..3]),
        }
        field.beta.copy_from_slice(&row[self.beta..self.alpha]);
        field.alpha.copy_from_slice(&row[self.alpha..self.gamma]);
        field.gamma.copy_from_slice(&row[self.gamma..self.phi]);
        field.phi.copy_from_slice(&row[self.phi..self.delta]);
        field.delta.copy_from_slice(&row[self.delta..self.psi]);
        field.psi.copy_from_slice(&row[self.psi..self.omega]);
        field.omega.copy_from_slice(&row[self.omega..self.hyper]);
        field
    }

    /// Reconstructs the hyperparameters from a flat row.
    pub fn unpack_hyper<F: Real>(&self, row: &[F]) -> Hyperparams<F> {
        let mut hyper = Hyperparams::unit();
        let mut h = self.hyper;
        match self.kind {
            ModelKind::Bdsl => {
                hyper.sigma = row[h];
                hyper.sigma_nu = row[h + 1];
                h += 2;
            }
            ModelKind::Idml => {
                hyper.sigma_src.copy_from_slice(&row[h..h + 3]);
                h += 3;
            }
        }
        hyper.sigma_beta = row[h];
        hyper.sigma_alpha = row[h + 1];
        hyper.rho_gamma = row[h + 2];
        hyper.sigma_gamma = row[h + 3];
        hyper.rho_phi = row[h + 4];
        hyper.sigma_phi = row[h + 5];
        hyper.rho_delta = row[h + 6];
        hyper.sigma_delta = row[h + 7];
        hyper.sigma_psi = row[h + 8];
        hyper.rho_omega = row[h + 9];
        hyper.sigma_omega = row[h + 10];
        hyper
    }
}

/// The per-source cell lookup used when rebuilding model views from stored
/// draws is keyed by these labels. Synthetic data and real fits share them.
pub type RegionMap = BTreeMap<String, String>;
