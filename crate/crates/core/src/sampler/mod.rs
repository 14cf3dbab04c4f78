//! MCMC engine: multi-chain blocked Gibbs with slice-sampled
//! hyperparameters, deterministic per-chain random streams, convergence
//! diagnostics and columnar CSV persistence of the retained draws.

pub mod diagnostics;
mod gibbs;
pub mod rng;
pub mod slice;

use std::path::Path;

pub use diagnostics::{bulk_ess, split_rhat, DiagnosticsReport, ParamDiagnostic, RHAT_GATE};
pub use slice::slice_sample;

use crate::error::{Error, Result};
use crate::model::{
    parameter_names, Hyperparams, LatentField, ModelDims, ModelKind, Observations, ParamLayout,
    PriorConfig,
};
use crate::num::Real;
use gibbs::GibbsContext;

/// Multi-chain run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainConfig {
    pub n_chains: usize,
    /// Iterations per chain, including warmup.
    pub iterations: usize,
    pub warmup: usize,
    pub thin: usize,
    pub seed: u64,
    /// Scale of the per-chain uniform perturbation of the initial state.
    pub init_jitter: f64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            n_chains: 4,
            iterations: 4000,
            warmup: 2000,
            thin: 1,
            seed: 1234,
            init_jitter: 0.1,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_chains == 0 {
            return Err(Error::Config("n_chains must be >= 1".into()));
        }
        if self.warmup >= self.iterations {
            return Err(Error::Config("warmup must be < iterations".into()));
        }
        if self.thin == 0 {
            return Err(Error::Config("thin must be >= 1".into()));
        }
        Ok(())
    }

    /// Retained draws per chain.
    pub fn retained_per_chain(&self) -> usize {
        (self.iterations - self.warmup).div_ceil(self.thin)
    }
}

/// Retained posterior samples of the latent field, hyperparameters and
/// (for BDSL) the imputed observations, stored row-per-draw.
#[derive(Debug, Clone)]
pub struct Draws<F> {
    pub kind: ModelKind,
    pub dims: ModelDims,
    pub layout: ParamLayout,
    pub names: Vec<String>,
    pub n_chains: usize,
    pub per_chain: usize,
    data: Vec<F>,
}

impl<F: Real> Draws<F> {
    /// Builds a draw container from pre-packed rows (chain-major order,
    /// each row in [`ParamLayout`] order).
    pub fn from_rows(
        kind: ModelKind,
        dims: ModelDims,
        n_missing: usize,
        n_chains: usize,
        per_chain: usize,
        data: Vec<F>,
    ) -> Self {
        let layout = ParamLayout::new(kind, dims, n_missing);
        assert_eq!(data.len(), n_chains * per_chain * layout.len);
        Draws {
            kind,
            dims,
            layout,
            names: parameter_names(kind, dims, n_missing),
            n_chains,
            per_chain,
            data,
        }
    }

    pub fn n_params(&self) -> usize {
        self.layout.len
    }

    /// Total retained draw count L across chains.
    pub fn n_draws(&self) -> usize {
        self.n_chains * self.per_chain
    }

    pub fn row(&self, chain: usize, draw: usize) -> &[F] {
        let r = chain * self.per_chain + draw;
        &self.data[r * self.layout.len..(r + 1) * self.layout.len]
    }

    /// All rows in chain-major order.
    pub fn rows(&self) -> impl Iterator<Item = &[F]> {
        self.data.chunks_exact(self.layout.len)
    }

    /// Trace of one scalar parameter within one chain.
    pub fn chain_trace(&self, chain: usize, param: usize) -> Vec<F> {
        (0..self.per_chain)
            .map(|d| self.row(chain, d)[param])
            .collect()
    }

    /// Pooled trace of one scalar parameter across chains.
    pub fn pooled_trace(&self, param: usize) -> Vec<F> {
        self.rows().map(|r| r[param]).collect()
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Writes the wide-format draws CSV: `chain,draw,<parameter...>`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Invalid(format!("{other:?}")),
        })?;
        let err = |e: csv::Error| Error::Invalid(format!("writing {}: {e}", path.display()));
        let mut header = Vec::with_capacity(2 + self.names.len());
        header.push("chain".to_string());
        header.push("draw".to_string());
        header.extend(self.names.iter().cloned());
        w.write_record(&header).map_err(err)?;
        let mut record = Vec::with_capacity(header.len());
        for chain in 0..self.n_chains {
            for draw in 0..self.per_chain {
                record.clear();
                record.push((chain + 1).to_string());
                record.push((draw + 1).to_string());
                for v in self.row(chain, draw) {
                    record.push(format!("{v}"));
                }
                w.write_record(&record).map_err(err)?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Reads a draws CSV written by [`Draws::write_csv`]. The model kind,
    /// dimensions and missing-cell count must be supplied (they live in
    /// the fit metadata); the header is verified against the expected
    /// parameter names.
    pub fn read_csv(
        path: &Path,
        kind: ModelKind,
        dims: ModelDims,
        n_missing: usize,
    ) -> Result<Self> {
        let layout = ParamLayout::new(kind, dims, n_missing);
        let names = parameter_names(kind, dims, n_missing);
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(file);
        let header = rdr
            .headers()
            .map_err(|e| Error::parse(path, 1, e.to_string()))?;
        let expected = 2 + names.len();
        if header.len() != expected {
            return Err(Error::parse(
                path,
                1,
                format!("expected {expected} columns, found {}", header.len()),
            ));
        }
        for (got, want) in header.iter().skip(2).zip(&names) {
            if got != want {
                return Err(Error::parse(
                    path,
                    1,
                    format!("parameter column mismatch: '{got}' vs '{want}'"),
                ));
            }
        }
        let mut data = Vec::new();
        let mut n_chains = 0usize;
        let mut per_chain = 0usize;
        for (idx, row) in rdr.records().enumerate() {
            let row = row.map_err(|e| Error::parse(path, idx as u64 + 2, e.to_string()))?;
            let chain: usize = row[0]
                .parse()
                .map_err(|_| Error::parse(path, idx as u64 + 2, "bad chain index"))?;
            let draw: usize = row[1]
                .parse()
                .map_err(|_| Error::parse(path, idx as u64 + 2, "bad draw index"))?;
            n_chains = n_chains.max(chain);
            per_chain = per_chain.max(draw);
            for v in row.iter().skip(2) {
                let x: f64 = v
                    .parse()
                    .map_err(|_| Error::parse(path, idx as u64 + 2, "bad draw value"))?;
                data.push(F::of(x));
            }
        }
        if data.len() != n_chains * per_chain * layout.len {
            return Err(Error::parse(
                path,
                0,
                "draws file does not form a complete chain-by-draw grid".to_string(),
            ));
        }
        Ok(Draws {
            kind,
            dims,
            layout,
            names,
            n_chains,
            per_chain,
            data,
        })
    }
}

/// Deterministic initial state for one chain: zero effects, unit scales
/// (sigma_3 at half its truncation bound), zero autocorrelations, then a
/// uniform perturbation of magnitude `init_jitter` keyed by
/// (seed, chain id).
pub fn initialize<F: Real>(
    kind: ModelKind,
    dims: ModelDims,
    priors: &PriorConfig<F>,
    config: &ChainConfig,
    chain: usize,
) -> (LatentField<F>, Hyperparams<F>) {
    let mut field = LatentField::zeros(dims);
    let mut hyper = Hyperparams::unit();
    if kind == ModelKind::Idml {
        if let Some(upper) = priors.sigma3_upper {
            hyper.sigma_src[2] = F::one().min(upper * F::of(0.5));
        }
    }
    let jitter = F::of(config.init_jitter);
    if config.init_jitter > 0.0 {
        let mut rng = rng::stream_rng(config.seed, &[chain as u64, 0]);
        let u = |rng: &mut rand_chacha::ChaCha8Rng| {
            (F::of(2.0) * F::unit_uniform(rng) - F::one()) * jitter
        };
        match kind {
            ModelKind::Bdsl => {
                field.lambda += u(&mut rng);
                for x in &mut field.nu {
                    *x += u(&mut rng);
                }
            }
            ModelKind::Idml => {
                for x in &mut field.lambda_src {
                    *x += u(&mut rng);
                }
            }
        }
        for group in [
            &mut field.beta,
            &mut field.alpha,
            &mut field.gamma,
            &mut field.phi,
            &mut field.delta,
            &mut field.psi,
            &mut field.omega,
        ] {
            for x in group.iter_mut() {
                *x += u(&mut rng);
            }
        }
        let scale_floor = F::of(0.05);
        match kind {
            ModelKind::Bdsl => {
                hyper.sigma = (hyper.sigma + u(&mut rng)).max(scale_floor);
                hyper.sigma_nu = (hyper.sigma_nu + u(&mut rng)).max(scale_floor);
            }
            ModelKind::Idml => {
                for k in 0..3 {
                    hyper.sigma_src[k] = (hyper.sigma_src[k] + u(&mut rng)).max(scale_floor);
                }
                if let Some(upper) = priors.sigma3_upper {
                    hyper.sigma_src[2] = hyper.sigma_src[2].min(upper * F::of(0.999));
                }
            }
        }
        let rho_cap = F::of(0.9);
        for s in [
            &mut hyper.sigma_beta,
            &mut hyper.sigma_alpha,
            &mut hyper.sigma_gamma,
            &mut hyper.sigma_phi,
            &mut hyper.sigma_delta,
            &mut hyper.sigma_psi,
            &mut hyper.sigma_omega,
        ] {
            *s = (*s + u(&mut rng)).max(scale_floor);
        }
        for r in [
            &mut hyper.rho_gamma,
            &mut hyper.rho_phi,
            &mut hyper.rho_delta,
            &mut hyper.rho_omega,
        ] {
            *r = (*r + u(&mut rng)).min(rho_cap).max(-rho_cap);
        }
    }
    (field, hyper)
}

/// Runs the full sampler: per sweep, every latent block is drawn from its
/// exact Gaussian full conditional, hyperparameters are slice-sampled, and
/// (for BDSL) missing observations are re-imputed. Post-warmup states are
/// retained and diagnosed. A failed R-hat gate sets `pass = false` on the
/// report; it is not an error.
pub fn run_chains<F: Real>(
    kind: ModelKind,
    obs: &Observations<F>,
    priors: &PriorConfig<F>,
    config: &ChainConfig,
) -> Result<(Draws<F>, DiagnosticsReport<F>)> {
    run_chains_impl(kind, obs, priors, config, None)
}

/// Same as [`run_chains`] with every hyperparameter held fixed at `hyper`;
/// only the latent field (and BDSL imputations) are sampled. Used by
/// small-instance oracle checks.
pub fn run_chains_fixed_hyper<F: Real>(
    kind: ModelKind,
    obs: &Observations<F>,
    priors: &PriorConfig<F>,
    config: &ChainConfig,
    hyper: &Hyperparams<F>,
) -> Result<(Draws<F>, DiagnosticsReport<F>)> {
    run_chains_impl(kind, obs, priors, config, Some(hyper))
}

fn run_chains_impl<F: Real>(
    kind: ModelKind,
    obs: &Observations<F>,
    priors: &PriorConfig<F>,
    config: &ChainConfig,
    fixed_hyper: Option<&Hyperparams<F>>,
) -> Result<(Draws<F>, DiagnosticsReport<F>)> {
    config.validate()?;
    obs.dims().validate()?;
    let dims = obs.dims();
    let n_missing = match kind {
        ModelKind::Bdsl => obs.n_missing(),
        ModelKind::Idml => 0,
    };
    let layout = ParamLayout::new(kind, dims, n_missing);
    let names = parameter_names(kind, dims, n_missing);
    let per_chain = config.retained_per_chain();

    let run_one = |chain: usize| -> Result<Vec<F>> {
        let ctx = GibbsContext::new(kind, obs, priors, fixed_hyper.is_some());
        let (field, mut hyper) = initialize(kind, dims, priors, config, chain);
        if let Some(fixed) = fixed_hyper {
            hyper = fixed.clone();
        }
        let mut state = ctx.init_state(field, hyper);
        ctx.check_init(&state)?;
        let mut rng = rng::stream_rng(config.seed, &[chain as u64, 1]);
        let mut out: Vec<F> = Vec::with_capacity(per_chain * layout.len);
        let mut row = Vec::with_capacity(layout.len);
        for sweep in 0..config.iterations {
            ctx.sweep(&mut state, &mut rng);
            if sweep >= config.warmup && (sweep - config.warmup).is_multiple_of(config.thin) {
                let missing = ctx.missing_values(&state);
                layout.pack(&state.field, &state.hyper, &missing, &mut row);
                out.extend_from_slice(&row);
            }
        }
        Ok(out)
    };

    let chain_outputs: Vec<Result<Vec<F>>> = if config.n_chains == 1 {
        vec![run_one(0)]
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..config.n_chains)
                .map(|chain| scope.spawn(move || run_one(chain)))
                .collect();
            handles
                .into_iter()
                .map(|h| {
                    h.join()
                        .unwrap_or_else(|_| Err(Error::Invalid("chain thread panicked".into())))
                })
                .collect()
        })
    };

    let mut data = Vec::with_capacity(config.n_chains * per_chain * layout.len);
    for chunk in chain_outputs {
        data.extend(chunk?);
    }
    let draws = Draws {
        kind,
        dims,
        layout,
        names,
        n_chains: config.n_chains,
        per_chain,
        data,
    };
    let report = diagnose(&draws);
    Ok((draws, report))
}

/// Split R-hat and bulk ESS for every stored scalar parameter.
pub fn diagnose<F: Real>(draws: &Draws<F>) -> DiagnosticsReport<F> {
    let mut params = Vec::with_capacity(draws.n_params());
    for p in 0..draws.n_params() {
        let chains: Vec<Vec<F>> = (0..draws.n_chains)
            .map(|c| draws.chain_trace(c, p))
            .collect();
        params.push(ParamDiagnostic {
            name: draws.names[p].clone(),
            rhat: split_rhat(&chains),
            ess: bulk_ess(&chains),
        });
    }
    DiagnosticsReport::from_params(params)
}

/// Writes the `parameter,rhat,ess` diagnostics CSV; undefined R-hat values
/// are written as `NA`.
pub fn write_diagnostics_csv<F: Real>(report: &DiagnosticsReport<F>, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Invalid(format!("{other:?}")),
    })?;
    let err = |e: csv::Error| Error::Invalid(format!("writing {}: {e}", path.display()));
    w.write_record(["parameter", "rhat", "ess"]).map_err(err)?;
    for p in &report.params {
        let rhat = p
            .rhat
            .map(|r| format!("{r}"))
            .unwrap_or_else(|| "NA".into());
        w.write_record([p.name.as_str(), rhat.as_str(), &format!("{}", p.ess)])
            .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
