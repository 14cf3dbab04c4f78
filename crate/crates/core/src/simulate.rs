//! Synthetic multi-source coverage data generation and the head-to-head
//! model comparison experiment producing validation-metric tables.
//!
//! Data are generated on the logit scale from the model's own random
//! effects at fixed true hyperparameters; each model's observations add
//! its source intercepts/biases and source noise on top of a latent field
//! and missingness mask shared across the two models, so both fits chase
//! the same truth.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;

use crate::data::SourceKind;
use crate::error::{Error, Result};
use crate::model::{
    shared_mean, Hyperparams, LatentField, ModelDims, ModelKind, Observations, PriorConfig,
};
use crate::num::{inv_logit, Real};
use crate::posterior::{
    coverage_estimates, predict_forward, validation_metrics, EstimateTable, ValidationMetrics,
};
use crate::preprocess::IndexMaps;
use crate::sampler::{rng::stream_rng, run_chains, ChainConfig};

/// Default experiment dimensions for quick runs.
pub fn desk_dims() -> ModelDims {
    ModelDims {
        countries: 8,
        vaccines: 3,
        times: 12,
    }
}

/// Full-scale experiment dimensions.
pub fn full_scale_dims() -> ModelDims {
    ModelDims {
        countries: 20,
        vaccines: 5,
        times: 20,
    }
}

/// Chain settings for desk-scale runs.
pub fn desk_chain_config(seed: u64) -> ChainConfig {
    ChainConfig {
        n_chains: 4,
        iterations: 1000,
        warmup: 500,
        thin: 1,
        seed,
        init_jitter: 0.1,
    }
}

/// A simulation scenario: true hyperparameters, true intercepts, source
/// missingness rates and late-introduction start options.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec<F> {
    pub name: String,
    /// True generating hyperparameters (both models' fields populated).
    pub hyper: Hyperparams<F>,
    /// True global intercept of the balanced model.
    pub lambda_bdsl: F,
    /// True source intercepts of the multiple-likelihood model.
    pub lambda_src: [F; 3],
    pub missing_admin: f64,
    pub missing_official: f64,
    pub missing_survey: f64,
    /// How many trailing vaccines start late.
    pub late_vaccines: usize,
    /// 1-based start times for late vaccines; `None` derives
    /// {ceil(T/2), ceil(3T/4)} (= {10, 15} at T = 20).
    pub late_starts: Option<Vec<usize>>,
}

impl<F: Real> ScenarioSpec<F> {
    /// The three standard scenarios. They share the random-effect truth
    /// (sigma_beta^2 = 1, sigma_alpha^2 = 1, rho_gamma = 0.5,
    /// sigma_gamma^2 = 1, rho_phi = 0.3, sigma_phi^2 = 0.25,
    /// rho_delta = 0.4, sigma_delta^2 = 0.64, sigma_psi^2 = 1,
    /// rho_omega = 0.7, sigma_omega^2 = 0.64) and differ in the source
    /// variances:
    /// 1. sigma_1^2 = 1, sigma_2^2 = 0.64, sigma_3^2 = 0.16, sigma_nu^2 = 0.6;
    /// 2. sigma_1^2 = 9, sigma_2^2 = 4, sigma_3^2 = 0.25, sigma_nu^2 = 4;
    /// 3. sigma_1^2 = 1, sigma_2^2 = 1, sigma_3^2 = 1, sigma_nu^2 = 0.1.
    pub fn standard(number: u8) -> Result<Self> {
        let (sigma_src, sigma_nu): ([f64; 3], f64) = match number {
            1 => ([1.0, 0.64, 0.16], 0.6),
            2 => ([9.0, 4.0, 0.25], 4.0),
            3 => ([1.0, 1.0, 1.0], 0.1),
            other => {
                return Err(Error::Config(format!(
                    "unknown scenario {other}; expected 1, 2 or 3"
                )))
            }
        };
        let hyper = Hyperparams {
            sigma: F::one(),
            sigma_src: [
                F::of(sigma_src[0].sqrt()),
                F::of(sigma_src[1].sqrt()),
                F::of(sigma_src[2].sqrt()),
            ],
            sigma_nu: F::of(sigma_nu.sqrt()),
            sigma_beta: F::one(),
            sigma_alpha: F::one(),
            rho_gamma: F::of(0.5),
            sigma_gamma: F::one(),
            rho_phi: F::of(0.3),
            sigma_phi: F::of(0.25f64.sqrt()),
            rho_delta: F::of(0.4),
            sigma_delta: F::of(0.64f64.sqrt()),
            sigma_psi: F::one(),
            rho_omega: F::of(0.7),
            sigma_omega: F::of(0.64f64.sqrt()),
        };
        Ok(ScenarioSpec {
            name: format!("scenario {number}"),
            hyper,
            lambda_bdsl: F::of(0.05),
            lambda_src: [F::of(0.07), F::of(0.02), F::of(0.05)],
            missing_admin: 0.15,
            missing_official: 0.15,
            missing_survey: 0.20,
            late_vaccines: 2,
            late_starts: None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        for rate in [
            self.missing_admin,
            self.missing_official,
            self.missing_survey,
        ] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::Config(format!(
                    "missingness rate {rate} outside [0, 1]"
                )));
            }
        }
        let pos = |x: F| x.is_finite() && x > F::zero();
        if !(pos(self.hyper.sigma)
            && self.hyper.sigma_src.iter().all(|&s| pos(s))
            && pos(self.hyper.sigma_nu))
        {
            return Err(Error::Config("scenario variances must be positive".into()));
        }
        Ok(())
    }

    /// Effective 1-based start times for the late vaccines.
    pub fn starts_for(&self, times: usize) -> Vec<usize> {
        match &self.late_starts {
            Some(s) => s.clone(),
            None => {
                let a = times.div_ceil(2).max(1);
                let b = (3 * times).div_ceil(4).max(1);
                vec![a, b]
            }
        }
    }
}

/// A generated dataset together with its truth.
#[derive(Debug, Clone)]
pub struct Synthetic<F> {
    pub obs: Observations<F>,
    /// True coverage proportions per cell (inverse-logit of the generating
    /// mean, including the BDSL intercept for that model).
    pub true_p: Vec<F>,
    /// Synthetic labels (countries C01.., vaccines V1.., years 1..T).
    pub maps: IndexMaps,
    /// The generating random effects.
    pub field: LatentField<F>,
    /// 1-based first observable year per (country, vaccine) pair
    /// (1 everywhere except late-introduction vaccines).
    pub start_time: Vec<usize>,
}

impl<F: Real> Synthetic<F> {
    /// Truth keyed like estimate-table rows, in percent. Cells before a
    /// vaccine's introduction (where every source was removed by design)
    /// are excluded, mirroring the introduction-year filtering applied to
    /// real fits.
    pub fn truth_map(&self) -> BTreeMap<(String, String, i32), F> {
        let dims = self.obs.dims();
        let mut out = BTreeMap::new();
        for i in 0..dims.countries {
            for j in 0..dims.vaccines {
                let start = self.start_time[i * dims.vaccines + j];
                for t in 0..dims.times {
                    if t + 1 < start {
                        continue;
                    }
                    out.insert(
                        (
                            self.maps.countries[i].clone(),
                            self.maps.vaccines[j].clone(),
                            self.maps.year_of(t),
                        ),
                        F::of(100.0) * self.true_p[dims.cell(i, j, t)],
                    );
                }
            }
        }
        out
    }
}

fn synthetic_maps(dims: ModelDims) -> IndexMaps {
    let countries: Vec<String> = (1..=dims.countries).map(|i| format!("C{i:02}")).collect();
    let region_of = countries
        .iter()
        .map(|c| (c.clone(), "SIM".to_string()))
        .collect();
    IndexMaps {
        countries,
        vaccines: (1..=dims.vaccines).map(|j| format!("V{j}")).collect(),
        year_start: 1,
        n_times: dims.times,
        region_of,
    }
}

/// Draws the latent random effects at the true hyperparameters.
fn draw_field<F: Real, R: Rng + ?Sized>(
    dims: ModelDims,
    hyper: &Hyperparams<F>,
    rng: &mut R,
) -> LatentField<F> {
    let mut field = LatentField::zeros(dims);
    for b in &mut field.beta {
        *b = hyper.sigma_beta * F::std_normal(rng);
    }
    for a in &mut field.alpha {
        *a = hyper.sigma_alpha * F::std_normal(rng);
    }
    for p in &mut field.psi {
        *p = hyper.sigma_psi * F::std_normal(rng);
    }
    let ar1 = |rho: F, sigma: F, out: &mut [F], rng: &mut R| {
        let stationary = sigma / (F::one() - rho * rho).sqrt();
        let mut prev = stationary * F::std_normal(rng);
        out[0] = prev;
        for slot in out.iter_mut().skip(1) {
            prev = rho * prev + sigma * F::std_normal(rng);
            *slot = prev;
        }
    };
    ar1(hyper.rho_gamma, hyper.sigma_gamma, &mut field.gamma, rng);
    for i in 0..dims.countries {
        ar1(
            hyper.rho_phi,
            hyper.sigma_phi,
            &mut field.phi[i * dims.times..(i + 1) * dims.times],
            rng,
        );
    }
    for j in 0..dims.vaccines {
        ar1(
            hyper.rho_delta,
            hyper.sigma_delta,
            &mut field.delta[j * dims.times..(j + 1) * dims.times],
            rng,
        );
    }
    for b in 0..dims.countries * dims.vaccines {
        ar1(
            hyper.rho_omega,
            hyper.sigma_omega,
            &mut field.omega[b * dims.times..(b + 1) * dims.times],
            rng,
        );
    }
    field
}

/// Presence mask shared by both models: late vaccines start at a random
/// 1-based time drawn per (country, vaccine) from the scenario's start
/// options, then a fixed fraction of each source's remaining cells is
/// deleted uniformly at random.
fn draw_mask<F: Real, R: Rng + ?Sized>(
    dims: ModelDims,
    scenario: &ScenarioSpec<F>,
    rng: &mut R,
) -> (Vec<bool>, Vec<usize>) {
    let cells = dims.cells();
    let mut keep = vec![true; 3 * cells];
    let mut start_time = vec![1usize; dims.countries * dims.vaccines];
    let starts = scenario.starts_for(dims.times);
    let first_late = dims.vaccines.saturating_sub(scenario.late_vaccines);
    for i in 0..dims.countries {
        for j in first_late..dims.vaccines {
            let start = starts[rng.random_range(0..starts.len())];
            start_time[i * dims.vaccines + j] = start;
            for t in 0..dims.times {
                if t + 1 < start {
                    for k in 0..3 {
                        keep[k * cells + dims.cell(i, j, t)] = false;
                    }
                }
            }
        }
    }
    let rates = [
        scenario.missing_admin,
        scenario.missing_official,
        scenario.missing_survey,
    ];
    for (k, rate) in rates.into_iter().enumerate() {
        let mut available: Vec<usize> = (0..cells).filter(|&c| keep[k * cells + c]).collect();
        let n_delete = (rate * available.len() as f64).floor() as usize;
        // Partial Fisher-Yates: the first n_delete entries are a uniform
        // sample without replacement.
        for step in 0..n_delete {
            let pick = step + rng.random_range(0..available.len() - step);
            available.swap(step, pick);
            keep[k * cells + available[step]] = false;
        }
    }
    (keep, start_time)
}

/// Generates one model's observations per the scenario protocol. The
/// latent field and missingness mask depend only on `(dims, scenario,
/// seed)`; the source noise stream is model-specific.
pub fn generate_synthetic<F: Real>(
    dims: ModelDims,
    scenario: &ScenarioSpec<F>,
    kind: ModelKind,
    seed: u64,
) -> Result<Synthetic<F>> {
    dims.validate()?;
    scenario.validate()?;
    let mut field_rng = stream_rng(seed, &[10]);
    let mut mask_rng = stream_rng(seed, &[11]);
    let mut noise_rng = stream_rng(seed, &[12, kind as u64]);

    let mut field = draw_field(dims, &scenario.hyper, &mut field_rng);
    let (keep, start_time) = draw_mask(dims, scenario, &mut mask_rng);

    let core = shared_mean(ModelKind::Idml, dims, &field);
    let cells = dims.cells();
    let mut obs = Observations::new(dims);
    let mut true_p = vec![F::zero(); cells];
    match kind {
        ModelKind::Bdsl => {
            field.lambda = scenario.lambda_bdsl;
            for k in 0..3 {
                field.nu[k] = scenario.hyper.sigma_nu * F::std_normal(&mut noise_rng);
            }
            for cell in 0..cells {
                true_p[cell] = inv_logit(scenario.lambda_bdsl + core[cell]);
            }
            for k in 0..3 {
                for i in 0..dims.countries {
                    for j in 0..dims.vaccines {
                        for t in 0..dims.times {
                            let cell = dims.cell(i, j, t);
                            let noise = scenario.hyper.sigma * F::std_normal(&mut noise_rng);
                            if keep[k * cells + cell] {
                                let y = scenario.lambda_bdsl + core[cell] + field.nu[k] + noise;
                                obs.set(SourceKind::from_index(k), i, j, t, y);
                            }
                        }
                    }
                }
            }
        }
        ModelKind::Idml => {
            field.lambda_src = scenario.lambda_src;
            for cell in 0..cells {
                true_p[cell] = inv_logit(core[cell]);
            }
            for k in 0..3 {
                for i in 0..dims.countries {
                    for j in 0..dims.vaccines {
                        for t in 0..dims.times {
                            let cell = dims.cell(i, j, t);
                            let noise = scenario.hyper.sigma_src[k] * F::std_normal(&mut noise_rng);
                            if keep[k * cells + cell] {
                                let y = scenario.lambda_src[k] + core[cell] + noise;
                                obs.set(SourceKind::from_index(k), i, j, t, y);
                            }
                        }
                    }
                }
            }
        }
    }

    Ok(Synthetic {
        obs,
        true_p,
        maps: synthetic_maps(dims),
        field,
        start_time,
    })
}

/// Forecast evaluation protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForecastMode {
    /// Refit on 1..t0 for every origin t0 and pool the h-step errors.
    Rolling,
    /// Fit once on the base window and extrapolate.
    FitOnce,
}

#[derive(Debug, Clone)]
pub struct ExperimentOptions {
    /// Forecast horizons to evaluate (0 disables forecasting).
    pub horizons: usize,
    /// First forecast origin (1-based); `None` derives T/2.
    pub forecast_base: Option<usize>,
    pub mode: ForecastMode,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        ExperimentOptions {
            horizons: 2,
            forecast_base: None,
            mode: ForecastMode::Rolling,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MetricsEntry<F> {
    pub model: ModelKind,
    /// "in-sample", "1-step" or "2-step".
    pub horizon: String,
    pub metrics: ValidationMetrics<F>,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport<F> {
    pub scenario: String,
    pub dims: ModelDims,
    pub entries: Vec<MetricsEntry<F>>,
    /// Convergence-gate warnings, one per flagged fit.
    pub warnings: Vec<String>,
}

impl<F: Real> ExperimentReport<F> {
    pub fn get(&self, model: ModelKind, horizon: &str) -> Option<&ValidationMetrics<F>> {
        self.entries
            .iter()
            .find(|e| e.model == model && e.horizon == horizon)
            .map(|e| &e.metrics)
    }

    /// `scenario,horizon,metric,bdsl,idml` CSV rendering.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("scenario,horizon,metric,bdsl,idml\n");
        let horizons = self.horizon_order();
        for horizon in &horizons {
            for (label, pick) in metric_rows::<F>() {
                let b = self
                    .get(ModelKind::Bdsl, horizon)
                    .map(|m| format!("{}", pick(m)))
                    .unwrap_or_default();
                let i = self
                    .get(ModelKind::Idml, horizon)
                    .map(|m| format!("{}", pick(m)))
                    .unwrap_or_default();
                let _ = writeln!(out, "{},{horizon},{label},{b},{i}", self.scenario);
            }
        }
        out
    }

    /// Aligned plain-text table, one block per horizon, one column per
    /// model.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{} (C={}, V={}, T={})",
            self.scenario, self.dims.countries, self.dims.vaccines, self.dims.times
        );
        let _ = writeln!(out, "{:<22}{:>12}{:>12}", "", "BDSL", "IDML");
        for horizon in self.horizon_order() {
            let _ = writeln!(out, "{horizon}");
            for (label, pick) in metric_rows::<F>() {
                let fmt = |m: Option<&ValidationMetrics<F>>| {
                    m.map(|m| format!("{:.2}", pick(m).to_f64_lossy()))
                        .unwrap_or_else(|| "-".into())
                };
                let _ = writeln!(
                    out,
                    "  {:<20}{:>12}{:>12}",
                    label,
                    fmt(self.get(ModelKind::Bdsl, &horizon)),
                    fmt(self.get(ModelKind::Idml, &horizon))
                );
            }
        }
        for w in &self.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        out
    }

    fn horizon_order(&self) -> Vec<String> {
        let mut seen = Vec::new();
        for e in &self.entries {
            if !seen.contains(&e.horizon) {
                seen.push(e.horizon.clone());
            }
        }
        seen
    }
}

type MetricPick<F> = fn(&ValidationMetrics<F>) -> F;

fn metric_rows<F: Real>() -> [(&'static str, MetricPick<F>); 5] {
    [
        ("AvBias", |m: &ValidationMetrics<F>| m.av_bias),
        ("RMSE", |m: &ValidationMetrics<F>| m.rmse),
        ("MAE", |m: &ValidationMetrics<F>| m.mae),
        ("95% coverage", |m: &ValidationMetrics<F>| m.coverage95),
        ("Correlation", |m: &ValidationMetrics<F>| m.correlation),
    ]
}

/// Truth restricted to prediction year `year`.
fn truth_at_year<F: Real>(
    truth: &BTreeMap<(String, String, i32), F>,
    table: &EstimateTable<F>,
    year: i32,
) -> EstimateTable<F> {
    let _ = truth;
    EstimateTable {
        rows: table
            .rows
            .iter()
            .filter(|r| r.year == year)
            .cloned()
            .collect(),
    }
}

/// Generates per-model data, fits both models on the full window for
/// in-sample metrics, and evaluates one- and two-step-ahead predictions
/// per the configured protocol. Convergence-gate failures are reported as
/// warnings, never as errors.
pub fn run_experiment<F: Real>(
    scenario: &ScenarioSpec<F>,
    dims: ModelDims,
    chain_config: &ChainConfig,
    options: &ExperimentOptions,
    seed: u64,
) -> Result<ExperimentReport<F>> {
    let priors = PriorConfig::<F>::simulation();
    let mut report = ExperimentReport {
        scenario: scenario.name.clone(),
        dims,
        entries: Vec::new(),
        warnings: Vec::new(),
    };

    for kind in [ModelKind::Bdsl, ModelKind::Idml] {
        let synth = generate_synthetic(dims, scenario, kind, seed)?;
        let truth = synth.truth_map();

        let (draws, diag) = run_chains(kind, &synth.obs, &priors, chain_config)?;
        if !diag.pass {
            report.warnings.push(format!(
                "{kind} in-sample fit: R-hat gate failed (max {:?})",
                diag.max_rhat.map(|r| r.to_f64_lossy())
            ));
        }
        let estimates = coverage_estimates(&draws, &synth.maps);
        report.entries.push(MetricsEntry {
            model: kind,
            horizon: "in-sample".into(),
            metrics: validation_metrics(&estimates, &truth)?,
        });

        if options.horizons == 0 {
            continue;
        }
        let base = options
            .forecast_base
            .unwrap_or(dims.times / 2)
            .clamp(2, dims.times.saturating_sub(1));
        let mut pooled: Vec<EstimateTable<F>> = (0..options.horizons)
            .map(|_| EstimateTable::default())
            .collect();

        let origins: Vec<usize> = match options.mode {
            ForecastMode::Rolling => (base..dims.times).collect(),
            ForecastMode::FitOnce => vec![base],
        };
        for &origin in &origins {
            let obs_window = synth.obs.restrict_times(origin);
            let window_maps = IndexMaps {
                n_times: origin,
                ..synth.maps.clone()
            };
            let steps = match options.mode {
                ForecastMode::Rolling => options.horizons.min(dims.times - origin),
                ForecastMode::FitOnce => dims.times - origin,
            };
            if steps == 0 {
                continue;
            }
            let mut window_config = chain_config.clone();
            window_config.seed = chain_config.seed.wrapping_add(origin as u64);
            let (window_draws, window_diag) =
                run_chains(kind, &obs_window, &priors, &window_config)?;
            if !window_diag.pass {
                report
                    .warnings
                    .push(format!("{kind} origin {origin}: R-hat gate failed"));
            }
            let predictions = predict_forward(
                &window_draws,
                &window_maps,
                steps,
                seed ^ (origin as u64) << 8,
            );
            for h in 1..=steps.min(options.horizons) {
                let year = window_maps.year_of(origin - 1) + h as i32;
                pooled[h - 1].extend(truth_at_year(&truth, &predictions, year));
            }
        }

        for (h, table) in pooled.iter().enumerate() {
            if table.rows.is_empty() {
                continue;
            }
            report.entries.push(MetricsEntry {
                model: kind,
                horizon: format!("{}-step", h + 1),
                metrics: validation_metrics(table, &truth)?,
            });
        }
    }

    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_one_matches_protocol_variances() {
        let s = ScenarioSpec::<f64>::standard(1).unwrap();
        assert_eq!(s.hyper.sigma_src[0], 1.0);
        assert!((s.hyper.sigma_src[1].powi(2) - 0.64).abs() < 1e-12);
        assert!((s.hyper.sigma_src[2].powi(2) - 0.16).abs() < 1e-12);
        assert!((s.hyper.sigma_nu.powi(2) - 0.6).abs() < 1e-12);
        assert_eq!(s.lambda_src, [0.07, 0.02, 0.05]);
        assert_eq!(s.lambda_bdsl, 0.05);
        assert!(ScenarioSpec::<f64>::standard(4).is_err());
    }

    #[test]
    fn late_starts_derive_from_horizon() {
        let s = ScenarioSpec::<f64>::standard(1).unwrap();
        assert_eq!(s.starts_for(20), vec![10, 15]);
        assert_eq!(s.starts_for(12), vec![6, 9]);
    }

    #[test]
    fn generator_is_deterministic() {
        let dims = desk_dims();
        let s = ScenarioSpec::<f64>::standard(2).unwrap();
        let a = generate_synthetic(dims, &s, ModelKind::Idml, 7).unwrap();
        let b = generate_synthetic(dims, &s, ModelKind::Idml, 7).unwrap();
        assert_eq!(a.obs, b.obs);
        assert_eq!(a.true_p, b.true_p);
        let c = generate_synthetic(dims, &s, ModelKind::Idml, 8).unwrap();
        assert_ne!(a.obs, c.obs);
    }

    #[test]
    fn models_share_field_and_mask() {
        let dims = desk_dims();
        let s = ScenarioSpec::<f64>::standard(1).unwrap();
        let bdsl = generate_synthetic(dims, &s, ModelKind::Bdsl, 3).unwrap();
        let idml = generate_synthetic(dims, &s, ModelKind::Idml, 3).unwrap();
        assert_eq!(bdsl.field.beta, idml.field.beta);
        assert_eq!(bdsl.field.omega, idml.field.omega);
        assert_eq!(bdsl.obs.n_observed_total(), idml.obs.n_observed_total());
        for k in SourceKind::ALL {
            for i in 0..dims.countries {
                for j in 0..dims.vaccines {
                    assert_eq!(
                        bdsl.obs.observed_times(k, i, j),
                        idml.obs.observed_times(k, i, j)
                    );
                }
            }
        }
    }

    #[test]
    fn full_scale_dims_observation_count_in_band() {
        let dims = full_scale_dims();
        let s = ScenarioSpec::<f64>::standard(1).unwrap();
        for seed in [1u64, 2, 3] {
            let synth = generate_synthetic(dims, &s, ModelKind::Idml, seed).unwrap();
            let n = synth.obs.n_observed_total();
            assert!(
                (3600..=4100).contains(&n),
                "seed {seed}: observation count {n} outside band"
            );
            let admin_official = synth.obs.n_observed(SourceKind::Admin)
                + synth.obs.n_observed(SourceKind::Official);
            let share = admin_official as f64 / n as f64;
            assert!(
                (0.6..=0.75).contains(&share),
                "admin/official share {share}"
            );
        }
    }

    #[test]
    fn no_deletion_no_late_start_gives_full_grid() {
        let dims = ModelDims {
            countries: 3,
            vaccines: 2,
            times: 4,
        };
        let mut s = ScenarioSpec::<f64>::standard(1).unwrap();
        s.missing_admin = 0.0;
        s.missing_official = 0.0;
        s.missing_survey = 0.0;
        s.late_vaccines = 0;
        let synth = generate_synthetic(dims, &s, ModelKind::Bdsl, 5).unwrap();
        assert_eq!(synth.obs.n_observed_total(), 3 * dims.cells());
    }

    #[test]
    fn generated_values_backtransform_into_unit_interval() {
        let dims = desk_dims();
        let s = ScenarioSpec::<f64>::standard(3).unwrap();
        let synth = generate_synthetic(dims, &s, ModelKind::Idml, 11).unwrap();
        assert!(synth.true_p.iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn source_noise_variance_matches_scenario() {
        let dims = full_scale_dims();
        let s = ScenarioSpec::<f64>::standard(2).unwrap();
        let synth = generate_synthetic(dims, &s, ModelKind::Idml, 9).unwrap();
        let core = shared_mean(ModelKind::Idml, dims, &synth.field);
        for (k, kind) in SourceKind::ALL.into_iter().enumerate() {
            let mut residuals = Vec::new();
            for i in 0..dims.countries {
                for j in 0..dims.vaccines {
                    for t in 0..dims.times {
                        if let Some(y) = synth.obs.get(kind, i, j, t) {
                            residuals.push(y - s.lambda_src[k] - core[dims.cell(i, j, t)]);
                        }
                    }
                }
            }
            let n = residuals.len() as f64;
            let mean: f64 = residuals.iter().sum::<f64>() / n;
            let var: f64 = residuals
                .iter()
                .map(|r| (r - mean) * (r - mean))
                .sum::<f64>()
                / (n - 1.0);
            let target = s.hyper.sigma_src[k].powi(2);
            assert!(
                (var - target).abs() / target < 0.10,
                "source {kind}: empirical variance {var} vs {target}"
            );
        }
    }
}
