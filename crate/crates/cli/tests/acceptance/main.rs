//! Acceptance suite: one test per criterion, run with
//! `cargo test -p vaxcov-cli --test acceptance -- --nocapture`.
//! Each criterion prints a single `criterion N (<name>): PASS|FAIL` line.

// The dense oracles intentionally mirror matrix notation.
#![allow(clippy::needless_range_loop)]

mod dense;

use std::collections::BTreeMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vaxcov_core::data::{
    merge_and_filter, CoverageRecord, Evidence, ICDataset, Region, SourceKind, Validity,
};
use vaxcov_core::model::{
    ar1_structure, interaction_precision, log_posterior, Hyperparams, InteractionKind, LatentField,
    ModelDims, ModelKind, Observations, PriorConfig,
};
use vaxcov_core::num::inv_logit;
use vaxcov_core::posterior::{
    regional_aggregate, validation_metrics, waic, EstimateRow, EstimateTable, WaicReport,
};
use vaxcov_core::preprocess::{
    apply_dtp_ratio, clamp_and_logit, recall_bias_adjust, select_survey_estimates, IndexMaps,
    ProcessingReport,
};
use vaxcov_core::sampler::{
    bulk_ess, run_chains, run_chains_fixed_hyper, split_rhat, ChainConfig, Draws,
};
use vaxcov_core::simulate::{
    desk_chain_config, desk_dims, run_experiment, ExperimentOptions, ScenarioSpec,
};

fn verdict(n: u32, name: &str, pass: bool) {
    println!(
        "criterion {n} ({name}): {}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {n} ({name}) failed");
}

fn record(country: &str, vaccine: &str, year: i32, source: SourceKind, pct: f64) -> CoverageRecord {
    CoverageRecord {
        country: country.into(),
        region: Region::Afr,
        vaccine: vaccine.into(),
        year,
        source,
        coverage_pct: pct,
        sample_size: None,
        evidence: None,
        validity: None,
    }
}

fn survey_record(
    country: &str,
    vaccine: &str,
    year: i32,
    pct: f64,
    n: u64,
    evidence: Evidence,
    validity: Validity,
) -> CoverageRecord {
    CoverageRecord {
        sample_size: Some(n),
        evidence: Some(evidence),
        validity: Some(validity),
        ..record(country, vaccine, year, SourceKind::Survey, pct)
    }
}

// ----------------------------------------------------------------------
// Criterion 1: preprocessing exactness on a 20-record fixture.
// ----------------------------------------------------------------------
#[test]
fn criterion_1_preprocessing_exactness() {
    let started = Instant::now();
    let tol = 1e-12;

    let survey_set = ICDataset::new(vec![
        survey_record(
            "SVA",
            "DTP3",
            2006,
            48.0,
            1000,
            Evidence::CardOrHistory,
            Validity::Valid,
        ),
        survey_record(
            "SVA",
            "DTP3",
            2006,
            50.0,
            1000,
            Evidence::Card,
            Validity::Valid,
        ),
        survey_record(
            "SVA",
            "DTP1",
            2006,
            80.0,
            1000,
            Evidence::CardOrHistory,
            Validity::Valid,
        ),
        survey_record(
            "SVA",
            "DTP1",
            2006,
            70.0,
            1000,
            Evidence::Card,
            Validity::Valid,
        ),
        survey_record(
            "GHA",
            "MCV1",
            2009,
            61.0,
            250,
            Evidence::Card,
            Validity::Crude,
        ),
        survey_record(
            "GHA",
            "MCV1",
            2010,
            60.0,
            4200,
            Evidence::Card,
            Validity::Valid,
        ),
    ]);
    let coverage_set = ICDataset::new(vec![
        record("NGA", "DTP1", 2001, SourceKind::Admin, 104.0),
        record("NGA", "DTP3", 2001, SourceKind::Admin, 101.92),
        record("NGA", "DTP1", 2002, SourceKind::Admin, 90.0),
        record("NGA", "DTP3", 2002, SourceKind::Admin, 45.0),
        record("NGA", "DTP3", 2003, SourceKind::Admin, 45.0),
        record("NGA", "MCV1", 2004, SourceKind::Admin, 100.0),
        record("NGA", "MCV1", 2005, SourceKind::Admin, 0.05),
        record("NGA", "MCV1", 2006, SourceKind::Admin, 50.0),
        record("NGA", "MCV1", 2007, SourceKind::Admin, 0.0),
        record("NGA", "DTP1", 2001, SourceKind::Official, 95.0),
        record("NGA", "DTP3", 2001, SourceKind::Official, 76.0),
        record("NGA", "MCV1", 2003, SourceKind::Official, 88.0),
        record("NGA", "MCV2", 2008, SourceKind::Official, 120.0),
        record("NGA", "PCV3", 2012, SourceKind::Admin, 47.5),
    ]);
    assert_eq!(
        survey_set.len() + coverage_set.len(),
        20,
        "fixture is 20 records"
    );

    let mut report = ProcessingReport::default();
    let pairs = vec![("DTP3".to_string(), "DTP1".to_string())];
    let adjusted = recall_bias_adjust(&survey_set, &pairs, &mut report);
    let adjusted_value = adjusted
        .records
        .iter()
        .find(|r| r.vaccine == "DTP3" && r.evidence == Some(Evidence::CardOrHistory))
        .unwrap()
        .coverage_pct;
    assert!(
        (adjusted_value - 50.0 * 80.0 / 70.0).abs() < tol,
        "recall formula"
    );

    let selected = select_survey_estimates(&adjusted, 300, &mut report);
    // Card-or-history wins for both doses; the small crude singleton drops.
    assert!(selected.records.iter().all(|r| r.year != 2009));
    let vaccines: Vec<String> = ["DTP1", "DTP3", "MCV1", "MCV2", "PCV3"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let merged = merge_and_filter(&[coverage_set, selected], &vaccines, 2000..=2019, true).unwrap();
    assert!(
        merged.records.iter().all(|r| r.coverage_pct != 0.0),
        "zeros dropped at merge"
    );

    let final_set = apply_dtp_ratio(&merged, &mut report);
    let get = |country: &str, vaccine: &str, year: i32, source: SourceKind| -> f64 {
        final_set
            .records
            .iter()
            .find(|r| {
                r.country == country && r.vaccine == vaccine && r.year == year && r.source == source
            })
            .unwrap_or_else(|| panic!("missing ({country},{vaccine},{year},{source})"))
            .coverage_pct
    };
    // Hand-computed ratio round-trips.
    assert!((get("NGA", "DTP1", 2001, SourceKind::Admin) - 99.9).abs() < tol);
    assert!((get("NGA", "DTP3_RATIO", 2001, SourceKind::Admin) - 98.0).abs() < 2e-12);
    assert!((get("NGA", "DTP3_RATIO", 2002, SourceKind::Admin) - 50.0).abs() < tol);
    assert!((get("NGA", "DTP3_RATIO", 2001, SourceKind::Official) - 80.0).abs() < tol);
    // Survey ratio uses the recall-adjusted value: (50*80/70) / 80 * 100.
    assert!(
        (get("SVA", "DTP3_RATIO", 2006, SourceKind::Survey) - 500.0 / 7.0).abs() < tol,
        "survey ratio derives from the adjusted third dose"
    );
    // Unpaired third dose cannot enter the ratio model.
    assert!(!final_set
        .records
        .iter()
        .any(|r| r.year == 2003 && r.vaccine.starts_with("DTP3")));

    let (observations, maps, _) = clamp_and_logit(&final_set);
    let y_of = |country: &str, vaccine: &str, year: i32, source: SourceKind| -> f64 {
        let i = maps.country_index(country).unwrap();
        let j = maps.vaccine_index(vaccine).unwrap();
        let t = (year - maps.year_start) as usize;
        observations
            .iter()
            .find(|o| o.country == i && o.vaccine == j && o.time == t && o.source == source)
            .unwrap()
            .y
    };
    let ln999 = 6.906_754_778_648_554_f64;
    assert!(
        (y_of("NGA", "MCV1", 2004, SourceKind::Admin) - ln999).abs() < tol,
        "100% -> 0.999"
    );
    assert!(
        (y_of("NGA", "MCV1", 2005, SourceKind::Admin) + ln999).abs() < tol,
        "0.05% -> 0.001"
    );
    assert!(
        y_of("NGA", "MCV1", 2006, SourceKind::Admin).abs() < tol,
        "50% -> 0"
    );
    assert!(
        (y_of("NGA", "MCV2", 2008, SourceKind::Official) - ln999).abs() < tol,
        ">1 -> 0.999"
    );

    let elapsed = started.elapsed();
    verdict(1, "preprocessing exactness", elapsed.as_secs_f64() < 1.0);
}

// ----------------------------------------------------------------------
// Criterion 2: structure-matrix oracles.
// ----------------------------------------------------------------------
#[test]
fn criterion_2_structure_matrix_oracle() {
    let started = Instant::now();
    let sigma = 1.3_f64;
    let mut max_cov_err = 0.0_f64;
    for t in 1..=20usize {
        for k in 0..11 {
            let rho = -0.95 + 0.19 * k as f64;
            let mut r = ar1_structure::<f64>(t, rho).unwrap();
            r.scale(1.0 / (sigma * sigma));
            let inverse = dense::invert(&r.to_dense());
            let analytic = dense::ar1_covariance(t, rho, sigma);
            for s in 0..t {
                for u in 0..t {
                    max_cov_err = max_cov_err.max((inverse[s][u] - analytic[s][u]).abs());
                }
            }
        }
    }
    println!("  scaled-inverse vs analytic covariance: max abs err {max_cov_err:.3e}");
    assert!(max_cov_err < 1e-8);

    let mut rng = ChaCha8Rng::seed_from_u64(2020);
    let mut max_quad_err = 0.0_f64;
    let mut max_det_err = 0.0_f64;
    for c in 1..=3usize {
        for v in 1..=3usize {
            for t in 1..=6usize {
                let dims = ModelDims {
                    countries: c,
                    vaccines: v,
                    times: t,
                };
                let rho = 0.6;
                let sig = 0.9;
                for kind in [
                    InteractionKind::Phi,
                    InteractionKind::Delta,
                    InteractionKind::Omega,
                ] {
                    let block = interaction_precision::<f64>(kind, dims, rho, sig).unwrap();
                    let mut r = ar1_structure::<f64>(t, rho).unwrap();
                    r.scale(1.0 / (sig * sig));
                    let q_dense = dense::kron(&dense::identity(block.n_blocks), &r.to_dense());
                    let x: Vec<f64> = (0..block.dim())
                        .map(|_| rng.random_range(-2.0..2.0))
                        .collect();
                    max_quad_err = max_quad_err
                        .max((block.quad_form(&x) - dense::quad_form(&q_dense, &x)).abs());
                    max_det_err =
                        max_det_err.max((block.ln_det() - dense::ln_det_spd(&q_dense)).abs());
                }
            }
        }
    }
    println!("  blocked vs dense Kronecker quad form: max abs err {max_quad_err:.3e}");
    println!("  closed-form vs dense log-determinant: max abs err {max_det_err:.3e}");
    assert!(max_quad_err < 1e-10);
    assert!(max_det_err < 1e-8);

    let elapsed = started.elapsed();
    println!("  elapsed {elapsed:.2?}");
    verdict(2, "structure-matrix oracle", elapsed.as_secs_f64() < 10.0);
}

// ----------------------------------------------------------------------
// Criterion 3: joint density against a term-by-term oracle.
// ----------------------------------------------------------------------

/// Independent normal log density.
fn oracle_ln_normal(x: f64, mean: f64, var: f64) -> f64 {
    -(x - mean) * (x - mean) / (2.0 * var) - 0.5 * (2.0 * std::f64::consts::PI * var).ln()
}

fn oracle_ln_half_cauchy(x: f64, scale: f64) -> f64 {
    (2.0 / (std::f64::consts::PI * scale)).ln() - (1.0 + (x / scale) * (x / scale)).ln()
}

/// Term-by-term joint log posterior with AR(1) blocks evaluated through
/// the dense analytic covariance.
#[allow(clippy::too_many_arguments)]
fn oracle_log_posterior(
    kind: ModelKind,
    field: &LatentField<f64>,
    hyper: &Hyperparams<f64>,
    priors: &PriorConfig<f64>,
    obs: &Observations<f64>,
    missing_y: Option<&[f64]>,
) -> f64 {
    let dims = obs.dims();
    let (c, v, t) = (dims.countries, dims.vaccines, dims.times);
    let mu = |i: usize, j: usize, s: usize| field.mu_at(kind, dims, i, j, s);

    let mut lp = 0.0;
    match kind {
        ModelKind::Bdsl => {
            let missing = missing_y.unwrap();
            let mut m = 0usize;
            for k in 0..3 {
                for i in 0..c {
                    for j in 0..v {
                        for s in 0..t {
                            let y = match obs.get(SourceKind::from_index(k), i, j, s) {
                                Some(y) => y,
                                None => {
                                    let y = missing[m];
                                    m += 1;
                                    y
                                }
                            };
                            lp += oracle_ln_normal(
                                y,
                                mu(i, j, s) + field.nu[k],
                                hyper.sigma * hyper.sigma,
                            );
                        }
                    }
                }
            }
        }
        ModelKind::Idml => {
            for k in 0..3 {
                for i in 0..c {
                    for j in 0..v {
                        for s in 0..t {
                            if let Some(y) = obs.get(SourceKind::from_index(k), i, j, s) {
                                lp += oracle_ln_normal(
                                    y,
                                    field.lambda_src[k] + mu(i, j, s),
                                    hyper.sigma_src[k] * hyper.sigma_src[k],
                                );
                            }
                        }
                    }
                }
            }
        }
    }

    for &b in &field.beta {
        lp += oracle_ln_normal(b, 0.0, hyper.sigma_beta * hyper.sigma_beta);
    }
    for &a in &field.alpha {
        lp += oracle_ln_normal(a, 0.0, hyper.sigma_alpha * hyper.sigma_alpha);
    }
    for &p in &field.psi {
        lp += oracle_ln_normal(p, 0.0, hyper.sigma_psi * hyper.sigma_psi);
    }
    lp += dense::ln_mvn_dense(
        &field.gamma,
        &dense::ar1_covariance(t, hyper.rho_gamma, hyper.sigma_gamma),
    );
    for i in 0..c {
        lp += dense::ln_mvn_dense(
            &field.phi[i * t..(i + 1) * t],
            &dense::ar1_covariance(t, hyper.rho_phi, hyper.sigma_phi),
        );
    }
    for j in 0..v {
        lp += dense::ln_mvn_dense(
            &field.delta[j * t..(j + 1) * t],
            &dense::ar1_covariance(t, hyper.rho_delta, hyper.sigma_delta),
        );
    }
    for b in 0..c * v {
        lp += dense::ln_mvn_dense(
            &field.omega[b * t..(b + 1) * t],
            &dense::ar1_covariance(t, hyper.rho_omega, hyper.sigma_omega),
        );
    }
    match kind {
        ModelKind::Bdsl => {
            lp += oracle_ln_normal(field.lambda, 0.0, priors.lambda_var);
            for &n in &field.nu {
                lp += oracle_ln_normal(n, 0.0, hyper.sigma_nu * hyper.sigma_nu);
            }
            lp += oracle_ln_half_cauchy(hyper.sigma, priors.sigma_scale);
            lp += oracle_ln_half_cauchy(hyper.sigma_nu, priors.sigma_nu_scale);
        }
        ModelKind::Idml => {
            for k in 0..3 {
                lp += oracle_ln_normal(field.lambda_src[k], 0.0, priors.v[k]);
            }
            lp += oracle_ln_half_cauchy(hyper.sigma_src[0], priors.sigma_src_scale[0]);
            lp += oracle_ln_half_cauchy(hyper.sigma_src[1], priors.sigma_src_scale[1]);
            lp += oracle_ln_half_cauchy(hyper.sigma_src[2], priors.sigma_src_scale[2]);
            if let Some(upper) = priors.sigma3_upper {
                lp -=
                    (2.0 / std::f64::consts::PI * (upper / priors.sigma_src_scale[2]).atan()).ln();
            }
        }
    }
    // Four uniform(-1, 1) autocorrelation priors.
    lp += 4.0 * 0.5_f64.ln();
    lp
}

#[test]
fn criterion_3_density_oracle() {
    let dims = ModelDims {
        countries: 2,
        vaccines: 2,
        times: 3,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut max_err = 0.0_f64;
    for instance in 0..100 {
        let kind = if instance % 2 == 0 {
            ModelKind::Bdsl
        } else {
            ModelKind::Idml
        };
        let priors = if instance % 4 < 2 {
            PriorConfig::default()
        } else {
            PriorConfig::simulation()
        };

        let mut field = LatentField::<f64>::zeros(dims);
        field.lambda = rng.random_range(-0.5..0.5);
        for k in 0..3 {
            field.lambda_src[k] = rng.random_range(-0.5..0.5);
            field.nu[k] = rng.random_range(-0.5..0.5);
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
                *x = rng.random_range(-1.2..1.2);
            }
        }
        let mut hyper = Hyperparams::<f64>::unit();
        for s in [
            &mut hyper.sigma,
            &mut hyper.sigma_nu,
            &mut hyper.sigma_beta,
            &mut hyper.sigma_alpha,
            &mut hyper.sigma_gamma,
            &mut hyper.sigma_phi,
            &mut hyper.sigma_delta,
            &mut hyper.sigma_psi,
            &mut hyper.sigma_omega,
        ] {
            *s = rng.random_range(0.4..2.0);
        }
        hyper.sigma_src = [
            rng.random_range(0.4..2.0),
            rng.random_range(0.4..2.0),
            match priors.sigma3_upper {
                Some(u) => rng.random_range(0.05..u),
                None => rng.random_range(0.4..2.0),
            },
        ];
        for r in [
            &mut hyper.rho_gamma,
            &mut hyper.rho_phi,
            &mut hyper.rho_delta,
            &mut hyper.rho_omega,
        ] {
            *r = rng.random_range(-0.9..0.9);
        }

        let mut obs = Observations::<f64>::new(dims);
        for k in 0..3 {
            for i in 0..2 {
                for j in 0..2 {
                    for s in 0..3 {
                        if rng.random_range(0.0..1.0) < 0.7 {
                            obs.set(
                                SourceKind::from_index(k),
                                i,
                                j,
                                s,
                                rng.random_range(-2.0..2.0),
                            );
                        }
                    }
                }
            }
        }
        let missing: Vec<f64> = (0..obs.n_missing())
            .map(|_| rng.random_range(-2.0..2.0))
            .collect();
        let missing_arg = match kind {
            ModelKind::Bdsl => Some(missing.as_slice()),
            ModelKind::Idml => None,
        };

        let ours = log_posterior(kind, &field, &hyper, &priors, &obs, missing_arg);
        let oracle = oracle_log_posterior(kind, &field, &hyper, &priors, &obs, missing_arg);
        max_err = max_err.max((ours - oracle).abs());
    }
    println!("  joint density vs term-by-term oracle: max abs err {max_err:.3e}");
    verdict(3, "density oracle", max_err < 1e-10);
}

// ----------------------------------------------------------------------
// Criterion 4: small-instance sampler correctness against the exact
// dense-Gaussian posterior with fixed hyperparameters.
// ----------------------------------------------------------------------
#[test]
fn criterion_4_sampler_gls_oracle() {
    let started = Instant::now();
    let dims = ModelDims {
        countries: 2,
        vaccines: 1,
        times: 3,
    };
    let mut hyper = Hyperparams::<f64>::unit();
    hyper.sigma_src = [1.0, 0.8, 0.5];
    hyper.rho_gamma = 0.5;
    hyper.rho_phi = 0.3;
    hyper.sigma_phi = 0.5;
    hyper.rho_delta = 0.4;
    hyper.sigma_delta = 0.8;
    hyper.rho_omega = 0.7;
    hyper.sigma_omega = 0.8;
    let priors = PriorConfig::<f64>::simulation();

    // Irregular observation pattern: admin-heavy, sparse official/survey.
    let mut obs = Observations::<f64>::new(dims);
    let data: &[(SourceKind, usize, usize, f64)] = &[
        (SourceKind::Admin, 0, 0, 0.9),
        (SourceKind::Admin, 0, 1, 1.1),
        (SourceKind::Admin, 0, 2, 1.4),
        (SourceKind::Admin, 1, 0, 0.2),
        (SourceKind::Admin, 1, 2, 0.7),
        (SourceKind::Official, 0, 0, 1.0),
        (SourceKind::Official, 0, 2, 1.3),
        (SourceKind::Official, 1, 0, 0.4),
        (SourceKind::Official, 1, 2, 0.6),
        (SourceKind::Survey, 0, 1, 0.8),
        (SourceKind::Survey, 1, 2, 0.3),
    ];
    for &(k, i, t, y) in data {
        obs.set(k, i, 0, t, y);
    }

    // Dense GLS oracle over the 26-dimensional latent vector:
    // [lambda_a lambda_o lambda_s | beta(2) | alpha(1) | gamma(3) |
    //  phi(6) | delta(3) | psi(2) | omega(6)].
    let n_latent = 26;
    let off_beta = 3;
    let off_alpha = 5;
    let off_gamma = 6;
    let off_phi = 9;
    let off_delta = 15;
    let off_psi = 18;
    let off_omega = 20;

    let mut prior_precision = vec![vec![0.0; n_latent]; n_latent];
    for k in 0..3 {
        prior_precision[k][k] = 1.0 / priors.v[k];
    }
    for i in 0..2 {
        prior_precision[off_beta + i][off_beta + i] = 1.0 / (hyper.sigma_beta * hyper.sigma_beta);
        prior_precision[off_psi + i][off_psi + i] = 1.0 / (hyper.sigma_psi * hyper.sigma_psi);
    }
    prior_precision[off_alpha][off_alpha] = 1.0 / (hyper.sigma_alpha * hyper.sigma_alpha);
    let mut add_block = |offset: usize, rho: f64, sigma: f64| {
        let cov = dense::ar1_covariance(3, rho, sigma);
        let prec = dense::invert(&cov);
        for a in 0..3 {
            for b in 0..3 {
                prior_precision[offset + a][offset + b] += prec[a][b];
            }
        }
    };
    add_block(off_gamma, hyper.rho_gamma, hyper.sigma_gamma);
    add_block(off_phi, hyper.rho_phi, hyper.sigma_phi);
    add_block(off_phi + 3, hyper.rho_phi, hyper.sigma_phi);
    add_block(off_delta, hyper.rho_delta, hyper.sigma_delta);
    add_block(off_omega, hyper.rho_omega, hyper.sigma_omega);
    add_block(off_omega + 3, hyper.rho_omega, hyper.sigma_omega);

    let mut posterior_precision = prior_precision;
    let mut rhs = vec![0.0; n_latent];
    for &(k, i, t, y) in data {
        let w = 1.0 / (hyper.sigma_src[k.index()] * hyper.sigma_src[k.index()]);
        let mut x = vec![0.0; n_latent];
        x[k.index()] = 1.0;
        x[off_beta + i] = 1.0;
        x[off_alpha] = 1.0;
        x[off_gamma + t] = 1.0;
        x[off_phi + i * 3 + t] = 1.0;
        x[off_delta + t] = 1.0;
        x[off_psi + i] = 1.0;
        x[off_omega + i * 3 + t] = 1.0;
        for a in 0..n_latent {
            for b in 0..n_latent {
                posterior_precision[a][b] += w * x[a] * x[b];
            }
            rhs[a] += w * y * x[a];
        }
    }
    let posterior_mean = dense::solve_spd(&posterior_precision, &rhs);
    let oracle_mu = |i: usize, t: usize| -> f64 {
        posterior_mean[off_beta + i]
            + posterior_mean[off_alpha]
            + posterior_mean[off_gamma + t]
            + posterior_mean[off_phi + i * 3 + t]
            + posterior_mean[off_delta + t]
            + posterior_mean[off_psi + i]
            + posterior_mean[off_omega + i * 3 + t]
    };

    let config = ChainConfig {
        n_chains: 4,
        iterations: 3000,
        warmup: 1000,
        thin: 1,
        seed: 904,
        init_jitter: 0.1,
    };
    let (draws, _) =
        run_chains_fixed_hyper(ModelKind::Idml, &obs, &priors, &config, &hyper).unwrap();

    let mut cells_ok = 0;
    for i in 0..2 {
        for t in 0..3 {
            let per_chain: Vec<Vec<f64>> = (0..draws.n_chains)
                .map(|chain| {
                    (0..draws.per_chain)
                        .map(|d| draws.layout.mu_at(draws.row(chain, d), i, 0, t))
                        .collect()
                })
                .collect();
            let pooled: Vec<f64> = per_chain.iter().flatten().copied().collect();
            let mean = pooled.iter().sum::<f64>() / pooled.len() as f64;
            let sd = (pooled.iter().map(|x| (x - mean).powi(2)).sum::<f64>()
                / (pooled.len() - 1) as f64)
                .sqrt();
            let ess: f64 = bulk_ess(&per_chain);
            let se = sd / ess.sqrt();
            let exact = oracle_mu(i, t);
            let z = (mean - exact).abs() / se;
            let ok = z <= 3.0;
            println!(
                "  mu[{},{t}]: sampler {mean:.5} vs GLS {exact:.5} (|z| = {z:.2}, ess {ess:.0}) {}",
                i + 1,
                if ok { "ok" } else { "OUT" }
            );
            if ok {
                cells_ok += 1;
            }
        }
    }
    let elapsed = started.elapsed();
    println!("  elapsed {elapsed:.2?}");
    verdict(
        4,
        "sampler vs exact GLS posterior",
        cells_ok == 6 && elapsed.as_secs_f64() < 120.0,
    );
}

// ----------------------------------------------------------------------
// Criterion 5: simulation-study orderings at desk scale.
// ----------------------------------------------------------------------
#[test]
fn criterion_5_simulation_orderings() {
    let started = Instant::now();
    let dims = desk_dims();
    let options = ExperimentOptions {
        horizons: 0,
        ..Default::default()
    };
    let seeds: [u64; 5] = [1, 2, 3, 4, 5];

    // Scenario 2 clauses.
    let scenario2 = ScenarioSpec::<f64>::standard(2).unwrap();
    let mut s2_rmse = 0;
    let mut s2_idml_cov = 0;
    let mut s2_cov_order = 0;
    for &seed in &seeds {
        let report = run_experiment(
            &scenario2,
            dims,
            &desk_chain_config(seed * 1000),
            &options,
            seed,
        )
        .unwrap();
        let b = report.get(ModelKind::Bdsl, "in-sample").unwrap();
        let i = report.get(ModelKind::Idml, "in-sample").unwrap();
        let rmse_ok = i.rmse < b.rmse;
        let idml_cov_ok = i.coverage95 >= 90.0;
        let cov_order_ok = b.coverage95 < i.coverage95;
        println!(
            "  scenario 2 seed {seed}: RMSE {:.2}/{:.2} [{}], IDML cov {:.1} [{}], cov {:.1} < {:.1} [{}]",
            b.rmse,
            i.rmse,
            if rmse_ok { "ok" } else { "x" },
            i.coverage95,
            if idml_cov_ok { "ok" } else { "x" },
            b.coverage95,
            i.coverage95,
            if cov_order_ok { "ok" } else { "x" },
        );
        s2_rmse += rmse_ok as usize;
        s2_idml_cov += idml_cov_ok as usize;
        s2_cov_order += cov_order_ok as usize;
    }

    // Scenario 1 clause.
    let scenario1 = ScenarioSpec::<f64>::standard(1).unwrap();
    let mut s1_bias = 0;
    for &seed in &seeds {
        let report = run_experiment(
            &scenario1,
            dims,
            &desk_chain_config(seed * 1000),
            &options,
            seed,
        )
        .unwrap();
        let b = report.get(ModelKind::Bdsl, "in-sample").unwrap();
        let i = report.get(ModelKind::Idml, "in-sample").unwrap();
        let ok = i.av_bias.abs() < b.av_bias.abs();
        println!(
            "  scenario 1 seed {seed}: |AvBias| {:.2}/{:.2} [{}]",
            b.av_bias.abs(),
            i.av_bias.abs(),
            if ok { "ok" } else { "x" },
        );
        s1_bias += ok as usize;
    }

    let elapsed = started.elapsed();
    println!(
        "  counts over 5 seeds: S2 RMSE {s2_rmse}, S2 IDML-coverage {s2_idml_cov}, \
         S2 coverage-order {s2_cov_order}, S1 |AvBias| {s1_bias}; elapsed {elapsed:.1?}"
    );
    let pass = s2_rmse >= 4
        && s2_idml_cov >= 4
        && s2_cov_order >= 4
        && s1_bias >= 4
        && elapsed.as_secs_f64() < 1200.0;
    verdict(5, "simulation-study orderings", pass);
}

// ----------------------------------------------------------------------
// Criterion 6: WAIC identity and two-pass oracle.
// ----------------------------------------------------------------------
#[test]
fn criterion_6_waic_identity_and_oracle() {
    // Reported-table arithmetic.
    let table = WaicReport::new(21524.8_f64, 1053.9);
    let identity_err = (table.waic - 23632.6).abs();
    println!(
        "  21524.8 + 2 x 1053.9 = {:.1} (err {identity_err:.2e})",
        table.waic
    );
    assert!(identity_err < 1e-9);

    // 50 draws x 20 observations against a naive two-pass oracle.
    let dims = ModelDims {
        countries: 1,
        vaccines: 2,
        times: 5,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut obs = Observations::<f64>::new(dims);
    let mut placed = 0;
    'outer: for k in 0..3 {
        for j in 0..2 {
            for t in 0..5 {
                if placed == 20 {
                    break 'outer;
                }
                if (k + j + t) % 3 != 2 {
                    obs.set(
                        SourceKind::from_index(k),
                        0,
                        j,
                        t,
                        rng.random_range(-1.5..1.5),
                    );
                    placed += 1;
                }
            }
        }
    }
    assert_eq!(obs.n_observed_total(), 20);
    let config = ChainConfig {
        n_chains: 2,
        iterations: 75,
        warmup: 50,
        thin: 1,
        seed: 61,
        init_jitter: 0.1,
    };
    let (draws, _) =
        run_chains(ModelKind::Idml, &obs, &PriorConfig::simulation(), &config).unwrap();
    assert_eq!(draws.n_draws(), 50);
    let report = waic(&draws, &obs).unwrap();

    // Oracle: recompute pointwise log densities by name-based column
    // lookup, then direct summation.
    let name_index = |name: &str| draws.param_index(name).unwrap();
    let mut lppd = 0.0;
    let mut p_waic = 0.0;
    for k in 0..3 {
        for j in 0..2 {
            for t in 0..5 {
                let Some(y) = obs.get(SourceKind::from_index(k), 0, j, t) else {
                    continue;
                };
                let lls: Vec<f64> = draws
                    .rows()
                    .map(|row| {
                        let mu = row[name_index("beta[1]")]
                            + row[name_index(&format!("alpha[{}]", j + 1))]
                            + row[name_index(&format!("gamma[{}]", t + 1))]
                            + row[name_index(&format!("phi[1,{}]", t + 1))]
                            + row[name_index(&format!("delta[{},{}]", j + 1, t + 1))]
                            + row[name_index(&format!("psi[1,{}]", j + 1))]
                            + row[name_index(&format!("omega[1,{},{}]", j + 1, t + 1))];
                        let lambda = row[name_index(["lambda_a", "lambda_o", "lambda_s"][k])];
                        let sigma = row[name_index(["sigma1", "sigma2", "sigma3"][k])];
                        oracle_ln_normal(y, lambda + mu, sigma * sigma)
                    })
                    .collect();
                let mean_exp = lls.iter().map(|l| l.exp()).sum::<f64>() / lls.len() as f64;
                lppd += mean_exp.ln();
                let mean = lls.iter().sum::<f64>() / lls.len() as f64;
                p_waic += lls.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>()
                    / (lls.len() - 1) as f64;
            }
        }
    }
    let gof_err = (report.gof - (-2.0 * lppd)).abs();
    let pen_err = (report.penalty - p_waic).abs();
    let id_err = (report.waic - (report.gof + 2.0 * report.penalty)).abs();
    println!("  gof err {gof_err:.2e}, penalty err {pen_err:.2e}, identity err {id_err:.2e}");
    verdict(
        6,
        "WAIC identity and oracle",
        gof_err < 1e-9 && pen_err < 1e-9 && id_err < 1e-9,
    );
}

// ----------------------------------------------------------------------
// Criterion 7: diagnostics gate and failure detection.
// ----------------------------------------------------------------------
#[test]
fn criterion_7_diagnostics() {
    use vaxcov_core::simulate::generate_synthetic;
    let scenario = ScenarioSpec::<f64>::standard(1).unwrap();
    let synth = generate_synthetic(desk_dims(), &scenario, ModelKind::Idml, 5).unwrap();
    let config = ChainConfig {
        seed: 155,
        ..ChainConfig::default()
    };
    let (_, diag) = run_chains(
        ModelKind::Idml,
        &synth.obs,
        &PriorConfig::simulation(),
        &config,
    )
    .unwrap();
    println!(
        "  desk-scale fit ({} parameters): max split R-hat {:?}, gate pass {}",
        diag.params.len(),
        diag.max_rhat,
        diag.pass
    );

    // Artificially split two-mode chains must be flagged hard.
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let two_mode: Vec<Vec<f64>> = (0..2)
        .map(|c| {
            (0..500)
                .map(|_| 10.0 * c as f64 + 0.1 * rng.random_range(-1.0..1.0))
                .collect()
        })
        .collect();
    let rhat = split_rhat(&two_mode).unwrap();
    println!("  two-mode fixture split R-hat {rhat:.2}");

    verdict(7, "split R-hat gate", diag.pass && rhat > 2.0);
}

// ----------------------------------------------------------------------
// Criterion 8: aggregation and validation-metric fixtures.
// ----------------------------------------------------------------------
#[test]
fn criterion_8_aggregation_and_metrics() {
    // Two countries with per-draw coverages 0.5 and 1.0 and populations
    // 600/400: the weighted mean is exactly 70%.
    let dims = ModelDims {
        countries: 2,
        vaccines: 1,
        times: 1,
    };
    let mut field = LatentField::<f64>::zeros(dims);
    field.beta = vec![0.0, 40.0]; // inv_logit(40) == 1.0 in f64
    let hyper = Hyperparams::<f64>::unit();
    let layout_len = {
        use vaxcov_core::model::ParamLayout;
        ParamLayout::new(ModelKind::Idml, dims, 0).len
    };
    let mut row = Vec::with_capacity(layout_len);
    {
        use vaxcov_core::model::ParamLayout;
        ParamLayout::new(ModelKind::Idml, dims, 0).pack(&field, &hyper, &[], &mut row);
    }
    let mut data = Vec::new();
    for _ in 0..4 {
        data.extend_from_slice(&row);
    }
    let draws = Draws::from_rows(ModelKind::Idml, dims, 0, 1, 4, data);

    let maps = IndexMaps {
        countries: vec!["AAA".into(), "BBB".into()],
        vaccines: vec!["MCV1".into()],
        year_start: 2000,
        n_times: 1,
        region_of: [("AAA", "AFR"), ("BBB", "AFR")]
            .into_iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect(),
    };
    let mut denom = vaxcov_core::data::DenominatorTable::default();
    denom.insert("AAA", "MCV1", 2000, 600.0).unwrap();
    denom.insert("BBB", "MCV1", 2000, 400.0).unwrap();
    assert_eq!(inv_logit(40.0_f64), 1.0);
    assert_eq!(inv_logit(0.0_f64), 0.5);

    let regional = regional_aggregate(&draws, &maps, &denom).unwrap();
    assert_eq!(regional.rows.len(), 1);
    let row = &regional.rows[0];
    let agg_err = (row.mean_pct - 70.0)
        .abs()
        .max((row.q025_pct - 70.0).abs())
        .max((row.q975_pct - 70.0).abs());
    println!(
        "  regional weighted mean {} (err {agg_err:.2e})",
        row.mean_pct
    );

    // Perfect prediction: zero errors, 100% coverage.
    let mut truth = BTreeMap::new();
    let mut table = EstimateTable::<f64>::default();
    for (idx, year) in (2000..2010).enumerate() {
        let p = 35.0 + 4.0 * idx as f64;
        truth.insert(("AAA".to_string(), "MCV1".to_string(), year), p);
        table.rows.push(EstimateRow {
            country: "AAA".into(),
            vaccine: "MCV1".into(),
            year,
            mean_pct: p,
            q025_pct: p - 4.0,
            q50_pct: p,
            q975_pct: p + 4.0,
            is_prediction: false,
        });
    }
    let metrics = validation_metrics(&table, &truth).unwrap();
    println!(
        "  perfect-prediction metrics: bias {} rmse {} mae {} coverage {}",
        metrics.av_bias, metrics.rmse, metrics.mae, metrics.coverage95
    );
    verdict(
        8,
        "aggregation and metrics fixtures",
        agg_err < 1e-12
            && metrics.av_bias == 0.0
            && metrics.rmse == 0.0
            && metrics.mae == 0.0
            && metrics.coverage95 == 100.0,
    );
}

// ----------------------------------------------------------------------
// Criterion 9: fit determinism through the CLI.
// ----------------------------------------------------------------------
#[test]
fn criterion_9_cli_fit_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from(
        "code,region,year,antigen,coverage_category,coverage,sample_size,evidence,validity\n",
    );
    for year in 2000..=2004 {
        for (country, base) in [("NGA", 60.0), ("GHA", 72.0)] {
            csv.push_str(&format!(
                "{country},AFR,{year},MCV1,admin,{:.1},,,\n",
                base + (year - 2000) as f64
            ));
            if year % 2 == 0 {
                csv.push_str(&format!(
                    "{country},AFR,{year},MCV1,official,{:.1},,,\n",
                    base + 1.0
                ));
            }
        }
    }
    let data = dir.path().join("data.csv");
    std::fs::write(&data, csv).unwrap();

    let run = |out: &str| {
        let status = std::process::Command::new(env!("CARGO_BIN_EXE_vaxcov"))
            .args([
                "fit",
                "--data",
                data.to_str().unwrap(),
                "--chains",
                "2",
                "--iterations",
                "120",
                "--warmup",
                "60",
                "--seed",
                "31415",
                "--out-dir",
                dir.path().join(out).to_str().unwrap(),
            ])
            .status()
            .unwrap();
        assert!(status.success());
    };
    run("a");
    run("b");
    let a = std::fs::read(dir.path().join("a/AFR_draws.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b/AFR_draws.csv")).unwrap();
    println!("  two runs produced {} bytes each", a.len());
    verdict(9, "fit determinism (byte-identical draws)", a == b);
}
