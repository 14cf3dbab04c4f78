//! Subcommand implementations: thin bindings over the core pipeline.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};

use vaxcov_core::data::{
    merge_and_filter, parse_coverage_csv, parse_survey_csv, read_analysis_csv, write_analysis_csv,
    DenominatorTable, ICDataset, SourceKind, YoviTable,
};
use vaxcov_core::model::{ModelDims, ModelKind, Observations, PriorConfig};
use vaxcov_core::num::logit;
use vaxcov_core::posterior::{
    coverage_estimates, predict_forward, regional_aggregate, waic as compute_waic,
};
use vaxcov_core::preprocess::{
    apply_dtp_ratio, clamp_and_logit, clamp_proportion, recall_bias_adjust,
    select_survey_estimates, yovi_filter, IndexMaps, ProcessingReport,
};
use vaxcov_core::sampler::{run_chains, write_diagnostics_csv, ChainConfig, Draws};
use vaxcov_core::simulate::{
    desk_chain_config, desk_dims, full_scale_dims, generate_synthetic, run_experiment,
    ExperimentOptions, ForecastMode, ScenarioSpec,
};
use vaxcov_core::Scalar;

use crate::fitmeta::{discover, FitMeta};
use crate::runcfg::RunConfig;
use crate::{AggregateArgs, FitArgs, PredictArgs, PreprocessArgs, SimulateArgs, WaicArgs};

fn parse_years(spec: &str) -> Result<(i32, i32)> {
    let Some((a, b)) = spec.split_once(':') else {
        bail!("years must be START:END, got '{spec}'");
    };
    let start: i32 = a.trim().parse().context("bad start year")?;
    let end: i32 = b.trim().parse().context("bad end year")?;
    if start > end {
        bail!("year window start {start} exceeds end {end}");
    }
    Ok((start, end))
}

/// Third-dose/first-dose pairs eligible for the recall-bias adjustment.
fn recall_pairs() -> Vec<(String, String)> {
    vec![
        ("DTP3".to_string(), "DTP1".to_string()),
        ("PCV3".to_string(), "PCV1".to_string()),
    ]
}

pub fn preprocess(args: PreprocessArgs) -> Result<()> {
    let vaccines: Vec<String> = args
        .vaccines
        .split(',')
        .map(|v| v.trim().to_string())
        .filter(|v| !v.is_empty())
        .collect();
    if vaccines.is_empty() {
        bail!("no vaccines requested");
    }
    let (start, end) = parse_years(&args.years)?;

    let mut report = ProcessingReport::default();
    let mut ingest = |name: &str, parsed: &vaxcov_core::data::Parsed| {
        report.lines.push(format!(
            "ingested_{name}: rows {} parsed {} dropped {}",
            parsed.report.rows,
            parsed.report.parsed,
            parsed.report.dropped.len()
        ));
        for (line, reason) in &parsed.report.dropped {
            report
                .lines
                .push(format!("dropped_{name}: line {line} ({reason})"));
        }
    };

    let admin = parse_coverage_csv(&args.admin, SourceKind::Admin)?;
    ingest("admin", &admin);
    let official = parse_coverage_csv(&args.official, SourceKind::Official)?;
    ingest("official", &official);
    let survey = parse_survey_csv(&args.survey)?;
    ingest("survey", &survey);

    let survey_set = if args.no_recall {
        survey.dataset
    } else {
        recall_bias_adjust(&survey.dataset, &recall_pairs(), &mut report)
    };
    let survey_set = select_survey_estimates(&survey_set, args.min_sample_size, &mut report);

    let merged = merge_and_filter(
        &[admin.dataset, official.dataset, survey_set],
        &vaccines,
        start..=end,
        !args.keep_zero,
    )?;
    let final_set = if args.no_ratio {
        merged
    } else {
        apply_dtp_ratio(&merged, &mut report)
    };

    write_analysis_csv(&final_set, &args.out)?;

    let mut text = report.render();
    let provenance: Vec<&str> = final_set.provenance.iter().map(|f| f.as_str()).collect();
    let _ = writeln!(text, "records: {}", final_set.len());
    let _ = writeln!(text, "provenance: {}", provenance.join(","));
    std::fs::write(&args.report, text)
        .with_context(|| format!("writing {}", args.report.display()))?;

    println!(
        "preprocess: {} records -> {} (report: {})",
        final_set.len(),
        args.out.display(),
        args.report.display()
    );
    Ok(())
}

/// Builds the model observation grid from a dataset using existing index
/// maps, erroring on unknown labels or duplicate keys.
fn observations_for(set: &ICDataset, maps: &IndexMaps) -> Result<Observations<Scalar>> {
    let dims = maps.dims();
    let mut obs = Observations::new(dims);
    for r in &set.records {
        let i = maps
            .country_index(&r.country)
            .with_context(|| format!("country {} not in fit", r.country))?;
        let j = maps
            .vaccine_index(&r.vaccine)
            .with_context(|| format!("vaccine {} not in fit", r.vaccine))?;
        let t = r.year - maps.year_start;
        if t < 0 || t as usize >= maps.n_times {
            bail!("year {} outside fitted window", r.year);
        }
        let t = t as usize;
        if obs.get(r.source, i, j, t).is_some() {
            bail!(
                "duplicate observation for ({}, {}, {}, {})",
                r.country,
                r.vaccine,
                r.year,
                r.source
            );
        }
        obs.set(
            r.source,
            i,
            j,
            t,
            logit(clamp_proportion(r.coverage_pct / 100.0)),
        );
    }
    Ok(obs)
}

pub fn fit(args: FitArgs) -> Result<()> {
    let cfg = RunConfig::resolve(
        args.config.as_deref(),
        args.model.as_deref(),
        args.chains,
        args.iterations,
        args.warmup,
        args.thin,
        args.seed,
        args.pooled,
    )?;
    let mut priors = PriorConfig::<Scalar>::default();
    if let Some(path) = &args.prior_file {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading prior file {}", path.display()))?;
        priors.apply_kv(&text)?;
    }
    for kv in &args.priors {
        priors.apply_kv(kv)?;
    }

    let yovi = args.yovi.as_deref().map(YoviTable::from_csv).transpose()?;
    let dataset = read_analysis_csv(&args.data)?;
    if dataset.is_empty() {
        bail!("{}: no records", args.data.display());
    }
    std::fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    // Record the resolved run settings next to the artifacts.
    std::fs::write(args.out_dir.join("run_config.txt"), cfg.to_kv())
        .with_context(|| format!("writing {}", args.out_dir.display()))?;

    let units: Vec<(String, ICDataset)> = if cfg.pooled {
        vec![("ALL".to_string(), dataset)]
    } else {
        dataset
            .regions()
            .into_iter()
            .filter(|r| {
                args.region
                    .as_deref()
                    .is_none_or(|want| want.eq_ignore_ascii_case(r.as_str()))
            })
            .map(|r| (r.as_str().to_string(), dataset.filter_region(r)))
            .collect()
    };
    if units.is_empty() {
        bail!("no regions match the requested filter");
    }

    for (label, set) in units {
        let (observed, maps, _) = clamp_and_logit(&set);
        let dims = maps.dims();
        let mut obs = Observations::<Scalar>::new(dims);
        for o in &observed {
            if obs.get(o.source, o.country, o.vaccine, o.time).is_some() {
                bail!(
                    "{label}: duplicate ({}, {}, {}) {} record",
                    maps.countries[o.country],
                    maps.vaccines[o.vaccine],
                    maps.year_of(o.time),
                    o.source
                );
            }
            obs.set(o.source, o.country, o.vaccine, o.time, o.y);
        }

        let started = std::time::Instant::now();
        let (draws, diagnostics) = run_chains(cfg.model, &obs, &priors, &cfg.chain)?;
        let n_missing = match cfg.model {
            ModelKind::Bdsl => obs.n_missing(),
            ModelKind::Idml => 0,
        };

        draws.write_csv(&args.out_dir.join(format!("{label}_draws.csv")))?;
        write_diagnostics_csv(
            &diagnostics,
            &args.out_dir.join(format!("{label}_diagnostics.csv")),
        )?;
        let mut estimates = coverage_estimates(&draws, &maps);
        if let Some(yovi) = &yovi {
            let mut report = ProcessingReport::default();
            estimates = yovi_filter(&estimates, yovi, &mut report);
            for line in &report.lines {
                println!("fit {label}: {line}");
            }
        }
        estimates.write_csv(&args.out_dir.join(format!("{label}_estimates.csv")))?;
        FitMeta {
            label: label.clone(),
            model: cfg.model,
            maps,
            n_missing,
            seed: cfg.chain.seed,
        }
        .write(&args.out_dir.join(format!("{label}_meta.csv")))?;

        if diagnostics.pass {
            println!(
                "fit {label}: {} draws in {:.1?} (max R-hat {})",
                draws.n_draws(),
                started.elapsed(),
                diagnostics
                    .max_rhat
                    .map(|r| format!("{r:.3}"))
                    .unwrap_or_else(|| "NA".into()),
            );
        } else {
            println!(
                "fit {label}: {} draws in {:.1?}; warning: R-hat gate failed (max {})",
                draws.n_draws(),
                started.elapsed(),
                diagnostics
                    .max_rhat
                    .map(|r| format!("{r:.3}"))
                    .unwrap_or_else(|| "NA".into()),
            );
        }
    }
    Ok(())
}

fn load_fit(dir: &Path, meta_path: &Path) -> Result<(FitMeta, Draws<Scalar>)> {
    let meta = FitMeta::read(meta_path)?;
    let draws_path = dir.join(format!("{}_draws.csv", meta.label));
    let draws = Draws::read_csv(&draws_path, meta.model, meta.dims(), meta.n_missing)?;
    Ok((meta, draws))
}

pub fn predict(args: PredictArgs) -> Result<()> {
    if args.steps == 0 {
        bail!("steps must be >= 1");
    }
    let out_dir = args.out_dir.clone().unwrap_or_else(|| args.fit_dir.clone());
    std::fs::create_dir_all(&out_dir)?;
    for meta_path in discover(&args.fit_dir, args.region.as_deref())? {
        let (meta, draws) = load_fit(&args.fit_dir, &meta_path)?;
        let table = predict_forward(&draws, &meta.maps, args.steps, args.seed);
        let path = out_dir.join(format!("{}_predictions.csv", meta.label));
        table.write_csv(&path)?;
        println!(
            "predict {}: {} rows -> {}",
            meta.label,
            table.rows.len(),
            path.display()
        );
    }
    Ok(())
}

pub fn aggregate(args: AggregateArgs) -> Result<()> {
    let denominators = DenominatorTable::from_csv(&args.denominators)?;
    let out_dir = args.out_dir.clone().unwrap_or_else(|| args.fit_dir.clone());
    std::fs::create_dir_all(&out_dir)?;
    for meta_path in discover(&args.fit_dir, args.region.as_deref())? {
        let (meta, draws) = load_fit(&args.fit_dir, &meta_path)?;
        let table = regional_aggregate(&draws, &meta.maps, &denominators)?;
        let path = out_dir.join(format!("{}_regional.csv", meta.label));
        table.write_csv(&path)?;
        println!(
            "aggregate {}: {} rows -> {}",
            meta.label,
            table.rows.len(),
            path.display()
        );
    }
    Ok(())
}

pub fn waic(args: WaicArgs) -> Result<()> {
    let dataset = read_analysis_csv(&args.data)?;
    let mut rows: Vec<(String, Scalar, Scalar, Scalar)> = Vec::new();
    for meta_path in discover(&args.fit_dir, args.region.as_deref())? {
        let (meta, draws) = load_fit(&args.fit_dir, &meta_path)?;
        let subset = if meta.label == "ALL" {
            dataset.clone()
        } else {
            ICDataset {
                records: dataset
                    .records
                    .iter()
                    .filter(|r| r.region.as_str() == meta.label)
                    .cloned()
                    .collect(),
                provenance: dataset.provenance.clone(),
            }
        };
        if subset.is_empty() {
            bail!("no data rows for fit '{}'", meta.label);
        }
        let obs = observations_for(&subset, &meta.maps)?;
        let report = compute_waic(&draws, &obs)?;
        println!(
            "waic {}: gof {:.1} penalty {:.1} waic {:.1}",
            meta.label, report.gof, report.penalty, report.waic
        );
        rows.push((meta.label, report.gof, report.penalty, report.waic));
    }

    let mut w = csv::Writer::from_path(&args.out)
        .with_context(|| format!("writing {}", args.out.display()))?;
    w.write_record(["region", "gof", "penalty", "waic"])?;
    for (label, gof, penalty, waic) in rows {
        w.write_record([
            label.as_str(),
            &format!("{gof}"),
            &format!("{penalty}"),
            &format!("{waic}"),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn parse_dims(spec: &str) -> Result<ModelDims> {
    let parts: Vec<&str> = spec.split(',').collect();
    if parts.len() != 3 {
        bail!("dims must be C,V,T");
    }
    let dims = ModelDims {
        countries: parts[0].trim().parse().context("bad country count")?,
        vaccines: parts[1].trim().parse().context("bad vaccine count")?,
        times: parts[2].trim().parse().context("bad time count")?,
    };
    dims.validate()?;
    Ok(dims)
}

pub fn simulate(args: SimulateArgs) -> Result<()> {
    let dims = match (&args.dims, args.full_scale) {
        (Some(spec), _) => parse_dims(spec)?,
        (None, true) => full_scale_dims(),
        (None, false) => desk_dims(),
    };
    let mut chain = if args.full_scale && args.dims.is_none() {
        ChainConfig {
            seed: args.seed,
            ..ChainConfig::default()
        }
    } else {
        desk_chain_config(args.seed)
    };
    if let Some(v) = args.chains {
        chain.n_chains = v;
    }
    if let Some(v) = args.iterations {
        chain.iterations = v;
        chain.warmup = args.warmup.unwrap_or(v / 2);
    }
    if let Some(v) = args.warmup {
        chain.warmup = v;
    }
    chain.validate()?;

    let mode = match args.mode.as_str() {
        "rolling" => ForecastMode::Rolling,
        "fit-once" => ForecastMode::FitOnce,
        other => bail!("unknown forecast mode '{other}' (rolling|fit-once)"),
    };
    let scenario = ScenarioSpec::<Scalar>::standard(args.scenario)?;
    let options = ExperimentOptions {
        horizons: args.horizons,
        forecast_base: None,
        mode,
    };

    std::fs::create_dir_all(&args.out_dir)?;
    // Keep the generated datasets inspectable alongside the metrics.
    for kind in [ModelKind::Bdsl, ModelKind::Idml] {
        let synth = generate_synthetic(dims, &scenario, kind, args.seed)?;
        println!(
            "scenario {} {kind}: {} observations generated",
            args.scenario,
            synth.obs.n_observed_total()
        );
    }

    let report = run_experiment(&scenario, dims, &chain, &options, args.seed)?;
    let csv_path = args
        .out_dir
        .join(format!("scenario{}_metrics.csv", args.scenario));
    std::fs::write(&csv_path, report.to_csv_string())
        .with_context(|| format!("writing {}", csv_path.display()))?;
    let table_path = args
        .out_dir
        .join(format!("scenario{}_table.txt", args.scenario));
    std::fs::write(&table_path, report.render_text())
        .with_context(|| format!("writing {}", table_path.display()))?;

    print!("{}", report.render_text());
    println!("metrics -> {}", csv_path.display());
    Ok(())
}
