//! Turns retained draws into deliverables: smoothed coverage estimates,
//! forward predictions, population-weighted regional aggregates, WAIC and
//! validation metrics.

use std::collections::BTreeMap;
use std::path::Path;

use crate::data::{DenominatorTable, DTP_RATIO_CODE};
use crate::error::{Error, Result};
use crate::model::ModelKind;
use crate::num::{inv_logit, ln_normal_pdf, Real};
use crate::preprocess::IndexMaps;
use crate::sampler::{rng::stream_rng, Draws};

/// One summarized (country, vaccine, year) estimate on the 0-100% scale.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRow<F> {
    pub country: String,
    pub vaccine: String,
    pub year: i32,
    pub mean_pct: F,
    pub q025_pct: F,
    pub q50_pct: F,
    pub q975_pct: F,
    pub is_prediction: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateTable<F> {
    pub rows: Vec<EstimateRow<F>>,
}

impl<F> Default for EstimateTable<F> {
    fn default() -> Self {
        EstimateTable { rows: Vec::new() }
    }
}

impl<F: Real> EstimateTable<F> {
    pub fn sort(&mut self) {
        self.rows.sort_by(|a, b| {
            (&a.country, &a.vaccine, a.year).cmp(&(&b.country, &b.vaccine, b.year))
        });
    }

    /// Appends another table's rows (predictions after estimates).
    pub fn extend(&mut self, other: EstimateTable<F>) {
        self.rows.extend(other.rows);
    }

    /// `country,vaccine,time,mean,2.5%,50%,97.5%,prediction` CSV.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_summary_csv(path, "country", self.rows.iter().map(row_fields))
    }
}

/// One summarized (region, vaccine, year) aggregate.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionalRow<F> {
    pub region: String,
    pub vaccine: String,
    pub year: i32,
    pub mean_pct: F,
    pub q025_pct: F,
    pub q50_pct: F,
    pub q975_pct: F,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionalTable<F> {
    pub rows: Vec<RegionalRow<F>>,
}

impl<F> Default for RegionalTable<F> {
    fn default() -> Self {
        RegionalTable { rows: Vec::new() }
    }
}

impl<F: Real> RegionalTable<F> {
    /// `region,vaccine,time,mean,2.5%,50%,97.5%,prediction` CSV.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_summary_csv(
            path,
            "region",
            self.rows.iter().map(|r| {
                (
                    r.region.clone(),
                    r.vaccine.clone(),
                    r.year,
                    [r.mean_pct, r.q025_pct, r.q50_pct, r.q975_pct].map(|v| v.to_f64_lossy()),
                    false,
                )
            }),
        )
    }
}

/// (label, vaccine, year, [mean, q2.5, q50, q97.5], prediction flag).
type SummaryFields = (String, String, i32, [f64; 4], bool);

fn row_fields<F: Real>(r: &EstimateRow<F>) -> SummaryFields {
    (
        r.country.clone(),
        r.vaccine.clone(),
        r.year,
        [r.mean_pct, r.q025_pct, r.q50_pct, r.q975_pct].map(|v| v.to_f64_lossy()),
        r.is_prediction,
    )
}

fn write_summary_csv(
    path: &Path,
    label: &str,
    rows: impl Iterator<Item = SummaryFields>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Invalid(format!("{other:?}")),
    })?;
    let err = |e: csv::Error| Error::Invalid(format!("writing {}: {e}", path.display()));
    w.write_record([
        label,
        "vaccine",
        "time",
        "mean",
        "2.5%",
        "50%",
        "97.5%",
        "prediction",
    ])
    .map_err(err)?;
    for (name, vaccine, year, stats, pred) in rows {
        w.write_record([
            name.as_str(),
            vaccine.as_str(),
            &year.to_string(),
            &format!("{}", stats[0]),
            &format!("{}", stats[1]),
            &format!("{}", stats[2]),
            &format!("{}", stats[3]),
            if pred { "true" } else { "false" },
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// WAIC decomposition: `gof = -2 lppd`, `penalty = p_waic`, and the
/// identity `waic = gof + 2 penalty`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaicReport<F> {
    pub gof: F,
    pub penalty: F,
    pub waic: F,
}

impl<F: Real> WaicReport<F> {
    pub fn new(gof: F, penalty: F) -> Self {
        WaicReport {
            gof,
            penalty,
            waic: gof + F::of(2.0) * penalty,
        }
    }
}

/// Point-estimate accuracy metrics on the percent scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationMetrics<F> {
    pub av_bias: F,
    pub rmse: F,
    pub mae: F,
    /// 100 x fraction of keys whose truth lies inside the 95% interval.
    pub coverage95: F,
    pub correlation: F,
    pub n: usize,
}

/// Type-7 (linear interpolation) sample quantile via partial selection.
/// `xs` is reordered in place.
pub fn quantile_type7<F: Real>(xs: &mut [F], prob: f64) -> F {
    assert!(!xs.is_empty(), "quantile of empty sample");
    assert!((0.0..=1.0).contains(&prob));
    let n = xs.len();
    let h = prob * (n - 1) as f64;
    let lo = h.floor() as usize;
    let frac = F::of(h - h.floor());
    let cmp = |a: &F, b: &F| a.partial_cmp(b).expect("quantile over non-finite values");
    let (_, lo_val, above) = xs.select_nth_unstable_by(lo, cmp);
    let lo_val = *lo_val;
    if frac > F::zero() && !above.is_empty() {
        let hi_val = above
            .iter()
            .copied()
            .fold(F::infinity(), |a, b| if b < a { b } else { a });
        lo_val + frac * (hi_val - lo_val)
    } else {
        lo_val
    }
}

fn mean_of<F: Real>(xs: &[F]) -> F {
    xs.iter().copied().sum::<F>() / F::of(xs.len() as f64)
}

/// (mean, 2.5%, 50%, 97.5%) of a proportion sample, in percent.
fn summarize_pct<F: Real>(proportions: &mut [F]) -> [F; 4] {
    let hundred = F::of(100.0);
    let mean = mean_of(proportions) * hundred;
    let q025 = quantile_type7(proportions, 0.025) * hundred;
    let q50 = quantile_type7(proportions, 0.5) * hundred;
    let q975 = quantile_type7(proportions, 0.975) * hundred;
    [mean, q025, q50, q975]
}

/// Ratio back-transform bookkeeping: which vaccine index holds the ratio
/// pseudo-vaccine, which holds its base dose, and the emitted code.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioInfo {
    pub ratio_vaccine: usize,
    pub base_vaccine: usize,
    pub output_code: String,
}

/// Detects the DTP ratio parameterization from the fitted vaccine list.
pub fn detect_ratio(maps: &IndexMaps) -> Option<RatioInfo> {
    let ratio_vaccine = maps.vaccine_index(DTP_RATIO_CODE)?;
    let base_vaccine = maps.vaccine_index("DTP1")?;
    Some(RatioInfo {
        ratio_vaccine,
        base_vaccine,
        output_code: "DTP3".to_string(),
    })
}

/// Per-draw coverage proportions for one country: fills `out` with
/// `inv_logit(mu)` laid out `(vaccine * T + t) * L + draw`.
fn country_proportions<F: Real>(draws: &Draws<F>, i: usize, out: &mut [F]) {
    let dims = draws.dims;
    let l_total = draws.n_draws();
    for (l, row) in draws.rows().enumerate() {
        for j in 0..dims.vaccines {
            for t in 0..dims.times {
                out[(j * dims.times + t) * l_total + l] =
                    inv_logit(draws.layout.mu_at(row, i, j, t));
            }
        }
    }
}

fn push_summary<F: Real>(
    table: &mut EstimateTable<F>,
    country: &str,
    vaccine: &str,
    year: i32,
    stats: [F; 4],
    is_prediction: bool,
) {
    table.rows.push(EstimateRow {
        country: country.to_string(),
        vaccine: vaccine.to_string(),
        year,
        mean_pct: stats[0],
        q025_pct: stats[1],
        q50_pct: stats[2],
        q975_pct: stats[3],
        is_prediction,
    });
}

/// Smoothed source-free coverage estimates: per draw the shared mean is
/// inverse-logit transformed (ratio vaccines are converted back to
/// third-dose coverage by per-draw multiplication with the first dose),
/// then the mean and equal-tailed 2.5/50/97.5% quantiles are taken across
/// all pooled draws, reported in percent.
pub fn coverage_estimates<F: Real>(draws: &Draws<F>, maps: &IndexMaps) -> EstimateTable<F> {
    let dims = draws.dims;
    let l_total = draws.n_draws();
    let ratio = detect_ratio(maps);
    let mut table = EstimateTable::default();
    let mut p = vec![F::zero(); dims.vaccines * dims.times * l_total];
    let mut buf = vec![F::zero(); l_total];

    for i in 0..dims.countries {
        country_proportions(draws, i, &mut p);
        for j in 0..dims.vaccines {
            if ratio.as_ref().is_some_and(|r| r.ratio_vaccine == j) {
                continue;
            }
            for t in 0..dims.times {
                buf.copy_from_slice(&p[(j * dims.times + t) * l_total..][..l_total]);
                let stats = summarize_pct(&mut buf);
                push_summary(
                    &mut table,
                    &maps.countries[i],
                    &maps.vaccines[j],
                    maps.year_of(t),
                    stats,
                    false,
                );
            }
        }
        if let Some(r) = &ratio {
            for t in 0..dims.times {
                let base = &p[(r.base_vaccine * dims.times + t) * l_total..][..l_total];
                let ratio_p = &p[(r.ratio_vaccine * dims.times + t) * l_total..][..l_total];
                for l in 0..l_total {
                    buf[l] = base[l] * ratio_p[l];
                }
                let stats = summarize_pct(&mut buf);
                push_summary(
                    &mut table,
                    &maps.countries[i],
                    &r.output_code,
                    maps.year_of(t),
                    stats,
                    false,
                );
            }
        }
    }
    table.sort();
    table
}

/// Advances every dynamic effect forward by `steps` years per draw using
/// the draw's own (rho, sigma) AR(1) dynamics, carries the static effects,
/// and summarizes exactly like [`coverage_estimates`]. Rows carry
/// `is_prediction = true`.
pub fn predict_forward<F: Real>(
    draws: &Draws<F>,
    maps: &IndexMaps,
    steps: usize,
    seed: u64,
) -> EstimateTable<F> {
    assert!(steps >= 1, "predict_forward requires steps >= 1");
    let dims = draws.dims;
    let t_last = dims.times - 1;
    let l_total = draws.n_draws();
    let ratio = detect_ratio(maps);
    let layout = draws.layout;

    // p[(i, j, s)][l] with s = 0..steps.
    let idx = |i: usize, j: usize, s: usize| ((i * dims.vaccines + j) * steps + s) * l_total;
    let mut p = vec![F::zero(); dims.countries * dims.vaccines * steps * l_total];

    let mut gamma_ext = vec![F::zero(); steps];
    let mut phi_ext = vec![F::zero(); dims.countries * steps];
    let mut delta_ext = vec![F::zero(); dims.vaccines * steps];
    let mut omega_ext = vec![F::zero(); dims.countries * dims.vaccines * steps];

    for (l, row) in draws.rows().enumerate() {
        let mut rng = stream_rng(seed, &[l as u64]);
        let hyper = layout.unpack_hyper(row);

        fn advance<F: Real>(
            prev: F,
            rho: F,
            sigma: F,
            out: &mut [F],
            rng: &mut rand_chacha::ChaCha8Rng,
        ) {
            let mut x = prev;
            for slot in out.iter_mut() {
                x = rho * x + sigma * F::std_normal(rng);
                *slot = x;
            }
        }

        advance(
            row[layout.gamma + t_last],
            hyper.rho_gamma,
            hyper.sigma_gamma,
            &mut gamma_ext,
            &mut rng,
        );
        for i in 0..dims.countries {
            advance(
                row[layout.phi + i * dims.times + t_last],
                hyper.rho_phi,
                hyper.sigma_phi,
                &mut phi_ext[i * steps..(i + 1) * steps],
                &mut rng,
            );
        }
        for j in 0..dims.vaccines {
            advance(
                row[layout.delta + j * dims.times + t_last],
                hyper.rho_delta,
                hyper.sigma_delta,
                &mut delta_ext[j * steps..(j + 1) * steps],
                &mut rng,
            );
        }
        for b in 0..dims.countries * dims.vaccines {
            advance(
                row[layout.omega + b * dims.times + t_last],
                hyper.rho_omega,
                hyper.sigma_omega,
                &mut omega_ext[b * steps..(b + 1) * steps],
                &mut rng,
            );
        }

        let base = match draws.kind {
            ModelKind::Bdsl => row[0],
            ModelKind::Idml => F::zero(),
        };
        for i in 0..dims.countries {
            for j in 0..dims.vaccines {
                let pair = i * dims.vaccines + j;
                for s in 0..steps {
                    let mu = base
                        + row[layout.beta + i]
                        + row[layout.alpha + j]
                        + gamma_ext[s]
                        + phi_ext[i * steps + s]
                        + delta_ext[j * steps + s]
                        + row[layout.psi + pair]
                        + omega_ext[pair * steps + s];
                    p[idx(i, j, s) + l] = inv_logit(mu);
                }
            }
        }
    }

    let mut table = EstimateTable::default();
    let mut buf = vec![F::zero(); l_total];
    for i in 0..dims.countries {
        for s in 0..steps {
            let year = maps.year_of(t_last) + 1 + s as i32;
            for j in 0..dims.vaccines {
                if ratio.as_ref().is_some_and(|r| r.ratio_vaccine == j) {
                    continue;
                }
                buf.copy_from_slice(&p[idx(i, j, s)..][..l_total]);
                let stats = summarize_pct(&mut buf);
                push_summary(
                    &mut table,
                    &maps.countries[i],
                    &maps.vaccines[j],
                    year,
                    stats,
                    true,
                );
            }
            if let Some(r) = &ratio {
                let b = &p[idx(i, r.base_vaccine, s)..][..l_total];
                let q = &p[idx(i, r.ratio_vaccine, s)..][..l_total];
                for l in 0..l_total {
                    buf[l] = b[l] * q[l];
                }
                let stats = summarize_pct(&mut buf);
                push_summary(
                    &mut table,
                    &maps.countries[i],
                    &r.output_code,
                    year,
                    stats,
                    true,
                );
            }
        }
    }
    table.sort();
    table
}

#[derive(Debug, Clone, Copy)]
enum VaccineSource {
    Direct(usize),
    Product(usize, usize),
}

/// Population-weighted regional aggregation: per draw,
/// `p_region = sum_i q_i p_i` with weights `q_i` normalized within each
/// (region, vaccine, year) from the denominator table. A missing
/// denominator for any member country is an error listing the keys.
pub fn regional_aggregate<F: Real>(
    draws: &Draws<F>,
    maps: &IndexMaps,
    denominators: &DenominatorTable,
) -> Result<RegionalTable<F>> {
    let dims = draws.dims;
    let l_total = draws.n_draws();
    let ratio = detect_ratio(maps);

    // Output vaccines: fitted codes with the ratio pseudo-vaccine replaced
    // by its back-transformed dose.
    let mut out_vaccines: Vec<(String, VaccineSource)> = Vec::new();
    for j in 0..dims.vaccines {
        match &ratio {
            Some(r) if r.ratio_vaccine == j => out_vaccines.push((
                r.output_code.clone(),
                VaccineSource::Product(r.base_vaccine, j),
            )),
            _ => out_vaccines.push((maps.vaccines[j].clone(), VaccineSource::Direct(j))),
        }
    }

    let mut regions: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, country) in maps.countries.iter().enumerate() {
        let region = maps
            .region_of
            .get(country)
            .cloned()
            .unwrap_or_else(|| "UNKNOWN".to_string());
        regions.entry(region).or_default().push(i);
    }

    let mut table = RegionalTable::default();
    let mut buf = vec![F::zero(); l_total];
    for (region, members) in &regions {
        // Normalized weights per (vaccine, year).
        let mut weights = vec![F::zero(); out_vaccines.len() * dims.times * members.len()];
        let mut missing: Vec<String> = Vec::new();
        for (vj, (code, _)) in out_vaccines.iter().enumerate() {
            for t in 0..dims.times {
                let year = maps.year_of(t);
                let mut total = 0.0f64;
                let mut pops = vec![0.0f64; members.len()];
                for (mi, &i) in members.iter().enumerate() {
                    match denominators.get(&maps.countries[i], code, year) {
                        Some(pop) => {
                            pops[mi] = pop;
                            total += pop;
                        }
                        None => missing.push(format!("({}, {code}, {year})", maps.countries[i])),
                    }
                }
                if total > 0.0 {
                    for (mi, pop) in pops.iter().enumerate() {
                        weights[(vj * dims.times + t) * members.len() + mi] = F::of(pop / total);
                    }
                }
            }
        }
        if !missing.is_empty() {
            missing.dedup();
            return Err(Error::MissingDenominator(missing.join(", ")));
        }

        let mut acc = vec![F::zero(); out_vaccines.len() * dims.times * l_total];
        for (l, row) in draws.rows().enumerate() {
            for (mi, &i) in members.iter().enumerate() {
                for (vj, (_, source)) in out_vaccines.iter().enumerate() {
                    for t in 0..dims.times {
                        let p = match *source {
                            VaccineSource::Direct(j) => inv_logit(draws.layout.mu_at(row, i, j, t)),
                            VaccineSource::Product(j1, jr) => {
                                inv_logit(draws.layout.mu_at(row, i, j1, t))
                                    * inv_logit(draws.layout.mu_at(row, i, jr, t))
                            }
                        };
                        let w = weights[(vj * dims.times + t) * members.len() + mi];
                        acc[(vj * dims.times + t) * l_total + l] += w * p;
                    }
                }
            }
        }

        for (vj, (code, _)) in out_vaccines.iter().enumerate() {
            for t in 0..dims.times {
                buf.copy_from_slice(&acc[(vj * dims.times + t) * l_total..][..l_total]);
                let stats = summarize_pct(&mut buf);
                table.rows.push(RegionalRow {
                    region: region.clone(),
                    vaccine: code.clone(),
                    year: maps.year_of(t),
                    mean_pct: stats[0],
                    q025_pct: stats[1],
                    q50_pct: stats[2],
                    q975_pct: stats[3],
                });
            }
        }
    }
    Ok(table)
}

/// Watanabe-Akaike information criterion over the observed data points
/// under each source's own likelihood. `lppd` uses log-sum-exp across
/// draws; the penalty sums the sample variance of the pointwise log
/// densities. Requires at least two retained draws.
pub fn waic<F: Real>(
    draws: &Draws<F>,
    obs: &crate::model::Observations<F>,
) -> Result<WaicReport<F>> {
    let l_total = draws.n_draws();
    if l_total < 2 {
        return Err(Error::Domain(
            "WAIC requires at least two retained draws".into(),
        ));
    }
    let dims = draws.dims;
    assert_eq!(dims, obs.dims(), "draws and observations must share dims");
    let layout = draws.layout;

    let mut points = Vec::new();
    for k in 0..3 {
        for i in 0..dims.countries {
            for j in 0..dims.vaccines {
                for t in 0..dims.times {
                    let cell = dims.cell(i, j, t);
                    if obs.is_present(k, cell) {
                        points.push((k, i, j, t, obs.value(k, cell)));
                    }
                }
            }
        }
    }

    let ln_l = F::of(l_total as f64).ln();
    let mut lppd = F::zero();
    let mut p_waic = F::zero();
    let chunk_size = 512usize;
    let mut lls = vec![F::zero(); chunk_size * l_total];

    for chunk in points.chunks(chunk_size) {
        for (l, row) in draws.rows().enumerate() {
            let hyper = layout.unpack_hyper(row);
            for (n, &(k, i, j, t, y)) in chunk.iter().enumerate() {
                let mu = layout.mu_at(row, i, j, t);
                let (mean, sd) = match draws.kind {
                    ModelKind::Bdsl => (mu + row[1 + k], hyper.sigma),
                    ModelKind::Idml => (row[k] + mu, hyper.sigma_src[k]),
                };
                lls[n * l_total + l] = ln_normal_pdf(y, mean, sd);
            }
        }
        for n in 0..chunk.len() {
            let series = &lls[n * l_total..(n + 1) * l_total];
            let max = series.iter().copied().fold(F::neg_infinity(), F::max);
            let sum_exp: F = series.iter().map(|&x| (x - max).exp()).sum();
            lppd += max + sum_exp.ln() - ln_l;
            let m = mean_of(series);
            let var =
                series.iter().map(|&x| (x - m) * (x - m)).sum::<F>() / F::of((l_total - 1) as f64);
            p_waic += var;
        }
    }

    Ok(WaicReport::new(F::of(-2.0) * lppd, p_waic))
}

/// Accuracy metrics of predicted vs true coverage on the percent scale,
/// joined on (country, vaccine, year).
pub fn validation_metrics<F: Real>(
    predicted: &EstimateTable<F>,
    truth: &BTreeMap<(String, String, i32), F>,
) -> Result<ValidationMetrics<F>> {
    let mut pred = Vec::new();
    let mut obs = Vec::new();
    let mut covered = 0usize;
    for row in &predicted.rows {
        let key = (row.country.clone(), row.vaccine.clone(), row.year);
        if let Some(&truth_pct) = truth.get(&key) {
            pred.push(row.mean_pct);
            obs.push(truth_pct);
            if row.q025_pct <= truth_pct && truth_pct <= row.q975_pct {
                covered += 1;
            }
        }
    }
    if pred.is_empty() {
        return Err(Error::Domain(
            "validation_metrics: no overlapping keys between prediction and truth".into(),
        ));
    }
    let n = pred.len();
    let nf = F::of(n as f64);
    let mut av_bias = F::zero();
    let mut rmse = F::zero();
    let mut mae = F::zero();
    for (&p, &o) in pred.iter().zip(&obs) {
        let e = p - o;
        av_bias += e;
        rmse += e * e;
        mae += e.abs();
    }
    av_bias /= nf;
    rmse = (rmse / nf).sqrt();
    mae /= nf;
    let coverage95 = F::of(100.0) * F::of(covered as f64) / nf;

    let mp = mean_of(&pred);
    let mo = mean_of(&obs);
    let mut sxy = F::zero();
    let mut sxx = F::zero();
    let mut syy = F::zero();
    for (&p, &o) in pred.iter().zip(&obs) {
        sxy += (p - mp) * (o - mo);
        sxx += (p - mp) * (p - mp);
        syy += (o - mo) * (o - mo);
    }
    let correlation = if sxx > F::zero() && syy > F::zero() {
        sxy / (sxx * syy).sqrt()
    } else {
        F::zero()
    };

    Ok(ValidationMetrics {
        av_bias,
        rmse,
        mae,
        coverage95,
        correlation,
        n,
    })
}
