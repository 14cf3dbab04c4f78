//! Convergence diagnostics: split potential-scale-reduction and bulk
//! effective sample size over the retained draws.

use crate::num::Real;

/// Gate applied to the largest split R-hat across parameters.
pub const RHAT_GATE: f64 = 1.05;

#[derive(Debug, Clone)]
pub struct ParamDiagnostic<F> {
    pub name: String,
    /// `None` when the statistic is undefined (zero within-chain variance).
    pub rhat: Option<F>,
    pub ess: F,
}

#[derive(Debug, Clone)]
pub struct DiagnosticsReport<F> {
    pub params: Vec<ParamDiagnostic<F>>,
    pub max_rhat: Option<F>,
    /// True when every defined split R-hat is below [`RHAT_GATE`].
    pub pass: bool,
}

impl<F: Real> DiagnosticsReport<F> {
    pub fn from_params(params: Vec<ParamDiagnostic<F>>) -> Self {
        let max_rhat = params
            .iter()
            .filter_map(|p| p.rhat)
            .fold(None, |acc: Option<F>, r| {
                Some(acc.map_or(r, |a| if r > a { r } else { a }))
            });
        let pass = params
            .iter()
            .filter_map(|p| p.rhat)
            .all(|r| r < F::of(RHAT_GATE));
        DiagnosticsReport {
            params,
            max_rhat,
            pass,
        }
    }
}

/// Splits each chain into its first and second half, dropping the middle
/// draw of odd-length chains. Chains are first trimmed to equal length.
pub fn split_chains<F: Real>(chains: &[Vec<F>]) -> Vec<Vec<F>> {
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    let half = n / 2;
    let mut out = Vec::with_capacity(2 * chains.len());
    for chain in chains {
        out.push(chain[..half].to_vec());
        out.push(chain[n - half..n].to_vec());
    }
    out
}

fn mean<F: Real>(xs: &[F]) -> F {
    xs.iter().copied().sum::<F>() / F::of(xs.len() as f64)
}

fn sample_variance<F: Real>(xs: &[F], m: F) -> F {
    let n = xs.len();
    if n < 2 {
        return F::zero();
    }
    xs.iter().map(|&x| (x - m) * (x - m)).sum::<F>() / F::of((n - 1) as f64)
}

/// Split potential-scale-reduction statistic:
/// `sqrt((W (n-1)/n + B/n) / W)` over the half-chains. Returns `None`
/// ("undefined") when the within-half-chain variance vanishes.
///
/// Requires at least two chains with four retained draws each.
pub fn split_rhat<F: Real>(chains: &[Vec<F>]) -> Option<F> {
    if chains.len() < 2 || chains.iter().any(|c| c.len() < 4) {
        return None;
    }
    let halves = split_chains(chains);
    let n = F::of(halves[0].len() as f64);
    let means: Vec<F> = halves.iter().map(|h| mean(h)).collect();
    let vars: Vec<F> = halves
        .iter()
        .zip(&means)
        .map(|(h, &m)| sample_variance(h, m))
        .collect();
    let w = mean(&vars);
    if !(w > F::zero()) || !w.is_finite() {
        return None;
    }
    let grand = mean(&means);
    let b = n * sample_variance(&means, grand);
    let var_plus = w * (n - F::one()) / n + b / n;
    Some((var_plus / w).sqrt())
}

/// Bulk effective sample size over the split half-chains, with Geyer's
/// initial monotone positive-pair truncation of the autocorrelation sum.
/// Returns zero when the draws carry no variance. The estimate is capped
/// at the total number of draws.
pub fn bulk_ess<F: Real>(chains: &[Vec<F>]) -> F {
    if chains.is_empty() || chains.iter().any(|c| c.len() < 4) {
        return F::zero();
    }
    let halves = split_chains(chains);
    let n = halves[0].len();
    let m = halves.len();
    let total = F::of((m * n) as f64);

    let means: Vec<F> = halves.iter().map(|h| mean(h)).collect();
    let vars: Vec<F> = halves
        .iter()
        .zip(&means)
        .map(|(h, &mu)| sample_variance(h, mu))
        .collect();
    let w = mean(&vars);
    let grand = mean(&means);
    let b_over_n = sample_variance(&means, grand);
    let var_plus = w * F::of((n - 1) as f64) / F::of(n as f64) + b_over_n;
    if !(var_plus > F::zero()) || !var_plus.is_finite() {
        return F::zero();
    }

    // Biased autocovariance at a lag, averaged over half-chains.
    let acov = |lag: usize| -> F {
        let mut acc = F::zero();
        for (h, &mu) in halves.iter().zip(&means) {
            let mut s = F::zero();
            for i in 0..n - lag {
                s += (h[i] - mu) * (h[i + lag] - mu);
            }
            acc += s / F::of(n as f64);
        }
        acc / F::of(m as f64)
    };

    let rho = |lag: usize, acov_lag: F| -> F {
        let _ = lag;
        F::one() - (w - acov_lag) / var_plus
    };

    let mut pair_sum = F::zero();
    let mut prev_pair = F::infinity();
    let mut lag = 0usize;
    while lag + 1 < n {
        let r_even = if lag == 0 {
            F::one()
        } else {
            rho(lag, acov(lag))
        };
        let r_odd = rho(lag + 1, acov(lag + 1));
        let mut pair = r_even + r_odd;
        if pair <= F::zero() {
            break;
        }
        // Initial monotone sequence.
        if pair > prev_pair {
            pair = prev_pair;
        }
        pair_sum += pair;
        prev_pair = pair;
        lag += 2;
    }
    let tau = F::of(2.0) * pair_sum - F::one();
    let tau = tau.max(F::of(1e-12));
    (total / tau).min(total)
}
