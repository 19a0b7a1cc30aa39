//! Small-noise Monte Carlo, the additive-noise Gaussian oracle and the
//! extrapolated slope `lim_{ε→0} -ε log P(u^ε ∈ A)`.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::fft::Fft3;
use crate::kernel::multiplier;
use crate::rng::derive_seed;
use crate::skeleton::{EventKind, EventProbe, EventSpec};
use crate::solver::{Coefficient, NoiseSource, Solver, SolverConfig};

/// Two-sided 95 % normal quantile.
pub const WILSON_Z: f64 = 1.959963984540054;
/// Rungs with fewer hits are flagged unreliable.
pub const MIN_HITS: u64 = 10;
pub const MIN_REPLICATES: usize = 100;

/// Wilson score interval for `hits` successes out of `m` trials.
pub fn wilson_interval(hits: u64, m: u64) -> (f64, f64) {
    let n = m as f64;
    let p = hits as f64 / n;
    let z2 = WILSON_Z * WILSON_Z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = WILSON_Z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    let lo = if hits == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if hits == m { 1.0 } else { (centre + half).min(1.0) };
    (lo, hi)
}

/// Upper standard normal tail `P(Z > x)`.
pub fn normal_tail(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

fn neg_eps_log(eps: f64, p: f64) -> f64 {
    if p >= 1.0 {
        0.0
    } else {
        -eps * p.ln()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityEstimate {
    pub event: String,
    pub threshold: f64,
    pub epsilon: f64,
    pub replicates: u64,
    pub hits: u64,
    pub p_hat: f64,
    pub lo: f64,
    pub hi: f64,
    pub seed: u64,
    pub unreliable: bool,
}

impl ProbabilityEstimate {
    pub fn from_counts(event: &EventSpec, epsilon: f64, hits: u64, replicates: u64, seed: u64) -> Self {
        let (lo, hi) = wilson_interval(hits, replicates);
        Self {
            event: event.name().to_string(),
            threshold: event.threshold,
            epsilon,
            replicates,
            hits,
            p_hat: hits as f64 / replicates as f64,
            lo,
            hi,
            seed,
            unreliable: hits < MIN_HITS,
        }
    }

    /// `-ε log p̂` with the interval `[-ε log hi, -ε log lo]`.
    pub fn neg_eps_log_p(&self) -> (f64, f64, f64) {
        let e = self.epsilon;
        (
            neg_eps_log(e, self.p_hat),
            neg_eps_log(e, self.hi),
            neg_eps_log(e, self.lo),
        )
    }
}

/// `Φ(u^ε)` for `m` replicates; replicate `i` draws its noise from
/// `derive_seed(seed, i)`, so a longer run extends a shorter one.
pub fn sample_functional(
    event: &EventSpec,
    config: &SolverConfig,
    epsilon: f64,
    m: usize,
    seed: u64,
    exec: Exec,
) -> Result<Vec<f64>> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::param(format!("epsilon must lie in ]0,1], got {epsilon}")));
    }
    let cfg = config.with_epsilon(epsilon).with_snapshots(event.snapshot_policy());
    let solver = Solver::new(&cfg)?;
    let probe = EventProbe::new(event, &cfg)?;
    const BLOCK: usize = 64;
    let blocks = m.div_ceil(BLOCK);
    let parts = exec.map(blocks, |b| -> Result<Vec<f64>> {
        let mut solver = solver.clone();
        (b * BLOCK..((b + 1) * BLOCK).min(m))
            .map(|i| {
                let traj = solver.solve(None, NoiseSource::Seed(derive_seed(seed, i as u64)))?;
                probe.value(&traj)
            })
            .collect()
    });
    let mut out = Vec::with_capacity(m);
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Monte Carlo estimate of `P(Φ(u^ε) ≥ r)` with a Wilson interval.
pub fn estimate_probability(
    event: &EventSpec,
    config: &SolverConfig,
    epsilon: f64,
    m: usize,
    seed: u64,
    exec: Exec,
) -> Result<ProbabilityEstimate> {
    if m < MIN_REPLICATES {
        return Err(Error::param(format!(
            "at least {MIN_REPLICATES} replicates are required, got {m}"
        )));
    }
    let values = sample_functional(event, config, epsilon, m, seed, exec)?;
    let hits = values.iter().filter(|v| **v >= event.threshold).count() as u64;
    Ok(ProbabilityEstimate::from_counts(event, epsilon, hits, m as u64, seed))
}

fn additive_sigma(config: &SolverConfig) -> Result<f64> {
    match (config.coeffs.sigma, config.coeffs.b) {
        (Coefficient::Constant { value }, b) if b.is_zero() && config.mask.is_none() => Ok(value),
        _ => Err(Error::param(
            "the Gaussian oracle needs constant sigma, b = 0 and unmasked noise",
        )),
    }
}

/// `Q = Σ_j dt Σ_k L^{-3} S_k m(T - t_j, ξ_k)² |Ĝ_k|²`, the variance of the
/// event functional of `u¹ - w` for `σ ≡ 1`.
pub fn gaussian_quadratic_form(event: &EventSpec, config: &SolverConfig) -> Result<f64> {
    config.validate()?;
    event.validate(&config.grid)?;
    let grid = config.grid;
    let density = config.noise.density_table(&grid)?;
    let profile: Vec<f64> = match &event.kind {
        EventKind::PointExceed { .. } => vec![1.0; grid.len()],
        EventKind::LinearExceed { g } => {
            let dv = grid.cell_volume();
            Fft3::new(&grid)
                .forward_real(&g.values)
                .iter()
                .map(|c| c.norm_sqr() * dv * dv)
                .collect()
        }
        EventKind::SupExceed { .. } => {
            return Err(Error::param(
                "the Gaussian oracle covers point_exceed and linear_exceed only",
            ))
        }
    };
    let rho = grid.xi_norms();
    let dt = config.dt();
    let w = density.weight();
    let mut q = 0.0;
    for j in 0..config.steps {
        let t = config.horizon - j as f64 * dt;
        let s: f64 = (0..grid.len())
            .map(|i| {
                let m = multiplier(t, rho[i]);
                density.values[i] * m * m * profile[i]
            })
            .sum();
        q += dt * w * s;
    }
    Ok(q)
}

/// `r² / (2 σ² Q)`.
pub fn gaussian_rate_oracle(event: &EventSpec, config: &SolverConfig) -> Result<f64> {
    let sigma = additive_sigma(config)?;
    let q = gaussian_quadratic_form(event, config)?;
    if event.threshold == 0.0 {
        return Ok(0.0);
    }
    Ok(event.threshold * event.threshold / (2.0 * sigma * sigma * q))
}

/// Exact `P(Φ(u^ε) ≥ r)` of the additive scheme.
pub fn gaussian_tail_probability(event: &EventSpec, config: &SolverConfig, epsilon: f64) -> Result<f64> {
    let sigma = additive_sigma(config)?;
    let q = gaussian_quadratic_form(event, config)?;
    Ok(normal_tail(event.threshold / (epsilon * sigma * sigma * q).sqrt()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeOptions {
    pub replicates: usize,
    pub seed: u64,
    /// Relative tolerance of the extrapolated rate against the reference.
    pub tolerance: f64,
    /// External reference rate, typically `I_hat` from the minimiser.
    pub reference: Option<f64>,
    pub exec: Exec,
}

impl Default for SlopeOptions {
    fn default() -> Self {
        Self {
            replicates: 10_000,
            seed: 0,
            tolerance: 0.1,
            reference: None,
            exec: Exec::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeRung {
    pub estimate: ProbabilityEstimate,
    pub neg_eps_log_p: f64,
    pub lo: f64,
    pub hi: f64,
    pub reliable: bool,
    /// Closed-form `-ε log p` when the Gaussian oracle applies.
    pub oracle: Option<f64>,
    pub covered: Option<bool>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    /// Rate estimate: the fitted value at `ε = 0`.
    pub intercept: f64,
    pub slope: f64,
    pub points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeReport {
    pub event: serde_json::Value,
    pub rungs: Vec<SlopeRung>,
    pub fit: Option<SlopeFit>,
    pub insufficient: bool,
    pub oracle_rate: Option<f64>,
    pub reference_rate: Option<f64>,
    pub relative_error: Option<f64>,
    pub tolerance: f64,
    pub pass: Option<bool>,
}

pub const SLOPE_CSV_HEADER: [&str; 9] = ["epsilon", "M", "hits", "p_hat", "lo", "hi", "neg_eps_log_p", "lo", "hi"];

impl SlopeReport {
    pub fn csv_rows(&self) -> Vec<[String; 9]> {
        self.rungs
            .iter()
            .map(|r| {
                let e = &r.estimate;
                [
                    format!("{}", e.epsilon),
                    format!("{}", e.replicates),
                    format!("{}", e.hits),
                    format!("{:e}", e.p_hat),
                    format!("{:e}", e.lo),
                    format!("{:e}", e.hi),
                    format!("{:e}", r.neg_eps_log_p),
                    format!("{:e}", r.lo),
                    format!("{:e}", r.hi),
                ]
            })
            .collect()
    }

    /// Number of rungs whose interval covers the closed-form value.
    pub fn covered_rungs(&self) -> usize {
        self.rungs.iter().filter(|r| r.covered == Some(true)).count()
    }

    /// `|-ε log p̂ - I_ref|` per rung against the reference rate.
    pub fn reference_gaps(&self) -> Option<Vec<f64>> {
        let r = self.reference_rate?;
        Some(self.rungs.iter().map(|g| (g.neg_eps_log_p - r).abs()).collect())
    }

    /// Rungs whose gap is no larger than the previous one; the first rung is
    /// compared with the trivial estimate `-ε log 1 = 0`, whose gap is `I_ref`.
    pub fn shrinking_rungs(&self) -> Option<usize> {
        let gaps = self.reference_gaps()?;
        let mut prev = self.reference_rate?.abs();
        let mut count = 0;
        for g in gaps {
            if g <= prev {
                count += 1;
            }
            prev = g;
        }
        Some(count)
    }
}

/// Weighted least squares of `y` against `x`; returns `(intercept, slope)`.
pub fn weighted_line_fit(x: &[f64], y: &[f64], w: &[f64]) -> (f64, f64) {
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let my = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(w).map(|(a, b)| b * (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).zip(w).map(|((a, c), b)| b * (a - mx) * (c - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (my - slope * mx, slope)
}

/// Runs the ε-ladder and extrapolates `-ε log p̂` to `ε = 0`.
pub fn ldp_slope(
    event: &EventSpec,
    config: &SolverConfig,
    epsilons: &[f64],
    opts: &SlopeOptions,
) -> Result<SlopeReport> {
    if epsilons.is_empty() || epsilons.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::param(
            "the epsilon ladder must be non-empty and strictly decreasing",
        ));
    }
    let oracle_rate = gaussian_rate_oracle(event, config).ok();
    let mut rungs = Vec::with_capacity(epsilons.len());
    for (i, &eps) in epsilons.iter().enumerate() {
        let seed = derive_seed(opts.seed, i as u64);
        let estimate = estimate_probability(event, config, eps, opts.replicates, seed, opts.exec)?;
        let (v, lo, hi) = estimate.neg_eps_log_p();
        let oracle = match oracle_rate {
            Some(_) => Some(neg_eps_log(eps, gaussian_tail_probability(event, config, eps)?)),
            None => None,
        };
        let covered = oracle.map(|o| o >= lo && o <= hi);
        rungs.push(SlopeRung {
            reliable: !estimate.unreliable,
            estimate,
            neg_eps_log_p: v,
            lo,
            hi,
            oracle,
            covered,
        });
    }
    let reliable: Vec<&SlopeRung> = rungs.iter().filter(|r| r.reliable).collect();
    let insufficient = reliable.len() < 3;
    let fit = (!insufficient).then(|| {
        let x: Vec<f64> = reliable.iter().map(|r| r.estimate.epsilon).collect();
        let y: Vec<f64> = reliable.iter().map(|r| r.neg_eps_log_p).collect();
        let w: Vec<f64> = reliable.iter().map(|r| 1.0 / (r.hi - r.lo).max(1e-12)).collect();
        let (intercept, slope) = weighted_line_fit(&x, &y, &w);
        SlopeFit {
            intercept,
            slope,
            points: x.len(),
        }
    });
    let reference_rate = opts.reference.or(oracle_rate);
    let relative_error = match (fit, reference_rate) {
        (Some(f), Some(r)) if r > 0.0 => Some((f.intercept - r).abs() / r),
        (Some(f), Some(_)) => Some(f.intercept.abs()),
        _ => None,
    };
    Ok(SlopeReport {
        event: event.echo(),
        rungs,
        fit,
        insufficient,
        oracle_rate,
        reference_rate,
        relative_error,
        tolerance: opts.tolerance,
        pass: relative_error.map(|e| e <= opts.tolerance),
    })
}
