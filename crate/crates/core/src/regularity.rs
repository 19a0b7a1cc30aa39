//! Hölder-space machinery on `[0,T] × D`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::covariance::CovarianceSpec;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::grid::{Field, Grid};
use crate::kernel::InitialData;
use crate::rng::generator;
use crate::solver::Trajectory;

/// Axis-aligned lattice box `D = [lo, hi)` (index ranges per axis).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub lo: [usize; 3],
    pub hi: [usize; 3],
}

impl Region {
    pub fn new(grid: &Grid, lo: [usize; 3], hi: [usize; 3]) -> Result<Self> {
        let r = Self { lo, hi };
        r.validate(grid)?;
        Ok(r)
    }

    pub fn validate(&self, grid: &Grid) -> Result<()> {
        for a in 0..3 {
            if self.lo[a] >= self.hi[a] {
                return Err(Error::EmptyRegion(format!(
                    "axis {a} has lo {} ≥ hi {}",
                    self.lo[a], self.hi[a]
                )));
            }
            if self.hi[a] > grid.n {
                return Err(Error::param(format!(
                    "region axis {a} ends at {} beyond N = {}",
                    self.hi[a], grid.n
                )));
            }
        }
        Ok(())
    }

    pub fn full(grid: &Grid) -> Self {
        Self {
            lo: [0; 3],
            hi: [grid.n; 3],
        }
    }

    /// Cube of `side` points centred on the grid centre.
    pub fn central(grid: &Grid, side: usize) -> Result<Self> {
        let side = side.clamp(1, grid.n);
        let lo = (grid.n - side) / 2;
        Self::new(grid, [lo; 3], [lo + side; 3])
    }

    pub fn shape(&self) -> [usize; 3] {
        [
            self.hi[0] - self.lo[0],
            self.hi[1] - self.lo[1],
            self.hi[2] - self.lo[2],
        ]
    }

    pub fn len(&self) -> usize {
        self.shape().iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, grid: &Grid, idx: usize) -> bool {
        let c = grid.coords(idx);
        (0..3).all(|a| c[a] >= self.lo[a] && c[a] < self.hi[a])
    }

    /// Flat grid indices, x fastest.
    pub fn indices(&self, grid: &Grid) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.len());
        for z in self.lo[2]..self.hi[2] {
            for y in self.lo[1]..self.hi[1] {
                for x in self.lo[0]..self.hi[0] {
                    out.push(grid.index(x, y, z));
                }
            }
        }
        out
    }

    /// Euclidean distance from the lattice point `idx` to the closed box
    /// spanned by the region's points (nearest periodic image).
    pub fn distance(&self, grid: &Grid, idx: usize) -> f64 {
        let c = grid.coords(idx);
        let n = grid.n as i64;
        let mut d2 = 0.0;
        for a in 0..3 {
            let (lo, hi) = (self.lo[a] as i64, self.hi[a] as i64 - 1);
            let best = [-n, 0, n]
                .iter()
                .map(|off| {
                    let x = c[a] as i64 + off;
                    if x < lo {
                        lo - x
                    } else if x > hi {
                        x - hi
                    } else {
                        0
                    }
                })
                .min()
                .unwrap();
            let d = best as f64 * grid.dx();
            d2 += d * d;
        }
        d2.sqrt()
    }

    /// Grid mask of the light cone `K^D_a(t) = {y : dist(y, D) ≤ a (T - t)}`.
    pub fn light_cone(&self, grid: &Grid, a: f64, t: f64, horizon: f64) -> Vec<bool> {
        let radius = a * (horizon - t).max(0.0) + 1e-12 * grid.dx();
        (0..grid.len()).map(|i| self.distance(grid, i) <= radius).collect()
    }
}

/// `𝓘 = ]0, γ₁ ∧ γ₂ ∧ (2-β)/2 ∧ (1+δ)/2[`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentInterval {
    pub gamma1: f64,
    pub gamma2: f64,
    pub beta: f64,
    pub delta: f64,
}

impl ExponentInterval {
    pub fn new(init: &InitialData, spec: &CovarianceSpec) -> Self {
        Self {
            gamma1: init.gamma1,
            gamma2: init.gamma2,
            beta: spec.beta,
            delta: spec.delta,
        }
    }

    pub fn upper(&self) -> f64 {
        self.gamma1
            .min(self.gamma2)
            .min((2.0 - self.beta) / 2.0)
            .min((1.0 + self.delta) / 2.0)
    }

    pub fn contains(&self, alpha: f64) -> bool {
        alpha > 0.0 && alpha < self.upper()
    }
}

pub const DEFAULT_PAIR_BUDGET: usize = 10_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairOptions {
    pub budget: usize,
    pub exec: Exec,
}

impl Default for PairOptions {
    fn default() -> Self {
        Self {
            budget: DEFAULT_PAIR_BUDGET,
            exec: Exec::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolderReport {
    pub seminorm: f64,
    pub sup_norm: f64,
    pub norm: f64,
    pub pairs: usize,
    pub exhaustive: bool,
}

/// Space-time lattice offset between two samples.
#[derive(Clone, Copy, Debug)]
struct Offset {
    ds: usize,
    d: [i64; 3],
    bases: usize,
    approx_gauge: f64,
}

struct PairScan<'a> {
    traj: &'a Trajectory,
    grid: Grid,
    region: Region,
    offsets: Vec<Offset>,
    /// Per offset: stride through its base points (1 = exhaustive).
    strides: Vec<usize>,
    exhaustive: bool,
}

impl<'a> PairScan<'a> {
    fn new(traj: &'a Trajectory, region: &Region, budget: usize) -> Result<Self> {
        let grid = traj.grid;
        region.validate(&grid)?;
        if traj.is_empty() {
            return Err(Error::EmptyRegion("trajectory has no snapshots".into()));
        }
        let sh = region.shape();
        let ns = traj.len();
        let dx = grid.dx();
        let mean_dt = if ns > 1 {
            traj.time(ns - 1) / (ns - 1) as f64
        } else {
            0.0
        };
        let mut offsets = Vec::new();
        let r = |a: usize| -(sh[a] as i64 - 1)..=(sh[a] as i64 - 1);
        for ds in 0..ns {
            for dz in r(2) {
                for dy in r(1) {
                    for dxi in r(0) {
                        let d = [dxi, dy, dz];
                        if ds == 0 && (dz, dy, dxi) <= (0, 0, 0) {
                            continue;
                        }
                        let bases = (ns - ds) * (0..3).map(|a| sh[a] - d[a].unsigned_abs() as usize).product::<usize>();
                        let len = ((dxi * dxi + dy * dy + dz * dz) as f64).sqrt() * dx;
                        offsets.push(Offset {
                            ds,
                            d,
                            bases,
                            approx_gauge: ds as f64 * mean_dt + len,
                        });
                    }
                }
            }
        }
        offsets.sort_by(|a, b| {
            a.approx_gauge
                .total_cmp(&b.approx_gauge)
                .then((a.ds, a.d).cmp(&(b.ds, b.d)))
        });
        let total: usize = offsets.iter().map(|o| o.bases).sum();
        let exhaustive = total <= budget;
        let mut strides = vec![1; offsets.len()];
        if !exhaustive {
            let half = budget / 2;
            let mut used = 0;
            let mut k = 0;
            while k < offsets.len() && used + offsets[k].bases <= half {
                used += offsets[k].bases;
                k += 1;
            }
            let rest = offsets.len() - k;
            let quota = ((budget - used) / rest.max(1)).max(1);
            for (o, s) in offsets[k..].iter().zip(strides[k..].iter_mut()) {
                *s = o.bases.div_ceil(quota).max(1);
            }
        }
        Ok(Self {
            traj,
            grid,
            region: *region,
            offsets,
            strides,
            exhaustive,
        })
    }

    /// Visits the selected pairs of offset `k` as `(gauge, |Δg|)`.
    fn visit(&self, k: usize, mut f: impl FnMut(f64, f64)) -> usize {
        let o = self.offsets[k];
        let stride = self.strides[k];
        let sh = self.region.shape();
        let lo = |a: usize| (-o.d[a]).max(0) as usize;
        let span: [usize; 3] = std::array::from_fn(|a| sh[a] - o.d[a].unsigned_abs() as usize);
        let per_t = span[0] * span[1] * span[2];
        let dx = self.grid.dx();
        let len = ((o.d[0] * o.d[0] + o.d[1] * o.d[1] + o.d[2] * o.d[2]) as f64).sqrt() * dx;
        let mut count = 0;
        let mut b = stride / 2;
        while b < o.bases {
            let s = b / per_t;
            let rem = b % per_t;
            let (x, y, z) = (rem % span[0], (rem / span[0]) % span[1], rem / (span[0] * span[1]));
            let p = [
                x + lo(0) + self.region.lo[0],
                y + lo(1) + self.region.lo[1],
                z + lo(2) + self.region.lo[2],
            ];
            let q: [usize; 3] = std::array::from_fn(|a| (p[a] as i64 + o.d[a]) as usize);
            let i = self.grid.index(p[0], p[1], p[2]);
            let j = self.grid.index(q[0], q[1], q[2]);
            let a = self.traj.snapshots[s].values[i];
            let c = self.traj.snapshots[s + o.ds].values[j];
            let gauge = (self.traj.time(s + o.ds) - self.traj.time(s)).abs() + len;
            f(gauge, (a - c).abs());
            count += 1;
            b += stride;
        }
        count
    }

    /// Runs `f` over chunks of offsets and returns per-chunk results in order.
    fn map_chunks<T: Send>(&self, exec: Exec, f: impl Fn(std::ops::Range<usize>) -> T + Sync + Send) -> Vec<T>
    where
        Self: Sync,
    {
        let chunk = 256;
        let chunks = self.offsets.len().div_ceil(chunk);
        exec.map(chunks, |c| f(c * chunk..((c + 1) * chunk).min(self.offsets.len())))
    }

    fn sup_norm(&self) -> f64 {
        let idx = self.region.indices(&self.grid);
        self.traj
            .snapshots
            .iter()
            .flat_map(|s| idx.iter().map(move |&i| s.values[i].abs()))
            .fold(0.0, f64::max)
    }
}

/// Hölder norm on `{t_j} × D` in the gauge `|Δt| + |Δx|`.
pub fn holder_report(traj: &Trajectory, alpha: f64, region: &Region, opts: &PairOptions) -> Result<HolderReport> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::param(format!("alpha must lie in ]0,1], got {alpha}")));
    }
    let scan = PairScan::new(traj, region, opts.budget)?;
    let parts = scan.map_chunks(opts.exec, |range| {
        let mut best: f64 = 0.0;
        let mut pairs = 0;
        for k in range {
            pairs += scan.visit(k, |g, d| best = best.max(d / g.powf(alpha)));
        }
        (best, pairs)
    });
    let seminorm = parts.iter().map(|p| p.0).fold(0.0, f64::max);
    let pairs = parts.iter().map(|p| p.1).sum();
    let sup_norm = scan.sup_norm();
    Ok(HolderReport {
        seminorm,
        sup_norm,
        norm: seminorm + sup_norm,
        pairs,
        exhaustive: scan.exhaustive,
    })
}

/// `‖g‖_α` with the default pair budget.
pub fn holder_norm(traj: &Trajectory, alpha: f64, region: &Region) -> Result<f64> {
    Ok(holder_report(traj, alpha, region, &PairOptions::default())?.norm)
}

/// `O_g(δ) = sup_{gauge < δ} |Δg| / gauge^{α'}` for every `δ`.
pub fn modulus(
    traj: &Trajectory,
    alpha_prime: f64,
    deltas: &[f64],
    region: &Region,
    opts: &PairOptions,
) -> Result<Vec<f64>> {
    if !(alpha_prime > 0.0 && alpha_prime < 1.0) {
        return Err(Error::param(format!("alpha' must lie in ]0,1[, got {alpha_prime}")));
    }
    if deltas.iter().any(|d| !(*d > 0.0)) {
        return Err(Error::param("deltas must be positive"));
    }
    let mut sorted = deltas.to_vec();
    sorted.sort_by(f64::total_cmp);
    let scan = PairScan::new(traj, region, opts.budget)?;
    let parts = scan.map_chunks(opts.exec, |range| {
        let mut bins = vec![0.0f64; sorted.len()];
        for k in range {
            scan.visit(k, |g, d| {
                let b = sorted.partition_point(|&x| x <= g);
                if b < bins.len() {
                    bins[b] = bins[b].max(d / g.powf(alpha_prime));
                }
            });
        }
        bins
    });
    let mut bins = vec![0.0f64; sorted.len()];
    for p in parts {
        bins.iter_mut().zip(p).for_each(|(a, b)| *a = a.max(b));
    }
    for i in 1..bins.len() {
        bins[i] = bins[i].max(bins[i - 1]);
    }
    Ok(deltas.iter().map(|d| bins[sorted.partition_point(|x| x < d)]).collect())
}

/// `(Σ_x |f|^q dx³ + Σ_{x ≠ y} |f(x) - f(y)|^q / |x - y|^{3+γq} dx⁶)^{1/q}`
/// over the points of `region`, summed lag by lag.
pub fn sobolev_norm(field: &Field, gamma: f64, q: f64, region: &Region, exec: Exec) -> Result<f64> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::param(format!("gamma must lie in ]0,1[, got {gamma}")));
    }
    if !(q >= 1.0) {
        return Err(Error::param(format!("q must be at least 1, got {q}")));
    }
    let grid = field.grid;
    region.validate(&grid)?;
    let dv = grid.cell_volume();
    let dx = grid.dx();
    let sh = region.shape();
    let lp: f64 = region
        .indices(&grid)
        .iter()
        .map(|&i| field.values[i].abs().powf(q))
        .sum::<f64>()
        * dv;
    let mut lags = Vec::new();
    for dz in 0..sh[2] as i64 {
        for dy in -(sh[1] as i64 - 1)..sh[1] as i64 {
            for dxi in -(sh[0] as i64 - 1)..sh[0] as i64 {
                if (dz, dy, dxi) > (0, 0, 0) {
                    lags.push([dxi, dy, dz]);
                }
            }
        }
    }
    let expo = 3.0 + gamma * q;
    let values = &field.values;
    let per_lag = exec.map(lags.len(), |k| {
        let d = lags[k];
        let r = ((d[0] * d[0] + d[1] * d[1] + d[2] * d[2]) as f64).sqrt() * dx;
        let lo: [usize; 3] = std::array::from_fn(|a| region.lo[a] + (-d[a]).max(0) as usize);
        let hi: [usize; 3] = std::array::from_fn(|a| (region.hi[a] as i64 - d[a].max(0)) as usize);
        let mut s = 0.0;
        for z in lo[2]..hi[2] {
            for y in lo[1]..hi[1] {
                for x in lo[0]..hi[0] {
                    let i = grid.index(x, y, z);
                    let j = grid.index(
                        (x as i64 + d[0]) as usize,
                        (y as i64 + d[1]) as usize,
                        (z as i64 + d[2]) as usize,
                    );
                    s += (values[i] - values[j]).abs().powf(q);
                }
            }
        }
        2.0 * s / r.powf(expo)
    });
    let semi: f64 = per_lag.iter().sum::<f64>() * dv * dv;
    Ok((lp + semi).powf(1.0 / q))
}

/// Space-time increment `(t_J - steps·dt, x) → (t_J, x + offset·dx)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lag {
    pub steps: usize,
    pub offset: [i64; 3],
}

impl Lag {
    pub fn spatial(offset: [i64; 3]) -> Self {
        Self { steps: 0, offset }
    }

    pub fn gauge(&self, grid: &Grid, dt: f64) -> f64 {
        let o = self.offset;
        self.steps as f64 * dt + ((o[0] * o[0] + o[1] * o[1] + o[2] * o[2]) as f64).sqrt() * grid.dx()
    }
}

pub const MIN_TRAJECTORIES: usize = 100;
pub const DEFAULT_BOOTSTRAP: usize = 200;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LagMoment {
    pub lag: Lag,
    pub gauge: f64,
    pub moment: f64,
    /// `log moment - fitted line` at this lag.
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub alpha_hat: f64,
    pub ci: [f64; 2],
    pub q: f64,
    pub slope: f64,
    pub trajectories: usize,
    pub bootstrap: usize,
    pub lags: Vec<LagMoment>,
}

/// Streaming estimator of `E|u(t, x) - u(s, y)|^q` per lag; trajectories are
/// ingested one at a time and only their per-lag moments are kept.
#[derive(Clone, Debug)]
pub struct IncrementAccumulator {
    grid: Grid,
    dt: f64,
    q: f64,
    lags: Vec<Lag>,
    points: Vec<usize>,
    per_traj: Vec<Vec<f64>>,
}

impl IncrementAccumulator {
    pub fn new(grid: Grid, dt: f64, q: f64, lags: &[Lag], region: &Region) -> Result<Self> {
        if !(q >= 1.0) {
            return Err(Error::param(format!("q must be at least 1, got {q}")));
        }
        region.validate(&grid)?;
        let mut gauges: Vec<f64> = lags.iter().map(|l| l.gauge(&grid, dt)).collect();
        gauges.sort_by(f64::total_cmp);
        gauges.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs());
        if gauges.len() < 4 || gauges[0] <= 0.0 || gauges[gauges.len() - 1] < 10.0 * gauges[0] {
            return Err(Error::param(
                "degenerate lag set: need at least 4 distinct positive lags spanning a decade",
            ));
        }
        Ok(Self {
            grid,
            dt,
            q,
            lags: lags.to_vec(),
            points: region.indices(&grid),
            per_traj: Vec::new(),
        })
    }

    pub fn ingest(&mut self, traj: &Trajectory) -> Result<()> {
        if traj.grid != self.grid {
            return Err(Error::param("trajectory grid does not match the accumulator"));
        }
        let last = *traj.steps.last().unwrap();
        let end = traj.final_snapshot();
        let mut row = Vec::with_capacity(self.lags.len());
        for lag in &self.lags {
            let start = last
                .checked_sub(lag.steps)
                .and_then(|s| traj.at_step(s))
                .ok_or_else(|| Error::param(format!("trajectory lacks the snapshot needed by lag {lag:?}")))?;
            let s: f64 = self
                .points
                .iter()
                .map(|&i| {
                    (end.values[self.grid.shift(i, lag.offset)] - start.values[i])
                        .abs()
                        .powf(self.q)
                })
                .sum();
            row.push(s / self.points.len() as f64);
        }
        self.per_traj.push(row);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.per_traj.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_traj.is_empty()
    }

    fn fit(&self, sample: &[usize]) -> (f64, Vec<f64>) {
        let n = sample.len() as f64;
        let k = self.lags.len();
        let mut mean = vec![0.0; k];
        let mut sq = vec![0.0; k];
        for &t in sample {
            for l in 0..k {
                let v = self.per_traj[t][l];
                mean[l] += v;
                sq[l] += v * v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let var: Vec<f64> = (0..k).map(|l| (sq[l] / n - mean[l] * mean[l]).max(0.0)).collect();
        let weights: Vec<f64> = if var.iter().all(|v| *v > 0.0) {
            (0..k).map(|l| n * mean[l] * mean[l] / var[l]).collect()
        } else {
            vec![1.0; k]
        };
        let x: Vec<f64> = self.lags.iter().map(|l| l.gauge(&self.grid, self.dt).ln()).collect();
        let y: Vec<f64> = mean.iter().map(|m| m.ln()).collect();
        let (a, b) = crate::ldp::weighted_line_fit(&x, &y, &weights);
        (b, (0..k).map(|l| y[l] - (a + b * x[l])).collect())
    }

    /// Log-log fit of moment against gauge; `α̂ = slope / q` with a
    /// percentile bootstrap interval over trajectories.
    pub fn finish(&self, bootstrap: usize, seed: u64) -> Result<ExponentFit> {
        let n = self.per_traj.len();
        if n < MIN_TRAJECTORIES {
            return Err(Error::param(format!(
                "at least {MIN_TRAJECTORIES} trajectories are required, got {n}"
            )));
        }
        if self.per_traj.iter().flatten().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::param("increment moments must be positive and finite"));
        }
        let all: Vec<usize> = (0..n).collect();
        let (slope, residuals) = self.fit(&all);
        let mut rng = generator(seed);
        let mut boots: Vec<f64> = (0..bootstrap)
            .map(|_| {
                let s: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
                self.fit(&s).0 / self.q
            })
            .collect();
        boots.sort_by(f64::total_cmp);
        let alpha = slope / self.q;
        let ci = if boots.is_empty() {
            [alpha, alpha]
        } else {
            let at = |p: f64| boots[((p * (boots.len() - 1) as f64).round() as usize).min(boots.len() - 1)];
            [at(0.025), at(0.975)]
        };
        let lags = self
            .lags
            .iter()
            .zip(&residuals)
            .enumerate()
            .map(|(l, (lag, r))| LagMoment {
                lag: *lag,
                gauge: lag.gauge(&self.grid, self.dt),
                moment: all.iter().map(|&t| self.per_traj[t][l]).sum::<f64>() / n as f64,
                residual: *r,
            })
            .collect();
        Ok(ExponentFit {
            alpha_hat: alpha,
            ci,
            q: self.q,
            slope,
            trajectories: n,
            bootstrap,
            lags,
        })
    }
}

/// Increment exponent of an ensemble of trajectories.
pub fn increment_exponent(
    ensemble: &[Trajectory],
    q: f64,
    lags: &[Lag],
    region: &Region,
    seed: u64,
) -> Result<ExponentFit> {
    let first = ensemble.first().ok_or_else(|| Error::param("empty ensemble"))?;
    let mut acc = IncrementAccumulator::new(first.grid, first.dt, q, lags, region)?;
    for t in ensemble {
        acc.ingest(t)?;
    }
    acc.finish(DEFAULT_BOOTSTRAP, seed)
}
