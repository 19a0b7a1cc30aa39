use serde_json::{json, Value};
use swlab_core::covariance::NoiseSampler;
use swlab_core::fft::Fft3;
use swlab_core::kernel::{dalang_integral, InitialData};
use swlab_core::ldp::{gaussian_rate_oracle, ldp_slope, SlopeOptions, SLOPE_CSV_HEADER};
use swlab_core::regularity::{holder_report, modulus, IncrementAccumulator, Lag, PairOptions};
use swlab_core::rng::derive_seed;
use swlab_core::skeleton::{minimize_rate, rate_functional, skeleton_solve, RateOptions};
use swlab_core::solver::{NoiseSource, SnapshotPolicy, Solver};
use swlab_core::{
    CoefficientSpec, Control, CovarianceSpec, EventSpec, Exec, ExponentInterval, Field, Grid, Region, SolverConfig,
    Trajectory,
};

use crate::config::{EventKindName, ExperimentConfig, ReferenceRate};
use crate::output::{num, RunDir};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Subcommand {
    Simulate,
    Skeleton,
    RateMin,
    LdpSlope,
    Holder,
    NoiseCheck,
    KernelCheck,
}

impl Subcommand {
    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Simulate => "simulate",
            Subcommand::Skeleton => "skeleton",
            Subcommand::RateMin => "rate-min",
            Subcommand::LdpSlope => "ldp-slope",
            Subcommand::Holder => "holder",
            Subcommand::NoiseCheck => "noise-check",
            Subcommand::KernelCheck => "kernel-check",
        }
    }
}

#[derive(Debug)]
pub enum Failure {
    Validation(String),
    Numerical { message: String, details: Value },
    Io(std::io::Error),
}

impl From<swlab_core::Error> for Failure {
    fn from(e: swlab_core::Error) -> Self {
        if e.is_numerical() {
            let details = match &e {
                swlab_core::Error::PicardDiverged {
                    iterations,
                    last_gap,
                    gaps,
                } => {
                    json!({ "iterations": iterations, "last_gap": last_gap, "gaps": gaps })
                }
                swlab_core::Error::NonFinite { step } => json!({ "step": step }),
                swlab_core::Error::NotPositiveDefinite { index, value } => {
                    json!({ "index": index, "value": value })
                }
                _ => Value::Null,
            };
            Failure::Numerical {
                message: e.to_string(),
                details,
            }
        } else {
            Failure::Validation(e.to_string())
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e)
    }
}

pub type Outcome<T> = std::result::Result<T, Failure>;

/// Everything derived from the config before any output is written, so
/// validation errors never leave a run directory behind.
pub struct Setup {
    pub cfg: ExperimentConfig,
    pub grid: Grid,
    pub spec: CovarianceSpec,
    pub init: InitialData,
    pub solver: SolverConfig,
    pub exec: Exec,
}

impl Setup {
    pub fn new(cfg: ExperimentConfig, exec: Exec) -> Outcome<Self> {
        let grid = Grid::new(cfg.grid.l, cfg.grid.n)?;
        let spec = CovarianceSpec::new(cfg.noise.beta, cfg.noise.phi, cfg.noise.delta)?;
        let base = InitialData::from_family(grid, &cfg.init.family);
        let init = InitialData::new(base.v0, base.v0_tilde, cfg.init.gamma1, cfg.init.gamma2)?;
        let coeffs = CoefficientSpec {
            sigma: cfg.coeffs.sigma,
            b: cfg.coeffs.b,
        };
        let solver = SolverConfig::new(
            grid,
            cfg.time.t,
            cfg.time.j,
            init.clone(),
            spec,
            coeffs,
            cfg.noise.epsilon,
        )?
        .with_snapshots(cfg.time.snapshots);
        Ok(Self {
            cfg,
            grid,
            spec,
            init,
            solver,
            exec,
        })
    }

    pub fn event(&self) -> Outcome<EventSpec> {
        let e = &self.cfg.event;
        let grid = self.grid;
        let event = match e.kind {
            EventKindName::PointExceed => {
                let c = grid.n / 2;
                EventSpec::point(e.site.unwrap_or([c, c, c]), e.threshold)
            }
            EventKindName::SupExceed => EventSpec::sup(Region::central(&grid, e.region_side)?, e.threshold),
            EventKindName::LinearExceed => EventSpec::linear(cosine(grid, e.test_k), e.threshold),
        };
        event.validate(&grid)?;
        Ok(event)
    }

    pub fn rate_options(&self) -> RateOptions {
        let o = &self.cfg.optimizer;
        RateOptions {
            truncation: o.k,
            stages: o.stages,
            lambda0: o.lambda0,
            lambda_growth: o.lambda_growth,
            max_iters: o.max_iters,
            restarts: o.restarts,
            seed: self.cfg.noise.seed,
            feasibility_tol: o.feasibility_tol,
            kappa0: o.kappa0,
            restart_scale: o.restart_scale,
            bound: o.bound,
            exec: self.exec,
        }
    }

    fn control(&self) -> Outcome<Control> {
        let c = &self.cfg.control;
        let density = self.spec.density_table(&self.grid)?;
        let profile = cosine(self.grid, c.k);
        let dt = self.solver.dt();
        let fields: Vec<Field> = (0..self.solver.steps)
            .map(|j| {
                let s = if c.frequency == 0.0 {
                    1.0
                } else {
                    (c.frequency * j as f64 * dt).sin()
                };
                Field::new(self.grid, profile.values.iter().map(|v| c.amplitude * s * v).collect())
            })
            .collect::<swlab_core::Result<_>>()?;
        Ok(Control::from_fields(&fields, dt, &density)?)
    }

    /// Checks the subcommand-specific inputs up front.
    pub fn validate_for(&self, sub: Subcommand) -> Outcome<()> {
        let bad = |m: String| Err(Failure::Validation(m));
        match sub {
            Subcommand::RateMin => {
                self.event()?;
                if self.cfg.optimizer.restarts == 0 || self.cfg.optimizer.stages == 0 {
                    return bad("optimizer.restarts and optimizer.stages must be positive".into());
                }
            }
            Subcommand::LdpSlope => {
                let event = self.event()?;
                let l = &self.cfg.ladder;
                if l.epsilons.is_empty() || l.epsilons.windows(2).any(|w| w[1] >= w[0]) {
                    return bad("ladder.epsilons must be non-empty and strictly decreasing".into());
                }
                if l.epsilons.iter().any(|e| !(*e > 0.0 && *e <= 1.0)) {
                    return bad("ladder.epsilons must lie in ]0,1]".into());
                }
                if l.m < swlab_core::ldp::MIN_REPLICATES {
                    return bad(format!("ladder.M must be at least {}", swlab_core::ldp::MIN_REPLICATES));
                }
                if l.reference == ReferenceRate::Oracle {
                    gaussian_rate_oracle(&event, &self.solver)?;
                }
            }
            Subcommand::Holder => {
                let r = &self.cfg.regularity;
                if r.trajectories < swlab_core::regularity::MIN_TRAJECTORIES {
                    return bad(format!(
                        "regularity.trajectories must be at least {}",
                        swlab_core::regularity::MIN_TRAJECTORIES
                    ));
                }
                if !(r.alpha > 0.0 && r.alpha <= 1.0) || !(r.alpha_prime > 0.0 && r.alpha_prime < 1.0) {
                    return bad("regularity.alpha must lie in ]0,1] and alpha_prime in ]0,1[".into());
                }
                let region = Region::central(&self.grid, r.region_side)?;
                IncrementAccumulator::new(self.grid, self.solver.dt(), r.q, &self.lags(), &region)?;
            }
            Subcommand::NoiseCheck => {
                let c = &self.cfg.checks;
                if c.draws == 0 || c.lags.is_empty() || c.lags.iter().any(|&l| l == 0 || l >= self.grid.n) {
                    return bad("checks.draws must be positive and checks.lags within ]0,N[".into());
                }
            }
            Subcommand::KernelCheck => {
                let c = &self.cfg.checks;
                if c.times.len() < 2 || c.times.iter().any(|t| !(*t > 0.0)) {
                    return bad("checks.times needs at least two positive times".into());
                }
                for &b in &c.betas {
                    CovarianceSpec::riesz(b)?;
                }
            }
            Subcommand::Simulate | Subcommand::Skeleton => {}
        }
        Ok(())
    }

    fn lags(&self) -> Vec<Lag> {
        self.cfg
            .regularity
            .lags
            .iter()
            .map(|&k| Lag::spatial([k, 0, 0]))
            .collect()
    }
}

fn cosine(grid: Grid, k: [i64; 3]) -> Field {
    let s = std::f64::consts::TAU / grid.l;
    Field::from_fn(grid, |x| {
        (s * (k[0] as f64 * x[0] + k[1] as f64 * x[1] + k[2] as f64 * x[2])).cos()
    })
}

pub fn execute(sub: Subcommand, setup: &Setup, dir: &RunDir) -> Outcome<()> {
    match sub {
        Subcommand::Simulate => simulate(setup, dir),
        Subcommand::Skeleton => skeleton(setup, dir),
        Subcommand::RateMin => rate_min(setup, dir),
        Subcommand::LdpSlope => slope(setup, dir),
        Subcommand::Holder => holder(setup, dir),
        Subcommand::NoiseCheck => noise_check(setup, dir),
        Subcommand::KernelCheck => kernel_check(setup, dir),
    }
}

/// Field dumps, manifest and per-snapshot summary of a trajectory measured
/// against the homogeneous solution.
fn write_trajectory(setup: &Setup, dir: &RunDir, traj: &Trajectory, seed: Option<u64>) -> Outcome<Value> {
    let w = Solver::new(&setup.solver)?.homogeneous(&traj.steps)?;
    let mut rows = Vec::new();
    let mut files = Vec::new();
    for (i, (u, w)) in traj.snapshots.iter().zip(&w).enumerate() {
        let step = traj.steps[i];
        let time = step as f64 * traj.dt;
        let mean = u.values.iter().sum::<f64>() / u.values.len() as f64;
        let dev = u.sub(w).sup_norm();
        rows.push(vec![
            step.to_string(),
            num(time),
            num(u.sup_norm()),
            num(mean),
            num(dev),
        ]);
        if setup.cfg.output.dump_fields {
            let file = format!("fields/u_{step:06}.swe3");
            dir.field(&file, u)?;
            files.push(json!({ "step": step, "time": time, "file": file }));
        }
    }
    dir.csv(
        "summary.csv",
        &["step", "time", "sup_abs", "mean", "sup_dev_from_w"],
        rows,
    )?;
    if setup.cfg.output.dump_fields {
        dir.json_always(
            "fields/manifest.json",
            json!({
                "seed": seed,
                "J": setup.solver.steps,
                "dt": setup.solver.dt(),
                "T": setup.solver.horizon,
                "epsilon": setup.solver.epsilon,
                "snapshots": files,
            }),
        )?;
    }
    let last = traj.snapshots.len() - 1;
    Ok(json!({
        "final_sup_abs": traj.final_snapshot().sup_norm(),
        "final_sup_dev_from_w": traj.final_snapshot().sub(&w[last]).sup_norm(),
        "snapshots": traj.len(),
    }))
}

fn simulate(setup: &Setup, dir: &RunDir) -> Outcome<()> {
    let seed = setup.cfg.noise.seed;
    let traj = Solver::new(&setup.solver)?.solve(None, NoiseSource::Seed(seed))?;
    let summary = write_trajectory(setup, dir, &traj, Some(seed))?;
    dir.json(
        "summary.json",
        json!({ "subcommand": "simulate", "trajectory": summary }),
    )?;
    Ok(())
}

fn skeleton(setup: &Setup, dir: &RunDir) -> Outcome<()> {
    let h = setup.control()?;
    let traj = skeleton_solve(&setup.solver, &h)?;
    let summary = write_trajectory(setup, dir, &traj, None)?;
    dir.json(
        "summary.json",
        json!({
            "subcommand": "skeleton",
            "control_norm": h.norm(),
            "rate_functional": rate_functional(&h),
            "trajectory": summary,
        }),
    )?;
    Ok(())
}

fn rate_min(setup: &Setup, dir: &RunDir) -> Outcome<()> {
    let event = setup.event()?;
    let report = minimize_rate(&event, &setup.solver, &setup.rate_options())?;
    let dump = setup.cfg.output.dump_fields;
    if dump {
        let dt = report.control.dt;
        let mut files = Vec::new();
        for j in 0..report.control.steps() {
            let file = format!("control/h_{j:06}.swe3");
            dir.field(&file, &report.control.field(j))?;
            files.push(json!({ "step": j, "time": j as f64 * dt, "file": file }));
        }
        dir.json_always(
            "control/manifest.json",
            json!({ "J": report.control.steps(), "dt": dt, "norm": report.control.norm(), "slices": files }),
        )?;
    }
    let mut body = report.to_json(dump.then_some("control/manifest.json"));
    if let Ok(oracle) = gaussian_rate_oracle(&event, &setup.solver) {
        body["oracle_rate"] = json!(oracle);
        body["oracle_relative_error"] = json!(if oracle > 0.0 {
            (report.i_hat - oracle).abs() / oracle
        } else {
            0.0
        });
    }
    dir.json("rate.json", body)?;
    dir.csv(
        "trace.csv",
        &["iteration", "objective"],
        report
            .trace
            .iter()
            .enumerate()
            .map(|(i, v)| vec![i.to_string(), num(*v)]),
    )?;
    Ok(())
}

fn slope(setup: &Setup, dir: &RunDir) -> Outcome<()> {
    let event = setup.event()?;
    let ladder = &setup.cfg.ladder;
    let oracle = gaussian_rate_oracle(&event, &setup.solver).ok();
    let minimizer = match (ladder.reference, oracle) {
        (ReferenceRate::Minimizer, _) | (ReferenceRate::Auto, None) => {
            Some(minimize_rate(&event, &setup.solver, &setup.rate_options())?)
        }
        _ => None,
    };
    let opts = SlopeOptions {
        replicates: ladder.m,
        seed: setup.cfg.noise.seed,
        tolerance: ladder.tolerance,
        reference: minimizer.as_ref().map(|r| r.i_hat),
        exec: setup.exec,
    };
    let report = ldp_slope(&event, &setup.solver, &ladder.epsilons, &opts)?;
    dir.csv(
        "slope.csv",
        &SLOPE_CSV_HEADER,
        report.csv_rows().into_iter().map(|r| r.to_vec()),
    )?;
    let mut body = serde_json::to_value(&report).map_err(|e| Failure::Io(e.into()))?;
    body["covered_rungs"] = json!(report.covered_rungs());
    body["reference_gaps"] = json!(report.reference_gaps());
    body["shrinking_rungs"] = json!(report.shrinking_rungs());
    if let Some(m) = &minimizer {
        body["minimizer"] = json!({ "status": m.status, "i_hat": m.i_hat, "residual": m.residual });
    }
    dir.json("slope.json", body)?;
    Ok(())
}

fn holder(setup: &Setup, dir: &RunDir) -> Outcome<()> {
    let r = &setup.cfg.regularity;
    let seed = setup.cfg.noise.seed;
    let region = Region::central(&setup.grid, r.region_side)?;
    let lags = setup.lags();
    let final_cfg = setup.solver.with_snapshots(SnapshotPolicy::Final);
    let solver = Solver::new(&final_cfg)?;
    let mut acc = IncrementAccumulator::new(setup.grid, final_cfg.dt(), r.q, &lags, &region)?;
    const BLOCK: usize = 16;
    for start in (0..r.trajectories).step_by(BLOCK) {
        let len = BLOCK.min(r.trajectories - start);
        let batch = setup.exec.map(len, |i| {
            solver
                .clone()
                .solve(None, NoiseSource::Seed(derive_seed(seed, (start + i) as u64)))
        });
        for t in batch {
            acc.ingest(&t?)?;
        }
    }
    let fit = acc.finish(r.bootstrap, seed)?;
    let interval = ExponentInterval::new(&setup.init, &setup.spec);
    dir.csv(
        "exponent.csv",
        &[
            "lag_steps",
            "offset_x",
            "offset_y",
            "offset_z",
            "gauge",
            "moment",
            "residual",
        ],
        fit.lags.iter().map(|m| {
            vec![
                m.lag.steps.to_string(),
                m.lag.offset[0].to_string(),
                m.lag.offset[1].to_string(),
                m.lag.offset[2].to_string(),
                num(m.gauge),
                num(m.moment),
                num(m.residual),
            ]
        }),
    )?;
    dir.json(
        "exponent.json",
        json!({
            "alpha_hat": fit.alpha_hat,
            "ci": fit.ci,
            "q": fit.q,
            "slope": fit.slope,
            "trajectories": fit.trajectories,
            "bootstrap": fit.bootstrap,
            "interval_upper": interval.upper(),
            "within_interval": interval.contains(fit.alpha_hat),
        }),
    )?;

    let first = Solver::new(&setup.solver.with_snapshots(SnapshotPolicy::All))?
        .solve(None, NoiseSource::Seed(derive_seed(seed, 0)))?;
    let opts = PairOptions {
        budget: r.pair_budget,
        exec: setup.exec,
    };
    let rep = holder_report(&first, r.alpha, &region, &opts)?;
    let m = modulus(&first, r.alpha_prime, &r.deltas, &region, &opts)?;
    dir.json(
        "holder.json",
        json!({ "alpha": r.alpha, "report": rep, "alpha_prime": r.alpha_prime }),
    )?;
    dir.csv(
        "modulus.csv",
        &["delta", "modulus"],
        r.deltas.iter().zip(&m).map(|(d, o)| vec![num(*d), num(*o)]),
    )?;
    Ok(())
}

fn noise_check(setup: &Setup, dir: &RunDir) -> Outcome<()> {
    let grid = setup.grid;
    let c = &setup.cfg.checks;
    let table = setup.spec.density_table(&grid)?;
    let oracle = table.covariance_field();
    let sampler = NoiseSampler::new(&table);
    let seed = setup.cfg.noise.seed;
    let n = grid.n;
    const BLOCK: usize = 32;
    let blocks = c.draws.div_ceil(BLOCK);
    let partial = setup.exec.map(blocks, |b| {
        let mut fft = Fft3::new(&grid);
        let mut sums = vec![0.0; c.lags.len()];
        for i in b * BLOCK..((b + 1) * BLOCK).min(c.draws) {
            let f = sampler.field(&mut fft, derive_seed(seed, i as u64), 0, 1.0);
            for (s, &lag) in sums.iter_mut().zip(&c.lags) {
                let mut acc = 0.0;
                for idx in 0..grid.len() {
                    let [x, y, z] = grid.coords(idx);
                    let v = f.values[idx];
                    acc += v
                        * (f.values[grid.index((x + lag) % n, y, z)]
                            + f.values[grid.index(x, (y + lag) % n, z)]
                            + f.values[grid.index(x, y, (z + lag) % n)]);
                }
                *s += acc / (3.0 * grid.len() as f64);
            }
        }
        sums
    });
    let mut empirical = vec![0.0; c.lags.len()];
    for p in partial {
        empirical.iter_mut().zip(p).for_each(|(a, b)| *a += b);
    }
    empirical.iter_mut().for_each(|v| *v /= c.draws as f64);
    let dx = grid.dx();
    let mut rows = Vec::new();
    let mut worst: Option<f64> = None;
    let mut per_lag = Vec::new();
    for (k, &lag) in c.lags.iter().enumerate() {
        let exact = oracle.values[grid.index(lag, 0, 0)];
        let rel = (empirical[k] - exact).abs() / exact.abs();
        let distance = lag as f64 * dx;
        if distance >= 2.0 * dx - 1e-12 && distance <= grid.l / 4.0 + 1e-12 {
            worst = Some(worst.map_or(rel, |w: f64| w.max(rel)));
        }
        rows.push(vec![
            lag.to_string(),
            num(distance),
            num(empirical[k]),
            num(exact),
            num(rel),
        ]);
        per_lag.push(json!({ "lag": distance, "empirical": empirical[k], "oracle": exact, "relative_error": rel }));
    }
    dir.csv(
        "noise.csv",
        &["lag_cells", "lag", "empirical", "oracle", "relative_error"],
        rows,
    )?;
    dir.json(
        "noise.json",
        json!({ "draws": c.draws, "lags": per_lag, "max_relative_error_in_window": worst }),
    )?;
    Ok(())
}

fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

fn kernel_check(setup: &Setup, dir: &RunDir) -> Outcome<()> {
    let c = &setup.cfg.checks;
    let mut rows = Vec::new();
    let mut fits = Vec::new();
    for &beta in &c.betas {
        let spec = CovarianceSpec::riesz(beta)?;
        let values: Vec<f64> = c
            .times
            .iter()
            .map(|&t| dalang_integral(&spec, t))
            .collect::<Result<_, _>>()?;
        for (t, v) in c.times.iter().zip(&values) {
            rows.push(vec![num(beta), num(*t), num(*v)]);
        }
        let exponent = loglog_slope(&c.times, &values);
        fits.push(json!({
            "beta": beta,
            "fitted_exponent": exponent,
            "expected_exponent": 2.0 - beta,
            "error": (exponent - (2.0 - beta)).abs(),
        }));
    }
    let trend_betas = [1.5, 1.75, 1.9, 1.95, 1.99];
    let trend: Vec<f64> = trend_betas
        .iter()
        .map(|&b| dalang_integral(&CovarianceSpec::riesz(b)?, 1.0))
        .collect::<Result<_, _>>()?;
    let monotone = trend.windows(2).all(|w| w[1] > w[0]);
    dir.csv("kernel.csv", &["beta", "t", "dalang_integral"], rows)?;
    dir.json(
        "kernel.json",
        json!({
            "fits": fits,
            "divergence": { "t": 1.0, "betas": trend_betas, "values": trend, "monotone": monotone },
        }),
    )?;
    Ok(())
}
