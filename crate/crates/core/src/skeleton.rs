//! Skeleton equation, the rate functional `I(h) = ½‖h‖²` and the
//! constrained minimisation realising `I(A) = inf { I(f) : f ∈ A }` for
//! concrete event sets.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::fft::C64;
use crate::grid::{Field, Grid};
use crate::optim::{lbfgs, LbfgsOptions};
use crate::regularity::Region;
use crate::rng::{derive_seed, generator};
use crate::solver::{Coefficient, Control, NoiseSource, SnapshotPolicy, Solver, SolverConfig, Trajectory};

/// Event functionals `Φ(u)`; the event is `Φ(u) ≥ threshold`.
#[derive(Clone, Debug, PartialEq)]
pub enum EventKind {
    /// `u(T, x₀) - w(T, x₀)` at the lattice site `site`.
    PointExceed { site: [usize; 3] },
    /// `max_{j ≥ 1, x ∈ R} |u(t_j, x) - w(t_j, x)|`.
    SupExceed { region: Region },
    /// `⟨u(T) - w(T), g⟩ = dx³ Σ_x (u - w)(T, x) g(x)`.
    LinearExceed { g: Field },
}

#[derive(Clone, Debug, PartialEq)]
pub struct EventSpec {
    pub kind: EventKind,
    pub threshold: f64,
}

impl EventSpec {
    pub fn point(site: [usize; 3], threshold: f64) -> Self {
        Self {
            kind: EventKind::PointExceed { site },
            threshold,
        }
    }

    pub fn sup(region: Region, threshold: f64) -> Self {
        Self {
            kind: EventKind::SupExceed { region },
            threshold,
        }
    }

    pub fn linear(g: Field, threshold: f64) -> Self {
        Self {
            kind: EventKind::LinearExceed { g },
            threshold,
        }
    }

    pub fn with_threshold(&self, threshold: f64) -> Self {
        Self {
            kind: self.kind.clone(),
            threshold,
        }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            EventKind::PointExceed { .. } => "point_exceed",
            EventKind::SupExceed { .. } => "sup_exceed",
            EventKind::LinearExceed { .. } => "linear_exceed",
        }
    }

    pub fn validate(&self, grid: &Grid) -> Result<()> {
        if !(self.threshold >= 0.0 && self.threshold.is_finite()) {
            return Err(Error::param(format!(
                "event threshold must be finite and ≥ 0, got {}",
                self.threshold
            )));
        }
        match &self.kind {
            EventKind::PointExceed { site } => {
                if site.iter().any(|&c| c >= grid.n) {
                    return Err(Error::param(format!("site {site:?} lies outside the grid")));
                }
            }
            EventKind::SupExceed { region } => region.validate(grid)?,
            EventKind::LinearExceed { g } => {
                if g.grid != *grid {
                    return Err(Error::param("test field lives on a different grid"));
                }
                if !g.is_finite() {
                    return Err(Error::param("test field has non-finite entries"));
                }
            }
        }
        Ok(())
    }

    pub fn snapshot_policy(&self) -> SnapshotPolicy {
        match self.kind {
            EventKind::SupExceed { .. } => SnapshotPolicy::All,
            _ => SnapshotPolicy::Final,
        }
    }

    /// JSON echo of the event (test fields are summarised, not dumped).
    pub fn echo(&self) -> serde_json::Value {
        let detail = match &self.kind {
            EventKind::PointExceed { site } => json!({ "site": site }),
            EventKind::SupExceed { region } => json!({ "region": region }),
            EventKind::LinearExceed { g } => json!({
                "g_sup": g.sup_norm(),
                "g_l2": g.inner(g).sqrt(),
            }),
        };
        json!({ "kind": self.name(), "threshold": self.threshold, "detail": detail })
    }
}

/// Evaluates an event functional on trajectories of a fixed configuration,
/// caching the homogeneous solution it is measured against.
#[derive(Clone, Debug)]
pub struct EventProbe {
    pub event: EventSpec,
    grid: Grid,
    steps: usize,
    /// `w(t_j)` for every step the functional reads, indexed by step.
    w: Vec<Option<Field>>,
    region: Vec<usize>,
}

impl EventProbe {
    pub fn new(event: &EventSpec, config: &SolverConfig) -> Result<Self> {
        event.validate(&config.grid)?;
        let mut solver = Solver::new(config)?;
        let steps = config.steps;
        let needed: Vec<usize> = match event.kind {
            EventKind::SupExceed { .. } => (1..=steps).collect(),
            _ => vec![steps],
        };
        let fields = solver.homogeneous(&needed)?;
        let mut w = vec![None; steps + 1];
        for (j, f) in needed.into_iter().zip(fields) {
            w[j] = Some(f);
        }
        let region = match &event.kind {
            EventKind::SupExceed { region } => region.indices(&config.grid),
            _ => Vec::new(),
        };
        Ok(Self {
            event: event.clone(),
            grid: config.grid,
            steps,
            w,
            region,
        })
    }

    fn w_at(&self, j: usize) -> &Field {
        self.w[j].as_ref().expect("homogeneous snapshot cached")
    }

    /// `Φ(u)` for the trajectory.
    pub fn value(&self, traj: &Trajectory) -> Result<f64> {
        let last = *traj.steps.last().unwrap_or(&0);
        if last != self.steps {
            return Err(Error::param("trajectory does not reach the event horizon"));
        }
        match &self.event.kind {
            EventKind::PointExceed { site } => {
                let i = self.grid.index(site[0], site[1], site[2]);
                Ok(traj.final_snapshot().values[i] - self.w_at(self.steps).values[i])
            }
            EventKind::LinearExceed { g } => {
                let u = traj.final_snapshot();
                let w = self.w_at(self.steps);
                let s: f64 = u
                    .values
                    .iter()
                    .zip(&w.values)
                    .zip(&g.values)
                    .map(|((a, b), c)| (a - b) * c)
                    .sum();
                Ok(s * self.grid.cell_volume())
            }
            EventKind::SupExceed { .. } => {
                if traj.steps.len() != self.steps + 1 {
                    return Err(Error::param("sup_exceed needs every snapshot"));
                }
                let mut m: f64 = 0.0;
                for j in 1..=self.steps {
                    let (u, w) = (&traj.snapshots[j].values, &self.w_at(j).values);
                    for &i in &self.region {
                        m = m.max((u[i] - w[i]).abs());
                    }
                }
                Ok(m)
            }
        }
    }

    pub fn hits(&self, traj: &Trajectory) -> Result<bool> {
        Ok(self.value(traj)? >= self.event.threshold)
    }

    /// `Φ` together with `∂Φ/∂u_j` for every step (`None` where it vanishes).
    /// With `kappa` the sup is replaced by the log-sum-exp soft maximum of
    /// sharpness `kappa`.
    fn value_and_sensitivity(&self, traj: &Trajectory, kappa: Option<f64>) -> (f64, Vec<Option<Vec<f64>>>) {
        let n = self.grid.len();
        let mut sens = vec![None; self.steps + 1];
        match &self.event.kind {
            EventKind::PointExceed { site } => {
                let i = self.grid.index(site[0], site[1], site[2]);
                let mut d = vec![0.0; n];
                d[i] = 1.0;
                sens[self.steps] = Some(d);
                (traj.final_snapshot().values[i] - self.w_at(self.steps).values[i], sens)
            }
            EventKind::LinearExceed { g } => {
                let dv = self.grid.cell_volume();
                sens[self.steps] = Some(g.values.iter().map(|v| v * dv).collect());
                (self.value(traj).unwrap_or(f64::NAN), sens)
            }
            EventKind::SupExceed { .. } => {
                let mut best = (f64::NEG_INFINITY, 0, 0, 1.0);
                let diff = |j: usize, i: usize| traj.snapshots[j].values[i] - self.w_at(j).values[i];
                for j in 1..=self.steps {
                    for &i in &self.region {
                        let d = diff(j, i);
                        if d.abs() > best.0 {
                            best = (d.abs(), j, i, d.signum());
                        }
                    }
                }
                match kappa {
                    None => {
                        let mut d = vec![0.0; n];
                        d[best.2] = if best.3 == 0.0 { 1.0 } else { best.3 };
                        sens[best.1] = Some(d);
                        (best.0, sens)
                    }
                    Some(k) => {
                        let m = best.0;
                        let mut z = 0.0;
                        for j in 1..=self.steps {
                            let mut d = vec![0.0; n];
                            for &i in &self.region {
                                let v = diff(j, i);
                                let (a, b) = ((k * (v - m)).exp(), (k * (-v - m)).exp());
                                z += a + b;
                                d[i] = a - b;
                            }
                            sens[j] = Some(d);
                        }
                        for d in sens.iter_mut().flatten() {
                            d.iter_mut().for_each(|v| *v /= z);
                        }
                        (m + z.ln() / k, sens)
                    }
                }
            }
        }
    }
}

/// `V^h`: the controlled equation with `ε = 0`, through the same code path
/// as [`crate::solver::solve`].
pub fn skeleton_solve(config: &SolverConfig, h: &Control) -> Result<Trajectory> {
    Solver::new(&config.with_epsilon(0.0))?.solve(Some(h), NoiseSource::None)
}

/// `½ ‖h‖²_{H_T}`.
pub fn rate_functional(h: &Control) -> f64 {
    0.5 * h.norm_sq()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateStatus {
    /// Convex problem (state-independent σ, affine b, point or linear
    /// event); the reported minimiser is global.
    Certified,
    /// Feasible local minimiser.
    Local,
    Infeasible,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateOptions {
    /// Modes with `|k_i| ≤ K/2` on every axis are optimised.
    pub truncation: usize,
    pub stages: usize,
    pub lambda0: f64,
    pub lambda_growth: f64,
    pub max_iters: usize,
    pub restarts: usize,
    pub seed: u64,
    pub feasibility_tol: f64,
    /// Soft-max sharpness for `sup_exceed`, in units of `1/r`; multiplied by
    /// 4 at every stage.
    pub kappa0: f64,
    pub restart_scale: f64,
    pub bound: Option<f64>,
    pub exec: Exec,
}

impl Default for RateOptions {
    fn default() -> Self {
        Self {
            truncation: 8,
            stages: 6,
            lambda0: 1.0,
            lambda_growth: 10.0,
            max_iters: 200,
            restarts: 4,
            seed: 0,
            feasibility_tol: 1e-6,
            kappa0: 20.0,
            restart_scale: 1.0,
            bound: None,
            exec: Exec::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestartSummary {
    pub index: usize,
    pub i_hat: f64,
    pub residual: f64,
    pub feasible: bool,
    pub evaluations: usize,
}

#[derive(Clone, Debug)]
pub struct RateReport {
    pub event: EventSpec,
    pub status: RateStatus,
    pub i_hat: f64,
    pub control: Control,
    /// `max(0, r - Φ(V^{h*}))`.
    pub residual: f64,
    pub functional_value: f64,
    pub truncation: usize,
    /// Penalised objective after every optimiser iteration of the best restart.
    pub trace: Vec<f64>,
    pub restarts: Vec<RestartSummary>,
    pub best_restart: usize,
}

impl RateReport {
    pub fn feasible(&self) -> bool {
        self.status != RateStatus::Infeasible
    }

    pub fn to_json(&self, control_dump: Option<&str>) -> serde_json::Value {
        json!({
            "event": self.event.echo(),
            "status": self.status,
            "i_hat": self.i_hat,
            "residual": self.residual,
            "functional_value": self.functional_value,
            "truncation": self.truncation,
            "control_norm": self.control.norm(),
            "control_dump": control_dump,
            "best_restart": self.best_restart,
            "restarts": self.restarts,
            "trace": self.trace,
        })
    }
}

#[derive(Clone, Copy, Debug)]
struct Slot {
    idx: usize,
    partner: usize,
    coef: f64,
}

/// Whitened real coordinates `y` of the truncated control, with
/// `½‖h‖² = ½|y|²`.
#[derive(Clone, Debug)]
struct Whitening {
    grid: Grid,
    dt: f64,
    steps: usize,
    slots: Vec<Slot>,
    per_step: usize,
    density: Vec<f64>,
}

impl Whitening {
    fn new(grid: Grid, dt: f64, steps: usize, density: &[f64], truncation: usize) -> Self {
        let half = (truncation.min(grid.n) / 2) as i64;
        let vol = grid.volume();
        let mut slots = Vec::new();
        let mut per_step = 0;
        for idx in 0..grid.len() {
            let k = grid.wavenumber(idx);
            let s = density[idx];
            if k.iter().any(|c| c.abs() > half) || s <= 0.0 {
                continue;
            }
            let partner = grid.partner(idx);
            if idx < partner {
                slots.push(Slot {
                    idx,
                    partner,
                    coef: (vol / (2.0 * dt * s)).sqrt(),
                });
                per_step += 2;
            } else if idx == partner {
                slots.push(Slot {
                    idx,
                    partner,
                    coef: (vol / (dt * s)).sqrt(),
                });
                per_step += 1;
            }
        }
        Self {
            grid,
            dt,
            steps,
            slots,
            per_step,
            density: density.to_vec(),
        }
    }

    fn dim(&self) -> usize {
        self.per_step * self.steps
    }

    fn coeffs(&self, y: &[f64]) -> Vec<Vec<C64>> {
        (0..self.steps)
            .map(|j| {
                let mut c = vec![C64::default(); self.grid.len()];
                let mut p = j * self.per_step;
                for s in &self.slots {
                    if s.idx == s.partner {
                        c[s.idx] = C64::new(s.coef * y[p], 0.0);
                        p += 1;
                    } else {
                        let v = C64::new(y[p], y[p + 1]) * s.coef;
                        c[s.idx] = v;
                        c[s.partner] = v.conj();
                        p += 2;
                    }
                }
                c
            })
            .collect()
    }

    /// Chain rule from `∂Φ/∂H_jk = L^{-3} S_k conj(Â_jk)` to `∂Φ/∂y`.
    fn pull_back(&self, j: usize, a_hat: &[C64], out: &mut [f64]) {
        let vol = self.grid.volume();
        let mut p = j * self.per_step;
        for s in &self.slots {
            let a = a_hat[s.idx] * (s.coef * self.density[s.idx] / vol);
            if s.idx == s.partner {
                out[p] = a.re;
                p += 1;
            } else {
                out[p] = 2.0 * a.re;
                out[p + 1] = 2.0 * a.im;
                p += 2;
            }
        }
    }

    fn control(&self, y: &[f64], density: &crate::covariance::DensityTable) -> Control {
        Control::from_parts(self.grid, self.dt, self.coeffs(y), density)
    }
}

/// Forward map `y ↦ Φ(V^{h(y)})` with its exact discrete adjoint.
#[derive(Clone, Debug)]
struct Problem {
    solver: Solver,
    probe: EventProbe,
    whitening: Whitening,
}

impl Problem {
    fn new(event: &EventSpec, config: &SolverConfig, truncation: usize) -> Result<Self> {
        let cfg = config.with_epsilon(0.0).with_snapshots(SnapshotPolicy::All);
        let solver = Solver::new(&cfg)?;
        let probe = EventProbe::new(event, &cfg)?;
        let whitening = Whitening::new(cfg.grid, cfg.dt(), cfg.steps, &solver.density().values, truncation);
        Ok(Self {
            solver,
            probe,
            whitening,
        })
    }

    fn value(&mut self, y: &[f64]) -> Result<f64> {
        let h = self.whitening.control(y, self.solver.density());
        let traj = self.solver.solve(Some(&h), NoiseSource::None)?;
        self.probe.value(&traj)
    }

    fn value_and_gradient(&mut self, y: &[f64], kappa: Option<f64>) -> Result<(f64, Vec<f64>)> {
        let h = self.whitening.control(y, self.solver.density());
        let traj = self.solver.solve(Some(&h), NoiseSource::None)?;
        let (phi, sens) = self.probe.value_and_sensitivity(&traj, kappa);
        let mut grad = vec![0.0; self.whitening.dim()];
        self.adjoint(&traj, &h, &sens, &mut grad);
        Ok((phi, grad))
    }

    fn adjoint(&mut self, traj: &Trajectory, h: &Control, sens: &[Option<Vec<f64>>], grad: &mut [f64]) {
        let grid = self.solver.config.grid;
        let steps = self.solver.config.steps;
        let dt = self.solver.config.dt();
        let n = grid.len();
        let sigma = self.solver.config.coeffs.sigma;
        let b = self.solver.config.coeffs.b;
        let st = &mut self.solver.stepper;
        let (cos, m, ks) = (st.cos_dt.clone(), st.m_dt.clone(), st.ksin_dt.clone());
        let sigma_const = sigma.constant_value();
        let b_slope = match b {
            Coefficient::Constant { .. } => Some(0.0),
            Coefficient::Affine { b, .. } => Some(b),
            Coefficient::BoundedSmooth { .. } => None,
        };
        let linear_path = sigma_const.is_some() && b_slope.is_some();

        let mut p_hat = match &sens[steps] {
            Some(d) => st.fft().forward_real(d),
            None => vec![C64::default(); n],
        };
        let mut q_hat = vec![C64::default(); n];
        let mut rho_hat = vec![C64::default(); n];
        let mut buf = vec![C64::default(); n];
        let mut g_hat = Vec::new();
        let mut real = vec![0.0; n];
        for j in (0..steps).rev() {
            for i in 0..n {
                rho_hat[i] = p_hat[i] * m[i] + q_hat[i] * cos[i];
            }
            let u = &traj.snapshots[j].values;
            let rho: Option<Vec<f64>> = if linear_path {
                None
            } else {
                buf.copy_from_slice(&rho_hat);
                st.fft().inverse(&mut buf);
                Some(buf.iter().map(|c| c.re).collect())
            };
            let a_hat = match (sigma_const, &rho) {
                (Some(s), _) => rho_hat.iter().map(|c| c * (s * dt)).collect::<Vec<_>>(),
                (None, Some(rho)) => {
                    for i in 0..n {
                        real[i] = rho[i] * sigma.eval(u[i]) * dt;
                    }
                    st.fft().forward_real(&real)
                }
                (None, None) => unreachable!(),
            };
            self.whitening.pull_back(j, &a_hat, grad);
            if j == 0 {
                break;
            }
            let mut next: Vec<C64> = (0..n).map(|i| p_hat[i] * cos[i] - q_hat[i] * ks[i]).collect();
            if linear_path {
                let slope = b_slope.unwrap();
                if slope != 0.0 {
                    next.iter_mut().zip(&rho_hat).for_each(|(p, r)| *p += r * (slope * dt));
                }
            } else {
                let rho = rho.as_ref().unwrap();
                let g: Option<Vec<f64>> = if sigma_const.is_none() && !h.is_zero_slice(j) {
                    st.control_drift_spectrum(&h.coeffs[j], &mut g_hat);
                    st.fft().inverse(&mut g_hat);
                    Some(g_hat.iter().map(|c| c.re).collect())
                } else {
                    None
                };
                for i in 0..n {
                    let gs = g.as_ref().map_or(0.0, |g| sigma.derivative(u[i]) * g[i]);
                    real[i] = rho[i] * (gs + b.derivative(u[i])) * dt;
                }
                let lin = st.fft().forward_real(&real);
                next.iter_mut().zip(&lin).for_each(|(p, l)| *p += l);
            }
            if let Some(d) = &sens[j] {
                let s = st.fft().forward_real(d);
                next.iter_mut().zip(&s).for_each(|(p, v)| *p += v);
            }
            q_hat.copy_from_slice(&rho_hat);
            p_hat = next;
        }
    }
}

struct RestartOutcome {
    y: Vec<f64>,
    phi: f64,
    trace: Vec<f64>,
    evaluations: usize,
}

fn run_restart(problem: &mut Problem, opts: &RateOptions, y0: Vec<f64>) -> Result<RestartOutcome> {
    let r = problem.probe.event.threshold;
    let sup = matches!(problem.probe.event.kind, EventKind::SupExceed { .. });
    let mut y = y0;
    let mut trace = Vec::new();
    let mut evaluations = 0;
    let mut failure: Option<Error> = None;
    let lopts = LbfgsOptions {
        max_iters: opts.max_iters,
        ..Default::default()
    };
    for stage in 0..opts.stages {
        let lambda = opts.lambda0 * opts.lambda_growth.powi(stage as i32);
        let kappa = sup.then(|| opts.kappa0 * 4f64.powi(stage as i32) / r);
        let res = lbfgs(
            |x| match problem.value_and_gradient(x, kappa) {
                Ok((phi, g)) => {
                    let viol = (r - phi).max(0.0);
                    let f = 0.5 * x.iter().map(|v| v * v).sum::<f64>() + lambda * viol * viol;
                    let grad = x.iter().zip(&g).map(|(xi, gi)| xi - 2.0 * lambda * viol * gi).collect();
                    (f, grad)
                }
                Err(e) => {
                    failure.get_or_insert(e);
                    (f64::NAN, vec![f64::NAN; x.len()])
                }
            },
            y,
            &lopts,
        );
        if let Some(e) = failure.take() {
            return Err(e);
        }
        evaluations += res.evaluations;
        trace.extend(res.trace);
        y = res.x;
    }
    // Newton polish of the active constraint on the exact functional.
    let mut phi = f64::NAN;
    for _ in 0..60 {
        let (p, g) = problem.value_and_gradient(&y, None)?;
        evaluations += 1;
        phi = p;
        let res = r - phi;
        let gg: f64 = g.iter().map(|v| v * v).sum();
        if res.abs() <= 1e-10 * r || gg == 0.0 || (res < 0.0 && y.iter().all(|v| *v == 0.0)) {
            break;
        }
        y.iter_mut().zip(&g).for_each(|(yi, gi)| *yi += res * gi / gg);
    }
    Ok(RestartOutcome {
        y,
        phi,
        trace,
        evaluations,
    })
}

/// Minimises `½‖h‖²` over truncated controls subject to `Φ(V^h) ≥ r`.
pub fn minimize_rate(event: &EventSpec, config: &SolverConfig, opts: &RateOptions) -> Result<RateReport> {
    config.validate()?;
    event.validate(&config.grid)?;
    if opts.restarts == 0 || opts.stages == 0 {
        return Err(Error::param("at least one restart and one penalty stage are required"));
    }
    let base = Problem::new(event, config, opts.truncation)?;
    let dim = base.whitening.dim();
    let r = event.threshold;
    let convex = config.coeffs.sigma.constant_value().is_some()
        && !matches!(config.coeffs.b, Coefficient::BoundedSmooth { .. })
        && !matches!(event.kind, EventKind::SupExceed { .. });

    let mut zero_problem = base.clone();
    let phi0 = zero_problem.value(&vec![0.0; dim])?;
    let density = base.solver.density().clone();
    if phi0 >= r - 1e-12 * (1.0 + r) {
        return Ok(RateReport {
            event: event.clone(),
            status: RateStatus::Certified,
            i_hat: 0.0,
            control: Control::zero(config.grid, config.steps, config.dt()),
            residual: 0.0,
            functional_value: phi0,
            truncation: opts.truncation,
            trace: vec![0.0],
            restarts: vec![RestartSummary {
                index: 0,
                i_hat: 0.0,
                residual: 0.0,
                feasible: true,
                evaluations: 1,
            }],
            best_restart: 0,
        });
    }

    let outcomes = opts.exec.map(opts.restarts, |i| {
        let mut problem = base.clone();
        let y0 = if i == 0 {
            vec![0.0; dim]
        } else {
            let mut rng = generator(derive_seed(opts.seed, i as u64));
            let scale = opts.restart_scale / (dim as f64).sqrt();
            (0..dim).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
        };
        run_restart(&mut problem, opts, y0)
    });
    let outcomes: Vec<RestartOutcome> = outcomes.into_iter().collect::<Result<_>>()?;

    let summaries: Vec<RestartSummary> = outcomes
        .iter()
        .enumerate()
        .map(|(index, o)| {
            let residual = (r - o.phi).max(0.0);
            RestartSummary {
                index,
                i_hat: 0.5 * o.y.iter().map(|v| v * v).sum::<f64>(),
                residual,
                feasible: o.phi.is_finite() && residual <= opts.feasibility_tol * r,
                evaluations: o.evaluations,
            }
        })
        .collect();
    let pick = |candidates: &mut dyn Iterator<Item = &RestartSummary>, key: &dyn Fn(&RestartSummary) -> f64| {
        let mut best: Option<&RestartSummary> = None;
        for s in candidates {
            match best {
                Some(b) if key(s) >= key(b) * (1.0 - 1e-12) => {}
                _ => best = Some(s),
            }
        }
        best.map(|s| s.index)
    };
    let feasible_best = pick(&mut summaries.iter().filter(|s| s.feasible), &|s| s.i_hat);
    let (best, mut status) = match feasible_best {
        Some(i) => (
            i,
            if convex {
                RateStatus::Certified
            } else {
                RateStatus::Local
            },
        ),
        None => (
            pick(&mut summaries.iter(), &|s| s.residual).unwrap_or(0),
            RateStatus::Infeasible,
        ),
    };
    let mut y = outcomes[best].y.clone();
    let mut phi = outcomes[best].phi;
    if let Some(bound) = opts.bound {
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > bound {
            y.iter_mut().for_each(|v| *v *= bound / norm);
            let mut p = base.clone();
            phi = p.value(&y)?;
            status = RateStatus::Infeasible;
        }
    }
    let mut control = base.whitening.control(&y, &density);
    if let Some(bound) = opts.bound {
        control.bound = Some(bound);
    }
    Ok(RateReport {
        event: event.clone(),
        status,
        i_hat: rate_functional(&control),
        residual: (r - phi).max(0.0),
        functional_value: phi,
        truncation: opts.truncation,
        trace: outcomes[best].trace.clone(),
        control,
        restarts: summaries,
        best_restart: best,
    })
}

/// Finite-difference check hook: `Φ` and its adjoint gradient in whitened
/// coordinates for a given `y`.
#[doc(hidden)]
pub fn whitened_gradient(
    event: &EventSpec,
    config: &SolverConfig,
    truncation: usize,
    y: &[f64],
    kappa: Option<f64>,
) -> Result<(f64, Vec<f64>)> {
    Problem::new(event, config, truncation)?.value_and_gradient(y, kappa)
}

#[doc(hidden)]
pub fn whitened_dim(config: &SolverConfig, truncation: usize) -> Result<usize> {
    let density = config.noise.density_table(&config.grid)?;
    Ok(Whitening::new(config.grid, config.dt(), config.steps, &density.values, truncation).dim())
}
