//! Stochastic trigonometric scheme for the controlled mild equation
//!
//! ```text
//! u(t) = w(t) + √ε ∫ G(t-s) σ(u) dW + ∫ G(t-s) * [σ(u) (Γ⋆h)] ds + ∫ G(t-s) * b(u) ds
//! ```
//!
//! Each step propagates `(û, ∂_t û)` exactly by the per-mode rotation and
//! injects the left-endpoint impulse
//! `f_j = √ε σ(u_j) ΔW_j + σ(u_j)(Γ⋆h_j) dt + b(u_j) dt` through `m(dt, ξ)`
//! (position) and `cos(dt|ξ|)` (velocity). The response at `t_J` to the
//! impulse at `t_j` is then exactly `m(t_J - t_j, ξ) f̂_j`.
//!
//! `ε = 0` with a control is the skeleton equation; `h = 0` is the plain
//! stochastic equation. Both run through [`Solver::solve`].

use serde::{Deserialize, Serialize};

use crate::covariance::{CovarianceSpec, DensityTable, NoiseIncrements, NoiseSampler};
use crate::error::{Error, Result};
use crate::fft::{Fft3, C64};
use crate::grid::{Field, Grid};
use crate::kernel::{homogeneous_with, multiplier, InitialData};

/// Lipschitz coefficient families for `σ` and `b`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Coefficient {
    /// `c`
    Constant { value: f64 },
    /// `a + b·u`
    Affine { a: f64, b: f64 },
    /// `scale · tanh(u)`
    BoundedSmooth { scale: f64 },
}

impl Coefficient {
    pub const ZERO: Coefficient = Coefficient::Constant { value: 0.0 };

    #[inline]
    pub fn eval(&self, u: f64) -> f64 {
        match *self {
            Coefficient::Constant { value } => value,
            Coefficient::Affine { a, b } => a + b * u,
            Coefficient::BoundedSmooth { scale } => scale * u.tanh(),
        }
    }

    #[inline]
    pub fn derivative(&self, u: f64) -> f64 {
        match *self {
            Coefficient::Constant { .. } => 0.0,
            Coefficient::Affine { b, .. } => b,
            Coefficient::BoundedSmooth { scale } => {
                let c = u.cosh();
                scale / (c * c)
            }
        }
    }

    pub fn lipschitz(&self) -> f64 {
        match *self {
            Coefficient::Constant { .. } => 0.0,
            Coefficient::Affine { b, .. } => b.abs(),
            Coefficient::BoundedSmooth { scale } => scale.abs(),
        }
    }

    pub fn constant_value(&self) -> Option<f64> {
        match *self {
            Coefficient::Constant { value } => Some(value),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.constant_value() == Some(0.0)
    }

    /// Same family with the Lipschitz constant multiplied by `factor`.
    pub fn with_lipschitz_scaled(&self, factor: f64) -> Self {
        match *self {
            Coefficient::Constant { value } => Coefficient::Constant { value },
            Coefficient::Affine { a, b } => Coefficient::Affine { a, b: b * factor },
            Coefficient::BoundedSmooth { scale } => Coefficient::BoundedSmooth { scale: scale * factor },
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        let ok = match *self {
            Coefficient::Constant { value } => value.is_finite(),
            Coefficient::Affine { a, b } => a.is_finite() && b.is_finite(),
            Coefficient::BoundedSmooth { scale } => scale.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::param(format!("coefficient {name} has non-finite parameters")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSpec {
    pub sigma: Coefficient,
    pub b: Coefficient,
}

impl CoefficientSpec {
    /// `σ ≡ c`, `b ≡ 0`.
    pub fn additive(c: f64) -> Self {
        Self {
            sigma: Coefficient::Constant { value: c },
            b: Coefficient::ZERO,
        }
    }

    pub fn lipschitz(&self) -> (f64, f64) {
        (self.sigma.lipschitz(), self.b.lipschitz())
    }

    /// Coefficients do not depend on the state, so the forcing can be formed
    /// in Fourier space.
    pub fn state_independent(&self) -> bool {
        self.sigma.constant_value().is_some() && self.b.constant_value().is_some()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnapshotPolicy {
    /// Keep `u(t_j)` for every step.
    #[default]
    All,
    /// Keep only `u(t_0)` and `u(t_J)`.
    Final,
}

/// Test hook restricting the noise to a ball: the increments are low-pass
/// filtered by `exp(-taper^2 |ξ|^2 / 2)` and multiplied by the Gaussian
/// window `exp(-|x - center|^2 / 2 width^2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseMask {
    pub center: [f64; 3],
    pub width: f64,
    pub taper: f64,
}

#[derive(Clone, Debug)]
pub struct SolverConfig {
    pub grid: Grid,
    pub horizon: f64,
    pub steps: usize,
    pub init: InitialData,
    pub noise: CovarianceSpec,
    pub coeffs: CoefficientSpec,
    pub epsilon: f64,
    pub picard_tol: f64,
    pub max_picard: usize,
    pub snapshots: SnapshotPolicy,
    pub mask: Option<NoiseMask>,
}

impl SolverConfig {
    pub fn new(
        grid: Grid,
        horizon: f64,
        steps: usize,
        init: InitialData,
        noise: CovarianceSpec,
        coeffs: CoefficientSpec,
        epsilon: f64,
    ) -> Result<Self> {
        let cfg = Self {
            grid,
            horizon,
            steps,
            init,
            noise,
            coeffs,
            epsilon,
            picard_tol: 0.0,
            max_picard: steps + 2,
            snapshots: SnapshotPolicy::All,
            mask: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::param(format!("horizon must be positive, got {}", self.horizon)));
        }
        if self.horizon >= self.grid.l / 4.0 {
            return Err(Error::Wraparound {
                t: self.horizon,
                bound: self.grid.l / 4.0,
            });
        }
        if self.steps == 0 {
            return Err(Error::param("at least one time step is required"));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::param(format!("epsilon must lie in [0,1], got {}", self.epsilon)));
        }
        if self.init.grid() != self.grid {
            return Err(Error::param("initial data grid does not match the solver grid"));
        }
        if !(self.noise.beta > 0.0 && self.noise.beta < 2.0) {
            return Err(Error::BetaOutOfRange(self.noise.beta));
        }
        self.coeffs.sigma.validate("sigma")?;
        self.coeffs.b.validate("b")?;
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Self {
        Self {
            epsilon,
            ..self.clone()
        }
    }

    pub fn with_snapshots(&self, snapshots: SnapshotPolicy) -> Self {
        Self {
            snapshots,
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub grid: Grid,
    pub dt: f64,
    /// Step index of every stored snapshot, increasing.
    pub steps: Vec<usize>,
    pub snapshots: Vec<Field>,
}

impl Trajectory {
    pub fn final_snapshot(&self) -> &Field {
        self.snapshots
            .last()
            .expect("trajectory has at least the initial snapshot")
    }

    pub fn at_step(&self, step: usize) -> Option<&Field> {
        self.steps.binary_search(&step).ok().map(|i| &self.snapshots[i])
    }

    pub fn time(&self, i: usize) -> f64 {
        self.steps[i] as f64 * self.dt
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }
}

/// A discretised element of `L^2([0,T]; H)`: continuum Fourier coefficients
/// `H_jk = ∫ h(t_j, x) e^{-iξ_k·x} dx` for every left endpoint `t_j`.
///
/// `‖h‖^2 = Σ_j dt Σ_k L^{-3} S_k |H_jk|^2`.
#[derive(Clone, Debug, PartialEq)]
pub struct Control {
    pub grid: Grid,
    pub dt: f64,
    pub coeffs: Vec<Vec<C64>>,
    norm_sq: f64,
    pub bound: Option<f64>,
}

impl Control {
    pub fn new(grid: Grid, dt: f64, coeffs: Vec<Vec<C64>>, density: &DensityTable) -> Result<Self> {
        if density.grid != grid {
            return Err(Error::param("density table grid does not match control grid"));
        }
        for (j, slice) in coeffs.iter().enumerate() {
            if slice.len() != grid.len() {
                return Err(Error::param(format!("control slice {j} has wrong length")));
            }
            let scale = slice.iter().map(|c| c.norm()).fold(0.0, f64::max);
            for i in 0..grid.len() {
                let p = grid.partner(i);
                let c = slice[i];
                if !(c.re.is_finite() && c.im.is_finite()) {
                    return Err(Error::param(format!("non-finite control coefficient at step {j}")));
                }
                if (c - slice[p].conj()).norm() > 1e-12 * scale.max(1e-300) {
                    return Err(Error::param(format!(
                        "control slice {j} is not Hermitian symmetric at slot {i}"
                    )));
                }
            }
        }
        let norm_sq = norm_sq(&coeffs, dt, density);
        Ok(Self {
            grid,
            dt,
            coeffs,
            norm_sq,
            bound: None,
        })
    }

    pub(crate) fn from_parts(grid: Grid, dt: f64, coeffs: Vec<Vec<C64>>, density: &DensityTable) -> Self {
        let norm_sq = norm_sq(&coeffs, dt, density);
        Self {
            grid,
            dt,
            coeffs,
            norm_sq,
            bound: None,
        }
    }

    pub fn zero(grid: Grid, steps: usize, dt: f64) -> Self {
        Self {
            grid,
            dt,
            coeffs: vec![vec![C64::default(); grid.len()]; steps],
            norm_sq: 0.0,
            bound: None,
        }
    }

    /// Control whose real-space slices are `fields[j]`.
    pub fn from_fields(fields: &[Field], dt: f64, density: &DensityTable) -> Result<Self> {
        let grid = density.grid;
        let mut fft = Fft3::new(&grid);
        let dv = grid.cell_volume();
        let coeffs = fields
            .iter()
            .map(|f| {
                let mut s = fft.forward_real(&f.values);
                s.iter_mut().for_each(|c| *c *= dv);
                symmetrize(&grid, &mut s);
                s
            })
            .collect();
        Self::new(grid, dt, coeffs, density)
    }

    /// Attaches the ball `‖h‖ ≤ bound` (the set `H_T^N`).
    pub fn with_bound(mut self, bound: f64) -> Result<Self> {
        let norm = self.norm();
        if norm > bound {
            return Err(Error::ControlBound { norm, bound });
        }
        self.bound = Some(bound);
        Ok(self)
    }

    pub fn steps(&self) -> usize {
        self.coeffs.len()
    }

    pub fn norm_sq(&self) -> f64 {
        self.norm_sq
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq.sqrt()
    }

    pub fn recompute_norm_sq(&self, density: &DensityTable) -> f64 {
        norm_sq(&self.coeffs, self.dt, density)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            grid: self.grid,
            dt: self.dt,
            coeffs: self.coeffs.iter().map(|s| s.iter().map(|v| v * c).collect()).collect(),
            norm_sq: self.norm_sq * c * c,
            bound: None,
        }
    }

    pub fn is_zero_slice(&self, j: usize) -> bool {
        self.coeffs[j].iter().all(|c| c.re == 0.0 && c.im == 0.0)
    }

    /// Real-space slice `h(t_j, ·)`.
    pub fn field(&self, j: usize) -> Field {
        let mut fft = Fft3::new(&self.grid);
        let dv = self.grid.cell_volume();
        let values = fft.inverse_real(&self.coeffs[j]).into_iter().map(|v| v / dv).collect();
        Field {
            grid: self.grid,
            values,
        }
    }
}

fn norm_sq(coeffs: &[Vec<C64>], dt: f64, density: &DensityTable) -> f64 {
    let w = density.weight();
    coeffs
        .iter()
        .map(|slice| {
            slice
                .iter()
                .zip(&density.values)
                .map(|(c, s)| s * c.norm_sqr())
                .sum::<f64>()
        })
        .sum::<f64>()
        * dt
        * w
}

/// Forces exact Hermitian symmetry, `c_{-k} = conj(c_k)`.
pub fn symmetrize(grid: &Grid, spec: &mut [C64]) {
    for i in 0..grid.len() {
        let p = grid.partner(i);
        if p == i {
            spec[i] = C64::new(spec[i].re, 0.0);
        } else if i < p {
            let avg = 0.5 * (spec[i] + spec[p].conj());
            spec[i] = avg;
            spec[p] = avg.conj();
        }
    }
}

/// Where the noise of a run comes from.
#[derive(Clone, Copy, Debug)]
pub enum NoiseSource<'a> {
    None,
    Seed(u64),
    Explicit(&'a NoiseIncrements),
}

/// Noise increment of a single step.
#[derive(Clone, Copy, Debug)]
pub enum NoiseStep<'a> {
    None,
    Spectral(&'a [C64]),
    Real(&'a [f64]),
}

/// Per-mode propagation tables and the forcing machinery for one `dt`.
#[derive(Clone, Debug)]
pub struct Stepper {
    pub grid: Grid,
    pub dt: f64,
    pub density: DensityTable,
    pub(crate) coeffs: CoefficientSpec,
    epsilon: f64,
    pub(crate) cos_dt: Vec<f64>,
    pub(crate) m_dt: Vec<f64>,
    pub(crate) ksin_dt: Vec<f64>,
    taper: Option<Vec<f64>>,
    window: Option<Vec<f64>>,
    fft: Fft3,
    cbuf: Vec<C64>,
    fbuf: Vec<C64>,
    rbuf: Vec<f64>,
}

/// Spectral state `(û, ∂_t û)` in unnormalised FFT coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralState {
    pub u_hat: Vec<C64>,
    pub v_hat: Vec<C64>,
}

impl Stepper {
    pub fn new(config: &SolverConfig, dt: f64) -> Result<Self> {
        let grid = config.grid;
        let density = config.noise.density_table(&grid)?;
        let rho = grid.xi_norms();
        let cos_dt = rho.iter().map(|r| (dt * r).cos()).collect();
        let m_dt = rho.iter().map(|&r| multiplier(dt, r)).collect();
        let ksin_dt = rho.iter().map(|r| r * (dt * r).sin()).collect();
        let (taper, window) = match config.mask {
            Some(mask) => {
                let t = rho
                    .iter()
                    .map(|r| (-0.5 * mask.taper * mask.taper * r * r).exp())
                    .collect();
                let w = (0..grid.len())
                    .map(|i| {
                        let d = grid.distance_to(i, mask.center);
                        (-d * d / (2.0 * mask.width * mask.width)).exp()
                    })
                    .collect();
                (Some(t), Some(w))
            }
            None => (None, None),
        };
        Ok(Self {
            grid,
            dt,
            density,
            coeffs: config.coeffs,
            epsilon: config.epsilon,
            cos_dt,
            m_dt,
            ksin_dt,
            taper,
            window,
            fft: Fft3::new(&grid),
            cbuf: Vec::new(),
            fbuf: Vec::new(),
            rbuf: vec![0.0; grid.len()],
        })
    }

    pub fn fft(&mut self) -> &mut Fft3 {
        &mut self.fft
    }

    fn spectral_path(&self) -> bool {
        self.coeffs.state_independent() && self.window.is_none()
    }

    pub fn state_from(&mut self, u: &Field, v: &Field) -> SpectralState {
        SpectralState {
            u_hat: self.fft.forward_real(&u.values),
            v_hat: self.fft.forward_real(&v.values),
        }
    }

    pub fn position(&mut self, state: &SpectralState, out: &mut [f64]) {
        let mut buf = std::mem::take(&mut self.cbuf);
        self.fft.inverse_real_into(&state.u_hat, &mut buf, out);
        self.cbuf = buf;
    }

    /// FFT of `Γ⋆h` for one control slice: `S_k H_k / dx^3`.
    pub fn control_drift_spectrum(&self, slice: &[C64], out: &mut Vec<C64>) {
        let dv = self.grid.cell_volume();
        out.clear();
        out.extend(slice.iter().zip(&self.density.values).map(|(h, s)| h * (s / dv)));
    }

    /// Real-space noise increment with the optional mask applied.
    fn real_noise(&mut self, noise: NoiseStep<'_>, out: &mut Vec<f64>) -> bool {
        let n = self.grid.len();
        out.resize(n, 0.0);
        match noise {
            NoiseStep::None => return false,
            NoiseStep::Spectral(s) => {
                let mut buf = std::mem::take(&mut self.cbuf);
                buf.clear();
                buf.extend_from_slice(s);
                if let Some(t) = &self.taper {
                    buf.iter_mut().zip(t).for_each(|(c, t)| *c *= t);
                }
                self.fft.inverse(&mut buf);
                out.iter_mut().zip(&buf).for_each(|(o, c)| *o = c.re);
                self.cbuf = buf;
            }
            NoiseStep::Real(r) => {
                if let Some(t) = &self.taper {
                    let mut buf = std::mem::take(&mut self.cbuf);
                    self.fft.forward_real_into(r, &mut buf);
                    buf.iter_mut().zip(t).for_each(|(c, t)| *c *= t);
                    self.fft.inverse(&mut buf);
                    out.iter_mut().zip(&buf).for_each(|(o, c)| *o = c.re);
                    self.cbuf = buf;
                } else {
                    out.copy_from_slice(r);
                }
            }
        }
        if let Some(w) = &self.window {
            out.iter_mut().zip(w).for_each(|(o, w)| *o *= w);
        }
        true
    }

    /// Spectrum of the step impulse `f_j` evaluated at the left endpoint
    /// `u_left`; `None` when the impulse vanishes identically.
    pub fn impulse(&mut self, u_left: &[f64], noise: NoiseStep<'_>, control: Option<&[C64]>) -> Option<Vec<C64>> {
        let n = self.grid.len();
        let dt = self.dt;
        let sq_eps = self.epsilon.sqrt();
        let noise = if self.epsilon == 0.0 { NoiseStep::None } else { noise };
        let control = control.filter(|c| c.iter().any(|v| v.re != 0.0 || v.im != 0.0));
        let sigma = self.coeffs.sigma;
        let b = self.coeffs.b;
        let has_noise = !matches!(noise, NoiseStep::None) && !sigma.is_zero();
        let has_control = control.is_some() && !sigma.is_zero();
        let has_drift = !b.is_zero();
        if !(has_noise || has_control || has_drift) {
            return None;
        }
        let mut out = vec![C64::default(); n];
        if self.spectral_path() {
            let s = sigma.constant_value().unwrap();
            if has_noise {
                match noise {
                    NoiseStep::Spectral(w) => {
                        out.iter_mut().zip(w).for_each(|(o, w)| *o += w * (sq_eps * s));
                    }
                    NoiseStep::Real(r) => {
                        let w = self.fft.forward_real(r);
                        out.iter_mut().zip(&w).for_each(|(o, w)| *o += w * (sq_eps * s));
                    }
                    NoiseStep::None => {}
                }
            }
            if has_control {
                let mut g = std::mem::take(&mut self.fbuf);
                self.control_drift_spectrum(control.unwrap(), &mut g);
                out.iter_mut().zip(&g).for_each(|(o, g)| *o += g * (s * dt));
                self.fbuf = g;
            }
            if has_drift {
                out[0] += C64::new(b.constant_value().unwrap() * dt * n as f64, 0.0);
            }
            return Some(out);
        }
        let mut imp = vec![0.0; n];
        if has_noise {
            let mut w = std::mem::take(&mut self.rbuf);
            self.real_noise(noise, &mut w);
            for i in 0..n {
                imp[i] += sq_eps * sigma.eval(u_left[i]) * w[i];
            }
            self.rbuf = w;
        }
        if has_control {
            let mut g = std::mem::take(&mut self.fbuf);
            self.control_drift_spectrum(control.unwrap(), &mut g);
            self.fft.inverse(&mut g);
            for i in 0..n {
                imp[i] += sigma.eval(u_left[i]) * g[i].re * dt;
            }
            self.fbuf = g;
        }
        if has_drift {
            for i in 0..n {
                imp[i] += b.eval(u_left[i]) * dt;
            }
        }
        self.fft.forward_real_into(&imp, &mut out);
        Some(out)
    }

    /// Exact rotation of every mode over `dt` plus the optional impulse.
    pub fn propagate(&self, state: &mut SpectralState, impulse: Option<&[C64]>) {
        for i in 0..self.grid.len() {
            let (c, m, k) = (self.cos_dt[i], self.m_dt[i], self.ksin_dt[i]);
            let (u, v) = (state.u_hat[i], state.v_hat[i]);
            let (mut nu, mut nv) = (u * c + v * m, v * c - u * k);
            if let Some(f) = impulse {
                nu += f[i] * m;
                nv += f[i] * c;
            }
            state.u_hat[i] = nu;
            state.v_hat[i] = nv;
        }
    }

    /// One step of the scheme from `t_j` to `t_{j+1}`.
    pub fn advance(
        &mut self,
        state: &mut SpectralState,
        step: usize,
        u_left: &[f64],
        noise: NoiseStep<'_>,
        control: Option<&[C64]>,
    ) -> Result<()> {
        let imp = self.impulse(u_left, noise, control);
        self.propagate(state, imp.as_deref());
        if state
            .u_hat
            .iter()
            .chain(&state.v_hat)
            .any(|c| !(c.re.is_finite() && c.im.is_finite()))
        {
            return Err(Error::NonFinite { step });
        }
        Ok(())
    }
}

/// Single step of the scheme on real fields `(u, ∂_t u)`.
pub fn step(
    state: (&Field, &Field),
    dt: f64,
    noise_increment: Option<&Field>,
    control_slice: Option<&[C64]>,
    config: &SolverConfig,
) -> Result<(Field, Field)> {
    if !state.0.is_finite() || !state.1.is_finite() {
        return Err(Error::NonFinite { step: 0 });
    }
    let mut stepper = Stepper::new(config, dt)?;
    let mut s = stepper.state_from(state.0, state.1);
    let noise = match noise_increment {
        Some(f) => NoiseStep::Real(&f.values),
        None => NoiseStep::None,
    };
    stepper.advance(&mut s, 0, &state.0.values, noise, control_slice)?;
    let grid = config.grid;
    let mut fft = Fft3::new(&grid);
    Ok((
        Field {
            grid,
            values: fft.inverse_real(&s.u_hat),
        },
        Field {
            grid,
            values: fft.inverse_real(&s.v_hat),
        },
    ))
}

/// Reusable solver for one configuration.
#[derive(Clone, Debug)]
pub struct Solver {
    pub config: SolverConfig,
    pub stepper: Stepper,
    sampler: NoiseSampler,
    noise_buf: Vec<C64>,
}

impl Solver {
    pub fn new(config: &SolverConfig) -> Result<Self> {
        config.validate()?;
        let stepper = Stepper::new(config, config.dt())?;
        let sampler = NoiseSampler::new(&stepper.density);
        Ok(Self {
            config: config.clone(),
            stepper,
            sampler,
            noise_buf: Vec::new(),
        })
    }

    pub fn density(&self) -> &DensityTable {
        &self.stepper.density
    }

    fn check_control(&self, control: Option<&Control>) -> Result<()> {
        if let Some(h) = control {
            if h.grid != self.config.grid || h.steps() != self.config.steps {
                return Err(Error::param(format!(
                    "control has {} slices on {:?}, config needs {} on {:?}",
                    h.steps(),
                    h.grid,
                    self.config.steps,
                    self.config.grid
                )));
            }
        }
        Ok(())
    }

    fn check_noise(&self, noise: &NoiseSource<'_>) -> Result<()> {
        if let NoiseSource::Explicit(n) = noise {
            if n.grid != self.config.grid || n.steps() < self.config.steps {
                return Err(Error::param(
                    "explicit noise does not cover the configured grid and steps",
                ));
            }
        }
        Ok(())
    }

    fn noise_step<'a>(&'a mut self, noise: &NoiseSource<'a>, j: usize) -> NoiseStep<'a> {
        if self.config.epsilon == 0.0 {
            return NoiseStep::None;
        }
        match *noise {
            NoiseSource::None => NoiseStep::None,
            NoiseSource::Seed(seed) => {
                self.noise_buf.resize(self.config.grid.len(), C64::default());
                self.sampler
                    .fill_spectral(seed, j as u64, self.config.dt().sqrt(), &mut self.noise_buf);
                NoiseStep::Spectral(&self.noise_buf)
            }
            NoiseSource::Explicit(n) => NoiseStep::Real(&n.increments[j].values),
        }
    }

    /// Runs the scheme over `[0, T]`.
    pub fn solve(&mut self, control: Option<&Control>, noise: NoiseSource<'_>) -> Result<Trajectory> {
        self.check_control(control)?;
        self.check_noise(&noise)?;
        let grid = self.config.grid;
        let steps = self.config.steps;
        let keep_all = self.config.snapshots == SnapshotPolicy::All;
        let init = self.config.init.clone();
        let mut state = self.stepper.state_from(&init.v0, &init.v0_tilde);
        let mut u = init.v0.values.clone();
        let mut snaps = vec![init.v0.clone()];
        let mut idx = vec![0];
        let needs_u = !self.stepper.spectral_path();
        for j in 0..steps {
            let slice = control.map(|h| h.coeffs[j].as_slice());
            let mut stepper = std::mem::replace(&mut self.stepper, placeholder_stepper(&grid));
            let res = {
                let ns = self.noise_step(&noise, j);
                stepper.advance(&mut state, j, &u, ns, slice)
            };
            self.stepper = stepper;
            res?;
            let last = j + 1 == steps;
            if needs_u || keep_all || last {
                self.stepper.position(&state, &mut u);
                if u.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite { step: j + 1 });
                }
            }
            if keep_all || last {
                snaps.push(Field {
                    grid,
                    values: u.clone(),
                });
                idx.push(j + 1);
            }
        }
        Ok(Trajectory {
            grid,
            dt: self.config.dt(),
            steps: idx,
            snapshots: snaps,
        })
    }

    /// `w(t_j)` at the requested steps.
    pub fn homogeneous(&mut self, steps: &[usize]) -> Result<Vec<Field>> {
        let dt = self.config.dt();
        let grid = self.config.grid;
        steps
            .iter()
            .map(|&j| homogeneous_with(&self.config.init, &grid, j as f64 * dt, self.stepper.fft()))
            .collect()
    }

    /// Picard iteration of the discrete mild map on a fixed noise path.
    ///
    /// `u^(0) = w`; `u^(n+1)` is the scheme with every impulse evaluated at
    /// `u^(n)`. The map is causal, so after `n` iterates the first `n` steps
    /// are exact and the gap is identically zero after at most `J + 1`.
    pub fn picard_solve(
        &mut self,
        control: Option<&Control>,
        noise: &NoiseIncrements,
        tol: f64,
    ) -> Result<PicardReport> {
        self.check_control(control)?;
        self.check_noise(&NoiseSource::Explicit(noise))?;
        let grid = self.config.grid;
        let steps = self.config.steps;
        let all: Vec<usize> = (0..=steps).collect();
        let mut current: Vec<Vec<f64>> = self.homogeneous(&all)?.into_iter().map(|f| f.values).collect();
        current[0] = self.config.init.v0.values.clone();
        let mut gaps = Vec::new();
        let budget = self.config.max_picard.max(1);
        for iter in 0..budget {
            let init = self.config.init.clone();
            let mut state = self.stepper.state_from(&init.v0, &init.v0_tilde);
            let mut next = vec![init.v0.values.clone()];
            let mut u = vec![0.0; grid.len()];
            for j in 0..steps {
                let slice = control.map(|h| h.coeffs[j].as_slice());
                let ns = if self.config.epsilon == 0.0 {
                    NoiseStep::None
                } else {
                    NoiseStep::Real(&noise.increments[j].values)
                };
                self.stepper.advance(&mut state, j, &current[j], ns, slice)?;
                self.stepper.position(&state, &mut u);
                next.push(u.clone());
            }
            let gap = next
                .iter()
                .zip(&current)
                .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
                .fold(0.0, f64::max);
            if !gap.is_finite() {
                return Err(Error::NonFinite { step: steps });
            }
            gaps.push(gap);
            current = next;
            if gap <= tol {
                let snapshots = current.into_iter().map(|values| Field { grid, values }).collect();
                return Ok(PicardReport {
                    trajectory: Trajectory {
                        grid,
                        dt: self.config.dt(),
                        steps: all,
                        snapshots,
                    },
                    iterations: iter + 1,
                    gaps,
                });
            }
        }
        let last_gap = *gaps.last().unwrap();
        Err(Error::PicardDiverged {
            iterations: budget,
            last_gap,
            gaps,
        })
    }
}

fn placeholder_stepper(grid: &Grid) -> Stepper {
    Stepper {
        grid: *grid,
        dt: 0.0,
        density: DensityTable {
            grid: *grid,
            values: Vec::new(),
        },
        coeffs: CoefficientSpec::additive(0.0),
        epsilon: 0.0,
        cos_dt: Vec::new(),
        m_dt: Vec::new(),
        ksin_dt: Vec::new(),
        taper: None,
        window: None,
        fft: Fft3::new(grid),
        cbuf: Vec::new(),
        fbuf: Vec::new(),
        rbuf: Vec::new(),
    }
}

#[derive(Clone, Debug)]
pub struct PicardReport {
    pub trajectory: Trajectory,
    pub iterations: usize,
    /// `sup_{j,x} |u^(n+1) - u^(n)|` for every iterate.
    pub gaps: Vec<f64>,
}

/// Convenience wrapper: build a solver and run it once.
pub fn solve(config: &SolverConfig, control: Option<&Control>, noise: NoiseSource<'_>) -> Result<Trajectory> {
    Solver::new(config)?.solve(control, noise)
}

pub fn picard_solve(
    config: &SolverConfig,
    control: Option<&Control>,
    noise: &NoiseIncrements,
    tol: f64,
) -> Result<PicardReport> {
    Solver::new(config)?.picard_solve(control, noise, tol)
}
