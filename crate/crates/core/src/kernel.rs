//! The fundamental solution `G(t)` of the 3-D wave equation as a Fourier
//! multiplier, its mollified version `G_n`, the homogeneous solution `w` and
//! the Dalang integral.
//!
//! `G(t)` is a measure (`σ_t / 4πt`), so the solver only ever uses its symbol
//! `m(t, ξ) = sin(t|ξ|)/|ξ|`. The surface-measure picture appears in
//! [`Mollifier::kernel_field`] and in the test oracles.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::covariance::{CovarianceSpec, Phi};
use crate::error::{Error, Result};
use crate::fft::{Fft3, C64};
use crate::grid::{Field, Grid};
use crate::quad::{adaptive, GaussRule};

/// `sin(t|ξ|)/|ξ|` with its limit `t` at `ξ = 0`.
#[inline]
pub fn multiplier(t: f64, rho: f64) -> f64 {
    if rho == 0.0 {
        t
    } else {
        (t * rho).sin() / rho
    }
}

pub fn kernel_multiplier(t: f64, rho: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::param(format!("kernel time must be nonnegative, got {t}")));
    }
    Ok(multiplier(t, rho))
}

/// Per-mode propagator of `(û, ∂_t û)` over time `t`:
/// `[[cos, m], [-|ξ| sin, cos]]`.
#[inline]
pub fn propagator(t: f64, rho: f64) -> [[f64; 2]; 2] {
    let (s, c) = (t * rho).sin_cos();
    [[c, multiplier(t, rho)], [-rho * s, c]]
}

/// `m(t, ξ_k)` on every lattice slot.
#[derive(Clone, Debug)]
pub struct KernelMultiplier {
    pub t: f64,
    pub values: Vec<f64>,
}

impl KernelMultiplier {
    pub fn new(grid: &Grid, t: f64) -> Result<Self> {
        if !(t >= 0.0) {
            return Err(Error::param(format!("kernel time must be nonnegative, got {t}")));
        }
        let values = grid.xi_norms().into_iter().map(|r| multiplier(t, r)).collect();
        Ok(Self { t, values })
    }
}

/// `∫ |F G(t)(ξ)|^2 μ(dξ)` for constant `φ`, with `μ(dξ) = (2π)^{-3} S(ξ) dξ`.
///
/// Evaluated as a radial integral in `|ξ|`: a power series near the origin,
/// adaptive Gauss–Kronrod over half-periods of `sin^2(t|ξ|)`, and an
/// asymptotic expansion for the oscillatory tail.
pub fn dalang_integral(spec: &CovarianceSpec, t: f64) -> Result<f64> {
    if !(spec.beta > 0.0 && spec.beta < 2.0) {
        return Err(Error::BetaOutOfRange(spec.beta));
    }
    if !matches!(spec.phi, Phi::Constant { .. }) {
        return Err(Error::param("dalang_integral is defined for constant phi only"));
    }
    if !(t > 0.0) {
        return Err(Error::param(format!("t must be positive, got {t}")));
    }
    let radial = radial_sin2_integral(spec.beta - 3.0, t);
    Ok(spec.normalization() / (2.0 * PI * PI) * radial)
}

/// `∫_0^∞ sin^2(tρ) ρ^p dρ` for `-3 < p < -1`.
fn radial_sin2_integral(p: f64, t: f64) -> f64 {
    // series on [0, 1/t]: sin^2 x = Σ (-1)^{n+1} 2^{2n-1} x^{2n} / (2n)!
    let r0 = 1.0 / t;
    let mut head = 0.0;
    let mut coef = 1.0; // x^{2n}/(2n)! accumulated with t^{2n} r0^{2n} = 1
    for n in 1..40 {
        let k = 2 * n;
        coef /= ((k - 1) * k) as f64;
        let sign = if n % 2 == 1 { 1.0 } else { -1.0 };
        let term = sign * 2f64.powi(k - 1) * coef * r0.powf(p + 1.0) / (k as f64 + p + 1.0);
        head += term;
        if term.abs() < 1e-18 * head.abs() {
            break;
        }
    }
    let half = PI / t;
    let segments = 400;
    let f = |r: f64| (t * r).sin().powi(2) * r.powf(p);
    let mut body = 0.0;
    let mut a = r0;
    for _ in 0..segments {
        body += adaptive(f, a, a + half, 0.0, 1e-13);
        a += half;
    }
    let r = a;
    // ∫_R^∞ sin^2(tρ) ρ^p = ½∫ρ^p − ½∫cos(2tρ)ρ^p
    let smooth = 0.5 * r.powf(p + 1.0) / (-(p + 1.0));
    let osc = cos_tail(2.0 * t, p, r);
    head + body + smooth - 0.5 * osc
}

/// Asymptotic expansion of `∫_R^∞ cos(aρ) ρ^p dρ`.
fn cos_tail(a: f64, p: f64, r: f64) -> f64 {
    let (s, c) = (a * r).sin_cos();
    // repeated integration by parts
    let mut total = 0.0;
    let mut q = p;
    let mut fac = 1.0;
    for k in 0..6 {
        let rq = r.powf(q);
        let term = match k % 4 {
            0 => -s * rq / a,
            1 => c * rq / a,
            2 => s * rq / a,
            _ => -c * rq / a,
        };
        total += fac * term;
        fac *= q / a;
        q -= 1.0;
    }
    total
}

/// Initial position and velocity with their declared smoothness exponents.
#[derive(Clone, Debug, PartialEq)]
pub struct InitialData {
    pub v0: Field,
    pub v0_tilde: Field,
    /// Declared Hölder exponent of `Δv0`.
    pub gamma1: f64,
    /// Declared Hölder exponent of `ṽ0`.
    pub gamma2: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialFamily {
    Zero,
    /// `amplitude · cos(ξ_k · x)` for integer wavenumber `k`, zero velocity.
    SingleMode {
        k: [i64; 3],
        amplitude: f64,
    },
    /// Gaussian position profile centred in the box, zero velocity.
    GaussianBump {
        width: f64,
        amplitude: f64,
    },
}

impl InitialData {
    pub fn new(v0: Field, v0_tilde: Field, gamma1: f64, gamma2: f64) -> Result<Self> {
        if v0.grid != v0_tilde.grid {
            return Err(Error::param("initial position and velocity live on different grids"));
        }
        if !v0.is_finite() || !v0_tilde.is_finite() {
            return Err(Error::param("initial data must be finite"));
        }
        for g in [gamma1, gamma2] {
            if !(g > 0.0 && g <= 1.0) {
                return Err(Error::param(format!("Hölder exponents must lie in ]0,1], got {g}")));
            }
        }
        Ok(Self {
            v0,
            v0_tilde,
            gamma1,
            gamma2,
        })
    }

    pub fn grid(&self) -> Grid {
        self.v0.grid
    }

    pub fn zero(grid: Grid) -> Self {
        Self {
            v0: Field::zeros(grid),
            v0_tilde: Field::zeros(grid),
            gamma1: 1.0,
            gamma2: 1.0,
        }
    }

    pub fn from_family(grid: Grid, family: &InitialFamily) -> Self {
        match *family {
            InitialFamily::Zero => Self::zero(grid),
            InitialFamily::SingleMode { k, amplitude } => Self::single_mode(grid, k, amplitude),
            InitialFamily::GaussianBump { width, amplitude } => {
                Self::gaussian_bump(grid, grid.center(), width, amplitude)
            }
        }
    }

    pub fn single_mode(grid: Grid, k: [i64; 3], amplitude: f64) -> Self {
        let s = std::f64::consts::TAU / grid.l;
        let v0 = Field::from_fn(grid, |x| {
            amplitude * (s * (k[0] as f64 * x[0] + k[1] as f64 * x[1] + k[2] as f64 * x[2])).cos()
        });
        Self {
            v0,
            v0_tilde: Field::zeros(grid),
            gamma1: 1.0,
            gamma2: 1.0,
        }
    }

    /// `amplitude · exp(-|x-c|^2 / 2 width^2)` (minimum image), zero velocity.
    ///
    /// Compact to within `tol` outside [`gaussian_radius`]; when `width` spans
    /// a few cells it is also band limited to the same accuracy, so the
    /// lattice propagator keeps its light cone sharp.
    pub fn gaussian_bump(grid: Grid, center: [f64; 3], width: f64, amplitude: f64) -> Self {
        let v0 = Field {
            grid,
            values: (0..grid.len())
                .map(|i| {
                    let r = grid.distance_to(i, center);
                    amplitude * (-r * r / (2.0 * width * width)).exp()
                })
                .collect(),
        };
        Self {
            v0,
            v0_tilde: Field::zeros(grid),
            gamma1: 1.0,
            gamma2: 1.0,
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.v0.sup_norm().max(self.v0_tilde.sup_norm())
    }
}

/// Radius beyond which a unit Gaussian of the given width is below `tol`.
pub fn gaussian_radius(width: f64, tol: f64) -> f64 {
    width * (2.0 * (1.0 / tol).ln()).sqrt()
}

/// `w(t) = ∂_t G(t) * v0 + G(t) * ṽ0`, evaluated spectrally.
pub fn homogeneous_solution(init: &InitialData, grid: &Grid, t: f64) -> Result<Field> {
    let mut fft = Fft3::new(grid);
    homogeneous_with(init, grid, t, &mut fft)
}

pub(crate) fn homogeneous_with(init: &InitialData, grid: &Grid, t: f64, fft: &mut Fft3) -> Result<Field> {
    let bound = grid.l / 4.0;
    if !(t >= 0.0) {
        return Err(Error::param(format!("t must be nonnegative, got {t}")));
    }
    if t > bound {
        return Err(Error::Wraparound { t, bound });
    }
    if init.grid() != *grid {
        return Err(Error::param("initial data grid does not match"));
    }
    if t == 0.0 {
        return Ok(init.v0.clone());
    }
    let pos = fft.forward_real(&init.v0.values);
    let vel = fft.forward_real(&init.v0_tilde.values);
    let spec: Vec<C64> = (0..grid.len())
        .map(|i| {
            let rho = grid.xi_norm(i);
            pos[i] * (t * rho).cos() + vel[i] * multiplier(t, rho)
        })
        .collect();
    Ok(Field {
        grid: *grid,
        values: fft.inverse_real(&spec),
    })
}

/// Discrete wave energy `Σ_k |v̂_k|^2 + |ξ_k|^2 |û_k|^2`.
pub fn wave_energy(grid: &Grid, u_hat: &[C64], v_hat: &[C64]) -> f64 {
    (0..grid.len())
        .map(|i| {
            let r = grid.xi_norm(i);
            v_hat[i].norm_sqr() + r * r * u_hat[i].norm_sqr()
        })
        .sum()
}

/// Normalised bump `ψ(x) ∝ exp(-1/(1-|x|^2))` supported in the unit ball.
#[derive(Clone, Debug)]
pub struct Mollifier {
    norm: f64,
    rule: GaussRule,
}

fn bump_profile(r: f64) -> f64 {
    if r >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - r * r)).exp()
    }
}

impl Default for Mollifier {
    fn default() -> Self {
        Self::new()
    }
}

impl Mollifier {
    pub fn new() -> Self {
        let mass = 4.0 * PI * adaptive(|r| bump_profile(r) * r * r, 0.0, 1.0, 1e-16, 1e-14);
        Self {
            norm: 1.0 / mass,
            rule: GaussRule::new(160),
        }
    }

    pub fn psi(&self, r: f64) -> f64 {
        self.norm * bump_profile(r)
    }

    /// `ψ_n(t, ·)` at radius `r`: `(n/t)^3 ψ(n r / t)`.
    pub fn psi_n(&self, n: u32, t: f64, r: f64) -> f64 {
        let s = n as f64 / t;
        s.powi(3) * self.psi(s * r)
    }

    /// Radial Fourier transform `F ψ(η)`, `F ψ(0) = 1`.
    pub fn fourier(&self, eta: f64) -> f64 {
        let integrand = |r: f64| {
            let x = eta * r;
            let sinc = if x.abs() < 1e-8 { 1.0 - x * x / 6.0 } else { x.sin() / x };
            bump_profile(r) * r * r * sinc
        };
        4.0 * PI * self.norm * self.rule.integrate(0.0, 1.0, integrand)
    }

    /// Symbol of `G_n(t) = ψ_n(t,·) * G(t)`.
    pub fn mollified_multiplier(&self, n: u32, t: f64, rho: f64) -> Result<f64> {
        if n == 0 {
            return Err(Error::param("mollification index n must be >= 1"));
        }
        if !(t > 0.0) {
            return Err(Error::param(format!("t must be positive, got {t}")));
        }
        Ok(self.fourier(t * rho / n as f64) * multiplier(t, rho))
    }

    /// `G_n(t, x)` centred at the origin, synthesised in real space.
    ///
    /// Averaging `ψ_n` over the sphere of radius `t` reduces to
    /// `(1 / 2|x|) ∫_{||x|-t|}^{|x|+t} ψ_n(t, s) s ds`, which vanishes
    /// identically for `|x| ≥ t(1 + 1/n)`.
    pub fn kernel_field(&self, n: u32, t: f64, grid: &Grid) -> Result<Field> {
        if n == 0 || !(t > 0.0) {
            return Err(Error::param("kernel_field needs n >= 1 and t > 0"));
        }
        let support = t / n as f64;
        let values = (0..grid.len())
            .map(|i| {
                let r = grid.min_image_distance(0, i);
                let lo = (r - t).abs();
                let hi = (r + t).min(support);
                if lo >= hi {
                    return 0.0;
                }
                if r == 0.0 {
                    return t * self.psi_n(n, t, t);
                }
                let f = |s: f64| self.psi_n(n, t, s) * s;
                adaptive(f, lo, hi, 0.0, 1e-12) / (2.0 * r)
            })
            .collect();
        Ok(Field { grid: *grid, values })
    }
}

pub fn mollified_multiplier(n: u32, t: f64, rho: f64) -> Result<f64> {
    Mollifier::new().mollified_multiplier(n, t, rho)
}
