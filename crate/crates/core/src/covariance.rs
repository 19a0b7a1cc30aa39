//! Spatial covariance `Γ(dx) = φ(x)|x|^{-β} dx`, its spectral density on the
//! lattice and seeded sampling of the white-in-time noise increments.
//!
//! Spectral coefficients throughout the crate use the unnormalised FFT
//! convention of [`crate::fft`]. With `S_k` the lattice spectral density, a
//! stationary field is `u(x) = Σ_k sqrt(S_k / L^3) Z_k e^{iξ_k·x}` with
//! Hermitian-paired standard complex Gaussians `Z_k`, so that its covariance
//! is `C(r) = L^{-3} Σ_k S_k e^{iξ_k·r}`.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::fft::{Fft3, C64};
use crate::grid::{Field, Grid};
use crate::quad::gauss_legendre;
use crate::rng::ModeStream;

/// Fourier-pair constant `c(β)` with `F[|x|^{-β}](ξ) = c(β)|ξ|^{β-3}` in three
/// dimensions, valid for `0 < β < 3`.
pub fn riesz_constant(beta: f64) -> f64 {
    PI.powf(1.5) * 2f64.powf(3.0 - beta) * gamma((3.0 - beta) / 2.0) / gamma(beta / 2.0)
}

/// Average of `|x|^p` over the cube `[-h, h]^3`, `p > -3`.
///
/// The cube splits into six pyramids with apex at the origin; on each the
/// radial factor integrates in closed form and what remains is a smooth
/// integral over the unit square.
pub fn cube_average_power(p: f64, h: f64) -> f64 {
    assert!(p > -3.0, "|x|^p is not integrable at the origin for p <= -3");
    let (x, w) = gauss_legendre(48);
    let mut face = 0.0;
    for (s, ws) in x.iter().zip(&w) {
        for (t, wt) in x.iter().zip(&w) {
            face += ws * wt * (1.0 + s * s + t * t).powf(0.5 * p);
        }
    }
    h.powf(p) * 6.0 * face / (8.0 * (3.0 + p))
}

/// Correlation modulation `φ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Phi {
    /// `φ ≡ value`.
    Constant { value: f64 },
    /// `φ(x) = 1 + amplitude · exp(-|x|^2 / (2 width^2))`.
    GaussianBump { amplitude: f64, width: f64 },
}

impl Phi {
    pub fn eval(&self, r: f64) -> f64 {
        match *self {
            Phi::Constant { value } => value,
            Phi::GaussianBump { amplitude, width } => 1.0 + amplitude * (-r * r / (2.0 * width * width)).exp(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovarianceSpec {
    pub beta: f64,
    pub phi: Phi,
    /// Declared Hölder exponent of `∇φ`, in `]0,1]`.
    pub delta: f64,
}

impl CovarianceSpec {
    pub fn new(beta: f64, phi: Phi, delta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta < 2.0) {
            return Err(Error::BetaOutOfRange(beta));
        }
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(Error::param(format!("delta must lie in ]0,1], got {delta}")));
        }
        match phi {
            Phi::Constant { value } if !(value > 0.0 && value.is_finite()) => {
                return Err(Error::param("constant phi must be positive"));
            }
            Phi::GaussianBump { amplitude, width }
                if !(amplitude >= 0.0 && width > 0.0 && amplitude.is_finite() && width.is_finite()) =>
            {
                return Err(Error::param("gaussian_bump needs amplitude >= 0 and width > 0"));
            }
            _ => {}
        }
        Ok(Self { beta, phi, delta })
    }

    /// `φ ≡ 1`, `δ = 1`.
    pub fn riesz(beta: f64) -> Result<Self> {
        Self::new(beta, Phi::Constant { value: 1.0 }, 1.0)
    }

    /// Constant multiplying `|ξ|^{β-3}` in the continuum density (far field
    /// for non-constant `φ`).
    pub fn normalization(&self) -> f64 {
        let scale = match self.phi {
            Phi::Constant { value } => value,
            Phi::GaussianBump { .. } => 1.0,
        };
        scale * riesz_constant(self.beta)
    }

    /// Covariance density `f(x) = φ(x)|x|^{-β}`, `x ≠ 0`.
    pub fn covariance(&self, r: f64) -> f64 {
        self.phi.eval(r) * r.powf(-self.beta)
    }

    /// Spectral density at frequency `xi` for the given lattice.
    ///
    /// For constant `φ` this is `normalization · |ξ|^{β-3}`, with the origin
    /// replaced by the average over its Brillouin cell. Otherwise it is the
    /// discrete transform of the sampled covariance evaluated at `xi`.
    pub fn spectral_density(&self, grid: &Grid, xi: [f64; 3]) -> Result<f64> {
        let norm = (xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2]).sqrt();
        match self.phi {
            Phi::Constant { .. } => {
                if norm == 0.0 {
                    Ok(self.zero_mode(grid))
                } else {
                    Ok(self.normalization() * norm.powf(self.beta - 3.0))
                }
            }
            Phi::GaussianBump { .. } => {
                let cov = self.sampled_covariance(grid);
                let dv = grid.cell_volume();
                let s: f64 = (0..grid.len())
                    .map(|i| {
                        let x = grid.position(i);
                        cov[i] * (xi[0] * x[0] + xi[1] * x[1] + xi[2] * x[2]).cos()
                    })
                    .sum();
                Ok((s * dv).max(0.0))
            }
        }
    }

    fn zero_mode(&self, grid: &Grid) -> f64 {
        self.normalization() * cube_average_power(self.beta - 3.0, PI / grid.l)
    }

    /// Minimum-image samples of `φ(x)|x|^{-β}`; the origin cell is averaged.
    fn sampled_covariance(&self, grid: &Grid) -> Vec<f64> {
        let origin = self.phi.eval(0.0) * cube_average_power(-self.beta, 0.5 * grid.dx());
        (0..grid.len())
            .map(|i| {
                if i == 0 {
                    origin
                } else {
                    self.covariance(grid.min_image_distance(0, i))
                }
            })
            .collect()
    }

    /// Spectral density at every lattice frequency.
    pub fn density_table(&self, grid: &Grid) -> Result<DensityTable> {
        let values = match self.phi {
            Phi::Constant { .. } => {
                let c = self.normalization();
                (0..grid.len())
                    .map(|i| {
                        if i == 0 {
                            self.zero_mode(grid)
                        } else {
                            c * grid.xi_norm(i).powf(self.beta - 3.0)
                        }
                    })
                    .collect()
            }
            Phi::GaussianBump { .. } => {
                let cov = self.sampled_covariance(grid);
                let mut fft = Fft3::new(grid);
                let dv = grid.cell_volume();
                let raw: Vec<f64> = fft.forward_real(&cov).iter().map(|c| c.re * dv).collect();
                let max = raw.iter().cloned().fold(0.0, f64::max);
                let mut out = Vec::with_capacity(raw.len());
                for (i, &v) in raw.iter().enumerate() {
                    if v >= 0.0 {
                        out.push(v);
                    } else if v > -1e-10 * max {
                        out.push(0.0);
                    } else {
                        return Err(Error::NotPositiveDefinite { index: i, value: v });
                    }
                }
                out
            }
        };
        Ok(DensityTable { grid: *grid, values })
    }
}

/// Lattice spectral density `S_k`, one entry per FFT slot.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityTable {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl DensityTable {
    /// Lattice quadrature weight `w_k = L^{-3}`.
    pub fn weight(&self) -> f64 {
        1.0 / self.grid.volume()
    }

    /// Discrete covariance `C(x) = L^{-3} Σ_k S_k e^{iξ_k·x}` on the lattice.
    pub fn covariance_field(&self) -> Field {
        let mut fft = Fft3::new(&self.grid);
        let spec: Vec<C64> = self.values.iter().map(|&s| C64::new(s, 0.0)).collect();
        let dv = self.grid.cell_volume();
        let values = fft.inverse_real(&spec).into_iter().map(|v| v / dv).collect();
        Field {
            grid: self.grid,
            values,
        }
    }
}

/// Draws spectral noise coefficients from the counter-based mode streams.
#[derive(Clone, Debug)]
pub struct NoiseSampler {
    grid: Grid,
    /// `N^3 sqrt(S_k / L^3)`.
    amp: Vec<f64>,
    partner: Vec<usize>,
}

impl NoiseSampler {
    pub fn new(table: &DensityTable) -> Self {
        let grid = table.grid;
        let n3 = grid.len() as f64;
        let vol = grid.volume();
        let amp = table.values.iter().map(|&s| n3 * (s / vol).sqrt()).collect();
        let partner = (0..grid.len()).map(|i| grid.partner(i)).collect();
        Self { grid, amp, partner }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Spectral coefficients of `scale · (one field draw)` for stream
    /// `(seed, stream)` into `out`.
    pub fn fill_spectral(&self, seed: u64, stream: u64, scale: f64, out: &mut [C64]) {
        let mut rng = ModeStream::new(seed, stream);
        rng.seek(0);
        let r2 = std::f64::consts::FRAC_1_SQRT_2;
        for i in 0..out.len() {
            // every slot owns one draw position, used or not
            let (g1, g2) = rng.normal_pair();
            let p = self.partner[i];
            if p == i {
                out[i] = C64::new(scale * self.amp[i] * g1, 0.0);
            } else if i < p {
                let a = scale * self.amp[i] * r2;
                out[i] = C64::new(a * g1, a * g2);
                out[p] = C64::new(a * g1, -a * g2);
            }
        }
    }

    pub fn spectral(&self, seed: u64, stream: u64, scale: f64) -> Vec<C64> {
        let mut out = vec![C64::default(); self.grid.len()];
        self.fill_spectral(seed, stream, scale, &mut out);
        out
    }

    pub fn field(&self, fft: &mut Fft3, seed: u64, stream: u64, scale: f64) -> Field {
        let spec = self.spectral(seed, stream, scale);
        Field {
            grid: self.grid,
            values: fft.inverse_real(&spec),
        }
    }
}

/// One draw of the centred stationary Gaussian field with the lattice
/// covariance of `spec`.
pub fn sample_field(spec: &CovarianceSpec, grid: &Grid, seed: u64) -> Result<Field> {
    let table = spec.density_table(grid)?;
    let sampler = NoiseSampler::new(&table);
    Ok(sampler.field(&mut Fft3::new(grid), seed, 0, 1.0))
}

/// `J` independent noise increments, step `j` drawn from stream `j` and
/// scaled by `sqrt(dt)`.
#[derive(Clone, Debug)]
pub struct NoiseIncrements {
    pub grid: Grid,
    pub dt: f64,
    pub seed: u64,
    pub increments: Vec<Field>,
}

impl NoiseIncrements {
    pub fn steps(&self) -> usize {
        self.increments.len()
    }
}

pub fn noise_increments(
    spec: &CovarianceSpec,
    grid: &Grid,
    steps: usize,
    dt: f64,
    seed: u64,
) -> Result<NoiseIncrements> {
    if steps == 0 {
        return Err(Error::param("at least one time step is required"));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::param(format!("dt must be positive, got {dt}")));
    }
    let table = Arc::new(spec.density_table(grid)?);
    let sampler = NoiseSampler::new(&table);
    let mut fft = Fft3::new(grid);
    let increments = (0..steps)
        .map(|j| sampler.field(&mut fft, seed, j as u64, dt.sqrt()))
        .collect();
    Ok(NoiseIncrements {
        grid: *grid,
        dt,
        seed,
        increments,
    })
}
