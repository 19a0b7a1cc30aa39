#![allow(dead_code)]

use std::f64::consts::PI;

use swlab_core::covariance::CovarianceSpec;
use swlab_core::kernel::{multiplier, InitialData};
use swlab_core::solver::{CoefficientSpec, SolverConfig};
use swlab_core::Grid;

/// Gauss–Legendre nodes and weights on [-1, 1] by Newton iteration on P_n.
pub fn legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        loop {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                let (mut q0, mut q1) = (1.0, z);
                for k in 2..=n {
                    let q2 = ((2 * k - 1) as f64 * z * q1 - (k - 1) as f64 * q0) / k as f64;
                    q0 = q1;
                    q1 = q2;
                }
                let d = n as f64 * (z * q1 - q0) / (z * z - 1.0);
                x[i] = z;
                w[i] = 2.0 / ((1.0 - z * z) * d * d);
                break;
            }
        }
    }
    (x, w)
}

/// `(1/4πt) ∫_{|y|=t} e^{-iξ·y} dσ(y)` by Gauss–Legendre in `cos θ` and the
/// trapezoid rule in the azimuth; `ξ` is a full vector, not just a norm.
pub fn sphere_average(t: f64, xi: [f64; 3]) -> f64 {
    let (u, wu) = legendre(96);
    let nphi = 128;
    let mut re = 0.0;
    for (c, w) in u.iter().zip(&wu) {
        let s = (1.0 - c * c).sqrt();
        for k in 0..nphi {
            let phi = 2.0 * PI * k as f64 / nphi as f64;
            let y = [t * s * phi.cos(), t * s * phi.sin(), t * c];
            let phase = xi[0] * y[0] + xi[1] * y[1] + xi[2] * y[2];
            re += w * phase.cos() * (2.0 * PI / nphi as f64);
        }
    }
    // surface element t² dcosθ dφ, normalised by 4πt
    re * t * t / (4.0 * PI * t)
}

/// Kirchhoff solution `∂_t (t M_t)` for `v0 = A exp(-R²/2s²)`, `ṽ0 = 0`.
pub fn kirchhoff_gaussian(a: f64, s: f64, r: f64, t: f64) -> f64 {
    let e = |x: f64| (-x * x / (2.0 * s * s)).exp();
    if r < 1e-9 {
        return a * e(t) * (1.0 - t * t / (s * s));
    }
    a / (2.0 * r) * ((r - t) * e(r - t) + (r + t) * e(r + t))
}

/// Continuum lattice covariance `C(x) = L^{-3} Σ_k S_k cos(ξ_k·x)` summed
/// directly, without transforms.
pub fn direct_covariance(spec: &CovarianceSpec, grid: &Grid, lag: [f64; 3]) -> f64 {
    let mut s = 0.0;
    for i in 0..grid.len() {
        let xi = grid.xi(i);
        let d = spec.spectral_density(grid, xi).unwrap();
        s += d * (xi[0] * lag[0] + xi[1] * lag[1] + xi[2] * lag[2]).cos();
    }
    s / grid.volume()
}

/// Point variance `V_T` of the additive scheme by real-space summation:
/// `Σ_j dt Σ_{x,y} K_j(x) K_j(y) C(x - y) dx⁶` with lattice kernels
/// `K_j(x) = L^{-3} Σ_k m(T - t_j, ξ_k) cos(ξ_k·x)` built by direct sums.
pub fn real_space_point_variance(spec: &CovarianceSpec, grid: &Grid, horizon: f64, steps: usize) -> f64 {
    let n = grid.len();
    let dt = horizon / steps as f64;
    let vol = grid.volume();
    let dens: Vec<f64> = (0..n)
        .map(|k| spec.spectral_density(grid, grid.xi(k)).unwrap())
        .collect();
    let mt: Vec<Vec<f64>> = (0..n)
        .map(|k| {
            (0..steps)
                .map(|j| multiplier(horizon - j as f64 * dt, grid.xi_norm(k)) / vol)
                .collect()
        })
        .collect();
    // kern[x][j] = K_j(x)
    let mut kern = vec![vec![0.0; steps]; n];
    let mut cov = vec![0.0; n];
    for x in 0..n {
        let p = grid.position(x);
        let row = &mut kern[x];
        for k in 0..n {
            let xi = grid.xi(k);
            let c = (xi[0] * p[0] + xi[1] * p[1] + xi[2] * p[2]).cos();
            cov[x] += dens[k] * c / vol;
            for (r, m) in row.iter_mut().zip(&mt[k]) {
                *r += m * c;
            }
        }
    }
    let dv = grid.cell_volume();
    let mut per_step = vec![0.0; steps];
    for x in 0..n {
        let back = neg(grid.coords(x));
        for y in 0..n {
            let c = cov[grid.shift(y, back)];
            let (kx, ky) = (&kern[x], &kern[y]);
            for j in 0..steps {
                per_step[j] += kx[j] * ky[j] * c;
            }
        }
    }
    per_step.iter().sum::<f64>() * dt * dv * dv
}

fn neg(c: [usize; 3]) -> [i64; 3] {
    [-(c[0] as i64), -(c[1] as i64), -(c[2] as i64)]
}

/// Additive reference configuration: β = 1, 16³ on L = 8, T = 1, J = 64.
pub fn reference_config(sigma: f64) -> SolverConfig {
    let grid = Grid::new(8.0, 16).unwrap();
    SolverConfig::new(
        grid,
        1.0,
        64,
        InitialData::zero(grid),
        CovarianceSpec::riesz(1.0).unwrap(),
        CoefficientSpec::additive(sigma),
        1.0,
    )
    .unwrap()
}

pub fn sample_mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, var)
}

/// Lattice kernel `K(x) = L^{-3} Σ_k m(t, ξ_k) cos(ξ_k·x)` by direct sums.
pub fn direct_kernel(grid: &Grid, t: f64) -> Vec<f64> {
    let vol = grid.volume();
    (0..grid.len())
        .map(|x| {
            let p = grid.position(x);
            (0..grid.len())
                .map(|k| {
                    let xi = grid.xi(k);
                    multiplier(t, grid.xi_norm(k)) * (xi[0] * p[0] + xi[1] * p[1] + xi[2] * p[2]).cos()
                })
                .sum::<f64>()
                / vol
        })
        .collect()
}

/// Controlled drift through the 𝓗 inner product evaluated pair by pair:
/// `D(x) = Σ_y K(x - y) σ(u(y)) Σ_z C(y - z) h(z) dx⁶`.
pub fn direct_controlled_drift(spec: &CovarianceSpec, grid: &Grid, t: f64, sigma_of_u: &[f64], h: &[f64]) -> Vec<f64> {
    let n = grid.len();
    let kern = direct_kernel(grid, t);
    let cov: Vec<f64> = (0..n)
        .map(|x| direct_covariance(spec, grid, grid.position(x)))
        .collect();
    let dv = grid.cell_volume();
    let pairing: Vec<f64> = (0..n)
        .map(|y| {
            let back = neg(grid.coords(y));
            (0..n).map(|z| cov[grid.shift(z, back)] * h[z]).sum::<f64>() * dv
        })
        .collect();
    (0..n)
        .map(|x| {
            let back = neg(grid.coords(x));
            // K(x - y) = K(y - x) by symmetry
            (0..n)
                .map(|y| kern[grid.shift(y, back)] * sigma_of_u[y] * pairing[y])
                .sum::<f64>()
                * dv
        })
        .collect()
}
