mod common;

use swlab_core::covariance::{noise_increments, riesz_constant, sample_field, CovarianceSpec, NoiseSampler, Phi};
use swlab_core::fft::Fft3;
use swlab_core::rng::derive_seed;
use swlab_core::{Exec, Grid};

/// Spatial average of `f(x) f(x + lag e_1)`.
fn lagged_products(grid: &Grid, values: &[f64], lag: usize) -> f64 {
    let n = grid.n;
    let mut s = 0.0;
    for row in values.chunks(n) {
        for x in 0..n {
            s += row[x] * row[(x + lag) % n];
        }
    }
    s / grid.len() as f64
}

#[test]
fn riesz_constant_at_beta_two() {
    // ∫ e^{-iξ·x} |x|^{-2} dx = 2π²/|ξ| in three dimensions
    assert!((riesz_constant(2.0) - 2.0 * std::f64::consts::PI.powi(2)).abs() < 1e-12);
}

#[test]
fn density_homogeneity() {
    let g = Grid::new(8.0, 16).unwrap();
    for beta in [0.5, 1.0, 1.5] {
        let s = CovarianceSpec::riesz(beta).unwrap();
        let xi = [0.7, -0.2, 1.1];
        let a = s.spectral_density(&g, xi).unwrap();
        let b = s.spectral_density(&g, [1.4, -0.4, 2.2]).unwrap();
        assert!((b / a - 2f64.powf(beta - 3.0)).abs() < 1e-12);
    }
    let s = CovarianceSpec::riesz(1.0).unwrap();
    let r = s.spectral_density(&g, [0.0, 2.0, 0.0]).unwrap() / s.spectral_density(&g, [1.0, 0.0, 0.0]).unwrap();
    assert!((r - 0.25).abs() < 1e-14);
}

#[test]
fn bump_modulated_density_is_nonnegative() {
    let g = Grid::new(8.0, 16).unwrap();
    let s = CovarianceSpec::new(
        1.2,
        Phi::GaussianBump {
            amplitude: 0.8,
            width: 1.0,
        },
        1.0,
    )
    .unwrap();
    let t = s.density_table(&g).unwrap();
    assert!(t.values.iter().all(|v| *v >= 0.0));
}

#[test]
fn samples_are_centred_and_deterministic() {
    let g = Grid::new(8.0, 8).unwrap();
    let s = CovarianceSpec::riesz(1.0).unwrap();
    assert_eq!(sample_field(&s, &g, 9).unwrap(), sample_field(&s, &g, 9).unwrap());
    let sampler = NoiseSampler::new(&s.density_table(&g).unwrap());
    assert_eq!(
        sampler.field(&mut Fft3::new(&g), 9, 0, 1.0),
        sample_field(&s, &g, 9).unwrap()
    );
    let x0 = g.center_index();
    let vals: Vec<f64> = Exec::Parallel
        .map(40, |b| {
            let mut fft = Fft3::new(&g);
            (b * 250..(b + 1) * 250)
                .map(|i| sampler.field(&mut fft, derive_seed(3, i as u64), 0, 1.0).values[x0])
                .collect::<Vec<_>>()
        })
        .into_iter()
        .flatten()
        .collect();
    let (m, v) = common::sample_mean_var(&vals);
    assert!(m.abs() < 4.0 * (v / vals.len() as f64).sqrt());
}

#[test]
fn covariance_recovery_for_three_betas() {
    let g = Grid::new(8.0, 32).unwrap();
    let draws = 10_000;
    for beta in [0.5, 1.0, 1.5] {
        let s = CovarianceSpec::riesz(beta).unwrap();
        let lags: Vec<usize> = (2..=8).collect();
        let sampler = NoiseSampler::new(&s.density_table(&g).unwrap());
        let block = 250;
        let sums: Vec<Vec<f64>> = Exec::Parallel
            .map(draws / block, |b| {
                let mut fft = Fft3::new(&g);
                (b * block..(b + 1) * block)
                    .map(|i| {
                        let f = sampler.field(&mut fft, derive_seed(100 + (beta * 10.0) as u64, i as u64), 0, 1.0);
                        lags.iter()
                            .map(|&l| lagged_products(&g, &f.values, l))
                            .collect::<Vec<f64>>()
                    })
                    .collect::<Vec<_>>()
            })
            .into_iter()
            .flatten()
            .collect();
        for (k, &l) in lags.iter().enumerate() {
            let emp = sums.iter().map(|r| r[k]).sum::<f64>() / draws as f64;
            let oracle = common::direct_covariance(&s, &g, [l as f64 * g.dx(), 0.0, 0.0]);
            assert!(
                (emp / oracle - 1.0).abs() < 0.05,
                "beta {beta} lag {l}: {emp} vs {oracle}"
            );
        }
    }
}

#[test]
fn increments_are_white_and_scale_with_dt() {
    let g = Grid::new(8.0, 8).unwrap();
    let s = CovarianceSpec::riesz(1.0).unwrap();
    let x0 = g.center_index();
    let m = 10_000;
    let pairs = Exec::Parallel.map(m, |i| {
        let seed = derive_seed(77, i as u64);
        let a = noise_increments(&s, &g, 3, 0.01, seed).unwrap();
        let b = noise_increments(&s, &g, 1, 0.04, seed).unwrap();
        (
            a.increments[0].values[x0],
            a.increments[2].values[x0],
            b.increments[0].values[x0],
        )
    });
    let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let zs: Vec<f64> = pairs.iter().map(|p| p.2).collect();
    let (_, vx) = common::sample_mean_var(&xs);
    let (_, vy) = common::sample_mean_var(&ys);
    let (_, vz) = common::sample_mean_var(&zs);
    let prod: Vec<f64> = xs.iter().zip(&ys).map(|(a, b)| a * b).collect();
    let (mp, vp) = common::sample_mean_var(&prod);
    assert!(mp.abs() < 4.0 * (vp / m as f64).sqrt(), "cross-step covariance {mp}");
    assert!((vz / vx / 4.0 - 1.0).abs() < 0.05, "{}", vz / vx);
    assert!((vy / vx - 1.0).abs() < 0.1);
}

#[test]
fn per_step_streams_are_addressable() {
    let g = Grid::new(8.0, 8).unwrap();
    let s = CovarianceSpec::riesz(0.7).unwrap();
    let short = noise_increments(&s, &g, 8, 0.1, 5).unwrap();
    let long = noise_increments(&s, &g, 16, 0.1, 5).unwrap();
    assert_eq!(short.increments[5], long.increments[5]);
}
