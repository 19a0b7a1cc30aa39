mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use swlab_core::covariance::CovarianceSpec;
use swlab_core::fft::{Fft3, C64};
use swlab_core::kernel::{
    dalang_integral, gaussian_radius, homogeneous_solution, kernel_multiplier, propagator, wave_energy, InitialData,
    Mollifier,
};
use swlab_core::{Error, Grid};

#[test]
fn multiplier_matches_sphere_quadrature() {
    let v = kernel_multiplier(1.0, 3.0).unwrap();
    let q = common::sphere_average(1.0, [3.0 / 3f64.sqrt(); 3]);
    assert!((v - q).abs() < 1e-8, "{v} vs {q}");
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let t = rng.gen_range(0.05..2.0);
        let xi: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-6.0..6.0));
        let rho = (xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2]).sqrt();
        let v = kernel_multiplier(t, rho).unwrap();
        assert!((v - common::sphere_average(t, xi)).abs() < 1e-8);
    }
}

#[test]
fn dalang_scaling_and_divergence_trend() {
    for beta in [0.5, 1.0, 1.5] {
        let s = CovarianceSpec::riesz(beta).unwrap();
        let ts = [0.25, 0.5, 1.0, 2.0];
        let vals: Vec<f64> = ts.iter().map(|&t| dalang_integral(&s, t).unwrap()).collect();
        let ratio = dalang_integral(&s, 2.0).unwrap() / dalang_integral(&s, 1.0).unwrap();
        assert!((ratio / 2f64.powf(2.0 - beta) - 1.0).abs() < 0.01);
        let x: Vec<f64> = ts.iter().map(|t| t.ln()).collect();
        let y: Vec<f64> = vals.iter().map(|v| v.ln()).collect();
        let mx = x.iter().sum::<f64>() / 4.0;
        let my = y.iter().sum::<f64>() / 4.0;
        let slope = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>()
            / x.iter().map(|a| (a - mx) * (a - mx)).sum::<f64>();
        assert!((slope - (2.0 - beta)).abs() < 1e-2, "beta {beta}: slope {slope}");
    }
    let at = |b: f64| dalang_integral(&CovarianceSpec::riesz(b).unwrap(), 1.0).unwrap();
    let ladder: Vec<f64> = [1.5, 1.7, 1.8, 1.9, 1.95].iter().map(|&b| at(b)).collect();
    assert!(ladder.windows(2).all(|w| w[1] > w[0]), "{ladder:?}");
}

#[test]
fn beta_outside_range_cites_divergence() {
    for beta in [0.0, 2.0, 3.0, -1.0] {
        let err = CovarianceSpec::riesz(beta).unwrap_err();
        assert!(matches!(err, Error::BetaOutOfRange(_)));
        assert!(err.to_string().contains("diverges"));
    }
}

#[test]
fn homogeneous_identity_and_eigenmode() {
    let g = Grid::new(8.0, 16).unwrap();
    let init = InitialData::single_mode(g, [1, 2, 0], 1.0);
    assert_eq!(homogeneous_solution(&init, &g, 0.0).unwrap(), init.v0);
    let rho = std::f64::consts::TAU / 8.0 * 5f64.sqrt();
    for t in [0.3, 1.0, 1.9] {
        let w = homogeneous_solution(&init, &g, t).unwrap();
        for (a, b) in w.values.iter().zip(&init.v0.values) {
            assert!((a - (t * rho).cos() * b).abs() < 1e-12);
        }
    }
    assert!(matches!(
        homogeneous_solution(&init, &g, 2.5),
        Err(Error::Wraparound { .. })
    ));
}

#[test]
fn gaussian_data_follow_kirchhoff_and_light_cone() {
    let g = Grid::new(16.0, 64).unwrap();
    let s = 0.75;
    let c = g.center();
    let init = InitialData::gaussian_bump(g, c, s, 1.0);
    let r0 = gaussian_radius(s, 1e-12);
    for t in [0.5, 1.0, 2.0] {
        let w = homogeneous_solution(&init, &g, t).unwrap();
        let mut outside = 0;
        for i in 0..g.len() {
            let r = g.distance_to(i, c);
            let exact = common::kirchhoff_gaussian(1.0, s, r, t);
            assert!(
                (w.values[i] - exact).abs() < 1e-8,
                "t {t} r {r}: {} vs {exact}",
                w.values[i]
            );
            if r > r0 + t + 2.0 * g.dx() {
                outside += 1;
                assert!(w.values[i].abs() < 1e-10, "t {t} r {r}: {}", w.values[i]);
            }
        }
        assert!(outside > 0);
    }
}

#[test]
fn energy_is_conserved() {
    let g = Grid::new(8.0, 16).unwrap();
    let mut fft = Fft3::new(&g);
    let init = InitialData::gaussian_bump(g, g.center(), 0.8, 1.0);
    let vel = swlab_core::Field::from_fn(g, |x| (0.785 * x[1]).sin());
    let u0 = fft.forward_real(&init.v0.values);
    let v0 = fft.forward_real(&vel.values);
    let e0 = wave_energy(&g, &u0, &v0);
    for t in [0.25, 0.9, 1.7] {
        let (mut u, mut v) = (vec![C64::default(); g.len()], vec![C64::default(); g.len()]);
        for i in 0..g.len() {
            let p = propagator(t, g.xi_norm(i));
            u[i] = u0[i] * p[0][0] + v0[i] * p[0][1];
            v[i] = u0[i] * p[1][0] + v0[i] * p[1][1];
        }
        assert!((wave_energy(&g, &u, &v) / e0 - 1.0).abs() < 1e-10);
    }
}

#[test]
fn mollified_multiplier_converges_monotonically() {
    let m = Mollifier::new();
    let (t, rho) = (1.0, 3.0);
    let exact = kernel_multiplier(t, rho).unwrap();
    let gaps: Vec<f64> = [1, 2, 4, 8, 16, 32, 64]
        .iter()
        .map(|&n| (m.mollified_multiplier(n, t, rho).unwrap() - exact).abs())
        .collect();
    assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
    assert!(gaps[6] < 1e-3 * exact.abs());
}

#[test]
fn mollified_kernel_support() {
    let g = Grid::new(6.0, 32).unwrap();
    let m = Mollifier::new();
    for (n, t) in [(1, 1.0), (2, 1.5), (4, 1.2)] {
        let f = m.kernel_field(n, t, &g).unwrap();
        let radius = t * (1.0 + 1.0 / n as f64) + 2.0 * g.dx();
        let mass: f64 = f.values.iter().sum::<f64>() * g.cell_volume();
        assert!((mass - t).abs() < 0.05 * t, "mass {mass}");
        for i in 0..g.len() {
            if g.min_image_distance(0, i) > radius {
                assert!(f.values[i].abs() < 1e-10);
            }
        }
    }
}
