//! End-to-end acceptance checks. Every test prints one `PASS`/`FAIL` line
//! for its criterion before asserting, so `--nocapture` output reads as a
//! scorecard.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::StandardNormal;
use swlab_core::covariance::{noise_increments, CovarianceSpec, NoiseSampler};
use swlab_core::fft::Fft3;
use swlab_core::kernel::{dalang_integral, gaussian_radius, homogeneous_solution, kernel_multiplier, InitialData};
use swlab_core::ldp::{
    gaussian_quadratic_form, gaussian_rate_oracle, gaussian_tail_probability, ldp_slope, SlopeOptions,
};
use swlab_core::regularity::{IncrementAccumulator, Lag};
use swlab_core::rng::{derive_seed, generator};
use swlab_core::skeleton::{minimize_rate, skeleton_solve, RateOptions};
use swlab_core::solver::{picard_solve, solve, step, NoiseMask, NoiseSource, SnapshotPolicy, Solver};
use swlab_core::{
    Coefficient, CoefficientSpec, Control, EventSpec, Exec, Field, Grid, Region, SolverConfig, Trajectory,
};

fn verdict(n: u32, name: &str, ok: bool, elapsed: Duration, detail: String) {
    let mark = if ok { "PASS" } else { "FAIL" };
    println!(
        "criterion {n:>2} {mark} [{:.1}s] {name}: {detail}",
        elapsed.as_secs_f64()
    );
    assert!(ok, "criterion {n} ({name}) failed: {detail}");
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn sup_gap(a: &Trajectory, b: &Trajectory) -> f64 {
    a.snapshots
        .iter()
        .zip(&b.snapshots)
        .map(|(x, y)| x.sub(y).sup_norm())
        .fold(0.0, f64::max)
}

fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>()
        / lx.iter().map(|a| (a - mx) * (a - mx)).sum::<f64>()
}

fn random_control(cfg: &SolverConfig, seed: u64, amplitude: f64) -> Control {
    let density = cfg.noise.density_table(&cfg.grid).unwrap();
    let mut rng = generator(seed);
    let fields: Vec<Field> = (0..cfg.steps)
        .map(|_| {
            let values = (0..cfg.grid.len())
                .map(|_| amplitude * rng.sample::<f64, _>(StandardNormal))
                .collect();
            Field::new(cfg.grid, values).unwrap()
        })
        .collect();
    Control::from_fields(&fields, cfg.dt(), &density).unwrap()
}

fn small_config(coeffs: CoefficientSpec, steps: usize, epsilon: f64) -> SolverConfig {
    let grid = Grid::new(8.0, 8).unwrap();
    let init = InitialData::single_mode(grid, [1, 0, 0], 0.3);
    SolverConfig::new(
        grid,
        1.0,
        steps,
        init,
        CovarianceSpec::riesz(1.0).unwrap(),
        coeffs,
        epsilon,
    )
    .unwrap()
}

#[test]
fn c01_kernel_identity() {
    let start = Instant::now();
    let mut rng = generator(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let t = rng.gen_range(0.05..2.0);
        let xi: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-6.0..6.0));
        let rho = (xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2]).sqrt();
        let v = kernel_multiplier(t, rho).unwrap();
        worst = worst.max((v - common::sphere_average(t, xi)).abs());
    }
    let elapsed = start.elapsed();
    let ok = worst < 1e-8 && elapsed < Duration::from_secs(60);
    verdict(
        1,
        "kernel identity",
        ok,
        elapsed,
        format!("max |multiplier - quadrature| = {worst:.2e} over 100 (t, xi)"),
    );
}

#[test]
fn c02_dalang_scaling() {
    let start = Instant::now();
    let ts = [0.25, 0.5, 1.0, 2.0, 4.0];
    let mut errors = Vec::new();
    for beta in [0.5, 1.0, 1.5] {
        let s = CovarianceSpec::riesz(beta).unwrap();
        let vals: Vec<f64> = ts.iter().map(|&t| dalang_integral(&s, t).unwrap()).collect();
        errors.push((beta, (loglog_slope(&ts, &vals) - (2.0 - beta)).abs()));
    }
    let trend: Vec<f64> = [1.5, 1.75, 1.9, 1.95, 1.99]
        .iter()
        .map(|&b| dalang_integral(&CovarianceSpec::riesz(b).unwrap(), 1.0).unwrap())
        .collect();
    let monotone = trend.windows(2).all(|w| w[1] > w[0]);
    let ok = errors.iter().all(|e| e.1 < 1e-2) && monotone;
    verdict(
        2,
        "Dalang scaling",
        ok,
        start.elapsed(),
        format!("exponent errors {errors:?}, trend {trend:.3?} monotone {monotone}"),
    );
}

#[test]
fn c03_noise_covariance_recovery() {
    let start = Instant::now();
    let g = Grid::new(8.0, 32).unwrap();
    let s = CovarianceSpec::riesz(1.0).unwrap();
    let draws = 10_000;
    let block = 250;
    // lags in [2dx, L/4]
    let lags: Vec<usize> = (2..=g.n / 4).collect();
    let sampler = NoiseSampler::new(&s.density_table(&g).unwrap());
    let sums: Vec<Vec<f64>> = Exec::Parallel.map(draws / block, |b| {
        let mut fft = Fft3::new(&g);
        let mut acc = vec![0.0; lags.len()];
        for i in b * block..(b + 1) * block {
            let f = sampler.field(&mut fft, derive_seed(31, i as u64), 0, 1.0);
            for (a, &l) in acc.iter_mut().zip(&lags) {
                let mut p = 0.0;
                for row in f.values.chunks(g.n) {
                    for x in 0..g.n {
                        p += row[x] * row[(x + l) % g.n];
                    }
                }
                *a += p / g.len() as f64;
            }
        }
        acc
    });
    let mut worst: f64 = 0.0;
    for (k, &l) in lags.iter().enumerate() {
        let emp = sums.iter().map(|r| r[k]).sum::<f64>() / draws as f64;
        let oracle = common::direct_covariance(&s, &g, [l as f64 * g.dx(), 0.0, 0.0]);
        worst = worst.max(rel(emp, oracle));
    }
    let elapsed = start.elapsed();
    let ok = worst < 0.05 && elapsed < Duration::from_secs(300);
    verdict(
        3,
        "noise covariance recovery",
        ok,
        elapsed,
        format!("max relative error {worst:.4} over lags {lags:?}"),
    );
}

#[test]
fn c04_finite_propagation() {
    let start = Instant::now();
    let g = Grid::new(18.0, 64).unwrap();
    let centre = g.center();
    let (bump, window) = (0.75, 1.0);
    let init = InitialData::gaussian_bump(g, centre, bump, 1.0);
    let base = SolverConfig::new(
        g,
        0.5,
        8,
        init,
        CovarianceSpec::riesz(1.0).unwrap(),
        CoefficientSpec::additive(1.0),
        1.0,
    )
    .unwrap();
    let r0 = gaussian_radius(bump, 1e-12).max(gaussian_radius(window, 1e-12));
    let outside = |traj: &Trajectory| {
        let mut worst: f64 = 0.0;
        let mut count = 0;
        for (i, s) in traj.snapshots.iter().enumerate() {
            let radius = r0 + traj.time(i) + 2.0 * g.dx();
            for x in 0..g.len() {
                if g.distance_to(x, centre) > radius {
                    count += 1;
                    worst = worst.max(s.values[x].abs());
                }
            }
        }
        (worst, count)
    };
    let deterministic = solve(&base.with_epsilon(0.0), None, NoiseSource::None).unwrap();
    let mut masked_cfg = base.clone();
    masked_cfg.mask = Some(NoiseMask {
        center: centre,
        width: window,
        taper: 1.0,
    });
    let masked = solve(&masked_cfg, None, NoiseSource::Seed(8)).unwrap();
    let (d, nd) = outside(&deterministic);
    let (m, nm) = outside(&masked);
    let stirred = masked.final_snapshot().sub(deterministic.final_snapshot()).sup_norm();
    let elapsed = start.elapsed();
    let ok = d < 1e-10 && m < 1e-10 && nd > 0 && nm > 0 && stirred > 1e-3 && elapsed < Duration::from_secs(60);
    verdict(
        4,
        "finite propagation",
        ok,
        elapsed,
        format!("sup outside cone: deterministic {d:.2e}, masked noise {m:.2e}; noise effect inside {stirred:.2e}"),
    );
}

#[test]
fn c05_skeleton_controlled_equality() {
    let start = Instant::now();
    let families = [
        CoefficientSpec::additive(1.0),
        CoefficientSpec {
            sigma: Coefficient::Affine { a: 0.4, b: 0.8 },
            b: Coefficient::Affine { a: -0.2, b: 0.1 },
        },
        CoefficientSpec {
            sigma: Coefficient::BoundedSmooth { scale: 1.0 },
            b: Coefficient::BoundedSmooth { scale: 0.5 },
        },
    ];
    let mut equal = 0;
    for i in 0..10u64 {
        let cfg = small_config(families[i as usize % 3], 8, 0.7);
        let h = random_control(&cfg, 500 + i, 0.5);
        let a = solve(&cfg.with_epsilon(0.0), Some(&h), NoiseSource::Seed(900 + i)).unwrap();
        let b = skeleton_solve(&cfg, &h).unwrap();
        let bitwise = a
            .snapshots
            .iter()
            .zip(&b.snapshots)
            .all(|(x, y)| x.values.iter().zip(&y.values).all(|(p, q)| p.to_bits() == q.to_bits()));
        equal += usize::from(bitwise && a.steps == b.steps);
    }
    verdict(
        5,
        "skeleton/controlled equality",
        equal == 10,
        start.elapsed(),
        format!("{equal}/10 random controls bitwise equal"),
    );
}

#[test]
fn c06_gamma_pairing_identity() {
    let start = Instant::now();
    let g = Grid::new(8.0, 8).unwrap();
    let mut rng = generator(66);
    let mut worst: f64 = 0.0;
    for case in 0..16 {
        let beta = [0.5, 1.0, 1.5, 1.9][case % 4];
        let spec = CovarianceSpec::riesz(beta).unwrap();
        let sigma = match case % 3 {
            0 => Coefficient::Affine {
                a: rng.gen_range(-1.0..1.0),
                b: rng.gen_range(0.1..1.0),
            },
            1 => Coefficient::BoundedSmooth {
                scale: rng.gen_range(0.5..2.0),
            },
            _ => Coefficient::Constant {
                value: rng.gen_range(0.5..1.5),
            },
        };
        let u = Field::new(g, (0..g.len()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()).unwrap();
        let hf = Field::new(g, (0..g.len()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()).unwrap();
        let dt = rng.gen_range(0.01..0.2);
        let init = InitialData::new(u.clone(), Field::zeros(g), 1.0, 1.0).unwrap();
        let c = SolverConfig::new(
            g,
            1.0,
            20,
            init,
            spec,
            CoefficientSpec {
                sigma,
                b: Coefficient::ZERO,
            },
            0.0,
        )
        .unwrap();
        let solver = Solver::new(&c).unwrap();
        let h = Control::from_fields(std::slice::from_ref(&hf), dt, solver.density()).unwrap();
        let (u1, _) = step((&u, &Field::zeros(g)), dt, None, Some(&h.coeffs[0]), &c).unwrap();
        let w = homogeneous_solution(&c.init, &g, dt).unwrap();
        let s_of_u: Vec<f64> = u.values.iter().map(|&v| sigma.eval(v)).collect();
        let direct = common::direct_controlled_drift(&spec, &g, dt, &s_of_u, &hf.values);
        let scale = direct.iter().map(|v| v.abs()).fold(0.0, f64::max);
        for x in 0..g.len() {
            let spectral = (u1.values[x] - w.values[x]) / dt;
            worst = worst.max((spectral - direct[x]).abs() / scale);
        }
    }
    verdict(
        6,
        "Gamma-pairing identity",
        worst <= 1e-10,
        start.elapsed(),
        format!("max scaled deviation {worst:.2e} over 16 cases"),
    );
}

#[test]
fn c07_gaussian_ldp_per_rung() {
    let start = Instant::now();
    let cfg = common::reference_config(1.0);
    let site = EventSpec::point([8, 8, 8], 1.0);
    let q = gaussian_quadratic_form(&site, &cfg).unwrap();
    let ladder = [1.0, 0.5, 0.25, 0.125];
    // hardest rung has p = 2e-3
    let event = site.with_threshold(2.878_161_739_095_483 * (0.125 * q).sqrt());
    let hardest = gaussian_tail_probability(&event, &cfg, 0.125).unwrap();
    let opts = SlopeOptions {
        replicates: 10_000,
        seed: 7,
        ..Default::default()
    };
    let report = ldp_slope(&event, &cfg, &ladder, &opts).unwrap();
    let oracle = gaussian_rate_oracle(&event, &cfg).unwrap();
    let mut covered = 0;
    let mut rows = Vec::new();
    for (r, &eps) in report.rungs.iter().zip(&ladder) {
        let exact = -eps * gaussian_tail_probability(&event, &cfg, eps).unwrap().ln();
        let hit = r.lo <= exact && exact <= r.hi;
        covered += usize::from(hit);
        rows.push(format!(
            "eps {eps}: {:.4} [{:.4}, {:.4}] exact {exact:.4}",
            r.neg_eps_log_p, r.lo, r.hi
        ));
    }
    let intercept = report.fit.as_ref().map(|f| f.intercept).unwrap_or(f64::NAN);
    let err = rel(intercept, oracle);
    let elapsed = start.elapsed();
    println!("  hardest-rung probability {hardest:.2e}; {}", rows.join("; "));
    let ok = covered >= 3 && err <= 0.10 && elapsed < Duration::from_secs(1800);
    verdict(
        7,
        "Gaussian LDP per rung",
        ok,
        elapsed,
        format!(
            "{covered}/4 rungs covered; extrapolated {intercept:.4} vs oracle {oracle:.4} (relative error {err:.3})"
        ),
    );
}

#[test]
fn c08_rate_minimizer_vs_oracle() {
    let start = Instant::now();
    let cfg = common::reference_config(1.0);
    let linear = EventSpec::linear(
        Field::from_fn(cfg.grid, |x| {
            (std::f64::consts::PI * x[0] / 4.0).cos() + 0.5 * (std::f64::consts::PI * x[1] / 2.0).cos()
        }),
        2.0,
    );
    let point = EventSpec::point([8, 8, 8], 1.0);
    let opts = RateOptions {
        truncation: 8,
        ..Default::default()
    };
    let mut ok = true;
    let mut parts = Vec::new();
    for event in [point, linear] {
        let oracle = gaussian_rate_oracle(&event, &cfg).unwrap();
        let rep = minimize_rate(&event, &cfg, &opts).unwrap();
        let spread = rep.restarts.iter().map(|s| rel(s.i_hat, rep.i_hat)).fold(0.0, f64::max);
        let err = rel(rep.i_hat, oracle);
        ok &= err <= 0.01 && spread <= 1e-6;
        parts.push(format!(
            "{}: I_hat {:.5} oracle {oracle:.5} (relative error {err:.4}), restart spread {spread:.1e}",
            event.name(),
            rep.i_hat
        ));
    }
    let elapsed = start.elapsed();
    ok &= elapsed < Duration::from_secs(600);
    verdict(8, "rate minimizer vs oracle (K=8)", ok, elapsed, parts.join("; "));
}

#[test]
fn c09_holder_exponent() {
    let start = Instant::now();
    let grid = Grid::new(16.0, 64).unwrap();
    let lags: Vec<Lag> = [2, 4, 8, 16, 24].iter().map(|&k| Lag::spatial([k, 0, 0])).collect();
    let region = Region::central(&grid, 32).unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for (beta, target) in [(1.0, 0.5), (1.5, 0.25)] {
        let cfg = SolverConfig::new(
            grid,
            3.5,
            16,
            InitialData::single_mode(grid, [1, 0, 0], 0.01),
            CovarianceSpec::riesz(beta).unwrap(),
            CoefficientSpec::additive(1.0),
            1.0,
        )
        .unwrap()
        .with_snapshots(SnapshotPolicy::Final);
        let solver = Solver::new(&cfg).unwrap();
        let mut acc = IncrementAccumulator::new(grid, cfg.dt(), 2.0, &lags, &region).unwrap();
        for block in 0..200 / 8 {
            let batch = Exec::Parallel.map(8, |i| {
                solver
                    .clone()
                    .solve(None, NoiseSource::Seed(derive_seed(90, (block * 8 + i) as u64)))
                    .unwrap()
            });
            for t in &batch {
                acc.ingest(t).unwrap();
            }
        }
        let fit = acc.finish(200, 3).unwrap();
        ok &= (fit.alpha_hat - target).abs() <= 0.1;
        parts.push(format!(
            "beta {beta}: alpha_hat {:.3} CI [{:.3}, {:.3}] target {target}",
            fit.alpha_hat, fit.ci[0], fit.ci[1]
        ));
    }
    let elapsed = start.elapsed();
    ok &= elapsed < Duration::from_secs(1800);
    verdict(9, "Hölder exponent", ok, elapsed, parts.join("; "));
}

#[test]
fn c10_picard_causality() {
    let start = Instant::now();
    let g = Grid::new(8.0, 8).unwrap();
    let configs = [
        CoefficientSpec {
            sigma: Coefficient::Affine { a: 1.0, b: 0.6 },
            b: Coefficient::BoundedSmooth { scale: 0.5 },
        },
        CoefficientSpec::additive(1.0),
        CoefficientSpec {
            sigma: Coefficient::BoundedSmooth { scale: 1.0 },
            b: Coefficient::Affine { a: -0.3, b: 0.1 },
        },
    ];
    let mut exact = 0;
    let mut monotone = 0;
    let mut strict = 0;
    let mut runs = 0;
    for (ci, coeffs) in configs.iter().enumerate() {
        let c = SolverConfig::new(
            g,
            1.0,
            12,
            InitialData::single_mode(g, [1, 0, 0], 0.5),
            CovarianceSpec::riesz(1.0).unwrap(),
            *coeffs,
            1.0,
        )
        .unwrap();
        for r in 0..20u64 {
            let noise = noise_increments(&c.noise, &g, c.steps, c.dt(), derive_seed(99 + ci as u64, r)).unwrap();
            let rep = picard_solve(&c, None, &noise, 0.0).unwrap();
            runs += 1;
            exact += usize::from(rep.iterations <= c.steps + 1 && *rep.gaps.last().unwrap() == 0.0);
            let slack = 8.0 * f64::EPSILON * rep.trajectory.snapshots.iter().map(Field::sup_norm).fold(1.0, f64::max);
            let m = rep.gaps[1..].windows(2).all(|w| w[1] <= w[0] + slack);
            strict += usize::from(rep.gaps[1..].windows(2).all(|w| w[1] <= w[0]));
            monotone += usize::from(m);
        }
    }
    let ok = exact == runs && monotone == runs;
    verdict(
        10,
        "Picard causality",
        ok,
        start.elapsed(),
        format!("exact within J+1 on {exact}/{runs}, non-increasing gaps on {monotone}/{runs} ({strict}/{runs} without round-off slack)"),
    );
}

#[test]
fn c11_weak_convergence_echo() {
    let start = Instant::now();
    let grid = Grid::new(8.0, 8).unwrap();
    let cfg = SolverConfig::new(
        grid,
        1.0,
        256,
        InitialData::single_mode(grid, [1, 0, 0], 0.3),
        CovarianceSpec::riesz(1.0).unwrap(),
        CoefficientSpec::additive(1.0),
        0.0,
    )
    .unwrap();
    let density = cfg.noise.density_table(&grid).unwrap();
    let profile = Field::from_fn(grid, |x| {
        (std::f64::consts::PI * x[0] / 4.0).cos() + 0.5 * (std::f64::consts::PI * x[2] / 4.0).sin()
    });
    let v0 = skeleton_solve(&cfg, &Control::zero(grid, cfg.steps, cfg.dt())).unwrap();
    let gaps: Vec<f64> = [4.0, 16.0, 64.0]
        .iter()
        .map(|n| {
            let fields: Vec<Field> = (0..cfg.steps)
                .map(|j| {
                    Field::new(
                        grid,
                        profile
                            .values
                            .iter()
                            .map(|v| (n * cfg.dt() * j as f64).sin() * v)
                            .collect(),
                    )
                    .unwrap()
                })
                .collect();
            let h = Control::from_fields(&fields, cfg.dt(), &density).unwrap();
            sup_gap(&skeleton_solve(&cfg, &h).unwrap(), &v0)
        })
        .collect();
    let elapsed = start.elapsed();
    let ok = gaps[0] > gaps[1] && gaps[1] > gaps[2] && elapsed < Duration::from_secs(300);
    verdict(
        11,
        "weak-convergence continuity echo",
        ok,
        elapsed,
        format!(
            "sup gaps for n = 4, 16, 64: {:.3e} {:.3e} {:.3e}",
            gaps[0], gaps[1], gaps[2]
        ),
    );
}

fn payloads(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((
                    p.strip_prefix(dir).unwrap().to_string_lossy().into_owned(),
                    fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

fn run(out: &Path, args: &[&str], workers: usize) -> Option<PathBuf> {
    let o = Command::new(env!("CARGO_BIN_EXE_swlab"))
        .args(args)
        .args(["--workers", &workers.to_string(), "--out"])
        .arg(out)
        .output()
        .expect("binary runs");
    o.status
        .success()
        .then(|| PathBuf::from(String::from_utf8_lossy(&o.stdout).trim()))
}

#[test]
fn c12_reproducibility() {
    let start = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let small = ["grid.N=8", "time.J=8"];
    let cases: Vec<Vec<&str>> = vec![
        [&["simulate", "noise.seed=3"][..], &small].concat(),
        [&["skeleton", "control.amplitude=0.5"][..], &small].concat(),
        [&["rate-min", "optimizer.restarts=2", "event.threshold=0.5"][..], &small].concat(),
        [
            &[
                "ldp-slope",
                "ladder.M=400",
                "ladder.epsilons=[1, 0.5, 0.25]",
                "event.threshold=0.05",
            ][..],
            &small,
        ]
        .concat(),
        vec![
            "holder",
            "time.J=4",
            "regularity.trajectories=100",
            "regularity.lags=[1, 2, 4, 10]",
            "regularity.region_side=6",
        ],
        vec!["noise-check", "checks.draws=64"],
        vec!["kernel-check"],
    ];
    let mut identical = 0;
    let mut failures = Vec::new();
    for args in &cases {
        let dirs: Vec<Option<PathBuf>> = [1, 2, 4].iter().map(|&w| run(tmp.path(), args, w)).collect();
        let sets: Option<Vec<_>> = dirs.iter().map(|d| d.as_deref().map(payloads)).collect();
        match sets {
            Some(s) if !s[0].is_empty() && s.windows(2).all(|w| w[0] == w[1]) => identical += 1,
            _ => failures.push(args[0]),
        }
    }
    let ok = identical == cases.len();
    verdict(
        12,
        "reproducibility across worker counts",
        ok,
        start.elapsed(),
        format!(
            "{identical}/{} subcommands byte-identical for 1, 2 and 4 workers; differing {failures:?}",
            cases.len()
        ),
    );
}
