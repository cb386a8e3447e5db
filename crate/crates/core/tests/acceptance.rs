//! Acceptance criteria. Each test prints one `PASS`/`FAIL` line to stderr
//! (bypassing output capture) and then asserts the criterion.

use std::io::Write;
use std::time::{Duration, Instant};

use nalgebra::{dmatrix, dvector, DVector, SymmetricEigen};
use parareach_core::presets::{preset, Preset};
use parareach_core::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn verdict(id: u32, name: &str, pass: bool, detail: String) {
    let line = format!(
        "acceptance criterion {id} ({name}): {} | {detail}\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn family_for(p: &Preset) -> ParaboloidFamily {
    let cfg = FamilyConfig {
        gammas: p.gammas.clone(),
        integrator: IntegratorConfig::default().with_t_end(p.horizon),
        ..FamilyConfig::default()
    };
    build_family(&p.seed, &p.system, &cfg).unwrap()
}

/// `x` on the boundary of the seed's projection scaled by `r ∈ [0, 1]`,
/// lifted to the upper surface.
fn seed_surface_state(p0: &Paraboloid, dir: &DVector<f64>, r: f64) -> AugmentedState {
    let eig = SymmetricEigen::new(p0.e().clone());
    let inv_e = p0.e().clone().try_inverse().unwrap();
    let c = &inv_e * p0.f();
    let rho = c.dot(&(p0.e() * &c)) - p0.g();
    let y = DVector::from_fn(dir.len(), |i, _| dir[i] * (rho / eig.eigenvalues[i]).sqrt() * r);
    let x = c + &eig.eigenvectors * y;
    let xq = p0.xq_bound(&x).max(0.0);
    AugmentedState::new(x, xq).unwrap()
}

const E_MINUS: f64 = 2.0 - std::f64::consts::SQRT_2;
const E_PLUS: f64 = 2.0 + std::f64::consts::SQRT_2;

#[test]
fn criterion_1_riccati_equilibria() {
    const RHS_TOL: f64 = 1e-9;
    const LIMIT_TOL: f64 = 1e-6;
    const BUDGET: Duration = Duration::from_secs(1);
    let start = Instant::now();
    let p = preset("ex1-stable").unwrap();
    let r_minus = riccati_rhs(&dmatrix![E_MINUS], &p.system).unwrap()[(0, 0)].abs();
    let r_plus = riccati_rhs(&dmatrix![E_PLUS], &p.system).unwrap()[(0, 0)].abs();
    let tvp = propagate(&p.seed, &p.system, &IntegratorConfig::default().with_t_end(10.0)).unwrap();
    let e10 = tvp.final_paraboloid().e()[(0, 0)];
    let gap = (e10 - E_PLUS).abs();
    let elapsed = start.elapsed();
    let pass = r_minus <= RHS_TOL && r_plus <= RHS_TOL && gap <= LIMIT_TOL && elapsed < BUDGET;
    verdict(
        1,
        "riccati equilibria",
        pass,
        format!(
            "|rhs(E-)|={r_minus:.1e} |rhs(E+)|={r_plus:.1e} (tol {RHS_TOL:e}); E(10)={e10:.10} |E(10)-E+|={gap:.3e} (tol {LIMIT_TOL:e}); {elapsed:.2?}"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_2_finite_escape() {
    const TOL: f64 = 1e-4;
    const BUDGET: Duration = Duration::from_secs(1);
    let start = Instant::now();
    let p = preset("ex1-escape").unwrap();
    let e0 = p.seed.e()[(0, 0)];
    // Separable solution of Ė = −(E − E⁻)(E − E⁺)/2 running to −∞.
    let closed = (1.0 / std::f64::consts::SQRT_2) * ((E_PLUS - e0) / (E_MINUS - e0)).ln();
    let tvp = propagate(&p.seed, &p.system, &IntegratorConfig::default().with_t_end(10.0)).unwrap();
    let elapsed = start.elapsed();
    let detected = tvp.escape_time();
    let err = detected.map_or(f64::INFINITY, |t| (t - closed).abs());
    let pass = err <= TOL && elapsed < BUDGET;
    verdict(
        2,
        "finite escape",
        pass,
        format!("detected {detected:?} closed form {closed:.6} |diff|={err:.2e} (tol {TOL:e}); {elapsed:.2?}"),
    );
    assert!(pass);
}

#[test]
fn criterion_3_touching_invariant() {
    const TOL: f64 = 1e-6;
    const STATES: usize = 20;
    const BUDGET: Duration = Duration::from_secs(10);
    let start = Instant::now();
    let cfg = TouchConfig::from_rel_tol(1e-9);
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for name in ["ex1-stable", "sec5"] {
        let p = preset(name).unwrap();
        let integ = IntegratorConfig {
            rel_tol: 1e-9,
            ..IntegratorConfig::default().with_t_end(p.horizon)
        };
        let tvp = propagate(&p.seed, &p.system, &integ).unwrap();
        for _ in 0..STATES {
            let n = p.seed.dim();
            let dir = loop {
                let v = DVector::from_fn(n, |_, _| rng.random::<f64>() * 2.0 - 1.0);
                if v.norm() > 1e-3 && v.norm() <= 1.0 {
                    break v.normalize();
                }
            };
            let r = rng.random::<f64>().sqrt();
            let x0 = seed_surface_state(&p.seed, &dir, r);
            match touching_trajectory(&tvp, &x0, &p.system, &cfg) {
                Ok(tr) => worst = worst.max(tr.max_abs_h()),
                Err(e) => failures.push(format!("{name}: {e}")),
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = failures.is_empty() && worst <= TOL && elapsed < BUDGET;
    verdict(
        3,
        "touching invariant",
        pass,
        format!("2x{STATES} trajectories, max|h|={worst:.2e} (tol {TOL:e}), failures {failures:?}; {elapsed:.2?}"),
    );
    assert!(pass);
}

#[test]
fn criterion_4_optimal_disturbance_maximality() {
    const TOL: f64 = 1e-9;
    const EVALS: usize = 1000;
    const BUDGET: Duration = Duration::from_secs(5);
    let start = Instant::now();
    let cases: Vec<(Preset, ParaboloidFamily)> = ["ex1-family", "sec5"]
        .into_iter()
        .map(|n| {
            let p = preset(n).unwrap();
            let f = family_for(&p);
            (p, f)
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut worst_zero, mut worst_quad) = (0.0f64, 0.0f64);
    for k in 0..EVALS {
        let (p, fam) = &cases[k % 2];
        let member = &fam.members()[rng.random_range(0..fam.members().len())];
        let t = rng.random::<f64>() * member.end();
        let par = member.eval(t).unwrap();
        let u = p.system.input_at(t);
        let rates = param_rates(&par, &p.system, &u).unwrap();
        let n = p.system.n();
        let x = DVector::from_fn(n, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let state = AugmentedState::new(x.clone(), rng.random::<f64>() - 0.5).unwrap();
        let w = optimal_disturbance(&par, &x, &u, &p.system).unwrap();
        let at_opt = value_derivative(&par, &state, &u, &w, &p.system, &rates).unwrap();
        let d = DVector::from_fn(p.system.m(), |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let shifted = value_derivative(&par, &state, &u, &(&w + &d), &p.system, &rates).unwrap();
        let quad = d.dot(&(p.system.mw() * &d));
        worst_zero = worst_zero.max(at_opt.abs());
        worst_quad = worst_quad.max((shifted - quad - at_opt).abs());
    }
    let elapsed = start.elapsed();
    let pass = worst_zero <= TOL && worst_quad <= TOL && elapsed < BUDGET;
    verdict(
        4,
        "optimal-disturbance maximality",
        pass,
        format!("{EVALS} evaluations: max|dh(w*)|={worst_zero:.2e}, max quadratic residual={worst_quad:.2e} (tol {TOL:e}); {elapsed:.2?}"),
    );
    assert!(pass);
}

#[test]
fn criterion_5_soundness() {
    const MARGIN: f64 = 1e-8;
    const N: usize = 10_000;
    const BUDGET: Duration = Duration::from_secs(120);
    let start = Instant::now();
    let p = preset("sec5").unwrap();
    let fam = family_for(&p);
    let times: Vec<f64> = (1..=10).map(|k| k as f64 / 10.0).collect();
    let cfg = OracleConfig {
        n_trajectories: N,
        segments: 8,
        seed: 5,
        t_end: 1.0,
        sample_times: times.clone(),
        ..OracleConfig::default()
    };
    let run = sample_admissible(&p.system, &p.seed, Some(&fam), &cfg).unwrap();
    let rep = soundness(&fam, &run, &times, MARGIN).unwrap();
    let elapsed = start.elapsed();
    let pass = run.accepted() == N && rep.checked == N * times.len() && rep.passed() && elapsed < BUDGET;
    verdict(
        5,
        "soundness",
        pass,
        format!(
            "{} admissible of {} drawn, {} checks at 10 times, {} violations, max margin {:.2e} (tol {MARGIN:e}); {elapsed:.2?}",
            run.accepted(),
            run.attempted,
            rep.checked,
            rep.violations.len(),
            rep.max_margin
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_6_strict_tightening() {
    const GAP: f64 = 1e-6;
    const BUDGET: Duration = Duration::from_secs(30);
    let start = Instant::now();
    let p = preset("ex1-family").unwrap();
    let fam = family_for(&p);
    assert_eq!(fam.gammas(), &[1.0, 1.6, 2.2, 2.7, 3.3]);
    let single = fam.subset(&[0]).unwrap();
    let pts: Vec<DVector<f64>> = (0..=400).map(|k| dvector![-0.4 + 0.002 * k as f64]).collect();
    let all = fam.reach_slice(1.62, pts.clone()).unwrap();
    let one = single.reach_slice(1.62, pts).unwrap();
    let (best, at) = all
        .xq_max
        .iter()
        .zip(&one.xq_max)
        .zip(&all.points)
        .map(|((a, b), x)| (b - a, x[0]))
        .fold((f64::NEG_INFINITY, 0.0), |acc, v| if v.0 > acc.0 { v } else { acc });
    let count = all.xq_max.iter().zip(&one.xq_max).filter(|(a, b)| *b - *a > GAP).count();
    let elapsed = start.elapsed();
    let pass = count >= 1 && elapsed < BUDGET;
    verdict(
        6,
        "strict tightening",
        pass,
        format!("{count}/401 grid points tighter by > {GAP:e}; largest gap {best:.3e} at x={at:.3}; {elapsed:.2?}"),
    );
    assert!(pass);
}

#[test]
fn criterion_7_nonconvexity_witness() {
    const BUDGET: Duration = Duration::from_secs(60);
    let start = Instant::now();
    let p = preset("sec5").unwrap();
    let fam = family_for(&p);
    let t = 0.794;
    let b = fam.slice_bounds(t, 64).unwrap();
    let grid = GridSpec::uniform(b.lower.clone(), b.upper.clone(), 41).unwrap();
    let snap = fam.snapshot(t).unwrap();
    let inside: Vec<DVector<f64>> = grid
        .centers()
        .into_iter()
        .filter(|x| snap.xq_max(x).0 >= 0.0)
        .collect();
    let mut witness = None;
    'outer: for i in 0..inside.len() {
        for j in i + 1..inside.len() {
            let mid = (&inside[i] + &inside[j]) * 0.5;
            if snap.xq_max(&mid).0 < 0.0 {
                witness = Some((inside[i].clone(), inside[j].clone(), mid));
                break 'outer;
            }
        }
    }
    let elapsed = start.elapsed();
    let detail = match &witness {
        Some((a, c, m)) => format!(
            "x1=({:.2},{:.2}) xq_max={:.3e}, x2=({:.2},{:.2}) xq_max={:.3e}, midpoint xq_max={:.3e}",
            a[0],
            a[1],
            snap.xq_max(a).0,
            c[0],
            c[1],
            snap.xq_max(c).0,
            snap.xq_max(m).0
        ),
        None => format!("no witness among {} inside grid points", inside.len()),
    };
    let pass = witness.is_some() && elapsed < BUDGET;
    verdict(7, "non-convexity witness", pass, format!("{detail}; {elapsed:.2?}"));
    assert!(pass);
}

#[test]
fn criterion_8_coverage() {
    const THRESHOLD: f64 = 0.9;
    const CELLS_PER_AXIS: usize = 20;
    const CELL_TOL: f64 = 0.0;
    const N: usize = 10_000;
    const BUDGET: Duration = Duration::from_secs(300);
    let start = Instant::now();
    let p = preset("sec5").unwrap();
    let t = 0.794;
    let fams: Vec<ParaboloidFamily> = [16, 32, 64]
        .into_iter()
        .map(|n| {
            let cfg = FamilyConfig {
                gammas: GammaSpec::Uniform(n),
                integrator: IntegratorConfig::default().with_t_end(p.horizon),
                ..FamilyConfig::default()
            };
            build_family(&p.seed, &p.system, &cfg).unwrap()
        })
        .collect();
    let cfg = OracleConfig {
        n_trajectories: N,
        seed: 1,
        t_end: 1.0,
        sample_times: vec![t],
        ..OracleConfig::default()
    };
    let run = sample_admissible(&p.system, &p.seed, Some(&fams[2]), &cfg).unwrap();
    let ends: Vec<DVector<f64>> = run.states_at(t).unwrap().into_iter().map(|s| s.x).collect();
    let b = fams[2].slice_bounds(t, 64).unwrap();
    let grid = GridSpec::uniform(b.lower, b.upper, CELLS_PER_AXIS).unwrap();
    let reports: Vec<_> = fams
        .iter()
        .map(|f| coverage(f, t, &ends, &grid, CELL_TOL).unwrap())
        .collect();
    let cov: Vec<f64> = reports.iter().map(|r| r.coverage).collect();
    let elapsed = start.elapsed();
    let pass = cov[2] >= THRESHOLD && cov[0] <= cov[1] && cov[1] <= cov[2] && elapsed < BUDGET;
    verdict(
        8,
        "coverage",
        pass,
        format!(
            "coverage 16/32/64 members = {:.3}/{:.3}/{:.3} ({}/{} cells at 64; threshold {THRESHOLD}); {elapsed:.2?}",
            cov[0], cov[1], cov[2], reports[2].covered, reports[2].inside
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_9_assumption_diagnostics() {
    const BUDGET: Duration = Duration::from_secs(30);
    let start = Instant::now();
    let p = preset("sec5").unwrap();
    let fam = family_for(&p);
    let rep = check_assumptions(&fam, &p.system, &AssumptionConfig::default()).unwrap();

    // Self-test 1: a family whose seed member escapes before the horizon.
    let esc = preset("ex1-escape").unwrap();
    let esc_rep = check_assumptions(&family_for(&esc), &esc.system, &AssumptionConfig::default()).unwrap();
    // Self-test 2: a synthetic trajectory whose energy rises inside the slab.
    let eps = fam.eps_q();
    let synthetic = AugmentedTrajectory {
        times: vec![0.0, 0.1, 0.2],
        x: vec![dvector![1.0, 0.0]; 3],
        xq: vec![-0.5 * eps, -0.4 * eps, -0.3 * eps],
        w: vec![dvector![0.0, 0.0]; 3],
        h: vec![0.0; 3],
        xq_rate: vec![1.0, 1.0, 1.0],
    };
    let injected = assumption2_violations(&synthetic, 1.0, eps, 0.0, 1e-6);
    let elapsed = start.elapsed();
    let pass = rep.passed()
        && rep.trace_failures.is_empty()
        && !esc_rep.bounded_growth_ok
        && injected.len() == 3
        && elapsed < BUDGET;
    verdict(
        9,
        "assumption diagnostics",
        pass,
        format!(
            "sec5: K={:.1} bounded={} traced={} samples={} violations={} failures={}; injected escape flagged={}, injected rising-energy samples flagged={}/3; {elapsed:.2?}",
            rep.k_bound,
            rep.bounded_growth_ok,
            rep.traced,
            rep.samples_checked,
            rep.violations.len(),
            rep.trace_failures.len(),
            !esc_rep.bounded_growth_ok,
            injected.len()
        ),
    );
    assert!(pass);
}
