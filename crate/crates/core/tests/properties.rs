use nalgebra::{dmatrix, dvector, DMatrix, DVector};
use parareach_core::family::slab_samples;
use parareach_core::presets::{planar_seed, planar_system, scalar_system};
use parareach_core::schema::{InputSpec, SeedSpec};
use parareach_core::*;
use proptest::prelude::*;

fn sym2() -> impl Strategy<Value = DMatrix<f64>> {
    (-3.0..3.0f64, -3.0..3.0f64, -3.0..3.0f64).prop_map(|(a, b, c)| dmatrix![a, b; b, c])
}

fn vec2() -> impl Strategy<Value = DVector<f64>> {
    (-3.0..3.0f64, -3.0..3.0f64).prop_map(|(a, b)| dvector![a, b])
}

/// Closed-form solution of `Ė = αE² + βE + c` for real distinct roots.
fn scalar_riccati(alpha: f64, beta: f64, c: f64, e0: f64, t: f64) -> f64 {
    let disc = (beta * beta - 4.0 * alpha * c).sqrt();
    let (r1, r2) = ((-beta - disc) / (2.0 * alpha), (-beta + disc) / (2.0 * alpha));
    let r0 = (e0 - r2) / (e0 - r1);
    let r = r0 * (alpha * (r2 - r1) * t).exp();
    (r2 - r1 * r) / (1.0 - r)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scaling_keeps_members(e in sym2(), f in vec2(), g in -3.0..3.0f64, x in vec2(), s in 0.0..1.0f64, gamma in 1.0..50.0f64) {
        let p = Paraboloid::new(e, f, g).unwrap();
        let bound = p.xq_bound(&x);
        prop_assume!(bound >= 0.0);
        let state = AugmentedState::new(x, s * bound).unwrap();
        prop_assert!(p.value_function(&state).unwrap() <= 0.0);
        prop_assert!(p.scale(gamma).unwrap().value_function(&state).unwrap() <= 1e-12 * (1.0 + bound));
    }

    #[test]
    fn value_is_affine_in_xq(e in sym2(), f in vec2(), g in -3.0..3.0f64, x in vec2(), xq in -3.0..3.0f64, d in -3.0..3.0f64) {
        let p = Paraboloid::new(e, f, g).unwrap();
        let h0 = p.value_function(&AugmentedState::new(x.clone(), xq).unwrap()).unwrap();
        let h1 = p.value_function(&AugmentedState::new(x, xq + d).unwrap()).unwrap();
        let scale = h0.abs() + h1.abs() + d.abs();
        prop_assert!((h1 - h0 - d).abs() <= 4.0 * f64::EPSILON * scale);
    }

    #[test]
    fn system_blocks_read_back(a in -2.0..2.0f64, b in 0.1..2.0f64, mx in -2.0..2.0f64, mxw in -1.0..1.0f64, mw in -3.0..-0.1f64, noise in -1e-12..1e-12f64) {
        let m = dmatrix![mx, mxw; mxw + noise, mw];
        let sys = IqcSystem::new(dmatrix![a], dmatrix![b], DMatrix::zeros(1, 0), m, InputSignal::Zero(0)).unwrap();
        let sym = (mxw + (mxw + noise)) / 2.0;
        prop_assert_eq!(sys.mx()[(0, 0)], mx);
        prop_assert_eq!(sys.mw()[(0, 0)], mw);
        prop_assert_eq!(sys.mxw()[(0, 0)], sym);
        prop_assert_eq!(sys.m_matrix(), dmatrix![mx, sym; sym, mw]);
    }

    #[test]
    fn scalar_flow_matches_closed_form(a in -2.0..1.0f64, b in 0.2..2.0f64, mx in 0.1..2.0f64, mxw in -0.5..0.5f64, mw in -3.0..-0.3f64, e0 in -1.0..4.0f64) {
        let sys = IqcSystem::new(dmatrix![a], dmatrix![b], DMatrix::zeros(1, 0), dmatrix![mx, mxw; mxw, mw], InputSignal::Zero(0)).unwrap();
        let alpha = b * b / mw;
        let beta = 2.0 * b * mxw / mw - 2.0 * a;
        let c = mxw * mxw / mw - mx;
        prop_assume!(beta * beta - 4.0 * alpha * c > 1e-3);
        let p0 = Paraboloid::new(dmatrix![e0], dvector![0.0], -1.0).unwrap();
        let tvp = propagate(&p0, &sys, &IntegratorConfig::default().with_t_end(3.0)).unwrap();
        for k in 0..tvp.len() {
            let (t, p) = tvp.node(k);
            let exact = scalar_riccati(alpha, beta, c, e0, t);
            if exact.abs() > 1e3 { continue; }
            prop_assert!((p.e()[(0, 0)] - exact).abs() <= 1e-6 * exact.abs().max(1.0), "t={} {} vs {}", t, p.e()[(0, 0)], exact);
        }
    }

    #[test]
    fn optimal_disturbance_is_maximal(e in sym2(), f in vec2(), x in vec2(), xq in -1.0..1.0f64, dw in vec2()) {
        let sys = planar_system();
        let p = Paraboloid::new(e, f, 0.3).unwrap();
        let u = DVector::zeros(1);
        let rates = param_rates(&p, &sys, &u).unwrap();
        let state = AugmentedState::new(x.clone(), xq).unwrap();
        let w = optimal_disturbance(&p, &x, &u, &sys).unwrap();
        let best = value_derivative(&p, &state, &u, &w, &sys, &rates).unwrap();
        let other = value_derivative(&p, &state, &u, &(&w + &dw), &sys, &rates).unwrap();
        prop_assert!(best.abs() <= 1e-9 * (1.0 + x.norm_squared()));
        prop_assert!(other <= best + 1e-9);
    }

    #[test]
    fn rate_is_quadratic_in_gamma(theta in 0.0..std::f64::consts::TAU, r in 0.0..1.0f64, gs in prop::collection::vec(0.5..40.0f64, 4)) {
        let sys = planar_system();
        let p0 = planar_seed(1e-2, 1e-6, 0.015);
        // Point on the upper surface in the seed's ellipse.
        let y = dvector![theta.cos(), theta.sin()] * r.sqrt();
        let l = nalgebra::SymmetricEigen::new(p0.e().clone());
        let x = &l.eigenvectors * DVector::from_fn(2, |i, _| y[i] * (0.015 / l.eigenvalues[i]).sqrt());
        let state = AugmentedState::new(x.clone(), p0.xq_bound(&x)).unwrap();
        let vals: Vec<f64> = gs.iter().map(|&g| xq_rate_at_zero(&p0, g, &state, &sys).unwrap()).collect();
        prop_assume!((gs[0] - gs[1]).abs() > 0.5 && (gs[1] - gs[2]).abs() > 0.5 && (gs[0] - gs[2]).abs() > 0.5);
        // Lagrange interpolation through the first three.
        let lag = |g: f64| -> f64 {
            (0..3).map(|i| {
                let mut term = vals[i];
                for j in 0..3 { if i != j { term *= (g - gs[j]) / (gs[i] - gs[j]); } }
                term
            }).sum()
        };
        let scale = vals.iter().map(|v| v.abs()).fold(1e-300, f64::max);
        prop_assert!((lag(gs[3]) - vals[3]).abs() <= 1e-10 * scale, "{} vs {}", lag(gs[3]), vals[3]);
    }

    #[test]
    fn json_round_trip_is_bit_exact(vals in prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO, 14)) {
        let file = SystemFile {
            a: vec![vec![vals[0], vals[1]], vec![vals[2], vals[3]]],
            b: vec![vec![vals[4]], vec![vals[5]]],
            bu: None,
            m: vec![vec![vals[6], vals[7], vals[8]], vec![vals[7], vals[9], vals[10]], vec![vals[8], vals[10], vals[11]]],
            u: InputSpec::Named("zero".into()),
            seed_paraboloid: Some(SeedSpec { e: vec![vec![vals[12]]], f: vec![vals[13]], g: vals[0] }),
            horizon: Some(vals[1]),
        };
        let mut buf = Vec::new();
        file.write(&mut buf).unwrap();
        let back = SystemFile::from_reader(buf.as_slice()).unwrap();
        let bits = |f: &SystemFile| -> Vec<u64> {
            f.a.iter().chain(&f.b).chain(&f.m).flatten().map(|v| v.to_bits()).collect()
        };
        prop_assert_eq!(bits(&back), bits(&file));
        prop_assert_eq!(back, file);
    }
}

fn ex1_family(gammas: Vec<f64>) -> ParaboloidFamily {
    let cfg = FamilyConfig {
        gammas: GammaSpec::Explicit(gammas),
        integrator: IntegratorConfig::default().with_t_end(2.0),
        ..FamilyConfig::default()
    };
    let seed = Paraboloid::new(dmatrix![0.5], dvector![0.0], -0.03).unwrap();
    build_family(&seed, &scalar_system(), &cfg).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn more_members_never_loosen(mask in prop::collection::vec(any::<bool>(), 6), t in 0.0..1.9f64) {
        let fam = ex1_family(vec![1.0, 1.4, 1.9, 2.3, 2.8, 3.3]);
        let mut sub: Vec<usize> = (0..6).filter(|&k| mask[k]).collect();
        if sub.is_empty() { sub.push(0); }
        let small = fam.subset(&sub).unwrap();
        let pts: Vec<DVector<f64>> = (0..81).map(|k| dvector![-0.4 + 0.01 * k as f64]).collect();
        let a = small.reach_slice(t, pts.clone()).unwrap();
        let b = fam.reach_slice(t, pts).unwrap();
        for (lo, hi) in b.xq_max.iter().zip(&a.xq_max) {
            prop_assert!(lo <= hi);
        }
    }

    #[test]
    fn member_order_does_not_matter(perm in Just((0..5).collect::<Vec<usize>>()).prop_shuffle(), x in -0.5..0.5f64, t in 0.0..1.9f64) {
        let fam = ex1_family(vec![1.0, 1.6, 2.2, 2.7, 3.3]);
        let snap = fam.snapshot(t).unwrap();
        let mut shuffled = snap.clone();
        shuffled.members = perm.iter().map(|&k| snap.members[k].clone()).collect();
        let x = dvector![x];
        prop_assert_eq!(snap.xq_max(&x), shuffled.xq_max(&x));
    }

    #[test]
    fn oracle_is_deterministic(seed in any::<u64>()) {
        let sys = scalar_system();
        let p0 = Paraboloid::new(dmatrix![1.0], dvector![0.0], -0.06).unwrap();
        let cfg = OracleConfig { n_trajectories: 40, seed, ..OracleConfig::default() };
        let csv = |run: &OracleRun| {
            let mut buf = Vec::new();
            write_endpoints_csv(&run.endpoints(), &mut buf).unwrap();
            buf
        };
        let a = sample_admissible(&sys, &p0, None, &cfg).unwrap();
        let b = sample_admissible(&sys, &p0, None, &cfg).unwrap();
        prop_assert_eq!(csv(&a), csv(&b));
    }

    #[test]
    fn admissible_paths_stay_in_the_seed_flow(seed in any::<u64>()) {
        let sys = scalar_system();
        let p0 = Paraboloid::new(dmatrix![1.0], dvector![0.0], -0.06).unwrap();
        let tvp = propagate(&p0, &sys, &IntegratorConfig::default().with_t_end(1.0)).unwrap();
        let cfg = OracleConfig { n_trajectories: 60, seed, sample_times: vec![0.2, 0.4, 0.6, 0.8], ..OracleConfig::default() };
        let run = sample_admissible(&sys, &p0, None, &cfg).unwrap();
        let touch_tol = TouchConfig::default().touch_tol;
        for tr in &run.trajectories {
            for k in 0..tr.len() {
                let h = tvp.eval(tr.times[k]).unwrap().value_function(&tr.state(k)).unwrap();
                prop_assert!(h <= touch_tol, "h={} at t={}", h, tr.times[k]);
            }
        }
    }
}

#[test]
fn gamma_bar_bounds_every_rising_rate() {
    let sys = planar_system();
    let p0 = planar_seed(1e-2, 1e-6, 0.015);
    let eps = default_eps_q(&p0);
    let gb = gamma_bar(&p0, &sys, eps, 64).unwrap();
    for x in slab_samples(&p0, eps, 64).unwrap() {
        let q = xq_rate_coefficients(&p0, &x, &sys).unwrap();
        for s in [1e-9, 1e-3, 1.0, 1e3] {
            let g = gb * (1.0 + s) + 1e-9;
            assert!(q.eval(g) < 0.0, "rate {} at gamma {g}", q.eval(g));
        }
    }
}

#[test]
fn halving_tolerances_moves_the_endpoint_little() {
    let sys = scalar_system();
    let p0 = Paraboloid::new(dmatrix![1.0], dvector![0.0], -0.06).unwrap();
    for tol in [1e-6, 1e-8, 1e-10] {
        let run = |r: f64| {
            let cfg = IntegratorConfig { rel_tol: r, abs_tol: r * 1e-2, ..IntegratorConfig::default().with_t_end(10.0) };
            propagate(&p0, &sys, &cfg).unwrap().final_paraboloid().e()[(0, 0)]
        };
        let (a, b) = (run(tol), run(tol / 2.0));
        assert!((a - b).abs() < 10.0 * tol * a.abs(), "tol {tol}: {a} vs {b}");
    }
}

#[test]
fn stored_rates_match_right_hand_side() {
    let sys = planar_system();
    let p0 = planar_seed(1e-2, 1e-6, 0.015);
    let tvp = propagate_scaled(&p0, 40.0, &sys, &IntegratorConfig::default()).unwrap();
    let u = DVector::zeros(1);
    for k in 0..tvp.len() {
        let (_, p) = tvp.node(k);
        let fresh = param_rates(p, &sys, &u).unwrap();
        let stored = tvp.node_rates(k);
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-300);
        assert!((&fresh.e - &stored.e).norm() <= 1e-12 * fresh.e.norm().max(1e-300));
        assert!((&fresh.f - &stored.f).norm() <= 1e-12 * fresh.f.norm().max(1e-300) || fresh.f.norm() == 0.0);
        assert!(rel(fresh.g, stored.g) <= 1e-12 || fresh.g == stored.g);
    }
}
