//! Brute-force sampling of admissible trajectories, soundness and coverage checks.
//!
//! Trajectories are integrated with fixed-step classical Runge-Kutta, independent
//! of the adaptive integrator used for the paraboloid flow.

use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::family::{GridSpec, ParaboloidFamily, ReachSlice};
use crate::model::{AugmentedState, IqcSystem, Paraboloid};
use crate::touching::{optimal_disturbance_unchecked, xq_rate_coefficients, AugmentedTrajectory};

/// Relative weights of the disturbance strategies.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StrategyMix {
    /// Piecewise-constant disturbances.
    pub constant: f64,
    /// Optimal disturbance of a family member plus relative noise.
    pub touching: f64,
    /// Feedback that spends a random fraction of the available energy rate.
    pub balanced: f64,
}

impl Default for StrategyMix {
    fn default() -> Self {
        Self {
            constant: 0.25,
            touching: 0.25,
            balanced: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleConfig {
    pub n_trajectories: usize,
    pub segments: usize,
    /// Amplitude multiplier for piecewise-constant disturbances.
    pub w_scale: f64,
    pub seed: u64,
    pub t_end: f64,
    /// Times at which states are recorded (besides `0` and `t_end`).
    pub sample_times: Vec<f64>,
    pub mix: StrategyMix,
    pub max_dt: f64,
    /// Relative noise added to touching disturbances.
    pub noise: f64,
    /// Time constant of the energy feedback in the balanced strategy.
    pub tau: f64,
    /// Record every integration step instead of the sample times only.
    pub record_steps: bool,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            n_trajectories: 1000,
            segments: 8,
            w_scale: 1.0,
            seed: 0,
            t_end: 1.0,
            sample_times: Vec::new(),
            mix: StrategyMix::default(),
            max_dt: 0.005,
            noise: 0.01,
            tau: 0.05,
            record_steps: false,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trajectories == 0 || self.segments == 0 {
            return Err(Error::InvalidConfig(
                "n_trajectories and segments must be positive".into(),
            ));
        }
        let pos = [self.t_end, self.max_dt, self.tau];
        if pos.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidConfig(
                "t_end, max_dt and tau must be positive and finite".into(),
            ));
        }
        if !(self.w_scale >= 0.0) || !(self.noise >= 0.0) {
            return Err(Error::InvalidConfig("w_scale and noise must be non-negative".into()));
        }
        let m = self.mix;
        if [m.constant, m.touching, m.balanced].iter().any(|v| !(*v >= 0.0))
            || m.constant + m.touching + m.balanced <= 0.0
        {
            return Err(Error::InvalidConfig("strategy weights must be non-negative with a positive sum".into()));
        }
        if self.sample_times.iter().any(|&t| !(t >= 0.0 && t <= self.t_end)) {
            return Err(Error::InvalidConfig(format!(
                "sample times must lie in [0, {}]",
                self.t_end
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DisturbanceStrategy {
    Constant,
    Touching,
    Balanced,
}

/// Admissible trajectories and sampling statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleRun {
    pub trajectories: Vec<AugmentedTrajectory>,
    pub strategies: Vec<DisturbanceStrategy>,
    pub attempted: usize,
}

impl OracleRun {
    pub fn accepted(&self) -> usize {
        self.trajectories.len()
    }

    /// States of every trajectory at sample time `t`.
    pub fn states_at(&self, t: f64) -> Result<Vec<AugmentedState>> {
        self.trajectories
            .iter()
            .map(|tr| {
                tr.times
                    .iter()
                    .position(|&s| s == t)
                    .map(|k| tr.state(k))
                    .ok_or_else(|| Error::InvalidConfig(format!("time {t} was not sampled")))
            })
            .collect()
    }

    pub fn endpoints(&self) -> Vec<AugmentedState> {
        self.trajectories.iter().map(|t| t.endpoint()).collect()
    }
}

/// Columns `x…, x_q`.
pub fn write_endpoints_csv<W: Write>(states: &[AugmentedState], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let n = states.first().map_or(0, |s| s.x.len());
    let mut header: Vec<String> = (0..n).map(|i| format!("x_{i}")).collect();
    header.push("x_q".into());
    w.write_record(&header)?;
    for s in states {
        let mut row: Vec<String> = s.x.iter().map(|v| format!("{v:e}")).collect();
        row.push(format!("{:e}", s.xq));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Uniform sampler over `P₀ ∩ X₊` and its boundary pieces, in the seed's eigenbasis.
struct SeedSampler {
    seed: Paraboloid,
    center: DVector<f64>,
    axes: DMatrix<f64>,
    half_widths: DVector<f64>,
    rho: f64,
}

impl SeedSampler {
    fn new(p0: &Paraboloid) -> Result<Self> {
        let eig = SymmetricEigen::new(p0.e().clone());
        if !(eig.eigenvalues.min() > 0.0) {
            return Err(Error::InvalidConfig(
                "oracle needs a bounded seed (positive definite E)".into(),
            ));
        }
        let inv = &eig.eigenvectors
            * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l))
            * eig.eigenvectors.transpose();
        let center = inv * p0.f();
        let rho = center.dot(&(p0.e() * &center)) - p0.g();
        if !(rho > 0.0) {
            return Err(Error::EmptySeed);
        }
        let half_widths = eig.eigenvalues.map(|l| (rho / l).sqrt());
        Ok(Self {
            seed: p0.clone(),
            center,
            axes: eig.eigenvectors,
            half_widths,
            rho,
        })
    }

    fn point(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.center + &self.axes * y
    }

    fn box_point<R: Rng>(&self, rng: &mut R) -> DVector<f64> {
        let y = DVector::from_fn(self.half_widths.len(), |i, _| {
            (rng.random::<f64>() * 2.0 - 1.0) * self.half_widths[i]
        });
        self.point(&y)
    }

    /// Uniform in `{(x, x_q) : 0 ≤ x_q ≤ xq_bound(x)}`.
    fn uniform<R: Rng>(&self, rng: &mut R) -> AugmentedState {
        loop {
            let x = self.box_point(rng);
            let xq = rng.random::<f64>() * self.rho;
            if xq <= self.seed.xq_bound(&x) {
                return AugmentedState { x, xq };
            }
        }
    }

    /// `x` uniform in the seed's projection, lifted to the upper surface; with
    /// probability one half moved radially onto the rim (`x_q = 0`).
    fn surface<R: Rng>(&self, rng: &mut R) -> (AugmentedState, bool) {
        loop {
            let x = self.box_point(rng);
            let d = &x - &self.center;
            let r2 = d.dot(&(self.seed.e() * &d)) / self.rho;
            if r2 > 1.0 || r2 == 0.0 {
                continue;
            }
            let rim = rng.random::<bool>();
            let x = if rim { &self.center + d / r2.sqrt() } else { x };
            let xq = self.seed.xq_bound(&x).max(0.0);
            return (AugmentedState { x, xq }, rim);
        }
    }
}

/// Unit direction in disturbance space with `dᵀ(−M_w)d = 1`.
fn normalize_w(sys: &IqcSystem, d: DVector<f64>) -> DVector<f64> {
    let q = -d.dot(&(sys.mw() * &d));
    if q > 0.0 {
        d / q.sqrt()
    } else {
        d
    }
}

fn random_unit<R: Rng>(m: usize, rng: &mut R) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(m, |_, _| Distribution::<f64>::sample(&StandardNormal, rng));
        let n: f64 = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// Per-segment parameters of the balanced feedback.
#[derive(Clone)]
struct BalancedSegment {
    theta: f64,
    frac: f64,
    side: DVector<f64>,
}

enum Law<'a> {
    Constant(Vec<DVector<f64>>),
    Touching {
        member: &'a crate::riccati::TimeVaryingParaboloid,
        noise: Vec<DVector<f64>>,
    },
    Balanced(Vec<BalancedSegment>),
}

struct Plan<'a> {
    law: Law<'a>,
    seg_len: f64,
    segments: usize,
    tau: f64,
}

impl Plan<'_> {
    fn segment(&self, t: f64) -> usize {
        ((t / self.seg_len) as usize).min(self.segments - 1)
    }

    fn disturbance(&self, sys: &IqcSystem, seg: usize, t: f64, x: &DVector<f64>, xq: f64) -> DVector<f64> {
        let u = sys.input_at(t);
        match &self.law {
            Law::Constant(ws) => ws[seg].clone(),
            Law::Touching { member, noise } => {
                let p = member.eval(t.min(member.end())).expect("member covers horizon");
                let w = optimal_disturbance_unchecked(&p, x, &u, sys);
                let scale = w.norm();
                w + &noise[seg] * scale
            }
            Law::Balanced(segs) => {
                let s = &segs[seg];
                let (qmax, w0) = sys.max_energy_rate(x, &u);
                let mut base = sys.b().tr_mul(x);
                let bn = base.norm();
                if bn > 1e-300 {
                    base /= bn;
                } else {
                    base = s.side.clone();
                }
                let d = if base.len() == 1 {
                    base * s.theta.cos().signum()
                } else {
                    let side = &s.side - &base * base.dot(&s.side);
                    let sn = side.norm();
                    let side = if sn > 1e-12 { side / sn } else { side };
                    base * s.theta.cos() + side * s.theta.sin()
                };
                let d = normalize_w(sys, d);
                let s2 = s.frac * (qmax + xq.max(0.0) / self.tau);
                w0 + d * s2.max(0.0).sqrt()
            }
        }
    }
}

fn time_grid(cfg: &OracleConfig) -> Vec<f64> {
    let seg_len = cfg.t_end / cfg.segments as f64;
    let mut knots: Vec<f64> = (0..=cfg.segments).map(|k| k as f64 * seg_len).collect();
    knots[cfg.segments] = cfg.t_end;
    knots.extend(cfg.sample_times.iter().copied());
    knots.sort_by(f64::total_cmp);
    knots.dedup();
    let mut grid = vec![0.0];
    for w in knots.windows(2) {
        let len = w[1] - w[0];
        if len <= 0.0 {
            continue;
        }
        let steps = (len / cfg.max_dt).ceil().max(1.0) as usize;
        for k in 1..steps {
            grid.push(w[0] + len * k as f64 / steps as f64);
        }
        grid.push(w[1]);
    }
    grid
}

struct Simulation<'a> {
    sys: &'a IqcSystem,
    grid: &'a [f64],
    record: Vec<bool>,
}

impl Simulation<'_> {
    fn run(&self, plan: &Plan, x0: AugmentedState) -> Option<AugmentedTrajectory> {
        let sys = self.sys;
        let n = sys.n();
        let mut traj = AugmentedTrajectory::with_capacity(self.record.iter().filter(|r| **r).count());
        let mut x = x0.x;
        let mut xq = x0.xq;
        let nan = f64::NAN;
        let deriv = |t: f64, seg: usize, x: &DVector<f64>, xq: f64| {
            let u = sys.input_at(t);
            let w = plan.disturbance(sys, seg, t, x, xq);
            (sys.dynamics(x, &u, &w), sys.energy_rate(x, &u, &w), w)
        };
        let (_, r0, w0) = deriv(0.0, 0, &x, xq);
        traj.push(0.0, x.clone(), xq, w0, nan, r0);
        for k in 1..self.grid.len() {
            let (t0, t1) = (self.grid[k - 1], self.grid[k]);
            let h = t1 - t0;
            let seg = plan.segment(0.5 * (t0 + t1));
            let (k1, q1, _) = deriv(t0, seg, &x, xq);
            let (k2, q2, _) = deriv(t0 + 0.5 * h, seg, &(&x + &k1 * (0.5 * h)), xq + 0.5 * h * q1);
            let (k3, q3, _) = deriv(t0 + 0.5 * h, seg, &(&x + &k2 * (0.5 * h)), xq + 0.5 * h * q2);
            let (k4, q4, _) = deriv(t1, seg, &(&x + &k3 * h), xq + h * q3);
            x += (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0);
            xq += h / 6.0 * (q1 + 2.0 * (q2 + q3) + q4);
            if !(xq >= 0.0) || x.iter().any(|v| !v.is_finite()) {
                return None;
            }
            if self.record[k] {
                let (_, r, w) = deriv(t1, seg.min(plan.segment(t1)), &x, xq);
                traj.push(t1, x.clone(), xq, w, nan, r);
            }
        }
        debug_assert_eq!(traj.x[0].len(), n);
        Some(traj)
    }
}

/// Draws admissible trajectories: initial states in `P₀ ∩ X₊`, disturbances from
/// the strategy mix, rejection of any path whose `x_q` goes negative.
///
/// `family` enables the touching strategy; without it that share goes to the
/// balanced strategy.
pub fn sample_admissible(
    sys: &IqcSystem,
    p0: &Paraboloid,
    family: Option<&ParaboloidFamily>,
    cfg: &OracleConfig,
) -> Result<OracleRun> {
    cfg.validate()?;
    if p0.dim() != sys.n() {
        return Err(Error::DimensionMismatch("seed and system dimensions differ".into()));
    }
    let sampler = SeedSampler::new(p0)?;
    let grid = time_grid(cfg);
    let record: Vec<bool> = grid
        .iter()
        .map(|t| cfg.record_steps || *t == cfg.t_end || *t == 0.0 || cfg.sample_times.contains(t))
        .collect();
    let sim = Simulation {
        sys,
        grid: &grid,
        record,
    };
    let usable: Vec<&crate::riccati::TimeVaryingParaboloid> = family
        .map(|f| f.members().iter().filter(|m| m.end() >= cfg.t_end).collect())
        .unwrap_or_default();

    let mut mix = cfg.mix;
    if usable.is_empty() {
        mix.balanced += mix.touching;
        mix.touching = 0.0;
    }
    let total = mix.constant + mix.touching + mix.balanced;

    let draw = |index: usize| -> Option<(AugmentedTrajectory, DisturbanceStrategy)> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(index as u64);
        let pick = rng.random::<f64>() * total;
        let strategy = if pick < mix.constant {
            DisturbanceStrategy::Constant
        } else if pick < mix.constant + mix.touching {
            DisturbanceStrategy::Touching
        } else {
            DisturbanceStrategy::Balanced
        };
        let seg_len = cfg.t_end / cfg.segments as f64;
        let (x0, law) = match strategy {
            DisturbanceStrategy::Constant => {
                let x0 = sampler.uniform(&mut rng);
                let u0 = sys.input_at(0.0);
                let (qmax, w0) = sys.max_energy_rate(&x0.x, &u0);
                let budget = (qmax + x0.xq / seg_len).max(0.0);
                let ws = (0..cfg.segments)
                    .map(|_| {
                        let d = normalize_w(sys, random_unit(sys.m(), &mut rng));
                        let s2 = cfg.w_scale * rng.random::<f64>() * budget;
                        &w0 + d * s2.sqrt()
                    })
                    .collect();
                (x0, Law::Constant(ws))
            }
            DisturbanceStrategy::Touching => {
                let (x0, rim) = sampler.surface(&mut rng);
                let member = if rim {
                    let limit = xq_rate_coefficients(p0, &x0.x, sys)
                        .ok()
                        .and_then(|q| q.largest_root())
                        .unwrap_or(1.0)
                        .max(1.0);
                    let count = usable.iter().filter(|m| m.gamma() <= limit).count().max(1);
                    usable[rng.random_range(0..count)]
                } else {
                    usable[0]
                };
                let noise = (0..cfg.segments)
                    .map(|_| {
                        DVector::from_fn(sys.m(), |_, _| {
                            cfg.noise * Distribution::<f64>::sample(&StandardNormal, &mut rng)
                        })
                    })
                    .collect();
                (x0, Law::Touching { member, noise })
            }
            DisturbanceStrategy::Balanced => {
                let x0 = if rng.random::<bool>() {
                    sampler.uniform(&mut rng)
                } else {
                    sampler.surface(&mut rng).0
                };
                let persist = rng.random::<bool>();
                let mut segs: Vec<BalancedSegment> = Vec::with_capacity(cfg.segments);
                for k in 0..cfg.segments {
                    if persist && k > 0 {
                        segs.push(segs[0].clone());
                        continue;
                    }
                    segs.push(BalancedSegment {
                        theta: rng.random::<f64>() * std::f64::consts::TAU,
                        frac: rng.random::<f64>().powf(0.3),
                        side: random_unit(sys.m(), &mut rng),
                    });
                }
                (x0, Law::Balanced(segs))
            }
        };
        let plan = Plan {
            law,
            seg_len,
            segments: cfg.segments,
            tau: cfg.tau,
        };
        sim.run(&plan, x0).map(|t| (t, strategy))
    };

    let n = cfg.n_trajectories;
    let mut trajectories = Vec::with_capacity(n);
    let mut strategies = Vec::with_capacity(n);
    let mut attempted = 0usize;
    while trajectories.len() < n {
        let batch = (2 * (n - trajectories.len())).max(256);
        let results: Vec<_> = (attempted..attempted + batch)
            .into_par_iter()
            .map(draw)
            .collect();
        let start = attempted;
        attempted += batch;
        for (offset, r) in results.into_iter().enumerate() {
            if let Some((t, s)) = r {
                trajectories.push(t);
                strategies.push(s);
                if trajectories.len() == n {
                    attempted = start + offset + 1;
                    break;
                }
            }
        }
        if trajectories.len() < n && attempted >= 10_000 && (trajectories.len() as f64) < 1e-3 * attempted as f64 {
            return Err(Error::RejectionStarvation {
                accepted: trajectories.len(),
                attempted,
            });
        }
    }
    Ok(OracleRun {
        trajectories,
        strategies,
        attempted,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SoundnessViolation {
    pub trajectory: usize,
    pub t: f64,
    pub margin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SoundnessReport {
    pub checked: usize,
    /// Largest membership margin seen; positive means outside.
    pub max_margin: f64,
    pub tolerance: f64,
    pub violations: Vec<SoundnessViolation>,
}

impl SoundnessReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks every recorded state at `times` against the family intersection,
/// allowing a membership margin of `tol`.
pub fn soundness(family: &ParaboloidFamily, run: &OracleRun, times: &[f64], tol: f64) -> Result<SoundnessReport> {
    let mut report = SoundnessReport {
        checked: 0,
        max_margin: f64::NEG_INFINITY,
        tolerance: tol,
        violations: Vec::new(),
    };
    for &t in times {
        let snap = family.snapshot(t)?;
        let states = run.states_at(t)?;
        let margins: Vec<f64> = states
            .par_iter()
            .map(|s| {
                let m = snap.membership(s);
                if s.xq < 0.0 {
                    f64::INFINITY
                } else {
                    m.margin
                }
            })
            .collect();
        for (k, margin) in margins.into_iter().enumerate() {
            report.checked += 1;
            report.max_margin = report.max_margin.max(margin);
            if margin > tol {
                report.violations.push(SoundnessViolation { trajectory: k, t, margin });
            }
        }
    }
    Ok(report)
}

/// Checks states against a tabulated slice instead of the family.
///
/// Each state is compared with its nearest slice point; the allowance is the
/// largest `xq_max` change between that point and its `2n` next-nearest points,
/// plus `tol`. States farther from the table than that neighbourhood are skipped.
pub fn slice_soundness(slice: &ReachSlice, states: &[AugmentedState], tol: f64) -> Result<SoundnessReport> {
    let mut report = SoundnessReport {
        checked: 0,
        max_margin: f64::NEG_INFINITY,
        tolerance: tol,
        violations: Vec::new(),
    };
    if slice.points.is_empty() {
        return Ok(report);
    }
    let n = slice.points[0].len();
    if states.iter().any(|s| s.x.len() != n) {
        return Err(Error::DimensionMismatch("slice and state dimensions differ".into()));
    }
    let k = (2 * n + 1).min(slice.points.len());
    let margins: Vec<Option<f64>> = states
        .par_iter()
        .map(|s| {
            let mut near: Vec<(f64, usize)> = slice
                .points
                .iter()
                .enumerate()
                .map(|(i, p)| ((p - &s.x).norm_squared(), i))
                .collect();
            near.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0));
            near.truncate(k);
            near.sort_by(|a, b| a.0.total_cmp(&b.0));
            let (d0, i0) = near[0];
            let reach = near.last().map_or(0.0, |v| v.0);
            if k > 1 && d0 > reach {
                return None;
            }
            let base = slice.xq_max[i0];
            let slack = near
                .iter()
                .map(|&(_, i)| (slice.xq_max[i] - base).abs())
                .fold(0.0, f64::max);
            Some(s.xq - base - slack)
        })
        .collect();
    for (i, m) in margins.into_iter().enumerate() {
        let Some(m) = m else { continue };
        report.checked += 1;
        report.max_margin = report.max_margin.max(m);
        if m > tol {
            report.violations.push(SoundnessViolation {
                trajectory: i,
                t: slice.t,
                margin: m,
            });
        }
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoverageReport {
    pub t: f64,
    pub cells: usize,
    /// Cells whose centre lies in the slice.
    pub inside: usize,
    pub covered: usize,
    /// `covered / inside`, zero when the slice has no cells.
    pub coverage: f64,
    /// Centres of slice cells no endpoint reached.
    pub gaps: Vec<Vec<f64>>,
}

impl CoverageReport {
    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }
}

/// Fraction of slice cells (centre with `xq_max ≥ 0`) holding at least one
/// endpoint, cells dilated by `cell_tol` cell widths.
pub fn coverage(
    family: &ParaboloidFamily,
    t: f64,
    endpoints: &[DVector<f64>],
    grid: &GridSpec,
    cell_tol: f64,
) -> Result<CoverageReport> {
    if grid.dim() != family.seed().dim() {
        return Err(Error::DimensionMismatch("grid and system dimensions differ".into()));
    }
    let snap = family.snapshot(t)?;
    let inside: Vec<bool> = (0..grid.len())
        .into_par_iter()
        .map(|k| snap.xq_max(&grid.center(k)).0 >= 0.0)
        .collect();
    let mut hit = vec![false; grid.len()];
    for x in endpoints {
        for k in grid.cells_near(x, cell_tol) {
            hit[k] = true;
        }
    }
    let n_inside = inside.iter().filter(|b| **b).count();
    let covered = (0..grid.len()).filter(|&k| inside[k] && hit[k]).count();
    let gaps = (0..grid.len())
        .filter(|&k| inside[k] && !hit[k])
        .map(|k| grid.center(k).iter().copied().collect())
        .collect();
    Ok(CoverageReport {
        t,
        cells: grid.len(),
        inside: n_inside,
        covered,
        coverage: if n_inside == 0 { 0.0 } else { covered as f64 / n_inside as f64 },
        gaps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::family::{build_family, FamilyConfig, GammaSpec};
    use crate::model::InputSignal;
    use crate::riccati::IntegratorConfig;
    use nalgebra::{dmatrix, dvector};

    fn scalar() -> IqcSystem {
        IqcSystem::new(
            dmatrix![-1.0],
            dmatrix![1.0],
            DMatrix::zeros(1, 0),
            dmatrix![1.0, 0.0; 0.0, -2.0],
            InputSignal::Zero(0),
        )
        .unwrap()
    }

    fn seed() -> Paraboloid {
        Paraboloid::new(dmatrix![0.5], dvector![0.0], -0.03).unwrap()
    }

    fn small_cfg(n: usize) -> OracleConfig {
        OracleConfig {
            n_trajectories: n,
            t_end: 1.0,
            sample_times: vec![0.5],
            seed: 3,
            ..OracleConfig::default()
        }
    }

    #[test]
    fn grid_contains_sample_times() {
        let cfg = OracleConfig {
            sample_times: vec![0.33],
            max_dt: 0.1,
            ..small_cfg(1)
        };
        let g = time_grid(&cfg);
        assert_eq!(g[0], 0.0);
        assert_eq!(*g.last().unwrap(), 1.0);
        assert!(g.contains(&0.33));
        assert!(g.windows(2).all(|w| w[1] > w[0] && w[1] - w[0] <= 0.1 + 1e-15));
    }

    #[test]
    fn accepted_paths_are_admissible() {
        let sys = scalar();
        let run = sample_admissible(&sys, &seed(), None, &small_cfg(200)).unwrap();
        assert_eq!(run.accepted(), 200);
        assert!(run.attempted >= 200);
        for tr in &run.trajectories {
            assert!(tr.xq.iter().all(|v| *v >= 0.0));
            assert_eq!(tr.times, vec![0.0, 0.5, 1.0]);
            assert!(seed().xq_bound(&tr.x[0]) >= tr.xq[0] - 1e-15);
        }
    }

    #[test]
    fn same_seed_same_run() {
        let sys = scalar();
        let a = sample_admissible(&sys, &seed(), None, &small_cfg(50)).unwrap();
        let b = sample_admissible(&sys, &seed(), None, &small_cfg(50)).unwrap();
        assert_eq!(a.endpoints(), b.endpoints());
        assert_eq!(a.strategies, b.strategies);
        assert_eq!(a.attempted, b.attempted);
        let c = sample_admissible(&sys, &seed(), None, &OracleConfig { seed: 4, ..small_cfg(50) }).unwrap();
        assert_ne!(a.endpoints(), c.endpoints());
    }

    #[test]
    fn energy_bookkeeping_matches_quadrature() {
        let sys = scalar();
        let cfg = OracleConfig {
            record_steps: true,
            max_dt: 1e-3,
            mix: StrategyMix {
                constant: 1.0,
                touching: 0.0,
                balanced: 0.0,
            },
            ..small_cfg(20)
        };
        let run = sample_admissible(&sys, &seed(), None, &cfg).unwrap();
        for tr in &run.trajectories {
            // Composite Simpson over step pairs inside each constant segment.
            let seg = cfg.t_end / cfg.segments as f64;
            let mut integral = 0.0;
            let mut k = 0;
            while k + 1 < tr.len() {
                let t0 = tr.times[k];
                let same = k + 2 < tr.len()
                    && ((t0 + 1e-12) / seg).floor() == ((tr.times[k + 2] - 1e-12) / seg).floor();
                if same {
                    let t2 = tr.times[k + 2];
                    let w = &tr.w[k + 1];
                    let r = |j: usize| sys.energy_rate(&tr.x[j], &DVector::zeros(0), w);
                    integral += (t2 - t0) / 6.0 * (r(k) + 4.0 * r(k + 1) + r(k + 2));
                    k += 2;
                } else {
                    let w = &tr.w[k + 1];
                    let r = |j: usize| sys.energy_rate(&tr.x[j], &DVector::zeros(0), w);
                    integral += (tr.times[k + 1] - t0) / 2.0 * (r(k) + r(k + 1));
                    k += 1;
                }
            }
            assert_eq!(k, tr.len() - 1);
            let direct = tr.xq.last().unwrap() - tr.xq[0];
            assert!((integral - direct).abs() < 1e-8, "{integral} vs {direct}");
        }
    }

    #[test]
    fn oversized_disturbances_starve() {
        let cfg = OracleConfig {
            w_scale: 1e6,
            mix: StrategyMix {
                constant: 1.0,
                touching: 0.0,
                balanced: 0.0,
            },
            ..small_cfg(10)
        };
        assert!(matches!(
            sample_admissible(&scalar(), &seed(), None, &cfg),
            Err(Error::RejectionStarvation { .. })
        ));
    }

    #[test]
    fn empty_seed_is_an_error() {
        let p = Paraboloid::new(dmatrix![0.5], dvector![0.0], 0.1).unwrap();
        assert!(matches!(
            sample_admissible(&scalar(), &p, None, &small_cfg(5)),
            Err(Error::EmptySeed)
        ));
    }

    fn family() -> ParaboloidFamily {
        let cfg = FamilyConfig {
            gammas: GammaSpec::Explicit(vec![1.0, 1.2, 1.414]),
            integrator: IntegratorConfig::default().with_t_end(1.0),
            ..FamilyConfig::default()
        };
        build_family(&seed(), &scalar(), &cfg).unwrap()
    }

    #[test]
    fn scalar_oracle_is_sound() {
        let fam = family();
        let cfg = OracleConfig {
            sample_times: vec![0.25, 0.5, 0.75],
            ..small_cfg(300)
        };
        let run = sample_admissible(&scalar(), &seed(), Some(&fam), &cfg).unwrap();
        assert!(run.strategies.contains(&DisturbanceStrategy::Touching));
        let rep = soundness(&fam, &run, &[0.0, 0.25, 0.5, 0.75, 1.0], 1e-8).unwrap();
        assert_eq!(rep.checked, 1500);
        assert!(rep.passed(), "{:?}", rep.violations.first());
    }

    #[test]
    fn outside_point_is_reported() {
        let fam = family();
        let mut run = sample_admissible(&scalar(), &seed(), None, &small_cfg(3)).unwrap();
        run.trajectories[1].x[2] = dvector![10.0];
        let rep = soundness(&fam, &run, &[1.0], 1e-8).unwrap();
        assert_eq!(rep.violations.len(), 1);
        assert_eq!(rep.violations[0].trajectory, 1);
    }

    #[test]
    fn coverage_edge_cases() {
        let fam = family();
        let grid = GridSpec::uniform(dvector![-1.0], dvector![1.0], 20).unwrap();
        let none = coverage(&fam, 0.5, &[], &grid, 0.0).unwrap();
        assert_eq!(none.coverage, 0.0);
        assert_eq!(none.gaps.len(), none.inside);
        assert!(none.inside > 0);
        let one = coverage(&fam, 0.5, &[dvector![0.0]], &grid, 0.0).unwrap();
        assert!(one.coverage <= 1.0 / one.inside as f64 + 1e-15);
        assert_eq!(one.covered, 1);
    }

    #[test]
    fn tampered_slice_is_caught() {
        let fam = family();
        let grid = GridSpec::uniform(dvector![-1.0], dvector![1.0], 200).unwrap();
        let slice = fam.reach_slice(1.0, grid.centers()).unwrap();
        let run = sample_admissible(&scalar(), &seed(), Some(&fam), &small_cfg(300)).unwrap();
        let ends = run.endpoints();
        let honest = slice_soundness(&slice, &ends, 1e-8).unwrap();
        assert_eq!(honest.checked, 300);
        assert!(honest.passed(), "{:?}", honest.violations.first());
        let mut bad = slice.clone();
        bad.xq_max.iter_mut().for_each(|v| *v = -*v);
        assert!(!slice_soundness(&bad, &ends, 1e-8).unwrap().passed());
    }

    #[test]
    fn endpoint_csv_columns() {
        let states = vec![AugmentedState { x: dvector![1.0, 2.0], xq: 0.5 }];
        let mut buf = Vec::new();
        write_endpoints_csv(&states, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x_0,x_1,x_q\n"));
    }
}
