//! Optimal disturbance, value-function derivative and touching trajectories.

use std::io::Write;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::model::{AugmentedState, IqcSystem, Paraboloid};
use crate::ode::{Dopri5, OdeOptions};
use crate::riccati::{
    g_quadrature_matrix, packed_len, param_rates_with, params_from_slice, params_to_vec,
    rates_to_slice, ParamRates, TimeVaryingParaboloid,
};

/// Maximizer of the value-function derivative:
/// `w* = −M_w⁻¹ (Bᵀ(E x − f) + M_xwᵀ x + M_uwᵀ u)`.
pub fn optimal_disturbance(
    p: &Paraboloid,
    x: &DVector<f64>,
    u: &DVector<f64>,
    sys: &IqcSystem,
) -> Result<DVector<f64>> {
    if p.dim() != sys.n() || x.len() != sys.n() || u.len() != sys.p() {
        return Err(Error::DimensionMismatch(format!(
            "paraboloid {}, state {}, input {} for system (n, p) = ({}, {})",
            p.dim(),
            x.len(),
            u.len(),
            sys.n(),
            sys.p()
        )));
    }
    Ok(optimal_disturbance_unchecked(p, x, u, sys))
}

pub(crate) fn optimal_disturbance_unchecked(
    p: &Paraboloid,
    x: &DVector<f64>,
    u: &DVector<f64>,
    sys: &IqcSystem,
) -> DVector<f64> {
    let grad = p.e() * x - p.f();
    let arg = sys.b().tr_mul(&grad) + sys.disturbance_coupling(x, u);
    -(sys.mw_inv() * arg)
}

/// `dh/dt` along the flow for disturbance `w`, given the parameter rates at
/// the same instant.
pub fn value_derivative(
    p: &Paraboloid,
    state: &AugmentedState,
    u: &DVector<f64>,
    w: &DVector<f64>,
    sys: &IqcSystem,
    rates: &ParamRates,
) -> Result<f64> {
    let n = sys.n();
    if p.dim() != n
        || state.x.len() != n
        || u.len() != sys.p()
        || w.len() != sys.m()
        || rates.f.len() != n
        || rates.e.nrows() != n
    {
        return Err(Error::DimensionMismatch(
            "value_derivative arguments disagree with the system".into(),
        ));
    }
    let x = &state.x;
    let dx = sys.dynamics(x, u, w);
    let dxq = sys.energy_rate(x, u, w);
    Ok(x.dot(&(&rates.e * x)) + 2.0 * (p.e() * x - p.f()).dot(&dx) - 2.0 * rates.f.dot(x)
        + rates.g
        + dxq)
}

/// Initial energy rate of the touching trajectory of `γ P0` through `state`.
pub fn xq_rate_at_zero(
    p0: &Paraboloid,
    gamma: f64,
    state: &AugmentedState,
    sys: &IqcSystem,
) -> Result<f64> {
    let scaled = p0.scale(gamma)?;
    let u = sys.input_at(0.0);
    let w = optimal_disturbance(&scaled, &state.x, &u, sys)?;
    Ok(sys.energy_rate(&state.x, &u, &w))
}

/// `a γ² + b γ + c`: the initial energy rate as a function of the scaling.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateQuadratic {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl RateQuadratic {
    pub fn eval(&self, gamma: f64) -> f64 {
        (self.a * gamma + self.b) * gamma + self.c
    }

    /// Largest real root, if any.
    pub fn largest_root(&self) -> Option<f64> {
        let (a, b, c) = (self.a, self.b, self.c);
        if a == 0.0 {
            return if b != 0.0 { Some(-c / b) } else { None };
        }
        let disc = b * b - 4.0 * a * c;
        if disc < 0.0 {
            return None;
        }
        let sq = disc.sqrt();
        // Stable pair of roots.
        let q = -0.5 * (b + b.signum() * sq);
        let r1 = if q != 0.0 { c / q } else { 0.0 };
        let r2 = q / a;
        Some(r1.max(r2))
    }
}

/// Coefficients of the initial energy rate in `γ` at state `x` (independent of `x_q`).
pub fn xq_rate_coefficients(
    p0: &Paraboloid,
    x: &DVector<f64>,
    sys: &IqcSystem,
) -> Result<RateQuadratic> {
    if p0.dim() != sys.n() || x.len() != sys.n() {
        return Err(Error::DimensionMismatch(format!(
            "seed {} and state {} for n = {}",
            p0.dim(),
            x.len(),
            sys.n()
        )));
    }
    let u = sys.input_at(0.0);
    let coupling = sys.disturbance_coupling(x, &u);
    let mw = sys.mw();
    let w1 = -(sys.mw_inv() * sys.b().tr_mul(&(p0.e() * x - p0.f())));
    let w0 = -(sys.mw_inv() * &coupling);
    let k0 = sys.energy_rate(x, &u, &DVector::zeros(sys.m()));
    let mw_w0 = mw * &w0;
    Ok(RateQuadratic {
        a: w1.dot(&(mw * &w1)),
        b: 2.0 * w1.dot(&(&coupling + &mw_w0)),
        c: k0 + 2.0 * w0.dot(&coupling) + w0.dot(&mw_w0),
    })
}

/// Sampled `(x, x_q, w)` path with the owning paraboloid's value along it.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedTrajectory {
    pub times: Vec<f64>,
    pub x: Vec<DVector<f64>>,
    pub xq: Vec<f64>,
    pub w: Vec<DVector<f64>>,
    /// Value function of the owning paraboloid; zero for an exact touching trajectory.
    /// Filled with NaN when there is no owning paraboloid.
    pub h: Vec<f64>,
    /// `ẋ_q` at each sample.
    pub xq_rate: Vec<f64>,
}

impl AugmentedTrajectory {
    pub(crate) fn with_capacity(k: usize) -> Self {
        Self {
            times: Vec::with_capacity(k),
            x: Vec::with_capacity(k),
            xq: Vec::with_capacity(k),
            w: Vec::with_capacity(k),
            h: Vec::with_capacity(k),
            xq_rate: Vec::with_capacity(k),
        }
    }

    pub(crate) fn push(&mut self, t: f64, x: DVector<f64>, xq: f64, w: DVector<f64>, h: f64, rate: f64) {
        self.times.push(t);
        self.x.push(x);
        self.xq.push(xq);
        self.w.push(w);
        self.h.push(h);
        self.xq_rate.push(rate);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, k: usize) -> AugmentedState {
        AugmentedState {
            x: self.x[k].clone(),
            xq: self.xq[k],
        }
    }

    pub fn endpoint(&self) -> AugmentedState {
        self.state(self.len() - 1)
    }

    /// Largest `|h|` over the samples.
    pub fn max_abs_h(&self) -> f64 {
        self.h.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn csv_header(&self) -> Vec<String> {
        let n = self.x.first().map_or(0, |v| v.len());
        let m = self.w.first().map_or(0, |v| v.len());
        let mut h = vec!["t".to_string()];
        h.extend((0..n).map(|i| format!("x_{i}")));
        h.push("x_q".into());
        h.extend((0..m).map(|i| format!("w_{i}")));
        h.push("h".into());
        h
    }

    /// Columns `t, x…, x_q, w…, h`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(out);
        wr.write_record(self.csv_header())?;
        for k in 0..self.len() {
            let mut row = vec![self.times[k]];
            row.extend(self.x[k].iter());
            row.push(self.xq[k]);
            row.extend(self.w[k].iter());
            row.push(self.h[k]);
            wr.write_record(row.iter().map(|v| format!("{v:e}")))?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Tolerances for touching-trajectory integration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TouchConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    /// Largest `|h|` accepted along the trajectory.
    pub touch_tol: f64,
}

impl Default for TouchConfig {
    fn default() -> Self {
        Self::from_rel_tol(1e-9)
    }
}

impl TouchConfig {
    /// `touch_tol = 1000 · rel_tol`.
    pub fn from_rel_tol(rel_tol: f64) -> Self {
        Self {
            rel_tol,
            abs_tol: rel_tol * 1e-3,
            max_step: 0.01,
            touch_tol: 1e3 * rel_tol,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = [self.rel_tol, self.abs_tol, self.max_step, self.touch_tol]
            .iter()
            .all(|v| *v > 0.0 && !v.is_nan());
        if !ok || self.rel_tol < 1e-13 || self.abs_tol < 1e-13 {
            return Err(Error::InvalidConfig(format!(
                "touching tolerances must be positive (tolerances >= 1e-13): {self:?}"
            )));
        }
        Ok(())
    }
}

/// Integrates the touching trajectory of `tvp` from `x0` at `t = 0` to the
/// end of the paraboloid's domain.
pub fn touching_trajectory(
    tvp: &TimeVaryingParaboloid,
    x0: &AugmentedState,
    sys: &IqcSystem,
    cfg: &TouchConfig,
) -> Result<AugmentedTrajectory> {
    trace_touching(tvp, 0.0, x0, tvp.end(), sys, cfg)
}

/// Integrates the touching trajectory through `x0` at `t0` until `t_stop`
/// (forward or backward). The paraboloid parameters are integrated jointly
/// with the state, starting from the dense output at `t0`.
pub fn trace_touching(
    tvp: &TimeVaryingParaboloid,
    t0: f64,
    x0: &AugmentedState,
    t_stop: f64,
    sys: &IqcSystem,
    cfg: &TouchConfig,
) -> Result<AugmentedTrajectory> {
    cfg.validate()?;
    for t in [t0, t_stop] {
        if !tvp.is_defined_at(t) {
            return Err(Error::OutOfDomain { t, end: tvp.end() });
        }
    }
    let p = tvp.eval(t0)?;
    let h0 = p.value_function(x0)?;
    if h0.abs() > cfg.touch_tol {
        return Err(Error::NotOnBoundary {
            h: h0,
            tol: cfg.touch_tol,
        });
    }
    let n = sys.n();
    let g_mat = g_quadrature_matrix(sys);
    let np = packed_len(n);
    let len = n + 1 + np + n + 1;

    let mut y0 = DVector::zeros(len);
    y0.rows_mut(0, n).copy_from(&x0.x);
    y0[n] = x0.xq;
    y0.rows_mut(n + 1, np + n + 1).copy_from(&params_to_vec(&p));

    let eval = |t: f64, y: &DVector<f64>| -> Sample {
        let s = y.as_slice();
        let x = DVector::from_column_slice(&s[..n]);
        let xq = s[n];
        let p = params_from_slice(&s[n + 1..], n);
        let u = sys.input_at(t);
        let w = optimal_disturbance_unchecked(&p, &x, &u, sys);
        let rate = sys.energy_rate(&x, &u, &w);
        let h = p.quadratic_part(&x) + xq;
        Sample {
            x,
            xq,
            p,
            u,
            w,
            rate,
            h,
        }
    };
    let rhs = |t: f64, y: &DVector<f64>| -> DVector<f64> {
        let s = eval(t, y);
        let mut out = DVector::zeros(len);
        out.rows_mut(0, n).copy_from(&sys.dynamics(&s.x, &s.u, &s.w));
        out[n] = s.rate;
        let r = param_rates_with(&s.p, sys, &s.u, &g_mat).expect("dimensions validated");
        rates_to_slice(&r, &mut out.as_mut_slice()[n + 1..]);
        out
    };

    let opts = OdeOptions {
        rtol: cfg.rel_tol,
        atol: cfg.abs_tol,
        max_step: cfg.max_step,
    };
    let dir = if t_stop >= t0 { 1.0 } else { -1.0 };
    let mut traj = AugmentedTrajectory::with_capacity(64);
    let record = |traj: &mut AugmentedTrajectory, t: f64, y: &DVector<f64>| {
        let s = eval(t, y);
        traj.push(t, s.x, s.xq, s.w, s.h, s.rate);
    };
    let mut solver = Dopri5::new(&rhs, t0, y0, dir, opts);
    record(&mut traj, t0, &solver.y);
    let tol = cfg.touch_tol;
    while (t_stop - solver.t) * dir > 0.0 {
        let mut last_bad = (solver.t, 0.0);
        let res = solver.step(t_stop, |t, y| {
            let h = eval(t, y).h;
            if h.abs() <= tol {
                true
            } else {
                last_bad = (t, h);
                false
            }
        });
        match res {
            Ok(_) => record(&mut traj, solver.t, &solver.y),
            Err(Error::StepSizeUnderflow { t }) if last_bad.1 != 0.0 => {
                return Err(Error::TouchDrift {
                    t,
                    h: last_bad.1,
                    tol,
                })
            }
            Err(e) => return Err(e),
        }
    }
    Ok(traj)
}

struct Sample {
    x: DVector<f64>,
    xq: f64,
    p: Paraboloid,
    u: DVector<f64>,
    w: DVector<f64>,
    rate: f64,
    h: f64,
}
