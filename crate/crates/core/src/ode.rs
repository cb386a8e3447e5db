//! Dormand-Prince 5(4) with PI step-size control.
//!
//! Small and specialised: one accepted step at a time, so callers can inspect
//! the state between steps (escape detection, drift monitoring) and veto a
//! step through the `accept` hook.

use nalgebra::DVector;

use crate::error::{Error, Result};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const SAFE: f64 = 0.9;
const BETA: f64 = 0.04;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;

#[derive(Clone, Copy, Debug)]
pub(crate) struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_step: f64,
}

pub(crate) struct Dopri5<F>
where
    F: FnMut(f64, &DVector<f64>) -> DVector<f64>,
{
    rhs: F,
    pub t: f64,
    pub y: DVector<f64>,
    pub dy: DVector<f64>,
    h: f64,
    dir: f64,
    err_old: f64,
    opts: OdeOptions,
}

/// A step candidate: new state, its derivative (FSAL) and the scaled error.
pub(crate) struct Trial {
    pub y: DVector<f64>,
    pub dy: DVector<f64>,
    pub err: f64,
}

impl<F> Dopri5<F>
where
    F: FnMut(f64, &DVector<f64>) -> DVector<f64>,
{
    /// `dir` is `+1.0` for forward and `-1.0` for backward integration.
    pub fn new(mut rhs: F, t0: f64, y0: DVector<f64>, dir: f64, opts: OdeOptions) -> Self {
        let dy = rhs(t0, &y0);
        let mut s = Self {
            rhs,
            t: t0,
            y: y0,
            dy,
            h: 0.0,
            dir: dir.signum(),
            err_old: 1e-4,
            opts,
        };
        s.h = s.initial_step();
        s
    }

    fn scale(&self, y0: &DVector<f64>, y1: &DVector<f64>, i: usize) -> f64 {
        self.opts.atol + self.opts.rtol * y0[i].abs().max(y1[i].abs())
    }

    fn rms(&self, v: &DVector<f64>, y0: &DVector<f64>, y1: &DVector<f64>) -> f64 {
        if v.is_empty() {
            return 0.0;
        }
        let s: f64 = (0..v.len())
            .map(|i| (v[i] / self.scale(y0, y1, i)).powi(2))
            .sum();
        (s / v.len() as f64).sqrt()
    }

    fn initial_step(&mut self) -> f64 {
        let y = self.y.clone();
        let d0 = self.rms(&y, &y, &y);
        let d1 = self.rms(&self.dy.clone(), &y, &y);
        let mut h0 = if d0 < 1e-10 || d1 < 1e-10 {
            1e-6
        } else {
            0.01 * d0 / d1
        };
        h0 = h0.min(self.opts.max_step);
        let y1 = &y + &self.dy * (self.dir * h0);
        let f1 = (self.rhs)(self.t + self.dir * h0, &y1);
        let d2 = self.rms(&(&f1 - &self.dy), &y, &y) / h0;
        let der = d1.max(d2);
        let h1 = if der <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / der).powf(0.2)
        };
        (100.0 * h0).min(h1).min(self.opts.max_step)
    }

    /// One Dormand-Prince stage sequence from the current state with signed step `h`.
    pub fn trial(&mut self, h: f64) -> Trial {
        let (t, y, k1) = (self.t, &self.y, &self.dy);
        let f = &mut self.rhs;
        let k2 = f(t + C2 * h, &(y + k1 * (h * A21)));
        let k3 = f(t + C3 * h, &(y + (k1 * A31 + &k2 * A32) * h));
        let k4 = f(t + C4 * h, &(y + (k1 * A41 + &k2 * A42 + &k3 * A43) * h));
        let k5 = f(
            t + C5 * h,
            &(y + (k1 * A51 + &k2 * A52 + &k3 * A53 + &k4 * A54) * h),
        );
        let k6 = f(
            t + h,
            &(y + (k1 * A61 + &k2 * A62 + &k3 * A63 + &k4 * A64 + &k5 * A65) * h),
        );
        let y_new = y + (k1 * A71 + &k3 * A73 + &k4 * A74 + &k5 * A75 + &k6 * A76) * h;
        let k7 = f(t + h, &y_new);
        let err_vec = (k1 * E1 + &k3 * E3 + &k4 * E4 + &k5 * E5 + &k6 * E6 + &k7 * E7) * h;
        let err = if y_new.iter().chain(k7.iter()).all(|v| v.is_finite()) {
            self.rms(&err_vec, &self.y, &y_new)
        } else {
            f64::INFINITY
        };
        Trial {
            y: y_new,
            dy: k7,
            err,
        }
    }

    /// Advances by one accepted step without passing `t_limit`.
    ///
    /// `accept(t_new, y_new)` may veto an error-acceptable step; the step is
    /// then halved and retried. Returns the size of the step taken.
    pub fn step<A>(&mut self, t_limit: f64, mut accept: A) -> Result<f64>
    where
        A: FnMut(f64, &DVector<f64>) -> bool,
    {
        let h_min = 1e-14 * self.t.abs().max(1.0);
        loop {
            let remaining = (t_limit - self.t) * self.dir;
            if remaining <= 0.0 {
                return Ok(0.0);
            }
            let mut h = self.h.min(self.opts.max_step);
            let last = h >= remaining;
            if last {
                h = remaining;
            }
            if h < h_min && !last {
                return Err(Error::StepSizeUnderflow { t: self.t });
            }
            let trial = self.trial(self.dir * h);
            let t_new = if last { t_limit } else { self.t + self.dir * h };
            if trial.err <= 1.0 {
                if !accept(t_new, &trial.y) {
                    self.h = 0.5 * h;
                    if self.h < h_min {
                        return Err(Error::StepSizeUnderflow { t: self.t });
                    }
                    continue;
                }
                let fac11 = trial.err.powf(0.2 - BETA * 0.75);
                let fac = (fac11 / self.err_old.powf(BETA) / SAFE).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
                self.err_old = trial.err.max(1e-4);
                self.t = t_new;
                self.y = trial.y;
                self.dy = trial.dy;
                // Never shrink below the step just taken because of the clipped last step.
                self.h = (h / fac).max(if last { self.h } else { 0.0 });
                return Ok(h);
            }
            let shrink = if trial.err.is_finite() {
                (trial.err.powf(0.2 - BETA * 0.75) / SAFE).min(1.0 / FAC_MIN)
            } else {
                1.0 / FAC_MIN
            };
            self.h = h / shrink;
            if self.h < h_min {
                return Err(Error::StepSizeUnderflow { t: self.t });
            }
        }
    }
}
