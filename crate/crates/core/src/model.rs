//! Plant, constraint and paraboloid types.
//!
//! The plant is `ẋ = A x + B w + B_u u` with the energetic state
//! `ẋ_q = [x;u;w]ᵀ M [x;u;w]`. A paraboloid `(E, f, g)` is the sublevel set
//! `h(x, x_q) = xᵀE x − 2 fᵀx + g + x_q ≤ 0`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative asymmetry accepted (and then removed) when symmetrizing input matrices.
pub const SYM_TOL: f64 = 1e-10;
/// Every eigenvalue of `M_w` must lie at or below `-PD_MARGIN`.
pub const PD_MARGIN: f64 = 1e-12;

pub(crate) fn relative_asymmetry(m: &DMatrix<f64>) -> f64 {
    let norm = m.norm();
    if norm == 0.0 {
        return 0.0;
    }
    (m - m.transpose()).norm() / norm
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn checked_symmetric(name: &'static str, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(name));
    }
    let asym = relative_asymmetry(m);
    if asym > SYM_TOL {
        return Err(Error::NotSymmetric {
            name,
            asymmetry: asym,
        });
    }
    Ok(symmetrize(m))
}

/// A C¹ sampled signal: cubic Hermite through the samples with
/// finite-difference tangents, held constant outside the sample range.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledSignal {
    times: Vec<f64>,
    values: Vec<DVector<f64>>,
    slopes: Vec<DVector<f64>>,
}

impl SampledSignal {
    pub fn new(times: Vec<f64>, values: Vec<DVector<f64>>) -> Result<Self> {
        if times.is_empty() || times.len() != values.len() {
            return Err(Error::DimensionMismatch(format!(
                "signal has {} times and {} values",
                times.len(),
                values.len()
            )));
        }
        let dim = values[0].len();
        if values.iter().any(|v| v.len() != dim) {
            return Err(Error::DimensionMismatch(
                "signal samples have inconsistent lengths".into(),
            ));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidConfig(
                "signal times must be strictly increasing".into(),
            ));
        }
        if times.iter().any(|t| !t.is_finite())
            || values.iter().any(|v| v.iter().any(|x| !x.is_finite()))
        {
            return Err(Error::NonFinite("input signal"));
        }
        let k = times.len();
        let slopes = (0..k)
            .map(|i| {
                if k == 1 {
                    DVector::zeros(dim)
                } else if i == 0 {
                    (&values[1] - &values[0]) / (times[1] - times[0])
                } else if i == k - 1 {
                    (&values[k - 1] - &values[k - 2]) / (times[k - 1] - times[k - 2])
                } else {
                    (&values[i + 1] - &values[i - 1]) / (times[i + 1] - times[i - 1])
                }
            })
            .collect();
        Ok(Self {
            times,
            values,
            slopes,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[DVector<f64>] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    pub fn eval(&self, t: f64) -> DVector<f64> {
        let k = self.times.len();
        if t <= self.times[0] {
            return self.values[0].clone();
        }
        if t >= self.times[k - 1] {
            return self.values[k - 1].clone();
        }
        let i = self.times.partition_point(|&s| s <= t) - 1;
        let h = self.times[i + 1] - self.times[i];
        let s = (t - self.times[i]) / h;
        let (h00, h10, h01, h11) = hermite_basis(s);
        &self.values[i] * h00
            + &self.slopes[i] * (h10 * h)
            + &self.values[i + 1] * h01
            + &self.slopes[i + 1] * (h11 * h)
    }

    /// Time derivative of [`eval`](Self::eval); zero outside the sample range.
    pub fn eval_derivative(&self, t: f64) -> DVector<f64> {
        let k = self.times.len();
        if t <= self.times[0] || t >= self.times[k - 1] {
            return DVector::zeros(self.dim());
        }
        let i = self.times.partition_point(|&s| s <= t) - 1;
        let h = self.times[i + 1] - self.times[i];
        let s = (t - self.times[i]) / h;
        let s2 = s * s;
        let (d00, d10, d01, d11) = (
            (6.0 * s2 - 6.0 * s) / h,
            3.0 * s2 - 4.0 * s + 1.0,
            (-6.0 * s2 + 6.0 * s) / h,
            3.0 * s2 - 2.0 * s,
        );
        &self.values[i] * d00
            + &self.slopes[i] * d10
            + &self.values[i + 1] * d01
            + &self.slopes[i + 1] * d11
    }
}

pub(crate) fn hermite_basis(s: f64) -> (f64, f64, f64, f64) {
    let s2 = s * s;
    let s3 = s2 * s;
    (
        2.0 * s3 - 3.0 * s2 + 1.0,
        s3 - 2.0 * s2 + s,
        -2.0 * s3 + 3.0 * s2,
        s3 - s2,
    )
}

/// Known input `u(t)`.
#[derive(Clone, Debug, PartialEq)]
pub enum InputSignal {
    /// `u ≡ 0` in ℝᵖ.
    Zero(usize),
    Sampled(SampledSignal),
}

impl InputSignal {
    pub fn dim(&self) -> usize {
        match self {
            InputSignal::Zero(p) => *p,
            InputSignal::Sampled(s) => s.dim(),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, InputSignal::Zero(_))
    }

    pub fn eval(&self, t: f64) -> DVector<f64> {
        match self {
            InputSignal::Zero(p) => DVector::zeros(*p),
            InputSignal::Sampled(s) => s.eval(t),
        }
    }

    pub fn eval_derivative(&self, t: f64) -> DVector<f64> {
        match self {
            InputSignal::Zero(p) => DVector::zeros(*p),
            InputSignal::Sampled(s) => s.eval_derivative(t),
        }
    }
}

/// LTI plant with an integral quadratic constraint, stored by blocks of `M`.
#[derive(Clone, Debug)]
pub struct IqcSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    bu: DMatrix<f64>,
    mx: DMatrix<f64>,
    mxu: DMatrix<f64>,
    mxw: DMatrix<f64>,
    mu: DMatrix<f64>,
    muw: DMatrix<f64>,
    mw: DMatrix<f64>,
    mw_inv: DMatrix<f64>,
    input: InputSignal,
}

impl IqcSystem {
    /// Validates dimensions, symmetrizes `M` and checks `M_w ≺ 0`.
    ///
    /// `M` is partitioned in the order `(x, u, w)`, i.e. blocks of sizes
    /// `n`, `p`, `m`.
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        bu: DMatrix<f64>,
        m: DMatrix<f64>,
        input: InputSignal,
    ) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "A must be square and non-empty, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != n || b.ncols() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "B must be {n}xm with m >= 1, got {}x{}",
                b.nrows(),
                b.ncols()
            )));
        }
        if bu.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "B_u must have {n} rows, got {}",
                bu.nrows()
            )));
        }
        let md = b.ncols();
        let p = bu.ncols();
        let total = n + md + p;
        if m.nrows() != total || m.ncols() != total {
            return Err(Error::DimensionMismatch(format!(
                "M must be {total}x{total}, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if input.dim() != p {
            return Err(Error::DimensionMismatch(format!(
                "input signal has dimension {}, B_u has {p} columns",
                input.dim()
            )));
        }
        for (name, mat) in [("A", &a), ("B", &b), ("B_u", &bu)] {
            if mat.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(name));
            }
        }
        let m = checked_symmetric("M", &m)?;

        let (ix, iu, iw) = (0, n, n + p);
        let mx = m.view((ix, ix), (n, n)).into_owned();
        let mxu = m.view((ix, iu), (n, p)).into_owned();
        let mxw = m.view((ix, iw), (n, md)).into_owned();
        let mu = m.view((iu, iu), (p, p)).into_owned();
        let muw = m.view((iu, iw), (p, md)).into_owned();
        let mw = m.view((iw, iw), (md, md)).into_owned();

        let max_eig = SymmetricEigen::new(mw.clone()).eigenvalues.max();
        if max_eig > -PD_MARGIN {
            return Err(Error::NotNegativeDefinite {
                max_eigenvalue: max_eig,
            });
        }
        if (-&mw).cholesky().is_none() {
            return Err(Error::SingularMw);
        }
        let mw_inv = symmetrize(&mw.clone().try_inverse().ok_or(Error::SingularMw)?);

        Ok(Self {
            a,
            b,
            bu,
            mx,
            mxu,
            mxw,
            mu,
            muw,
            mw,
            mw_inv,
            input,
        })
    }

    /// State dimension.
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    /// Disturbance dimension.
    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    /// Input dimension.
    pub fn p(&self) -> usize {
        self.bu.ncols()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn bu(&self) -> &DMatrix<f64> {
        &self.bu
    }
    pub fn mx(&self) -> &DMatrix<f64> {
        &self.mx
    }
    pub fn mxu(&self) -> &DMatrix<f64> {
        &self.mxu
    }
    pub fn mxw(&self) -> &DMatrix<f64> {
        &self.mxw
    }
    pub fn mu(&self) -> &DMatrix<f64> {
        &self.mu
    }
    pub fn muw(&self) -> &DMatrix<f64> {
        &self.muw
    }
    pub fn mw(&self) -> &DMatrix<f64> {
        &self.mw
    }
    pub fn mw_inv(&self) -> &DMatrix<f64> {
        &self.mw_inv
    }
    pub fn input(&self) -> &InputSignal {
        &self.input
    }

    pub fn input_at(&self, t: f64) -> DVector<f64> {
        self.input.eval(t)
    }

    /// Reassembles the full `M` from its blocks.
    pub fn m_matrix(&self) -> DMatrix<f64> {
        let (n, p, md) = (self.n(), self.p(), self.m());
        let total = n + p + md;
        let mut m = DMatrix::zeros(total, total);
        let (iu, iw) = (n, n + p);
        m.view_mut((0, 0), (n, n)).copy_from(&self.mx);
        m.view_mut((0, iu), (n, p)).copy_from(&self.mxu);
        m.view_mut((0, iw), (n, md)).copy_from(&self.mxw);
        m.view_mut((iu, 0), (p, n)).copy_from(&self.mxu.transpose());
        m.view_mut((iu, iu), (p, p)).copy_from(&self.mu);
        m.view_mut((iu, iw), (p, md)).copy_from(&self.muw);
        m.view_mut((iw, 0), (md, n)).copy_from(&self.mxw.transpose());
        m.view_mut((iw, iu), (md, p)).copy_from(&self.muw.transpose());
        m.view_mut((iw, iw), (md, md)).copy_from(&self.mw);
        m
    }

    /// `A x + B w + B_u u`.
    pub fn dynamics(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        let mut dx = &self.a * x + &self.b * w;
        if self.p() > 0 {
            dx += &self.bu * u;
        }
        dx
    }

    /// Energy rate `[x;u;w]ᵀ M [x;u;w]`.
    pub fn energy_rate(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> f64 {
        let mut r = x.dot(&(&self.mx * x)) + 2.0 * x.dot(&(&self.mxw * w)) + w.dot(&(&self.mw * w));
        if self.p() > 0 {
            r += 2.0 * x.dot(&(&self.mxu * u)) + u.dot(&(&self.mu * u)) + 2.0 * u.dot(&(&self.muw * w));
        }
        r
    }

    /// Cross term `M_xwᵀ x + M_uwᵀ u` that couples the disturbance to the
    /// state and input in the energy rate.
    pub fn disturbance_coupling(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let mut c = self.mxw.tr_mul(x);
        if self.p() > 0 {
            c += self.muw.tr_mul(u);
        }
        c
    }

    /// Largest energy rate reachable at `(x, u)` and the disturbance attaining it.
    pub fn max_energy_rate(&self, x: &DVector<f64>, u: &DVector<f64>) -> (f64, DVector<f64>) {
        let c = self.disturbance_coupling(x, u);
        let w0 = -(&self.mw_inv * &c);
        (self.energy_rate(x, u, &w0), w0)
    }
}

/// `(E, f, g)` defining `h(x, x_q) = xᵀE x − 2 fᵀx + g + x_q`.
#[derive(Clone, Debug, PartialEq)]
pub struct Paraboloid {
    pub(crate) e: DMatrix<f64>,
    pub(crate) f: DVector<f64>,
    pub(crate) g: f64,
}

impl Paraboloid {
    pub fn new(e: DMatrix<f64>, f: DVector<f64>, g: f64) -> Result<Self> {
        if e.nrows() != e.ncols() || e.nrows() != f.len() {
            return Err(Error::DimensionMismatch(format!(
                "E is {}x{} but f has length {}",
                e.nrows(),
                e.ncols(),
                f.len()
            )));
        }
        if !g.is_finite() || f.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("paraboloid"));
        }
        let e = checked_symmetric("E", &e)?;
        Ok(Self { e, f, g })
    }

    pub(crate) fn from_parts_unchecked(e: DMatrix<f64>, f: DVector<f64>, g: f64) -> Self {
        Self { e, f, g }
    }

    pub fn e(&self) -> &DMatrix<f64> {
        &self.e
    }
    pub fn f(&self) -> &DVector<f64> {
        &self.f
    }
    pub fn g(&self) -> f64 {
        self.g
    }
    pub fn dim(&self) -> usize {
        self.f.len()
    }

    /// `xᵀE x − 2 fᵀx + g`, the part of `h` that does not depend on `x_q`.
    pub fn quadratic_part(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.e * x)) - 2.0 * self.f.dot(x) + self.g
    }

    /// Largest `x_q` with `(x, x_q)` in the paraboloid.
    pub fn xq_bound(&self, x: &DVector<f64>) -> f64 {
        -self.quadratic_part(x)
    }

    /// The value function; membership is `h ≤ 0`.
    pub fn value_function(&self, state: &AugmentedState) -> Result<f64> {
        if state.x.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "state has dimension {}, paraboloid {}",
                state.x.len(),
                self.dim()
            )));
        }
        Ok(self.quadratic_part(&state.x) + state.xq)
    }

    pub fn contains(&self, state: &AugmentedState) -> Result<bool> {
        Ok(self.value_function(state)? <= 0.0)
    }

    /// `(γE, γf, γg)`.
    pub fn scale(&self, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::NonPositiveScale(gamma));
        }
        Ok(Self {
            e: &self.e * gamma,
            f: &self.f * gamma,
            g: self.g * gamma,
        })
    }
}

/// `(x, x_q)`: plant state and remaining energy budget.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedState {
    pub x: DVector<f64>,
    pub xq: f64,
}

impl AugmentedState {
    pub fn new(x: DVector<f64>, xq: f64) -> Result<Self> {
        if !xq.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("augmented state"));
        }
        Ok(Self { x, xq })
    }

    /// Membership in `X₊`.
    pub fn is_admissible(&self) -> bool {
        self.xq >= 0.0
    }
}
