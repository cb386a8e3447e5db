//! Parameter flow `(E, f, g)` of a time-varying paraboloid.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{IqcSystem, Paraboloid};
use crate::ode::{Dopri5, OdeOptions};

/// `−E A − AᵀE − M_x + Kᵀ M_w⁻¹ K` with `K = BᵀE + M_xwᵀ`.
pub fn riccati_rhs(e: &DMatrix<f64>, sys: &IqcSystem) -> Result<DMatrix<f64>> {
    check_square(e, sys.n())?;
    let k = sys.b().tr_mul(e) + sys.mxw().transpose();
    let r = -(e * sys.a()) - sys.a().tr_mul(e) - sys.mx() + k.tr_mul(&(sys.mw_inv() * &k));
    Ok((&r + r.transpose()) * 0.5)
}

/// `−Aᵀf + (M_xu + E B_u) u + (E B + M_xw) M_w⁻¹ (Bᵀf − M_uwᵀ u)`.
pub fn f_rhs(
    e: &DMatrix<f64>,
    f: &DVector<f64>,
    sys: &IqcSystem,
    u: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_square(e, sys.n())?;
    check_len("f", f, sys.n())?;
    check_len("u", u, sys.p())?;
    let kt = e * sys.b() + sys.mxw();
    let mut inner = sys.b().tr_mul(f);
    let mut r = -sys.a().tr_mul(f);
    if sys.p() > 0 {
        inner -= sys.muw().tr_mul(u);
        r += (sys.mxu() + e * sys.bu()) * u;
    }
    r += kt * (sys.mw_inv() * inner);
    Ok(r)
}

/// The `(n+p)×(n+p)` matrix `G` with `ġ = [f;u]ᵀ G [f;u]`.
///
/// Blocks: `B M_w⁻¹ Bᵀ`, `B_u − B M_w⁻¹ M_uwᵀ` and `M_uw M_w⁻¹ M_uwᵀ − M_u`.
pub fn g_quadrature_matrix(sys: &IqcSystem) -> DMatrix<f64> {
    let (n, p) = (sys.n(), sys.p());
    let mut g = DMatrix::zeros(n + p, n + p);
    let bmi = sys.b() * sys.mw_inv();
    let gff = &bmi * sys.b().transpose();
    g.view_mut((0, 0), (n, n)).copy_from(&gff);
    if p > 0 {
        let gfu = sys.bu() - &bmi * sys.muw().transpose();
        let guu = sys.muw() * sys.mw_inv() * sys.muw().transpose() - sys.mu();
        g.view_mut((0, n), (n, p)).copy_from(&gfu);
        g.view_mut((n, 0), (p, n)).copy_from(&gfu.transpose());
        g.view_mut((n, n), (p, p)).copy_from(&guu);
    }
    (&g + g.transpose()) * 0.5
}

/// `ġ = [f;u]ᵀ G [f;u]`.
pub fn g_rate(f: &DVector<f64>, sys: &IqcSystem, u: &DVector<f64>) -> Result<f64> {
    check_len("f", f, sys.n())?;
    check_len("u", u, sys.p())?;
    let z = stack(f, u);
    Ok(z.dot(&(g_quadrature_matrix(sys) * &z)))
}

fn stack(f: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    let mut z = DVector::zeros(f.len() + u.len());
    z.rows_mut(0, f.len()).copy_from(f);
    z.rows_mut(f.len(), u.len()).copy_from(u);
    z
}

fn check_square(e: &DMatrix<f64>, n: usize) -> Result<()> {
    if e.nrows() != n || e.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "E is {}x{}, system has n = {n}",
            e.nrows(),
            e.ncols()
        )));
    }
    Ok(())
}

fn check_len(name: &str, v: &DVector<f64>, n: usize) -> Result<()> {
    if v.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{name} has length {}, expected {n}",
            v.len()
        )));
    }
    Ok(())
}

/// Time derivatives `(Ė, ḟ, ġ)` of the paraboloid parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamRates {
    pub e: DMatrix<f64>,
    pub f: DVector<f64>,
    pub g: f64,
}

/// Evaluates all three parameter right-hand sides at one instant.
pub fn param_rates(p: &Paraboloid, sys: &IqcSystem, u: &DVector<f64>) -> Result<ParamRates> {
    let g_mat = g_quadrature_matrix(sys);
    param_rates_with(p, sys, u, &g_mat)
}

pub(crate) fn param_rates_with(
    p: &Paraboloid,
    sys: &IqcSystem,
    u: &DVector<f64>,
    g_mat: &DMatrix<f64>,
) -> Result<ParamRates> {
    let e = riccati_rhs(p.e(), sys)?;
    let f = f_rhs(p.e(), p.f(), sys, u)?;
    let z = stack(p.f(), u);
    let g = z.dot(&(g_mat * &z));
    Ok(ParamRates { e, f, g })
}

/// Second time derivatives, differentiating the right-hand sides along the flow.
fn param_accel(
    p: &Paraboloid,
    d: &ParamRates,
    sys: &IqcSystem,
    u: &DVector<f64>,
    du: &DVector<f64>,
    g_mat: &DMatrix<f64>,
) -> ParamRates {
    let mi = sys.mw_inv();
    let k = sys.b().tr_mul(p.e()) + sys.mxw().transpose();
    let dk = sys.b().tr_mul(&d.e);
    let cross = dk.tr_mul(&(mi * &k));
    let dde = -(&d.e * sys.a()) - sys.a().tr_mul(&d.e) + &cross + cross.transpose();

    let mut inner = sys.b().tr_mul(p.f());
    let mut dinner = sys.b().tr_mul(&d.f);
    let mut ddf = -sys.a().tr_mul(&d.f);
    if sys.p() > 0 {
        inner -= sys.muw().tr_mul(u);
        dinner -= sys.muw().tr_mul(du);
        ddf += (&d.e * sys.bu()) * u + (sys.mxu() + p.e() * sys.bu()) * du;
    }
    ddf += dk.tr_mul(&(mi * inner)) + k.tr_mul(&(mi * dinner));

    let z = stack(p.f(), u);
    let dz = stack(&d.f, du);
    let ddg = 2.0 * dz.dot(&(g_mat * &z));
    ParamRates {
        e: dde,
        f: ddf,
        g: ddg,
    }
}

/// Step control and escape settings for [`propagate`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntegratorConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    /// Frobenius norm of `E` treated as finite escape.
    pub escape_norm: f64,
    pub t_end: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-9,
            abs_tol: 1e-12,
            max_step: 0.05,
            escape_norm: 1e7,
            t_end: 1.0,
        }
    }
}

impl IntegratorConfig {
    pub fn with_t_end(mut self, t_end: f64) -> Self {
        self.t_end = t_end;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v > 0.0 && !v.is_nan() {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")))
            }
        };
        pos("rel_tol", self.rel_tol)?;
        pos("abs_tol", self.abs_tol)?;
        pos("max_step", self.max_step)?;
        pos("escape_norm", self.escape_norm)?;
        pos("t_end", self.t_end)?;
        if !self.t_end.is_finite() {
            return Err(Error::InvalidConfig("t_end must be finite".into()));
        }
        if self.rel_tol < 1e-13 || self.abs_tol < 1e-13 {
            return Err(Error::InvalidConfig(
                "rel_tol and abs_tol must be at least 1e-13".into(),
            ));
        }
        Ok(())
    }

    pub(crate) fn ode_options(&self) -> OdeOptions {
        OdeOptions {
            rtol: self.rel_tol,
            atol: self.abs_tol,
            max_step: self.max_step,
        }
    }
}

pub(crate) fn packed_len(n: usize) -> usize {
    n * (n + 1) / 2
}

pub(crate) fn pack_into(e: &DMatrix<f64>, out: &mut [f64]) {
    let n = e.nrows();
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            out[k] = e[(i, j)];
            k += 1;
        }
    }
}

pub(crate) fn unpack(data: &[f64], n: usize) -> DMatrix<f64> {
    let mut e = DMatrix::zeros(n, n);
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            e[(i, j)] = data[k];
            e[(j, i)] = data[k];
            k += 1;
        }
    }
    e
}

/// Layout `[packed E, f, g]`.
pub(crate) fn params_to_vec(p: &Paraboloid) -> DVector<f64> {
    let n = p.dim();
    let np = packed_len(n);
    let mut v = DVector::zeros(np + n + 1);
    pack_into(p.e(), &mut v.as_mut_slice()[..np]);
    v.rows_mut(np, n).copy_from(p.f());
    v[np + n] = p.g();
    v
}

pub(crate) fn params_from_slice(s: &[f64], n: usize) -> Paraboloid {
    let np = packed_len(n);
    Paraboloid::from_parts_unchecked(
        unpack(&s[..np], n),
        DVector::from_column_slice(&s[np..np + n]),
        s[np + n],
    )
}

pub(crate) fn rates_to_slice(r: &ParamRates, out: &mut [f64]) {
    let n = r.f.len();
    let np = packed_len(n);
    pack_into(&r.e, &mut out[..np]);
    out[np..np + n].copy_from_slice(r.f.as_slice());
    out[np + n] = r.g;
}

/// Right-hand side of the parameter ODE in packed layout.
pub(crate) fn param_ode_rhs<'a>(
    sys: &'a IqcSystem,
    g_mat: &'a DMatrix<f64>,
) -> impl Fn(f64, &[f64], &mut [f64]) + 'a {
    let n = sys.n();
    move |t, y, out| {
        let p = params_from_slice(y, n);
        let u = sys.input_at(t);
        let r = param_rates_with(&p, sys, &u, g_mat).expect("dimensions validated");
        rates_to_slice(&r, out);
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Node {
    t: f64,
    p: Paraboloid,
    d: ParamRates,
    dd: ParamRates,
}

/// Time-sampled paraboloid `(E(t), f(t), g(t))` with dense output.
///
/// Between nodes the parameters are interpolated by quintic Hermite
/// polynomials matching values, first and second derivatives.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeVaryingParaboloid {
    gamma: f64,
    nodes: Vec<Node>,
    escape_time: Option<f64>,
    t_end: f64,
}

/// Propagates `P0` over `[0, cfg.t_end]`.
pub fn propagate(
    p0: &Paraboloid,
    sys: &IqcSystem,
    cfg: &IntegratorConfig,
) -> Result<TimeVaryingParaboloid> {
    propagate_scaled(p0, 1.0, sys, cfg)
}

/// Propagates the scaled seed `γ P0`, recording `γ`.
pub fn propagate_scaled(
    p0: &Paraboloid,
    gamma: f64,
    sys: &IqcSystem,
    cfg: &IntegratorConfig,
) -> Result<TimeVaryingParaboloid> {
    cfg.validate()?;
    if p0.dim() != sys.n() {
        return Err(Error::DimensionMismatch(format!(
            "seed has dimension {}, system {}",
            p0.dim(),
            sys.n()
        )));
    }
    let seed = p0.scale(gamma)?;
    let n = sys.n();
    let g_mat = g_quadrature_matrix(sys);
    let rhs_slice = param_ode_rhs(sys, &g_mat);
    let len = packed_len(n) + n + 1;
    let rhs = |t: f64, y: &DVector<f64>| {
        let mut out = DVector::zeros(len);
        rhs_slice(t, y.as_slice(), out.as_mut_slice());
        out
    };
    let make_node = |t: f64, y: &DVector<f64>, dy: &DVector<f64>| -> Node {
        let p = params_from_slice(y.as_slice(), n);
        let d = params_from_slice(dy.as_slice(), n);
        let d = ParamRates {
            e: d.e,
            f: d.f,
            g: d.g,
        };
        let u = sys.input_at(t);
        let du = sys.input().eval_derivative(t);
        let dd = param_accel(&p, &d, sys, &u, &du, &g_mat);
        Node { t, p, d, dd }
    };

    let mut solver = Dopri5::new(&rhs, 0.0, params_to_vec(&seed), 1.0, cfg.ode_options());
    let first = make_node(0.0, &solver.y, &solver.dy);
    // The first node carries the seed bit-for-bit.
    let mut nodes = vec![Node { p: seed, ..first }];
    let e_norm = |y: &DVector<f64>| unpack(&y.as_slice()[..packed_len(n)], n).norm();
    let mut escape_time = None;

    while solver.t < cfg.t_end {
        let (t0, y0) = (solver.t, solver.y.clone());
        let h = solver.step(cfg.t_end, |_, _| true)?;
        if e_norm(&solver.y) > cfg.escape_norm {
            // Bracket the crossing by bisection on the step size from the last node.
            let mut probe = Dopri5::new(&rhs, t0, y0, 1.0, cfg.ode_options());
            let (mut lo, mut hi) = (0.0, h);
            let mut best = None;
            while hi - lo > 1e-4 * hi {
                let mid = 0.5 * (lo + hi);
                let trial = probe.trial(mid);
                if trial.err.is_finite() && e_norm(&trial.y) <= cfg.escape_norm {
                    lo = mid;
                    if trial.err <= 1.0 {
                        best = Some((mid, trial));
                    }
                } else {
                    hi = mid;
                }
            }
            if let Some((hb, trial)) = best {
                nodes.push(make_node(t0 + hb, &trial.y, &trial.dy));
            }
            escape_time = Some(t0 + hi);
            break;
        }
        nodes.push(make_node(solver.t, &solver.y, &solver.dy));
    }

    Ok(TimeVaryingParaboloid {
        gamma,
        nodes,
        escape_time,
        t_end: cfg.t_end,
    })
}

fn quintic_basis(s: f64) -> [f64; 6] {
    let s2 = s * s;
    let s3 = s2 * s;
    let s4 = s3 * s;
    let s5 = s4 * s;
    [
        1.0 - 10.0 * s3 + 15.0 * s4 - 6.0 * s5,
        s - 6.0 * s3 + 8.0 * s4 - 3.0 * s5,
        0.5 * s2 - 1.5 * s3 + 1.5 * s4 - 0.5 * s5,
        0.5 * s3 - s4 + 0.5 * s5,
        -4.0 * s3 + 7.0 * s4 - 3.0 * s5,
        10.0 * s3 - 15.0 * s4 + 6.0 * s5,
    ]
}

impl TimeVaryingParaboloid {
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn dim(&self) -> usize {
        self.nodes[0].p.dim()
    }

    pub fn times(&self) -> Vec<f64> {
        self.nodes.iter().map(|n| n.t).collect()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn escape_time(&self) -> Option<f64> {
        self.escape_time
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    /// Last time at which the paraboloid can be evaluated.
    pub fn end(&self) -> f64 {
        self.nodes.last().map_or(0.0, |n| n.t)
    }

    pub fn is_defined_at(&self, t: f64) -> bool {
        t >= 0.0 && t <= self.end()
    }

    /// True when the flow reached `t_end` without escaping.
    pub fn is_complete(&self) -> bool {
        self.escape_time.is_none()
    }

    /// Parameters at node `k`.
    pub fn node(&self, k: usize) -> (f64, &Paraboloid) {
        let n = &self.nodes[k];
        (n.t, &n.p)
    }

    /// Stored derivatives at node `k`.
    pub fn node_rates(&self, k: usize) -> &ParamRates {
        &self.nodes[k].d
    }

    pub fn seed(&self) -> &Paraboloid {
        &self.nodes[0].p
    }

    pub fn final_paraboloid(&self) -> &Paraboloid {
        &self.nodes[self.nodes.len() - 1].p
    }

    /// Largest `‖E‖_F` over the nodes.
    pub fn max_e_norm(&self) -> f64 {
        self.nodes.iter().map(|n| n.p.e().norm()).fold(0.0, f64::max)
    }

    /// Dense-output parameters at `t`; exact at the nodes.
    pub fn eval(&self, t: f64) -> Result<Paraboloid> {
        if !(t >= 0.0) || t > self.end() {
            return Err(Error::OutOfDomain {
                t,
                end: self.end(),
            });
        }
        let i = self.nodes.partition_point(|n| n.t <= t);
        let a = &self.nodes[i - 1];
        if a.t == t || i == self.nodes.len() {
            return Ok(a.p.clone());
        }
        let b = &self.nodes[i];
        let h = b.t - a.t;
        let w = quintic_basis((t - a.t) / h);
        let c = [w[0], w[1] * h, w[2] * h * h, w[3] * h * h, w[4] * h, w[5]];
        let e = a.p.e() * c[0]
            + &a.d.e * c[1]
            + &a.dd.e * c[2]
            + &b.dd.e * c[3]
            + &b.d.e * c[4]
            + b.p.e() * c[5];
        let f = a.p.f() * c[0]
            + &a.d.f * c[1]
            + &a.dd.f * c[2]
            + &b.dd.f * c[3]
            + &b.d.f * c[4]
            + b.p.f() * c[5];
        let g = a.p.g() * c[0]
            + a.d.g * c[1]
            + a.dd.g * c[2]
            + b.dd.g * c[3]
            + b.d.g * c[4]
            + b.p.g() * c[5];
        Ok(Paraboloid::from_parts_unchecked(e, f, g))
    }

    pub fn csv_header(&self) -> Vec<String> {
        let n = self.dim();
        let mut h = vec!["t".to_string()];
        for i in 0..n {
            for j in 0..n {
                h.push(format!("E_{i}_{j}"));
            }
        }
        h.extend((0..n).map(|i| format!("f_{i}")));
        h.push("g".into());
        h
    }

    /// One row per node: `t`, `E` row-major, `f`, `g`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.csv_header())?;
        for node in &self.nodes {
            let mut row = vec![node.t];
            let e = node.p.e();
            for i in 0..e.nrows() {
                for j in 0..e.ncols() {
                    row.push(e[(i, j)]);
                }
            }
            row.extend(node.p.f().iter());
            row.push(node.p.g());
            w.write_record(row.iter().map(|v| format!("{v:e}")))?;
        }
        w.flush()?;
        Ok(())
    }
}
