//! Families of scaled seed propagations and their intersection.

use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{AugmentedState, IqcSystem, Paraboloid};
use crate::riccati::{propagate_scaled, IntegratorConfig, TimeVaryingParaboloid};
use crate::touching::{trace_touching, xq_rate_coefficients, AugmentedTrajectory, TouchConfig};

/// Number of shell levels sampled across the slab.
const SLAB_LEVELS: usize = 8;

/// Centre `c = E₀⁻¹ f₀`, radius term `ρ = cᵀE₀c − g₀` and `E₀^{-1/2}` of a
/// positive definite seed, so that `xᵀE₀x − 2f₀ᵀx + g₀ = (x−c)ᵀE₀(x−c) − ρ`.
pub(crate) struct SeedGeometry {
    pub center: DVector<f64>,
    pub rho: f64,
    pub inv_sqrt: DMatrix<f64>,
}

pub(crate) fn seed_geometry(p0: &Paraboloid) -> Result<SeedGeometry> {
    let eig = SymmetricEigen::new(p0.e().clone());
    let min = eig.eigenvalues.min();
    if !(min > 0.0) {
        return Err(Error::UnboundedSlab);
    }
    let inv_sqrt_vals = eig.eigenvalues.map(|l| 1.0 / l.sqrt());
    let inv_sqrt =
        &eig.eigenvectors * DMatrix::from_diagonal(&inv_sqrt_vals) * eig.eigenvectors.transpose();
    let inv = &inv_sqrt * &inv_sqrt;
    let center = &inv * p0.f();
    let rho = center.dot(&(p0.e() * &center)) - p0.g();
    Ok(SeedGeometry {
        center,
        rho,
        inv_sqrt,
    })
}

/// Default slab thickness: `1e-3` of the seed's energy scale.
pub fn default_eps_q(p0: &Paraboloid) -> f64 {
    let scale = match seed_geometry(p0) {
        Ok(g) => g.rho.abs().max(p0.g().abs()),
        Err(_) => p0.g().abs(),
    };
    if scale > 0.0 {
        1e-3 * scale
    } else {
        1e-3
    }
}

/// Unit directions used to sweep spheres: `±1` in 1-D, an angle grid in 2-D
/// and seeded Gaussian directions above.
pub(crate) fn sphere_directions(n: usize, density: usize, seed: u64) -> Vec<DVector<f64>> {
    match n {
        1 => vec![DVector::from_element(1, 1.0), DVector::from_element(1, -1.0)],
        2 => (0..density.max(4))
            .map(|k| {
                let th = 2.0 * std::f64::consts::PI * k as f64 / density.max(4) as f64;
                DVector::from_vec(vec![th.cos(), th.sin()])
            })
            .collect(),
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut dirs = Vec::with_capacity(density + 2 * n);
            for i in 0..n {
                for s in [1.0, -1.0] {
                    let mut d = DVector::zeros(n);
                    d[i] = s;
                    dirs.push(d);
                }
            }
            while dirs.len() < density.max(2 * n) {
                let v = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
                let norm: f64 = v.norm();
                if norm > 1e-12 {
                    dirs.push(v / norm);
                }
            }
            dirs
        }
    }
}

/// States of the slab `{x : xᵀE₀x − 2f₀ᵀx + g₀ ∈ [0, ε_q]}` used by [`gamma_bar`].
pub fn slab_samples(p0: &Paraboloid, eps_q: f64, density: usize) -> Result<Vec<DVector<f64>>> {
    if !(eps_q > 0.0) {
        return Err(Error::InvalidConfig(format!("eps_q must be positive, got {eps_q}")));
    }
    let geo = seed_geometry(p0)?;
    let lo = geo.rho.max(0.0);
    let hi = geo.rho + eps_q;
    if hi < 0.0 {
        return Err(Error::EmptySeed);
    }
    let dirs = sphere_directions(p0.dim(), density, 0x5eed);
    let mut out = Vec::with_capacity(dirs.len() * SLAB_LEVELS);
    for level in 0..SLAB_LEVELS {
        let r2 = lo + (hi - lo) * level as f64 / (SLAB_LEVELS - 1) as f64;
        let r = r2.sqrt();
        for d in &dirs {
            out.push(&geo.center + &geo.inv_sqrt * d * r);
        }
    }
    Ok(out)
}

/// Largest scaling of the seed whose touching trajectories can start with a
/// non-negative energy rate from the slab; `1` when none can.
pub fn gamma_bar(p0: &Paraboloid, sys: &IqcSystem, eps_q: f64, density: usize) -> Result<f64> {
    let samples = slab_samples(p0, eps_q, density)?;
    let mut best = 1.0f64;
    for x in &samples {
        let q = xq_rate_coefficients(p0, x, sys)?;
        if let Some(root) = q.largest_root() {
            if root >= 1.0 {
                best = best.max(root);
            }
        }
    }
    Ok(best)
}

/// How the scalings of a family are chosen.
#[derive(Clone, Debug, PartialEq)]
pub enum GammaSpec {
    /// `n` points evenly spaced over `[1, γ̄]`.
    Uniform(usize),
    /// A user-supplied increasing list starting at `1`.
    Explicit(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct FamilyConfig {
    pub gammas: GammaSpec,
    /// Slab thickness; defaults to [`default_eps_q`].
    pub eps_q: Option<f64>,
    /// Overrides the sampled bound (required when `E₀` is not positive definite).
    pub gamma_bar: Option<f64>,
    pub sampler_density: usize,
    pub integrator: IntegratorConfig,
}

impl Default for FamilyConfig {
    fn default() -> Self {
        Self {
            gammas: GammaSpec::Uniform(64),
            eps_q: None,
            gamma_bar: None,
            sampler_density: 64,
            integrator: IntegratorConfig::default(),
        }
    }
}

/// Evenly spaced scalings over `[1, γ̄]`, endpoints included.
pub fn uniform_gammas(n: usize, gamma_bar: f64) -> Vec<f64> {
    if n <= 1 || gamma_bar <= 1.0 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| {
            if i == n - 1 {
                gamma_bar
            } else {
                1.0 + (gamma_bar - 1.0) * i as f64 / (n - 1) as f64
            }
        })
        .collect()
}

/// A sampled family of propagated scalings of one seed.
#[derive(Clone, Debug)]
pub struct ParaboloidFamily {
    seed: Paraboloid,
    gammas: Vec<f64>,
    members: Vec<TimeVaryingParaboloid>,
    eps_q: f64,
    gamma_bar: f64,
    horizon: f64,
    escape_norm: f64,
    k_bound: f64,
}

pub fn build_family(p0: &Paraboloid, sys: &IqcSystem, cfg: &FamilyConfig) -> Result<ParaboloidFamily> {
    cfg.integrator.validate()?;
    let eps_q = cfg.eps_q.unwrap_or_else(|| default_eps_q(p0));
    if !(eps_q > 0.0) {
        return Err(Error::InvalidConfig(format!("eps_q must be positive, got {eps_q}")));
    }
    let (gammas, gamma_bar) = match &cfg.gammas {
        GammaSpec::Uniform(0) => {
            return Err(Error::InvalidConfig("family needs at least one member".into()))
        }
        GammaSpec::Uniform(n) => {
            let gb = match cfg.gamma_bar {
                Some(g) if g >= 1.0 && g.is_finite() => g,
                Some(g) => {
                    return Err(Error::InvalidConfig(format!(
                        "gamma_bar must be a finite value >= 1, got {g}"
                    )))
                }
                None if *n == 1 => 1.0,
                None => gamma_bar(p0, sys, eps_q, cfg.sampler_density)?,
            };
            (uniform_gammas(*n, gb), gb)
        }
        GammaSpec::Explicit(list) => {
            validate_gammas(list)?;
            (list.clone(), *list.last().unwrap())
        }
    };
    let members = gammas
        .par_iter()
        .map(|&g| propagate_scaled(p0, g, sys, &cfg.integrator))
        .collect::<Result<Vec<_>>>()?;
    let k_bound = members.iter().map(|m| m.max_e_norm()).fold(0.0, f64::max);
    Ok(ParaboloidFamily {
        seed: p0.clone(),
        gammas,
        members,
        eps_q,
        gamma_bar,
        horizon: cfg.integrator.t_end,
        escape_norm: cfg.integrator.escape_norm,
        k_bound,
    })
}

fn validate_gammas(list: &[f64]) -> Result<()> {
    if list.is_empty() {
        return Err(Error::InvalidConfig("gamma list is empty".into()));
    }
    if list[0] != 1.0 {
        return Err(Error::InvalidConfig(format!(
            "gamma list must start at 1, got {}",
            list[0]
        )));
    }
    if list.iter().any(|g| !g.is_finite()) || list.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidConfig(
            "gammas must be finite and strictly increasing".into(),
        ));
    }
    Ok(())
}

/// Result of a membership query against the intersection.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Membership {
    pub inside: bool,
    /// Largest member value function; negative strictly inside.
    pub margin: f64,
}

/// Members defined at one instant, evaluated once.
#[derive(Clone, Debug)]
pub struct FamilySnapshot {
    pub t: f64,
    /// `(member index, paraboloid)` in increasing gamma order.
    pub members: Vec<(usize, Paraboloid)>,
}

impl FamilySnapshot {
    /// `min_k −(xᵀE_k x − 2f_kᵀx + g_k)` and the lowest member index attaining it.
    pub fn xq_max(&self, x: &DVector<f64>) -> (f64, usize) {
        let mut best = (f64::INFINITY, usize::MAX);
        for (k, p) in &self.members {
            let v = p.xq_bound(x);
            if v < best.0 || (v == best.0 && *k < best.1) {
                best = (v, *k);
            }
        }
        best
    }

    pub fn membership(&self, state: &AugmentedState) -> Membership {
        let margin = self
            .members
            .iter()
            .map(|(_, p)| p.quadratic_part(&state.x) + state.xq)
            .fold(f64::NEG_INFINITY, f64::max);
        Membership {
            inside: state.xq >= 0.0 && margin <= 0.0,
            margin,
        }
    }
}

impl ParaboloidFamily {
    pub fn seed(&self) -> &Paraboloid {
        &self.seed
    }
    pub fn gammas(&self) -> &[f64] {
        &self.gammas
    }
    pub fn members(&self) -> &[TimeVaryingParaboloid] {
        &self.members
    }
    pub fn eps_q(&self) -> f64 {
        self.eps_q
    }
    pub fn gamma_bar(&self) -> f64 {
        self.gamma_bar
    }
    pub fn horizon(&self) -> f64 {
        self.horizon
    }
    pub fn k_bound(&self) -> f64 {
        self.k_bound
    }
    pub fn escape_norm(&self) -> f64 {
        self.escape_norm
    }

    /// Last time at which at least one member is defined.
    pub fn end(&self) -> f64 {
        self.members.iter().map(|m| m.end()).fold(0.0, f64::max)
    }

    /// Same family restricted to the members at `indices` (kept in gamma order).
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut idx: Vec<usize> = indices.to_vec();
        idx.sort_unstable();
        idx.dedup();
        if idx.is_empty() || idx.iter().any(|&i| i >= self.members.len()) {
            return Err(Error::InvalidConfig("invalid member subset".into()));
        }
        let members: Vec<_> = idx.iter().map(|&i| self.members[i].clone()).collect();
        Ok(Self {
            seed: self.seed.clone(),
            gammas: idx.iter().map(|&i| self.gammas[i]).collect(),
            k_bound: members.iter().map(|m| m.max_e_norm()).fold(0.0, f64::max),
            members,
            ..self.clone()
        })
    }

    pub fn snapshot(&self, t: f64) -> Result<FamilySnapshot> {
        let members: Vec<_> = self
            .members
            .iter()
            .enumerate()
            .filter(|(_, m)| m.is_defined_at(t))
            .map(|(k, m)| m.eval(t).map(|p| (k, p)))
            .collect::<Result<_>>()?;
        if members.is_empty() {
            return Err(Error::OutOfDomain { t, end: self.end() });
        }
        Ok(FamilySnapshot { t, members })
    }

    /// Membership in the intersection of the members defined at `t` and `x_q ≥ 0`.
    pub fn intersection_membership(&self, t: f64, state: &AugmentedState) -> Result<Membership> {
        if state.x.len() != self.seed.dim() {
            return Err(Error::DimensionMismatch(format!(
                "state has dimension {}, family {}",
                state.x.len(),
                self.seed.dim()
            )));
        }
        Ok(self.snapshot(t)?.membership(state))
    }

    pub fn reach_slice(&self, t: f64, points: Vec<DVector<f64>>) -> Result<ReachSlice> {
        let n = self.seed.dim();
        if let Some(p) = points.iter().find(|p| p.len() != n) {
            return Err(Error::DimensionMismatch(format!(
                "grid point has dimension {}, family {n}",
                p.len()
            )));
        }
        let snap = self.snapshot(t)?;
        let (xq_max, argmin): (Vec<f64>, Vec<usize>) =
            points.par_iter().map(|x| snap.xq_max(x)).unzip();
        Ok(ReachSlice {
            t,
            points,
            xq_max,
            argmin,
            gammas: self.gammas.clone(),
        })
    }

    /// Bounding box of the slice's zero-level set `{x : xq_max(x) ≥ 0}`,
    /// found by ray searches from an interior anchor. `bounded` is false
    /// when some ray hit the search cap.
    pub fn slice_bounds(&self, t: f64, density: usize) -> Result<SliceBounds> {
        let snap = self.snapshot(t)?;
        let n = self.seed.dim();
        let scale = seed_extent(&self.seed).max(1e-6);
        let cap = 1e3 * scale;

        let mut anchors = vec![DVector::zeros(n)];
        if let Ok(geo) = seed_geometry(&self.seed) {
            anchors.push(geo.center);
        }
        for (_, p) in &snap.members {
            if let Some(inv) = p.e().clone().try_inverse() {
                anchors.push(inv * p.f());
            }
        }
        let anchor = anchors
            .into_iter()
            .filter(|a| a.iter().all(|v| v.is_finite()))
            .map(|a| (snap.xq_max(&a).0, a))
            .max_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(v, a)| (v, a))
            .unwrap();
        if anchor.0 < 0.0 {
            return Err(Error::EmptySeed);
        }
        let anchor = anchor.1;

        let mut lower = anchor.clone();
        let mut upper = anchor.clone();
        let mut bounded = true;
        for d in sphere_directions(n, density, 0xb0c5) {
            let (r, hit_cap) = ray_extent(&snap, &anchor, &d, scale, cap);
            bounded &= !hit_cap;
            let p = &anchor + &d * r;
            for i in 0..n {
                lower[i] = lower[i].min(p[i]);
                upper[i] = upper[i].max(p[i]);
            }
        }
        for i in 0..n {
            let pad = 0.02 * (upper[i] - lower[i]).max(1e-9 * scale);
            lower[i] -= pad;
            upper[i] += pad;
        }
        Ok(SliceBounds {
            anchor,
            lower,
            upper,
            bounded,
        })
    }
}

/// Output of [`ParaboloidFamily::slice_bounds`].
#[derive(Clone, Debug, PartialEq)]
pub struct SliceBounds {
    pub anchor: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub bounded: bool,
}

/// Largest half-width of the seed's `x` projection, or `1` if unbounded.
fn seed_extent(p0: &Paraboloid) -> f64 {
    match seed_geometry(p0) {
        Ok(geo) if geo.rho > 0.0 => {
            let inv = &geo.inv_sqrt * &geo.inv_sqrt;
            (0..p0.dim())
                .map(|i| (geo.rho * inv[(i, i)]).sqrt())
                .fold(0.0, f64::max)
        }
        _ => 1.0,
    }
}

/// Distance from `anchor` along `d` to the last point with `xq_max ≥ 0`.
fn ray_extent(
    snap: &FamilySnapshot,
    anchor: &DVector<f64>,
    d: &DVector<f64>,
    scale: f64,
    cap: f64,
) -> (f64, bool) {
    let inside = |r: f64| snap.xq_max(&(anchor + d * r)).0 >= 0.0;
    let mut lo = 0.0;
    let mut hi = 1e-3 * scale;
    while inside(hi) {
        lo = hi;
        hi *= 2.0;
        if hi > cap {
            return (cap, true);
        }
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if inside(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * hi {
            break;
        }
    }
    (lo, false)
}

/// Regular grid of cells over a box; points are cell centres.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub cells: Vec<usize>,
}

impl GridSpec {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>, cells: Vec<usize>) -> Result<Self> {
        let n = lower.len();
        if upper.len() != n || cells.len() != n {
            return Err(Error::DimensionMismatch("grid bounds and cell counts differ".into()));
        }
        if (0..n).any(|i| !(upper[i] > lower[i]) || cells[i] == 0) {
            return Err(Error::InvalidConfig(
                "grid needs upper > lower and at least one cell per axis".into(),
            ));
        }
        Ok(Self { lower, upper, cells })
    }

    /// Same number of cells on every axis.
    pub fn uniform(lower: DVector<f64>, upper: DVector<f64>, per_axis: usize) -> Result<Self> {
        let n = lower.len();
        Self::new(lower, upper, vec![per_axis; n])
    }

    pub fn dim(&self) -> usize {
        self.cells.len()
    }

    pub fn len(&self) -> usize {
        self.cells.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width(&self, axis: usize) -> f64 {
        (self.upper[axis] - self.lower[axis]) / self.cells[axis] as f64
    }

    /// Multi-index of flat cell `k`; the last axis varies fastest.
    fn unflatten(&self, mut k: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for i in (0..self.dim()).rev() {
            idx[i] = k % self.cells[i];
            k /= self.cells[i];
        }
        idx
    }

    pub fn center(&self, k: usize) -> DVector<f64> {
        let idx = self.unflatten(k);
        DVector::from_fn(self.dim(), |i, _| {
            self.lower[i] + (idx[i] as f64 + 0.5) * self.width(i)
        })
    }

    pub fn centers(&self) -> Vec<DVector<f64>> {
        (0..self.len()).map(|k| self.center(k)).collect()
    }

    /// Flat index of the cell containing `x`, if inside the box.
    pub fn cell_of(&self, x: &DVector<f64>) -> Option<usize> {
        let mut k = 0;
        for i in 0..self.dim() {
            let s = (x[i] - self.lower[i]) / self.width(i);
            if !(s >= 0.0) || s >= self.cells[i] as f64 {
                return None;
            }
            k = k * self.cells[i] + s as usize;
        }
        Some(k)
    }

    /// Cells whose box, dilated by `tol` cell widths, contains `x`.
    pub fn cells_near(&self, x: &DVector<f64>, tol: f64) -> Vec<usize> {
        let n = self.dim();
        let mut ranges = Vec::with_capacity(n);
        for i in 0..n {
            let s = (x[i] - self.lower[i]) / self.width(i);
            let lo = (s - tol).floor().max(0.0);
            let hi = ((s + tol).ceil() - 1.0).max((s - tol).floor()).min(self.cells[i] as f64 - 1.0);
            if hi < lo || !s.is_finite() {
                return Vec::new();
            }
            ranges.push((lo as usize, hi as usize));
        }
        let mut out = vec![0usize];
        for (i, &(lo, hi)) in ranges.iter().enumerate() {
            out = out
                .iter()
                .flat_map(|&base| (lo..=hi).map(move |j| base * self.cells[i] + j))
                .collect();
        }
        out
    }
}

/// Upper bound of the admissible energy over a set of points at one time.
#[derive(Clone, Debug, PartialEq)]
pub struct ReachSlice {
    pub t: f64,
    pub points: Vec<DVector<f64>>,
    /// Minimum over the defined members of the largest admissible `x_q`.
    pub xq_max: Vec<f64>,
    /// Index of the active member at each point.
    pub argmin: Vec<usize>,
    pub gammas: Vec<f64>,
}

impl ReachSlice {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `x` is in the projected set iff `xq_max(x) ≥ 0`.
    pub fn contains(&self, k: usize) -> bool {
        self.xq_max[k] >= 0.0
    }

    pub fn argmin_gamma(&self, k: usize) -> f64 {
        self.gammas[self.argmin[k]]
    }

    pub fn csv_header(&self) -> Vec<String> {
        let n = self.points.first().map_or(0, |p| p.len());
        let mut h: Vec<String> = (0..n).map(|i| format!("x_{i}")).collect();
        h.push("xq_max".into());
        h.push("argmin_gamma".into());
        h
    }

    fn row(&self, k: usize) -> Vec<f64> {
        let mut row: Vec<f64> = self.points[k].iter().copied().collect();
        row.push(self.xq_max[k]);
        row.push(self.argmin_gamma(k));
        row
    }

    /// Columns `x…, xq_max, argmin_gamma`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.csv_header())?;
        for k in 0..self.len() {
            w.write_record(self.row(k).iter().map(|v| format!("{v:e}")))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Parses a file written by [`write_csv`](Self::write_csv). Member
    /// indices are rebuilt from the distinct gamma values.
    pub fn read_csv<R: std::io::Read>(t: f64, input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let headers = r.headers()?.clone();
        let ncols = headers.len();
        if ncols < 3
            || &headers[ncols - 2] != "xq_max"
            || &headers[ncols - 1] != "argmin_gamma"
        {
            return Err(Error::InvalidConfig(
                "slice file needs columns x_0.., xq_max, argmin_gamma".into(),
            ));
        }
        let n = ncols - 2;
        let mut points = Vec::new();
        let mut xq_max = Vec::new();
        let mut gam = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let vals = rec
                .iter()
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::InvalidConfig(format!("bad number {s:?}: {e}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            if vals.len() != ncols {
                return Err(Error::DimensionMismatch("ragged slice row".into()));
            }
            points.push(DVector::from_column_slice(&vals[..n]));
            xq_max.push(vals[n]);
            gam.push(vals[n + 1]);
        }
        let mut gammas = gam.clone();
        gammas.sort_by(f64::total_cmp);
        gammas.dedup();
        let argmin = gam
            .iter()
            .map(|g| gammas.partition_point(|v| v < g))
            .collect();
        Ok(Self {
            t,
            points,
            xq_max,
            argmin,
            gammas,
        })
    }
}

/// Stacked slices, one row per `(t, x)`: columns `t, x…, xq_max, argmin_gamma`.
pub fn write_tube_csv<W: Write>(slices: &[ReachSlice], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if let Some(first) = slices.first() {
        let mut header = vec!["t".to_string()];
        header.extend(first.csv_header());
        w.write_record(header)?;
    }
    for s in slices {
        for k in 0..s.len() {
            let mut row = vec![s.t];
            row.extend(s.row(k));
            w.write_record(row.iter().map(|v| format!("{v:e}")))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Settings for [`check_assumptions`].
#[derive(Clone, Debug, PartialEq)]
pub struct AssumptionConfig {
    /// Times at which boundary states are drawn; defaults to five even times in `(0, T]`.
    pub sample_times: Option<Vec<f64>>,
    pub states_per_time: usize,
    /// Required decrease rate in the slab: `ẋ_q < −margin`.
    pub margin: f64,
    pub touch: TouchConfig,
    pub seed: u64,
}

impl Default for AssumptionConfig {
    fn default() -> Self {
        Self {
            sample_times: None,
            states_per_time: 16,
            margin: 0.0,
            touch: TouchConfig::default(),
            seed: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Assumption2Violation {
    pub gamma: f64,
    pub t: f64,
    pub xq: f64,
    pub xq_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceFailure {
    pub gamma: f64,
    pub start_time: f64,
    pub error: String,
}

/// Diagnostics for the bounded-growth and decreasing-energy conditions.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub k_bound: f64,
    pub escape_norm: f64,
    /// Gammas of members that escaped before the horizon.
    pub escaped_members: Vec<f64>,
    pub bounded_growth_ok: bool,
    pub traced: usize,
    pub samples_checked: usize,
    pub violations: Vec<Assumption2Violation>,
    pub trace_failures: Vec<TraceFailure>,
    pub decreasing_energy_ok: bool,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.bounded_growth_ok && self.decreasing_energy_ok
    }
}

/// Samples of `traj` with `x_q ∈ [−eps_q, −touch_tol)` whose energy rate is
/// not below `−margin`.
pub fn assumption2_violations(
    traj: &AugmentedTrajectory,
    gamma: f64,
    eps_q: f64,
    margin: f64,
    touch_tol: f64,
) -> Vec<Assumption2Violation> {
    (0..traj.len())
        .filter(|&k| {
            let xq = traj.xq[k];
            xq >= -eps_q && xq < -touch_tol && traj.xq_rate[k] >= -margin
        })
        .map(|k| Assumption2Violation {
            gamma,
            t: traj.times[k],
            xq: traj.xq[k],
            xq_rate: traj.xq_rate[k],
        })
        .collect()
}

/// Runs both diagnostics. Boundary states of the intersection are drawn at
/// the sample times and traced through their active member over `[0, T]`.
pub fn check_assumptions(
    family: &ParaboloidFamily,
    sys: &IqcSystem,
    cfg: &AssumptionConfig,
) -> Result<AssumptionReport> {
    let horizon = family.horizon();
    let escaped_members: Vec<f64> = family
        .members()
        .iter()
        .filter(|m| !m.is_complete())
        .map(|m| m.gamma())
        .collect();
    let bounded_growth_ok = escaped_members.is_empty() && family.k_bound() <= family.escape_norm();

    let times = cfg
        .sample_times
        .clone()
        .unwrap_or_else(|| (1..=5).map(|k| horizon * k as f64 / 5.0).collect());

    let mut starts: Vec<(usize, f64, AugmentedState)> = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let unit = Uniform::new(0.0, 1.0).expect("valid range");
    for &t in &times {
        if t > family.end() || t < 0.0 {
            continue;
        }
        let snap = family.snapshot(t)?;
        let bounds = family.slice_bounds(t, cfg.states_per_time.max(8))?;
        let dirs = sphere_directions(family.seed().dim(), cfg.states_per_time.max(2), cfg.seed ^ t.to_bits());
        let scale = seed_extent(family.seed()).max(1e-6);
        for (j, d) in dirs.iter().enumerate() {
            let (r, _) = ray_extent(&snap, &bounds.anchor, d, scale, 1e3 * scale);
            // Alternate rim states with states on the upper surface.
            let s = if j % 2 == 0 { 1.0 } else { unit.sample(&mut rng) };
            let x = &bounds.anchor + d * (r * s);
            let (xq, k) = snap.xq_max(&x);
            if xq < 0.0 {
                continue;
            }
            starts.push((k, t, AugmentedState { x, xq }));
        }
    }

    let eps_q = family.eps_q();
    let results: Vec<(f64, f64, Result<AugmentedTrajectory>, Result<AugmentedTrajectory>)> = starts
        .par_iter()
        .map(|(k, t, x0)| {
            let member = &family.members()[*k];
            let back = trace_touching(member, *t, x0, 0.0, sys, &cfg.touch);
            let fwd = trace_touching(member, *t, x0, member.end(), sys, &cfg.touch);
            (member.gamma(), *t, back, fwd)
        })
        .collect();

    let mut violations = Vec::new();
    let mut trace_failures = Vec::new();
    let mut samples_checked = 0;
    let mut traced = 0;
    for (gamma, t, back, fwd) in results {
        let mut ok = true;
        for part in [back, fwd] {
            match part {
                Ok(traj) => {
                    samples_checked += traj.len();
                    violations.extend(assumption2_violations(
                        &traj,
                        gamma,
                        eps_q,
                        cfg.margin,
                        cfg.touch.touch_tol,
                    ));
                }
                Err(e) => {
                    ok = false;
                    trace_failures.push(TraceFailure {
                        gamma,
                        start_time: t,
                        error: e.to_string(),
                    });
                }
            }
        }
        if ok {
            traced += 1;
        }
    }
    let decreasing_energy_ok = violations.is_empty() && traced > 0;
    Ok(AssumptionReport {
        k_bound: family.k_bound(),
        escape_norm: family.escape_norm(),
        escaped_members,
        bounded_growth_ok,
        traced,
        samples_checked,
        violations,
        trace_failures,
        decreasing_energy_ok,
    })
}

#[derive(Serialize)]
struct MemberEntry {
    gamma: f64,
    escape_time: Option<f64>,
    end: f64,
    max_e_norm: f64,
}

#[derive(Serialize)]
struct FamilyManifest<'a> {
    gammas: &'a [f64],
    gamma_bar: f64,
    eps_q: f64,
    horizon: f64,
    k_bound: f64,
    escape_times: Vec<Option<f64>>,
    members: Vec<MemberEntry>,
    assumptions: Option<&'a AssumptionReport>,
}

impl ParaboloidFamily {
    /// JSON manifest: gammas, escape times, `k_bound` and the optional assumption report.
    pub fn manifest_json(&self, report: Option<&AssumptionReport>) -> Result<String> {
        let m = FamilyManifest {
            gammas: &self.gammas,
            gamma_bar: self.gamma_bar,
            eps_q: self.eps_q,
            horizon: self.horizon,
            k_bound: self.k_bound,
            escape_times: self.members.iter().map(|m| m.escape_time()).collect(),
            members: self
                .members
                .iter()
                .map(|m| MemberEntry {
                    gamma: m.gamma(),
                    escape_time: m.escape_time(),
                    end: m.end(),
                    max_e_norm: m.max_e_norm(),
                })
                .collect(),
            assumptions: report,
        };
        Ok(serde_json::to_string_pretty(&m)?)
    }
}
