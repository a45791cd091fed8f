//! Extension of maps from the boundary of the effective cell (d = 2 or 3) to its
//! interior, by coning along sup-norm rays from the centre `(1/4, 0, 0)`.
//!
//! A unitary boundary map is split into its determinant, extended through a continuous
//! phase lift, and a special-unitary part, extended through stereographic projection
//! of its first column away from a point the boundary values avoid.

use std::f64::consts::{PI, TAU};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CellGeometry, PointMap, Pt};
use crate::linalg::{self, cis, hs, CMat, C64};

pub const BOUNDARY_MATCH_TOL: f64 = 1e-6;
pub const UNITARITY_TOL: f64 = 1e-10;
const SEAM_TOL: f64 = 1e-6;
const SNAP_LIMIT: f64 = 0.25;
const PREFERRED_CLEARANCE: f64 = 0.1;
const MIN_CLEARANCE: f64 = 1e-3;
const POLE_CANDIDATES: usize = 64;
const RAY_STEPS: usize = 128;

// ---------------------------------------------------------------- degree

/// Winding number of a closed loop of phases (the last point connects to the first).
pub fn winding_of_phases(phases: &[C64]) -> Result<i64> {
    let len = phases.len();
    let mut total = 0.0;
    for i in 0..len {
        let inc = (phases[(i + 1) % len] / phases[i]).arg();
        if inc.abs() >= PI / 2.0 {
            return Err(Error::GridTooCoarse { segment: i, increment: inc });
        }
        total += inc;
    }
    Ok((total / TAU).round() as i64)
}

/// Degree of `det` along a closed loop of unitaries.
pub fn winding_degree(values: &[CMat]) -> Result<i64> {
    let dets: Vec<C64> = values.iter().map(|u| linalg::det(u)).collect();
    winding_of_phases(&dets)
}

// ---------------------------------------------------------------- cone

/// Sup-norm ray data for a point of the effective cell: `rho` is 0 at the centre and 1 on
/// the boundary; `points` interpolates the ray's boundary end from boundary grid points.
#[derive(Clone, Debug, PartialEq)]
pub struct Stencil {
    pub rho: f64,
    pub points: Vec<(Pt, f64)>,
}

pub fn cone_stencil(geom: &CellGeometry, p: Pt) -> Stencil {
    let n = geom.half();
    let d = geom.d;
    // distances to the centre over a common denominator n
    let mut a = [0i64; 3];
    a[0] = (2 * p[0] - n).abs();
    for j in 1..d {
        a[j] = p[j].abs();
    }
    let amax = *a[..d].iter().max().expect("d >= 1");
    if amax == 0 {
        return Stencil { rho: 0.0, points: Vec::new() };
    }
    let rho = amax as f64 / n as f64;
    // end point b_j = num_j / den_j, split into floor and fraction exactly
    let mut axes: Vec<(i64, i64, f64)> = Vec::with_capacity(d);
    for j in 0..d {
        let (num, den) = if j == 0 { (n * amax + (2 * p[0] - n) * n, 2 * amax) } else { (p[j] * n, amax) };
        let fl = num.div_euclid(den);
        let rem = num.rem_euclid(den);
        let frac = rem as f64 / den as f64;
        axes.push((fl, if rem == 0 { fl } else { fl + 1 }, frac));
    }
    let mut points: Vec<(Pt, f64)> = vec![([0; 3], 1.0)];
    for (j, &(fl, ce, frac)) in axes.iter().enumerate() {
        let mut next = Vec::with_capacity(points.len() * 2);
        for (q, w) in points {
            let mut lo = q;
            lo[j] = fl;
            if ce == fl {
                next.push((lo, w));
            } else {
                let mut hi = q;
                hi[j] = ce;
                next.push((lo, w * (1.0 - frac)));
                next.push((hi, w * frac));
            }
        }
        points = next;
    }
    Stencil { rho, points }
}

// ---------------------------------------------------------------- phase lifts

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct LiftReport {
    /// Unsnapped quadrature closure `|θ(end) - θ(start)|` around the loop (2D only).
    pub raw_closure: f64,
    /// Largest distance between the quadrature lift and the snapped lift.
    pub max_snap_deviation: f64,
    /// Largest seam disagreement of the snapped lift (3D only).
    pub seam_defect: f64,
}

fn snap(raw: f64, z: C64, segment: usize) -> Result<f64> {
    let base = z.arg() / TAU;
    let lifted = base + (raw - base).round();
    if (raw - lifted).abs() > SNAP_LIMIT {
        return Err(Error::GridTooCoarse { segment, increment: TAU * (raw - lifted) });
    }
    Ok(lifted)
}

/// Shift a lift by the integer that minimises `max |θ|`, so the cone `ρθ` stays flat.
fn centre_lift(mut theta: PointMap<f64>) -> PointMap<f64> {
    let pts = theta.points();
    let (lo, hi) = pts.iter().map(|&p| *theta.get(p).expect("lift")).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    let shift = ((lo + hi) / 2.0).round();
    if shift != 0.0 {
        for p in pts {
            let v = theta.get(p).expect("lift") - shift;
            theta.set(p, v);
        }
    }
    theta
}

/// Continuous `θ` with `e^{i2πθ} = f` on the loop of a 2D cell, starting at `(0, -1/2)`
/// with the principal value and integrating the logarithmic derivative by the trapezoid
/// rule on centred differences.
pub fn lift_loop(geom: &CellGeometry, f: &PointMap<C64>) -> Result<(PointMap<f64>, LiftReport)> {
    let n = geom.half() as usize;
    let mut pts = geom.loop_2d();
    pts.rotate_left(n);
    let phis: Vec<C64> = pts
        .iter()
        .map(|&p| {
            let z = *f.get(p).unwrap_or_else(|| panic!("boundary value missing at {p:?}"));
            z / z.norm()
        })
        .collect();
    let degree = winding_of_phases(&phis)?;
    if degree != 0 {
        return Err(Error::NonzeroDegree { degree });
    }
    let len = phis.len();
    let deriv: Vec<f64> = (0..len).map(|i| (phis[(i + 1) % len] / phis[(i + len - 1) % len]).arg() / 2.0).collect();
    let (lo, hi) = geom.cell_bounds();
    let mut theta = PointMap::new(lo, hi);
    let mut raw = phis[0].arg() / TAU;
    let mut report = LiftReport::default();
    let start = raw;
    for i in 0..len {
        let t = snap(raw, phis[i], i)?;
        report.max_snap_deviation = report.max_snap_deviation.max((raw - t).abs());
        theta.set(pts[i], t);
        raw += (deriv[i] + deriv[(i + 1) % len]) / 2.0 / TAU;
    }
    report.raw_closure = (raw - start).abs();
    let closed = snap(raw, phis[0], len)?;
    let closure = (closed - *theta.get(pts[0]).expect("start")).abs();
    if closure > BOUNDARY_MATCH_TOL {
        return Err(Error::ExtensionCheck { what: "phase lift closure".into(), value: closure });
    }
    Ok((centre_lift(theta), report))
}

/// Chart of the 3D cell boundary by the planar region `[-1, 1]×[-1/2, 1/2] ∪
/// [-1/2, 1/2]×[1/2, 5/2]` (grid units), unfolding the faces around `k_1 = 0`.
pub fn chart_point(n: i64, s: i64, t: i64) -> Option<Pt> {
    if (-n..=n).contains(&t) {
        if (-2 * n..=-n).contains(&s) {
            return Some([-s - n, -n, t]);
        }
        if (-n..=n).contains(&s) {
            return Some([0, s, t]);
        }
        if (n..=2 * n).contains(&s) {
            return Some([s - n, n, t]);
        }
        return None;
    }
    if !(-n..=n).contains(&s) {
        return None;
    }
    if (n..=2 * n).contains(&t) {
        Some([t - n, s, n])
    } else if (2 * n..=4 * n).contains(&t) {
        Some([n, s, 3 * n - t])
    } else if (4 * n..=5 * n).contains(&t) {
        Some([5 * n - t, s, -n])
    } else {
        None
    }
}

/// The seam identities of the chart: pairs of chart points that map to the same
/// boundary point although they are not adjacent in the chart.
pub fn chart_seams(n: i64) -> Vec<(&'static str, Vec<([i64; 2], [i64; 2])>)> {
    vec![
        ("theta(s,-1/2) = theta(s,5/2), |s| <= 1/2", (-n..=n).map(|s| ([s, -n], [s, 5 * n])).collect()),
        ("theta(s,-1/2) = theta(-1/2,3+s), s in [-1,-1/2]", (-2 * n..=-n).map(|s| ([s, -n], [-n, 6 * n + s])).collect()),
        ("theta(s,-1/2) = theta(1/2,3-s), s in [1/2,1]", (n..=2 * n).map(|s| ([s, -n], [n, 6 * n - s])).collect()),
        ("theta(s,1/2) = theta(-1/2,-s), s in [-1,-1/2]", (-2 * n..=-n).map(|s| ([s, n], [-n, -s])).collect()),
        ("theta(s,1/2) = theta(1/2,s), s in [1/2,1]", (n..=2 * n).map(|s| ([s, n], [n, s])).collect()),
        ("theta(-1,t) = theta(-1/2,3/2-t), |t| <= 1/2", (-n..=n).map(|t| ([-2 * n, t], [-n, 3 * n - t])).collect()),
        ("theta(1,t) = theta(1/2,3/2-t), |t| <= 1/2", (-n..=n).map(|t| ([2 * n, t], [n, 3 * n - t])).collect()),
    ]
}

struct ChartGrid {
    n: i64,
    width: usize,
    data: Vec<Option<C64>>,
}

impl ChartGrid {
    fn index(&self, s: i64, t: i64) -> usize {
        ((t + self.n) as usize) * self.width + (s + 2 * self.n) as usize
    }

    fn get(&self, s: i64, t: i64) -> Option<C64> {
        if s < -2 * self.n || s > 2 * self.n || t < -self.n || t > 5 * self.n {
            return None;
        }
        self.data[self.index(s, t)]
    }
}

/// Continuous `θ` with `e^{i2πθ} = f` on the boundary of a 3D cell: integrate the
/// logarithmic derivative along straight rays of the chart from its origin, using
/// `4·grid_n` trapezoid steps and bilinear interpolation of centred differences.
pub fn lift_sphere(geom: &CellGeometry, f: &PointMap<C64>) -> Result<(PointMap<f64>, LiftReport)> {
    let n = geom.half();
    let width = (4 * n + 1) as usize;
    let height = (6 * n + 1) as usize;
    let mut grid = ChartGrid { n, width, data: vec![None; width * height] };
    let mut chart_pts = Vec::new();
    for t in -n..=5 * n {
        for s in -2 * n..=2 * n {
            if let Some(k) = chart_point(n, s, t) {
                let z = *f.get(k).unwrap_or_else(|| panic!("boundary value missing at {k:?}"));
                let i = grid.index(s, t);
                grid.data[i] = Some(z / z.norm());
                chart_pts.push([s, t]);
            }
        }
    }
    // d arg φ per grid step along s and t
    let diff = |s: i64, t: i64, ds: i64, dt: i64| -> f64 {
        let c = grid.get(s, t).expect("chart point");
        match (grid.get(s + ds, t + dt), grid.get(s - ds, t - dt)) {
            (Some(a), Some(b)) => (a / b).arg() / 2.0,
            (Some(a), None) => (a / c).arg(),
            (None, Some(b)) => (c / b).arg(),
            (None, None) => 0.0,
        }
    };
    let mut ds = vec![0.0; width * height];
    let mut dt = vec![0.0; width * height];
    for &[s, t] in &chart_pts {
        let i = grid.index(s, t);
        ds[i] = diff(s, t, 1, 0);
        dt[i] = diff(s, t, 0, 1);
    }
    let bilinear = |field: &[f64], x: f64, y: f64| -> f64 {
        let (x0, y0) = (x.floor() as i64, y.floor() as i64);
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let mut acc = 0.0;
        let mut wsum = 0.0;
        for (sx, wx) in [(x0, 1.0 - fx), (x0 + 1, fx)] {
            for (sy, wy) in [(y0, 1.0 - fy), (y0 + 1, fy)] {
                let w = wx * wy;
                if w == 0.0 {
                    continue;
                }
                if grid.get(sx, sy).is_some() {
                    acc += w * field[grid.index(sx, sy)];
                    wsum += w;
                }
            }
        }
        if wsum > 0.0 {
            acc / wsum
        } else {
            0.0
        }
    };
    let origin = grid.get(0, 0).expect("chart origin");
    let theta0 = origin.arg() / TAU;
    let steps = 4 * n as usize;
    let lifted: Vec<Result<(f64, f64)>> = chart_pts
        .par_iter()
        .enumerate()
        .map(|(idx, &[s, t])| {
            let (sf, tf) = (s as f64, t as f64);
            let g = |lam: f64| (sf * bilinear(&ds, lam * sf, lam * tf) + tf * bilinear(&dt, lam * sf, lam * tf)) / TAU;
            let mut raw = theta0;
            if s != 0 || t != 0 {
                let h = 1.0 / steps as f64;
                let mut prev = g(0.0);
                for i in 1..=steps {
                    let cur = g(i as f64 * h);
                    raw += 0.5 * h * (prev + cur);
                    prev = cur;
                }
            }
            let z = grid.get(s, t).expect("chart point");
            let th = snap(raw, z, idx)?;
            Ok((th, (raw - th).abs()))
        })
        .collect();
    let mut theta_chart = vec![f64::NAN; width * height];
    let mut report = LiftReport::default();
    for (&[s, t], r) in chart_pts.iter().zip(lifted) {
        let (th, dev) = r?;
        theta_chart[grid.index(s, t)] = th;
        report.max_snap_deviation = report.max_snap_deviation.max(dev);
    }
    for (identity, pairs) in chart_seams(n) {
        let defect = pairs
            .iter()
            .map(|(a, b)| (theta_chart[grid.index(a[0], a[1])] - theta_chart[grid.index(b[0], b[1])]).abs())
            .fold(0.0, f64::max);
        report.seam_defect = report.seam_defect.max(defect);
        if defect > SEAM_TOL {
            return Err(Error::ChartSeamMismatch { identity: identity.to_string(), defect });
        }
    }
    let (lo, hi) = geom.cell_bounds();
    let mut theta = PointMap::new(lo, hi);
    for &[s, t] in &chart_pts {
        let k = chart_point(n, s, t).expect("chart point");
        theta.set(k, theta_chart[grid.index(s, t)]);
    }
    Ok((centre_lift(theta), report))
}

/// Phase field on the cell extending a degree-zero boundary phase map.
pub fn extend_phase(geom: &CellGeometry, f: &PointMap<C64>) -> Result<(PointMap<C64>, LiftReport)> {
    let (theta, report) = match geom.d {
        2 => lift_loop(geom, f)?,
        3 => lift_sphere(geom, f)?,
        d => return Err(Error::Unsupported(format!("phase extension in dimension {d}"))),
    };
    let pts = geom.cell_points();
    let vals: Vec<C64> = pts
        .par_iter()
        .map(|&p| {
            let st = cone_stencil(geom, p);
            let th: f64 = st.points.iter().map(|&(q, w)| w * theta.get(q).expect("lifted boundary")).sum();
            cis(TAU * st.rho * th)
        })
        .collect();
    let (lo, hi) = geom.cell_bounds();
    let mut out = PointMap::new(lo, hi);
    for (p, v) in pts.into_iter().zip(vals) {
        out.set(p, v);
    }
    Ok((out, report))
}

// ---------------------------------------------------------------- spheres

/// Stereographic projection from `p` onto the hyperplane orthogonal to `p`.
pub fn stereo(p: &[f64], v: &[f64]) -> Vec<f64> {
    let dot: f64 = v.iter().zip(p).map(|(a, b)| (a - b) * b).sum();
    p.iter().zip(v).map(|(pi, vi)| pi - (vi - pi) / dot).collect()
}

pub fn stereo_inv(p: &[f64], w: &[f64]) -> Vec<f64> {
    let n2: f64 = w.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum();
    p.iter().zip(w).map(|(pi, wi)| pi + 2.0 * (wi - pi) / n2).collect()
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
}

fn chord(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn clearance(p: &[f64], samples: &[Vec<f64>]) -> f64 {
    samples.iter().map(|s| chord(p, s)).fold(f64::INFINITY, f64::min)
}

/// Intrinsic mean on the sphere by fixed-point iteration from the normalised average.
fn karcher_mean(samples: &[Vec<f64>]) -> Option<Vec<f64>> {
    let dim = samples[0].len();
    let mut q = vec![0.0; dim];
    for s in samples {
        q.iter_mut().zip(s).for_each(|(a, b)| *a += b);
    }
    if q.iter().map(|x| x * x).sum::<f64>().sqrt() < 1e-12 {
        return None;
    }
    normalize(&mut q);
    for _ in 0..50 {
        let mut step = vec![0.0; dim];
        for s in samples {
            let c: f64 = s.iter().zip(&q).map(|(a, b)| a * b).sum::<f64>().clamp(-1.0, 1.0);
            let ang = c.acos();
            if ang < 1e-15 {
                continue;
            }
            let scale = ang / ang.sin();
            for j in 0..dim {
                step[j] += scale * (s[j] - c * q[j]);
            }
        }
        step.iter_mut().for_each(|x| *x /= samples.len() as f64);
        let len = step.iter().map(|x| x * x).sum::<f64>().sqrt();
        if len < 1e-14 {
            break;
        }
        for j in 0..dim {
            q[j] = len.cos() * q[j] + len.sin() * step[j] / len;
        }
        normalize(&mut q);
    }
    Some(q)
}

/// A point of the sphere away from every sample: the antipode of the samples' mean
/// if it clears them by 0.1, else the best of 64 seeded random candidates.
pub fn choose_pole(samples: &[Vec<f64>], seed: u64) -> Result<(Vec<f64>, f64)> {
    let mut best: Option<(Vec<f64>, f64)> = None;
    if let Some(q) = karcher_mean(samples) {
        let p: Vec<f64> = q.iter().map(|x| -x).collect();
        let c = clearance(&p, samples);
        if c >= PREFERRED_CLEARANCE {
            return Ok((p, c));
        }
        best = Some((p, c));
    }
    let dim = samples[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..POLE_CANDIDATES {
        let mut p: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        normalize(&mut p);
        let c = clearance(&p, samples);
        if best.as_ref().is_none_or(|b| c > b.1) {
            best = Some((p, c));
        }
    }
    let (p, c) = best.expect("candidates drawn");
    if c < MIN_CLEARANCE {
        return Err(Error::NoStereographicPoint { clearance: c });
    }
    Ok((p, c))
}

pub struct SphereExtension {
    pub values: PointMap<Vec<f64>>,
    /// Stereographic coordinates of the values; the ray from the centre to a point is
    /// `s ↦ stereo_inv(pole, s·plane)` for `s ∈ [0, 1]`.
    pub plane: PointMap<Vec<f64>>,
    pub pole: Vec<f64>,
    pub clearance: f64,
}

/// Sphere-valued field on the cell extending unit vectors given on the boundary.
pub fn extend_sphere(geom: &CellGeometry, f: &PointMap<Vec<f64>>, seed: u64) -> Result<SphereExtension> {
    let boundary = f.points();
    let samples: Vec<Vec<f64>> = boundary.iter().map(|&p| f.get(p).expect("boundary").clone()).collect();
    let (pole, clearance) = choose_pole(&samples, seed)?;
    let (lo, hi) = geom.cell_bounds();
    let mut projected = PointMap::new(lo, hi);
    for (&b, v) in boundary.iter().zip(&samples) {
        projected.set(b, stereo(&pole, v));
    }
    let pts = geom.cell_points();
    let dim = pole.len();
    let planes: Vec<Vec<f64>> = pts
        .par_iter()
        .map(|&p| {
            let st = cone_stencil(geom, p);
            let mut w = vec![0.0; dim];
            for &(q, wt) in &st.points {
                let v = projected.get(q).expect("boundary value");
                w.iter_mut().zip(v).for_each(|(a, b)| *a += st.rho * wt * b);
            }
            w
        })
        .collect();
    let mut values = PointMap::new(lo, hi);
    let mut plane = PointMap::new(lo, hi);
    for (p, w) in pts.into_iter().zip(planes) {
        values.set(p, stereo_inv(&pole, &w));
        plane.set(p, w);
    }
    Ok(SphereExtension { values, plane, pole, clearance })
}

// ---------------------------------------------------------------- unitaries

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct ExtensionReport {
    pub boundary_mismatch: f64,
    pub unitarity_defect: f64,
    pub lift: LiftReport,
    /// Smallest stereographic clearance used at any level of the reduction.
    pub clearance: Option<f64>,
}

fn column_to_real(v: &CMat, col: usize) -> Vec<f64> {
    (0..v.nrows()).flat_map(|i| [v[(i, col)].re, v[(i, col)].im]).collect()
}

fn real_to_column(x: &[f64]) -> CMat {
    CMat::from_fn(x.len() / 2, 1, |i, _| C64::new(x[2 * i], x[2 * i + 1]))
}

/// `W = diag(det W, 1, …) W♭`.
fn with_det(det: C64, flat: &CMat) -> CMat {
    let mut out = flat.clone();
    for j in 0..out.ncols() {
        out[(0, j)] *= det;
    }
    out
}

/// Unitary field on the cell whose boundary values match `f` (m×m unitaries on the
/// boundary grid points of the 2D or 3D cell). Fails on a nonzero determinant degree
/// in 2D or when the validation of the result fails.
pub fn extend_unitary(geom: &CellGeometry, f: &PointMap<CMat>, m: usize, seed: u64) -> Result<(PointMap<CMat>, ExtensionReport)> {
    let (out, mut report) = extend_unitary_raw(geom, f, m, seed)?;
    let pts = geom.cell_points();
    let (mismatch, unitarity) = pts
        .par_iter()
        .map(|&p| {
            let u = out.get(p).expect("extension value");
            let mm = f.get(p).map_or(0.0, |b| hs(&(u - b)));
            (mm, linalg::gram_defect(u))
        })
        .reduce(|| (0.0, 0.0), |a, b| (a.0.max(b.0), a.1.max(b.1)));
    report.boundary_mismatch = mismatch;
    report.unitarity_defect = unitarity;
    if mismatch > BOUNDARY_MATCH_TOL {
        return Err(Error::ExtensionCheck { what: "boundary mismatch".into(), value: mismatch });
    }
    if unitarity > UNITARITY_TOL {
        return Err(Error::ExtensionCheck { what: "interior unitarity".into(), value: unitarity });
    }
    Ok((out, report))
}

fn extend_unitary_raw(geom: &CellGeometry, f: &PointMap<CMat>, m: usize, seed: u64) -> Result<(PointMap<CMat>, ExtensionReport)> {
    let (lo, hi) = geom.cell_bounds();
    let boundary = f.points();
    let mut dets = PointMap::new(lo, hi);
    for &b in &boundary {
        dets.set(b, linalg::det(f.get(b).expect("boundary")));
    }
    let (det_ext, lift) = extend_phase(geom, &dets)?;
    let mut report = ExtensionReport { lift, ..Default::default() };
    let pts = geom.cell_points();
    let mut out = PointMap::new(lo, hi);
    if m == 1 {
        for &p in &pts {
            out.set(p, CMat::from_element(1, 1, *det_ext.get(p).expect("phase")));
        }
        return Ok((out, report));
    }
    // special unitary part
    let mut flat = PointMap::new(lo, hi);
    for &b in &boundary {
        let u = f.get(b).expect("boundary");
        let det = *dets.get(b).expect("det");
        flat.set(b, with_det(det.inv(), u));
    }
    let mut first = PointMap::new(lo, hi);
    for &b in &boundary {
        first.set(b, column_to_real(flat.get(b).expect("flat"), 0));
    }
    let sphere = extend_sphere(geom, &first, seed)?;
    let clear = sphere.clearance;
    report.clearance = Some(clear);
    let flat_ext: PointMap<CMat> = if m == 2 {
        let mut fe = PointMap::new(lo, hi);
        for &p in &pts {
            let v = sphere.values.get(p).expect("sphere");
            let a = C64::new(v[0], v[1]);
            let b = C64::new(v[2], v[3]);
            fe.set(p, CMat::from_row_slice(2, 2, &[a, -b.conj(), b, a.conj()]));
        }
        fe
    } else {
        let frames = complement_frames(geom, &sphere, m);
        let mut minor = PointMap::new(lo, hi);
        for &b in &boundary {
            let g = frames.get(b).expect("frame");
            let r = g.adjoint() * flat.get(b).expect("flat");
            minor.set(b, linalg::lowdin(&r.view((1, 1), (m - 1, m - 1)).into_owned()));
        }
        let (sub, sub_report) = extend_unitary_raw(geom, &minor, m - 1, seed.wrapping_add(1))?;
        report.clearance = match sub_report.clearance {
            Some(c) => Some(c.min(clear)),
            None => Some(clear),
        };
        let mut fe = PointMap::new(lo, hi);
        for &p in &pts {
            let mut block = linalg::eye(m);
            block.view_mut((1, 1), (m - 1, m - 1)).copy_from(sub.get(p).expect("sub"));
            fe.set(p, frames.get(p).expect("frame") * block);
        }
        fe
    };
    for &p in &pts {
        out.set(p, with_det(*det_ext.get(p).expect("phase"), flat_ext.get(p).expect("flat")));
    }
    Ok((out, report))
}

/// Unitary frames `[v, T]` with first column `v` the sphere extension and `T` spanning
/// its orthogonal complement, transported along the ray from the centre.
fn complement_frames(geom: &CellGeometry, sphere: &SphereExtension, m: usize) -> PointMap<CMat> {
    let (lo, hi) = geom.cell_bounds();
    let column = |w: &[f64], s: f64| -> CMat {
        let ws: Vec<f64> = w.iter().map(|x| s * x).collect();
        let mut v = stereo_inv(&sphere.pole, &ws);
        normalize(&mut v);
        real_to_column(&v)
    };
    let origin = vec![0.0; sphere.pole.len()];
    let v0 = column(&origin, 0.0);
    let (_, e) = linalg::eigh(&(linalg::eye(m) - &v0 * v0.adjoint()));
    let t0 = linalg::lowdin(&e.columns(1, m - 1).into_owned());
    let pts = geom.cell_points();
    let frames: Vec<CMat> = pts
        .par_iter()
        .map(|&p| {
            let w = sphere.plane.get(p).expect("plane");
            let mut t = t0.clone();
            let mut v = v0.clone();
            if w.iter().any(|x| *x != 0.0) {
                for i in 1..=RAY_STEPS {
                    v = column(w, i as f64 / RAY_STEPS as f64);
                    t = linalg::lowdin(&(&t - &v * (v.adjoint() * &t)));
                }
            }
            let mut g = CMat::zeros(m, m);
            g.set_column(0, &v.column(0));
            g.view_mut((0, 1), (m, m - 1)).copy_from(&t);
            g
        })
        .collect();
    let mut out = PointMap::new(lo, hi);
    for (p, g) in pts.into_iter().zip(frames) {
        out.set(p, g);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom(d: usize, n: usize) -> CellGeometry {
        CellGeometry::new(d, n).unwrap()
    }

    /// The piecewise formula for ω in two dimensions, on the loop parameter t ∈ [0, 3)
    /// starting at (0, -1/2).
    fn omega_cases(theta: &dyn Fn(f64) -> f64, k1: f64, k2: f64) -> f64 {
        let a = (2.0 * k1 - 0.5).abs();
        if k1 == 0.25 && k2 == 0.0 {
            0.0
        } else if k2 <= -a {
            -2.0 * k2 * theta((k2 - 2.0 * k1 + 0.5) / (4.0 * k2))
        } else if k2 >= a {
            2.0 * k2 * theta(2.0 - (k2 + 2.0 * k1 - 0.5) / (4.0 * k2))
        } else if k1 >= 0.25 {
            (4.0 * k1 - 1.0) * theta(1.0 + k2 / (4.0 * k1 - 1.0))
        } else {
            (1.0 - 4.0 * k1) * theta(2.5 - k2 / (1.0 - 4.0 * k1))
        }
    }

    #[test]
    fn stencil_is_exact_on_boundary_and_centre() {
        let g = geom(3, 4);
        for p in g.boundary_points() {
            let st = cone_stencil(&g, p);
            assert_eq!(st.rho, 1.0);
            assert_eq!(st.points, vec![(p, 1.0)]);
        }
        assert_eq!(cone_stencil(&g, [2, 0, 0]).rho, 0.0);
        let st = cone_stencil(&g, [1, 1, 0]);
        let wsum: f64 = st.points.iter().map(|x| x.1).sum();
        assert!((wsum - 1.0).abs() < 1e-15);
        assert!(st.points.iter().all(|(q, _)| g.on_cell_boundary(*q)));
    }

    #[test]
    fn phase_cone_matches_case_formula() {
        let g = geom(2, 8);
        let h = g.step();
        // smooth degree-zero boundary phase
        let phase = |k: &[f64]| 0.2 * (TAU * k[0]).sin() + 0.15 * (TAU * k[1]).cos() + 0.3;
        let (lo, hi) = g.cell_bounds();
        let mut f = PointMap::new(lo, hi);
        for b in g.boundary_points() {
            f.set(b, cis(TAU * phase(&g.to_k(b))));
        }
        let (ext, _) = extend_phase(&g, &f).unwrap();
        let (theta, _) = lift_loop(&g, &f).unwrap();
        // θ as a function of the loop parameter by linear interpolation of the lift
        let mut pts = g.loop_2d();
        pts.rotate_left(8);
        let vals: Vec<f64> = pts.iter().map(|&p| *theta.get(p).unwrap()).collect();
        let th = |t: f64| {
            let x = t / h;
            let i = x.floor() as usize;
            let fr = x - i as f64;
            let len = vals.len();
            vals[i % len] * (1.0 - fr) + vals[(i + 1) % len] * fr
        };
        for p in g.cell_points() {
            let k = g.to_k(p);
            let want = cis(TAU * omega_cases(&th, k[0], k[1]));
            assert!((ext.get(p).unwrap() - want).norm() < 1e-12, "{k:?}");
        }
        for b in g.boundary_points() {
            assert!((ext.get(b).unwrap() - f.get(b).unwrap()).norm() < 1e-12);
        }
    }

    #[test]
    fn nonzero_degree_is_rejected() {
        let g = geom(2, 8);
        let (lo, hi) = g.cell_bounds();
        let mut f = PointMap::new(lo, hi);
        let pts = g.loop_2d();
        for (i, &b) in pts.iter().enumerate() {
            f.set(b, cis(TAU * i as f64 / pts.len() as f64));
        }
        assert!(matches!(extend_phase(&g, &f), Err(Error::NonzeroDegree { degree: 1 })));
    }

    #[test]
    fn stereographic_round_trip() {
        let p = vec![0.0, 0.6, 0.0, 0.8];
        let mut v = vec![0.3, -0.2, 0.9, 0.1];
        normalize(&mut v);
        let w = stereo(&p, &v);
        assert!(w.iter().zip(&p).map(|(a, b)| a * b).sum::<f64>().abs() < 1e-14);
        let back = stereo_inv(&p, &w);
        assert!(chord(&back, &v) < 1e-14);
        let zero = vec![0.0; 4];
        let minus: Vec<f64> = p.iter().map(|x| -x).collect();
        assert!(chord(&stereo_inv(&p, &zero), &minus) < 1e-15);
    }

    #[test]
    fn identity_extends_to_identity() {
        for (d, n) in [(2, 8), (3, 4)] {
            let g = geom(d, n);
            for m in 1..=3 {
                let (lo, hi) = g.cell_bounds();
                let mut f = PointMap::new(lo, hi);
                for b in g.boundary_points() {
                    f.set(b, linalg::eye(m));
                }
                let (ext, rep) = extend_unitary(&g, &f, m, 1).unwrap();
                assert!(rep.boundary_mismatch < 1e-12);
                for p in g.cell_points() {
                    assert!(hs(&(ext.get(p).unwrap() - linalg::eye(m))) < 1e-12, "d={d} m={m} {p:?}");
                }
            }
        }
    }

    #[test]
    fn sphere_phase_lift_on_smooth_map() {
        let g = geom(3, 6);
        let (lo, hi) = g.cell_bounds();
        let mut f = PointMap::new(lo, hi);
        for b in g.boundary_points() {
            let k = g.to_k(b);
            f.set(b, cis(2.0 * (TAU * k[0]).sin() + 1.5 * (TAU * k[1]).cos() * (TAU * k[2]).sin()));
        }
        let (ext, rep) = extend_phase(&g, &f).unwrap();
        assert!(rep.seam_defect < 1e-12);
        for b in g.boundary_points() {
            assert!((ext.get(b).unwrap() - f.get(b).unwrap()).norm() < 1e-12);
        }
        assert!((ext.get([3, 0, 0]).unwrap() - C64::new(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn smooth_unitary_boundary_maps_extend() {
        use rand::SeedableRng;
        for (d, n, m) in [(2, 16, 2), (2, 16, 3), (3, 6, 2), (3, 6, 3)] {
            let g = geom(d, n);
            let mut rng = ChaCha8Rng::seed_from_u64(7 + m as u64);
            let a: Vec<CMat> = (0..3).map(|_| linalg::random_hermitian(m, 0.6, &mut rng)).collect();
            let (lo, hi) = g.cell_bounds();
            let mut f = PointMap::new(lo, hi);
            for b in g.boundary_points() {
                let k = g.to_k(b);
                let h = &a[0] * C64::from((TAU * k[0]).cos()) + &a[1] * C64::from((TAU * k[1]).sin()) + &a[2] * C64::from((TAU * k[k.len() - 1]).cos());
                f.set(b, linalg::expm_skew(&(h * C64::i())));
            }
            let (_, rep) = extend_unitary(&g, &f, m, 3).unwrap_or_else(|e| panic!("d={d} m={m}: {e:?}"));
            assert!(rep.boundary_mismatch <= BOUNDARY_MATCH_TOL, "{rep:?}");
            assert!(rep.unitarity_defect <= UNITARITY_TOL, "{rep:?}");
            assert!(rep.clearance.unwrap() >= MIN_CLEARANCE);
        }
    }
}
