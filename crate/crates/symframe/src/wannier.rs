//! Symmetric extension to the torus, discrete Wannier transform and its certificates.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use byteorder::{LittleEndian, WriteBytesExt};
use rayon::prelude::*;
use rustfft::{FftDirection, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Relation, Result};
use crate::frame::{self, FrameField, Region};
use crate::geometry::{box_points, CellGeometry, Pt};
use crate::linalg::{self, CMat, C64};
use crate::models::{ProjectorFamily, Theta};

pub const RELATION_TOL: f64 = 1e-8;

fn sym_pairs(d: usize) -> Vec<(u8, [i64; 3])> {
    let mut out = Vec::new();
    for s in 0..2u8 {
        let hi = [1i64, if d > 1 { 1 } else { 0 }, if d > 2 { 1 } else { 0 }];
        for lam in box_points([-hi[0], -hi[1], -hi[2]], hi) {
            if s == 0 && lam == [0; 3] {
                continue;
            }
            out.push((s, lam));
        }
    }
    out
}

/// Largest violation of `Φ((-1)^s k + λ) = τ_λ Θ^s Φ(k)` among pairs of boundary
/// points of the effective cell. Vertex conditions are checked first so a broken TRIM
/// is reported as such.
pub fn check_boundary_relations(cell: &FrameField, family: &ProjectorFamily, tol: f64) -> Result<f64> {
    let geom = cell.geometry;
    let pairs = sym_pairs(geom.d);
    let boundary: Vec<Pt> = geom.boundary_points().into_iter().filter(|&p| cell.contains(p)).collect();
    let check = |p: Pt, s: u8, lam: [i64; 3]| -> Option<Result<f64>> {
        let q = geom.act(s, lam, p);
        let target = cell.get(q)?;
        let image = frame::sym_apply(family, s, lam, cell.at(p));
        let residual = frame::frame_distance(target, &image);
        if residual > tol {
            let relation = Relation { s, lambda: &lam[..geom.d] }.to_string();
            return Some(Err(Error::BoundaryRelationViolated { relation, k: geom.to_k(p), residual }));
        }
        Some(Ok(residual))
    };
    let mut worst = 0.0f64;
    for &p in geom.trim_points().iter().filter(|&&p| cell.contains(p)) {
        for &(s, lam) in &pairs {
            if geom.act(s, lam, p) == p {
                if let Some(r) = check(p, s, lam) {
                    worst = worst.max(r?);
                }
            }
        }
    }
    let rest: Vec<Result<f64>> = boundary
        .par_iter()
        .map(|&p| {
            let mut w = 0.0f64;
            for &(s, lam) in &pairs {
                if let Some(r) = check(p, s, lam) {
                    w = w.max(r?);
                }
            }
            Ok(w)
        })
        .collect();
    for r in rest {
        worst = worst.max(r?);
    }
    Ok(worst)
}

/// `Φ(k) = τ_λ Θ^s Φ̌(k')` on the closed torus box.
pub fn extend_symmetric(cell: &FrameField, family: &ProjectorFamily) -> Result<FrameField> {
    extend_symmetric_with_tol(cell, family, RELATION_TOL)
}

pub fn extend_symmetric_with_tol(cell: &FrameField, family: &ProjectorFamily, tol: f64) -> Result<FrameField> {
    check_boundary_relations(cell, family, tol)?;
    let geom = cell.geometry;
    let mut torus = FrameField::new(geom, Region::Torus, family.n, family.m);
    let pts = geom.torus_points();
    torus.fill_with(&pts, |p| {
        let r = geom.reduce(p);
        let base = cell
            .get(r.k_prime)
            .ok_or_else(|| Error::Unsupported(format!("cell field has no frame at {:?}", r.k_prime)))?;
        Ok(frame::sym_apply(family, r.s, r.lambda, base))
    })?;
    Ok(torus)
}

// ---------------------------------------------------------------- transform

/// `w_a(γ, orbital)` for `γ ∈ [-grid_n, grid_n - 1]^d`.
#[derive(Clone, Debug, PartialEq)]
pub struct WannierSet {
    pub geometry: CellGeometry,
    pub n: usize,
    pub m: usize,
    /// `coefficients[index(γ)]` is the n×m matrix of amplitudes at γ.
    pub coefficients: Vec<CMat>,
}

impl WannierSet {
    pub fn lo(&self) -> Pt {
        let n = self.geometry.half();
        let mut lo = [0i64; 3];
        for v in lo.iter_mut().take(self.geometry.d) {
            *v = -n;
        }
        lo
    }

    pub fn hi(&self) -> Pt {
        let n = self.geometry.half();
        let mut hi = [0i64; 3];
        for v in hi.iter_mut().take(self.geometry.d) {
            *v = n - 1;
        }
        hi
    }

    pub fn gammas(&self) -> Vec<Pt> {
        box_points(self.lo(), self.hi())
    }

    pub fn get(&self, gamma: Pt) -> Option<&CMat> {
        crate::geometry::box_index(self.lo(), self.hi(), gamma).map(|i| &self.coefficients[i])
    }
}

/// Index of a point in the `(2N)^d` periodic array, wrapping modulo the period.
pub(crate) fn fft_index(geom: &CellGeometry, p: Pt) -> usize {
    let per = geom.period();
    let mut idx = 0usize;
    for &c in p.iter().take(geom.d) {
        idx = idx * per as usize + c.rem_euclid(per) as usize;
    }
    idx
}

/// In-place d-dimensional transform on a `(2N)^d` row-major array.
pub(crate) fn fft_nd(data: &mut [C64], d: usize, len: usize, direction: FftDirection) {
    let fft = FftPlanner::new().plan_fft(len, direction);
    let stride_of = |axis: usize| len.pow((d - 1 - axis) as u32);
    let mut line = vec![C64::new(0.0, 0.0); len];
    for axis in 0..d {
        let stride = stride_of(axis);
        let total = data.len();
        for base in 0..total {
            if (base / stride) % len != 0 {
                continue;
            }
            for (i, v) in line.iter_mut().enumerate() {
                *v = data[base + i * stride];
            }
            fft.process(&mut line);
            for (i, v) in line.iter().enumerate() {
                data[base + i * stride] = *v;
            }
        }
    }
}

/// `w_a(γ) = (1/N_tot) Σ_k e^{i2πk·γ} Φ(k)` over the half-open torus grid.
pub fn wannier_transform(field: &FrameField) -> Result<WannierSet> {
    let geom = field.geometry;
    let (d, n, m) = (geom.d, field.n, field.m);
    let len = geom.period() as usize;
    let total = len.pow(d as u32);
    let half = geom.half();
    let mut hi = [0i64; 3];
    let mut lo = [0i64; 3];
    for j in 0..d {
        lo[j] = -half;
        hi[j] = half - 1;
    }
    let grid = box_points(lo, hi);
    let mut frames: Vec<&CMat> = vec![field.at([0; 3]); total];
    for &p in &grid {
        let f = field
            .get(p)
            .ok_or_else(|| Error::Unsupported(format!("torus field has no frame at {p:?}")))?;
        frames[fft_index(&geom, p)] = f;
    }
    let channels: Vec<Vec<C64>> = (0..n * m)
        .into_par_iter()
        .map(|c| {
            let (orb, band) = (c % n, c / n);
            let mut data: Vec<C64> = frames.iter().map(|f| f[(orb, band)]).collect();
            fft_nd(&mut data, d, len, FftDirection::Inverse);
            data.iter().map(|z| z / total as f64).collect()
        })
        .collect();
    let wset = WannierSet { geometry: geom, n, m, coefficients: Vec::new() };
    let coefficients = wset
        .gammas()
        .into_iter()
        .map(|g| {
            let i = fft_index(&geom, g);
            CMat::from_fn(n, m, |orb, band| channels[band * n + orb][i])
        })
        .collect();
    Ok(WannierSet { coefficients, ..wset })
}

/// Frames on the half-open torus grid recovered from Wannier coefficients.
pub fn bloch_transform(wset: &WannierSet) -> Vec<(Pt, CMat)> {
    let geom = wset.geometry;
    let (d, n, m) = (geom.d, wset.n, wset.m);
    let len = geom.period() as usize;
    let total = len.pow(d as u32);
    let gammas = wset.gammas();
    let channels: Vec<Vec<C64>> = (0..n * m)
        .into_par_iter()
        .map(|c| {
            let (orb, band) = (c % n, c / n);
            let mut data = vec![C64::new(0.0, 0.0); total];
            for (g, w) in gammas.iter().zip(&wset.coefficients) {
                data[fft_index(&geom, *g)] = w[(orb, band)];
            }
            fft_nd(&mut data, d, len, FftDirection::Forward);
            data
        })
        .collect();
    gammas
        .into_iter()
        .map(|p| {
            let i = fft_index(&geom, p);
            (p, CMat::from_fn(n, m, |orb, band| channels[band * n + orb][i]))
        })
        .collect()
}

/// Per-band `Σ |w|²`.
pub fn parseval(wset: &WannierSet) -> Vec<f64> {
    (0..wset.m)
        .map(|a| wset.coefficients.iter().map(|w| w.column(a).norm_squared()).sum())
        .collect()
}

/// Largest `|⟨w_{γ,a}, w_{γ+s,b}⟩ - δ|` over the given shifts, taken cyclically on the
/// `(2 grid_n)^d` window where the discrete functions are periodic.
pub fn translate_orthonormality(wset: &WannierSet, shifts: &[Pt]) -> f64 {
    let m = wset.m;
    let mut worst = 0.0f64;
    for &s in shifts {
        let mut gram = CMat::zeros(m, m);
        for (g, w) in wset.gammas().into_iter().zip(&wset.coefficients) {
            let shifted = wset.geometry.wrap([g[0] + s[0], g[1] + s[1], g[2] + s[2]]);
            if let Some(w2) = wset.get(shifted) {
                gram += w.adjoint() * w2;
            }
        }
        if s == [0; 3] {
            gram -= linalg::eye(m);
        }
        worst = worst.max(linalg::hs(&gram));
    }
    worst
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct RealityReport {
    /// `imaginary-part` for plain conjugation, `theta-reality` for `w = C conj(w)`.
    pub kind: String,
    pub defect: f64,
}

pub fn reality_check(wset: &WannierSet, theta: &Theta) -> RealityReport {
    match theta {
        Theta::Conjugation => RealityReport {
            kind: "imaginary-part".into(),
            defect: wset
                .coefficients
                .iter()
                .flat_map(|w| w.iter().map(|z| z.im.abs()))
                .fold(0.0, f64::max),
        },
        Theta::Unitary(c) => RealityReport {
            kind: "theta-reality".into(),
            defect: wset
                .coefficients
                .iter()
                .flat_map(|w| (w - c * linalg::conj(w)).iter().map(|z| z.norm()).collect::<Vec<_>>())
                .fold(0.0, f64::max),
        },
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct LocalizationReport {
    /// `moments[a][r] = Σ ⟨γ⟩^{2r} |w_a(γ)|²`, r = 0..4.
    pub moments: Vec<Vec<f64>>,
    /// Largest amplitude on each sup-norm shell, all bands and orbitals.
    pub shell_sups: Vec<f64>,
    pub longest_decreasing_run: usize,
    pub decay_rate: f64,
    pub fit_r2: f64,
    pub fit_shells: (usize, usize),
    /// Weight on the outermost shell, a truncation estimate.
    pub tail_weight: f64,
}

pub fn localization_report(wset: &WannierSet) -> LocalizationReport {
    let gammas = wset.gammas();
    let half = wset.geometry.half() as usize;
    let mut moments = vec![vec![0.0; 5]; wset.m];
    let mut shell_sups = vec![0.0f64; half + 1];
    let mut tail_weight = 0.0;
    for (g, w) in gammas.iter().zip(&wset.coefficients) {
        let r2: f64 = g.iter().map(|&x| (x * x) as f64).sum();
        let bracket2 = 1.0 + r2;
        let shell = g.iter().map(|x| x.unsigned_abs() as usize).max().unwrap_or(0);
        for (a, mom) in moments.iter_mut().enumerate() {
            let weight = w.column(a).norm_squared();
            for (r, v) in mom.iter_mut().enumerate() {
                *v += bracket2.powi(r as i32) * weight;
            }
            if shell >= half {
                tail_weight += weight;
            }
        }
        let sup = w.iter().map(|z| z.norm()).fold(0.0, f64::max);
        shell_sups[shell] = shell_sups[shell].max(sup);
    }
    let mut longest = 1usize;
    let mut run = 1usize;
    for i in 1..shell_sups.len() {
        if shell_sups[i] < shell_sups[i - 1] {
            run += 1;
            longest = longest.max(run);
        } else {
            run = 1;
        }
    }
    let fit_shells = (2.min(half), (half / 2).max(2.min(half)));
    let (decay_rate, fit_r2) = exp_fit(&shell_sups, fit_shells.0, fit_shells.1);
    LocalizationReport { moments, shell_sups, longest_decreasing_run: longest, decay_rate, fit_r2, fit_shells, tail_weight }
}

/// Least squares `ln y = c - rate·x` over `x ∈ [a, b]`; returns (rate, R²).
pub fn exp_fit(y: &[f64], a: usize, b: usize) -> (f64, f64) {
    let pts: Vec<(f64, f64)> = (a..=b.min(y.len() - 1))
        .filter(|&i| y[i] > 0.0)
        .map(|i| (i as f64, y[i].ln()))
        .collect();
    if pts.len() < 2 {
        return (0.0, 0.0);
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (-slope, r2)
}

// ---------------------------------------------------------------- export

const WAN_MAGIC: &[u8; 4] = b"WAN1";

/// WAN1: magic, u32 version, d, n, m, grid_n, u64 count, then per γ the d
/// coordinates (i64) and the n×m amplitudes column-major as (re, im) f64 pairs.
pub fn write_wan(path: &Path, wset: &WannierSet) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let d = wset.geometry.d;
    w.write_all(WAN_MAGIC)?;
    for v in [1u32, d as u32, wset.n as u32, wset.m as u32, wset.geometry.grid_n as u32] {
        w.write_u32::<LittleEndian>(v)?;
    }
    w.write_u64::<LittleEndian>(wset.coefficients.len() as u64)?;
    for (g, c) in wset.gammas().into_iter().zip(&wset.coefficients) {
        for &x in g.iter().take(d) {
            w.write_i64::<LittleEndian>(x)?;
        }
        for band in 0..wset.m {
            for orb in 0..wset.n {
                w.write_f64::<LittleEndian>(c[(orb, band)].re)?;
                w.write_f64::<LittleEndian>(c[(orb, band)].im)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_wannier_csv(path: &Path, wset: &WannierSet) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let d = wset.geometry.d;
    let head: Vec<String> = (1..=d).map(|j| format!("g{j}")).collect();
    writeln!(w, "{},orbital,band,re,im", head.join(","))?;
    for (g, c) in wset.gammas().into_iter().zip(&wset.coefficients) {
        let gs: Vec<String> = g.iter().take(d).map(|x| x.to_string()).collect();
        for band in 0..wset.m {
            for orb in 0..wset.n {
                let z = c[(orb, band)];
                writeln!(w, "{},{orb},{band},{:e},{:e}", gs.join(","), z.re, z.im)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
