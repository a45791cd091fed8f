//! Smoothing of a continuous symmetric torus field: a Fejér convolution that keeps the
//! τ-equivariance, followed by a pointwise geodesic midpoint with the Θ-image that
//! restores the time-reversal relation exactly.

use std::f64::consts::{PI, TAU};

use rayon::prelude::*;
use rustfft::FftDirection;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{self, FrameField, Region};
use crate::geometry::{box_points, CellGeometry, Pt};
use crate::linalg::{self, cis, hs, CMat, C64};
use crate::models::{ProjectorFamily, Tau};
use crate::wannier::{exp_fit, fft_index, fft_nd};

pub const DEFAULT_DELTA: f64 = PI / 2.0;
pub const NEAR_PI_TOL: f64 = 1e-8;
const RANK_FLOOR: f64 = 1e-6;

/// Principal logarithm `A` (skew-Hermitian) with `exp(A) = U`.
pub fn unitary_log(u: &CMat) -> Result<CMat> {
    let (q, phases) = log_parts(u)?;
    Ok(linalg::spectral(&q, phases.iter().map(|&x| C64::new(0.0, x))))
}

fn log_parts(u: &CMat) -> Result<(CMat, Vec<f64>)> {
    let (vals, q) = linalg::normal_eig(u);
    let phases: Vec<f64> = vals.iter().map(|z| z.arg()).collect();
    if phases.iter().any(|x| x.abs() > PI - NEAR_PI_TOL) {
        return Err(Error::EigenphaseNearPi { tol: NEAR_PI_TOL });
    }
    Ok((q, phases))
}

/// Geodesic distance `‖log U‖` from the identity.
pub fn geodesic_distance(u: &CMat) -> Result<f64> {
    let (_, phases) = log_parts(u)?;
    Ok(phases.iter().map(|x| x * x).sum::<f64>().sqrt())
}

/// `exp(log(U)/2)`, for `U` within geodesic distance `delta` of the identity.
pub fn midpoint_unitary(u: &CMat, delta: f64) -> Result<CMat> {
    let (q, phases) = log_parts(u)?;
    let dist = phases.iter().map(|x| x * x).sum::<f64>().sqrt();
    if dist >= delta {
        return Err(Error::TooFarApart { dist, limit: delta, k: None });
    }
    Ok(linalg::spectral(&q, phases.iter().map(|&x| cis(x / 2.0))))
}

/// `Φ ◁ M(1, U)` where `Φ ◁ U = Ψ`.
pub fn frame_midpoint(phi: &CMat, psi: &CMat, delta: f64) -> Result<CMat> {
    let dist = frame::frame_distance(phi, psi);
    if dist >= delta / 2.0 {
        return Err(Error::TooFarApart { dist, limit: delta / 2.0, k: None });
    }
    let u = frame::unitary_between(phi, psi)?;
    Ok(phi * midpoint_unitary(&u, delta)?)
}

/// A basis diagonalising every τ generator, with the Bloch phases `α_{a,j}` so that
/// row `a` of `V†Φ` picks up `e^{i2πα_{a,j}}` under `k ↦ k + e_j`.
struct TauBasis {
    v: CMat,
    alpha: Vec<[f64; 3]>,
}

fn tau_basis(family: &ProjectorFamily) -> Result<TauBasis> {
    let n = family.n;
    match &family.tau {
        Tau::Identity => Ok(TauBasis { v: linalg::eye(n), alpha: vec![[0.0; 3]; n] }),
        Tau::Generators(gens) => {
            let weights = [1.0, 0.618_033_988_7, 0.377_964_473];
            let mut s = CMat::zeros(n, n);
            for (g, w) in gens.iter().zip(weights) {
                s += g * C64::new(w, 0.0);
            }
            let (_, v) = linalg::normal_eig(&s);
            let mut alpha = vec![[0.0; 3]; n];
            for (j, g) in gens.iter().enumerate() {
                let dg = v.adjoint() * g * &v;
                let off = hs(&(&dg - CMat::from_diagonal(&dg.diagonal())));
                if off > 1e-10 {
                    return Err(Error::Unsupported("translation generators are not simultaneously diagonalisable".into()));
                }
                for (a, al) in alpha.iter_mut().enumerate() {
                    al[j] = dg[(a, a)].arg() / TAU;
                }
            }
            Ok(TauBasis { v, alpha })
        }
    }
}

fn frequency(i: usize, len: usize) -> i64 {
    if i < len / 2 {
        i as i64
    } else {
        i as i64 - len as i64
    }
}

/// Per-point frequency vector of a row-major `(2N)^d` array index.
fn frequencies(d: usize, len: usize) -> Vec<[i64; 3]> {
    let total = len.pow(d as u32);
    (0..total)
        .map(|mut idx| {
            let mut q = [0i64; 3];
            for j in (0..d).rev() {
                q[j] = frequency(idx % len, len);
                idx /= len;
            }
            q
        })
        .collect()
}

fn half_open(geom: &CellGeometry) -> Vec<Pt> {
    let n = geom.half();
    let mut lo = [0i64; 3];
    let mut hi = [0i64; 3];
    for j in 0..geom.d {
        lo[j] = -n;
        hi[j] = n - 1;
    }
    box_points(lo, hi)
}

/// Fourier coefficients of the periodic parts `e^{-i2πα_a·k}(V†Φ(k))_{ab}`, one array per entry.
fn spectrum(field: &FrameField, basis: &TauBasis, pts: &[Pt]) -> Vec<Vec<C64>> {
    let geom = field.geometry;
    let (d, n, m) = (geom.d, field.n, field.m);
    let len = geom.period() as usize;
    let total = len.pow(d as u32);
    let rotated: Vec<CMat> = pts.par_iter().map(|&p| basis.v.adjoint() * field.at(p)).collect();
    (0..n * m)
        .into_par_iter()
        .map(|e| {
            let (a, b) = (e % n, e / n);
            let mut data = vec![C64::new(0.0, 0.0); total];
            for (&p, r) in pts.iter().zip(&rotated) {
                let k = geom.to_k(p);
                let ph: f64 = (0..d).map(|j| basis.alpha[a][j] * k[j]).sum();
                data[fft_index(&geom, p)] = r[(a, b)] * cis(-TAU * ph);
            }
            fft_nd(&mut data, d, len, FftDirection::Forward);
            data
        })
        .collect()
}

/// Largest coefficient norm on each sup-norm frequency shell `0..N`.
fn shell_profile(spec: &[Vec<C64>], d: usize, len: usize) -> Vec<f64> {
    let freqs = frequencies(d, len);
    let mut shells = vec![0.0f64; len / 2 + 1];
    for (i, q) in freqs.iter().enumerate() {
        let s = q[..d].iter().map(|x| x.unsigned_abs() as usize).max().unwrap_or(0);
        let norm = spec.iter().map(|c| c[i].norm_sqr()).sum::<f64>().sqrt();
        shells[s] = shells[s].max(norm);
    }
    shells
}

fn decay_rate(shells: &[f64]) -> f64 {
    let top = shells.len().saturating_sub(2).max(1);
    exp_fit(shells, 1, top).0
}

/// Largest `‖Φ(k+e_j) - 2Φ(k) + Φ(k-e_j)‖` over the closed box.
pub fn max_second_difference(field: &FrameField) -> f64 {
    let d = field.geometry.d;
    field
        .points()
        .par_iter()
        .map(|&p| {
            let mut best = 0.0f64;
            for j in 0..d {
                let (mut a, mut b) = (p, p);
                a[j] += 1;
                b[j] -= 1;
                if let (Some(fa), Some(fb)) = (field.get(a), field.get(b)) {
                    best = best.max(hs(&(fa - field.at(p) * C64::new(2.0, 0.0) + fb)));
                }
            }
            best
        })
        .reduce(|| 0.0, f64::max)
}

/// Fill the `+1/2` faces of the closed box from the half-open part by `τ`.
fn close_box(field: &mut FrameField, family: &ProjectorFamily) {
    let geom = field.geometry;
    let per = geom.period();
    for p in geom.torus_points() {
        if field.contains(p) {
            continue;
        }
        let w = geom.wrap(p);
        let mut lam = [0i64; 3];
        for j in 0..geom.d {
            lam[j] = (p[j] - w[j]) / per;
        }
        let f = frame::tau_apply(family, lam, field.at(w));
        field.set(p, f);
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct SmoothingReport {
    pub epsilon: f64,
    pub cutoff: usize,
    pub sup_distance: f64,
    /// Every cutoff tried with its sup distance.
    pub attempts: Vec<(usize, f64)>,
    pub second_difference_before: f64,
    pub second_difference_after: f64,
    pub spectral_decay_before: f64,
    pub spectral_decay_after: f64,
}

/// Fejér-smoothed, reprojected and orthonormalised copy of a torus field, with the
/// smallest cutoff `K ∈ {2, 4, …, 64·grid_n}` keeping every frame within `ε/2`.
pub fn periodic_smooth(field: &FrameField, family: &ProjectorFamily, epsilon: f64) -> Result<(FrameField, SmoothingReport)> {
    let geom = field.geometry;
    let (d, n, m) = (geom.d, field.n, field.m);
    let len = geom.period() as usize;
    let total = len.pow(d as u32);
    let pts = half_open(&geom);
    let basis = tau_basis(family)?;
    let spec = spectrum(field, &basis, &pts);
    let freqs = frequencies(d, len);
    let projectors: Vec<CMat> = pts.par_iter().map(|&p| family.projector(&geom.to_k(p))).collect::<Result<_>>()?;

    let mut report = SmoothingReport {
        epsilon,
        second_difference_before: max_second_difference(field),
        spectral_decay_before: decay_rate(&shell_profile(&spec, d, len)),
        ..Default::default()
    };
    let mut best: Option<(usize, f64)> = None;
    let mut cutoff = 2usize;
    let max_cutoff = 64 * geom.grid_n;
    while cutoff <= max_cutoff {
        let kf = cutoff as f64;
        let smoothed: Vec<Vec<C64>> = spec
            .par_iter()
            .enumerate()
            .map(|(e, c)| {
                let a = e % n;
                let mut data: Vec<C64> = c
                    .iter()
                    .zip(&freqs)
                    .map(|(z, q)| {
                        let w: f64 = (0..d).map(|j| (1.0 - (q[j] as f64 + basis.alpha[a][j]).abs() / kf).max(0.0)).product();
                        z * w
                    })
                    .collect();
                fft_nd(&mut data, d, len, FftDirection::Inverse);
                let scale = 1.0 / total as f64;
                data.iter_mut().for_each(|z| *z *= scale);
                data
            })
            .collect();
        let frames: Vec<Result<CMat>> = pts
            .par_iter()
            .zip(&projectors)
            .map(|(&p, proj)| {
                let k = geom.to_k(p);
                let idx = fft_index(&geom, p);
                let mut rot = CMat::zeros(n, m);
                for a in 0..n {
                    let ph: f64 = (0..d).map(|j| basis.alpha[a][j] * k[j]).sum();
                    for b in 0..m {
                        rot[(a, b)] = smoothed[a + n * b][idx] * cis(TAU * ph);
                    }
                }
                let raw = proj * (&basis.v * rot);
                let sigma = linalg::singular_values(&raw).into_iter().fold(f64::INFINITY, f64::min);
                if sigma < RANK_FLOOR {
                    return Err(Error::ProjectionRankLoss { k, sigma });
                }
                Ok(linalg::lowdin(&raw))
            })
            .collect();
        let mut out = FrameField::new(geom, Region::Torus, n, m);
        for (&p, f) in pts.iter().zip(frames) {
            out.set(p, f?);
        }
        let dist = pts
            .par_iter()
            .map(|&p| frame::frame_distance(field.at(p), out.at(p)))
            .reduce(|| 0.0, f64::max);
        report.attempts.push((cutoff, dist));
        if best.is_none_or(|b| dist < b.1) {
            best = Some((cutoff, dist));
        }
        if dist < epsilon / 2.0 {
            close_box(&mut out, family);
            report.cutoff = cutoff;
            report.sup_distance = dist;
            report.second_difference_after = max_second_difference(&out);
            report.spectral_decay_after = decay_rate(&shell_profile(&spectrum(&out, &basis, &pts), d, len));
            return Ok((out, report));
        }
        cutoff *= 2;
    }
    let (cutoff, best) = best.expect("at least one cutoff tried");
    Err(Error::EpsilonInfeasible { target: epsilon / 2.0, best, cutoff })
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct SymmetrizeReport {
    pub time_reversal_before: f64,
    pub time_reversal_after: f64,
    pub max_shift: f64,
}

/// `Φ(k) = ⟦Φ'(k), ΘΦ'(-k)⟧`, evaluated once per pair `{k, -k}` of the half-open torus
/// grid; the partner gets the exact symmetric image.
pub fn symmetrize(field: &FrameField, family: &ProjectorFamily, delta: f64) -> Result<(FrameField, SymmetrizeReport)> {
    let geom = field.geometry;
    let per = geom.period();
    let pts = half_open(&geom);
    let partner = |p: Pt| -> (Pt, [i64; 3]) {
        let neg = geom.act(1, [0; 3], p);
        let w = geom.wrap(neg);
        let mut lam = [0i64; 3];
        for j in 0..geom.d {
            lam[j] = (w[j] - neg[j]) / per;
        }
        (w, lam)
    };
    let owners: Vec<Pt> = pts.iter().copied().filter(|&p| partner(p).0 >= p).collect();
    let results: Vec<(Pt, Result<CMat>, f64)> = owners
        .par_iter()
        .map(|&p| {
            let (q, lam) = partner(p);
            let image = frame::sym_apply(family, 1, lam, field.at(q));
            let before = frame::frame_distance(field.at(p), &image);
            let mid = frame_midpoint(field.at(p), &image, delta).map_err(|e| match e {
                Error::TooFarApart { dist, limit, .. } => Error::TooFarApart { dist, limit, k: Some(geom.to_k(p)) },
                other => other,
            });
            (p, mid, before)
        })
        .collect();
    let mut out = FrameField::new(geom, Region::Torus, field.n, field.m);
    let mut report = SymmetrizeReport::default();
    let mut failures: Vec<Error> = Vec::new();
    for (p, mid, before) in results {
        report.time_reversal_before = report.time_reversal_before.max(before);
        match mid {
            Ok(f) => {
                let (q, lam) = partner(p);
                if q != p {
                    out.set(q, frame::sym_apply(family, 1, lam, &f));
                }
                report.max_shift = report.max_shift.max(frame::frame_distance(&f, field.at(p)));
                out.set(p, f);
            }
            Err(e) => failures.push(e),
        }
    }
    if let Some(worst) = failures.into_iter().max_by(|a, b| too_far(a).total_cmp(&too_far(b))) {
        return Err(worst);
    }
    for p in pts.iter().filter(|p| !owners.contains(p)) {
        let f = out.at(*p);
        report.max_shift = report.max_shift.max(frame::frame_distance(f, field.at(*p)));
    }
    close_box(&mut out, family);
    report.time_reversal_after = crate::frame::torus_residuals(&out, family)?.time_reversal;
    Ok((out, report))
}

fn too_far(e: &Error) -> f64 {
    match e {
        Error::TooFarApart { dist, .. } => *dist,
        _ => f64::INFINITY,
    }
}
