//! Vertex conditions at TRIMs, unitary interpolation along edges, and the 1D construction.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{self, FrameField, Region};
use crate::geometry::{CellGeometry, Pt};
use crate::linalg::{self, cis, hs, CMat, RMat, C64};
use crate::models::ProjectorFamily;

pub const SYMMETRY_TOL: f64 = 1e-10;
const CLUSTER_TOL: f64 = 1e-8;
const SNAP_TOL: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct VertexSolution {
    pub point: Pt,
    pub k: Vec<f64>,
    pub u_obs: CMat,
    pub u: CMat,
    pub symmetry_defect: f64,
    pub snapped: bool,
}

/// Serializable summary of a vertex solution for manifests.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct VertexRecord {
    pub k: Vec<f64>,
    pub symmetry_defect: f64,
    pub sqrt_residual: f64,
    pub branch_snapped: bool,
}

impl VertexSolution {
    pub fn record(&self) -> VertexRecord {
        VertexRecord {
            k: self.k.clone(),
            symmetry_defect: self.symmetry_defect,
            sqrt_residual: hs(&(&self.u * self.u.transpose() - &self.u_obs)),
            branch_snapped: self.snapped,
        }
    }
}

/// Lattice vector `λ = 2k` of a TRIM grid point.
pub fn trim_lambda(geom: &CellGeometry, p: Pt) -> [i64; 3] {
    let n = geom.half();
    let mut lam = [0i64; 3];
    for j in 0..geom.d {
        debug_assert_eq!(p[j] % n, 0, "not a TRIM");
        lam[j] = p[j] / n;
    }
    lam
}

/// `U_obs` with `Ψ ◁ U_obs = τ_λ Θ Ψ` at a TRIM.
pub fn obstruction_unitary(psi: &CMat, geom: &CellGeometry, p: Pt, family: &ProjectorFamily) -> Result<CMat> {
    let lam = trim_lambda(geom, p);
    let target = frame::sym_apply(family, 1, lam, psi);
    let k = geom.to_k(p);
    let span = hs(&(psi * (psi.adjoint() * &target) - &target));
    if span > SYMMETRY_TOL {
        return Err(Error::SymmetryDefect { k, defect: span });
    }
    let u = linalg::lowdin(&(psi.adjoint() * target));
    let defect = linalg::symmetry_defect(&u);
    if defect > SYMMETRY_TOL {
        return Err(Error::SymmetryDefect { k, defect });
    }
    Ok(u)
}

/// Real orthogonal `W` and phases `μ ∈ [0, 2π)` with `V = W e^{iM} Wᵀ`.
/// The flag reports whether a phase was snapped from `2π` to `0`.
pub fn symmetric_eig(v: &CMat) -> Result<(RMat, Vec<f64>, bool)> {
    let m = v.nrows();
    let defect = linalg::symmetry_defect(v);
    if defect > SYMMETRY_TOL {
        return Err(Error::NotSymmetric { defect });
    }
    let udef = linalg::gram_defect(v);
    if udef > SYMMETRY_TOL {
        return Err(Error::NonUnitary { defect: udef });
    }
    let (vals, q) = linalg::normal_eig(v);
    let clusters = cluster(&vals);
    let mut w = RMat::zeros(m, m);
    let mut col = 0;
    for idx in clusters {
        let c = idx.len();
        // the cluster projector is real because the eigenspace is closed under conjugation
        let qc = CMat::from_fn(m, c, |r, a| q[(r, idx[a])]);
        let proj = (&qc * qc.adjoint()).map(|z| z.re);
        let (_, e) = linalg::eigh_real(&proj);
        let wc = e.columns(m - c, c).into_owned();
        // diagonalize V on the real cluster basis
        let wcc = wc.map(|x| C64::new(x, 0.0));
        let a = wcc.transpose() * v * &wcc;
        let mean: C64 = idx.iter().map(|&i| vals[i]).sum::<C64>() / c as f64;
        let rot = a * cis(-mean.arg());
        let (_, e) = linalg::eigh_real(&rot.map(|z| z.im));
        let wc = wc * e;
        for a in 0..c {
            w.set_column(col + a, &wc.column(a));
        }
        col += c;
    }
    let w = real_lowdin(&w);
    let wc = w.map(|x| C64::new(x, 0.0));
    let diag = wc.transpose() * v * &wc;
    let mut snapped = false;
    let mu = (0..m)
        .map(|j| {
            let a = linalg::arg_2pi(diag[(j, j)]);
            if TAU - a < SNAP_TOL {
                snapped = true;
                0.0
            } else {
                a
            }
        })
        .collect();
    Ok((w, mu, snapped))
}

fn real_lowdin(a: &RMat) -> RMat {
    let svd = a.clone().svd(true, true);
    svd.u.expect("svd u") * svd.v_t.expect("svd v_t")
}

/// Group indices of eigenvalues closer than the cluster tolerance (single linkage).
fn cluster(vals: &[C64]) -> Vec<Vec<usize>> {
    let m = vals.len();
    let mut label: Vec<usize> = (0..m).collect();
    fn root(l: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while l[r] != r {
            r = l[r];
        }
        l[i] = r;
        r
    }
    for i in 0..m {
        for j in i + 1..m {
            if (vals[i] - vals[j]).norm() < CLUSTER_TOL {
                let (a, b) = (root(&mut label, i), root(&mut label, j));
                label[a.max(b)] = a.min(b);
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut roots: Vec<usize> = Vec::new();
    for i in 0..m {
        let r = root(&mut label, i);
        match roots.iter().position(|&x| x == r) {
            Some(g) => groups[g].push(i),
            None => {
                roots.push(r);
                groups.push(vec![i]);
            }
        }
    }
    groups
}

/// A unitary `U` with `U Uᵀ = V` for symmetric unitary `V`.
pub fn symmetric_sqrt(v: &CMat) -> Result<CMat> {
    symmetric_sqrt_flagged(v).map(|(u, _)| u)
}

pub fn symmetric_sqrt_flagged(v: &CMat) -> Result<(CMat, bool)> {
    let (w, mu, snapped) = symmetric_eig(v)?;
    let wc = w.map(|x| C64::new(x, 0.0));
    let u = linalg::spectral(&wc, mu.iter().map(|&x| cis(x / 2.0)));
    Ok((u, snapped))
}

/// Path `t ↦ U1 Q e^{i2tD} Q†` from `U1` at `t = 0` to `U2` at `t = 1/2`.
#[derive(Clone, Debug)]
pub struct UnitaryPath {
    start: CMat,
    end: CMat,
    q: CMat,
    phases: Vec<f64>,
}

impl UnitaryPath {
    pub fn new(u1: &CMat, u2: &CMat) -> Self {
        let rel = u1.adjoint() * u2;
        let (vals, q) = linalg::normal_eig(&rel);
        let phases = vals
            .iter()
            .map(|z| {
                let a = z.arg();
                if a == -PI {
                    PI
                } else {
                    a
                }
            })
            .collect();
        Self { start: u1.clone(), end: u2.clone(), q, phases }
    }

    pub fn at(&self, t: f64) -> CMat {
        if t == 0.0 {
            return self.start.clone();
        }
        if t == 0.5 {
            return self.end.clone();
        }
        &self.start * linalg::spectral(&self.q, self.phases.iter().map(|&d| cis(2.0 * t * d)))
    }
}

pub fn interpolate_unitaries(u1: &CMat, u2: &CMat, t: f64) -> CMat {
    UnitaryPath::new(u1, u2).at(t)
}

/// Vertex solution at a TRIM for a given frame there.
pub fn solve_vertex(phi: &CMat, geom: &CellGeometry, p: Pt, family: &ProjectorFamily) -> Result<VertexSolution> {
    let u_obs = obstruction_unitary(phi, geom, p, family)?;
    let symmetry_defect = linalg::symmetry_defect(&u_obs);
    let (u, snapped) = symmetric_sqrt_flagged(&u_obs)?;
    Ok(VertexSolution { point: p, k: geom.to_k(p), u_obs, u, symmetry_defect, snapped })
}

/// Correct frames along a segment so the last one satisfies its vertex condition,
/// keeping the first frame unchanged. `frames[i]` sits at `points[i]`; the last point
/// must be a TRIM.
pub fn edge_to_trim(
    frames: &[CMat],
    points: &[Pt],
    geom: &CellGeometry,
    family: &ProjectorFamily,
) -> Result<(Vec<CMat>, VertexSolution)> {
    let last = *points.last().expect("nonempty segment");
    let sol = solve_vertex(frames.last().expect("nonempty segment"), geom, last, family)?;
    let m = family.m;
    let path = UnitaryPath::new(&linalg::eye(m), &sol.u);
    let len = (frames.len() - 1).max(1) as f64;
    let out = frames
        .iter()
        .enumerate()
        .map(|(i, f)| if i == 0 { f.clone() } else { f * path.at(0.5 * i as f64 / len) })
        .collect();
    Ok((out, sol))
}

/// Residual `‖Φ(k_λ) - τ_λ Θ Φ(k_λ)‖` of a frame at a TRIM.
pub fn vertex_residual(phi: &CMat, geom: &CellGeometry, p: Pt, family: &ProjectorFamily) -> f64 {
    frame::frame_distance(phi, &frame::sym_apply(family, 1, trim_lambda(geom, p), phi))
}

#[derive(Clone, Debug)]
pub struct Construction1d {
    pub cell: FrameField,
    pub vertices: Vec<VertexSolution>,
}

/// Symmetric frame on the effective cell `[0, 1/2]` of a one-dimensional family.
pub fn construct_1d_cell(psi: &FrameField, family: &ProjectorFamily) -> Result<Construction1d> {
    let geom = psi.geometry;
    if geom.d != 1 {
        return Err(Error::Unsupported(format!("1D construction called with d = {}", geom.d)));
    }
    let n = geom.half();
    let points: Vec<Pt> = (0..=n).map(|i| [i, 0, 0]).collect();
    let start = solve_vertex(psi.at([0; 3]), &geom, [0; 3], family)?;
    let one: Vec<CMat> = points.iter().map(|&p| psi.at(p) * &start.u).collect();
    let (two, end) = edge_to_trim(&one, &points, &geom, family)?;
    let mut cell = FrameField::new(geom, Region::Cell, family.n, family.m);
    for (p, f) in points.into_iter().zip(two) {
        cell.set(p, f);
    }
    Ok(Construction1d { cell, vertices: vec![start, end] })
}

pub fn construct_1d(psi: &FrameField, family: &ProjectorFamily) -> Result<FrameField> {
    let c = construct_1d_cell(psi, family)?;
    crate::wannier::extend_symmetric(&c.cell, family)
}
