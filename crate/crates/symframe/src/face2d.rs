//! The two-dimensional construction: an edge skeleton with its edge symmetries, the
//! winding degree of the boundary unitary, the degree correction on the door edge,
//! and the extension to the cell, for any square face embedded in the grid.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Relation, Result};
use crate::extension::{self, ExtensionReport};
use crate::frame::{self, FrameField, Region};
use crate::geometry::{CellGeometry, PointMap, Pt};
use crate::linalg::{self, cis, CMat};
use crate::models::ProjectorFamily;
use crate::vertex::{self, UnitaryPath, VertexRecord, VertexSolution};

pub const EDGE_TOL: f64 = 1e-8;

/// Affine embedding `(x, y) ↦ origin + x·ax + y·ay` of the 2D effective cell
/// (`x ∈ [0, grid_n]`, `y ∈ [-grid_n, grid_n]`) into the grid of a `d`-dimensional cell.
/// `ax` and `ay` are signed unit lattice directions; `origin` is half a lattice vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaceEmbedding {
    pub origin: Pt,
    pub ax: [i64; 3],
    pub ay: [i64; 3],
}

impl FaceEmbedding {
    pub const PLANE: FaceEmbedding = FaceEmbedding { origin: [0; 3], ax: [1, 0, 0], ay: [0, 1, 0] };

    pub fn point(&self, x: i64, y: i64) -> Pt {
        let mut p = self.origin;
        for j in 0..3 {
            p[j] += x * self.ax[j] + y * self.ay[j];
        }
        p
    }

    /// Lattice vector of the inversion about the local origin, `k(-x, -y) = -k(x, y) + λ`.
    pub fn inversion_lattice(&self, n: i64) -> [i64; 3] {
        self.origin.map(|c| c / n)
    }

    /// Lattice vector of the door relation on `x = grid_n`.
    pub fn door_lattice(&self, n: i64) -> [i64; 3] {
        let mut lam = self.inversion_lattice(n);
        for j in 0..3 {
            lam[j] += self.ax[j];
        }
        lam
    }
}

/// A unitary per grid point of the boundary loop of a (local) 2D cell.
#[derive(Clone, Debug)]
pub struct BoundaryUnitary {
    pub loop_points: Vec<Pt>,
    pub values: PointMap<CMat>,
    pub degree: i64,
}

impl BoundaryUnitary {
    pub fn new(geom: &CellGeometry, values: PointMap<CMat>) -> Result<Self> {
        let loop_points = geom.loop_2d();
        let ordered: Vec<CMat> = loop_points
            .iter()
            .map(|&p| values.get(p).unwrap_or_else(|| panic!("boundary unitary missing at {p:?}")).clone())
            .collect();
        let degree = extension::winding_degree(&ordered)?;
        Ok(Self { loop_points, values, degree })
    }
}

/// `diag(ξ, 1, …)` on the door edge with `ξ = e^{-i2πr(y + 1/2)}`, identity elsewhere.
#[derive(Clone, Debug)]
pub struct XCorrection {
    pub r: i64,
    pub values: PointMap<CMat>,
}

pub fn x_correction(geom: &CellGeometry, r: i64, m: usize) -> XCorrection {
    let n = geom.half();
    let (lo, hi) = geom.cell_bounds();
    let mut values = PointMap::new(lo, hi);
    for p in geom.loop_2d() {
        let mut x = linalg::eye(m);
        if p[0] == n && r != 0 {
            x[(0, 0)] = cis(-TAU * r as f64 * (p[1] + n) as f64 / (2 * n) as f64);
        }
        values.set(p, x);
    }
    XCorrection { r, values }
}

/// Extension of a degree-zero phase map on the 2D loop to the cell.
pub fn extend_phase_to_cell(geom: &CellGeometry, f: &PointMap<linalg::C64>) -> Result<PointMap<linalg::C64>> {
    Ok(extension::extend_phase(geom, f)?.0)
}

/// Extension of a unitary map on the 2D loop with degree-zero determinant to the cell.
pub fn extend_unitary_to_cell(geom: &CellGeometry, f: &PointMap<CMat>, m: usize, seed: u64) -> Result<(PointMap<CMat>, ExtensionReport)> {
    extension::extend_unitary(geom, f, m, seed)
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct FaceReport {
    pub embedding: Option<FaceEmbedding>,
    /// Degree of the boundary unitary before correction.
    pub degree: i64,
    pub corrected: bool,
    /// `‖Φ(v5) - τ Θ Φ(v3)‖` between the given frame and the symmetric image at the far corner.
    pub corner_mismatch: f64,
    pub door_vertex: Option<VertexRecord>,
    pub extension: ExtensionReport,
}

fn relation_error(s: u8, lambda: [i64; 3], d: usize, k: Vec<f64>, residual: f64) -> Error {
    Error::BoundaryRelationViolated { relation: Relation { s, lambda: &lambda[..d] }.to_string(), k, residual }
}

/// Fill the frames of the skeleton `S` (the line `x = 0` and the lines `y = ±1/2`) on a
/// face from vertex solutions at `(0, 0)`, `(0, -1/2)`, `(1/2, -1/2)`.
pub fn build_edge_skeleton(
    psi: &FrameField,
    store: &mut FrameField,
    emb: &FaceEmbedding,
    family: &ProjectorFamily,
) -> Result<Vec<VertexSolution>> {
    let geom = psi.geometry;
    let n = geom.half();
    let v: Vec<Pt> = [(0, 0), (0, -n), (n, -n)].iter().map(|&(x, y)| emb.point(x, y)).collect();
    let sols: Vec<VertexSolution> =
        v.iter().map(|&p| vertex::solve_vertex(psi.at(p), &geom, p, family)).collect::<Result<_>>()?;
    let w1 = UnitaryPath::new(&sols[0].u, &sols[1].u);
    let w2 = UnitaryPath::new(&sols[1].u, &sols[2].u);
    let scale = 1.0 / (2 * n) as f64;
    for y in -n..=0 {
        let p = emb.point(0, y);
        store.set(p, psi.at(p) * w1.at(-y as f64 * scale));
    }
    for x in 0..=n {
        let p = emb.point(x, -n);
        store.set(p, psi.at(p) * w2.at(x as f64 * scale));
    }
    let lam0 = emb.inversion_lattice(n);
    for y in 1..=n {
        let f = frame::sym_apply(family, 1, lam0, store.at(emb.point(0, -y)));
        store.set(emb.point(0, y), f);
    }
    for x in 1..=n {
        let f = frame::sym_apply(family, 0, emb.ay, store.at(emb.point(x, -n)));
        store.set(emb.point(x, n), f);
    }
    Ok(sols)
}

/// Residual of the skeleton relations: translation by `ay` between `y = ∓1/2` and the
/// inversion relation on `x = 0`.
pub fn skeleton_residual(store: &FrameField, emb: &FaceEmbedding, family: &ProjectorFamily) -> Result<f64> {
    let geom = store.geometry;
    let n = geom.half();
    let lam0 = emb.inversion_lattice(n);
    let mut worst = 0.0f64;
    for x in 0..=n {
        let a = store.at(emb.point(x, -n));
        let r = frame::frame_distance(store.at(emb.point(x, n)), &frame::sym_apply(family, 0, emb.ay, a));
        if r > EDGE_TOL {
            return Err(relation_error(0, emb.ay, geom.d, geom.to_k(emb.point(x, n)), r));
        }
        worst = worst.max(r);
    }
    for y in -n..=n {
        let a = store.at(emb.point(0, y));
        let r = frame::frame_distance(store.at(emb.point(0, -y)), &frame::sym_apply(family, 1, lam0, a));
        if r > EDGE_TOL {
            return Err(relation_error(1, lam0, geom.d, geom.to_k(emb.point(0, -y)), r));
        }
        worst = worst.max(r);
    }
    Ok(worst)
}

/// Complete a face from frames on its skeleton `S`: frames on the door edge `x = 1/2`
/// that satisfy the door relation, then the interior as `Ψ ◁ Ǔ` with `Ǔ` extending the
/// degree-corrected boundary unitary. Frames on `S` are left untouched.
pub fn fill_face(
    psi: &FrameField,
    store: &mut FrameField,
    emb: &FaceEmbedding,
    family: &ProjectorFamily,
    seed: u64,
) -> Result<FaceReport> {
    let geom = psi.geometry;
    let n = geom.half();
    let m = family.m;
    skeleton_residual(store, emb, family)?;
    let mut report = FaceReport { embedding: Some(*emb), ..Default::default() };

    // lower half of the door edge, then its image
    let v3 = emb.point(n, -n);
    let v4 = emb.point(n, 0);
    let u3 = frame::unitary_between(psi.at(v3), store.at(v3))?;
    let sol4 = vertex::solve_vertex(psi.at(v4), &geom, v4, family)?;
    report.door_vertex = Some(sol4.record());
    let w3 = UnitaryPath::new(&u3, &sol4.u);
    let scale = 1.0 / (2 * n) as f64;
    for y in -n + 1..=0 {
        let p = emb.point(n, y);
        store.set(p, psi.at(p) * w3.at((y + n) as f64 * scale));
    }
    let lam1 = emb.door_lattice(n);
    for y in 1..n {
        let f = frame::sym_apply(family, 1, lam1, store.at(emb.point(n, -y)));
        store.set(emb.point(n, y), f);
    }
    let v5 = emb.point(n, n);
    report.corner_mismatch = frame::frame_distance(store.at(v5), &frame::sym_apply(family, 1, lam1, store.at(v3)));
    if report.corner_mismatch > EDGE_TOL {
        return Err(relation_error(1, lam1, geom.d, geom.to_k(v5), report.corner_mismatch));
    }

    // boundary unitary in local coordinates
    let local = CellGeometry::new(2, geom.grid_n)?;
    let (lo, hi) = local.cell_bounds();
    let mut u_hat = PointMap::new(lo, hi);
    for q in local.loop_2d() {
        let p = emb.point(q[0], q[1]);
        u_hat.set(q, frame::unitary_between(psi.at(p), store.at(p))?);
    }
    let boundary = BoundaryUnitary::new(&local, u_hat)?;
    report.degree = boundary.degree;
    report.corrected = boundary.degree != 0;
    let x = x_correction(&local, boundary.degree, m);
    let mut corrected = PointMap::new(lo, hi);
    for &q in &boundary.loop_points {
        corrected.set(q, boundary.values.get(q).expect("loop") * x.values.get(q).expect("loop"));
    }
    let after = BoundaryUnitary::new(&local, corrected)?;
    if after.degree != 0 {
        return Err(Error::NonzeroDegree { degree: after.degree });
    }
    let (filled, ext) = extend_unitary_to_cell(&local, &after.values, m, seed)?;
    report.extension = ext;

    for q in local.cell_points() {
        let p = emb.point(q[0], q[1]);
        if local.on_cell_boundary(q) {
            if x.r != 0 && q[0] == n {
                let f = store.at(p) * x.values.get(q).expect("loop");
                store.set(p, f);
            }
        } else {
            store.set(p, psi.at(p) * filled.get(q).expect("interior"));
        }
    }
    Ok(report)
}

#[derive(Clone, Debug)]
pub struct Construction2d {
    pub cell: FrameField,
    pub vertices: Vec<VertexSolution>,
    pub report: FaceReport,
}

/// Symmetric frame on the 2D effective cell.
pub fn construct_2d_cell(psi: &FrameField, family: &ProjectorFamily, seed: u64) -> Result<Construction2d> {
    let geom = psi.geometry;
    if geom.d != 2 {
        return Err(Error::Unsupported(format!("2D construction called with d = {}", geom.d)));
    }
    let mut cell = FrameField::new(geom, Region::Cell, family.n, family.m);
    let emb = FaceEmbedding::PLANE;
    let vertices = build_edge_skeleton(psi, &mut cell, &emb, family)?;
    let report = fill_face(psi, &mut cell, &emb, family, seed)?;
    Ok(Construction2d { cell, vertices, report })
}

/// Symmetric frame on the closed 2-torus box.
pub fn construct_2d(psi: &FrameField, family: &ProjectorFamily, seed: u64) -> Result<FrameField> {
    let c = construct_2d_cell(psi, family, seed)?;
    crate::wannier::extend_symmetric(&c.cell, family)
}
