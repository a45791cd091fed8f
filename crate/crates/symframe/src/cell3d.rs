//! The three-dimensional construction: frames on the boundary of the effective cell
//! assembled face by face, then filled through the sphere-to-ball extension.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extension::{self, ExtensionReport, LiftReport};
use crate::face2d::{self, FaceEmbedding, FaceReport};
use crate::frame::{self, FrameField, Region};
use crate::geometry::{CellGeometry, PointMap, Pt};
use crate::linalg::{CMat, C64};
use crate::models::ProjectorFamily;
use crate::vertex::{self, VertexRecord, VertexSolution};
use crate::wannier;

const E1: [i64; 3] = [1, 0, 0];
const E2: [i64; 3] = [0, 1, 0];
const E3: [i64; 3] = [0, 0, 1];

fn neg(a: [i64; 3]) -> [i64; 3] {
    a.map(|x| -x)
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct BoundaryReport {
    /// The face `k_1 = 0`, the small faces `k_3 = 1/2` and `k_2 = 1/2`, and the door `k_2 ≥ 0` of `k_1 = 1/2`.
    pub faces: Vec<FaceReport>,
    pub face_vertices: Vec<VertexRecord>,
    pub edge_vertex: Option<VertexRecord>,
    pub relation_residual: f64,
    pub max_seam_jump: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct Construction3dReport {
    pub boundary: BoundaryReport,
    pub extension: ExtensionReport,
}

#[derive(Clone, Debug)]
pub struct Construction3d {
    pub cell: FrameField,
    pub vertices: Vec<VertexSolution>,
    pub report: Construction3dReport,
}

fn copy_face(store: &mut FrameField, family: &ProjectorFamily, pts: &[Pt], src: impl Fn(Pt) -> Pt, s: u8, lam: [i64; 3]) {
    for &p in pts {
        let f = frame::sym_apply(family, s, lam, store.at(src(p)));
        store.set(p, f);
    }
}

/// Symmetric frames on every boundary grid point of the 3D effective cell.
pub fn construct_boundary_3d(psi: &FrameField, family: &ProjectorFamily, seed: u64) -> Result<(FrameField, Vec<VertexSolution>, BoundaryReport)> {
    let geom = psi.geometry;
    if geom.d != 3 {
        return Err(Error::Unsupported(format!("3D construction called with d = {}", geom.d)));
    }
    let n = geom.half();
    let mut store = FrameField::new(geom, Region::Boundary, family.n, family.m);
    let mut report = BoundaryReport::default();
    let range = |a: i64, b: i64| -> Vec<i64> { (a..=b).collect() };

    // the face k_1 = 0 as a 2D problem, half of it by inversion
    let f10 = FaceEmbedding { origin: [0; 3], ax: E2, ay: E3 };
    let mut vertices = face2d::build_edge_skeleton(psi, &mut store, &f10, family)?;
    report.face_vertices = vertices.iter().map(|v| v.record()).collect();
    report.faces.push(face2d::fill_face(psi, &mut store, &f10, family, seed)?);
    let half: Vec<Pt> = range(-n, -1).into_iter().flat_map(|y| range(-n, n).into_iter().map(move |z| [0, y, z])).collect();
    copy_face(&mut store, family, &half, |p| [0, -p[1], -p[2]], 1, [0; 3]);

    // the edge k_2 = k_3 = 1/2 by interpolation towards its far TRIM
    let edge: Vec<Pt> = range(0, n).into_iter().map(|x| [x, n, n]).collect();
    let u0 = frame::unitary_between(psi.at(edge[0]), store.at(edge[0]))?;
    let frames: Vec<CMat> = edge.iter().map(|&p| psi.at(p) * &u0).collect();
    let (frames, sol) = vertex::edge_to_trim(&frames, &edge, &geom, family)?;
    report.edge_vertex = Some(sol.record());
    vertices.push(sol);
    for (&p, f) in edge.iter().zip(frames).skip(1) {
        store.set(p, f);
    }
    // and its translates
    for (dy, dz) in [(-1, 1), (1, -1), (-1, -1)] {
        let pts: Vec<Pt> = range(1, n).into_iter().map(|x| [x, dy * n, dz * n]).collect();
        let lam = [0, (dy - 1) / 2, (dz - 1) / 2];
        copy_face(&mut store, family, &pts, |p| [p[0], n, n], 0, lam);
    }

    // small faces k_3 = 1/2 and k_2 = 1/2, then their translates
    let f3p = FaceEmbedding { origin: [0, 0, n], ax: E1, ay: E2 };
    report.faces.push(face2d::fill_face(psi, &mut store, &f3p, family, seed.wrapping_add(1))?);
    let f2p = FaceEmbedding { origin: [0, n, 0], ax: E1, ay: E3 };
    report.faces.push(face2d::fill_face(psi, &mut store, &f2p, family, seed.wrapping_add(2))?);
    let f3m: Vec<Pt> = range(1, n).into_iter().flat_map(|x| range(-n + 1, n - 1).into_iter().map(move |y| [x, y, -n])).collect();
    copy_face(&mut store, family, &f3m, |p| [p[0], p[1], n], 0, neg(E3));
    let f2m: Vec<Pt> = range(1, n).into_iter().flat_map(|x| range(-n + 1, n - 1).into_iter().map(move |z| [x, -n, z])).collect();
    copy_face(&mut store, family, &f2m, |p| [p[0], n, p[2]], 0, neg(E2));

    // the face k_1 = 1/2: its upper door by `fill_face`, the lower door by the door relation
    let door = FaceEmbedding { origin: [n, n, 0], ax: neg(E2), ay: E3 };
    report.faces.push(face2d::fill_face(psi, &mut store, &door, family, seed.wrapping_add(3))?);
    let lower: Vec<Pt> = range(-n + 1, -1).into_iter().flat_map(|y| range(-n + 1, n - 1).into_iter().map(move |z| [n, y, z])).collect();
    copy_face(&mut store, family, &lower, |p| [n, -p[1], -p[2]], 1, E1);

    report.relation_residual = wannier::check_boundary_relations(&store, family, wannier::RELATION_TOL)?;
    report.max_seam_jump = store.max_neighbour_jump();
    Ok((store, vertices, report))
}

/// Phase field on the 3D cell extending a phase map on its boundary.
pub fn extend_sphere_phase(geom: &CellGeometry, f: &PointMap<C64>) -> Result<(PointMap<C64>, LiftReport)> {
    extension::extend_phase(geom, f)
}

/// Unitary field on the 3D cell extending a unitary map on its boundary.
pub fn extend_sphere_unitary(geom: &CellGeometry, f: &PointMap<CMat>, m: usize, seed: u64) -> Result<(PointMap<CMat>, ExtensionReport)> {
    extension::extend_unitary(geom, f, m, seed)
}

/// Symmetric frame on the 3D effective cell.
pub fn construct_3d_cell(psi: &FrameField, family: &ProjectorFamily, seed: u64) -> Result<Construction3d> {
    let geom = psi.geometry;
    let (boundary, vertices, breport) = construct_boundary_3d(psi, family, seed)?;
    let (lo, hi) = geom.cell_bounds();
    let mut u_hat = PointMap::new(lo, hi);
    for p in geom.boundary_points() {
        u_hat.set(p, frame::unitary_between(psi.at(p), boundary.at(p))?);
    }
    let (filled, ext) = extend_sphere_unitary(&geom, &u_hat, family.m, seed.wrapping_add(4))?;
    let mut cell = FrameField::new(geom, Region::Cell, family.n, family.m);
    for p in geom.cell_points() {
        let f = match boundary.get(p) {
            Some(b) => b.clone(),
            None => psi.at(p) * filled.get(p).expect("interior"),
        };
        cell.set(p, f);
    }
    Ok(Construction3d { cell, vertices, report: Construction3dReport { boundary: breport, extension: ext } })
}

/// Symmetric frame on the closed 3-torus box.
pub fn construct_3d(psi: &FrameField, family: &ProjectorFamily, seed: u64) -> Result<FrameField> {
    let c = construct_3d_cell(psi, family, seed)?;
    wannier::extend_symmetric(&c.cell, family)
}
