//! Frames, the right U(m) action, frame fields on grids and the BLF1 container.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{box_index, box_len, box_points, comb_lines, CellGeometry, Pt};
use crate::linalg::{self, hs, CMat, C64};
use crate::models::ProjectorFamily;

pub const UNITARY_TOL: f64 = 1e-10;
pub const SPAN_TOL: f64 = 1e-8;

/// `Φ ◁ U`, rejecting non-unitary `U`.
pub fn act(frame: &CMat, u: &CMat) -> Result<CMat> {
    let defect = linalg::gram_defect(u);
    if defect > UNITARY_TOL || u.nrows() != u.ncols() {
        return Err(Error::NonUnitary { defect });
    }
    Ok(frame * u)
}

pub fn theta_apply(family: &ProjectorFamily, frame: &CMat) -> CMat {
    family.theta.apply(frame)
}

pub fn tau_apply(family: &ProjectorFamily, lambda: [i64; 3], frame: &CMat) -> CMat {
    family.tau.apply(lambda, frame)
}

/// `τ_λ Θ^s Φ`.
pub fn sym_apply(family: &ProjectorFamily, s: u8, lambda: [i64; 3], frame: &CMat) -> CMat {
    if s == 0 {
        tau_apply(family, lambda, frame)
    } else {
        tau_apply(family, lambda, &theta_apply(family, frame))
    }
}

pub fn frame_distance(a: &CMat, b: &CMat) -> f64 {
    hs(&(a - b))
}

/// The unitary `U` with `Φ ◁ U = Ψ`.
pub fn unitary_between(phi: &CMat, psi: &CMat) -> Result<CMat> {
    let proj = phi * (phi.adjoint() * psi);
    let defect = hs(&(proj - psi));
    if defect > SPAN_TOL {
        return Err(Error::SpanMismatch { defect });
    }
    Ok(linalg::lowdin(&(phi.adjoint() * psi)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Region {
    Cell,
    Boundary,
    Torus,
}

impl Region {
    fn tag(self) -> u32 {
        match self {
            Region::Cell => 0,
            Region::Boundary => 1,
            Region::Torus => 2,
        }
    }

    fn from_tag(t: u32) -> Result<Self> {
        match t {
            0 => Ok(Region::Cell),
            1 => Ok(Region::Boundary),
            2 => Ok(Region::Torus),
            _ => Err(Error::Format(format!("unknown region tag {t}"))),
        }
    }
}

/// Frames on the grid points of an inclusive index box.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameField {
    pub geometry: CellGeometry,
    pub region: Region,
    pub n: usize,
    pub m: usize,
    pub lo: Pt,
    pub hi: Pt,
    data: Vec<Option<CMat>>,
}

impl FrameField {
    pub fn new(geometry: CellGeometry, region: Region, n: usize, m: usize) -> Self {
        let (lo, hi) = match region {
            Region::Cell | Region::Boundary => geometry.cell_bounds(),
            Region::Torus => geometry.torus_bounds(),
        };
        Self { geometry, region, n, m, lo, hi, data: vec![None; box_len(lo, hi)] }
    }

    pub fn get(&self, p: Pt) -> Option<&CMat> {
        box_index(self.lo, self.hi, p).and_then(|i| self.data[i].as_ref())
    }

    /// Like `get` but panics on a missing point; for internal use after construction.
    pub fn at(&self, p: Pt) -> &CMat {
        self.get(p).unwrap_or_else(|| panic!("no frame stored at {p:?}"))
    }

    pub fn set(&mut self, p: Pt, frame: CMat) {
        let i = box_index(self.lo, self.hi, p).unwrap_or_else(|| panic!("{p:?} outside field box"));
        self.data[i] = Some(frame);
    }

    pub fn contains(&self, p: Pt) -> bool {
        self.get(p).is_some()
    }

    /// Stored points in row-major order.
    pub fn points(&self) -> Vec<Pt> {
        box_points(self.lo, self.hi).into_iter().filter(|&p| self.contains(p)).collect()
    }

    pub fn len(&self) -> usize {
        self.data.iter().filter(|x| x.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Fill every point of the box from a pure per-point map, in parallel.
    pub fn fill_with<F>(&mut self, pts: &[Pt], f: F) -> Result<()>
    where
        F: Fn(Pt) -> Result<CMat> + Sync,
    {
        let vals: Vec<Result<CMat>> = pts.par_iter().map(|&p| f(p)).collect();
        for (&p, v) in pts.iter().zip(vals) {
            self.set(p, v?);
        }
        Ok(())
    }

    /// Largest distance between stored axis-neighbours.
    pub fn max_neighbour_jump(&self) -> f64 {
        let d = self.geometry.d;
        self.points()
            .par_iter()
            .map(|&p| {
                let mut best = 0.0f64;
                for j in 0..d {
                    let mut q = p;
                    q[j] += 1;
                    if let (Some(a), Some(b)) = (self.get(p), self.get(q)) {
                        best = best.max(frame_distance(a, b));
                    }
                }
                best
            })
            .reduce(|| 0.0, f64::max)
    }
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct Residuals {
    pub projector: f64,
    pub gram: f64,
    pub translation: f64,
    pub time_reversal: f64,
}

impl Residuals {
    pub fn max(&self) -> f64 {
        self.projector.max(self.gram).max(self.translation).max(self.time_reversal)
    }
}

/// `‖P(k)Φ - Φ‖` and the Gram defect for every stored point.
pub fn frame_residuals(field: &FrameField, family: &ProjectorFamily) -> Result<(f64, f64)> {
    let pts = field.points();
    let vals: Vec<Result<(f64, f64)>> = pts
        .par_iter()
        .map(|&p| {
            let phi = field.at(p);
            let k = field.geometry.to_k(p);
            let (v, _) = family.spectral_frame(&k)?;
            let proj = &v * (v.adjoint() * phi);
            Ok((hs(&(proj - phi)), linalg::gram_defect(phi)))
        })
        .collect();
    let mut out = (0.0f64, 0.0f64);
    for v in vals {
        let (a, b) = v?;
        out.0 = out.0.max(a);
        out.1 = out.1.max(b);
    }
    Ok(out)
}

/// Full certificate of a torus field: projector, Gram, `Φ(k+e_j) = τ_j Φ(k)` and
/// `Φ(-k) = ΘΦ(k)` at every grid point of the closed box.
pub fn torus_residuals(field: &FrameField, family: &ProjectorFamily) -> Result<Residuals> {
    let (projector, gram) = frame_residuals(field, family)?;
    let geom = field.geometry;
    let per = geom.period();
    let pts = field.points();
    let (translation, time_reversal) = pts
        .par_iter()
        .map(|&p| {
            let phi = field.at(p);
            let mut f2 = 0.0f64;
            for j in 0..geom.d {
                let mut q = p;
                q[j] += per;
                if let Some(b) = field.get(q) {
                    let mut lam = [0i64; 3];
                    lam[j] = 1;
                    f2 = f2.max(frame_distance(b, &tau_apply(family, lam, phi)));
                }
            }
            let neg = [-p[0], -p[1], -p[2]];
            let f3 = field.get(neg).map_or(0.0, |b| frame_distance(b, &theta_apply(family, phi)));
            (f2, f3)
        })
        .reduce(|| (0.0, 0.0), |a, b| (a.0.max(b.0), a.1.max(b.1)));
    Ok(Residuals { projector, gram, translation, time_reversal })
}

fn transport(family: &ProjectorFamily, geom: &CellGeometry, p: Pt, prev: &CMat) -> Result<CMat> {
    let k = geom.to_k(p);
    let (v, _) = family.spectral_frame(&k)?;
    let overlap = v.adjoint() * prev;
    let sigma = linalg::singular_values(&overlap).into_iter().fold(f64::INFINITY, f64::min);
    if sigma < 1e-6 {
        return Err(Error::ProjectionRankLoss { k, sigma });
    }
    Ok(linalg::lowdin(&(&v * overlap)))
}

/// Continuous input frame by discrete parallel transport along a comb: first along the
/// last axis through `k = 0`, then outwards along each earlier axis.
pub fn input_frame(family: &ProjectorFamily, geom: &CellGeometry) -> Result<FrameField> {
    comb_transport(family, geom, Region::Cell)
}

/// Same transport on the whole closed torus box (no symmetry imposed).
pub fn input_frame_torus(family: &ProjectorFamily, geom: &CellGeometry) -> Result<FrameField> {
    comb_transport(family, geom, Region::Torus)
}

fn comb_transport(family: &ProjectorFamily, geom: &CellGeometry, region: Region) -> Result<FrameField> {
    let mut field = FrameField::new(*geom, region, family.n, family.m);
    let (start, _) = family.spectral_frame(&geom.to_k([0; 3]))?;
    field.set([0; 3], linalg::lowdin(&start));
    for stage in comb_lines(field.lo, field.hi, geom.d, [0; 3]) {
        let lines: Vec<Result<Vec<(Pt, CMat)>>> = stage
            .par_iter()
            .map(|line| {
                let mut prev = field.at(line[0]).clone();
                let mut out = Vec::with_capacity(line.len() - 1);
                for &p in &line[1..] {
                    prev = transport(family, geom, p, &prev)?;
                    out.push((p, prev.clone()));
                }
                Ok(out)
            })
            .collect();
        for line in lines {
            for (p, f) in line? {
                field.set(p, f);
            }
        }
    }
    Ok(field)
}

// ---------------------------------------------------------------- BLF1

const BLF_MAGIC: &[u8; 4] = b"BLF1";
const BLF_VERSION: u32 = 1;

/// Write a field as BLF1 (layout documented in `docs/formats.md`).
pub fn write_blf(path: &Path, field: &FrameField) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_blf_to(&mut w, field)?;
    w.flush()?;
    Ok(())
}

pub fn write_blf_to<W: Write>(w: &mut W, field: &FrameField) -> Result<()> {
    let d = field.geometry.d;
    w.write_all(BLF_MAGIC)?;
    w.write_u32::<LittleEndian>(BLF_VERSION)?;
    w.write_u32::<LittleEndian>(d as u32)?;
    w.write_u32::<LittleEndian>(field.n as u32)?;
    w.write_u32::<LittleEndian>(field.m as u32)?;
    w.write_u32::<LittleEndian>(field.region.tag())?;
    w.write_u32::<LittleEndian>(field.geometry.grid_n as u32)?;
    for j in 0..d {
        w.write_i64::<LittleEndian>(field.lo[j])?;
        w.write_i64::<LittleEndian>(field.hi[j])?;
    }
    let pts = field.points();
    w.write_u64::<LittleEndian>(pts.len() as u64)?;
    for p in pts {
        for &c in p.iter().take(d) {
            w.write_i64::<LittleEndian>(c)?;
        }
        let f = field.at(p);
        for col in 0..field.m {
            for row in 0..field.n {
                let z = f[(row, col)];
                w.write_f64::<LittleEndian>(z.re)?;
                w.write_f64::<LittleEndian>(z.im)?;
            }
        }
    }
    Ok(())
}

pub fn read_blf(path: &Path) -> Result<FrameField> {
    read_blf_from(&mut BufReader::new(File::open(path)?))
}

pub fn read_blf_from<R: Read>(r: &mut R) -> Result<FrameField> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != BLF_MAGIC {
        return Err(Error::Format("not a BLF1 file".into()));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != BLF_VERSION {
        return Err(Error::Format(format!("unsupported BLF1 version {version}")));
    }
    let d = r.read_u32::<LittleEndian>()? as usize;
    let n = r.read_u32::<LittleEndian>()? as usize;
    let m = r.read_u32::<LittleEndian>()? as usize;
    let region = Region::from_tag(r.read_u32::<LittleEndian>()?)?;
    let grid_n = r.read_u32::<LittleEndian>()? as usize;
    let geometry = CellGeometry::new(d, grid_n).map_err(|e| Error::Format(e.to_string()))?;
    let mut field = FrameField::new(geometry, region, n, m);
    for j in 0..d {
        let lo = r.read_i64::<LittleEndian>()?;
        let hi = r.read_i64::<LittleEndian>()?;
        if lo != field.lo[j] || hi != field.hi[j] {
            return Err(Error::Format(format!("axis {j} bounds [{lo}, {hi}] do not match the region")));
        }
    }
    let count = r.read_u64::<LittleEndian>()?;
    for _ in 0..count {
        let mut p = [0i64; 3];
        for c in p.iter_mut().take(d) {
            *c = r.read_i64::<LittleEndian>()?;
        }
        if box_index(field.lo, field.hi, p).is_none() {
            return Err(Error::Format(format!("point {p:?} outside the field box")));
        }
        let mut f = CMat::zeros(n, m);
        for col in 0..m {
            for row in 0..n {
                let re = r.read_f64::<LittleEndian>()?;
                let im = r.read_f64::<LittleEndian>()?;
                f[(row, col)] = C64::new(re, im);
            }
        }
        field.set(p, f);
    }
    Ok(field)
}
