//! Effective unit cell bookkeeping in adapted coordinates.
//!
//! Points are integer vectors in units of the grid step `h = 1/(2 grid_n)`, so the
//! lattice is `2 grid_n Z^d`, the half-cell coordinate is `grid_n`, and every TRIM is a
//! grid point. Unused trailing coordinates (for d < 3) stay zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Pt = [i64; 3];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellGeometry {
    pub d: usize,
    pub grid_n: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ReducedPoint {
    pub k_prime: Pt,
    pub lambda: [i64; 3],
    pub s: u8,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Side {
    Zero,
    Minus,
    Plus,
}

/// Side of the effective cell where coordinate `axis` (zero-based) is 0, or at its lower or
/// upper end: an edge in d = 2, a face in d = 3.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Component {
    pub axis: usize,
    pub side: Side,
}

impl Component {
    pub fn label(&self) -> String {
        let s = match self.side {
            Side::Zero => "0",
            Side::Minus => "-",
            Side::Plus => "+",
        };
        format!("{},{}", self.axis + 1, s)
    }
}

/// Oriented piece of the loop around the 2D effective cell.
#[derive(Clone, Debug, PartialEq)]
pub struct Edge {
    pub name: &'static str,
    pub from: [f64; 2],
    pub to: [f64; 2],
    pub component: Component,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Door {
    Plus,
    Minus,
}

impl CellGeometry {
    pub fn new(d: usize, grid_n: usize) -> Result<Self> {
        if !(1..=3).contains(&d) {
            return Err(Error::Unsupported(format!("dimension {d}")));
        }
        if grid_n < 2 || grid_n % 2 != 0 {
            return Err(Error::Unsupported(format!("grid_n = {grid_n} must be even and >= 2")));
        }
        Ok(Self { d, grid_n })
    }

    pub fn step(&self) -> f64 {
        1.0 / (2.0 * self.grid_n as f64)
    }

    pub fn half(&self) -> i64 {
        self.grid_n as i64
    }

    pub fn period(&self) -> i64 {
        2 * self.grid_n as i64
    }

    pub fn to_k(&self, p: Pt) -> Vec<f64> {
        let h = self.step();
        (0..self.d).map(|j| p[j] as f64 * h).collect()
    }

    pub fn from_k(&self, k: &[f64]) -> Result<Pt> {
        let h = self.step();
        let mut p = [0i64; 3];
        for j in 0..self.d {
            let x = k[j] / h;
            let r = x.round();
            if (x - r).abs() > 1e-9 {
                return Err(Error::OffGrid { k: k.to_vec(), step: h });
            }
            p[j] = r as i64;
        }
        Ok(p)
    }

    /// `(-1)^s p + lambda` with lambda in lattice units.
    pub fn act(&self, s: u8, lambda: [i64; 3], p: Pt) -> Pt {
        let sign = if s == 0 { 1 } else { -1 };
        let per = self.period();
        let mut q = [0i64; 3];
        for j in 0..self.d {
            q[j] = sign * p[j] + lambda[j] * per;
        }
        q
    }

    /// Inclusive index bounds of the effective cell.
    pub fn cell_bounds(&self) -> (Pt, Pt) {
        let n = self.half();
        let mut lo = [0i64; 3];
        let mut hi = [0i64; 3];
        hi[0] = n;
        for j in 1..self.d {
            lo[j] = -n;
            hi[j] = n;
        }
        (lo, hi)
    }

    /// Inclusive bounds of the closed torus box [-1/2, 1/2]^d.
    pub fn torus_bounds(&self) -> (Pt, Pt) {
        let n = self.half();
        let mut lo = [0i64; 3];
        let mut hi = [0i64; 3];
        for j in 0..self.d {
            lo[j] = -n;
            hi[j] = n;
        }
        (lo, hi)
    }

    pub fn in_cell(&self, p: Pt) -> bool {
        let (lo, hi) = self.cell_bounds();
        (0..3).all(|j| p[j] >= lo[j] && p[j] <= hi[j])
    }

    pub fn on_cell_boundary(&self, p: Pt) -> bool {
        self.in_cell(p) && !self.components(p).is_empty()
    }

    /// Boundary components of the effective cell containing `p`.
    pub fn components(&self, p: Pt) -> Vec<Component> {
        let n = self.half();
        let mut out = Vec::new();
        if !self.in_cell(p) {
            return out;
        }
        if p[0] == 0 {
            out.push(Component { axis: 0, side: Side::Zero });
        }
        if p[0] == n {
            out.push(Component { axis: 0, side: Side::Plus });
        }
        for j in 1..self.d {
            if p[j] == -n {
                out.push(Component { axis: j, side: Side::Minus });
            }
            if p[j] == n {
                out.push(Component { axis: j, side: Side::Plus });
            }
        }
        out
    }

    pub fn cell_points(&self) -> Vec<Pt> {
        let (lo, hi) = self.cell_bounds();
        box_points(lo, hi)
    }

    pub fn boundary_points(&self) -> Vec<Pt> {
        self.cell_points().into_iter().filter(|&p| self.on_cell_boundary(p)).collect()
    }

    pub fn torus_points(&self) -> Vec<Pt> {
        let (lo, hi) = self.torus_bounds();
        box_points(lo, hi)
    }

    /// Canonical decomposition `p = (-1)^s k' + lambda` with `k'` in the effective cell.
    /// Ties prefer `s = 0`, then the lexicographically smallest `lambda`.
    pub fn reduce(&self, p: Pt) -> ReducedPoint {
        for s in 0..2u8 {
            if let Some(lambda) = self.smallest_lambda(s, p) {
                let k_prime = self.act(s, [0; 3], self.sub_lattice(p, lambda));
                return ReducedPoint { k_prime, lambda, s };
            }
        }
        unreachable!("every point reduces with s = 1")
    }

    fn sub_lattice(&self, p: Pt, lambda: [i64; 3]) -> Pt {
        let per = self.period();
        let mut q = p;
        for j in 0..self.d {
            q[j] -= lambda[j] * per;
        }
        q
    }

    fn smallest_lambda(&self, s: u8, p: Pt) -> Option<[i64; 3]> {
        let (lo, hi) = self.cell_bounds();
        let per = self.period();
        let mut lambda = [0i64; 3];
        for j in 0..self.d {
            // (-1)^s (p_j - per * l) in [lo_j, hi_j]
            let (a, b) = if s == 0 { (p[j] - hi[j], p[j] - lo[j]) } else { (p[j] + lo[j], p[j] + hi[j]) };
            let l = a.div_euclid(per) + i64::from(a.rem_euclid(per) != 0);
            if l * per > b {
                return None;
            }
            lambda[j] = l;
        }
        Some(lambda)
    }

    /// TRIMs of the effective cell as grid points, sorted.
    pub fn trim_points(&self) -> Vec<Pt> {
        let n = self.half();
        let mut out: Vec<Pt> = self
            .cell_points()
            .into_iter()
            .filter(|p| (0..self.d).all(|j| p[j] % n == 0))
            .collect();
        out.sort();
        out
    }

    /// Wrap into the half-open torus domain [-1/2, 1/2)^d.
    pub fn wrap(&self, p: Pt) -> Pt {
        let n = self.half();
        let per = self.period();
        let mut q = p;
        for j in 0..self.d {
            q[j] = (p[j] + n).rem_euclid(per) - n;
        }
        q
    }

    pub fn door(&self, p: Pt) -> Option<Door> {
        if self.d != 3 || p[0] != self.half() || !self.in_cell(p) {
            return None;
        }
        if p[1] >= 0 {
            Some(Door::Plus)
        } else {
            Some(Door::Minus)
        }
    }

    /// Grid points of the closed loop v1 -> v2 -> ... -> v6 (v1 not repeated), d = 2.
    pub fn loop_2d(&self) -> Vec<Pt> {
        let n = self.half();
        let corners: [[i64; 2]; 7] = [[0, 0], [0, -n], [n, -n], [n, 0], [n, n], [0, n], [0, 0]];
        let mut out = Vec::new();
        for w in corners.windows(2) {
            let (a, b) = (w[0], w[1]);
            let len = (b[0] - a[0]).abs().max((b[1] - a[1]).abs());
            for t in 0..len {
                out.push([
                    a[0] + (b[0] - a[0]).signum() * t,
                    a[1] + (b[1] - a[1]).signum() * t,
                    0,
                ]);
            }
        }
        out
    }
}

pub fn box_points(lo: Pt, hi: Pt) -> Vec<Pt> {
    let mut out = Vec::new();
    for a in lo[0]..=hi[0] {
        for b in lo[1]..=hi[1] {
            for c in lo[2]..=hi[2] {
                out.push([a, b, c]);
            }
        }
    }
    out
}

/// Row-major index of `p` in the inclusive box `[lo, hi]`.
pub fn box_index(lo: Pt, hi: Pt, p: Pt) -> Option<usize> {
    let mut idx = 0usize;
    for j in 0..3 {
        if p[j] < lo[j] || p[j] > hi[j] {
            return None;
        }
        let len = (hi[j] - lo[j] + 1) as usize;
        idx = idx * len + (p[j] - lo[j]) as usize;
    }
    Some(idx)
}

pub fn box_len(lo: Pt, hi: Pt) -> usize {
    (0..3).map(|j| (hi[j] - lo[j] + 1) as usize).product()
}

/// TRIMs of the effective cell in exact half-integer coordinates.
pub fn trims(d: usize) -> Vec<Vec<f64>> {
    let geom = CellGeometry { d, grid_n: 2 };
    geom.trim_points().into_iter().map(|p| geom.to_k(p)).collect()
}

pub fn vertices_2d() -> [[f64; 2]; 6] {
    [[0.0, 0.0], [0.0, -0.5], [0.5, -0.5], [0.5, 0.0], [0.5, 0.5], [0.0, 0.5]]
}

pub fn edges_2d() -> Vec<Edge> {
    let v = vertices_2d();
    let comp = |axis, side| Component { axis, side };
    let names = ["E1", "E2", "E3", "E4", "E5", "E6"];
    let comps = [
        comp(0, Side::Zero),
        comp(1, Side::Minus),
        comp(0, Side::Plus),
        comp(0, Side::Plus),
        comp(1, Side::Plus),
        comp(0, Side::Zero),
    ];
    (0..6)
        .map(|i| Edge { name: names[i], from: v[i], to: v[(i + 1) % 6], component: comps[i] })
        .collect()
}

/// The six boundary faces of the 3D effective cell.
pub fn faces_3d() -> Vec<Component> {
    vec![
        Component { axis: 0, side: Side::Zero },
        Component { axis: 0, side: Side::Plus },
        Component { axis: 1, side: Side::Minus },
        Component { axis: 1, side: Side::Plus },
        Component { axis: 2, side: Side::Minus },
        Component { axis: 2, side: Side::Plus },
    ]
}

/// Values attached to some grid points of an inclusive box.
#[derive(Clone, Debug, PartialEq)]
pub struct PointMap<T> {
    pub lo: Pt,
    pub hi: Pt,
    data: Vec<Option<T>>,
}

impl<T: Clone> PointMap<T> {
    pub fn new(lo: Pt, hi: Pt) -> Self {
        Self { lo, hi, data: vec![None; box_len(lo, hi)] }
    }

    pub fn get(&self, p: Pt) -> Option<&T> {
        box_index(self.lo, self.hi, p).and_then(|i| self.data[i].as_ref())
    }

    pub fn set(&mut self, p: Pt, v: T) {
        let i = box_index(self.lo, self.hi, p).unwrap_or_else(|| panic!("{p:?} outside point map"));
        self.data[i] = Some(v);
    }

    pub fn points(&self) -> Vec<Pt> {
        box_points(self.lo, self.hi).into_iter().filter(|&p| self.get(p).is_some()).collect()
    }
}

/// Lines of a comb covering the box `[lo, hi]` in the first `d` axes: first the line
/// through `start` along the last axis, then lines along each earlier axis through
/// every point already covered. Each line starts at a covered point.
pub fn comb_lines(lo: Pt, hi: Pt, d: usize, start: Pt) -> Vec<Vec<Vec<Pt>>> {
    let mut covered = vec![start];
    let mut stages = Vec::new();
    for axis in (0..d).rev() {
        let mut lines = Vec::new();
        let mut next = covered.clone();
        for &s in &covered {
            for dir in [1i64, -1] {
                let mut line = vec![s];
                let mut p = s;
                loop {
                    p[axis] += dir;
                    if p[axis] < lo[axis] || p[axis] > hi[axis] {
                        break;
                    }
                    line.push(p);
                    next.push(p);
                }
                if line.len() > 1 {
                    lines.push(line);
                }
            }
        }
        next.sort();
        covered = next;
        stages.push(lines);
    }
    stages
}
