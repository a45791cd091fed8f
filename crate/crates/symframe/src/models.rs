//! Tight-binding projector families, built-in models, config loading and assumption checks.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CellGeometry, Pt};
use crate::linalg::{self, cis, hs, CMat, C64};

pub const DEFAULT_GAP_TOLERANCE: f64 = 1e-8;

/// Antiunitary time reversal `Θ v = C conj(v)`.
#[derive(Clone, Debug, PartialEq)]
pub enum Theta {
    Conjugation,
    Unitary(CMat),
}

impl Theta {
    pub fn apply(&self, a: &CMat) -> CMat {
        match self {
            Theta::Conjugation => linalg::conj(a),
            Theta::Unitary(c) => c * linalg::conj(a),
        }
    }

    /// `Θ P Θ^{-1}` for an operator `P`.
    pub fn conjugate_op(&self, p: &CMat) -> CMat {
        match self {
            Theta::Conjugation => linalg::conj(p),
            Theta::Unitary(c) => c * linalg::conj(p) * c.adjoint(),
        }
    }

    pub fn is_plain(&self) -> bool {
        matches!(self, Theta::Conjugation)
    }
}

/// Unitary representation of the lattice translations.
#[derive(Clone, Debug, PartialEq)]
pub enum Tau {
    Identity,
    Generators(Vec<CMat>),
}

impl Tau {
    pub fn is_identity(&self) -> bool {
        matches!(self, Tau::Identity)
    }

    pub fn matrix(&self, lambda: [i64; 3], n: usize) -> CMat {
        match self {
            Tau::Identity => linalg::eye(n),
            Tau::Generators(gens) => {
                let mut out = linalg::eye(n);
                for (j, g) in gens.iter().enumerate() {
                    let l = lambda[j];
                    let base = if l >= 0 { g.clone() } else { g.adjoint() };
                    for _ in 0..l.unsigned_abs() {
                        out = &base * out;
                    }
                }
                out
            }
        }
    }

    pub fn apply(&self, lambda: [i64; 3], a: &CMat) -> CMat {
        if self.is_identity() || lambda == [0; 3] {
            return a.clone();
        }
        self.matrix(lambda, a.nrows()) * a
    }
}

#[derive(Clone, Debug)]
pub struct Hopping {
    pub r: [i64; 3],
    pub h: CMat,
}

#[derive(Clone, Debug)]
pub struct ProjectorFamily {
    pub name: String,
    pub d: usize,
    pub n: usize,
    pub m: usize,
    pub hoppings: Vec<Hopping>,
    pub theta: Theta,
    pub tau: Tau,
    pub gap_tolerance: f64,
}

impl ProjectorFamily {
    pub fn hamiltonian(&self, k: &[f64]) -> CMat {
        let mut h = CMat::zeros(self.n, self.n);
        for hop in &self.hoppings {
            let phase: f64 = (0..self.d).map(|j| k[j] * hop.r[j] as f64).sum::<f64>() * TAU;
            h += &hop.h * cis(phase);
        }
        h
    }

    /// Lowest `m` eigenvectors of `H(k)` and the gap above them.
    pub fn spectral_frame(&self, k: &[f64]) -> Result<(CMat, f64)> {
        let (vals, vecs) = linalg::eigh(&self.hamiltonian(k));
        let (lower, upper) = (vals[self.m - 1], vals[self.m]);
        if upper - lower < self.gap_tolerance {
            return Err(Error::GapClosed { k: k.to_vec(), lower, upper });
        }
        Ok((vecs.columns(0, self.m).into_owned(), upper - lower))
    }

    pub fn projector(&self, k: &[f64]) -> Result<CMat> {
        let (v, _) = self.spectral_frame(k)?;
        Ok(&v * v.adjoint())
    }

    pub fn theta_frame(&self, a: &CMat) -> CMat {
        self.theta.apply(a)
    }

    pub fn tau_frame(&self, lambda: [i64; 3], a: &CMat) -> CMat {
        self.tau.apply(lambda, a)
    }

    /// Every violated structural invariant, in a stable order.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let n = self.n;
        if !(1..=3).contains(&self.d) {
            out.push(format!("dimension d = {} must be 1, 2 or 3", self.d));
        }
        if n == 0 {
            out.push("ambient dimension n must be positive".into());
        }
        if self.m == 0 || self.m >= n.max(1) {
            out.push(format!("rank m = {} must satisfy 1 <= m < n = {n}", self.m));
        }
        if self.hoppings.is_empty() {
            out.push("hoppings map is empty".into());
        }
        if !(self.gap_tolerance > 0.0) {
            out.push(format!("gap_tolerance {} must be positive", self.gap_tolerance));
        }
        let mut by_r: BTreeMap<[i64; 3], &CMat> = BTreeMap::new();
        for hop in &self.hoppings {
            if hop.h.nrows() != n || hop.h.ncols() != n {
                out.push(format!("hopping R = {:?} has shape {}x{}, expected {n}x{n}", &hop.r[..self.d.min(3)], hop.h.nrows(), hop.h.ncols()));
                continue;
            }
            if by_r.insert(hop.r, &hop.h).is_some() {
                out.push(format!("hopping R = {:?} listed twice", &hop.r[..self.d.min(3)]));
            }
        }
        for (r, h) in &by_r {
            let neg = [-r[0], -r[1], -r[2]];
            match by_r.get(&neg) {
                Some(hn) => {
                    let defect = hs(&(*hn - h.adjoint()));
                    if defect > 1e-12 {
                        out.push(format!("non-Hermitian hoppings: H(-R) != H(R)^dagger for R = {:?} (defect {defect:.3e})", &r[..self.d.min(3)]));
                    }
                }
                None => out.push(format!("non-Hermitian hoppings: R = {:?} has no partner -R", &r[..self.d.min(3)])),
            }
        }
        if let Theta::Unitary(c) = &self.theta {
            if c.nrows() != n || c.ncols() != n {
                out.push(format!("theta unitary has shape {}x{}, expected {n}x{n}", c.nrows(), c.ncols()));
            } else {
                let u = linalg::gram_defect(c);
                if u > 1e-10 {
                    out.push(format!("theta unitary is not unitary (defect {u:.3e})"));
                }
                let s = linalg::symmetry_defect(c);
                if s > 1e-10 {
                    out.push(format!("theta unitary is not symmetric (defect {s:.3e})"));
                }
                let sq = hs(&(c * linalg::conj(c) - linalg::eye(n)));
                if sq > 1e-10 {
                    out.push(format!("theta squared is not the identity (defect {sq:.3e})"));
                }
            }
        }
        if let Tau::Generators(gens) = &self.tau {
            if gens.len() != self.d {
                out.push(format!("tau has {} generators, expected {}", gens.len(), self.d));
            }
            let shaped: Vec<&CMat> = gens.iter().filter(|g| g.nrows() == n && g.ncols() == n).collect();
            if shaped.len() != gens.len() {
                out.push(format!("tau generators must be {n}x{n}"));
            } else {
                for (j, g) in gens.iter().enumerate() {
                    let u = linalg::gram_defect(g);
                    if u > 1e-10 {
                        out.push(format!("tau generator {} is not unitary (defect {u:.3e})", j + 1));
                    }
                    for (i, g2) in gens.iter().enumerate().skip(j + 1) {
                        let c = hs(&(g * g2 - g2 * g));
                        if c > 1e-10 {
                            out.push(format!("tau generators {} and {} do not commute (defect {c:.3e})", j + 1, i + 1));
                        }
                    }
                }
                if self.theta_ok_shape() {
                    for (j, g) in gens.iter().enumerate() {
                        let r = compat_residual(&self.theta, g);
                        if r > 1e-10 {
                            out.push(format!("theta tau_{0} != tau_{0}^-1 theta (defect {r:.3e})", j + 1));
                        }
                    }
                }
            }
        }
        out
    }

    fn theta_ok_shape(&self) -> bool {
        match &self.theta {
            Theta::Conjugation => true,
            Theta::Unitary(c) => c.nrows() == self.n && c.ncols() == self.n,
        }
    }

    pub fn validate(self) -> Result<Self> {
        let v = self.violations();
        if v.is_empty() {
            Ok(self)
        } else {
            Err(Error::InvalidConfig(v))
        }
    }
}

/// `‖Θ τ - τ^{-1} Θ‖` as operators: `‖C conj(τ) - τ† C‖`.
fn compat_residual(theta: &Theta, g: &CMat) -> f64 {
    let n = g.nrows();
    let c = match theta {
        Theta::Conjugation => linalg::eye(n),
        Theta::Unitary(c) => c.clone(),
    };
    hs(&(&c * linalg::conj(g) - g.adjoint() * &c))
}

pub fn evaluate_projector(family: &ProjectorFamily, k: &[f64]) -> Result<CMat> {
    family.projector(k)
}

#[cfg(test)]
fn real(rows: &[&[f64]]) -> CMat {
    let n = rows.len();
    CMat::from_fn(n, rows[0].len(), |i, j| C64::new(rows[i][j], 0.0))
}

/// Haldane's honeycomb model with nearest neighbour `t1`, complex next-nearest
/// neighbour `t2 e^{±iφ}` and staggered mass, on the lower band.
pub fn haldane(t1: f64, t2: f64, phi: f64, mass: f64) -> ProjectorFamily {
    let mut hops: BTreeMap<[i64; 3], CMat> = BTreeMap::new();
    let mut add = |r: [i64; 3], a: usize, b: usize, v: C64| {
        let e = hops.entry(r).or_insert_with(|| CMat::zeros(2, 2));
        e[(a, b)] += v;
    };
    add([0, 0, 0], 0, 0, C64::new(mass, 0.0));
    add([0, 0, 0], 1, 1, C64::new(-mass, 0.0));
    for r in [[0, 0, 0], [-1, 0, 0], [0, -1, 0]] {
        add(r, 0, 1, C64::new(t1, 0.0));
        add([-r[0], -r[1], 0], 1, 0, C64::new(t1, 0.0));
    }
    for b in [[1, 0, 0], [-1, 1, 0], [0, -1, 0]] {
        let nb = [-b[0], -b[1], 0];
        add(b, 0, 0, cis(phi) * t2);
        add(nb, 0, 0, cis(-phi) * t2);
        add(b, 1, 1, cis(-phi) * t2);
        add(nb, 1, 1, cis(phi) * t2);
    }
    ProjectorFamily {
        name: format!("haldane(t1={t1}, t2={t2}, phi={phi}, M={mass})"),
        d: 2,
        n: 2,
        m: 1,
        hoppings: hops.into_iter().map(|(r, h)| Hopping { r, h }).collect(),
        theta: Theta::Conjugation,
        tau: Tau::Identity,
        gap_tolerance: DEFAULT_GAP_TOLERANCE,
    }
}

/// The `k_2 = 0` line of a two-dimensional family, as a one-dimensional family.
pub fn line_slice(family: &ProjectorFamily) -> ProjectorFamily {
    let mut hops: BTreeMap<[i64; 3], CMat> = BTreeMap::new();
    for hop in &family.hoppings {
        let e = hops.entry([hop.r[0], 0, 0]).or_insert_with(|| CMat::zeros(family.n, family.n));
        *e += &hop.h;
    }
    ProjectorFamily {
        name: format!("{} on the k2 = 0 line", family.name),
        d: 1,
        hoppings: hops.into_iter().map(|(r, h)| Hopping { r, h }).collect(),
        tau: Tau::Identity,
        ..family.clone()
    }
}

/// Reproducible real-hopping family. The onsite term separates the lowest `m`
/// states by 2; random hoppings are rescaled so their summed norm is `strength`.
pub fn random_trs(d: usize, n: usize, m: usize, range: i64, strength: f64, seed: u64) -> ProjectorFamily {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let window: Vec<[i64; 3]> = crate::geometry::box_points(
        [-range, if d > 1 { -range } else { 0 }, if d > 2 { -range } else { 0 }],
        [range, if d > 1 { range } else { 0 }, if d > 2 { range } else { 0 }],
    );
    let mut raw: BTreeMap<[i64; 3], CMat> = BTreeMap::new();
    for &r in &window {
        raw.insert(r, CMat::from_fn(n, n, |_, _| C64::new(rng.random_range(-1.0..1.0), 0.0)));
    }
    let mut hops: BTreeMap<[i64; 3], CMat> = BTreeMap::new();
    for (&r, h) in &raw {
        let neg = [-r[0], -r[1], -r[2]];
        hops.insert(r, (h + raw[&neg].adjoint()) * C64::new(0.5, 0.0));
    }
    let total: f64 = hops.values().map(|h| linalg::singular_values(h)[0]).sum();
    let scale = if total > 0.0 { strength / total } else { 0.0 };
    for h in hops.values_mut() {
        *h *= C64::new(scale, 0.0);
    }
    // onsite splitting in a random real orthogonal basis
    let g = CMat::from_fn(n, n, |_, _| C64::new(rng.random_range(-1.0..1.0), 0.0));
    let o = linalg::lowdin(&g).map(|z| C64::new(z.re, 0.0));
    let o = linalg::lowdin(&o);
    let split = CMat::from_diagonal(&nalgebra::DVector::from_iterator(
        n,
        (0..n).map(|i| C64::new(if i < m { -1.0 } else { 1.0 }, 0.0)),
    ));
    *hops.get_mut(&[0, 0, 0]).expect("onsite") += &o * split * o.transpose();
    ProjectorFamily {
        name: format!("random-trs(d={d}, n={n}, m={m}, range={range}, seed={seed})"),
        d,
        n,
        m,
        hoppings: hops.into_iter().map(|(r, h)| Hopping { r, h }).collect(),
        theta: Theta::Conjugation,
        tau: Tau::Identity,
        gap_tolerance: DEFAULT_GAP_TOLERANCE,
    }
}

/// Constant real family `H = diag(-1, .., -1, 1, .., 1)`.
pub fn constant_real(d: usize, n: usize, m: usize) -> ProjectorFamily {
    let h = CMat::from_diagonal(&nalgebra::DVector::from_iterator(
        n,
        (0..n).map(|i| C64::new(if i < m { -1.0 } else { 1.0 }, 0.0)),
    ));
    ProjectorFamily {
        name: format!("constant(d={d}, n={n}, m={m})"),
        d,
        n,
        m,
        hoppings: vec![Hopping { r: [0; 3], h }],
        theta: Theta::Conjugation,
        tau: Tau::Identity,
        gap_tolerance: DEFAULT_GAP_TOLERANCE,
    }
}

// ---------------------------------------------------------------- config files

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ComplexMatrixConfig {
    pub re: Vec<Vec<f64>>,
    #[serde(default)]
    pub im: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct HoppingConfig {
    #[serde(rename = "R")]
    pub r: Vec<i64>,
    pub re: Vec<Vec<f64>>,
    #[serde(default)]
    pub im: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(untagged)]
pub enum ThetaConfig {
    Name(String),
    Unitary { unitary: ComplexMatrixConfig },
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(untagged)]
pub enum TauConfig {
    Name(String),
    Generators { generators: Vec<ComplexMatrixConfig> },
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub d: usize,
    pub n: usize,
    pub m: usize,
    pub hoppings: Vec<HoppingConfig>,
    #[serde(default)]
    pub theta: Option<ThetaConfig>,
    #[serde(default)]
    pub tau: Option<TauConfig>,
    #[serde(default)]
    pub gap_tolerance: Option<f64>,
}

fn matrix_from(re: &[Vec<f64>], im: Option<&Vec<Vec<f64>>>, what: &str, errs: &mut Vec<String>) -> Option<CMat> {
    let rows = re.len();
    let cols = re.first().map_or(0, |r| r.len());
    if rows == 0 || re.iter().any(|r| r.len() != cols) {
        errs.push(format!("{what}: real part is not a rectangular matrix"));
        return None;
    }
    if let Some(im) = im {
        if im.len() != rows || im.iter().any(|r| r.len() != cols) {
            errs.push(format!("{what}: imaginary part shape differs from real part"));
            return None;
        }
    }
    Some(CMat::from_fn(rows, cols, |i, j| {
        C64::new(re[i][j], im.map_or(0.0, |m| m[i][j]))
    }))
}

impl ModelConfig {
    pub fn into_family(self, name: &str) -> Result<ProjectorFamily> {
        let mut errs = Vec::new();
        let mut hoppings = Vec::new();
        for (i, hc) in self.hoppings.iter().enumerate() {
            if hc.r.len() != self.d {
                errs.push(format!("hopping {}: R has {} entries, expected d = {}", i + 1, hc.r.len(), self.d));
                continue;
            }
            if let Some(h) = matrix_from(&hc.re, hc.im.as_ref(), &format!("hopping {}", i + 1), &mut errs) {
                let mut r = [0i64; 3];
                r[..self.d.min(3)].copy_from_slice(&hc.r[..self.d.min(3)]);
                hoppings.push(Hopping { r, h });
            }
        }
        let theta = match &self.theta {
            None => Theta::Conjugation,
            Some(ThetaConfig::Name(s)) if s == "conjugation" => Theta::Conjugation,
            Some(ThetaConfig::Name(s)) => {
                errs.push(format!("theta: unknown value `{s}` (expected \"conjugation\" or a unitary table)"));
                Theta::Conjugation
            }
            Some(ThetaConfig::Unitary { unitary }) => {
                match matrix_from(&unitary.re, unitary.im.as_ref(), "theta unitary", &mut errs) {
                    Some(c) => Theta::Unitary(c),
                    None => Theta::Conjugation,
                }
            }
        };
        let tau = match &self.tau {
            None => Tau::Identity,
            Some(TauConfig::Name(s)) if s == "identity" => Tau::Identity,
            Some(TauConfig::Name(s)) => {
                errs.push(format!("tau: unknown value `{s}` (expected \"identity\" or generators)"));
                Tau::Identity
            }
            Some(TauConfig::Generators { generators }) => {
                let gens: Vec<CMat> = generators
                    .iter()
                    .enumerate()
                    .filter_map(|(j, g)| matrix_from(&g.re, g.im.as_ref(), &format!("tau generator {}", j + 1), &mut errs))
                    .collect();
                Tau::Generators(gens)
            }
        };
        let family = ProjectorFamily {
            name: name.to_string(),
            d: self.d,
            n: self.n,
            m: self.m,
            hoppings,
            theta,
            tau,
            gap_tolerance: self.gap_tolerance.unwrap_or(DEFAULT_GAP_TOLERANCE),
        };
        errs.extend(family.violations());
        if errs.is_empty() {
            Ok(family)
        } else {
            Err(Error::InvalidConfig(errs))
        }
    }
}

pub fn parse_model_config(text: &str, name: &str) -> Result<ProjectorFamily> {
    let cfg: ModelConfig = toml::from_str(text).map_err(|e| Error::InvalidConfig(vec![e.to_string()]))?;
    cfg.into_family(name)
}

/// Builtin name (`haldane`, `random-trs`, `constant`) with `key=value` parameters,
/// or a path to a TOML model file.
pub fn load_model(source: &str, params: &[(String, String)]) -> Result<ProjectorFamily> {
    let get = |key: &str, default: f64| -> Result<f64> {
        match params.iter().rev().find(|(k, _)| k == key) {
            Some((_, v)) => v
                .parse::<f64>()
                .map_err(|_| Error::InvalidConfig(vec![format!("parameter {key} = `{v}` is not a number")])),
            None => Ok(default),
        }
    };
    let known: &[&str] = match source {
        "haldane" => &["t1", "t2", "phi", "M", "d", "gap_tolerance"],
        "random-trs" => &["d", "n", "m", "range", "seed", "strength", "gap_tolerance"],
        "constant" => &["d", "n", "m", "gap_tolerance"],
        _ => &["gap_tolerance"],
    };
    let unknown: Vec<String> = params
        .iter()
        .filter(|(k, _)| !known.contains(&k.as_str()))
        .map(|(k, _)| format!("unknown parameter `{k}` for model `{source}`"))
        .collect();
    if !unknown.is_empty() {
        return Err(Error::InvalidConfig(unknown));
    }
    let as_count = |key: &str, default: f64| -> Result<usize> {
        let v = get(key, default)?;
        if v < 0.0 || v.fract() != 0.0 {
            return Err(Error::InvalidConfig(vec![format!("parameter {key} must be a non-negative integer")]));
        }
        Ok(v as usize)
    };
    let mut family = match source {
        "haldane" => {
            let f = haldane(get("t1", 1.0)?, get("t2", 0.1)?, get("phi", 0.0)?, get("M", 0.3)?);
            match as_count("d", 2.0)? {
                2 => f,
                1 => line_slice(&f),
                other => return Err(Error::InvalidConfig(vec![format!("haldane supports d = 1 or 2, got {other}")])),
            }
        }
        "random-trs" => random_trs(
            as_count("d", 2.0)?,
            as_count("n", 4.0)?,
            as_count("m", 2.0)?,
            as_count("range", 1.0)? as i64,
            get("strength", 0.8)?,
            as_count("seed", 0.0)? as u64,
        ),
        "constant" => constant_real(as_count("d", 2.0)?, as_count("n", 2.0)?, as_count("m", 1.0)?),
        path => {
            let text = std::fs::read_to_string(path)?;
            parse_model_config(&text, path)?
        }
    };
    family.gap_tolerance = get("gap_tolerance", family.gap_tolerance)?;
    family.validate()
}

// ---------------------------------------------------------------- verification

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct AssumptionReport {
    pub model: String,
    pub grid_n: usize,
    pub tolerance: f64,
    pub min_gap: f64,
    pub gap_ok: bool,
    pub p1_second_difference: f64,
    pub p1_second_difference_refined: f64,
    pub p1_flagged: bool,
    pub p2_periodicity: f64,
    pub p3_time_reversal: f64,
    pub p4_compatibility: f64,
    pub projector_defect: f64,
    pub passed: bool,
    pub failures: Vec<String>,
}

struct ProjectorGrid {
    lo: Pt,
    hi: Pt,
    data: Vec<Option<CMat>>,
    min_gap: f64,
    first_gap_failure: Option<String>,
}

fn projector_grid(family: &ProjectorFamily, geom: &CellGeometry) -> ProjectorGrid {
    let (lo, hi) = geom.torus_bounds();
    let pts = crate::geometry::box_points(lo, hi);
    let evals: Vec<std::result::Result<(CMat, f64), Error>> = pts
        .par_iter()
        .map(|&p| {
            let k = geom.to_k(p);
            family.spectral_frame(&k).map(|(v, g)| (&v * v.adjoint(), g))
        })
        .collect();
    let mut min_gap = f64::INFINITY;
    let mut first_gap_failure = None;
    let mut data = Vec::with_capacity(evals.len());
    for e in evals {
        match e {
            Ok((p, g)) => {
                min_gap = min_gap.min(g);
                data.push(Some(p));
            }
            Err(err) => {
                if first_gap_failure.is_none() {
                    first_gap_failure = Some(err.to_string());
                }
                min_gap = 0.0;
                data.push(None);
            }
        }
    }
    ProjectorGrid { lo, hi, data, min_gap, first_gap_failure }
}

impl ProjectorGrid {
    fn get(&self, p: Pt) -> Option<&CMat> {
        crate::geometry::box_index(self.lo, self.hi, p).and_then(|i| self.data[i].as_ref())
    }

    fn second_difference(&self, geom: &CellGeometry) -> f64 {
        let pts = crate::geometry::box_points(self.lo, self.hi);
        let scale = (geom.period() as f64).powi(2);
        pts.par_iter()
            .map(|&p| {
                let mut best = 0.0f64;
                for j in 0..geom.d {
                    let mut a = p;
                    let mut b = p;
                    a[j] -= 1;
                    b[j] += 1;
                    if let (Some(pa), Some(pc), Some(pb)) = (self.get(a), self.get(p), self.get(b)) {
                        best = best.max(hs(&(pa - pc * C64::new(2.0, 0.0) + pb)) * scale);
                    }
                }
                best
            })
            .reduce(|| 0.0, f64::max)
    }
}

/// Numerical residuals for the four standing assumptions on the closed torus grid.
pub fn verify_assumptions(family: &ProjectorFamily, geom: &CellGeometry, tol: f64) -> AssumptionReport {
    let grid = projector_grid(family, geom);
    let fine_geom = CellGeometry { d: geom.d, grid_n: 2 * geom.grid_n };
    let fine = projector_grid(family, &fine_geom);
    let n = geom.half();
    let pts = crate::geometry::box_points(grid.lo, grid.hi);

    let projector_defect = pts
        .par_iter()
        .filter_map(|&p| grid.get(p))
        .map(|pr| {
            let idem = hs(&(pr * pr - pr));
            let herm = hs(&(pr - pr.adjoint()));
            let tr = (pr.trace().re - family.m as f64).abs();
            idem.max(herm).max(tr)
        })
        .reduce(|| 0.0, f64::max);

    let p3 = pts
        .par_iter()
        .filter_map(|&p| {
            let q = [-p[0], -p[1], -p[2]];
            Some(hs(&(grid.get(q)? - family.theta.conjugate_op(grid.get(p)?))))
        })
        .reduce(|| 0.0, f64::max);

    let mut p2 = 0.0f64;
    for j in 0..geom.d {
        let mut lam = [0i64; 3];
        lam[j] = 1;
        let t = family.tau.matrix(lam, family.n);
        for &p in pts.iter().filter(|p| p[j] == -n) {
            let mut q = p;
            q[j] = n;
            if let (Some(a), Some(b)) = (grid.get(p), grid.get(q)) {
                p2 = p2.max(hs(&(b - &t * a * t.adjoint())));
            }
        }
    }

    let p4 = match &family.tau {
        Tau::Identity => 0.0,
        Tau::Generators(gens) => gens.iter().map(|g| compat_residual(&family.theta, g)).fold(0.0, f64::max),
    };

    let p1 = grid.second_difference(geom);
    let p1_fine = fine.second_difference(&fine_geom);
    let p1_flagged = p1_fine > 2.0 * p1 + 1e-9;

    let mut failures = Vec::new();
    if let Some(msg) = grid.first_gap_failure.or(fine.first_gap_failure) {
        failures.push(format!("gap: {msg}"));
    }
    if p1_flagged {
        failures.push(format!("P1: second differences grow under refinement ({p1:.3e} -> {p1_fine:.3e})"));
    }
    if p2 > tol {
        failures.push(format!("P2: tau covariance residual {p2:.3e} > {tol:.1e}"));
    }
    if p3 > tol {
        failures.push(format!("P3: time-reversal residual {p3:.3e} > {tol:.1e}"));
    }
    if p4 > tol {
        failures.push(format!("P4: compatibility residual {p4:.3e} > {tol:.1e}"));
    }
    if projector_defect > 1e-10 {
        failures.push(format!("projector defect {projector_defect:.3e}"));
    }
    for v in family.violations() {
        failures.push(v);
    }
    AssumptionReport {
        model: family.name.clone(),
        grid_n: geom.grid_n,
        tolerance: tol,
        min_gap: grid.min_gap.min(fine.min_gap),
        gap_ok: grid.min_gap.min(fine.min_gap) >= family.gap_tolerance,
        p1_second_difference: p1,
        p1_second_difference_refined: p1_fine,
        p1_flagged,
        p2_periodicity: p2,
        p3_time_reversal: p3,
        p4_compatibility: p4,
        projector_defect,
        passed: failures.is_empty(),
        failures,
    }
}
