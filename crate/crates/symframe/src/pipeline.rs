//! End-to-end construction: assumption checks, the symmetric frame on the effective
//! cell, its extension to the torus, smoothing and symmetrization, with a manifest
//! of every certificate along the way.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cell3d::{self, Construction3dReport};
use crate::error::{Error, Result};
use crate::face2d::{self, FaceReport};
use crate::frame::{self, FrameField, Residuals};
use crate::geometry::CellGeometry;
use crate::models::{verify_assumptions, AssumptionReport, ProjectorFamily};
use crate::smoothing::{self, SmoothingReport, SymmetrizeReport};
use crate::vertex::{self, VertexRecord};
use crate::wannier::{self, LocalizationReport, RealityReport};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct PipelineOptions {
    pub grid_n: usize,
    pub assumption_tol: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub seed: u64,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self { grid_n: 16, assumption_tol: 1e-8, epsilon: 0.1, delta: smoothing::DEFAULT_DELTA, seed: 0 }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct StageTimes {
    pub assumptions: f64,
    pub input_frame: f64,
    pub construction: f64,
    pub smoothing: f64,
    pub total: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub model: String,
    pub d: usize,
    pub n: usize,
    pub m: usize,
    pub options: PipelineOptions,
    pub assumptions: AssumptionReport,
    pub vertices: Vec<VertexRecord>,
    /// Boundary degree found on each face filled by `fill_face`, in construction order.
    pub degrees: Vec<i64>,
    pub faces: Vec<FaceReport>,
    pub construction_3d: Option<Construction3dReport>,
    pub boundary_relation_residual: f64,
    pub continuous: Residuals,
    pub continuous_max_jump: f64,
    pub smoothing: SmoothingReport,
    pub symmetrize: SymmetrizeReport,
    pub smoothed: Residuals,
    pub times: StageTimes,
}

#[derive(Clone, Debug)]
pub struct PipelineOutput {
    pub input: FrameField,
    pub continuous: FrameField,
    pub smoothed: FrameField,
    pub manifest: Manifest,
}

/// Run every stage; refuses to start when the model fails its assumption checks.
pub fn run_pipeline(family: &ProjectorFamily, opts: &PipelineOptions) -> Result<PipelineOutput> {
    let start = Instant::now();
    let geom = CellGeometry::new(family.d, opts.grid_n)?;
    let mut times = StageTimes::default();

    let t = Instant::now();
    let assumptions = verify_assumptions(family, &geom, opts.assumption_tol);
    times.assumptions = t.elapsed().as_secs_f64();
    if !assumptions.passed {
        return Err(Error::AssumptionsFailed(assumptions.failures.join("; ")));
    }

    let t = Instant::now();
    let input = frame::input_frame(family, &geom)?;
    times.input_frame = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let mut faces = Vec::new();
    let mut construction_3d = None;
    let (cell, vertices) = match geom.d {
        1 => {
            let c = vertex::construct_1d_cell(&input, family)?;
            (c.cell, c.vertices)
        }
        2 => {
            let c = face2d::construct_2d_cell(&input, family, opts.seed)?;
            faces.push(c.report);
            (c.cell, c.vertices)
        }
        _ => {
            let c = cell3d::construct_3d_cell(&input, family, opts.seed)?;
            faces = c.report.boundary.faces.clone();
            construction_3d = Some(c.report);
            (c.cell, c.vertices)
        }
    };
    let boundary_relation_residual = wannier::check_boundary_relations(&cell, family, wannier::RELATION_TOL)?;
    let continuous = wannier::extend_symmetric(&cell, family)?;
    times.construction = t.elapsed().as_secs_f64();
    let continuous_res = frame::torus_residuals(&continuous, family)?;

    let t = Instant::now();
    let (smooth, smoothing_report) = smoothing::periodic_smooth(&continuous, family, opts.epsilon)?;
    let (smoothed, symmetrize_report) = smoothing::symmetrize(&smooth, family, opts.delta)?;
    times.smoothing = t.elapsed().as_secs_f64();
    let smoothed_res = frame::torus_residuals(&smoothed, family)?;
    times.total = start.elapsed().as_secs_f64();

    let manifest = Manifest {
        model: family.name.clone(),
        d: family.d,
        n: family.n,
        m: family.m,
        options: opts.clone(),
        assumptions,
        vertices: vertices.iter().map(|v| v.record()).collect(),
        degrees: faces.iter().map(|f| f.degree).collect(),
        faces,
        construction_3d,
        boundary_relation_residual,
        continuous: continuous_res,
        continuous_max_jump: continuous.max_neighbour_jump(),
        smoothing: smoothing_report,
        symmetrize: symmetrize_report,
        smoothed: smoothed_res,
        times,
    };
    Ok(PipelineOutput { input, continuous, smoothed, manifest })
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct WannierSummary {
    pub parseval: Vec<f64>,
    pub orthonormality: f64,
    pub reality: RealityReport,
    pub localization: LocalizationReport,
}

/// Certificates of the Wannier set of a torus field.
pub fn wannier_summary(field: &FrameField, family: &ProjectorFamily) -> Result<(wannier::WannierSet, WannierSummary)> {
    let wset = wannier::wannier_transform(field)?;
    let shifts: Vec<[i64; 3]> = (0..field.geometry.d)
        .map(|j| {
            let mut s = [0i64; 3];
            s[j] = 1;
            s
        })
        .collect();
    let summary = WannierSummary {
        parseval: wannier::parseval(&wset),
        orthonormality: wannier::translate_orthonormality(&wset, &shifts),
        reality: wannier::reality_check(&wset, &family.theta),
        localization: wannier::localization_report(&wset),
    };
    Ok((wset, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{haldane, line_slice};

    #[test]
    fn haldane_line_and_plane() {
        for fam in [line_slice(&haldane(1.0, 0.1, 0.0, 0.3)), haldane(1.0, 0.1, 0.0, 0.3)] {
            let out = run_pipeline(&fam, &PipelineOptions::default()).unwrap();
            assert!(out.manifest.smoothed.max() <= 1e-8, "{:?}", out.manifest.smoothed);
            let (_, w) = wannier_summary(&out.smoothed, &fam).unwrap();
            assert!(w.reality.defect <= 1e-8);
        }
    }

    #[test]
    fn broken_time_reversal_is_refused() {
        let fam = haldane(1.0, 0.1, std::f64::consts::FRAC_PI_2, 0.3);
        let opts = PipelineOptions { grid_n: 8, ..Default::default() };
        assert!(matches!(run_pipeline(&fam, &opts), Err(Error::AssumptionsFailed(_))));
    }
}
