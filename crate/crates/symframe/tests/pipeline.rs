use std::f64::consts::TAU;

use num_complex::Complex64 as C64;
use symframe::frame::{read_blf, write_blf_to};
use symframe::models::{haldane, random_trs};
use symframe::pipeline::{run_pipeline, wannier_summary, PipelineOptions};
use symframe::wannier::{bloch_transform, wannier_transform};

fn opts(grid_n: usize, seed: u64) -> PipelineOptions {
    PipelineOptions { grid_n, seed, ..Default::default() }
}

#[test]
fn reruns_are_byte_identical() {
    let fam = random_trs(2, 4, 2, 1, 0.8, 5);
    let encode = |seed| {
        let out = run_pipeline(&fam, &opts(8, seed)).unwrap();
        let mut bytes = Vec::new();
        for f in [&out.input, &out.continuous, &out.smoothed] {
            write_blf_to(&mut bytes, f).unwrap();
        }
        bytes
    };
    assert_eq!(encode(3), encode(3));
}

#[test]
fn blf_file_round_trip() {
    let fam = haldane(1.0, 0.1, 0.0, 0.3);
    let out = run_pipeline(&fam, &opts(8, 0)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("smoothed.blf");
    symframe::frame::write_blf(&path, &out.smoothed).unwrap();
    let back = read_blf(&path).unwrap();
    assert_eq!(back.points(), out.smoothed.points());
    for p in back.points() {
        assert_eq!(back.at(p), out.smoothed.at(p));
    }
}

#[test]
fn wannier_coefficients_match_direct_sum() {
    let fam = haldane(1.0, 0.1, 0.0, 0.3);
    let out = run_pipeline(&fam, &opts(8, 0)).unwrap();
    let field = &out.smoothed;
    let geom = field.geometry;
    let wset = wannier_transform(field).unwrap();
    let half = geom.half();
    let total = (2 * half * 2 * half) as f64;
    for gamma in [[0, 0, 0], [1, 0, 0], [-3, 2, 0], [half - 1, -half, 0]] {
        let mut direct = field.at([0; 3]) * C64::new(0.0, 0.0);
        for k1 in -half..half {
            for k2 in -half..half {
                let k = geom.to_k([k1, k2, 0]);
                let phase = C64::from_polar(1.0, TAU * (k[0] * gamma[0] as f64 + k[1] * gamma[1] as f64));
                direct += field.at([k1, k2, 0]) * phase;
            }
        }
        direct /= C64::new(total, 0.0);
        let err = (wset.get(gamma).unwrap() - direct).norm();
        assert!(err <= 1e-12, "gamma {gamma:?}: {err:e}");
    }
    for (p, f) in bloch_transform(&wset) {
        assert!((f - field.at(p)).norm() <= 1e-12);
    }
}

#[test]
fn smoothed_wannier_set_is_orthonormal_and_real() {
    let fam = random_trs(2, 4, 2, 1, 0.8, 1);
    let out = run_pipeline(&fam, &opts(16, 0)).unwrap();
    let (_, summary) = wannier_summary(&out.smoothed, &fam).unwrap();
    for norm in summary.parseval {
        assert!((norm - 1.0).abs() <= 1e-10);
    }
    assert!(summary.orthonormality <= 1e-10);
    assert!(summary.reality.defect <= 1e-8);
}

#[test]
fn manifest_serializes_every_certificate() {
    let fam = haldane(1.0, 0.1, 0.0, 0.3);
    let out = run_pipeline(&fam, &opts(8, 0)).unwrap();
    let v = serde_json::to_value(&out.manifest).unwrap();
    for key in ["assumptions", "vertices", "degrees", "faces", "continuous", "smoothing", "symmetrize", "smoothed", "times"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert_eq!(v["vertices"].as_array().unwrap().len(), 3);
    assert!(v["smoothed"]["time_reversal"].as_f64().unwrap() <= 1e-10);
}

#[test]
fn documented_model_file_loads() {
    let text = r#"
d = 2
n = 2
m = 1
gap_tolerance = 1e-6
theta = "conjugation"
tau = "identity"

[[hoppings]]
R = [0, 0]
re = [[0.3, 1.0], [1.0, -0.3]]
im = [[0.0, 0.0], [0.0, 0.0]]
"#;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.toml");
    std::fs::write(&path, text).unwrap();
    let fam = symframe::models::load_model(path.to_str().unwrap(), &[]).unwrap();
    assert_eq!((fam.d, fam.n, fam.m), (2, 2, 1));
    let out = run_pipeline(&fam, &opts(4, 0)).unwrap();
    assert!(out.manifest.smoothed.max() <= 1e-10);
}
