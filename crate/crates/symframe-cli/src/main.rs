use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use symframe::geometry::CellGeometry;
use symframe::models::{load_model, verify_assumptions, ProjectorFamily};
use symframe::pipeline::{run_pipeline, wannier_summary, PipelineOptions, PipelineOutput};
use symframe::{frame, wannier, Error};

#[derive(Parser)]
#[command(name = "symframe", version, about = "Smooth symmetric Bloch frames and real localized Wannier functions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check gap, smoothness, periodicity and time-reversal on the grid.
    VerifyModel(RunArgs),
    /// Build the input, continuous and smoothed frames and write them with a manifest.
    Construct(RunArgs),
    /// Construct, then write Wannier coefficients and a localization report.
    Wannierize(RunArgs),
    /// Print the certificate stored in an output directory.
    Report(ReportArgs),
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Builtin model (haldane, random-trs, constant) or a TOML model file.
    #[arg(long)]
    model: String,
    /// Model parameter, repeatable.
    #[arg(long = "param", value_name = "KEY=VAL", value_parser = parse_param)]
    params: Vec<(String, String)>,
    #[arg(long, default_value_t = 16)]
    grid_n: usize,
    /// Assumption check tolerance.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// Smallest admissible spectral gap.
    #[arg(long)]
    gap_tol: Option<f64>,
    /// Sup distance allowed between continuous and smoothed frames.
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn parse_param(s: &str) -> Result<(String, String), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected KEY=VAL, got `{s}`"))?;
    if k.is_empty() {
        return Err(format!("empty key in `{s}`"));
    }
    Ok((k.to_string(), v.to_string()))
}

/// A failure tagged with the stage it came from.
struct Failure {
    stage: &'static str,
    error: Error,
}

trait At<T> {
    fn at(self, stage: &'static str) -> Result<T, Failure>;
}

impl<T> At<T> for symframe::Result<T> {
    fn at(self, stage: &'static str) -> Result<T, Failure> {
        self.map_err(|error| Failure { stage, error })
    }
}

impl<T> At<T> for std::io::Result<T> {
    fn at(self, stage: &'static str) -> Result<T, Failure> {
        self.map_err(|e| Failure { stage, error: e.into() })
    }
}

impl RunArgs {
    fn family(&self) -> Result<ProjectorFamily, Failure> {
        let mut params = self.params.clone();
        if let Some(g) = self.gap_tol {
            params.push(("gap_tolerance".into(), g.to_string()));
        }
        load_model(&self.model, &params).at("model")
    }

    fn validate(&self) -> Result<(), Failure> {
        let mut problems = Vec::new();
        if self.grid_n < 4 || self.grid_n % 2 != 0 {
            problems.push(format!("--grid-n must be even and at least 4, got {}", self.grid_n));
        }
        for (name, v) in [("--tol", Some(self.tol)), ("--gap-tol", self.gap_tol), ("--epsilon", Some(self.epsilon))] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    problems.push(format!("{name} must be positive, got {v}"));
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Failure { stage: "config", error: Error::InvalidConfig(problems) })
        }
    }

    fn options(&self) -> PipelineOptions {
        PipelineOptions { grid_n: self.grid_n, assumption_tol: self.tol, epsilon: self.epsilon, seed: self.seed, ..Default::default() }
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).expect("report types serialize");
    fs::write(path, text + "\n").at("write")
}

fn verify_model(args: &RunArgs) -> Result<bool, Failure> {
    args.validate()?;
    let family = args.family()?;
    let geom = CellGeometry::new(family.d, args.grid_n).at("config")?;
    let report = verify_assumptions(&family, &geom, args.tol);
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    for f in &report.failures {
        eprintln!("assumption failed: {f}");
    }
    Ok(report.passed)
}

fn construct(args: &RunArgs) -> Result<(ProjectorFamily, PipelineOutput), Failure> {
    args.validate()?;
    let family = args.family()?;
    let out = run_pipeline(&family, &args.options()).at("pipeline")?;
    fs::create_dir_all(&args.out).at("write")?;
    frame::write_blf(&args.out.join("input.blf"), &out.input).at("write")?;
    frame::write_blf(&args.out.join("continuous.blf"), &out.continuous).at("write")?;
    frame::write_blf(&args.out.join("smoothed.blf"), &out.smoothed).at("write")?;
    write_json(&args.out.join("manifest.json"), &out.manifest)?;
    eprintln!(
        "{}: residuals projector {:.2e} gram {:.2e} periodicity {:.2e} time-reversal {:.2e}",
        family.name, out.manifest.smoothed.projector, out.manifest.smoothed.gram, out.manifest.smoothed.translation, out.manifest.smoothed.time_reversal
    );
    Ok((family, out))
}

fn wannierize(args: &RunArgs) -> Result<(), Failure> {
    let (family, out) = construct(args)?;
    let (wset, summary) = wannier_summary(&out.smoothed, &family).at("wannier")?;
    wannier::write_wan(&args.out.join("wannier.wan"), &wset).at("write")?;
    wannier::write_wannier_csv(&args.out.join("wannier.csv"), &wset).at("write")?;
    write_json(&args.out.join("localization.json"), &summary)?;
    eprintln!(
        "reality defect {:.2e}, decay rate {:.3} over shells {:?}",
        summary.reality.defect, summary.localization.decay_rate, summary.localization.fit_shells
    );
    Ok(())
}

fn read_json(path: &Path) -> Option<Value> {
    let text = fs::read_to_string(path).ok()?;
    serde_json::from_str(&text).ok()
}

fn num(v: &Value, path: &[&str]) -> String {
    let mut cur = v;
    for key in path {
        match cur.get(key) {
            Some(next) => cur = next,
            None => return "-".into(),
        }
    }
    match cur.as_f64() {
        Some(x) => format!("{x:.3e}"),
        None => cur.to_string(),
    }
}

fn report(args: &ReportArgs) -> ExitCode {
    let Some(manifest) = read_json(&args.out.join("manifest.json")) else {
        eprintln!(
            "error: no readable manifest.json in {}; run `symframe construct --out {}` first",
            args.out.display(),
            args.out.display()
        );
        return ExitCode::from(2);
    };
    println!("model {}  d={} n={} m={}", manifest["model"].as_str().unwrap_or("?"), manifest["d"], manifest["n"], manifest["m"]);
    println!("grid_n {}  seed {}", manifest["options"]["grid_n"], manifest["options"]["seed"]);
    println!("assumptions passed: {}  min gap {}", manifest["assumptions"]["passed"], num(&manifest, &["assumptions", "min_gap"]));
    println!("vertices:");
    for v in manifest["vertices"].as_array().into_iter().flatten() {
        println!("  {:<24} symmetry defect {}  sqrt residual {}", v["k"].to_string(), num(v, &["symmetry_defect"]), num(v, &["sqrt_residual"]));
    }
    println!("boundary degrees {}", manifest["degrees"]);
    for f in manifest["faces"].as_array().into_iter().flatten() {
        println!(
            "  face degree {:>3}  corrected {}  extension mismatch {}",
            f["degree"],
            f["corrected"],
            num(f, &["extension", "boundary_mismatch"])
        );
    }
    if let Some(ext) = manifest.get("construction_3d").filter(|v| !v.is_null()) {
        println!("ball extension mismatch {}  clearance {}", num(ext, &["extension", "boundary_mismatch"]), num(ext, &["extension", "clearance"]));
    }
    println!(
        "smoothing cutoff {}  sup distance {}  decay slope {} -> {}",
        manifest["smoothing"]["cutoff"],
        num(&manifest, &["smoothing", "sup_distance"]),
        num(&manifest, &["smoothing", "spectral_decay_before"]),
        num(&manifest, &["smoothing", "spectral_decay_after"])
    );
    println!("time-reversal before/after symmetrize {} / {}", num(&manifest, &["symmetrize", "time_reversal_before"]), num(&manifest, &["symmetrize", "time_reversal_after"]));
    for key in ["continuous", "smoothed"] {
        println!(
            "{key:<10} projector {}  gram {}  periodicity {}  time-reversal {}",
            num(&manifest, &[key, "projector"]),
            num(&manifest, &[key, "gram"]),
            num(&manifest, &[key, "translation"]),
            num(&manifest, &[key, "time_reversal"])
        );
    }
    if let Some(loc) = read_json(&args.out.join("localization.json")) {
        println!("reality ({}) {}", loc["reality"]["kind"].as_str().unwrap_or("?"), num(&loc, &["reality", "defect"]));
        println!(
            "decay rate {}  r2 {}  tail weight {}",
            num(&loc, &["localization", "decay_rate"]),
            num(&loc, &["localization", "fit_r2"]),
            num(&loc, &["localization", "tail_weight"])
        );
        println!("shell  sup|w|");
        for (i, s) in loc["localization"]["shell_sups"].as_array().into_iter().flatten().enumerate() {
            println!("{i:>5}  {}", s.as_f64().map(|x| format!("{x:.3e}")).unwrap_or_default());
        }
    }
    ExitCode::SUCCESS
}

fn fail(f: Failure) -> ExitCode {
    let err = json!({ "error": f.error.code(), "stage": f.stage, "message": f.error.to_string() });
    eprintln!("{err}");
    ExitCode::from(1)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = match &cli.command {
        Command::VerifyModel(a) | Command::Construct(a) | Command::Wannierize(a) => a.threads,
        Command::Report(_) => None,
    };
    if let Some(t) = threads {
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global().expect("thread pool is configured once");
    }
    match &cli.command {
        Command::VerifyModel(a) => match verify_model(a) {
            Ok(true) => ExitCode::SUCCESS,
            Ok(false) => ExitCode::from(1),
            Err(f) => fail(f),
        },
        Command::Construct(a) => construct(a).map(|_| ExitCode::SUCCESS).unwrap_or_else(fail),
        Command::Wannierize(a) => wannierize(a).map(|_| ExitCode::SUCCESS).unwrap_or_else(fail),
        Command::Report(a) => report(a),
    }
}
