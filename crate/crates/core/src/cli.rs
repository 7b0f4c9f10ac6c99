//! Command-line front end. [`run`] returns the process exit status: 0 on
//! success, 1 on usage or input errors, 2 on numerical failure.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::diagnostics::{analyze_a, condition_sweep, sweep_csv, MatrixReport};
use crate::error::{Error, Result};
use crate::exec::{init_threads, Execution};
use crate::fit::{
    fit_endmember, make_tolerance_box, select_axis_count, FitConfig, FitResult, Tolerances,
};
use crate::fixtures::load_fixture_params;
use crate::io::{
    format_spectrum, read_json, read_library, read_spectrum, write_json, write_library,
    write_spectrum, write_text,
};
use crate::manifest::{manifest_path, FileDigest, RunManifest, TOOL_VERSION};
use crate::optim::write_trace_csv;
use crate::spectral::{render, DispersionParams, ParamBox, WavenumberGrid};
use crate::synth::{synth_batch, AbundanceSampling, GroundTruth, NoiseSpec, PerturbSpec};
use crate::unmix::{
    build_a, unmix, unmix_batch, Endmember, EndmemberLibrary, Method, MixedSpectrum, UnmixConfig,
};

pub const THREADS_ENV: &str = "DISPERSION_UNMIX_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "dispersion-unmix",
    version,
    about = "Dispersion-model spectral unmixing"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the emissivity of a parameter set on a grid.
    Render(RenderArgs),
    /// Fit dispersion parameters to a measured spectrum.
    Fit(FitArgs),
    /// Assemble an endmember library from parameter files or fixtures.
    Library(LibraryArgs),
    /// Estimate abundances of one mixed spectrum or a directory of them.
    Unmix(UnmixArgs),
    /// Generate synthetic mixtures with ground truth.
    Synth(SynthArgs),
    /// Rank and conditioning of the endmember matrix.
    Diagnose(DiagnoseArgs),
    /// Re-run a recorded command and check its outputs are unchanged.
    Replay(ReplayArgs),
}

/// Validates a `start:stop:step` grid flag, keeping its text for the manifest.
fn grid_flag(s: &str) -> std::result::Result<String, String> {
    WavenumberGrid::parse_range(s)
        .map(|_| s.to_string())
        .map_err(|e| e.to_string())
}

fn grid_of(flag: &str) -> Result<WavenumberGrid> {
    WavenumberGrid::parse_range(flag)
}

#[derive(Debug, Args, Serialize)]
pub struct RenderArgs {
    /// Parameter JSON (or a fit report).
    #[arg(long, conflicts_with = "fixture", required_unless_present = "fixture")]
    pub params: Option<PathBuf>,
    /// Bundled fixture: olivine_fo10, biotite or hematite.
    #[arg(long)]
    pub fixture: Option<String>,
    /// start:stop:step in cm⁻¹.
    #[arg(long, value_parser = grid_flag)]
    pub grid: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Axes {
    Auto,
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub k_init: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lambda_rho: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub prune_threshold: f64,
    #[arg(long, default_value_t = 4)]
    pub restarts: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "auto")]
    pub axes: Axes,
    /// Adam steps of the sparse stage.
    #[arg(long, default_value_t = 3000)]
    pub steps: usize,
    /// Adam steps of the unpenalised refit.
    #[arg(long, default_value_t = 1500)]
    pub refit_steps: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct LibraryArgs {
    /// start:stop:step in cm⁻¹.
    #[arg(long, value_parser = grid_flag)]
    pub grid: String,
    /// NAME=PATH of a parameter JSON or fit report; repeatable.
    #[arg(long = "entry")]
    pub entries: Vec<String>,
    /// Bundled fixture to include under its own name; repeatable.
    #[arg(long = "fixture")]
    pub fixtures: Vec<String>,
    /// Zero-width boxes (no refinement) instead of the default tolerances.
    #[arg(long)]
    pub pin: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodArg {
    Fcls,
    Lp,
    Abs,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Fcls => Method::Fcls,
            MethodArg::Lp => Method::Lp,
            MethodArg::Abs => Method::Abs,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct UnmixArgs {
    #[arg(long)]
    pub library: PathBuf,
    /// One mixed spectrum CSV.
    #[arg(long, conflicts_with = "batch", required_unless_present = "batch")]
    pub input: Option<PathBuf>,
    /// Directory of mixed spectrum CSVs; `--out` is then a directory.
    #[arg(long)]
    pub batch: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "abs")]
    pub method: MethodArg,
    #[arg(long, default_value_t = 0.95)]
    pub p: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub lambda_p: f64,
    #[arg(long, default_value_t = 100)]
    pub outer_iters: usize,
    /// Recorded for provenance; unmixing itself draws no random numbers.
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub library: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub count: usize,
    /// PerturbSpec JSON; no perturbation if absent.
    #[arg(long)]
    pub perturb: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    pub noise_sigma: f64,
    #[arg(long, default_value_t = 330.0)]
    pub temperature: f64,
    /// Non-zero endmembers per mixture (all if absent).
    #[arg(long)]
    pub active: Option<usize>,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub library: PathBuf,
    /// PerturbSpec JSON for a condition sweep.
    #[arg(long)]
    pub perturb: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub runs: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}

/// What a command read and wrote, for its manifest.
struct Outcome {
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    /// File or directory the manifest is placed next to / inside.
    anchor: PathBuf,
    seed: Option<u64>,
    config: serde_json::Value,
}

/// Parses `argv` (program name first), executes, and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<String>,
{
    let argv: Vec<String> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    if let Ok(v) = std::env::var(THREADS_ENV) {
        match v.trim().parse::<usize>() {
            Ok(n) => init_threads(n),
            Err(_) => {
                eprintln!("error: {THREADS_ENV} must be a non-negative integer, got `{v}`");
                return 1;
            }
        }
    }
    match dispatch(cli.command, &argv[1..]) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                2
            } else {
                1
            }
        }
    }
}

fn dispatch(command: Command, args: &[String]) -> Result<()> {
    let name = args.first().cloned().unwrap_or_default();
    let outcome = match command {
        Command::Render(a) => render_cmd(&a)?,
        Command::Fit(a) => fit_cmd(&a)?,
        Command::Library(a) => library_cmd(&a)?,
        Command::Unmix(a) => unmix_cmd(&a)?,
        Command::Synth(a) => synth_cmd(&a)?,
        Command::Diagnose(a) => diagnose_cmd(&a)?,
        Command::Replay(a) => return replay_cmd(&a),
    };
    let manifest = RunManifest {
        command: name,
        args: args.to_vec(),
        config: outcome.config,
        seed: outcome.seed,
        tool_version: TOOL_VERSION.into(),
        inputs: outcome
            .inputs
            .iter()
            .map(|p| FileDigest::of(p))
            .collect::<Result<_>>()?,
        outputs: outcome
            .outputs
            .iter()
            .map(|p| FileDigest::of(p))
            .collect::<Result<_>>()?,
    };
    manifest.write(&manifest_path(&outcome.anchor))
}

fn config_of<T: Serialize>(args: &T) -> serde_json::Value {
    serde_json::to_value(args).expect("arguments serialise")
}

/// Parameters from a plain parameter file or from the `params` field of a
/// fit report.
pub fn load_params(path: &Path) -> Result<DispersionParams> {
    let value: serde_json::Value = read_json(path)?;
    let inner = match value.get("params") {
        Some(p) if value.get("axes").is_none() => p.clone(),
        _ => value,
    };
    serde_json::from_value(inner).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn render_cmd(a: &RenderArgs) -> Result<Outcome> {
    let (params, inputs) = match (&a.params, &a.fixture) {
        (Some(p), _) => (load_params(p)?, vec![p.clone()]),
        (None, Some(name)) => (load_fixture_params(name)?, vec![]),
        (None, None) => unreachable!("clap requires one source"),
    };
    let grid = grid_of(&a.grid)?;
    write_spectrum(&render(&params, &grid), &a.out)?;
    println!("wrote {} samples to {}", grid.len(), a.out.display());
    Ok(Outcome {
        inputs,
        outputs: vec![a.out.clone()],
        anchor: a.out.clone(),
        seed: None,
        config: config_of(a),
    })
}

/// JSON written by `fit`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub params: DispersionParams,
    pub mse: f64,
    pub k_final: usize,
    pub axis_count: usize,
    #[serde(rename = "box")]
    pub bounds: ParamBox,
    /// Loss trace CSV, relative to the report's directory.
    pub trace: String,
}

fn trace_path(out: &Path) -> PathBuf {
    out.with_extension("trace.csv")
}

fn fit_cmd(a: &FitArgs) -> Result<Outcome> {
    let target = read_spectrum(&a.input)?;
    let mut config = FitConfig {
        k_init: a.k_init,
        lambda_rho: a.lambda_rho,
        prune_threshold: a.prune_threshold,
        restarts: a.restarts,
        seed: a.seed,
        ..FitConfig::default()
    };
    config.optimizer.steps = a.steps;
    config.refit.steps = a.refit_steps;
    let result: FitResult = match a.axes {
        Axes::Auto => select_axis_count(&target, &config)?,
        Axes::One => fit_endmember(&target, &config)?,
        Axes::Two => fit_endmember(&target, &FitConfig { axes: 2, ..config })?,
    };
    let trace = trace_path(&a.out);
    let mut csv = Vec::new();
    write_trace_csv(&result.loss_trace, &mut csv).expect("in-memory write");
    write_text(&trace, std::str::from_utf8(&csv).expect("ascii"))?;
    let report = FitReport {
        params: result.params,
        mse: result.mse,
        k_final: result.k_final,
        axis_count: result.axis_count,
        bounds: result.bounds,
        trace: trace
            .file_name()
            .unwrap_or_default()
            .to_string_lossy()
            .into_owned(),
    };
    write_json(&report, &a.out)?;
    println!(
        "mse {:e}, {} bands, {} axis(es) -> {}",
        report.mse,
        report.k_final,
        report.axis_count,
        a.out.display()
    );
    Ok(Outcome {
        inputs: vec![a.input.clone()],
        outputs: vec![a.out.clone(), trace],
        anchor: a.out.clone(),
        seed: Some(a.seed),
        config: config_of(a),
    })
}

fn library_cmd(a: &LibraryArgs) -> Result<Outcome> {
    let mut entries = Vec::new();
    let mut inputs = Vec::new();
    for spec in &a.entries {
        let (name, path) = spec.split_once('=').ok_or_else(|| {
            Error::InvalidConfig(format!("--entry expects NAME=PATH, got `{spec}`"))
        })?;
        let path = PathBuf::from(path);
        entries.push((name.to_string(), load_params(&path)?));
        inputs.push(path);
    }
    for name in &a.fixtures {
        entries.push((name.clone(), load_fixture_params(name)?));
    }
    let entries = entries
        .into_iter()
        .map(|(name, params)| Endmember {
            bounds: if a.pin {
                ParamBox::point(&params)
            } else {
                make_tolerance_box(&params, &Tolerances::default())
            },
            name,
            params,
        })
        .collect();
    let library = EndmemberLibrary::new(grid_of(&a.grid)?, entries)?;
    write_library(&library, &a.out)?;
    println!("wrote {} endmembers to {}", library.len(), a.out.display());
    Ok(Outcome {
        inputs,
        outputs: vec![a.out.clone()],
        anchor: a.out.clone(),
        seed: None,
        config: config_of(a),
    })
}

/// JSON written by `unmix`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnmixReport {
    pub method: Method,
    pub names: Vec<String>,
    pub abundances: Vec<f64>,
    pub residual_rms: f64,
    pub refined: Vec<DispersionParams>,
    pub loss_trace: Vec<f64>,
}

fn read_mixed(path: &Path, grid: &WavenumberGrid) -> Result<MixedSpectrum> {
    let s = read_spectrum(path)?;
    if s.grid() != grid {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: "grid differs from the library grid".into(),
        });
    }
    Ok(s.into())
}

fn csv_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "no .csv files in {}",
            dir.display()
        )));
    }
    Ok(files)
}

fn unmix_cmd(a: &UnmixArgs) -> Result<Outcome> {
    let library = read_library(&a.library)?;
    let config = UnmixConfig {
        p: a.p,
        lambda_p: a.lambda_p,
        outer_iters: a.outer_iters,
        ..UnmixConfig::default()
    };
    let method: Method = a.method.into();
    let names: Vec<String> = library.names().into_iter().map(String::from).collect();
    let report = |r: crate::unmix::UnmixResult| UnmixReport {
        method,
        names: names.clone(),
        abundances: r.abundances.into_inner(),
        residual_rms: r.residual_rms,
        refined: r.refined,
        loss_trace: r.loss_trace,
    };
    let mut inputs = vec![a.library.clone()];

    if let Some(input) = &a.input {
        let b = read_mixed(input, library.grid())?;
        let rep = report(unmix(&library, &b, method, &config)?);
        write_json(&rep, &a.out)?;
        println!(
            "abundances {:?}, residual rms {:e}",
            rep.abundances, rep.residual_rms
        );
        inputs.push(input.clone());
        return Ok(Outcome {
            inputs,
            outputs: vec![a.out.clone()],
            anchor: a.out.clone(),
            seed: Some(a.seed),
            config: config_of(a),
        });
    }

    let dir = a.batch.as_ref().expect("clap requires --input or --batch");
    let files = csv_files(dir)?;
    let pixels = files
        .iter()
        .map(|f| read_mixed(f, library.grid()))
        .collect::<Result<Vec<_>>>()?;
    let results = unmix_batch(&library, &pixels, method, &config, Execution::default());
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let mut summary = String::from("name");
    for j in 1..=library.len() {
        summary.push_str(&format!(",abundance_{j}"));
    }
    summary.push_str(",residual_rms\n");
    let mut outputs = Vec::new();
    for (file, result) in files.iter().zip(results) {
        let stem = file
            .file_stem()
            .unwrap_or_default()
            .to_string_lossy()
            .into_owned();
        let rep = report(result?);
        summary.push_str(&stem);
        for x in &rep.abundances {
            summary.push_str(&format!(",{x}"));
        }
        summary.push_str(&format!(",{}\n", rep.residual_rms));
        let path = a.out.join(format!("{stem}.json"));
        write_json(&rep, &path)?;
        outputs.push(path);
        inputs.push(file.clone());
    }
    let summary_path = a.out.join("summary.csv");
    write_text(&summary_path, &summary)?;
    outputs.push(summary_path);
    println!("unmixed {} spectra into {}", files.len(), a.out.display());
    Ok(Outcome {
        inputs,
        outputs,
        anchor: a.out.clone(),
        seed: Some(a.seed),
        config: config_of(a),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthRecord {
    pub file: String,
    #[serde(flatten)]
    pub truth: GroundTruth,
}

/// Ground truth written by `synth` as `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub names: Vec<String>,
    pub seed: u64,
    pub perturb: PerturbSpec,
    pub mixtures: Vec<SynthRecord>,
}

fn synth_cmd(a: &SynthArgs) -> Result<Outcome> {
    let library = read_library(&a.library)?;
    let mut inputs = vec![a.library.clone()];
    let perturb = match &a.perturb {
        Some(p) => {
            inputs.push(p.clone());
            read_json::<PerturbSpec>(p)?
        }
        None => PerturbSpec::default(),
    };
    let noise = NoiseSpec {
        sigma_radiance: a.noise_sigma,
        temperature: a.temperature,
        seed: 0,
    };
    let sampling = AbundanceSampling { active: a.active };
    let batch = synth_batch(
        &library,
        a.count,
        sampling,
        &perturb,
        &noise,
        a.seed,
        Execution::default(),
    )?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let width = a.count.saturating_sub(1).to_string().len().max(4);
    let mut outputs = Vec::new();
    let mut mixtures = Vec::with_capacity(batch.len());
    for (i, (b, truth)) in batch.into_iter().enumerate() {
        let file = format!("mix_{i:0width$}.csv");
        let path = a.out.join(&file);
        write_text(&path, &format_spectrum(b.grid(), b.values()))?;
        outputs.push(path);
        mixtures.push(SynthRecord { file, truth });
    }
    let truth_path = a.out.join("manifest.json");
    write_json(
        &SynthManifest {
            names: library.names().into_iter().map(String::from).collect(),
            seed: a.seed,
            perturb,
            mixtures,
        },
        &truth_path,
    )?;
    outputs.push(truth_path);
    println!("wrote {} mixtures to {}", a.count, a.out.display());
    Ok(Outcome {
        inputs,
        outputs,
        anchor: a.out.clone(),
        seed: Some(a.seed),
        config: config_of(a),
    })
}

fn diagnose_cmd(a: &DiagnoseArgs) -> Result<Outcome> {
    let library = read_library(&a.library)?;
    let mut inputs = vec![a.library.clone()];
    let reports: Vec<MatrixReport> = match &a.perturb {
        Some(p) => {
            inputs.push(p.clone());
            let spec: PerturbSpec = read_json(p)?;
            condition_sweep(&library, &spec, a.runs, a.seed, Execution::default())?
        }
        None => vec![analyze_a(&build_a(&library), None)?],
    };
    write_text(&a.out, &sweep_csv(&reports))?;
    let base = &reports[0];
    println!(
        "{}x{} rank {} condition {:e} ({} run(s) -> {})",
        base.rows,
        base.cols,
        base.rank,
        base.condition_number,
        reports.len(),
        a.out.display()
    );
    Ok(Outcome {
        inputs,
        outputs: vec![a.out.clone()],
        anchor: a.out.clone(),
        seed: a.perturb.as_ref().map(|_| a.seed),
        config: config_of(a),
    })
}

fn replay_cmd(a: &ReplayArgs) -> Result<()> {
    let manifest = RunManifest::read(&a.manifest)?;
    let changed = manifest.changed_inputs()?;
    if !changed.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "inputs changed since the recorded run: {changed:?}"
        )));
    }
    if manifest.args.first().map(String::as_str) == Some("replay") {
        return Err(Error::InvalidConfig(
            "a replay manifest cannot be replayed".into(),
        ));
    }
    let cli = Cli::try_parse_from(
        std::iter::once("dispersion-unmix".to_string()).chain(manifest.args.iter().cloned()),
    )
    .map_err(|e| Error::InvalidConfig(format!("recorded arguments no longer parse: {e}")))?;
    dispatch(cli.command, &manifest.args)?;
    let changed = manifest.changed_outputs()?;
    if !changed.is_empty() {
        return Err(Error::ReplayMismatch(changed));
    }
    println!(
        "replay reproduced {} output(s) byte for byte",
        manifest.outputs.len()
    );
    Ok(())
}
