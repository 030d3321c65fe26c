//! Command-line front end. Every subcommand reads a JSON config (optional),
//! applies `--set key.path=value` overrides and writes a manifest next to
//! its outputs.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::camera::{calibrate_mean_variance, dark_drift_profile, CameraModel, MIN_DRIFT_FRAMES};
use crate::codec::{transcode_stack, GridOffset};
use crate::eval::{frc, match_to_gt, render, run_sweep, widefield, MatchPolicy};
use crate::io::config::{ConfigError, RunConfig};
use crate::io::pgm::write_pgm16;
use crate::io::stack::{read_stack, write_stack, FrameStack};
use crate::io::table::{read_emitters, read_localizations, write_emitters, write_localizations};
use crate::localize::localize_stack;
use crate::nn::{
    export_dataset, load_weights, make_pairs_from_localizations, make_pairs_simulated, nn_localize_stack_with_tile,
};
use crate::sim::simulate_stack;

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_MISSING_INPUT: i32 = 3;
pub const EXIT_CONFIG: i32 = 4;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    MissingInput(PathBuf),
    Config(String),
    Failure(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::MissingInput(_) => EXIT_MISSING_INPUT,
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Failure(_) => EXIT_FAILURE,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::MissingInput(_) => "missing-input",
            CliError::Config(_) => "config",
            CliError::Failure(_) => "failure",
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::MissingInput(p) => format!("input not found: {}", p.display()),
            CliError::Usage(m) | CliError::Config(m) | CliError::Failure(m) => m.clone(),
        }
    }

    /// One-line JSON object for stderr.
    pub fn to_line(&self) -> String {
        json!({ "error": self.kind(), "code": self.exit_code(), "message": self.message() }).to_string()
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { ref path, .. } => CliError::MissingInput(PathBuf::from(path)),
            e => CliError::Config(e.to_string()),
        }
    }
}

fn fail(e: impl std::fmt::Display) -> CliError {
    CliError::Failure(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "cellstorm", version, about = "Simulate, localize and evaluate cellphone SMLM data")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a config value, e.g. `--set camera.gain=0.5`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker thread cap.
    #[arg(long, env = "CELLSTORM_THREADS", global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Recover gain, offset and read noise from illuminated and dark stacks.
    Calibrate {
        #[arg(long, required = true, num_args = 1..)]
        stacks: Vec<PathBuf>,
        #[arg(long)]
        dark: PathBuf,
        /// Upper end of the linear range in ADU.
        #[arg(long)]
        knee: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate a blinking stack and its ground truth.
    Simulate {
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply the block-transform codec to a stack.
    Compress {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        quality: Option<u8>,
        #[arg(long)]
        qp: Option<u8>,
        /// `dx,dy` or `random`.
        #[arg(long)]
        grid_offset: Option<GridOffset>,
    },
    /// Classical detect-and-fit localization.
    Localize {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        threshold_k: Option<f64>,
        #[arg(long)]
        roi: Option<usize>,
        #[arg(long)]
        camera_preset: Option<String>,
    },
    /// Export training pairs, simulated or from a stack and its localizations.
    MakeDataset {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, requires = "table")]
        stack: Option<PathBuf>,
        #[arg(long, requires = "stack")]
        table: Option<PathBuf>,
    },
    /// Neural localization with a weight archive.
    Infer {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Tile edge in upsampled pixels; defaults to the archive's.
        #[arg(long)]
        tile: Option<usize>,
    },
    /// Match detections against ground truth.
    Eval {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        radius: Option<f64>,
        #[arg(long)]
        one_to_one: bool,
    },
    /// Fourier ring correlation resolution of a localization table.
    Frc {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        render_px: Option<f64>,
    },
    /// Render a localization table, or the widefield sum of a stack, to PGM.
    Render {
        #[arg(long, conflicts_with = "stack", required_unless_present = "stack")]
        input: Option<PathBuf>,
        #[arg(long)]
        stack: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        render_px: Option<f64>,
        #[arg(long)]
        blur: Option<f64>,
    },
    /// Photon × quality grid end to end.
    Sweep {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',')]
        photons: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        quality: Vec<u8>,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        density: Option<f64>,
        #[arg(long)]
        weights: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Calibrate { .. } => "calibrate",
            Command::Simulate { .. } => "simulate",
            Command::Compress { .. } => "compress",
            Command::Localize { .. } => "localize",
            Command::MakeDataset { .. } => "make-dataset",
            Command::Infer { .. } => "infer",
            Command::Eval { .. } => "eval",
            Command::Frc { .. } => "frc",
            Command::Render { .. } => "render",
            Command::Sweep { .. } => "sweep",
        }
    }
}

/// Parses `args` (including the program name), runs, and returns the exit
/// status. Errors go to stderr as a single JSON line.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let msg = e.to_string().lines().map(str::trim).filter(|l| !l.is_empty()).collect::<Vec<_>>().join(" ");
            let err = CliError::Usage(msg);
            eprintln!("{}", err.to_line());
            return err.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.to_line());
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.common.config {
        Some(p) => RunConfig::load(require(p)?)?,
        None => RunConfig::default(),
    };
    cfg.apply_overrides(&cli.common.overrides)?;
    if let Some(s) = cli.common.seed {
        cfg.seed = s;
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.common.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(fail)?;
    pool.install(|| dispatch(cli.command, cfg))
}

fn require(p: &Path) -> Result<&Path, CliError> {
    if p.exists() {
        Ok(p)
    } else {
        Err(CliError::MissingInput(p.to_path_buf()))
    }
}

fn load_stack(p: &Path) -> Result<FrameStack, CliError> {
    read_stack(require(p)?).map_err(fail)
}

fn ensure_dir(p: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(p).map_err(|e| fail(format!("cannot create {}: {e}", p.display())))
}

fn ensure_parent(p: &Path) -> Result<(), CliError> {
    match p.parent() {
        Some(d) if !d.as_os_str().is_empty() => ensure_dir(d),
        _ => Ok(()),
    }
}

fn write_text(p: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(p, text).map_err(|e| fail(format!("cannot write {}: {e}", p.display())))
}

fn write_json(p: &Path, v: &impl Serialize) -> Result<(), CliError> {
    write_text(p, &(serde_json::to_string_pretty(v).map_err(fail)? + "\n"))
}

#[derive(Serialize)]
struct RunManifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seed: u64,
    inputs: serde_json::Value,
    outputs: Vec<String>,
    config: &'a RunConfig,
}

/// `manifest.json` inside a directory output, `<file>.manifest.json` next to
/// a file output.
fn manifest_path(out: &Path) -> PathBuf {
    if out.is_dir() {
        out.join("manifest.json")
    } else {
        let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".manifest.json");
        out.with_file_name(name)
    }
}

fn write_manifest(
    command: &str,
    cfg: &RunConfig,
    out: &Path,
    inputs: serde_json::Value,
    outputs: &[&str],
) -> Result<(), CliError> {
    let m = RunManifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command,
        seed: cfg.seed,
        inputs,
        outputs: outputs.iter().map(|s| s.to_string()).collect(),
        config: cfg,
    };
    write_json(&manifest_path(out), &m)
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn dispatch(command: Command, mut cfg: RunConfig) -> Result<(), CliError> {
    let name = command.name();
    match command {
        Command::Calibrate { stacks, dark, knee, out } => {
            let dark_stack = load_stack(&dark)?;
            let levels = stacks.iter().map(|p| load_stack(p)).collect::<Result<Vec<_>, _>>()?;
            let knee = knee.unwrap_or(cfg.camera.knee);
            let result = calibrate_mean_variance(&levels, &dark_stack, knee).map_err(fail)?;
            ensure_dir(&out)?;
            write_json(&out.join("calibration.json"), &result)?;
            write_text(&out.join("mean_variance.csv"), &result.scatter_csv())?;
            let mut outputs = vec!["calibration.json", "mean_variance.csv"];
            if dark_stack.n_frames >= MIN_DRIFT_FRAMES {
                let drift = dark_drift_profile(&dark_stack).map_err(fail)?;
                write_json(&out.join("dark_drift.json"), &drift)?;
                outputs.push("dark_drift.json");
            }
            let inputs = json!({ "stacks": stacks.iter().map(|p| path_str(p)).collect::<Vec<_>>(), "dark": path_str(&dark) });
            write_manifest(name, &cfg, &out, inputs, &outputs)
        }
        Command::Simulate { out } => {
            let (stack, gt) = simulate_stack(&cfg.simulation, &cfg.camera, Some(&cfg.codec), cfg.seed).map_err(fail)?;
            ensure_dir(&out)?;
            write_stack(&stack, out.join("stack.cstk")).map_err(fail)?;
            write_emitters(&gt, out.join("ground_truth.csv")).map_err(fail)?;
            write_manifest(name, &cfg, &out, json!({}), &["stack.cstk", "ground_truth.csv"])
        }
        Command::Compress { input, output, quality, qp, grid_offset } => {
            if let Some(q) = quality {
                cfg.codec.quality = q;
            }
            if qp.is_some() {
                cfg.codec.qp_override = qp;
            }
            if let Some(g) = grid_offset {
                cfg.codec.grid_offset = g;
            }
            cfg.codec.validate().map_err(|e| CliError::Config(e.to_string()))?;
            let stack = load_stack(&input)?;
            let coded = transcode_stack(&stack, &cfg.codec, cfg.seed).map_err(fail)?;
            ensure_parent(&output)?;
            write_stack(&coded, &output).map_err(fail)?;
            write_manifest(name, &cfg, &output, json!({ "input": path_str(&input) }), &[&path_str(&output)])
        }
        Command::Localize { input, output, threshold_k, roi, camera_preset } => {
            if let Some(k) = threshold_k {
                cfg.localizer.threshold_k = k;
            }
            if let Some(r) = roi {
                cfg.localizer.roi_radius = r;
            }
            if let Some(p) = camera_preset {
                cfg.camera = CameraModel::preset(&p).map_err(|e| CliError::Config(e.to_string()))?;
            }
            cfg.localizer.validate().map_err(CliError::Config)?;
            let stack = load_stack(&input)?;
            let table = localize_stack(&stack, &cfg.localizer, &cfg.camera);
            ensure_parent(&output)?;
            write_localizations(&table, &output).map_err(fail)?;
            write_manifest(name, &cfg, &output, json!({ "input": path_str(&input) }), &[&path_str(&output)])
        }
        Command::MakeDataset { out, stack, table } => {
            let (set, fps, inputs) = match (stack, table) {
                (Some(s), Some(t)) => {
                    let st = load_stack(&s)?;
                    let tb = read_localizations(require(&t)?).map_err(fail)?;
                    let set = make_pairs_from_localizations(&st, &tb, &cfg.grid).map_err(fail)?;
                    (set, st.fps, json!({ "stack": path_str(&s), "table": path_str(&t) }))
                }
                _ => {
                    let set = make_pairs_simulated(&cfg.simulation, &cfg.camera, &cfg.grid, cfg.seed).map_err(fail)?;
                    (set, cfg.simulation.fps, json!({}))
                }
            };
            ensure_dir(&out)?;
            export_dataset(&set, &out, fps).map_err(fail)?;
            write_manifest(name, &cfg, &out, inputs, &["x.cstk", "y.cstk", "dataset.json"])
        }
        Command::Infer { input, weights, output, tile } => {
            let archive = load_weights(require(&weights)?).map_err(fail)?;
            let stack = load_stack(&input)?;
            let table = nn_localize_stack_with_tile(&stack, &archive, &cfg.grid, tile);
            ensure_parent(&output)?;
            write_localizations(&table, &output).map_err(fail)?;
            let inputs = json!({ "input": path_str(&input), "weights": path_str(&weights) });
            write_manifest(name, &cfg, &output, inputs, &[&path_str(&output)])
        }
        Command::Eval { detections, gt, out, radius, one_to_one } => {
            if let Some(r) = radius {
                cfg.eval.match_radius_nm = r;
            }
            if one_to_one {
                cfg.eval.policy = MatchPolicy::OneToOne;
            }
            let det = read_localizations(require(&detections)?).map_err(fail)?;
            let truth = read_emitters(require(&gt)?).map_err(fail)?;
            let report = match_to_gt(&det, &truth, cfg.eval.match_radius_nm, cfg.eval.policy);
            ensure_parent(&out)?;
            write_json(&out, &report)?;
            let inputs = json!({ "detections": path_str(&detections), "gt": path_str(&gt) });
            write_manifest(name, &cfg, &out, inputs, &[&path_str(&out)])
        }
        Command::Frc { input, out, render_px } => {
            if let Some(px) = render_px {
                cfg.eval.render_px_nm = px;
            }
            let table = read_localizations(require(&input)?).map_err(fail)?;
            let result = frc(&table, cfg.eval.render_px_nm, cfg.seed).map_err(fail)?;
            ensure_parent(&out)?;
            write_json(&out, &result)?;
            write_manifest(name, &cfg, &out, json!({ "input": path_str(&input) }), &[&path_str(&out)])
        }
        Command::Render { input, stack, out, render_px, blur } => {
            if let Some(px) = render_px {
                cfg.eval.render_px_nm = px;
            }
            if blur.is_some() {
                cfg.eval.blur_sigma_nm = blur;
            }
            let (image, inputs) = match (input, stack) {
                (Some(i), _) => {
                    let table = read_localizations(require(&i)?).map_err(fail)?;
                    (render(&table, cfg.eval.render_px_nm, cfg.eval.blur_sigma_nm, None), json!({ "input": path_str(&i) }))
                }
                (None, Some(s)) => (widefield(&load_stack(&s)?), json!({ "stack": path_str(&s) })),
                (None, None) => return Err(CliError::Usage("render needs --input or --stack".into())),
            };
            ensure_parent(&out)?;
            write_pgm16(&image, &out).map_err(fail)?;
            write_manifest(name, &cfg, &out, inputs, &[&path_str(&out)])
        }
        Command::Sweep { out, photons, quality, frames, density, weights } => {
            if !photons.is_empty() {
                cfg.sweep.photons = photons;
            }
            if !quality.is_empty() {
                cfg.sweep.qualities = quality;
            }
            if let Some(n) = frames {
                cfg.simulation.n_frames = n;
            }
            if let Some(d) = density {
                cfg.simulation.scene.density = d;
            }
            let archive = match &weights {
                Some(w) => Some(load_weights(require(w)?).map_err(fail)?),
                None => None,
            };
            let report = run_sweep(&cfg.sweep_config(), archive.as_ref().map(|a| (a, &cfg.grid))).map_err(fail)?;
            ensure_dir(&out)?;
            write_text(&out.join("sweep.csv"), &report.to_csv())?;
            write_json(&out.join("sweep_plot.json"), &report.plot_series())?;
            let inputs = json!({ "weights": weights.as_deref().map(path_str) });
            write_manifest(name, &cfg, &out, inputs, &["sweep.csv", "sweep_plot.json"])
        }
    }
}
