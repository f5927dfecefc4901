use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use imusynth::evaluation::{orientation_error_series, spectral_cosine_similarity, SpectrumBands, Taper};
use imusynth::io;
use imusynth::noninertial::{corrected_leaf_acceleration, fictitious_acceleration, root_frame_quantities};
use imusynth::pipeline::{self, Run, RunOptions};
use imusynth::{Error, Result};

#[derive(Parser)]
#[command(name = "imusynth", version, about = "Synthesize, fuse and calibrate IMU data from 6DoF trajectories")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Pipeline config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Global seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory; overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Disable sensor sliding and measurement noise.
    #[arg(long)]
    no_noise: bool,
    /// Use the calibration without modeled error.
    #[arg(long)]
    no_calib_error: bool,
    /// Solve the synthesis energies in windows of this many keyframes.
    #[arg(long)]
    window: Option<usize>,
}

impl RunArgs {
    fn run(&self) -> Result<Run> {
        Run::new(
            &self.config,
            RunOptions {
                seed: self.seed,
                out: self.out.clone(),
                no_noise: self.no_noise,
                no_calib_error: self.no_calib_error,
                window: self.window,
            },
        )
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write clean and noisy raw IMU streams for every sensor.
    Synth(RunArgs),
    /// Fuse the noisy streams of a synth run into orientations.
    Fuse(RunArgs),
    /// Simulated T-pose calibration from fused orientations.
    Calibrate(RunArgs),
    /// Synth, fuse, calibrate, bone orientations, leaf features and report.
    Pipeline {
        #[command(flatten)]
        args: Option<RunArgs>,
        /// Re-run a recorded manifest and compare every output hash.
        #[arg(long, conflicts_with = "config")]
        replay: Option<PathBuf>,
        /// Directory for replayed outputs (default: `replay` next to the manifest).
        #[arg(long, requires = "replay")]
        replay_out: Option<PathBuf>,
    },
    /// Fictitious and corrected accelerations of leaf joints in the root frame.
    Ficacc {
        /// Root bone trajectory CSV.
        #[arg(long)]
        root: PathBuf,
        /// Leaf bone trajectory CSVs.
        #[arg(long, required = true)]
        leaf: Vec<PathBuf>,
        #[arg(long, default_value = "ficacc")]
        out: PathBuf,
    },
    /// Compare two signals (spectral similarity) or two orientation series.
    Eval {
        a: PathBuf,
        b: PathBuf,
        /// Compare `qw,qx,qy,qz` orientation columns instead of signals.
        #[arg(long)]
        orientation: bool,
        /// Signal columns to compare.
        #[arg(long, value_delimiter = ',', default_value = "ax,ay,az")]
        columns: Vec<String>,
        #[arg(long, default_value_t = 180.0)]
        sample_rate: f64,
        #[arg(long, default_value_t = 10.0)]
        cutoff: f64,
        /// Raw periodogram without the Hann window.
        #[arg(long)]
        no_window: bool,
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Synth(args) => {
            let m = pipeline::cmd_synth(&args.run()?)?;
            println!("wrote {} files", m.outputs.len());
        }
        Command::Fuse(args) => {
            let outcome = pipeline::cmd_fuse(&args.run()?)?;
            println!("wrote {} files", outcome.manifest.outputs.len());
            for e in &outcome.failures {
                eprintln!("error: {e}");
            }
            if let Some(e) = outcome.failures.into_iter().next() {
                return Err(e);
            }
        }
        Command::Calibrate(args) => {
            let run = args.run()?;
            pipeline::cmd_calibrate(&run)?;
            println!("wrote {}", run.out_dir.join("calibration.toml").display());
        }
        Command::Pipeline { args, replay, replay_out } => match (args, replay) {
            (_, Some(manifest)) => {
                let out = replay_out.unwrap_or_else(|| manifest.parent().unwrap_or(Path::new(".")).join("replay"));
                let report = pipeline::replay(&manifest, &out)?;
                println!("replayed into {}: {} outputs identical", out.display(), report.matched);
                if !report.is_identical() {
                    return Err(Error::InvalidInput(format!("outputs differ: {}", report.mismatched.join(", "))));
                }
            }
            (Some(args), None) => {
                let run = args.run()?;
                let (_, report) = pipeline::cmd_pipeline(&run)?;
                println!("{}", toml::to_string(&report).expect("report serializes"));
            }
            (None, None) => return Err(Error::Config("pipeline needs --config or --replay".into())),
        },
        Command::Ficacc { root, leaf, out } => ficacc(&root, &leaf, &out)?,
        Command::Eval { a, b, orientation, columns, sample_rate, cutoff, no_window, out } => {
            let text = if orientation {
                let e = orientation_error_series(&io::read_orientations(&a)?, &io::read_orientations(&b)?)?;
                let max = e.degrees.iter().copied().fold(0.0, f64::max);
                report_text(&OrientationReport { mean_error_deg: e.mean, max_error_deg: max, samples: e.degrees.len() })
            } else {
                let cols: [&str; 3] = match columns.as_slice() {
                    [x, y, z] => [x, y, z],
                    _ => return Err(Error::Config("--columns needs exactly three names".into())),
                };
                let bands = SpectrumBands::new(cutoff, sample_rate).map_err(|e| Error::Config(e.to_string()))?;
                let taper = if no_window { Taper::None } else { Taper::Hann };
                let r = spectral_cosine_similarity(&io::read_signal(&a, cols)?, &io::read_signal(&b, cols)?, &bands, taper)?;
                report_text(&r)
            };
            print!("{text}");
            if let Some(path) = out {
                std::fs::write(&path, &text).map_err(|e| Error::Io { path, source: e })?;
            }
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct OrientationReport {
    mean_error_deg: f64,
    max_error_deg: f64,
    samples: usize,
}

fn report_text<T: Serialize>(r: &T) -> String {
    toml::to_string(r).expect("report serializes")
}

fn ficacc(root: &Path, leaves: &[PathBuf], out: &Path) -> Result<()> {
    let root_seq = io::read_bone_csv(root)?;
    for leaf_path in leaves {
        let leaf = io::read_bone_csv(leaf_path)?;
        if leaf.frame_rate() != root_seq.frame_rate() {
            return Err(Error::InvalidInput(format!("{} and the root differ in frame rate", leaf_path.display())));
        }
        let rate = root_seq.frame_rate();
        let rows: Vec<Vec<f64>> = root_frame_quantities(rate, root_seq.samples(), leaf.samples())?
            .iter()
            .map(|q| {
                let fic = fictitious_acceleration(&q.root, &q.leaf.position, &q.leaf.velocity);
                let pdd = corrected_leaf_acceleration(&q.root, &q.leaf);
                vec![q.frame as f64 / rate, fic.x, fic.y, fic.z, pdd.x, pdd.y, pdd.z]
            })
            .collect();
        let stem = leaf_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "leaf".into());
        let path = out.join(format!("{stem}.csv"));
        io::write_table(
            &path,
            &["root frame; fictitious acceleration afic and corrected leaf acceleration pddot, m/s^2".to_string()],
            &["t", "afic_x", "afic_y", "afic_z", "pddot_x", "pddot_y", "pddot_z"],
            &rows,
        )?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
