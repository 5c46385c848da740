//! The `screengaze` command line.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::dataset::Dataset;
use crate::error::Error;
use crate::experiments::{
    calibrate, evaluate, median, sweep, sweep_means, trajectory_distances, write_sweep_csv,
    write_trajectory_distances_csv, CalibrationReport,
};
use crate::gradcheck::{self, Corruption, GradcheckConfig};
use crate::pseudolabel::{OriginMode, TrajectoryLog};
use crate::simulator::{generate, SceneSpec, SceneTruth};
use crate::trainer::TrainConfig;

#[derive(Parser, Debug)]
#[command(name = "screengaze", version, about = "Few-shot on-screen gaze calibration")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset and its ground-truth sidecar.
    Simulate {
        /// Scene JSON; omitted fields take their defaults.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to `truth.json` next to `--out`.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Learn the screen pose and gaze adapter for every subject.
    Calibrate {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        out: PathBuf,
        /// Write per-epoch pseudo-labels of the flipped samples here.
        #[arg(long)]
        trajectory: Option<PathBuf>,
        /// Write per-epoch losses of every subject here.
        #[arg(long)]
        losses: Option<PathBuf>,
    },
    /// Test-split error of a calibration report.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Also report the mean error in pixels at this density.
        #[arg(long)]
        ppi: Option<f64>,
        /// Write the metrics JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Error against the number of labelled samples, over resampled subsets.
    Sweep {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long, value_delimiter = ',', default_value = "3,5,10,20,50")]
        n_list: Vec<usize>,
        #[arg(long, default_value_t = 10)]
        trials: u64,
        /// Add a wall-clock column (makes the output machine-dependent).
        #[arg(long)]
        timing: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare logged pseudo-labels with labels derived from the true pose.
    Trajectory {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        trajectory: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Exit with 1 unless the median last/first distance ratio is below this.
        #[arg(long)]
        max_ratio: Option<f64>,
    },
    /// Finite-difference check of every analytic derivative.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        states: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, hide = true)]
        corrupt: Option<CorruptArg>,
    },
}

#[derive(Args, Debug, Clone, Default)]
pub struct TrainArgs {
    /// Training config JSON; omitted fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Drop the flipped-sample loss.
    #[arg(long)]
    pub no_flip: bool,
    /// Drop the uncertainty loss.
    #[arg(long)]
    pub no_unc: bool,
    /// Build pseudo-labels without the alignment rotation.
    #[arg(long)]
    pub no_align: bool,
    /// Fix the screen at the pose in this truth file and learn only the adapter.
    #[arg(long, value_name = "TRUTH_JSON")]
    pub known_pose: Option<PathBuf>,
    /// Mirror the face centre of flipped samples.
    #[arg(long)]
    pub mirror_origin: bool,
}

impl TrainArgs {
    pub fn resolve(&self) -> anyhow::Result<TrainConfig> {
        let mut c: TrainConfig = match &self.config {
            Some(p) => read_json(p)?,
            None => TrainConfig::default(),
        };
        if self.no_flip {
            c.w_flip = 0.0;
        }
        if self.no_unc {
            c.w_unc = 0.0;
        }
        if self.no_align {
            c.use_alignment = false;
        }
        if self.mirror_origin {
            c.origin_mode = OriginMode::Mirror;
        }
        if let Some(p) = &self.known_pose {
            let truth: SceneTruth = read_json(p)?;
            c.init_pose = truth.true_pose;
            c.learn_pose = false;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum CorruptArg {
    Projection,
    Adapter,
    Composite,
}

impl From<CorruptArg> for Corruption {
    fn from(c: CorruptArg) -> Self {
        match c {
            CorruptArg::Projection => Corruption::Projection,
            CorruptArg::Adapter => Corruption::Adapter,
            CorruptArg::Composite => Corruption::Composite,
        }
    }
}

/// A run that completed but did not meet its check.
#[derive(Debug)]
struct VerificationFailed(String);

impl std::fmt::Display for VerificationFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for VerificationFailed {}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    serde_json::from_reader(BufReader::new(f))
        .map_err(Error::from)
        .with_context(|| format!("reading {}", path.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    with_writer(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value).map_err(Error::from)?;
        w.write_all(b"\n").map_err(Error::from)?;
        Ok(())
    })
}

fn with_writer<F>(path: &Path, f: F) -> anyhow::Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> crate::Result<()>,
{
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    f(&mut w).with_context(|| format!("writing {}", path.display()))?;
    w.flush().with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn read_data(path: &Path) -> anyhow::Result<Dataset> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Dataset::read_csv(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Simulate { spec, seed, out, truth } => {
            let mut spec: SceneSpec = match spec {
                Some(p) => read_json(&p)?,
                None => SceneSpec::default(),
            };
            if let Some(s) = seed {
                spec.seed = s;
            }
            let synthetic = generate(&spec)?;
            let data = synthetic.dataset();
            with_writer(&out, |w| data.write_csv(w))?;
            let truth = truth.unwrap_or_else(|| out.with_file_name("truth.json"));
            write_json(&truth, &spec.truth())?;
            log::info!("wrote {} samples to {}", data.samples.len(), out.display());
        }
        Command::Calibrate {
            data,
            train,
            out,
            trajectory,
            losses,
        } => {
            let config = train.resolve()?;
            let data = read_data(&data)?;
            let report = calibrate(&data, &config)?;
            write_json(&out, &report)?;
            if let Some(p) = trajectory {
                let log = report.trajectory();
                with_writer(&p, |w| log.write_csv(w))?;
            }
            if let Some(p) = losses {
                with_writer(&p, |w| report.write_loss_csv(w))?;
            }
        }
        Command::Evaluate { data, report, ppi, out } => {
            let data = read_data(&data)?;
            let report: CalibrationReport = read_json(&report)?;
            let metrics = evaluate(&data, &report, ppi)?;
            match out {
                Some(p) => write_json(&p, &metrics)?,
                None => println!("{}", serde_json::to_string_pretty(&metrics)?),
            }
        }
        Command::Sweep {
            data,
            train,
            n_list,
            trials,
            timing,
            out,
        } => {
            if n_list.is_empty() || trials == 0 {
                return Err(Error::InvalidConfig("need at least one N and one trial".into()).into());
            }
            let config = train.resolve()?;
            let data = read_data(&data)?;
            let rows = sweep(&data, &config, &n_list, trials, timing)?;
            with_writer(&out, |w| write_sweep_csv(&rows, w))?;
            for (n, m) in sweep_means(&rows) {
                println!("N={n}\tmean_error_mm={m:.4}");
            }
        }
        Command::Trajectory {
            data,
            truth,
            trajectory,
            out,
            max_ratio,
        } => {
            let data = read_data(&data)?;
            let truth: SceneTruth = read_json(&truth)?;
            let f = File::open(&trajectory).with_context(|| format!("opening {}", trajectory.display()))?;
            let log = TrajectoryLog::read_csv(BufReader::new(f))
                .with_context(|| format!("reading {}", trajectory.display()))?;
            let rows = trajectory_distances(&log, &data, &truth.true_pose)?;
            with_writer(&out, |w| write_trajectory_distances_csv(&rows, w))?;
            let ratios: Vec<f64> = rows.iter().map(|r| r.ratio()).collect();
            let m = median(&ratios);
            println!("samples={}\tmedian_ratio={m:.6}", rows.len());
            if let Some(limit) = max_ratio {
                if !(m < limit) {
                    bail!(VerificationFailed(format!(
                        "median last/first distance ratio {m:.4} is not below {limit}"
                    )));
                }
            }
        }
        Command::Gradcheck {
            seed,
            states,
            out,
            corrupt,
        } => {
            let report = gradcheck::run(&GradcheckConfig {
                seed,
                n_states: states,
                corrupt: corrupt.map(Corruption::from),
                ..GradcheckConfig::default()
            })?;
            for s in &report.suites {
                println!(
                    "{}\t{}\tmax_rel_err={:.3e}\ttol={:.0e}\tstates={}",
                    if s.passed { "PASS" } else { "FAIL" },
                    s.name,
                    s.max_relative_error,
                    s.tolerance,
                    s.n_states
                );
            }
            if let Some(p) = out {
                write_json(&p, &report)?;
            }
            if !report.passed {
                bail!(VerificationFailed("finite-difference check failed".into()));
            }
        }
    }
    Ok(())
}

/// 1 for failed checks and runtime failures, 2 for bad input.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<VerificationFailed>().is_some() {
        return 1;
    }
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return if e.is_schema_error() { 2 } else { 1 };
        }
        if cause.is::<std::io::Error>() {
            return 2;
        }
    }
    1
}

pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
