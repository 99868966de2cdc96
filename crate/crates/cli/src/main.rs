mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use config::{RunConfig, Workspace};

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  2  invalid command line
  3  invalid configuration or schema violation
  4  missing or unreadable input file
  5  numerical failure (blowup, rank-deficient Jacobian, non-finite loss)
  6  other model error (dimension mismatch, bad node index, ...)
  7  I/O failure while writing outputs

On failure a JSON object {\"error\": kind, \"message\": text, \"exit_code\": n}
is printed to stderr. On success a JSON line with the command, config hash,
seeds and output files is printed to stdout.";

#[derive(Parser, Debug)]
#[command(name = "hamroc", version, about = "Latent-space model reduction and posture control for mass-spring-damper networks", after_help = EXIT_CODES)]
struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,

    /// Root that relative paths are resolved against.
    #[arg(long, global = true, env = "HAMROC_WORKSPACE")]
    workspace: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a random network.
    Generate {
        #[arg(long, short)]
        out: PathBuf,
        /// Overrides `generator.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `generator.n_base_cells`.
        #[arg(long)]
        cells: Option<usize>,
    },
    /// Simulate the unforced network from a perturbed rest state.
    Simulate {
        #[arg(long, short)]
        network: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        #[command(flatten)]
        sim: SimFlags,
    },
    /// Simulate the gravity protocol and write the three dataset splits.
    MakeDataset {
        #[arg(long, short)]
        network: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        /// Overrides `dataset.protocol.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train an autoencoder on a dataset directory.
    Train {
        #[arg(long, short)]
        dataset: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        /// Overrides `training.latent_dim`.
        #[arg(long)]
        latent_dim: Option<usize>,
        /// Overrides `training.hyper.epochs`.
        #[arg(long)]
        epochs: Option<usize>,
        /// Overrides `training.hyper.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Run the hyperparameter grid (`training.grid`).
        #[arg(long)]
        grid: bool,
        /// TOML file with a grid (`lr`, `weight_decay`, `lr_gamma`, `lr_step`); implies --grid.
        #[arg(long)]
        grid_file: Option<PathBuf>,
    },
    /// Integrate the reduced model and map it back to the full space.
    RomSim {
        #[arg(long, short)]
        network: PathBuf,
        #[arg(long, short)]
        model: PathBuf,
        /// Reconstructed full-order trajectory.
        #[arg(long, short)]
        out: PathBuf,
        /// Latent trajectory; `<out stem>_latent.csv` when omitted.
        #[arg(long)]
        latent_out: Option<PathBuf>,
        #[command(flatten)]
        sim: SimFlags,
    },
    /// Run latent-space regulation tasks against the full plant.
    Control {
        #[arg(long, short)]
        network: PathBuf,
        #[arg(long, short)]
        model: PathBuf,
        /// Dataset directory; targets come from its train and valid splits.
        #[arg(long, short)]
        dataset: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        /// Overrides `control.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `control.n_tasks`.
        #[arg(long)]
        tasks: Option<usize>,
    },
    /// Score a model on the test trajectories of a dataset.
    Eval {
        #[arg(long, short)]
        network: PathBuf,
        #[arg(long, short)]
        model: PathBuf,
        #[arg(long, short)]
        dataset: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Both)]
        mode: Mode,
    },
    /// Latent-size, noise or latent-alteration sweeps.
    Sweep {
        #[arg(long, short)]
        dataset: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, value_enum)]
        kind: SweepKind,
        /// Model for the noise and latent sweeps.
        #[arg(long, short)]
        model: Option<PathBuf>,
        /// Comma-separated override of the sweep values.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
    },
    /// Print the effective configuration as TOML.
    ShowConfig,
}

#[derive(Args, Debug, Default)]
struct SimFlags {
    #[arg(long, allow_hyphen_values = true)]
    g: Option<f64>,
    /// Gravity direction, rad from the +x axis.
    #[arg(long, allow_hyphen_values = true)]
    theta: Option<f64>,
    #[arg(long)]
    init_seed: Option<u64>,
    #[arg(long)]
    duration: Option<f64>,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Mode {
    Pointwise,
    Compressed,
    Both,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum SweepKind {
    Sizes,
    Sigmas,
    Fractions,
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Missing(String),
    Write(String),
    Numerical(String),
    Core(hamroc_core::Error),
}

impl CliError {
    pub fn missing(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Missing(format!("{}: {e}", path.display()))
    }

    fn kind_and_code(&self) -> (&'static str, u8) {
        use hamroc_core::Error as E;
        match self {
            CliError::Config(_) => ("config", 3),
            CliError::Missing(_) => ("missing_file", 4),
            CliError::Write(_) => ("io", 7),
            CliError::Numerical(_) => ("numerical", 5),
            CliError::Core(e) => match e {
                E::InvalidConfig(_) | E::Format { .. } | E::Json(_) => ("config", 3),
                E::Io(_) => ("missing_file", 4),
                E::NumericalBlowup { .. }
                | E::RankDeficient { .. }
                | E::RankDeficientJacobian { .. }
                | E::NotSpd
                | E::NonFinite(_)
                | E::NonFiniteLoss { .. }
                | E::DegenerateSpring { .. }
                | E::RejectionExhausted(_) => ("numerical", 5),
                _ => ("model", 6),
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) | CliError::Missing(m) | CliError::Write(m) | CliError::Numerical(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<hamroc_core::Error> for CliError {
    fn from(e: hamroc_core::Error) -> Self {
        CliError::Core(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let (kind, code) = e.kind_and_code();
            eprintln!("{}", json!({ "error": kind, "message": e.to_string(), "exit_code": code }));
            ExitCode::from(code)
        }
    }
}

fn run(cli: Cli) -> Result<serde_json::Value, CliError> {
    let root = match cli.workspace {
        Some(p) => p,
        None => std::env::current_dir().map_err(|e| CliError::Config(format!("no working directory: {e}")))?,
    };
    let ws = Workspace { root };
    let config_path = cli.config.map(|p| ws.resolve(&p));
    let mut cfg = RunConfig::load(config_path.as_deref())?;
    let r = |p: &PathBuf| ws.resolve(p);
    match cli.command {
        Command::Generate { out, seed, cells } => {
            if let Some(s) = seed {
                cfg.generator.seed = s;
            }
            if let Some(c) = cells {
                cfg.generator.n_base_cells = c;
            }
            commands::generate(&cfg, &r(&out))
        }
        Command::Simulate { network, out, sim } => {
            apply_sim(&mut cfg, &sim);
            commands::simulate(&cfg, &r(&network), &r(&out))
        }
        Command::MakeDataset { network, out, seed } => {
            if let Some(s) = seed {
                cfg.dataset.protocol.seed = s;
            }
            commands::make_dataset(&cfg, &r(&network), &r(&out))
        }
        Command::Train { dataset, out, latent_dim, epochs, seed, grid, grid_file } => {
            if let Some(m) = latent_dim {
                cfg.training.latent_dim = m;
            }
            if let Some(e) = epochs {
                cfg.training.hyper.epochs = e;
            }
            if let Some(s) = seed {
                cfg.training.hyper.seed = s;
            }
            if let Some(path) = grid_file {
                let path = r(&path);
                let text = std::fs::read_to_string(&path).map_err(|e| CliError::missing(&path, e))?;
                cfg.training.grid = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                cfg.training.grid_search = true;
            }
            cfg.training.grid_search |= grid;
            commands::train(&cfg, &r(&dataset), &r(&out))
        }
        Command::RomSim { network, model, out, latent_out, sim } => {
            apply_sim(&mut cfg, &sim);
            let out = r(&out);
            let latent_out = latent_out.map(|p| r(&p)).unwrap_or_else(|| sibling(&out, "_latent"));
            commands::rom_sim(&cfg, &r(&network), &r(&model), &out, &latent_out)
        }
        Command::Control { network, model, dataset, out, seed, tasks } => {
            if let Some(s) = seed {
                cfg.control.seed = s;
            }
            if let Some(n) = tasks {
                cfg.control.n_tasks = n;
            }
            commands::control(&cfg, &r(&network), &r(&model), &r(&dataset), &r(&out))
        }
        Command::Eval { network, model, dataset, out, mode } => {
            let modes = match mode {
                Mode::Pointwise => (true, false),
                Mode::Compressed => (false, true),
                Mode::Both => (true, true),
            };
            commands::eval(&cfg, &r(&network), &r(&model), &r(&dataset), &r(&out), modes)
        }
        Command::Sweep { dataset, out, kind, model, values } => {
            let model = model.map(|p| r(&p));
            match kind {
                SweepKind::Sizes => {
                    if let Some(v) = values {
                        cfg.eval.latent_sizes = v.iter().map(|x| *x as usize).collect();
                    }
                    commands::sweep_sizes(&cfg, &r(&dataset), &r(&out))
                }
                SweepKind::Sigmas => {
                    if let Some(v) = values {
                        cfg.eval.noise_sigmas = v;
                    }
                    commands::sweep_sigmas(&cfg, &r(&dataset), &r(&out), model.as_deref())
                }
                SweepKind::Fractions => {
                    if let Some(v) = values {
                        cfg.eval.latent_fractions = v;
                    }
                    commands::sweep_fractions(&cfg, &r(&dataset), &r(&out), model.as_deref())
                }
            }
        }
        Command::ShowConfig => {
            print!("{}", cfg.to_toml());
            Ok(json!({ "command": "show-config", "config_hash": cfg.hash() }))
        }
    }
}

fn apply_sim(cfg: &mut RunConfig, f: &SimFlags) {
    let s = &mut cfg.simulation;
    if let Some(g) = f.g {
        s.g = g;
    }
    if let Some(t) = f.theta {
        s.theta = t;
    }
    if let Some(i) = f.init_seed {
        s.init_seed = i;
    }
    if let Some(d) = f.duration {
        s.duration = d;
    }
}

/// `dir/stem{suffix}.csv` next to `path`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}.csv"))
}
