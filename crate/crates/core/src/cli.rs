//! Command-line front end. Exit codes: 0 success, 1 usage or configuration
//! error, 2 runtime error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::{generate_synthetic, read_dataset, write_dataset};
use crate::error::{NcdError, Result};
use crate::model::ModelState;
use crate::trainer::{
    default_mu_grid, evaluate, train, tune_wta, unsupervised_cluster, Mode, RunConfig,
    DEFAULT_K_GRID,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "ncd",
    version,
    about = "Novel category discovery with contrastive learning and WTA pseudo-labels"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Dataset CSV; overrides the configured path.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset to <out>/data.csv.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and write metrics.csv, config.json and final.ckpt to <out>.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "run")]
        out: PathBuf,
    },
    /// Print the ACC of a checkpoint on a dataset's unlabelled records.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Defaults to config.json next to the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Grid-search WTA threshold and window on labelled records.
    TuneWta {
        #[command(flatten)]
        common: Common,
        /// Comma-separated thresholds; defaults to fractions of the code length.
        #[arg(long, value_delimiter = ',')]
        mu: Vec<usize>,
        /// Comma-separated window sizes.
        #[arg(long, value_delimiter = ',')]
        k: Vec<usize>,
        /// Number of labelled classes treated as unlabelled.
        #[arg(long)]
        pseudo_classes: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cluster unlabelled records with labelled data dropped.
    Cluster {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "cluster")]
        out: PathBuf,
    },
}

/// `--seed` seeds the generator for `gen-data` and the run otherwise.
fn config_from(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(d) = &common.data {
        cfg.data = Some(d.clone());
    }
    Ok(cfg)
}

fn require_file(p: &Path, what: &str) -> Result<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(NcdError::Config(format!(
            "{what} {} does not exist",
            p.display()
        )))
    }
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData { common, out } => {
            let mut cfg = config_from(&common)?;
            if let Some(seed) = common.seed {
                cfg.synthetic.seed = seed;
            }
            let ds = generate_synthetic(&cfg.synthetic)?;
            std::fs::create_dir_all(&out).map_err(|e| NcdError::io(&out, e))?;
            let path = out.join("data.csv");
            write_dataset(&ds, &path)?;
            println!("wrote {} records to {}", ds.len(), path.display());
        }
        Command::Train { common, out } => {
            let cfg = config_from(&common)?;
            let ds = cfg.load_dataset()?;
            let run = train(&cfg, &ds)?;
            run.write_to(&out)?;
            println!("final acc {}", run.final_acc().unwrap_or(f64::NAN));
        }
        Command::Eval { ckpt, data, config } => {
            require_file(&ckpt, "checkpoint")?;
            require_file(&data, "dataset")?;
            let cfg_path = config.unwrap_or_else(|| ckpt.with_file_name("config.json"));
            require_file(&cfg_path, "config")?;
            let cfg = RunConfig::load(&cfg_path)?;
            let ds = read_dataset(&data)?;
            let ds = if cfg.mode == Mode::Unsupervised {
                ds.unlabelled_only()?
            } else {
                ds
            };
            let model = ModelState::load(cfg.resolve(&ds)?.model_dims()?, &ckpt)?;
            let acc = evaluate(&model, &ds.eval_set()?)?;
            println!("acc {acc}");
        }
        Command::TuneWta {
            common,
            mu,
            k,
            pseudo_classes,
            out,
        } => {
            let mut cfg = config_from(&common)?;
            let ds = cfg.load_dataset()?.labelled_only()?;
            if let Some(p) = pseudo_classes {
                cfg.num_unlabelled_classes = Some(p);
            }
            if cfg.num_unlabelled_classes.is_none() {
                cfg.num_unlabelled_classes = Some(cfg.synthetic.unlabelled_classes);
            }
            let mu = if mu.is_empty() {
                default_mu_grid(cfg.fused)
            } else {
                mu
            };
            let k = if k.is_empty() {
                DEFAULT_K_GRID.to_vec()
            } else {
                k
            };
            let report = tune_wta(&cfg, &ds, &mu, &k)?;
            let mut table = String::from("mu,k,acc\n");
            for r in &report.rows {
                table.push_str(&format!("{},{},{}\n", r.threshold, r.window, r.acc));
            }
            print!("{table}");
            println!("chosen mu={} k={}", report.threshold, report.window);
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir).map_err(|e| NcdError::io(&dir, e))?;
                let p = dir.join("tune.csv");
                std::fs::write(&p, table).map_err(|e| NcdError::io(&p, e))?;
            }
        }
        Command::Cluster { common, out } => {
            let mut cfg = config_from(&common)?;
            cfg.mode = Mode::Unsupervised;
            let ds = cfg.load_dataset()?;
            let run = unsupervised_cluster(&cfg, &ds)?;
            run.write_to(&out)?;
            println!("final acc {}", run.final_acc().unwrap_or(f64::NAN));
        }
    }
    Ok(())
}

/// Parses `argv` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                EXIT_CONFIG
            } else {
                EXIT_RUNTIME
            }
        }
    }
}
