//! Argument parsing and dispatch for the `hierseg` binary.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use toml::Value;

use crate::commands;
use crate::config::{parse_override, RunConfig};
use crate::error::{Error, Result};

#[derive(Debug, Parser)]
#[command(
    name = "hierseg",
    version,
    about = "Volumetric segmentation with hierarchical decoding"
)]
pub struct Cli {
    /// TOML config file (flat dotted keys or tables).
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Overrides `seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output directory [default: out/<verb>].
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,

    /// Overrides any config key, e.g. `--set train.lr=0.003`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic phantom image/mask pairs as NIfTI.
    Phantom {
        /// Number of phantoms (phantom.n).
        #[arg(long)]
        n: Option<usize>,
        /// Extents X,Y,Z (phantom.extents).
        #[arg(long, value_delimiter = ',')]
        extents: Option<Vec<usize>>,
    },
    /// Reorient, resample and normalize every scan in a directory.
    Preprocess {
        #[arg(long, value_name = "DIR")]
        input: PathBuf,
        /// ct or mri (preprocess.modality).
        #[arg(long)]
        modality: Option<String>,
    },
    /// Train one model, saving best and last checkpoints.
    Train {
        /// Scan directory (data.dir); phantoms are generated when absent.
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
        /// Continue from a checkpoint.
        #[arg(long, value_name = "FILE")]
        resume: Option<PathBuf>,
        /// Total epoch count (train.epochs).
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// K-fold cross-validation with per-fold and pooled reports.
    Crossval {
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
    },
    /// Segment a scan with a checkpoint.
    Infer {
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "FILE")]
        image: PathBuf,
        /// Also write a PNG montage of axial slices.
        #[arg(long)]
        montage: bool,
    },
    /// Print DSC, PPV and sensitivity of a predicted mask.
    Eval {
        #[arg(long, value_name = "FILE")]
        pred: PathBuf,
        #[arg(long, value_name = "FILE")]
        gt: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Phantom { .. } => "phantom",
            Command::Preprocess { .. } => "preprocess",
            Command::Train { .. } => "train",
            Command::Crossval { .. } => "crossval",
            Command::Infer { .. } => "infer",
            Command::Eval { .. } => "eval",
        }
    }

    /// Verb flags that map onto config keys.
    fn overrides(&self) -> Result<Vec<(String, Value)>> {
        let mut o: Vec<(String, Value)> = Vec::new();
        let path = |p: &Path| Value::String(p.to_string_lossy().into_owned());
        match self {
            Command::Phantom { n, extents } => {
                if let Some(n) = n {
                    o.push(("phantom.n".into(), Value::Integer(*n as i64)));
                }
                if let Some(e) = extents {
                    if e.len() != 3 {
                        return Err(Error::Usage(format!("--extents takes three values, got {}", e.len())));
                    }
                    o.push((
                        "phantom.extents".into(),
                        Value::Array(e.iter().map(|&v| Value::Integer(v as i64)).collect()),
                    ));
                }
            }
            Command::Preprocess { modality, .. } => {
                if let Some(m) = modality {
                    o.push(("preprocess.modality".into(), Value::String(m.clone())));
                }
            }
            Command::Train { data, epochs, .. } => {
                if let Some(d) = data {
                    o.push(("data.dir".into(), path(d)));
                }
                if let Some(e) = epochs {
                    o.push(("train.epochs".into(), Value::Integer(*e as i64)));
                }
            }
            Command::Crossval { data } => {
                if let Some(d) = data {
                    o.push(("data.dir".into(), path(d)));
                }
            }
            Command::Infer { .. } | Command::Eval { .. } => {}
        }
        Ok(o)
    }
}

impl Cli {
    /// Defaults, then `--config`, then `--set`, verb flags and `--seed`.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut overrides = Vec::new();
        for s in &self.set {
            overrides.push(parse_override(s)?);
        }
        overrides.extend(self.command.overrides()?);
        if let Some(seed) = self.seed {
            overrides.push(("seed".into(), Value::Integer(seed as i64)));
        }
        RunConfig::resolve_file(self.config.as_deref(), &overrides)
    }

    fn out_dir(&self) -> PathBuf {
        self.out
            .clone()
            .unwrap_or_else(|| Path::new("out").join(self.command.name()))
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    let cfg = cli.resolve()?;
    let out = cli.out_dir();
    match &cli.command {
        Command::Phantom { .. } => {
            let files = commands::cmd_phantom(&cfg, &out)?;
            println!("wrote {} files to {}", files.len(), out.display());
        }
        Command::Preprocess { input, .. } => {
            let r = commands::cmd_preprocess(&cfg, input, &out)?;
            println!("wrote {} files and {}", r.written.len(), r.manifest.display());
        }
        Command::Train { resume, .. } => {
            let s = commands::cmd_train(&cfg, &out, resume.as_deref())?;
            println!(
                "trained {} epochs; best epoch {} (val DSC {:.4}) saved to {}",
                s.epochs,
                s.best_epoch,
                s.best_val_dsc,
                s.best_checkpoint.display()
            );
        }
        Command::Crossval { .. } => {
            let r = commands::cmd_crossval(&cfg, &out)?;
            let mut reports: Vec<_> = r.folds.iter().map(|f| &f.report).collect();
            reports.push(&r.pooled);
            print!("{}", hierseg_core::metrics::render_table(&reports));
        }
        Command::Infer {
            checkpoint,
            image,
            montage,
        } => {
            let o = commands::cmd_infer(&cfg, checkpoint, image, &out, *montage)?;
            println!("wrote {}", o.mask.display());
            if let Some(m) = o.montage {
                println!("wrote {}", m.display());
            }
        }
        Command::Eval { pred, gt } => {
            let m = commands::cmd_eval(pred, gt, cli.out.as_deref())?;
            println!("DSC {:.4}  PPV {:.4}  SENS {:.4}", m.dsc, m.ppv, m.sensitivity);
        }
    }
    Ok(())
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
