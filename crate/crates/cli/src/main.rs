mod commands;
mod error;
mod inspect;
mod settings;

use clap::error::ErrorKind;
use clap::{CommandFactory, Parser, Subcommand};
use error::CliError;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug, Parser)]
#[command(name = "efdr", version, about = "Hide images in the DCT coefficients of JPEG covers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

fn parse_crop(s: &str) -> Result<usize, String> {
    let v: usize = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if v == 0 || v % 8 != 0 {
        return Err("must be a positive multiple of 8".into());
    }
    Ok(v)
}

fn parse_amp(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if !(v >= 0.0 && v.is_finite()) {
        return Err("must be finite and non-negative".into());
    }
    Ok(v)
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Centre-crop a folder of images into covers, secrets and a manifest.
    Prepare {
        src: PathBuf,
        out: PathBuf,
        #[arg(long, default_value_t = 75, value_parser = clap::value_parser!(u32).range(1..=100))]
        qf: u32,
        #[arg(long, default_value_t = 128, value_parser = parse_crop)]
        crop: usize,
    },
    /// Train a model on a prepared dataset.
    Train {
        data: PathBuf,
        out: PathBuf,
        /// `key = value` settings file.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Extra `key=value` setting; repeatable, applied after the file.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
        /// Start from this checkpoint instead of a fresh model.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Leave elapsed time out of the log.
        #[arg(long)]
        no_wall_time: bool,
        #[arg(long, short)]
        quiet: bool,
    },
    /// Write a fresh, untrained checkpoint.
    Init {
        out: PathBuf,
        /// Identity enhance matrix, so the model hides nothing.
        #[arg(long)]
        identity: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
        /// Fit the sub-band normalization to a prepared dataset.
        #[arg(long, value_name = "DATA")]
        fit: Option<PathBuf>,
        /// Perturb every parameter with noise of this relative size.
        #[arg(long, value_name = "AMP", value_parser = parse_amp)]
        randomize: Option<f64>,
    },
    /// Embed a secret image into a cover JPEG.
    Hide {
        cover: PathBuf,
        secret: PathBuf,
        model: PathBuf,
        out: PathBuf,
        /// Also write the redundant output as a tensor file.
        #[arg(long, value_name = "PATH")]
        dump_rf: Option<PathBuf>,
    },
    /// Recover the secret image from a stego JPEG.
    Reveal {
        stego: PathBuf,
        model: PathBuf,
        out: PathBuf,
        /// `zero` or a tensor file written by `hide --dump-rf`.
        #[arg(long, default_value = "zero")]
        aux: String,
    },
    /// Measure hiding and recovery quality over a prepared dataset.
    Eval {
        data: PathBuf,
        model: PathBuf,
        out: PathBuf,
        /// Also write the table as JSON.
        #[arg(long, value_name = "PATH")]
        json: Option<PathBuf>,
    },
    /// Describe a JPEG file or tensor container.
    Inspect {
        file: PathBuf,
        /// Sub-band index `c*64 + u*8 + v`.
        #[arg(long, value_parser = clap::value_parser!(u16).range(0..192))]
        subband: Option<u16>,
        /// Write the selected sub-band as a PGM image.
        #[arg(long, value_name = "PATH")]
        pgm: Option<PathBuf>,
    },
    /// Run the built-in correctness checks.
    Selftest,
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Prepare { src, out, qf, crop } => commands::prepare(&src, &out, qf, crop),
        Command::Train { data, out, config, epochs, lr, seed, sets, init, no_wall_time, quiet } => {
            let mut cfg = settings::build_config(config.as_deref(), &sets)?;
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            if let Some(lr) = lr {
                cfg.adam.lr = lr;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if no_wall_time {
                cfg.log_wall_time = false;
            }
            commands::train(&data, &out, &cfg, init.as_deref(), quiet)
        }
        Command::Init { out, identity, seed, config, sets, fit, randomize } => {
            let mut cfg = settings::build_config(config.as_deref(), &sets)?.model;
            if identity {
                cfg.enhance_init = efdr::network::EnhanceInit::Identity;
            }
            commands::init(&out, cfg, seed, fit.as_deref(), randomize)
        }
        Command::Hide { cover, secret, model, out, dump_rf } => {
            commands::hide(&cover, &secret, &model, &out, dump_rf.as_deref())
        }
        Command::Reveal { stego, model, out, aux } => commands::reveal(&stego, &model, &out, &aux),
        Command::Eval { data, model, out, json } => commands::eval(&data, &model, &out, json.as_deref()),
        Command::Inspect { file, subband, pgm } => {
            print!("{}", inspect::run(&file, subband.map(usize::from), pgm.as_deref())?);
            Ok(())
        }
        Command::Selftest => commands::selftest(),
    }
}

/// Usage of the subcommand named on the command line, or of the tool.
fn usage_for_args() -> String {
    let mut cmd = Cli::command();
    cmd.build();
    let name = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    match name.and_then(|n| cmd.find_subcommand_mut(&n).map(|s| s.render_usage().to_string())) {
        Some(u) => u,
        None => cmd.render_usage().to_string(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let rendered = e.render().to_string();
            let first = rendered.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("{}", CliError::Usage(first.to_string()).line());
            let rest: Vec<&str> = rendered.lines().skip(1).filter(|l| !l.trim().is_empty()).collect();
            for line in &rest {
                eprintln!("{line}");
            }
            if !rest.iter().any(|l| l.starts_with("Usage:")) {
                eprintln!("{}", usage_for_args());
            }
            return ExitCode::from(2);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
