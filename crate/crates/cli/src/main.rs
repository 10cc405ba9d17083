mod run;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dybm::experiments::Scale;
use dybm::{DybmError, Method};

use settings::{read_config, resolve_scale, MarkovSettings, Pairs, SweepSettings, VideoSettings};

/// Trains and evaluates dynamic Boltzmann machines on synthetic Markov
/// chains and videos.
#[derive(Parser, Debug)]
#[command(name = "dybm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Likelihood study on a 7-dimensional binary Markov chain.
    Markov7(Common),
    /// Video reconstruction and prediction.
    Video(Common),
    /// Test accuracy over a grid of regularizers, probabilities and seeds.
    Sweep(Common),
}

#[derive(Args, Debug)]
struct Common {
    /// Flat key = value settings file; its values take precedence over flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root directory for run outputs [env: DYBM_OUT, default: runs].
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = ["desk", "paper"])]
    scale: Option<String>,
    /// Regularizer (comma-separated list for sweep).
    #[arg(long)]
    method: Option<String>,
    /// Regularization probability (comma-separated list for sweep).
    #[arg(long)]
    p: Option<String>,
    /// Input frames per video.
    #[arg(long)]
    frames: Option<usize>,
    /// Frames predicted past the input.
    #[arg(long)]
    predict: Option<usize>,
    #[arg(long, value_parser = ["synthetic", "file"])]
    source: Option<String>,
    /// Raw-frames file read with `--source file`.
    #[arg(long)]
    frames_file: Option<PathBuf>,
    /// Also evaluate the trained model with re-randomized parameters.
    #[arg(long)]
    randomize_weights: bool,
}

impl Common {
    /// Flags as settings pairs, in the order they are applied.
    fn flag_pairs(&self) -> Pairs {
        let mut p: Pairs = Vec::new();
        let mut add = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                p.push((k.to_string(), v));
            }
        };
        add("seed", self.seed.map(|s| s.to_string()));
        add("method", self.method.clone());
        add("p", self.p.clone());
        add("frames", self.frames.map(|f| f.to_string()));
        add("predict", self.predict.map(|f| f.to_string()));
        add("source", self.source.clone());
        add("frames_file", self.frames_file.as_ref().map(|f| f.display().to_string()));
        if self.randomize_weights {
            add("randomize_weights", Some("true".into()));
        }
        p
    }

    fn out_root(&self) -> PathBuf {
        self.out
            .clone()
            .or_else(|| std::env::var_os("DYBM_OUT").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("runs"))
    }

    fn settings_pairs(&self) -> Result<(Scale, Pairs), DybmError> {
        let file = match &self.config {
            Some(path) => read_config(path)?,
            None => Vec::new(),
        };
        let flag_scale = self.scale.as_deref().map(str::parse).transpose()?;
        let scale = resolve_scale(flag_scale, &file)?;
        let mut pairs = self.flag_pairs();
        pairs.extend(file);
        Ok((scale, pairs))
    }
}

fn markov7(args: &Common) -> Result<i32, DybmError> {
    let (scale, pairs) = args.settings_pairs()?;
    if args.method.as_deref().is_some_and(|m| m != Method::DelayPrune.as_str()) {
        return Err(DybmError::Config("markov7 compares the baseline with delay-prune only".into()));
    }
    let pairs: Pairs = pairs.into_iter().filter(|(k, _)| k != "method").collect();
    let s = MarkovSettings::build(scale, 1, &pairs)?;
    let dir = run::markov7(&s, &args.out_root())?;
    println!("outputs in {}", dir.display());
    Ok(run::EXIT_OK)
}

fn video(args: &Common) -> Result<i32, DybmError> {
    let (scale, pairs) = args.settings_pairs()?;
    let s = VideoSettings::build(scale, 1, &pairs)?;
    let dir = run::video(&s, &args.out_root())?;
    println!("outputs in {}", dir.display());
    Ok(run::EXIT_OK)
}

fn sweep(args: &Common) -> Result<i32, DybmError> {
    if args.randomize_weights {
        return Err(DybmError::Config("--randomize-weights applies to video only".into()));
    }
    let (scale, pairs) = args.settings_pairs()?;
    let s = SweepSettings::build(scale, &pairs)?;
    let (dir, failed) = run::sweep(&s, &args.out_root())?;
    println!("outputs in {}", dir.display());
    if failed > 0 {
        eprintln!("error: {failed} sweep cell(s) failed; see cells.csv");
        return Ok(run::EXIT_PARTIAL);
    }
    Ok(run::EXIT_OK)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Markov7(a) => markov7(a),
        Command::Video(a) => video(a),
        Command::Sweep(a) => sweep(a),
    };
    let code = result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        run::exit_code(&e)
    });
    ExitCode::from(code as u8)
}
