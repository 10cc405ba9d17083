//! Subcommand bodies. Each run writes into its own directory named after
//! the subcommand and a hash of the effective settings, so identical
//! settings always land in (and reproduce) the same files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use dybm::datagen::ingest_frames;
use dybm::experiments::{
    markov_arm, markov_data, prepare_video_data, randomized_evaluation, run_sweep, split_videos,
    synthetic_videos, video_arm, TrainedArm, VideoEvaluation,
};
use dybm::{BinarySequence, DybmError, Method};

use crate::settings::{MarkovSettings, Source, SweepSettings, VideoSettings};

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_DIVERGENCE: i32 = 4;
pub const EXIT_PARTIAL: i32 = 5;

pub fn exit_code(err: &DybmError) -> i32 {
    match err {
        DybmError::Config(_) => EXIT_CONFIG,
        DybmError::Data(_) | DybmError::Parse { .. } | DybmError::Shape(_) => EXIT_DATA,
        DybmError::Divergence { .. } | DybmError::NumericalState { .. } => EXIT_DIVERGENCE,
        _ => EXIT_OTHER,
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Creates `<root>/<command>-<hash of settings>` and records the settings.
pub fn run_dir(root: &Path, command: &str, rendered: &str) -> Result<PathBuf, DybmError> {
    let dir = root.join(format!("{command}-{:016x}", fnv1a(rendered.as_bytes())));
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.txt"), rendered)?;
    Ok(dir)
}

fn write_arm(dir: &Path, arm: &TrainedArm) -> Result<(), DybmError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("metrics.csv"), arm.metrics.to_csv())?;
    arm.best.save(dir.join("best.ckpt"))
}

fn arm_dir_name(method: Method) -> &'static str {
    match method {
        Method::None => "baseline",
        m => m.as_str(),
    }
}

pub fn markov7(s: &MarkovSettings, root: &Path) -> Result<PathBuf, DybmError> {
    let dir = run_dir(root, "markov7", &s.render())?;
    let cfg = &s.config;
    let data = markov_data(cfg)?;
    let mut summary = String::from("arm,method,p,pearson_r,best_step,epsilon\n");
    for (name, method, p) in [
        ("baseline", Method::None, 0.0),
        ("pruned", Method::DelayPrune, cfg.prune_prob),
    ] {
        let arm = markov_arm(cfg, &data, method, p)?;
        let sub = dir.join(name);
        write_arm(&sub, &arm.arm)?;
        fs::write(sub.join("correlation.csv"), arm.correlation.to_csv())?;
        let r = arm.correlation.pearson_r;
        let _ = writeln!(summary, "{name},{method},{p},{r},{},{}", arm.arm.best.step, arm.arm.best.epsilon);
        println!("{name} pearson_r = {r:.4}");
    }
    fs::write(dir.join("summary.csv"), summary)?;
    Ok(dir)
}

fn rollouts_csv(rollouts: &[BinarySequence]) -> String {
    let mut out = String::from("video,frame,bits\n");
    for (v, seq) in rollouts.iter().enumerate() {
        for (t, col) in seq.columns().enumerate() {
            let bits: String = col.iter().map(|&b| if b == 1 { '1' } else { '0' }).collect();
            let _ = writeln!(out, "{v},{t},{bits}");
        }
    }
    out
}

fn write_evaluation(dir: &Path, ev: &VideoEvaluation) -> Result<(), DybmError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("accuracy.csv"), ev.accuracy.to_csv())?;
    fs::write(dir.join("rollouts.csv"), rollouts_csv(&ev.rollouts))?;
    Ok(())
}

fn opt(x: Option<f64>) -> String {
    x.map_or(String::new(), |v| v.to_string())
}

pub fn video(s: &VideoSettings, root: &Path) -> Result<PathBuf, DybmError> {
    let cfg = &s.config;
    let (train, validation, test) = match s.source {
        Source::Synthetic => synthetic_videos(cfg)?,
        Source::File => {
            let path = s.frames_file.as_deref().ok_or_else(|| {
                DybmError::Data("--source file needs --frames-file; use --source synthetic to generate videos".into())
            })?;
            if !Path::new(path).exists() {
                return Err(DybmError::Data(format!(
                    "frames file '{path}' not found; use --source synthetic to generate videos"
                )));
            }
            split_videos(cfg, &ingest_frames(path)?)?
        }
    };
    let data = prepare_video_data(cfg, &train, &validation, &test)?;
    let dir = run_dir(root, "video", &s.render())?;
    let mut summary = String::from("arm,method,p,overall,reconstruction,prediction\n");
    let mut line = |name: &str, method: Method, p: f64, ev: &VideoEvaluation| {
        let a = &ev.accuracy;
        let _ = writeln!(
            summary,
            "{name},{method},{p},{},{},{}",
            a.overall_accuracy,
            opt(a.reconstruction_accuracy),
            opt(a.prediction_accuracy)
        );
        println!("{name} accuracy = {:.2}%", a.overall_accuracy);
    };

    let baseline = video_arm(cfg, &data, Method::None, 0.0)?;
    write_arm(&dir.join("baseline"), &baseline.arm)?;
    write_evaluation(&dir.join("baseline"), &baseline.evaluation)?;
    line("baseline", Method::None, 0.0, &baseline.evaluation);

    let reg = video_arm(cfg, &data, cfg.method, cfg.prune_prob)?;
    let name = if cfg.method == Method::None { "regularized" } else { arm_dir_name(cfg.method) };
    write_arm(&dir.join(name), &reg.arm)?;
    write_evaluation(&dir.join(name), &reg.evaluation)?;
    line(name, cfg.method, cfg.prune_prob, &reg.evaluation);

    if s.randomize_weights {
        let ev = randomized_evaluation(&reg.arm.best, cfg, &data)?;
        write_evaluation(&dir.join("randomized"), &ev)?;
        line("randomized", cfg.method, cfg.prune_prob, &ev);
    }
    fs::write(dir.join("summary.csv"), summary)?;
    Ok(dir)
}

/// Runs the grid; returns the run directory and how many cells failed.
pub fn sweep(s: &SweepSettings, root: &Path) -> Result<(PathBuf, usize), DybmError> {
    let dir = run_dir(root, "sweep", &s.render())?;
    let outcome = run_sweep(&s.config)?;
    let mut cells = String::from("method,p,seed,accuracy,error\n");
    for (job, r) in &outcome.results {
        let (acc, err) = match r {
            Ok(a) => (a.to_string(), String::new()),
            Err(e) => (String::new(), e.to_string().replace([',', '\n'], ";")),
        };
        let _ = writeln!(cells, "{},{},{},{acc},{err}", job.method, job.p, job.seed);
    }
    fs::write(dir.join("cells.csv"), cells)?;
    fs::write(dir.join("sweep.csv"), outcome.report.to_csv())?;
    for c in &outcome.report.cells {
        println!("{:<12} p={:<4} median {:.2}% iqr {:.2}", c.method.as_str(), c.p, c.median, c.iqr);
    }
    Ok((dir, outcome.failures()))
}
