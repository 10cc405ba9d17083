//! End-to-end experiment drivers shared by the command-line tool and the
//! acceptance tests: the Markov-chain likelihood study, video
//! reconstruction and prediction, and the regularizer sweep.
//!
//! Every random choice derives from one experiment seed, so a run is fully
//! determined by its configuration. Baseline and regularized arms share the
//! data, the initial model and the batch order.

use crate::checkpoint::Checkpoint;
use crate::datagen::{
    bouncing_sprites_generate, markov_generate, markov_true_nll, prepare_frames, video_to_sequence,
    FrameSequence, MarkovSpec, VideoSpec,
};
use crate::error::{DybmError, Result};
use crate::eval::{
    bit_accuracy, correlation_study, mean_accuracy, randomized_checkpoint, rollout_model,
    sweep_report, AccuracyReport, CorrelationReport, RolloutMode, SweepReport,
};
use crate::model::{DybmModel, ModelConfig};
use crate::regularizers::{splitmix64, Method, RegularizerConfig};
use crate::sequence::BinarySequence;
use crate::trainer::{run_training, MetricsLog, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Desk,
    Paper,
}

impl std::str::FromStr for Scale {
    type Err = DybmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Scale::Desk),
            "paper" => Ok(Scale::Paper),
            other => Err(DybmError::Config(format!("unknown scale '{other}'"))),
        }
    }
}

/// Independent stream `tag` of an experiment seed.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

// stream tags
const TRAIN_DATA: u64 = 1;
const VALIDATION_DATA: u64 = 2;
const TEST_DATA: u64 = 3;
const MODEL_INIT: u64 = 4;
const BATCH_ORDER: u64 = 5;
const MASKS: u64 = 6;
const RANDOM_WEIGHTS: u64 = 7;

/// One trained arm: the selected checkpoint and its training log.
#[derive(Debug, Clone)]
pub struct TrainedArm {
    pub method: Method,
    pub p: f64,
    pub best: Checkpoint,
    pub metrics: MetricsLog,
}

#[allow(clippy::too_many_arguments)]
fn train_arm(
    train: &[BinarySequence],
    validation: &[BinarySequence],
    true_nll: Option<f64>,
    model: &ModelConfig,
    training: &TrainConfig,
    method: Method,
    p: f64,
    seed: u64,
) -> Result<TrainedArm> {
    let model_cfg = model.clone().with_seed(derive_seed(seed, MODEL_INIT));
    let train_cfg = TrainConfig {
        rng_seed: derive_seed(seed, BATCH_ORDER),
        ..training.clone()
    };
    let reg = RegularizerConfig::new(method, p).with_seed(derive_seed(seed, MASKS));
    let outcome = run_training(train, validation, true_nll, &model_cfg, &train_cfg, &reg)?;
    Ok(TrainedArm {
        method,
        p,
        best: outcome.best,
        metrics: outcome.metrics,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarkovConfig {
    pub n_dims: usize,
    pub p_stay: f64,
    pub train_steps: usize,
    pub validation_steps: usize,
    pub test_steps: usize,
    /// Training data is cut into sequences of this length.
    pub train_seq_len: usize,
    /// Test data is cut into sequences of this length; each one is a point
    /// of the correlation study.
    pub test_seq_len: usize,
    pub model: ModelConfig,
    pub training: TrainConfig,
    pub prune_prob: f64,
    pub seed: u64,
}

impl MarkovConfig {
    pub fn preset(scale: Scale, seed: u64) -> Self {
        let n_dims = 7;
        let mut cfg = MarkovConfig {
            n_dims,
            p_stay: 0.95,
            train_steps: 10_000,
            validation_steps: 1_000,
            test_steps: 1_000,
            train_seq_len: 100,
            test_seq_len: 20,
            model: ModelConfig::new(n_dims),
            training: TrainConfig {
                max_steps_per_sample: 1_000,
                validation_cadence_epochs: 5,
                learning_rate: 1e-3,
                minibatch_size: 10,
                ..TrainConfig::default()
            },
            prune_prob: 0.5,
            seed,
        };
        if scale == Scale::Paper {
            cfg.train_steps = 100_000;
            cfg.validation_steps = 10_000;
            cfg.test_steps = 10_000;
            cfg.training.max_steps_per_sample = 50_000;
            cfg.training.validation_cadence_epochs = 500;
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.training.validate()?;
        if self.model.n_units != self.n_dims {
            return Err(DybmError::config("model size must equal the number of dimensions"));
        }
        if self.train_seq_len == 0 || self.test_seq_len == 0 {
            return Err(DybmError::config("sequence lengths must be positive"));
        }
        if self.train_steps == 0 || self.validation_steps == 0 || self.test_steps < 2 * self.test_seq_len {
            return Err(DybmError::config("need training and validation data and two test sequences"));
        }
        if !(0.0..=1.0).contains(&self.prune_prob) {
            return Err(DybmError::config("prune probability outside [0, 1]"));
        }
        Ok(())
    }

    fn spec(&self, length: usize, tag: u64) -> MarkovSpec {
        MarkovSpec {
            n_dims: self.n_dims,
            p_stay: self.p_stay,
            length,
            rng_seed: derive_seed(self.seed, tag),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MarkovData {
    pub spec: MarkovSpec,
    pub train: Vec<BinarySequence>,
    pub validation: Vec<BinarySequence>,
    pub test: Vec<BinarySequence>,
    /// Negative log-likelihood of the validation set under the true chain.
    pub validation_onl: f64,
}

pub fn markov_data(cfg: &MarkovConfig) -> Result<MarkovData> {
    cfg.validate()?;
    let spec = cfg.spec(cfg.train_steps, TRAIN_DATA);
    let train = markov_generate(&spec)?.split_into(cfg.train_seq_len);
    let validation = vec![markov_generate(&cfg.spec(cfg.validation_steps, VALIDATION_DATA))?];
    let test = markov_generate(&cfg.spec(cfg.test_steps, TEST_DATA))?
        .split_into(cfg.test_seq_len)
        .into_iter()
        .filter(|s| s.len() == cfg.test_seq_len)
        .collect();
    let validation_onl = markov_true_nll(&validation[0], &spec)?;
    Ok(MarkovData {
        spec,
        train,
        validation,
        test,
        validation_onl,
    })
}

#[derive(Debug, Clone)]
pub struct MarkovArm {
    pub arm: TrainedArm,
    pub correlation: CorrelationReport,
}

#[derive(Debug, Clone)]
pub struct MarkovResult {
    pub baseline: MarkovArm,
    pub pruned: MarkovArm,
}

pub fn markov_arm(cfg: &MarkovConfig, data: &MarkovData, method: Method, p: f64) -> Result<MarkovArm> {
    let arm = train_arm(
        &data.train,
        &data.validation,
        Some(data.validation_onl),
        &cfg.model,
        &cfg.training,
        method,
        p,
        cfg.seed,
    )?;
    let model = arm.best.to_model()?;
    let correlation = correlation_study(&model, &data.test, |s| markov_true_nll(s, &data.spec))?;
    Ok(MarkovArm { arm, correlation })
}

/// Baseline and delay-pruned models on the same data.
pub fn run_markov(cfg: &MarkovConfig) -> Result<MarkovResult> {
    let data = markov_data(cfg)?;
    Ok(MarkovResult {
        baseline: markov_arm(cfg, &data, Method::None, 0.0)?,
        pruned: markov_arm(cfg, &data, Method::DelayPrune, cfg.prune_prob)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoConfig {
    pub video: VideoSpec,
    pub n_train: usize,
    pub n_validation: usize,
    pub n_test: usize,
    /// Frames the model is trained on and reconstructs.
    pub n_input: usize,
    /// Frames predicted past the input.
    pub n_predict: usize,
    pub model: ModelConfig,
    pub training: TrainConfig,
    pub method: Method,
    pub prune_prob: f64,
    pub seed: u64,
}

impl VideoConfig {
    pub fn preset(scale: Scale, seed: u64) -> Self {
        let video = VideoSpec::default();
        let n = video.frame_side() * video.frame_side();
        let mut cfg = VideoConfig {
            video,
            n_train: 20,
            n_validation: 5,
            n_test: 10,
            n_input: 15,
            n_predict: 5,
            model: ModelConfig::new(n),
            training: TrainConfig {
                max_steps_per_sample: 300,
                validation_cadence_epochs: 5,
                learning_rate: 1e-3,
                minibatch_size: 20,
                ..TrainConfig::default()
            },
            method: Method::DelayPrune,
            prune_prob: 0.5,
            seed,
        };
        if scale == Scale::Paper {
            cfg.n_train = 100;
            cfg.n_validation = 10;
            cfg.n_test = 50;
            cfg.training.max_steps_per_sample = 50_000;
            cfg.training.validation_cadence_epochs = 500;
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        self.video.validate()?;
        self.model.validate()?;
        self.training.validate()?;
        let side = self.video.frame_side();
        if self.model.n_units != side * side {
            return Err(DybmError::config(format!(
                "model has {} units but frames have {} pixels",
                self.model.n_units,
                side * side
            )));
        }
        if self.n_input == 0 || self.n_input + self.n_predict > self.video.n_frames {
            return Err(DybmError::config(format!(
                "{} input + {} predicted frames do not fit {}-frame videos",
                self.n_input, self.n_predict, self.video.n_frames
            )));
        }
        if self.n_train == 0 || self.n_validation == 0 || self.n_test == 0 {
            return Err(DybmError::config("train, validation and test sets must be non-empty"));
        }
        if !(0.0..=1.0).contains(&self.prune_prob) {
            return Err(DybmError::config("regularization probability outside [0, 1]"));
        }
        Ok(())
    }
}

/// Binarized videos as sequences.
#[derive(Debug, Clone)]
pub struct VideoData {
    /// Input frames of each training video.
    pub train: Vec<BinarySequence>,
    pub validation: Vec<BinarySequence>,
    /// Input plus predicted frames of each test video.
    pub test: Vec<BinarySequence>,
    pub side: usize,
}

fn synthetic_split(cfg: &VideoConfig, count: usize, tag: u64) -> Result<Vec<FrameSequence>> {
    let base = derive_seed(cfg.seed, tag);
    (0..count)
        .map(|i| {
            bouncing_sprites_generate(&VideoSpec {
                rng_seed: derive_seed(base, i as u64),
                ..cfg.video.clone()
            })
        })
        .collect()
}

pub fn synthetic_videos(cfg: &VideoConfig) -> Result<(Vec<FrameSequence>, Vec<FrameSequence>, Vec<FrameSequence>)> {
    cfg.validate()?;
    Ok((
        synthetic_split(cfg, cfg.n_train, TRAIN_DATA)?,
        synthetic_split(cfg, cfg.n_validation, VALIDATION_DATA)?,
        synthetic_split(cfg, cfg.n_test, TEST_DATA)?,
    ))
}

/// Downsamples, binarizes and flattens the three splits.
pub fn prepare_video_data(
    cfg: &VideoConfig,
    train: &[FrameSequence],
    validation: &[FrameSequence],
    test: &[FrameSequence],
) -> Result<VideoData> {
    cfg.validate()?;
    let convert = |videos: &[FrameSequence], len: usize| -> Result<Vec<BinarySequence>> {
        videos
            .iter()
            .map(|v| {
                let frames = prepare_frames(v, cfg.video.downsample, cfg.video.frame_threshold)?;
                let seq = video_to_sequence(&frames, len)?;
                if seq.n_dims() != cfg.model.n_units {
                    return Err(DybmError::Data(format!(
                        "video {} of '{}' has {} pixels per frame, expected {}",
                        v.index,
                        v.source,
                        seq.n_dims(),
                        cfg.model.n_units
                    )));
                }
                Ok(seq)
            })
            .collect()
    };
    Ok(VideoData {
        train: convert(train, cfg.n_input)?,
        validation: convert(validation, cfg.n_input)?,
        test: convert(test, cfg.n_input + cfg.n_predict)?,
        side: cfg.video.frame_side(),
    })
}

/// Splits externally supplied videos in order: training, validation, then
/// test videos.
pub fn split_videos(
    cfg: &VideoConfig,
    videos: &[FrameSequence],
) -> Result<(Vec<FrameSequence>, Vec<FrameSequence>, Vec<FrameSequence>)> {
    let need = cfg.n_train + cfg.n_validation + cfg.n_test;
    if videos.len() < need {
        return Err(DybmError::Data(format!(
            "{} videos supplied, {need} needed ({} train, {} validation, {} test)",
            videos.len(),
            cfg.n_train,
            cfg.n_validation,
            cfg.n_test
        )));
    }
    let (a, rest) = videos.split_at(cfg.n_train);
    let (b, rest) = rest.split_at(cfg.n_validation);
    Ok((a.to_vec(), b.to_vec(), rest[..cfg.n_test].to_vec()))
}

#[derive(Debug, Clone)]
pub struct VideoEvaluation {
    /// Frame-by-frame mean over test videos.
    pub accuracy: AccuracyReport,
    /// Overall accuracy of each test video.
    pub per_video: Vec<f64>,
    pub rollouts: Vec<BinarySequence>,
}

/// Thresholded rollouts of `checkpoint` on every test video.
pub fn evaluate_video(checkpoint: &Checkpoint, cfg: &VideoConfig, data: &VideoData) -> Result<VideoEvaluation> {
    let model: DybmModel = checkpoint.to_model()?;
    let mut reports = Vec::with_capacity(data.test.len());
    let mut rollouts = Vec::with_capacity(data.test.len());
    for truth in &data.test {
        let input = truth.slice(0..cfg.n_input);
        let out = rollout_model(&model, &input, cfg.n_predict, RolloutMode::Thresholded)?;
        reports.push(bit_accuracy(&out, truth, cfg.n_input)?);
        rollouts.push(out);
    }
    Ok(VideoEvaluation {
        per_video: reports.iter().map(|r| r.overall_accuracy).collect(),
        accuracy: mean_accuracy(&reports).ok_or_else(|| DybmError::Data("no test videos".into()))?,
        rollouts,
    })
}

#[derive(Debug, Clone)]
pub struct VideoArm {
    pub arm: TrainedArm,
    pub evaluation: VideoEvaluation,
}

pub fn video_arm(cfg: &VideoConfig, data: &VideoData, method: Method, p: f64) -> Result<VideoArm> {
    let arm = train_arm(
        &data.train,
        &data.validation,
        None,
        &cfg.model,
        &cfg.training,
        method,
        p,
        cfg.seed,
    )?;
    let evaluation = evaluate_video(&arm.best, cfg, data)?;
    Ok(VideoArm { arm, evaluation })
}

#[derive(Debug, Clone)]
pub struct VideoResult {
    pub baseline: VideoArm,
    pub regularized: VideoArm,
    /// The regularized checkpoint with its parameters re-randomized.
    pub randomized: VideoEvaluation,
}

/// Baseline and regularized (per `cfg.method`) models on the same videos.
pub fn run_video(cfg: &VideoConfig, data: &VideoData) -> Result<VideoResult> {
    let baseline = video_arm(cfg, data, Method::None, 0.0)?;
    let regularized = video_arm(cfg, data, cfg.method, cfg.prune_prob)?;
    let randomized = randomized_evaluation(&regularized.arm.best, cfg, data)?;
    Ok(VideoResult {
        baseline,
        regularized,
        randomized,
    })
}

/// Test accuracy of `best` after its parameters are re-randomized.
pub fn randomized_evaluation(best: &Checkpoint, cfg: &VideoConfig, data: &VideoData) -> Result<VideoEvaluation> {
    let shuffled = randomized_checkpoint(best, derive_seed(cfg.seed, RANDOM_WEIGHTS));
    evaluate_video(&shuffled, cfg, data)
}

/// Synthetic-data [`run_video`].
pub fn run_synthetic_video(cfg: &VideoConfig) -> Result<VideoResult> {
    let (a, b, c) = synthetic_videos(cfg)?;
    run_video(cfg, &prepare_video_data(cfg, &a, &b, &c)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    /// Shared settings; `method`, `prune_prob` and `seed` are overridden per cell.
    pub video: VideoConfig,
    pub methods: Vec<Method>,
    pub probs: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl SweepConfig {
    pub fn preset(scale: Scale) -> Self {
        SweepConfig {
            video: VideoConfig::preset(scale, 0),
            methods: vec![Method::DelayPrune, Method::Dropout, Method::DropConnect],
            probs: (1..=9).map(|i| i as f64 / 10.0).collect(),
            seeds: (1..=5).collect(),
        }
    }

    pub fn cells(&self) -> Vec<SweepJob> {
        let mut jobs = Vec::new();
        for &method in &self.methods {
            for &p in &self.probs {
                for &seed in &self.seeds {
                    jobs.push(SweepJob { method, p, seed });
                }
            }
        }
        jobs
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepJob {
    pub method: Method,
    pub p: f64,
    pub seed: u64,
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub report: SweepReport,
    /// Overall test accuracy per job, or the error that stopped it.
    pub results: Vec<(SweepJob, Result<f64>)>,
}

impl SweepOutcome {
    pub fn failures(&self) -> usize {
        self.results.iter().filter(|r| r.1.is_err()).count()
    }
}

/// Trains one regularized model per (method, p, seed) on synthetic videos
/// and aggregates test accuracy. Jobs run in parallel with the `parallel`
/// feature; a failed job is recorded and left out of the report.
pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepOutcome> {
    cfg.video.validate()?;
    let jobs = cfg.cells();
    let run = |job: &SweepJob| -> Result<f64> {
        let vcfg = VideoConfig {
            method: job.method,
            prune_prob: job.p,
            seed: job.seed,
            ..cfg.video.clone()
        };
        let (a, b, c) = synthetic_videos(&vcfg)?;
        let data = prepare_video_data(&vcfg, &a, &b, &c)?;
        Ok(video_arm(&vcfg, &data, job.method, job.p)?.evaluation.accuracy.overall_accuracy)
    };
    let results: Vec<(SweepJob, Result<f64>)> = crate::par::map_jobs(&jobs, |j| (*j, run(j)));
    let ok: Vec<(Method, f64, f64)> = results
        .iter()
        .filter_map(|(j, r)| r.as_ref().ok().map(|&a| (j.method, j.p, a)))
        .collect();
    Ok(SweepOutcome {
        report: sweep_report(&ok),
        results,
    })
}
