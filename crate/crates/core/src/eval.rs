//! Metrics over trained models: NLL correlation, bitwise rollout accuracy,
//! and aggregation of regularizer sweeps. Each report has a CSV form with a
//! fixed column order:
//!
//! * `correlation.csv`: `true_nll,model_nll`
//! * `accuracy.csv`: `frame,accuracy,phase` with phase `reconstruction` or
//!   `prediction`
//! * `sweep.csv`: `method,p,median,iqr,n`

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::checkpoint::Checkpoint;
use crate::error::{DybmError, Result};
use crate::model::{DybmModel, Parameters, INIT_STD};
use crate::regularizers::Method;
use crate::sequence::BinarySequence;

/// Probability above which thresholded rollouts emit a 1. Exactly 0.5 emits 0.
pub const THRESHOLD: f64 = 0.5;

/// Sample Pearson correlation of the pairs.
pub fn pearson_correlation(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.len() < 2 {
        return Err(DybmError::UndefinedCorrelation(format!(
            "{} pairs, need at least 2",
            pairs.len()
        )));
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in pairs {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(DybmError::UndefinedCorrelation("zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationReport {
    /// `(true_nll, model_nll)` per test sequence.
    pub pairs: Vec<(f64, f64)>,
    pub pearson_r: f64,
}

impl CorrelationReport {
    pub fn new(pairs: Vec<(f64, f64)>) -> Result<Self> {
        let pearson_r = pearson_correlation(&pairs)?;
        Ok(CorrelationReport { pairs, pearson_r })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("true_nll,model_nll\n");
        for (t, m) in &self.pairs {
            let _ = writeln!(out, "{t},{m}");
        }
        out
    }
}

/// Scores each test sequence from an empty history under both the model and
/// the generating process.
pub fn correlation_study(
    model: &DybmModel,
    test: &[BinarySequence],
    true_nll: impl Fn(&BinarySequence) -> Result<f64>,
) -> Result<CorrelationReport> {
    let mut m = model.clone();
    let mut pairs = Vec::with_capacity(test.len());
    for seq in test {
        m.reset_dynamic_state();
        let model_nll = m.sequence_nll(seq)?;
        pairs.push((true_nll(seq)?, model_nll));
    }
    CorrelationReport::new(pairs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyReport {
    /// Percentage of matching bits, one entry per frame.
    pub per_frame_accuracy: Vec<f64>,
    /// Percentage over every compared bit.
    pub overall_accuracy: f64,
    /// Leading frames that are reconstructions; the rest are predictions.
    pub n_reconstruction: usize,
    pub reconstruction_accuracy: Option<f64>,
    pub prediction_accuracy: Option<f64>,
}

impl AccuracyReport {
    pub fn phase(&self, frame: usize) -> &'static str {
        if frame < self.n_reconstruction {
            "reconstruction"
        } else {
            "prediction"
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame,accuracy,phase\n");
        for (t, a) in self.per_frame_accuracy.iter().enumerate() {
            let _ = writeln!(out, "{t},{a},{}", self.phase(t));
        }
        out
    }
}

/// Bitwise agreement between two sequences of equal shape. The first
/// `n_reconstruction` frames are reported as reconstruction and the rest as
/// prediction.
pub fn bit_accuracy(
    predicted: &BinarySequence,
    truth: &BinarySequence,
    n_reconstruction: usize,
) -> Result<AccuracyReport> {
    predicted.check_same_shape(truth)?;
    let n = truth.n_dims();
    let matches: Vec<usize> = predicted
        .columns()
        .zip(truth.columns())
        .map(|(a, b)| a.iter().zip(b).filter(|(x, y)| x == y).count())
        .collect();
    let pct = |hits: usize, frames: usize| {
        (frames > 0 && n > 0).then(|| 100.0 * hits as f64 / (frames * n) as f64)
    };
    let split = n_reconstruction.min(matches.len());
    let (rec, pred) = matches.split_at(split);
    Ok(AccuracyReport {
        per_frame_accuracy: matches.iter().map(|&m| pct(m, 1).unwrap_or(100.0)).collect(),
        overall_accuracy: pct(matches.iter().sum(), matches.len()).unwrap_or(100.0),
        n_reconstruction: split,
        reconstruction_accuracy: pct(rec.iter().sum(), rec.len()),
        prediction_accuracy: pct(pred.iter().sum(), pred.len()),
    })
}

/// Mean of several reports of the same shape, frame by frame.
pub fn mean_accuracy(reports: &[AccuracyReport]) -> Option<AccuracyReport> {
    let first = reports.first()?;
    let k = reports.len() as f64;
    let avg = |f: &dyn Fn(&AccuracyReport) -> Option<f64>| -> Option<f64> {
        reports.iter().map(f).sum::<Option<f64>>().map(|s| s / k)
    };
    Some(AccuracyReport {
        per_frame_accuracy: (0..first.per_frame_accuracy.len())
            .map(|t| reports.iter().map(|r| r.per_frame_accuracy[t]).sum::<f64>() / k)
            .collect(),
        overall_accuracy: avg(&|r| Some(r.overall_accuracy))?,
        n_reconstruction: first.n_reconstruction,
        reconstruction_accuracy: avg(&|r| r.reconstruction_accuracy),
        prediction_accuracy: avg(&|r| r.prediction_accuracy),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RolloutMode {
    /// Emit 1 iff the unit's probability exceeds [`THRESHOLD`].
    Thresholded,
    /// Draw each unit from its Bernoulli distribution.
    Sampled { seed: u64 },
}

/// Runs `model` from an empty history over `seed_frames`, emitting its
/// one-step-ahead guess for each input frame while feeding it the true
/// frame, then continues for `n_future` frames on its own output.
pub fn rollout_model(
    model: &DybmModel,
    seed_frames: &BinarySequence,
    n_future: usize,
    mode: RolloutMode,
) -> Result<BinarySequence> {
    if seed_frames.n_dims() != model.n_units() {
        return Err(DybmError::shape(format!(
            "frames have {} dims, model has {} units",
            seed_frames.n_dims(),
            model.n_units()
        )));
    }
    let mut m = model.clone();
    m.reset_dynamic_state();
    let mut rng = match mode {
        RolloutMode::Sampled { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        RolloutMode::Thresholded => None,
    };
    let mut emit = |m: &DybmModel| -> Result<Vec<u8>> {
        match rng.as_mut() {
            Some(r) => m.sample_next(r),
            None => Ok(m
                .conditional_probs()?
                .iter()
                .map(|&p| (p > THRESHOLD) as u8)
                .collect()),
        }
    };
    let mut out = BinarySequence::empty(m.n_units());
    for x in seed_frames.columns() {
        out.push(&emit(&m)?)?;
        m.step_advance(x)?;
    }
    for _ in 0..n_future {
        let x = emit(&m)?;
        out.push(&x)?;
        m.step_advance(&x)?;
    }
    Ok(out)
}

/// [`rollout_model`] on a checkpoint.
pub fn generate_rollout(
    checkpoint: &Checkpoint,
    seed_frames: &BinarySequence,
    n_future: usize,
    mode: RolloutMode,
) -> Result<BinarySequence> {
    rollout_model(&checkpoint.to_model()?, seed_frames, n_future, mode)
}

/// Replaces every parameter (biases included) with a fresh draw from the
/// initialization distribution.
pub fn randomize_parameters(params: &mut Parameters, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, INIT_STD).expect("valid normal");
    params.iter_mut().for_each(|x| *x = normal.sample(&mut rng));
}

/// A copy of `checkpoint` with randomized parameters and the same delays.
pub fn randomized_checkpoint(checkpoint: &Checkpoint, seed: u64) -> Checkpoint {
    let mut c = checkpoint.clone();
    randomize_parameters(&mut c.params, seed);
    c
}

/// Median with linear interpolation between order statistics.
pub fn median(values: &[f64]) -> Option<f64> {
    quantile(values, 0.5)
}

/// Quantile `q` in `[0, 1]`, interpolating linearly between order statistics.
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub method: Method,
    pub p: f64,
    pub median: f64,
    /// Interquartile range over seeds.
    pub iqr: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepReport {
    pub cells: Vec<SweepCell>,
}

impl SweepReport {
    pub fn cell(&self, method: Method, p: f64) -> Option<&SweepCell> {
        self.cells.iter().find(|c| c.method == method && c.p == p)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,p,median,iqr,n\n");
        for c in &self.cells {
            let _ = writeln!(out, "{},{},{},{},{}", c.method, c.p, c.median, c.iqr, c.n);
        }
        out
    }
}

/// Groups `(method, p, accuracy)` results by cell. Cells are ordered by
/// method, then by p.
pub fn sweep_report(results: &[(Method, f64, f64)]) -> SweepReport {
    let mut keys: Vec<(Method, f64)> = Vec::new();
    for &(m, p, _) in results {
        if !keys.iter().any(|&(km, kp)| km == m && kp == p) {
            keys.push((m, p));
        }
    }
    let rank = |m: Method| Method::ALL.iter().position(|&x| x == m).unwrap_or(usize::MAX);
    keys.sort_by(|a, b| rank(a.0).cmp(&rank(b.0)).then(a.1.total_cmp(&b.1)));
    let cells = keys
        .into_iter()
        .map(|(method, p)| {
            let vals: Vec<f64> = results
                .iter()
                .filter(|r| r.0 == method && r.1 == p)
                .map(|r| r.2)
                .collect();
            SweepCell {
                method,
                p,
                median: median(&vals).expect("cell has a result"),
                iqr: quantile(&vals, 0.75).unwrap() - quantile(&vals, 0.25).unwrap(),
                n: vals.len(),
            }
        })
        .collect();
    SweepReport { cells }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    #[test]
    fn pearson_line_and_hand_value() {
        let line: Vec<_> = (0..5).map(|x| (x as f64, 2.0 * x as f64 + 1.0)).collect();
        assert!((pearson_correlation(&line).unwrap() - 1.0).abs() < 1e-15);
        // cov = 0.5, var_x = 1, var_y = 1 (population)
        let r = pearson_correlation(&[(0.0, 0.0), (1.0, 2.0), (2.0, 1.0)]).unwrap();
        assert!((r - 0.5).abs() < 1e-15);
    }

    #[test]
    fn pearson_rejects_degenerate_input() {
        let flat = [(0.0, 3.0), (1.0, 3.0), (2.0, 3.0)];
        assert!(matches!(
            pearson_correlation(&flat),
            Err(DybmError::UndefinedCorrelation(_))
        ));
        assert!(pearson_correlation(&[(1.0, 2.0)]).is_err());
    }

    #[test]
    fn pearson_is_affine_invariant() {
        let pairs = [(0.3, 1.0), (1.7, 0.2), (2.2, 2.9), (4.0, 3.1)];
        let moved: Vec<_> = pairs.iter().map(|&(x, y)| (3.0 * x - 2.0, 0.5 * y + 7.0)).collect();
        let a = pearson_correlation(&pairs).unwrap();
        let b = pearson_correlation(&moved).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn accuracy_arithmetic() {
        let truth = BinarySequence::zeros(256, 2);
        let mut pred = truth.clone();
        for d in 0..8 {
            pred.set(d, 1, true);
        }
        let r = bit_accuracy(&pred, &truth, 1).unwrap();
        assert_eq!(r.per_frame_accuracy, vec![100.0, 96.875]);
        assert_eq!(r.reconstruction_accuracy, Some(100.0));
        assert_eq!(r.prediction_accuracy, Some(96.875));
        assert!((r.overall_accuracy - 98.4375).abs() < 1e-12);
        assert_eq!(bit_accuracy(&truth, &pred, 1).unwrap(), r);

        let mut flipped = truth.clone();
        for t in 0..2 {
            for d in 0..256 {
                flipped.set(d, t, true);
            }
        }
        assert_eq!(bit_accuracy(&flipped, &truth, 2).unwrap().overall_accuracy, 0.0);
        assert!(bit_accuracy(&truth, &BinarySequence::zeros(3, 2), 0).is_err());
    }

    #[test]
    fn accuracy_csv_labels_phases() {
        let s = BinarySequence::zeros(2, 3);
        let csv = bit_accuracy(&s, &s, 2).unwrap().to_csv();
        assert_eq!(
            csv,
            "frame,accuracy,phase\n0,100,reconstruction\n1,100,reconstruction\n2,100,prediction\n"
        );
    }

    #[test]
    fn zero_model_rollout_emits_zeros() {
        let mut model = DybmModel::new(ModelConfig::new(4)).unwrap();
        model.params.iter_mut().for_each(|x| *x = 0.0);
        let seed = BinarySequence::from_columns(4, &[[1u8, 0, 1, 1], [0, 1, 1, 0]]).unwrap();
        let out = rollout_model(&model, &seed, 3, RolloutMode::Thresholded).unwrap();
        assert_eq!(out.len(), 5);
        assert_eq!(out, BinarySequence::zeros(4, 5));
        let only_rec = rollout_model(&model, &seed, 0, RolloutMode::Thresholded).unwrap();
        assert_eq!(only_rec.len(), seed.len());
    }

    #[test]
    fn rollouts_are_deterministic() {
        let model = DybmModel::new(ModelConfig::new(5).with_seed(4)).unwrap();
        let seed = BinarySequence::from_columns(5, &[[1u8, 0, 1, 1, 0]; 4]).unwrap();
        let a = rollout_model(&model, &seed, 6, RolloutMode::Sampled { seed: 9 }).unwrap();
        let b = rollout_model(&model, &seed, 6, RolloutMode::Sampled { seed: 9 }).unwrap();
        assert_eq!(a, b);
        let c = rollout_model(&model, &seed, 6, RolloutMode::Thresholded).unwrap();
        let d = rollout_model(&model, &seed, 6, RolloutMode::Thresholded).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn reconstruction_uses_true_history() {
        // a single unit that copies its last value through a strong LTP weight
        // (delay 1, so the spike reaches alpha on the next step)
        let cfg = ModelConfig::new(1).with_delays(1, 1);
        let mut model = DybmModel::new(cfg).unwrap();
        model.params.iter_mut().for_each(|x| *x = 0.0);
        model.params.bias[0] = -5.0;
        model.params.ltp.iter_mut().for_each(|x| *x = 20.0);
        let seed = BinarySequence::from_rows(&[[0u8, 1, 0, 0]]).unwrap();
        let out = rollout_model(&model, &seed, 0, RolloutMode::Thresholded).unwrap();
        assert_eq!(out.get(0, 0), 0);
        assert_eq!(out.get(0, 2), 1);
    }

    #[test]
    fn sweep_groups_and_orders_cells() {
        let results = [
            (Method::Dropout, 0.5, 80.0),
            (Method::DelayPrune, 0.5, 90.0),
            (Method::DelayPrune, 0.5, 92.0),
            (Method::DelayPrune, 0.5, 91.0),
            (Method::DelayPrune, 0.1, 70.0),
        ];
        let rep = sweep_report(&results);
        assert_eq!(rep.cells.len(), 3);
        assert_eq!((rep.cells[0].method, rep.cells[0].p), (Method::DelayPrune, 0.1));
        let c = rep.cell(Method::DelayPrune, 0.5).unwrap();
        assert_eq!((c.median, c.iqr, c.n), (91.0, 1.0, 3));
        assert_eq!(rep.cell(Method::Dropout, 0.5).unwrap().median, 80.0);
    }

    #[test]
    fn randomized_checkpoint_keeps_delays() {
        let model = DybmModel::new(ModelConfig::new(3).with_seed(2)).unwrap();
        let ck = Checkpoint::capture(&model, crate::PruneMask::keep_all(&model.delays()).unwrap(), 0.0, 0);
        let r = randomized_checkpoint(&ck, 77);
        assert_eq!(r.delays, ck.delays);
        assert_ne!(r.params, ck.params);
        assert_eq!(randomized_checkpoint(&ck, 77), r);
    }
}
