//! Delay pruning, and dropout/dropconnect applied to the history side of the
//! time-unfolded network.
//!
//! Delay pruning collapses randomly chosen conduction delays to 1, which
//! empties their queues. Dropout removes a unit's history contributions for
//! one training step; dropconnect removes one edge's weights for one step.
//! The current-time units are never dropped.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{DybmError, Result};
use crate::model::DybmModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    None,
    DelayPrune,
    Dropout,
    DropConnect,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::None,
        Method::DelayPrune,
        Method::Dropout,
        Method::DropConnect,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::None => "none",
            Method::DelayPrune => "delay-prune",
            Method::Dropout => "dropout",
            Method::DropConnect => "dropconnect",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = DybmError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| DybmError::config(format!("unknown regularization method `{s}`")))
    }
}

/// When a new pruned network is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cadence {
    /// Once per presentation of a mini-batch.
    PerMinibatch,
    /// Before every training sequence.
    PerSample,
}

impl FromStr for Cadence {
    type Err = DybmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-minibatch" => Ok(Cadence::PerMinibatch),
            "per-sample" => Ok(Cadence::PerSample),
            _ => Err(DybmError::config(format!("unknown cadence `{s}`"))),
        }
    }
}

impl fmt::Display for Cadence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Cadence::PerMinibatch => "per-minibatch",
            Cadence::PerSample => "per-sample",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegularizerConfig {
    pub method: Method,
    /// Probability that an edge is pruned, or a unit/connection dropped.
    pub prune_prob: f64,
    pub cadence: Cadence,
    pub rng_seed: u64,
}

impl RegularizerConfig {
    pub fn none() -> Self {
        RegularizerConfig {
            method: Method::None,
            prune_prob: 0.0,
            cadence: Cadence::PerMinibatch,
            rng_seed: 0,
        }
    }

    pub fn new(method: Method, prune_prob: f64) -> Self {
        RegularizerConfig {
            method,
            prune_prob,
            ..Self::none()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.prune_prob) {
            return Err(DybmError::config(format!(
                "probability {} outside [0, 1]",
                self.prune_prob
            )));
        }
        Ok(())
    }
}

/// Keep/prune decision for every directed edge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PruneMask {
    n: usize,
    keep: Vec<bool>,
    original_delays: Vec<usize>,
}

impl PruneMask {
    /// Keeps every edge.
    pub fn keep_all(original_delays: &[usize]) -> Result<Self> {
        Self::from_keep(vec![true; original_delays.len()], original_delays)
    }

    pub fn from_keep(keep: Vec<bool>, original_delays: &[usize]) -> Result<Self> {
        let n = edge_side(original_delays.len())?;
        if keep.len() != original_delays.len() {
            return Err(DybmError::shape("keep flags and delays differ in length"));
        }
        Ok(PruneMask {
            n,
            keep,
            original_delays: original_delays.to_vec(),
        })
    }

    pub fn n_units(&self) -> usize {
        self.n
    }

    pub fn keeps(&self, i: usize, j: usize) -> bool {
        self.keep[i * self.n + j]
    }

    pub fn keep_flags(&self) -> &[bool] {
        &self.keep
    }

    pub fn original_delays(&self) -> &[usize] {
        &self.original_delays
    }

    /// Delay of every edge once the mask is applied.
    pub fn effective_delays(&self) -> Vec<usize> {
        self.keep
            .iter()
            .zip(&self.original_delays)
            .map(|(&k, &d)| if k { d } else { 1 })
            .collect()
    }

    pub fn pruned_count(&self) -> usize {
        self.keep.iter().filter(|&&k| !k).count()
    }
}

fn edge_side(edges: usize) -> Result<usize> {
    let n = (edges as f64).sqrt().round() as usize;
    if n * n != edges {
        return Err(DybmError::shape(format!("{edges} edges is not a square count")));
    }
    Ok(n)
}

/// Prunes each edge independently with probability `config.prune_prob`.
pub fn sample_prune_mask<R: Rng + ?Sized>(
    config: &RegularizerConfig,
    original_delays: &[usize],
    rng: &mut R,
) -> Result<PruneMask> {
    config.validate()?;
    let p = config.prune_prob;
    let keep = original_delays
        .iter()
        .map(|_| rng.random::<f64>() >= p)
        .collect();
    PruneMask::from_keep(keep, original_delays)
}

/// Applies `mask` to the model's delays. Pruned edges get delay 1: their
/// queue is discarded and their in-queue traces vanish, while the synaptic
/// traces keep decaying. Edges coming back get their original delay and an
/// empty queue. Edges whose delay does not change are not touched.
pub fn apply_prune_mask(model: &mut DybmModel, mask: &PruneMask) -> Result<()> {
    let n = model.n_units();
    if mask.n_units() != n {
        return Err(DybmError::shape(format!(
            "mask for {} units, model has {n}",
            mask.n_units()
        )));
    }
    for (e, d) in mask.effective_delays().into_iter().enumerate() {
        model.set_delay(e / n, e % n, d)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DropMask {
    /// `unit_keep[i]`: whether unit `i`'s history feeds the next step.
    Dropout { unit_keep: Vec<bool> },
    /// `weight_keep[i * N + j]`: whether the weights of edge `(i, j)` are used.
    DropConnect { n: usize, weight_keep: Vec<bool> },
}

impl DropMask {
    pub fn keep_all(method: Method, n: usize) -> Result<Self> {
        match method {
            Method::Dropout => Ok(DropMask::Dropout {
                unit_keep: vec![true; n],
            }),
            Method::DropConnect => Ok(DropMask::DropConnect {
                n,
                weight_keep: vec![true; n * n],
            }),
            other => Err(DybmError::config(format!("{other} has no drop mask"))),
        }
    }

    pub fn method(&self) -> Method {
        match self {
            DropMask::Dropout { .. } => Method::Dropout,
            DropMask::DropConnect { .. } => Method::DropConnect,
        }
    }

    pub fn n_units(&self) -> usize {
        match self {
            DropMask::Dropout { unit_keep } => unit_keep.len(),
            DropMask::DropConnect { n, .. } => *n,
        }
    }

    pub(crate) fn check_units(&self, n: usize) -> Result<()> {
        if self.n_units() != n {
            return Err(DybmError::shape(format!(
                "mask for {} units, model has {n}",
                self.n_units()
            )));
        }
        Ok(())
    }

    /// Whether the synaptic and in-queue traces of edge `(i, j)` reach unit `j`.
    #[inline]
    pub fn keeps_edge(&self, i: usize, j: usize) -> bool {
        match self {
            DropMask::Dropout { unit_keep } => unit_keep[i],
            DropMask::DropConnect { n, weight_keep } => weight_keep[i * n + j],
        }
    }

    /// Whether the neural trace of `src` reaches unit `j` through the LTD
    /// weight `v[j][src]`.
    #[inline]
    pub fn keeps_neural(&self, j: usize, src: usize) -> bool {
        match self {
            DropMask::Dropout { unit_keep } => unit_keep[src],
            DropMask::DropConnect { n, weight_keep } => weight_keep[j * n + src],
        }
    }

    pub fn flags(&self) -> &[bool] {
        match self {
            DropMask::Dropout { unit_keep } => unit_keep,
            DropMask::DropConnect { weight_keep, .. } => weight_keep,
        }
    }

    pub fn dropped_count(&self) -> usize {
        self.flags().iter().filter(|&&k| !k).count()
    }
}

/// Draws a dropout or dropconnect mask; each unit or connection is dropped
/// with probability `config.prune_prob`.
pub fn sample_drop_mask<R: Rng + ?Sized>(
    config: &RegularizerConfig,
    n: usize,
    rng: &mut R,
) -> Result<DropMask> {
    config.validate()?;
    let p = config.prune_prob;
    let mut draw = |count: usize| -> Vec<bool> { (0..count).map(|_| rng.random::<f64>() >= p).collect() };
    match config.method {
        Method::Dropout => Ok(DropMask::Dropout { unit_keep: draw(n) }),
        Method::DropConnect => Ok(DropMask::DropConnect {
            n,
            weight_keep: draw(n * n),
        }),
        other => Err(DybmError::config(format!("{other} has no drop mask"))),
    }
}

/// Conditional probabilities with the masked history contributions removed.
pub fn masked_conditional_probs(model: &DybmModel, mask: &DropMask) -> Result<Vec<f64>> {
    model.masked_conditional_probs(Some(mask))
}

/// One line of the mask audit stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskEvent {
    pub step: u64,
    pub method: Method,
    /// Flattened keep flags, `1` = kept.
    pub keep: Vec<bool>,
}

impl fmt::Display for MaskEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}\t", self.step, self.method)?;
        for &k in &self.keep {
            f.write_str(if k { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for MaskEvent {
    type Err = DybmError;

    fn from_str(line: &str) -> Result<Self> {
        let bad = |m: &str| DybmError::Data(format!("mask event `{line}`: {m}"));
        let mut parts = line.trim_end().split('\t');
        let step = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("bad step"))?;
        let method = parts.next().ok_or_else(|| bad("missing method"))?.parse()?;
        let keep = parts
            .next()
            .unwrap_or("")
            .chars()
            .map(|c| match c {
                '1' => Ok(true),
                '0' => Ok(false),
                _ => Err(bad("bad flag")),
            })
            .collect::<Result<_>>()?;
        Ok(MaskEvent { step, method, keep })
    }
}

/// Seeded source of masks for one training job. The mask drawn at step
/// counter `c` depends only on `(seed, c)`.
#[derive(Debug, Clone)]
pub struct Regularizer {
    config: RegularizerConfig,
    original_delays: Vec<usize>,
    current: PruneMask,
    events: Vec<MaskEvent>,
    record_events: bool,
}

impl Regularizer {
    /// Snapshots the model's delays as the originals that pruning restores.
    pub fn new(config: RegularizerConfig, model: &DybmModel) -> Result<Self> {
        config.validate()?;
        let original_delays = model.delays();
        Ok(Regularizer {
            current: PruneMask::keep_all(&original_delays)?,
            original_delays,
            config,
            events: Vec::new(),
            record_events: false,
        })
    }

    pub fn config(&self) -> &RegularizerConfig {
        &self.config
    }

    pub fn original_delays(&self) -> &[usize] {
        &self.original_delays
    }

    /// The prune mask currently applied to the model.
    pub fn current_prune_mask(&self) -> &PruneMask {
        &self.current
    }

    /// Keeps every drawn mask in memory for [`events`](Self::events).
    pub fn record_events(&mut self, on: bool) {
        self.record_events = on;
    }

    pub fn events(&self) -> &[MaskEvent] {
        &self.events
    }

    fn rng_at(&self, counter: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(splitmix64(
            self.config.rng_seed ^ splitmix64(counter.wrapping_add(0x5eed)),
        ))
    }

    fn log(&mut self, step: u64, keep: &[bool]) {
        if self.record_events {
            self.events.push(MaskEvent {
                step,
                method: self.config.method,
                keep: keep.to_vec(),
            });
        }
    }

    fn resample_prune(&mut self, model: &mut DybmModel, step: u64) -> Result<()> {
        let mut rng = self.rng_at(step);
        let mask = sample_prune_mask(&self.config, &self.original_delays, &mut rng)?;
        apply_prune_mask(model, &mask)?;
        self.log(step, mask.keep_flags());
        self.current = mask;
        Ok(())
    }

    /// Called before each presentation of a mini-batch.
    pub fn begin_presentation(&mut self, model: &mut DybmModel, step: u64) -> Result<()> {
        if self.config.method == Method::DelayPrune && self.config.cadence == Cadence::PerMinibatch {
            self.resample_prune(model, step)?;
        }
        Ok(())
    }

    /// Called before each training sequence.
    pub fn begin_sample(&mut self, model: &mut DybmModel, step: u64) -> Result<()> {
        if self.config.method == Method::DelayPrune && self.config.cadence == Cadence::PerSample {
            self.resample_prune(model, step)?;
        }
        Ok(())
    }

    /// Fresh drop mask for one training step, if the method uses one.
    pub fn step_mask(&mut self, n: usize, step: u64) -> Result<Option<DropMask>> {
        match self.config.method {
            Method::Dropout | Method::DropConnect => {
                let mut rng = self.rng_at(step);
                let mask = sample_drop_mask(&self.config, n, &mut rng)?;
                self.log(step, mask.flags());
                Ok(Some(mask))
            }
            _ => Ok(None),
        }
    }

    /// The model used for validation and testing. Dropout and dropconnect
    /// weights are scaled by the keep probability; a delay-pruned model is
    /// used with its current delays as is.
    pub fn evaluation_model(&self, model: &DybmModel) -> DybmModel {
        let mut eval = model.clone();
        if matches!(self.config.method, Method::Dropout | Method::DropConnect) {
            eval.params.scale_weights(1.0 - self.config.prune_prob);
        }
        eval.reset_dynamic_state();
        eval
    }
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
