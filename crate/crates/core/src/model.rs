//! The dynamic Boltzmann machine: parameters, conduction-delay queues,
//! eligibility traces and the exact conditional distribution of the next
//! pattern given the whole history.
//!
//! All `N x N` edge-indexed arrays use pre-synaptic-major order: edge
//! `(i, j)` (from unit `i` to unit `j`) lives at `i * N + j`, and its
//! per-trace entries at `(i * N + j) * K + k` (or `* L + l`).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{DybmError, Result};
use crate::fifo::FifoQueue;
use crate::par;
use crate::regularizers::DropMask;
use crate::sequence::BinarySequence;

/// Probabilities are clamped to `[P_CLAMP, 1 - P_CLAMP]` inside log terms.
pub const P_CLAMP: f64 = 1e-12;

/// Standard deviation of the normal initialization of biases and weights.
pub const INIT_STD: f64 = 0.1;

/// Post-synaptic units per work item when computing fields.
const FIELD_BLOCK: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub n_units: usize,
    /// Decay rates of the synaptic traces; their count is `K`.
    pub synaptic_decays: Vec<f64>,
    /// Decay rates of the neural traces; their count is `L`.
    pub neural_decays: Vec<f64>,
    pub delay_min: usize,
    pub delay_max: usize,
    pub rng_seed: u64,
}

impl ModelConfig {
    /// `n_units` units, three synaptic and three neural traces, delays in `[1, 7]`.
    pub fn new(n_units: usize) -> Self {
        ModelConfig {
            n_units,
            synaptic_decays: vec![0.25, 0.5, 0.75],
            neural_decays: vec![0.25, 0.5, 0.75],
            delay_min: 1,
            delay_max: 7,
            rng_seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }

    pub fn with_delays(mut self, delay_min: usize, delay_max: usize) -> Self {
        self.delay_min = delay_min;
        self.delay_max = delay_max;
        self
    }

    pub fn n_synaptic_traces(&self) -> usize {
        self.synaptic_decays.len()
    }

    pub fn n_neural_traces(&self) -> usize {
        self.neural_decays.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_units == 0 {
            return Err(DybmError::config("n_units must be at least 1"));
        }
        if self.synaptic_decays.is_empty() || self.neural_decays.is_empty() {
            return Err(DybmError::config("at least one synaptic and one neural trace required"));
        }
        for &d in self.synaptic_decays.iter().chain(&self.neural_decays) {
            if !(d > 0.0 && d < 1.0) {
                return Err(DybmError::config(format!("decay rate {d} outside (0, 1)")));
            }
        }
        if self.delay_min == 0 || self.delay_min > self.delay_max {
            return Err(DybmError::config(format!(
                "delay range [{}, {}] invalid",
                self.delay_min, self.delay_max
            )));
        }
        Ok(())
    }
}

/// Biases and LTP/LTD weights. The same shape doubles as a gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    n: usize,
    k: usize,
    l: usize,
    /// `b[j]`
    pub bias: Vec<f64>,
    /// `u[i][j][k]`, flattened.
    pub ltp: Vec<f64>,
    /// `v[i][j][l]`, flattened.
    pub ltd: Vec<f64>,
}

impl Parameters {
    pub fn zeros(n: usize, k: usize, l: usize) -> Self {
        Parameters {
            n,
            k,
            l,
            bias: vec![0.0; n],
            ltp: vec![0.0; n * n * k],
            ltd: vec![0.0; n * n * l],
        }
    }

    pub fn zeros_like(other: &Parameters) -> Self {
        Self::zeros(other.n, other.k, other.l)
    }

    pub fn n_units(&self) -> usize {
        self.n
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.n, self.k, self.l)
    }

    #[inline]
    pub fn u(&self, i: usize, j: usize, k: usize) -> f64 {
        self.ltp[(i * self.n + j) * self.k + k]
    }

    #[inline]
    pub fn v(&self, i: usize, j: usize, l: usize) -> f64 {
        self.ltd[(i * self.n + j) * self.l + l]
    }

    pub fn set_u(&mut self, i: usize, j: usize, k: usize, value: f64) {
        self.ltp[(i * self.n + j) * self.k + k] = value;
    }

    pub fn set_v(&mut self, i: usize, j: usize, l: usize, value: f64) {
        self.ltd[(i * self.n + j) * self.l + l] = value;
    }

    /// Total number of scalar parameters.
    pub fn len(&self) -> usize {
        self.bias.len() + self.ltp.len() + self.ltd.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Scalar `c` of the concatenation `[bias, ltp, ltd]`.
    pub fn get(&self, c: usize) -> f64 {
        *self.slot(c)
    }

    pub fn get_mut(&mut self, c: usize) -> &mut f64 {
        let (nb, nu) = (self.bias.len(), self.ltp.len());
        if c < nb {
            &mut self.bias[c]
        } else if c < nb + nu {
            &mut self.ltp[c - nb]
        } else {
            &mut self.ltd[c - nb - nu]
        }
    }

    fn slot(&self, c: usize) -> &f64 {
        let (nb, nu) = (self.bias.len(), self.ltp.len());
        if c < nb {
            &self.bias[c]
        } else if c < nb + nu {
            &self.ltp[c - nb]
        } else {
            &self.ltd[c - nb - nu]
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> + '_ {
        self.bias.iter().chain(&self.ltp).chain(&self.ltd)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.bias
            .iter_mut()
            .chain(self.ltp.iter_mut())
            .chain(self.ltd.iter_mut())
    }

    pub fn add_assign(&mut self, other: &Parameters) {
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a += *b;
        }
    }

    /// Multiplies every weight (not the biases) by `factor`.
    pub fn scale_weights(&mut self, factor: f64) {
        self.ltp.iter_mut().chain(self.ltd.iter_mut()).for_each(|w| *w *= factor);
    }

    pub fn max_abs(&self) -> f64 {
        self.iter().fold(0.0_f64, |m, &x| if x.abs() > m || x.is_nan() { x.abs() } else { m })
    }

    pub fn all_finite(&self) -> bool {
        self.iter().all(|x| x.is_finite())
    }
}

/// Eligibility traces, the sufficient statistics of the history.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceState {
    n: usize,
    k: usize,
    l: usize,
    /// Neural traces `gamma[j][l]`.
    pub gamma: Vec<f64>,
    /// Synaptic traces of spikes that left the queue, `alpha[i][j][k]`.
    pub alpha: Vec<f64>,
    /// Traces of spikes still inside the queue, `beta[i][j][l]`.
    pub beta: Vec<f64>,
}

impl TraceState {
    fn zeros(n: usize, k: usize, l: usize) -> Self {
        TraceState {
            n,
            k,
            l,
            gamma: vec![0.0; n * l],
            alpha: vec![0.0; n * n * k],
            beta: vec![0.0; n * n * l],
        }
    }

    #[inline]
    pub fn gamma(&self, j: usize, l: usize) -> f64 {
        self.gamma[j * self.l + l]
    }

    #[inline]
    pub fn alpha(&self, i: usize, j: usize, k: usize) -> f64 {
        self.alpha[(i * self.n + j) * self.k + k]
    }

    #[inline]
    pub fn beta(&self, i: usize, j: usize, l: usize) -> f64 {
        self.beta[(i * self.n + j) * self.l + l]
    }

    fn clear(&mut self) {
        self.gamma.iter_mut().for_each(|x| *x = 0.0);
        self.alpha.iter_mut().for_each(|x| *x = 0.0);
        self.beta.iter_mut().for_each(|x| *x = 0.0);
    }
}

#[derive(Debug, Clone)]
pub struct DybmModel {
    config: ModelConfig,
    pub params: Parameters,
    queues: Vec<FifoQueue>,
    traces: TraceState,
    clock: u64,
    /// `neural_pow[l][m] = mu_l^m`, long enough for the longest queue.
    neural_pow: Vec<Vec<f64>>,
    /// Units that have spiked since the last reset. Rows of silent units
    /// have all-zero queues and synaptic traces and are skipped.
    active: Vec<bool>,
}

impl DybmModel {
    /// Random initialization: weights and biases i.i.d. `Normal(0, 0.1)`,
    /// delays uniform on `[delay_min, delay_max]`, empty history.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        let n = config.n_units;
        let delays: Vec<usize> = (0..n * n)
            .map(|_| rng.random_range(config.delay_min..=config.delay_max))
            .collect();
        let mut model = Self::from_parts(
            config,
            Parameters::zeros(0, 0, 0),
            &delays,
        )?;
        let normal = Normal::new(0.0, INIT_STD).expect("valid normal");
        model.params.iter_mut().for_each(|x| *x = normal.sample(&mut rng));
        Ok(model)
    }

    /// Assembles a model with the given parameters and delays and an empty
    /// history. Passing zero-sized parameters yields all-zero parameters.
    pub fn from_parts(config: ModelConfig, params: Parameters, delays: &[usize]) -> Result<Self> {
        config.validate()?;
        let (n, k, l) = (
            config.n_units,
            config.n_synaptic_traces(),
            config.n_neural_traces(),
        );
        let params = if params.is_empty() {
            Parameters::zeros(n, k, l)
        } else {
            params
        };
        if params.shape() != (n, k, l) {
            return Err(DybmError::shape(format!(
                "parameters {:?} do not match config ({n}, {k}, {l})",
                params.shape()
            )));
        }
        if delays.len() != n * n {
            return Err(DybmError::shape(format!(
                "{} delays for {} edges",
                delays.len(),
                n * n
            )));
        }
        if let Some(&d) = delays.iter().find(|&&d| d == 0) {
            return Err(DybmError::config(format!("delay {d} < 1")));
        }
        let queues = delays.iter().map(|&d| FifoQueue::new(d)).collect();
        let mut model = DybmModel {
            traces: TraceState::zeros(n, k, l),
            params,
            queues,
            clock: 0,
            neural_pow: Vec::new(),
            active: vec![false; n],
            config,
        };
        model.refresh_pow_table();
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn n_units(&self) -> usize {
        self.config.n_units
    }

    pub fn traces(&self) -> &TraceState {
        &self.traces
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn queue(&self, i: usize, j: usize) -> &FifoQueue {
        &self.queues[i * self.n_units() + j]
    }

    pub fn delay(&self, i: usize, j: usize) -> usize {
        self.queue(i, j).delay()
    }

    /// All delays, pre-synaptic-major.
    pub fn delays(&self) -> Vec<usize> {
        self.queues.iter().map(FifoQueue::delay).collect()
    }

    /// Changes the delay of edge `(i, j)`. A changed queue restarts empty and
    /// the edge's in-queue traces are zeroed; the synaptic traces are kept.
    pub fn set_delay(&mut self, i: usize, j: usize, delay: usize) -> Result<()> {
        if delay == 0 {
            return Err(DybmError::config("delay must be at least 1"));
        }
        let n = self.n_units();
        let e = i * n + j;
        if self.queues[e].delay() == delay {
            return Ok(());
        }
        self.queues[e].set_delay(delay);
        let l = self.config.n_neural_traces();
        self.traces.beta[e * l..(e + 1) * l]
            .iter_mut()
            .for_each(|b| *b = 0.0);
        if delay > self.neural_pow.first().map_or(0, Vec::len) {
            self.refresh_pow_table();
        }
        Ok(())
    }

    fn refresh_pow_table(&mut self) {
        let longest = self.queues.iter().map(FifoQueue::delay).max().unwrap_or(1);
        let len = longest.max(self.config.delay_max) + 1;
        self.neural_pow = self
            .config
            .neural_decays
            .iter()
            .map(|&mu| {
                let mut pows = Vec::with_capacity(len);
                let mut w = 1.0;
                for _ in 0..len {
                    pows.push(w);
                    w *= mu;
                }
                pows
            })
            .collect();
    }

    /// Clears traces, queues and the clock; parameters are untouched.
    pub fn reset_dynamic_state(&mut self) {
        self.traces.clear();
        self.queues.iter_mut().for_each(FifoQueue::clear);
        self.active.iter_mut().for_each(|a| *a = false);
        self.clock = 0;
    }

    /// Pre-activations `z_j` of the next pattern, optionally with history
    /// contributions removed by a drop mask.
    pub fn fields(&self, mask: Option<&DropMask>) -> Result<Vec<f64>> {
        let n = self.n_units();
        if let Some(m) = mask {
            m.check_units(n)?;
        }
        let mut z = vec![0.0; n];
        par::for_each_chunk_mut(&mut z, FIELD_BLOCK, |b, out| self.field_block(b * FIELD_BLOCK, out, mask));
        if let Some(j) = z.iter().position(|v| !v.is_finite()) {
            return Err(DybmError::NumericalState { unit: j, value: z[j] });
        }
        Ok(z)
    }

    /// Fields of units `j0..j0 + out.len()`. Each unit sums its terms in a
    /// fixed order (pre-synaptic unit, then trace), whatever the blocking.
    fn field_block(&self, j0: usize, out: &mut [f64], mask: Option<&DropMask>) {
        let n = self.n_units();
        let k_n = self.config.n_synaptic_traces();
        let l_n = self.config.n_neural_traces();
        let p = &self.params;
        let tr = &self.traces;
        let width = out.len();

        let mut ltp = [0.0; FIELD_BLOCK];
        let mut ltd_queue = [0.0; FIELD_BLOCK];
        for i in (0..n).filter(|&i| self.active[i]) {
            let e0 = i * n + j0;
            let u = &p.ltp[e0 * k_n..(e0 + width) * k_n];
            let a = &tr.alpha[e0 * k_n..(e0 + width) * k_n];
            let v = &p.ltd[e0 * l_n..(e0 + width) * l_n];
            let b = &tr.beta[e0 * l_n..(e0 + width) * l_n];
            for jj in 0..width {
                if !mask.is_none_or(|m| m.keeps_edge(i, j0 + jj)) {
                    continue;
                }
                for k in 0..k_n {
                    ltp[jj] += u[jj * k_n + k] * a[jj * k_n + k];
                }
                for l in 0..l_n {
                    ltd_queue[jj] += v[jj * l_n + l] * b[jj * l_n + l];
                }
            }
        }
        for (jj, zj) in out.iter_mut().enumerate() {
            let j = j0 + jj;
            // v[j][i][l] couples the post-synaptic trace of i back into unit j
            let mut ltd_neural = 0.0;
            let row = &p.ltd[j * n * l_n..(j + 1) * n * l_n];
            for i in 0..n {
                if !mask.is_none_or(|m| m.keeps_neural(j, i)) {
                    continue;
                }
                let v = &row[i * l_n..(i + 1) * l_n];
                let g = &tr.gamma[i * l_n..(i + 1) * l_n];
                for l in 0..l_n {
                    ltd_neural += v[l] * g[l];
                }
            }
            *zj = p.bias[j] + ltp[jj] - ltd_queue[jj] - ltd_neural;
        }
    }

    /// `P(x_j^{[t]} = 1 | history)` for every unit.
    pub fn conditional_probs(&self) -> Result<Vec<f64>> {
        self.masked_conditional_probs(None)
    }

    pub fn masked_conditional_probs(&self, mask: Option<&DropMask>) -> Result<Vec<f64>> {
        let mut z = self.fields(mask)?;
        z.iter_mut().for_each(|v| *v = sigmoid(*v));
        Ok(z)
    }

    /// Feeds the pattern observed at the current time step and moves the
    /// queues and traces one step forward.
    pub fn step_advance(&mut self, x: &[u8]) -> Result<()> {
        let n = self.n_units();
        self.check_pattern(x)?;
        let k_n = self.config.n_synaptic_traces();
        let l_n = self.config.n_neural_traces();

        for (j, &xj) in x.iter().enumerate() {
            for (l, &mu) in self.config.neural_decays.iter().enumerate() {
                let g = &mut self.traces.gamma[j * l_n + l];
                *g = mu * (*g + xj as f64);
            }
        }

        for (a, &xi) in self.active.iter_mut().zip(x) {
            *a |= xi == 1;
        }
        let active = &self.active;
        let lambdas = &self.config.synaptic_decays;
        let pows = &self.neural_pow;
        par::for_each_chunk_triple_mut(
            (&mut self.queues, n),
            (&mut self.traces.alpha, n * k_n),
            (&mut self.traces.beta, n * l_n),
            |i, queues, alpha, beta| {
                if !active[i] {
                    // silent so far: queues, alpha and beta are all zero
                    return;
                }
                let xi = x[i];
                for (j, q) in queues.iter_mut().enumerate() {
                    let arrived = q.push(xi) as f64;
                    for (k, &lambda) in lambdas.iter().enumerate() {
                        let a = &mut alpha[j * k_n + k];
                        *a = lambda * *a + arrived;
                    }
                    let b = &mut beta[j * l_n..(j + 1) * l_n];
                    b.fill(0.0);
                    q.for_each_spike_age(|age| {
                        for (acc, pow) in b.iter_mut().zip(pows) {
                            *acc += pow[age];
                        }
                    });
                }
            },
        );
        self.clock += 1;
        Ok(())
    }

    /// Negative log-likelihood of `seq`, continuing from the current state
    /// (pass a freshly reset model for the likelihood from an all-zero
    /// pre-history). The state ends advanced past the sequence.
    pub fn sequence_nll(&mut self, seq: &BinarySequence) -> Result<f64> {
        if seq.n_dims() != self.n_units() {
            return Err(DybmError::shape(format!(
                "sequence has {} dims, model has {} units",
                seq.n_dims(),
                self.n_units()
            )));
        }
        let mut nll = 0.0;
        for x in seq.columns() {
            let p = self.conditional_probs()?;
            nll += pattern_nll(&p, x);
            self.step_advance(x)?;
        }
        Ok(nll)
    }

    /// Gradient of `log P(x | history)` for the pattern about to be observed.
    pub fn loglik_gradient(&self, x: &[u8]) -> Result<Parameters> {
        let p = self.conditional_probs()?;
        let mut grad = Parameters::zeros_like(&self.params);
        self.gradient_into(x, &p, None, &mut grad)?;
        Ok(grad)
    }

    /// Writes the log-likelihood gradient for pattern `x` into `grad`, given
    /// the (possibly masked) probabilities `p` computed from the same state
    /// and the same mask.
    pub fn gradient_into(
        &self,
        x: &[u8],
        p: &[f64],
        mask: Option<&DropMask>,
        grad: &mut Parameters,
    ) -> Result<()> {
        let n = self.n_units();
        self.check_pattern(x)?;
        if p.len() != n || grad.shape() != self.params.shape() {
            return Err(DybmError::shape("gradient buffers do not match model"));
        }
        let k_n = self.config.n_synaptic_traces();
        let l_n = self.config.n_neural_traces();
        let err: Vec<f64> = x.iter().zip(p).map(|(&xj, &pj)| xj as f64 - pj).collect();
        grad.bias.copy_from_slice(&err);

        let tr = &self.traces;
        let err = &err;
        let active = &self.active;
        par::for_each_chunk_pair_mut(
            &mut grad.ltp,
            n * k_n,
            &mut grad.ltd,
            n * l_n,
            |i, g_u, g_v| {
                for j in 0..n {
                    let e = i * n + j;
                    // alpha and beta of a silent row are zero
                    let keep_edge = active[i] && mask.is_none_or(|m| m.keeps_edge(i, j));
                    // v[i][j] also weighs gamma_j in the field of unit i
                    let keep_neural = mask.is_none_or(|m| m.keeps_neural(i, j));
                    for k in 0..k_n {
                        g_u[j * k_n + k] = if keep_edge {
                            tr.alpha[e * k_n + k] * err[j]
                        } else {
                            0.0
                        };
                    }
                    for l in 0..l_n {
                        let queue_term = if keep_edge {
                            tr.beta[e * l_n + l] * err[j]
                        } else {
                            0.0
                        };
                        let neural_term = if keep_neural {
                            tr.gamma[j * l_n + l] * err[i]
                        } else {
                            0.0
                        };
                        g_v[j * l_n + l] = -queue_term - neural_term;
                    }
                }
            },
        );
        Ok(())
    }

    /// Gradient of the log-likelihood of a whole sequence, accumulated step
    /// by step from the current state. Advances the state.
    pub fn sequence_loglik_gradient(&mut self, seq: &BinarySequence) -> Result<Parameters> {
        let mut total = Parameters::zeros_like(&self.params);
        let mut step = Parameters::zeros_like(&self.params);
        for x in seq.columns() {
            let p = self.conditional_probs()?;
            self.gradient_into(x, &p, None, &mut step)?;
            total.add_assign(&step);
            self.step_advance(x)?;
        }
        Ok(total)
    }

    /// Draws the next pattern; units are independent given the history.
    pub fn sample_next<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<u8>> {
        let p = self.conditional_probs()?;
        Ok(p.iter().map(|&pj| (rng.random::<f64>() < pj) as u8).collect())
    }

    fn check_pattern(&self, x: &[u8]) -> Result<()> {
        if x.len() != self.n_units() {
            return Err(DybmError::shape(format!(
                "pattern has {} dims, model has {} units",
                x.len(),
                self.n_units()
            )));
        }
        if x.iter().any(|&v| v > 1) {
            return Err(DybmError::Data("pattern is not binary".into()));
        }
        Ok(())
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `-log P(x)` for independent Bernoulli units with probabilities `p`.
pub fn pattern_nll(p: &[f64], x: &[u8]) -> f64 {
    p.iter()
        .zip(x)
        .map(|(&pj, &xj)| {
            let pj = pj.clamp(P_CLAMP, 1.0 - P_CLAMP);
            if xj == 1 {
                -pj.ln()
            } else {
                -(1.0 - pj).ln()
            }
        })
        .sum()
}
