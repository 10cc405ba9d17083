//! Reference implementations that evaluate every quantity straight from the
//! definitions, by summing over the whole history. Deliberately slow and
//! share no code with the streaming model beyond the parameter layout.

#![allow(dead_code)]

use dybm::{BinarySequence, DybmModel, ModelConfig, Parameters};
use rand::Rng;

/// Traces before pattern `t` is observed, i.e. computed from `x[0..t]`.
pub struct DirectTraces {
    pub gamma: Vec<Vec<f64>>,          // [j][l]
    pub alpha: Vec<Vec<Vec<f64>>>,     // [i][j][k]
    pub beta: Vec<Vec<Vec<f64>>>,      // [i][j][l]
}

/// `x_i` observed `s` steps before time `t`, zero before the sequence began.
fn lagged(seq: &BinarySequence, i: usize, t: usize, s: usize) -> f64 {
    if s > t {
        0.0
    } else {
        seq.get(i, t - s) as f64
    }
}

/// gamma_{j,l} = sum_{s>=1} mu_l^s x_j[t-s]
/// alpha_{ij,k} = sum_{s>=d_ij} lambda_k^(s-d_ij) x_i[t-s]
/// beta_{ij,l} = sum_{s=1}^{d_ij-1} mu_l^s x_i[t-s]
pub fn direct_traces(
    seq: &BinarySequence,
    t: usize,
    delays: &[usize],
    lambdas: &[f64],
    mus: &[f64],
) -> DirectTraces {
    let n = seq.n_dims();
    let gamma = (0..n)
        .map(|j| {
            mus.iter()
                .map(|&mu| (1..=t).map(|s| mu.powi(s as i32) * lagged(seq, j, t, s)).sum())
                .collect()
        })
        .collect();
    let mut alpha = vec![vec![vec![0.0; lambdas.len()]; n]; n];
    let mut beta = vec![vec![vec![0.0; mus.len()]; n]; n];
    for i in 0..n {
        for j in 0..n {
            let d = delays[i * n + j];
            for (k, &lam) in lambdas.iter().enumerate() {
                alpha[i][j][k] = (d..=t.max(d))
                    .map(|s| lam.powi((s - d) as i32) * lagged(seq, i, t, s))
                    .sum();
            }
            for (l, &mu) in mus.iter().enumerate() {
                beta[i][j][l] = (1..d).map(|s| mu.powi(s as i32) * lagged(seq, i, t, s)).sum();
            }
        }
    }
    DirectTraces { gamma, alpha, beta }
}

/// Pre-activation of every unit at time `t` from direct traces.
pub fn direct_fields(p: &Parameters, tr: &DirectTraces) -> Vec<f64> {
    let (n, k_n, l_n) = p.shape();
    (0..n)
        .map(|j| {
            let mut z = p.bias[j];
            for i in 0..n {
                for k in 0..k_n {
                    z += p.u(i, j, k) * tr.alpha[i][j][k];
                }
                for l in 0..l_n {
                    z -= p.v(i, j, l) * tr.beta[i][j][l];
                    z -= p.v(j, i, l) * tr.gamma[i][l];
                }
            }
            z
        })
        .collect()
}

/// `-log P(seq)` by direct evaluation, with the same probability clamp as
/// the model.
pub fn direct_sequence_nll(
    p: &Parameters,
    seq: &BinarySequence,
    delays: &[usize],
    lambdas: &[f64],
    mus: &[f64],
) -> f64 {
    let mut nll = 0.0;
    for t in 0..seq.len() {
        let tr = direct_traces(seq, t, delays, lambdas, mus);
        for (j, z) in direct_fields(p, &tr).into_iter().enumerate() {
            let prob = (1.0 / (1.0 + (-z).exp())).clamp(1e-12, 1.0 - 1e-12);
            nll -= if seq.get(j, t) == 1 { prob.ln() } else { (1.0 - prob).ln() };
        }
    }
    nll
}

/// Every binary sequence of `n` dims and length `t`.
pub fn all_sequences(n: usize, t: usize) -> Vec<BinarySequence> {
    let bits = n * t;
    (0..1u64 << bits)
        .map(|code| {
            let mut s = BinarySequence::zeros(n, t);
            for b in 0..bits {
                s.set(b % n, b / n, (code >> b) & 1 == 1);
            }
            s
        })
        .collect()
}

/// Central finite difference of `log P(seq)` (from an empty history) with
/// respect to every parameter coordinate.
pub fn finite_difference_gradient(model: &DybmModel, seq: &BinarySequence, h: f64) -> Vec<f64> {
    let loglik = |params: &Parameters| {
        let mut m = model.clone();
        m.params = params.clone();
        m.reset_dynamic_state();
        -m.sequence_nll(seq).unwrap()
    };
    let mut params = model.params.clone();
    (0..params.len())
        .map(|c| {
            let orig = params.get(c);
            *params.get_mut(c) = orig + h;
            let up = loglik(&params);
            *params.get_mut(c) = orig - h;
            let down = loglik(&params);
            *params.get_mut(c) = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn random_sequence<R: Rng>(rng: &mut R, n: usize, t: usize, p_one: f64) -> BinarySequence {
    let mut s = BinarySequence::zeros(n, t);
    for tt in 0..t {
        for d in 0..n {
            s.set(d, tt, rng.random::<f64>() < p_one);
        }
    }
    s
}

pub fn random_decays<R: Rng>(rng: &mut R, count: usize) -> Vec<f64> {
    (0..count).map(|_| rng.random_range(0.01..0.99)).collect()
}

/// A model with random decays, delays in `[1, max_delay]` and parameters of
/// the given scale.
pub fn random_model<R: Rng>(rng: &mut R, n: usize, k: usize, l: usize, max_delay: usize, scale: f64) -> DybmModel {
    let mut cfg = ModelConfig::new(n).with_delays(1, max_delay);
    cfg.synaptic_decays = random_decays(rng, k);
    cfg.neural_decays = random_decays(rng, l);
    cfg.rng_seed = rng.random();
    let delays: Vec<usize> = (0..n * n).map(|_| rng.random_range(1..=max_delay)).collect();
    let mut params = Parameters::zeros(n, k, l);
    params.iter_mut().for_each(|x| *x = rng.random_range(-scale..scale));
    DybmModel::from_parts(cfg, params, &delays).unwrap()
}

/// Largest gap between streamed and direct traces over every prefix of `seq`.
pub fn max_trace_error(model: &mut DybmModel, seq: &BinarySequence) -> f64 {
    let n = model.n_units();
    let delays = model.delays();
    let lambdas = model.config().synaptic_decays.clone();
    let mus = model.config().neural_decays.clone();
    model.reset_dynamic_state();
    let mut worst: f64 = 0.0;
    for t in 0..=seq.len() {
        let direct = direct_traces(seq, t, &delays, &lambdas, &mus);
        let tr = model.traces();
        for j in 0..n {
            for l in 0..mus.len() {
                worst = worst.max((tr.gamma(j, l) - direct.gamma[j][l]).abs());
            }
        }
        for i in 0..n {
            for j in 0..n {
                for k in 0..lambdas.len() {
                    worst = worst.max((tr.alpha(i, j, k) - direct.alpha[i][j][k]).abs());
                }
                for l in 0..mus.len() {
                    worst = worst.max((tr.beta(i, j, l) - direct.beta[i][j][l]).abs());
                }
            }
        }
        if t < seq.len() {
            model.step_advance(seq.column(t)).unwrap();
        }
    }
    worst
}
