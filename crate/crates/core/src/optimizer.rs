//! Adam, applied as gradient ascent on the log-likelihood.

use crate::model::Parameters;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub first_moment: Parameters,
    pub second_moment: Parameters,
    pub step_count: u64,
}

impl OptimizerState {
    pub fn new(params: &Parameters) -> Self {
        OptimizerState {
            first_moment: Parameters::zeros_like(params),
            second_moment: Parameters::zeros_like(params),
            step_count: 0,
        }
    }

    /// Moves `params` along the bias-corrected Adam direction of `grad`.
    pub fn ascend(&mut self, params: &mut Parameters, grad: &Parameters, cfg: &AdamConfig) {
        self.step_count += 1;
        let t = self.step_count as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        let coeffs = Coeffs { cfg: *cfg, c1, c2 };
        update(&mut params.bias, &grad.bias, &mut self.first_moment.bias, &mut self.second_moment.bias, coeffs);
        update(&mut params.ltp, &grad.ltp, &mut self.first_moment.ltp, &mut self.second_moment.ltp, coeffs);
        update(&mut params.ltd, &grad.ltd, &mut self.first_moment.ltd, &mut self.second_moment.ltd, coeffs);
    }
}

#[derive(Clone, Copy)]
struct Coeffs {
    cfg: AdamConfig,
    c1: f64,
    c2: f64,
}

fn update_chunk(theta: &mut [f64], grad: &[f64], m: &mut [f64], v: &mut [f64], c: Coeffs) {
    let AdamConfig { learning_rate, beta1, beta2, eps } = c.cfg;
    let (inv_c1, inv_c2) = (1.0 / c.c1, 1.0 / c.c2);
    for (((t, &g), m), v) in theta.iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m * inv_c1;
        let v_hat = *v * inv_c2;
        *t += learning_rate * m_hat / (v_hat.sqrt() + eps);
    }
}

fn update(theta: &mut [f64], grad: &[f64], m: &mut [f64], v: &mut [f64], c: Coeffs) {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        const CHUNK: usize = 4096;
        if crate::par::use_parallel(4 * theta.len() / CHUNK) {
            theta
                .par_chunks_mut(CHUNK)
                .zip(grad.par_chunks(CHUNK))
                .zip(m.par_chunks_mut(CHUNK))
                .zip(v.par_chunks_mut(CHUNK))
                .for_each(|(((t, g), m), v)| update_chunk(t, g, m, v, c));
            return;
        }
    }
    update_chunk(theta, grad, m, v, c);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_matches_hand_computation() {
        let mut params = Parameters::zeros(1, 1, 1);
        params.bias[0] = 0.3;
        let mut grad = Parameters::zeros_like(&params);
        grad.bias[0] = 0.25;
        let cfg = AdamConfig {
            learning_rate: 0.01,
            ..AdamConfig::default()
        };
        let mut opt = OptimizerState::new(&params);
        opt.ascend(&mut params, &grad, &cfg);
        // m = 0.1 g, v = 0.001 g^2; corrected m_hat = g, v_hat = g^2
        let m = 0.1 * 0.25;
        let v = 0.001 * 0.25 * 0.25;
        let expected = 0.3 + 0.01 * (m / 0.1) / ((v / (1.0 - 0.999_f64)).sqrt() + 1e-8);
        assert!((params.bias[0] - expected).abs() < 1e-14);
        assert!((params.bias[0] - (0.3 + 0.01 * 0.25 / (0.25 + 1e-8))).abs() < 1e-12);
        assert_eq!(opt.step_count, 1);
        assert!(opt.second_moment.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let mut params = Parameters::zeros(2, 2, 2);
        params.iter_mut().enumerate().for_each(|(i, x)| *x = i as f64 * 0.1);
        let before = params.clone();
        let mut grad = Parameters::zeros_like(&params);
        grad.iter_mut().for_each(|g| *g = 1.5);
        let cfg = AdamConfig {
            learning_rate: 0.0,
            ..AdamConfig::default()
        };
        let mut opt = OptimizerState::new(&params);
        opt.ascend(&mut params, &grad, &cfg);
        assert_eq!(params, before);
    }
}
