use serde::{Deserialize, Serialize};

/// Discrete noise schedule with timesteps `0..n`; all coefficients in f64.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub betas: Vec<f64>,
    pub alphas_cumprod: Vec<f64>,
}

impl NoiseSchedule {
    /// Squared-cosine schedule with offset `s = 0.008`; betas capped at 0.999.
    pub fn squared_cosine(n: usize) -> Self {
        assert!(n >= 2);
        let f = |t: f64| ((t + 0.008) / 1.008 * std::f64::consts::FRAC_PI_2).cos().powi(2);
        let betas: Vec<f64> = (0..n)
            .map(|i| {
                let t1 = i as f64 / n as f64;
                let t2 = (i + 1) as f64 / n as f64;
                (1.0 - f(t2) / f(t1)).min(0.999)
            })
            .collect();
        let mut acc = 1.0;
        let alphas_cumprod = betas
            .iter()
            .map(|b| {
                acc *= 1.0 - b;
                acc
            })
            .collect();
        Self { betas, alphas_cumprod }
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alphas_cumprod[t]
    }

    /// Cumulative product before step `t`; 1 before the first step.
    pub fn alpha_bar_prev(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alphas_cumprod[t - 1]
        }
    }

    /// `sqrt(ab)·x0 + sqrt(1-ab)·eps`
    pub fn add_noise(&self, x0: f64, eps: f64, t: usize) -> f64 {
        let ab = self.alpha_bar(t);
        ab.sqrt() * x0 + (1.0 - ab).sqrt() * eps
    }

    /// Clean sample implied by a noised value and its noise.
    pub fn predict_x0(&self, xt: f64, eps: f64, t: usize) -> f64 {
        let ab = self.alpha_bar(t);
        (xt - (1.0 - ab).sqrt() * eps) / ab.sqrt()
    }

    /// Posterior `q(x_{t-1} | x_t, x0)`: coefficients of x0 and x_t, and variance.
    pub fn posterior(&self, t: usize) -> (f64, f64, f64) {
        let ab = self.alpha_bar(t);
        let ab_prev = self.alpha_bar_prev(t);
        let beta = self.betas[t];
        let c0 = ab_prev.sqrt() * beta / (1.0 - ab);
        let ct = (1.0 - beta).sqrt() * (1.0 - ab_prev) / (1.0 - ab);
        let var = (1.0 - ab_prev) / (1.0 - ab) * beta;
        (c0, ct, var)
    }

    /// `k` evenly spaced timesteps in decreasing order, always including
    /// the first and last.
    pub fn ddim_timesteps(&self, k: usize) -> Vec<usize> {
        let n = self.len();
        if k <= 1 {
            return vec![n - 1];
        }
        let k = k.min(n);
        let mut ts: Vec<usize> = (0..k).map(|i| ((i * (n - 1)) as f64 / (k - 1) as f64).round() as usize).collect();
        ts.dedup();
        ts.reverse();
        ts
    }
}
