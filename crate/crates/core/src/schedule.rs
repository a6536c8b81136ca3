//! Noise schedules for the forward diffusion process.

use crate::error::{CoreError, Result};

/// Linear beta schedule with the derived alpha, alpha-bar and beta-tilde
/// sequences. Timesteps are 1-based: `t` ranges over `1..=t_count`, and
/// `alpha_bar(0)` is defined as 1 so the final reverse step is noiseless.
#[derive(Clone, Debug)]
pub struct NoiseSchedule {
    t_count: usize,
    beta: Vec<f32>,
    alpha: Vec<f32>,
    alpha_bar: Vec<f32>,
    beta_tilde: Vec<f32>,
}

impl NoiseSchedule {
    /// Builds a schedule with beta interpolated linearly from `beta_min` at
    /// t=1 to `beta_max` at t=T.
    pub fn linear(t_count: usize, beta_min: f32, beta_max: f32) -> Result<Self> {
        if t_count < 2 {
            return Err(CoreError::invalid("NoiseSchedule::linear", "need at least 2 steps"));
        }
        if !(0.0 < beta_min && beta_min < beta_max && beta_max < 1.0) {
            return Err(CoreError::invalid(
                "NoiseSchedule::linear",
                format!("need 0 < beta_min < beta_max < 1, got {} and {}", beta_min, beta_max),
            ));
        }
        let mut beta = Vec::with_capacity(t_count);
        for i in 0..t_count {
            let u = i as f32 / (t_count - 1) as f32;
            beta.push(beta_min + u * (beta_max - beta_min));
        }
        Self::from_betas(beta)
    }

    /// Builds the derived sequences from an explicit beta sequence.
    pub fn from_betas(beta: Vec<f32>) -> Result<Self> {
        let t_count = beta.len();
        if t_count < 2 {
            return Err(CoreError::invalid("NoiseSchedule::from_betas", "need at least 2 steps"));
        }
        let mut alpha = Vec::with_capacity(t_count);
        let mut alpha_bar = Vec::with_capacity(t_count);
        let mut beta_tilde = Vec::with_capacity(t_count);
        let mut prod = 1.0f32;
        let mut prev_bar = 1.0f32; // alpha_bar(0) := 1
        for (i, b) in beta.iter().enumerate() {
            if !(0.0 < *b && *b < 1.0) {
                return Err(CoreError::invalid(
                    "NoiseSchedule::from_betas",
                    format!("beta[{}] = {} outside (0,1)", i, b),
                ));
            }
            if i > 0 && *b <= beta[i - 1] {
                return Err(CoreError::invalid(
                    "NoiseSchedule::from_betas",
                    "beta must be strictly increasing",
                ));
            }
            let a = 1.0 - b;
            prod *= a;
            alpha.push(a);
            alpha_bar.push(prod);
            beta_tilde.push((1.0 - prev_bar) / (1.0 - prod) * b);
            prev_bar = prod;
        }
        if alpha_bar.last().copied().unwrap_or(0.0) <= 0.0 {
            return Err(CoreError::invalid("NoiseSchedule::from_betas", "alpha_bar underflowed"));
        }
        Ok(NoiseSchedule { t_count, beta, alpha, alpha_bar, beta_tilde })
    }

    pub fn t_count(&self) -> usize {
        self.t_count
    }

    fn check_t(&self, t: usize, op: &'static str) -> Result<()> {
        if t == 0 || t > self.t_count {
            return Err(CoreError::invalid(
                op,
                format!("timestep {} outside 1..={}", t, self.t_count),
            ));
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> Result<f32> {
        self.check_t(t, "beta")?;
        Ok(self.beta[t - 1])
    }

    pub fn alpha(&self, t: usize) -> Result<f32> {
        self.check_t(t, "alpha")?;
        Ok(self.alpha[t - 1])
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f32> {
        if t == 0 {
            return Ok(1.0);
        }
        self.check_t(t, "alpha_bar")?;
        Ok(self.alpha_bar[t - 1])
    }

    pub fn beta_tilde(&self, t: usize) -> Result<f32> {
        self.check_t(t, "beta_tilde")?;
        Ok(self.beta_tilde[t - 1])
    }
}
