use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const DEFAULT_T_TRAIN: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn t_train(&self) -> usize {
        self.betas.len()
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        build_schedule(DEFAULT_T_TRAIN, DEFAULT_BETA_START, DEFAULT_BETA_END)
            .expect("default schedule is valid")
    }
}

/// Linear beta ramp, endpoints inclusive.
pub fn build_schedule(t_train: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if t_train == 0 {
        return Err(Error::config("t_train must be at least 1"));
    }
    if !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::config(format!(
            "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
        )));
    }
    let betas: Vec<f64> = if t_train == 1 {
        vec![beta_start]
    } else {
        let step = (beta_end - beta_start) / (t_train - 1) as f64;
        (0..t_train)
            .map(|i| {
                if i == t_train - 1 {
                    beta_end
                } else {
                    beta_start + step * i as f64
                }
            })
            .collect()
    };
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let alpha_bars = alphas
        .iter()
        .scan(1.0, |acc, a| {
            *acc *= a;
            Some(*acc)
        })
        .collect();
    Ok(NoiseSchedule {
        betas,
        alphas,
        alpha_bars,
    })
}

/// `sqrt(alpha_bar) * x0 + sqrt(1 - alpha_bar) * eps`.
pub fn forward_diffuse(x0: &[f64], eps: &[f64], alpha_bar: f64) -> Result<Vec<f64>> {
    if x0.len() != eps.len() {
        return Err(Error::Shape {
            expected: x0.len(),
            actual: eps.len(),
        });
    }
    let (signal, noise) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    Ok(x0
        .iter()
        .zip(eps)
        .map(|(x, e)| signal * x + noise * e)
        .collect())
}

pub fn q_sample(x0: &[f64], t: usize, eps: &[f64], sched: &NoiseSchedule) -> Result<Vec<f64>> {
    if t >= sched.t_train() {
        return Err(Error::config(format!(
            "timestep {t} outside schedule of {}",
            sched.t_train()
        )));
    }
    forward_diffuse(x0, eps, sched.alpha_bar(t))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_ramp_endpoints() {
        let s = build_schedule(1000, 1e-4, 0.02).unwrap();
        assert_eq!(s.betas[0], 1e-4);
        assert_eq!(s.betas[999], 0.02);
        assert_eq!(s.alpha_bars[0], 1.0 - s.betas[0]);
        assert!(s.betas.windows(2).all(|w| w[0] <= w[1]));
        assert!(s.alpha_bars.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn single_step_schedule() {
        let s = build_schedule(1, 0.01, 0.01).unwrap();
        assert_eq!(s.alpha_bars, vec![0.99]);
    }

    #[test]
    fn invalid_schedules() {
        assert!(build_schedule(0, 0.1, 0.2).is_err());
        assert!(build_schedule(10, 0.0, 0.2).is_err());
        assert!(build_schedule(10, 0.3, 0.2).is_err());
        assert!(build_schedule(10, 0.1, 1.0).is_err());
    }

    #[test]
    fn forward_diffusion_limits() {
        let x0 = vec![0.3, -0.7, 0.1];
        let eps = vec![1.5, 0.2, -0.4];
        assert_eq!(forward_diffuse(&x0, &eps, 1.0).unwrap(), x0);
        assert_eq!(forward_diffuse(&x0, &eps, 0.0).unwrap(), eps);
        assert!(forward_diffuse(&x0, &eps[..2], 0.5).is_err());
    }

    #[test]
    fn forward_diffusion_quarter_alpha_bar() {
        // beta = 0.75 gives alpha_bar = 0.25 after one step.
        let s = build_schedule(1, 0.75, 0.75).unwrap();
        let out = q_sample(&[0.0; 4], 0, &[1.0; 4], &s).unwrap();
        for v in out {
            approx::assert_abs_diff_eq!(v, 0.866_025_403_784_438_6, epsilon = 1e-12);
        }
        assert!(q_sample(&[0.0; 4], 1, &[1.0; 4], &s).is_err());
    }
}
