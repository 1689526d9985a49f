use crate::error::{Error, Result};

/// Linear schedule on `1 - abar_t`, with every derived sequence indexed by
/// the step `t` (index 0 holds the `abar_0 = 1` convention).
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionSchedule {
    steps: usize,
    scale: f64,
    alpha_min: f64,
    alpha_max: f64,
    one_minus_abar: Vec<f64>,
    abar: Vec<f64>,
    alpha: Vec<f64>,
    loss_weight: Vec<f64>,
}

impl DiffusionSchedule {
    pub fn build(steps: usize, scale: f64, alpha_min: f64, alpha_max: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("diffusion steps T must be at least 1".into()));
        }
        if !(alpha_min > 0.0 && alpha_min < alpha_max && alpha_max < 1.0) {
            return Err(Error::Config(format!(
                "need 0 < alpha_min < alpha_max < 1, got alpha_min = {alpha_min}, alpha_max = {alpha_max}"
            )));
        }
        if !(scale > 0.0 && scale <= 1.0) {
            return Err(Error::Config(format!("noise scale s must lie in (0, 1], got {scale}")));
        }
        let mut one_minus_abar = vec![0.0];
        for t in 1..=steps {
            let frac = if steps == 1 {
                0.0
            } else {
                (t - 1) as f64 / (steps - 1) as f64
            };
            one_minus_abar.push(scale * (alpha_min + frac * (alpha_max - alpha_min)));
        }
        let abar: Vec<f64> = one_minus_abar.iter().map(|v| 1.0 - v).collect();
        let mut alpha = vec![1.0];
        let mut loss_weight = vec![0.0];
        for t in 1..=steps {
            alpha.push(abar[t] / abar[t - 1]);
            loss_weight.push(if t == 1 {
                1.0
            } else {
                0.5 * (abar[t - 1] / one_minus_abar[t - 1] - abar[t] / one_minus_abar[t])
            });
        }
        Ok(DiffusionSchedule {
            steps,
            scale,
            alpha_min,
            alpha_max,
            one_minus_abar,
            abar,
            alpha,
            loss_weight,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn alpha_bounds(&self) -> (f64, f64) {
        (self.alpha_min, self.alpha_max)
    }

    pub fn one_minus_abar(&self, t: usize) -> f64 {
        self.one_minus_abar[t]
    }

    pub fn abar(&self, t: usize) -> f64 {
        self.abar[t]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t]
    }

    /// Weight of the step-`t` reconstruction term in the training loss.
    pub fn loss_weight(&self, t: usize) -> f64 {
        self.loss_weight[t]
    }

    /// Coefficients `(a, b)` of `x_{t-1} = a x_t + b x0_hat`.
    ///
    /// `1 - alpha_t` is formed as `(abar_{t-1} - abar_t) / abar_{t-1}` from the
    /// stored `1 - abar` values, which makes `t = 1` give exactly `(0, 1)`.
    pub fn reverse_coefficients(&self, t: usize) -> (f64, f64) {
        assert!(t >= 1 && t <= self.steps, "step {t} outside 1..={}", self.steps);
        let om_prev = self.one_minus_abar[t - 1];
        let om = self.one_minus_abar[t];
        let one_minus_alpha = (om - om_prev) / self.abar[t - 1];
        let a = self.alpha[t].sqrt() * om_prev / om;
        let b = self.abar[t - 1].sqrt() * one_minus_alpha / om;
        (a, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_schedule() -> DiffusionSchedule {
        DiffusionSchedule::build(5, 0.01, 1e-4, 0.02).unwrap()
    }

    #[test]
    fn endpoints() {
        let s = default_schedule();
        assert!((s.one_minus_abar(1) - 1e-6).abs() < 1e-15);
        assert!((s.one_minus_abar(5) - 2e-4).abs() < 1e-15);
        assert_eq!(s.loss_weight(1), 1.0);
    }

    #[test]
    fn monotone_and_positive() {
        for steps in [2, 5, 10] {
            for (scale, amax) in [(1e-2, 2e-2), (2e-3, 5e-2), (1.0, 0.5)] {
                let s = DiffusionSchedule::build(steps, scale, 1e-4, amax).unwrap();
                for t in 1..=steps {
                    assert!(s.abar(t) > 0.0 && s.abar(t) < 1.0);
                    assert!(s.alpha(t) > 0.0 && s.alpha(t) < 1.0);
                    assert!(s.loss_weight(t) > 0.0);
                    if t > 1 {
                        assert!(s.one_minus_abar(t) > s.one_minus_abar(t - 1));
                    }
                    let (a, b) = s.reverse_coefficients(t);
                    assert!((0.0..=1.0001).contains(&a) && (0.0..=1.0001).contains(&b), "{a} {b}");
                }
            }
        }
    }

    #[test]
    fn first_step_coefficients_are_exact() {
        assert_eq!(default_schedule().reverse_coefficients(1), (0.0, 1.0));
    }

    #[test]
    fn single_step_schedule() {
        let s = DiffusionSchedule::build(1, 0.5, 1e-3, 0.1).unwrap();
        assert_eq!(s.one_minus_abar(1), 0.5 * 1e-3);
    }

    #[test]
    fn bound_violations() {
        assert!(DiffusionSchedule::build(5, 0.01, 0.02, 1e-4).is_err());
        assert!(DiffusionSchedule::build(5, 0.0, 1e-4, 0.02).is_err());
        assert!(DiffusionSchedule::build(0, 0.01, 1e-4, 0.02).is_err());
    }
}
