/// Adaptive-moment optimizer with decoupled weight decay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamW {
    /// One update at step `t` (1-based). Weight decay shrinks the parameter
    /// before the moment update; bias-corrected moments then set the step.
    #[allow(clippy::too_many_arguments)]
    pub fn step(
        &self,
        param: &mut [f64],
        grad: &[f64],
        m: &mut [f64],
        v: &mut [f64],
        t: u64,
        lr: f64,
        weight_decay: f64,
    ) {
        let bc1 = 1.0 - self.beta1.powi(t as i32);
        let bc2 = 1.0 - self.beta2.powi(t as i32);
        for i in 0..param.len() {
            let g = grad[i];
            param[i] -= lr * weight_decay * param[i];
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            param[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// `lr0 · gamma^epoch`.
pub fn lr_schedule(lr0: f64, gamma: f64, epoch: usize) -> f64 {
    lr0 * gamma.powi(epoch as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut p = [0.3, -1.0];
        let (mut m, mut v) = ([0.0; 2], [0.0; 2]);
        for t in 1..5 {
            AdamW::default().step(&mut p, &[0.0, 0.0], &mut m, &mut v, t, 1e-3, 0.0);
        }
        assert_eq!(p, [0.3, -1.0]);
    }

    #[test]
    fn first_step_moves_by_lr_against_the_gradient() {
        for g in [0.7, -3.0, 1e-3] {
            let mut p = [1.0];
            let (mut m, mut v) = ([0.0], [0.0]);
            AdamW::default().step(&mut p, &[g], &mut m, &mut v, 1, 1e-4, 0.0);
            let delta = p[0] - 1.0;
            // |g| / (|g| + eps) is within 1e-5 of one for these gradients.
            assert!((delta + 1e-4 * g.signum()).abs() < 1e-9, "g={g} delta={delta}");
        }
    }

    #[test]
    fn decay_is_applied_before_the_moment_update() {
        let mut p = [2.0];
        let (mut m, mut v) = ([0.0], [0.0]);
        AdamW::default().step(&mut p, &[0.0], &mut m, &mut v, 1, 0.1, 0.5);
        assert_eq!(p[0], 2.0 - 0.1 * 0.5 * 2.0);
    }

    #[test]
    fn schedule_values() {
        assert_eq!(lr_schedule(1e-4, 0.9, 0), 1e-4);
        assert!((lr_schedule(1e-4, 0.9, 2) - 8.1e-5).abs() < 1e-18);
        assert_eq!(lr_schedule(1e-4, 1.0, 5), 1e-4);
    }
}
