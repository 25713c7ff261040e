//! AdamW with decoupled weight decay, and a linear-warmup + cosine
//! annealing with warm restarts learning-rate schedule.

use std::f64::consts::PI;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl AdamWParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("AdamW betas must lie in [0, 1)"));
        }
        if !(self.eps > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::config("AdamW eps must be > 0 and weight decay >= 0"));
        }
        Ok(())
    }
}

/// Moment estimates for a list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    pub params: AdamWParams,
    pub step: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
}

impl AdamWState {
    /// Zero moments shaped like `sizes`.
    pub fn new(params: AdamWParams, sizes: &[usize]) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            step: 0,
            first_moment: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        })
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.first_moment.iter().map(Vec::len).collect()
    }

    /// One AdamW update. `params` pairs each tensor with its decay flag;
    /// biases (flag `false`) are not decayed.
    pub fn step(&mut self, params: &mut [(&mut [f64], bool)], grads: &[&[f64]], lr: f64) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(Error::shape(format!(
                "optimizer tracks {} tensors, got {} params and {} grads",
                self.first_moment.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, ((p, _), g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.first_moment[i].len() || g.len() != p.len() {
                return Err(Error::shape(format!("tensor {i}: size mismatch")));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of tensor {i}")));
            }
        }
        if !(lr >= 0.0) {
            return Err(Error::config(format!("learning rate must be >= 0, got {lr}")));
        }

        self.step += 1;
        let AdamWParams {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.params;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (i, ((p, decay), g)) in params.iter_mut().zip(grads).enumerate() {
            let lambda = if *decay { weight_decay } else { 0.0 };
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            for j in 0..p.len() {
                let gj = g[j];
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                p[j] -= lr * (m_hat / (v_hat.sqrt() + eps) + lambda * p[j]);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub warmup_steps: u64,
    pub cycle_len: u64,
    pub cycle_mult: u64,
    pub eta_min: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            base_lr: 1e-4,
            warmup_steps: 0,
            cycle_len: 10,
            cycle_mult: 2,
            eta_min: 0.0,
        }
    }
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::config(format!("base_lr must be > 0, got {}", self.base_lr)));
        }
        if self.cycle_len == 0 || self.cycle_mult == 0 {
            return Err(Error::config("cycle length and multiplier must be >= 1"));
        }
        if !(0.0..=self.base_lr).contains(&self.eta_min) {
            return Err(Error::config(format!(
                "eta_min must lie in [0, base_lr], got {}",
                self.eta_min
            )));
        }
        Ok(())
    }

    /// Position `(t_cur, t_i)` inside the current cosine cycle for a step
    /// already past warmup.
    pub fn cycle_position(&self, steps_after_warmup: u64) -> (u64, u64) {
        let mut s = steps_after_warmup;
        let mut len = self.cycle_len;
        if self.cycle_mult == 1 {
            return (s % len, len);
        }
        while s >= len {
            s -= len;
            len = len.saturating_mul(self.cycle_mult);
        }
        (s, len)
    }

    pub fn lr_at(&self, step: u64) -> Result<f64> {
        self.validate()?;
        Ok(self.lr_unchecked(step))
    }

    pub(crate) fn lr_unchecked(&self, step: u64) -> f64 {
        if step < self.warmup_steps {
            return self.base_lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let (t_cur, t_i) = self.cycle_position(step - self.warmup_steps);
        if t_cur == 0 {
            return self.base_lr;
        }
        self.eta_min + 0.5 * (self.base_lr - self.eta_min) * (1.0 + (PI * t_cur as f64 / t_i as f64).cos())
    }
}

pub fn lr_at(step: u64, schedule: &LrSchedule) -> Result<f64> {
    schedule.lr_at(step)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};

    use super::*;
    use crate::seed;

    fn sched(base: f64, warmup: u64, t0: u64, mult: u64, eta_min: f64) -> LrSchedule {
        LrSchedule {
            base_lr: base,
            warmup_steps: warmup,
            cycle_len: t0,
            cycle_mult: mult,
            eta_min,
        }
    }

    #[test]
    fn warmup_endpoint() {
        let s = sched(1e-4, 10, 50, 1, 0.0);
        assert_eq!(s.lr_at(9).unwrap(), 1e-4);
        assert!((s.lr_at(0).unwrap() - 1e-5).abs() < 1e-20);
        assert_eq!(s.lr_at(10).unwrap(), 1e-4);
    }

    #[test]
    fn half_cycle_is_half_lr() {
        let s = sched(0.2, 0, 100, 1, 0.0);
        assert!((s.lr_at(50).unwrap() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn restart_returns_base_exactly() {
        let s = sched(3e-3, 0, 100, 2, 1e-5);
        assert_eq!(s.lr_at(100).unwrap(), 3e-3);
        assert_eq!(s.lr_at(300).unwrap(), 3e-3);
        assert_eq!(s.cycle_position(100), (0, 200));
        assert_eq!(s.cycle_position(299), (199, 200));
        assert!(s.lr_at(99).unwrap() < 3e-3 * 0.01);
    }

    #[test]
    fn nonincreasing_within_cycle() {
        let s = sched(1.0, 5, 7, 3, 0.1);
        let mut prev = f64::INFINITY;
        for step in 5..500u64 {
            let lr = s.lr_at(step).unwrap();
            let (t_cur, _) = s.cycle_position(step - 5);
            if t_cur == 0 {
                assert_eq!(lr, 1.0);
            } else {
                assert!(lr <= prev);
                assert!(lr >= 0.1);
            }
            prev = lr;
        }
    }

    #[test]
    fn rejects_invalid_schedules() {
        assert!(sched(0.0, 0, 10, 1, 0.0).lr_at(0).is_err());
        assert!(sched(1.0, 0, 0, 1, 0.0).lr_at(0).is_err());
        assert!(sched(1.0, 0, 10, 0, 0.0).lr_at(0).is_err());
        assert!(sched(1.0, 0, 10, 1, 2.0).lr_at(0).is_err());
    }

    fn update(state: &mut AdamWState, p: &mut Vec<f64>, g: &[f64], decay: bool, lr: f64) {
        let mut params = [(p.as_mut_slice(), decay)];
        state.step(&mut params, &[g], lr).unwrap();
    }

    #[test]
    fn zero_grads_without_decay_leave_params() {
        let hp = AdamWParams {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut st = AdamWState::new(hp, &[3]).unwrap();
        let mut p = vec![1.0, -2.0, 3.0];
        update(&mut st, &mut p, &[0.0; 3], true, 0.1);
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let hp = AdamWParams {
            weight_decay: 0.0,
            ..Default::default()
        };
        for g in [0.37, -5.0, 1e-3] {
            let mut st = AdamWState::new(hp, &[1]).unwrap();
            let mut p = vec![0.0];
            update(&mut st, &mut p, &[g], true, 0.01);
            // m_hat = g, v_hat = g^2: step = lr * g / (|g| + eps)
            let expected = -0.01 * g / (g.abs() + 1e-8);
            assert!((p[0] - expected).abs() < 1e-15, "{g}: {} vs {expected}", p[0]);
            assert!((p[0] + 0.01 * g.signum()).abs() < 1e-7);
        }
    }

    #[test]
    fn pure_decay_shrinks_weights_not_biases() {
        let hp = AdamWParams {
            weight_decay: 0.1,
            ..Default::default()
        };
        let mut st = AdamWState::new(hp, &[1, 1]).unwrap();
        let mut w = vec![2.0];
        let mut b = vec![2.0];
        for k in 1..=5 {
            let mut params = [(w.as_mut_slice(), true), (b.as_mut_slice(), false)];
            st.step(&mut params, &[&[0.0], &[0.0]], 0.5).unwrap();
            assert!((w[0] - 2.0 * 0.95f64.powi(k)).abs() < 1e-14);
            assert_eq!(b[0], 2.0);
        }
    }

    #[test]
    fn step_rejects_bad_input() {
        let mut st = AdamWState::new(AdamWParams::default(), &[2]).unwrap();
        let mut p = vec![0.0, 0.0];
        let mut params = [(p.as_mut_slice(), true)];
        assert!(st.step(&mut params, &[&[f64::NAN, 0.0]], 0.1).is_err());
        assert!(st.step(&mut params, &[&[0.0]], 0.1).is_err());
        assert_eq!(st.step, 0);
    }

    #[test]
    fn elementwise_independent_of_order() {
        let hp = AdamWParams::default();
        let mut rng = seed::Rng::seed_from_u64(1);
        let p0: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let grads: Vec<Vec<f64>> = (0..5).map(|_| (0..16).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let perm: Vec<usize> = (0..16).rev().collect();

        let mut a = p0.clone();
        let mut sa = AdamWState::new(hp, &[16]).unwrap();
        let mut b: Vec<f64> = perm.iter().map(|&i| p0[i]).collect();
        let mut sb = AdamWState::new(hp, &[16]).unwrap();
        for g in &grads {
            update(&mut sa, &mut a, g, true, 0.01);
            let gp: Vec<f64> = perm.iter().map(|&i| g[i]).collect();
            update(&mut sb, &mut b, &gp, true, 0.01);
        }
        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(a[i], b[k]);
        }
    }

    #[test]
    fn converges_on_convex_quadratic() {
        let mut rng = seed::Rng::seed_from_u64(4);
        let target: Vec<f64> = (0..10).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut x: Vec<f64> = (0..10).map(|_| rng.random_range(-2.0..2.0)).collect();
        let hp = AdamWParams {
            weight_decay: 0.0,
            ..Default::default()
        };
        let schedule = sched(1e-2, 0, 1, 1, 0.0);
        let mut st = AdamWState::new(hp, &[10]).unwrap();
        for step in 0..2000 {
            let g: Vec<f64> = x.iter().zip(&target).map(|(a, b)| a - b).collect();
            update(&mut st, &mut x, &g, false, schedule.lr_at(step).unwrap());
        }
        let dist = x.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(dist < 1e-3, "{dist}");
    }
}
