//! Smooth-max value approximation over beliefs.
//!
//! Each action owns `n` non-negative vectors `eta_{a,i}` in belief space and
//!
//! ```text
//! Q_a(b) = ( sum_i (b . eta_{a,i} + upsilon)^z )^(1/z),   V(b) = max_a Q_a(b)
//! ```
//!
//! The vectors are trained on the Bellman residual
//! `E = gamma V(b') + r - Q_a(b) + (1 - gamma) upsilon`, where the last term
//! cancels the shift the offset `upsilon` introduces into the fixed point:
//! at convergence `Q_a(b) - upsilon` estimates the return.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::belief::Belief;
use crate::error::{invalid, Error, Result};

/// Exponent used by the per-component update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExponentMode {
    /// `(d_i / Q_a)^(z-1)`: the exact gradient of `Q_a`.
    #[default]
    Derivative,
    /// `(d_i / Q_a)^z`, as the update rule is usually printed.
    Printed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpovaConfig {
    pub n_vectors: usize,
    pub z: f64,
    pub upsilon: f64,
    pub learning_rate: f64,
    pub gamma: f64,
    pub exponent_mode: ExponentMode,
    /// Add `(1 - gamma) upsilon` to the residual.
    pub compensate: bool,
    /// Constant added to every reward before it enters the residual
    /// (reward shaping; 0 disables it).
    pub reward_shift: f64,
    /// Upper bound of the uniform initialization of eta components.
    pub init_scale: f64,
}

impl Default for SpovaConfig {
    fn default() -> Self {
        Self {
            n_vectors: 5,
            z: 2.0,
            upsilon: 1.0,
            learning_rate: 1e-2,
            gamma: 0.9,
            exponent_mode: ExponentMode::Derivative,
            compensate: true,
            reward_shift: 0.0,
            init_scale: 0.1,
        }
    }
}

impl SpovaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_vectors == 0 {
            return invalid("n_vectors must be at least 1");
        }
        if !(self.z >= 1.0 && self.z.is_finite()) {
            return invalid("z must be a finite value >= 1");
        }
        if !(self.upsilon >= 0.0) {
            return invalid("upsilon must be >= 0");
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return invalid("gamma must lie in [0, 1)");
        }
        if !(self.learning_rate > 0.0) {
            return invalid("learning_rate must be positive");
        }
        Ok(())
    }
}

/// One replayed belief transition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub belief_before: Belief,
    pub action: usize,
    pub reward: f64,
    pub belief_after: Belief,
    pub terminal: bool,
}

/// The learnable eta vectors plus their hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaSet {
    pub n_states: usize,
    pub n_actions: usize,
    pub config: SpovaConfig,
    /// `etas[a][i][j]`: component `j` of vector `i` of action `a`.
    pub etas: Vec<Vec<Vec<f64>>>,
}

impl EtaSet {
    /// Components drawn uniformly from `[0, init_scale)`.
    pub fn random<R: Rng + ?Sized>(
        rng: &mut R,
        n_states: usize,
        n_actions: usize,
        config: SpovaConfig,
    ) -> Result<Self> {
        config.validate()?;
        let etas = (0..n_actions)
            .map(|_| {
                (0..config.n_vectors)
                    .map(|_| (0..n_states).map(|_| rng.random::<f64>() * config.init_scale).collect())
                    .collect()
            })
            .collect();
        Ok(Self {
            n_states,
            n_actions,
            config,
            etas,
        })
    }

    pub fn from_etas(etas: Vec<Vec<Vec<f64>>>, config: SpovaConfig) -> Result<Self> {
        config.validate()?;
        let n_actions = etas.len();
        if n_actions == 0 {
            return invalid("need at least one action");
        }
        let n_states = etas[0].first().map_or(0, Vec::len);
        for per_action in &etas {
            if per_action.len() != config.n_vectors {
                return invalid("every action needs exactly n_vectors vectors");
            }
            if per_action.iter().any(|v| v.len() != n_states) {
                return invalid("eta vectors must all have the belief dimension");
            }
        }
        if etas.iter().flatten().flatten().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return invalid("eta components must be finite and non-negative");
        }
        Ok(Self {
            n_states,
            n_actions,
            config,
            etas,
        })
    }

    /// Offset dot products `d_i = b . eta_{a,i} + upsilon`.
    fn dots(&self, b: &Belief, a: usize) -> Vec<f64> {
        self.etas[a]
            .iter()
            .map(|eta| b.dot(eta) + self.config.upsilon)
            .collect()
    }

    /// z-norm of the offset dot products, computed relative to the largest
    /// term so high exponents do not overflow.
    fn smooth_max(&self, dots: &[f64]) -> f64 {
        let m = dots.iter().copied().fold(0.0, f64::max);
        if m == 0.0 {
            return 0.0;
        }
        let z = self.config.z;
        let s: f64 = dots.iter().map(|d| (d / m).powf(z)).sum();
        m * s.powf(1.0 / z)
    }

    pub fn q_value(&self, b: &Belief, a: usize) -> f64 {
        self.smooth_max(&self.dots(b, a))
    }

    /// `Q_a(b) - upsilon`, the return estimate once training has converged
    /// with compensation enabled.
    pub fn return_estimate(&self, b: &Belief, a: usize) -> f64 {
        self.q_value(b, a) - self.config.upsilon - self.config.reward_shift / (1.0 - self.config.gamma)
    }

    pub fn q_values(&self, b: &Belief) -> Vec<f64> {
        (0..self.n_actions).map(|a| self.q_value(b, a)).collect()
    }

    /// `(max_a Q_a(b), argmax)` with ties going to the lowest action index.
    pub fn v_value(&self, b: &Belief) -> (f64, usize) {
        let mut best = (self.q_value(b, 0), 0);
        for a in 1..self.n_actions {
            let q = self.q_value(b, a);
            if q > best.0 {
                best = (q, a);
            }
        }
        best
    }

    /// `dQ_a/d eta_{a,i,j} = b_j (d_i / Q_a)^(z-1)`, indexed `[i][j]`.
    pub fn q_gradient(&self, b: &Belief, a: usize) -> Vec<Vec<f64>> {
        self.update_direction(b, a, ExponentMode::Derivative)
    }

    fn update_direction(&self, b: &Belief, a: usize, mode: ExponentMode) -> Vec<Vec<f64>> {
        let dots = self.dots(b, a);
        let q = self.smooth_max(&dots);
        let exponent = match mode {
            ExponentMode::Derivative => self.config.z - 1.0,
            ExponentMode::Printed => self.config.z,
        };
        dots.iter()
            .map(|&d| {
                let w = if q > 0.0 { (d / q).powf(exponent) } else { 0.0 };
                b.probs().iter().map(|&bj| bj * w).collect()
            })
            .collect()
    }

    /// Residual with `V(b')` taken from `target`.
    pub fn residual_with_target(&self, target: &EtaSet, t: &Transition) -> f64 {
        let cfg = &self.config;
        let mut e = t.reward + cfg.reward_shift - self.q_value(&t.belief_before, t.action);
        if cfg.compensate {
            e += (1.0 - cfg.gamma) * cfg.upsilon;
        }
        if !t.terminal {
            e += cfg.gamma * target.v_value(&t.belief_after).0;
        }
        e
    }

    /// `E(b) = gamma V(b') + r - Q_a(b) + (1 - gamma) upsilon`; terminal
    /// transitions drop the `gamma V(b')` term but keep the compensation.
    pub fn compensated_residual(&self, t: &Transition) -> f64 {
        self.residual_with_target(self, t)
    }

    fn check_transition(&self, t: &Transition) -> Result<()> {
        if t.action >= self.n_actions {
            return invalid(format!("action {} out of range", t.action));
        }
        if t.belief_before.len() != self.n_states || t.belief_after.len() != self.n_states {
            return invalid("transition belief has the wrong dimension");
        }
        if !t.reward.is_finite() {
            return invalid("transition reward must be finite");
        }
        Ok(())
    }

    fn apply_delta(&mut self, a: usize, delta: &[Vec<f64>]) -> Result<()> {
        if delta.iter().flatten().any(|d| !d.is_finite()) {
            return Err(Error::NumericFault(format!(
                "non-finite eta update for action {a} (check z / upsilon)"
            )));
        }
        for (eta, dv) in self.etas[a].iter_mut().zip(delta) {
            for (x, d) in eta.iter_mut().zip(dv) {
                *x = (*x + d).max(0.0);
            }
        }
        Ok(())
    }

    /// Single-transition update of the acted action's vectors, residual
    /// computed against `self`.
    pub fn apply_update(&self, t: &Transition) -> Result<EtaSet> {
        self.check_transition(t)?;
        let e = self.compensated_residual(t);
        let scale = self.config.learning_rate * e;
        let delta: Vec<Vec<f64>> = self
            .update_direction(&t.belief_before, t.action, self.config.exponent_mode)
            .into_iter()
            .map(|row| row.into_iter().map(|g| scale * g).collect())
            .collect();
        let mut next = self.clone();
        next.apply_delta(t.action, &delta)?;
        Ok(next)
    }

    /// Minibatch update: residuals use `V` from the frozen `target`, the
    /// per-transition updates are averaged and applied at once.
    pub fn train_step(&mut self, target: &EtaSet, minibatch: &[Transition]) -> Result<()> {
        if minibatch.is_empty() {
            return invalid("minibatch must not be empty");
        }
        let mut acc = vec![vec![vec![0.0; self.n_states]; self.config.n_vectors]; self.n_actions];
        let mut touched = vec![false; self.n_actions];
        for t in minibatch {
            self.check_transition(t)?;
            let e = self.residual_with_target(target, t);
            if e == 0.0 {
                continue;
            }
            let dir = self.update_direction(&t.belief_before, t.action, self.config.exponent_mode);
            for (acc_row, row) in acc[t.action].iter_mut().zip(&dir) {
                for (x, g) in acc_row.iter_mut().zip(row) {
                    *x += e * g;
                }
            }
            touched[t.action] = true;
        }
        let scale = self.config.learning_rate / minibatch.len() as f64;
        for a in 0..self.n_actions {
            if touched[a] {
                let delta: Vec<Vec<f64>> = acc[a]
                    .iter()
                    .map(|row| row.iter().map(|x| x * scale).collect())
                    .collect();
                self.apply_delta(a, &delta)?;
            }
        }
        Ok(())
    }

    /// Epsilon-greedy choice; consumes randomness only when `epsilon > 0`.
    pub fn select_action<R: Rng + ?Sized>(&self, b: &Belief, epsilon: f64, rng: &mut R) -> usize {
        if epsilon > 0.0 && rng.random::<f64>() < epsilon {
            rng.random_range(0..self.n_actions)
        } else {
            self.v_value(b).1
        }
    }
}
