use rand::Rng;
use serde::{Deserialize, Serialize};

use super::replay::ReplayMemory;
use super::table;
use crate::belief::Belief;
use crate::error::{invalid, Error, Result};
use crate::spova::Transition;

/// Dense feed-forward network: tanh hidden layers, linear output.
/// `weights[l]` is row-major `sizes[l+1] x sizes[l]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

/// Gradient buffers with the same layout as [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(rng: &mut R, input: usize, hidden_width: usize, hidden_depth: usize, output: usize) -> Self {
        let mut sizes = vec![input];
        sizes.extend(std::iter::repeat_n(hidden_width, hidden_depth));
        sizes.push(output);
        let weights = sizes
            .windows(2)
            .map(|w| {
                let limit = (6.0 / (w[0] + w[1]) as f64).sqrt();
                (0..w[0] * w[1]).map(|_| rng.random_range(-limit..limit)).collect()
            })
            .collect();
        let biases = sizes[1..].iter().map(|&n| vec![0.0; n]).collect();
        Self { sizes, weights, biases }
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn zero_grads(&self) -> MlpGrads {
        MlpGrads {
            weights: self.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: self.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    /// Activations of every layer, input first.
    fn activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = vec![x.to_vec()];
        for l in 0..self.n_layers() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let prev = &acts[l];
            let last = l + 1 == self.n_layers();
            let out: Vec<f64> = (0..n_out)
                .map(|o| {
                    let row = &self.weights[l][o * n_in..(o + 1) * n_in];
                    let z = self.biases[l][o] + row.iter().zip(prev).map(|(w, a)| w * a).sum::<f64>();
                    if last { z } else { z.tanh() }
                })
                .collect();
            acts.push(out);
        }
        acts
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.activations(x).pop().expect("at least one layer")
    }

    /// Adds `scale * d output[k] / d params` to `grads`.
    pub fn accumulate_grad(&self, x: &[f64], k: usize, scale: f64, grads: &mut MlpGrads) {
        let acts = self.activations(x);
        let mut delta = vec![0.0; self.sizes[self.n_layers()]];
        delta[k] = scale;
        for l in (0..self.n_layers()).rev() {
            let n_in = self.sizes[l];
            let prev = &acts[l];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                grads.biases[l][o] += d;
                let g = &mut grads.weights[l][o * n_in..(o + 1) * n_in];
                for (gi, a) in g.iter_mut().zip(prev) {
                    *gi += d * a;
                }
            }
            if l > 0 {
                // back through the weights, then through tanh of layer l
                let mut next = vec![0.0; n_in];
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let row = &self.weights[l][o * n_in..(o + 1) * n_in];
                    for (n, w) in next.iter_mut().zip(row) {
                        *n += d * w;
                    }
                }
                for (n, a) in next.iter_mut().zip(prev) {
                    *n *= 1.0 - a * a;
                }
                delta = next;
            }
        }
    }

    /// `params -= lr * grads`.
    pub fn apply(&mut self, grads: &MlpGrads, lr: f64) -> Result<()> {
        let bad = grads.weights.iter().chain(&grads.biases).flatten().any(|g| !g.is_finite());
        if bad {
            return Err(Error::NumericFault("non-finite gradient in dense approximator".into()));
        }
        for (w, g) in self.weights.iter_mut().zip(&grads.weights) {
            w.iter_mut().zip(g).for_each(|(w, g)| *w -= lr * g);
        }
        for (b, g) in self.biases.iter_mut().zip(&grads.biases) {
            b.iter_mut().zip(g).for_each(|(b, g)| *b -= lr * g);
        }
        Ok(())
    }
}

/// Q over beliefs with a dense approximator trained on the squared TD error
/// against a frozen target copy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmQAgent {
    pub net: Mlp,
    pub target: Mlp,
    pub learning_rate: f64,
    pub gamma: f64,
    pub batch_size: usize,
    pub target_refresh: usize,
    pub replay_capacity: usize,
    /// Minibatch updates performed so far.
    pub updates: u64,
    #[serde(skip)]
    replay: Option<ReplayMemory<Transition>>,
}

impl EmQAgent {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        rng: &mut R,
        n_states: usize,
        n_actions: usize,
        hidden_width: usize,
        hidden_depth: usize,
        learning_rate: f64,
        gamma: f64,
    ) -> Self {
        let net = Mlp::new(rng, n_states, hidden_width, hidden_depth, n_actions);
        Self {
            target: net.clone(),
            net,
            learning_rate,
            gamma,
            batch_size: 32,
            target_refresh: 200,
            replay_capacity: 50_000,
            updates: 0,
            replay: None,
        }
    }

    pub fn n_actions(&self) -> usize {
        *self.net.sizes.last().expect("non-empty")
    }

    pub fn q_values(&self, b: &Belief) -> Vec<f64> {
        self.net.forward(b.probs())
    }

    pub fn act<R: Rng + ?Sized>(&self, b: &Belief, epsilon: f64, rng: &mut R) -> usize {
        if epsilon > 0.0 && rng.random::<f64>() < epsilon {
            return rng.random_range(0..self.n_actions());
        }
        table::argmax(&self.q_values(b))
    }

    /// `r + gamma max_a' Q_target(b', a')`, without the bootstrap on terminal.
    pub fn td_target(&self, t: &Transition) -> f64 {
        if t.terminal {
            t.reward
        } else {
            let next = self.target.forward(t.belief_after.probs());
            t.reward + self.gamma * next.into_iter().fold(f64::NEG_INFINITY, f64::max)
        }
    }

    /// Mean of `0.5 (Q(b,a) - y)^2` over the batch and its gradient.
    pub fn loss_and_grad(&self, batch: &[Transition]) -> (f64, MlpGrads) {
        let mut grads = self.net.zero_grads();
        let mut loss = 0.0;
        let inv = 1.0 / batch.len() as f64;
        for t in batch {
            let q = self.net.forward(t.belief_before.probs())[t.action];
            let err = q - self.td_target(t);
            loss += 0.5 * err * err * inv;
            self.net.accumulate_grad(t.belief_before.probs(), t.action, err * inv, &mut grads);
        }
        (loss, grads)
    }

    pub fn train_step(&mut self, batch: &[Transition]) -> Result<f64> {
        if batch.is_empty() {
            return invalid("minibatch must not be empty");
        }
        let (loss, grads) = self.loss_and_grad(batch);
        if !loss.is_finite() {
            return Err(Error::NumericFault("non-finite TD loss".into()));
        }
        self.net.apply(&grads, self.learning_rate)?;
        Ok(loss)
    }

    pub fn sync_target(&mut self) {
        self.target = self.net.clone();
    }

    /// Stores the transition and runs one minibatch update once the buffer
    /// holds a full batch; refreshes the target every `target_refresh` updates.
    pub fn observe<R: Rng + ?Sized>(&mut self, t: Transition, rng: &mut R) -> Result<()> {
        let cap = self.replay_capacity;
        let replay = self.replay.get_or_insert_with(|| ReplayMemory::new(cap));
        replay.push(t);
        if replay.len() < self.batch_size {
            return Ok(());
        }
        let batch: Vec<Transition> = replay.sample(rng, self.batch_size).into_iter().cloned().collect();
        self.train_step(&batch)?;
        self.updates += 1;
        if self.updates % self.target_refresh as u64 == 0 {
            self.sync_target();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_belief<R: Rng>(rng: &mut R, n: usize) -> Belief {
        Belief::from_unnormalized((0..n).map(|_| rng.random::<f64>() + 1e-3).collect()).unwrap()
    }

    #[test]
    fn td_loss_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..5 {
            let mut agent = EmQAgent::new(&mut rng, 3, 3, 8, 2, 1e-2, 0.9);
            // distinct target so the bootstrap term is non-trivial
            agent.target = Mlp::new(&mut rng, 3, 8, 2, 3);
            let batch: Vec<Transition> = (0..6)
                .map(|k| Transition {
                    belief_before: random_belief(&mut rng, 3),
                    action: rng.random_range(0..3),
                    reward: rng.random_range(-2.0..2.0),
                    belief_after: random_belief(&mut rng, 3),
                    terminal: k % 3 == 0,
                })
                .collect();
            let (_, grads) = agent.loss_and_grad(&batch);
            let h = 1e-6;
            for l in 0..agent.net.n_layers() {
                for i in 0..agent.net.weights[l].len() {
                    let mut plus = agent.clone();
                    plus.net.weights[l][i] += h;
                    let mut minus = agent.clone();
                    minus.net.weights[l][i] -= h;
                    let fd = (plus.loss_and_grad(&batch).0 - minus.loss_and_grad(&batch).0) / (2.0 * h);
                    let an = grads.weights[l][i];
                    let rel = (fd - an).abs() / an.abs().max(fd.abs()).max(1e-6);
                    assert!(rel < 1e-4, "layer {l} w{i}: {an} vs {fd}");
                }
                for i in 0..agent.net.biases[l].len() {
                    let mut plus = agent.clone();
                    plus.net.biases[l][i] += h;
                    let mut minus = agent.clone();
                    minus.net.biases[l][i] -= h;
                    let fd = (plus.loss_and_grad(&batch).0 - minus.loss_and_grad(&batch).0) / (2.0 * h);
                    let an = grads.biases[l][i];
                    let rel = (fd - an).abs() / an.abs().max(fd.abs()).max(1e-6);
                    assert!(rel < 1e-4, "layer {l} b{i}: {an} vs {fd}");
                }
            }
        }
    }

    #[test]
    fn fixed_belief_without_discount_learns_mean_rewards() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut agent = EmQAgent::new(&mut rng, 3, 3, 32, 2, 1e-2, 0.0);
        let b = Belief::new(vec![0.2, 0.5, 0.3]).unwrap();
        let means = [1.5, -0.5, 0.25];
        let mut noise = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20_000 {
            let a = rng.random_range(0..3);
            let t = Transition {
                belief_before: b.clone(),
                action: a,
                reward: means[a] + noise.random_range(-0.5..0.5),
                belief_after: b.clone(),
                terminal: false,
            };
            agent.observe(t, &mut rng).unwrap();
        }
        let q = agent.q_values(&b);
        for a in 0..3 {
            assert!((q[a] - means[a]).abs() < 5e-2, "{q:?}");
        }
        assert_eq!(agent.act(&b, 0.0, &mut rng), 0);
    }

    #[test]
    fn targets_frozen_between_refreshes() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut agent = EmQAgent::new(&mut rng, 2, 2, 4, 1, 0.1, 0.9);
        let t = Transition {
            belief_before: Belief::new(vec![0.3, 0.7]).unwrap(),
            action: 1,
            reward: 1.0,
            belief_after: Belief::new(vec![0.6, 0.4]).unwrap(),
            terminal: false,
        };
        let y0 = agent.td_target(&t);
        agent.train_step(std::slice::from_ref(&t)).unwrap();
        assert_eq!(agent.td_target(&t), y0);
        assert_ne!(agent.net, agent.target);
        agent.sync_target();
        assert_ne!(agent.td_target(&t), y0);
    }

    #[test]
    fn non_finite_input_is_a_numeric_fault() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut agent = EmQAgent::new(&mut rng, 2, 2, 4, 1, 0.1, 0.9);
        let b = Belief::new(vec![0.5, 0.5]).unwrap();
        let t = Transition { belief_before: b.clone(), action: 0, reward: f64::NAN, belief_after: b, terminal: true };
        assert!(matches!(agent.train_step(&[t]), Err(Error::NumericFault(_))));
    }
}
