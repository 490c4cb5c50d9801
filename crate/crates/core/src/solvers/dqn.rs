//! A small fully connected deep Q-network trained from a replay buffer
//! against a periodically synchronised target copy.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{argmax_lowest, EpsilonSchedule, Provenance, TrainedPolicy};
use crate::error::{Error, Result};
use crate::mdp::{DomainModel, Mdp};

// ---------------------------------------------------------------------------
// Network
// ---------------------------------------------------------------------------

/// Dense layer; weights are stored input-major (`w[i * output + j]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub input: usize,
    pub output: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn new<R: Rng + ?Sized>(input: usize, output: usize, bound: f64, rng: &mut R) -> Self {
        let weights = (0..input * output)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Self {
            input,
            output,
            weights,
            bias: vec![0.0; output],
        }
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.bias.clone();
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = &self.weights[i * self.output..(i + 1) * self.output];
            for (zj, wij) in z.iter_mut().zip(row) {
                *zj += wij * xi;
            }
        }
        z
    }
}

/// Multi-layer perceptron with ReLU hidden activations and a linear head.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Gradient of a loss with the same shape as an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

impl Mlp {
    /// `sizes` = `[input, hidden..., output]`; He-uniform initialisation.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "network needs an input and an output size");
        let layers = sizes
            .windows(2)
            .map(|w| Dense::new(w[0], w[1], (6.0 / w[0] as f64).sqrt(), rng))
            .collect();
        Self { layers }
    }

    pub fn output_size(&self) -> usize {
        self.layers.last().map_or(0, |l| l.output)
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let last = self.layers.len() - 1;
        let mut a = x.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            a = layer.forward(&a);
            if l < last {
                a.iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
        a
    }

    /// Inputs to every layer plus the final output.
    fn forward_cached(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let last = self.layers.len() - 1;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = layer.forward(acts.last().unwrap());
            if l < last {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(z);
        }
        acts
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            weights: self.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            bias: self.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    /// Mean squared TD loss `1/B Σ (y - Q(s, a))²` over `(input, action,
    /// target)` triples and its gradient with respect to every parameter.
    pub fn loss_and_gradient(&self, batch: &[(&[f64], usize, f64)]) -> (f64, Gradients) {
        let mut grads = self.zero_gradients();
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        for &(x, action, target) in batch {
            let acts = self.forward_cached(x);
            let q = acts.last().unwrap()[action];
            let err = target - q;
            loss += scale * err * err;

            let mut delta = vec![0.0; self.output_size()];
            delta[action] = -2.0 * scale * err;
            for l in (0..self.layers.len()).rev() {
                let layer = &self.layers[l];
                let input = &acts[l];
                let gw = &mut grads.weights[l];
                for (i, &xi) in input.iter().enumerate() {
                    if xi == 0.0 {
                        continue;
                    }
                    let row = &mut gw[i * layer.output..(i + 1) * layer.output];
                    for (g, d) in row.iter_mut().zip(&delta) {
                        *g += xi * d;
                    }
                }
                for (g, d) in grads.bias[l].iter_mut().zip(&delta) {
                    *g += d;
                }
                if l == 0 {
                    break;
                }
                // Back through the ReLU feeding this layer; its output is `input`.
                let mut prev = vec![0.0; layer.input];
                for (i, p) in prev.iter_mut().enumerate() {
                    if input[i] <= 0.0 {
                        continue;
                    }
                    let row = &layer.weights[i * layer.output..(i + 1) * layer.output];
                    *p = row.iter().zip(&delta).map(|(w, d)| w * d).sum();
                }
                delta = prev;
            }
        }
        (loss, grads)
    }

    pub fn apply(&mut self, grads: &Gradients, alpha: f64) {
        for (l, layer) in self.layers.iter_mut().enumerate() {
            for (w, g) in layer.weights.iter_mut().zip(&grads.weights[l]) {
                *w -= alpha * g;
            }
            for (b, g) in layer.bias.iter_mut().zip(&grads.bias[l]) {
                *b -= alpha * g;
            }
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Mutable access to the `index`-th parameter in layer order (weights, then bias).
    pub fn param_mut(&mut self, mut index: usize) -> &mut f64 {
        for layer in &mut self.layers {
            if index < layer.weights.len() {
                return &mut layer.weights[index];
            }
            index -= layer.weights.len();
            if index < layer.bias.len() {
                return &mut layer.bias[index];
            }
            index -= layer.bias.len();
        }
        panic!("parameter index out of range");
    }
}

impl Gradients {
    /// Flattened in the same order as [`Mlp::param_mut`].
    pub fn flatten(&self) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .flat_map(|(w, b)| w.iter().chain(b).copied())
            .collect()
    }
}

/// Online network plus its frozen target copy.
#[derive(Debug, Clone)]
pub struct QNetwork {
    pub online: Mlp,
    pub target: Mlp,
    pub syncs: usize,
}

impl QNetwork {
    pub fn new(online: Mlp) -> Self {
        Self {
            target: online.clone(),
            online,
            syncs: 0,
        }
    }

    pub fn sync(&mut self) {
        self.target = self.online.clone();
        self.syncs += 1;
    }

    /// `r` for terminal transitions, `r + γ max_a' Q_target(s', a')` otherwise.
    pub fn td_target(&self, exp: &Experience, next_input: &[f64], gamma: f64) -> f64 {
        if exp.terminal {
            exp.reward
        } else {
            let best = self
                .target
                .forward(next_input)
                .into_iter()
                .fold(f64::NEG_INFINITY, f64::max);
            exp.reward + gamma * best
        }
    }
}

// ---------------------------------------------------------------------------
// Replay buffer
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Experience {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next: usize,
    pub terminal: bool,
}

/// Fixed-capacity ring buffer; once full, each push overwrites the oldest entry.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Experience>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay buffer capacity must be positive");
        Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            next: 0,
        }
    }

    pub fn push(&mut self, exp: Experience) {
        if self.items.len() < self.capacity {
            self.items.push(exp);
        } else {
            self.items[self.next] = exp;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Stored transitions from oldest to newest.
    pub fn iter_oldest_first(&self) -> impl Iterator<Item = &Experience> {
        let split = if self.items.len() < self.capacity { 0 } else { self.next };
        self.items[split..].iter().chain(&self.items[..split])
    }

    /// Uniform sample with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Vec<Experience> {
        (0..batch)
            .map(|_| self.items[rng.random_range(0..self.items.len())])
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputEncoding {
    /// Domain features rescaled to [0, 1] by their declared ranges.
    Features,
    /// Indicator vector over enumerated states.
    OneHot,
}

impl InputEncoding {
    pub fn encode(self, domain: &DomainModel) -> Vec<Vec<f64>> {
        match self {
            InputEncoding::Features => domain
                .states()
                .iter()
                .map(|s| {
                    s.features
                        .as_slice()
                        .iter()
                        .zip(domain.features())
                        .map(|(v, spec)| {
                            let span = spec.max - spec.min;
                            if span > 0.0 {
                                (v - spec.min) / span
                            } else {
                                0.0
                            }
                        })
                        .collect()
                })
                .collect(),
            InputEncoding::OneHot => {
                let n = domain.num_states();
                (0..n)
                    .map(|s| {
                        let mut x = vec![0.0; n];
                        x[s] = 1.0;
                        x
                    })
                    .collect()
            }
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            InputEncoding::Features => "features",
            InputEncoding::OneHot => "one-hot",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DqnConfig {
    pub hidden: Vec<usize>,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    /// Optimisation steps between target-network syncs.
    pub target_sync: usize,
    pub alpha: f64,
    pub gamma: Option<f64>,
    pub epsilon: EpsilonSchedule,
    pub episodes: usize,
    pub max_steps: usize,
    pub encoding: InputEncoding,
    pub tie_tolerance: f64,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            buffer_capacity: 10_000,
            batch_size: 32,
            target_sync: 256,
            alpha: 1e-3,
            gamma: None,
            epsilon: EpsilonSchedule::linear(1.0, 0.05, 1_000),
            episodes: 2_000,
            max_steps: 500,
            encoding: InputEncoding::Features,
            tie_tolerance: 0.0,
        }
    }
}

pub fn dqn_learn<R: Rng + ?Sized>(
    domain: &DomainModel,
    config: &DqnConfig,
    seed: Option<u64>,
    rng: &mut R,
) -> Result<TrainedPolicy> {
    if config.buffer_capacity < config.batch_size || config.batch_size == 0 {
        return Err(Error::Contract(format!(
            "buffer capacity {} must be at least the batch size {}",
            config.buffer_capacity, config.batch_size
        )));
    }
    if config.target_sync == 0 || !(config.alpha > 0.0) {
        return Err(Error::Contract("target sync interval and alpha must be positive".into()));
    }
    let gamma = config.gamma.unwrap_or(domain.discount());
    let inputs = config.encoding.encode(domain);
    let m = domain.num_actions();
    let mut sizes = vec![inputs[0].len()];
    sizes.extend(&config.hidden);
    sizes.push(m);
    let mut net = QNetwork::new(Mlp::new(&sizes, rng));
    let mut buffer = ReplayBuffer::new(config.buffer_capacity);
    let starts = domain.non_terminal_states();
    let mut iteration = 0usize;

    if !starts.is_empty() {
        for episode in 0..config.episodes {
            let eps = config.epsilon.at(episode);
            let mut s = starts[rng.random_range(0..starts.len())];
            for _ in 0..config.max_steps {
                let a = if rng.random::<f64>() < eps {
                    rng.random_range(0..m)
                } else {
                    argmax_lowest(&net.online.forward(&inputs[s]))
                };
                let (next, reward) = domain.step(s, a, rng)?;
                let terminal = domain.is_terminal(next);
                buffer.push(Experience {
                    state: s,
                    action: a,
                    reward,
                    next,
                    terminal,
                });

                if buffer.len() >= config.batch_size {
                    let sample = buffer.sample(config.batch_size, rng);
                    let targets: Vec<f64> = sample
                        .iter()
                        .map(|e| net.td_target(e, &inputs[e.next], gamma))
                        .collect();
                    let batch: Vec<(&[f64], usize, f64)> = sample
                        .iter()
                        .zip(&targets)
                        .map(|(e, &y)| (inputs[e.state].as_slice(), e.action, y))
                        .collect();
                    let (loss, grads) = net.online.loss_and_gradient(&batch);
                    if !loss.is_finite() {
                        return Err(Error::NanLoss { iteration });
                    }
                    net.online.apply(&grads, config.alpha);
                    iteration += 1;
                    if iteration % config.target_sync == 0 {
                        net.sync();
                    }
                }

                s = next;
                if terminal {
                    break;
                }
            }
        }
    }

    let q = inputs.iter().map(|x| net.online.forward(x)).collect();
    let terminal = domain.states().iter().map(|s| s.terminal).collect();
    let hidden: Vec<serde_json::Value> = config.hidden.iter().map(|&h| h.into()).collect();
    let provenance = Provenance::new("dqn", seed)
        .with("hidden", hidden)
        .with("buffer_capacity", config.buffer_capacity)
        .with("batch_size", config.batch_size)
        .with("target_sync", config.target_sync)
        .with("alpha", config.alpha)
        .with("gamma", gamma)
        .with("epsilon_start", config.epsilon.start)
        .with("epsilon_end", config.epsilon.end)
        .with("epsilon_decay_episodes", config.epsilon.decay_episodes)
        .with("episodes", config.episodes)
        .with("max_steps", config.max_steps)
        .with("encoding", config.encoding.as_str())
        .with("tie_tolerance", config.tie_tolerance)
        .with("optimisation_steps", iteration);
    Ok(TrainedPolicy::from_q(domain.name(), q, terminal, gamma, config.tie_tolerance, provenance))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn exp(id: usize) -> Experience {
        Experience {
            state: id,
            action: 0,
            reward: id as f64,
            next: id,
            terminal: false,
        }
    }

    #[test]
    fn buffer_evicts_oldest_first() {
        let mut buf = ReplayBuffer::new(3);
        for i in 0..5 {
            buf.push(exp(i));
            assert!(buf.len() <= 3);
        }
        let order: Vec<usize> = buf.iter_oldest_first().map(|e| e.state).collect();
        assert_eq!(order, vec![2, 3, 4]);
    }

    #[test]
    fn terminal_target_is_reward() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = QNetwork::new(Mlp::new(&[2, 4, 3], &mut rng));
        let e = Experience {
            state: 0,
            action: 1,
            reward: -7.5,
            next: 1,
            terminal: true,
        };
        assert_eq!(net.td_target(&e, &[0.3, 0.9], 0.99), -7.5);
        let e = Experience { terminal: false, ..e };
        let best = net.target.forward(&[0.3, 0.9]).into_iter().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(net.td_target(&e, &[0.3, 0.9], 0.5), -7.5 + 0.5 * best);
    }

    #[test]
    fn target_only_moves_on_sync() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut net = QNetwork::new(Mlp::new(&[2, 4, 2], &mut rng));
        let before = net.target.clone();
        let x = [1.0, 0.5];
        let (_, g) = net.online.loss_and_gradient(&[(&x, 0, 3.0)]);
        net.online.apply(&g, 0.1);
        assert_eq!(net.target, before);
        assert_ne!(net.online, before);
        net.sync();
        assert_eq!(net.target, net.online);
        assert_eq!(net.syncs, 1);
    }

    #[test]
    fn buffer_smaller_than_batch_rejected() {
        let d = crate::domains::build_chain();
        let cfg = DqnConfig {
            buffer_capacity: 8,
            batch_size: 16,
            ..DqnConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(dqn_learn(&d, &cfg, None, &mut rng), Err(Error::Contract(_))));
    }

    #[test]
    fn output_dimension_is_action_count() {
        let d = crate::domains::build_taxi();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = DqnConfig {
            episodes: 2,
            max_steps: 40,
            ..DqnConfig::default()
        };
        let p = dqn_learn(&d, &cfg, Some(0), &mut rng).unwrap();
        assert_eq!(p.num_actions(), 6);
        assert_eq!(p.num_states(), 500);
    }
}
