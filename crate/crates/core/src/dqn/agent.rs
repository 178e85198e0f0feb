//! Double-DQN learner: ε-greedy acting, uniform replay, Double-Q targets
//! and Polyak-averaged target weights.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Sample;
use crate::dqn::qnet::{HeadMode, QNetwork};
use crate::dqn::replay::{ReplayBuffer, Transition};
use crate::dqn::schedule::EpsilonSchedule;
use crate::env::{EpisodeTrace, EvasionEnv, Reset};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::layers::argmax;
use crate::tensor::{Adam, AdamConfig, ParamSet};
use crate::TokenId;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentConfig {
    pub episodes: usize,
    pub max_turn: usize,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    /// Transitions collected before the first update.
    pub warmup: usize,
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_final: f64,
    pub tau: f64,
    pub filters: usize,
    pub embed_dim: usize,
    pub head: HeadMode,
    pub adam: AdamConfig,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            episodes: 1000,
            max_turn: crate::env::MAX_TURN,
            buffer_capacity: 2000,
            batch_size: 32,
            warmup: 100,
            gamma: 0.99997,
            epsilon_start: 1.0,
            epsilon_final: 0.5,
            tau: 0.01,
            filters: 10,
            embed_dim: 4,
            head: HeadMode::Softmax,
            adam: AdamConfig::default(),
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("agent.max_turn", self.max_turn),
            ("agent.buffer_capacity", self.buffer_capacity),
            ("agent.batch_size", self.batch_size),
            ("agent.filters", self.filters),
            ("agent.embed_dim", self.embed_dim),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        let unit = [
            ("agent.gamma", self.gamma),
            ("agent.epsilon_start", self.epsilon_start),
            ("agent.epsilon_final", self.epsilon_final),
            ("agent.tau", self.tau),
        ];
        for (field, v) in unit {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(field, format!("{v} outside [0, 1]")));
            }
        }
        if self.epsilon_final > self.epsilon_start {
            return Err(Error::config("agent.epsilon_final", "must not exceed epsilon_start"));
        }
        Ok(())
    }

    pub fn schedule(&self) -> EpsilonSchedule {
        EpsilonSchedule::for_budget(self.epsilon_start, self.epsilon_final, self.episodes, self.max_turn)
    }
}

/// ε-greedy choice over the valid slots: a uniform valid slot with
/// probability `epsilon`, otherwise the masked argmax (smallest index on ties).
pub fn select_action<R: Rng + ?Sized>(
    net: &QNetwork,
    tokens: &[TokenId],
    mask: &[bool],
    epsilon: f64,
    rng: &mut R,
) -> Result<usize> {
    if rng.gen::<f64>() < epsilon {
        return uniform_valid(mask, rng);
    }
    Ok(argmax(&net.q_values(tokens, mask)?))
}

pub(crate) fn uniform_valid<R: Rng + ?Sized>(mask: &[bool], rng: &mut R) -> Result<usize> {
    let valid = mask.iter().filter(|&&m| m).count();
    if valid == 0 {
        return Err(Error::Contract("every insertion slot is masked".into()));
    }
    let k = rng.gen_range(0..valid);
    Ok(mask
        .iter()
        .enumerate()
        .filter(|(_, &m)| m)
        .nth(k)
        .map(|(i, _)| i)
        .expect("k < valid"))
}

/// `r` for terminal transitions, else `r + γ·Q_target(s', argmax_a Q_primary(s', a))`.
pub fn double_q_target(primary: &QNetwork, target: &QNetwork, t: &Transition, gamma: f64) -> Result<f64> {
    if t.done {
        return Ok(t.reward);
    }
    let best = argmax(&primary.q_values(&t.next_tokens, &t.next_mask)?);
    Ok(t.reward + gamma * target.q_value(&t.next_tokens, best)?)
}

/// `θ' ← τθ + (1−τ)θ'`.
pub fn polyak_update(target: &mut ParamSet, primary: &ParamSet, tau: f64) -> Result<()> {
    if !target.is_congruent(primary) {
        return Err(Error::Contract("Polyak update between differently shaped networks".into()));
    }
    for ((_, t), (_, p)) in target.iter_mut().zip(primary.iter()) {
        for (a, b) in t.value.data_mut().iter_mut().zip(p.value.data()) {
            *a = tau * b + (1.0 - tau) * *a;
        }
    }
    Ok(())
}

/// Primary and target networks with their optimiser and replay memory.
#[derive(Clone, Debug)]
pub struct DoubleDqn {
    primary: QNetwork,
    target: QNetwork,
    adam: Adam,
    buffer: ReplayBuffer,
    gamma: f64,
    tau: f64,
    batch_size: usize,
    warmup: usize,
}

impl DoubleDqn {
    pub fn new(primary: QNetwork, config: &AgentConfig) -> Result<Self> {
        config.validate()?;
        Ok(DoubleDqn {
            target: primary.clone(),
            primary,
            adam: Adam::new(config.adam),
            buffer: ReplayBuffer::new(config.buffer_capacity)?,
            gamma: config.gamma,
            tau: config.tau,
            batch_size: config.batch_size,
            warmup: config.warmup,
        })
    }

    pub fn primary(&self) -> &QNetwork {
        &self.primary
    }

    pub fn target(&self) -> &QNetwork {
        &self.target
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn into_primary(self) -> QNetwork {
        self.primary
    }

    pub fn observe(&mut self, t: Transition) {
        self.buffer.push(t);
    }

    /// One minibatch update once the warmup is over; returns the batch loss.
    pub fn update<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Option<f64>> {
        if self.buffer.len() < self.warmup.max(1) {
            return Ok(None);
        }
        let batch: Vec<Transition> = self.buffer.sample(self.batch_size, rng).into_iter().cloned().collect();
        self.train_on(&batch).map(Some)
    }

    /// Mean squared TD error on `batch` before the step.
    pub fn batch_loss(&self, batch: &[Transition]) -> Result<f64> {
        let mut total = 0.0;
        for t in batch {
            let y = double_q_target(&self.primary, &self.target, t, self.gamma)?;
            let q = self.primary.q_value(&t.tokens, t.action)?;
            total += (y - q) * (y - q);
        }
        Ok(total / batch.len() as f64)
    }

    /// One optimiser step on `mean (y − Q(s,a))²` followed by a Polyak update.
    pub fn train_on(&mut self, batch: &[Transition]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Input("empty minibatch".into()));
        }
        let n = batch.len() as f64;
        let mut loss = 0.0;
        let mut items = Vec::with_capacity(batch.len());
        for t in batch {
            let y = double_q_target(&self.primary, &self.target, t, self.gamma)?;
            let q = self.primary.q_value(&t.tokens, t.action)?;
            loss += (y - q) * (y - q) / n;
            items.push((&t.tokens[..], t.action, -2.0 * (y - q) / n));
        }
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("non-finite TD loss {loss}")));
        }
        let params = self.primary.params_mut();
        params.zero_grad();
        self.primary.accumulate_slot_gradients(&items)?;
        self.adam.step(self.primary.params_mut())?;
        polyak_update(self.target.params_mut(), self.primary.params(), self.tau)?;
        Ok(loss)
    }
}

/// One line of the agent training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: usize,
    pub sample_id: String,
    pub steps: usize,
    #[serde(rename = "return")]
    pub episode_return: f64,
    pub evaded: bool,
    /// Exploration rate at the episode's last step.
    pub epsilon: f64,
}

#[derive(Clone, Debug)]
pub struct TrainedAgent {
    pub network: QNetwork,
    pub log: Vec<EpisodeLog>,
    /// Pool samples the classifier already misclassifies; never trained on.
    pub trivial: Vec<String>,
}

/// Trains a fresh Q-network on the samples of `pool`, drawn round-robin.
pub fn train_agent(env: &EvasionEnv, pool: &[&Sample], config: &AgentConfig, seed: u64) -> Result<TrainedAgent> {
    config.validate()?;
    let mut eligible = Vec::new();
    let mut trivial = Vec::new();
    for s in pool {
        match env.reset(s) {
            Ok(Reset::Ready(state)) => eligible.push(state),
            Ok(Reset::Trivial { .. }) => trivial.push(s.id.clone()),
            Err(Error::SampleExcluded(id)) => log::warn!("sample `{id}` has no valid insertion point"),
            Err(e) => return Err(e),
        }
    }
    if eligible.is_empty() {
        return Err(Error::Input("no sample in the agent pool can be attacked".into()));
    }
    let ids: Vec<&str> = pool
        .iter()
        .filter(|s| !trivial.contains(&s.id) && !s.is_excluded())
        .map(|s| s.id.as_str())
        .collect();
    let net = QNetwork::new(env.classifier().vocab_size(), config.embed_dim, config.filters, config.head, seed)?;
    let mut dqn = DoubleDqn::new(net, config)?;
    let schedule = config.schedule();
    let mut explore = rng::stream(seed, "agent-explore", 0);
    let mut replay = rng::stream(seed, "agent-replay", 0);
    let mut global_step = 0u64;
    let mut log = Vec::with_capacity(config.episodes);
    for episode in 0..config.episodes {
        let k = episode % eligible.len();
        let mut state = eligible[k].clone();
        let mut total = 0.0;
        let mut steps = 0;
        let (evaded, epsilon) = loop {
            let epsilon = schedule.value(global_step);
            let action = select_action(dqn.primary(), &state.tokens, &state.insert_mask, epsilon, &mut explore)?;
            let out = env.step(&state, action)?;
            dqn.observe(Transition {
                tokens: state.tokens.clone(),
                mask: state.insert_mask.clone(),
                action,
                reward: out.reward,
                next_tokens: out.state.tokens.clone(),
                next_mask: out.state.insert_mask.clone(),
                done: out.done,
            });
            global_step += 1;
            steps += 1;
            total += out.reward;
            dqn.update(&mut replay)
                .map_err(|e| Error::Numeric(format!("episode {}, step {steps}: {e}", episode + 1)))?;
            state = out.state;
            if out.done {
                break (state.evaded, epsilon);
            }
        };
        log.push(EpisodeLog {
            episode: episode + 1,
            sample_id: ids[k].to_string(),
            steps,
            episode_return: total,
            evaded,
            epsilon,
        });
    }
    Ok(TrainedAgent {
        network: dqn.into_primary(),
        log,
        trivial,
    })
}

/// Greedy (ε = 0) episode with a trained network.
pub fn greedy_episode(env: &EvasionEnv, net: &QNetwork, sample: &Sample) -> Result<EpisodeTrace> {
    env.run_episode(sample, |s| Ok(argmax(&net.q_values(&s.tokens, &s.insert_mask)?)))
}

/// Fraction of evaded episodes in the last `window` log lines.
pub fn trailing_evasion_rate(log: &[EpisodeLog], window: usize) -> f64 {
    let tail = &log[log.len().saturating_sub(window)..];
    if tail.is_empty() {
        return 0.0;
    }
    tail.iter().filter(|l| l.evaded).count() as f64 / tail.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use std::sync::Arc;

    fn tiny_net(head: HeadMode) -> QNetwork {
        QNetwork::new(6, 4, 10, head, 9).unwrap()
    }

    fn transition(tokens: Vec<TokenId>, action: usize, reward: f64, next: Vec<TokenId>, done: bool) -> Transition {
        let m = vec![true; tokens.len() + 1];
        let nm = vec![true; next.len() + 1];
        Transition {
            tokens: tokens.into(),
            mask: m.into(),
            action,
            reward,
            next_tokens: next.into(),
            next_mask: nm.into(),
            done,
        }
    }

    #[test]
    fn terminal_and_zero_gamma_targets() {
        let net = tiny_net(HeadMode::Linear);
        let t = transition(vec![2, 3], 0, 1.6, vec![1, 2, 3], true);
        assert_eq!(double_q_target(&net, &net, &t, 0.99997).unwrap(), 1.6);
        let t = transition(vec![2, 3], 0, 0.3, vec![1, 2, 3], false);
        assert_eq!(double_q_target(&net, &net, &t, 0.0).unwrap(), 0.3);
    }

    /// Network whose raw score at a position depends only on the token there:
    /// `u₁[v] = values[v]`, `u₀ = u₂ = 0`.
    fn table_net(values: &[f64]) -> QNetwork {
        let v = values.len();
        let mut ps = ParamSet::new();
        let mut emb = vec![0.0; v * 4];
        for (i, &x) in values.iter().enumerate() {
            emb[i * 4] = x;
        }
        ps.insert("embedding", Tensor::from_vec(&[v, 4], emb).unwrap());
        let mut conv = vec![0.0; 3 * 4];
        conv[4] = 1.0; // filter 0, tap 1, channel 0
        ps.insert("conv", Tensor::from_vec(&[1, 3, 4], conv).unwrap());
        ps.insert("dense", Tensor::from_vec(&[1, 1], vec![1.0]).unwrap());
        QNetwork::from_params(ps, HeadMode::Linear).unwrap()
    }

    #[test]
    fn double_q_uses_primary_to_pick_and_target_to_value() {
        // primary prefers token 3 (slot 1); target values it at 0.5
        let primary = table_net(&[0.0, 0.0, 0.1, 0.9]);
        let target = table_net(&[0.0, 0.0, 2.0, 0.5]);
        let t = transition(vec![2], 0, 0.1, vec![2, 3], false);
        let y = double_q_target(&primary, &target, &t, 0.99997).unwrap();
        assert!((y - 0.599985).abs() < 1e-12, "{y}");
    }

    #[test]
    fn polyak_identities() {
        let a = tiny_net(HeadMode::Linear);
        let b = QNetwork::new(6, 4, 10, HeadMode::Linear, 10).unwrap();
        let mut t = b.params().clone();
        polyak_update(&mut t, a.params(), 0.0).unwrap();
        assert_eq!(t.flat_values(), b.params().flat_values());
        polyak_update(&mut t, a.params(), 1.0).unwrap();
        assert_eq!(t.flat_values(), a.params().flat_values());

        let mut zero = ParamSet::new();
        zero.insert("w", Tensor::vector(vec![0.0]));
        let mut one = ParamSet::new();
        one.insert("w", Tensor::vector(vec![1.0]));
        polyak_update(&mut zero, &one, 0.01).unwrap();
        assert!((zero.flat_values()[0] - 0.01).abs() < 1e-15);
        let other = QNetwork::new(7, 4, 10, HeadMode::Linear, 0).unwrap();
        assert!(polyak_update(&mut t, other.params(), 0.5).is_err());
    }

    #[test]
    fn polyak_shrinks_gap_by_one_minus_tau() {
        let a = tiny_net(HeadMode::Linear);
        let mut t = QNetwork::new(6, 4, 10, HeadMode::Linear, 11).unwrap().params().clone();
        let gap = |t: &ParamSet| -> Vec<f64> {
            t.flat_values().iter().zip(a.params().flat_values()).map(|(x, y)| (x - y).abs()).collect()
        };
        let before = gap(&t);
        polyak_update(&mut t, a.params(), 0.01).unwrap();
        for (g1, g0) in gap(&t).iter().zip(&before) {
            assert!((g1 - 0.99 * g0).abs() < 1e-12);
        }
    }

    #[test]
    fn greedy_and_masked_selection() {
        let net = table_net(&[0.0, 0.0, 0.1, 0.9]);
        let toks: Arc<[TokenId]> = vec![2, 3, 2].into();
        let mut r = rng::stream(1, "sel", 0);
        assert_eq!(select_action(&net, &toks, &[true; 4], 0.0, &mut r).unwrap(), 1);
        let mask = [true, false, true, true];
        for _ in 0..2000 {
            let a = select_action(&net, &toks, &mask, 0.5, &mut r).unwrap();
            assert_ne!(a, 1);
        }
    }

    #[test]
    fn repeated_step_on_frozen_batch_descends() {
        for head in [HeadMode::Linear, HeadMode::Softmax] {
            let cfg = AgentConfig {
                head,
                tau: 0.0,
                ..AgentConfig::default()
            };
            let mut dqn = DoubleDqn::new(tiny_net(head), &cfg).unwrap();
            let batch = vec![
                transition(vec![2, 3, 4], 1, 0.7, vec![2, 1, 3, 4], false),
                transition(vec![5, 3], 2, 0.2, vec![5, 3, 1], true),
            ];
            let before = dqn.batch_loss(&batch).unwrap();
            for _ in 0..50 {
                dqn.train_on(&batch).unwrap();
            }
            let after = dqn.batch_loss(&batch).unwrap();
            assert!(after < before, "{head:?}: {before} -> {after}");
        }
    }

    #[test]
    fn config_validation_names_fields() {
        let bad = AgentConfig {
            tau: 1.5,
            ..AgentConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config { ref field, .. }) if field == "agent.tau"));
    }
}
