//! The evasion MDP: one sample per episode, actions insert a NOP before a
//! token (or append), the reward is the change in classifier loss and the
//! episode ends on misclassification or after `max_turn` insertions.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::classifier::Classifier;
use crate::corpus::{Sample, NOP_ID};
use crate::error::{Error, Result};
use crate::tensor::layers::{argmax, cross_entropy};
use crate::TokenId;

pub const MAX_TURN: usize = 50;

/// Immutable episode state; stepping returns a fresh one, so states held in
/// replay transitions stay valid.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvState {
    pub tokens: Arc<[TokenId]>,
    pub insert_mask: Arc<[bool]>,
    pub true_family: usize,
    pub step_count: usize,
    /// Classifier loss of `tokens` against `true_family`.
    pub last_loss: f64,
    /// The classifier no longer predicts `true_family`.
    pub evaded: bool,
}

impl EnvState {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DoneReason {
    Evaded,
    MaxTurn,
    /// Already misclassified before any insertion.
    Trivial,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub state: EnvState,
    pub reward: f64,
    pub done: bool,
    pub done_reason: Option<DoneReason>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Reset {
    Ready(EnvState),
    /// Nothing to attack; recorded as evaded with zero insertions.
    Trivial { loss: f64 },
}

/// Environment bound to a frozen classifier; holds no per-episode data.
#[derive(Clone, Copy, Debug)]
pub struct EvasionEnv<'a> {
    classifier: &'a Classifier,
    max_turn: usize,
}

impl<'a> EvasionEnv<'a> {
    pub fn new(classifier: &'a Classifier, max_turn: usize) -> Result<Self> {
        if max_turn == 0 {
            return Err(Error::config("agent.max_turn", "must be positive"));
        }
        Ok(EvasionEnv {
            classifier,
            max_turn,
        })
    }

    pub fn classifier(&self) -> &Classifier {
        self.classifier
    }

    pub fn max_turn(&self) -> usize {
        self.max_turn
    }

    fn judge(&self, tokens: &[TokenId], family: usize) -> Result<(f64, bool)> {
        let probs = self.classifier.classify(tokens)?;
        Ok((cross_entropy(&probs, family)?, argmax(&probs) != family))
    }

    pub fn reset(&self, sample: &Sample) -> Result<Reset> {
        if sample.is_excluded() {
            return Err(Error::SampleExcluded(sample.id.clone()));
        }
        let (loss, evaded) = self.judge(&sample.tokens, sample.family)?;
        if evaded {
            return Ok(Reset::Trivial { loss });
        }
        Ok(Reset::Ready(EnvState {
            tokens: sample.tokens.as_slice().into(),
            insert_mask: sample.insert_mask.as_slice().into(),
            true_family: sample.family,
            step_count: 0,
            last_loss: loss,
            evaded: false,
        }))
    }

    pub fn is_done(&self, state: &EnvState) -> bool {
        state.evaded || state.step_count >= self.max_turn
    }

    /// Inserts a NOP before token `action` (`action == len` appends).
    pub fn step(&self, state: &EnvState, action: usize) -> Result<StepOutcome> {
        if self.is_done(state) {
            return Err(Error::Contract("step on a finished episode".into()));
        }
        if !state.insert_mask.get(action).copied().unwrap_or(false) {
            return Err(Error::Contract(format!(
                "action {action} is not a valid insertion point (sequence length {})",
                state.len()
            )));
        }
        let (tokens, insert_mask) = insert_nop(&state.tokens, &state.insert_mask, action);
        let (loss, evaded) = self.judge(&tokens, state.true_family)?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss after step {}", state.step_count + 1)));
        }
        let next = EnvState {
            tokens: tokens.into(),
            insert_mask: insert_mask.into(),
            true_family: state.true_family,
            step_count: state.step_count + 1,
            last_loss: loss,
            evaded,
        };
        let done_reason = if evaded {
            Some(DoneReason::Evaded)
        } else if next.step_count >= self.max_turn {
            Some(DoneReason::MaxTurn)
        } else {
            None
        };
        Ok(StepOutcome {
            reward: loss - state.last_loss,
            done: done_reason.is_some(),
            done_reason,
            state: next,
        })
    }

    /// Plays one episode, asking `policy` for each action.
    pub fn run_episode<P>(&self, sample: &Sample, mut policy: P) -> Result<EpisodeTrace>
    where
        P: FnMut(&EnvState) -> Result<usize>,
    {
        let mut trace = EpisodeTrace {
            sample_id: sample.id.clone(),
            family: sample.family,
            actions: Vec::new(),
            rewards: Vec::new(),
            done_reason: DoneReason::Trivial,
            insertions: 0,
            initial_loss: 0.0,
            final_loss: 0.0,
        };
        let mut state = match self.reset(sample)? {
            Reset::Trivial { loss } => {
                trace.initial_loss = loss;
                trace.final_loss = loss;
                return Ok(trace);
            }
            Reset::Ready(s) => s,
        };
        trace.initial_loss = state.last_loss;
        loop {
            let action = policy(&state)?;
            let out = self.step(&state, action)?;
            trace.actions.push(action);
            trace.rewards.push(out.reward);
            state = out.state;
            if let Some(reason) = out.done_reason {
                trace.done_reason = reason;
                break;
            }
        }
        trace.insertions = trace.actions.len();
        trace.final_loss = state.last_loss;
        Ok(trace)
    }
}

/// Token sequence and mask after inserting a NOP at `action`. The two
/// boundaries around the new NOP are both valid; every other entry keeps its
/// old value.
pub fn insert_nop(tokens: &[TokenId], mask: &[bool], action: usize) -> (Vec<TokenId>, Vec<bool>) {
    let mut t = Vec::with_capacity(tokens.len() + 1);
    t.extend_from_slice(&tokens[..action]);
    t.push(NOP_ID);
    t.extend_from_slice(&tokens[action..]);
    let mut m = Vec::with_capacity(mask.len() + 1);
    m.extend_from_slice(&mask[..=action]);
    m.push(true);
    m.extend_from_slice(&mask[action + 1..]);
    (t, m)
}

/// One attack episode, serialised as a JSON line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub sample_id: String,
    pub family: usize,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub done_reason: DoneReason,
    pub insertions: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
}

impl EpisodeTrace {
    pub fn evaded(&self) -> bool {
        matches!(self.done_reason, DoneReason::Evaded | DoneReason::Trivial)
    }
}

/// Undiscounted sum of rewards.
pub fn episode_return(trace: &EpisodeTrace) -> f64 {
    trace.rewards.iter().sum()
}

/// `Σ_k γ^k r_k`.
pub fn discounted_return(rewards: &[f64], gamma: f64) -> f64 {
    rewards.iter().rev().fold(0.0, |acc, r| r + gamma * acc)
}
