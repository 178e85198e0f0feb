//! Adversarial NOP insertion against a mnemonic-sequence malware classifier.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: a small f64 tensor engine with hand-written forward/backward
//!   passes for the handful of layers both networks use, Adam, a
//!   finite-difference gradient checker and the JSON checkpoint format.
//! - [`corpus`]: IDA listing parser, mnemonic vocabulary, insertion masks,
//!   the synthetic family generator and stratified splits.
//! - [`classifier`]: the shallow multi-width CNN under attack.
//! - [`env`]: the evasion MDP (one sample per episode, NOP insertion actions,
//!   loss-delta rewards).
//! - [`dqn`]: the position-scoring Q-network, replay buffer, epsilon schedule,
//!   Double-DQN learner and the random baseline.
//! - [`harness`]: experiment configuration, the end-to-end pipeline steps and
//!   per-family reporting.

pub mod classifier;
pub mod corpus;
pub mod dqn;
pub mod env;
pub mod error;
pub mod harness;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};

/// Index of a mnemonic in a [`corpus::MnemonicVocab`].
pub type TokenId = u32;
