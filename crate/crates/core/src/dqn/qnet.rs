//! Position-scoring Q-network: embedding, one same-length width-3 convolution
//! and a time-distributed `F→1` dense layer, giving one score per token.
//!
//! With no nonlinearity before the head, the raw score at position `t` is
//! `u₀[x_{t−1}] + u₁[x_t] + u₂[x_{t+1}]`, where `u_j[v] = Σ_f d_f·(W_{f,j}·emb_v)`.
//! Scores are computed from those three `V`-vectors; the layer-by-layer
//! evaluation is kept in [`QNetwork::raw_scores_layers`] as a reference.

use std::sync::{Arc, OnceLock};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::layers::{
    conv1d_forward, embedding_forward, softmax, softmax_backward, time_distributed_forward,
};
use crate::tensor::{Checkpoint, CheckpointMeta, ParamSet, Tensor};
use crate::TokenId;

pub const ARCHITECTURE: &str = "qnet-3-10";

/// Convolution width.
const WIDTH: usize = 3;

/// How per-position scores become Q-values.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadMode {
    /// Softmax across positions.
    #[default]
    Softmax,
    /// Raw scores.
    Linear,
}

impl HeadMode {
    pub fn as_str(self) -> &'static str {
        match self {
            HeadMode::Softmax => "softmax",
            HeadMode::Linear => "linear",
        }
    }
}

impl std::str::FromStr for HeadMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax" => Ok(HeadMode::Softmax),
            "linear" => Ok(HeadMode::Linear),
            other => Err(Error::config("agent.head", format!("unknown head mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct QNetwork {
    params: ParamSet,
    vocab_size: usize,
    embed_dim: usize,
    filters: usize,
    head: HeadMode,
    /// `u[j·V + v]`.
    tables: OnceLock<Arc<Vec<f64>>>,
}

impl QNetwork {
    /// Embedding uniform in ±0.05; convolution and dense uniform in ±1/√fan_in.
    pub fn new(vocab_size: usize, embed_dim: usize, filters: usize, head: HeadMode, seed: u64) -> Result<Self> {
        if vocab_size == 0 || embed_dim == 0 || filters == 0 {
            return Err(Error::config(
                "agent",
                format!("V={vocab_size}, E={embed_dim}, filters={filters} must all be positive"),
            ));
        }
        let mut r = rng::stream(seed, "qnet-init", 0);
        let mut uniform = |shape: &[usize], limit: f64| {
            let n = shape.iter().product();
            let data = (0..n).map(|_| r.gen_range(-limit..=limit)).collect();
            Tensor::from_vec(shape, data).expect("shape matches")
        };
        let mut params = ParamSet::new();
        params.insert("embedding", uniform(&[vocab_size, embed_dim], 0.05));
        params.insert("conv", uniform(&[filters, WIDTH, embed_dim], 1.0 / ((WIDTH * embed_dim) as f64).sqrt()));
        params.insert("dense", uniform(&[filters, 1], 1.0 / (filters as f64).sqrt()));
        Self::from_params(params, head)
    }

    pub fn from_params(params: ParamSet, head: HeadMode) -> Result<Self> {
        let shape = |name: &str| {
            params
                .get(name)
                .map(|p| p.value.shape().to_vec())
                .ok_or_else(|| Error::format("Q-network parameters", format!("missing `{name}`")))
        };
        let (emb, conv, dense) = (shape("embedding")?, shape("conv")?, shape("dense")?);
        let ok = emb.len() == 2
            && conv.len() == 3
            && conv[1] == WIDTH
            && conv[2] == emb[1]
            && dense == [conv[0], 1]
            && params.len() == 3;
        if !ok {
            return Err(Error::format(
                "Q-network parameters",
                format!("inconsistent shapes: embedding {emb:?}, conv {conv:?}, dense {dense:?}"),
            ));
        }
        Ok(QNetwork {
            params,
            vocab_size: emb[0],
            embed_dim: emb[1],
            filters: conv[0],
            head,
            tables: OnceLock::new(),
        })
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    /// Mutable access; cached score tables are dropped.
    pub fn params_mut(&mut self) -> &mut ParamSet {
        self.tables = OnceLock::new();
        &mut self.params
    }

    pub fn head(&self) -> HeadMode {
        self.head
    }

    pub fn with_head(mut self, head: HeadMode) -> Self {
        self.head = head;
        self
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Per-(tap, token) contributions to the raw score and the intermediate
    /// `c[(j·V + v)·F + f] = W[f,j,·]·emb[v]` they are built from.
    fn contributions(&self) -> (Vec<f64>, Vec<f64>) {
        let (v_n, e_n, f_n) = (self.vocab_size, self.embed_dim, self.filters);
        let emb = self.params.value("embedding").data();
        let w = self.params.value("conv").data();
        let d = self.params.value("dense").data();
        let mut c = vec![0.0; WIDTH * v_n * f_n];
        let mut u = vec![0.0; WIDTH * v_n];
        for j in 0..WIDTH {
            for v in 0..v_n {
                let ev = &emb[v * e_n..(v + 1) * e_n];
                let mut total = 0.0;
                for f in 0..f_n {
                    let wf = &w[(f * WIDTH + j) * e_n..(f * WIDTH + j + 1) * e_n];
                    let cf: f64 = wf.iter().zip(ev).map(|(a, b)| a * b).sum();
                    c[(j * v_n + v) * f_n + f] = cf;
                    total += d[f] * cf;
                }
                u[j * v_n + v] = total;
            }
        }
        (u, c)
    }

    fn tables(&self) -> Arc<Vec<f64>> {
        self.tables
            .get_or_init(|| Arc::new(self.contributions().0))
            .clone()
    }

    fn check_tokens(&self, tokens: &[TokenId]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::Input("Q-values of an empty sequence".into()));
        }
        if let Some((t, id)) = tokens.iter().enumerate().find(|(_, &id)| id as usize >= self.vocab_size) {
            return Err(Error::Input(format!(
                "token id {id} at position {t} is outside vocabulary of size {}",
                self.vocab_size
            )));
        }
        Ok(())
    }

    fn raw_at(u: &[f64], v_n: usize, tokens: &[TokenId], t: usize) -> f64 {
        let mut s = u[v_n + tokens[t] as usize];
        if t > 0 {
            s += u[tokens[t - 1] as usize];
        }
        if t + 1 < tokens.len() {
            s += u[2 * v_n + tokens[t + 1] as usize];
        }
        s
    }

    /// Pre-head score per token position.
    pub fn raw_scores(&self, tokens: &[TokenId]) -> Result<Vec<f64>> {
        self.check_tokens(tokens)?;
        let u = self.tables();
        Ok((0..tokens.len()).map(|t| Self::raw_at(&u, self.vocab_size, tokens, t)).collect())
    }

    /// [`QNetwork::raw_scores`] through the generic layer kernels.
    pub fn raw_scores_layers(&self, tokens: &[TokenId]) -> Result<Vec<f64>> {
        self.check_tokens(tokens)?;
        let x = embedding_forward(tokens, self.params.value("embedding"))?;
        let h = conv1d_forward(&x, self.params.value("conv"))?;
        Ok(time_distributed_forward(&h, self.params.value("dense"))?.into_data())
    }

    /// Head output per token position (length `N`).
    pub fn position_values(&self, tokens: &[TokenId]) -> Result<Vec<f64>> {
        let raw = self.raw_scores(tokens)?;
        Ok(match self.head {
            HeadMode::Linear => raw,
            HeadMode::Softmax => softmax(&raw),
        })
    }

    /// One Q-value per insertion slot (length `N+1`); the append slot reuses
    /// position `N−1`, and masked slots are `−∞`.
    pub fn q_values(&self, tokens: &[TokenId], mask: &[bool]) -> Result<Vec<f64>> {
        if mask.len() != tokens.len() + 1 {
            return Err(Error::Input(format!(
                "mask length {} for {} tokens",
                mask.len(),
                tokens.len()
            )));
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::Contract("every insertion slot is masked".into()));
        }
        let mut q = self.position_values(tokens)?;
        q.push(q[tokens.len() - 1]);
        for (v, &m) in q.iter_mut().zip(mask) {
            if !m {
                *v = f64::NEG_INFINITY;
            }
        }
        Ok(q)
    }

    /// Q-value of a single slot (unmasked).
    pub fn q_value(&self, tokens: &[TokenId], slot: usize) -> Result<f64> {
        if slot > tokens.len() {
            return Err(Error::Input(format!("slot {slot} beyond {} tokens", tokens.len())));
        }
        let t = slot.min(tokens.len() - 1);
        match self.head {
            HeadMode::Linear => {
                self.check_tokens(tokens)?;
                Ok(Self::raw_at(&self.tables(), self.vocab_size, tokens, t))
            }
            HeadMode::Softmax => Ok(self.position_values(tokens)?[t]),
        }
    }

    /// Adds `Σ_t upstream[t]·∂head_t/∂θ` to the parameter gradients, where
    /// `head_t` are the [`QNetwork::position_values`].
    pub fn accumulate_gradient(&mut self, tokens: &[TokenId], upstream: &[f64]) -> Result<()> {
        let mut g_u = vec![0.0; WIDTH * self.vocab_size];
        self.scatter_upstream(tokens, upstream, &mut g_u)?;
        self.apply_table_gradient(&g_u);
        Ok(())
    }

    /// Gradient of `scale·Q(tokens, slot)`; cheaper than the dense form.
    pub fn accumulate_slot_gradient(&mut self, tokens: &[TokenId], slot: usize, scale: f64) -> Result<()> {
        let mut g_u = vec![0.0; WIDTH * self.vocab_size];
        self.scatter_slot(tokens, slot, scale, &mut g_u)?;
        self.apply_table_gradient(&g_u);
        Ok(())
    }

    /// Batched form of [`QNetwork::accumulate_slot_gradient`].
    pub fn accumulate_slot_gradients(&mut self, items: &[(&[TokenId], usize, f64)]) -> Result<()> {
        let mut g_u = vec![0.0; WIDTH * self.vocab_size];
        for &(tokens, slot, scale) in items {
            self.scatter_slot(tokens, slot, scale, &mut g_u)?;
        }
        self.apply_table_gradient(&g_u);
        Ok(())
    }

    fn scatter_slot(&self, tokens: &[TokenId], slot: usize, scale: f64, g_u: &mut [f64]) -> Result<()> {
        self.check_tokens(tokens)?;
        if slot > tokens.len() {
            return Err(Error::Input(format!("slot {slot} beyond {} tokens", tokens.len())));
        }
        let t = slot.min(tokens.len() - 1);
        match self.head {
            HeadMode::Linear => {
                Self::scatter_raw(self.vocab_size, tokens, t, scale, g_u);
                Ok(())
            }
            HeadMode::Softmax => {
                let mut up = vec![0.0; tokens.len()];
                up[t] = scale;
                self.scatter_upstream(tokens, &up, g_u)
            }
        }
    }

    fn scatter_raw(v_n: usize, tokens: &[TokenId], t: usize, g: f64, g_u: &mut [f64]) {
        g_u[v_n + tokens[t] as usize] += g;
        if t > 0 {
            g_u[tokens[t - 1] as usize] += g;
        }
        if t + 1 < tokens.len() {
            g_u[2 * v_n + tokens[t + 1] as usize] += g;
        }
    }

    fn scatter_upstream(&self, tokens: &[TokenId], upstream: &[f64], g_u: &mut [f64]) -> Result<()> {
        if upstream.len() != tokens.len() {
            return Err(Error::Input(format!(
                "upstream length {} for {} tokens",
                upstream.len(),
                tokens.len()
            )));
        }
        let g_raw = match self.head {
            HeadMode::Linear => upstream.to_vec(),
            HeadMode::Softmax => softmax_backward(&softmax(&self.raw_scores(tokens)?), upstream),
        };
        for (t, &g) in g_raw.iter().enumerate() {
            if g != 0.0 {
                Self::scatter_raw(self.vocab_size, tokens, t, g, g_u);
            }
        }
        Ok(())
    }

    /// Chains `∂L/∂u` back to embedding, convolution and dense weights.
    fn apply_table_gradient(&mut self, g_u: &[f64]) {
        let (v_n, e_n, f_n) = (self.vocab_size, self.embed_dim, self.filters);
        let (_, c) = self.contributions();
        let emb = self.params.value("embedding").data().to_vec();
        let w = self.params.value("conv").data().to_vec();
        let d = self.params.value("dense").data().to_vec();
        // M_j[e] = Σ_f d_f W[f,j,e]
        let mut m = vec![0.0; WIDTH * e_n];
        for j in 0..WIDTH {
            for f in 0..f_n {
                for e in 0..e_n {
                    m[j * e_n + e] += d[f] * w[(f * WIDTH + j) * e_n + e];
                }
            }
        }
        let mut g_d = vec![0.0; f_n];
        let mut g_w = vec![0.0; w.len()];
        let mut g_emb = vec![0.0; emb.len()];
        for j in 0..WIDTH {
            // s_j[e] = Σ_v g_u[j,v]·emb[v,e]
            let mut s = vec![0.0; e_n];
            for v in 0..v_n {
                let g = g_u[j * v_n + v];
                if g == 0.0 {
                    continue;
                }
                for e in 0..e_n {
                    s[e] += g * emb[v * e_n + e];
                    g_emb[v * e_n + e] += g * m[j * e_n + e];
                }
                for f in 0..f_n {
                    g_d[f] += g * c[(j * v_n + v) * f_n + f];
                }
            }
            for f in 0..f_n {
                for e in 0..e_n {
                    g_w[(f * WIDTH + j) * e_n + e] += d[f] * s[e];
                }
            }
        }
        for (name, g) in [("embedding", g_emb), ("conv", g_w), ("dense", g_d)] {
            for (a, b) in self.params.grad_mut(name).data_mut().iter_mut().zip(&g) {
                *a += b;
            }
        }
    }

    pub fn to_checkpoint(&self, seed: u64) -> Checkpoint {
        Checkpoint::from_params(
            &self.params,
            CheckpointMeta::new(self.vocab_size, self.embed_dim, ARCHITECTURE, seed)
                .with_extra("head", self.head.as_str()),
        )
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_architecture(ARCHITECTURE)?;
        let head = match ckpt.metadata.extra.get("head") {
            Some(h) => h.parse()?,
            None => HeadMode::default(),
        };
        Self::from_params(ckpt.to_params()?, head)
    }
}
