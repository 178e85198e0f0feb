//! The target model: embedding, three parallel same-length convolutions of
//! widths 3/5/7, global max pooling, concatenation, a dense layer and softmax.
//!
//! Everything up to the max pool is linear in the embedding rows, so each
//! convolution output is a sum of per-(tap, token) vectors. [`Classifier`]
//! precomputes those lookup tables once per parameter state and evaluates a
//! sequence with additions only; [`Classifier::classify_layers`] is the
//! plain layer-by-layer composition, kept as the reference the fast path is
//! tested against.

use std::sync::{Arc, OnceLock};

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Sample, Split};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::layers::{
    argmax, conv1d_forward, cross_entropy, dense_forward, embedding_forward, global_max_pool,
    softmax, softmax_cross_entropy_backward,
};
use crate::tensor::{Adam, AdamConfig, Checkpoint, CheckpointMeta, ParamSet, Tensor};
use crate::TokenId;

pub const ARCHITECTURE: &str = "cnn-3-5-7-100";

/// Shorter inputs are padded with all-zero embedding rows up to this length so
/// the widest filter fits.
pub const MIN_LEN: usize = 7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub embed_dim: usize,
    pub widths: Vec<usize>,
    pub filters: usize,
    pub adam: AdamConfig,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            epochs: 15,
            embed_dim: 4,
            widths: vec![3, 5, 7],
            filters: 100,
            adam: AdamConfig::default(),
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 {
            return Err(Error::config("classifier.embed_dim", "must be positive"));
        }
        if self.filters == 0 {
            return Err(Error::config("classifier.filters", "must be positive"));
        }
        if self.widths.is_empty() {
            return Err(Error::config("classifier.widths", "at least one width"));
        }
        if let Some(h) = self.widths.iter().find(|&&h| h % 2 == 0 || h > MIN_LEN) {
            return Err(Error::config(
                "classifier.widths",
                format!("width {h} must be odd and at most {MIN_LEN}"),
            ));
        }
        Ok(())
    }
}

fn conv_name(h: usize) -> String {
    format!("conv{h}")
}

/// Per-width `h×V×F` tables: `table[(j·V + v)·F + f] = Σ_e W[f,j,e]·emb[v,e]`.
#[derive(Debug)]
struct Tables {
    per_width: Vec<Vec<f64>>,
}

/// Intermediate values of one forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    /// Concatenated pooled features, width-major.
    pub features: Vec<f64>,
    /// Winning time index per pooled feature.
    pub argmax: Vec<usize>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Classifier {
    params: ParamSet,
    vocab_size: usize,
    embed_dim: usize,
    widths: Vec<usize>,
    filters: usize,
    classes: usize,
    tables: OnceLock<Arc<Tables>>,
}

impl Classifier {
    /// Randomly initialised model: embedding uniform in ±0.05, convolution and
    /// dense weights uniform in ±1/√fan_in.
    pub fn new(vocab_size: usize, classes: usize, config: &ClassifierConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        if vocab_size == 0 || classes < 2 {
            return Err(Error::config("classifier", format!("V={vocab_size}, classes={classes}")));
        }
        let mut r = rng::stream(seed, "classifier-init", 0);
        let mut uniform = |shape: &[usize], limit: f64| {
            let n = shape.iter().product();
            let data = (0..n).map(|_| r.gen_range(-limit..=limit)).collect();
            Tensor::from_vec(shape, data).expect("shape matches")
        };
        let e = config.embed_dim;
        let f = config.filters;
        let mut params = ParamSet::new();
        params.insert("embedding", uniform(&[vocab_size, e], 0.05));
        for &h in &config.widths {
            params.insert(conv_name(h), uniform(&[f, h, e], 1.0 / ((h * e) as f64).sqrt()));
        }
        let d = f * config.widths.len();
        params.insert("dense", uniform(&[d, classes], 1.0 / (d as f64).sqrt()));
        Self::from_params(params, config, classes)
    }

    /// Wraps an existing parameter set, checking every shape.
    pub fn from_params(params: ParamSet, config: &ClassifierConfig, classes: usize) -> Result<Self> {
        config.validate()?;
        let shape_of = |name: &str| {
            params
                .get(name)
                .map(|p| p.value.shape().to_vec())
                .ok_or_else(|| Error::format("classifier parameters", format!("missing `{name}`")))
        };
        let emb = shape_of("embedding")?;
        let (e, f) = (config.embed_dim, config.filters);
        let bad = |name: &str, got: &[usize]| {
            Error::format("classifier parameters", format!("`{name}` has shape {got:?}"))
        };
        if emb.len() != 2 || emb[1] != e {
            return Err(bad("embedding", &emb));
        }
        for &h in &config.widths {
            let s = shape_of(&conv_name(h))?;
            if s != [f, h, e] {
                return Err(bad(&conv_name(h), &s));
            }
        }
        let dense = shape_of("dense")?;
        if dense != [f * config.widths.len(), classes] {
            return Err(bad("dense", &dense));
        }
        if params.len() != config.widths.len() + 2 {
            return Err(Error::format("classifier parameters", "unexpected extra entries"));
        }
        Ok(Classifier {
            params,
            vocab_size: emb[0],
            embed_dim: e,
            widths: config.widths.clone(),
            filters: f,
            classes,
            tables: OnceLock::new(),
        })
    }

    /// Model with every dense weight zero, hence uniform predictions.
    pub fn zeroed_head(mut self) -> Self {
        self.params.get_mut("dense").expect("registered").value.fill(0.0);
        self.invalidate();
        self
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    /// Mutable access; the cached lookup tables are dropped.
    pub fn params_mut(&mut self) -> &mut ParamSet {
        self.invalidate();
        &mut self.params
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn config(&self) -> ClassifierConfig {
        ClassifierConfig {
            embed_dim: self.embed_dim,
            widths: self.widths.clone(),
            filters: self.filters,
            ..ClassifierConfig::default()
        }
    }

    fn invalidate(&mut self) {
        self.tables = OnceLock::new();
    }

    fn tables(&self) -> Arc<Tables> {
        self.tables
            .get_or_init(|| Arc::new(self.build_tables()))
            .clone()
    }

    fn build_tables(&self) -> Tables {
        let (v_n, e_n, f_n) = (self.vocab_size, self.embed_dim, self.filters);
        let emb = self.params.value("embedding").data();
        let per_width = self
            .widths
            .iter()
            .map(|&h| {
                let w = self.params.value(&conv_name(h)).data();
                let mut t = vec![0.0; h * v_n * f_n];
                for j in 0..h {
                    for v in 0..v_n {
                        let ev = &emb[v * e_n..(v + 1) * e_n];
                        let row = &mut t[(j * v_n + v) * f_n..(j * v_n + v + 1) * f_n];
                        for (f, out) in row.iter_mut().enumerate() {
                            let wf = &w[(f * h + j) * e_n..(f * h + j + 1) * e_n];
                            *out = wf.iter().zip(ev).map(|(a, b)| a * b).sum();
                        }
                    }
                }
                t
            })
            .collect();
        Tables { per_width }
    }

    fn check_tokens(&self, tokens: &[TokenId]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::Input("cannot classify an empty sequence".into()));
        }
        if let Some((t, id)) = tokens.iter().enumerate().find(|(_, &id)| id as usize >= self.vocab_size) {
            return Err(Error::Input(format!(
                "token id {id} at position {t} is outside vocabulary of size {}",
                self.vocab_size
            )));
        }
        Ok(())
    }

    pub fn forward(&self, tokens: &[TokenId]) -> Result<Forward> {
        self.check_tokens(tokens)?;
        let tables = self.tables();
        let (v_n, f_n) = (self.vocab_size, self.filters);
        let n = tokens.len();
        let padded = n.max(MIN_LEN);
        let mut features = Vec::with_capacity(f_n * self.widths.len());
        let mut argmax_t = Vec::with_capacity(f_n * self.widths.len());
        let mut acc = vec![0.0; f_n];
        for (&h, table) in self.widths.iter().zip(&tables.per_width) {
            let pad = (h - 1) / 2;
            let mut best = vec![f64::NEG_INFINITY; f_n];
            let mut best_t = vec![0usize; f_n];
            for t in 0..padded {
                acc.fill(0.0);
                for j in 0..h {
                    let Some(idx) = (t + j).checked_sub(pad) else { continue };
                    if idx >= n {
                        continue;
                    }
                    let base = (j * v_n + tokens[idx] as usize) * f_n;
                    for (a, w) in acc.iter_mut().zip(&table[base..base + f_n]) {
                        *a += w;
                    }
                }
                for f in 0..f_n {
                    if acc[f] > best[f] {
                        best[f] = acc[f];
                        best_t[f] = t;
                    }
                }
            }
            features.extend(best);
            argmax_t.extend(best_t);
        }
        let dense = self.params.value("dense");
        let mut logits = vec![0.0; self.classes];
        for (d, &x) in features.iter().enumerate() {
            for (l, w) in logits.iter_mut().zip(dense.row(d)) {
                *l += x * w;
            }
        }
        let probs = softmax(&logits);
        if !probs.iter().all(|p| p.is_finite()) {
            return Err(Error::Numeric(format!("non-finite classifier output for {n} tokens")));
        }
        Ok(Forward {
            features,
            argmax: argmax_t,
            logits,
            probs,
        })
    }

    /// Family probability vector.
    pub fn classify(&self, tokens: &[TokenId]) -> Result<Vec<f64>> {
        Ok(self.forward(tokens)?.probs)
    }

    pub fn predict(&self, tokens: &[TokenId]) -> Result<usize> {
        Ok(argmax(&self.forward(tokens)?.logits))
    }

    /// Cross-entropy of the prediction against `family`.
    pub fn loss_of(&self, tokens: &[TokenId], family: usize) -> Result<f64> {
        cross_entropy(&self.classify(tokens)?, family)
    }

    /// Same function as [`Classifier::classify`], evaluated with the generic
    /// layer kernels.
    pub fn classify_layers(&self, tokens: &[TokenId]) -> Result<Vec<f64>> {
        self.check_tokens(tokens)?;
        let x = embedding_forward(tokens, self.params.value("embedding"))?;
        let x = if tokens.len() < MIN_LEN {
            let mut data = x.into_data();
            data.resize(MIN_LEN * self.embed_dim, 0.0);
            Tensor::from_vec(&[MIN_LEN, self.embed_dim], data)?
        } else {
            x
        };
        let mut features = Vec::new();
        for &h in &self.widths {
            let conv = conv1d_forward(&x, self.params.value(&conv_name(h)))?;
            features.extend_from_slice(global_max_pool(&conv)?.0.data());
        }
        let logits = dense_forward(&Tensor::vector(features), self.params.value("dense"))?;
        Ok(softmax(logits.data()))
    }

    /// Adds the gradient of `loss_of(tokens, family)` to the parameter
    /// gradients and returns the loss.
    pub fn accumulate_gradient(&mut self, tokens: &[TokenId], family: usize) -> Result<f64> {
        let fw = self.forward(tokens)?;
        let loss = cross_entropy(&fw.probs, family)?;
        let g_logits = softmax_cross_entropy_backward(&fw.probs, family);
        let (e_n, f_n, classes) = (self.embed_dim, self.filters, self.classes);
        let n = tokens.len();

        let mut g_feat = vec![0.0; fw.features.len()];
        {
            let dense = self.params.value("dense").data().to_vec();
            let g_dense = self.params.grad_mut("dense").data_mut();
            for (d, &x) in fw.features.iter().enumerate() {
                let row = &dense[d * classes..(d + 1) * classes];
                g_feat[d] = row.iter().zip(&g_logits).map(|(w, g)| w * g).sum();
                for (gw, g) in g_dense[d * classes..(d + 1) * classes].iter_mut().zip(&g_logits) {
                    *gw += x * g;
                }
            }
        }
        let emb = self.params.value("embedding").data().to_vec();
        let mut g_emb = vec![0.0; emb.len()];
        for (wi, &h) in self.widths.clone().iter().enumerate() {
            let name = conv_name(h);
            let w = self.params.value(&name).data().to_vec();
            let g_w = self.params.grad_mut(&name).data_mut();
            let pad = (h - 1) / 2;
            for f in 0..f_n {
                let g = g_feat[wi * f_n + f];
                if g == 0.0 {
                    continue;
                }
                let t = fw.argmax[wi * f_n + f];
                for j in 0..h {
                    let Some(idx) = (t + j).checked_sub(pad) else { continue };
                    if idx >= n {
                        continue;
                    }
                    let v = tokens[idx] as usize;
                    let k = (f * h + j) * e_n;
                    for e in 0..e_n {
                        g_w[k + e] += g * emb[v * e_n + e];
                        g_emb[v * e_n + e] += g * w[k + e];
                    }
                }
            }
        }
        for (a, b) in self.params.grad_mut("embedding").data_mut().iter_mut().zip(&g_emb) {
            *a += b;
        }
        Ok(loss)
    }

    pub fn to_checkpoint(&self, seed: u64) -> Checkpoint {
        Checkpoint::from_params(
            &self.params,
            CheckpointMeta::new(self.vocab_size, self.embed_dim, ARCHITECTURE, seed)
                .with_extra("classes", self.classes.to_string()),
        )
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_architecture(ARCHITECTURE)?;
        let classes: usize = ckpt
            .metadata
            .extra
            .get("classes")
            .and_then(|c| c.parse().ok())
            .ok_or_else(|| Error::format("classifier checkpoint", "missing `classes` metadata"))?;
        let params = ckpt.to_params()?;
        let conv = params
            .get(&conv_name(3))
            .ok_or_else(|| Error::format("classifier checkpoint", "missing `conv3`"))?;
        let config = ClassifierConfig {
            embed_dim: ckpt.metadata.embed_dim,
            filters: conv.value.shape()[0],
            ..ClassifierConfig::default()
        };
        Self::from_params(params, &config, classes)
    }
}

/// One line of the classifier training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug)]
pub struct TrainedClassifier {
    pub model: Classifier,
    pub metrics: Vec<EpochMetrics>,
    /// Epoch whose parameters were kept (0 = initialisation).
    pub best_epoch: usize,
}

/// Per-sample Adam steps in a seeded shuffled order; keeps the parameters with
/// the best validation accuracy (first epoch wins ties). Without a validation
/// split the last epoch is kept.
pub fn train_classifier(corpus: &Corpus, config: &ClassifierConfig, seed: u64) -> Result<TrainedClassifier> {
    let train = corpus.samples_in(Split::Train);
    if train.is_empty() {
        return Err(Error::Input("training split is empty".into()));
    }
    let val = corpus.samples_in(Split::Val);
    let mut model = Classifier::new(corpus.vocab.len(), corpus.num_families(), config, seed)?;
    let mut adam = Adam::new(config.adam);
    let mut best = (model.clone(), 0usize, f64::NEG_INFINITY);
    let mut metrics = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng::stream(seed, "classifier-epoch", epoch as u64));
        let mut total = 0.0;
        for &i in &order {
            let s = train[i];
            model.params.zero_grad();
            let loss = model.accumulate_gradient(&s.tokens, s.family)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("epoch {epoch}: loss {loss} on sample `{}`", s.id)));
            }
            total += loss;
            adam.step(model.params_mut())
                .map_err(|e| Error::Numeric(format!("epoch {epoch}, sample `{}`: {e}", s.id)))?;
        }
        let val_accuracy = if val.is_empty() { f64::NAN } else { evaluate(&model, &val)?.accuracy };
        let m = EpochMetrics {
            epoch,
            train_loss: total / train.len() as f64,
            val_accuracy,
        };
        log::info!("classifier epoch {epoch}: train_loss {:.4}, val_accuracy {:.4}", m.train_loss, m.val_accuracy);
        if val.is_empty() || val_accuracy > best.2 {
            best = (model.clone(), epoch, val_accuracy);
        }
        metrics.push(m);
    }
    Ok(TrainedClassifier {
        model: best.0,
        metrics,
        best_epoch: best.1,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    /// `NaN`-free: families absent from the split report 0 with count 0.
    pub per_family_accuracy: Vec<f64>,
    pub per_family_count: Vec<usize>,
    /// `confusion[i][j]`: samples of family `i` predicted as `j`.
    pub confusion: Vec<Vec<usize>>,
}

pub fn evaluate(model: &Classifier, samples: &[&Sample]) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::Input("cannot evaluate on an empty split".into()));
    }
    let k = model.classes();
    let mut confusion = vec![vec![0usize; k]; k];
    for s in samples {
        if s.family >= k {
            return Err(Error::Input(format!("sample `{}` has family {} ≥ {k}", s.id, s.family)));
        }
        confusion[s.family][model.predict(&s.tokens)?] += 1;
    }
    Ok(Evaluation::from_confusion(confusion))
}

impl Evaluation {
    pub fn from_confusion(confusion: Vec<Vec<usize>>) -> Self {
        let per_family_count: Vec<usize> = confusion.iter().map(|r| r.iter().sum()).collect();
        let total: usize = per_family_count.iter().sum();
        let correct: usize = (0..confusion.len()).map(|i| confusion[i][i]).sum();
        let per_family_accuracy = confusion
            .iter()
            .enumerate()
            .map(|(i, r)| if per_family_count[i] == 0 { 0.0 } else { r[i] as f64 / per_family_count[i] as f64 })
            .collect();
        Evaluation {
            accuracy: correct as f64 / total.max(1) as f64,
            per_family_accuracy,
            per_family_count,
            confusion,
        }
    }
}
