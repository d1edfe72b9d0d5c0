//! Spectral vision transformer: classifies a pixel from the K_c x K_c
//! neighborhood of its per-pixel features.
//!
//! Tokens are the K_c^2 spatial positions of the feature patch. Each
//! token goes through a linear input map, gains a learned 2-D position
//! embedding, then five blocks of [self-attention + residual, MLP +
//! residual, layer norm], is mean-pooled, and read out by an MLP into
//! class logits.

use alloc::string::String;
use alloc::vec::Vec;

use core::fmt;

use serde::{Deserialize, Serialize};

use crate::adam::{AdamConfig, AdamState};
use crate::features::FeatureCube;
use crate::graph::{Graph, Mode, Var};
use crate::hsi::{LabelMap, Split};
use crate::param::{kaiming_uniform, ParamId, ParamStore};
use crate::rng::{self, Prng};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub enum SvitError {
    InvalidConfig(String),
    ClassMissingFromTrain(u16),
    DimensionMismatch { expected: usize, actual: usize },
    MissingTensor(String),
}

impl fmt::Display for SvitError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SvitError::InvalidConfig(m) => write!(f, "invalid classifier config: {m}"),
            SvitError::ClassMissingFromTrain(c) => {
                write!(f, "class {c} has no training samples; per-class metrics undefined")
            }
            SvitError::DimensionMismatch { expected, actual } => {
                write!(f, "feature dim {actual} does not match the model's {expected}")
            }
            SvitError::MissingTensor(n) => write!(f, "missing state tensor {n:?}"),
        }
    }
}

impl core::error::Error for SvitError {}

/// Which per-pixel descriptor feeds the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSource {
    Raw,
    Diffusion,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvitConfig {
    /// Classifier neighborhood side K_c.
    pub context: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub blocks: usize,
    pub mlp_dim: usize,
    pub classes: usize,
    pub dropout: f32,
    pub feature_source: FeatureSource,
    /// Per-token input feature dimension.
    pub d_in: usize,
}

impl SvitConfig {
    pub fn validate(&self) -> Result<(), SvitError> {
        if self.context == 0 || self.model_dim == 0 || self.mlp_dim == 0 {
            return Err(SvitError::InvalidConfig(String::from(
                "context, model_dim, and mlp_dim must be >= 1",
            )));
        }
        if self.heads == 0 || self.model_dim % self.heads != 0 {
            return Err(SvitError::InvalidConfig(String::from(
                "heads must divide model_dim",
            )));
        }
        if self.blocks == 0 {
            return Err(SvitError::InvalidConfig(String::from("blocks must be >= 1")));
        }
        if self.classes < 2 {
            return Err(SvitError::InvalidConfig(String::from("need at least 2 classes")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(SvitError::InvalidConfig(String::from("dropout must be in [0, 1)")));
        }
        if self.d_in == 0 {
            return Err(SvitError::InvalidConfig(String::from("d_in must be >= 1")));
        }
        Ok(())
    }

    pub fn tokens(&self) -> usize {
        self.context * self.context
    }
}

#[derive(Debug, Clone, Copy)]
struct AttnParams {
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct BlockIds {
    attn: AttnParams,
    mlp_w1: ParamId,
    mlp_b1: ParamId,
    mlp_w2: ParamId,
    mlp_b2: ParamId,
    ln_gamma: ParamId,
    ln_beta: ParamId,
}

#[derive(Debug, Clone)]
pub struct SvitModel {
    pub config: SvitConfig,
    pub params: ParamStore,
    input_w: ParamId,
    input_b: ParamId,
    pos_embed: ParamId,
    blocks: Vec<BlockIds>,
    head_w1: ParamId,
    head_b1: ParamId,
    head_w2: ParamId,
    head_b2: ParamId,
}

pub fn build_svit(config: SvitConfig, init_seed: u64) -> Result<SvitModel, SvitError> {
    config.validate()?;
    let mut params = ParamStore::new();
    let mut r = rng::substream(init_seed, "svit-init", 0);
    let m = config.model_dim;

    let linear = |params: &mut ParamStore, r: &mut Prng, name: &str, fout: usize, fin: usize| {
        let w = params.add(
            &alloc::format!("{name}.weight"),
            kaiming_uniform(&[fout, fin], fin, r),
        );
        let b = params.add(&alloc::format!("{name}.bias"), Tensor::zeros(&[fout]));
        (w, b)
    };

    let (input_w, input_b) = linear(&mut params, &mut r, "input", m, config.d_in);
    // position embeddings start small so tokens begin near-homogeneous
    let pos = kaiming_uniform(&[config.tokens(), m], m * 4, &mut r);
    let pos_embed = params.add("pos_embed", pos);

    let mut blocks = Vec::with_capacity(config.blocks);
    for i in 0..config.blocks {
        let (wq, bq) = linear(&mut params, &mut r, &alloc::format!("block.{i}.attn.q"), m, m);
        let (wk, bk) = linear(&mut params, &mut r, &alloc::format!("block.{i}.attn.k"), m, m);
        let (wv, bv) = linear(&mut params, &mut r, &alloc::format!("block.{i}.attn.v"), m, m);
        let (wo, bo) = linear(&mut params, &mut r, &alloc::format!("block.{i}.attn.out"), m, m);
        let (mlp_w1, mlp_b1) =
            linear(&mut params, &mut r, &alloc::format!("block.{i}.mlp.fc1"), config.mlp_dim, m);
        let (mlp_w2, mlp_b2) =
            linear(&mut params, &mut r, &alloc::format!("block.{i}.mlp.fc2"), m, config.mlp_dim);
        let ln_gamma = params.add(
            &alloc::format!("block.{i}.ln.gamma"),
            Tensor::filled(&[m], 1.0),
        );
        let ln_beta = params.add(&alloc::format!("block.{i}.ln.beta"), Tensor::zeros(&[m]));
        blocks.push(BlockIds {
            attn: AttnParams {
                wq,
                bq,
                wk,
                bk,
                wv,
                bv,
                wo,
                bo,
            },
            mlp_w1,
            mlp_b1,
            mlp_w2,
            mlp_b2,
            ln_gamma,
            ln_beta,
        });
    }
    let (head_w1, head_b1) = linear(&mut params, &mut r, "head.fc1", config.mlp_dim, m);
    let (head_w2, head_b2) = linear(&mut params, &mut r, "head.fc2", config.classes, config.mlp_dim);

    Ok(SvitModel {
        config,
        params,
        input_w,
        input_b,
        pos_embed,
        blocks,
        head_w1,
        head_b1,
        head_w2,
        head_b2,
    })
}

impl SvitModel {
    fn lease(&self, g: &mut Graph, id: ParamId) -> Var {
        g.param(&self.params, id)
    }

    /// Build logits for a token batch [N, L, d_in]. Dropout fires only
    /// in train mode, drawing from `rng`.
    pub fn forward(&self, g: &mut Graph, tokens: &Tensor, rng: &mut Prng) -> Var {
        let s = tokens.shape();
        assert_eq!(s.len(), 3, "classifier expects [N, L, d_in] tokens");
        let (n, l, d) = (s[0], s[1], s[2]);
        assert_eq!(l, self.config.tokens(), "token count must be K_c^2");
        assert_eq!(
            d, self.config.d_in,
            "feature dim {d} does not match model d_in {}",
            self.config.d_in
        );
        let m = self.config.model_dim;

        let x = g.input(tokens.clone());
        let flat = g.reshape(x, &[n * l, d]);
        let wi = self.lease(g, self.input_w);
        let bi = self.lease(g, self.input_b);
        let mapped = g.linear(flat, wi, bi);
        let mut h = g.reshape(mapped, &[n, l, m]);
        let pe = self.lease(g, self.pos_embed);
        h = g.add_broadcast0(h, pe);

        for blk in &self.blocks {
            let a = &blk.attn;
            let (wq, bq) = (self.lease(g, a.wq), self.lease(g, a.bq));
            let (wk, bk) = (self.lease(g, a.wk), self.lease(g, a.bk));
            let (wv, bv) = (self.lease(g, a.wv), self.lease(g, a.bv));
            let (wo, bo) = (self.lease(g, a.wo), self.lease(g, a.bo));
            let attn = g.multi_head_attention(h, wq, bq, wk, bk, wv, bv, wo, bo, self.config.heads);
            h = g.add(h, attn);

            let flat = g.reshape(h, &[n * l, m]);
            let (w1, b1) = (self.lease(g, blk.mlp_w1), self.lease(g, blk.mlp_b1));
            let (w2, b2) = (self.lease(g, blk.mlp_w2), self.lease(g, blk.mlp_b2));
            let z = g.linear(flat, w1, b1);
            let z = g.relu(z);
            let z = g.dropout(z, self.config.dropout, rng);
            let z = g.linear(z, w2, b2);
            let z = g.reshape(z, &[n, l, m]);
            h = g.add(h, z);

            let (gamma, beta) = (self.lease(g, blk.ln_gamma), self.lease(g, blk.ln_beta));
            h = g.layer_norm(h, gamma, beta);
        }

        let pooled = g.mean_tokens(h);
        let (w1, b1) = (self.lease(g, self.head_w1), self.lease(g, self.head_b1));
        let (w2, b2) = (self.lease(g, self.head_w2), self.lease(g, self.head_b2));
        let z = g.linear(pooled, w1, b1);
        let z = g.relu(z);
        let z = g.dropout(z, self.config.dropout, rng);
        g.linear(z, w2, b2)
    }

    /// Argmax classes (1-based) for a token batch, eval mode.
    pub fn predict(&self, tokens: &Tensor) -> Vec<u16> {
        let mut g = Graph::new(Mode::Eval);
        let mut rng = rng::seeded(0);
        let logits = self.forward(&mut g, tokens, &mut rng);
        argmax_classes(g.value(logits))
    }

    pub fn state_tensors(&self) -> Vec<(String, Tensor)> {
        self.params
            .iter()
            .map(|(_, p)| (p.name.clone(), p.value.clone()))
            .collect()
    }

    pub fn load_state_tensors(&mut self, entries: &[(String, Tensor)]) -> Result<(), SvitError> {
        use alloc::collections::BTreeMap;
        let map: BTreeMap<&str, &Tensor> = entries.iter().map(|(n, t)| (n.as_str(), t)).collect();
        for i in 0..self.params.len() {
            let id = ParamId(i);
            let name = self.params.get(id).name.clone();
            let t = map
                .get(name.as_str())
                .ok_or_else(|| SvitError::MissingTensor(name.clone()))?;
            if t.shape() != self.params.get(id).value.shape() {
                return Err(SvitError::MissingTensor(name));
            }
            self.params.get_mut(id).value = (*t).clone();
        }
        Ok(())
    }
}

/// Row argmax as 1-based class ids.
pub fn argmax_classes(logits: &Tensor) -> Vec<u16> {
    let s = logits.shape();
    assert_eq!(s.len(), 2);
    let (n, c) = (s[0], s[1]);
    let d = logits.data();
    (0..n)
        .map(|i| {
            let row = &d[i * c..(i + 1) * c];
            let mut best = 0usize;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            (best + 1) as u16
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct SvitTrainConfig {
    pub learning_rate: f32,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SvitTrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f32,
    pub train_acc: f64,
    pub test_acc: f64,
}

#[derive(Debug, Clone)]
pub struct ClassifierReport {
    pub history: Vec<EpochStats>,
}

/// Token batch for a set of pixel ids.
fn token_batch(features: &FeatureCube, context: usize, pixels: &[usize]) -> Tensor {
    let l = context * context;
    let d = features.dim();
    let w = features.width();
    let mut data = Vec::with_capacity(pixels.len() * l * d);
    for &px in pixels {
        let t = features.patch_tokens(px / w, px % w, context);
        data.extend_from_slice(t.data());
    }
    Tensor::from_vec(&[pixels.len(), l, d], data)
}

/// Accuracy of the model on the given pixels (eval mode, batched).
pub fn accuracy_on(
    model: &SvitModel,
    features: &FeatureCube,
    labels: &LabelMap,
    pixels: &[usize],
    batch: usize,
) -> f64 {
    if pixels.is_empty() {
        return 0.0;
    }
    let mut hits = 0usize;
    for chunk in pixels.chunks(batch.max(1)) {
        let tokens = token_batch(features, model.config.context, chunk);
        let preds = model.predict(&tokens);
        for (&px, &p) in chunk.iter().zip(&preds) {
            if p == labels.labels()[px] {
                hits += 1;
            }
        }
    }
    hits as f64 / pixels.len() as f64
}

/// Supervised training on the center-pixel labels of feature patches.
pub fn train_classifier(
    features: &FeatureCube,
    labels: &LabelMap,
    split: &Split,
    model: &mut SvitModel,
    cfg: &SvitTrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<ClassifierReport, SvitError> {
    if features.dim() != model.config.d_in {
        return Err(SvitError::DimensionMismatch {
            expected: model.config.d_in,
            actual: features.dim(),
        });
    }
    // every class must appear in the training split
    let mut seen = alloc::vec![false; model.config.classes + 1];
    for &px in &split.train {
        let l = labels.labels()[px] as usize;
        if l <= model.config.classes {
            seen[l] = true;
        }
    }
    for class in 1..=model.config.classes {
        if !seen[class] {
            return Err(SvitError::ClassMissingFromTrain(class as u16));
        }
    }

    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.learning_rate), &model.params);
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        use rand::seq::SliceRandom;
        let mut order = split.train.clone();
        let mut epoch_rng = rng::substream(cfg.seed, "svit-epoch", epoch as u64);
        order.shuffle(&mut epoch_rng);

        let mut loss_sum = 0.0f64;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let tokens = token_batch(features, model.config.context, chunk);
            let targets: Vec<usize> = chunk
                .iter()
                .map(|&px| labels.labels()[px] as usize - 1)
                .collect();
            let mut g = Graph::new(Mode::Train);
            let logits = model.forward(&mut g, &tokens, &mut epoch_rng);
            let loss = g.cross_entropy(logits, &targets);
            loss_sum += g.value(loss).item() as f64;
            batches += 1;
            model.params.zero_grads();
            g.backward(loss, &mut model.params);
            adam.step(&mut model.params);
        }

        let stats = EpochStats {
            epoch,
            mean_loss: (loss_sum / batches.max(1) as f64) as f32,
            train_acc: accuracy_on(model, features, labels, &split.train, 64),
            test_acc: accuracy_on(model, features, labels, &split.test, 64),
        };
        on_epoch(&stats);
        history.push(stats);
    }

    Ok(ClassifierReport { history })
}

/// Dense per-pixel prediction over the whole feature cube; unlabeled
/// pixels are predicted too.
pub fn predict_map(model: &SvitModel, features: &FeatureCube) -> LabelMap {
    let (h, w) = (features.height(), features.width());
    let all: Vec<usize> = (0..h * w).collect();
    let mut out = alloc::vec![0u16; h * w];
    for chunk in all.chunks(64) {
        let tokens = token_batch(features, model.config.context, chunk);
        let preds = model.predict(&tokens);
        for (&px, &p) in chunk.iter().zip(&preds) {
            out[px] = p;
        }
    }
    LabelMap::new(h, w, out).expect("prediction map dimensions")
}
