//! The full RCA-IUnet: four encoder stages of residual inception blocks with
//! valid-mode hybrid pooling, a bottleneck, four decoder stages with
//! transposed-convolution upsampling and cross-spatial-attention-gated long
//! skips, and a 1×1 sigmoid output head.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{ops, Gradients, Tape, Var};
use crate::layers::{
    CrossSpatialAttentionBlock, Conv2d, HybridPoolLayer, LayerError, Mode, Param, ParamVisit,
    PoolMode, ResidualInceptionBlock, UpsampleLayer,
};
use crate::tensor::rten;
use crate::tensor::{DType, Tensor, TensorError};

/// Architecture hyperparameters.
///
/// Spatial dims halve at every stage while channel width grows by `growth`
/// (default 1.5, i.e. +50% per stage; 2.0 is available for the conventional
/// doubling schedule). `base_channels` is pinned by [`calibrate_width`]
/// against a parameter budget.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ModelConfig {
    pub stages: usize,
    pub input_h: usize,
    pub input_w: usize,
    pub in_channels: usize,
    pub base_channels: usize,
    pub growth: f64,
    pub dtype: DType,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            stages: 4,
            input_h: 256,
            input_w: 256,
            in_channels: 1,
            base_channels: 42,
            growth: 1.5,
            dtype: DType::F32,
        }
    }
}

impl ModelConfig {
    /// Encoder channel width at stage `s` (1-based); `stages + 1` is the
    /// bottleneck.
    pub fn channels_at(&self, s: usize) -> usize {
        (self.base_channels as f64 * self.growth.powi(s as i32 - 1)).round() as usize
    }
}

/// Saturation guard on the output head: probabilities are clamped into
/// `[OUTPUT_CLAMP, 1 - OUTPUT_CLAMP]` so they stay strictly inside (0,1)
/// even where the sigmoid rounds to exactly 0 or 1 in floating point. The
/// bound is representable at f32, which keeps downstream logarithms finite.
pub const OUTPUT_CLAMP: f64 = 1e-6;

/// Errors from model construction and inference.
#[derive(Debug)]
pub enum ModelError {
    BadConfig(String),
    Shape(TensorError),
    Layer(LayerError),
    Archive(String),
}

impl std::fmt::Display for ModelError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelError::BadConfig(m) => write!(f, "bad model config: {m}"),
            ModelError::Shape(e) => write!(f, "{e}"),
            ModelError::Layer(e) => write!(f, "{e}"),
            ModelError::Archive(m) => write!(f, "archive error: {m}"),
        }
    }
}

impl std::error::Error for ModelError {}

impl From<TensorError> for ModelError {
    fn from(e: TensorError) -> Self {
        ModelError::Shape(e)
    }
}

impl From<LayerError> for ModelError {
    fn from(e: LayerError) -> Self {
        ModelError::Layer(e)
    }
}

/// One decoder stage: upsample, gate the skip, fuse.
#[derive(Clone, Debug)]
struct DecoderStage {
    up: UpsampleLayer,
    csa: CrossSpatialAttentionBlock,
    block: ResidualInceptionBlock,
}

/// The assembled network.
#[derive(Clone, Debug)]
pub struct RcaIUnet {
    pub config: ModelConfig,
    encoders: Vec<ResidualInceptionBlock>,
    pools: Vec<HybridPoolLayer>,
    bottleneck: ResidualInceptionBlock,
    decoders: Vec<DecoderStage>,
    head: Conv2d,
    /// Encoder stage indices (1-based, `stages+1` = bottleneck) feeding each
    /// skip's attention gates.
    gate_sources: Vec<Vec<usize>>,
}

impl RcaIUnet {
    /// Deterministically initializes the network from a seed (He-uniform
    /// kernels, unit batch-norm scale, zero shifts and biases).
    pub fn build(config: &ModelConfig, seed: u64) -> Result<RcaIUnet, ModelError> {
        if config.stages == 0 {
            return Err(ModelError::BadConfig("stages must be >= 1".into()));
        }
        let div = 1usize << config.stages;
        if config.input_h % div != 0 || config.input_w % div != 0 {
            return Err(ModelError::BadConfig(format!(
                "input {}x{} not divisible by 2^{}",
                config.input_h, config.input_w, config.stages
            )));
        }
        if config.base_channels == 0 || config.in_channels == 0 {
            return Err(ModelError::BadConfig("channel counts must be >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dtype = config.dtype;
        let stages = config.stages;
        let ch = |s: usize| config.channels_at(s);

        let mut encoders = Vec::with_capacity(stages);
        let mut pools = Vec::with_capacity(stages);
        for s in 1..=stages {
            let d = if s == 1 { config.in_channels } else { ch(s - 1) };
            encoders.push(ResidualInceptionBlock::new(d, ch(s), &mut rng, dtype));
            pools.push(HybridPoolLayer::new(ch(s), PoolMode::Valid, true, &mut rng, dtype));
        }
        let bottleneck = ResidualInceptionBlock::new(ch(stages), ch(stages + 1), &mut rng, dtype);

        let mut gate_sources = Vec::with_capacity(stages);
        for s in 1..=stages {
            let sources: Vec<usize> = [s + 1, s + 2]
                .into_iter()
                .filter(|&g| g <= stages + 1)
                .collect();
            gate_sources.push(sources);
        }

        let mut decoders = Vec::with_capacity(stages);
        for s in (1..=stages).rev() {
            let deeper = if s == stages { ch(stages + 1) } else { ch(s + 1) };
            let up = UpsampleLayer::new(deeper, ch(s), &mut rng, dtype);
            let gate_chs: Vec<usize> = gate_sources[s - 1].iter().map(|&g| ch(g)).collect();
            let csa = CrossSpatialAttentionBlock::new(ch(s), &gate_chs, &mut rng, dtype);
            let block = ResidualInceptionBlock::new(2 * ch(s), ch(s), &mut rng, dtype);
            decoders.push(DecoderStage { up, csa, block });
        }
        let head = Conv2d::new(ch(1), 1, 1, true, &mut rng, dtype);
        Ok(RcaIUnet {
            config: config.clone(),
            encoders,
            pools,
            bottleneck,
            decoders,
            head,
            gate_sources,
        })
    }

    /// Records the forward pass on a tape; returns per-pixel probabilities.
    pub fn forward_tape(&self, tape: &Tape, x: Var, mode: Mode) -> Result<Var, ModelError> {
        let (_, c, h, w) = tape.value(x).dims4()?;
        if c != self.config.in_channels {
            return Err(ModelError::Shape(TensorError::ShapeMismatch {
                left: tape.value(x).shape().to_vec(),
                right: vec![0, self.config.in_channels, 0, 0],
            }));
        }
        let div = 1usize << self.config.stages;
        if h % div != 0 || w % div != 0 {
            return Err(ModelError::BadConfig(format!(
                "input {h}x{w} not divisible by 2^{}",
                self.config.stages
            )));
        }
        let stages = self.config.stages;
        let mut skips = Vec::with_capacity(stages);
        let mut cur = x;
        for s in 0..stages {
            let e = self.encoders[s].forward(tape, cur, mode)?;
            skips.push(e);
            cur = self.pools[s].forward(tape, e)?;
        }
        let bneck = self.bottleneck.forward(tape, cur, mode)?;
        cur = bneck;
        // feats[s] for s in 1..=stages are encoder outputs; stages+1 is the
        // bottleneck.
        for (di, s) in (1..=stages).rev().enumerate() {
            let stage = &self.decoders[di];
            let up = stage.up.forward(tape, cur)?;
            let gates: Vec<Var> = self.gate_sources[s - 1]
                .iter()
                .map(|&g| if g == stages + 1 { bneck } else { skips[g - 1] })
                .collect();
            let (gated, _alpha) = stage.csa.forward(tape, skips[s - 1], &gates)?;
            let cat = ops::concat_channels(tape, &[gated, up])?;
            cur = stage.block.forward(tape, cat, mode)?;
        }
        let logits = self.head.forward(tape, cur)?;
        let probs = ops::sigmoid(tape, logits);
        Ok(ops::clamp(tape, probs, OUTPUT_CLAMP, 1.0 - OUTPUT_CLAMP))
    }

    /// Eval-mode inference on a plain tensor.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor, ModelError> {
        let tape = Tape::new();
        let xv = tape.constant(x.cast(self.config.dtype));
        let y = self.forward_tape(&tape, xv, Mode::Eval)?;
        Ok(tape.value(y))
    }

    /// Named parameter values in archive order.
    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.visit_params("", &mut |name, p| out.push((name, p.value())));
        out
    }

    /// Named trainable parameters (archive order), for optimizers and
    /// gradient checks.
    pub fn trainable_params(&self) -> Vec<(String, Param)> {
        let mut out = Vec::new();
        self.visit_params("", &mut |name, p| {
            if p.trainable() {
                out.push((name, p.clone()));
            }
        });
        out
    }

    /// Applies a gradient-driven update via the supplied closure.
    pub fn update_params(&self, grads: &Gradients, mut f: impl FnMut(&str, &Param, &Tensor)) {
        self.visit_params("", &mut |name, p| {
            if p.trainable() {
                if let Some(g) = grads.get(p.id()) {
                    f(&name, p, g);
                }
            }
        });
    }

    /// Total trainable scalar count.
    pub fn param_count(&self) -> u64 {
        let mut total = 0u64;
        self.visit_params("", &mut |_, p| {
            if p.trainable() {
                total += p.len() as u64;
            }
        });
        total
    }

    /// Per-tensor breakdown `(name, trainable scalar count)`; sums to
    /// [`RcaIUnet::param_count`] exactly.
    pub fn param_table(&self) -> Vec<(String, u64)> {
        let mut rows = Vec::new();
        self.visit_params("", &mut |name, p| {
            if p.trainable() {
                rows.push((name, p.len() as u64));
            }
        });
        rows
    }

    /// Marks every parameter trainable or frozen.
    pub fn set_trainable(&self, on: bool) {
        self.visit_params("", &mut |name, p| {
            // Running stats stay non-trainable regardless.
            if !(name.ends_with(".rm") || name.ends_with(".rv")) {
                p.set_trainable(on);
            }
        });
    }

    /// Serializes config header plus all named tensors.
    pub fn save_archive(&self, w: &mut impl Write) -> Result<(), ModelError> {
        let header =
            serde_json::to_vec(&self.config).map_err(|e| ModelError::Archive(e.to_string()))?;
        w.write_all(&(header.len() as u32).to_le_bytes())
            .map_err(|e| ModelError::Archive(e.to_string()))?;
        w.write_all(&header)
            .map_err(|e| ModelError::Archive(e.to_string()))?;
        let mut result = Ok(());
        self.visit_params("", &mut |name, p| {
            if result.is_ok() {
                if let Err(e) = rten::write_named(w, &name, &p.value()) {
                    result = Err(ModelError::Archive(e.to_string()));
                }
            }
        });
        result
    }

    /// Rebuilds a model from an archive, validating the header against the
    /// stored tensor names and shapes.
    pub fn load_archive(r: &mut impl Read) -> Result<RcaIUnet, ModelError> {
        let mut len_bytes = [0u8; 4];
        r.read_exact(&mut len_bytes)
            .map_err(|e| ModelError::Archive(e.to_string()))?;
        let mut header = vec![0u8; u32::from_le_bytes(len_bytes) as usize];
        r.read_exact(&mut header)
            .map_err(|e| ModelError::Archive(e.to_string()))?;
        let config: ModelConfig =
            serde_json::from_slice(&header).map_err(|e| ModelError::Archive(e.to_string()))?;
        let model = RcaIUnet::build(&config, 0)?;
        let entries = rten::read_archive(r).map_err(|e| ModelError::Archive(e.to_string()))?;
        let mut by_name: std::collections::HashMap<String, Tensor> = entries.into_iter().collect();
        let mut missing = Vec::new();
        model.visit_params("", &mut |name, p| match by_name.remove(&name) {
            Some(t) => {
                if t.shape() == p.value().shape() {
                    p.set(t);
                } else {
                    missing.push(format!("{name} (shape mismatch)"));
                }
            }
            None => missing.push(name),
        });
        if !missing.is_empty() {
            return Err(ModelError::Archive(format!(
                "archive does not match config: missing/mismatched {missing:?}"
            )));
        }
        if !by_name.is_empty() {
            let extra: Vec<&String> = by_name.keys().collect();
            return Err(ModelError::Archive(format!(
                "archive has unknown entries {extra:?}"
            )));
        }
        Ok(model)
    }
}

impl ParamVisit for RcaIUnet {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Param)) {
        let join = |leaf: String| {
            if prefix.is_empty() {
                leaf
            } else {
                format!("{prefix}.{leaf}")
            }
        };
        for (i, e) in self.encoders.iter().enumerate() {
            e.visit_params(&join(format!("enc{}.block", i + 1)), f);
            self.pools[i].visit_params(&join(format!("enc{}.pool", i + 1)), f);
        }
        self.bottleneck.visit_params(&join("bneck".into()), f);
        let stages = self.config.stages;
        for (di, s) in (1..=stages).rev().enumerate() {
            let d = &self.decoders[di];
            d.up.visit_params(&join(format!("dec{s}.up")), f);
            d.csa.visit_params(&join(format!("dec{s}.csa")), f);
            d.block.visit_params(&join(format!("dec{s}.block")), f);
        }
        self.head.visit_params(&join("head".into()), f);
    }
}

/// Result of scanning `base_channels` against a parameter budget.
#[derive(Clone, Debug)]
pub struct Calibration {
    pub base_channels: usize,
    pub param_count: u64,
    pub warning: Option<String>,
}

/// Finds the smallest `base_channels` in `[8, 64]` whose parameter count
/// lands within ±15% of `target`; falls back to the closest count (and a
/// warning) when no width lands in the band.
pub fn calibrate_width(target: u64, template: &ModelConfig) -> Calibration {
    let mut counts = Vec::new();
    for c1 in 8..=64usize {
        // Parameter counts are independent of spatial size; scan on a tiny
        // input so builds stay cheap.
        let cfg = ModelConfig {
            base_channels: c1,
            input_h: 1 << template.stages,
            input_w: 1 << template.stages,
            ..template.clone()
        };
        let count = RcaIUnet::build(&cfg, 0).expect("scan config is valid").param_count();
        counts.push((c1, count));
    }
    let lo = (target as f64 * 0.85) as u64;
    let hi = (target as f64 * 1.15) as u64;
    if let Some(&(c1, count)) = counts.iter().find(|(_, n)| *n >= lo && *n <= hi) {
        if target > 0 {
            return Calibration {
                base_channels: c1,
                param_count: count,
                warning: None,
            };
        }
    }
    let &(c1, count) = counts
        .iter()
        .min_by_key(|(_, n)| n.abs_diff(target))
        .expect("scan is non-empty");
    Calibration {
        base_channels: c1,
        param_count: count,
        warning: Some(format!(
            "no width in [8,64] lands within 15% of target {target}; \
             closest is base_channels={c1} with {count} parameters"
        )),
    }
}
