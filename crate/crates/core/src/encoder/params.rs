//! Learnable parameters: structure, seeded initialization and the flat
//! view used by the optimizer, EMA updates and gradient checking.

use crate::encoder::config::{EncoderConfig, EMBED_CHANNELS, MLP_RATIO};
use crate::error::{Error, Result};
use crate::numerics::rng::Rng;

/// Dense affine map, weights row-major `in_dim x out_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams {
    pub in_dim: usize,
    pub out_dim: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl LinearParams {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            w: vec![0.0; in_dim * out_dim],
            b: vec![0.0; out_dim],
        }
    }

    /// Square identity map with zero bias.
    pub fn identity(dim: usize) -> Self {
        let mut lin = Self::zeros(dim, dim);
        for i in 0..dim {
            lin.w[i * dim + i] = 1.0;
        }
        lin
    }

    fn init(in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        let a = (6.0 / (in_dim + out_dim) as f64).sqrt();
        Self {
            in_dim,
            out_dim,
            w: (0..in_dim * out_dim).map(|_| rng.uniform(-a, a)).collect(),
            b: vec![0.0; out_dim],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams {
    pub gain: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerNormParams {
    fn ones(dim: usize) -> Self {
        Self {
            gain: vec![1.0; dim],
            bias: vec![0.0; dim],
        }
    }

    fn zeros(dim: usize) -> Self {
        Self {
            gain: vec![0.0; dim],
            bias: vec![0.0; dim],
        }
    }
}

/// Q/K/V/output projections of one multi-head attention block.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub heads: usize,
    pub query: LinearParams,
    pub key: LinearParams,
    pub value: LinearParams,
    pub output: LinearParams,
}

impl AttentionParams {
    pub fn zeros(dim: usize, heads: usize) -> Self {
        Self {
            heads,
            query: LinearParams::zeros(dim, dim),
            key: LinearParams::zeros(dim, dim),
            value: LinearParams::zeros(dim, dim),
            output: LinearParams::zeros(dim, dim),
        }
    }

    /// Identity projections everywhere; attention becomes a pure
    /// softmax-weighted average of the raw value rows.
    pub fn identity(dim: usize, heads: usize) -> Self {
        Self {
            heads,
            query: LinearParams::identity(dim),
            key: LinearParams::identity(dim),
            value: LinearParams::identity(dim),
            output: LinearParams::identity(dim),
        }
    }

    fn init(dim: usize, heads: usize, rng: &mut Rng) -> Self {
        Self {
            heads,
            query: LinearParams::init(dim, dim, rng),
            key: LinearParams::init(dim, dim, rng),
            value: LinearParams::init(dim, dim, rng),
            output: LinearParams::init(dim, dim, rng),
        }
    }

    pub fn dim(&self) -> usize {
        self.query.in_dim
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageParams {
    pub ln1: LayerNormParams,
    pub attn: AttentionParams,
    pub ln2: LayerNormParams,
    pub mlp_in: LinearParams,
    pub mlp_out: LinearParams,
}

/// Every learnable weight of the model. There is exactly one copy of each
/// projection: both modality streams run through the same stages.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub cfg: EncoderConfig,
    pub patch: LinearParams,
    pub stages: Vec<StageParams>,
    pub transitions: Vec<LinearParams>,
    pub dec_hidden: LinearParams,
    pub dec_out: LinearParams,
}

impl ModelParams {
    /// Seeded uniform `(-a, a)` initialization with
    /// `a = sqrt(6 / (fan_in + fan_out))`; biases and norm offsets zero,
    /// norm gains one. The draw order is the declaration order, so a
    /// fixed seed gives a bit-identical model.
    pub fn init(cfg: &EncoderConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let patch_in = cfg.patch_size * cfg.patch_size * EMBED_CHANNELS;
        let patch = LinearParams::init(patch_in, cfg.stage_dims[0], rng);
        let mut stages = Vec::with_capacity(cfg.num_stages());
        for (&dim, &heads) in cfg.stage_dims.iter().zip(&cfg.heads_per_stage) {
            stages.push(StageParams {
                ln1: LayerNormParams::ones(dim),
                attn: AttentionParams::init(dim, heads, rng),
                ln2: LayerNormParams::ones(dim),
                mlp_in: LinearParams::init(dim, dim * MLP_RATIO, rng),
                mlp_out: LinearParams::init(dim * MLP_RATIO, dim, rng),
            });
        }
        let mut transitions = Vec::new();
        for s in 0..cfg.num_stages() - 1 {
            transitions.push(LinearParams::init(cfg.stage_dims[s], cfg.stage_dims[s + 1], rng));
        }
        let last = *cfg.stage_dims.last().unwrap();
        Ok(Self {
            cfg: cfg.clone(),
            patch,
            stages,
            transitions,
            dec_hidden: LinearParams::init(last, last, rng),
            dec_out: LinearParams::init(last, cfg.num_classes, rng),
        })
    }

    /// All-zero parameter set with the same structure; gradient accumulator.
    pub fn zeros_like(cfg: &EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        let patch_in = cfg.patch_size * cfg.patch_size * EMBED_CHANNELS;
        let mut stages = Vec::with_capacity(cfg.num_stages());
        for (&dim, &heads) in cfg.stage_dims.iter().zip(&cfg.heads_per_stage) {
            stages.push(StageParams {
                ln1: LayerNormParams::zeros(dim),
                attn: AttentionParams::zeros(dim, heads),
                ln2: LayerNormParams::zeros(dim),
                mlp_in: LinearParams::zeros(dim, dim * MLP_RATIO),
                mlp_out: LinearParams::zeros(dim * MLP_RATIO, dim),
            });
        }
        let mut transitions = Vec::new();
        for s in 0..cfg.num_stages() - 1 {
            transitions.push(LinearParams::zeros(cfg.stage_dims[s], cfg.stage_dims[s + 1]));
        }
        let last = *cfg.stage_dims.last().unwrap();
        Ok(Self {
            cfg: cfg.clone(),
            patch: LinearParams::zeros(patch_in, cfg.stage_dims[0]),
            stages,
            transitions,
            dec_hidden: LinearParams::zeros(last, last),
            dec_out: LinearParams::zeros(last, cfg.num_classes),
        })
    }

    /// Visits every parameter blob as `(name, slice)` in declaration order.
    pub fn for_each_slice(&self, mut f: impl FnMut(&str, &[f64])) {
        f("patch.w", &self.patch.w);
        f("patch.b", &self.patch.b);
        for (s, st) in self.stages.iter().enumerate() {
            f(&format!("stage{s}.ln1.gain"), &st.ln1.gain);
            f(&format!("stage{s}.ln1.bias"), &st.ln1.bias);
            f(&format!("stage{s}.attn.q.w"), &st.attn.query.w);
            f(&format!("stage{s}.attn.q.b"), &st.attn.query.b);
            f(&format!("stage{s}.attn.k.w"), &st.attn.key.w);
            f(&format!("stage{s}.attn.k.b"), &st.attn.key.b);
            f(&format!("stage{s}.attn.v.w"), &st.attn.value.w);
            f(&format!("stage{s}.attn.v.b"), &st.attn.value.b);
            f(&format!("stage{s}.attn.o.w"), &st.attn.output.w);
            f(&format!("stage{s}.attn.o.b"), &st.attn.output.b);
            f(&format!("stage{s}.ln2.gain"), &st.ln2.gain);
            f(&format!("stage{s}.ln2.bias"), &st.ln2.bias);
            f(&format!("stage{s}.mlp.in.w"), &st.mlp_in.w);
            f(&format!("stage{s}.mlp.in.b"), &st.mlp_in.b);
            f(&format!("stage{s}.mlp.out.w"), &st.mlp_out.w);
            f(&format!("stage{s}.mlp.out.b"), &st.mlp_out.b);
        }
        for (t, tr) in self.transitions.iter().enumerate() {
            f(&format!("transition{t}.w"), &tr.w);
            f(&format!("transition{t}.b"), &tr.b);
        }
        f("decoder.hidden.w", &self.dec_hidden.w);
        f("decoder.hidden.b", &self.dec_hidden.b);
        f("decoder.out.w", &self.dec_out.w);
        f("decoder.out.b", &self.dec_out.b);
    }

    /// Mutable visit in the same order as [`Self::for_each_slice`].
    pub fn for_each_slice_mut(&mut self, mut f: impl FnMut(&str, &mut [f64])) {
        f("patch.w", &mut self.patch.w);
        f("patch.b", &mut self.patch.b);
        for (s, st) in self.stages.iter_mut().enumerate() {
            f(&format!("stage{s}.ln1.gain"), &mut st.ln1.gain);
            f(&format!("stage{s}.ln1.bias"), &mut st.ln1.bias);
            f(&format!("stage{s}.attn.q.w"), &mut st.attn.query.w);
            f(&format!("stage{s}.attn.q.b"), &mut st.attn.query.b);
            f(&format!("stage{s}.attn.k.w"), &mut st.attn.key.w);
            f(&format!("stage{s}.attn.k.b"), &mut st.attn.key.b);
            f(&format!("stage{s}.attn.v.w"), &mut st.attn.value.w);
            f(&format!("stage{s}.attn.v.b"), &mut st.attn.value.b);
            f(&format!("stage{s}.attn.o.w"), &mut st.attn.output.w);
            f(&format!("stage{s}.attn.o.b"), &mut st.attn.output.b);
            f(&format!("stage{s}.ln2.gain"), &mut st.ln2.gain);
            f(&format!("stage{s}.ln2.bias"), &mut st.ln2.bias);
            f(&format!("stage{s}.mlp.in.w"), &mut st.mlp_in.w);
            f(&format!("stage{s}.mlp.in.b"), &mut st.mlp_in.b);
            f(&format!("stage{s}.mlp.out.w"), &mut st.mlp_out.w);
            f(&format!("stage{s}.mlp.out.b"), &mut st.mlp_out.b);
        }
        for (t, tr) in self.transitions.iter_mut().enumerate() {
            f(&format!("transition{t}.w"), &mut tr.w);
            f(&format!("transition{t}.b"), &mut tr.b);
        }
        f("decoder.hidden.w", &mut self.dec_hidden.w);
        f("decoder.hidden.b", &mut self.dec_hidden.b);
        f("decoder.out.w", &mut self.dec_out.w);
        f("decoder.out.b", &mut self.dec_out.b);
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.for_each_slice(|_, s| n += s.len());
        n
    }

    /// Concatenates every blob into one vector, in declaration order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.for_each_slice(|_, s| out.extend_from_slice(s));
        out
    }

    /// Overwrites every blob from a flat vector produced by [`Self::flatten`].
    pub fn unflatten_from(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::invalid_input(format!(
                "flat parameter vector has {} entries, model expects {}",
                flat.len(),
                self.param_count()
            )));
        }
        let mut cursor = 0;
        self.for_each_slice_mut(|_, s| {
            s.copy_from_slice(&flat[cursor..cursor + s.len()]);
            cursor += s.len();
        });
        Ok(())
    }

    /// `self <- momentum * self + (1 - momentum) * other`, per parameter.
    pub fn ema_from(&mut self, other: &ModelParams, momentum: f64) -> Result<()> {
        if self.cfg != other.cfg {
            return Err(Error::invalid_input("EMA between mismatched model configs"));
        }
        let src = other.flatten();
        let mut cursor = 0;
        self.for_each_slice_mut(|_, s| {
            for v in s.iter_mut() {
                *v = momentum * *v + (1.0 - momentum) * src[cursor];
                cursor += 1;
            }
        });
        Ok(())
    }

    /// True when every parameter is finite.
    pub fn all_finite(&self) -> bool {
        let mut ok = true;
        self.for_each_slice(|_, s| ok &= s.iter().all(|v| v.is_finite()));
        ok
    }
}
