//! Forward pass: patch embedding, shared stages with cross-modality
//! attention, and the MLP decoder. Every intermediate needed by the
//! analytic backward pass is kept in [`EncoderCache`].

use crate::encoder::config::{EncoderConfig, FusionMode, EMBED_CHANNELS, MLP_RATIO};
use crate::encoder::params::{AttentionParams, LinearParams, ModelParams};
use crate::error::{Error, Result};
use crate::numerics::linalg::{add_bias_rows, matmul};
use crate::numerics::softmax::softmax_row_inplace;
use crate::numerics::tensor::Tensor;

/// Layer normalization epsilon.
pub const LN_EPS: f64 = 1e-6;

/// Color inputs are mapped from `[0, 255]` to `[-1, 1]` before embedding.
pub const RGB_SCALE: f64 = 127.5;
/// Disparity inputs are mapped from `[0, 65535]` to `[-1, 1]`.
pub const DISP_SCALE: f64 = 32768.0;

/// Token sequence on a spatial grid.
#[derive(Debug, Clone)]
pub struct TokenGrid {
    pub rows: usize,
    pub cols: usize,
    pub dim: usize,
    pub values: Tensor,
}

impl TokenGrid {
    pub fn new(rows: usize, cols: usize, dim: usize, values: Tensor) -> Result<Self> {
        if rows * cols == 0 {
            return Err(Error::invalid_input("token grid needs at least one token"));
        }
        if values.shape() != [rows * cols, dim] {
            return Err(Error::invalid_input(format!(
                "token grid values shaped {:?}, expected [{}, {dim}]",
                values.shape(),
                rows * cols
            )));
        }
        if values.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid_input("token grid contains non-finite values"));
        }
        Ok(Self {
            rows,
            cols,
            dim,
            values,
        })
    }

    pub fn tokens(&self) -> usize {
        self.rows * self.cols
    }
}

pub(crate) fn gelu(x: f64) -> f64 {
    const C0: f64 = 0.7978845608028654; // sqrt(2/pi)
    const C1: f64 = 0.044715;
    let u = C0 * (x + C1 * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

pub(crate) fn gelu_prime(x: f64) -> f64 {
    const C0: f64 = 0.7978845608028654;
    const C1: f64 = 0.044715;
    let u = C0 * (x + C1 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C0 * (1.0 + 3.0 * C1 * x * x)
}

#[derive(Debug, Clone, Default)]
pub(crate) struct LnCache {
    /// Normalized rows before gain/bias.
    pub xhat: Vec<f64>,
    /// Per-row `1 / sqrt(var + eps)`.
    pub inv_std: Vec<f64>,
}

pub(crate) fn layer_norm_forward(
    x: &[f64],
    n: usize,
    d: usize,
    gain: &[f64],
    bias: &[f64],
    cache: &mut LnCache,
) -> Vec<f64> {
    let mut out = vec![0.0; n * d];
    cache.xhat = vec![0.0; n * d];
    cache.inv_std = vec![0.0; n];
    for t in 0..n {
        let row = &x[t * d..(t + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        cache.inv_std[t] = inv;
        for i in 0..d {
            let xh = (row[i] - mean) * inv;
            cache.xhat[t * d + i] = xh;
            out[t * d + i] = gain[i] * xh + bias[i];
        }
    }
    out
}

pub(crate) fn linear_forward(x: &[f64], lin: &LinearParams, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * lin.out_dim];
    matmul(x, &lin.w, &mut out, n, lin.in_dim, lin.out_dim);
    add_bias_rows(&mut out, &lin.b, lin.out_dim);
    out
}

#[derive(Debug, Clone, Default)]
pub(crate) struct AttnCache {
    pub q: Vec<f64>,
    pub k: Vec<f64>,
    pub v: Vec<f64>,
    /// Softmax probabilities, `heads` blocks of `n x n`.
    pub probs: Vec<f64>,
    /// Concatenated head outputs before the output projection.
    pub concat: Vec<f64>,
}

/// Scaled dot-product multi-head attention with separate sources for the
/// query, key and value streams. All three must already be projected
/// through layer norm (or be raw tokens for the standalone ops).
pub(crate) fn attention_forward(
    q_src: &[f64],
    k_src: &[f64],
    v_src: &[f64],
    p: &AttentionParams,
    n: usize,
    cache: &mut AttnCache,
) -> Vec<f64> {
    let d = p.dim();
    let heads = p.heads;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();

    cache.q = linear_forward(q_src, &p.query, n);
    cache.k = linear_forward(k_src, &p.key, n);
    cache.v = linear_forward(v_src, &p.value, n);
    cache.probs = vec![0.0; heads * n * n];
    cache.concat = vec![0.0; n * d];

    for h in 0..heads {
        let off = h * dh;
        let probs = &mut cache.probs[h * n * n..(h + 1) * n * n];
        for i in 0..n {
            let qrow = &cache.q[i * d + off..i * d + off + dh];
            let srow = &mut probs[i * n..(i + 1) * n];
            for j in 0..n {
                let krow = &cache.k[j * d + off..j * d + off + dh];
                let mut dot = 0.0;
                for (qv, kv) in qrow.iter().zip(krow) {
                    dot += qv * kv;
                }
                srow[j] = dot * scale;
            }
            softmax_row_inplace(srow);
        }
        for i in 0..n {
            let arow = &probs[i * n..(i + 1) * n];
            let orow = &mut cache.concat[i * d + off..i * d + off + dh];
            for (j, &a) in arow.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let vrow = &cache.v[j * d + off..j * d + off + dh];
                for (o, &vv) in orow.iter_mut().zip(vrow) {
                    *o += a * vv;
                }
            }
        }
    }
    linear_forward(&cache.concat, &p.output, n)
}

fn check_token_pair(a: &TokenGrid, b: &TokenGrid, p: &AttentionParams) -> Result<usize> {
    if a.tokens() != b.tokens() || a.dim != b.dim {
        return Err(Error::invalid_input(format!(
            "token streams disagree: {}x{} vs {}x{}",
            a.tokens(),
            a.dim,
            b.tokens(),
            b.dim
        )));
    }
    if a.dim != p.dim() {
        return Err(Error::invalid_input(format!(
            "token dim {} does not match attention dim {}",
            a.dim,
            p.dim()
        )));
    }
    Ok(a.tokens())
}

/// Cross-modality attention toward the query stream:
/// `softmax(Q_a K_b^T / sqrt(d_head)) V_b` with queries from `q_tokens`
/// and keys/values from `kv_tokens`.
pub fn mha_cross(
    q_tokens: &TokenGrid,
    kv_tokens: &TokenGrid,
    params: &AttentionParams,
) -> Result<TokenGrid> {
    let n = check_token_pair(q_tokens, kv_tokens, params)?;
    let mut cache = AttnCache::default();
    let out = attention_forward(
        q_tokens.values.data(),
        kv_tokens.values.data(),
        kv_tokens.values.data(),
        params,
        n,
        &mut cache,
    );
    TokenGrid::new(
        q_tokens.rows,
        q_tokens.cols,
        q_tokens.dim,
        Tensor::from_vec_unchecked(vec![n, q_tokens.dim], out),
    )
}

/// Key-swap attention: `softmax(Q_rgb K_d^T / sqrt(d_head)) V_rgb` with
/// queries and values from the color stream and keys from depth, all
/// through the shared projections.
pub fn mha_keyswap(
    rgb_tokens: &TokenGrid,
    d_tokens: &TokenGrid,
    params: &AttentionParams,
) -> Result<TokenGrid> {
    let n = check_token_pair(rgb_tokens, d_tokens, params)?;
    let mut cache = AttnCache::default();
    let out = attention_forward(
        rgb_tokens.values.data(),
        d_tokens.values.data(),
        rgb_tokens.values.data(),
        params,
        n,
        &mut cache,
    );
    TokenGrid::new(
        rgb_tokens.rows,
        rgb_tokens.cols,
        rgb_tokens.dim,
        Tensor::from_vec_unchecked(vec![n, rgb_tokens.dim], out),
    )
}

/// Attention probabilities of a key-swap pass, one `n x n` block per head.
/// Test support for row-stochasticity and permutation checks.
pub fn keyswap_attention_probs(
    rgb_tokens: &TokenGrid,
    d_tokens: &TokenGrid,
    params: &AttentionParams,
) -> Result<Vec<f64>> {
    let n = check_token_pair(rgb_tokens, d_tokens, params)?;
    let mut cache = AttnCache::default();
    attention_forward(
        rgb_tokens.values.data(),
        d_tokens.values.data(),
        rgb_tokens.values.data(),
        params,
        n,
        &mut cache,
    );
    Ok(cache.probs)
}

/// Flattens non-overlapping patches row-major, channels innermost, and
/// projects each through the shared embedding.
pub fn patch_embed(image: &Tensor, params: &LinearParams, cfg: &EncoderConfig) -> Result<TokenGrid> {
    image.expect_rank(3, "patch_embed input")?;
    let (h, w, c) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    cfg.check_divides(h, w)?;
    let p = cfg.patch_size;
    if params.in_dim != p * p * c {
        return Err(Error::invalid_config(format!(
            "patch embedding expects {} inputs, image patches have {}",
            params.in_dim,
            p * p * c
        )));
    }
    let (rows, cols) = (h / p, w / p);
    let patches = flatten_patches(image.data(), h, w, c, p);
    let tokens = linear_forward(&patches, params, rows * cols);
    TokenGrid::new(
        rows,
        cols,
        params.out_dim,
        Tensor::from_vec_unchecked(vec![rows * cols, params.out_dim], tokens),
    )
}

/// Patch matrix: one row per patch, `p*p*c` values flattened in image
/// layout order (patch row, patch column, channel).
pub(crate) fn flatten_patches(data: &[f64], h: usize, w: usize, c: usize, p: usize) -> Vec<f64> {
    let (rows, cols) = (h / p, w / p);
    let mut out = vec![0.0; rows * cols * p * p * c];
    let plen = p * p * c;
    for pr in 0..rows {
        for pc in 0..cols {
            let base = (pr * cols + pc) * plen;
            let mut k = 0;
            for dy in 0..p {
                let y = pr * p + dy;
                for dx in 0..p {
                    let x = pc * p + dx;
                    let src = (y * w + x) * c;
                    out[base + k..base + k + c].copy_from_slice(&data[src..src + c]);
                    k += c;
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Default)]
pub(crate) struct StreamBlockCache {
    pub x_in: Vec<f64>,
    pub ln1: LnCache,
    pub y1: Vec<f64>,
    pub attn: AttnCache,
    pub x_mid: Vec<f64>,
    pub ln2: LnCache,
    pub y2: Vec<f64>,
    pub mlp_pre: Vec<f64>,
    pub mlp_act: Vec<f64>,
    pub x_out: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct StageCache {
    pub fused: StreamBlockCache,
    pub depth: Option<StreamBlockCache>,
}

#[derive(Debug, Clone)]
pub(crate) struct DecoderCache {
    pub tokens_in: Vec<f64>,
    pub pre: Vec<f64>,
    pub act: Vec<f64>,
}

/// Every intermediate of one forward pass, consumed by the backward pass.
#[derive(Debug, Clone)]
pub struct EncoderCache {
    pub(crate) rows: usize,
    pub(crate) cols: usize,
    pub(crate) height: usize,
    pub(crate) width: usize,
    pub(crate) rgb_patches: Vec<f64>,
    pub(crate) depth_patches: Option<Vec<f64>>,
    pub(crate) stages: Vec<StageCache>,
    pub(crate) decoder: DecoderCache,
}

fn check_finite(stage: usize, tag: &str, values: &[f64]) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric(format!(
            "non-finite activation in stage {stage} ({tag})"
        )));
    }
    Ok(())
}

/// Fills `x_in`, `ln1` and `y1` of a stream block cache.
fn block_ln1(
    stage_params: &crate::encoder::params::StageParams,
    x_in: Vec<f64>,
    n: usize,
    d: usize,
    cache: &mut StreamBlockCache,
) {
    cache.x_in = x_in;
    cache.y1 = layer_norm_forward(
        &cache.x_in,
        n,
        d,
        &stage_params.ln1.gain,
        &stage_params.ln1.bias,
        &mut cache.ln1,
    );
}

/// Completes a stream block whose `ln1`/`y1` is already cached: attention
/// with the given key/value sources, residual, LN2 and the MLP.
fn block_finish(
    stage_params: &crate::encoder::params::StageParams,
    k_src: &[f64],
    v_src: &[f64],
    n: usize,
    d: usize,
    stage_idx: usize,
    tag: &str,
    cache: &mut StreamBlockCache,
) -> Result<()> {
    let attn_out = attention_forward(&cache.y1, k_src, v_src, &stage_params.attn, n, &mut cache.attn);
    cache.x_mid = cache.x_in.clone();
    for (m, a) in cache.x_mid.iter_mut().zip(&attn_out) {
        *m += a;
    }
    cache.y2 = layer_norm_forward(
        &cache.x_mid,
        n,
        d,
        &stage_params.ln2.gain,
        &stage_params.ln2.bias,
        &mut cache.ln2,
    );
    cache.mlp_pre = linear_forward(&cache.y2, &stage_params.mlp_in, n);
    cache.mlp_act = cache.mlp_pre.iter().map(|&v| gelu(v)).collect();
    debug_assert_eq!(stage_params.mlp_in.out_dim, d * MLP_RATIO);
    let mlp_out = linear_forward(&cache.mlp_act, &stage_params.mlp_out, n);
    cache.x_out = cache.x_mid.clone();
    for (o, m) in cache.x_out.iter_mut().zip(&mlp_out) {
        *o += m;
    }
    check_finite(stage_idx, tag, &cache.x_out)
}

/// Full forward pass to per-pixel class logits `H x W x C_classes`.
///
/// `rgb` is `H x W x 3` in `[0, 255]`; `depth` is the stored disparity
/// grid `H x W`. In `rgb_only` mode the depth input is never read.
pub fn encoder_forward(
    rgb: &Tensor,
    depth: &Tensor,
    params: &ModelParams,
) -> Result<(Tensor, EncoderCache)> {
    let cfg = &params.cfg;
    cfg.validate()?;
    rgb.expect_rank(3, "encoder rgb input")?;
    let (h, w) = (rgb.shape()[0], rgb.shape()[1]);
    if rgb.shape()[2] != EMBED_CHANNELS {
        return Err(Error::invalid_input(format!(
            "rgb input must have {EMBED_CHANNELS} channels, got {}",
            rgb.shape()[2]
        )));
    }
    cfg.check_divides(h, w)?;
    let use_depth = cfg.fusion_mode != FusionMode::RgbOnly;
    if use_depth {
        depth.expect_rank(2, "encoder depth input")?;
        if depth.shape() != [h, w] {
            return Err(Error::invalid_input(format!(
                "depth {:?} does not match rgb {h}x{w}",
                depth.shape()
            )));
        }
    }

    let p = cfg.patch_size;
    let (rows, cols) = (h / p, w / p);
    let n = rows * cols;

    // Normalize to [-1, 1]; depth replicated across the embed channels.
    let rgb_norm: Vec<f64> = rgb.data().iter().map(|&v| v / RGB_SCALE - 1.0).collect();
    let rgb_patches = flatten_patches(&rgb_norm, h, w, EMBED_CHANNELS, p);
    let mut tokens_f = linear_forward(&rgb_patches, &params.patch, n);

    let (depth_patches, mut tokens_d) = if use_depth {
        let mut dep_norm = vec![0.0; h * w * EMBED_CHANNELS];
        for (i, &v) in depth.data().iter().enumerate() {
            let nv = v / DISP_SCALE - 1.0;
            for ch in 0..EMBED_CHANNELS {
                dep_norm[i * EMBED_CHANNELS + ch] = nv;
            }
        }
        let patches = flatten_patches(&dep_norm, h, w, EMBED_CHANNELS, p);
        let tokens = linear_forward(&patches, &params.patch, n);
        (Some(patches), Some(tokens))
    } else {
        (None, None)
    };

    let mut stages = Vec::with_capacity(cfg.num_stages());
    for (s, stage) in params.stages.iter().enumerate() {
        let d = cfg.stage_dims[s];
        let mut cache = StageCache::default();

        block_ln1(stage, std::mem::take(&mut tokens_f), n, d, &mut cache.fused);
        if let Some(xd) = tokens_d.take() {
            // The fused stream reads its keys (and values, in cross mode)
            // from the depth stream's LN1 output, so both norms run first.
            let mut depth_cache = StreamBlockCache::default();
            block_ln1(stage, xd, n, d, &mut depth_cache);

            let depth_y1 = depth_cache.y1.clone();
            let fused_y1 = cache.fused.y1.clone();
            let v_src: &[f64] = match cfg.fusion_mode {
                FusionMode::CrossDToRgb => &depth_y1,
                _ => &fused_y1,
            };
            block_finish(stage, &depth_y1, v_src, n, d, s, "fused block", &mut cache.fused)?;
            block_finish(
                stage,
                &depth_y1,
                &depth_y1,
                n,
                d,
                s,
                "depth block",
                &mut depth_cache,
            )?;

            tokens_f = cache.fused.x_out.clone();
            tokens_d = Some(depth_cache.x_out.clone());
            cache.depth = Some(depth_cache);
        } else {
            let y1 = cache.fused.y1.clone();
            block_finish(stage, &y1, &y1, n, d, s, "fused block", &mut cache.fused)?;
            tokens_f = cache.fused.x_out.clone();
        }

        if s + 1 < cfg.num_stages() {
            let tr = &params.transitions[s];
            tokens_f = linear_forward(&tokens_f, tr, n);
            check_finite(s, "transition", &tokens_f)?;
            if let Some(xd) = tokens_d.take() {
                let next = linear_forward(&xd, tr, n);
                check_finite(s, "depth transition", &next)?;
                tokens_d = Some(next);
            }
        }
        stages.push(cache);
    }

    // Decoder: MLP per token, then nearest-neighbor upsample to pixels.
    let dec_in = tokens_f;
    let pre = linear_forward(&dec_in, &params.dec_hidden, n);
    let act: Vec<f64> = pre.iter().map(|&v| gelu(v)).collect();
    let token_logits = linear_forward(&act, &params.dec_out, n);
    check_finite(cfg.num_stages() - 1, "decoder", &token_logits)?;

    let c_out = cfg.num_classes;
    let mut logits = vec![0.0; h * w * c_out];
    for pr in 0..rows {
        for pc in 0..cols {
            let t = (pr * cols + pc) * c_out;
            for dy in 0..p {
                for dx in 0..p {
                    let px = ((pr * p + dy) * w + pc * p + dx) * c_out;
                    logits[px..px + c_out].copy_from_slice(&token_logits[t..t + c_out]);
                }
            }
        }
    }

    Ok((
        Tensor::from_vec_unchecked(vec![h, w, c_out], logits),
        EncoderCache {
            rows,
            cols,
            height: h,
            width: w,
            rgb_patches,
            depth_patches,
            stages,
            decoder: DecoderCache {
                tokens_in: dec_in,
                pre,
                act,
            },
        },
    ))
}
