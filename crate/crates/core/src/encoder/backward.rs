//! Analytic backward pass through the decoder, the shared stages (with
//! mode-specific attention wiring) and the patch embedding.
//!
//! Gradients accumulate into a zero-initialized [`ModelParams`] with the
//! same structure as the model, so the optimizer, EMA and gradient
//! checking all reuse the flat parameter view.

use crate::encoder::config::{FusionMode, EMBED_CHANNELS};
use crate::encoder::forward::{gelu_prime, EncoderCache, DISP_SCALE, RGB_SCALE};
use crate::encoder::params::{AttentionParams, LinearParams, ModelParams};
use crate::error::{Error, Result};
use crate::numerics::linalg::{col_sums_acc, matmul_a_bt_acc, matmul_at_b_acc};
use crate::numerics::tensor::Tensor;

use super::forward::{AttnCache, LnCache, StreamBlockCache};

/// Gradients with respect to the raw image inputs.
#[derive(Debug, Clone)]
pub struct InputGrads {
    /// `H x W x 3`, in the raw `[0, 255]` color domain.
    pub rgb: Tensor,
    /// `H x W`, in the raw disparity domain. Zero in `rgb_only` mode.
    pub depth: Tensor,
}

/// Backward through `y = x W + b`: accumulates `dW`, `db` and returns `dx`.
fn linear_backward(
    x: &[f64],
    dy: &[f64],
    lin: &LinearParams,
    grad: &mut LinearParams,
    n: usize,
) -> Vec<f64> {
    matmul_at_b_acc(x, dy, &mut grad.w, n, lin.in_dim, lin.out_dim);
    col_sums_acc(dy, &mut grad.b, lin.out_dim);
    let mut dx = vec![0.0; n * lin.in_dim];
    matmul_a_bt_acc(dy, &lin.w, &mut dx, n, lin.out_dim, lin.in_dim);
    dx
}

/// Backward through layer normalization, accumulating gain/bias grads.
fn layer_norm_backward(
    dy: &[f64],
    cache: &LnCache,
    gain: &[f64],
    dgain: &mut [f64],
    dbias: &mut [f64],
    n: usize,
    d: usize,
) -> Vec<f64> {
    let mut dx = vec![0.0; n * d];
    let inv_d = 1.0 / d as f64;
    for t in 0..n {
        let row_dy = &dy[t * d..(t + 1) * d];
        let row_xh = &cache.xhat[t * d..(t + 1) * d];
        let inv = cache.inv_std[t];
        let mut mean_dyh = 0.0;
        let mut mean_dyh_xh = 0.0;
        for i in 0..d {
            let dyh = row_dy[i] * gain[i];
            mean_dyh += dyh;
            mean_dyh_xh += dyh * row_xh[i];
            dgain[i] += row_dy[i] * row_xh[i];
            dbias[i] += row_dy[i];
        }
        mean_dyh *= inv_d;
        mean_dyh_xh *= inv_d;
        for i in 0..d {
            let dyh = row_dy[i] * gain[i];
            dx[t * d + i] = inv * (dyh - mean_dyh - row_xh[i] * mean_dyh_xh);
        }
    }
    dx
}

/// Gradients flowing out of one attention call, split by source stream.
struct AttnSourceGrads {
    d_q_src: Vec<f64>,
    d_k_src: Vec<f64>,
    d_v_src: Vec<f64>,
}

/// Backward through multi-head attention with distinct Q/K/V sources.
fn attention_backward(
    d_out: &[f64],
    q_src: &[f64],
    k_src: &[f64],
    v_src: &[f64],
    cache: &AttnCache,
    p: &AttentionParams,
    grad: &mut AttentionParams,
    n: usize,
) -> AttnSourceGrads {
    let d = p.dim();
    let heads = p.heads;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();

    // Output projection.
    let d_concat = linear_backward(&cache.concat, d_out, &p.output, &mut grad.output, n);

    let mut dq = vec![0.0; n * d];
    let mut dk = vec![0.0; n * d];
    let mut dv = vec![0.0; n * d];

    for h in 0..heads {
        let off = h * dh;
        let probs = &cache.probs[h * n * n..(h + 1) * n * n];
        for i in 0..n {
            let do_row = &d_concat[i * d + off..i * d + off + dh];
            let a_row = &probs[i * n..(i + 1) * n];
            // dA = dO V^T, then softmax backward to pre-scores.
            let mut da = vec![0.0; n];
            for (j, da_j) in da.iter_mut().enumerate() {
                let v_row = &cache.v[j * d + off..j * d + off + dh];
                let mut acc = 0.0;
                for (dv_, vv) in do_row.iter().zip(v_row) {
                    acc += dv_ * vv;
                }
                *da_j = acc;
            }
            // dV += A^T dO (row i contributes a_ij * dO_i to dV_j).
            for (j, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let dv_row = &mut dv[j * d + off..j * d + off + dh];
                for (dvv, &dov) in dv_row.iter_mut().zip(do_row) {
                    *dvv += a * dov;
                }
            }
            let dot: f64 = da.iter().zip(a_row).map(|(g, a)| g * a).sum();
            // dS_j = a_j (da_j - dot), then scale.
            for j in 0..n {
                let ds = a_row[j] * (da[j] - dot) * scale;
                if ds == 0.0 {
                    continue;
                }
                let k_row = &cache.k[j * d + off..j * d + off + dh];
                let q_row = &cache.q[i * d + off..i * d + off + dh];
                let dq_row = &mut dq[i * d + off..i * d + off + dh];
                for (dqv, &kv) in dq_row.iter_mut().zip(k_row) {
                    *dqv += ds * kv;
                }
                let dk_row = &mut dk[j * d + off..j * d + off + dh];
                for (dkv, &qv) in dk_row.iter_mut().zip(q_row) {
                    *dkv += ds * qv;
                }
            }
        }
    }

    AttnSourceGrads {
        d_q_src: linear_backward(q_src, &dq, &p.query, &mut grad.query, n),
        d_k_src: linear_backward(k_src, &dk, &p.key, &mut grad.key, n),
        d_v_src: linear_backward(v_src, &dv, &p.value, &mut grad.value, n),
    }
}

/// Backward through the MLP half of a block (LN2 + MLP + residual).
/// Takes `d x_out`, returns `d x_mid`.
fn mlp_block_backward(
    d_out: &[f64],
    cache: &StreamBlockCache,
    stage: &crate::encoder::params::StageParams,
    grad: &mut crate::encoder::params::StageParams,
    n: usize,
    d: usize,
) -> Vec<f64> {
    let d_act = linear_backward(&cache.mlp_act, d_out, &stage.mlp_out, &mut grad.mlp_out, n);
    let d_pre: Vec<f64> = d_act
        .iter()
        .zip(&cache.mlp_pre)
        .map(|(g, &x)| g * gelu_prime(x))
        .collect();
    let d_y2 = linear_backward(&cache.y2, &d_pre, &stage.mlp_in, &mut grad.mlp_in, n);
    let mut d_mid = layer_norm_backward(
        &d_y2,
        &cache.ln2,
        &stage.ln2.gain,
        &mut grad.ln2.gain,
        &mut grad.ln2.bias,
        n,
        d,
    );
    for (m, o) in d_mid.iter_mut().zip(d_out) {
        *m += o; // residual path
    }
    d_mid
}

/// Backward through one full forward pass.
///
/// `loss_grad` is `d loss / d logits`, `H x W x C`. Returns parameter
/// gradients (same structure as the model) and input-image gradients.
pub fn encoder_backward(
    loss_grad: &Tensor,
    cache: &EncoderCache,
    params: &ModelParams,
) -> Result<(ModelParams, InputGrads)> {
    let cfg = &params.cfg;
    loss_grad.expect_rank(3, "loss gradient")?;
    let (h, w, c_out) = (
        loss_grad.shape()[0],
        loss_grad.shape()[1],
        loss_grad.shape()[2],
    );
    if h != cache.height || w != cache.width || c_out != cfg.num_classes {
        return Err(Error::invalid_input(format!(
            "loss gradient {h}x{w}x{c_out} does not match cached forward \
             {}x{} with {} classes",
            cache.height, cache.width, cfg.num_classes
        )));
    }
    if cache.stages.len() != cfg.num_stages() {
        return Err(Error::invalid_input(
            "cache does not match model: wrong stage count",
        ));
    }
    let use_depth = cfg.fusion_mode != FusionMode::RgbOnly;
    if use_depth && cache.stages.iter().any(|s| s.depth.is_none()) {
        return Err(Error::invalid_input(
            "cache does not match model: depth stream missing",
        ));
    }

    let mut grads = ModelParams::zeros_like(cfg)?;
    let p = cfg.patch_size;
    let (rows, cols) = (cache.rows, cache.cols);
    let n = rows * cols;

    // Nearest-neighbor upsample backward: sum pixel grads per token.
    let mut d_token_logits = vec![0.0; n * c_out];
    for pr in 0..rows {
        for pc in 0..cols {
            let t = (pr * cols + pc) * c_out;
            for dy in 0..p {
                for dx in 0..p {
                    let px = ((pr * p + dy) * w + pc * p + dx) * c_out;
                    for k in 0..c_out {
                        d_token_logits[t + k] += loss_grad.data()[px + k];
                    }
                }
            }
        }
    }

    // Decoder.
    let d_act = linear_backward(
        &cache.decoder.act,
        &d_token_logits,
        &params.dec_out,
        &mut grads.dec_out,
        n,
    );
    let d_pre: Vec<f64> = d_act
        .iter()
        .zip(&cache.decoder.pre)
        .map(|(g, &x)| g * gelu_prime(x))
        .collect();
    let mut d_fused = linear_backward(
        &cache.decoder.tokens_in,
        &d_pre,
        &params.dec_hidden,
        &mut grads.dec_hidden,
        n,
    );
    let mut d_depth: Vec<f64> = vec![0.0; if use_depth { d_fused.len() } else { 0 }];

    // Stages in reverse. `d_fused`/`d_depth` hold grads of each stream's
    // x_out at the current stage (after undoing any transition).
    for s in (0..cfg.num_stages()).rev() {
        let d = cfg.stage_dims[s];
        let stage = &params.stages[s];
        let st_cache = &cache.stages[s];

        if s + 1 < cfg.num_stages() {
            // Undo transition s: x_next = x_out * W + b for both streams.
            let tr = &params.transitions[s];
            let d_next_f = std::mem::take(&mut d_fused);
            d_fused = linear_backward(
                &st_cache.fused.x_out,
                &d_next_f,
                tr,
                &mut grads.transitions[s],
                n,
            );
            if use_depth {
                let d_next_d = std::mem::take(&mut d_depth);
                d_depth = linear_backward(
                    &st_cache.depth.as_ref().unwrap().x_out,
                    &d_next_d,
                    tr,
                    &mut grads.transitions[s],
                    n,
                );
            }
        }

        // Split mutable access: grads.stages[s] vs other fields is fine.
        let gstage = &mut grads.stages[s];

        // MLP halves.
        let d_mid_f = mlp_block_backward(&d_fused, &st_cache.fused, stage, gstage, n, d);
        let d_mid_d = if use_depth {
            Some(mlp_block_backward(
                &d_depth,
                st_cache.depth.as_ref().unwrap(),
                stage,
                gstage,
                n,
                d,
            ))
        } else {
            None
        };

        // Attention halves. Residual: d x_in starts as d x_mid.
        let mut d_in_f = d_mid_f.clone();
        let mut d_y1_f = vec![0.0; n * d];
        let (mut d_in_d, mut d_y1_d) = match &d_mid_d {
            Some(dm) => (dm.clone(), vec![0.0; n * d]),
            None => (Vec::new(), Vec::new()),
        };

        let fused = &st_cache.fused;
        match cfg.fusion_mode {
            FusionMode::RgbOnly => {
                let g = attention_backward(
                    &d_mid_f, &fused.y1, &fused.y1, &fused.y1, &fused.attn, &stage.attn,
                    &mut gstage.attn, n,
                );
                for i in 0..n * d {
                    d_y1_f[i] += g.d_q_src[i] + g.d_k_src[i] + g.d_v_src[i];
                }
            }
            FusionMode::KeySwap => {
                let depth = st_cache.depth.as_ref().unwrap();
                let g = attention_backward(
                    &d_mid_f, &fused.y1, &depth.y1, &fused.y1, &fused.attn, &stage.attn,
                    &mut gstage.attn, n,
                );
                for i in 0..n * d {
                    d_y1_f[i] += g.d_q_src[i] + g.d_v_src[i];
                    d_y1_d[i] += g.d_k_src[i];
                }
            }
            FusionMode::CrossDToRgb => {
                let depth = st_cache.depth.as_ref().unwrap();
                let g = attention_backward(
                    &d_mid_f, &fused.y1, &depth.y1, &depth.y1, &fused.attn, &stage.attn,
                    &mut gstage.attn, n,
                );
                for i in 0..n * d {
                    d_y1_f[i] += g.d_q_src[i];
                    d_y1_d[i] += g.d_k_src[i] + g.d_v_src[i];
                }
            }
        }

        if let Some(dm) = &d_mid_d {
            let depth = st_cache.depth.as_ref().unwrap();
            let g = attention_backward(
                dm, &depth.y1, &depth.y1, &depth.y1, &depth.attn, &stage.attn,
                &mut gstage.attn, n,
            );
            for i in 0..n * d {
                d_y1_d[i] += g.d_q_src[i] + g.d_k_src[i] + g.d_v_src[i];
            }
        }

        // LN1 per stream (shared parameters accumulate from both).
        let dx = layer_norm_backward(
            &d_y1_f,
            &fused.ln1,
            &stage.ln1.gain,
            &mut gstage.ln1.gain,
            &mut gstage.ln1.bias,
            n,
            d,
        );
        for (a, b) in d_in_f.iter_mut().zip(&dx) {
            *a += b;
        }
        if use_depth {
            let depth = st_cache.depth.as_ref().unwrap();
            let dx = layer_norm_backward(
                &d_y1_d,
                &depth.ln1,
                &stage.ln1.gain,
                &mut gstage.ln1.gain,
                &mut gstage.ln1.bias,
                n,
                d,
            );
            for (a, b) in d_in_d.iter_mut().zip(&dx) {
                *a += b;
            }
        }

        d_fused = d_in_f;
        if use_depth {
            d_depth = d_in_d;
        }
    }

    // Patch embedding (shared between modalities).
    let d_rgb_patches = linear_backward(
        &cache.rgb_patches,
        &d_fused,
        &params.patch,
        &mut grads.patch,
        n,
    );
    let d_depth_patches = if use_depth {
        Some(linear_backward(
            cache.depth_patches.as_ref().unwrap(),
            &d_depth,
            &params.patch,
            &mut grads.patch,
            n,
        ))
    } else {
        None
    };

    // Un-flatten patches back to image layout and undo input scaling.
    let mut d_rgb = vec![0.0; h * w * EMBED_CHANNELS];
    scatter_patches(&d_rgb_patches, &mut d_rgb, h, w, EMBED_CHANNELS, p);
    for v in d_rgb.iter_mut() {
        *v /= RGB_SCALE;
    }
    let mut d_depth_img = vec![0.0; h * w];
    if let Some(dp) = d_depth_patches {
        let mut d_norm = vec![0.0; h * w * EMBED_CHANNELS];
        scatter_patches(&dp, &mut d_norm, h, w, EMBED_CHANNELS, p);
        for i in 0..h * w {
            let mut acc = 0.0;
            for ch in 0..EMBED_CHANNELS {
                acc += d_norm[i * EMBED_CHANNELS + ch];
            }
            d_depth_img[i] = acc / DISP_SCALE;
        }
    }

    Ok((
        grads,
        InputGrads {
            rgb: Tensor::from_vec_unchecked(vec![h, w, EMBED_CHANNELS], d_rgb),
            depth: Tensor::from_vec_unchecked(vec![h, w], d_depth_img),
        },
    ))
}

/// Inverse of `flatten_patches`: adds patch-matrix grads back onto the
/// image grid.
fn scatter_patches(patches: &[f64], image: &mut [f64], h: usize, w: usize, c: usize, p: usize) {
    let (rows, cols) = (h / p, w / p);
    let plen = p * p * c;
    for pr in 0..rows {
        for pc in 0..cols {
            let base = (pr * cols + pc) * plen;
            let mut k = 0;
            for dy in 0..p {
                let y = pr * p + dy;
                for dx in 0..p {
                    let x = pc * p + dx;
                    let dst = (y * w + x) * c;
                    for ch in 0..c {
                        image[dst + ch] += patches[base + k + ch];
                    }
                    k += c;
                }
            }
        }
    }
}
