//! Frequency-domain style transfer for color and disparity images.
//!
//! An image is decomposed per channel into amplitude and phase. Style is
//! carried by the low-frequency amplitudes, so transfer replaces the
//! amplitudes inside a beta-controlled window centered on the zero
//! frequency with an averaged target amplitude profile, keeps the source
//! phase everywhere and inverts back to the spatial domain.

use log::warn;

use crate::error::{Error, Result};
use crate::numerics::dft::{dft2, idft2_full, ComplexGrid};
use crate::numerics::tensor::Tensor;

/// Per-channel amplitude/phase decomposition of an image.
#[derive(Debug, Clone)]
pub struct SpectralImage {
    pub height: usize,
    pub width: usize,
    /// One `(amplitude, phase)` pair of `H x W` grids per channel.
    pub channels: Vec<(Tensor, Tensor)>,
}

/// Style transfer settings for one modality.
#[derive(Debug, Clone, Copy)]
pub struct StyleConfig {
    /// Fraction of each spectral axis replaced, in `[0, 1]`.
    pub beta: f64,
    /// Clamp bounds applied to the recomposed image.
    pub value_range: (f64, f64),
}

impl StyleConfig {
    pub fn new(beta: f64, value_range: (f64, f64)) -> Result<Self> {
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::invalid_config(format!(
                "style beta {beta} outside [0, 1]"
            )));
        }
        if !(value_range.0 < value_range.1) {
            return Err(Error::invalid_config(format!(
                "style value range ({}, {}) must satisfy min < max",
                value_range.0, value_range.1
            )));
        }
        Ok(Self { beta, value_range })
    }

    /// 8-bit color convention.
    pub fn color(beta: f64) -> Result<Self> {
        Self::new(beta, (0.0, 255.0))
    }

    /// 16-bit disparity convention.
    pub fn disparity(beta: f64) -> Result<Self> {
        Self::new(beta, (0.0, 65535.0))
    }
}

/// Averaged per-channel target amplitude spectrum.
#[derive(Debug, Clone)]
pub struct AmplitudeProfile {
    pub height: usize,
    pub width: usize,
    pub channels: Vec<Tensor>,
    pub sample_count: usize,
}

/// Diagnostics from one stylize call.
#[derive(Debug, Clone, Default)]
pub struct StylizeReport {
    /// Largest imaginary residue discarded during recomposition.
    pub max_imag_residue: f64,
    /// Set when the residue exceeded the warning tolerance, which signals
    /// a non-symmetric amplitude edit.
    pub residue_warning: bool,
}

/// Residue above this level during recomposition is reported as a warning.
pub const RECOMPOSE_WARN_TOL: f64 = 1e-4;

fn image_dims(image: &Tensor) -> Result<(usize, usize, usize)> {
    image.expect_rank(3, "spectral image")?;
    let s = image.shape();
    if s[0] == 0 || s[1] == 0 || s[2] == 0 {
        return Err(Error::invalid_input("spectral image must be non-empty"));
    }
    Ok((s[0], s[1], s[2]))
}

fn extract_channel(image: &Tensor, c: usize) -> Tensor {
    let (h, w, nc) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    let mut data = Vec::with_capacity(h * w);
    for i in 0..h * w {
        data.push(image.data()[i * nc + c]);
    }
    Tensor::from_vec_unchecked(vec![h, w], data)
}

/// Decomposes an `H x W x C` image into per-channel amplitude and phase.
pub fn decompose(image: &Tensor) -> Result<SpectralImage> {
    let (h, w, nc) = image_dims(image)?;
    let mut channels = Vec::with_capacity(nc);
    for c in 0..nc {
        let spec = dft2(&extract_channel(image, c))?;
        let amp = Tensor::from_vec_unchecked(vec![h, w], spec.amplitude());
        let phase = Tensor::from_vec_unchecked(vec![h, w], spec.phase());
        channels.push((amp, phase));
    }
    Ok(SpectralImage {
        height: h,
        width: w,
        channels,
    })
}

/// Recomposes amplitude/phase channels back to a spatial image, reporting
/// the discarded imaginary residue.
pub fn recompose_with_report(spec: &SpectralImage) -> Result<(Tensor, StylizeReport)> {
    let (h, w) = (spec.height, spec.width);
    let nc = spec.channels.len();
    if nc == 0 || h == 0 || w == 0 {
        return Err(Error::invalid_input("recompose requires a non-empty spectrum"));
    }
    let mut report = StylizeReport::default();
    let mut out = vec![0.0; h * w * nc];
    for (c, (amp, phase)) in spec.channels.iter().enumerate() {
        if amp.shape() != [h, w] || phase.shape() != [h, w] {
            return Err(Error::invalid_input(
                "amplitude/phase grids disagree with spectral image dims",
            ));
        }
        let grid = ComplexGrid {
            height: h,
            width: w,
            re: amp
                .data()
                .iter()
                .zip(phase.data())
                .map(|(a, p)| a * p.cos())
                .collect(),
            im: amp
                .data()
                .iter()
                .zip(phase.data())
                .map(|(a, p)| a * p.sin())
                .collect(),
        };
        let (channel, resid) = idft2_full(&grid)?;
        report.max_imag_residue = report.max_imag_residue.max(resid);
        for i in 0..h * w {
            out[i * nc + c] = channel.data()[i];
        }
    }
    if report.max_imag_residue > RECOMPOSE_WARN_TOL {
        report.residue_warning = true;
        warn!(
            "recompose: imaginary residue {:.3e} above {:.0e}; non-symmetric amplitude edit",
            report.max_imag_residue, RECOMPOSE_WARN_TOL
        );
    }
    Ok((
        Tensor::from_vec_unchecked(vec![h, w, nc], out),
        report,
    ))
}

/// Recomposes a spectral image; the real part is returned and any residue
/// warning is logged.
pub fn recompose(spec: &SpectralImage) -> Result<Tensor> {
    recompose_with_report(spec).map(|(t, _)| t)
}

/// Boolean mask that is true on a centered rectangle of
/// `round(beta*H) x round(beta*W)` around the zero frequency. The
/// rectangle is laid out in DC-centered coordinates (the center crop of
/// the shifted spectrum) and mapped back to unshifted indices.
pub fn low_freq_window(height: usize, width: usize, beta: f64) -> Result<Vec<bool>> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::invalid_config(format!(
            "low_freq_window beta {beta} outside [0, 1]"
        )));
    }
    let rows = ((beta * height as f64).round() as usize).min(height);
    let cols = ((beta * width as f64).round() as usize).min(width);
    let row_in = axis_window(height, rows);
    let col_in = axis_window(width, cols);
    let mut mask = vec![false; height * width];
    for u in 0..height {
        if !row_in[u] {
            continue;
        }
        for v in 0..width {
            mask[u * width + v] = col_in[v];
        }
    }
    Ok(mask)
}

/// Marks the `count` indices whose DC-centered coordinate falls in
/// `[-floor(count/2), ceil(count/2))`.
fn axis_window(extent: usize, count: usize) -> Vec<bool> {
    let mut included = vec![false; extent];
    if count == 0 {
        return included;
    }
    let lo = -((count / 2) as i64);
    let hi = count as i64 + lo; // exclusive
    for (u, slot) in included.iter_mut().enumerate() {
        // Centered coordinate in [-floor(extent/2), ceil(extent/2)).
        let mut cu = u as i64;
        if cu >= (extent as i64 + 1) / 2 {
            cu -= extent as i64;
        }
        *slot = cu >= lo && cu < hi;
    }
    included
}

/// Element-wise mean of the amplitude spectra of `targets`.
pub fn target_amplitude_profile(targets: &[Tensor]) -> Result<AmplitudeProfile> {
    let first = targets
        .first()
        .ok_or_else(|| Error::invalid_input("target_amplitude_profile: empty target list"))?;
    let (h, w, nc) = image_dims(first)?;
    let mut sums = vec![Tensor::zeros(vec![h, w]); nc];
    for t in targets {
        if t.shape() != first.shape() {
            return Err(Error::invalid_input(format!(
                "target_amplitude_profile: shape {:?} differs from {:?}",
                t.shape(),
                first.shape()
            )));
        }
        let spec = decompose(t)?;
        for (sum, (amp, _)) in sums.iter_mut().zip(&spec.channels) {
            for (s, a) in sum.data_mut().iter_mut().zip(amp.data()) {
                *s += a;
            }
        }
    }
    let inv = 1.0 / targets.len() as f64;
    for sum in &mut sums {
        for v in sum.data_mut() {
            *v *= inv;
        }
    }
    Ok(AmplitudeProfile {
        height: h,
        width: w,
        channels: sums,
        sample_count: targets.len(),
    })
}

/// Amplitude swap with source phase kept, before clamping.
///
/// `beta = 0` short-circuits to an exact copy of the source: an empty
/// window replaces nothing, so no transform round trip is performed.
pub fn stylize_unclamped(
    source: &Tensor,
    profile: &AmplitudeProfile,
    cfg: &StyleConfig,
) -> Result<(Tensor, StylizeReport)> {
    let (h, w, nc) = image_dims(source)?;
    if profile.height != h || profile.width != w || profile.channels.len() != nc {
        return Err(Error::invalid_input(format!(
            "stylize: profile {}x{}x{} does not match source {}x{}x{}",
            profile.height,
            profile.width,
            profile.channels.len(),
            h,
            w,
            nc
        )));
    }
    let window = low_freq_window(h, w, cfg.beta)?;
    if window.iter().all(|&m| !m) {
        return Ok((source.clone(), StylizeReport::default()));
    }
    let mut spec = decompose(source)?;
    for (c, (amp, _)) in spec.channels.iter_mut().enumerate() {
        let target = &profile.channels[c];
        for (i, &inside) in window.iter().enumerate() {
            if inside {
                amp.data_mut()[i] = target.data()[i];
            }
        }
    }
    recompose_with_report(&spec)
}

/// Full style transfer: amplitude swap, then clamp to the modality range.
pub fn stylize(source: &Tensor, profile: &AmplitudeProfile, cfg: &StyleConfig) -> Result<Tensor> {
    let (mut out, _) = stylize_unclamped(source, profile, cfg)?;
    let (lo, hi) = cfg.value_range;
    for v in out.data_mut() {
        *v = v.clamp(lo, hi);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::Rng;

    fn random_image(h: usize, w: usize, c: usize, seed: u64, lo: f64, hi: f64) -> Tensor {
        let mut rng = Rng::new(seed);
        let data = (0..h * w * c).map(|_| rng.uniform(lo, hi)).collect();
        Tensor::from_vec_unchecked(vec![h, w, c], data)
    }

    #[test]
    fn impulse_has_unit_amplitude_zero_phase() {
        let mut img = Tensor::zeros(vec![4, 4, 1]);
        img.data_mut()[0] = 1.0;
        let spec = decompose(&img).unwrap();
        let (amp, phase) = &spec.channels[0];
        for i in 0..16 {
            assert!((amp.data()[i] - 1.0).abs() < 1e-12);
            assert!(phase.data()[i].abs() < 1e-12);
        }
    }

    #[test]
    fn constant_image_is_dc_only() {
        let c = 3.0;
        let img = Tensor::filled(vec![4, 6, 1], c);
        let spec = decompose(&img).unwrap();
        let (amp, phase) = &spec.channels[0];
        assert!((amp.data()[0] - c * 24.0).abs() < 1e-9);
        assert!(phase.data()[0].abs() < 1e-12);
        for i in 1..24 {
            assert!(amp.data()[i].abs() < 1e-9);
        }
    }

    #[test]
    fn amplitude_is_conjugate_symmetric_for_real_input() {
        let img = random_image(6, 8, 2, 5, -2.0, 2.0);
        let spec = decompose(&img).unwrap();
        for (amp, _) in &spec.channels {
            for u in 0..6 {
                for v in 0..8 {
                    let m = amp.at2((6 - u) % 6, (8 - v) % 8);
                    assert!((amp.at2(u, v) - m).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn recompose_round_trip() {
        let img = random_image(8, 8, 3, 11, 0.0, 255.0);
        let back = recompose(&decompose(&img).unwrap()).unwrap();
        assert!(img.max_abs_diff(&back) < 1e-9);
    }

    #[test]
    fn zero_amplitude_recomposes_to_zero() {
        let img = random_image(4, 4, 1, 3, -1.0, 1.0);
        let mut spec = decompose(&img).unwrap();
        spec.channels[0].0 = Tensor::zeros(vec![4, 4]);
        let out = recompose(&spec).unwrap();
        assert!(out.data().iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn doubling_amplitude_doubles_image() {
        let img = random_image(8, 8, 1, 17, -1.0, 1.0);
        let mut spec = decompose(&img).unwrap();
        for v in spec.channels[0].0.data_mut() {
            *v *= 2.0;
        }
        let out = recompose(&spec).unwrap();
        for (o, i) in out.data().iter().zip(img.data()) {
            assert!((o - 2.0 * i).abs() < 1e-9);
        }
    }

    #[test]
    fn window_endpoints() {
        assert!(low_freq_window(8, 8, 0.0).unwrap().iter().all(|&m| !m));
        assert!(low_freq_window(8, 8, 1.0).unwrap().iter().all(|&m| m));
        assert_eq!(
            low_freq_window(8, 8, 1.0).unwrap().iter().filter(|&&m| m).count(),
            64
        );
    }

    #[test]
    fn window_half_beta_8x8_is_centered_4x4() {
        let mask = low_freq_window(8, 8, 0.5).unwrap();
        assert_eq!(mask.iter().filter(|&&m| m).count(), 16);
        // Centered rows/cols {-2,-1,0,1} map to unshifted {6,7,0,1}.
        let inside = [6usize, 7, 0, 1];
        for u in 0..8 {
            for v in 0..8 {
                let expect = inside.contains(&u) && inside.contains(&v);
                assert_eq!(mask[u * 8 + v], expect, "({u},{v})");
            }
        }
    }

    #[test]
    fn window_monotone_in_beta() {
        for &(h, w) in &[(8usize, 8usize), (7, 9), (16, 12)] {
            let mut prev = low_freq_window(h, w, 0.0).unwrap();
            for i in 1..=10 {
                let beta = i as f64 / 10.0;
                let cur = low_freq_window(h, w, beta).unwrap();
                for (p, c) in prev.iter().zip(&cur) {
                    assert!(!p | c, "window not monotone at beta={beta}");
                }
                prev = cur;
            }
        }
    }

    #[test]
    fn window_symmetric_for_odd_extents() {
        // Odd window extents are negation-symmetric in centered coordinates.
        let (h, w) = (16usize, 16usize);
        let beta = 5.0 / 16.0; // round -> 5 rows, 5 cols
        let mask = low_freq_window(h, w, beta).unwrap();
        for u in 0..h {
            for v in 0..w {
                let nu = (h - u) % h;
                let nv = (w - v) % w;
                assert_eq!(mask[u * w + v], mask[nu * w + nv]);
            }
        }
    }

    #[test]
    fn profile_of_single_image_is_its_amplitude() {
        let img = random_image(8, 8, 1, 23, 0.0, 10.0);
        let profile = target_amplitude_profile(std::slice::from_ref(&img)).unwrap();
        let spec = decompose(&img).unwrap();
        assert!(profile.channels[0].max_abs_diff(&spec.channels[0].0) < 1e-12);
        assert_eq!(profile.sample_count, 1);
    }

    #[test]
    fn profile_of_identical_images_is_common_amplitude() {
        let img = random_image(8, 8, 2, 29, 0.0, 10.0);
        let profile = target_amplitude_profile(&[img.clone(), img.clone()]).unwrap();
        let spec = decompose(&img).unwrap();
        for c in 0..2 {
            assert!(profile.channels[c].max_abs_diff(&spec.channels[c].0) < 1e-9);
        }
    }

    #[test]
    fn profile_matches_direct_mean() {
        let a = random_image(8, 8, 1, 31, 0.0, 5.0);
        let b = random_image(8, 8, 1, 37, 0.0, 5.0);
        let profile = target_amplitude_profile(&[a.clone(), b.clone()]).unwrap();
        // Independent pass: average the two amplitude grids directly.
        let sa = decompose(&a).unwrap();
        let sb = decompose(&b).unwrap();
        for i in 0..64 {
            let mean = 0.5 * (sa.channels[0].0.data()[i] + sb.channels[0].0.data()[i]);
            assert!((profile.channels[0].data()[i] - mean).abs() < 1e-9);
        }
    }

    #[test]
    fn profile_rejects_empty_and_mismatched() {
        assert!(target_amplitude_profile(&[]).is_err());
        let a = random_image(8, 8, 1, 1, 0.0, 1.0);
        let b = random_image(4, 4, 1, 2, 0.0, 1.0);
        assert!(target_amplitude_profile(&[a, b]).is_err());
    }

    #[test]
    fn beta_zero_is_exact_identity() {
        let img = random_image(8, 8, 3, 41, 0.0, 255.0);
        let profile = target_amplitude_profile(&[random_image(8, 8, 3, 43, 0.0, 255.0)]).unwrap();
        let cfg = StyleConfig::color(0.0).unwrap();
        let (out, report) = stylize_unclamped(&img, &profile, &cfg).unwrap();
        assert_eq!(out, img);
        assert!(!report.residue_warning);
    }

    #[test]
    fn self_profile_is_identity_within_tolerance() {
        let img = random_image(8, 8, 1, 47, 0.0, 255.0);
        let profile = target_amplitude_profile(std::slice::from_ref(&img)).unwrap();
        for beta in [0.25, 0.5, 1.0] {
            let cfg = StyleConfig::color(beta).unwrap();
            let (out, _) = stylize_unclamped(&img, &profile, &cfg).unwrap();
            assert!(img.max_abs_diff(&out) < 1e-6, "beta={beta}");
        }
    }

    #[test]
    fn stylize_shape_mismatch_rejected() {
        let img = random_image(8, 8, 1, 3, 0.0, 1.0);
        let profile = target_amplitude_profile(&[random_image(4, 4, 1, 5, 0.0, 1.0)]).unwrap();
        let cfg = StyleConfig::color(0.5).unwrap();
        assert!(stylize(&img, &profile, &cfg).is_err());
    }

    #[test]
    fn phase_preserved_and_high_frequencies_kept() {
        let (h, w) = (16usize, 16usize);
        let src = random_image(h, w, 1, 51, 0.0, 255.0);
        let tgt = random_image(h, w, 1, 53, 0.0, 255.0);
        let profile = target_amplitude_profile(std::slice::from_ref(&tgt)).unwrap();
        let beta = 5.0 / 16.0; // odd 5x5 window keeps the edit symmetric
        let cfg = StyleConfig::color(beta).unwrap();
        let (out, report) = stylize_unclamped(&src, &profile, &cfg).unwrap();
        assert!(report.max_imag_residue < 1e-6);

        let window = low_freq_window(h, w, beta).unwrap();
        let out_spec = decompose(&out).unwrap();
        let src_spec = decompose(&src).unwrap();
        for i in 0..h * w {
            let (oa, op) = (
                out_spec.channels[0].0.data()[i],
                out_spec.channels[0].1.data()[i],
            );
            let (sa, sp) = (
                src_spec.channels[0].0.data()[i],
                src_spec.channels[0].1.data()[i],
            );
            if window[i] {
                assert!((oa - profile.channels[0].data()[i]).abs() < 1e-6);
            } else {
                assert!((oa - sa).abs() < 1e-9, "high-frequency amplitude changed");
            }
            if oa > 1e-9 {
                // Compare angles modulo 2*pi.
                let mut d = (op - sp).abs();
                d = d.min((2.0 * std::f64::consts::PI - d).abs());
                assert!(d < 1e-6, "phase changed at {i}");
            }
        }
    }

    #[test]
    fn stylize_idempotent_on_matched_styles() {
        let (h, w) = (16usize, 16usize);
        let src = random_image(h, w, 1, 61, 0.0, 255.0);
        let tgt = random_image(h, w, 1, 67, 0.0, 255.0);
        let profile = target_amplitude_profile(std::slice::from_ref(&tgt)).unwrap();
        let cfg = StyleConfig::color(5.0 / 16.0).unwrap();
        let (once, _) = stylize_unclamped(&src, &profile, &cfg).unwrap();
        let (twice, _) = stylize_unclamped(&once, &profile, &cfg).unwrap();
        assert!(once.max_abs_diff(&twice) < 1e-6);
    }

    #[test]
    fn clamp_applies_value_range() {
        let img = Tensor::filled(vec![4, 4, 1], 250.0);
        let bright = Tensor::filled(vec![4, 4, 1], 400.0);
        let profile = target_amplitude_profile(std::slice::from_ref(&bright)).unwrap();
        let cfg = StyleConfig::color(1.0).unwrap();
        let out = stylize(&img, &profile, &cfg).unwrap();
        assert!(out.data().iter().all(|&v| (0.0..=255.0).contains(&v)));
    }
}
