//! Synthetic two-domain RGB-D benchmark.
//!
//! Source scenes are clean geometric renders: flat class colors, exact
//! disparity, no missing measurements. Target scenes share the same
//! geometry distribution but get a hue-shifted palette, high-frequency
//! texture, a global disparity gain, additive disparity noise and
//! zeroed-out holes. Labels are generated for both splits; the target
//! labels exist for evaluation only.

use misfit_core::numerics::{Rng, Tensor};
use misfit_core::pipeline::{Dataset, ImageSample};
use misfit_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// Class ids of the benchmark.
pub const CLASS_NAMES: [&str; 5] = ["background", "ground", "box", "ball", "pole"];
pub const NUM_CLASSES: usize = 5;

const SPLIT_SALT_TARGET: u64 = 0x5441_5247; // distinct stream per split

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Source,
    Target,
}

/// Scene generation knobs. Target-domain corruptions are no-ops for the
/// source split.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToySceneSpec {
    pub image_size: usize,
    /// Flat RGB color per class in the source domain.
    pub source_palette: [[u8; 3]; NUM_CLASSES],
    /// Hue rotation (degrees) applied to the palette in the target domain.
    pub hue_shift_deg: f64,
    /// Amplitude of per-pixel uniform texture noise on target color.
    pub texture_amp: f64,
    /// Probability that a target disparity pixel is dropped to 0 (invalid).
    pub hole_prob: f64,
    /// Sigma of additive Gaussian noise on target disparity.
    pub disp_noise_sigma: f64,
    /// Global disparity gain of the target sensor.
    pub disp_gain: f64,
    /// Stored-disparity range [lo, hi] per class for object placement.
    pub depth_ranges: [[f64; 2]; NUM_CLASSES],
    pub min_objects: usize,
    pub max_objects: usize,
    pub seed: u64,
}

impl Default for ToySceneSpec {
    fn default() -> Self {
        Self {
            image_size: 64,
            source_palette: [
                [92, 148, 212],  // background sky
                [118, 96, 72],   // ground
                [206, 58, 54],   // box
                [232, 204, 58],  // ball
                [64, 182, 96],   // pole
            ],
            hue_shift_deg: 150.0,
            texture_amp: 26.0,
            hole_prob: 0.25,
            disp_noise_sigma: 350.0,
            disp_gain: 0.85,
            depth_ranges: [
                [80.0, 140.0],       // sky: far, still valid
                [1500.0, 14000.0],   // ground gradient
                [3000.0, 12000.0],   // box
                [3500.0, 13000.0],   // ball
                [2500.0, 11000.0],   // pole
            ],
            min_objects: 2,
            max_objects: 5,
            seed: 0,
        }
    }
}

impl ToySceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < 16 {
            return Err(Error::invalid_config("image_size must be at least 16"));
        }
        if !(0.0..=1.0).contains(&self.hole_prob) {
            return Err(Error::invalid_config("hole_prob outside [0,1]"));
        }
        if self.disp_noise_sigma < 0.0 || self.texture_amp < 0.0 || self.disp_gain <= 0.0 {
            return Err(Error::invalid_config("corruption magnitudes must be non-negative"));
        }
        if self.min_objects > self.max_objects {
            return Err(Error::invalid_config("min_objects exceeds max_objects"));
        }
        for (i, a) in self.source_palette.iter().enumerate() {
            for b in self.source_palette.iter().skip(i + 1) {
                if a == b {
                    return Err(Error::invalid_config("palette colors must be distinct per class"));
                }
            }
        }
        for r in &self.depth_ranges {
            if !(r[0] > 0.0 && r[0] < r[1] && r[1] < 65535.0) {
                return Err(Error::invalid_config("depth ranges must satisfy 0 < lo < hi < 65535"));
            }
        }
        Ok(())
    }

    /// Per-class flat colors for a domain; the target palette is the
    /// source palette rotated in hue.
    pub fn palette(&self, domain: Domain) -> [[f64; 3]; NUM_CLASSES] {
        let mut out = [[0.0; 3]; NUM_CLASSES];
        for (o, c) in out.iter_mut().zip(&self.source_palette) {
            let rgb = [c[0] as f64, c[1] as f64, c[2] as f64];
            *o = match domain {
                Domain::Source => rgb,
                Domain::Target => rotate_hue(rgb, self.hue_shift_deg),
            };
        }
        out
    }
}

/// Hue rotation in HSV space, inputs and outputs in [0, 255].
fn rotate_hue(rgb: [f64; 3], degrees: f64) -> [f64; 3] {
    let (r, g, b) = (rgb[0] / 255.0, rgb[1] / 255.0, rgb[2] / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let mut h = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * (((g - b) / delta).rem_euclid(6.0))
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    let v = max;
    h = (h + degrees).rem_euclid(360.0);

    let c = v * s;
    let x = c * (1.0 - ((h / 60.0).rem_euclid(2.0) - 1.0).abs());
    let m = v - c;
    let (rp, gp, bp) = match h {
        h if h < 60.0 => (c, x, 0.0),
        h if h < 120.0 => (x, c, 0.0),
        h if h < 180.0 => (0.0, c, x),
        h if h < 240.0 => (0.0, x, c),
        h if h < 300.0 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    [(rp + m) * 255.0, (gp + m) * 255.0, (bp + m) * 255.0]
}

struct SceneObject {
    class: usize,
    disparity: f64,
    kind: usize, // 0 box, 1 ball, 2 pole
    cx: i64,
    base_row: i64,
    size: f64,
}

/// Renders one scene. Geometry is drawn first (far to near), then the
/// domain-specific appearance and corruption are applied.
pub fn synth_sample(spec: &ToySceneSpec, domain: Domain, index: usize) -> Result<ImageSample> {
    spec.validate()?;
    let salt = match domain {
        Domain::Source => 0,
        Domain::Target => SPLIT_SALT_TARGET,
    };
    // Per-image derived stream: seed XOR image index (split-salted).
    let mut rng = Rng::new((spec.seed ^ salt) ^ index as u64);
    let n = spec.image_size;
    let palette = spec.palette(domain);

    let mut label = vec![0u32; n * n];
    let mut disp = vec![0.0f64; n * n];
    let mut rgb = vec![0.0f64; n * n * 3];

    // Sky and ground.
    let horizon = (n as f64 * rng.uniform(0.40, 0.55)) as usize;
    let sky_disp = rng.uniform(spec.depth_ranges[0][0], spec.depth_ranges[0][1]);
    let ground_near = spec.depth_ranges[1][1] * rng.uniform(0.9, 1.0);
    let ground_far = spec.depth_ranges[1][0] * rng.uniform(1.0, 1.1);
    for y in 0..n {
        for x in 0..n {
            let i = y * n + x;
            if y < horizon {
                label[i] = 0;
                disp[i] = sky_disp;
            } else {
                label[i] = 1;
                let t = (y - horizon) as f64 / (n - horizon) as f64;
                disp[i] = ground_far + t * (ground_near - ground_far);
            }
        }
    }

    // Objects, far to near so closer ones occlude.
    let count = spec.min_objects + rng.below(spec.max_objects - spec.min_objects + 1);
    let mut objects = Vec::with_capacity(count);
    for _ in 0..count {
        let kind = rng.below(3);
        let class = 2 + kind;
        let range = spec.depth_ranges[class];
        let disparity = rng.uniform(range[0], range[1]);
        let scale = (disparity / 8000.0).clamp(0.45, 1.8);
        let size = match kind {
            0 => rng.uniform(4.0, 8.0) * scale,  // box half-extent
            1 => rng.uniform(3.5, 7.0) * scale,  // ball radius
            _ => rng.uniform(9.0, 16.0) * scale, // pole height
        };
        let base_row = rng.uniform(horizon as f64 + 3.0, n as f64 - 2.0) as i64;
        let cx = rng.below(n) as i64;
        objects.push(SceneObject {
            class,
            disparity,
            kind,
            cx,
            base_row,
            size,
        });
    }
    objects.sort_by(|a, b| a.disparity.partial_cmp(&b.disparity).unwrap());

    let mut paint = |x: i64, y: i64, class: usize, d: f64| {
        if x >= 0 && y >= 0 && (x as usize) < n && (y as usize) < n {
            let i = y as usize * n + x as usize;
            label[i] = class as u32;
            disp[i] = d;
        }
    };
    for o in &objects {
        match o.kind {
            0 => {
                let half = o.size as i64;
                for y in o.base_row - 2 * half..=o.base_row {
                    for x in o.cx - half..=o.cx + half {
                        paint(x, y, o.class, o.disparity);
                    }
                }
            }
            1 => {
                let r = o.size;
                let cy = o.base_row - r as i64;
                for dy in -(r as i64)..=r as i64 {
                    for dx in -(r as i64)..=r as i64 {
                        if (dx * dx + dy * dy) as f64 <= r * r {
                            paint(o.cx + dx, cy + dy, o.class, o.disparity);
                        }
                    }
                }
            }
            _ => {
                let height = o.size as i64;
                let half_w = 1;
                for y in o.base_row - height..=o.base_row {
                    for x in o.cx - half_w..=o.cx + half_w {
                        paint(x, y, o.class, o.disparity);
                    }
                }
            }
        }
    }

    // Appearance: flat palette colors, per-object brightness handled by a
    // vertical shade on background classes.
    for y in 0..n {
        for x in 0..n {
            let i = y * n + x;
            let color = palette[label[i] as usize];
            let shade = if label[i] <= 1 {
                (y as f64 / n as f64 - 0.5) * 24.0
            } else {
                0.0
            };
            for ch in 0..3 {
                rgb[i * 3 + ch] = (color[ch] + shade).clamp(0.0, 255.0);
            }
        }
    }

    // Target-domain corruption.
    if domain == Domain::Target {
        for v in disp.iter_mut() {
            *v *= spec.disp_gain;
            if spec.disp_noise_sigma > 0.0 {
                *v += rng.normal(0.0, spec.disp_noise_sigma);
            }
            *v = v.clamp(1.0, 60000.0);
        }
        for v in disp.iter_mut() {
            if spec.hole_prob > 0.0 && rng.chance(spec.hole_prob) {
                *v = 0.0;
            }
        }
        if spec.texture_amp > 0.0 {
            for v in rgb.iter_mut() {
                *v = (*v + rng.uniform(-spec.texture_amp, spec.texture_amp)).clamp(0.0, 255.0);
            }
        }
    }

    // Quantize to the raster domains so in-memory samples match files.
    for v in rgb.iter_mut() {
        *v = v.round().clamp(0.0, 255.0);
    }
    for v in disp.iter_mut() {
        *v = v.round().clamp(0.0, 65535.0);
    }

    ImageSample::from_parts(
        Tensor::from_vec_unchecked(vec![n, n, 3], rgb),
        Tensor::from_vec_unchecked(vec![n, n], disp),
        Some(label),
        NUM_CLASSES,
    )
}

/// In-memory split synthesis.
pub fn synth_dataset(spec: &ToySceneSpec, domain: Domain, count: usize) -> Result<Dataset> {
    let samples: Result<Vec<ImageSample>> =
        (0..count).map(|i| synth_sample(spec, domain, i)).collect();
    Ok(Dataset::new(samples?))
}
