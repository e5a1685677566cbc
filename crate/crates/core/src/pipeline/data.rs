//! Dataset carrier types for the training pipeline.

use std::sync::atomic::{AtomicBool, Ordering};

use crate::error::{Error, Result};
use crate::losses::IGNORE_LABEL;
use crate::numerics::tensor::Tensor;

/// One RGB-D sample: color image, stored disparity, validity grid and an
/// optional label grid. Disparity zero marks an invalid measurement.
#[derive(Debug, Clone)]
pub struct ImageSample {
    pub rgb: Tensor,
    pub disparity: Tensor,
    pub valid: Vec<bool>,
    pub label: Option<Vec<u32>>,
}

impl ImageSample {
    pub fn new(
        rgb: Tensor,
        disparity: Tensor,
        valid: Vec<bool>,
        label: Option<Vec<u32>>,
        num_classes: usize,
    ) -> Result<Self> {
        rgb.expect_rank(3, "sample rgb")?;
        disparity.expect_rank(2, "sample disparity")?;
        let (h, w) = (rgb.shape()[0], rgb.shape()[1]);
        if rgb.shape()[2] != 3 {
            return Err(Error::invalid_input("sample rgb must have 3 channels"));
        }
        if disparity.shape() != [h, w] || valid.len() != h * w {
            return Err(Error::invalid_input("sample grids disagree on spatial size"));
        }
        if disparity.data().iter().any(|&d| d < 0.0) {
            return Err(Error::invalid_input("sample disparity must be non-negative"));
        }
        if let Some(lbl) = &label {
            if lbl.len() != h * w {
                return Err(Error::invalid_input("sample label grid size mismatch"));
            }
            if lbl
                .iter()
                .any(|&l| l != IGNORE_LABEL && l as usize >= num_classes)
            {
                return Err(Error::invalid_input(format!(
                    "sample label outside [0, {num_classes}) and not the ignore sentinel"
                )));
            }
        }
        Ok(Self {
            rgb,
            disparity,
            valid,
            label,
        })
    }

    /// Builds a sample deriving validity from `disparity > 0`.
    pub fn from_parts(
        rgb: Tensor,
        disparity: Tensor,
        label: Option<Vec<u32>>,
        num_classes: usize,
    ) -> Result<Self> {
        let valid = disparity.data().iter().map(|&d| d > 0.0).collect();
        Self::new(rgb, disparity, valid, label, num_classes)
    }

    pub fn height(&self) -> usize {
        self.rgb.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.rgb.shape()[1]
    }

    /// Horizontal mirror of every grid.
    pub fn flipped(&self) -> ImageSample {
        let (h, w) = (self.height(), self.width());
        let mut rgb = vec![0.0; h * w * 3];
        let mut disp = vec![0.0; h * w];
        let mut valid = vec![false; h * w];
        let mut label = self.label.as_ref().map(|_| vec![0u32; h * w]);
        for y in 0..h {
            for x in 0..w {
                let src = y * w + x;
                let dst = y * w + (w - 1 - x);
                for c in 0..3 {
                    rgb[dst * 3 + c] = self.rgb.data()[src * 3 + c];
                }
                disp[dst] = self.disparity.data()[src];
                valid[dst] = self.valid[src];
                if let (Some(out), Some(inp)) = (label.as_mut(), self.label.as_ref()) {
                    out[dst] = inp[src];
                }
            }
        }
        ImageSample {
            rgb: Tensor::from_vec_unchecked(vec![h, w, 3], rgb),
            disparity: Tensor::from_vec_unchecked(vec![h, w], disp),
            valid,
            label,
        }
    }
}

/// A sample store. Poisoning invalidates the store: any later access
/// panics, which the source-freeness instrumentation test relies on to
/// prove that adaptation never touches source data.
#[derive(Debug)]
pub struct Dataset {
    samples: Vec<ImageSample>,
    poisoned: AtomicBool,
}

impl Clone for Dataset {
    fn clone(&self) -> Self {
        Self {
            samples: self.samples.clone(),
            poisoned: AtomicBool::new(self.poisoned.load(Ordering::SeqCst)),
        }
    }
}

impl Dataset {
    pub fn new(samples: Vec<ImageSample>) -> Self {
        Self {
            samples,
            poisoned: AtomicBool::new(false),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Marks the store invalid. Every subsequent sample access panics.
    pub fn poison(&self) {
        self.poisoned.store(true, Ordering::SeqCst);
    }

    pub fn is_poisoned(&self) -> bool {
        self.poisoned.load(Ordering::SeqCst)
    }

    pub fn get(&self, idx: usize) -> &ImageSample {
        assert!(
            !self.is_poisoned(),
            "dataset store was poisoned; sample access is forbidden"
        );
        &self.samples[idx]
    }

    /// True when every sample carries a label grid.
    pub fn fully_labeled(&self) -> bool {
        !self.is_empty() && (0..self.len()).all(|i| self.get(i).label.is_some())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(h: usize, w: usize) -> ImageSample {
        ImageSample::from_parts(
            Tensor::filled(vec![h, w, 3], 128.0),
            Tensor::filled(vec![h, w], 5.0),
            Some(vec![1; h * w]),
            3,
        )
        .unwrap()
    }

    #[test]
    fn flip_is_involutive_and_mirrors() {
        let mut s = sample(2, 3);
        s.rgb.data_mut()[0] = 9.0; // pixel (0,0) channel 0
        s.disparity.data_mut()[2] = 0.0; // pixel (0,2) invalid
        let s = ImageSample::from_parts(s.rgb, s.disparity, s.label, 3).unwrap();
        let f = s.flipped();
        assert_eq!(f.rgb.at3(0, 2, 0), 9.0);
        assert!(!f.valid[0]);
        let back = f.flipped();
        assert_eq!(back.rgb.data(), s.rgb.data());
        assert_eq!(back.valid, s.valid);
    }

    #[test]
    fn rejects_bad_labels_and_negative_disparity() {
        let rgb = Tensor::filled(vec![2, 2, 3], 0.0);
        let disp = Tensor::filled(vec![2, 2], 1.0);
        assert!(ImageSample::from_parts(rgb.clone(), disp.clone(), Some(vec![7; 4]), 3).is_err());
        let neg = Tensor::new(vec![2, 2], vec![1.0, -1.0, 0.0, 0.0]);
        assert!(neg.is_ok()); // tensor itself allows it
        assert!(ImageSample::from_parts(rgb, neg.unwrap(), None, 3).is_err());
    }

    #[test]
    #[should_panic(expected = "poisoned")]
    fn poisoned_store_panics_on_access() {
        let ds = Dataset::new(vec![sample(2, 2)]);
        ds.poison();
        let _ = ds.get(0);
    }
}
