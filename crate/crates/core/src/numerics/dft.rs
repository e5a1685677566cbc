//! Complex 2D discrete Fourier transform.
//!
//! `dft2` is the unnormalized forward transform
//! `F(u,v) = sum_h sum_w x(h,w) * exp(-j*2*pi*(h*u/H + w*v/W))`,
//! `idft2` its inverse with `1/(H*W)` normalization. The fast path runs
//! row-column FFTs; [`naive_dft2`] evaluates the defining double sum
//! directly and exists so tests can cross-check the fast path against an
//! implementation with no shared code.

use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

/// Frequency-space signal of one channel: separate real/imaginary grids.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexGrid {
    pub height: usize,
    pub width: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ComplexGrid {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            re: vec![0.0; height * width],
            im: vec![0.0; height * width],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.height * self.width;
        if self.re.len() != n || self.im.len() != n {
            return Err(Error::invalid_input(format!(
                "complex grid {}x{} has re/im lengths {}/{}",
                self.height,
                self.width,
                self.re.len(),
                self.im.len()
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn idx(&self, u: usize, v: usize) -> usize {
        u * self.width + v
    }

    /// Amplitude `|F|` at every frequency.
    pub fn amplitude(&self) -> Vec<f64> {
        self.re
            .iter()
            .zip(&self.im)
            .map(|(r, i)| r.hypot(*i))
            .collect()
    }

    /// Phase angle in `(-pi, pi]` at every frequency.
    pub fn phase(&self) -> Vec<f64> {
        self.re
            .iter()
            .zip(&self.im)
            .map(|(r, i)| {
                let p = i.atan2(*r);
                if p == -std::f64::consts::PI {
                    std::f64::consts::PI
                } else {
                    p
                }
            })
            .collect()
    }

    pub fn max_abs_diff(&self, other: &ComplexGrid) -> f64 {
        assert_eq!((self.height, self.width), (other.height, other.width));
        self.re
            .iter()
            .zip(&other.re)
            .chain(self.im.iter().zip(&other.im))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn grid_as_channel(channel: &Tensor) -> Result<(usize, usize)> {
    channel.expect_rank(2, "dft2 input")?;
    let (h, w) = (channel.shape()[0], channel.shape()[1]);
    if h == 0 || w == 0 {
        return Err(Error::invalid_input("dft2 requires a non-empty grid"));
    }
    Ok((h, w))
}

fn fft2_buffer(height: usize, width: usize, buf: &mut [Complex<f64>], inverse: bool) {
    let mut planner = FftPlanner::new();
    let row_fft = if inverse {
        planner.plan_fft_inverse(width)
    } else {
        planner.plan_fft_forward(width)
    };
    for row in buf.chunks_exact_mut(width) {
        row_fft.process(row);
    }
    // Columns via transpose, FFT rows, transpose back.
    let mut t = vec![Complex::new(0.0, 0.0); buf.len()];
    for r in 0..height {
        for c in 0..width {
            t[c * height + r] = buf[r * width + c];
        }
    }
    let col_fft = if inverse {
        planner.plan_fft_inverse(height)
    } else {
        planner.plan_fft_forward(height)
    };
    for col in t.chunks_exact_mut(height) {
        col_fft.process(col);
    }
    for c in 0..width {
        for r in 0..height {
            buf[r * width + c] = t[c * height + r];
        }
    }
}

/// Unnormalized forward 2D DFT of a real `H x W` grid.
pub fn dft2(channel: &Tensor) -> Result<ComplexGrid> {
    let (h, w) = grid_as_channel(channel)?;
    let mut buf: Vec<Complex<f64>> = channel
        .data()
        .iter()
        .map(|&x| Complex::new(x, 0.0))
        .collect();
    fft2_buffer(h, w, &mut buf, false);
    Ok(ComplexGrid {
        height: h,
        width: w,
        re: buf.iter().map(|c| c.re).collect(),
        im: buf.iter().map(|c| c.im).collect(),
    })
}

/// Inverse 2D DFT with `1/(H*W)` normalization. Returns the real part and
/// the largest absolute imaginary residue, leaving the tolerance policy to
/// the caller.
pub fn idft2_full(spectrum: &ComplexGrid) -> Result<(Tensor, f64)> {
    spectrum.validate()?;
    let (h, w) = (spectrum.height, spectrum.width);
    if h == 0 || w == 0 {
        return Err(Error::invalid_input("idft2 requires a non-empty spectrum"));
    }
    let mut buf: Vec<Complex<f64>> = spectrum
        .re
        .iter()
        .zip(&spectrum.im)
        .map(|(&r, &i)| Complex::new(r, i))
        .collect();
    fft2_buffer(h, w, &mut buf, true);
    let norm = 1.0 / (h * w) as f64;
    let mut max_imag = 0.0f64;
    let data: Vec<f64> = buf
        .iter()
        .map(|c| {
            max_imag = max_imag.max((c.im * norm).abs());
            c.re * norm
        })
        .collect();
    Ok((Tensor::from_vec_unchecked(vec![h, w], data), max_imag))
}

/// Tolerance on the imaginary residue of [`idft2`] for spectra of real origin.
pub const IDFT_IMAG_TOL: f64 = 1e-6;

/// Inverse 2D DFT of a spectrum claimed to originate from a real signal.
/// Errors if the imaginary residue exceeds [`IDFT_IMAG_TOL`].
pub fn idft2(spectrum: &ComplexGrid) -> Result<Tensor> {
    let (grid, max_imag) = idft2_full(spectrum)?;
    if max_imag >= IDFT_IMAG_TOL {
        return Err(Error::numeric(format!(
            "idft2 imaginary residue {max_imag:.3e} exceeds {IDFT_IMAG_TOL:.0e} \
             on a spectrum claimed real-origin"
        )));
    }
    Ok(grid)
}

/// Direct `O(H^2 W^2)` evaluation of the transform definition. Slow and
/// deliberately independent of the FFT path; reference oracle for tests.
pub fn naive_dft2(channel: &Tensor) -> Result<ComplexGrid> {
    let (height, width) = grid_as_channel(channel)?;
    let x = channel.data();
    let mut out = ComplexGrid::zeros(height, width);
    let tau = 2.0 * std::f64::consts::PI;
    for u in 0..height {
        for v in 0..width {
            let mut re = 0.0;
            let mut im = 0.0;
            for h in 0..height {
                for w in 0..width {
                    let angle =
                        -tau * (h as f64 * u as f64 / height as f64 + w as f64 * v as f64 / width as f64);
                    let xv = x[h * width + w];
                    re += xv * angle.cos();
                    im += xv * angle.sin();
                }
            }
            let i = out.idx(u, v);
            out.re[i] = re;
            out.im[i] = im;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::Rng;

    fn random_grid(h: usize, w: usize, seed: u64) -> Tensor {
        let mut rng = Rng::new(seed);
        let data = (0..h * w).map(|_| rng.uniform(-1.0, 1.0)).collect();
        Tensor::from_vec_unchecked(vec![h, w], data)
    }

    #[test]
    fn constant_grid_is_dc_only() {
        let c = 2.5;
        let (h, w) = (5, 7);
        let spec = dft2(&Tensor::filled(vec![h, w], c)).unwrap();
        assert!((spec.re[0] - c * (h * w) as f64).abs() < 1e-9);
        assert!(spec.im[0].abs() < 1e-9);
        for i in 1..h * w {
            assert!(spec.re[i].hypot(spec.im[i]) < 1e-9, "entry {i} not zero");
        }
    }

    #[test]
    fn impulse_transforms_to_all_ones() {
        let mut t = Tensor::zeros(vec![4, 6]);
        t.data_mut()[0] = 1.0;
        let spec = dft2(&t).unwrap();
        for i in 0..24 {
            assert!((spec.re[i] - 1.0).abs() < 1e-12);
            assert!(spec.im[i].abs() < 1e-12);
        }
    }

    #[test]
    fn matches_naive_oracle_on_random_8x8() {
        let x = random_grid(8, 8, 31);
        let fast = dft2(&x).unwrap();
        let slow = naive_dft2(&x).unwrap();
        assert!(fast.max_abs_diff(&slow) < 1e-9);
    }

    #[test]
    fn matches_naive_oracle_on_odd_sizes() {
        let x = random_grid(5, 9, 77);
        let fast = dft2(&x).unwrap();
        let slow = naive_dft2(&x).unwrap();
        assert!(fast.max_abs_diff(&slow) < 1e-9);
    }

    #[test]
    fn round_trip_16x16() {
        let x = random_grid(16, 16, 2);
        let back = idft2(&dft2(&x).unwrap()).unwrap();
        assert!(x.max_abs_diff(&back) < 1e-9);
    }

    #[test]
    fn zero_spectrum_inverts_to_zero() {
        let back = idft2(&ComplexGrid::zeros(3, 3)).unwrap();
        assert!(back.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dc_only_spectrum_inverts_to_ones() {
        let (h, w) = (4, 4);
        let mut spec = ComplexGrid::zeros(h, w);
        spec.re[0] = (h * w) as f64;
        let back = idft2(&spec).unwrap();
        for &v in back.data() {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_grid_rejected() {
        assert!(dft2(&Tensor::zeros(vec![0, 4])).is_err());
    }

    #[test]
    fn asymmetric_spectrum_rejected_by_strict_inverse() {
        // A lone off-DC bin of a 4x4 grid is not conjugate-symmetric, so the
        // inverse has a genuinely complex result.
        let mut spec = ComplexGrid::zeros(4, 4);
        spec.re[1] = 8.0;
        spec.im[1] = 8.0;
        let err = idft2(&spec).unwrap_err();
        assert!(matches!(err, crate::error::Error::Numeric(_)));
        // The relaxed variant reports the residue instead.
        let (_, resid) = idft2_full(&spec).unwrap();
        assert!(resid > IDFT_IMAG_TOL);
    }

    #[test]
    fn linearity() {
        let x = random_grid(8, 8, 100);
        let y = random_grid(8, 8, 101);
        let (a, b) = (1.7, -0.4);
        let combo = Tensor::from_vec_unchecked(
            vec![8, 8],
            x.data()
                .iter()
                .zip(y.data())
                .map(|(xv, yv)| a * xv + b * yv)
                .collect(),
        );
        let fc = dft2(&combo).unwrap();
        let fx = dft2(&x).unwrap();
        let fy = dft2(&y).unwrap();
        for i in 0..64 {
            assert!((fc.re[i] - (a * fx.re[i] + b * fy.re[i])).abs() < 1e-9);
            assert!((fc.im[i] - (a * fx.im[i] + b * fy.im[i])).abs() < 1e-9);
        }
    }

    #[test]
    fn parseval() {
        let x = random_grid(12, 10, 55);
        let spec = dft2(&x).unwrap();
        let spatial: f64 = x.data().iter().map(|v| v * v).sum();
        let freq: f64 = spec
            .re
            .iter()
            .zip(&spec.im)
            .map(|(r, i)| r * r + i * i)
            .sum::<f64>()
            / (12.0 * 10.0);
        assert!((spatial - freq).abs() / spatial.abs() < 1e-6);
    }

    #[test]
    fn conjugate_symmetry_for_real_input() {
        let (h, w) = (6, 8);
        let x = random_grid(h, w, 13);
        let spec = dft2(&x).unwrap();
        for u in 0..h {
            for v in 0..w {
                let um = (h - u) % h;
                let vm = (w - v) % w;
                assert!((spec.re[spec.idx(u, v)] - spec.re[spec.idx(um, vm)]).abs() < 1e-9);
                assert!((spec.im[spec.idx(u, v)] + spec.im[spec.idx(um, vm)]).abs() < 1e-9);
            }
        }
    }
}
