use ndarray::{Array3, Axis};
use rand::Rng;

use crate::error::{Result, SsrError};
use crate::spectral::BandStack;

/// Redraws allowed before one band is forced on.
pub const MASK_RETRIES: usize = 8;

/// Binary keep pattern over the extended band axis.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSample {
    pub gamma: Vec<bool>,
    pub rate: f64,
}

impl MaskSample {
    pub fn keep_all(n_bands: usize) -> Self {
        MaskSample {
            gamma: vec![true; n_bands],
            rate: 0.0,
        }
    }

    /// Each band is kept independently with probability `1 − rate`. An
    /// all-dropped draw is redrawn; after [`MASK_RETRIES`] failures a single
    /// uniformly chosen band is kept.
    pub fn draw<R: Rng + ?Sized>(n_bands: usize, rate: f64, rng: &mut R) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(SsrError::InvalidArgument(format!(
                "mask rate {rate} outside [0, 1)"
            )));
        }
        if n_bands == 0 {
            return Err(SsrError::InvalidArgument("no bands to mask".into()));
        }
        for _ in 0..=MASK_RETRIES {
            let gamma: Vec<bool> = (0..n_bands).map(|_| !rng.random_bool(rate)).collect();
            if gamma.iter().any(|&g| g) {
                return Ok(MaskSample { gamma, rate });
            }
        }
        let mut gamma = vec![false; n_bands];
        gamma[rng.random_range(0..n_bands)] = true;
        Ok(MaskSample { gamma, rate })
    }

    pub fn n_bands(&self) -> usize {
        self.gamma.len()
    }

    pub fn n_kept(&self) -> usize {
        self.gamma.iter().filter(|&&g| g).count()
    }

    pub fn is_identity(&self) -> bool {
        self.gamma.iter().all(|&g| g)
    }

    /// `γ` shaped `[1, B, 1]` for broadcasting over a band stack.
    pub fn as_tensor(&self) -> ndarray::ArrayD<f64> {
        Array3::from_shape_fn((1, self.n_bands(), 1), |(_, b, _)| {
            if self.gamma[b] {
                1.0
            } else {
                0.0
            }
        })
        .into_dyn()
    }

    /// Zeroes dropped bands in place.
    pub fn apply(&self, data: &mut Array3<f64>) -> Result<()> {
        if data.len_of(Axis(1)) != self.n_bands() {
            return Err(SsrError::shape("mask bands", self.n_bands(), data.len_of(Axis(1))));
        }
        for (b, &keep) in self.gamma.iter().enumerate() {
            if !keep {
                data.index_axis_mut(Axis(1), b).fill(0.0);
            }
        }
        Ok(())
    }
}

/// Masked copy of `stack` and the mask that produced it.
pub fn spectral_band_mask<R: Rng + ?Sized>(
    stack: &BandStack,
    rate: f64,
    rng: &mut R,
) -> Result<(BandStack, MaskSample)> {
    let sample = MaskSample::draw(stack.n_ext_bands(), rate, rng)?;
    let mut masked = stack.clone();
    sample.apply(&mut masked.data)?;
    Ok((masked, sample))
}
