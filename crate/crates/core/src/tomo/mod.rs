//! Desk-scale 2D parallel-beam CT: geometry, images, sinograms, the
//! Joseph projector, phantoms, dose scaling and filtered backprojection.

mod fbp;
pub mod io;
mod phantom;
mod projector;

pub use fbp::fbp;
pub use io::{load_image, read_pgm};
pub use phantom::{shepp_logan, SHEPP_LOGAN_ELLIPSES};
pub use projector::Projector;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::poisson_stats::PoissonDist;

/// Parallel-beam scan over `num_angles` equispaced angles in `[0, pi)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScanGeometry {
    pub image_size: usize,
    pub num_angles: usize,
    pub num_bins: usize,
    /// Detector bin width in pixel units.
    pub bin_spacing: f64,
}

impl ScanGeometry {
    /// Default detector: `ceil(sqrt(2) n)` bins of one pixel each.
    pub fn new(image_size: usize, num_angles: usize) -> Result<Self> {
        let num_bins = (std::f64::consts::SQRT_2 * image_size as f64).ceil() as usize;
        Self::with_detector(image_size, num_angles, num_bins, 1.0)
    }

    pub fn with_detector(
        image_size: usize,
        num_angles: usize,
        num_bins: usize,
        bin_spacing: f64,
    ) -> Result<Self> {
        if image_size == 0 || num_angles == 0 || num_bins == 0 {
            return Err(Error::InvalidParameter(
                "image size, angle count and bin count must be positive".into(),
            ));
        }
        if !(bin_spacing > 0.0 && bin_spacing.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "bin spacing must be > 0, got {bin_spacing}"
            )));
        }
        Ok(Self {
            image_size,
            num_angles,
            num_bins,
            bin_spacing,
        })
    }

    /// `k pi / num_angles`.
    pub fn angle(&self, k: usize) -> f64 {
        k as f64 * std::f64::consts::PI / self.num_angles as f64
    }

    /// Signed detector coordinate of the centre of bin `b`.
    pub fn bin_center(&self, b: usize) -> f64 {
        (b as f64 - (self.num_bins as f64 - 1.0) / 2.0) * self.bin_spacing
    }

    pub fn num_pixels(&self) -> usize {
        self.image_size * self.image_size
    }

    pub fn sinogram_len(&self) -> usize {
        self.num_angles * self.num_bins
    }
}

/// Inscribed-circle field of view of an `n x n` grid, row-major.
pub fn fov_mask(n_side: usize) -> Vec<bool> {
    let o = (n_side as f64 - 1.0) / 2.0;
    let r2 = (n_side as f64 / 2.0).powi(2);
    (0..n_side * n_side)
        .map(|i| {
            let (r, c) = (i / n_side, i % n_side);
            let x = c as f64 - o;
            let y = o - r as f64;
            x * x + y * y <= r2
        })
        .collect()
}

/// Square image, row-major, with its circular field of view.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    n_side: usize,
    pixels: Vec<f64>,
    fov: Vec<bool>,
}

impl Image {
    pub fn new(n_side: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != n_side * n_side {
            return Err(Error::ShapeMismatch(format!(
                "{} pixels for a {n_side}x{n_side} image",
                pixels.len()
            )));
        }
        Ok(Self {
            n_side,
            pixels,
            fov: fov_mask(n_side),
        })
    }

    pub fn zeros(n_side: usize) -> Self {
        Self {
            n_side,
            pixels: vec![0.0; n_side * n_side],
            fov: fov_mask(n_side),
        }
    }

    /// `value` on the field of view, zero outside.
    pub fn constant_on_fov(n_side: usize, value: f64) -> Self {
        let fov = fov_mask(n_side);
        let pixels = fov.iter().map(|&m| if m { value } else { 0.0 }).collect();
        Self {
            n_side,
            pixels,
            fov,
        }
    }

    pub fn n_side(&self) -> usize {
        self.n_side
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    pub fn fov_mask(&self) -> &[bool] {
        &self.fov
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.n_side + col]
    }

    /// Zeroes every pixel outside the field of view.
    pub fn mask_to_fov(&mut self) {
        for (p, &m) in self.pixels.iter_mut().zip(&self.fov) {
            if !m {
                *p = 0.0;
            }
        }
    }

    /// Min-max rescale to `[0, 1]`; a constant image maps to zeros.
    pub fn rescale_unit(&mut self) {
        let (lo, hi) = self
            .pixels
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &p| (lo.min(p), hi.max(p)));
        // Spans at rounding level (e.g. a resampled constant) count as flat.
        if !(hi - lo > 1e-12 * hi.abs().max(lo.abs())) {
            self.pixels.iter_mut().for_each(|p| *p = 0.0);
            return;
        }
        let span = hi - lo;
        self.pixels.iter_mut().for_each(|p| *p = (*p - lo) / span);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SinogramKind {
    Expected,
    Counts,
}

/// `num_angles x num_bins` array, row-major by angle.
#[derive(Clone, Debug, PartialEq)]
pub struct Sinogram {
    pub num_angles: usize,
    pub num_bins: usize,
    pub values: Vec<f64>,
    pub kind: SinogramKind,
}

impl Sinogram {
    pub fn new(
        num_angles: usize,
        num_bins: usize,
        values: Vec<f64>,
        kind: SinogramKind,
    ) -> Result<Self> {
        if values.len() != num_angles * num_bins {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {num_angles}x{num_bins} sinogram",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidParameter(format!("sinogram entry {i} is negative")));
        }
        if kind == SinogramKind::Counts {
            if let Some(i) = values.iter().position(|v| v.fract() != 0.0) {
                return Err(Error::NonIntegerCounts(i));
            }
        }
        Ok(Self {
            num_angles,
            num_bins,
            values,
            kind,
        })
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Multiplies every entry by `factor` (keeps the kind).
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * factor).collect(),
            ..self.clone()
        }
    }
}

/// Expected line integrals `A x` (dose excluded).
pub fn forward(projector: &Projector, img: &Image) -> Result<Sinogram> {
    let geom = projector.geometry().ok_or_else(|| {
        Error::InvalidParameter("forward needs a projector built from a scan geometry".into())
    })?;
    if geom.image_size != img.n_side() {
        return Err(Error::ShapeMismatch(format!(
            "projector for {}^2 images applied to {}^2",
            geom.image_size,
            img.n_side()
        )));
    }
    Ok(Sinogram {
        num_angles: geom.num_angles,
        num_bins: geom.num_bins,
        values: projector.forward(img.pixels()),
        kind: SinogramKind::Expected,
    })
}

/// Dose `s` such that the mean of `s A x` equals `target`.
pub fn dose_for_target_counts(projector: &Projector, img: &Image, target: f64) -> Result<f64> {
    if !(target > 0.0 && target.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "target count must be > 0, got {target}"
        )));
    }
    let sino = forward(projector, img)?;
    let mean = sino.mean();
    if !(mean > 0.0) {
        return Err(Error::ZeroSinogram);
    }
    Ok(target / mean)
}

/// Independent Poisson draws for each bin of an expected sinogram.
pub fn sample_counts(expected: &Sinogram, seed: u64) -> Result<Sinogram> {
    if expected.kind != SinogramKind::Expected {
        return Err(Error::InvalidParameter(
            "can only sample from an expected sinogram".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = expected
        .values
        .iter()
        .map(|&mu| PoissonDist::new(mu).map(|d| d.sample(&mut rng) as f64))
        .collect::<Result<Vec<_>>>()?;
    Ok(Sinogram {
        values,
        kind: SinogramKind::Counts,
        ..expected.clone()
    })
}

/// Mean squared difference over the field of view.
pub fn fov_mse(a: &Image, b: &Image) -> Result<f64> {
    if a.n_side() != b.n_side() {
        return Err(Error::ShapeMismatch(format!(
            "{}^2 vs {}^2 images",
            a.n_side(),
            b.n_side()
        )));
    }
    Ok(masked_mse(a.pixels(), b.pixels(), a.fov_mask()))
}

/// Mean squared difference over the pixels where `mask` is set.
pub fn masked_mse(a: &[f64], b: &[f64], mask: &[bool]) -> f64 {
    let (sum, count) = a
        .iter()
        .zip(b)
        .zip(mask)
        .filter(|(_, &m)| m)
        .fold((0.0, 0usize), |(s, n), ((x, y), _)| (s + (x - y).powi(2), n + 1));
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}
