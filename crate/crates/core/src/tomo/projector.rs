use rayon::prelude::*;

use super::{fov_mask, ScanGeometry};

/// Rows below this count are processed serially.
const PAR_MIN_ROWS: usize = 256;

/// Compressed sparse row storage.
#[derive(Clone, Debug, Default)]
struct Csr {
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    vals: Vec<f64>,
}

impl Csr {
    fn from_rows(rows: Vec<Vec<(u32, f64)>>) -> Self {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        row_ptr.push(0);
        let nnz = rows.iter().map(Vec::len).sum();
        let mut col_idx = Vec::with_capacity(nnz);
        let mut vals = Vec::with_capacity(nnz);
        for row in rows {
            for (c, v) in row {
                col_idx.push(c);
                vals.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            row_ptr,
            col_idx,
            vals,
        }
    }

    fn num_rows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    fn transpose(&self, num_cols: usize) -> Self {
        let mut counts = vec![0usize; num_cols + 1];
        for &c in &self.col_idx {
            counts[c as usize + 1] += 1;
        }
        for i in 0..num_cols {
            counts[i + 1] += counts[i];
        }
        let row_ptr = counts.clone();
        let mut next = counts;
        let mut col_idx = vec![0u32; self.col_idx.len()];
        let mut vals = vec![0.0; self.vals.len()];
        for r in 0..self.num_rows() {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.col_idx[k] as usize;
                col_idx[next[c]] = r as u32;
                vals[next[c]] = self.vals[k];
                next[c] += 1;
            }
        }
        Self {
            row_ptr,
            col_idx,
            vals,
        }
    }

    fn row_dot(&self, r: usize, x: &[f64]) -> f64 {
        let (lo, hi) = (self.row_ptr[r], self.row_ptr[r + 1]);
        self.col_idx[lo..hi]
            .iter()
            .zip(&self.vals[lo..hi])
            .map(|(&c, &v)| v * x[c as usize])
            .sum()
    }

    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        if out.len() >= PAR_MIN_ROWS {
            out.par_iter_mut()
                .with_min_len(PAR_MIN_ROWS)
                .enumerate()
                .for_each(|(r, o)| *o = self.row_dot(r, x));
        } else {
            for (r, o) in out.iter_mut().enumerate() {
                *o = self.row_dot(r, x);
            }
        }
    }
}

/// Linear map from images (or mode vectors) to measurement bins.
///
/// Both `A` and `A^T` are stored explicitly with identical weights, so
/// [`Projector::adjoint`] is the exact transpose of [`Projector::forward`]
/// and each output entry is a fixed-order dot product.
#[derive(Clone, Debug)]
pub struct Projector {
    num_bins: usize,
    num_pixels: usize,
    a: Csr,
    at: Csr,
    support: Vec<bool>,
    geometry: Option<ScanGeometry>,
}

impl Projector {
    /// Joseph's ray-driven projector: each ray is sampled once per row
    /// (or column, whichever the ray crosses more steeply) with linear
    /// interpolation between the two nearest pixel centres. The support is
    /// the inscribed circle.
    pub fn joseph(geom: &ScanGeometry) -> Self {
        let n = geom.image_size;
        let rows: Vec<Vec<(u32, f64)>> = (0..geom.num_angles)
            .flat_map(|k| (0..geom.num_bins).map(move |b| (k, b)))
            .map(|(k, b)| joseph_ray(geom, k, b))
            .collect();
        let a = Csr::from_rows(rows);
        let at = a.transpose(n * n);
        Self {
            num_bins: geom.sinogram_len(),
            num_pixels: n * n,
            a,
            at,
            support: fov_mask(n),
            geometry: Some(*geom),
        }
    }

    /// Diagonal operator `diag(gains)` with full support: one bin per pixel.
    pub fn diagonal(gains: &[f64]) -> Self {
        let rows = gains
            .iter()
            .enumerate()
            .map(|(i, &g)| vec![(i as u32, g)])
            .collect();
        let a = Csr::from_rows(rows);
        let at = a.transpose(gains.len());
        Self {
            num_bins: gains.len(),
            num_pixels: gains.len(),
            a,
            at,
            support: vec![true; gains.len()],
            geometry: None,
        }
    }

    pub fn geometry(&self) -> Option<&ScanGeometry> {
        self.geometry.as_ref()
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    pub fn num_pixels(&self) -> usize {
        self.num_pixels
    }

    /// Pixels the reconstruction may occupy.
    pub fn support(&self) -> &[bool] {
        &self.support
    }

    pub fn nnz(&self) -> usize {
        self.a.vals.len()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.num_bins];
        self.forward_into(x, &mut out);
        out
    }

    pub fn forward_into(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.num_pixels, "image length");
        assert_eq!(out.len(), self.num_bins, "sinogram length");
        self.a.apply_into(x, out);
    }

    pub fn adjoint(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.num_pixels];
        self.adjoint_into(y, &mut out);
        out
    }

    pub fn adjoint_into(&self, y: &[f64], out: &mut [f64]) {
        assert_eq!(y.len(), self.num_bins, "sinogram length");
        assert_eq!(out.len(), self.num_pixels, "image length");
        self.at.apply_into(y, out);
    }

    /// `sum_j A_ji w_j A_ji` for every pixel `i`, i.e. `diag(A^T W A)`.
    pub fn weighted_column_norms(&self, weights: &[f64]) -> Vec<f64> {
        assert_eq!(weights.len(), self.num_bins);
        (0..self.num_pixels)
            .map(|i| {
                let (lo, hi) = (self.at.row_ptr[i], self.at.row_ptr[i + 1]);
                self.at.col_idx[lo..hi]
                    .iter()
                    .zip(&self.at.vals[lo..hi])
                    .map(|(&j, &v)| v * v * weights[j as usize])
                    .sum()
            })
            .collect()
    }

    /// Nonzero `(pixel, weight)` pairs of measurement row `row`.
    pub fn row(&self, row: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (lo, hi) = (self.a.row_ptr[row], self.a.row_ptr[row + 1]);
        self.a.col_idx[lo..hi]
            .iter()
            .zip(&self.a.vals[lo..hi])
            .map(|(&c, &v)| (c as usize, v))
    }
}

fn joseph_ray(geom: &ScanGeometry, k: usize, b: usize) -> Vec<(u32, f64)> {
    let n = geom.image_size;
    let o = (n as f64 - 1.0) / 2.0;
    let theta = geom.angle(k);
    let (sn, cs) = theta.sin_cos();
    let t = geom.bin_center(b);
    let mut out = Vec::with_capacity(2 * n);
    // Points on the ray satisfy x cos(theta) + y sin(theta) = t.
    let steps_rows = cs.abs() >= sn.abs();
    let step_len = if steps_rows { 1.0 / cs.abs() } else { 1.0 / sn.abs() };
    for line in 0..n {
        // Fractional index along the interpolated axis; pixel = base + i * stride.
        let (frac, base, stride) = if steps_rows {
            let y = o - line as f64;
            ((t - y * sn) / cs + o, line * n, 1)
        } else {
            let x = line as f64 - o;
            (o - (t - x * cs) / sn, line, n)
        };
        if frac <= -1.0 || frac >= n as f64 {
            continue;
        }
        let i0 = frac.floor();
        let w1 = frac - i0;
        let i0 = i0 as i64;
        if i0 >= 0 && w1 < 1.0 {
            let w = (1.0 - w1) * step_len;
            if w > 0.0 {
                out.push(((base + i0 as usize * stride) as u32, w));
            }
        }
        let i1 = i0 + 1;
        if (i1 as usize) < n && i1 >= 0 && w1 > 0.0 {
            out.push(((base + i1 as usize * stride) as u32, w1 * step_len));
        }
    }
    out
}
