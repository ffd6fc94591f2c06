//! Discrete line projection `L_Θ` and its exact adjoint, the back projection
//! `L_Θ*`, built on three-shear FFT rotation.
//!
//! A rotation by θ ∈ [-45°, 45°] factors into row-shear(tan θ/2), then
//! column-shear(-sin θ), then row-shear(tan θ/2); each shear is a per-line
//! fractional circular shift applied as a DFT phase ramp over signed
//! (centered) frequencies. Angles outside [-45°, 45°] are reduced by exact
//! quarter-turn permutations of the padded grid. The ordering rule (permute
//! before shearing for nonnegative quarter counts, after for negative ones)
//! makes rotate(-θ) the exact inverse *and* exact adjoint of rotate(θ).

use crate::model::{Image, LineScanSet, ScanGeometry};
use crate::{Error, Result};
use ndarray::Array2;
use num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use std::sync::Arc;

/// Smallest padded size >= ceil(sqrt(2) n) with the parity of n and only
/// prime factors {2, 3, 5, 7} (FFT-friendly).
pub fn padded_size(n: usize) -> usize {
    fn smooth(mut v: usize) -> bool {
        for p in [2usize, 3, 5, 7] {
            while v % p == 0 {
                v /= p;
            }
        }
        v == 1
    }
    let mut p = ((n as f64) * std::f64::consts::SQRT_2).ceil() as usize;
    if p % 2 != n % 2 {
        p += 1;
    }
    while !smooth(p) {
        p += 2;
    }
    p
}

/// Reusable rotation/projection plan for one grid size.
pub struct ShearPlan {
    n: usize,
    np: usize,
    s0: usize,
    r2c: Arc<dyn RealToComplex<f64>>,
    c2r: Arc<dyn ComplexToReal<f64>>,
}

impl ShearPlan {
    pub fn new(n: usize) -> Self {
        let np = padded_size(n);
        let mut planner = RealFftPlanner::new();
        ShearPlan {
            n,
            np,
            s0: (np - n) / 2,
            r2c: planner.plan_fft_forward(np),
            c2r: planner.plan_fft_inverse(np),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn padded(&self) -> usize {
        self.np
    }

    /// Embed an n-by-n grid centered in the padded grid.
    pub fn pad(&self, img: &Array2<f64>) -> Array2<f64> {
        let mut buf = Array2::zeros((self.np, self.np));
        buf.slice_mut(ndarray::s![self.s0..self.s0 + self.n, self.s0..self.s0 + self.n])
            .assign(img);
        buf
    }

    /// Extract the central n-by-n window.
    pub fn crop(&self, buf: &Array2<f64>) -> Array2<f64> {
        buf.slice(ndarray::s![self.s0..self.s0 + self.n, self.s0..self.s0 + self.n])
            .to_owned()
    }

    /// Fractional circular shift of one real line by `delta`, in place.
    fn shift_line(
        &self,
        line: &mut [f64],
        delta: f64,
        spec: &mut [Complex64],
        scratch: &mut [Complex64],
    ) {
        let np = self.np;
        self.r2c
            .process_with_scratch(line, spec, scratch)
            .expect("planned sizes");
        let w = Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * delta / np as f64);
        let half = if np % 2 == 0 { np / 2 - 1 } else { (np - 1) / 2 };
        let mut ph = Complex64::new(1.0, 0.0);
        for bin in spec.iter_mut().take(half + 1).skip(1) {
            ph *= w;
            *bin *= ph;
        }
        // For even sizes the Nyquist bin keeps phase 1: the shear stays
        // real-preserving, unitary, and exactly inverted by -delta.
        self.c2r
            .process_with_scratch(spec, line, scratch)
            .expect("planned sizes");
        let scale = 1.0 / np as f64;
        for v in line.iter_mut() {
            *v *= scale;
        }
    }

    /// Shear the padded grid: `along_rows` shifts row i by `a * (i - c)`
    /// horizontally, otherwise column j shifts vertically by `a * (j - c)`.
    fn shear(&self, buf: &mut Array2<f64>, a: f64, along_rows: bool) {
        if a == 0.0 {
            return;
        }
        let np = self.np;
        let c = (np as f64 - 1.0) / 2.0;
        let mut line = vec![0.0f64; np];
        let mut spec = self.r2c.make_output_vec();
        let mut scratch = vec![
            Complex64::new(0.0, 0.0);
            self.r2c
                .get_scratch_len()
                .max(self.c2r.get_scratch_len())
        ];
        for k in 0..np {
            let delta = a * (k as f64 - c);
            if along_rows {
                for j in 0..np {
                    line[j] = buf[[k, j]];
                }
            } else {
                for i in 0..np {
                    line[i] = buf[[i, k]];
                }
            }
            // Shifting an all-zero line is the identity (common in the pad
            // margin of embedded images).
            if line.iter().all(|&v| v == 0.0) {
                continue;
            }
            self.shift_line(&mut line, delta, &mut spec, &mut scratch);
            if along_rows {
                for j in 0..np {
                    buf[[k, j]] = line[j];
                }
            } else {
                for i in 0..np {
                    buf[[i, k]] = line[i];
                }
            }
        }
    }

    /// Exact quarter-turn permutation of the padded grid, `k` quarter turns
    /// (k taken mod 4; k = 1 maps (u, v) -> (v, -u) about the grid center).
    fn quarter_turn(&self, buf: &Array2<f64>, k: i32) -> Array2<f64> {
        let p = self.np;
        let k = k.rem_euclid(4);
        match k {
            0 => buf.clone(),
            1 => Array2::from_shape_fn((p, p), |(i, j)| buf[[j, p - 1 - i]]),
            2 => Array2::from_shape_fn((p, p), |(i, j)| buf[[p - 1 - i, p - 1 - j]]),
            _ => Array2::from_shape_fn((p, p), |(i, j)| buf[[p - 1 - j, i]]),
        }
    }

    /// Reduce an angle to (quarter turns, residual in [-45°, 45°]).
    fn reduce(theta_deg: f64) -> (i32, f64) {
        let t = crate::model::normalize_angle_deg(theta_deg);
        let k = (t / 90.0).round() as i32;
        (k, t - 90.0 * k as f64)
    }

    /// Rotate the padded grid by `theta_deg` in place.
    pub fn rotate_padded(&self, buf: &mut Array2<f64>, theta_deg: f64) {
        self.rotate_padded_flags(buf, theta_deg, false, false);
    }

    /// Rotation with two exact shortcuts: `for_row_sums` skips a trailing
    /// row-shear whenever the caller only reads row sums afterwards (circular
    /// shifts within a row keep its sum), and `rows_constant` skips a leading
    /// row-shear when every input row is constant (shifting a constant row is
    /// the identity). Both leave the computed quantity bit-equivalent in
    /// exact arithmetic, so projection/back-projection stay exact adjoints.
    fn rotate_padded_flags(
        &self,
        buf: &mut Array2<f64>,
        theta_deg: f64,
        for_row_sums: bool,
        rows_constant: bool,
    ) {
        let (k, res) = Self::reduce(theta_deg);
        let res = res.to_radians();
        let t = (res / 2.0).tan();
        let s = -res.sin();
        if k >= 0 {
            if k > 0 {
                *buf = self.quarter_turn(buf, k);
            }
            if res != 0.0 {
                // Even quarter turns map constant rows to constant rows.
                if !(rows_constant && k % 2 == 0) {
                    self.shear(buf, t, true);
                }
                self.shear(buf, s, false);
                if !for_row_sums {
                    self.shear(buf, t, true);
                }
            }
        } else {
            if res != 0.0 {
                if !rows_constant {
                    self.shear(buf, t, true);
                }
                self.shear(buf, s, false);
                // A half turn preserves (reversed) row sums; a single quarter
                // turn turns rows into columns, so the shear must run then.
                if !(for_row_sums && k == -2) {
                    self.shear(buf, t, true);
                }
            }
            *buf = self.quarter_turn(buf, k);
        }
    }

    /// Rotate an image by `theta_deg` (pad, rotate, crop back to n).
    pub fn rotate(&self, img: &Image, theta_deg: f64) -> Result<Image> {
        if img.n() != self.n {
            return Err(Error::invalid("rotate", format!("plan is for n={}, image has n={}", self.n, img.n())));
        }
        let mut buf = self.pad(img.data());
        self.rotate_padded(&mut buf, theta_deg);
        Image::with_pixel_size(self.crop(&buf), img.pixel_size)
    }

    /// Project raw image data along every angle of `geom`.
    pub fn project_data(&self, data: &Array2<f64>, geom: &ScanGeometry) -> Array2<f64> {
        let factor = geom.norm_factor();
        let m = geom.m();
        let mut out = Array2::zeros((self.n, m));
        for (i, &theta) in geom.angles_deg().iter().enumerate() {
            let mut buf = self.pad(data);
            self.rotate_padded_flags(&mut buf, theta, true, false);
            for t in 0..self.n {
                let mut acc = 0.0;
                for j in 0..self.np {
                    acc += buf[[self.s0 + t, j]];
                }
                out[[t, i]] = factor * acc;
            }
        }
        out
    }

    /// Exact adjoint of `project_data`.
    pub fn back_project_data(&self, r: &Array2<f64>, geom: &ScanGeometry) -> Array2<f64> {
        let factor = geom.norm_factor();
        let mut out = Array2::zeros((self.n, self.n));
        for (i, &theta) in geom.angles_deg().iter().enumerate() {
            let mut buf = Array2::zeros((self.np, self.np));
            for t in 0..self.n {
                let val = factor * r[[t, i]];
                if val != 0.0 {
                    for j in 0..self.np {
                        buf[[self.s0 + t, j]] = val;
                    }
                }
            }
            self.rotate_padded_flags(&mut buf, -theta, false, true);
            out += &self.crop(&buf);
        }
        out
    }

    pub fn line_project(&self, img: &Image, geom: &ScanGeometry) -> Result<LineScanSet> {
        if img.n() != self.n || geom.n != self.n {
            return Err(Error::invalid("line projection", "image/geometry size mismatch"));
        }
        LineScanSet::new(self.project_data(img.data(), geom), geom.clone())
    }

    pub fn back_project(&self, scans: &LineScanSet) -> Result<Image> {
        if scans.geometry.n != self.n {
            return Err(Error::invalid("back projection", "geometry size mismatch"));
        }
        if scans.samples() != self.n {
            return Err(Error::invalid(
                "back projection",
                format!("expected {} sweep samples, got {} (upsample strided scans first)", self.n, scans.samples()),
            ));
        }
        Image::new(self.back_project_data(scans.data(), &scans.geometry))
    }
}

/// Rotate an image clockwise by `theta_deg` degrees.
pub fn rotate(img: &Image, theta_deg: f64) -> Result<Image> {
    ShearPlan::new(img.n()).rotate(img, theta_deg)
}

/// Line projection `L_Θ[Y]`: column i holds the scaled row sums of the image
/// rotated by θ_i.
pub fn line_project(img: &Image, geom: &ScanGeometry) -> Result<LineScanSet> {
    ShearPlan::new(img.n()).line_project(img, geom)
}

/// Back projection `L_Θ*[R]`, the exact adjoint of `line_project`.
pub fn back_project(scans: &LineScanSet) -> Result<Image> {
    ShearPlan::new(scans.geometry.n).back_project(scans)
}
