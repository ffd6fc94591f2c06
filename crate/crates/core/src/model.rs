//! Core value types: images, scan geometry, measurement sets, sparse maps,
//! motifs, PSF parameters, and solver configuration.
//!
//! All types are immutable value types after construction and safe to share
//! across threads.

use crate::fourier::Conv2Plan;
use crate::{Error, Result};
use ndarray::Array2;

/// Dense n-by-n intensity grid (the sample `Y` or a reconstruction).
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    data: Array2<f64>,
    /// Physical length per pixel; metadata only.
    pub pixel_size: f64,
}

impl Image {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        Image::with_pixel_size(data, 1.0)
    }

    pub fn with_pixel_size(data: Array2<f64>, pixel_size: f64) -> Result<Self> {
        let (r, c) = data.dim();
        if r != c || r < 2 {
            return Err(Error::invalid("image", format!("grid must be square with n >= 2, got {r}x{c}")));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("image", "non-finite entry"));
        }
        Ok(Image { data, pixel_size })
    }

    pub fn zeros(n: usize) -> Self {
        Image {
            data: Array2::zeros((n, n)),
            pixel_size: 1.0,
        }
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array2<f64> {
        self.data
    }

    /// Total pixel mass.
    pub fn mass(&self) -> f64 {
        self.data.sum()
    }
}

/// Ordered list of probe sweep angles plus grid metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanGeometry {
    angles_deg: Vec<f64>,
    /// Samples per sweep; equals the side length of any paired image.
    pub n: usize,
    /// Whether projections carry the 1/sqrt(m) factor (default true).
    pub normalization: bool,
}

impl ScanGeometry {
    pub fn new(angles_deg: Vec<f64>, n: usize) -> Result<Self> {
        if angles_deg.is_empty() {
            return Err(Error::invalid("scan geometry", "need at least one angle"));
        }
        if n < 2 {
            return Err(Error::invalid("scan geometry", format!("n must be >= 2, got {n}")));
        }
        let angles_deg: Vec<f64> = angles_deg.into_iter().map(normalize_angle_deg).collect();
        for (i, a) in angles_deg.iter().enumerate() {
            if !a.is_finite() {
                return Err(Error::invalid("scan geometry", "non-finite angle"));
            }
            for b in &angles_deg[..i] {
                if a == b {
                    return Err(Error::invalid("scan geometry", format!("duplicate angle {a}")));
                }
            }
        }
        Ok(ScanGeometry {
            angles_deg,
            n,
            normalization: true,
        })
    }

    pub fn without_normalization(mut self) -> Self {
        self.normalization = false;
        self
    }

    pub fn m(&self) -> usize {
        self.angles_deg.len()
    }

    pub fn angles_deg(&self) -> &[f64] {
        &self.angles_deg
    }

    /// Scale factor applied by both the projector and the back projector.
    pub fn norm_factor(&self) -> f64 {
        if self.normalization {
            1.0 / (self.m() as f64).sqrt()
        } else {
            1.0
        }
    }
}

/// Map an angle into [-180, 180).
pub fn normalize_angle_deg(theta: f64) -> f64 {
    let mut t = theta % 360.0;
    if t >= 180.0 {
        t -= 360.0;
    } else if t < -180.0 {
        t += 360.0;
    }
    // Avoid the negative-zero representation so serialization is stable.
    if t == 0.0 {
        t = 0.0;
    }
    t
}

/// Measurement matrix: one column per angle, rows are sweep positions.
#[derive(Debug, Clone, PartialEq)]
pub struct LineScanSet {
    data: Array2<f64>,
    pub geometry: ScanGeometry,
}

impl LineScanSet {
    pub fn new(data: Array2<f64>, geometry: ScanGeometry) -> Result<Self> {
        if data.ncols() != geometry.m() {
            return Err(Error::invalid(
                "line scan set",
                format!("expected {} columns, got {}", geometry.m(), data.ncols()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("line scan set", "non-finite entry"));
        }
        Ok(LineScanSet { data, geometry })
    }

    pub fn zeros(geometry: ScanGeometry) -> Self {
        let data = Array2::zeros((geometry.n, geometry.m()));
        LineScanSet { data, geometry }
    }

    /// Number of sweep samples per line (n, or ceil(n/stride) after striding).
    pub fn samples(&self) -> usize {
        self.data.nrows()
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array2<f64> {
        self.data
    }
}

/// Nonnegative activation grid holding discretized spike weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMap {
    data: Array2<f64>,
}

impl SparseMap {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        let (r, c) = data.dim();
        if r != c || r < 2 {
            return Err(Error::invalid("sparse map", format!("grid must be square with n >= 2, got {r}x{c}")));
        }
        if data.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("sparse map", "entries must be finite and >= 0"));
        }
        Ok(SparseMap { data })
    }

    pub fn zeros(n: usize) -> Self {
        SparseMap {
            data: Array2::zeros((n, n)),
        }
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array2<f64> {
        self.data
    }

    /// Indices of strictly positive entries, row-major order.
    pub fn support(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for ((i, j), v) in self.data.indexed_iter() {
            if *v > 0.0 {
                out.push((i, j));
            }
        }
        out
    }
}

/// Shape of the repeated sample feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotifKind {
    Disc,
    Gaussian,
}

/// How a rendered motif is scaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotifNorm {
    /// The 0-degree line projection of the rendered motif has unit L2 norm.
    UnitLineProjection,
    /// Pixel values sum to 1.
    UnitMass,
}

/// The motif `D`: every sample is a superposition of shifted copies of it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Motif {
    pub kind: MotifKind,
    /// Radius in pixels (disc radius, or gaussian standard deviation).
    pub radius: f64,
    pub normalization: MotifNorm,
    /// 4x supersampling for disc edges (off by default for determinism).
    pub antialias: bool,
}

impl Motif {
    pub fn disc(radius: f64) -> Self {
        Motif {
            kind: MotifKind::Disc,
            radius,
            normalization: MotifNorm::UnitLineProjection,
            antialias: false,
        }
    }

    pub fn gaussian(radius: f64) -> Self {
        Motif {
            kind: MotifKind::Gaussian,
            radius,
            normalization: MotifNorm::UnitLineProjection,
            antialias: false,
        }
    }

    pub fn with_normalization(mut self, normalization: MotifNorm) -> Self {
        self.normalization = normalization;
        self
    }

    pub fn with_antialias(mut self, on: bool) -> Self {
        self.antialias = on;
        self
    }
}

/// Render the motif centered on an n-by-n grid.
///
/// The continuous center sits at coordinate (n-1)/2 in both axes, so the
/// rendering equals its own quarter-turn rotation on the grid.
pub fn render_motif(motif: &Motif, n: usize) -> Result<Image> {
    if motif.radius <= 0.0 || !motif.radius.is_finite() {
        return Err(Error::invalid("motif", format!("radius must be positive, got {}", motif.radius)));
    }
    if 2.0 * motif.radius >= n as f64 {
        return Err(Error::invalid("motif", "motif exceeds grid".to_string()));
    }
    let c = (n as f64 - 1.0) / 2.0;
    let r = motif.radius;
    let mut data = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let x = i as f64 - c;
            let y = j as f64 - c;
            data[[i, j]] = match motif.kind {
                MotifKind::Gaussian => (-(x * x + y * y) / (2.0 * r * r)).exp(),
                MotifKind::Disc => {
                    if motif.antialias {
                        let mut hit = 0u32;
                        for &dx in &[-0.25, 0.25] {
                            for &dy in &[-0.25, 0.25] {
                                let xx = x + dx;
                                let yy = y + dy;
                                if xx * xx + yy * yy <= r * r {
                                    hit += 1;
                                }
                            }
                        }
                        hit as f64 / 4.0
                    } else if x * x + y * y <= r * r {
                        1.0
                    } else {
                        0.0
                    }
                }
            };
        }
    }
    let scale = match motif.normalization {
        MotifNorm::UnitMass => {
            let s = data.sum();
            if s <= 0.0 {
                return Err(Error::invalid("motif", "rendered motif has zero mass"));
            }
            1.0 / s
        }
        MotifNorm::UnitLineProjection => {
            // 0-degree projection = per-row sums; normalize its L2 norm.
            let norm2: f64 = data
                .rows()
                .into_iter()
                .map(|row| {
                    let s: f64 = row.sum();
                    s * s
                })
                .sum();
            if norm2 <= 0.0 {
                return Err(Error::invalid("motif", "rendered motif has zero projection"));
            }
            1.0 / norm2.sqrt()
        }
    };
    data.mapv_inplace(|v| v * scale);
    Image::new(data)
}

/// Build a cached convolution plan for `D` on an n-by-n grid.
pub(crate) fn motif_conv_plan(motif: &Motif, n: usize) -> Result<Conv2Plan> {
    let kernel = render_motif(motif, n)?;
    Ok(Conv2Plan::new(kernel.data()))
}

/// Sample image `Y = D * X` ("same" 2-D linear convolution, zero padded).
pub fn convolve_motif(x: &SparseMap, motif: &Motif) -> Result<Image> {
    let plan = motif_conv_plan(motif, x.n())?;
    Image::new(plan.apply(x.data(), false))
}

/// Coordinate indices into a 6-vector of PSF parameters.
pub mod psf_coord {
    pub const AMPLITUDE: usize = 0;
    pub const C_LEFT: usize = 1;
    pub const ALPHA_LEFT: usize = 2;
    pub const C_RIGHT: usize = 3;
    pub const ALPHA_RIGHT: usize = 4;
    pub const SIGMA: usize = 5;
    pub const NAMES: [&str; 6] = ["a", "c_l", "alpha_l", "c_r", "alpha_r", "sigma"];
}

/// Per-angle PSF parameter vectors `(a, c_l, alpha_l, c_r, alpha_r, sigma)`
/// together with the box constraint set they must stay inside.
#[derive(Debug, Clone, PartialEq)]
pub struct PsfParams {
    lines: Vec<[f64; 6]>,
    lower: [f64; 6],
    upper: [f64; 6],
}

impl PsfParams {
    pub fn new(lines: Vec<[f64; 6]>, lower: [f64; 6], upper: [f64; 6]) -> Result<Self> {
        if lines.is_empty() {
            return Err(Error::invalid("psf params", "need at least one line"));
        }
        for k in 0..6 {
            if !(lower[k].is_finite() && upper[k].is_finite()) || lower[k] > upper[k] {
                return Err(Error::invalid(
                    "psf params",
                    format!("box bounds invalid for {}", psf_coord::NAMES[k]),
                ));
            }
            let min_lower = if k == psf_coord::SIGMA { 0.0 } else { f64::MIN_POSITIVE };
            if lower[k] < min_lower {
                return Err(Error::invalid(
                    "psf params",
                    format!("{} lower bound must be {}", psf_coord::NAMES[k], if k == psf_coord::SIGMA { ">= 0" } else { "> 0" }),
                ));
            }
        }
        for (i, p) in lines.iter().enumerate() {
            for k in 0..6 {
                if !p[k].is_finite() || p[k] < lower[k] || p[k] > upper[k] {
                    return Err(Error::invalid(
                        "psf params",
                        format!("line {i}: {} = {} outside box [{}, {}]", psf_coord::NAMES[k], p[k], lower[k], upper[k]),
                    ));
                }
            }
        }
        Ok(PsfParams { lines, lower, upper })
    }

    /// Identical parameters on every line, box tight around them (frozen PSF).
    pub fn frozen(p: [f64; 6], m: usize) -> Result<Self> {
        PsfParams::new(vec![p; m], p, p)
    }

    pub fn m(&self) -> usize {
        self.lines.len()
    }

    pub fn lines(&self) -> &[[f64; 6]] {
        &self.lines
    }

    pub fn line(&self, i: usize) -> [f64; 6] {
        self.lines[i]
    }

    pub fn lower(&self) -> [f64; 6] {
        self.lower
    }

    pub fn upper(&self) -> [f64; 6] {
        self.upper
    }

    /// Replace parameter vectors, keeping the box; values are clamped into it.
    pub fn with_lines_clamped(&self, lines: Vec<[f64; 6]>) -> Result<Self> {
        let clamped = lines
            .into_iter()
            .map(|mut p| {
                for k in 0..6 {
                    p[k] = p[k].clamp(self.lower[k], self.upper[k]);
                }
                p
            })
            .collect();
        PsfParams::new(clamped, self.lower, self.upper)
    }

    /// True if a coordinate is pinned by a collapsed box.
    pub fn is_fixed(&self, coord: usize) -> bool {
        self.lower[coord] == self.upper[coord]
    }
}

/// How per-angle PSF parameters are coupled during calibration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coupling {
    /// One shared shape `(c_l, alpha_l, c_r, alpha_r, sigma)` plus a free
    /// amplitude per line (default).
    SharedShape,
    /// Every line's 6 parameters vary independently.
    Independent,
}

/// Solver configuration (reweighting rounds plus inner iPalm settings).
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Reweighting rounds K.
    pub rounds: usize,
    /// iPalm iterations L per round.
    pub iters: usize,
    /// Reweight scale C.
    pub reweight_scale: f64,
    /// Reweight floor epsilon.
    pub eps: f64,
    /// Inertial weight alpha.
    pub alpha_inertia: f64,
    pub seed: u64,
    pub coupling: Coupling,
    /// Stop a round early once the relative objective change stays below
    /// this for `early_stop_patience` iterations. Set to 0 to disable.
    pub early_stop_tol: f64,
    pub early_stop_patience: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            rounds: 6,
            iters: 50,
            reweight_scale: 0.1,
            eps: 1e-12,
            alpha_inertia: 0.9,
            seed: 0,
            coupling: Coupling::SharedShape,
            early_stop_tol: 1e-10,
            early_stop_patience: 10,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds < 1 {
            return Err(Error::invalid("solver config", "K must be >= 1"));
        }
        if self.iters < 1 {
            return Err(Error::invalid("solver config", "L must be >= 1"));
        }
        if !(self.reweight_scale > 0.0) {
            return Err(Error::invalid("solver config", "C must be > 0"));
        }
        if !(self.eps > 0.0) {
            return Err(Error::invalid("solver config", "eps must be > 0"));
        }
        if !(0.0..1.0).contains(&self.alpha_inertia) {
            return Err(Error::invalid("solver config", "alpha must be in [0, 1)"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disc_unit_mass_sums_to_one() {
        let motif = Motif::disc(1.0).with_normalization(MotifNorm::UnitMass);
        let img = render_motif(&motif, 5).unwrap();
        assert!((img.mass() - 1.0).abs() < 1e-12);
        // r=1 disc on a 5-grid is the center cross of 5 pixels.
        let on: Vec<_> = img
            .data()
            .indexed_iter()
            .filter(|(_, v)| **v > 0.0)
            .map(|(ij, _)| ij)
            .collect();
        assert_eq!(on, vec![(1, 2), (2, 1), (2, 2), (2, 3), (3, 2)]);
        assert!(img.data().iter().filter(|v| **v > 0.0).all(|v| (*v - 0.2).abs() < 1e-12));
    }

    #[test]
    fn gaussian_unit_line_projection_norm() {
        let motif = Motif::gaussian(2.0);
        let img = render_motif(&motif, 64).unwrap();
        let norm2: f64 = img
            .data()
            .rows()
            .into_iter()
            .map(|row| {
                let s: f64 = row.sum();
                s * s
            })
            .sum();
        assert!((norm2.sqrt() - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn oversized_motif_errors() {
        let motif = Motif::disc(40.0);
        let err = render_motif(&motif, 64).unwrap_err();
        assert!(err.to_string().contains("motif exceeds grid"));
    }

    #[test]
    fn gaussian_render_is_quarter_turn_symmetric() {
        for &n in &[9usize, 16] {
            let img = render_motif(&Motif::gaussian(1.5), n).unwrap();
            let d = img.data();
            for i in 0..n {
                for j in 0..n {
                    let rot = d[[n - 1 - j, i]];
                    assert_eq!(d[[i, j]], rot, "n={n} ({i},{j})");
                }
            }
        }
    }

    #[test]
    fn dirac_identity_and_zero_map() {
        let n = 15;
        let motif = Motif::disc(2.0).with_normalization(MotifNorm::UnitMass);
        let c = (n - 1) / 2;
        let mut x = Array2::zeros((n, n));
        x[[c, c]] = 1.0;
        let y = convolve_motif(&SparseMap::new(x).unwrap(), &motif).unwrap();
        let k = render_motif(&motif, n).unwrap();
        let err = (y.data() - k.data()).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err < 1e-12);

        let y0 = convolve_motif(&SparseMap::zeros(n), &motif).unwrap();
        assert_eq!(y0.data().iter().fold(0.0f64, |m, v| m.max(v.abs())), 0.0);
    }

    #[test]
    fn two_separated_spikes_have_double_mass() {
        let n = 33;
        let r = 3.0;
        let motif = Motif::disc(r).with_normalization(MotifNorm::UnitMass);
        let mut x = Array2::zeros((n, n));
        // Distance 4r = 12 apart, both well inside.
        x[[10, 10]] = 1.0;
        x[[10, 22]] = 1.0;
        let y = convolve_motif(&SparseMap::new(x).unwrap(), &motif).unwrap();
        assert!((y.mass() - 2.0).abs() < 1e-10);
        // Discs at distance 4r are disjoint: every pixel belongs to one copy.
        let peak = y.data().iter().cloned().fold(0.0f64, f64::max);
        let single_peak = render_motif(&motif, n).unwrap().data().iter().cloned().fold(0.0f64, f64::max);
        assert!((peak - single_peak).abs() < 1e-12);
    }

    #[test]
    fn convolution_is_linear() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let n = 16;
        let motif = Motif::gaussian(1.5);
        let x1 = Array2::from_shape_fn((n, n), |_| rng.gen::<f64>());
        let x2 = Array2::from_shape_fn((n, n), |_| rng.gen::<f64>());
        let (a, b) = (0.7, 1.9);
        let combo = SparseMap::new(&x1 * a + &x2 * b).unwrap();
        let lhs = convolve_motif(&combo, &motif).unwrap();
        let y1 = convolve_motif(&SparseMap::new(x1).unwrap(), &motif).unwrap();
        let y2 = convolve_motif(&SparseMap::new(x2).unwrap(), &motif).unwrap();
        let rhs = y1.data() * a + y2.data() * b;
        let err = (lhs.data() - &rhs).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err < 1e-10);
    }

    #[test]
    fn angle_normalization() {
        assert_eq!(normalize_angle_deg(180.0), -180.0);
        assert_eq!(normalize_angle_deg(-180.0), -180.0);
        assert_eq!(normalize_angle_deg(360.0), 0.0);
        assert_eq!(normalize_angle_deg(270.0), -90.0);
        assert_eq!(normalize_angle_deg(-270.0), 90.0);
    }

    #[test]
    fn geometry_rejects_duplicates() {
        assert!(ScanGeometry::new(vec![0.0, 360.0], 8).is_err());
        assert!(ScanGeometry::new(vec![], 8).is_err());
        assert!(ScanGeometry::new(vec![0.0, 45.0], 8).is_ok());
    }

    #[test]
    fn psf_params_box_enforced() {
        let p = [1.0, 1.0, 1.0, 1.0, 1.0, 0.0];
        assert!(PsfParams::frozen(p, 3).is_ok());
        let bad = PsfParams::new(vec![[2.0, 1.0, 1.0, 1.0, 1.0, 0.0]], p, p);
        assert!(bad.is_err());
    }
}
