//! Synthetic sample generation and the full forward model
//! `R = S { psi * L_Theta [ D * X ] } + noise`.

use crate::model::{convolve_motif, Motif, ScanGeometry, SparseMap, Image, LineScanSet};
use crate::ops::ShearPlan;
use crate::psf::{apply_psf, PsfModel};
use crate::{Error, Result};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Spike magnitude distribution.
#[derive(Debug, Clone, PartialEq)]
pub enum Magnitudes {
    Equal,
    Uniform { lo: f64, hi: f64 },
}

/// Spike placement strategy.
#[derive(Debug, Clone, PartialEq)]
pub enum Placement {
    /// Uniform draws rejected until pairwise separation holds.
    RandomRejection,
    /// Hexagonal lattice sites in spiral order; spacing defaults to the
    /// separation requirement `min_sep_ratio * 2r`.
    Hexagonal { spacing: Option<f64> },
    /// Caller-provided pixel locations.
    Explicit(Vec<(usize, usize)>),
}

/// Specification of a random sparse sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSpec {
    pub n: usize,
    pub k: usize,
    /// Motif radius in pixels (used for the separation requirement and margin).
    pub r: f64,
    /// Required separation as a multiple of the motif diameter, d / 2r.
    pub min_sep_ratio: f64,
    pub magnitudes: Magnitudes,
    pub placement: Placement,
    pub seed: u64,
}

impl SampleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.k < 1 {
            return Err(Error::invalid("sample spec", "need n >= 2 and k >= 1"));
        }
        if !(self.r > 0.0) || !(self.min_sep_ratio > 0.0) {
            return Err(Error::invalid("sample spec", "r and min_sep_ratio must be > 0"));
        }
        if let Magnitudes::Uniform { lo, hi } = self.magnitudes {
            if !(0.0 < lo && lo <= hi) {
                return Err(Error::invalid("sample spec", "need 0 < lo <= hi"));
            }
        }
        Ok(())
    }
}

const REJECTION_CAP: usize = 100_000;

/// Draw a sparse map matching `spec`; deterministic in `spec.seed`.
pub fn generate_sample(spec: &SampleSpec) -> Result<SparseMap> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let sep = spec.min_sep_ratio * 2.0 * spec.r;
    let margin = spec.r.ceil() as usize;
    if 2 * margin >= spec.n {
        return Err(Error::invalid("sample spec", "motif radius leaves no interior"));
    }
    let lo = margin;
    let hi = spec.n - 1 - margin;

    let centers: Vec<(usize, usize)> = match &spec.placement {
        Placement::RandomRejection => {
            let mut placed: Vec<(usize, usize)> = Vec::with_capacity(spec.k);
            let mut draws = 0usize;
            while placed.len() < spec.k {
                if draws >= REJECTION_CAP {
                    return Err(Error::InfeasibleDensity {
                        requested: spec.k,
                        placed: placed.len(),
                        cap: REJECTION_CAP,
                    });
                }
                draws += 1;
                let i = rng.gen_range(lo..=hi);
                let j = rng.gen_range(lo..=hi);
                let ok = placed.iter().all(|&(a, b)| {
                    let dx = i as f64 - a as f64;
                    let dy = j as f64 - b as f64;
                    dx * dx + dy * dy >= sep * sep
                });
                if ok {
                    placed.push((i, j));
                }
            }
            placed
        }
        Placement::Hexagonal { spacing } => {
            let d = spacing.unwrap_or(sep);
            let sites = hexagonal_centers(spec.k, d, spec.n)?;
            let snapped: Vec<(usize, usize)> = sites
                .iter()
                .map(|&(x, y)| (x.round() as usize, y.round() as usize))
                .collect();
            for (idx, &(i, j)) in snapped.iter().enumerate() {
                if snapped[..idx].contains(&(i, j)) {
                    return Err(Error::invalid("sample spec", "lattice sites collide after pixel snapping"));
                }
            }
            snapped
        }
        Placement::Explicit(list) => {
            if list.len() != spec.k {
                return Err(Error::invalid(
                    "sample spec",
                    format!("explicit placement has {} centers, k = {}", list.len(), spec.k),
                ));
            }
            for &(i, j) in list {
                if i >= spec.n || j >= spec.n {
                    return Err(Error::invalid("sample spec", format!("center ({i},{j}) outside grid")));
                }
            }
            list.clone()
        }
    };

    if matches!(spec.placement, Placement::RandomRejection) {
        // Hard assertion: the sampler must honor the separation predicate.
        for (a, &(i1, j1)) in centers.iter().enumerate() {
            for &(i2, j2) in &centers[..a] {
                let dx = i1 as f64 - i2 as f64;
                let dy = j1 as f64 - j2 as f64;
                assert!(
                    dx * dx + dy * dy >= sep * sep,
                    "separation predicate violated by rejection sampler"
                );
            }
        }
    }

    let mut data = Array2::zeros((spec.n, spec.n));
    for &(i, j) in &centers {
        let mag = match spec.magnitudes {
            Magnitudes::Equal => 1.0,
            Magnitudes::Uniform { lo, hi } => rng.gen_range(lo..=hi),
        };
        data[[i, j]] = mag;
    }
    SparseMap::new(data)
}

/// First `k` sites of a hexagonal lattice with edge length `d` that fit in an
/// n-by-n grid, ordered spirally outward from the grid center.
pub fn hexagonal_centers(k: usize, d: f64, n: usize) -> Result<Vec<(f64, f64)>> {
    if !(d > 0.0) {
        return Err(Error::invalid("hexagonal lattice", "spacing must be > 0"));
    }
    let c = (n as f64 - 1.0) / 2.0;
    let row_step = d * 3.0f64.sqrt() / 2.0;
    let reach = (n as f64 / d.min(row_step)).ceil() as i64 + 2;
    let mut sites: Vec<(f64, f64, i64, i64)> = Vec::new();
    for j in -reach..=reach {
        let stagger = 0.5 * (j.rem_euclid(2)) as f64;
        for i in -reach..=reach {
            let x = c + (i as f64 + stagger) * d;
            let y = c + j as f64 * row_step;
            if x >= 0.0 && y >= 0.0 && x <= (n - 1) as f64 && y <= (n - 1) as f64 {
                sites.push((x, y, i, j));
            }
        }
    }
    if sites.len() < k {
        return Err(Error::invalid(
            "hexagonal lattice",
            format!("only {} sites of spacing {d} fit in an n={n} grid, need {k}", sites.len()),
        ));
    }
    sites.sort_by(|a, b| {
        let da = (a.0 - c).hypot(a.1 - c);
        let db = (b.0 - c).hypot(b.1 - c);
        let ang_a = (a.1 - c).atan2(a.0 - c);
        let ang_b = (b.1 - c).atan2(b.0 - c);
        da.partial_cmp(&db)
            .unwrap()
            .then(ang_a.partial_cmp(&ang_b).unwrap())
            .then(a.3.cmp(&b.3))
            .then(a.2.cmp(&b.2))
    });
    Ok(sites.into_iter().take(k).map(|(x, y, _, _)| (x, y)).collect())
}

/// Raw staggered hexagonal patch of `(v+1) x (v+1)` sites with edge `d`, in
/// lattice coordinates (used by the coherence study).
pub fn hexagonal_patch(v: usize, d: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity((v + 1) * (v + 1));
    for j in 0..=v {
        for i in 0..=v {
            out.push((
                (i as f64 + 0.5 * (j % 2) as f64) * d,
                3.0f64.sqrt() / 2.0 * j as f64 * d,
            ));
        }
    }
    out
}

/// Full forward simulation: convolve, project, blur, stride-downsample, and
/// add seeded Gaussian noise.
pub fn simulate_scan(
    x: &SparseMap,
    motif: &Motif,
    geom: &ScanGeometry,
    psf: &PsfModel,
    noise_std: f64,
    stride: usize,
    noise_seed: u64,
) -> Result<LineScanSet> {
    if geom.n != x.n() {
        return Err(Error::invalid("simulate", "sample/geometry size mismatch"));
    }
    if stride < 1 {
        return Err(Error::invalid("simulate", "stride must be >= 1"));
    }
    let y = convolve_motif(x, motif)?;
    let plan = ShearPlan::new(x.n());
    let scans = plan.line_project(&y, geom)?;
    let kernels = psf.kernels(geom.m(), geom.n)?;
    let blurred = apply_psf(&scans, &kernels)?;
    let mut data = downsample_rows(blurred.data(), stride);
    if noise_std > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
        let normal = Normal::new(0.0, noise_std)
            .map_err(|e| Error::invalid("simulate", format!("bad noise std: {e}")))?;
        for v in data.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    LineScanSet::new(data, geom.clone())
}

/// Keep every stride-th row starting at row 0.
pub fn downsample_rows(data: &Array2<f64>, stride: usize) -> Array2<f64> {
    if stride == 1 {
        return data.clone();
    }
    let rows = data.nrows().div_ceil(stride);
    Array2::from_shape_fn((rows, data.ncols()), |(t, i)| data[[t * stride, i]])
}

/// Adjoint of `downsample_rows`: scatter back to a zero grid of `n` rows.
pub fn upsample_rows(data: &Array2<f64>, stride: usize, n: usize) -> Array2<f64> {
    if stride == 1 {
        return data.clone();
    }
    let mut out = Array2::zeros((n, data.ncols()));
    for t in 0..data.nrows() {
        for i in 0..data.ncols() {
            out[[t * stride, i]] = data[[t, i]];
        }
    }
    out
}

/// Deterministic smooth random test image: seeded Gaussian blobs confined to
/// the inscribed circle (radius n/5 support, width n/25), the image class the
/// rotation operators are exact on.
pub fn smooth_random_image(n: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = (n as f64 - 1.0) / 2.0;
    let rho = n as f64 / 5.0;
    let sigma = n as f64 / 25.0;
    let spikes = n.max(8);
    let mut centers = Vec::with_capacity(spikes);
    for _ in 0..spikes {
        loop {
            let x = rng.gen_range(-rho..=rho);
            let y = rng.gen_range(-rho..=rho);
            if x * x + y * y <= rho * rho {
                centers.push((x, y, rng.gen_range(0.2..=1.0)));
                break;
            }
        }
    }
    let data = Array2::from_shape_fn((n, n), |(i, j)| {
        let xi = i as f64 - c;
        let yj = j as f64 - c;
        centers
            .iter()
            .map(|&(x, y, a)| {
                let dx = xi - x;
                let dy = yj - y;
                a * (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp()
            })
            .sum()
    });
    Image::new(data).expect("finite by construction")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Motif;
    use crate::ops;

    #[test]
    fn single_spike_in_bounds() {
        let spec = SampleSpec {
            n: 32,
            k: 1,
            r: 3.0,
            min_sep_ratio: 1.0,
            magnitudes: Magnitudes::Equal,
            placement: Placement::RandomRejection,
            seed: 5,
        };
        let x = generate_sample(&spec).unwrap();
        let sup = x.support();
        assert_eq!(sup.len(), 1);
        let (i, j) = sup[0];
        assert!(i >= 3 && i <= 28 && j >= 3 && j <= 28);
    }

    #[test]
    fn rejection_sampler_respects_separation() {
        let spec = SampleSpec {
            n: 64,
            k: 20,
            r: 3.0,
            min_sep_ratio: 1.0,
            magnitudes: Magnitudes::Uniform { lo: 0.5, hi: 1.5 },
            placement: Placement::RandomRejection,
            seed: 11,
        };
        let x = generate_sample(&spec).unwrap();
        let sup = x.support();
        assert_eq!(sup.len(), 20);
        for (a, &(i1, j1)) in sup.iter().enumerate() {
            for &(i2, j2) in &sup[..a] {
                let d = ((i1 as f64 - i2 as f64).powi(2) + (j1 as f64 - j2 as f64).powi(2)).sqrt();
                assert!(d >= 6.0, "pair at distance {d}");
            }
        }
    }

    #[test]
    fn infeasible_density_errors() {
        let spec = SampleSpec {
            n: 32,
            k: 500,
            r: 3.0,
            min_sep_ratio: 1.0,
            magnitudes: Magnitudes::Equal,
            placement: Placement::RandomRejection,
            seed: 1,
        };
        match generate_sample(&spec) {
            Err(crate::Error::InfeasibleDensity { .. }) => {}
            other => panic!("expected infeasible density, got {other:?}"),
        }
    }

    #[test]
    fn determinism_bit_for_bit() {
        let spec = SampleSpec {
            n: 48,
            k: 9,
            r: 2.0,
            min_sep_ratio: 1.5,
            magnitudes: Magnitudes::Uniform { lo: 0.2, hi: 2.0 },
            placement: Placement::RandomRejection,
            seed: 77,
        };
        let a = generate_sample(&spec).unwrap();
        let b = generate_sample(&spec).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn hexagonal_neighbors() {
        let sites = hexagonal_centers(7, 10.0, 64).unwrap();
        assert_eq!(sites.len(), 7);
        let (cx, cy) = sites[0];
        assert!((cx - 31.5).abs() < 1e-12 && (cy - 31.5).abs() < 1e-12);
        for &(x, y) in &sites[1..] {
            let d = (x - cx).hypot(y - cy);
            assert!((d - 10.0).abs() <= 0.51, "neighbor at {d}");
        }
        assert!(hexagonal_centers(10_000, 10.0, 64).is_err());
        assert_eq!(hexagonal_centers(1, 4.0, 16).unwrap().len(), 1);
    }

    #[test]
    fn hexagonal_patch_geometry() {
        let pts = hexagonal_patch(2, 8.0);
        assert_eq!(pts.len(), 9);
        // Nearest-neighbor distance equals the edge length.
        let mut best = f64::INFINITY;
        for (a, &(x1, y1)) in pts.iter().enumerate() {
            for &(x2, y2) in &pts[..a] {
                best = best.min((x1 - x2).hypot(y1 - y2));
            }
        }
        assert!((best - 8.0).abs() < 1e-12);
    }

    #[test]
    fn noiseless_delta_scan_matches_projection() {
        let spec = SampleSpec {
            n: 32,
            k: 4,
            r: 2.0,
            min_sep_ratio: 1.2,
            magnitudes: Magnitudes::Equal,
            placement: Placement::RandomRejection,
            seed: 3,
        };
        let x = generate_sample(&spec).unwrap();
        let motif = Motif::disc(2.0);
        let geom = ScanGeometry::new(vec![0.0, 30.0, 60.0], 32).unwrap();
        let scans = simulate_scan(&x, &motif, &geom, &PsfModel::Delta, 0.0, 1, 0).unwrap();
        let y = convolve_motif(&x, &motif).unwrap();
        let direct = ops::line_project(&y, &geom).unwrap();
        let err = (scans.data() - direct.data())
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err <= 1e-12);
    }

    #[test]
    fn zero_sample_yields_zero_and_noise_only() {
        let x = SparseMap::zeros(24);
        let motif = Motif::disc(2.0);
        let geom = ScanGeometry::new(vec![0.0, 90.0], 24).unwrap();
        let silent = simulate_scan(&x, &motif, &geom, &PsfModel::Delta, 0.0, 1, 9).unwrap();
        assert!(silent.data().iter().all(|&v| v == 0.0));
        let noisy = simulate_scan(&x, &motif, &geom, &PsfModel::Delta, 0.5, 1, 9).unwrap();
        assert!(noisy.data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn centered_disc_two_angle_symmetry() {
        let n = 33;
        let mut data = Array2::zeros((n, n));
        data[[16, 16]] = 1.0;
        let x = SparseMap::new(data).unwrap();
        let motif = Motif::gaussian(2.5);
        let geom = ScanGeometry::new(vec![0.0, 90.0], n).unwrap();
        let scans = simulate_scan(&x, &motif, &geom, &PsfModel::Delta, 0.0, 1, 0).unwrap();
        let mut worst = 0.0f64;
        for t in 0..n {
            worst = worst.max((scans.data()[[t, 0]] - scans.data()[[t, 1]]).abs());
        }
        assert!(worst <= 1e-6, "err={worst}");
    }

    #[test]
    fn stride_downsample_and_adjoint() {
        let data = Array2::from_shape_fn((10, 2), |(t, i)| (t * 2 + i) as f64);
        let down = downsample_rows(&data, 3);
        assert_eq!(down.nrows(), 4);
        assert_eq!(down[[1, 0]], data[[3, 0]]);
        // Dot test for the sampling operator pair.
        let up = upsample_rows(&down, 3, 10);
        let lhs: f64 = down.iter().map(|v| v * v).sum();
        let rhs: f64 = up.iter().zip(data.iter()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
