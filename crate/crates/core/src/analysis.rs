//! Recoverability diagnostics: Gram matrices of projected motif responses,
//! closed-form expected Gram approximations, least-eigenvalue studies on
//! hexagonal patches, the averaged-operator low-pass spectrum, and dual
//! certificate checks on small instances.

use crate::model::{motif_conv_plan, Motif, LineScanSet, ScanGeometry, SparseMap};
use crate::ops::ShearPlan;
use crate::sim::hexagonal_patch;
use crate::{Error, Result};
use ndarray::Array2;

/// How a Gram matrix was produced.
#[derive(Debug, Clone, PartialEq)]
pub enum GramMode {
    /// Inner products of discrete projections over a concrete angle set.
    Empirical { m: usize },
    /// Closed-form expected approximation `(1 + d^2 / 4r^2)^{-1/2}`.
    ExpectedApprox,
}

/// Symmetric matrix of inner products between projected single-motif
/// responses at the stored centers.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    values: Array2<f64>,
    centers: Vec<(f64, f64)>,
    pub mode: GramMode,
}

impl GramMatrix {
    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn centers(&self) -> &[(f64, f64)] {
        &self.centers
    }

    pub fn k(&self) -> usize {
        self.values.nrows()
    }
}

/// Gram matrix from forward-projecting single-spike maps at the (pixel
/// rounded) centers and taking inner products over all lines.
pub fn empirical_gram(centers: &[(f64, f64)], motif: &Motif, geom: &ScanGeometry) -> Result<GramMatrix> {
    if centers.is_empty() {
        return Err(Error::invalid("gram", "need at least one center"));
    }
    let n = geom.n;
    for &(x, y) in centers {
        if !(0.0..=(n - 1) as f64).contains(&x) || !(0.0..=(n - 1) as f64).contains(&y) {
            return Err(Error::invalid("gram", format!("center ({x}, {y}) outside n={n} grid")));
        }
    }
    let plan = ShearPlan::new(n);
    let conv = motif_conv_plan(motif, n)?;
    let projections: Vec<Array2<f64>> = centers
        .iter()
        .map(|&(x, y)| {
            let mut spike = Array2::zeros((n, n));
            spike[[x.round() as usize, y.round() as usize]] = 1.0;
            plan.project_data(&conv.apply(&spike, false), geom)
        })
        .collect();
    let k = centers.len();
    let mut values = Array2::zeros((k, k));
    for i in 0..k {
        for j in 0..=i {
            let g: f64 = projections[i]
                .iter()
                .zip(projections[j].iter())
                .map(|(a, b)| a * b)
                .sum();
            values[[i, j]] = g;
            values[[j, i]] = g;
        }
    }
    Ok(GramMatrix {
        values,
        centers: centers.to_vec(),
        mode: GramMode::Empirical { m: geom.m() },
    })
}

/// Closed-form expected Gram `G_ij = (1 + ||w_i - w_j||^2 / 4r^2)^{-1/2}`.
pub fn approx_gram(centers: &[(f64, f64)], r: f64) -> Result<GramMatrix> {
    if !(r > 0.0) {
        return Err(Error::invalid("gram", "radius must be > 0"));
    }
    if centers.is_empty() {
        return Err(Error::invalid("gram", "need at least one center"));
    }
    let k = centers.len();
    let mut values = Array2::zeros((k, k));
    for i in 0..k {
        for j in 0..=i {
            let d2 = {
                let (x1, y1) = centers[i];
                let (x2, y2) = centers[j];
                (x1 - x2).powi(2) + (y1 - y2).powi(2)
            };
            let g = 1.0 / (1.0 + d2 / (4.0 * r * r)).sqrt();
            values[[i, j]] = g;
            values[[j, i]] = g;
        }
    }
    Ok(GramMatrix {
        values,
        centers: centers.to_vec(),
        mode: GramMode::ExpectedApprox,
    })
}

/// Closed-form bracket for the angle-averaged normalized inner product of two
/// gaussian motifs at center distance `d`: `[r / 2d, (1 + d^2/4r^2)^{-1/2}]`.
pub fn coherence_bracket(r: f64, d: f64) -> (f64, f64) {
    (r / (2.0 * d), 1.0 / (1.0 + d * d / (4.0 * r * r)).sqrt())
}

/// Smallest eigenvalue of a symmetric Gram matrix.
pub fn least_eigenvalue(gram: &GramMatrix) -> Result<f64> {
    let v = &gram.values;
    let k = v.nrows();
    let mut asym = 0.0f64;
    for i in 0..k {
        for j in 0..i {
            asym = asym.max((v[[i, j]] - v[[j, i]]).abs());
        }
    }
    if asym > 1e-8 {
        return Err(Error::invalid("gram", format!("asymmetry {asym} exceeds 1e-8")));
    }
    let m = nalgebra::DMatrix::from_fn(k, k, |i, j| 0.5 * (v[[i, j]] + v[[j, i]]));
    let eig = nalgebra::SymmetricEigen::new(m);
    Ok(eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min))
}

/// Least eigenvalue of the expected Gram on a staggered hexagonal patch with
/// `(v+1)^2` motifs at distance-to-diameter ratio `d / 2r`.
pub fn hex_patch_least_eigenvalue(v: usize, ratio: f64) -> Result<f64> {
    let r = 1.0;
    let centers = hexagonal_patch(v, 2.0 * r * ratio);
    least_eigenvalue(&approx_gram(&centers, r)?)
}

/// Radially averaged spectrum of the angle-averaged measure-then-back-project
/// kernel, next to its analytic prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumReport {
    /// Radial frequency grid in cycles per pixel (bin centers, starting 1/n).
    pub freq: Vec<f64>,
    pub empirical: Vec<f64>,
    /// `(2r / (sqrt(pi) f)) * exp(-4 pi^2 r^2 f^2)`.
    pub analytic: Vec<f64>,
    /// First frequency where the empirical spectrum drops below the threshold.
    pub cutoff: f64,
}

/// Analytic low-pass spectrum value at radial frequency `f`.
pub fn analytic_spectrum(r: f64, f: f64) -> f64 {
    let pi = std::f64::consts::PI;
    (2.0 * r / (pi.sqrt() * f)) * (-4.0 * pi * pi * r * r * f * f).exp()
}

/// Measure the averaged-operator kernel spectrum for a gaussian motif of
/// radius `r` with `theta_count` equispaced angles on an n-grid; `eps` is the
/// cutoff threshold (0.01 by default via [`lowpass_spectrum`]).
pub fn lowpass_spectrum_with_eps(r: f64, theta_count: usize, n: usize, eps: f64) -> Result<SpectrumReport> {
    if theta_count < 8 {
        return Err(Error::invalid("spectrum", "need at least 8 angles"));
    }
    let angles: Vec<f64> = (0..theta_count)
        .map(|i| 360.0 * i as f64 / theta_count as f64)
        .collect();
    let geom = ScanGeometry::new(angles, n)?;
    let motif = Motif::gaussian(r);
    let conv = motif_conv_plan(&motif, n)?;
    let mut spike = Array2::zeros((n, n));
    let c0 = (n - 1) / 2;
    spike[[c0, c0]] = 1.0;
    let y = conv.apply(&conv.apply(&spike, false), false);
    let plan = ShearPlan::new(n);
    let kernel = plan.back_project_data(&plan.project_data(&y, &geom), &geom);

    // Radial average of the 2-D DFT magnitude.
    let pair = crate::fourier::FftPair::new(n);
    let mut buf = Array2::from_shape_fn((n, n), |(i, j)| num_complex::Complex64::new(kernel[[i, j]], 0.0));
    crate::fourier::fft2_inplace(&mut buf, &pair, false);
    let half = n / 2;
    let mut sums = vec![0.0f64; half + 1];
    let mut counts = vec![0usize; half + 1];
    for u in 0..n {
        for v in 0..n {
            let fu = if u <= n / 2 { u as f64 } else { u as f64 - n as f64 };
            let fv = if v <= n / 2 { v as f64 } else { v as f64 - n as f64 };
            let bin = (fu.hypot(fv)).round() as usize;
            if (1..=half).contains(&bin) {
                sums[bin] += buf[[u, v]].norm();
                counts[bin] += 1;
            }
        }
    }
    let mut freq = Vec::new();
    let mut empirical = Vec::new();
    let mut analytic = Vec::new();
    for b in 1..=half {
        if counts[b] == 0 {
            continue;
        }
        let f = b as f64 / n as f64;
        freq.push(f);
        empirical.push(sums[b] / counts[b] as f64);
        analytic.push(analytic_spectrum(r, f));
    }
    let cutoff = freq
        .iter()
        .zip(empirical.iter())
        .find(|(_, &e)| e <= eps)
        .map(|(&f, _)| f)
        .unwrap_or_else(|| *freq.last().unwrap());
    Ok(SpectrumReport {
        freq,
        empirical,
        analytic,
        cutoff,
    })
}

/// [`lowpass_spectrum_with_eps`] with the default cutoff threshold 0.01.
pub fn lowpass_spectrum(r: f64, theta_count: usize, n: usize) -> Result<SpectrumReport> {
    lowpass_spectrum_with_eps(r, theta_count, n, 0.01)
}

/// Outcome of evaluating a dual certificate field on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CertificateReport {
    /// `max |field - 1|` over the true support.
    pub max_support_dev: f64,
    /// Largest field value off the support.
    pub max_off_support: f64,
    /// Least eigenvalue of the empirical Gram at the support centers.
    pub lambda_min: f64,
    pub pass: bool,
}

/// Build the certificate of the separated-support construction: one spike per
/// (line, motif) pair at the projected peak position, weighted so each motif
/// collects exactly 1/m from its own line term.
pub fn lemma_certificate(x0: &SparseMap, motif: &Motif, geom: &ScanGeometry) -> Result<LineScanSet> {
    let support = x0.support();
    if support.is_empty() {
        return Err(Error::invalid("certificate", "empty support"));
    }
    let n = x0.n();
    if geom.n != n {
        return Err(Error::invalid("certificate", "geometry size mismatch"));
    }
    let plan = ShearPlan::new(n);
    let conv = motif_conv_plan(motif, n)?;
    let m = geom.m();
    let mut q = Array2::zeros((n, m));
    for &(a, b) in &support {
        let mut spike = Array2::zeros((n, n));
        spike[[a, b]] = 1.0;
        let proj = plan.project_data(&conv.apply(&spike, false), geom);
        for i in 0..m {
            let mut best_t = 0usize;
            let mut best = f64::NEG_INFINITY;
            for t in 0..n {
                if proj[[t, i]] > best {
                    best = proj[[t, i]];
                    best_t = t;
                }
            }
            if !(best > 0.0) {
                return Err(Error::invalid("certificate", "projection peak is not positive"));
            }
            q[[best_t, i]] += 1.0 / (m as f64 * best);
        }
    }
    LineScanSet::new(q, geom.clone())
}

/// Evaluate the certificate field `D ⋆ L*[Q]` on the pixel grid and test the
/// optimality conditions: field = 1 (within 1e-6) on the support, < 1 - 1e-6
/// elsewhere, and a positive-definite empirical Gram.
pub fn check_certificate(
    x0: &SparseMap,
    motif: &Motif,
    geom: &ScanGeometry,
    q: &LineScanSet,
) -> Result<CertificateReport> {
    let n = x0.n();
    if geom.n != n || q.geometry.n != n || q.samples() != n {
        return Err(Error::invalid("certificate", "shape mismatch"));
    }
    let support = x0.support();
    if support.is_empty() {
        return Err(Error::invalid("certificate", "empty support"));
    }
    let plan = ShearPlan::new(n);
    let conv = motif_conv_plan(motif, n)?;
    let field = conv.apply(&plan.back_project_data(q.data(), geom), true);
    let mut max_support_dev = 0.0f64;
    let mut max_off_support = f64::NEG_INFINITY;
    let on: std::collections::HashSet<(usize, usize)> = support.iter().cloned().collect();
    for ((i, j), &v) in field.indexed_iter() {
        if on.contains(&(i, j)) {
            max_support_dev = max_support_dev.max((v - 1.0).abs());
        } else {
            max_off_support = max_off_support.max(v);
        }
    }
    let centers: Vec<(f64, f64)> = support.iter().map(|&(a, b)| (a as f64, b as f64)).collect();
    let lambda_min = least_eigenvalue(&empirical_gram(&centers, motif, geom)?)?;
    let pass = max_support_dev <= 1e-6 && max_off_support < 1.0 - 1e-6 && lambda_min > 0.0;
    Ok(CertificateReport {
        max_support_dev,
        max_off_support,
        lambda_min,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MotifNorm;

    #[test]
    fn approx_gram_closed_form() {
        let r = 3.0;
        let centers = vec![(0.0, 0.0), (0.0, 6.0), (0.0, 0.0)];
        let g = approx_gram(&centers, r).unwrap();
        assert_eq!(g.values()[[0, 0]], 1.0);
        // d = 2r -> (1 + 1)^{-1/2}.
        assert!((g.values()[[0, 1]] - 0.5f64.sqrt()).abs() < 1e-12);
        // Coincident centers -> off-diagonal 1.
        assert_eq!(g.values()[[0, 2]], 1.0);
    }

    #[test]
    fn least_eigenvalue_small_cases() {
        let id = GramMatrix {
            values: Array2::eye(5),
            centers: vec![(0.0, 0.0); 5],
            mode: GramMode::ExpectedApprox,
        };
        assert!((least_eigenvalue(&id).unwrap() - 1.0).abs() < 1e-12);

        let g = 0.37;
        let two = GramMatrix {
            values: ndarray::arr2(&[[1.0, g], [g, 1.0]]),
            centers: vec![(0.0, 0.0); 2],
            mode: GramMode::ExpectedApprox,
        };
        assert!((least_eigenvalue(&two).unwrap() - (1.0 - g)).abs() < 1e-12);

        // k = 3 cross-check against characteristic-polynomial roots.
        let vals = ndarray::arr2(&[[2.0, 0.4, 0.1], [0.4, 1.5, 0.3], [0.1, 0.3, 1.1]]);
        let three = GramMatrix {
            values: vals.clone(),
            centers: vec![(0.0, 0.0); 3],
            mode: GramMode::ExpectedApprox,
        };
        let lam = least_eigenvalue(&three).unwrap();
        // p(x) = det(A - xI); bisection root below the trace minimum.
        let det = |x: f64| {
            let a = &vals;
            (a[[0, 0]] - x) * ((a[[1, 1]] - x) * (a[[2, 2]] - x) - a[[1, 2]] * a[[2, 1]])
                - a[[0, 1]] * (a[[1, 0]] * (a[[2, 2]] - x) - a[[1, 2]] * a[[2, 0]])
                + a[[0, 2]] * (a[[1, 0]] * a[[2, 1]] - (a[[1, 1]] - x) * a[[2, 0]])
        };
        let (mut lo, mut hi) = (0.0, 1.1);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if det(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((lam - lo).abs() < 1e-9, "eig {lam} vs root {lo}");
    }

    #[test]
    fn asymmetric_matrix_rejected() {
        let bad = GramMatrix {
            values: ndarray::arr2(&[[1.0, 0.5], [0.2, 1.0]]),
            centers: vec![(0.0, 0.0); 2],
            mode: GramMode::ExpectedApprox,
        };
        assert!(least_eigenvalue(&bad).is_err());
    }

    #[test]
    fn empirical_gram_basics() {
        let motif = Motif::gaussian(2.0);
        let geom = ScanGeometry::new((0..24).map(|i| i as f64 * 15.0).collect(), 32).unwrap();
        let one = empirical_gram(&[(16.0, 16.0)], &motif, &geom).unwrap();
        assert!(one.values()[[0, 0]] > 0.0);
        let two = empirical_gram(&[(16.0, 16.0), (16.0, 16.0)], &motif, &geom).unwrap();
        assert!((two.values()[[0, 1]] - two.values()[[0, 0]]).abs() < 1e-10);
    }

    #[test]
    fn lemma_bracket_holds_at_modest_angle_count() {
        // Small version of the acceptance sweep: r=2, d=8, 90 angles.
        let (r, d) = (2.0, 8.0);
        let n = 48;
        let c = (n / 2) as f64;
        let motif = Motif::gaussian(r);
        let geom = ScanGeometry::new((0..90).map(|i| i as f64 * 4.0).collect(), n).unwrap();
        let g = empirical_gram(&[(c, c - d / 2.0), (c, c + d / 2.0)], &motif, &geom).unwrap();
        let ratio = g.values()[[0, 1]] / g.values()[[0, 0]];
        let (lo, hi) = coherence_bracket(r, d);
        assert!(
            ratio >= lo - 0.03 && ratio <= hi + 0.03,
            "ratio {ratio} outside [{lo}, {hi}] +- 0.03"
        );
    }

    #[test]
    fn hex_patch_small_values() {
        // Two entries of the coherence study at patch index 2.
        let a = hex_patch_least_eigenvalue(2, 0.5).unwrap();
        assert!((a - 0.0158967288505295).abs() < 1e-9, "got {a}");
        let b = hex_patch_least_eigenvalue(2, 2.0).unwrap();
        assert!((b - 0.41773738018898).abs() < 1e-9, "got {b}");
        // Series ordering: smaller ratio -> smaller least eigenvalue.
        assert!(a < b);
    }

    #[test]
    fn analytic_spectrum_point_and_monotonicity() {
        let v = analytic_spectrum(1.0, 1.0 / std::f64::consts::PI);
        let expect = 2.0 * std::f64::consts::PI.sqrt() * (-4.0f64).exp();
        assert!((v - expect).abs() < 1e-12);
        let mut prev = analytic_spectrum(1.0, 0.02);
        for i in 3..40 {
            let cur = analytic_spectrum(1.0, 0.01 * i as f64);
            assert!(cur < prev);
            prev = cur;
        }
    }

    #[test]
    fn certificate_single_motif_passes() {
        let n = 32;
        let mut x = Array2::zeros((n, n));
        x[[14, 17]] = 1.0;
        let x0 = SparseMap::new(x).unwrap();
        let motif = Motif::disc(1.0).with_normalization(MotifNorm::UnitMass);
        let geom = ScanGeometry::new(vec![10.0, 65.0, 140.0], n).unwrap();
        let q = lemma_certificate(&x0, &motif, &geom).unwrap();
        let report = check_certificate(&x0, &motif, &geom, &q).unwrap();
        assert!(report.max_support_dev <= 1e-6, "{report:?}");
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn certificate_overlapping_discs_fail() {
        let n = 32;
        let mut x = Array2::zeros((n, n));
        x[[16, 14]] = 1.0;
        x[[16, 17]] = 1.0; // distance 3 < 2r = 8: heavy overlap
        let x0 = SparseMap::new(x).unwrap();
        let motif = Motif::disc(4.0).with_normalization(MotifNorm::UnitMass);
        let geom = ScanGeometry::new(vec![0.0, 60.0, 120.0], n).unwrap();
        let q = lemma_certificate(&x0, &motif, &geom).unwrap();
        let report = check_certificate(&x0, &motif, &geom, &q).unwrap();
        assert!(!report.pass, "{report:?}");
    }
}
