//! Parametric probe response: a smoothed two-sided power-law decay
//! `psi(p) = (E-left + E-right) * f_sigma` with `E_{c,a}(t) = (c t + 1)^{-a}`
//! on its side of the origin, rendered to discrete taps, applied per scan
//! line, and differentiated numerically for calibration.

use crate::model::{psf_coord, LineScanSet, PsfParams};
use crate::{Error, Result};
use ndarray::Array2;

/// Discrete PSF taps of length `2w + 1`, centered at index `w`.
#[derive(Debug, Clone, PartialEq)]
pub struct PsfKernel {
    taps: Vec<f64>,
    half_width: usize,
}

impl PsfKernel {
    pub fn delta() -> Self {
        PsfKernel {
            taps: vec![0.0, 1.0, 0.0],
            half_width: 1,
        }
    }

    pub fn from_taps(taps: Vec<f64>) -> Result<Self> {
        if taps.len() % 2 == 0 || taps.is_empty() {
            return Err(Error::invalid("psf kernel", "tap count must be odd"));
        }
        if taps.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("psf kernel", "non-finite tap"));
        }
        let half_width = taps.len() / 2;
        Ok(PsfKernel { taps, half_width })
    }

    pub fn half_width(&self) -> usize {
        self.half_width
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    /// Tap at signed offset `k` (0 outside the support).
    pub fn tap(&self, k: isize) -> f64 {
        let idx = k + self.half_width as isize;
        if idx < 0 || idx as usize >= self.taps.len() {
            0.0
        } else {
            self.taps[idx as usize]
        }
    }

    pub fn is_delta(&self) -> bool {
        self.taps
            .iter()
            .enumerate()
            .all(|(i, &v)| if i == self.half_width { v == 1.0 } else { v == 0.0 })
    }
}

/// Unsmoothed two-sided decay at signed offset `t`; the `t = 0` tap is the
/// single unit peak `a * 1` (the paper's half-open indicators leave 0 free).
fn base_tap(p: &[f64; 6], t: f64) -> f64 {
    if t == 0.0 {
        1.0
    } else if t > 0.0 {
        (p[psf_coord::C_RIGHT] * t + 1.0).powf(-p[psf_coord::ALPHA_RIGHT])
    } else {
        (p[psf_coord::C_LEFT] * (-t) + 1.0).powf(-p[psf_coord::ALPHA_LEFT])
    }
}

/// Sum-normalized discrete Gaussian smoothing taps for `sigma > 0`.
fn gaussian_taps(sigma: f64) -> Vec<f64> {
    let g = (6.0 * sigma).ceil() as isize;
    let mut taps: Vec<f64> = (-g..=g)
        .map(|k| (-(k as f64 * k as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = taps.iter().sum();
    for v in taps.iter_mut() {
        *v /= s;
    }
    taps
}

/// Render taps for one parameter vector without box checking.
pub fn render_taps(p: &[f64; 6], w: usize) -> Vec<f64> {
    let a = p[psf_coord::AMPLITUDE];
    let sigma = p[psf_coord::SIGMA];
    let wi = w as isize;
    if sigma == 0.0 {
        return (-wi..=wi).map(|k| a * base_tap(p, k as f64)).collect();
    }
    let g = gaussian_taps(sigma);
    let gh = (g.len() / 2) as isize;
    (-wi..=wi)
        .map(|k| {
            let mut acc = 0.0;
            for (gi, &gv) in g.iter().enumerate() {
                let off = gi as isize - gh;
                acc += gv * base_tap(p, (k - off) as f64);
            }
            a * acc
        })
        .collect()
}

/// Render the kernel for line `i` of `params`, validating the box.
pub fn render_psf(params: &PsfParams, i: usize, w: usize) -> Result<PsfKernel> {
    if w < 1 {
        return Err(Error::invalid("psf", "half-width must be >= 1"));
    }
    if i >= params.m() {
        return Err(Error::invalid("psf", format!("line index {i} out of range")));
    }
    let p = params.line(i);
    PsfKernel::from_taps(render_taps(&p, w))
}

/// Smallest half-width at which the unsmoothed decay tail drops below
/// `1e-3` of the peak, capped at `n / 2`.
pub fn default_half_width(p: &[f64; 6], n: usize) -> usize {
    let cap = (n / 2).max(1);
    let sigma_reach = (3.0 * p[psf_coord::SIGMA]).ceil() as usize;
    for w in 1..=cap {
        let t = w as f64;
        let tail = base_tap(p, t).max(base_tap(p, -t));
        if tail <= 1e-3 {
            return (w + sigma_reach).min(cap);
        }
    }
    cap
}

/// Convolve every column with its per-angle kernel ("same", zero padded).
pub fn apply_psf(scans: &LineScanSet, kernels: &[PsfKernel]) -> Result<LineScanSet> {
    apply_kernels(scans, kernels, false)
}

/// Correlate every column with its kernel: the exact adjoint of `apply_psf`.
pub fn apply_psf_adjoint(scans: &LineScanSet, kernels: &[PsfKernel]) -> Result<LineScanSet> {
    apply_kernels(scans, kernels, true)
}

fn apply_kernels(scans: &LineScanSet, kernels: &[PsfKernel], adjoint: bool) -> Result<LineScanSet> {
    let m = scans.geometry.m();
    if kernels.len() != m {
        return Err(Error::invalid(
            "psf",
            format!("expected {m} kernels, got {}", kernels.len()),
        ));
    }
    let rows = scans.samples();
    let mut out = Array2::zeros((rows, m));
    for i in 0..m {
        let ker = &kernels[i];
        let w = ker.half_width() as isize;
        for t in 0..rows {
            let mut acc = 0.0;
            for k in -w..=w {
                let s = t as isize - k;
                if s >= 0 && (s as usize) < rows {
                    let tap = if adjoint { ker.tap(-k) } else { ker.tap(k) };
                    acc += tap * scans.data()[[s as usize, i]];
                }
            }
            out[[t, i]] = acc;
        }
    }
    LineScanSet::new(out, scans.geometry.clone())
}

/// Sensitivity of the rendered taps with respect to one parameter coordinate.
#[derive(Debug, Clone)]
pub struct TapSensitivity {
    /// d taps / d p[coord], one value per tap.
    pub taps: Vec<f64>,
    /// True when a box boundary forced a one-sided difference.
    pub one_sided: bool,
}

/// Finite-difference sensitivity of `render_psf(params, i, w)` w.r.t.
/// coordinate `coord`, central where the box allows and one-sided (flagged)
/// on a boundary.
pub fn psf_param_gradient(params: &PsfParams, i: usize, w: usize, coord: usize) -> Result<TapSensitivity> {
    if coord >= 6 {
        return Err(Error::invalid("psf", format!("coordinate index {coord} out of range")));
    }
    let p = params.line(i);
    if params.is_fixed(coord) {
        return Ok(TapSensitivity {
            taps: vec![0.0; 2 * w + 1],
            one_sided: false,
        });
    }
    let h = 1e-6 * p[coord].abs().max(1.0);
    let lower = params.lower()[coord];
    let upper = params.upper()[coord];
    let up_ok = p[coord] + h <= upper;
    let down_ok = p[coord] - h >= lower;
    let eval = |v: f64| -> Vec<f64> {
        let mut q = p;
        q[coord] = v;
        render_taps(&q, w)
    };
    let (taps, one_sided) = if up_ok && down_ok {
        let hi = eval(p[coord] + h);
        let lo = eval(p[coord] - h);
        (
            hi.iter().zip(lo.iter()).map(|(a, b)| (a - b) / (2.0 * h)).collect(),
            false,
        )
    } else if up_ok {
        let hi = eval(p[coord] + h);
        let mid = eval(p[coord]);
        (hi.iter().zip(mid.iter()).map(|(a, b)| (a - b) / h).collect(), true)
    } else if down_ok {
        let mid = eval(p[coord]);
        let lo = eval(p[coord] - h);
        (mid.iter().zip(lo.iter()).map(|(a, b)| (a - b) / h).collect(), true)
    } else {
        (vec![0.0; 2 * w + 1], true)
    };
    Ok(TapSensitivity { taps, one_sided })
}

/// Probe response model used by the simulator and solver.
#[derive(Debug, Clone, PartialEq)]
pub enum PsfModel {
    /// Ideal probe: the identity response.
    Delta,
    /// Parametric two-sided decay, one vector per line.
    Params(PsfParams),
}

impl PsfModel {
    /// Render one kernel per line for an n-sample sweep.
    pub fn kernels(&self, m: usize, n: usize) -> Result<Vec<PsfKernel>> {
        match self {
            PsfModel::Delta => Ok(vec![PsfKernel::delta(); m]),
            PsfModel::Params(params) => {
                if params.m() != m {
                    return Err(Error::invalid(
                        "psf",
                        format!("params cover {} lines, geometry has {m}", params.m()),
                    ));
                }
                (0..m)
                    .map(|i| {
                        let w = default_half_width(&params.line(i), n);
                        render_psf(params, i, w)
                    })
                    .collect()
            }
        }
    }
}
