//! Internal FFT helpers: square 2-D transforms and a cached plan for "same"
//! linear convolution/correlation against a fixed centered kernel.

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

/// Forward/inverse FFT pair of a fixed size with a shared scratch buffer size.
pub(crate) struct FftPair {
    pub len: usize,
    pub fwd: Arc<dyn Fft<f64>>,
    pub inv: Arc<dyn Fft<f64>>,
}

impl FftPair {
    pub fn new(len: usize) -> Self {
        let mut planner = FftPlanner::new();
        FftPair {
            len,
            fwd: planner.plan_fft_forward(len),
            inv: planner.plan_fft_inverse(len),
        }
    }

    pub fn scratch(&self) -> Vec<Complex64> {
        let n = self
            .fwd
            .get_inplace_scratch_len()
            .max(self.inv.get_inplace_scratch_len());
        vec![Complex64::new(0.0, 0.0); n]
    }
}

/// In-place 2-D FFT of a square complex grid (rows first, then columns).
pub(crate) fn fft2_inplace(data: &mut Array2<Complex64>, pair: &FftPair, inverse: bool) {
    let p = pair.len;
    debug_assert_eq!(data.dim(), (p, p));
    let fft = if inverse { &pair.inv } else { &pair.fwd };
    let mut scratch = pair.scratch();
    for mut row in data.rows_mut() {
        let slice = row.as_slice_mut().expect("contiguous row");
        fft.process_with_scratch(slice, &mut scratch);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); p];
    for j in 0..p {
        for i in 0..p {
            col[i] = data[[i, j]];
        }
        fft.process_with_scratch(&mut col, &mut scratch);
        for i in 0..p {
            data[[i, j]] = col[i];
        }
    }
    if inverse {
        let scale = 1.0 / (p * p) as f64;
        data.mapv_inplace(|v| v * scale);
    }
}

/// Cached plan for "same" 2-D linear convolution of an n-by-n grid with a
/// centered n-by-n kernel (zero padding outside the grid). The adjoint of the
/// forward map is correlation with the same kernel; both share one kernel
/// transform.
pub(crate) struct Conv2Plan {
    n: usize,
    p: usize,
    khat: Array2<Complex64>,
    pair: FftPair,
}

impl Conv2Plan {
    /// `kernel` is an n-by-n image whose center tap sits at index
    /// `((n-1)/2, (n-1)/2)`.
    pub fn new(kernel: &Array2<f64>) -> Self {
        let n = kernel.nrows();
        assert_eq!(kernel.ncols(), n, "kernel must be square");
        let p = 2 * n;
        let c = (n - 1) / 2;
        let pair = FftPair::new(p);
        let mut khat = Array2::from_elem((p, p), Complex64::new(0.0, 0.0));
        // Wrap the kernel so its center tap lands at padded index (0, 0).
        for a in 0..n {
            for b in 0..n {
                let u = (a + p - c) % p;
                let v = (b + p - c) % p;
                khat[[u, v]] = Complex64::new(kernel[[a, b]], 0.0);
            }
        }
        fft2_inplace(&mut khat, &pair, false);
        Conv2Plan { n, p, khat, pair }
    }

    /// Convolve (`adjoint = false`) or correlate (`adjoint = true`) with the
    /// planned kernel, returning the central n-by-n "same" window.
    pub fn apply(&self, x: &Array2<f64>, adjoint: bool) -> Array2<f64> {
        assert_eq!(x.dim(), (self.n, self.n), "input shape mismatch");
        let (n, p) = (self.n, self.p);
        let mut buf = Array2::from_elem((p, p), Complex64::new(0.0, 0.0));
        for i in 0..n {
            for j in 0..n {
                buf[[i, j]] = Complex64::new(x[[i, j]], 0.0);
            }
        }
        let mut scratch = self.pair.scratch();
        // Forward: rows n..p are zero, so only the top rows need transforms.
        for mut row in buf.rows_mut().into_iter().take(n) {
            self.pair
                .fwd
                .process_with_scratch(row.as_slice_mut().expect("contiguous"), &mut scratch);
        }
        let mut col = vec![Complex64::new(0.0, 0.0); p];
        for j in 0..p {
            for i in 0..p {
                col[i] = buf[[i, j]];
            }
            self.pair.fwd.process_with_scratch(&mut col, &mut scratch);
            for i in 0..p {
                buf[[i, j]] = col[i];
            }
        }
        if adjoint {
            ndarray::Zip::from(&mut buf)
                .and(&self.khat)
                .for_each(|b, &k| *b *= k.conj());
        } else {
            ndarray::Zip::from(&mut buf)
                .and(&self.khat)
                .for_each(|b, &k| *b *= k);
        }
        // Inverse: columns first, then only the rows of the cropped window.
        for j in 0..p {
            for i in 0..p {
                col[i] = buf[[i, j]];
            }
            self.pair.inv.process_with_scratch(&mut col, &mut scratch);
            for i in 0..n {
                buf[[i, j]] = col[i];
            }
        }
        let scale = 1.0 / (p * p) as f64;
        let mut out = Array2::zeros((n, n));
        for i in 0..n {
            let mut row = buf.row_mut(i);
            let slice = row.as_slice_mut().expect("contiguous");
            self.pair.inv.process_with_scratch(slice, &mut scratch);
            for j in 0..n {
                out[[i, j]] = slice[j].re * scale;
            }
        }
        out
    }
}
