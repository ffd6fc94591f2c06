//! Reconstruction: nonnegative sparse regression with inertial proximal
//! alternating linearized minimization (backtracked), wrapped in reweighting
//! rounds that sharpen the penalty and optionally calibrate the PSF.

use crate::fourier::Conv2Plan;
use crate::model::{
    motif_conv_plan, Coupling, LineScanSet, Motif, PsfParams, SolverConfig, SparseMap,
};
use crate::ops::ShearPlan;
use crate::psf::{self, PsfKernel, PsfModel};
use crate::sim::{downsample_rows, upsample_rows};
use crate::{Error, Result};
use ndarray::Array2;

/// One free optimization coordinate of the PSF block.
#[derive(Debug, Clone, Copy)]
enum FreeCoord {
    /// Varies on a single line.
    PerLine { line: usize, coord: usize },
    /// One value shared by every line.
    Shared { coord: usize },
}

/// Mapping between a flat vector of free values and per-line parameters.
#[derive(Debug, Clone)]
struct ParamSpace {
    free: Vec<FreeCoord>,
}

impl ParamSpace {
    fn new(params: &PsfParams, coupling: Coupling) -> Self {
        let mut free = Vec::new();
        match coupling {
            Coupling::Independent => {
                for line in 0..params.m() {
                    for coord in 0..6 {
                        if !params.is_fixed(coord) {
                            free.push(FreeCoord::PerLine { line, coord });
                        }
                    }
                }
            }
            Coupling::SharedShape => {
                if !params.is_fixed(crate::model::psf_coord::AMPLITUDE) {
                    for line in 0..params.m() {
                        free.push(FreeCoord::PerLine {
                            line,
                            coord: crate::model::psf_coord::AMPLITUDE,
                        });
                    }
                }
                for coord in 1..6 {
                    if !params.is_fixed(coord) {
                        free.push(FreeCoord::Shared { coord });
                    }
                }
            }
        }
        ParamSpace { free }
    }

    fn dim(&self) -> usize {
        self.free.len()
    }

    fn extract(&self, params: &PsfParams) -> Vec<f64> {
        self.free
            .iter()
            .map(|fc| match *fc {
                FreeCoord::PerLine { line, coord } => params.line(line)[coord],
                FreeCoord::Shared { coord } => params.line(0)[coord],
            })
            .collect()
    }

    fn embed(&self, params: &PsfParams, values: &[f64]) -> Result<PsfParams> {
        let mut lines: Vec<[f64; 6]> = params.lines().to_vec();
        for (fc, &v) in self.free.iter().zip(values.iter()) {
            match *fc {
                FreeCoord::PerLine { line, coord } => lines[line][coord] = v,
                FreeCoord::Shared { coord } => {
                    for l in lines.iter_mut() {
                        l[coord] = v;
                    }
                }
            }
        }
        params.with_lines_clamped(lines)
    }

    fn project(&self, params: &PsfParams, values: &[f64]) -> Vec<f64> {
        self.free
            .iter()
            .zip(values.iter())
            .map(|(fc, &v)| {
                let coord = match *fc {
                    FreeCoord::PerLine { coord, .. } => coord,
                    FreeCoord::Shared { coord } => coord,
                };
                v.clamp(params.lower()[coord], params.upper()[coord])
            })
            .collect()
    }
}

/// A fixed reconstruction problem: observed scans, motif, probe model, and
/// cached transform plans.
pub struct Problem {
    scans: LineScanSet,
    motif: Motif,
    stride: usize,
    plan: ShearPlan,
    conv: Conv2Plan,
    psf: PsfStructure,
}

enum PsfStructure {
    Delta,
    Calibrated {
        space: ParamSpace,
        /// Per-line tap half-widths, fixed for the whole solve so the smooth
        /// objective stays smooth as parameters move.
        half_widths: Vec<usize>,
    },
}

/// Snapshot of one reweighting round's penalty.
#[derive(Debug, Clone)]
pub struct ReweightState {
    pub lambda: Array2<f64>,
    pub round: usize,
    /// Smooth objective at the end of the round.
    pub objective: f64,
}

/// Full solver output.
#[derive(Debug, Clone)]
pub struct SolverResult {
    pub x_hat: SparseMap,
    pub p_hat: PsfModel,
    /// Composite objective (penalty + smooth part) after every accepted
    /// iPalm iteration, across all rounds.
    pub objective_trace: Vec<f64>,
    pub rounds: Vec<ReweightState>,
    /// `1` where `x_hat >= 0.5 * max(x_hat)`.
    pub location_map: Array2<u8>,
    /// True when every accepted step satisfied the sufficient-decrease test.
    pub sufficient_decrease_ok: bool,
}

impl Problem {
    pub fn new(scans: LineScanSet, motif: Motif, psf_init: &PsfModel, coupling: Coupling, stride: usize) -> Result<Self> {
        let n = scans.geometry.n;
        if stride < 1 {
            return Err(Error::invalid("problem", "stride must be >= 1"));
        }
        let expect = n.div_ceil(stride);
        if scans.samples() != expect {
            return Err(Error::invalid(
                "problem",
                format!("scan rows {} do not match n={n} with stride {stride} (expected {expect})", scans.samples()),
            ));
        }
        let psf = match psf_init {
            PsfModel::Delta => PsfStructure::Delta,
            PsfModel::Params(params) => {
                if params.m() != scans.geometry.m() {
                    return Err(Error::invalid("problem", "psf params / geometry line count mismatch"));
                }
                // Widest tails over the box keep the support fixed while
                // parameters move inside it.
                let lower = params.lower();
                let upper = params.upper();
                let widest = [
                    upper[0],
                    lower[1],
                    lower[2],
                    lower[3],
                    lower[4],
                    upper[5],
                ];
                let w = psf::default_half_width(&widest, n);
                PsfStructure::Calibrated {
                    space: ParamSpace::new(params, coupling),
                    half_widths: vec![w; params.m()],
                }
            }
        };
        let plan = ShearPlan::new(n);
        let conv = motif_conv_plan(&motif, n)?;
        Ok(Problem {
            scans,
            motif,
            stride,
            plan,
            conv,
            psf,
        })
    }

    pub fn n(&self) -> usize {
        self.scans.geometry.n
    }

    pub fn scans(&self) -> &LineScanSet {
        &self.scans
    }

    pub fn motif(&self) -> &Motif {
        &self.motif
    }

    fn kernels(&self, p: &PsfModel) -> Result<Vec<PsfKernel>> {
        match (&self.psf, p) {
            (PsfStructure::Delta, _) => Ok(vec![PsfKernel::delta(); self.scans.geometry.m()]),
            (PsfStructure::Calibrated { half_widths, .. }, PsfModel::Params(params)) => (0..params.m())
                .map(|i| psf::render_psf(params, i, half_widths[i]))
                .collect(),
            (PsfStructure::Calibrated { .. }, PsfModel::Delta) => {
                Err(Error::invalid("problem", "calibrated problem needs parametric psf"))
            }
        }
    }

    /// Pre-PSF line projections `v = L_Theta[D * X]`, n rows by m columns.
    fn forward_lines(&self, x: &Array2<f64>) -> Array2<f64> {
        self.plan
            .project_data(&self.conv.apply(x, false), &self.scans.geometry)
    }

    /// Apply per-line kernels and stride sampling to pre-PSF projections.
    fn predict_from_lines(&self, v: &Array2<f64>, kernels: &[PsfKernel]) -> Array2<f64> {
        let blurred = if kernels.iter().all(|k| k.is_delta()) {
            v.clone()
        } else {
            let scans = LineScanSet::new(v.clone(), self.scans.geometry.clone()).expect("finite");
            psf::apply_psf(&scans, kernels).expect("kernel count checked").into_data()
        };
        downsample_rows(&blurred, self.stride)
    }

    /// Smooth data-fit objective `h(X, p)`.
    pub fn objective(&self, x: &Array2<f64>, p: &PsfModel) -> Result<f64> {
        let kernels = self.kernels(p)?;
        let v = self.forward_lines(x);
        Ok(self.objective_from_lines(&v, &kernels))
    }

    fn objective_from_lines(&self, v: &Array2<f64>, kernels: &[PsfKernel]) -> f64 {
        let pred = self.predict_from_lines(v, kernels);
        0.5 * (&pred - self.scans.data()).iter().map(|d| d * d).sum::<f64>()
    }

    /// Gradient of `h` with respect to `X` at `(x, p)`, plus the objective.
    pub fn grad_x(&self, x: &Array2<f64>, p: &PsfModel) -> Result<(Array2<f64>, f64)> {
        let kernels = self.kernels(p)?;
        let v = self.forward_lines(x);
        let pred = self.predict_from_lines(&v, &kernels);
        let resid = &pred - self.scans.data();
        let h = 0.5 * resid.iter().map(|d| d * d).sum::<f64>();
        let up = upsample_rows(&resid, self.stride, self.n());
        let back = if kernels.iter().all(|k| k.is_delta()) {
            up
        } else {
            let scans = LineScanSet::new(up, self.scans.geometry.clone()).expect("finite");
            psf::apply_psf_adjoint(&scans, &kernels)?.into_data()
        };
        let img = self.plan.back_project_data(&back, &self.scans.geometry);
        Ok((self.conv.apply(&img, true), h))
    }

    /// Gradient of `h` with respect to the free PSF coordinates, with the
    /// pre-PSF projections `v` held fixed (h is linear in the taps).
    fn grad_p(&self, v: &Array2<f64>, params: &PsfParams) -> Result<Vec<f64>> {
        let (space, half_widths) = match &self.psf {
            PsfStructure::Calibrated { space, half_widths } => (space, half_widths),
            PsfStructure::Delta => return Ok(Vec::new()),
        };
        let kernels = self.kernels(&PsfModel::Params(params.clone()))?;
        let pred = self.predict_from_lines(v, &kernels);
        let resid = &pred - self.scans.data();
        let mut grad = Vec::with_capacity(space.dim());
        for fc in &space.free {
            let lines: Vec<usize> = match *fc {
                FreeCoord::PerLine { line, .. } => vec![line],
                FreeCoord::Shared { .. } => (0..params.m()).collect(),
            };
            let coord = match *fc {
                FreeCoord::PerLine { coord, .. } => coord,
                FreeCoord::Shared { coord } => coord,
            };
            let mut acc = 0.0;
            for i in lines {
                let sens = psf::psf_param_gradient(params, i, half_widths[i], coord)?;
                let w = half_widths[i] as isize;
                let rows = self.n();
                // Convolve column i of v with the sensitivity taps, then
                // stride-sample and correlate with the residual column.
                for (tt, rrow) in (0..rows).step_by(self.stride).enumerate() {
                    let rv = resid[[tt, i]];
                    if rv == 0.0 {
                        continue;
                    }
                    let mut conv_t = 0.0;
                    for k in -w..=w {
                        let s = rrow as isize - k;
                        if s >= 0 && (s as usize) < rows {
                            conv_t += sens.taps[(k + w) as usize] * v[[s as usize, i]];
                        }
                    }
                    acc += rv * conv_t;
                }
            }
            grad.push(acc);
        }
        Ok(grad)
    }
}

/// Elementwise nonnegative soft threshold `max(V - t*lambda, 0)`.
pub fn prox_step(v: &Array2<f64>, tlambda: &Array2<f64>) -> Array2<f64> {
    let mut out = v - tlambda;
    out.mapv_inplace(|x| x.max(0.0));
    out
}

/// Outcome of one iPalm run.
pub struct IpalmOutcome {
    pub x: Array2<f64>,
    pub p: PsfModel,
    pub trace: Vec<f64>,
    pub objective: f64,
    pub sufficient_decrease_ok: bool,
}

const MAX_HALVINGS: u32 = 60;

/// Inertial proximal alternating linearized minimization with backtracking:
/// an extrapolated prox-gradient step on `X`, then a box-projected gradient
/// step on the PSF parameters, each with a sufficient-decrease line search.
pub fn ipalm(
    problem: &Problem,
    x_init: &Array2<f64>,
    p_init: &PsfModel,
    lambda: &Array2<f64>,
    iters: usize,
    cfg: &SolverConfig,
) -> Result<IpalmOutcome> {
    if lambda.iter().any(|&v| v < 0.0) {
        return Err(Error::invalid("ipalm", "lambda must be >= 0"));
    }
    let alpha = cfg.alpha_inertia;
    let mut x = x_init.clone();
    let mut x_prev = x.clone();
    let mut p = p_init.clone();
    let mut p_vec_prev: Option<Vec<f64>> = None;
    let mut t_x0 = 1.0f64;
    let mut t_p0 = 1.0f64;
    let mut trace = Vec::with_capacity(iters);
    let mut decrease_ok = true;
    let mut stall = 0usize;
    let mut last_f = f64::INFINITY;

    for _ in 0..iters {
        // --- X block ---
        let y = &x + &((&x - &x_prev) * alpha);
        let (g, h_y) = problem.grad_x(&y, &p)?;
        let mut t = t_x0;
        let mut halvings = 0u32;
        let (x_next, mut h_x) = loop {
            let step = &y - &(&g * t);
            let tl = lambda * t;
            let cand = prox_step(&step, &tl);
            let diff = &cand - &y;
            let lin: f64 = g.iter().zip(diff.iter()).map(|(a, b)| a * b).sum();
            let quad: f64 = diff.iter().map(|d| d * d).sum::<f64>() / (2.0 * t);
            let h_cand = problem.objective(&cand, &p)?;
            if h_cand <= h_y + lin + quad + 1e-12 * h_y.abs().max(1.0) {
                break (cand, h_cand);
            }
            halvings += 1;
            if halvings > MAX_HALVINGS {
                return Err(Error::LipschitzBlowup {
                    block: "X",
                    halvings,
                });
            }
            t *= 0.5;
        };
        t_x0 = 4.0 * t;
        x_prev = x;
        x = x_next;

        // --- p block (only when the PSF has free coordinates) ---
        if let (PsfStructure::Calibrated { space, .. }, PsfModel::Params(params)) = (&problem.psf, &p) {
            if space.dim() > 0 {
                let v = problem.forward_lines(&x);
                let p_vec = space.extract(params);
                let w_vec: Vec<f64> = match &p_vec_prev {
                    Some(prev) => p_vec
                        .iter()
                        .zip(prev.iter())
                        .map(|(c, o)| c + alpha * (c - o))
                        .collect(),
                    None => p_vec.clone(),
                };
                let w_vec = space.project(params, &w_vec);
                let w_params = space.embed(params, &w_vec)?;
                let kern_w = problem.kernels(&PsfModel::Params(w_params.clone()))?;
                let h_w = problem.objective_from_lines(&v, &kern_w);
                let grad = problem.grad_p(&v, &w_params)?;
                let mut t = t_p0;
                let mut halvings = 0u32;
                let (p_next_vec, h_p) = loop {
                    let stepped: Vec<f64> = w_vec.iter().zip(grad.iter()).map(|(a, b)| a - t * b).collect();
                    let cand = space.project(params, &stepped);
                    let diff: Vec<f64> = cand.iter().zip(w_vec.iter()).map(|(a, b)| a - b).collect();
                    let lin: f64 = grad.iter().zip(diff.iter()).map(|(a, b)| a * b).sum();
                    let quad: f64 = diff.iter().map(|d| d * d).sum::<f64>() / (2.0 * t);
                    let cand_params = space.embed(params, &cand)?;
                    let kern_c = problem.kernels(&PsfModel::Params(cand_params))?;
                    let h_cand = problem.objective_from_lines(&v, &kern_c);
                    if h_cand <= h_w + lin + quad + 1e-12 * h_w.abs().max(1.0) {
                        break (cand, h_cand);
                    }
                    halvings += 1;
                    if halvings > MAX_HALVINGS {
                        return Err(Error::LipschitzBlowup {
                            block: "p",
                            halvings,
                        });
                    }
                    t *= 0.5;
                };
                t_p0 = 4.0 * t;
                p_vec_prev = Some(p_vec);
                p = PsfModel::Params(space.embed(params, &p_next_vec)?);
                h_x = h_p;
            }
        }

        // h at (x, p) is the accepted backtracking value of the last block
        // that ran; no extra forward pass is needed for the trace.
        let f_now = h_x + lambda.iter().zip(x.iter()).map(|(l, v)| l * v).sum::<f64>();
        if !f_now.is_finite() {
            decrease_ok = false;
        }
        trace.push(f_now);
        if cfg.early_stop_tol > 0.0 {
            if (last_f - f_now).abs() <= cfg.early_stop_tol * last_f.abs().max(1.0) {
                stall += 1;
                if stall >= cfg.early_stop_patience {
                    break;
                }
            } else {
                stall = 0;
            }
        }
        last_f = f_now;
    }
    let objective = problem.objective(&x, &p)?;
    Ok(IpalmOutcome {
        x,
        p,
        trace,
        objective,
        sufficient_decrease_ok: decrease_ok,
    })
}

/// First-round penalty scale: `C * max_ij { L_Theta*[psi corr R] }`.
/// Penalty update between rounds: `lambda_ij = max(c*h, MIN) / (x_ij + eps)`.
/// A pure function of `(x, h)`, so a stationary estimate gives a stationary
/// penalty map.
pub fn reweight_lambda(x: &Array2<f64>, h: f64, c: f64, eps: f64) -> Array2<f64> {
    let num = (c * h).max(f64::MIN_POSITIVE);
    x.mapv(|v| num / (v + eps))
}

fn initial_lambda(problem: &Problem, p_init: &PsfModel, c: f64) -> Result<f64> {
    let kernels = problem.kernels(p_init)?;
    let up = upsample_rows(problem.scans.data(), problem.stride, problem.n());
    let filtered = if kernels.iter().all(|k| k.is_delta()) {
        up
    } else {
        let scans = LineScanSet::new(up, problem.scans.geometry.clone())?;
        psf::apply_psf_adjoint(&scans, &kernels)?.into_data()
    };
    let back = problem
        .plan
        .back_project_data(&filtered, &problem.scans.geometry);
    let peak = back.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !peak.is_finite() {
        return Err(Error::invalid("reconstruct", "non-finite data peak"));
    }
    Ok(c * peak.max(0.0))
}

/// Full reconstruction: K reweighting rounds of L iPalm iterations each,
/// warm-started, with the penalty refreshed from the previous estimate.
pub fn reconstruct(
    scans: &LineScanSet,
    motif: &Motif,
    psf_init: &PsfModel,
    cfg: &SolverConfig,
    stride: usize,
) -> Result<SolverResult> {
    cfg.validate()?;
    let problem = Problem::new(scans.clone(), motif.clone(), psf_init, cfg.coupling, stride)?;
    let n = problem.n();
    let lam0 = initial_lambda(&problem, psf_init, cfg.reweight_scale)?;
    let mut lambda = Array2::from_elem((n, n), lam0.max(f64::MIN_POSITIVE));
    let mut x = Array2::zeros((n, n));
    let mut p = psf_init.clone();
    let mut trace = Vec::new();
    let mut rounds = Vec::with_capacity(cfg.rounds);
    let mut decrease_ok = true;

    for round in 1..=cfg.rounds {
        let out = ipalm(&problem, &x, &p, &lambda, cfg.iters, cfg)?;
        x = out.x;
        p = out.p;
        trace.extend(out.trace);
        decrease_ok &= out.sufficient_decrease_ok;
        rounds.push(ReweightState {
            lambda: lambda.clone(),
            round,
            objective: out.objective,
        });
        if round < cfg.rounds {
            lambda = reweight_lambda(&x, out.objective, cfg.reweight_scale, cfg.eps);
        }
    }

    let peak = x.iter().cloned().fold(0.0f64, f64::max);
    let location_map = if peak > 0.0 {
        Array2::from_shape_fn((n, n), |(i, j)| u8::from(x[[i, j]] >= 0.5 * peak))
    } else {
        Array2::zeros((n, n))
    };
    Ok(SolverResult {
        x_hat: SparseMap::new(x)?,
        p_hat: p,
        objective_trace: trace,
        rounds,
        location_map,
        sufficient_decrease_ok: decrease_ok,
    })
}

/// Free-function form of the smooth objective `h(X, p)`.
pub fn smooth_objective(
    x: &SparseMap,
    p: &PsfModel,
    scans: &LineScanSet,
    motif: &Motif,
    stride: usize,
) -> Result<f64> {
    let problem = Problem::new(scans.clone(), motif.clone(), p, Coupling::SharedShape, stride)?;
    problem.objective(x.data(), p)
}

/// Free-function form of the `X` gradient of `h`.
pub fn grad_x(
    x: &SparseMap,
    p: &PsfModel,
    scans: &LineScanSet,
    motif: &Motif,
    stride: usize,
) -> Result<Array2<f64>> {
    let problem = Problem::new(scans.clone(), motif.clone(), p, Coupling::SharedShape, stride)?;
    Ok(problem.grad_x(x.data(), p)?.0)
}

/// Gradient of `h` with respect to the free PSF coordinates (order matches
/// the coupling's flat layout: per-line amplitudes then shared shape, or all
/// six per line for independent coupling).
pub fn grad_p_free(
    x: &SparseMap,
    p: &PsfParams,
    scans: &LineScanSet,
    motif: &Motif,
    coupling: Coupling,
    stride: usize,
) -> Result<Vec<f64>> {
    let model = PsfModel::Params(p.clone());
    let problem = Problem::new(scans.clone(), motif.clone(), &model, coupling, stride)?;
    let v = problem.forward_lines(x.data());
    problem.grad_p(&v, p)
}
