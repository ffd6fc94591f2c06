//! Reproducible experiment campaigns: support-recovery scoring, phase
//! transitions over (lines, motifs), probe-efficiency tables, and the
//! reweighting-versus-plain-Lasso comparison. All outputs are deterministic
//! functions of their configs.

use crate::model::{convolve_motif, Image, Motif, MotifNorm, ScanGeometry, SolverConfig, SparseMap};
use crate::psf::PsfModel;
use crate::sim::{generate_sample, simulate_scan, Magnitudes, Placement, SampleSpec};
use crate::solver::reconstruct;
use crate::{Error, Result};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::path::Path;

/// Result of one seeded recovery experiment.
#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub n_lines: usize,
    pub k: usize,
    pub trial: usize,
    pub seed: u64,
    pub success: bool,
    pub relative_error: f64,
    /// Wall-clock seconds; informational only, never serialized.
    pub runtime: f64,
}

/// True iff the thresholded estimate has a one-to-one matching between its
/// connected components and the true spikes, every centroid within `tol_px`
/// of its spike, with no spurious or missing components.
pub fn support_match(x_hat: &SparseMap, x0: &SparseMap, tol_px: usize) -> bool {
    let spikes: Vec<(f64, f64)> = x0
        .support()
        .into_iter()
        .map(|(i, j)| (i as f64, j as f64))
        .collect();
    let data = x_hat.data();
    let peak = data.iter().cloned().fold(0.0f64, f64::max);
    if peak <= 0.0 {
        return spikes.is_empty();
    }
    let n = x_hat.n();
    let thresh = 0.5 * peak;
    let mut label = Array2::<i32>::from_elem((n, n), -1);
    let mut centroids: Vec<(f64, f64)> = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if data[[i, j]] >= thresh && label[[i, j]] < 0 {
                // Flood fill one 8-connected component, value-weighted centroid.
                let id = centroids.len() as i32;
                let mut stack = vec![(i, j)];
                label[[i, j]] = id;
                let (mut sx, mut sy, mut sw) = (0.0, 0.0, 0.0);
                while let Some((a, b)) = stack.pop() {
                    let w = data[[a, b]];
                    sx += w * a as f64;
                    sy += w * b as f64;
                    sw += w;
                    for da in -1i64..=1 {
                        for db in -1i64..=1 {
                            let (na, nb) = (a as i64 + da, b as i64 + db);
                            if na >= 0 && nb >= 0 && (na as usize) < n && (nb as usize) < n {
                                let (na, nb) = (na as usize, nb as usize);
                                if data[[na, nb]] >= thresh && label[[na, nb]] < 0 {
                                    label[[na, nb]] = id;
                                    stack.push((na, nb));
                                }
                            }
                        }
                    }
                }
                centroids.push((sx / sw, sy / sw));
            }
        }
    }
    if centroids.len() != spikes.len() {
        return false;
    }
    // Bipartite matching (augmenting paths) under the distance tolerance.
    let tol = tol_px as f64 + 1e-9;
    let k = spikes.len();
    let adj: Vec<Vec<usize>> = (0..k)
        .map(|c| {
            (0..k)
                .filter(|&s| {
                    let d = (centroids[c].0 - spikes[s].0).hypot(centroids[c].1 - spikes[s].1);
                    d <= tol
                })
                .collect()
        })
        .collect();
    let mut matched_spike: Vec<Option<usize>> = vec![None; k];
    fn augment(
        c: usize,
        adj: &[Vec<usize>],
        matched_spike: &mut [Option<usize>],
        visited: &mut [bool],
    ) -> bool {
        for &s in &adj[c] {
            if !visited[s] {
                visited[s] = true;
                if matched_spike[s].is_none()
                    || augment(matched_spike[s].unwrap(), adj, matched_spike, visited)
                {
                    matched_spike[s] = Some(c);
                    return true;
                }
            }
        }
        false
    }
    (0..k).all(|c| {
        let mut visited = vec![false; k];
        augment(c, &adj, &mut matched_spike, &mut visited)
    })
}

/// `|| a/||a|| - b/||b|| ||_2`; a zero image normalizes to the zero vector.
pub fn normalized_image_error(y_hat: &Image, y0: &Image) -> f64 {
    let na = y_hat.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = y0.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    let sa = if na > 0.0 { 1.0 / na } else { 0.0 };
    let sb = if nb > 0.0 { 1.0 / nb } else { 0.0 };
    y_hat
        .data()
        .iter()
        .zip(y0.data().iter())
        .map(|(a, b)| (a * sa - b * sb).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Phase-transition sweep layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PtMode {
    /// Grid side n fixed; density grows with k.
    FixedArea,
    /// n scales like sqrt(k) so the motif density stays constant.
    FixedDensity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AngleMode {
    Random,
    Equispaced,
}

/// Campaign configuration for [`phase_transition`].
#[derive(Debug, Clone)]
pub struct PtConfig {
    pub mode: PtMode,
    /// Grid side (fixed-area) or the side used at the smallest k (fixed-density).
    pub n: usize,
    pub n_lines: Vec<usize>,
    pub ks: Vec<usize>,
    pub trials: usize,
    pub r: f64,
    pub min_sep_ratio: f64,
    pub angle_mode: AngleMode,
    pub seed: u64,
    pub tol_px: usize,
    pub solver: SolverConfig,
}

impl PtConfig {
    /// Solver settings sized for a large sweep of small noiseless problems.
    pub fn bench_solver() -> SolverConfig {
        SolverConfig {
            rounds: 3,
            iters: 40,
            early_stop_tol: 1e-7,
            early_stop_patience: 4,
            ..SolverConfig::default()
        }
    }

    /// Grid side used for a cell with `k` motifs.
    pub fn cell_n(&self, k: usize) -> usize {
        match self.mode {
            PtMode::FixedArea => self.n,
            PtMode::FixedDensity => {
                let k0 = *self.ks.first().unwrap_or(&1) as f64;
                let mut n = (self.n as f64 * (k as f64 / k0).sqrt()).round() as usize;
                if n % 2 == 1 {
                    n += 1;
                }
                n.max(16)
            }
        }
    }
}

/// Phase-transition output: success fractions (rows = line counts,
/// columns = motif counts; NaN marks infeasible cells) plus per-trial logs.
#[derive(Debug, Clone)]
pub struct PtResult {
    pub n_lines: Vec<usize>,
    pub ks: Vec<usize>,
    pub success: Array2<f64>,
    pub trials: Vec<TrialOutcome>,
}

/// SplitMix64-style per-cell seed derivation.
pub fn cell_seed(campaign_seed: u64, n_lines: usize, k: usize, trial: usize) -> u64 {
    let mut z = campaign_seed;
    for v in [n_lines as u64, k as u64, trial as u64] {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(v);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

fn run_trial(cfg: &PtConfig, n_lines: usize, k: usize, trial: usize) -> Result<Option<TrialOutcome>> {
    let n = cfg.cell_n(k);
    let seed = cell_seed(cfg.seed, n_lines, k, trial);
    let spec = SampleSpec {
        n,
        k,
        r: cfg.r,
        min_sep_ratio: cfg.min_sep_ratio,
        magnitudes: Magnitudes::Equal,
        placement: Placement::RandomRejection,
        seed,
    };
    let x0 = match generate_sample(&spec) {
        Ok(x) => x,
        Err(Error::InfeasibleDensity { .. }) => return Ok(None),
        Err(e) => return Err(e),
    };
    let angles: Vec<f64> = match cfg.angle_mode {
        AngleMode::Equispaced => (0..n_lines).map(|i| 180.0 * i as f64 / n_lines as f64).collect(),
        AngleMode::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5_A5A5_A5A5_A5A5);
            let mut out: Vec<f64> = Vec::with_capacity(n_lines);
            while out.len() < n_lines {
                let a = rng.gen_range(0.0..180.0);
                if out.iter().all(|&b: &f64| (b - a).abs() > 1e-9) {
                    out.push(a);
                }
            }
            out
        }
    };
    let motif = Motif::disc(cfg.r).with_normalization(MotifNorm::UnitMass);
    let geom = ScanGeometry::new(angles, n)?;
    let start = std::time::Instant::now();
    let scans = simulate_scan(&x0, &motif, &geom, &PsfModel::Delta, 0.0, 1, seed)?;
    let result = reconstruct(&scans, &motif, &PsfModel::Delta, &cfg.solver, 1)?;
    let runtime = start.elapsed().as_secs_f64();
    let success = support_match(&result.x_hat, &x0, cfg.tol_px);
    let y_hat = convolve_motif(&result.x_hat, &motif)?;
    let y0 = convolve_motif(&x0, &motif)?;
    Ok(Some(TrialOutcome {
        n_lines,
        k,
        trial,
        seed,
        success,
        relative_error: normalized_image_error(&y_hat, &y0),
        runtime,
    }))
}

/// Run the full campaign; cells and trials are independent jobs with
/// deterministic result placement.
pub fn phase_transition(cfg: &PtConfig) -> Result<PtResult> {
    cfg.solver.validate()?;
    if cfg.n_lines.is_empty() || cfg.ks.is_empty() || cfg.trials == 0 {
        return Err(Error::invalid("pt config", "empty sweep"));
    }
    let mut jobs = Vec::new();
    for (ri, &nl) in cfg.n_lines.iter().enumerate() {
        for (ci, &k) in cfg.ks.iter().enumerate() {
            for t in 0..cfg.trials {
                jobs.push((ri, ci, nl, k, t));
            }
        }
    }
    let outcomes: Vec<(usize, usize, Result<Option<TrialOutcome>>)> = jobs
        .par_iter()
        .map(|&(ri, ci, nl, k, t)| (ri, ci, run_trial(cfg, nl, k, t)))
        .collect();
    let mut success = Array2::zeros((cfg.n_lines.len(), cfg.ks.len()));
    let mut counts = Array2::<usize>::zeros((cfg.n_lines.len(), cfg.ks.len()));
    let mut infeasible = Array2::<bool>::from_elem((cfg.n_lines.len(), cfg.ks.len()), false);
    let mut trials = Vec::new();
    for (ri, ci, res) in outcomes {
        match res? {
            None => infeasible[[ri, ci]] = true,
            Some(outcome) => {
                success[[ri, ci]] += f64::from(outcome.success as u8);
                counts[[ri, ci]] += 1;
                trials.push(outcome);
            }
        }
    }
    for ((ri, ci), v) in success.indexed_iter_mut() {
        if infeasible[[ri, ci]] || counts[[ri, ci]] == 0 {
            *v = f64::NAN;
        } else {
            *v /= counts[[ri, ci]] as f64;
        }
    }
    trials.sort_by_key(|t| (t.n_lines, t.k, t.trial));
    Ok(PtResult {
        n_lines: cfg.n_lines.clone(),
        ks: cfg.ks.clone(),
        success,
        trials,
    })
}

/// For each k, the smallest line count reaching at least 50% success.
pub fn frontier(result: &PtResult) -> Vec<Option<usize>> {
    result
        .ks
        .iter()
        .enumerate()
        .map(|(ci, _)| {
            result
                .n_lines
                .iter()
                .enumerate()
                .find(|&(ri, _)| result.success[[ri, ci]] >= 0.5)
                .map(|(_, &nl)| nl)
        })
        .collect()
}

/// One row of the probe-efficiency comparison.
#[derive(Debug, Clone)]
pub struct EfficiencyRow {
    pub k: usize,
    /// Line-probe samples at the 50% frontier: `N_50(k) * n`; None when the
    /// frontier was not reached inside the sweep.
    pub line_samples: Option<usize>,
    /// Raster (point-probe) samples: `n^2` at that cell's grid side.
    pub point_samples: usize,
}

/// Samples-needed comparison between the line probe (frontier lines times
/// sweep length) and a raster point probe (n^2).
pub fn efficiency_table(cfg: &PtConfig, result: &PtResult) -> Vec<EfficiencyRow> {
    let front = frontier(result);
    result
        .ks
        .iter()
        .zip(front)
        .map(|(&k, f)| {
            let n = cfg.cell_n(k);
            EfficiencyRow {
                k,
                line_samples: f.map(|nl| nl * n),
                point_samples: n * n,
            }
        })
        .collect()
}

/// Success-fraction matrix as CSV (first row: header with k values).
pub fn pt_csv(result: &PtResult) -> String {
    let mut out = String::from("n_lines\\k");
    for k in &result.ks {
        out.push_str(&format!(",{k}"));
    }
    out.push('\n');
    for (ri, nl) in result.n_lines.iter().enumerate() {
        out.push_str(&format!("{nl}"));
        for ci in 0..result.ks.len() {
            out.push_str(&format!(",{}", result.success[[ri, ci]]));
        }
        out.push('\n');
    }
    out
}

/// Per-trial log as CSV (runtime intentionally excluded: output bytes are a
/// pure function of the config).
pub fn trials_csv(result: &PtResult) -> String {
    let mut out = String::from("n_lines,k,trial,seed,success,relative_error\n");
    for t in &result.trials {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            t.n_lines,
            t.k,
            t.trial,
            t.seed,
            u8::from(t.success),
            t.relative_error
        ));
    }
    out
}

pub fn efficiency_csv(rows: &[EfficiencyRow]) -> String {
    let mut out = String::from("k,line_samples,point_samples\n");
    for row in rows {
        match row.line_samples {
            Some(ls) => out.push_str(&format!("{},{},{}\n", row.k, ls, row.point_samples)),
            None => out.push_str(&format!("{},,{}\n", row.k, row.point_samples)),
        }
    }
    out
}

/// Run a campaign and write `pt_<mode>.csv`, `efficiency_<mode>.csv`, and
/// `trials_<mode>.csv` into `dir`.
pub fn run_campaign(cfg: &PtConfig, dir: impl AsRef<Path>) -> Result<PtResult> {
    let result = phase_transition(cfg)?;
    let tag = match cfg.mode {
        PtMode::FixedArea => "fixed-area",
        PtMode::FixedDensity => "fixed-density",
    };
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(format!("pt_{tag}.csv")), pt_csv(&result))?;
    std::fs::write(
        dir.join(format!("efficiency_{tag}.csv")),
        efficiency_csv(&efficiency_table(cfg, &result)),
    )?;
    std::fs::write(dir.join(format!("trials_{tag}.csv")), trials_csv(&result))?;
    Ok(result)
}

/// Configuration of the reweighting-versus-plain-Lasso error comparison.
#[derive(Debug, Clone)]
pub struct ReweightBenchConfig {
    pub n: usize,
    pub k: usize,
    pub r: f64,
    pub min_sep_ratio: f64,
    pub n_lines: usize,
    pub trials: usize,
    pub seed: u64,
    pub base: SolverConfig,
    /// Penalty scale of the "small lambda" plain run (single round).
    pub c_small: f64,
    /// Penalty scale of the "big lambda" plain run (single round).
    pub c_big: f64,
}

impl Default for ReweightBenchConfig {
    fn default() -> Self {
        ReweightBenchConfig {
            n: 60,
            k: 8,
            r: 3.0,
            min_sep_ratio: 1.2,
            n_lines: 8,
            trials: 30,
            seed: 0,
            base: SolverConfig::default(),
            c_small: 0.02,
            c_big: 0.5,
        }
    }
}

/// Per-instance errors of the three solver settings.
#[derive(Debug, Clone)]
pub struct ReweightBenchRow {
    pub trial: usize,
    pub err_reweighted: f64,
    pub err_small_lambda: f64,
    pub err_big_lambda: f64,
}

/// Run the comparison: reweighted (K rounds) against single-round plain
/// Lasso at a small and a big penalty, on seeded noiseless instances.
pub fn reweight_comparison(cfg: &ReweightBenchConfig) -> Result<Vec<ReweightBenchRow>> {
    let motif = Motif::disc(cfg.r).with_normalization(MotifNorm::UnitMass);
    (0..cfg.trials)
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&trial| {
            let seed = cell_seed(cfg.seed, cfg.n_lines, cfg.k, trial);
            let spec = SampleSpec {
                n: cfg.n,
                k: cfg.k,
                r: cfg.r,
                min_sep_ratio: cfg.min_sep_ratio,
                magnitudes: Magnitudes::Uniform { lo: 0.5, hi: 1.5 },
                placement: Placement::RandomRejection,
                seed,
            };
            let x0 = generate_sample(&spec)?;
            let angles: Vec<f64> = (0..cfg.n_lines)
                .map(|i| 180.0 * i as f64 / cfg.n_lines as f64)
                .collect();
            let geom = ScanGeometry::new(angles, cfg.n)?;
            let scans = simulate_scan(&x0, &motif, &geom, &PsfModel::Delta, 0.0, 1, seed)?;
            let y0 = convolve_motif(&x0, &motif)?;
            let solve = |rounds: usize, c: f64| -> Result<f64> {
                let mut sc = cfg.base.clone();
                sc.rounds = rounds;
                sc.reweight_scale = c;
                let res = reconstruct(&scans, &motif, &PsfModel::Delta, &sc, 1)?;
                let y_hat = convolve_motif(&res.x_hat, &motif)?;
                Ok(normalized_image_error(&y_hat, &y0))
            };
            Ok(ReweightBenchRow {
                trial,
                err_reweighted: solve(cfg.base.rounds, cfg.base.reweight_scale)?,
                err_small_lambda: solve(1, cfg.c_small)?,
                err_big_lambda: solve(1, cfg.c_big)?,
            })
        })
        .collect()
}

pub fn reweight_csv(rows: &[ReweightBenchRow]) -> String {
    let mut out = String::from("trial,err_reweighted,err_small_lambda,err_big_lambda\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.trial, r.err_reweighted, r.err_small_lambda, r.err_big_lambda
        ));
    }
    out
}

/// Parse a campaign config from key=value text; solver keys (`K`, `L`, `C`,
/// ...) are read from the same text.
pub fn parse_pt_config(text: &str) -> Result<PtConfig> {
    let kv = crate::io::parse_kv(text)?;
    let get = |key: &str| kv.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str());
    let mode = match get("mode").unwrap_or("fixed-area") {
        "fixed-area" => PtMode::FixedArea,
        "fixed-density" => PtMode::FixedDensity,
        other => {
            return Err(Error::Parse {
                line: 0,
                msg: format!("unknown mode {other:?}"),
            })
        }
    };
    let angle_mode = match get("angles").unwrap_or("random") {
        "random" => AngleMode::Random,
        "equispaced" => AngleMode::Equispaced,
        other => {
            return Err(Error::Parse {
                line: 0,
                msg: format!("unknown angle mode {other:?}"),
            })
        }
    };
    let parse_usize = |key: &str, dft: usize| -> Result<usize> {
        match get(key) {
            None => Ok(dft),
            Some(v) => v.parse().map_err(|_| Error::Parse {
                line: 0,
                msg: format!("bad value for {key}: {v:?}"),
            }),
        }
    };
    let parse_f64 = |key: &str, dft: f64| -> Result<f64> {
        match get(key) {
            None => Ok(dft),
            Some(v) => v.parse().map_err(|_| Error::Parse {
                line: 0,
                msg: format!("bad value for {key}: {v:?}"),
            }),
        }
    };
    let mut solver = PtConfig::bench_solver();
    // Explicit solver keys in the same file override the bench defaults.
    let parsed_solver = crate::io::parse_solver_config(text)?;
    let dft = SolverConfig::default();
    if parsed_solver.rounds != dft.rounds || get("K").is_some() {
        solver.rounds = parsed_solver.rounds;
    }
    if parsed_solver.iters != dft.iters || get("L").is_some() {
        solver.iters = parsed_solver.iters;
    }
    solver.reweight_scale = parsed_solver.reweight_scale;
    solver.seed = parsed_solver.seed;
    Ok(PtConfig {
        mode,
        n: parse_usize("n", 60)?,
        n_lines: parse_range(get("n_lines").unwrap_or("2..16"))?,
        ks: parse_range(get("k").unwrap_or("2..20"))?,
        trials: parse_usize("trials", 20)?,
        r: parse_f64("r", 3.0)?,
        min_sep_ratio: parse_f64("ratio", 1.0)?,
        angle_mode,
        seed: parse_usize("seed", 0)? as u64,
        tol_px: parse_usize("tol", 1)?,
        solver,
    })
}

/// `lo..hi` (inclusive) or a comma list of integers.
pub fn parse_range(text: &str) -> Result<Vec<usize>> {
    let bad = |msg: String| Error::Parse { line: 0, msg };
    if let Some((lo, hi)) = text.split_once("..") {
        let lo: usize = lo.trim().parse().map_err(|_| bad(format!("bad range {text:?}")))?;
        let hi: usize = hi.trim().parse().map_err(|_| bad(format!("bad range {text:?}")))?;
        if hi < lo {
            return Err(bad(format!("empty range {text:?}")));
        }
        Ok((lo..=hi).collect())
    } else {
        text.split(',')
            .map(|v| v.trim().parse().map_err(|_| bad(format!("bad list {text:?}"))))
            .collect()
    }
}
