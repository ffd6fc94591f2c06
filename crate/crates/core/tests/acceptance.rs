//! Acceptance suite: one test per release criterion, each printing a single
//! `criterion N: PASS/FAIL` line (visible with `--nocapture`).

use linescan::analysis::{
    coherence_bracket, empirical_gram, hex_patch_least_eigenvalue, lowpass_spectrum,
};
use linescan::harness::{
    frontier, phase_transition, reweight_comparison, reweight_csv, run_campaign, support_match,
    AngleMode, PtConfig, PtMode, ReweightBenchConfig,
};
use linescan::model::{
    Coupling, Motif, MotifNorm, PsfParams, ScanGeometry, SolverConfig, SparseMap,
};
use linescan::ops::{rotate, ShearPlan};
use linescan::psf::PsfModel;
use linescan::sim::{
    generate_sample, simulate_scan, smooth_random_image, Magnitudes, Placement, SampleSpec,
};
use linescan::solver::{grad_p_free, grad_x, reconstruct, smooth_objective};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn report(n: usize, ok: bool, detail: &str) {
    println!("criterion {n}: {} - {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {n} failed: {detail}");
}

fn l2(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[test]
fn criterion_01_projection_adjointness() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    let mut count = 0;
    'outer: loop {
        for &n in &[32usize, 64] {
            for &m in &[1usize, 4, 9] {
                let angles: Vec<f64> = (0..m).map(|_| rng.gen_range(-90.0..270.0)).collect();
                let geom = ScanGeometry::new(angles, n).unwrap();
                let plan = ShearPlan::new(n);
                let y = Array2::from_shape_fn((n, n), |_| rng.gen::<f64>() - 0.5);
                let r = Array2::from_shape_fn((n, m), |_| rng.gen::<f64>() - 0.5);
                let ly = plan.project_data(&y, &geom);
                let lt_r = plan.back_project_data(&r, &geom);
                let lhs: f64 = r.iter().zip(ly.iter()).map(|(a, b)| a * b).sum();
                let rhs: f64 = lt_r.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
                let rel = (lhs - rhs).abs() / (l2(&r) * l2(&ly)).max(f64::MIN_POSITIVE);
                worst = worst.max(rel);
                count += 1;
                if count >= 100 {
                    break 'outer;
                }
            }
        }
    }
    let dt = t0.elapsed().as_secs_f64();
    report(
        1,
        worst <= 1e-10 && dt < 10.0,
        &format!("{count} dot tests, worst rel {worst:.2e}, {dt:.1}s"),
    );
}

#[test]
fn criterion_02_rotation_round_trip() {
    let mut worst = 0.0f64;
    for seed in 0..5u64 {
        let img = smooth_random_image(64, seed);
        for &theta in &[5.0f64, 17.0, 30.0, 44.0] {
            let back = rotate(&rotate(&img, theta).unwrap(), -theta).unwrap();
            let err = (img.data() - back.data())
                .iter()
                .fold(0.0f64, |m, v| m.max(v.abs()));
            worst = worst.max(err);
        }
    }
    report(2, worst <= 1e-9, &format!("worst round-trip error {worst:.2e}"));
}

#[test]
fn criterion_03_mass_conservation() {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst = 0.0f64;
    for case in 0..50u64 {
        // Grid sizes where the blob width (n/25 px) is properly resolved;
        // narrower blobs leak ringing mass outside the sweep window.
        let n = [48usize, 64, 96][case as usize % 3];
        let img = smooth_random_image(n, case);
        let m = rng.gen_range(1..=8);
        let angles: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..180.0)).collect();
        let geom = ScanGeometry::new(angles, n).unwrap();
        let scans = linescan::ops::line_project(&img, &geom).unwrap();
        let mass = img.mass();
        let sqrt_m = (m as f64).sqrt();
        for i in 0..m {
            let col: f64 = scans.data().column(i).sum();
            worst = worst.max((sqrt_m * col - mass).abs() / mass.abs().max(1.0));
        }
    }
    report(3, worst <= 1e-9, &format!("50 cases, worst per-line rel {worst:.2e}"));
}

#[test]
fn criterion_04_pair_coherence_bracket() {
    let t0 = Instant::now();
    let mut ok = true;
    let mut detail = String::new();
    for &(r, d) in &[(2.0f64, 4.0f64), (2.0, 8.0), (4.0, 8.0), (4.0, 32.0)] {
        let n = ((d + 8.0 * r + 8.0).ceil() as usize).max(32);
        let c = (n / 2) as f64;
        let motif = Motif::gaussian(r);
        let angles: Vec<f64> = (0..360).map(|i| i as f64 * 0.5).collect();
        let geom = ScanGeometry::new(angles, n).unwrap();
        let g = empirical_gram(&[(c, c - d / 2.0), (c, c + d / 2.0)], &motif, &geom).unwrap();
        let mu = g.values()[[0, 1]] / (g.values()[[0, 0]] * g.values()[[1, 1]]).sqrt();
        let (lo, hi) = coherence_bracket(r, d);
        let inside = mu >= lo - 0.03 && mu <= hi + 0.03;
        ok &= inside;
        detail.push_str(&format!("(r={r},d={d}): {mu:.4} in [{lo:.4},{hi:.4}]±0.03; "));
    }
    let dt = t0.elapsed().as_secs_f64();
    report(4, ok && dt < 60.0, &format!("{detail}{dt:.1}s"));
}

#[test]
fn criterion_05_hexagonal_least_eigenvalues() {
    let t0 = Instant::now();
    let cases = [(2usize, 0.5, 0.0159), (2, 2.0, 0.4177), (29, 0.5, 0.00245)];
    let mut ok = true;
    let mut detail = String::new();
    for &(v, ratio, expect) in &cases {
        let lam = hex_patch_least_eigenvalue(v, ratio).unwrap();
        ok &= (lam - expect).abs() <= 1e-3;
        detail.push_str(&format!("(v={v},{ratio}): {lam:.5} vs {expect}; "));
    }
    let dt = t0.elapsed().as_secs_f64();
    report(5, ok && dt < 30.0, &format!("{detail}{dt:.1}s"));
}

#[test]
fn criterion_06_lowpass_spectrum_midband() {
    let rep = lowpass_spectrum(2.0, 360, 128).unwrap();
    let mut worst = 0.0f64;
    let mut bins = 0;
    for i in 0..rep.freq.len() {
        let f = rep.freq[i];
        if (0.02..=0.19).contains(&f) {
            worst = worst.max((rep.empirical[i] - rep.analytic[i]).abs() / rep.analytic[i].abs());
            bins += 1;
        }
    }
    report(
        6,
        bins > 10 && worst <= 0.10,
        &format!("{bins} mid-band bins, worst rel {worst:.3}"),
    );
}

#[test]
fn criterion_07_three_line_recovery() {
    let t0 = Instant::now();
    let mut ok_trials = 0u32;
    let trials = 50u64;
    for trial in 0..trials {
        let seed = trial + 1000;
        let spec = SampleSpec {
            n: 128,
            k: 3,
            r: 1.0,
            min_sep_ratio: 20.0, // separation >= 40 px = 20 * diameter(2 px)
            magnitudes: Magnitudes::Equal,
            placement: Placement::RandomRejection,
            seed,
        };
        let x0 = generate_sample(&spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut angles: Vec<f64> = Vec::new();
        while angles.len() < 3 {
            let a = rng.gen_range(0.0..180.0);
            if angles.iter().all(|&b: &f64| (b - a).abs() > 1e-9) {
                angles.push(a);
            }
        }
        let motif = Motif::disc(1.0).with_normalization(MotifNorm::UnitMass);
        let geom = ScanGeometry::new(angles, 128).unwrap();
        let scans = simulate_scan(&x0, &motif, &geom, &PsfModel::Delta, 0.0, 1, seed).unwrap();
        let cfg = SolverConfig {
            rounds: 3,
            iters: 30,
            early_stop_tol: 1e-7,
            early_stop_patience: 5,
            ..SolverConfig::default()
        };
        let res = reconstruct(&scans, &motif, &PsfModel::Delta, &cfg, 1).unwrap();
        ok_trials += u32::from(support_match(&res.x_hat, &x0, 1));
    }
    let dt = t0.elapsed().as_secs_f64();
    let rate = f64::from(ok_trials) / trials as f64;
    report(
        7,
        rate >= 0.9 && dt < 300.0,
        &format!("recovery {ok_trials}/{trials}, {dt:.0}s"),
    );
}

#[test]
fn criterion_08_phase_transition_frontier() {
    let t0 = Instant::now();
    let cfg = PtConfig {
        mode: PtMode::FixedArea,
        n: 60,
        n_lines: (2..=16).collect(),
        ks: (2..=20).collect(),
        trials: 20,
        r: 3.0,
        min_sep_ratio: 1.0,
        angle_mode: AngleMode::Random,
        seed: 0,
        tol_px: 1,
        solver: PtConfig::bench_solver(),
    };
    let result = phase_transition(&cfg).unwrap();
    let dt = t0.elapsed().as_secs_f64();

    let has_good_region = result.success.iter().any(|&v| v >= 0.9);
    let front = frontier(&result);
    let defined: Vec<usize> = front.iter().filter_map(|&v| v).collect();
    let monotone = defined.windows(2).all(|w| w[0] <= w[1]);
    // Line-probe samples at k=16 versus the 3600-point raster.
    let idx16 = cfg.ks.iter().position(|&k| k == 16).unwrap();
    let samples16 = front[idx16].map(|nl| nl * cfg.n);
    let efficient = matches!(samples16, Some(s) if s <= 1200);
    report(
        8,
        has_good_region && monotone && efficient && dt < 7200.0,
        &format!(
            "good region {has_good_region}, frontier {front:?} monotone {monotone}, \
             k=16 samples {samples16:?} <= 1200, {dt:.0}s"
        ),
    );
}

#[test]
fn criterion_09_reweighting_beats_plain_lasso() {
    let cfg = ReweightBenchConfig::default();
    let rows = reweight_comparison(&cfg).unwrap();
    assert_eq!(rows.len(), 30);
    let mean = |f: fn(&linescan::harness::ReweightBenchRow) -> f64| {
        rows.iter().map(f).sum::<f64>() / rows.len() as f64
    };
    let rew = mean(|r| r.err_reweighted);
    let small = mean(|r| r.err_small_lambda);
    let big = mean(|r| r.err_big_lambda);
    report(
        9,
        rew < small && rew < big,
        &format!("mean errors: reweighted {rew:.3} < small-lambda {small:.3}, big-lambda {big:.3}"),
    );
}

#[test]
fn criterion_10_amplitude_calibration_necessity() {
    let t0 = Instant::now();
    let n = 48usize;
    let m = 6usize;
    let shape = [1.0, 1.0, 2.0, 1.0, 2.0, 1.0]; // [a, c_l, alpha_l, c_r, alpha_r, sigma]
    let mut separated = 0u32;
    for seed in 0..20u64 {
        let spec = SampleSpec {
            n,
            k: 4,
            r: 3.0,
            min_sep_ratio: 1.0,
            magnitudes: Magnitudes::Uniform { lo: 0.4, hi: 1.2 },
            placement: Placement::RandomRejection,
            seed: seed + 500,
        };
        let x0 = generate_sample(&spec).unwrap();
        let angles: Vec<f64> = (0..m).map(|i| 180.0 * i as f64 / m as f64).collect();
        let geom = ScanGeometry::new(angles, n).unwrap();
        let motif = Motif::disc(3.0).with_normalization(MotifNorm::UnitMass);
        // True per-line amplitudes alternate 0.5 / 2.0 (a 4x span).
        let lines: Vec<[f64; 6]> = (0..m)
            .map(|i| {
                let mut p = shape;
                p[0] = if i % 2 == 0 { 0.5 } else { 2.0 };
                p
            })
            .collect();
        let mut lo = shape;
        let mut hi = shape;
        lo[0] = 0.1;
        hi[0] = 5.0;
        let truth = PsfParams::new(lines, lo, hi).unwrap();
        let scans =
            simulate_scan(&x0, &motif, &geom, &PsfModel::Params(truth.clone()), 0.0, 1, seed)
                .unwrap();
        let cfg = SolverConfig {
            rounds: 6,
            iters: 50,
            coupling: Coupling::SharedShape,
            ..SolverConfig::default()
        };
        // Calibrated: amplitudes start at 1 and are free inside [0.1, 5].
        let flat: Vec<[f64; 6]> = vec![shape; m];
        let init = truth.with_lines_clamped(flat.clone()).unwrap();
        let cal = reconstruct(&scans, &motif, &PsfModel::Params(init), &cfg, 1).unwrap();
        let cal_ok = support_match(&cal.x_hat, &x0, 1);
        // Frozen: amplitude box collapsed at the (wrong) value 1.
        let frozen = PsfParams::new(flat, shape, shape).unwrap();
        let fr = reconstruct(&scans, &motif, &PsfModel::Params(frozen), &cfg, 1).unwrap();
        let fr_ok = support_match(&fr.x_hat, &x0, 1);
        separated += u32::from(cal_ok && !fr_ok);
    }
    let dt = t0.elapsed().as_secs_f64();
    report(
        10,
        separated >= 16,
        &format!("calibrated-passes-and-frozen-fails on {separated}/20 seeds, {dt:.0}s"),
    );
}

#[test]
fn criterion_11_gradients_match_finite_differences() {
    let mut worst = 0.0f64;
    for problem in 0..5u64 {
        let n = 32usize;
        let spec = SampleSpec {
            n,
            k: 3,
            r: 2.0,
            min_sep_ratio: 1.5,
            magnitudes: Magnitudes::Uniform { lo: 0.8, hi: 1.6 },
            placement: Placement::RandomRejection,
            seed: 40 + problem,
        };
        let x0 = generate_sample(&spec).unwrap();
        let motif = Motif::disc(2.0).with_normalization(MotifNorm::UnitMass);
        let mut rng = ChaCha8Rng::seed_from_u64(1100 + problem);
        let angles: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..180.0)).collect();
        let geom = ScanGeometry::new(angles, n).unwrap();
        let lower = [0.2, 0.3, 0.3, 0.3, 0.3, 0.05];
        let upper = [5.0, 3.0, 3.0, 3.0, 3.0, 2.0];
        let truth =
            PsfParams::new(vec![[1.5, 0.8, 1.2, 1.4, 0.9, 0.5]; 3], lower, upper).unwrap();
        let scans =
            simulate_scan(&x0, &motif, &geom, &PsfModel::Params(truth.clone()), 0.0, 1, problem)
                .unwrap();
        // Probe away from the truth so both gradients are nonzero.
        let probe = truth
            .with_lines_clamped(vec![[1.2, 0.9, 1.0, 1.2, 1.1, 0.7]; 3])
            .unwrap();
        let x_probe = SparseMap::new(x0.data().mapv(|v| 0.7 * v + 0.01)).unwrap();
        let p_model = PsfModel::Params(probe.clone());

        // 10 random X coordinates against central differences.
        let gx = grad_x(&x_probe, &p_model, &scans, &motif, 1).unwrap();
        for _ in 0..10 {
            let (i, j) = (rng.gen_range(0..n), rng.gen_range(0..n));
            let h = 1e-6 * x_probe.data()[[i, j]].abs().max(1.0);
            let mut up = x_probe.data().clone();
            up[[i, j]] += h;
            let mut dn = x_probe.data().clone();
            dn[[i, j]] -= h;
            let dn = dn.mapv(|v| v.max(0.0));
            let fu =
                smooth_objective(&SparseMap::new(up).unwrap(), &p_model, &scans, &motif, 1).unwrap();
            let fd =
                smooth_objective(&SparseMap::new(dn).unwrap(), &p_model, &scans, &motif, 1).unwrap();
            let oracle = (fu - fd) / (2.0 * h);
            let scale = oracle.abs().max(gx[[i, j]].abs()).max(1e-8);
            worst = worst.max((gx[[i, j]] - oracle).abs() / scale);
        }

        // 10 random PSF coordinates (independent coupling: flat index = 6*line + coord).
        let gp = grad_p_free(&x_probe, &probe, &scans, &motif, Coupling::Independent, 1).unwrap();
        assert_eq!(gp.len(), 18);
        for _ in 0..10 {
            let q = rng.gen_range(0..gp.len());
            let (line, coord) = (q / 6, q % 6);
            let base = probe.line(line)[coord];
            let h = 1e-6 * base.abs().max(1.0);
            let mut lines_up: Vec<[f64; 6]> = probe.lines().to_vec();
            lines_up[line][coord] = base + h;
            let mut lines_dn: Vec<[f64; 6]> = probe.lines().to_vec();
            lines_dn[line][coord] = base - h;
            let pu = PsfModel::Params(probe.with_lines_clamped(lines_up).unwrap());
            let pd = PsfModel::Params(probe.with_lines_clamped(lines_dn).unwrap());
            let fu = smooth_objective(&x_probe, &pu, &scans, &motif, 1).unwrap();
            let fd = smooth_objective(&x_probe, &pd, &scans, &motif, 1).unwrap();
            let oracle = (fu - fd) / (2.0 * h);
            let scale = oracle.abs().max(gp[q].abs()).max(1e-8);
            worst = worst.max((gp[q] - oracle).abs() / scale);
        }
    }
    report(11, worst <= 1e-5, &format!("worst relative deviation {worst:.2e}"));
}

#[test]
fn criterion_12_campaign_determinism() {
    let cfg = PtConfig {
        mode: PtMode::FixedDensity,
        n: 40,
        n_lines: vec![2, 6],
        ks: vec![2, 4],
        trials: 3,
        r: 2.0,
        min_sep_ratio: 1.2,
        angle_mode: AngleMode::Random,
        seed: 7,
        tol_px: 1,
        solver: PtConfig::bench_solver(),
    };
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    run_campaign(&cfg, dir_a.path()).unwrap();
    run_campaign(&cfg, dir_b.path()).unwrap();
    let mut identical = true;
    for f in [
        "pt_fixed-density.csv",
        "efficiency_fixed-density.csv",
        "trials_fixed-density.csv",
    ] {
        let a = std::fs::read(dir_a.path().join(f)).unwrap();
        let b = std::fs::read(dir_b.path().join(f)).unwrap();
        identical &= a == b;
    }
    let rcfg = ReweightBenchConfig {
        trials: 4,
        ..ReweightBenchConfig::default()
    };
    let r1 = reweight_csv(&reweight_comparison(&rcfg).unwrap());
    let r2 = reweight_csv(&reweight_comparison(&rcfg).unwrap());
    identical &= r1 == r2;
    report(12, identical, "repeat campaign runs are byte-identical");
}
