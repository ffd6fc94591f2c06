//! Command-line front end: every verb is a thin wrapper over the library.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/validation error.

use clap::{Args, Parser, Subcommand};
use linescan::analysis::{
    check_certificate, coherence_bracket, empirical_gram, hex_patch_least_eigenvalue,
    lemma_certificate, lowpass_spectrum_with_eps,
};
use linescan::harness::{
    efficiency_csv, efficiency_table, parse_pt_config, reweight_comparison, reweight_csv,
    run_campaign, ReweightBenchConfig,
};
use linescan::io::{
    parse_sample_spec, parse_solver_config, read_psf_csv, read_scanset_csv, read_sparse_map_csv,
    write_image_csv, write_psf_csv, write_scanset_csv, write_sparse_map_csv,
};
use linescan::model::{
    convolve_motif, Coupling, Image, Motif, MotifNorm, PsfParams, ScanGeometry, SolverConfig,
};
use linescan::psf::PsfModel;
use linescan::sim::{generate_sample, simulate_scan};
use linescan::solver::reconstruct;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "linescan", version, about = "Line-probe scan simulation, reconstruction, and recoverability analysis")]
struct Cli {
    /// Worker thread cap (default: LSCS_THREADS env var, else all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a random sparse sample and write it as CSV.
    Generate(GenerateArgs),
    /// Simulate line scans of a sample.
    Scan(ScanArgs),
    /// Reconstruct a sample from line scans (reweighted calibrating solver).
    Reconstruct(ReconstructArgs),
    /// Coherence bracket and Gram least-eigenvalue diagnostics.
    AnalyzeCoherence(CoherenceArgs),
    /// Empirical vs analytic low-pass spectrum of the averaged operator.
    AnalyzeSpectrum(SpectrumArgs),
    /// Build and verify the separated-support dual certificate.
    Certify(CertifyArgs),
    /// Phase-transition campaign (success fraction over lines x motifs).
    BenchPt(BenchPtArgs),
    /// Reweighted solver vs plain Lasso error comparison.
    BenchReweight(BenchReweightArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Key=value config file (overrides the flags below).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    n: usize,
    #[arg(long, default_value_t = 8)]
    k: usize,
    #[arg(long, default_value_t = 3.0)]
    r: f64,
    /// Minimum separation as a multiple of the motif diameter.
    #[arg(long, default_value_t = 1.0)]
    ratio: f64,
    /// Placement: random | hex
    #[arg(long, default_value = "random")]
    placement: String,
    /// Lattice spacing for hex placement (default: separation distance).
    #[arg(long)]
    spacing: Option<f64>,
    /// Magnitudes: equal | uniform:LO,HI
    #[arg(long, default_value = "equal")]
    mag: String,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct ScanArgs {
    #[arg(long)]
    sample: PathBuf,
    /// Motif spec kind:radius, e.g. disc:3 or gauss:2.
    #[arg(long, default_value = "disc:3")]
    motif: String,
    /// Comma list of angles in degrees (alternative to --m).
    #[arg(long)]
    angles: Option<String>,
    /// Number of angles drawn by --angle-mode (alternative to --angles).
    #[arg(long)]
    m: Option<usize>,
    /// Angle selection when --m is used: random | equispaced
    #[arg(long, default_value = "random")]
    angle_mode: String,
    /// PSF parameter file; omitted = ideal (delta) probe response.
    #[arg(long)]
    psf: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Keep every stride-th sample along each sweep.
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Seed for random angles and measurement noise.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct ReconstructArgs {
    #[arg(long)]
    scans: PathBuf,
    #[arg(long, default_value = "disc:3")]
    motif: String,
    /// Initial PSF parameter file (with box); omitted = fixed delta PSF.
    #[arg(long)]
    psf_init: Option<PathBuf>,
    /// Optional box override: CSV with two rows (lower, upper), 6 columns.
    #[arg(long)]
    psf_box: Option<PathBuf>,
    /// Key=value solver config file (K, L, C, eps, alpha, seed, coupling).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Reweighting rounds.
    #[arg(long = "K")]
    rounds: Option<usize>,
    /// iPalm iterations per round.
    #[arg(long = "L")]
    iters: Option<usize>,
    /// Reweight scale.
    #[arg(long = "C")]
    scale: Option<f64>,
    /// Parameter coupling: shared | independent
    #[arg(long)]
    coupling: Option<String>,
    /// Stride the scans were recorded with.
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Output directory (Xhat.csv, Yhat.csv, locmap.csv, phat.csv, trace.csv).
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct CoherenceArgs {
    /// Motif (disc) radius in pixels.
    #[arg(long, default_value_t = 2.0)]
    r: f64,
    /// Center separation for the two-motif coherence report.
    #[arg(long)]
    d: Option<f64>,
    /// Number of equispaced angles for the empirical value.
    #[arg(long, default_value_t = 360)]
    angles: usize,
    /// Hexagonal patch size v: report least eigenvalue on (v+1)^2 centers.
    #[arg(long)]
    hex: Option<usize>,
    /// Separation ratio d/(2r) for --hex.
    #[arg(long, default_value_t = 1.0)]
    ratio: f64,
}

#[derive(Args)]
struct SpectrumArgs {
    #[arg(long, default_value_t = 2.0)]
    r: f64,
    #[arg(long, default_value_t = 360)]
    angles: usize,
    #[arg(long, default_value_t = 128)]
    n: usize,
    /// Cutoff threshold on the empirical spectrum.
    #[arg(long, default_value_t = 0.01)]
    eps: f64,
    /// Output CSV (freq, empirical, analytic).
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct CertifyArgs {
    #[arg(long)]
    sample: PathBuf,
    #[arg(long, default_value = "disc:3")]
    motif: String,
    /// Comma list of angles in degrees.
    #[arg(long, default_value = "0,60,120")]
    angles: String,
}

#[derive(Args)]
struct BenchPtArgs {
    /// Key=value campaign config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct BenchReweightArgs {
    #[arg(long, default_value_t = 30)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short, long)]
    output: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successful exits.
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let threads = cli.threads.or_else(|| {
        std::env::var("LSCS_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(t) = threads {
        if t == 0 {
            eprintln!("error: --threads must be >= 1");
            return ExitCode::from(1);
        }
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<(), Box<dyn std::error::Error>> {
    match command {
        Command::Generate(a) => cmd_generate(a),
        Command::Scan(a) => cmd_scan(a),
        Command::Reconstruct(a) => cmd_reconstruct(a),
        Command::AnalyzeCoherence(a) => cmd_coherence(a),
        Command::AnalyzeSpectrum(a) => cmd_spectrum(a),
        Command::Certify(a) => cmd_certify(a),
        Command::BenchPt(a) => cmd_bench_pt(a),
        Command::BenchReweight(a) => cmd_bench_reweight(a),
    }
}

fn parse_motif(spec: &str) -> Result<Motif, Box<dyn std::error::Error>> {
    let (kind, radius) = spec
        .split_once(':')
        .ok_or_else(|| format!("motif spec must be kind:radius, got {spec:?}"))?;
    let radius: f64 = radius
        .parse()
        .map_err(|_| format!("bad motif radius {radius:?}"))?;
    let motif = match kind {
        "disc" => Motif::disc(radius),
        "gauss" => Motif::gaussian(radius),
        other => return Err(format!("unknown motif kind {other:?} (disc | gauss)").into()),
    };
    Ok(motif.with_normalization(MotifNorm::UnitMass))
}

fn parse_angles(text: &str) -> Result<Vec<f64>, Box<dyn std::error::Error>> {
    text.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| format!("bad angle {v:?}").into())
        })
        .collect()
}

fn cmd_generate(a: GenerateArgs) -> Result<(), Box<dyn std::error::Error>> {
    let spec = match a.config {
        Some(path) => parse_sample_spec(&std::fs::read_to_string(path)?)?,
        None => {
            use linescan::sim::{Magnitudes, Placement, SampleSpec};
            let magnitudes = if a.mag == "equal" {
                Magnitudes::Equal
            } else if let Some(rest) = a.mag.strip_prefix("uniform:") {
                let (lo, hi) = rest
                    .split_once(',')
                    .ok_or_else(|| format!("bad magnitude spec {:?}", a.mag))?;
                Magnitudes::Uniform {
                    lo: lo.parse()?,
                    hi: hi.parse()?,
                }
            } else {
                return Err(format!("unknown magnitude spec {:?}", a.mag).into());
            };
            let placement = match a.placement.as_str() {
                "random" => Placement::RandomRejection,
                "hex" => Placement::Hexagonal { spacing: a.spacing },
                other => return Err(format!("unknown placement {other:?} (random | hex)").into()),
            };
            SampleSpec {
                n: a.n,
                k: a.k,
                r: a.r,
                min_sep_ratio: a.ratio,
                magnitudes,
                placement,
                seed: a.seed,
            }
        }
    };
    let x = generate_sample(&spec)?;
    write_sparse_map_csv(&a.output, &x)?;
    println!("wrote {} ({} motifs on {}x{})", a.output.display(), x.support().len(), x.n(), x.n());
    Ok(())
}

fn resolve_angles(
    angles: Option<String>,
    m: Option<usize>,
    mode: &str,
    seed: u64,
) -> Result<Vec<f64>, Box<dyn std::error::Error>> {
    match (angles, m) {
        (Some(list), None) => parse_angles(&list),
        (None, Some(m)) => {
            if m == 0 {
                return Err("--m must be >= 1".into());
            }
            match mode {
                "equispaced" => Ok((0..m).map(|i| 180.0 * i as f64 / m as f64).collect()),
                "random" => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    let mut out: Vec<f64> = Vec::with_capacity(m);
                    while out.len() < m {
                        let a = rng.gen_range(0.0..180.0);
                        if out.iter().all(|&b: &f64| (b - a).abs() > 1e-9) {
                            out.push(a);
                        }
                    }
                    Ok(out)
                }
                other => Err(format!("unknown angle mode {other:?} (random | equispaced)").into()),
            }
        }
        _ => Err("specify exactly one of --angles or --m".into()),
    }
}

fn cmd_scan(a: ScanArgs) -> Result<(), Box<dyn std::error::Error>> {
    let x = read_sparse_map_csv(&a.sample)?;
    let motif = parse_motif(&a.motif)?;
    let angles = resolve_angles(a.angles, a.m, &a.angle_mode, a.seed)?;
    let geom = ScanGeometry::new(angles, x.n())?;
    let psf = match a.psf {
        Some(path) => PsfModel::Params(read_psf_csv(path)?),
        None => PsfModel::Delta,
    };
    let scans = simulate_scan(&x, &motif, &geom, &psf, a.noise, a.stride, a.seed)?;
    write_scanset_csv(&a.output, &scans)?;
    println!(
        "wrote {} ({} angles x {} samples)",
        a.output.display(),
        scans.geometry.m(),
        scans.samples()
    );
    Ok(())
}

fn read_box_csv(path: &PathBuf) -> Result<([f64; 6], [f64; 6]), Box<dyn std::error::Error>> {
    let text = std::fs::read_to_string(path)?;
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|_| format!("bad box value {v:?}")))
                .collect::<Result<Vec<f64>, _>>()
        })
        .collect::<Result<_, _>>()?;
    if rows.len() != 2 || rows.iter().any(|r| r.len() != 6) {
        return Err("box file must have two rows (lower, upper) of 6 values".into());
    }
    let mut lower = [0.0; 6];
    let mut upper = [0.0; 6];
    lower.copy_from_slice(&rows[0]);
    upper.copy_from_slice(&rows[1]);
    Ok((lower, upper))
}

fn cmd_reconstruct(a: ReconstructArgs) -> Result<(), Box<dyn std::error::Error>> {
    let scans = read_scanset_csv(&a.scans)?;
    let motif = parse_motif(&a.motif)?;
    let mut cfg = match &a.config {
        Some(path) => parse_solver_config(&std::fs::read_to_string(path)?)?,
        None => SolverConfig::default(),
    };
    if let Some(k) = a.rounds {
        cfg.rounds = k;
    }
    if let Some(l) = a.iters {
        cfg.iters = l;
    }
    if let Some(c) = a.scale {
        cfg.reweight_scale = c;
    }
    if let Some(c) = &a.coupling {
        cfg.coupling = match c.as_str() {
            "shared" => Coupling::SharedShape,
            "independent" => Coupling::Independent,
            other => return Err(format!("unknown coupling {other:?} (shared | independent)").into()),
        };
    }
    let psf_init = match &a.psf_init {
        None => PsfModel::Delta,
        Some(path) => {
            let params = read_psf_csv(path)?;
            let params = match &a.psf_box {
                None => params,
                Some(box_path) => {
                    let (lower, upper) = read_box_csv(box_path)?;
                    PsfParams::new(params.lines().to_vec(), lower, upper)?
                }
            };
            PsfModel::Params(params)
        }
    };
    let result = reconstruct(&scans, &motif, &psf_init, &cfg, a.stride)?;
    std::fs::create_dir_all(&a.output)?;
    write_sparse_map_csv(a.output.join("Xhat.csv"), &result.x_hat)?;
    write_image_csv(a.output.join("Yhat.csv"), &convolve_motif(&result.x_hat, &motif)?)?;
    let n = result.x_hat.n();
    let locmap = Image::new(Array2::from_shape_fn((n, n), |(i, j)| {
        f64::from(result.location_map[[i, j]])
    }))?;
    write_image_csv(a.output.join("locmap.csv"), &locmap)?;
    if let PsfModel::Params(p) = &result.p_hat {
        write_psf_csv(a.output.join("phat.csv"), p)?;
    }
    let mut trace = String::from("iter,objective\n");
    for (i, v) in result.objective_trace.iter().enumerate() {
        trace.push_str(&format!("{i},{v}\n"));
    }
    std::fs::write(a.output.join("trace.csv"), trace)?;
    println!(
        "wrote {} (objective {}, sufficient decrease {})",
        a.output.display(),
        result.objective_trace.last().copied().unwrap_or(f64::NAN),
        result.sufficient_decrease_ok
    );
    Ok(())
}

fn cmd_coherence(a: CoherenceArgs) -> Result<(), Box<dyn std::error::Error>> {
    if let Some(v) = a.hex {
        let lam = hex_patch_least_eigenvalue(v, a.ratio)?;
        println!("hex patch v={} ratio={}: lambda_min={}", v, a.ratio, lam);
        return Ok(());
    }
    let d = a.d.ok_or("specify --d (pair coherence) or --hex (patch eigenvalue)")?;
    let (lo, hi) = coherence_bracket(a.r, d);
    // Empirical pair coherence: two motifs d apart on a grid large enough to
    // contain both with clearance.
    let n = ((d + 8.0 * a.r + 8.0).ceil() as usize).max(32);
    let c = (n as f64 - 1.0) / 2.0;
    let centers = [(c, c - d / 2.0), (c, c + d / 2.0)];
    let angles: Vec<f64> = (0..a.angles).map(|i| 360.0 * i as f64 / a.angles as f64).collect();
    let geom = ScanGeometry::new(angles, n)?;
    let motif = Motif::disc(a.r);
    let gram = empirical_gram(&centers, &motif, &geom)?;
    let g = gram.values();
    let mu = g[[0, 1]].abs() / (g[[0, 0]] * g[[1, 1]]).sqrt();
    println!("r={} d={}: lower={} empirical={} upper={}", a.r, d, lo, mu, hi);
    Ok(())
}

fn cmd_spectrum(a: SpectrumArgs) -> Result<(), Box<dyn std::error::Error>> {
    let report = lowpass_spectrum_with_eps(a.r, a.angles, a.n, a.eps)?;
    if let Some(path) = a.output {
        let mut out = String::from("freq,empirical,analytic\n");
        for i in 0..report.freq.len() {
            out.push_str(&format!(
                "{},{},{}\n",
                report.freq[i], report.empirical[i], report.analytic[i]
            ));
        }
        std::fs::write(&path, out)?;
        println!("wrote {} (cutoff {})", path.display(), report.cutoff);
    } else {
        println!("cutoff={}", report.cutoff);
    }
    Ok(())
}

fn cmd_certify(a: CertifyArgs) -> Result<(), Box<dyn std::error::Error>> {
    let x0 = read_sparse_map_csv(&a.sample)?;
    let motif = parse_motif(&a.motif)?;
    let geom = ScanGeometry::new(parse_angles(&a.angles)?, x0.n())?;
    let q = lemma_certificate(&x0, &motif, &geom)?;
    let report = check_certificate(&x0, &motif, &geom, &q)?;
    println!(
        "support_dev={} off_support={} lambda_min={} pass={}",
        report.max_support_dev, report.max_off_support, report.lambda_min, report.pass
    );
    Ok(())
}

fn cmd_bench_pt(a: BenchPtArgs) -> Result<(), Box<dyn std::error::Error>> {
    let text = match &a.config {
        Some(path) => std::fs::read_to_string(path)?,
        None => String::new(),
    };
    let cfg = parse_pt_config(&text)?;
    let result = run_campaign(&cfg, &a.output)?;
    let table = efficiency_table(&cfg, &result);
    print!("{}", efficiency_csv(&table));
    println!("wrote campaign CSVs to {}", a.output.display());
    Ok(())
}

fn cmd_bench_reweight(a: BenchReweightArgs) -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ReweightBenchConfig {
        trials: a.trials,
        seed: a.seed,
        ..ReweightBenchConfig::default()
    };
    let rows = reweight_comparison(&cfg)?;
    std::fs::write(&a.output, reweight_csv(&rows))?;
    let mean = |f: fn(&linescan::harness::ReweightBenchRow) -> f64| {
        rows.iter().map(f).sum::<f64>() / rows.len().max(1) as f64
    };
    println!(
        "wrote {} (mean errors: reweighted={} small-lambda={} big-lambda={})",
        a.output.display(),
        mean(|r| r.err_reweighted),
        mean(|r| r.err_small_lambda),
        mean(|r| r.err_big_lambda)
    );
    Ok(())
}
