//! Serialization: CSV grids, the `LSCS1` binary grid format, scan-set CSV
//! with an angle header, PSF parameter CSV, and key=value config files.
//!
//! CSV floats are written with Rust's shortest round-trip formatting, so
//! write-then-read reproduces values exactly and output bytes are
//! deterministic.

use crate::model::{Coupling, Image, LineScanSet, PsfParams, ScanGeometry, SolverConfig, SparseMap};
use crate::sim::{Magnitudes, Placement, SampleSpec};
use crate::{Error, Result};
use ndarray::Array2;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 5] = b"LSCS1";

fn fmt_row(row: ndarray::ArrayView1<f64>) -> String {
    row.iter()
        .map(|v| format!("{v}"))
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_row(line: &str, row_no: usize, expect: Option<usize>) -> Result<Vec<f64>> {
    let cells: Vec<&str> = line.split(',').map(str::trim).collect();
    if let Some(e) = expect {
        if cells.len() != e {
            return Err(Error::Parse {
                line: row_no,
                msg: format!("expected {e} columns, got {}", cells.len()),
            });
        }
    }
    cells
        .iter()
        .map(|c| {
            c.parse::<f64>().map_err(|_| Error::Parse {
                line: row_no,
                msg: format!("non-numeric cell {c:?}"),
            })
        })
        .collect()
}

/// Read a rectangular CSV of floats; every row must match the first row's width.
fn read_grid_csv(path: &Path) -> Result<Array2<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = parse_row(line, idx + 1, width)?;
        width.get_or_insert(row.len());
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            line: 0,
            msg: "empty file".to_string(),
        });
    }
    let (r, c) = (rows.len(), rows[0].len());
    Ok(Array2::from_shape_vec((r, c), rows.into_iter().flatten().collect()).expect("rectangular"))
}

fn write_grid_csv(path: &Path, data: &Array2<f64>) -> Result<()> {
    let mut out = String::new();
    for row in data.rows() {
        out.push_str(&fmt_row(row));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_image_csv(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    write_grid_csv(path.as_ref(), img.data())
}

pub fn read_image_csv(path: impl AsRef<Path>) -> Result<Image> {
    Image::new(read_grid_csv(path.as_ref())?)
}

pub fn write_sparse_map_csv(path: impl AsRef<Path>, x: &SparseMap) -> Result<()> {
    write_grid_csv(path.as_ref(), x.data())
}

pub fn read_sparse_map_csv(path: impl AsRef<Path>) -> Result<SparseMap> {
    SparseMap::new(read_grid_csv(path.as_ref())?)
}

fn write_grid_binary(path: &Path, data: &Array2<f64>) -> Result<()> {
    let n = data.nrows();
    let mut f = std::fs::File::create(path)?;
    f.write_all(MAGIC)?;
    f.write_all(&(n as u32).to_le_bytes())?;
    let mut buf = Vec::with_capacity(n * n * 8);
    for v in data.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    f.write_all(&buf)?;
    Ok(())
}

fn read_grid_binary(path: &Path) -> Result<Array2<f64>> {
    let mut f = std::fs::File::open(path)?;
    let mut magic = [0u8; 5];
    f.read_exact(&mut magic).map_err(|_| Error::Parse {
        line: 0,
        msg: "truncated header".to_string(),
    })?;
    if &magic != MAGIC {
        return Err(Error::Parse {
            line: 0,
            msg: "bad magic (expected LSCS1)".to_string(),
        });
    }
    let mut nb = [0u8; 4];
    f.read_exact(&mut nb).map_err(|_| Error::Parse {
        line: 0,
        msg: "truncated header".to_string(),
    })?;
    let n = u32::from_le_bytes(nb) as usize;
    let mut payload = vec![0u8; n * n * 8];
    f.read_exact(&mut payload).map_err(|_| Error::Parse {
        line: 0,
        msg: format!("truncated payload (expected {} doubles)", n * n),
    })?;
    let vals: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Array2::from_shape_vec((n, n), vals).expect("sized above"))
}

pub fn write_image_binary(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    write_grid_binary(path.as_ref(), img.data())
}

pub fn read_image_binary(path: impl AsRef<Path>) -> Result<Image> {
    Image::new(read_grid_binary(path.as_ref())?)
}

pub fn write_sparse_map_binary(path: impl AsRef<Path>, x: &SparseMap) -> Result<()> {
    write_grid_binary(path.as_ref(), x.data())
}

pub fn read_sparse_map_binary(path: impl AsRef<Path>) -> Result<SparseMap> {
    SparseMap::new(read_grid_binary(path.as_ref())?)
}

/// Scan CSV layout: one header row of angles in degrees, then one row per
/// sweep sample.
pub fn write_scanset_csv(path: impl AsRef<Path>, scans: &LineScanSet) -> Result<()> {
    let mut out = String::new();
    out.push_str(
        &scans
            .geometry
            .angles_deg()
            .iter()
            .map(|v| format!("{v}"))
            .collect::<Vec<_>>()
            .join(","),
    );
    out.push('\n');
    for row in scans.data().rows() {
        out.push_str(&fmt_row(row));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_scanset_csv(path: impl AsRef<Path>) -> Result<LineScanSet> {
    let text = std::fs::read_to_string(path.as_ref())?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::Parse {
        line: 0,
        msg: "empty file".to_string(),
    })?;
    let angles = parse_row(header, 1, None)?;
    let m = angles.len();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, line) in lines {
        rows.push(parse_row(line, idx + 1, Some(m))?);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            line: 1,
            msg: "no sample rows after header".to_string(),
        });
    }
    let samples = rows.len();
    let data = Array2::from_shape_vec((samples, m), rows.into_iter().flatten().collect())
        .expect("rectangular");
    let geom = ScanGeometry::new(angles, samples.max(2)).map_err(|e| Error::Parse {
        line: 1,
        msg: e.to_string(),
    })?;
    LineScanSet::new(data, geom)
}

/// PSF CSV layout: one row `a,c_l,alpha_l,c_r,alpha_r,sigma` per angle, then
/// the box as two more such rows (lower bounds, upper bounds).
pub fn write_psf_csv(path: impl AsRef<Path>, params: &PsfParams) -> Result<()> {
    let mut out = String::new();
    for p in params.lines() {
        out.push_str(&p.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(","));
        out.push('\n');
    }
    for b in [params.lower(), params.upper()] {
        out.push_str(&b.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_psf_csv(path: impl AsRef<Path>) -> Result<PsfParams> {
    let text = std::fs::read_to_string(path.as_ref())?;
    let mut rows: Vec<[f64; 6]> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = parse_row(line, idx + 1, Some(6))?;
        rows.push(row.try_into().unwrap());
    }
    if rows.len() < 3 {
        return Err(Error::Parse {
            line: 0,
            msg: "need at least one parameter row plus two box rows".to_string(),
        });
    }
    let upper = rows.pop().unwrap();
    let lower = rows.pop().unwrap();
    PsfParams::new(rows, lower, upper)
}

/// Parse `key=value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: idx + 1,
            msg: format!("expected key=value, got {line:?}"),
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn kv_get<'a>(kv: &'a [(String, String)], key: &str) -> Option<&'a str> {
    kv.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
}

fn kv_parse<T: std::str::FromStr>(kv: &[(String, String)], key: &str, default: T) -> Result<T> {
    match kv_get(kv, key) {
        None => Ok(default),
        Some(v) => v.parse().map_err(|_| Error::Parse {
            line: 0,
            msg: format!("bad value for {key}: {v:?}"),
        }),
    }
}

fn kv_require<T: std::str::FromStr>(kv: &[(String, String)], key: &str) -> Result<T> {
    match kv_get(kv, key) {
        None => Err(Error::Parse {
            line: 0,
            msg: format!("missing required key {key}"),
        }),
        Some(v) => v.parse().map_err(|_| Error::Parse {
            line: 0,
            msg: format!("bad value for {key}: {v:?}"),
        }),
    }
}

/// Parse a sample spec from key=value text
/// (`n=64 k=20 r=3 ratio=1.0 placement=random seed=7 mag=equal`).
pub fn parse_sample_spec(text: &str) -> Result<SampleSpec> {
    let kv = parse_kv(text)?;
    let placement = match kv_get(&kv, "placement").unwrap_or("random") {
        "random" => Placement::RandomRejection,
        "hex" | "hexagonal" => Placement::Hexagonal {
            spacing: match kv_get(&kv, "spacing") {
                None => None,
                Some(v) => Some(v.parse().map_err(|_| Error::Parse {
                    line: 0,
                    msg: format!("bad value for spacing: {v:?}"),
                })?),
            },
        },
        other => {
            return Err(Error::Parse {
                line: 0,
                msg: format!("unknown placement {other:?}"),
            })
        }
    };
    let magnitudes = match kv_get(&kv, "mag").unwrap_or("equal") {
        "equal" => Magnitudes::Equal,
        spec => match spec.strip_prefix("uniform:").and_then(|r| r.split_once(',')) {
            Some((lo, hi)) => Magnitudes::Uniform {
                lo: lo.parse().map_err(|_| Error::Parse {
                    line: 0,
                    msg: format!("bad uniform bounds {spec:?}"),
                })?,
                hi: hi.parse().map_err(|_| Error::Parse {
                    line: 0,
                    msg: format!("bad uniform bounds {spec:?}"),
                })?,
            },
            None => {
                return Err(Error::Parse {
                    line: 0,
                    msg: format!("unknown magnitudes {spec:?} (want equal or uniform:lo,hi)"),
                })
            }
        },
    };
    let spec = SampleSpec {
        n: kv_require(&kv, "n")?,
        k: kv_require(&kv, "k")?,
        r: kv_require(&kv, "r")?,
        min_sep_ratio: kv_parse(&kv, "ratio", 1.0)?,
        magnitudes,
        placement,
        seed: kv_parse(&kv, "seed", 0)?,
    };
    spec.validate()?;
    Ok(spec)
}

/// Parse solver settings from key=value text
/// (`K=6 L=50 C=0.1 eps=1e-12 alpha=0.9 seed=0 coupling=shared`).
pub fn parse_solver_config(text: &str) -> Result<SolverConfig> {
    let kv = parse_kv(text)?;
    let dft = SolverConfig::default();
    let coupling = match kv_get(&kv, "coupling").unwrap_or("shared") {
        "shared" => Coupling::SharedShape,
        "independent" => Coupling::Independent,
        other => {
            return Err(Error::Parse {
                line: 0,
                msg: format!("unknown coupling {other:?}"),
            })
        }
    };
    let cfg = SolverConfig {
        rounds: kv_parse(&kv, "K", dft.rounds)?,
        iters: kv_parse(&kv, "L", dft.iters)?,
        reweight_scale: kv_parse(&kv, "C", dft.reweight_scale)?,
        eps: kv_parse(&kv, "eps", dft.eps)?,
        alpha_inertia: kv_parse(&kv, "alpha", dft.alpha_inertia)?,
        seed: kv_parse(&kv, "seed", dft.seed)?,
        coupling,
        early_stop_tol: kv_parse(&kv, "early_stop_tol", dft.early_stop_tol)?,
        early_stop_patience: kv_parse(&kv, "early_stop_patience", dft.early_stop_patience)?,
    };
    cfg.validate().map_err(|e| Error::Parse {
        line: 0,
        msg: e.to_string(),
    })?;
    Ok(cfg)
}

/// Render a solver config back to key=value text.
pub fn format_solver_config(cfg: &SolverConfig) -> String {
    format!(
        "K={}\nL={}\nC={}\neps={}\nalpha={}\nseed={}\ncoupling={}\nearly_stop_tol={}\nearly_stop_patience={}\n",
        cfg.rounds,
        cfg.iters,
        cfg.reweight_scale,
        cfg.eps,
        cfg.alpha_inertia,
        cfg.seed,
        match cfg.coupling {
            Coupling::SharedShape => "shared",
            Coupling::Independent => "independent",
        },
        cfg.early_stop_tol,
        cfg.early_stop_patience,
    )
}
