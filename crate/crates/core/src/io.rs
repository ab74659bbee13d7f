//! CSV output, field snapshots, binary checkpoints and the run log.

use crate::analysis::{Profile, SpectrumEstimate};
use crate::error::{Error, Result};
use crate::fields::{CellField, FaceVecField, Grid2D, SimState};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    Ok(BufWriter::new(File::create(path)?))
}

/// Columns `k, k_eff, S_mean, S_stderr, n_samples`, one row per mode.
pub fn write_spectrum_csv(path: &Path, est: &SpectrumEstimate) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "kx,ky,k,k_eff,S_mean,S_stderr,n_samples")?;
    for i in 0..est.k.len() {
        writeln!(
            w,
            "{:e},{:e},{:e},{:e},{:e},{:e},{}",
            est.kx[i], est.ky[i], est.k[i], est.k_eff[i], est.mean[i], est.stderr[i], est.n_samples
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Columns `y, rho1_mean, stderr`.
pub fn write_profile_csv(path: &Path, p: &Profile) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "y,rho1_mean,stderr")?;
    for ((y, m), s) in p.y.iter().zip(&p.mean).zip(&p.stderr) {
        writeln!(w, "{y:e},{m:e},{s:e}")?;
    }
    w.flush()?;
    Ok(())
}

/// Columns `k, omega, S`; `spectra[m]` is indexed like `omegas`.
pub fn write_dynamic_csv(path: &Path, k: &[f64], omegas: &[f64], spectra: &[Vec<f64>]) -> Result<()> {
    if k.len() != spectra.len() || spectra.iter().any(|s| s.len() != omegas.len()) {
        return Err(Error::Dimension("dynamic spectrum shape mismatch".into()));
    }
    let mut w = create(path)?;
    writeln!(w, "k,omega,S")?;
    for (kk, s) in k.iter().zip(spectra) {
        for (o, v) in omegas.iter().zip(s) {
            writeln!(w, "{kk:e},{o:e},{v:e}")?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Generic numeric table with a header row.
pub fn write_table_csv(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "{}", header.join(","))?;
    for r in rows {
        if r.len() != header.len() {
            return Err(Error::Dimension("table row width differs from header".into()));
        }
        let line: Vec<String> = r.iter().map(|v| format!("{v:e}")).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Cell-field snapshot. The first line carries the grid and time.
pub fn write_snapshot(path: &Path, field: &CellField, grid: &Grid2D, step: u64, t: f64) -> Result<()> {
    field.check(grid)?;
    let mut w = create(path)?;
    writeln!(
        w,
        "# nx={} ny={} dx={:e} dy={:e} thickness={:e} step={} t={:e}",
        grid.nx, grid.ny, grid.dx, grid.dy, grid.thickness, step, t
    )?;
    writeln!(w, "i,j,value")?;
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            writeln!(w, "{i},{j},{:e}", field.at(i, j))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// A snapshot read back from disk.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub grid: Grid2D,
    pub step: u64,
    pub t: f64,
    pub field: CellField,
}

pub fn read_snapshot(path: &Path) -> Result<Snapshot> {
    let bad = |m: &str| Error::Format(format!("{}: {m}", path.display()));
    let mut lines = BufReader::new(File::open(path)?).lines();
    let head = lines.next().ok_or_else(|| bad("empty file"))??;
    let head = head.strip_prefix('#').ok_or_else(|| bad("missing header"))?;
    let mut kv = std::collections::HashMap::new();
    for tok in head.split_whitespace() {
        let (k, v) = tok.split_once('=').ok_or_else(|| bad("malformed header"))?;
        kv.insert(k.to_string(), v.to_string());
    }
    let get = |k: &str| kv.get(k).ok_or_else(|| bad(&format!("header lacks '{k}'")));
    let num = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|_| bad(&format!("bad '{k}'"))) };
    let int = |k: &str| -> Result<u64> { get(k)?.parse().map_err(|_| bad(&format!("bad '{k}'"))) };
    let grid = Grid2D::new(int("nx")? as usize, int("ny")? as usize, num("dx")?, num("dy")?)?
        .with_thickness(num("thickness")?)?;
    let (step, t) = (int("step")?, num("t")?);
    lines.next().ok_or_else(|| bad("missing column header"))??;
    let mut field = CellField::zeros(&grid);
    let mut seen = 0usize;
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut it = line.split(',');
        let mut next = || it.next().ok_or_else(|| bad("short row"));
        let i: usize = next()?.trim().parse().map_err(|_| bad("bad index"))?;
        let j: usize = next()?.trim().parse().map_err(|_| bad("bad index"))?;
        let v: f64 = next()?.trim().parse().map_err(|_| bad("bad value"))?;
        if i >= grid.nx || j >= grid.ny {
            return Err(bad("index outside the grid"));
        }
        field.set(i, j, v);
        seen += 1;
    }
    if seen != grid.n_cells() {
        return Err(bad("wrong number of rows"));
    }
    Ok(Snapshot { grid, step, t, field })
}

const MAGIC: &[u8; 8] = b"LMCHKPT\0";
const VERSION: u32 = 1;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Binary checkpoint: the full state plus the noise seed. Noise is counter
/// based on `(seed, step)`, so these fully determine the continuation.
pub fn write_checkpoint(path: &Path, state: &SimState, seed: u64) -> Result<()> {
    let mut body = Vec::new();
    let put = |b: &mut Vec<u8>, v: u64| b.extend_from_slice(&v.to_le_bytes());
    put(&mut body, state.rho.nx as u64);
    put(&mut body, state.rho.ny as u64);
    put(&mut body, state.m.nfx as u64);
    put(&mut body, state.m.nfy as u64);
    put(&mut body, state.step);
    put(&mut body, state.t.to_bits());
    put(&mut body, seed);
    for arr in [&state.rho.data, &state.rho1.data, &state.m.x, &state.m.y] {
        put(&mut body, arr.len() as u64);
        for v in arr.iter() {
            put(&mut body, v.to_bits());
        }
    }
    let tmp = path.with_extension("tmp");
    {
        let mut w = create(&tmp)?;
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&body)?;
        w.write_all(&fnv1a(&body).to_le_bytes())?;
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Reads a checkpoint written by [`write_checkpoint`]; returns the state and seed.
pub fn read_checkpoint(path: &Path) -> Result<(SimState, u64)> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let bad = |m: &str| Error::Format(format!("{}: {m}", path.display()));
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let (body, tail) = bytes[12..].split_at(bytes.len() - 20);
    if fnv1a(body) != u64::from_le_bytes(tail.try_into().unwrap()) {
        return Err(bad("checksum mismatch"));
    }
    let mut pos = 0usize;
    let mut take = || -> Result<u64> {
        let s = body.get(pos..pos + 8).ok_or_else(|| bad("truncated"))?;
        pos += 8;
        Ok(u64::from_le_bytes(s.try_into().unwrap()))
    };
    let nx = take()? as usize;
    let ny = take()? as usize;
    let nfx = take()? as usize;
    let nfy = take()? as usize;
    let step = take()?;
    let t = f64::from_bits(take()?);
    let seed = take()?;
    let mut arrays = Vec::with_capacity(4);
    for _ in 0..4 {
        let n = take()? as usize;
        if n > body.len() / 8 {
            return Err(bad("array length exceeds file size"));
        }
        let mut a = Vec::with_capacity(n);
        for _ in 0..n {
            a.push(f64::from_bits(take()?));
        }
        arrays.push(a);
    }
    let my = arrays.pop().unwrap();
    let mx = arrays.pop().unwrap();
    let rho1 = arrays.pop().unwrap();
    let rho = arrays.pop().unwrap();
    if rho.len() != nx * ny || rho1.len() != nx * ny || mx.len() != nfx * ny || my.len() != nx * nfy {
        return Err(bad("cell arrays do not match the grid"));
    }
    Ok((
        SimState {
            rho: CellField { nx, ny, data: rho },
            rho1: CellField { nx, ny, data: rho1 },
            m: FaceVecField { nx, ny, nfx, nfy, x: mx, y: my },
            t,
            step,
        },
        seed,
    ))
}

/// Line-oriented `key=value` diagnostics log.
pub struct RunLog {
    out: BufWriter<File>,
}

impl RunLog {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(RunLog { out: create(path)? })
    }

    pub fn append(path: &Path) -> Result<Self> {
        Ok(RunLog { out: BufWriter::new(OpenOptions::new().create(true).append(true).open(path)?) })
    }

    pub fn record(&mut self, fields: &[(&str, String)]) -> Result<()> {
        let line: Vec<String> = fields.iter().map(|(k, v)| format!("{k}={v}")).collect();
        writeln!(self.out, "{}", line.join(" "))?;
        self.out.flush()?;
        Ok(())
    }
}

/// Parses one run-log line back into pairs.
pub fn parse_log_line(line: &str) -> Vec<(String, String)> {
    line.split_whitespace()
        .filter_map(|t| t.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())))
        .collect()
}
