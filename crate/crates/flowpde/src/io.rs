//! FLD1 field files, CSV tables and JSON documents.
//!
//! FLD1 layout (little endian): magic `FLD1`, u32 d, u32 n, u32 n_t,
//! f64 dt, f64 t_min, f64 sigma, then n_t · n^d f64 values with time
//! outermost. A space-only field has n_t = 1 and dt = 0.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flowpde_core::{Domain, Field, LatticeSpec};
use serde::Serialize;

use crate::error::{CliError, CliResult};

const MAGIC: &[u8; 4] = b"FLD1";

pub fn encode_fld1(f: &Field) -> Vec<u8> {
    let s = &f.spec;
    let n_t = f.n_slices() as u32;
    let dt = if f.domain == Domain::SpaceOnly { 0.0 } else { s.dt };
    let mut out = Vec::with_capacity(40 + 8 * f.data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(s.d as u32).to_le_bytes());
    out.extend_from_slice(&(s.n as u32).to_le_bytes());
    out.extend_from_slice(&n_t.to_le_bytes());
    out.extend_from_slice(&dt.to_le_bytes());
    out.extend_from_slice(&s.t_min.to_le_bytes());
    out.extend_from_slice(&s.sigma.to_le_bytes());
    for v in &f.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_fld1(bytes: &[u8]) -> CliResult<Field> {
    let bad = |m: &str| CliError::validation(format!("malformed FLD1 data: {m}"));
    if bytes.len() < 40 || &bytes[..4] != MAGIC {
        return Err(bad("missing header"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let (d, n, n_t) = (u32_at(4), u32_at(8), u32_at(12));
    let (dt, t_min, sigma) = (f64_at(16), f64_at(24), f64_at(32));
    let count = n_t
        .checked_mul(n.checked_pow(d as u32).ok_or_else(|| bad("size overflow"))?)
        .ok_or_else(|| bad("size overflow"))?;
    if bytes.len() != 40 + 8 * count {
        return Err(bad("payload length does not match header"));
    }
    let data: Vec<f64> = bytes[40..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let (spec, domain) = if n_t == 1 && dt == 0.0 {
        (LatticeSpec { t_min, t_max: t_min, ..LatticeSpec::space(d, n, sigma)? }, Domain::SpaceOnly)
    } else {
        let t_max = t_min + (n_t - 1) as f64 * dt;
        (LatticeSpec::new(d, n, dt, t_min, t_max, sigma)?, Domain::SpaceTime)
    };
    Ok(Field::from_data(spec, domain, data)?)
}

pub fn write_fld1(path: &Path, f: &Field) -> CliResult<()> {
    let mut file = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    file.write_all(&encode_fld1(f)).map_err(|e| CliError::io(path, e))
}

pub fn read_fld1(path: &Path) -> CliResult<Field> {
    let mut buf = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| CliError::io(path, e))?;
    decode_fld1(&buf)
}

/// Writes serializable rows as a CSV file with a header line.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::validation(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn space_time_round_trip() {
        let spec = LatticeSpec::new(2, 8, 0.25, -1.0, 0.5, 1.5).unwrap();
        let f = Field::space_time_fn(spec, |t, x| t * x[0] - x[1].sin());
        let g = decode_fld1(&encode_fld1(&f)).unwrap();
        assert_eq!(g.data, f.data);
        assert_eq!(g.domain, Domain::SpaceTime);
        assert_eq!((g.spec.t_min, g.spec.dt, g.spec.n_time()), (-1.0, 0.25, 7));
    }

    #[test]
    fn space_only_round_trip() {
        let f = Field::space_fn(LatticeSpec::space(1, 16, 0.5).unwrap(), |x| x[0].cos());
        let g = decode_fld1(&encode_fld1(&f)).unwrap();
        assert_eq!(g.domain, Domain::SpaceOnly);
        assert_eq!(g.data, f.data);
    }

    #[test]
    fn rejects_truncated_payload() {
        let f = Field::space_fn(LatticeSpec::space(1, 16, 0.5).unwrap(), |x| x[0]);
        let mut b = encode_fld1(&f);
        b.pop();
        assert!(decode_fld1(&b).is_err());
        assert!(decode_fld1(b"FLD2").is_err());
    }
}
