//! Output files. Every file starts with a header naming the artifact
//! version, the configuration digest and the seed: `#` comment lines for CSV,
//! a `header` object for JSON, and a length-prefixed JSON block for binary
//! time series.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::{Spectrum, TimeSeries};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::trap::PotentialField;
use crate::units::joules_to_microkelvin;

pub const ARTIFACT: &str = "nanotrap";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
const BINARY_MAGIC: &[u8; 8] = b"NTTSv1\0\0";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    pub artifact: String,
    pub version: String,
    pub config_digest: String,
    pub seed: u64,
}

impl Header {
    pub fn new(config_digest: impl Into<String>, seed: u64) -> Self {
        Header { artifact: ARTIFACT.into(), version: VERSION.into(), config_digest: config_digest.into(), seed }
    }

    fn csv_lines(&self) -> String {
        format!(
            "# artifact: {} {}\n# config_digest: {}\n# seed: {}\n",
            self.artifact, self.version, self.config_digest, self.seed
        )
    }
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?))
}

/// Writes header comments, a column line and one line per row.
pub fn write_csv<T: Scalar>(
    path: &Path,
    header: &Header,
    columns: &[&str],
    rows: impl IntoIterator<Item = Vec<T>>,
) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    w.write_all(header.csv_lines().as_bytes()).map_err(io)?;
    writeln!(w, "{}", columns.join(",")).map_err(io)?;
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", line.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}

#[derive(Serialize)]
struct Document<'a, V: Serialize> {
    header: &'a Header,
    data: &'a V,
}

pub fn write_json<V: Serialize>(path: &Path, header: &Header, data: &V) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, &Document { header, data })
        .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

/// Reads the `data` member of a document written by [`write_json`].
pub fn read_json<V: for<'de> Deserialize<'de>>(path: &Path) -> Result<(Header, V)> {
    #[derive(Deserialize)]
    struct Owned<V> {
        header: Header,
        data: V,
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: Owned<V> =
        serde_json::from_str(&text).map_err(|e| Error::Parse { path: path.to_path_buf(), message: e.to_string() })?;
    Ok((doc.header, doc.data))
}

pub fn write_potential_csv<T: Scalar>(path: &Path, header: &Header, field: &PotentialField<T>) -> Result<()> {
    let rows = (0..field.n_r()).flat_map(|ir| {
        (0..field.n_phi()).map(move |ip| {
            let u = field.value(ir, ip);
            vec![field.r[ir], field.phi[ip], u, joules_to_microkelvin(u)]
        })
    });
    write_csv(path, header, &["r_m", "phi_rad", "U_J", "U_uK"], rows)
}

pub fn write_spectrum_csv<T: Scalar>(path: &Path, header: &Header, spectrum: &Spectrum<T>) -> Result<()> {
    let rows = spectrum.frequency.iter().zip(&spectrum.power).map(|(f, p)| vec![*f, *p]);
    write_csv(path, header, &["frequency_hz", "power"], rows)
}

pub fn write_series_csv<T: Scalar>(path: &Path, header: &Header, series: &TimeSeries<T>) -> Result<()> {
    let rows = series.values.iter().enumerate().map(|(i, v)| vec![series.time(i), *v]);
    write_csv(path, header, &["t_s", "signal"], rows)
}

/// Binary layout (little endian): magic, u32 header length, header JSON,
/// f64 t0, f64 dt, u64 count, count × f64 values.
pub fn write_series_binary<T: Scalar>(path: &Path, header: &Header, series: &TimeSeries<T>) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    let head = serde_json::to_vec(header).expect("header serializes");
    w.write_all(BINARY_MAGIC).map_err(io)?;
    w.write_all(&(head.len() as u32).to_le_bytes()).map_err(io)?;
    w.write_all(&head).map_err(io)?;
    w.write_all(&series.t0.to_f64_lossy().to_le_bytes()).map_err(io)?;
    w.write_all(&series.dt.to_f64_lossy().to_le_bytes()).map_err(io)?;
    w.write_all(&(series.len() as u64).to_le_bytes()).map_err(io)?;
    for v in &series.values {
        w.write_all(&v.to_f64_lossy().to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

fn parse_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), message: message.into() }
}

fn read_binary<T: Scalar>(path: &Path, bytes: &[u8]) -> Result<TimeSeries<T>> {
    let take = |from: usize, n: usize| {
        bytes.get(from..from + n).ok_or_else(|| parse_err(path, "truncated binary time series"))
    };
    let u64_at = |from: usize| -> Result<[u8; 8]> { Ok(take(from, 8)?.try_into().expect("8 bytes")) };
    let head_len = u32::from_le_bytes(take(8, 4)?.try_into().expect("4 bytes")) as usize;
    let mut at = 12 + head_len;
    serde_json::from_slice::<Header>(take(12, head_len)?).map_err(|e| parse_err(path, e.to_string()))?;
    let t0 = f64::from_le_bytes(u64_at(at)?);
    let dt = f64::from_le_bytes(u64_at(at + 8)?);
    let n = u64::from_le_bytes(u64_at(at + 16)?) as usize;
    at += 24;
    let data = take(at, n.checked_mul(8).ok_or_else(|| parse_err(path, "bad sample count"))?)?;
    let values = data
        .chunks_exact(8)
        .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
        .collect();
    TimeSeries::new(T::lit(t0), T::lit(dt), values)
}

/// Reads a `t_s,signal` CSV (comment lines and a column line allowed) or
/// the binary format. CSV sample times must be uniform to 1e-6 of dt.
pub fn read_series<T: Scalar>(path: &Path) -> Result<TimeSeries<T>> {
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(BINARY_MAGIC) {
        return read_binary(path, &bytes);
    }
    let mut t = Vec::new();
    let mut v = Vec::new();
    for (n, line) in BufReader::new(bytes.as_slice()).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut cols = line.split(',').map(str::trim);
        let (a, b) = (cols.next().unwrap_or(""), cols.next().unwrap_or(""));
        match (a.parse::<f64>(), b.parse::<f64>()) {
            (Ok(x), Ok(y)) => {
                t.push(x);
                v.push(y);
            }
            _ if t.is_empty() && a.parse::<f64>().is_err() => continue, // column line
            _ => return Err(parse_err(path, format!("line {}: expected two numbers, got '{line}'", n + 1))),
        }
    }
    if t.len() < 2 {
        return Err(parse_err(path, "need at least two samples"));
    }
    let dt = (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64;
    for (i, ti) in t.iter().enumerate() {
        if (ti - (t[0] + dt * i as f64)).abs() > 1e-6 * dt.abs() {
            return Err(parse_err(path, format!("sample {i} breaks uniform spacing")));
        }
    }
    TimeSeries::new(T::lit(t[0]), T::lit(dt), v.into_iter().map(T::lit).collect())
}

/// SHA-256 of a file's bytes, hex encoded.
pub fn file_digest(path: &Path) -> Result<String> {
    use sha2::{Digest, Sha256};
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn series_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let s = TimeSeries::new(1e-6, 2e-9, vec![0.1, 0.25, 1.0 / 3.0, -7.5e-12]).unwrap();
        let h = Header::new("abc", 7);
        let csv = dir.path().join("s.csv");
        write_series_csv(&csv, &h, &s).unwrap();
        let back: TimeSeries<f64> = read_series(&csv).unwrap();
        assert_eq!(back.values, s.values);
        assert!((back.dt - s.dt).abs() < 1e-20);
        let bin = dir.path().join("s.bin");
        write_series_binary(&bin, &h, &s).unwrap();
        assert_eq!(read_series::<f64>(&bin).unwrap(), s);
    }

    #[test]
    fn missing_file_is_io_error() {
        let e = read_series::<f64>(Path::new("/nonexistent/x.csv")).unwrap_err();
        assert_eq!(e.kind(), crate::error::ErrorKind::Io);
        assert!(e.to_string().contains("/nonexistent/x.csv"));
    }
}
