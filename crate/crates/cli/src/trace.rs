//! Chain trace CSV: a `#` header block, a column row, one row per iteration.
//!
//! Columns: `iter, x_1..x_d, log_post, acc1, acc2, n_fine, n_coarse,
//! sigma_1..sigma_L`. `acc2` is empty for MH. Floats use 17 significant
//! digits so values round-trip exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use ada_core::kernel::ChainRecord;

use crate::error::{CliError, CliResult};

pub const VERSION: &str = concat!("ada-cli ", env!("CARGO_PKG_VERSION"));

/// Key-value pairs of the header block.
pub type Meta = BTreeMap<String, String>;

pub fn header_block(meta: &Meta) -> String {
    let mut s = format!("# {VERSION}\n");
    for (k, v) in meta {
        let _ = writeln!(s, "# {k}={v}");
    }
    s
}

pub fn column_names(dim: usize, groups: usize) -> Vec<String> {
    let mut c = vec!["iter".to_string()];
    c.extend((1..=dim).map(|i| format!("x_{i}")));
    c.extend(["log_post", "acc1", "acc2", "n_fine", "n_coarse"].map(String::from));
    c.extend((1..=groups).map(|i| format!("sigma_{i}")));
    c
}

pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn format_row(r: &ChainRecord) -> String {
    let mut s = r.iteration.to_string();
    for v in &r.x {
        s.push(',');
        s.push_str(&format_float(*v));
    }
    let _ = write!(s, ",{},{},", format_float(r.log_post), r.acc1);
    if let Some(a) = r.acc2 {
        let _ = write!(s, "{a}");
    }
    let _ = write!(s, ",{},{}", r.n_fine, r.n_coarse);
    for v in &r.sigma {
        s.push(',');
        s.push_str(&format_float(*v));
    }
    s.push('\n');
    s
}

pub struct TraceWriter {
    out: BufWriter<File>,
    path: std::path::PathBuf,
}

impl TraceWriter {
    pub fn create(path: &Path, meta: &Meta, dim: usize, groups: usize) -> CliResult<Self> {
        let f = File::create(path).map_err(|e| CliError::io(path, e))?;
        let mut w = Self {
            out: BufWriter::new(f),
            path: path.to_path_buf(),
        };
        let text = header_block(meta) + &column_names(dim, groups).join(",") + "\n";
        w.write_raw(&text)?;
        Ok(w)
    }

    /// Reopens an existing trace, keeping its header and first `rows` rows.
    pub fn resume(path: &Path, expected: &Meta, rows: u64) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let meta = parse_meta(&text);
        for key in ["config_hash", "chain"] {
            if meta.get(key) != expected.get(key) {
                return Err(CliError::format(
                    path,
                    format!(
                        "trace header {key} is {:?}, the resumed run has {:?}",
                        meta.get(key),
                        expected.get(key)
                    ),
                ));
            }
        }
        let mut keep = 0usize;
        let mut data_rows = 0u64;
        let mut seen_columns = false;
        for line in text.split_inclusive('\n') {
            if data_rows == rows && seen_columns {
                break;
            }
            if !line.starts_with('#') {
                if seen_columns {
                    if !line.ends_with('\n') {
                        break;
                    }
                    data_rows += 1;
                } else {
                    seen_columns = true;
                }
            }
            keep += line.len();
        }
        if data_rows < rows || !seen_columns {
            return Err(CliError::format(
                path,
                format!("trace has {data_rows} complete rows, the checkpoint needs {rows}"),
            ));
        }
        let f = OpenOptions::new().write(true).open(path).map_err(|e| CliError::io(path, e))?;
        f.set_len(keep as u64).map_err(|e| CliError::io(path, e))?;
        let f = OpenOptions::new().append(true).open(path).map_err(|e| CliError::io(path, e))?;
        Ok(Self {
            out: BufWriter::new(f),
            path: path.to_path_buf(),
        })
    }

    fn write_raw(&mut self, s: &str) -> CliResult<()> {
        self.out.write_all(s.as_bytes()).map_err(|e| CliError::io(&self.path, e))
    }

    pub fn write(&mut self, r: &ChainRecord) -> CliResult<()> {
        let row = format_row(r);
        self.write_raw(&row)
    }

    pub fn flush(&mut self) -> CliResult<()> {
        self.out.flush().map_err(|e| CliError::io(&self.path, e))
    }
}

fn parse_meta(text: &str) -> Meta {
    text.lines()
        .take_while(|l| l.starts_with('#'))
        .filter_map(|l| l.trim_start_matches('#').trim().split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

/// A parsed trace. `log_like` of each record is a copy of `log_post` until
/// the caller subtracts the log-prior.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub meta: Meta,
    pub columns: Vec<String>,
    pub dim: usize,
    pub groups: usize,
    pub records: Vec<ChainRecord>,
}

impl Trace {
    /// Numeric values of column `name` (empty `acc2` cells are skipped).
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let rs = &self.records;
        let v: Vec<f64> = if let Some(i) = name.strip_prefix("x_").and_then(|k| k.parse::<usize>().ok()) {
            rs.iter().map(|r| r.x[i - 1]).collect()
        } else if let Some(i) = name.strip_prefix("sigma_").and_then(|k| k.parse::<usize>().ok()) {
            rs.iter().map(|r| r.sigma[i - 1]).collect()
        } else {
            match name {
                "iter" => rs.iter().map(|r| r.iteration as f64).collect(),
                "log_post" => rs.iter().map(|r| r.log_post).collect(),
                "acc1" => rs.iter().map(|r| f64::from(r.acc1)).collect(),
                "acc2" => rs.iter().filter_map(|r| r.acc2.map(f64::from)).collect(),
                "n_fine" => rs.iter().map(|r| r.n_fine as f64).collect(),
                "n_coarse" => rs.iter().map(|r| r.n_coarse as f64).collect(),
                _ => return None,
            }
        };
        self.columns.iter().any(|c| c == name).then_some(v)
    }

    /// Replaces `log_like` with `log_post − log_prior(x)`.
    pub fn reconstruct_log_like(&mut self, log_prior: impl Fn(&[f64]) -> f64) {
        for r in &mut self.records {
            r.log_like = r.log_post - log_prior(&r.x);
        }
    }
}

pub fn read_trace(path: &Path) -> CliResult<Trace> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_trace(&text).map_err(|m| CliError::format(path, m))
}

pub fn parse_trace(text: &str) -> Result<Trace, String> {
    let meta = parse_meta(text);
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .has_headers(true)
        .from_reader(text.as_bytes());
    let columns: Vec<String> = rdr
        .headers()
        .map_err(|e| format!("unreadable column row: {e}"))?
        .iter()
        .map(String::from)
        .collect();
    let dim = columns.iter().filter(|c| c.starts_with("x_")).count();
    let groups = columns.iter().filter(|c| c.starts_with("sigma_")).count();
    if columns != column_names(dim, groups) {
        return Err(format!(
            "unexpected columns {columns:?}; expected {:?}",
            column_names(dim, groups)
        ));
    }
    let attempts: u32 = match meta.get("blocks") {
        Some(b) => b.parse().map_err(|_| format!("bad blocks header '{b}'"))?,
        None => groups.max(1) as u32,
    };
    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| format!("row {}: {e}", i + 1))?;
        let line = i + 1;
        let num = |k: usize| -> Result<f64, String> {
            row[k]
                .trim()
                .parse::<f64>()
                .map_err(|_| format!("row {line}, column {}: '{}' is not a number", columns[k], &row[k]))
        };
        let int = |k: usize| -> Result<u64, String> {
            row[k]
                .trim()
                .parse::<u64>()
                .map_err(|_| format!("row {line}, column {}: '{}' is not a count", columns[k], &row[k]))
        };
        let x = (1..=dim).map(num).collect::<Result<Vec<_>, _>>()?;
        let log_post = num(dim + 1)?;
        let acc2_cell = row[dim + 3].trim();
        let acc2 = if acc2_cell.is_empty() {
            None
        } else {
            Some(int(dim + 3)? as u32)
        };
        records.push(ChainRecord {
            iteration: int(0)?,
            x,
            log_post,
            log_like: log_post,
            acc1: int(dim + 2)? as u32,
            acc2,
            attempts,
            n_fine: int(dim + 4)?,
            n_coarse: int(dim + 5)?,
            sigma: (dim + 6..dim + 6 + groups).map(num).collect::<Result<Vec<_>, _>>()?,
        });
    }
    Ok(Trace {
        meta,
        columns,
        dim,
        groups,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(i: u64, mh: bool) -> ChainRecord {
        ChainRecord {
            iteration: i,
            x: vec![0.1 * i as f64, -1.0 / 3.0, f64::MIN_POSITIVE],
            log_post: -std::f64::consts::PI * i as f64,
            log_like: -std::f64::consts::PI * i as f64,
            acc1: 1,
            acc2: (!mh).then_some(0),
            attempts: 2,
            n_fine: i + 1,
            n_coarse: 2 * i,
            sigma: vec![2.38 / 3.0, 1e-7],
        }
    }

    #[test]
    fn rows_round_trip_exactly() {
        let meta: Meta = [("blocks".to_string(), "2".to_string())].into();
        for mh in [true, false] {
            let recs: Vec<_> = (1..=5).map(|i| record(i, mh)).collect();
            let mut text = header_block(&meta) + &column_names(3, 2).join(",") + "\n";
            for r in &recs {
                text += &format_row(r);
            }
            let t = parse_trace(&text).unwrap();
            assert_eq!(t.records, recs);
            assert_eq!(t.meta["blocks"], "2");
            assert_eq!(t.column("acc2").unwrap().len(), if mh { 0 } else { 5 });
        }
    }

    #[test]
    fn malformed_traces_are_rejected() {
        assert!(parse_trace("iter,x_1,log_post\n1,2,3\n").is_err());
        let text = column_names(1, 0).join(",") + "\n1,abc,0,1,,1,0\n";
        let e = parse_trace(&text).unwrap_err();
        assert!(e.contains("x_1"), "{e}");
    }

    #[test]
    fn resume_truncates_to_the_checkpointed_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let meta: Meta = [("chain".to_string(), "0".to_string()), ("config_hash".to_string(), "ab".to_string())].into();
        let mut w = TraceWriter::create(&p, &meta, 3, 2).unwrap();
        for i in 1..=4 {
            w.write(&record(i, false)).unwrap();
        }
        w.flush().unwrap();
        drop(w);
        let mut w = TraceWriter::resume(&p, &meta, 2).unwrap();
        w.write(&record(3, false)).unwrap();
        w.flush().unwrap();
        let t = read_trace(&p).unwrap();
        assert_eq!(t.records.len(), 3);
        let mut other = meta.clone();
        other.insert("config_hash".into(), "cd".into());
        assert!(TraceWriter::resume(&p, &other, 1).is_err());
        assert!(TraceWriter::resume(&p, &meta, 9).is_err());
    }
}
