//! Feature ingest (CSV, DBCF binary), label sidecars and result writers.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::store::FeatureStore;

pub const DBCF_MAGIC: &[u8; 4] = b"DBCF";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureFormat {
    Csv,
    Dbcf,
}

impl std::str::FromStr for FeatureFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(FeatureFormat::Csv),
            "dbcf" => Ok(FeatureFormat::Dbcf),
            other => Err(Error::config(format!("unknown feature format `{other}`"))),
        }
    }
}

pub fn read_features(path: &Path, format: FeatureFormat) -> Result<FeatureStore> {
    match format {
        FeatureFormat::Csv => read_csv(path),
        FeatureFormat::Dbcf => read_dbcf(path),
    }
}

fn parse_err(path: &Path, line: usize, reason: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        reason: reason.into(),
    }
}

/// Read `id,f0,...,f{d-1}[,label]`.
pub fn read_csv(path: &Path) -> Result<FeatureStore> {
    let file = File::open(path).map_err(|e| Error::io(format!("open {}", path.display()), e))?;
    read_csv_from(file, path)
}

pub(crate) fn read_csv_from<R: Read>(reader: R, path: &Path) -> Result<FeatureStore> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .clone();
    let cols: Vec<&str> = header.iter().collect();
    if cols.first() != Some(&"id") {
        return Err(parse_err(path, 1, "header must start with `id`"));
    }
    let has_label = cols.last() == Some(&"label");
    let dim = cols.len() - 1 - usize::from(has_label);
    if dim == 0 {
        return Err(parse_err(path, 1, "no feature columns"));
    }
    for (k, name) in cols[1..=dim].iter().enumerate() {
        if *name != format!("f{k}") {
            return Err(parse_err(path, 1, format!("expected column `f{k}`, found `{name}`")));
        }
    }

    let mut ids = Vec::new();
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(row + 2, |p| p.line() as usize);
            parse_err(path, line, e.to_string())
        })?;
        let line = record.position().map_or(row + 2, |p| p.line() as usize);
        if record.len() != cols.len() {
            return Err(parse_err(
                path,
                line,
                format!("expected {} fields, found {}", cols.len(), record.len()),
            ));
        }
        let id = &record[0];
        for k in 0..dim {
            let v: f64 = record[k + 1].parse().map_err(|_| {
                parse_err(path, line, format!("row {row} (id `{id}`): bad number `{}`", &record[k + 1]))
            })?;
            if !v.is_finite() {
                return Err(parse_err(
                    path,
                    line,
                    format!("row {row} (id `{id}`): non-finite value in column f{k}"),
                ));
            }
            features.push(v);
        }
        if has_label {
            let l: i64 = record[dim + 1].parse().map_err(|_| {
                parse_err(path, line, format!("row {row} (id `{id}`): bad label `{}`", &record[dim + 1]))
            })?;
            labels.push(l);
        }
        ids.push(id.to_string());
    }
    let store = FeatureStore::new(features, dim, ids)?;
    if has_label {
        store.with_ground_truth(labels)
    } else {
        Ok(store)
    }
}

pub fn write_csv(path: &Path, store: &FeatureStore) -> Result<()> {
    let mut w = create(path)?;
    let mut header = String::from("id");
    for k in 0..store.dim() {
        header.push_str(&format!(",f{k}"));
    }
    if store.ground_truth().is_some() {
        header.push_str(",label");
    }
    let ctx = || format!("write {}", path.display());
    writeln!(w, "{header}").map_err(|e| Error::io(ctx(), e))?;
    for (i, row) in store.rows().enumerate() {
        let mut line = store.sample_ids()[i].clone();
        for v in row {
            line.push_str(&format!(",{v}"));
        }
        if let Some(truth) = store.ground_truth() {
            line.push_str(&format!(",{}", truth[i]));
        }
        writeln!(w, "{line}").map_err(|e| Error::io(ctx(), e))?;
    }
    w.flush().map_err(|e| Error::io(ctx(), e))
}

/// Read the raw binary layout: `DBCF`, u32 N, u32 d, then N*d f32, all
/// little-endian. Ids are `0..N`.
pub fn read_dbcf(path: &Path) -> Result<FeatureStore> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(format!("read {}", path.display()), e))?;
    decode_dbcf(&bytes).map_err(|reason| parse_err(path, 0, reason))
}

pub fn decode_dbcf(bytes: &[u8]) -> std::result::Result<FeatureStore, String> {
    if bytes.len() < 12 || &bytes[..4] != DBCF_MAGIC {
        return Err("missing DBCF magic".into());
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let expected = n
        .checked_mul(d)
        .and_then(|x| x.checked_mul(4))
        .and_then(|x| x.checked_add(12))
        .ok_or("DBCF header overflows")?;
    if bytes.len() != expected {
        return Err(format!("DBCF payload is {} bytes, header implies {expected}", bytes.len()));
    }
    let features: Vec<f64> = bytes[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    FeatureStore::with_index_ids(features, d).map_err(|e| e.to_string())
}

pub fn encode_dbcf(store: &FeatureStore) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + store.as_slice().len() * 4);
    out.extend_from_slice(DBCF_MAGIC);
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    out.extend_from_slice(&(store.dim() as u32).to_le_bytes());
    for &v in store.as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn write_dbcf(path: &Path, store: &FeatureStore) -> Result<()> {
    std::fs::write(path, encode_dbcf(store)).map_err(|e| Error::io(format!("write {}", path.display()), e))
}

/// Read an `id<TAB>label` sidecar. A leading `id<TAB>label` header is skipped.
pub fn read_label_tsv(path: &Path) -> Result<HashMap<String, i64>> {
    let file = File::open(path).map_err(|e| Error::io(format!("open {}", path.display()), e))?;
    let mut out = HashMap::new();
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let lineno = k + 1;
        let line = line.map_err(|e| Error::io(format!("read {}", path.display()), e))?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() || (k == 0 && line == "id\tlabel") {
            continue;
        }
        let (id, label) = line
            .split_once('\t')
            .ok_or_else(|| parse_err(path, lineno, "expected `id<TAB>label`"))?;
        let label: i64 = label
            .trim()
            .parse()
            .map_err(|_| parse_err(path, lineno, format!("bad label `{label}`")))?;
        if out.insert(id.to_string(), label).is_some() {
            return Err(parse_err(path, lineno, format!("duplicate id `{id}`")));
        }
    }
    Ok(out)
}

pub fn attach_labels(store: FeatureStore, labels: &HashMap<String, i64>) -> Result<FeatureStore> {
    let truth = store
        .sample_ids()
        .iter()
        .map(|id| {
            labels
                .get(id)
                .copied()
                .ok_or_else(|| Error::data(format!("no label for sample `{id}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    store.with_ground_truth(truth)
}

pub fn write_label_tsv(path: &Path, ids: &[String], labels: &[i64]) -> Result<()> {
    let mut w = create(path)?;
    let ctx = || format!("write {}", path.display());
    for (id, l) in ids.iter().zip(labels) {
        writeln!(w, "{id}\t{l}").map_err(|e| Error::io(ctx(), e))?;
    }
    w.flush().map_err(|e| Error::io(ctx(), e))
}

/// `id<TAB>cluster`, one line per sample in store order.
pub fn write_assignments(path: &Path, ids: &[String], clusters: &[usize]) -> Result<()> {
    let mut w = create(path)?;
    let ctx = || format!("write {}", path.display());
    for (id, c) in ids.iter().zip(clusters) {
        writeln!(w, "{id}\t{c}").map_err(|e| Error::io(ctx(), e))?;
    }
    w.flush().map_err(|e| Error::io(ctx(), e))
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = create(path)?;
    let ctx = || format!("write {}", path.display());
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n").map_err(|e| Error::io(ctx(), e))?;
    }
    w.flush().map_err(|e| Error::io(ctx(), e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(format!("write {}", path.display()), e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(format!("create {}", path.display()), e))
}
