//! File formats: embedding CSV in and out, metrics and table CSVs,
//! embedding JSON records and the resolved-config sidecar.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! value read back is bitwise the value written.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::error::{Error, Result};
use crate::harness::experiments::{AblationRow, SweepRow};
use crate::harness::train::MetricsRecord;

/// Candidates of one scale read from (or written to) an embedding CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    pub scale: usize,
    pub ids: Vec<String>,
    pub classes: Vec<usize>,
    pub features: Tensor,
}

impl EmbeddingBatch {
    /// Rows numbered `0..N` as ids.
    pub fn numbered(scale: usize, classes: Vec<usize>, features: Tensor) -> Self {
        Self {
            scale,
            ids: (0..features.rows()).map(|i| i.to_string()).collect(),
            classes,
            features,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Contract(format!("csv: {other:?}")),
    }
}

/// Writes `id,scale,class,dim_0..dim_{C-1}`; `C` is the widest scale and
/// narrower scales write shorter rows.
pub fn write_embeddings_csv<W: Write>(out: W, batches: &[EmbeddingBatch]) -> Result<()> {
    let width = batches.iter().map(|b| b.features.cols()).max().unwrap_or(0);
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
    let mut header = vec!["id".to_string(), "scale".into(), "class".into()];
    header.extend((0..width).map(|j| format!("dim_{j}")));
    w.write_record(&header).map_err(csv_err)?;
    for b in batches {
        for i in 0..b.len() {
            let mut rec = vec![b.ids[i].clone(), b.scale.to_string(), b.classes[i].to_string()];
            rec.extend(b.features.row(i).iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads an embedding CSV; batches come back ordered by scale with row
/// order preserved inside each scale. `path` only labels errors.
pub fn read_embeddings<R: Read>(input: R, path: &Path) -> Result<Vec<EmbeddingBatch>> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input);
    let mut records = reader.records();
    let header = match records.next() {
        None => return Err(parse_err(1, "missing header".into())),
        Some(r) => r.map_err(|e| parse_err(1, e.to_string()))?,
    };
    if header.len() < 4 || &header[0] != "id" || &header[1] != "scale" || &header[2] != "class" {
        return Err(parse_err(1, "header must start with id,scale,class,dim_0".into()));
    }
    for (j, name) in header.iter().skip(3).enumerate() {
        if name != format!("dim_{j}") {
            return Err(parse_err(1, format!("expected column dim_{j}, found '{name}'")));
        }
    }
    let max_width = header.len() - 3;

    struct Acc {
        ids: Vec<String>,
        classes: Vec<usize>,
        data: Vec<f64>,
        width: usize,
    }
    let mut groups: BTreeMap<usize, Acc> = BTreeMap::new();
    for rec in records {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() < 4 {
            return Err(parse_err(line, format!("expected at least 4 fields, found {}", rec.len())));
        }
        let scale: usize = rec[1]
            .trim()
            .parse()
            .map_err(|_| parse_err(line, format!("scale '{}' is not a non-negative integer", &rec[1])))?;
        let class: usize = rec[2]
            .trim()
            .parse()
            .map_err(|_| parse_err(line, format!("class '{}' is not a non-negative integer", &rec[2])))?;
        let width = rec.len() - 3;
        if width > max_width {
            return Err(parse_err(line, format!("{width} features but the header names {max_width}")));
        }
        let acc = groups.entry(scale).or_insert_with(|| Acc {
            ids: Vec::new(),
            classes: Vec::new(),
            data: Vec::new(),
            width,
        });
        if acc.width != width {
            return Err(Error::Width {
                scale,
                expected: acc.width,
                found: width,
                line,
            });
        }
        for (j, field) in rec.iter().skip(3).enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(line, format!("dim_{j} value '{field}' is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("dim_{j} value '{field}' is not finite")));
            }
            acc.data.push(v);
        }
        acc.ids.push(rec[0].to_string());
        acc.classes.push(class);
    }
    groups
        .into_iter()
        .map(|(scale, acc)| {
            let n = acc.ids.len();
            Ok(EmbeddingBatch {
                scale,
                ids: acc.ids,
                classes: acc.classes,
                features: Tensor::matrix(n, acc.width, acc.data)?,
            })
        })
        .collect()
}

pub fn parse_embeddings(path: &Path) -> Result<Vec<EmbeddingBatch>> {
    read_embeddings(File::open(path)?, path)
}

pub const METRICS_HEADER: [&str; 11] = [
    "epoch",
    "cls",
    "conf",
    "reg",
    "con",
    "dom",
    "total",
    "probe_obj",
    "probe_cand",
    "silhouette",
    "agreement",
];

pub fn write_metrics_csv<W: Write>(out: W, records: &[MetricsRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_HEADER).map_err(csv_err)?;
    for r in records {
        let l = r.losses;
        w.write_record([
            r.epoch.to_string(),
            l.cls.to_string(),
            l.conf.to_string(),
            l.reg.to_string(),
            l.con.to_string(),
            l.dom.to_string(),
            l.total.to_string(),
            r.probe_obj.to_string(),
            r.probe_cand.to_string(),
            r.silhouette.to_string(),
            r.agreement.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_sweep_csv<W: Write>(out: W, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["k", "agreement", "probe_obj", "probe_cand", "silhouette", "class_accuracy", "eval_metric"])
        .map_err(csv_err)?;
    for r in rows {
        let s = r.summary;
        w.write_record([
            r.k.to_string(),
            s.agreement.to_string(),
            s.probe_obj.to_string(),
            s.probe_cand.to_string(),
            s.silhouette.to_string(),
            s.class_accuracy.to_string(),
            s.eval_metric().to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_ablation_csv<W: Write>(out: W, rows: &[AblationRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["variant", "eval_metric", "class_accuracy", "silhouette", "probe_obj", "agreement"])
        .map_err(csv_err)?;
    for r in rows {
        let s = r.summary;
        w.write_record([
            r.variant.name().to_string(),
            r.median_metric.to_string(),
            s.class_accuracy.to_string(),
            s.silhouette.to_string(),
            s.probe_obj.to_string(),
            s.agreement.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// One exported embedding for external projection tools.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub id: String,
    pub scale: usize,
    pub class: usize,
    pub pseudo_domain: usize,
    pub vector: Vec<f64>,
}

pub fn write_embeddings_json<W: Write>(out: W, records: &[EmbeddingRecord]) -> Result<()> {
    let mut w = BufWriter::new(out);
    serde_json::to_writer_pretty(&mut w, records)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Path of the sidecar that records the resolved config of `output`.
pub fn sidecar_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".config.json");
    output.with_file_name(name)
}

pub fn write_sidecar<T: Serialize>(output: &Path, config: &T) -> Result<PathBuf> {
    let path = sidecar_path(output);
    let mut text = serde_json::to_string_pretty(config)?;
    text.push('\n');
    std::fs::write(&path, text)?;
    Ok(path)
}

/// Creates `path` and writes it through `f`, then the sidecar next to it.
pub fn write_with_sidecar<T: Serialize>(
    path: &Path,
    config: &T,
    f: impl FnOnce(&mut BufWriter<File>) -> Result<()>,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    f(&mut w)?;
    w.flush()?;
    write_sidecar(path, config)?;
    Ok(())
}
