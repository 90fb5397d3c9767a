//! Dataset CSV: `client_id,split,label,f0,...,f{d-1}`, one row per sample.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::datagen::{Dataset, Split};
use crate::error::{Error, Result};
use crate::numkit::Matrix;

pub fn write_dataset_to<W: Write>(writer: W, ds: &Dataset) -> Result<()> {
    let mut w = csv::WriterBuilder::new().from_writer(writer);
    let mut header = vec!["client_id".to_string(), "split".into(), "label".into()];
    header.extend((0..ds.feature_dim()).map(|d| format!("f{d}")));
    w.write_record(&header)?;
    let mut row: Vec<String> = Vec::with_capacity(header.len());
    for i in 0..ds.len() {
        row.clear();
        row.push(ds.client_ids()[i].to_string());
        row.push(ds.splits()[i].to_string());
        row.push(ds.labels()[i].to_string());
        row.extend(ds.features().row(i).iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<dataset writer>", e))?;
    Ok(())
}

pub fn write_dataset(path: impl AsRef<Path>, ds: &Dataset) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_dataset_to(BufWriter::new(file), ds)
}

fn parse_err(line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Parses a dataset CSV; labels must be below `num_classes`.
pub fn read_dataset_from<R: Read>(reader: R, num_classes: usize) -> Result<Dataset> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut records = r.records();

    let header = match records.next() {
        Some(h) => h.map_err(|e| parse_err(1, e.to_string()))?,
        None => return Err(parse_err(1, "empty file: missing header")),
    };
    if header.len() < 4
        || &header[0] != "client_id"
        || &header[1] != "split"
        || &header[2] != "label"
    {
        return Err(parse_err(
            1,
            "header must be `client_id,split,label,f0,...`",
        ));
    }
    let dim = header.len() - 3;
    for (d, name) in header.iter().skip(3).enumerate() {
        if name != format!("f{d}") {
            return Err(parse_err(
                1,
                format!("expected column `f{d}`, found `{name}`"),
            ));
        }
    }

    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut clients = Vec::new();
    let mut splits = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != dim + 3 {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", dim + 3, rec.len()),
            ));
        }
        let client: usize = rec[0]
            .parse()
            .map_err(|_| parse_err(line, format!("bad client_id `{}`", &rec[0])))?;
        let split: Split = rec[1]
            .parse()
            .map_err(|_| parse_err(line, format!("bad split `{}`", &rec[1])))?;
        let label: usize = rec[2]
            .parse()
            .map_err(|_| parse_err(line, format!("bad label `{}`", &rec[2])))?;
        if label >= num_classes {
            return Err(parse_err(
                line,
                format!("label {label} out of range for {num_classes} classes"),
            ));
        }
        for field in rec.iter().skip(3) {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(line, format!("bad feature value `{field}`")))?;
            if !v.is_finite() {
                return Err(parse_err(
                    line,
                    format!("non-finite feature value `{field}`"),
                ));
            }
            values.push(v);
        }
        clients.push(client);
        splits.push(split);
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(parse_err(2, "dataset has no rows"));
    }
    let features = Matrix::new(labels.len(), dim, values)?;
    Dataset::new(num_classes, features, labels, clients, splits)
}

pub fn read_dataset(path: impl AsRef<Path>, num_classes: usize) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset_from(BufReader::new(file), num_classes)
}
