//! Flat-embedding CSV: header `f0,...,f{d-1},label`, one sample per row,
//! `n_patches = 1`. A file whose rows are all labeled is read as a source
//! set with the observed labels as its known classes; anything else is read
//! as a target set.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use super::{Dataset, Domain, Sample, UNLABELED};
use crate::error::{Error, Result};

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::IoFailure(io),
        csv::ErrorKind::UnequalLengths { .. } => {
            Error::ShapeMismatch("rows have differing column counts".into())
        }
        other => Error::MalformedHeader(format!("{other:?}")),
    }
}

pub(crate) fn read_csv<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let header = rdr.headers().map_err(csv_error)?.clone();
    let n_cols = header.len();
    if n_cols < 2 || header.get(n_cols - 1) != Some("label") {
        return Err(Error::MalformedHeader(
            "expected header f0,...,f{d-1},label".into(),
        ));
    }
    for (i, name) in header.iter().take(n_cols - 1).enumerate() {
        if name != format!("f{i}") {
            return Err(Error::MalformedHeader(format!(
                "column {i} is named {name:?}, expected \"f{i}\""
            )));
        }
    }
    let patch_dim = n_cols - 1;
    let mut rows = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record.map_err(csv_error)?;
        if record.len() != n_cols {
            return Err(Error::ShapeMismatch(format!(
                "row {r} has {} columns, expected {n_cols}",
                record.len()
            )));
        }
        let mut features = Vec::with_capacity(patch_dim);
        for field in record.iter().take(patch_dim) {
            let v: f32 = field
                .trim()
                .parse()
                .map_err(|e| Error::MalformedHeader(format!("row {r}: {field:?}: {e}")))?;
            features.push(v);
        }
        let label: i32 = record[patch_dim]
            .trim()
            .parse()
            .map_err(|e| Error::MalformedHeader(format!("row {r} label: {e}")))?;
        rows.push((features, label));
    }
    if rows.is_empty() {
        return Err(Error::MalformedHeader("CSV contains no rows".into()));
    }
    let all_labeled = rows.iter().all(|(_, l)| *l != UNLABELED);
    let (domain, known): (Domain, BTreeSet<i32>) = if all_labeled {
        (Domain::Source, rows.iter().map(|(_, l)| *l).collect())
    } else {
        (Domain::Target, BTreeSet::new())
    };
    let samples = rows
        .into_iter()
        .map(|(f, l)| Sample::new(f, l, domain))
        .collect();
    Dataset::new(samples, 1, patch_dim, known, BTreeMap::new())
}

pub(crate) fn write_csv<W: Write>(ds: &Dataset, writer: W) -> Result<()> {
    ds.validate()?;
    if ds.n_patches != 1 {
        return Err(Error::ShapeMismatch(format!(
            "CSV holds flat embeddings only, dataset has {} patches",
            ds.n_patches
        )));
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = (0..ds.patch_dim).map(|i| format!("f{i}")).collect();
    header.push("label".into());
    w.write_record(&header).map_err(csv_error)?;
    for s in &ds.samples {
        let mut row: Vec<String> = s.patches.iter().map(f32::to_string).collect();
        row.push(s.label.to_string());
        w.write_record(&row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}
