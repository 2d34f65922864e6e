//! Run-record CSV persistence.
//!
//! Schema (pinned): `iter, loss_clean, loss_probe, lr, step_movement,
//! stability_slack`, then `gap.<layer>` and `upd.<layer>` per layer in
//! layer order, then `projmag.<layer>` (projected runs only). Floats use
//! the shortest round-trip representation, so a rerun with the same
//! config reproduces the file byte for byte.

use std::collections::BTreeMap;
use std::path::Path;

use crate::checkpoint::atomic_write_bytes;
use crate::error::{Error, Result};
use crate::optimizer::RunRecord;

/// Serializes records to CSV bytes. `layer_order` fixes the column order;
/// `projection_columns` adds the projmag block (empty cells on iterations
/// without a projection).
pub fn records_to_csv(
    records: &[RunRecord],
    layer_order: &[String],
    projection_columns: bool,
) -> Result<Vec<u8>> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = vec![
        "iter".into(),
        "loss_clean".into(),
        "loss_probe".into(),
        "lr".into(),
        "step_movement".into(),
        "stability_slack".into(),
    ];
    for name in layer_order {
        header.push(format!("gap.{name}"));
    }
    for name in layer_order {
        header.push(format!("upd.{name}"));
    }
    if projection_columns {
        for name in layer_order {
            header.push(format!("projmag.{name}"));
        }
    }
    writer
        .write_record(&header)
        .map_err(|e| Error::format(e.to_string()))?;

    for rec in records {
        let mut row: Vec<String> = vec![
            rec.iteration.to_string(),
            rec.loss_clean.to_string(),
            rec.loss_probe.to_string(),
            rec.lr_used.to_string(),
            rec.step_movement.to_string(),
            rec.stability_slack.to_string(),
        ];
        for name in layer_order {
            let gap = rec.per_layer_gap.get(name).ok_or_else(|| {
                Error::structure(format!("record {} missing gap for `{name}`", rec.iteration))
            })?;
            row.push(gap.to_string());
        }
        for name in layer_order {
            let upd = rec.per_layer_update_norm.get(name).ok_or_else(|| {
                Error::structure(format!("record {} missing upd for `{name}`", rec.iteration))
            })?;
            row.push(upd.to_string());
        }
        if projection_columns {
            for name in layer_order {
                match rec.projection_mag.as_ref().and_then(|m| m.get(name)) {
                    Some(mag) => row.push(mag.to_string()),
                    None => row.push(String::new()),
                }
            }
        }
        writer
            .write_record(&row)
            .map_err(|e| Error::format(e.to_string()))?;
    }
    writer
        .into_inner()
        .map_err(|e| Error::format(e.to_string()))
}

pub fn write_records_csv(
    path: &Path,
    records: &[RunRecord],
    layer_order: &[String],
    projection_columns: bool,
) -> Result<()> {
    atomic_write_bytes(path, &records_to_csv(records, layer_order, projection_columns)?)
}

/// Reads records back; the inverse of [`records_to_csv`].
pub fn read_records_csv(path: &Path) -> Result<Vec<RunRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::format(e.to_string()))?
        .clone();
    let fixed = [
        "iter",
        "loss_clean",
        "loss_probe",
        "lr",
        "step_movement",
        "stability_slack",
    ];
    if headers.len() < fixed.len()
        || headers.iter().take(fixed.len()).zip(fixed).any(|(a, b)| a != b)
    {
        return Err(Error::format("csv does not start with the record schema"));
    }
    let mut gap_cols = Vec::new();
    let mut upd_cols = Vec::new();
    let mut projmag_cols = Vec::new();
    for (i, h) in headers.iter().enumerate().skip(fixed.len()) {
        if let Some(name) = h.strip_prefix("gap.") {
            gap_cols.push((i, name.to_string()));
        } else if let Some(name) = h.strip_prefix("upd.") {
            upd_cols.push((i, name.to_string()));
        } else if let Some(name) = h.strip_prefix("projmag.") {
            projmag_cols.push((i, name.to_string()));
        } else {
            return Err(Error::format(format!("unexpected csv column `{h}`")));
        }
    }

    let parse = |field: &str, what: &str, line: usize| -> Result<f64> {
        field
            .parse()
            .map_err(|_| Error::format(format!("row {line}: bad {what} `{field}`")))
    };

    let mut out = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let line = row_idx + 2;
        let record = record.map_err(|e| Error::format(e.to_string()))?;
        let iteration: usize = record[0]
            .parse()
            .map_err(|_| Error::format(format!("row {line}: bad iter `{}`", &record[0])))?;
        let mut per_layer_gap = BTreeMap::new();
        for (col, name) in &gap_cols {
            per_layer_gap.insert(name.clone(), parse(&record[*col], "gap", line)?);
        }
        let mut per_layer_update_norm = BTreeMap::new();
        for (col, name) in &upd_cols {
            per_layer_update_norm.insert(name.clone(), parse(&record[*col], "upd", line)?);
        }
        let mut mags = BTreeMap::new();
        for (col, name) in &projmag_cols {
            if !record[*col].is_empty() {
                mags.insert(name.clone(), parse(&record[*col], "projmag", line)?);
            }
        }
        out.push(RunRecord {
            iteration,
            loss_clean: parse(&record[1], "loss_clean", line)?,
            loss_probe: parse(&record[2], "loss_probe", line)?,
            lr_used: parse(&record[3], "lr", line)?,
            step_movement: parse(&record[4], "step_movement", line)?,
            stability_slack: parse(&record[5], "stability_slack", line)?,
            per_layer_gap,
            per_layer_update_norm,
            projection_mag: if mags.is_empty() { None } else { Some(mags) },
        });
    }
    Ok(out)
}
