use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::personalize::{CheckpointHistory, Choice, SelectionResult};

pub const CHECKPOINT_CSV_HEADER: [&str; 3] = ["client_id", "epoch", "val_accuracy"];
pub const SELECTION_CSV_HEADER: [&str; 3] = ["client_id", "selected_epoch", "selected_accuracy"];

fn check_header(found: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    if found.iter().ne(expected.iter().copied()) {
        return Err(Error::Parse {
            line: 1,
            message: format!("header must be `{}`", expected.join(",")),
        });
    }
    Ok(())
}

fn parse_row(rec: &csv::StringRecord) -> Result<(usize, usize, f64)> {
    let line = rec.position().map_or(0, |p| p.line());
    let bad = || Error::Parse {
        line,
        message: format!(
            "malformed row `{}`",
            rec.iter().collect::<Vec<_>>().join(",")
        ),
    };
    if rec.len() != 3 {
        return Err(bad());
    }
    Ok((
        rec[0].parse().map_err(|_| bad())?,
        rec[1].parse().map_err(|_| bad())?,
        rec[2].parse().map_err(|_| bad())?,
    ))
}

/// `client_id,epoch,val_accuracy` for every checkpoint of every client.
pub fn write_checkpoint_log<W: Write>(writer: W, histories: &[CheckpointHistory]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CHECKPOINT_CSV_HEADER)?;
    for h in histories {
        for c in h.entries() {
            w.write_record([
                h.client_id.to_string(),
                c.epoch.to_string(),
                c.val_accuracy.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<checkpoint log>", e))?;
    Ok(())
}

/// Reads a checkpoint log back into per-client histories (without snapshots).
pub fn read_checkpoint_log<R: Read>(reader: R) -> Result<Vec<CheckpointHistory>> {
    let mut rdr = csv::Reader::from_reader(reader);
    check_header(rdr.headers()?, &CHECKPOINT_CSV_HEADER)?;
    let mut logs: BTreeMap<usize, Vec<(usize, f64)>> = BTreeMap::new();
    for rec in rdr.records() {
        let (client, epoch, acc) = parse_row(&rec?)?;
        logs.entry(client).or_default().push((epoch, acc));
    }
    logs.into_iter()
        .map(|(client, log)| CheckpointHistory::from_log(client, &log))
        .collect()
}

/// `client_id,selected_epoch,selected_accuracy`, one row per client.
pub fn write_selection<W: Write>(writer: W, selection: &SelectionResult) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(SELECTION_CSV_HEADER)?;
    for c in &selection.choices {
        w.write_record([
            c.client_id.to_string(),
            c.epoch.to_string(),
            c.accuracy.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<selection csv>", e))?;
    Ok(())
}

pub fn read_selection<R: Read>(reader: R) -> Result<Vec<Choice>> {
    let mut rdr = csv::Reader::from_reader(reader);
    check_header(rdr.headers()?, &SELECTION_CSV_HEADER)?;
    rdr.records()
        .map(|rec| {
            let (client_id, epoch, accuracy) = parse_row(&rec?)?;
            Ok(Choice {
                client_id,
                epoch,
                accuracy,
            })
        })
        .collect()
}
