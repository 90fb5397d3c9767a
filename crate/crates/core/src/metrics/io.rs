use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{FairnessReport, GroupFairness, GroupedPredictions, Prediction};

pub const FAIRNESS_CSV_HEADER: [&str; 4] = ["group", "accuracy", "gap", "worst"];
pub const PREDICTIONS_CSV_HEADER: [&str; 3] = ["group", "label", "predicted"];

fn check_header(found: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    if found.iter().ne(expected.iter().copied()) {
        return Err(Error::Parse {
            line: 1,
            message: format!("header must be `{}`", expected.join(",")),
        });
    }
    Ok(())
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, name: &str) -> Result<T> {
    rec.get(i)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Parse {
            line: rec.position().map_or(0, |p| p.line()),
            message: format!("bad {name} `{}`", rec.get(i).unwrap_or("")),
        })
}

/// `group,accuracy,gap,worst`, one row per group.
pub fn write_fairness_csv<W: Write>(writer: W, report: &FairnessReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(FAIRNESS_CSV_HEADER)?;
    for g in &report.groups {
        w.write_record([
            g.group.to_string(),
            g.accuracy.to_string(),
            g.gap.to_string(),
            g.worst.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<fairness csv>", e))?;
    Ok(())
}

/// Per-group rows of a fairness CSV as `(group, accuracy, gap, worst)`.
pub fn read_fairness_csv<R: Read>(reader: R) -> Result<Vec<(usize, f64, f64, f64)>> {
    let mut rdr = csv::Reader::from_reader(reader);
    check_header(rdr.headers()?, &FAIRNESS_CSV_HEADER)?;
    rdr.records()
        .map(|rec| {
            let rec = rec?;
            Ok((
                field(&rec, 0, "group")?,
                field(&rec, 1, "accuracy")?,
                field(&rec, 2, "gap")?,
                field(&rec, 3, "worst")?,
            ))
        })
        .collect()
}

/// Model-level aggregates of a [`FairnessReport`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FairnessSummary {
    pub num_groups: usize,
    pub accuracy_variance: f64,
    pub mean_gap: f64,
    pub mean_worst: f64,
    pub min_accuracy: f64,
    pub max_accuracy: f64,
    pub groups: Vec<GroupFairness>,
}

impl From<&FairnessReport> for FairnessSummary {
    fn from(r: &FairnessReport) -> Self {
        let accs = r.accuracies();
        Self {
            num_groups: r.groups.len(),
            accuracy_variance: r.variance,
            mean_gap: r.mean_gap,
            mean_worst: r.mean_worst,
            min_accuracy: accs.iter().copied().fold(f64::INFINITY, f64::min),
            max_accuracy: accs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            groups: r.groups.clone(),
        }
    }
}

pub fn write_fairness_json<W: Write>(writer: W, report: &FairnessReport) -> Result<()> {
    serde_json::to_writer_pretty(writer, &FairnessSummary::from(report))?;
    Ok(())
}

/// `group,label,predicted`, one row per sample.
pub fn write_predictions<W: Write>(writer: W, preds: &GroupedPredictions) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(PREDICTIONS_CSV_HEADER)?;
    for s in preds.samples() {
        w.write_record([
            s.group.to_string(),
            s.truth.to_string(),
            s.predicted.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<predictions csv>", e))?;
    Ok(())
}

/// Reads a prediction log; the group count is the largest group id plus one.
pub fn read_predictions<R: Read>(reader: R) -> Result<GroupedPredictions> {
    let mut rdr = csv::Reader::from_reader(reader);
    check_header(rdr.headers()?, &PREDICTIONS_CSV_HEADER)?;
    let mut samples = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        samples.push(Prediction {
            group: field(&rec, 0, "group")?,
            truth: field(&rec, 1, "label")?,
            predicted: field(&rec, 2, "predicted")?,
        });
    }
    if samples.is_empty() {
        return Err(Error::Parse {
            line: 2,
            message: "prediction log has no rows".into(),
        });
    }
    let groups = samples.iter().map(|s| s.group + 1).max().unwrap_or(0);
    GroupedPredictions::new(groups, samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::gap_worst_report;

    fn sample() -> GroupedPredictions {
        let mut p = GroupedPredictions::default();
        p.push_group(0, &[0, 1, 2, 1], &[0, 1, 1, 1]);
        p.push_group(1, &[2, 2, 0], &[2, 0, 0]);
        p
    }

    #[test]
    fn fairness_csv_round_trip() {
        let report = gap_worst_report(&sample()).unwrap();
        let mut buf = Vec::new();
        write_fairness_csv(&mut buf, &report).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("group,accuracy,gap,worst\n"));
        let rows = read_fairness_csv(buf.as_slice()).unwrap();
        for (row, g) in rows.iter().zip(&report.groups) {
            assert_eq!(*row, (g.group, g.accuracy, g.gap, g.worst));
        }
    }

    #[test]
    fn json_summary_has_aggregates() {
        let report = gap_worst_report(&sample()).unwrap();
        let mut buf = Vec::new();
        write_fairness_json(&mut buf, &report).unwrap();
        let back: FairnessSummary = serde_json::from_slice(&buf).unwrap();
        assert_eq!(back.num_groups, 2);
        assert_eq!(back.mean_gap, report.mean_gap);
        assert_eq!(back.accuracy_variance, report.variance);
    }

    #[test]
    fn predictions_round_trip() {
        let p = sample();
        let mut buf = Vec::new();
        write_predictions(&mut buf, &p).unwrap();
        assert_eq!(read_predictions(buf.as_slice()).unwrap(), p);
    }

    #[test]
    fn bad_prediction_rows_name_line() {
        let text = "group,label,predicted\n0,1,1\n0,x,1\n";
        match read_predictions(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(read_predictions("group,label,predicted\n".as_bytes()).is_err());
        assert!(read_predictions("g,l,p\n0,0,0\n".as_bytes()).is_err());
    }
}
