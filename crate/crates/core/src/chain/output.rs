//! Chain histories as CSV, one row per step, floats with 17 significant digits.

use std::io::{Read, Write};

use super::ChainRecord;
use crate::error::{Error, Result};

fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

/// Columns `step, level, Q, log_like, accepted, beta`, plus `Q_coarse, Y`
/// for two-level records.
pub fn write_chain_csv<W: Write>(rec: &ChainRecord, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let two = rec.y.is_some();
    let mut header = vec!["step", "level", "Q", "log_like", "accepted", "beta"];
    if two {
        header.extend(["Q_coarse", "Y"]);
    }
    w.write_record(&header)?;
    for i in 0..rec.len() {
        let mut row =
            vec![(i + 1).to_string(), rec.level.to_string(), fmt(rec.q[i]), fmt(rec.log_like[i]), (rec.accepted[i] as u8).to_string(), fmt(rec.beta)];
        if let (Some(c), Some(y)) = (&rec.coarse_q, &rec.y) {
            row.push(fmt(c[i]));
            row.push(fmt(y[i]));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads one named numeric column of a CSV file with a header row.
pub fn read_series_csv<R: Read>(input: R, column: &str) -> Result<Vec<f64>> {
    let mut r = csv::Reader::from_reader(input);
    let idx = r
        .headers()?
        .iter()
        .position(|h| h.trim() == column)
        .ok_or_else(|| Error::Parse(format!("no column named {column:?}")))?;
    r.records()
        .enumerate()
        .map(|(line, rec)| {
            let rec = rec?;
            let field = rec.get(idx).ok_or_else(|| Error::Parse(format!("row {} has no column {idx}", line + 1)))?;
            field.trim().parse::<f64>().map_err(|e| Error::Parse(format!("row {}: {e}", line + 1)))
        })
        .collect()
}
