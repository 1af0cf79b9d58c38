use std::io::Write;

use crate::error::{Error, Result};

/// Element values of one level. Text form: a header `level dim nx [ny [nz]]`
/// followed by one value per line in element order, 17 significant digits.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldDump {
    pub level: usize,
    pub cells: Vec<usize>,
    pub values: Vec<f64>,
}

pub fn write_field<W: Write>(dump: &FieldDump, mut out: W) -> Result<()> {
    let n: usize = dump.cells.iter().product();
    if n != dump.values.len() {
        return Err(Error::DimensionMismatch { expected: n, got: dump.values.len() });
    }
    write!(out, "{} {}", dump.level, dump.cells.len())?;
    for c in &dump.cells {
        write!(out, " {c}")?;
    }
    writeln!(out)?;
    for v in &dump.values {
        writeln!(out, "{v:.16e}")?;
    }
    Ok(())
}

pub fn read_field(text: &str) -> Result<FieldDump> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Parse("empty field dump".into()))?;
    let nums = header
        .split_whitespace()
        .map(|t| t.parse::<usize>().map_err(|e| Error::Parse(format!("header token {t:?}: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    if nums.len() < 3 || nums[1] + 2 != nums.len() {
        return Err(Error::Parse(format!("bad header {header:?}")));
    }
    let cells = nums[2..].to_vec();
    let values = lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.trim().parse::<f64>().map_err(|e| Error::Parse(format!("value {l:?}: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    let n: usize = cells.iter().product();
    if values.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: values.len() });
    }
    Ok(FieldDump { level: nums[0], cells, values })
}
