//! Influence report CSV.
//!
//! Header `sample_id,score_base,is_elite,score_i,score_contrast,weight`.
//! Floats carry 9 significant digits; contrast columns are empty for
//! non-elite rows.

use std::io::{Read, Write};
use std::path::Path;

use super::influence::InfluenceRecord;
use crate::error::{Error, Result};

pub const HEADER: [&str; 6] = ["sample_id", "score_base", "is_elite", "score_i", "score_contrast", "weight"];

pub fn format_float(x: f64) -> String {
    format!("{x:.8e}")
}

fn parse_float(field: &str, line: u64) -> Result<f64> {
    let x: f64 = field
        .parse()
        .map_err(|_| Error::format("influence csv", format!("line {line}: bad number {field:?}")))?;
    if !x.is_finite() {
        return Err(Error::format("influence csv", format!("line {line}: non-finite value")));
    }
    Ok(x)
}

pub fn write_records<W: Write>(w: W, records: &[InfluenceRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(HEADER)?;
    for r in records {
        let opt = |x: Option<f64>| x.map(format_float).unwrap_or_default();
        out.write_record([
            r.sample_id.to_string(),
            format_float(r.score_base),
            r.is_elite.to_string(),
            opt(r.score_i),
            opt(r.score_contrast),
            format_float(r.weight),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_records<R: Read>(r: R) -> Result<Vec<InfluenceRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let header = rdr.headers()?.clone();
    if header.iter().ne(HEADER.iter().copied()) {
        return Err(Error::format("influence csv", "unexpected header"));
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != HEADER.len() {
            return Err(Error::format("influence csv", format!("line {line}: expected 6 fields")));
        }
        let sample_id = row[0]
            .parse()
            .map_err(|_| Error::format("influence csv", format!("line {line}: bad sample id")))?;
        let is_elite = match &row[2] {
            "true" => true,
            "false" => false,
            other => return Err(Error::format("influence csv", format!("line {line}: bad flag {other:?}"))),
        };
        let opt = |f: &str| if f.is_empty() { Ok(None) } else { parse_float(f, line).map(Some) };
        let score_i = opt(&row[3])?;
        let score_contrast = opt(&row[4])?;
        if is_elite != (score_i.is_some() && score_contrast.is_some()) || score_i.is_some() != score_contrast.is_some() {
            return Err(Error::format(
                "influence csv",
                format!("line {line}: contrast fields must be present exactly for elites"),
            ));
        }
        let weight = parse_float(&row[5], line)?;
        if weight < 0.0 {
            return Err(Error::format("influence csv", format!("line {line}: negative weight")));
        }
        out.push(InfluenceRecord {
            sample_id,
            score_base: parse_float(&row[1], line)?,
            is_elite,
            score_i,
            score_contrast,
            weight,
        });
    }
    Ok(out)
}

pub fn save(path: &Path, records: &[InfluenceRecord]) -> Result<()> {
    write_records(std::io::BufWriter::new(std::fs::File::create(path)?), records)
}

pub fn load(path: &Path) -> Result<Vec<InfluenceRecord>> {
    read_records(std::io::BufReader::new(std::fs::File::open(path)?))
}
