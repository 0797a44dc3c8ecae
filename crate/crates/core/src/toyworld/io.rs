//! JSON-lines dataset files, optionally gzip-compressed (`.jsonl.gz`).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use super::{Sample, MAX_SIZE};
use crate::error::{Error, Result};

fn is_gzip(path: &Path) -> bool {
    path.to_string_lossy().ends_with(".gz")
}

/// Structural checks a file-borne sample must pass before the pipeline uses it.
pub fn validate_sample(s: &Sample) -> Result<()> {
    let bad = |msg: String| Err(Error::format("sample", format!("id {}: {msg}", s.id)));
    if s.scene.is_empty() {
        return bad("empty scene".into());
    }
    let keys = s.scene.iter().filter(|o| o.is_key).count();
    if keys != 1 {
        return bad(format!("{keys} key objects"));
    }
    for o in &s.scene {
        if !(o.size > 0.0 && o.size <= MAX_SIZE) {
            return bad(format!("object size {} outside (0, {MAX_SIZE}]", o.size));
        }
        if !o.position.iter().all(|c| (0.0..=1.0).contains(c)) {
            return bad("object position outside the unit square".into());
        }
    }
    if s.trajectory.len() < 3 {
        return bad("trajectory shorter than 3 waypoints".into());
    }
    if !s.trajectory.waypoints().iter().flatten().all(|c| (-1.0..=1.0).contains(c)) {
        return bad("waypoint outside [-1, 1]".into());
    }
    Ok(())
}

/// Parses and validates one JSON line.
pub fn parse_line(line: &str) -> Result<Sample> {
    let s: Sample = serde_json::from_str(line)?;
    validate_sample(&s)?;
    Ok(s)
}

pub fn to_line(sample: &Sample, include_quality: bool) -> Result<String> {
    if include_quality {
        Ok(serde_json::to_string(sample)?)
    } else {
        Ok(serde_json::to_string(&sample.public())?)
    }
}

/// Reads samples from any line source. Blank lines are skipped; every sample
/// must share the first sample's horizon and ids must be unique.
pub fn read_from<R: BufRead>(reader: R) -> Result<Vec<Sample>> {
    let mut out: Vec<Sample> = Vec::new();
    let mut ids = std::collections::HashSet::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s = parse_line(&line).map_err(|e| Error::format("dataset", format!("line {}: {e}", lineno + 1)))?;
        if let Some(first) = out.first() {
            if first.trajectory.len() != s.trajectory.len() {
                return Err(Error::format("dataset", format!("line {}: horizon differs", lineno + 1)));
            }
        }
        if !ids.insert(s.id) {
            return Err(Error::format("dataset", format!("duplicate id {}", s.id)));
        }
        out.push(s);
    }
    Ok(out)
}

pub fn read_samples(path: &Path) -> Result<Vec<Sample>> {
    let file = File::open(path)?;
    if is_gzip(path) {
        read_from(BufReader::new(GzDecoder::new(file)))
    } else {
        read_from(BufReader::new(file))
    }
}

pub fn write_to<W: Write>(mut w: W, samples: &[Sample], include_quality: bool) -> Result<()> {
    for s in samples {
        writeln!(w, "{}", to_line(s, include_quality)?)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_samples(path: &Path, samples: &[Sample], include_quality: bool) -> Result<()> {
    let file = File::create(path)?;
    if is_gzip(path) {
        // Fixed header fields (no mtime/name) keep the bytes reproducible.
        let enc = GzEncoder::new(BufWriter::new(file), Compression::default());
        let mut enc = enc;
        write_to(&mut enc, samples, include_quality)?;
        enc.finish()?.flush()?;
        Ok(())
    } else {
        write_to(BufWriter::new(file), samples, include_quality)
    }
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    File::open(path)?.read_to_end(&mut buf)?;
    Ok(buf)
}
