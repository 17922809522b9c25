//! RTTM diarization files and significant-digit rounding for reports.

use std::collections::BTreeMap;
use std::fmt::Write;

use crate::error::{Error, Result};
use crate::pipeline::DiarSegment;

/// One `SPEAKER` line: recording id plus the segment it describes.
#[derive(Debug, Clone, PartialEq)]
pub struct RttmLine {
    pub recording: String,
    pub segment: DiarSegment,
}

const RTTM_FIELDS: usize = 10;

/// Parses `SPEAKER <rec> <chan> <onset> <duration> <NA> <NA> <speaker> <NA> <NA>`
/// lines. Blank lines and `;;` comments are skipped. `source` names the
/// input in error messages.
pub fn parse_rttm(text: &str, source: &str) -> Result<Vec<RttmLine>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with(";;") {
            continue;
        }
        let err = |msg: String| Error::Parse { path: source.to_string(), line: i + 1, msg };
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != RTTM_FIELDS {
            return Err(err(format!("expected {RTTM_FIELDS} fields, found {}", f.len())));
        }
        if f[0] != "SPEAKER" {
            return Err(err(format!("unsupported record type {:?}", f[0])));
        }
        let num = |s: &str, what: &str| -> Result<f64> {
            match s.parse::<f64>() {
                Ok(v) if v.is_finite() && v >= 0.0 => Ok(v),
                _ => Err(err(format!("bad {what} {s:?}"))),
            }
        };
        let start = num(f[3], "onset")?;
        let dur = num(f[4], "duration")?;
        out.push(RttmLine {
            recording: f[1].to_string(),
            segment: DiarSegment { speaker: f[7].to_string(), start, end: start + dur },
        });
    }
    Ok(out)
}

/// Segments grouped by recording, in file order within each recording.
pub fn group_by_recording(lines: Vec<RttmLine>) -> BTreeMap<String, Vec<DiarSegment>> {
    let mut map: BTreeMap<String, Vec<DiarSegment>> = BTreeMap::new();
    for l in lines {
        map.entry(l.recording).or_default().push(l.segment);
    }
    map
}

/// RTTM text for one recording, times at 2 decimals.
pub fn emit_rttm(recording: &str, segments: &[DiarSegment]) -> String {
    let mut s = String::new();
    for seg in segments {
        writeln!(s, "SPEAKER {recording} 1 {:.2} {:.2} <NA> <NA> {} <NA> <NA>", seg.start, seg.end - seg.start, seg.speaker)
            .expect("writing to a string");
    }
    s
}

/// `x` rounded to six significant digits.
pub fn sig6(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.5e}").parse().expect("formatted float parses")
}
