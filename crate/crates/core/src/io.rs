//! Line-oriented file formats for skeleton sequences, frame features and manifests.
//!
//! Skeleton sequence (`.skel`): the first line is a JSON header object
//!
//! ```text
//! {"subject_id":"S01","clip_id":"S01_c0","label":"Normal","fps":60.0,"channel_table":"skel46"}
//! ```
//!
//! followed by one `frame_index,a1,...,a46` line per frame. Angles are written
//! with the shortest decimal text that round-trips the `f64` exactly, which
//! makes that formatting canonical.
//!
//! Feature file (`.feat`): a `T D` header line followed by `T` lines of `D`
//! space-separated values, same number formatting.
//!
//! Manifest: one JSON object per line with `clip_id`, `subject_id`, `label`,
//! `source` (`GAVD`, `DCM` or `SYNTH`) and `path`.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{
    ChannelTable, FeatureSequence, Manifest, ManifestRecord, SkelFrame, SkelSequence, Taxonomy, TypeError, SKEL_DIM,
};

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("line {line}: expected {SKEL_DIM} angles, found {found}")]
    WrongDimension { line: usize, found: usize },
    #[error("sequence contains no frames")]
    EmptySequence,
    #[error("sequence needs at least 2 frames, found {0}")]
    TooFewFrames(usize),
    #[error("header declares channel table {found:?} but {expected:?} was supplied")]
    ChannelTableMismatch { expected: String, found: String },
    #[error("label {0:?} is not in the taxonomy")]
    UnknownLabel(String),
    #[error("duplicate clip id {0:?}")]
    DuplicateClip(String),
    #[error("feature payload does not match header: {0}")]
    HeaderMismatch(String),
    #[error("non-finite feature value at row {row}, column {col}")]
    NonFiniteValue { row: usize, col: usize },
    #[error(transparent)]
    Invalid(#[from] TypeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SequenceHeader {
    subject_id: String,
    clip_id: String,
    label: String,
    fps: f64,
    channel_table: String,
}

/// Reads a skeleton sequence and checks every invariant against `table` and `taxonomy`.
pub fn parse_skeleton_sequence<R: BufRead>(
    reader: R,
    table: &ChannelTable,
    taxonomy: &Taxonomy,
) -> Result<SkelSequence, ParseError> {
    let mut lines = reader.lines();
    let header_line = match lines.next() {
        Some(l) => l?,
        None => return Err(ParseError::EmptySequence),
    };
    let header: SequenceHeader = serde_json::from_str(header_line.trim()).map_err(|e| ParseError::MalformedRecord {
        line: 1,
        reason: format!("bad header: {e}"),
    })?;
    if header.channel_table != table.name() {
        return Err(ParseError::ChannelTableMismatch {
            expected: table.name().to_string(),
            found: header.channel_table,
        });
    }
    if !taxonomy.accepts_label(&header.label) {
        return Err(ParseError::UnknownLabel(header.label));
    }

    let mut frames = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let lineno = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim().split(',').collect();
        let bad = |why: String| ParseError::MalformedRecord { line: lineno, reason: why };
        if fields.len() < 2 {
            return Err(bad(format!("expected frame_index followed by angles, got {} field(s)", fields.len())));
        }
        if fields.len() != SKEL_DIM + 1 {
            return Err(ParseError::WrongDimension {
                line: lineno,
                found: fields.len() - 1,
            });
        }
        let index: u64 = fields[0]
            .parse()
            .map_err(|_| bad(format!("frame index {:?} is not a non-negative integer", fields[0])))?;
        let mut angles = [0.0; SKEL_DIM];
        for (slot, text) in angles.iter_mut().zip(&fields[1..]) {
            let v: f64 = text.parse().map_err(|_| bad(format!("angle {text:?} is not numeric")))?;
            if !v.is_finite() {
                return Err(bad(format!("angle {text:?} is not finite")));
            }
            *slot = v;
        }
        frames.push(SkelFrame::new(index, angles, table)?);
    }
    match frames.len() {
        0 => return Err(ParseError::EmptySequence),
        1 => return Err(ParseError::TooFewFrames(1)),
        _ => {}
    }
    Ok(SkelSequence::new(
        header.subject_id,
        header.clip_id,
        header.label,
        header.fps,
        header.channel_table,
        frames,
    )?)
}

/// Writes the canonical text form of a sequence.
pub fn write_skeleton_sequence<W: Write>(seq: &SkelSequence, mut out: W) -> std::io::Result<()> {
    let header = SequenceHeader {
        subject_id: seq.subject_id.clone(),
        clip_id: seq.clip_id.clone(),
        label: seq.label.clone(),
        fps: seq.fps,
        channel_table: seq.channel_table.clone(),
    };
    writeln!(out, "{}", serde_json::to_string(&header).expect("header serializes"))?;
    let mut line = String::new();
    for f in seq.frames() {
        line.clear();
        line.push_str(&f.index.to_string());
        for a in &f.angles {
            line.push(',');
            line.push_str(&a.to_string());
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn skeleton_sequence_to_string(seq: &SkelSequence) -> String {
    let mut buf = Vec::new();
    write_skeleton_sequence(seq, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("utf-8")
}

/// Reads a feature matrix. The clip id is not part of the file and is supplied by the caller.
pub fn load_feature_sequence<R: BufRead>(reader: R, clip_id: &str) -> Result<FeatureSequence, ParseError> {
    let mut lines = reader.lines();
    let header = match lines.next() {
        Some(l) => l?,
        None => return Err(ParseError::HeaderMismatch("missing `T D` header".into())),
    };
    let dims: Vec<&str> = header.split_whitespace().collect();
    let (rows, dim) = match dims.as_slice() {
        [t, d] => (
            t.parse::<usize>()
                .map_err(|_| ParseError::HeaderMismatch(format!("bad T {t:?}")))?,
            d.parse::<usize>()
                .map_err(|_| ParseError::HeaderMismatch(format!("bad D {d:?}")))?,
        ),
        _ => return Err(ParseError::HeaderMismatch(format!("expected `T D`, got {header:?}"))),
    };
    let mut values = Vec::with_capacity(rows * dim);
    let mut seen_rows = 0;
    for (r, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if seen_rows == rows {
            return Err(ParseError::HeaderMismatch(format!("more than {rows} rows")));
        }
        let mut count = 0;
        for (c, text) in line.split_whitespace().enumerate() {
            let v: f64 = text.parse().map_err(|_| ParseError::MalformedRecord {
                line: r + 2,
                reason: format!("value {text:?} is not numeric"),
            })?;
            if !v.is_finite() {
                return Err(ParseError::NonFiniteValue { row: seen_rows, col: c });
            }
            values.push(v);
            count += 1;
        }
        if count != dim {
            return Err(ParseError::HeaderMismatch(format!(
                "row {seen_rows} has {count} values, header says {dim}"
            )));
        }
        seen_rows += 1;
    }
    if seen_rows != rows {
        return Err(ParseError::HeaderMismatch(format!("expected {rows} rows, found {seen_rows}")));
    }
    Ok(FeatureSequence::new(clip_id, rows, dim, values).expect("validated above"))
}

pub fn store_feature_sequence(features: &FeatureSequence) -> Vec<u8> {
    let mut out = format!("{} {}\n", features.rows(), features.dim());
    for t in 0..features.rows() {
        let row: Vec<String> = features.row(t).iter().map(|v| v.to_string()).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out.into_bytes()
}

pub fn read_manifest<R: BufRead>(reader: R, taxonomy: &Taxonomy) -> Result<Manifest, ParseError> {
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord = serde_json::from_str(&line).map_err(|e| ParseError::MalformedRecord {
            line: i + 1,
            reason: e.to_string(),
        })?;
        records.push(rec);
    }
    Manifest::new(records, taxonomy)
}

pub fn write_manifest<W: Write>(manifest: &Manifest, mut out: W) -> std::io::Result<()> {
    for r in manifest.records() {
        writeln!(out, "{}", serde_json::to_string(r).expect("record serializes"))?;
    }
    Ok(())
}
