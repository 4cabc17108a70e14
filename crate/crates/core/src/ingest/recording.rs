//! SKELREC-JSONL v1: a line-oriented recording format for tracked skeletons.
//!
//! Line 1 is a header object, every further line one frame given as an array
//! of `[x, y, z, c]` per joint with confidence `c` in {0, 1}.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{ClassTable, JointSetId, SkeletonFrame, SkeletonSequence};

pub const RECORDING_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordingHeader {
    pub version: u32,
    pub joint_set: JointSetId,
    pub fps: f64,
    pub label: Option<String>,
    pub subject: Option<String>,
}

impl RecordingHeader {
    pub fn subject_id(&self) -> Result<Option<u32>> {
        self.subject
            .as_deref()
            .map(|s| {
                let digits = s.trim_start_matches(|c: char| c.is_ascii_alphabetic());
                digits
                    .parse()
                    .map_err(|_| Error::parse(1, format!("subject `{s}` is not an integer id")))
            })
            .transpose()
    }
}

/// Incremental reader: the header is parsed eagerly, frames on demand.
pub struct RecordingReader<R> {
    header: RecordingHeader,
    lines: std::io::Lines<R>,
    line: usize,
    frame_index: usize,
}

impl<R: BufRead> RecordingReader<R> {
    pub fn new(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let first = lines
            .next()
            .transpose()?
            .ok_or_else(|| Error::parse(1, "missing header"))?;
        let header: RecordingHeader = serde_json::from_str(&first)
            .map_err(|e| Error::parse(1, format!("invalid header: {e}")))?;
        if header.version != RECORDING_VERSION {
            return Err(Error::parse(
                1,
                format!("unsupported version {}", header.version),
            ));
        }
        if !(header.fps.is_finite() && header.fps > 0.0) {
            return Err(Error::parse(1, format!("fps must be positive, got {}", header.fps)));
        }
        Ok(RecordingReader {
            header,
            lines,
            line: 1,
            frame_index: 0,
        })
    }

    pub fn header(&self) -> &RecordingHeader {
        &self.header
    }

    /// Line number of the most recently read line.
    pub fn line(&self) -> usize {
        self.line
    }

    /// Next frame, or `None` at end of stream. A malformed line yields an
    /// error but does not end the stream.
    pub fn next_frame(&mut self) -> Option<Result<SkeletonFrame>> {
        loop {
            let raw = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => return Some(Err(e.into())),
            };
            self.line += 1;
            if raw.trim().is_empty() {
                continue;
            }
            let t = self.frame_index as f64 / self.header.fps;
            self.frame_index += 1;
            return Some(parse_frame_line(&raw, t, self.header.joint_set, self.line));
        }
    }
}

impl<R: BufRead> Iterator for RecordingReader<R> {
    type Item = Result<SkeletonFrame>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_frame()
    }
}

pub fn parse_frame_line(raw: &str, t: f64, set: JointSetId, line: usize) -> Result<SkeletonFrame> {
    let joints: Vec<Vec<f64>> = serde_json::from_str(raw)
        .map_err(|e| Error::parse(line, format!("bad frame: {e}")))?;
    if joints.len() != set.joint_count() {
        return Err(Error::parse(
            line,
            format!(
                "frame has {} joints, {set} needs {}",
                joints.len(),
                set.joint_count()
            ),
        ));
    }
    let mut coords = Vec::with_capacity(joints.len());
    let mut valid = Vec::with_capacity(joints.len());
    for (j, entry) in joints.iter().enumerate() {
        let [x, y, z, c] = entry[..] else {
            return Err(Error::parse(
                line,
                format!("joint {j} has {} fields, expected 4", entry.len()),
            ));
        };
        if c != 0.0 && c != 1.0 {
            return Err(Error::parse(line, format!("joint {j} confidence {c} not in {{0, 1}}")));
        }
        coords.push([x, y, z]);
        valid.push(c == 1.0);
    }
    SkeletonFrame::new(t, coords, valid).map_err(|e| Error::parse(line, e.to_string()))
}

/// Read a whole recording. The header label is resolved through `classes`.
pub fn read_recording<R: BufRead>(reader: R, classes: &ClassTable) -> Result<SkeletonSequence> {
    let mut rec = RecordingReader::new(reader)?;
    let label = match &rec.header.label {
        Some(name) => Some(
            classes
                .id_of(name)
                .ok_or_else(|| Error::UnmappedClasses(vec![name.clone()]))?,
        ),
        None => None,
    };
    let subject = rec.header.subject_id()?;
    let (set, fps) = (rec.header.joint_set, rec.header.fps);
    let frames = rec.by_ref().collect::<Result<Vec<_>>>()?;
    Ok(SkeletonSequence::new(set, frames, fps)?
        .with_label(label)
        .with_subject(subject))
}

/// Write `seq` in canonical form: fixed header key order, shortest
/// round-trip float formatting, LF terminators.
pub fn write_recording<W: Write>(seq: &SkeletonSequence, classes: &ClassTable, mut out: W) -> Result<()> {
    let label = match seq.label {
        Some(id) => Some(
            classes
                .name(id)
                .ok_or_else(|| Error::UnmappedClasses(vec![format!("class id {id}")]))?
                .to_string(),
        ),
        None => None,
    };
    let header = RecordingHeader {
        version: RECORDING_VERSION,
        joint_set: seq.joint_set,
        fps: seq.fps,
        label,
        subject: seq.subject.map(|s| s.to_string()),
    };
    serde_json::to_writer(&mut out, &header).map_err(std::io::Error::from)?;
    out.write_all(b"\n")?;
    for frame in &seq.frames {
        out.write_all(frame_line(frame).as_bytes())?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

fn frame_line(frame: &SkeletonFrame) -> String {
    let entries: Vec<_> = frame
        .joints
        .iter()
        .zip(&frame.valid)
        .map(|(j, v)| {
            serde_json::json!([j[0], j[1], j[2], u8::from(*v)])
        })
        .collect();
    serde_json::Value::Array(entries).to_string()
}
