//! Reader for NTU RGB+D `.skeleton` text files.
//!
//! Layout: a frame-count line, then per frame a body-count line followed by,
//! per body, a body-info line (body id + 9 tracking fields), a joint-count
//! line and one line per joint. Only the first three reals of a joint line
//! (camera-space x, y, z) are used.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

use crate::error::{Error, Result};
use crate::skeleton::{JointSetId, SkeletonFrame, SkeletonSequence};

pub const NTU_FPS: f64 = 30.0;
const NTU_JOINTS: usize = 25;

/// Fields encoded in an NTU file name, `SsssCcccPpppRrrrAaaa`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NtuFileMeta {
    pub setup: u32,
    pub camera: u32,
    pub performer: u32,
    pub replication: u32,
    pub action: u32,
}

impl NtuFileMeta {
    /// Parse a bare name or a path; a `.skeleton` extension is ignored.
    pub fn from_name(name: &str) -> Result<Self> {
        let stem = Path::new(name)
            .file_name()
            .and_then(|s| s.to_str())
            .unwrap_or(name);
        let stem = stem.strip_suffix(".skeleton").unwrap_or(stem);
        let bad = || Error::Data(format!("`{name}` does not match SsssCcccPpppRrrrAaaa"));
        let bytes = stem.as_bytes();
        if bytes.len() != 20 {
            return Err(bad());
        }
        let mut fields = [0u32; 5];
        for (i, tag) in [b'S', b'C', b'P', b'R', b'A'].into_iter().enumerate() {
            let chunk = &stem[i * 4..i * 4 + 4];
            if chunk.as_bytes()[0] != tag {
                return Err(bad());
            }
            let digits = &chunk[1..];
            if !digits.bytes().all(|b| b.is_ascii_digit()) {
                return Err(bad());
            }
            fields[i] = digits.parse().map_err(|_| bad())?;
        }
        let meta = NtuFileMeta {
            setup: fields[0],
            camera: fields[1],
            performer: fields[2],
            replication: fields[3],
            action: fields[4],
        };
        if fields.contains(&0) {
            return Err(Error::Data(format!("`{name}`: fields must be positive")));
        }
        if !(1..=60).contains(&meta.action) {
            return Err(Error::Data(format!(
                "`{name}`: action {} outside 1..=60",
                meta.action
            )));
        }
        Ok(meta)
    }

    pub fn name(&self) -> String {
        format!(
            "S{:03}C{:03}P{:03}R{:03}A{:03}",
            self.setup, self.camera, self.performer, self.replication, self.action
        )
    }

    pub fn label(&self) -> usize {
        self.action as usize - 1
    }
}

struct Lines<R> {
    inner: std::io::Lines<R>,
    line: usize,
}

impl<R: BufRead> Lines<R> {
    fn next_line(&mut self) -> Result<String> {
        loop {
            self.line += 1;
            match self.inner.next() {
                Some(l) => {
                    let l = l?;
                    if !l.trim().is_empty() {
                        return Ok(l);
                    }
                }
                None => return Err(Error::parse(self.line, "unexpected end of file")),
            }
        }
    }

    fn next_count(&mut self, what: &str) -> Result<usize> {
        let l = self.next_line()?;
        l.trim()
            .parse()
            .map_err(|_| Error::parse(self.line, format!("expected {what}, found `{}`", l.trim())))
    }

    fn next_real(&self, tok: Option<&str>) -> Result<f64> {
        let tok = tok.ok_or_else(|| Error::parse(self.line, "too few fields in joint line"))?;
        let v: f64 = tok
            .parse()
            .map_err(|_| Error::parse(self.line, format!("non-numeric token `{tok}`")))?;
        if !v.is_finite() {
            return Err(Error::parse(self.line, format!("non-finite value `{tok}`")));
        }
        Ok(v)
    }
}

/// Per-body joint tracks, indexed by frame.
type BodyTracks = BTreeMap<u64, BTreeMap<usize, Vec<[f64; 3]>>>;

/// Sum of squared frame-to-frame displacement over all joints, counting
/// only consecutive frames where the body is present.
pub fn motion_energy(track: &BTreeMap<usize, Vec<[f64; 3]>>) -> f64 {
    track
        .iter()
        .zip(track.iter().skip(1))
        .filter(|((a, _), (b, _))| **b == **a + 1)
        .map(|((_, p), (_, q))| {
            p.iter()
                .zip(q)
                .map(|(u, v)| (0..3).map(|k| (v[k] - u[k]).powi(2)).sum::<f64>())
                .sum::<f64>()
        })
        .sum()
}

/// Parse one `.skeleton` file. When several bodies appear, the one with the
/// highest motion energy is kept (ties go to the lower body id); frames where
/// it is absent become all-invalid.
pub fn parse_ntu_skeleton<R: BufRead>(reader: R, meta: &NtuFileMeta) -> Result<SkeletonSequence> {
    let mut lines = Lines {
        inner: reader.lines(),
        line: 0,
    };
    let frame_count = lines.next_count("frame count")?;
    let mut bodies: BodyTracks = BTreeMap::new();
    for frame in 0..frame_count {
        let body_count = lines.next_count("body count")?;
        for _ in 0..body_count {
            let info = lines.next_line()?;
            let id_tok = info.split_whitespace().next().unwrap_or("");
            let body_id: u64 = id_tok
                .parse()
                .map_err(|_| Error::parse(lines.line, format!("bad body id `{id_tok}`")))?;
            let joint_count = lines.next_count("joint count")?;
            if joint_count != NTU_JOINTS {
                return Err(Error::parse(
                    lines.line,
                    format!("expected {NTU_JOINTS} joints, found {joint_count}"),
                ));
            }
            let mut joints = Vec::with_capacity(NTU_JOINTS);
            for _ in 0..NTU_JOINTS {
                let l = lines.next_line()?;
                let mut toks = l.split_whitespace();
                let x = lines.next_real(toks.next())?;
                let y = lines.next_real(toks.next())?;
                let z = lines.next_real(toks.next())?;
                joints.push([x, y, z]);
            }
            bodies.entry(body_id).or_default().insert(frame, joints);
        }
    }

    let chosen = bodies
        .iter()
        .map(|(id, track)| (*id, motion_energy(track)))
        .fold(None::<(u64, f64)>, |best, (id, e)| match best {
            Some((_, be)) if be >= e => best,
            _ => Some((id, e)),
        })
        .map(|(id, _)| id);

    let track = chosen.and_then(|id| bodies.remove(&id)).unwrap_or_default();
    let frames = (0..frame_count)
        .map(|i| {
            let t = i as f64 / NTU_FPS;
            match track.get(&i) {
                Some(j) => SkeletonFrame::from_joints(t, j.clone()),
                None => SkeletonFrame {
                    t,
                    joints: vec![[0.0; 3]; NTU_JOINTS],
                    valid: vec![false; NTU_JOINTS],
                },
            }
        })
        .collect();
    Ok(SkeletonSequence::new(JointSetId::Ntu25, frames, NTU_FPS)?
        .with_label(Some(meta.label()))
        .with_subject(Some(meta.performer))
        .with_source(meta.name()))
}

/// Read a `.skeleton` file, taking its metadata from the file name.
pub fn read_ntu_file(path: &Path) -> Result<SkeletonSequence> {
    let name = path
        .file_name()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Data(format!("bad path {}", path.display())))?;
    let meta = NtuFileMeta::from_name(name)?;
    let file = std::fs::File::open(path)?;
    parse_ntu_skeleton(std::io::BufReader::new(file), &meta)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn joint_line(x: f64, y: f64, z: f64) -> String {
        format!("{x} {y} {z} 250.1 180.2 1000.5 500.7 0.1 0.2 0.3 0.9 2\n")
    }

    fn body(id: u64, joints: &[[f64; 3]]) -> String {
        let mut s = format!("{id} 0 1 1 1 1 0 0.01 -0.02 2\n25\n");
        for j in joints {
            s += &joint_line(j[0], j[1], j[2]);
        }
        s
    }

    #[test]
    fn filename_meta() {
        let m = NtuFileMeta::from_name("S001C001P001R001A001").unwrap();
        assert_eq!(
            m,
            NtuFileMeta {
                setup: 1,
                camera: 1,
                performer: 1,
                replication: 1,
                action: 1
            }
        );
        assert_eq!(m.label(), 0);
        let m = NtuFileMeta::from_name("data/S017C003P020R002A060.skeleton").unwrap();
        assert_eq!((m.setup, m.camera, m.performer, m.replication, m.action), (17, 3, 20, 2, 60));
        assert_eq!(m.name(), "S017C003P020R002A060");
        assert!(NtuFileMeta::from_name("S001C001P001R001A061").is_err());
        assert!(NtuFileMeta::from_name("S001C001P001R001").is_err());
        assert!(NtuFileMeta::from_name("X001C001P001R001A001").is_err());
    }

    #[test]
    fn minimal_file() {
        let mut text = String::from("1\n1\n");
        text += &format!("72057594037931101 0 1 1 1 1 0 0.01 -0.02 2\n25\n");
        for _ in 0..25 {
            text += "0.1 0.2 0.3 0 0 0 0 0 0 0 0 0\n";
        }
        let meta = NtuFileMeta::from_name("S001C001P001R001A001").unwrap();
        let seq = parse_ntu_skeleton(text.as_bytes(), &meta).unwrap();
        assert_eq!(seq.len(), 1);
        assert_eq!(seq.joint_set, JointSetId::Ntu25);
        assert_eq!(seq.fps, 30.0);
        assert_eq!(seq.frames[0].joints[0], [0.1, 0.2, 0.3]);
        assert_eq!(seq.label, Some(0));
        assert_eq!(seq.subject, Some(1));
    }

    #[test]
    fn moving_body_wins_over_static_one() {
        let meta = NtuFileMeta::from_name("S001C001P002R001A023").unwrap();
        let still = vec![[0.5, 0.5, 3.0]; 25];
        let mut text = String::from("3\n");
        for f in 0..3 {
            let moving: Vec<_> = (0..25).map(|j| [j as f64 * 0.01 + f as f64 * 0.1, 1.0, 2.0]).collect();
            // static body has the lower id so a tie-break would pick it
            text += "2\n";
            text += &body(1, &still);
            text += &body(2, &moving);
        }
        let seq = parse_ntu_skeleton(text.as_bytes(), &meta).unwrap();
        // hand-computed: 25 joints × (0.1²) × 2 transitions = 0.5 for body 2, 0 for body 1
        assert!((seq.frames[2].joints[0][0] - 0.2).abs() < 1e-12);
        assert_eq!(seq.subject, Some(2));
        assert_eq!(seq.label, Some(22));
    }

    #[test]
    fn energy_by_hand() {
        let mut track = BTreeMap::new();
        track.insert(0, vec![[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]]);
        track.insert(1, vec![[1.0, 0.0, 0.0], [1.0, 1.0, 3.0]]);
        track.insert(3, vec![[9.0, 9.0, 9.0], [9.0, 9.0, 9.0]]);
        // only the 0→1 transition counts: 1 + 4
        assert_eq!(motion_energy(&track), 5.0);
    }

    #[test]
    fn ties_go_to_lower_body_id() {
        let meta = NtuFileMeta::from_name("S001C001P001R001A001").unwrap();
        let a = vec![[1.0, 0.0, 0.0]; 25];
        let b = vec![[2.0, 0.0, 0.0]; 25];
        let text = format!("1\n2\n{}{}", body(9, &a), body(4, &b));
        let seq = parse_ntu_skeleton(text.as_bytes(), &meta).unwrap();
        assert_eq!(seq.frames[0].joints[0][0], 2.0);
    }

    #[test]
    fn frames_without_bodies_are_invalid() {
        let meta = NtuFileMeta::from_name("S001C001P001R001A001").unwrap();
        let text = format!("2\n0\n1\n{}", body(1, &vec![[1.0, 2.0, 3.0]; 25]));
        let seq = parse_ntu_skeleton(text.as_bytes(), &meta).unwrap();
        assert!(!seq.frames[0].any_valid());
        assert!(seq.frames[1].valid.iter().all(|v| *v));
        assert_eq!(seq.frames[1].t, 1.0 / 30.0);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let meta = NtuFileMeta::from_name("S001C001P001R001A001").unwrap();
        let truncated = format!("1\n1\n1 0 0 0 0 0 0 0 0 2\n25\n{}", joint_line(0.0, 0.0, 0.0));
        match parse_ntu_skeleton(truncated.as_bytes(), &meta) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 6),
            other => panic!("{other:?}"),
        }
        let wrong_count = "1\n1\n1 0 0 0 0 0 0 0 0 2\n24\n";
        match parse_ntu_skeleton(wrong_count.as_bytes(), &meta) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 4);
                assert!(message.contains("25"));
            }
            other => panic!("{other:?}"),
        }
        let mut bad = String::from("1\n1\n1 0 0 0 0 0 0 0 0 2\n25\n");
        for i in 0..25 {
            bad += if i == 3 { "0.1 abc 0.3\n" } else { "0.1 0.2 0.3\n" };
        }
        match parse_ntu_skeleton(bad.as_bytes(), &meta) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 8);
                assert!(message.contains("abc"));
            }
            other => panic!("{other:?}"),
        }
        let nan = bad.replace("abc", "NaN");
        assert!(parse_ntu_skeleton(nan.as_bytes(), &meta).is_err());
        let inf = bad.replace("abc", "inf");
        assert!(parse_ntu_skeleton(inf.as_bytes(), &meta).is_err());
    }
}
