//! Dataset ingestion: NTU `.skeleton` files, SKELREC-JSONL recordings and
//! train/test splits.

mod ntu;
mod recording;
mod split;

use std::path::{Path, PathBuf};

pub use ntu::{motion_energy, parse_ntu_skeleton, read_ntu_file, NtuFileMeta, NTU_FPS};
pub use recording::{
    parse_frame_line, read_recording, write_recording, RecordingHeader, RecordingReader,
    RECORDING_VERSION,
};
pub use split::{cross_subject_split, custom_split, DatasetSplit, SplitProtocol, SubjectProtocol};

use crate::error::Result;
use crate::skeleton::{ClassTable, SkeletonSequence};

/// Read a SKELREC-JSONL file; the file stem becomes the sequence source.
pub fn read_recording_file(path: &Path, classes: &ClassTable) -> Result<SkeletonSequence> {
    let file = std::fs::File::open(path)?;
    let seq = read_recording(std::io::BufReader::new(file), classes)?;
    Ok(seq.with_source(path.display().to_string()))
}

/// Every `.jsonl` and `.skeleton` file below `dir`, sorted by path.
pub fn dataset_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else if matches!(
                path.extension().and_then(|e| e.to_str()),
                Some("jsonl" | "skeleton")
            ) {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Load every sequence below `dir`. NTU files carry their own labels;
/// recordings resolve theirs through `classes`.
pub fn load_dataset_dir(dir: &Path, classes: &ClassTable) -> Result<Vec<SkeletonSequence>> {
    dataset_files(dir)?
        .iter()
        .map(|p| match p.extension().and_then(|e| e.to_str()) {
            Some("skeleton") => read_ntu_file(p),
            _ => read_recording_file(p, classes),
        })
        .collect()
}
