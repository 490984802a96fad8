//! Where sequences live on disk.
//!
//! Ground truth follows the MOTChallenge tree, `<root>/<name>/gt/gt.txt`.
//! Tracker output is flat, `<dir>/<name>.txt`. A plain file stands for a
//! single sequence named after its stem (or after the sequence directory
//! for `<name>/gt/gt.txt`).

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct SeqFile {
    pub name: String,
    pub path: PathBuf,
}

pub fn gt_path(root: &Path, name: &str) -> PathBuf {
    root.join(name).join("gt").join("gt.txt")
}

pub fn result_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.txt"))
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn name_of_gt_file(path: &Path) -> String {
    let in_gt_dir = path.file_name().is_some_and(|n| n == "gt.txt")
        && path.parent().and_then(Path::file_name).is_some_and(|n| n == "gt");
    match path.parent().and_then(Path::parent).and_then(Path::file_name) {
        Some(seq) if in_gt_dir => seq.to_string_lossy().into_owned(),
        _ => stem(path),
    }
}

/// Ground-truth sequences under `path`, sorted by name.
pub fn gt_sequences(path: &Path) -> Result<Vec<SeqFile>> {
    if path.is_file() {
        return Ok(vec![SeqFile {
            name: name_of_gt_file(path),
            path: path.to_path_buf(),
        }]);
    }
    let own = path.join("gt").join("gt.txt");
    if own.is_file() {
        return Ok(vec![SeqFile {
            name: name_of_gt_file(&own),
            path: own,
        }]);
    }
    let mut out = Vec::new();
    for entry in fs::read_dir(path).with_context(|| format!("reading {}", path.display()))? {
        let dir = entry?.path();
        let gt = dir.join("gt").join("gt.txt");
        if gt.is_file() {
            out.push(SeqFile {
                name: stem(&dir),
                path: gt,
            });
        }
    }
    if out.is_empty() {
        bail!("no ground truth found under {}", path.display());
    }
    out.sort();
    Ok(out)
}

/// Result files under `path`, sorted by name.
pub fn result_sequences(path: &Path) -> Result<Vec<SeqFile>> {
    if path.is_file() {
        return Ok(vec![SeqFile {
            name: stem(path),
            path: path.to_path_buf(),
        }]);
    }
    let mut out = Vec::new();
    for entry in fs::read_dir(path).with_context(|| format!("reading {}", path.display()))? {
        let p = entry?.path();
        if p.is_file() && p.extension().is_some_and(|e| e == "txt") {
            out.push(SeqFile { name: stem(&p), path: p });
        }
    }
    if out.is_empty() {
        bail!("no result files found under {}", path.display());
    }
    out.sort();
    Ok(out)
}
