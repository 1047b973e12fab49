//! Bundle files on disk and the run manifest.
//!
//! Layout of a bundle directory:
//!
//! ```text
//! triplets/{split}-{answer_type}-{shard:05}.jsonl   one triplet per line, qid order
//! vocabulary.txt                                    answer<TAB>index
//! stats.json
//! config.json                                       tool, version and effective config
//! manifest.json                                     digests, counts, wall time
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{AnswerVocabulary, ConfigEcho, DatasetBundle, Split, StatsReport, Triplet};
use crate::error::{Error, Result};
use crate::keyed::sha256_hex;
use crate::template::AnswerType;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const TRIPLET_DIR: &str = "triplets";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub records: Option<usize>,
}

impl FileDigest {
    pub fn of_bytes(path: impl Into<String>, bytes: &[u8], records: Option<usize>) -> Self {
        FileDigest {
            path: path.into(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
            records,
        }
    }

    pub fn of_file(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::of_bytes(path.display().to_string(), &bytes, None))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_sha256: String,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub records: BTreeMap<String, usize>,
    pub workers: usize,
    pub wall_time_seconds: f64,
}

fn shard_name(split: Split, answer_type: AnswerType, shard: usize) -> String {
    format!("{TRIPLET_DIR}/{}-{}-{shard:05}.jsonl", split.as_str(), answer_type.as_str())
}

fn to_jsonl<T: Serialize>(records: &[T]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| Error::json("serializing record", e))?;
        out.push(b'\n');
    }
    Ok(out)
}

fn write(dir: &Path, rel: &str, bytes: &[u8], records: Option<usize>) -> Result<FileDigest> {
    let path = dir.join(rel);
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    Ok(FileDigest::of_bytes(rel, bytes, records))
}

fn pretty<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::json("serializing document", e))?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Write every bundle file except the manifest and return their digests:
/// shards first in name order, then the documents.
pub fn write_bundle(bundle: &DatasetBundle, dir: &Path) -> Result<Vec<FileDigest>> {
    let shard_size = bundle.config_echo.config.shard_size.max(1);
    let tdir = dir.join(TRIPLET_DIR);
    fs::create_dir_all(&tdir).map_err(|e| Error::io(&tdir, e))?;
    if let Ok(entries) = fs::read_dir(&tdir) {
        for entry in entries.flatten() {
            if entry.path().extension().is_some_and(|e| e == "jsonl") {
                fs::remove_file(entry.path()).map_err(|e| Error::io(entry.path(), e))?;
            }
        }
    }

    let mut jobs: Vec<(String, Vec<&Triplet>)> = Vec::new();
    for (&split, triplets) in &bundle.triplets {
        for at in [AnswerType::Binary, AnswerType::NonBinary] {
            let mut stratum: Vec<&Triplet> = triplets.iter().filter(|t| t.answer_type == at).collect();
            stratum.sort_by(|a, b| a.qid.cmp(&b.qid));
            for (i, chunk) in stratum.chunks(shard_size).enumerate() {
                jobs.push((shard_name(split, at, i), chunk.to_vec()));
            }
        }
    }
    let mut digests: Vec<FileDigest> = jobs
        .par_iter()
        .map(|(name, records)| write(dir, name, &to_jsonl(records)?, Some(records.len())))
        .collect::<Result<_>>()?;
    digests.sort_by(|a, b| a.path.cmp(&b.path));

    let mut vocab = String::new();
    for (i, a) in bundle.vocabulary.answers.iter().enumerate() {
        vocab.push_str(&format!("{a}\t{i}\n"));
    }
    digests.push(write(dir, "vocabulary.txt", vocab.as_bytes(), Some(bundle.vocabulary.len()))?);
    digests.push(write(dir, "stats.json", &pretty(&bundle.stats)?, None)?);
    digests.push(write(dir, "config.json", &pretty(&bundle.config_echo)?, None)?);
    Ok(digests)
}

pub fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<()> {
    let path = dir.join("manifest.json");
    fs::write(&path, pretty(manifest)?).map_err(|e| Error::io(&path, e))
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest> {
    read_json(&dir.join("manifest.json"), "manifest")
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, what: &str) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(format!("{what} {}", path.display()), e))
}

/// Parse line-delimited JSON records, skipping blank lines.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| Error::json(format!("{}:{}", path.display(), n + 1), e))?,
        );
    }
    Ok(out)
}

/// Shard paths of a bundle, in name order.
pub fn shard_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    let tdir = dir.join(TRIPLET_DIR);
    let mut paths: Vec<PathBuf> = fs::read_dir(&tdir)
        .map_err(|e| Error::io(&tdir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "jsonl"))
        .collect();
    paths.sort();
    Ok(paths)
}

pub fn load_bundle(dir: &Path) -> Result<DatasetBundle> {
    let config_echo: ConfigEcho = read_json(&dir.join("config.json"), "config echo")?;
    let stats: StatsReport = read_json(&dir.join("stats.json"), "stats")?;
    let vpath = dir.join("vocabulary.txt");
    let vtext = fs::read_to_string(&vpath).map_err(|e| Error::io(&vpath, e))?;
    let mut answers = Vec::new();
    for (n, line) in vtext.lines().enumerate() {
        let (answer, idx) = line
            .rsplit_once('\t')
            .ok_or_else(|| Error::Input(format!("{}:{}: expected answer<TAB>index", vpath.display(), n + 1)))?;
        if idx.parse::<usize>().ok() != Some(n) {
            return Err(Error::Input(format!("{}:{}: index {idx} out of order", vpath.display(), n + 1)));
        }
        answers.push(answer.to_string());
    }
    let mut triplets: BTreeMap<Split, Vec<Triplet>> = BTreeMap::new();
    for path in shard_paths(dir)? {
        for t in read_jsonl::<Triplet>(&path)? {
            triplets.entry(t.split).or_default().push(t);
        }
    }
    for ts in triplets.values_mut() {
        ts.sort_by(|a, b| a.qid.cmp(&b.qid));
    }
    Ok(DatasetBundle {
        triplets,
        vocabulary: AnswerVocabulary { answers },
        stats,
        config_echo,
    })
}
