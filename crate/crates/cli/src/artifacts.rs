//! JSON and CSV artifact files. Every artifact starts with the same metadata
//! block: as a `metadata` object in JSON and as `#` comment lines in CSV.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::Error;

pub const ARTIFACT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metadata {
    pub artifact: String,
    pub artifact_version: u32,
    pub tool_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub prng: String,
}

impl Metadata {
    pub fn new(artifact: &str, config: &RunConfig) -> Self {
        Self {
            artifact: artifact.to_string(),
            artifact_version: ARTIFACT_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config.hash(),
            seed: config.seed,
            prng: evcs_core::PRNG_ALGORITHM.to_string(),
        }
    }

    fn lines(&self) -> [(&'static str, String); 6] {
        [
            ("artifact", self.artifact.clone()),
            ("artifact_version", self.artifact_version.to_string()),
            ("tool_version", self.tool_version.clone()),
            ("config_hash", self.config_hash.clone()),
            ("seed", self.seed.to_string()),
            ("prng", self.prng.clone()),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Envelope<T> {
    pub metadata: Metadata,
    pub data: T,
}

fn ensure_parent(path: &Path) -> Result<(), Error> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(Error::io(dir))?;
    }
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, metadata: Metadata, data: &T) -> Result<(), Error> {
    #[derive(Serialize)]
    struct Out<'a, T> {
        metadata: Metadata,
        data: &'a T,
    }
    ensure_parent(path)?;
    let mut text = serde_json::to_vec_pretty(&Out { metadata, data }).map_err(|e| Error::Artifact {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    text.push(b'\n');
    fs::write(path, text).map_err(Error::io(path))
}

/// Reads a JSON artifact. A missing file is reported as a missing stage.
pub fn read_json<T: DeserializeOwned>(
    path: &Path,
    stage: &'static str,
    run_first: &'static str,
) -> Result<Envelope<T>, Error> {
    let text = match fs::read(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::MissingStage {
                stage,
                missing: path.to_path_buf(),
                run_first,
            })
        }
        Err(e) => return Err(Error::io(path)(e)),
    };
    serde_json::from_slice(&text).map_err(|e| Error::Artifact {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Shortest decimal that parses back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{x:?}")
    }
}

/// Writes a CSV artifact: metadata comment lines, the column header, then
/// `rows` (already formatted).
pub fn write_csv(path: &Path, metadata: &Metadata, header: &[&str], rows: &[Vec<String>]) -> Result<(), Error> {
    ensure_parent(path)?;
    let mut buf = Vec::new();
    for (k, v) in metadata.lines() {
        writeln!(buf, "# {k}: {v}").expect("write to vec");
    }
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        let fail = |e: csv::Error| Error::Artifact {
            path: path.to_path_buf(),
            reason: e.to_string(),
        };
        w.write_record(header).map_err(fail)?;
        for row in rows {
            w.write_record(row).map_err(fail)?;
        }
        w.flush().map_err(Error::io(path))?;
    }
    fs::write(path, buf).map_err(Error::io(path))
}

/// Reads a CSV artifact's metadata and rows, checking the column header.
pub fn read_csv(
    path: &Path,
    header: &[&str],
    stage: &'static str,
    run_first: &'static str,
) -> Result<(Metadata, Vec<csv::StringRecord>), Error> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::MissingStage {
                stage,
                missing: path.to_path_buf(),
                run_first,
            })
        }
        Err(e) => return Err(Error::io(path)(e)),
    };
    let bad = |reason: String| Error::Artifact {
        path: path.to_path_buf(),
        reason,
    };
    let mut fields = std::collections::BTreeMap::new();
    for line in text.lines().take_while(|l| l.starts_with('#')) {
        let (k, v) = line[1..]
            .split_once(':')
            .ok_or_else(|| bad(format!("bad metadata line `{line}`")))?;
        fields.insert(k.trim().to_string(), v.trim().to_string());
    }
    let get = |k: &str| fields.get(k).cloned().ok_or_else(|| bad(format!("missing metadata `{k}`")));
    let metadata = Metadata {
        artifact: get("artifact")?,
        artifact_version: get("artifact_version")?.parse().map_err(|_| bad("bad artifact_version".into()))?,
        tool_version: get("tool_version")?,
        config_hash: get("config_hash")?,
        seed: get("seed")?.parse().map_err(|_| bad("bad seed".into()))?,
        prng: get("prng")?,
    };

    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let found = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(bad(format!("unexpected columns {found:?}")));
    }
    let rows = reader
        .records()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| bad(e.to_string()))?;
    Ok((metadata, rows))
}

/// Layout of a run directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn scenario(&self, k: usize) -> PathBuf {
        self.root.join("scenarios").join(format!("{k:04}.json"))
    }

    pub fn day(&self, k: usize) -> PathBuf {
        self.root.join("days").join(format!("{k:04}.json"))
    }

    pub fn samples(&self) -> PathBuf {
        self.root.join("solve").join("samples.csv")
    }

    pub fn duals(&self) -> PathBuf {
        self.root.join("solve").join("duals.json")
    }

    pub fn price_table(&self) -> PathBuf {
        self.root.join("price_table.json")
    }

    pub fn report(&self, policy: evcs_core::PolicyKind, k: usize) -> PathBuf {
        self.root
            .join("simulate")
            .join(policy.label())
            .join(format!("{k:04}.json"))
    }

    pub fn days_csv(&self) -> PathBuf {
        self.root.join("simulate").join("days.csv")
    }

    pub fn summary_json(&self) -> PathBuf {
        self.root.join("summary.json")
    }

    pub fn summary_csv(&self) -> PathBuf {
        self.root.join("summary.csv")
    }
}
