use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::parse_key_values;
use crate::matrix::peek_magic;

pub const MANIFEST: &str = "manifest.txt";
pub const LOCK: &str = "manifest.lock";
pub const TIMINGS: &str = "timings.txt";

/// Recorded producer of artifacts copied in from outside the workspace.
pub const INPUT_PRODUCER: &str = "input";

/// Key/value description of a pipeline directory: hyper-parameters, the
/// artifacts each stage produced with their content hashes, and the
/// ordered stage invocations.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub params: BTreeMap<String, String>,
    pub artifacts: BTreeMap<String, ArtifactEntry>,
    pub stages: Vec<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArtifactEntry {
    pub path: String,
    pub sha256: String,
    pub producer: String,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut s = String::from("# lowshot pipeline manifest\n");
        for (k, v) in &self.params {
            let _ = writeln!(s, "param.{k}={v}");
        }
        for (name, a) in &self.artifacts {
            let _ = writeln!(s, "artifact.{name}={}", a.path);
            let _ = writeln!(s, "hash.{name}={}", a.sha256);
            let _ = writeln!(s, "producer.{name}={}", a.producer);
        }
        for (i, st) in self.stages.iter().enumerate() {
            let _ = writeln!(s, "stage.{i:03}={}", st.join(" "));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let kv = parse_key_values(text)?;
        let mut m = Manifest::default();
        let mut paths = BTreeMap::new();
        let mut hashes = BTreeMap::new();
        let mut producers = BTreeMap::new();
        for (k, v) in kv {
            let (kind, name) = k
                .split_once('.')
                .ok_or_else(|| Error::Format(format!("manifest key {k:?} has no section")))?;
            match kind {
                "param" => {
                    m.params.insert(name.to_string(), v);
                }
                "artifact" => {
                    paths.insert(name.to_string(), v);
                }
                "hash" => {
                    hashes.insert(name.to_string(), v);
                }
                "producer" => {
                    producers.insert(name.to_string(), v);
                }
                "stage" => {
                    // keys are zero-padded, so map order is stage order
                    m.stages.push(v.split_whitespace().map(str::to_string).collect());
                }
                _ => return Err(Error::Format(format!("unknown manifest section {kind:?}"))),
            }
        }
        for (name, path) in paths {
            let sha256 = hashes
                .remove(&name)
                .ok_or_else(|| Error::Format(format!("artifact {name} has no hash")))?;
            let producer = producers.remove(&name).unwrap_or_default();
            m.artifacts.insert(name, ArtifactEntry { path, sha256, producer });
        }
        Ok(m)
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Expected magic bytes for binary artifacts, by extension.
fn expected_magic(path: &Path) -> Option<&'static [u8; 4]> {
    match path.extension()?.to_str()? {
        "fmat" => Some(b"FMAT"),
        "sprm" => Some(b"SPRM"),
        "knnl" => Some(b"KNNL"),
        "pcam" => Some(b"PCAM"),
        "trce" => Some(b"TRCE"),
        _ => None,
    }
}

struct Lock {
    path: PathBuf,
}

impl Lock {
    fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(LOCK);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Data(format!(
                "{} is locked by another command (delete {LOCK} if it is stale)",
                dir.display()
            ))),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for Lock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// An exclusively locked pipeline directory with its manifest.
pub struct Workspace {
    dir: PathBuf,
    pub manifest: Manifest,
    _lock: Lock,
}

impl Workspace {
    /// Creates `dir` if needed, takes the lock and loads the manifest,
    /// checking every recorded artifact against its hash and magic bytes.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let lock = Lock::acquire(&dir)?;
        let mpath = dir.join(MANIFEST);
        let manifest = if mpath.exists() {
            Manifest::from_text(&fs::read_to_string(&mpath)?)?
        } else {
            Manifest::default()
        };
        let ws = Self {
            dir,
            manifest,
            _lock: lock,
        };
        ws.verify()?;
        Ok(ws)
    }

    pub fn verify(&self) -> Result<()> {
        for (name, a) in &self.manifest.artifacts {
            let path = self.dir.join(&a.path);
            if !path.exists() {
                return Err(Error::Data(format!("artifact {name} ({}) is missing", a.path)));
            }
            if let Some(magic) = expected_magic(&path) {
                if &peek_magic(&path)? != magic {
                    return Err(Error::Format(format!("artifact {name} ({}) has bad magic bytes", a.path)));
                }
            }
            if sha256_file(&path)? != a.sha256 {
                return Err(Error::Data(format!("artifact {name} ({}) changed since it was recorded", a.path)));
            }
        }
        Ok(())
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    pub fn exists(&self, rel: &str) -> bool {
        self.path(rel).exists()
    }

    /// Path of `rel`, or a data error naming the stage that produces it.
    pub fn require(&self, rel: &str, producer: &str) -> Result<PathBuf> {
        let p = self.path(rel);
        if p.exists() {
            Ok(p)
        } else {
            Err(Error::Data(format!("{rel} not found in {}; run `{producer}` first", self.dir.display())))
        }
    }

    pub fn param(&self, key: &str) -> Option<&str> {
        self.manifest.params.get(key).map(String::as_str)
    }

    pub fn set_param(&mut self, key: &str, value: impl ToString) {
        self.manifest.params.insert(key.to_string(), value.to_string());
    }

    /// Master seed recorded in the manifest (0 when absent).
    pub fn master_seed(&self) -> Result<u64> {
        match self.param("seed") {
            Some(s) => s.parse().map_err(|_| Error::Format(format!("bad seed {s:?} in manifest"))),
            None => Ok(0),
        }
    }

    /// Hashes `rel` and records it under `name`.
    pub fn record(&mut self, name: &str, rel: &str, producer: &str) -> Result<()> {
        let sha256 = sha256_file(&self.path(rel))?;
        self.manifest.artifacts.insert(
            name.to_string(),
            ArtifactEntry {
                path: rel.to_string(),
                sha256,
                producer: producer.to_string(),
            },
        );
        Ok(())
    }

    pub fn push_stage(&mut self, args: Vec<String>) {
        self.manifest.stages.push(args);
    }

    pub fn save(&self) -> Result<()> {
        let tmp = self.dir.join(format!("{MANIFEST}.tmp"));
        fs::write(&tmp, self.manifest.to_text())?;
        fs::rename(tmp, self.dir.join(MANIFEST))?;
        Ok(())
    }

    /// Writes `label<TAB>seconds` into the timings file, replacing an
    /// earlier line with the same label. Timings are kept out of the
    /// manifest so reruns hash identically.
    pub fn record_timing(&self, label: &str, elapsed: Duration) -> Result<()> {
        let path = self.dir.join(TIMINGS);
        let old = fs::read_to_string(&path).unwrap_or_default();
        let mut lines: Vec<String> = old
            .lines()
            .filter(|l| l.split('\t').next() != Some(label))
            .map(str::to_string)
            .collect();
        lines.push(format!("{label}\t{:.6}", elapsed.as_secs_f64()));
        fs::write(path, lines.join("\n") + "\n")?;
        Ok(())
    }

    pub fn timings(&self) -> Vec<(String, f64)> {
        fs::read_to_string(self.dir.join(TIMINGS))
            .unwrap_or_default()
            .lines()
            .filter_map(|l| {
                let (a, b) = l.split_once('\t')?;
                Some((a.to_string(), b.parse().ok()?))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trip() {
        let mut m = Manifest::default();
        m.params.insert("k".into(), "10".into());
        m.artifacts.insert(
            "features".into(),
            ArtifactEntry {
                path: "features.fmat".into(),
                sha256: "ab".into(),
                producer: "preprocess".into(),
            },
        );
        m.stages = (0..12).map(|i| vec![format!("s{i}"), "--x".into()]).collect();
        assert_eq!(Manifest::from_text(&m.to_text()).unwrap(), m);
    }

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::open(dir.path()).unwrap();
        assert!(matches!(Workspace::open(dir.path()), Err(Error::Data(_))));
        drop(ws);
        assert!(Workspace::open(dir.path()).is_ok());
    }

    #[test]
    fn tampered_artifact_detected() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut ws = Workspace::open(dir.path()).unwrap();
            fs::write(ws.path("a.txt"), "one").unwrap();
            ws.record("a", "a.txt", "test").unwrap();
            ws.save().unwrap();
        }
        fs::write(dir.path().join("a.txt"), "two").unwrap();
        assert!(Workspace::open(dir.path()).is_err());
    }

    #[test]
    fn timings_replace_by_label() {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::open(dir.path()).unwrap();
        ws.record_timing("timing: diffusion", Duration::from_millis(5)).unwrap();
        ws.record_timing("timing: diffusion", Duration::from_millis(7)).unwrap();
        let t = ws.timings();
        assert_eq!(t.len(), 1);
        assert!((t[0].1 - 0.007).abs() < 1e-9);
    }
}
