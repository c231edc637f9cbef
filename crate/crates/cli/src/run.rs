use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Result;
use eegvis::hash::{sha256_file, ContentHasher};
use eegvis::Error;
use serde::Serialize;
use serde_json::json;

/// Output directory of one run: `checkpoints/`, `reports/`, `images/`,
/// `logs/`, plus `config.json` and `inputs.json` at the top.
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self> {
        for sub in ["checkpoints", "reports", "images", "logs"] {
            let d = root.join(sub);
            fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn images(&self) -> PathBuf {
        self.root.join("images")
    }

    pub fn logs(&self) -> PathBuf {
        self.root.join("logs")
    }

    /// Resolved arguments of the run.
    pub fn write_config<T: Serialize>(&self, command: &str, fast: bool, args: &T) -> Result<()> {
        let doc = json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "deterministic": !fast,
            "args": args,
        });
        write_json(&self.root.join("config.json"), &doc)
    }

    /// Content hashes of every input file or directory.
    pub fn write_inputs(&self, inputs: &[(&str, &Path)]) -> Result<()> {
        let mut doc = BTreeMap::new();
        for (name, path) in inputs {
            doc.insert(
                name.to_string(),
                json!({ "path": path.display().to_string(), "sha256": hash_path(path)? }),
            );
        }
        write_json(&self.root.join("inputs.json"), &doc)
    }

    /// Sends `log` output to `logs/run.log`.
    pub fn init_logging(&self) -> Result<()> {
        let path = self.logs().join("run.log");
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
            .format(|buf, record| writeln!(buf, "{} {}", record.level(), record.args()))
            .target(env_logger::Target::Pipe(Box::new(file)))
            .try_init();
        Ok(())
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// SHA-256 of a file, or of every file under a directory (relative path and
/// contents, in sorted order).
pub fn hash_path(path: &Path) -> Result<String> {
    if path.is_file() {
        return Ok(sha256_file(path)?);
    }
    if !path.is_dir() {
        return Err(Error::Data(format!("input {} does not exist", path.display())).into());
    }
    let mut files = Vec::new();
    let mut stack = vec![path.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let p = entry.map_err(|e| Error::io(&dir, e))?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push(p);
            }
        }
    }
    files.sort();
    let mut h = ContentHasher::new();
    for f in files {
        let rel = f.strip_prefix(path).unwrap_or(&f).to_string_lossy().into_owned();
        h.update(rel).update(sha256_file(&f)?);
    }
    Ok(h.finish())
}
