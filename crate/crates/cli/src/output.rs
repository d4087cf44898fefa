//! Output tree: provenance-stamped files written with write-then-rename.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const TOOL: &str = concat!("mortgp ", env!("CARGO_PKG_VERSION"));

#[derive(Clone, Debug)]
pub struct OutputTree {
    root: PathBuf,
    config_hash: String,
}

impl OutputTree {
    pub fn new(root: impl Into<PathBuf>, config_hash: impl Into<String>) -> Self {
        Self { root: root.into(), config_hash: config_hash.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// The comment line heading every CSV.
    pub fn banner(&self) -> String {
        format!("# {TOOL} config={}\n", self.config_hash)
    }

    /// Atomically write `body` to `rel`, prefixed by the provenance line.
    pub fn write_csv(&self, rel: &str, body: &[u8]) -> Result<()> {
        let mut bytes = self.banner().into_bytes();
        bytes.extend_from_slice(body);
        self.write_raw(rel, &bytes)
    }

    /// Render a CSV body with `f` and write it.
    pub fn emit<E>(&self, rel: &str, f: impl FnOnce(&mut Vec<u8>) -> std::result::Result<(), E>) -> Result<()>
    where
        CliError: From<E>,
    {
        let mut body = Vec::new();
        f(&mut body)?;
        self.write_csv(rel, &body)
    }

    /// Write rows through a `csv::Writer` with the given header.
    pub fn table<I, R>(&self, rel: &str, header: &[&str], rows: I) -> Result<()>
    where
        I: IntoIterator<Item = R>,
        R: IntoIterator,
        R::Item: AsRef<[u8]>,
    {
        self.emit(rel, |buf| -> std::result::Result<(), csv::Error> {
            let mut w = csv::Writer::from_writer(buf);
            w.write_record(header)?;
            for row in rows {
                w.write_record(row)?;
            }
            w.flush()?;
            Ok(())
        })
    }

    pub fn write_raw(&self, rel: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.path(rel), bytes)
    }

    pub fn read_to_string(&self, rel: &str) -> Result<String> {
        let p = self.path(rel);
        fs::read_to_string(&p).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => CliError::Config(format!("{} is missing; run the earlier pipeline steps first", p.display())),
            _ => CliError::Io { context: format!("reading {}", p.display()), source: e },
        })
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(CliError::io(format!("creating {}", dir.display())))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("output");
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        CliError::Io { context: format!("writing {}", path.display()), source: e }
    })
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(CliError::io(format!("reading {}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
