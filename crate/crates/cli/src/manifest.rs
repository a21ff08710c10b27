use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rwbench::error::{Error, ErrorKind};
use rwbench::io::{sha256_hex, to_json_string};
use serde::{Deserialize, Serialize};

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_NUMERICAL: u8 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_DATA,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e.kind() {
            ErrorKind::Config => EXIT_CONFIG,
            ErrorKind::Data | ErrorKind::Io => EXIT_DATA,
            ErrorKind::Numerical => EXIT_NUMERICAL,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Reads a file, reporting failures against `path`.
pub fn read_input(path: &Path, code: u8) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| CliError {
        code,
        message: format!("{}: {e}", path.display()),
    })
}

/// Files written by one command, with their digests.
#[derive(Debug)]
pub struct Outputs {
    dir: PathBuf,
    files: BTreeMap<String, String>,
}

impl Outputs {
    pub fn new(dir: &Path) -> Self {
        Self {
            dir: dir.to_owned(),
            files: BTreeMap::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    /// Writes `bytes` to `dir/rel` (creating parents) and records its digest.
    pub fn write(&mut self, rel: &str, bytes: impl AsRef<[u8]>) -> CliResult<()> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::data(format!("{}: {e}", parent.display())))?;
        }
        fs::write(&path, bytes.as_ref()).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        self.files.insert(rel.to_owned(), sha256_hex(bytes.as_ref()));
        Ok(())
    }

    pub fn write_json<T: Serialize + ?Sized>(&mut self, rel: &str, value: &T) -> CliResult<()> {
        let s = to_json_string(value).map_err(Error::from)?;
        self.write(rel, s)
    }

    pub fn files(&self) -> &BTreeMap<String, String> {
        &self.files
    }
}

/// Provenance record written next to every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Command line without the program name.
    pub args: Vec<String>,
    pub seed: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub config_digest: Option<String>,
    pub tool_version: String,
    /// Input path → SHA-256.
    pub inputs: BTreeMap<String, String>,
    /// Output path (relative to the output directory) → SHA-256.
    pub outputs: BTreeMap<String, String>,
    pub threads: usize,
    pub wall_time_s: f64,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl RunManifest {
    pub fn load(path: &Path) -> CliResult<Self> {
        let bytes = read_input(path, EXIT_CONFIG)?;
        serde_json::from_slice(&bytes).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
    }
}
