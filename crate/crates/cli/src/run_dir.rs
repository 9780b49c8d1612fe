//! Run directories: every command writes its outputs plus a `metadata.json`
//! holding the flags, seeds and tool version needed to repeat the run.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use featvec::{Error, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const METADATA_FILE: &str = "metadata.json";

pub struct Context {
    pub threads: usize,
    pub argv: Vec<String>,
}

impl Context {
    pub fn new(threads: usize) -> Self {
        Context {
            threads,
            argv: std::env::args().collect(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Metadata<A, R> {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub argv: Vec<String>,
    pub threads: usize,
    pub args: A,
    pub results: R,
}

impl<A, R> Metadata<A, R> {
    pub fn new(ctx: &Context, command: &str, args: A, results: R) -> Self {
        Metadata {
            tool: "featvec".to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            argv: ctx.argv.clone(),
            threads: ctx.threads,
            args,
            results,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn create(dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    Ok(dir.to_path_buf())
}

pub fn create_file(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create_file(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(io_err(path))?;
    Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
}

/// Writes through `body` into `path`, flushing at the end.
pub fn write_with(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut w = create_file(path)?;
    body(&mut w)?;
    w.flush().map_err(io_err(path))
}

pub fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}
