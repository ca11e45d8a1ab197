//! Output files are written whole or not at all.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

fn temp_path(path: &Path) -> PathBuf {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!(".{name}.tmp-{}", std::process::id()))
}

/// Writes through a temporary sibling, then renames it over `path`.
pub fn atomic_write<F>(path: &Path, body: F) -> io::Result<()>
where
    F: FnOnce(&mut dyn Write) -> io::Result<()>,
{
    let tmp = temp_path(path);
    let result = (|| {
        let mut w = BufWriter::with_capacity(1 << 20, File::create(&tmp)?);
        body(&mut w)?;
        w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

/// Destination for a set of named output files.
pub trait Sink {
    fn put(&mut self, name: &str, body: &mut dyn FnMut(&mut dyn Write) -> io::Result<()>) -> io::Result<()>;
}

/// Files kept in memory, keyed by name.
#[derive(Debug, Default)]
pub struct MemorySink {
    pub files: std::collections::BTreeMap<String, Vec<u8>>,
}

impl Sink for MemorySink {
    fn put(&mut self, name: &str, body: &mut dyn FnMut(&mut dyn Write) -> io::Result<()>) -> io::Result<()> {
        let mut buf = Vec::new();
        body(&mut buf)?;
        self.files.insert(name.to_string(), buf);
        Ok(())
    }
}

/// Files written atomically into a directory.
#[derive(Debug)]
pub struct DirSink {
    pub dir: PathBuf,
    /// Paths written so far, in order.
    pub written: Vec<PathBuf>,
}

impl DirSink {
    pub fn new(dir: impl Into<PathBuf>) -> io::Result<DirSink> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(DirSink {
            dir,
            written: Vec::new(),
        })
    }
}

impl Sink for DirSink {
    fn put(&mut self, name: &str, body: &mut dyn FnMut(&mut dyn Write) -> io::Result<()>) -> io::Result<()> {
        let path = self.dir.join(name);
        atomic_write(&path, |w| body(w))?;
        self.written.push(path);
        Ok(())
    }
}

/// Maps a CSV writer error into an I/O error.
pub fn csv_io(e: csv::Error) -> io::Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => e,
        other => io::Error::other(format!("{other:?}")),
    }
}
