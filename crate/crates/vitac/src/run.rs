//! Run directories and atomic file output.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::config::Config;
use crate::Error;

/// `{root}/{command}-{digest prefix}-s{seed}`. The digest covers every
/// configuration key, so runs differing in any key get distinct directories.
pub fn run_dir(root: &Path, command: &str, cfg: &Config) -> PathBuf {
    root.join(format!("{command}-{}-s{}", &cfg.digest()[..16], cfg.seed))
}

/// Writes `bytes` to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Error> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    result.map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Vec<u8>, Error> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}
