use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use tempfile::{Builder, NamedTempFile};

use crate::error::usage;

/// Fails with a usage error unless every `(flag, path)` names a readable file.
pub fn require_inputs(inputs: &[(&str, &Path)]) -> Result<()> {
    for (flag, path) in inputs {
        match fs::metadata(path) {
            Ok(m) if m.is_file() => {}
            Ok(_) => {
                return Err(usage(format!(
                    "{flag} {}: not a regular file",
                    path.display()
                )))
            }
            Err(e) => return Err(usage(format!("{flag} {}: {e}", path.display()))),
        }
    }
    Ok(())
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

/// Fails with a usage error if an output could not be created.
pub fn require_outputs(outputs: &[(&str, &Path)]) -> Result<()> {
    for (flag, path) in outputs {
        let dir = parent_dir(path);
        if !dir.is_dir() {
            return Err(usage(format!(
                "{flag} {}: directory {} does not exist",
                path.display(),
                dir.display()
            )));
        }
        if path.is_dir() {
            return Err(usage(format!("{flag} {}: is a directory", path.display())));
        }
    }
    Ok(())
}

/// An output written next to its destination and renamed into place on
/// [`commit`](Staged::commit). Dropping it uncommitted removes the temp file.
pub struct Staged {
    file: NamedTempFile,
    dest: PathBuf,
}

fn temp_builder() -> Builder<'static, 'static> {
    let mut b = Builder::new();
    b.prefix(".tokenspace-");
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        b.permissions(fs::Permissions::from_mode(0o644));
    }
    b
}

pub fn stage(
    dest: &Path,
    body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>,
) -> Result<Staged> {
    let file = temp_builder()
        .tempfile_in(parent_dir(dest))
        .with_context(|| format!("creating temporary file for {}", dest.display()))?;
    let mut w = BufWriter::new(file.as_file());
    body(&mut w)
        .and_then(|_| w.flush())
        .with_context(|| format!("writing {}", dest.display()))?;
    drop(w);
    Ok(Staged {
        file,
        dest: dest.to_path_buf(),
    })
}

impl Staged {
    pub fn commit(self) -> Result<()> {
        let dest = self.dest;
        self.file
            .persist(&dest)
            .map(drop)
            .with_context(|| format!("renaming output into {}", dest.display()))
    }
}

/// Stages every output first so that nothing is renamed into place unless
/// all of them were written.
pub fn commit_all(staged: Vec<Staged>) -> Result<()> {
    staged.into_iter().try_for_each(Staged::commit)
}

pub fn write_atomic(
    dest: &Path,
    body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>,
) -> Result<()> {
    stage(dest, body)?.commit()
}
