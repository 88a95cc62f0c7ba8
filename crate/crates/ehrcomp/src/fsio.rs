use std::fs;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::IoError;

/// Writes through a temporary sibling file and renames it into place, so
/// readers never observe a partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), IoError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp"));
    {
        let mut f = fs::File::create(&tmp).map_err(|e| IoError::io(&tmp, e))?;
        f.write_all(contents).map_err(|e| IoError::io(&tmp, e))?;
        f.sync_all().map_err(|e| IoError::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| IoError::io(path, e))
}

pub fn read_to_string(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|e| IoError::io(path, e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Digest of a file, or of a directory as the digest over its sorted
/// `relative-path  file-digest` lines (the manifest itself excluded).
pub fn digest_path(path: &Path) -> Result<String, IoError> {
    if path.is_file() {
        let bytes = fs::read(path).map_err(|e| IoError::io(path, e))?;
        return Ok(sha256_hex(&bytes));
    }
    let mut lines = Vec::new();
    collect(path, path, &mut lines)?;
    lines.sort();
    Ok(sha256_hex(lines.join("\n").as_bytes()))
}

fn collect(root: &Path, dir: &Path, lines: &mut Vec<String>) -> Result<(), IoError> {
    for entry in fs::read_dir(dir).map_err(|e| IoError::io(dir, e))? {
        let entry = entry.map_err(|e| IoError::io(dir, e))?;
        let path = entry.path();
        let name = entry.file_name().to_string_lossy().into_owned();
        if name == crate::manifest::MANIFEST_FILE || name.starts_with('.') {
            continue;
        }
        if path.is_dir() {
            collect(root, &path, lines)?;
        } else {
            let rel = path.strip_prefix(root).unwrap_or(&path).to_string_lossy().replace('\\', "/");
            lines.push(format!("{rel}  {}", digest_path(&path)?));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/a.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }

    #[test]
    fn directory_digest_is_content_based() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        for d in [a.path(), b.path()] {
            write_atomic(&d.join("x.csv"), b"1,2").unwrap();
            write_atomic(&d.join("y/z.txt"), b"z").unwrap();
        }
        assert_eq!(digest_path(a.path()).unwrap(), digest_path(b.path()).unwrap());
        write_atomic(&b.path().join("x.csv"), b"1,3").unwrap();
        assert_ne!(digest_path(a.path()).unwrap(), digest_path(b.path()).unwrap());
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
