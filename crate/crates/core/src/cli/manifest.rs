//! Run manifest: config hash, seed and per-artifact SHA-256 digests.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_NAME: &str = "manifest.txt";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn render(config_text: &str, seed: u64, created_unix: u64, artifacts: &[(String, Vec<u8>)]) -> String {
    let mut out = format!(
        "config_sha256 = {}\nseed = {seed}\ncreated_unix = {created_unix}\n",
        sha256_hex(config_text.as_bytes())
    );
    for (name, bytes) in artifacts {
        out.push_str(&format!("artifact {name} {}\n", sha256_hex(bytes)));
    }
    out
}

/// Names of artifacts that are missing or whose digest no longer matches.
pub fn verify(dir: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(dir.join(MANIFEST_NAME))?;
    let mut bad = Vec::new();
    for line in text.lines() {
        let Some(rest) = line.strip_prefix("artifact ") else {
            continue;
        };
        let (name, digest) = rest
            .rsplit_once(' ')
            .ok_or_else(|| Error::Format(format!("malformed manifest line: {line}")))?;
        match std::fs::read(dir.join(name)) {
            Ok(bytes) if sha256_hex(&bytes) == digest => {}
            _ => bad.push(name.to_string()),
        }
    }
    Ok(bad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn detects_tampering() {
        let dir = tempfile::tempdir().unwrap();
        let artifacts = vec![("report.txt".to_string(), b"g2 = 0.02\n".to_vec())];
        std::fs::write(dir.path().join("report.txt"), &artifacts[0].1).unwrap();
        std::fs::write(dir.path().join(MANIFEST_NAME), render("x", 1, 0, &artifacts)).unwrap();
        assert!(verify(dir.path()).unwrap().is_empty());
        std::fs::write(dir.path().join("report.txt"), b"g2 = 0.01\n").unwrap();
        assert_eq!(verify(dir.path()).unwrap(), vec!["report.txt".to_string()]);
    }
}
