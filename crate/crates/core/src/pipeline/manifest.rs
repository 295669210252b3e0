use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.json";

/// Records `artifacts` (paths relative to `out`) with their SHA-256, keeping
/// entries from earlier phases whose files still exist.
pub fn update_manifest(out: &Path, artifacts: &[&str]) -> std::io::Result<BTreeMap<String, String>> {
    let path = out.join(MANIFEST);
    let mut entries: BTreeMap<String, String> = fs::read_to_string(&path)
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok())
        .unwrap_or_default();
    entries.extend(artifacts.iter().map(|a| (a.to_string(), String::new())));
    let mut hashed = BTreeMap::new();
    for name in entries.into_keys() {
        if let Ok(bytes) = fs::read(out.join(&name)) {
            hashed.insert(name, hex::encode(Sha256::digest(&bytes)));
        }
    }
    let json = serde_json::to_string_pretty(&hashed).expect("manifest serializes");
    fs::write(&path, json + "\n")?;
    Ok(hashed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accumulates_and_hashes() {
        let d = tempfile::tempdir().unwrap();
        fs::write(d.path().join("a"), "abc").unwrap();
        update_manifest(d.path(), &["a"]).unwrap();
        fs::write(d.path().join("b"), "").unwrap();
        let m = update_manifest(d.path(), &["b", "missing"]).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m["a"], "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
