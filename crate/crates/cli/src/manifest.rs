//! JSON-lines dataset manifests.
//!
//! Relative paths are resolved against the manifest's own directory.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub rgb_path: PathBuf,
    /// The (possibly holed) disparity raster.
    pub disparity_path: PathBuf,
    pub split: Split,
    /// Hole-free reference, when known (synthetic data).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_path: Option<PathBuf>,
    /// Output of a refinement run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refined_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

fn check_id(id: &str) -> Result<()> {
    if id.is_empty() || id == "." || id == ".." || id.contains(['/', '\\']) {
        bail!("unusable image id {id:?}");
    }
    Ok(())
}

impl Manifest {
    /// Reads a manifest, resolving every path and checking that ids are
    /// unique and all referenced files exist.
    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).with_context(|| format!("opening manifest {}", path.display()))?;
        let base = path.canonicalize()?.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut entries = Vec::new();
        for (no, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut e: ManifestEntry = serde_json::from_str(&line)
                .with_context(|| format!("{}:{}: bad manifest entry", path.display(), no + 1))?;
            e.rgb_path = base.join(&e.rgb_path);
            e.disparity_path = base.join(&e.disparity_path);
            e.truth_path = e.truth_path.map(|p| base.join(p));
            e.refined_path = e.refined_path.map(|p| base.join(p));
            entries.push(e);
        }
        let manifest = Self { entries };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        let mut missing = Vec::new();
        for e in &self.entries {
            check_id(&e.id)?;
            if !seen.insert(e.id.as_str()) {
                bail!("duplicate image id {:?}", e.id);
            }
            let paths = [
                Some(&e.rgb_path),
                Some(&e.disparity_path),
                e.truth_path.as_ref(),
                e.refined_path.as_ref(),
            ];
            missing.extend(paths.into_iter().flatten().filter(|p| !p.is_file()).cloned());
        }
        if !missing.is_empty() {
            let list: Vec<String> = missing.iter().map(|p| p.display().to_string()).collect();
            bail!("manifest references missing files: {}", list.join(", "));
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
        for e in &self.entries {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn split_mask(&self) -> Vec<bool> {
        self.entries.iter().map(|e| e.split == Split::Eval).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entry_json_shape() {
        let e = ManifestEntry {
            id: "a".into(),
            rgb_path: "rgb/a.png".into(),
            disparity_path: "disparity/a.png".into(),
            split: Split::Eval,
            truth_path: None,
            refined_path: None,
        };
        assert_eq!(
            serde_json::to_string(&e).unwrap(),
            r#"{"id":"a","rgb_path":"rgb/a.png","disparity_path":"disparity/a.png","split":"eval"}"#
        );
    }

    #[test]
    fn load_checks_ids_and_files() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("x.png"), b"").unwrap();
        let line = r#"{"id":"a","rgb_path":"x.png","disparity_path":"x.png","split":"train"}"#;
        let path = dir.path().join("m.jsonl");

        std::fs::write(&path, format!("{line}\n\n")).unwrap();
        let m = Manifest::load(&path).unwrap();
        assert_eq!(m.len(), 1);
        assert!(m.entries[0].rgb_path.is_absolute());

        std::fs::write(&path, format!("{line}\n{line}\n")).unwrap();
        assert!(Manifest::load(&path).unwrap_err().to_string().contains("duplicate"));

        std::fs::write(&path, line.replace("\"x.png\",\"split\"", "\"y.png\",\"split\"")).unwrap();
        assert!(Manifest::load(&path).unwrap_err().to_string().contains("missing"));

        std::fs::write(&path, line.replace("\"a\"", "\"../a\"")).unwrap();
        assert!(Manifest::load(&path).is_err());
    }
}
