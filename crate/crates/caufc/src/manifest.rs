//! Dataset manifests: one `<relative-path>\t<cnn|vit|unknown>\t<label|->`
//! entry per line, `#` comments, paths relative to the manifest's directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use caufc_core::tensor::LabeledFeature;
use caufc_core::{ArchTag, FeatureTensor};

use crate::caft;
use crate::error::{Error, Result};
use crate::fsutil;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: String,
    pub arch: ArchTag,
    pub label: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.path)
    }

    pub fn load(&self, index: usize) -> Result<FeatureTensor> {
        caft::read_caft(&self.resolve(&self.entries[index]))
    }

    /// Loads every entry of `arch` that carries a label, in manifest order.
    pub fn load_labeled(&self, arch: ArchTag) -> Result<Vec<LabeledFeature>> {
        self.entries
            .iter()
            .filter(|e| e.arch == arch)
            .filter_map(|e| e.label.map(|l| (e, l)))
            .map(|(e, label)| {
                Ok(LabeledFeature {
                    tensor: caft::read_caft(&self.resolve(e))?,
                    label,
                })
            })
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# path\tarch\tlabel\n");
        for e in &self.entries {
            let label = e.label.map(|l| l.to_string()).unwrap_or_else(|| "-".into());
            let _ = writeln!(s, "{}\t{}\t{}", e.path, e.arch.name(), label);
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fsutil::write_atomic(path, self.to_text().as_bytes())
    }
}

/// Parses and validates a manifest. Errors name the offending line.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let bytes = fsutil::read(path)?;
    let text = String::from_utf8(bytes).map_err(|_| Error::format(path, "manifest is not UTF-8"))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut entries = Vec::new();
    let mut lines = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let err = |detail: String| Error::Manifest {
            path: path.to_path_buf(),
            line,
            detail,
        };
        let trimmed = raw.trim_end_matches('\r');
        if trimmed.trim().is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split('\t').collect();
        if fields.len() != 3 {
            return Err(err(format!("expected 3 tab-separated fields, found {}", fields.len())));
        }
        let arch = ArchTag::from_name(fields[1]).ok_or_else(|| err(format!("unknown arch {:?}", fields[1])))?;
        let label = match fields[2] {
            "-" => None,
            s => Some(s.parse::<u32>().map_err(|_| err(format!("bad label {:?}", s)))?),
        };
        let entry = ManifestEntry {
            path: fields[0].to_string(),
            arch,
            label,
        };
        let (_, file_arch, _) = caft::read_header(&root.join(&entry.path)).map_err(|e| err(format!("unreadable entry: {}", e)))?;
        if arch != ArchTag::Unknown && file_arch != ArchTag::Unknown && file_arch != arch {
            return Err(err(format!("entry says {} but file is tagged {}", arch.name(), file_arch.name())));
        }
        entries.push(entry);
        lines.push(line);
    }
    check_dense_labels(&entries).map_err(|(k, detail)| Error::Manifest {
        path: path.to_path_buf(),
        line: lines[k],
        detail,
    })?;
    Ok(DatasetManifest { root, entries })
}

/// Labels must cover `0..=max` with no gaps; reports the entry holding the
/// largest label when a class is missing.
fn check_dense_labels(entries: &[ManifestEntry]) -> std::result::Result<(), (usize, String)> {
    let Some((k, max)) = entries.iter().enumerate().filter_map(|(k, e)| e.label.map(|l| (k, l))).max_by_key(|&(_, l)| l) else {
        return Ok(());
    };
    let mut seen = vec![false; max as usize + 1];
    for l in entries.iter().filter_map(|e| e.label) {
        seen[l as usize] = true;
    }
    match seen.iter().position(|s| !s) {
        Some(gap) => Err((k, format!("labels are not dense: class {} is missing below max label {}", gap, max))),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use caufc_core::Layout;

    fn setup(lines: &str, files: &[&str]) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        for f in files {
            let t = FeatureTensor::new(Layout::Tokens2D, vec![1, 2], vec![0.0, 1.0], ArchTag::VitLike).unwrap();
            caft::write_caft(&t, &dir.path().join(f)).unwrap();
        }
        let m = dir.path().join("manifest.tsv");
        std::fs::write(&m, lines).unwrap();
        (dir, m)
    }

    #[test]
    fn three_lines_in_order() {
        let (_d, m) = setup("# header\nb.caft\tvit\t1\na.caft\tvit\t0\nc.caft\tunknown\t-\n", &["a.caft", "b.caft", "c.caft"]);
        let man = load_manifest(&m).unwrap();
        let paths: Vec<_> = man.entries.iter().map(|e| e.path.as_str()).collect();
        assert_eq!(paths, ["b.caft", "a.caft", "c.caft"]);
        assert_eq!(man.entries[2].label, None);
        assert_eq!(man.load(1).unwrap().dims(), &[1, 2]);
    }

    #[test]
    fn missing_file_names_the_line() {
        let (_d, m) = setup("a.caft\tvit\t0\n\ngone.caft\tvit\t0\n", &["a.caft"]);
        match load_manifest(&m) {
            Err(Error::Manifest { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {:?}", other),
        }
        assert!(load_manifest(&m).unwrap_err().to_string().contains(":3:"));
    }

    #[test]
    fn empty_manifest_is_valid() {
        let (_d, m) = setup("", &[]);
        assert!(load_manifest(&m).unwrap().entries.is_empty());
    }

    #[test]
    fn malformed_lines() {
        for bad in ["a.caft\tvit\n", "a.caft\tresnet\t0\n", "a.caft\tvit\tx\n", "a.caft\tcnn\t0\n", "a.caft\tvit\t1\n"] {
            let (_d, m) = setup(bad, &["a.caft"]);
            assert!(matches!(load_manifest(&m), Err(Error::Manifest { line: 1, .. })), "{:?}", bad);
        }
    }

    #[test]
    fn text_round_trip() {
        let (_d, m) = setup("a.caft\tvit\t0\nb.caft\tvit\t-\n", &["a.caft", "b.caft"]);
        let man = load_manifest(&m).unwrap();
        man.write(&m).unwrap();
        assert_eq!(load_manifest(&m).unwrap(), man);
    }
}
