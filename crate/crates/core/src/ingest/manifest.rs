use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::imageio::decode_image;
use super::{Dataset, Sample, Split};
use crate::error::{Error, Result};
use crate::types::ClassLabel;

/// Vectorized maps of this side have 65536 entries.
pub const DEFAULT_SIDE: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image_path: PathBuf,
    pub label: ClassLabel,
    pub split: Split,
    #[serde(deserialize_with = "de_bool", serialize_with = "ser_bool")]
    pub harvested: bool,
}

fn de_bool<'de, D: serde::Deserializer<'de>>(de: D) -> std::result::Result<bool, D::Error> {
    let s = String::deserialize(de)?;
    match s.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" | "" => Ok(false),
        other => Err(serde::de::Error::custom(format!("bad harvested flag `{other}`"))),
    }
}

fn ser_bool<S: serde::Serializer>(v: &bool, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(if *v { "true" } else { "false" })
}

/// CSV manifest with header `image_path,label,split,harvested`.
///
/// Relative image paths resolve against the manifest's directory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::Reader::from_reader(file);
        let headers = reader
            .headers()
            .map_err(|e| Error::format(path, e.to_string()))?
            .clone();
        let expected = ["image_path", "label", "split", "harvested"];
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(Error::format(
                path,
                format!("expected header `{}`", expected.join(",")),
            ));
        }
        let mut entries = Vec::new();
        for row in reader.deserialize() {
            let entry: ManifestEntry = row.map_err(|e| Error::format(path, e.to_string()))?;
            entries.push(entry);
        }
        let manifest = Self {
            entries,
            base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut writer = csv::Writer::from_writer(file);
        for e in &self.entries {
            writer
                .serialize(e)
                .map_err(|err| Error::format(path, err.to_string()))?;
        }
        writer.flush().map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(&e.image_path) {
                return Err(Error::invalid(format!(
                    "duplicate manifest path {}",
                    e.image_path.display()
                )));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        if entry.image_path.is_absolute() {
            entry.image_path.clone()
        } else {
            self.base_dir.join(&entry.image_path)
        }
    }
}

fn image_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.to_string_lossy().into_owned())
}

/// Load every non-harvested entry, resized to `side × side`.
pub fn load_dataset(manifest: &DatasetManifest, side: usize) -> Result<Dataset> {
    manifest.validate()?;
    let mut dataset = Dataset::default();
    let mut ids = HashSet::new();
    let mut channels = None;
    for entry in manifest.entries.iter().filter(|e| !e.harvested) {
        let path = manifest.resolve(entry);
        let image = decode_image(&path, side)?;
        match channels {
            None => channels = Some(image.channels()),
            Some(c) if c != image.channels() => {
                return Err(Error::invalid(format!(
                    "{} has {} channels, earlier images have {c}",
                    path.display(),
                    image.channels()
                )))
            }
            _ => {}
        }
        let id = image_id(&entry.image_path);
        if !ids.insert(id.clone()) {
            return Err(Error::invalid(format!("duplicate image id `{id}`")));
        }
        dataset.split_mut(entry.split).push(Sample {
            id,
            image,
            label: entry.label,
        });
    }
    for split in Split::ALL {
        if dataset.split(split).is_empty() {
            return Err(Error::EmptySplit(split.to_string()));
        }
    }
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::write_png;
    use crate::types::ImageTensor;

    fn write_images(dir: &Path, names: &[&str]) {
        for n in names {
            write_png(&ImageTensor::filled(8, 8, 3, 0.25), &dir.join(n)).unwrap();
        }
    }

    fn entry(path: &str, split: Split, harvested: bool) -> ManifestEntry {
        ManifestEntry {
            image_path: path.into(),
            label: ClassLabel::Ready,
            split,
            harvested,
        }
    }

    #[test]
    fn harvested_entries_are_dropped() {
        let dir = tempfile::tempdir().unwrap();
        write_images(dir.path(), &["a.png", "b.png", "c.png", "d.png"]);
        let manifest = DatasetManifest {
            entries: vec![
                entry("a.png", Split::Train, false),
                entry("b.png", Split::Train, true),
                entry("c.png", Split::Val, false),
                entry("d.png", Split::Test, false),
            ],
            base_dir: dir.path().to_path_buf(),
        };
        let ds = load_dataset(&manifest, 8).unwrap();
        assert_eq!(ds.train.len(), 1);
        assert_eq!(ds.train[0].id, "a");
    }

    #[test]
    fn empty_split_after_exclusion_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        write_images(dir.path(), &["a.png", "b.png", "c.png"]);
        let manifest = DatasetManifest {
            entries: vec![
                entry("a.png", Split::Train, false),
                entry("b.png", Split::Val, false),
                entry("c.png", Split::Test, true),
            ],
            base_dir: dir.path().to_path_buf(),
        };
        assert!(matches!(load_dataset(&manifest, 8), Err(Error::EmptySplit(s)) if s == "test"));
    }

    #[test]
    fn csv_round_trip_and_header_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.csv");
        let manifest = DatasetManifest {
            entries: vec![entry("x.png", Split::Val, true)],
            base_dir: dir.path().to_path_buf(),
        };
        manifest.write(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "image_path,label,split,harvested\nx.png,ready,val,true\n");
        assert_eq!(DatasetManifest::read(&path).unwrap(), manifest);

        std::fs::write(&path, "path,label\nx.png,ready\n").unwrap();
        assert!(DatasetManifest::read(&path).is_err());
    }

    #[test]
    fn missing_file_error_names_path() {
        let dir = tempfile::tempdir().unwrap();
        write_images(dir.path(), &["b.png", "c.png"]);
        let manifest = DatasetManifest {
            entries: vec![
                entry("missing.png", Split::Train, false),
                entry("b.png", Split::Val, false),
                entry("c.png", Split::Test, false),
            ],
            base_dir: dir.path().to_path_buf(),
        };
        let err = load_dataset(&manifest, 8).unwrap_err();
        assert!(err.to_string().contains("missing.png"));
    }
}
