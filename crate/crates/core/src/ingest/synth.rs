//! Synthetic "plant" images with a planted systematic-error subpopulation.
//!
//! Each image shows a bright disk (the head) near the centre on a soil
//! background, partly covered by elongated leaf blobs. The label is `Ready`
//! iff the head radius reaches the readiness threshold. Planted images carry
//! a signature that misleads a classifier trained on clean images:
//!
//! * [`PlantedSignature::OffsetHead`]: the true head is hidden under dense
//!   leaves and a neighbouring head of opposite-class size shows up near the
//!   top-left corner.
//! * [`PlantedSignature::TexturelessCenter`]: the head is flattened into the
//!   leaf colour, leaving no visible evidence at the centre.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{write_png, Dataset, DatasetManifest, ManifestEntry, Sample, Split};
use crate::error::{Error, Result};
use crate::seed::{rng_for, Rng};
use crate::types::{ClassLabel, ImageTensor};

const SOIL: [f32; 3] = [0.40, 0.30, 0.20];
const LEAF: [f32; 3] = [0.18, 0.45, 0.16];
const HEAD: [f32; 3] = [0.93, 0.91, 0.82];
/// Offset heads sit towards the top-left corner, within ±15°, so the planted
/// subpopulation shares one systematic pattern.
const DECOY_BEARING: f64 = 1.25 * std::f64::consts::PI;
const DECOY_SPREAD: f64 = std::f64::consts::PI / 12.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantedSignature {
    OffsetHead,
    TexturelessCenter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub train_count: usize,
    pub val_count: usize,
    pub test_count: usize,
    pub side: usize,
    pub radius_min: f64,
    pub radius_max: f64,
    /// Expected fraction of the image area covered by leaf blobs.
    pub canopy_density: f64,
    pub readiness_threshold: f64,
    /// Maximum head displacement from the image centre for clean images.
    pub center_jitter: f64,
    pub planted_error_fraction: f64,
    pub planted_error_signature: PlantedSignature,
    /// Whether planted images also appear in the training split.
    pub plant_in_train: bool,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            train_count: 600,
            val_count: 200,
            test_count: 200,
            side: 64,
            radius_min: 4.0,
            radius_max: 12.0,
            canopy_density: 0.25,
            readiness_threshold: 8.0,
            center_jitter: 2.0,
            planted_error_fraction: 0.25,
            planted_error_signature: PlantedSignature::OffsetHead,
            plant_in_train: false,
            seed: 2024,
        }
    }
}

impl SyntheticSpec {
    pub fn count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train_count,
            Split::Val => self.val_count,
            Split::Test => self.test_count,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let half = self.side as f64 / 2.0;
        if self.side < 8 {
            return Err(Error::invalid("synthetic side must be at least 8"));
        }
        if !(self.radius_min > 0.0 && self.radius_min <= self.radius_max) {
            return Err(Error::invalid("need 0 < radius_min <= radius_max"));
        }
        if !(self.center_jitter >= 0.0) || self.radius_max + self.center_jitter > half - 1.0 {
            return Err(Error::invalid(format!(
                "infeasible geometry: radius_max + jitter must stay below {}",
                half - 1.0
            )));
        }
        if self.planted_error_signature == PlantedSignature::OffsetHead
            && half - self.radius_max - 1.0 <= self.radius_max
        {
            return Err(Error::invalid(
                "infeasible geometry: no room to offset a head away from the centre",
            ));
        }
        if !(self.radius_min..=self.radius_max).contains(&self.readiness_threshold) {
            return Err(Error::invalid("readiness threshold outside the radius range"));
        }
        for (name, v) in [
            ("canopy_density", self.canopy_density),
            ("planted_error_fraction", self.planted_error_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1]")));
            }
        }
        if Split::ALL.iter().any(|&s| self.count(s) == 0) {
            return Err(Error::invalid("every split needs at least one image"));
        }
        Ok(())
    }

    pub fn label_for(&self, radius: f64) -> ClassLabel {
        if radius >= self.readiness_threshold {
            ClassLabel::Ready
        } else {
            ClassLabel::NotReady
        }
    }
}

/// Ground truth logged by the generator for each image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthMeta {
    pub image_id: String,
    pub split: Split,
    pub label: ClassLabel,
    pub radius: f64,
    pub head_center: [f64; 2],
    pub planted_error: bool,
    pub decoy_radius: Option<f64>,
    pub decoy_center: Option<[f64; 2]>,
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub dataset: Dataset,
    pub meta: Vec<SynthMeta>,
}

impl SyntheticDataset {
    /// Write `images/<id>.png`, `manifest.csv` and `synth_meta.csv` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<DatasetManifest> {
        let images = dir.join("images");
        std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
        let mut entries = Vec::new();
        for split in Split::ALL {
            for s in self.dataset.split(split) {
                let rel = Path::new("images").join(format!("{}.png", s.id));
                write_png(&s.image, &dir.join(&rel))?;
                entries.push(ManifestEntry {
                    image_path: rel,
                    label: s.label,
                    split,
                    harvested: false,
                });
            }
        }
        let manifest = DatasetManifest {
            entries,
            base_dir: dir.to_path_buf(),
        };
        manifest.write(&dir.join("manifest.csv"))?;

        let meta_path = dir.join("synth_meta.csv");
        let mut w = csv::Writer::from_path(&meta_path).map_err(|e| Error::format(&meta_path, e.to_string()))?;
        w.write_record(["image_id", "split", "label", "radius", "planted_error"])
            .map_err(|e| Error::format(&meta_path, e.to_string()))?;
        for m in &self.meta {
            w.write_record([
                m.image_id.clone(),
                m.split.to_string(),
                m.label.to_string(),
                format!("{:.6}", m.radius),
                m.planted_error.to_string(),
            ])
            .map_err(|e| Error::format(&meta_path, e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(&meta_path, e))?;
        Ok(manifest)
    }
}

pub fn synth_generate(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let mut dataset = Dataset::default();
    let mut meta = Vec::new();
    for split in Split::ALL {
        let n = spec.count(split);
        let planted = planted_indices(spec, split, n);
        for i in 0..n {
            let id = format!("{split}-{i:04}");
            let (image, m) = render(spec, split, &id, planted[i]);
            dataset.split_mut(split).push(Sample {
                id,
                image,
                label: m.label,
            });
            meta.push(m);
        }
    }
    Ok(SyntheticDataset { dataset, meta })
}

fn planted_indices(spec: &SyntheticSpec, split: Split, n: usize) -> Vec<bool> {
    let mut flags = vec![false; n];
    if split == Split::Train && !spec.plant_in_train {
        return flags;
    }
    let k = (spec.planted_error_fraction * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(spec.seed, &format!("planted/{split}")));
    for &i in &order[..k.min(n)] {
        flags[i] = true;
    }
    flags
}

struct Canvas {
    side: usize,
    rgb: Vec<[f32; 3]>,
}

impl Canvas {
    fn new(side: usize, rng: &mut Rng) -> Self {
        let rgb = (0..side * side)
            .map(|_| {
                let n = rng.random_range(-0.04..0.04f32);
                [SOIL[0] + n, SOIL[1] + n, SOIL[2] + n]
            })
            .collect();
        Self { side, rgb }
    }

    fn fill(&mut self, inside: impl Fn(f64, f64) -> bool, color: [f32; 3], rng: &mut Rng, noise: f32) {
        for y in 0..self.side {
            for x in 0..self.side {
                if inside(x as f64 + 0.5, y as f64 + 0.5) {
                    let n = if noise > 0.0 { rng.random_range(-noise..noise) } else { 0.0 };
                    self.rgb[y * self.side + x] = [color[0] + n, color[1] + n, color[2] + n];
                }
            }
        }
    }

    fn disk(&mut self, center: [f64; 2], radius: f64, color: [f32; 3], rng: &mut Rng, noise: f32) {
        let r2 = radius * radius;
        self.fill(
            |x, y| (x - center[0]).powi(2) + (y - center[1]).powi(2) <= r2,
            color,
            rng,
            noise,
        );
    }

    fn into_image(self) -> ImageTensor {
        let n = self.side * self.side;
        let mut data = vec![0.0f32; 3 * n];
        for (i, px) in self.rgb.iter().enumerate() {
            for c in 0..3 {
                // quantize so in-memory images equal their PNG encoding
                data[c * n + i] = (px[c].clamp(0.0, 1.0) * 255.0).round() / 255.0;
            }
        }
        ImageTensor::new(self.side, self.side, 3, data).expect("canvas values are clamped")
    }
}

fn render(spec: &SyntheticSpec, split: Split, id: &str, planted: bool) -> (ImageTensor, SynthMeta) {
    let mut rng = rng_for(spec.seed, id);
    let side = spec.side as f64;
    let c = side / 2.0;
    let radius = rng.random_range(spec.radius_min..=spec.radius_max);
    let label = spec.label_for(radius);
    let jitter = |rng: &mut Rng| {
        if spec.center_jitter > 0.0 {
            rng.random_range(-spec.center_jitter..=spec.center_jitter)
        } else {
            0.0
        }
    };
    let head_center = [c + jitter(&mut rng), c + jitter(&mut rng)];

    let mut canvas = Canvas::new(spec.side, &mut rng);
    let mut decoy_radius = None;
    let mut decoy_center = None;
    match (planted, spec.planted_error_signature) {
        (false, _) => canvas.disk(head_center, radius, HEAD, &mut rng, 0.03),
        (true, PlantedSignature::TexturelessCenter) => {
            canvas.disk(head_center, radius, LEAF, &mut rng, 0.0);
        }
        (true, PlantedSignature::OffsetHead) => {
            canvas.disk(head_center, radius, LEAF, &mut rng, 0.02);
            // opposite-class size, staying clear of the 20% band around the threshold
            let t = spec.readiness_threshold;
            let r = match label {
                ClassLabel::Ready => {
                    let hi = t - 0.2 * (t - spec.radius_min);
                    rng.random_range(spec.radius_min..=hi.max(spec.radius_min))
                }
                ClassLabel::NotReady => {
                    let lo = t + 0.2 * (spec.radius_max - t);
                    rng.random_range(lo.min(spec.radius_max)..=spec.radius_max)
                }
            };
            let theta = DECOY_BEARING + rng.random_range(-DECOY_SPREAD..=DECOY_SPREAD);
            let (s, co) = theta.sin_cos();
            let reach = (c - r - 1.0) / co.abs().max(s.abs());
            let center = [c + reach * co, c + reach * s];
            canvas.disk(center, r, HEAD, &mut rng, 0.03);
            decoy_radius = Some(r);
            decoy_center = Some(center);
        }
    }

    let (a_lo, a_hi) = (0.12 * side, 0.25 * side);
    let (b_lo, b_hi) = (0.035 * side, 0.07 * side);
    let mean_area = std::f64::consts::PI * 0.5 * (a_lo + a_hi) * 0.5 * (b_lo + b_hi);
    let blobs = (spec.canopy_density * side * side / mean_area).round() as usize;
    for _ in 0..blobs {
        let a = rng.random_range(a_lo..=a_hi);
        let b = rng.random_range(b_lo..=b_hi);
        let center = [rng.random_range(0.0..side), rng.random_range(0.0..side)];
        let (s, co) = rng.random_range(0.0..std::f64::consts::PI).sin_cos();
        let shade = rng.random_range(-0.05..0.05f32);
        let color = [LEAF[0] + shade, LEAF[1] + shade, LEAF[2] + shade];
        canvas.fill(
            |x, y| {
                let dx = x - center[0];
                let dy = y - center[1];
                let u = dx * co + dy * s;
                let v = -dx * s + dy * co;
                (u / a).powi(2) + (v / b).powi(2) <= 1.0
            },
            color,
            &mut rng,
            0.02,
        );
    }

    let meta = SynthMeta {
        image_id: id.to_string(),
        split,
        label,
        radius,
        head_center,
        planted_error: planted,
        decoy_radius,
        decoy_center,
    };
    (canvas.into_image(), meta)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            train_count: 20,
            val_count: 10,
            test_count: 10,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let a = synth_generate(&small()).unwrap();
        let b = synth_generate(&small()).unwrap();
        assert_eq!(a.dataset.train, b.dataset.train);
        assert_eq!(a.dataset.test, b.dataset.test);
        assert_eq!(a.meta, b.meta);
        let other = synth_generate(&SyntheticSpec { seed: 1, ..small() }).unwrap();
        assert_ne!(a.dataset.train[0].image, other.dataset.train[0].image);
    }

    #[test]
    fn no_planting_keeps_heads_centred() {
        let spec = SyntheticSpec {
            planted_error_fraction: 0.0,
            ..small()
        };
        let ds = synth_generate(&spec).unwrap();
        let c = spec.side as f64 / 2.0;
        for m in &ds.meta {
            assert!(!m.planted_error);
            assert!((m.head_center[0] - c).abs() <= spec.center_jitter);
            assert!((m.head_center[1] - c).abs() <= spec.center_jitter);
        }
    }

    #[test]
    fn labels_follow_logged_radius() {
        let spec = small();
        let ds = synth_generate(&spec).unwrap();
        for m in &ds.meta {
            assert_eq!(m.label, spec.label_for(m.radius));
        }
        for split in Split::ALL {
            for (s, m) in ds.dataset.split(split).iter().zip(ds.meta.iter().filter(|m| m.split == split)) {
                assert_eq!(s.id, m.image_id);
                assert_eq!(s.label, m.label);
            }
        }
    }

    #[test]
    fn median_threshold_balances_labels() {
        let spec = SyntheticSpec {
            train_count: 600,
            val_count: 1,
            test_count: 1,
            side: 16,
            radius_min: 1.0,
            radius_max: 3.0,
            readiness_threshold: 2.0,
            planted_error_signature: PlantedSignature::TexturelessCenter,
            ..Default::default()
        };
        let ds = synth_generate(&spec).unwrap();
        let ready = ds.dataset.train.iter().filter(|s| s.label == ClassLabel::Ready).count();
        let frac = ready as f64 / 600.0;
        assert!((frac - 0.5).abs() <= 0.05, "{frac}");
    }

    #[test]
    fn planted_fraction_only_outside_train() {
        let spec = SyntheticSpec {
            val_count: 40,
            ..small()
        };
        let ds = synth_generate(&spec).unwrap();
        let planted = |split| ds.meta.iter().filter(|m| m.split == split && m.planted_error).count();
        assert_eq!(planted(Split::Train), 0);
        assert_eq!(planted(Split::Val), 10);
        for m in ds.meta.iter().filter(|m| m.planted_error) {
            let decoy = m.decoy_radius.unwrap();
            assert_ne!(spec.label_for(decoy), m.label);
        }
    }

    #[test]
    fn infeasible_geometry_is_rejected() {
        let spec = SyntheticSpec {
            radius_max: 40.0,
            ..small()
        };
        assert!(synth_generate(&spec).is_err());
        let spec = SyntheticSpec {
            planted_error_fraction: 1.5,
            ..small()
        };
        assert!(synth_generate(&spec).is_err());
    }

    #[test]
    fn write_emits_pngs_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let ds = synth_generate(&small()).unwrap();
        let manifest = ds.write(dir.path()).unwrap();
        assert_eq!(manifest.entries.len(), 40);
        let pngs = std::fs::read_dir(dir.path().join("images")).unwrap().count();
        assert_eq!(pngs, 40);
        let loaded = crate::ingest::load_dataset(&DatasetManifest::read(&dir.path().join("manifest.csv")).unwrap(), 64).unwrap();
        assert_eq!(loaded.val, ds.dataset.val);
    }
}
