use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::Sample;
use crate::error::{Error, Result};
use crate::seed::rng_for;
use crate::types::{ClassLabel, ImageTensor};

/// Right-angle geometric transforms; no interpolation involved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Identity,
    FlipHorizontal,
    FlipVertical,
    Rotate90,
    Rotate180,
    Rotate270,
}

impl Transform {
    pub fn tag(self) -> &'static str {
        match self {
            Transform::Identity => "id",
            Transform::FlipHorizontal => "hflip",
            Transform::FlipVertical => "vflip",
            Transform::Rotate90 => "rot90",
            Transform::Rotate180 => "rot180",
            Transform::Rotate270 => "rot270",
        }
    }

    pub fn apply(self, image: &ImageTensor) -> ImageTensor {
        match self {
            Transform::Identity => image.clone(),
            Transform::FlipHorizontal => image.flip_horizontal(),
            Transform::FlipVertical => image.flip_vertical(),
            Transform::Rotate90 => image.rotate90(),
            Transform::Rotate180 => image.rotate90().rotate90(),
            Transform::Rotate270 => image.rotate90().rotate90().rotate90(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationPolicy {
    pub operations: Vec<Transform>,
    /// Expected augmented copies per image of the non-target class.
    pub base_multiplier: f64,
    /// Relative boost of expected copies for `target_class`.
    pub minority_boost: f64,
    pub target_class: ClassLabel,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        Self {
            operations: vec![
                Transform::FlipHorizontal,
                Transform::FlipVertical,
                Transform::Rotate90,
                Transform::Rotate180,
                Transform::Rotate270,
            ],
            base_multiplier: 4.0,
            minority_boost: 1.5,
            target_class: ClassLabel::NotReady,
        }
    }
}

impl AugmentationPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.minority_boost >= 1.0) || !self.minority_boost.is_finite() {
            return Err(Error::invalid("minority_boost must be >= 1"));
        }
        if !(self.base_multiplier >= 0.0) || !self.base_multiplier.is_finite() {
            return Err(Error::invalid("base_multiplier must be >= 0"));
        }
        if self.base_multiplier > 0.0 && self.operations.is_empty() {
            return Err(Error::invalid("augmentation needs at least one operation"));
        }
        Ok(())
    }

    pub fn expected_copies(&self, label: ClassLabel) -> f64 {
        if label == self.target_class {
            self.base_multiplier * self.minority_boost
        } else {
            self.base_multiplier
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSample {
    pub sample: Sample,
    pub source_id: String,
    pub transform: Transform,
}

/// Each source image contributes itself plus `k` sampled transformed copies,
/// where `k` is `floor(m)` or `floor(m) + 1` with mean `m = expected_copies`.
///
/// Randomness is keyed by `(seed, image id)`, so output is independent of
/// input order within the slice.
pub fn augment(
    train: &[Sample],
    policy: &AugmentationPolicy,
    seed: u64,
) -> Result<Vec<AugmentedSample>> {
    policy.validate()?;
    if train.is_empty() {
        return Err(Error::EmptySplit("train".into()));
    }
    let mut out = Vec::new();
    for sample in train {
        out.push(AugmentedSample {
            sample: sample.clone(),
            source_id: sample.id.clone(),
            transform: Transform::Identity,
        });
        let m = policy.expected_copies(sample.label);
        let mut rng = rng_for(seed, &sample.id);
        let whole = m.floor();
        let extra = usize::from(rng.random::<f64>() < m - whole);
        let copies = whole as usize + extra;
        for j in 0..copies {
            let t = policy.operations[rng.random_range(0..policy.operations.len())];
            out.push(AugmentedSample {
                sample: Sample {
                    id: format!("{}~{j}-{}", sample.id, t.tag()),
                    image: t.apply(&sample.image),
                    label: sample.label,
                },
                source_id: sample.id.clone(),
                transform: t,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn samples(n: usize) -> Vec<Sample> {
        (0..n)
            .map(|i| {
                let mut image = ImageTensor::filled(4, 4, 1, 0.0);
                image.set(0, 0, i % 4, 1.0);
                Sample {
                    id: format!("s{i}"),
                    image,
                    label: if i % 2 == 0 { ClassLabel::NotReady } else { ClassLabel::Ready },
                }
            })
            .collect()
    }

    #[test]
    fn boost_ratio_over_fixed_seed_run() {
        let input = samples(200);
        let out = augment(&input, &AugmentationPolicy::default(), 11).unwrap();
        let copies = |label| {
            let n_src = input.iter().filter(|s| s.label == label).count() as f64;
            let n_aug = out
                .iter()
                .filter(|a| a.sample.label == label && a.transform != Transform::Identity)
                .count() as f64;
            n_aug / n_src
        };
        assert_eq!(copies(ClassLabel::NotReady), 6.0);
        assert_eq!(copies(ClassLabel::Ready), 4.0);
    }

    #[test]
    fn fractional_multiplier_averages_out() {
        let input = samples(2000);
        let policy = AugmentationPolicy {
            base_multiplier: 1.0,
            ..Default::default()
        };
        let out = augment(&input, &policy, 3).unwrap();
        let not_ready_copies = out
            .iter()
            .filter(|a| a.sample.label == ClassLabel::NotReady && a.transform != Transform::Identity)
            .count() as f64
            / 1000.0;
        assert!((not_ready_copies - 1.5).abs() < 0.05, "{not_ready_copies}");
    }

    #[test]
    fn identity_policy() {
        let input = samples(5);
        let policy = AugmentationPolicy {
            base_multiplier: 0.0,
            minority_boost: 1.0,
            ..Default::default()
        };
        let out = augment(&input, &policy, 0).unwrap();
        let images: Vec<_> = out.into_iter().map(|a| a.sample).collect();
        assert_eq!(images, input);
    }

    #[test]
    fn deterministic_and_provenance_tagged() {
        let input = samples(10);
        let a = augment(&input, &AugmentationPolicy::default(), 5).unwrap();
        let b = augment(&input, &AugmentationPolicy::default(), 5).unwrap();
        assert_eq!(a, b);
        for s in &a {
            assert!(s.sample.id.starts_with(&s.source_id));
            let src = input.iter().find(|x| x.id == s.source_id).unwrap();
            assert_eq!(s.transform.apply(&src.image), s.sample.image);
        }
    }

    #[test]
    fn double_flip_is_identity() {
        let img = samples(3)[1].image.clone();
        for t in [Transform::FlipHorizontal, Transform::FlipVertical] {
            assert_eq!(t.apply(&t.apply(&img)), img);
        }
    }

    #[test]
    fn rejects_bad_policy() {
        let policy = AugmentationPolicy {
            minority_boost: 0.5,
            ..Default::default()
        };
        assert!(augment(&samples(2), &policy, 0).is_err());
        assert!(augment(&[], &AugmentationPolicy::default(), 0).is_err());
    }
}
