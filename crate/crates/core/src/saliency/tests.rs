use proptest::prelude::*;

use super::*;
use crate::model::{Architecture, MiniCnn};

/// P(ready) = bias + Σ w_i x_i over every channel value; weights kept small
/// so the output stays a probability.
struct LinearScorer {
    bias: f64,
    weights: Vec<f64>,
}

impl Classifier for LinearScorer {
    fn predict(&self, image: &ImageTensor) -> Result<ClassScores> {
        let s: f64 = self.bias + image.data().iter().zip(&self.weights).map(|(&x, w)| x as f64 * w).sum::<f64>();
        ClassScores::new([1.0 - s, s])
    }
}

struct Constant;

impl Classifier for Constant {
    fn predict(&self, _: &ImageTensor) -> Result<ClassScores> {
        ClassScores::new([0.3, 0.7])
    }
}

fn pattern_image(h: usize, w: usize, c: usize) -> ImageTensor {
    let data = (0..h * w * c).map(|i| ((i * 37) % 101) as f32 / 100.0).collect();
    ImageTensor::new(h, w, c, data).unwrap()
}

fn linear_scorer(n: usize, seed: u64) -> LinearScorer {
    use rand::Rng as _;
    let mut r = crate::seed::rng(seed);
    let weights: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0) / n as f64 * 0.5).collect();
    LinearScorer { bias: 0.5, weights }
}

#[test]
fn window_count_formula() {
    assert_eq!(window_positions(256, 11, 2).len(), 123);
    assert_eq!(window_positions(11, 11, 2), vec![0]);
    assert!(window_positions(10, 11, 2).is_empty());
}

#[test]
fn occlusion_rejects_oversized_patch() {
    let img = pattern_image(8, 8, 1);
    let cfg = OcclusionConfig {
        patch_size: 9,
        ..Default::default()
    };
    assert!(occlusion_map(&Constant, &img, "x", ClassLabel::Ready, &cfg, &[0.0]).is_err());
}

#[test]
fn occlusion_of_constant_classifier_is_zero() {
    let img = pattern_image(16, 16, 3);
    let map = occlusion_map(&Constant, &img, "x", ClassLabel::Ready, &OcclusionConfig::default(), &[0.5; 3]).unwrap();
    assert!(map.values.iter().all(|&v| v == 0.0));
    assert_eq!((map.height, map.width), (16, 16));
}

#[test]
fn occlusion_deltas_match_linear_oracle() {
    let (h, w, c) = (20, 17, 3);
    let img = pattern_image(h, w, c);
    let scorer = linear_scorer(h * w * c, 1);
    let cfg = OcclusionConfig {
        patch_size: 5,
        stride: 3,
        fill: Fill::Zero,
    };
    let grid = occlusion_deltas(&scorer, &img, ClassLabel::Ready, &cfg, &[0.0; 3]).unwrap();
    assert_eq!(grid.rows.len(), (h - 5) / 3 + 1);
    assert_eq!(grid.cols.len(), (w - 5) / 3 + 1);
    for (r, &y0) in grid.rows.iter().enumerate() {
        for (k, &x0) in grid.cols.iter().enumerate() {
            let mut expected = 0.0;
            for ch in 0..c {
                for y in y0..y0 + 5 {
                    for x in x0..x0 + 5 {
                        let i = (ch * h + y) * w + x;
                        expected += scorer.weights[i] * img.data()[i] as f64;
                    }
                }
            }
            let got = grid.deltas[r * grid.cols.len() + k];
            assert!((got - expected).abs() < 1e-6, "{got} vs {expected}");
        }
    }
}

#[test]
fn occlusion_map_averages_covering_windows() {
    // only pixel (0, 0) matters; windows covering it are those starting at 0
    let img = ImageTensor::filled(6, 6, 1, 1.0);
    let mut weights = vec![0.0; 36];
    weights[0] = 0.2;
    let scorer = LinearScorer { bias: 0.1, weights };
    let cfg = OcclusionConfig {
        patch_size: 3,
        stride: 1,
        fill: Fill::Zero,
    };
    let map = occlusion_map(&scorer, &img, "x", ClassLabel::Ready, &cfg, &[0.0]).unwrap();
    assert!((map.get(0, 0) - 0.2).abs() < 1e-6);
    // pixel (1, 1) is covered by 4 windows, one of which contains (0, 0)
    assert!((map.get(1, 1) - 0.05).abs() < 1e-6);
    assert_eq!(map.get(5, 5), 0.0);
    // class evidence flips sign for the other class
    let other = occlusion_map(&scorer, &img, "x", ClassLabel::NotReady, &cfg, &[0.0]).unwrap();
    assert!((other.get(0, 0) + 0.2).abs() < 1e-6);
}

#[test]
fn gradcam_zero_dense_is_zero() {
    let mut m = MiniCnn::new(Architecture::default(), 3).unwrap();
    m.dense_weight_mut().fill(0.0);
    let img = pattern_image(16, 16, 3);
    let map = grad_cam(&m, &img, "x", ClassLabel::Ready, &GradCamConfig::default()).unwrap();
    assert!(map.values.iter().all(|&v| v == 0.0));
}

#[test]
fn gradcam_hand_computed_identity_conv() {
    // act = relu(img); d logit_c / d act is w_c / 4 at the 4 pool winners,
    // so the channel weight is 4 * (w_c / 4) / 16 = w_c / 16.
    let arch = Architecture {
        input_channels: 1,
        conv_channels: vec![1],
    };
    let mut kernel = vec![0.0f32; 9];
    kernel[4] = 1.0;
    let m = MiniCnn::from_params(arch, vec![kernel, vec![0.0], vec![2.0, -1.0], vec![0.0, 0.0]]).unwrap();
    let img = pattern_image(4, 4, 1);
    let map = grad_cam(&m, &img, "x", ClassLabel::NotReady, &GradCamConfig::default()).unwrap();
    for (v, &x) in map.values.iter().zip(img.data()) {
        assert!((*v as f64 - x as f64 * 2.0 / 16.0).abs() < 1e-6);
    }
    let ready = grad_cam(&m, &img, "x", ClassLabel::Ready, &GradCamConfig::default()).unwrap();
    assert!(ready.values.iter().all(|&v| v == 0.0));
}

#[test]
fn gradcam_requires_gradients() {
    let img = pattern_image(8, 8, 1);
    let err = grad_cam(&Constant, &img, "x", ClassLabel::Ready, &GradCamConfig::default()).unwrap_err();
    assert!(matches!(err, Error::UnsupportedExplainer));
}

#[test]
fn lime_constant_classifier_gives_zero_coefficients() {
    let img = pattern_image(16, 16, 3);
    let cfg = LimeConfig {
        cell_size: 4,
        sample_count: 200,
        ..Default::default()
    };
    let fit = lime_fit(&Constant, &img, ClassLabel::Ready, &cfg, &[0.0; 3]).unwrap();
    assert!((fit.intercept - 0.7).abs() < 1e-9);
    assert!(fit.coefficients.iter().all(|c| c.abs() < 1e-9), "{:?}", fit.coefficients);
}

#[test]
fn lime_recovers_segment_linear_scorer() {
    // with fill 0 the linear scorer is linear in the segment indicators:
    // coefficient_s = Σ_{pixels in s} w_i x_i
    let (h, w, c) = (12, 12, 2);
    let img = pattern_image(h, w, c);
    let scorer = linear_scorer(h * w * c, 7);
    let cfg = LimeConfig {
        cell_size: 4,
        sample_count: 60,
        fill: Fill::Zero,
        seed: 5,
        ..Default::default()
    };
    let fit = lime_fit(&scorer, &img, ClassLabel::Ready, &cfg, &[0.0; 2]).unwrap();
    let mut truth = vec![0.0; fit.segments.count()];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let i = (ch * h + y) * w + x;
                truth[fit.segments.segment_of(y, x)] += scorer.weights[i] * img.data()[i] as f64;
            }
        }
    }
    for (got, want) in fit.coefficients.iter().zip(&truth) {
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
    }
    assert!((fit.intercept - scorer.bias).abs() < 1e-6);
}

/// Brute-force normal equations with explicit matrices and Gaussian
/// elimination, independent of the production solver.
fn brute_force_ols(masks: &[Vec<bool>], y: &[f64]) -> Vec<f64> {
    let d = masks[0].len() + 1;
    let mut a = vec![vec![0.0; d + 1]; d];
    for (z, &t) in masks.iter().zip(y) {
        let row: Vec<f64> = std::iter::once(1.0).chain(z.iter().map(|&b| if b { 1.0 } else { 0.0 })).collect();
        for i in 0..d {
            for j in 0..d {
                a[i][j] += row[i] * row[j];
            }
            a[i][d] += row[i] * t;
        }
    }
    for col in 0..d {
        let piv = (col..d).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        for r in 0..d {
            if r != col {
                let f = a[r][col] / a[col][col];
                for k in col..=d {
                    a[r][k] -= f * a[col][k];
                }
            }
        }
    }
    (0..d).map(|i| a[i][d] / a[i][i]).collect()
}

#[test]
fn lime_exhaustive_matches_brute_force() {
    struct Nonlinear;
    impl Classifier for Nonlinear {
        fn predict(&self, image: &ImageTensor) -> Result<ClassScores> {
            let m = image.channel_means()[0] as f64;
            let s = (m * m * 3.0 + 0.1 * (image.get(0, 0, 0) as f64)).min(1.0);
            ClassScores::new([1.0 - s, s])
        }
    }
    let img = pattern_image(9, 12, 1);
    let cfg = LimeConfig {
        cell_size: 3,
        sampling: MaskSampling::Exhaustive,
        kernel: LimeKernel::Uniform,
        fill: Fill::Zero,
        ..Default::default()
    };
    let fit = lime_fit(&Nonlinear, &img, ClassLabel::Ready, &cfg, &[0.0]).unwrap();
    assert_eq!(fit.segments.count(), 12);
    let masks = sample_masks(12, &cfg, 0).unwrap();
    assert_eq!(masks.len(), 4096);
    let y: Vec<f64> = masks
        .iter()
        .map(|z| Nonlinear.predict(&perturb(&img, &fit.segments, z, &[0.0])).unwrap().of(ClassLabel::Ready))
        .collect();
    let beta = brute_force_ols(&masks, &y);
    assert!((beta[0] - fit.intercept).abs() < 1e-9);
    for (b, c) in beta[1..].iter().zip(&fit.coefficients) {
        assert!((b - c).abs() < 1e-9, "{b} vs {c}");
    }
}

#[test]
fn lime_degenerate_design_is_reported() {
    // two identical columns: both segments always on together
    let masks = vec![vec![true, true], vec![false, false], vec![true, true], vec![false, false]];
    let err = weighted_least_squares(&masks, &[1.0, 0.0, 1.0, 0.0], &[1.0; 4]).unwrap_err();
    assert!(matches!(err, Error::SurrogateDegenerate(_)), "{err}");
}

#[test]
fn lime_config_invariants() {
    let cfg = LimeConfig {
        sample_count: 64,
        ..Default::default()
    };
    assert!(sample_masks(64, &cfg, 0).is_err());
    let cfg = LimeConfig {
        mask_probability: 1.0,
        ..Default::default()
    };
    assert!(sample_masks(4, &cfg, 0).is_err());
}

#[test]
fn kernel_weights() {
    let k = LimeKernel::Exponential { width: 0.25 };
    assert_eq!(kernel_weight(k, &[true; 4]), 1.0);
    let half = kernel_weight(k, &[true, true, false, false]);
    let d: f64 = 1.0 - 0.5f64.sqrt();
    assert!((half - (-d * d / 0.0625).exp()).abs() < 1e-12);
    assert_eq!(kernel_weight(LimeKernel::Uniform, &[false; 3]), 1.0);
}

fn samples(n: usize) -> Vec<Sample> {
    (0..n)
        .map(|i| Sample {
            id: format!("img{i}"),
            image: pattern_image(16, 16, 3),
            label: ClassLabel::Ready,
        })
        .collect()
}

#[test]
fn batch_explain_counts_and_duplicates() {
    let model = MiniCnn::new(Architecture::default(), 5).unwrap();
    assert!(batch_explain(&model, &[], &ExplainConfig::default()).unwrap().is_empty());
    let mut input = samples(196);
    input.truncate(196);
    let cfg = ExplainConfig {
        method: SaliencyMethod::GradCam,
        ..Default::default()
    };
    let out = batch_explain(&model, &input, &cfg).unwrap();
    assert_eq!(out.len(), 196);
    assert_eq!(out[0].map.image_id, "img0");
    assert_eq!(out[0].map.explained_class, out[0].scores.argmax());

    let lime = ExplainConfig {
        method: SaliencyMethod::Lime,
        lime: LimeConfig {
            cell_size: 8,
            sample_count: 20,
            seed: 3,
            ..Default::default()
        },
        ..Default::default()
    };
    let maps = batch_explain(&model, &input[..2], &lime).unwrap();
    assert_eq!(maps[0].map.values, maps[1].map.values);
}

#[test]
fn batch_errors_name_the_image() {
    let input = samples(2);
    let cfg = ExplainConfig {
        method: SaliencyMethod::GradCam,
        ..Default::default()
    };
    let err = batch_explain(&Constant, &input, &cfg).unwrap_err();
    assert!(err.to_string().contains("img0") || err.to_string().contains("img1"), "{err}");
}

#[test]
fn map_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let model = MiniCnn::new(Architecture::default(), 5).unwrap();
    let cfg = ExplainConfig {
        method: SaliencyMethod::Osm,
        dataset_mean: Some(vec![0.2, 0.3, 0.4]),
        ..Default::default()
    };
    let e = explain(&model, &pattern_image(16, 16, 3), "a-1", &cfg).unwrap();
    let path = write_map(dir.path(), &e, &cfg).unwrap();
    assert!(path.ends_with("a-1.osm.smap"));
    let (map, side) = read_map(&path).unwrap();
    assert_eq!(map, e.map);
    assert_eq!(side.config_digest, cfg.digest());
    assert_eq!(side.config["params"]["patch_size"], 11);
    assert_eq!(side.config["params"]["stride"], 2);
    assert_eq!(side.scores().unwrap(), e.scores);
    std::fs::write(&path, [0u8; 7]).unwrap();
    assert!(read_map(&path).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn gradcam_is_nonnegative_and_image_sized(seed in 0u64..1000, side in 8usize..24) {
        let m = MiniCnn::new(Architecture::default(), seed).unwrap();
        let img = pattern_image(side, side + 3, 3);
        for class in ClassLabel::ALL {
            let map = grad_cam(&m, &img, "x", class, &GradCamConfig::default()).unwrap();
            prop_assert!(map.min() >= 0.0);
            prop_assert_eq!((map.height, map.width), (side, side + 3));
        }
    }

    #[test]
    fn occlusion_linear_equivalence(seed in 0u64..1000, p in 1usize..6, s in 1usize..4) {
        let s = s.min(p);
        let img = pattern_image(10, 10, 1);
        let scorer = linear_scorer(100, seed);
        let cfg = OcclusionConfig { patch_size: p, stride: s, fill: Fill::Zero };
        let grid = occlusion_deltas(&scorer, &img, ClassLabel::Ready, &cfg, &[0.0]).unwrap();
        for (r, &y0) in grid.rows.iter().enumerate() {
            for (k, &x0) in grid.cols.iter().enumerate() {
                let mut expected = 0.0;
                for y in y0..y0 + p {
                    for x in x0..x0 + p {
                        expected += scorer.weights[y * 10 + x] * img.data()[y * 10 + x] as f64;
                    }
                }
                prop_assert!((grid.deltas[r * grid.cols.len() + k] - expected).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn explainers_are_deterministic(seed in 0u64..100) {
        let m = MiniCnn::new(Architecture::default(), seed).unwrap();
        let img = pattern_image(16, 16, 3);
        for method in [SaliencyMethod::GradCam, SaliencyMethod::Osm, SaliencyMethod::Lime] {
            let cfg = ExplainConfig {
                method,
                osm: OcclusionConfig { patch_size: 5, stride: 4, ..Default::default() },
                lime: LimeConfig { cell_size: 8, sample_count: 40, seed, ..Default::default() },
                ..Default::default()
            };
            let a = explain(&m, &img, "x", &cfg).unwrap();
            let b = explain(&m, &img, "x", &cfg).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
