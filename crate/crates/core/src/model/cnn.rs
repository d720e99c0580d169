//! A small differentiable CNN: `[conv3x3 → ReLU → maxpool2] × n → global average pool → dense`.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor3;
use super::{ActivationStack, Classifier, GradientStack, LayerId};
use crate::error::{Error, Result};
use crate::seed::rng;
use crate::types::{ClassLabel, ClassScores, ImageTensor};

pub const NUM_CLASSES: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_channels: usize,
    /// Output channels of each conv block.
    pub conv_channels: Vec<usize>,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            input_channels: 3,
            conv_channels: vec![8, 16, 32],
        }
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.input_channels == 0 || self.conv_channels.is_empty() || self.conv_channels.contains(&0) {
            return Err(Error::invalid("architecture needs positive channel counts and >= 1 conv block"));
        }
        Ok(())
    }

    pub fn block_inputs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        std::iter::once(self.input_channels)
            .chain(self.conv_channels.iter().copied())
            .zip(self.conv_channels.iter().copied())
    }

    /// Names and shapes of the parameter tensors in declaration order.
    pub fn tensor_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (i, (cin, cout)) in self.block_inputs().enumerate() {
            out.push((format!("conv{}.weight", i + 1), vec![cout, cin, 3, 3]));
            out.push((format!("conv{}.bias", i + 1), vec![cout]));
        }
        let last = *self.conv_channels.last().expect("validated non-empty");
        out.push(("dense.weight".into(), vec![NUM_CLASSES, last]));
        out.push(("dense.bias".into(), vec![NUM_CLASSES]));
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiniCnn {
    arch: Architecture,
    /// Parameter tensors in [`Architecture::tensor_shapes`] order.
    params: Vec<Vec<f32>>,
}

/// Intermediate values of one conv block.
#[derive(Debug, Clone)]
pub struct BlockTrace {
    pub input: Tensor3,
    pub pre: Tensor3,
    /// Post-ReLU conv output; the tensor Grad-CAM explains.
    pub act: Tensor3,
    pub pooled: Tensor3,
    argmax: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub blocks: Vec<BlockTrace>,
    pub features: Vec<f64>,
    pub logits: [f64; 2],
}

impl ForwardTrace {
    /// ReLU signs and pool winners of every block.
    pub fn pattern(&self) -> ActivationPattern {
        let mut p = Vec::new();
        for b in &self.blocks {
            p.extend(b.pre.data.iter().map(|&v| u32::from(v > 0.0)));
            p.extend(b.argmax.iter().map(|&i| i as u32));
        }
        ActivationPattern(p)
    }
}

#[derive(Debug, Clone)]
pub struct Forward {
    pub scores: ClassScores,
    pub logits: [f64; 2],
    pub trace: Option<ForwardTrace>,
}

/// ReLU signs and pooling winners downstream of a layer; two evaluations with
/// equal patterns lie in the same linear region of the network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivationPattern(Vec<u32>);

impl MiniCnn {
    /// He-uniform (fan-in) weights, zero biases.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut r = rng(seed);
        let params = arch
            .tensor_shapes()
            .into_iter()
            .map(|(name, shape)| {
                let len: usize = shape.iter().product();
                if name.ends_with(".bias") {
                    return vec![0.0; len];
                }
                let fan_in: usize = shape[1..].iter().product();
                let bound = (6.0 / fan_in as f64).sqrt();
                (0..len).map(|_| r.random_range(-bound..bound) as f32).collect()
            })
            .collect();
        Ok(Self { arch, params })
    }

    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let params = arch
            .tensor_shapes()
            .into_iter()
            .map(|(_, s)| vec![0.0; s.iter().product()])
            .collect();
        Ok(Self { arch, params })
    }

    pub fn from_params(arch: Architecture, params: Vec<Vec<f32>>) -> Result<Self> {
        arch.validate()?;
        let shapes = arch.tensor_shapes();
        if shapes.len() != params.len() {
            return Err(Error::invalid(format!(
                "expected {} parameter tensors, got {}",
                shapes.len(),
                params.len()
            )));
        }
        for ((name, shape), p) in shapes.iter().zip(&params) {
            let len: usize = shape.iter().product();
            if p.len() != len {
                return Err(Error::ShapeMismatch {
                    expected: format!("{name} with {len} values"),
                    got: format!("{} values", p.len()),
                });
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("{name} contains non-finite values")));
            }
        }
        Ok(Self { arch, params })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[Vec<f32>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Vec<f32>] {
        &mut self.params
    }

    pub fn num_blocks(&self) -> usize {
        self.arch.conv_channels.len()
    }

    pub fn last_conv_layer(&self) -> LayerId {
        LayerId(self.num_blocks() - 1)
    }

    pub fn conv_weight_mut(&mut self, layer: usize) -> &mut [f32] {
        &mut self.params[2 * layer]
    }

    pub fn conv_bias_mut(&mut self, layer: usize) -> &mut [f32] {
        &mut self.params[2 * layer + 1]
    }

    pub fn dense_weight_mut(&mut self) -> &mut [f32] {
        let n = self.params.len();
        &mut self.params[n - 2]
    }

    pub fn dense_bias_mut(&mut self) -> &mut [f32] {
        let n = self.params.len();
        &mut self.params[n - 1]
    }

    fn conv_params(&self, layer: usize) -> (&[f32], &[f32]) {
        (&self.params[2 * layer], &self.params[2 * layer + 1])
    }

    fn dense_params(&self) -> (&[f32], &[f32]) {
        let n = self.params.len();
        (&self.params[n - 2], &self.params[n - 1])
    }

    pub fn check_input(&self, image: &ImageTensor) -> Result<()> {
        let min_side = 1usize << self.num_blocks();
        if image.channels() != self.arch.input_channels
            || image.height() < min_side
            || image.width() < min_side
        {
            return Err(Error::ShapeMismatch {
                expected: format!(
                    "{} channels and side >= {min_side}",
                    self.arch.input_channels
                ),
                got: format!("{}x{}x{}", image.channels(), image.height(), image.width()),
            });
        }
        Ok(())
    }

    fn check_layer(&self, layer: LayerId) -> Result<()> {
        if layer.0 >= self.num_blocks() {
            return Err(Error::UnknownLayer(layer.to_string()));
        }
        Ok(())
    }

    pub fn forward(&self, image: &ImageTensor, keep_trace: bool) -> Result<Forward> {
        self.check_input(image)?;
        let mut x = Tensor3::from_image(image);
        let mut blocks = Vec::with_capacity(if keep_trace { self.num_blocks() } else { 0 });
        for layer in 0..self.num_blocks() {
            let (w, b) = self.conv_params(layer);
            let pre = conv3x3(&x, w, b);
            let act = relu(&pre);
            let (pooled, argmax) = maxpool2(&act);
            if keep_trace {
                blocks.push(BlockTrace {
                    input: std::mem::replace(&mut x, pooled.clone()),
                    pre,
                    act,
                    pooled,
                    argmax,
                });
            } else {
                x = pooled;
            }
        }
        let features = global_average(&x);
        let logits = self.dense(&features);
        Ok(Forward {
            scores: ClassScores::from_logits(logits),
            logits,
            trace: keep_trace.then_some(ForwardTrace {
                blocks,
                features,
                logits,
            }),
        })
    }

    fn dense(&self, features: &[f64]) -> [f64; 2] {
        let (w, b) = self.dense_params();
        let n = features.len();
        let mut out = [0.0; 2];
        for (k, o) in out.iter_mut().enumerate() {
            let row = &w[k * n..(k + 1) * n];
            *o = b[k] as f64 + row.iter().zip(features).map(|(&w, f)| w as f64 * f).sum::<f64>();
        }
        out
    }

    /// Continue the forward pass from the post-ReLU output of `layer`.
    pub fn logits_from_activation(
        &self,
        layer: LayerId,
        act: &Tensor3,
    ) -> Result<([f64; 2], ActivationPattern)> {
        self.check_layer(layer)?;
        let expected = self.arch.conv_channels[layer.0];
        if act.channels != expected {
            return Err(Error::ShapeMismatch {
                expected: format!("{expected} channels"),
                got: format!("{} channels", act.channels),
            });
        }
        let mut pattern = Vec::new();
        let (mut x, argmax) = maxpool2(act);
        pattern.extend(argmax.iter().map(|&i| i as u32));
        for l in layer.0 + 1..self.num_blocks() {
            let (w, b) = self.conv_params(l);
            let pre = conv3x3(&x, w, b);
            pattern.extend(pre.data.iter().map(|&v| u32::from(v > 0.0)));
            let (pooled, argmax) = maxpool2(&relu(&pre));
            pattern.extend(argmax.iter().map(|&i| i as u32));
            x = pooled;
        }
        Ok((self.dense(&global_average(&x)), ActivationPattern(pattern)))
    }

    /// Backpropagate `dlogits` through a trace.
    ///
    /// Stops at the post-ReLU output of `stop_at` when given, returning its
    /// gradient; otherwise runs to the input and returns parameter gradients.
    fn backward(
        &self,
        trace: &ForwardTrace,
        dlogits: [f64; 2],
        stop_at: Option<usize>,
    ) -> (Option<Vec<Vec<f64>>>, Option<Tensor3>) {
        let want_params = stop_at.is_none();
        let mut grads: Vec<Vec<f64>> = if want_params {
            self.params.iter().map(|p| vec![0.0; p.len()]).collect()
        } else {
            Vec::new()
        };
        let (dw, _) = self.dense_params();
        let nfeat = trace.features.len();
        let mut dfeat = vec![0.0; nfeat];
        for k in 0..NUM_CLASSES {
            for c in 0..nfeat {
                dfeat[c] += dw[k * nfeat + c] as f64 * dlogits[k];
            }
        }
        if want_params {
            let n = grads.len();
            for k in 0..NUM_CLASSES {
                for c in 0..nfeat {
                    grads[n - 2][k * nfeat + c] = dlogits[k] * trace.features[c];
                }
                grads[n - 1][k] = dlogits[k];
            }
        }

        let last = trace.blocks.last().expect("trace has blocks");
        let area = last.pooled.plane_len() as f64;
        let mut dpooled = Tensor3::zeros(last.pooled.channels, last.pooled.height, last.pooled.width);
        for c in 0..nfeat {
            dpooled.plane_mut(c).fill(dfeat[c] / area);
        }

        for layer in (0..trace.blocks.len()).rev() {
            let block = &trace.blocks[layer];
            let mut dact = Tensor3::zeros(block.act.channels, block.act.height, block.act.width);
            let plane_in = block.act.plane_len();
            let plane_out = block.pooled.plane_len();
            for c in 0..block.pooled.channels {
                for j in 0..plane_out {
                    let src = block.argmax[c * plane_out + j];
                    dact.data[c * plane_in + src] += dpooled.data[c * plane_out + j];
                }
            }
            if stop_at == Some(layer) {
                return (None, Some(dact));
            }
            for (d, &p) in dact.data.iter_mut().zip(&block.pre.data) {
                if p <= 0.0 {
                    *d = 0.0;
                }
            }
            let (w, _) = self.conv_params(layer);
            let need_input_grad = layer > 0;
            let (gw, gb, dinput) = conv3x3_backward(&block.input, w, &dact, need_input_grad);
            if want_params {
                grads[2 * layer] = gw;
                grads[2 * layer + 1] = gb;
            }
            if let Some(d) = dinput {
                dpooled = d;
            }
        }
        (Some(grads), None)
    }

    /// Gradient of the pre-softmax score of `class` w.r.t. the post-ReLU output of `layer`.
    pub fn backward_to_layer(
        &self,
        image: &ImageTensor,
        class: ClassLabel,
        layer: LayerId,
    ) -> Result<(ActivationStack, GradientStack)> {
        self.check_layer(layer)?;
        let fwd = self.forward(image, true)?;
        let trace = fwd.trace.expect("trace requested");
        let mut dlogits = [0.0; 2];
        dlogits[class.index()] = 1.0;
        let (_, dact) = self.backward(&trace, dlogits, Some(layer.0));
        let activation = trace.blocks[layer.0].act.clone();
        Ok((
            ActivationStack {
                layer,
                tensor: activation,
            },
            GradientStack {
                layer,
                tensor: dact.expect("stopped at layer"),
            },
        ))
    }

    /// Cross-entropy loss and parameter gradients for one labeled image.
    pub fn loss_and_gradients(
        &self,
        image: &ImageTensor,
        label: ClassLabel,
    ) -> Result<(f64, ClassScores, Vec<Vec<f64>>)> {
        let fwd = self.forward(image, true)?;
        let p = fwd.scores.probabilities();
        let loss = -(p[label.index()].max(1e-300)).ln();
        let mut dlogits = p;
        dlogits[label.index()] -= 1.0;
        let (grads, _) = self.backward(fwd.trace.as_ref().expect("trace requested"), dlogits, None);
        Ok((loss, fwd.scores, grads.expect("full backward")))
    }
}

impl Classifier for MiniCnn {
    fn predict(&self, image: &ImageTensor) -> Result<ClassScores> {
        Ok(self.forward(image, false)?.scores)
    }

    fn activations_and_gradients(
        &self,
        image: &ImageTensor,
        class: ClassLabel,
        layer: Option<LayerId>,
    ) -> Result<(ActivationStack, GradientStack)> {
        self.backward_to_layer(image, class, layer.unwrap_or_else(|| self.last_conv_layer()))
    }

    fn supports_gradients(&self) -> bool {
        true
    }
}

/// 3×3 convolution, stride 1, zero padding 1.
fn conv3x3(input: &Tensor3, weight: &[f32], bias: &[f32]) -> Tensor3 {
    let cin = input.channels;
    let cout = bias.len();
    let (h, w) = (input.height, input.width);
    let mut out = Tensor3::zeros(cout, h, w);
    for o in 0..cout {
        let plane = out.plane_mut(o);
        plane.fill(bias[o] as f64);
        for i in 0..cin {
            let src = input.plane(i);
            for ky in 0..3 {
                for kx in 0..3 {
                    let wv = weight[((o * cin + i) * 3 + ky) * 3 + kx] as f64;
                    if wv == 0.0 {
                        continue;
                    }
                    for_each_tap(h, w, ky, kx, |orange, srange| {
                        for (d, s) in plane[orange].iter_mut().zip(&src[srange]) {
                            *d += wv * s;
                        }
                    });
                }
            }
        }
    }
    out
}

/// Calls `f(out_range, src_range)` for every output row touched by kernel tap `(ky, kx)`.
#[inline]
fn for_each_tap(
    h: usize,
    w: usize,
    ky: usize,
    kx: usize,
    mut f: impl FnMut(std::ops::Range<usize>, std::ops::Range<usize>),
) {
    let dy = ky as isize - 1;
    let dx = kx as isize - 1;
    let x0 = (-dx).max(0) as usize;
    let x1 = (w as isize - dx).min(w as isize) as usize;
    if x0 >= x1 {
        return;
    }
    for y in 0..h {
        let sy = y as isize + dy;
        if sy < 0 || sy >= h as isize {
            continue;
        }
        let sy = sy as usize;
        let sx0 = (x0 as isize + dx) as usize;
        f(y * w + x0..y * w + x1, sy * w + sx0..sy * w + sx0 + (x1 - x0));
    }
}

fn conv3x3_backward(
    input: &Tensor3,
    weight: &[f32],
    dout: &Tensor3,
    need_input_grad: bool,
) -> (Vec<f64>, Vec<f64>, Option<Tensor3>) {
    let cin = input.channels;
    let cout = dout.channels;
    let (h, w) = (input.height, input.width);
    let mut gw = vec![0.0; cout * cin * 9];
    let gb: Vec<f64> = (0..cout).map(|o| dout.plane(o).iter().sum()).collect();
    let mut din = need_input_grad.then(|| Tensor3::zeros(cin, h, w));
    for o in 0..cout {
        let g = dout.plane(o);
        for i in 0..cin {
            let src = input.plane(i);
            for ky in 0..3 {
                for kx in 0..3 {
                    let idx = ((o * cin + i) * 3 + ky) * 3 + kx;
                    let mut acc = 0.0;
                    for_each_tap(h, w, ky, kx, |orange, srange| {
                        acc += g[orange].iter().zip(&src[srange]).map(|(a, b)| a * b).sum::<f64>();
                    });
                    gw[idx] = acc;
                    if let Some(din) = din.as_mut() {
                        let wv = weight[idx] as f64;
                        if wv == 0.0 {
                            continue;
                        }
                        let dplane = din.plane_mut(i);
                        for_each_tap(h, w, ky, kx, |orange, srange| {
                            for (d, gv) in dplane[srange].iter_mut().zip(&g[orange]) {
                                *d += wv * gv;
                            }
                        });
                    }
                }
            }
        }
    }
    (gw, gb, din)
}

fn relu(x: &Tensor3) -> Tensor3 {
    Tensor3 {
        data: x.data.iter().map(|&v| v.max(0.0)).collect(),
        ..*x
    }
}

/// 2×2 max pooling, stride 2 (odd trailing rows/columns dropped). Returns the
/// winning in-plane index per output; ties go to the first in scan order.
fn maxpool2(x: &Tensor3) -> (Tensor3, Vec<usize>) {
    let (h, w) = (x.height / 2, x.width / 2);
    let mut out = Tensor3::zeros(x.channels, h, w);
    let mut argmax = vec![0; x.channels * h * w];
    for c in 0..x.channels {
        let src = x.plane(c);
        for y in 0..h {
            for xx in 0..w {
                let mut best_i = (2 * y) * x.width + 2 * xx;
                let mut best = src[best_i];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = (2 * y + dy) * x.width + 2 * xx + dx;
                    if src[i] > best {
                        best = src[i];
                        best_i = i;
                    }
                }
                out.data[(c * h + y) * w + xx] = best;
                argmax[(c * h + y) * w + xx] = best_i;
            }
        }
    }
    (out, argmax)
}

fn global_average(x: &Tensor3) -> Vec<f64> {
    let n = x.plane_len() as f64;
    (0..x.channels).map(|c| x.plane(c).iter().sum::<f64>() / n).collect()
}
