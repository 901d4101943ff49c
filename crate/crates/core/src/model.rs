//! Frozen five-block convolutional feature extractor and a trainable
//! softmax classification head.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::ClassLabel;
use crate::error::{Error, Result};
use crate::imaging::FeatureImage;
use crate::matrix::Tensor3;

pub const N_CLASSES: usize = 4;
pub const N_BLOCKS: usize = 5;
const PROB_FLOOR: f64 = 1e-12;

/// 3×3 convolution weights, laid out `[ky][kx][cin][cout]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    in_channels: usize,
    out_channels: usize,
    kernels: Vec<f32>,
    bias: Vec<f32>,
}

impl ConvLayer {
    pub fn new(in_channels: usize, out_channels: usize, kernels: Vec<f32>, bias: Vec<f32>) -> Result<Self> {
        if kernels.len() != 9 * in_channels * out_channels || bias.len() != out_channels {
            return Err(Error::Shape(format!(
                "conv {in_channels}->{out_channels}: got {} kernel and {} bias values",
                kernels.len(),
                bias.len()
            )));
        }
        Ok(ConvLayer {
            in_channels,
            out_channels,
            kernels,
            bias,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn kernels(&self) -> &[f32] {
        &self.kernels
    }

    pub fn bias(&self) -> &[f32] {
        &self.bias
    }
}

/// Cross-correlation with a 3×3 kernel, zero "same" padding, stride 1.
pub fn conv2d(input: &Tensor3, kernels: &[f32], bias: &[f32]) -> Result<Tensor3> {
    let cin = input.channels;
    let cout = bias.len();
    if cout == 0 || kernels.len() != 9 * cin * cout {
        return Err(Error::Shape(format!(
            "input has {cin} channels; kernels hold {} values for {cout} outputs",
            kernels.len()
        )));
    }
    let (h, w) = (input.height, input.width);
    let mut out = Tensor3::zeros(h, w, cout);
    // f64 accumulation keeps long channel sums within f32 output rounding.
    let mut acc = vec![0f64; cout];
    for y in 0..h {
        for x in 0..w {
            for (a, &b) in acc.iter_mut().zip(bias) {
                *a = b as f64;
            }
            for ky in 0..3 {
                let yy = y as isize + ky as isize - 1;
                if yy < 0 || yy >= h as isize {
                    continue;
                }
                for kx in 0..3 {
                    let xx = x as isize + kx as isize - 1;
                    if xx < 0 || xx >= w as isize {
                        continue;
                    }
                    let px = input.pixel(yy as usize, xx as usize);
                    let kbase = (ky * 3 + kx) * cin * cout;
                    for (ci, &v) in px.iter().enumerate() {
                        if v == 0.0 {
                            continue;
                        }
                        let v = v as f64;
                        let row = &kernels[kbase + ci * cout..kbase + (ci + 1) * cout];
                        for (a, &k) in acc.iter_mut().zip(row) {
                            *a += v * k as f64;
                        }
                    }
                }
            }
            let o = (y * w + x) * cout;
            for (dst, &a) in out.data[o..o + cout].iter_mut().zip(&acc) {
                *dst = a as f32;
            }
        }
    }
    Ok(out)
}

pub fn relu(t: &Tensor3) -> Tensor3 {
    let mut out = t.clone();
    relu_in_place(&mut out);
    out
}

fn relu_in_place(t: &mut Tensor3) {
    for v in &mut t.data {
        *v = v.max(0.0);
    }
}

/// 2×2 max pooling, stride 2; odd edges pool over the pixels that exist.
pub fn maxpool2(t: &Tensor3) -> Tensor3 {
    let (h, w, c) = t.shape();
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = Tensor3::zeros(oh, ow, c);
    for oy in 0..oh {
        for ox in 0..ow {
            let o = (oy * ow + ox) * c;
            out.data[o..o + c].copy_from_slice(t.pixel(2 * oy, 2 * ox));
            for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                let (y, x) = (2 * oy + dy, 2 * ox + dx);
                if y < h && x < w {
                    for (dst, &v) in out.data[o..o + c].iter_mut().zip(t.pixel(y, x)) {
                        *dst = dst.max(v);
                    }
                }
            }
        }
    }
    out
}

/// Convolutions per block and output channels per block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChannelPlan {
    pub out_channels: [usize; N_BLOCKS],
    pub convs_per_block: [usize; N_BLOCKS],
}

impl ChannelPlan {
    /// VGG16's block layout at a fraction of the width.
    pub const DESK: ChannelPlan = ChannelPlan {
        out_channels: [8, 16, 32, 64, 64],
        convs_per_block: [2, 2, 3, 3, 3],
    };

    pub const VGG16: ChannelPlan = ChannelPlan {
        out_channels: [64, 128, 256, 512, 512],
        convs_per_block: [2, 2, 3, 3, 3],
    };

    pub fn validate(&self) -> Result<()> {
        if self.out_channels.contains(&0) || self.convs_per_block.contains(&0) {
            return Err(Error::InvalidArgument(format!("degenerate channel plan {self:?}")));
        }
        Ok(())
    }

    /// Flattened feature length for an `h × w` input.
    pub fn feature_dim(&self, h: usize, w: usize) -> usize {
        let (mut h, mut w) = (h, w);
        for _ in 0..N_BLOCKS {
            h = h.div_ceil(2);
            w = w.div_ceil(2);
        }
        h * w * self.out_channels[N_BLOCKS - 1]
    }
}

impl Default for ChannelPlan {
    fn default() -> Self {
        ChannelPlan::DESK
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExtractorSource<'a> {
    Seeded(u64),
    WeightFile(&'a Path),
}

/// Five convolutional blocks with fixed weights. There is no mutable access
/// to the weights once built.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractor {
    in_channels: usize,
    plan: ChannelPlan,
    blocks: Vec<Vec<ConvLayer>>,
    provenance: String,
}

impl FeatureExtractor {
    pub fn plan(&self) -> ChannelPlan {
        self.plan
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn blocks(&self) -> &[Vec<ConvLayer>] {
        &self.blocks
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn is_frozen(&self) -> bool {
        true
    }

    pub fn feature_dim(&self, h: usize, w: usize) -> usize {
        self.plan.feature_dim(h, w)
    }

    fn tensor_names(&self) -> Vec<(String, &ConvLayer)> {
        let mut out = Vec::new();
        for (b, block) in self.blocks.iter().enumerate() {
            for (i, layer) in block.iter().enumerate() {
                out.push((format!("block{}.conv{}", b + 1, i + 1), layer));
            }
        }
        out
    }

    /// Serializes all kernels and biases as a weight file.
    pub fn to_weight_file(&self) -> WeightFile {
        let mut wf = WeightFile::default();
        for (name, layer) in self.tensor_names() {
            wf.tensors.push(NamedTensor {
                name: format!("{name}.weight"),
                dims: vec![3, 3, layer.in_channels as u32, layer.out_channels as u32],
                values: layer.kernels.clone(),
            });
            wf.tensors.push(NamedTensor {
                name: format!("{name}.bias"),
                dims: vec![layer.out_channels as u32],
                values: layer.bias.clone(),
            });
        }
        wf
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_weight_file().save(path)
    }
}

/// Builds the extractor from seeded He-normal kernels (zero biases) or from
/// a weight file whose tensors must match `plan` exactly.
pub fn build_extractor(
    source: ExtractorSource<'_>,
    plan: ChannelPlan,
    in_channels: usize,
) -> Result<FeatureExtractor> {
    plan.validate()?;
    if in_channels == 0 {
        return Err(Error::InvalidArgument("extractor needs at least one input channel".into()));
    }
    let mut shapes = Vec::new();
    let mut cin = in_channels;
    for b in 0..N_BLOCKS {
        let cout = plan.out_channels[b];
        let mut layers = Vec::new();
        for _ in 0..plan.convs_per_block[b] {
            layers.push((cin, cout));
            cin = cout;
        }
        shapes.push(layers);
    }
    let (blocks, provenance) = match source {
        ExtractorSource::Seeded(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let blocks = shapes
                .iter()
                .map(|layers| {
                    layers
                        .iter()
                        .map(|&(cin, cout)| {
                            let std = (2.0 / (9 * cin) as f64).sqrt();
                            let dist = Normal::new(0.0, std).expect("positive std");
                            let kernels = (0..9 * cin * cout).map(|_| dist.sample(&mut rng) as f32).collect();
                            ConvLayer::new(cin, cout, kernels, vec![0.0; cout])
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            (blocks, format!("seeded:{seed}"))
        }
        ExtractorSource::WeightFile(path) => {
            let wf = WeightFile::load(path)?;
            let mut problems = Vec::new();
            let mut blocks = Vec::new();
            for (b, layers) in shapes.iter().enumerate() {
                let mut block = Vec::new();
                for (i, &(cin, cout)) in layers.iter().enumerate() {
                    let stem = format!("block{}.conv{}", b + 1, i + 1);
                    let w = wf.expect(&format!("{stem}.weight"), &[3, 3, cin as u32, cout as u32], &mut problems);
                    let bias = wf.expect(&format!("{stem}.bias"), &[cout as u32], &mut problems);
                    if let (Some(w), Some(bias)) = (w, bias) {
                        block.push(ConvLayer::new(cin, cout, w.values.clone(), bias.values.clone())?);
                    }
                }
                blocks.push(block);
            }
            if !problems.is_empty() {
                return Err(Error::WeightLoad(format!("{}: {}", path.display(), problems.join("; "))));
            }
            (blocks, format!("file:{}", path.display()))
        }
    };
    Ok(FeatureExtractor {
        in_channels,
        plan,
        blocks,
        provenance,
    })
}

/// Runs every block (convs + ReLU, then 2×2 max pool) and flattens in HWC order.
pub fn extract_features(img: &FeatureImage, fx: &FeatureExtractor) -> Result<Vec<f32>> {
    let t = img.tensor();
    if t.channels != fx.in_channels {
        return Err(Error::Shape(format!(
            "image has {} channels, extractor expects {}",
            t.channels, fx.in_channels
        )));
    }
    let mut cur = t.clone();
    for block in &fx.blocks {
        for layer in block {
            cur = conv2d(&cur, &layer.kernels, &layer.bias)?;
            relu_in_place(&mut cur);
        }
        cur = maxpool2(&cur);
    }
    Ok(cur.data)
}

/// Numerically stable softmax.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn cross_entropy(p: &[f64], y: ClassLabel) -> f64 {
    -p[y.index()].max(PROB_FLOOR).ln()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Linear softmax classifier over extractor features.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    dim: usize,
    /// Row-major `N_CLASSES × dim`, rows in internal class order.
    weights: Vec<f64>,
    bias: [f64; N_CLASSES],
}

impl ClassifierHead {
    pub fn zeros(dim: usize) -> Self {
        ClassifierHead {
            dim,
            weights: vec![0.0; N_CLASSES * dim],
            bias: [0.0; N_CLASSES],
        }
    }

    pub fn from_parts(dim: usize, weights: Vec<f64>, bias: [f64; N_CLASSES]) -> Result<Self> {
        if weights.len() != N_CLASSES * dim {
            return Err(Error::Shape(format!(
                "head weights hold {} values, expected {}",
                weights.len(),
                N_CLASSES * dim
            )));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("head weights must be finite".into()));
        }
        Ok(ClassifierHead { dim, weights, bias })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64; N_CLASSES] {
        &self.bias
    }

    pub fn logits(&self, x: &[f32]) -> [f64; N_CLASSES] {
        let mut z = self.bias;
        for (k, zk) in z.iter_mut().enumerate() {
            let row = &self.weights[k * self.dim..(k + 1) * self.dim];
            *zk += row.iter().zip(x).map(|(w, &v)| w * v as f64).sum::<f64>();
        }
        z
    }

    pub fn probabilities(&self, x: &[f32]) -> Vec<f64> {
        softmax(&self.logits(x))
    }

    /// Data loss plus `l2/2 · ‖W‖²`.
    pub fn loss(&self, x: &[f32], y: ClassLabel, l2: f64) -> f64 {
        let reg: f64 = self.weights.iter().map(|w| w * w).sum();
        cross_entropy(&self.probabilities(x), y) + 0.5 * l2 * reg
    }

    pub fn predict_features(&self, x: &[f32]) -> Result<(ClassLabel, Vec<f64>)> {
        if x.len() != self.dim {
            return Err(Error::Shape(format!(
                "feature vector has {} entries, head expects {}",
                x.len(),
                self.dim
            )));
        }
        let p = self.probabilities(x);
        let label = ClassLabel::from_index(argmax(&p)).expect("four classes");
        Ok((label, p))
    }

    pub fn to_weight_file(&self) -> WeightFile {
        WeightFile {
            tensors: vec![
                NamedTensor {
                    name: "head.weight".into(),
                    dims: vec![N_CLASSES as u32, self.dim as u32],
                    values: self.weights.iter().map(|&v| v as f32).collect(),
                },
                NamedTensor {
                    name: "head.bias".into(),
                    dims: vec![N_CLASSES as u32],
                    values: self.bias.iter().map(|&v| v as f32).collect(),
                },
            ],
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_weight_file().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_weight_file(&WeightFile::load(path)?, &path.display().to_string())
    }

    fn from_weight_file(wf: &WeightFile, origin: &str) -> Result<Self> {
        let err = |msg: String| Error::WeightLoad(format!("{origin}: {msg}"));
        let w = wf.get("head.weight").ok_or_else(|| err("missing tensor head.weight".into()))?;
        let b = wf.get("head.bias").ok_or_else(|| err("missing tensor head.bias".into()))?;
        if w.dims.len() != 2 || w.dims[0] != N_CLASSES as u32 {
            return Err(err(format!("head.weight has dims {:?}, expected [4, D]", w.dims)));
        }
        if b.dims != [N_CLASSES as u32] {
            return Err(err(format!("head.bias has dims {:?}, expected [4]", b.dims)));
        }
        let mut bias = [0.0; N_CLASSES];
        for (dst, &v) in bias.iter_mut().zip(&b.values) {
            *dst = v as f64;
        }
        ClassifierHead::from_parts(
            w.dims[1] as usize,
            w.values.iter().map(|&v| v as f64).collect(),
            bias,
        )
    }
}

/// Per-dimension standardization, fitted on training features. Dimensions
/// that are constant over the training set map to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureScaler {
    mean: Vec<f64>,
    inv_std: Vec<f64>,
}

impl FeatureScaler {
    pub fn identity(dim: usize) -> Self {
        FeatureScaler {
            mean: vec![0.0; dim],
            inv_std: vec![1.0; dim],
        }
    }

    pub fn fit<'a>(xs: impl IntoIterator<Item = &'a [f32]>) -> Result<Self> {
        let xs: Vec<&[f32]> = xs.into_iter().collect();
        let Some(first) = xs.first() else {
            return Err(Error::InvalidArgument("cannot fit a scaler on zero samples".into()));
        };
        let dim = first.len();
        if let Some(i) = xs.iter().position(|x| x.len() != dim) {
            return Err(Error::Shape(format!("sample {i} has {} features, sample 0 has {dim}", xs[i].len())));
        }
        let n = xs.len() as f64;
        let mut mean = vec![0.0; dim];
        for x in &xs {
            for (m, &v) in mean.iter_mut().zip(*x) {
                *m += v as f64;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for x in &xs {
            for ((s, &v), m) in var.iter_mut().zip(*x).zip(&mean) {
                *s += (v as f64 - m).powi(2);
            }
        }
        let inv_std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 { 1.0 / sd } else { 0.0 }
            })
            .collect();
        Ok(FeatureScaler { mean, inv_std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn inv_std(&self) -> &[f64] {
        &self.inv_std
    }

    pub fn apply(&self, x: &[f32]) -> Vec<f32> {
        x.iter()
            .zip(self.mean.iter().zip(&self.inv_std))
            .map(|(&v, (m, s))| ((v as f64 - m) * s) as f32)
            .collect()
    }
}

/// A scaler followed by a softmax head; what `train` saves and `predict` loads.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub scaler: FeatureScaler,
    pub head: ClassifierHead,
}

impl Classifier {
    pub fn dim(&self) -> usize {
        self.head.dim
    }

    pub fn predict_features(&self, x: &[f32]) -> Result<(ClassLabel, Vec<f64>)> {
        if x.len() != self.scaler.dim() {
            return Err(Error::Shape(format!(
                "feature vector has {} entries, classifier expects {}",
                x.len(),
                self.scaler.dim()
            )));
        }
        self.head.predict_features(&self.scaler.apply(x))
    }

    /// Head tensors plus `scaler.mean` and `scaler.inv_std`, each `[D]`.
    pub fn to_weight_file(&self) -> WeightFile {
        let mut wf = self.head.to_weight_file();
        let d = vec![self.scaler.dim() as u32];
        for (name, v) in [("scaler.mean", &self.scaler.mean), ("scaler.inv_std", &self.scaler.inv_std)] {
            wf.tensors.push(NamedTensor {
                name: name.into(),
                dims: d.clone(),
                values: v.iter().map(|&x| x as f32).collect(),
            });
        }
        wf
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_weight_file().save(path)
    }

    /// A file holding only head tensors loads with an identity scaler.
    pub fn load(path: &Path) -> Result<Self> {
        let origin = path.display().to_string();
        let wf = WeightFile::load(path)?;
        let head = ClassifierHead::from_weight_file(&wf, &origin)?;
        let scaler = match (wf.get("scaler.mean"), wf.get("scaler.inv_std")) {
            (None, None) => FeatureScaler::identity(head.dim),
            (Some(m), Some(s)) => {
                for t in [m, s] {
                    if t.dims != [head.dim as u32] {
                        return Err(Error::WeightLoad(format!(
                            "{origin}: {} has dims {:?}, expected [{}]",
                            t.name, t.dims, head.dim
                        )));
                    }
                }
                FeatureScaler {
                    mean: m.values.iter().map(|&v| v as f64).collect(),
                    inv_std: s.values.iter().map(|&v| v as f64).collect(),
                }
            }
            _ => return Err(Error::WeightLoad(format!("{origin}: scaler tensors must come in pairs"))),
        };
        Ok(Classifier { scaler, head })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadGradient {
    pub weights: Vec<f64>,
    pub bias: [f64; N_CLASSES],
}

/// Gradient of [`ClassifierHead::loss`] with respect to W and b.
pub fn head_gradient(x: &[f32], y: ClassLabel, head: &ClassifierHead, l2: f64) -> Result<HeadGradient> {
    if x.len() != head.dim {
        return Err(Error::Shape(format!(
            "feature vector has {} entries, head expects {}",
            x.len(),
            head.dim
        )));
    }
    let p = head.probabilities(x);
    let mut bias = [0.0; N_CLASSES];
    let mut weights = vec![0.0; N_CLASSES * head.dim];
    for k in 0..N_CLASSES {
        let delta = p[k] - if k == y.index() { 1.0 } else { 0.0 };
        bias[k] = delta;
        let w = &head.weights[k * head.dim..(k + 1) * head.dim];
        let g = &mut weights[k * head.dim..(k + 1) * head.dim];
        for ((gj, &xj), &wj) in g.iter_mut().zip(x).zip(w) {
            *gj = delta * xj as f64 + l2 * wj;
        }
    }
    Ok(HeadGradient { weights, bias })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub l2: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            batch_size: 32,
            epochs: 30,
            seed: 42,
            l2: 1e-4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || !(self.l2 >= 0.0) {
            return Err(Error::InvalidArgument(format!("invalid training config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub head: ClassifierHead,
    /// Mean cross-entropy over the training set after each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Mini-batch SGD on the softmax head, starting from zeros. Examples are
/// reshuffled every epoch from a generator seeded with `cfg.seed`.
pub fn train_head(samples: &[(Vec<f32>, ClassLabel)], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let Some(first) = samples.first() else {
        return Err(Error::InvalidArgument("no training samples".into()));
    };
    let dim = first.0.len();
    if let Some(i) = samples.iter().position(|(x, _)| x.len() != dim) {
        return Err(Error::Shape(format!(
            "sample {i} has {} features, sample 0 has {dim}",
            samples[i].0.len()
        )));
    }
    let mut head = ClassifierHead::zeros(dim);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut grad_w = vec![0.0; N_CLASSES * dim];

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            grad_w.iter_mut().for_each(|g| *g = 0.0);
            let mut grad_b = [0.0; N_CLASSES];
            for &i in batch {
                let (x, y) = &samples[i];
                let p = head.probabilities(x);
                for k in 0..N_CLASSES {
                    let delta = p[k] - if k == y.index() { 1.0 } else { 0.0 };
                    grad_b[k] += delta;
                    if delta != 0.0 {
                        for (g, &xj) in grad_w[k * dim..(k + 1) * dim].iter_mut().zip(x) {
                            *g += delta * xj as f64;
                        }
                    }
                }
            }
            let scale = cfg.learning_rate / batch.len() as f64;
            let decay = 1.0 - cfg.learning_rate * cfg.l2;
            for (w, g) in head.weights.iter_mut().zip(&grad_w) {
                *w = *w * decay - scale * g;
            }
            for (b, g) in head.bias.iter_mut().zip(grad_b) {
                *b -= scale * g;
            }
        }
        let loss = samples
            .iter()
            .map(|(x, y)| cross_entropy(&head.probabilities(x), *y))
            .sum::<f64>()
            / samples.len() as f64;
        epoch_losses.push(loss);
    }
    Ok(TrainOutcome { head, epoch_losses })
}

/// Fits a [`FeatureScaler`] on the samples, then runs [`train_head`] on the
/// standardized features.
pub fn train_classifier(
    samples: &[(Vec<f32>, ClassLabel)],
    cfg: &TrainConfig,
) -> Result<(Classifier, Vec<f64>)> {
    let scaler = FeatureScaler::fit(samples.iter().map(|(x, _)| x.as_slice()))?;
    let scaled: Vec<(Vec<f32>, ClassLabel)> = samples.iter().map(|(x, y)| (scaler.apply(x), *y)).collect();
    let TrainOutcome { head, epoch_losses } = train_head(&scaled, cfg)?;
    Ok((Classifier { scaler, head }, epoch_losses))
}

pub fn predict(
    img: &FeatureImage,
    fx: &FeatureExtractor,
    head: &ClassifierHead,
) -> Result<(ClassLabel, Vec<f64>)> {
    let x = extract_features(img, fx)?;
    head.predict_features(&x)
}

const WEIGHT_MAGIC: &[u8; 4] = b"LSWT";
const WEIGHT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<u32>,
    pub values: Vec<f32>,
}

/// Named f32 tensors in the `LSWT` binary layout (all integers little-endian):
/// magic, version u32, tensor count u32, then per tensor a u16-prefixed
/// UTF-8 name, rank u8, dims u32 each and row-major f32 values.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightFile {
    pub tensors: Vec<NamedTensor>,
}

impl WeightFile {
    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    fn expect(&self, name: &str, dims: &[u32], problems: &mut Vec<String>) -> Option<&NamedTensor> {
        match self.get(name) {
            None => {
                problems.push(format!("missing tensor {name}"));
                None
            }
            Some(t) if t.dims != dims => {
                problems.push(format!("tensor {name} has dims {:?}, expected {dims:?}", t.dims));
                None
            }
            Some(t) => Some(t),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(WEIGHT_MAGIC);
        out.extend_from_slice(&WEIGHT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            let name = t.name.as_bytes();
            let n: usize = t.dims.iter().map(|&d| d as usize).product();
            if name.len() > u16::MAX as usize || t.dims.len() > u8::MAX as usize || n != t.values.len() {
                return Err(Error::WeightLoad(format!("tensor {} cannot be encoded", t.name)));
            }
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name);
            out.push(t.dims.len() as u8);
            for d in &t.dims {
                out.extend_from_slice(&d.to_le_bytes());
            }
            for v in &t.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(4)? != WEIGHT_MAGIC {
            return Err(Error::WeightLoad("bad magic, expected LSWT".into()));
        }
        let version = r.u32()?;
        if version != WEIGHT_VERSION {
            return Err(Error::WeightLoad(format!("unsupported version {version}")));
        }
        let count = r.u32()?;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::WeightLoad("tensor name is not UTF-8".into()))?;
            let rank = r.u8()? as usize;
            let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            let n: usize = dims.iter().map(|&d| d as usize).product();
            let values = (0..n).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
            tensors.push(NamedTensor { name, dims, values });
        }
        if r.pos != bytes.len() {
            return Err(Error::WeightLoad(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(WeightFile { tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        WeightFile::from_bytes(&bytes).map_err(|e| match e {
            Error::WeightLoad(msg) => Error::WeightLoad(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

pub(crate) struct ByteReader<'a> {
    pub(crate) bytes: &'a [u8],
    pub(crate) pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::WeightLoad(format!("truncated at byte {}", self.pos)));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
