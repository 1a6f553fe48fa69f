//! Tiny fully convolutional segmentation network with hand-written
//! backpropagation.
//!
//! Layers are stride-1, same-padded convolutions with ReLU between them and a
//! per-pixel softmax on top, so predictions align with the input raster
//! without any resampling. Activations are stored channel-major (`C × H × W`);
//! prediction maps are pixel-major (`H × W × C`).

mod loss;
mod optim;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

pub use loss::{
    argmax_labels, cross_entropy, kl_divergence, l1_consistency, prediction_confidence, KlDirection,
};
pub use optim::{ema_update, poly_lr, sgd_step, OptimizerState, SgdConfig};

use crate::error::{Error, Result};
use crate::image::{Image, LabelMap};
use crate::math;
use crate::rng::{self, tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

/// Ordered convolution stack; input is always 3-channel RGB.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Architecture {
    layers: Vec<ConvSpec>,
}

impl Architecture {
    pub fn new(layers: Vec<ConvSpec>) -> Result<Self> {
        let first = layers.first().ok_or_else(|| Error::BadArchitecture("no layers".into()))?;
        if first.in_channels != 3 {
            return Err(Error::BadArchitecture(format!("first layer takes {} channels, not 3", first.in_channels)));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.kernel == 0 || l.kernel % 2 == 0 {
                return Err(Error::BadArchitecture(format!("layer {i}: kernel {} must be odd", l.kernel)));
            }
            if l.out_channels == 0 {
                return Err(Error::BadArchitecture(format!("layer {i}: zero output channels")));
            }
            if i > 0 && layers[i - 1].out_channels != l.in_channels {
                return Err(Error::BadArchitecture(format!("layer {i}: channel chain broken")));
            }
        }
        if layers.last().unwrap().out_channels < 2 {
            return Err(Error::BadArchitecture("need at least 2 classes".into()));
        }
        Ok(Self { layers })
    }

    /// `3 → 16 → 16 → classes`, 3×3 kernels.
    pub fn standard(classes: usize) -> Result<Self> {
        Self::with_widths(&[16, 16], classes, 3)
    }

    pub fn with_widths(hidden: &[usize], classes: usize, kernel: usize) -> Result<Self> {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut c_in = 3;
        for &h in hidden.iter().chain(core::iter::once(&classes)) {
            layers.push(ConvSpec { in_channels: c_in, out_channels: h, kernel });
            c_in = h;
        }
        Self::new(layers)
    }

    pub fn layers(&self) -> &[ConvSpec] {
        &self.layers
    }

    pub fn classes(&self) -> usize {
        self.layers.last().unwrap().out_channels
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.out_channels * (l.in_channels * l.kernel * l.kernel + 1)).sum()
    }

    pub fn receptive_field(&self) -> usize {
        1 + self.layers.iter().map(|l| l.kernel - 1).sum::<usize>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Weights of one network: per layer a `[out, in, k, k]` kernel then an `[out]` bias.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    arch: Architecture,
    tensors: Vec<Tensor>,
}

impl NetworkParams {
    /// Zero-valued parameters for `arch`.
    pub fn zeros(arch: &Architecture) -> Self {
        let mut tensors = Vec::with_capacity(2 * arch.layers.len());
        for (i, l) in arch.layers.iter().enumerate() {
            let shape = vec![l.out_channels, l.in_channels, l.kernel, l.kernel];
            let n = shape.iter().product();
            tensors.push(Tensor { name: format!("conv{}.weight", i + 1), shape, data: vec![0.0; n] });
            tensors.push(Tensor {
                name: format!("conv{}.bias", i + 1),
                shape: vec![l.out_channels],
                data: vec![0.0; l.out_channels],
            });
        }
        Self { arch: arch.clone(), tensors }
    }

    /// Validating constructor for decoded checkpoints.
    pub fn from_tensors(arch: Architecture, tensors: Vec<Tensor>) -> Result<Self> {
        let expected = Self::zeros(&arch);
        if expected.tensors.len() != tensors.len() {
            return Err(Error::ShapeMismatch(format!("{} tensors, expected {}", tensors.len(), expected.tensors.len())));
        }
        for (e, t) in expected.tensors.iter().zip(&tensors) {
            if e.name != t.name || e.shape != t.shape || t.data.len() != e.data.len() {
                return Err(Error::ShapeMismatch(format!("tensor {} does not fit {}", t.name, e.name)));
            }
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("tensor {}", t.name)));
            }
        }
        Ok(Self { arch, tensors })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.tensors.iter().flat_map(|t| t.data.iter().copied())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.tensors.iter_mut().flat_map(|t| t.data.iter_mut())
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.tensors.len() == other.tensors.len()
            && self.tensors.iter().zip(&other.tensors).all(|(a, b)| a.shape == b.shape)
    }

    pub(crate) fn check_shape(&self, other: &Self) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch("parameter sets differ in layout".into()))
        }
    }

    /// `self += scale · other`.
    pub fn add_scaled(&mut self, other: &Self, scale: f64) -> Result<()> {
        self.check_shape(other)?;
        for (a, b) in self.values_mut().zip(other.values()) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        self.values_mut().for_each(|v| *v *= factor);
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(f64::is_finite)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.values().zip(other.values()).map(|(a, b)| math::abs(a - b)).fold(0.0, f64::max)
    }

    fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        (&self.tensors[2 * l].data, &self.tensors[2 * l + 1].data)
    }
}

/// He-normal kernels, zero biases.
pub fn init_network(arch: &Architecture, seed: u64) -> Result<NetworkParams> {
    let arch = Architecture::new(arch.layers.clone())?;
    let mut params = NetworkParams::zeros(&arch);
    let mut rng = rng::substream(seed, tag::INIT, 0);
    for (l, spec) in arch.layers.iter().enumerate() {
        let std = math::sqrt(2.0 / (spec.in_channels * spec.kernel * spec.kernel) as f64);
        for w in params.tensors[2 * l].data.iter_mut() {
            *w = std * rng::normal(&mut rng);
        }
    }
    Ok(params)
}

/// Per-pixel class probabilities, pixel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMap {
    width: usize,
    height: usize,
    classes: usize,
    probs: Vec<f64>,
}

impl PredictionMap {
    pub fn new(width: usize, height: usize, classes: usize, probs: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || classes == 0 || probs.len() != width * height * classes {
            return Err(Error::DimensionMismatch(format!(
                "{} probabilities for {width}x{height}x{classes}",
                probs.len()
            )));
        }
        Ok(Self { width, height, classes, probs })
    }

    pub fn uniform(width: usize, height: usize, classes: usize) -> Self {
        Self { width, height, classes, probs: vec![1.0 / classes as f64; width * height * classes] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn pixel(&self, index: usize) -> &[f64] {
        &self.probs[index * self.classes..(index + 1) * self.classes]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.width == other.width && self.height == other.height && self.classes == other.classes
    }

    pub(crate) fn check_shape(&self, other: &Self) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(format!(
                "prediction {}x{}x{} vs {}x{}x{}",
                self.width, self.height, self.classes, other.width, other.height, other.classes
            )))
        }
    }
}

/// Loss gradient handed to [`backward`], pixel-major like [`PredictionMap`].
#[derive(Debug, Clone, PartialEq)]
pub enum OutputGrad {
    /// With respect to pre-softmax logits.
    Logits(Vec<f64>),
    /// With respect to softmax probabilities.
    Probs(Vec<f64>),
}

/// Activations kept from the forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    width: usize,
    height: usize,
    /// Input of every layer, channel-major; entry 0 is the encoded image.
    inputs: Vec<Vec<f64>>,
    output: PredictionMap,
}

impl ForwardCache {
    pub fn prediction(&self) -> &PredictionMap {
        &self.output
    }

    pub fn into_prediction(self) -> PredictionMap {
        self.output
    }
}

fn encode(img: &Image) -> Vec<f64> {
    let hw = img.len();
    let mut x = vec![0.0; 3 * hw];
    for (i, p) in img.pixels().enumerate() {
        for c in 0..3 {
            x[c * hw + i] = p[c] as f64 / 255.0 - 0.5;
        }
    }
    x
}

struct Geometry {
    width: usize,
    height: usize,
}

impl Geometry {
    /// Valid output rows/columns for a tap offset `d` along an axis of `extent`.
    #[inline]
    fn span(d: isize, extent: usize) -> (usize, usize) {
        let lo = if d < 0 { (-d) as usize } else { 0 };
        let hi = if d > 0 { extent.saturating_sub(d as usize) } else { extent };
        (lo, hi.max(lo))
    }
}

fn conv_forward(geo: &Geometry, spec: &ConvSpec, weight: &[f64], bias: &[f64], input: &[f64]) -> Vec<f64> {
    let (w, h) = (geo.width, geo.height);
    let hw = w * h;
    let k = spec.kernel;
    let pad = (k / 2) as isize;
    let mut out = vec![0.0; spec.out_channels * hw];
    for o in 0..spec.out_channels {
        let plane = &mut out[o * hw..(o + 1) * hw];
        plane.iter_mut().for_each(|v| *v = bias[o]);
        for i in 0..spec.in_channels {
            let src = &input[i * hw..(i + 1) * hw];
            for ky in 0..k {
                let dy = ky as isize - pad;
                let (y0, y1) = Geometry::span(dy, h);
                for kx in 0..k {
                    let dx = kx as isize - pad;
                    let (x0, x1) = Geometry::span(dx, w);
                    let wv = weight[((o * spec.in_channels + i) * k + ky) * k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    for y in y0..y1 {
                        let orow = &mut plane[y * w + x0..y * w + x1];
                        let start = ((y as isize + dy) as usize) * w + (x0 as isize + dx) as usize;
                        let irow = &src[start..start + (x1 - x0)];
                        for (ov, iv) in orow.iter_mut().zip(irow) {
                            *ov += wv * iv;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates kernel/bias gradients and, when requested, the input gradient.
fn conv_backward(
    geo: &Geometry,
    spec: &ConvSpec,
    weight: &[f64],
    input: &[f64],
    grad_out: &[f64],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
    grad_in: Option<&mut [f64]>,
) {
    let (w, h) = (geo.width, geo.height);
    let hw = w * h;
    let k = spec.kernel;
    let pad = (k / 2) as isize;
    for o in 0..spec.out_channels {
        let g = &grad_out[o * hw..(o + 1) * hw];
        grad_b[o] += g.iter().sum::<f64>();
        for i in 0..spec.in_channels {
            let src = &input[i * hw..(i + 1) * hw];
            for ky in 0..k {
                let dy = ky as isize - pad;
                let (y0, y1) = Geometry::span(dy, h);
                for kx in 0..k {
                    let dx = kx as isize - pad;
                    let (x0, x1) = Geometry::span(dx, w);
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let grow = &g[y * w + x0..y * w + x1];
                        let start = ((y as isize + dy) as usize) * w + (x0 as isize + dx) as usize;
                        let irow = &src[start..start + (x1 - x0)];
                        acc += grow.iter().zip(irow).map(|(a, b)| a * b).sum::<f64>();
                    }
                    grad_w[((o * spec.in_channels + i) * k + ky) * k + kx] += acc;
                }
            }
        }
    }
    if let Some(grad_in) = grad_in {
        for o in 0..spec.out_channels {
            let g = &grad_out[o * hw..(o + 1) * hw];
            for i in 0..spec.in_channels {
                let dst = &mut grad_in[i * hw..(i + 1) * hw];
                for ky in 0..k {
                    let dy = ky as isize - pad;
                    let (y0, y1) = Geometry::span(dy, h);
                    for kx in 0..k {
                        let dx = kx as isize - pad;
                        let (x0, x1) = Geometry::span(dx, w);
                        let wv = weight[((o * spec.in_channels + i) * k + ky) * k + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        for y in y0..y1 {
                            let grow = &g[y * w + x0..y * w + x1];
                            let start = ((y as isize + dy) as usize) * w + (x0 as isize + dx) as usize;
                            let drow = &mut dst[start..start + (x1 - x0)];
                            for (dv, gv) in drow.iter_mut().zip(grow) {
                                *dv += wv * gv;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn softmax_pixels(logits: &[f64], classes: usize, hw: usize) -> Vec<f64> {
    let mut probs = vec![0.0; hw * classes];
    for p in 0..hw {
        let mut max = f64::NEG_INFINITY;
        for c in 0..classes {
            max = max.max(logits[c * hw + p]);
        }
        let mut sum = 0.0;
        for c in 0..classes {
            let e = math::exp(logits[c * hw + p] - max);
            probs[p * classes + c] = e;
            sum += e;
        }
        for c in 0..classes {
            probs[p * classes + c] /= sum;
        }
    }
    probs
}

fn check_input(params: &NetworkParams, img: &Image) -> Result<()> {
    let rf = params.arch.receptive_field();
    if img.width() < rf || img.height() < rf {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} image below the {rf}x{rf} receptive field",
            img.width(),
            img.height()
        )));
    }
    Ok(())
}

pub fn forward_cached(params: &NetworkParams, img: &Image) -> Result<ForwardCache> {
    check_input(params, img)?;
    let geo = Geometry { width: img.width(), height: img.height() };
    let hw = img.len();
    let n_layers = params.arch.layers.len();
    let mut inputs = Vec::with_capacity(n_layers);
    inputs.push(encode(img));
    let mut logits = Vec::new();
    for (l, spec) in params.arch.layers.iter().enumerate() {
        let (w, b) = params.layer(l);
        let mut z = conv_forward(&geo, spec, w, b, &inputs[l]);
        if l + 1 < n_layers {
            z.iter_mut().for_each(|v| {
                if *v < 0.0 {
                    *v = 0.0
                }
            });
            inputs.push(z);
        } else {
            logits = z;
        }
    }
    let classes = params.arch.classes();
    let probs = softmax_pixels(&logits, classes, hw);
    let output = PredictionMap { width: img.width(), height: img.height(), classes, probs };
    Ok(ForwardCache { width: img.width(), height: img.height(), inputs, output })
}

pub fn forward(params: &NetworkParams, img: &Image) -> Result<PredictionMap> {
    Ok(forward_cached(params, img)?.output)
}

/// Parameter gradient of a loss whose output gradient is `grad`.
pub fn backward(params: &NetworkParams, cache: &ForwardCache, grad: &OutputGrad) -> Result<NetworkParams> {
    let classes = params.arch.classes();
    let hw = cache.width * cache.height;
    let probs = &cache.output.probs;
    let src = match grad {
        OutputGrad::Logits(g) | OutputGrad::Probs(g) => g,
    };
    if src.len() != hw * classes || cache.output.classes != classes {
        return Err(Error::DimensionMismatch("output gradient vs forward cache".into()));
    }
    // Channel-major logit gradient.
    let mut dz = vec![0.0; classes * hw];
    match grad {
        OutputGrad::Logits(g) => {
            for p in 0..hw {
                for c in 0..classes {
                    dz[c * hw + p] = g[p * classes + c];
                }
            }
        }
        OutputGrad::Probs(g) => {
            for p in 0..hw {
                let pr = &probs[p * classes..(p + 1) * classes];
                let gp = &g[p * classes..(p + 1) * classes];
                let dot: f64 = pr.iter().zip(gp).map(|(a, b)| a * b).sum();
                for c in 0..classes {
                    dz[c * hw + p] = pr[c] * (gp[c] - dot);
                }
            }
        }
    }
    let geo = Geometry { width: cache.width, height: cache.height };
    let mut grads = NetworkParams::zeros(&params.arch);
    for l in (0..params.arch.layers.len()).rev() {
        let spec = params.arch.layers[l];
        let (w, _) = params.layer(l);
        let input = &cache.inputs[l];
        let (gw, rest) = grads.tensors.split_at_mut(2 * l + 1);
        let grad_w = &mut gw[2 * l].data;
        let grad_b = &mut rest[0].data;
        if l > 0 {
            let mut din = vec![0.0; spec.in_channels * hw];
            conv_backward(&geo, &spec, w, input, &dz, grad_w, grad_b, Some(&mut din));
            // ReLU: the stored input is the rectified activation.
            for (d, &a) in din.iter_mut().zip(input.iter()) {
                if a <= 0.0 {
                    *d = 0.0;
                }
            }
            dz = din;
        } else {
            conv_backward(&geo, &spec, w, input, &dz, grad_w, grad_b, None);
        }
    }
    Ok(grads)
}

/// Per-pixel argmax of the network's prediction (ties to the lower class).
pub fn pseudo_label(params: &NetworkParams, img: &Image) -> Result<LabelMap> {
    Ok(argmax_labels(&forward(params, img)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_param_count() {
        let arch = Architecture::standard(5).unwrap();
        let closed_form = (3 * 9 * 16 + 16) + (16 * 9 * 16 + 16) + (16 * 9 * 5 + 5);
        assert_eq!(arch.param_count(), closed_form);
        assert_eq!(init_network(&arch, 3).unwrap().len(), closed_form);
        assert_eq!(arch.receptive_field(), 7);
    }

    #[test]
    fn bad_architectures() {
        assert!(matches!(Architecture::new(vec![]), Err(Error::BadArchitecture(_))));
        let even = ConvSpec { in_channels: 3, out_channels: 4, kernel: 2 };
        assert!(Architecture::new(vec![even]).is_err());
        let broken = vec![
            ConvSpec { in_channels: 3, out_channels: 4, kernel: 3 },
            ConvSpec { in_channels: 5, out_channels: 2, kernel: 3 },
        ];
        assert!(Architecture::new(broken).is_err());
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let arch = Architecture::standard(5).unwrap();
        assert_eq!(init_network(&arch, 9).unwrap(), init_network(&arch, 9).unwrap());
        assert_ne!(init_network(&arch, 9).unwrap(), init_network(&arch, 10).unwrap());
    }

    #[test]
    fn zero_network_is_uniform() {
        let arch = Architecture::standard(4).unwrap();
        let params = NetworkParams::zeros(&arch);
        let pred = forward(&params, &Image::filled(8, 8, [10, 200, 30])).unwrap();
        assert!(pred.probs().iter().all(|&p| (p - 0.25).abs() < 1e-15));
        assert_eq!(pseudo_label(&params, &Image::filled(8, 8, [1, 2, 3])).unwrap(), LabelMap::filled(8, 8, 0));
    }

    #[test]
    fn one_by_one_linear_layer() {
        let arch = Architecture::new(vec![ConvSpec { in_channels: 3, out_channels: 2, kernel: 1 }]).unwrap();
        let mut params = NetworkParams::zeros(&arch);
        params.tensors[0].data.copy_from_slice(&[1.0, 0.0, 0.0, 0.0, 2.0, -1.0]);
        params.tensors[1].data.copy_from_slice(&[0.1, -0.2]);
        let img = Image::new(1, 1, vec![255, 0, 51]).unwrap();
        let x: [f64; 3] = [0.5, -0.5, 51.0 / 255.0 - 0.5];
        let z0 = x[0] + 0.1;
        let z1 = 2.0 * x[1] - x[2] - 0.2;
        let p0 = z0.exp() / (z0.exp() + z1.exp());
        let pred = forward(&params, &img).unwrap();
        assert!((pred.probs()[0] - p0).abs() < 1e-14);
        assert!((pred.probs()[1] - (1.0 - p0)).abs() < 1e-14);
    }

    #[test]
    fn small_input_rejected() {
        let params = init_network(&Architecture::standard(3).unwrap(), 0).unwrap();
        assert!(matches!(forward(&params, &Image::filled(5, 9, [0; 3])), Err(Error::DimensionMismatch(_))));
    }
}
