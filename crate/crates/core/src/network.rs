//! Network assembly, supervised training, and the transfer procedure:
//! pretrain, frozen-feature extraction, TransferNet training, grafting
//! and fine-tuning, producing the two weight variants W and W_su.

use crate::error::{Error, Result};
use crate::layers::{
    softmax_xent, ConvCache, ConvGrads, ConvLayer, FcCache, FcGrads, FcLayer, LrnCache, LrnLayer,
    MaxPoolCache, MaxPoolLayer, SubSampleCache, SubSampleGrads, SubSampleLayer,
};
use crate::su::{su_backward, su_forward, SuCache, SuConfig, SuMode};
use crate::tensor::{FeatureMap, Scalar, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

/// One layer of a network specification.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub enum LayerSpec {
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    Lrn,
    SubSample {
        window: usize,
    },
    Su {
        blocks: usize,
        prob: f64,
    },
    Fc {
        out: usize,
        relu: bool,
    },
    MaxPool {
        window: usize,
        stride: usize,
    },
}

/// Ordered layer specifications plus the input geometry. When
/// `strict_census` is set the 5-conv / 4-FC census and the SU placement
/// rule are enforced.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NetworkSpec {
    /// (height, width, channels)
    pub input: (usize, usize, usize),
    pub layers: Vec<LayerSpec>,
    pub strict_census: bool,
}

/// Shape of the activation after a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeState {
    Map { h: usize, w: usize, c: usize },
    Flat(usize),
}

impl NetworkSpec {
    /// Desk-scale profile: 5 convolutional and 4 fully connected layers
    /// on 32x32 single-channel inputs, with the optional shuffle layer
    /// after the first sub-sampling layer.
    pub fn toy(classes: usize, su: Option<(usize, f64)>) -> Self {
        let mut layers = vec![
            LayerSpec::Conv {
                out_channels: 8,
                kernel: 5,
                stride: 1,
                pad: 2,
            },
            LayerSpec::Lrn,
            LayerSpec::SubSample { window: 2 },
        ];
        if let Some((blocks, prob)) = su {
            layers.push(LayerSpec::Su { blocks, prob });
        }
        layers.extend([
            LayerSpec::Conv {
                out_channels: 16,
                kernel: 3,
                stride: 1,
                pad: 1,
            },
            LayerSpec::SubSample { window: 2 },
            LayerSpec::Conv {
                out_channels: 16,
                kernel: 3,
                stride: 1,
                pad: 1,
            },
            LayerSpec::Conv {
                out_channels: 16,
                kernel: 3,
                stride: 1,
                pad: 1,
            },
            LayerSpec::Conv {
                out_channels: 16,
                kernel: 3,
                stride: 1,
                pad: 1,
            },
            LayerSpec::Fc { out: 64, relu: true },
            LayerSpec::Fc { out: 64, relu: true },
            LayerSpec::Fc { out: 64, relu: true },
            LayerSpec::Fc {
                out: classes,
                relu: false,
            },
        ]);
        NetworkSpec {
            input: (32, 32, 1),
            layers,
            strict_census: true,
        }
    }

    pub fn conv_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| matches!(l, LayerSpec::Conv { .. }))
            .count()
    }

    pub fn fc_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| matches!(l, LayerSpec::Fc { .. }))
            .count()
    }

    pub fn last_conv_index(&self) -> Option<usize> {
        self.layers
            .iter()
            .rposition(|l| matches!(l, LayerSpec::Conv { .. }))
    }

    pub fn su_index(&self) -> Option<usize> {
        self.layers
            .iter()
            .position(|l| matches!(l, LayerSpec::Su { .. }))
    }

    pub fn validate(&self) -> Result<()> {
        let su_count = self
            .layers
            .iter()
            .filter(|l| matches!(l, LayerSpec::Su { .. }))
            .count();
        if su_count > 1 {
            return Err(Error::Config("at most one shuffle layer allowed".into()));
        }
        if let Some(si) = self.su_index() {
            let first_sub = self
                .layers
                .iter()
                .position(|l| matches!(l, LayerSpec::SubSample { .. }));
            if first_sub.map(|f| f + 1) != Some(si) {
                return Err(Error::Config(
                    "shuffle layer must immediately follow the first sub-sampling layer".into(),
                ));
            }
        }
        if self.strict_census && (self.conv_count() != 5 || self.fc_count() != 4) {
            return Err(Error::Config(format!(
                "profile requires 5 conv and 4 fc layers, got {} conv and {} fc",
                self.conv_count(),
                self.fc_count()
            )));
        }
        // fully connected layers must form the tail
        if let Some(first_fc) = self
            .layers
            .iter()
            .position(|l| matches!(l, LayerSpec::Fc { .. }))
        {
            if self.layers[first_fc..]
                .iter()
                .any(|l| !matches!(l, LayerSpec::Fc { .. }))
            {
                return Err(Error::Config(
                    "spatial layers may not follow fully connected layers".into(),
                ));
            }
        }
        self.layer_shapes()?;
        Ok(())
    }

    /// Analytic shape of the activation after each layer.
    pub fn layer_shapes(&self) -> Result<Vec<ShapeState>> {
        let (mut h, mut w, mut c) = self.input;
        let mut flat: Option<usize> = None;
        let mut out = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            match *l {
                LayerSpec::Conv {
                    out_channels,
                    kernel,
                    stride,
                    pad,
                } => {
                    if flat.is_some() {
                        return Err(Error::Config("conv after fc".into()));
                    }
                    let eh = h + 2 * pad;
                    let ew = w + 2 * pad;
                    if eh < kernel || ew < kernel {
                        return Err(Error::dim("conv kernel exceeds padded input"));
                    }
                    h = (eh - kernel) / stride + 1;
                    w = (ew - kernel) / stride + 1;
                    c = out_channels;
                }
                LayerSpec::Lrn | LayerSpec::Su { .. } => {}
                LayerSpec::SubSample { window } => {
                    if h < window || w < window {
                        return Err(Error::dim("sub-sample window exceeds input"));
                    }
                    h /= window;
                    w /= window;
                }
                LayerSpec::MaxPool { window, stride } => {
                    if h < window || w < window {
                        return Err(Error::dim("max-pool window exceeds input"));
                    }
                    h = (h - window) / stride + 1;
                    w = (w - window) / stride + 1;
                }
                LayerSpec::Fc { out: o, .. } => {
                    flat = Some(o);
                    out.push(ShapeState::Flat(o));
                    continue;
                }
            }
            out.push(ShapeState::Map { h, w, c });
        }
        Ok(out)
    }

    /// Flattened activation volume at the last convolutional layer.
    pub fn last_conv_volume(&self) -> Result<usize> {
        let idx = self
            .last_conv_index()
            .ok_or_else(|| Error::Config("network has no convolutional layer".into()))?;
        match self.layer_shapes()?[idx] {
            ShapeState::Map { h, w, c } => Ok(h * w * c),
            ShapeState::Flat(_) => unreachable!("conv layers produce maps"),
        }
    }
}

/// The four fully connected layers trained on frozen convolutional
/// features: three hidden layers of `hidden` neurons plus a class-sized
/// output layer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransferNetSpec {
    pub hidden: usize,
    pub classes: usize,
}

impl TransferNetSpec {
    pub fn network_spec(&self, feature_len: usize) -> NetworkSpec {
        NetworkSpec {
            input: (1, 1, feature_len),
            layers: vec![
                LayerSpec::Fc {
                    out: self.hidden,
                    relu: true,
                },
                LayerSpec::Fc {
                    out: self.hidden,
                    relu: true,
                },
                LayerSpec::Fc {
                    out: self.hidden,
                    relu: true,
                },
                LayerSpec::Fc {
                    out: self.classes,
                    relu: false,
                },
            ],
            strict_census: false,
        }
    }
}

#[derive(Debug, Clone)]
enum Layer<T: Scalar> {
    Conv(ConvLayer<T>),
    Lrn(LrnLayer<T>),
    Sub(SubSampleLayer<T>),
    Su(SuConfig),
    Fc(FcLayer<T>),
    Pool(MaxPoolLayer),
}

#[derive(Debug, Clone)]
enum Cache<T: Scalar> {
    Conv(ConvCache<T>),
    Lrn(LrnCache<T>),
    Sub(SubSampleCache<T>),
    Su(SuCache),
    Fc {
        cache: FcCache<T>,
        from_map: Option<(usize, usize, usize, usize)>,
    },
    Pool(MaxPoolCache),
}

/// Gradients for one layer, mirroring its parameters.
#[derive(Debug, Clone)]
pub enum LayerGrads<T: Scalar> {
    Conv(ConvGrads<T>),
    Sub(SubSampleGrads<T>),
    Fc(FcGrads<T>),
    None,
}

#[derive(Debug, Clone)]
enum Act<T: Scalar> {
    Map(FeatureMap<T>),
    Flat(Tensor<T>),
}

/// A built network: specification plus parameters.
#[derive(Debug, Clone)]
pub struct Network<T: Scalar = f32> {
    spec: NetworkSpec,
    layers: Vec<Layer<T>>,
}

impl<T: Scalar> Network<T> {
    /// Initialize parameters from the spec: Gaussian(0, 0.01) weights,
    /// zero biases, identity sub-sampling scales.
    pub fn build(spec: NetworkSpec, seed: u64) -> Result<Self> {
        Self::build_with_init(spec, seed, 0.01)
    }

    /// Same as `build` with an explicit weight standard deviation
    /// (gradient checks use a larger one to keep deep activations away
    /// from the ReLU kink).
    pub fn build_with_init(spec: NetworkSpec, seed: u64, std: f64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0f64, std).expect("valid normal");
        let gauss = |n: usize, rng: &mut ChaCha8Rng| -> Vec<T> {
            (0..n).map(|_| T::from_f64(normal.sample(rng))).collect()
        };
        let shapes = spec.layer_shapes()?;
        let (ih, iw, ic) = spec.input;
        let mut layers = Vec::with_capacity(spec.layers.len());
        let mut prev = ShapeState::Map {
            h: ih,
            w: iw,
            c: ic,
        };
        for (i, l) in spec.layers.iter().enumerate() {
            let layer = match *l {
                LayerSpec::Conv {
                    out_channels,
                    kernel,
                    stride,
                    pad,
                } => {
                    let cin = match prev {
                        ShapeState::Map { c, .. } => c,
                        ShapeState::Flat(_) => unreachable!("validated"),
                    };
                    let k = Tensor::from_vec(
                        &[kernel, kernel, cin, out_channels],
                        gauss(kernel * kernel * cin * out_channels, &mut rng),
                    )?;
                    Layer::Conv(ConvLayer {
                        kernels: k,
                        bias: vec![T::zero(); out_channels],
                        stride,
                        pad,
                    })
                }
                LayerSpec::Lrn => Layer::Lrn(LrnLayer::default()),
                LayerSpec::SubSample { window } => {
                    let c = match prev {
                        ShapeState::Map { c, .. } => c,
                        ShapeState::Flat(_) => unreachable!("validated"),
                    };
                    Layer::Sub(SubSampleLayer::with_identity(window, c))
                }
                LayerSpec::Su { blocks, prob } => Layer::Su(SuConfig::new(blocks, prob)?),
                LayerSpec::Fc { out, relu } => {
                    let fan_in = match prev {
                        ShapeState::Map { h, w, c } => h * w * c,
                        ShapeState::Flat(n) => n,
                    };
                    let w = Tensor::from_vec(&[fan_in, out], gauss(fan_in * out, &mut rng))?;
                    Layer::Fc(FcLayer {
                        weight: w,
                        bias: vec![T::zero(); out],
                        relu,
                    })
                }
                LayerSpec::MaxPool { window, stride } => {
                    Layer::Pool(MaxPoolLayer { window, stride })
                }
            };
            layers.push(layer);
            prev = shapes[i];
        }
        Ok(Network { spec, layers })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn classes(&self) -> usize {
        match self.spec.layers.last() {
            Some(LayerSpec::Fc { out, .. }) => *out,
            _ => 0,
        }
    }

    fn forward_layers<R: Rng>(
        &self,
        x: &FeatureMap<T>,
        upto: usize,
        mode: SuMode,
        rng: &mut R,
        caches: Option<&mut Vec<Cache<T>>>,
    ) -> Result<Act<T>> {
        let mut act = Act::Map(x.clone());
        let mut sink = caches;
        for layer in self.layers.iter().take(upto + 1) {
            let (next, cache) = match (layer, &act) {
                (Layer::Conv(l), Act::Map(m)) => {
                    let (y, c) = l.forward(m)?;
                    (Act::Map(y), Cache::Conv(c))
                }
                (Layer::Lrn(l), Act::Map(m)) => {
                    let (y, c) = l.forward(m);
                    (Act::Map(y), Cache::Lrn(c))
                }
                (Layer::Sub(l), Act::Map(m)) => {
                    let (y, c) = l.forward(m)?;
                    (Act::Map(y), Cache::Sub(c))
                }
                (Layer::Su(cfg), Act::Map(m)) => {
                    let eff = SuConfig { mode, ..*cfg };
                    let (y, c) = su_forward(&eff, m, rng)?;
                    (Act::Map(y), Cache::Su(c))
                }
                (Layer::Pool(l), Act::Map(m)) => {
                    let (y, c) = l.forward(m)?;
                    (Act::Map(y), Cache::Pool(c))
                }
                (Layer::Fc(l), act_in) => {
                    let (flat, from_map) = match act_in {
                        Act::Flat(t) => (t.clone(), None),
                        Act::Map(m) => {
                            let (h, w, c, s) = m.dims();
                            let mut data = Vec::with_capacity(h * w * c * s);
                            for b in 0..s {
                                data.extend(m.flatten_sample(b));
                            }
                            (
                                Tensor::from_vec(&[s, h * w * c], data)?,
                                Some((h, w, c, s)),
                            )
                        }
                    };
                    let (y, c) = l.forward(&flat)?;
                    (Act::Flat(y), Cache::Fc { cache: c, from_map })
                }
                _ => return Err(Error::Config("spatial layer applied to flat input".into())),
            };
            if let Some(s) = sink.as_deref_mut() {
                s.push(cache);
            }
            act = next;
        }
        Ok(act)
    }

    /// Forward pass to the logits, returning per-layer caches for the
    /// backward pass.
    pub fn forward_cached<R: Rng>(
        &self,
        x: &FeatureMap<T>,
        mode: SuMode,
        rng: &mut R,
    ) -> Result<(Tensor<T>, Caches<T>)> {
        let mut caches = Vec::new();
        let act = self.forward_layers(x, self.layers.len() - 1, mode, rng, Some(&mut caches))?;
        match act {
            Act::Flat(t) => Ok((t, Caches(caches))),
            Act::Map(_) => Err(Error::Config("network does not end in logits".into())),
        }
    }

    /// Inference forward pass (deterministic; the shuffle layer applies
    /// its permutation unconditionally when configured to).
    pub fn forward(&self, x: &FeatureMap<T>) -> Result<Tensor<T>> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let act =
            self.forward_layers(x, self.layers.len() - 1, SuMode::Infer, &mut rng, None)?;
        match act {
            Act::Flat(t) => Ok(t),
            Act::Map(_) => Err(Error::Config("network does not end in logits".into())),
        }
    }

    /// ReLU-ed activation tensor at the last convolutional layer,
    /// flattened per batch sample.
    pub fn conv_features(&self, x: &FeatureMap<T>) -> Result<Vec<Vec<T>>> {
        let idx = self
            .spec
            .last_conv_index()
            .ok_or_else(|| Error::Config("network has no convolutional layer".into()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let act = self.forward_layers(x, idx, SuMode::Infer, &mut rng, None)?;
        match act {
            Act::Map(m) => {
                let (_, _, _, s) = m.dims();
                Ok((0..s).map(|b| m.flatten_sample(b)).collect())
            }
            Act::Flat(_) => Err(Error::Config("last conv tap produced flat data".into())),
        }
    }

    /// ReLU-ed activation map at the last convolutional layer.
    pub fn conv_feature_map(&self, x: &FeatureMap<T>) -> Result<FeatureMap<T>> {
        let idx = self
            .spec
            .last_conv_index()
            .ok_or_else(|| Error::Config("network has no convolutional layer".into()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        match self.forward_layers(x, idx, SuMode::Infer, &mut rng, None)? {
            Act::Map(m) => Ok(m),
            Act::Flat(_) => Err(Error::Config("last conv tap produced flat data".into())),
        }
    }

    /// Backward pass from the logits gradient; returns the gradient with
    /// respect to the input and per-layer parameter gradients.
    pub fn backward(
        &self,
        caches: &Caches<T>,
        grad_logits: &Tensor<T>,
    ) -> Result<(FeatureMap<T>, Vec<LayerGrads<T>>)> {
        if caches.0.len() != self.layers.len() {
            return Err(Error::State("cache count does not match layer count".into()));
        }
        let mut grads = vec![LayerGrads::None; self.layers.len()];
        let mut gact = Act::Flat(grad_logits.clone());
        for (i, (layer, cache)) in self.layers.iter().zip(&caches.0).enumerate().rev() {
            gact = match (layer, cache, gact) {
                (Layer::Conv(l), Cache::Conv(c), Act::Map(g)) => {
                    let (gx, pg) = l.backward(c, &g)?;
                    grads[i] = LayerGrads::Conv(pg);
                    Act::Map(gx)
                }
                (Layer::Lrn(l), Cache::Lrn(c), Act::Map(g)) => Act::Map(l.backward(c, &g)?),
                (Layer::Sub(l), Cache::Sub(c), Act::Map(g)) => {
                    let (gx, pg) = l.backward(c, &g)?;
                    grads[i] = LayerGrads::Sub(pg);
                    Act::Map(gx)
                }
                (Layer::Su(_), Cache::Su(c), Act::Map(g)) => Act::Map(su_backward(c, &g)?),
                (Layer::Pool(l), Cache::Pool(c), Act::Map(g)) => Act::Map(l.backward(c, &g)?),
                (Layer::Fc(l), Cache::Fc { cache, from_map }, Act::Flat(g)) => {
                    let (gx, pg) = l.backward(cache, &g)?;
                    grads[i] = LayerGrads::Fc(pg);
                    match from_map {
                        None => Act::Flat(gx),
                        Some((h, w, c, s)) => {
                            let mut m = FeatureMap::zeros(*h, *w, *c, *s);
                            for b in 0..*s {
                                let row = &gx.data()[b * (h * w * c)..(b + 1) * (h * w * c)];
                                let mut idx = 0;
                                for ii in 0..*h {
                                    for jj in 0..*w {
                                        for cc in 0..*c {
                                            m.set(ii, jj, cc, b, row[idx]);
                                            idx += 1;
                                        }
                                    }
                                }
                            }
                            Act::Map(m)
                        }
                    }
                }
                _ => return Err(Error::State("cache does not match layer".into())),
            };
        }
        match gact {
            Act::Map(g) => Ok((g, grads)),
            Act::Flat(g) => {
                // all-FC network: report the input gradient as a 1x1xN map
                let (s, n) = (g.shape()[0], g.shape()[1]);
                let mut m = FeatureMap::zeros(1, 1, n, s);
                for b in 0..s {
                    for c in 0..n {
                        m.set(0, 0, c, b, g.data()[b * n + c]);
                    }
                }
                Ok((m, grads))
            }
        }
    }

    /// All parameters concatenated in declaration order.
    pub fn flat_params(&self) -> Vec<T> {
        let mut out = Vec::new();
        for l in &self.layers {
            match l {
                Layer::Conv(c) => {
                    out.extend_from_slice(c.kernels.data());
                    out.extend_from_slice(&c.bias);
                }
                Layer::Sub(s) => {
                    out.extend_from_slice(&s.gain);
                    out.extend_from_slice(&s.bias);
                }
                Layer::Fc(f) => {
                    out.extend_from_slice(f.weight.data());
                    out.extend_from_slice(&f.bias);
                }
                Layer::Lrn(_) | Layer::Su(_) | Layer::Pool(_) => {}
            }
        }
        out
    }

    pub fn set_flat_params(&mut self, params: &[T]) -> Result<()> {
        let mut off = 0usize;
        let mut take = |n: usize, params: &[T]| -> Result<Vec<T>> {
            if off + n > params.len() {
                return Err(Error::dim("parameter vector too short"));
            }
            let v = params[off..off + n].to_vec();
            off += n;
            Ok(v)
        };
        for l in &mut self.layers {
            match l {
                Layer::Conv(c) => {
                    let n = c.kernels.len();
                    let shape = c.kernels.shape().to_vec();
                    c.kernels = Tensor::from_vec(&shape, take(n, params)?)?;
                    let nb = c.bias.len();
                    c.bias = take(nb, params)?;
                }
                Layer::Sub(s) => {
                    let n = s.gain.len();
                    s.gain = take(n, params)?;
                    s.bias = take(n, params)?;
                }
                Layer::Fc(f) => {
                    let n = f.weight.len();
                    let shape = f.weight.shape().to_vec();
                    f.weight = Tensor::from_vec(&shape, take(n, params)?)?;
                    let nb = f.bias.len();
                    f.bias = take(nb, params)?;
                }
                Layer::Lrn(_) | Layer::Su(_) | Layer::Pool(_) => {}
            }
        }
        if off != params.len() {
            return Err(Error::dim("parameter vector too long"));
        }
        Ok(())
    }

    /// Layer gradients flattened in the same order as `flat_params`.
    pub fn flat_grads(&self, grads: &[LayerGrads<T>]) -> Result<Vec<T>> {
        let mut out = Vec::new();
        for (l, g) in self.layers.iter().zip(grads) {
            match (l, g) {
                (Layer::Conv(_), LayerGrads::Conv(cg)) => {
                    out.extend_from_slice(cg.kernels.data());
                    out.extend_from_slice(&cg.bias);
                }
                (Layer::Sub(_), LayerGrads::Sub(sg)) => {
                    out.extend_from_slice(&sg.gain);
                    out.extend_from_slice(&sg.bias);
                }
                (Layer::Fc(_), LayerGrads::Fc(fg)) => {
                    out.extend_from_slice(fg.weight.data());
                    out.extend_from_slice(&fg.bias);
                }
                (Layer::Lrn(_), _) | (Layer::Su(_), _) | (Layer::Pool(_), _) => {}
                _ => return Err(Error::State("gradient does not match layer".into())),
            }
        }
        Ok(out)
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Conv(c) => Layer::Conv(ConvLayer {
                    kernels: c.kernels.cast(),
                    bias: c.bias.iter().map(|&b| U::from_f64(b.to_f64())).collect(),
                    stride: c.stride,
                    pad: c.pad,
                }),
                Layer::Lrn(_) => Layer::Lrn(LrnLayer::default()),
                Layer::Sub(s) => Layer::Sub(SubSampleLayer {
                    window: s.window,
                    gain: s.gain.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
                    bias: s.bias.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
                }),
                Layer::Su(c) => Layer::Su(*c),
                Layer::Fc(f) => Layer::Fc(FcLayer {
                    weight: f.weight.cast(),
                    bias: f.bias.iter().map(|&b| U::from_f64(b.to_f64())).collect(),
                    relu: f.relu,
                }),
                Layer::Pool(p) => Layer::Pool(p.clone()),
            })
            .collect();
        Network {
            spec: self.spec.clone(),
            layers,
        }
    }
}

/// Opaque per-forward state consumed by `backward`.
pub struct Caches<T: Scalar>(Vec<Cache<T>>);

/// Training hyperparameters. Learning rate decays by `lr_decay_factor`
/// once, at `lr_decay_at` of the epoch budget. `init_std` is the weight
/// scale used when a stage builds a fresh network; at toy widths the
/// classic 0.01 starves deep layers, so stages default to 0.1.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_decay_factor: f64,
    pub lr_decay_at: f64,
    pub init_std: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 16,
            epochs: 20,
            lr_decay_factor: 0.1,
            lr_decay_at: 2.0 / 3.0,
            init_std: 0.1,
            seed: 0,
        }
    }
}

/// One line of training progress.
#[derive(Debug, Clone, Copy)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

/// Minimize softmax cross-entropy with SGD + momentum + weight decay.
/// Deterministic under the config seed.
pub fn train<T: Scalar>(
    net: &mut Network<T>,
    data: &[(FeatureMap<T>, usize)],
    cfg: &TrainConfig,
    quiet: bool,
) -> Result<Vec<EpochRecord>> {
    if data.is_empty() {
        return Err(Error::EmptyInput("training set is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = net.flat_params();
    let mut velocity = vec![T::zero(); params.len()];
    let mut order: Vec<usize> = (0..data.len()).collect();
    let decay_epoch = (cfg.epochs as f64 * cfg.lr_decay_at).floor() as usize;
    let mut records = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = if epoch >= decay_epoch && decay_epoch > 0 {
            cfg.lr * cfg.lr_decay_factor
        } else {
            cfg.lr
        };
        // deterministic shuffle
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0f64;
        let mut correct = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let mut gsum = vec![T::zero(); params.len()];
            for &idx in batch {
                let (x, label) = &data[idx];
                let (logits, caches) = net.forward_cached(x, SuMode::Train, &mut rng)?;
                let row = logits.data();
                let (loss, glogits) = softmax_xent(row, *label)?;
                let lf = loss.to_f64();
                if !lf.is_finite() {
                    return Err(Error::Training(format!(
                        "loss diverged (nan/inf) at epoch {}",
                        epoch
                    )));
                }
                epoch_loss += lf;
                let pred = logits.reshape(&[row.len()])?.argmax()?;
                if pred == *label {
                    correct += 1;
                }
                let gl = Tensor::from_vec(&[1, glogits.len()], glogits)?;
                let (_, lg) = net.backward(&caches, &gl)?;
                for (a, b) in gsum.iter_mut().zip(net.flat_grads(&lg)?) {
                    *a += b;
                }
            }
            let scale = T::from_f64(1.0 / batch.len() as f64);
            let lr_t = T::from_f64(lr);
            let mom = T::from_f64(cfg.momentum);
            let wd = T::from_f64(cfg.weight_decay);
            for ((p, v), g) in params.iter_mut().zip(&mut velocity).zip(&gsum) {
                let grad = *g * scale + wd * *p;
                *v = mom * *v - lr_t * grad;
                *p += *v;
            }
            net.set_flat_params(&params)?;
        }
        let rec = EpochRecord {
            epoch,
            loss: epoch_loss / data.len() as f64,
            accuracy: correct as f64 / data.len() as f64,
        };
        if !quiet {
            println!("epoch {} loss {:.6} accuracy {:.4}", rec.epoch, rec.loss, rec.accuracy);
        }
        records.push(rec);
    }
    Ok(records)
}

/// Step 1 of the transfer procedure: supervised training on the source
/// dataset.
pub fn pretrain<T: Scalar>(
    net: &mut Network<T>,
    source: &[(FeatureMap<T>, usize)],
    cfg: &TrainConfig,
    quiet: bool,
) -> Result<Vec<EpochRecord>> {
    train(net, source, cfg, quiet)
}

/// Steps 2-3: frozen feature representations from the last convolutional
/// layer, one flattened vector per patch.
pub fn extract_conv_features<T: Scalar>(
    net: &Network<T>,
    patches: &[FeatureMap<T>],
) -> Result<Vec<Vec<T>>> {
    let mut out = Vec::with_capacity(patches.len());
    for p in patches {
        out.extend(net.conv_features(p)?);
    }
    Ok(out)
}

/// Step 4: train the TransferNet on frozen features.
pub fn train_transfernet<T: Scalar>(
    features: &[Vec<T>],
    labels: &[usize],
    tspec: &TransferNetSpec,
    cfg: &TrainConfig,
    quiet: bool,
) -> Result<(Network<T>, Vec<EpochRecord>)> {
    if features.len() != labels.len() {
        return Err(Error::Label(format!(
            "{} features but {} labels",
            features.len(),
            labels.len()
        )));
    }
    if features.is_empty() {
        return Err(Error::EmptyInput("no features".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= tspec.classes) {
        return Err(Error::Label(format!(
            "class index {} out of range for {} classes",
            bad, tspec.classes
        )));
    }
    let flen = features[0].len();
    let spec = tspec.network_spec(flen);
    let mut net = Network::build_with_init(spec, cfg.seed, cfg.init_std)?;
    let data: Vec<(FeatureMap<T>, usize)> = features
        .iter()
        .zip(labels)
        .map(|(f, &l)| {
            let t = Tensor::from_vec(&[1, 1, flen, 1], f.clone())?;
            Ok((FeatureMap::new(t)?, l))
        })
        .collect::<Result<_>>()?;
    let records = train(&mut net, &data, cfg, quiet)?;
    Ok((net, records))
}

/// Step 5: replace the base network's fully connected layers with the
/// trained TransferNet, keeping the convolutional stack bit-exact.
pub fn graft<T: Scalar>(base: &Network<T>, transfer: &Network<T>) -> Result<Network<T>> {
    let last_conv = base
        .spec
        .last_conv_index()
        .ok_or_else(|| Error::Config("base network has no convolutional layer".into()))?;
    if !transfer
        .spec
        .layers
        .iter()
        .all(|l| matches!(l, LayerSpec::Fc { .. }))
    {
        return Err(Error::Config("transfer network must be fully connected".into()));
    }
    let volume = base.spec.last_conv_volume()?;
    let fan_in = match transfer.layers.first() {
        Some(Layer::Fc(f)) => f.fan_in(),
        _ => return Err(Error::Config("transfer network is empty".into())),
    };
    if fan_in != volume {
        return Err(Error::dim(format!(
            "transfer fan-in {} does not match last-conv volume {}",
            fan_in, volume
        )));
    }
    let mut spec_layers = base.spec.layers[..=last_conv].to_vec();
    spec_layers.extend(transfer.spec.layers.iter().cloned());
    let spec = NetworkSpec {
        input: base.spec.input,
        layers: spec_layers,
        strict_census: base.spec.strict_census,
    };
    spec.validate()?;
    let mut layers = base.layers[..=last_conv].to_vec();
    layers.extend(transfer.layers.iter().cloned());
    Ok(Network { spec, layers })
}

/// Insert a shuffle layer immediately after the first sub-sampling layer.
pub fn with_su_layer<T: Scalar>(net: &Network<T>, blocks: usize, prob: f64) -> Result<Network<T>> {
    if net.spec.su_index().is_some() {
        return Err(Error::Config("network already has a shuffle layer".into()));
    }
    let first_sub = net
        .spec
        .layers
        .iter()
        .position(|l| matches!(l, LayerSpec::SubSample { .. }))
        .ok_or_else(|| Error::Config("network has no sub-sampling layer".into()))?;
    let mut spec = net.spec.clone();
    spec.layers.insert(first_sub + 1, LayerSpec::Su { blocks, prob });
    spec.validate()?;
    let mut layers = net.layers.clone();
    layers.insert(first_sub + 1, Layer::Su(SuConfig::new(blocks, prob)?));
    Ok(Network { spec, layers })
}

/// Step 6: fine-tune the grafted network end to end, with or without the
/// shuffle layer. Returns the tuned network (variant W or W_su).
pub fn finetune<T: Scalar>(
    combined: &Network<T>,
    patches: &[(FeatureMap<T>, usize)],
    cfg: &TrainConfig,
    with_su: Option<(usize, f64)>,
    quiet: bool,
) -> Result<(Network<T>, Vec<EpochRecord>)> {
    let mut net = match with_su {
        Some((blocks, prob)) => with_su_layer(combined, blocks, prob)?,
        None => combined.clone(),
    };
    let records = train(&mut net, patches, cfg, quiet)?;
    Ok((net, records))
}

const MODEL_MAGIC: &[u8; 4] = b"S2IC";
const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    spec: NetworkSpec,
    variant: String,
}

/// Write a model file: magic, version, length-prefixed JSON header,
/// then the parameters as little-endian f32 in declaration order. The
/// write is atomic (temp file + rename).
pub fn save_model(path: &Path, net: &Network<f32>, variant: &str) -> Result<()> {
    let header = serde_json::to_vec(&ModelHeader {
        spec: net.spec.clone(),
        variant: variant.to_string(),
    })
    .map_err(|e| Error::Format {
        offset: 0,
        msg: e.to_string(),
    })?;
    let params = net.flat_params();
    let mut buf = Vec::with_capacity(12 + header.len() + params.len() * 4);
    buf.extend_from_slice(MODEL_MAGIC);
    buf.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header);
    for p in params {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&buf)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Read a model file back; the inverse of `save_model`, bit-exact.
pub fn load_model(path: &Path) -> Result<(Network<f32>, String)> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    if buf.len() < 12 {
        return Err(Error::format(buf.len(), "file truncated before header"));
    }
    if &buf[0..4] != MODEL_MAGIC {
        return Err(Error::format(0, "bad magic; not a model file"));
    }
    let version = u32::from_le_bytes(buf[4..8].try_into().unwrap());
    if version != MODEL_VERSION {
        return Err(Error::format(
            4,
            format!("unsupported model version {} (expected {})", version, MODEL_VERSION),
        ));
    }
    let hlen = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
    if buf.len() < 12 + hlen {
        return Err(Error::format(buf.len(), "file truncated inside header"));
    }
    let header: ModelHeader = serde_json::from_slice(&buf[12..12 + hlen])
        .map_err(|e| Error::format(12, format!("bad header: {}", e)))?;
    let mut net = Network::<f32>::build(header.spec, 0)?;
    let expected = net.flat_params().len();
    let body = &buf[12 + hlen..];
    if body.len() != expected * 4 {
        return Err(Error::format(
            12 + hlen,
            format!(
                "parameter blob is {} bytes, expected {}",
                body.len(),
                expected * 4
            ),
        ));
    }
    let params: Vec<f32> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    net.set_flat_params(&params)?;
    Ok((net, header.variant))
}

/// Write training progress as a `epoch,loss,accuracy` CSV.
pub fn write_metrics_csv(path: &Path, records: &[EpochRecord]) -> Result<()> {
    let mut out = String::from("epoch,loss,accuracy\n");
    for r in records {
        out.push_str(&format!("{},{},{}\n", r.epoch, r.loss, r.accuracy));
    }
    std::fs::write(path, out)?;
    Ok(())
}
