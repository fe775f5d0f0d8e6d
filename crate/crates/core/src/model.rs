//! Declarative model configs, the layer-stack builder, and whole-model
//! forward/backward passes.
//!
//! The stack is always `[conv -> relu -> maxpool] x N -> dropout -> flatten ->
//! [dense -> relu] x M -> dense(classes) -> softmax`. The backward pass fuses
//! softmax with the cross-entropy loss, so the gradient at the logits is
//! `(prob - target) / batch` and never touches the raw softmax Jacobian.

use thiserror::Error;

use crate::layers::{
    conv2d_backward, conv2d_forward, dense_backward, dense_forward, dropout_backward,
    dropout_forward, pool2d_backward, pool2d_forward, relu, relu_backward, softmax, ConvParams,
    DenseParams, DropoutMask, DropoutSpec, LayerError, PoolMode, PoolTrace,
};
use crate::rng::{derive_seed, Rng};
use crate::tensor::{Scalar, Shape, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("config error: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("input error: {0}")]
    Input(String),
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

type Result<T> = std::result::Result<T, ModelError>;

/// Declarative architecture description.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Input image dims as (channels, height, width).
    pub input: (usize, usize, usize),
    /// Conv blocks as (filters, kernel_size); each block is conv+relu+2x2 maxpool.
    pub conv_blocks: Vec<(usize, usize)>,
    /// Hidden dense layer widths (each followed by relu).
    pub dense_units: Vec<usize>,
    /// Drop probability for the single dropout layer before flatten.
    pub dropout_p: f64,
    /// Output class count.
    pub classes: usize,
}

impl ModelConfig {
    /// The full-scale architecture: 1024@5x5, 512@3x3, 256@3x3 conv blocks,
    /// dense 256 and 128, 47 classes. Builds and runs, but is far too heavy
    /// to train on a desktop CPU.
    pub fn full_scale() -> Self {
        ModelConfig {
            input: (1, 32, 32),
            conv_blocks: vec![(1024, 5), (512, 3), (256, 3)],
            dense_units: vec![256, 128],
            dropout_p: 0.5,
            classes: 47,
        }
    }

    /// Default desk-scale config; trains in minutes on a laptop CPU.
    pub fn desk() -> Self {
        ModelConfig {
            input: (1, 32, 32),
            conv_blocks: vec![(8, 5), (16, 3), (32, 3)],
            dense_units: vec![64],
            dropout_p: 0.25,
            classes: 47,
        }
    }

    /// Spatial dims after each conv block (post-conv, post-pool), checking
    /// that every stage keeps positive extents.
    pub fn shape_trace(&self) -> Result<Vec<(usize, usize, usize)>> {
        let (mut c, mut h, mut w) = self.input;
        if c == 0 || h == 0 || w == 0 {
            return Err(ModelError::Config(format!(
                "input dims must be positive, got ({c},{h},{w})"
            )));
        }
        let mut trace = Vec::with_capacity(self.conv_blocks.len());
        for (i, &(filters, k)) in self.conv_blocks.iter().enumerate() {
            if filters == 0 || k == 0 {
                return Err(ModelError::Config(format!(
                    "conv block {i}: filters and kernel size must be positive"
                )));
            }
            if k > h || k > w {
                return Err(ModelError::Config(format!(
                    "conv block {i}: kernel {k}x{k} does not fit input {h}x{w}"
                )));
            }
            let (ch, cw) = (h - k + 1, w - k + 1);
            let (ph, pw) = (ch / 2, cw / 2);
            if ph == 0 || pw == 0 {
                return Err(ModelError::Config(format!(
                    "conv block {i}: 2x2 pool of {ch}x{cw} leaves no spatial extent"
                )));
            }
            c = filters;
            h = ph;
            w = pw;
            trace.push((c, h, w));
        }
        Ok(trace)
    }

    /// Width of the flatten layer output.
    pub fn flatten_width(&self) -> Result<usize> {
        let (c, h, w) = match self.shape_trace()?.last() {
            Some(&dims) => dims,
            None => self.input,
        };
        Ok(c * h * w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(ModelError::Config(format!(
                "classes must be >= 2, got {}",
                self.classes
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(ModelError::Config(format!(
                "dropout_p must be in [0,1), got {}",
                self.dropout_p
            )));
        }
        for (i, &units) in self.dense_units.iter().enumerate() {
            if units == 0 {
                return Err(ModelError::Config(format!(
                    "dense layer {i}: width must be positive"
                )));
            }
        }
        self.shape_trace()?;
        Ok(())
    }
}

/// One layer of the assembled stack.
#[derive(Debug, Clone)]
pub enum Layer<S = f32> {
    Conv(ConvParams<S>),
    Relu,
    MaxPool,
    Dropout { p: f64 },
    Flatten,
    Dense(DenseParams<S>),
    Softmax,
}

/// A parameterized layer extracted from or destined for a checkpoint.
#[derive(Debug, Clone)]
pub enum ParamLayer<S = f32> {
    Conv(ConvParams<S>),
    Dense(DenseParams<S>),
}

/// Ordered layer list with owned parameters.
#[derive(Debug, Clone)]
pub struct Model<S = f32> {
    layers: Vec<Layer<S>>,
    input: (usize, usize, usize),
    classes: usize,
}

enum LayerCache<S> {
    Input(Tensor<S>),
    Pool(PoolTrace),
    Mask(DropoutMask<S>),
    PreFlatten(Shape),
    Probs(Tensor<S>),
    None,
}

/// Per-sample layer caches plus the batch probabilities, produced by a
/// tracing forward pass and consumed by `Model::backward`.
pub struct ForwardTrace<S = f32> {
    samples: Vec<Vec<LayerCache<S>>>,
    probs: Tensor<S>,
}

impl<S: Scalar> ForwardTrace<S> {
    /// Batch probabilities, shape (B, classes).
    pub fn probs(&self) -> &Tensor<S> {
        &self.probs
    }

    pub fn batch_size(&self) -> usize {
        self.samples.len()
    }
}

/// Gradients for every parameter tensor, in `Model::params` order.
#[derive(Debug, Clone)]
pub struct Gradients<S = f32> {
    pub tensors: Vec<Tensor<S>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn zeros_like(model: &Model<S>) -> Self {
        Gradients {
            tensors: model
                .params()
                .iter()
                .map(|p| Tensor::zeros(p.shape().clone()))
                .collect(),
        }
    }

    /// Largest absolute entry across all parameter gradients.
    pub fn max_abs(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.iter())
            .fold(0.0f64, |m, &v| m.max(v.to_f64().abs()))
    }
}

fn accumulate<S: Scalar>(dst: &mut Tensor<S>, src: &Tensor<S>) {
    for (d, &s) in dst.data_mut().iter_mut().zip(src.iter()) {
        *d += s;
    }
}

impl<S: Scalar> Model<S> {
    /// Build the canonical stack from a config with He-initialized weights.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::new(seed);
        let mut layers = Vec::new();
        let (mut c, mut h, mut w) = config.input;
        for &(filters, k) in &config.conv_blocks {
            layers.push(Layer::Conv(ConvParams::he_init(filters, c, k, k, &mut rng)));
            layers.push(Layer::Relu);
            layers.push(Layer::MaxPool);
            c = filters;
            let (conv_h, conv_w) = (h - k + 1, w - k + 1);
            h = conv_h / 2;
            w = conv_w / 2;
        }
        layers.push(Layer::Dropout {
            p: config.dropout_p,
        });
        layers.push(Layer::Flatten);
        let mut width = c * h * w;
        for &units in &config.dense_units {
            layers.push(Layer::Dense(DenseParams::he_init(units, width, &mut rng)));
            layers.push(Layer::Relu);
            width = units;
        }
        // The classifier head starts near zero so the initial predictions
        // are close to uniform; He scaling there would spread the logits
        // and inflate the initial loss well past ln(classes).
        layers.push(Layer::Dense(DenseParams::normal_init(
            config.classes,
            width,
            0.01,
            &mut rng,
        )));
        layers.push(Layer::Softmax);
        Ok(Model {
            layers,
            input: config.input,
            classes: config.classes,
        })
    }

    /// Rebuild a model around externally supplied parameters (checkpoint
    /// load). The canonical stack is inferred: every conv becomes a
    /// conv+relu+pool block and every dense but the last is followed by relu.
    pub fn assemble(
        param_layers: Vec<ParamLayer<S>>,
        input: (usize, usize, usize),
        dropout_p: f64,
    ) -> Result<Self> {
        let mut conv_params = Vec::new();
        let mut dense_params = Vec::new();
        let mut seen_dense = false;
        for (i, pl) in param_layers.into_iter().enumerate() {
            match pl {
                ParamLayer::Conv(p) => {
                    if seen_dense {
                        return Err(ModelError::Config(format!(
                            "record {i}: conv layer after dense layers is unsupported"
                        )));
                    }
                    conv_params.push(p);
                }
                ParamLayer::Dense(p) => {
                    seen_dense = true;
                    dense_params.push(p);
                }
            }
        }
        let last_dense = dense_params
            .last()
            .ok_or_else(|| ModelError::Config("no dense output layer in records".into()))?;
        let classes = last_dense.out_units();
        if classes < 2 {
            return Err(ModelError::Config(format!(
                "output layer has {classes} units; need >= 2 classes"
            )));
        }

        let config = ModelConfig {
            input,
            conv_blocks: conv_params
                .iter()
                .map(|p| (p.out_channels(), p.kernel_hw().0))
                .collect(),
            dense_units: dense_params[..dense_params.len() - 1]
                .iter()
                .map(|p| p.out_units())
                .collect(),
            dropout_p,
            classes,
        };
        config.validate()?;

        // Cross-check the declared extents against the shape algebra.
        let (mut c, _, _) = input;
        for (i, p) in conv_params.iter().enumerate() {
            let (kh, kw) = p.kernel_hw();
            if kh != kw {
                return Err(ModelError::Config(format!(
                    "conv record {i}: non-square kernel {kh}x{kw} is unsupported"
                )));
            }
            if p.in_channels() != c {
                return Err(ModelError::Config(format!(
                    "conv record {i}: expects {} input channels, pipeline provides {c}",
                    p.in_channels()
                )));
            }
            c = p.out_channels();
        }
        let mut width = config.flatten_width()?;
        for (i, p) in dense_params.iter().enumerate() {
            if p.in_units() != width {
                return Err(ModelError::Config(format!(
                    "dense record {i}: expects {} inputs, pipeline provides {width}",
                    p.in_units()
                )));
            }
            width = p.out_units();
        }

        let mut layers = Vec::new();
        for p in conv_params {
            layers.push(Layer::Conv(p));
            layers.push(Layer::Relu);
            layers.push(Layer::MaxPool);
        }
        layers.push(Layer::Dropout { p: dropout_p });
        layers.push(Layer::Flatten);
        let n_dense = dense_params.len();
        for (i, p) in dense_params.into_iter().enumerate() {
            layers.push(Layer::Dense(p));
            if i + 1 < n_dense {
                layers.push(Layer::Relu);
            }
        }
        layers.push(Layer::Softmax);
        Ok(Model {
            layers,
            input,
            classes,
        })
    }

    pub fn layers(&self) -> &[Layer<S>] {
        &self.layers
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn input_dims(&self) -> (usize, usize, usize) {
        self.input
    }

    /// Parameterized layers in stack order, for checkpointing.
    pub fn param_layers(&self) -> Vec<ParamLayer<S>> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                Layer::Conv(p) => Some(ParamLayer::Conv(p.clone())),
                Layer::Dense(p) => Some(ParamLayer::Dense(p.clone())),
                _ => None,
            })
            .collect()
    }

    /// All parameter tensors in a fixed order: per layer, kernels/weight
    /// before bias.
    pub fn params(&self) -> Vec<&Tensor<S>> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv(p) => {
                    out.push(&p.kernels);
                    out.push(&p.bias);
                }
                Layer::Dense(p) => {
                    out.push(&p.weight);
                    out.push(&p.bias);
                }
                _ => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<S>> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv(p) => {
                    out.push(&mut p.kernels);
                    out.push(&mut p.bias);
                }
                Layer::Dense(p) => {
                    out.push(&mut p.weight);
                    out.push(&mut p.bias);
                }
                _ => {}
            }
        }
        out
    }

    /// Human-readable name per parameter tensor, parallel to `params`.
    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut conv_idx = 0;
        let mut dense_idx = 0;
        for layer in &self.layers {
            match layer {
                Layer::Conv(_) => {
                    out.push(format!("conv{conv_idx}.kernels"));
                    out.push(format!("conv{conv_idx}.bias"));
                    conv_idx += 1;
                }
                Layer::Dense(_) => {
                    out.push(format!("dense{dense_idx}.weight"));
                    out.push(format!("dense{dense_idx}.bias"));
                    dense_idx += 1;
                }
                _ => {}
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    fn check_batch(&self, batch: &Tensor<S>) -> Result<(usize, usize)> {
        let (c, h, w) = self.input;
        if batch.rank() != 4 || batch.dims()[1..] != [c, h, w] {
            return Err(ModelError::Shape(format!(
                "batch shape {} does not match model input (B,{c},{h},{w})",
                batch.shape()
            )));
        }
        Ok((batch.dims()[0], c * h * w))
    }

    fn run_sample(
        &self,
        mut x: Tensor<S>,
        training: bool,
        sample_seed: u64,
        mut caches: Option<&mut Vec<LayerCache<S>>>,
    ) -> Result<Tensor<S>> {
        for (li, layer) in self.layers.iter().enumerate() {
            let mut cache = LayerCache::None;
            x = match layer {
                Layer::Conv(p) => {
                    if caches.is_some() {
                        cache = LayerCache::Input(x.clone());
                    }
                    conv2d_forward(&x, p)?
                }
                Layer::Relu => {
                    if caches.is_some() {
                        cache = LayerCache::Input(x.clone());
                    }
                    relu(&x)
                }
                Layer::MaxPool => {
                    let (y, trace) = pool2d_forward(&x, PoolMode::Max)?;
                    cache = LayerCache::Pool(trace);
                    y
                }
                Layer::Dropout { p } => {
                    let spec = DropoutSpec::new(*p, derive_seed(sample_seed, li as u64))?;
                    let (y, mask) = dropout_forward(&x, &spec, training);
                    cache = LayerCache::Mask(mask);
                    y
                }
                Layer::Flatten => {
                    cache = LayerCache::PreFlatten(x.shape().clone());
                    x.reshape(Shape::new([x.len()])?)?
                }
                Layer::Dense(p) => {
                    if caches.is_some() {
                        cache = LayerCache::Input(x.clone());
                    }
                    dense_forward(&x, p)?
                }
                Layer::Softmax => {
                    let y = softmax(&x)?;
                    cache = LayerCache::Probs(y.clone());
                    y
                }
            };
            if let Some(caches) = caches.as_deref_mut() {
                caches.push(cache);
            }
        }
        Ok(x)
    }

    fn forward_impl(
        &self,
        batch: &Tensor<S>,
        training: bool,
        seed: u64,
        mut traces: Option<&mut Vec<Vec<LayerCache<S>>>>,
    ) -> Result<Tensor<S>> {
        let (b, sample_len) = self.check_batch(batch)?;
        let (c, h, w) = self.input;
        let sample_shape = Shape::new([c, h, w])?;
        let mut probs = Vec::with_capacity(b * self.classes);
        for i in 0..b {
            let data = batch.data()[i * sample_len..(i + 1) * sample_len].to_vec();
            let x = Tensor::from_vec(sample_shape.clone(), data)?;
            let sample_seed = derive_seed(seed, i as u64);
            let row = match traces.as_deref_mut() {
                Some(all) => {
                    let mut caches = Vec::with_capacity(self.layers.len());
                    let row = self.run_sample(x, training, sample_seed, Some(&mut caches))?;
                    all.push(caches);
                    row
                }
                None => self.run_sample(x, training, sample_seed, None)?,
            };
            probs.extend_from_slice(row.data());
        }
        Ok(Tensor::from_vec(Shape::new([b, self.classes])?, probs)?)
    }

    /// Run the batch through the stack; each output row is a probability
    /// vector. In training mode dropout masks are drawn from `seed`.
    pub fn forward(&self, batch: &Tensor<S>, training: bool, seed: u64) -> Result<Tensor<S>> {
        self.forward_impl(batch, training, seed, None)
    }

    /// Like `forward`, but records the per-layer caches the backward pass
    /// consumes.
    pub fn forward_trace(
        &self,
        batch: &Tensor<S>,
        training: bool,
        seed: u64,
    ) -> Result<(Tensor<S>, ForwardTrace<S>)> {
        let mut samples = Vec::new();
        let probs = self.forward_impl(batch, training, seed, Some(&mut samples))?;
        let trace = ForwardTrace {
            samples,
            probs: probs.clone(),
        };
        Ok((probs, trace))
    }

    /// Gradients of the mean categorical cross-entropy over the batch with
    /// respect to every parameter. Targets must be exact one-hot rows.
    pub fn backward(&self, trace: &ForwardTrace<S>, one_hot: &Tensor<S>) -> Result<Gradients<S>> {
        let b = trace.samples.len();
        if trace.samples.iter().any(|s| s.len() != self.layers.len()) {
            return Err(ModelError::Input(format!(
                "forward cache does not belong to this model ({} layers)",
                self.layers.len()
            )));
        }
        if one_hot.rank() != 2 || one_hot.dims() != [b, self.classes] {
            return Err(ModelError::Input(format!(
                "targets shape {} does not match ({b},{})",
                one_hot.shape(),
                self.classes
            )));
        }
        for row in 0..b {
            let r = &one_hot.data()[row * self.classes..(row + 1) * self.classes];
            let mut ones = 0;
            for &v in r {
                if v == S::ONE {
                    ones += 1;
                } else if v != S::ZERO {
                    return Err(ModelError::Input(format!(
                        "target row {row} is not one-hot (entry {v})"
                    )));
                }
            }
            if ones != 1 {
                return Err(ModelError::Input(format!(
                    "target row {row} is not one-hot ({ones} ones)"
                )));
            }
        }

        // Map each parameterized layer to its slot in the gradient list.
        let mut slot_of_layer = vec![usize::MAX; self.layers.len()];
        let mut next = 0;
        for (li, layer) in self.layers.iter().enumerate() {
            if matches!(layer, Layer::Conv(_) | Layer::Dense(_)) {
                slot_of_layer[li] = next;
                next += 2;
            }
        }

        let mut grads = Gradients::zeros_like(self);
        let inv_b = S::from_f64(1.0 / b as f64);
        for (si, caches) in trace.samples.iter().enumerate() {
            let target_row = &one_hot.data()[si * self.classes..(si + 1) * self.classes];
            let mut grad: Option<Tensor<S>> = None;
            for (li, layer) in self.layers.iter().enumerate().rev() {
                let cache = &caches[li];
                grad = Some(match (layer, cache) {
                    (Layer::Softmax, LayerCache::Probs(probs)) => {
                        // Fused softmax + cross-entropy gradient at the logits.
                        let data = probs
                            .iter()
                            .zip(target_row.iter())
                            .map(|(&p, &t)| (p - t) * inv_b)
                            .collect();
                        Tensor::from_vec(probs.shape().clone(), data)?
                    }
                    (Layer::Dense(p), LayerCache::Input(x)) => {
                        let g = grad.ok_or_else(|| missing_cache("dense"))?;
                        let dg = dense_backward(x, p, &g)?;
                        let slot = slot_of_layer[li];
                        accumulate(&mut grads.tensors[slot], &dg.weight);
                        accumulate(&mut grads.tensors[slot + 1], &dg.bias);
                        dg.input
                    }
                    (Layer::Relu, LayerCache::Input(x)) => {
                        let g = grad.ok_or_else(|| missing_cache("relu"))?;
                        relu_backward(x, &g)?
                    }
                    (Layer::Flatten, LayerCache::PreFlatten(shape)) => {
                        let g = grad.ok_or_else(|| missing_cache("flatten"))?;
                        g.reshape(shape.clone())?
                    }
                    (Layer::Dropout { .. }, LayerCache::Mask(mask)) => {
                        let g = grad.ok_or_else(|| missing_cache("dropout"))?;
                        dropout_backward(mask, &g)?
                    }
                    (Layer::MaxPool, LayerCache::Pool(pt)) => {
                        let g = grad.ok_or_else(|| missing_cache("maxpool"))?;
                        pool2d_backward(pt, &g)?
                    }
                    (Layer::Conv(p), LayerCache::Input(x)) => {
                        let g = grad.ok_or_else(|| missing_cache("conv"))?;
                        let cg = conv2d_backward(x, p, &g)?;
                        let slot = slot_of_layer[li];
                        accumulate(&mut grads.tensors[slot], &cg.kernels);
                        accumulate(&mut grads.tensors[slot + 1], &cg.bias);
                        cg.input
                    }
                    _ => return Err(missing_cache("layer")),
                });
            }
        }
        Ok(grads)
    }
}

fn missing_cache(layer: &str) -> ModelError {
    ModelError::Input(format!(
        "forward cache missing or stale for {layer} layer; run forward_trace on this batch first"
    ))
}
