//! The full-resolution flow network and its two ablation variants.
//!
//! Encoder `E1..E4` runs on the RGB center view. Its 192-channel output is
//! concatenated with the relative depth map and two viewpoint maps, then the
//! decoder `D1..D4` regresses a Tanh-bounded two-channel map that is scaled
//! to pixels and used to backward-warp the center view.

mod checkpoint;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ops, Node, ParameterStore};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};
use crate::warp::{bilinear_warp, coord_maps, flow_scale, ViewpointOffset};

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub(crate) use checkpoint::{read_records, write_records, ByteReader};

/// Which network layout a parameter set belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Full-resolution network with depth and viewpoint features.
    Full,
    /// Same network without the depth feature (D1 takes 194 channels).
    NoDepth,
    /// Strided encoder with nearest-neighbour upsampling in the decoder.
    EncDec,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Full, Variant::NoDepth, Variant::EncDec];

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoDepth => "no_depth",
            Variant::EncDec => "encdec",
        }
    }

    pub(crate) fn tag(&self) -> u32 {
        match self {
            Variant::Full => 0,
            Variant::NoDepth => 1,
            Variant::EncDec => 2,
        }
    }

    pub(crate) fn from_tag(tag: u32) -> Option<Self> {
        Variant::ALL.into_iter().find(|v| v.tag() == tag)
    }

    fn uses_depth(&self) -> bool {
        !matches!(self, Variant::NoDepth)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Variant::Full),
            "no_depth" | "no-depth" => Ok(Variant::NoDepth),
            "encdec" | "enc_dec" => Ok(Variant::EncDec),
            _ => Err(Error::invalid(format!(
                "unknown model variant {s:?} (expected full, no_depth or encdec)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

/// One convolution layer of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: &'static str,
    pub kernel: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub activation: Activation,
    pub stride: usize,
    /// Nearest-neighbour ×2 upsampling applied to this layer's input.
    pub upsample_input: bool,
}

impl LayerSpec {
    const fn new(
        name: &'static str,
        kernel: usize,
        cin: usize,
        cout: usize,
        act: Activation,
    ) -> Self {
        LayerSpec {
            name,
            kernel,
            in_channels: cin,
            out_channels: cout,
            activation: act,
            stride: 1,
            upsample_input: false,
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [
            self.out_channels,
            self.in_channels,
            self.kernel,
            self.kernel,
        ]
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn fan_out(&self) -> usize {
        self.out_channels * self.kernel * self.kernel
    }
}

/// Channels of the encoder output.
pub const FEATURE_CHANNELS: usize = 192;

const FULL_LAYERS: [LayerSpec; 8] = [
    LayerSpec::new("E1", 7, 3, 32, Activation::Relu),
    LayerSpec::new("E2", 5, 32, 64, Activation::Relu),
    LayerSpec::new("E3", 3, 64, 128, Activation::Relu),
    LayerSpec::new("E4", 1, 128, 192, Activation::Relu),
    LayerSpec::new("D1", 3, 195, 192, Activation::Relu),
    LayerSpec::new("D2", 3, 192, 128, Activation::Relu),
    LayerSpec::new("D3", 3, 128, 64, Activation::Relu),
    LayerSpec::new("D4", 3, 64, 2, Activation::Tanh),
];

/// Layer table of a variant, in execution order.
pub fn layer_specs(variant: Variant) -> Vec<LayerSpec> {
    let mut layers = FULL_LAYERS.to_vec();
    match variant {
        Variant::Full => {}
        Variant::NoDepth => layers[4].in_channels = FEATURE_CHANNELS + 2,
        Variant::EncDec => {
            layers[1].stride = 2;
            layers[2].stride = 2;
            layers[5].upsample_input = true;
            layers[7].upsample_input = true;
        }
    }
    layers
}

/// Spatial downsampling between the input and the feature connection.
fn bottleneck_factor(variant: Variant) -> usize {
    layer_specs(variant)
        .iter()
        .take(4)
        .map(|l| l.stride)
        .product()
}

/// Trained (or freshly initialised) network weights plus the metadata needed
/// to run them.
#[derive(Debug, Clone)]
pub struct ModelParams<T: Scalar = f32> {
    pub variant: Variant,
    /// Flow magnitude, in pixels, that a Tanh output of ±1 maps to.
    pub max_disp: f64,
    pub store: ParameterStore<T>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn layers(&self) -> Vec<LayerSpec> {
        layer_specs(self.variant)
    }

    pub fn num_parameters(&self) -> usize {
        self.store.numel()
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            variant: self.variant,
            max_disp: self.max_disp,
            store: self.store.cast(),
        }
    }

    /// Copy whose parameters are constants, for graph-free inference.
    pub fn frozen(&self) -> ModelParams<T> {
        ModelParams {
            variant: self.variant,
            max_disp: self.max_disp,
            store: self.store.frozen(),
        }
    }

    /// Same layout with every weight and bias set to zero.
    pub fn zeroed(&self) -> ModelParams<T> {
        let mut store = ParameterStore::new();
        for (name, node) in self.store.iter() {
            store
                .insert(name, Tensor::zeros(node.shape()))
                .expect("names are unique");
        }
        ModelParams {
            variant: self.variant,
            max_disp: self.max_disp,
            store,
        }
    }

    /// Check that the store holds exactly the variant's parameters.
    pub fn validate(&self) -> Result<()> {
        if !(self.max_disp > 0.0) || !self.max_disp.is_finite() {
            return Err(Error::invalid(format!(
                "max_disp {} must be positive",
                self.max_disp
            )));
        }
        let layers = self.layers();
        if self.store.len() != 2 * layers.len() {
            return Err(Error::invalid(format!(
                "{} variant needs {} parameters, store has {}",
                self.variant,
                2 * layers.len(),
                self.store.len()
            )));
        }
        for l in &layers {
            let w = self.store.get(&l.weight_name())?;
            let b = self.store.get(&l.bias_name())?;
            if w.shape() != l.weight_shape() || b.shape() != [l.out_channels] {
                return Err(Error::shape(
                    "model",
                    format!(
                        "{} has weight {:?}, bias {:?}",
                        l.name,
                        w.shape(),
                        b.shape()
                    ),
                ));
            }
        }
        Ok(())
    }
}

/// Xavier-uniform weights, zero biases, reproducible from `seed`.
pub fn init_model(variant: Variant, seed: u64, max_disp: f64) -> Result<ModelParams<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParameterStore::new();
    for l in layer_specs(variant) {
        let bound = (6.0 / (l.fan_in() + l.fan_out()) as f64).sqrt();
        let weight = Tensor::from_fn(l.weight_shape(), |_| rng.random_range(-bound..bound) as f32);
        store.insert(l.weight_name(), weight)?;
        store.insert(l.bias_name(), Tensor::zeros([l.out_channels]))?;
    }
    let params = ModelParams {
        variant,
        max_disp,
        store,
    };
    params.validate()?;
    Ok(params)
}

/// A batch of network inputs.
#[derive(Debug, Clone)]
pub struct ModelInput<T: Scalar = f32> {
    /// `B×3×H×W` center views in `[0, 1]`.
    pub image: Tensor<T>,
    /// `B×1×H×W` relative depth in `[0, 1]`, 0 nearest.
    pub depth: Tensor<T>,
    /// One target viewpoint per batch element.
    pub offsets: Vec<ViewpointOffset>,
}

impl<T: Scalar> ModelInput<T> {
    pub fn new(image: Tensor<T>, depth: Tensor<T>, offsets: Vec<ViewpointOffset>) -> Result<Self> {
        let image = image.batched()?;
        let depth = depth.batched()?;
        let (b, c, h, w) = image.image_dims()?;
        let (db, dc, dh, dw) = depth.image_dims()?;
        if c != 3 {
            return Err(Error::shape(
                "model input",
                format!("image has {c} channels, need 3"),
            ));
        }
        if (db, dc, dh, dw) != (b, 1, h, w) {
            return Err(Error::shape(
                "model input",
                format!(
                    "depth {:?} does not match image {:?}",
                    depth.shape(),
                    image.shape()
                ),
            ));
        }
        if offsets.len() != b {
            return Err(Error::shape(
                "model input",
                format!("{} offsets for batch of {b}", offsets.len()),
            ));
        }
        if !depth.all_finite() {
            return Err(Error::invalid("depth map contains non-finite values"));
        }
        let offsets = offsets
            .into_iter()
            .map(|q| ViewpointOffset::new(q.du, q.dv))
            .collect::<Result<_>>()?;
        Ok(ModelInput {
            image,
            depth,
            offsets,
        })
    }

    /// A batch of one: `3×H×W` image, `1×H×W` depth.
    pub fn single(image: Tensor<T>, depth: Tensor<T>, q: ViewpointOffset) -> Result<Self> {
        Self::new(image, depth, vec![q])
    }

    pub fn batch(&self) -> usize {
        self.offsets.len()
    }

    /// `(H, W)` of the inputs.
    pub fn size(&self) -> (usize, usize) {
        let s = self.image.shape();
        (s[2], s[3])
    }

    fn coord_features(&self, h: usize, w: usize) -> Result<Tensor<T>> {
        let maps = self
            .offsets
            .iter()
            .map(|&q| coord_maps(q, h, w))
            .collect::<Result<Vec<_>>>()?;
        Tensor::stack(&maps)
    }
}

/// Shape of one activation map recorded during a forward pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivationTrace {
    pub layer: String,
    pub shape: Vec<usize>,
}

fn apply_layer<T: Scalar>(
    params: &ModelParams<T>,
    spec: &LayerSpec,
    x: &Node<T>,
    trace: &mut Option<&mut Vec<ActivationTrace>>,
) -> Result<Node<T>> {
    let x = if spec.upsample_input {
        ops::upsample_nearest2(x)?
    } else {
        x.clone()
    };
    let w = params.store.get(&spec.weight_name())?;
    let b = params.store.get(&spec.bias_name())?;
    let y = ops::conv2d_strided(&x, w, b, spec.stride, (spec.kernel - 1) / 2)?;
    let y = match spec.activation {
        Activation::Relu => ops::relu(&y)?,
        Activation::Tanh => ops::tanh(&y)?,
    };
    if let Some(t) = trace.as_mut() {
        t.push(ActivationTrace {
            layer: spec.name.to_string(),
            shape: y.shape().to_vec(),
        });
    }
    Ok(y)
}

fn run_flow<T: Scalar>(
    params: &ModelParams<T>,
    input: &ModelInput<T>,
    mut trace: Option<&mut Vec<ActivationTrace>>,
) -> Result<Node<T>> {
    let layers = params.layers();
    let (h, w) = input.size();
    let factor = bottleneck_factor(params.variant);
    if h % factor != 0 || w % factor != 0 {
        return Err(Error::shape(
            "forward",
            format!(
                "{} variant needs H and W divisible by {factor}, got {h}×{w}",
                params.variant
            ),
        ));
    }

    let mut x = Node::constant(input.image.clone());
    for spec in &layers[..4] {
        x = apply_layer(params, spec, &x, &mut trace)?;
    }

    let (hb, wb) = (h / factor, w / factor);
    let coords = Node::constant(input.coord_features(hb, wb)?);
    let features = if params.variant.uses_depth() {
        let depth = if factor == 1 {
            input.depth.clone()
        } else {
            ops::downsample_area(&input.depth, factor)?
        };
        ops::concat_channels(&[x, Node::constant(depth), coords])?
    } else {
        ops::concat_channels(&[x, coords])?
    };
    if let Some(t) = trace.as_mut() {
        t.push(ActivationTrace {
            layer: "concat".into(),
            shape: features.shape().to_vec(),
        });
    }

    let mut y = features;
    for spec in &layers[4..] {
        y = apply_layer(params, spec, &y, &mut trace)?;
    }
    flow_scale(&y, params.max_disp)
}

fn expect_variant<T: Scalar>(params: &ModelParams<T>, variant: Variant) -> Result<()> {
    if params.variant != variant {
        return Err(Error::invalid(format!(
            "parameters are for the {} variant, not {}",
            params.variant, variant
        )));
    }
    Ok(())
}

/// Flow of the full variant, `B×2×H×W` pixels.
pub fn forward_flow<T: Scalar>(params: &ModelParams<T>, input: &ModelInput<T>) -> Result<Node<T>> {
    expect_variant(params, Variant::Full)?;
    run_flow(params, input, None)
}

/// Flow of the variant without the depth feature.
pub fn forward_flow_no_depth<T: Scalar>(
    params: &ModelParams<T>,
    input: &ModelInput<T>,
) -> Result<Node<T>> {
    expect_variant(params, Variant::NoDepth)?;
    run_flow(params, input, None)
}

/// Flow of the encoder-decoder variant.
pub fn forward_flow_encdec<T: Scalar>(
    params: &ModelParams<T>,
    input: &ModelInput<T>,
) -> Result<Node<T>> {
    expect_variant(params, Variant::EncDec)?;
    run_flow(params, input, None)
}

/// Flow of whichever variant `params` holds.
pub fn predict_flow<T: Scalar>(params: &ModelParams<T>, input: &ModelInput<T>) -> Result<Node<T>> {
    run_flow(params, input, None)
}

/// [`predict_flow`] that also records every activation shape.
pub fn predict_flow_traced<T: Scalar>(
    params: &ModelParams<T>,
    input: &ModelInput<T>,
) -> Result<(Node<T>, Vec<ActivationTrace>)> {
    let mut trace = Vec::new();
    let flow = run_flow(params, input, Some(&mut trace))?;
    Ok((flow, trace))
}

/// Synthesised views and the flow that produced them.
#[derive(Debug, Clone)]
pub struct Synthesis<T: Scalar = f32> {
    pub image: Node<T>,
    pub flow: Node<T>,
}

/// Predict the flow and backward-warp the input views by it.
pub fn synthesize<T: Scalar>(
    params: &ModelParams<T>,
    input: &ModelInput<T>,
) -> Result<Synthesis<T>> {
    let flow = predict_flow(params, input)?;
    let image = bilinear_warp(&Node::constant(input.image.clone()), &flow)?;
    Ok(Synthesis { image, flow })
}
