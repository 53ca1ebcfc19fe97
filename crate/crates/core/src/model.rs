//! The two networks: a vanilla convolutional autoencoder and the
//! pose-conditioned predictor that shares its encoder/decoder layout and adds
//! a pose branch plus two fully connected fusion layers between them.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use rand::Rng;

use crate::data::{PoseVector, Raster, IMAGE_SIZE, POSE_DIM};
use crate::error::{Error, Result};
use crate::layers::{
    leaky_relu_backward_inplace, leaky_relu_inplace, tanh_backward_inplace, tanh_inplace, Conv2d,
    ConvTranspose2d, Dense,
};
use crate::real::Real;
use crate::rng::{seeded, stream};
use crate::weights::{NamedTensor, WeightsHandle};

/// Architecture hyperparameters shared by both blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub input_size: usize,
    pub conv_filters: Vec<usize>,
    pub conv_kernels: Vec<usize>,
    pub conv_stride: usize,
    pub deconv_filters: Vec<usize>,
    pub deconv_kernels: Vec<usize>,
    pub projection_kernel: usize,
    pub pose_fc_dim: usize,
    pub fusion_fc_dims: Vec<usize>,
    pub leaky_relu_slope: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_size: IMAGE_SIZE,
            conv_filters: vec![32, 32, 64, 64],
            conv_kernels: vec![5, 3, 3, 3],
            conv_stride: 2,
            deconv_filters: vec![64, 64, 32, 32],
            deconv_kernels: vec![3, 3, 3, 5],
            projection_kernel: 3,
            pose_fc_dim: 64,
            fusion_fc_dims: vec![1024, 1024],
            leaky_relu_slope: 0.2,
        }
    }
}

impl ModelConfig {
    /// Spatial side of the encoder output map.
    pub fn bottleneck_side(&self) -> usize {
        let mut s = self.input_size;
        for _ in &self.conv_filters {
            s = s.div_ceil(self.conv_stride);
        }
        s
    }

    pub fn bottleneck_channels(&self) -> usize {
        self.conv_filters.last().copied().unwrap_or(1)
    }

    pub fn embedding_dim(&self) -> usize {
        let side = self.bottleneck_side();
        side * side * self.bottleneck_channels()
    }

    /// Width of the concatenated image embedding and pose features.
    pub fn fused_width(&self) -> usize {
        self.embedding_dim() + self.pose_fc_dim
    }

    /// Full check including the fixed 64×64 input size.
    pub fn validate(&self) -> Result<()> {
        if self.input_size != IMAGE_SIZE {
            return Err(Error::domain(format!(
                "input size {} not supported; networks take {IMAGE_SIZE}×{IMAGE_SIZE} views",
                self.input_size
            )));
        }
        self.validate_geometry()
    }

    /// Shape arithmetic only; accepts reduced input sizes.
    pub fn validate_geometry(&self) -> Result<()> {
        let layers = self.conv_filters.len();
        if layers == 0 {
            return Err(Error::domain("encoder needs at least one convolution"));
        }
        if self.conv_kernels.len() != layers
            || self.deconv_filters.len() != layers
            || self.deconv_kernels.len() != layers
        {
            return Err(Error::domain(
                "encoder and decoder must have the same number of layers with one kernel each",
            ));
        }
        if self.conv_stride < 2 {
            return Err(Error::domain("conv stride must be at least 2"));
        }
        let factor = self.conv_stride.pow(layers as u32);
        if self.input_size % factor != 0 {
            return Err(Error::domain(format!(
                "input size {} not divisible by {factor}",
                self.input_size
            )));
        }
        if self.deconv_filters[0] != self.bottleneck_channels() {
            return Err(Error::domain(
                "first decoder layer must take the bottleneck channel count",
            ));
        }
        if self.fusion_fc_dims.last() != Some(&self.embedding_dim()) {
            return Err(Error::domain(format!(
                "last fusion layer width must equal the embedding dim {}",
                self.embedding_dim()
            )));
        }
        if !(self.leaky_relu_slope > 0.0 && self.leaky_relu_slope < 1.0) {
            return Err(Error::domain("leaky relu slope must lie in (0,1)"));
        }
        let kernels = self.conv_kernels.iter().chain(&self.deconv_kernels);
        if kernels.chain([&self.projection_kernel]).any(|&k| k == 0) {
            return Err(Error::domain("kernel sizes must be positive"));
        }
        Ok(())
    }
}

/// Which of the two blocks a network is.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetworkKind {
    /// Block 1: encode → decode, reconstructs its input.
    Vanilla,
    /// Block 2: encode → fuse with pose → decode, predicts a target view.
    Predictor,
}

impl NetworkKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NetworkKind::Vanilla => "vanilla",
            NetworkKind::Predictor => "predictor",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "vanilla" => Some(NetworkKind::Vanilla),
            "predictor" => Some(NetworkKind::Predictor),
            _ => None,
        }
    }
}

/// Latent vector: encoder output (`e₂`) or fused latent (`e₁`).
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(pub Vec<f32>);

impl Embedding {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy)]
struct ParamIx {
    weight: usize,
    bias: usize,
}

/// Layer geometry of one block plus where its parameters sit in a
/// [`WeightsHandle`]. Holds no weights itself.
#[derive(Debug, Clone)]
pub struct Network {
    config: ModelConfig,
    kind: NetworkKind,
    encoder: Vec<Conv2d>,
    pose: Option<Dense>,
    fusion: Vec<Dense>,
    decoder: Vec<ConvTranspose2d>,
    projection: Conv2d,
    layout: Vec<(String, Vec<usize>, usize)>,
    enc_ix: Vec<ParamIx>,
    pose_ix: Option<ParamIx>,
    fusion_ix: Vec<ParamIx>,
    dec_ix: Vec<ParamIx>,
    proj_ix: ParamIx,
}

/// Intermediate activations of a batched forward pass, kept for backward.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    pub batch: usize,
    /// Input followed by every post-activation encoder map; the last entry
    /// is the flattened embedding.
    encoder: Vec<Vec<T>>,
    pose_in: Vec<T>,
    pose_out: Vec<T>,
    /// Concatenated input of the first fusion layer, then each fusion output.
    fusion: Vec<Vec<T>>,
    /// Decoder input followed by each post-activation decoder map.
    decoder: Vec<Vec<T>>,
    output: Vec<T>,
}

impl<T: Real> Trace<T> {
    /// Pre-fusion embeddings, `batch × embedding_dim`.
    pub fn embedding(&self) -> &[T] {
        self.encoder.last().expect("encoder trace")
    }

    /// Post-fusion latents (`e₁`); empty for the vanilla block.
    pub fn fused(&self) -> &[T] {
        self.fusion.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// Decoder output, `batch × 1 × size × size`, after tanh.
    pub fn output(&self) -> &[T] {
        &self.output
    }
}

impl Network {
    pub fn vanilla(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        Self::build(config, NetworkKind::Vanilla)
    }

    pub fn predictor(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        Self::build(config, NetworkKind::Predictor)
    }

    pub fn new(config: &ModelConfig, kind: NetworkKind) -> Result<Self> {
        config.validate()?;
        Self::build(config, kind)
    }

    /// Builds a network without the fixed-input-size check, for shrunken
    /// variants used in gradient checks.
    pub fn reduced(config: &ModelConfig, kind: NetworkKind) -> Result<Self> {
        Self::build(config, kind)
    }

    fn build(config: &ModelConfig, kind: NetworkKind) -> Result<Self> {
        config.validate_geometry()?;
        let mut layout = Vec::new();
        let mut register = |name: String, wshape: Vec<usize>, bias: usize, fan_in: usize| {
            let ix = ParamIx {
                weight: layout.len(),
                bias: layout.len() + 1,
            };
            layout.push((format!("{name}.weight"), wshape, fan_in));
            layout.push((format!("{name}.bias"), vec![bias], fan_in));
            ix
        };

        let mut encoder = Vec::new();
        let mut enc_ix = Vec::new();
        let (mut c, mut side) = (1, config.input_size);
        for (i, (&f, &k)) in config.conv_filters.iter().zip(&config.conv_kernels).enumerate() {
            let layer = Conv2d::new(c, f, k, config.conv_stride, side, side);
            enc_ix.push(register(format!("encoder.conv{}", i + 1), layer.weight_shape(), f, layer.fan_in()));
            encoder.push(layer);
            c = f;
            side = layer.out_h();
        }

        let emb = config.embedding_dim();
        let (pose, pose_ix, fusion, fusion_ix) = match kind {
            NetworkKind::Vanilla => (None, None, Vec::new(), Vec::new()),
            NetworkKind::Predictor => {
                let pose = Dense::new(POSE_DIM, config.pose_fc_dim);
                let pix = register("pose.fc".into(), pose.weight_shape(), pose.outputs, POSE_DIM);
                let mut fusion = Vec::new();
                let mut fix = Vec::new();
                let mut width = config.fused_width();
                for (i, &d) in config.fusion_fc_dims.iter().enumerate() {
                    let layer = Dense::new(width, d);
                    fix.push(register(format!("fusion.fc{}", i + 1), layer.weight_shape(), d, width));
                    fusion.push(layer);
                    width = d;
                }
                (Some(pose), Some(pix), fusion, fix)
            }
        };

        let mut decoder = Vec::new();
        let mut dec_ix = Vec::new();
        for (i, (&f, &k)) in config.deconv_filters.iter().zip(&config.deconv_kernels).enumerate() {
            let in_c = if i == 0 { c } else { config.deconv_filters[i - 1] };
            let layer = ConvTranspose2d::new(in_c, f, k, config.conv_stride, side, side);
            dec_ix.push(register(format!("decoder.deconv{}", i + 1), layer.weight_shape(), f, layer.fan_in()));
            decoder.push(layer);
            side = layer.out_h();
        }
        let last = *config.deconv_filters.last().expect("validated");
        let projection = Conv2d::new(last, 1, config.projection_kernel, 1, side, side);
        let proj_ix = register("decoder.projection".into(), projection.weight_shape(), 1, projection.fan_in());
        debug_assert_eq!(encoder.last().map(Conv2d::out_len), Some(emb));

        Ok(Network {
            config: config.clone(),
            kind,
            encoder,
            pose,
            fusion,
            decoder,
            projection,
            layout,
            enc_ix,
            pose_ix,
            fusion_ix,
            dec_ix,
            proj_ix,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn kind(&self) -> NetworkKind {
        self.kind
    }

    pub fn image_len(&self) -> usize {
        self.config.input_size * self.config.input_size
    }

    pub fn embedding_dim(&self) -> usize {
        self.config.embedding_dim()
    }

    /// Number of learnable scalars; a pure function of the config and kind.
    pub fn param_count(&self) -> usize {
        self.layout
            .iter()
            .map(|(_, s, _)| s.iter().product::<usize>())
            .sum()
    }

    /// Spatial side after each encoder layer followed by each decoder layer.
    pub fn shape_chain(&self) -> (Vec<usize>, Vec<usize>) {
        let down = self.encoder.iter().map(Conv2d::out_h).collect();
        let up = self.decoder.iter().map(ConvTranspose2d::out_h).collect();
        (down, up)
    }

    /// Fan-in scaled uniform initialization (He/Kaiming with the leaky-relu
    /// gain); biases start at zero.
    pub fn init_weights<T: Real>(&self, seed: u64) -> WeightsHandle<T> {
        let mut rng = seeded(seed, stream::INIT);
        let slope = self.config.leaky_relu_slope;
        let mut handle = WeightsHandle::new();
        for (name, shape, fan_in) in &self.layout {
            let mut t = NamedTensor::zeros(name.clone(), shape.clone());
            if name.ends_with(".weight") {
                let bound = num_traits::Float::sqrt(6.0 / ((1.0 + slope * slope) * *fan_in as f64));
                for v in &mut t.data {
                    *v = T::lit(rng.gen_range(-bound..bound));
                }
            }
            handle.push(t).expect("layout names are unique");
        }
        handle
    }

    pub fn zero_weights<T: Real>(&self) -> WeightsHandle<T> {
        let mut handle = WeightsHandle::new();
        for (name, shape, _) in &self.layout {
            handle
                .push(NamedTensor::zeros(name.clone(), shape.clone()))
                .expect("layout names are unique");
        }
        handle
    }

    /// Checks that `weights` has exactly this network's names and shapes.
    pub fn check_weights<T: Real>(&self, weights: &WeightsHandle<T>) -> Result<()> {
        Error::check_len("weight tensor count", self.layout.len(), weights.len())?;
        for ((name, shape, _), t) in self.layout.iter().zip(weights.tensors()) {
            if &t.name != name {
                return Err(Error::UnknownParam(t.name.clone()));
            }
            if &t.shape != shape {
                return Err(Error::Shape {
                    what: "weight tensor",
                    expected: shape.iter().product(),
                    got: t.data.len(),
                });
            }
        }
        Ok(())
    }

    /// Human-readable layer table with the total parameter count.
    pub fn describe(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} network", self.kind.as_str());
        for (name, shape, _) in &self.layout {
            let n: usize = shape.iter().product();
            let dims: Vec<String> = shape.iter().map(|d| format!("{d}")).collect();
            let _ = writeln!(out, "  {name:<28} [{}] {n}", dims.join("x"));
        }
        let (down, up) = self.shape_chain();
        let _ = writeln!(out, "  spatial down: {} -> {down:?}", self.config.input_size);
        let _ = writeln!(out, "  spatial up:   {up:?}");
        let _ = writeln!(out, "  embedding: {}", self.embedding_dim());
        if self.kind == NetworkKind::Predictor {
            let _ = writeln!(out, "  fused width: {}", self.config.fused_width());
        }
        let _ = writeln!(out, "total parameters: {}", self.param_count());
        out
    }

    fn slope<T: Real>(&self) -> T {
        T::lit(self.config.leaky_relu_slope)
    }

    fn require_predictor(&self) -> Result<()> {
        if self.kind == NetworkKind::Predictor {
            Ok(())
        } else {
            Err(Error::domain("operation needs the pose-conditioned predictor"))
        }
    }

    // ---- batched forward pieces -------------------------------------------------

    /// Encoder activations for a batch; the last entry is the embedding batch.
    fn encode_trace<T: Real>(&self, w: &WeightsHandle<T>, images: &[T], n: usize) -> Result<Vec<Vec<T>>> {
        Error::check_len("image batch", n * self.image_len(), images.len())?;
        let slope = self.slope();
        let mut acts = Vec::with_capacity(self.encoder.len() + 1);
        acts.push(images.to_vec());
        for (layer, ix) in self.encoder.iter().zip(&self.enc_ix) {
            let mut y = layer.forward(w.at(ix.weight), w.at(ix.bias), acts.last().expect("input"), n);
            leaky_relu_inplace(&mut y, slope);
            acts.push(y);
        }
        Ok(acts)
    }

    pub fn encode_batch<T: Real>(&self, w: &WeightsHandle<T>, images: &[T], n: usize) -> Result<Vec<T>> {
        Ok(self.encode_trace(w, images, n)?.pop().expect("embedding"))
    }

    pub fn pose_branch_batch<T: Real>(&self, w: &WeightsHandle<T>, poses: &[T], n: usize) -> Result<Vec<T>> {
        self.require_predictor()?;
        Error::check_len("pose batch", n * POSE_DIM, poses.len())?;
        let (layer, ix) = (self.pose.expect("predictor"), self.pose_ix.expect("predictor"));
        let mut y = layer.forward(w.at(ix.weight), w.at(ix.bias), poses, n);
        leaky_relu_inplace(&mut y, self.slope());
        Ok(y)
    }

    fn concat<T: Real>(&self, emb: &[T], pose: &[T], n: usize) -> Vec<T> {
        let (e, p) = (self.embedding_dim(), self.config.pose_fc_dim);
        let mut out = Vec::with_capacity(n * (e + p));
        for s in 0..n {
            out.extend_from_slice(&emb[s * e..(s + 1) * e]);
            out.extend_from_slice(&pose[s * p..(s + 1) * p]);
        }
        out
    }

    fn fuse_trace<T: Real>(&self, w: &WeightsHandle<T>, emb: &[T], pose_feat: &[T], n: usize) -> Result<Vec<Vec<T>>> {
        self.require_predictor()?;
        Error::check_len("embedding batch", n * self.embedding_dim(), emb.len())?;
        Error::check_len("pose feature batch", n * self.config.pose_fc_dim, pose_feat.len())?;
        let slope = self.slope();
        let mut acts = Vec::with_capacity(self.fusion.len() + 1);
        acts.push(self.concat(emb, pose_feat, n));
        for (layer, ix) in self.fusion.iter().zip(&self.fusion_ix) {
            let mut y = layer.forward(w.at(ix.weight), w.at(ix.bias), acts.last().expect("input"), n);
            leaky_relu_inplace(&mut y, slope);
            acts.push(y);
        }
        Ok(acts)
    }

    pub fn fuse_batch<T: Real>(&self, w: &WeightsHandle<T>, emb: &[T], pose_feat: &[T], n: usize) -> Result<Vec<T>> {
        Ok(self.fuse_trace(w, emb, pose_feat, n)?.pop().expect("latent"))
    }

    /// Width of the concatenation seen by the first fusion layer.
    pub fn fusion_input_width(&self) -> usize {
        self.fusion.first().map(|l| l.inputs).unwrap_or(0)
    }

    fn decode_trace<T: Real>(&self, w: &WeightsHandle<T>, latent: &[T], n: usize) -> Result<(Vec<Vec<T>>, Vec<T>)> {
        Error::check_len("latent batch", n * self.embedding_dim(), latent.len())?;
        let slope = self.slope();
        let mut acts = Vec::with_capacity(self.decoder.len() + 1);
        acts.push(latent.to_vec());
        for (layer, ix) in self.decoder.iter().zip(&self.dec_ix) {
            let mut y = layer.forward(w.at(ix.weight), w.at(ix.bias), acts.last().expect("input"), n);
            leaky_relu_inplace(&mut y, slope);
            acts.push(y);
        }
        let mut out = self.projection.forward(
            w.at(self.proj_ix.weight),
            w.at(self.proj_ix.bias),
            acts.last().expect("decoder"),
            n,
        );
        tanh_inplace(&mut out);
        Ok((acts, out))
    }

    pub fn decode_batch<T: Real>(&self, w: &WeightsHandle<T>, latent: &[T], n: usize) -> Result<Vec<T>> {
        Ok(self.decode_trace(w, latent, n)?.1)
    }

    /// Full forward pass keeping every activation. `poses` must be given for
    /// the predictor and omitted for the vanilla block.
    pub fn forward<T: Real>(
        &self,
        w: &WeightsHandle<T>,
        images: &[T],
        poses: Option<&[T]>,
        n: usize,
    ) -> Result<Trace<T>> {
        let encoder = self.encode_trace(w, images, n)?;
        let emb = encoder.last().expect("embedding");
        let (pose_in, pose_out, fusion) = match (self.kind, poses) {
            (NetworkKind::Vanilla, None) => (Vec::new(), Vec::new(), Vec::new()),
            (NetworkKind::Predictor, Some(p)) => {
                let pose_out = self.pose_branch_batch(w, p, n)?;
                let fusion = self.fuse_trace(w, emb, &pose_out, n)?;
                (p.to_vec(), pose_out, fusion)
            }
            (NetworkKind::Vanilla, Some(_)) => {
                return Err(Error::domain("vanilla block takes no pose"))
            }
            (NetworkKind::Predictor, None) => return Err(Error::domain("predictor needs a pose")),
        };
        let latent = fusion.last().unwrap_or(emb);
        let (decoder, output) = self.decode_trace(w, latent, n)?;
        Ok(Trace {
            batch: n,
            encoder,
            pose_in,
            pose_out,
            fusion,
            decoder,
            output,
        })
    }

    /// Backpropagates output and latent gradients through a traced pass,
    /// accumulating into `grads` (same layout as the weights).
    ///
    /// `d_output` is the loss gradient w.r.t. the tanh output; `d_latent`,
    /// predictor only, the gradient w.r.t. the fused latent `e₁`.
    pub fn backward<T: Real>(
        &self,
        w: &WeightsHandle<T>,
        trace: &Trace<T>,
        d_output: &[T],
        d_latent: Option<&[T]>,
        grads: &mut WeightsHandle<T>,
    ) -> Result<()> {
        let n = trace.batch;
        Error::check_len("output gradient", trace.output.len(), d_output.len())?;
        let slope = self.slope();

        let mut d = d_output.to_vec();
        tanh_backward_inplace(&mut d, &trace.output);
        let ix = self.proj_ix;
        let (dw, db) = two_mut(grads, ix);
        let mut d = self
            .projection
            .backward(w.at(ix.weight), trace.decoder.last().expect("decoder"), &d, n, dw, db, true)
            .expect("dx requested");

        for (i, (layer, ix)) in self.decoder.iter().zip(&self.dec_ix).enumerate().rev() {
            leaky_relu_backward_inplace(&mut d, &trace.decoder[i + 1], slope);
            let (dw, db) = two_mut(grads, *ix);
            d = layer
                .backward(w.at(ix.weight), &trace.decoder[i], &d, n, dw, db, true)
                .expect("dx requested");
        }

        if self.kind == NetworkKind::Predictor {
            if let Some(dl) = d_latent {
                Error::check_len("latent gradient", d.len(), dl.len())?;
                d.iter_mut().zip(dl).for_each(|(a, &b)| *a += b);
            }
            for (i, (layer, ix)) in self.fusion.iter().zip(&self.fusion_ix).enumerate().rev() {
                leaky_relu_backward_inplace(&mut d, &trace.fusion[i + 1], slope);
                let (dw, db) = two_mut(grads, *ix);
                d = layer
                    .backward(w.at(ix.weight), &trace.fusion[i], &d, n, dw, db, true)
                    .expect("dx requested");
            }
            let (e, p) = (self.embedding_dim(), self.config.pose_fc_dim);
            let mut d_emb = Vec::with_capacity(n * e);
            let mut d_pose = Vec::with_capacity(n * p);
            for row in d.chunks_exact(e + p) {
                d_emb.extend_from_slice(&row[..e]);
                d_pose.extend_from_slice(&row[e..]);
            }
            leaky_relu_backward_inplace(&mut d_pose, &trace.pose_out, slope);
            let (layer, ix) = (self.pose.expect("predictor"), self.pose_ix.expect("predictor"));
            let (dw, db) = two_mut(grads, ix);
            layer.backward(w.at(ix.weight), &trace.pose_in, &d_pose, n, dw, db, false);
            d = d_emb;
        } else if d_latent.is_some() {
            return Err(Error::domain("vanilla block has no fused latent"));
        }

        for (i, (layer, ix)) in self.encoder.iter().zip(&self.enc_ix).enumerate().rev() {
            leaky_relu_backward_inplace(&mut d, &trace.encoder[i + 1], slope);
            let (dw, db) = two_mut(grads, *ix);
            match layer.backward(w.at(ix.weight), &trace.encoder[i], &d, n, dw, db, i > 0) {
                Some(dx) => d = dx,
                None => break,
            }
        }
        Ok(())
    }

    // ---- single-sample contracts -------------------------------------------------

    pub fn encode(&self, w: &WeightsHandle<f32>, image: &Raster) -> Result<Embedding> {
        Ok(Embedding(self.encode_batch(w, image.as_slice(), 1)?))
    }

    pub fn pose_branch(&self, w: &WeightsHandle<f32>, pose: &PoseVector) -> Result<Vec<f32>> {
        self.pose_branch_batch(w, &pose.as_f32(), 1)
    }

    pub fn fuse(&self, w: &WeightsHandle<f32>, e: &Embedding, pose_features: &[f32]) -> Result<Embedding> {
        Error::check_len("embedding", self.embedding_dim(), e.len())?;
        Error::check_len("pose features", self.config.pose_fc_dim, pose_features.len())?;
        Ok(Embedding(self.fuse_batch(w, &e.0, pose_features, 1)?))
    }

    pub fn decode(&self, w: &WeightsHandle<f32>, latent: &Embedding) -> Result<Raster> {
        Error::check_len("latent", self.embedding_dim(), latent.len())?;
        Raster::from_vec(self.decode_batch(w, &latent.0, 1)?)
    }

    /// Block 1: `(encode(x), decode(encode(x)))`.
    pub fn vanilla_forward(&self, w: &WeightsHandle<f32>, image: &Raster) -> Result<(Embedding, Raster)> {
        let e = self.encode(w, image)?;
        let r = self.decode(w, &e)?;
        Ok((e, r))
    }

    /// Block 2: `(pre-fusion embedding, post-fusion latent e₁, prediction y₁)`.
    pub fn predictor_forward(
        &self,
        w: &WeightsHandle<f32>,
        image: &Raster,
        pose: &PoseVector,
    ) -> Result<(Embedding, Embedding, Raster)> {
        self.require_predictor()?;
        let pre = self.encode(w, image)?;
        let p = self.pose_branch(w, pose)?;
        let post = self.fuse(w, &pre, &p)?;
        let y = self.decode(w, &post)?;
        Ok((pre, post, y))
    }
}

fn two_mut<T: Real>(grads: &mut WeightsHandle<T>, ix: ParamIx) -> (&mut [T], &mut [T]) {
    debug_assert_eq!(ix.bias, ix.weight + 1);
    let (a, b) = grads.tensors_mut().split_at_mut(ix.bias);
    (&mut a[ix.weight].data, &mut b[0].data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_shape_arithmetic() {
        let c = ModelConfig::default();
        assert_eq!(c.bottleneck_side(), 4);
        assert_eq!(c.embedding_dim(), 1024);
        assert_eq!(c.fused_width(), 1088);
        c.validate().unwrap();
    }

    #[test]
    fn rejects_128_input() {
        let c = ModelConfig {
            input_size: 128,
            ..ModelConfig::default()
        };
        assert!(matches!(c.validate(), Err(Error::Domain(_))));
        assert!(Network::predictor(&c).is_err());
    }

    #[test]
    fn shape_chain_is_64_to_4_and_back() {
        let net = Network::predictor(&ModelConfig::default()).unwrap();
        let (down, up) = net.shape_chain();
        assert_eq!(down, vec![32, 16, 8, 4]);
        assert_eq!(up, vec![8, 16, 32, 64]);
        assert_eq!(net.fusion_input_width(), 1088);
    }

    #[test]
    fn parameter_count_is_config_determined() {
        let c = ModelConfig::default();
        let a = Network::predictor(&c).unwrap();
        let b = Network::predictor(&c).unwrap();
        assert_eq!(a.param_count(), b.param_count());
        let w: WeightsHandle<f32> = a.init_weights(3);
        assert_eq!(w.param_count(), a.param_count());
        let v = Network::vanilla(&c).unwrap();
        let extra = 5 * 64 + 64 + 1088 * 1024 + 1024 + 1024 * 1024 + 1024;
        assert_eq!(a.param_count() - v.param_count(), extra);
    }

    #[test]
    fn wrong_layout_is_rejected() {
        let c = ModelConfig::default();
        let v = Network::vanilla(&c).unwrap();
        let p = Network::predictor(&c).unwrap();
        let w: WeightsHandle<f32> = v.zero_weights();
        assert!(p.check_weights(&w).is_err());
        assert!(v.check_weights(&w).is_ok());
    }
}
