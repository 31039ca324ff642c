//! Generator, discriminator and encoder networks plus label encoding.
//!
//! All three networks are DCGAN-style. Images cross the public API as
//! `[B, C, H, W]`; internally feature maps are channel-major `[C, B, H, W]`.

use rand::Rng;

use crate::config::{LabelMode, RunConfig};
use crate::error::{Error, Result};
use crate::nn::{BufferAccess, Builder, Grads, Init, Layer, ParamStore, Sequential, Tape};
use crate::tensor::{Scalar, Tensor};

pub const INIT_STD: f64 = 0.02;
pub const EMBEDDING_INIT_LIMIT: f64 = 0.05;
pub const BN_MOMENTUM: f64 = 0.9;
pub const LEAKY_SLOPE: f64 = 0.2;
const KERNEL: usize = 4;
const STRIDE: usize = 2;
const PAD: usize = 1;

/// One shared latent vector, every component in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentCode(Vec<f32>);

impl LatentCode {
    pub fn new(values: Vec<f32>, z_dim: usize) -> Result<Self> {
        if values.len() != z_dim {
            return Err(Error::Contract(format!(
                "latent code has length {}, expected {z_dim}",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::Domain(format!("latent component {v} outside [-1, 1]")));
        }
        Ok(LatentCode(values))
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct DomainLabel {
    id: usize,
    num_domains: usize,
}

impl DomainLabel {
    pub fn new(id: usize, num_domains: usize) -> Result<Self> {
        if num_domains < 2 {
            return Err(Error::Config(format!("need at least 2 domains, got {num_domains}")));
        }
        if id >= num_domains {
            return Err(Error::Domain(format!(
                "domain id {id} out of range for {num_domains} domains"
            )));
        }
        Ok(DomainLabel { id, num_domains })
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn num_domains(&self) -> usize {
        self.num_domains
    }
}

/// The conditioning vector derived from a [`DomainLabel`].
#[derive(Clone, Debug, PartialEq)]
pub struct LabelVector {
    pub mode: LabelMode,
    pub values: Vec<f32>,
}

/// One-hot basis vector, or row `id` of the embedding table `[K, embed_dim]`.
pub fn encode_label<T: Scalar>(label: DomainLabel, mode: LabelMode, table: Option<&Tensor<T>>) -> Result<LabelVector> {
    let values = match mode {
        LabelMode::OneHot => {
            let mut v = vec![0.0; label.num_domains];
            v[label.id] = 1.0;
            v
        }
        LabelMode::Embedding => {
            let table = table.ok_or_else(|| {
                Error::Contract("embedding mode needs the generator's label table".into())
            })?;
            if table.dim0() != label.num_domains {
                return Err(Error::Domain(format!(
                    "embedding table has {} rows, label expects {} domains",
                    table.dim0(),
                    label.num_domains
                )));
            }
            table.row(label.id).iter().map(|v| v.to_f64() as f32).collect()
        }
    };
    Ok(LabelVector { mode, values })
}

pub fn check_labels(labels: &[usize], num_domains: usize) -> Result<()> {
    match labels.iter().find(|&&l| l >= num_domains) {
        Some(l) => Err(Error::Domain(format!(
            "label {l} out of range for {num_domains} domains"
        ))),
        None => Ok(()),
    }
}

/// Shape bookkeeping derived from a config.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Architecture {
    pub image_size: usize,
    pub channels: usize,
    pub z_dim: usize,
    pub num_domains: usize,
    pub label_mode: LabelMode,
    pub label_width: usize,
    /// Channel width of each down-sampling block, shallowest first.
    pub widths: Vec<usize>,
    /// Spatial extent after the last down-sampling block.
    pub bottom: usize,
}

impl Architecture {
    pub fn from_config(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        // Halve down to 4x4, with at least one block for tiny images.
        let blocks = (config.image_size.trailing_zeros() as usize).saturating_sub(2).max(1);
        let widths = (0..blocks).map(|i| config.base_channels << i).collect();
        Ok(Architecture {
            image_size: config.image_size,
            channels: config.channels,
            z_dim: config.z_dim,
            num_domains: config.num_domains,
            label_mode: config.label_mode,
            label_width: config.label_width(),
            widths,
            bottom: config.image_size >> blocks,
        })
    }

    pub fn deepest_width(&self) -> usize {
        *self.widths.last().expect("at least one block")
    }

    pub fn feature_len(&self) -> usize {
        self.deepest_width() * self.bottom * self.bottom
    }

    pub fn image_shape(&self, batch: usize) -> [usize; 4] {
        [batch, self.channels, self.image_size, self.image_size]
    }

    fn check_images<T: Scalar>(&self, x: &Tensor<T>) -> Result<()> {
        let s = x.shape();
        if s.len() != 4 || s[1..] != self.image_shape(0)[1..] || s[0] == 0 {
            return Err(Error::Contract(format!(
                "expected a non-empty image batch [B, {}, {}, {}], got {:?}",
                self.channels, self.image_size, self.image_size, s
            )));
        }
        Ok(())
    }
}

fn build_trunk<T: Scalar, R: Rng + ?Sized>(b: &mut Builder<'_, T, R>, arch: &Architecture) {
    let mut in_c = arch.channels;
    for (i, &w) in arch.widths.iter().enumerate() {
        b.conv(&format!("down{i}.conv"), in_c, w, KERNEL, STRIDE, PAD);
        if i > 0 {
            b.batch_norm(&format!("down{i}.bn"), w, BN_MOMENTUM);
        }
        b.push(Layer::LeakyRelu { slope: LEAKY_SLOPE });
        in_c = w;
    }
    b.push(Layer::Flatten);
}

fn zero_linear<T: Scalar>(params: &mut ParamStore<T>, layer: &Layer) {
    if let Layer::Linear { weight, bias } = *layer {
        for i in [weight, bias] {
            params.get_mut(i).data_mut().iter_mut().for_each(|v| *v = T::ZERO);
        }
    }
}

/// Conditional generator `G(z, c)`.
#[derive(Clone, Debug)]
pub struct Generator<T = f32> {
    pub arch: Architecture,
    net: Sequential,
    embedding: Option<usize>,
    pub params: ParamStore<T>,
    pub buffers: ParamStore<T>,
}

/// Saved state of a training-mode generator pass.
pub struct GeneratorTape<T> {
    tape: Tape<T>,
    labels: Vec<usize>,
}

impl<T: Scalar> Generator<T> {
    pub fn new<R: Rng + ?Sized>(arch: &Architecture, rng: &mut R) -> Self {
        let mut params = ParamStore::new();
        let mut buffers = ParamStore::new();
        let embedding = (arch.label_mode == LabelMode::Embedding).then(|| {
            params.push(
                "label_embedding",
                Init::Uniform {
                    limit: EMBEDDING_INIT_LIMIT,
                }
                .sample(&[arch.num_domains, arch.label_width], rng),
            )
        });
        let mut b = Builder::new(&mut params, &mut buffers, rng, Init::Normal { std: INIT_STD });
        let deep = arch.deepest_width();
        b.linear("project", arch.z_dim + arch.label_width, arch.feature_len());
        b.push(Layer::Unflatten {
            c: deep,
            h: arch.bottom,
            w: arch.bottom,
        });
        b.batch_norm("project_bn", deep, BN_MOMENTUM);
        b.push(Layer::Relu);
        for i in (1..arch.widths.len()).rev() {
            let name = format!("up{}", arch.widths.len() - i);
            b.deconv(&format!("{name}.deconv"), arch.widths[i], arch.widths[i - 1], KERNEL, STRIDE, PAD);
            b.batch_norm(&format!("{name}.bn"), arch.widths[i - 1], BN_MOMENTUM);
            b.push(Layer::Relu);
        }
        b.deconv("to_image.deconv", arch.widths[0], arch.channels, KERNEL, STRIDE, PAD);
        b.push(Layer::Tanh);
        let net = b.finish();
        Generator {
            arch: arch.clone(),
            net,
            embedding,
            params,
            buffers,
        }
    }

    pub fn label_table(&self) -> Option<&Tensor<T>> {
        self.embedding.map(|i| self.params.get(i))
    }

    fn assemble_input(&self, z: &Tensor<T>, labels: &[usize]) -> Result<Tensor<T>> {
        let a = &self.arch;
        let batch = labels.len();
        if batch == 0 || z.shape() != [batch, a.z_dim] {
            return Err(Error::Contract(format!(
                "latent batch {:?} does not match {batch} labels of width z_dim={}",
                z.shape(),
                a.z_dim
            )));
        }
        check_labels(labels, a.num_domains)?;
        if z.data().iter().any(|v| !(v.to_f64() >= -1.0 && v.to_f64() <= 1.0)) {
            return Err(Error::Contract("latent components must lie in [-1, 1]".into()));
        }
        let width = a.z_dim + a.label_width;
        let mut input = Vec::with_capacity(batch * width);
        for (i, &l) in labels.iter().enumerate() {
            input.extend_from_slice(z.row(i));
            match self.embedding {
                None => input.extend((0..a.num_domains).map(|k| if k == l { T::ONE } else { T::ZERO })),
                Some(e) => input.extend_from_slice(self.params.get(e).row(l)),
            }
        }
        Tensor::from_vec(&[batch, width], input)
    }

    /// Inference-mode forward pass: `[B, z_dim]` latents to `[B, C, H, W]` images.
    pub fn forward(&self, z: &Tensor<T>, labels: &[usize]) -> Result<Tensor<T>> {
        let input = self.assemble_input(z, labels)?;
        Ok(self.net.forward_eval(&self.params, &self.buffers, input).swap01())
    }

    /// Training-mode pass (batch statistics). Folds batch statistics into the
    /// running statistics when `update_running` is set.
    pub fn forward_train(
        &mut self,
        z: &Tensor<T>,
        labels: &[usize],
        update_running: bool,
        record: bool,
    ) -> Result<(Tensor<T>, GeneratorTape<T>)> {
        let input = self.assemble_input(z, labels)?;
        let buffers = if update_running {
            BufferAccess::Write(&mut self.buffers)
        } else {
            BufferAccess::Read(&self.buffers)
        };
        let (y, tape) = self.net.forward_train(&self.params, buffers, input, record);
        Ok((
            y.swap01(),
            GeneratorTape {
                tape,
                labels: labels.to_vec(),
            },
        ))
    }

    /// Accumulates parameter gradients (including the label table) for
    /// `d_images` with respect to the recorded pass.
    pub fn backward(&self, tape: GeneratorTape<T>, d_images: &Tensor<T>, grads: &mut Grads<T>) {
        let dy = d_images.swap01();
        let need_input = self.embedding.is_some();
        let dx = self.net.backward(&self.params, tape.tape, dy, Some(grads), need_input);
        if let (Some(e), Some(dx)) = (self.embedding, dx) {
            let width = self.arch.z_dim + self.arch.label_width;
            let table = &mut grads[e];
            for (i, &l) in tape.labels.iter().enumerate() {
                let src = &dx.data()[i * width + self.arch.z_dim..(i + 1) * width];
                for (g, &v) in table.row_mut(l).iter_mut().zip(src) {
                    *g += v;
                }
            }
        }
    }

    pub fn zero_grads(&self) -> Grads<T> {
        self.params.zeros_like()
    }
}

/// Source score and class logits for a batch of images.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorOutput<T = f32> {
    /// Pre-sigmoid "real" score per image, `[B]`.
    pub source_logits: Vec<T>,
    /// Pre-softmax domain scores, `[B, K]`.
    pub class_logits: Tensor<T>,
}

/// AC-GAN discriminator: shared convolutional trunk, source and class heads.
#[derive(Clone, Debug)]
pub struct Discriminator<T = f32> {
    pub arch: Architecture,
    trunk: Sequential,
    source_head: Layer,
    class_head: Layer,
    pub params: ParamStore<T>,
    pub buffers: ParamStore<T>,
}

pub struct DiscriminatorTape<T> {
    trunk: Tape<T>,
    features: Tensor<T>,
}

impl<T: Scalar> Discriminator<T> {
    pub fn new<R: Rng + ?Sized>(arch: &Architecture, rng: &mut R, zero_heads: bool) -> Self {
        let mut params = ParamStore::new();
        let mut buffers = ParamStore::new();
        let mut b = Builder::new(&mut params, &mut buffers, rng, Init::Normal { std: INIT_STD });
        build_trunk(&mut b, arch);
        let source_head = b.linear_layer("source_head", arch.feature_len(), 1);
        let class_head = b.linear_layer("class_head", arch.feature_len(), arch.num_domains);
        let trunk = b.finish();
        if zero_heads {
            zero_linear(&mut params, &source_head);
            zero_linear(&mut params, &class_head);
        }
        Discriminator {
            arch: arch.clone(),
            trunk,
            source_head,
            class_head,
            params,
            buffers,
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        self.arch.check_images(x)?;
        if !x.all_finite() {
            return Err(Error::Data("discriminator input contains non-finite values".into()));
        }
        Ok(())
    }

    fn heads(&self, features: &Tensor<T>) -> DiscriminatorOutput<T> {
        let mut ro = BufferAccess::Read(&self.buffers);
        let (src, _) = self.source_head.forward(&self.params, &mut ro, features.clone(), crate::nn::Mode::Eval, false);
        let (cls, _) = self.class_head.forward(&self.params, &mut ro, features.clone(), crate::nn::Mode::Eval, false);
        DiscriminatorOutput {
            source_logits: src.into_data(),
            class_logits: cls,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<DiscriminatorOutput<T>> {
        self.check_input(x)?;
        let features = self.trunk.forward_eval(&self.params, &self.buffers, x.swap01());
        Ok(self.heads(&features))
    }

    pub fn forward_train(
        &mut self,
        x: &Tensor<T>,
        update_running: bool,
        record: bool,
    ) -> Result<(DiscriminatorOutput<T>, DiscriminatorTape<T>)> {
        self.check_input(x)?;
        let buffers = if update_running {
            BufferAccess::Write(&mut self.buffers)
        } else {
            BufferAccess::Read(&self.buffers)
        };
        let (features, trunk) = self.trunk.forward_train(&self.params, buffers, x.swap01(), record);
        let out = self.heads(&features);
        Ok((out, DiscriminatorTape { trunk, features }))
    }

    /// Backpropagates logit gradients `d_source` `[B]` and `d_class` `[B, K]`.
    /// Returns the image gradient `[B, C, H, W]` when requested.
    pub fn backward(
        &self,
        tape: DiscriminatorTape<T>,
        d_source: &[T],
        d_class: &Tensor<T>,
        mut grads: Option<&mut Grads<T>>,
        need_input_grad: bool,
    ) -> Option<Tensor<T>> {
        let batch = tape.features.dim0();
        let d_src = Tensor::from_vec(&[batch, 1], d_source.to_vec()).expect("source grad shape");
        let src_cache = crate::nn::Cache::Linear {
            input: tape.features.clone(),
        };
        let cls_cache = crate::nn::Cache::Linear {
            input: tape.features,
        };
        let mut d_feat = self
            .source_head
            .backward(&self.params, src_cache, d_src, grads.as_deref_mut(), true)
            .expect("feature grad");
        let d_feat_cls = self
            .class_head
            .backward(&self.params, cls_cache, d_class.clone(), grads.as_deref_mut(), true)
            .expect("feature grad");
        d_feat.add_assign(&d_feat_cls);
        self.trunk
            .backward(&self.params, tape.trunk, d_feat, grads, need_input_grad)
            .map(|dx| dx.swap01())
    }

    pub fn zero_grads(&self) -> Grads<T> {
        self.params.zeros_like()
    }
}

/// Image encoder `E(x)` mapping images back to latent codes through tanh.
#[derive(Clone, Debug)]
pub struct Encoder<T = f32> {
    pub arch: Architecture,
    net: Sequential,
    pub params: ParamStore<T>,
    pub buffers: ParamStore<T>,
}

pub struct EncoderTape<T> {
    tape: Tape<T>,
}

impl<T: Scalar> Encoder<T> {
    pub fn new<R: Rng + ?Sized>(arch: &Architecture, rng: &mut R, zero_head: bool) -> Self {
        let mut params = ParamStore::new();
        let mut buffers = ParamStore::new();
        let mut b = Builder::new(&mut params, &mut buffers, rng, Init::Normal { std: INIT_STD });
        build_trunk(&mut b, arch);
        let head = b.linear_layer("latent_head", arch.feature_len(), arch.z_dim);
        b.push(head.clone());
        b.push(Layer::Tanh);
        let net = b.finish();
        if zero_head {
            zero_linear(&mut params, &head);
        }
        Encoder {
            arch: arch.clone(),
            net,
            params,
            buffers,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.arch.check_images(x)?;
        Ok(self.net.forward_eval(&self.params, &self.buffers, x.swap01()))
    }

    pub fn forward_train(&mut self, x: &Tensor<T>, record: bool) -> Result<(Tensor<T>, EncoderTape<T>)> {
        self.arch.check_images(x)?;
        let (z, tape) = self
            .net
            .forward_train(&self.params, BufferAccess::Write(&mut self.buffers), x.swap01(), record);
        Ok((z, EncoderTape { tape }))
    }

    pub fn backward(&self, tape: EncoderTape<T>, dz: &Tensor<T>, grads: &mut Grads<T>) {
        self.net.backward(&self.params, tape.tape, dz.clone(), Some(grads), false);
    }

    pub fn zero_grads(&self) -> Grads<T> {
        self.params.zeros_like()
    }
}

/// Anything that renders latents under labels: the frozen generator, or a
/// test double.
pub trait Decoder {
    fn decode(&self, z: &Tensor<f32>, labels: &[usize]) -> Result<Tensor<f32>>;
    fn z_dim(&self) -> usize;
    fn num_domains(&self) -> usize;
}

/// Anything that maps images back to latents.
pub trait LatentEncoder {
    fn encode(&self, images: &Tensor<f32>) -> Result<Tensor<f32>>;
}

impl Decoder for Generator<f32> {
    fn decode(&self, z: &Tensor<f32>, labels: &[usize]) -> Result<Tensor<f32>> {
        self.forward(z, labels)
    }

    fn z_dim(&self) -> usize {
        self.arch.z_dim
    }

    fn num_domains(&self) -> usize {
        self.arch.num_domains
    }
}

impl LatentEncoder for Encoder<f32> {
    fn encode(&self, images: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.forward(images)
    }
}

/// All three networks for a run, initialized in the order G, D, E from one
/// RNG stream so that a (config, seed) pair fixes every parameter.
pub fn init_params<T: Scalar, R: Rng + ?Sized>(
    config: &RunConfig,
    rng: &mut R,
) -> Result<(Generator<T>, Discriminator<T>, Encoder<T>)> {
    let arch = Architecture::from_config(config)?;
    let g = Generator::new(&arch, rng);
    let d = Discriminator::new(&arch, rng, config.zero_init_heads);
    let e = Encoder::new(&arch, rng, config.zero_init_heads);
    Ok((g, d, e))
}
