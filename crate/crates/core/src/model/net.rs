use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ArchConfig;
use crate::error::{Error, Result};
use crate::nn::{
    concat_channels, maxpool1d, maxpool1d_backward, relu, relu_backward, softmax_channels,
    softmax_channels_backward, split_channels, upsample_nn, upsample_nn_backward, BatchNorm1d,
    BnCache, Conv1d, Mode, Tensor,
};
use crate::scalar::Scalar;

/// Output channel holding the no-spindle probability.
pub const NO_SPINDLE: usize = 0;
/// Output channel holding the spindle probability.
pub const SPINDLE: usize = 1;

/// conv -> ReLU -> batch norm
#[derive(Clone, Debug, PartialEq)]
pub struct Composite<T> {
    pub conv: Conv1d<T>,
    pub bn: BatchNorm1d<T>,
}

/// Two composite layers with the same channel count.
#[derive(Clone, Debug, PartialEq)]
pub struct Block<T> {
    pub first: Composite<T>,
    pub second: Composite<T>,
}

/// Upsampling, up-convolution, skip concatenation, then a block.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoder<T> {
    pub up_conv: Conv1d<T>,
    pub block: Block<T>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingMeta {
    /// Epoch the parameters were taken from (1-based, 0 = untrained).
    pub epoch: usize,
    pub best_val_f1_bar: Option<f64>,
    pub best_epoch: usize,
    /// Epochs since the last improvement of the validation score.
    pub stale_epochs: usize,
}

/// Whether a named tensor is trained by gradient descent.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TensorKind {
    Learnable,
    RunningStat,
}

/// Complete network state: learnable tensors, batch-norm statistics and the
/// architecture they were built from.
///
/// `encoder[l]` runs at resolution level `l` (the last one is the
/// bottleneck); `decoder[l]` produces level-`l` features from level `l + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub arch: ArchConfig,
    pub encoder: Vec<Block<T>>,
    pub decoder: Vec<Decoder<T>>,
    pub head: Conv1d<T>,
    pub meta: TrainingMeta,
}

fn kaiming_conv<T: Scalar>(rng: &mut ChaCha8Rng, out_ch: usize, in_ch: usize, k: usize, d: usize) -> Conv1d<T> {
    let bound = (6.0 / (in_ch * k) as f64).sqrt();
    let w = Tensor::from_fn(&[out_ch, in_ch, k], |_| T::of(rng.random_range(-bound..bound)));
    Conv1d::new(w, Tensor::zeros(&[out_ch]), d).expect("valid conv shape")
}

impl<T: Scalar> Composite<T> {
    fn build(rng: &mut ChaCha8Rng, out_ch: usize, in_ch: usize, k: usize, d: usize) -> Self {
        Self { conv: kaiming_conv(rng, out_ch, in_ch, k, d), bn: BatchNorm1d::new(out_ch) }
    }
}

impl<T: Scalar> Block<T> {
    fn build(rng: &mut ChaCha8Rng, out_ch: usize, in_ch: usize, k: usize, d: usize) -> Self {
        let first = Composite::build(rng, out_ch, in_ch, k, d);
        let second = Composite::build(rng, out_ch, out_ch, k, d);
        Self { first, second }
    }
}

/// Walks the network in declaration order: encoder levels, decoder stages
/// from deep to shallow, head.
macro_rules! named_tensors {
    ($self:ident, $iter:ident, $($r:tt)+) => {{
        use TensorKind::{Learnable, RunningStat};
        let mut out = Vec::new();
        macro_rules! conv {
            ($p:expr, $c:expr) => {{
                let c = $($r)+ *$c;
                out.push((format!("{}.weight", $p), Learnable, $($r)+ c.weight));
                out.push((format!("{}.bias", $p), Learnable, $($r)+ c.bias));
            }};
        }
        macro_rules! composite {
            ($p:expr, $i:expr, $cm:expr) => {{
                let cm = $($r)+ *$cm;
                conv!(format!("{}.conv{}", $p, $i), $($r)+ cm.conv);
                let bn = $($r)+ cm.bn;
                out.push((format!("{}.bn{}.gamma", $p, $i), Learnable, $($r)+ bn.gamma));
                out.push((format!("{}.bn{}.beta", $p, $i), Learnable, $($r)+ bn.beta));
                out.push((format!("{}.bn{}.running_mean", $p, $i), RunningStat, $($r)+ bn.running_mean));
                out.push((format!("{}.bn{}.running_var", $p, $i), RunningStat, $($r)+ bn.running_var));
            }};
        }
        for (l, b) in $self.encoder.$iter().enumerate() {
            composite!(format!("enc{l}"), 1, $($r)+ b.first);
            composite!(format!("enc{l}"), 2, $($r)+ b.second);
        }
        for (l, d) in $self.decoder.$iter().enumerate().rev() {
            conv!(format!("dec{l}.up"), $($r)+ d.up_conv);
            composite!(format!("dec{l}"), 1, $($r)+ d.block.first);
            composite!(format!("dec{l}"), 2, $($r)+ d.block.second);
        }
        conv!("head", $($r)+ $self.head);
        out
    }};
}

impl<T: Scalar> ModelParams<T> {
    /// Kaiming-uniform kernels (bound `sqrt(6 / fan_in)`), zero biases,
    /// unit gamma, zero beta. Deterministic in `seed`.
    pub fn build(arch: &ArchConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = arch.kernel_size;
        let mut encoder = Vec::with_capacity(arch.levels);
        let mut prev = 1;
        for (l, &c) in arch.channels.iter().enumerate() {
            encoder.push(Block::build(&mut rng, c, prev, k, arch.dilations[l]));
            prev = c;
        }
        let mut decoder: Vec<Decoder<T>> = Vec::with_capacity(arch.levels - 1);
        for l in (0..arch.levels - 1).rev() {
            let (deep, c) = (arch.channels[l + 1], arch.channels[l]);
            let up_conv = kaiming_conv(&mut rng, c, deep, arch.up_kernel_size, 1);
            let block = Block::build(&mut rng, c, 2 * c, k, arch.dilations[l]);
            decoder.push(Decoder { up_conv, block });
        }
        decoder.reverse();
        let head = kaiming_conv(&mut rng, 2, arch.channels[0], 1, 1);
        Ok(Self { arch: arch.clone(), encoder, decoder, head, meta: TrainingMeta::default() })
    }

    /// Every tensor with its checkpoint name, in declaration order.
    pub fn tensors(&self) -> Vec<(String, TensorKind, &Tensor<T>)> {
        named_tensors!(self, iter, &)
    }

    /// Mutable twin of [`tensors`](Self::tensors), same order.
    pub fn tensors_mut(&mut self) -> Vec<(String, TensorKind, &mut Tensor<T>)> {
        named_tensors!(self, iter_mut, &mut)
    }

    pub fn learnable(&self) -> Vec<&Tensor<T>> {
        self.tensors()
            .into_iter()
            .filter(|(_, k, _)| *k == TensorKind::Learnable)
            .map(|(_, _, t)| t)
            .collect()
    }

    pub fn learnable_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.tensors_mut()
            .into_iter()
            .filter(|(_, k, _)| *k == TensorKind::Learnable)
            .map(|(_, _, t)| t)
            .collect()
    }

    pub fn learnable_names(&self) -> Vec<String> {
        self.tensors()
            .into_iter()
            .filter(|(_, k, _)| *k == TensorKind::Learnable)
            .map(|(n, _, _)| n)
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.learnable().iter().map(|t| t.len()).sum()
    }

    /// Same architecture with every tensor converted to `U`.
    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        let mut out = ModelParams::<U>::build(&self.arch, 0).expect("arch already validated");
        for ((_, _, dst), (_, _, src)) in out.tensors_mut().into_iter().zip(self.tensors()) {
            *dst = src.cast();
        }
        out.meta = self.meta.clone();
        out
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<(usize, usize)> {
        let (b, c, t) = x.dims3()?;
        if c != 1 {
            return Err(Error::Shape(format!("model takes one input channel, got {c}")));
        }
        if t < self.arch.min_input_len() {
            return Err(Error::Shape(format!(
                "input length {t} shorter than the pooling product {}",
                self.arch.min_input_len()
            )));
        }
        Ok((b, t))
    }

    /// Channel-softmaxed `[B, 2, T]` probabilities. Train mode uses batch
    /// statistics and updates the running ones.
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        match mode {
            Mode::Train => Ok(self.forward_train(x)?.0),
            Mode::Eval => self.forward_eval(x),
        }
    }

    pub fn forward_eval(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let levels = self.arch.levels;
        let mut skips = Vec::with_capacity(levels - 1);
        let mut h = x.clone();
        for (l, block) in self.encoder.iter().enumerate() {
            h = block.forward_eval(&h)?;
            if l + 1 < levels {
                let (pooled, _) = maxpool1d(&h, self.arch.pool_widths[l])?;
                skips.push(std::mem::replace(&mut h, pooled));
            }
        }
        for l in (0..levels - 1).rev() {
            let skip = &skips[l];
            let up = upsample_nn(&h, self.arch.pool_widths[l], skip.shape()[2])?;
            let v = self.decoder[l].up_conv.forward(&up)?;
            h = self.decoder[l].block.forward_eval(&concat_channels(&v, skip)?)?;
        }
        softmax_channels(&self.head.forward(&h)?)
    }

    /// Train-mode forward keeping every activation needed by [`backward`](Self::backward).
    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, ForwardCache<T>)> {
        self.forward_cached(x, Mode::Train)
    }

    /// Forward pass with caches in either mode; eval mode leaves the running
    /// statistics untouched.
    pub fn forward_cached(&mut self, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, ForwardCache<T>)> {
        self.check_input(x)?;
        let levels = self.arch.levels;
        let mut enc = Vec::with_capacity(levels);
        let mut pools = Vec::with_capacity(levels - 1);
        let mut skips: Vec<Tensor<T>> = Vec::with_capacity(levels - 1);
        let mut h = x.clone();
        for l in 0..levels {
            let (out, cache) = self.encoder[l].forward_cached(h, mode)?;
            enc.push(cache);
            h = out;
            if l + 1 < levels {
                let (pooled, idx) = maxpool1d(&h, self.arch.pool_widths[l])?;
                pools.push(PoolCache { indices: idx, input_shape: h.shape().to_vec() });
                skips.push(std::mem::replace(&mut h, pooled));
            }
        }
        let mut dec: Vec<Option<DecoderCache<T>>> = (0..levels - 1).map(|_| None).collect();
        for l in (0..levels - 1).rev() {
            let src_len = h.shape()[2];
            let up = upsample_nn(&h, self.arch.pool_widths[l], skips[l].shape()[2])?;
            let v = self.decoder[l].up_conv.forward(&up)?;
            let cat = concat_channels(&v, &skips[l])?;
            let (out, block) = self.decoder[l].block.forward_cached(cat, mode)?;
            dec[l] = Some(DecoderCache { up, src_len, up_channels: v.shape()[1], block });
            h = out;
        }
        let probs = softmax_channels(&self.head.forward(&h)?)?;
        let cache = ForwardCache {
            enc,
            pools,
            dec: dec.into_iter().map(|d| d.expect("every decoder ran")).collect(),
            head_input: h,
            probs: probs.clone(),
        };
        Ok((probs, cache))
    }

    /// Gradients of `sum(grad_probs * probs)` for every learnable tensor and
    /// for the input.
    pub fn backward(&self, cache: &ForwardCache<T>, grad_probs: &Tensor<T>) -> Result<ModelGrads<T>> {
        let levels = self.arch.levels;
        let mut grads = self.zeros_like();
        let g = softmax_channels_backward(&cache.probs, grad_probs)?;
        let hg = self.head.backward(&cache.head_input, &g)?;
        grads.head.weight = hg.weight;
        grads.head.bias = hg.bias;
        let mut g = hg.input;

        let mut skip_grads: Vec<Tensor<T>> = Vec::with_capacity(levels - 1);
        for l in 0..levels - 1 {
            let dc = &cache.dec[l];
            let g_cat = self.decoder[l].block.backward(&dc.block, g, &mut grads.decoder[l].block)?;
            let (g_v, g_skip) = split_channels(&g_cat, dc.up_channels)?;
            let ug = self.decoder[l].up_conv.backward(&dc.up, &g_v)?;
            grads.decoder[l].up_conv.weight = ug.weight;
            grads.decoder[l].up_conv.bias = ug.bias;
            g = upsample_nn_backward(&ug.input, self.arch.pool_widths[l], dc.src_len)?;
            skip_grads.push(g_skip);
        }
        for l in (0..levels).rev() {
            if l + 1 < levels {
                let p = &cache.pools[l];
                let mut gb = maxpool1d_backward(&g, &p.indices, &p.input_shape)?;
                gb.add_assign(&skip_grads[l]);
                g = gb;
            }
            g = self.encoder[l].backward(&cache.enc[l], g, &mut grads.encoder[l])?;
        }
        Ok(ModelGrads { params: grads, input: g })
    }

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, _, t) in z.tensors_mut() {
            t.data_mut().fill(T::zero());
        }
        z
    }
}

struct CompositeCache<T> {
    input: Tensor<T>,
    relu_out: Tensor<T>,
    bn: BnCache<T>,
}

struct BlockCache<T> {
    first: CompositeCache<T>,
    second: CompositeCache<T>,
}

struct PoolCache {
    indices: Vec<usize>,
    input_shape: Vec<usize>,
}

struct DecoderCache<T> {
    up: Tensor<T>,
    src_len: usize,
    up_channels: usize,
    block: BlockCache<T>,
}

/// Activations saved by [`ModelParams::forward_cached`].
pub struct ForwardCache<T> {
    enc: Vec<BlockCache<T>>,
    pools: Vec<PoolCache>,
    dec: Vec<DecoderCache<T>>,
    head_input: Tensor<T>,
    probs: Tensor<T>,
}

/// Gradients laid out like the parameters they belong to. Running-stat
/// slots are zero.
pub struct ModelGrads<T> {
    pub params: ModelParams<T>,
    pub input: Tensor<T>,
}

impl<T: Scalar> ModelGrads<T> {
    /// Same order as [`ModelParams::learnable`].
    pub fn learnable(&self) -> Vec<&Tensor<T>> {
        self.params.learnable()
    }
}

impl<T: Scalar> Composite<T> {
    fn forward_eval(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.bn.forward_eval(&relu(&self.conv.forward(x)?))
    }

    fn forward_cached(&mut self, x: Tensor<T>, mode: Mode) -> Result<(Tensor<T>, CompositeCache<T>)> {
        let relu_out = relu(&self.conv.forward(&x)?);
        let (y, bn) = match mode {
            Mode::Train => self.bn.forward_train(&relu_out)?,
            Mode::Eval => self.bn.forward_eval_cached(&relu_out)?,
        };
        Ok((y, CompositeCache { input: x, relu_out, bn }))
    }

    fn backward(&self, cache: &CompositeCache<T>, g: Tensor<T>, grads: &mut Composite<T>) -> Result<Tensor<T>> {
        let bg = self.bn.backward(&cache.bn, &g)?;
        grads.bn.gamma = bg.gamma;
        grads.bn.beta = bg.beta;
        let g = relu_backward(&cache.relu_out, &bg.input)?;
        let cg = self.conv.backward(&cache.input, &g)?;
        grads.conv.weight = cg.weight;
        grads.conv.bias = cg.bias;
        Ok(cg.input)
    }
}

impl<T: Scalar> Block<T> {
    fn forward_eval(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.second.forward_eval(&self.first.forward_eval(x)?)
    }

    fn forward_cached(&mut self, x: Tensor<T>, mode: Mode) -> Result<(Tensor<T>, BlockCache<T>)> {
        let (h, first) = self.first.forward_cached(x, mode)?;
        let (y, second) = self.second.forward_cached(h, mode)?;
        Ok((y, BlockCache { first, second }))
    }

    fn backward(&self, cache: &BlockCache<T>, g: Tensor<T>, grads: &mut Block<T>) -> Result<Tensor<T>> {
        let g = self.second.backward(&cache.second, g, &mut grads.second)?;
        self.first.backward(&cache.first, g, &mut grads.first)
    }
}
