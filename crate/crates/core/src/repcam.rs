//! Training-time networks built from multi-branch RepCaM convolutions.
//!
//! A RepCaM convolution runs `M` parallel branches over the same input.
//! Branch `i` applies `i` consecutive 1×1 convolutions followed by one 3×3
//! convolution, and the branch outputs are summed (or, in concat mode,
//! stacked along channels). Nothing inside a branch is nonlinear, so every
//! block collapses to a single 3×3 convolution after training (see
//! [`crate::fuse`]).
//!
//! Border convention: each branch zero-pads its input by one pixel *before*
//! the 1×1 cascade and then applies the 3×3 kernel without padding. The
//! cascade therefore maps the zero ring to its accumulated bias, which is
//! exactly what the fused bias assumes at every position, and the fused
//! single convolution matches the branches on the border ring too.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::grad::{NodeId, Tape};
use crate::tensor::{
    add, bicubic_resize, conv2d, pad_constant, pixel_shuffle, relu, ConvKernel, Element, Scale, Tensor4,
    TensorError,
};
use crate::{Error, Result};

/// Frames are RGB.
pub const IMAGE_CHANNELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MergeMode {
    Sum,
    Concat,
}

/// How a taped forward pass evaluates RepCaM blocks. Both produce the same
/// function of the parameters; they differ only in cost and rounding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ForwardRoute {
    /// Run every branch as its own chain of convolutions.
    Branchwise,
    /// Fold each block's branches into one kernel on the tape, then run a
    /// single 3×3 convolution. Gradients flow back through the folding.
    #[default]
    Reparameterized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub channels: usize,
    pub blocks: usize,
    pub branches: usize,
    pub scale: u32,
    pub global_skip: bool,
    /// Multi-branch structure is applied to both convolutions of every
    /// residual block.
    pub merge: MergeMode,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            channels: 16,
            blocks: 2,
            branches: 3,
            scale: 2,
            global_skip: true,
            merge: MergeMode::Sum,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.blocks == 0 || self.branches == 0 {
            return Err(Error::InvalidConfig(format!(
                "channels, blocks and branches must be at least 1 (got {}, {}, {})",
                self.channels, self.blocks, self.branches
            )));
        }
        if !(2..=4).contains(&self.scale) {
            return Err(Error::InvalidConfig(format!("scale must be 2, 3 or 4 (got {})", self.scale)));
        }
        Ok(())
    }

    pub fn upscale(&self) -> Scale {
        Scale::up(self.scale).expect("validated scale")
    }

    /// Parameter count from the architecture alone.
    pub fn param_count(&self) -> usize {
        let c = self.channels;
        let s2 = (self.scale * self.scale) as usize;
        let head = IMAGE_CHANNELS * c * 9 + c;
        let repcam: usize = (0..self.branches).map(|i| i * (c * c + c) + c * c * 9 + c).sum();
        let tail = c * IMAGE_CHANNELS * s2 * 9 + IMAGE_CHANNELS * s2;
        head + self.blocks * 2 * repcam + tail
    }

    /// The same backbone with a single plain branch per block.
    pub fn single_branch(&self) -> Self {
        Self {
            branches: 1,
            merge: MergeMode::Sum,
            ..*self
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch<T = f32> {
    /// 1×1 kernels in application order.
    pub cascade: Vec<ConvKernel<T>>,
    pub conv3: ConvKernel<T>,
}

impl<T: Element> Branch<T> {
    pub fn forward(&self, x: &Tensor4<T>) -> Result<Tensor4<T>, TensorError> {
        let mut h = pad_constant(x, 1, None);
        for k in &self.cascade {
            h = conv2d(&h, k, 0, None)?;
        }
        conv2d(&h, &self.conv3, 0, None)
    }

    fn kernels(&self) -> impl Iterator<Item = &ConvKernel<T>> {
        self.cascade.iter().chain(std::iter::once(&self.conv3))
    }

    fn kernels_mut(&mut self) -> impl Iterator<Item = &mut ConvKernel<T>> {
        self.cascade.iter_mut().chain(std::iter::once(&mut self.conv3))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepCamConv<T = f32> {
    pub merge: MergeMode,
    pub branches: Vec<Branch<T>>,
}

impl<T: Element> RepCamConv<T> {
    /// Checks the branch layout: branch `i` holds exactly `i` 1×1 kernels and
    /// every kernel maps `C -> C`.
    pub fn new(merge: MergeMode, branches: Vec<Branch<T>>) -> Result<Self> {
        let conv = Self { merge, branches };
        conv.validate()?;
        Ok(conv)
    }

    fn validate(&self) -> Result<()> {
        let Some(first) = self.branches.first() else {
            return Err(Error::InvalidConfig("a RepCaM convolution needs at least one branch".into()));
        };
        let c = first.conv3.in_channels();
        for (i, b) in self.branches.iter().enumerate() {
            if b.cascade.len() != i {
                return Err(Error::InvalidConfig(format!(
                    "branch {i} has {} 1x1 kernels, expected {i}",
                    b.cascade.len()
                )));
            }
            for k in &b.cascade {
                if k.size() != 1 || k.in_channels() != c || k.out_channels() != c {
                    return Err(TensorError::ChannelMismatch {
                        expected: c,
                        actual: k.in_channels(),
                    }
                    .into());
                }
            }
            if b.conv3.size() != 3 || b.conv3.in_channels() != c || b.conv3.out_channels() != c {
                return Err(TensorError::ChannelMismatch {
                    expected: c,
                    actual: b.conv3.out_channels(),
                }
                .into());
            }
        }
        Ok(())
    }

    /// Randomly initialized block: 3×3 weights uniform in `±1/sqrt(9C)`,
    /// 1×1 cascades near the identity, zero biases.
    pub fn random(channels: usize, branches: usize, merge: MergeMode, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / ((channels * 9) as f64).sqrt();
        let branches = (0..branches)
            .map(|i| {
                let cascade = (0..i)
                    .map(|_| {
                        let mut k = ConvKernel::<T>::identity(channels);
                        for v in k.weight.data_mut() {
                            *v = *v + T::from_f64_lossy(rng.random_range(-0.01..0.01));
                        }
                        k
                    })
                    .collect();
                Branch {
                    cascade,
                    conv3: uniform_kernel(channels, channels, 3, bound, rng),
                }
            })
            .collect();
        Self { merge, branches }
    }

    pub fn channels(&self) -> usize {
        self.branches[0].conv3.in_channels()
    }

    pub fn out_channels(&self) -> usize {
        match self.merge {
            MergeMode::Sum => self.channels(),
            MergeMode::Concat => self.channels() * self.branches.len(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.kernels().map(ConvKernel::param_count).sum()
    }

    pub fn kernels(&self) -> impl Iterator<Item = &ConvKernel<T>> {
        self.branches.iter().flat_map(Branch::kernels)
    }

    pub fn kernels_mut(&mut self) -> impl Iterator<Item = &mut ConvKernel<T>> {
        self.branches.iter_mut().flat_map(Branch::kernels_mut)
    }

    /// Branch-by-branch evaluation; output has the input's spatial size.
    pub fn forward(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        if x.shape().c != self.channels() {
            return Err(TensorError::ChannelMismatch {
                expected: self.channels(),
                actual: x.shape().c,
            }
            .into());
        }
        let outs = self
            .branches
            .iter()
            .map(|b| b.forward(x))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(match self.merge {
            MergeMode::Sum => {
                let mut it = outs.into_iter();
                let first = it.next().expect("at least one branch");
                it.try_fold(first, |acc, y| add(&acc, &y))?
            }
            MergeMode::Concat => Tensor4::concat_channels(&outs)?,
        })
    }

    pub fn cast<U: Element>(&self) -> RepCamConv<U> {
        RepCamConv {
            merge: self.merge,
            branches: self
                .branches
                .iter()
                .map(|b| Branch {
                    cascade: b.cascade.iter().map(ConvKernel::cast).collect(),
                    conv3: b.conv3.cast(),
                })
                .collect(),
        }
    }
}

fn uniform_kernel<T: Element>(out: usize, inp: usize, k: usize, bound: f64, rng: &mut impl Rng) -> ConvKernel<T> {
    let mut kernel = ConvKernel::zeros(out, inp, k);
    for v in kernel.weight.data_mut() {
        *v = T::from_f64_lossy(rng.random_range(-bound..bound));
    }
    kernel
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResBlock<T = f32> {
    pub first: RepCamConv<T>,
    pub second: RepCamConv<T>,
}

/// Head conv, residual RepCaM body, tail conv + pixel shuffle, and an
/// optional bicubic skip from input to output.
#[derive(Debug, Clone, PartialEq)]
pub struct RepCamNet<T = f32> {
    pub config: BackboneConfig,
    pub head: ConvKernel<T>,
    pub body: Vec<ResBlock<T>>,
    pub tail: ConvKernel<T>,
}

impl<T: Element> RepCamNet<T> {
    /// Randomly initialized backbone; the same seed always gives the same
    /// parameters.
    pub fn build(config: BackboneConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = config.channels;
        let head = uniform_kernel(c, IMAGE_CHANNELS, 3, 1.0 / ((IMAGE_CHANNELS * 9) as f64).sqrt(), &mut rng);
        let body = (0..config.blocks)
            .map(|_| ResBlock {
                first: RepCamConv::random(c, config.branches, config.merge, &mut rng),
                second: RepCamConv::random(c, config.branches, config.merge, &mut rng),
            })
            .collect();
        let s2 = (config.scale * config.scale) as usize;
        let tail = uniform_kernel(IMAGE_CHANNELS * s2, c, 3, 1.0 / ((c * 9) as f64).sqrt(), &mut rng);
        Ok(Self {
            config,
            head,
            body,
            tail,
        })
    }

    pub fn kernels(&self) -> impl Iterator<Item = &ConvKernel<T>> {
        std::iter::once(&self.head)
            .chain(self.body.iter().flat_map(|b| b.first.kernels().chain(b.second.kernels())))
            .chain(std::iter::once(&self.tail))
    }

    pub fn kernels_mut(&mut self) -> impl Iterator<Item = &mut ConvKernel<T>> {
        std::iter::once(&mut self.head)
            .chain(
                self.body
                    .iter_mut()
                    .flat_map(|b| b.first.kernels_mut().chain(b.second.kernels_mut())),
            )
            .chain(std::iter::once(&mut self.tail))
    }

    /// Parameter names in canonical order (weight then bias per kernel).
    pub fn param_names(&self) -> Vec<String> {
        let mut names = vec!["head.weight".to_string(), "head.bias".to_string()];
        for (bi, block) in self.body.iter().enumerate() {
            for (part, conv) in [("first", &block.first), ("second", &block.second)] {
                for (i, branch) in conv.branches.iter().enumerate() {
                    let prefix = format!("body.{bi}.{part}.branch{i}");
                    for j in 0..branch.cascade.len() {
                        names.push(format!("{prefix}.cascade{j}.weight"));
                        names.push(format!("{prefix}.cascade{j}.bias"));
                    }
                    names.push(format!("{prefix}.conv3.weight"));
                    names.push(format!("{prefix}.conv3.bias"));
                }
            }
        }
        names.push("tail.weight".into());
        names.push("tail.bias".into());
        names
    }

    /// Parameter tensors in the order of [`Self::param_names`].
    pub fn params(&self) -> Vec<&Tensor4<T>> {
        self.kernels().flat_map(|k| [&k.weight, &k.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor4<T>> {
        self.kernels_mut().flat_map(|k| [&mut k.weight, &mut k.bias]).collect()
    }

    /// Rebuilds a network from tensors in canonical order.
    pub fn from_params(config: BackboneConfig, tensors: Vec<Tensor4<T>>) -> Result<Self> {
        let mut net = Self::build(config, 0)?;
        let expected = net.params().len();
        if tensors.len() != expected {
            return Err(Error::InvalidConfig(format!(
                "expected {expected} parameter tensors, got {}",
                tensors.len()
            )));
        }
        for (slot, t) in net.params_mut().into_iter().zip(tensors) {
            if slot.shape() != t.shape() {
                return Err(TensorError::ShapeMismatch {
                    lhs: slot.shape(),
                    rhs: t.shape(),
                }
                .into());
            }
            *slot = t;
        }
        Ok(net)
    }

    pub fn param_count(&self) -> usize {
        self.kernels().map(ConvKernel::param_count).sum()
    }

    pub fn cast<U: Element>(&self) -> RepCamNet<U> {
        RepCamNet {
            config: self.config,
            head: self.head.cast(),
            body: self
                .body
                .iter()
                .map(|b| ResBlock {
                    first: b.first.cast(),
                    second: b.second.cast(),
                })
                .collect(),
            tail: self.tail.cast(),
        }
    }

    fn check_input(&self, lr: &Tensor4<T>) -> Result<()> {
        if lr.shape().c != IMAGE_CHANNELS {
            return Err(TensorError::ChannelMismatch {
                expected: IMAGE_CHANNELS,
                actual: lr.shape().c,
            }
            .into());
        }
        Ok(())
    }

    /// Super-resolves a batch of LR frames. The output is not clamped.
    pub fn sr_forward(&self, lr: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.check_input(lr)?;
        let mut h = conv2d(lr, &self.head, 1, None)?;
        for block in &self.body {
            let inner = relu(&block.first.forward(&h)?);
            let r = block.second.forward(&inner)?;
            h = add(&h, &r)?;
        }
        let t = conv2d(&h, &self.tail, 1, None)?;
        let mut out = pixel_shuffle(&t, self.config.scale as usize)?;
        if self.config.global_skip {
            out = add(&out, &bicubic_resize(lr, self.config.upscale())?)?;
        }
        Ok(out)
    }

    /// Registers every parameter as a tape leaf, in canonical order.
    pub fn register(&self, tape: &mut Tape<T>) -> Vec<NodeId> {
        self.params().into_iter().map(|p| tape.leaf(p.clone())).collect()
    }

    /// Records [`Self::sr_forward`] on `tape` with parameters read from `ids`
    /// (as returned by [`Self::register`]).
    pub fn taped_forward(&self, tape: &mut Tape<T>, ids: &[NodeId], lr: NodeId, route: ForwardRoute) -> Result<NodeId> {
        self.check_input(tape.value(lr))?;
        let mut cursor = ids.iter().copied();
        let mut next = || cursor.next().expect("one node id per parameter");
        let (hw, hb) = (next(), next());
        let mut h = tape.conv2d(lr, hw, hb, 1, None)?;
        for (bi, block) in self.body.iter().enumerate() {
            let a = taped_repcam(tape, &block.first, h, route, &mut next, bi)?;
            let a = tape.relu(a)?;
            let r = taped_repcam(tape, &block.second, a, route, &mut next, bi)?;
            h = tape.add(h, r)?;
        }
        let (tw, tb) = (next(), next());
        let t = tape.conv2d(h, tw, tb, 1, None)?;
        let mut out = tape.pixel_shuffle(t, self.config.scale as usize)?;
        if self.config.global_skip {
            let up = tape.bicubic_resize(lr, self.config.upscale())?;
            out = tape.add(out, up)?;
        }
        Ok(out)
    }
}

fn taped_repcam<T: Element>(
    tape: &mut Tape<T>,
    conv: &RepCamConv<T>,
    x: NodeId,
    route: ForwardRoute,
    next: &mut impl FnMut() -> NodeId,
    block: usize,
) -> Result<NodeId> {
    if conv.merge != MergeMode::Sum {
        return Err(Error::ConcatInBody { block });
    }
    let mut total: Option<NodeId> = None;
    let mut fused: Option<(NodeId, NodeId)> = None;
    for branch in &conv.branches {
        let cascade: Vec<(NodeId, NodeId)> = branch.cascade.iter().map(|_| (next(), next())).collect();
        let (w3, b3) = (next(), next());
        match route {
            ForwardRoute::Branchwise => {
                let mut h = tape.pad(x, 1)?;
                for &(w, b) in &cascade {
                    h = tape.conv2d(h, w, b, 0, None)?;
                }
                let y = tape.conv2d(h, w3, b3, 0, None)?;
                total = Some(match total {
                    None => y,
                    Some(t) => tape.add(t, y)?,
                });
            }
            ForwardRoute::Reparameterized => {
                let (mut w, mut b) = (w3, b3);
                for &(cw, cb) in cascade.iter().rev() {
                    let nb = tape.absorb_bias(w, b, cb)?;
                    w = tape.absorb_weight(w, cw)?;
                    b = nb;
                }
                fused = Some(match fused {
                    None => (w, b),
                    Some((fw, fb)) => (tape.add(fw, w)?, tape.add(fb, b)?),
                });
            }
        }
    }
    match route {
        ForwardRoute::Branchwise => Ok(total.expect("at least one branch")),
        ForwardRoute::Reparameterized => {
            let (w, b) = fused.expect("at least one branch");
            Ok(tape.conv2d(x, w, b, 1, None)?)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad::check_tape_gradients;

    fn rand_input(seed: u64, shape: [usize; 4]) -> Tensor4<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor4::from_fn(shape, |_, _, _, _| rng.random_range(0.0..1.0))
    }

    fn random_conv(seed: u64, c: usize, m: usize) -> RepCamConv<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut conv = RepCamConv::<f32>::random(c, m, MergeMode::Sum, &mut rng);
        for k in conv.kernels_mut() {
            for v in k.bias.data_mut() {
                *v = rng.random_range(-0.5..0.5);
            }
        }
        conv
    }

    #[test]
    fn single_branch_equals_plain_conv() {
        let conv = random_conv(1, 4, 1);
        let x = rand_input(2, [2, 4, 6, 7]);
        let y = conv.forward(&x).unwrap();
        let plain = conv2d(&x, &conv.branches[0].conv3, 1, None).unwrap();
        assert!(y.max_abs_diff(&plain).unwrap() < 1e-6);
    }

    #[test]
    fn identity_cascade_gives_sum_of_two_convs() {
        let mut conv = random_conv(3, 3, 2);
        conv.branches[1].cascade[0] = ConvKernel::identity(3);
        let x = rand_input(4, [1, 3, 5, 5]);
        let y = conv.forward(&x).unwrap();
        let f0 = conv2d(&x, &conv.branches[0].conv3, 1, None).unwrap();
        let f1 = conv2d(&x, &conv.branches[1].conv3, 1, None).unwrap();
        assert!(y.max_abs_diff(&add(&f0, &f1).unwrap()).unwrap() < 1e-6);
    }

    #[test]
    fn linear_without_biases() {
        let mut conv = random_conv(5, 4, 3);
        for k in conv.kernels_mut() {
            k.bias = Tensor4::zeros(k.bias.shape());
        }
        let x = rand_input(6, [1, 4, 6, 6]);
        let y = rand_input(7, [1, 4, 6, 6]);
        let (a, b) = (0.6f32, -1.4f32);
        let combo = add(&x.map(|v| a * v), &y.map(|v| b * v)).unwrap();
        let lhs = conv.forward(&combo).unwrap();
        let rhs = add(&conv.forward(&x).unwrap().map(|v| a * v), &conv.forward(&y).unwrap().map(|v| b * v)).unwrap();
        assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-5);
    }

    #[test]
    fn zero_extra_branch_changes_nothing() {
        let conv = random_conv(8, 3, 2);
        let mut bigger = random_conv(9, 3, 3);
        bigger.branches[..2].clone_from_slice(&conv.branches);
        bigger.branches[2].conv3 = ConvKernel::zeros(3, 3, 3);
        let x = rand_input(10, [1, 3, 5, 5]);
        assert_eq!(conv.forward(&x).unwrap(), bigger.forward(&x).unwrap());
    }

    #[test]
    fn concat_mode_stacks_branch_outputs() {
        let mut conv = random_conv(11, 2, 2);
        conv.merge = MergeMode::Concat;
        let x = rand_input(12, [1, 2, 4, 4]);
        let y = conv.forward(&x).unwrap();
        assert_eq!(y.dims(), [1, 4, 4, 4]);
        let b1 = conv.branches[1].forward(&x).unwrap();
        assert_eq!(y.crop(0, 0, 4, 4).unstack()[0].data()[32..], b1.data()[..]);
    }

    #[test]
    fn rejects_bad_branch_layout_and_channels() {
        let conv = random_conv(13, 3, 2);
        let mut branches = conv.branches.clone();
        branches[1].cascade.clear();
        assert!(RepCamConv::new(MergeMode::Sum, branches).is_err());
        assert!(RepCamConv::new(MergeMode::Sum, conv.branches.clone()).is_ok());
        let x = rand_input(14, [1, 4, 4, 4]);
        assert!(matches!(conv.forward(&x), Err(Error::Tensor(TensorError::ChannelMismatch { .. }))));
    }

    #[test]
    fn param_count_matches_closed_form() {
        let cfg = BackboneConfig {
            channels: 16,
            blocks: 2,
            branches: 3,
            scale: 2,
            ..Default::default()
        };
        let net = RepCamNet::<f32>::build(cfg, 0).unwrap();
        // enumerate kernels by hand: head, 4 RepCaM convs, tail
        let per_conv = (16 * 16 * 9 + 16) + (16 * 16 + 16 + 16 * 16 * 9 + 16) + (2 * (16 * 16 + 16) + 16 * 16 * 9 + 16);
        let expected = (3 * 16 * 9 + 16) + 4 * per_conv + (16 * 12 * 9 + 12);
        assert_eq!(net.param_count(), expected);
        assert_eq!(cfg.param_count(), expected);
        let params: usize = net.params().iter().map(|p| p.len()).sum();
        assert_eq!(params, expected);
        assert_eq!(net.param_names().len(), net.params().len());

        let plain = RepCamNet::<f32>::build(cfg.single_branch(), 0).unwrap();
        assert_eq!(plain.param_count(), (3 * 16 * 9 + 16) + 4 * (16 * 16 * 9 + 16) + (16 * 12 * 9 + 12));
        assert!(net.param_count() > plain.param_count());
    }

    #[test]
    fn same_seed_same_parameters() {
        let cfg = BackboneConfig::default();
        let a = RepCamNet::<f32>::build(cfg, 77).unwrap();
        let b = RepCamNet::<f32>::build(cfg, 77).unwrap();
        let c = RepCamNet::<f32>::build(cfg, 78).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn initialization_follows_scheme() {
        let cfg = BackboneConfig::default();
        let net = RepCamNet::<f32>::build(cfg, 3).unwrap();
        let bound = 1.0 / (16.0f32 * 9.0).sqrt();
        for block in &net.body {
            for conv in [&block.first, &block.second] {
                for (i, br) in conv.branches.iter().enumerate() {
                    assert_eq!(br.cascade.len(), i);
                    assert!(br.conv3.weight.data().iter().all(|v| v.abs() <= bound));
                    for k in &br.cascade {
                        let id = ConvKernel::<f32>::identity(16);
                        assert!(k.weight.max_abs_diff(&id.weight).unwrap() <= 0.01);
                    }
                }
                assert!(conv.kernels().all(|k| k.bias.data().iter().all(|&v| v == 0.0)));
            }
        }
    }

    #[test]
    fn invalid_scale_rejected() {
        let cfg = BackboneConfig {
            scale: 5,
            ..Default::default()
        };
        assert!(matches!(RepCamNet::<f32>::build(cfg, 0), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn zero_net_with_skip_is_bicubic() {
        let mut net = RepCamNet::<f32>::build(BackboneConfig::default(), 0).unwrap();
        for p in net.params_mut() {
            *p = Tensor4::zeros(p.shape());
        }
        let x = rand_input(15, [1, 3, 24, 24]);
        let y = net.sr_forward(&x).unwrap();
        assert_eq!(y.dims(), [1, 3, 48, 48]);
        assert_eq!(y, bicubic_resize(&x, Scale::up(2).unwrap()).unwrap());
    }

    #[test]
    fn taped_routes_agree_with_direct_forward() {
        let cfg = BackboneConfig {
            channels: 4,
            blocks: 1,
            branches: 3,
            ..Default::default()
        };
        let mut net = RepCamNet::<f64>::build(cfg, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for p in net.params_mut() {
            for v in p.data_mut() {
                *v += rng.random_range(-0.1..0.1);
            }
        }
        let x = rand_input(16, [2, 3, 6, 5]).cast::<f64>();
        let direct = net.sr_forward(&x).unwrap();
        for route in [ForwardRoute::Branchwise, ForwardRoute::Reparameterized] {
            let mut tape = Tape::new();
            let ids = net.register(&mut tape);
            let xi = tape.constant(x.clone());
            let out = net.taped_forward(&mut tape, &ids, xi, route).unwrap();
            assert!(tape.value(out).max_abs_diff(&direct).unwrap() < 1e-12, "{route:?}");
        }
    }

    #[test]
    fn both_routes_give_matching_gradients() {
        let cfg = BackboneConfig {
            channels: 3,
            blocks: 1,
            branches: 3,
            ..Default::default()
        };
        let mut net = RepCamNet::<f64>::build(cfg, 21).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for p in net.params_mut() {
            for v in p.data_mut() {
                *v += rng.random_range(-0.2..0.2);
            }
        }
        let x = rand_input(23, [1, 3, 5, 5]).cast::<f64>();
        let target = rand_input(24, [1, 3, 10, 10]).cast::<f64>();
        let grads = |route| {
            let mut tape = Tape::new();
            let ids = net.register(&mut tape);
            let xi = tape.constant(x.clone());
            let ti = tape.constant(target.clone());
            let out = net.taped_forward(&mut tape, &ids, xi, route).unwrap();
            let loss = tape.l1_loss(out, ti).unwrap();
            let g = tape.backward(loss).unwrap();
            ids.iter().map(|id| g.get(*id).unwrap().clone()).collect::<Vec<_>>()
        };
        let a = grads(ForwardRoute::Branchwise);
        let b = grads(ForwardRoute::Reparameterized);
        for (ga, gb) in a.iter().zip(&b) {
            assert!(ga.max_abs_diff(gb).unwrap() < 1e-10);
        }
    }

    #[test]
    fn network_gradients_match_fd() {
        let cfg = BackboneConfig {
            channels: 2,
            blocks: 1,
            branches: 2,
            scale: 2,
            ..Default::default()
        };
        let mut net = RepCamNet::<f64>::build(cfg, 31).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        for p in net.params_mut() {
            for v in p.data_mut() {
                *v += rng.random_range(-0.3..0.3);
            }
        }
        let x = rand_input(33, [1, 3, 4, 4]).cast::<f64>();
        let target = rand_input(34, [1, 3, 8, 8]).cast::<f64>();
        let params: Vec<Tensor4<f64>> = net.params().into_iter().cloned().collect();
        for route in [ForwardRoute::Branchwise, ForwardRoute::Reparameterized] {
            let reports = check_tape_gradients(
                &params,
                |tape, ids| {
                    let xi = tape.constant(x.clone());
                    let ti = tape.constant(target.clone());
                    let out = net.taped_forward(tape, ids, xi, route).map_err(|e| match e {
                        Error::Tensor(t) => crate::grad::GradError::from(t),
                        other => panic!("{other}"),
                    })?;
                    Ok(tape.l1_loss(out, ti)?)
                },
                1e-3,
            )
            .unwrap();
            for r in reports {
                assert!(r.max_rel_error <= 1e-3, "{route:?}: {r:?}");
            }
        }
    }
}
