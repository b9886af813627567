//! Structural re-parameterization of trained RepCaM networks.
//!
//! A branch `conv3 ∘ g_k ∘ … ∘ g_1` first has its 1×1 chain folded into one
//! channel matrix and bias, which is then pushed through the 3×3 kernel.
//! Parallel branches with sum merging add their kernels; concat merging
//! stacks them along the output channels. All folding runs in `f64` and the
//! results are rounded to `f32` once.

use crate::repcam::{BackboneConfig, MergeMode, RepCamConv, RepCamNet, IMAGE_CHANNELS};
use crate::tensor::{add, bicubic_resize, conv2d, pixel_shuffle, relu, ConvKernel, Element, Tensor4, TensorError};
use crate::{Error, Result};

/// Row-major `out × in` matrix with a bias, in `f64`.
struct Affine {
    rows: usize,
    cols: usize,
    w: Vec<f64>,
    b: Vec<f64>,
}

impl Affine {
    fn identity(n: usize) -> Self {
        let mut w = vec![0.0; n * n];
        for i in 0..n {
            w[i * n + i] = 1.0;
        }
        Self {
            rows: n,
            cols: n,
            w,
            b: vec![0.0; n],
        }
    }

    /// `k ∘ self` for a 1×1 kernel `k`.
    fn then<T: Element>(&self, k: &ConvKernel<T>) -> Result<Self, TensorError> {
        if k.size() != 1 {
            return Err(TensorError::KernelSize(k.size()));
        }
        if k.in_channels() != self.rows {
            return Err(TensorError::ChannelMismatch {
                expected: self.rows,
                actual: k.in_channels(),
            });
        }
        let rows = k.out_channels();
        let mut w = vec![0.0; rows * self.cols];
        let mut b = vec![0.0; rows];
        for o in 0..rows {
            let mut acc = k.b(o).to_f64_lossy();
            for m in 0..self.rows {
                let kv = k.w(o, m, 0, 0).to_f64_lossy();
                acc += kv * self.b[m];
                for i in 0..self.cols {
                    w[o * self.cols + i] += kv * self.w[m * self.cols + i];
                }
            }
            b[o] = acc;
        }
        Ok(Self {
            rows,
            cols: self.cols,
            w,
            b,
        })
    }
}

/// Folds a chain of 1×1 kernels (application order) followed by `conv3`
/// into one 3×3 kernel.
///
/// The result, applied with zero padding 1, equals the chain applied to the
/// zero-padded input followed by `conv3` without padding.
pub fn fuse_cascade<T: Element>(cascade: &[ConvKernel<T>], conv3: &ConvKernel<T>) -> Result<ConvKernel<T>, TensorError> {
    if conv3.size() != 3 {
        return Err(TensorError::KernelSize(conv3.size()));
    }
    let in_ch = cascade.first().map_or(conv3.in_channels(), |k| k.in_channels());
    let mut chain = Affine::identity(in_ch);
    for k in cascade {
        chain = chain.then(k)?;
    }
    if chain.rows != conv3.in_channels() {
        return Err(TensorError::ChannelMismatch {
            expected: chain.rows,
            actual: conv3.in_channels(),
        });
    }
    let out = conv3.out_channels();
    let mut fused = ConvKernel::zeros(out, chain.cols, 3);
    for o in 0..out {
        let mut bias = conv3.b(o).to_f64_lossy();
        for u in 0..3 {
            for v in 0..3 {
                for m in 0..chain.rows {
                    let q = conv3.w(o, m, u, v).to_f64_lossy();
                    bias += q * chain.b[m];
                }
                for i in 0..chain.cols {
                    let acc: f64 = (0..chain.rows)
                        .map(|m| conv3.w(o, m, u, v).to_f64_lossy() * chain.w[m * chain.cols + i])
                        .sum();
                    fused.weight.set(o, i, u, v, T::from_f64_lossy(acc));
                }
            }
        }
        fused.bias.set(o, 0, 0, 0, T::from_f64_lossy(bias));
    }
    Ok(fused)
}

fn check_same_config<T: Element>(branches: &[ConvKernel<T>]) -> Result<&ConvKernel<T>, TensorError> {
    let first = branches.first().ok_or(TensorError::ChannelMismatch {
        expected: 1,
        actual: 0,
    })?;
    for b in branches {
        if b.size() != first.size() || b.in_channels() != first.in_channels() {
            return Err(TensorError::ShapeMismatch {
                lhs: first.weight.shape(),
                rhs: b.weight.shape(),
            });
        }
    }
    Ok(first)
}

/// Kernel whose convolution equals the sum of the branch convolutions.
pub fn fuse_parallel_sum<T: Element>(branches: &[ConvKernel<T>]) -> Result<ConvKernel<T>, TensorError> {
    let first = check_same_config(branches)?;
    for b in branches {
        first.weight.check_same_shape(&b.weight)?;
    }
    let sum = |pick: fn(&ConvKernel<T>) -> &Tensor4<T>| {
        let mut acc = vec![0.0f64; pick(first).len()];
        for b in branches {
            for (a, v) in acc.iter_mut().zip(pick(b).data()) {
                *a += v.to_f64_lossy();
            }
        }
        let data = acc.into_iter().map(T::from_f64_lossy).collect();
        Tensor4::from_vec(pick(first).shape(), data).expect("same shape")
    };
    Ok(ConvKernel {
        weight: sum(|k| &k.weight),
        bias: sum(|k| &k.bias),
    })
}

/// Kernel whose output is the channel concatenation of the branch outputs.
pub fn fuse_parallel_concat<T: Element>(branches: &[ConvKernel<T>]) -> Result<ConvKernel<T>, TensorError> {
    check_same_config(branches)?;
    let weights: Vec<Tensor4<T>> = branches.iter().map(|k| k.weight.clone()).collect();
    let biases: Vec<Tensor4<T>> = branches.iter().map(|k| k.bias.clone()).collect();
    // stacking along the leading (output channel) axis
    Ok(ConvKernel {
        weight: Tensor4::stack(&weights)?,
        bias: Tensor4::stack(&biases)?,
    })
}

/// Single 3×3 kernel equivalent to a whole RepCaM convolution (padding 1,
/// zero pad).
pub fn fuse_repcam_conv<T: Element>(conv: &RepCamConv<T>) -> Result<ConvKernel<T>, TensorError> {
    let collapsed = conv
        .branches
        .iter()
        .map(|b| fuse_cascade(&b.cascade, &b.conv3))
        .collect::<Result<Vec<_>, _>>()?;
    match conv.merge {
        MergeMode::Sum => fuse_parallel_sum(&collapsed),
        MergeMode::Concat => fuse_parallel_concat(&collapsed),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedBlock {
    pub first: ConvKernel<f32>,
    pub second: ConvKernel<f32>,
}

/// Inference network: plain residual blocks of single 3×3 convolutions.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedNet {
    /// Topology of this network (always one branch).
    pub config: BackboneConfig,
    /// Branch count of the network it was fused from.
    pub trained_branches: usize,
    pub head: ConvKernel<f32>,
    pub blocks: Vec<FusedBlock>,
    pub tail: ConvKernel<f32>,
}

pub fn fuse_network(net: &RepCamNet<f32>) -> Result<FusedNet> {
    let blocks = net
        .body
        .iter()
        .enumerate()
        .map(|(i, block)| {
            if block.first.merge != MergeMode::Sum || block.second.merge != MergeMode::Sum {
                return Err(Error::ConcatInBody { block: i });
            }
            Ok(FusedBlock {
                first: fuse_repcam_conv(&block.first)?,
                second: fuse_repcam_conv(&block.second)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FusedNet {
        config: net.config.single_branch(),
        trained_branches: net.config.branches,
        head: net.head.clone(),
        blocks,
        tail: net.tail.clone(),
    })
}

impl FusedNet {
    pub fn kernels(&self) -> impl Iterator<Item = &ConvKernel<f32>> {
        std::iter::once(&self.head)
            .chain(self.blocks.iter().flat_map(|b| [&b.first, &b.second]))
            .chain(std::iter::once(&self.tail))
    }

    pub fn param_count(&self) -> usize {
        self.kernels().map(ConvKernel::param_count).sum()
    }

    pub fn named_params(&self) -> Vec<(String, Tensor4<f32>)> {
        let mut out = vec![
            ("head.weight".to_string(), self.head.weight.clone()),
            ("head.bias".to_string(), self.head.bias.clone()),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            for (part, k) in [("first", &b.first), ("second", &b.second)] {
                out.push((format!("body.{i}.{part}.weight"), k.weight.clone()));
                out.push((format!("body.{i}.{part}.bias"), k.bias.clone()));
            }
        }
        out.push(("tail.weight".into(), self.tail.weight.clone()));
        out.push(("tail.bias".into(), self.tail.bias.clone()));
        out
    }

    /// Rebuilds from tensors in the order of [`Self::named_params`].
    pub fn from_params(config: BackboneConfig, trained_branches: usize, tensors: Vec<Tensor4<f32>>) -> Result<Self> {
        if config.branches != 1 {
            return Err(Error::InvalidConfig(format!(
                "a fused network has one branch per block, config says {}",
                config.branches
            )));
        }
        let plain = RepCamNet::from_params(config, tensors)?;
        Ok(Self {
            config,
            trained_branches,
            head: plain.head,
            blocks: plain
                .body
                .into_iter()
                .map(|b| FusedBlock {
                    first: b.first.branches[0].conv3.clone(),
                    second: b.second.branches[0].conv3.clone(),
                })
                .collect(),
            tail: plain.tail,
        })
    }

    /// The same network as a one-branch training network.
    pub fn to_repcam(&self) -> RepCamNet<f32> {
        let tensors = self.named_params().into_iter().map(|(_, t)| t).collect();
        RepCamNet::from_params(self.config, tensors).expect("fused topology is a one-branch backbone")
    }

    pub fn sr_forward(&self, lr: &Tensor4<f32>) -> Result<Tensor4<f32>> {
        if lr.shape().c != IMAGE_CHANNELS {
            return Err(TensorError::ChannelMismatch {
                expected: IMAGE_CHANNELS,
                actual: lr.shape().c,
            }
            .into());
        }
        let mut h = conv2d(lr, &self.head, 1, None)?;
        for b in &self.blocks {
            let inner = relu(&conv2d(&h, &b.first, 1, None)?);
            h = add(&h, &conv2d(&inner, &b.second, 1, None)?)?;
        }
        let t = conv2d(&h, &self.tail, 1, None)?;
        let mut out = pixel_shuffle(&t, self.config.scale as usize)?;
        if self.config.global_skip {
            out = add(&out, &bicubic_resize(lr, self.config.upscale())?)?;
        }
        Ok(out)
    }
}
