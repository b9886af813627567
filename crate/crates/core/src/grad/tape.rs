use thiserror::Error;

use crate::tensor::{
    bicubic_resize, bicubic_resize_backward, conv2d, conv2d_backward, pad_constant, pixel_shuffle,
    pixel_unshuffle, ConvKernel, Element, Scale, Shape4, Tensor4, TensorError,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GradError {
    #[error("loss node has shape {0}, expected a (1, 1, 1, 1) scalar")]
    NonScalarLoss(Shape4),
    #[error("node {0} is not on this tape")]
    UnknownNode(usize),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Placement of a prompt onto one batch item: prompt pixel `(i, j)` lands on
/// item pixel `(i + origin_h, j + origin_w)`; parts falling outside the item
/// are dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptSlot {
    pub prompt: NodeId,
    pub origin_h: isize,
    pub origin_w: isize,
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Conv2d {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        padding: usize,
        pad_values: Option<Vec<T>>,
    },
    Pad {
        input: NodeId,
        pad: usize,
    },
    PixelShuffle {
        input: NodeId,
        r: usize,
    },
    Resize {
        input: NodeId,
        scale: Scale,
    },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    MulScalar(NodeId, T),
    Relu(NodeId),
    AddPrompts {
        input: NodeId,
        slots: Vec<Option<PromptSlot>>,
    },
    Sum(NodeId),
    L1Loss {
        pred: NodeId,
        target: NodeId,
    },
    AbsorbWeight {
        outer: NodeId,
        inner: NodeId,
    },
    AbsorbBias {
        outer_weight: NodeId,
        outer_bias: NodeId,
        inner_bias: NodeId,
    },
}

#[derive(Debug, Clone)]
struct Node<T> {
    op: Op<T>,
    value: Tensor4<T>,
    requires_grad: bool,
}

/// Records primitive applications in execution order. Node ids are indices,
/// so the recording order is already a topological order.
#[derive(Debug, Clone, Default)]
pub struct Tape<T = f32> {
    nodes: Vec<Node<T>>,
}

/// `∂loss/∂node` for every node the loss depends on.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor4<T>>>,
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, id: NodeId) -> Option<&Tensor4<T>> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor4<T>> {
        self.grads.get_mut(id.0).and_then(Option::take)
    }
}

fn absorb_weight<T: Element>(outer: &Tensor4<T>, inner: &Tensor4<T>) -> Result<Tensor4<T>, TensorError> {
    let [o, m, k, _] = outer.dims();
    let [m2, i, kh, kw] = inner.dims();
    if m != m2 {
        return Err(TensorError::ChannelMismatch {
            expected: m,
            actual: m2,
        });
    }
    if kh != 1 || kw != 1 {
        return Err(TensorError::KernelSize(kh.max(kw)));
    }
    Ok(Tensor4::from_fn([o, i, k, k], |oo, ii, u, v| {
        (0..m).fold(T::zero(), |acc, mm| acc + outer.at(oo, mm, u, v) * inner.at(mm, ii, 0, 0))
    }))
}

fn absorb_bias<T: Element>(
    outer_weight: &Tensor4<T>,
    outer_bias: &Tensor4<T>,
    inner_bias: &Tensor4<T>,
) -> Result<Tensor4<T>, TensorError> {
    let [o, m, k, _] = outer_weight.dims();
    if inner_bias.dims() != [m, 1, 1, 1] {
        return Err(TensorError::ChannelMismatch {
            expected: m,
            actual: inner_bias.shape().b,
        });
    }
    if outer_bias.dims() != [o, 1, 1, 1] {
        return Err(TensorError::ChannelMismatch {
            expected: o,
            actual: outer_bias.shape().b,
        });
    }
    Ok(Tensor4::from_fn([o, 1, 1, 1], |oo, _, _, _| {
        let mut acc = outer_bias.at(oo, 0, 0, 0);
        for mm in 0..m {
            let bm = inner_bias.at(mm, 0, 0, 0);
            for u in 0..k {
                for v in 0..k {
                    acc = acc + outer_weight.at(oo, mm, u, v) * bm;
                }
            }
        }
        acc
    }))
}

fn add_prompts<T: Element>(
    x: &Tensor4<T>,
    slots: &[Option<PromptSlot>],
    prompt_of: impl Fn(NodeId) -> Tensor4<T>,
) -> Result<Tensor4<T>, TensorError> {
    let s = x.shape();
    if slots.len() != s.b {
        return Err(TensorError::ShapeMismatch {
            lhs: s,
            rhs: Shape4::new(slots.len(), s.c, s.h, s.w),
        });
    }
    let mut out = x.clone();
    for (b, slot) in slots.iter().enumerate() {
        let Some(slot) = slot else { continue };
        let p = prompt_of(slot.prompt);
        let ps = p.shape();
        if ps.b != 1 || ps.c != s.c {
            return Err(TensorError::ChannelMismatch {
                expected: s.c,
                actual: ps.c,
            });
        }
        for_each_overlap(s, ps, slot, |y, xx, py, px| {
            for c in 0..s.c {
                let i = out.index(b, c, y, xx);
                out.data_mut()[i] = out.data()[i] + p.at(0, c, py, px);
            }
        });
    }
    Ok(out)
}

fn for_each_overlap(item: Shape4, prompt: Shape4, slot: &PromptSlot, mut f: impl FnMut(usize, usize, usize, usize)) {
    for py in 0..prompt.h {
        let y = py as isize + slot.origin_h;
        if y < 0 || y >= item.h as isize {
            continue;
        }
        for px in 0..prompt.w {
            let x = px as isize + slot.origin_w;
            if x < 0 || x >= item.w as isize {
                continue;
            }
            f(y as usize, x as usize, py, px);
        }
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor4<T> {
        &self.nodes[id.0].value
    }

    /// A differentiable input (parameter, prompt, or input under test).
    pub fn leaf(&mut self, value: Tensor4<T>) -> NodeId {
        self.push(Op::Leaf, value, true)
    }

    /// An input that never needs a gradient (frames, targets).
    pub fn constant(&mut self, value: Tensor4<T>) -> NodeId {
        self.push(Op::Leaf, value, false)
    }

    fn push(&mut self, op: Op<T>, value: Tensor4<T>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn record(&mut self, op: Op<T>) -> Result<NodeId, TensorError> {
        let value = self.evaluate(&op)?;
        let requires_grad = self.inputs(&op).iter().any(|id| self.nodes[id.0].requires_grad);
        Ok(self.push(op, value, requires_grad))
    }

    fn inputs(&self, op: &Op<T>) -> Vec<NodeId> {
        match op {
            Op::Leaf => vec![],
            Op::Conv2d {
                input, weight, bias, ..
            } => vec![*input, *weight, *bias],
            Op::Pad { input, .. }
            | Op::PixelShuffle { input, .. }
            | Op::Resize { input, .. }
            | Op::MulScalar(input, _)
            | Op::Relu(input)
            | Op::Sum(input) => vec![*input],
            Op::Add(a, b) | Op::Sub(a, b) => vec![*a, *b],
            Op::AddPrompts { input, slots } => std::iter::once(*input)
                .chain(slots.iter().flatten().map(|s| s.prompt))
                .collect(),
            Op::L1Loss { pred, target } => vec![*pred, *target],
            Op::AbsorbWeight { outer, inner } => vec![*outer, *inner],
            Op::AbsorbBias {
                outer_weight,
                outer_bias,
                inner_bias,
            } => vec![*outer_weight, *outer_bias, *inner_bias],
        }
    }

    fn evaluate(&self, op: &Op<T>) -> Result<Tensor4<T>, TensorError> {
        let v = |id: &NodeId| &self.nodes[id.0].value;
        match op {
            Op::Leaf => unreachable!("leaves carry their own value"),
            Op::Conv2d {
                input,
                weight,
                bias,
                padding,
                pad_values,
            } => {
                let k = ConvKernel::new(v(weight).clone(), v(bias).clone())?;
                conv2d(v(input), &k, *padding, pad_values.as_deref())
            }
            Op::Pad { input, pad } => Ok(pad_constant(v(input), *pad, None)),
            Op::PixelShuffle { input, r } => pixel_shuffle(v(input), *r),
            Op::Resize { input, scale } => bicubic_resize(v(input), *scale),
            Op::Add(a, b) => crate::tensor::add(v(a), v(b)),
            Op::Sub(a, b) => crate::tensor::sub(v(a), v(b)),
            Op::MulScalar(a, k) => Ok(crate::tensor::mul_scalar(v(a), *k)),
            Op::Relu(a) => Ok(crate::tensor::relu(v(a))),
            Op::AddPrompts { input, slots } => add_prompts(v(input), slots, |id| v(&id).clone()),
            Op::Sum(a) => Ok(Tensor4::scalar(v(a).sum())),
            Op::L1Loss { pred, target } => {
                let (p, t) = (v(pred), v(target));
                p.check_same_shape(t)?;
                let total = p
                    .data()
                    .iter()
                    .zip(t.data())
                    .fold(T::zero(), |acc, (&a, &b)| acc + (a - b).abs());
                Ok(Tensor4::scalar(total / T::from_usize(p.len()).unwrap()))
            }
            Op::AbsorbWeight { outer, inner } => absorb_weight(v(outer), v(inner)),
            Op::AbsorbBias {
                outer_weight,
                outer_bias,
                inner_bias,
            } => absorb_bias(v(outer_weight), v(outer_bias), v(inner_bias)),
        }
    }

    pub fn conv2d(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        padding: usize,
        pad_values: Option<Vec<T>>,
    ) -> Result<NodeId, TensorError> {
        self.record(Op::Conv2d {
            input,
            weight,
            bias,
            padding,
            pad_values,
        })
    }

    /// Zero ring of width `pad` around every plane.
    pub fn pad(&mut self, input: NodeId, pad: usize) -> Result<NodeId, TensorError> {
        self.record(Op::Pad { input, pad })
    }

    pub fn pixel_shuffle(&mut self, input: NodeId, r: usize) -> Result<NodeId, TensorError> {
        self.record(Op::PixelShuffle { input, r })
    }

    pub fn bicubic_resize(&mut self, input: NodeId, scale: Scale) -> Result<NodeId, TensorError> {
        self.record(Op::Resize { input, scale })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.record(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.record(Op::Sub(a, b))
    }

    pub fn mul_scalar(&mut self, a: NodeId, k: T) -> Result<NodeId, TensorError> {
        self.record(Op::MulScalar(a, k))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        self.record(Op::Relu(a))
    }

    /// Adds a (possibly different) prompt to each batch item; `None` leaves the
    /// item untouched.
    pub fn add_prompts(&mut self, input: NodeId, slots: Vec<Option<PromptSlot>>) -> Result<NodeId, TensorError> {
        self.record(Op::AddPrompts { input, slots })
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        self.record(Op::Sum(a))
    }

    /// Mean absolute error between `pred` and `target`.
    pub fn l1_loss(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId, TensorError> {
        self.record(Op::L1Loss { pred, target })
    }

    /// Weight of `outer ∘ inner` where `inner` is a 1×1 convolution.
    pub fn absorb_weight(&mut self, outer: NodeId, inner: NodeId) -> Result<NodeId, TensorError> {
        self.record(Op::AbsorbWeight { outer, inner })
    }

    /// Bias of `outer ∘ inner` where `inner` is a 1×1 convolution.
    pub fn absorb_bias(
        &mut self,
        outer_weight: NodeId,
        outer_bias: NodeId,
        inner_bias: NodeId,
    ) -> Result<NodeId, TensorError> {
        self.record(Op::AbsorbBias {
            outer_weight,
            outer_bias,
            inner_bias,
        })
    }

    /// Recomputes every non-leaf node from its recorded inputs and reports
    /// whether all of them match the stored values bit for bit.
    pub fn replay_matches(&self) -> Result<bool, TensorError> {
        for node in &self.nodes {
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            if self.evaluate(&node.op)? != node.value {
                return Ok(false);
            }
        }
        Ok(true)
    }

    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>, GradError> {
        let node = self.nodes.get(loss.0).ok_or(GradError::UnknownNode(loss.0))?;
        if node.value.dims() != [1, 1, 1, 1] {
            return Err(GradError::NonScalarLoss(node.value.shape()));
        }
        let mut grads: Vec<Option<Tensor4<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor4::scalar(T::one()));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &Tensor4<T>, grads: &mut [Option<Tensor4<T>>]) -> Result<(), TensorError> {
        let nodes = &self.nodes;
        let needs = |id: &NodeId| nodes[id.0].requires_grad;
        let v = |id: &NodeId| &nodes[id.0].value;
        let mut acc = |id: NodeId, delta: Tensor4<T>| {
            let slot = &mut grads[id.0];
            match slot {
                Some(existing) => {
                    for (e, d) in existing.data_mut().iter_mut().zip(delta.data()) {
                        *e = *e + *d;
                    }
                }
                None => *slot = Some(delta),
            }
        };
        match &nodes[idx].op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                padding,
                pad_values,
            } => {
                let k = ConvKernel::new(v(weight).clone(), v(bias).clone())?;
                let cg = conv2d_backward(v(input), &k, *padding, pad_values.as_deref(), g)?;
                if needs(input) {
                    acc(*input, cg.input);
                }
                if needs(weight) {
                    acc(*weight, cg.weight);
                }
                if needs(bias) {
                    acc(*bias, cg.bias);
                }
            }
            Op::Pad { input, pad } => {
                if needs(input) {
                    let s = v(input).shape();
                    acc(*input, g.crop(*pad, *pad, s.h, s.w));
                }
            }
            Op::PixelShuffle { input, r } => {
                if needs(input) {
                    acc(*input, pixel_unshuffle(g, *r)?);
                }
            }
            Op::Resize { input, scale } => {
                if needs(input) {
                    acc(*input, bicubic_resize_backward(g, v(input).shape(), *scale)?);
                }
            }
            Op::Add(a, b) => {
                if needs(a) {
                    acc(*a, g.clone());
                }
                if needs(b) {
                    acc(*b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if needs(a) {
                    acc(*a, g.clone());
                }
                if needs(b) {
                    acc(*b, g.map(|x| -x));
                }
            }
            Op::MulScalar(a, k) => {
                if needs(a) {
                    acc(*a, g.map(|x| x * *k));
                }
            }
            Op::Relu(a) => {
                if needs(a) {
                    let x = v(a);
                    let data = x
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&xi, &gi)| if xi > T::zero() { gi } else { T::zero() })
                        .collect();
                    acc(*a, Tensor4::from_vec(x.shape(), data)?);
                }
            }
            Op::AddPrompts { input, slots } => {
                if needs(input) {
                    acc(*input, g.clone());
                }
                let s = g.shape();
                for (b, slot) in slots.iter().enumerate() {
                    let Some(slot) = slot else { continue };
                    if !needs(&slot.prompt) {
                        continue;
                    }
                    let ps = v(&slot.prompt).shape();
                    let mut pg = Tensor4::zeros(ps);
                    for_each_overlap(s, ps, slot, |y, x, py, px| {
                        for c in 0..s.c {
                            let i = pg.index(0, c, py, px);
                            pg.data_mut()[i] = pg.data()[i] + g.at(b, c, y, x);
                        }
                    });
                    acc(slot.prompt, pg);
                }
            }
            Op::Sum(a) => {
                if needs(a) {
                    let gs = g.data()[0];
                    acc(*a, Tensor4::full(v(a).shape(), gs));
                }
            }
            Op::L1Loss { pred, target } => {
                let (p, t) = (v(pred), v(target));
                let scale = g.data()[0] / T::from_usize(p.len()).unwrap();
                let sign: Vec<T> = p
                    .data()
                    .iter()
                    .zip(t.data())
                    .map(|(&a, &b)| {
                        let r = a - b;
                        if r > T::zero() {
                            scale
                        } else if r < T::zero() {
                            -scale
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                let gp = Tensor4::from_vec(p.shape(), sign)?;
                if needs(target) {
                    acc(*target, gp.map(|x| -x));
                }
                if needs(pred) {
                    acc(*pred, gp);
                }
            }
            Op::AbsorbWeight { outer, inner } => {
                let (w, w1) = (v(outer), v(inner));
                let [o, m, k, _] = w.dims();
                let i_ch = w1.shape().c;
                if needs(outer) {
                    // d outer[o,m,u,v] = Σ_i g[o,i,u,v] · inner[m,i]
                    let d = Tensor4::from_fn([o, m, k, k], |oo, mm, u, vv| {
                        (0..i_ch).fold(T::zero(), |a, ii| a + g.at(oo, ii, u, vv) * w1.at(mm, ii, 0, 0))
                    });
                    acc(*outer, d);
                }
                if needs(inner) {
                    // d inner[m,i] = Σ_{o,u,v} g[o,i,u,v] · outer[o,m,u,v]
                    let d = Tensor4::from_fn([m, i_ch, 1, 1], |mm, ii, _, _| {
                        let mut s = T::zero();
                        for oo in 0..o {
                            for u in 0..k {
                                for vv in 0..k {
                                    s = s + g.at(oo, ii, u, vv) * w.at(oo, mm, u, vv);
                                }
                            }
                        }
                        s
                    });
                    acc(*inner, d);
                }
            }
            Op::AbsorbBias {
                outer_weight,
                outer_bias,
                inner_bias,
            } => {
                let (w, b1) = (v(outer_weight), v(inner_bias));
                let [o, m, k, _] = w.dims();
                if needs(outer_bias) {
                    acc(*outer_bias, g.clone());
                }
                if needs(outer_weight) {
                    let d = Tensor4::from_fn([o, m, k, k], |oo, mm, _, _| g.at(oo, 0, 0, 0) * b1.at(mm, 0, 0, 0));
                    acc(*outer_weight, d);
                }
                if needs(inner_bias) {
                    let d = Tensor4::from_fn([m, 1, 1, 1], |mm, _, _, _| {
                        let mut s = T::zero();
                        for oo in 0..o {
                            let go = g.at(oo, 0, 0, 0);
                            for u in 0..k {
                                for vv in 0..k {
                                    s = s + go * w.at(oo, mm, u, vv);
                                }
                            }
                        }
                        s
                    });
                    acc(*inner_bias, d);
                }
            }
        }
        Ok(())
    }
}
