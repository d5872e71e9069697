use std::sync::atomic::{AtomicU32, Ordering};

use serde::{Deserialize, Serialize};

use super::kernels::{self, ConvGeom, PoolGeom};
use super::Tensor;
use crate::error::{Error, Result};

static NEXT_TAPE: AtomicU32 = AtomicU32::new(1);

/// Stable handle of a trainable or buffered parameter inside a
/// [`ParamStore`](crate::params::ParamStore).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Handle to a value recorded on a particular [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u32,
    index: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    LeakyRelu(f64),
    Sigmoid,
    Tanh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Same,
    Valid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
}

#[derive(Clone, Copy, Debug)]
enum Unary {
    Act(Activation),
    Exp,
    Ln,
    Sqrt,
    Square,
    Abs,
}

#[derive(Clone, Copy, Debug)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul {
        a: usize,
        b: usize,
        batch: usize,
        a_batched: bool,
        b_batched: bool,
        m: usize,
        k: usize,
        n: usize,
    },
    Binary {
        kind: Binary,
        a: usize,
        b: usize,
    },
    Scale {
        x: usize,
        factor: f64,
    },
    Offset {
        x: usize,
    },
    Unary {
        kind: Unary,
        x: usize,
    },
    ClampMin {
        x: usize,
        floor: f64,
    },
    Softmax {
        x: usize,
    },
    Reduce {
        x: usize,
        map: Vec<usize>,
        scale: f64,
    },
    Concat {
        parts: Vec<usize>,
        axis: usize,
    },
    Narrow {
        x: usize,
        axis: usize,
        start: usize,
    },
    Reshape {
        x: usize,
    },
    Permute {
        x: usize,
        map: Vec<usize>,
    },
    Conv1d {
        x: usize,
        kernel: usize,
        pad_left: usize,
    },
    AvgPool {
        x: usize,
        window: usize,
        stride: usize,
        pad_left: usize,
    },
    PairScores {
        left: usize,
        right: usize,
        weight: usize,
        slope: f64,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
    param: Option<ParamId>,
}

/// Record of one forward pass, replayed in reverse by [`Tape::backward`].
///
/// Nodes are appended in execution order, so the record is topologically
/// sorted by construction. A tape supports exactly one backward pass.
pub struct Tape {
    id: u32,
    nodes: Vec<Node>,
    consumed: bool,
    pins: Option<(Vec<bool>, usize)>,
}

/// Gradients produced by one backward pass, indexed by the leaves that
/// required them.
pub struct Gradients {
    tape: u32,
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, usize)>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.index).and_then(Option::as_ref)
    }

    /// Gradients of every parameter leaf. A parameter bound to several
    /// leaves appears once per leaf.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor)> + '_ {
        self.params
            .iter()
            .filter_map(|&(id, i)| self.grads[i].as_ref().map(|g| (id, g)))
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            consumed: false,
            pins: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn index(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::contract("variable does not belong to this tape"));
        }
        Ok(v.index)
    }

    fn node(&self, v: Var) -> Result<&Node> {
        Ok(&self.nodes[self.index(v)?])
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.node(v).expect("foreign variable").value
    }

    /// Evaluates every kink recorded from now on at the side given by
    /// `signature` (as returned by [`Tape::kink_signature`]) rather than the
    /// side its input falls on, so a perturbed forward pass stays on the
    /// smooth piece of the original one. A pinned tape is forward only.
    pub fn pin_kinks(&mut self, signature: Vec<bool>) {
        self.pins = Some((signature, 0));
    }

    fn take_pins(&mut self, n: usize) -> Result<Option<Vec<bool>>> {
        let Some((sig, at)) = self.pins.as_mut() else {
            return Ok(None);
        };
        if *at + n > sig.len() {
            return Err(Error::contract("pinned kink signature is shorter than the forward pass"));
        }
        let out = sig[*at..*at + n].to_vec();
        *at += n;
        Ok(Some(out))
    }

    /// Which side of its kink every LeakyReLU, abs and clamp input sits on,
    /// in recording order. Two passes of the same program with equal
    /// signatures ran on the same smooth piece of the function.
    pub fn kink_signature(&self) -> Vec<bool> {
        let mut sig = Vec::new();
        for node in &self.nodes {
            match node.op {
                Op::Unary {
                    kind: Unary::Act(Activation::LeakyRelu(_)) | Unary::Abs,
                    x,
                } => sig.extend(self.nodes[x].value.data().iter().map(|&v| v > 0.0)),
                Op::ClampMin { x, floor } => sig.extend(self.nodes[x].value.data().iter().map(|&v| v > floor)),
                Op::PairScores { left, right, .. } => {
                    let (l, r) = (&self.nodes[left].value, &self.nodes[right].value);
                    let (batch, nodes, h) = (l.shape()[0], l.shape()[1], l.shape()[2]);
                    for b in 0..batch {
                        for j in 0..nodes {
                            for k in 0..nodes {
                                let lj = &l.data()[(b * nodes + j) * h..][..h];
                                let rk = &r.data()[(b * nodes + k) * h..][..h];
                                sig.extend(lj.iter().zip(rk).map(|(a, c)| a + c > 0.0));
                            }
                        }
                    }
                }
                _ => {}
            }
        }
        sig
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[usize]) -> Result<Var> {
        if self.consumed {
            return Err(Error::contract(
                "tape already consumed by backward; record a fresh forward pass",
            ));
        }
        let needs_grad = inputs.iter().any(|&i| self.nodes[i].needs_grad);
        let index = self.nodes.len();
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            param: None,
        });
        Ok(Var { tape: self.id, index })
    }

    fn push_leaf(&mut self, value: Tensor, needs_grad: bool, param: Option<ParamId>) -> Var {
        let index = self.nodes.len();
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad,
            param,
        });
        Var { tape: self.id, index }
    }

    /// A leaf input; its gradient is reported when `requires_grad` is set.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push_leaf(value, requires_grad, None)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false, None)
    }

    /// A trainable leaf bound to a parameter slot.
    pub fn param(&mut self, id: ParamId, value: Tensor) -> Var {
        self.push_leaf(value, true, Some(id))
    }

    // ----------------------------------------------------------------- ops

    /// Matrix product over the two trailing axes. Leading batch axes must be
    /// identical, or one operand must be a plain matrix shared by every batch.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.index(a)?, self.index(b)?);
        let (sa, sb) = (self.nodes[ai].value.shape(), self.nodes[bi].value.shape());
        if sa.len() < 2 || sb.len() < 2 || sa[sa.len() - 1] != sb[sb.len() - 2] {
            return Err(Error::dim("matmul", format!("{sa:?} × {sb:?}")));
        }
        let (ba, bb) = (&sa[..sa.len() - 2], &sb[..sb.len() - 2]);
        let (a_batched, b_batched) = (!ba.is_empty(), !bb.is_empty());
        if a_batched && b_batched && ba != bb {
            return Err(Error::dim(
                "matmul",
                format!("batch axes differ: {sa:?} × {sb:?}"),
            ));
        }
        let batch_dims = if a_batched { ba } else { bb };
        let batch: usize = batch_dims.iter().product();
        let (m, k, n) = (sa[sa.len() - 2], sa[sa.len() - 1], sb[sb.len() - 1]);
        let mut shape = batch_dims.to_vec();
        shape.extend([m, n]);
        let mut out = vec![0.0; batch * m * n];
        {
            let (ad, bd) = (self.nodes[ai].value.data(), self.nodes[bi].value.data());
            for t in 0..batch {
                let ao = if a_batched { t * m * k } else { 0 };
                let bo = if b_batched { t * k * n } else { 0 };
                kernels::gemm(
                    &ad[ao..ao + m * k],
                    &bd[bo..bo + k * n],
                    &mut out[t * m * n..(t + 1) * m * n],
                    m,
                    k,
                    n,
                );
            }
        }
        let value = Tensor::new(&shape, out)?;
        self.push(
            value,
            Op::MatMul {
                a: ai,
                b: bi,
                batch,
                a_batched,
                b_batched,
                m,
                k,
                n,
            },
            &[ai, bi],
        )
    }

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.index(a)?, self.index(b)?);
        let (sa, sb) = (self.nodes[ai].value.shape(), self.nodes[bi].value.shape());
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(Error::dim(
                "elementwise",
                format!("{sb:?} is not a trailing sub-shape of {sa:?}"),
            ));
        }
        let (ad, bd) = (self.nodes[ai].value.data(), self.nodes[bi].value.data());
        let nb = bd.len();
        let out: Vec<f64> = ad
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let y = bd[i % nb];
                match kind {
                    Binary::Add => x + y,
                    Binary::Sub => x - y,
                    Binary::Mul => x * y,
                    Binary::Div => x / y,
                }
            })
            .collect();
        let value = Tensor::new(sa, out)?;
        self.push(value, Op::Binary { kind, a: ai, b: bi }, &[ai, bi])
    }

    /// `a + b`, where `b`'s shape may be a trailing sub-shape of `a`'s.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Div, a, b)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let xi = self.index(x)?;
        let value = self.nodes[xi].value.map(|v| v * factor);
        self.push(value, Op::Scale { x: xi, factor }, &[xi])
    }

    pub fn add_scalar(&mut self, x: Var, shift: f64) -> Result<Var> {
        let xi = self.index(x)?;
        let value = self.nodes[xi].value.map(|v| v + shift);
        self.push(value, Op::Offset { x: xi }, &[xi])
    }

    fn unary(&mut self, kind: Unary, x: Var) -> Result<Var> {
        let xi = self.index(x)?;
        let f: fn(f64, f64) -> f64 = match kind {
            Unary::Act(Activation::LeakyRelu(_)) => |v, s| if v > 0.0 { v } else { s * v },
            Unary::Act(Activation::Sigmoid) => |v, _| sigmoid(v),
            Unary::Act(Activation::Tanh) => |v, _| v.tanh(),
            Unary::Exp => |v, _| v.exp(),
            Unary::Ln => |v, _| v.ln(),
            Unary::Sqrt => |v, _| v.sqrt(),
            Unary::Square => |v, _| v * v,
            Unary::Abs => |v, _| v.abs(),
        };
        let slope = match kind {
            Unary::Act(Activation::LeakyRelu(s)) => s,
            _ => 0.0,
        };
        let kinked = matches!(kind, Unary::Act(Activation::LeakyRelu(_)) | Unary::Abs);
        let pins = if kinked { self.take_pins(self.nodes[xi].value.len())? } else { None };
        let value = match pins {
            Some(side) => {
                let src = &self.nodes[xi].value;
                let low = if let Unary::Abs = kind { -1.0 } else { slope };
                let data = src.data().iter().zip(&side).map(|(&v, &up)| if up { v } else { low * v }).collect();
                Tensor::new(src.shape(), data)?
            }
            None => self.nodes[xi].value.map(|v| f(v, slope)),
        };
        self.push(value, Op::Unary { kind, x: xi }, &[xi])
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        if let Activation::LeakyRelu(s) = kind {
            if !(s > 0.0 && s < 1.0) {
                return Err(Error::contract(format!(
                    "leaky_relu slope must lie in (0,1), got {s}"
                )));
            }
        }
        self.unary(Unary::Act(kind), x)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        self.activation(x, Activation::LeakyRelu(slope))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Tanh)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Exp, x)
    }

    /// Natural log; callers guard zero with [`Tape::clamp_min`].
    pub fn ln(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Ln, x)
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Sqrt, x)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Square, x)
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Abs, x)
    }

    /// `max(x, floor)`; gradient flows only where `x > floor`.
    pub fn clamp_min(&mut self, x: Var, floor: f64) -> Result<Var> {
        let xi = self.index(x)?;
        let value = match self.take_pins(self.nodes[xi].value.len())? {
            Some(side) => {
                let src = &self.nodes[xi].value;
                let data = src.data().iter().zip(&side).map(|(&v, &up)| if up { v } else { floor }).collect();
                Tensor::new(src.shape(), data)?
            }
            None => self.nodes[xi].value.map(|v| v.max(floor)),
        };
        self.push(value, Op::ClampMin { x: xi, floor }, &[xi])
    }

    /// Softmax along the last axis, with per-row max subtraction.
    pub fn softmax_last(&mut self, x: Var) -> Result<Var> {
        let xi = self.index(x)?;
        let src = &self.nodes[xi].value;
        let n = *src
            .shape()
            .last()
            .ok_or_else(|| Error::dim("softmax_last", "scalar input"))?;
        if n == 0 {
            return Err(Error::dim("softmax_last", "empty last axis"));
        }
        let mut out = vec![0.0; src.len()];
        kernels::softmax_rows(src.data(), n, &mut out);
        let value = Tensor::new(src.shape(), out)?;
        self.push(value, Op::Softmax { x: xi }, &[xi])
    }

    /// Sum or mean over `axes`; reduced axes are kept with size 1 when
    /// `keep_dims`, dropped otherwise.
    pub fn reduce(&mut self, x: Var, kind: Reduction, axes: &[usize], keep_dims: bool) -> Result<Var> {
        let xi = self.index(x)?;
        let shape = self.nodes[xi].value.shape().to_vec();
        for (i, &a) in axes.iter().enumerate() {
            if a >= shape.len() || axes[..i].contains(&a) {
                return Err(Error::dim(
                    "reduce",
                    format!("invalid axes {axes:?} for shape {shape:?}"),
                ));
            }
        }
        let (kept, map) = kernels::reduce_map(&shape, axes);
        let count: usize = axes.iter().map(|&a| shape[a]).product();
        let scale = match kind {
            Reduction::Sum => 1.0,
            Reduction::Mean => {
                if count == 0 {
                    return Err(Error::dim("reduce", "mean over an empty axis"));
                }
                1.0 / count as f64
            }
        };
        let mut out = vec![0.0; kept.iter().product()];
        for (&dst, &v) in map.iter().zip(self.nodes[xi].value.data()) {
            out[dst] += v;
        }
        if scale != 1.0 {
            out.iter_mut().for_each(|v| *v *= scale);
        }
        let out_shape: Vec<usize> = if keep_dims {
            kept
        } else {
            shape
                .iter()
                .enumerate()
                .filter(|(i, _)| !axes.contains(i))
                .map(|(_, &d)| d)
                .collect()
        };
        let value = Tensor::new(&out_shape, out)?;
        self.push(value, Op::Reduce { x: xi, map, scale }, &[xi])
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let axes: Vec<usize> = (0..self.node(x)?.value.rank()).collect();
        self.reduce(x, Reduction::Sum, &axes, false)
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let axes: Vec<usize> = (0..self.node(x)?.value.rank()).collect();
        self.reduce(x, Reduction::Mean, &axes, false)
    }

    /// Concatenation along `axis`; all other axes must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let idx: Vec<usize> = parts.iter().map(|&p| self.index(p)).collect::<Result<_>>()?;
        let first = self.nodes[*idx
            .first()
            .ok_or_else(|| Error::contract("concat of zero tensors"))?]
        .value
        .shape()
        .to_vec();
        if axis >= first.len() {
            return Err(Error::dim("concat", format!("axis {axis} for shape {first:?}")));
        }
        let mut total = 0;
        for &i in &idx {
            let s = self.nodes[i].value.shape();
            let compatible = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(ax, (a, b))| ax == axis || a == b);
            if !compatible {
                return Err(Error::dim("concat", format!("{first:?} vs {s:?}")));
            }
            total += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = total;
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &i in &idx {
                let v = &self.nodes[i].value;
                let span = v.shape()[axis] * inner;
                out.extend_from_slice(&v.data()[o * span..(o + 1) * span]);
            }
        }
        let value = Tensor::new(&shape, out)?;
        self.push(value, Op::Concat { parts: idx.clone(), axis }, &idx)
    }

    pub fn concat_last(&mut self, a: Var, b: Var) -> Result<Var> {
        let rank = self.node(a)?.value.rank();
        if rank == 0 {
            return Err(Error::dim("concat_last", "scalar input"));
        }
        self.concat(&[a, b], rank - 1)
    }

    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let xi = self.index(x)?;
        let value = self.nodes[xi].value.narrow(axis, start, len)?;
        self.push(value, Op::Narrow { x: xi, axis, start }, &[xi])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let xi = self.index(x)?;
        let value = self.nodes[xi].value.clone().reshape(shape)?;
        self.push(value, Op::Reshape { x: xi }, &[xi])
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let xi = self.index(x)?;
        let src = &self.nodes[xi].value;
        let mut check = perm.to_vec();
        check.sort_unstable();
        if check != (0..src.rank()).collect::<Vec<_>>() {
            return Err(Error::dim(
                "permute",
                format!("{perm:?} is not a permutation of axes of {:?}", src.shape()),
            ));
        }
        let (shape, map) = kernels::permute_map(src.shape(), perm);
        let data = map.iter().map(|&i| src.data()[i]).collect();
        let value = Tensor::new(&shape, data)?;
        self.push(value, Op::Permute { x: xi, map }, &[xi])
    }

    /// Swap the two trailing axes.
    pub fn transpose_last(&mut self, x: Var) -> Result<Var> {
        let r = self.node(x)?.value.rank();
        if r < 2 {
            return Err(Error::dim("transpose_last", "rank below 2"));
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 2, r - 1);
        self.permute(x, &perm)
    }

    /// Temporal cross-correlation: `x [K,τ,F_in] ⋆ kernel [w,F_in,F_out]`.
    pub fn conv1d(&mut self, x: Var, kernel: Var, padding: Padding) -> Result<Var> {
        let (xi, ki) = (self.index(x)?, self.index(kernel)?);
        let (sx, sk) = (self.nodes[xi].value.shape(), self.nodes[ki].value.shape());
        if sx.len() != 3 || sk.len() != 3 || sx[2] != sk[1] || sk[0] == 0 {
            return Err(Error::dim("conv1d", format!("input {sx:?}, kernel {sk:?}")));
        }
        let (batch, len, fin) = (sx[0], sx[1], sx[2]);
        let (width, fout) = (sk[0], sk[2]);
        let (out_len, pad_left) = match padding {
            Padding::Same => kernels::same_padding(len, width, 1),
            Padding::Valid => {
                if width > len {
                    return Err(Error::dim(
                        "conv1d",
                        format!("kernel width {width} exceeds sequence length {len}"),
                    ));
                }
                (len - width + 1, 0)
            }
        };
        let geom = ConvGeom {
            batch,
            len,
            fin,
            fout,
            width,
            pad_left,
            out_len,
        };
        let mut out = vec![0.0; batch * out_len * fout];
        kernels::conv1d_forward(
            self.nodes[xi].value.data(),
            self.nodes[ki].value.data(),
            &geom,
            &mut out,
        );
        let value = Tensor::new(&[batch, out_len, fout], out)?;
        self.push(
            value,
            Op::Conv1d {
                x: xi,
                kernel: ki,
                pad_left,
            },
            &[xi, ki],
        )
    }

    /// Temporal average pooling of `x [K,τ,F]`. Padded positions are excluded
    /// from each window's average.
    pub fn avg_pool1d(&mut self, x: Var, window: usize, stride: usize, padding: Padding) -> Result<Var> {
        let xi = self.index(x)?;
        let sx = self.nodes[xi].value.shape();
        if sx.len() != 3 || window == 0 || stride == 0 {
            return Err(Error::dim(
                "avg_pool1d",
                format!("input {sx:?}, window {window}, stride {stride}"),
            ));
        }
        let (batch, len, features) = (sx[0], sx[1], sx[2]);
        let (out_len, pad_left) = match padding {
            Padding::Same => kernels::same_padding(len, window, stride),
            Padding::Valid => {
                if window > len {
                    return Err(Error::dim(
                        "avg_pool1d",
                        format!("window {window} exceeds sequence length {len}"),
                    ));
                }
                ((len - window) / stride + 1, 0)
            }
        };
        let geom = PoolGeom {
            batch,
            len,
            features,
            window,
            stride,
            pad_left,
            out_len,
        };
        let mut out = vec![0.0; batch * out_len * features];
        kernels::avg_pool_forward(self.nodes[xi].value.data(), &geom, &mut out);
        let value = Tensor::new(&[batch, out_len, features], out)?;
        self.push(
            value,
            Op::AvgPool {
                x: xi,
                window,
                stride,
                pad_left,
            },
            &[xi],
        )
    }

    /// Dynamic pairwise attention logits:
    /// `out[b,j,k] = Σ_h w[h]·LeakyReLU(left[b,j,h] + right[b,k,h])`.
    ///
    /// `left`/`right` are the two halves of a learned map applied to the
    /// concatenated pair `[x_j ‖ x_k]`; splitting it avoids materializing the
    /// `[B,n,n,h]` pair tensor.
    pub fn pair_scores(&mut self, left: Var, right: Var, weight: Var, slope: f64) -> Result<Var> {
        let (li, ri, wi) = (self.index(left)?, self.index(right)?, self.index(weight)?);
        let (sl, sr, sw) = (
            self.nodes[li].value.shape(),
            self.nodes[ri].value.shape(),
            self.nodes[wi].value.shape(),
        );
        if sl.len() != 3 || sl != sr || sw != [sl[2]] {
            return Err(Error::dim(
                "pair_scores",
                format!("left {sl:?}, right {sr:?}, weight {sw:?}"),
            ));
        }
        let (batch, nodes) = (sl[0], sl[1]);
        if nodes == 0 {
            return Err(Error::dim("pair_scores", "graph has no nodes"));
        }
        let mut out = vec![0.0; batch * nodes * nodes];
        let h = sl[2];
        match self.take_pins(batch * nodes * nodes * h)? {
            Some(side) => {
                let (l, r, w) = (
                    self.nodes[li].value.data(),
                    self.nodes[ri].value.data(),
                    self.nodes[wi].value.data(),
                );
                for (o, acc) in out.iter_mut().enumerate() {
                    let (b, j, k) = (o / (nodes * nodes), (o / nodes) % nodes, o % nodes);
                    for c in 0..h {
                        let u = l[(b * nodes + j) * h + c] + r[(b * nodes + k) * h + c];
                        *acc += w[c] * if side[o * h + c] { u } else { slope * u };
                    }
                }
            }
            None => kernels::pair_scores_forward(
                self.nodes[li].value.data(),
                self.nodes[ri].value.data(),
                self.nodes[wi].value.data(),
                batch,
                nodes,
                slope,
                &mut out,
            ),
        }
        let value = Tensor::new(&[batch, nodes, nodes], out)?;
        self.push(
            value,
            Op::PairScores {
                left: li,
                right: ri,
                weight: wi,
                slope,
            },
            &[li, ri, wi],
        )
    }

    // ------------------------------------------------------------ backward

    /// Reverse sweep from a scalar `loss`. Consumes the tape: further ops or
    /// a second backward are contract errors.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::contract(
                "backward called twice on the same tape without a fresh forward pass",
            ));
        }
        if self.pins.is_some() {
            return Err(Error::contract("backward on a tape with pinned kinks"));
        }
        let li = self.index(loss)?;
        if self.nodes[li].value.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[li].value.shape()
            )));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[li] = Some(Tensor::ones(self.nodes[li].value.shape()));

        for i in (0..=li).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
        }

        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.param.map(|p| (p, i)))
            .collect();
        // Only leaves keep gradients; intermediates were released on the way.
        for (i, n) in self.nodes.iter().enumerate() {
            if !matches!(n.op, Op::Leaf) {
                grads[i] = None;
            }
        }
        Ok(Gradients {
            tape: self.id,
            grads,
            params,
        })
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let nodes = &self.nodes;
        let gd = g.data();
        let mut acc = |target: usize, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[target].needs_grad {
                return;
            }
            let slot = grads[target]
                .get_or_insert_with(|| Tensor::zeros(nodes[target].value.shape()));
            f(slot.data_mut());
        };
        match &nodes[i].op {
            Op::Leaf => {}
            &Op::MatMul {
                a,
                b,
                batch,
                a_batched,
                b_batched,
                m,
                k,
                n,
            } => {
                let (ad, bd) = (nodes[a].value.data(), nodes[b].value.data());
                acc(a, &mut |da| {
                    for t in 0..batch {
                        let ao = if a_batched { t * m * k } else { 0 };
                        let bo = if b_batched { t * k * n } else { 0 };
                        kernels::gemm_nt(
                            &gd[t * m * n..(t + 1) * m * n],
                            &bd[bo..bo + k * n],
                            &mut da[ao..ao + m * k],
                            m,
                            n,
                            k,
                        );
                    }
                });
                acc(b, &mut |db| {
                    for t in 0..batch {
                        let ao = if a_batched { t * m * k } else { 0 };
                        let bo = if b_batched { t * k * n } else { 0 };
                        kernels::gemm_tn(
                            &ad[ao..ao + m * k],
                            &gd[t * m * n..(t + 1) * m * n],
                            &mut db[bo..bo + k * n],
                            m,
                            k,
                            n,
                        );
                    }
                });
            }
            &Op::Binary { kind, a, b } => {
                let (ad, bd) = (nodes[a].value.data(), nodes[b].value.data());
                let nb = bd.len();
                acc(a, &mut |da| {
                    for (idx, d) in da.iter_mut().enumerate() {
                        let y = bd[idx % nb];
                        *d += match kind {
                            Binary::Add | Binary::Sub => gd[idx],
                            Binary::Mul => gd[idx] * y,
                            Binary::Div => gd[idx] / y,
                        };
                    }
                });
                acc(b, &mut |db| {
                    for (idx, &x) in ad.iter().enumerate() {
                        let j = idx % nb;
                        let y = bd[j];
                        db[j] += match kind {
                            Binary::Add => gd[idx],
                            Binary::Sub => -gd[idx],
                            Binary::Mul => gd[idx] * x,
                            Binary::Div => -gd[idx] * x / (y * y),
                        };
                    }
                });
            }
            &Op::Scale { x, factor } => acc(x, &mut |dx| {
                dx.iter_mut().zip(gd).for_each(|(d, g)| *d += g * factor)
            }),
            &Op::Offset { x } | &Op::Reshape { x } => {
                acc(x, &mut |dx| dx.iter_mut().zip(gd).for_each(|(d, g)| *d += g))
            }
            &Op::Unary { kind, x } => {
                let (xd, yd) = (nodes[x].value.data(), nodes[i].value.data());
                acc(x, &mut |dx| {
                    for (idx, d) in dx.iter_mut().enumerate() {
                        let (xv, yv) = (xd[idx], yd[idx]);
                        let local = match kind {
                            Unary::Act(Activation::LeakyRelu(s)) => {
                                if xv > 0.0 {
                                    1.0
                                } else {
                                    s
                                }
                            }
                            Unary::Act(Activation::Sigmoid) => yv * (1.0 - yv),
                            Unary::Act(Activation::Tanh) => 1.0 - yv * yv,
                            Unary::Exp => yv,
                            Unary::Ln => 1.0 / xv,
                            Unary::Sqrt => 0.5 / yv,
                            Unary::Square => 2.0 * xv,
                            Unary::Abs => xv.signum(),
                        };
                        *d += gd[idx] * local;
                    }
                });
            }
            &Op::ClampMin { x, floor } => {
                let xd = nodes[x].value.data();
                acc(x, &mut |dx| {
                    for (idx, d) in dx.iter_mut().enumerate() {
                        if xd[idx] > floor {
                            *d += gd[idx];
                        }
                    }
                });
            }
            &Op::Softmax { x } => {
                let y = &nodes[i].value;
                let n = *y.shape().last().unwrap();
                acc(x, &mut |dx| {
                    for ((yrow, grow), drow) in y
                        .data()
                        .chunks_exact(n)
                        .zip(gd.chunks_exact(n))
                        .zip(dx.chunks_exact_mut(n))
                    {
                        let dot: f64 = yrow.iter().zip(grow).map(|(a, b)| a * b).sum();
                        for ((d, &yv), &gv) in drow.iter_mut().zip(yrow).zip(grow) {
                            *d += yv * (gv - dot);
                        }
                    }
                });
            }
            Op::Reduce { x, map, scale } => acc(*x, &mut |dx| {
                for (d, &dst) in dx.iter_mut().zip(map) {
                    *d += gd[dst] * scale;
                }
            }),
            Op::Concat { parts, axis } => {
                let axis = *axis;
                let out_shape = nodes[i].value.shape();
                let mut start = 0;
                for &p in parts {
                    let len = nodes[p].value.shape()[axis];
                    acc(p, &mut |dp| {
                        kernels::narrow_copy_add(gd, out_shape, axis, start, len, dp)
                    });
                    start += len;
                }
            }
            &Op::Narrow { x, axis, start } => {
                let src_shape = nodes[x].value.shape();
                let len = nodes[i].value.shape()[axis];
                acc(x, &mut |dx| {
                    kernels::narrow_scatter_add(gd, src_shape, axis, start, len, dx)
                });
            }
            Op::Permute { x, map } => acc(*x, &mut |dx| {
                for (&src, &gv) in map.iter().zip(gd) {
                    dx[src] += gv;
                }
            }),
            &Op::Conv1d {
                x,
                kernel,
                pad_left,
            } => {
                let (sx, sk) = (nodes[x].value.shape(), nodes[kernel].value.shape());
                let geom = ConvGeom {
                    batch: sx[0],
                    len: sx[1],
                    fin: sx[2],
                    fout: sk[2],
                    width: sk[0],
                    pad_left,
                    out_len: nodes[i].value.shape()[1],
                };
                let (xd, kd) = (nodes[x].value.data(), nodes[kernel].value.data());
                acc(x, &mut |dx| {
                    kernels::conv1d_backward(xd, kd, gd, &geom, Some(dx), None)
                });
                acc(kernel, &mut |dk| {
                    kernels::conv1d_backward(xd, kd, gd, &geom, None, Some(dk))
                });
            }
            &Op::AvgPool {
                x,
                window,
                stride,
                pad_left,
            } => {
                let sx = nodes[x].value.shape();
                let geom = PoolGeom {
                    batch: sx[0],
                    len: sx[1],
                    features: sx[2],
                    window,
                    stride,
                    pad_left,
                    out_len: nodes[i].value.shape()[1],
                };
                acc(x, &mut |dx| kernels::avg_pool_backward(gd, &geom, dx));
            }
            &Op::PairScores {
                left,
                right,
                weight,
                slope,
            } => {
                let sl = nodes[left].value.shape();
                let (batch, n) = (sl[0], sl[1]);
                let (ld, rd, wd) = (
                    nodes[left].value.data(),
                    nodes[right].value.data(),
                    nodes[weight].value.data(),
                );
                let mut dl = vec![0.0; ld.len()];
                let mut dr = vec![0.0; rd.len()];
                let mut dw = vec![0.0; wd.len()];
                kernels::pair_scores_backward(
                    ld, rd, wd, gd, batch, n, slope, &mut dl, &mut dr, &mut dw,
                );
                acc(left, &mut |d| d.iter_mut().zip(&dl).for_each(|(a, b)| *a += b));
                acc(right, &mut |d| d.iter_mut().zip(&dr).for_each(|(a, b)| *a += b));
                acc(weight, &mut |d| d.iter_mut().zip(&dw).for_each(|(a, b)| *a += b));
            }
        }
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
