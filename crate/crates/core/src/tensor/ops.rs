//! Forward kernels for every tensor operation, plus the adjoint kernels the
//! tape uses during the backward sweep.
//!
//! The public functions here are plain tensor-to-tensor maps; recording
//! them for differentiation is the job of [`Graph`](super::Graph).

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{arg_err, shape_err, Result};
use crate::Scalar;

/// Boundary handling along a convolved axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Zero padding so that `out = ceil(in / stride)`; odd totals put the
    /// extra sample on the right.
    Same,
    /// No padding: `out = floor((in - g) / stride) + 1`.
    Valid,
}

pub(crate) fn linear_index(shape: &[usize], index: &[usize]) -> usize {
    assert_eq!(shape.len(), index.len(), "index rank mismatch");
    index.iter().zip(shape).fold(0, |acc, (&i, &d)| {
        assert!(i < d, "index {i} out of bounds for extent {d}");
        acc * d + i
    })
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// `(outer, len, inner)` extents around `axis`.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(arg_err!("axis {axis} out of range for rank {}", shape.len()));
    }
    Ok((shape[..axis].iter().product(), shape[axis], shape[axis + 1..].iter().product()))
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn same_pad(len: usize, g: usize, stride: usize) -> (usize, usize) {
    let out = len.div_ceil(stride);
    let total = ((out - 1) * stride + g).saturating_sub(len);
    (out, total / 2)
}

// ---------------------------------------------------------------------------
// convolutions

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Conv1dGeom {
    pub l_in: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub g: usize,
    pub stride: usize,
    pub pad_left: usize,
    pub l_out: usize,
}

impl Conv1dGeom {
    pub fn new(input: &[usize], kernels: &[usize], stride: usize, pad: Padding) -> Result<Self> {
        if stride == 0 {
            return Err(arg_err!("conv1d stride must be positive"));
        }
        let [l_in, c_in] = *input else {
            return Err(shape_err!("conv1d input must be L×Cin, got {input:?}"));
        };
        let [c_out, g, kc] = *kernels else {
            return Err(shape_err!("conv1d kernels must be Cout×g×Cin, got {kernels:?}"));
        };
        if kc != c_in {
            return Err(shape_err!("conv1d kernel channels {kc} != input channels {c_in}"));
        }
        let (l_out, pad_left) = match pad {
            Padding::Same => same_pad(l_in, g, stride),
            Padding::Valid => {
                if g > l_in {
                    return Err(shape_err!("conv1d kernel width {g} exceeds input length {l_in}"));
                }
                ((l_in - g) / stride + 1, 0)
            }
        };
        Ok(Self { l_in, c_in, c_out, g, stride, pad_left, l_out })
    }

    /// Input row read by output step `t` at tap `j`, if inside the signal.
    #[inline]
    fn source(&self, t: usize, j: usize) -> Option<usize> {
        (t * self.stride + j).checked_sub(self.pad_left).filter(|&p| p < self.l_in)
    }
}

/// 1D convolution of an `L×Cin` signal with `Cout×g×Cin` kernels.
pub fn conv1d<T: Scalar>(input: &Tensor<T>, kernels: &Tensor<T>, stride: usize, pad: Padding) -> Result<Tensor<T>> {
    let geom = Conv1dGeom::new(input.shape(), kernels.shape(), stride, pad)?;
    Ok(conv1d_forward(&geom, input.data(), kernels.data()))
}

pub(crate) fn conv1d_forward<T: Scalar>(geom: &Conv1dGeom, x: &[T], k: &[T]) -> Tensor<T> {
    let &Conv1dGeom { c_in, c_out, g, l_out, .. } = geom;
    let mut out = vec![T::zero(); l_out * c_out];
    for t in 0..l_out {
        let row = &mut out[t * c_out..(t + 1) * c_out];
        for j in 0..g {
            let Some(p) = geom.source(t, j) else { continue };
            let xs = &x[p * c_in..(p + 1) * c_in];
            for (o, acc) in row.iter_mut().enumerate() {
                let off = (o * g + j) * c_in;
                *acc += dot(&k[off..off + c_in], xs);
            }
        }
    }
    Tensor::from_parts(vec![l_out, c_out], out)
}

pub(crate) fn conv1d_backward<T: Scalar>(geom: &Conv1dGeom, x: &[T], k: &[T], dy: &[T]) -> (Vec<T>, Vec<T>) {
    let &Conv1dGeom { c_in, c_out, g, l_out, .. } = geom;
    let mut dx = vec![T::zero(); x.len()];
    let mut dk = vec![T::zero(); k.len()];
    for t in 0..l_out {
        let dys = &dy[t * c_out..(t + 1) * c_out];
        for j in 0..g {
            let Some(p) = geom.source(t, j) else { continue };
            let xs = &x[p * c_in..(p + 1) * c_in];
            for (o, &d) in dys.iter().enumerate() {
                if d == T::zero() {
                    continue;
                }
                let off = (o * g + j) * c_in;
                axpy(d, &k[off..off + c_in], &mut dx[p * c_in..(p + 1) * c_in]);
                axpy(d, xs, &mut dk[off..off + c_in]);
            }
        }
    }
    (dx, dk)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Conv2dGeom {
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub gh: usize,
    pub gw: usize,
    pub stride_h: usize,
    pub stride_w: usize,
    pub pad_top: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl Conv2dGeom {
    pub fn new(input: &[usize], kernels: &[usize], stride_h: usize, stride_w: usize) -> Result<Self> {
        if stride_h == 0 || stride_w == 0 {
            return Err(arg_err!("conv2d strides must be positive"));
        }
        let [h, w, 1] = *input else {
            return Err(shape_err!("conv2d input must be H×W×1, got {input:?}"));
        };
        let [c_out, gh, gw] = *kernels else {
            return Err(shape_err!("conv2d kernels must be Cout×gh×gw, got {kernels:?}"));
        };
        if gw > w {
            return Err(shape_err!("conv2d kernel width {gw} exceeds input width {w}"));
        }
        if (w - gw) % stride_w != 0 {
            return Err(shape_err!("conv2d sweep ({w} - {gw}) is not divisible by stride {stride_w}"));
        }
        let (h_out, pad_top) = same_pad(h, gh, stride_h);
        Ok(Self { h, w, c_out, gh, gw, stride_h, stride_w, pad_top, h_out, w_out: (w - gw) / stride_w + 1 })
    }

    #[inline]
    fn source_row(&self, t: usize, i: usize) -> Option<usize> {
        (t * self.stride_h + i).checked_sub(self.pad_top).filter(|&p| p < self.h)
    }
}

/// 2D convolution of a single-channel `H×W×1` plane: same padding along
/// `H`, valid sweep along `W`. Output is `H'×W'×Cout`.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    stride_h: usize,
    stride_w: usize,
) -> Result<Tensor<T>> {
    let geom = Conv2dGeom::new(input.shape(), kernels.shape(), stride_h, stride_w)?;
    Ok(conv2d_forward(&geom, input.data(), kernels.data()))
}

pub(crate) fn conv2d_forward<T: Scalar>(geom: &Conv2dGeom, x: &[T], k: &[T]) -> Tensor<T> {
    let &Conv2dGeom { w, c_out, gh, gw, stride_w, h_out, w_out, .. } = geom;
    let mut out = vec![T::zero(); h_out * w_out * c_out];
    for t in 0..h_out {
        for i in 0..gh {
            let Some(p) = geom.source_row(t, i) else { continue };
            for q in 0..w_out {
                let start = p * w + q * stride_w;
                let window = &x[start..start + gw];
                let cell = &mut out[(t * w_out + q) * c_out..(t * w_out + q + 1) * c_out];
                for (o, acc) in cell.iter_mut().enumerate() {
                    let off = (o * gh + i) * gw;
                    *acc += dot(&k[off..off + gw], window);
                }
            }
        }
    }
    Tensor::from_parts(vec![h_out, w_out, c_out], out)
}

pub(crate) fn conv2d_backward<T: Scalar>(geom: &Conv2dGeom, x: &[T], k: &[T], dy: &[T]) -> (Vec<T>, Vec<T>) {
    let &Conv2dGeom { w, c_out, gh, gw, stride_w, h_out, w_out, .. } = geom;
    let mut dx = vec![T::zero(); x.len()];
    let mut dk = vec![T::zero(); k.len()];
    for t in 0..h_out {
        for i in 0..gh {
            let Some(p) = geom.source_row(t, i) else { continue };
            for q in 0..w_out {
                let start = p * w + q * stride_w;
                let cell = &dy[(t * w_out + q) * c_out..(t * w_out + q + 1) * c_out];
                for (o, &d) in cell.iter().enumerate() {
                    if d == T::zero() {
                        continue;
                    }
                    let off = (o * gh + i) * gw;
                    axpy(d, &k[off..off + gw], &mut dx[start..start + gw]);
                    axpy(d, &x[start..start + gw], &mut dk[off..off + gw]);
                }
            }
        }
    }
    (dx, dk)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Deconv1dGeom {
    pub l_in: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub g: usize,
    pub stride: usize,
    pub l_out: usize,
}

impl Deconv1dGeom {
    pub fn new(input: &[usize], kernels: &[usize], stride: usize) -> Result<Self> {
        if stride == 0 {
            return Err(arg_err!("deconv1d stride must be positive"));
        }
        let [l_in, c_in] = *input else {
            return Err(shape_err!("deconv1d input must be Lin×Cin, got {input:?}"));
        };
        let [c_out, g, kc] = *kernels else {
            return Err(shape_err!("deconv1d kernels must be Cout×g×Cin, got {kernels:?}"));
        };
        if kc != c_in {
            return Err(shape_err!("deconv1d kernel channels {kc} != input channels {c_in}"));
        }
        Ok(Self { l_in, c_in, c_out, g, stride, l_out: stride * (l_in - 1) + g })
    }
}

/// Transposed 1D convolution: each input step scatters a `g`-wide kernel
/// footprint into the output, `stride` samples apart. No cropping.
pub fn deconv1d<T: Scalar>(input: &Tensor<T>, kernels: &Tensor<T>, stride: usize) -> Result<Tensor<T>> {
    let geom = Deconv1dGeom::new(input.shape(), kernels.shape(), stride)?;
    Ok(deconv1d_forward(&geom, input.data(), kernels.data()))
}

pub(crate) fn deconv1d_forward<T: Scalar>(geom: &Deconv1dGeom, x: &[T], k: &[T]) -> Tensor<T> {
    let &Deconv1dGeom { l_in, c_in, c_out, g, stride, l_out } = geom;
    let mut out = vec![T::zero(); l_out * c_out];
    for t in 0..l_in {
        let xs = &x[t * c_in..(t + 1) * c_in];
        for j in 0..g {
            let row = &mut out[(t * stride + j) * c_out..(t * stride + j + 1) * c_out];
            for (o, acc) in row.iter_mut().enumerate() {
                let off = (o * g + j) * c_in;
                *acc += dot(&k[off..off + c_in], xs);
            }
        }
    }
    Tensor::from_parts(vec![l_out, c_out], out)
}

pub(crate) fn deconv1d_backward<T: Scalar>(geom: &Deconv1dGeom, x: &[T], k: &[T], dy: &[T]) -> (Vec<T>, Vec<T>) {
    let &Deconv1dGeom { l_in, c_in, c_out, g, stride, .. } = geom;
    let mut dx = vec![T::zero(); x.len()];
    let mut dk = vec![T::zero(); k.len()];
    for t in 0..l_in {
        for j in 0..g {
            let row = &dy[(t * stride + j) * c_out..(t * stride + j + 1) * c_out];
            for (o, &d) in row.iter().enumerate() {
                if d == T::zero() {
                    continue;
                }
                let off = (o * g + j) * c_in;
                axpy(d, &k[off..off + c_in], &mut dx[t * c_in..(t + 1) * c_in]);
                axpy(d, &x[t * c_in..(t + 1) * c_in], &mut dk[off..off + c_in]);
            }
        }
    }
    (dx, dk)
}

// ---------------------------------------------------------------------------
// layout

/// Reorders axes so that output axis `i` is input axis `order[i]`.
pub fn permute<T: Scalar>(t: &Tensor<T>, order: &[usize]) -> Result<Tensor<T>> {
    let rank = t.rank();
    let mut seen = vec![false; rank];
    if order.len() != rank || !order.iter().all(|&a| a < rank && !std::mem::replace(&mut seen[a], true)) {
        return Err(arg_err!("{order:?} is not a permutation of {rank} axes"));
    }
    let in_strides = strides(t.shape());
    let out_shape: Vec<usize> = order.iter().map(|&a| t.shape()[a]).collect();
    let gather: Vec<usize> = order.iter().map(|&a| in_strides[a]).collect();
    let mut out = Vec::with_capacity(t.numel());
    let mut idx = vec![0usize; rank];
    let data = t.data();
    for _ in 0..t.numel() {
        out.push(data[idx.iter().zip(&gather).map(|(i, s)| i * s).sum::<usize>()]);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    Ok(Tensor::from_parts(out_shape, out))
}

pub(crate) fn inverse_permutation(order: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; order.len()];
    for (i, &a) in order.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

/// Merges every axis except the trailing `keep_last` into one leading axis.
pub fn flatten_leading_shape(shape: &[usize], keep_last: usize) -> Result<Vec<usize>> {
    if keep_last >= shape.len() {
        return Err(arg_err!("cannot keep {keep_last} trailing axes of a rank-{} tensor", shape.len()));
    }
    let split = shape.len() - keep_last;
    let mut out = vec![shape[..split].iter().product()];
    out.extend_from_slice(&shape[split..]);
    Ok(out)
}

pub fn flatten_leading<T: Scalar>(t: &Tensor<T>, keep_last: usize) -> Result<Tensor<T>> {
    t.reshape(flatten_leading_shape(t.shape(), keep_last)?)
}

// ---------------------------------------------------------------------------
// reductions

/// Maps every element to its output slot when `axes` are reduced.
/// Returns `(slot per element, output extents with reduced axes = 1)`.
pub(crate) fn reduction_slots(shape: &[usize], axes: &[usize]) -> Result<(Vec<usize>, Vec<usize>)> {
    let rank = shape.len();
    let mut reduced = vec![false; rank];
    for &a in axes {
        if a >= rank {
            return Err(arg_err!("axis {a} out of range for rank {rank}"));
        }
        reduced[a] = true;
    }
    let kept: Vec<usize> = shape.iter().zip(&reduced).map(|(&d, &r)| if r { 1 } else { d }).collect();
    let out_strides = strides(&kept);
    let numel: usize = shape.iter().product();
    let mut slots = Vec::with_capacity(numel);
    let mut idx = vec![0usize; rank];
    for _ in 0..numel {
        slots.push((0..rank).filter(|&a| !reduced[a]).map(|a| idx[a] * out_strides[a]).sum());
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            if idx[ax] < shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    Ok((slots, kept))
}

pub(crate) fn reduced_shape(kept: &[usize], axes: &[usize], keep_dims: bool) -> Vec<usize> {
    if keep_dims {
        return kept.to_vec();
    }
    let out: Vec<usize> = kept.iter().enumerate().filter(|(a, _)| !axes.contains(a)).map(|(_, &d)| d).collect();
    if out.is_empty() {
        vec![1]
    } else {
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Max,
}

/// Sums or maximises over `axes`; reduced extents are dropped unless
/// `keep_dims`, and a full reduction yields shape `[1]`.
pub fn reduce<T: Scalar>(op: ReduceOp, t: &Tensor<T>, axes: &[usize], keep_dims: bool) -> Result<Tensor<T>> {
    let (slots, kept) = reduction_slots(t.shape(), axes)?;
    let n_out: usize = kept.iter().product();
    let init = match op {
        ReduceOp::Sum => T::zero(),
        ReduceOp::Max => T::neg_infinity(),
    };
    let mut out = vec![init; n_out];
    for (&s, &v) in slots.iter().zip(t.data()) {
        out[s] = match op {
            ReduceOp::Sum => out[s] + v,
            ReduceOp::Max => out[s].max(v),
        };
    }
    Ok(Tensor::from_parts(reduced_shape(&kept, axes, keep_dims), out))
}

/// Softmax normalised jointly over `axes`, with max subtraction.
pub fn softmax<T: Scalar>(t: &Tensor<T>, axes: &[usize]) -> Result<Tensor<T>> {
    let (slots, kept) = reduction_slots(t.shape(), axes)?;
    let n_out: usize = kept.iter().product();
    let mut max = vec![T::neg_infinity(); n_out];
    for (&s, &v) in slots.iter().zip(t.data()) {
        max[s] = max[s].max(v);
    }
    let mut out: Vec<T> = slots.iter().zip(t.data()).map(|(&s, &v)| (v - max[s]).exp()).collect();
    let mut denom = vec![T::zero(); n_out];
    for (&s, &e) in slots.iter().zip(&out) {
        denom[s] += e;
    }
    for (e, &s) in out.iter_mut().zip(&slots) {
        *e /= denom[s];
    }
    Ok(Tensor::from_parts(t.shape().to_vec(), out))
}

pub(crate) fn softmax_backward<T: Scalar>(y: &Tensor<T>, dy: &[T], axes: &[usize]) -> Vec<T> {
    let (slots, kept) = reduction_slots(y.shape(), axes).expect("axes validated on forward");
    let mut inner = vec![T::zero(); kept.iter().product()];
    for ((&s, &yi), &di) in slots.iter().zip(y.data()).zip(dy) {
        inner[s] += yi * di;
    }
    slots.iter().zip(y.data()).zip(dy).map(|((&s, &yi), &di)| yi * (di - inner[s])).collect()
}

// ---------------------------------------------------------------------------
// capsule vector maps

/// Squash every vector laid along `axis`: `v ↦ ‖v‖²/(1+‖v‖²) · v/‖v‖`,
/// mapping the zero vector to zero.
pub fn squash<T: Scalar>(t: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    let (outer, len, inner) = split_axis(t.shape(), axis)?;
    let x = t.data();
    let mut out = vec![T::zero(); x.len()];
    for o in 0..outer {
        for n in 0..inner {
            let base = o * len * inner + n;
            let r2: T = (0..len).map(|i| x[base + i * inner].powi(2)).sum();
            let scale = r2.sqrt() / (T::one() + r2);
            for i in 0..len {
                out[base + i * inner] = scale * x[base + i * inner];
            }
        }
    }
    Ok(Tensor::from_parts(t.shape().to_vec(), out))
}

pub(crate) fn squash_backward<T: Scalar>(x: &Tensor<T>, dy: &[T], axis: usize) -> Vec<T> {
    let (outer, len, inner) = split_axis(x.shape(), axis).expect("axis validated on forward");
    let xs = x.data();
    let mut dx = vec![T::zero(); xs.len()];
    let one = T::one();
    for o in 0..outer {
        for n in 0..inner {
            let base = o * len * inner + n;
            let r2: T = (0..len).map(|i| xs[base + i * inner].powi(2)).sum();
            if r2 == T::zero() {
                continue;
            }
            let r = r2.sqrt();
            let f = r / (one + r2);
            // f'(r) / r with f(r) = r / (1 + r²)
            let fp_over_r = (one - r2) / ((one + r2).powi(2) * r);
            let proj: T = (0..len).map(|i| xs[base + i * inner] * dy[base + i * inner]).sum();
            for i in 0..len {
                let k = base + i * inner;
                dx[k] = f * dy[k] + fp_over_r * proj * xs[k];
            }
        }
    }
    dx
}

/// Euclidean norm along `axis`; the axis is removed (rank-1 input → `[1]`).
pub fn norm<T: Scalar>(t: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    let (outer, len, inner) = split_axis(t.shape(), axis)?;
    let x = t.data();
    let mut out = vec![T::zero(); outer * inner];
    for o in 0..outer {
        for n in 0..inner {
            let base = o * len * inner + n;
            out[o * inner + n] = (0..len).map(|i| x[base + i * inner].powi(2)).sum::<T>().sqrt();
        }
    }
    let mut shape = t.shape().to_vec();
    shape.remove(axis);
    if shape.is_empty() {
        shape.push(1);
    }
    Ok(Tensor::from_parts(shape, out))
}

pub(crate) fn norm_backward<T: Scalar>(x: &Tensor<T>, y: &[T], dy: &[T], axis: usize) -> Vec<T> {
    let (outer, len, inner) = split_axis(x.shape(), axis).expect("axis validated on forward");
    let xs = x.data();
    let mut dx = vec![T::zero(); xs.len()];
    for o in 0..outer {
        for n in 0..inner {
            let r = y[o * inner + n];
            if r == T::zero() {
                continue;
            }
            let g = dy[o * inner + n] / r;
            let base = o * len * inner + n;
            for i in 0..len {
                dx[base + i * inner] = g * xs[base + i * inner];
            }
        }
    }
    dx
}

// ---------------------------------------------------------------------------
// dense maps

/// Per-capsule vote transform: `u: N×a_in`, `w: J×N×a_out×a_in` →
/// `J×N×a_out` with `out[j,i] = w[j,i] · u[i]`.
pub fn capsule_transform<T: Scalar>(u: &Tensor<T>, w: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, a_in] = *u.shape() else {
        return Err(shape_err!("capsule input must be N×a, got {:?}", u.shape()));
    };
    let [j, wn, a_out, wa] = *w.shape() else {
        return Err(shape_err!("capsule weights must be J×N×a_out×a_in, got {:?}", w.shape()));
    };
    if wn != n || wa != a_in {
        return Err(shape_err!("capsule weights {:?} do not match input {:?}", w.shape(), u.shape()));
    }
    let (ud, wd) = (u.data(), w.data());
    let mut out = Vec::with_capacity(j * n * a_out);
    for jj in 0..j {
        for i in 0..n {
            let ui = &ud[i * a_in..(i + 1) * a_in];
            for q in 0..a_out {
                let off = ((jj * n + i) * a_out + q) * a_in;
                out.push(dot(&wd[off..off + a_in], ui));
            }
        }
    }
    Ok(Tensor::from_parts(vec![j, n, a_out], out))
}

pub(crate) fn capsule_transform_backward<T: Scalar>(u: &Tensor<T>, w: &Tensor<T>, dy: &[T]) -> (Vec<T>, Vec<T>) {
    let (n, a_in) = (u.shape()[0], u.shape()[1]);
    let (j, a_out) = (w.shape()[0], w.shape()[2]);
    let (ud, wd) = (u.data(), w.data());
    let mut du = vec![T::zero(); ud.len()];
    let mut dw = vec![T::zero(); wd.len()];
    for jj in 0..j {
        for i in 0..n {
            for q in 0..a_out {
                let d = dy[(jj * n + i) * a_out + q];
                let off = ((jj * n + i) * a_out + q) * a_in;
                axpy(d, &wd[off..off + a_in], &mut du[i * a_in..(i + 1) * a_in]);
                axpy(d, &ud[i * a_in..(i + 1) * a_in], &mut dw[off..off + a_in]);
            }
        }
    }
    (du, dw)
}

/// Fully connected layer `w·x + b` on the flattened input.
pub fn linear<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let [out_dim, in_dim] = *w.shape() else {
        return Err(shape_err!("linear weights must be out×in, got {:?}", w.shape()));
    };
    if x.numel() != in_dim || b.shape() != [out_dim] {
        return Err(shape_err!(
            "linear layer {:?} cannot map input {:?} with bias {:?}",
            w.shape(),
            x.shape(),
            b.shape()
        ));
    }
    let (xd, wd) = (x.data(), w.data());
    let out = (0..out_dim).map(|o| dot(&wd[o * in_dim..(o + 1) * in_dim], xd) + b.data()[o]).collect();
    Ok(Tensor::from_parts(vec![out_dim], out))
}

// ---------------------------------------------------------------------------
// routing contractions

fn routing_dims(s: &[usize], v: &[usize]) -> Result<(usize, usize, usize, usize)> {
    let [p, r, n, d] = *v else {
        return Err(shape_err!("votes must be P×R×S×D, got {v:?}"));
    };
    if s != [p, r, n] && s != [p, r, d] {
        return Err(shape_err!("routing operand {s:?} does not fit votes {v:?}"));
    }
    Ok((p, r, n, d))
}

/// `s[p,r,:] = Σ_s k[p,r,s] · v[p,r,s,:]`.
pub fn routing_weighted_sum<T: Scalar>(k: &Tensor<T>, v: &Tensor<T>) -> Result<Tensor<T>> {
    let (p, r, n, d) = routing_dims(k.shape(), v.shape())?;
    if k.shape()[2] != n {
        return Err(shape_err!("couplings {:?} do not fit votes {:?}", k.shape(), v.shape()));
    }
    let (kd, vd) = (k.data(), v.data());
    let mut out = vec![T::zero(); p * r * d];
    for pr in 0..p * r {
        let acc = &mut out[pr * d..(pr + 1) * d];
        for s in 0..n {
            let off = (pr * n + s) * d;
            axpy(kd[pr * n + s], &vd[off..off + d], acc);
        }
    }
    Ok(Tensor::from_parts(vec![p, r, d], out))
}

pub(crate) fn routing_weighted_sum_backward<T: Scalar>(k: &Tensor<T>, v: &Tensor<T>, dy: &[T]) -> (Vec<T>, Vec<T>) {
    let [p, r, n, d] = *v.shape() else { unreachable!() };
    let (kd, vd) = (k.data(), v.data());
    let mut dk = vec![T::zero(); kd.len()];
    let mut dv = vec![T::zero(); vd.len()];
    for pr in 0..p * r {
        let g = &dy[pr * d..(pr + 1) * d];
        for s in 0..n {
            let off = (pr * n + s) * d;
            dk[pr * n + s] = dot(g, &vd[off..off + d]);
            axpy(kd[pr * n + s], g, &mut dv[off..off + d]);
        }
    }
    (dk, dv)
}

/// Agreement `a[p,r,s] = ⟨s[p,r,:], v[p,r,s,:]⟩`.
pub fn routing_agreement<T: Scalar>(s: &Tensor<T>, v: &Tensor<T>) -> Result<Tensor<T>> {
    let (p, r, n, d) = routing_dims(s.shape(), v.shape())?;
    if s.shape()[2] != d {
        return Err(shape_err!("parent capsules {:?} do not fit votes {:?}", s.shape(), v.shape()));
    }
    let (sd, vd) = (s.data(), v.data());
    let mut out = Vec::with_capacity(p * r * n);
    for pr in 0..p * r {
        let parent = &sd[pr * d..(pr + 1) * d];
        for j in 0..n {
            let off = (pr * n + j) * d;
            out.push(dot(parent, &vd[off..off + d]));
        }
    }
    Ok(Tensor::from_parts(vec![p, r, n], out))
}

pub(crate) fn routing_agreement_backward<T: Scalar>(s: &Tensor<T>, v: &Tensor<T>, dy: &[T]) -> (Vec<T>, Vec<T>) {
    let [p, r, n, d] = *v.shape() else { unreachable!() };
    let (sd, vd) = (s.data(), v.data());
    let mut ds = vec![T::zero(); sd.len()];
    let mut dv = vec![T::zero(); vd.len()];
    for pr in 0..p * r {
        for j in 0..n {
            let g = dy[pr * n + j];
            let off = (pr * n + j) * d;
            axpy(g, &vd[off..off + d], &mut ds[pr * d..(pr + 1) * d]);
            axpy(g, &sd[pr * d..(pr + 1) * d], &mut dv[off..off + d]);
        }
    }
    (ds, dv)
}
