//! Differentiable operations on [`Node`]s.

use rayon::prelude::*;

use super::node::{BackwardOp, Node};
use crate::error::{Error, Result};
use crate::tensor::{gemm, Scalar, Tensor, Transpose};

// ---------------------------------------------------------------------------
// Convolution

/// Geometry of a square-kernel convolution over one batch.
#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    batch: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn col_rows(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn out_plane(&self) -> usize {
        self.ho * self.wo
    }

    /// A 1×1 stride-1 convolution reads its input directly as the column matrix.
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, col: &mut [T]) {
    let plane = g.out_plane();
    let (k, s, p) = (g.k, g.stride, g.pad as isize);
    for ci in 0..g.c_in {
        let src = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut col[row * plane..(row + 1) * plane];
                for oy in 0..g.ho {
                    let iy = (oy * s + ky) as isize - p;
                    let line = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(T::ZERO);
                        continue;
                    }
                    let src_line = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * s + kx) as isize - p;
                        *v = if ix < 0 || ix >= g.w as isize {
                            T::ZERO
                        } else {
                            src_line[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(col: &[T], g: &ConvGeom, x: &mut [T]) {
    let plane = g.out_plane();
    let (k, s, p) = (g.k, g.stride, g.pad as isize);
    for ci in 0..g.c_in {
        let dst = &mut x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &col[row * plane..(row + 1) * plane];
                for oy in 0..g.ho {
                    let iy = (oy * s + ky) as isize - p;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst_line = &mut dst[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, &v) in src[oy * g.wo..(oy + 1) * g.wo].iter().enumerate() {
                        let ix = (ox * s + kx) as isize - p;
                        if ix >= 0 && ix < g.w as isize {
                            dst_line[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

struct Conv2dBackward {
    geom: ConvGeom,
}

impl<T: Scalar> BackwardOp<T> for Conv2dBackward {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn backward(
        &self,
        _output: &Tensor<T>,
        parents: &[Node<T>],
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let g = self.geom;
        let x = parents[0].value();
        let w = parents[1].value();
        let in_len = g.c_in * g.h * g.w;
        let out_len = g.c_out * g.out_plane();
        let w_len = g.c_out * g.col_rows();
        let (need_x, need_w) = (needs[0], needs[1]);

        // Per-sample partial results, reduced in batch order afterwards so the
        // outcome does not depend on how rayon schedules the samples.
        let partials: Vec<(Option<Vec<T>>, Option<Vec<T>>)> = (0..g.batch)
            .into_par_iter()
            .map(|b| {
                let xb = &x.data()[b * in_len..(b + 1) * in_len];
                let gb = &grad.data()[b * out_len..(b + 1) * out_len];
                let mut col_buf = Vec::new();
                let col: &[T] = if g.is_pointwise() {
                    xb
                } else {
                    col_buf.resize(g.col_rows() * g.out_plane(), T::ZERO);
                    im2col(xb, &g, &mut col_buf);
                    &col_buf
                };
                let dw = need_w.then(|| {
                    let mut dw = vec![T::ZERO; w_len];
                    gemm(
                        Transpose::No,
                        Transpose::Yes,
                        g.c_out,
                        g.col_rows(),
                        g.out_plane(),
                        T::ONE,
                        gb,
                        col,
                        T::ZERO,
                        &mut dw,
                    );
                    dw
                });
                let dx = need_x.then(|| {
                    let mut dcol = vec![T::ZERO; g.col_rows() * g.out_plane()];
                    gemm(
                        Transpose::Yes,
                        Transpose::No,
                        g.col_rows(),
                        g.out_plane(),
                        g.c_out,
                        T::ONE,
                        w.data(),
                        gb,
                        T::ZERO,
                        &mut dcol,
                    );
                    if g.is_pointwise() {
                        dcol
                    } else {
                        let mut dx = vec![T::ZERO; in_len];
                        col2im(&dcol, &g, &mut dx);
                        dx
                    }
                });
                (dx, dw)
            })
            .collect();

        let mut dx_all = need_x.then(|| Vec::with_capacity(g.batch * in_len));
        let mut dw_all = need_w.then(|| vec![T::ZERO; w_len]);
        for (dx, dw) in partials {
            if let (Some(all), Some(dx)) = (dx_all.as_mut(), dx) {
                all.extend_from_slice(&dx);
            }
            if let (Some(all), Some(dw)) = (dw_all.as_mut(), dw) {
                for (a, v) in all.iter_mut().zip(dw) {
                    *a += v;
                }
            }
        }

        let db = needs[2].then(|| {
            let mut db = vec![T::ZERO; g.c_out];
            for b in 0..g.batch {
                for (o, acc) in db.iter_mut().enumerate() {
                    let start = b * out_len + o * g.out_plane();
                    *acc += grad.data()[start..start + g.out_plane()]
                        .iter()
                        .copied()
                        .sum();
                }
            }
            db
        });

        Ok(vec![
            dx_all.map(|d| Tensor::new(x.shape(), d)).transpose()?,
            dw_all.map(|d| Tensor::new(w.shape(), d)).transpose()?,
            db.map(|d| Tensor::new(parents[2].shape(), d)).transpose()?,
        ])
    }
}

/// Same-size 2-D cross-correlation with zero padding (stride 1).
///
/// `input` is `C_in×H×W` or `B×C_in×H×W`; `weight` is `C_out×C_in×k×k` with
/// odd `k`; `bias` has `C_out` entries. The output keeps the input's rank.
pub fn conv2d<T: Scalar>(
    input: &Node<T>,
    weight: &Node<T>,
    bias: &Node<T>,
    padding: usize,
) -> Result<Node<T>> {
    conv2d_strided(input, weight, bias, 1, padding)
}

/// [`conv2d`] with an explicit stride.
pub fn conv2d_strided<T: Scalar>(
    input: &Node<T>,
    weight: &Node<T>,
    bias: &Node<T>,
    stride: usize,
    padding: usize,
) -> Result<Node<T>> {
    let (batch, c_in, h, w) = input.value().image_dims()?;
    let &[c_out, wc_in, kh, kw] = weight.shape() else {
        return Err(Error::shape(
            "conv2d",
            format!("weight must be C_out×C_in×k×k, got {:?}", weight.shape()),
        ));
    };
    if kh != kw {
        return Err(Error::shape(
            "conv2d",
            format!("non-square kernel {kh}×{kw}"),
        ));
    }
    if kh % 2 == 0 {
        return Err(Error::invalid(format!("conv2d kernel size {kh} is even")));
    }
    if wc_in != c_in {
        return Err(Error::shape(
            "conv2d",
            format!("weight expects {wc_in} input channels, input has {c_in}"),
        ));
    }
    if bias.shape() != [c_out] {
        return Err(Error::shape(
            "conv2d",
            format!("bias shape {:?}, expected [{c_out}]", bias.shape()),
        ));
    }
    if stride == 0 {
        return Err(Error::invalid("conv2d stride must be positive"));
    }
    if h + 2 * padding < kh || w + 2 * padding < kh {
        return Err(Error::shape("conv2d", "kernel larger than padded input"));
    }
    let geom = ConvGeom {
        batch,
        c_in,
        h,
        w,
        c_out,
        k: kh,
        stride,
        pad: padding,
        ho: (h + 2 * padding - kh) / stride + 1,
        wo: (w + 2 * padding - kh) / stride + 1,
    };

    let in_len = c_in * h * w;
    let out_len = c_out * geom.out_plane();
    let mut out = vec![T::ZERO; batch * out_len];
    let x = input.value().data();
    let wt = weight.value().data();
    let bs = bias.value().data();
    out.par_chunks_mut(out_len).enumerate().for_each(|(b, ob)| {
        for (o, row) in ob.chunks_mut(geom.out_plane()).enumerate() {
            row.fill(bs[o]);
        }
        let xb = &x[b * in_len..(b + 1) * in_len];
        let mut col_buf = Vec::new();
        let col: &[T] = if geom.is_pointwise() {
            xb
        } else {
            col_buf.resize(geom.col_rows() * geom.out_plane(), T::ZERO);
            im2col(xb, &geom, &mut col_buf);
            &col_buf
        };
        gemm(
            Transpose::No,
            Transpose::No,
            c_out,
            geom.out_plane(),
            geom.col_rows(),
            T::ONE,
            wt,
            col,
            T::ONE,
            ob,
        );
    });

    let shape = if input.value().rank() == 3 {
        vec![c_out, geom.ho, geom.wo]
    } else {
        vec![batch, c_out, geom.ho, geom.wo]
    };
    Node::from_op(
        Tensor::new(shape, out)?,
        vec![input.clone(), weight.clone(), bias.clone()],
        Box::new(Conv2dBackward { geom }),
    )
}

// ---------------------------------------------------------------------------
// Elementwise activations

struct ReluBackward;

impl<T: Scalar> BackwardOp<T> for ReluBackward {
    fn name(&self) -> &'static str {
        "relu"
    }

    fn backward(
        &self,
        _output: &Tensor<T>,
        parents: &[Node<T>],
        grad: &Tensor<T>,
        _needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let x = parents[0].value();
        let data = x
            .data()
            .iter()
            .zip(grad.data())
            .map(|(&v, &g)| if v > T::ZERO { g } else { T::ZERO })
            .collect();
        Ok(vec![Some(Tensor::new(x.shape(), data)?)])
    }
}

/// Elementwise `max(x, 0)`; the subgradient at zero is zero.
pub fn relu<T: Scalar>(x: &Node<T>) -> Result<Node<T>> {
    let out = x.value().map(|v| if v > T::ZERO { v } else { T::ZERO });
    Node::from_op(out, vec![x.clone()], Box::new(ReluBackward))
}

struct TanhBackward;

impl<T: Scalar> BackwardOp<T> for TanhBackward {
    fn name(&self) -> &'static str {
        "tanh"
    }

    fn backward(
        &self,
        output: &Tensor<T>,
        _parents: &[Node<T>],
        grad: &Tensor<T>,
        _needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let data = output
            .data()
            .iter()
            .zip(grad.data())
            .map(|(&y, &g)| g * (T::ONE - y * y))
            .collect();
        Ok(vec![Some(Tensor::new(output.shape(), data)?)])
    }
}

pub fn tanh<T: Scalar>(x: &Node<T>) -> Result<Node<T>> {
    Node::from_op(
        x.value().map(T::tanh),
        vec![x.clone()],
        Box::new(TanhBackward),
    )
}

struct AbsBackward;

impl<T: Scalar> BackwardOp<T> for AbsBackward {
    fn name(&self) -> &'static str {
        "abs"
    }

    fn backward(
        &self,
        _output: &Tensor<T>,
        parents: &[Node<T>],
        grad: &Tensor<T>,
        _needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let x = parents[0].value();
        let data = x
            .data()
            .iter()
            .zip(grad.data())
            .map(|(&v, &g)| sign(v) * g)
            .collect();
        Ok(vec![Some(Tensor::new(x.shape(), data)?)])
    }
}

/// Sign with `sign(0) = 0`.
#[inline]
pub(crate) fn sign<T: Scalar>(v: T) -> T {
    if v > T::ZERO {
        T::ONE
    } else if v < T::ZERO {
        -T::ONE
    } else {
        T::ZERO
    }
}

/// Elementwise absolute value; the subgradient at zero is zero.
pub fn abs<T: Scalar>(x: &Node<T>) -> Result<Node<T>> {
    Node::from_op(
        x.value().map(T::abs),
        vec![x.clone()],
        Box::new(AbsBackward),
    )
}

struct ScaleBackward<T>(T);

impl<T: Scalar> BackwardOp<T> for ScaleBackward<T> {
    fn name(&self) -> &'static str {
        "scale"
    }

    fn backward(
        &self,
        _output: &Tensor<T>,
        _parents: &[Node<T>],
        grad: &Tensor<T>,
        _needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let c = self.0;
        Ok(vec![Some(grad.map(|g| g * c))])
    }
}

/// Multiply every element by a constant.
pub fn scale<T: Scalar>(x: &Node<T>, c: f64) -> Result<Node<T>> {
    let c = T::from_f64(c);
    Node::from_op(
        x.value().map(|v| v * c),
        vec![x.clone()],
        Box::new(ScaleBackward(c)),
    )
}

// ---------------------------------------------------------------------------
// Binary ops (identical shapes only)

struct AddSubBackward {
    negate_rhs: bool,
}

impl<T: Scalar> BackwardOp<T> for AddSubBackward {
    fn name(&self) -> &'static str {
        if self.negate_rhs {
            "sub"
        } else {
            "add"
        }
    }

    fn backward(
        &self,
        _output: &Tensor<T>,
        _parents: &[Node<T>],
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let lhs = needs[0].then(|| grad.clone());
        let rhs = needs[1].then(|| {
            if self.negate_rhs {
                grad.map(|g| -g)
            } else {
                grad.clone()
            }
        });
        Ok(vec![lhs, rhs])
    }
}

fn add_sub<T: Scalar>(a: &Node<T>, b: &Node<T>, negate_rhs: bool) -> Result<Node<T>> {
    let op = if negate_rhs { "sub" } else { "add" };
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    let data = a
        .value()
        .data()
        .iter()
        .zip(b.value().data())
        .map(|(&x, &y)| if negate_rhs { x - y } else { x + y })
        .collect();
    Node::from_op(
        Tensor::new(a.shape(), data)?,
        vec![a.clone(), b.clone()],
        Box::new(AddSubBackward { negate_rhs }),
    )
}

pub fn add<T: Scalar>(a: &Node<T>, b: &Node<T>) -> Result<Node<T>> {
    add_sub(a, b, false)
}

pub fn sub<T: Scalar>(a: &Node<T>, b: &Node<T>) -> Result<Node<T>> {
    add_sub(a, b, true)
}

// ---------------------------------------------------------------------------
// Reductions

struct SumBackward {
    factor: f64,
}

impl<T: Scalar> BackwardOp<T> for SumBackward {
    fn name(&self) -> &'static str {
        "sum"
    }

    fn backward(
        &self,
        _output: &Tensor<T>,
        parents: &[Node<T>],
        grad: &Tensor<T>,
        _needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let g = grad.item()? * T::from_f64(self.factor);
        Ok(vec![Some(Tensor::full(parents[0].shape(), g))])
    }
}

/// Sum of all elements as a rank-0 node.
pub fn sum<T: Scalar>(x: &Node<T>) -> Result<Node<T>> {
    Node::from_op(
        Tensor::scalar(x.value().sum()),
        vec![x.clone()],
        Box::new(SumBackward { factor: 1.0 }),
    )
}

/// Arithmetic mean of all elements as a rank-0 node.
pub fn mean<T: Scalar>(x: &Node<T>) -> Result<Node<T>> {
    let n = x.value().numel();
    if n == 0 {
        return Err(Error::invalid("mean of an empty tensor"));
    }
    let m = x.value().sum() / T::from_f64(n as f64);
    Node::from_op(
        Tensor::scalar(m),
        vec![x.clone()],
        Box::new(SumBackward {
            factor: 1.0 / n as f64,
        }),
    )
}

// ---------------------------------------------------------------------------
// Layout ops

struct ConcatBackward {
    channels: Vec<usize>,
}

impl<T: Scalar> BackwardOp<T> for ConcatBackward {
    fn name(&self) -> &'static str {
        "concat_channels"
    }

    fn backward(
        &self,
        _output: &Tensor<T>,
        parents: &[Node<T>],
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let (batch, total, h, w) = grad.image_dims()?;
        let plane = h * w;
        let mut offset = 0;
        let mut out = Vec::with_capacity(parents.len());
        for ((parent, &c), &need) in parents.iter().zip(&self.channels).zip(needs) {
            if need {
                let mut data = Vec::with_capacity(batch * c * plane);
                for b in 0..batch {
                    let start = (b * total + offset) * plane;
                    data.extend_from_slice(&grad.data()[start..start + c * plane]);
                }
                out.push(Some(Tensor::new(parent.shape(), data)?));
            } else {
                out.push(None);
            }
            offset += c;
        }
        Ok(out)
    }
}

/// Stack `C_i×H×W` (or `B×C_i×H×W`) parts along the channel axis, in order.
pub fn concat_channels<T: Scalar>(parts: &[Node<T>]) -> Result<Node<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::invalid("concat_channels needs at least one part"))?;
    let rank = first.value().rank();
    let (batch, _, h, w) = first.value().image_dims()?;
    let mut channels = Vec::with_capacity(parts.len());
    for p in parts {
        let (pb, pc, ph, pw) = p.value().image_dims()?;
        if p.value().rank() != rank || pb != batch || ph != h || pw != w {
            return Err(Error::shape(
                "concat_channels",
                format!("{:?} vs {:?}", p.shape(), first.shape()),
            ));
        }
        channels.push(pc);
    }
    let total: usize = channels.iter().sum();
    let plane = h * w;
    let mut data = Vec::with_capacity(batch * total * plane);
    for b in 0..batch {
        for (p, &c) in parts.iter().zip(&channels) {
            let start = b * c * plane;
            data.extend_from_slice(&p.value().data()[start..start + c * plane]);
        }
    }
    let shape = if rank == 3 {
        vec![total, h, w]
    } else {
        vec![batch, total, h, w]
    };
    Node::from_op(
        Tensor::new(shape, data)?,
        parts.to_vec(),
        Box::new(ConcatBackward { channels }),
    )
}

struct Upsample2Backward;

impl<T: Scalar> BackwardOp<T> for Upsample2Backward {
    fn name(&self) -> &'static str {
        "upsample_nearest2"
    }

    fn backward(
        &self,
        _output: &Tensor<T>,
        parents: &[Node<T>],
        grad: &Tensor<T>,
        _needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let (b, c, h, w) = parents[0].value().image_dims()?;
        let mut data = vec![T::ZERO; b * c * h * w];
        let g = grad.data();
        for bc in 0..b * c {
            for y in 0..2 * h {
                for x in 0..2 * w {
                    data[bc * h * w + (y / 2) * w + x / 2] += g[bc * 4 * h * w + y * 2 * w + x];
                }
            }
        }
        Ok(vec![Some(Tensor::new(parents[0].shape(), data)?)])
    }
}

/// Nearest-neighbour ×2 spatial upsampling.
pub fn upsample_nearest2<T: Scalar>(x: &Node<T>) -> Result<Node<T>> {
    let (b, c, h, w) = x.value().image_dims()?;
    let src = x.value().data();
    let mut data = Vec::with_capacity(b * c * 4 * h * w);
    for bc in 0..b * c {
        for y in 0..2 * h {
            let row = &src[bc * h * w + (y / 2) * w..bc * h * w + (y / 2 + 1) * w];
            for &v in row {
                data.push(v);
                data.push(v);
            }
        }
    }
    let shape = if x.value().rank() == 3 {
        vec![c, 2 * h, 2 * w]
    } else {
        vec![b, c, 2 * h, 2 * w]
    };
    Node::from_op(
        Tensor::new(shape, data)?,
        vec![x.clone()],
        Box::new(Upsample2Backward),
    )
}

/// Area-average downsampling by an integer factor (no gradient).
pub fn downsample_area<T: Scalar>(x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let (b, c, h, w) = x.image_dims()?;
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::shape(
            "downsample_area",
            format!("{h}×{w} not divisible by {factor}"),
        ));
    }
    let (hs, ws) = (h / factor, w / factor);
    let norm = T::from_f64(1.0 / (factor * factor) as f64);
    let src = x.data();
    let mut data = Vec::with_capacity(b * c * hs * ws);
    for bc in 0..b * c {
        for y in 0..hs {
            for xo in 0..ws {
                let mut acc = T::ZERO;
                for dy in 0..factor {
                    for dx in 0..factor {
                        acc += src[bc * h * w + (y * factor + dy) * w + xo * factor + dx];
                    }
                }
                data.push(acc * norm);
            }
        }
    }
    let shape = if x.rank() == 3 {
        vec![c, hs, ws]
    } else {
        vec![b, c, hs, ws]
    };
    Tensor::new(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(shape: &[usize], data: Vec<f64>) -> Node<f64> {
        Node::parameter(Tensor::new(shape, data).unwrap())
    }

    #[test]
    fn identity_kernel() {
        let img: Vec<f64> = (0..20).map(|i| i as f64 * 0.37 - 2.0).collect();
        let x = Node::constant(Tensor::new([1, 4, 5], img.clone()).unwrap());
        let w = Node::constant(Tensor::ones([1, 1, 1, 1]));
        let b = Node::constant(Tensor::zeros([1]));
        let y = conv2d(&x, &w, &b, 0).unwrap();
        assert_eq!(y.value().data(), img.as_slice());
    }

    #[test]
    fn ones_kernel_counts_neighbours() {
        let x = Node::constant(Tensor::<f64>::ones([1, 5, 5]));
        let w = Node::constant(Tensor::ones([1, 1, 3, 3]));
        let b = Node::constant(Tensor::zeros([1]));
        let y = conv2d(&x, &w, &b, 1).unwrap();
        let v = y.value().data();
        assert_eq!(y.shape(), &[1, 5, 5]);
        assert_eq!(v[2 * 5 + 2], 9.0);
        assert_eq!(v[0], 4.0);
        assert_eq!(v[4 * 5 + 4], 4.0);
        assert_eq!(v[2], 6.0);
        assert_eq!(v[2 * 5], 6.0);
    }

    /// Direct nested-loop convolution used as an independent reference.
    fn naive_conv(
        x: &[f64],
        (c, h, w): (usize, usize, usize),
        wt: &[f64],
        bias: &[f64],
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Vec<f64> {
        let o = bias.len();
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        let mut out = vec![0.0; o * ho * wo];
        for oc in 0..o {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = bias[oc];
                    for ic in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                    acc += wt[((oc * c + ic) * k + ky) * k + kx]
                                        * x[(ic * h + iy as usize) * w + ix as usize];
                                }
                            }
                        }
                    }
                    out[(oc * ho + oy) * wo + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn matches_naive_reference() {
        for &(k, stride) in &[(3usize, 1usize), (5, 2), (1, 1), (3, 2), (7, 1)] {
            let (c, h, w, o) = (3, 9, 8, 4);
            let pad = (k - 1) / 2;
            let x: Vec<f64> = (0..c * h * w)
                .map(|i| ((i * 37) % 17) as f64 / 17.0 - 0.4)
                .collect();
            let wt: Vec<f64> = (0..o * c * k * k)
                .map(|i| ((i * 11) % 13) as f64 / 13.0 - 0.5)
                .collect();
            let bias = vec![0.1, -0.2, 0.3, 0.0];
            let expect = naive_conv(&x, (c, h, w), &wt, &bias, k, stride, pad);
            let y = conv2d_strided(
                &Node::constant(Tensor::new([c, h, w], x).unwrap()),
                &Node::constant(Tensor::new([o, c, k, k], wt).unwrap()),
                &Node::constant(Tensor::new([o], bias).unwrap()),
                stride,
                pad,
            )
            .unwrap();
            for (a, b) in y.value().data().iter().zip(&expect) {
                assert!((a - b).abs() < 1e-12, "k={k} stride={stride}");
            }
        }
    }

    #[test]
    fn conv_rejects_bad_shapes() {
        let x = Node::constant(Tensor::<f32>::ones([2, 5, 5]));
        let b = Node::constant(Tensor::zeros([1]));
        let even = Node::constant(Tensor::ones([1, 2, 2, 2]));
        assert!(matches!(
            conv2d(&x, &even, &b, 1),
            Err(Error::InvalidArgument(_))
        ));
        let wrong_c = Node::constant(Tensor::ones([1, 3, 3, 3]));
        assert!(matches!(
            conv2d(&x, &wrong_c, &b, 1),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn relu_and_mask() {
        let x = param(&[3], vec![-1.0, 0.0, 2.0]);
        let y = relu(&x).unwrap();
        assert_eq!(y.value().data(), &[0.0, 0.0, 2.0]);
        sum(&y).unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn tanh_values() {
        let x = param(&[3], vec![0.0, 30.0, -30.0]);
        let y = tanh(&x).unwrap();
        assert_eq!(y.value().data()[0], 0.0);
        assert!(y.value().data()[1] > 0.999_999);
        assert!(y.value().data()[2] < -0.999_999);
    }

    #[test]
    fn abs_subgradient() {
        let x = param(&[3], vec![-2.0, 0.0, 3.0]);
        sum(&abs(&x).unwrap()).unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap().data(), &[-1.0, 0.0, 1.0]);
    }

    #[test]
    fn mean_and_l1_by_hand() {
        let x = param(&[3], vec![1.0, 2.0, 3.0]);
        assert_eq!(mean(&x).unwrap().value().item().unwrap(), 2.0);

        // |0.1-0.4| + |0.5-0.5| + |0.9-0.3| + |0.2-0.0| = 0.3 + 0 + 0.6 + 0.2 = 1.1
        let a = param(&[1, 2, 2], vec![0.1, 0.5, 0.9, 0.2]);
        let b = Node::constant(Tensor::new([1, 2, 2], vec![0.4, 0.5, 0.3, 0.0]).unwrap());
        let l1 = mean(&abs(&sub(&a, &b).unwrap()).unwrap()).unwrap();
        assert!((l1.value().item().unwrap() - 0.275).abs() < 1e-15);
    }

    #[test]
    fn binary_shape_mismatch() {
        let a = param(&[2], vec![0.0; 2]);
        let b = param(&[3], vec![0.0; 3]);
        assert!(add(&a, &b).is_err());
        assert!(sub(&a, &b).is_err());
    }

    #[test]
    fn concat_layout_and_backward() {
        let a = param(&[192, 2, 2], vec![0.5; 192 * 4]);
        let d = param(&[1, 2, 2], vec![0.25; 4]);
        let c = param(&[2, 2, 2], vec![-1.0; 8]);
        let y = concat_channels(&[a.clone(), d.clone(), c.clone()]).unwrap();
        assert_eq!(y.shape(), &[195, 2, 2]);
        sum(&y).unwrap().backward().unwrap();
        for p in [&a, &d, &c] {
            assert!(p.grad().unwrap().data().iter().all(|&g| g == 1.0));
        }

        let single = concat_channels(std::slice::from_ref(&d)).unwrap();
        assert_eq!(single.value(), d.value());

        let bad = param(&[1, 3, 2], vec![0.0; 6]);
        assert!(concat_channels(&[d, bad]).is_err());
    }

    #[test]
    fn concat_batched_interleaves_per_sample() {
        let a = Node::constant(Tensor::new([2, 1, 1, 1], vec![1.0f64, 2.0]).unwrap());
        let b = Node::constant(Tensor::new([2, 1, 1, 1], vec![10.0f64, 20.0]).unwrap());
        let y = concat_channels(&[a, b]).unwrap();
        assert_eq!(y.value().data(), &[1.0, 10.0, 2.0, 20.0]);
    }

    #[test]
    fn upsample_and_downsample() {
        let x = param(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let y = upsample_nearest2(&x).unwrap();
        assert_eq!(y.shape(), &[1, 4, 4]);
        assert_eq!(&y.value().data()[..4], &[1.0, 1.0, 2.0, 2.0]);
        let back = downsample_area(y.value(), 2).unwrap();
        assert_eq!(back.data(), x.value().data());
        sum(&y).unwrap().backward().unwrap();
        assert!(x.grad().unwrap().data().iter().all(|&g| g == 4.0));
    }

    #[test]
    fn non_finite_is_an_error() {
        let x = param(&[1], vec![1e308]);
        assert!(matches!(scale(&x, 1e10), Err(Error::NonFinite { .. })));
    }
}
