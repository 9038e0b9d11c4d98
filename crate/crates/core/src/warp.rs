//! Geometry of view synthesis: depth to disparity to flow, differentiable
//! backward bilinear warping, and the flow smoothness penalty.
//!
//! Flow fields are `2×H×W` (or `B×2×H×W`) tensors in pixels. Channel 0 is the
//! horizontal displacement along columns (the `u` direction) and channel 1
//! the vertical displacement along rows (`v`). Target pixel `(x, y)` samples
//! the source image at `(x + F₀, y + F₁)`.

use serde::{Deserialize, Serialize};

use crate::autodiff::ops::{self, sign};
use crate::autodiff::{BackwardOp, Node};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Largest admissible viewpoint offset along either grid axis.
pub const MAX_OFFSET: f64 = 3.0;

/// Flow magnitude bound at the 320-pixel-wide reference resolution.
pub const REFERENCE_MAX_DISP: f64 = 10.0;
pub const REFERENCE_WIDTH: usize = 320;

/// Default flow bound for an image `width` pixels wide.
pub fn default_max_disp(width: usize) -> f64 {
    REFERENCE_MAX_DISP * width as f64 / REFERENCE_WIDTH as f64
}

/// Position of a target view relative to the center view, in grid steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewpointOffset {
    pub du: f64,
    pub dv: f64,
}

impl ViewpointOffset {
    pub fn new(du: f64, dv: f64) -> Result<Self> {
        if !du.is_finite() || !dv.is_finite() || du.abs() > MAX_OFFSET || dv.abs() > MAX_OFFSET {
            return Err(Error::invalid(format!(
                "viewpoint offset ({du}, {dv}) outside [-{MAX_OFFSET}, {MAX_OFFSET}]²"
            )));
        }
        Ok(ViewpointOffset { du, dv })
    }

    pub fn center() -> Self {
        ViewpointOffset { du: 0.0, dv: 0.0 }
    }

    /// Chebyshev ring index, `max(|du|, |dv|)`.
    pub fn ring(&self) -> f64 {
        self.du.abs().max(self.dv.abs())
    }
}

/// Baseline per unit grid step and focal depth, in scene units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub baseline: f64,
    pub focal: f64,
}

impl CameraModel {
    pub fn new(baseline: f64, focal: f64) -> Result<Self> {
        if !(focal > 0.0) || !(baseline >= 0.0) || !baseline.is_finite() || !focal.is_finite() {
            return Err(Error::invalid(format!(
                "camera needs focal > 0 and baseline >= 0, got B = {baseline}, f = {focal}"
            )));
        }
        Ok(CameraModel { baseline, focal })
    }

    /// Disparity of a plane at depth `z`: `B (z - f) / z`.
    pub fn disparity(&self, z: f64) -> f64 {
        self.baseline * (z - self.focal) / z
    }
}

/// Per-pixel disparity `D = B (Z - f) / Z` from metric depth.
pub fn depth_to_disparity<T: Scalar>(depth: &Tensor<T>, cam: &CameraModel) -> Result<Tensor<T>> {
    let bad = depth.data().iter().filter(|&&z| !(z > T::ZERO)).count();
    if bad > 0 {
        return Err(Error::invalid(format!(
            "depth_to_disparity: {bad} pixel(s) with non-positive or non-finite depth"
        )));
    }
    Ok(depth.map(|z| T::from_f64(cam.disparity(z.to_f64()))))
}

/// One flow component for disparity `d` and grid offset `delta`.
#[inline]
pub fn flow_component<T: Scalar>(d: T, delta: f64) -> T {
    T::from_f64(d.to_f64() * delta)
}

/// Flow `(D Δu, D Δv)` from a `1×H×W` (or `H×W`) disparity map.
pub fn flow_from_disparity<T: Scalar>(
    disparity: &Tensor<T>,
    q: ViewpointOffset,
) -> Result<Tensor<T>> {
    let (h, w) = match *disparity.shape() {
        [1, h, w] | [h, w] => (h, w),
        _ => {
            return Err(Error::shape(
                "flow_from_disparity",
                format!("expected 1×H×W disparity, got {:?}", disparity.shape()),
            ))
        }
    };
    let mut data = Vec::with_capacity(2 * h * w);
    data.extend(disparity.data().iter().map(|&d| flow_component(d, q.du)));
    data.extend(disparity.data().iter().map(|&d| flow_component(d, q.dv)));
    Tensor::new([2, h, w], data)
}

/// Bilinear footprint of one sample position with edge clamping.
#[derive(Debug, Clone, Copy)]
struct Footprint<T> {
    /// Plane offsets of (x0,y0), (x1,y0), (x0,y1), (x1,y1).
    idx: [usize; 4],
    fx: T,
    fy: T,
}

#[inline]
fn footprint<T: Scalar>(w: usize, h: usize, px: T, py: T) -> Footprint<T> {
    let x0f = px.floor();
    let y0f = py.floor();
    let fx = px - x0f;
    let fy = py - y0f;
    let clamp = |v: f64, n: usize| -> usize { v.max(0.0).min((n - 1) as f64) as usize };
    let x0 = clamp(x0f.to_f64(), w);
    let x1 = clamp(x0f.to_f64() + 1.0, w);
    let y0 = clamp(y0f.to_f64(), h);
    let y1 = clamp(y0f.to_f64() + 1.0, h);
    Footprint {
        idx: [y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1],
        fx,
        fy,
    }
}

#[inline]
fn interpolate<T: Scalar>(plane: &[T], fp: &Footprint<T>) -> T {
    let [i00, i01, i10, i11] = fp.idx;
    let (fx, fy) = (fp.fx, fp.fy);
    let top = (T::ONE - fx) * plane[i00] + fx * plane[i01];
    let bottom = (T::ONE - fx) * plane[i10] + fx * plane[i11];
    (T::ONE - fy) * top + fy * bottom
}

/// Bilinear sample of a row-major `h×w` plane at `(px, py)`, clamping
/// out-of-range taps to the nearest edge pixel.
#[inline]
pub fn sample_bilinear<T: Scalar>(plane: &[T], w: usize, h: usize, px: T, py: T) -> T {
    interpolate(plane, &footprint(w, h, px, py))
}

/// The four plane offsets read by [`sample_bilinear`] at `(px, py)`.
pub fn bilinear_taps<T: Scalar>(w: usize, h: usize, px: T, py: T) -> [usize; 4] {
    footprint(w, h, px, py).idx
}

fn warp_dims<T: Scalar>(
    image: &Tensor<T>,
    flow: &Tensor<T>,
) -> Result<(usize, usize, usize, usize)> {
    let (b, c, h, w) = image.image_dims()?;
    let (fb, fc, fh, fw) = flow.image_dims()?;
    if image.rank() != flow.rank() || fb != b || fc != 2 || fh != h || fw != w {
        return Err(Error::shape(
            "bilinear_warp",
            format!("image {:?} with flow {:?}", image.shape(), flow.shape()),
        ));
    }
    Ok((b, c, h, w))
}

/// Warp every channel of a `B×C×H×W` image by a `B×2×H×W` flow (plain tensors).
pub fn warp_tensor<T: Scalar>(image: &Tensor<T>, flow: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, c, h, w) = warp_dims(image, flow)?;
    let plane = h * w;
    let img = image.data();
    let fl = flow.data();
    let mut out = vec![T::ZERO; image.numel()];
    for bi in 0..b {
        let fu = &fl[(bi * 2) * plane..(bi * 2 + 1) * plane];
        let fv = &fl[(bi * 2 + 1) * plane..(bi * 2 + 2) * plane];
        for y in 0..h {
            for x in 0..w {
                let s = y * w + x;
                let fp = footprint(
                    w,
                    h,
                    T::from_f64(x as f64) + fu[s],
                    T::from_f64(y as f64) + fv[s],
                );
                for ci in 0..c {
                    let base = (bi * c + ci) * plane;
                    out[base + s] = interpolate(&img[base..base + plane], &fp);
                }
            }
        }
    }
    Tensor::new(image.shape(), out)
}

struct WarpBackward;

impl<T: Scalar> BackwardOp<T> for WarpBackward {
    fn name(&self) -> &'static str {
        "bilinear_warp"
    }

    fn backward(
        &self,
        _output: &Tensor<T>,
        parents: &[Node<T>],
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let image = parents[0].value();
        let flow = parents[1].value();
        let (b, c, h, w) = warp_dims(image, flow)?;
        let plane = h * w;
        let img = image.data();
        let fl = flow.data();
        let g = grad.data();
        let mut d_img = needs[0].then(|| vec![T::ZERO; image.numel()]);
        let mut d_flow = needs[1].then(|| vec![T::ZERO; flow.numel()]);

        for bi in 0..b {
            let fbase = bi * 2 * plane;
            for y in 0..h {
                for x in 0..w {
                    let s = y * w + x;
                    let fp = footprint(
                        w,
                        h,
                        T::from_f64(x as f64) + fl[fbase + s],
                        T::from_f64(y as f64) + fl[fbase + plane + s],
                    );
                    let [i00, i01, i10, i11] = fp.idx;
                    let (fx, fy) = (fp.fx, fp.fy);
                    let (gx, gy) = (T::ONE - fx, T::ONE - fy);
                    let mut du = T::ZERO;
                    let mut dv = T::ZERO;
                    for ci in 0..c {
                        let base = (bi * c + ci) * plane;
                        let go = g[base + s];
                        if needs[1] {
                            let p = &img[base..base + plane];
                            let dx = gy * (p[i01] - p[i00]) + fy * (p[i11] - p[i10]);
                            let dy = (gx * p[i10] + fx * p[i11]) - (gx * p[i00] + fx * p[i01]);
                            du += go * dx;
                            dv += go * dy;
                        }
                        if let Some(d_img) = d_img.as_mut() {
                            d_img[base + i00] += go * gx * gy;
                            d_img[base + i01] += go * fx * gy;
                            d_img[base + i10] += go * gx * fy;
                            d_img[base + i11] += go * fx * fy;
                        }
                    }
                    if let Some(d_flow) = d_flow.as_mut() {
                        d_flow[fbase + s] = du;
                        d_flow[fbase + plane + s] = dv;
                    }
                }
            }
        }
        Ok(vec![
            d_img.map(|d| Tensor::new(image.shape(), d)).transpose()?,
            d_flow.map(|d| Tensor::new(flow.shape(), d)).transpose()?,
        ])
    }
}

/// Backward warp: `out(s) = image[s + flow(s)]` with bilinear interpolation
/// and edge clamping. Differentiable with respect to both inputs.
pub fn bilinear_warp<T: Scalar>(image: &Node<T>, flow: &Node<T>) -> Result<Node<T>> {
    let out = warp_tensor(image.value(), flow.value())?;
    Node::from_op(
        out,
        vec![image.clone(), flow.clone()],
        Box::new(WarpBackward),
    )
}

fn tv_terms(c_total: usize, h: usize, w: usize) -> usize {
    c_total * (h * w.saturating_sub(1) + h.saturating_sub(1) * w)
}

struct TvBackward {
    terms: usize,
}

impl<T: Scalar> BackwardOp<T> for TvBackward {
    fn name(&self) -> &'static str {
        "tv_loss"
    }

    fn backward(
        &self,
        _output: &Tensor<T>,
        parents: &[Node<T>],
        grad: &Tensor<T>,
        _needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let flow = parents[0].value();
        let (b, c, h, w) = flow.image_dims()?;
        let mut d = vec![T::ZERO; flow.numel()];
        if self.terms > 0 {
            let scale = grad.item()? / T::from_f64(self.terms as f64);
            let f = flow.data();
            for bc in 0..b * c {
                let base = bc * h * w;
                for y in 0..h {
                    for x in 0..w {
                        let i = base + y * w + x;
                        if x + 1 < w {
                            let s = sign(f[i + 1] - f[i]) * scale;
                            d[i + 1] += s;
                            d[i] -= s;
                        }
                        if y + 1 < h {
                            let s = sign(f[i + w] - f[i]) * scale;
                            d[i + w] += s;
                            d[i] -= s;
                        }
                    }
                }
            }
        }
        Ok(vec![Some(Tensor::new(flow.shape(), d)?)])
    }
}

/// Anisotropic total variation: the mean, over every forward difference
/// taken along x and along y in every channel, of its absolute value.
/// Differences are not taken past the last row or column.
pub fn tv_loss<T: Scalar>(flow: &Node<T>) -> Result<Node<T>> {
    let (b, c, h, w) = flow.value().image_dims()?;
    let terms = tv_terms(b * c, h, w);
    let f = flow.value().data();
    let mut acc = T::ZERO;
    for bc in 0..b * c {
        let base = bc * h * w;
        for y in 0..h {
            for x in 0..w {
                let i = base + y * w + x;
                if x + 1 < w {
                    acc += (f[i + 1] - f[i]).abs();
                }
                if y + 1 < h {
                    acc += (f[i + w] - f[i]).abs();
                }
            }
        }
    }
    let value = if terms == 0 {
        T::ZERO
    } else {
        acc / T::from_f64(terms as f64)
    };
    Node::from_op(
        Tensor::scalar(value),
        vec![flow.clone()],
        Box::new(TvBackward { terms }),
    )
}

/// Two constant feature maps carrying the target viewpoint, normalised to
/// `[-1, 1]`: channel 0 is `Δu / 3`, channel 1 is `Δv / 3`.
pub fn coord_maps<T: Scalar>(q: ViewpointOffset, h: usize, w: usize) -> Result<Tensor<T>> {
    let q = ViewpointOffset::new(q.du, q.dv)?;
    let mut data = vec![T::from_f64(q.du / MAX_OFFSET); h * w];
    data.extend(std::iter::repeat_n(T::from_f64(q.dv / MAX_OFFSET), h * w));
    Tensor::new([2, h, w], data)
}

/// Map a Tanh-bounded raw flow in `(-1, 1)` to pixels.
pub fn flow_scale<T: Scalar>(raw: &Node<T>, max_disp: f64) -> Result<Node<T>> {
    if !(max_disp > 0.0) || !max_disp.is_finite() {
        return Err(Error::invalid(format!(
            "max_disp must be positive, got {max_disp}"
        )));
    }
    ops::scale(raw, max_disp)
}
