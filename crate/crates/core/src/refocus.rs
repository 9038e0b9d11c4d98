//! Shift-and-add refocusing and a sharpness measure.

use crate::error::{Error, Result};
use crate::lightfield::LightField;
use crate::tensor::Tensor;
use crate::warp::{flow_component, sample_bilinear};

#[derive(Debug, Clone, PartialEq)]
pub struct RefocusRequest {
    /// Disparity, in pixels per grid step, brought into focus.
    pub slope: f64,
    /// Grid positions `(row, col)` to integrate; `None` uses every view.
    pub aperture: Option<Vec<(usize, usize)>>,
}

impl RefocusRequest {
    pub fn new(slope: f64) -> Self {
        RefocusRequest {
            slope,
            aperture: None,
        }
    }
}

/// Mean over the aperture of each view sampled at `s - slope·(Δu, Δv)`.
///
/// A surface with disparity `d` appears in view `Δ` at `s - d·Δ` relative to
/// the center, so `slope = d` aligns every copy of it.
pub fn refocus(lf: &LightField, req: &RefocusRequest) -> Result<Tensor<f32>> {
    let aperture = match &req.aperture {
        Some(a) => a.clone(),
        None => (0..lf.grid)
            .flat_map(|r| (0..lf.grid).map(move |c| (r, c)))
            .collect(),
    };
    if aperture.is_empty() {
        return Err(Error::invalid("refocus aperture is empty"));
    }
    if let Some(&(r, c)) = aperture
        .iter()
        .find(|&&(r, c)| r >= lf.grid || c >= lf.grid)
    {
        return Err(Error::invalid(format!(
            "aperture view ({r}, {c}) outside the {0}×{0} grid",
            lf.grid
        )));
    }
    if !req.slope.is_finite() {
        return Err(Error::invalid("refocus slope must be finite"));
    }
    let (h, w) = (lf.height, lf.width);
    let plane = h * w;
    let slope = req.slope as f32;
    let mut acc = vec![0f64; 3 * plane];
    for &(r, c) in &aperture {
        let (du, dv) = lf.offset(r, c);
        let sx = flow_component(slope, -du);
        let sy = flow_component(slope, -dv);
        let view = lf.view(r, c).data();
        for k in 0..3 {
            let src = &view[k * plane..(k + 1) * plane];
            for y in 0..h {
                for x in 0..w {
                    acc[k * plane + y * w + x] +=
                        sample_bilinear(src, w, h, x as f32 + sx, y as f32 + sy) as f64;
                }
            }
        }
    }
    let n = aperture.len() as f64;
    Tensor::new([3, h, w], acc.into_iter().map(|v| (v / n) as f32).collect())
}

/// Variance of the 4-neighbour Laplacian of the channel-mean image over
/// interior pixels selected by `region` (all interior pixels when `None`).
pub fn laplacian_variance(img: &Tensor<f32>, region: Option<&[bool]>) -> Result<f64> {
    let (_, c, h, w) = img.image_dims()?;
    if h < 3 || w < 3 {
        return Err(Error::invalid("sharpness needs at least 3×3 pixels"));
    }
    let plane = h * w;
    if region.is_some_and(|r| r.len() != plane) {
        return Err(Error::shape(
            "laplacian_variance",
            "region size differs from image",
        ));
    }
    let gray: Vec<f64> = (0..plane)
        .map(|s| {
            (0..c)
                .map(|k| img.data()[k * plane + s] as f64)
                .sum::<f64>()
                / c as f64
        })
        .collect();
    let mut vals = Vec::new();
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let s = y * w + x;
            if region.is_some_and(|r| !r[s]) {
                continue;
            }
            vals.push(gray[s - 1] + gray[s + 1] + gray[s - w] + gray[s + w] - 4.0 * gray[s]);
        }
    }
    if vals.is_empty() {
        return Err(Error::invalid("sharpness region has no interior pixels"));
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    Ok(vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n)
}

/// Pixels of `mask` at least `margin` pixels (Chebyshev) from any pixel
/// outside it or from the image border.
pub fn erode(mask: &[bool], h: usize, w: usize, margin: usize) -> Vec<bool> {
    let m = margin as isize;
    (0..h * w)
        .map(|s| {
            let (y, x) = ((s / w) as isize, (s % w) as isize);
            (-m..=m).all(|dy| {
                (-m..=m).all(|dx| {
                    let (yy, xx) = (y + dy, x + dx);
                    yy >= 0
                        && xx >= 0
                        && yy < h as isize
                        && xx < w as isize
                        && mask[yy as usize * w + xx as usize]
                })
            })
        })
        .collect()
}
