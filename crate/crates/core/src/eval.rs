//! Image metrics, the 48-view evaluation protocol, error maps and flow
//! visualisation.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::formats;
use crate::lightfield::LightField;
use crate::model::{synthesize, ModelInput, ModelParams};
use crate::tensor::{Scalar, Tensor};
use crate::warp::{warp_tensor, ViewpointOffset};

/// Reported PSNR for identical images, and the ceiling for all others.
pub const PSNR_CAP: f64 = 99.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn same_shape<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, op: &'static str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    if a.numel() == 0 {
        return Err(Error::invalid(format!("{op} of empty images")));
    }
    Ok(())
}

/// Mean absolute difference over all pixels and channels.
pub fn mae<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    same_shape(a, b, "mae")?;
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x.to_f64() - y.to_f64()).abs())
        .sum();
    Ok(s / a.numel() as f64)
}

/// MAE restricted to pixels where `mask` (`1×H×W`) is zero.
pub fn masked_mae(a: &Tensor<f32>, b: &Tensor<f32>, mask: &Tensor<f32>) -> Result<Option<f64>> {
    same_shape(a, b, "masked_mae")?;
    let (_, c, h, w) = a.image_dims()?;
    if mask.numel() != h * w {
        return Err(Error::shape(
            "masked_mae",
            format!("mask {:?}", mask.shape()),
        ));
    }
    let plane = h * w;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (s, &m) in mask.data().iter().enumerate() {
        if m == 0.0 {
            for k in 0..c {
                sum += (a.data()[k * plane + s] as f64 - b.data()[k * plane + s] as f64).abs();
            }
            n += c;
        }
    }
    Ok((n > 0).then(|| sum / n as f64))
}

/// Peak signal-to-noise ratio with peak 1, capped at [`PSNR_CAP`].
pub fn psnr<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    same_shape(a, b, "psnr")?;
    let mse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x.to_f64() - y.to_f64();
            d * d
        })
        .sum::<f64>()
        / a.numel() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((-10.0 * mse.log10()).min(PSNR_CAP))
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-(i as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let total: f64 = g.iter().sum();
    g.iter().map(|v| v / total).collect()
}

/// Single-scale SSIM: 11×11 Gaussian window (σ = 1.5), K1 = 0.01,
/// K2 = 0.03, dynamic range 1, per channel over valid window positions,
/// averaged over channels.
pub fn ssim<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    same_shape(a, b, "ssim")?;
    let (n, c, h, w) = a.image_dims()?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "ssim needs images of at least {SSIM_WINDOW}×{SSIM_WINDOW}, got {h}×{w}"
        )));
    }
    let g = gaussian_window();
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let plane = h * w;
    let mut total = 0.0;
    for ch in 0..n * c {
        let pa: Vec<f64> = a.data()[ch * plane..(ch + 1) * plane]
            .iter()
            .map(|v| v.to_f64())
            .collect();
        let pb: Vec<f64> = b.data()[ch * plane..(ch + 1) * plane]
            .iter()
            .map(|v| v.to_f64())
            .collect();
        // Separable weighted moments: filter rows, then columns.
        let fields = [
            pa.clone(),
            pb.clone(),
            pa.iter().map(|v| v * v).collect::<Vec<_>>(),
            pb.iter().map(|v| v * v).collect(),
            pa.iter().zip(&pb).map(|(x, y)| x * y).collect(),
        ];
        let moments: Vec<Vec<f64>> = fields
            .iter()
            .map(|f| {
                let mut rows = vec![0.0; h * ow];
                for y in 0..h {
                    for x in 0..ow {
                        rows[y * ow + x] = (0..SSIM_WINDOW).map(|k| g[k] * f[y * w + x + k]).sum();
                    }
                }
                let mut out = vec![0.0; oh * ow];
                for y in 0..oh {
                    for x in 0..ow {
                        out[y * ow + x] = (0..SSIM_WINDOW)
                            .map(|k| g[k] * rows[(y + k) * ow + x])
                            .sum();
                    }
                }
                out
            })
            .collect();
        let mut sum = 0.0;
        for i in 0..oh * ow {
            let (ma, mb) = (moments[0][i], moments[1][i]);
            let saa = moments[2][i] - ma * ma;
            let sbb = moments[3][i] - mb * mb;
            let sab = moments[4][i] - ma * mb;
            sum += ((2.0 * ma * mb + c1) * (2.0 * sab + c2))
                / ((ma * ma + mb * mb + c1) * (saa + sbb + c2));
        }
        total += sum / (oh * ow) as f64;
    }
    Ok(total / (n * c) as f64)
}

/// Metrics of one synthesised view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ViewMetrics {
    pub row: usize,
    pub col: usize,
    pub du: f64,
    pub dv: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub mae: f64,
    /// MAE outside the disocclusion mask, when the field has one.
    pub mae_unoccluded: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub views: Vec<ViewMetrics>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub mean_mae: f64,
    pub mean_mae_unoccluded: Option<f64>,
}

impl MetricsRecord {
    pub fn from_views(views: Vec<ViewMetrics>) -> Self {
        let n = views.len().max(1) as f64;
        let masked: Vec<f64> = views.iter().filter_map(|v| v.mae_unoccluded).collect();
        MetricsRecord {
            mean_psnr: views.iter().map(|v| v.psnr).sum::<f64>() / n,
            mean_ssim: views.iter().map(|v| v.ssim).sum::<f64>() / n,
            mean_mae: views.iter().map(|v| v.mae).sum::<f64>() / n,
            mean_mae_unoccluded: (!masked.is_empty())
                .then(|| masked.iter().sum::<f64>() / masked.len() as f64),
            views,
        }
    }

    /// Per-view rows followed by one `mean` row.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
        let mut s = String::from("row,col,du,dv,psnr,ssim,mae,mae_unoccluded\n");
        for v in &self.views {
            s += &format!(
                "{},{},{},{},{:.4},{:.6},{:.6},{}\n",
                v.row,
                v.col,
                v.du,
                v.dv,
                v.psnr,
                v.ssim,
                v.mae,
                opt(v.mae_unoccluded)
            );
        }
        s += &format!(
            "mean,,,,{:.4},{:.6},{:.6},{}\n",
            self.mean_psnr,
            self.mean_ssim,
            self.mean_mae,
            opt(self.mean_mae_unoccluded)
        );
        s
    }

    /// Mean MAE of the views in each Chebyshev ring, innermost first.
    pub fn mae_by_ring(&self) -> Vec<(f64, f64)> {
        let mut rings: Vec<(f64, f64, usize)> = Vec::new();
        for v in &self.views {
            let r = v.du.abs().max(v.dv.abs());
            match rings.iter_mut().find(|e| e.0 == r) {
                Some(e) => {
                    e.1 += v.mae;
                    e.2 += 1;
                }
                None => rings.push((r, v.mae, 1)),
            }
        }
        rings.sort_by(|a, b| a.0.total_cmp(&b.0));
        rings
            .into_iter()
            .map(|(r, s, n)| (r, s / n as f64))
            .collect()
    }
}

impl fmt::Display for MetricsRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} views: PSNR {:.3} dB, SSIM {:.4}, MAE {:.5}",
            self.views.len(),
            self.mean_psnr,
            self.mean_ssim,
            self.mean_mae
        )?;
        if let Some(m) = self.mean_mae_unoccluded {
            write!(f, " (unoccluded {m:.5})")?;
        }
        Ok(())
    }
}

/// How novel views are produced during evaluation.
#[derive(Clone, Copy)]
pub enum Predictor<'a> {
    /// The network, run without building a graph.
    Model(&'a ModelParams<f32>),
    /// Every view is the unmodified center view.
    CopyCenter,
    /// Warp the center by the light field's ground-truth flow.
    GroundTruthFlow,
}

/// Views synthesised from one center image, batched through the network.
pub fn predict_views(
    params: &ModelParams<f32>,
    image: &Tensor<f32>,
    depth: &Tensor<f32>,
    offsets: &[ViewpointOffset],
) -> Result<(Vec<Tensor<f32>>, Vec<Tensor<f32>>)> {
    const CHUNK: usize = 8;
    let frozen = params.frozen();
    let mut views = Vec::with_capacity(offsets.len());
    let mut flows = Vec::with_capacity(offsets.len());
    for chunk in offsets.chunks(CHUNK) {
        let n = chunk.len();
        let input = ModelInput::new(
            Tensor::stack(&vec![image.clone(); n])?,
            Tensor::stack(&vec![depth.clone(); n])?,
            chunk.to_vec(),
        )?;
        let out = synthesize(&frozen, &input)?;
        for b in 0..n {
            views.push(out.image.value().batch_item(b)?);
            flows.push(out.flow.value().batch_item(b)?);
        }
    }
    Ok((views, flows))
}

/// Predicted views, in the order of `lf.targets()`.
pub fn predict_targets(predictor: Predictor<'_>, lf: &LightField) -> Result<Vec<Tensor<f32>>> {
    let targets = lf.targets();
    match predictor {
        Predictor::Model(params) => {
            let offsets: Vec<ViewpointOffset> = targets.iter().map(|t| t.2).collect();
            Ok(predict_views(params, lf.center_view(), lf.require_depth()?, &offsets)?.0)
        }
        Predictor::CopyCenter => Ok(vec![lf.center_view().clone(); targets.len()]),
        Predictor::GroundTruthFlow => {
            let flows = lf
                .flows
                .as_ref()
                .ok_or_else(|| Error::invalid("light field carries no ground-truth flow"))?;
            targets
                .iter()
                .map(|&(r, c, _)| warp_tensor(lf.center_view(), &flows[lf.index(r, c)]))
                .collect()
        }
    }
}

/// Per-pixel absolute error averaged over channels, `1×H×W`.
pub fn error_map(pred: &Tensor<f32>, truth: &Tensor<f32>) -> Result<Tensor<f32>> {
    same_shape(pred, truth, "error_map")?;
    let (_, c, h, w) = pred.image_dims()?;
    let plane = h * w;
    let data = (0..plane)
        .map(|s| {
            (0..c)
                .map(|k| (pred.data()[k * plane + s] - truth.data()[k * plane + s]).abs())
                .sum::<f32>()
                / c as f32
        })
        .collect();
    Tensor::new([1, h, w], data)
}

/// Error at which heatmaps saturate.
pub const HEATMAP_SCALE: f32 = 0.25;

/// Black-red-yellow-white ramp of an error map, saturating at
/// [`HEATMAP_SCALE`].
pub fn heatmap(err: &Tensor<f32>) -> Tensor<f32> {
    let plane = err.numel();
    let (h, w) = (err.shape()[err.rank() - 2], err.shape()[err.rank() - 1]);
    let mut data = vec![0f32; 3 * plane];
    for (s, &e) in err.data().iter().enumerate() {
        let t = (e / HEATMAP_SCALE).clamp(0.0, 1.0) * 3.0;
        data[s] = t.min(1.0);
        data[plane + s] = (t - 1.0).clamp(0.0, 1.0);
        data[2 * plane + s] = (t - 2.0).clamp(0.0, 1.0);
    }
    Tensor::new([3, h, w], data).expect("sizes agree")
}

/// Outcome of [`evaluate_grid`].
pub struct GridEvaluation {
    pub record: MetricsRecord,
    pub predictions: Vec<Tensor<f32>>,
    pub error_maps: Vec<Tensor<f32>>,
}

/// Synthesise every in-range novel view of `lf` from its center and score
/// it against the captured view.
pub fn evaluate_grid(predictor: Predictor<'_>, lf: &LightField) -> Result<GridEvaluation> {
    let targets = lf.targets();
    let predictions = predict_targets(predictor, lf)?;
    let mut views = Vec::with_capacity(targets.len());
    let mut error_maps = Vec::with_capacity(targets.len());
    for (&(r, c, q), pred) in targets.iter().zip(&predictions) {
        let truth = lf.view(r, c);
        let mae_unoccluded = match &lf.occlusion {
            Some(occ) => masked_mae(pred, truth, &occ[lf.index(r, c)])?,
            None => None,
        };
        views.push(ViewMetrics {
            row: r,
            col: c,
            du: q.du,
            dv: q.dv,
            psnr: psnr(pred, truth)?,
            ssim: ssim(pred, truth)?,
            mae: mae(pred, truth)?,
            mae_unoccluded,
        });
        error_maps.push(error_map(pred, truth)?);
    }
    Ok(GridEvaluation {
        record: MetricsRecord::from_views(views),
        predictions,
        error_maps,
    })
}

impl GridEvaluation {
    /// `metrics.csv`, `summary.txt` and one `err_{row}_{col}.png` per view.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv = dir.join("metrics.csv");
        fs::write(&csv, self.record.to_csv()).map_err(|e| Error::io(&csv, e))?;
        let summary = dir.join("summary.txt");
        let mut f = fs::File::create(&summary).map_err(|e| Error::io(&summary, e))?;
        writeln!(f, "{}", self.record).map_err(|e| Error::io(&summary, e))?;
        for (v, err) in self.record.views.iter().zip(&self.error_maps) {
            formats::save_png(
                &heatmap(err),
                dir.join(format!("err_{}_{}.png", v.row, v.col)),
            )?;
        }
        Ok(())
    }
}

/// Colour-wheel rendering of a `2×H×W` flow: hue is the direction
/// (`atan2(v, u)`, 0° along +x), saturation the magnitude over `max_mag`
/// (the field's own maximum when `None`), value 1. Zero flow is white.
pub fn flow_visualize(flow: &Tensor<f32>, max_mag: Option<f64>) -> Result<Tensor<f32>> {
    let (h, w) = match *flow.shape() {
        [2, h, w] => (h, w),
        _ => {
            return Err(Error::shape(
                "flow_visualize",
                format!("{:?}", flow.shape()),
            ))
        }
    };
    let plane = h * w;
    let d = flow.data();
    let mag = |s: usize| (d[s] as f64).hypot(d[plane + s] as f64);
    let max_mag = max_mag.unwrap_or_else(|| (0..plane).map(mag).fold(0.0, f64::max));
    let mut out = vec![0f32; 3 * plane];
    for s in 0..plane {
        let sat = if max_mag > 0.0 {
            (mag(s) / max_mag).min(1.0)
        } else {
            0.0
        };
        let hue = flow_hue(d[s] as f64, d[plane + s] as f64);
        let rgb = hsv_to_rgb(hue, sat, 1.0);
        for k in 0..3 {
            out[k * plane + s] = rgb[k] as f32;
        }
    }
    Tensor::new([3, h, w], out)
}

/// Wheel hue in degrees `[0, 360)` of a flow vector.
pub fn flow_hue(u: f64, v: f64) -> f64 {
    v.atan2(u).to_degrees().rem_euclid(360.0)
}

pub fn hsv_to_rgb(hue: f64, sat: f64, val: f64) -> [f64; 3] {
    let h = hue.rem_euclid(360.0) / 60.0;
    let c = val * sat;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = val - c;
    [r + m, g + m, b + m]
}

/// Hue of an RGB colour in degrees, for checking rendered wheels.
pub fn rgb_hue(rgb: [f64; 3]) -> Option<f64> {
    let [r, g, b] = rgb;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let c = max - min;
    if c == 0.0 {
        return None;
    }
    let h = if max == r {
        ((g - b) / c).rem_euclid(6.0)
    } else if max == g {
        (b - r) / c + 2.0
    } else {
        (r - g) / c + 4.0
    };
    Some(h * 60.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lightfield::{generate_scene, render_lightfield, SceneConfig, SyntheticScene};
    use crate::warp::CameraModel;

    #[test]
    fn psnr_cases() {
        let a = Tensor::<f64>::full([3, 4, 4], 0.3);
        assert_eq!(psnr(&a, &a).unwrap(), 99.0);
        let b = Tensor::<f64>::full([3, 4, 4], 0.4);
        let p = psnr(&a, &b).unwrap();
        assert!((p - 20.0).abs() < 1e-6, "{p}");
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        assert!(psnr(&a, &Tensor::zeros([3, 4, 5])).is_err());
    }

    #[test]
    fn mae_cases() {
        let a = Tensor::<f64>::new([1, 2, 2], vec![0.0, 0.5, 1.0, 0.25]).unwrap();
        let b = Tensor::<f64>::new([1, 2, 2], vec![0.5, 0.5, 0.0, 0.5]).unwrap();
        // |−0.5| + 0 + 1 + |−0.25| = 1.75 over 4 values.
        assert_eq!(mae(&a, &b).unwrap(), 0.4375);
        assert_eq!(mae(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn masked_mae_skips_occluded_pixels() {
        let a = Tensor::new([3, 1, 2], vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0]).unwrap();
        let b = Tensor::zeros([3, 1, 2]);
        let mask = Tensor::new([1, 1, 2], vec![0.0, 1.0]).unwrap();
        assert_eq!(masked_mae(&a, &b, &mask).unwrap(), Some(0.0));
        assert_eq!(masked_mae(&a, &b, &Tensor::ones([1, 1, 2])).unwrap(), None);
    }

    #[test]
    fn ssim_cases() {
        let a = Tensor::<f64>::from_fn([3, 16, 16], |i| ((i * 37) % 11) as f64 / 10.0);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        let bin = Tensor::<f64>::from_fn([1, 16, 16], |i| ((i / 3 + i / 16) % 2) as f64);
        let inv = bin.map(|v| 1.0 - v);
        assert!(ssim(&bin, &inv).unwrap() < 0.0);
        assert!(ssim(
            &Tensor::<f64>::zeros([1, 10, 20]),
            &Tensor::zeros([1, 10, 20])
        )
        .is_err());
    }

    #[test]
    fn ssim_ignores_consistent_channel_permutation() {
        let a = Tensor::<f64>::from_fn([3, 12, 12], |i| ((i * 7) % 13) as f64 / 13.0);
        let b = Tensor::<f64>::from_fn([3, 12, 12], |i| ((i * 5) % 17) as f64 / 17.0);
        let perm = |t: &Tensor<f64>| {
            let p = 144;
            let d = t.data();
            Tensor::new([3, 12, 12], [&d[2 * p..], &d[..p], &d[p..2 * p]].concat()).unwrap()
        };
        let x = ssim(&a, &b).unwrap();
        let y = ssim(&perm(&a), &perm(&b)).unwrap();
        assert!((x - y).abs() < 1e-12);
    }

    #[test]
    fn static_field_scores_perfectly() {
        let tex = Tensor::from_fn([3, 16, 16], |i| (i % 16) as f32 / 16.0);
        let cam = CameraModel::new(1.0, 2.0).unwrap();
        let scene = SyntheticScene::single_plane(tex, 2.0, cam).unwrap();
        let lf = render_lightfield(&scene, 8).unwrap();
        let ev = evaluate_grid(Predictor::CopyCenter, &lf).unwrap();
        assert_eq!(ev.record.views.len(), 48);
        assert!(ev
            .record
            .views
            .iter()
            .all(|v| v.mae == 0.0 && v.psnr == 99.0));
    }

    #[test]
    fn copy_center_error_grows_with_ring() {
        let scene = generate_scene(&SceneConfig::default(), 3).unwrap();
        let lf = render_lightfield(&scene, 8).unwrap();
        let ev = evaluate_grid(Predictor::CopyCenter, &lf).unwrap();
        let rings = ev.record.mae_by_ring();
        assert_eq!(rings.len(), 3);
        assert!(
            rings[0].1 < rings[1].1 && rings[1].1 < rings[2].1,
            "{rings:?}"
        );

        let oracle = evaluate_grid(Predictor::GroundTruthFlow, &lf).unwrap();
        assert_eq!(oracle.record.mean_mae_unoccluded, Some(0.0));
        let csv = oracle.record.to_csv();
        assert_eq!(csv.lines().count(), 1 + 48 + 1);
        assert!(csv.lines().last().unwrap().starts_with("mean,"));
    }

    #[test]
    fn missing_depth_explains_contract() {
        let scene = generate_scene(&SceneConfig::default(), 3).unwrap();
        let mut lf = render_lightfield(&scene, 8).unwrap();
        lf.depth = None;
        let p = crate::model::init_model(crate::model::Variant::Full, 0, 2.0).unwrap();
        let err = evaluate_grid(Predictor::Model(&p), &lf).err().unwrap();
        assert!(err.to_string().contains("depth.pfm"));
    }

    #[test]
    fn flow_wheel() {
        let zero = Tensor::zeros([2, 2, 2]);
        let img = flow_visualize(&zero, None).unwrap();
        assert!(img.data().iter().all(|&v| v == 1.0));

        let right = Tensor::new([2, 1, 1], vec![1.0, 0.0]).unwrap();
        let c = flow_visualize(&right, Some(1.0)).unwrap();
        assert_eq!(c.data(), [1.0, 0.0, 0.0]);
        assert_eq!(rgb_hue([1.0, 0.0, 0.0]), Some(0.0));

        for &(u, v) in &[(0.3f32, 0.8f32), (-1.0, 0.2), (0.5, -0.5)] {
            let f = Tensor::new([2, 1, 1], vec![u, v]).unwrap();
            let g = Tensor::new([2, 1, 1], vec![-u, -v]).unwrap();
            let rgb = |t: &Tensor<f32>| {
                let d = flow_visualize(t, Some(2.0)).unwrap();
                [d.data()[0] as f64, d.data()[1] as f64, d.data()[2] as f64]
            };
            let h1 = rgb_hue(rgb(&f)).unwrap();
            let h2 = rgb_hue(rgb(&g)).unwrap();
            let diff = (h2 - h1).rem_euclid(360.0);
            assert!((diff - 180.0).abs() < 1e-3, "{h1} {h2}");
        }
    }

    #[test]
    fn heatmap_ramp() {
        let e = Tensor::new([1, 1, 3], vec![0.0, HEATMAP_SCALE, 1.0]).unwrap();
        let m = heatmap(&e);
        assert_eq!(m.data(), [0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0]);
    }
}
