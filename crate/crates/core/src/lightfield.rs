//! Synthetic layered light fields with analytic ground truth, light-field
//! directories on disk, and training-pair sampling.
//!
//! A scene is a stack of fronto-parallel textured layers, far to near. The
//! view at grid offset `(Δu, Δv)` sees layer `l` at `s + d_l (Δu, Δv)` where
//! `d_l = B (Z_l - f) / Z_l`, so the backward flow from any view to the
//! center is exactly `d_l (Δu, Δv)` wherever layer `l` is visible in both.

use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats;
use crate::tensor::Tensor;
use crate::warp::{
    bilinear_taps, default_max_disp, flow_component, sample_bilinear, CameraModel, ViewpointOffset,
    MAX_OFFSET,
};

/// Angular resolution of a Lytro-style lenslet grid.
pub const DEFAULT_GRID: usize = 8;

/// One fronto-parallel plane.
#[derive(Debug, Clone)]
pub struct Layer {
    /// Metric depth `Z`.
    pub depth: f64,
    /// `3×H×W` colour in `[0, 1]`.
    pub texture: Tensor<f32>,
    /// `1×H×W` coverage, 0 or 1 per pixel.
    pub mask: Tensor<f32>,
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    /// Far to near.
    pub layers: Vec<Layer>,
    pub camera: CameraModel,
    pub height: usize,
    pub width: usize,
}

impl SyntheticScene {
    /// A single fully opaque plane at depth `z`.
    pub fn single_plane(texture: Tensor<f32>, z: f64, camera: CameraModel) -> Result<Self> {
        let (_, c, h, w) = texture.image_dims()?;
        if c != 3 || texture.rank() != 3 {
            return Err(Error::shape(
                "single_plane",
                format!("texture {:?}", texture.shape()),
            ));
        }
        let scene = SyntheticScene {
            layers: vec![Layer {
                depth: z,
                texture,
                mask: Tensor::ones([1, h, w]),
            }],
            camera,
            height: h,
            width: w,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::invalid("scene needs at least one layer"));
        }
        let (h, w) = (self.height, self.width);
        for (i, l) in self.layers.iter().enumerate() {
            if !(l.depth > 0.0) || !l.depth.is_finite() {
                return Err(Error::invalid(format!("layer {i} has depth {}", l.depth)));
            }
            if i > 0 && !(l.depth < self.layers[i - 1].depth) {
                return Err(Error::invalid(format!(
                    "layer depths must strictly decrease far to near; layer {i} is at {} behind {}",
                    l.depth,
                    self.layers[i - 1].depth
                )));
            }
            if l.texture.shape() != [3, h, w] || l.mask.shape() != [1, h, w] {
                return Err(Error::shape(
                    "scene",
                    format!(
                        "layer {i}: texture {:?}, mask {:?}, scene {h}×{w}",
                        l.texture.shape(),
                        l.mask.shape()
                    ),
                ));
            }
            if l.mask.data().iter().any(|&m| m != 0.0 && m != 1.0) {
                return Err(Error::invalid(format!("layer {i} mask is not binary")));
            }
        }
        Ok(())
    }

    /// Per-layer disparity in pixels per grid step, far to near.
    pub fn disparities(&self) -> Vec<f64> {
        self.layers
            .iter()
            .map(|l| self.camera.disparity(l.depth))
            .collect()
    }

    /// Index of the front-most covering layer at each center pixel.
    pub fn top_layer_map(&self) -> Vec<usize> {
        let n = self.height * self.width;
        let mut top = vec![0usize; n];
        for (i, l) in self.layers.iter().enumerate() {
            for (t, &m) in top.iter_mut().zip(l.mask.data()) {
                if m == 1.0 {
                    *t = i;
                }
            }
        }
        top
    }

    /// Relative depth of the center view: linear in `Z` over the visible
    /// surfaces, 0 at the nearest, 1 at the farthest.
    pub fn relative_depth(&self) -> Tensor<f32> {
        let top = self.top_layer_map();
        let z: Vec<f64> = top.iter().map(|&l| self.layers[l].depth).collect();
        let lo = z.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let data = z
            .iter()
            .map(|&v| {
                if hi > lo {
                    ((v - lo) / (hi - lo)) as f32
                } else {
                    0.0
                }
            })
            .collect();
        Tensor::new([1, self.height, self.width], data).expect("sizes agree")
    }
}

/// One rendered view with its ground truth.
#[derive(Debug, Clone)]
pub struct RenderedView {
    pub image: Tensor<f32>,
    /// Backward flow to the center view, `2×H×W`.
    pub flow: Tensor<f32>,
    /// `1×H×W`, 1 where warping the center cannot reproduce the view.
    pub occlusion: Tensor<f32>,
}

/// Render the view at grid offset `(du, dv)`.
///
/// Layers are composited far to near with bilinearly sampled coverage. The
/// flow at a pixel is that of the nearest layer with coverage ≥ 0.5. A
/// pixel is marked occluded unless that layer is fully opaque there, every
/// nearer layer is fully transparent, and all four center pixels the warp
/// would read belong to the same layer; outside the mask the warped center
/// equals the rendered view exactly.
pub fn render_view(scene: &SyntheticScene, du: f64, dv: f64) -> RenderedView {
    let (h, w) = (scene.height, scene.width);
    let plane = h * w;
    let top = scene.top_layer_map();
    let shifts: Vec<(f32, f32)> = scene
        .disparities()
        .iter()
        .map(|&d| (flow_component(d as f32, du), flow_component(d as f32, dv)))
        .collect();

    let mut image = vec![0f32; 3 * plane];
    let mut flow = vec![0f32; 2 * plane];
    let mut occ = vec![0f32; plane];
    let mut coverage = vec![0f32; scene.layers.len()];
    for y in 0..h {
        for x in 0..w {
            let s = y * w + x;
            let mut acc = [0f32; 3];
            for (l, layer) in scene.layers.iter().enumerate() {
                let px = x as f32 + shifts[l].0;
                let py = y as f32 + shifts[l].1;
                let m = sample_bilinear(layer.mask.data(), w, h, px, py);
                coverage[l] = m;
                for (c, a) in acc.iter_mut().enumerate() {
                    let tex = &layer.texture.data()[c * plane..(c + 1) * plane];
                    let v = sample_bilinear(tex, w, h, px, py);
                    *a = m * v + (1.0 - m) * *a;
                }
            }
            for c in 0..3 {
                image[c * plane + s] = acc[c];
            }
            let star = coverage.iter().rposition(|&m| m >= 0.5).unwrap_or(0);
            let (fu, fv) = shifts[star];
            flow[s] = fu;
            flow[plane + s] = fv;
            let (qx, qy) = (x as f32 + fu, y as f32 + fv);
            let taps = bilinear_taps(w, h, qx, qy);
            // Taps with zero bilinear weight do not affect the warped value.
            let live = [
                true,
                qx.fract() != 0.0,
                qy.fract() != 0.0,
                qx.fract() != 0.0 && qy.fract() != 0.0,
            ];
            let valid = coverage[star] == 1.0
                && coverage[star + 1..].iter().all(|&m| m == 0.0)
                && taps.iter().zip(live).all(|(&t, l)| !l || top[t] == star);
            occ[s] = if valid { 0.0 } else { 1.0 };
        }
    }
    RenderedView {
        image: Tensor::new([3, h, w], image).expect("sizes agree"),
        flow: Tensor::new([2, h, w], flow).expect("sizes agree"),
        occlusion: Tensor::new([1, h, w], occ).expect("sizes agree"),
    }
}

/// An `A×A` grid of views around a center view.
#[derive(Debug, Clone)]
pub struct LightField {
    pub grid: usize,
    /// `(row, col)` of the center view.
    pub center: (usize, usize),
    pub height: usize,
    pub width: usize,
    /// Row-major over the grid, each `3×H×W`.
    pub views: Vec<Tensor<f32>>,
    /// Center relative depth, `1×H×W`.
    pub depth: Option<Tensor<f32>>,
    /// Per-view backward flow to the center, `2×H×W`.
    pub flows: Option<Vec<Tensor<f32>>>,
    /// Per-view disocclusion masks, `1×H×W`.
    pub occlusion: Option<Vec<Tensor<f32>>>,
    pub camera: Option<CameraModel>,
    /// Layer disparities when the field is synthetic, far to near.
    pub layer_disparities: Vec<f64>,
    pub warnings: Vec<String>,
}

/// The default center for an `A×A` grid: `((A-1)/2, (A-1)/2)`.
pub fn default_center(grid: usize) -> (usize, usize) {
    ((grid.saturating_sub(1)) / 2, (grid.saturating_sub(1)) / 2)
}

/// Render every view of a scene on an `A×A` grid centred at
/// [`default_center`]. Views whose parallax can exceed the default flow bound
/// for this width produce a warning.
pub fn render_lightfield(scene: &SyntheticScene, grid: usize) -> Result<LightField> {
    scene.validate()?;
    if grid == 0 {
        return Err(Error::invalid("light field grid must be at least 1×1"));
    }
    let center = default_center(grid);
    let offsets: Vec<(f64, f64)> = (0..grid * grid)
        .map(|i| {
            (
                (i % grid) as f64 - center.1 as f64,
                (i / grid) as f64 - center.0 as f64,
            )
        })
        .collect();
    let rendered: Vec<RenderedView> = offsets
        .par_iter()
        .map(|&(du, dv)| render_view(scene, du, dv))
        .collect();

    let disparities = scene.disparities();
    let max_d = disparities.iter().fold(0f64, |a, d| a.max(d.abs()));
    let bound = default_max_disp(scene.width);
    let mut warnings = Vec::new();
    for (i, &(du, dv)) in offsets.iter().enumerate() {
        let parallax = max_d * du.abs().max(dv.abs());
        if parallax > bound + 1e-9 {
            warnings.push(format!(
                "view ({}, {}) has parallax up to {parallax:.3} px, beyond the {bound:.3} px flow bound",
                i / grid,
                i % grid
            ));
        }
    }

    let mut views = Vec::with_capacity(rendered.len());
    let mut flows = Vec::with_capacity(rendered.len());
    let mut occlusion = Vec::with_capacity(rendered.len());
    for r in rendered {
        views.push(r.image);
        flows.push(r.flow);
        occlusion.push(r.occlusion);
    }
    Ok(LightField {
        grid,
        center,
        height: scene.height,
        width: scene.width,
        views,
        depth: Some(scene.relative_depth()),
        flows: Some(flows),
        occlusion: Some(occlusion),
        camera: Some(scene.camera),
        layer_disparities: disparities,
        warnings,
    })
}

impl LightField {
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.grid + col
    }

    pub fn view(&self, row: usize, col: usize) -> &Tensor<f32> {
        &self.views[self.index(row, col)]
    }

    pub fn center_view(&self) -> &Tensor<f32> {
        self.view(self.center.0, self.center.1)
    }

    /// Grid offset `(Δu, Δv) = (col - c₀, row - r₀)`, unvalidated.
    pub fn offset(&self, row: usize, col: usize) -> (f64, f64) {
        (
            col as f64 - self.center.1 as f64,
            row as f64 - self.center.0 as f64,
        )
    }

    /// All views other than the center, whether or not in range.
    pub fn grid_targets(&self) -> Vec<(usize, usize)> {
        (0..self.grid)
            .flat_map(|r| (0..self.grid).map(move |c| (r, c)))
            .filter(|&rc| rc != self.center)
            .collect()
    }

    /// Non-center views whose offset lies in `[-3, 3]²`, row-major.
    pub fn targets(&self) -> Vec<(usize, usize, ViewpointOffset)> {
        self.grid_targets()
            .into_iter()
            .filter_map(|(r, c)| {
                let (du, dv) = self.offset(r, c);
                ViewpointOffset::new(du, dv).ok().map(|q| (r, c, q))
            })
            .collect()
    }

    /// Grid position of an in-range offset, if that view exists.
    pub fn position_of(&self, q: ViewpointOffset) -> Option<(usize, usize)> {
        let r = self.center.0 as f64 + q.dv;
        let c = self.center.1 as f64 + q.du;
        let ok = |v: f64| v >= 0.0 && v < self.grid as f64 && v.fract() == 0.0;
        (ok(r) && ok(c)).then_some((r as usize, c as usize))
    }

    pub fn require_depth(&self) -> Result<&Tensor<f32>> {
        self.depth.as_ref().ok_or_else(|| {
            Error::invalid(
                "light field has no center depth; supply depth.pfm (relative depth in [0,1], \
                 0 nearest) produced by an external depth estimator",
            )
        })
    }
}

/// Parameters of the procedural scene generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    /// Total layers including the background.
    pub layers: usize,
    pub camera: CameraModel,
    /// Depth of the nearest layer.
    pub z_near: f64,
    /// Depth of the background.
    pub z_far: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        // Disparities span [-0.5, 0.5] px per grid step, so three steps stay
        // inside the 2 px flow bound of a 64-pixel-wide image.
        SceneConfig {
            height: 64,
            width: 64,
            layers: 3,
            camera: CameraModel {
                baseline: 1.0,
                focal: 2.0,
            },
            z_near: 4.0 / 3.0,
            z_far: 4.0,
        }
    }
}

/// Smooth colour field: a base colour plus a few low-frequency sinusoids.
fn sinusoid_texture(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Tensor<f32> {
    let plane = h * w;
    let mut data = vec![0f32; 3 * plane];
    for c in 0..3 {
        let base = rng.random_range(0.3..0.7);
        let waves: Vec<(f64, f64, f64, f64)> = (0..4)
            .map(|_| {
                (
                    rng.random_range(0.03..0.06),
                    rng.random_range(-6.0..6.0) / w as f64,
                    rng.random_range(-6.0..6.0) / h as f64,
                    rng.random_range(0.0..TAU),
                )
            })
            .collect();
        for y in 0..h {
            for x in 0..w {
                let v = waves.iter().fold(base, |acc, &(a, fx, fy, ph)| {
                    acc + a * (TAU * (fx * x as f64 + fy * y as f64) + ph).sin()
                });
                data[c * plane + y * w + x] = v as f32;
            }
        }
    }
    Tensor::new([3, h, w], data).expect("sizes agree")
}

/// Union of one to three discs and rectangles, kept off the image border.
fn shape_mask(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Tensor<f32> {
    let mut data = vec![0f32; h * w];
    let (hf, wf) = (h as f64, w as f64);
    let n = rng.random_range(1..=3);
    for _ in 0..n {
        let cx = rng.random_range(0.25..0.75) * wf;
        let cy = rng.random_range(0.25..0.75) * hf;
        let rx = rng.random_range(0.1..0.22) * wf;
        let ry = rng.random_range(0.1..0.22) * hf;
        let disc = rng.random_bool(0.5);
        for y in 0..h {
            for x in 0..w {
                let (ex, ey) = ((x as f64 - cx) / rx, (y as f64 - cy) / ry);
                let inside = if disc {
                    ex * ex + ey * ey <= 1.0
                } else {
                    ex.abs() <= 1.0 && ey.abs() <= 1.0
                };
                if inside {
                    data[y * w + x] = 1.0;
                }
            }
        }
    }
    Tensor::new([1, h, w], data).expect("sizes agree")
}

/// Procedural scene: a full background at `z_far`, the nearest layer at
/// `z_near`, any others at sorted uniform depths in between.
pub fn generate_scene(cfg: &SceneConfig, seed: u64) -> Result<SyntheticScene> {
    if cfg.layers == 0 || cfg.height == 0 || cfg.width == 0 {
        return Err(Error::invalid(
            "scene needs at least one layer and a non-empty image",
        ));
    }
    if cfg.layers > 1 && !(cfg.z_near < cfg.z_far) {
        return Err(Error::invalid(format!(
            "multi-layer scenes need z_near < z_far, got {} and {}",
            cfg.z_near, cfg.z_far
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (cfg.height, cfg.width);
    let mut depths = vec![cfg.z_far];
    if cfg.layers > 1 {
        let mut mid: Vec<f64> = (0..cfg.layers - 2)
            .map(|_| rng.random_range(cfg.z_near..cfg.z_far))
            .collect();
        mid.sort_by(|a, b| b.total_cmp(a));
        depths.extend(mid);
        depths.push(cfg.z_near);
    }
    let layers = depths
        .iter()
        .enumerate()
        .map(|(i, &depth)| Layer {
            depth,
            texture: sinusoid_texture(&mut rng, h, w),
            mask: if i == 0 {
                Tensor::ones([1, h, w])
            } else {
                shape_mask(&mut rng, h, w)
            },
        })
        .collect();
    let scene = SyntheticScene {
        layers,
        camera: cfg.camera,
        height: h,
        width: w,
    };
    scene.validate()?;
    Ok(scene)
}

/// A (center, target) pair for training or evaluation.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub image: Tensor<f32>,
    pub depth: Tensor<f32>,
    pub target: Tensor<f32>,
    pub offset: ViewpointOffset,
    pub flow: Option<Tensor<f32>>,
}

/// Draw `count` pairs with the light field's center as source and a target
/// uniform over the non-center views with offsets in `[-3, 3]²`.
pub fn sample_pairs<R: Rng + ?Sized>(
    lf: &LightField,
    rng: &mut R,
    count: usize,
) -> Result<Vec<TrainingSample>> {
    let depth = lf.require_depth()?;
    let targets = lf.targets();
    if targets.is_empty() {
        return Err(Error::invalid("light field has no target views in range"));
    }
    Ok((0..count)
        .map(|_| {
            let (r, c, q) = targets[rng.random_range(0..targets.len())];
            let i = lf.index(r, c);
            TrainingSample {
                image: lf.center_view().clone(),
                depth: depth.clone(),
                target: lf.views[i].clone(),
                offset: q,
                flow: lf.flows.as_ref().map(|f| f[i].clone()),
            }
        })
        .collect())
}

fn crop_chw(t: &Tensor<f32>, top: usize, left: usize, ch: usize, cw: usize) -> Tensor<f32> {
    let s = t.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let mut data = Vec::with_capacity(c * ch * cw);
    for k in 0..c {
        for y in top..top + ch {
            let row = (k * h + y) * w;
            data.extend_from_slice(&t.data()[row + left..row + left + cw]);
        }
    }
    Tensor::new([c, ch, cw], data).expect("sizes agree")
}

/// Crop image, depth, target and flow with one random window.
pub fn random_crop<R: Rng + ?Sized>(
    sample: &TrainingSample,
    crop: (usize, usize),
    rng: &mut R,
) -> Result<TrainingSample> {
    let (ch, cw) = crop;
    let s = sample.image.shape();
    let (h, w) = (s[1], s[2]);
    if ch == 0 || cw == 0 || ch > h || cw > w {
        return Err(Error::invalid(format!(
            "crop {ch}×{cw} does not fit image {h}×{w}"
        )));
    }
    let top = rng.random_range(0..=h - ch);
    let left = rng.random_range(0..=w - cw);
    Ok(TrainingSample {
        image: crop_chw(&sample.image, top, left, ch, cw),
        depth: crop_chw(&sample.depth, top, left, ch, cw),
        target: crop_chw(&sample.target, top, left, ch, cw),
        offset: sample.offset,
        flow: sample.flow.as_ref().map(|f| crop_chw(f, top, left, ch, cw)),
    })
}

/// Subdirectory holding the per-view disocclusion masks.
pub const OCCLUSION_DIR: &str = "occlusion";

/// Contents of `lf.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LightFieldMeta {
    pub grid: usize,
    pub center: (usize, usize),
    pub height: usize,
    pub width: usize,
    pub camera: Option<CameraModel>,
    #[serde(default)]
    pub layer_disparities: Vec<f64>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl LightField {
    pub fn meta(&self) -> LightFieldMeta {
        LightFieldMeta {
            grid: self.grid,
            center: self.center,
            height: self.height,
            width: self.width,
            camera: self.camera,
            layer_disparities: self.layer_disparities.clone(),
            warnings: self.warnings.clone(),
        }
    }
}

pub fn save_lightfield(lf: &LightField, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = serde_json::to_string_pretty(&lf.meta()).expect("metadata serialises");
    let meta_path = dir.join("lf.json");
    fs::write(&meta_path, json + "\n").map_err(|e| Error::io(&meta_path, e))?;
    // Masks live in a subdirectory so the top level holds exactly the views.
    let occ_dir = dir.join(OCCLUSION_DIR);
    if lf.occlusion.is_some() {
        fs::create_dir_all(&occ_dir).map_err(|e| Error::io(&occ_dir, e))?;
    }
    for r in 0..lf.grid {
        for c in 0..lf.grid {
            let i = lf.index(r, c);
            formats::save_png(&lf.views[i], dir.join(format!("view_{r}_{c}.png")))?;
            if let Some(flows) = &lf.flows {
                formats::write_flo(&flows[i], dir.join(format!("flow_{r}_{c}.flo")))?;
            }
            if let Some(occ) = &lf.occlusion {
                formats::save_gray_png(&occ[i], occ_dir.join(format!("occ_{r}_{c}.png")))?;
            }
        }
    }
    if let Some(depth) = &lf.depth {
        formats::write_pfm(depth, dir.join("depth.pfm"))?;
    }
    Ok(())
}

fn check_size(t: &Tensor<f32>, channels: usize, h: usize, w: usize, path: &Path) -> Result<()> {
    if t.shape() != [channels, h, w] {
        return Err(Error::format(
            path,
            format!("expected {channels}×{h}×{w}, found {:?}", t.shape()),
        ));
    }
    Ok(())
}

/// Load a light-field directory. Views are required; depth, flows and masks
/// are picked up when present (flows and masks only if present for every view).
pub fn load_lightfield(dir: impl AsRef<Path>) -> Result<LightField> {
    let dir = dir.as_ref();
    let meta_path = dir.join("lf.json");
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: LightFieldMeta =
        serde_json::from_str(&text).map_err(|e| Error::format(&meta_path, e.to_string()))?;
    if meta.grid == 0 || meta.center.0 >= meta.grid || meta.center.1 >= meta.grid {
        return Err(Error::format(
            &meta_path,
            format!(
                "center {:?} outside a {g}×{g} grid",
                meta.center,
                g = meta.grid
            ),
        ));
    }
    let (h, w) = (meta.height, meta.width);
    let mut views = Vec::with_capacity(meta.grid * meta.grid);
    let mut flows = Some(Vec::new());
    let mut occlusion = Some(Vec::new());
    for r in 0..meta.grid {
        for c in 0..meta.grid {
            let p = dir.join(format!("view_{r}_{c}.png"));
            if !p.exists() {
                return Err(Error::format(dir, format!("missing view_{r}_{c}.png")));
            }
            let v = formats::load_png(&p)?;
            check_size(&v, 3, h, w, &p)?;
            views.push(v);

            let fp = dir.join(format!("flow_{r}_{c}.flo"));
            flows = match (flows, fp.exists()) {
                (Some(mut f), true) => {
                    let t = formats::read_flo(&fp)?;
                    check_size(&t, 2, h, w, &fp)?;
                    f.push(t);
                    Some(f)
                }
                _ => None,
            };
            let op = dir.join(OCCLUSION_DIR).join(format!("occ_{r}_{c}.png"));
            occlusion = match (occlusion, op.exists()) {
                (Some(mut o), true) => {
                    let t = formats::load_gray_png(&op)?;
                    check_size(&t, 1, h, w, &op)?;
                    o.push(t);
                    Some(o)
                }
                _ => None,
            };
        }
    }
    let dp = dir.join("depth.pfm");
    let depth = if dp.exists() {
        let d = formats::read_pfm(&dp)?;
        check_size(&d, 1, h, w, &dp)?;
        Some(d)
    } else {
        None
    };
    Ok(LightField {
        grid: meta.grid,
        center: meta.center,
        height: h,
        width: w,
        views,
        depth,
        flows,
        occlusion,
        camera: meta.camera,
        layer_disparities: meta.layer_disparities,
        warnings: meta.warnings,
    })
}

/// Whether every view offset of a light field is within `[-3, 3]²`.
pub fn all_offsets_in_range(lf: &LightField) -> bool {
    (0..lf.grid).all(|r| {
        (0..lf.grid).all(|c| {
            let (du, dv) = lf.offset(r, c);
            du.abs() <= MAX_OFFSET && dv.abs() <= MAX_OFFSET
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::warp::{depth_to_disparity, flow_from_disparity, warp_tensor};

    fn ramp(h: usize, w: usize) -> Tensor<f32> {
        Tensor::from_fn([3, h, w], |i| {
            let x = (i % w) as f32;
            let c = (i / (h * w)) as f32;
            0.1 + 0.01 * x + 0.05 * c
        })
    }

    fn cam() -> CameraModel {
        CameraModel::new(1.0, 2.0).unwrap()
    }

    #[test]
    fn plane_at_focal_depth_gives_identical_views() {
        let scene = SyntheticScene::single_plane(ramp(6, 9), 2.0, cam()).unwrap();
        let lf = render_lightfield(&scene, 8).unwrap();
        for v in &lf.views {
            assert_eq!(v, lf.center_view());
        }
    }

    #[test]
    fn plane_at_twice_focal_depth_shifts_by_half_pixel_per_step() {
        let tex = Tensor::from_fn([3, 4, 10], |i| (i % 10) as f32 / 10.0);
        let scene = SyntheticScene::single_plane(tex.clone(), 4.0, cam()).unwrap();
        let v = render_view(&scene, 2.0, 0.0);
        for c in 0..3 {
            for y in 0..4 {
                for x in 0..10 {
                    let expect = tex.data()[(c * 4 + y) * 10 + (x + 1).min(9)];
                    assert_eq!(v.image.data()[(c * 4 + y) * 10 + x], expect);
                }
            }
        }
        assert!(v.occlusion.data().iter().all(|&m| m == 0.0));
    }

    #[test]
    fn single_plane_geometry_chain_reproduces_views() {
        let z = 3.1;
        let scene = SyntheticScene::single_plane(ramp(8, 12), z, cam()).unwrap();
        let lf = render_lightfield(&scene, 7).unwrap();
        let zmap = Tensor::full([1, 8, 12], z as f32);
        let disp = depth_to_disparity(&zmap, &cam()).unwrap();
        for (r, c, q) in lf.targets() {
            let flow = flow_from_disparity(&disp, q).unwrap();
            let warped = warp_tensor(lf.center_view(), &flow).unwrap();
            assert_eq!(&warped, lf.view(r, c));
        }
    }

    #[test]
    fn ground_truth_flow_is_exact_outside_occlusion() {
        let cfg = SceneConfig {
            height: 32,
            width: 32,
            ..SceneConfig::default()
        };
        let scene = generate_scene(&cfg, 5).unwrap();
        let lf = render_lightfield(&scene, 8).unwrap();
        let flows = lf.flows.as_ref().unwrap();
        let occ = lf.occlusion.as_ref().unwrap();
        let mut occluded = 0;
        for (r, c, _) in lf.targets() {
            let i = lf.index(r, c);
            let warped = warp_tensor(lf.center_view(), &flows[i]).unwrap();
            let plane = 32 * 32;
            for s in 0..plane {
                if occ[i].data()[s] == 0.0 {
                    for k in 0..3 {
                        assert_eq!(
                            warped.data()[k * plane + s],
                            lf.views[i].data()[k * plane + s]
                        );
                    }
                } else {
                    occluded += 1;
                }
            }
        }
        assert!(occluded > 0, "a layered scene should reveal something");
        assert!(lf.occlusion.as_ref().unwrap()[lf.index(3, 3)]
            .data()
            .iter()
            .all(|&m| m == 0.0));
    }

    #[test]
    fn grid_offsets_and_targets() {
        let scene = SyntheticScene::single_plane(ramp(4, 4), 2.0, cam()).unwrap();
        let lf = render_lightfield(&scene, 8).unwrap();
        assert_eq!(lf.center, (3, 3));
        assert_eq!(lf.grid_targets().len(), 63);
        assert_eq!(lf.targets().len(), 48);
        assert_eq!(lf.offset(0, 7), (4.0, -3.0));
        assert!(!all_offsets_in_range(&lf));
        assert_eq!(
            lf.position_of(ViewpointOffset::new(-3.0, 2.0).unwrap()),
            Some((5, 0))
        );
        assert_eq!(
            lf.position_of(ViewpointOffset::new(0.5, 0.0).unwrap()),
            None
        );

        let small = render_lightfield(&scene, 3).unwrap();
        assert_eq!(small.center, (1, 1));
        assert!(all_offsets_in_range(&small));
        assert_eq!(small.targets().len(), 8);
    }

    #[test]
    fn generator_is_deterministic_and_ordered() {
        let cfg = SceneConfig {
            layers: 4,
            ..SceneConfig::default()
        };
        let a = generate_scene(&cfg, 9).unwrap();
        let b = generate_scene(&cfg, 9).unwrap();
        let c = generate_scene(&cfg, 10).unwrap();
        assert_eq!(a.layers.len(), 4);
        for (x, y) in a.layers.iter().zip(&b.layers) {
            assert_eq!(x.depth, y.depth);
            assert_eq!(x.texture, y.texture);
            assert_eq!(x.mask, y.mask);
        }
        assert_ne!(a.layers[1].texture, c.layers[1].texture);
        assert_eq!(a.layers[0].depth, cfg.z_far);
        assert_eq!(a.layers[3].depth, cfg.z_near);
        for l in &a.layers {
            assert!(l.texture.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
        // Disparity increases with depth for Z > 0.
        let d = a.disparities();
        assert!(d.windows(2).all(|p| p[0] > p[1]));
    }

    #[test]
    fn relative_depth_is_zero_at_nearest() {
        let scene = generate_scene(&SceneConfig::default(), 1).unwrap();
        let depth = scene.relative_depth();
        let top = scene.top_layer_map();
        let near = scene.layers.len() - 1;
        for (s, &l) in top.iter().enumerate() {
            if l == near {
                assert_eq!(depth.data()[s], 0.0);
            }
            if l == 0 {
                assert_eq!(depth.data()[s], 1.0);
            }
        }
        let flat = SyntheticScene::single_plane(ramp(3, 3), 5.0, cam()).unwrap();
        assert!(flat.relative_depth().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn parallax_warning() {
        let scene = SyntheticScene::single_plane(ramp(8, 64), 40.0, cam()).unwrap();
        let lf = render_lightfield(&scene, 8).unwrap();
        assert!(!lf.warnings.is_empty());
        let quiet = SyntheticScene::single_plane(ramp(8, 64), 2.5, cam()).unwrap();
        assert!(render_lightfield(&quiet, 8).unwrap().warnings.is_empty());
    }

    #[test]
    fn scene_validation() {
        let mut scene = generate_scene(&SceneConfig::default(), 0).unwrap();
        scene.layers[2].depth = scene.layers[1].depth + 0.1;
        assert!(scene.validate().is_err());
        assert!(SyntheticScene::single_plane(ramp(3, 3), 0.0, cam()).is_err());
    }

    #[test]
    fn pair_sampling_and_crop() {
        let scene = generate_scene(&SceneConfig::default(), 2).unwrap();
        let lf = render_lightfield(&scene, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pairs = sample_pairs(&lf, &mut rng, 200).unwrap();
        let mut rng2 = ChaCha8Rng::seed_from_u64(0);
        let again = sample_pairs(&lf, &mut rng2, 200).unwrap();
        for (a, b) in pairs.iter().zip(&again) {
            assert_eq!(a.offset, b.offset);
        }
        assert!(pairs
            .iter()
            .all(|p| p.offset.ring() >= 1.0 && p.offset.ring() <= 3.0));

        let full = random_crop(&pairs[0], (64, 64), &mut rng).unwrap();
        assert_eq!(full.image, pairs[0].image);
        assert_eq!(full.target, pairs[0].target);
        assert!(random_crop(&pairs[0], (65, 10), &mut rng).is_err());
    }

    #[test]
    fn missing_depth_is_reported() {
        let scene = generate_scene(&SceneConfig::default(), 2).unwrap();
        let mut lf = render_lightfield(&scene, 3).unwrap();
        lf.depth = None;
        let err = sample_pairs(&lf, &mut ChaCha8Rng::seed_from_u64(0), 1).unwrap_err();
        assert!(err.to_string().contains("depth.pfm"));
    }

    #[test]
    fn directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SceneConfig {
            height: 12,
            width: 16,
            ..SceneConfig::default()
        };
        let lf = render_lightfield(&generate_scene(&cfg, 4).unwrap(), 3).unwrap();
        save_lightfield(&lf, dir.path()).unwrap();
        let back = load_lightfield(dir.path()).unwrap();
        assert_eq!(back.meta(), lf.meta());
        for (a, b) in lf.views.iter().zip(&back.views) {
            assert!(a.max_abs_diff(b).unwrap() <= 1.0 / 255.0);
        }
        assert_eq!(back.depth, lf.depth);
        assert_eq!(back.flows, lf.flows);
        assert_eq!(back.occlusion, lf.occlusion);

        fs::remove_file(dir.path().join("view_2_1.png")).unwrap();
        let err = load_lightfield(dir.path()).unwrap_err();
        assert!(err.to_string().contains("view_2_1.png"));
    }
}
