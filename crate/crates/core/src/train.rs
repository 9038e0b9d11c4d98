//! Objective, Adam, and the training loop.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ops, Node};
use crate::error::{Error, Result};
use crate::lightfield::{random_crop, LightField, TrainingSample};
use crate::model::{
    init_model, read_records, save_checkpoint, synthesize, write_records, ByteReader, ModelInput,
    ModelParams, Variant,
};
use crate::tensor::{Scalar, Tensor};
use crate::warp::{default_max_disp, tv_loss, ViewpointOffset};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the flow smoothness term.
    pub alpha: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { alpha: 0.001 }
    }
}

/// The two loss terms and their weighted sum, as evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub l1: f64,
    pub tv: f64,
    pub total: f64,
}

/// `mean |pred - target| + α · TV(flow)`.
pub fn loss<T: Scalar>(
    pred: &Node<T>,
    target: &Tensor<T>,
    flow: &Node<T>,
    cfg: &LossConfig,
) -> Result<(Node<T>, LossReport)> {
    if !(cfg.alpha >= 0.0) {
        return Err(Error::invalid(format!(
            "alpha must be >= 0, got {}",
            cfg.alpha
        )));
    }
    if pred.shape() != target.shape() {
        return Err(Error::shape(
            "loss",
            format!(
                "prediction {:?} vs target {:?}",
                pred.shape(),
                target.shape()
            ),
        ));
    }
    let target = Node::constant(target.clone());
    let l1 = ops::mean(&ops::abs(&ops::sub(pred, &target)?)?)?;
    let tv = tv_loss(flow)?;
    let total = ops::add(&l1, &ops::scale(&tv, cfg.alpha)?)?;
    let report = LossReport {
        l1: l1.value().item()?.to_f64(),
        tv: tv.value().item()?.to_f64(),
        total: total.value().item()?.to_f64(),
    };
    Ok((total, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 4,
            iterations: 12_000,
            seed: 0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.batch_size > 0;
        if !ok {
            return Err(Error::invalid(format!(
                "invalid optimiser settings {self:?}"
            )));
        }
        Ok(())
    }
}

/// Adam moments keyed by parameter name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: BTreeMap<String, Tensor<f32>>,
    pub v: BTreeMap<String, Tensor<f32>>,
}

/// One bias-corrected Adam update over every parameter, in name order.
pub fn adam_step(
    params: &mut ModelParams<f32>,
    state: &mut AdamState,
    cfg: &OptimConfig,
) -> Result<()> {
    let names: Vec<String> = params.store.names().map(str::to_string).collect();
    let mut grads = Vec::with_capacity(names.len());
    for name in &names {
        let g = params
            .store
            .get(name)?
            .grad()
            .ok_or_else(|| Error::MissingGradient(name.clone()))?;
        grads.push(g);
    }
    let t = state.step + 1;
    let c1 = 1.0 - cfg.beta1.powf(t as f64);
    let c2 = 1.0 - cfg.beta2.powf(t as f64);
    for (name, g) in names.iter().zip(grads) {
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(g.shape()));
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(g.shape()));
        let w = params.store.value_mut(name)?;
        if m.shape() != g.shape() || v.shape() != g.shape() || w.shape() != g.shape() {
            return Err(Error::shape(
                "adam_step",
                format!("moments of {name} do not match"),
            ));
        }
        for (((w, m), v), &g) in w
            .data_mut()
            .iter_mut()
            .zip(m.data_mut())
            .zip(v.data_mut())
            .zip(g.data())
        {
            let g = g as f64;
            let m1 = cfg.beta1 * *m as f64 + (1.0 - cfg.beta1) * g;
            let v1 = cfg.beta2 * *v as f64 + (1.0 - cfg.beta2) * g * g;
            *m = m1 as f32;
            *v = v1 as f32;
            let update = cfg.lr * (m1 / c1) / ((v1 / c2).sqrt() + cfg.epsilon);
            *w = (*w as f64 - update) as f32;
        }
    }
    state.step = t;
    Ok(())
}

pub const STATE_MAGIC: &[u8; 4] = b"FRTS";
pub const STATE_VERSION: u32 = 1;

/// Optimiser state file: magic "FRTS", u32 version, u64 step, then the
/// checkpoint record layout with names `m/<param>` and `v/<param>`.
pub fn write_state(state: &AdamState) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(STATE_MAGIC);
    buf.extend_from_slice(&STATE_VERSION.to_le_bytes());
    buf.extend_from_slice(&state.step.to_le_bytes());
    let m_names: Vec<String> = state.m.keys().map(|k| format!("m/{k}")).collect();
    let v_names: Vec<String> = state.v.keys().map(|k| format!("v/{k}")).collect();
    let records = m_names
        .iter()
        .zip(state.m.values())
        .chain(v_names.iter().zip(state.v.values()))
        .map(|(n, t)| (n.as_str(), t));
    write_records(&mut buf, records).expect("writing to a Vec cannot fail");
    buf
}

pub fn read_state(bytes: &[u8], path: &Path) -> Result<AdamState> {
    let mut r = ByteReader::new(bytes, path);
    if r.take(4)? != STATE_MAGIC {
        return Err(Error::format(path, "not a training state file (bad magic)"));
    }
    let version = r.u32()?;
    if version != STATE_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported state version {version}"),
        ));
    }
    let mut state = AdamState {
        step: r.u64()?,
        ..AdamState::default()
    };
    for (name, t) in read_records(&mut r)? {
        match name.split_once('/') {
            Some(("m", p)) => state.m.insert(p.to_string(), t),
            Some(("v", p)) => state.v.insert(p.to_string(), t),
            _ => return Err(Error::format(path, format!("unexpected record {name:?}"))),
        };
    }
    Ok(state)
}

pub fn save_state(state: &AdamState, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, write_state(state)).map_err(|e| Error::io(path, e))
}

pub fn load_state(path: impl AsRef<Path>) -> Result<AdamState> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_state(&bytes, path)
}

/// Everything a training run needs besides the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub variant: Variant,
    pub loss: LossConfig,
    pub optim: OptimConfig,
    /// Random crop size `(H, W)`; `None` trains on full views.
    pub crop: Option<(usize, usize)>,
    /// Flow bound; `None` scales the reference bound to the training width.
    pub max_disp: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: Variant::Full,
            loss: LossConfig::default(),
            optim: OptimConfig::default(),
            crop: None,
            max_disp: None,
        }
    }
}

/// One CSV row of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub iteration: usize,
    pub l1: f64,
    pub tv: f64,
    pub total: f64,
    /// Seconds since the trainer was created.
    pub wall_time: f64,
}

pub const LOG_HEADER: &str = "iteration,l1,tv,total,wall_time";

impl LogRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{:.9e},{:.9e},{:.9e},{:.3}",
            self.iteration, self.l1, self.tv, self.total, self.wall_time
        )
    }
}

/// Pre-computed (light field, target view) choices.
struct PairIndex {
    pairs: Vec<(usize, usize, ViewpointOffset)>,
}

impl PairIndex {
    fn new(data: &[LightField]) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::invalid("training set is empty"));
        }
        let mut pairs = Vec::new();
        for (k, lf) in data.iter().enumerate() {
            lf.require_depth()?;
            pairs.extend(
                lf.targets()
                    .into_iter()
                    .map(|(r, c, q)| (k, lf.index(r, c), q)),
            );
        }
        if pairs.is_empty() {
            return Err(Error::invalid("training set has no target views in range"));
        }
        Ok(PairIndex { pairs })
    }
}

/// The batch drawn at `iteration`. The generator is keyed by the seed and
/// the iteration alone, so batches do not depend on how a run was split.
pub fn draw_batch(
    data: &[LightField],
    cfg: &TrainConfig,
    iteration: usize,
) -> Result<(ModelInput<f32>, Tensor<f32>)> {
    draw_from(&PairIndex::new(data)?, data, cfg, iteration)
}

fn draw_from(
    index: &PairIndex,
    data: &[LightField],
    cfg: &TrainConfig,
    iteration: usize,
) -> Result<(ModelInput<f32>, Tensor<f32>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.optim.seed);
    rng.set_stream(iteration as u64);
    let mut images = Vec::with_capacity(cfg.optim.batch_size);
    let mut depths = Vec::with_capacity(cfg.optim.batch_size);
    let mut targets = Vec::with_capacity(cfg.optim.batch_size);
    let mut offsets = Vec::with_capacity(cfg.optim.batch_size);
    for _ in 0..cfg.optim.batch_size {
        let (k, i, q) = index.pairs[rng.random_range(0..index.pairs.len())];
        let lf = &data[k];
        let mut sample = TrainingSample {
            image: lf.center_view().clone(),
            depth: lf.require_depth()?.clone(),
            target: lf.views[i].clone(),
            offset: q,
            flow: None,
        };
        if let Some(crop) = cfg.crop {
            sample = random_crop(&sample, crop, &mut rng)?;
        }
        images.push(sample.image);
        depths.push(sample.depth);
        targets.push(sample.target);
        offsets.push(sample.offset);
    }
    let input = ModelInput::new(Tensor::stack(&images)?, Tensor::stack(&depths)?, offsets)?;
    Ok((input, Tensor::stack(&targets)?))
}

/// Owns the parameters and optimiser state of one run.
pub struct Trainer<'a> {
    pub params: ModelParams<f32>,
    pub state: AdamState,
    pub config: TrainConfig,
    data: &'a [LightField],
    index: PairIndex,
    started: Instant,
}

impl<'a> Trainer<'a> {
    /// Fresh parameters initialised from the optimiser seed.
    pub fn new(data: &'a [LightField], config: TrainConfig) -> Result<Self> {
        let index = PairIndex::new(data)?;
        let width = config.crop.map_or(data[0].width, |c| c.1);
        let max_disp = config.max_disp.unwrap_or_else(|| default_max_disp(width));
        let params = init_model(config.variant, config.optim.seed, max_disp)?;
        Self::with_state(data, config, params, AdamState::default(), index)
    }

    /// Continue from saved parameters and optimiser state.
    pub fn resume(
        data: &'a [LightField],
        config: TrainConfig,
        params: ModelParams<f32>,
        state: AdamState,
    ) -> Result<Self> {
        if params.variant != config.variant {
            return Err(Error::invalid(format!(
                "checkpoint holds the {} variant but {} was requested",
                params.variant, config.variant
            )));
        }
        let index = PairIndex::new(data)?;
        Self::with_state(data, config, params, state, index)
    }

    fn with_state(
        data: &'a [LightField],
        config: TrainConfig,
        params: ModelParams<f32>,
        state: AdamState,
        index: PairIndex,
    ) -> Result<Self> {
        config.optim.validate()?;
        if let Some((ch, cw)) = config.crop {
            if data.iter().any(|lf| ch > lf.height || cw > lf.width) {
                return Err(Error::invalid(format!(
                    "crop {ch}×{cw} is larger than some training views"
                )));
            }
        }
        Ok(Trainer {
            params,
            state,
            config,
            data,
            index,
            started: Instant::now(),
        })
    }

    /// Iterations completed so far.
    pub fn iteration(&self) -> usize {
        self.state.step as usize
    }

    /// Forward, backward and one Adam update on the next batch.
    pub fn step(&mut self) -> Result<LogRow> {
        let iteration = self.iteration() + 1;
        let (input, target) = draw_from(&self.index, self.data, &self.config, iteration)?;
        let report = {
            let diverged = |source: Error, l1: f64, tv: f64| Error::Diverged {
                iteration,
                l1,
                tv,
                source: Box::new(source),
            };
            let out =
                synthesize(&self.params, &input).map_err(|e| diverged(e, f64::NAN, f64::NAN))?;
            let (total, report) = loss(&out.image, &target, &out.flow, &self.config.loss)
                .map_err(|e| diverged(e, f64::NAN, f64::NAN))?;
            if !report.total.is_finite() {
                return Err(diverged(
                    Error::NonFinite { op: "loss" },
                    report.l1,
                    report.tv,
                ));
            }
            total
                .backward()
                .map_err(|e| diverged(e, report.l1, report.tv))?;
            report
        };
        adam_step(&mut self.params, &mut self.state, &self.config.optim)?;
        self.params.store.clear_grads();
        Ok(LogRow {
            iteration,
            l1: report.l1,
            tv: report.tv,
            total: report.total,
            wall_time: self.started.elapsed().as_secs_f64(),
        })
    }

    /// Run until `config.optim.iterations` steps are done, calling `each`
    /// after every step.
    pub fn run(
        &mut self,
        mut each: impl FnMut(&Self, &LogRow) -> Result<()>,
    ) -> Result<Vec<LogRow>> {
        let mut log = Vec::new();
        while self.iteration() < self.config.optim.iterations {
            let row = self.step()?;
            each(self, &row)?;
            log.push(row);
        }
        Ok(log)
    }

    /// Write `model.frvs` and `model.state` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(PathBuf, PathBuf)> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let ckpt = dir.join("model.frvs");
        let state = dir.join("model.state");
        save_checkpoint(&self.params, &ckpt)?;
        save_state(&self.state, &state)?;
        Ok((ckpt, state))
    }
}

/// Appends log rows to a CSV file, writing the header for a new file.
pub struct LogWriter {
    file: fs::File,
    path: PathBuf,
}

impl LogWriter {
    pub fn create(path: impl AsRef<Path>, append: bool) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let fresh = !append || !path.exists();
        let mut file = fs::OpenOptions::new()
            .create(true)
            .write(true)
            .append(!fresh)
            .truncate(fresh)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        if fresh {
            writeln!(file, "{LOG_HEADER}").map_err(|e| Error::io(&path, e))?;
        }
        Ok(LogWriter { file, path })
    }

    pub fn write(&mut self, row: &LogRow) -> Result<()> {
        writeln!(self.file, "{}", row.csv()).map_err(|e| Error::io(&self.path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lightfield::{generate_scene, render_lightfield, SceneConfig};

    fn tiny_data(n: usize, size: usize) -> Vec<LightField> {
        let cfg = SceneConfig {
            height: size,
            width: size,
            ..SceneConfig::default()
        };
        (0..n)
            .map(|s| render_lightfield(&generate_scene(&cfg, s as u64).unwrap(), 8).unwrap())
            .collect()
    }

    fn tiny_config(iterations: usize) -> TrainConfig {
        TrainConfig {
            optim: OptimConfig {
                iterations,
                batch_size: 2,
                lr: 1e-3,
                seed: 3,
                ..OptimConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn loss_vanishes_on_perfect_prediction() {
        let img = Tensor::from_fn([1, 3, 2, 2], |i| i as f32 / 12.0);
        let flow = Node::parameter(Tensor::full([1, 2, 2, 2], 0.7f32));
        let (_, r) = loss(
            &Node::constant(img.clone()),
            &img,
            &flow,
            &LossConfig::default(),
        )
        .unwrap();
        assert_eq!((r.l1, r.tv, r.total), (0.0, 0.0, 0.0));
    }

    #[test]
    fn uniform_offset_of_a_tenth() {
        let target = Tensor::<f64>::full([3, 4, 4], 0.5);
        let pred = Node::constant(Tensor::full([3, 4, 4], 0.6));
        let flow = Node::constant(Tensor::zeros([2, 4, 4]));
        let (_, r) = loss(&pred, &target, &flow, &LossConfig::default()).unwrap();
        assert!((r.total - 0.1).abs() < 1e-12);
    }

    #[test]
    fn loss_decomposes_exactly() {
        let target = Tensor::<f32>::from_fn([3, 5, 5], |i| (i % 7) as f32 / 7.0);
        let pred = Node::constant(Tensor::from_fn([3, 5, 5], |i| (i % 5) as f32 / 5.0));
        let flow = Node::constant(Tensor::from_fn([2, 5, 5], |i| (i % 3) as f32));
        let cfg = LossConfig { alpha: 0.37 };
        let (_, r) = loss(&pred, &target, &flow, &cfg).unwrap();
        let expect = r.l1 as f32 + r.tv as f32 * 0.37f32;
        assert_eq!(r.total as f32, expect);
        let (_, pure) = loss(&pred, &target, &flow, &LossConfig { alpha: 0.0 }).unwrap();
        assert_eq!(pure.total, pure.l1);
        assert!(loss(&pred, &Tensor::zeros([3, 5, 4]), &flow, &cfg).is_err());
    }

    fn scalar_model(w: f32, g: Option<f32>) -> ModelParams<f32> {
        let mut p = init_model(Variant::Full, 0, 2.0).unwrap();
        p.store = crate::autodiff::ParameterStore::new();
        let node = p.store.insert("w", Tensor::scalar(w)).unwrap().clone();
        if let Some(g) = g {
            ops::scale(&node, g as f64).unwrap().backward().unwrap();
        }
        p
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        let mut p = scalar_model(0.0, Some(1.0));
        let mut s = AdamState::default();
        let cfg = OptimConfig::default();
        adam_step(&mut p, &mut s, &cfg).unwrap();
        let w = p.store.get("w").unwrap().value().item().unwrap() as f64;
        // m̂ = 1, v̂ = 1, so the step is lr / (1 + ε).
        assert!((w + 1e-4 / (1.0 + 1e-8)).abs() < 1e-10);
        assert_eq!(s.step, 1);

        let mut q = scalar_model(0.5, Some(-3.0));
        adam_step(&mut q, &mut AdamState::default(), &cfg).unwrap();
        assert!(q.store.get("w").unwrap().value().item().unwrap() > 0.5);
    }

    #[test]
    fn zero_gradient_leaves_parameters_and_decays_moments() {
        let mut p = scalar_model(0.25, Some(0.0));
        let mut s = AdamState::default();
        s.m.insert("w".into(), Tensor::scalar(0.0));
        s.v.insert("w".into(), Tensor::scalar(0.0));
        adam_step(&mut p, &mut s, &OptimConfig::default()).unwrap();
        assert_eq!(p.store.get("w").unwrap().value().item().unwrap(), 0.25);

        let mut p = scalar_model(0.25, Some(2.0));
        let mut s = AdamState::default();
        adam_step(&mut p, &mut s, &OptimConfig::default()).unwrap();
        let m1 = s.m["w"].item().unwrap();
        p.store.clear_grads();
        p.store.get("w").unwrap().zero_grad();
        adam_step(&mut p, &mut s, &OptimConfig::default()).unwrap();
        assert_eq!(s.m["w"].item().unwrap(), (0.9 * m1 as f64) as f32);
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut p = scalar_model(0.0, None);
        let err =
            adam_step(&mut p, &mut AdamState::default(), &OptimConfig::default()).unwrap_err();
        assert!(matches!(err, Error::MissingGradient(ref n) if n == "w"));
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let data = tiny_data(1, 8);
        let mut cfg = tiny_config(2);
        cfg.optim.lr = 0.0;
        let mut t = Trainer::new(&data, cfg).unwrap();
        let before = crate::model::write_checkpoint(&t.params);
        t.run(|_, _| Ok(())).unwrap();
        assert_eq!(crate::model::write_checkpoint(&t.params), before);
    }

    #[test]
    fn every_parameter_receives_a_gradient() {
        let data = tiny_data(1, 8);
        for variant in Variant::ALL {
            let cfg = TrainConfig {
                variant,
                ..tiny_config(1)
            };
            let t = Trainer::new(&data, cfg.clone()).unwrap();
            let (input, target) = draw_batch(&data, &cfg, 1).unwrap();
            let out = synthesize(&t.params, &input).unwrap();
            let (total, r) = loss(&out.image, &target, &out.flow, &cfg.loss).unwrap();
            assert!(r.l1 > 0.0);
            total.backward().unwrap();
            for (name, node) in t.params.store.iter() {
                assert!(node.grad().is_some(), "{variant}: {name} has no gradient");
            }
        }
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let data = tiny_data(2, 8);
        let mut a = Trainer::new(&data, tiny_config(4)).unwrap();
        let log_a = a.run(|_, _| Ok(())).unwrap();

        let mut b = Trainer::new(&data, tiny_config(2)).unwrap();
        b.run(|_, _| Ok(())).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (ckpt, st) = b.save(dir.path()).unwrap();
        let params = crate::model::load_checkpoint(ckpt).unwrap();
        let state = load_state(st).unwrap();
        assert_eq!(state, b.state);
        let mut c = Trainer::resume(&data, tiny_config(4), params, state).unwrap();
        let log_c = c.run(|_, _| Ok(())).unwrap();
        assert_eq!(log_c.len(), 2);
        assert_eq!(log_c[1].total.to_bits(), log_a[3].total.to_bits());
        assert_eq!(
            crate::model::write_checkpoint(&c.params),
            crate::model::write_checkpoint(&a.params)
        );
    }

    #[test]
    fn batches_depend_only_on_seed_and_iteration() {
        let data = tiny_data(3, 8);
        let cfg = TrainConfig {
            crop: Some((6, 5)),
            ..tiny_config(1)
        };
        let (a, ta) = draw_batch(&data, &cfg, 7).unwrap();
        let (b, tb) = draw_batch(&data, &cfg, 7).unwrap();
        assert_eq!(a.image, b.image);
        assert_eq!(ta, tb);
        assert_eq!(a.offsets, b.offsets);
        assert_eq!(a.image.shape(), [2, 3, 6, 5]);
        let (c, _) = draw_batch(&data, &cfg, 8).unwrap();
        assert!(c.image != a.image || c.offsets != a.offsets);
    }

    #[test]
    fn divergence_reports_iteration() {
        let data = tiny_data(1, 8);
        let mut cfg = tiny_config(3);
        cfg.optim.lr = 1e30;
        let mut t = Trainer::new(&data, cfg).unwrap();
        let err = t.run(|_, _| Ok(())).unwrap_err();
        match err {
            Error::Diverged { iteration, .. } => assert!(iteration >= 2),
            other => panic!("expected divergence, got {other}"),
        }
    }

    #[test]
    fn log_csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("log.csv");
        let row = LogRow {
            iteration: 1,
            l1: 0.5,
            tv: 0.25,
            total: 0.75,
            wall_time: 1.5,
        };
        LogWriter::create(&p, false).unwrap().write(&row).unwrap();
        LogWriter::create(&p, true).unwrap().write(&row).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], LOG_HEADER);
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("1,5.0"));
    }
}
