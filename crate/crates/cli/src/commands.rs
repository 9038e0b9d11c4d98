use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use frvs::eval::{self, Predictor};
use frvs::formats;
use frvs::lightfield::{self, LightField, SceneConfig};
use frvs::model::{self, ModelParams};
use frvs::refocus::{self, RefocusRequest};
use frvs::train::{self, LogWriter, LossConfig, OptimConfig, TrainConfig, Trainer};
use frvs::verify::{self, SuiteOptions};
use frvs::warp::{CameraModel, ViewpointOffset, MAX_OFFSET};
use frvs::{autodiff::GradcheckConfig, Tensor};

use crate::{
    Baseline, Command, GenDataArgs, GradcheckArgs, GridArgs, InputArgs, RefocusArgs, SynthArgs,
    TrainArgs, EXIT_VERIFY,
};

/// Flag combinations that parse but make no sense together.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub fn run(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Synth(a) => synth(a),
        Command::Grid(a) => grid(a),
        Command::Refocus(a) => refocus_cmd(a),
        Command::Gradcheck(a) => gradcheck(a),
    }
    .map(|code| code.unwrap_or(ExitCode::SUCCESS))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn gen_data(a: GenDataArgs) -> Result<Option<ExitCode>> {
    if a.count == 0 || a.size == 0 || a.layers == 0 || a.grid == 0 {
        return Err(usage(
            "--count, --size, --layers and --grid must be positive",
        ));
    }
    let camera = CameraModel::new(a.baseline, a.focal).map_err(|e| usage(e.to_string()))?;
    let cfg = SceneConfig {
        height: a.size,
        width: a.size,
        layers: a.layers,
        camera,
        z_near: a.z_near,
        z_far: a.z_far,
    };
    create_dir(&a.out)?;
    for k in 0..a.count {
        let scene = lightfield::generate_scene(&cfg, a.seed.wrapping_add(k as u64))
            .map_err(|e| usage(e.to_string()))?;
        let lf = lightfield::render_lightfield(&scene, a.grid)?;
        if let Some(first) = lf.warnings.first() {
            eprintln!(
                "warning: scene {k}: {} view(s) exceed the flow bound, e.g. {first}",
                lf.warnings.len()
            );
        }
        let dir = a.out.join(format!("scene_{k:04}"));
        lightfield::save_lightfield(&lf, &dir)?;
    }
    println!(
        "wrote {} light field(s) of {g}×{g} views at {s}×{s} to {}",
        a.count,
        a.out.display(),
        g = a.grid,
        s = a.size
    );
    Ok(None)
}

/// A light-field directory, or every light-field subdirectory in name order.
pub fn load_dataset(dir: &Path) -> Result<Vec<LightField>> {
    if dir.join("lf.json").exists() {
        return Ok(vec![lightfield::load_lightfield(dir)?]);
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("lf.json").exists())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        bail!(
            "no light fields (directories with lf.json) under {}",
            dir.display()
        );
    }
    dirs.iter()
        .map(|d| lightfield::load_lightfield(d).map_err(Into::into))
        .collect()
}

fn train(a: TrainArgs) -> Result<Option<ExitCode>> {
    let config = TrainConfig {
        variant: a.variant,
        loss: LossConfig { alpha: a.alpha },
        optim: OptimConfig {
            lr: a.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            epsilon: a.adam_eps,
            batch_size: a.batch_size,
            iterations: a.iterations,
            seed: a.seed,
        },
        crop: a.crop,
        max_disp: a.max_disp,
    };
    config.optim.validate().map_err(|e| usage(e.to_string()))?;
    if !(a.alpha >= 0.0) {
        return Err(usage("--alpha must be non-negative"));
    }
    if a.max_disp.is_some_and(|m| !(m > 0.0)) {
        return Err(usage("--max-disp must be positive"));
    }
    let data = load_dataset(&a.data)?;
    if let Some((ch, cw)) = a.crop {
        if data.iter().any(|lf| ch > lf.height || cw > lf.width) {
            return Err(usage(format!("crop {ch}x{cw} exceeds the training views")));
        }
    }
    create_dir(&a.out)?;
    let ckpt = a.out.join("model.frvs");
    let state = a.out.join("model.state");
    let mut trainer = if a.resume {
        let params = model::load_checkpoint(&ckpt)?;
        let st = train::load_state(&state)?;
        Trainer::resume(&data, config.clone(), params, st)?
    } else {
        Trainer::new(&data, config.clone())?
    };
    let config_path = a.out.join("train_config.json");
    fs::write(&config_path, serde_json::to_string_pretty(&config)? + "\n")
        .with_context(|| format!("writing {}", config_path.display()))?;
    let log_path = a.log.clone().unwrap_or_else(|| a.out.join("train_log.csv"));
    let mut log = LogWriter::create(&log_path, a.resume)?;
    println!(
        "training {} on {} light field(s), {} parameters, max_disp {:.3} px, from iteration {}",
        config.variant,
        data.len(),
        trainer.params.num_parameters(),
        trainer.params.max_disp,
        trainer.iteration()
    );
    let result = trainer.run(|t, row| {
        log.write(row)?;
        if a.print_every > 0 && (row.iteration % a.print_every == 0 || row.iteration == 1) {
            println!(
                "iter {:>6}  l1 {:.6}  tv {:.6}  total {:.6}  {:.1}s",
                row.iteration, row.l1, row.tv, row.total, row.wall_time
            );
        }
        if a.checkpoint_every > 0 && row.iteration % a.checkpoint_every == 0 {
            t.save(&a.out)?;
        }
        Ok(())
    });
    if let Err(e) = result {
        return Err(anyhow::Error::new(e).context("training aborted; last checkpoint kept"));
    }
    trainer.save(&a.out)?;
    println!(
        "wrote {} and {} after {} iterations",
        ckpt.display(),
        state.display(),
        trainer.iteration()
    );
    Ok(None)
}

fn load_depth(path: &Path) -> Result<Tensor<f32>> {
    let is_pfm = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("pfm"));
    Ok(if is_pfm {
        formats::read_pfm(path)?
    } else {
        formats::load_gray_png(path)?
    })
}

/// Center image and depth, plus the light field when one was given.
fn load_input(input: &InputArgs) -> Result<(Tensor<f32>, Tensor<f32>, Option<LightField>)> {
    if let Some(dir) = &input.lightfield {
        let lf = lightfield::load_lightfield(dir)?;
        let depth = lf.require_depth()?.clone();
        return Ok((lf.center_view().clone(), depth, Some(lf)));
    }
    let (Some(img), Some(dp)) = (&input.image, &input.depth) else {
        return Err(usage(
            "an input is required: --lightfield DIR, or --image and --depth \
             (depth comes from an external estimator; it is never computed here)",
        ));
    };
    let image = formats::load_png(img)?;
    let depth = load_depth(dp)?;
    if image.shape()[1..] != depth.shape()[1..] {
        return Err(usage(format!(
            "image is {:?} but depth is {:?}",
            image.shape(),
            depth.shape()
        )));
    }
    Ok((image, depth, None))
}

fn synth(a: SynthArgs) -> Result<Option<ExitCode>> {
    let q = ViewpointOffset::new(a.u, a.v).map_err(|e| usage(e.to_string()))?;
    let params = model::load_checkpoint(&a.checkpoint)?;
    let (image, depth, _) = load_input(&a.input)?;
    let (mut views, mut flows) = eval::predict_views(&params, &image, &depth, &[q])?;
    let (view, flow) = (views.remove(0), flows.remove(0));
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    formats::save_png(&view, &a.out)?;
    let flo = a.out.with_extension("flo");
    formats::write_flo(&flow, &flo)?;
    if let Some(p) = &a.flow_png {
        formats::save_png(&eval::flow_visualize(&flow, Some(params.max_disp))?, p)?;
    }
    let max_flow = flow.data().iter().fold(0f32, |m, v| m.max(v.abs()));
    println!("wrote {} and {}", a.out.display(), flo.display());
    println!("MAE vs input: {:.6}", eval::mae(&view, &image)?);
    println!(
        "max |flow component|: {max_flow:.4} px (bound {:.4})",
        params.max_disp
    );
    Ok(None)
}

/// Offsets of the 7×7 grid around a center at (3, 3), with their positions.
fn square_grid() -> Vec<(usize, usize, ViewpointOffset)> {
    let n = 2 * MAX_OFFSET as usize + 1;
    let c = MAX_OFFSET as usize;
    (0..n)
        .flat_map(|r| (0..n).map(move |col| (r, col)))
        .filter(|&rc| rc != (c, c))
        .map(|(r, col)| {
            let q = ViewpointOffset::new(col as f64 - c as f64, r as f64 - c as f64)
                .expect("grid offsets are in range");
            (r, col, q)
        })
        .collect()
}

fn grid(a: GridArgs) -> Result<Option<ExitCode>> {
    let params = a
        .checkpoint
        .as_ref()
        .map(model::load_checkpoint)
        .transpose()?;
    let (image, depth, lf) = load_input(&a.input)?;
    create_dir(&a.out)?;
    let predictor = match (&params, a.baseline) {
        (Some(p), _) => Predictor::Model(p),
        (None, Some(Baseline::CopyCenter)) => Predictor::CopyCenter,
        (None, Some(Baseline::GtFlow)) => Predictor::GroundTruthFlow,
        (None, None) => return Err(usage("--checkpoint or --baseline is required")),
    };
    match &lf {
        Some(lf) => {
            let ev = eval::evaluate_grid(predictor, lf)?;
            let (r0, c0) = lf.center;
            formats::save_png(&image, a.out.join(format!("view_{r0}_{c0}.png")))?;
            for (v, pred) in ev.record.views.iter().zip(&ev.predictions) {
                formats::save_png(pred, a.out.join(format!("view_{}_{}.png", v.row, v.col)))?;
            }
            ev.save(&a.out)?;
            println!("{}", ev.record);
            println!(
                "wrote {} views, metrics.csv and heatmaps to {}",
                ev.predictions.len() + 1,
                a.out.display()
            );
        }
        None => {
            let cells = square_grid();
            let views: Vec<Tensor<f32>> = match predictor {
                Predictor::Model(p) => {
                    let offsets: Vec<ViewpointOffset> = cells.iter().map(|t| t.2).collect();
                    eval::predict_views(p, &image, &depth, &offsets)?.0
                }
                Predictor::CopyCenter => vec![image.clone(); cells.len()],
                Predictor::GroundTruthFlow => {
                    return Err(usage("--baseline gt-flow needs a --lightfield with flows"))
                }
            };
            let c = MAX_OFFSET as usize;
            formats::save_png(&image, a.out.join(format!("view_{c}_{c}.png")))?;
            for (&(r, col, _), v) in cells.iter().zip(&views) {
                formats::save_png(v, a.out.join(format!("view_{r}_{col}.png")))?;
            }
            println!(
                "wrote {} views to {} (no ground truth, metrics skipped)",
                views.len() + 1,
                a.out.display()
            );
        }
    }
    Ok(None)
}

/// A 7×7 light field synthesized from one image.
pub fn synthesized_lightfield(
    params: &ModelParams<f32>,
    image: &Tensor<f32>,
    depth: &Tensor<f32>,
) -> Result<LightField> {
    let cells = square_grid();
    let offsets: Vec<ViewpointOffset> = cells.iter().map(|t| t.2).collect();
    let (pred, _) = eval::predict_views(params, image, depth, &offsets)?;
    let n = 2 * MAX_OFFSET as usize + 1;
    let c = MAX_OFFSET as usize;
    let mut views = vec![image.clone(); n * n];
    for (&(r, col, _), v) in cells.iter().zip(pred) {
        views[r * n + col] = v;
    }
    let (_, h, w) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    Ok(LightField {
        grid: n,
        center: (c, c),
        height: h,
        width: w,
        views,
        depth: Some(depth.clone()),
        flows: None,
        occlusion: None,
        camera: None,
        layer_disparities: Vec::new(),
        warnings: Vec::new(),
    })
}

fn refocus_cmd(a: RefocusArgs) -> Result<Option<ExitCode>> {
    let slopes = match &a.sweep {
        Some(s) => crate::parse_sweep(s).map_err(usage)?,
        None => a.slopes.clone(),
    };
    if slopes.is_empty() || slopes.iter().any(|s| !s.is_finite()) {
        return Err(usage("at least one finite slope is required"));
    }
    let lf = match &a.checkpoint {
        Some(ck) => {
            let params = model::load_checkpoint(ck)?;
            let (image, depth, _) = load_input(&a.input)?;
            synthesized_lightfield(&params, &image, &depth)?
        }
        None => match &a.input.lightfield {
            Some(dir) => lightfield::load_lightfield(dir)?,
            None => {
                return Err(usage(
                    "refocus needs --lightfield DIR, or --checkpoint with an image and depth",
                ))
            }
        },
    };
    create_dir(&a.out)?;
    let mut csv = String::from("index,slope,sharpness\n");
    for (i, &slope) in slopes.iter().enumerate() {
        let img = refocus::refocus(&lf, &RefocusRequest::new(slope))?;
        let sharp = refocus::laplacian_variance(&img, None)?;
        formats::save_png(&img, a.out.join(format!("refocus_{i:03}.png")))?;
        writeln!(csv, "{i},{slope},{sharp:.9e}").expect("string write");
        println!("slope {slope:>8.4}  sharpness {sharp:.6e}");
    }
    let p = a.out.join("sharpness.csv");
    fs::write(&p, csv).with_context(|| format!("writing {}", p.display()))?;
    println!(
        "wrote {} refocused images to {}",
        slopes.len(),
        a.out.display()
    );
    Ok(None)
}

fn gradcheck(a: GradcheckArgs) -> Result<Option<ExitCode>> {
    if a.list {
        for s in verify::SUITES {
            println!("{s}");
        }
        return Ok(None);
    }
    if a.probes == 0 {
        return Err(usage("--probes must be positive"));
    }
    let opts = SuiteOptions {
        only: a.only.clone(),
        inject_bug: a.inject_bug,
        gradcheck: GradcheckConfig {
            probes: a.probes,
            seed: a.seed,
            ..GradcheckConfig::default()
        },
    };
    let start = Instant::now();
    let outcomes = verify::run_suites(&opts)?;
    if outcomes.is_empty() {
        return Err(usage(format!("no suite matches {:?}", a.only)));
    }
    let mut failed = 0;
    for o in &outcomes {
        let status = if o.passed() { "PASS" } else { "FAIL" };
        println!(
            "{status} {:<16} max rel err {:.3e}  ({:.2}s)",
            o.name,
            o.report.max_rel_error(),
            o.seconds
        );
        print!("{}", o.report);
        if !o.passed() {
            failed += 1;
        }
    }
    println!(
        "{} of {} suites passed in {:.1}s (tolerance {:.0e})",
        outcomes.len() - failed,
        outcomes.len(),
        start.elapsed().as_secs_f64(),
        opts.gradcheck.tolerance
    );
    Ok((failed > 0).then(|| ExitCode::from(EXIT_VERIFY)))
}
