//! Finite-difference gradient suites over every differentiable op and the
//! end-to-end model, in double precision at toy sizes.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{
    gradcheck, ops, BackwardOp, GradcheckConfig, GradcheckReport, Node, ParameterStore,
};
use crate::error::Result;
use crate::model::{init_model, synthesize, ModelInput, ModelParams, Variant};
use crate::tensor::Tensor;
use crate::train::{loss, LossConfig};
use crate::warp::{bilinear_warp, tv_loss, ViewpointOffset};

/// Result of one suite.
#[derive(Debug, Clone)]
pub struct SuiteOutcome {
    pub name: String,
    pub report: GradcheckReport,
    pub seconds: f64,
}

impl SuiteOutcome {
    pub fn passed(&self) -> bool {
        self.report.passed()
    }
}

#[derive(Debug, Clone, Default)]
pub struct SuiteOptions {
    /// Run only suites whose name starts with one of these prefixes.
    pub only: Vec<String>,
    /// Replace one backward rule with a wrong one (negative control).
    pub inject_bug: bool,
    pub gradcheck: GradcheckConfig,
}

/// Names of every suite, in run order.
pub const SUITES: &[&str] = &[
    "conv1",
    "conv3",
    "conv5",
    "conv7",
    "conv3_stride2",
    "conv_relu",
    "relu",
    "tanh",
    "abs",
    "scale_add_sub",
    "mean",
    "concat",
    "upsample",
    "warp",
    "tv",
    "loss",
    "model_full",
    "model_no_depth",
    "model_encdec",
];

/// Gradient of `scale` with the constant doubled.
struct WrongScale(f64);

impl BackwardOp<f64> for WrongScale {
    fn name(&self) -> &'static str {
        "wrong_scale"
    }

    fn backward(
        &self,
        _output: &Tensor<f64>,
        _parents: &[Node<f64>],
        grad: &Tensor<f64>,
        _needs: &[bool],
    ) -> Result<Vec<Option<Tensor<f64>>>> {
        Ok(vec![Some(grad.map(|g| 2.0 * self.0 * g))])
    }
}

fn scale_op(x: &Node<f64>, c: f64, wrong: bool) -> Result<Node<f64>> {
    if wrong {
        Node::from_op(
            x.value().map(|v| v * c),
            vec![x.clone()],
            Box::new(WrongScale(c)),
        )
    } else {
        ops::scale(x, c)
    }
}

/// Values uniform in `±[lo, hi]`, keeping clear of the kink at zero.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| {
        let m = rng.random_range(lo..hi);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(lo..hi))
}

fn store(entries: Vec<(&str, Tensor<f64>)>) -> ParameterStore<f64> {
    let mut s = ParameterStore::new();
    for (n, t) in entries {
        s.insert(n, t).expect("unique suite parameter names");
    }
    s
}

/// Flow whose sample positions sit 0.3 to 0.7 past an integer, some of
/// them outside the image so that edge clamping is exercised.
fn warp_flow(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| {
        rng.random_range(-3i32..=3) as f64 + rng.random_range(0.3..0.7)
    })
}

fn conv_suite(
    rng: &mut ChaCha8Rng,
    k: usize,
    stride: usize,
    relu: bool,
    cfg: &GradcheckConfig,
) -> Result<GradcheckReport> {
    let mut s = store(vec![
        ("input", uniform(rng, &[2, 2, 7, 7], -1.0, 1.0)),
        ("weight", uniform(rng, &[3, 2, k, k], -0.5, 0.5)),
        ("bias", uniform(rng, &[3], -0.2, 0.2)),
    ]);
    gradcheck(
        &mut s,
        |p| {
            let y = ops::conv2d_strided(
                p.get("input")?,
                p.get("weight")?,
                p.get("bias")?,
                stride,
                (k - 1) / 2,
            )?;
            let y = if relu { ops::relu(&y)? } else { y };
            ops::sum(&ops::tanh(&y)?)
        },
        cfg,
    )
}

fn model_suite(
    rng: &mut ChaCha8Rng,
    variant: Variant,
    cfg: &GradcheckConfig,
) -> Result<GradcheckReport> {
    let p32 = init_model(variant, rng.random(), 2.0)?;
    let params: ModelParams<f64> = p32.cast();
    let image = uniform(rng, &[1, 3, 8, 8], 0.0, 1.0);
    let depth = uniform(rng, &[1, 1, 8, 8], 0.0, 1.0);
    let target = uniform(rng, &[1, 3, 8, 8], 0.0, 1.0);
    let input = ModelInput::new(image, depth, vec![ViewpointOffset::new(1.5, -2.0)?])?;
    let mut s = params.store.clone();
    let lcfg = LossConfig { alpha: 0.01 };
    // ReLU, L1 and bilinear kinks are dense across a whole network: a bias
    // step of 1e-4 moves every pixel and lands on several of them. A smaller
    // step makes crossings rare and the ones left are redrawn.
    let cfg = &GradcheckConfig {
        kink_tolerance: Some(cfg.kink_tolerance.unwrap_or(cfg.tolerance)),
        epsilon: 1e-6,
        ..*cfg
    };
    gradcheck(
        &mut s,
        |store| {
            let m = ModelParams {
                variant,
                max_disp: params.max_disp,
                store: store.alias(),
            };
            let out = synthesize(&m, &input)?;
            Ok(loss(&out.image, &target, &out.flow, &lcfg)?.0)
        },
        cfg,
    )
}

fn run_one(name: &str, rng: &mut ChaCha8Rng, opts: &SuiteOptions) -> Result<GradcheckReport> {
    let cfg = &opts.gradcheck;
    let bug = opts.inject_bug;
    match name {
        "conv1" => conv_suite(rng, 1, 1, false, cfg),
        "conv3" => conv_suite(rng, 3, 1, false, cfg),
        "conv5" => conv_suite(rng, 5, 1, false, cfg),
        "conv7" => conv_suite(rng, 7, 1, false, cfg),
        "conv3_stride2" => conv_suite(rng, 3, 2, false, cfg),
        "conv_relu" => conv_suite(rng, 3, 1, true, cfg),
        "relu" => {
            let mut s = store(vec![("x", away_from_zero(rng, &[2, 3, 4], 0.05, 1.0))]);
            gradcheck(
                &mut s,
                |p| ops::sum(&ops::tanh(&ops::scale(&ops::relu(p.get("x")?)?, 1.7)?)?),
                cfg,
            )
        }
        "tanh" => {
            let mut s = store(vec![("x", uniform(rng, &[2, 3, 4], -2.0, 2.0))]);
            gradcheck(&mut s, |p| ops::sum(&ops::tanh(p.get("x")?)?), cfg)
        }
        "abs" => {
            let mut s = store(vec![("x", away_from_zero(rng, &[3, 5], 0.05, 1.0))]);
            gradcheck(
                &mut s,
                |p| ops::sum(&ops::tanh(&ops::abs(p.get("x")?)?)?),
                cfg,
            )
        }
        "scale_add_sub" => {
            let mut s = store(vec![
                ("a", uniform(rng, &[3, 4], -1.0, 1.0)),
                ("b", uniform(rng, &[3, 4], -1.0, 1.0)),
            ]);
            gradcheck(
                &mut s,
                |p| {
                    let (a, b) = (p.get("a")?, p.get("b")?);
                    let y = ops::add(&scale_op(a, 0.7, bug)?, &ops::sub(&ops::tanh(b)?, a)?)?;
                    ops::sum(&ops::tanh(&y)?)
                },
                cfg,
            )
        }
        "mean" => {
            let mut s = store(vec![("x", uniform(rng, &[2, 2, 3, 3], -1.0, 1.0))]);
            gradcheck(&mut s, |p| ops::mean(&ops::tanh(p.get("x")?)?), cfg)
        }
        "concat" => {
            let mut s = store(vec![
                ("a", uniform(rng, &[1, 2, 3, 3], -1.0, 1.0)),
                ("b", uniform(rng, &[1, 1, 3, 3], -1.0, 1.0)),
                ("c", uniform(rng, &[1, 3, 3, 3], -1.0, 1.0)),
            ]);
            let weight = uniform(rng, &[2, 6, 1, 1], -1.0, 1.0);
            gradcheck(
                &mut s,
                |p| {
                    let x = ops::concat_channels(&[
                        p.get("a")?.clone(),
                        p.get("b")?.clone(),
                        p.get("c")?.clone(),
                    ])?;
                    // A 1×1 conv mixes channels so each part's slice matters.
                    let y = ops::conv2d(
                        &x,
                        &Node::constant(weight.clone()),
                        &Node::constant(Tensor::zeros([2])),
                        0,
                    )?;
                    ops::sum(&ops::tanh(&y)?)
                },
                cfg,
            )
        }
        "upsample" => {
            let mut s = store(vec![("x", uniform(rng, &[1, 2, 3, 4], -1.0, 1.0))]);
            gradcheck(
                &mut s,
                |p| ops::sum(&ops::tanh(&ops::upsample_nearest2(p.get("x")?)?)?),
                cfg,
            )
        }
        "warp" => {
            let mut s = store(vec![
                ("image", uniform(rng, &[2, 3, 6, 7], 0.0, 1.0)),
                ("flow", warp_flow(rng, &[2, 2, 6, 7])),
            ]);
            gradcheck(
                &mut s,
                |p| {
                    ops::sum(&ops::tanh(&ops::scale(
                        &bilinear_warp(p.get("image")?, p.get("flow")?)?,
                        2.0,
                    )?)?)
                },
                cfg,
            )
        }
        "tv" => {
            let mut s = store(vec![("flow", uniform(rng, &[2, 2, 5, 6], -3.0, 3.0))]);
            gradcheck(&mut s, |p| tv_loss(p.get("flow")?), cfg)
        }
        "loss" => {
            let target = uniform(rng, &[2, 3, 5, 5], 0.0, 1.0);
            let offset = away_from_zero(rng, &[2, 3, 5, 5], 0.05, 0.5);
            let mut pred = target.clone();
            pred.add_assign(&offset)?;
            let mut s = store(vec![
                ("pred", pred),
                ("flow", uniform(rng, &[2, 2, 5, 5], -2.0, 2.0)),
            ]);
            let lcfg = LossConfig { alpha: 0.5 };
            gradcheck(
                &mut s,
                |p| Ok(loss(p.get("pred")?, &target, p.get("flow")?, &lcfg)?.0),
                cfg,
            )
        }
        "model_full" => model_suite(rng, Variant::Full, cfg),
        "model_no_depth" => model_suite(rng, Variant::NoDepth, cfg),
        "model_encdec" => model_suite(rng, Variant::EncDec, cfg),
        other => Err(crate::Error::InvalidArgument(format!(
            "unknown gradcheck suite {other:?}"
        ))),
    }
}

/// Run the selected suites. Each suite draws its data from a generator
/// seeded by the suite's position, so subsets reproduce the full run.
pub fn run_suites(opts: &SuiteOptions) -> Result<Vec<SuiteOutcome>> {
    let mut out = Vec::new();
    for (i, &name) in SUITES.iter().enumerate() {
        if !opts.only.is_empty() && !opts.only.iter().any(|p| name.starts_with(p.as_str())) {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(opts.gradcheck.seed.wrapping_add(i as u64 * 7919));
        let t = Instant::now();
        let report = run_one(name, &mut rng, opts)?;
        out.push(SuiteOutcome {
            name: name.to_string(),
            report,
            seconds: t.elapsed().as_secs_f64(),
        });
    }
    Ok(out)
}
