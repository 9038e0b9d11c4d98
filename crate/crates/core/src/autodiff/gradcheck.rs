//! Central finite-difference verification of analytic gradients.

use std::fmt;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::node::Node;
use super::params::ParameterStore;
use crate::error::Result;

#[derive(Debug, Clone, Copy)]
pub struct GradcheckConfig {
    /// Coordinates sampled per parameter (all of them if the tensor is smaller).
    pub probes: usize,
    pub epsilon: f64,
    pub tolerance: f64,
    /// Denominator floor for the relative error, so that exact-zero
    /// gradients compare on an absolute scale.
    pub abs_floor: f64,
    /// When set, a probe whose one-sided differences disagree by more than
    /// this relative amount straddles a kink; it is skipped and redrawn.
    pub kink_tolerance: Option<f64>,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            probes: 8,
            epsilon: 1e-4,
            tolerance: 1e-3,
            abs_floor: 1e-6,
            kink_tolerance: None,
            seed: 0,
        }
    }
}

/// Outcome for one named parameter.
#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub probes: usize,
    pub max_rel_error: f64,
    /// Probes discarded as kink crossings.
    pub kinks: usize,
    /// Flat index, analytic and numeric value at the worst probe.
    pub worst: (usize, f64, f64),
}

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub entries: Vec<ParamCheck>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.entries
            .iter()
            .all(|e| e.max_rel_error < self.tolerance)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.entries
            .iter()
            .filter(|e| !(e.max_rel_error < self.tolerance))
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            let status = if e.max_rel_error < self.tolerance {
                "ok"
            } else {
                "FAIL"
            };
            writeln!(
                f,
                "  {:<16} probes {:>3}  max rel err {:.3e}  [{}] (at {}: analytic {:.6e}, numeric {:.6e})",
                e.name, e.probes, e.max_rel_error, status, e.worst.0, e.worst.1, e.worst.2
            )?;
            if e.kinks > 0 {
                writeln!(f, "  {:<16} skipped {} kink probes", "", e.kinks)?;
            }
        }
        Ok(())
    }
}

/// Compare the gradients produced by `backward` on `f(store)` with central
/// differences `(f(p + ε) - f(p - ε)) / 2ε` at randomly sampled coordinates
/// of every parameter. Failures are report entries, not errors; `Err` is
/// returned only if `f` itself fails.
pub fn gradcheck<F>(
    store: &mut ParameterStore<f64>,
    f: F,
    cfg: &GradcheckConfig,
) -> Result<GradcheckReport>
where
    F: Fn(&ParameterStore<f64>) -> Result<Node<f64>>,
{
    store.clear_grads();
    {
        let root = f(store)?;
        root.backward()?;
    }
    let analytic: Vec<(String, Option<Vec<f64>>)> = store
        .iter()
        .map(|(name, node)| (name.to_string(), node.grad().map(|g| g.into_data())))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut entries = Vec::with_capacity(analytic.len());
    for (name, grad) in analytic {
        let numel = store.get(&name)?.value().numel();
        let grad = grad.unwrap_or_else(|| vec![0.0; numel]);
        // Candidate order: every coordinate for small tensors, otherwise a
        // random permutation so kink probes can be replaced.
        let candidates: Vec<usize> = if numel <= cfg.probes {
            (0..numel).collect()
        } else {
            let take = if cfg.kink_tolerance.is_some() {
                numel.min(cfg.probes * 4)
            } else {
                cfg.probes
            };
            sample(&mut rng, numel, take).into_vec()
        };

        let base = match cfg.kink_tolerance {
            Some(_) => Some(f(store)?.value().item()?),
            None => None,
        };
        let mut worst = (0, 0.0, 0.0);
        let mut max_rel = 0.0f64;
        let mut used = 0;
        let mut kinks = 0;
        for &i in &candidates {
            if used == cfg.probes {
                break;
            }
            let original = store.value_mut(&name)?.data()[i];
            store.value_mut(&name)?.data_mut()[i] = original + cfg.epsilon;
            let plus = f(store)?.value().item()?;
            store.value_mut(&name)?.data_mut()[i] = original - cfg.epsilon;
            let minus = f(store)?.value().item()?;
            store.value_mut(&name)?.data_mut()[i] = original;

            if let (Some(tol), Some(f0)) = (cfg.kink_tolerance, base) {
                let fwd = (plus - f0) / cfg.epsilon;
                let bwd = (f0 - minus) / cfg.epsilon;
                let scale = fwd.abs().max(bwd.abs()).max(cfg.abs_floor);
                if (fwd - bwd).abs() / scale > tol {
                    kinks += 1;
                    continue;
                }
            }
            used += 1;
            let numeric = (plus - minus) / (2.0 * cfg.epsilon);
            let a = grad[i];
            let denom = a.abs().max(numeric.abs()).max(cfg.abs_floor);
            let rel = (a - numeric).abs() / denom;
            if !(rel <= max_rel) {
                max_rel = rel;
                worst = (i, a, numeric);
            }
        }
        if used == 0 && numel > 0 {
            // Every candidate straddled a kink: nothing was verified.
            max_rel = f64::INFINITY;
        }
        entries.push(ParamCheck {
            name,
            probes: used,
            kinks,
            max_rel_error: max_rel,
            worst,
        });
    }
    Ok(GradcheckReport {
        tolerance: cfg.tolerance,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::node::BackwardOp;
    use crate::autodiff::ops;
    use crate::tensor::Tensor;

    #[test]
    fn linear_function_is_exact() {
        let mut store = ParameterStore::new();
        store
            .insert("x", Tensor::new([3], vec![0.5, -1.0, 2.0]).unwrap())
            .unwrap();
        let report = gradcheck(
            &mut store,
            |s| ops::sum(&ops::scale(s.get("x")?, 3.0)?),
            &GradcheckConfig::default(),
        )
        .unwrap();
        assert!(report.passed());
        assert!(report.max_rel_error() < 1e-9, "{report}");
    }

    struct BrokenDouble;

    impl BackwardOp<f64> for BrokenDouble {
        fn name(&self) -> &'static str {
            "broken_double"
        }

        fn backward(
            &self,
            _output: &Tensor<f64>,
            _parents: &[Node<f64>],
            grad: &Tensor<f64>,
            _needs: &[bool],
        ) -> Result<Vec<Option<Tensor<f64>>>> {
            // correct rule would be 2 * grad
            Ok(vec![Some(grad.map(|g| 3.0 * g))])
        }
    }

    #[test]
    fn corrupted_rule_is_reported() {
        let mut store = ParameterStore::new();
        store
            .insert("x", Tensor::new([2], vec![0.5, 1.0]).unwrap())
            .unwrap();
        let report = gradcheck(
            &mut store,
            |s| {
                let x = s.get("x")?;
                let y = Node::from_op(
                    x.value().map(|v| 2.0 * v),
                    vec![x.clone()],
                    Box::new(BrokenDouble),
                )?;
                ops::sum(&y)
            },
            &GradcheckConfig::default(),
        )
        .unwrap();
        assert!(!report.passed());
        assert_eq!(report.failures().count(), 1);
    }
}
