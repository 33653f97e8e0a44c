//! Dataset-free self checks: layer shapes, gradients, Adam and the reference
//! confusion-matrix rates.

use crate::gradcheck::{finite_diff_check_with, Faults, GradCheckLayer};
use crate::metrics::{metrics, ConfusionCounts};
use crate::model::{
    build_arch, numbered_shapes, shape_trace_with, ModelParams, PoolRounding, REFERENCE_SHAPES_8S,
};
use crate::nn::PoolSpec;
use crate::train::{adam_step, AdamState, TrainConfig};

/// Largest accepted relative error for any gradient check.
pub const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Faults injected to prove the checks can fail.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct VerifyHooks {
    pub floor_pooling: bool,
    pub conv_grad_offset: f64,
}

fn check(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> CheckResult {
    CheckResult {
        name: name.into(),
        passed,
        detail: detail.into(),
    }
}

pub fn shape_checks(hooks: &VerifyHooks) -> Vec<CheckResult> {
    let rounding = if hooks.floor_pooling {
        PoolRounding::Floor
    } else {
        PoolRounding::AsDeclared
    };
    let trace = build_arch(8, 1024.0, 64, 20).and_then(|a| shape_trace_with(&a, rounding));
    let shapes = match trace {
        Ok(t) => numbered_shapes(&t),
        Err(e) => return vec![check("layer shapes (8 s)", false, e.to_string())],
    };
    REFERENCE_SHAPES_8S
        .iter()
        .enumerate()
        .map(|(i, want)| {
            let got = shapes.get(i);
            let name = format!("layer shape row {}", i + 1);
            match got {
                Some(g) if g == want => check(name, true, format!("{g}")),
                Some(g) => check(name, false, format!("expected {want}, got {g}")),
                None => check(name, false, format!("expected {want}, layer missing")),
            }
        })
        .collect()
}

pub fn gradient_checks(hooks: &VerifyHooks) -> Vec<CheckResult> {
    let faults = Faults {
        conv_weight_grad_offset: hooks.conv_grad_offset,
    };
    let cases = [
        (
            "gradient conv",
            GradCheckLayer::Conv {
                in_maps: 2,
                height: 3,
                width: 9,
                out_maps: 3,
                kernel_h: 2,
                kernel_w: 3,
            },
        ),
        (
            "gradient dense",
            GradCheckLayer::Dense {
                in_features: 7,
                out_features: 4,
            },
        ),
        (
            "gradient max-pool",
            GradCheckLayer::MaxPool {
                maps: 2,
                height: 2,
                width: 11,
                spec: PoolSpec::new(3, 3),
            },
        ),
        ("gradient relu", GradCheckLayer::Relu { len: 20 }),
        ("gradient dropout", GradCheckLayer::Dropout { len: 20, rate: 0.3 }),
        ("gradient softmax cross-entropy", GradCheckLayer::SoftmaxXent { classes: 2 }),
        ("gradient micro-network", GradCheckLayer::MicroNet { channels: 3, steps: 24 }),
    ];
    cases
        .iter()
        .map(|(name, layer)| match finite_diff_check_with(layer, 17, faults) {
            Ok(err) => check(*name, err <= GRAD_TOLERANCE, format!("max relative error {err:.3e}")),
            Err(e) => check(*name, false, e.to_string()),
        })
        .collect()
}

pub fn adam_check() -> CheckResult {
    let name = "adam three steps";
    let run = || -> crate::Result<f64> {
        let arch = crate::model::build_arch_with_pooling(1, 160, 1, [(2, 2); 4], 0.0)?;
        let mut p = ModelParams::<f64>::zeros(&arch)?;
        let mut g = p.clone();
        g.tensors_mut().for_each(|t| t.data_mut().fill(1.0));
        let cfg = TrainConfig::default();
        let mut state = AdamState::new(&p);
        let mut worst = 0.0f64;
        for step in 1..=3 {
            adam_step(&mut p, &g, &mut state, &cfg)?;
            let want = -(step as f64) * cfg.learning_rate / (1.0 + cfg.adam_eps);
            for t in p.tensors() {
                worst = t.data().iter().fold(worst, |w, &x| w.max((x - want).abs()));
            }
        }
        Ok(worst)
    };
    match run() {
        Ok(err) => check(name, err <= 1e-12, format!("max abs error {err:.3e}")),
        Err(e) => check(name, false, e.to_string()),
    }
}

pub fn metric_checks() -> Vec<CheckResult> {
    let m = match metrics(&ConfusionCounts::new(441, 431, 34, 44)) {
        Ok(m) => m,
        Err(e) => return vec![check("metrics", false, e.to_string())],
    };
    // reference percentages and how far ours may sit from them
    let rows = [
        ("metric accuracy", Some(m.accuracy), 91.78, 0.02),
        ("metric precision (reported as sensitivity)", m.precision, 92.84, 0.01),
        ("metric npv (reported as specificity)", m.npv, 90.73, 0.02),
    ];
    rows.iter()
        .map(|&(name, value, reference, tol)| match value {
            Some(v) => {
                let pct = 100.0 * v;
                check(
                    name,
                    (pct - reference).abs() <= tol + 1e-9,
                    format!("{pct:.3}% vs {reference}%"),
                )
            }
            None => check(name, false, "undefined"),
        })
        .collect()
}

pub fn run_checks(hooks: &VerifyHooks) -> Vec<CheckResult> {
    let mut out = shape_checks(hooks);
    out.extend(gradient_checks(hooks));
    out.push(adam_check());
    out.extend(metric_checks());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pristine_build_passes_everything() {
        let results = run_checks(&VerifyHooks::default());
        let failed: Vec<_> = results.iter().filter(|r| !r.passed).collect();
        assert!(failed.is_empty(), "{failed:?}");
        assert_eq!(results.len(), 12 + 7 + 1 + 3);
    }

    #[test]
    fn floor_pooling_fails_row_five() {
        let results = shape_checks(&VerifyHooks {
            floor_pooling: true,
            ..Default::default()
        });
        let row5 = &results[4];
        assert!(!row5.passed);
        assert!(row5.detail.contains("1021"), "{}", row5.detail);
    }

    #[test]
    fn perturbed_conv_gradient_fails() {
        let results = gradient_checks(&VerifyHooks {
            conv_grad_offset: 1e-2,
            ..Default::default()
        });
        assert!(!results[0].passed);
        assert!(!results.last().unwrap().passed);
        assert!(results[1].passed);
    }
}
