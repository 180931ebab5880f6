//! Central finite-difference check of the joint loss gradient.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{Model, ModelParams, LossWeights, Reduction};
use crate::prompting::PromptExample;
use crate::rcd::ClueLabelSeq;
use crate::scalar::Scalar;
use crate::train::accumulate_example;

/// Denominator floor of the relative error, so that parameters whose true
/// gradient is zero do not divide by zero.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_tensor: String,
    pub worst_offset: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub n_checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Compares the analytic gradient of the joint loss with central differences
/// `(L(θ + ε) - L(θ - ε)) / 2ε` for every parameter. Dropout is off.
pub fn grad_check<T: Scalar>(
    model: &Model<T>,
    input: &PromptExample,
    clues: &ClueLabelSeq,
    target_word: u32,
    weights: LossWeights,
    reduction: Reduction,
    epsilon: f64,
) -> Result<GradCheckReport> {
    let mut grads = model.params.zeros_like();
    accumulate_example(
        model, input, clues, target_word, weights, reduction, 1.0, 0.0, None, &mut grads,
    )?;
    let analytic = grads.flat();

    let loss = |m: &Model<T>| -> Result<f64> {
        let mut scratch = ModelParams::zeros(&m.config);
        let l = accumulate_example(
            m, input, clues, target_word, weights, reduction, 0.0, 0.0, None, &mut scratch,
        )?;
        Ok(l.joint)
    };

    let specs = ModelParams::<T>::specs(&model.config);
    let mut probe = model.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_tensor: String::new(),
        worst_offset: 0,
        analytic: 0.0,
        numeric: 0.0,
        n_checked: analytic.len(),
    };
    let (mut tensor, mut base) = (0, 0);
    for (k, &a) in analytic.iter().enumerate() {
        while k >= base + specs[tensor].shape.iter().product::<usize>() {
            base += specs[tensor].shape.iter().product::<usize>();
            tensor += 1;
        }
        let original = *probe.params.scalar_mut(k);
        *probe.params.scalar_mut(k) = original + T::of(epsilon);
        let plus = loss(&probe)?;
        *probe.params.scalar_mut(k) = original - T::of(epsilon);
        let minus = loss(&probe)?;
        *probe.params.scalar_mut(k) = original;
        let numeric = (plus - minus) / (2.0 * epsilon);
        let err = relative_error(a.as_f64(), numeric);
        if err > report.max_relative_error {
            report.max_relative_error = err;
            report.worst_tensor = specs[tensor].name.clone();
            report.worst_offset = k - base;
            report.analytic = a.as_f64();
            report.numeric = numeric;
        }
    }
    Ok(report)
}
