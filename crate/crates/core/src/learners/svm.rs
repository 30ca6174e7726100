use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use super::{check_training_input, require_both_classes};
use crate::error::{PersError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SvmParams {
    pub c: f64,
    pub epochs: usize,
    pub class_weight: ClassWeight,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams {
            c: 1.0,
            epochs: 200,
            class_weight: ClassWeight::Balanced,
        }
    }
}

/// Per-class multiplier on the hinge loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassWeight {
    /// Every row counts once.
    Uniform,
    /// Rows of class `c` weigh `n / (2 n_c)`, so both classes carry equal
    /// total loss.
    Balanced,
}

/// Linear decision function `w . x + b` in the original feature space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub c: f64,
}

impl SvmModel {
    pub fn decision_values(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.weights.len() {
            return Err(PersError::Dimension(format!(
                "svm expects {} features, got {}",
                self.weights.len(),
                x.ncols()
            )));
        }
        super::check_finite(x)?;
        Ok(x.rows()
            .into_iter()
            .map(|r| r.iter().zip(&self.weights).map(|(a, w)| a * w).sum::<f64>() + self.bias)
            .collect())
    }

    /// `decision >= 0` is the positive class.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<bool>> {
        Ok(self.decision_values(x)?.into_iter().map(|v| v >= 0.0).collect())
    }
}

/// Soft-margin linear SVM, `1/2 |w|^2 + C sum c_i hinge_i`, trained by full-batch
/// Pegasos sub-gradient steps on standardized features with the bias as an
/// extra (regularized) coordinate. The returned hyperplane is the average of
/// the second half of the iterates, mapped back to raw feature units.
pub fn fit_linear_svm(x: ArrayView2<f64>, y: &[bool], params: &SvmParams) -> Result<SvmModel> {
    if !(params.c > 0.0 && params.c.is_finite()) {
        return Err(PersError::Config(format!("svm C must be positive, got {}", params.c)));
    }
    if params.epochs == 0 {
        return Err(PersError::Config("svm epochs must be at least 1".into()));
    }
    check_training_input(x, y)?;
    require_both_classes(y)?;
    let (n, d) = x.dim();

    let mut mean = vec![0.0; d];
    let mut scale = vec![0.0; d];
    for j in 0..d {
        let col = x.column(j);
        let m = col.sum() / n as f64;
        mean[j] = m;
        // rounding in the mean would give a constant column a tiny variance
        if col.iter().all(|&v| v == col[0]) {
            continue;
        }
        let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
        scale[j] = if var > 0.0 { 1.0 / var.sqrt() } else { 0.0 };
    }
    // standardized rows with a trailing constant 1 for the bias
    let z: Vec<Vec<f64>> = x
        .rows()
        .into_iter()
        .map(|r| {
            let mut v: Vec<f64> = (0..d).map(|j| (r[j] - mean[j]) * scale[j]).collect();
            v.push(1.0);
            v
        })
        .collect();
    let sign: Vec<f64> = y.iter().map(|&v| if v { 1.0 } else { -1.0 }).collect();
    let n_pos = y.iter().filter(|&&v| v).count() as f64;
    let (w_pos, w_neg) = match params.class_weight {
        ClassWeight::Uniform => (1.0, 1.0),
        ClassWeight::Balanced => (n as f64 / (2.0 * n_pos), n as f64 / (2.0 * (n as f64 - n_pos))),
    };
    let weight: Vec<f64> = y.iter().map(|&v| if v { w_pos } else { w_neg }).collect();

    let lambda = 1.0 / (params.c * n as f64);
    let radius = 1.0 / lambda.sqrt();
    let mut w = vec![0.0; d + 1];
    let mut avg = vec![0.0; d + 1];
    let mut n_avg = 0usize;
    let start_avg = params.epochs / 2 + 1;
    let mut step = vec![0.0; d + 1];
    for t in 1..=params.epochs {
        step.iter_mut().for_each(|s| *s = 0.0);
        for ((zi, &si), &ci) in z.iter().zip(&sign).zip(&weight) {
            let margin = si * zi.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
            if margin < 1.0 {
                for (s, a) in step.iter_mut().zip(zi) {
                    *s += ci * si * a;
                }
            }
        }
        let tf = t as f64;
        for (wk, sk) in w.iter_mut().zip(&step) {
            *wk = (1.0 - 1.0 / tf) * *wk + params.c / tf * sk;
        }
        let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > radius {
            let f = radius / norm;
            w.iter_mut().for_each(|v| *v *= f);
        }
        if t >= start_avg {
            n_avg += 1;
            for (a, wk) in avg.iter_mut().zip(&w) {
                *a += (wk - *a) / n_avg as f64;
            }
        }
    }

    let weights: Vec<f64> = (0..d).map(|j| avg[j] * scale[j]).collect();
    let bias = avg[d] - (0..d).map(|j| avg[j] * scale[j] * mean[j]).sum::<f64>();
    if weights.iter().any(|v| !v.is_finite()) || !bias.is_finite() {
        return Err(PersError::NonFiniteInput("svm produced non-finite parameters".into()));
    }
    Ok(SvmModel {
        weights,
        bias,
        c: params.c,
    })
}
