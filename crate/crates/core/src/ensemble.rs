//! Domain types for prediction combination, the three error metrics, the
//! diversity measure, and the two error decompositions used as diagnostics.

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Targets smaller than this are skipped in the MAPE sum instead of dividing
/// by (near) zero.
pub const MAPE_ZERO_GUARD: f64 = 1e-12;

/// Tolerance on `sum(w) == 1` for weight vectors.
pub const WEIGHT_SUM_TOL: f64 = 1e-9;

/// An n-sample by m-model block of sub-model predictions, aligned with the
/// ground truth they were produced for.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMatrix {
    values: Array2<f64>,
    y_true: Array1<f64>,
    model_names: Vec<String>,
}

impl PredictionMatrix {
    /// Validates shapes, finiteness, and name uniqueness.
    pub fn new(values: Array2<f64>, y_true: Array1<f64>, model_names: Vec<String>) -> Result<Self> {
        let (n, m) = values.dim();
        if n == 0 || m == 0 {
            return Err(Error::InvalidInput("prediction matrix needs n >= 1 and m >= 1".into()));
        }
        if y_true.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "y_true has {} entries for {} rows",
                y_true.len(),
                n
            )));
        }
        if model_names.len() != m {
            return Err(Error::DimensionMismatch(format!(
                "{} model names for {} columns",
                model_names.len(),
                m
            )));
        }
        if values.iter().any(|v| !v.is_finite()) || y_true.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite entry in predictions or targets".into()));
        }
        for (i, a) in model_names.iter().enumerate() {
            for b in model_names.iter().skip(i + 1) {
                if a == b {
                    return Err(Error::InvalidInput(format!("duplicate model name `{a}`")));
                }
            }
        }
        Ok(Self { values, y_true, model_names })
    }

    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_models(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn y_true(&self) -> &Array1<f64> {
        &self.y_true
    }

    pub fn model_names(&self) -> &[String] {
        &self.model_names
    }

    pub fn column(&self, j: usize) -> ArrayView1<'_, f64> {
        self.values.column(j)
    }

    /// Per-model MSE against the stored ground truth.
    pub fn member_mse(&self) -> Array1<f64> {
        let n = self.n_samples() as f64;
        Array1::from_iter((0..self.n_models()).map(|j| {
            self.column(j)
                .iter()
                .zip(self.y_true.iter())
                .map(|(f, y)| (f - y) * (f - y))
                .sum::<f64>()
                / n
        }))
    }

    /// Restricts to the given columns, preserving their order.
    pub fn select_columns(&self, keep: &[usize]) -> Result<Self> {
        if keep.is_empty() {
            return Err(Error::InvalidInput("column selection is empty".into()));
        }
        let mut values = Array2::zeros((self.n_samples(), keep.len()));
        let mut names = Vec::with_capacity(keep.len());
        for (dst, &j) in keep.iter().enumerate() {
            if j >= self.n_models() {
                return Err(Error::InvalidInput(format!("column index {j} out of range")));
            }
            values.column_mut(dst).assign(&self.column(j));
            names.push(self.model_names[j].clone());
        }
        Self::new(values, self.y_true.clone(), names)
    }
}

/// Convex-combination weights over m sub-models.
///
/// [`WeightVector::simplex`] enforces the full simplex invariant (entries in
/// [0, 1], summing to 1). [`WeightVector::affine`] only requires the sum to be
/// 1 and is used by combiners that legitimately produce negative weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn simplex(w: Vec<f64>) -> Result<Self> {
        let v = Self::affine(w)?;
        if v.0.iter().any(|&x| !(-WEIGHT_SUM_TOL..=1.0 + WEIGHT_SUM_TOL).contains(&x)) {
            return Err(Error::InvalidInput("weight outside [0, 1]".into()));
        }
        Ok(v)
    }

    pub fn affine(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::InvalidInput("empty weight vector".into()));
        }
        if w.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("non-finite weight".into()));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidInput(format!("weights sum to {sum}, expected 1")));
        }
        Ok(Self(w))
    }

    /// Uniform weights 1/m.
    pub fn uniform(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidInput("m must be >= 1".into()));
        }
        // Build as 1/m then fix the last entry so the sum is exactly 1.0.
        let mut w = vec![1.0 / m as f64; m];
        let partial: f64 = w[..m - 1].iter().sum();
        w[m - 1] = 1.0 - partial;
        Self::simplex(w)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn to_array(&self) -> Array1<f64> {
        Array1::from_vec(self.0.clone())
    }

    pub fn is_simplex(&self) -> bool {
        self.0.iter().all(|&x| (-WEIGHT_SUM_TOL..=1.0 + WEIGHT_SUM_TOL).contains(&x))
    }

    /// Indices with weight above `epsilon`.
    pub fn support(&self, epsilon: f64) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > epsilon)
            .map(|(j, _)| j)
            .collect()
    }
}

/// RMSE, MAE, and MAPE for one prediction vector.
///
/// MAPE stores the raw ratio (not multiplied by 100). Targets below
/// [`MAPE_ZERO_GUARD`] in magnitude are skipped and counted in
/// `mape_skipped`; if every target is skipped the MAPE is undefined (`None`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorTriple {
    pub rmse: f64,
    pub mae: f64,
    pub mape: Option<f64>,
    pub mape_skipped: usize,
}

impl ErrorTriple {
    pub fn mape_defined(&self) -> bool {
        self.mape.is_some()
    }
}

/// Output of the two decompositions.
///
/// `ambiguity_decomposition` fills the first three fields and leaves the
/// bias/variance/covariance fields at zero; `bvc_decomposition` fills all six
/// (the MSE fields are then trial averages against the reference target).
/// `bias_term` is the root-mean-square over samples of the per-sample mean
/// bias, so that `reconstructed_mse` is exact for any number of samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport {
    pub ensemble_mse: f64,
    pub weighted_member_mse: f64,
    pub ambiguity: f64,
    pub bias_term: f64,
    pub variance_term: f64,
    pub covariance_term: f64,
    /// Number of models m the B/V/C fields refer to (0 when unused).
    pub bvc_models: usize,
}

impl DecompositionReport {
    /// B^2 + V/m + (1 - 1/m) C, the model-count-weighted recombination of the
    /// bias/variance/covariance fields.
    pub fn reconstructed_mse(&self) -> f64 {
        let m = self.bvc_models as f64;
        self.bias_term * self.bias_term
            + self.variance_term / m
            + (1.0 - 1.0 / m) * self.covariance_term
    }
}

/// Row-wise weighted sum of the prediction columns.
pub fn combine(preds: &PredictionMatrix, w: &WeightVector) -> Result<Array1<f64>> {
    if w.len() != preds.n_models() {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for {} models",
            w.len(),
            preds.n_models()
        )));
    }
    Ok(preds.values().dot(&w.to_array()))
}

/// RMSE, MAE, and MAPE of `pred` against `y`.
pub fn error_triple(pred: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> Result<ErrorTriple> {
    if pred.len() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions for {} targets",
            pred.len(),
            y.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::InvalidInput("empty prediction vector".into()));
    }
    let n = pred.len() as f64;
    let mut sq = 0.0;
    let mut abs = 0.0;
    let mut ape = 0.0;
    let mut ape_n = 0usize;
    for (p, t) in pred.iter().zip(y.iter()) {
        let d = p - t;
        sq += d * d;
        abs += d.abs();
        if t.abs() >= MAPE_ZERO_GUARD {
            ape += (d / t).abs();
            ape_n += 1;
        }
    }
    let mape_skipped = pred.len() - ape_n;
    Ok(ErrorTriple {
        rmse: (sq / n).sqrt(),
        mae: abs / n,
        mape: (ape_n > 0).then(|| ape / ape_n as f64),
        mape_skipped,
    })
}

/// Simple average of the three metrics; falls back to the mean of RMSE and
/// MAE when MAPE is undefined.
pub fn combined_error(e: &ErrorTriple) -> f64 {
    match e.mape {
        Some(mape) => (e.rmse + e.mae + mape) / 3.0,
        None => (e.rmse + e.mae) / 2.0,
    }
}

/// Splits the weighted ensemble MSE into the weighted member MSE minus the
/// weighted member-vs-ensemble disagreement.
///
/// All three quantities are computed by direct summation, so the report's
/// `ensemble_mse` matches `weighted_member_mse - ambiguity` only up to
/// rounding — which is the identity under test.
pub fn ambiguity_decomposition(
    preds: &PredictionMatrix,
    w: &WeightVector,
) -> Result<DecompositionReport> {
    let ensemble = combine(preds, w)?;
    let n = preds.n_samples() as f64;
    let member_mse = preds.member_mse();
    let weighted_member_mse = member_mse
        .iter()
        .zip(w.as_slice())
        .map(|(z, wj)| wj * z)
        .sum::<f64>();
    let mut ambiguity = 0.0;
    for (j, wj) in w.as_slice().iter().enumerate() {
        let col = preds.column(j);
        let disagreement: f64 = col
            .iter()
            .zip(ensemble.iter())
            .map(|(f, h)| (h - f) * (h - f))
            .sum();
        ambiguity += wj * disagreement / n;
    }
    let ensemble_mse = ensemble
        .iter()
        .zip(preds.y_true().iter())
        .map(|(h, y)| (h - y) * (h - y))
        .sum::<f64>()
        / n;
    Ok(DecompositionReport {
        ensemble_mse,
        weighted_member_mse,
        ambiguity,
        bias_term: 0.0,
        variance_term: 0.0,
        covariance_term: 0.0,
        bvc_models: 0,
    })
}

/// Bias/variance/covariance split of a simple-average ensemble observed over
/// repeated trials, with expectations estimated by plain trial means.
///
/// Every trial must hold the same model set over the same samples; `y_hat` is
/// the reference target the deviation is measured against.
pub fn bvc_decomposition(
    trials: &[PredictionMatrix],
    y_hat: ArrayView1<'_, f64>,
) -> Result<DecompositionReport> {
    if trials.len() < 2 {
        return Err(Error::InvalidInput("bvc needs at least 2 trials".into()));
    }
    let n = trials[0].n_samples();
    let m = trials[0].n_models();
    if m < 2 {
        return Err(Error::InvalidInput("covariance undefined for m < 2".into()));
    }
    if y_hat.len() != n {
        return Err(Error::DimensionMismatch(format!("y_hat has {} entries for {n} rows", y_hat.len())));
    }
    for t in trials {
        if t.n_samples() != n || t.n_models() != m {
            return Err(Error::DimensionMismatch("trials disagree in shape".into()));
        }
    }
    let t_count = trials.len() as f64;
    let uniform = WeightVector::uniform(m)?;

    // Trial means per (sample, model).
    let mut mean_f = Array2::<f64>::zeros((n, m));
    for t in trials {
        mean_f += t.values();
    }
    mean_f /= t_count;

    let mut sq_bias_sum = 0.0; // sum_i B_i^2
    let mut var_sum = 0.0; // sum_i V_i
    let mut cov_sum = 0.0; // sum_i C_i
    for i in 0..n {
        let mut bias_i = 0.0;
        for j in 0..m {
            bias_i += mean_f[[i, j]] - y_hat[i];
        }
        bias_i /= m as f64;
        sq_bias_sum += bias_i * bias_i;

        // Second moments of the per-trial deviations from the trial mean.
        let mut var_i = 0.0;
        let mut cov_i = 0.0;
        for t in trials {
            let mut dev_sum = 0.0;
            let mut dev_sq = 0.0;
            for j in 0..m {
                let d = t.values()[[i, j]] - mean_f[[i, j]];
                dev_sum += d;
                dev_sq += d * d;
            }
            var_i += dev_sq;
            // sum_{j != k} d_j d_k = (sum d)^2 - sum d^2
            cov_i += dev_sum * dev_sum - dev_sq;
        }
        var_sum += var_i / (m as f64 * t_count);
        cov_sum += cov_i / ((m * (m - 1)) as f64 * t_count);
    }
    let nf = n as f64;

    // Pooled MSE diagnostics against y_hat, averaged over trials.
    let mut ensemble_mse = 0.0;
    let mut weighted_member_mse = 0.0;
    let mut ambiguity = 0.0;
    for t in trials {
        let with_ref = PredictionMatrix::new(
            t.values().clone(),
            y_hat.to_owned(),
            t.model_names().to_vec(),
        )?;
        let rep = ambiguity_decomposition(&with_ref, &uniform)?;
        ensemble_mse += rep.ensemble_mse;
        weighted_member_mse += rep.weighted_member_mse;
        ambiguity += rep.ambiguity;
    }
    ensemble_mse /= t_count;
    weighted_member_mse /= t_count;
    ambiguity /= t_count;

    Ok(DecompositionReport {
        ensemble_mse,
        weighted_member_mse,
        ambiguity,
        bias_term: (sq_bias_sum / nf).sqrt(),
        variance_term: var_sum / nf,
        covariance_term: cov_sum / nf,
        bvc_models: m,
    })
}

/// Median absolute pairwise Pearson correlation between model columns.
/// Lower values mean a more diverse ensemble.
pub fn diversity_score(preds: &PredictionMatrix) -> Result<f64> {
    let m = preds.n_models();
    if m < 2 {
        return Err(Error::InvalidInput("diversity needs at least 2 models".into()));
    }
    let cols: Vec<Vec<f64>> = (0..m).map(|j| preds.column(j).to_vec()).collect();
    let mut corr = Vec::with_capacity(m * (m - 1) / 2);
    for j in 0..m {
        for k in j + 1..m {
            corr.push(linalg::pearson(&cols[j], &cols[k]).abs());
        }
    }
    Ok(linalg::median(&mut corr))
}
