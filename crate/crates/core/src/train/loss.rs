use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Mean of squared differences.
pub fn mse_loss(prediction: &[f64], target: &[f64]) -> Result<f64> {
    if prediction.len() != target.len() {
        return Err(Error::arg(format!(
            "prediction has {} values, target {}",
            prediction.len(),
            target.len()
        )));
    }
    if prediction.is_empty() {
        return Err(Error::arg("mse of empty sequences"));
    }
    let sum: f64 = prediction
        .iter()
        .zip(target)
        .map(|(p, a)| (p - a) * (p - a))
        .sum();
    Ok(sum / prediction.len() as f64)
}

/// Which output days contribute to the training loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossRange {
    /// Every output day, including the days that overlap the input window.
    #[default]
    Full,
    /// Only the days after the input window.
    Extrapolated,
}

impl LossRange {
    pub fn bounds(self, input_len: usize, output_len: usize) -> (usize, usize) {
        match self {
            LossRange::Full => (0, output_len),
            LossRange::Extrapolated => (input_len.min(output_len), output_len),
        }
    }
}

/// Batch loss (mean over windows of the per-window MSE on `[lo, hi)`) and its
/// gradient with respect to every prediction.
pub fn batch_mse(output: &Matrix, targets: &Matrix, range: (usize, usize)) -> Result<(f64, Matrix)> {
    if output.shape() != targets.shape() {
        return Err(Error::arg(format!(
            "outputs are {:?}, targets {:?}",
            output.shape(),
            targets.shape()
        )));
    }
    let (lo, hi) = range;
    if lo >= hi || hi > output.cols() {
        return Err(Error::arg(format!("empty loss range {lo}..{hi}")));
    }
    let n = output.rows() as f64;
    let k = (hi - lo) as f64;
    let mut grad = Matrix::zeros(output.rows(), output.cols());
    let mut loss = 0.0;
    for b in 0..output.rows() {
        let (p, a) = (output.row(b), targets.row(b));
        let g = grad.row_mut(b);
        for j in lo..hi {
            let d = p[j] - a[j];
            loss += d * d;
            g[j] = 2.0 * d / (n * k);
        }
    }
    Ok((loss / (n * k), grad))
}
