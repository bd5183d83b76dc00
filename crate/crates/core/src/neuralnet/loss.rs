use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Probabilities below this are clamped before taking logs or reciprocals.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct CrossEntropy {
    pub loss: f64,
    /// `∂J/∂ô = -o/ô`.
    pub grad: Vec<f64>,
    /// Number of probabilities that had to be clamped.
    pub clamped: usize,
}

/// `J = -Σ o_j log ô_j` for a one-hot target `o`.
pub fn cross_entropy(target: &[f64], probs: &[f64]) -> Result<CrossEntropy> {
    if target.len() != probs.len() {
        return Err(Error::dim(format!(
            "target of length {} for {} probabilities",
            target.len(),
            probs.len()
        )));
    }
    let mut loss = 0.0;
    let mut clamped = 0;
    let grad = target
        .iter()
        .zip(probs)
        .map(|(&o, &p)| {
            if o == 0.0 {
                return 0.0;
            }
            let q = if p < PROB_FLOOR {
                clamped += 1;
                PROB_FLOOR
            } else {
                p
            };
            loss -= o * q.ln();
            -o / q
        })
        .collect();
    Ok(CrossEntropy { loss, grad, clamped })
}

/// Mean cross-entropy over a batch with class-index targets. The returned
/// gradient is that of the mean.
pub fn cross_entropy_batch(labels: &[usize], probs: ArrayView2<f64>) -> Result<(f64, Array2<f64>, usize)> {
    if labels.len() != probs.nrows() || labels.is_empty() {
        return Err(Error::dim(format!(
            "{} labels for a batch of {}",
            labels.len(),
            probs.nrows()
        )));
    }
    let b = labels.len() as f64;
    let mut grad = Array2::zeros(probs.dim());
    let mut loss = 0.0;
    let mut clamped = 0;
    for (i, &c) in labels.iter().enumerate() {
        if c >= probs.ncols() {
            return Err(Error::Domain(format!("label {c} outside {} classes", probs.ncols())));
        }
        let mut p = probs[(i, c)];
        if p < PROB_FLOOR {
            clamped += 1;
            p = PROB_FLOOR;
        }
        loss -= p.ln();
        grad[(i, c)] = -1.0 / (p * b);
    }
    Ok((loss / b, grad, clamped))
}
