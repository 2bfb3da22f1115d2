//! Predictive error metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihoods::{Likelihood, EVAL_QUADRATURE_ORDER};

/// Latent predictive moments at one test point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub mean: f64,
    pub var: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub rmse: f64,
    pub nlpd: f64,
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Dimension(format!("{a} predictions for {b} targets")));
    }
    if a == 0 {
        return Err(Error::EmptyDataset);
    }
    Ok(())
}

/// `sqrt(mean (y − E[y])²)` with `E[y]` the predictive mean of the observation.
pub fn rmse(preds: &[Prediction], truth: &[f64], lik: &Likelihood<f64>) -> Result<f64> {
    check_len(preds.len(), truth.len())?;
    let sse: f64 = preds
        .iter()
        .zip(truth)
        .map(|(p, y)| {
            let r = y - lik.predictive_mean(p.mean, p.var);
            r * r
        })
        .sum();
    Ok((sse / truth.len() as f64).sqrt())
}

/// Per-point `−log ∫ p(y|f) N(f|m,v) df`.
pub fn nlpd_points(preds: &[Prediction], truth: &[f64], lik: &Likelihood<f64>) -> Result<Vec<f64>> {
    check_len(preds.len(), truth.len())?;
    preds
        .iter()
        .zip(truth)
        .map(|(p, &y)| lik.nlpd_order(y, p.mean, p.var, EVAL_QUADRATURE_ORDER))
        .collect()
}

pub fn nlpd(preds: &[Prediction], truth: &[f64], lik: &Likelihood<f64>) -> Result<f64> {
    let pts = nlpd_points(preds, truth, lik)?;
    Ok(pts.iter().sum::<f64>() / pts.len() as f64)
}

pub fn metrics(preds: &[Prediction], truth: &[f64], lik: &Likelihood<f64>) -> Result<Scores> {
    Ok(Scores {
        rmse: rmse(preds, truth, lik)?,
        nlpd: nlpd(preds, truth, lik)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn p(mean: f64, var: f64) -> Prediction {
        Prediction { mean, var }
    }

    #[test]
    fn spec_examples() {
        let g = Likelihood::gaussian(1e-300).unwrap();
        let y = [1.0, -2.0, 0.5];
        let exact: Vec<_> = y.iter().map(|&m| p(m, 1e-300)).collect();
        assert_eq!(rmse(&exact, &y, &g).unwrap(), 0.0);
        let shifted: Vec<_> = y.iter().map(|&m| p(m + 1.0, 1.0)).collect();
        assert_relative_eq!(rmse(&shifted, &y, &g).unwrap(), 1.0, epsilon = 1e-15);
        let one = nlpd(&[p(0.3, 1.0)], &[0.3], &g).unwrap();
        assert_relative_eq!(one, 0.5 * (2.0 * std::f64::consts::PI).ln(), epsilon = 1e-15);
    }

    #[test]
    fn length_mismatch() {
        let g = Likelihood::gaussian(1.0).unwrap();
        assert!(matches!(rmse(&[p(0.0, 1.0)], &[1.0, 2.0], &g), Err(Error::Dimension(_))));
        assert!(matches!(nlpd(&[], &[1.0], &g), Err(Error::Dimension(_))));
    }
}
