use crate::error::{Error, Result};

fn check(pred: &[f64], target: &[f64]) -> Result<()> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::Shape(format!(
            "MSE needs equal non-empty lengths, got {} and {}",
            pred.len(),
            target.len()
        )));
    }
    Ok(())
}

/// Mean of squared element errors.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    check(pred, target)?;
    let sum: f64 = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(sum / pred.len() as f64)
}

/// Gradient of [`mse_loss`] with respect to `pred`.
pub fn mse_grad(pred: &[f64], target: &[f64]) -> Result<Vec<f64>> {
    check(pred, target)?;
    let n = pred.len() as f64;
    Ok(pred.iter().zip(target).map(|(p, t)| 2.0 * (p - t) / n).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(mse_loss(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert_eq!(mse_loss(&[1.0], &[0.0]).unwrap(), 1.0);
        assert_eq!(mse_loss(&[0.5, 0.5], &[1.0, 0.0]).unwrap(), 0.25);
        assert!(mse_loss(&[1.0], &[1.0, 2.0]).is_err());
        assert_eq!(mse_grad(&[0.5, 0.5], &[1.0, 0.0]).unwrap(), vec![-0.5, 0.5]);
    }
}
