use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Zip};

use crate::error::{Error, Result};

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before the log.
pub const PROB_EPS: f64 = 1e-7;

/// Mean binary cross-entropy and its gradient with respect to `probabilities`.
///
/// The gradient is exact for the clamped expression, so it is zero for
/// entries that fall outside the clamp interval.
pub fn bce_loss(probabilities: ArrayView1<f64>, labels: ArrayView1<f64>) -> Result<(f64, Array1<f64>)> {
    if probabilities.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} probabilities for {} labels",
            probabilities.len(),
            labels.len()
        )));
    }
    if probabilities.is_empty() {
        return Err(Error::Shape("empty batch".into()));
    }
    let n = probabilities.len() as f64;
    let mut loss = 0.0;
    let mut grad = Array1::zeros(probabilities.len());
    Zip::from(&mut grad)
        .and(probabilities)
        .and(labels)
        .for_each(|g, &p, &y| {
            let clamped = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            loss -= y * clamped.ln() + (1.0 - y) * (1.0 - clamped).ln();
            *g = if p < PROB_EPS || p > 1.0 - PROB_EPS {
                0.0
            } else {
                (-y / clamped + (1.0 - y) / (1.0 - clamped)) / n
            };
        });
    Ok((loss / n, grad))
}

/// Mean squared error over all entries and its gradient `2 (pred - target) / count`.
pub fn mse_loss(predictions: ArrayView2<f64>, targets: ArrayView2<f64>) -> Result<(f64, Array2<f64>)> {
    if predictions.dim() != targets.dim() {
        return Err(Error::Shape(format!(
            "predictions {:?} vs targets {:?}",
            predictions.dim(),
            targets.dim()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::Shape("empty batch".into()));
    }
    let n = predictions.len() as f64;
    let diff = &predictions - &targets;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    Ok((loss, diff * (2.0 / n)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn bce_at_half_is_ln2() {
        let (loss, _) = bce_loss(array![0.5].view(), array![1.0].view()).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((loss - 0.693147).abs() < 1e-6);
    }

    #[test]
    fn bce_perfect_prediction_is_near_zero() {
        let (loss, grad) = bce_loss(array![1.0, 0.0].view(), array![1.0, 0.0].view()).unwrap();
        // bounded by -ln(1 - eps)
        assert!(loss <= -(1.0 - PROB_EPS).ln() + 1e-15);
        assert!(loss < 1e-6);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn bce_gradient_matches_central_differences() {
        let p = array![0.2, 0.7, 0.45, 0.93, 0.05];
        let y = array![1.0, 0.0, 1.0, 1.0, 0.0];
        let (_, grad) = bce_loss(p.view(), y.view()).unwrap();
        let h = 1e-6;
        for i in 0..p.len() {
            let mut up = p.clone();
            up[i] += h;
            let mut dn = p.clone();
            dn[i] -= h;
            let fd = (bce_loss(up.view(), y.view()).unwrap().0 - bce_loss(dn.view(), y.view()).unwrap().0) / (2.0 * h);
            assert!((fd - grad[i]).abs() <= 1e-6 * grad[i].abs().max(1e-8), "{i}: {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn bce_length_mismatch() {
        assert!(matches!(
            bce_loss(array![0.5, 0.5].view(), array![1.0].view()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn mse_values() {
        let a = array![[1.0, 2.0], [3.0, 4.0]];
        assert_eq!(mse_loss(a.view(), a.view()).unwrap().0, 0.0);
        let (loss, grad) = mse_loss(array![[1.0, 0.0]].view(), array![[0.0, 0.0]].view()).unwrap();
        assert_eq!(loss, 0.5);
        assert_eq!(grad, array![[1.0, 0.0]]);
    }

    #[test]
    fn mse_gradient_matches_central_differences() {
        let pred = array![[0.3, -1.2, 2.0], [0.7, 0.1, -0.4]];
        let target = array![[1.0, 0.0, 1.5], [-0.2, 0.3, 0.0]];
        let (_, grad) = mse_loss(pred.view(), target.view()).unwrap();
        let h = 1e-6;
        for idx in [(0, 0), (0, 2), (1, 1)] {
            let mut up = pred.clone();
            up[idx] += h;
            let mut dn = pred.clone();
            dn[idx] -= h;
            let fd = (mse_loss(up.view(), target.view()).unwrap().0 - mse_loss(dn.view(), target.view()).unwrap().0) / (2.0 * h);
            assert!((fd - grad[idx]).abs() <= 1e-6 * grad[idx].abs());
        }
    }

    #[test]
    fn mse_shape_mismatch() {
        assert!(mse_loss(array![[1.0]].view(), array![[1.0, 2.0]].view()).is_err());
    }
}
