//! Prior-weighted binary cross-entropy over detection trials.

use crate::error::{Error, Result};
use crate::scalar::{sigmoid, softplus, Scalar};

/// Loss and its gradient with respect to every score. `labels[i] = None`
/// marks an out-of-set sample whose trials are all non-targets. Target and
/// non-target terms are averaged separately over their own trial counts.
pub fn bce_loss_grad<T: Scalar>(
    scores: &[Vec<T>],
    labels: &[Option<usize>],
    pi: f64,
) -> Result<(T, Vec<Vec<T>>)> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            found: scores.len(),
        });
    }
    if !(pi > 0.0 && pi < 1.0) {
        return Err(Error::invalid(format!("pi must lie in (0, 1), got {pi}")));
    }
    let n_det = scores.first().map_or(0, Vec::len);
    let mut n_pos = 0usize;
    for (row, l) in scores.iter().zip(labels) {
        if row.len() != n_det {
            return Err(Error::DimensionMismatch {
                expected: n_det,
                found: row.len(),
            });
        }
        if let Some(l) = *l {
            if l >= n_det {
                return Err(Error::invalid(format!(
                    "label {l} is not among the {n_det} detectors"
                )));
            }
            n_pos += 1;
        }
    }
    let n_neg = scores.len() * n_det - n_pos;
    let offset = T::c((pi / (1.0 - pi)).ln());
    let w_pos = if n_pos > 0 {
        T::c(pi / n_pos as f64)
    } else {
        T::zero()
    };
    let w_neg = if n_neg > 0 {
        T::c((1.0 - pi) / n_neg as f64)
    } else {
        T::zero()
    };
    let mut loss = T::zero();
    let mut grad = Vec::with_capacity(scores.len());
    for (row, l) in scores.iter().zip(labels) {
        let mut g = Vec::with_capacity(n_det);
        for (j, &s) in row.iter().enumerate() {
            let z = s + offset;
            if Some(j) == *l {
                loss += w_pos * softplus(-z);
                g.push(-w_pos * sigmoid(-z));
            } else {
                loss += w_neg * softplus(z);
                g.push(w_neg * sigmoid(z));
            }
        }
        grad.push(g);
    }
    Ok((loss, grad))
}

/// Closed-set loss: every sample is labelled with one of the detectors.
pub fn bce_loss<T: Scalar>(scores: &[Vec<T>], labels: &[usize], pi: f64) -> Result<T> {
    let labels: Vec<Option<usize>> = labels.iter().map(|&l| Some(l)).collect();
    Ok(bce_loss_grad(scores, &labels, pi)?.0)
}

/// `(1 - alpha) * language loss + alpha * cluster loss`.
pub fn combined_loss<T: Scalar>(
    lan_scores: &[Vec<T>],
    cluster_scores: Option<&[Vec<T>]>,
    labels: &[usize],
    cluster_labels: Option<&[usize]>,
    pi: f64,
    alpha: f64,
) -> Result<T> {
    check_alpha(alpha)?;
    let lan = bce_loss(lan_scores, labels, pi)?;
    if alpha == 0.0 {
        return Ok(lan);
    }
    let (cs, cl) = match (cluster_scores, cluster_labels) {
        (Some(s), Some(l)) => (s, l),
        _ => return Err(Error::invalid("alpha > 0 needs cluster scores and labels")),
    };
    let clu = bce_loss(cs, cl, pi)?;
    Ok(T::c(1.0 - alpha) * lan + T::c(alpha) * clu)
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "alpha must lie in [0, 1], got {alpha}"
        )))
    }
}
