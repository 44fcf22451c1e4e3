use super::TrainError;

/// Smallest accepted contrastive temperature.
pub const MIN_TEMPERATURE: f64 = 1e-4;
const DICE_EPS: f64 = 1.0;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Soft Dice loss plus mean binary cross-entropy on sigmoid probabilities,
/// with its gradient with respect to the logits.
pub fn dice_ce_loss(logits: &[f64], target: &[u8]) -> Result<(f64, Vec<f64>), TrainError> {
    if logits.len() != target.len() || logits.is_empty() {
        return Err(TrainError::ShapeMismatch { logits: logits.len(), target: target.len() });
    }
    let n = logits.len() as f64;
    let p: Vec<f64> = logits.iter().map(|&l| sigmoid(l)).collect();
    let (mut inter, mut sum) = (0.0, 0.0);
    let mut ce = 0.0;
    for ((&l, &pi), &t) in logits.iter().zip(&p).zip(target) {
        let t = t as f64;
        inter += pi * t;
        sum += pi + t;
        // -t ln p - (1 - t) ln(1 - p) = softplus(l) - t l
        ce += softplus(l) - t * l;
    }
    let num = 2.0 * inter + DICE_EPS;
    let den = sum + DICE_EPS;
    let loss = 1.0 - num / den + ce / n;
    let grad = p
        .iter()
        .zip(target)
        .map(|(&pi, &t)| {
            let t = t as f64;
            let d_dice = -(2.0 * t * den - num) / (den * den);
            d_dice * pi * (1.0 - pi) + (pi - t) / n
        })
        .collect();
    Ok((loss, grad))
}

/// Softmax cross-entropy; an absent label contributes zero loss and gradient.
pub fn classification_loss(logits: &[f64], label: Option<usize>) -> Result<(f64, Vec<f64>), TrainError> {
    let Some(y) = label else {
        return Ok((0.0, vec![0.0; logits.len()]));
    };
    if y >= logits.len() {
        return Err(TrainError::LabelOutOfRange { label: y, classes: logits.len() });
    }
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = mx + logits.iter().map(|l| (l - mx).exp()).sum::<f64>().ln();
    let grad = logits.iter().enumerate().map(|(j, l)| (l - lse).exp() - if j == y { 1.0 } else { 0.0 }).collect();
    Ok((lse - logits[y], grad))
}

/// Multi-positive InfoNCE over unit-norm embeddings, with gradients per
/// embedding. Each anchor averages `-log softmax` over its same-tumor
/// positives; the softmax runs over every other embedding in the batch.
/// Anchors without positives are skipped.
pub fn multi_positive_infonce(z: &[Vec<f64>], tumor_ids: &[usize], tau: f64) -> Result<(f64, Vec<Vec<f64>>), TrainError> {
    if !(tau >= MIN_TEMPERATURE) {
        return Err(TrainError::InvalidTemperature(tau));
    }
    if z.len() != tumor_ids.len() {
        return Err(TrainError::ShapeMismatch { logits: z.len(), target: tumor_ids.len() });
    }
    for (i, v) in z.iter().enumerate() {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(TrainError::UnnormalizedInput { index: i, norm });
        }
    }
    let first = tumor_ids.first().copied();
    if tumor_ids.iter().all(|&t| Some(t) == first) {
        return Err(TrainError::SingletonBatch);
    }
    let n = z.len();
    let sim: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| crate::nn::dot(&z[i], &z[j]) / tau).collect()).collect();
    let anchors: Vec<usize> = (0..n).filter(|&i| (0..n).any(|j| j != i && tumor_ids[j] == tumor_ids[i])).collect();
    if anchors.is_empty() {
        return Err(TrainError::SingletonBatch);
    }
    let scale = 1.0 / anchors.len() as f64;
    let mut loss = 0.0;
    // d loss / d sim[i][j]
    let mut gs = vec![vec![0.0; n]; n];
    for &i in &anchors {
        let mx = (0..n).filter(|&a| a != i).map(|a| sim[i][a]).fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + (0..n).filter(|&a| a != i).map(|a| (sim[i][a] - mx).exp()).sum::<f64>().ln();
        let pos: Vec<usize> = (0..n).filter(|&j| j != i && tumor_ids[j] == tumor_ids[i]).collect();
        let w = 1.0 / pos.len() as f64;
        for &p in &pos {
            loss += scale * w * (lse - sim[i][p]);
            gs[i][p] -= scale * w;
        }
        for a in (0..n).filter(|&a| a != i) {
            gs[i][a] += scale * (sim[i][a] - lse).exp();
        }
    }
    let d = z[0].len();
    let mut grad = vec![vec![0.0; d]; n];
    for i in 0..n {
        for j in 0..n {
            let g = gs[i][j] / tau;
            if g == 0.0 {
                continue;
            }
            for k in 0..d {
                grad[i][k] += g * z[j][k];
                grad[j][k] += g * z[i][k];
            }
        }
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_probability_gives_ln2_cross_entropy() {
        let target = [1u8, 1, 0, 0];
        let (l, _) = dice_ce_loss(&[0.0; 4], &target).unwrap();
        // Dice: (2 * 1 + 1) / (2 + 2 + 1) = 0.6
        assert!((l - (0.4 + std::f64::consts::LN_2)).abs() < 1e-12);
    }

    #[test]
    fn saturated_prediction_is_near_zero() {
        let target: Vec<u8> = (0..64).map(|i| (i % 3 == 0) as u8).collect();
        let logits: Vec<f64> = target.iter().map(|&t| if t == 1 { 40.0 } else { -40.0 }).collect();
        assert!(dice_ce_loss(&logits, &target).unwrap().0 < 1e-9);
    }

    #[test]
    fn uniform_two_class_logits_give_ln2() {
        let (l, g) = classification_loss(&[0.3, 0.3], Some(1)).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((g[0] - 0.5).abs() < 1e-12 && (g[1] + 0.5).abs() < 1e-12);
        assert_eq!(classification_loss(&[1.0, 2.0], None).unwrap(), (0.0, vec![0.0, 0.0]));
        assert!(matches!(classification_loss(&[1.0, 2.0], Some(2)), Err(TrainError::LabelOutOfRange { .. })));
    }

    #[test]
    fn infonce_guards() {
        let e = |x: f64| vec![x.cos(), x.sin()];
        assert!(matches!(multi_positive_infonce(&[e(0.0), e(1.0)], &[0, 1], 0.1), Err(TrainError::SingletonBatch)));
        assert!(matches!(multi_positive_infonce(&[e(0.0), e(1.0)], &[0, 0], 0.1), Err(TrainError::SingletonBatch)));
        assert!(matches!(multi_positive_infonce(&[e(0.0), e(1.0)], &[0, 1], 1e-5), Err(TrainError::InvalidTemperature(_))));
        assert!(matches!(
            multi_positive_infonce(&[vec![1.0, 1.0], e(1.0)], &[0, 1], 0.1),
            Err(TrainError::UnnormalizedInput { index: 0, .. })
        ));
    }
}
