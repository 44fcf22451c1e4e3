//! Loss values written straight from their textbook definitions, with no
//! shared code or numerical tricks.

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn dice_ce(logits: &[f64], target: &[u8]) -> f64 {
    let p: Vec<f64> = logits.iter().map(|&l| sigmoid(l)).collect();
    let t: Vec<f64> = target.iter().map(|&t| t as f64).collect();
    let inter: f64 = p.iter().zip(&t).map(|(a, b)| a * b).sum();
    let total: f64 = p.iter().sum::<f64>() + t.iter().sum::<f64>();
    let dice = 1.0 - (2.0 * inter + 1.0) / (total + 1.0);
    let ce: f64 = p.iter().zip(&t).map(|(p, t)| -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())).sum::<f64>();
    dice + ce / p.len() as f64
}

pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let z: f64 = logits.iter().map(|l| l.exp()).sum();
    -(logits[label].exp() / z).ln()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mean over anchors with at least one positive of the mean over positives
/// of `-ln(exp(s_ip / τ) / Σ_{a ≠ i} exp(s_ia / τ))`.
pub fn multi_positive_infonce(z: &[Vec<f64>], ids: &[usize], tau: f64) -> f64 {
    let n = z.len();
    let mut total = 0.0;
    let mut anchors = 0;
    for i in 0..n {
        let positives: Vec<usize> = (0..n).filter(|&j| j != i && ids[j] == ids[i]).collect();
        if positives.is_empty() {
            continue;
        }
        anchors += 1;
        let denom: f64 = (0..n).filter(|&a| a != i).map(|a| (dot(&z[i], &z[a]) / tau).exp()).sum();
        let mut term = 0.0;
        for &p in &positives {
            term += -((dot(&z[i], &z[p]) / tau).exp() / denom).ln();
        }
        total += term / positives.len() as f64;
    }
    total / anchors as f64
}

/// Standard InfoNCE over `2n` views where view `i` and view `i ^ 1` form the
/// only positive pair.
pub fn paired_infonce(z: &[Vec<f64>], tau: f64) -> f64 {
    let n = z.len();
    let mut total = 0.0;
    for i in 0..n {
        let logits: Vec<f64> = (0..n).filter(|&a| a != i).map(|a| dot(&z[i], &z[a]) / tau).collect();
        let pos = dot(&z[i], &z[i ^ 1]) / tau;
        let lse = logits.iter().map(|l| l.exp()).sum::<f64>().ln();
        total += lse - pos;
    }
    total / n as f64
}
