//! Evaluation criteria: Pearson (PLCC) and Spearman (SRCC) correlation, and
//! the L1 loss used for training.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::{Error, Result};

fn check_lengths(pred: &[f64], mos: &[f64]) -> Result<()> {
    if pred.len() != mos.len() {
        return Err(Error::LengthMismatch(pred.len(), mos.len()));
    }
    if pred.len() < 2 {
        return Err(Error::UndefinedCorrelation("a sequence shorter than two"));
    }
    Ok(())
}

/// Pearson linear correlation of the raw values.
pub fn plcc(pred: &[f64], mos: &[f64]) -> Result<f64> {
    check_lengths(pred, mos)?;
    let n = pred.len() as f64;
    let mp = pred.iter().sum::<f64>() / n;
    let mm = mos.iter().sum::<f64>() / n;
    let (mut cov, mut vp, mut vm) = (0.0, 0.0, 0.0);
    for (&p, &m) in pred.iter().zip(mos) {
        let (dp, dm) = (p - mp, m - mm);
        cov += dp * dm;
        vp += dp * dp;
        vm += dm * dm;
    }
    if vp == 0.0 {
        return Err(Error::UndefinedCorrelation("prediction"));
    }
    if vm == 0.0 {
        return Err(Error::UndefinedCorrelation("MOS"));
    }
    Ok((cov / (math::sqrt(vp) * math::sqrt(vm))).clamp(-1.0, 1.0))
}

/// 1-based fractional ranks; tied values share the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // positions i+1 ..= j share their mean rank
        let rank = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = rank;
        }
        i = j;
    }
    ranks
}

/// Spearman rank-order correlation, computed as Pearson on average ranks so
/// ties are handled exactly.
pub fn srcc(pred: &[f64], mos: &[f64]) -> Result<f64> {
    check_lengths(pred, mos)?;
    plcc(&average_ranks(pred), &average_ranks(mos))
}

/// Mean absolute error.
pub fn l1_loss(pred: &[f64], mos: &[f64]) -> Result<f64> {
    if pred.len() != mos.len() {
        return Err(Error::LengthMismatch(pred.len(), mos.len()));
    }
    if pred.is_empty() {
        return Err(Error::EmptySequence);
    }
    Ok(pred.iter().zip(mos).map(|(p, m)| (p - m).abs()).sum::<f64>() / pred.len() as f64)
}
