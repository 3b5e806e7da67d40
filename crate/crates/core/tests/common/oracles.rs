//! Brute-force metric references, written from the definitions and kept
//! free of any `lgp` code.

use std::collections::BTreeSet;

/// Mean over classes of 2PR/(P+R) from explicit precision and recall,
/// 0 for a class with no correct prediction.
pub fn brute_macro_f1(preds: &[BTreeSet<usize>], golds: &[Vec<bool>], n: usize) -> f64 {
    let mut total = 0.0;
    for c in 0..n {
        let predicted: Vec<usize> = (0..preds.len()).filter(|&q| preds[q].contains(&c)).collect();
        let actual: Vec<usize> = (0..golds.len()).filter(|&q| golds[q][c]).collect();
        let hits = predicted.iter().filter(|q| actual.contains(q)).count();
        if hits == 0 {
            continue;
        }
        let precision = hits as f64 / predicted.len() as f64;
        let recall = hits as f64 / actual.len() as f64;
        total += 2.0 * precision * recall / (precision + recall);
    }
    total / n as f64
}

/// Fraction of (positive, negative) pairs ordered correctly, ties one half.
pub fn brute_binary_auc(scores: &[f64], gold: &[bool]) -> Option<f64> {
    let mut pairs = 0.0;
    let mut wins = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if gold[i] && !gold[j] {
                pairs += 1.0;
                if si > sj {
                    wins += 1.0;
                } else if si == sj {
                    wins += 0.5;
                }
            }
        }
    }
    (pairs > 0.0).then(|| wins / pairs)
}

/// Mean pairwise AUC over classes that have both positives and negatives.
pub fn brute_auc(scores: &[Vec<f64>], golds: &[Vec<bool>], n: usize) -> Option<f64> {
    let per_class: Vec<f64> = (0..n)
        .filter_map(|c| {
            let s: Vec<f64> = scores.iter().map(|row| row[c]).collect();
            let g: Vec<bool> = golds.iter().map(|row| row[c]).collect();
            brute_binary_auc(&s, &g)
        })
        .collect();
    (!per_class.is_empty()).then(|| per_class.iter().sum::<f64>() / per_class.len() as f64)
}
