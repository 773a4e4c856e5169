//! Largest-remainder apportionment of a token budget across frames.

use super::PruneError;

/// Splits `keep` tokens across frames in proportion to `probs`.
///
/// Each frame first receives `⌊keep·pᵢ⌋` (clamped to its capacity). The
/// deficit is then handed out one token at a time to frames in descending
/// order of fractional remainder `keep·pᵢ − ⌊keep·pᵢ⌋`, earlier frame first on
/// ties, skipping saturated frames and cycling through that order again
/// until every token is placed.
pub fn allocate(probs: &[f32], capacities: &[usize], keep: usize) -> Result<Vec<usize>, PruneError> {
    assert_eq!(probs.len(), capacities.len(), "one probability per frame");
    let total: usize = capacities.iter().sum();
    if keep > total {
        return Err(PruneError::KeepTooLarge { keep, available: total });
    }

    let quotas: Vec<f64> = probs.iter().map(|&p| keep as f64 * p as f64).collect();
    let mut alloc: Vec<usize> = quotas.iter().zip(capacities).map(|(q, &cap)| (q.floor() as usize).min(cap)).collect();

    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });

    let mut placed: usize = alloc.iter().sum();
    // Rounding in p can push the floors over budget; trim smallest remainders first.
    for &i in order.iter().rev().cycle() {
        if placed <= keep {
            break;
        }
        if alloc[i] > 0 {
            alloc[i] -= 1;
            placed -= 1;
        }
    }
    while placed < keep {
        for &i in &order {
            if placed == keep {
                break;
            }
            if alloc[i] < capacities[i] {
                alloc[i] += 1;
                placed += 1;
            }
        }
    }
    Ok(alloc)
}
