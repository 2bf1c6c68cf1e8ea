//! Isotonic win-rate curves fit by pool-adjacent-violators.
//!
//! Tied bids are pooled into weighted points first, so the stepwise solution
//! is exactly the minimizer of the squared error over all nondecreasing
//! functions of the bid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Right-continuous stepwise-constant nondecreasing curve.  `levels[i]`
/// applies from `breakpoints[i]` (inclusive) to the next breakpoint; bids
/// below the first breakpoint take the first level, bids at or above the last
/// take the last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsotonicCurve {
    pub breakpoints: Vec<f64>,
    pub levels: Vec<f64>,
}

impl IsotonicCurve {
    pub fn predict(&self, bid: f64) -> f64 {
        // Index of the last breakpoint <= bid, clamped to the first level.
        let idx = self.breakpoints.partition_point(|&b| b <= bid);
        if idx == 0 {
            self.levels[0]
        } else {
            self.levels[idx - 1]
        }
    }
}

/// Fits on `(bid, outcome)` pairs; outcomes may be any reals in `[0, 1]`.
/// The slice is sorted in place by bid.
pub fn fit(pairs: &mut [(f64, f64)]) -> Result<IsotonicCurve> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("isotonic fit with no rows"));
    }
    for &(bid, y) in pairs.iter() {
        if !bid.is_finite() || !y.is_finite() {
            return Err(Error::InvalidArgument("non-finite bid or outcome".into()));
        }
    }
    pairs.sort_unstable_by(|a, b| a.0.partial_cmp(&b.0).expect("finite bids"));
    fit_sorted(pairs)
}

/// PAVA over pairs already sorted by bid ascending.
pub fn fit_sorted(pairs: &[(f64, f64)]) -> Result<IsotonicCurve> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("isotonic fit with no rows"));
    }
    debug_assert!(pairs.windows(2).all(|w| w[0].0 <= w[1].0));

    // Pool exact bid ties into weighted points, then run the stack-based PAVA.
    // Each block keeps (first bid, weight, weighted outcome sum).
    struct Block {
        first_bid: f64,
        weight: f64,
        sum: f64,
    }
    let mut blocks: Vec<Block> = Vec::new();
    let mut i = 0;
    while i < pairs.len() {
        let bid = pairs[i].0;
        let mut weight = 0.0;
        let mut sum = 0.0;
        while i < pairs.len() && pairs[i].0 == bid {
            weight += 1.0;
            sum += pairs[i].1;
            i += 1;
        }
        let mut block = Block { first_bid: bid, weight, sum };
        while let Some(prev) = blocks.last() {
            if prev.sum * block.weight > block.sum * prev.weight {
                // prev mean > new mean: merge (weights positive, so the
                // cross-multiplied comparison is exact in direction).
                let prev = blocks.pop().expect("nonempty");
                block = Block {
                    first_bid: prev.first_bid,
                    weight: prev.weight + block.weight,
                    sum: prev.sum + block.sum,
                };
            } else {
                break;
            }
        }
        blocks.push(block);
    }

    let mut breakpoints = Vec::with_capacity(blocks.len());
    let mut levels = Vec::with_capacity(blocks.len());
    for b in &blocks {
        breakpoints.push(b.first_bid);
        levels.push((b.sum / b.weight).clamp(0.0, 1.0));
    }
    Ok(IsotonicCurve { breakpoints, levels })
}
