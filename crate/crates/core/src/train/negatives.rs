//! Uniform negative sampling over the item catalogue.

use rand::Rng;

use crate::error::TrainError;

/// Draw `k_neg` item ids uniformly (with replacement) from
/// `0..item_count`, never returning `positive`.
pub fn sample_negatives(
    item_count: usize,
    positive: u32,
    k_neg: usize,
    rng: &mut impl Rng,
) -> Result<Vec<u32>, TrainError> {
    if item_count < k_neg + 1 {
        return Err(TrainError::CatalogueTooSmall {
            got: item_count,
            need: k_neg + 1,
        });
    }
    // sample from a range one short and skip over the positive
    let mut out = Vec::with_capacity(k_neg);
    for _ in 0..k_neg {
        let mut draw = rng.gen_range(0..item_count as u32 - 1);
        if draw >= positive {
            draw += 1;
        }
        out.push(draw);
    }
    Ok(out)
}
