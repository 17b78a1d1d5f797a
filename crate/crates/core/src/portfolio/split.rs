//! Policyholder-level train/validation split.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::PanelDataset;

/// Splits by policyholder: `round(fraction · M)` randomly chosen
/// policyholders go to the fitting set, the rest to validation. Each part
/// keeps the original policyholder order.
pub fn split(dataset: &PanelDataset, fraction: f64, seed: u64) -> Result<(PanelDataset, PanelDataset)> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Config(format!("split fraction must lie in [0, 1], got {fraction}")));
    }
    let m = dataset.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_fit = (fraction * m as f64).round() as usize;
    let mut in_fit = vec![false; m];
    for &i in &order[..n_fit] {
        in_fit[i] = true;
    }
    let (mut fit, mut val) = (PanelDataset::default(), PanelDataset::default());
    for (h, keep) in dataset.policyholders.iter().zip(in_fit) {
        if keep {
            fit.policyholders.push(h.clone());
        } else {
            val.policyholders.push(h.clone());
        }
    }
    Ok((fit, val))
}
