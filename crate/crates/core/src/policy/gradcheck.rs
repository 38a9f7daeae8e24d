use rand::seq::index::sample;
use serde::Serialize;

use super::{Example, PolicyParams};
use crate::error::Result;
use crate::seed;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Gradients smaller than this are compared on an absolute scale.
const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BlockCheck {
    pub block: &'static str,
    pub checked: usize,
    pub max_rel_error: f64,
}

/// |a − n| / max(|a|, |n|, 1e-6).
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares `bc_loss_grad` with central differences of `bc_loss`, block by
/// block. With `sample_per_block = None` every entry is checked; otherwise a
/// seeded sample of that many entries per block.
pub fn gradient_check(
    params: &PolicyParams,
    batch: &[Example],
    sample_per_block: Option<usize>,
    seed: u64,
) -> Result<Vec<BlockCheck>> {
    let (_, grad) = params.bc_loss_grad(batch)?;
    let analytic: Vec<Vec<f64>> = grad.blocks().iter().map(|(_, b)| b.to_vec()).collect();
    let mut rng = seed::rng(seed::named_seed(seed, "gradcheck"));
    let mut probe = params.clone();
    let mut out = Vec::new();
    for (b, name) in super::BLOCK_NAMES.iter().enumerate() {
        let len = analytic[b].len();
        let indices: Vec<usize> = match sample_per_block {
            Some(k) if k < len => sample(&mut rng, len, k).into_vec(),
            _ => (0..len).collect(),
        };
        let mut worst: f64 = 0.0;
        for &i in &indices {
            let original = probe.blocks()[b].1[i];
            probe.blocks_mut()[b].1[i] = original + FD_STEP;
            let plus = probe.bc_loss(batch)?;
            probe.blocks_mut()[b].1[i] = original - FD_STEP;
            let minus = probe.bc_loss(batch)?;
            probe.blocks_mut()[b].1[i] = original;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(analytic[b][i], numeric));
        }
        out.push(BlockCheck { block: name, checked: indices.len(), max_rel_error: worst });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{Fusion, PolicyShape};
    use ndarray::Array1;
    use rand::Rng;

    fn batch(seed: u64, d: usize, n: usize) -> Vec<Example> {
        let mut rng = seed::rng(seed);
        (0..4)
            .map(|i| {
                let mut v = || Array1::from_iter((0..d).map(|_| rng.random_range(-1.0..1.0)));
                Example { state: v(), future: v(), action: i % n }
            })
            .collect()
    }

    #[test]
    fn every_entry_every_mode() {
        for fusion in [Fusion::Gated, Fusion::Add, Fusion::Concat] {
            let shape = PolicyShape { input_dim: 10, hidden_dim: 4, actions: 3, fusion };
            let p = PolicyParams::init(shape, 3);
            for check in gradient_check(&p, &batch(5, 10, 3), None, 0).unwrap() {
                assert!(check.max_rel_error < 1e-4, "{fusion:?} {check:?}");
            }
        }
    }

    #[test]
    fn catches_a_wrong_gradient() {
        assert!(relative_error(1.0, 1.1) > 0.05);
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!(relative_error(1e-9, 2e-9) < 1e-2);
    }
}
