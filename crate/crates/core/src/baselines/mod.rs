//! Industrial reference mechanisms: squashed GSP, utility-based GSP, a
//! learned-rank-score GSP variant, and two single-slot textbook auctions
//! used as incentive oracles by the audit tests.

pub mod dna;
pub mod gsp;
pub mod oracle;
pub mod ugsp;

pub use dna::{train_dna_lite, DnaLite, DnaLiteParams, DnaTrainOptions};
pub use gsp::{Gsp, GspConfig};
pub use oracle::{FirstPriceSingleSlot, VickreySingleSlot};
pub use ugsp::{Ugsp, UgspConfig};

use crate::auction::{AuctionInstance, Mechanism, MechanismError};

#[derive(Debug, thiserror::Error)]
pub enum BaselineError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
    #[error(transparent)]
    NumGrad(#[from] crate::numgrad::NumGradError),
}

/// Indices of eligible ads sorted by score descending; ties go to the
/// higher bid, then to the lower index.
pub(crate) fn rank_descending(
    scores: &[f64],
    bids: &[f64],
    eligible: impl Fn(usize) -> bool,
) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).filter(|&i| eligible(i)).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("finite scores")
            .then(bids[b].partial_cmp(&bids[a]).expect("finite bids"))
            .then(a.cmp(&b))
    });
    order
}

/// Brute-force minimum bid that keeps ad `i` in its slot (or a better
/// one), scanning the grid {step, 2·step, …} upward. `None` when `i` won
/// nothing. The independent oracle for every payment formula here.
pub fn min_bid_to_retain<M: Mechanism + ?Sized>(
    mech: &M,
    instance: &AuctionInstance,
    i: usize,
    step: f64,
) -> Result<Option<f64>, MechanismError> {
    let truth = mech.run(instance)?;
    let Some(slot) = truth.slot_of(i) else {
        return Ok(None);
    };
    let bid = instance.candidates[i].bid;
    let mut k = 1u64;
    loop {
        let probe_bid = k as f64 * step;
        let out = mech.run(&instance.with_bid(i, probe_bid))?;
        if out.slot_of(i).is_some_and(|s| s <= slot) {
            return Ok(Some(probe_bid));
        }
        if probe_bid >= bid {
            // The truthful bid retains by construction; grid quantization
            // can only overshoot by one step.
            return Ok(Some(bid));
        }
        k += 1;
    }
}
