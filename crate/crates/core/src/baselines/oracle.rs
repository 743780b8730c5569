//! Single-slot textbook auctions with known incentive properties.
//!
//! The second-price mechanism is dominant-strategy truthful, so the
//! empirical regret auditor must report exactly zero on it; the
//! first-price mechanism has large, analytically computable regret. The
//! pair brackets the auditor from both sides.

use crate::auction::{
    AllocationMatrix, AuctionInstance, Mechanism, MechanismError, MechanismOutcome,
};

use super::rank_descending;

fn single_slot_outcome(
    instance: &AuctionInstance,
    pay_winner: impl Fn(usize, &[f64]) -> f64,
) -> Result<MechanismOutcome, MechanismError> {
    if instance.slot_count() != 1 {
        return Err(MechanismError::Other(format!(
            "single-slot mechanism got {} slots",
            instance.slot_count()
        )));
    }
    let n = instance.num_candidates();
    let bids: Vec<f64> = instance.candidates.iter().map(|a| a.bid).collect();
    let scores: Vec<f64> = instance
        .candidates
        .iter()
        .map(|a| a.bid * a.pctr)
        .collect();
    let ranked = rank_descending(&scores, &bids, |i| instance.candidates[i].pctr > 0.0);
    let mut alloc = AllocationMatrix::zeros(n, 1);
    let mut payments = vec![0.0; n];
    let assignment = match ranked.first() {
        Some(&w) => {
            alloc.set(w, 0, 1.0);
            payments[w] = pay_winner(w, &scores)
                .min(bids[w])
                .max(0.0);
            Some(vec![w])
        }
        None => None,
    };
    Ok(MechanismOutcome {
        allocation: alloc,
        assignment,
        payments,
    })
}

/// Second-price single-slot auction in expected-click-value space: the
/// winner maximizes b·pCTR and pays the runner-up's b·pCTR converted back
/// to a per-click price. Truthful bidding is a dominant strategy.
pub struct VickreySingleSlot;

impl Mechanism for VickreySingleSlot {
    fn name(&self) -> &str {
        "second-price"
    }

    fn run(&self, instance: &AuctionInstance) -> Result<MechanismOutcome, MechanismError> {
        let ranked = {
            let bids: Vec<f64> = instance.candidates.iter().map(|a| a.bid).collect();
            let scores: Vec<f64> = instance
                .candidates
                .iter()
                .map(|a| a.bid * a.pctr)
                .collect();
            rank_descending(&scores, &bids, |i| instance.candidates[i].pctr > 0.0)
        };
        single_slot_outcome(instance, |w, scores| {
            let next = ranked.get(1).map_or(0.0, |&s| scores[s]);
            next / instance.candidates[w].pctr
        })
    }
}

/// First-price single-slot auction: the winner pays its own bid per click.
pub struct FirstPriceSingleSlot;

impl Mechanism for FirstPriceSingleSlot {
    fn name(&self) -> &str {
        "first-price"
    }

    fn run(&self, instance: &AuctionInstance) -> Result<MechanismOutcome, MechanismError> {
        single_slot_outcome(instance, |w, _| instance.candidates[w].bid)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::auction::{AdCandidate, UserContext};
    use approx::assert_relative_eq;

    fn instance(bids_pctr: &[(f64, f64)]) -> AuctionInstance {
        let ads = bids_pctr
            .iter()
            .map(|&(bid, pctr)| AdCandidate {
                bid,
                pctr,
                pcvr: 0.1,
                cpc_value: 1.0,
                features: vec![0.0],
            })
            .collect();
        AuctionInstance::new(UserContext { features: vec![0.0] }, ads, vec![1.0]).unwrap()
    }

    #[test]
    fn second_price_charges_runner_up_score() {
        let inst = instance(&[(2.0, 0.5), (1.0, 0.6)]);
        let out = VickreySingleSlot.run(&inst).unwrap();
        // Scores: 1.0 vs 0.6 — ad 0 wins, pays 0.6 / 0.5 per click.
        assert_eq!(out.assignment, Some(vec![0]));
        assert_relative_eq!(out.payments[0], 1.2, epsilon = 1e-12);
        out.validate(&inst).unwrap();
    }

    #[test]
    fn first_price_charges_own_bid() {
        let inst = instance(&[(2.0, 1.0), (1.0, 1.0)]);
        let out = FirstPriceSingleSlot.run(&inst).unwrap();
        assert_eq!(out.assignment, Some(vec![0]));
        assert_relative_eq!(out.payments[0], 2.0, epsilon = 1e-15);
        out.validate(&inst).unwrap();
    }

    #[test]
    fn multi_slot_instances_are_rejected() {
        let ads = vec![
            AdCandidate {
                bid: 1.0,
                pctr: 0.2,
                pcvr: 0.1,
                cpc_value: 1.0,
                features: vec![0.0],
            },
            AdCandidate {
                bid: 2.0,
                pctr: 0.3,
                pcvr: 0.1,
                cpc_value: 1.0,
                features: vec![0.0],
            },
        ];
        let inst = AuctionInstance::new(
            UserContext { features: vec![0.0] },
            ads,
            vec![1.0, 0.5],
        )
        .unwrap();
        assert!(VickreySingleSlot.run(&inst).is_err());
        assert!(FirstPriceSingleSlot.run(&inst).is_err());
    }
}
