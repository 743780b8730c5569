//! Generalized second-price auction with a squashing exponent.

use crate::auction::{
    AllocationMatrix, AuctionInstance, Mechanism, MechanismError, MechanismOutcome,
};

use super::{rank_descending, BaselineError};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GspConfig {
    /// Rank score is bid × pCTR^σ.
    pub sigma: f64,
}

pub struct Gsp {
    cfg: GspConfig,
    name: String,
}

impl Gsp {
    pub fn new(sigma: f64) -> Result<Self, BaselineError> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(BaselineError::InvalidConfig(format!(
                "squashing exponent must be a non-negative real, got {sigma}"
            )));
        }
        Ok(Gsp {
            cfg: GspConfig { sigma },
            name: format!("gsp-s{sigma}"),
        })
    }

    pub fn config(&self) -> GspConfig {
        self.cfg
    }

    fn quality(&self, pctr: f64) -> f64 {
        pctr.powf(self.cfg.sigma)
    }
}

impl Mechanism for Gsp {
    fn name(&self) -> &str {
        &self.name
    }

    /// Rank by bid × pCTR^σ; the slot-j winner pays the next-ranked score
    /// divided by its own quality — the minimum bid that keeps its slot.
    /// Zero-quality ads (pCTR = 0 with σ > 0) never win, which keeps the
    /// payment division well-defined.
    fn run(&self, instance: &AuctionInstance) -> Result<MechanismOutcome, MechanismError> {
        let n = instance.num_candidates();
        let k = instance.slot_count();
        let bids: Vec<f64> = instance.candidates.iter().map(|a| a.bid).collect();
        let quality: Vec<f64> = instance.candidates.iter().map(|a| self.quality(a.pctr)).collect();
        let scores: Vec<f64> = (0..n).map(|i| bids[i] * quality[i]).collect();
        let ranked = rank_descending(&scores, &bids, |i| quality[i] > 0.0);

        let winners: Vec<usize> = ranked.iter().take(k).copied().collect();
        let mut payments = vec![0.0; n];
        for (j, &i) in winners.iter().enumerate() {
            let next_score = ranked.get(j + 1).map_or(0.0, |&s| scores[s]);
            payments[i] = (next_score / quality[i]).min(bids[i]);
        }
        let assignment = (winners.len() == k).then(|| winners.clone());
        let mut alloc = AllocationMatrix::zeros(n, k);
        for (j, &i) in winners.iter().enumerate() {
            alloc.set(i, j, 1.0);
        }
        Ok(MechanismOutcome {
            allocation: alloc,
            assignment,
            payments,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::auction::{AdCandidate, UserContext};
    use crate::baselines::min_bid_to_retain;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ad(bid: f64, pctr: f64) -> AdCandidate {
        AdCandidate {
            bid,
            pctr,
            pcvr: 0.1,
            cpc_value: 1.0,
            features: vec![0.0; 2],
        }
    }

    fn instance(ads: Vec<AdCandidate>, k: usize) -> AuctionInstance {
        let gamma: Vec<f64> = crate::datagen::default_slot_discounts(k);
        AuctionInstance::new(UserContext { features: vec![0.0] }, ads, gamma).unwrap()
    }

    #[test]
    fn two_slot_example() {
        let inst = instance(vec![ad(3.0, 0.1), ad(2.0, 0.2), ad(1.0, 0.25)], 2);
        let out = Gsp::new(1.0).unwrap().run(&inst).unwrap();
        assert_eq!(out.assignment, Some(vec![1, 0]));
        assert_relative_eq!(out.payments[1], 0.3 / 0.2, epsilon = 1e-12);
        assert_relative_eq!(out.payments[0], 0.25 / 0.1, epsilon = 1e-12);
        assert_eq!(out.payments[2], 0.0);
        out.validate(&inst).unwrap();
    }

    #[test]
    fn sole_bidder_pays_nothing() {
        let inst = instance(vec![ad(5.0, 0.3)], 1);
        let out = Gsp::new(1.0).unwrap().run(&inst).unwrap();
        assert_eq!(out.assignment, Some(vec![0]));
        assert_eq!(out.payments[0], 0.0);
    }

    #[test]
    fn sigma_zero_is_pure_bid_ranking() {
        let inst = instance(vec![ad(1.0, 0.9), ad(3.0, 0.1), ad(2.0, 0.5)], 1);
        let out = Gsp::new(0.0).unwrap().run(&inst).unwrap();
        assert_eq!(out.assignment, Some(vec![1]));
        // Payment is exactly the next bid.
        assert_relative_eq!(out.payments[1], 2.0, epsilon = 1e-15);
    }

    #[test]
    fn zero_pctr_never_wins_under_positive_sigma() {
        let inst = instance(vec![ad(10.0, 0.0), ad(1.0, 0.2)], 1);
        let out = Gsp::new(1.0).unwrap().run(&inst).unwrap();
        assert_eq!(out.assignment, Some(vec![1]));
        assert_eq!(out.payments[0], 0.0);
        out.validate(&inst).unwrap();
    }

    #[test]
    fn tie_breaks_prefer_higher_bid_then_lower_index() {
        // Equal scores 0.6; ad1 has the higher bid.
        let inst = instance(vec![ad(2.0, 0.3), ad(3.0, 0.2), ad(0.5, 0.4)], 1);
        let out = Gsp::new(1.0).unwrap().run(&inst).unwrap();
        assert_eq!(out.assignment, Some(vec![1]));
        // Equal scores and equal bids: lower index wins.
        let inst = instance(vec![ad(2.0, 0.3), ad(2.0, 0.3)], 1);
        let out = Gsp::new(1.0).unwrap().run(&inst).unwrap();
        assert_eq!(out.assignment, Some(vec![0]));
    }

    #[test]
    fn payments_match_brute_force_retention() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let gsp = Gsp::new(1.0).unwrap();
        for _ in 0..30 {
            let n = rng.gen_range(2..=5);
            let k = rng.gen_range(1..=2.min(n));
            let ads: Vec<AdCandidate> = (0..n)
                .map(|_| ad(rng.gen_range(0.2..3.0), rng.gen_range(0.05..0.9)))
                .collect();
            let inst = instance(ads, k);
            let out = gsp.run(&inst).unwrap();
            for i in 0..n {
                let grid = min_bid_to_retain(&gsp, &inst, i, 1e-4).unwrap();
                match out.slot_of(i) {
                    Some(_) => {
                        let p = grid.expect("winner retains at some bid");
                        assert!(
                            (p - out.payments[i]).abs() <= 2e-4,
                            "formula {} vs grid {p}",
                            out.payments[i]
                        );
                    }
                    None => assert!(grid.is_none()),
                }
            }
        }
    }
}
