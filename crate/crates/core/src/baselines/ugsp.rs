//! Utility-based GSP: rank by a weighted blend of revenue and quality
//! estimates, charge the next-ranked blend inverted through own pCTR.

use crate::auction::{
    AllocationMatrix, AuctionInstance, Mechanism, MechanismError, MechanismOutcome,
};

use super::{rank_descending, BaselineError};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UgspConfig {
    /// Rank score: λ1·b_i·pCTR_i + λ2·pCTR_i + λ3·pCVR_i.
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

pub struct Ugsp {
    cfg: UgspConfig,
    name: String,
}

impl Ugsp {
    pub fn new(lambda1: f64, lambda2: f64, lambda3: f64) -> Result<Self, BaselineError> {
        if !(lambda1 > 0.0) || !lambda1.is_finite() {
            return Err(BaselineError::InvalidConfig(format!(
                "lambda1 must be positive (the payment divides by it), got {lambda1}"
            )));
        }
        if lambda2 < 0.0 || lambda3 < 0.0 {
            return Err(BaselineError::InvalidConfig(format!(
                "lambda2/lambda3 must be non-negative, got ({lambda2}, {lambda3})"
            )));
        }
        Ok(Ugsp {
            cfg: UgspConfig {
                lambda1,
                lambda2,
                lambda3,
            },
            name: "ugsp".into(),
        })
    }

    pub fn config(&self) -> UgspConfig {
        self.cfg
    }
}

impl Mechanism for Ugsp {
    fn name(&self) -> &str {
        &self.name
    }

    /// r_i = λ1·b_i·pCTR_i + o_i with o_i = λ2·pCTR_i + λ3·pCVR_i.
    /// Slot-j winner pays (r_next − o_i) / (λ1·pCTR_i), clamped to
    /// [0, b_i]; the raw formula can leave that interval when the quality
    /// terms o are heterogeneous. Zero-pCTR ads are excluded from winning
    /// (their payment denominator vanishes).
    fn run(&self, instance: &AuctionInstance) -> Result<MechanismOutcome, MechanismError> {
        let n = instance.num_candidates();
        let k = instance.slot_count();
        let UgspConfig {
            lambda1,
            lambda2,
            lambda3,
        } = self.cfg;
        let bids: Vec<f64> = instance.candidates.iter().map(|a| a.bid).collect();
        let quality: Vec<f64> = instance
            .candidates
            .iter()
            .map(|a| lambda2 * a.pctr + lambda3 * a.pcvr)
            .collect();
        let scores: Vec<f64> = instance
            .candidates
            .iter()
            .enumerate()
            .map(|(i, a)| lambda1 * a.bid * a.pctr + quality[i])
            .collect();
        let ranked = rank_descending(&scores, &bids, |i| instance.candidates[i].pctr > 0.0);

        let winners: Vec<usize> = ranked.iter().take(k).copied().collect();
        let mut payments = vec![0.0; n];
        for (j, &i) in winners.iter().enumerate() {
            let next_score = ranked.get(j + 1).map_or(0.0, |&s| scores[s]);
            let raw = (next_score - quality[i]) / (lambda1 * instance.candidates[i].pctr);
            payments[i] = raw.clamp(0.0, bids[i]);
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
