//! Domain model for multi-slot ad auctions.
//!
//! Everything downstream — the learned mechanism, the classical baselines,
//! the incentive auditor — speaks in these types. Money is an abstract
//! 64-bit real; nothing rounds to cents.

use rand::Rng;

/// Feasibility slack for allocation-matrix sums.
pub const FEAS_EPS: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum AuctionError {
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
    #[error("slot index {slot} out of range for {k} slots")]
    SlotOutOfRange { slot: usize, k: usize },
    #[error("invalid outcome: {0}")]
    InvalidOutcome(String),
    #[error("internal error: {0}")]
    Internal(String),
}

/// One advertiser's entry in an auction: a per-click bid plus the quality
/// estimates and features the platform holds for it.
#[derive(Clone, Debug, PartialEq)]
pub struct AdCandidate {
    pub bid: f64,
    pub pctr: f64,
    pub pcvr: f64,
    pub cpc_value: f64,
    pub features: Vec<f64>,
}

impl AdCandidate {
    pub fn validate(&self) -> Result<(), AuctionError> {
        if !(self.bid > 0.0) || !self.bid.is_finite() {
            return Err(AuctionError::InvalidInstance(format!(
                "bid must be positive and finite, got {}",
                self.bid
            )));
        }
        for (name, p) in [("pctr", self.pctr), ("pcvr", self.pcvr)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(AuctionError::InvalidInstance(format!(
                    "{name} must lie in [0,1], got {p}"
                )));
            }
        }
        if self.cpc_value < 0.0 || !self.cpc_value.is_finite() {
            return Err(AuctionError::InvalidInstance(format!(
                "cpc_value must be non-negative, got {}",
                self.cpc_value
            )));
        }
        if self.features.iter().any(|x| !x.is_finite()) {
            return Err(AuctionError::InvalidInstance(
                "non-finite ad feature".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UserContext {
    pub features: Vec<f64>,
}

/// One auction: a user, N candidate ads, and K ranked slots with strictly
/// decreasing position discounts (γ_1 = 1 by construction).
#[derive(Clone, Debug, PartialEq)]
pub struct AuctionInstance {
    pub user: UserContext,
    pub candidates: Vec<AdCandidate>,
    pub slot_discounts: Vec<f64>,
}

impl AuctionInstance {
    pub fn new(
        user: UserContext,
        candidates: Vec<AdCandidate>,
        slot_discounts: Vec<f64>,
    ) -> Result<Self, AuctionError> {
        let inst = AuctionInstance {
            user,
            candidates,
            slot_discounts,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<(), AuctionError> {
        let (n, k) = (self.candidates.len(), self.slot_discounts.len());
        if n == 0 || k == 0 {
            return Err(AuctionError::InvalidInstance(
                "need at least one ad and one slot".into(),
            ));
        }
        if k > n {
            return Err(AuctionError::InvalidInstance(format!(
                "{k} slots but only {n} candidates"
            )));
        }
        if (self.slot_discounts[0] - 1.0).abs() > 1e-12 {
            return Err(AuctionError::InvalidInstance(format!(
                "first slot discount must be 1, got {}",
                self.slot_discounts[0]
            )));
        }
        for w in self.slot_discounts.windows(2) {
            if !(w[1] > 0.0 && w[1] < w[0]) {
                return Err(AuctionError::InvalidInstance(format!(
                    "slot discounts must be strictly decreasing and positive, got {:?}",
                    self.slot_discounts
                )));
            }
        }
        let d_x = self.candidates[0].features.len();
        for (i, ad) in self.candidates.iter().enumerate() {
            ad.validate()
                .map_err(|e| AuctionError::InvalidInstance(format!("candidate {i}: {e}")))?;
            if ad.features.len() != d_x {
                return Err(AuctionError::InvalidInstance(format!(
                    "candidate {i} has {} features, expected {d_x}",
                    ad.features.len()
                )));
            }
        }
        if self.user.features.iter().any(|x| !x.is_finite()) {
            return Err(AuctionError::InvalidInstance(
                "non-finite user feature".into(),
            ));
        }
        Ok(())
    }

    pub fn num_candidates(&self) -> usize {
        self.candidates.len()
    }

    pub fn slot_count(&self) -> usize {
        self.slot_discounts.len()
    }

    /// Conversion value of ad `i` shown in slot `j`:
    /// pCTR × pCVR × CPC × γ_j.
    pub fn valuation(&self, i: usize, j: usize) -> Result<f64, AuctionError> {
        let k = self.slot_count();
        if j >= k {
            return Err(AuctionError::SlotOutOfRange { slot: j, k });
        }
        let ad = &self.candidates[i];
        Ok(ad.pctr * ad.pcvr * ad.cpc_value * self.slot_discounts[j])
    }

    /// Copy of the instance with ad `i`'s bid replaced — the misreport
    /// probe used throughout the incentive audit.
    pub fn with_bid(&self, i: usize, bid: f64) -> AuctionInstance {
        let mut out = self.clone();
        out.candidates[i].bid = bid;
        out
    }
}

/// Row-major N×K matrix of allocation probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct AllocationMatrix {
    n: usize,
    k: usize,
    data: Vec<f64>,
}

impl AllocationMatrix {
    pub fn zeros(n: usize, k: usize) -> Self {
        AllocationMatrix {
            n,
            k,
            data: vec![0.0; n * k],
        }
    }

    pub fn from_data(n: usize, k: usize, data: Vec<f64>) -> Result<Self, AuctionError> {
        if data.len() != n * k {
            return Err(AuctionError::InvalidOutcome(format!(
                "allocation data length {} != {n}×{k}",
                data.len()
            )));
        }
        Ok(AllocationMatrix { n, k, data })
    }

    /// Hard one-hot allocation from a winner list (`winners[j]` takes slot j).
    pub fn from_assignment(n: usize, winners: &[usize]) -> Result<Self, AuctionError> {
        let mut m = AllocationMatrix::zeros(n, winners.len());
        for (j, &i) in winners.iter().enumerate() {
            if i >= n {
                return Err(AuctionError::InvalidOutcome(format!(
                    "winner index {i} out of range for {n} ads"
                )));
            }
            m.data[i * m.k + j] = 1.0;
        }
        Ok(m)
    }

    pub fn num_ads(&self) -> usize {
        self.n
    }

    pub fn num_slots(&self) -> usize {
        self.k
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.k + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.k + j] = v;
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.data[i * self.k..(i + 1) * self.k].iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> f64 {
        (0..self.n).map(|i| self.data[i * self.k + j]).sum()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn validate(&self) -> Result<(), AuctionError> {
        for (idx, &v) in self.data.iter().enumerate() {
            if !(0.0..=1.0 + FEAS_EPS).contains(&v) {
                return Err(AuctionError::InvalidOutcome(format!(
                    "allocation entry ({}, {}) = {v} outside [0, 1]",
                    idx / self.k,
                    idx % self.k
                )));
            }
        }
        for j in 0..self.k {
            let s = self.col_sum(j);
            if s > 1.0 + FEAS_EPS {
                return Err(AuctionError::InvalidOutcome(format!(
                    "slot {j} over-allocated: column sum {s}"
                )));
            }
        }
        for i in 0..self.n {
            let s = self.row_sum(i);
            if s > 1.0 + FEAS_EPS {
                return Err(AuctionError::InvalidOutcome(format!(
                    "ad {i} over-allocated: row sum {s}"
                )));
            }
        }
        Ok(())
    }
}

/// What a mechanism hands back: the allocation, the realized one-to-one
/// assignment (winner of each slot), and per-ad payments.
#[derive(Clone, Debug, PartialEq)]
pub struct MechanismOutcome {
    pub allocation: AllocationMatrix,
    pub assignment: Option<Vec<usize>>,
    pub payments: Vec<f64>,
}

impl MechanismOutcome {
    /// Check every feasibility condition against the instance that
    /// produced this outcome.
    pub fn validate(&self, instance: &AuctionInstance) -> Result<(), AuctionError> {
        let n = instance.num_candidates();
        let k = instance.slot_count();
        if self.allocation.num_ads() != n || self.allocation.num_slots() != k {
            return Err(AuctionError::InvalidOutcome(format!(
                "allocation is {}×{}, instance is {n}×{k}",
                self.allocation.num_ads(),
                self.allocation.num_slots()
            )));
        }
        if self.payments.len() != n {
            return Err(AuctionError::InvalidOutcome(format!(
                "{} payments for {n} ads",
                self.payments.len()
            )));
        }
        self.allocation.validate()?;
        if let Some(w) = &self.assignment {
            if w.len() != k {
                return Err(AuctionError::InvalidOutcome(format!(
                    "assignment length {} != {k} slots",
                    w.len()
                )));
            }
            let mut seen = vec![false; n];
            for &i in w {
                if i >= n {
                    return Err(AuctionError::InvalidOutcome(format!(
                        "winner index {i} out of range"
                    )));
                }
                if seen[i] {
                    return Err(AuctionError::InvalidOutcome(format!(
                        "ad {i} wins more than one slot"
                    )));
                }
                seen[i] = true;
            }
        }
        for (i, &p) in self.payments.iter().enumerate() {
            if !p.is_finite() || p < 0.0 {
                return Err(AuctionError::InvalidOutcome(format!(
                    "payment for ad {i} is {p}"
                )));
            }
            if p > instance.candidates[i].bid {
                return Err(AuctionError::InvalidOutcome(format!(
                    "ad {i} pays {p} above its bid {}",
                    instance.candidates[i].bid
                )));
            }
            let allocated = match &self.assignment {
                Some(w) => w.contains(&i),
                None => self.allocation.row_sum(i) > FEAS_EPS,
            };
            if !allocated && p != 0.0 {
                return Err(AuctionError::InvalidOutcome(format!(
                    "unallocated ad {i} pays {p}"
                )));
            }
        }
        Ok(())
    }

    /// Slot won by ad `i`, if any.
    pub fn slot_of(&self, i: usize) -> Option<usize> {
        self.assignment
            .as_ref()
            .and_then(|w| w.iter().position(|&x| x == i))
    }
}

/// u_i = Σ_j R_ij · v_ij − p_i, with `values` the per-slot valuation row
/// for ad i. Callers choose the valuation convention.
pub fn utility(values: &[f64], outcome: &MechanismOutcome, i: usize) -> f64 {
    let k = outcome.allocation.num_slots();
    debug_assert_eq!(values.len(), k);
    let gross: f64 = (0..k).map(|j| outcome.allocation.get(i, j) * values[j]).sum();
    gross - outcome.payments[i]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SelectionMode {
    Argmax,
    Sample,
}

/// Turn allocation probabilities into K distinct winners, slot by slot.
///
/// Each slot draws from its own column restricted to still-unchosen ads
/// (argmax, or a categorical sample over the renormalized mass). Ties and
/// all-zero columns resolve to the lowest unchosen index; in sample mode an
/// all-zero column falls back to a uniform draw.
pub fn feasible_assignment<R: Rng>(
    alloc: &AllocationMatrix,
    mode: SelectionMode,
    rng: &mut R,
) -> Result<Vec<usize>, AuctionError> {
    let (n, k) = (alloc.num_ads(), alloc.num_slots());
    if k > n {
        return Err(AuctionError::Internal(format!(
            "{k} slots cannot be filled from {n} ads"
        )));
    }
    let mut taken = vec![false; n];
    let mut winners = Vec::with_capacity(k);
    for j in 0..k {
        let pick = match mode {
            SelectionMode::Argmax => {
                let mut best: Option<(usize, f64)> = None;
                for i in 0..n {
                    if taken[i] {
                        continue;
                    }
                    let v = alloc.get(i, j);
                    if best.map_or(true, |(_, bv)| v > bv) {
                        best = Some((i, v));
                    }
                }
                best.map(|(i, _)| i)
            }
            SelectionMode::Sample => {
                let total: f64 = (0..n).filter(|&i| !taken[i]).map(|i| alloc.get(i, j)).sum();
                if total > 0.0 {
                    let mut draw = rng.gen::<f64>() * total;
                    let mut chosen = None;
                    for i in 0..n {
                        if taken[i] {
                            continue;
                        }
                        draw -= alloc.get(i, j);
                        if draw <= 0.0 {
                            chosen = Some(i);
                            break;
                        }
                    }
                    // Guard against accumulated rounding in the prefix sum.
                    chosen.or_else(|| (0..n).rev().find(|&i| !taken[i]))
                } else {
                    let free: Vec<usize> = (0..n).filter(|&i| !taken[i]).collect();
                    Some(free[rng.gen_range(0..free.len())])
                }
            }
        };
        let i = pick.ok_or_else(|| {
            AuctionError::Internal(format!("no eligible ad left for slot {j}"))
        })?;
        taken[i] = true;
        winners.push(i);
    }
    Ok(winners)
}

#[derive(Debug, thiserror::Error)]
pub enum MechanismError {
    #[error(transparent)]
    Auction(#[from] AuctionError),
    #[error("mechanism failure: {0}")]
    Other(String),
}

/// The shared mechanism interface: instance in, allocation + payments out.
pub trait Mechanism {
    fn name(&self) -> &str;
    fn run(&self, instance: &AuctionInstance) -> Result<MechanismOutcome, MechanismError>;
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ad(bid: f64, pctr: f64, pcvr: f64, cpc: f64) -> AdCandidate {
        AdCandidate {
            bid,
            pctr,
            pcvr,
            cpc_value: cpc,
            features: vec![0.0; 4],
        }
    }

    fn instance(ads: Vec<AdCandidate>, gamma: Vec<f64>) -> AuctionInstance {
        AuctionInstance::new(UserContext { features: vec![0.0; 3] }, ads, gamma).unwrap()
    }

    #[test]
    fn valuation_basic() {
        let inst = instance(vec![ad(1.0, 0.1, 0.2, 10.0), ad(1.0, 0.3, 0.0, 5.0)], vec![1.0, 0.5]);
        assert_relative_eq!(inst.valuation(0, 0).unwrap(), 0.2, epsilon = 1e-15);
        // γ_2 = 0.5 halves the top-slot value.
        assert_relative_eq!(inst.valuation(0, 1).unwrap(), 0.1, epsilon = 1e-15);
        // Zero pCVR kills every slot.
        assert_eq!(inst.valuation(1, 0).unwrap(), 0.0);
        assert_eq!(inst.valuation(1, 1).unwrap(), 0.0);
        assert!(matches!(
            inst.valuation(0, 2),
            Err(AuctionError::SlotOutOfRange { slot: 2, k: 2 })
        ));
    }

    #[test]
    fn valuation_monotone_in_slot() {
        let inst = instance(
            vec![ad(2.0, 0.4, 0.3, 8.0), ad(1.0, 0.2, 0.2, 3.0), ad(1.5, 0.1, 0.9, 2.0)],
            vec![1.0, 0.7, 0.5],
        );
        for i in 0..3 {
            for j in 1..3 {
                assert!(inst.valuation(i, j).unwrap() <= inst.valuation(i, j - 1).unwrap());
            }
        }
    }

    #[test]
    fn utility_formula() {
        let alloc = AllocationMatrix::from_assignment(2, &[0]).unwrap();
        let outcome = MechanismOutcome {
            allocation: alloc,
            assignment: Some(vec![0]),
            payments: vec![1.0, 0.0],
        };
        // Winner: R = 1, v = 2, p = 1.
        assert_relative_eq!(utility(&[2.0], &outcome, 0), 1.0, epsilon = 1e-15);
        // Loser with zero payment gets exactly zero.
        assert_eq!(utility(&[2.0], &outcome, 1), 0.0);
    }

    #[test]
    fn utility_linear_in_payment() {
        let alloc = AllocationMatrix::from_data(1, 2, vec![0.6, 0.3]).unwrap();
        let mk = |p: f64| MechanismOutcome {
            allocation: alloc.clone(),
            assignment: None,
            payments: vec![p],
        };
        let values = [1.3, 0.9];
        let delta = 0.37;
        let u0 = utility(&values, &mk(0.5), 0);
        let u1 = utility(&values, &mk(0.5 + delta), 0);
        assert_relative_eq!(u1, u0 - delta, epsilon = 1e-12);
    }

    #[test]
    fn instance_validation_rejects_bad_inputs() {
        let good = vec![ad(1.0, 0.5, 0.5, 1.0), ad(2.0, 0.5, 0.5, 1.0)];
        assert!(AuctionInstance::new(
            UserContext { features: vec![] },
            good.clone(),
            vec![1.0, 0.5, 0.25],
        )
        .is_err()); // K > N
        assert!(AuctionInstance::new(
            UserContext { features: vec![] },
            good.clone(),
            vec![0.9],
        )
        .is_err()); // γ_1 ≠ 1
        assert!(AuctionInstance::new(
            UserContext { features: vec![] },
            good.clone(),
            vec![1.0, 1.0],
        )
        .is_err()); // not strictly decreasing
        let mut bad_bid = good.clone();
        bad_bid[0].bid = 0.0;
        assert!(AuctionInstance::new(UserContext { features: vec![] }, bad_bid, vec![1.0]).is_err());
        let mut bad_pctr = good.clone();
        bad_pctr[1].pctr = 1.5;
        assert!(
            AuctionInstance::new(UserContext { features: vec![] }, bad_pctr, vec![1.0]).is_err()
        );
        let mut ragged = good;
        ragged[1].features = vec![0.0; 7];
        assert!(AuctionInstance::new(UserContext { features: vec![] }, ragged, vec![1.0]).is_err());
    }

    #[test]
    fn allocation_validation() {
        // Over-allocated column.
        let m = AllocationMatrix::from_data(2, 1, vec![0.7, 0.5]).unwrap();
        assert!(m.validate().is_err());
        // Entry outside [0,1].
        let m = AllocationMatrix::from_data(2, 1, vec![-0.1, 0.5]).unwrap();
        assert!(m.validate().is_err());
        // Over-allocated row.
        let m = AllocationMatrix::from_data(1, 2, vec![0.6, 0.6]).unwrap();
        assert!(m.validate().is_err());
        let m = AllocationMatrix::from_data(2, 2, vec![0.5, 0.5, 0.25, 0.25]).unwrap();
        assert!(m.validate().is_ok());
    }

    #[test]
    fn outcome_validation() {
        let inst = instance(vec![ad(1.0, 0.5, 0.5, 1.0), ad(2.0, 0.5, 0.5, 1.0)], vec![1.0]);
        let alloc = AllocationMatrix::from_assignment(2, &[1]).unwrap();
        let ok = MechanismOutcome {
            allocation: alloc.clone(),
            assignment: Some(vec![1]),
            payments: vec![0.0, 1.5],
        };
        assert!(ok.validate(&inst).is_ok());
        // Winner charged above its bid.
        let over = MechanismOutcome {
            allocation: alloc.clone(),
            assignment: Some(vec![1]),
            payments: vec![0.0, 2.5],
        };
        assert!(over.validate(&inst).is_err());
        // Loser charged.
        let loser_pays = MechanismOutcome {
            allocation: alloc.clone(),
            assignment: Some(vec![1]),
            payments: vec![0.1, 1.0],
        };
        assert!(loser_pays.validate(&inst).is_err());
        // Duplicate winners.
        let dup = MechanismOutcome {
            allocation: AllocationMatrix::from_data(2, 2, vec![1.0, 1.0, 0.0, 0.0]).unwrap(),
            assignment: Some(vec![0, 0]),
            payments: vec![1.0, 0.0],
        };
        let inst2 = instance(vec![ad(1.0, 0.5, 0.5, 1.0), ad(2.0, 0.5, 0.5, 1.0)], vec![1.0, 0.5]);
        assert!(dup.validate(&inst2).is_err());
    }

    #[test]
    fn assignment_argmax_picks_column_max() {
        let alloc = AllocationMatrix::from_data(3, 1, vec![0.1, 0.7, 0.2]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w = feasible_assignment(&alloc, SelectionMode::Argmax, &mut rng).unwrap();
        assert_eq!(w, vec![1]);
    }

    #[test]
    fn assignment_identity_matrix_is_fixed_under_both_modes() {
        let mut data = vec![0.0; 9];
        for i in 0..3 {
            data[i * 3 + i] = 1.0;
        }
        let alloc = AllocationMatrix::from_data(3, 3, data).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = feasible_assignment(&alloc, SelectionMode::Argmax, &mut rng).unwrap();
        let s = feasible_assignment(&alloc, SelectionMode::Sample, &mut rng).unwrap();
        assert_eq!(a, vec![0, 1, 2]);
        assert_eq!(s, vec![0, 1, 2]);
    }

    #[test]
    fn assignment_sampling_replays_with_same_seed() {
        let alloc =
            AllocationMatrix::from_data(4, 2, vec![0.3, 0.2, 0.3, 0.1, 0.2, 0.4, 0.2, 0.3])
                .unwrap();
        let mut r1 = ChaCha8Rng::seed_from_u64(42);
        let mut r2 = ChaCha8Rng::seed_from_u64(42);
        let w1 = feasible_assignment(&alloc, SelectionMode::Sample, &mut r1).unwrap();
        let w2 = feasible_assignment(&alloc, SelectionMode::Sample, &mut r2).unwrap();
        assert_eq!(w1, w2);
        assert_ne!(w1[0], w1[1]);
    }

    #[test]
    fn assignment_winners_always_distinct() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for trial in 0..200 {
            let n = 3 + trial % 5;
            let k = 1 + trial % 3;
            let data: Vec<f64> = (0..n * k).map(|_| rng.gen::<f64>() / n as f64).collect();
            let alloc = AllocationMatrix::from_data(n, k, data).unwrap();
            for mode in [SelectionMode::Argmax, SelectionMode::Sample] {
                let w = feasible_assignment(&alloc, mode, &mut rng).unwrap();
                let mut sorted = w.clone();
                sorted.sort_unstable();
                sorted.dedup();
                assert_eq!(sorted.len(), k, "duplicate winners in {w:?}");
            }
        }
    }
}
