//! Empirical ex-post regret and the IC-R metric.
//!
//! The auditor treats logged bids as truthful per-click values, replays
//! each auction with one advertiser's bid moved across a multiplicative
//! grid while everyone else stays fixed, and measures the best utility
//! gain. Utilities are expected values per impression: clicks arrive at
//! pCTR·γ_j and payments are per click.

use crate::auction::{AuctionInstance, Mechanism, MechanismError, MechanismOutcome};
use crate::datagen::AuctionLog;

/// Truthful utilities below this floor are excluded from the IC-R
/// denominator; ratios against ~zero utility are noise, not incentive.
pub const UTILITY_FLOOR: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum RegretError {
    #[error("invalid perturbation scheme: {0}")]
    InvalidScheme(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
}

/// Multiplicative misreport grid {(1 + kδ)·b : k = −m..m, k ≠ 0},
/// truncated to positive bids. m = 1 recovers the two-point ±ε probe.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PerturbationScheme {
    pub delta: f64,
    pub half_width: usize,
}

impl Default for PerturbationScheme {
    fn default() -> Self {
        PerturbationScheme {
            delta: 0.05,
            half_width: 10,
        }
    }
}

impl PerturbationScheme {
    pub fn new(delta: f64, half_width: usize) -> Result<Self, RegretError> {
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(RegretError::InvalidScheme(format!(
                "delta must be positive, got {delta}"
            )));
        }
        if half_width == 0 {
            return Err(RegretError::InvalidScheme("half_width must be >= 1".into()));
        }
        Ok(PerturbationScheme { delta, half_width })
    }

    pub fn misreports(&self, bid: f64) -> Vec<f64> {
        let m = self.half_width as i64;
        (-m..=m)
            .filter(|&k| k != 0)
            .map(|k| (1.0 + k as f64 * self.delta) * bid)
            .filter(|&b| b > 0.0)
            .collect()
    }
}

/// Expected utility per impression of ad `i` with per-click value `value`:
/// Σ_j R_ij · pCTR_i · γ_j · (value − p_i).
pub fn click_utility(
    instance: &AuctionInstance,
    outcome: &MechanismOutcome,
    i: usize,
    value: f64,
) -> f64 {
    let pctr = instance.candidates[i].pctr;
    let click_mass: f64 = (0..instance.slot_count())
        .map(|j| outcome.allocation.get(i, j) * pctr * instance.slot_discounts[j])
        .sum();
    click_mass * (value - outcome.payments[i])
}

/// Best utility gain ad `i` can realize on this instance by misreporting,
/// floored at zero. Returns (regret, truthful utility).
pub fn expost_regret(
    mech: &dyn Mechanism,
    instance: &AuctionInstance,
    i: usize,
    scheme: &PerturbationScheme,
) -> Result<(f64, f64), RegretError> {
    let truth = mech.run(instance)?;
    regret_against(mech, instance, &truth, i, scheme)
}

/// Same as `expost_regret` with the truthful outcome precomputed, so a
/// dataset sweep runs each instance once.
fn regret_against(
    mech: &dyn Mechanism,
    instance: &AuctionInstance,
    truth: &MechanismOutcome,
    i: usize,
    scheme: &PerturbationScheme,
) -> Result<(f64, f64), RegretError> {
    let value = instance.candidates[i].bid;
    let u_truth = click_utility(instance, truth, i, value);
    let mut best_gain = 0.0f64;
    for misreport in scheme.misreports(value) {
        let probe = instance.with_bid(i, misreport);
        let out = mech.run(&probe)?;
        let u = click_utility(&probe, &out, i, value);
        best_gain = best_gain.max(u - u_truth);
    }
    Ok((best_gain.max(0.0), u_truth))
}

#[derive(Clone, Debug)]
pub struct RegretReport {
    /// Mean regret per advertiser position across the dataset.
    pub mean_regret: Vec<f64>,
    /// Mean truthful utility per advertiser position.
    pub mean_truthful_utility: Vec<f64>,
    /// Percentage: average best relative utility gain over all
    /// (instance, advertiser) pairs with meaningfully positive truthful
    /// utility.
    pub ic_r_percent: f64,
    pub instances: usize,
}

impl RegretReport {
    pub fn overall_mean_regret(&self) -> f64 {
        if self.mean_regret.is_empty() {
            return 0.0;
        }
        self.mean_regret.iter().sum::<f64>() / self.mean_regret.len() as f64
    }
}

/// Average ex-post regret over a log, plus IC-R.
pub fn empirical_regret(
    mech: &dyn Mechanism,
    log: &AuctionLog,
    scheme: &PerturbationScheme,
) -> Result<RegretReport, RegretError> {
    if log.is_empty() {
        return Err(RegretError::EmptyDataset);
    }
    let n = log.instances[0].num_candidates();
    let mut sum_regret = vec![0.0; n];
    let mut sum_utility = vec![0.0; n];
    let mut ratio_sum = 0.0;
    let mut ratio_count = 0usize;
    for instance in &log.instances {
        let truth = mech.run(instance)?;
        for i in 0..n {
            let (regret, u_truth) = regret_against(mech, instance, &truth, i, scheme)?;
            sum_regret[i] += regret;
            sum_utility[i] += u_truth;
            if u_truth > UTILITY_FLOOR {
                ratio_sum += regret / u_truth;
                ratio_count += 1;
            }
        }
    }
    let l = log.len() as f64;
    Ok(RegretReport {
        mean_regret: sum_regret.into_iter().map(|s| s / l).collect(),
        mean_truthful_utility: sum_utility.into_iter().map(|s| s / l).collect(),
        ic_r_percent: if ratio_count == 0 {
            0.0
        } else {
            100.0 * ratio_sum / ratio_count as f64
        },
        instances: log.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::auction::{
        AdCandidate, AllocationMatrix, Mechanism, MechanismError, UserContext,
    };
    use crate::baselines::{FirstPriceSingleSlot, Gsp, VickreySingleSlot};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

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

    fn random_log(count: usize, seed: u64) -> AuctionLog {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let instances = (0..count)
            .map(|_| {
                instance(&[
                    (rng.gen_range(0.3..3.0), rng.gen_range(0.1..0.9)),
                    (rng.gen_range(0.3..3.0), rng.gen_range(0.1..0.9)),
                    (rng.gen_range(0.3..3.0), rng.gen_range(0.1..0.9)),
                ])
            })
            .collect();
        AuctionLog::new(instances)
    }

    /// Fixed allocation, zero payments: utility cannot depend on the bid.
    struct IndifferentMechanism;

    impl Mechanism for IndifferentMechanism {
        fn name(&self) -> &str {
            "indifferent"
        }

        fn run(
            &self,
            instance: &AuctionInstance,
        ) -> Result<crate::auction::MechanismOutcome, MechanismError> {
            let n = instance.num_candidates();
            let mut alloc = AllocationMatrix::zeros(n, 1);
            alloc.set(0, 0, 1.0);
            Ok(crate::auction::MechanismOutcome {
                allocation: alloc,
                assignment: Some(vec![0]),
                payments: vec![0.0; n],
            })
        }
    }

    #[test]
    fn misreport_grid_shape() {
        let scheme = PerturbationScheme::new(0.05, 10).unwrap();
        let grid = scheme.misreports(2.0);
        assert_eq!(grid.len(), 20);
        assert!(grid.iter().all(|&b| b > 0.0));
        assert!(!grid.contains(&2.0));
        assert_relative_eq!(grid[0], 2.0 * 0.5, epsilon = 1e-12);
        assert_relative_eq!(grid[19], 2.0 * 1.5, epsilon = 1e-12);
        // Wide schemes truncate at zero rather than emitting negative bids.
        let wide = PerturbationScheme::new(0.3, 5).unwrap();
        assert_eq!(wide.misreports(1.0).len(), 8);
    }

    #[test]
    fn bid_independent_mechanism_has_zero_regret() {
        let scheme = PerturbationScheme::default();
        let inst = instance(&[(2.0, 0.5), (1.0, 0.4)]);
        for i in 0..2 {
            let (r, _) = expost_regret(&IndifferentMechanism, &inst, i, &scheme).unwrap();
            assert_eq!(r, 0.0);
        }
    }

    #[test]
    fn second_price_is_truthful_under_fine_grid() {
        let scheme = PerturbationScheme::new(0.01, 60).unwrap();
        let inst = instance(&[(2.0, 1.0), (1.0, 1.0)]);
        for i in 0..2 {
            let (r, _) = expost_regret(&VickreySingleSlot, &inst, i, &scheme).unwrap();
            assert_relative_eq!(r, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn first_price_regret_matches_hand_value() {
        // Bids (2, 1) at unit pCTR: truthful utility is 0; shading to just
        // above 1 wins at price ~1 for a gain of ~1.
        let scheme = PerturbationScheme::new(0.01, 60).unwrap();
        let inst = instance(&[(2.0, 1.0), (1.0, 1.0)]);
        let (r, u) = expost_regret(&FirstPriceSingleSlot, &inst, 0, &scheme).unwrap();
        assert_relative_eq!(u, 0.0, epsilon = 1e-12);
        // Best grid point is the smallest winning bid: 2·(1 − kδ) just
        // above 1, i.e. within one grid step δ·b of the ideal gain.
        assert!((r - 1.0).abs() <= 0.01 * 2.0 + 1e-12, "regret {r}");
    }

    #[test]
    fn second_price_ic_r_is_exactly_zero_across_a_log() {
        let log = random_log(40, 3);
        let report =
            empirical_regret(&VickreySingleSlot, &log, &PerturbationScheme::default()).unwrap();
        assert_eq!(report.ic_r_percent, 0.0);
        assert!(report.mean_regret.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn duplicated_instances_leave_the_report_unchanged() {
        let scheme = PerturbationScheme::default();
        let single = random_log(1, 9);
        let mut doubled = single.clone();
        doubled.instances.push(single.instances[0].clone());
        let gsp = Gsp::new(1.0).unwrap();
        let a = empirical_regret(&gsp, &single, &scheme).unwrap();
        let b = empirical_regret(&gsp, &doubled, &scheme).unwrap();
        assert_eq!(a.mean_regret, b.mean_regret);
        assert_eq!(a.ic_r_percent, b.ic_r_percent);
    }

    #[test]
    fn repeated_audits_are_identical() {
        let log = random_log(20, 5);
        let gsp = Gsp::new(1.0).unwrap();
        let scheme = PerturbationScheme::default();
        let a = empirical_regret(&gsp, &log, &scheme).unwrap();
        let b = empirical_regret(&gsp, &log, &scheme).unwrap();
        assert_eq!(a.mean_regret, b.mean_regret);
        assert_eq!(a.ic_r_percent, b.ic_r_percent);
    }

    #[test]
    fn finer_superset_grids_never_shrink_regret() {
        // {±2δ·k} at half width m is a subset of {±δ·k} at 2m.
        let coarse = PerturbationScheme::new(0.1, 5).unwrap();
        let fine = PerturbationScheme::new(0.05, 10).unwrap();
        let gsp = Gsp::new(1.0).unwrap();
        let log = random_log(25, 7);
        for inst in &log.instances {
            for i in 0..inst.num_candidates() {
                let (rc, _) = expost_regret(&gsp, inst, i, &coarse).unwrap();
                let (rf, _) = expost_regret(&gsp, inst, i, &fine).unwrap();
                assert!(rf >= rc - 1e-12, "fine {rf} < coarse {rc}");
            }
        }
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let log = AuctionLog::new(Vec::new());
        assert!(matches!(
            empirical_regret(&IndifferentMechanism, &log, &PerturbationScheme::default()),
            Err(RegretError::EmptyDataset)
        ));
    }

    #[test]
    fn scheme_validation() {
        assert!(PerturbationScheme::new(0.0, 5).is_err());
        assert!(PerturbationScheme::new(-0.1, 5).is_err());
        assert!(PerturbationScheme::new(0.1, 0).is_err());
    }

    #[test]
    fn gsp_multi_slot_shows_positive_regret_somewhere() {
        // Classic GSP non-envy-freeness: with more than one slot some
        // advertiser usually profits from shading down a slot.
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut found = false;
        let gsp = Gsp::new(1.0).unwrap();
        let scheme = PerturbationScheme::default();
        for _ in 0..50 {
            let ads: Vec<AdCandidate> = (0..4)
                .map(|_| AdCandidate {
                    bid: rng.gen_range(0.3..3.0),
                    pctr: rng.gen_range(0.1..0.9),
                    pcvr: 0.1,
                    cpc_value: 1.0,
                    features: vec![0.0],
                })
                .collect();
            let inst = AuctionInstance::new(
                UserContext { features: vec![0.0] },
                ads,
                vec![1.0, 0.7],
            )
            .unwrap();
            for i in 0..4 {
                let (r, _) = expost_regret(&gsp, &inst, i, &scheme).unwrap();
                if r > 1e-6 {
                    found = true;
                }
            }
        }
        assert!(found, "no positive regret found for multi-slot GSP");
    }
}
