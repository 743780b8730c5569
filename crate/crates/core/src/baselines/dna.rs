//! DNA-lite: a GSP variant whose rank score is produced by a small MLP
//! over ad features plus a strictly positive bid coefficient.
//!
//! score_i = MLP(x_i, pCTR_i, pCVR_i, CPC_i) + e^{w_b} · b_i
//!
//! The exponential keeps the score strictly increasing in the bid, which
//! makes minimum-bid-to-retain payments well-defined and computable by
//! bisection. Training maximizes a weighted blend of expected per-slot
//! metrics under a temperature-τ soft ranking.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::auction::{
    AllocationMatrix, AuctionInstance, Mechanism, MechanismError, MechanismOutcome,
};
use crate::datagen::AuctionLog;
use crate::numgrad::{Optimizer, Tape, Tensor, Var};

use super::{rank_descending, BaselineError};

#[derive(Clone, Debug)]
pub struct DnaLiteParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    /// Bid coefficient in log space: the score uses e^{w_bid}·b_i.
    pub w_bid: Tensor,
}

impl DnaLiteParams {
    pub fn init(d_x: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d_in = d_x + 3;
        DnaLiteParams {
            w1: Tensor::randn(&[d_in, hidden], 0.3, &mut rng).with_grad(),
            b1: Tensor::zeros(&[hidden]).with_grad(),
            w2: Tensor::randn(&[hidden, 1], 0.3, &mut rng).with_grad(),
            b2: Tensor::zeros(&[1]).with_grad(),
            w_bid: Tensor::zeros(&[1]).with_grad(),
        }
    }

    pub fn d_in(&self) -> usize {
        self.w1.rows()
    }

    pub fn bid_coefficient(&self) -> f64 {
        self.w_bid.data()[0].exp()
    }

    fn feature_row(ad: &crate::auction::AdCandidate) -> Vec<f64> {
        let mut row = ad.features.clone();
        row.extend_from_slice(&[ad.pctr, ad.pcvr, ad.cpc_value]);
        row
    }

    /// Bid-free part of the rank score.
    pub fn mlp_score(&self, ad: &crate::auction::AdCandidate) -> f64 {
        let row = Self::feature_row(ad);
        debug_assert_eq!(row.len(), self.d_in());
        let hidden = self.w1.cols();
        let mut h = vec![0.0; hidden];
        for (d, x) in row.iter().enumerate() {
            for (j, hj) in h.iter_mut().enumerate() {
                *hj += x * self.w1.data()[d * hidden + j];
            }
        }
        let mut out = self.b2.data()[0];
        for (j, hj) in h.iter().enumerate() {
            out += (hj + self.b1.data()[j]).tanh() * self.w2.data()[j];
        }
        out
    }

    pub fn score(&self, ad: &crate::auction::AdCandidate) -> f64 {
        self.mlp_score(ad) + self.bid_coefficient() * ad.bid
    }

    fn as_slices(&mut self) -> [&mut Tensor; 5] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.w_bid,
        ]
    }
}

pub struct DnaLite {
    params: DnaLiteParams,
    name: String,
}

impl DnaLite {
    pub fn new(params: DnaLiteParams) -> Self {
        DnaLite {
            params,
            name: "dna-lite".into(),
        }
    }

    pub fn params(&self) -> &DnaLiteParams {
        &self.params
    }

    /// True when ad `i` bidding `bid` holds slot `slot` or better, with
    /// every other score frozen.
    fn retains(
        &self,
        instance: &AuctionInstance,
        mlp: &[f64],
        i: usize,
        bid: f64,
        slot: usize,
    ) -> bool {
        let coeff = self.params.bid_coefficient();
        let s_i = mlp[i] + coeff * bid;
        let mut ahead = 0;
        for (o, ad) in instance.candidates.iter().enumerate() {
            if o == i {
                continue;
            }
            let s_o = mlp[o] + coeff * ad.bid;
            let beats = match s_o.partial_cmp(&s_i).expect("finite scores") {
                std::cmp::Ordering::Greater => true,
                std::cmp::Ordering::Less => false,
                std::cmp::Ordering::Equal => match ad.bid.partial_cmp(&bid).expect("finite") {
                    std::cmp::Ordering::Greater => true,
                    std::cmp::Ordering::Less => false,
                    std::cmp::Ordering::Equal => o < i,
                },
            };
            if beats {
                ahead += 1;
            }
        }
        ahead <= slot
    }
}

impl Mechanism for DnaLite {
    fn name(&self) -> &str {
        &self.name
    }

    fn run(&self, instance: &AuctionInstance) -> Result<MechanismOutcome, MechanismError> {
        let n = instance.num_candidates();
        let k = instance.slot_count();
        let bids: Vec<f64> = instance.candidates.iter().map(|a| a.bid).collect();
        let mlp: Vec<f64> = instance
            .candidates
            .iter()
            .map(|a| self.params.mlp_score(a))
            .collect();
        let coeff = self.params.bid_coefficient();
        let scores: Vec<f64> = (0..n).map(|i| mlp[i] + coeff * bids[i]).collect();
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(MechanismError::Other("non-finite rank score".into()));
        }
        let ranked = rank_descending(&scores, &bids, |_| true);
        let winners: Vec<usize> = ranked.iter().take(k).copied().collect();

        let mut payments = vec![0.0; n];
        for (j, &i) in winners.iter().enumerate() {
            // Minimum bid retaining slot j, by bisection on the monotone
            // retention predicate.
            if self.retains(instance, &mlp, i, 0.0, j) {
                payments[i] = 0.0;
                continue;
            }
            let (mut lo, mut hi) = (0.0f64, bids[i]);
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                if self.retains(instance, &mlp, i, mid, j) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            payments[i] = hi;
        }
        let mut alloc = AllocationMatrix::zeros(n, k);
        for (j, &i) in winners.iter().enumerate() {
            alloc.set(i, j, 1.0);
        }
        Ok(MechanismOutcome {
            allocation: alloc,
            assignment: Some(winners),
            payments,
        })
    }
}

struct ParamVars {
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
    w_bid: Var,
}

impl ParamVars {
    fn bind(tape: &mut Tape, p: &DnaLiteParams) -> Self {
        ParamVars {
            w1: tape.leaf(&p.w1),
            b1: tape.leaf(&p.b1),
            w2: tape.leaf(&p.w2),
            b2: tape.leaf(&p.b2),
            w_bid: tape.leaf(&p.w_bid),
        }
    }
}

/// Per-slot blend the trainer maximizes: expected click value, clicks,
/// and conversions, all per impression of the slot.
fn metric_weight(ad: &crate::auction::AdCandidate, lambda: (f64, f64, f64)) -> f64 {
    lambda.0 * ad.bid * ad.pctr + lambda.1 * ad.pctr + lambda.2 * ad.pctr * ad.pcvr
}

/// Soft objective of one instance: slots pick ads by softmax(score/τ)
/// sequentially, already-taken ads masked out hard. Returns the objective
/// and the per-slot softmax nodes.
fn instance_objective(
    tape: &mut Tape,
    vars: &ParamVars,
    instance: &AuctionInstance,
    lambda: (f64, f64, f64),
    tau: f64,
) -> Result<(Var, Vec<Var>), BaselineError> {
    let n = instance.num_candidates();
    let k = instance.slot_count();
    let rows: Vec<f64> = instance
        .candidates
        .iter()
        .flat_map(DnaLiteParams::feature_row)
        .collect();
    let d_in = rows.len() / n;
    let z = tape.constant(Tensor::from_vec(&[n, d_in], rows)?);
    let h = tape.matmul(z, vars.w1)?;
    let h = tape.add_row(h, vars.b1)?;
    let h = tape.tanh(h);
    let m = tape.matmul(h, vars.w2)?;
    let m = tape.add_row(m, vars.b2)?;
    let bids = tape.constant(Tensor::from_vec(
        &[n, 1],
        instance.candidates.iter().map(|a| a.bid).collect(),
    )?);
    let coeff = tape.exp(vars.w_bid);
    let bid_term = tape.scale_by(bids, coeff)?;
    let s = tape.add(m, bid_term)?;
    let s_row = tape.transpose(s)?;

    let weights = tape.constant(Tensor::from_vec(
        &[1, n],
        instance
            .candidates
            .iter()
            .map(|a| metric_weight(a, lambda))
            .collect(),
    )?);

    let mut taken = vec![false; n];
    let mut total: Option<Var> = None;
    let mut alphas = Vec::with_capacity(k);
    for j in 0..k {
        let mask = tape.constant(Tensor::from_vec(
            &[1, n],
            taken
                .iter()
                .map(|&t| if t { f64::NEG_INFINITY } else { 0.0 })
                .collect(),
        )?);
        let masked = tape.add(s_row, mask)?;
        let scaled = tape.scale(masked, 1.0 / tau);
        let alpha = tape.softmax_rows(scaled);
        alphas.push(alpha);
        let contrib = tape.mul(alpha, weights)?;
        let slot_sum = tape.sum_all(contrib);
        let slot_val = tape.scale(slot_sum, instance.slot_discounts[j]);
        total = Some(match total {
            Some(t) => tape.add(t, slot_val)?,
            None => slot_val,
        });
        // Hard mask for the next slot: the argmax of this slot's softmax.
        let probs = tape.value(alpha).data();
        let pick = (0..n)
            .filter(|&i| !taken[i])
            .max_by(|&a, &b| probs[a].partial_cmp(&probs[b]).expect("finite probs"))
            .expect("k <= n leaves a free ad");
        taken[pick] = true;
    }
    Ok((total.expect("k >= 1"), alphas))
}

/// Soft allocation rows per slot at temperature τ — exposed for tests and
/// diagnostics.
pub fn soft_allocation(
    params: &DnaLiteParams,
    instance: &AuctionInstance,
    lambda: (f64, f64, f64),
    tau: f64,
) -> Result<Vec<Vec<f64>>, BaselineError> {
    let mut tape = Tape::new();
    let vars = ParamVars::bind(&mut tape, params);
    let (_, alphas) = instance_objective(&mut tape, &vars, instance, lambda, tau)?;
    Ok(alphas
        .into_iter()
        .map(|a| tape.value(a).data().to_vec())
        .collect())
}

/// Mean soft objective over a slice of instances, without training.
pub fn soft_objective(
    params: &DnaLiteParams,
    instances: &[AuctionInstance],
    lambda: (f64, f64, f64),
    tau: f64,
) -> Result<f64, BaselineError> {
    if instances.is_empty() {
        return Err(BaselineError::InvalidConfig("no instances".into()));
    }
    let mut total = 0.0;
    for inst in instances {
        let mut tape = Tape::new();
        let vars = ParamVars::bind(&mut tape, params);
        let (obj, _) = instance_objective(&mut tape, &vars, inst, lambda, tau)?;
        total += tape.scalar_value(obj);
    }
    Ok(total / instances.len() as f64)
}

#[derive(Clone, Debug)]
pub struct DnaTrainOptions {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub tau: f64,
    pub hidden: usize,
    pub lambda: (f64, f64, f64),
    pub seed: u64,
}

impl Default for DnaTrainOptions {
    fn default() -> Self {
        DnaTrainOptions {
            steps: 300,
            batch: 32,
            lr: 1e-2,
            tau: 0.2,
            hidden: 16,
            lambda: (1.0, 1.0, 1.0),
            seed: 7,
        }
    }
}

/// Fit the rank-score MLP on a log; returns the trained parameters and
/// the per-step loss curve (negated batch objective).
pub fn train_dna_lite(
    log: &AuctionLog,
    opts: &DnaTrainOptions,
) -> Result<(DnaLiteParams, Vec<f64>), BaselineError> {
    if log.is_empty() {
        return Err(BaselineError::InvalidConfig("empty training log".into()));
    }
    if opts.tau <= 0.0 || opts.batch == 0 || opts.lr <= 0.0 {
        return Err(BaselineError::InvalidConfig(format!(
            "bad hyperparameters: tau={} batch={} lr={}",
            opts.tau, opts.batch, opts.lr
        )));
    }
    let d_x = log.instances[0].candidates[0].features.len();
    let mut params = DnaLiteParams::init(d_x, opts.hidden, opts.seed);
    let mut opt = Optimizer::adam(opts.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x9e3779b97f4a7c15);
    let mut curve = Vec::with_capacity(opts.steps);

    for step in 0..opts.steps {
        let mut tape = Tape::new();
        let vars = ParamVars::bind(&mut tape, &params);
        let mut batch_total: Option<Var> = None;
        for _ in 0..opts.batch {
            let inst = &log.instances[rng.gen_range(0..log.len())];
            let (obj, _) = instance_objective(&mut tape, &vars, inst, opts.lambda, opts.tau)?;
            batch_total = Some(match batch_total {
                Some(t) => tape.add(t, obj)?,
                None => obj,
            });
        }
        let mean = tape.scale(batch_total.expect("batch >= 1"), 1.0 / opts.batch as f64);
        let loss = tape.scale(mean, -1.0);
        let loss_val = tape.scalar_value(loss);
        if !loss_val.is_finite() {
            return Err(BaselineError::Diverged(format!(
                "non-finite loss at step {step}"
            )));
        }
        curve.push(loss_val);
        let grads = tape.backward(loss)?;
        let order = [vars.w1, vars.b1, vars.w2, vars.b2, vars.w_bid];
        let grad_refs: Vec<Option<&Tensor>> = order.iter().map(|v| grads.get(*v)).collect();
        opt.step(&mut params.as_slices(), &grad_refs)?;
    }
    Ok((params, curve))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::auction::{AdCandidate, UserContext};
    use crate::datagen::{self, SynthConfig};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ad(bid: f64, rng: &mut ChaCha8Rng) -> AdCandidate {
        AdCandidate {
            bid,
            pctr: rng.gen_range(0.05..0.9),
            pcvr: rng.gen_range(0.01..0.5),
            cpc_value: rng.gen_range(0.5..3.0),
            features: (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        }
    }

    fn random_instance(n: usize, k: usize, rng: &mut ChaCha8Rng) -> AuctionInstance {
        let ads = (0..n).map(|_| ad(rng.gen_range(0.2..3.0), rng)).collect();
        AuctionInstance::new(
            UserContext { features: vec![0.0] },
            ads,
            datagen::default_slot_discounts(k),
        )
        .unwrap()
    }

    #[test]
    fn zero_mlp_reduces_to_bid_ranking() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut params = DnaLiteParams::init(4, 8, 1);
        params.w2 = Tensor::zeros(&[8, 1]).with_grad();
        params.b2 = Tensor::zeros(&[1]).with_grad();
        let mech = DnaLite::new(params);
        for _ in 0..20 {
            let inst = random_instance(5, 2, &mut rng);
            let out = mech.run(&inst).unwrap();
            let mut by_bid: Vec<usize> = (0..5).collect();
            by_bid.sort_by(|&a, &b| {
                inst.candidates[b]
                    .bid
                    .partial_cmp(&inst.candidates[a].bid)
                    .unwrap()
            });
            assert_eq!(out.assignment, Some(by_bid[..2].to_vec()));
            // Pure bid ranking with unit coefficient charges the next bid.
            let w0 = by_bid[0];
            assert_relative_eq!(
                out.payments[w0],
                inst.candidates[by_bid[1]].bid,
                epsilon = 1e-9
            );
            out.validate(&inst).unwrap();
        }
    }

    #[test]
    fn bisection_payment_matches_next_score_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = DnaLiteParams::init(4, 8, 3);
        let mech = DnaLite::new(params);
        for _ in 0..40 {
            let inst = random_instance(6, 3, &mut rng);
            let out = mech.run(&inst).unwrap();
            out.validate(&inst).unwrap();
            let p = mech.params();
            let coeff = p.bid_coefficient();
            let scores: Vec<f64> = inst.candidates.iter().map(|a| p.score(a)).collect();
            let mut order: Vec<usize> = (0..6).collect();
            order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
            for (j, &i) in out.assignment.as_ref().unwrap().iter().enumerate() {
                let next = order.get(j + 1).map_or(f64::NEG_INFINITY, |&s| scores[s]);
                let formula = ((next - p.mlp_score(&inst.candidates[i])) / coeff)
                    .clamp(0.0, inst.candidates[i].bid);
                assert_relative_eq!(out.payments[i], formula, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn payment_is_the_retention_boundary() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params = DnaLiteParams::init(4, 8, 5);
        let mech = DnaLite::new(params);
        let mut boundary_cases = 0;
        for _ in 0..30 {
            let inst = random_instance(5, 2, &mut rng);
            let out = mech.run(&inst).unwrap();
            for (j, &i) in out.assignment.as_ref().unwrap().iter().enumerate() {
                let p = out.payments[i];
                if p < 1e-5 || p > inst.candidates[i].bid - 1e-5 {
                    continue;
                }
                boundary_cases += 1;
                let up = mech.run(&inst.with_bid(i, p + 1e-6)).unwrap();
                assert!(up.slot_of(i).is_some_and(|s| s <= j), "p+ε must retain");
                let down = mech.run(&inst.with_bid(i, p - 1e-6)).unwrap();
                assert!(
                    down.slot_of(i).map_or(true, |s| s > j),
                    "p−ε must lose the slot"
                );
            }
        }
        assert!(boundary_cases > 10, "exercised {boundary_cases} boundaries");
    }

    #[test]
    fn vanishing_temperature_matches_hard_ranking() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let params = DnaLiteParams::init(4, 8, 7);
        let mech = DnaLite::new(params.clone());
        for _ in 0..10 {
            let inst = random_instance(5, 3, &mut rng);
            let alloc = soft_allocation(&params, &inst, (1.0, 0.0, 0.0), 1e-9).unwrap();
            let out = mech.run(&inst).unwrap();
            let winners = out.assignment.unwrap();
            for (j, row) in alloc.iter().enumerate() {
                let hard: usize = (0..5)
                    .max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap())
                    .unwrap();
                assert_eq!(hard, winners[j]);
                assert_relative_eq!(row[hard], 1.0, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn constant_scores_give_uniform_soft_allocation() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut params = DnaLiteParams::init(4, 8, 9);
        params.w2 = Tensor::zeros(&[8, 1]).with_grad();
        let mut inst = random_instance(4, 2, &mut rng);
        for ad in &mut inst.candidates {
            ad.bid = 1.0;
        }
        let alloc = soft_allocation(&params, &inst, (1.0, 1.0, 1.0), 0.5).unwrap();
        for &p in &alloc[0] {
            assert_relative_eq!(p, 0.25, epsilon = 1e-12);
        }
        // Slot 2: one ad is hard-masked, the rest stay uniform.
        let masked = alloc[1].iter().filter(|&&p| p == 0.0).count();
        assert_eq!(masked, 1);
        for &p in alloc[1].iter().filter(|&&p| p > 0.0) {
            assert_relative_eq!(p, 1.0 / 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn training_improves_held_out_objective() {
        let cfg = SynthConfig {
            num_candidates: 5,
            num_slots: 2,
            d_x: 4,
            d_y: 2,
            instances: 300,
            slot_discounts: datagen::default_slot_discounts(2),
            seed: 11,
            ..SynthConfig::default()
        };
        let log = datagen::generate(&cfg).unwrap();
        let (train, held_out) = log.instances.split_at(250);
        let train_log = AuctionLog::new(train.to_vec());
        let opts = DnaTrainOptions {
            steps: 120,
            batch: 16,
            ..DnaTrainOptions::default()
        };
        let init = DnaLiteParams::init(4, opts.hidden, opts.seed);
        let before = soft_objective(&init, held_out, opts.lambda, opts.tau).unwrap();
        let (trained, curve) = train_dna_lite(&train_log, &opts).unwrap();
        let after = soft_objective(&trained, held_out, opts.lambda, opts.tau).unwrap();
        assert_eq!(curve.len(), opts.steps);
        assert!(curve.iter().all(|l| l.is_finite()));
        assert!(
            after >= before,
            "held-out objective fell: {before} -> {after}"
        );
    }
}
