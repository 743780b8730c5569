//! Augmented-Lagrangian training of EdgeNet parameters.
//!
//! The loss is L = −Σ_i F_all_i + Σ_i ρ_i·r̂_i + (ρ/2)·Σ_i r̂_i², where
//! F_all folds revenue/CTR/CVR proxies per advertiser position and r̂ is a
//! differentiable regret estimate: log-sum-exp over misreport utility
//! gains, floored through a scaled softplus. The smoothing inflates r̂ by
//! roughly τ·ln(M) even at a truthful optimum, so multiplier ascent feeds
//! on the *hard* batch regret instead: multipliers grow only while actual
//! measured violations persist, and freeze once the batch audits clean.
//!
//! Platform value is taken as Σ R·F_all with revenue inside F_all, i.e.
//! payments are maximized (anything else would reward a mechanism for
//! charging less while claiming more revenue).

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::auction::{AuctionInstance, SelectionMode};
use crate::checkpoint::{Checkpoint, CheckpointError, TrainerState};
use crate::datagen::AuctionLog;
use crate::edgenet::{
    decode, encode, output_heads, outcome_from, EdgeNetError, EdgeNetParams, EdgeNetVars,
    EncodedContext, SoftOutputs,
};
use crate::numgrad::{NumGradError, Optimizer, Tape, Tensor, Var};
use crate::regret::{click_utility, PerturbationScheme, UTILITY_FLOOR};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("bad configuration: {0}")]
    BadConfig(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("non-finite loss at step {step}")]
    NonFinite {
        step: u64,
        last_checkpoint: Option<PathBuf>,
    },
    #[error(transparent)]
    Model(#[from] EdgeNetError),
    #[error(transparent)]
    Grad(#[from] NumGradError),
    #[error(transparent)]
    Auction(#[from] crate::auction::AuctionError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// Linear weights over the per-ad metric proxies.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveWeights {
    pub revenue: f64,
    pub ctr: f64,
    pub cvr: f64,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        ObjectiveWeights {
            revenue: 1.0,
            ctr: 0.5,
            cvr: 0.5,
        }
    }
}

impl ObjectiveWeights {
    pub fn validate(&self) -> Result<(), TrainError> {
        let ws = [self.revenue, self.ctr, self.cvr];
        if ws.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(TrainError::BadConfig(
                "metric weights must be finite and non-negative".into(),
            ));
        }
        if ws.iter().all(|w| *w == 0.0) {
            return Err(TrainError::BadConfig(
                "at least one metric weight must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Per-position multipliers plus the quadratic penalty weight.
#[derive(Clone, Debug)]
pub struct LagrangianState {
    pub multipliers: Vec<f64>,
    pub penalty: f64,
}

impl LagrangianState {
    pub fn new(positions: usize, penalty: f64) -> Self {
        LagrangianState {
            multipliers: vec![0.0; positions],
            penalty,
        }
    }

    /// Multiplier ascent: ρ_i ← ρ_i + ρ·r̂_i, then grow ρ toward its cap.
    /// Zero measured regret leaves everything unchanged.
    pub fn absorb(&mut self, mean_regret: &[f64], growth: f64, cap: f64) {
        debug_assert_eq!(mean_regret.len(), self.multipliers.len());
        for (m, &r) in self.multipliers.iter_mut().zip(mean_regret) {
            *m += self.penalty * r.max(0.0);
        }
        if mean_regret.iter().any(|&r| r > 0.0) {
            self.penalty = (self.penalty * growth).min(cap);
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: u64,
    pub learning_rate: f64,
    pub seed: u64,
    /// Misreport grid the regret terms draw from.
    pub scheme: PerturbationScheme,
    /// Smoothing temperature for both the max and the floor.
    pub tau: f64,
    /// Grid points sampled per (instance, ad) each step.
    pub misreports_per_ad: usize,
    pub penalty0: f64,
    pub penalty_growth: f64,
    pub penalty_cap: f64,
    /// Steps between multiplier updates.
    pub update_period: u64,
    pub checkpoint_every: u64,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            steps: 500,
            learning_rate: 1e-3,
            seed: 0,
            scheme: PerturbationScheme::default(),
            tau: 0.01,
            misreports_per_ad: 4,
            penalty0: 25.0,
            penalty_growth: 2.0,
            penalty_cap: 1e4,
            update_period: 25,
            checkpoint_every: 100,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 || self.steps == 0 || self.misreports_per_ad == 0 {
            return Err(TrainError::BadConfig(
                "batch size, steps, and misreports per ad must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0) || !(self.tau > 0.0) || !(self.penalty0 > 0.0) {
            return Err(TrainError::BadConfig(
                "learning rate, tau, and penalty must be positive".into(),
            ));
        }
        if self.update_period == 0 || self.checkpoint_every == 0 {
            return Err(TrainError::BadConfig(
                "update period and checkpoint cadence must be positive".into(),
            ));
        }
        if !(self.penalty_growth >= 1.0) || !(self.penalty_cap >= self.penalty0) {
            return Err(TrainError::BadConfig(
                "penalty growth must be ≥ 1 and cap ≥ initial penalty".into(),
            ));
        }
        Ok(())
    }
}

/// One training step's measurements, all plain numbers.
#[derive(Clone, Copy, Debug)]
pub struct StepStats {
    pub step: u64,
    pub loss: f64,
    /// Mean platform objective Σ_i F_all_i over the batch.
    pub objective: f64,
    /// Mean soft regret over (instance, position) pairs.
    pub soft_regret: f64,
    /// Hard regret ratio (percent) measured on this batch's sampled grid.
    pub batch_icr: f64,
    /// Mean payment fraction over the sampled forward's winners.
    pub pay_mean: f64,
    pub mult_mean: f64,
    pub mult_max: f64,
    pub penalty: f64,
}

pub fn stats_header() -> &'static str {
    "step\tloss\tobjective\tsoft_regret\tbatch_icr\tpay_mean\tmult_mean\tmult_max\tpenalty"
}

pub fn stats_line(s: &StepStats) -> String {
    format!(
        "{}\t{:.9e}\t{:.9e}\t{:.9e}\t{:.9e}\t{:.9e}\t{:.9e}\t{:.9e}\t{:.9e}",
        s.step,
        s.loss,
        s.objective,
        s.soft_regret,
        s.batch_icr,
        s.pay_mean,
        s.mult_mean,
        s.mult_max,
        s.penalty
    )
}

/// λ-weighted per-ad metric vector F_all (length N) from a soft forward:
/// f_rev = p̃_i·b_i·Σ_j R_ij·pCTR_i·γ_j (per-click payment × click mass),
/// f_ctr = Σ_j R_ij·pCTR_i·γ_j, f_cvr = Σ_j R_ij·pCTR_i·pCVR_i·γ_j.
pub fn per_ad_metrics(
    tape: &mut Tape,
    instance: &AuctionInstance,
    alloc: Var,
    pay_frac: Var,
    weights: &ObjectiveWeights,
) -> Result<Var, TrainError> {
    let n = instance.num_candidates();
    let k = instance.slot_count();
    let bids: Vec<f64> = instance.candidates.iter().map(|a| a.bid).collect();
    let b = tape.constant(Tensor::from_vec(&[n], bids)?);

    let mut click_w = Vec::with_capacity(n * k);
    let mut order_w = Vec::with_capacity(n * k);
    for ad in &instance.candidates {
        for &g in &instance.slot_discounts {
            click_w.push(ad.pctr * g);
            order_w.push(ad.pctr * ad.pcvr * g);
        }
    }
    let wc = tape.constant(Tensor::from_vec(&[n, k], click_w)?);
    let wo = tape.constant(Tensor::from_vec(&[n, k], order_w)?);

    // Payments are per click, so revenue rides the same click mass as CTR.
    let clicks = tape.mul(alloc, wc)?;
    let mass = tape.row_sums(clicks);
    let pay = tape.mul(pay_frac, b)?;
    let rev = tape.mul(pay, mass)?;
    let ctr = mass;
    let orders = tape.mul(alloc, wo)?;
    let cvr = tape.row_sums(orders);

    let rev = tape.scale(rev, weights.revenue);
    let ctr = tape.scale(ctr, weights.ctr);
    let cvr = tape.scale(cvr, weights.cvr);
    let sum = tape.add(rev, ctr)?;
    Ok(tape.add(sum, cvr)?)
}

/// Soft per-click utility vector under reported bids `reported`, holding
/// true values at the logged bids: u_i = (Σ_j R_ij·pCTR_i·γ_j)·(b_i − p̃_i·b'_i).
fn soft_utility(
    tape: &mut Tape,
    instance: &AuctionInstance,
    reported: &AuctionInstance,
    soft: &SoftOutputs,
) -> Result<Var, TrainError> {
    let n = instance.num_candidates();
    let k = instance.slot_count();
    let mut click_w = Vec::with_capacity(n * k);
    for ad in &instance.candidates {
        for &g in &instance.slot_discounts {
            click_w.push(ad.pctr * g);
        }
    }
    let wc = tape.constant(Tensor::from_vec(&[n, k], click_w)?);
    let clicks = tape.mul(soft.alloc, wc)?;
    let mass = tape.row_sums(clicks);

    let values: Vec<f64> = instance.candidates.iter().map(|a| a.bid).collect();
    let reports: Vec<f64> = reported.candidates.iter().map(|a| a.bid).collect();
    let v = tape.constant(Tensor::from_vec(&[n], values)?);
    let r = tape.constant(Tensor::from_vec(&[n], reports)?);
    let per_click_pay = tape.mul(soft.pay_frac, r)?;
    let margin = tape.sub(v, per_click_pay)?;
    Ok(tape.mul(mass, margin)?)
}

/// Differentiable regret for every position of one instance, plus the hard
/// (values-only) counterparts used for diagnostics.
pub struct SoftRegret {
    /// Length-N vector of r̂_i ≥ 0 (up to smoothing bias).
    pub regret: Var,
    /// Hard regret per position over the same sampled misreports.
    pub hard_regret: Vec<f64>,
    /// Hard truthful utility per position.
    pub truthful_utility: Vec<f64>,
}

/// Evaluate the regret terms for one instance. `misreports[i]` lists the
/// bids position i tries; the encoder context is reused across all of them
/// because it is bid-free.
pub fn soft_regret(
    tape: &mut Tape,
    vars: &EdgeNetVars,
    ctx: &EncodedContext,
    instance: &AuctionInstance,
    misreports: &[Vec<f64>],
    tau: f64,
) -> Result<SoftRegret, TrainError> {
    let n = instance.num_candidates();
    debug_assert_eq!(misreports.len(), n);
    let mut rng = ChaCha8Rng::seed_from_u64(0); // argmax decoding ignores it

    let truth_trace = decode(tape, &vars.decoder, ctx, instance, SelectionMode::Argmax, &mut rng)?;
    let truth_soft = output_heads(tape, &vars.decoder, &truth_trace)?;
    let u_truth = soft_utility(tape, instance, instance, &truth_soft)?;
    let u_truth_col = tape.reshape(u_truth, &[n, 1])?;

    let truth_outcome = outcome_from(tape, instance, &truth_trace, &truth_soft)?;
    let truthful_utility: Vec<f64> = (0..n)
        .map(|i| click_utility(instance, &truth_outcome, i, instance.candidates[i].bid))
        .collect();

    let mut regret_rows = Vec::with_capacity(n);
    let mut hard_regret = vec![0.0f64; n];
    for i in 0..n {
        let mut gains = Vec::with_capacity(misreports[i].len());
        let mut gain_vals = Vec::with_capacity(misreports[i].len());
        for &bid in &misreports[i] {
            let reported = instance.with_bid(i, bid);
            let trace =
                decode(tape, &vars.decoder, ctx, &reported, SelectionMode::Argmax, &mut rng)?;
            let soft = output_heads(tape, &vars.decoder, &trace)?;
            let u_mis = soft_utility(tape, instance, &reported, &soft)?;
            let u_mis_col = tape.reshape(u_mis, &[n, 1])?;
            let gain_all = tape.sub(u_mis_col, u_truth_col)?;
            let gain = tape.gather_rows(gain_all, &[i])?;
            gain_vals.push(tape.value(gain).data()[0]);
            gains.push(gain);

            let outcome = outcome_from(tape, &reported, &trace, &soft)?;
            let hard_u = click_utility(&reported, &outcome, i, instance.candidates[i].bid);
            hard_regret[i] = hard_regret[i].max(hard_u - truthful_utility[i]);
        }
        hard_regret[i] = hard_regret[i].max(0.0);

        // Stable log-sum-exp: shifting by the max (a constant) leaves both
        // the value and the gradient exact.
        let shift = gain_vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let row = tape.concat_cols(&gains)?;
        let row = tape.add_scalar(row, -shift);
        let row = tape.scale(row, 1.0 / tau);
        let row = tape.exp(row);
        let total = tape.row_sums(row);
        let lse = tape.ln(total);
        let lse = tape.scale(lse, tau);
        let lse = tape.add_scalar(lse, shift);
        // Smooth floor: τ·softplus(x/τ) → max(x, 0) as τ → 0.
        let scaled = tape.scale(lse, 1.0 / tau);
        let floored = tape.softplus(scaled);
        let r_i = tape.scale(floored, tau);
        regret_rows.push(tape.reshape(r_i, &[1, 1])?);
    }
    let stacked = tape.concat_rows(&regret_rows)?;
    let regret = tape.reshape(stacked, &[n])?;
    Ok(SoftRegret {
        regret,
        hard_regret,
        truthful_utility,
    })
}

/// Deterministic Lagrangian value on a dataset slice: argmax forwards, the
/// full misreport grid, and fixed multipliers. Used to compare parameter
/// sets on equal footing.
pub fn evaluate_lagrangian(
    instances: &[AuctionInstance],
    params: &EdgeNetParams,
    weights: &ObjectiveWeights,
    state: &LagrangianState,
    scheme: &PerturbationScheme,
    tau: f64,
) -> Result<f64, TrainError> {
    if instances.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    weights.validate()?;
    let mut total = 0.0;
    for instance in instances {
        let mut tape = Tape::new();
        let vars = EdgeNetVars::bind(&mut tape, params);
        let ctx = encode(&mut tape, &vars.encoder, instance)?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let trace = decode(
            &mut tape,
            &vars.decoder,
            &ctx,
            instance,
            SelectionMode::Argmax,
            &mut rng,
        )?;
        let soft = output_heads(&mut tape, &vars.decoder, &trace)?;
        let f_all = per_ad_metrics(&mut tape, instance, soft.alloc, soft.pay_frac, weights)?;
        let objective = tape.sum_all(f_all);

        let grids: Vec<Vec<f64>> = instance
            .candidates
            .iter()
            .map(|a| scheme.misreports(a.bid))
            .collect();
        let sr = soft_regret(&mut tape, &vars, &ctx, instance, &grids, tau)?;
        let n = instance.num_candidates();
        let rho = tape.constant(Tensor::from_vec(&[n], state.multipliers.clone())?);
        let pen1 = tape.mul(rho, sr.regret)?;
        let pen1 = tape.sum_all(pen1);
        let sq = tape.mul(sr.regret, sr.regret)?;
        let pen2 = tape.sum_all(sq);
        let pen2 = tape.scale(pen2, state.penalty / 2.0);

        let neg_obj = tape.scale(objective, -1.0);
        let l = tape.add(neg_obj, pen1)?;
        let l = tape.add(l, pen2)?;
        total += tape.scalar_value(l);
    }
    Ok(total / instances.len() as f64)
}

/// Where training ended up: final parameters, the full per-step record,
/// and everything needed to resume.
#[derive(Debug)]
pub struct TrainOutput {
    pub params: EdgeNetParams,
    pub stats: Vec<StepStats>,
    pub state: LagrangianState,
    pub optimizer: Optimizer,
    pub last_checkpoint: Option<PathBuf>,
}

/// A checkpointed position to continue from.
pub struct ResumePoint {
    pub step: u64,
    pub state: TrainerState,
}

fn save_checkpoint(
    dir: &Path,
    params: &EdgeNetParams,
    step: u64,
    state: &LagrangianState,
    optimizer: &Optimizer,
) -> Result<PathBuf, TrainError> {
    std::fs::create_dir_all(dir).map_err(CheckpointError::Io)?;
    let trainer = TrainerState {
        multipliers: state.multipliers.clone(),
        penalty: state.penalty,
        optimizer: optimizer.clone(),
    };
    let ck = Checkpoint::capture(params, step, Some(trainer));
    let path = dir.join(format!("step_{step:06}.ckpt"));
    ck.save(&path)?;
    ck.save(&dir.join("latest.ckpt"))?;
    Ok(path)
}

/// Minibatch augmented-Lagrangian descent. Bit-reproducible for a fixed
/// (dataset, initial params, config) triple; aborts on a non-finite loss,
/// leaving the last saved checkpoint in place.
pub fn train(
    data: &AuctionLog,
    params: EdgeNetParams,
    weights: &ObjectiveWeights,
    config: &TrainConfig,
    resume: Option<ResumePoint>,
) -> Result<TrainOutput, TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    weights.validate()?;
    config.validate()?;

    let n = data.instances[0].num_candidates();
    let mut params = params;
    let (start_step, mut state, mut optimizer) = match resume {
        Some(r) => {
            if r.state.multipliers.len() != n {
                return Err(TrainError::BadConfig(format!(
                    "checkpoint has {} multipliers, dataset has {n} positions",
                    r.state.multipliers.len()
                )));
            }
            (
                r.step,
                LagrangianState {
                    multipliers: r.state.multipliers,
                    penalty: r.state.penalty,
                },
                r.state.optimizer,
            )
        }
        None => (
            0,
            LagrangianState::new(n, config.penalty0),
            Optimizer::adam(config.learning_rate),
        ),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ start_step);
    let mut stats = Vec::with_capacity(config.steps as usize);
    let mut last_checkpoint: Option<PathBuf> = None;

    for step in start_step..start_step + config.steps {
        let mut tape = Tape::new();
        let vars = EdgeNetVars::bind(&mut tape, &params);

        let mut batch_loss: Option<Var> = None;
        let mut objective_sum = 0.0;
        let mut soft_sum = 0.0;
        let mut regret_by_pos = vec![0.0; n];
        let mut pay_sum = 0.0;
        let mut pay_count = 0usize;
        let mut icr_sum = 0.0;
        let mut icr_count = 0usize;

        for _ in 0..config.batch_size {
            let instance = &data.instances[rng.gen_range(0..data.len())];
            let ctx = encode(&mut tape, &vars.encoder, instance)?;

            // Exploration rollout: sampled masks, soft loss path.
            let trace = decode(
                &mut tape,
                &vars.decoder,
                &ctx,
                instance,
                SelectionMode::Sample,
                &mut rng,
            )?;
            let soft = output_heads(&mut tape, &vars.decoder, &trace)?;
            let f_all = per_ad_metrics(&mut tape, instance, soft.alloc, soft.pay_frac, weights)?;
            let objective = tape.sum_all(f_all);
            objective_sum += tape.scalar_value(objective);
            let fractions = tape.value(soft.pay_frac).data();
            for &i in &trace.selected {
                pay_sum += fractions[i];
                pay_count += 1;
            }

            let grids: Vec<Vec<f64>> = instance
                .candidates
                .iter()
                .map(|a| {
                    let grid = config.scheme.misreports(a.bid);
                    (0..config.misreports_per_ad.min(grid.len()))
                        .map(|_| grid[rng.gen_range(0..grid.len())])
                        .collect()
                })
                .collect();
            let sr = soft_regret(&mut tape, &vars, &ctx, instance, &grids, config.tau)?;
            let soft_vals = tape.value(sr.regret).data().to_vec();
            for &r in &soft_vals {
                soft_sum += r;
            }
            for (i, &h) in sr.hard_regret.iter().enumerate() {
                regret_by_pos[i] += h;
            }
            for i in 0..n {
                if sr.truthful_utility[i] > UTILITY_FLOOR {
                    icr_sum += sr.hard_regret[i] / sr.truthful_utility[i];
                    icr_count += 1;
                }
            }

            let rho = tape.constant(Tensor::from_vec(&[n], state.multipliers.clone())?);
            let pen1 = tape.mul(rho, sr.regret)?;
            let pen1 = tape.sum_all(pen1);
            let sq = tape.mul(sr.regret, sr.regret)?;
            let pen2 = tape.sum_all(sq);
            let pen2 = tape.scale(pen2, state.penalty / 2.0);

            let neg_obj = tape.scale(objective, -1.0);
            let inst_loss = tape.add(neg_obj, pen1)?;
            let inst_loss = tape.add(inst_loss, pen2)?;
            batch_loss = Some(match batch_loss {
                None => inst_loss,
                Some(acc) => tape.add(acc, inst_loss)?,
            });
        }

        let loss = tape.scale(batch_loss.expect("non-empty batch"), 1.0 / config.batch_size as f64);
        let loss_val = tape.scalar_value(loss);
        if !loss_val.is_finite() {
            return Err(TrainError::NonFinite {
                step,
                last_checkpoint,
            });
        }

        let grads = tape.backward(loss)?;
        let grad_refs: Vec<Option<&Tensor>> =
            vars.all().iter().map(|v| grads.get(*v)).collect();
        let mut slots = params.tensors_mut();
        let mut tensor_refs: Vec<&mut Tensor> =
            slots.iter_mut().map(|(_, t)| &mut **t).collect();
        optimizer.step(&mut tensor_refs, &grad_refs)?;
        drop(slots);

        let denom = (config.batch_size * n) as f64;
        let stat = StepStats {
            step,
            loss: loss_val,
            objective: objective_sum / config.batch_size as f64,
            soft_regret: soft_sum / denom,
            batch_icr: if icr_count == 0 {
                0.0
            } else {
                100.0 * icr_sum / icr_count as f64
            },
            pay_mean: if pay_count == 0 {
                0.0
            } else {
                pay_sum / pay_count as f64
            },
            mult_mean: state.multipliers.iter().sum::<f64>() / n as f64,
            mult_max: state.multipliers.iter().cloned().fold(0.0, f64::max),
            penalty: state.penalty,
        };
        stats.push(stat);

        let done = step + 1;
        if done % config.update_period == 0 {
            // Ascend on what the auditor would actually measure.
            let mean: Vec<f64> = regret_by_pos
                .iter()
                .map(|r| r / config.batch_size as f64)
                .collect();
            state.absorb(&mean, config.penalty_growth, config.penalty_cap);
        }
        if let Some(dir) = &config.checkpoint_dir {
            if done % config.checkpoint_every == 0 || done == start_step + config.steps {
                last_checkpoint = Some(save_checkpoint(dir, &params, done, &state, &optimizer)?);
            }
        }
    }

    Ok(TrainOutput {
        params,
        stats,
        state,
        optimizer,
        last_checkpoint,
    })
}
