//! EdgeNet: a learned encoder–decoder auction mechanism.
//!
//! The encoder reads only features (never bids) and produces ad tokens and
//! a pooled context; the pointer decoder fills slots one at a time with
//! bids entering through a single positive additive logit term. Deployment
//! takes the decoder's own selections as the assignment — that is what
//! makes feasibility and bid-monotone slots structural rather than
//! empirical — while the soft column-stochastic allocation and payment
//! fractions from the output heads drive training and pricing.

pub mod decoder;
pub mod encoder;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::auction::{
    AllocationMatrix, AuctionInstance, Mechanism, MechanismError, MechanismOutcome,
    SelectionMode,
};
use crate::numgrad::{NumGradError, Tape, Tensor, Var};

pub use decoder::{
    decode, output_heads, DecodeTrace, DecoderConfig, DecoderParams, DecoderVars, SoftOutputs,
};
pub use encoder::{embed, encode, EncodedContext, EncoderConfig, EncoderParams, EncoderVars};

#[derive(Debug, thiserror::Error)]
pub enum EdgeNetError {
    #[error("bad configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Grad(#[from] NumGradError),
    #[error(transparent)]
    Auction(#[from] crate::auction::AuctionError),
}

impl From<EdgeNetError> for MechanismError {
    fn from(e: EdgeNetError) -> Self {
        match e {
            EdgeNetError::Auction(a) => MechanismError::Auction(a),
            other => MechanismError::Other(other.to_string()),
        }
    }
}

/// Full parameter set, encoder and decoder together.
#[derive(Clone, Debug)]
pub struct EdgeNetParams {
    pub encoder: EncoderParams,
    pub decoder: DecoderParams,
}

impl EdgeNetParams {
    pub fn init(
        enc: EncoderConfig,
        dec: DecoderConfig,
        seed: u64,
    ) -> Result<Self, EdgeNetError> {
        if dec.d_h != enc.d_h || dec.d_c != enc.d_c {
            return Err(EdgeNetError::Config(format!(
                "decoder expects tokens {}×{}, encoder produces {}×{}",
                dec.d_h, dec.d_c, enc.d_h, enc.d_c
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(EdgeNetParams {
            encoder: EncoderParams::init(enc, &mut rng)?,
            decoder: DecoderParams::init(dec, &mut rng)?,
        })
    }

    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.encoder.tensors();
        out.extend(self.decoder.tensors());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = self.encoder.tensors_mut();
        out.extend(self.decoder.tensors_mut());
        out
    }

    pub fn num_values(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.numel()).sum()
    }
}

/// Both halves bound to one tape.
pub struct EdgeNetVars {
    pub encoder: EncoderVars,
    pub decoder: DecoderVars,
}

impl EdgeNetVars {
    pub fn bind(tape: &mut Tape, params: &EdgeNetParams) -> Self {
        EdgeNetVars {
            encoder: EncoderVars::bind(tape, &params.encoder),
            decoder: DecoderVars::bind(tape, &params.decoder),
        }
    }

    /// Vars in `EdgeNetParams::tensors()` order.
    pub fn all(&self) -> Vec<Var> {
        let mut out = self.encoder.all();
        out.extend(self.decoder.all());
        out
    }
}

/// One full differentiable pass: encode, decode, output heads.
pub fn forward<R: rand::Rng>(
    tape: &mut Tape,
    vars: &EdgeNetVars,
    instance: &AuctionInstance,
    mode: SelectionMode,
    rng: &mut R,
) -> Result<(DecodeTrace, SoftOutputs), EdgeNetError> {
    let ctx = encode(tape, &vars.encoder, instance)?;
    let trace = decode(tape, &vars.decoder, &ctx, instance, mode, rng)?;
    let soft = output_heads(tape, &vars.decoder, &trace)?;
    Ok((trace, soft))
}

/// Outcome assembly shared by deployment and training rollouts: winners are
/// the decoded selections, each winner pays its sigmoid fraction of its own
/// bid, losers pay zero.
pub fn outcome_from(
    tape: &Tape,
    instance: &AuctionInstance,
    trace: &DecodeTrace,
    soft: &SoftOutputs,
) -> Result<MechanismOutcome, EdgeNetError> {
    let n = instance.num_candidates();
    let fractions = tape.value(soft.pay_frac).data();
    let mut payments = vec![0.0; n];
    for &i in &trace.selected {
        payments[i] = fractions[i] * instance.candidates[i].bid;
    }
    Ok(MechanismOutcome {
        allocation: AllocationMatrix::from_assignment(n, &trace.selected)?,
        assignment: Some(trace.selected.clone()),
        payments,
    })
}

/// The deployable mechanism: frozen parameters plus a selection mode.
/// Sampling re-seeds per call, so `run` is a pure function of the instance.
pub struct EdgeNet {
    pub params: EdgeNetParams,
    pub mode: SelectionMode,
    pub seed: u64,
}

impl EdgeNet {
    pub fn new(params: EdgeNetParams) -> Self {
        EdgeNet {
            params,
            mode: SelectionMode::Argmax,
            seed: 0,
        }
    }

    pub fn sampling(params: EdgeNetParams, seed: u64) -> Self {
        EdgeNet {
            params,
            mode: SelectionMode::Sample,
            seed,
        }
    }
}

impl Mechanism for EdgeNet {
    fn name(&self) -> &str {
        "edgenet"
    }

    fn run(&self, instance: &AuctionInstance) -> Result<MechanismOutcome, MechanismError> {
        let mut tape = Tape::new();
        let vars = EdgeNetVars::bind(&mut tape, &self.params);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let (trace, soft) = forward(&mut tape, &vars, instance, self.mode, &mut rng)
            .map_err(MechanismError::from)?;
        outcome_from(&tape, instance, &trace, &soft).map_err(MechanismError::from)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::auction::{AdCandidate, UserContext};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_params(seed: u64) -> EdgeNetParams {
        let enc = EncoderConfig {
            d_x: 3,
            d_y: 2,
            d_e: 4,
            d_h: 4,
            d_c: 3,
            n_layers: 1,
            n_heads: 2,
            d_ff: 5,
        };
        let dec = DecoderConfig {
            d_h: 4,
            d_c: 3,
            d_a: 4,
            d_o: 5,
        };
        EdgeNetParams::init(enc, dec, seed).unwrap()
    }

    fn random_instance(n: usize, k: usize, rng: &mut ChaCha8Rng) -> AuctionInstance {
        let ads = (0..n)
            .map(|_| AdCandidate {
                bid: rng.gen_range(0.2..3.0),
                pctr: rng.gen_range(0.05..0.9),
                pcvr: rng.gen_range(0.01..0.5),
                cpc_value: rng.gen_range(0.5..3.0),
                features: (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            })
            .collect();
        let user = UserContext {
            features: (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        };
        let discounts: Vec<f64> = (0..k).map(|j| 1.0 / (1.0 + j as f64)).collect();
        AuctionInstance::new(user, ads, discounts).unwrap()
    }

    #[test]
    fn mismatched_encoder_decoder_widths_are_rejected() {
        let enc = EncoderConfig::default();
        let dec = DecoderConfig {
            d_h: enc.d_h + 1,
            ..DecoderConfig::default()
        };
        assert!(EdgeNetParams::init(enc, dec, 0).is_err());
    }

    #[test]
    fn outcomes_validate_and_winners_pay_below_bid() {
        let mech = EdgeNet::new(tiny_params(1));
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        for trial in 0..50 {
            let inst = random_instance(2 + trial % 6, 1 + trial % 3, &mut rng);
            let out = mech.run(&inst).unwrap();
            out.validate(&inst).unwrap();
            let winners = out.assignment.clone().unwrap();
            for i in 0..inst.num_candidates() {
                if winners.contains(&i) {
                    let p = out.payments[i];
                    assert!(p > 0.0 && p < inst.candidates[i].bid);
                } else {
                    assert_eq!(out.payments[i], 0.0);
                }
            }
        }
    }

    #[test]
    fn argmax_runs_are_deterministic() {
        let mech = EdgeNet::new(tiny_params(2));
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let inst = random_instance(5, 2, &mut rng);
        let a = mech.run(&inst).unwrap();
        let b = mech.run(&inst).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sampling_mechanism_is_deterministic_per_seed_but_varies_across() {
        let params = tiny_params(3);
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let inst = random_instance(6, 3, &mut rng);
        let m1 = EdgeNet::sampling(params.clone(), 9);
        let m2 = EdgeNet::sampling(params.clone(), 9);
        assert_eq!(m1.run(&inst).unwrap(), m2.run(&inst).unwrap());
        let mut assignments = std::collections::HashSet::new();
        for seed in 0..15 {
            let m = EdgeNet::sampling(params.clone(), seed);
            let out = m.run(&inst).unwrap();
            out.validate(&inst).unwrap();
            assignments.insert(out.assignment.unwrap());
        }
        assert!(assignments.len() > 1);
    }

    #[test]
    fn permuting_ads_permutes_the_outcome() {
        let mech = EdgeNet::new(tiny_params(4));
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..10 {
            let inst = random_instance(5, 2, &mut rng);
            let mut perm: Vec<usize> = (0..5).collect();
            for i in (1..5).rev() {
                perm.swap(i, rng.gen_range(0..=i));
            }
            let mut shuffled = inst.clone();
            shuffled.candidates = perm.iter().map(|&i| inst.candidates[i].clone()).collect();

            let base = mech.run(&inst).unwrap();
            let out = mech.run(&shuffled).unwrap();
            // perm[new] = old: winners map through the inverse.
            let base_winners = base.assignment.unwrap();
            let winners = out.assignment.unwrap();
            for (slot, &w) in winners.iter().enumerate() {
                assert_eq!(perm[w], base_winners[slot], "slot {slot}");
            }
            for (new_pos, &orig) in perm.iter().enumerate() {
                assert!(
                    (out.payments[new_pos] - base.payments[orig]).abs() < 1e-9,
                    "payment for ad {orig}"
                );
            }
        }
    }

    #[test]
    fn checkpoint_walk_covers_every_tensor_exactly_once() {
        let params = tiny_params(5);
        let names: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
        let unique: std::collections::HashSet<_> = names.iter().collect();
        assert_eq!(names.len(), unique.len());
        let mut p = params.clone();
        let mut_names: Vec<String> = p.tensors_mut().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, mut_names);
        assert!(params.num_values() > 0);
    }
}
