//! Bid-free, permutation-equivariant auction-context encoder.
//!
//! Ads and the user are embedded into a shared token space and processed
//! by one joint self-attention pass — the user is token 0, ads are a set
//! (no positional encodings). Bids never enter, so every encoder output
//! is constant under bid changes by construction.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::auction::AuctionInstance;
use crate::numgrad::{Tape, Tensor, Var};

use super::EdgeNetError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub d_x: usize,
    pub d_y: usize,
    /// Embedding width shared by ad and user tokens.
    pub d_e: usize,
    /// Transformer model width.
    pub d_h: usize,
    /// Context vector width.
    pub d_c: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            d_x: 8,
            d_y: 8,
            d_e: 16,
            d_h: 32,
            d_c: 32,
            n_layers: 1,
            n_heads: 2,
            d_ff: 64,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), EdgeNetError> {
        let dims = [
            self.d_x,
            self.d_y,
            self.d_e,
            self.d_h,
            self.d_c,
            self.n_layers,
            self.n_heads,
            self.d_ff,
        ];
        if dims.iter().any(|&d| d == 0) {
            return Err(EdgeNetError::Config("all dimensions must be positive".into()));
        }
        if self.d_h % self.n_heads != 0 {
            return Err(EdgeNetError::Config(format!(
                "head count {} must divide model width {}",
                self.n_heads, self.d_h
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_h / self.n_heads
    }
}

#[derive(Clone, Debug)]
pub struct AttentionHead {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
}

#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    pub heads: Vec<AttentionHead>,
    pub wo: Tensor,
    pub bo: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
    pub ff1: Tensor,
    pub ff1_b: Tensor,
    pub ff2: Tensor,
    pub ff2_b: Tensor,
}

#[derive(Clone, Debug)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub w_ad: Tensor,
    pub b_ad: Tensor,
    pub w_user: Tensor,
    pub b_user: Tensor,
    /// Learned type marker added to the user token.
    pub user_type: Tensor,
    pub w_in: Tensor,
    pub b_in: Tensor,
    pub layers: Vec<EncoderLayer>,
    pub w_pool: Tensor,
    pub b_pool: Tensor,
}

fn mat<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    Tensor::randn(&[rows, cols], 1.0 / (rows as f64).sqrt(), rng).with_grad()
}

fn zeros_vec(n: usize) -> Tensor {
    Tensor::zeros(&[n]).with_grad()
}

fn ones_vec(n: usize) -> Tensor {
    Tensor::from_vec(&[n], vec![1.0; n]).expect("shape").with_grad()
}

impl EncoderParams {
    pub fn init<R: Rng>(config: EncoderConfig, rng: &mut R) -> Result<Self, EdgeNetError> {
        config.validate()?;
        let dk = config.head_dim();
        let layers = (0..config.n_layers)
            .map(|_| EncoderLayer {
                ln1_gain: ones_vec(config.d_h),
                ln1_bias: zeros_vec(config.d_h),
                heads: (0..config.n_heads)
                    .map(|_| AttentionHead {
                        wq: mat(config.d_h, dk, rng),
                        wk: mat(config.d_h, dk, rng),
                        wv: mat(config.d_h, dk, rng),
                    })
                    .collect(),
                wo: mat(config.d_h, config.d_h, rng),
                bo: zeros_vec(config.d_h),
                ln2_gain: ones_vec(config.d_h),
                ln2_bias: zeros_vec(config.d_h),
                ff1: mat(config.d_h, config.d_ff, rng),
                ff1_b: zeros_vec(config.d_ff),
                ff2: mat(config.d_ff, config.d_h, rng),
                ff2_b: zeros_vec(config.d_h),
            })
            .collect();
        Ok(EncoderParams {
            config,
            w_ad: mat(config.d_x, config.d_e, rng),
            b_ad: zeros_vec(config.d_e),
            w_user: mat(config.d_y, config.d_e, rng),
            b_user: zeros_vec(config.d_e),
            user_type: Tensor::randn(&[config.d_e], 0.1, rng).with_grad(),
            w_in: mat(config.d_e, config.d_h, rng),
            b_in: zeros_vec(config.d_h),
            layers,
            w_pool: mat(config.d_h, config.d_c, rng),
            b_pool: zeros_vec(config.d_c),
        })
    }

    /// Deterministic (name, tensor) walk; the optimizer and checkpoint
    /// formats both key off this order.
    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![
            ("enc.w_ad".into(), &self.w_ad),
            ("enc.b_ad".into(), &self.b_ad),
            ("enc.w_user".into(), &self.w_user),
            ("enc.b_user".into(), &self.b_user),
            ("enc.user_type".into(), &self.user_type),
            ("enc.w_in".into(), &self.w_in),
            ("enc.b_in".into(), &self.b_in),
        ];
        for (l, layer) in self.layers.iter().enumerate() {
            out.push((format!("enc.l{l}.ln1_gain"), &layer.ln1_gain));
            out.push((format!("enc.l{l}.ln1_bias"), &layer.ln1_bias));
            for (h, head) in layer.heads.iter().enumerate() {
                out.push((format!("enc.l{l}.h{h}.wq"), &head.wq));
                out.push((format!("enc.l{l}.h{h}.wk"), &head.wk));
                out.push((format!("enc.l{l}.h{h}.wv"), &head.wv));
            }
            out.push((format!("enc.l{l}.wo"), &layer.wo));
            out.push((format!("enc.l{l}.bo"), &layer.bo));
            out.push((format!("enc.l{l}.ln2_gain"), &layer.ln2_gain));
            out.push((format!("enc.l{l}.ln2_bias"), &layer.ln2_bias));
            out.push((format!("enc.l{l}.ff1"), &layer.ff1));
            out.push((format!("enc.l{l}.ff1_b"), &layer.ff1_b));
            out.push((format!("enc.l{l}.ff2"), &layer.ff2));
            out.push((format!("enc.l{l}.ff2_b"), &layer.ff2_b));
        }
        out.push(("enc.w_pool".into(), &self.w_pool));
        out.push(("enc.b_pool".into(), &self.b_pool));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = vec![
            ("enc.w_ad".into(), &mut self.w_ad),
            ("enc.b_ad".into(), &mut self.b_ad),
            ("enc.w_user".into(), &mut self.w_user),
            ("enc.b_user".into(), &mut self.b_user),
            ("enc.user_type".into(), &mut self.user_type),
            ("enc.w_in".into(), &mut self.w_in),
            ("enc.b_in".into(), &mut self.b_in),
        ];
        for (l, layer) in self.layers.iter_mut().enumerate() {
            out.push((format!("enc.l{l}.ln1_gain"), &mut layer.ln1_gain));
            out.push((format!("enc.l{l}.ln1_bias"), &mut layer.ln1_bias));
            for (h, head) in layer.heads.iter_mut().enumerate() {
                out.push((format!("enc.l{l}.h{h}.wq"), &mut head.wq));
                out.push((format!("enc.l{l}.h{h}.wk"), &mut head.wk));
                out.push((format!("enc.l{l}.h{h}.wv"), &mut head.wv));
            }
            out.push((format!("enc.l{l}.wo"), &mut layer.wo));
            out.push((format!("enc.l{l}.bo"), &mut layer.bo));
            out.push((format!("enc.l{l}.ln2_gain"), &mut layer.ln2_gain));
            out.push((format!("enc.l{l}.ln2_bias"), &mut layer.ln2_bias));
            out.push((format!("enc.l{l}.ff1"), &mut layer.ff1));
            out.push((format!("enc.l{l}.ff1_b"), &mut layer.ff1_b));
            out.push((format!("enc.l{l}.ff2"), &mut layer.ff2));
            out.push((format!("enc.l{l}.ff2_b"), &mut layer.ff2_b));
        }
        out.push(("enc.w_pool".into(), &mut self.w_pool));
        out.push(("enc.b_pool".into(), &mut self.b_pool));
        out
    }
}

pub struct HeadVars {
    wq: Var,
    wk: Var,
    wv: Var,
}

pub struct LayerVars {
    ln1_gain: Var,
    ln1_bias: Var,
    heads: Vec<HeadVars>,
    wo: Var,
    bo: Var,
    ln2_gain: Var,
    ln2_bias: Var,
    ff1: Var,
    ff1_b: Var,
    ff2: Var,
    ff2_b: Var,
}

/// Encoder parameters bound to a tape. The binding order matches
/// `EncoderParams::tensors()`.
pub struct EncoderVars {
    pub config: EncoderConfig,
    w_ad: Var,
    b_ad: Var,
    w_user: Var,
    b_user: Var,
    user_type: Var,
    w_in: Var,
    b_in: Var,
    layers: Vec<LayerVars>,
    w_pool: Var,
    b_pool: Var,
}

impl EncoderVars {
    pub fn bind(tape: &mut Tape, p: &EncoderParams) -> Self {
        EncoderVars {
            config: p.config,
            w_ad: tape.leaf(&p.w_ad),
            b_ad: tape.leaf(&p.b_ad),
            w_user: tape.leaf(&p.w_user),
            b_user: tape.leaf(&p.b_user),
            user_type: tape.leaf(&p.user_type),
            w_in: tape.leaf(&p.w_in),
            b_in: tape.leaf(&p.b_in),
            layers: p
                .layers
                .iter()
                .map(|l| LayerVars {
                    ln1_gain: tape.leaf(&l.ln1_gain),
                    ln1_bias: tape.leaf(&l.ln1_bias),
                    heads: l
                        .heads
                        .iter()
                        .map(|h| HeadVars {
                            wq: tape.leaf(&h.wq),
                            wk: tape.leaf(&h.wk),
                            wv: tape.leaf(&h.wv),
                        })
                        .collect(),
                    wo: tape.leaf(&l.wo),
                    bo: tape.leaf(&l.bo),
                    ln2_gain: tape.leaf(&l.ln2_gain),
                    ln2_bias: tape.leaf(&l.ln2_bias),
                    ff1: tape.leaf(&l.ff1),
                    ff1_b: tape.leaf(&l.ff1_b),
                    ff2: tape.leaf(&l.ff2),
                    ff2_b: tape.leaf(&l.ff2_b),
                })
                .collect(),
            w_pool: tape.leaf(&p.w_pool),
            b_pool: tape.leaf(&p.b_pool),
        }
    }

    /// Vars in the same order as `EncoderParams::tensors()`.
    pub fn all(&self) -> Vec<Var> {
        let mut out = vec![
            self.w_ad,
            self.b_ad,
            self.w_user,
            self.b_user,
            self.user_type,
            self.w_in,
            self.b_in,
        ];
        for layer in &self.layers {
            out.push(layer.ln1_gain);
            out.push(layer.ln1_bias);
            for head in &layer.heads {
                out.push(head.wq);
                out.push(head.wk);
                out.push(head.wv);
            }
            out.push(layer.wo);
            out.push(layer.bo);
            out.push(layer.ln2_gain);
            out.push(layer.ln2_bias);
            out.push(layer.ff1);
            out.push(layer.ff1_b);
            out.push(layer.ff2);
            out.push(layer.ff2_b);
        }
        out.push(self.w_pool);
        out.push(self.b_pool);
        out
    }
}

/// Transformer outputs for one auction, living on the caller's tape.
pub struct EncodedContext {
    /// (N, d_h): h_1..h_N.
    pub ad_tokens: Var,
    /// (1, d_h): h_y.
    pub user_token: Var,
    /// (1, d_c): pooled context vector c.
    pub context: Var,
}

const LN_EPS: f64 = 1e-5;

/// Token embeddings, user first: (N+1, d_e). Only features enter — bids
/// are invisible to this half of the network.
pub fn embed(
    tape: &mut Tape,
    vars: &EncoderVars,
    instance: &AuctionInstance,
) -> Result<Var, EdgeNetError> {
    let cfg = &vars.config;
    let n = instance.num_candidates();
    if instance.user.features.len() != cfg.d_y {
        return Err(EdgeNetError::Config(format!(
            "user features {} != d_y {}",
            instance.user.features.len(),
            cfg.d_y
        )));
    }
    if instance.candidates[0].features.len() != cfg.d_x {
        return Err(EdgeNetError::Config(format!(
            "ad features {} != d_x {}",
            instance.candidates[0].features.len(),
            cfg.d_x
        )));
    }
    let y = tape.constant(Tensor::from_vec(&[1, cfg.d_y], instance.user.features.clone())?);
    let e_y = tape.matmul(y, vars.w_user)?;
    let e_y = tape.add_row(e_y, vars.b_user)?;
    let e_y = tape.add_row(e_y, vars.user_type)?;

    let xs: Vec<f64> = instance
        .candidates
        .iter()
        .flat_map(|a| a.features.iter().copied())
        .collect();
    let x = tape.constant(Tensor::from_vec(&[n, cfg.d_x], xs)?);
    let e_ads = tape.matmul(x, vars.w_ad)?;
    let e_ads = tape.add_row(e_ads, vars.b_ad)?;

    Ok(tape.concat_rows(&[e_y, e_ads])?)
}

/// Pre-norm transformer over the token set, then mean-pool into c.
pub fn encode_tokens(
    tape: &mut Tape,
    vars: &EncoderVars,
    tokens: Var,
) -> Result<EncodedContext, EdgeNetError> {
    let cfg = &vars.config;
    let t = tape.value(tokens).rows();
    let scale = 1.0 / (cfg.head_dim() as f64).sqrt();

    let mut x = tape.matmul(tokens, vars.w_in)?;
    x = tape.add_row(x, vars.b_in)?;

    for layer in &vars.layers {
        let normed = tape.layer_norm(x, layer.ln1_gain, layer.ln1_bias, LN_EPS)?;
        let mut head_outs = Vec::with_capacity(layer.heads.len());
        for head in &layer.heads {
            let q = tape.matmul(normed, head.wq)?;
            let k = tape.matmul(normed, head.wk)?;
            let v = tape.matmul(normed, head.wv)?;
            let kt = tape.transpose(k)?;
            let scores = tape.matmul(q, kt)?;
            let scores = tape.scale(scores, scale);
            let attn = tape.softmax_rows(scores);
            // Σ_j α_ij·v_j contracts over the token set; every other matmul
            // here contracts over a feature axis whose order is fixed, so
            // this is the one place exact rounding buys bitwise equivariance.
            head_outs.push(tape.matmul_exact(attn, v)?);
        }
        let merged = tape.concat_cols(&head_outs)?;
        let proj = tape.matmul(merged, layer.wo)?;
        let proj = tape.add_row(proj, layer.bo)?;
        x = tape.add(x, proj)?;

        let normed = tape.layer_norm(x, layer.ln2_gain, layer.ln2_bias, LN_EPS)?;
        let ff = tape.matmul(normed, layer.ff1)?;
        let ff = tape.add_row(ff, layer.ff1_b)?;
        let ff = tape.tanh(ff);
        let ff = tape.matmul(ff, layer.ff2)?;
        let ff = tape.add_row(ff, layer.ff2_b)?;
        x = tape.add(x, ff)?;
    }

    let pooled = tape.col_means(x);
    let pooled = tape.reshape(pooled, &[1, cfg.d_h])?;
    let context = tape.matmul(pooled, vars.w_pool)?;
    let context = tape.add_row(context, vars.b_pool)?;

    let ad_idx: Vec<usize> = (1..t).collect();
    let ad_tokens = tape.gather_rows(x, &ad_idx)?;
    let user_token = tape.gather_rows(x, &[0])?;
    Ok(EncodedContext {
        ad_tokens,
        user_token,
        context,
    })
}

/// Full encoder pass: instance → (h_1..h_N, h_y, c).
pub fn encode(
    tape: &mut Tape,
    vars: &EncoderVars,
    instance: &AuctionInstance,
) -> Result<EncodedContext, EdgeNetError> {
    let tokens = embed(tape, vars, instance)?;
    encode_tokens(tape, vars, tokens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::auction::{AdCandidate, UserContext};
    use crate::numgrad::gradcheck::{check_gradients, DEFAULT_REL_TOL, DEFAULT_STEP};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_config() -> EncoderConfig {
        EncoderConfig {
            d_x: 3,
            d_y: 2,
            d_e: 4,
            d_h: 4,
            d_c: 3,
            n_layers: 1,
            n_heads: 2,
            d_ff: 5,
        }
    }

    fn random_instance(cfg: &EncoderConfig, n: usize, rng: &mut ChaCha8Rng) -> AuctionInstance {
        let ads = (0..n)
            .map(|_| AdCandidate {
                bid: rng.gen_range(0.2..3.0),
                pctr: rng.gen_range(0.05..0.9),
                pcvr: rng.gen_range(0.01..0.5),
                cpc_value: rng.gen_range(0.5..3.0),
                features: (0..cfg.d_x).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            })
            .collect();
        let user = UserContext {
            features: (0..cfg.d_y).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        };
        AuctionInstance::new(user, ads, vec![1.0]).unwrap()
    }

    fn run_encoder(
        params: &EncoderParams,
        inst: &AuctionInstance,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut tape = Tape::new();
        let vars = EncoderVars::bind(&mut tape, params);
        let ctx = encode(&mut tape, &vars, inst).unwrap();
        (
            tape.value(ctx.ad_tokens).data().to_vec(),
            tape.value(ctx.user_token).data().to_vec(),
            tape.value(ctx.context).data().to_vec(),
        )
    }

    #[test]
    fn identical_features_give_identical_tokens() {
        let cfg = small_config();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = EncoderParams::init(cfg, &mut rng).unwrap();
        let mut inst = random_instance(&cfg, 3, &mut rng);
        inst.candidates[2].features = inst.candidates[0].features.clone();
        inst.candidates[2].bid = 99.0; // bids must not matter
        let (h, _, _) = run_encoder(&params, &inst);
        let d_h = cfg.d_h;
        assert_eq!(&h[0..d_h], &h[2 * d_h..3 * d_h]);
    }

    #[test]
    fn bid_changes_leave_all_outputs_bitwise_unchanged() {
        let cfg = small_config();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = EncoderParams::init(cfg, &mut rng).unwrap();
        let inst = random_instance(&cfg, 4, &mut rng);
        let base = run_encoder(&params, &inst);
        for i in 0..4 {
            let bumped = inst.with_bid(i, inst.candidates[i].bid * 7.3);
            let out = run_encoder(&params, &bumped);
            assert_eq!(base.0, out.0);
            assert_eq!(base.1, out.1);
            assert_eq!(base.2, out.2);
        }
    }

    #[test]
    fn permuting_ads_permutes_h_and_preserves_c() {
        let cfg = small_config();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = EncoderParams::init(cfg, &mut rng).unwrap();
        for _ in 0..20 {
            let inst = random_instance(&cfg, 5, &mut rng);
            let mut perm: Vec<usize> = (0..5).collect();
            for i in (1..5).rev() {
                perm.swap(i, rng.gen_range(0..=i));
            }
            let mut shuffled = inst.clone();
            shuffled.candidates = perm.iter().map(|&i| inst.candidates[i].clone()).collect();
            let (h, hy, c) = run_encoder(&params, &inst);
            let (hp, hyp, cp) = run_encoder(&params, &shuffled);
            let d_h = cfg.d_h;
            // Bitwise, not approximate: exactly rounded reductions make
            // attention and pooling independent of token order.
            for (new_pos, &orig) in perm.iter().enumerate() {
                for d in 0..d_h {
                    let a = h[orig * d_h + d];
                    let b = hp[new_pos * d_h + d];
                    assert_eq!(a.to_bits(), b.to_bits(), "h mismatch: {a} vs {b}");
                }
            }
            for (a, b) in hy.iter().zip(&hyp) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
            for (a, b) in c.iter().zip(&cp) {
                assert_eq!(a.to_bits(), b.to_bits(), "c mismatch: {a} vs {b}");
            }
        }
    }

    #[test]
    fn single_ad_instance_encodes_finitely() {
        let cfg = small_config();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params = EncoderParams::init(cfg, &mut rng).unwrap();
        let inst = random_instance(&cfg, 1, &mut rng);
        let (h, hy, c) = run_encoder(&params, &inst);
        assert_eq!(h.len(), cfg.d_h);
        assert!(h.iter().chain(&hy).chain(&c).all(|x| x.is_finite()));
    }

    #[test]
    fn zero_features_through_zero_affine_embed_to_zero() {
        let cfg = small_config();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut params = EncoderParams::init(cfg, &mut rng).unwrap();
        params.w_ad = Tensor::zeros(&[cfg.d_x, cfg.d_e]).with_grad();
        params.b_ad = Tensor::zeros(&[cfg.d_e]).with_grad();
        let mut inst = random_instance(&cfg, 2, &mut rng);
        inst.candidates[0].features = vec![0.0; cfg.d_x];
        let mut tape = Tape::new();
        let vars = EncoderVars::bind(&mut tape, &params);
        let tokens = embed(&mut tape, &vars, &inst).unwrap();
        let row = &tape.value(tokens).data()[cfg.d_e..2 * cfg.d_e];
        assert!(row.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn random_outputs_are_finite() {
        let cfg = small_config();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for trial in 0..10 {
            let params = EncoderParams::init(cfg, &mut rng).unwrap();
            let inst = random_instance(&cfg, 1 + trial % 6, &mut rng);
            let (h, hy, c) = run_encoder(&params, &inst);
            assert!(h.iter().chain(&hy).chain(&c).all(|x| x.is_finite()));
        }
    }

    #[test]
    fn config_validation_rejects_indivisible_heads() {
        let cfg = EncoderConfig {
            d_h: 6,
            n_heads: 4,
            ..small_config()
        };
        assert!(cfg.validate().is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(EncoderParams::init(cfg, &mut rng).is_err());
    }

    #[test]
    fn encoder_gradients_match_finite_differences() {
        let cfg = small_config();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let params = EncoderParams::init(cfg, &mut rng).unwrap();
        let inst = random_instance(&cfg, 3, &mut rng);

        let rebuild = |tensors: &[Tensor]| -> EncoderParams {
            let mut p = params.clone();
            for ((_, dst), src) in p.tensors_mut().into_iter().zip(tensors) {
                *dst = src.clone();
            }
            p
        };
        let loss_of = |p: &EncoderParams| -> f64 {
            let mut tape = Tape::new();
            let vars = EncoderVars::bind(&mut tape, p);
            let ctx = encode(&mut tape, &vars, &inst).unwrap();
            let a = tape.sum_all(ctx.ad_tokens);
            let sq = tape.mul(ctx.context, ctx.context).unwrap();
            let b = tape.sum_all(sq);
            let loss = tape.add(a, b).unwrap();
            tape.scalar_value(loss)
        };

        let mut tape = Tape::new();
        let vars = EncoderVars::bind(&mut tape, &params);
        let ctx = encode(&mut tape, &vars, &inst).unwrap();
        let a = tape.sum_all(ctx.ad_tokens);
        let sq = tape.mul(ctx.context, ctx.context).unwrap();
        let b = tape.sum_all(sq);
        let loss = tape.add(a, b).unwrap();
        let grads = tape.backward(loss).unwrap();

        let values: Vec<Tensor> = params.tensors().iter().map(|(_, t)| (*t).clone()).collect();
        let analytic: Vec<Option<&Tensor>> =
            vars.all().iter().map(|v| grads.get(*v)).collect();
        let report = check_gradients(&values, &analytic, DEFAULT_STEP, |ts| {
            Ok(loss_of(&rebuild(ts)))
        })
        .unwrap();
        assert!(
            report.max_rel_err <= DEFAULT_REL_TOL,
            "worst {:?} rel {:.3e}",
            report.worst,
            report.max_rel_err
        );
    }
}
