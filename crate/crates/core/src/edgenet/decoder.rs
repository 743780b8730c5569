//! GRU pointer decoder: fills slots sequentially, pointing at one ad per
//! step, then emits allocation probabilities and payment fractions.
//!
//! Bids touch the network in exactly one place — the additive logit term
//! e^{w3}·b_i — so raising a bid strictly raises that ad's own logits and
//! nothing else. Combined with the frozen selection history this makes
//! the assigned slot monotone in the ad's own bid (argmax mode).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::auction::{AuctionInstance, SelectionMode};
use crate::numgrad::{Tape, Tensor, Var};

use super::encoder::EncodedContext;
use super::EdgeNetError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    /// Ad-token width; must equal the encoder's d_h.
    pub d_h: usize,
    /// GRU state width; must equal the encoder's d_c.
    pub d_c: usize,
    /// Pointer-attention width.
    pub d_a: usize,
    /// Output-head hidden width.
    pub d_o: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            d_h: 32,
            d_c: 32,
            d_a: 32,
            d_o: 32,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<(), EdgeNetError> {
        if [self.d_h, self.d_c, self.d_a, self.d_o].iter().any(|&d| d == 0) {
            return Err(EdgeNetError::Config("all dimensions must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct DecoderParams {
    pub config: DecoderConfig,
    /// First GRU input, before any ad has been chosen: (1, d_h).
    pub start: Tensor,
    pub wz: Tensor,
    pub uz: Tensor,
    pub bz: Tensor,
    pub wr: Tensor,
    pub ur: Tensor,
    pub br: Tensor,
    pub wh: Tensor,
    pub uh: Tensor,
    pub bh: Tensor,
    pub w1: Tensor,
    pub w2: Tensor,
    pub v: Tensor,
    /// Log of the bid coefficient; the logit bid term is e^{w3}·b_i.
    pub w3: Tensor,
    pub hw1: Tensor,
    pub hb1: Tensor,
    pub hwr: Tensor,
    pub hbr: Tensor,
    pub hwp: Tensor,
    pub hbp: Tensor,
}

fn mat<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    Tensor::randn(&[rows, cols], 1.0 / (rows as f64).sqrt(), rng).with_grad()
}

fn zeros_vec(n: usize) -> Tensor {
    Tensor::zeros(&[n]).with_grad()
}

impl DecoderParams {
    pub fn init<R: Rng>(config: DecoderConfig, rng: &mut R) -> Result<Self, EdgeNetError> {
        config.validate()?;
        let (d_h, d_c, d_a, d_o) = (config.d_h, config.d_c, config.d_a, config.d_o);
        Ok(DecoderParams {
            config,
            start: Tensor::randn(&[1, d_h], 0.1, rng).with_grad(),
            wz: mat(d_h, d_c, rng),
            uz: mat(d_c, d_c, rng),
            bz: zeros_vec(d_c),
            wr: mat(d_h, d_c, rng),
            ur: mat(d_c, d_c, rng),
            br: zeros_vec(d_c),
            wh: mat(d_h, d_c, rng),
            uh: mat(d_c, d_c, rng),
            bh: zeros_vec(d_c),
            w1: mat(d_h, d_a, rng),
            w2: mat(d_c, d_a, rng),
            v: mat(d_a, 1, rng),
            w3: zeros_vec(1),
            hw1: mat(d_a + 1, d_o, rng),
            hb1: zeros_vec(d_o),
            hwr: mat(d_o, 1, rng),
            hbr: zeros_vec(1),
            hwp: mat(d_o, 1, rng),
            hbp: zeros_vec(1),
        })
    }

    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("dec.start".into(), &self.start),
            ("dec.gru.wz".into(), &self.wz),
            ("dec.gru.uz".into(), &self.uz),
            ("dec.gru.bz".into(), &self.bz),
            ("dec.gru.wr".into(), &self.wr),
            ("dec.gru.ur".into(), &self.ur),
            ("dec.gru.br".into(), &self.br),
            ("dec.gru.wh".into(), &self.wh),
            ("dec.gru.uh".into(), &self.uh),
            ("dec.gru.bh".into(), &self.bh),
            ("dec.attn.w1".into(), &self.w1),
            ("dec.attn.w2".into(), &self.w2),
            ("dec.attn.v".into(), &self.v),
            ("dec.attn.w3".into(), &self.w3),
            ("dec.head.w1".into(), &self.hw1),
            ("dec.head.b1".into(), &self.hb1),
            ("dec.head.wr".into(), &self.hwr),
            ("dec.head.br".into(), &self.hbr),
            ("dec.head.wp".into(), &self.hwp),
            ("dec.head.bp".into(), &self.hbp),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            ("dec.start".into(), &mut self.start),
            ("dec.gru.wz".into(), &mut self.wz),
            ("dec.gru.uz".into(), &mut self.uz),
            ("dec.gru.bz".into(), &mut self.bz),
            ("dec.gru.wr".into(), &mut self.wr),
            ("dec.gru.ur".into(), &mut self.ur),
            ("dec.gru.br".into(), &mut self.br),
            ("dec.gru.wh".into(), &mut self.wh),
            ("dec.gru.uh".into(), &mut self.uh),
            ("dec.gru.bh".into(), &mut self.bh),
            ("dec.attn.w1".into(), &mut self.w1),
            ("dec.attn.w2".into(), &mut self.w2),
            ("dec.attn.v".into(), &mut self.v),
            ("dec.attn.w3".into(), &mut self.w3),
            ("dec.head.w1".into(), &mut self.hw1),
            ("dec.head.b1".into(), &mut self.hb1),
            ("dec.head.wr".into(), &mut self.hwr),
            ("dec.head.br".into(), &mut self.hbr),
            ("dec.head.wp".into(), &mut self.hwp),
            ("dec.head.bp".into(), &mut self.hbp),
        ]
    }

    /// Bid coefficient e^{w3} as a plain number.
    pub fn bid_coefficient(&self) -> f64 {
        self.w3.data()[0].exp()
    }
}

/// Decoder parameters bound to a tape, order matching `tensors()`.
pub struct DecoderVars {
    pub config: DecoderConfig,
    start: Var,
    wz: Var,
    uz: Var,
    bz: Var,
    wr: Var,
    ur: Var,
    br: Var,
    wh: Var,
    uh: Var,
    bh: Var,
    w1: Var,
    w2: Var,
    v: Var,
    w3: Var,
    hw1: Var,
    hb1: Var,
    hwr: Var,
    hbr: Var,
    hwp: Var,
    hbp: Var,
}

impl DecoderVars {
    pub fn bind(tape: &mut Tape, p: &DecoderParams) -> Self {
        DecoderVars {
            config: p.config,
            start: tape.leaf(&p.start),
            wz: tape.leaf(&p.wz),
            uz: tape.leaf(&p.uz),
            bz: tape.leaf(&p.bz),
            wr: tape.leaf(&p.wr),
            ur: tape.leaf(&p.ur),
            br: tape.leaf(&p.br),
            wh: tape.leaf(&p.wh),
            uh: tape.leaf(&p.uh),
            bh: tape.leaf(&p.bh),
            w1: tape.leaf(&p.w1),
            w2: tape.leaf(&p.w2),
            v: tape.leaf(&p.v),
            w3: tape.leaf(&p.w3),
            hw1: tape.leaf(&p.hw1),
            hb1: tape.leaf(&p.hb1),
            hwr: tape.leaf(&p.hwr),
            hbr: tape.leaf(&p.hbr),
            hwp: tape.leaf(&p.hwp),
            hbp: tape.leaf(&p.hbp),
        }
    }

    pub fn all(&self) -> Vec<Var> {
        vec![
            self.start, self.wz, self.uz, self.bz, self.wr, self.ur, self.br, self.wh,
            self.uh, self.bh, self.w1, self.w2, self.v, self.w3, self.hw1, self.hb1,
            self.hwr, self.hbr, self.hwp, self.hbp,
        ]
    }
}

/// Everything one decoding pass produced, still attached to the tape.
pub struct DecodeTrace {
    pub n: usize,
    pub k: usize,
    /// (N, K) logit matrix; −∞ exactly at entries masked by earlier picks.
    pub logits: Tensor,
    /// Winner of each slot, in slot order; always K distinct indices.
    pub selected: Vec<usize>,
    /// GRU state after each step: K × (1, d_c).
    pub states: Vec<Var>,
    /// Pointer features tanh(H·W1 + c_j·W2): K × (N, d_a).
    pub feats: Vec<Var>,
    /// Unmasked logits (finite): K × (N, 1).
    pub mu_raw: Vec<Var>,
    /// Additive masks, 0 or −∞: K × (N, 1) constants.
    pub mask_vars: Vec<Var>,
    /// masked[j][i] = ad i already taken before slot j.
    pub masked: Vec<Vec<bool>>,
}

fn gru_step(
    tape: &mut Tape,
    vars: &DecoderVars,
    x: Var,
    s_prev: Var,
) -> Result<Var, EdgeNetError> {
    let zi = tape.matmul(x, vars.wz)?;
    let zs = tape.matmul(s_prev, vars.uz)?;
    let z = tape.add(zi, zs)?;
    let z = tape.add_row(z, vars.bz)?;
    let z = tape.sigmoid(z);

    let ri = tape.matmul(x, vars.wr)?;
    let rs = tape.matmul(s_prev, vars.ur)?;
    let r = tape.add(ri, rs)?;
    let r = tape.add_row(r, vars.br)?;
    let r = tape.sigmoid(r);

    let gated = tape.mul(r, s_prev)?;
    let hi = tape.matmul(x, vars.wh)?;
    let hs = tape.matmul(gated, vars.uh)?;
    let cand = tape.add(hi, hs)?;
    let cand = tape.add_row(cand, vars.bh)?;
    let cand = tape.tanh(cand);

    // s' = (1−z)⊙s + z⊙h̃, written without a ones constant.
    let keep = tape.mul(z, s_prev)?;
    let take = tape.mul(z, cand)?;
    let s = tape.sub(s_prev, keep)?;
    Ok(tape.add(s, take)?)
}

fn pick(mu: &[f64], masked: &[bool], mode: SelectionMode, rng: &mut impl Rng) -> usize {
    match mode {
        SelectionMode::Argmax => {
            let mut best: Option<usize> = None;
            for (i, &m) in mu.iter().enumerate() {
                if masked[i] {
                    continue;
                }
                if best.map_or(true, |b| m > mu[b]) {
                    best = Some(i);
                }
            }
            best.expect("at least one unmasked ad")
        }
        SelectionMode::Sample => {
            let max = mu
                .iter()
                .zip(masked)
                .filter(|(_, &m)| !m)
                .map(|(&x, _)| x)
                .fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = mu
                .iter()
                .zip(masked)
                .map(|(&x, &m)| if m { 0.0 } else { (x - max).exp() })
                .collect();
            let total: f64 = weights.iter().sum();
            let u = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut last = None;
            for (i, &w) in weights.iter().enumerate() {
                if masked[i] {
                    continue;
                }
                acc += w;
                last = Some(i);
                if u < acc {
                    return i;
                }
            }
            last.expect("at least one unmasked ad")
        }
    }
}

/// Run the pointer decoder for every slot of `instance`.
///
/// The context must come from the same instance's feature side; only the
/// bids are read here. Selection is greedy or sampled per `mode`; sampling
/// draws from the softmax over unmasked logits.
pub fn decode<R: Rng>(
    tape: &mut Tape,
    vars: &DecoderVars,
    ctx: &EncodedContext,
    instance: &AuctionInstance,
    mode: SelectionMode,
    rng: &mut R,
) -> Result<DecodeTrace, EdgeNetError> {
    let n = instance.num_candidates();
    let k = instance.slot_count();
    if k > n {
        return Err(EdgeNetError::Config(format!(
            "{k} slots cannot be decoded from {n} ads"
        )));
    }
    if tape.value(ctx.ad_tokens).rows() != n {
        return Err(EdgeNetError::Config(format!(
            "context holds {} ad tokens, instance has {n}",
            tape.value(ctx.ad_tokens).rows()
        )));
    }

    let bids: Vec<f64> = instance.candidates.iter().map(|a| a.bid).collect();
    let bid_col = tape.constant(Tensor::from_vec(&[n, 1], bids)?);
    let w3e = tape.exp(vars.w3);
    let bid_term = tape.scale_by(bid_col, w3e)?;
    let hproj = tape.matmul(ctx.ad_tokens, vars.w1)?;

    let mut trace = DecodeTrace {
        n,
        k,
        logits: Tensor::zeros(&[n, k]),
        selected: Vec::with_capacity(k),
        states: Vec::with_capacity(k),
        feats: Vec::with_capacity(k),
        mu_raw: Vec::with_capacity(k),
        mask_vars: Vec::with_capacity(k),
        masked: Vec::with_capacity(k),
    };

    let mut taken = vec![false; n];
    let mut state = ctx.context;
    let mut input = vars.start;
    for j in 0..k {
        state = gru_step(tape, vars, input, state)?;

        let cproj = tape.matmul(state, vars.w2)?;
        let cproj = tape.reshape(cproj, &[vars.config.d_a])?;
        let feat = tape.add_row(hproj, cproj)?;
        let feat = tape.tanh(feat);
        let att = tape.matmul(feat, vars.v)?;
        let mu = tape.add(att, bid_term)?;

        let mask_data: Vec<f64> = taken
            .iter()
            .map(|&t| if t { f64::NEG_INFINITY } else { 0.0 })
            .collect();
        let mask = tape.constant(Tensor::from_vec(&[n, 1], mask_data)?);
        let mu_masked = tape.add(mu, mask)?;

        let col = tape.value(mu_masked).data().to_vec();
        let sel = pick(&col, &taken, mode, rng);
        for (i, &x) in col.iter().enumerate() {
            trace.logits.data_mut()[i * k + j] = x;
        }

        trace.masked.push(taken.clone());
        trace.states.push(state);
        trace.feats.push(feat);
        trace.mu_raw.push(mu);
        trace.mask_vars.push(mask);
        trace.selected.push(sel);
        taken[sel] = true;
        input = tape.gather_rows(ctx.ad_tokens, &[sel])?;
    }
    Ok(trace)
}

/// Differentiable outputs read off a decode trace.
pub struct SoftOutputs {
    /// (N, K): column-stochastic allocation probabilities; exactly 0 at
    /// masked entries.
    pub alloc: Var,
    /// Length-N payment fractions in (0, 1).
    pub pay_frac: Var,
}

/// Shared head MLP over [pointer features, raw logit], one scalar pair per
/// (ad, slot): an allocation score (column-softmaxed under the decode
/// masks) and a payment score (row-averaged through a sigmoid).
pub fn output_heads(
    tape: &mut Tape,
    vars: &DecoderVars,
    trace: &DecodeTrace,
) -> Result<SoftOutputs, EdgeNetError> {
    let mut fr_cols = Vec::with_capacity(trace.k);
    let mut fp_cols = Vec::with_capacity(trace.k);
    for j in 0..trace.k {
        let inp = tape.concat_cols(&[trace.feats[j], trace.mu_raw[j]])?;
        let hid = tape.matmul(inp, vars.hw1)?;
        let hid = tape.add_row(hid, vars.hb1)?;
        let hid = tape.tanh(hid);
        let fr = tape.matmul(hid, vars.hwr)?;
        let fr = tape.add_row(fr, vars.hbr)?;
        let fp = tape.matmul(hid, vars.hwp)?;
        let fp = tape.add_row(fp, vars.hbp)?;
        fr_cols.push(tape.add(fr, trace.mask_vars[j])?);
        fp_cols.push(fp);
    }
    let fr_all = tape.concat_cols(&fr_cols)?;
    let alloc = tape.softmax_cols(fr_all);
    let fp_all = tape.concat_cols(&fp_cols)?;
    let means = tape.row_means(fp_all);
    let pay_frac = tape.sigmoid(means);
    Ok(SoftOutputs { alloc, pay_frac })
}
