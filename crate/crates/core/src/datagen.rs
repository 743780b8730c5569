//! Synthetic auction-log generation and the on-disk log format.
//!
//! Logs are plain text, one token row per record: a header carrying the
//! schema version and dimensions, then per auction a user row and N ad
//! rows. Floats are written with 17 significant digits so a written log
//! reads back bit-for-bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::distributions::Uniform;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, LogNormal, StandardNormal};

use crate::auction::{AdCandidate, AuctionInstance, UserContext};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum DatagenError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("schema version {found} not supported (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },
    #[error("inhomogeneous log: {0}")]
    Inhomogeneous(String),
}

/// Position discounts for K slots: the conventional 1 / 0.7 / 0.5 ladder,
/// extended geometrically past the third slot.
pub fn default_slot_discounts(k: usize) -> Vec<f64> {
    let head = [1.0, 0.7, 0.5];
    (0..k)
        .map(|j| {
            if j < head.len() {
                head[j]
            } else {
                head[2] * 0.7f64.powi(j as i32 - 2)
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub num_candidates: usize,
    pub num_slots: usize,
    pub d_x: usize,
    pub d_y: usize,
    /// Log-normal bid parameters (μ, σ of the underlying normal).
    pub bid_mu: f64,
    pub bid_sigma: f64,
    /// Beta(α, β) for pCTR and pCVR.
    pub pctr_beta: (f64, f64),
    pub pcvr_beta: (f64, f64),
    /// Uniform CPC range.
    pub cpc_range: (f64, f64),
    /// Linear correlation between the first two feature coordinates and
    /// (pCTR, pCVR); 0 means features carry no quality signal.
    pub correlation: f64,
    pub slot_discounts: Vec<f64>,
    pub instances: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_candidates: 10,
            num_slots: 3,
            d_x: 8,
            d_y: 8,
            bid_mu: 0.0,
            bid_sigma: 0.5,
            pctr_beta: (2.0, 8.0),
            pcvr_beta: (2.0, 18.0),
            cpc_range: (0.5, 5.0),
            correlation: 0.8,
            slot_discounts: default_slot_discounts(3),
            instances: 20_000,
            seed: 1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), DatagenError> {
        if self.num_candidates == 0 || self.num_slots == 0 {
            return Err(DatagenError::InvalidConfig(
                "need at least one ad and one slot".into(),
            ));
        }
        if self.num_slots > self.num_candidates {
            return Err(DatagenError::InvalidConfig(format!(
                "{} slots but only {} candidates",
                self.num_slots, self.num_candidates
            )));
        }
        if self.slot_discounts.len() != self.num_slots {
            return Err(DatagenError::InvalidConfig(format!(
                "{} slot discounts for {} slots",
                self.slot_discounts.len(),
                self.num_slots
            )));
        }
        if self.bid_sigma < 0.0 {
            return Err(DatagenError::InvalidConfig("bid sigma < 0".into()));
        }
        for (name, (a, b)) in [("pctr", self.pctr_beta), ("pcvr", self.pcvr_beta)] {
            if a <= 0.0 || b <= 0.0 {
                return Err(DatagenError::InvalidConfig(format!(
                    "{name} beta parameters must be positive, got ({a}, {b})"
                )));
            }
        }
        if !(self.cpc_range.0 >= 0.0 && self.cpc_range.1 >= self.cpc_range.0) {
            return Err(DatagenError::InvalidConfig(format!(
                "bad cpc range {:?}",
                self.cpc_range
            )));
        }
        if !(-1.0..=1.0).contains(&self.correlation) {
            return Err(DatagenError::InvalidConfig(format!(
                "correlation {} outside [-1, 1]",
                self.correlation
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AuctionLog {
    pub version: u32,
    pub instances: Vec<AuctionInstance>,
}

impl AuctionLog {
    pub fn new(instances: Vec<AuctionInstance>) -> Self {
        AuctionLog {
            version: SCHEMA_VERSION,
            instances,
        }
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// All instances must agree on N, K, d_x, d_y and slot discounts.
    pub fn validate(&self) -> Result<(), DatagenError> {
        let Some(first) = self.instances.first() else {
            return Ok(());
        };
        let n = first.num_candidates();
        let k = first.slot_count();
        let d_x = first.candidates[0].features.len();
        let d_y = first.user.features.len();
        for (idx, inst) in self.instances.iter().enumerate() {
            inst.validate().map_err(|e| {
                DatagenError::Inhomogeneous(format!("instance {idx} invalid: {e}"))
            })?;
            if inst.num_candidates() != n
                || inst.slot_count() != k
                || inst.candidates[0].features.len() != d_x
                || inst.user.features.len() != d_y
            {
                return Err(DatagenError::Inhomogeneous(format!(
                    "instance {idx} shape differs from instance 0"
                )));
            }
            if inst.slot_discounts != first.slot_discounts {
                return Err(DatagenError::Inhomogeneous(format!(
                    "instance {idx} slot discounts differ from instance 0"
                )));
            }
        }
        Ok(())
    }
}

/// Standardize a Beta(α, β) draw to zero mean, unit variance.
fn beta_z(x: f64, a: f64, b: f64) -> f64 {
    let mean = a / (a + b);
    let var = a * b / ((a + b) * (a + b) * (a + b + 1.0));
    (x - mean) / var.sqrt()
}

pub fn generate(config: &SynthConfig) -> Result<AuctionLog, DatagenError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let pctr_dist = Beta::new(config.pctr_beta.0, config.pctr_beta.1)
        .map_err(|e| DatagenError::InvalidConfig(format!("pctr beta: {e}")))?;
    let pcvr_dist = Beta::new(config.pcvr_beta.0, config.pcvr_beta.1)
        .map_err(|e| DatagenError::InvalidConfig(format!("pcvr beta: {e}")))?;
    let bid_dist = LogNormal::new(config.bid_mu, config.bid_sigma)
        .map_err(|e| DatagenError::InvalidConfig(format!("bid log-normal: {e}")))?;
    let cpc_dist = Uniform::new_inclusive(config.cpc_range.0, config.cpc_range.1);
    let c = config.correlation;
    let noise = (1.0 - c * c).sqrt();

    let mut instances = Vec::with_capacity(config.instances);
    for _ in 0..config.instances {
        let user = UserContext {
            features: (0..config.d_y)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect(),
        };
        let mut candidates = Vec::with_capacity(config.num_candidates);
        for _ in 0..config.num_candidates {
            let pctr = pctr_dist.sample(&mut rng);
            let pcvr = pcvr_dist.sample(&mut rng);
            let bid = bid_dist.sample(&mut rng);
            let cpc_value = cpc_dist.sample(&mut rng);
            let mut features = Vec::with_capacity(config.d_x);
            for d in 0..config.d_x {
                let eps: f64 = rng.sample(StandardNormal);
                let x = match d {
                    0 => c * beta_z(pctr, config.pctr_beta.0, config.pctr_beta.1) + noise * eps,
                    1 => c * beta_z(pcvr, config.pcvr_beta.0, config.pcvr_beta.1) + noise * eps,
                    _ => eps,
                };
                features.push(x);
            }
            candidates.push(AdCandidate {
                bid,
                pctr,
                pcvr,
                cpc_value,
                features,
            });
        }
        let inst =
            AuctionInstance::new(user, candidates, config.slot_discounts.clone()).map_err(|e| {
                DatagenError::InvalidConfig(format!("generated instance invalid: {e}"))
            })?;
        instances.push(inst);
    }
    Ok(AuctionLog::new(instances))
}

/// 17 significant digits: enough for an exact f64 round trip.
fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn log_to_string(log: &AuctionLog) -> Result<String, DatagenError> {
    log.validate()?;
    let (n, k, d_x, d_y, gamma) = match log.instances.first() {
        Some(inst) => (
            inst.num_candidates(),
            inst.slot_count(),
            inst.candidates[0].features.len(),
            inst.user.features.len(),
            inst.slot_discounts.clone(),
        ),
        None => (0, 0, 0, 0, Vec::new()),
    };
    let gamma_str: Vec<String> = gamma.iter().map(|g| fmt_f64(*g)).collect();
    let mut out = String::new();
    writeln!(
        out,
        "auctionlog v{} n={n} k={k} dx={d_x} dy={d_y} gamma={}",
        log.version,
        gamma_str.join(",")
    )
    .expect("string write");
    for inst in &log.instances {
        out.push_str("I\n");
        out.push('U');
        for f in &inst.user.features {
            out.push(' ');
            out.push_str(&fmt_f64(*f));
        }
        out.push('\n');
        for ad in &inst.candidates {
            write!(
                out,
                "A {} {} {} {}",
                fmt_f64(ad.bid),
                fmt_f64(ad.pctr),
                fmt_f64(ad.pcvr),
                fmt_f64(ad.cpc_value)
            )
            .expect("string write");
            for f in &ad.features {
                out.push(' ');
                out.push_str(&fmt_f64(*f));
            }
            out.push('\n');
        }
    }
    Ok(out)
}

pub fn write_log(log: &AuctionLog, path: &Path) -> Result<(), DatagenError> {
    let text = log_to_string(log)?;
    fs::write(path, text).map_err(|source| DatagenError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn parse_f64(tok: &str, line: usize) -> Result<f64, DatagenError> {
    tok.parse::<f64>().map_err(|_| DatagenError::Parse {
        line,
        msg: format!("bad float {tok:?}"),
    })
}

fn parse_usize(tok: &str, key: &str, line: usize) -> Result<usize, DatagenError> {
    tok.parse::<usize>().map_err(|_| DatagenError::Parse {
        line,
        msg: format!("bad {key} {tok:?}"),
    })
}

pub fn log_from_string(text: &str) -> Result<AuctionLog, DatagenError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(DatagenError::Parse {
        line: 1,
        msg: "empty file".into(),
    })?;
    let tokens: Vec<&str> = header.split_whitespace().collect();
    if tokens.len() != 7 || tokens[0] != "auctionlog" {
        return Err(DatagenError::Parse {
            line: 1,
            msg: "malformed header".into(),
        });
    }
    let version: u32 = tokens[1]
        .strip_prefix('v')
        .and_then(|v| v.parse().ok())
        .ok_or(DatagenError::Parse {
            line: 1,
            msg: format!("bad version token {:?}", tokens[1]),
        })?;
    if version != SCHEMA_VERSION {
        return Err(DatagenError::SchemaVersion {
            found: version,
            expected: SCHEMA_VERSION,
        });
    }
    let mut dims = [0usize; 4];
    for (slot, key) in ["n", "k", "dx", "dy"].iter().enumerate() {
        let tok = tokens[2 + slot];
        let val = tok
            .strip_prefix(&format!("{key}="))
            .ok_or(DatagenError::Parse {
                line: 1,
                msg: format!("expected {key}=…, got {tok:?}"),
            })?;
        dims[slot] = parse_usize(val, key, 1)?;
    }
    let [n, k, d_x, d_y] = dims;
    let gamma_tok = tokens[6].strip_prefix("gamma=").ok_or(DatagenError::Parse {
        line: 1,
        msg: format!("expected gamma=…, got {:?}", tokens[6]),
    })?;
    let gamma: Vec<f64> = if gamma_tok.is_empty() {
        Vec::new()
    } else {
        gamma_tok
            .split(',')
            .map(|t| parse_f64(t, 1))
            .collect::<Result<_, _>>()?
    };
    if gamma.len() != k {
        return Err(DatagenError::Parse {
            line: 1,
            msg: format!("{} gamma values for k={k}", gamma.len()),
        });
    }

    let mut instances = Vec::new();
    while let Some((idx, line)) = lines.next() {
        let lineno = idx + 1;
        if line != "I" {
            return Err(DatagenError::Parse {
                line: lineno,
                msg: format!("expected instance marker 'I', got {line:?}"),
            });
        }
        let (uidx, uline) = lines.next().ok_or(DatagenError::Parse {
            line: lineno + 1,
            msg: "truncated: missing user row".into(),
        })?;
        let utoks: Vec<&str> = uline.split_whitespace().collect();
        if utoks.first() != Some(&"U") || utoks.len() != 1 + d_y {
            return Err(DatagenError::Parse {
                line: uidx + 1,
                msg: format!("expected user row with {d_y} features"),
            });
        }
        let user = UserContext {
            features: utoks[1..]
                .iter()
                .map(|t| parse_f64(t, uidx + 1))
                .collect::<Result<_, _>>()?,
        };
        let mut candidates = Vec::with_capacity(n);
        for _ in 0..n {
            let (aidx, aline) = lines.next().ok_or(DatagenError::Parse {
                line: uidx + 2 + candidates.len(),
                msg: format!("truncated: expected {n} ad rows"),
            })?;
            let atoks: Vec<&str> = aline.split_whitespace().collect();
            if atoks.first() != Some(&"A") || atoks.len() != 5 + d_x {
                return Err(DatagenError::Parse {
                    line: aidx + 1,
                    msg: format!("expected ad row with 4 values and {d_x} features"),
                });
            }
            candidates.push(AdCandidate {
                bid: parse_f64(atoks[1], aidx + 1)?,
                pctr: parse_f64(atoks[2], aidx + 1)?,
                pcvr: parse_f64(atoks[3], aidx + 1)?,
                cpc_value: parse_f64(atoks[4], aidx + 1)?,
                features: atoks[5..]
                    .iter()
                    .map(|t| parse_f64(t, aidx + 1))
                    .collect::<Result<_, _>>()?,
            });
        }
        let inst = AuctionInstance::new(user, candidates, gamma.clone()).map_err(|e| {
            DatagenError::Parse {
                line: lineno,
                msg: format!("invalid instance: {e}"),
            }
        })?;
        instances.push(inst);
    }
    let log = AuctionLog {
        version,
        instances,
    };
    log.validate()?;
    Ok(log)
}

pub fn read_log(path: &Path) -> Result<AuctionLog, DatagenError> {
    let text = fs::read_to_string(path).map_err(|source| DatagenError::Io {
        path: path.display().to_string(),
        source,
    })?;
    log_from_string(&text)
}
