//! Experiment configuration: one TOML tree, every field defaulted, any
//! field overridable by a command-line flag (flags win).

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use auctionlab::baselines::dna::DnaTrainOptions;
use auctionlab::datagen::{default_slot_discounts, SynthConfig};
use auctionlab::edgenet::{DecoderConfig, EncoderConfig};
use auctionlab::regret::PerturbationScheme;
use auctionlab::trainer::{ObjectiveWeights, TrainConfig};

pub const CONFIG_ENV: &str = "AUCTIONLAB_CONFIG";

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub train_log: PathBuf,
    pub test_log: PathBuf,
    pub checkpoints: PathBuf,
    pub reports: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            train_log: "data/train.log".into(),
            test_log: "data/test.log".into(),
            checkpoints: "runs/checkpoints".into(),
            reports: "runs/reports".into(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Synth {
    pub instances: usize,
    pub test_instances: usize,
    pub candidates: usize,
    pub slots: usize,
    pub d_x: usize,
    pub d_y: usize,
    pub bid_mu: f64,
    pub bid_sigma: f64,
    pub pctr_alpha: f64,
    pub pctr_beta: f64,
    pub pcvr_alpha: f64,
    pub pcvr_beta: f64,
    pub cpc_min: f64,
    pub cpc_max: f64,
    pub correlation: f64,
    pub seed: u64,
    pub test_seed: u64,
}

impl Default for Synth {
    fn default() -> Self {
        Synth {
            instances: 20_000,
            test_instances: 4_000,
            candidates: 10,
            slots: 3,
            d_x: 8,
            d_y: 8,
            bid_mu: 0.0,
            bid_sigma: 0.5,
            pctr_alpha: 2.0,
            pctr_beta: 8.0,
            pcvr_alpha: 2.0,
            pcvr_beta: 18.0,
            cpc_min: 0.5,
            cpc_max: 5.0,
            correlation: 0.8,
            seed: 1,
            test_seed: 2,
        }
    }
}

impl Synth {
    pub fn to_synth_config(&self, instances: usize, seed: u64) -> SynthConfig {
        SynthConfig {
            num_candidates: self.candidates,
            num_slots: self.slots,
            d_x: self.d_x,
            d_y: self.d_y,
            bid_mu: self.bid_mu,
            bid_sigma: self.bid_sigma,
            pctr_beta: (self.pctr_alpha, self.pctr_beta),
            pcvr_beta: (self.pcvr_alpha, self.pcvr_beta),
            cpc_range: (self.cpc_min, self.cpc_max),
            correlation: self.correlation,
            slot_discounts: default_slot_discounts(self.slots),
            instances,
            seed,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Model {
    pub d_e: usize,
    pub d_h: usize,
    pub d_c: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub d_a: usize,
    pub d_o: usize,
    pub init_seed: u64,
}

impl Default for Model {
    fn default() -> Self {
        Model {
            d_e: 16,
            d_h: 32,
            d_c: 32,
            n_layers: 1,
            n_heads: 2,
            d_ff: 64,
            d_a: 32,
            d_o: 32,
            init_seed: 7,
        }
    }
}

impl Model {
    pub fn encoder_config(&self, d_x: usize, d_y: usize) -> EncoderConfig {
        EncoderConfig {
            d_x,
            d_y,
            d_e: self.d_e,
            d_h: self.d_h,
            d_c: self.d_c,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            d_ff: self.d_ff,
        }
    }

    pub fn decoder_config(&self) -> DecoderConfig {
        DecoderConfig {
            d_h: self.d_h,
            d_c: self.d_c,
            d_a: self.d_a,
            d_o: self.d_o,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Train {
    pub batch_size: usize,
    pub steps: u64,
    pub learning_rate: f64,
    pub seed: u64,
    pub tau: f64,
    pub misreports_per_ad: usize,
    pub penalty0: f64,
    pub penalty_growth: f64,
    pub penalty_cap: f64,
    pub update_period: u64,
    pub checkpoint_every: u64,
}

impl Default for Train {
    fn default() -> Self {
        let t = TrainConfig::default();
        Train {
            batch_size: t.batch_size,
            steps: t.steps,
            learning_rate: t.learning_rate,
            seed: t.seed,
            tau: t.tau,
            misreports_per_ad: t.misreports_per_ad,
            penalty0: t.penalty0,
            penalty_growth: t.penalty_growth,
            penalty_cap: t.penalty_cap,
            update_period: t.update_period,
            checkpoint_every: t.checkpoint_every,
        }
    }
}

impl Train {
    pub fn to_train_config(&self, scheme: PerturbationScheme, dir: PathBuf) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            steps: self.steps,
            learning_rate: self.learning_rate,
            seed: self.seed,
            scheme,
            tau: self.tau,
            misreports_per_ad: self.misreports_per_ad,
            penalty0: self.penalty0,
            penalty_growth: self.penalty_growth,
            penalty_cap: self.penalty_cap,
            update_period: self.update_period,
            checkpoint_every: self.checkpoint_every,
            checkpoint_dir: Some(dir),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Weights {
    pub revenue: f64,
    pub ctr: f64,
    pub cvr: f64,
}

impl Default for Weights {
    fn default() -> Self {
        let w = ObjectiveWeights::default();
        Weights {
            revenue: w.revenue,
            ctr: w.ctr,
            cvr: w.cvr,
        }
    }
}

impl Weights {
    pub fn to_weights(&self) -> ObjectiveWeights {
        ObjectiveWeights {
            revenue: self.revenue,
            ctr: self.ctr,
            cvr: self.cvr,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GspSection {
    pub sigma: f64,
}

impl Default for GspSection {
    fn default() -> Self {
        GspSection { sigma: 1.0 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UgspSection {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl Default for UgspSection {
    fn default() -> Self {
        UgspSection {
            lambda1: 1.0,
            lambda2: 0.1,
            lambda3: 0.1,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DnaSection {
    pub hidden: usize,
    pub steps: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub tau: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub seed: u64,
}

impl Default for DnaSection {
    fn default() -> Self {
        let d = DnaTrainOptions::default();
        DnaSection {
            hidden: d.hidden,
            steps: d.steps,
            batch: d.batch,
            learning_rate: d.lr,
            tau: d.tau,
            lambda1: d.lambda.0,
            lambda2: d.lambda.1,
            lambda3: d.lambda.2,
            seed: d.seed,
        }
    }
}

impl DnaSection {
    pub fn to_options(&self) -> DnaTrainOptions {
        DnaTrainOptions {
            steps: self.steps,
            batch: self.batch,
            lr: self.learning_rate,
            tau: self.tau,
            hidden: self.hidden,
            lambda: (self.lambda1, self.lambda2, self.lambda3),
            seed: self.seed,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Audit {
    pub delta: f64,
    pub half_width: usize,
    /// Cap on audited instances; 0 audits the whole log.
    pub limit: usize,
    pub mechanisms: Vec<String>,
}

impl Default for Audit {
    fn default() -> Self {
        let s = PerturbationScheme::default();
        Audit {
            delta: s.delta,
            half_width: s.half_width,
            limit: 0,
            mechanisms: vec!["gsp".into(), "ugsp".into(), "dna".into(), "edgenet".into()],
        }
    }
}

impl Audit {
    pub fn scheme(&self) -> Result<PerturbationScheme> {
        PerturbationScheme::new(self.delta, self.half_width)
            .context("invalid misreport grid in [audit]")
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Eval {
    pub seeds: Vec<u64>,
    /// "expected" or "sampled".
    pub mode: String,
    /// Mechanism anchoring the normalized table.
    pub reference: String,
}

impl Default for Eval {
    fn default() -> Self {
        Eval {
            seeds: vec![0, 1, 2],
            mode: "expected".into(),
            reference: "edgenet".into(),
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub paths: Paths,
    pub synth: Synth,
    pub model: Model,
    pub train: Train,
    pub weights: Weights,
    pub gsp: GspSection,
    pub ugsp: UgspSection,
    pub dna: DnaSection,
    pub audit: Audit,
    pub eval: Eval,
}

impl ExperimentConfig {
    /// Precedence: explicit --config flag, then $AUCTIONLAB_CONFIG, then
    /// built-in defaults.
    pub fn load(flag: Option<&Path>) -> Result<Self> {
        let path = flag
            .map(Path::to_path_buf)
            .or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from));
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(&p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
            }
            None => Ok(ExperimentConfig::default()),
        }
    }

    /// The fully-resolved configuration as commented lines for report
    /// headers, so every artifact names the settings that produced it.
    pub fn echo_header(&self) -> String {
        let toml = toml::to_string_pretty(self).unwrap_or_else(|e| format!("<echo failed: {e}>"));
        let mut out = String::new();
        for line in toml.lines() {
            out.push_str("# ");
            out.push_str(line);
            out.push('\n');
        }
        out
    }
}
