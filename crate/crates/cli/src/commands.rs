//! Subcommand implementations. Every command is a pure function of its
//! resolved config and seeds: reports embed the config, filenames are
//! fixed, and nothing reads the clock.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};

use auctionlab::auction::Mechanism;
use auctionlab::baselines::{
    train_dna_lite, DnaLite, FirstPriceSingleSlot, Gsp, Ugsp, VickreySingleSlot,
};
use auctionlab::checkpoint::Checkpoint;
use auctionlab::datagen::{generate, read_log, write_log, AuctionLog};
use auctionlab::edgenet::{EdgeNet, EdgeNetParams};
use auctionlab::evalkit::{
    compare, render_csv, render_svg, render_text, simulate_metrics, CompareOptions,
    SimulationMode,
};
use auctionlab::regret::empirical_regret;
use auctionlab::trainer::{self, stats_header, stats_line, ResumePoint};

use crate::config::ExperimentConfig;

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
    }
    Ok(())
}

fn write_report(path: &Path, contents: &str) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}

pub fn cmd_gen(config: &ExperimentConfig) -> Result<()> {
    for (label, count, seed, path) in [
        (
            "train",
            config.synth.instances,
            config.synth.seed,
            &config.paths.train_log,
        ),
        (
            "test",
            config.synth.test_instances,
            config.synth.test_seed,
            &config.paths.test_log,
        ),
    ] {
        let synth = config.synth.to_synth_config(count, seed);
        let log = generate(&synth)?;
        ensure_parent(path)?;
        write_log(&log, path)?;
        println!(
            "wrote {} ({label}: {} instances, {} ads × {} slots, seed {seed})",
            path.display(),
            log.len(),
            config.synth.candidates,
            config.synth.slots,
        );
    }
    Ok(())
}

fn load_edgenet_params(config: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<(EdgeNetParams, String)> {
    let default_path = config.paths.checkpoints.join("latest.ckpt");
    let path = checkpoint.unwrap_or(&default_path);
    if path.exists() {
        let ck = Checkpoint::load(path)
            .with_context(|| format!("loading checkpoint {}", path.display()))?;
        let params = ck.restore()?;
        Ok((params, format!("checkpoint {} (step {})", path.display(), ck.step)))
    } else if checkpoint.is_some() {
        bail!("checkpoint {} does not exist", path.display());
    } else {
        let enc = config
            .model
            .encoder_config(config.synth.d_x, config.synth.d_y);
        let dec = config.model.decoder_config();
        let params = EdgeNetParams::init(enc, dec, config.model.init_seed)?;
        Ok((
            params,
            format!("fresh initialization (seed {})", config.model.init_seed),
        ))
    }
}

pub fn cmd_train(config: &ExperimentConfig, resume: bool, checkpoint: Option<&Path>) -> Result<()> {
    let data = read_log(&config.paths.train_log)
        .with_context(|| format!("reading {}", config.paths.train_log.display()))?;
    let scheme = config.audit.scheme()?;
    let train_config = config
        .train
        .to_train_config(scheme, config.paths.checkpoints.clone());
    let weights = config.weights.to_weights();

    let (params, resume_point, origin) = if resume {
        let default_path = config.paths.checkpoints.join("latest.ckpt");
        let path = checkpoint.unwrap_or(&default_path);
        let ck = Checkpoint::load(path)
            .with_context(|| format!("loading checkpoint {}", path.display()))?;
        let state = ck
            .trainer
            .clone()
            .context("checkpoint carries no trainer state; cannot resume")?;
        let step = ck.step;
        (
            ck.restore()?,
            Some(ResumePoint { step, state }),
            format!("checkpoint {} at step {step}", path.display()),
        )
    } else {
        let (params, origin) = load_edgenet_params(config, checkpoint)?;
        (params, None, origin)
    };
    println!("training from {origin}");

    let appending = resume_point.is_some();
    let out = trainer::train(&data, params, &weights, &train_config, resume_point)
        .context("training failed")?;

    let log_path = config.paths.reports.join("train_log.tsv");
    ensure_parent(&log_path)?;
    let mut body = String::new();
    if !(appending && log_path.exists()) {
        body.push_str(&config.echo_header());
        body.push_str(stats_header());
        body.push('\n');
    }
    for s in &out.stats {
        body.push_str(&stats_line(s));
        body.push('\n');
    }
    if appending && log_path.exists() {
        use std::io::Write as _;
        let mut f = fs::OpenOptions::new().append(true).open(&log_path)?;
        f.write_all(body.as_bytes())?;
        println!("appended {} steps to {}", out.stats.len(), log_path.display());
    } else {
        fs::write(&log_path, body)?;
        println!("wrote {}", log_path.display());
    }

    let last = out
        .stats
        .last()
        .map(|s| format!("loss {:.6}, batch IC-R {:.2}%", s.loss, s.batch_icr))
        .unwrap_or_default();
    println!(
        "finished {} steps ({last}); checkpoint: {}",
        out.stats.len(),
        out.last_checkpoint
            .as_deref()
            .map(|p| p.display().to_string())
            .unwrap_or_else(|| "none".into()),
    );
    Ok(())
}

/// Everything eval/audit/compare can put in a lineup.
fn build_mechanisms(
    config: &ExperimentConfig,
    names: &[String],
    train_log: &AuctionLog,
    checkpoint: Option<&Path>,
) -> Result<Vec<(String, Box<dyn Mechanism>)>> {
    let mut out: Vec<(String, Box<dyn Mechanism>)> = Vec::new();
    for name in names {
        let mech: Box<dyn Mechanism> = match name.as_str() {
            "gsp" => Box::new(Gsp::new(config.gsp.sigma).map_err(anyhow::Error::from)?),
            "ugsp" => Box::new(
                Ugsp::new(config.ugsp.lambda1, config.ugsp.lambda2, config.ugsp.lambda3)
                    .map_err(anyhow::Error::from)?,
            ),
            "dna" => {
                let opts = config.dna.to_options();
                let (params, _) = train_dna_lite(train_log, &opts)
                    .context("fitting the rank-score baseline")?;
                Box::new(DnaLite::new(params))
            }
            "edgenet" => {
                let (params, origin) = load_edgenet_params(config, checkpoint)?;
                println!("edgenet from {origin}");
                Box::new(EdgeNet::new(params))
            }
            "second-price" => Box::new(VickreySingleSlot),
            "first-price" => Box::new(FirstPriceSingleSlot),
            other => bail!(
                "unknown mechanism {other:?} (expected gsp, ugsp, dna, edgenet, second-price, or first-price)"
            ),
        };
        out.push((name.clone(), mech));
    }
    Ok(out)
}

fn simulation_mode(name: &str) -> Result<SimulationMode> {
    match name {
        "expected" => Ok(SimulationMode::Expected),
        "sampled" => Ok(SimulationMode::Sampled),
        other => bail!("unknown simulation mode {other:?} (expected \"expected\" or \"sampled\")"),
    }
}

/// Raw (unnormalized) metrics per mechanism plus IC-R, Table-1 columns.
pub fn cmd_eval(config: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<()> {
    let test = read_log(&config.paths.test_log)
        .with_context(|| format!("reading {}", config.paths.test_log.display()))?;
    let train = read_log(&config.paths.train_log)
        .with_context(|| format!("reading {}", config.paths.train_log.display()))?;
    let mode = simulation_mode(&config.eval.mode)?;
    let scheme = config.audit.scheme()?;
    let lineup = build_mechanisms(config, &config.audit.mechanisms, &train, checkpoint)?;

    let audited = limit_log(&test, config.audit.limit);
    let mut text = config.echo_header();
    text.push_str(&format!(
        "{:<10}  {:>10}  {:>12}  {:>10}  {:>8}\n",
        "mechanism", "CTR", "RPM", "CVR", "IC-R"
    ));
    let mut csv = String::from("mechanism,ctr,rpm,cvr,ic_r_percent\n");
    for (name, mech) in &lineup {
        let seed = config.eval.seeds.first().copied().unwrap_or(0);
        let m = simulate_metrics(mech.as_ref(), &test, mode, seed)?;
        let report = empirical_regret(mech.as_ref(), &audited, &scheme)?;
        text.push_str(&format!(
            "{name:<10}  {:>10.6}  {:>12.4}  {:>10.6}  {:>7.2}%\n",
            m.ctr, m.rpm, m.cvr, report.ic_r_percent
        ));
        csv.push_str(&format!(
            "{name},{:.6},{:.4},{:.6},{:.4}\n",
            m.ctr, m.rpm, m.cvr, report.ic_r_percent
        ));
    }
    write_report(&config.paths.reports.join("eval.txt"), &text)?;
    write_report(&config.paths.reports.join("eval.csv"), &csv)?;
    Ok(())
}

fn limit_log(log: &AuctionLog, limit: usize) -> AuctionLog {
    if limit == 0 || limit >= log.len() {
        log.clone()
    } else {
        AuctionLog::new(log.instances[..limit].to_vec())
    }
}

/// Misreport audit: regret and IC-R per mechanism.
pub fn cmd_audit(
    config: &ExperimentConfig,
    mechanisms: &[String],
    checkpoint: Option<&Path>,
) -> Result<()> {
    let test = read_log(&config.paths.test_log)
        .with_context(|| format!("reading {}", config.paths.test_log.display()))?;
    let train = read_log(&config.paths.train_log)
        .with_context(|| format!("reading {}", config.paths.train_log.display()))?;
    let names = if mechanisms.is_empty() {
        config.audit.mechanisms.clone()
    } else {
        mechanisms.to_vec()
    };
    let scheme = config.audit.scheme()?;
    let audited = limit_log(&test, config.audit.limit);
    let lineup = build_mechanisms(config, &names, &train, checkpoint)?;

    let mut text = config.echo_header();
    text.push_str(&format!(
        "misreport grid: ±{} steps of {:.3} around each bid; {} instances audited\n\n",
        scheme.half_width,
        scheme.delta,
        audited.len()
    ));
    let mut csv = String::from("mechanism,ic_r_percent,mean_regret,mean_truthful_utility,instances\n");
    for (name, mech) in &lineup {
        let report = empirical_regret(mech.as_ref(), &audited, &scheme)?;
        let mean_u = report.mean_truthful_utility.iter().sum::<f64>()
            / report.mean_truthful_utility.len() as f64;
        text.push_str(&format!(
            "{name}: IC-R {:.2}%  mean regret {:.6}  mean truthful utility {:.6}\n",
            report.ic_r_percent,
            report.overall_mean_regret(),
            mean_u,
        ));
        text.push_str("  per-position regret:");
        for r in &report.mean_regret {
            text.push_str(&format!(" {r:.6}"));
        }
        text.push('\n');
        csv.push_str(&format!(
            "{name},{:.4},{:.6},{:.6},{}\n",
            report.ic_r_percent,
            report.overall_mean_regret(),
            mean_u,
            report.instances
        ));
    }
    write_report(&config.paths.reports.join("audit.txt"), &text)?;
    write_report(&config.paths.reports.join("audit.csv"), &csv)?;
    Ok(())
}

/// Normalized Table-1-style comparison over seeds, with a bar chart.
pub fn cmd_compare(config: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<()> {
    let test = read_log(&config.paths.test_log)
        .with_context(|| format!("reading {}", config.paths.test_log.display()))?;
    let train = read_log(&config.paths.train_log)
        .with_context(|| format!("reading {}", config.paths.train_log.display()))?;
    let lineup = build_mechanisms(config, &config.audit.mechanisms, &train, checkpoint)?;
    let reference = lineup
        .iter()
        .position(|(name, _)| *name == config.eval.reference)
        .with_context(|| {
            format!(
                "reference {:?} is not in the lineup {:?}",
                config.eval.reference, config.audit.mechanisms
            )
        })?;

    let audited = limit_log(&test, config.audit.limit);
    let opts = CompareOptions {
        mode: simulation_mode(&config.eval.mode)?,
        seeds: config.eval.seeds.clone(),
        reference,
        scheme: config.audit.scheme()?,
    };
    let refs: Vec<&dyn Mechanism> = lineup.iter().map(|(_, m)| m.as_ref()).collect();
    let table = compare(&refs, &audited, &opts)?;

    let mut text = config.echo_header();
    text.push_str(&render_text(&table));
    write_report(&config.paths.reports.join("compare.txt"), &text)?;
    write_report(&config.paths.reports.join("compare.csv"), &render_csv(&table))?;
    write_report(&config.paths.reports.join("compare.svg"), &render_svg(&table))?;
    Ok(())
}
