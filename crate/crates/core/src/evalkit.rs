//! Metric computation and mechanism comparison tables.
//!
//! RPM = (Σ click × PPC / Σ impression) × 1000, CTR = Σ click / Σ impression,
//! CVR = Σ order / Σ impression. The default simulation is expectation-based
//! (each occupied slot contributes pCTR_i·γ_j expected clicks), which keeps
//! comparisons low-variance; Bernoulli sampling exists behind a flag.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::auction::{Mechanism, MechanismError};
use crate::datagen::AuctionLog;
use crate::regret::{empirical_regret, PerturbationScheme, RegretError};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("empty log")]
    EmptyLog,
    #[error("no seeds supplied")]
    NoSeeds,
    #[error("reference mechanism index {index} out of range for {count} mechanisms")]
    BadReference { index: usize, count: usize },
    #[error("reference {metric} is zero under seed {seed}; cannot normalize")]
    ZeroReference { metric: &'static str, seed: u64 },
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
    #[error(transparent)]
    Regret(#[from] RegretError),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SimulationMode {
    /// Expected clicks/orders per slot; deterministic given the mechanism.
    Expected,
    /// Bernoulli clicks, then Bernoulli orders conditioned on a click.
    Sampled,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RawMetrics {
    pub ctr: f64,
    pub rpm: f64,
    pub cvr: f64,
}

/// Raw CTR/RPM/CVR of one mechanism over a log. Payments are per click,
/// so realized revenue is payment × click mass. Every instance counts K
/// impressions whether or not all slots fill.
pub fn simulate_metrics(
    mech: &dyn Mechanism,
    log: &AuctionLog,
    mode: SimulationMode,
    seed: u64,
) -> Result<RawMetrics, EvalError> {
    if log.is_empty() {
        return Err(EvalError::EmptyLog);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut impressions, mut clicks, mut orders, mut revenue) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for instance in &log.instances {
        let outcome = mech.run(instance)?;
        let k = instance.slot_count();
        impressions += k as f64;
        for i in 0..instance.num_candidates() {
            let ad = &instance.candidates[i];
            for j in 0..k {
                let share = outcome.allocation.get(i, j);
                if share == 0.0 {
                    continue;
                }
                let p_click = ad.pctr * instance.slot_discounts[j];
                match mode {
                    SimulationMode::Expected => {
                        let click = share * p_click;
                        clicks += click;
                        orders += click * ad.pcvr;
                        revenue += click * outcome.payments[i];
                    }
                    SimulationMode::Sampled => {
                        if share < 1.0 && rng.gen::<f64>() >= share {
                            continue;
                        }
                        if rng.gen::<f64>() < p_click {
                            clicks += 1.0;
                            revenue += outcome.payments[i];
                            if rng.gen::<f64>() < ad.pcvr {
                                orders += 1.0;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(RawMetrics {
        ctr: clicks / impressions,
        rpm: revenue / impressions * 1000.0,
        cvr: orders / impressions,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    fn over(values: &[f64]) -> Stat {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Stat {
            mean,
            std: var.sqrt(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct MetricRow {
    pub mechanism: String,
    pub ctr: Stat,
    pub rpm: Stat,
    pub cvr: Stat,
    pub ic_r_percent: f64,
}

#[derive(Clone, Debug)]
pub struct MetricTable {
    pub reference: String,
    pub rows: Vec<MetricRow>,
}

#[derive(Clone, Debug)]
pub struct CompareOptions {
    pub mode: SimulationMode,
    pub seeds: Vec<u64>,
    /// Index into the mechanism list whose per-seed metrics anchor 1.0.
    pub reference: usize,
    pub scheme: PerturbationScheme,
}

impl Default for CompareOptions {
    fn default() -> Self {
        CompareOptions {
            mode: SimulationMode::Expected,
            seeds: vec![0],
            reference: 0,
            scheme: PerturbationScheme::default(),
        }
    }
}

/// Side-by-side normalized comparison. Each seed's metrics divide by the
/// reference mechanism's same-seed value, so the reference row is exactly
/// 1.0 with zero spread; IC-R comes from the regret auditor unnormalized.
pub fn compare(
    mechanisms: &[&dyn Mechanism],
    log: &AuctionLog,
    opts: &CompareOptions,
) -> Result<MetricTable, EvalError> {
    if log.is_empty() {
        return Err(EvalError::EmptyLog);
    }
    if opts.seeds.is_empty() {
        return Err(EvalError::NoSeeds);
    }
    if opts.reference >= mechanisms.len() {
        return Err(EvalError::BadReference {
            index: opts.reference,
            count: mechanisms.len(),
        });
    }

    let mut ratios: Vec<[Vec<f64>; 3]> = mechanisms
        .iter()
        .map(|_| [Vec::new(), Vec::new(), Vec::new()])
        .collect();
    for &seed in &opts.seeds {
        let per_mech: Vec<RawMetrics> = mechanisms
            .iter()
            .map(|m| simulate_metrics(*m, log, opts.mode, seed))
            .collect::<Result<_, _>>()?;
        let anchor = per_mech[opts.reference];
        for (name, value) in [("CTR", anchor.ctr), ("RPM", anchor.rpm), ("CVR", anchor.cvr)] {
            if value == 0.0 {
                return Err(EvalError::ZeroReference { metric: name, seed });
            }
        }
        for (m, raw) in per_mech.iter().enumerate() {
            if m == opts.reference {
                // The anchor's own ratios are 1 by definition; dividing a
                // float by itself can stray from that, so pin them.
                for axis in &mut ratios[m] {
                    axis.push(1.0);
                }
            } else {
                ratios[m][0].push(raw.ctr / anchor.ctr);
                ratios[m][1].push(raw.rpm / anchor.rpm);
                ratios[m][2].push(raw.cvr / anchor.cvr);
            }
        }
    }

    let mut rows = Vec::with_capacity(mechanisms.len());
    for (m, mech) in mechanisms.iter().enumerate() {
        let report = empirical_regret(*mech, log, &opts.scheme)?;
        rows.push(MetricRow {
            mechanism: mech.name().to_string(),
            ctr: Stat::over(&ratios[m][0]),
            rpm: Stat::over(&ratios[m][1]),
            cvr: Stat::over(&ratios[m][2]),
            ic_r_percent: report.ic_r_percent,
        });
    }
    Ok(MetricTable {
        reference: mechanisms[opts.reference].name().to_string(),
        rows,
    })
}

/// Aligned plain-text table.
pub fn render_text(table: &MetricTable) -> String {
    let name_w = table
        .rows
        .iter()
        .map(|r| r.mechanism.len())
        .chain(["mechanism".len()])
        .max()
        .unwrap_or(9);
    let mut out = String::new();
    out.push_str(&format!(
        "{:<name_w$}  {:>17}  {:>17}  {:>17}  {:>7}\n",
        "mechanism", "CTR", "RPM", "CVR", "IC-R"
    ));
    out.push_str(&format!("reference = {}\n", table.reference));
    for r in &table.rows {
        out.push_str(&format!(
            "{:<name_w$}  {:>17}  {:>17}  {:>17}  {:>6.2}%\n",
            r.mechanism,
            fmt_stat(&r.ctr),
            fmt_stat(&r.rpm),
            fmt_stat(&r.cvr),
            r.ic_r_percent,
        ));
    }
    out
}

fn fmt_stat(s: &Stat) -> String {
    format!("{:.4} ± {:.4}", s.mean, s.std)
}

/// Machine-readable rows, one mechanism per line.
pub fn render_csv(table: &MetricTable) -> String {
    let mut out = String::from(
        "mechanism,ctr_mean,ctr_std,rpm_mean,rpm_std,cvr_mean,cvr_std,ic_r_percent\n",
    );
    for r in &table.rows {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.4}\n",
            r.mechanism,
            r.ctr.mean,
            r.ctr.std,
            r.rpm.mean,
            r.rpm.std,
            r.cvr.mean,
            r.cvr.std,
            r.ic_r_percent,
        ));
    }
    out
}

/// Grouped bar chart of the normalized means, one group per metric.
/// Plain static SVG, fixed viewport, no external assets.
pub fn render_svg(table: &MetricTable) -> String {
    const W: f64 = 640.0;
    const H: f64 = 320.0;
    const MARGIN: f64 = 40.0;
    const PALETTE: [&str; 6] = [
        "#4878d0", "#ee854a", "#6acc64", "#d65f5f", "#956cb4", "#8c613c",
    ];
    let metrics = ["CTR", "RPM", "CVR"];
    let n_mech = table.rows.len().max(1);
    let peak = table
        .rows
        .iter()
        .flat_map(|r| [r.ctr.mean, r.rpm.mean, r.cvr.mean])
        .fold(1.0f64, f64::max);

    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {W} {H}\" \
         font-family=\"sans-serif\" font-size=\"11\">\n"
    ));
    s.push_str(&format!(
        "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n"
    ));
    let plot_w = W - 2.0 * MARGIN;
    let plot_h = H - 2.0 * MARGIN;
    let group_w = plot_w / metrics.len() as f64;
    let bar_w = (group_w * 0.8) / n_mech as f64;

    // y gridline + label at the 1.0 reference level
    let y_ref = H - MARGIN - plot_h * (1.0 / (peak * 1.1));
    s.push_str(&format!(
        "<line x1=\"{MARGIN}\" y1=\"{y_ref:.1}\" x2=\"{:.1}\" y2=\"{y_ref:.1}\" \
         stroke=\"#999\" stroke-dasharray=\"4 3\"/>\n",
        W - MARGIN
    ));
    s.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\">1.0</text>\n",
        8.0,
        y_ref + 4.0
    ));

    for (g, metric) in metrics.iter().enumerate() {
        let gx = MARGIN + g as f64 * group_w + group_w * 0.1;
        for (m, row) in table.rows.iter().enumerate() {
            let v = [row.ctr.mean, row.rpm.mean, row.cvr.mean][g];
            let h = plot_h * (v / (peak * 1.1)).max(0.0);
            let x = gx + m as f64 * bar_w;
            let y = H - MARGIN - h;
            s.push_str(&format!(
                "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{:.1}\" height=\"{h:.1}\" \
                 fill=\"{}\"/>\n",
                bar_w * 0.9,
                PALETTE[m % PALETTE.len()],
            ));
        }
        s.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{metric}</text>\n",
            gx + group_w * 0.4,
            H - MARGIN + 16.0
        ));
    }
    for (m, row) in table.rows.iter().enumerate() {
        let y = 16.0 + m as f64 * 14.0;
        s.push_str(&format!(
            "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"10\" height=\"10\" fill=\"{}\"/>\n",
            W - MARGIN - 150.0,
            y - 9.0,
            PALETTE[m % PALETTE.len()],
        ));
        s.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{y:.1}\">{}</text>\n",
            W - MARGIN - 136.0,
            xml_escape(&row.mechanism),
        ));
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
