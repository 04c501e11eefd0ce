use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use pathwise::functionals::{Cylinder, CylinderFunction, Functional};
use pathwise::integration::{follmer_integral_functional, ito_residual_cylinder};
use pathwise::quadvar::{
    norvaisa_qv_check, p_variation, qv_csv, quadratic_variation, variation_index_estimate, vovk_uniform_check,
    PVariationMode, QvOptions, VovkOptions,
};
use pathwise::trading::{adversarial_path, hedge, plausibility_diagnostic, HedgeOptions, HedgeReport};
use pathwise::{PartitionSequence, SampledPath};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::ExperimentConfig;
use crate::error::CliError;

/// Files written by a command and the numeric caveats it raised.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub dir: PathBuf,
    pub files: Vec<String>,
    pub caveats: Vec<String>,
}

struct Writer {
    dir: PathBuf,
    files: Vec<String>,
}

impl Writer {
    fn new(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        std::fs::write(&path, contents).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn report(&mut self, command: &str, cfg: &ExperimentConfig, results: impl Serialize, caveats: &[String]) -> Result<(), CliError> {
        let doc = json!({
            "command": command,
            "config": cfg,
            "caveats": caveats,
            "results": results,
        });
        let mut text = serde_json::to_string_pretty(&doc).expect("report is serializable");
        text.push('\n');
        self.write("report.json", &text)
    }

    fn finish(self, caveats: Vec<String>) -> Outcome {
        Outcome {
            dir: self.dir,
            files: self.files,
            caveats,
        }
    }
}

fn functional(cfg: &ExperimentConfig, seq: &PartitionSequence, dim: usize) -> Result<Box<dyn Functional>, CliError> {
    let spec = cfg
        .functional
        .as_ref()
        .ok_or_else(|| CliError::Config("this command needs a [functional] section".into()))?;
    spec.build(seq.horizon(), dim)
        .map_err(|e| CliError::Config(format!("functional: {e}")))
}

fn entries_header(prefix: &str, d: usize) -> String {
    if d == 1 {
        return format!(",{prefix}");
    }
    let mut out = String::new();
    for i in 1..=d {
        for j in 1..=d {
            let _ = write!(out, ",{prefix}_{i}_{j}");
        }
    }
    out
}

fn push_entries(out: &mut String, values: &[f64]) {
    for v in values {
        let _ = write!(out, ",{v}");
    }
}

/// Quadratic variation along the configured sequence.
pub fn cmd_qv(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, CliError> {
    let seq = cfg.sequence()?;
    let path = cfg.load_path(&seq, 0)?;
    let opts = QvOptions {
        probe_times: cfg.probes.clone(),
        convergence: cfg.tolerances.qv(),
        strict_jumps: false,
    };
    let qv = quadratic_variation(&path, &seq, &opts)?;
    let d = qv.dim;
    let mut w = Writer::new(out)?;
    w.write("qv_levels.csv", &qv_csv(&qv))?;

    let mut conv = format!("level{},gap_to_next\n", entries_header("A_T", d));
    let last = qv.probe_times.len() - 1;
    for (k, level) in qv.levels.iter().enumerate() {
        let _ = write!(conv, "{level}");
        push_entries(&mut conv, &qv.per_level[k][last]);
        match qv.gaps.get(k) {
            Some(g) => {
                let _ = writeln!(conv, ",{g}");
            }
            None => conv.push_str(",\n"),
        }
    }
    w.write("qv_convergence.csv", &conv)?;

    let mut curve = format!(
        "t{}{}{}\n",
        entries_header("qv", d),
        entries_header("continuous", d),
        entries_header("jumps", d)
    );
    for (j, t) in qv.times.iter().enumerate() {
        let _ = write!(curve, "{t}");
        push_entries(&mut curve, &qv.limit[j]);
        push_entries(&mut curve, &qv.continuous_part[j]);
        push_entries(&mut curve, &qv.jump_part[j]);
        curve.push('\n');
    }
    w.write("qv_curve.csv", &curve)?;

    let mut caveats = Vec::new();
    if !qv.converged {
        caveats.push(format!("quadratic variation not converged (metric {:e})", qv.convergence_metric));
    }
    let mut results = json!({
        "dim": d,
        "levels": qv.levels,
        "final_value": qv.final_value(),
        "converged": qv.converged,
        "convergence_metric": qv.convergence_metric,
        "gaps": qv.gaps,
        "refined": qv.refined,
        "monotonicity_violation": qv.monotonicity_violation,
    });
    let vovk = vovk_uniform_check(
        &path,
        &seq,
        &VovkOptions {
            convergence: cfg.tolerances.qv(),
            seed: cfg.seed,
            ..VovkOptions::default()
        },
    )?;
    results["vovk"] = json!(vovk);
    if d == 1 && seq.is_nested() {
        let covered = if qv.refined { seq.refine_with(&path.jump_times())? } else { seq.clone() };
        let norvaisa = norvaisa_qv_check(&path, &covered, &[(0.0, seq.horizon())], &cfg.tolerances.qv())?;
        results["norvaisa"] = json!(norvaisa);
        let p_grid = [1.0, 1.5, 2.0, 2.5, 3.0];
        results["variation_index"] = json!(variation_index_estimate(&path, &covered, &p_grid)?);
    }
    w.report("qv", cfg, results, &caveats)?;
    Ok(w.finish(caveats))
}

#[derive(Serialize)]
struct SweepRow {
    level: usize,
    residual: f64,
    integral: f64,
    second_order: f64,
    jump_sum: f64,
    qv_metric: f64,
}

/// Föllmer integral of the configured functional and the Itô residual sweep.
pub fn cmd_integrate(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, CliError> {
    let p_values = &cfg.integrate.p_variation;
    if let Some(p) = p_values.iter().find(|&&p| !(p >= 1.0)) {
        return Err(CliError::Config(format!("p-variation needs p >= 1, got {p}")));
    }
    let seq = cfg.sequence()?;
    let path = cfg.load_path(&seq, 0)?;
    let f = functional(cfg, &seq, path.dim())?;
    let mut caveats = Vec::new();
    let mut w = Writer::new(out)?;

    let grid = path.grid().to_vec();
    let probes = cfg.probes.clone().unwrap_or_else(|| grid.clone());
    let integral = follmer_integral_functional(
        f.as_ref(),
        &path,
        &seq,
        Some(&probes),
        &cfg.tolerances.fd,
        &cfg.tolerances.integral(),
    )?;
    if !integral.converged {
        caveats.push(format!("Föllmer sums not converged (metric {:e})", integral.convergence_metric));
    }
    w.write("integral_levels.csv", &integral.to_csv())?;
    let mut gain = String::from("t,gain\n");
    for (t, v) in integral.probe_times.iter().zip(&integral.limit_estimate) {
        let _ = writeln!(gain, "{t},{v}");
    }
    w.write("gain.csv", &gain)?;

    let ito = Cylinder::on_coordinate(
        path.dim(),
        0,
        cfg.integrate
            .ito_function
            .unwrap_or(CylinderFunction::Power { exponent: 2.0 }),
    );
    let sweep_levels = cfg
        .integrate
        .sweep_levels
        .clone()
        .unwrap_or_else(|| (2..=seq.top_level()).collect());
    let mut sweep = Vec::with_capacity(sweep_levels.len());
    for &level in &sweep_levels {
        if level < 1 || level > seq.top_level() {
            return Err(CliError::Config(format!("sweep level {level} outside 1..={}", seq.top_level())));
        }
        let r = ito_residual_cylinder(&ito, &path, &seq.truncate(level)?, &cfg.tolerances.qv())?;
        sweep.push(SweepRow {
            level,
            residual: r.residual,
            integral: r.integral,
            second_order: r.second_order,
            jump_sum: r.jump_sum,
            qv_metric: r.qv_metric,
        });
    }
    let mut csv = String::from("level,residual,integral,second_order,jump_sum,qv_metric\n");
    for r in &sweep {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            r.level, r.residual, r.integral, r.second_order, r.jump_sum, r.qv_metric
        );
    }
    w.write("ito_sweep.csv", &csv)?;

    let mut p_table = Vec::new();
    if !p_values.is_empty() {
        let scalar = path.coordinate(0);
        let mut csv = String::from("p,v_p\n");
        for &p in p_values {
            let v = p_variation(&scalar, p, PVariationMode::ExactDp)?;
            let _ = writeln!(csv, "{p},{v}");
            p_table.push(json!({ "p": p, "v_p": v }));
        }
        w.write("p_variation.csv", &csv)?;
    }

    let results = json!({
        "functional": f.name(),
        "integral": {
            "levels": integral.levels,
            "final_value": integral.final_value(),
            "gaps": integral.gaps,
            "convergence_metric": integral.convergence_metric,
            "converged": integral.converged,
        },
        "ito_function": ito.name(),
        "ito_sweep": sweep,
        "p_variation": p_table,
    });
    w.report("integrate", cfg, results, &caveats)?;
    Ok(w.finish(caveats))
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Summary quantiles of the hedge batch.
#[derive(Debug, Clone, Serialize)]
pub struct HedgeSummary {
    pub paths: usize,
    pub median_relative_residual: f64,
    pub p95_relative_residual: f64,
    pub max_tracking_error: f64,
    pub mean_realized_pnl: f64,
    pub mean_predicted_error: f64,
    pub fpde_ok: bool,
}

pub fn summarize(reports: &[HedgeReport]) -> HedgeSummary {
    let mut rel: Vec<f64> = reports.iter().map(|r| r.relative_residual).collect();
    rel.sort_by(f64::total_cmp);
    let n = reports.len() as f64;
    HedgeSummary {
        paths: reports.len(),
        median_relative_residual: quantile(&rel, 0.5),
        p95_relative_residual: quantile(&rel, 0.95),
        max_tracking_error: reports.iter().map(|r| r.max_tracking_error).fold(0.0, f64::max),
        mean_realized_pnl: reports.iter().map(|r| r.realized_pnl).sum::<f64>() / n,
        mean_predicted_error: reports.iter().map(|r| r.predicted_error).sum::<f64>() / n,
        fpde_ok: reports.iter().all(|r| r.fpde_ok),
    }
}

/// Runs the hedge on every scenario path of the config.
pub fn hedge_batch(cfg: &ExperimentConfig) -> Result<Vec<HedgeReport>, CliError> {
    let seq = cfg.sequence()?;
    let h = &cfg.hedge;
    if h.paths == 0 {
        return Err(CliError::Config("hedge.paths must be positive".into()));
    }
    let model = h
        .model
        .clone()
        .ok_or_else(|| CliError::Config("hedge needs a `model` density".into()))?;
    let opts = HedgeOptions {
        level: h.level,
        fpde_samples: h.fpde_samples,
        fpde_tol: cfg.tolerances.fpde,
        fd: cfg.tolerances.fd,
        convergence: cfg.tolerances.qv(),
    };
    let paths: Vec<SampledPath> = (0..h.paths as u64)
        .map(|k| cfg.load_path(&seq, k))
        .collect::<Result<_, _>>()?;
    let f = functional(cfg, &seq, paths[0].dim())?;
    paths
        .par_iter()
        .map(|p| hedge(f.as_ref(), None, &model, &h.realized, p, &seq, &opts).map_err(CliError::from))
        .collect()
}

/// Delta hedge of the configured functional over a batch of scenarios.
pub fn cmd_hedge(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, CliError> {
    let reports = hedge_batch(cfg)?;
    let mut w = Writer::new(out)?;
    let mut csv = String::from(
        "path,initial_value,payoff,realized_pnl,predicted_error,residual,relative_residual,max_tracking_error,fpde_max_residual,fpde_warning\n",
    );
    for (k, r) in reports.iter().enumerate() {
        let _ = writeln!(
            csv,
            "{k},{},{},{},{},{},{},{},{},{}",
            r.initial_value,
            r.payoff,
            r.realized_pnl,
            r.predicted_error,
            r.residual,
            r.relative_residual,
            r.max_tracking_error,
            r.fpde_max_residual,
            u8::from(!r.fpde_ok)
        );
    }
    w.write("hedge_paths.csv", &csv)?;
    w.write("hedge_curve.csv", &reports[0].to_csv())?;
    let summary = summarize(&reports);
    let mut caveats = Vec::new();
    if !summary.fpde_ok {
        caveats.push("pricing equation residual above tolerance on some paths".to_string());
    }
    let per_path: Vec<Value> = reports
        .iter()
        .map(|r| {
            json!({
                "realized_pnl": r.realized_pnl,
                "predicted_error": r.predicted_error,
                "residual": r.residual,
                "relative_residual": r.relative_residual,
                "caveats": r.caveats,
            })
        })
        .collect();
    w.report("hedge", cfg, json!({ "summary": summary, "paths": per_path }), &caveats)?;
    Ok(w.finish(caveats))
}

/// Cross-term identities and the `Σ k_n` verdict.
pub fn cmd_plausibility(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, CliError> {
    let seq = cfg.sequence()?;
    let path = if cfg.plausibility.adversarial {
        let top = seq.top_level();
        let candidate = adversarial_path(seq.horizon(), top)?;
        if candidate.grid() != seq.finest() {
            return Err(CliError::Config("the adversarial path needs a dyadic partition".into()));
        }
        candidate
    } else {
        cfg.load_path(&seq, 0)?
    };
    let r = plausibility_diagnostic(&path, &seq, cfg.probes.as_deref(), &cfg.tolerances.qv())?;
    let mut w = Writer::new(out)?;
    let mut csv = String::from(
        "level,cross_identity_residual,strategy_identity_residual,k,cross_term_as_displayed,partial_sum_k,partial_sum_displayed,monotonicity_violation\n",
    );
    for l in &r.levels {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            l.level,
            l.cross_identity_residual,
            l.strategy_identity_residual,
            l.k,
            l.cross_term_as_displayed,
            l.partial_sum_k,
            l.partial_sum_displayed,
            l.monotonicity_violation
        );
    }
    w.write("plausibility_levels.csv", &csv)?;
    w.report("plausibility", cfg, &r, &[])?;
    Ok(w.finish(Vec::new()))
}
