//! The generate → train → optimize stages and the aggregate tables.

use std::path::{Path, PathBuf};

use graybox::control::{optimize_and_verify, ControlProblem, ControlResult};
use graybox::simulator::generate_dataset;
use graybox::training::{self, Metrics};
use graybox::{Error, Gate};
use serde_json::json;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::formats::{
    load_checkpoint, read_csv, read_dataset, read_json, save_checkpoint, write_csv, write_dataset, write_json,
    DatasetHeader, Envelope, DATASET_SCHEMA, SCHEMA_VERSION,
};

pub const METRICS_SCHEMA: &str = "graybox.metrics";
pub const CONTROL_SCHEMA: &str = "graybox.control";

fn require(path: &Path, stage: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{} not found; run `graybox {stage}` first", path.display())))
    }
}

/// Simulates one dataset per coupling.
pub fn generate(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    cfg.validate()?;
    let mut written = Vec::new();
    for &g in &cfg.couplings {
        let sim = cfg.sim_config(g)?;
        let count = cfg.dataset_size(g);
        let seed = cfg.dataset_seed(g);
        log::info!("generating {count} records at g = {g} (M = {}, K = {})", sim.grid.steps(), sim.realizations);
        let records = generate_dataset(count, &sim, seed)?;
        let header = DatasetHeader {
            schema: DATASET_SCHEMA.into(),
            version: SCHEMA_VERSION,
            sim,
            seed,
            count,
            config: cfg.resolved(),
        };
        let path = cfg.dataset_path(g);
        write_dataset(&path, &header, &records)?;
        written.push(path);
    }
    Ok(written)
}

/// Trains one model per coupling and writes checkpoints, metrics and tables.
pub fn train(cfg: &RunConfig) -> CliResult<Vec<Metrics>> {
    cfg.validate()?;
    let train_cfg = cfg.train_config();
    let mut all = Vec::new();
    for &g in &cfg.couplings {
        let data_path = cfg.dataset_path(g);
        require(&data_path, "generate")?;
        let (_, records) = read_dataset(&data_path)?;
        log::info!("training on {} records at g = {g} for {} epochs", records.len(), train_cfg.epochs);
        let seed = cfg.train_seed(g);
        let metadata = |status: &str| {
            json!({
                "status": status,
                "noise": cfg.noise,
                "coupling": g,
                "train_seed": seed,
                "dataset_seed": cfg.dataset_seed(g),
                "records": records.len(),
            })
        };
        let ckpt = cfg.checkpoint_path(g);
        let (params, metrics) = match training::train(&records, &cfg.model, &train_cfg, seed) {
            Ok(v) => v,
            Err(Error::Diverged { epoch, step, reason, last_good }) => {
                save_checkpoint(&ckpt, &last_good, metadata("diverged"))?;
                return Err(CliError::Core(Error::Diverged { epoch, step, reason, last_good }));
            }
            Err(e) => return Err(e.into()),
        };
        save_checkpoint(&ckpt, &params, metadata("trained"))?;
        write_json(&cfg.metrics_path(g), &Envelope::new(METRICS_SCHEMA, cfg, g, &metrics))?;
        log::info!("g = {g}: mean test MSE {:.3e}, prediction error {:.4}", metrics.mean_test_mse(), metrics.prediction_error);
        all.push(metrics);
    }
    write_tables(cfg)?;
    Ok(all)
}

/// Optimizes every configured gate against the trained model and verifies the
/// winners with the simulator.
pub fn optimize(cfg: &RunConfig) -> CliResult<Vec<Vec<ControlResult>>> {
    cfg.validate()?;
    let mut all = Vec::new();
    for &g in &cfg.couplings {
        let ckpt = cfg.checkpoint_path(g);
        require(&ckpt, "train")?;
        let (model, header) = load_checkpoint(&ckpt)?;
        if header.metadata.get("status").and_then(|s| s.as_str()) == Some("diverged") {
            return Err(CliError::Usage(format!("{} holds a diverged model; retrain first", ckpt.display())));
        }
        let sim = cfg.sim_config(g)?;
        let mut results = Vec::with_capacity(cfg.gates.len());
        for &gate in &cfg.gates {
            let problem = ControlProblem { model: &model, gate, settings: cfg.control.clone() };
            let r = optimize_and_verify(&problem, &sim.with_seed(cfg.verify_seed(g, gate)), cfg.control_seed(g, gate))?;
            log::info!(
                "g = {g} {}: emulator {:.4}, verified {:.4}",
                gate.name(),
                r.emulator_fidelity,
                r.verified_fidelity.unwrap_or(f64::NAN)
            );
            results.push(r);
        }
        write_json(&cfg.control_path(g), &Envelope::new(CONTROL_SCHEMA, cfg, g, &results))?;
        all.push(results);
    }
    write_tables(cfg)?;
    Ok(all)
}

/// Paths of the aggregate CSV tables for the configured noise kind.
pub struct TablePaths {
    pub metrics: PathBuf,
    pub prediction_error: PathBuf,
    pub fidelities: PathBuf,
    pub plot: PathBuf,
}

pub fn table_paths(cfg: &RunConfig) -> TablePaths {
    let dir = cfg.out.join("results");
    let noise = cfg.noise.name();
    TablePaths {
        metrics: dir.join(format!("{noise}_metrics.csv")),
        prediction_error: dir.join(format!("{noise}_prediction_error.csv")),
        fidelities: dir.join(format!("{noise}_fidelities.csv")),
        plot: dir.join(format!("{noise}_plot.csv")),
    }
}

fn cell(x: f64) -> String {
    format!("{x}")
}

fn strings<const N: usize>(items: [&str; N]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

/// Rebuilds the tables from whatever metrics and control files exist.
/// Returns the number of couplings with metrics and with control results.
pub fn write_tables(cfg: &RunConfig) -> CliResult<(usize, usize)> {
    let paths = table_paths(cfg);
    let mut metrics = Vec::new();
    let mut controls = Vec::new();
    for &g in &cfg.couplings {
        let m = cfg.metrics_path(g);
        if m.is_file() {
            let env: Envelope<Metrics> = read_json(&m)?;
            metrics.push((g, env.body));
        }
        let c = cfg.control_path(g);
        if c.is_file() {
            let env: Envelope<Vec<ControlResult>> = read_json(&c)?;
            controls.push((g, env.body));
        }
    }

    if !metrics.is_empty() {
        let mut header = strings(["g", "quantity"]);
        header.extend(Gate::ALL.iter().map(|gate| gate.name().to_string()));
        let mut rows = Vec::new();
        for (g, m) in &metrics {
            for (name, values) in [("mse_train", &m.train_mse), ("mse_test", &m.test_mse)] {
                let mut row = vec![cell(*g), name.to_string()];
                row.extend(values.iter().map(|v| cell(*v)));
                rows.push(row);
            }
        }
        write_csv(&paths.metrics, METRICS_SCHEMA, cfg, &header, &rows)?;

        let rows = metrics
            .iter()
            .map(|(g, m)| vec![cell(*g), cell(m.prediction_error), cell(m.mean_test_mse())])
            .collect::<Vec<_>>();
        write_csv(
            &paths.prediction_error,
            "graybox.prediction_error",
            cfg,
            &strings(["g", "prediction_error", "mean_test_mse"]),
            &rows,
        )?;
    }

    if !controls.is_empty() {
        let mut header = strings(["gate"]);
        header.extend(controls.iter().map(|(g, _)| format!("g={g}")));
        let rows = cfg
            .gates
            .iter()
            .map(|&gate| {
                let mut row = vec![gate.name().to_string()];
                for (_, results) in &controls {
                    let v = results.iter().find(|r| r.gate == gate).and_then(|r| r.verified_fidelity);
                    row.push(v.map(cell).unwrap_or_default());
                }
                row
            })
            .collect::<Vec<_>>();
        write_csv(&paths.fidelities, "graybox.fidelities", cfg, &header, &rows)?;

        let mut rows = Vec::new();
        for (g, results) in &controls {
            for r in results {
                let verified = r.verified_fidelity.unwrap_or(f64::NAN);
                rows.push(vec![
                    cell(*g),
                    r.gate.name().to_string(),
                    cell(r.emulator_fidelity),
                    cell(verified),
                    cell((r.emulator_fidelity - verified).abs()),
                ]);
            }
        }
        write_csv(&paths.plot, "graybox.plot", cfg, &strings(["g", "gate", "emulator", "verified", "gap"]), &rows)?;
    }
    Ok((metrics.len(), controls.len()))
}

fn render_table(path: &Path) -> CliResult<String> {
    let (header, rows) = read_csv(path)?;
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    let short = |s: &str| match s.parse::<f64>() {
        Ok(v) if s.contains('.') || s.contains('e') => format!("{v:.6}"),
        _ => s.to_string(),
    };
    let rows: Vec<Vec<String>> = rows.iter().map(|r| r.iter().map(|c| short(c)).collect()).collect();
    for row in &rows {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: &[String]| {
        cells.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect::<Vec<_>>().join("  ")
    };
    let mut out = format!("{}\n{}\n", path.display(), line(&header));
    for row in &rows {
        out.push_str(&line(row));
        out.push('\n');
    }
    Ok(out)
}

/// Regenerates the tables and renders them as text.
pub fn report(cfg: &RunConfig) -> CliResult<String> {
    cfg.validate()?;
    let (m, c) = write_tables(cfg)?;
    if m == 0 && c == 0 {
        return Err(CliError::Usage(format!(
            "no metrics or control results under {}; run `graybox train` first",
            cfg.out.display()
        )));
    }
    let paths = table_paths(cfg);
    let mut out = String::new();
    for path in [&paths.metrics, &paths.prediction_error, &paths.fidelities, &paths.plot] {
        if path.is_file() {
            out.push_str(&render_table(path)?);
            out.push('\n');
        }
    }
    Ok(out)
}
