//! Headless benchmark: the cross product of modes, assistance settings and
//! seeds, each cell run with a synthetic Boltzmann operator.

use std::path::Path;

use anyhow::{Context, Result};
use rayon::prelude::*;
use riso_core::agents::{BoltzmannOperator, OperatorConfig};
use riso_core::{run_episode, scenarios, MetricsReport, Mode, Scenario};
use serde::Serialize;

/// Where each seed's scene comes from.
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum ScenarioSource {
    Fixed(Scenario),
    /// A fresh household layout per seed.
    Study,
}

impl ScenarioSource {
    /// `canonical`, `study`, or a path to a scenario JSON file.
    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "canonical" => Self::Fixed(scenarios::canonical()),
            "study" => Self::Study,
            path => Self::Fixed(Scenario::load(path).with_context(|| format!("loading {path}"))?),
        })
    }

    pub fn scenario(&self, seed: u64) -> Scenario {
        match self {
            Self::Fixed(s) => s.clone(),
            Self::Study => scenarios::study(seed),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub source: ScenarioSource,
    pub modes: Vec<Mode>,
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    pub seeds: Vec<u64>,
    pub operator: OperatorConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cell {
    pub mode: Mode,
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
}

impl Cell {
    pub fn file_stem(&self) -> String {
        format!(
            "{}_a{}_b{}_s{}",
            self.mode, self.alpha, self.beta, self.seed
        )
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CellResult {
    pub cell: Cell,
    pub status: Option<riso_core::Status>,
    pub metrics: Option<MetricsReport>,
    pub error: Option<String>,
}

/// Cells of the cross product. Human runs ignore the assistance settings, so
/// they appear once per seed with α = 1 and the scenario's own β.
pub fn cells(cfg: &BenchConfig) -> Vec<Cell> {
    let mut out = Vec::new();
    for &mode in &cfg.modes {
        for &seed in &cfg.seeds {
            match mode {
                Mode::Human => out.push(Cell {
                    mode,
                    alpha: 1.0,
                    beta: cfg.source.scenario(seed).assistance.beta,
                    seed,
                }),
                Mode::Shared => {
                    for &alpha in &cfg.alphas {
                        for &beta in &cfg.betas {
                            out.push(Cell {
                                mode,
                                alpha,
                                beta,
                                seed,
                            });
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn run_cell(cfg: &BenchConfig, cell: &Cell) -> CellResult {
    let mut scenario = cfg.source.scenario(cell.seed);
    if cell.mode == Mode::Shared {
        scenario.assistance.alpha = cell.alpha;
        scenario.assistance.beta = cell.beta;
    }
    let mut op = BoltzmannOperator::new(cfg.operator.clone(), &scenario, cell.seed);
    match run_episode(&scenario, &mut op, cell.mode, cell.seed, false) {
        Ok(o) => CellResult {
            cell: cell.clone(),
            status: Some(o.status),
            metrics: Some(o.metrics),
            error: None,
        },
        Err(e) => CellResult {
            cell: cell.clone(),
            status: None,
            metrics: None,
            error: Some(e.to_string()),
        },
    }
}

/// Runs every cell in parallel. Results come back in cell order.
pub fn bench(cfg: &BenchConfig) -> Vec<CellResult> {
    cells(cfg).par_iter().map(|c| run_cell(cfg, c)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub mode: Mode,
    pub alpha: f64,
    pub beta: f64,
    pub episodes: usize,
    pub failed: usize,
    pub success_rate: f64,
    pub grasp_time: f64,
    pub grasp_distance: f64,
    pub input_time: f64,
}

/// Means over seeds for each (mode, α, β).
pub fn aggregate(results: &[CellResult]) -> Vec<AggregateRow> {
    let mut rows: Vec<(AggregateRow, Vec<&MetricsReport>)> = Vec::new();
    for r in results {
        let key = (r.cell.mode, r.cell.alpha, r.cell.beta);
        let idx = match rows
            .iter()
            .position(|(row, _)| (row.mode, row.alpha, row.beta) == key)
        {
            Some(i) => i,
            None => {
                rows.push((
                    AggregateRow {
                        mode: key.0,
                        alpha: key.1,
                        beta: key.2,
                        episodes: 0,
                        failed: 0,
                        success_rate: 0.0,
                        grasp_time: 0.0,
                        grasp_distance: 0.0,
                        input_time: 0.0,
                    },
                    Vec::new(),
                ));
                rows.len() - 1
            }
        };
        let (row, ms) = &mut rows[idx];
        row.episodes += 1;
        match &r.metrics {
            Some(m) => ms.push(m),
            None => row.failed += 1,
        }
    }
    rows.into_iter()
        .map(|(mut row, ms)| {
            let n = ms.len().max(1) as f64;
            let mean = |f: fn(&MetricsReport) -> f64| ms.iter().map(|m| f(m)).sum::<f64>() / n;
            row.success_rate = mean(|m| m.success_rate);
            row.grasp_time = mean(|m| m.grasp_time);
            row.grasp_distance = mean(|m| m.grasp_distance);
            row.input_time = mean(|m| m.input_time);
            row
        })
        .collect()
}

/// Writes one JSON document per cell and `aggregate.csv` into `dir`.
pub fn write_results(dir: &Path, results: &[CellResult]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for r in results {
        let path = dir.join(format!("{}.json", r.cell.file_stem()));
        std::fs::write(&path, serde_json::to_string_pretty(r)?)
            .with_context(|| path.display().to_string())?;
    }
    let mut w = csv::Writer::from_path(dir.join("aggregate.csv"))?;
    for row in aggregate(results) {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
