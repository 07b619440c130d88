use std::collections::BTreeMap;
use std::io::{self, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::world::{build_world, ConfigError, Policy, SimConfig, StepMetrics};

pub const CSV_HEADER: &str = "policy,rate,replication,step,migrations,cumulative_migrations,min_max_ratio";

/// Fractions of the population moved per minute.
pub const DEFAULT_RATES: [f64; 5] = [0.01, 0.02, 0.05, 0.10, 0.20];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// World parameters; `migration_rate` and `policy` are overridden.
    #[serde(flatten)]
    pub base: SimConfig,
    pub rates: Vec<f64>,
    pub replications: u32,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self { base: SimConfig::default(), rates: DEFAULT_RATES.to_vec(), replications: 20 }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("no migration rates given")]
    NoRates,
    #[error("replications must be positive")]
    NoReplications,
    #[error("bad config: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub policy: Policy,
    pub rate: f64,
    pub replication: u32,
    pub step: usize,
    pub migrations: u64,
    pub cumulative_migrations: u64,
    pub min_max_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub policy: Policy,
    pub rate: f64,
    pub step: usize,
    pub mean_cumulative: f64,
    pub std_cumulative: f64,
    pub mean_ratio: f64,
    pub std_ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub seed: u64,
    /// Sorted by policy, rate, replication, step.
    pub rows: Vec<Row>,
}

/// Independent stream for one replication.
pub fn replication_rng(seed: u64, replication: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replication as u64);
    rng
}

/// Runs both policies over one shared movement trace.
///
/// Returns per-step metrics (including `t = 0`) for with and without
/// regions, in that order.
pub fn run_replication(cfg: &SimConfig, rng: &mut ChaCha8Rng) -> Result<(Vec<StepMetrics>, Vec<StepMetrics>), ConfigError> {
    let mut with = build_world(&SimConfig { policy: Policy::WithRegions, ..cfg.clone() }, &mut rng.clone())?;
    let mut without = build_world(&SimConfig { policy: Policy::WithoutRegions, ..cfg.clone() }, rng)?;
    let count = cfg.moves_per_step();
    let mut a = vec![with.metrics(0)];
    let mut b = vec![without.metrics(0)];
    for _ in 0..cfg.steps {
        let moves = without.draw_moves(rng, count);
        a.push(with.apply_moves(&moves));
        b.push(without.apply_moves(&moves));
    }
    Ok((a, b))
}

/// One world under its configured policy, seeded from `cfg.seed`.
pub fn run_single(cfg: &SimConfig) -> Result<Vec<Row>, ConfigError> {
    let mut rng = replication_rng(cfg.seed, 0);
    let mut world = build_world(cfg, &mut rng)?;
    let mut metrics = vec![world.metrics(0)];
    for _ in 0..cfg.steps {
        metrics.push(world.step(&mut rng));
    }
    Ok(metrics
        .into_iter()
        .map(|m| Row {
            policy: cfg.policy,
            rate: cfg.migration_rate,
            replication: 0,
            step: m.t,
            migrations: m.migrations,
            cumulative_migrations: m.cumulative_migrations,
            min_max_ratio: m.min_max_ratio,
        })
        .collect())
}

pub fn run_experiment(cfg: &ExperimentConfig, seed: u64) -> Result<ExperimentResult, ExperimentError> {
    if cfg.rates.is_empty() {
        return Err(ExperimentError::NoRates);
    }
    if cfg.replications == 0 {
        return Err(ExperimentError::NoReplications);
    }
    for &rate in &cfg.rates {
        SimConfig { migration_rate: rate, ..cfg.base.clone() }.validate()?;
    }
    let jobs: Vec<(usize, u32)> = (0..cfg.rates.len()).flat_map(|r| (0..cfg.replications).map(move |k| (r, k))).collect();
    let runs = jobs
        .par_iter()
        .map(|&(r, k)| {
            let world = SimConfig { migration_rate: cfg.rates[r], seed, ..cfg.base.clone() };
            run_replication(&world, &mut replication_rng(seed, k)).map(|m| (r, k, m))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut rows = Vec::with_capacity(runs.len() * 2 * (cfg.base.steps + 1));
    for policy in Policy::BOTH {
        for (r, k, (with, without)) in &runs {
            let metrics = if policy == Policy::WithRegions { with } else { without };
            rows.extend(metrics.iter().map(|m| Row {
                policy,
                rate: cfg.rates[*r],
                replication: *k,
                step: m.t,
                migrations: m.migrations,
                cumulative_migrations: m.cumulative_migrations,
                min_max_ratio: m.min_max_ratio,
            }));
        }
    }
    Ok(ExperimentResult { config: cfg.clone(), seed, rows })
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

/// Mean and sample standard deviation across replications for every
/// (policy, rate, step).
pub fn summarize(result: &ExperimentResult) -> Vec<SummaryRow> {
    type Samples = (Vec<f64>, Vec<f64>);
    let mut groups: BTreeMap<(Policy, usize, usize), Samples> = BTreeMap::new();
    for row in &result.rows {
        let r = result.config.rates.iter().position(|&x| x == row.rate).expect("row rate comes from the config");
        let g = groups.entry((row.policy, r, row.step)).or_default();
        g.0.push(row.cumulative_migrations as f64);
        g.1.push(row.min_max_ratio);
    }
    groups
        .into_iter()
        .map(|((policy, r, step), (cum, ratio))| {
            let (mean_cumulative, std_cumulative) = mean_std(&cum);
            let (mean_ratio, std_ratio) = mean_std(&ratio);
            SummaryRow { policy, rate: result.config.rates[r], step, mean_cumulative, std_cumulative, mean_ratio, std_ratio }
        })
        .collect()
}

/// Mean final cumulative migrations with regions over without, per rate.
pub fn migration_ratio(result: &ExperimentResult) -> Vec<(f64, f64)> {
    let last = result.config.base.steps;
    let summary = summarize(result);
    let final_mean = |policy: Policy, rate: f64| {
        summary.iter().find(|s| s.policy == policy && s.rate == rate && s.step == last).map(|s| s.mean_cumulative).unwrap_or(0.0)
    };
    result
        .config
        .rates
        .iter()
        .map(|&rate| {
            let without = final_mean(Policy::WithoutRegions, rate);
            let ratio = if without == 0.0 { 0.0 } else { final_mean(Policy::WithRegions, rate) / without };
            (rate, ratio)
        })
        .collect()
}

pub fn write_csv<W: Write>(rows: &[Row], out: W) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridShape {
    pub regions: usize,
    pub mecs_per_region: usize,
    pub mecs: usize,
    pub cells: usize,
}

/// Contents of the JSON file written next to the CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub seed: u64,
    pub capacities: Vec<u32>,
    pub grid: GridShape,
    pub users_per_capacity: u32,
    pub population: usize,
    pub steps: usize,
    pub rates: Vec<f64>,
    pub rate_unit: String,
    pub replications: u32,
    pub migration_ratio: Vec<RateRatio>,
}

/// Mean cumulative migrations with regions over without, at one rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateRatio {
    pub rate: f64,
    pub ratio: f64,
}

impl Metadata {
    pub fn of(result: &ExperimentResult) -> Self {
        let base = &result.config.base;
        let grid = super::HexGrid::new(base.regions_count, &base.capacities);
        Self {
            seed: result.seed,
            capacities: base.capacities.clone(),
            grid: GridShape {
                regions: base.regions_count,
                mecs_per_region: base.mecs_per_region,
                mecs: grid.mecs.len(),
                cells: grid.cell_count(),
            },
            users_per_capacity: base.users_per_capacity,
            population: base.population(),
            steps: base.steps,
            rates: result.config.rates.clone(),
            rate_unit: "fraction of population per minute".into(),
            replications: result.config.replications,
            migration_ratio: migration_ratio(result).into_iter().map(|(rate, ratio)| RateRatio { rate, ratio }).collect(),
        }
    }
}

pub fn write_metadata<W: Write>(result: &ExperimentResult, mut out: W) -> Result<(), ExperimentError> {
    serde_json::to_writer_pretty(&mut out, &Metadata::of(result))?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}
