//! Full migration-rate sweep with 20 replications per rate. Writes
//! `sweep.csv` and `sweep.meta.json` to the temp directory and prints the
//! with/without migration ratio and the lowest mean min/max ratio.

use megw::sim::{migration_ratio, run_experiment, summarize, write_csv, write_metadata, ExperimentConfig, Policy};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ExperimentConfig::default();
    let start = std::time::Instant::now();
    let result = run_experiment(&cfg, 1)?;
    println!("{} rows in {:.1?}", result.rows.len(), start.elapsed());

    let summary = summarize(&result);
    for (rate, ratio) in migration_ratio(&result) {
        let floor =
            |p: Policy| summary.iter().filter(|s| s.policy == p && s.rate == rate).map(|s| s.mean_ratio).fold(f64::INFINITY, f64::min);
        println!(
            "rate {rate:>4}: migrations with/without = {ratio:.3}, min/max floor {:.3} vs {:.3}",
            floor(Policy::WithRegions),
            floor(Policy::WithoutRegions)
        );
    }

    let dir = std::env::temp_dir();
    write_csv(&result.rows, std::fs::File::create(dir.join("sweep.csv"))?)?;
    write_metadata(&result, std::fs::File::create(dir.join("sweep.meta.json"))?)?;
    println!("wrote {}", dir.join("sweep.csv").display());
    Ok(())
}
