use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use sonobench_cli::cfgfile::{self, FileConfig};
use sonobench_cli::runner::{
    self, evaluate_checkpoint, run_experiment, starvation_grid, RunRecord,
};
use sonobench_cli::{report, svg, synth};
use sonobench_core::split::stratified_split;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "sonobench",
    version,
    about = "Segmentation benchmark on frozen-backbone models: synthetic data, \
             training, starvation grids, and reports"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides every seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic ultrasound-like dataset and its manifest.
    Synth(Common),
    /// Write the patient-level split for the configured manifest.
    Split(Common),
    /// Train on the full training split and score the test split.
    Train(Common),
    /// Score a saved checkpoint on the configured test split.
    Eval(Common),
    /// Train once per configured fraction and build the retention table.
    Starve(Common),
    /// Recompute retention and capacity fits from saved run records.
    Analyze(Common),
    /// Render the results table and the standard plots from run records.
    Report(Common),
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Synth(c) => cmd_synth(&c),
        Command::Split(c) => cmd_split(&c),
        Command::Train(c) => cmd_train(&c),
        Command::Eval(c) => cmd_eval(&c),
        Command::Starve(c) => cmd_starve(&c),
        Command::Analyze(c) => cmd_analyze(&c),
        Command::Report(c) => cmd_report(&c),
    }
}

fn load(common: &Common) -> Result<FileConfig> {
    let mut cfg = cfgfile::load_config(&common.config)?;
    cfg.override_seed(common.seed);
    Ok(cfg)
}

fn cmd_synth(c: &Common) -> Result<()> {
    let cfg = load(c)?;
    let synth_cfg = cfg.require_synth()?;
    let manifest = synth::synth_generate(&synth_cfg, &c.out)?;
    println!(
        "wrote {} patients x {} frames to {}",
        synth_cfg.n_patients,
        synth_cfg.frames_per_patient,
        manifest.display()
    );
    Ok(())
}

fn cmd_split(c: &Common) -> Result<()> {
    let cfg = load(c)?;
    let exp = cfg.require_experiment()?;
    let manifest_path = cfg.require_manifest()?;
    let manifest = sonobench_core::data::load_manifest(&manifest_path)
        .map_err(|e| anyhow::anyhow!("cannot parse manifest {}: {e}", manifest_path.display()))?;
    let split = stratified_split(&manifest, exp.ratios, exp.seed)
        .map_err(|e| anyhow::anyhow!("splitting: {e}"))?;
    std::fs::create_dir_all(&c.out)?;
    let path = c.out.join("split.json");
    let mut body = serde_json::to_string_pretty(&split)?;
    body.push('\n');
    std::fs::write(&path, body)?;
    println!(
        "split {} patients into {}/{}/{} (train/val/test), wrote {}",
        manifest.patients().len(),
        split.train.len(),
        split.val.len(),
        split.test.len(),
        path.display()
    );
    Ok(())
}

fn cmd_train(c: &Common) -> Result<()> {
    let cfg = load(c)?;
    let exp = cfg.require_experiment()?;
    let manifest_path = cfg.require_manifest()?;
    let run = run_experiment(&exp, &manifest_path, &c.out, 1.0)?;
    println!(
        "run {} done in {:.1}s: test dice {:.4}, iou {:.4} over {} frames -> {}",
        run.summary.hash,
        run.wall_secs,
        run.summary.test.dice,
        run.summary.test.iou,
        run.summary.test_frames,
        run.dir.display()
    );
    Ok(())
}

fn cmd_eval(c: &Common) -> Result<()> {
    let cfg = load(c)?;
    let exp = cfg.require_experiment()?;
    let manifest_path = cfg.require_manifest()?;
    let checkpoint = cfg.require_checkpoint()?;
    let summary = evaluate_checkpoint(&exp, &manifest_path, &checkpoint, &c.out)?;
    println!(
        "checkpoint {} scored dice {:.4}, iou {:.4} on {} test frames",
        checkpoint.display(),
        summary.test.dice,
        summary.test.iou,
        summary.test_frames
    );
    Ok(())
}

fn cmd_starve(c: &Common) -> Result<()> {
    let cfg = load(c)?;
    let exp = cfg.require_experiment()?;
    let manifest_path = cfg.require_manifest()?;
    let grid = starvation_grid(&exp, &manifest_path, &c.out)?;
    for run in &grid.runs {
        println!(
            "fraction {:.2}: {} train patients, test dice {:.4}",
            run.record.fraction, run.summary.train_patients, run.summary.test.dice
        );
    }
    println!("wrote {} and {}", grid.records_path.display(), c.out.join("retention.csv").display());
    Ok(())
}

fn read_records(path: &Path) -> Result<Vec<RunRecord>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read records {}", path.display()))?;
    let records: Vec<RunRecord> = serde_json::from_str(&text)
        .with_context(|| format!("cannot parse records {}", path.display()))?;
    anyhow::ensure!(!records.is_empty(), "records file {} is empty", path.display());
    Ok(records)
}

fn cmd_analyze(c: &Common) -> Result<()> {
    let cfg = load(c)?;
    let records = read_records(&cfg.require_records()?)?;
    std::fs::create_dir_all(&c.out)?;

    let eff: Vec<_> = records.iter().map(|r| r.to_efficiency()).collect();
    let rows = sonobench_core::analysis::retention_table(&eff)
        .map_err(|e| anyhow::anyhow!("retention table: {e}"))?;
    let retention_path = c.out.join("retention.csv");
    std::fs::write(&retention_path, runner::retention_csv(&rows))?;
    println!("wrote {} ({} rows)", retention_path.display(), rows.len());

    match runner::scaling_fits(&records) {
        Ok(fits) => {
            let mut body = serde_json::to_string_pretty(&fits)?;
            body.push('\n');
            let fits_path = c.out.join("fits.json");
            std::fs::write(&fits_path, body)?;
            for fit in &fits {
                println!(
                    "resolution {}: slope {:.5}, R2 {:.4} over {} capacities",
                    fit.resolution, fit.slope, fit.r_squared, fit.points
                );
            }
        }
        Err(e) => eprintln!("skipping capacity fit: {e}"),
    }
    Ok(())
}

fn cmd_report(c: &Common) -> Result<()> {
    let cfg = load(c)?;
    let records = read_records(&cfg.require_records()?)?;
    std::fs::create_dir_all(&c.out)?;
    let table = report::report_table(&records)?;
    std::fs::write(c.out.join("report.csv"), table)?;
    println!("wrote {}", c.out.join("report.csv").display());
    for (name, result) in [
        ("scaling.svg", svg::scaling_plot(&records)),
        ("starvation.svg", svg::starvation_plot(&records)),
        ("alc.svg", svg::alc_plot(&records)),
    ] {
        match result {
            Ok(body) => {
                std::fs::write(c.out.join(name), body)?;
                println!("wrote {}", c.out.join(name).display());
            }
            Err(e) => eprintln!("skipping {name}: {e}"),
        }
    }
    Ok(())
}
