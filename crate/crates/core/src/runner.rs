//! Sweep execution: expands a config file into runs, executes them across a
//! worker pool, and writes per-run and sweep-level outputs.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::config::{load_sweep, RunPoint};
use crate::engine::World;
use crate::metrics::{
    write_plot_csv, write_series_csv, RunMetrics, RunSummary, TerminationReason,
};
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

/// Fully resolved execution plan.
#[derive(Debug, Clone)]
pub struct Plan {
    pub config_path: PathBuf,
    pub out_dir: PathBuf,
    pub jobs: usize,
    pub seed_override: Option<u64>,
    pub format: OutputFormat,
    pub plot: bool,
    pub dry_run: bool,
    pub dump_topology: bool,
}

/// Writes a file atomically: temp file in the target directory, then rename.
fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), Error> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).map_err(|e| Error::Io(format!("{}: {e}", tmp.display())))?;
    fs::rename(&tmp, path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    Ok(())
}

fn run_one(plan: &Plan, point: &RunPoint) -> Result<RunSummary, Error> {
    let mut world = World::new(&point.config);
    if plan.dump_topology {
        let mut buf = Vec::new();
        world.overlay().dump(&mut buf)?;
        write_atomic(&plan.out_dir.join(format!("run_{:04}_topology.txt", point.run_id)), &buf)?;
    }
    let metrics = world.run_to_completion();
    write_run_outputs(plan, point, &metrics)?;
    Ok(RunSummary::new(point.run_id, &point.config, &metrics))
}

fn write_run_outputs(plan: &Plan, point: &RunPoint, metrics: &RunMetrics) -> Result<(), Error> {
    let id = point.run_id;
    match plan.format {
        OutputFormat::Csv => {
            let mut buf = Vec::new();
            write_series_csv(metrics, &mut buf)?;
            write_atomic(&plan.out_dir.join(format!("run_{id:04}.csv")), &buf)?;
        }
        OutputFormat::Json => {
            let buf = serde_json::to_vec_pretty(&metrics.series)
                .map_err(|e| Error::Io(e.to_string()))?;
            write_atomic(&plan.out_dir.join(format!("run_{id:04}.json")), &buf)?;
        }
    }
    let summary = RunSummary::new(id, &point.config, metrics);
    let buf = serde_json::to_vec_pretty(&summary).map_err(|e| Error::Io(e.to_string()))?;
    write_atomic(&plan.out_dir.join(format!("run_{id:04}_summary.json")), &buf)?;
    if plan.plot {
        let mut buf = Vec::new();
        write_plot_csv(metrics, &mut buf)?;
        write_atomic(&plan.out_dir.join(format!("run_{id:04}_plot.csv")), &buf)?;
    }
    Ok(())
}

/// Sweep-level summary table, one row per run, sorted by run id.
pub fn write_sweep_summary<W: Write>(summaries: &[RunSummary], w: &mut W) -> std::io::Result<()> {
    writeln!(
        w,
        "run_id,custody_row,custody_col,observed,theoretical,difference,termination"
    )?;
    for s in summaries {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            s.run_id,
            s.config.custody_row,
            s.config.custody_col,
            s.observed_delivered,
            s.theoretical_total,
            s.difference,
            s.termination.as_str()
        )?;
    }
    Ok(())
}

/// Expands the plan's config into its run list.
pub fn expand_plan(plan: &Plan) -> Result<Vec<RunPoint>, Error> {
    let mut spec = load_sweep(&plan.config_path)?;
    if let Some(seed) = plan.seed_override {
        spec.base_seed = seed;
    }
    Ok(spec.expand()?)
}

/// Runs every job with at most `plan.jobs` workers. Returns the summaries
/// sorted by run id; stalled or timed-out runs are flagged there, not fatal.
pub fn execute_plan(plan: &Plan) -> Result<Vec<RunSummary>, Error> {
    let runs = expand_plan(plan)?;

    if plan.dry_run {
        let mut out = std::io::stdout().lock();
        for r in &runs {
            writeln!(out, "run {:04}: {}", r.run_id, *r.config)
                .map_err(|e| Error::Io(e.to_string()))?;
        }
        return Ok(Vec::new());
    }

    fs::create_dir_all(&plan.out_dir)
        .map_err(|e| Error::Io(format!("{}: {e}", plan.out_dir.display())))?;

    let total = runs.len();
    let next = AtomicUsize::new(0);
    let done = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<RunSummary, Error>>>> =
        Mutex::new((0..total).map(|_| None).collect());

    let workers = plan.jobs.max(1).min(total.max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= total {
                    break;
                }
                let result = run_one(plan, &runs[i]);
                let finished = done.fetch_add(1, Ordering::SeqCst) + 1;
                match &result {
                    Ok(s) => eprintln!(
                        "[{finished}/{total}] run {:04} {} (custody {}/{})",
                        runs[i].run_id,
                        s.termination.as_str(),
                        runs[i].config.custody_row,
                        runs[i].config.custody_col
                    ),
                    Err(e) => eprintln!("[{finished}/{total}] run {:04} failed: {e}", runs[i].run_id),
                }
                results.lock().unwrap()[i] = Some(result);
            });
        }
    });

    let mut summaries = Vec::with_capacity(total);
    for slot in results.into_inner().unwrap() {
        summaries.push(slot.expect("worker completed")?);
    }
    summaries.sort_by_key(|s| s.run_id);

    let mut buf = Vec::new();
    write_sweep_summary(&summaries, &mut buf)?;
    write_atomic(&plan.out_dir.join("summary.csv"), &buf)?;
    Ok(summaries)
}

/// True when any run finished without full delivery.
pub fn any_incomplete(summaries: &[RunSummary]) -> bool {
    summaries
        .iter()
        .any(|s| s.termination != TerminationReason::Complete)
}
