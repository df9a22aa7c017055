use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use twinbridge::bridge::Tier;
use twinbridge::experiment::{
    compare, delta_csv, parse_report_csv, run_mmcf, run_scenario, sweep_agents, sweep_csv, Mode, RunReport,
};
use twinbridge::mmcf::rows_to_csv;
use twinbridge::scenario::Scenario;

#[derive(Parser)]
#[command(name = "twinbridge", version, about = "Run bridge and twin-sync scenarios on a simulated network")]
struct Cli {
    /// Override the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for CSV artifacts.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Use the FIFO bridge (no priorities, replay or discovery).
    #[arg(long, global = true)]
    baseline: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario and write its reports.
    Run { scenario: PathBuf },
    /// Per-metric deltas between two report CSVs of the same scenario and seed.
    Compare { a: PathBuf, b: PathBuf },
    /// Run prioritized and FIFO bridges for several agent counts.
    Sweep {
        #[arg(long, value_delimiter = ',', required = true)]
        counts: Vec<usize>,
        /// Number of consecutive seeds per count, starting at the scenario seed.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        scenario: PathBuf,
    },
    /// Search the scenario's configuration space for the lowest MMCF.
    MmcfOpt { scenario: PathBuf },
}

fn load(path: &Path, seed: Option<u64>) -> Result<Scenario, String> {
    let mut sc = Scenario::load(path).map_err(|e| format!("{}: {e}", path.display()))?;
    if let Some(s) = seed {
        sc.seed = s;
    }
    Ok(sc)
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), String> {
    fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| format!("{}: {e}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn write_report(dir: &Path, r: &RunReport) -> Result<(), String> {
    for (name, contents) in r.artifacts() {
        write(dir, &name, &contents)?;
    }
    Ok(())
}

fn print_tiers(r: &RunReport) {
    println!("{} seed {} ({})", r.scenario, r.seed, r.mode.name());
    println!("  {:<9} {:>8} {:>9} {:>8} {:>8} {:>9} {:>9}", "tier", "sent", "delivered", "dropped", "pending", "p50 ms", "p95 ms");
    for tier in Tier::ALL {
        let f = r.tier(tier);
        let l = f.latency();
        println!(
            "  {:<9} {:>8} {:>9} {:>8} {:>8} {:>9.1} {:>9.1}",
            tier.name(),
            f.sent,
            f.delivered,
            f.dropped,
            f.pending,
            l.p50 * 1e3,
            l.p95 * 1e3
        );
    }
    if let Some(s) = &r.sync {
        println!(
            "  sync: max |e_pos| after 10 s {:.4} m, max |e_rot| {:.3} deg, bound violations {}",
            s.max_pos_after(10.0),
            s.max_rot_after(10.0).to_degrees(),
            s.bound_violations
        );
    }
}

fn real_main(cli: Cli) -> Result<(), String> {
    let mode = if cli.baseline { Mode::Baseline } else { Mode::Prioritized };
    match cli.cmd {
        Cmd::Run { scenario } => {
            let sc = load(&scenario, cli.seed)?;
            let r = run_scenario(&sc, mode).map_err(|e| e.to_string())?;
            print_tiers(&r);
            write_report(&cli.out_dir, &r)
        }
        Cmd::Compare { a, b } => {
            let read = |p: &Path| {
                let text = fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
                parse_report_csv(&text).map_err(|e| format!("{}: {e}", p.display()))
            };
            let (ta, tb) = (read(&a)?, read(&b)?);
            let rows = compare(&ta, &tb).map_err(|e| e.to_string())?;
            let csv = delta_csv(&rows);
            print!("{csv}");
            write(&cli.out_dir, &format!("{}.{}-vs-{}.compare.csv", ta.scenario, ta.mode, tb.mode), &csv)
        }
        Cmd::Sweep { counts, seeds, scenario } => {
            let sc = load(&scenario, cli.seed)?;
            let seed_list: Vec<u64> = (0..seeds.max(1)).map(|k| sc.seed + k).collect();
            let (rows, reports) = sweep_agents(&sc, &counts, &seed_list).map_err(|e| e.to_string())?;
            for (prio, base) in &reports {
                let dir = cli.out_dir.join(format!("seed{}", prio.seed));
                write_report(&dir, prio)?;
                write_report(&dir, base)?;
            }
            println!("agents seed  p95 crit prio ms  p95 crit fifo ms  improvement %");
            for r in &rows {
                println!(
                    "{:>6} {:>4} {:>17.1} {:>17.1} {:>14.1}",
                    r.agents,
                    r.seed,
                    r.p95_critical_prioritized * 1e3,
                    r.p95_critical_baseline * 1e3,
                    r.improvement_pct()
                );
            }
            write(&cli.out_dir, &format!("{}.sweep.csv", sc.name), &sweep_csv(&rows))
        }
        Cmd::MmcfOpt { scenario } => {
            let sc = load(&scenario, cli.seed)?;
            let out = run_mmcf(&sc).map_err(|e| e.to_string())?;
            println!(
                "best {} cost {:.4} (median fixed {:.4}, {:.1}% lower; {} of {} configs evaluated)",
                out.result.best,
                out.result.cost,
                out.median_cost(),
                out.improvement_vs_median_pct(),
                out.result.evaluated,
                out.result.space_size
            );
            write(&cli.out_dir, &format!("{}.mmcf.csv", sc.name), &rows_to_csv(&out.rows))?;
            write(&cli.out_dir, &format!("{}.mmcf_summary.csv", sc.name), &out.summary_csv())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match real_main(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
