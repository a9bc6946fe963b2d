use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;

use capture_core::grm::{Column, ColumnParams};
use capture_core::harness::{
    build_controller, calibrate, compare_report, load_scenario, load_toml, run_experiment, write_summary_csv,
    CalibrationConfig, EncodeJob, ExperimentMatrix, RlJob, SurrogateJob,
};
use capture_core::plant::{compute_metrics, run_closed_loop};
use capture_core::Result;

#[derive(Parser)]
#[command(name = "capture", version, about = "Twin-column capture simulation and switching control")]
struct Cli {
    /// TOML file for the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed list or base seed of the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Parallel worker threads.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fit the capacity scale to the target breakthrough step and write column.toml.
    Calibrate {
        /// Seed parameter file; the uncalibrated built-in set when absent.
        #[arg(long)]
        seed_params: Option<PathBuf>,
    },
    /// Run one scenario for each of its seeds.
    Simulate,
    /// Generate open-loop data and train the ReLU surrogate.
    TrainSurrogate,
    /// Train PPO policies and keep the best seed.
    TrainRl,
    /// Write the surrogate EMPC problem as an LP file.
    EncodeMilp,
    /// Run an experiment matrix.
    Experiment,
    /// Summarize result tables.
    Report { tables: Vec<PathBuf> },
}

fn config_or_default<T>(cli: &Cli, load: impl Fn(&Path) -> Result<T>) -> Result<T>
where
    T: Default,
{
    match &cli.config {
        Some(p) => load(p),
        None => Ok(T::default()),
    }
}

fn parent(p: &Path) -> &Path {
    p.parent().unwrap_or(Path::new("."))
}

fn run(cli: &Cli) -> Result<()> {
    fs::create_dir_all(&cli.out)?;
    match &cli.cmd {
        Cmd::Calibrate { seed_params } => {
            let cfg: CalibrationConfig = config_or_default(cli, load_toml)?;
            let seed = match seed_params {
                Some(p) => ColumnParams::load(p)?,
                None => ColumnParams::uncalibrated(),
            };
            let cal = calibrate(&seed, &cfg)?;
            let path = cli.out.join("column.toml");
            cal.params.save(&path)?;
            println!(
                "scale {} (interval {:.6}..{:.6}), breakthrough step {}, wrote {}",
                cal.scale,
                cal.interval.0,
                cal.interval.1,
                cal.breakthrough_step,
                path.display()
            );
        }
        Cmd::Simulate => {
            let mut scenario = match &cli.config {
                Some(p) => load_scenario(p)?,
                None => Default::default(),
            };
            if let Some(s) = cli.seed {
                scenario.seeds = vec![s];
            }
            let column = Column::new(scenario.column_params()?)?;
            for &seed in &scenario.seeds {
                let mut controller = build_controller(&scenario.controller, &column, &scenario)?;
                let traj = run_closed_loop(&column, controller.as_mut(), &scenario.loop_config(seed))?;
                let path = cli.out.join(format!("{}_seed{seed}.csv", scenario.name));
                traj.write_csv(File::create(&path)?)?;
                let m = compute_metrics(&traj, scenario.weights.w_s, scenario.weights.w_d);
                println!(
                    "{} seed {seed}: PL {:.5} TC {:.5} switches {} at [{}]{}",
                    scenario.name,
                    m.pl,
                    m.tc,
                    m.switches,
                    m.switch_steps_cell(),
                    traj.failure.as_deref().map(|f| format!(" (stopped: {f})")).unwrap_or_default()
                );
            }
        }
        Cmd::TrainSurrogate => {
            let mut job: SurrogateJob = config_or_default(cli, load_toml)?;
            if let Some(p) = &cli.config {
                job.resolve_paths(parent(p));
            }
            if let Some(s) = cli.seed {
                job.excitation.seed = s;
                job.train.seed = s;
            }
            let (_, score) = job.run(&cli.out)?;
            println!(
                "test RMSE {:.4} mg/L ({:.2}% of c_F), {}-step rollout max error {:.4} mg/L ({:.2}% of c_F)",
                score.test_rmse,
                100.0 * score.test_rmse / score.feed,
                job.rollout_horizon,
                score.rollout_max_error,
                100.0 * score.rollout_max_error / score.feed
            );
        }
        Cmd::TrainRl => {
            let mut job: RlJob = config_or_default(cli, load_toml)?;
            if let Some(p) = &cli.config {
                job.resolve_paths(parent(p));
            }
            let (_, scores) = job.run(cli.seed.unwrap_or(0), &cli.out)?;
            for (seed, tc) in scores {
                println!("seed {seed}: TC {tc:.5}");
            }
        }
        Cmd::EncodeMilp => {
            let mut job: EncodeJob = config_or_default(cli, load_toml)?;
            match &cli.config {
                Some(p) => job.resolve_paths(parent(p)),
                None => job.net = cli.out.join("net.json"),
            }
            if let Some(s) = cli.seed {
                job.seed = s;
            }
            let report = job.run(&cli.out)?;
            println!(
                "verified {}/{} samples (feasible {}, pinned {}), wrote {}",
                report.passed,
                report.samples,
                report.feasible,
                report.pinned,
                cli.out.join("problem.lp").display()
            );
            for f in &report.failures {
                println!("  {f}");
            }
        }
        Cmd::Experiment => {
            let Some(path) = &cli.config else {
                return Err(capture_core::Error::InvalidParam {
                    field: "--config".into(),
                    reason: "experiment needs a matrix file".into(),
                });
            };
            let mut matrix = ExperimentMatrix::load(path)?;
            if let Some(s) = cli.seed {
                matrix.template.seeds = vec![s];
            }
            let result = run_experiment(&matrix, cli.workers)?;
            let rows = cli.out.join(format!("{}.csv", matrix.name));
            result.write_csv(File::create(&rows)?)?;
            let summary = cli.out.join(format!("{}_summary.csv", matrix.name));
            write_summary_csv(&result.summarize(), File::create(&summary)?)?;
            info!("wrote {} and {}", rows.display(), summary.display());
            print!("{}", compare_report(&[rows])?);
        }
        Cmd::Report { tables } => {
            let text = compare_report(tables)?;
            fs::write(cli.out.join("report.md"), &text)?;
            print!("{text}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
