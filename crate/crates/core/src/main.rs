use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use icl_power::bench::{self, BenchError, Metric, MetricsRow, ScenarioConfig, SweepAxis};

#[derive(Parser)]
#[command(name = "icl-power", version, about = "Base-station power control experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write metrics, the effective config, and pools.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run the in-context policy next to its ablations.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Sweep one parameter, e.g. `network.min_rate_bps` or `examples`.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Re-emit a metrics file as sorted CSV or as an SVG line chart.
    Export {
        #[arg(long, value_enum)]
        format: Format,
        #[arg(long, default_value = "out/metrics.csv")]
        input: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, default_value = "mean_reward")]
        metric: Metric,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Svg,
}

fn main() -> ExitCode {
    match execute(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                BenchError::Invalid(_) | BenchError::Parse { .. } => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}

fn execute(command: Command) -> Result<(), BenchError> {
    match command {
        Command::Run { config, out } => {
            let cfg = ScenarioConfig::load(&config)?;
            let rows = bench::run_to_dir(&cfg, &out)?;
            summarize(&rows, cfg.schedule.episodes);
            println!("wrote {}", out.join("metrics.csv").display());
        }
        Command::Ablate { config, out } => {
            let cfg = ScenarioConfig::load(&config)?;
            cfg.validate()?;
            std::fs::create_dir_all(&out).map_err(|source| BenchError::Io { path: out.clone(), source })?;
            bench::write_effective_config(&cfg, &out)?;
            let backend = bench::Backend::for_scenario(&cfg, Some(&out.join("transcripts.ndjson")))?;
            let rows = bench::ablate(&cfg, &backend)?;
            bench::export_csv(&rows, &out.join("metrics.csv"))?;
            summarize(&rows, cfg.schedule.episodes);
            println!("wrote {}", out.join("metrics.csv").display());
        }
        Command::Sweep { config, param, values, out } => {
            let mut cfg = ScenarioConfig::load(&config)?;
            cfg.sweep = Some(SweepAxis { param, values });
            let rows = bench::run_to_dir(&cfg, &out)?;
            summarize(&rows, cfg.schedule.episodes);
            println!("wrote {}", out.join("metrics.csv").display());
        }
        Command::Export { format, input, output, metric } => {
            let rows = bench::read_csv(&input)?;
            let target = output.unwrap_or_else(|| default_output(&input, format, metric));
            match format {
                Format::Csv => bench::export_csv(&rows, &target)?,
                Format::Svg => bench::export_svg(&rows, metric, &target)?,
            }
            println!("wrote {}", target.display());
        }
    }
    Ok(())
}

fn default_output(input: &Path, format: Format, metric: Metric) -> PathBuf {
    match format {
        Format::Csv => input.with_file_name("metrics_sorted.csv"),
        Format::Svg => input.with_file_name(format!("{}.svg", metric.label())),
    }
}

/// Final-quarter means with standard errors across seeds.
fn summarize(rows: &[MetricsRow], episodes: usize) {
    let from = episodes - episodes / 4;
    let reward = bench::final_window(rows, from, Metric::MeanReward);
    let power = bench::final_window(rows, from, Metric::MeanPower);
    let quality = bench::final_window(rows, from, Metric::ServiceQuality);
    println!("final {} episodes, mean ± se over seeds:", episodes - from);
    for (key, values) in &reward {
        let (r, r_se) = bench::mean_se(values);
        let (p, _) = bench::mean_se(&power[key]);
        let (q, _) = bench::mean_se(&quality[key]);
        let sweep = key.1.map(|bits| format!(" @ {}", f64::from_bits(bits))).unwrap_or_default();
        println!("  {}{sweep}: reward {r:.4} ± {r_se:.4}, power {p:.3} W, service quality {q:.3}", key.0);
    }
}
