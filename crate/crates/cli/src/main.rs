use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::error;

use ris_beam::ao::PrecoderUpdate;
use ris_beam_cli::{default_out_dir, parse_size, run, sweep, CliError, Method, RunOptions, DEFAULT_BANDWIDTH_HZ};

#[derive(Parser, Debug)]
#[command(name = "risbeam", version, about = "Multi-beam RIS optimization under reradiation masks")]
#[command(args_conflicts_with_subcommands = true)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Min-rate versus RIS size for several methods; writes rate_vs_ris_size.csv.
    Sweep(SweepArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PrecoderArg {
    Joint,
    Sequential,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Scenario file (.json or .toml); the built-in reference scenario when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Bandwidth used only to convert bits/s/Hz to Mbps.
    #[arg(long = "bandwidth-hz", default_value_t = DEFAULT_BANDWIDTH_HZ)]
    bandwidth_hz: f64,
    #[arg(long = "precoder-update", value_enum, default_value = "joint")]
    precoder_update: PrecoderArg,
    /// Follow each max-min sub-problem with a pass that lifts the non-binding rates.
    #[arg(long = "tie-break")]
    tie_break: bool,
    /// Record wall-clock time in the report.
    #[arg(long)]
    timing: bool,
    #[arg(short, long)]
    verbose: bool,
}

#[derive(Args, Debug, Clone)]
struct RunArgs {
    /// One of uacp, uacp-mask, uadp, nn.
    #[arg(long, value_parser = parse_method, default_value = "uacp")]
    method: Method,
    /// Output directory; defaults to out/<method>.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Angle spacing of the exported beam pattern, degrees.
    #[arg(long = "sweep-grid", default_value_t = 0.5)]
    sweep_grid: f64,
    /// Add uniform [0, DEG] noise to the network's input angles.
    #[arg(long = "angle-noise-deg")]
    angle_noise_deg: Option<f64>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug, Clone)]
struct SweepArgs {
    /// Comma-separated RIS sizes.
    #[arg(long, value_delimiter = ',', default_value = "4x4,8x8,12x12")]
    sizes: Vec<String>,
    #[arg(long, value_delimiter = ',', value_parser = parse_method, default_value = "uacp,uacp-mask,uadp,nn")]
    methods: Vec<Method>,
    #[arg(long, default_value = "out/sweep")]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: CliError| e.to_string())
}

fn options(common: &Common, method: Method) -> RunOptions {
    RunOptions {
        method,
        seed: common.seed,
        bandwidth_hz: common.bandwidth_hz,
        timing: common.timing,
        tie_break: common.tie_break,
        precoder_update: match common.precoder_update {
            PrecoderArg::Joint => PrecoderUpdate::Joint,
            PrecoderArg::Sequential => PrecoderUpdate::Sequential,
        },
        ..RunOptions::default()
    }
}

fn init_logging(verbose: bool) {
    let level = if verbose { "debug" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Some(Command::Sweep(args)) => {
            init_logging(args.common.verbose);
            args.sizes
                .iter()
                .map(|s| parse_size(s))
                .collect::<Result<Vec<_>, _>>()
                .and_then(|sizes| {
                    let opts = options(&args.common, Method::Uacp);
                    sweep(args.common.config.as_deref(), &args.out, &sizes, &args.methods, &opts)
                })
                .map(|rows| {
                    for r in rows {
                        println!("{}x{} {:<10} min_rate={:.6e} bits/s/Hz", r.rows, r.cols, r.method, r.min_rate_bits);
                    }
                })
        }
        None => {
            let args = cli.run;
            init_logging(args.common.verbose);
            let opts = RunOptions {
                sweep_grid_deg: args.sweep_grid,
                angle_noise_deg: args.angle_noise_deg,
                ..options(&args.common, args.method)
            };
            let out = args.out.unwrap_or_else(|| default_out_dir(args.method));
            run(args.common.config.as_deref(), &out, &opts).map(|r| {
                println!(
                    "{}: min_rate={:.6e} bits/s/Hz ({:.4} Mbps) max_mask={:.3} dBm -> {}",
                    r.method,
                    r.min_rate_bits,
                    r.min_rate_mbps,
                    r.max_mask_power_dbm,
                    out.display()
                );
            })
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
