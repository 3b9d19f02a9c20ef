//! Experiment runner behind the `risbeam` binary: loads a scenario, runs one
//! optimizer and writes the beam pattern, RIS state and a JSON report.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use ris_beam::ao::{optimize_uacp, AoOptions, PrecoderUpdate, Solution, StopReason};
use ris_beam::channel::{assemble_channels, ChannelSet};
use ris_beam::discrete::{greedy_uadp, GreedyOptions};
use ris_beam::neural::{encode_input, infer, noisy_angles, train, AngleEncoding, TrainOptions};
use ris_beam::objective::{mask_constraints, max_mask_power, rates};
use ris_beam::pattern::{beam_pattern, default_grid, top_peaks, PatternPoint};
use ris_beam::scene::{build_geometry, Scenario};
use ris_beam::{watts_to_dbm, BeamError};

pub const DEFAULT_BANDWIDTH_HZ: f64 = 10e6;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("unknown method '{0}' (expected uacp, uacp-mask, uadp or nn)")]
    UnknownMethod(String),
    #[error("bad size '{0}' (expected ROWSxCOLS)")]
    BadSize(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Beam(#[from] BeamError),
    #[error("optimization failed: {}", .0.error.as_deref().unwrap_or("unknown"))]
    Failed(Box<RunReport>),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    /// 2 for usage problems, 1 for runs that started and failed.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::UnknownMethod(_) | CliError::BadSize(_) | CliError::Config(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Uacp,
    UacpMask,
    Uadp,
    Nn,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Uacp, Method::UacpMask, Method::Uadp, Method::Nn];

    pub fn enforces_mask(self) -> bool {
        !matches!(self, Method::Uacp)
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Uacp => "uacp",
            Method::UacpMask => "uacp_mask",
            Method::Uadp => "uadp",
            Method::Nn => "nn",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "uacp" => Ok(Method::Uacp),
            "uacp_mask" => Ok(Method::UacpMask),
            "uadp" => Ok(Method::Uadp),
            "nn" => Ok(Method::Nn),
            _ => Err(CliError::UnknownMethod(s.to_string())),
        }
    }
}

/// Everything one run needs besides the scenario itself.
#[derive(Clone, Debug)]
pub struct RunOptions {
    pub method: Method,
    pub seed: Option<u64>,
    pub sweep_grid_deg: f64,
    pub bandwidth_hz: f64,
    /// Upper end of the uniform offset added to the network's input angles.
    pub angle_noise_deg: Option<f64>,
    /// Record wall-clock time; off by default so reports are reproducible byte for byte.
    pub timing: bool,
    pub precoder_update: PrecoderUpdate,
    pub tie_break: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        let ao = AoOptions::default();
        Self {
            method: Method::Uacp,
            seed: None,
            sweep_grid_deg: 0.5,
            bandwidth_hz: DEFAULT_BANDWIDTH_HZ,
            angle_noise_deg: None,
            timing: false,
            precoder_update: ao.precoder_update,
            tie_break: ao.tie_break,
        }
    }
}

impl RunOptions {
    fn ao(&self, mask_enabled: bool) -> AoOptions {
        AoOptions {
            mask_enabled,
            tie_break: self.tie_break,
            precoder_update: self.precoder_update,
            ..AoOptions::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub angle_deg: f64,
    pub power_dbm: f64,
}

/// Summary written to `report.json`. Field order is the key order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: Method,
    pub seed: u64,
    pub min_rate_bits: f64,
    pub min_rate_mbps: f64,
    pub per_receiver_rates: Vec<f64>,
    pub per_receiver_mbps: Vec<f64>,
    pub bandwidth_hz: f64,
    pub iterations: usize,
    pub stop: Option<StopReason>,
    pub objective_trace: Vec<f64>,
    pub wall_time_s: f64,
    pub total_power_w: f64,
    pub mask_enforced: bool,
    pub max_mask_power_dbm: f64,
    pub peaks: Vec<Peak>,
    pub error: Option<String>,
    pub config_echo: Scenario,
}

impl RunReport {
    fn failed(method: Method, s: &Scenario, bandwidth_hz: f64, err: &BeamError) -> Self {
        Self {
            method,
            seed: s.seed,
            min_rate_bits: 0.0,
            min_rate_mbps: 0.0,
            per_receiver_rates: vec![],
            per_receiver_mbps: vec![],
            bandwidth_hz,
            iterations: 0,
            stop: None,
            objective_trace: vec![],
            wall_time_s: 0.0,
            total_power_w: 0.0,
            mask_enforced: method.enforces_mask(),
            max_mask_power_dbm: watts_to_dbm(0.0),
            peaks: vec![],
            error: Some(err.to_string()),
            config_echo: s.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String, CliError> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }
}

/// Result of one run kept in memory: the report plus what the files are made of.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub report: RunReport,
    pub solution: Solution,
    pub pattern: Vec<PatternPoint>,
}

pub fn load_scenario(config: Option<&Path>, seed: Option<u64>) -> Result<Scenario, CliError> {
    let mut s = match config {
        Some(p) => Scenario::from_path(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?,
        None => Scenario::reference(),
    };
    if let Some(seed) = seed {
        s.seed = seed;
    }
    s.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(s)
}

fn solve(s: &Scenario, cs: &ChannelSet, opts: &RunOptions) -> Result<Solution, BeamError> {
    match opts.method {
        Method::Uacp => optimize_uacp(s, cs, &opts.ao(false)),
        Method::UacpMask => optimize_uacp(s, cs, &opts.ao(true)),
        Method::Uadp => greedy_uadp(
            s,
            cs,
            &GreedyOptions {
                levels: s.phase_levels,
                ao: opts.ao(true),
                ..GreedyOptions::default()
            },
        ),
        Method::Nn => {
            let train_opts = TrainOptions {
                seed: s.seed,
                encoding: AngleEncoding::from_scenario(s),
                ..TrainOptions::default()
            };
            let (params, mut sol) = train(s, cs, &train_opts)?;
            if let Some(max_deg) = opts.angle_noise_deg {
                // Trained on the true angles, evaluated on perturbed inputs.
                let (inc, refs) = noisy_angles(s, max_deg, s.seed, &train_opts.encoding);
                info!("nn inputs with noise: incidence {inc:.4}, reflections {refs:?}");
                let x = encode_input(inc, &refs, &train_opts.encoding)?;
                let (theta, f) = infer(&params, &x, cs, s, train_opts.mask_enabled)?;
                sol.rates = rates(cs, &theta, &f, s.sigma2_w)?;
                sol.theta = theta;
                sol.f = f;
            }
            Ok(sol)
        }
    }
}

/// Runs one method on a scenario without touching the file system.
pub fn run_scenario(s: &Scenario, opts: &RunOptions) -> Result<RunOutcome, CliError> {
    let started = Instant::now();
    let cs = assemble_channels(s, &build_geometry(s)?);
    let solution = match solve(s, &cs, opts) {
        Ok(sol) => sol,
        Err(e @ (BeamError::Infeasible(_) | BeamError::Solver { .. } | BeamError::NonFinite(_))) => {
            return Err(CliError::Failed(Box::new(RunReport::failed(opts.method, s, opts.bandwidth_hz, &e))));
        }
        Err(e) => return Err(e.into()),
    };
    let grid = if opts.sweep_grid_deg == 0.5 {
        default_grid(0.5)
    } else {
        ris_beam::pattern::angle_grid(-ris_beam::pattern::EDGE_DEG, ris_beam::pattern::EDGE_DEG, opts.sweep_grid_deg)
    };
    let pattern = beam_pattern(&cs, &solution.theta, &solution.f, &grid);
    let mask_angles = s.mask_spec().grid();
    let mask_peak = max_mask_power(&solution.theta, &mask_constraints(&cs, &solution.f, &mask_angles));
    let mbps = |r: f64| r * opts.bandwidth_hz / 1e6;
    let min_rate = solution.min_rate();
    let report = RunReport {
        method: opts.method,
        seed: s.seed,
        min_rate_bits: min_rate,
        min_rate_mbps: mbps(min_rate),
        per_receiver_rates: solution.rates.clone(),
        per_receiver_mbps: solution.rates.iter().map(|&r| mbps(r)).collect(),
        bandwidth_hz: opts.bandwidth_hz,
        iterations: solution.iterations,
        stop: Some(solution.stop),
        objective_trace: solution.objective_trace.clone(),
        wall_time_s: if opts.timing { started.elapsed().as_secs_f64() } else { 0.0 },
        total_power_w: solution.total_power(),
        mask_enforced: opts.method.enforces_mask(),
        max_mask_power_dbm: watts_to_dbm(mask_peak),
        peaks: top_peaks(&pattern, s.n_receivers())
            .iter()
            .map(|p| Peak {
                angle_deg: p.angle_deg,
                power_dbm: p.power_dbm(),
            })
            .collect(),
        error: None,
        config_echo: s.clone(),
    };
    Ok(RunOutcome {
        report,
        solution,
        pattern,
    })
}

pub fn write_pattern_csv<W: Write>(w: W, pattern: &[PatternPoint]) -> Result<(), CliError> {
    let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    out.write_record(["angle_deg", "power_w", "power_dbm"])?;
    for p in pattern {
        out.write_record([p.angle_deg.to_string(), format!("{:e}", p.power_w), p.power_dbm().to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// One row per element, row-major over the surface.
pub fn write_ris_state_csv<W: Write>(w: W, s: &Scenario, sol: &Solution) -> Result<(), CliError> {
    let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    out.write_record(["element", "row", "col", "re", "im", "amplitude", "phase_rad"])?;
    for (n, t) in sol.theta.iter().enumerate() {
        let phase = t.arg().rem_euclid(std::f64::consts::TAU);
        out.write_record([
            n.to_string(),
            (n / s.ris_cols).to_string(),
            (n % s.ris_cols).to_string(),
            t.re.to_string(),
            t.im.to_string(),
            t.norm().to_string(),
            phase.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Runs and writes `beam_pattern.csv`, `ris_state.csv` and `report.json`
/// into `out_dir`. A failed optimization still writes its report.
pub fn run(config: Option<&Path>, out_dir: &Path, opts: &RunOptions) -> Result<RunReport, CliError> {
    let s = load_scenario(config, opts.seed)?;
    fs::create_dir_all(out_dir)?;
    match run_scenario(&s, opts) {
        Ok(outcome) => {
            write_pattern_csv(fs::File::create(out_dir.join("beam_pattern.csv"))?, &outcome.pattern)?;
            write_ris_state_csv(fs::File::create(out_dir.join("ris_state.csv"))?, &s, &outcome.solution)?;
            fs::write(out_dir.join("report.json"), outcome.report.to_json()?)?;
            Ok(outcome.report)
        }
        Err(CliError::Failed(report)) => {
            fs::write(out_dir.join("report.json"), report.to_json()?)?;
            Err(CliError::Failed(report))
        }
        Err(e) => Err(e),
    }
}

pub fn parse_size(text: &str) -> Result<(usize, usize), CliError> {
    let bad = || CliError::BadSize(text.to_string());
    let (r, c) = text.trim().split_once(['x', 'X']).ok_or_else(bad)?;
    let r: usize = r.parse().map_err(|_| bad())?;
    let c: usize = c.parse().map_err(|_| bad())?;
    if r == 0 || c == 0 {
        return Err(bad());
    }
    Ok((r, c))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub rows: usize,
    pub cols: usize,
    pub n_ris: usize,
    pub method: Method,
    pub min_rate_bits: f64,
    pub min_rate_mbps: f64,
    pub error: Option<String>,
}

/// Min-rate per RIS size and method. Cells run in parallel; a failed cell is
/// recorded and the rest continue. Rows come back in size-major order.
pub fn rate_vs_ris_size(base: &Scenario, sizes: &[(usize, usize)], methods: &[Method], opts: &RunOptions) -> Vec<SweepRow> {
    let cells: Vec<((usize, usize), Method)> = sizes.iter().flat_map(|&sz| methods.iter().map(move |&m| (sz, m))).collect();
    cells
        .par_iter()
        .map(|&((rows, cols), method)| {
            let mut s = base.clone();
            s.ris_rows = rows;
            s.ris_cols = cols;
            let cell_opts = RunOptions {
                method,
                ..opts.clone()
            };
            let (rate, error) = match run_scenario(&s, &cell_opts) {
                Ok(o) => (o.report.min_rate_bits, None),
                Err(CliError::Failed(r)) => (0.0, r.error.clone()),
                Err(e) => (0.0, Some(e.to_string())),
            };
            SweepRow {
                rows,
                cols,
                n_ris: rows * cols,
                method,
                min_rate_bits: rate,
                min_rate_mbps: rate * opts.bandwidth_hz / 1e6,
                error,
            }
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(w: W, rows: &[SweepRow]) -> Result<(), CliError> {
    let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    out.write_record(["rows", "cols", "n_ris", "method", "min_rate_bits", "min_rate_mbps", "error"])?;
    for r in rows {
        out.write_record([
            r.rows.to_string(),
            r.cols.to_string(),
            r.n_ris.to_string(),
            r.method.to_string(),
            r.min_rate_bits.to_string(),
            r.min_rate_mbps.to_string(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Sweep entry point for the binary: writes `rate_vs_ris_size.csv`.
pub fn sweep(
    config: Option<&Path>,
    out_dir: &Path,
    sizes: &[(usize, usize)],
    methods: &[Method],
    opts: &RunOptions,
) -> Result<Vec<SweepRow>, CliError> {
    let s = load_scenario(config, opts.seed)?;
    let rows = rate_vs_ris_size(&s, sizes, methods, opts);
    fs::create_dir_all(out_dir)?;
    write_sweep_csv(fs::File::create(out_dir.join("rate_vs_ris_size.csv"))?, &rows)?;
    Ok(rows)
}

/// Output directory default: `out/<method>`.
pub fn default_out_dir(method: Method) -> PathBuf {
    PathBuf::from("out").join(method.name())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_parse() {
        assert_eq!("uacp-mask".parse::<Method>().unwrap(), Method::UacpMask);
        assert_eq!("UACP_MASK".parse::<Method>().unwrap(), Method::UacpMask);
        assert_eq!("nn".parse::<Method>().unwrap(), Method::Nn);
        let err = "sdp".parse::<Method>().unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn sizes_parse() {
        assert_eq!(parse_size("12x12").unwrap(), (12, 12));
        assert_eq!(parse_size(" 4X8").unwrap(), (4, 8));
        assert!(parse_size("0x4").is_err());
        assert!(parse_size("12").is_err());
    }

    #[test]
    fn empty_sweep_is_empty() {
        let rows = rate_vs_ris_size(&Scenario::reference(), &[], &[Method::Uacp], &RunOptions::default());
        assert!(rows.is_empty());
    }

    #[test]
    fn pattern_csv_layout() {
        let mut buf = Vec::new();
        let pts = [PatternPoint {
            angle_deg: 30.0,
            power_w: 1.0,
        }];
        write_pattern_csv(&mut buf, &pts).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "angle_deg,power_w,power_dbm\n30,1e0,30\n");
    }
}
