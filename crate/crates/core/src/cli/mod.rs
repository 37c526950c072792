//! Batch command layer behind the `riszf` binary.
//!
//! Every command first resolves its inputs (scenario, seed, sizes, modes)
//! into a [`Job`], writes that job as `manifest.json` and then executes it.
//! `--manifest <file>` skips resolution and executes the stored job, so a
//! rerun reproduces every artifact byte for byte.

mod verify;

pub use verify::{run_verify, Check, VerifyReport};

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::channel::{write_dump, Cascade, ChannelSet};
use crate::estimation::{cascade_block, design_pilots, simulate_uplink_ls, PilotFamily};
use crate::experiments::{
    cdf_and_outage, cdf_csv, records_csv, run_coverage, run_multi_ue, EstimationMode, MultiUeStudySpec, Status,
    SweepSpec,
};
use crate::optimizer::{optimize, OptimizerSettings};
use crate::performance::SnrForm;
use crate::precoder::spectral_report;
use crate::rng::derive_seed;
use crate::scenario::{parse_config_with_overrides, GridSpec, ScenarioConfig};
use crate::{CMatrix, Error, Result};

/// Environment variable read for the worker count when `--workers` is absent.
pub const WORKERS_ENV: &str = "RISZF_WORKERS";

/// Desk-scale grid resolution and RIS size.
pub const DESK_RESOLUTION_M: f64 = 6.0;
pub const DESK_NR: usize = 128;
/// Full-scale values selected by `--full`.
pub const FULL_RESOLUTION_M: f64 = 2.0;
pub const FULL_NR: usize = 1000;

#[derive(Debug, Parser)]
#[command(
    name = "riszf",
    version,
    about = "RIS-assisted zero-forcing MU-MISO downlink simulator"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,

    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Scenario TOML file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Preset name (NEAR, OUT, FAR, NEAR_NS, CUSTOM); overrides the file's preset.
    #[arg(long, global = true)]
    pub preset: Option<String>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// RIS element counts, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    pub nr: Vec<usize>,
    /// Total pilot slots across users.
    #[arg(long, global = true)]
    pub pilots: Option<usize>,
    /// Channel knowledge: pe, ie (pilot simulation) or ie-fast (injected error); default pe.
    #[arg(long, global = true, value_parser = parse_mode)]
    pub mode: Option<EstimationMode>,
    /// Full-scale grid and RIS size.
    #[arg(long, global = true)]
    pub full: bool,
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads; defaults to $RISZF_WORKERS, then all cores.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Config override `key=value`; repeatable, applied in order.
    #[arg(long = "set", global = true)]
    pub overrides: Vec<String>,
    /// Re-run the job stored in a manifest.
    #[arg(long, global = true, conflicts_with_all = ["config", "preset", "overrides"])]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// One RIS optimization at the probe placement; writes trace and solution.
    Optimize {
        #[arg(long, default_value_t = 1)]
        multi_start: usize,
        #[arg(long)]
        max_iter: Option<usize>,
    },
    /// Grid sweep with outage table and CDFs.
    Coverage(SweepArgs),
    /// Monte Carlo validation of the LS estimator at the probe placement.
    Estimate {
        #[arg(long, default_value_t = 200)]
        trials: usize,
        #[arg(long, default_value = "dft", value_parser = parse_family)]
        pilot_family: PilotFamily,
    },
    /// Bound against Monte Carlo BER at the probe placement.
    Ber(SweepArgs),
    /// User-load study over K users.
    Multiue {
        #[arg(long, value_delimiter = ',', default_value = "2,3,4")]
        users: Vec<usize>,
        #[arg(long, default_value_t = 6)]
        antennas: usize,
        /// Positions per user count; defaults to 120, or 1200 with --full.
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long, default_value_t = 0.01)]
        threshold: f64,
        #[arg(long, default_value_t = 1)]
        pilot_factor: usize,
    },
    /// Gradient, power-bound, estimator and BER oracle checks.
    Verify,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, default_value_t = 4)]
    pub modulation: usize,
    /// Monte Carlo symbols per user and point (coverage default 0, ber default 10⁶).
    #[arg(long)]
    pub mc_symbols: Option<usize>,
    /// Pilot matrix: dft or hadamard.
    #[arg(long, default_value = "dft", value_parser = parse_family)]
    pub pilot_family: PilotFamily,
    /// SNR behind the rate: nominal (as in the BER bound) or printed.
    #[arg(long, default_value = "nominal", value_parser = parse_snr_form)]
    pub snr_form: SnrForm,
    #[arg(long, default_value_t = 1)]
    pub multi_start: usize,
}

fn parse_mode(s: &str) -> std::result::Result<EstimationMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_family(s: &str) -> std::result::Result<PilotFamily, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_snr_form(s: &str) -> std::result::Result<SnrForm, String> {
    match s {
        "nominal" => Ok(SnrForm::Nominal),
        "printed" => Ok(SnrForm::Printed),
        _ => Err(format!("unknown SNR form {s:?} (nominal|printed)")),
    }
}

/// A fully resolved unit of work.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case", deny_unknown_fields)]
pub enum Job {
    Optimize {
        scenario: ScenarioConfig,
        seed: u64,
        optimizer: OptimizerSettings,
    },
    Coverage {
        sweep: SweepSpec,
    },
    Estimate {
        scenario: ScenarioConfig,
        seed: u64,
        pilots: usize,
        trials: usize,
        pilot_family: PilotFamily,
    },
    Ber {
        sweep: SweepSpec,
    },
    Multiue {
        scenario: ScenarioConfig,
        study: MultiUeStudySpec,
    },
    Verify {
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub job: Job,
}

impl Manifest {
    pub fn new(job: Job) -> Self {
        Manifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            job,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}

pub fn parse_manifest(text: &str) -> Result<Manifest> {
    let m: Manifest = serde_json::from_str(text).map_err(|e| Error::Parse(format!("manifest: {e}")))?;
    if m.tool != env!("CARGO_PKG_NAME") {
        return Err(Error::Parse(format!("manifest written by {:?}", m.tool)));
    }
    Ok(m)
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } => 1,
        Error::Config(_) | Error::Parse(_) | Error::Identifiability { .. } | Error::Dimension(_) => 2,
        Error::Geometry(_)
        | Error::ModelRange { .. }
        | Error::SingularChannel { .. }
        | Error::NonConvergence { .. } => 3,
        Error::Verification(_) => 4,
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

/// Resolves the scenario from file, preset, scale defaults and overrides.
pub fn resolve_scenario(g: &GlobalArgs) -> Result<ScenarioConfig> {
    let text = match &g.config {
        Some(p) => read(p)?,
        None => String::new(),
    };
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
    let mut overrides = Vec::new();
    let preset = g
        .preset
        .clone()
        .or_else(|| (!table.contains_key("preset")).then(|| "NEAR".to_string()));
    if let Some(p) = preset {
        overrides.push(format!("preset=\"{p}\""));
    }
    if g.full || !table.contains_key("grid_resolution_m") {
        let res = if g.full { FULL_RESOLUTION_M } else { DESK_RESOLUTION_M };
        overrides.push(format!("grid_resolution_m={res:?}"));
    }
    overrides.extend(g.overrides.iter().cloned());
    parse_config_with_overrides(&text, &overrides)
}

fn default_nr(g: &GlobalArgs) -> usize {
    if g.full {
        FULL_NR
    } else {
        DESK_NR
    }
}

fn single_nr(g: &GlobalArgs) -> Result<usize> {
    match g.nr.as_slice() {
        [] => Ok(default_nr(g)),
        [n] => Ok(*n),
        _ => Err(Error::Config("this command takes a single --nr value".into())),
    }
}

fn sweep_spec(g: &GlobalArgs, scenario: ScenarioConfig, a: &SweepArgs, mc_default: usize) -> SweepSpec {
    let nr_values = if g.nr.is_empty() {
        vec![default_nr(g)]
    } else {
        g.nr.clone()
    };
    let mut spec = SweepSpec::new(scenario, nr_values, g.seed);
    spec.pilots = g.pilots;
    spec.mode = g.mode.unwrap_or(EstimationMode::Perfect);
    spec.modulation = a.modulation;
    spec.mc_symbols = a.mc_symbols.unwrap_or(mc_default);
    spec.pilot_family = a.pilot_family;
    spec.snr_form = a.snr_form;
    spec.optimizer.multi_start = a.multi_start;
    spec
}

/// Turns parsed arguments into a job.
pub fn resolve_job(g: &GlobalArgs, command: &Command) -> Result<Job> {
    if let Command::Verify = command {
        return Ok(Job::Verify { seed: g.seed });
    }
    let scenario = resolve_scenario(g)?;
    Ok(match command {
        Command::Optimize { multi_start, max_iter } => {
            let mut optimizer = OptimizerSettings {
                rng_seed: g.seed,
                multi_start: *multi_start,
                ..Default::default()
            };
            if let Some(n) = max_iter {
                optimizer.max_iter = *n;
            }
            Job::Optimize {
                scenario: scenario.with_ris_elements(single_nr(g)?),
                seed: g.seed,
                optimizer,
            }
        }
        Command::Coverage(a) => Job::Coverage {
            sweep: sweep_spec(g, scenario, a, 0),
        },
        Command::Ber(a) => {
            let mut spec = sweep_spec(g, scenario, a, 1_000_000);
            let p = spec.scenario.probe_ue_m;
            spec.scenario.grid = GridSpec {
                x_range_m: [p[0], p[0]],
                y_range_m: [p[1], p[1]],
                resolution_m: 1.0,
                height_m: p[2],
            };
            Job::Ber { sweep: spec }
        }
        Command::Estimate { trials, pilot_family } => {
            let nr = single_nr(g)?;
            let k = scenario.placement_users().len();
            Job::Estimate {
                scenario: scenario.with_ris_elements(nr),
                seed: g.seed,
                pilots: g.pilots.unwrap_or(k * (nr + 1)),
                trials: *trials,
                pilot_family: *pilot_family,
            }
        }
        Command::Multiue {
            users,
            antennas,
            budget,
            threshold,
            pilot_factor,
        } => {
            let study = MultiUeStudySpec {
                user_counts: users.clone(),
                bs_antennas: *antennas,
                nr: match g.nr.as_slice() {
                    [] if g.full => 1500,
                    _ => single_nr(g)?,
                },
                budget: budget.unwrap_or(if g.full { 1200 } else { 120 }),
                threshold: *threshold,
                mode: g.mode.unwrap_or(EstimationMode::Perfect),
                pilot_factor: *pilot_factor,
                seed: g.seed,
                ..MultiUeStudySpec::default()
            };
            Job::Multiue { scenario, study }
        }
        Command::Verify => unreachable!(),
    })
}

/// Sets up the global worker pool; repeated calls keep the first setting.
pub fn init_workers(flag: Option<usize>) -> Result<()> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var(WORKERS_ENV) {
            Ok(v) => Some(
                v.trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("{WORKERS_ENV}={v:?} is not a count")))?,
            ),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(Error::Config("worker count must be positive".into()));
        }
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct OptimizeSolution<'a> {
    users: &'a [[f64; 3]],
    elements: usize,
    phi: &'a [f64],
    objective: f64,
    alpha_sq: f64,
    per_user_rx_power: &'a [f64],
    iterations: usize,
    termination: crate::optimizer::Termination,
    start_index: usize,
    direct_path_objective: f64,
    spectrum: crate::precoder::SpectralReport,
}

fn run_optimize(out: &Path, scenario: &ScenarioConfig, optimizer: &OptimizerSettings) -> Result<Vec<PathBuf>> {
    let users = scenario.placement_users();
    let k = users.len();
    let gamma = vec![1.0; k];
    let chs = ChannelSet::synthesize(scenario, &users)?;
    let (ris, sol, trace) = optimize(&chs, &gamma, scenario.tx_power_w(), optimizer)?;
    let dp = crate::precoder::zero_forcing(&chs.h_bu, &gamma, scenario.tx_power_w())?;
    let solution = OptimizeSolution {
        users: &users,
        elements: ris.len(),
        phi: &ris.phi,
        objective: sol.j,
        alpha_sq: sol.alpha_sq,
        per_user_rx_power: &sol.per_user_rx_power,
        iterations: trace.iterations(),
        termination: trace.termination,
        start_index: trace.start_index,
        direct_path_objective: dp.j,
        spectrum: spectral_report(&chs.compound(&ris.varphi), &gamma)?,
    };
    Ok(vec![
        write(out, "trace.csv", &trace.to_csv())?,
        write(out, "solution.json", &json(&solution))?,
        write(out, "channels.txt", &write_dump(&chs, scenario.carrier_frequency_hz))?,
    ])
}

#[derive(Debug, Serialize)]
struct SweepSummary<'a> {
    seed: u64,
    mode: EstimationMode,
    nr_values: &'a [usize],
    points: usize,
    records: usize,
    status_counts: std::collections::BTreeMap<&'static str, usize>,
    shadowed_records: usize,
    outage: crate::experiments::OutageTable,
}

fn run_sweep(out: &Path, spec: &SweepSpec, prefix: &str) -> Result<Vec<PathBuf>> {
    let records = run_coverage(spec)?;
    let (outage, cdfs) = cdf_and_outage(&records);
    let mut status_counts = std::collections::BTreeMap::new();
    for r in &records {
        *status_counts.entry(r.status.name()).or_insert(0) += 1;
    }
    let summary = SweepSummary {
        seed: spec.seed,
        mode: spec.mode,
        nr_values: &spec.nr_values,
        points: spec.grid_points().len(),
        records: records.len(),
        status_counts,
        shadowed_records: records.iter().filter(|r| r.shadowed && r.status == Status::Ok).count(),
        outage,
    };
    let mut files = vec![
        write(out, &format!("{prefix}.csv"), &records_csv(&records))?,
        write(out, &format!("{prefix}_summary.json"), &json(&summary))?,
    ];
    if prefix == "coverage" {
        for c in &cdfs {
            files.push(write(out, &format!("cdf/{}.csv", c.file_stem()), &cdf_csv(c))?);
        }
    }
    Ok(files)
}

#[derive(Debug, Serialize)]
struct EstimateUser {
    user: usize,
    predicted_variance: f64,
    empirical_variance: f64,
    ratio: f64,
    /// Largest |off-diagonal| of the column covariance, relative to the prediction.
    max_offdiag_relative: f64,
}

fn run_estimate(
    out: &Path,
    scenario: &ScenarioConfig,
    seed: u64,
    pilots: usize,
    trials: usize,
    family: PilotFamily,
) -> Result<Vec<PathBuf>> {
    let users = scenario.placement_users();
    let k = users.len();
    let nr = scenario.ris_elements;
    let chs = ChannelSet::synthesize(scenario, &users)?;
    let noise = scenario.noise_power_w();
    let plan = design_pilots(nr, pilots / k, family, k, scenario.ul_pilot_power_w())?;
    let truth: Vec<CMatrix> = (0..k).map(|u| cascade_block(&chs, u)).collect();
    let mut cov = vec![CMatrix::zeros(nr + 1, nr + 1); k];
    for t in 0..trials {
        let outcome = simulate_uplink_ls(&chs, &plan, noise, derive_seed(seed, &[t as u64]))?;
        for u in 0..k {
            let err = &outcome.v_hat[u] - &truth[u];
            cov[u] += err.adjoint() * &err;
        }
    }
    let m = scenario.bs_antennas as f64;
    let report: Vec<EstimateUser> = (0..k)
        .map(|u| {
            let c = &cov[u] / nalgebra::Complex::from(m * trials as f64);
            let predicted = plan.entry_variance(u, noise);
            let empirical = c.diagonal().iter().map(|z| z.re).sum::<f64>() / (nr + 1) as f64;
            let mut off = 0.0f64;
            for i in 0..=nr {
                for j in 0..=nr {
                    if i != j {
                        off = off.max(c[(i, j)].norm());
                    }
                }
            }
            EstimateUser {
                user: u + 1,
                predicted_variance: predicted,
                empirical_variance: empirical,
                ratio: empirical / predicted,
                max_offdiag_relative: off / predicted,
            }
        })
        .collect();
    let mut csv = String::from("user,predicted_variance,empirical_variance,ratio,max_offdiag_relative\n");
    for r in &report {
        let _ = writeln!(
            csv,
            "{},{:e},{:e},{:e},{:e}",
            r.user, r.predicted_variance, r.empirical_variance, r.ratio, r.max_offdiag_relative
        );
    }
    Ok(vec![write(out, "estimate.csv", &csv)?])
}

fn run_multiue_job(out: &Path, scenario: &ScenarioConfig, study: &MultiUeStudySpec) -> Result<Vec<PathBuf>> {
    let result = run_multi_ue(study, scenario)?;
    let mut csv = String::from("users,run,config_id,nr,obstacles,user,x_m,y_m,ber_bound,rate,status\n");
    for r in &result.records {
        for u in 0..r.users {
            let num = |v: f64| if v.is_finite() { format!("{v:e}") } else { String::new() };
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.users,
                r.run,
                r.config_id,
                r.nr,
                u8::from(r.obstacles),
                u + 1,
                r.positions[u][0],
                r.positions[u][1],
                num(r.ber[u]),
                num(r.rate[u]),
                r.status.name()
            );
        }
    }
    Ok(vec![
        write(out, "multiue.csv", &csv)?,
        write(out, "multiue_counts.json", &json(&result.counts))?,
    ])
}

/// Writes the manifest into `out` and executes the job.
pub fn execute(job: &Job, out: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut files = vec![write(out, "manifest.json", &Manifest::new(job.clone()).to_json())?];
    files.extend(match job {
        Job::Optimize {
            scenario, optimizer, ..
        } => run_optimize(out, scenario, optimizer)?,
        Job::Coverage { sweep } => run_sweep(out, sweep, "coverage")?,
        Job::Ber { sweep } => run_sweep(out, sweep, "ber")?,
        Job::Estimate {
            scenario,
            seed,
            pilots,
            trials,
            pilot_family,
        } => run_estimate(out, scenario, *seed, *pilots, *trials, *pilot_family)?,
        Job::Multiue { scenario, study } => run_multiue_job(out, scenario, study)?,
        Job::Verify { seed } => {
            let report = run_verify(*seed)?;
            let path = write(out, "verify.json", &json(&report))?;
            if !report.passed() {
                return Err(Error::Verification(format!(
                    "oracle suite failed; see {}",
                    path.display()
                )));
            }
            vec![path]
        }
    });
    Ok(files)
}

/// Entry point shared by the binary and the integration tests.
pub fn run(cli: &Cli) -> Result<Vec<PathBuf>> {
    init_workers(cli.global.workers)?;
    let job = match (&cli.global.manifest, &cli.command) {
        (Some(path), _) => parse_manifest(&read(path)?)?.job,
        (None, Some(cmd)) => resolve_job(&cli.global, cmd)?,
        (None, None) => return Err(Error::Config("a subcommand or --manifest is required".into())),
    };
    execute(&job, &cli.global.out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cli(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("riszf").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn desk_defaults() {
        let c = cli(&["coverage"]);
        let Job::Coverage { sweep } = resolve_job(&c.global, c.command.as_ref().unwrap()).unwrap() else {
            panic!()
        };
        assert_eq!(sweep.nr_values, vec![DESK_NR]);
        assert_eq!(sweep.scenario.grid.resolution_m, DESK_RESOLUTION_M);
        assert_eq!(sweep.scenario.preset, crate::scenario::Preset::Near);
    }

    #[test]
    fn full_scale_and_overrides() {
        let c = cli(&[
            "coverage",
            "--full",
            "--preset",
            "far",
            "--set",
            "tx_power_dl_dbm=10",
            "--nr",
            "32,64",
        ]);
        let Job::Coverage { sweep } = resolve_job(&c.global, c.command.as_ref().unwrap()).unwrap() else {
            panic!()
        };
        assert_eq!(sweep.nr_values, vec![32, 64]);
        assert_eq!(sweep.scenario.grid.resolution_m, FULL_RESOLUTION_M);
        assert_eq!(sweep.scenario.tx_power_dl_dbm, 10.0);
        assert_eq!(sweep.scenario.preset, crate::scenario::Preset::Far);
    }

    #[test]
    fn manifest_round_trip() {
        let c = cli(&["estimate", "--nr", "8", "--seed", "9"]);
        let job = resolve_job(&c.global, c.command.as_ref().unwrap()).unwrap();
        let text = Manifest::new(job.clone()).to_json();
        assert_eq!(parse_manifest(&text).unwrap().job, job);
        assert!(parse_manifest("{}").is_err());
        assert!(parse_manifest(&text.replace("\"riszf\"", "\"other\"")).is_err());
    }

    #[test]
    fn exit_codes_are_distinct() {
        let codes = [
            exit_code(&Error::Config(String::new())),
            exit_code(&Error::SingularChannel { condition: 1e13 }),
            exit_code(&Error::Verification(String::new())),
            exit_code(&Error::io("x", std::io::Error::other("e"))),
        ];
        assert_eq!(codes, [2, 3, 4, 1]);
    }

    #[test]
    fn single_nr_commands_reject_lists() {
        let c = cli(&["optimize", "--nr", "8,16"]);
        assert!(matches!(
            resolve_job(&c.global, c.command.as_ref().unwrap()),
            Err(Error::Config(_))
        ));
    }
}
