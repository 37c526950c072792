//! Coverage sweeps, outage statistics and the multi-user study.
//!
//! Every grid point is an independent work unit. The moving user is placed
//! at the point, the fixed users stay put, and each configuration (direct
//! path plus one RIS size per entry of `nr_values`) is optimized from a fresh
//! random start. Results come back in point order whatever the scheduling.

mod multiue;
mod outage;

pub use multiue::{run_multi_ue, MultiUeCount, MultiUeRecord, MultiUeStudy, MultiUeStudySpec};
pub use outage::{cdf_and_outage, cdf_csv, quantile, CdfSeries, OutageRow, OutageTable};

use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{Cascade, ChannelSet};
use crate::estimation::{design_pilots, inject_error_model, simulate_uplink_ls, PilotFamily, PilotPlan};
use crate::optimizer::{optimize, OptimizerSettings};
use crate::performance::{error_statistics, error_statistics_for_energies, link_report, mc_ber, Downlink, SnrForm};
use crate::precoder::zero_forcing;
use crate::rng::derive_seed;
use crate::scenario::{shadow_loss, ScenarioConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EstimationMode {
    #[serde(rename = "pe")]
    Perfect,
    #[serde(rename = "ie")]
    ImperfectFull,
    #[serde(rename = "ie-fast")]
    ImperfectInjected,
}

impl EstimationMode {
    pub fn name(self) -> &'static str {
        match self {
            EstimationMode::Perfect => "pe",
            EstimationMode::ImperfectFull => "ie",
            EstimationMode::ImperfectInjected => "ie-fast",
        }
    }
}

impl FromStr for EstimationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pe" | "perfect" => Ok(EstimationMode::Perfect),
            "ie" | "imperfect" => Ok(EstimationMode::ImperfectFull),
            "ie-fast" | "ie_fast" => Ok(EstimationMode::ImperfectInjected),
            _ => Err(Error::Config(format!("unknown estimation mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub scenario: ScenarioConfig,
    /// RIS sizes evaluated next to the direct-path baseline.
    pub nr_values: Vec<usize>,
    /// Total pilot slots across users; `None` means `K(N_r+1)`.
    pub pilots: Option<usize>,
    pub mode: EstimationMode,
    pub modulation: usize,
    /// Monte Carlo symbols per user and point; 0 disables the simulation.
    pub mc_symbols: usize,
    pub seed: u64,
    pub optimizer: OptimizerSettings,
    pub pilot_family: PilotFamily,
    pub snr_form: SnrForm,
}

impl SweepSpec {
    pub fn new(scenario: ScenarioConfig, nr_values: Vec<usize>, seed: u64) -> Self {
        SweepSpec {
            scenario,
            nr_values,
            pilots: None,
            mode: EstimationMode::Perfect,
            modulation: 4,
            mc_symbols: 0,
            seed,
            optimizer: OptimizerSettings::default(),
            pilot_family: PilotFamily::Dft,
            snr_form: SnrForm::Nominal,
        }
    }

    pub fn users(&self) -> usize {
        self.scenario.ue_positions_m.len() + 1
    }

    /// Pilot slots per user for an RIS of `nr` elements.
    pub fn pilots_per_user(&self, nr: usize) -> usize {
        let k = self.users();
        self.pilots.map_or(nr + 1, |t| t / k)
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.optimizer.validate()?;
        crate::performance::SquareQam::new(self.modulation)?;
        for &nr in std::iter::once(&0).chain(&self.nr_values) {
            let t = self.pilots_per_user(nr);
            if self.mode != EstimationMode::Perfect && t < nr + 1 {
                return Err(Error::Identifiability {
                    pilots: t,
                    unknowns: nr + 1,
                });
            }
        }
        Ok(())
    }

    /// Grid points, minus those coincident with a fixed user.
    pub fn grid_points(&self) -> Vec<[f64; 3]> {
        self.scenario
            .grid
            .points()
            .into_iter()
            .filter(|p| {
                !self
                    .scenario
                    .ue_positions_m
                    .iter()
                    .any(|u| (u[0] - p[0]).abs() < 1e-9 && (u[1] - p[1]).abs() < 1e-9)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Singular,
    ModelRange,
    Geometry,
    NonConvergence,
}

impl Status {
    pub fn name(self) -> &'static str {
        match self {
            Status::Ok => "ok",
            Status::Singular => "singular",
            Status::ModelRange => "model_range",
            Status::Geometry => "geometry",
            Status::NonConvergence => "nonconvergence",
        }
    }

    /// Per-point failures that are recorded rather than aborting a sweep.
    pub fn from_error(e: &Error) -> Option<Status> {
        match e {
            Error::SingularChannel { .. } => Some(Status::Singular),
            Error::ModelRange { .. } => Some(Status::ModelRange),
            Error::Geometry(_) => Some(Status::Geometry),
            Error::NonConvergence { .. } => Some(Status::NonConvergence),
            _ => None,
        }
    }
}

/// Direct-path baseline configuration name.
pub const CONFIG_DP: &str = "DP";
/// RIS-aided configuration name.
pub const CONFIG_RIS: &str = "RIS";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Record {
    pub point: usize,
    pub x_m: f64,
    pub y_m: f64,
    /// 1 is the moving user, then the fixed users in order.
    pub user: usize,
    pub config_id: &'static str,
    pub nr: usize,
    pub mode: EstimationMode,
    pub ber_bound: f64,
    pub ber_mc: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub rate: f64,
    pub sigma_eps_sq: f64,
    pub sigma_k_sq: f64,
    pub iterations: usize,
    pub shadowed: bool,
    pub status: Status,
}

pub const CSV_HEADER: &str = "x_m,y_m,user,config_id,nr,mode,ber_bound,ber_mc,rate,status,ci_low,ci_high,sigma_eps_sq,sigma_k_sq,iterations,shadowed";

fn opt_field(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x:e}"),
        _ => String::new(),
    }
}

fn field(x: f64) -> String {
    opt_field(Some(x))
}

pub fn records_csv(records: &[Record]) -> String {
    let mut out = String::with_capacity(records.len() * 120);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.x_m,
            r.y_m,
            r.user,
            r.config_id,
            r.nr,
            r.mode.name(),
            field(r.ber_bound),
            opt_field(r.ber_mc),
            field(r.rate),
            r.status.name(),
            opt_field(r.ci_low),
            opt_field(r.ci_high),
            field(r.sigma_eps_sq),
            field(r.sigma_k_sq),
            r.iterations,
            u8::from(r.shadowed),
        );
    }
    out
}

/// Inputs shared by every point of one configuration.
struct ConfigContext {
    scenario: ScenarioConfig,
    nr: usize,
    config_id: &'static str,
    plan: Option<PilotPlan>,
}

struct Metrics {
    ber_bound: Vec<f64>,
    ber_mc: Option<Vec<(f64, f64, f64)>>,
    rate: Vec<f64>,
    sigma_eps_sq: Vec<f64>,
    sigma_k_sq: Vec<f64>,
    iterations: usize,
}

/// Optimizes, precodes and scores one placement.
fn evaluate(spec: &SweepSpec, ctx: &ConfigContext, users: &[[f64; 3]], seeds: [u64; 3]) -> Result<Metrics> {
    let sc = &ctx.scenario;
    let k = users.len();
    let gamma = vec![1.0; k];
    let p = sc.tx_power_w();
    let noise = sc.noise_power_w();
    let chs = ChannelSet::synthesize(sc, users)?;
    let settings = OptimizerSettings {
        rng_seed: seeds[0],
        ..spec.optimizer.clone()
    };

    let (sol, sol_hat, h, iterations, stats) = match (&ctx.plan, spec.mode) {
        (None, _) | (_, EstimationMode::Perfect) => {
            let (ris, sol, trace) = optimize(&chs, &gamma, p, &settings)?;
            let stats = error_statistics_for_energies(&sol, &sol, ctx.nr, &vec![1.0; k], 0.0, noise)?;
            let h = chs.compound(&ris.varphi);
            (sol.clone(), sol, h, trace.iterations(), stats)
        }
        (Some(plan), mode) => {
            let outcome = if mode == EstimationMode::ImperfectFull {
                simulate_uplink_ls(&chs, plan, noise, seeds[1])?
            } else {
                inject_error_model(&chs, plan, noise, seeds[1])?
            };
            let est = outcome.estimated_channel();
            let (ris, sol_hat, trace) = optimize(&est, &gamma, p, &settings)?;
            let h = chs.compound(&ris.varphi);
            let sol = zero_forcing(&h, &gamma, p)?;
            let stats = error_statistics(&sol, &sol_hat, plan, noise, noise)?;
            (sol, sol_hat, h, trace.iterations(), stats)
        }
    };
    let _ = sol;
    let report = link_report(&stats, &gamma, p, spec.modulation, spec.snr_form)?;
    let ber_mc = if spec.mc_symbols > 0 {
        let link = Downlink {
            h: &h,
            b_hat: &sol_hat.b,
            alpha_hat_sq: sol_hat.alpha_sq,
            gamma: &gamma,
            noise_power: noise,
        };
        let est = mc_ber(&link, spec.modulation, spec.mc_symbols, seeds[2])?;
        Some(est.iter().map(|e| (e.ber, e.ci_low, e.ci_high)).collect())
    } else {
        None
    };
    Ok(Metrics {
        ber_bound: report.ber_bound,
        ber_mc,
        rate: report.rate,
        sigma_eps_sq: stats.sigma_eps_sq,
        sigma_k_sq: stats.sigma_k_sq,
        iterations,
    })
}

fn contexts(spec: &SweepSpec) -> Result<Vec<ConfigContext>> {
    let k = spec.users();
    let mut out = Vec::with_capacity(spec.nr_values.len() + 1);
    let configs = std::iter::once((0usize, CONFIG_DP)).chain(spec.nr_values.iter().map(|&n| (n, CONFIG_RIS)));
    for (nr, id) in configs {
        let scenario = spec.scenario.with_ris_elements(nr);
        let plan = match spec.mode {
            EstimationMode::Perfect => None,
            _ => Some(design_pilots(
                nr,
                spec.pilots_per_user(nr),
                spec.pilot_family,
                k,
                scenario.ul_pilot_power_w(),
            )?),
        };
        out.push(ConfigContext {
            scenario,
            nr,
            config_id: id,
            plan,
        });
    }
    Ok(out)
}

fn point_records(spec: &SweepSpec, ctxs: &[ConfigContext], index: usize, point: [f64; 3]) -> Result<Vec<Record>> {
    let users: Vec<[f64; 3]> = std::iter::once(point)
        .chain(spec.scenario.ue_positions_m.iter().copied())
        .collect();
    let mut out = Vec::with_capacity(ctxs.len() * users.len());
    for (c, ctx) in ctxs.iter().enumerate() {
        let path = [index as u64, c as u64, ctx.nr as u64];
        let seeds = [1u64, 2, 3].map(|tag| derive_seed(spec.seed, &[tag, path[0], path[1], path[2]]));
        let result = evaluate(spec, ctx, &users, seeds);
        let status = match &result {
            Ok(_) => Status::Ok,
            Err(e) => Status::from_error(e).ok_or_else(|| clone_error(e))?,
        };
        for (u, &pos) in users.iter().enumerate() {
            let shadowed = shadow_loss(&ctx.scenario, ctx.scenario.bs_position_m, pos) > 0.0;
            let mut rec = Record {
                point: index,
                x_m: point[0],
                y_m: point[1],
                user: u + 1,
                config_id: ctx.config_id,
                nr: ctx.nr,
                mode: spec.mode,
                ber_bound: f64::NAN,
                ber_mc: None,
                ci_low: None,
                ci_high: None,
                rate: f64::NAN,
                sigma_eps_sq: f64::NAN,
                sigma_k_sq: f64::NAN,
                iterations: 0,
                shadowed,
                status,
            };
            if let Ok(m) = &result {
                rec.ber_bound = m.ber_bound[u];
                rec.rate = m.rate[u];
                rec.sigma_eps_sq = m.sigma_eps_sq[u];
                rec.sigma_k_sq = m.sigma_k_sq[u];
                rec.iterations = m.iterations;
                if let Some(mc) = &m.ber_mc {
                    rec.ber_mc = Some(mc[u].0);
                    rec.ci_low = Some(mc[u].1);
                    rec.ci_high = Some(mc[u].2);
                }
            }
            out.push(rec);
        }
    }
    Ok(out)
}

fn clone_error(e: &Error) -> Error {
    match e {
        Error::Config(s) => Error::Config(s.clone()),
        Error::Dimension(s) => Error::Dimension(s.clone()),
        other => Error::Verification(other.to_string()),
    }
}

/// Runs the sweep on the current rayon pool.
pub fn run_coverage(spec: &SweepSpec) -> Result<Vec<Record>> {
    spec.validate()?;
    let ctxs = contexts(spec)?;
    let points = spec.grid_points();
    let per_point: Vec<Result<Vec<Record>>> = points
        .par_iter()
        .enumerate()
        .map(|(i, &p)| point_records(spec, &ctxs, i, p))
        .collect();
    let mut out = Vec::with_capacity(per_point.len() * (ctxs.len() * spec.users()));
    for r in per_point {
        out.extend(r?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::performance::qam_ber;
    use crate::scenario::{resolve_preset, GridSpec, PathlossModel, Preset};

    fn tiny_spec(preset: Preset) -> SweepSpec {
        let mut sc = resolve_preset(preset);
        sc.grid = GridSpec {
            x_range_m: [30.0, 90.0],
            y_range_m: [20.0, 60.0],
            resolution_m: 30.0,
            height_m: 1.5,
        };
        let mut spec = SweepSpec::new(sc, vec![8], 11);
        spec.optimizer.max_iter = 20;
        spec
    }

    #[test]
    fn records_cover_points_users_and_configs() {
        let spec = tiny_spec(Preset::Near);
        let recs = run_coverage(&spec).unwrap();
        let points = spec.grid_points().len();
        assert_eq!(recs.len(), points * 2 * 2);
        assert!(recs.iter().any(|r| r.config_id == CONFIG_DP && r.nr == 0));
        let csv = records_csv(&recs);
        assert!(csv.starts_with("x_m,y_m,user,config_id,nr,mode,ber_bound,ber_mc,rate,status"));
        assert_eq!(csv.lines().count(), recs.len() + 1);
    }

    #[test]
    fn perfect_estimation_users_match() {
        let spec = tiny_spec(Preset::Out);
        for pair in run_coverage(&spec).unwrap().chunks(2) {
            if pair[0].status == Status::Ok {
                assert_eq!(pair[0].ber_bound, pair[1].ber_bound);
            }
        }
    }

    #[test]
    fn deterministic() {
        let mut spec = tiny_spec(Preset::Far);
        spec.mode = EstimationMode::ImperfectInjected;
        spec.mc_symbols = 2_000;
        let a = records_csv(&run_coverage(&spec).unwrap());
        let b = records_csv(&run_coverage(&spec).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn near_ns_has_no_shadowed_points() {
        let spec = tiny_spec(Preset::NearNs);
        assert!(run_coverage(&spec).unwrap().iter().all(|r| !r.shadowed));
        let spec = tiny_spec(Preset::Near);
        assert!(run_coverage(&spec).unwrap().iter().any(|r| r.shadowed));
    }

    #[test]
    fn model_range_is_flagged() {
        let mut spec = tiny_spec(Preset::Near);
        spec.scenario.grid = GridSpec {
            x_range_m: [60.0, 60.0],
            y_range_m: [115.0, 115.0],
            resolution_m: 1.0,
            height_m: 1.5,
        };
        let recs = run_coverage(&spec).unwrap();
        assert!(recs
            .iter()
            .all(|r| r.status == Status::ModelRange && r.ber_bound.is_nan()));
        assert!(records_csv(&recs).contains(",model_range,"));
    }

    #[test]
    fn excludes_fixed_user_location() {
        let mut spec = tiny_spec(Preset::Near);
        spec.scenario.grid = GridSpec {
            x_range_m: [20.0, 20.0],
            y_range_m: [40.0, 40.0],
            resolution_m: 1.0,
            height_m: 1.5,
        };
        assert!(spec.grid_points().is_empty());
    }

    #[test]
    fn single_user_matches_closed_form() {
        let mut sc = resolve_preset(Preset::Custom);
        sc.obstacles.clear();
        sc.ue_positions_m.clear();
        sc.pathloss = PathlossModel::FreeSpace;
        sc.grid = GridSpec {
            x_range_m: [20.0, 100.0],
            y_range_m: [40.0, 40.0],
            resolution_m: 40.0,
            height_m: 1.5,
        };
        let mut spec = SweepSpec::new(sc.clone(), vec![], 1);
        spec.mc_symbols = 100_000;
        // pick a power that puts the BER in a measurable range
        spec.scenario.tx_power_dl_dbm = -45.0;
        let recs = run_coverage(&spec).unwrap();
        for r in &recs {
            let users = [[r.x_m, r.y_m, 1.5]];
            let h = crate::channel::direct_channel(&spec.scenario.with_ris_elements(0), &users).unwrap();
            let snr = spec.scenario.tx_power_w() * h.norm_squared() / spec.scenario.noise_power_w();
            let expect = qam_ber(snr, 4).unwrap();
            let mc = r.ber_mc.unwrap();
            let se = (expect * (1.0 - expect) / 200_000.0).sqrt();
            assert!((mc - expect).abs() < 4.0 * se + 1e-12, "{mc} vs {expect}");
        }
    }

    #[test]
    fn rejects_unidentifiable_pilots() {
        let mut spec = tiny_spec(Preset::Near);
        spec.mode = EstimationMode::ImperfectFull;
        spec.pilots = Some(4);
        assert!(matches!(run_coverage(&spec), Err(Error::Identifiability { .. })));
    }

    #[test]
    fn mode_names_round_trip() {
        for m in [
            EstimationMode::Perfect,
            EstimationMode::ImperfectFull,
            EstimationMode::ImperfectInjected,
        ] {
            assert_eq!(m.name().parse::<EstimationMode>().unwrap(), m);
        }
    }
}
