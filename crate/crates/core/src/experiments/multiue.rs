//! User-load study: K users dropped at random grid points, direct path
//! against RIS, with and without obstacles.

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{contexts, evaluate, EstimationMode, Status, SweepSpec, CONFIG_DP, CONFIG_RIS};
use crate::optimizer::OptimizerSettings;
use crate::rng::{derive_seed, stream};
use crate::scenario::ScenarioConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MultiUeStudySpec {
    pub user_counts: Vec<usize>,
    pub bs_antennas: usize,
    pub nr: usize,
    /// Total positions per user count; each K gets `budget / K` runs.
    pub budget: usize,
    pub threshold: f64,
    /// Obstacle settings to evaluate; `true` keeps the scenario's list.
    pub obstacles: Vec<bool>,
    pub mode: EstimationMode,
    /// Pilot slots per user as a multiple of `N_r + 1`.
    pub pilot_factor: usize,
    pub seed: u64,
    pub optimizer: OptimizerSettings,
}

impl Default for MultiUeStudySpec {
    fn default() -> Self {
        MultiUeStudySpec {
            user_counts: vec![2, 3, 4],
            bs_antennas: 6,
            nr: 1500,
            budget: 1200,
            threshold: 0.01,
            obstacles: vec![true, false],
            mode: EstimationMode::Perfect,
            pilot_factor: 1,
            seed: 0,
            optimizer: OptimizerSettings::default(),
        }
    }
}

impl MultiUeStudySpec {
    pub fn runs_for(&self, k: usize) -> usize {
        self.budget / k
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MultiUeRecord {
    pub users: usize,
    pub run: usize,
    pub config_id: &'static str,
    pub nr: usize,
    pub obstacles: bool,
    pub positions: Vec<[f64; 3]>,
    pub ber: Vec<f64>,
    pub rate: Vec<f64>,
    pub status: Status,
}

/// Threshold counts for one (K, configuration, obstacle) cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MultiUeCount {
    pub users: usize,
    pub config_id: &'static str,
    pub obstacles: bool,
    pub runs: usize,
    /// Runs in which every user is below the threshold.
    pub run_count: usize,
    /// User-runs below the threshold, out of `runs * users`.
    pub ue_count: usize,
    /// Runs with a non-ok status; they count as above the threshold.
    pub flagged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MultiUeStudy {
    pub records: Vec<MultiUeRecord>,
    pub counts: Vec<MultiUeCount>,
}

impl MultiUeStudy {
    pub fn count(&self, users: usize, config_id: &str, obstacles: bool) -> Option<&MultiUeCount> {
        self.counts
            .iter()
            .find(|c| c.users == users && c.config_id == config_id && c.obstacles == obstacles)
    }
}

pub fn run_multi_ue(spec: &MultiUeStudySpec, base: &ScenarioConfig) -> Result<MultiUeStudy> {
    let max_k = spec.user_counts.iter().copied().max().unwrap_or(0);
    if spec.user_counts.contains(&0) || spec.bs_antennas < max_k {
        return Err(Error::Config(format!(
            "{} antennas cannot serve {max_k} users",
            spec.bs_antennas
        )));
    }
    if spec.pilot_factor == 0 {
        return Err(Error::Config("pilot_factor must be at least 1".into()));
    }
    let mut base = base.clone();
    base.bs_antennas = spec.bs_antennas;
    let grid = base.grid.points();
    if grid.len() < max_k {
        return Err(Error::Config(format!(
            "grid has {} points for {max_k} users",
            grid.len()
        )));
    }

    let mut records = Vec::new();
    let mut counts = Vec::new();
    for &k in &spec.user_counts {
        let runs = spec.runs_for(k);
        let draws: Vec<Vec<[f64; 3]>> = (0..runs)
            .map(|r| {
                let mut rng = stream(spec.seed, &[k as u64, r as u64]);
                sample(&mut rng, grid.len(), k).iter().map(|i| grid[i]).collect()
            })
            .collect();
        for &obstacles in &spec.obstacles {
            let mut scenario = base.clone();
            if !obstacles {
                scenario.obstacles.clear();
            }
            scenario.ue_positions_m = vec![[0.0; 3]; k - 1];
            let mut sweep = SweepSpec::new(scenario, vec![spec.nr], spec.seed);
            sweep.mode = spec.mode;
            sweep.optimizer = spec.optimizer.clone();
            sweep.pilots = Some(spec.pilot_factor * k * (spec.nr + 1));
            sweep.validate()?;
            let ctxs = contexts(&sweep)?;
            let cell: Vec<Vec<MultiUeRecord>> = draws
                .par_iter()
                .enumerate()
                .map(|(r, users)| {
                    ctxs.iter()
                        .enumerate()
                        .map(|(c, ctx)| {
                            let path = [k as u64, r as u64, c as u64, u64::from(obstacles)];
                            let seeds = [1u64, 2, 3]
                                .map(|tag| derive_seed(spec.seed, &[tag, path[0], path[1], path[2], path[3]]));
                            let (ber, rate, status) = match evaluate(&sweep, ctx, users, seeds) {
                                Ok(m) => (m.ber_bound, m.rate, Status::Ok),
                                Err(e) => {
                                    let s = Status::from_error(&e).ok_or(e)?;
                                    (vec![f64::NAN; k], vec![f64::NAN; k], s)
                                }
                            };
                            Ok(MultiUeRecord {
                                users: k,
                                run: r,
                                config_id: ctx.config_id,
                                nr: ctx.nr,
                                obstacles,
                                positions: users.clone(),
                                ber,
                                rate,
                                status,
                            })
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            let cell: Vec<MultiUeRecord> = cell.into_iter().flatten().collect();
            for id in [CONFIG_DP, CONFIG_RIS] {
                let rows = cell.iter().filter(|r| r.config_id == id);
                let below = |r: &MultiUeRecord| r.ber.iter().filter(|&&b| b < spec.threshold).count();
                counts.push(MultiUeCount {
                    users: k,
                    config_id: id,
                    obstacles,
                    runs,
                    run_count: rows.clone().filter(|r| below(r) == k).count(),
                    ue_count: rows.clone().map(below).sum(),
                    flagged: rows.filter(|r| r.status != Status::Ok).count(),
                });
            }
            records.extend(cell);
        }
    }
    Ok(MultiUeStudy { records, counts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{resolve_preset, GridSpec, Preset};

    fn small() -> (MultiUeStudySpec, ScenarioConfig) {
        let mut base = resolve_preset(Preset::Near);
        base.grid = GridSpec {
            x_range_m: [10.0, 110.0],
            y_range_m: [10.0, 100.0],
            resolution_m: 10.0,
            height_m: 1.5,
        };
        let spec = MultiUeStudySpec {
            user_counts: vec![2, 3],
            nr: 10,
            budget: 12,
            obstacles: vec![true],
            seed: 5,
            optimizer: OptimizerSettings {
                max_iter: 15,
                ..OptimizerSettings::default()
            },
            ..MultiUeStudySpec::default()
        };
        (spec, base)
    }

    #[test]
    fn budget_and_determinism() {
        let (spec, base) = small();
        let a = run_multi_ue(&spec, &base).unwrap();
        assert_eq!(a.count(2, CONFIG_RIS, true).unwrap().runs, 6);
        assert_eq!(a.count(3, CONFIG_DP, true).unwrap().runs, 4);
        assert_eq!(a.records.len(), (6 + 4) * 2);
        let b = run_multi_ue(&spec, &base).unwrap();
        assert_eq!(a.counts, b.counts);
    }

    #[test]
    fn vacuous_threshold_counts_everything() {
        let (mut spec, base) = small();
        spec.threshold = 1.0;
        let study = run_multi_ue(&spec, &base).unwrap();
        for c in &study.counts {
            let flagged = study
                .records
                .iter()
                .filter(|r| {
                    r.users == c.users
                        && r.config_id == c.config_id
                        && r.obstacles == c.obstacles
                        && r.status != Status::Ok
                })
                .count();
            assert_eq!(c.flagged, flagged);
            assert_eq!(c.run_count + flagged, c.runs);
        }
    }

    #[test]
    fn rejects_too_few_antennas() {
        let (mut spec, base) = small();
        spec.bs_antennas = 2;
        assert!(matches!(run_multi_ue(&spec, &base), Err(Error::Config(_))));
    }
}
