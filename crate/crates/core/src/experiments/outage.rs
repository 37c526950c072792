use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use super::{Record, Status};

/// Linear-interpolation quantile of sorted data (Hyndman–Fan type 7).
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutageRow {
    pub config_id: String,
    pub nr: usize,
    pub user: usize,
    pub samples: usize,
    /// Points excluded because their status was not `ok`.
    pub flagged: usize,
    pub ber_q50: f64,
    pub ber_q85: f64,
    pub ber_mc_q50: Option<f64>,
    pub ber_mc_q85: Option<f64>,
    pub rate_q50: f64,
    pub rate_q85: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutageTable {
    pub rows: Vec<OutageRow>,
}

impl OutageTable {
    pub fn find(&self, config_id: &str, nr: usize, user: usize) -> Option<&OutageRow> {
        self.rows
            .iter()
            .find(|r| r.config_id == config_id && r.nr == nr && r.user == user)
    }
}

/// Empirical CDF of one metric for one configuration and user.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CdfSeries {
    pub config_id: String,
    pub nr: usize,
    pub user: usize,
    pub metric: &'static str,
    pub values: Vec<f64>,
}

impl CdfSeries {
    pub fn file_stem(&self) -> String {
        format!(
            "cdf_{}_{}_{}_u{}",
            self.metric,
            self.config_id.to_ascii_lowercase(),
            self.nr,
            self.user
        )
    }
}

/// Two-column `value,cdf` text with the `i/n` step convention.
pub fn cdf_csv(series: &CdfSeries) -> String {
    let n = series.values.len() as f64;
    let mut out = String::from("value,cdf\n");
    for (i, v) in series.values.iter().enumerate() {
        let _ = writeln!(out, "{v:e},{}", (i + 1) as f64 / n);
    }
    out
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

/// Groups records by (configuration, N_r, user) and summarizes each group.
pub fn cdf_and_outage(records: &[Record]) -> (OutageTable, Vec<CdfSeries>) {
    let mut groups: BTreeMap<(&str, usize, usize), Vec<&Record>> = BTreeMap::new();
    for r in records {
        groups.entry((r.config_id, r.nr, r.user)).or_default().push(r);
    }
    let mut rows = Vec::with_capacity(groups.len());
    let mut cdfs = Vec::with_capacity(groups.len() * 2);
    for ((id, nr, user), recs) in groups {
        let ok: Vec<&Record> = recs.iter().copied().filter(|r| r.status == Status::Ok).collect();
        let ber = sorted(ok.iter().map(|r| r.ber_bound).collect());
        let rate = sorted(ok.iter().map(|r| r.rate).collect());
        let mc: Option<Vec<f64>> = ok.iter().map(|r| r.ber_mc).collect();
        let mc = mc.filter(|v| !v.is_empty()).map(sorted);
        rows.push(OutageRow {
            config_id: id.to_string(),
            nr,
            user,
            samples: ok.len(),
            flagged: recs.len() - ok.len(),
            ber_q50: quantile(&ber, 0.5),
            ber_q85: quantile(&ber, 0.85),
            ber_mc_q50: mc.as_ref().map(|v| quantile(v, 0.5)),
            ber_mc_q85: mc.as_ref().map(|v| quantile(v, 0.85)),
            rate_q50: quantile(&rate, 0.5),
            rate_q85: quantile(&rate, 0.85),
        });
        for (metric, values) in [("ber", ber), ("rate", rate)] {
            cdfs.push(CdfSeries {
                config_id: id.to_string(),
                nr,
                user,
                metric,
                values,
            });
        }
    }
    (OutageTable { rows }, cdfs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::{EstimationMode, CONFIG_DP};
    use rand::{Rng, SeedableRng};

    fn rec(ber: f64, user: usize, status: Status) -> Record {
        Record {
            point: 0,
            x_m: 0.0,
            y_m: 0.0,
            user,
            config_id: CONFIG_DP,
            nr: 0,
            mode: EstimationMode::Perfect,
            ber_bound: ber,
            ber_mc: None,
            ci_low: None,
            ci_high: None,
            rate: -ber.log2(),
            sigma_eps_sq: 0.0,
            sigma_k_sq: 1.0,
            iterations: 0,
            shadowed: false,
            status,
        }
    }

    #[test]
    fn constant_records_give_a_step() {
        let recs: Vec<Record> = (0..7).map(|_| rec(0.02, 1, Status::Ok)).collect();
        let (table, cdfs) = cdf_and_outage(&recs);
        let row = table.find(CONFIG_DP, 0, 1).unwrap();
        assert_eq!(row.ber_q50, 0.02);
        assert_eq!(row.ber_q85, 0.02);
        assert!(cdfs[0].values.iter().all(|&v| v == 0.02));
        assert!(cdf_csv(&cdfs[0]).ends_with(",1\n"));
    }

    #[test]
    fn quantiles_match_sort_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for n in [2usize, 5, 10, 101, 1000] {
            let xs: Vec<f64> = (0..n).map(|_| rng.random::<f64>().powi(3)).collect();
            let recs: Vec<Record> = xs.iter().map(|&x| rec(x, 1, Status::Ok)).collect();
            let (table, _) = cdf_and_outage(&recs);
            let row = &table.rows[0];
            for (p, got) in [(0.5, row.ber_q50), (0.85, row.ber_q85)] {
                // rank-based oracle: the two order statistics that bracket p
                let mut ys = xs.clone();
                ys.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let pos = p * (n as f64 - 1.0);
                let below = ys[pos as usize];
                let above = ys[(pos.ceil() as usize).min(n - 1)];
                let expect = below * (1.0 - pos.fract()) + above * pos.fract();
                assert!((got - expect).abs() <= 1e-12, "{got} {expect}");
            }
            assert!(row.ber_q50 <= row.ber_q85);
        }
    }

    #[test]
    fn flagged_points_are_counted_not_used() {
        let recs = vec![
            rec(0.1, 1, Status::Ok),
            rec(f64::NAN, 1, Status::Singular),
            rec(0.3, 1, Status::Ok),
            rec(0.2, 2, Status::Ok),
        ];
        let (table, _) = cdf_and_outage(&recs);
        let r1 = table.find(CONFIG_DP, 0, 1).unwrap();
        assert_eq!((r1.samples, r1.flagged), (2, 1));
        assert!((r1.ber_q50 - 0.2).abs() < 1e-15);
        assert_eq!(table.find(CONFIG_DP, 0, 2).unwrap().samples, 1);
    }

    #[test]
    fn quantile_edges() {
        assert!(quantile(&[], 0.5).is_nan());
        assert_eq!(quantile(&[4.0], 0.85), 4.0);
        assert_eq!(quantile(&[0.0, 10.0], 0.85), 8.5);
    }
}
