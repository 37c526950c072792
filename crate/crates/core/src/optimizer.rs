//! RIS phase optimization by nonlinear conjugate gradient.
//!
//! Minimizes `J(φ) = Tr{(HHᴴ)⁻¹Γ}` with `H(φ) = H_bu + unvec(H₁₂ e^{jφ})`.
//! The analytic gradient is
//!
//! ```text
//! ∇J = 2 Im{ vec(G)ᴴ H₁₂ diag(ϕ) },   G = (HHᴴ)⁻¹ Γ (HHᴴ)⁻¹ H
//! ```
//!
//! and the search runs along `g = −∇J` with Polak–Ribière-plus memory and a
//! backtracking Armijo line search.

use std::fmt::Write as _;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::Cascade;
use crate::linalg::{checked_cholesky, gram};
use crate::precoder::{trace_weighted, zero_forcing, PrecoderSolution};
use crate::rng::stream;
use crate::{CMatrix, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RisState {
    pub phi: Vec<f64>,
    pub varphi: Vec<Complex64>,
}

impl RisState {
    pub fn from_phases(phi: Vec<f64>) -> Self {
        let varphi = phi.iter().map(|&p| Complex64::from_polar(1.0, p)).collect();
        RisState { phi, varphi }
    }

    /// Uniform phases on `[0, 2π)`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Self {
        let tau = std::f64::consts::TAU;
        Self::from_phases((0..n).map(|_| rng.random::<f64>() * tau).collect())
    }

    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LineSearch {
    /// Largest per-element phase change of the first trial step, radians.
    pub initial_step: f64,
    pub shrink: f64,
    pub c1: f64,
    pub max_shrinks: usize,
}

impl Default for LineSearch {
    fn default() -> Self {
        LineSearch {
            initial_step: 1.0,
            shrink: 0.5,
            c1: 1e-4,
            max_shrinks: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSettings {
    pub epsilon: f64,
    pub max_iter: usize,
    /// CG restart period; `None` means `N_r`.
    pub restart_period: Option<usize>,
    pub line_search: LineSearch,
    pub rng_seed: u64,
    pub multi_start: usize,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        OptimizerSettings {
            epsilon: 1e-6,
            max_iter: 200,
            restart_period: None,
            line_search: LineSearch::default(),
            rng_seed: 0,
            multi_start: 1,
        }
    }
}

impl OptimizerSettings {
    pub fn validate(&self) -> Result<()> {
        let ls = &self.line_search;
        let ok = self.epsilon > 0.0
            && self.max_iter >= 1
            && self.multi_start >= 1
            && self.restart_period != Some(0)
            && ls.initial_step > 0.0
            && ls.shrink > 0.0
            && ls.shrink < 1.0
            && ls.c1 > 0.0
            && ls.c1 < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Relative change of `J` fell below `ε`.
    Converged,
    MaxIter,
    /// No decrease is representable along the steepest-descent ray.
    Stalled,
    /// `N_r = 0`.
    NothingToOptimize,
    LineSearchFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub j: f64,
    pub grad_norm: f64,
    pub step: f64,
    pub beta: f64,
}

/// Row 0 holds the starting point; row `t` the state after iteration `t`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizerTrace {
    pub rows: Vec<TraceRow>,
    pub termination: Termination,
    pub start_index: usize,
}

impl OptimizerTrace {
    pub fn iterations(&self) -> usize {
        self.rows.len().saturating_sub(1)
    }

    pub fn final_j(&self) -> f64 {
        self.rows.last().map_or(f64::NAN, |r| r.j)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,J,grad_norm,step,beta\n");
        for (i, r) in self.rows.iter().enumerate() {
            let _ = writeln!(out, "{i},{:e},{:e},{:e},{:e}", r.j, r.grad_norm, r.step, r.beta);
        }
        out
    }
}

pub fn objective<C: Cascade>(chs: &C, ris: &RisState, gamma: &[f64]) -> Result<f64> {
    let h = chs.compound(&ris.varphi);
    let e_inv = checked_cholesky(&gram(&h))?.inverse();
    Ok(trace_weighted(&e_inv, gamma))
}

fn objective_and_gradient<C: Cascade>(chs: &C, ris: &RisState, gamma: &[f64]) -> Result<(f64, Vec<f64>)> {
    let h = chs.compound(&ris.varphi);
    let e_inv = checked_cholesky(&gram(&h))?.inverse();
    let j = trace_weighted(&e_inv, gamma);
    let mut weighted = e_inv.clone();
    for (k, g) in gamma.iter().enumerate() {
        weighted.column_mut(k).scale_mut(*g);
    }
    let g_mat: CMatrix = &weighted * &e_inv * &h;
    // (H₁₂ᵀ conj(vec G))_i = Σ_r conj(vecG_r) H₁₂[r, i]
    let proj = chs.h12().tr_mul(
        &g_mat
            .map(|z| z.conj())
            .reshape_generic(nalgebra::Dyn(g_mat.len()), nalgebra::Const::<1>),
    );
    let grad = proj.iter().zip(&ris.varphi).map(|(p, v)| 2.0 * (p * v).im).collect();
    Ok((j, grad))
}

pub fn gradient<C: Cascade>(chs: &C, ris: &RisState, gamma: &[f64]) -> Result<Vec<f64>> {
    objective_and_gradient(chs, ris, gamma).map(|(_, g)| g)
}

/// Worst componentwise deviation between the analytic gradient and central
/// differences, relative to the largest gradient component; absolute when
/// the gradient vanishes.
pub fn verify_gradient<C: Cascade>(chs: &C, ris: &RisState, gamma: &[f64], h: f64) -> Result<f64> {
    let analytic = gradient(chs, ris, gamma)?;
    let mut fd = Vec::with_capacity(ris.len());
    for i in 0..ris.len() {
        let mut plus = ris.phi.clone();
        let mut minus = ris.phi.clone();
        plus[i] += h;
        minus[i] -= h;
        let jp = objective(chs, &RisState::from_phases(plus), gamma)?;
        let jm = objective(chs, &RisState::from_phases(minus), gamma)?;
        fd.push((jp - jm) / (2.0 * h));
    }
    let scale = fd.iter().chain(&analytic).fold(0.0f64, |m, x| m.max(x.abs()));
    let worst = analytic.iter().zip(&fd).fold(0.0f64, |m, (a, f)| m.max((a - f).abs()));
    Ok(if scale < 1e-300 { worst } else { worst / scale })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn step_along(phi: &[f64], u: &[f64], mu: f64) -> RisState {
    RisState::from_phases(phi.iter().zip(u).map(|(p, d)| p + mu * d).collect())
}

enum Search {
    Accepted { state: RisState, j: f64, mu: f64 },
    Failed { negligible: bool },
}

fn line_search<C: Cascade>(
    chs: &C,
    gamma: &[f64],
    ris: &RisState,
    j: f64,
    g: &[f64],
    u: &[f64],
    ls: &LineSearch,
) -> Search {
    let umax = u.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let slope = dot(g, u);
    if umax == 0.0 || slope <= 0.0 {
        return Search::Failed { negligible: true };
    }
    let mut mu = ls.initial_step / umax;
    for _ in 0..=ls.max_shrinks {
        let trial = step_along(&ris.phi, u, mu);
        if let Ok(jt) = objective(chs, &trial, gamma) {
            if jt <= j - ls.c1 * mu * slope {
                return Search::Accepted {
                    state: trial,
                    j: jt,
                    mu,
                };
            }
        }
        mu *= ls.shrink;
    }
    let predicted = ls.c1 * (mu / ls.shrink) * slope;
    Search::Failed {
        negligible: predicted <= j.abs() * 4.0 * f64::EPSILON,
    }
}

/// Runs the conjugate-gradient loop from a given start.
pub fn optimize_from<C: Cascade>(
    chs: &C,
    gamma: &[f64],
    settings: &OptimizerSettings,
    start: RisState,
) -> Result<(RisState, OptimizerTrace)> {
    settings.validate()?;
    let n = chs.elements();
    if start.len() != n {
        return Err(Error::Dimension(format!("{} phases for {n} elements", start.len())));
    }
    let restart = settings.restart_period.unwrap_or(n).max(1);
    let (mut j, grad) = objective_and_gradient(chs, &start, gamma)?;
    let mut g: Vec<f64> = grad.iter().map(|x| -x).collect();
    let norm = |v: &[f64]| dot(v, v).sqrt();
    let mut rows = vec![TraceRow {
        j,
        grad_norm: norm(&g),
        step: 0.0,
        beta: 0.0,
    }];
    let trace = |rows: Vec<TraceRow>, termination| OptimizerTrace {
        rows,
        termination,
        start_index: 0,
    };
    if n == 0 {
        return Ok((start, trace(rows, Termination::NothingToOptimize)));
    }

    let mut ris = start;
    let mut u = g.clone();
    let mut g_prev: Option<Vec<f64>> = None;
    let mut since_restart = 0usize;
    for _ in 0..settings.max_iter {
        let mut beta = 0.0;
        if let Some(gp) = &g_prev {
            if since_restart < restart {
                let diff: Vec<f64> = g.iter().zip(gp).map(|(a, b)| a - b).collect();
                beta = (dot(&g, &diff) / dot(gp, gp)).max(0.0);
            }
        }
        if beta > 0.0 {
            u = g.iter().zip(&u).map(|(gi, ui)| gi + beta * ui).collect();
            if dot(&g, &u) <= 0.0 {
                beta = 0.0;
                u = g.clone();
            }
        } else {
            u = g.clone();
        }
        if beta == 0.0 {
            since_restart = 0;
        }

        let mut outcome = line_search(chs, gamma, &ris, j, &g, &u, &settings.line_search);
        if matches!(outcome, Search::Failed { .. }) && beta > 0.0 {
            beta = 0.0;
            since_restart = 0;
            u = g.clone();
            outcome = line_search(chs, gamma, &ris, j, &g, &u, &settings.line_search);
        }
        let (next, j_next, mu) = match outcome {
            Search::Accepted { state, j, mu } => (state, j, mu),
            Search::Failed { negligible: true } => {
                return Ok((ris, trace(rows, Termination::Stalled)));
            }
            Search::Failed { negligible: false } => {
                return Err(Error::NonConvergence {
                    trace: Box::new(trace(rows, Termination::LineSearchFailed)),
                });
            }
        };
        let (_, grad) = objective_and_gradient(chs, &next, gamma)?;
        g_prev = Some(std::mem::replace(&mut g, grad.iter().map(|x| -x).collect()));
        let rel = ((j - j_next) / j_next).abs();
        ris = next;
        j = j_next;
        since_restart += 1;
        rows.push(TraceRow {
            j,
            grad_norm: norm(&g),
            step: mu,
            beta,
        });
        if rel < settings.epsilon {
            return Ok((ris, trace(rows, Termination::Converged)));
        }
    }
    Ok((ris, trace(rows, Termination::MaxIter)))
}

/// Multi-start optimization; returns the best run and the ZF precoder for
/// the converged channel.
pub fn optimize<C: Cascade + Sync>(
    chs: &C,
    gamma: &[f64],
    p: f64,
    settings: &OptimizerSettings,
) -> Result<(RisState, PrecoderSolution, OptimizerTrace)> {
    settings.validate()?;
    let n = chs.elements();
    let runs: Vec<Result<(RisState, OptimizerTrace)>> = (0..settings.multi_start)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(settings.rng_seed, &[r as u64]);
            let start = RisState::random(&mut rng, n);
            optimize_from(chs, gamma, settings, start).map(|(s, mut t)| {
                t.start_index = r;
                (s, t)
            })
        })
        .collect();
    let mut best: Option<(RisState, OptimizerTrace)> = None;
    let mut first_err = None;
    for run in runs {
        match run {
            Ok((s, t)) => {
                if best.as_ref().is_none_or(|(_, b)| t.final_j() < b.final_j()) {
                    best = Some((s, t));
                }
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    let (ris, trace) = match (best, first_err) {
        (Some(b), _) => b,
        (None, Some(e)) => return Err(e),
        (None, None) => unreachable!("multi_start >= 1"),
    };
    let sol = zero_forcing(&chs.compound(&ris.varphi), gamma, p)?;
    Ok((ris, sol, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ChannelSet;
    use crate::rng::complex_normal;

    fn random_set(seed: u64, k: usize, m: usize, nr: usize, direct: f64) -> ChannelSet {
        let mut rng = stream(seed, &[]);
        let h_bu = CMatrix::from_fn(k, m, |_, _| complex_normal(&mut rng, direct));
        let h_br = CMatrix::from_fn(nr, m, |_, _| complex_normal(&mut rng, 1.0));
        let h_ru = CMatrix::from_fn(k, nr, |_, _| complex_normal(&mut rng, 1.0));
        ChannelSet::from_parts(h_bu, h_br, h_ru).unwrap()
    }

    #[test]
    fn identity_objective() {
        let chs = ChannelSet::from_parts(CMatrix::identity(2, 2), CMatrix::zeros(0, 2), CMatrix::zeros(2, 0)).unwrap();
        let j = objective(&chs, &RisState::from_phases(vec![]), &[1.0, 1.0]).unwrap();
        assert!((j - 2.0).abs() < 1e-15);
    }

    #[test]
    fn objective_matches_precoder() {
        for s in 0..20 {
            let chs = random_set(s, 2, 4, 8, 1.0);
            let mut rng = stream(s, &[9]);
            let ris = RisState::random(&mut rng, 8);
            let j = objective(&chs, &ris, &[1.0, 2.0]).unwrap();
            let sol = zero_forcing(&chs.compound(&ris.varphi), &[1.0, 2.0], 3.0).unwrap();
            assert!((j / (3.0 / sol.alpha_sq) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn objective_homogeneity() {
        let chs = random_set(1, 2, 4, 8, 1.0);
        let c = Complex64::from(2.5);
        let scaled = ChannelSet::from_parts(&chs.h_bu * c, &chs.h_br * c, chs.h_ru.clone()).unwrap();
        let ris = RisState::from_phases(vec![0.3; 8]);
        let a = objective(&chs, &ris, &[1.0, 1.0]).unwrap();
        let b = objective(&scaled, &ris, &[1.0, 1.0]).unwrap();
        assert!((a / b - 6.25).abs() < 1e-10);
    }

    #[test]
    fn no_ris_leg_zero_gradient() {
        let mut chs = random_set(2, 2, 4, 8, 1.0);
        chs = ChannelSet::from_parts(chs.h_bu, chs.h_br, CMatrix::zeros(2, 8)).unwrap();
        let ris = RisState::from_phases(vec![0.1; 8]);
        assert!(gradient(&chs, &ris, &[1.0, 1.0]).unwrap().iter().all(|g| *g == 0.0));
        assert!(verify_gradient(&chs, &ris, &[1.0, 1.0], 1e-6).unwrap() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for s in 0..5 {
            let chs = random_set(10 + s, 2, 4, 8, 1.0);
            let ris = RisState::random(&mut stream(s, &[1]), 8);
            let err = verify_gradient(&chs, &ris, &[1.0, 0.7], 1e-6).unwrap();
            assert!(err < 1e-6, "seed {s}: {err}");
        }
    }

    #[test]
    fn finite_difference_error_is_second_order() {
        let chs = random_set(21, 2, 4, 8, 1.0);
        let ris = RisState::random(&mut stream(21, &[1]), 8);
        let e: Vec<f64> = [1e-2, 1e-3, 1e-4]
            .iter()
            .map(|h| verify_gradient(&chs, &ris, &[1.0, 1.0], *h).unwrap())
            .collect();
        assert!(e[0] / e[1] > 30.0 && e[1] / e[2] > 30.0, "{e:?}");
    }

    #[test]
    fn gradient_is_periodic() {
        let chs = random_set(3, 2, 4, 8, 1.0);
        let phi: Vec<f64> = (0..8).map(|i| 0.2 * i as f64).collect();
        let a = gradient(&chs, &RisState::from_phases(phi.clone()), &[1.0, 1.0]).unwrap();
        let mut shifted = phi;
        shifted[3] += std::f64::consts::TAU;
        let b = gradient(&chs, &RisState::from_phases(shifted), &[1.0, 1.0]).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }

    #[test]
    fn empty_ris_returns_immediately() {
        let chs = random_set(4, 2, 4, 0, 1.0);
        let (ris, sol, trace) = optimize(&chs, &[1.0, 1.0], 1.0, &OptimizerSettings::default()).unwrap();
        assert!(ris.is_empty());
        assert_eq!(trace.iterations(), 0);
        assert_eq!(trace.termination, Termination::NothingToOptimize);
        assert!((sol.j - objective(&chs, &ris, &[1.0, 1.0]).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn monotone_and_deterministic() {
        let chs = random_set(5, 2, 4, 64, 0.01);
        let settings = OptimizerSettings {
            rng_seed: 7,
            ..Default::default()
        };
        let (a, _, ta) = optimize(&chs, &[1.0, 1.0], 1.0, &settings).unwrap();
        let (b, _, tb) = optimize(&chs, &[1.0, 1.0], 1.0, &settings).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        assert!(ta.rows.windows(2).all(|w| w[1].j <= w[0].j));
        assert!(ta.final_j() < ta.rows[0].j);
        assert!(ta.to_csv().starts_with("iter,J,grad_norm,step,beta\n"));
    }

    #[test]
    fn beats_random_search() {
        let chs = random_set(6, 2, 4, 8, 0.3);
        let gamma = [1.0, 1.0];
        let settings = OptimizerSettings {
            multi_start: 4,
            rng_seed: 6,
            ..Default::default()
        };
        let (_, sol, _) = optimize(&chs, &gamma, 1.0, &settings).unwrap();
        let mut rng = stream(6, &[1000]);
        let best = (0..10_000)
            .map(|_| objective(&chs, &RisState::random(&mut rng, 8), &gamma).unwrap())
            .fold(f64::INFINITY, f64::min);
        assert!(sol.j <= best * (1.0 + 1e-9), "{} vs {}", sol.j, best);
    }

    #[test]
    fn rejects_invalid_settings() {
        let chs = random_set(7, 2, 4, 4, 1.0);
        let bad = OptimizerSettings {
            epsilon: 0.0,
            ..Default::default()
        };
        assert!(matches!(optimize(&chs, &[1.0, 1.0], 1.0, &bad), Err(Error::Config(_))));
    }
}
