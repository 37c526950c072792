//! Uplink least-squares estimation of the per-user cascade blocks.
//!
//! User `k` holds `V_k = [h_bu,k  H_brᵀ diag(h_ru,k)]` (`M × (N_r+1)`),
//! observed as `Y_k = √P V_k Ω + N_k` over `T` slots. With `ΩΩᴴ = T·I` the
//! LS estimate is `V̂_k = Y_k Ωᴴ / (T √P)` and every entry carries an
//! independent error of variance `σ² / (P T)`.
//!
//! Users train in disjoint slots, so there is no pilot contamination.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{Cascade, ChannelSet};
use crate::optimizer::RisState;
use crate::rng::{complex_normal, stream};
use crate::{CMatrix, CVector, Complex64, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PilotFamily {
    Dft,
    Hadamard,
}

impl std::str::FromStr for PilotFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dft" => Ok(PilotFamily::Dft),
            "hadamard" => Ok(PilotFamily::Hadamard),
            _ => Err(Error::Config(format!("unknown pilot family {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PilotPlan {
    /// Slots per user for the shared schedule `omega`.
    pub t: usize,
    /// `(N_r+1) × T` schedule; row 0 is the user symbol, rows `1..` the RIS
    /// phase pattern.
    pub omega: CMatrix,
    pub per_user_power: Vec<f64>,
    pub per_user_t: Vec<usize>,
    pub family: PilotFamily,
}

impl PilotPlan {
    pub fn elements(&self) -> usize {
        self.omega.nrows() - 1
    }

    pub fn users(&self) -> usize {
        self.per_user_t.len()
    }

    /// Per-entry LS error variance of user `k`.
    pub fn entry_variance(&self, k: usize, noise_power: f64) -> f64 {
        noise_power / (self.per_user_power[k] * self.per_user_t[k] as f64)
    }

    /// Replaces per-user powers and slot counts (robust allocation).
    pub fn with_allocation(mut self, power: Vec<f64>, t: Vec<usize>) -> Result<Self> {
        let n = self.elements();
        if power.len() != t.len() {
            return Err(Error::Dimension("allocation vectors differ in length".into()));
        }
        if let Some(&bad) = t.iter().find(|&&t| t < n + 1) {
            return Err(Error::Identifiability {
                pilots: bad,
                unknowns: n + 1,
            });
        }
        if power.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(Error::Config("pilot powers must be positive".into()));
        }
        self.per_user_power = power;
        self.per_user_t = t;
        Ok(self)
    }

    fn schedule_for(&self, k: usize) -> Result<CMatrix> {
        if self.per_user_t[k] == self.t {
            Ok(self.omega.clone())
        } else {
            pilot_matrix(self.elements(), self.per_user_t[k], self.family)
        }
    }
}

fn pilot_matrix(nr: usize, t: usize, family: PilotFamily) -> Result<CMatrix> {
    if t < nr + 1 {
        return Err(Error::Identifiability {
            pilots: t,
            unknowns: nr + 1,
        });
    }
    match family {
        PilotFamily::Dft => Ok(CMatrix::from_fn(nr + 1, t, |i, s| {
            let angle = -std::f64::consts::TAU * ((i * s) % t) as f64 / t as f64;
            Complex64::from_polar(1.0, angle)
        })),
        PilotFamily::Hadamard => {
            if !t.is_power_of_two() {
                return Err(Error::Config(format!(
                    "Hadamard pilots need a power-of-two slot count, got {t}"
                )));
            }
            // Sylvester construction: H[i, s] = (−1)^{popcount(i & s)}
            Ok(CMatrix::from_fn(nr + 1, t, |i, s| {
                Complex64::from(if (i & s).count_ones() % 2 == 0 { 1.0 } else { -1.0 })
            }))
        }
    }
}

/// Builds an orthogonal schedule shared by `users` users at power `p_ul`.
pub fn design_pilots(nr: usize, t: usize, family: PilotFamily, users: usize, p_ul: f64) -> Result<PilotPlan> {
    if !(p_ul.is_finite() && p_ul > 0.0) {
        return Err(Error::Config("pilot power must be positive".into()));
    }
    Ok(PilotPlan {
        t,
        omega: pilot_matrix(nr, t, family)?,
        per_user_power: vec![p_ul; users],
        per_user_t: vec![t; users],
        family,
    })
}

/// `V_k` for user `k`.
pub fn cascade_block(chs: &ChannelSet, k: usize) -> CMatrix {
    let m = chs.h_bu.ncols();
    let nr = chs.h_br.nrows();
    CMatrix::from_fn(m, nr + 1, |l, c| {
        if c == 0 {
            chs.h_bu[(k, l)]
        } else {
            chs.h_br[(c - 1, l)] * chs.h_ru[(k, c - 1)]
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimationOutcome {
    /// `V̂_k`, one `M × (N_r+1)` block per user.
    pub v_hat: Vec<CMatrix>,
    /// `E⁽¹⁾[k, l] = (V̂_k − V_k)[l, 0]`.
    pub e1: CMatrix,
    /// Column `k` is `vec(((V̂_k − V_k)[:, 1..])ᵀ)`, size `(M·N_r) × K`.
    pub e2: CMatrix,
    pub predicted_variance: Vec<f64>,
    pub seed: u64,
}

impl EstimationOutcome {
    fn from_blocks(chs: &ChannelSet, v_hat: Vec<CMatrix>, predicted_variance: Vec<f64>, seed: u64) -> Self {
        let k = v_hat.len();
        let m = chs.h_bu.ncols();
        let nr = chs.h_br.nrows();
        let mut e1 = CMatrix::zeros(k, m);
        let mut e2 = CMatrix::zeros(m * nr, k);
        for (kk, vh) in v_hat.iter().enumerate() {
            let err = vh - cascade_block(chs, kk);
            for l in 0..m {
                e1[(kk, l)] = err[(l, 0)];
                for i in 0..nr {
                    e2[(l * nr + i, kk)] = err[(l, 1 + i)];
                }
            }
        }
        EstimationOutcome {
            v_hat,
            e1,
            e2,
            predicted_variance,
            seed,
        }
    }

    pub fn users(&self) -> usize {
        self.v_hat.len()
    }

    /// Estimated cascade usable by the optimizer.
    pub fn estimated_channel(&self) -> EstimatedChannel {
        let k = self.users();
        let (m, cols) = self.v_hat.first().map_or((0, 1), |v| v.shape());
        let nr = cols - 1;
        let h_bu = CMatrix::from_fn(k, m, |kk, l| self.v_hat[kk][(l, 0)]);
        let h12 = CMatrix::from_fn(k * m, nr, |r, i| self.v_hat[r % k][(r / k, 1 + i)]);
        EstimatedChannel { h_bu, h12 }
    }

    /// `E = E⁽¹⁾ + ((I_M ⊗ ϕᵀ) E⁽²⁾)ᵀ`.
    pub fn error_matrix(&self, ris: &RisState) -> CMatrix {
        let (k, m) = self.e1.shape();
        let nr = ris.len();
        let mut e = self.e1.clone();
        for kk in 0..k {
            for l in 0..m {
                let s: Complex64 = (0..nr).map(|i| ris.varphi[i] * self.e2[(l * nr + i, kk)]).sum();
                e[(kk, l)] += s;
            }
        }
        e
    }
}

/// `Ĥ_bu` and `Ĥ₁₂` rearranged from the `V̂_k` blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatedChannel {
    pub h_bu: CMatrix,
    pub h12: CMatrix,
}

impl Cascade for EstimatedChannel {
    fn direct(&self) -> &CMatrix {
        &self.h_bu
    }

    fn h12(&self) -> &CMatrix {
        &self.h12
    }
}

fn check_plan(chs: &ChannelSet, plan: &PilotPlan) -> Result<()> {
    if plan.elements() != chs.h_br.nrows() || plan.users() != chs.h_bu.nrows() {
        return Err(Error::Dimension(format!(
            "plan for {} users / {} elements, channel has {} / {}",
            plan.users(),
            plan.elements(),
            chs.h_bu.nrows(),
            chs.h_br.nrows()
        )));
    }
    Ok(())
}

fn noise_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, var: f64) -> CMatrix {
    CMatrix::from_fn(rows, cols, |_, _| complex_normal(rng, var))
}

/// Full pilot simulation per user with independent noise streams.
pub fn simulate_uplink_ls(
    chs: &ChannelSet,
    plan: &PilotPlan,
    noise_power: f64,
    seed: u64,
) -> Result<EstimationOutcome> {
    check_plan(chs, plan)?;
    let m = chs.h_bu.ncols();
    let mut v_hat = Vec::with_capacity(plan.users());
    for k in 0..plan.users() {
        let omega = plan.schedule_for(k)?;
        let t = omega.ncols();
        let sqrt_p = plan.per_user_power[k].sqrt();
        let v = cascade_block(chs, k);
        let mut rng = stream(seed, &[k as u64]);
        let y = &v * &omega * Complex64::from(sqrt_p) + noise_matrix(&mut rng, m, t, noise_power);
        v_hat.push(y * omega.adjoint() / Complex64::from(t as f64 * sqrt_p));
    }
    let var = (0..plan.users()).map(|k| plan.entry_variance(k, noise_power)).collect();
    Ok(EstimationOutcome::from_blocks(chs, v_hat, var, seed))
}

/// Draws the LS error directly from its distribution.
pub fn inject_error_model(
    chs: &ChannelSet,
    plan: &PilotPlan,
    noise_power: f64,
    seed: u64,
) -> Result<EstimationOutcome> {
    check_plan(chs, plan)?;
    let var: Vec<f64> = (0..plan.users()).map(|k| plan.entry_variance(k, noise_power)).collect();
    let v_hat = (0..plan.users())
        .map(|k| {
            let v = cascade_block(chs, k);
            let mut rng = stream(seed, &[k as u64]);
            let n = noise_matrix(&mut rng, v.nrows(), v.ncols(), var[k]);
            v + n
        })
        .collect();
    Ok(EstimationOutcome::from_blocks(chs, v_hat, var, seed))
}

/// `Ĥ` with row `k = (V̂_k[:,0] + V̂_k[:,1..] ϕ)ᵀ`.
pub fn reconstruct_channel(outcome: &EstimationOutcome, ris: &RisState) -> Result<CMatrix> {
    let k = outcome.users();
    let (m, cols) = outcome.v_hat.first().map_or((0, 1), |v| v.shape());
    if cols - 1 != ris.len() {
        return Err(Error::Dimension(format!(
            "{} phases for {} elements",
            ris.len(),
            cols - 1
        )));
    }
    let mut aug = Vec::with_capacity(cols);
    aug.push(Complex64::from(1.0));
    aug.extend_from_slice(&ris.varphi);
    let aug = CVector::from_vec(aug);
    let mut h = CMatrix::zeros(k, m);
    for (kk, vh) in outcome.v_hat.iter().enumerate() {
        h.row_mut(kk).copy_from(&(vh * &aug).transpose());
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::assemble_compound;
    use crate::linalg::max_abs_diff;

    fn random_set(seed: u64, k: usize, m: usize, nr: usize) -> ChannelSet {
        let mut rng = stream(seed, &[]);
        let h_bu = noise_matrix(&mut rng, k, m, 1.0);
        let h_br = noise_matrix(&mut rng, nr, m, 1.0);
        let h_ru = noise_matrix(&mut rng, k, nr, 1.0);
        ChannelSet::from_parts(h_bu, h_br, h_ru).unwrap()
    }

    fn gram_is_scaled_identity(omega: &CMatrix, t: f64) -> bool {
        let g = omega * omega.adjoint();
        max_abs_diff(&g, &(CMatrix::identity(g.nrows(), g.nrows()) * Complex64::from(t))) < 1e-10
    }

    #[test]
    fn dft_plan() {
        let p = design_pilots(3, 4, PilotFamily::Dft, 1, 1.0).unwrap();
        assert!(gram_is_scaled_identity(&p.omega, 4.0));
        assert!((p.omega[(1, 1)] - Complex64::new(0.0, -1.0)).norm() < 1e-15);
        assert!(p.omega.row(0).iter().all(|z| *z == Complex64::from(1.0)));
    }

    #[test]
    fn hadamard_plan() {
        let p = design_pilots(3, 4, PilotFamily::Hadamard, 1, 1.0).unwrap();
        assert!(gram_is_scaled_identity(&p.omega, 4.0));
        assert!(p.omega.iter().all(|z| z.im == 0.0 && z.re.abs() == 1.0));
        assert!(p.omega.row(0).iter().all(|z| *z == Complex64::from(1.0)));
        let p = design_pilots(5, 8, PilotFamily::Hadamard, 1, 1.0).unwrap();
        assert!(gram_is_scaled_identity(&p.omega, 8.0));
        assert!(matches!(
            design_pilots(3, 6, PilotFamily::Hadamard, 1, 1.0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn overlong_dft_plans_stay_orthogonal() {
        for (nr, t) in [(3, 7), (10, 16), (63, 64)] {
            let p = design_pilots(nr, t, PilotFamily::Dft, 2, 1.0).unwrap();
            assert!(gram_is_scaled_identity(&p.omega, t as f64));
        }
    }

    #[test]
    fn too_few_pilots() {
        assert!(matches!(
            design_pilots(3, 3, PilotFamily::Dft, 1, 1.0),
            Err(Error::Identifiability { pilots: 3, unknowns: 4 })
        ));
    }

    #[test]
    fn noiseless_ls_is_exact() {
        let chs = random_set(1, 2, 4, 6);
        let plan = design_pilots(6, 8, PilotFamily::Hadamard, 2, 0.3).unwrap();
        let out = simulate_uplink_ls(&chs, &plan, 0.0, 5).unwrap();
        for k in 0..2 {
            assert!(max_abs_diff(&out.v_hat[k], &cascade_block(&chs, k)) < 1e-12);
        }
        let ris = RisState::from_phases((0..6).map(|i| i as f64).collect());
        let h = reconstruct_channel(&out, &ris).unwrap();
        assert!(max_abs_diff(&h, &assemble_compound(&chs, &ris.varphi)) < 1e-12);
        let est = out.estimated_channel();
        assert!(max_abs_diff(&est.h12, &chs.h12) < 1e-12);
        assert!(max_abs_diff(&est.compound(&ris.varphi), &h) < 1e-12);
    }

    #[test]
    fn error_arrangement_identity() {
        let chs = random_set(2, 2, 3, 5);
        let plan = design_pilots(5, 6, PilotFamily::Dft, 2, 1.0).unwrap();
        let out = inject_error_model(&chs, &plan, 0.2, 9).unwrap();
        let ris = RisState::from_phases(vec![0.4, -1.0, 2.0, 3.3, 0.0]);
        let diff = reconstruct_channel(&out, &ris).unwrap() - assemble_compound(&chs, &ris.varphi);
        assert!(max_abs_diff(&diff, &out.error_matrix(&ris)) < 1e-13);
    }

    #[test]
    fn scalar_case_by_hand() {
        let c = |re: f64, im: f64| Complex64::new(re, im);
        let chs = ChannelSet::from_parts(
            CMatrix::from_element(1, 1, c(1.0, 0.0)),
            CMatrix::from_element(1, 1, c(0.0, 2.0)),
            CMatrix::from_element(1, 1, c(3.0, 0.0)),
        )
        .unwrap();
        let plan = design_pilots(1, 2, PilotFamily::Hadamard, 1, 4.0).unwrap();
        let out = simulate_uplink_ls(&chs, &plan, 0.0, 0).unwrap();
        assert!((out.v_hat[0][(0, 0)] - c(1.0, 0.0)).norm() < 1e-15);
        assert!((out.v_hat[0][(0, 1)] - c(0.0, 6.0)).norm() < 1e-15);
        let h = reconstruct_channel(&out, &RisState::from_phases(vec![std::f64::consts::FRAC_PI_2])).unwrap();
        // 1 + j·6j = −5
        assert!((h[(0, 0)] - c(-5.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn injected_variance_scales_with_slots() {
        let short = design_pilots(3, 4, PilotFamily::Dft, 1, 2.0).unwrap();
        let long = design_pilots(3, 8, PilotFamily::Dft, 1, 2.0).unwrap();
        assert!((short.entry_variance(0, 1.0) / long.entry_variance(0, 1.0) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn heterogeneous_allocation_uses_own_schedule() {
        let chs = random_set(3, 2, 2, 3);
        let plan = design_pilots(3, 4, PilotFamily::Dft, 2, 1.0)
            .unwrap()
            .with_allocation(vec![1.0, 2.0], vec![4, 6])
            .unwrap();
        let out = simulate_uplink_ls(&chs, &plan, 0.0, 1).unwrap();
        assert!(max_abs_diff(&out.v_hat[1], &cascade_block(&chs, 1)) < 1e-12);
        assert!((plan.entry_variance(1, 1.0) - 1.0 / 12.0).abs() < 1e-15);
        assert!(plan.clone().with_allocation(vec![1.0, 1.0], vec![4, 3]).is_err());
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let chs = random_set(4, 2, 2, 3);
        let plan = design_pilots(4, 5, PilotFamily::Dft, 2, 1.0).unwrap();
        assert!(matches!(
            simulate_uplink_ls(&chs, &plan, 1.0, 0),
            Err(Error::Dimension(_))
        ));
    }
}
