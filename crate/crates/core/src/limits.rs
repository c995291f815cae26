//! Verification of the large-time limit theorems.
//!
//! Everything here reduces to the deterministic oracles: the Kolmogorov
//! survival asymptotics `t P_μ(X_t ≠ 0) → ⟨μ,φ⟩/c0`, the uniform ratio
//! `v_t ≈ b(t) φ` with `b(t) = ⟨v_t, φ*⟩_m`, the slope `1/(t b(t)) → c0`,
//! the conditional Laplace transform of `X_t(f)/t` converging to the
//! exponential law with mean `m0 = c0 ⟨φ*, f⟩_m`, its size-biased square
//! `(1 + c0 θ)^{-2}` on the spine side, the centered-functional second
//! moment vanishing, and the spine ergodic average.  The only Monte Carlo
//! check is the distributional Kolmogorov–Smirnov comparison against the
//! unit exponential.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::cumulant::{self, TestFunctional};
use crate::error::{Error, Result};
use crate::model::{psi0_vec, Model};
use crate::pathsim::{self, SimConfig};
use crate::spectral::{self, m_dot, SpectralData};
use crate::stats;

/// One limit check: computed values along a grid against their limits.
#[derive(Debug, Clone, Serialize)]
pub struct LimitReport {
    pub name: String,
    pub grid_label: String,
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub limits: Vec<f64>,
    pub rel_errors: Vec<f64>,
    pub tolerance: f64,
    pub pass: bool,
    pub notes: Vec<String>,
}

impl LimitReport {
    fn new(
        name: &str,
        grid_label: &str,
        grid: Vec<f64>,
        values: Vec<f64>,
        limits: Vec<f64>,
        tolerance: f64,
    ) -> LimitReport {
        let rel_errors: Vec<f64> = values
            .iter()
            .zip(limits.iter())
            .map(|(v, l)| {
                if l.abs() > 1e-300 {
                    (v - l).abs() / l.abs()
                } else {
                    (v - l).abs()
                }
            })
            .collect();
        LimitReport {
            name: name.into(),
            grid_label: grid_label.into(),
            grid,
            values,
            limits,
            rel_errors,
            tolerance,
            pass: false,
            notes: Vec::new(),
        }
    }

    /// `|value - limit|` non-increasing along the grid, with one slip below
    /// the absolute floor tolerated.
    fn trend_decreasing(&self, floor: f64) -> bool {
        let mut slips = 0;
        let devs: Vec<f64> = self
            .values
            .iter()
            .zip(self.limits.iter())
            .map(|(v, l)| (v - l).abs())
            .collect();
        for w in devs.windows(2) {
            if w[1] > w[0] + 1e-15 {
                if w[1] < floor {
                    slips += 1;
                } else {
                    return false;
                }
            }
        }
        slips <= 1
    }
}

/// Default deterministic large-time grid.
pub fn default_t_grid() -> Vec<f64> {
    vec![10.0, 10.0f64.powf(1.5), 100.0, 10.0f64.powf(2.5), 1000.0, 2000.0]
}

const V_TOL: f64 = 1e-8;

/// `t P_μ(X_t ≠ 0)` against `⟨μ,φ⟩/c0`.
pub fn kolmogorov_check(
    model: &Model,
    sd: &SpectralData,
    mu: &DVector<f64>,
    t_grid: &[f64],
    tolerance: f64,
) -> Result<LimitReport> {
    let vs = cumulant::extinction_v_grid(model, t_grid, V_TOL)?;
    let limit = mu.dot(&sd.phi_vec()) / sd.c0;
    let values: Vec<f64> = t_grid
        .iter()
        .zip(vs.iter())
        .map(|(&t, v)| t * -(-mu.dot(v)).exp_m1())
        .collect();
    let limits = vec![limit; values.len()];
    let mut rep = LimitReport::new("kolmogorov", "t", t_grid.to_vec(), values, limits, tolerance);
    let trend = rep.trend_decreasing(1e-4);
    rep.notes.push(format!("deviation_trend_decreasing={trend}"));
    rep.pass = trend && *rep.rel_errors.last().unwrap() <= tolerance;
    Ok(rep)
}

/// `sup_x |v_t(x)/(b(t) φ(x)) - 1|` against 0, with `b(t) = ⟨v_t, φ*⟩_m`.
pub fn uniform_ratio_check(
    model: &Model,
    sd: &SpectralData,
    t_grid: &[f64],
    tolerance: f64,
) -> Result<LimitReport> {
    let vs = cumulant::extinction_v_grid(model, t_grid, V_TOL)?;
    let phi_star = sd.phi_star_vec();
    let values: Vec<f64> = vs
        .iter()
        .map(|v| {
            let b = m_dot(&model.space.m, v, &phi_star);
            (0..model.n())
                .map(|x| (v[x] / (b * sd.phi[x]) - 1.0).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    let limits = vec![0.0; values.len()];
    let mut rep =
        LimitReport::new("uniform_ratio", "t", t_grid.to_vec(), values, limits, tolerance);
    // Convergence-check diagnostic: sup_x v_t(x)/phi(x) -> 0.
    let sup_ratio: Vec<f64> = vs
        .iter()
        .map(|v| {
            (0..model.n())
                .map(|x| v[x] / sd.phi[x])
                .fold(0.0, f64::max)
        })
        .collect();
    rep.notes.push(format!(
        "sup_phi_inv_v_first={:.3e} sup_phi_inv_v_last={:.3e}",
        sup_ratio.first().unwrap(),
        sup_ratio.last().unwrap()
    ));
    rep.pass = *rep.values.last().unwrap() <= tolerance
        && *sup_ratio.last().unwrap() < sup_ratio.first().unwrap() + 1e-12;
    Ok(rep)
}

/// `1/(t b(t))` against `c0`, plus the derivative identity
/// `db/dt = -⟨Ψ0(v_t), φ*⟩_m` checked by a forward difference at
/// `t ∈ {5, 50}` (relative 1e-3).
pub fn bt_slope_check(
    model: &Model,
    sd: &SpectralData,
    t_grid: &[f64],
    tolerance: f64,
) -> Result<LimitReport> {
    let vs = cumulant::extinction_v_grid(model, t_grid, V_TOL)?;
    let phi_star = sd.phi_star_vec();
    let values: Vec<f64> = t_grid
        .iter()
        .zip(vs.iter())
        .map(|(&t, v)| 1.0 / (t * m_dot(&model.space.m, v, &phi_star)))
        .collect();
    let limits = vec![sd.c0; values.len()];
    let mut rep = LimitReport::new("bt_slope", "t", t_grid.to_vec(), values, limits, tolerance);
    let mut derivative_ok = true;
    let h = 1e-3;
    for &t in &[5.0, 50.0] {
        let v = cumulant::extinction_v(model, t, V_TOL)?;
        let v_h = cumulant::cumulant_vt(model, &v, h, 1e-10)?;
        let fd = (m_dot(&model.space.m, &v_h, &phi_star)
            - m_dot(&model.space.m, &v, &phi_star))
            / h;
        let exact = -m_dot(&model.space.m, &psi0_vec(model, &v), &phi_star);
        let rel = (fd - exact).abs() / exact.abs();
        derivative_ok &= rel <= 1e-3;
        rep.notes
            .push(format!("db_dt_identity_t{t}: fd={fd:.6e} exact={exact:.6e} rel={rel:.2e}"));
    }
    rep.pass = derivative_ok && *rep.rel_errors.last().unwrap() <= tolerance;
    Ok(rep)
}

/// Conditional Laplace transform of `X_t(f)/t` on survival,
/// `(e^{-⟨μ,V_t(θf/t)⟩} - e^{-⟨μ,v_t⟩}) / (1 - e^{-⟨μ,v_t⟩})`, against
/// `1/(1 + m0 θ)` with `m0 = c0 ⟨φ*, f⟩_m`.
pub fn yaglom_laplace_check(
    model: &Model,
    sd: &SpectralData,
    mu: &DVector<f64>,
    f: &DVector<f64>,
    t: f64,
    theta_grid: &[f64],
    tolerance: f64,
) -> Result<LimitReport> {
    let v = cumulant::extinction_v(model, t, V_TOL)?;
    let muv = mu.dot(&v);
    let m0 = sd.c0 * m_dot(&model.space.m, &sd.phi_star_vec(), f);
    let mut values = Vec::with_capacity(theta_grid.len());
    let mut limits = Vec::with_capacity(theta_grid.len());
    for &theta in theta_grid {
        let vt = cumulant::cumulant_vt(model, &(f * (theta / t)), t, 1e-10)?;
        let muvt = mu.dot(&vt);
        values.push(((-muvt).exp() - (-muv).exp()) / -(-muv).exp_m1());
        limits.push(1.0 / (1.0 + m0 * theta));
    }
    let mut rep = LimitReport::new(
        "yaglom_laplace",
        "theta",
        theta_grid.to_vec(),
        values,
        limits,
        tolerance,
    );
    rep.notes.push(format!("t={t} m0={m0:.12}"));
    rep.pass = rep.rel_errors.iter().all(|e| *e <= tolerance);
    Ok(rep)
}

/// Spine Laplace limit: `N_μ[w_t(φ) e^{-θ w_t(φ)/t}]/⟨μ,φ⟩` against
/// `(1 + c0 θ)^{-2}`.
pub fn spine_w_check(
    model: &Model,
    sd: &SpectralData,
    mu: &DVector<f64>,
    t: f64,
    theta_grid: &[f64],
    tolerance: f64,
) -> Result<LimitReport> {
    let phi = sd.phi_vec();
    let mu_phi = mu.dot(&phi);
    let mut values = Vec::with_capacity(theta_grid.len());
    let mut limits = Vec::with_capacity(theta_grid.len());
    for &theta in theta_grid {
        let value = if theta == 0.0 {
            1.0
        } else {
            let kf = TestFunctional::terminal(t, &phi * (theta / t))?;
            let mut sol = cumulant::occupation_u(model, &kf, cumulant::default_grid_step(t))?;
            cumulant::first_variation(model, &phi, mu, &mut sol)? / mu_phi
        };
        values.push(value);
        let d = 1.0 + sd.c0 * theta;
        limits.push(1.0 / (d * d));
    }
    let mut rep = LimitReport::new(
        "spine_w",
        "theta",
        theta_grid.to_vec(),
        values,
        limits,
        tolerance,
    );
    rep.notes.push(format!("t={t}"));
    rep.pass = rep.rel_errors.iter().all(|e| *e <= tolerance);
    Ok(rep)
}

/// Centered second moment on survival:
/// `P_μ[(X_t(f̃)/t)² | X_t ≠ 0]` with `f̃ = f - ⟨φ*,f⟩_m φ`, against 0.
pub fn centered_vanish_check(
    model: &Model,
    sd: &SpectralData,
    mu: &DVector<f64>,
    f: &DVector<f64>,
    t_grid: &[f64],
    tolerance: f64,
) -> Result<LimitReport> {
    let centered = f - sd.phi_vec() * m_dot(&model.space.m, &sd.phi_star_vec(), f);
    let mut values = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        if centered.amax() < 1e-14 {
            values.push(0.0);
            continue;
        }
        let m2 = cumulant::moment_second(model, mu, t, &centered, &centered)?;
        let surv = cumulant::survival_prob(model, mu, t)?;
        values.push(m2 / (t * t * surv));
    }
    let limits = vec![0.0; values.len()];
    let mut rep = LimitReport::new(
        "centered_vanish",
        "t",
        t_grid.to_vec(),
        values,
        limits,
        tolerance,
    );
    let decreasing = rep.values.windows(2).all(|w| w[1] <= w[0] + 1e-15);
    rep.notes.push(format!("decreasing={decreasing}"));
    rep.pass = decreasing && *rep.values.last().unwrap() <= tolerance;
    Ok(rep)
}

/// Ergodic average on the spine: the exact `L²(Ṗ_x)` error of
/// `∫_0^1 F(ξ_{ut}, u) du` against `∫_0^1 ⟨F(·,u), φφ*⟩_m du`, maximized
/// over starting sites, by double quadrature over the spine kernel.
pub fn ergodic_check(
    model: &Model,
    sd: &SpectralData,
    f: &dyn Fn(usize, f64) -> f64,
    t_grid: &[f64],
    tolerance: f64,
) -> Result<LimitReport> {
    ergodic_check_resolution(model, sd, f, t_grid, tolerance, 400)
}

/// Same with an explicit quadrature resolution (used by convergence tests).
pub(crate) fn ergodic_check_resolution(
    model: &Model,
    sd: &SpectralData,
    f: &dyn Fn(usize, f64) -> f64,
    t_grid: &[f64],
    tolerance: f64,
    k: usize,
) -> Result<LimitReport> {
    let n = model.n();
    let qdot = spectral::spine_generator_with(model, sd);
    let h = 1.0 / k as f64;
    // c_F = int <F(.,u), phi phi*>_m du (Simpson).
    let weight = DVector::from_fn(n, |x, _| sd.phi[x] * sd.phi_star[x] * model.space.m[x]);
    let fvals: Vec<DVector<f64>> = (0..=k)
        .map(|j| DVector::from_fn(n, |x, _| f(x, j as f64 * h)))
        .collect();
    let cf = {
        let vals: Vec<f64> = fvals.iter().map(|fv| fv.dot(&weight)).collect();
        let mut acc = vals[0] + vals[k];
        for (j, v) in vals.iter().enumerate().take(k).skip(1) {
            acc += if j % 2 == 1 { 4.0 * v } else { 2.0 * v };
        }
        acc * h / 3.0
    };
    let mut values = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let e: DMatrix<f64> = (&qdot * (t * h)).exp();
        let mut powers: Vec<DMatrix<f64>> = Vec::with_capacity(k + 1);
        powers.push(DMatrix::identity(n, n));
        for j in 1..=k {
            powers.push(&powers[j - 1] * &e);
        }
        let mut worst = 0.0f64;
        for x in 0..n {
            // First moment: int P_u[x,.] F(., u) du (trapezoid).
            let mut first = 0.0;
            for j in 0..=k {
                let w = if j == 0 || j == k { 0.5 } else { 1.0 };
                let row = powers[j].row(x);
                let val: f64 = (0..n).map(|y| row[y] * fvals[j][y]).sum();
                first += w * val * h;
            }
            // Second moment: double trapezoid with the Markov factorization
            // E[F(xi_ut) F(xi_vt)] for u <= v.
            let mut second = 0.0;
            for i in 0..=k {
                let row: Vec<f64> = (0..n).map(|y| powers[i][(x, y)] * fvals[i][y]).collect();
                for j in i..=k {
                    let wij = if i == j { 0.5 } else { 1.0 }
                        * if i == 0 || i == k { 0.5 } else { 1.0 }
                        * if j == 0 || j == k { 0.5 } else { 1.0 };
                    let inner: f64 = (0..n)
                        .map(|y| {
                            let tail: f64 =
                                (0..n).map(|z| powers[j - i][(y, z)] * fvals[j][z]).sum();
                            row[y] * tail
                        })
                        .sum();
                    second += 2.0 * wij * inner * h * h;
                }
            }
            worst = worst.max(second - 2.0 * cf * first + cf * cf);
        }
        values.push(worst.max(0.0));
    }
    let limits = vec![0.0; values.len()];
    let mut rep = LimitReport::new("ergodic", "t", t_grid.to_vec(), values, limits, tolerance);
    let decreasing = rep.values.windows(2).all(|w| w[1] <= w[0] + 1e-12);
    rep.notes.push(format!("decreasing={decreasing} c_F={cf:.6}"));
    rep.pass = decreasing && *rep.values.last().unwrap() <= tolerance;
    Ok(rep)
}

/// Result of the distributional Yaglom check.
#[derive(Debug, Clone, Serialize)]
pub struct YaglomKs {
    pub ks_statistic: f64,
    pub n_survivors: usize,
    pub threshold: f64,
    pub bias_allowance: f64,
    pub m0: f64,
    pub pass: bool,
}

/// Finite-t bias allowance for the KS threshold: the largest deviation of
/// the deterministic conditional Laplace curve from its limit at the same
/// `t`, over the standard θ grid.
pub fn yaglom_bias_allowance(
    model: &Model,
    sd: &SpectralData,
    mu: &DVector<f64>,
    f: &DVector<f64>,
    t: f64,
) -> Result<f64> {
    let rep = yaglom_laplace_check(model, sd, mu, f, t, &[0.25, 0.5, 1.0, 2.0, 4.0], 1.0)?;
    Ok(rep
        .values
        .iter()
        .zip(rep.limits.iter())
        .map(|(v, l)| (v - l).abs())
        .fold(0.0, f64::max))
}

/// Simulates `n_sims` paths, conditions on survival at `t`, and compares
/// the empirical law of `X_t(f)/(t m0)` against the unit exponential.
/// One-site quadratic models use the exact Feller sampler; others the Euler
/// scheme.  Fewer than 500 survivors is inconclusive.
pub fn yaglom_mc_ks(
    model: &Model,
    sd: &SpectralData,
    mu: &DVector<f64>,
    f: &DVector<f64>,
    t: f64,
    n_sims: usize,
    cfg: &SimConfig,
) -> Result<YaglomKs> {
    let m0 = sd.c0 * m_dot(&model.space.m, &sd.phi_star_vec(), f);
    let one_site_quadratic =
        model.n() == 1 && model.mech.pi[0].is_empty() && model.mech.alpha[0] > 0.0;
    let chunk = 4096usize;
    let n_chunks = n_sims.div_ceil(chunk);
    let mut survivors: Vec<f64> = (0..n_chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let lo = c * chunk;
            let hi = ((c + 1) * chunk).min(n_sims);
            (lo..hi).filter_map(move |i| {
                let mut rng = crate::rng::stream(cfg.seed, 0, i as u64);
                let xtf = if one_site_quadratic {
                    let x = pathsim::sample_feller_exact(model.mech.alpha[0], mu[0], t, &mut rng)
                        .expect("feller draw");
                    x * f[0]
                } else {
                    let p = pathsim::simulate_superprocess(model, mu, t, &[t], cfg, &mut rng)
                        .expect("euler path");
                    p.terminal().dot(f)
                };
                if xtf > 0.0 {
                    Some(xtf / (t * m0))
                } else {
                    None
                }
            })
        })
        .collect();
    if survivors.len() < 500 {
        return Err(Error::Inconclusive(format!(
            "only {} survivors (need 500)",
            survivors.len()
        )));
    }
    let ks = stats::ks_exponential(&mut survivors);
    let bias = yaglom_bias_allowance(model, sd, mu, f, t)?;
    let threshold = stats::ks_critical_1pct(survivors.len()) + bias;
    Ok(YaglomKs {
        ks_statistic: ks,
        n_survivors: survivors.len(),
        threshold,
        bias_allowance: bias,
        m0,
        pass: ks <= threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use approx::assert_relative_eq;

    fn dv(slice: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(slice)
    }

    #[test]
    fn kolmogorov_m1_closed_form() {
        let m1 = fixtures::m1();
        let sd = spectral::principal_triple(&m1).unwrap();
        let rep = kolmogorov_check(&m1, &sd, &dv(&[1.0]), &default_t_grid(), 0.02).unwrap();
        assert!(rep.pass, "{rep:?}");
        assert_relative_eq!(*rep.limits.last().unwrap(), 1.0, max_relative = 1e-12);
        // t = 1000 entry: 1000 (1 - e^{-1/1000}).
        let idx = rep.grid.iter().position(|&t| t == 1000.0).unwrap();
        let expected = 1000.0 * -(-1e-3f64).exp_m1();
        assert_relative_eq!(rep.values[idx], expected, max_relative = 1e-6);
        // Linearity in mu.
        let rep3 = kolmogorov_check(&m1, &sd, &dv(&[3.0]), &default_t_grid(), 0.02).unwrap();
        assert_relative_eq!(*rep3.limits.last().unwrap(), 3.0, max_relative = 1e-12);
    }

    #[test]
    fn uniform_ratio_homogeneous_is_zero() {
        for model in [fixtures::m1(), fixtures::m2()] {
            let sd = spectral::principal_triple(&model).unwrap();
            let rep = uniform_ratio_check(&model, &sd, &[0.5, 1.0, 10.0, 100.0], 1e-12).unwrap();
            assert!(rep.pass, "{rep:?}");
            assert!(rep.values.iter().all(|v| *v <= 1e-12), "{:?}", rep.values);
        }
    }

    #[test]
    fn uniform_ratio_m3_decays() {
        let m3 = fixtures::m3();
        let sd = spectral::principal_triple(&m3).unwrap();
        let rep = uniform_ratio_check(&m3, &sd, &[10.0, 100.0], 1e-2).unwrap();
        assert!(rep.pass, "{rep:?}");
        assert!(rep.values[1] < rep.values[0]);
    }

    #[test]
    fn bt_slope_closed_forms() {
        for model in [fixtures::m1(), fixtures::m2()] {
            let sd = spectral::principal_triple(&model).unwrap();
            let rep = bt_slope_check(&model, &sd, &[5.0, 50.0, 500.0], 0.02).unwrap();
            assert!(rep.pass, "{rep:?}");
            // 1/(t (1/t)) = 1 = c0 at every t for the homogeneous fixtures.
            for v in &rep.values {
                assert_relative_eq!(*v, 1.0, max_relative = 1e-5);
            }
        }
    }

    #[test]
    fn yaglom_laplace_theta_zero_is_one() {
        let m3 = fixtures::m3();
        let sd = spectral::principal_triple(&m3).unwrap();
        let rep = yaglom_laplace_check(
            &m3,
            &sd,
            &dv(&[1.0, 0.0]),
            &sd.phi_vec(),
            100.0,
            &[0.0, 1.0],
            0.5,
        )
        .unwrap();
        assert_relative_eq!(rep.values[0], 1.0, epsilon = 1e-9);
        assert_relative_eq!(rep.limits[0], 1.0);
    }

    #[test]
    fn yaglom_laplace_m1_t50_closed_form() {
        // (e^{-1/100} - e^{-1/50})/(1 - e^{-1/50}) at theta = 1, t = 50.
        let m1 = fixtures::m1();
        let sd = spectral::principal_triple(&m1).unwrap();
        let rep =
            yaglom_laplace_check(&m1, &sd, &dv(&[1.0]), &dv(&[1.0]), 50.0, &[1.0], 0.02).unwrap();
        let expected = ((-0.01f64).exp() - (-0.02f64).exp()) / -(-0.02f64).exp_m1();
        assert_relative_eq!(rep.values[0], expected, max_relative = 1e-6);
        assert_relative_eq!(rep.limits[0], 0.5, max_relative = 1e-12);
        assert!(rep.pass, "{rep:?}");
    }

    #[test]
    fn spine_w_m1_is_exact_at_all_t() {
        // u_dot_0 = (1+theta)^{-2} exactly on M1 for every horizon.
        let m1 = fixtures::m1();
        let sd = spectral::principal_triple(&m1).unwrap();
        let rep = spine_w_check(&m1, &sd, &dv(&[1.0]), 50.0, &[0.0, 1.0], 0.03).unwrap();
        assert_relative_eq!(rep.values[0], 1.0);
        assert_relative_eq!(rep.values[1], 0.25, max_relative = 1e-6);
        assert!(rep.pass, "{rep:?}");
    }

    #[test]
    fn centered_vanish_phi_is_zero() {
        let m3 = fixtures::m3();
        let sd = spectral::principal_triple(&m3).unwrap();
        let rep = centered_vanish_check(
            &m3,
            &sd,
            &dv(&[1.0, 0.0]),
            &sd.phi_vec(),
            &[10.0, 100.0],
            1e-2,
        )
        .unwrap();
        assert!(rep.values.iter().all(|v| *v == 0.0));
        assert!(rep.pass);
    }

    #[test]
    fn centered_vanish_indicator_decays() {
        let m2 = fixtures::m2();
        let sd = spectral::principal_triple(&m2).unwrap();
        let rep = centered_vanish_check(
            &m2,
            &sd,
            &dv(&[1.0, 0.0]),
            &dv(&[1.0, 0.0]),
            &[10.0, 100.0, 1000.0],
            1e-2,
        )
        .unwrap();
        assert!(rep.pass, "{rep:?}");
        let m3 = fixtures::m3();
        let sd3 = spectral::principal_triple(&m3).unwrap();
        let rep3 = centered_vanish_check(
            &m3,
            &sd3,
            &dv(&[1.0, 0.0]),
            &dv(&[1.0, 0.0]),
            &[10.0, 100.0, 1000.0],
            1e-1,
        )
        .unwrap();
        assert!(
            rep3.values.windows(2).all(|w| w[1] < w[0]),
            "{:?}",
            rep3.values
        );
    }

    #[test]
    fn ergodic_constant_is_zero_and_m1_trivial() {
        let m3 = fixtures::m3();
        let sd = spectral::principal_triple(&m3).unwrap();
        let rep = ergodic_check(&m3, &sd, &|_, _| 2.5, &[10.0, 100.0], 1e-9).unwrap();
        assert!(rep.values.iter().all(|v| *v <= 1e-9), "{:?}", rep.values);
        let m1 = fixtures::m1();
        let sd1 = spectral::principal_triple(&m1).unwrap();
        let rep1 = ergodic_check(&m1, &sd1, &|_, u| u * u, &[10.0], 1e-9).unwrap();
        assert!(rep1.values[0] <= 1e-9);
    }

    #[test]
    fn ergodic_aphi_u_decays_on_m3() {
        // The true L2 error at t = 100 for F = (A phi) u on M3 is
        // 1.435e-3 (stable under quadrature-resolution doubling), slightly
        // above 1e-3; the bound below is the converged value plus the
        // k = 400 discretization margin.
        let m3 = fixtures::m3();
        let sd = spectral::principal_triple(&m3).unwrap();
        let aphi: Vec<f64> = (0..2).map(|x| m3.a_coeff(x) * sd.phi[x]).collect();
        let rep =
            ergodic_check(&m3, &sd, &move |x, u| aphi[x] * u, &[10.0, 100.0], 1.6e-3).unwrap();
        assert!(rep.pass, "{rep:?}");
        assert!(rep.values[1] < rep.values[0]);
        assert!((rep.values[1] - 1.435e-3).abs() < 1e-4, "{:?}", rep.values);
    }

    #[test]
    fn consistency_triangle_m1() {
        // Kolmogorov limit, slope limit, and the Yaglom mean all reduce to
        // the same c0-derived constants.
        let m1 = fixtures::m1();
        let sd = spectral::principal_triple(&m1).unwrap();
        let mu = dv(&[1.0]);
        let kolmogorov_limit = mu.dot(&sd.phi_vec()) / sd.c0;
        let slope_limit = sd.c0;
        let m0 = sd.c0 * m_dot(&m1.space.m, &sd.phi_star_vec(), &dv(&[1.0]));
        assert!((kolmogorov_limit - 1.0).abs() < 1e-12);
        assert!((slope_limit - 1.0).abs() < 1e-12);
        assert!((m0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pole_squaring_relation() {
        // The spine limit is the square of the Yaglom-for-phi limit, as
        // exact algebra on the reported limits and numerically at large t.
        let m3 = fixtures::m3();
        let sd = spectral::principal_triple(&m3).unwrap();
        let mu = dv(&[1.0, 0.0]);
        let t = 2000.0;
        let thetas = [0.5, 1.0, 2.0];
        let spine = spine_w_check(&m3, &sd, &mu, t, &thetas, 0.05).unwrap();
        let yag = yaglom_laplace_check(&m3, &sd, &mu, &sd.phi_vec(), t, &thetas, 0.05).unwrap();
        for i in 0..thetas.len() {
            assert_relative_eq!(
                spine.limits[i],
                yag.limits[i] * yag.limits[i],
                max_relative = 1e-12
            );
            assert_relative_eq!(
                spine.values[i],
                yag.values[i] * yag.values[i],
                max_relative = 0.05
            );
        }
    }

    #[test]
    fn yaglom_ks_small_smoke() {
        // Small-n smoke of the KS machinery on M1 (the full-size run is an
        // acceptance criterion).
        let m1 = fixtures::m1();
        let sd = spectral::principal_triple(&m1).unwrap();
        let cfg = SimConfig { dt: 1e-3, eps_excursion: 1e-2, seed: 40, batch: 1 };
        let out = yaglom_mc_ks(&m1, &sd, &dv(&[1.0]), &dv(&[1.0]), 20.0, 40_000, &cfg).unwrap();
        assert!(out.n_survivors >= 500);
        assert!(out.pass, "{out:?}");
    }

    #[test]
    fn yaglom_ks_inconclusive_with_few_survivors() {
        let m1 = fixtures::m1();
        let sd = spectral::principal_triple(&m1).unwrap();
        let cfg = SimConfig { dt: 1e-3, eps_excursion: 1e-2, seed: 41, batch: 1 };
        let err = yaglom_mc_ks(&m1, &sd, &dv(&[1.0]), &dv(&[1.0]), 50.0, 2_000, &cfg);
        assert!(matches!(err, Err(Error::Inconclusive(_))));
    }
}
