//! Mean semigroup and principal eigen-structure.
//!
//! The mean semigroup of the superprocess is `S_t = e^{tL}` with
//! `L = Q + diag(β)` acting on site functions.  On an irreducible finite
//! space `L` is Metzler, so its principal eigenvalue `λ` is real and simple
//! with strictly positive right/left eigenfunctions `φ`, `φ*` (left taken
//! with respect to the m-weighted inner product).  Criticality means `λ = 0`
//! after calibration, and then the Doob φ-transform of the motion is a
//! conservative chain — the spine.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::Model;

/// Principal eigen-data of the mean semigroup.
#[derive(Debug, Clone, Serialize)]
pub struct SpectralData {
    /// Principal eigenvalue of `L = Q + diag(β)`.
    pub lambda: f64,
    /// Right eigenfunction, normalized to `<phi, phi>_m = 1`.
    pub phi: Vec<f64>,
    /// Left eigenfunction (m-adjoint), scaled to `<phi, phi*>_m = 1`.
    pub phi_star: Vec<f64>,
    /// Kernel-comparability constant: `|q(t,x,y)/(phi(x)phi*(y)) - 1| <= gap_c e^{-gap_gamma t}`
    /// estimated on the grid `t in {1, 1.5, ..., 10}`.
    pub gap_c: f64,
    /// Spectral gap: `lambda` minus the largest remaining real part.
    pub gap_gamma: f64,
    /// `c0 = 1/2 <A phi, phi phi*>_m`, the constant of both limit theorems.
    pub c0: f64,
}

impl SpectralData {
    pub fn phi_vec(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.phi)
    }

    pub fn phi_star_vec(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.phi_star)
    }
}

/// `<f, g>_m = Σ_x f(x) g(x) m(x)`.
pub fn m_dot(m: &[f64], f: &DVector<f64>, g: &DVector<f64>) -> f64 {
    let mut acc = 0.0;
    for x in 0..m.len() {
        acc += f[x] * g[x] * m[x];
    }
    acc
}

/// Generator of the mean semigroup, `L = Q + diag(β)`.
pub fn generator(model: &Model) -> DMatrix<f64> {
    let n = model.n();
    DMatrix::from_fn(n, n, |x, y| {
        model.motion.q[x][y] + if x == y { model.mech.beta[x] } else { 0.0 }
    })
}

/// m-adjoint of the generator: `L* = diag(m)^{-1} Lᵀ diag(m)`.
pub fn adjoint_generator(model: &Model) -> DMatrix<f64> {
    let l = generator(model);
    let n = model.n();
    DMatrix::from_fn(n, n, |x, y| l[(y, x)] * model.space.m[y] / model.space.m[x])
}

/// `e^{tL}` by scaling-and-squaring with Padé approximants.
pub fn semigroup_matrix(model: &Model, t: f64) -> DMatrix<f64> {
    (generator(model) * t).exp()
}

/// Applies the mean semigroup: `S_t f = e^{tL} f`.
pub fn mean_semigroup_apply(model: &Model, t: f64, f: &DVector<f64>) -> Result<DVector<f64>> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "semigroup time must be nonnegative, got {t}"
        )));
    }
    if f.len() != model.n() || f.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "semigroup argument must be a finite n-vector".into(),
        ));
    }
    Ok(semigroup_matrix(model, t) * f)
}

/// Power iteration for the dominant eigenpair of the shifted Metzler matrix
/// `L + cI` (nonnegative, primitive when irreducible); returns the positive
/// eigenvector.
fn power_iterate(l: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = l.nrows();
    let shift = 1.0 + (0..n).map(|i| l[(i, i)].abs()).fold(0.0, f64::max);
    let m = l + DMatrix::identity(n, n) * shift;
    let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    for _ in 0..2000 {
        let mut w = &m * &v;
        let norm = w.norm();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::Model("power iteration degenerated".into()));
        }
        w /= norm;
        let delta = (&w - &v).norm();
        v = w;
        if delta < 1e-15 {
            break;
        }
    }
    Ok(v)
}

/// A couple of inverse-iteration sweeps at a slightly shifted eigenvalue
/// estimate; sharpens the power-iteration vector to full precision.
fn inverse_refine(l: &DMatrix<f64>, lambda: f64, v0: DVector<f64>) -> DVector<f64> {
    let n = l.nrows();
    let scale = l.norm().max(1.0);
    let shifted = l - DMatrix::identity(n, n) * (lambda + 1e-9 * scale);
    let lu = shifted.lu();
    let mut v = v0;
    for _ in 0..3 {
        if let Some(w) = lu.solve(&v) {
            let norm = w.norm();
            if norm.is_finite() && norm > 0.0 {
                v = w / norm;
                continue;
            }
        }
        break;
    }
    v
}

fn sorted_real_parts(l: &DMatrix<f64>) -> Vec<f64> {
    let mut parts: Vec<f64> = l
        .clone()
        .complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .collect();
    parts.sort_by(|a, b| b.partial_cmp(a).unwrap());
    parts
}

/// Computes the principal triple `(λ, φ, φ*)`, the spectral gap and `c0`.
///
/// The eigenvalue comes from a dense Schur decomposition and is
/// cross-checked against the two-sided Rayleigh quotient of the
/// power-iterated eigenvectors; disagreement is reported as a model error
/// since simplicity and positivity are guaranteed for irreducible motions.
pub fn principal_triple(model: &Model) -> Result<SpectralData> {
    model.check_structure()?;
    if !model.is_irreducible() {
        return Err(Error::Model("motion is not irreducible".into()));
    }
    let n = model.n();
    let l = generator(model);
    let l_star = adjoint_generator(model);

    let parts = sorted_real_parts(&l);
    let lambda_schur = parts[0];

    let mut phi = inverse_refine(&l, lambda_schur, power_iterate(&l)?);
    let mut phi_star = inverse_refine(&l_star, lambda_schur, power_iterate(&l_star)?);

    // Fix signs by positivity.
    if phi.sum() < 0.0 {
        phi = -phi;
    }
    if phi_star.sum() < 0.0 {
        phi_star = -phi_star;
    }
    if phi.iter().any(|&v| v <= 0.0) || phi_star.iter().any(|&v| v <= 0.0) {
        return Err(Error::Model(
            "principal eigenfunctions are not strictly positive".into(),
        ));
    }

    // Two-sided Rayleigh quotient in the m-inner product.
    let m = &model.space.m;
    let lambda = m_dot(m, &phi_star, &(&l * &phi)) / m_dot(m, &phi_star, &phi);
    let scale = l.norm().max(1.0);
    if (lambda - lambda_schur).abs() > 1e-8 * scale {
        return Err(Error::Model(format!(
            "eigen-solver disagreement: Schur {lambda_schur} vs Rayleigh {lambda}"
        )));
    }

    // Normalize <phi,phi>_m = 1 first, then <phi,phi*>_m = 1.
    let phi_norm = m_dot(m, &phi, &phi).sqrt();
    phi /= phi_norm;
    let cross = m_dot(m, &phi, &phi_star);
    if cross.abs() < 1e-14 {
        return Err(Error::Model("degenerate eigenfunction pairing".into()));
    }
    phi_star /= cross;

    // Residual guards (simplicity/positivity should make these tiny).
    let res_r = (&l * &phi - &phi * lambda).amax();
    let res_l = (&l_star * &phi_star - &phi_star * lambda).amax() / phi_star.amax();
    if res_r > 1e-9 * scale || res_l > 1e-9 * scale {
        return Err(Error::Model(format!(
            "eigen residuals too large: right {res_r:.3e}, left {res_l:.3e}"
        )));
    }

    let gap_gamma = if n == 1 { 1.0 } else { lambda - parts[1] };
    if n > 1 && gap_gamma <= 0.0 {
        return Err(Error::Model("principal eigenvalue is not simple".into()));
    }

    let c0 = 0.5
        * (0..n)
            .map(|x| model.a_coeff(x) * phi[x] * phi[x] * phi_star[x] * m[x])
            .sum::<f64>();

    let mut data = SpectralData {
        lambda,
        phi: phi.iter().copied().collect(),
        phi_star: phi_star.iter().copied().collect(),
        gap_c: 0.0,
        gap_gamma,
        c0,
    };
    data.gap_c = iu_ratio_sup_grid(model, &data);
    Ok(data)
}

/// Max over the grid `t in {1, 1.5, ..., 10}` of
/// `|e^{-λt} q(t,x,y) / (φ(x)φ*(y)) - 1| e^{γt}`.
fn iu_ratio_sup_grid(model: &Model, sd: &SpectralData) -> f64 {
    let mut c = 0.0f64;
    let mut t = 1.0;
    while t <= 10.0 + 1e-12 {
        c = c.max(iu_ratio_sup(model, sd, t) * (sd.gap_gamma * t).exp());
        t += 0.5;
    }
    c
}

/// `sup_{x,y} |e^{-λt} q(t,x,y)/(φ(x)φ*(y)) - 1|` where `q` is the kernel of
/// `S_t` with respect to `m`.
pub fn iu_ratio_sup(model: &Model, sd: &SpectralData, t: f64) -> f64 {
    let n = model.n();
    let s = semigroup_matrix(model, t);
    let damp = (-sd.lambda * t).exp();
    let mut sup = 0.0f64;
    for x in 0..n {
        for y in 0..n {
            let q = s[(x, y)] / model.space.m[y];
            sup = sup.max((damp * q / (sd.phi[x] * sd.phi_star[y]) - 1.0).abs());
        }
    }
    sup
}

/// Kernel-comparability constants `(gap_c, gap_gamma)` for a critical model.
pub fn iu_gap(model: &Model) -> Result<(f64, f64)> {
    let sd = principal_triple(model)?;
    Ok((sd.gap_c, sd.gap_gamma))
}

/// Shifts `β` by `-λ` so the principal eigenvalue vanishes, and marks the
/// model critical.  Idempotent up to the eigenvalue tolerance.
pub fn calibrate_critical(model: &Model) -> Result<Model> {
    let sd = principal_triple(model)?;
    let mut out = model.clone();
    for b in &mut out.mech.beta {
        *b -= sd.lambda;
    }
    out.critical = true;
    let check = principal_triple(&out)?;
    if check.lambda.abs() > 1e-10 {
        return Err(Error::Model(format!(
            "calibration left residual eigenvalue {}",
            check.lambda
        )));
    }
    Ok(out)
}

fn require_critical(model: &Model) -> Result<()> {
    if !model.critical {
        return Err(Error::Model(
            "operation requires a calibrated critical model".into(),
        ));
    }
    Ok(())
}

/// Doob φ-transform of the motion for a critical model:
/// `Q̇[x][y] = Q[x][y] φ(y)/φ(x)` off the diagonal, rows summing to zero.
/// The transformed chain is conservative (the spine is immortal) and has
/// invariant measure `φ(x)φ*(x)m(x)`.
pub fn spine_generator(model: &Model) -> Result<DMatrix<f64>> {
    require_critical(model)?;
    let sd = principal_triple(model)?;
    Ok(spine_generator_with(model, &sd))
}

/// Same as [`spine_generator`] but reusing spectral data.
pub fn spine_generator_with(model: &Model, sd: &SpectralData) -> DMatrix<f64> {
    let n = model.n();
    let mut out = DMatrix::zeros(n, n);
    for x in 0..n {
        let mut row_sum = 0.0;
        for y in 0..n {
            if x != y {
                let r = model.motion.q[x][y] * sd.phi[y] / sd.phi[x];
                out[(x, y)] = r;
                row_sum += r;
            }
        }
        out[(x, x)] = -row_sum;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;

    #[test]
    fn m1_principal_triple() {
        let sd = principal_triple(&fixtures::m1()).unwrap();
        assert_relative_eq!(sd.lambda, 0.0, epsilon = 1e-12);
        assert_relative_eq!(sd.phi[0], 1.0, max_relative = 1e-12);
        assert_relative_eq!(sd.phi_star[0], 1.0, max_relative = 1e-12);
        assert_relative_eq!(sd.c0, 1.0, max_relative = 1e-12);
        assert!(sd.gap_c.abs() < 1e-10, "one-site kernel equals phi phi*");
    }

    #[test]
    fn m2_principal_triple() {
        let sd = principal_triple(&fixtures::m2()).unwrap();
        assert_relative_eq!(sd.lambda, 0.0, epsilon = 1e-12);
        for x in 0..2 {
            assert_relative_eq!(sd.phi[x], 1.0, max_relative = 1e-10);
            assert_relative_eq!(sd.phi_star[x], 1.0, max_relative = 1e-10);
        }
        assert_relative_eq!(sd.c0, 1.0, max_relative = 1e-10);
        assert_relative_eq!(sd.gap_gamma, 2.0, max_relative = 1e-10);
    }

    #[test]
    fn normalization_and_residuals() {
        for model in [fixtures::m1(), fixtures::m2(), fixtures::m3()] {
            let sd = principal_triple(&model).unwrap();
            let phi = sd.phi_vec();
            let phi_star = sd.phi_star_vec();
            let m = &model.space.m;
            assert!((m_dot(m, &phi, &phi) - 1.0).abs() < 1e-12);
            assert!((m_dot(m, &phi, &phi_star) - 1.0).abs() < 1e-12);
            let l = generator(&model);
            assert!((&l * &phi - &phi * sd.lambda).amax() < 1e-10);
            let ls = adjoint_generator(&model);
            assert!((&ls * &phi_star - &phi_star * sd.lambda).amax() < 1e-10);
            assert!(phi.iter().all(|&v| v > 0.0));
            assert!(phi_star.iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn m1_semigroup_is_identity() {
        let m1 = fixtures::m1();
        let f = DVector::from_column_slice(&[2.0]);
        let out = mean_semigroup_apply(&m1, 3.0, &f).unwrap();
        assert_relative_eq!(out[0], 2.0, max_relative = 1e-12);
    }

    #[test]
    fn m2_semigroup_closed_form() {
        let m2 = fixtures::m2();
        let f = DVector::from_column_slice(&[1.0, 0.0]);
        let out = mean_semigroup_apply(&m2, 1.0, &f).unwrap();
        let e2 = (-2.0f64).exp();
        assert_relative_eq!(out[0], (1.0 + e2) / 2.0, max_relative = 1e-12);
        assert_relative_eq!(out[1], (1.0 - e2) / 2.0, max_relative = 1e-12);
    }

    #[test]
    fn critical_semigroup_fixes_phi() {
        for model in [fixtures::m2(), fixtures::m3()] {
            let sd = principal_triple(&model).unwrap();
            let phi = sd.phi_vec();
            let out = mean_semigroup_apply(&model, 5.0, &phi).unwrap();
            assert!((out - phi).amax() < 1e-10);
        }
    }

    #[test]
    fn semigroup_property_and_adjointness() {
        let model = fixtures::m3();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let f = DVector::from_fn(2, |_, _| rng.random::<f64>());
            let g = DVector::from_fn(2, |_, _| rng.random::<f64>());
            for &(t, s) in &[(0.3, 1.1), (1.1, 0.3)] {
                let once = mean_semigroup_apply(&model, t + s, &f).unwrap();
                let twice = mean_semigroup_apply(
                    &model,
                    t,
                    &mean_semigroup_apply(&model, s, &f).unwrap(),
                )
                .unwrap();
                assert!((once - twice).amax() < 1e-10);
            }
            // <S_t f, g>_m = <f, S*_t g>_m with S*_t = e^{t L*}.
            let t = 0.9;
            let stf = mean_semigroup_apply(&model, t, &f).unwrap();
            let star = (adjoint_generator(&model) * t).exp() * &g;
            let lhs = m_dot(&model.space.m, &stf, &g);
            let rhs = m_dot(&model.space.m, &f, &star);
            assert!((lhs - rhs).abs() < 1e-10);
        }
    }

    #[test]
    fn calibrate_one_site() {
        let model = fixtures::custom_single_site(0.7, 1.0, &[]);
        let out = calibrate_critical(&model).unwrap();
        assert_relative_eq!(out.mech.beta[0], 0.0, epsilon = 1e-12);
        assert!(out.critical);
    }

    #[test]
    fn calibrate_is_idempotent() {
        let m2 = calibrate_critical(&fixtures::m2()).unwrap();
        assert!(m2.mech.beta.iter().all(|b| b.abs() < 1e-12));
        let m3 = fixtures::m3();
        let again = calibrate_critical(&m3).unwrap();
        for x in 0..2 {
            assert!((again.mech.beta[x] - m3.mech.beta[x]).abs() <= 1e-10);
        }
    }

    #[test]
    fn m3_calibrated_is_critical() {
        let sd = principal_triple(&fixtures::m3()).unwrap();
        assert!(sd.lambda.abs() <= 1e-10);
        // Raw eigenvalue has the closed form (-3 + sqrt(8.64)) / 2.
        let raw = principal_triple(&fixtures::m3_raw()).unwrap();
        assert_relative_eq!(raw.lambda, (-3.0 + 8.64f64.sqrt()) / 2.0, max_relative = 1e-10);
    }

    #[test]
    fn spine_generator_m2_equals_q() {
        let m2 = fixtures::m2();
        let qdot = spine_generator(&m2).unwrap();
        let q = DMatrix::from_fn(2, 2, |x, y| m2.motion.q[x][y]);
        assert!((qdot - q).amax() < 1e-10);
    }

    #[test]
    fn spine_generator_m1_is_zero() {
        let qdot = spine_generator(&fixtures::m1()).unwrap();
        assert_eq!(qdot[(0, 0)], 0.0);
    }

    #[test]
    fn spine_generator_conservative_and_invariant() {
        let m3 = fixtures::m3();
        let sd = principal_triple(&m3).unwrap();
        let qdot = spine_generator(&m3).unwrap();
        for x in 0..2 {
            let row: f64 = (0..2).map(|y| qdot[(x, y)]).sum();
            assert!(row.abs() < 1e-12);
        }
        // (phi phi* m)^T Qdot = 0.
        let w = DVector::from_fn(2, |x, _| sd.phi[x] * sd.phi_star[x] * m3.space.m[x]);
        let prod = qdot.transpose() * w;
        assert!(prod.amax() < 1e-10);
    }

    #[test]
    fn spine_generator_rejects_noncritical() {
        assert!(spine_generator(&fixtures::m3_raw()).is_err());
    }

    #[test]
    fn iu_decay_bound_on_grid() {
        for model in [fixtures::m2(), fixtures::m3()] {
            let sd = principal_triple(&model).unwrap();
            for &t in &[2.0, 4.0, 8.0] {
                let sup = iu_ratio_sup(&model, &sd, t);
                assert!(
                    sup <= sd.gap_c * (-sd.gap_gamma * t).exp() + 1e-14,
                    "IU bound violated at t={t}: {sup}"
                );
            }
        }
    }

    #[test]
    fn negative_time_rejected() {
        let f = DVector::from_column_slice(&[1.0]);
        assert!(mean_semigroup_apply(&fixtures::m1(), -1.0, &f).is_err());
    }
}
