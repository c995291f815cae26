//! Finite-space superprocess models and their standing assumptions.
//!
//! A model is a finite site set with reference weights `m`, a conservative
//! rate matrix `Q` (rows sum to `-kill[x]`), and a branching mechanism
//! `Ψ(x,z) = -β(x)z + α(x)z² + Σ_i (e^{-z y_i} - 1 + z y_i) p_i` with a
//! finite atom list `π(x) = {(y_i, p_i)}` per site.  Atom lists keep every
//! integral against `π` a finite sum, so mechanism evaluation and the jump
//! samplers are exact.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Finite site set with strictly positive reference weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StateSpace {
    pub labels: Vec<String>,
    /// Reference measure weights, one per site.
    pub m: Vec<f64>,
}

impl StateSpace {
    pub fn n(&self) -> usize {
        self.labels.len()
    }
}

/// Off-diagonal transition rates of the spatial motion plus a per-site
/// killing rate (rate of jumping to the cemetery, where all functions
/// vanish).  Row sums equal `-kill[x]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateMatrix {
    pub q: Vec<Vec<f64>>,
    pub kill: Vec<f64>,
}

/// One atom of the jump measure `π(x, dy)`: offspring mass `y` arriving at
/// rate `p` (per unit mass and time).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PiAtom {
    pub y: f64,
    pub p: f64,
}

/// Local branching data: linear rate `β`, quadratic coefficient `α`, and the
/// atom lists of `π`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BranchingMechanism {
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub pi: Vec<Vec<PiAtom>>,
}

/// A finite-space superprocess model.  `critical` is set by
/// [`crate::spectral::calibrate_critical`] once the principal eigenvalue of
/// `Q + diag(β)` has been shifted to zero.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Model {
    pub space: StateSpace,
    pub motion: RateMatrix,
    #[serde(rename = "mechanism")]
    pub mech: BranchingMechanism,
    #[serde(default)]
    pub critical: bool,
}

/// Row-sum consistency tolerance for the rate matrix.
const ROW_SUM_TOL: f64 = 1e-9;

impl Model {
    pub fn n(&self) -> usize {
        self.space.n()
    }

    /// Total jump-compensation rate `Σ_i y_i p_i` at site `x`.
    pub fn pi_mass_rate(&self, x: usize) -> f64 {
        self.mech.pi[x].iter().map(|a| a.y * a.p).sum()
    }

    /// Second-moment rate `A(x) = 2α(x) + Σ_i y_i² p_i`.
    pub fn a_coeff(&self, x: usize) -> f64 {
        2.0 * self.mech.alpha[x] + self.mech.pi[x].iter().map(|a| a.y * a.y * a.p).sum::<f64>()
    }

    /// Structural validation: dimensions, sign constraints, row sums.
    /// Returns the offending field on failure.
    pub fn check_structure(&self) -> Result<()> {
        let n = self.space.n();
        if n == 0 {
            return Err(Error::structural("space.labels", "state space is empty"));
        }
        if self.space.m.len() != n {
            return Err(Error::structural(
                "space.m",
                format!("expected {n} weights, got {}", self.space.m.len()),
            ));
        }
        for (x, &w) in self.space.m.iter().enumerate() {
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::structural(
                    format!("space.m[{x}]"),
                    format!("weight must be strictly positive and finite, got {w}"),
                ));
            }
        }
        if self.motion.q.len() != n {
            return Err(Error::structural(
                "motion.q",
                format!("expected {n} rows, got {}", self.motion.q.len()),
            ));
        }
        if self.motion.kill.len() != n {
            return Err(Error::structural(
                "motion.kill",
                format!("expected {n} entries, got {}", self.motion.kill.len()),
            ));
        }
        for (x, row) in self.motion.q.iter().enumerate() {
            if row.len() != n {
                return Err(Error::structural(
                    format!("motion.q[{x}]"),
                    format!("expected {n} columns, got {}", row.len()),
                ));
            }
            for (y, &r) in row.iter().enumerate() {
                if !r.is_finite() {
                    return Err(Error::structural(
                        format!("motion.q[{x}][{y}]"),
                        format!("rate must be finite, got {r}"),
                    ));
                }
                if x != y && r < 0.0 {
                    return Err(Error::structural(
                        format!("motion.q[{x}][{y}]"),
                        format!("off-diagonal rate must be nonnegative, got {r}"),
                    ));
                }
            }
            let kill = self.motion.kill[x];
            if !(kill.is_finite() && kill >= 0.0) {
                return Err(Error::structural(
                    format!("motion.kill[{x}]"),
                    format!("killing rate must be nonnegative, got {kill}"),
                ));
            }
            let row_sum: f64 = row.iter().sum();
            let scale = row.iter().map(|r| r.abs()).sum::<f64>().max(1.0);
            if (row_sum + kill).abs() > ROW_SUM_TOL * scale {
                return Err(Error::structural(
                    format!("motion.q[{x}][{x}]"),
                    format!("row must sum to -kill[{x}] = {}, got {row_sum}", -kill),
                ));
            }
        }
        for (name, v) in [("beta", &self.mech.beta), ("alpha", &self.mech.alpha)] {
            if v.len() != n {
                return Err(Error::structural(
                    format!("mechanism.{name}"),
                    format!("expected {n} entries, got {}", v.len()),
                ));
            }
        }
        for (x, &b) in self.mech.beta.iter().enumerate() {
            if !b.is_finite() {
                return Err(Error::structural(
                    format!("mechanism.beta[{x}]"),
                    format!("must be finite, got {b}"),
                ));
            }
        }
        for (x, &a) in self.mech.alpha.iter().enumerate() {
            if !(a.is_finite() && a >= 0.0) {
                return Err(Error::structural(
                    format!("mechanism.alpha[{x}]"),
                    format!("must be nonnegative, got {a}"),
                ));
            }
        }
        if self.mech.pi.len() != n {
            return Err(Error::structural(
                "mechanism.pi",
                format!("expected {n} atom lists, got {}", self.mech.pi.len()),
            ));
        }
        for (x, atoms) in self.mech.pi.iter().enumerate() {
            for (i, atom) in atoms.iter().enumerate() {
                if !(atom.y.is_finite() && atom.y > 0.0) {
                    return Err(Error::structural(
                        format!("mechanism.pi[{x}][{i}].y"),
                        format!("atom mass must be strictly positive, got {}", atom.y),
                    ));
                }
                if !(atom.p.is_finite() && atom.p >= 0.0) {
                    return Err(Error::structural(
                        format!("mechanism.pi[{x}][{i}].p"),
                        format!("atom rate must be nonnegative, got {}", atom.p),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Strong connectivity of the digraph of positive off-diagonal rates.
    pub fn is_irreducible(&self) -> bool {
        let n = self.n();
        if n == 1 {
            return true;
        }
        let reach = |transpose: bool| -> usize {
            let mut seen = vec![false; n];
            let mut stack = vec![0usize];
            seen[0] = true;
            let mut count = 1;
            while let Some(x) = stack.pop() {
                for y in 0..n {
                    let rate = if transpose {
                        self.motion.q[y][x]
                    } else {
                        self.motion.q[x][y]
                    };
                    if x != y && rate > 0.0 && !seen[y] {
                        seen[y] = true;
                        count += 1;
                        stack.push(y);
                    }
                }
            }
            count
        };
        reach(false) == n && reach(true) == n
    }

    /// Whether `Ψ0` is not identically zero.
    pub fn psi0_nondegenerate(&self) -> bool {
        (0..self.n()).any(|x| {
            self.mech.alpha[x] > 0.0 || self.mech.pi[x].iter().any(|a| a.p > 0.0)
        })
    }
}

/// All branching functionals at a single `(x, z)`:
/// `Ψ`, its β-free part `Ψ0`, the derivatives `Ψ'`, `Ψ0'`, `Ψ0''`, the
/// second-moment rate `A`, the quadratic remainder `R = Ψ0 - ½Az²` and the
/// remainder envelope `e = Σ y²(1 ∧ yz/6) p` with `|R| ≤ e·z²`, `e ≤ A`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MechanismEval {
    pub psi: f64,
    pub psi0: f64,
    pub psi_prime: f64,
    pub psi0_prime: f64,
    pub psi0_second: f64,
    pub a: f64,
    pub r: f64,
    pub e_bound: f64,
}

pub fn mechanism_eval(model: &Model, x: usize, z: f64) -> Result<MechanismEval> {
    if x >= model.n() {
        return Err(Error::InvalidArgument(format!(
            "site index {x} out of range (n = {})",
            model.n()
        )));
    }
    if !(z.is_finite() && z >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "mechanism argument z must be nonnegative, got {z}"
        )));
    }
    let alpha = model.mech.alpha[x];
    let beta = model.mech.beta[x];
    let mut psi0 = alpha * z * z;
    let mut psi0_prime = 2.0 * alpha * z;
    let mut psi0_second = 2.0 * alpha;
    let mut e_bound = 0.0;
    for atom in &model.mech.pi[x] {
        let yz = atom.y * z;
        // exp_m1 keeps e^{-yz} - 1 + yz accurate for small yz.
        psi0 += ((-yz).exp_m1() + yz) * atom.p;
        psi0_prime += -(-yz).exp_m1() * atom.y * atom.p;
        psi0_second += atom.y * atom.y * (-yz).exp() * atom.p;
        e_bound += atom.y * atom.y * (yz / 6.0).min(1.0) * atom.p;
    }
    let a = model.a_coeff(x);
    Ok(MechanismEval {
        psi: -beta * z + psi0,
        psi0,
        psi_prime: -beta + psi0_prime,
        psi0_prime,
        psi0_second,
        a,
        r: psi0 - 0.5 * a * z * z,
        e_bound,
    })
}

/// `Ψ0(x, v[x])` per site, for the ODE right-hand sides.  `v` must be
/// entrywise nonnegative (guarded upstream).
pub(crate) fn psi0_vec(model: &Model, v: &nalgebra::DVector<f64>) -> nalgebra::DVector<f64> {
    nalgebra::DVector::from_fn(model.n(), |x, _| {
        let z = v[x];
        let alpha = model.mech.alpha[x];
        let mut out = alpha * z * z;
        for atom in &model.mech.pi[x] {
            let yz = atom.y * z;
            out += ((-yz).exp_m1() + yz) * atom.p;
        }
        out
    })
}

/// `Ψ0'(x, v[x])` per site.
pub(crate) fn psi0_prime_vec(model: &Model, v: &nalgebra::DVector<f64>) -> nalgebra::DVector<f64> {
    nalgebra::DVector::from_fn(model.n(), |x, _| psi0_prime_at(model, x, v[x]))
}

pub(crate) fn psi0_prime_at(model: &Model, x: usize, z: f64) -> f64 {
    let mut out = 2.0 * model.mech.alpha[x] * z;
    for atom in &model.mech.pi[x] {
        out += -(-atom.y * z).exp_m1() * atom.y * atom.p;
    }
    out
}

/// `Ψ0''(x, v[x])` per site.
pub(crate) fn psi0_second_vec(model: &Model, v: &nalgebra::DVector<f64>) -> nalgebra::DVector<f64> {
    nalgebra::DVector::from_fn(model.n(), |x, _| {
        let mut out = 2.0 * model.mech.alpha[x];
        for atom in &model.mech.pi[x] {
            out += atom.y * atom.y * (-atom.y * v[x]).exp() * atom.p;
        }
        out
    })
}

/// One named validation check with its diagnostic.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationCheck {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

/// Result of [`validate_model`]: structural checks are hard errors, the
/// standing assumptions are reported per check.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<ValidationCheck>,
}

impl ValidationReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    fn push(&mut self, name: &str, pass: bool, detail: String) {
        self.checks.push(ValidationCheck {
            name: name.to_string(),
            pass,
            detail,
        });
    }
}

/// Validates the standing assumptions in their finite-space form:
/// irreducibility of the motion, non-degeneracy of `Ψ0`, the extinction
/// (Grey-type) condition, boundedness of `Aφ` (reported as its value), and
/// the criticality residual `|λ|`.
pub fn validate_model(model: &Model) -> Result<ValidationReport> {
    model.check_structure()?;
    let mut report = ValidationReport { checks: Vec::new() };

    let irreducible = model.is_irreducible();
    report.push(
        "irreducible_motion",
        irreducible,
        if irreducible {
            "off-diagonal structure strongly connected".into()
        } else {
            "motion digraph is not strongly connected".into()
        },
    );

    let nondeg = model.psi0_nondegenerate();
    report.push(
        "psi0_nondegenerate",
        nondeg,
        if nondeg {
            "some site has alpha > 0 or an active pi atom".into()
        } else {
            "Psi0 vanishes identically".into()
        },
    );

    // Extinction condition.  alpha > 0 everywhere is sufficient; otherwise
    // integrate the theta-doubling limit of v at t = 1 and demand a finite
    // converged value (blow-up threshold handled inside extinction_v).
    if model.mech.alpha.iter().all(|&a| a > 0.0) {
        report.push(
            "grey_extinction",
            true,
            "alpha > 0 at every site (sufficient condition)".into(),
        );
    } else {
        match crate::cumulant::extinction_v(model, 1.0, 1e-6) {
            Ok(v) => report.push(
                "grey_extinction",
                true,
                format!("v_1 finite, max entry {:.6e}", v.max()),
            ),
            Err(e) => report.push("grey_extinction", false, format!("{e}")),
        }
    }

    if irreducible {
        match crate::spectral::principal_triple(model) {
            Ok(sd) => {
                let aphi_max = (0..model.n())
                    .map(|x| model.a_coeff(x) * sd.phi[x])
                    .fold(f64::NEG_INFINITY, f64::max);
                report.push(
                    "a_phi_bounded",
                    true,
                    format!("max A(x)phi(x) = {aphi_max:.6}"),
                );
                let residual = sd.lambda.abs();
                let pass = !model.critical || residual <= 1e-8;
                report.push(
                    "criticality",
                    pass,
                    format!(
                        "|lambda| = {residual:.3e}{}",
                        if model.critical { "" } else { " (model not marked critical)" }
                    ),
                );
            }
            Err(e) => {
                report.push("a_phi_bounded", false, format!("{e}"));
                report.push("criticality", false, "principal triple unavailable".into());
            }
        }
    } else {
        report.push("a_phi_bounded", false, "motion not irreducible".into());
        report.push("criticality", false, "motion not irreducible".into());
    }

    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use approx::assert_relative_eq;

    #[test]
    fn mechanism_eval_quadratic_only() {
        // One-site alpha-only mechanism: Psi0 = z^2.
        let m1 = fixtures::m1();
        let e = mechanism_eval(&m1, 0, 2.0).unwrap();
        assert_relative_eq!(e.psi, 4.0);
        assert_relative_eq!(e.psi0, 4.0);
        assert_relative_eq!(e.psi_prime, 4.0);
        assert_relative_eq!(e.psi0_prime, 4.0);
        assert_relative_eq!(e.psi0_second, 2.0);
        assert_relative_eq!(e.a, 2.0);
        assert_relative_eq!(e.r, 0.0);
        assert_relative_eq!(e.e_bound, 0.0);
    }

    #[test]
    fn mechanism_eval_at_zero() {
        for model in [fixtures::m1(), fixtures::m2(), fixtures::m3_raw()] {
            for x in 0..model.n() {
                let e = mechanism_eval(&model, x, 0.0).unwrap();
                assert_eq!(e.psi, 0.0);
                assert_eq!(e.psi0, 0.0);
                assert_eq!(e.psi0_prime, 0.0);
                assert_relative_eq!(e.psi0_second, e.a, max_relative = 1e-15);
                assert_eq!(e.r, 0.0);
            }
        }
    }

    #[test]
    fn mechanism_eval_single_atom() {
        // alpha = 0, pi = {(y=1, p=1)}: Psi0(1) = e^{-1} - 1 + 1 = e^{-1}.
        let model = fixtures::single_site_jump();
        let e = mechanism_eval(&model, 0, 1.0).unwrap();
        assert_relative_eq!(e.psi0, (-1.0f64).exp(), max_relative = 1e-12);
        assert_relative_eq!(e.a, 1.0);
        assert_relative_eq!(e.r, (-1.0f64).exp() - 0.5, max_relative = 1e-12);
        assert_relative_eq!(e.e_bound, 1.0 / 6.0);
        assert!(e.r.abs() <= e.e_bound * 1.0);
    }

    #[test]
    fn negative_rate_rejected_with_field_name() {
        let mut m2 = fixtures::m2();
        m2.motion.q[0][1] = -0.5;
        let err = m2.check_structure().unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("motion.q[0][1]"), "message was: {msg}");
    }

    #[test]
    fn empty_space_rejected() {
        let m = Model {
            space: StateSpace { labels: vec![], m: vec![] },
            motion: RateMatrix { q: vec![], kill: vec![] },
            mech: BranchingMechanism { beta: vec![], alpha: vec![], pi: vec![] },
            critical: false,
        };
        assert!(m.check_structure().is_err());
    }

    #[test]
    fn nonpositive_reference_weight_rejected() {
        let mut m = fixtures::m2();
        m.space.m[1] = 0.0;
        let msg = format!("{}", m.check_structure().unwrap_err());
        assert!(msg.contains("space.m[1]"), "message was: {msg}");
    }

    #[test]
    fn mechanism_eval_rejects_negative_z() {
        let m1 = fixtures::m1();
        assert!(mechanism_eval(&m1, 0, -0.1).is_err());
    }

    #[test]
    fn validate_m1_m2_all_pass() {
        for model in [fixtures::m1(), fixtures::m2()] {
            let report = validate_model(&model).unwrap();
            assert!(report.all_pass(), "report: {report:?}");
        }
    }

    #[test]
    fn validate_names_criticality_residual() {
        let report = validate_model(&fixtures::m3()).unwrap();
        assert!(report.all_pass(), "report: {report:?}");
        let crit = report.checks.iter().find(|c| c.name == "criticality").unwrap();
        assert!(crit.detail.contains("|lambda|"));
    }

    #[test]
    fn pure_jump_mechanism_fails_grey_check() {
        // Finite-mean pure-jump mechanism: Psi0 grows linearly, mass never
        // dies in finite time, so the theta-doubling limit cannot converge.
        let model = fixtures::single_site_jump();
        let report = validate_model(&model).unwrap();
        let grey = report.checks.iter().find(|c| c.name == "grey_extinction").unwrap();
        assert!(!grey.pass, "grey check unexpectedly passed: {report:?}");
    }

    #[test]
    fn derivative_consistency_by_finite_differences() {
        let models = [fixtures::m1(), fixtures::m2(), fixtures::m3_raw(), fixtures::single_site_jump()];
        for model in &models {
            for x in 0..model.n() {
                for &z in &[0.1f64, 1.0, 5.0] {
                    let h = 1e-5 * z.max(1.0);
                    let up = mechanism_eval(model, x, z + h).unwrap();
                    let dn = mechanism_eval(model, x, z - h).unwrap();
                    let mid = mechanism_eval(model, x, z).unwrap();
                    let fd1 = (up.psi0 - dn.psi0) / (2.0 * h);
                    let fd2 = (up.psi0_prime - dn.psi0_prime) / (2.0 * h);
                    if mid.psi0_prime.abs() > 1e-30 {
                        assert_relative_eq!(fd1, mid.psi0_prime, max_relative = 1e-6);
                    }
                    if mid.psi0_second.abs() > 1e-30 {
                        assert_relative_eq!(fd2, mid.psi0_second, max_relative = 1e-6);
                    }
                }
            }
        }
    }

    proptest::proptest! {
        /// Mechanism shape invariants on a z-grid for randomized one-site
        /// mechanisms: Psi0 >= 0 and convex, Psi' = -beta + Psi0',
        /// Psi0'(0) = 0, Psi0'' nonincreasing with Psi0''(0) = A,
        /// |R| <= e z^2 and e <= A.
        #[test]
        fn mechanism_shape_invariants(
            alpha in 0.0f64..3.0,
            beta in -1.0f64..1.0,
            y1 in 0.05f64..4.0,
            p1 in 0.0f64..2.0,
            y2 in 0.05f64..4.0,
            p2 in 0.0f64..2.0,
        ) {
            let model = fixtures::custom_single_site(beta, alpha, &[(y1, p1), (y2, p2)]);
            let zs: Vec<f64> = (0..=40).map(|k| k as f64 * 0.25).collect();
            let mut prev_second = f64::INFINITY;
            for &z in &zs {
                let e = mechanism_eval(&model, 0, z).unwrap();
                proptest::prop_assert!(e.psi0 >= -1e-12);
                proptest::prop_assert!((e.psi_prime - (-beta + e.psi0_prime)).abs() < 1e-12);
                proptest::prop_assert!(e.psi0_second <= prev_second + 1e-12);
                prev_second = e.psi0_second;
                proptest::prop_assert!(e.r.abs() <= e.e_bound * z * z + 1e-12);
                proptest::prop_assert!(e.e_bound <= e.a + 1e-12);
                // Convexity by second differences.
                if z > 0.4 {
                    let h = 0.2;
                    let up = mechanism_eval(&model, 0, z + h).unwrap().psi0;
                    let dn = mechanism_eval(&model, 0, z - h).unwrap().psi0;
                    proptest::prop_assert!(up + dn - 2.0 * e.psi0 >= -1e-10);
                }
            }
            let at0 = mechanism_eval(&model, 0, 0.0).unwrap();
            proptest::prop_assert!(at0.psi0_prime == 0.0);
            proptest::prop_assert!((at0.psi0_second - at0.a).abs() < 1e-12);
        }
    }
}
