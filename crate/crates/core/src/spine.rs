//! Spine and 2-spine samplers with semi-analytic conditional evaluators.
//!
//! The `(g,T)`-spine is the motion tilted by `g(ξ_T) e^{∫β}` — a
//! time-inhomogeneous chain whose jump rate from `x` to `y` at time `s` is
//! `Q[x][y] h_s(y)/h_s(x)` with `h_s = S_{T-s} g`.  Jump times are drawn by
//! inverting the exact holding probability
//! `e^{(b-s) L[x][x]} h_b(x)/h_s(x)` on the precomputed `h` grid, which also
//! handles `g` vanishing at sites (the chain is then forced out before `T`;
//! no finite thinning majorant exists there).
//!
//! Conditioned on a spine, immigration is Poisson along the trajectory with
//! a continuum stream (rate `2α/ε`, ε-mass excursion starts) and a jump
//! stream (rate `y_i p_i` per atom, offspring `y_i δ_x`).  The conditional
//! Laplace functional of the immigration has the exact form
//! `exp(-∫ Ψ0'(u_s)(ξ_s) ds)`, so averaging that expression over sampled
//! spines estimates size-biased functionals without simulating any mass at
//! all — the primary verification path.  The 2-spine skeleton adds a
//! splitting time `κ` with density proportional to `(Aφ)(ξ_s)`, an
//! auxiliary φ-spine from the split point, and a split-time factor from the
//! two-point law.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::cumulant::{CumulantSolution, TestFunctional};
use crate::error::{Error, Result};
use crate::model::{psi0_prime_at, Model};
use crate::pathsim::{self, PathSample, SimConfig};
use crate::spectral::{self, SpectralData};

/// Piecewise-constant trajectory on `[start, horizon]`.
/// `segments[0].0 == start`; states are right-continuous.
#[derive(Debug, Clone)]
pub struct SpinePath {
    pub start: f64,
    pub horizon: f64,
    pub segments: Vec<(f64, usize)>,
}

impl SpinePath {
    pub fn state_at(&self, s: f64) -> usize {
        let mut state = self.segments[0].1;
        for &(t, x) in &self.segments {
            if t <= s {
                state = x;
            } else {
                break;
            }
        }
        state
    }

    pub fn terminal_state(&self) -> usize {
        self.segments.last().unwrap().1
    }

    pub fn jump_count(&self) -> usize {
        self.segments.len() - 1
    }

    /// Breakpoints of the trajectory clipped to `[from, to]`, as
    /// `(a, b, state)` runs.
    fn runs(&self, from: f64, to: f64) -> Vec<(f64, f64, usize)> {
        let mut out = Vec::new();
        let mut a = from;
        let mut state = self.state_at(from);
        for &(t, x) in &self.segments {
            if t <= from {
                continue;
            }
            if t >= to {
                break;
            }
            out.push((a, t, state));
            a = t;
            state = x;
        }
        out.push((a, to, state));
        out
    }
}

/// 2-spine skeleton: main spine on `[0, T]`, splitting time `κ`, auxiliary
/// spine on `[κ, T]` started at the main spine's state at `κ`.
#[derive(Debug, Clone)]
pub struct SkeletonSample {
    pub main: SpinePath,
    pub kappa: f64,
    pub aux: SpinePath,
    /// Importance weight; 1 for the default rejection sampler.
    pub weight: f64,
}

const H_GRID_STEPS: usize = 1000;

/// Sampler for the `(g, T)`-spine under the μ-mixture
/// `P^{(g,T)}_{μ S_T g}`.  Precomputes `h_s = S_{T-s} g` on a uniform grid.
pub struct GtSpineSampler<'m> {
    model: &'m Model,
    pub horizon: f64,
    grid_step: f64,
    h: Vec<DVector<f64>>,
    start_cdf: Vec<f64>,
}

impl<'m> GtSpineSampler<'m> {
    pub fn new(model: &'m Model, mu: &DVector<f64>, g: &DVector<f64>, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0) {
            return Err(Error::InvalidArgument("horizon must be positive".into()));
        }
        let m_g: f64 = (0..model.n()).map(|x| model.space.m[x] * g[x]).sum();
        if !(m_g > 0.0) || g.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidArgument(
                "spine terminal function needs g >= 0 with m(g) > 0".into(),
            ));
        }
        let step = horizon / H_GRID_STEPS as f64;
        let e = spectral::semigroup_matrix(model, step);
        let mut h = vec![DVector::zeros(model.n()); H_GRID_STEPS + 1];
        h[H_GRID_STEPS] = g.clone();
        for k in (0..H_GRID_STEPS).rev() {
            h[k] = &e * &h[k + 1];
        }
        let mut start_cdf = Vec::with_capacity(model.n());
        let mut acc = 0.0;
        for x in 0..model.n() {
            acc += mu[x] * h[0][x];
            start_cdf.push(acc);
        }
        if !(acc > 0.0) {
            return Err(Error::InvalidArgument(
                "initial measure has zero mass against S_T g".into(),
            ));
        }
        Ok(GtSpineSampler {
            model,
            horizon,
            grid_step: step,
            h,
            start_cdf,
        })
    }

    /// Linear interpolation of `h_s(x)`.
    fn h_at(&self, s: f64, x: usize) -> f64 {
        let pos = (s / self.grid_step).clamp(0.0, H_GRID_STEPS as f64);
        let k = (pos.floor() as usize).min(H_GRID_STEPS - 1);
        let w = pos - k as f64;
        (1.0 - w) * self.h[k][x] + w * self.h[k + 1][x]
    }

    /// Holding probability in `x` from `s` to `b` under the transform.
    fn survival(&self, x: usize, s: f64, b: f64) -> f64 {
        let c = self.model.motion.q[x][x] + self.model.mech.beta[x];
        ((b - s) * c).exp() * self.h_at(b, x) / self.h_at(s, x)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SpinePath {
        let total = *self.start_cdf.last().unwrap();
        let u0 = rng.random::<f64>() * total;
        let mut state = self.start_cdf.len() - 1;
        for (x, &c) in self.start_cdf.iter().enumerate() {
            if u0 <= c {
                state = x;
                break;
            }
        }
        let mut segments = vec![(0.0, state)];
        let mut s = 0.0;
        loop {
            let u: f64 = rng.random();
            if u <= self.survival(state, s, self.horizon) {
                break;
            }
            // Bisect the first jump time: survival is decreasing in b.
            let (mut lo, mut hi) = (s, self.horizon);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if self.survival(state, s, mid) > u {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo <= 1e-13 * self.horizon {
                    break;
                }
            }
            let b = 0.5 * (lo + hi);
            // Destination ~ Q[x][y] h_b(y).
            let weights: Vec<f64> = (0..self.model.n())
                .map(|y| {
                    if y == state {
                        0.0
                    } else {
                        self.model.motion.q[state][y] * self.h_at(b, y)
                    }
                })
                .collect();
            let wtot: f64 = weights.iter().sum();
            if !(wtot > 0.0) {
                break;
            }
            let mut uw = rng.random::<f64>() * wtot;
            let mut dest = weights.len() - 1;
            for (y, &w) in weights.iter().enumerate() {
                uw -= w;
                if uw <= 0.0 {
                    dest = y;
                    break;
                }
            }
            segments.push((b, dest));
            state = dest;
            s = b;
        }
        SpinePath {
            start: 0.0,
            horizon: self.horizon,
            segments,
        }
    }

    /// Exact occupation law at time `t`:
    /// `P(ξ_t = y) = Σ_x μ(x) [e^{tL}]_{xy} h_t(y) / ⟨μ, h_0⟩`, evaluated
    /// from the start CDF (which already encodes `μ(x) h_0(x)`).
    pub fn marginal(&self, mu: &DVector<f64>, t: f64) -> Vec<f64> {
        let n = self.model.n();
        let e = spectral::semigroup_matrix(self.model, t);
        let mut probs = vec![0.0; n];
        let mut total = 0.0;
        for y in 0..n {
            let mut p = 0.0;
            for x in 0..n {
                p += mu[x] * e[(x, y)] * self.h_at(t, y);
            }
            probs[y] = p;
            total += p;
        }
        for p in &mut probs {
            *p /= total;
        }
        probs
    }
}

/// Samples the `(g,T)`-spine once.  For repeated sampling construct a
/// [`GtSpineSampler`] and reuse it.
pub fn sample_spine_gt<R: Rng + ?Sized>(
    model: &Model,
    mu: &DVector<f64>,
    g: &DVector<f64>,
    horizon: f64,
    rng: &mut R,
) -> Result<SpinePath> {
    if !model.critical {
        return Err(Error::Model("spine sampling requires a critical model".into()));
    }
    Ok(GtSpineSampler::new(model, mu, g, horizon)?.sample(rng))
}

/// Homogeneous φ-spine chain (generator `Q̇`) from a fixed state on
/// `[t0, t1]`, by exact exponential holding times.
pub fn sample_phi_spine<R: Rng + ?Sized>(
    qdot: &DMatrix<f64>,
    start_state: usize,
    t0: f64,
    t1: f64,
    rng: &mut R,
) -> SpinePath {
    let n = qdot.nrows();
    let mut segments = vec![(t0, start_state)];
    let mut state = start_state;
    let mut s = t0;
    loop {
        let rate = -qdot[(state, state)];
        if rate <= 0.0 {
            break;
        }
        s += -rng.random::<f64>().ln() / rate;
        if s >= t1 {
            break;
        }
        let mut u = rng.random::<f64>() * rate;
        let mut dest = state;
        for y in 0..n {
            if y != state {
                u -= qdot[(state, y)];
                if u <= 0.0 {
                    dest = y;
                    break;
                }
            }
        }
        segments.push((s, dest));
        state = dest;
    }
    SpinePath {
        start: t0,
        horizon: t1,
        segments,
    }
}

/// Poisson immigration along a spine: a continuum stream at rate
/// `2α(ξ_s)/ε` launching ε-mass excursions, and a jump stream at rate
/// `Σ_i y_i p_i` launching offspring `y_i δ_{ξ_s}` with atom `i` chosen
/// proportionally to `y_i p_i`.  Returns the accumulated immigration mass
/// `Y` at the record times.
pub fn sample_spine_immigration<R: Rng + ?Sized>(
    model: &Model,
    spine: &SpinePath,
    record: &[f64],
    cfg: &SimConfig,
    rng: &mut R,
) -> Result<PathSample> {
    let n = model.n();
    let eps = cfg.eps_excursion;
    let mut mass: Vec<DVector<f64>> = record.iter().map(|_| DVector::zeros(n)).collect();
    let mut spawn = |s: f64, child_mu: DVector<f64>, rng: &mut R| -> Result<()> {
        let offsets: Vec<f64> = record
            .iter()
            .filter(|&&t| t >= s)
            .map(|&t| t - s)
            .collect();
        if offsets.is_empty() {
            return Ok(());
        }
        let t_child = *offsets.last().unwrap();
        let path = if t_child > 0.0 {
            child_path(model, &child_mu, t_child, &offsets, cfg, rng)?
        } else {
            PathSample {
                grid: offsets.clone(),
                mass: offsets.iter().map(|_| child_mu.clone()).collect(),
                extinct_at: None,
            }
        };
        let skip = record.len() - offsets.len();
        for (j, m) in path.mass.iter().take(offsets.len()).enumerate() {
            mass[skip + j] += m;
        }
        Ok(())
    };
    for (a, b, x) in spine.runs(spine.start, spine.horizon) {
        let len = b - a;
        if len <= 0.0 {
            continue;
        }
        // Continuum stream.
        let alpha = model.mech.alpha[x];
        if alpha > 0.0 {
            let count = pathsim_poisson(2.0 * alpha / eps * len, rng);
            for _ in 0..count {
                let s = a + rng.random::<f64>() * len;
                let mut mu = DVector::zeros(n);
                mu[x] = eps;
                spawn(s, mu, rng)?;
            }
        }
        // Jump stream.
        let jump_rate = model.pi_mass_rate(x);
        if jump_rate > 0.0 {
            let count = pathsim_poisson(jump_rate * len, rng);
            for _ in 0..count {
                let s = a + rng.random::<f64>() * len;
                let mut u = rng.random::<f64>() * jump_rate;
                let mut y = model.mech.pi[x].last().map(|at| at.y).unwrap_or(0.0);
                for atom in &model.mech.pi[x] {
                    u -= atom.y * atom.p;
                    if u <= 0.0 {
                        y = atom.y;
                        break;
                    }
                }
                let mut mu = DVector::zeros(n);
                mu[x] = y;
                spawn(s, mu, rng)?;
            }
        }
    }
    Ok(PathSample {
        grid: record.to_vec(),
        mass,
        extinct_at: None,
    })
}

fn pathsim_poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    crate::prm::poisson_draw(mean, rng)
}

/// Child simulation: splitting sampler (exact branching boundary), with a
/// dt cap so short horizons still take a few steps.
fn child_path<R: Rng + ?Sized>(
    model: &Model,
    mu: &DVector<f64>,
    t_end: f64,
    record: &[f64],
    cfg: &SimConfig,
    rng: &mut R,
) -> Result<PathSample> {
    // Splitting error lives in the smooth terms only, so children can take
    // coarser steps than the parent Euler path.
    let dt = cfg.dt.max(5e-3).min(t_end / 20.0).max(1e-9);
    pathsim::simulate_splitting(model, mu, t_end, record, dt, rng)
}

/// Terminal immigration mass `Y_T` for one-site quadratic mechanisms, with
/// exact Feller children instead of Euler paths.  Valid when the model has a
/// single site, `α > 0` and no jump atoms.
pub fn immigration_terminal_exact<R: Rng + ?Sized>(
    model: &Model,
    horizon: f64,
    eps: f64,
    rng: &mut R,
) -> Result<f64> {
    if model.n() != 1 || !model.mech.pi[0].is_empty() || model.mech.alpha[0] <= 0.0 {
        return Err(Error::InvalidArgument(
            "exact immigration endpoint needs a one-site quadratic mechanism".into(),
        ));
    }
    let alpha = model.mech.alpha[0];
    let count = pathsim_poisson(2.0 * alpha / eps * horizon, rng);
    let mut total = 0.0;
    for _ in 0..count {
        let s = rng.random::<f64>() * horizon;
        let remain = horizon - s;
        if remain <= 0.0 {
            total += eps;
        } else {
            total += pathsim::sample_feller_exact(alpha, eps, remain, rng)?;
        }
    }
    Ok(total)
}

/// Scalar interpolation of `u_s(x)` on the occupation grid; `from_left`
/// picks the left limit when `s` is a node.
fn site_interp(sol: &CumulantSolution, s: f64, x: usize, from_left: bool) -> f64 {
    let grid = &sol.grid;
    let t_end = *grid.last().unwrap();
    let tol = 1e-12 * t_end.max(1.0);
    let last = grid.len() - 1;
    if s >= grid[last] - tol {
        return if from_left {
            sol.site_left_limit(last, x)
        } else {
            sol.site_value(last, x)
        };
    }
    if s <= grid[0] + tol {
        return sol.site_value(0, x);
    }
    let k = grid.partition_point(|g| *g <= s);
    // grid[k-1] <= s < grid[k].
    if (grid[k - 1] - s).abs() <= tol {
        return if from_left {
            sol.site_left_limit(k - 1, x)
        } else {
            sol.site_value(k - 1, x)
        };
    }
    let w = (s - grid[k - 1]) / (grid[k] - grid[k - 1]);
    (1.0 - w) * sol.site_value(k - 1, x) + w * sol.site_left_limit(k, x)
}

/// `∫_{from}^{to} Ψ0'(u_s)(ξ_s) ds` over a piecewise-constant spine, with
/// `u` interpolated on the occupation grid (trapezoid per grid panel).
fn potential_integral(
    model: &Model,
    sol: &CumulantSolution,
    spine: &SpinePath,
    from: f64,
    to: f64,
) -> f64 {
    let grid = &sol.grid;
    let mut acc = 0.0;
    for (a, b, x) in spine.runs(from, to) {
        let mut prev_s = a;
        let mut prev_psi = psi0_prime_at(model, x, site_interp(sol, a, x, false));
        let mut k = grid.partition_point(|g| *g <= a);
        while k < grid.len() && grid[k] < b {
            let left_psi = psi0_prime_at(model, x, sol.site_left_limit(k, x));
            acc += 0.5 * (prev_psi + left_psi) * (grid[k] - prev_s);
            prev_s = grid[k];
            prev_psi = psi0_prime_at(model, x, sol.site_value(k, x));
            k += 1;
        }
        let end_psi = psi0_prime_at(model, x, site_interp(sol, b, x, true));
        acc += 0.5 * (prev_psi + end_psi) * (b - prev_s);
    }
    acc
}

fn check_alignment(spine: &SpinePath, kf: &TestFunctional, sol: &CumulantSolution) -> Result<()> {
    let t = sol.horizon();
    if (kf.horizon - t).abs() > 1e-9 * t.max(1.0) || (spine.horizon - t).abs() > 1e-9 * t.max(1.0) {
        return Err(Error::InvalidArgument(
            "spine, test functional and occupation solution horizons disagree".into(),
        ));
    }
    Ok(())
}

/// Exact conditional Laplace functional of the spine immigration:
/// `Ṗ[e^{-K^f(Y)} | ξ] = exp(-∫_0^T Ψ0'(u_s)(ξ_s) ds)`.  Averaging over
/// sampled spines estimates the `w_T(g)`-transformed functional
/// `N_μ^{w_T(g)}[e^{-K^f}]` with no path simulation.
pub fn spine_conditional_laplace(
    model: &Model,
    spine: &SpinePath,
    kf: &TestFunctional,
    sol: &CumulantSolution,
) -> Result<f64> {
    check_alignment(spine, kf, sol)?;
    Ok((-potential_integral(model, sol, spine, spine.start, spine.horizon)).exp())
}

/// 2-spine sampler pieces shared across replicates.
pub struct TwoSpineSampler {
    pub horizon: f64,
    qdot: DMatrix<f64>,
    aphi: Vec<f64>,
    aphi_max: f64,
    start_cdf: Vec<f64>,
}

const TWO_SPINE_REJECTION_CAP: usize = 1_000_000;

impl TwoSpineSampler {
    pub fn new(
        model: &Model,
        sd: &SpectralData,
        mu: &DVector<f64>,
        horizon: f64,
    ) -> Result<Self> {
        if !model.critical {
            return Err(Error::Model("2-spine sampling requires a critical model".into()));
        }
        let n = model.n();
        let aphi: Vec<f64> = (0..n).map(|x| model.a_coeff(x) * sd.phi[x]).collect();
        let aphi_max = aphi.iter().cloned().fold(0.0, f64::max);
        if !(aphi_max > 0.0) {
            return Err(Error::Model("A phi vanishes identically; no 2-spine".into()));
        }
        let mut start_cdf = Vec::with_capacity(n);
        let mut acc = 0.0;
        for x in 0..n {
            acc += mu[x] * sd.phi[x];
            start_cdf.push(acc);
        }
        if !(acc > 0.0) {
            return Err(Error::InvalidArgument("mu(phi) must be positive".into()));
        }
        Ok(TwoSpineSampler {
            horizon,
            qdot: spectral::spine_generator_with(model, sd),
            aphi,
            aphi_max,
            start_cdf,
        })
    }

    fn aphi_integral(&self, spine: &SpinePath) -> f64 {
        spine
            .runs(0.0, self.horizon)
            .iter()
            .map(|&(a, b, x)| (b - a) * self.aphi[x])
            .sum()
    }

    /// Rejection sampling of the main spine (density ∝ `∫ (Aφ)(ξ_s) ds`
    /// against the φ-spine law), exact inverse-CDF draw of `κ`, and a fresh
    /// φ-chain for the auxiliary spine.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<SkeletonSample> {
        let total = *self.start_cdf.last().unwrap();
        let mut main = None;
        for _ in 0..TWO_SPINE_REJECTION_CAP {
            let u0 = rng.random::<f64>() * total;
            let mut state = self.start_cdf.len() - 1;
            for (x, &c) in self.start_cdf.iter().enumerate() {
                if u0 <= c {
                    state = x;
                    break;
                }
            }
            let candidate = sample_phi_spine(&self.qdot, state, 0.0, self.horizon, rng);
            let w = self.aphi_integral(&candidate);
            if rng.random::<f64>() * self.horizon * self.aphi_max <= w {
                main = Some((candidate, w));
                break;
            }
        }
        let (main, w) = main.ok_or_else(|| {
            Error::NonConvergence("2-spine rejection cap exhausted".into())
        })?;
        // kappa by inverse CDF of the piecewise-constant density (A phi)(xi_s).
        let mut target = rng.random::<f64>() * w;
        let mut kappa = self.horizon;
        for (a, b, x) in main.runs(0.0, self.horizon) {
            let seg = (b - a) * self.aphi[x];
            if target <= seg {
                kappa = a + target / self.aphi[x];
                break;
            }
            target -= seg;
        }
        let split_state = main.state_at(kappa);
        let aux = sample_phi_spine(&self.qdot, split_state, kappa, self.horizon, rng);
        Ok(SkeletonSample {
            main,
            kappa,
            aux,
            weight: 1.0,
        })
    }
}

/// Samples one 2-spine skeleton.  For repeated sampling construct a
/// [`TwoSpineSampler`].
pub fn sample_two_spine<R: Rng + ?Sized>(
    model: &Model,
    sd: &SpectralData,
    mu: &DVector<f64>,
    horizon: f64,
    rng: &mut R,
) -> Result<SkeletonSample> {
    TwoSpineSampler::new(model, sd, mu, horizon)?.sample(rng)
}

/// Exact conditional Laplace functional of the total 2-spine immigration:
/// main factor `exp(-∫_0^T Ψ0'(u_s)(ξ_s) ds)`, auxiliary factor
/// `exp(-∫_κ^T Ψ0'(u_s)(ξ'_s) ds)`, and the split factor
/// `(2α(x) + Σ_i y_i² p_i e^{-y_i u_κ(x)}) / A(x)` at `x = ξ_κ` (1 when
/// `A(x) = 0`).  Averaging over skeletons estimates the
/// `w_T(φ)²`-transformed functional.
pub fn two_spine_conditional_laplace(
    model: &Model,
    skel: &SkeletonSample,
    kf: &TestFunctional,
    sol: &CumulantSolution,
) -> Result<f64> {
    check_alignment(&skel.main, kf, sol)?;
    let main_factor =
        (-potential_integral(model, sol, &skel.main, 0.0, skel.main.horizon)).exp();
    let aux_factor =
        (-potential_integral(model, sol, &skel.aux, skel.kappa, skel.aux.horizon)).exp();
    let x = skel.main.state_at(skel.kappa);
    let a = model.a_coeff(x);
    let split_factor = if a > 0.0 {
        let u_kappa = sol.u_at(skel.kappa);
        let mut num = 2.0 * model.mech.alpha[x];
        for atom in &model.mech.pi[x] {
            num += atom.y * atom.y * atom.p * (-atom.y * u_kappa[x]).exp();
        }
        num / a
    } else {
        1.0
    };
    Ok(main_factor * aux_factor * split_factor)
}

/// Total immigration `Z = Y + Y' + X'` of the 2-spine skeleton: main-spine
/// immigration on `[0, T]`, auxiliary immigration on `[κ, T]`, and one
/// split-time path from the two-point law; `Y'` and `X'` vanish before `κ`.
pub fn sample_two_spine_paths<R: Rng + ?Sized>(
    model: &Model,
    skel: &SkeletonSample,
    record: &[f64],
    cfg: &SimConfig,
    rng: &mut R,
) -> Result<PathSample> {
    let y_main = sample_spine_immigration(model, &skel.main, record, cfg, rng)?;
    let y_aux = sample_spine_immigration(model, &skel.aux, record, cfg, rng)?;
    let x = skel.main.state_at(skel.kappa);
    let remain = skel.main.horizon - skel.kappa;
    let offsets: Vec<f64> = record
        .iter()
        .filter(|&&t| t >= skel.kappa)
        .map(|&t| t - skel.kappa)
        .collect();
    let mut mass: Vec<DVector<f64>> = y_main.mass.clone();
    for (i, m) in y_aux.mass.iter().enumerate() {
        mass[i] += m;
    }
    if !offsets.is_empty() && remain > 0.0 {
        let mut split_cfg = *cfg;
        split_cfg.dt = cfg.dt.min(remain / 100.0).max(1e-9);
        let xp = pathsim::sample_ptilde(model, x, remain, &offsets, &split_cfg, rng)?;
        let skip = record.len() - offsets.len();
        for (j, m) in xp.mass.iter().take(offsets.len()).enumerate() {
            mass[skip + j] += m;
        }
    }
    Ok(PathSample {
        grid: record.to_vec(),
        mass,
        extinct_at: None,
    })
}
