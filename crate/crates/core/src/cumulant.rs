//! Deterministic ODE oracles for the Laplace functionals of the process.
//!
//! On a finite space the mild equations all reduce to site-vector ODEs:
//!
//! * cumulant flow: `∂_t V_t f = L V_t f - Ψ0(V_t f)`, `V_0 f = f`;
//! * extinction function: `v_t = lim_θ V_t(θ·1)` by θ-doubling;
//! * occupation solution for an atomic test functional `(K, f)`:
//!   backward `-∂_s u = L u - Ψ0(u)` between atoms, with the jump
//!   `u_{t-} = u_{t+} + f_t` at each atom time (`u` right-continuous);
//! * first variation `u̇` (terminal `g`, continuous at atoms) and second
//!   variation `ü` (terminal `0`), giving
//!   `N_μ[w_T(g) e^{-K^f}] = ⟨μ, u̇_0⟩` and
//!   `N_μ[w_T(g)² e^{-K^f}] = -⟨μ, ü_0⟩`.
//!
//! Backward equations are integrated in reversed time, so the whole module
//! runs on one forward adaptive integrator.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{psi0_prime_vec, psi0_second_vec, psi0_vec, Model};
use crate::ode::{self, OdeOptions};
use crate::spectral::{self, SpectralData};

/// Atomic test functional `(K, f)`: finitely many atoms `t_i ∈ (0, T]`, each
/// carrying a nonnegative test vector `f_i`.  Evaluates as
/// `K^f(Y) = Σ_i Y_{t_i}(f_i)`.
#[derive(Debug, Clone)]
pub struct TestFunctional {
    pub horizon: f64,
    pub atoms: Vec<(f64, DVector<f64>)>,
}

impl TestFunctional {
    pub fn new(horizon: f64, atoms: Vec<(f64, DVector<f64>)>) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        let mut prev = 0.0;
        for (t, f) in &atoms {
            if !(*t > prev && *t <= horizon + 1e-12 * horizon) {
                return Err(Error::InvalidArgument(format!(
                    "atom times must be strictly increasing in (0, T], got {t}"
                )));
            }
            prev = *t;
            if f.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::InvalidArgument(
                    "atom test vectors must be nonnegative and finite".into(),
                ));
            }
        }
        Ok(TestFunctional { horizon, atoms })
    }

    pub fn empty(horizon: f64) -> Self {
        TestFunctional {
            horizon,
            atoms: Vec::new(),
        }
    }

    /// Single terminal atom `(T, f)`.
    pub fn terminal(horizon: f64, f: DVector<f64>) -> Result<Self> {
        TestFunctional::new(horizon, vec![(horizon, f)])
    }
}

/// Occupation solution on a grid, together with its variational companions
/// when filled.  `u` holds right-continuous values; the left limit at an
/// atom node adds the atom's test vector.
#[derive(Debug, Clone)]
pub struct CumulantSolution {
    pub grid: Vec<f64>,
    pub u: Vec<DVector<f64>>,
    pub u_dot: Option<Vec<DVector<f64>>>,
    pub u_ddot: Option<Vec<DVector<f64>>>,
    jumps: Vec<(usize, DVector<f64>)>,
}

impl CumulantSolution {
    fn jump_at(&self, idx: usize) -> Option<&DVector<f64>> {
        self.jumps
            .iter()
            .find(|(i, _)| *i == idx)
            .map(|(_, f)| f)
    }

    /// Value as the node is approached from below (left limit).
    pub fn u_left_limit(&self, idx: usize) -> DVector<f64> {
        match self.jump_at(idx) {
            Some(f) => &self.u[idx] + f,
            None => self.u[idx].clone(),
        }
    }

    /// Linear interpolation of the right-continuous solution at `s`.
    pub fn u_at(&self, s: f64) -> DVector<f64> {
        interp(&self.grid, &self.u, &self.jumps, s)
    }

    /// Value at `s` approached from the left (differs from [`Self::u_at`]
    /// only when `s` is an atom time).
    pub fn u_at_left(&self, s: f64) -> DVector<f64> {
        if let Some(idx) = self
            .grid
            .iter()
            .position(|g| (g - s).abs() <= 1e-12 * self.grid.last().unwrap().max(1.0))
        {
            return self.u_left_limit(idx);
        }
        self.u_at(s)
    }

    pub fn horizon(&self) -> f64 {
        *self.grid.last().unwrap()
    }

    /// Right-continuous value of site `x` at node `idx` (no allocation).
    pub fn site_value(&self, idx: usize, x: usize) -> f64 {
        self.u[idx][x]
    }

    /// Left limit of site `x` at node `idx` (adds the atom if present).
    pub fn site_left_limit(&self, idx: usize, x: usize) -> f64 {
        self.u[idx][x] + self.jump_at(idx).map_or(0.0, |f| f[x])
    }

    /// Linear interpolation of the first variation (requires it filled).
    pub fn u_dot_at(&self, s: f64) -> DVector<f64> {
        let ud = self.u_dot.as_ref().expect("u_dot not filled");
        interp(&self.grid, ud, &[], s)
    }
}

fn interp(grid: &[f64], vals: &[DVector<f64>], jumps: &[(usize, DVector<f64>)], s: f64) -> DVector<f64> {
    let last = grid.len() - 1;
    if s >= grid[last] {
        return vals[last].clone();
    }
    if s <= grid[0] {
        return vals[0].clone();
    }
    let k = match grid.binary_search_by(|g| g.partial_cmp(&s).unwrap()) {
        Ok(i) => return vals[i].clone(),
        Err(i) => i - 1,
    };
    let (a, b) = (grid[k], grid[k + 1]);
    let right = match jumps.iter().find(|(i, _)| *i == k + 1) {
        Some((_, f)) => &vals[k + 1] + f,
        None => vals[k + 1].clone(),
    };
    let w = (s - a) / (b - a);
    &vals[k] * (1.0 - w) + right * w
}

fn check_nonneg(name: &str, f: &DVector<f64>) -> Result<()> {
    if f.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "{name} must be entrywise nonnegative and finite"
        )));
    }
    Ok(())
}

fn solver_opts(tol: f64) -> OdeOptions {
    OdeOptions {
        atol: 1e-10,
        rtol: tol.clamp(1e-12, 1e-4),
        ..OdeOptions::default()
    }
}

/// `V_t f`: the nonlinear cumulant flow applied to `f ≥ 0`.
pub fn cumulant_vt(model: &Model, f: &DVector<f64>, t: f64, tol: f64) -> Result<DVector<f64>> {
    check_nonneg("initial data", f)?;
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::InvalidArgument(format!("time must be nonnegative, got {t}")));
    }
    let l = spectral::generator(model);
    let rhs = move |_s: f64, v: &DVector<f64>| &l * v - psi0_vec(model, v);
    ode::integrate(rhs, 0.0, t, f.clone(), &solver_opts(tol))
}

/// `V_t f` recorded along a time grid (one integration pass).
pub fn cumulant_vt_grid(
    model: &Model,
    f: &DVector<f64>,
    ts: &[f64],
    tol: f64,
) -> Result<Vec<DVector<f64>>> {
    check_nonneg("initial data", f)?;
    let t_end = *ts.last().ok_or_else(|| Error::InvalidArgument("empty grid".into()))?;
    let l = spectral::generator(model);
    let rhs = move |_s: f64, v: &DVector<f64>| &l * v - psi0_vec(model, v);
    ode::integrate_records(rhs, 0.0, t_end, f.clone(), ts, &solver_opts(tol))
}

const EXTINCTION_THETA_0: f64 = 64.0;
const EXTINCTION_MAX_DOUBLINGS: usize = 40;
const EXTINCTION_BLOWUP: f64 = 1e12;

/// Extinction function `v_t(x) = -log P_{δx}(X_t = 0)` on a grid of times,
/// computed as the θ-doubling limit of `V_t(θ·1)`.  For each θ the stiff
/// initial layer is crossed by one implicit Euler step to `s0 = tol/θ`.
pub fn extinction_v_grid(model: &Model, ts: &[f64], tol: f64) -> Result<Vec<DVector<f64>>> {
    if ts.is_empty() || ts.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
        return Err(Error::InvalidArgument("times must be positive".into()));
    }
    debug_assert!(ts.windows(2).all(|w| w[0] < w[1]));
    let n = model.n();
    let l = spectral::generator(model);
    let opts = solver_opts(tol);
    let mut prev: Option<Vec<DVector<f64>>> = None;
    let mut theta = EXTINCTION_THETA_0;
    for _ in 0..EXTINCTION_MAX_DOUBLINGS {
        let y0 = DVector::from_element(n, theta);
        let s0 = (tol / theta).min(ts[0] / 2.0);
        let f_auto = |v: &DVector<f64>| &l * v - psi0_vec(model, v);
        let jac = |v: &DVector<f64>| {
            let mut j = l.clone();
            let dp = psi0_prime_vec(model, v);
            for x in 0..n {
                j[(x, x)] -= dp[x];
            }
            j
        };
        let y1 = ode::implicit_euler_step(f_auto, jac, &y0, s0)?;
        let rhs = |_s: f64, v: &DVector<f64>| &l * v - psi0_vec(model, v);
        let vals = ode::integrate_records(rhs, s0, *ts.last().unwrap(), y1, ts, &opts)?;
        if vals.iter().any(|v| v.amax() > EXTINCTION_BLOWUP) {
            return Err(Error::NonConvergence(
                "extinction function exceeded the blow-up threshold".into(),
            ));
        }
        if let Some(p) = &prev {
            let rel = vals
                .iter()
                .zip(p.iter())
                .map(|(a, b)| (a - b).amax() / a.amax().max(1e-300))
                .fold(0.0f64, f64::max);
            if rel < tol {
                return Ok(vals);
            }
        }
        prev = Some(vals);
        theta *= 2.0;
    }
    Err(Error::NonConvergence(
        "extinction-condition failure: theta-doubling did not converge".into(),
    ))
}

/// Extinction function at a single time.
pub fn extinction_v(model: &Model, t: f64, tol: f64) -> Result<DVector<f64>> {
    Ok(extinction_v_grid(model, &[t], tol)?.pop().unwrap())
}

/// `P_μ(X_t ≠ 0) = 1 - e^{-⟨μ, v_t⟩}`.
pub fn survival_prob(model: &Model, mu: &DVector<f64>, t: f64) -> Result<f64> {
    check_nonneg("initial measure", mu)?;
    let v = extinction_v(model, t, 1e-8)?;
    Ok(-(-mu.dot(&v)).exp_m1())
}

pub fn default_grid_step(horizon: f64) -> f64 {
    1e-3 * horizon
}

/// Occupation solution of the test functional `kf`: backward evolution from
/// `u_{T+} = 0` with atom jumps, recorded on a uniform grid (atom times
/// inserted exactly).  `⟨μ, u_0⟩ = N_μ[1 - e^{-K^f}] = -log P_μ[e^{-K^f}]`.
pub fn occupation_u(model: &Model, kf: &TestFunctional, grid_step: f64) -> Result<CumulantSolution> {
    if !(grid_step.is_finite() && grid_step > 0.0) {
        return Err(Error::InvalidArgument("grid_step must be positive".into()));
    }
    // Re-validate atoms (TestFunctional may have been built directly).
    let kf = TestFunctional::new(kf.horizon, kf.atoms.clone())?;
    let t_end = kf.horizon;
    let n = model.n();

    // Grid: uniform plus exact atom times.
    let mut grid: Vec<f64> = Vec::new();
    let steps = (t_end / grid_step).ceil().max(1.0) as usize;
    for k in 0..=steps {
        grid.push((k as f64 / steps as f64) * t_end);
    }
    for (t, _) in &kf.atoms {
        grid.push(*t);
    }
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    grid.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * t_end);

    let atom_idx: Vec<(usize, DVector<f64>)> = kf
        .atoms
        .iter()
        .map(|(t, f)| {
            let idx = grid
                .iter()
                .position(|g| (g - t).abs() <= 1e-12 * t_end)
                .expect("atom time on grid");
            (idx, f.clone())
        })
        .collect();

    let l = spectral::generator(model);
    let rhs = |_tau: f64, v: &DVector<f64>| &l * v - psi0_vec(model, v);
    let opts = OdeOptions::default();

    let m = grid.len() - 1;
    let mut u: Vec<Option<DVector<f64>>> = vec![None; grid.len()];
    u[m] = Some(DVector::zeros(n));
    let mut w = DVector::zeros(n);
    let mut hi = m;
    while hi > 0 {
        if let Some((_, f)) = atom_idx.iter().find(|(i, _)| *i == hi) {
            w += f;
        }
        // Integrate down to the next atom node (or 0), recording interior nodes.
        let lo = atom_idx
            .iter()
            .map(|(i, _)| *i)
            .filter(|i| *i < hi)
            .max()
            .unwrap_or(0);
        let tau_records: Vec<f64> = (lo..hi).rev().map(|i| t_end - grid[i]).collect();
        let vals = ode::integrate_records(
            &rhs,
            t_end - grid[hi],
            t_end - grid[lo],
            w.clone(),
            &tau_records,
            &opts,
        )?;
        for (offset, v) in vals.into_iter().enumerate() {
            u[hi - 1 - offset] = Some(v);
        }
        w = u[lo].clone().unwrap();
        hi = lo;
    }

    Ok(CumulantSolution {
        grid,
        u: u.into_iter().map(|v| v.unwrap()).collect(),
        u_dot: None,
        u_ddot: None,
        jumps: atom_idx,
    })
}

/// Convenience: `P_μ[e^{-K^f(X)}] = e^{-⟨μ, u_0⟩}`.
pub fn laplace_functional(model: &Model, kf: &TestFunctional, mu: &DVector<f64>) -> Result<f64> {
    let sol = occupation_u(model, kf, default_grid_step(kf.horizon))?;
    Ok((-mu.dot(&sol.u[0])).exp())
}

/// Joint backward integration of `(u, u̇, ü)` up to the requested order.
/// Order 1 fills `u_dot`; order 2 additionally fills `u_ddot`.
fn variational_fill(
    model: &Model,
    g: &DVector<f64>,
    sol: &mut CumulantSolution,
    order: usize,
) -> Result<()> {
    let n = model.n();
    let t_end = *sol.grid.last().unwrap();
    let l = spectral::generator(model);
    let dim = n * (order + 1);
    let opts = OdeOptions::default();

    let rhs = |_tau: f64, state: &DVector<f64>| {
        let u = state.rows(0, n).into_owned();
        let ud = state.rows(n, n).into_owned();
        let psi0 = psi0_vec(model, &u);
        let psi0p = psi0_prime_vec(model, &u);
        let mut out = DVector::zeros(dim);
        let du = &l * &u - psi0;
        let dud = &l * &ud - psi0p.component_mul(&ud);
        out.rows_mut(0, n).copy_from(&du);
        out.rows_mut(n, n).copy_from(&dud);
        if order == 2 {
            let udd = state.rows(2 * n, n).into_owned();
            let psi0pp = psi0_second_vec(model, &u);
            let dudd = &l * &udd
                - psi0p.component_mul(&udd)
                - psi0pp.component_mul(&ud.component_mul(&ud));
            out.rows_mut(2 * n, n).copy_from(&dudd);
        }
        out
    };

    let m = sol.grid.len() - 1;
    let mut state = DVector::zeros(dim);
    state.rows_mut(n, n).copy_from(g);
    let mut filled: Vec<Option<DVector<f64>>> = vec![None; sol.grid.len()];
    filled[m] = Some(state.clone());
    let mut hi = m;
    while hi > 0 {
        if let Some(f) = sol.jump_at(hi) {
            for x in 0..n {
                state[x] += f[x];
            }
        }
        let lo = sol
            .jumps
            .iter()
            .map(|(i, _)| *i)
            .filter(|i| *i < hi)
            .max()
            .unwrap_or(0);
        let tau_records: Vec<f64> = (lo..hi).rev().map(|i| t_end - sol.grid[i]).collect();
        let vals = ode::integrate_records(
            &rhs,
            t_end - sol.grid[hi],
            t_end - sol.grid[lo],
            state.clone(),
            &tau_records,
            &opts,
        )?;
        for (offset, v) in vals.into_iter().enumerate() {
            filled[hi - 1 - offset] = Some(v);
        }
        state = filled[lo].clone().unwrap();
        hi = lo;
    }

    let filled: Vec<DVector<f64>> = filled.into_iter().map(|v| v.unwrap()).collect();
    // Consistency with the stored occupation solution.
    for (a, b) in filled.iter().zip(sol.u.iter()) {
        let scale = b.amax().max(1.0);
        if (a.rows(0, n) - b).amax() > 1e-6 * scale {
            return Err(Error::Model(
                "variational solve disagrees with the supplied occupation solution".into(),
            ));
        }
    }
    sol.u_dot = Some(filled.iter().map(|v| v.rows(n, n).into_owned()).collect());
    if order == 2 {
        sol.u_ddot = Some(filled.iter().map(|v| v.rows(2 * n, n).into_owned()).collect());
    }
    Ok(())
}

/// First variation: fills `u̇` (terminal data `g`, continuous at atoms) and
/// returns `⟨μ, u̇_0⟩ = N_μ[w_T(g) e^{-K^f}]`.
pub fn first_variation(
    model: &Model,
    g: &DVector<f64>,
    mu: &DVector<f64>,
    sol: &mut CumulantSolution,
) -> Result<f64> {
    check_nonneg("terminal data", g)?;
    check_nonneg("initial measure", mu)?;
    variational_fill(model, g, sol, 1)?;
    Ok(mu.dot(&sol.u_dot.as_ref().unwrap()[0]))
}

/// Second variation: requires the first; fills `ü` and returns
/// `N_μ[w_T(g)² e^{-K^f}] = -⟨μ, ü_0⟩ ≥ 0`.
pub fn second_variation(
    model: &Model,
    g: &DVector<f64>,
    mu: &DVector<f64>,
    sol: &mut CumulantSolution,
) -> Result<f64> {
    check_nonneg("terminal data", g)?;
    check_nonneg("initial measure", mu)?;
    if sol.u_dot.is_none() {
        return Err(Error::InvalidArgument(
            "second_variation requires first_variation to have been computed".into(),
        ));
    }
    variational_fill(model, g, sol, 2)?;
    Ok(-mu.dot(&sol.u_ddot.as_ref().unwrap()[0]))
}

const QUAD_N0: usize = 64;
const QUAD_NMAX: usize = 16384;
const QUAD_REL: f64 = 1e-10;

fn simpson(vals: &[f64], h: f64) -> f64 {
    let n = vals.len() - 1;
    debug_assert!(n >= 2 && n % 2 == 0);
    let mut acc = vals[0] + vals[n];
    for (k, v) in vals.iter().enumerate().take(n).skip(1) {
        acc += if k % 2 == 1 { 4.0 * v } else { 2.0 * v };
    }
    acc * h / 3.0
}

fn doubling_quadrature<F: Fn(usize) -> Result<f64>>(eval: F) -> Result<f64> {
    let mut n = QUAD_N0;
    let mut prev = eval(n)?;
    while n < QUAD_NMAX {
        n *= 2;
        let next = eval(n)?;
        if (next - prev).abs() <= QUAD_REL * next.abs().max(1.0) {
            return Ok(next);
        }
        prev = next;
    }
    Ok(prev)
}

/// Second moment `P_μ[X_t(g) X_t(f)]` by quadrature of the symmetric form
/// `⟨μ,S_t g⟩⟨μ,S_t f⟩ + ∫_0^t ⟨μ S_s, A·(S_{t-s}g)(S_{t-s}f)⟩ ds`.
pub fn moment_second(
    model: &Model,
    mu: &DVector<f64>,
    t: f64,
    g: &DVector<f64>,
    f: &DVector<f64>,
) -> Result<f64> {
    for v in [mu, g, f] {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("non-finite input".into()));
        }
    }
    if t == 0.0 {
        return Ok(mu.dot(g) * mu.dot(f) + 0.0);
    }
    let avec = DVector::from_fn(model.n(), |x, _| model.a_coeff(x));
    let eval = |n: usize| -> Result<f64> {
        let h = t / n as f64;
        let e = spectral::semigroup_matrix(model, h);
        let et = e.transpose();
        // S_{kh} g and S_{kh} f for k = 0..n.
        let mut gs = Vec::with_capacity(n + 1);
        let mut fs = Vec::with_capacity(n + 1);
        gs.push(g.clone());
        fs.push(f.clone());
        for k in 1..=n {
            gs.push(&e * &gs[k - 1]);
            fs.push(&e * &fs[k - 1]);
        }
        // mu S_{kh} as a column vector (iterate the transpose).
        let mut mus = mu.clone();
        let mut vals = Vec::with_capacity(n + 1);
        for k in 0..=n {
            let integrand: f64 = (0..model.n())
                .map(|x| mus[x] * avec[x] * gs[n - k][x] * fs[n - k][x])
                .sum();
            vals.push(integrand);
            if k < n {
                mus = &et * mus;
            }
        }
        let mean_term = mu.dot(&gs[n]) * mu.dot(&fs[n]);
        Ok(mean_term + simpson(&vals, h))
    };
    doubling_quadrature(eval)
}

/// The h-transform form of the same second moment,
/// `⟨μ,S_t g⟩⟨μ,S_t f⟩ + ⟨μ,φ⟩ Ṗ_{μφ}[φ^{-1}g(ξ_t) ∫_0^t (A S_{t-s}f)(ξ_s) ds]`,
/// evaluated through the spine kernel.  Kept as an independent route for the
/// covariance identity check.
pub fn moment_second_htransform(
    model: &Model,
    sd: &SpectralData,
    mu: &DVector<f64>,
    t: f64,
    g: &DVector<f64>,
    f: &DVector<f64>,
) -> Result<f64> {
    if t == 0.0 {
        return Ok(mu.dot(g) * mu.dot(f));
    }
    let n = model.n();
    let phi = sd.phi_vec();
    let mu_phi = mu.component_mul(&phi);
    let total = mu_phi.sum();
    if total <= 0.0 {
        return Ok(0.0);
    }
    let rho0 = &mu_phi / total;
    let qdot = spectral::spine_generator_with(model, sd);
    let avec = DVector::from_fn(n, |x, _| model.a_coeff(x));
    let gphi = DVector::from_fn(n, |x, _| g[x] / phi[x]);
    let eval = |nq: usize| -> Result<f64> {
        let h = t / nq as f64;
        let edot: DMatrix<f64> = (&qdot * h).exp();
        let edot_t = edot.transpose();
        let e = spectral::semigroup_matrix(model, h);
        // S_{kh} f for the inner factor, spine-propagated g/phi for the tail.
        let mut fs = Vec::with_capacity(nq + 1);
        fs.push(f.clone());
        for k in 1..=nq {
            fs.push(&e * &fs[k - 1]);
        }
        let mut tails = Vec::with_capacity(nq + 1);
        tails.push(gphi.clone());
        for k in 1..=nq {
            tails.push(&edot * &tails[k - 1]);
        }
        let mut rho = rho0.clone();
        let mut vals = Vec::with_capacity(nq + 1);
        for k in 0..=nq {
            let integrand: f64 = (0..n)
                .map(|x| rho[x] * avec[x] * fs[nq - k][x] * tails[nq - k][x])
                .sum();
            vals.push(integrand);
            if k < nq {
                rho = &edot_t * rho;
            }
        }
        let stg = spectral::mean_semigroup_apply(model, t, g)?;
        let stf = spectral::mean_semigroup_apply(model, t, f)?;
        Ok(mu.dot(&stg) * mu.dot(&stf) + total * simpson(&vals, h))
    };
    doubling_quadrature(eval)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;

    fn dv(slice: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(slice)
    }

    #[test]
    fn vt_m1_riccati() {
        let m1 = fixtures::m1();
        let v = cumulant_vt(&m1, &dv(&[2.0]), 1.0, 1e-8).unwrap();
        assert_relative_eq!(v[0], 2.0 / 3.0, max_relative = 1e-8);
    }

    #[test]
    fn vt_zero_fixed_point() {
        for model in [fixtures::m1(), fixtures::m2(), fixtures::m3()] {
            let v = cumulant_vt(&model, &DVector::zeros(model.n()), 1.0, 1e-8).unwrap();
            assert!(v.amax() <= 1e-12);
        }
    }

    #[test]
    fn vt_m2_constant_data_reduces_to_riccati() {
        let m2 = fixtures::m2();
        let theta = 1.7;
        let t = 0.8;
        let v = cumulant_vt(&m2, &dv(&[theta, theta]), t, 1e-8).unwrap();
        for x in 0..2 {
            assert_relative_eq!(v[x], theta / (1.0 + theta * t), max_relative = 1e-8);
        }
    }

    #[test]
    fn vt_flow_property_and_domination() {
        let model = fixtures::m3();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..4 {
            let f = DVector::from_fn(2, |_, _| 2.0 * rng.random::<f64>());
            for &(t, s) in &[(0.4, 1.3), (1.3, 0.4)] {
                let once = cumulant_vt(&model, &f, t + s, 1e-10).unwrap();
                let inner = cumulant_vt(&model, &f, s, 1e-10).unwrap();
                let twice = cumulant_vt(&model, &inner, t, 1e-10).unwrap();
                assert!((&once - &twice).amax() < 1e-8, "flow property violated");
                let mean = spectral::mean_semigroup_apply(&model, t + s, &f).unwrap();
                for x in 0..2 {
                    assert!(once[x] >= -1e-12 && once[x] <= mean[x] + 1e-10);
                }
            }
        }
    }

    #[test]
    fn extinction_m1_closed_form() {
        let m1 = fixtures::m1();
        for &t in &[0.5, 2.0] {
            let v = extinction_v(&m1, t, 1e-8).unwrap();
            assert_relative_eq!(v[0], 1.0 / t, max_relative = 1e-6);
        }
    }

    #[test]
    fn extinction_m1_stiff_layer() {
        let v = extinction_v(&fixtures::m1(), 0.001, 1e-8).unwrap();
        assert_relative_eq!(v[0], 1000.0, max_relative = 1e-6);
    }

    #[test]
    fn extinction_m2_spatially_constant() {
        let v = extinction_v(&fixtures::m2(), 4.0, 1e-8).unwrap();
        for x in 0..2 {
            assert_relative_eq!(v[x], 0.25, max_relative = 1e-6);
        }
    }

    #[test]
    fn extinction_flow_property() {
        let model = fixtures::m3();
        let tol = 1e-8;
        let vr = extinction_v(&model, 1.0, tol).unwrap();
        let vsr = extinction_v(&model, 2.5, tol).unwrap();
        let flowed = cumulant_vt(&model, &vr, 1.5, tol).unwrap();
        assert!(
            (&flowed - &vsr).amax() / vsr.amax() < 10.0 * tol,
            "V_s v_r != v_(s+r): {} vs {}",
            flowed[0],
            vsr[0]
        );
    }

    #[test]
    fn pure_jump_extinction_diverges() {
        let model = fixtures::single_site_jump();
        assert!(matches!(
            extinction_v(&model, 1.0, 1e-8),
            Err(Error::NonConvergence(_))
        ));
    }

    #[test]
    fn occupation_single_atom_matches_vt() {
        let m1 = fixtures::m1();
        let kf = TestFunctional::terminal(1.0, dv(&[1.0])).unwrap();
        let sol = occupation_u(&m1, &kf, 1e-3).unwrap();
        assert_relative_eq!(sol.u[0][0], 0.5, max_relative = 1e-8);
        // Last grid value is the right limit 0; the left limit adds the atom.
        assert_eq!(sol.u.last().unwrap()[0], 0.0);
        assert_relative_eq!(sol.u_left_limit(sol.grid.len() - 1)[0], 1.0);
    }

    #[test]
    fn occupation_empty_is_zero() {
        for model in [fixtures::m1(), fixtures::m3()] {
            let kf = TestFunctional::empty(2.0);
            let sol = occupation_u(&model, &kf, 1e-3 * 2.0).unwrap();
            assert!(sol.u.iter().all(|v| v.amax() == 0.0));
        }
    }

    #[test]
    fn occupation_two_stage_riccati() {
        // Atoms {(0.5, 1), (1, 1)} on M1: u_0 = 10/11 by piecewise Riccati.
        let m1 = fixtures::m1();
        let kf = TestFunctional::new(1.0, vec![(0.5, dv(&[1.0])), (1.0, dv(&[1.0]))]).unwrap();
        let sol = occupation_u(&m1, &kf, 1e-3).unwrap();
        assert_relative_eq!(sol.u[0][0], 10.0 / 11.0, max_relative = 1e-8);
        // Interior checks: u(0.5+) = 2/3, u(0.5-) = 5/3.
        let idx = sol.grid.iter().position(|&g| (g - 0.5).abs() < 1e-12).unwrap();
        assert_relative_eq!(sol.u[idx][0], 2.0 / 3.0, max_relative = 1e-8);
        assert_relative_eq!(sol.u_left_limit(idx)[0], 5.0 / 3.0, max_relative = 1e-8);
    }

    #[test]
    fn occupation_rejects_atom_outside_horizon() {
        assert!(TestFunctional::new(1.0, vec![(1.5, dv(&[1.0]))]).is_err());
        assert!(TestFunctional::new(1.0, vec![(0.0, dv(&[1.0]))]).is_err());
    }

    #[test]
    fn first_variation_mean_flow() {
        // Empty kf: N[w_t(g)] = S_t g.
        let m1 = fixtures::m1();
        let kf = TestFunctional::empty(3.0);
        let mut sol = occupation_u(&m1, &kf, 3e-3).unwrap();
        let val = first_variation(&m1, &dv(&[1.0]), &dv(&[1.0]), &mut sol).unwrap();
        assert_relative_eq!(val, 1.0, max_relative = 1e-9);
    }

    #[test]
    fn first_variation_riccati_derivative() {
        // d/dtheta of theta/(1+theta) at theta = 1 is 1/4.
        let m1 = fixtures::m1();
        let kf = TestFunctional::terminal(1.0, dv(&[1.0])).unwrap();
        let mut sol = occupation_u(&m1, &kf, 1e-3).unwrap();
        let val = first_variation(&m1, &dv(&[1.0]), &dv(&[1.0]), &mut sol).unwrap();
        assert_relative_eq!(val, 0.25, max_relative = 1e-8);
        // u_dot stays nonnegative.
        assert!(sol.u_dot.as_ref().unwrap().iter().all(|v| v.min() >= 0.0));
    }

    #[test]
    fn first_variation_critical_fixes_phi() {
        let m2 = fixtures::m2();
        let sd = spectral::principal_triple(&m2).unwrap();
        let kf = TestFunctional::empty(2.0);
        let mut sol = occupation_u(&m2, &kf, 2e-3).unwrap();
        let val = first_variation(&m2, &sd.phi_vec(), &dv(&[1.0, 0.0]), &mut sol).unwrap();
        assert_relative_eq!(val, sd.phi[0], max_relative = 1e-9);
        let ud0 = &sol.u_dot.as_ref().unwrap()[0];
        assert!((ud0 - sd.phi_vec()).amax() < 1e-9);
    }

    #[test]
    fn first_variation_matches_richardson_differences() {
        // <mu, u_dot_0> vs one-sided differences with Richardson (h, h/2).
        let model = fixtures::m3();
        let g = dv(&[0.14, 0.26]);
        let mu = dv(&[1.0, 0.5]);
        let base = TestFunctional::new(1.5, vec![(0.8, dv(&[0.4, 0.9]))]).unwrap();
        let mut sol = occupation_u(&model, &base, 1.5e-3).unwrap();
        let exact = first_variation(&model, &g, &mu, &mut sol).unwrap();
        let perturbed = |h: f64| -> f64 {
            let kf = TestFunctional::new(
                1.5,
                vec![(0.8, dv(&[0.4, 0.9])), (1.5, &g * h)],
            )
            .unwrap();
            let s = occupation_u(&model, &kf, 1.5e-3).unwrap();
            mu.dot(&s.u[0])
        };
        let u0 = mu.dot(&sol.u[0]);
        let d1 = (perturbed(1e-2) - u0) / 1e-2;
        let d2 = (perturbed(5e-3) - u0) / 5e-3;
        let richardson = 2.0 * d2 - d1;
        assert_relative_eq!(exact, richardson, max_relative = 1e-5);
    }

    #[test]
    fn second_variation_linear_growth() {
        // Empty kf, g = 1 on M1: N[w_t^2] = 2t.
        let m1 = fixtures::m1();
        let kf = TestFunctional::empty(3.0);
        let mut sol = occupation_u(&m1, &kf, 3e-3).unwrap();
        first_variation(&m1, &dv(&[1.0]), &dv(&[1.0]), &mut sol).unwrap();
        let val = second_variation(&m1, &dv(&[1.0]), &dv(&[1.0]), &mut sol).unwrap();
        assert_relative_eq!(val, 6.0, max_relative = 1e-8);
        assert!(sol.u_ddot.as_ref().unwrap().iter().all(|v| v.max() <= 1e-12));
    }

    #[test]
    fn second_variation_zero_terminal() {
        let m3 = fixtures::m3();
        let kf = TestFunctional::terminal(1.0, dv(&[0.5, 0.5])).unwrap();
        let mut sol = occupation_u(&m3, &kf, 1e-3).unwrap();
        first_variation(&m3, &DVector::zeros(2), &dv(&[1.0, 0.0]), &mut sol).unwrap();
        let val = second_variation(&m3, &DVector::zeros(2), &dv(&[1.0, 0.0]), &mut sol).unwrap();
        assert_relative_eq!(val, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn second_variation_requires_first() {
        let m1 = fixtures::m1();
        let kf = TestFunctional::empty(1.0);
        let mut sol = occupation_u(&m1, &kf, 1e-3).unwrap();
        assert!(second_variation(&m1, &dv(&[1.0]), &dv(&[1.0]), &mut sol).is_err());
    }

    #[test]
    fn second_variation_matches_central_differences() {
        // Against the Richardson-extrapolated second central difference of
        // theta -> <delta, u_0^theta> on the full nonlinear solve.
        let m1 = fixtures::m1();
        let g = dv(&[1.0]);
        let mu = dv(&[1.0]);
        let kf = TestFunctional::terminal(1.0, dv(&[1.0])).unwrap();
        let mut sol = occupation_u(&m1, &kf, 1e-3).unwrap();
        first_variation(&m1, &g, &mu, &mut sol).unwrap();
        let exact = second_variation(&m1, &g, &mu, &mut sol).unwrap();
        let u_theta = |theta: f64| -> f64 {
            // Terminal atom (1, f + theta g); theta may be slightly negative,
            // the solution extends smoothly.
            let kf2 = TestFunctional {
                horizon: 1.0,
                atoms: vec![(1.0, dv(&[1.0 + theta]))],
            };
            let s = occupation_u(&m1, &kf2, 1e-3).unwrap();
            mu.dot(&s.u[0])
        };
        let central = |h: f64| (u_theta(h) - 2.0 * u_theta(0.0) + u_theta(-h)) / (h * h);
        let f1 = central(1e-3);
        let f2 = central(5e-4);
        let richardson = (4.0 * f2 - f1) / 3.0;
        // exact = -dd/dtheta^2, FD approximates +dd of <mu,u>, so negate.
        assert_relative_eq!(exact, -richardson, max_relative = 1e-6, epsilon = 1e-6);
    }

    #[test]
    fn moment_second_feller() {
        let m1 = fixtures::m1();
        let one = dv(&[1.0]);
        let val = moment_second(&m1, &one, 5.0, &one, &one).unwrap();
        assert_relative_eq!(val, 11.0, max_relative = 1e-9);
        let zero = dv(&[0.0]);
        assert_relative_eq!(
            moment_second(&m1, &one, 5.0, &one, &zero).unwrap(),
            0.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn moment_second_m2_reduces_to_feller() {
        let m2 = fixtures::m2();
        let sd = spectral::principal_triple(&m2).unwrap();
        let mu = dv(&[1.0, 0.0]);
        let t = 2.0;
        let val = moment_second(&m2, &mu, t, &sd.phi_vec(), &sd.phi_vec()).unwrap();
        assert_relative_eq!(val, 1.0 + 2.0 * t, max_relative = 1e-9);
    }

    #[test]
    fn moment_second_total_identity() {
        // P[X_t(g)^2] = <mu,S_t g>^2 + N_mu[w_t(g)^2].
        let model = fixtures::m3();
        let g = dv(&[0.8, 1.4]);
        let mu = dv(&[1.0, 0.5]);
        let t = 1.3;
        let m2nd = moment_second(&model, &mu, t, &g, &g).unwrap();
        let kf = TestFunctional::empty(t);
        let mut sol = occupation_u(&model, &kf, t * 1e-3).unwrap();
        first_variation(&model, &g, &mu, &mut sol).unwrap();
        let nw2 = second_variation(&model, &g, &mu, &mut sol).unwrap();
        let stg = spectral::mean_semigroup_apply(&model, t, &g).unwrap();
        let mean = mu.dot(&stg);
        assert_relative_eq!(m2nd, mean * mean + nw2, max_relative = 1e-6);
    }

    #[test]
    fn covariance_forms_agree() {
        let model = fixtures::m3();
        let sd = spectral::principal_triple(&model).unwrap();
        let mu = dv(&[0.7, 0.9]);
        let g = dv(&[1.1, 0.3]);
        let f = dv(&[0.4, 1.6]);
        let t = 1.7;
        let sym = moment_second(&model, &mu, t, &g, &f).unwrap();
        let htr = moment_second_htransform(&model, &sd, &mu, t, &g, &f).unwrap();
        assert_relative_eq!(sym, htr, max_relative = 1e-8);
    }

    #[test]
    fn survival_closed_forms() {
        let m1 = fixtures::m1();
        assert_relative_eq!(
            survival_prob(&m1, &dv(&[1.0]), 1.0).unwrap(),
            1.0 - (-1.0f64).exp(),
            max_relative = 1e-6
        );
        assert_relative_eq!(
            survival_prob(&m1, &dv(&[2.0]), 1.0).unwrap(),
            1.0 - (-2.0f64).exp(),
            max_relative = 1e-6
        );
        let m2 = fixtures::m2();
        assert_relative_eq!(
            survival_prob(&m2, &dv(&[1.0, 1.0]), 10.0).unwrap(),
            1.0 - (-0.2f64).exp(),
            max_relative = 1e-6
        );
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(16))]
        /// Flow property and mean-domination under random nonnegative data.
        #[test]
        fn vt_flow_and_domination_random(
            f0 in 0.0f64..3.0,
            f1 in 0.0f64..3.0,
            t in 0.1f64..1.5,
            s in 0.1f64..1.5,
        ) {
            let model = fixtures::m3();
            let f = dv(&[f0, f1]);
            let once = cumulant_vt(&model, &f, t + s, 1e-10).unwrap();
            let inner = cumulant_vt(&model, &f, s, 1e-10).unwrap();
            let twice = cumulant_vt(&model, &inner, t, 1e-10).unwrap();
            proptest::prop_assert!((&once - &twice).amax() < 1e-8);
            let mean = spectral::mean_semigroup_apply(&model, t + s, &f).unwrap();
            for x in 0..2 {
                proptest::prop_assert!(once[x] >= -1e-12);
                proptest::prop_assert!(once[x] <= mean[x] + 1e-10);
            }
        }
    }
}
