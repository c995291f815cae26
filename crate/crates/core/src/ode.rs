//! Explicit adaptive Runge–Kutta integration (Dormand–Prince 5(4)).
//!
//! The cumulant equations are small non-stiff systems except for the initial
//! layer of the extinction function, which is handled by a single implicit
//! Euler step (see [`implicit_euler_step`]).  Output points are hit exactly
//! by clipping steps, which avoids dense-output interpolation error.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    pub atol: f64,
    pub rtol: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions {
            atol: 1e-10,
            rtol: 1e-8,
            max_steps: 50_000_000,
        }
    }
}

// Dormand–Prince 5(4) tableau.
const C: [f64; 6] = [1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [&[f64]; 6] = [
    &[1.0 / 5.0],
    &[3.0 / 40.0, 9.0 / 40.0],
    &[44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0],
    &[19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0],
    &[9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0],
    &[35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
// 5th-order weights are row A[5]; E = b5 - b4 gives the embedded error.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// One DP5(4) step from `(t, y)` with step `h`.  Returns `(y_new, err_norm)`
/// where `err_norm <= 1` means the embedded error passed the tolerance.
fn dp_step<F>(f: &F, t: f64, y: &DVector<f64>, k0: &DVector<f64>, h: f64, opts: &OdeOptions)
    -> (DVector<f64>, DVector<f64>, f64)
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64>,
{
    let mut k: Vec<DVector<f64>> = Vec::with_capacity(7);
    k.push(k0.clone());
    for stage in 0..6 {
        let mut yi = y.clone();
        for (j, &a) in A[stage].iter().enumerate() {
            if a != 0.0 {
                yi.axpy(h * a, &k[j], 1.0);
            }
        }
        k.push(f(t + C[stage] * h, &yi));
    }
    let y_new = {
        let mut acc = y.clone();
        for (j, &a) in A[5].iter().enumerate() {
            if a != 0.0 {
                acc.axpy(h * a, &k[j], 1.0);
            }
        }
        acc
    };
    // k[6] was evaluated at y_new (FSAL).
    let mut err = DVector::zeros(y.len());
    for (j, &e) in E.iter().enumerate() {
        if e != 0.0 {
            err.axpy(h * e, &k[j], 1.0);
        }
    }
    let mut norm = 0.0f64;
    for i in 0..y.len() {
        let sc = opts.atol + opts.rtol * y[i].abs().max(y_new[i].abs());
        norm = norm.max((err[i] / sc).abs());
    }
    (y_new, k.pop().unwrap(), norm)
}

fn initial_step<F>(f: &F, t0: f64, y0: &DVector<f64>, span: f64) -> f64
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64>,
{
    let d0 = y0.amax().max(1e-8);
    let d1 = f(t0, y0).amax().max(1e-8);
    (0.01 * d0 / d1).min(span).max(span * 1e-12)
}

/// Integrates `y' = f(t, y)` from `t0` to `t1`, returning the state at every
/// time in `records` (sorted, within `[t0, t1]`).  Steps clip to the record
/// times so recorded values carry no interpolation error.
pub fn integrate_records<F>(
    f: F,
    t0: f64,
    t1: f64,
    y0: DVector<f64>,
    records: &[f64],
    opts: &OdeOptions,
) -> Result<Vec<DVector<f64>>>
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64>,
{
    debug_assert!(records.windows(2).all(|w| w[0] <= w[1]));
    let span = t1 - t0;
    if span < 0.0 {
        return Err(Error::InvalidArgument("integration span is negative".into()));
    }
    let mut out = Vec::with_capacity(records.len());
    let mut rec_iter = records.iter().peekable();
    let mut t = t0;
    let mut y = y0;
    let mut k0 = f(t, &y);
    // Emit records at (or numerically before) the current time.
    let flush = |t: f64, y: &DVector<f64>, rec_iter: &mut std::iter::Peekable<std::slice::Iter<f64>>, out: &mut Vec<DVector<f64>>| {
        while let Some(&&r) = rec_iter.peek() {
            if r <= t + 1e-14 * t.abs().max(1.0) {
                out.push(y.clone());
                rec_iter.next();
            } else {
                break;
            }
        }
    };
    flush(t, &y, &mut rec_iter, &mut out);
    if span == 0.0 {
        while rec_iter.next().is_some() {
            out.push(y.clone());
        }
        return Ok(out);
    }
    let mut h = initial_step(&f, t, &y, span);
    let mut steps = 0usize;
    while t < t1 {
        steps += 1;
        if steps > opts.max_steps {
            return Err(Error::Numerical {
                context: "step budget exhausted".into(),
                t,
            });
        }
        let mut h_clip = h.min(t1 - t);
        if let Some(&&r) = rec_iter.peek() {
            h_clip = h_clip.min(r - t);
        }
        if h_clip < 1e-15 * t.abs().max(1.0) {
            // Degenerate clip (record at current time); flush and continue.
            flush(t + h_clip, &y, &mut rec_iter, &mut out);
            t += h_clip.max(1e-15 * t.abs().max(1.0));
            continue;
        }
        let (y_new, k_last, err) = dp_step(&f, t, &y, &k0, h_clip, opts);
        if err <= 1.0 && y_new.iter().all(|v| v.is_finite()) {
            t += h_clip;
            y = y_new;
            k0 = k_last;
            flush(t, &y, &mut rec_iter, &mut out);
            let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            h = (h_clip * factor).max(h * 0.2);
        } else {
            let factor = if err.is_finite() { (0.9 * err.powf(-0.2)).clamp(0.1, 0.9) } else { 0.1 };
            h = h_clip * factor;
            if h < 1e-14 * t.abs().max(1.0) {
                return Err(Error::Numerical {
                    context: "step size collapsed".into(),
                    t,
                });
            }
        }
    }
    while rec_iter.next().is_some() {
        out.push(y.clone());
    }
    Ok(out)
}

/// Terminal value of `y' = f(t, y)` at `t1`.
pub fn integrate<F>(f: F, t0: f64, t1: f64, y0: DVector<f64>, opts: &OdeOptions) -> Result<DVector<f64>>
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64>,
{
    Ok(integrate_records(f, t0, t1, y0, &[t1], opts)?.pop().unwrap())
}

/// One backward-Euler step of size `h`: solves `y = y0 + h f(y)` by Newton
/// with the supplied Jacobian of `f`.  Used to cross the stiff initial layer
/// of the extinction function.
pub fn implicit_euler_step<F, J>(f: F, jac: J, y0: &DVector<f64>, h: f64) -> Result<DVector<f64>>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
    J: Fn(&DVector<f64>) -> DMatrix<f64>,
{
    let n = y0.len();
    let mut y = y0.clone();
    for _ in 0..100 {
        let residual = &y - y0 - f(&y) * h;
        let scale = y.amax().max(1.0);
        if residual.amax() <= 1e-12 * scale {
            return Ok(y);
        }
        let newton_mat = DMatrix::identity(n, n) - jac(&y) * h;
        let delta = newton_mat
            .lu()
            .solve(&residual)
            .ok_or_else(|| Error::Numerical {
                context: "singular Newton matrix in implicit step".into(),
                t: 0.0,
            })?;
        y -= delta;
    }
    Err(Error::NonConvergence("implicit Euler Newton iteration".into()))
}
