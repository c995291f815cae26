//! Experiment configuration, seeded parallel execution, and reports.
//!
//! An [`Experiment`] names a model file, a kind (one of the CLI
//! subcommands), kind-specific parameters, a seed and a worker count.
//! Monte Carlo replicates draw their randomness from streams keyed by the
//! absolute replicate index, and batches merge sufficient statistics in
//! batch order with compensated accumulation — so the merged estimate does
//! not depend on the batch layout (asserted at 1e-12).

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cumulant::{self, TestFunctional};
use crate::error::{Error, Result};
use crate::limits;
use crate::model::{self, Model};
use crate::pathsim::{self, SimConfig};
use crate::prm;
use crate::spectral;
use crate::spine;
use crate::stats::RunningStats;

fn default_batch() -> usize {
    1
}

fn default_format() -> String {
    "json".into()
}

/// A reproducible run: model file, kind, parameters, seed, worker count.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Experiment {
    pub model: PathBuf,
    pub kind: String,
    #[serde(default)]
    pub calibrate: bool,
    #[serde(default)]
    pub params: serde_json::Value,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default = "default_format")]
    pub format: String,
}

/// One named result row: values along a grid against targets.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub targets: Vec<f64>,
    pub errors: Vec<f64>,
    pub pass: bool,
    pub detail: String,
}

impl CheckResult {
    fn scalar(name: &str, value: f64, detail: impl Into<String>) -> CheckResult {
        CheckResult {
            name: name.into(),
            grid: vec![],
            values: vec![value],
            targets: vec![],
            errors: vec![],
            pass: true,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub experiment: Experiment,
    pub model_hash: String,
    pub results: Vec<CheckResult>,
    pub pass: bool,
    pub inconclusive: bool,
    pub wall_ms: u128,
    pub version: String,
}

impl From<limits::LimitReport> for CheckResult {
    fn from(r: limits::LimitReport) -> CheckResult {
        CheckResult {
            name: r.name,
            grid: r.grid,
            values: r.values,
            targets: r.limits,
            errors: r.rel_errors,
            pass: r.pass,
            detail: format!("grid={}; tol={}; {}", r.grid_label, r.tolerance, r.notes.join("; ")),
        }
    }
}

fn vec_param(v: &serde_json::Value, key: &str) -> Result<DVector<f64>> {
    let arr = v
        .get(key)
        .and_then(|a| a.as_array())
        .ok_or_else(|| Error::Config(format!("missing array parameter '{key}'")))?;
    Ok(DVector::from_iterator(
        arr.len(),
        arr.iter().map(|x| x.as_f64().unwrap_or(f64::NAN)),
    ))
}

fn f64_param(v: &serde_json::Value, key: &str) -> Result<f64> {
    v.get(key)
        .and_then(|x| x.as_f64())
        .ok_or_else(|| Error::Config(format!("missing numeric parameter '{key}'")))
}

fn f64_param_or(v: &serde_json::Value, key: &str, default: f64) -> f64 {
    v.get(key).and_then(|x| x.as_f64()).unwrap_or(default)
}

fn usize_param_or(v: &serde_json::Value, key: &str, default: usize) -> usize {
    v.get(key)
        .and_then(|x| x.as_u64())
        .map(|x| x as usize)
        .unwrap_or(default)
}

fn grid_param_or(v: &serde_json::Value, key: &str, default: Vec<f64>) -> Vec<f64> {
    v.get(key)
        .and_then(|a| a.as_array())
        .map(|a| a.iter().filter_map(|x| x.as_f64()).collect())
        .unwrap_or(default)
}

/// Either an explicit vector, `"phi"`, or `"one"`.
fn function_param(
    v: &serde_json::Value,
    key: &str,
    sd: &spectral::SpectralData,
) -> Result<DVector<f64>> {
    match v.get(key) {
        Some(serde_json::Value::String(s)) if s == "phi" => Ok(sd.phi_vec()),
        Some(serde_json::Value::String(s)) if s == "one" => {
            Ok(DVector::from_element(sd.phi.len(), 1.0))
        }
        Some(serde_json::Value::Array(_)) => vec_param(v, key),
        _ => Err(Error::Config(format!(
            "parameter '{key}' must be a vector, \"phi\" or \"one\""
        ))),
    }
}

fn kf_param(v: &serde_json::Value, key: &str) -> Result<TestFunctional> {
    let spec = v
        .get(key)
        .ok_or_else(|| Error::Config(format!("missing test functional '{key}'")))?;
    let horizon = f64_param(spec, "horizon")?;
    let mut atoms = Vec::new();
    if let Some(arr) = spec.get("atoms").and_then(|a| a.as_array()) {
        for atom in arr {
            let t = f64_param(atom, "t")?;
            let f = vec_param(atom, "f")?;
            atoms.push((t, f));
        }
    }
    TestFunctional::new(horizon, atoms)
}

/// Runs MC replicates `0..n` of `body` split into `batch` contiguous
/// ranges, merging sufficient statistics in batch order.  Streams are keyed
/// by the absolute replicate index, so the estimate is independent of the
/// batch layout.
pub fn batched_mc<F>(n: usize, batch: usize, body: F) -> RunningStats
where
    F: Fn(u64) -> f64 + Sync,
{
    let batch = batch.max(1);
    let per = n.div_ceil(batch);
    let mut partials: Vec<(usize, RunningStats)> = (0..batch)
        .into_par_iter()
        .map(|b| {
            let lo = b * per;
            let hi = ((b + 1) * per).min(n);
            let mut st = RunningStats::default();
            for i in lo..hi {
                st.push(body(i as u64));
            }
            (b, st)
        })
        .collect();
    partials.sort_by_key(|(b, _)| *b);
    let mut merged = RunningStats::default();
    for (_, st) in &partials {
        merged.merge(st);
    }
    merged
}

fn load_model(path: &Path) -> Result<(Model, String)> {
    let bytes = std::fs::read(path)?;
    let hash = format!("{:x}", Sha256::digest(&bytes));
    let model: Model = serde_json::from_slice(&bytes)?;
    model.check_structure()?;
    Ok((model, hash))
}

/// Loads an experiment file and runs it; model paths resolve relative to
/// the experiment file's directory.
pub fn run_experiment_file(path: &Path) -> Result<RunReport> {
    let bytes = std::fs::read(path)?;
    let exp: Experiment = serde_json::from_slice(&bytes)?;
    let base = path.parent().unwrap_or(Path::new("."));
    run_experiment(&exp, base)
}

pub fn run_experiment(exp: &Experiment, base_dir: &Path) -> Result<RunReport> {
    let start = Instant::now();
    let model_path = if exp.model.is_absolute() {
        exp.model.clone()
    } else {
        base_dir.join(&exp.model)
    };
    let (mut model, model_hash) = load_model(&model_path)?;
    if exp.calibrate {
        model = spectral::calibrate_critical(&model)?;
    }
    let mut inconclusive = false;
    let results = match exp.kind.as_str() {
        "validate" => run_validate(&model)?,
        "spectral" => run_spectral(&model)?,
        "oracle" => run_oracle(&model, &exp.params)?,
        "simulate" => run_simulate(&model, exp, base_dir)?,
        "prm-check" => run_prm_check(&exp.params, exp.seed)?,
        "spine-check" => run_spine_check(&model, &exp.params, exp.seed, exp.batch)?,
        "two-spine-check" => run_two_spine_check(&model, &exp.params, exp.seed, exp.batch)?,
        "limits" => match run_limits(&model, &exp.params, exp.seed) {
            Ok(r) => r,
            Err(Error::Inconclusive(msg)) => {
                inconclusive = true;
                vec![CheckResult {
                    name: "inconclusive".into(),
                    grid: vec![],
                    values: vec![],
                    targets: vec![],
                    errors: vec![],
                    pass: false,
                    detail: msg,
                }]
            }
            Err(e) => return Err(e),
        },
        other => return Err(Error::Config(format!("unknown experiment kind '{other}'"))),
    };
    let pass = !inconclusive && results.iter().all(|r| r.pass);
    Ok(RunReport {
        experiment: exp.clone(),
        model_hash,
        results,
        pass,
        inconclusive,
        wall_ms: start.elapsed().as_millis(),
        version: env!("CARGO_PKG_VERSION").into(),
    })
}

fn run_validate(model: &Model) -> Result<Vec<CheckResult>> {
    let report = model::validate_model(model)?;
    Ok(report
        .checks
        .into_iter()
        .map(|c| CheckResult {
            name: c.name,
            grid: vec![],
            values: vec![],
            targets: vec![],
            errors: vec![],
            pass: c.pass,
            detail: c.detail,
        })
        .collect())
}

fn run_spectral(model: &Model) -> Result<Vec<CheckResult>> {
    let sd = spectral::principal_triple(model)?;
    let site_grid: Vec<f64> = (0..model.n()).map(|x| x as f64).collect();
    Ok(vec![
        CheckResult::scalar("lambda", sd.lambda, "principal eigenvalue"),
        CheckResult {
            name: "phi".into(),
            grid: site_grid.clone(),
            values: sd.phi.clone(),
            targets: vec![],
            errors: vec![],
            pass: true,
            detail: "<phi,phi>_m = 1".into(),
        },
        CheckResult {
            name: "phi_star".into(),
            grid: site_grid,
            values: sd.phi_star.clone(),
            targets: vec![],
            errors: vec![],
            pass: true,
            detail: "<phi,phi*>_m = 1".into(),
        },
        CheckResult::scalar("c0", sd.c0, "1/2 <A phi, phi phi*>_m"),
        CheckResult {
            name: "iu_gap".into(),
            grid: vec![],
            values: vec![sd.gap_c, sd.gap_gamma],
            targets: vec![],
            errors: vec![],
            pass: true,
            detail: "(gap_c, gap_gamma)".into(),
        },
    ])
}

fn run_oracle(model: &Model, params: &serde_json::Value) -> Result<Vec<CheckResult>> {
    let op = params
        .get("op")
        .and_then(|s| s.as_str())
        .ok_or_else(|| Error::Config("oracle requires an 'op' parameter".into()))?;
    let out = match op {
        "vt" => {
            let f = vec_param(params, "f")?;
            let t = f64_param(params, "t")?;
            let tol = f64_param_or(params, "tol", 1e-8);
            let v = cumulant::cumulant_vt(model, &f, t, tol)?;
            CheckResult {
                name: "vt".into(),
                grid: (0..model.n()).map(|x| x as f64).collect(),
                values: v.iter().copied().collect(),
                targets: vec![],
                errors: vec![],
                pass: true,
                detail: format!("V_t f at t={t}"),
            }
        }
        "extinction" => {
            let t = f64_param(params, "t")?;
            let tol = f64_param_or(params, "tol", 1e-8);
            let v = cumulant::extinction_v(model, t, tol)?;
            CheckResult {
                name: "extinction_v".into(),
                grid: (0..model.n()).map(|x| x as f64).collect(),
                values: v.iter().copied().collect(),
                targets: vec![],
                errors: vec![],
                pass: true,
                detail: format!("v_t at t={t}"),
            }
        }
        "occupation" => {
            let kf = kf_param(params, "kf")?;
            let mu = vec_param(params, "mu")?;
            let sol =
                cumulant::occupation_u(model, &kf, cumulant::default_grid_step(kf.horizon))?;
            CheckResult::scalar(
                "occupation_u0",
                mu.dot(&sol.u[0]),
                "<mu, u_0> = N_mu[1 - e^{-K^f}]",
            )
        }
        "first_variation" | "second_variation" => {
            let kf = kf_param(params, "kf")?;
            let mu = vec_param(params, "mu")?;
            let g = vec_param(params, "g")?;
            let mut sol =
                cumulant::occupation_u(model, &kf, cumulant::default_grid_step(kf.horizon))?;
            let first = cumulant::first_variation(model, &g, &mu, &mut sol)?;
            if op == "first_variation" {
                CheckResult::scalar("first_variation", first, "N_mu[w_T(g) e^{-K^f}]")
            } else {
                let second = cumulant::second_variation(model, &g, &mu, &mut sol)?;
                CheckResult::scalar("second_variation", second, "N_mu[w_T(g)^2 e^{-K^f}]")
            }
        }
        "moment_second" => {
            let mu = vec_param(params, "mu")?;
            let g = vec_param(params, "g")?;
            let f = vec_param(params, "f")?;
            let t = f64_param(params, "t")?;
            CheckResult::scalar(
                "moment_second",
                cumulant::moment_second(model, &mu, t, &g, &f)?,
                "P_mu[X_t(g) X_t(f)]",
            )
        }
        "survival" => {
            let mu = vec_param(params, "mu")?;
            let t = f64_param(params, "t")?;
            CheckResult::scalar(
                "survival",
                cumulant::survival_prob(model, &mu, t)?,
                "P_mu(X_t != 0)",
            )
        }
        other => return Err(Error::Config(format!("unknown oracle op '{other}'"))),
    };
    Ok(vec![out])
}

fn run_simulate(model: &Model, exp: &Experiment, base_dir: &Path) -> Result<Vec<CheckResult>> {
    let params = &exp.params;
    let mu = vec_param(params, "mu")?;
    let t = f64_param(params, "t")?;
    let n_paths = usize_param_or(params, "n_paths", 1000);
    let mut cfg = SimConfig::for_model(model, exp.seed);
    cfg.dt = f64_param_or(params, "dt", cfg.dt);
    let n = model.n();
    // Per-path terminal summaries, parallel over contiguous batches.
    let batch = exp.batch.max(1);
    let per = n_paths.div_ceil(batch);
    let rows: Vec<(u64, Option<f64>, Vec<f64>)> = (0..batch)
        .into_par_iter()
        .flat_map_iter(|b| {
            let lo = b * per;
            let hi = ((b + 1) * per).min(n_paths);
            let mu = mu.clone();
            (lo..hi).map(move |i| {
                let mut rng = crate::rng::stream(cfg.seed, 0, i as u64);
                let p = pathsim::simulate_superprocess(model, &mu, t, &[t], &cfg, &mut rng)
                    .expect("simulation");
                (
                    i as u64,
                    p.extinct_at,
                    p.terminal().iter().copied().collect::<Vec<f64>>(),
                )
            })
        })
        .collect();
    if let Some(out) = &exp.out {
        let path = if out.is_absolute() { out.clone() } else { base_dir.join(out) };
        let mut csv = String::from("path_id,extinct_at");
        for x in 0..n {
            csv.push_str(&format!(",mass_{}", x + 1));
        }
        csv.push('\n');
        for (id, extinct, masses) in &rows {
            csv.push_str(&format!(
                "{id},{}",
                extinct.map_or(String::new(), |e| format!("{e}"))
            ));
            for m in masses {
                csv.push_str(&format!(",{m}"));
            }
            csv.push('\n');
        }
        std::fs::write(path, csv)?;
    }
    let mut results = Vec::new();
    for x in 0..n {
        let mut st = RunningStats::default();
        for (_, _, masses) in &rows {
            st.push(masses[x]);
        }
        results.push(CheckResult::scalar(
            &format!("terminal_mass_{}", x + 1),
            st.mean(),
            format!("se={:.6e} n={}", st.se(), st.n),
        ));
    }
    let extinct = rows.iter().filter(|(_, e, _)| e.is_some()).count();
    results.push(CheckResult::scalar(
        "extinct_fraction",
        extinct as f64 / n_paths as f64,
        format!("{extinct}/{n_paths} paths extinct by t={t}"),
    ));
    Ok(results)
}

fn run_prm_check(params: &serde_json::Value, seed: u64) -> Result<Vec<CheckResult>> {
    let weights = grid_param_or(params, "weights", vec![2.0, 3.0]);
    let bias = grid_param_or(params, "bias", vec![1.0, 2.0]);
    let f = grid_param_or(params, "f", vec![1.0, 0.5]);
    let n_samples = usize_param_or(params, "n_samples", 100_000);
    let n = prm::FiniteMeasure::new(weights.clone())?;

    // Brute-force identities with counts capped at 30.
    let cap = 30u64;
    let pmf = |mean: f64, k: u64| -> f64 {
        let mut logp = -mean + k as f64 * mean.ln();
        for j in 1..=k {
            logp -= (j as f64).ln();
        }
        logp.exp()
    };
    let mut size_biased_lhs = 0.0;
    let mut second_lhs = 0.0;
    let dims = weights.len();
    let mut counts = vec![0u64; dims];
    'outer: loop {
        let mut p = 1.0;
        for (i, &c) in counts.iter().enumerate() {
            p *= pmf(weights[i], c);
        }
        let nf: f64 = counts.iter().zip(&bias).map(|(&k, b)| k as f64 * b).sum();
        let nint: f64 = counts.iter().zip(&f).map(|(&k, v)| k as f64 * v).sum();
        size_biased_lhs += p * nf * (-nint).exp();
        second_lhs += p * nf * nint;
        let mut i = 0;
        loop {
            if i == dims {
                break 'outer;
            }
            counts[i] += 1;
            if counts[i] > cap {
                counts[i] = 0;
                i += 1;
            } else {
                break;
            }
        }
    }
    let weighted: f64 = weights
        .iter()
        .zip(bias.iter().zip(f.iter()))
        .map(|(&w, (&b, &v))| w * b * (-v).exp())
        .sum();
    let size_biased_rhs = prm::laplace_exact(&n, &f)? * weighted;
    let bf: Vec<f64> = bias.iter().zip(f.iter()).map(|(a, b)| a * b).collect();
    let second_rhs = n.integrate(&bias) * n.integrate(&f) + n.integrate(&bf);
    let rel1 = (size_biased_lhs - size_biased_rhs).abs() / size_biased_rhs.abs();
    let rel2 = (second_lhs - second_rhs).abs() / second_rhs.abs();

    // TV distance between the sampler's law and N + delta_theta.
    let nf_total = n.integrate(&bias);
    let mut hist = std::collections::HashMap::new();
    let mut rng = crate::rng::single(seed);
    for _ in 0..n_samples {
        let (s, _) = prm::sample_size_biased(&n, &bias, &mut rng)?;
        let key: Vec<u64> = s.counts.iter().map(|&c| c.min(cap)).collect();
        *hist.entry(key).or_insert(0u64) += 1;
    }
    let mut tv = 0.0;
    let mut counts = vec![0u64; dims];
    'tv: loop {
        let mut p = 0.0;
        for theta in 0..dims {
            if counts[theta] >= 1 {
                let mut q = weights[theta] * bias[theta] / nf_total;
                for (i, &c) in counts.iter().enumerate() {
                    let eff = if i == theta { c - 1 } else { c };
                    q *= pmf(weights[i], eff);
                }
                p += q;
            }
        }
        let emp = hist.get(counts.as_slice()).copied().unwrap_or(0) as f64 / n_samples as f64;
        tv += (p - emp).abs();
        let mut i = 0;
        loop {
            if i == dims {
                break 'tv;
            }
            counts[i] += 1;
            if counts[i] > cap {
                counts[i] = 0;
                i += 1;
            } else {
                break;
            }
        }
    }
    tv /= 2.0;

    Ok(vec![
        CheckResult {
            name: "size_biased_identity".into(),
            grid: vec![],
            values: vec![size_biased_lhs],
            targets: vec![size_biased_rhs],
            errors: vec![rel1],
            pass: rel1 <= 1e-10,
            detail: "brute-force P[N(F)e^{-N(f)}] vs P[e^{-N(f)}] N[F e^{-f}]".into(),
        },
        CheckResult {
            name: "second_moment_identity".into(),
            grid: vec![],
            values: vec![second_lhs],
            targets: vec![second_rhs],
            errors: vec![rel2],
            pass: rel2 <= 1e-10,
            detail: "brute-force E[N(g)N(f)] vs N(g)N(f) + N(gf)".into(),
        },
        CheckResult {
            name: "size_biased_tv".into(),
            grid: vec![],
            values: vec![tv],
            targets: vec![0.0],
            errors: vec![tv],
            pass: tv <= 0.01,
            detail: format!("TV(sampled, N + delta_theta) at {n_samples} samples"),
        },
    ])
}

fn run_spine_check(
    model: &Model,
    params: &serde_json::Value,
    seed: u64,
    batch: usize,
) -> Result<Vec<CheckResult>> {
    let sd = spectral::principal_triple(model)?;
    let mu = vec_param(params, "mu")?;
    let g = function_param(params, "g", &sd)?;
    let kf = kf_param(params, "kf")?;
    let t = kf.horizon;
    let n_rep = usize_param_or(params, "n", 10_000);
    let mut sol = cumulant::occupation_u(model, &kf, cumulant::default_grid_step(t))?;
    let numerator = cumulant::first_variation(model, &g, &mu, &mut sol)?;
    let stg = spectral::mean_semigroup_apply(model, t, &g)?;
    let oracle = numerator / mu.dot(&stg);
    let sampler = spine::GtSpineSampler::new(model, &mu, &g, t)?;
    let st = batched_mc(n_rep, batch, |i| {
        let mut rng = crate::rng::stream(seed, 0, i);
        let path = sampler.sample(&mut rng);
        spine::spine_conditional_laplace(model, &path, &kf, &sol).expect("conditional laplace")
    });
    let se = st.se();
    let z = if se > 0.0 { (st.mean() - oracle) / se } else { 0.0 };
    let pass = (st.mean() - oracle).abs() <= 3.0 * se + 1e-6;
    Ok(vec![CheckResult {
        name: "spine_decomposition".into(),
        grid: vec![],
        values: vec![st.mean()],
        targets: vec![oracle],
        errors: vec![(st.mean() - oracle).abs()],
        pass,
        detail: format!("n={n_rep} se={se:.3e} z={z:.2}"),
    }])
}

fn run_two_spine_check(
    model: &Model,
    params: &serde_json::Value,
    seed: u64,
    batch: usize,
) -> Result<Vec<CheckResult>> {
    let sd = spectral::principal_triple(model)?;
    let mu = vec_param(params, "mu")?;
    let kf = kf_param(params, "kf")?;
    let t = kf.horizon;
    let n_rep = usize_param_or(params, "n", 10_000);
    let phi = sd.phi_vec();
    let mut sol = cumulant::occupation_u(model, &kf, cumulant::default_grid_step(t))?;
    cumulant::first_variation(model, &phi, &mu, &mut sol)?;
    let numerator = cumulant::second_variation(model, &phi, &mu, &mut sol)?;
    let kf_empty = TestFunctional::empty(t);
    let mut sol_empty = cumulant::occupation_u(model, &kf_empty, cumulant::default_grid_step(t))?;
    cumulant::first_variation(model, &phi, &mu, &mut sol_empty)?;
    let normalizer = cumulant::second_variation(model, &phi, &mu, &mut sol_empty)?;
    let oracle = numerator / normalizer;
    let sampler = spine::TwoSpineSampler::new(model, &sd, &mu, t)?;
    let st = batched_mc(n_rep, batch, |i| {
        let mut rng = crate::rng::stream(seed, 0, i);
        let skel = sampler.sample(&mut rng).expect("skeleton");
        spine::two_spine_conditional_laplace(model, &skel, &kf, &sol).expect("conditional laplace")
    });
    let se = st.se();
    let z = if se > 0.0 { (st.mean() - oracle) / se } else { 0.0 };
    let pass = (st.mean() - oracle).abs() <= 3.0 * se + 1e-6;
    Ok(vec![CheckResult {
        name: "two_spine_decomposition".into(),
        grid: vec![],
        values: vec![st.mean()],
        targets: vec![oracle],
        errors: vec![(st.mean() - oracle).abs()],
        pass,
        detail: format!("n={n_rep} se={se:.3e} z={z:.2}"),
    }])
}

fn run_limits(model: &Model, params: &serde_json::Value, seed: u64) -> Result<Vec<CheckResult>> {
    let sd = spectral::principal_triple(model)?;
    let check = params
        .get("check")
        .and_then(|s| s.as_str())
        .ok_or_else(|| Error::Config("limits requires a 'check' parameter".into()))?;
    let default_mu = DVector::from_element(model.n(), 1.0);
    let mu = vec_param(params, "mu").unwrap_or(default_mu);
    let tol = f64_param_or(params, "tolerance", 0.02);
    let t_grid = grid_param_or(params, "t_grid", limits::default_t_grid());
    let theta_grid = grid_param_or(params, "theta_grid", vec![0.25, 0.5, 1.0, 2.0, 4.0]);
    let report = match check {
        "kolmogorov" => limits::kolmogorov_check(model, &sd, &mu, &t_grid, tol)?,
        "uniform-ratio" => limits::uniform_ratio_check(model, &sd, &t_grid, tol)?,
        "bt-slope" => limits::bt_slope_check(model, &sd, &t_grid, tol)?,
        "yaglom-laplace" => {
            let f = function_param(params, "f", &sd)?;
            let t = f64_param_or(params, "t", 2000.0);
            limits::yaglom_laplace_check(model, &sd, &mu, &f, t, &theta_grid, tol)?
        }
        "spine-w" => {
            let t = f64_param_or(params, "t", 2000.0);
            limits::spine_w_check(model, &sd, &mu, t, &theta_grid, tol)?
        }
        "centered-vanish" => {
            let f = function_param(params, "f", &sd)?;
            limits::centered_vanish_check(model, &sd, &mu, &f, &t_grid, tol)?
        }
        "ergodic-aphi-u" => {
            let aphi: Vec<f64> =
                (0..model.n()).map(|x| model.a_coeff(x) * sd.phi[x]).collect();
            limits::ergodic_check(model, &sd, &move |x, u| aphi[x] * u, &t_grid, tol)?
        }
        "yaglom-ks" => {
            let f = function_param(params, "f", &sd)?;
            let t = f64_param_or(params, "t", 50.0);
            let n_sims = usize_param_or(params, "n_sims", 1_000_000);
            let mut cfg = SimConfig::for_model(model, seed);
            cfg.dt = f64_param_or(params, "dt", cfg.dt);
            let ks = limits::yaglom_mc_ks(model, &sd, &mu, &f, t, n_sims, &cfg)?;
            return Ok(vec![CheckResult {
                name: "yaglom_ks".into(),
                grid: vec![],
                values: vec![ks.ks_statistic],
                targets: vec![ks.threshold],
                errors: vec![ks.ks_statistic],
                pass: ks.pass,
                detail: format!(
                    "n_survivors={} bias_allowance={:.4} m0={:.6}",
                    ks.n_survivors, ks.bias_allowance, ks.m0
                ),
            }]);
        }
        other => return Err(Error::Config(format!("unknown limits check '{other}'"))),
    };
    Ok(vec![report.into()])
}

/// Serializes a report: `json` is the full document, `csv` flattens to one
/// row per grid point with columns `check,grid,value,target,error,pass`.
pub fn emit_report(report: &RunReport, format: &str) -> Result<String> {
    match format {
        "json" => Ok(serde_json::to_string_pretty(report)?),
        "csv" => {
            let mut out = String::from("check,grid,value,target,error,pass\n");
            for r in &report.results {
                let rows = r.values.len().max(1);
                for i in 0..rows {
                    let grid = r.grid.get(i).map_or(String::new(), |v| format!("{v}"));
                    let value = r.values.get(i).map_or(String::new(), |v| format!("{v}"));
                    let target = r.targets.get(i).map_or(String::new(), |v| format!("{v}"));
                    let error = r.errors.get(i).map_or(String::new(), |v| format!("{v}"));
                    out.push_str(&format!(
                        "{},{grid},{value},{target},{error},{}\n",
                        r.name, r.pass
                    ));
                }
            }
            Ok(out)
        }
        other => Err(Error::Config(format!("unknown report format '{other}'"))),
    }
}
