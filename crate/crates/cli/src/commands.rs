use std::path::PathBuf;

use anyhow::{bail, Result};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sublab::controllability::{bracket_span, steer, steering_cost_certificate, SteerOptions, Word};
use sublab::distance::{ballbox_fit, classify_extremal, distance_best, distance_direct, distance_shooting, BestOptions, Method};
use sublab::dynamics::{ControlPath, Dynamics};
use sublab::experiments::{elusive_spectrum, engel_profile, orbit_profile, DistanceCache, Placement, Quality, SequenceSpec, Verdict};
use sublab::hamiltonian::{geodesic_shoot, normal_hamiltonian, shoot_bvp, BvpOptions};
use sublab::io::{control_path_csv, phase_trajectory_csv, records_csv, trajectory_csv};
use sublab::verify::{self, Suite, VerifyOptions};
use sublab::Model;

use crate::report::Run;

fn point(name: &str, v: Option<Vec<f64>>, model: &Model) -> Result<Vec<f64>> {
    let v = v.unwrap_or_else(|| vec![0.0; model.dim()]);
    if v.len() != model.dim() {
        bail!("params.{name} has {} entries, the model has dimension {}", v.len(), model.dim());
    }
    Ok(v)
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ShootParams {
    q0: Option<Vec<f64>>,
    p0: Option<Vec<f64>>,
    duration: Option<f64>,
    steps: Option<usize>,
}

pub fn shoot(run: &mut Run, model: &Model) -> Result<()> {
    let p: ShootParams = run.config.params()?;
    let q0 = point("q0", p.q0, model)?;
    let p0 = point("p0", p.p0, model)?;
    let duration = p.duration.unwrap_or(1.0);
    let steps = p.steps.unwrap_or(1000);
    let t = match geodesic_shoot(model, &q0, &p0, duration, steps) {
        Ok(t) => t,
        Err(e) => {
            run.failure("shoot", &e);
            return Ok(());
        }
    };
    let h0 = normal_hamiltonian(model, &q0, &p0)?;
    let drift = t.hamiltonian_drift(model)?;
    let rel = if h0 > 0.0 { drift / h0 } else { drift };
    let tol = run.config.tolerances.clone();
    run.check("hamiltonian-drift", rel <= tol.drift, format!("{rel:.3e} <= {:.1e}", tol.drift));
    let residual = if duration == 1.0 {
        let r = Dynamics::new(model).extremal_residual(&q0, &t.to_control_path(), &t.terminal_covector(), 1.0)?;
        run.check("extremal-residual", r <= tol.residual, format!("{r:.3e} <= {:.1e}", tol.residual));
        Some(r)
    } else {
        None
    };
    run.results = json!({
        "endpoint": t.endpoint(),
        "hamiltonian": h0,
        "length": (2.0 * h0).sqrt() * duration,
        "relative_drift": rel,
        "extremal_residual": residual,
    });
    run.write_csv("trajectory", &phase_trajectory_csv(&t)?)
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct BvpParams {
    q0: Option<Vec<f64>>,
    q1: Option<Vec<f64>>,
    p0: Option<Vec<f64>>,
    options: Option<BvpOptions>,
}

pub fn bvp(run: &mut Run, model: &Model) -> Result<()> {
    let p: BvpParams = run.config.params()?;
    let q0 = point("q0", p.q0, model)?;
    let q1 = point("q1", p.q1, model)?;
    let guess = match p.p0 {
        Some(v) => point("p0", Some(v), model)?,
        None => q1.iter().zip(&q0).map(|(a, b)| a - b).collect(),
    };
    let opts = BvpOptions {
        tol: run.config.tolerances.bvp,
        ..p.options.unwrap_or_default()
    };
    match shoot_bvp(model, &q0, &q1, &guess, &opts) {
        Ok(sol) => {
            run.check("converged", sol.residual <= opts.tol, format!("residual {:.3e}", sol.residual));
            let tol = run.config.tolerances.classify;
            let class = classify_extremal(model, &q0, &sol.trajectory.to_control_path(), tol)?;
            run.results = json!({
                "p0": sol.p0,
                "residual": sol.residual,
                "iterations": sol.iterations,
                "residual_history": sol.residual_history,
                "length": (2.0 * normal_hamiltonian(model, &q0, &sol.p0)?).sqrt(),
                "classification": class,
            });
            run.write_csv("trajectory", &phase_trajectory_csv(&sol.trajectory)?)?;
        }
        Err(e) => run.failure("converged", &e),
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct DistanceParams {
    q0: Option<Vec<f64>>,
    q1: Option<Vec<f64>>,
    method: Method,
    options: BestOptions,
}

impl Default for DistanceParams {
    fn default() -> Self {
        Self {
            q0: None,
            q1: None,
            method: Method::BestOf,
            options: BestOptions::default(),
        }
    }
}

fn best_options(mut o: BestOptions, seed: u64, tol_ep: f64) -> BestOptions {
    o.direct.seed = seed;
    o.direct.tol_ep = tol_ep;
    o
}

pub fn distance(run: &mut Run, model: &Model) -> Result<()> {
    let p: DistanceParams = run.config.params()?;
    let q0 = point("q0", p.q0, model)?;
    let q1 = point("q1", p.q1, model)?;
    let opts = best_options(p.options, run.config.seed, run.config.tolerances.endpoint);
    let r = match p.method {
        Method::Direct => distance_direct(model, &q0, &q1, &opts.direct),
        Method::Shooting => distance_shooting(model, &q0, &q1, &opts),
        Method::BestOf => distance_best(model, &q0, &q1, &opts),
    };
    match r {
        Ok(r) => {
            run.check(
                "endpoint",
                r.endpoint_error <= opts.direct.tol_ep,
                format!("{:.3e} <= {:.1e}", r.endpoint_error, opts.direct.tol_ep),
            );
            run.results = json!({
                "distance": r.distance,
                "endpoint_error": r.endpoint_error,
                "method": r.method,
                "diagnostics": r.diagnostics,
            });
            run.write_csv("control", &control_path_csv(&r.control)?)?;
            let t = Dynamics::new(model).trajectory(&q0, &r.control)?;
            run.write_csv("trajectory", &trajectory_csv(&t)?)?;
        }
        Err(e) => run.failure("distance", &e),
    }
    Ok(())
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct BracketParams {
    q: Option<Vec<f64>>,
    depth: Option<usize>,
    expect: Option<Vec<usize>>,
}

#[derive(Serialize)]
struct BracketRow {
    layer: usize,
    word: String,
}

pub fn brackets(run: &mut Run, model: &Model) -> Result<()> {
    let p: BracketParams = run.config.params()?;
    let q = point("q", p.q, model)?;
    let span = match bracket_span(model, &q, p.depth.unwrap_or(8)) {
        Ok(s) => s,
        Err(e) => {
            run.failure("brackets", &e);
            return Ok(());
        }
    };
    let g = &span.growth;
    run.check("bracket-generating", g.satisfied, format!("growth {:?} at depth {}", g.ranks, g.depth));
    if let Some(want) = p.expect {
        run.check("growth-vector", g.ranks == want, format!("{:?} expected {want:?}", g.ranks));
    }
    let rows: Vec<BracketRow> = span
        .words
        .iter()
        .enumerate()
        .flat_map(|(i, ws)| {
            ws.iter().map(move |w| BracketRow {
                layer: i + 1,
                word: w.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(" "),
            })
        })
        .collect();
    run.results = json!({ "growth": g, "words": span.words });
    run.write_csv("words", &records_csv(&rows)?)
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SteerParams {
    q0: Option<Vec<f64>>,
    q1: Option<Vec<f64>>,
    words: Option<Vec<Word>>,
    options: Option<SteerOptions>,
}

pub fn steer_cmd(run: &mut Run, model: &Model) -> Result<()> {
    let p: SteerParams = run.config.params()?;
    let q0 = point("q0", p.q0, model)?;
    let q1 = point("q1", p.q1, model)?;
    let words = match p.words {
        Some(w) => w,
        None => {
            let span = bracket_span(model, &q0, 8)?;
            let mut w: Vec<Word> = vec![Vec::new()];
            // layer-k words drive brackets of depth k + 1 through Phi
            for layer in span.words.iter().take(span.words.len().saturating_sub(1)) {
                w.extend(layer.iter().cloned());
            }
            w.sort();
            w.dedup();
            w
        }
    };
    let opts = p.options.unwrap_or_default();
    match steer(model, &q0, &q1, &words, &opts) {
        Ok(plan) => {
            let tol = run.config.tolerances.steer;
            run.check("endpoint", plan.endpoint_error <= tol, format!("{:.3e} <= {tol:.1e}", plan.endpoint_error));
            let cert = steering_cost_certificate(model, &plan)?;
            run.write_csv("control", &control_path_csv(&plan.control)?)?;
            let t = Dynamics::new(model).trajectory(&q0, &plan.control)?;
            run.write_csv("trajectory", &trajectory_csv(&t)?)?;
            run.results = json!({ "words": words, "plan": plan, "certificate": cert });
        }
        Err(e) => run.failure("steer", &e),
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct BallboxParams {
    q0: Option<Vec<f64>>,
    direction: Option<Vec<f64>>,
    scales: Vec<f64>,
    expect: Option<f64>,
    options: BestOptions,
}

impl Default for BallboxParams {
    fn default() -> Self {
        Self {
            q0: None,
            direction: None,
            scales: vec![0.2, 0.1, 0.05, 0.025, 0.0125],
            expect: None,
            options: BestOptions::default(),
        }
    }
}

#[derive(Serialize)]
struct BallboxCsvRow {
    scale: f64,
    distance: Option<f64>,
}

pub fn ballbox(run: &mut Run, model: &Model) -> Result<()> {
    let p: BallboxParams = run.config.params()?;
    let q0 = point("q0", p.q0, model)?;
    let direction = match p.direction {
        Some(d) => point("direction", Some(d), model)?,
        None => {
            let mut d = vec![0.0; model.dim()];
            *d.last_mut().unwrap() = 1.0;
            d
        }
    };
    let opts = best_options(p.options, run.config.seed, run.config.tolerances.endpoint);
    match ballbox_fit(model, &q0, &direction, &p.scales, &opts) {
        Ok(fit) => {
            let tol = run.config.tolerances.clone();
            run.check(
                "fit-quality",
                fit.fit.r_squared >= tol.fit_r2,
                format!("R^2 {:.6} >= {}", fit.fit.r_squared, tol.fit_r2),
            );
            if let Some(want) = p.expect {
                let slack = if want < 0.4 { tol.ballbox_w } else if want < 0.75 { tol.ballbox_z } else { tol.ballbox_x };
                run.check(
                    "exponent",
                    (fit.exponent - want).abs() <= slack,
                    format!("{:.4} expected {want} +- {slack}", fit.exponent),
                );
            }
            let rows: Vec<BallboxCsvRow> = fit
                .table
                .iter()
                .map(|r| BallboxCsvRow {
                    scale: r.scale,
                    distance: r.distance,
                })
                .collect();
            run.write_csv("table", &records_csv(&rows)?)?;
            run.results = serde_json::to_value(&fit)?;
        }
        Err(e) => run.failure("ballbox", &e),
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct OrbitParams {
    c: f64,
    p: f64,
    placement: Placement,
    n_list: Vec<usize>,
    quality: Quality,
    cache: Option<PathBuf>,
    expect: Option<Verdict>,
}

impl Default for OrbitParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            p: 2.0,
            placement: Placement::Z,
            n_list: vec![8, 16, 32, 64],
            quality: Quality::Fast,
            cache: None,
            expect: None,
        }
    }
}

#[derive(Serialize)]
struct OrbitRow {
    n: usize,
    partial_sum: f64,
}

pub fn orbit(run: &mut Run) -> Result<()> {
    let p: OrbitParams = run.config.params()?;
    let spec = SequenceSpec::new(p.c, p.p, p.placement)?;
    let cache = match &p.cache {
        Some(path) => DistanceCache::open(path)?,
        None => DistanceCache::in_memory(),
    };
    let r = if p.placement == Placement::W {
        engel_profile(&spec, &p.n_list, p.quality, Some(&cache))
    } else {
        orbit_profile(&spec, &p.n_list, p.quality, Some(&cache))
    };
    cache.save()?;
    match r {
        Ok(prof) => {
            run.check("verdict-issued", prof.verdict != Verdict::Inconclusive, format!("{:?}", prof.verdict));
            if let Some(want) = p.expect {
                run.check("verdict", prof.verdict == want, format!("{:?} expected {want:?}", prof.verdict));
            }
            let rows: Vec<OrbitRow> = prof
                .n_values
                .iter()
                .zip(&prof.partial_sums)
                .map(|(&n, &s)| OrbitRow { n, partial_sum: s })
                .collect();
            run.write_csv("profile", &records_csv(&rows)?)?;
            run.results = serde_json::to_value(&prof)?;
        }
        Err(e) => run.failure("orbit", &e),
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SpectrumParams {
    n_list: Vec<usize>,
    decay: f64,
    k: usize,
    steps: usize,
    /// Base control on the Heisenberg group; defaults to the unit circle.
    control: Option<ControlPath>,
    expect_decreasing: bool,
}

impl Default for SpectrumParams {
    fn default() -> Self {
        Self {
            n_list: vec![1, 2, 4, 8, 16],
            decay: 1.0,
            k: 3,
            steps: 128,
            control: None,
            expect_decreasing: true,
        }
    }
}

#[derive(Serialize)]
struct SpectrumCsvRow {
    n: usize,
    sigma_min: f64,
    sigma_max: f64,
    rank: usize,
}

pub fn spectrum(run: &mut Run) -> Result<()> {
    let p: SpectrumParams = run.config.params()?;
    let base = p.control.unwrap_or_else(|| verify::circle_control(p.steps));
    match elusive_spectrum(&p.n_list, &base, p.decay, p.k) {
        Ok(rows) => {
            if p.expect_decreasing {
                let ok = rows.windows(2).all(|w| w[1].sigma_min < w[0].sigma_min);
                run.check("sigma-min-decreasing", ok, "");
            }
            let csv: Vec<SpectrumCsvRow> = rows
                .iter()
                .map(|r| SpectrumCsvRow {
                    n: r.n,
                    sigma_min: r.sigma_min,
                    sigma_max: r.sigma_max,
                    rank: r.rank,
                })
                .collect();
            run.write_csv("spectrum", &records_csv(&csv)?)?;
            run.results = serde_json::to_value(&rows)?;
        }
        Err(e) => run.failure("spectrum", &e),
    }
    Ok(())
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct VerifyParams {
    suites: Option<Vec<Suite>>,
    options: Option<VerifyOptions>,
}

#[derive(Serialize)]
struct AssertionRow<'a> {
    suite: String,
    name: &'a str,
    passed: bool,
    value: Option<f64>,
    tolerance: Option<f64>,
}

pub fn verify_cmd(run: &mut Run, suites_flag: &[Suite]) -> Result<()> {
    let p: VerifyParams = run.config.params()?;
    let suites = if !suites_flag.is_empty() {
        suites_flag.to_vec()
    } else {
        p.suites.unwrap_or_else(|| Suite::ALL.to_vec())
    };
    let mut opts = p.options.unwrap_or_default();
    opts.seed = run.config.seed;
    opts.tolerances = run.config.tolerances.clone();
    let results = verify::run(&suites, &opts)?;
    for a in &results {
        log::info!("{a}");
        run.check(format!("{}/{}", a.suite, a.name), a.passed, a.detail.clone());
    }
    let rows: Vec<AssertionRow> = results
        .iter()
        .map(|a| AssertionRow {
            suite: a.suite.to_string(),
            name: &a.name,
            passed: a.passed,
            value: a.value,
            tolerance: a.tolerance,
        })
        .collect();
    run.write_csv("assertions", &records_csv(&rows)?)?;
    run.results = json!({ "suites": suites, "assertions": results });
    Ok(())
}
