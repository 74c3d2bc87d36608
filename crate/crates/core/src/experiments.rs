//! Finite-N surrogates for infinite products of Heisenberg and Engel groups:
//! orbit partial sums with trend verdicts, and the adjoint Gram spectrum of
//! lifted controls.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distance::{distance_best, BestOptions, DirectOptions};
use crate::dynamics::{gram, ControlPath, Dynamics};
use crate::error::{Error, Result};
use crate::linalg::{linear_fit, sym_eigenvalues_desc, LinearFit};
use crate::model::Model;

/// Largest state dimension `3N` accepted by [`elusive_spectrum`].
pub const SPECTRUM_DIM_CAP: usize = 600;
/// Minimum R^2 for a trend verdict.
pub const VERDICT_R2: f64 = 0.99;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    X,
    Y,
    Z,
    W,
}

impl Placement {
    fn index(self) -> usize {
        match self {
            Placement::X => 0,
            Placement::Y => 1,
            Placement::Z => 2,
            Placement::W => 3,
        }
    }
}

/// Power-law sequence `a_n = c (n + 1)^(-p)` carried by one coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceSpec {
    pub c: f64,
    pub p: f64,
    pub placement: Placement,
}

impl SequenceSpec {
    pub fn new(c: f64, p: f64, placement: Placement) -> Result<Self> {
        let s = Self { c, p, placement };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.c.is_finite() || !(self.p.is_finite() && self.p > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "sequence needs finite c and p > 0, got c = {}, p = {}",
                self.c, self.p
            )));
        }
        Ok(())
    }

    pub fn value(&self, n: usize) -> f64 {
        self.c * ((n + 1) as f64).powf(-self.p)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quality {
    Fast,
    Oracle,
}

impl Quality {
    pub fn options(self) -> BestOptions {
        match self {
            Quality::Fast => BestOptions::default(),
            Quality::Oracle => BestOptions {
                direct: DirectOptions {
                    steps: 2048,
                    schedule: vec![1e1, 1e2, 1e3, 1e4, 1e5, 1e6, 1e7, 1e8, 1e9],
                    refine_iters: 1000,
                    refine_tol: 1e-11,
                    ..DirectOptions::default()
                },
                ..BestOptions::default()
            },
        }
    }

    fn tag(self) -> &'static str {
        match self {
            Quality::Fast => "fast",
            Quality::Oracle => "oracle",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Convergent,
    DivergentTrend,
    Inconclusive,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GrowthLaw {
    /// Terms decay faster than `1/n`.
    Summable,
    /// `S(N) ~ a + b log N`.
    Logarithmic,
    /// `S(N) ~ a + b N^e`.
    Power,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrbitProfile {
    pub n_values: Vec<usize>,
    pub partial_sums: Vec<f64>,
    /// Squared component distances `d_n^2`, n < max N.
    pub terms: Vec<f64>,
    pub verdict: Verdict,
    pub law: GrowthLaw,
    /// Fitted decay exponent of the terms, `d_n^2 ~ (n+1)^(-a)`.
    pub term_exponent: Option<f64>,
    pub term_fit: Option<LinearFit>,
    /// Growth exponent `1 - a` (power law) or `None`.
    pub growth_exponent: Option<f64>,
    pub growth_fit: Option<LinearFit>,
    /// Relative change of the partial sum between the last two N values.
    pub tail_change: f64,
}

/// JSON-persisted memo of component distances keyed by model, quality and
/// coordinates rounded to 1e-12.
#[derive(Debug, Default)]
pub struct DistanceCache {
    path: Option<PathBuf>,
    entries: RwLock<BTreeMap<String, f64>>,
}

#[derive(Serialize, Deserialize)]
struct CacheFile {
    entries: BTreeMap<String, f64>,
}

impl DistanceCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or starts) a cache backed by `path`.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let entries = if path.exists() {
            let text = std::fs::read_to_string(&path)?;
            serde_json::from_str::<CacheFile>(&text)?.entries
        } else {
            BTreeMap::new()
        };
        Ok(Self {
            path: Some(path),
            entries: RwLock::new(entries),
        })
    }

    pub fn key(model: &str, quality: Quality, coords: &[f64]) -> String {
        let parts: Vec<String> = coords
            .iter()
            .map(|c| {
                let r = (c * 1e12).round() / 1e12;
                format!("{:.12}", if r == 0.0 { 0.0 } else { r })
            })
            .collect();
        format!("{model}|{}|{}", quality.tag(), parts.join(","))
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.entries.read().unwrap().get(key).copied()
    }

    pub fn insert(&self, key: String, value: f64) {
        self.entries.write().unwrap().insert(key, value);
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Writes the cache atomically (temp file + rename); no-op in memory.
    pub fn save(&self) -> Result<()> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        let file = CacheFile {
            entries: self.entries.read().unwrap().clone(),
        };
        crate::io::write_atomic(path, serde_json::to_string_pretty(&file)?.as_bytes())
    }
}

fn component_distance(model: &Model, coords: &[f64], quality: Quality, cache: Option<&DistanceCache>) -> Result<f64> {
    if coords.iter().all(|&c| c == 0.0) {
        return Ok(0.0);
    }
    let key = DistanceCache::key(model.name(), quality, coords);
    if let Some(d) = cache.and_then(|c| c.get(&key)) {
        return Ok(d);
    }
    let origin = vec![0.0; model.dim()];
    let d = distance_best(model, &origin, coords, &quality.options())?.distance;
    if let Some(c) = cache {
        c.insert(key, d);
    }
    Ok(d)
}

/// `d(0, (x, y, z))` on the Heisenberg group.
pub fn heisenberg_component_distance(x: f64, y: f64, z: f64, quality: Quality, cache: Option<&DistanceCache>) -> Result<f64> {
    component_distance(&Model::heisenberg3(), &[x, y, z], quality, cache)
}

/// `d(0, (x, y, z, w))` on the Engel group.
pub fn engel_component_distance(coords: [f64; 4], quality: Quality, cache: Option<&DistanceCache>) -> Result<f64> {
    component_distance(&Model::engel(), &coords, quality, cache)
}

/// Partial sums `sum_{n<N} d(0, q_n)^2` on products of Heisenberg groups.
pub fn orbit_profile(spec: &SequenceSpec, n_list: &[usize], quality: Quality, cache: Option<&DistanceCache>) -> Result<OrbitProfile> {
    if spec.placement == Placement::W {
        return Err(Error::InvalidArgument("the Heisenberg group has no w coordinate".into()));
    }
    profile(&Model::heisenberg3(), spec, n_list, quality, cache)
}

/// Partial sums of squared Engel component distances.
pub fn engel_profile(spec: &SequenceSpec, n_list: &[usize], quality: Quality, cache: Option<&DistanceCache>) -> Result<OrbitProfile> {
    profile(&Model::engel(), spec, n_list, quality, cache)
}

fn profile(model: &Model, spec: &SequenceSpec, n_list: &[usize], quality: Quality, cache: Option<&DistanceCache>) -> Result<OrbitProfile> {
    spec.validate()?;
    if n_list.is_empty() || n_list.windows(2).any(|w| w[1] <= w[0]) || n_list[0] == 0 {
        return Err(Error::InvalidArgument("N list must be positive and strictly increasing".into()));
    }
    let nmax = *n_list.last().unwrap();
    let terms: Vec<f64> = (0..nmax)
        .into_par_iter()
        .map(|n| {
            let mut q = vec![0.0; model.dim()];
            q[spec.placement.index()] = spec.value(n);
            component_distance(model, &q, quality, cache).map(|d| d * d)
        })
        .collect::<Result<_>>()?;
    let mut cumulative = Vec::with_capacity(nmax);
    let mut s = 0.0;
    for t in &terms {
        s += t;
        cumulative.push(s);
    }
    let partial_sums: Vec<f64> = n_list.iter().map(|&n| cumulative[n - 1]).collect();
    Ok(classify_profile(n_list.to_vec(), partial_sums, terms))
}

/// Trend verdict from the term decay exponent and the partial-sum growth law.
pub fn classify_profile(n_values: Vec<usize>, partial_sums: Vec<f64>, terms: Vec<f64>) -> OrbitProfile {
    let k = partial_sums.len();
    let tail_change = if k >= 2 && partial_sums[k - 2] > 0.0 {
        (partial_sums[k - 1] - partial_sums[k - 2]) / partial_sums[k - 2]
    } else {
        0.0
    };
    let mut out = OrbitProfile {
        n_values,
        partial_sums,
        terms,
        verdict: Verdict::Inconclusive,
        law: GrowthLaw::None,
        term_exponent: None,
        term_fit: None,
        growth_exponent: None,
        growth_fit: None,
        tail_change,
    };
    if out.terms.iter().all(|&t| t == 0.0) {
        out.verdict = Verdict::Convergent;
        out.law = GrowthLaw::Summable;
        return out;
    }
    let (lx, ly): (Vec<f64>, Vec<f64>) = out
        .terms
        .iter()
        .enumerate()
        .filter(|(_, t)| **t > 0.0)
        .map(|(n, t)| (((n + 1) as f64).ln(), t.ln()))
        .unzip();
    let Some(tf) = linear_fit(&lx, &ly) else {
        return out;
    };
    let a = -tf.slope;
    out.term_exponent = Some(a);
    out.term_fit = Some(tf);
    if tf.r_squared < VERDICT_R2 {
        return out;
    }
    let ns: Vec<f64> = out.n_values.iter().map(|&n| n as f64).collect();
    if a >= 1.1 {
        out.verdict = Verdict::Convergent;
        out.law = GrowthLaw::Summable;
    } else if a < 0.9 {
        let e = 1.0 - a;
        let xs: Vec<f64> = ns.iter().map(|n| n.powf(e)).collect();
        if let Some(f) = linear_fit(&xs, &out.partial_sums) {
            out.growth_exponent = Some(e);
            out.growth_fit = Some(f);
            if f.r_squared >= VERDICT_R2 && f.slope > 0.0 {
                out.verdict = Verdict::DivergentTrend;
                out.law = GrowthLaw::Power;
            }
        }
    } else {
        let xs: Vec<f64> = ns.iter().map(|n| n.ln()).collect();
        if let Some(f) = linear_fit(&xs, &out.partial_sums) {
            out.growth_fit = Some(f);
            if f.r_squared >= VERDICT_R2 && f.slope > 0.0 {
                out.verdict = Verdict::DivergentTrend;
                out.law = GrowthLaw::Logarithmic;
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRow {
    pub n: usize,
    /// Largest `k` Gram eigenvalues, descending.
    pub leading: Vec<f64>,
    /// Smallest `k` Gram eigenvalues, descending.
    pub trailing: Vec<f64>,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub rank: usize,
}

/// Lifts `u` to `heisenberg_product(N)` with component amplitudes
/// proportional to `(n+1)^(-decay)`, normalised in l^2.
pub fn lift_control(base: &ControlPath, copies: usize, decay: f64) -> ControlPath {
    let amps: Vec<f64> = (0..copies).map(|n| ((n + 1) as f64).powf(-decay)).collect();
    let total = amps.iter().map(|a| a * a).sum::<f64>().sqrt();
    let h = base.dim();
    let mut out = ControlPath::zeros(base.steps(), h * copies);
    for k in 0..base.steps() {
        let row = out.row_mut(k);
        for (n, a) in amps.iter().enumerate() {
            for c in 0..h {
                row[n * h + c] = a / total * base.row(k)[c];
            }
        }
    }
    out
}

/// Adjoint Gram spectrum at the lifted control for each N.
pub fn elusive_spectrum(n_list: &[usize], base: &ControlPath, decay: f64, k: usize) -> Result<Vec<SpectrumRow>> {
    if base.dim() != 2 {
        return Err(Error::DimensionMismatch {
            what: "Heisenberg base control",
            expected: 2,
            got: base.dim(),
        });
    }
    n_list
        .iter()
        .map(|&n| {
            if n == 0 || 3 * n > SPECTRUM_DIM_CAP {
                return Err(Error::InvalidArgument(format!(
                    "N = {n} outside 1..={}",
                    SPECTRUM_DIM_CAP / 3
                )));
            }
            let model = Model::heisenberg_product(n);
            let u = lift_control(base, n, decay);
            let dynamics = Dynamics::new(&model);
            let q0 = vec![0.0; model.dim()];
            let fine = dynamics.integrate(&q0, &u)?;
            let cols = dynamics.adjoint_columns_on(&fine, &u)?;
            let ev: Vec<f64> = sym_eigenvalues_desc(&gram(&cols)).into_iter().map(|v| v.max(0.0)).collect();
            let smax = ev[0];
            let rank = ev.iter().filter(|&&s| s > crate::distance::ABNORMAL_THRESHOLD * smax).count();
            let kk = k.min(ev.len());
            Ok(SpectrumRow {
                n,
                leading: ev[..kk].to_vec(),
                trailing: ev[ev.len() - kk..].to_vec(),
                sigma_min: *ev.last().unwrap(),
                sigma_max: smax,
                rank,
            })
        })
        .collect()
}
