//! Monte Carlo checks of the (alpha, f)-Byzantine resilience conditions.
//!
//! Each trial draws `n - f` correct vectors from `N(g, sigma^2 I_d)`, lets
//! the attack choose the other `f`, and aggregates. The report compares the
//! empirical mean of the aggregate against
//!
//! * condition (i): `<E F, g> >= (1 - sin alpha) ||g||^2 > 0`,
//! * the deviation bound `||E F - g||^2 <= eta(n,f)^2 d sigma^2`,
//! * condition (ii): moments `E ||F||^r`, `r = 2, 3, 4`, against products of
//!   the correct estimator's moments.
//!
//! Every check is a statistical statement about a finite sample, never a
//! proof of the universally quantified property. Point estimates are
//! compared with a slack of [`SLACK_STANDARD_ERRORS`] standard errors.
//!
//! Trials run in parallel on per-trial substreams and are accumulated in
//! trial order, so reports are bit-identical for any thread count.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::adversary::{craft, AdversaryView, AttackSpec};
use crate::aggregation::{check_krum, eta, resilience_angle, AggregationInput, Rule};
use crate::error::{Error, Result};
use crate::rng::{substream, ADVERSARY_SLOT};
use crate::scalar::Scalar;
use crate::vector::GradientVector;

pub const SLACK_STANDARD_ERRORS: f64 = 3.0;

const MOMENT_ORDERS: [u32; 3] = [2, 3, 4];

/// Sufficient separation for Krum to pick a correct worker: with correct
/// vectors within pairwise distance `delta` and every Byzantine vector at
/// least `r` from every correct one, a correct score is at most
/// `(n-f-2) delta^2` and a Byzantine score at least `(n-2f-1) r^2`.
pub fn check_safety_radius<T: Scalar>(delta: T, r: T, n: usize, f: usize) -> Result<bool> {
    check_krum(n, f)?;
    Ok(r * r * T::count(n - 2 * f - 1) > delta * delta * T::count(n - f - 2))
}

fn default_ceiling() -> Option<f64> {
    None
}

/// One Monte Carlo experiment: rule, attack and honest distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResilienceSetup {
    pub rule: Rule,
    pub n: usize,
    pub f: usize,
    /// True gradient `g`, the mean of every correct proposal.
    pub g: Vec<f64>,
    pub sigma: f64,
    pub attack: AttackSpec,
    pub trials: usize,
    pub seed: u64,
    /// Ceiling `c` in `E ||F||^r <= c * max_partition prod E ||G||^{r_i}`;
    /// defaults to `n`.
    #[serde(default = "default_ceiling")]
    pub moment_ceiling: Option<f64>,
}

impl ResilienceSetup {
    pub fn validate(&self) -> Result<()> {
        if self.f >= self.n {
            return Err(Error::config("f", format!("requires f < n: got n={}, f={}", self.n, self.f)));
        }
        self.rule.validate(self.n, self.f).map_err(|e| match e {
            Error::Config { .. } => e,
            other => Error::config("rule", other.to_string()),
        })?;
        if self.g.is_empty() || self.g.iter().any(|c| !c.is_finite()) {
            return Err(Error::config("g", "must be a non-empty finite vector"));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::config("sigma", format!("must be >= 0, got {}", self.sigma)));
        }
        if self.trials < 2 {
            return Err(Error::config("trials", format!("must be >= 2, got {}", self.trials)));
        }
        self.attack.validate(self.g.len(), self.f)
    }
}

/// Point estimate with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

impl Estimate {
    pub fn upper(&self) -> f64 {
        self.value + SLACK_STANDARD_ERRORS * self.std_error
    }

    pub fn lower(&self) -> f64 {
        self.value - SLACK_STANDARD_ERRORS * self.std_error
    }

    fn of_samples(samples: &[f64]) -> Self {
        let count = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / count;
        let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (count - 1.0);
        Estimate {
            value: mean,
            std_error: (var / count).sqrt(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResilienceReport {
    pub rule: String,
    pub attack: String,
    pub n: usize,
    pub f: usize,
    pub d: usize,
    pub sigma: f64,
    pub trials: usize,
    pub grad_norm: f64,
    /// `eta(n,f) sqrt(d) sigma / ||g||`; absent when `2f + 2 >= n`.
    pub sin_alpha: Option<f64>,
    pub empirical_mean_f: Vec<f64>,
    /// `<mean F, g>`.
    pub inner_product: Estimate,
    /// `(1 - sin alpha) ||g||^2`, or 0 when `sin alpha` is undefined.
    pub bound_i: f64,
    pub condition_i_holds: bool,
    /// `E ||F - g||^2`.
    pub mean_sq_dev: Estimate,
    /// `||mean F - g||^2`.
    pub mean_dev_sq: Estimate,
    /// `eta(n,f)^2 d sigma^2`.
    pub dev_bound: Option<f64>,
    pub deviation_within_bound: bool,
    /// `E ||F||^r`.
    pub moments: BTreeMap<u32, Estimate>,
    /// `(n - f) * max over partitions of r of prod E ||G||^{r_i}`.
    pub moment_reference: BTreeMap<u32, f64>,
    pub condition_ii_holds: bool,
    /// Fraction of trials where the rule selected a Byzantine worker.
    pub byzantine_selected_fraction: f64,
}

struct TrialOutcome {
    output: GradientVector<f64>,
    byzantine_selected: bool,
    /// `sum over correct workers of ||G||^r`, `r = 1..=4`.
    honest_powers: [f64; 4],
}

fn run_trial(setup: &ResilienceSetup, g: &GradientVector<f64>, trial: u64) -> Result<TrialOutcome> {
    let (n, f, d) = (setup.n, setup.f, g.dim());
    let honest: Vec<(usize, GradientVector<f64>)> = (1..=n - f)
        .map(|id| {
            let mut rng = substream(setup.seed, id as u64, trial);
            let v = g
                .as_slice()
                .iter()
                .map(|&gk| gk + setup.sigma * f64::standard_normal(&mut rng))
                .collect();
            (id, GradientVector::from_raw(v))
        })
        .collect();
    let mut honest_powers = [0.0; 4];
    for (_, v) in &honest {
        let norm = v.norm();
        let mut p = 1.0;
        for slot in honest_powers.iter_mut() {
            p *= norm;
            *slot += p;
        }
    }
    let byz_ids: Vec<usize> = (n - f + 1..=n).collect();
    let mut vectors: Vec<GradientVector<f64>> = honest.iter().map(|(_, v)| v.clone()).collect();
    if f > 0 {
        let view = AdversaryView::new(trial, GradientVector::zeros(d), honest, setup.rule.clone())?
            .with_true_gradient(g.clone())?;
        let mut rng = substream(setup.seed, ADVERSARY_SLOT, trial);
        vectors.extend(craft(&setup.attack, &view, &byz_ids, &mut rng)?.into_iter().map(|p| p.resolve(d)));
    }
    let input = AggregationInput::from_vectors(vectors, f)?;
    let selection = setup.rule.aggregate(&input)?;
    Ok(TrialOutcome {
        byzantine_selected: selection.selected_ids.iter().any(|&id| id > n - f),
        output: selection.output,
        honest_powers,
    })
}

/// Largest product `prod_i m[r_i]` over the integer partitions of `r`,
/// where `m[k] = E ||G||^k`.
fn max_partition_product(r: u32, honest_moments: &[f64; 4]) -> f64 {
    fn go(remaining: u32, largest: u32, acc: f64, m: &[f64; 4], best: &mut f64) {
        if remaining == 0 {
            *best = best.max(acc);
            return;
        }
        for part in (1..=largest.min(remaining)).rev() {
            go(remaining - part, part, acc * m[part as usize - 1], m, best);
        }
    }
    let mut best = f64::NEG_INFINITY;
    go(r, r, 1.0, honest_moments, &mut best);
    best
}

/// Runs `setup.trials` independent rounds and reports the resilience
/// estimates.
pub fn estimate_resilience(setup: &ResilienceSetup) -> Result<ResilienceReport> {
    setup.validate()?;
    let g = GradientVector::new(setup.g.clone())?;
    let (n, f, d) = (setup.n, setup.f, g.dim());
    let outcomes: Vec<TrialOutcome> = (0..setup.trials as u64)
        .into_par_iter()
        .map(|trial| run_trial(setup, &g, trial))
        .collect::<Result<_>>()?;
    let trials = outcomes.len() as f64;

    let mut mean = vec![0.0; d];
    for o in &outcomes {
        for (m, x) in mean.iter_mut().zip(o.output.as_slice()) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= trials;
    }
    let mean_v = GradientVector::from_raw(mean.clone());

    let inner: Vec<f64> = outcomes.iter().map(|o| o.output.dot(&g)).collect();
    let inner_product = Estimate::of_samples(&inner);
    let sq_dev: Vec<f64> = outcomes.iter().map(|o| o.output.sq_distance(&g)).collect();
    let mean_sq_dev = Estimate::of_samples(&sq_dev);

    // Delta-method standard error of ||mean F - g||^2 from the sample covariance.
    let offset = mean_v.sub(&g);
    let mut cov = vec![0.0; d * d];
    for o in &outcomes {
        let c: Vec<f64> = o.output.as_slice().iter().zip(&mean).map(|(x, m)| x - m).collect();
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] += c[i] * c[j];
            }
        }
    }
    for c in &mut cov {
        *c /= trials - 1.0;
    }
    let mut quad = 0.0;
    for i in 0..d {
        for j in 0..d {
            quad += offset[i] * cov[i * d + j] * offset[j];
        }
    }
    let frob_sq: f64 = cov.iter().map(|c| c * c).sum();
    let mean_dev_sq = Estimate {
        value: offset.norm_sq(),
        std_error: (4.0 * quad / trials + 2.0 * frob_sq / (trials * trials)).max(0.0).sqrt(),
    };

    let grad_norm = g.norm();
    let sin_alpha = if 2 * f + 2 < n && grad_norm > 0.0 {
        Some(resilience_angle(n, f, d, setup.sigma, grad_norm)?.ratio())
    } else {
        None
    };
    let bound_i = sin_alpha.map_or(0.0, |s| (1.0 - s) * grad_norm * grad_norm);
    let condition_i_holds = inner_product.lower() >= bound_i.max(0.0) && inner_product.lower() > 0.0;
    let dev_bound = if 2 * f + 2 < n {
        let e: f64 = eta(n, f)?;
        Some(e * e * d as f64 * setup.sigma * setup.sigma)
    } else {
        None
    };
    let deviation_within_bound = dev_bound.is_some_and(|b| mean_dev_sq.upper() <= b);

    let honest_count = (outcomes.len() * (n - f)) as f64;
    let mut honest_moments = [0.0; 4];
    for o in &outcomes {
        for (m, p) in honest_moments.iter_mut().zip(o.honest_powers) {
            *m += p;
        }
    }
    for m in &mut honest_moments {
        *m /= honest_count;
    }
    let ceiling = setup.moment_ceiling.unwrap_or(n as f64);
    let mut moments = BTreeMap::new();
    let mut moment_reference = BTreeMap::new();
    let mut condition_ii_holds = true;
    for r in MOMENT_ORDERS {
        let powers: Vec<f64> = outcomes.iter().map(|o| o.output.norm().powi(r as i32)).collect();
        let est = Estimate::of_samples(&powers);
        let product = max_partition_product(r, &honest_moments);
        condition_ii_holds &= est.value.is_finite() && est.value <= ceiling * product;
        moments.insert(r, est);
        moment_reference.insert(r, (n - f) as f64 * product);
    }

    let byzantine_selected_fraction =
        outcomes.iter().filter(|o| o.byzantine_selected).count() as f64 / trials;

    Ok(ResilienceReport {
        rule: setup.rule.name().to_string(),
        attack: setup.attack.name().to_string(),
        n,
        f,
        d,
        sigma: setup.sigma,
        trials: outcomes.len(),
        grad_norm,
        sin_alpha,
        empirical_mean_f: mean,
        inner_product,
        bound_i,
        condition_i_holds,
        mean_sq_dev,
        mean_dev_sq,
        dev_bound,
        deviation_within_bound,
        moments,
        moment_reference,
        condition_ii_holds,
        byzantine_selected_fraction,
    })
}

impl ResilienceReport {
    /// Flat key/value view: nested estimates become `<name>` and
    /// `<name>_se`, moments become `moment_<r>`, and the mean vector is
    /// `empirical_mean_f_<k>`.
    pub fn to_flat_json(&self) -> Map<String, Value> {
        let mut out = Map::new();
        let mut put = |k: String, v: Value| {
            out.insert(k, v);
        };
        put("rule".into(), self.rule.clone().into());
        put("attack".into(), self.attack.clone().into());
        put("n".into(), self.n.into());
        put("f".into(), self.f.into());
        put("d".into(), self.d.into());
        put("sigma".into(), self.sigma.into());
        put("trials".into(), self.trials.into());
        put("grad_norm".into(), self.grad_norm.into());
        put("sin_alpha".into(), self.sin_alpha.map_or(Value::Null, Value::from));
        for (k, m) in self.empirical_mean_f.iter().enumerate() {
            put(format!("empirical_mean_f_{k}"), (*m).into());
        }
        let mut est = |name: &str, e: &Estimate| {
            put(name.to_string(), e.value.into());
            put(format!("{name}_se"), e.std_error.into());
        };
        est("inner_product", &self.inner_product);
        est("mean_sq_dev", &self.mean_sq_dev);
        est("mean_dev_sq", &self.mean_dev_sq);
        for (r, e) in &self.moments {
            est(&format!("moment_{r}"), e);
        }
        out.insert("bound_i".into(), self.bound_i.into());
        out.insert("condition_i_holds".into(), self.condition_i_holds.into());
        out.insert("dev_bound".into(), self.dev_bound.map_or(Value::Null, Value::from));
        out.insert("deviation_within_bound".into(), self.deviation_within_bound.into());
        for (r, v) in &self.moment_reference {
            out.insert(format!("moment_reference_{r}"), (*v).into());
        }
        out.insert("condition_ii_holds".into(), self.condition_ii_holds.into());
        out.insert("byzantine_selected_fraction".into(), self.byzantine_selected_fraction.into());
        out
    }

    /// Header and one data row, in the key order of [`Self::to_flat_json`].
    pub fn to_csv(&self) -> String {
        let flat = self.to_flat_json();
        let header: Vec<&str> = flat.keys().map(String::as_str).collect();
        let row: Vec<String> = flat
            .values()
            .map(|v| match v {
                Value::Null => String::new(),
                Value::Number(num) if num.is_f64() => format!("{:.16e}", num.as_f64().unwrap_or(f64::NAN)),
                Value::String(s) => s.clone(),
                other => other.to_string(),
            })
            .collect();
        format!("{}\n{}\n", header.join(","), row.join(","))
    }
}
