//! Synchronous parameter-server rounds.
//!
//! Each round the server broadcasts `x_t`, the correct workers return noisy
//! gradient estimates, the Byzantine workers return whatever the attack
//! chooses, and the server applies `x_{t+1} = x_t - gamma_t * F(V_1, ..., V_n)`.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adversary::{craft, AdversaryView, AttackSpec};
use crate::aggregation::{AggregationInput, Rule};
use crate::error::{Error, Result};
use crate::problems::{CostFunction, Estimator, Schedule};
use crate::resilience::check_safety_radius;
use crate::rng::{substream, ADVERSARY_SLOT};
use crate::vector::GradientVector;

/// Cost function as written in a config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum CostSpec {
    /// `x_star` defaults to the origin of dimension `d`.
    Quadratic {
        #[serde(default)]
        d: Option<usize>,
        #[serde(default)]
        x_star: Option<Vec<f64>>,
    },
    LeastSquares {
        design: Vec<Vec<f64>>,
        targets: Vec<f64>,
    },
    CosineBowl {
        d: usize,
        lambda: f64,
    },
}

impl CostSpec {
    pub fn build(&self) -> Result<CostFunction<f64>> {
        match self {
            CostSpec::Quadratic { d, x_star } => {
                let x_star = match (d, x_star) {
                    (Some(d), Some(x)) if x.len() != *d => {
                        return Err(Error::config(
                            "cost.x_star",
                            format!("has {} components but d={d}", x.len()),
                        ))
                    }
                    (_, Some(x)) => x.clone(),
                    (Some(0), None) | (None, None) => {
                        return Err(Error::config("cost.d", "quadratic needs d >= 1 or x_star"))
                    }
                    (Some(d), None) => vec![0.0; *d],
                };
                let x_star = GradientVector::new(x_star).map_err(|e| Error::config("cost.x_star", e.to_string()))?;
                Ok(CostFunction::quadratic(x_star))
            }
            CostSpec::LeastSquares { design, targets } => {
                let rows = design
                    .iter()
                    .map(|r| GradientVector::new(r.clone()))
                    .collect::<Result<Vec<_>>>()
                    .map_err(|e| Error::config("cost.design", e.to_string()))?;
                CostFunction::least_squares(rows, targets.clone()).map_err(|e| Error::config("cost.design", e.to_string()))
            }
            CostSpec::CosineBowl { d, lambda } => {
                CostFunction::cosine_bowl(*d, *lambda).map_err(|e| Error::config("cost", e.to_string()))
            }
        }
    }
}

fn default_attack() -> AttackSpec {
    AttackSpec::Silence
}

/// Complete, seeded description of one simulation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n: usize,
    pub f: usize,
    pub rule: Rule,
    pub cost: CostSpec,
    pub estimator: Estimator,
    #[serde(default = "default_attack")]
    pub attack: AttackSpec,
    pub schedule: Schedule,
    pub rounds: usize,
    /// Starting point; the origin when omitted.
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    pub seed: u64,
    /// Byzantine worker ids; `{n-f+1, ..., n}` when omitted.
    #[serde(default)]
    pub byzantine_ids: Option<Vec<usize>>,
}

impl ExperimentConfig {
    /// Checks every constraint; errors name the offending key.
    pub fn validate(&self) -> Result<()> {
        self.prepare().map(|_| ())
    }

    pub fn prepare(&self) -> Result<Experiment> {
        Experiment::new(self.clone())
    }
}

/// A validated config with its cost function built and worker roles fixed.
#[derive(Clone, Debug)]
pub struct Experiment {
    config: ExperimentConfig,
    cost: CostFunction<f64>,
    x0: GradientVector<f64>,
    honest_ids: Vec<usize>,
    byzantine_ids: Vec<usize>,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        let (n, f) = (config.n, config.f);
        if n == 0 {
            return Err(Error::config("n", "must be at least 1"));
        }
        if f >= n {
            return Err(Error::config("f", format!("requires 0 <= f < n: got n={n}, f={f}")));
        }
        config
            .rule
            .validate(n, f)
            .map_err(|e| match e {
                Error::Config { .. } => e,
                other => Error::config("rule", other.to_string()),
            })?;
        let cost = config.cost.build()?;
        let d = cost.dim();
        config.estimator.validate()?;
        if matches!(config.estimator, Estimator::Minibatch { .. }) && !matches!(cost, CostFunction::LeastSquares { .. }) {
            return Err(Error::config("estimator.variant", "minibatch requires a least_squares cost"));
        }
        config.schedule.validate()?;
        config.attack.validate(d, f)?;
        let x0 = match &config.x0 {
            Some(x) if x.len() != d => {
                return Err(Error::config("x0", format!("has {} components but the cost has d={d}", x.len())))
            }
            Some(x) => GradientVector::new(x.clone()).map_err(|e| Error::config("x0", e.to_string()))?,
            None => GradientVector::zeros(d),
        };
        let mut byzantine_ids = match &config.byzantine_ids {
            Some(ids) => ids.clone(),
            None => ((n - f + 1)..=n).collect(),
        };
        byzantine_ids.sort_unstable();
        if byzantine_ids.len() != f {
            return Err(Error::config("byzantine_ids", format!("must list exactly f={f} ids, got {}", byzantine_ids.len())));
        }
        if byzantine_ids.windows(2).any(|w| w[0] == w[1]) || byzantine_ids.iter().any(|&id| id == 0 || id > n) {
            return Err(Error::config("byzantine_ids", format!("must be distinct ids in 1..={n}")));
        }
        let honest_ids = (1..=n).filter(|id| byzantine_ids.binary_search(id).is_err()).collect();
        Ok(Self { config, cost, x0, honest_ids, byzantine_ids })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn cost(&self) -> &CostFunction<f64> {
        &self.cost
    }

    pub fn byzantine_ids(&self) -> &[usize] {
        &self.byzantine_ids
    }

    pub fn initial_state(&self) -> RoundState {
        RoundState { x: self.x0.clone(), t: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundState {
    pub x: GradientVector<f64>,
    pub t: u64,
}

/// Metrics of one round, all evaluated at `x_t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub t: u64,
    pub cost: f64,
    /// `||grad Q(x_t)||`, computed by the server from the closed form.
    pub grad_norm: f64,
    pub gamma: f64,
    pub selected_ids: Vec<usize>,
    pub byzantine_selected: bool,
    /// `||F - grad Q(x_t)||`.
    pub agg_to_grad_dist: f64,
    pub x_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentTrace {
    pub config: ExperimentConfig,
    pub records: Vec<RoundRecord>,
    /// Last finite parameter vector.
    pub final_x: GradientVector<f64>,
    pub final_cost: f64,
    pub final_grad_norm: f64,
    /// Round at which `x_{t+1}` stopped being finite, if it did.
    pub diverged_at: Option<u64>,
}

impl ExperimentTrace {
    pub fn diverged(&self) -> bool {
        self.diverged_at.is_some()
    }
}

/// One synchronous round. A non-finite `x_{t+1}` (or non-finite proposals)
/// yields [`Error::Diverged`] carrying the round's record.
pub fn run_round(exp: &Experiment, state: &RoundState) -> Result<(RoundState, RoundRecord)> {
    let cfg = &exp.config;
    let (x, t) = (&state.x, state.t);
    if t >= cfg.rounds as u64 {
        return Err(Error::InvalidInput(format!("round {t} is past the configured {} rounds", cfg.rounds)));
    }
    let gamma = cfg.schedule.gamma(t)?;
    let grad = exp.cost.true_gradient(x)?;
    let d = x.dim();

    let honest: Vec<(usize, GradientVector<f64>)> = exp
        .honest_ids
        .par_iter()
        .map(|&id| {
            let mut rng = substream(cfg.seed, id as u64, t);
            exp.cost
                .estimate_gradient(x, &cfg.estimator, &mut rng)
                .map(|v| (id, v))
        })
        .collect::<Result<_>>()?;

    let mut proposals: Vec<Option<GradientVector<f64>>> = vec![None; cfg.n];
    if !exp.byzantine_ids.is_empty() {
        let view = AdversaryView::new(t, x.clone(), honest.clone(), cfg.rule.clone())?
            .with_true_gradient(grad.clone())?
            .with_gamma(gamma);
        let mut rng = substream(cfg.seed, ADVERSARY_SLOT, t);
        let crafted = craft(&cfg.attack, &view, &exp.byzantine_ids, &mut rng)?;
        for (&id, p) in exp.byzantine_ids.iter().zip(crafted) {
            proposals[id - 1] = Some(p.resolve(d));
        }
    }
    for (id, v) in honest {
        proposals[id - 1] = Some(v);
    }
    let vectors: Vec<GradientVector<f64>> = proposals.into_iter().map(|p| p.expect("every id filled")).collect();

    let mut record = RoundRecord {
        t,
        cost: exp.cost.cost(x)?,
        grad_norm: grad.norm(),
        gamma,
        selected_ids: Vec::new(),
        byzantine_selected: false,
        agg_to_grad_dist: f64::INFINITY,
        x_norm: x.norm(),
    };
    if vectors.iter().any(|v| !v.is_finite()) {
        return Err(Error::Diverged { round: t, record: Box::new(record) });
    }

    let input = AggregationInput::from_vectors(vectors, cfg.f)?;
    let selection = cfg.rule.aggregate(&input)?;
    record.byzantine_selected = selection
        .selected_ids
        .iter()
        .any(|id| exp.byzantine_ids.binary_search(id).is_ok());
    if record.byzantine_selected && cfg.rule == Rule::Krum && inside_safety_radius(exp, &input) {
        warn!("round {t}: krum selected a byzantine worker although the safety-radius condition holds");
    }
    record.selected_ids = selection.selected_ids;
    record.agg_to_grad_dist = selection.output.distance(&grad);

    let next = x.axpy(-gamma, &selection.output);
    if !next.is_finite() {
        return Err(Error::Diverged { round: t, record: Box::new(record) });
    }
    Ok((RoundState { x: next, t: t + 1 }, record))
}

/// Whether this round's proposals satisfy the safety-radius condition, under
/// which Krum must pick a correct worker.
fn inside_safety_radius(exp: &Experiment, input: &AggregationInput<f64>) -> bool {
    let vector = |id: usize| &input.entries()[id - 1].1;
    let mut diameter: f64 = 0.0;
    for (i, &a) in exp.honest_ids.iter().enumerate() {
        for &b in &exp.honest_ids[i + 1..] {
            diameter = diameter.max(vector(a).distance(vector(b)));
        }
    }
    let separation = exp
        .byzantine_ids
        .iter()
        .flat_map(|&b| exp.honest_ids.iter().map(move |&h| vector(b).distance(vector(h))))
        .fold(f64::INFINITY, f64::min);
    check_safety_radius(diameter, separation, exp.config.n, exp.config.f).unwrap_or(false)
}

/// Runs `config.rounds` rounds from `x0`. Divergence truncates the trace and
/// sets `diverged_at`; it is a result, not an error.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentTrace> {
    let exp = config.prepare()?;
    let mut state = exp.initial_state();
    let mut records = Vec::with_capacity(config.rounds);
    let mut diverged_at = None;
    for _ in 0..config.rounds {
        match run_round(&exp, &state) {
            Ok((next, record)) => {
                records.push(record);
                state = next;
            }
            Err(Error::Diverged { round, record }) => {
                records.push(*record);
                diverged_at = Some(round);
                break;
            }
            Err(e) => return Err(e),
        }
    }
    let final_cost = exp.cost.cost(&state.x)?;
    let final_grad_norm = exp.cost.true_gradient(&state.x)?.norm();
    Ok(ExperimentTrace {
        config: config.clone(),
        records,
        final_x: state.x,
        final_cost,
        final_grad_norm,
        diverged_at,
    })
}
