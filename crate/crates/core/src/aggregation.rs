//! Choice functions that turn `n` proposed vectors into one update vector.
//!
//! | Rule | Selects | Tolerates a Byzantine worker |
//! |------|---------|------------------------------|
//! | [`average`] / [`linear_combination`] | nothing (linear) | no |
//! | [`sq_dist_medoid_select`] | one input vector | no, two colluders suffice |
//! | [`krum_select`] | one input vector | yes, for `2f + 2 < n` |
//! | [`multi_krum_select`] | `m` input vectors, averaged | yes, for `n - m > 2f + 2` |
//!
//! Worker ids are 1-based. Every tie (equal neighbor distance or equal score)
//! goes to the smaller worker id, so all rules are total and deterministic.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::vector::{sq_distance, GradientVector};

/// The `n` labeled proposals handed to a choice function, plus the declared
/// Byzantine bound `f`.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregationInput<T: Scalar> {
    entries: Vec<(usize, GradientVector<T>)>,
    f: usize,
}

impl<T: Scalar> AggregationInput<T> {
    /// Validates that ids are exactly `{1, ..., n}` and all dimensions agree.
    pub fn new(entries: Vec<(usize, GradientVector<T>)>, f: usize) -> Result<Self> {
        let n = entries.len();
        if n == 0 {
            return Err(Error::InvalidInput("aggregation needs at least one vector".into()));
        }
        let dim = entries[0].1.dim();
        let mut seen = vec![false; n];
        for (id, v) in &entries {
            if *id == 0 || *id > n || seen[*id - 1] {
                return Err(Error::InvalidInput(format!(
                    "worker ids must be exactly 1..={n}, each once; offending id {id}"
                )));
            }
            seen[*id - 1] = true;
            v.ensure_dim(dim)?;
            if !v.is_finite() {
                return Err(Error::InvalidInput(format!("vector of worker {id} is not finite")));
            }
        }
        Ok(Self { entries, f })
    }

    /// Labels `vectors` with ids `1..=n` in order.
    pub fn from_vectors(vectors: Vec<GradientVector<T>>, f: usize) -> Result<Self> {
        Self::new(vectors.into_iter().enumerate().map(|(k, v)| (k + 1, v)).collect(), f)
    }

    pub fn n(&self) -> usize {
        self.entries.len()
    }

    pub fn f(&self) -> usize {
        self.f
    }

    pub fn dim(&self) -> usize {
        self.entries[0].1.dim()
    }

    pub fn entries(&self) -> &[(usize, GradientVector<T>)] {
        &self.entries
    }

    /// Vector proposed by `worker_id`.
    pub fn vector_of(&self, worker_id: usize) -> Option<&GradientVector<T>> {
        self.entries.iter().find(|(id, _)| *id == worker_id).map(|(_, v)| v)
    }

    /// Checks the Krum validity precondition `2f + 2 < n`.
    pub fn require_krum(&self) -> Result<()> {
        check_krum(self.n(), self.f)
    }
}

pub(crate) fn check_krum(n: usize, f: usize) -> Result<()> {
    if 2 * f + 2 < n {
        Ok(())
    } else {
        Err(Error::Precondition {
            rule: "krum",
            condition: "2f+2 < n",
            n,
            f,
            extra: None,
        })
    }
}

pub(crate) fn check_multi_krum(n: usize, f: usize, m: usize) -> Result<()> {
    if m >= 1 && n > m && n - m > 2 * f + 2 {
        Ok(())
    } else {
        Err(Error::Precondition {
            rule: "multi-krum",
            condition: "n-m > 2f+2 and m >= 1",
            n,
            f,
            extra: Some(format!(", m={m}")),
        })
    }
}

/// Krum score of one worker: the sum of squared distances to its `n - f - 2`
/// closest peers. `neighbor_ids` is ordered from closest to farthest.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KrumScore<T: Scalar> {
    pub worker_id: usize,
    pub score: T,
    pub neighbor_ids: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectionResult<T: Scalar> {
    /// Winners in selection order. Empty for linear rules.
    pub selected_ids: Vec<usize>,
    pub output: GradientVector<T>,
    /// Krum scores of the (first) selection round; empty for rules without scores.
    pub scores: Vec<KrumScore<T>>,
}

/// Symmetric `n x n` matrix of squared distances, indexed by entry position.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix<T> {
    n: usize,
    values: Vec<T>,
}

impl<T: Copy> DistanceMatrix<T> {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.values[i * self.n..(i + 1) * self.n]
    }
}

/// Squared distances between every pair of proposals. Each unordered pair is
/// computed once and mirrored, so the matrix is exactly symmetric with a zero
/// diagonal.
pub fn pairwise_sq_distances<T: Scalar>(input: &AggregationInput<T>) -> DistanceMatrix<T> {
    let n = input.n();
    let mut values = vec![T::zero(); n * n];
    for i in 0..n {
        let vi = input.entries[i].1.as_slice();
        for j in (i + 1)..n {
            let d = sq_distance(vi, input.entries[j].1.as_slice());
            values[i * n + j] = d;
            values[j * n + i] = d;
        }
    }
    DistanceMatrix { n, values }
}

/// Scores of the workers at `members` (positions into the matrix), each
/// restricted to neighbors inside `members`.
fn scores_within<T: Scalar>(
    ids: &[usize],
    dist: &DistanceMatrix<T>,
    members: &[usize],
    f: usize,
) -> Vec<KrumScore<T>> {
    let k = members.len() - f - 2;
    let mut others: Vec<(T, usize, usize)> = Vec::with_capacity(members.len());
    members
        .iter()
        .map(|&i| {
            others.clear();
            others.extend(
                members
                    .iter()
                    .filter(|&&j| j != i)
                    .map(|&j| (dist.get(i, j), ids[j], j)),
            );
            let by_distance_then_id =
                |a: &(T, usize, usize), b: &(T, usize, usize)| cmp_scalar(a.0, b.0).then(a.1.cmp(&b.1));
            if k < others.len() {
                others.select_nth_unstable_by(k - 1, by_distance_then_id);
                others.truncate(k);
            }
            others.sort_unstable_by(by_distance_then_id);
            let score = others.iter().fold(T::zero(), |acc, e| acc + e.0);
            KrumScore {
                worker_id: ids[i],
                score,
                neighbor_ids: others.iter().map(|e| e.1).collect(),
            }
        })
        .collect()
}

fn cmp_scalar<T: Scalar>(a: T, b: T) -> Ordering {
    // Inputs are finite, so partial_cmp is total here.
    a.partial_cmp(&b).unwrap_or(Ordering::Equal)
}

/// Index into `scores` of the minimal score, ties to the smaller worker id.
fn argmin_score<T: Scalar>(scores: &[KrumScore<T>]) -> usize {
    let mut best = 0;
    for (k, s) in scores.iter().enumerate().skip(1) {
        match cmp_scalar(s.score, scores[best].score) {
            Ordering::Less => best = k,
            Ordering::Equal if s.worker_id < scores[best].worker_id => best = k,
            _ => {}
        }
    }
    best
}

fn ids_of<T: Scalar>(input: &AggregationInput<T>) -> Vec<usize> {
    input.entries.iter().map(|(id, _)| *id).collect()
}

/// Krum score of every worker, in input order.
pub fn krum_scores<T: Scalar>(input: &AggregationInput<T>) -> Result<Vec<KrumScore<T>>> {
    input.require_krum()?;
    let dist = pairwise_sq_distances(input);
    let members: Vec<usize> = (0..input.n()).collect();
    Ok(scores_within(&ids_of(input), &dist, &members, input.f))
}

/// Krum: returns, unchanged, the proposal with the smallest score.
pub fn krum_select<T: Scalar>(input: &AggregationInput<T>) -> Result<SelectionResult<T>> {
    let scores = krum_scores(input)?;
    let best = argmin_score(&scores);
    Ok(SelectionResult {
        selected_ids: vec![scores[best].worker_id],
        output: input.entries[best].1.clone(),
        scores,
    })
}

/// m-Krum: runs Krum `m` times, removing each winner, and averages the
/// winners. `f` stays fixed while the candidate set shrinks.
pub fn multi_krum_select<T: Scalar>(
    input: &AggregationInput<T>,
    m: usize,
) -> Result<SelectionResult<T>> {
    check_multi_krum(input.n(), input.f, m)?;
    let ids = ids_of(input);
    let dist = pairwise_sq_distances(input);
    let mut remaining: Vec<usize> = (0..input.n()).collect();
    let mut winners = Vec::with_capacity(m);
    let mut first_scores = Vec::new();
    for round in 0..m {
        let scores = scores_within(&ids, &dist, &remaining, input.f);
        let best = argmin_score(&scores);
        winners.push(remaining.remove(best));
        if round == 0 {
            first_scores = scores;
        }
    }
    let output = mean_of(winners.iter().map(|&pos| &input.entries[pos].1));
    Ok(SelectionResult {
        selected_ids: winners.iter().map(|&pos| ids[pos]).collect(),
        output,
        scores: first_scores,
    })
}

/// Arithmetic mean, summed in iteration order starting from the first vector.
pub(crate) fn mean_of<'a, T: Scalar>(
    mut vectors: impl Iterator<Item = &'a GradientVector<T>>,
) -> GradientVector<T> {
    let first = vectors.next().expect("mean of an empty set");
    let mut acc = first.clone();
    let mut count = 1usize;
    for v in vectors {
        acc.add_assign(v);
        count += 1;
    }
    if count == 1 {
        acc
    } else {
        let c = T::count(count);
        GradientVector::from_raw(acc.as_slice().iter().map(|&a| a / c).collect())
    }
}

/// Component-wise mean of all proposals.
pub fn average<T: Scalar>(input: &AggregationInput<T>) -> GradientVector<T> {
    mean_of(input.entries.iter().map(|(_, v)| v))
}

/// `sum_i weights[i] * V_i`, where `weights` is indexed by worker id - 1.
pub fn linear_combination<T: Scalar>(
    input: &AggregationInput<T>,
    weights: &[T],
) -> Result<GradientVector<T>> {
    if weights.len() != input.n() {
        return Err(Error::InvalidInput(format!(
            "expected {} weights, got {}",
            input.n(),
            weights.len()
        )));
    }
    if let Some(k) = weights.iter().position(|w| *w == T::zero() || !w.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "weight for worker {} must be finite and non-zero",
            k + 1
        )));
    }
    let mut acc = GradientVector::zeros(input.dim());
    for (id, v) in &input.entries {
        acc = acc.axpy(weights[id - 1], v);
    }
    Ok(acc)
}

/// Selects the proposal minimizing the total squared distance to all
/// proposals. Two colluding workers can always win this rule.
pub fn sq_dist_medoid_select<T: Scalar>(input: &AggregationInput<T>) -> SelectionResult<T> {
    let dist = pairwise_sq_distances(input);
    let mut best = 0;
    let mut best_sum = T::infinity();
    for i in 0..input.n() {
        let sum = dist.row(i).iter().fold(T::zero(), |acc, &d| acc + d);
        let better = match cmp_scalar(sum, best_sum) {
            Ordering::Less => true,
            Ordering::Equal => input.entries[i].0 < input.entries[best].0,
            Ordering::Greater => false,
        };
        if better {
            best = i;
            best_sum = sum;
        }
    }
    SelectionResult {
        selected_ids: vec![input.entries[best].0],
        output: input.entries[best].1.clone(),
        scores: Vec::new(),
    }
}

/// The resilience constant
/// `eta(n, f) = sqrt(2 (n - f + (f (n-f-2) + f^2 (n-f-1)) / (n-2f-2)))`.
pub fn eta<T: Scalar>(n: usize, f: usize) -> Result<T> {
    if 2 * f + 2 >= n {
        return Err(Error::Precondition {
            rule: "eta(n,f)",
            condition: "2f+2 < n",
            n,
            f,
            extra: None,
        });
    }
    let (nn, ff) = (T::count(n), T::count(f));
    let one = T::one();
    let two = one + one;
    let numerator = ff * (nn - ff - two) + ff * ff * (nn - ff - one);
    let denominator = nn - two * ff - two;
    Ok((two * (nn - ff + numerator / denominator)).sqrt())
}

/// Outcome of evaluating `sin(alpha) = eta(n,f) * sqrt(d) * sigma / ||g||`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ResilienceAngle<T> {
    /// The gradient is large enough: the guarantee holds with this `sin(alpha)`.
    Guaranteed { sin_alpha: T },
    /// `eta * sqrt(d) * sigma >= ||g||`: the flat-basin region, where no
    /// angle guarantee is available. Carries the ratio that would have been
    /// `sin(alpha)`.
    OutsideGuarantee { ratio: T },
}

impl<T: Copy> ResilienceAngle<T> {
    /// The computed ratio, whichever side of 1 it falls on.
    pub fn ratio(&self) -> T {
        match *self {
            ResilienceAngle::Guaranteed { sin_alpha } => sin_alpha,
            ResilienceAngle::OutsideGuarantee { ratio } => ratio,
        }
    }

    pub fn is_guaranteed(&self) -> bool {
        matches!(self, ResilienceAngle::Guaranteed { .. })
    }
}

pub fn resilience_angle<T: Scalar>(
    n: usize,
    f: usize,
    d: usize,
    sigma: T,
    grad_norm: T,
) -> Result<ResilienceAngle<T>> {
    let eta = eta::<T>(n, f)?;
    if !(grad_norm > T::zero()) || !grad_norm.is_finite() {
        return Err(Error::InvalidInput(format!(
            "gradient norm must be positive and finite, got {grad_norm}"
        )));
    }
    if !(sigma >= T::zero()) {
        return Err(Error::InvalidInput(format!("sigma must be non-negative, got {sigma}")));
    }
    let ratio = eta * T::count(d).sqrt() * sigma / grad_norm;
    Ok(if ratio < T::one() {
        ResilienceAngle::Guaranteed { sin_alpha: ratio }
    } else {
        ResilienceAngle::OutsideGuarantee { ratio }
    })
}

/// Choice function selector, as it appears in experiment configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Rule {
    Average,
    Linear { weights: Vec<f64> },
    Medoid,
    Krum,
    MultiKrum { m: usize },
}

impl Rule {
    pub fn name(&self) -> &'static str {
        match self {
            Rule::Average => "average",
            Rule::Linear { .. } => "linear",
            Rule::Medoid => "medoid",
            Rule::Krum => "krum",
            Rule::MultiKrum { .. } => "multi_krum",
        }
    }

    /// Rule-specific preconditions on `(n, f)`.
    pub fn validate(&self, n: usize, f: usize) -> Result<()> {
        match self {
            Rule::Average | Rule::Medoid => Ok(()),
            Rule::Linear { weights } => {
                if weights.len() != n {
                    return Err(Error::config(
                        "rule.linear.weights",
                        format!("expected n={n} weights, got {}", weights.len()),
                    ));
                }
                if let Some(k) = weights.iter().position(|w| *w == 0.0 || !w.is_finite()) {
                    return Err(Error::config(
                        "rule.linear.weights",
                        format!("weight {k} must be finite and non-zero"),
                    ));
                }
                Ok(())
            }
            Rule::Krum => check_krum(n, f),
            Rule::MultiKrum { m } => check_multi_krum(n, f, *m),
        }
    }

    /// Weights of the linear combination this rule computes, if it is linear.
    pub fn linear_weights(&self, n: usize) -> Option<Vec<f64>> {
        match self {
            Rule::Average => Some(vec![1.0 / n as f64; n]),
            Rule::Linear { weights } => Some(weights.clone()),
            _ => None,
        }
    }

    pub fn aggregate<T: Scalar>(&self, input: &AggregationInput<T>) -> Result<SelectionResult<T>> {
        let linear = |output| SelectionResult {
            selected_ids: Vec::new(),
            output,
            scores: Vec::new(),
        };
        match self {
            Rule::Average => Ok(linear(average(input))),
            Rule::Linear { weights } => {
                let w: Vec<T> = weights.iter().map(|&w| T::lit(w)).collect();
                linear_combination(input, &w).map(linear)
            }
            Rule::Medoid => Ok(sq_dist_medoid_select(input)),
            Rule::Krum => krum_select(input),
            Rule::MultiKrum { m } => multi_krum_select(input, *m),
        }
    }
}
