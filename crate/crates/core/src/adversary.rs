//! Byzantine worker strategies.
//!
//! Byzantine workers see everything: every correct proposal of the round,
//! the current parameter vector, the true gradient, the step size and the
//! aggregation rule. Each strategy is a pure function of that view, its
//! parameters and (for randomized attacks) a caller-supplied stream.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::aggregation::{mean_of, Rule};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::vector::GradientVector;

/// Everything a Byzantine worker knows in one round.
#[derive(Clone, Debug, PartialEq)]
pub struct AdversaryView<T: Scalar> {
    pub round: u64,
    pub parameter_vector: GradientVector<T>,
    /// Proposals of the correct workers, labeled by worker id.
    pub correct_vectors: Vec<(usize, GradientVector<T>)>,
    pub true_gradient: Option<GradientVector<T>>,
    pub rule: Rule,
    pub gamma: Option<f64>,
}

impl<T: Scalar> AdversaryView<T> {
    pub fn new(
        round: u64,
        parameter_vector: GradientVector<T>,
        correct_vectors: Vec<(usize, GradientVector<T>)>,
        rule: Rule,
    ) -> Result<Self> {
        let view = Self {
            round,
            parameter_vector,
            correct_vectors,
            true_gradient: None,
            rule,
            gamma: None,
        };
        view.validate()?;
        Ok(view)
    }

    pub fn with_true_gradient(mut self, g: GradientVector<T>) -> Result<Self> {
        g.ensure_dim(self.dim())?;
        self.true_gradient = Some(g);
        Ok(self)
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = Some(gamma);
        self
    }

    fn validate(&self) -> Result<()> {
        if self.correct_vectors.is_empty() {
            return Err(Error::InvalidView("no correct vectors".into()));
        }
        let d = self.dim();
        for (_, v) in &self.correct_vectors {
            v.ensure_dim(d)?;
        }
        if let Some(g) = &self.true_gradient {
            g.ensure_dim(d)?;
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.parameter_vector.dim()
    }

    pub fn correct_mean(&self) -> GradientVector<T> {
        mean_of(self.correct_vectors.iter().map(|(_, v)| v))
    }
}

/// Attack strategy with its parameters, as it appears in experiment configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum AttackSpec {
    /// Forces a linear rule to output a target: either a fixed `target`
    /// vector or `gradient_multiple * grad Q(x_t)`.
    OmniscientLinear {
        #[serde(default)]
        target: Option<Vec<f64>>,
        #[serde(default)]
        gradient_multiple: Option<f64>,
    },
    /// `f - 1` workers at `remote_magnitude * direction`, one at the
    /// barycenter of the other proposals. `direction` defaults to `e_1`.
    CollusionMedoid {
        remote_magnitude: f64,
        #[serde(default)]
        direction: Option<Vec<f64>>,
    },
    SignFlip { kappa: f64 },
    /// `center` defaults to the origin.
    GaussianNoise {
        #[serde(default)]
        center: Option<Vec<f64>>,
        spread: f64,
    },
    Silence,
}

impl AttackSpec {
    pub fn name(&self) -> &'static str {
        match self {
            AttackSpec::OmniscientLinear { .. } => "omniscient_linear",
            AttackSpec::CollusionMedoid { .. } => "collusion_medoid",
            AttackSpec::SignFlip { .. } => "sign_flip",
            AttackSpec::GaussianNoise { .. } => "gaussian_noise",
            AttackSpec::Silence => "silence",
        }
    }

    /// Checks parameter completeness for dimension `d` and `f` Byzantine workers.
    pub fn validate(&self, d: usize, f: usize) -> Result<()> {
        let dim_check = |key: &str, v: &[f64]| -> Result<()> {
            if v.len() != d {
                return Err(Error::config(key, format!("expected {d} components, got {}", v.len())));
            }
            if v.iter().any(|c| !c.is_finite()) {
                return Err(Error::config(key, "components must be finite"));
            }
            Ok(())
        };
        match self {
            AttackSpec::OmniscientLinear { target, gradient_multiple } => match (target, gradient_multiple) {
                (Some(t), None) => dim_check("attack.target", t),
                (None, Some(s)) if s.is_finite() => Ok(()),
                _ => Err(Error::config(
                    "attack.target",
                    "exactly one of `target` or a finite `gradient_multiple` is required",
                )),
            },
            AttackSpec::CollusionMedoid { remote_magnitude, direction } => {
                if !(*remote_magnitude >= 0.0) || !remote_magnitude.is_finite() {
                    return Err(Error::config(
                        "attack.remote_magnitude",
                        format!("must be finite and >= 0, got {remote_magnitude}"),
                    ));
                }
                if f > 0 && f < 2 {
                    return Err(Error::config("attack.variant", "collusion_medoid needs f >= 2"));
                }
                if let Some(dir) = direction {
                    dim_check("attack.direction", dir)?;
                    let norm = dir.iter().map(|c| c * c).sum::<f64>().sqrt();
                    if (norm - 1.0).abs() > 1e-12 {
                        return Err(Error::config("attack.direction", format!("must have unit norm, got {norm}")));
                    }
                }
                Ok(())
            }
            AttackSpec::SignFlip { kappa } if !(*kappa > 0.0) || !kappa.is_finite() => {
                Err(Error::config("attack.kappa", format!("must be > 0, got {kappa}")))
            }
            AttackSpec::GaussianNoise { center, spread } => {
                if !(*spread >= 0.0) || !spread.is_finite() {
                    return Err(Error::config("attack.spread", format!("must be >= 0, got {spread}")));
                }
                if let Some(c) = center {
                    dim_check("attack.center", c)?;
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// What one Byzantine worker sends. A silent worker sends nothing and the
/// server substitutes the zero vector.
#[derive(Clone, Debug, PartialEq)]
pub enum Proposal<T: Scalar> {
    Vector(GradientVector<T>),
    Silent,
}

impl<T: Scalar> Proposal<T> {
    /// The vector the server aggregates.
    pub fn resolve(self, dim: usize) -> GradientVector<T> {
        match self {
            Proposal::Vector(v) => v,
            Proposal::Silent => GradientVector::zeros(dim),
        }
    }
}

/// Crafts the single Byzantine vector that makes `sum_i weights[i] * V_i`
/// equal `target` exactly:
/// `V_b = (1/w_b) target - sum_{i != b} (w_i / w_b) V_i`.
///
/// `weights` is indexed by worker id - 1, and the view must hold the
/// vectors of every other worker.
pub fn omniscient_linear_attack<T: Scalar>(
    view: &AdversaryView<T>,
    weights: &[T],
    byz_id: usize,
    target: &GradientVector<T>,
) -> Result<GradientVector<T>> {
    let n = weights.len();
    if byz_id == 0 || byz_id > n {
        return Err(Error::InvalidView(format!("byzantine id {byz_id} outside 1..={n}")));
    }
    target.ensure_dim(view.dim())?;
    let mut covered = vec![false; n];
    for (id, _) in &view.correct_vectors {
        if *id == 0 || *id > n || *id == byz_id || covered[id - 1] {
            return Err(Error::InvalidView(format!("unexpected or repeated worker id {id}")));
        }
        covered[id - 1] = true;
    }
    if view.correct_vectors.len() != n - 1 {
        return Err(Error::InvalidView(format!(
            "need the other {} vectors, have {}",
            n - 1,
            view.correct_vectors.len()
        )));
    }
    let w_b = weights[byz_id - 1];
    if w_b == T::zero() {
        return Err(Error::InvalidInput(format!("weight of worker {byz_id} must be non-zero")));
    }
    let mut crafted = target.scale(T::one() / w_b);
    for (id, v) in &view.correct_vectors {
        crafted = crafted.axpy(-(weights[id - 1] / w_b), v);
    }
    Ok(crafted)
}

/// Two or more colluders defeating the squared-distance medoid: `f - 1`
/// copies of `remote_magnitude * direction`, then one vector `b` at the
/// barycenter of the other `n - 1` proposals. `b` is then the barycenter of
/// all `n` proposals, hence the medoid winner whenever it differs from
/// every other proposal.
pub fn collusion_medoid_attack<T: Scalar>(
    view: &AdversaryView<T>,
    f: usize,
    remote_magnitude: T,
    direction: &GradientVector<T>,
) -> Result<Vec<GradientVector<T>>> {
    if f < 2 {
        return Err(Error::AttackInapplicable(format!(
            "collusion needs at least two Byzantine workers, got f={f}"
        )));
    }
    direction.ensure_dim(view.dim())?;
    if (direction.norm() - T::one()).abs() > T::lit(1e-12).max(T::epsilon() * T::lit(4.0)) {
        return Err(Error::InvalidInput(format!(
            "direction must have unit norm, got {}",
            direction.norm()
        )));
    }
    let remote = direction.scale(remote_magnitude);
    let others = view.correct_vectors.len() + f - 1;
    let mut sum = GradientVector::zeros(view.dim());
    for (_, v) in &view.correct_vectors {
        sum.add_assign(v);
    }
    for _ in 0..f - 1 {
        sum.add_assign(&remote);
    }
    let barycenter = sum.scale(T::one() / T::count(others));
    let mut out = vec![remote; f - 1];
    out.push(barycenter);
    Ok(out)
}

/// Remote magnitude above which the colluders' barycenter vector is strictly
/// separated from a correct cluster of the given center norm and radius, so
/// the medoid rule provably returns it.
pub fn collusion_dominance_threshold<T: Scalar>(
    n: usize,
    f: usize,
    correct_center_norm: T,
    correct_radius: T,
) -> Result<T> {
    if f < 2 || n <= f {
        return Err(Error::AttackInapplicable(format!("needs 2 <= f < n, got n={n}, f={f}")));
    }
    Ok(correct_center_norm + correct_radius * T::count(n - 1) / T::count(f - 1))
}

/// `f` copies of `-kappa * mean(correct)`.
pub fn sign_flip_attack<T: Scalar>(view: &AdversaryView<T>, f: usize, kappa: T) -> Result<Vec<GradientVector<T>>> {
    if !(kappa > T::zero()) {
        return Err(Error::InvalidInput(format!("kappa must be positive, got {kappa}")));
    }
    Ok(vec![view.correct_mean().scale(-kappa); f])
}

/// `f` zero vectors: what the server records for workers that stay silent.
pub fn silence_attack<T: Scalar>(view: &AdversaryView<T>, f: usize) -> Vec<GradientVector<T>> {
    vec![GradientVector::zeros(view.dim()); f]
}

/// `f` i.i.d. draws of `center + spread * N(0, I)`.
pub fn gaussian_noise_attack<T: Scalar, R: Rng + ?Sized>(
    view: &AdversaryView<T>,
    f: usize,
    center: &GradientVector<T>,
    spread: T,
    rng: &mut R,
) -> Result<Vec<GradientVector<T>>> {
    center.ensure_dim(view.dim())?;
    if !(spread >= T::zero()) {
        return Err(Error::InvalidInput(format!("spread must be non-negative, got {spread}")));
    }
    Ok((0..f)
        .map(|_| {
            GradientVector::from_raw(
                center
                    .as_slice()
                    .iter()
                    .map(|&c| c + spread * T::standard_normal(rng))
                    .collect(),
            )
        })
        .collect())
}

fn to_vector<T: Scalar>(key: &str, values: &[f64]) -> Result<GradientVector<T>> {
    GradientVector::new(values.iter().map(|&c| T::lit(c)).collect())
        .map_err(|e| Error::config(key, e.to_string()))
}

/// Runs `spec` for the Byzantine workers `byz_ids` (ascending), returning
/// one proposal per id in the same order.
///
/// For `omniscient_linear` the attacker assumes the rule's own weights when
/// the rule is linear and uniform weights otherwise; all but the last
/// Byzantine worker propose the target and the last one solves for the
/// remainder.
pub fn craft<T: Scalar, R: Rng + ?Sized>(
    spec: &AttackSpec,
    view: &AdversaryView<T>,
    byz_ids: &[usize],
    rng: &mut R,
) -> Result<Vec<Proposal<T>>> {
    let f = byz_ids.len();
    if f == 0 {
        return Ok(Vec::new());
    }
    let d = view.dim();
    let vectors = match spec {
        AttackSpec::OmniscientLinear { target, gradient_multiple } => {
            let target = match (target, gradient_multiple) {
                (Some(t), _) => to_vector("attack.target", t)?,
                (None, Some(s)) => view
                    .true_gradient
                    .as_ref()
                    .ok_or_else(|| Error::InvalidView("gradient-relative target needs the true gradient".into()))?
                    .scale(T::lit(*s)),
                (None, None) => return Err(Error::config("attack.target", "missing target")),
            };
            let n = view.correct_vectors.len() + f;
            let weights: Vec<T> = view
                .rule
                .linear_weights(n)
                .unwrap_or_else(|| vec![1.0 / n as f64; n])
                .into_iter()
                .map(T::lit)
                .collect();
            let (last, helpers) = byz_ids.split_last().expect("f > 0");
            let mut extended = view.clone();
            extended
                .correct_vectors
                .extend(helpers.iter().map(|&id| (id, target.clone())));
            let crafted = omniscient_linear_attack(&extended, &weights, *last, &target)?;
            let mut out = vec![target; f - 1];
            out.push(crafted);
            out
        }
        AttackSpec::CollusionMedoid { remote_magnitude, direction } => {
            let dir = match direction {
                Some(dir) => to_vector("attack.direction", dir)?,
                None => GradientVector::basis(d, 0, T::one()),
            };
            collusion_medoid_attack(view, f, T::lit(*remote_magnitude), &dir)?
        }
        AttackSpec::SignFlip { kappa } => sign_flip_attack(view, f, T::lit(*kappa))?,
        AttackSpec::GaussianNoise { center, spread } => {
            let center = match center {
                Some(c) => to_vector("attack.center", c)?,
                None => GradientVector::zeros(d),
            };
            gaussian_noise_attack(view, f, &center, T::lit(*spread), rng)?
        }
        AttackSpec::Silence => return Ok(vec![Proposal::Silent; f]),
    };
    Ok(vectors.into_iter().map(Proposal::Vector).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::{
        average, krum_select, linear_combination, sq_dist_medoid_select, AggregationInput,
    };
    use crate::rng::stream;

    fn v(c: &[f64]) -> GradientVector<f64> {
        GradientVector::new(c.to_vec()).unwrap()
    }

    fn view(correct: Vec<(usize, GradientVector<f64>)>) -> AdversaryView<f64> {
        let d = correct[0].1.dim();
        AdversaryView::new(0, GradientVector::zeros(d), correct, Rule::Average).unwrap()
    }

    #[test]
    fn linear_attack_three_workers() {
        let third = 1.0 / 3.0;
        let vw = view(vec![(1, v(&[1.0, 0.0])), (2, v(&[0.0, 1.0]))]);
        let b = omniscient_linear_attack(&vw, &[third; 3], 3, &v(&[5.0, 5.0])).unwrap();
        assert!((b[0] - 14.0).abs() < 1e-12 && (b[1] - 14.0).abs() < 1e-12);
        let all = AggregationInput::from_vectors(vec![v(&[1.0, 0.0]), v(&[0.0, 1.0]), b], 1).unwrap();
        let out = average(&all);
        assert!((out[0] - 5.0).abs() < 1e-12 && (out[1] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn mimicking_the_correct_worker() {
        let vw = view(vec![(1, v(&[2.0, -3.0]))]);
        let b = omniscient_linear_attack(&vw, &[0.5, 0.5], 2, &v(&[2.0, -3.0])).unwrap();
        assert_eq!(b.as_slice(), &[2.0, -3.0]);
    }

    #[test]
    fn omniscient_needs_every_other_vector() {
        let vw = view(vec![(1, v(&[1.0]))]);
        assert!(matches!(
            omniscient_linear_attack(&vw, &[1.0, 1.0, 1.0], 3, &v(&[0.0])),
            Err(Error::InvalidView(_))
        ));
        assert!(omniscient_linear_attack(&vw, &[1.0, 0.0], 2, &v(&[0.0])).is_err());
    }

    #[test]
    fn figure_instance_medoid_falls_krum_holds() {
        let d = 3;
        let correct: Vec<_> = (1..=7).map(|id| (id, GradientVector::zeros(d))).collect();
        let vw = view(correct.clone());
        let byz = collusion_medoid_attack(&vw, 2, 70.0, &GradientVector::basis(d, 0, 1.0)).unwrap();
        assert_eq!(byz[0].as_slice(), &[70.0, 0.0, 0.0]);
        assert_eq!(byz[1].as_slice(), &[8.75, 0.0, 0.0]);
        let mut all: Vec<_> = correct.into_iter().map(|(_, v)| v).collect();
        all.extend(byz);
        let input = AggregationInput::from_vectors(all, 2).unwrap();
        assert_eq!(sq_dist_medoid_select(&input).selected_ids, vec![9]);
        let k = krum_select(&input).unwrap();
        assert!(k.selected_ids[0] <= 7);
    }

    #[test]
    fn collusion_degenerate_and_inapplicable() {
        let vw = view(vec![(1, v(&[1.0, 1.0])), (2, v(&[3.0, 1.0]))]);
        let dir = v(&[0.0, 1.0]);
        let out = collusion_medoid_attack(&vw, 2, 0.0, &dir).unwrap();
        assert_eq!(out[1].as_slice(), &[4.0 / 3.0, 2.0 / 3.0]);
        assert!(matches!(
            collusion_medoid_attack(&vw, 1, 5.0, &dir),
            Err(Error::AttackInapplicable(_))
        ));
        assert!(collusion_medoid_attack(&vw, 2, 5.0, &v(&[0.0, 2.0])).is_err());
    }

    #[test]
    fn sign_flip_and_silence() {
        let vw = view(vec![(1, v(&[1.0, 2.0])), (2, v(&[3.0, 2.0]))]);
        let out = sign_flip_attack(&vw, 2, 1.0).unwrap();
        assert_eq!(out, vec![v(&[-2.0, -2.0]); 2]);
        let out = sign_flip_attack(&vw, 1, 10.0).unwrap();
        assert!((out[0].norm() - 10.0 * vw.correct_mean().norm()).abs() < 1e-12);
        assert!(sign_flip_attack(&vw, 1, 0.0).is_err());

        let zero = view(vec![(1, v(&[1.0, -1.0])), (2, v(&[-1.0, 1.0]))]);
        assert_eq!(sign_flip_attack(&zero, 1, 3.0).unwrap()[0].as_slice(), &[-0.0, -0.0]);

        let vw4 = view(vec![(1, v(&[1.0, 2.0, 3.0, 4.0]))]);
        assert_eq!(silence_attack(&vw4, 3), vec![GradientVector::zeros(4); 3]);
    }

    #[test]
    fn silence_shrinks_the_average() {
        let correct = vec![(1, v(&[3.0, 6.0])), (2, v(&[3.0, 6.0])), (3, v(&[3.0, 6.0]))];
        let vw = view(correct.clone());
        let mut all: Vec<_> = correct.into_iter().map(|(_, v)| v).collect();
        all.extend(silence_attack(&vw, 2));
        let avg = average(&AggregationInput::from_vectors(all, 2).unwrap());
        assert_eq!(avg.as_slice(), &[3.0 * 3.0 / 5.0, 6.0 * 3.0 / 5.0]);
    }

    #[test]
    fn gaussian_noise_is_replayable() {
        let vw = view(vec![(1, v(&[0.0, 0.0]))]);
        let center = v(&[1.0, -1.0]);
        let exact = gaussian_noise_attack(&vw, 3, &center, 0.0, &mut stream(1)).unwrap();
        assert_eq!(exact, vec![center.clone(); 3]);
        let a = gaussian_noise_attack(&vw, 3, &center, 1.0, &mut stream(9)).unwrap();
        let b = gaussian_noise_attack(&vw, 3, &center, 1.0, &mut stream(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn craft_omniscient_with_several_byzantines() {
        let correct = vec![(1, v(&[1.0, 0.5])), (2, v(&[-2.0, 0.0])), (3, v(&[0.3, 0.3]))];
        let rule = Rule::Linear { weights: vec![0.1, 0.2, 0.3, 0.4, -0.5] };
        let vw = AdversaryView::new(0, v(&[0.0, 0.0]), correct.clone(), rule).unwrap();
        let spec = AttackSpec::OmniscientLinear { target: Some(vec![7.0, -7.0]), gradient_multiple: None };
        let out = craft(&spec, &vw, &[4, 5], &mut stream(0)).unwrap();
        let mut all: Vec<_> = correct.into_iter().map(|(_, v)| v).collect();
        all.extend(out.into_iter().map(|p| p.resolve(2)));
        let input = AggregationInput::from_vectors(all, 2).unwrap();
        let got = linear_combination(&input, &[0.1, 0.2, 0.3, 0.4, -0.5]).unwrap();
        assert!((got[0] - 7.0).abs() < 1e-9 && (got[1] + 7.0).abs() < 1e-9);
    }

    #[test]
    fn attack_spec_json() {
        let spec: AttackSpec = serde_json::from_str(r#"{"variant":"sign_flip","kappa":10}"#).unwrap();
        assert_eq!(spec, AttackSpec::SignFlip { kappa: 10.0 });
        assert!(serde_json::from_str::<AttackSpec>(r#"{"variant":"sign_flip","kapa":10}"#).is_err());
        let silence: AttackSpec = serde_json::from_str(r#"{"variant":"silence"}"#).unwrap();
        assert_eq!(silence, AttackSpec::Silence);
        assert!(AttackSpec::SignFlip { kappa: -1.0 }.validate(3, 1).is_err());
        assert!(AttackSpec::CollusionMedoid { remote_magnitude: 1.0, direction: Some(vec![0.6, 0.8]) }
            .validate(2, 2)
            .is_ok());
    }
}
