//! Synthetic cost functions, their exact gradients, unbiased noisy gradient
//! estimators and step-size schedules.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::vector::GradientVector;

/// A non-negative, smooth cost `Q` on `R^d`.
#[derive(Clone, Debug, PartialEq)]
pub enum CostFunction<T: Scalar> {
    /// `Q(x) = ||x - x_star||^2 / 2`.
    Quadratic { x_star: GradientVector<T> },
    /// `Q(x) = (1/2N) sum_r (a_r . x - b_r)^2`.
    LeastSquares {
        rows: Vec<GradientVector<T>>,
        targets: Vec<T>,
    },
    /// `Q(x) = sum_k (1 - cos x_k) + lambda ||x||^2`. Non-convex, with
    /// spurious stationary points when `lambda` is small.
    CosineBowl { dim: usize, lambda: T },
}

impl<T: Scalar> CostFunction<T> {
    pub fn quadratic(x_star: GradientVector<T>) -> Self {
        CostFunction::Quadratic { x_star }
    }

    pub fn least_squares(rows: Vec<GradientVector<T>>, targets: Vec<T>) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::InvalidInput("least squares needs at least one row".into()))?;
        let dim = first.dim();
        for r in &rows {
            r.ensure_dim(dim)?;
        }
        if targets.len() != rows.len() {
            return Err(Error::InvalidInput(format!(
                "{} rows but {} targets",
                rows.len(),
                targets.len()
            )));
        }
        if targets.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidInput("targets must be finite".into()));
        }
        Ok(CostFunction::LeastSquares { rows, targets })
    }

    pub fn cosine_bowl(dim: usize, lambda: T) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("dimension must be at least 1".into()));
        }
        if !(lambda >= T::zero()) || !lambda.is_finite() {
            return Err(Error::InvalidInput(format!("lambda must be non-negative, got {lambda}")));
        }
        Ok(CostFunction::CosineBowl { dim, lambda })
    }

    pub fn dim(&self) -> usize {
        match self {
            CostFunction::Quadratic { x_star } => x_star.dim(),
            CostFunction::LeastSquares { rows, .. } => rows[0].dim(),
            CostFunction::CosineBowl { dim, .. } => *dim,
        }
    }

    pub fn cost(&self, x: &GradientVector<T>) -> Result<T> {
        x.ensure_dim(self.dim())?;
        let half = T::lit(0.5);
        Ok(match self {
            CostFunction::Quadratic { x_star } => half * x.sq_distance(x_star),
            CostFunction::LeastSquares { rows, targets } => {
                let sum = rows
                    .iter()
                    .zip(targets)
                    .map(|(a, &b)| {
                        let r = a.dot(x) - b;
                        r * r
                    })
                    .fold(T::zero(), |acc, r2| acc + r2);
                half * sum / T::count(rows.len())
            }
            CostFunction::CosineBowl { lambda, .. } => {
                let bowl = x
                    .as_slice()
                    .iter()
                    .fold(T::zero(), |acc, &xk| acc + (T::one() - xk.cos()));
                bowl + *lambda * x.norm_sq()
            }
        })
    }

    /// Exact gradient of [`CostFunction::cost`].
    pub fn true_gradient(&self, x: &GradientVector<T>) -> Result<GradientVector<T>> {
        x.ensure_dim(self.dim())?;
        Ok(match self {
            CostFunction::Quadratic { x_star } => x.sub(x_star),
            CostFunction::LeastSquares { rows, targets } => {
                let indices = 0..rows.len();
                residual_gradient(rows, targets, x, indices, rows.len())
            }
            CostFunction::CosineBowl { lambda, .. } => {
                let two_lambda = *lambda + *lambda;
                GradientVector::from_raw(
                    x.as_slice().iter().map(|&xk| xk.sin() + two_lambda * xk).collect(),
                )
            }
        })
    }

    /// One draw of an unbiased gradient estimate `G(x, xi)`.
    pub fn estimate_gradient<R: Rng + ?Sized>(
        &self,
        x: &GradientVector<T>,
        estimator: &Estimator,
        rng: &mut R,
    ) -> Result<GradientVector<T>> {
        match (estimator, self) {
            (Estimator::Gaussian { sigma }, _) => {
                let g = self.true_gradient(x)?;
                if *sigma == 0.0 {
                    return Ok(g);
                }
                let s = T::lit(*sigma);
                Ok(GradientVector::from_raw(
                    g.as_slice()
                        .iter()
                        .map(|&gk| gk + s * T::standard_normal(rng))
                        .collect(),
                ))
            }
            (Estimator::Minibatch { batch_size }, CostFunction::LeastSquares { rows, targets }) => {
                x.ensure_dim(self.dim())?;
                let n_rows = rows.len();
                let picks: Vec<usize> = (0..*batch_size).map(|_| rng.random_range(0..n_rows)).collect();
                Ok(residual_gradient(rows, targets, x, picks.into_iter(), *batch_size))
            }
            (Estimator::Minibatch { .. }, _) => Err(Error::UnsupportedCombination(
                "minibatch estimator requires a least_squares cost".into(),
            )),
        }
    }

    /// Monte Carlo estimate of the local deviation `sigma(x)`, defined by
    /// `d sigma(x)^2 = E ||G(x, xi) - grad Q(x)||^2`.
    pub fn local_sigma<R: Rng + ?Sized>(
        &self,
        x: &GradientVector<T>,
        estimator: &Estimator,
        trials: usize,
        rng: &mut R,
    ) -> Result<T> {
        if trials < 2 {
            return Err(Error::InvalidInput(format!("local_sigma needs trials >= 2, got {trials}")));
        }
        let g = self.true_gradient(x)?;
        let mut total = T::zero();
        for _ in 0..trials {
            total = total + self.estimate_gradient(x, estimator, rng)?.sq_distance(&g);
        }
        Ok((total / T::count(trials) / T::count(self.dim())).sqrt())
    }
}

/// `(1/count) sum_{r in picks} a_r (a_r . x - b_r)`.
fn residual_gradient<T: Scalar>(
    rows: &[GradientVector<T>],
    targets: &[T],
    x: &GradientVector<T>,
    picks: impl Iterator<Item = usize>,
    count: usize,
) -> GradientVector<T> {
    let mut acc = GradientVector::zeros(x.dim());
    for r in picks {
        let residual = rows[r].dot(x) - targets[r];
        acc = acc.axpy(residual, &rows[r]);
    }
    acc.scale(T::one() / T::count(count))
}

/// How correct workers sample their gradient estimates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum Estimator {
    /// True gradient plus i.i.d. `N(0, sigma^2)` noise per coordinate.
    Gaussian { sigma: f64 },
    /// Mean residual gradient over `batch_size` rows drawn with replacement.
    Minibatch { batch_size: usize },
}

impl Estimator {
    pub fn validate(&self) -> Result<()> {
        match self {
            Estimator::Gaussian { sigma } if !(*sigma >= 0.0) || !sigma.is_finite() => Err(
                Error::config("estimator.sigma", format!("must be finite and >= 0, got {sigma}")),
            ),
            Estimator::Minibatch { batch_size: 0 } => {
                Err(Error::config("estimator.batch_size", "must be at least 1"))
            }
            _ => Ok(()),
        }
    }
}

/// `gamma_t = gamma0 / (1 + t)^p`, restricted to `p` in `(0.5, 1]`, the range
/// where `sum gamma_t` diverges and `sum gamma_t^2` converges.
pub fn lr_schedule(t: u64, gamma0: f64, p: f64) -> Result<f64> {
    check_exponent(p)?;
    if !(gamma0 > 0.0) || !gamma0.is_finite() {
        return Err(Error::InvalidInput(format!("gamma0 must be positive, got {gamma0}")));
    }
    Ok(gamma0 / (1.0 + t as f64).powf(p))
}

fn check_exponent(p: f64) -> Result<()> {
    if p > 0.5 && p <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidSchedule { p })
    }
}

/// Step-size schedule as configured. `constant` switches to a fixed step,
/// which does not satisfy the convergence conditions and exists for
/// one-step checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub gamma0: f64,
    #[serde(default = "default_exponent")]
    pub p: f64,
    #[serde(default)]
    pub constant: bool,
}

fn default_exponent() -> f64 {
    1.0
}

impl Schedule {
    pub fn decaying(gamma0: f64, p: f64) -> Self {
        Self { gamma0, p, constant: false }
    }

    pub fn constant(gamma0: f64) -> Self {
        Self { gamma0, p: 1.0, constant: true }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma0 > 0.0) || !self.gamma0.is_finite() {
            return Err(Error::config("schedule.gamma0", format!("must be > 0, got {}", self.gamma0)));
        }
        if !self.constant {
            check_exponent(self.p).map_err(|e| Error::config("schedule.p", e.to_string()))?;
        }
        Ok(())
    }

    pub fn gamma(&self, t: u64) -> Result<f64> {
        if self.constant {
            Ok(self.gamma0)
        } else {
            lr_schedule(t, self.gamma0, self.p)
        }
    }
}
