//! Levenberg–Marquardt for small box-constrained least-squares problems,
//! plus a dense linear least-squares solver used for model seeding.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Returned by a residual function when the underlying model blew up.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Diverged;

/// Damping beyond which the solver gives up.
const LAMBDA_MAX: f64 = 1e10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmOptions {
    pub lambda0: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    pub max_iters: usize,
    /// Relative cost decrease below which an accepted step ends the search.
    pub ftol: f64,
    /// Relative step size below which the search ends.
    pub xtol: f64,
    pub fd_rel_step: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Per-parameter magnitude used for finite-difference steps and relative
    /// step tests. Falls back to `|theta0|` when empty.
    #[serde(default)]
    pub scale: Vec<f64>,
}

impl LmOptions {
    /// Defaults with the given bounds.
    pub fn with_bounds(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        Self {
            lambda0: 1e-3,
            lambda_up: 10.0,
            lambda_down: 10.0,
            max_iters: 100,
            ftol: 1e-8,
            xtol: 1e-8,
            fd_rel_step: 1e-6,
            lower,
            upper,
            scale: Vec::new(),
        }
    }

    /// Defaults with no bounds on `n` parameters.
    pub fn unbounded(n: usize) -> Self {
        Self::with_bounds(vec![f64::NEG_INFINITY; n], vec![f64::INFINITY; n])
    }

    fn validate(&self, n: usize) -> Result<()> {
        let bad = |m: &str| Err(Error::Argument(m.to_string()));
        if !(self.lambda0 > 0.0) {
            return bad("lambda0 must be positive");
        }
        if !(self.lambda_up > 1.0 && self.lambda_down > 1.0) {
            return bad("damping factors must exceed 1");
        }
        if !(self.ftol > 0.0 && self.xtol > 0.0 && self.fd_rel_step > 0.0) {
            return bad("tolerances must be positive");
        }
        if self.lower.len() != n || self.upper.len() != n {
            return bad("bounds length must match parameter count");
        }
        if !self.scale.is_empty() && self.scale.len() != n {
            return bad("scale length must match parameter count");
        }
        if self.lower.iter().zip(&self.upper).any(|(l, u)| !(l <= u)) {
            return bad("lower bound exceeds upper bound");
        }
        Ok(())
    }

    /// Effective per-parameter scale.
    fn scales(&self, theta0: &[f64]) -> Vec<f64> {
        (0..theta0.len())
            .map(|i| {
                let s = self.scale.get(i).copied().unwrap_or(theta0[i]).abs();
                if s > 0.0 {
                    s
                } else {
                    let width = self.upper[i] - self.lower[i];
                    if width.is_finite() && width > 0.0 {
                        1e-3 * width
                    } else {
                        1.0
                    }
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LmStatus {
    ConvergedFtol,
    ConvergedXtol,
    MaxIters,
    Singular,
    DivergedResidual,
}

impl LmStatus {
    pub fn is_converged(self) -> bool {
        matches!(self, LmStatus::ConvergedFtol | LmStatus::ConvergedXtol)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmReport {
    pub theta: Vec<f64>,
    /// Final sum of squared residuals (`+inf` if the start point diverged).
    pub cost: f64,
    /// Jacobian evaluations.
    pub iters: usize,
    pub status: LmStatus,
    /// Cost at the start and after every accepted step.
    pub cost_trace: Vec<f64>,
}

fn report(
    theta: Vec<f64>,
    cost: f64,
    iters: usize,
    status: LmStatus,
    cost_trace: Vec<f64>,
) -> Result<LmReport> {
    Ok(LmReport {
        theta,
        cost,
        iters,
        status,
        cost_trace,
    })
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|x| x * x).sum()
}

fn project(theta: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((t, l), u) in theta.iter_mut().zip(lower).zip(upper) {
        *t = t.clamp(*l, *u);
    }
}

/// Forward-difference Jacobian (`n × p`) with step `rel·scale_i`, flipped to
/// a backward step at an upper bound or when the forward point diverges.
pub fn forward_jacobian<F>(
    residual_fn: &F,
    theta: &[f64],
    r0: &[f64],
    steps: &[f64],
    upper: &[f64],
) -> std::result::Result<DMatrix<f64>, Diverged>
where
    F: Fn(&[f64]) -> std::result::Result<Vec<f64>, Diverged>,
{
    let n = r0.len();
    let mut jac = DMatrix::zeros(n, theta.len());
    let mut probe = theta.to_vec();
    for (i, &h0) in steps.iter().enumerate() {
        let forward_ok = theta[i] + h0 <= upper[i];
        let mut attempt = |h: f64| {
            probe[i] = theta[i] + h;
            let r = residual_fn(&probe);
            probe[i] = theta[i];
            r.ok().filter(|r| r.len() == n).map(|r| (r, h))
        };
        let (r, h) = if forward_ok {
            attempt(h0).or_else(|| attempt(-h0))
        } else {
            attempt(-h0).or_else(|| attempt(h0))
        }
        .ok_or(Diverged)?;
        for k in 0..n {
            jac[(k, i)] = (r[k] - r0[k]) / h;
        }
    }
    Ok(jac)
}

/// Minimizes `Σ r(θ)²` by Levenberg–Marquardt with Marquardt's diagonal
/// scaling: each trial step solves `(JᵀJ + λ·diag(JᵀJ)) δ = -Jᵀr` and is
/// projected onto the bounds. Accepted steps divide `λ` by `lambda_down`,
/// rejected ones multiply it by `lambda_up`.
pub fn lm_minimize<F>(residual_fn: F, theta0: &[f64], opts: &LmOptions) -> Result<LmReport>
where
    F: Fn(&[f64]) -> std::result::Result<Vec<f64>, Diverged>,
{
    let p = theta0.len();
    opts.validate(p)?;
    if p == 0 {
        return Err(Error::Argument("no parameters to fit".into()));
    }
    for (i, ((t, l), u)) in theta0.iter().zip(&opts.lower).zip(&opts.upper).enumerate() {
        if !(t >= l && t <= u) {
            return Err(Error::Argument(format!(
                "theta0[{i}] = {t} outside [{l}, {u}]"
            )));
        }
    }
    let scales = opts.scales(theta0);
    let mut theta = theta0.to_vec();

    let Ok(mut r) = residual_fn(&theta) else {
        return report(theta, f64::INFINITY, 0, LmStatus::DivergedResidual, vec![]);
    };
    let mut cost = sum_sq(&r);
    let mut trace = vec![cost];
    let mut lambda = opts.lambda0;

    for iter in 1..=opts.max_iters {
        if cost == 0.0 {
            return report(theta, cost, iter - 1, LmStatus::ConvergedFtol, trace);
        }
        let steps: Vec<f64> = theta
            .iter()
            .zip(&scales)
            .map(|(t, s)| opts.fd_rel_step * t.abs().max(*s))
            .collect();
        let Ok(jac) = forward_jacobian(&residual_fn, &theta, &r, &steps, &opts.upper) else {
            return report(theta, cost, iter, LmStatus::DivergedResidual, trace);
        };
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * DVector::from_column_slice(&r);

        loop {
            let mut a = jtj.clone();
            for i in 0..p {
                a[(i, i)] += lambda * jtj[(i, i)];
            }
            let Some(chol) = a.cholesky() else {
                lambda *= opts.lambda_up;
                if lambda > LAMBDA_MAX {
                    return report(theta, cost, iter, LmStatus::Singular, trace);
                }
                continue;
            };
            let delta = chol.solve(&(-&jtr));
            let mut trial: Vec<f64> = theta.iter().zip(delta.iter()).map(|(t, d)| t + d).collect();
            project(&mut trial, &opts.lower, &opts.upper);

            let rel_step = (0..p)
                .map(|i| (trial[i] - theta[i]).abs() / theta[i].abs().max(scales[i]))
                .fold(0.0, f64::max);
            if rel_step <= opts.xtol {
                return report(theta, cost, iter, LmStatus::ConvergedXtol, trace);
            }

            let trial_cost = match residual_fn(&trial) {
                Ok(rt) => {
                    let c = sum_sq(&rt);
                    (c, Some(rt))
                }
                Err(Diverged) => (f64::INFINITY, None),
            };
            if let (c, Some(rt)) = trial_cost {
                if c < cost {
                    let rel_decrease = (cost - c) / cost;
                    theta = trial;
                    r = rt;
                    cost = c;
                    trace.push(cost);
                    lambda = (lambda / opts.lambda_down).max(f64::MIN_POSITIVE);
                    if rel_decrease < opts.ftol {
                        return report(theta, cost, iter, LmStatus::ConvergedFtol, trace);
                    }
                    break;
                }
            }
            lambda *= opts.lambda_up;
            if lambda > LAMBDA_MAX {
                return report(theta, cost, iter, LmStatus::Singular, trace);
            }
        }
    }
    report(theta, cost, opts.max_iters, LmStatus::MaxIters, trace)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LsqSolution {
    pub x: Vec<f64>,
    /// Set when the normal equations needed the ridge fallback.
    pub degenerate: bool,
}

/// Minimizes `‖design·x - target‖²` through Cholesky-factored normal
/// equations. Columns are equilibrated to unit norm first; if the
/// factorization still fails a ridge of `1e-12·trace/p` is added.
pub fn linear_lsq(design: &DMatrix<f64>, target: &DVector<f64>) -> Result<LsqSolution> {
    let (n, p) = design.shape();
    if n < p {
        return Err(Error::Argument(format!(
            "least squares needs at least as many rows as columns ({n} < {p})"
        )));
    }
    if target.len() != n {
        return Err(Error::Argument(format!(
            "target has {} rows, design has {n}",
            target.len()
        )));
    }
    if design.iter().chain(target.iter()).any(|x| !x.is_finite()) {
        return Err(Error::Argument(
            "non-finite value in least-squares input".into(),
        ));
    }
    let col_scale: Vec<f64> = (0..p)
        .map(|j| {
            let norm = design.column(j).norm();
            if norm > 0.0 {
                1.0 / norm
            } else {
                1.0
            }
        })
        .collect();
    let mut scaled = design.clone();
    for (j, s) in col_scale.iter().enumerate() {
        scaled.column_mut(j).scale_mut(*s);
    }
    let ata = scaled.transpose() * &scaled;
    let atb = scaled.transpose() * target;

    let (y, degenerate) = match ata.clone().cholesky() {
        Some(chol) if design.column_iter().all(|c| c.norm() > 0.0) => (chol.solve(&atb), false),
        _ => {
            let trace = ata.trace();
            let ridge = if trace > 0.0 {
                1e-12 * trace / p as f64
            } else {
                1e-12
            };
            let mut reg = ata;
            for i in 0..p {
                reg[(i, i)] += ridge;
            }
            let chol = reg.cholesky().ok_or_else(|| {
                Error::DegenerateDesign("normal equations singular even with ridge".into())
            })?;
            (chol.solve(&atb), true)
        }
    };
    let x = y.iter().zip(&col_scale).map(|(yi, s)| yi * s).collect();
    Ok(LsqSolution { x, degenerate })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_linear_residual() {
        let rep = lm_minimize(|t| Ok(vec![t[0] - 3.0]), &[0.0], &LmOptions::unbounded(1)).unwrap();
        assert!((rep.theta[0] - 3.0).abs() < 1e-8, "{rep:?}");
        assert!(rep.status.is_converged());
    }

    #[test]
    fn exponential_decay_benchmark() {
        let t: Vec<f64> = (0..50).map(|k| k as f64 * 0.05).collect();
        let y: Vec<f64> = t.iter().map(|t| 5.0 * (-2.0 * t).exp()).collect();
        let f = |th: &[f64]| {
            Ok(t.iter()
                .zip(&y)
                .map(|(t, y)| th[0] * (-th[1] * t).exp() - y)
                .collect())
        };
        let rep = lm_minimize(f, &[1.0, 1.0], &LmOptions::unbounded(2)).unwrap();
        assert!((rep.theta[0] - 5.0).abs() < 1e-6, "{rep:?}");
        assert!((rep.theta[1] - 2.0).abs() < 1e-6, "{rep:?}");
        assert!(rep.cost_trace.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn bounds_are_respected() {
        let mut opts = LmOptions::with_bounds(vec![0.0], vec![2.0]);
        opts.max_iters = 50;
        let rep = lm_minimize(|t| Ok(vec![t[0] - 3.0]), &[0.5], &opts).unwrap();
        assert!(rep.theta[0] <= 2.0 && rep.theta[0] >= 0.0);
        assert!((rep.theta[0] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn out_of_bounds_start_is_rejected() {
        let opts = LmOptions::with_bounds(vec![0.0], vec![1.0]);
        assert!(matches!(
            lm_minimize(|t| Ok(vec![t[0]]), &[2.0], &opts),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn insensitive_parameter_is_singular() {
        let rep = lm_minimize(
            |t| Ok(vec![t[0] - 1.0, t[0] + 1.0]),
            &[0.3, 0.7],
            &LmOptions::unbounded(2),
        )
        .unwrap();
        assert_eq!(rep.status, LmStatus::Singular);
    }

    #[test]
    fn diverged_start_reports_status() {
        let rep = lm_minimize(|_| Err(Diverged), &[1.0], &LmOptions::unbounded(1)).unwrap();
        assert_eq!(rep.status, LmStatus::DivergedResidual);
        assert_eq!(rep.cost, f64::INFINITY);
    }

    #[test]
    fn diverging_trials_are_rejected() {
        // Blows up for theta > 2, optimum at 1.5.
        let f = |t: &[f64]| {
            if t[0] > 2.0 {
                Err(Diverged)
            } else {
                Ok(vec![10.0 * (t[0] - 1.5), t[0] - 1.5])
            }
        };
        let rep = lm_minimize(f, &[-20.0], &LmOptions::unbounded(1)).unwrap();
        assert!((rep.theta[0] - 1.5).abs() < 1e-8, "{rep:?}");
    }

    #[test]
    fn lsq_identity() {
        let sol = linear_lsq(&DMatrix::identity(2, 2), &DVector::from_vec(vec![3.0, 7.0])).unwrap();
        assert!((sol.x[0] - 3.0).abs() < 1e-14 && (sol.x[1] - 7.0).abs() < 1e-14);
        assert!(!sol.degenerate);
    }

    #[test]
    fn lsq_recovers_quadratic_coefficients() {
        let v: Vec<f64> = (0..400).map(|k| 500.0 * (k as f64 / 399.0)).collect();
        let design = DMatrix::from_fn(v.len(), 2, |i, j| if j == 0 { v[i] } else { v[i] * v[i] });
        let target = DVector::from_iterator(v.len(), v.iter().map(|v| 0.02 * v + 1e-5 * v * v));
        let sol = linear_lsq(&design, &target).unwrap();
        assert!((sol.x[0] - 0.02).abs() / 0.02 < 1e-9, "{:?}", sol.x);
        assert!((sol.x[1] - 1e-5).abs() / 1e-5 < 1e-9, "{:?}", sol.x);
    }

    #[test]
    fn lsq_rank_deficient_uses_ridge() {
        let design = DMatrix::zeros(10, 2);
        let target = DVector::from_element(10, 1.0);
        let sol = linear_lsq(&design, &target).unwrap();
        assert!(sol.degenerate);
        assert!(sol.x.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn lsq_underdetermined_is_error() {
        assert!(linear_lsq(&DMatrix::zeros(1, 2), &DVector::zeros(1)).is_err());
    }
}
