//! Projected quasi-Newton solver for smooth problems over a box intersected
//! with chained rate limits.
//!
//! Search directions come from a BFGS inverse-Hessian restricted to the
//! variables not held at an active bound; steps are projected back onto the
//! feasible set and accepted by Armijo backtracking, so the objective
//! decreases monotonically.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Box bounds intersected with rate limits along interleaved chains.
///
/// Variable `i` is chained to `i - stride` (or to `anchor[i]` for the first
/// `stride` variables) and may differ from it by at most `max_delta[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxRateSet {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub max_delta: Vec<f64>,
    pub stride: usize,
    /// Chain start values; `NaN` leaves that chain unanchored.
    pub anchor: Vec<f64>,
}

impl BoxRateSet {
    /// Pure box constraints.
    pub fn boxed(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        let n = lower.len();
        Self { lower, upper, max_delta: vec![f64::INFINITY; n], stride: 1, anchor: vec![f64::NAN] }
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.upper.len() != n || self.max_delta.len() != n {
            return Err(Error::InvalidInput("constraint vectors differ in length".into()));
        }
        if self.stride == 0 || self.anchor.len() != self.stride {
            return Err(Error::InvalidInput("anchor length must equal a non-zero stride".into()));
        }
        for i in 0..n {
            if !(self.lower[i] <= self.upper[i]) || self.max_delta[i].is_nan() || self.max_delta[i] < 0.0 {
                return Err(Error::InvalidInput(format!("invalid bounds for variable {i}")));
            }
        }
        Ok(())
    }

    fn reference(&self, x: &[f64], i: usize) -> f64 {
        if i >= self.stride { x[i - self.stride] } else { self.anchor[i] }
    }

    /// Feasible interval of `x[i]` given its (already feasible) predecessor.
    pub fn window(&self, x: &[f64], i: usize) -> (f64, f64) {
        let (lo, hi) = (self.lower[i], self.upper[i]);
        let r = self.reference(x, i);
        if r.is_nan() || self.max_delta[i].is_infinite() {
            return (lo, hi);
        }
        let (rlo, rhi) = (r - self.max_delta[i], r + self.max_delta[i]);
        if rlo > hi {
            (hi, hi)
        } else if rhi < lo {
            (lo, lo)
        } else {
            (lo.max(rlo), hi.min(rhi))
        }
    }

    /// Sequential clamp onto the feasible set, in chain order.
    pub fn project(&self, x: &mut [f64]) {
        for i in 0..x.len() {
            let (lo, hi) = self.window(x, i);
            x[i] = x[i].clamp(lo, hi);
        }
    }

    pub fn is_feasible(&self, x: &[f64], tol: f64) -> bool {
        (0..x.len()).all(|i| {
            let (lo, hi) = self.window(x, i);
            x[i] >= lo - tol && x[i] <= hi + tol
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub max_iterations: usize,
    /// Stop when the projected-gradient infinity norm falls below this.
    pub pg_tolerance: f64,
    /// Stop when an accepted step improves the objective by less than this
    /// fraction of `max(1, |f|)`.
    pub f_tolerance: f64,
    /// Finite-difference step (in the solver's variable units).
    pub fd_step: f64,
    pub central_differences: bool,
    pub armijo_c1: f64,
    pub backtrack: f64,
    pub max_backtracks: usize,
    /// Upper bound on the infinity norm of a trial step.
    pub max_step: f64,
    /// Stop, converged, when no trial step at least this long (infinity
    /// norm) decreases the objective. Stiff penalties pin the optimum within
    /// a tiny distance of a constraint boundary where the projected gradient
    /// stays large.
    pub x_tolerance: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 150,
            pg_tolerance: 1e-6,
            f_tolerance: 1e-9,
            fd_step: 1e-5,
            central_differences: true,
            armijo_c1: 1e-4,
            backtrack: 0.5,
            max_backtracks: 25,
            max_step: 1.0,
            x_tolerance: 1e-7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    ProjectedGradient,
    SmallProgress,
    MaxIterations,
    StepTolerance,
    LineSearch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverDiagnostics {
    pub iterations: usize,
    /// Objective evaluations, including those spent on gradients.
    pub evaluations: usize,
    pub converged: bool,
    pub termination: Termination,
    pub value: f64,
    pub projected_gradient_norm: f64,
    /// Objective after initialisation and after every accepted step.
    pub history: Vec<f64>,
}

/// Where finite differences may probe.
#[derive(Debug, Clone, Copy)]
pub struct GradientContext<'a> {
    pub lower: &'a [f64],
    pub upper: &'a [f64],
    pub step: f64,
    pub central: bool,
}

/// Smooth objective. The default gradient is finite-differenced.
pub trait Objective {
    fn value(&mut self, x: &[f64]) -> Result<f64>;

    /// Fills `grad` at `x` (where the objective is `fx`) and returns the
    /// number of objective evaluations spent.
    fn gradient(&mut self, x: &[f64], fx: f64, ctx: &GradientContext<'_>, grad: &mut [f64]) -> Result<usize> {
        fd_gradient(|_, z| self.value(z), x, fx, ctx, grad)
    }
}

/// Adapts a plain closure into an [`Objective`].
pub struct FnObjective<F>(pub F);

impl<F: FnMut(&[f64]) -> f64> Objective for FnObjective<F> {
    fn value(&mut self, x: &[f64]) -> Result<f64> {
        Ok((self.0)(x))
    }
}

/// Finite-difference gradient that never probes outside the box. `f`
/// receives the index of the perturbed coordinate together with the point.
pub fn fd_gradient<F>(mut f: F, x: &[f64], fx: f64, ctx: &GradientContext<'_>, grad: &mut [f64]) -> Result<usize>
where
    F: FnMut(usize, &[f64]) -> Result<f64>,
{
    let mut z = x.to_vec();
    let mut evals = 0;
    for i in 0..x.len() {
        let h = ctx.step * x[i].abs().max(1.0);
        let fwd = x[i] + h <= ctx.upper[i];
        let bwd = x[i] - h >= ctx.lower[i];
        let mut probe = |z: &mut Vec<f64>, v: f64| {
            z[i] = v;
            evals += 1;
            let r = f(i, z);
            z[i] = x[i];
            r
        };
        grad[i] = if ctx.central && fwd && bwd {
            let fp = probe(&mut z, x[i] + h)?;
            let fm = probe(&mut z, x[i] - h)?;
            (fp - fm) / (2.0 * h)
        } else if fwd {
            match probe(&mut z, x[i] + h) {
                Ok(fp) => (fp - fx) / h,
                Err(e) if bwd => (fx - probe(&mut z, x[i] - h).map_err(|_| e)?) / h,
                Err(e) => return Err(e),
            }
        } else if bwd {
            (fx - probe(&mut z, x[i] - h)?) / h
        } else {
            0.0
        };
        if !grad[i].is_finite() {
            return Err(Error::Solver(format!("non-finite gradient component {i}")));
        }
    }
    Ok(evals)
}

fn checked(value: f64, what: &str) -> Result<f64> {
    if value.is_nan() {
        Err(Error::Solver(format!("objective returned NaN at {what}")))
    } else {
        Ok(value)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn projected_gradient_norm(set: &BoxRateSet, x: &[f64], g: &[f64]) -> f64 {
    let mut y: Vec<f64> = x.iter().zip(g).map(|(xi, gi)| xi - gi).collect();
    set.project(&mut y);
    y.iter().zip(x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

/// Minimises `obj` over `set` starting from (the projection of) `x0`.
///
/// Errors raised by the objective at trial points reject those points;
/// NaN values abort the solve.
pub fn nlp_minimize<O: Objective + ?Sized>(
    obj: &mut O,
    x0: &[f64],
    set: &BoxRateSet,
    opts: &SolverOptions,
) -> Result<(Vec<f64>, SolverDiagnostics)> {
    set.validate()?;
    let n = set.len();
    if x0.len() != n {
        return Err(Error::InvalidInput(format!("x0 has {} entries, constraints {n}", x0.len())));
    }
    let ctx = GradientContext {
        lower: &set.lower,
        upper: &set.upper,
        step: opts.fd_step,
        central: opts.central_differences,
    };

    let mut x = x0.to_vec();
    set.project(&mut x);
    let mut f = checked(obj.value(&x)?, "the initial point")?;
    if !f.is_finite() {
        return Err(Error::Solver("objective is not finite at the initial point".into()));
    }
    let mut evaluations = 1;
    let mut g = vec![0.0; n];
    evaluations += obj.gradient(&x, f, &ctx, &mut g)?;

    let mut h_inv = DMatrix::<f64>::identity(n, n);
    let mut scaled = false;
    let mut history = vec![f];
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;
    let mut trial = vec![0.0; n];
    let eps = 1e-12;

    while iterations < opts.max_iterations {
        if projected_gradient_norm(set, &x, &g) <= opts.pg_tolerance {
            termination = Termination::ProjectedGradient;
            break;
        }
        iterations += 1;

        // Variables pinned by an active bound the gradient pushes against.
        let free: Vec<bool> = (0..n)
            .map(|i| {
                let (lo, hi) = set.window(&x, i);
                !((x[i] <= lo + eps && g[i] > 0.0) || (x[i] >= hi - eps && g[i] < 0.0))
            })
            .collect();

        let mut accepted = None;
        let mut tiny = true;
        for attempt in 0..2 {
            let mut d: Vec<f64> = if attempt == 0 {
                let gm = DVector::from_iterator(n, (0..n).map(|i| if free[i] { g[i] } else { 0.0 }));
                let d = -(&h_inv * gm);
                (0..n).map(|i| if free[i] { d[i] } else { 0.0 }).collect()
            } else {
                h_inv = DMatrix::identity(n, n);
                scaled = false;
                g.iter().map(|gi| -gi).collect()
            };
            if attempt == 0 && dot(&d, &g) >= 0.0 {
                continue;
            }
            let norm = d.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            if norm == 0.0 {
                continue;
            }
            if norm > opts.max_step {
                d.iter_mut().for_each(|v| *v *= opts.max_step / norm);
            }
            let len = norm.min(opts.max_step);

            let mut alpha = 1.0;
            let mut reached = false;
            for _ in 0..=opts.max_backtracks {
                if alpha * len < opts.x_tolerance {
                    reached = true;
                    break;
                }
                for i in 0..n {
                    trial[i] = x[i] + alpha * d[i];
                }
                set.project(&mut trial);
                let s: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
                let slope = dot(&g, &s);
                if slope < 0.0 {
                    evaluations += 1;
                    if let Ok(ft) = obj.value(&trial) {
                        let ft = checked(ft, "a trial point")?;
                        if ft <= f + opts.armijo_c1 * slope {
                            accepted = Some((trial.clone(), ft));
                            break;
                        }
                    }
                }
                alpha *= opts.backtrack;
            }
            if accepted.is_some() {
                break;
            }
            tiny &= reached;
        }

        let Some((x_new, f_new)) = accepted else {
            termination = if tiny { Termination::StepTolerance } else { Termination::LineSearch };
            iterations -= 1;
            break;
        };

        let mut g_new = vec![0.0; n];
        evaluations += obj.gradient(&x_new, f_new, &ctx, &mut g_new)?;
        let s = DVector::from_iterator(n, x_new.iter().zip(&x).map(|(a, b)| a - b));
        let y = DVector::from_iterator(n, g_new.iter().zip(&g).map(|(a, b)| a - b));
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() && sy > 0.0 {
            if !scaled {
                h_inv *= sy / y.dot(&y);
                scaled = true;
            }
            let rho = 1.0 / sy;
            let hy = &h_inv * &y;
            let yhy = y.dot(&hy);
            // H+ = H - ρ(H y sᵀ + s yᵀ H) + (ρ² yᵀHy + ρ) s sᵀ
            h_inv -= (&hy * s.transpose() + &s * hy.transpose()) * rho;
            h_inv += (&s * s.transpose()) * (rho * rho * yhy + rho);
        }

        let progress = f - f_new;
        x = x_new;
        f = f_new;
        g = g_new;
        history.push(f);
        if progress <= opts.f_tolerance * f.abs().max(1.0) {
            termination = Termination::SmallProgress;
            break;
        }
    }

    let pg = projected_gradient_norm(set, &x, &g);
    let converged = match termination {
        Termination::ProjectedGradient | Termination::SmallProgress | Termination::StepTolerance => true,
        Termination::LineSearch | Termination::MaxIterations => false,
    };
    Ok((
        x,
        SolverDiagnostics {
            iterations,
            evaluations,
            converged,
            termination,
            value: f,
            projected_gradient_norm: pg,
            history,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unconstrained_quadratic() {
        let mut obj = FnObjective(|x: &[f64]| (x[0] - 0.3).powi(2) + 4.0 * (x[1] + 0.2).powi(2) + x[0] * x[1]);
        let set = BoxRateSet::boxed(vec![-1.0; 2], vec![1.0; 2]);
        let (x, d) = nlp_minimize(&mut obj, &[0.0, 0.0], &set, &SolverOptions::default()).unwrap();
        // Stationarity: 2(x0-0.3)+x1 = 0, 8(x1+0.2)+x0 = 0.
        assert!((2.0 * (x[0] - 0.3) + x[1]).abs() < 1e-3, "{x:?}");
        assert!((8.0 * (x[1] + 0.2) + x[0]).abs() < 1e-3, "{x:?}");
        assert!(d.converged);
    }

    #[test]
    fn optimum_outside_box_is_clamped() {
        let mut obj = FnObjective(|x: &[f64]| (x[0] - 3.0).powi(2) + (x[1] + 0.5).powi(2));
        let set = BoxRateSet::boxed(vec![-1.0; 2], vec![1.0; 2]);
        let (x, d) = nlp_minimize(&mut obj, &[0.0, 0.0], &set, &SolverOptions::default()).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-9);
        assert!((x[1] + 0.5).abs() < 1e-4);
        assert!(d.converged);
    }

    #[test]
    fn infeasible_start_is_projected_and_merit_is_monotone() {
        let mut obj = FnObjective(|x: &[f64]| x.iter().enumerate().map(|(i, v)| (v - 0.1 * i as f64).powi(2)).sum());
        let set = BoxRateSet {
            lower: vec![-1.0; 6],
            upper: vec![1.0; 6],
            max_delta: vec![0.05; 6],
            stride: 2,
            anchor: vec![0.0, 0.0],
        };
        let (x, d) = nlp_minimize(&mut obj, &[5.0; 6], &set, &SolverOptions::default()).unwrap();
        assert!(set.is_feasible(&x, 1e-12));
        assert!(d.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn nan_aborts() {
        let mut obj = FnObjective(|x: &[f64]| if x[0] > 0.5 { f64::NAN } else { -x[0] });
        let set = BoxRateSet::boxed(vec![0.0], vec![1.0]);
        let err = nlp_minimize(&mut obj, &[0.0], &set, &SolverOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Solver(_)));
    }

    #[test]
    fn rate_window_clamps_to_box_when_disjoint() {
        let set = BoxRateSet {
            lower: vec![0.0],
            upper: vec![1.0],
            max_delta: vec![0.1],
            stride: 1,
            anchor: vec![3.0],
        };
        let mut x = vec![0.0];
        set.project(&mut x);
        assert_eq!(x, vec![1.0]);
    }
}
