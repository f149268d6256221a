//! Shared numerical kernels: fixed-step explicit integrators, central
//! differences, SVD-based numerical rank and Simpson quadrature.
//!
//! Everything here is a pure function of its arguments.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Relative rank threshold used throughout the crate.
pub const DEFAULT_RANK_TOLERANCE: f64 = 1e-8;

/// Default step for quantitative work.
pub const DEFAULT_STEP: f64 = 1e-3;

/// Default number of Simpson nodes for the iterated bump integral.
pub const DEFAULT_SIMPSON_POINTS: usize = 1001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Euler,
    Rk4,
}

impl Method {
    pub fn order(self) -> u32 {
        match self {
            Method::Euler => 1,
            Method::Rk4 => 4,
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "euler" => Ok(Method::Euler),
            "rk4" => Ok(Method::Rk4),
            other => Err(invalid(format!("unknown integration method '{other}' (expected euler or rk4)"))),
        }
    }
}

/// Integration method plus a fixed step size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSpec {
    pub method: Method,
    pub step: f64,
}

impl IntegratorSpec {
    pub fn new(method: Method, step: f64) -> Result<Self> {
        let spec = IntegratorSpec { method, step };
        spec.validate()?;
        Ok(spec)
    }

    pub fn rk4(step: f64) -> Result<Self> {
        Self::new(Method::Rk4, step)
    }

    pub fn euler(step: f64) -> Result<Self> {
        Self::new(Method::Euler, step)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step.is_finite() && self.step > 0.0) {
            return Err(invalid(format!("integrator step must be positive, got {}", self.step)));
        }
        Ok(())
    }
}

impl Default for IntegratorSpec {
    fn default() -> Self {
        IntegratorSpec { method: Method::Rk4, step: DEFAULT_STEP }
    }
}

/// Samples of an ODE solution on the integrator grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn last(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory always holds the initial sample")
    }
}

/// Grid used for `duration`: full steps of size `h`, the last one shortened
/// so the grid ends exactly on `duration`.
pub(crate) fn step_grid(duration: f64, h: f64) -> Vec<f64> {
    if duration <= 0.0 {
        return vec![0.0];
    }
    // Absorb round-off in duration / h so that e.g. 1.0 / 1e-3 gives 1000 steps.
    let n = ((duration / h) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    let mut times: Vec<f64> = (0..n).map(|k| k as f64 * h).collect();
    times.push(duration);
    times
}

pub(crate) fn single_step<F>(field: &F, y: &DVector<f64>, h: f64, method: Method) -> DVector<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    match method {
        Method::Euler => y + field(y) * h,
        Method::Rk4 => {
            let k1 = field(y);
            let k2 = field(&(y + &k1 * (0.5 * h)));
            let k3 = field(&(y + &k2 * (0.5 * h)));
            let k4 = field(&(y + &k3 * h));
            y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
        }
    }
}

fn check_duration(duration: f64) -> Result<()> {
    if !(duration.is_finite() && duration >= 0.0) {
        return Err(invalid(format!("integration duration must be finite and nonnegative, got {duration}")));
    }
    Ok(())
}

/// Integrates the autonomous system `y' = field(y)` from `y0` for `duration`,
/// returning samples at `0, h, 2h, ...` with the final sample exactly at
/// `duration`.
pub fn integrate_ode<F>(field: F, y0: &DVector<f64>, duration: f64, spec: &IntegratorSpec) -> Result<Trajectory>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    spec.validate()?;
    check_duration(duration)?;
    let grid = step_grid(duration, spec.step);
    let mut states = Vec::with_capacity(grid.len());
    states.push(y0.clone());
    for w in grid.windows(2) {
        let next = single_step(&field, states.last().unwrap(), w[1] - w[0], spec.method);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::IntegrationBlowup { time: w[1] });
        }
        states.push(next);
    }
    Ok(Trajectory { times: grid, states })
}

/// Like [`integrate_ode`] but keeps only the final state.
pub fn integrate_ode_final<F>(field: F, y0: &DVector<f64>, duration: f64, spec: &IntegratorSpec) -> Result<DVector<f64>>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    spec.validate()?;
    check_duration(duration)?;
    let grid = step_grid(duration, spec.step);
    let mut y = y0.clone();
    for w in grid.windows(2) {
        y = single_step(&field, &y, w[1] - w[0], spec.method);
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::IntegrationBlowup { time: w[1] });
        }
    }
    Ok(y)
}

/// Outcome of a numerical rank computation.
#[derive(Debug, Clone, PartialEq)]
pub struct RankResult {
    pub rank: usize,
    /// Sorted in nonincreasing order.
    pub singular_values: Vec<f64>,
    /// Absolute threshold: `tol * largest singular value`.
    pub tolerance_used: f64,
}

/// Rank of `matrix` counting singular values strictly above
/// `tol * sigma_max`.
pub fn numerical_rank(matrix: &DMatrix<f64>, tol: f64) -> Result<RankResult> {
    if !(tol.is_finite() && tol > 0.0) {
        return Err(invalid(format!("rank tolerance must be positive, got {tol}")));
    }
    if matrix.nrows() == 0 || matrix.ncols() == 0 {
        return Ok(RankResult { rank: 0, singular_values: Vec::new(), tolerance_used: 0.0 });
    }
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(invalid("matrix has non-finite entries"));
    }
    let mut singular_values: Vec<f64> = matrix.clone().singular_values().iter().copied().collect();
    singular_values.sort_by(|a, b| b.total_cmp(a));
    let tolerance_used = tol * singular_values[0];
    let rank = singular_values.iter().filter(|&&s| s > tolerance_used).count();
    Ok(RankResult { rank, singular_values, tolerance_used })
}

/// Central difference `(f(x+h) - f(x-h)) / 2h`.
pub fn finite_difference<F>(f: F, x: f64, h: f64) -> DVector<f64>
where
    F: Fn(f64) -> DVector<f64>,
{
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Composite Simpson rule with `n_points` nodes on `[a, b]`. An even node
/// count is bumped by one.
pub fn simpson<F>(f: F, a: f64, b: f64, n_points: usize) -> f64
where
    F: Fn(f64) -> f64,
{
    let mut n = n_points.max(3);
    if n % 2 == 0 {
        n += 1;
    }
    let panels = n - 1;
    let h = (b - a) / panels as f64;
    let mut sum = f(a) + f(b);
    for k in 1..panels {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(a + k as f64 * h);
    }
    sum * h / 3.0
}

/// Iterated integral `∫_0^t ∫_0^s theta(τ) dτ ds`, evaluated as the
/// equivalent single integral `∫_0^t (t - τ) theta(τ) dτ`.
pub fn double_integral_theta<F>(theta: F, t: f64, n_points: usize) -> f64
where
    F: Fn(f64) -> f64,
{
    if t <= 0.0 {
        return 0.0;
    }
    simpson(|tau| (t - tau) * theta(tau), 0.0, t, n_points.max(2))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn rk4() -> IntegratorSpec {
        IntegratorSpec::rk4(1e-3).unwrap()
    }

    #[test]
    fn zero_field_is_constant() {
        let y0 = DVector::from_vec(vec![1.0, -2.0, 3.5]);
        let traj = integrate_ode(|y| DVector::zeros(y.len()), &y0, 0.37, &rk4()).unwrap();
        assert!(traj.states.iter().all(|s| s == &y0));
        assert_eq!(traj.times[0], 0.0);
        assert_eq!(*traj.times.last().unwrap(), 0.37);
    }

    #[test]
    fn exponential_growth() {
        let y0 = DVector::from_element(1, 1.0);
        let end = integrate_ode_final(|y| y.clone(), &y0, 1.0, &rk4()).unwrap();
        assert!(close(end[0], std::f64::consts::E, 1e-9), "{}", end[0]);
    }

    #[test]
    fn harmonic_oscillator_returns() {
        let y0 = DVector::from_vec(vec![1.0, 0.0]);
        let f = |y: &DVector<f64>| DVector::from_vec(vec![-y[1], y[0]]);
        let end = integrate_ode_final(f, &y0, 2.0 * std::f64::consts::PI, &rk4()).unwrap();
        assert!(close(end[0], 1.0, 1e-8) && close(end[1], 0.0, 1e-8), "{end}");
    }

    #[test]
    fn harmonic_energy_drift() {
        let y0 = DVector::from_vec(vec![1.0, 0.0]);
        let f = |y: &DVector<f64>| DVector::from_vec(vec![-y[1], y[0]]);
        let traj = integrate_ode(f, &y0, 1.0, &rk4()).unwrap();
        let drift = traj.states.iter().map(|s| (s.norm_squared() - 1.0).abs()).fold(0.0, f64::max);
        assert!(drift < 1e-8, "{drift}");
    }

    #[test]
    fn convergence_orders() {
        let y0 = DVector::from_vec(vec![1.0, 0.0]);
        let f = |y: &DVector<f64>| DVector::from_vec(vec![-y[1], y[0]]);
        let exact = DVector::from_vec(vec![1f64.cos(), 1f64.sin()]);
        for (method, expected) in [(Method::Euler, 2.0), (Method::Rk4, 16.0)] {
            let err = |h: f64| {
                let spec = IntegratorSpec::new(method, h).unwrap();
                (integrate_ode_final(f, &y0, 1.0, &spec).unwrap() - &exact).norm()
            };
            let ratio = err(1e-2) / err(5e-3);
            assert!((ratio / expected - 1.0).abs() < 0.1, "{method:?}: ratio {ratio}");
        }
    }

    #[test]
    fn grid_ends_on_duration() {
        let g = step_grid(1.0, 1e-3);
        assert_eq!(g.len(), 1001);
        assert_eq!(*g.last().unwrap(), 1.0);
        let g = step_grid(0.0155, 1e-3);
        assert_eq!(g.len(), 17);
        assert!((g[16] - g[15] - 5e-4).abs() < 1e-15);
        assert_eq!(step_grid(0.0, 1e-3), vec![0.0]);
    }

    #[test]
    fn blowup_reports_time() {
        let y0 = DVector::from_element(1, 1.0);
        let err = integrate_ode(|y| y.map(|v| v * v * 1e200), &y0, 1.0, &rk4()).unwrap_err();
        assert!(matches!(err, Error::IntegrationBlowup { time } if time > 0.0 && time <= 1.0));
    }

    #[test]
    fn negative_duration_and_bad_step_rejected() {
        let y0 = DVector::from_element(1, 1.0);
        assert!(integrate_ode(|y| y.clone(), &y0, -1.0, &rk4()).is_err());
        assert!(IntegratorSpec::rk4(0.0).is_err());
        assert!(IntegratorSpec::euler(-1e-3).is_err());
    }

    #[test]
    fn rank_examples() {
        let r = numerical_rank(&DMatrix::identity(3, 3), 1e-10).unwrap();
        assert_eq!(r.rank, 3);
        assert_eq!(numerical_rank(&DMatrix::zeros(3, 4), 1e-8).unwrap().rank, 0);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1e-3, 1e-14]));
        let r = numerical_rank(&d, 1e-8).unwrap();
        assert_eq!(r.rank, 2);
        assert!(r.singular_values.windows(2).all(|w| w[0] >= w[1]));
        assert_eq!(r.tolerance_used, 1e-8);
        let empty = numerical_rank(&DMatrix::zeros(0, 3), 1e-8).unwrap();
        assert_eq!(empty.rank, 0);
        assert!(numerical_rank(&DMatrix::identity(2, 2), 0.0).is_err());
    }

    #[test]
    fn central_difference_examples() {
        let sq = |x: f64| DVector::from_element(1, x * x);
        assert!(close(finite_difference(sq, 1.0, 1e-5)[0], 2.0, 1e-9));
        let c = |_: f64| DVector::from_element(2, 4.2);
        assert_eq!(finite_difference(c, 0.3, 1e-4), DVector::zeros(2));
        let s = |x: f64| DVector::from_element(1, x.sin());
        assert!(close(finite_difference(s, 0.0, 1e-5)[0], 1.0, 1e-10));
    }

    #[test]
    fn double_integral_examples() {
        assert_eq!(double_integral_theta(|_| 1.0, 0.0, 1001), 0.0);
        assert!(close(double_integral_theta(|_| 1.0, 2.0, 1001), 2.0, 1e-12));
        // even node counts are accepted
        assert!(close(double_integral_theta(|t| t, 1.0, 10), 1.0 / 6.0, 1e-12));
    }
}
