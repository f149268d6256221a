//! End-point map of the control system `γ̇ = Σ u_i X_i(γ)`, its differential,
//! corank profiles along geodesics and verification of lift conditions.
//!
//! Controls are piecewise constant. The differential is obtained by carrying
//! the variational equation alongside the state with the same integrator,
//! so it is the exact derivative of the discretized end-point map.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::flow::{CotangentState, GeodesicTrace};
use crate::numerics::{
    integrate_ode, integrate_ode_final, numerical_rank, IntegratorSpec, DEFAULT_RANK_TOLERANCE,
};
use crate::structures::SRStructure;

/// Piecewise-constant controls per unit time used for corank computations.
pub const DEFAULT_CONTROLS_PER_UNIT: usize = 64;

/// Default bracket width for jump refinement.
pub const DEFAULT_RESOLUTION: f64 = 1e-3;

/// Piecewise-constant control on `[0, T]`. Intervals have a common width
/// except the last one, which may be shorter after truncation.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlGrid {
    values: DMatrix<f64>,
    interval: f64,
    horizon: f64,
}

fn interval_count(horizon: f64, interval: f64) -> usize {
    ((horizon / interval) * (1.0 - 1e-12)).ceil().max(1.0) as usize
}

impl ControlGrid {
    /// Uniform partition: `values` is `m × N`, intervals of width `T / N`.
    pub fn new(values: DMatrix<f64>, horizon: f64) -> Result<Self> {
        if values.ncols() == 0 || values.nrows() == 0 {
            return Err(invalid("control grid needs at least one interval and one control component"));
        }
        let interval = horizon / values.ncols() as f64;
        Self::with_interval(values, interval, horizon)
    }

    /// Intervals of width `interval`; the last one ends at `horizon`.
    pub fn with_interval(values: DMatrix<f64>, interval: f64, horizon: f64) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(invalid(format!("control horizon must be positive, got {horizon}")));
        }
        if !(interval.is_finite() && interval > 0.0) {
            return Err(invalid(format!("control interval must be positive, got {interval}")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("control values must be finite"));
        }
        let n = interval_count(horizon, interval);
        if values.ncols() != n {
            return Err(invalid(format!(
                "horizon {horizon} with interval {interval} needs {n} columns, got {}",
                values.ncols()
            )));
        }
        Ok(ControlGrid { values, interval, horizon })
    }

    pub fn constant(u: &DVector<f64>, intervals: usize, horizon: f64) -> Result<Self> {
        if intervals == 0 {
            return Err(invalid("control grid needs at least one interval"));
        }
        let cols: Vec<DVector<f64>> = vec![u.clone(); intervals];
        Self::new(DMatrix::from_columns(&cols), horizon)
    }

    /// L²-projection of a trace's control onto `per_unit` intervals per unit
    /// time.
    pub fn from_trace(trace: &GeodesicTrace, per_unit: usize) -> Result<Self> {
        let horizon = trace.duration();
        if per_unit == 0 {
            return Err(invalid("controls per unit time must be positive"));
        }
        let interval = 1.0 / per_unit as f64;
        let n = interval_count(horizon, interval);
        let m = trace.controls[0].len();
        let mut values = DMatrix::zeros(m, n);
        for k in 0..n {
            let a = k as f64 * interval;
            let b = ((k + 1) as f64 * interval).min(horizon);
            values.set_column(k, &trace.mean_control(a, b));
        }
        Self::with_interval(values, interval, horizon)
    }

    pub fn frame_size(&self) -> usize {
        self.values.nrows()
    }

    pub fn intervals(&self) -> usize {
        self.values.ncols()
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn interval_width(&self) -> f64 {
        self.interval
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn control(&self, k: usize) -> DVector<f64> {
        self.values.column(k).into_owned()
    }

    pub fn bounds(&self, k: usize) -> (f64, f64) {
        let a = k as f64 * self.interval;
        let b = if k + 1 == self.intervals() { self.horizon } else { (k + 1) as f64 * self.interval };
        (a, b)
    }

    /// Restriction of the control to `[0, t]`.
    pub fn truncate(&self, t: f64) -> Result<Self> {
        if !(t > 0.0 && t <= self.horizon * (1.0 + 1e-12)) {
            return Err(invalid(format!("cannot truncate a control of horizon {} at {t}", self.horizon)));
        }
        let t = t.min(self.horizon);
        let n = interval_count(t, self.interval);
        Ok(ControlGrid { values: self.values.columns(0, n).into_owned(), interval: self.interval, horizon: t })
    }
}

fn check_point(s: &SRStructure, x: &DVector<f64>, u: &ControlGrid) -> Result<()> {
    if x.len() != s.dim() {
        return Err(invalid(format!("point has dimension {} but structure '{}' has {}", x.len(), s.label(), s.dim())));
    }
    if u.frame_size() != s.frame_size() {
        return Err(invalid(format!(
            "control has {} components but structure '{}' has {} frame fields",
            u.frame_size(),
            s.label(),
            s.frame_size()
        )));
    }
    Ok(())
}

fn controlled_field<'a>(s: &'a SRStructure, u: &'a DVector<f64>) -> impl Fn(&DVector<f64>) -> DVector<f64> + 'a {
    move |x: &DVector<f64>| {
        let mut v = DVector::zeros(s.dim());
        for (i, &ui) in u.iter().enumerate() {
            if ui != 0.0 {
                v.axpy(ui, &s.field(i, x), 1.0);
            }
        }
        v
    }
}

/// `E_x(u) = γ_u(T)`.
pub fn endpoint_map(s: &SRStructure, x: &DVector<f64>, u: &ControlGrid, spec: &IntegratorSpec) -> Result<DVector<f64>> {
    check_point(s, x, u)?;
    let mut state = x.clone();
    for k in 0..u.intervals() {
        let (a, b) = u.bounds(k);
        let uk = u.control(k);
        state = integrate_ode_final(controlled_field(s, &uk), &state, b - a, spec)
            .map_err(|e| shift_blowup(e, a))?;
    }
    Ok(state)
}

fn shift_blowup(e: Error, offset: f64) -> Error {
    match e {
        Error::IntegrationBlowup { time } => Error::IntegrationBlowup { time: time + offset },
        other => other,
    }
}

/// `D_u E_x` as an `n × (m N)` matrix. Column `k m + i` is the sensitivity
/// of the end point to control component `i` on interval `k`.
pub fn endpoint_jacobian(s: &SRStructure, x: &DVector<f64>, u: &ControlGrid, spec: &IntegratorSpec) -> Result<DMatrix<f64>> {
    check_point(s, x, u)?;
    let n = s.dim();
    let m = s.frame_size();
    let big_n = u.intervals();
    let mut state = x.clone();
    // Columns of intervals not yet reached are zero and stay zero, so only
    // the active block is carried.
    let mut sens = DMatrix::<f64>::zeros(n, 0);
    for k in 0..big_n {
        let (a, b) = u.bounds(k);
        let uk = u.control(k);
        let active = m * (k + 1);
        let mut y = DVector::zeros(n + n * active);
        y.rows_mut(0, n).copy_from(&state);
        y.rows_mut(n, n * m * k).copy_from_slice(sens.as_slice());
        let rhs = |y: &DVector<f64>| {
            let xs = y.rows(0, n).into_owned();
            let sm = DMatrix::from_column_slice(n, active, &y.as_slice()[n..]);
            let mut dx = DVector::zeros(n);
            let mut lin = DMatrix::zeros(n, n);
            for (i, &ui) in uk.iter().enumerate() {
                if ui != 0.0 {
                    dx.axpy(ui, &s.field(i, &xs), 1.0);
                    lin += s.jacobian(i, &xs) * ui;
                }
            }
            let mut ds = &lin * &sm;
            for i in 0..m {
                let mut col = ds.column_mut(k * m + i);
                col += s.field(i, &xs);
            }
            let mut out = DVector::zeros(y.len());
            out.rows_mut(0, n).copy_from(&dx);
            out.rows_mut(n, n * active).copy_from_slice(ds.as_slice());
            out
        };
        let end = integrate_ode_final(rhs, &y, b - a, spec).map_err(|e| shift_blowup(e, a))?;
        state = end.rows(0, n).into_owned();
        sens = DMatrix::from_column_slice(n, active, &end.as_slice()[n..]);
    }
    Ok(sens)
}

/// `n - rank(D_u E_x)`.
pub fn corank(s: &SRStructure, x: &DVector<f64>, u: &ControlGrid, tol: f64, spec: &IntegratorSpec) -> Result<usize> {
    let jac = endpoint_jacobian(s, x, u, spec)?;
    Ok(s.dim() - numerical_rank(&jac, tol)?.rank)
}

/// Corank of a constant path at `x`: the corank of the distribution there.
pub fn distribution_corank(s: &SRStructure, x: &DVector<f64>, tol: f64) -> Result<usize> {
    Ok(s.dim() - numerical_rank(&s.frame_matrix(x), tol)?.rank)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorankSettings {
    /// Relative rank tolerance.
    pub tolerance: f64,
    pub controls_per_unit: usize,
    /// Target bracket width for jump refinement.
    pub resolution: f64,
}

impl Default for CorankSettings {
    fn default() -> Self {
        CorankSettings {
            tolerance: DEFAULT_RANK_TOLERANCE,
            controls_per_unit: DEFAULT_CONTROLS_PER_UNIT,
            resolution: DEFAULT_RESOLUTION,
        }
    }
}

/// Sampled corank function `t ↦ corank(γ|[0,t])`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorankProfile {
    pub times: Vec<f64>,
    pub coranks: Vec<usize>,
    pub tolerance: f64,
}

/// Discretized geodesic ready for repeated corank queries.
/// Short truncations are resampled so the grid never has fewer columns than this.
const MIN_PROBE_INTERVALS: usize = 8;

struct CorankProbe<'a> {
    s: &'a SRStructure,
    trace: &'a GeodesicTrace,
    x: DVector<f64>,
    grid: ControlGrid,
    settings: CorankSettings,
    spec: IntegratorSpec,
}

impl<'a> CorankProbe<'a> {
    fn new(s: &'a SRStructure, trace: &'a GeodesicTrace, settings: &CorankSettings, spec: &IntegratorSpec) -> Result<Self> {
        if trace.duration() <= 0.0 {
            return Err(invalid("corank profile needs a trace of positive duration"));
        }
        Ok(CorankProbe {
            s,
            trace,
            x: trace.initial().q.clone(),
            grid: ControlGrid::from_trace(trace, settings.controls_per_unit)?,
            settings: *settings,
            spec: *spec,
        })
    }

    fn corank_at(&self, t: f64) -> Result<usize> {
        if t <= 0.0 {
            return distribution_corank(self.s, &self.x, self.settings.tolerance);
        }
        let mut u = self.grid.truncate(t)?;
        if u.intervals() < MIN_PROBE_INTERVALS {
            let horizon = u.horizon();
            let width = horizon / MIN_PROBE_INTERVALS as f64;
            let cols: Vec<DVector<f64>> = (0..MIN_PROBE_INTERVALS)
                .map(|k| self.trace.mean_control(k as f64 * width, ((k + 1) as f64 * width).min(horizon)))
                .collect();
            u = ControlGrid::new(DMatrix::from_columns(&cols), horizon)?;
        }
        corank(self.s, &self.x, &u, self.settings.tolerance, &self.spec)
    }
}

/// Coranks of the restrictions of `trace` to `[0, t]` for each sample time.
/// Errors if the computed values are not nonincreasing.
pub fn corank_profile(
    s: &SRStructure,
    trace: &GeodesicTrace,
    sample_times: &[f64],
    settings: &CorankSettings,
    spec: &IntegratorSpec,
) -> Result<CorankProfile> {
    if sample_times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("sample times must be strictly increasing"));
    }
    let horizon = trace.duration();
    if let Some(&t) = sample_times.iter().find(|&&t| t < 0.0 || t > horizon * (1.0 + 1e-12)) {
        return Err(invalid(format!("sample time {t} lies outside the trace horizon [0, {horizon}]")));
    }
    let probe = CorankProbe::new(s, trace, settings, spec)?;
    let mut coranks: Vec<usize> = Vec::with_capacity(sample_times.len());
    for (j, &t) in sample_times.iter().enumerate() {
        let c = probe.corank_at(t)?;
        if let Some(&prev) = coranks.last() {
            if c > prev {
                return Err(Error::CorankNotMonotone {
                    previous_time: sample_times[j - 1],
                    previous: prev,
                    time: t,
                    current: c,
                    tolerance: settings.tolerance,
                });
            }
        }
        coranks.push(c);
    }
    Ok(CorankProfile { times: sample_times.to_vec(), coranks, tolerance: settings.tolerance })
}

/// A strict decrease of the corank between two sample times. The jump lies
/// in `(lower, upper]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankJump {
    pub lower: f64,
    pub upper: f64,
    pub drop: usize,
}

impl RankJump {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

pub fn detect_rank_jumps(profile: &CorankProfile) -> Vec<RankJump> {
    profile
        .times
        .windows(2)
        .zip(profile.coranks.windows(2))
        .filter(|(_, c)| c[1] < c[0])
        .map(|(t, c)| RankJump { lower: t[0], upper: t[1], drop: c[0] - c[1] })
        .collect()
}

/// Bisects a jump bracket down to `settings.resolution` by recomputing the
/// corank at midpoints. The returned bracket contains the first time the
/// corank falls below its value at `jump.lower`; `drop` is measured across
/// the refined bracket.
pub fn refine_jump(
    s: &SRStructure,
    trace: &GeodesicTrace,
    jump: &RankJump,
    settings: &CorankSettings,
    spec: &IntegratorSpec,
) -> Result<RankJump> {
    let probe = CorankProbe::new(s, trace, settings, spec)?;
    let mut lo = jump.lower;
    let mut hi = jump.upper;
    let c_lo = probe.corank_at(lo)?;
    let mut c_hi = probe.corank_at(hi)?;
    if c_hi >= c_lo {
        return Err(invalid(format!("no corank drop between {lo} and {hi}")));
    }
    while hi - lo > settings.resolution {
        let mid = 0.5 * (lo + hi);
        let c = probe.corank_at(mid)?;
        if c >= c_lo {
            lo = mid;
        } else {
            hi = mid;
            c_hi = c;
        }
    }
    Ok(RankJump { lower: lo, upper: hi, drop: c_lo - c_hi })
}

/// Lift classification against conditions (N) and (A).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LiftKind {
    Normal,
    Abnormal,
    Neither,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LiftVerdict {
    pub kind: LiftKind,
    /// Residual of the condition that decided the verdict. For `Neither` the
    /// smaller of the two violations.
    pub max_residual: f64,
    /// `max |u_i - h_{X_i}(λ)|` over samples.
    pub normal_residual: f64,
    /// `max |h_{X_i}(λ)|` over samples.
    pub abnormal_residual: f64,
    /// `min ‖p‖` over samples.
    pub min_covector_norm: f64,
}

/// Checks conditions (N) `u_i = h_{X_i}(λ)` and (A) `h_{X_i}(λ) = 0, λ ≠ 0`
/// on a sampled lift. (N) takes precedence when both hold.
pub fn verify_lift(s: &SRStructure, states: &[CotangentState], controls: &[DVector<f64>], tol: f64) -> Result<LiftVerdict> {
    if states.len() != controls.len() || states.is_empty() {
        return Err(invalid("lift needs matching, nonempty state and control samples"));
    }
    let mut normal_residual: f64 = 0.0;
    let mut abnormal_residual: f64 = 0.0;
    let mut min_covector_norm = f64::INFINITY;
    for (st, u) in states.iter().zip(controls) {
        if u.len() != s.frame_size() {
            return Err(invalid("control sample has the wrong number of components"));
        }
        for i in 0..s.frame_size() {
            let h = st.p.dot(&s.field(i, &st.q));
            normal_residual = normal_residual.max((u[i] - h).abs());
            abnormal_residual = abnormal_residual.max(h.abs());
        }
        min_covector_norm = min_covector_norm.min(st.p.norm());
    }
    let abnormal_ok = abnormal_residual < tol && min_covector_norm > tol;
    let (kind, max_residual) = if normal_residual < tol {
        (LiftKind::Normal, normal_residual)
    } else if abnormal_ok {
        (LiftKind::Abnormal, abnormal_residual)
    } else {
        let abnormal_violation = if min_covector_norm > tol { abnormal_residual } else { f64::INFINITY };
        (LiftKind::Neither, normal_residual.min(abnormal_violation))
    };
    Ok(LiftVerdict { kind, max_residual, normal_residual, abnormal_residual, min_covector_norm })
}

pub fn verify_trace(s: &SRStructure, trace: &GeodesicTrace, tol: f64) -> Result<LiftVerdict> {
    verify_lift(s, &trace.states, &trace.controls, tol)
}

/// Samples of a lift `λ̇ = Σ u_i h⃗_{X_i}(λ)` driven by a given control.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedPath {
    pub times: Vec<f64>,
    pub states: Vec<CotangentState>,
    pub controls: Vec<DVector<f64>>,
}

fn lifted_field<'a>(s: &'a SRStructure, u: &'a DVector<f64>, sign: f64) -> impl Fn(&DVector<f64>) -> DVector<f64> + 'a {
    let n = s.dim();
    move |y: &DVector<f64>| {
        let q = y.rows(0, n).into_owned();
        let p = y.rows(n, n).into_owned();
        let mut out = DVector::zeros(2 * n);
        for (i, &ui) in u.iter().enumerate() {
            if ui != 0.0 {
                let w = sign * ui;
                out.rows_mut(0, n).axpy(w, &s.field(i, &q), 1.0);
                out.rows_mut(n, n).axpy(-w, &s.jacobian(i, &q).tr_mul(&p), 1.0);
            }
        }
        out
    }
}

/// Integrates the lifted control system forward from `initial`.
pub fn integrate_lift(s: &SRStructure, initial: &CotangentState, u: &ControlGrid, spec: &IntegratorSpec) -> Result<LiftedPath> {
    check_point(s, &initial.q, u)?;
    let mut path = LiftedPath { times: vec![0.0], states: vec![initial.clone()], controls: vec![u.control(0)] };
    let mut y = initial.to_vector();
    for k in 0..u.intervals() {
        let (a, b) = u.bounds(k);
        let uk = u.control(k);
        let traj = integrate_ode(lifted_field(s, &uk, 1.0), &y, b - a, spec).map_err(|e| shift_blowup(e, a))?;
        for (t, st) in traj.times.iter().zip(&traj.states).skip(1) {
            path.times.push(a + t);
            path.states.push(CotangentState::from_vector(st));
            path.controls.push(uk.clone());
        }
        y = traj.last().clone();
    }
    Ok(path)
}

/// Integrates the lifted control system backward from `terminal` at time
/// `T` down to 0. The result is indexed forward in time.
pub fn integrate_lift_backward(
    s: &SRStructure,
    terminal: &CotangentState,
    u: &ControlGrid,
    spec: &IntegratorSpec,
) -> Result<LiftedPath> {
    check_point(s, &terminal.q, u)?;
    let last = u.intervals() - 1;
    let mut times = vec![u.horizon()];
    let mut states = vec![terminal.clone()];
    let mut controls = vec![u.control(last)];
    let mut y = terminal.to_vector();
    for k in (0..u.intervals()).rev() {
        let (a, b) = u.bounds(k);
        let uk = u.control(k);
        let traj = integrate_ode(lifted_field(s, &uk, -1.0), &y, b - a, spec)?;
        for (t, st) in traj.times.iter().zip(&traj.states).skip(1) {
            times.push(b - t);
            states.push(CotangentState::from_vector(st));
            controls.push(uk.clone());
        }
        y = traj.last().clone();
    }
    times.reverse();
    states.reverse();
    controls.reverse();
    Ok(LiftedPath { times, states, controls })
}

/// Abnormal multipliers at the end point: a basis of the left null space of
/// `D_u E_x`, i.e. covectors `λ₁` with `λ₁ ∘ D_u E_x = 0`.
pub fn abnormal_directions(
    s: &SRStructure,
    x: &DVector<f64>,
    u: &ControlGrid,
    tol: f64,
    spec: &IntegratorSpec,
) -> Result<Vec<DVector<f64>>> {
    let jac = endpoint_jacobian(s, x, u, spec)?;
    let n = jac.nrows();
    // pad so the SVD returns a full n × n left factor
    let cols = jac.ncols().max(n);
    let mut padded = DMatrix::zeros(n, cols);
    padded.columns_mut(0, jac.ncols()).copy_from(&jac);
    let svd = padded.svd(true, false);
    let uu = svd.u.expect("left singular vectors requested");
    let smax = svd.singular_values.max();
    let threshold = tol * smax;
    Ok((0..n)
        .filter(|&j| svd.singular_values[j] <= threshold)
        .map(|j| uu.column(j).into_owned())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structures::{glued_structure, heisenberg_structure};

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_vec(xs.to_vec())
    }

    fn rk4() -> IntegratorSpec {
        IntegratorSpec::rk4(1e-3).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(ControlGrid::new(DMatrix::zeros(2, 0), 1.0).is_err());
        assert!(ControlGrid::new(DMatrix::zeros(2, 3), 0.0).is_err());
        let mut bad = DMatrix::zeros(2, 3);
        bad[(0, 1)] = f64::NAN;
        assert!(ControlGrid::new(bad, 1.0).is_err());
        assert!(ControlGrid::with_interval(DMatrix::zeros(2, 3), 0.25, 1.0).is_err());
    }

    #[test]
    fn short_horizons_are_resampled() {
        let s = heisenberg_structure();
        let init = CotangentState::from_slices(&[0.0, 0.0, 0.0], &[0.2, 1.0, 1.0]).unwrap();
        let tr = crate::flow::integrate_geodesic(&s, &init, 1.0, &rk4()).unwrap();
        let p = corank_profile(&s, &tr, &[0.0, 0.005, 0.5], &CorankSettings::default(), &rk4()).unwrap();
        assert_eq!(p.coranks, vec![1, 0, 0]);
    }

    #[test]
    fn truncation_keeps_partial_interval() {
        let g = ControlGrid::constant(&v(&[0.0, 1.0]), 64, 1.0).unwrap();
        let t = g.truncate(0.5 + 1e-4).unwrap();
        assert_eq!(t.intervals(), 33);
        let (a, b) = t.bounds(32);
        assert!((a - 0.5).abs() < 1e-15 && (b - 0.5001).abs() < 1e-15);
        assert_eq!(g.truncate(0.5).unwrap().intervals(), 32);
        assert!(g.truncate(0.0).is_err());
        assert!(g.truncate(1.5).is_err());
    }

    #[test]
    fn endpoint_examples() {
        let s = glued_structure();
        let zero = ControlGrid::constant(&v(&[0.0, 0.0]), 4, 1.0).unwrap();
        let x = v(&[0.3, -0.2, 0.7]);
        assert_eq!(endpoint_map(&s, &x, &zero, &rk4()).unwrap(), x);
        let up = ControlGrid::constant(&v(&[0.0, 1.0]), 64, 1.0).unwrap();
        let end = endpoint_map(&s, &v(&[0.0, -1.0, 0.0]), &up, &rk4()).unwrap();
        assert!(end.norm() < 1e-6, "{end}");
        let right = ControlGrid::constant(&v(&[1.0, 0.0]), 8, 1.0).unwrap();
        let end = endpoint_map(&s, &v(&[0.0, 0.0, 0.0]), &right, &rk4()).unwrap();
        assert!((end - v(&[1.0, 0.0, 0.0])).norm() < 1e-12);
    }

    #[test]
    fn wrong_control_size_rejected() {
        let s = glued_structure();
        let u = ControlGrid::constant(&v(&[0.0, 1.0, 2.0]), 2, 1.0).unwrap();
        assert!(endpoint_map(&s, &v(&[0.0, 0.0, 0.0]), &u, &rk4()).is_err());
    }

    #[test]
    fn zero_control_heisenberg_spans_distribution() {
        let s = heisenberg_structure();
        let u = ControlGrid::constant(&v(&[0.0, 0.0]), 1, 1.0).unwrap();
        let j = endpoint_jacobian(&s, &v(&[0.0, 0.0, 0.0]), &u, &rk4()).unwrap();
        assert_eq!(j, DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]));
        assert_eq!(corank(&s, &v(&[0.0, 0.0, 0.0]), &u, 1e-8, &rk4()).unwrap(), 1);
    }

    #[test]
    fn straight_line_coranks() {
        let s = glued_structure();
        let x = v(&[0.0, -1.0, 0.0]);
        let line = |t: f64| ControlGrid::constant(&v(&[0.0, 1.0]), (64.0 * t) as usize, t).unwrap();
        assert_eq!(corank(&s, &x, &line(0.5), 1e-8, &rk4()).unwrap(), 1);
        assert_eq!(corank(&s, &x, &line(1.5), 1e-8, &rk4()).unwrap(), 0);
    }

    #[test]
    fn jumps_from_profiles() {
        let p = |c: Vec<usize>| CorankProfile { times: vec![0.5, 1.0, 1.5], coranks: c, tolerance: 1e-8 };
        assert!(detect_rank_jumps(&p(vec![1, 1, 1])).is_empty());
        assert_eq!(detect_rank_jumps(&p(vec![1, 1, 0])), vec![RankJump { lower: 1.0, upper: 1.5, drop: 1 }]);
        assert_eq!(detect_rank_jumps(&p(vec![2, 1, 0])).len(), 2);
        assert_eq!(detect_rank_jumps(&p(vec![3, 1, 1]))[0].drop, 2);
    }

    #[test]
    fn lift_verdict_needs_matching_samples() {
        let s = glued_structure();
        let st = CotangentState::from_slices(&[0.0; 3], &[0.0, 0.0, 1.0]).unwrap();
        assert!(verify_lift(&s, &[st], &[], 1e-10).is_err());
    }

    #[test]
    fn zero_covector_is_not_abnormal() {
        let s = glued_structure();
        let st = CotangentState::from_slices(&[0.0; 3], &[0.0; 3]).unwrap();
        let verdict = verify_lift(&s, &[st], &[v(&[1.0, 0.0])], 1e-10).unwrap();
        assert_eq!(verdict.kind, LiftKind::Neither);
        assert_eq!(verdict.max_residual, 1.0);
    }
}
