//! Families of normal geodesics branching off an abnormal segment, the
//! spray map of the glued structure, product realizations of corank
//! functions and the planar magnetic formulation.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::endpoint::{verify_lift, LiftVerdict};
use crate::error::{invalid, Error, Result};
use crate::flow::{flow_endpoint, frame_hamiltonians, hamiltonian, integrate_geodesic, CotangentState, GeodesicTrace, TimeDirection};
use crate::numerics::{integrate_ode, numerical_rank, IntegratorSpec, RankResult, DEFAULT_RANK_TOLERANCE};
use crate::structures::{glued_structure, product_structure, SRStructure};

/// Residual bound for accepting a covector as an abnormal direction.
pub const ABNORMAL_TOLERANCE: f64 = 1e-8;

/// Input of [`branching_family`]. Each entry of `alphas` holds one
/// coefficient per abnormal direction.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchFamilySpec {
    pub base_trace: GeodesicTrace,
    pub branch_time: f64,
    pub abnormal_directions: Vec<DVector<f64>>,
    pub alphas: Vec<Vec<f64>>,
}

impl BranchFamilySpec {
    /// One abnormal direction with scalar coefficients.
    pub fn single_direction(base_trace: GeodesicTrace, branch_time: f64, direction: DVector<f64>, alphas: &[f64]) -> Self {
        BranchFamilySpec {
            base_trace,
            branch_time,
            abnormal_directions: vec![direction],
            alphas: alphas.iter().map(|&a| vec![a]).collect(),
        }
    }

    fn check_shape(&self, n: usize) -> Result<()> {
        let t = self.branch_time;
        if !(t > 0.0 && t < self.base_trace.duration()) {
            return Err(invalid(format!(
                "branch time {t} must lie in (0, {})",
                self.base_trace.duration()
            )));
        }
        if self.base_trace.direction != TimeDirection::Forward {
            return Err(invalid("base trace must run forward in time"));
        }
        if self.abnormal_directions.is_empty() {
            return Err(invalid("at least one abnormal direction is required"));
        }
        for d in &self.abnormal_directions {
            if d.len() != n {
                return Err(invalid(format!("abnormal direction has length {} instead of {n}", d.len())));
            }
            if d.norm() == 0.0 || d.iter().any(|v| !v.is_finite()) {
                return Err(invalid("abnormal directions must be finite and nonzero"));
            }
        }
        for a in &self.alphas {
            if a.len() != self.abnormal_directions.len() {
                return Err(invalid(format!(
                    "coefficient vector has {} entries for {} directions",
                    a.len(),
                    self.abnormal_directions.len()
                )));
            }
        }
        Ok(())
    }
}

/// Transports the covector `direction` at `base(t)` backward to time 0 along
/// the base control and evaluates condition (A) on the result.
pub fn check_abnormal_direction(
    s: &SRStructure,
    base: &GeodesicTrace,
    t: f64,
    direction: &DVector<f64>,
    ispec: &IntegratorSpec,
) -> Result<LiftVerdict> {
    let n = s.dim();
    let q_t = flow_endpoint(s, base.initial(), t, ispec)?.q;
    // state (q, p, τ) with τ the elapsed backward time
    let mut y0 = DVector::zeros(2 * n + 1);
    y0.rows_mut(0, n).copy_from(&q_t);
    y0.rows_mut(n, n).copy_from(direction);
    let field = |y: &DVector<f64>| {
        let q = y.rows(0, n).into_owned();
        let p = y.rows(n, n).into_owned();
        let u = base.control_at(t - y[2 * n]);
        let mut out = DVector::zeros(2 * n + 1);
        for (i, &ui) in u.iter().enumerate() {
            if ui != 0.0 {
                out.rows_mut(0, n).axpy(-ui, &s.field(i, &q), 1.0);
                out.rows_mut(n, n).axpy(ui, &s.jacobian(i, &q).tr_mul(&p), 1.0);
            }
        }
        out[2 * n] = 1.0;
        out
    };
    let traj = integrate_ode(field, &y0, t, ispec)?;
    let mut states = Vec::with_capacity(traj.states.len());
    let mut controls = Vec::with_capacity(traj.states.len());
    for (tau, y) in traj.times.iter().zip(&traj.states) {
        states.push(CotangentState { q: y.rows(0, n).into_owned(), p: y.rows(n, n).into_owned() });
        controls.push(base.control_at(t - tau));
    }
    verify_lift(s, &states, &controls, ABNORMAL_TOLERANCE)
}

/// `γ_α(s) = π ∘ e^{(s - t)H⃗}(λ(t) + α)` for each coefficient vector.
///
/// Each returned trace covers `[0, t + extend_duration]`: the part before
/// `t` is the backward flow from `λ(t) + α`, the rest the forward flow.
pub fn branching_family(
    s: &SRStructure,
    spec: &BranchFamilySpec,
    extend_duration: f64,
    ispec: &IntegratorSpec,
) -> Result<Vec<GeodesicTrace>> {
    spec.check_shape(s.dim())?;
    if !(extend_duration.is_finite() && extend_duration >= 0.0) {
        return Err(invalid("extension duration must be nonnegative"));
    }
    let t = spec.branch_time;
    for d in &spec.abnormal_directions {
        let verdict = check_abnormal_direction(s, &spec.base_trace, t, d, ispec)?;
        let ok = verdict.abnormal_residual < ABNORMAL_TOLERANCE && verdict.min_covector_norm > ABNORMAL_TOLERANCE;
        if !ok {
            let residual = if verdict.min_covector_norm > ABNORMAL_TOLERANCE {
                verdict.abnormal_residual
            } else {
                f64::INFINITY
            };
            return Err(Error::InvalidAbnormalDirection { residual, tolerance: ABNORMAL_TOLERANCE });
        }
    }
    let lambda_t = flow_endpoint(s, spec.base_trace.initial(), t, ispec)?;
    spec.alphas
        .iter()
        .map(|coeffs| {
            let mut p = lambda_t.p.clone();
            for (c, d) in coeffs.iter().zip(&spec.abnormal_directions) {
                p.axpy(*c, d, 1.0);
            }
            let start = CotangentState { q: lambda_t.q.clone(), p };
            let back = integrate_geodesic(s, &start, -t, ispec)?;
            let fwd = integrate_geodesic(s, &start, extend_duration, ispec)?;
            Ok(join_at(s, t, back, fwd, ispec))
        })
        .collect()
}

fn join_at(s: &SRStructure, t: f64, back: GeodesicTrace, fwd: GeodesicTrace, ispec: &IntegratorSpec) -> GeodesicTrace {
    let mut times: Vec<f64> = back.times.iter().rev().map(|tau| t - tau).collect();
    let mut states: Vec<CotangentState> = back.states.into_iter().rev().collect();
    let mut controls: Vec<DVector<f64>> = back.controls.into_iter().rev().collect();
    times.extend(fwd.times.iter().skip(1).map(|tau| t + tau));
    states.extend(fwd.states.into_iter().skip(1));
    controls.extend(fwd.controls.into_iter().skip(1));
    GeodesicTrace {
        structure_label: s.label().to_string(),
        times,
        states,
        controls,
        integrator: *ispec,
        direction: TimeDirection::Forward,
    }
}

/// Initial state of the spray: `(0, -T, 0)` with covector `(0, 1, α)`.
pub fn spray_initial_state(alpha: f64, horizon: f64) -> Result<CotangentState> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(invalid(format!("spray offset T must be positive, got {horizon}")));
    }
    CotangentState::from_slices(&[0.0, -horizon, 0.0], &[0.0, 1.0, alpha])
}

/// `Φ(t, α)`: position after time `t + T` on the glued structure.
pub fn spray_map(t: f64, alpha: f64, horizon: f64, ispec: &IntegratorSpec) -> Result<DVector<f64>> {
    let init = spray_initial_state(alpha, horizon)?;
    let elapsed = t + horizon;
    if elapsed < 0.0 {
        return Err(invalid(format!("spray time {t} precedes the start at {}", -horizon)));
    }
    Ok(flow_endpoint(&glued_structure(), &init, elapsed, ispec)?.q)
}

/// Spray curve `α ↦ γ_α` sampled on `[0, duration]`, time measured from the
/// start at `(0, -T, 0)`.
pub fn spray_trace(alpha: f64, horizon: f64, duration: f64, ispec: &IntegratorSpec) -> Result<GeodesicTrace> {
    integrate_geodesic(&glued_structure(), &spray_initial_state(alpha, horizon)?, duration, ispec)
}

/// Central-difference Jacobian of `Φ` at `(t, 0)` with rows `∂Φ/∂t` and
/// `∂Φ/∂α`, and its numerical rank.
pub fn spray_embedding_check(t: f64, horizon: f64, fd_step: f64, ispec: &IntegratorSpec) -> Result<(DMatrix<f64>, RankResult)> {
    if !(fd_step.is_finite() && fd_step > 0.0) {
        return Err(invalid("finite-difference step must be positive"));
    }
    let dt = (spray_map(t + fd_step, 0.0, horizon, ispec)? - spray_map(t - fd_step, 0.0, horizon, ispec)?) / (2.0 * fd_step);
    let da = (spray_map(t, fd_step, horizon, ispec)? - spray_map(t, -fd_step, horizon, ispec)?) / (2.0 * fd_step);
    let jac = DMatrix::from_rows(&[dt.transpose(), da.transpose()]);
    let rank = numerical_rank(&jac, DEFAULT_RANK_TOLERANCE)?;
    Ok((jac, rank))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorankJump {
    pub time: f64,
    pub drop: usize,
}

/// Nonincreasing, left-continuous corank function on `[0, 1]`.
///
/// `immediate_drop` is the drop between `f(0)` and `f(0+)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorankFunctionSpec {
    pub initial: usize,
    #[serde(default)]
    pub immediate_drop: usize,
    #[serde(default)]
    pub jumps: Vec<CorankJump>,
    #[serde(rename = "final")]
    pub final_value: usize,
}

impl CorankFunctionSpec {
    pub fn new(initial: usize, jumps: &[(f64, usize)], final_value: usize) -> Self {
        CorankFunctionSpec {
            initial,
            immediate_drop: 0,
            jumps: jumps.iter().map(|&(time, drop)| CorankJump { time, drop }).collect(),
            final_value,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.initial == 0 {
            return Err(invalid("f(0) = 0 forces an empty product; the corank function must start at 1 or more"));
        }
        let mut prev = 0.0;
        for j in &self.jumps {
            if !(j.time > 0.0 && j.time < 1.0) {
                return Err(invalid(format!("jump time {} must lie in (0, 1)", j.time)));
            }
            if j.time <= prev {
                return Err(invalid("jump times must be strictly increasing"));
            }
            if j.drop == 0 {
                return Err(invalid(format!("jump at {} must drop by at least 1", j.time)));
            }
            prev = j.time;
        }
        let total: usize = self.immediate_drop + self.jumps.iter().map(|j| j.drop).sum::<usize>();
        if total > self.initial {
            return Err(invalid(format!(
                "infeasible corank function: drops sum to {total} but f(0) = {}, so f(1) would be negative",
                self.initial
            )));
        }
        if self.initial - total != self.final_value {
            return Err(invalid(format!(
                "infeasible corank function: f(0) = {} minus drops {total} gives {}, not f(1) = {}",
                self.initial,
                self.initial - total,
                self.final_value
            )));
        }
        Ok(())
    }

    pub fn eval(&self, t: f64) -> usize {
        if t <= 0.0 {
            return self.initial;
        }
        let passed: usize = self.jumps.iter().filter(|j| j.time < t).map(|j| j.drop).sum();
        self.initial - self.immediate_drop - passed
    }
}

/// Product of `f(0)` glued structures carrying a normal geodesic whose
/// corank function is `f`, together with that geodesic on `[0, 1]`.
pub fn build_corank_realization(f: &CorankFunctionSpec, ispec: &IntegratorSpec) -> Result<(SRStructure, GeodesicTrace)> {
    f.validate()?;
    let factors = vec![glued_structure(); f.initial];
    let product = product_structure(&factors)?;
    let mut q = Vec::with_capacity(3 * f.initial);
    let mut p = Vec::with_capacity(3 * f.initial);
    // strictly normal components on the Heisenberg side
    for _ in 0..f.immediate_drop {
        q.extend([0.0, 1.0, 0.0]);
        p.extend([0.0, 1.0, 0.0]);
    }
    // γ(· - t_j) leaves the Martinet surface at time t_j
    for j in &f.jumps {
        for _ in 0..j.drop {
            q.extend([0.0, -j.time, 0.0]);
            p.extend([0.0, 1.0, 0.0]);
        }
    }
    for _ in 0..f.final_value {
        q.extend([0.0; 3]);
        p.extend([0.0; 3]);
    }
    let init = CotangentState::from_slices(&q, &p)?;
    let trace = integrate_geodesic(&product, &init, 1.0, ispec)?;
    Ok((product, trace))
}

/// Planar charged-particle problem `κ = λ_c B(x, y)` at constant speed.
#[derive(Clone)]
pub struct MagneticSpec {
    pub field: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
    pub charge: f64,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
}

impl fmt::Debug for MagneticSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MagneticSpec")
            .field("charge", &self.charge)
            .field("x", &self.x)
            .field("y", &self.y)
            .field("heading", &self.heading)
            .field("speed", &self.speed)
            .finish_non_exhaustive()
    }
}

impl MagneticSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.speed.is_finite() && self.speed > 0.0) {
            return Err(invalid(format!("speed must be positive, got {}", self.speed)));
        }
        if ![self.charge, self.x, self.y, self.heading].iter().all(|v| v.is_finite()) {
            return Err(invalid("magnetic initial data must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanarTrace {
    pub times: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub heading: Vec<f64>,
}

/// Integrates `ẋ = v cos φ, ẏ = v sin φ, φ̇ = λ_c v B(x, y)`.
pub fn magnetic_geodesic(spec: &MagneticSpec, duration: f64, ispec: &IntegratorSpec) -> Result<PlanarTrace> {
    spec.validate()?;
    let (v, charge) = (spec.speed, spec.charge);
    let field = |s: &DVector<f64>| {
        let (x, y, phi) = (s[0], s[1], s[2]);
        let curvature = if charge == 0.0 { 0.0 } else { charge * v * (spec.field)(x, y) };
        DVector::from_vec(vec![v * phi.cos(), v * phi.sin(), curvature])
    };
    let traj = integrate_ode(field, &DVector::from_vec(vec![spec.x, spec.y, spec.heading]), duration, ispec)?;
    Ok(PlanarTrace {
        x: traj.states.iter().map(|s| s[0]).collect(),
        y: traj.states.iter().map(|s| s[1]).collect(),
        heading: traj.states.iter().map(|s| s[2]).collect(),
        times: traj.times,
    })
}

/// Magnetic problem equivalent to the normal geodesic of a magnetic-type
/// structure with initial state `(q0, p0)`: charge `p_z / v`, heading of
/// `(h_X, h_Y)` and speed `v = √(2H)`.
pub fn magnetic_spec_for(s: &SRStructure, q0: &DVector<f64>, p0: &DVector<f64>) -> Result<MagneticSpec> {
    let pot = s
        .potential()
        .ok_or_else(|| invalid(format!("structure '{}' has no potential A", s.label())))?
        .clone();
    let init = CotangentState::new(q0.clone(), p0.clone())?;
    if init.dim() != 3 {
        return Err(invalid("magnetic structures are three-dimensional"));
    }
    let h = frame_hamiltonians(s, &init);
    let speed = h.norm();
    if speed == 0.0 {
        return Err(invalid("initial covector annihilates the distribution"));
    }
    Ok(MagneticSpec {
        field: Arc::new(move |x, y| pot.field_b(x, y)),
        charge: p0[2] / speed,
        x: q0[0],
        y: q0[1],
        heading: h[1].atan2(h[0]),
        speed,
    })
}

/// Sup distance between the xy-projection of the normal geodesic and the
/// equivalent magnetic trajectory. Requires `H(λ₀) = ½`.
pub fn magnetic_hamiltonian_equivalence(
    s: &SRStructure,
    q0: &DVector<f64>,
    p0: &DVector<f64>,
    duration: f64,
    ispec: &IntegratorSpec,
) -> Result<f64> {
    let init = CotangentState::new(q0.clone(), p0.clone())?;
    let h = hamiltonian(s, &init);
    if (h - 0.5).abs() > 1e-8 {
        return Err(invalid(format!("initial covector must have H = 1/2, got {h}")));
    }
    let spec = magnetic_spec_for(s, q0, p0)?;
    let trace = integrate_geodesic(s, &init, duration, ispec)?;
    let planar = magnetic_geodesic(&spec, duration, ispec)?;
    Ok(trace
        .states
        .iter()
        .zip(planar.x.iter().zip(&planar.y))
        .map(|(st, (x, y))| (st.q[0] - x).hypot(st.q[1] - y))
        .fold(0.0, f64::max))
}
