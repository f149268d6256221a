//! Normal Hamiltonian flow of a frame-defined structure.
//!
//! With `h_i(q, p) = ⟨p, X_i(q)⟩` the Hamiltonian is `H = ½ Σ h_i²` and its
//! vector field in canonical coordinates is
//!
//! ```text
//! q̇ =  Σ h_i X_i(q)
//! ṗ = -Σ h_i DX_i(q)ᵀ p
//! ```
//!
//! Projections of its integral curves are the normal geodesics.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::numerics::{integrate_ode, integrate_ode_final, IntegratorSpec};
use crate::structures::SRStructure;

/// Residual allowed when solving for a minimal control.
pub const HORIZONTAL_TOLERANCE: f64 = 1e-8;

/// A point of T*ℝⁿ in canonical coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct CotangentState {
    pub q: DVector<f64>,
    pub p: DVector<f64>,
}

impl CotangentState {
    pub fn new(q: DVector<f64>, p: DVector<f64>) -> Result<Self> {
        if q.len() != p.len() {
            return Err(invalid(format!("point has dimension {} but covector has {}", q.len(), p.len())));
        }
        if q.iter().chain(p.iter()).any(|v| !v.is_finite()) {
            return Err(invalid("cotangent state has non-finite components"));
        }
        Ok(CotangentState { q, p })
    }

    pub fn from_slices(q: &[f64], p: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(q), DVector::from_column_slice(p))
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    /// Stacked `(q, p)` vector of length `2n`.
    pub fn to_vector(&self) -> DVector<f64> {
        let n = self.dim();
        let mut v = DVector::zeros(2 * n);
        v.rows_mut(0, n).copy_from(&self.q);
        v.rows_mut(n, n).copy_from(&self.p);
        v
    }

    pub fn from_vector(v: &DVector<f64>) -> Self {
        let n = v.len() / 2;
        CotangentState { q: v.rows(0, n).into_owned(), p: v.rows(n, n).into_owned() }
    }
}

/// Which way the Hamiltonian flow was run to produce a trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeDirection {
    Forward,
    /// Samples are `λ(-τ)` for elapsed time `τ = times[k]`.
    Backward,
}

/// Time-sampled normal lift with its control `u_i = h_{X_i}(λ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeodesicTrace {
    pub structure_label: String,
    pub times: Vec<f64>,
    pub states: Vec<CotangentState>,
    pub controls: Vec<DVector<f64>>,
    pub integrator: IntegratorSpec,
    pub direction: TimeDirection,
}

impl GeodesicTrace {
    pub fn duration(&self) -> f64 {
        *self.times.last().unwrap_or(&0.0)
    }

    pub fn initial(&self) -> &CotangentState {
        &self.states[0]
    }

    pub fn final_state(&self) -> &CotangentState {
        self.states.last().expect("trace is never empty")
    }

    pub fn positions(&self) -> impl Iterator<Item = &DVector<f64>> {
        self.states.iter().map(|s| &s.q)
    }

    /// Linear interpolation of the sampled state at time `t`, clamped to the
    /// trace horizon.
    pub fn state_at(&self, t: f64) -> CotangentState {
        let (k, w) = self.locate(t);
        if w == 0.0 {
            return self.states[k].clone();
        }
        let a = &self.states[k];
        let b = &self.states[k + 1];
        CotangentState { q: &a.q * (1.0 - w) + &b.q * w, p: &a.p * (1.0 - w) + &b.p * w }
    }

    /// Index `k` and weight `w` with `t ≈ (1 - w) times[k] + w times[k+1]`.
    fn locate(&self, t: f64) -> (usize, f64) {
        let last = self.times.len() - 1;
        if t <= self.times[0] || last == 0 {
            return (0, 0.0);
        }
        if t >= self.times[last] {
            return (last, 0.0);
        }
        let k = self.times.partition_point(|&s| s <= t) - 1;
        let w = (t - self.times[k]) / (self.times[k + 1] - self.times[k]);
        (k, w)
    }

    /// Mean of the piecewise-linear control over `[a, b]`.
    pub fn mean_control(&self, a: f64, b: f64) -> DVector<f64> {
        let m = self.controls[0].len();
        if b <= a {
            return self.control_at(a);
        }
        let control_lerp = |t: f64| self.control_at(t);
        // breakpoints of the piecewise-linear interpolant inside (a, b)
        let mut nodes = vec![a];
        nodes.extend(self.times.iter().copied().filter(|&s| s > a && s < b));
        nodes.push(b);
        let mut acc = DVector::zeros(m);
        for w in nodes.windows(2) {
            acc += (control_lerp(w[0]) + control_lerp(w[1])) * (0.5 * (w[1] - w[0]));
        }
        acc / (b - a)
    }

    pub fn control_at(&self, t: f64) -> DVector<f64> {
        let (k, w) = self.locate(t);
        if w == 0.0 {
            self.controls[k].clone()
        } else {
            &self.controls[k] * (1.0 - w) + &self.controls[k + 1] * w
        }
    }
}

fn check_dims(s: &SRStructure, st: &CotangentState) -> Result<()> {
    if st.q.len() != s.dim() || st.p.len() != s.dim() {
        return Err(invalid(format!(
            "structure '{}' lives on R^{} but the state has dimension ({}, {})",
            s.label(),
            s.dim(),
            st.q.len(),
            st.p.len()
        )));
    }
    Ok(())
}

/// `(h_{X_1}, ..., h_{X_m})` at `st`.
pub fn frame_hamiltonians(s: &SRStructure, st: &CotangentState) -> DVector<f64> {
    DVector::from_iterator(s.frame_size(), (0..s.frame_size()).map(|i| st.p.dot(&s.field(i, &st.q))))
}

pub fn hamiltonian(s: &SRStructure, st: &CotangentState) -> f64 {
    0.5 * frame_hamiltonians(s, st).norm_squared()
}

fn hamiltonian_rhs(s: &SRStructure, q: &DVector<f64>, p: &DVector<f64>) -> DVector<f64> {
    let n = s.dim();
    let mut out = DVector::zeros(2 * n);
    for i in 0..s.frame_size() {
        let xi = s.field(i, q);
        let h = p.dot(&xi);
        if h == 0.0 {
            continue;
        }
        let dxi: DMatrix<f64> = s.jacobian(i, q);
        out.rows_mut(0, n).axpy(h, &xi, 1.0);
        out.rows_mut(n, n).axpy(-h, &dxi.tr_mul(p), 1.0);
    }
    out
}

/// `H⃗(λ)` as a vector `(q̇, ṗ)` in ℝ²ⁿ.
pub fn hamiltonian_vector_field(s: &SRStructure, st: &CotangentState) -> DVector<f64> {
    hamiltonian_rhs(s, &st.q, &st.p)
}

fn flow_field(s: &SRStructure, sign: f64) -> impl Fn(&DVector<f64>) -> DVector<f64> + '_ {
    let n = s.dim();
    move |y: &DVector<f64>| {
        let q = y.rows(0, n).into_owned();
        let p = y.rows(n, n).into_owned();
        let mut f = hamiltonian_rhs(s, &q, &p);
        if sign < 0.0 {
            f.neg_mut();
        }
        f
    }
}

/// Integrates `λ̇ = H⃗(λ)` for `duration`. A negative duration runs the
/// flow backward; the trace then stays forward-indexed in elapsed time and
/// is tagged [`TimeDirection::Backward`].
pub fn integrate_geodesic(
    s: &SRStructure,
    initial: &CotangentState,
    duration: f64,
    spec: &IntegratorSpec,
) -> Result<GeodesicTrace> {
    check_dims(s, initial)?;
    if !duration.is_finite() {
        return Err(invalid("duration must be finite"));
    }
    let (sign, direction) = if duration < 0.0 { (-1.0, TimeDirection::Backward) } else { (1.0, TimeDirection::Forward) };
    let traj = integrate_ode(flow_field(s, sign), &initial.to_vector(), duration.abs(), spec)?;
    let states: Vec<CotangentState> = traj.states.iter().map(CotangentState::from_vector).collect();
    let controls = states.iter().map(|st| frame_hamiltonians(s, st)).collect();
    Ok(GeodesicTrace {
        structure_label: s.label().to_string(),
        times: traj.times,
        states,
        controls,
        integrator: *spec,
        direction,
    })
}

/// Final cotangent state of the flow after `duration` (may be negative).
pub fn flow_endpoint(
    s: &SRStructure,
    initial: &CotangentState,
    duration: f64,
    spec: &IntegratorSpec,
) -> Result<CotangentState> {
    check_dims(s, initial)?;
    let sign = if duration < 0.0 { -1.0 } else { 1.0 };
    let end = integrate_ode_final(flow_field(s, sign), &initial.to_vector(), duration.abs(), spec)?;
    Ok(CotangentState::from_vector(&end))
}

/// `exp_x(p0)`: position at time 1 of the normal geodesic with initial
/// covector `p0`.
pub fn exp_map(s: &SRStructure, x: &DVector<f64>, p0: &DVector<f64>, spec: &IntegratorSpec) -> Result<DVector<f64>> {
    let init = CotangentState::new(x.clone(), p0.clone())?;
    Ok(flow_endpoint(s, &init, 1.0, spec)?.q)
}

/// Least-norm `u` with `Σ u_i X_i(q) = v`.
pub fn minimal_control(s: &SRStructure, q: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
    minimal_control_with_tolerance(s, q, v, HORIZONTAL_TOLERANCE)
}

pub fn minimal_control_with_tolerance(
    s: &SRStructure,
    q: &DVector<f64>,
    v: &DVector<f64>,
    tolerance: f64,
) -> Result<DVector<f64>> {
    if q.len() != s.dim() || v.len() != s.dim() {
        return Err(invalid("point and velocity must match the structure dimension"));
    }
    let frame = s.frame_matrix(q);
    let svd = frame.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = if smax > 0.0 { smax * 1e-12 } else { 1.0 };
    let u = svd.solve(v, eps).map_err(|e| invalid(e.to_string()))?;
    let residual = (&frame * &u - v).norm();
    if residual > tolerance {
        return Err(Error::NotHorizontal { residual, tolerance });
    }
    Ok(u)
}

/// Trapezoid-rule energy `½∫|u|²` and length `∫|u|` of a trace.
pub fn energy_and_length(trace: &GeodesicTrace) -> (f64, f64) {
    let mut energy = 0.0;
    let mut length = 0.0;
    for k in 1..trace.times.len() {
        let dt = trace.times[k] - trace.times[k - 1];
        let (a, b) = (trace.controls[k - 1].norm(), trace.controls[k].norm());
        energy += 0.25 * (a * a + b * b) * dt;
        length += 0.5 * (a + b) * dt;
    }
    (energy, length)
}
