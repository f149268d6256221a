//! Sub-Riemannian structures on ℝⁿ presented by a generating frame.
//!
//! A structure is a list of `m` vector fields together with their
//! Jacobians. The distribution at `q` is the span of the fields there and
//! the metric is the one induced by the frame (minimal-control norm).
//!
//! The three-dimensional structures here are all of "magnetic" type:
//! `X = ∂x`, `Y = ∂y + A(x, y) ∂z`, whose bracket is `[X, Y] = B ∂z` with
//! `B = ∂A/∂x`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::expr::{Expr, Var};

/// Smooth nondecreasing transition from 0 (on `t <= 0`) to 1 (on `t >= 1`),
/// built from `s(t) = exp(-1/t)` as `s(t) / (s(t) + s(1 - t))`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BumpFunction;

fn smooth_step_seed(t: f64) -> f64 {
    if t > 0.0 {
        (-1.0 / t).exp()
    } else {
        0.0
    }
}

fn smooth_step_seed_derivative(t: f64) -> f64 {
    if t > 0.0 {
        (-1.0 / t).exp() / (t * t)
    } else {
        0.0
    }
}

impl BumpFunction {
    pub fn eval(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        if t >= 1.0 {
            return 1.0;
        }
        let a = smooth_step_seed(t);
        let b = smooth_step_seed(1.0 - t);
        a / (a + b)
    }

    pub fn derivative(&self, t: f64) -> f64 {
        if t <= 0.0 || t >= 1.0 {
            return 0.0;
        }
        let a = smooth_step_seed(t);
        let b = smooth_step_seed(1.0 - t);
        let da = smooth_step_seed_derivative(t);
        let db = smooth_step_seed_derivative(1.0 - t);
        (da * b + a * db) / ((a + b) * (a + b))
    }
}

pub fn standard_bump() -> BumpFunction {
    BumpFunction
}

type PlanarFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// A planar potential `A(x, y)` with its partial derivatives. `dA/dx` is
/// the magnetic field `B`.
#[derive(Clone)]
pub struct PotentialField {
    label: String,
    a: PlanarFn,
    da_dx: PlanarFn,
    da_dy: PlanarFn,
}

impl fmt::Debug for PotentialField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PotentialField").field("label", &self.label).finish_non_exhaustive()
    }
}

impl PotentialField {
    pub fn new<A, Dx, Dy>(label: impl Into<String>, a: A, da_dx: Dx, da_dy: Dy) -> Self
    where
        A: Fn(f64, f64) -> f64 + Send + Sync + 'static,
        Dx: Fn(f64, f64) -> f64 + Send + Sync + 'static,
        Dy: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        PotentialField { label: label.into(), a: Arc::new(a), da_dx: Arc::new(da_dx), da_dy: Arc::new(da_dy) }
    }

    /// Parses `A(x, y)` and differentiates it symbolically.
    pub fn from_expr(src: &str) -> Result<Self> {
        let a = Expr::parse(src)?;
        let dx = a.diff(Var::X)?;
        let dy = a.diff(Var::Y)?;
        Ok(PotentialField::new(
            src.trim(),
            move |x, y| a.eval(x, y),
            move |x, y| dx.eval(x, y),
            move |x, y| dy.eval(x, y),
        ))
    }

    /// `A(x, y) = x θ(y) + x² θ(1 - y)`: flat Martinet for `y <= 0`,
    /// Heisenberg for `y >= 1`.
    pub fn glued() -> Self {
        let th = standard_bump();
        PotentialField::new(
            "x*theta(y) + x^2*theta(1-y)",
            move |x, y| x * th.eval(y) + x * x * th.eval(1.0 - y),
            move |x, y| th.eval(y) + 2.0 * x * th.eval(1.0 - y),
            move |x, y| x * th.derivative(y) - x * x * th.derivative(1.0 - y),
        )
    }

    pub fn heisenberg() -> Self {
        PotentialField::new("x", |x, _| x, |_, _| 1.0, |_, _| 0.0)
    }

    pub fn flat_martinet() -> Self {
        PotentialField::new("x^2", |x, _| x * x, |x, _| 2.0 * x, |_, _| 0.0)
    }

    pub fn zero() -> Self {
        PotentialField::new("0", |_, _| 0.0, |_, _| 0.0, |_, _| 0.0)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn a(&self, x: f64, y: f64) -> f64 {
        (self.a)(x, y)
    }

    pub fn da_dx(&self, x: f64, y: f64) -> f64 {
        (self.da_dx)(x, y)
    }

    pub fn da_dy(&self, x: f64, y: f64) -> f64 {
        (self.da_dy)(x, y)
    }

    /// Magnetic field `B = ∂A/∂x`.
    pub fn field_b(&self, x: f64, y: f64) -> f64 {
        self.da_dx(x, y)
    }
}

/// A generating frame on ℝⁿ.
pub trait Frame: Send + Sync {
    fn dim(&self) -> usize;
    fn frame_size(&self) -> usize;
    /// `X_i(q)`.
    fn field(&self, i: usize, q: &DVector<f64>) -> DVector<f64>;
    /// `DX_i(q)`, row `r` holding the gradient of component `r`.
    fn jacobian(&self, i: usize, q: &DVector<f64>) -> DMatrix<f64>;
}

struct MagneticFrame {
    potential: PotentialField,
}

impl Frame for MagneticFrame {
    fn dim(&self) -> usize {
        3
    }

    fn frame_size(&self) -> usize {
        2
    }

    fn field(&self, i: usize, q: &DVector<f64>) -> DVector<f64> {
        match i {
            0 => DVector::from_vec(vec![1.0, 0.0, 0.0]),
            1 => DVector::from_vec(vec![0.0, 1.0, self.potential.a(q[0], q[1])]),
            _ => panic!("frame index {i} out of range"),
        }
    }

    fn jacobian(&self, i: usize, q: &DVector<f64>) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(3, 3);
        match i {
            0 => {}
            1 => {
                j[(2, 0)] = self.potential.da_dx(q[0], q[1]);
                j[(2, 1)] = self.potential.da_dy(q[0], q[1]);
            }
            _ => panic!("frame index {i} out of range"),
        }
        j
    }
}

struct ProductFrame {
    factors: Vec<SRStructure>,
    dim_offsets: Vec<usize>,
    frame_offsets: Vec<usize>,
    dim: usize,
    frame_size: usize,
}

impl ProductFrame {
    /// (factor index, local frame index)
    fn locate(&self, i: usize) -> (usize, usize) {
        assert!(i < self.frame_size, "frame index {i} out of range");
        let f = self.frame_offsets.partition_point(|&off| off <= i) - 1;
        (f, i - self.frame_offsets[f])
    }

    fn block<'a>(&self, f: usize, q: &'a DVector<f64>) -> nalgebra::DVectorView<'a, f64> {
        q.rows(self.dim_offsets[f], self.factors[f].dim())
    }
}

impl Frame for ProductFrame {
    fn dim(&self) -> usize {
        self.dim
    }

    fn frame_size(&self) -> usize {
        self.frame_size
    }

    fn field(&self, i: usize, q: &DVector<f64>) -> DVector<f64> {
        let (f, local) = self.locate(i);
        let qf = self.block(f, q).into_owned();
        let mut v = DVector::zeros(self.dim);
        v.rows_mut(self.dim_offsets[f], self.factors[f].dim()).copy_from(&self.factors[f].field(local, &qf));
        v
    }

    fn jacobian(&self, i: usize, q: &DVector<f64>) -> DMatrix<f64> {
        let (f, local) = self.locate(i);
        let qf = self.block(f, q).into_owned();
        let n = self.factors[f].dim();
        let off = self.dim_offsets[f];
        let mut j = DMatrix::zeros(self.dim, self.dim);
        j.view_mut((off, off), (n, n)).copy_from(&self.factors[f].jacobian(local, &qf));
        j
    }
}

/// A sub-Riemannian structure on ℝⁿ given by a generating frame.
/// Cheap to clone; immutable after construction.
#[derive(Clone)]
pub struct SRStructure {
    label: String,
    frame: Arc<dyn Frame>,
    potential: Option<PotentialField>,
    factors: Vec<SRStructure>,
}

impl fmt::Debug for SRStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SRStructure")
            .field("label", &self.label)
            .field("dim", &self.dim())
            .field("frame_size", &self.frame_size())
            .finish()
    }
}

impl SRStructure {
    pub fn from_frame(label: impl Into<String>, frame: Arc<dyn Frame>) -> Self {
        SRStructure { label: label.into(), frame, potential: None, factors: Vec::new() }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn dim(&self) -> usize {
        self.frame.dim()
    }

    pub fn frame_size(&self) -> usize {
        self.frame.frame_size()
    }

    pub fn field(&self, i: usize, q: &DVector<f64>) -> DVector<f64> {
        self.frame.field(i, q)
    }

    pub fn jacobian(&self, i: usize, q: &DVector<f64>) -> DMatrix<f64> {
        self.frame.jacobian(i, q)
    }

    /// The `n × m` matrix whose columns are the frame fields at `q`.
    pub fn frame_matrix(&self, q: &DVector<f64>) -> DMatrix<f64> {
        let cols: Vec<DVector<f64>> = (0..self.frame_size()).map(|i| self.field(i, q)).collect();
        DMatrix::from_columns(&cols)
    }

    /// The planar potential for magnetic-type structures.
    pub fn potential(&self) -> Option<&PotentialField> {
        self.potential.as_ref()
    }

    /// Factors of a product structure (empty otherwise).
    pub fn factors(&self) -> &[SRStructure] {
        &self.factors
    }
}

/// `X = ∂x`, `Y = ∂y + A(x, y) ∂z` on ℝ³.
pub fn magnetic_structure(pot: PotentialField) -> SRStructure {
    let label = format!("magnetic(A = {})", pot.label());
    magnetic_with_label(label, pot)
}

fn magnetic_with_label(label: String, pot: PotentialField) -> SRStructure {
    SRStructure {
        label,
        frame: Arc::new(MagneticFrame { potential: pot.clone() }),
        potential: Some(pot),
        factors: Vec::new(),
    }
}

/// Martinet structure glued to Heisenberg through the bump θ.
pub fn glued_structure() -> SRStructure {
    magnetic_with_label("glued".into(), PotentialField::glued())
}

pub fn heisenberg_structure() -> SRStructure {
    magnetic_with_label("heisenberg".into(), PotentialField::heisenberg())
}

pub fn flat_martinet_structure() -> SRStructure {
    magnetic_with_label("flat_martinet".into(), PotentialField::flat_martinet())
}

/// `B(x, y) = θ(y) + 2x θ(1 - y)` of the glued structure. Its zero set is
/// the Martinet surface.
pub fn martinet_field_b(q: &DVector<f64>) -> f64 {
    let th = standard_bump();
    th.eval(q[1]) + 2.0 * q[0] * th.eval(1.0 - q[1])
}

/// Direct sum of the factors' frames and metrics. Each factor's fields are
/// zero-padded into its own coordinate block.
pub fn product_structure(factors: &[SRStructure]) -> Result<SRStructure> {
    if factors.is_empty() {
        return Err(invalid("product of an empty list of structures"));
    }
    let mut dim_offsets = Vec::with_capacity(factors.len());
    let mut frame_offsets = Vec::with_capacity(factors.len());
    let (mut dim, mut frame_size) = (0, 0);
    for f in factors {
        dim_offsets.push(dim);
        frame_offsets.push(frame_size);
        dim += f.dim();
        frame_size += f.frame_size();
    }
    let label = format!("product({})", factors.iter().map(|f| f.label()).collect::<Vec<_>>().join(", "));
    let frame = ProductFrame { factors: factors.to_vec(), dim_offsets, frame_offsets, dim, frame_size };
    Ok(SRStructure { label, frame: Arc::new(frame), potential: None, factors: factors.to_vec() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StructureKind {
    Glued,
    Heisenberg,
    FlatMartinet,
    Magnetic,
    Product,
}

/// JSON description of a structure, e.g.
/// `{"kind": "magnetic", "A_expr": "x*theta(y)"}` or
/// `{"kind": "product", "factors": [{"kind": "glued"}, {"kind": "glued"}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructureDescriptor {
    pub kind: StructureKind,
    #[serde(rename = "A_expr", default, skip_serializing_if = "Option::is_none")]
    pub a_expr: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factors: Option<Vec<StructureDescriptor>>,
}

impl StructureDescriptor {
    pub fn simple(kind: StructureKind) -> Self {
        StructureDescriptor { kind, a_expr: None, factors: None }
    }

    pub fn build(&self) -> Result<SRStructure> {
        if self.kind != StructureKind::Magnetic && self.a_expr.is_some() {
            return Err(invalid("A_expr is only allowed for kind \"magnetic\""));
        }
        if self.kind != StructureKind::Product && self.factors.is_some() {
            return Err(invalid("factors is only allowed for kind \"product\""));
        }
        match self.kind {
            StructureKind::Glued => Ok(glued_structure()),
            StructureKind::Heisenberg => Ok(heisenberg_structure()),
            StructureKind::FlatMartinet => Ok(flat_martinet_structure()),
            StructureKind::Magnetic => {
                let src = self.a_expr.as_deref().ok_or_else(|| invalid("kind \"magnetic\" requires A_expr"))?;
                Ok(magnetic_structure(PotentialField::from_expr(src)?))
            }
            StructureKind::Product => {
                let factors = self.factors.as_ref().ok_or_else(|| invalid("kind \"product\" requires factors"))?;
                let built = factors.iter().map(|d| d.build()).collect::<Result<Vec<_>>>()?;
                product_structure(&built)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_vec(xs.to_vec())
    }

    #[test]
    fn bump_values() {
        let th = standard_bump();
        assert_eq!(th.eval(-1.0), 0.0);
        assert_eq!(th.eval(0.0), 0.0);
        assert_eq!(th.eval(2.0), 1.0);
        assert_eq!(th.eval(1.0), 1.0);
        assert!((th.eval(0.5) - 0.5).abs() < 1e-15);
        assert!(th.eval(0.05) > 0.0);
        // symmetry θ(t) + θ(1 - t) = 1
        for t in [0.1, 0.3, 0.77] {
            assert!((th.eval(t) + th.eval(1.0 - t) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn glued_frame_examples() {
        let s = glued_structure();
        assert_eq!((s.dim(), s.frame_size()), (3, 2));
        assert_eq!(s.field(0, &v(&[0.3, -2.0, 5.0])), v(&[1.0, 0.0, 0.0]));
        assert_eq!(s.field(1, &v(&[0.0, -1.0, 0.0])), v(&[0.0, 1.0, 0.0]));
        assert_eq!(s.field(1, &v(&[1.0, 2.0, 0.0])), v(&[0.0, 1.0, 1.0]));
        let pot = s.potential().unwrap();
        for k in 0..=40 {
            let y = -10.0 + 0.5 * k as f64;
            assert_eq!(pot.a(0.0, y), 0.0);
        }
    }

    #[test]
    fn martinet_field_examples() {
        assert_eq!(martinet_field_b(&v(&[0.0, -1.0, 0.0])), 0.0);
        assert_eq!(martinet_field_b(&v(&[0.0, 2.0, 0.0])), 1.0);
        for (x, y) in [(0.3, 0.0), (-1.2, -0.5), (2.0, -7.0)] {
            assert_eq!(martinet_field_b(&v(&[x, y, 0.0])), 2.0 * x);
        }
        // agrees with the potential's ∂A/∂x
        let pot = PotentialField::glued();
        for (x, y) in [(0.3, 0.4), (-1.0, 0.9), (0.0, 0.2)] {
            assert_eq!(pot.field_b(x, y), martinet_field_b(&v(&[x, y, 0.0])));
        }
    }

    #[test]
    fn heisenberg_examples() {
        let s = heisenberg_structure();
        assert_eq!(s.field(1, &v(&[2.0, 0.0, 0.0])), v(&[0.0, 1.0, 2.0]));
        let j = s.jacobian(1, &v(&[0.4, -0.2, 1.0]));
        let mut expected = DMatrix::zeros(3, 3);
        expected[(2, 0)] = 1.0;
        assert_eq!(j, expected);
        assert_eq!(s.potential().unwrap().field_b(3.0, -4.0), 1.0);
    }

    #[test]
    fn flat_martinet_examples() {
        let s = flat_martinet_structure();
        assert_eq!(s.field(1, &v(&[0.0, 0.7, -2.0])), v(&[0.0, 1.0, 0.0]));
        let pot = s.potential().unwrap();
        assert_eq!(pot.field_b(1.5, 0.2), 3.0);
        assert_eq!(pot.field_b(0.0, 9.0), 0.0);
    }

    #[test]
    fn zero_potential_has_vanishing_brackets() {
        let s = magnetic_structure(PotentialField::zero());
        let q = v(&[0.3, 0.1, -0.4]);
        assert_eq!(s.field(1, &q), v(&[0.0, 1.0, 0.0]));
        assert_eq!(s.jacobian(1, &q), DMatrix::zeros(3, 3));
    }

    #[test]
    fn product_basics() {
        assert!(product_structure(&[]).is_err());
        let one = product_structure(&[glued_structure()]).unwrap();
        let g = glued_structure();
        let q = v(&[0.2, 0.6, 0.1]);
        for i in 0..2 {
            assert_eq!(one.field(i, &q), g.field(i, &q));
            assert_eq!(one.jacobian(i, &q), g.jacobian(i, &q));
        }
        let two = product_structure(&[glued_structure(), glued_structure()]).unwrap();
        assert_eq!((two.dim(), two.frame_size()), (6, 4));
        assert_eq!(two.factors().len(), 2);
    }

    #[test]
    fn descriptor_parsing() {
        let d: StructureDescriptor = serde_json::from_str(
            r#"{"kind": "product", "factors": [{"kind": "glued"}, {"kind": "magnetic", "A_expr": "x"}]}"#,
        )
        .unwrap();
        let s = d.build().unwrap();
        assert_eq!((s.dim(), s.frame_size()), (6, 4));

        let bad: std::result::Result<StructureDescriptor, _> = serde_json::from_str(r#"{"kind": "glued", "extra": 1}"#);
        assert!(bad.is_err());
        let missing = StructureDescriptor::simple(StructureKind::Magnetic);
        assert!(missing.build().is_err());
        let stray = StructureDescriptor { a_expr: Some("x".into()), ..StructureDescriptor::simple(StructureKind::Glued) };
        assert!(stray.build().is_err());
        let empty = StructureDescriptor { factors: Some(vec![]), ..StructureDescriptor::simple(StructureKind::Product) };
        assert!(empty.build().is_err());
    }
}
