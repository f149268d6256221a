//! Experiment drivers. Each command turns a [`RunConfig`] into a set of
//! in-memory artifacts plus a summary; writing files is left to the caller.

use std::f64::consts::FRAC_PI_2;
use std::sync::Arc;

use nalgebra::DVector;
use serde::Serialize;
use serde_json::{json, Value};

use subflow_core::branching::{
    build_corank_realization, magnetic_geodesic, magnetic_hamiltonian_equivalence, spray_trace, CorankFunctionSpec,
    MagneticSpec, PlanarTrace,
};
use subflow_core::endpoint::{corank_profile, detect_rank_jumps, refine_jump, CorankSettings, RankJump};
use subflow_core::expr::Expr;
use subflow_core::flow::{hamiltonian, integrate_geodesic, CotangentState, GeodesicTrace, TimeDirection};
use subflow_core::structures::{SRStructure, StructureKind};
use subflow_core::IntegratorSpec;

use crate::config::{resolve_integrator, IntegratorOverride, RunConfig};
use crate::error::CliError;
use crate::svg::{self, Marker, Plot, Series};

pub const DEFAULT_SPRAY_ALPHAS: [f64; 8] = [-1.0, -0.5, -0.25, -0.1, 0.1, 0.25, 0.5, 1.0];
pub const DEFAULT_CHARGES: [f64; 5] = [-0.5, -0.25, 0.0, 0.25, 0.5];

/// Margins around jump times used for default product samples.
const SAMPLE_MARGIN_BEFORE: f64 = 0.05;
const SAMPLE_MARGIN_AFTER: f64 = 0.15;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CommandOptions {
    pub integrator: IntegratorOverride,
    pub check_hamiltonian: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub contents: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommandOutput {
    pub artifacts: Vec<Artifact>,
    pub lines: Vec<String>,
    pub summary: Value,
    /// Set when the command ran but its own check failed.
    pub failure: Option<String>,
}

/// Number formatting shared by all CSV output.
pub fn num(v: f64) -> String {
    if v != 0.0 && v.abs() < 1e-4 {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

struct Csv(csv::Writer<Vec<u8>>);

impl Csv {
    fn new() -> Self {
        Csv(csv::WriterBuilder::new().flexible(true).from_writer(Vec::new()))
    }

    fn record<I, S>(&mut self, fields: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.0.write_record(fields).expect("writing to memory cannot fail");
    }

    fn numbers(&mut self, values: &[f64]) {
        self.record(values.iter().map(|&v| num(v)));
    }

    fn finish(self) -> String {
        String::from_utf8(self.0.into_inner().expect("in-memory buffer")).expect("CSV output is UTF-8")
    }
}

fn structure(cfg: &RunConfig) -> Result<SRStructure, CliError> {
    cfg.structure_descriptor().build().map_err(|e| CliError::Config(format!("structure: {e}")))
}

fn initial_state(cfg: &RunConfig, s: &SRStructure) -> Result<CotangentState, CliError> {
    match &cfg.initial {
        Some(init) => {
            if init.q.len() != s.dim() || init.p.len() != s.dim() {
                return Err(CliError::Config(format!(
                    "initial state must have {} coordinates for structure '{}'",
                    s.dim(),
                    s.label()
                )));
            }
            Ok(CotangentState::from_slices(&init.q, &init.p)?)
        }
        None if s.dim() == 3 => Ok(CotangentState::from_slices(&[0.0, -1.0, 0.0], &[0.0, 1.0, 0.0])?),
        None => Err(CliError::Config(format!("structure '{}' needs an explicit initial state", s.label()))),
    }
}

fn finite(name: &str, v: f64) -> Result<f64, CliError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(CliError::Config(format!("{name} must be finite")))
    }
}

fn signed_times(trace: &GeodesicTrace) -> Vec<f64> {
    match trace.direction {
        TimeDirection::Forward => trace.times.clone(),
        TimeDirection::Backward => trace.times.iter().map(|t| -t).collect(),
    }
}

pub fn integrate(cfg: &RunConfig, opts: &CommandOptions) -> Result<CommandOutput, CliError> {
    let ispec = resolve_integrator(IntegratorSpec::default(), cfg.integrator.as_ref(), opts.integrator)?;
    let s = structure(cfg)?;
    let init = initial_state(cfg, &s)?;
    let duration = finite("duration", cfg.duration.unwrap_or(1.0))?;
    let trace = integrate_geodesic(&s, &init, duration, &ispec)?;

    let (n, m) = (s.dim(), s.frame_size());
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("q{i}")));
    header.extend((1..=n).map(|i| format!("p{i}")));
    header.extend((1..=m).map(|i| format!("u{i}")));
    header.push("H".into());
    let mut csv = Csv::new();
    csv.record(&header);
    let h0 = hamiltonian(&s, &init);
    let mut drift: f64 = 0.0;
    for ((t, st), u) in signed_times(&trace).iter().zip(&trace.states).zip(&trace.controls) {
        let h = hamiltonian(&s, st);
        drift = drift.max((h - h0).abs());
        let mut row = vec![*t];
        row.extend(st.q.iter());
        row.extend(st.p.iter());
        row.extend(u.iter());
        row.push(h);
        csv.numbers(&row);
    }
    let fin = trace.final_state();
    let summary = json!({
        "command": "integrate",
        "structure": s.label(),
        "samples": trace.times.len(),
        "duration": duration,
        "integrator": ispec,
        "final_q": fin.q.as_slice(),
        "final_p": fin.p.as_slice(),
        "energy_drift": drift,
    });
    Ok(CommandOutput {
        artifacts: vec![Artifact { name: "integrate.csv".into(), contents: csv.finish() }],
        lines: vec![
            format!("integrated '{}' for {} with {} samples", s.label(), duration, trace.times.len()),
            format!("final q = {:?}", fin.q.as_slice()),
            format!("energy drift = {drift:e}"),
        ],
        summary,
        failure: None,
    })
}

/// One curve of the spray, with `t` measured from the branch point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SprayCurve {
    pub alpha: f64,
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SprayParams {
    pub offset: f64,
    pub alphas: Vec<f64>,
    pub extent: f64,
}

impl SprayParams {
    pub fn from_config(cfg: &RunConfig) -> Result<Self, CliError> {
        if let Some(d) = &cfg.structure {
            if d.kind != StructureKind::Glued {
                return Err(CliError::Config("the spray is defined on the glued structure only".into()));
            }
        }
        let sc = cfg.spray.clone().unwrap_or_default();
        let params = SprayParams {
            offset: sc.offset.unwrap_or(1.0),
            alphas: sc.alphas.unwrap_or_else(|| DEFAULT_SPRAY_ALPHAS.to_vec()),
            extent: sc.extent.unwrap_or(1.0),
        };
        if !(params.offset.is_finite() && params.offset > 0.0) {
            return Err(CliError::Config(format!("spray offset must be positive, got {}", params.offset)));
        }
        if !(params.extent.is_finite() && params.extent >= 0.0) {
            return Err(CliError::Config(format!("spray extent must be nonnegative, got {}", params.extent)));
        }
        if params.alphas.is_empty() {
            return Err(CliError::Config("spray alpha list must not be empty".into()));
        }
        if params.alphas.iter().any(|a| !a.is_finite()) {
            return Err(CliError::Config("spray alphas must be finite".into()));
        }
        Ok(params)
    }
}

/// The α = 0 axis followed by one curve per nonzero α.
pub fn spray_curves(params: &SprayParams, ispec: &IntegratorSpec) -> Result<Vec<SprayCurve>, CliError> {
    let mut alphas = vec![0.0];
    alphas.extend(params.alphas.iter().copied().filter(|a| *a != 0.0));
    alphas
        .into_iter()
        .map(|alpha| {
            let tr = spray_trace(alpha, params.offset, params.offset + params.extent, ispec)?;
            Ok(SprayCurve {
                alpha,
                t: tr.times.iter().map(|t| t - params.offset).collect(),
                x: tr.states.iter().map(|s| s.q[0]).collect(),
                y: tr.states.iter().map(|s| s.q[1]).collect(),
            })
        })
        .collect()
}

/// Largest pairwise `|x|` difference before the branch point.
pub fn pre_branch_spread(curves: &[SprayCurve]) -> f64 {
    let axis = &curves[0];
    curves
        .iter()
        .flat_map(|c| c.t.iter().zip(&c.x).zip(&axis.x).filter(|((t, _), _)| **t <= 0.0).map(|((_, x), x0)| (x - x0).abs()))
        .fold(0.0, f64::max)
}

/// Samples after the branch where `x` fails to have the sign of `-α`.
/// Strict signs are required from `strict_after` on; earlier samples may
/// still be exactly zero.
pub fn sign_violations(curves: &[SprayCurve], strict_after: f64) -> usize {
    curves
        .iter()
        .filter(|c| c.alpha != 0.0)
        .map(|c| {
            c.t.iter()
                .zip(&c.x)
                .filter(|(t, x)| **t > 0.0 && (**x * c.alpha > 0.0 || (**t >= strict_after && x.signum() != -c.alpha.signum())))
                .count()
        })
        .sum()
}

pub fn spray_csv(curves: &[SprayCurve]) -> String {
    let mut csv = Csv::new();
    csv.record(["alpha", "t", "x", "y"]);
    for c in curves {
        for k in 0..c.t.len() {
            csv.numbers(&[c.alpha, c.t[k], c.x[k], c.y[k]]);
        }
    }
    csv.finish()
}

pub fn spray_svg(curves: &[SprayCurve], ispec: &IntegratorSpec) -> String {
    let series = curves
        .iter()
        .map(|c| Series {
            label: if c.alpha == 0.0 { "α = 0 (axis)".into() } else { format!("α = {}", c.alpha) },
            points: c.x.iter().copied().zip(c.y.iter().copied()).collect(),
            dashed: c.alpha == 0.0,
        })
        .collect();
    let method = match ispec.method {
        subflow_core::Method::Euler => "Euler",
        subflow_core::Method::Rk4 => "RK4",
    };
    svg::render(&Plot {
        title: format!("Branching geodesics γ_α, xy projection ({method}, h = {})", ispec.step),
        x_label: "x".into(),
        y_label: "y".into(),
        series,
        markers: vec![Marker { label: "branch point".into(), at: (0.0, 0.0) }],
    })
}

pub fn spray(cfg: &RunConfig, opts: &CommandOptions) -> Result<CommandOutput, CliError> {
    let ispec = resolve_integrator(IntegratorSpec::euler(1e-3)?, cfg.integrator.as_ref(), opts.integrator)?;
    let params = SprayParams::from_config(cfg)?;
    let curves = spray_curves(&params, &ispec)?;
    let spread = pre_branch_spread(&curves);
    let violations = sign_violations(&curves, 0.01);
    let finals: Vec<Value> = curves
        .iter()
        .map(|c| json!({"alpha": c.alpha, "x": c.x.last(), "y": c.y.last()}))
        .collect();
    let mut lines = vec![
        format!("{} curves including the α = 0 axis", curves.len()),
        format!("max pre-branch x spread = {spread:e}"),
        format!("samples with sign(x) != -sign(α) after the branch: {violations}"),
    ];
    for c in curves.iter().skip(1) {
        lines.push(format!("α = {:>6}: x(end) = {:.6e}", c.alpha, c.x.last().copied().unwrap_or(0.0)));
    }
    Ok(CommandOutput {
        artifacts: vec![
            Artifact { name: "spray.csv".into(), contents: spray_csv(&curves) },
            Artifact { name: "spray.svg".into(), contents: spray_svg(&curves, &ispec) },
        ],
        lines,
        summary: json!({
            "command": "spray",
            "integrator": ispec,
            "offset": params.offset,
            "extent": params.extent,
            "curves": curves.len(),
            "pre_branch_spread": spread,
            "sign_violations": violations,
            "final_points": finals,
        }),
        failure: None,
    })
}

fn corank_settings(cfg: &RunConfig) -> Result<(CorankSettings, bool), CliError> {
    let c = cfg.corank.clone().unwrap_or_default();
    let d = CorankSettings::default();
    let settings = CorankSettings {
        tolerance: c.tolerance.unwrap_or(d.tolerance),
        controls_per_unit: c.controls_per_unit.unwrap_or(d.controls_per_unit),
        resolution: c.resolution.unwrap_or(d.resolution),
    };
    if !(settings.tolerance.is_finite() && settings.tolerance > 0.0) {
        return Err(CliError::Config("corank tolerance must be positive".into()));
    }
    if settings.controls_per_unit == 0 {
        return Err(CliError::Config("controls_per_unit must be positive".into()));
    }
    if !(settings.resolution.is_finite() && settings.resolution > 0.0) {
        return Err(CliError::Config("corank resolution must be positive".into()));
    }
    Ok((settings, c.refine.unwrap_or(true)))
}

fn quarter_grid(duration: f64) -> Vec<f64> {
    let n = (duration * 4.0 + 1e-9).floor() as usize;
    (0..=n).map(|k| k as f64 * 0.25).collect()
}

pub fn corank(cfg: &RunConfig, opts: &CommandOptions) -> Result<CommandOutput, CliError> {
    let ispec = resolve_integrator(IntegratorSpec::default(), cfg.integrator.as_ref(), opts.integrator)?;
    let s = structure(cfg)?;
    let init = initial_state(cfg, &s)?;
    let duration = finite("duration", cfg.duration.unwrap_or(2.0))?;
    if duration <= 0.0 {
        return Err(CliError::Config("corank profiles need a positive duration".into()));
    }
    let (settings, refine) = corank_settings(cfg)?;
    let times = cfg.sample_times.clone().unwrap_or_else(|| quarter_grid(duration));
    let trace = integrate_geodesic(&s, &init, duration, &ispec)?;
    let profile = corank_profile(&s, &trace, &times, &settings, &ispec)?;
    let jumps = detect_rank_jumps(&profile);
    let refined: Vec<Option<RankJump>> = if refine {
        jumps.iter().map(|j| refine_jump(&s, &trace, j, &settings, &ispec).map(Some)).collect::<Result<_, _>>()?
    } else {
        vec![None; jumps.len()]
    };

    let mut csv = Csv::new();
    csv.record(["t", "corank"]);
    for (t, c) in profile.times.iter().zip(&profile.coranks) {
        csv.record([num(*t), c.to_string()]);
    }
    csv.record(["# summary"]);
    csv.record(["jump_lower", "jump_upper", "drop", "refined_lower", "refined_upper", "refined_time"]);
    let mut lines = vec![format!(
        "corank profile of '{}' at {} samples: {:?}",
        s.label(),
        profile.times.len(),
        profile.coranks
    )];
    let mut jump_json = Vec::new();
    for (j, r) in jumps.iter().zip(&refined) {
        let mut rec = vec![num(j.lower), num(j.upper), j.drop.to_string()];
        match r {
            Some(r) => {
                rec.extend([num(r.lower), num(r.upper), num(r.midpoint())]);
                lines.push(format!(
                    "jump of {} in ({}, {}], refined to ({:.6}, {:.6}]",
                    j.drop, j.lower, j.upper, r.lower, r.upper
                ));
            }
            None => {
                rec.extend([String::new(), String::new(), String::new()]);
                lines.push(format!("jump of {} in ({}, {}]", j.drop, j.lower, j.upper));
            }
        }
        csv.record(&rec);
        jump_json.push(json!({
            "lower": j.lower, "upper": j.upper, "drop": j.drop,
            "refined": r.map(|r| json!({"lower": r.lower, "upper": r.upper, "time": r.midpoint()})),
        }));
    }
    if jumps.is_empty() {
        lines.push("no rank jumps detected".into());
    }
    Ok(CommandOutput {
        artifacts: vec![Artifact { name: "corank.csv".into(), contents: csv.finish() }],
        lines,
        summary: json!({
            "command": "corank",
            "structure": s.label(),
            "integrator": ispec,
            "tolerance": settings.tolerance,
            "controls_per_unit": settings.controls_per_unit,
            "times": profile.times,
            "coranks": profile.coranks,
            "jumps": jump_json,
        }),
        failure: None,
    })
}

/// Sample grid on `[0, 1]` staying clear of the jump times of `f`.
pub fn default_product_samples(f: &CorankFunctionSpec) -> Vec<f64> {
    (0..=20)
        .map(|k| k as f64 * 0.05)
        .filter(|t| {
            f.jumps
                .iter()
                .all(|j| *t <= j.time - SAMPLE_MARGIN_BEFORE + 1e-12 || *t >= j.time + SAMPLE_MARGIN_AFTER - 1e-12)
        })
        .collect()
}

pub fn default_corank_function() -> CorankFunctionSpec {
    CorankFunctionSpec::new(2, &[(0.3, 1), (0.6, 1)], 0)
}

pub fn product(cfg: &RunConfig, opts: &CommandOptions) -> Result<CommandOutput, CliError> {
    let ispec = resolve_integrator(IntegratorSpec::default(), cfg.integrator.as_ref(), opts.integrator)?;
    let f = cfg.corank_function.clone().unwrap_or_else(default_corank_function);
    f.validate().map_err(|e| CliError::Config(format!("corank_function: {e}")))?;
    let (settings, _) = corank_settings(cfg)?;
    let times = cfg.sample_times.clone().unwrap_or_else(|| default_product_samples(&f));
    if let Some(t) = times.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(CliError::Config(format!("sample time {t} lies outside [0, 1]")));
    }
    let (s, trace) = build_corank_realization(&f, &ispec)?;
    let profile = corank_profile(&s, &trace, &times, &settings, &ispec)?;
    let expected: Vec<usize> = times.iter().map(|t| f.eval(*t)).collect();
    let mismatches: Vec<f64> = times
        .iter()
        .zip(profile.coranks.iter().zip(&expected))
        .filter(|(_, (a, b))| a != b)
        .map(|(t, _)| *t)
        .collect();
    let verdict = if mismatches.is_empty() {
        format!("PASS: corank profile matches f at all {} samples", times.len())
    } else {
        format!("FAIL: corank profile differs from f at t = {mismatches:?}")
    };
    let mut csv = Csv::new();
    csv.record(["t", "corank", "expected"]);
    for ((t, c), e) in times.iter().zip(&profile.coranks).zip(&expected) {
        csv.record([num(*t), c.to_string(), e.to_string()]);
    }
    csv.record([format!("# {verdict}")]);
    Ok(CommandOutput {
        artifacts: vec![Artifact { name: "product.csv".into(), contents: csv.finish() }],
        lines: vec![
            format!("realized f on a product of {} glued structures (dimension {})", f.initial, s.dim()),
            format!("computed {:?}", profile.coranks),
            format!("expected {expected:?}"),
            verdict.clone(),
        ],
        summary: json!({
            "command": "product",
            "corank_function": f,
            "dimension": s.dim(),
            "times": times,
            "coranks": profile.coranks,
            "expected": expected,
            "passed": mismatches.is_empty(),
        }),
        failure: (!mismatches.is_empty()).then_some(verdict),
    })
}

type FieldFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

fn magnetic_field(cfg: &RunConfig, s: Option<&SRStructure>) -> Result<(FieldFn, String), CliError> {
    if let Some(src) = cfg.magnetic.as_ref().and_then(|m| m.field.clone()) {
        let e = Expr::parse(&src)?;
        return Ok((Arc::new(move |x, y| e.eval(x, y)), src));
    }
    let s = s.ok_or_else(|| CliError::Config("no magnetic field given".into()))?;
    let pot = s
        .potential()
        .ok_or_else(|| {
            CliError::Config(format!("structure '{}' has no potential A; give magnetic.field instead", s.label()))
        })?
        .clone();
    Ok((Arc::new(move |x, y| pot.field_b(x, y)), format!("dA/dx of {}", s.label())))
}

pub fn magnetic(cfg: &RunConfig, opts: &CommandOptions) -> Result<CommandOutput, CliError> {
    let ispec = resolve_integrator(IntegratorSpec::default(), cfg.integrator.as_ref(), opts.integrator)?;
    let mc = cfg.magnetic.clone().unwrap_or_default();
    let need_structure = mc.field.is_none() || opts.check_hamiltonian;
    let s = if need_structure { Some(structure(cfg)?) } else { None };
    if opts.check_hamiltonian && mc.field.is_some() {
        return Err(CliError::Config(
            "--check-hamiltonian compares against the structure's own field; remove magnetic.field".into(),
        ));
    }
    let (field, field_label) = magnetic_field(cfg, s.as_ref())?;
    let charges = mc.charges.clone().unwrap_or_else(|| DEFAULT_CHARGES.to_vec());
    if charges.is_empty() {
        return Err(CliError::Config("charge list must not be empty".into()));
    }
    let (x, y) = (finite("magnetic.x", mc.x.unwrap_or(0.0))?, finite("magnetic.y", mc.y.unwrap_or(-1.0))?);
    let heading = finite("magnetic.heading", mc.heading.unwrap_or(FRAC_PI_2))?;
    let speed = mc.speed.unwrap_or(1.0);
    let duration = finite("duration", cfg.duration.unwrap_or(2.0))?;
    if duration < 0.0 {
        return Err(CliError::Config("duration must be nonnegative".into()));
    }

    let mut traces: Vec<(f64, PlanarTrace)> = Vec::with_capacity(charges.len());
    for &charge in &charges {
        let spec = MagneticSpec { field: field.clone(), charge, x, y, heading, speed };
        traces.push((charge, magnetic_geodesic(&spec, duration, &ispec)?));
    }

    let mut csv = Csv::new();
    csv.record(["charge", "t", "x", "y", "heading"]);
    for (charge, tr) in &traces {
        for k in 0..tr.times.len() {
            csv.numbers(&[*charge, tr.times[k], tr.x[k], tr.y[k], tr.heading[k]]);
        }
    }
    let plot = Plot {
        title: format!("Charged particles in B = {field_label}"),
        x_label: "x".into(),
        y_label: "y".into(),
        series: traces
            .iter()
            .map(|(c, tr)| Series {
                label: format!("charge {c}"),
                points: tr.x.iter().copied().zip(tr.y.iter().copied()).collect(),
                dashed: *c == 0.0,
            })
            .collect(),
        markers: vec![Marker { label: "start".into(), at: (x, y) }],
    };
    let mut artifacts = vec![
        Artifact { name: "magnetic.csv".into(), contents: csv.finish() },
        Artifact { name: "magnetic.svg".into(), contents: svg::render(&plot) },
    ];
    let mut lines = vec![format!("{} charged trajectories in B = {field_label} for duration {duration}", traces.len())];
    let mut checks = Vec::new();
    if opts.check_hamiltonian {
        let s = s.as_ref().expect("structure is built when checking");
        if (speed - 1.0).abs() > 1e-12 {
            return Err(CliError::Config("--check-hamiltonian needs unit speed (H = 1/2)".into()));
        }
        let a = s.potential().map(|p| p.a(x, y)).unwrap_or(0.0);
        let q0 = DVector::from_vec(vec![x, y, 0.0]);
        let mut check_csv = Csv::new();
        check_csv.record(["charge", "sup_distance"]);
        for &charge in &charges {
            let p0 = DVector::from_vec(vec![heading.cos(), heading.sin() - a * charge, charge]);
            let d = magnetic_hamiltonian_equivalence(s, &q0, &p0, duration, &ispec)?;
            check_csv.numbers(&[charge, d]);
            lines.push(format!("charge {charge}: sup distance to the Hamiltonian geodesic = {d:e}"));
            checks.push(json!({"charge": charge, "sup_distance": d}));
        }
        artifacts.push(Artifact { name: "magnetic_check.csv".into(), contents: check_csv.finish() });
    }
    Ok(CommandOutput {
        artifacts,
        lines,
        summary: json!({
            "command": "magnetic",
            "field": field_label,
            "integrator": ispec,
            "charges": charges,
            "final_points": traces.iter().map(|(c, tr)| json!({"charge": c, "x": tr.x.last(), "y": tr.y.last()})).collect::<Vec<_>>(),
            "hamiltonian_check": checks,
        }),
        failure: None,
    })
}
