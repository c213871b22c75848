//! Fitting contact-law parameters to measured drop-test impact times and
//! peak forces, and the serialized parameter set the simulator reads back.

use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;
use serde::{Deserialize, Serialize};

use crate::airframe::FrameConfig;
use crate::contact::{drop_test, ContactModel, DampingLaw, ImpactMetrics};
use crate::dynamics::GRAVITY;

/// Pressures closer than this are treated as the same calibration point (kPa).
pub const PRESSURE_MATCH_KPA: f64 = 1.0;
pub const DEFAULT_SOFT_MAX_COMPRESSION: f64 = 0.10;
pub const DEFAULT_RIGID_MAX_COMPRESSION: f64 = 0.02;
const STANDARD_HEIGHTS: [f64; 2] = [0.25, 0.50];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum FrameKind {
    Rigid,
    Soft,
}

impl FrameKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rigid" => Some(FrameKind::Rigid),
            "soft" => Some(FrameKind::Soft),
            _ => None,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            FrameKind::Rigid => "rigid",
            FrameKind::Soft => "soft",
        }
    }
}

/// Identifies one calibrated contact law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameKey {
    pub frame: FrameKind,
    /// Only meaningful for soft frames.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pressure_kpa: Option<f64>,
    pub config: FrameConfig,
}

impl FrameKey {
    pub fn rigid(config: FrameConfig) -> Self {
        FrameKey { frame: FrameKind::Rigid, pressure_kpa: None, config }
    }

    pub fn soft(pressure_kpa: f64, config: FrameConfig) -> Self {
        FrameKey { frame: FrameKind::Soft, pressure_kpa: Some(pressure_kpa), config }
    }

    pub fn matches(&self, other: &FrameKey) -> bool {
        if self.frame != other.frame || self.config != other.config {
            return false;
        }
        match (self.frame, self.pressure_kpa, other.pressure_kpa) {
            (FrameKind::Rigid, _, _) => true,
            (FrameKind::Soft, Some(a), Some(b)) => (a - b).abs() <= PRESSURE_MATCH_KPA,
            _ => false,
        }
    }
}

impl std::fmt::Display for FrameKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match (self.frame, self.pressure_kpa) {
            (FrameKind::Soft, Some(p)) => write!(f, "soft {} kPa {}", p, self.config.label()),
            _ => write!(f, "{} {}", self.frame.label(), self.config.label()),
        }
    }
}

/// One measured drop: a height with an impact time and/or a peak force.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DropTarget {
    pub frame: FrameKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pressure_kpa: Option<f64>,
    pub config: FrameConfig,
    /// m.
    pub height: f64,
    /// Effective mass of the lumped drop model (kg).
    pub mass: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub impact_time_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peak_force: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct TargetFile {
    #[serde(default, rename = "target")]
    pub targets: Vec<DropTarget>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    ImpactTime,
    PeakForce,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Residual {
    pub height: f64,
    pub quantity: Quantity,
    pub target: f64,
    pub simulated: f64,
    /// `simulated / target − 1`.
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibratedModel {
    pub frame: FrameKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pressure_kpa: Option<f64>,
    pub config: FrameConfig,
    pub mass: f64,
    pub contact: ContactModel,
    #[serde(default)]
    pub residuals: Vec<Residual>,
}

impl DropTarget {
    pub fn key(&self) -> FrameKey {
        FrameKey { frame: self.frame, pressure_kpa: self.pressure_kpa, config: self.config }
    }
}

impl CalibratedModel {
    pub fn key(&self) -> FrameKey {
        FrameKey { frame: self.frame, pressure_kpa: self.pressure_kpa, config: self.config }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct CalibrationSet {
    #[serde(default, rename = "model")]
    pub models: Vec<CalibratedModel>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CalibrationError {
    #[error("no calibration targets given")]
    Empty,
    #[error("{group}: {have} target value(s), need at least 2; missing: {}", missing.join(", "))]
    Underdetermined { group: String, have: usize, missing: Vec<String> },
    #[error("{group}: rows disagree on mass")]
    InconsistentMass { group: String },
    #[error("invalid target: {0}")]
    InvalidTarget(String),
    #[error("optimizer failed for {group}: {message}")]
    Optimizer { group: String, message: String },
    #[error("no calibrated contact model for {requested}; available: {}", available.join("; "))]
    Unknown { requested: String, available: Vec<String> },
    #[error("parse error: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub law: DampingLaw,
    /// Exponent of the residual norm; large values approach minimax.
    pub norm_power: f64,
    pub soft_max_compression: f64,
    pub rigid_max_compression: f64,
    /// Fit the stiffness exponent when a group has at least this many values.
    pub exponent_min_targets: usize,
    pub max_iters: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            law: DampingLaw::Linear,
            norm_power: 8.0,
            soft_max_compression: DEFAULT_SOFT_MAX_COMPRESSION,
            rigid_max_compression: DEFAULT_RIGID_MAX_COMPRESSION,
            exponent_min_targets: 3,
            max_iters: 600,
        }
    }
}

struct Group {
    key: FrameKey,
    mass: f64,
    measurements: Vec<(f64, Quantity, f64)>,
}

fn group_targets(targets: &[DropTarget]) -> Result<Vec<Group>, CalibrationError> {
    let mut groups: Vec<Group> = Vec::new();
    for t in targets {
        let key = t.key();
        if !(t.height > 0.0 && t.mass > 0.0) {
            return Err(CalibrationError::InvalidTarget(format!("{}: height and mass must be positive", key)));
        }
        if key.frame == FrameKind::Soft && key.pressure_kpa.is_none() {
            return Err(CalibrationError::InvalidTarget(format!("{}: soft frame needs pressure_kpa", key)));
        }
        let idx = match groups.iter().position(|g| g.key.matches(&key)) {
            Some(i) => i,
            None => {
                groups.push(Group { key, mass: t.mass, measurements: Vec::new() });
                groups.len() - 1
            }
        };
        let g = &mut groups[idx];
        if (g.mass - t.mass).abs() > 1e-12 {
            return Err(CalibrationError::InconsistentMass { group: g.key.to_string() });
        }
        if let Some(ms) = t.impact_time_ms {
            if !(ms > 0.0) {
                return Err(CalibrationError::InvalidTarget(format!("{}: impact time must be positive", key)));
            }
            g.measurements.push((t.height, Quantity::ImpactTime, ms * 1e-3));
        }
        if let Some(f) = t.peak_force {
            if !(f > 0.0) {
                return Err(CalibrationError::InvalidTarget(format!("{}: peak force must be positive", key)));
            }
            g.measurements.push((t.height, Quantity::PeakForce, f));
        }
    }
    Ok(groups)
}

fn missing_rows(g: &Group) -> Vec<String> {
    let mut out = Vec::new();
    for h in STANDARD_HEIGHTS {
        for (q, name) in [(Quantity::ImpactTime, "impact_time_ms"), (Quantity::PeakForce, "peak_force")] {
            let have = g.measurements.iter().any(|(mh, mq, _)| (mh - h).abs() < 1e-9 && *mq == q);
            if !have {
                out.push(format!("{name} at {h} m"));
            }
        }
    }
    out
}

fn simulate_quantity(m: &ImpactMetrics, q: Quantity) -> f64 {
    match q {
        Quantity::ImpactTime => m.impact_time,
        Quantity::PeakForce => m.peak_force,
    }
}

struct FitProblem<'a> {
    group: &'a Group,
    law: DampingLaw,
    max_compression: f64,
    fit_exponent: bool,
    power: f64,
}

impl FitProblem<'_> {
    fn model(&self, x: &[f64]) -> ContactModel {
        let n = if self.fit_exponent { 1.0 + x[2] * x[2] } else { 1.0 };
        ContactModel {
            stiffness: x[0].exp(),
            damping: x[1].exp(),
            exponent: n,
            max_compression: self.max_compression,
            law: self.law,
        }
    }

    fn relative_residuals(&self, model: &ContactModel) -> Option<Vec<f64>> {
        let mut heights: Vec<f64> = self.group.measurements.iter().map(|m| m.0).collect();
        heights.sort_by(f64::total_cmp);
        heights.dedup();
        let mut sims = Vec::with_capacity(heights.len());
        for h in &heights {
            sims.push(drop_test(model, *h, self.group.mass, GRAVITY).ok()?);
        }
        let mut out = Vec::new();
        for (h, q, target) in &self.group.measurements {
            let i = heights.iter().position(|x| x == h).unwrap();
            let s = simulate_quantity(&sims[i], *q);
            if !(s > 0.0) {
                return None;
            }
            out.push(s / target - 1.0);
        }
        Some(out)
    }

    fn objective(&self, x: &[f64]) -> f64 {
        match self.relative_residuals(&self.model(x)) {
            Some(r) if self.power.is_infinite() => r.iter().fold(0.0, |a, v| a.max(v.abs())),
            Some(r) => r.iter().map(|v| v.abs().powf(self.power)).sum::<f64>().powf(1.0 / self.power),
            None => 1e3,
        }
    }
}

impl CostFunction for FitProblem<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, x: &Self::Param) -> Result<f64, argmin::core::Error> {
        Ok(self.objective(x))
    }
}

/// Fits one contact law per frame group. Groups with three or more target
/// values also fit the stiffness exponent.
pub fn calibrate(targets: &[DropTarget], opts: &FitOptions) -> Result<CalibrationSet, CalibrationError> {
    if targets.is_empty() {
        return Err(CalibrationError::Empty);
    }
    let groups = group_targets(targets)?;
    let mut models = Vec::new();
    for g in &groups {
        if g.measurements.len() < 2 {
            return Err(CalibrationError::Underdetermined {
                group: g.key.to_string(),
                have: g.measurements.len(),
                missing: missing_rows(g),
            });
        }
        models.push(fit_group(g, opts)?);
    }
    Ok(CalibrationSet { models })
}

fn fit_group(g: &Group, opts: &FitOptions) -> Result<CalibratedModel, CalibrationError> {
    let max_compression = match g.key.frame {
        FrameKind::Soft => opts.soft_max_compression,
        FrameKind::Rigid => opts.rigid_max_compression,
    };
    let fit_exponent = g.measurements.len() >= opts.exponent_min_targets;
    let problem = FitProblem { group: g, law: opts.law, max_compression, fit_exponent, power: opts.norm_power };

    // Scales from a half-sine impact: T ≈ π√(m/k), F ≈ v√(km).
    let m = g.mass;
    let times: Vec<f64> = g.measurements.iter().filter(|x| x.1 == Quantity::ImpactTime).map(|x| x.2).collect();
    let k0 = if !times.is_empty() {
        let t = times.iter().sum::<f64>() / times.len() as f64;
        m * (std::f64::consts::PI / t).powi(2)
    } else {
        let (h, _, f) = g.measurements[0];
        let v = (2.0 * GRAVITY * h).sqrt();
        (f / v).powi(2) / m
    };
    let c0 = 2.0 * (k0 * m).sqrt();
    let exponents: &[f64] = if fit_exponent { &[1.0, 1.25, 1.5, 2.0] } else { &[1.0] };

    let mut best = (f64::INFINITY, vec![k0.ln(), c0.ln(), 0.0]);
    for &n in exponents {
        // Keep the force at a typical compression comparable across n.
        let v = (2.0 * GRAVITY * 0.25).sqrt();
        let delta0 = v * (m / k0).sqrt();
        let kn = k0 * delta0.powf(1.0 - n);
        let xn = (n - 1.0).sqrt();
        for i in 0..13 {
            for j in 0..15 {
                let lk = kn.ln() - 3.0 + 0.5 * i as f64;
                let lc = c0.ln() - 5.0 + 0.5 * j as f64;
                let x = vec![lk, lc, xn];
                let cost = problem.objective(&x);
                if cost < best.0 {
                    best = (cost, x);
                }
            }
        }
    }
    let x0 = if fit_exponent { best.1.clone() } else { best.1[..2].to_vec() };
    let err = |e: argmin::core::Error| CalibrationError::Optimizer { group: g.key.to_string(), message: e.to_string() };
    // Smooth norm first, then polish on the plain maximum.
    let x1 = nelder_mead(problem, x0, opts.max_iters).map_err(err)?;
    let polish = FitProblem { group: g, law: opts.law, max_compression, fit_exponent, power: f64::INFINITY };
    let mut x = nelder_mead(polish, x1, opts.max_iters).map_err(err)?;
    if x.len() < 3 {
        x.push(0.0);
    }
    let problem = FitProblem { group: g, law: opts.law, max_compression, fit_exponent, power: opts.norm_power };
    let contact = problem.model(&x);
    let residuals = residuals_for(&contact, g)?;
    Ok(CalibratedModel { frame: g.key.frame, pressure_kpa: g.key.pressure_kpa, config: g.key.config, mass: g.mass, contact, residuals })
}

fn nelder_mead(problem: FitProblem<'_>, x0: Vec<f64>, max_iters: u64) -> Result<Vec<f64>, argmin::core::Error> {
    let mut simplex = vec![x0.clone()];
    for d in 0..x0.len() {
        let mut p = x0.clone();
        p[d] += if d == 2 { 0.2 } else { 0.3 };
        simplex.push(p);
    }
    let solver = NelderMead::new(simplex).with_sd_tolerance(1e-10)?;
    let res = Executor::new(problem, solver).configure(|s| s.max_iters(max_iters)).run()?;
    Ok(res.state().get_best_param().cloned().unwrap_or(x0))
}

fn residuals_for(contact: &ContactModel, g: &Group) -> Result<Vec<Residual>, CalibrationError> {
    let mut out = Vec::new();
    for (h, q, target) in &g.measurements {
        let sim = drop_test(contact, *h, g.mass, GRAVITY).map_err(|e| CalibrationError::Optimizer {
            group: g.key.to_string(),
            message: e.to_string(),
        })?;
        let s = simulate_quantity(&sim, *q);
        out.push(Residual { height: *h, quantity: *q, target: *target, simulated: s, relative_error: s / target - 1.0 });
    }
    Ok(out)
}

impl CalibrationSet {
    pub fn from_toml(s: &str) -> Result<Self, CalibrationError> {
        let set: CalibrationSet = toml::from_str(s).map_err(|e| CalibrationError::Parse(e.to_string()))?;
        for m in &set.models {
            m.contact.validate().map_err(|e| CalibrationError::Parse(format!("{}: {e}", m.key())))?;
        }
        Ok(set)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("calibration set serializes")
    }

    /// The model for a frame; rigid frames ignore pressure.
    pub fn lookup(&self, key: &FrameKey) -> Result<&CalibratedModel, CalibrationError> {
        self.models.iter().find(|m| m.key().matches(key)).ok_or_else(|| CalibrationError::Unknown {
            requested: key.to_string(),
            available: self.models.iter().map(|m| m.key().to_string()).collect(),
        })
    }
}

impl TargetFile {
    pub fn from_toml(s: &str) -> Result<Self, CalibrationError> {
        toml::from_str(s).map_err(|e| CalibrationError::Parse(e.to_string()))
    }
}

/// Calibration shipped with the crate (regenerate with `calibrate-contact`).
pub const DEFAULT_CALIBRATION_TOML: &str = include_str!("../../../configs/contact_calibration.toml");

pub fn default_calibration() -> CalibrationSet {
    CalibrationSet::from_toml(DEFAULT_CALIBRATION_TOML).expect("embedded calibration parses")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn target(key: FrameKey, h: f64, ms: Option<f64>, f: Option<f64>) -> DropTarget {
        DropTarget {
            frame: key.frame,
            pressure_kpa: key.pressure_kpa,
            config: key.config,
            height: h,
            mass: 1.14,
            impact_time_ms: ms,
            peak_force: f,
        }
    }

    #[test]
    fn empty_targets_fail() {
        assert_eq!(calibrate(&[], &FitOptions::default()), Err(CalibrationError::Empty));
    }

    #[test]
    fn single_value_group_names_missing_rows() {
        let key = FrameKey::soft(69.0, FrameConfig::Plus);
        let e = calibrate(&[target(key, 0.25, Some(80.3), None)], &FitOptions::default()).unwrap_err();
        match e {
            CalibrationError::Underdetermined { group, have, missing } => {
                assert_eq!(have, 1);
                assert!(group.contains("69"));
                assert!(missing.contains(&"impact_time_ms at 0.5 m".to_string()));
                assert!(missing.contains(&"peak_force at 0.25 m".to_string()));
                assert!(!missing.contains(&"impact_time_ms at 0.25 m".to_string()));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn refit_on_own_output_is_exact() {
        let truth = ContactModel::linear(1800.0, 8.0, 1.0, DEFAULT_SOFT_MAX_COMPRESSION);
        let a = drop_test(&truth, 0.25, 1.14, GRAVITY).unwrap();
        let b = drop_test(&truth, 0.50, 1.14, GRAVITY).unwrap();
        let key = FrameKey::soft(207.0, FrameConfig::Plus);
        let targets = [
            target(key, 0.25, Some(a.impact_time * 1e3), None),
            target(key, 0.50, Some(b.impact_time * 1e3), None),
        ];
        let set = calibrate(&targets, &FitOptions::default()).unwrap();
        let m = &set.models[0];
        for r in &m.residuals {
            assert!(r.relative_error.abs() < 1e-4, "{r:?}");
        }
        assert!((m.contact.stiffness / 1800.0 - 1.0).abs() < 1e-2, "{:?}", m.contact);
    }

    #[test]
    fn lookup_matches_pressure_tolerance() {
        let set = CalibrationSet {
            models: vec![CalibratedModel {
                frame: FrameKind::Soft,
                pressure_kpa: Some(137.89),
                config: FrameConfig::Plus,
                mass: 1.14,
                contact: ContactModel::linear(1.0, 1.0, 1.0, 0.1),
                residuals: vec![],
            }],
        };
        assert!(set.lookup(&FrameKey::soft(138.0, FrameConfig::Plus)).is_ok());
        let e = set.lookup(&FrameKey::soft(100.0, FrameConfig::Plus)).unwrap_err();
        assert!(e.to_string().contains("soft 137.89 kPa plus"));
        let back = CalibrationSet::from_toml(&set.to_toml()).unwrap();
        assert_eq!(back, set);
    }

    #[test]
    fn targets_parse() {
        let s = r#"
[[target]]
frame = "rigid"
config = "plus"
height = 0.25
mass = 1.10
impact_time_ms = 8.0
peak_force = 430.0
"#;
        let t = TargetFile::from_toml(s).unwrap();
        assert_eq!(t.targets.len(), 1);
        assert_eq!(t.targets[0].key(), FrameKey::rigid(FrameConfig::Plus));
        assert!(TargetFile::from_toml("[[target]]\nframe = \"rigid\"\nbogus = 1\n").is_err());
    }

    #[test]
    fn embedded_calibration_loads() {
        let set = default_calibration();
        assert!(set.lookup(&FrameKey::rigid(FrameConfig::Plus)).is_ok());
        assert!(set.lookup(&FrameKey::soft(207.0, FrameConfig::Plus)).is_ok());
    }
}
