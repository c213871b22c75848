//! Planar grasp-wrench analysis: external wrench on a perched vehicle,
//! contact wrench generators, the bounded wrench hull, and force closure.
//!
//! The wrench frame sits at the object centre with +y pointing from the
//! centre towards the palm contact; torques are `p × f` about the centre.

use crate::math::WrenchPlanar;
use minilp::{ComparisonOp, OptimizationDirection, Problem};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

pub const DEFAULT_LOSS_CONE: f64 = 5.0 * std::f64::consts::PI / 180.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WrenchError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("all generator wrenches are zero")]
    Degenerate,
    #[error("linear program failed: {0}")]
    Solver(String),
    #[error("scenario parse error: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum ObjectShape {
    /// m.
    Circle { diameter: f64 },
    /// m; `height` is measured along the palm axis.
    Rectangle { width: f64, height: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ContactKind {
    /// Coulomb cone; the half-angle is `atan(μ)` of the scenario.
    FrictionCone,
    /// Tip force along the normal, uncertain within the loss cone.
    FrictionlessPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrictionContact {
    /// Object frame (m).
    pub position: [f64; 2],
    /// Inward unit normal.
    pub normal: [f64; 2],
    pub kind: ContactKind,
}

impl FrictionContact {
    fn new(position: [f64; 2], normal: [f64; 2], kind: ContactKind) -> Self {
        let n = (normal[0].hypot(normal[1])).max(f64::MIN_POSITIVE);
        FrictionContact { position, normal: [normal[0] / n, normal[1] / n], kind }
    }
}

fn default_gravity() -> f64 {
    crate::dynamics::GRAVITY
}

fn default_loss_cone() -> f64 {
    DEFAULT_LOSS_CONE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WrenchScenario {
    #[serde(default)]
    pub name: String,
    /// kg.
    pub vehicle_mass: f64,
    /// Perch tilt β (rad).
    pub tilt: f64,
    /// Motor thrust left during the perch (N).
    #[serde(default)]
    pub residual_thrust: f64,
    /// Vehicle centre of mass to the palm contact (m).
    pub r_ab: f64,
    pub friction: f64,
    pub object: ObjectShape,
    /// N.
    pub tip_force: f64,
    /// Half-width of the tip direction uncertainty (rad).
    #[serde(default = "default_loss_cone")]
    pub tip_loss_cone: f64,
    /// Elevation of circular-object tip contacts above the centre line
    /// towards the palm (rad); negative when the fingers wrap past it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tip_angle: Option<f64>,
    #[serde(default = "default_gravity")]
    pub gravity: f64,
    /// Explicit contacts; derived from the object shape when empty.
    #[serde(default, rename = "contact", skip_serializing_if = "Vec::is_empty")]
    pub contacts: Vec<FrictionContact>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    scenario: WrenchScenario,
}

impl WrenchScenario {
    pub fn from_toml(text: &str) -> Result<Self, WrenchError> {
        let f: ScenarioFile = toml::from_str(text).map_err(|e| WrenchError::Parse(e.to_string()))?;
        f.scenario.validate()?;
        Ok(f.scenario)
    }

    pub fn validate(&self) -> Result<(), WrenchError> {
        let bad = |m: &str| Err(WrenchError::Invalid(m.to_string()));
        if !(self.friction > 0.0) {
            return bad("friction coefficient must be positive");
        }
        if !(self.vehicle_mass > 0.0) || !(self.gravity > 0.0) {
            return bad("mass and gravity must be positive");
        }
        if !(self.r_ab > 0.0) {
            return bad("lever arm r_ab must be positive");
        }
        match self.object {
            ObjectShape::Circle { diameter } if !(diameter > 0.0) => return bad("circle diameter must be positive"),
            ObjectShape::Rectangle { width, height } if !(width > 0.0 && height > 0.0) => {
                return bad("rectangle sides must be positive")
            }
            _ => {}
        }
        if !(self.tip_force >= 0.0) || !(self.tip_loss_cone >= 0.0) || !self.tilt.is_finite() {
            return bad("tip force, loss cone and tilt must be finite and non-negative");
        }
        if !(self.residual_thrust >= 0.0) {
            return bad("residual thrust must be non-negative");
        }
        if self.contacts.is_empty() {
            if let ObjectShape::Circle { .. } = self.object {
                if self.tip_angle.is_none() {
                    return bad("circular object needs tip_angle or explicit contacts");
                }
            }
        }
        for c in &self.contacts {
            let n = c.normal[0].hypot(c.normal[1]);
            if (n - 1.0).abs() > 1e-9 {
                return bad("contact normals must be unit length");
            }
        }
        Ok(())
    }

    /// Object centre to palm contact (m).
    pub fn r_bc(&self) -> f64 {
        match self.object {
            ObjectShape::Circle { diameter } => 0.5 * diameter,
            ObjectShape::Rectangle { height, .. } => 0.5 * height,
        }
    }

    pub fn lever_arm(&self) -> f64 {
        self.r_ab + self.r_bc()
    }

    pub fn weight(&self) -> f64 {
        self.vehicle_mass * self.gravity
    }

    /// Largest palm reaction: the weight component along the palm axis.
    pub fn f_g_max(&self) -> f64 {
        self.weight() * self.tilt.cos()
    }

    pub fn cone_half_angle(&self) -> f64 {
        self.friction.atan()
    }

    pub fn contact_set(&self) -> Result<Vec<FrictionContact>, WrenchError> {
        if !self.contacts.is_empty() {
            return Ok(self.contacts.clone());
        }
        match self.object {
            ObjectShape::Circle { diameter } => {
                let phi = self.tip_angle.ok_or_else(|| WrenchError::Invalid("missing tip_angle".into()))?;
                Ok(circle_contact_set(diameter, phi))
            }
            ObjectShape::Rectangle { .. } => rect_contact_set(self),
        }
    }
}

/// Palm friction cone plus two tip point forces aimed at the centre.
pub fn circle_contact_set(diameter: f64, tip_angle: f64) -> Vec<FrictionContact> {
    let r = 0.5 * diameter;
    let (s, c) = tip_angle.sin_cos();
    vec![
        FrictionContact::new([-r * c, r * s], [c, -s], ContactKind::FrictionlessPoint),
        FrictionContact::new([r * c, r * s], [-c, -s], ContactKind::FrictionlessPoint),
        FrictionContact::new([0.0, r], [0.0, -1.0], ContactKind::FrictionCone),
    ]
}

/// Friction cones at both palm-side corners and tip forces on the side faces,
/// each aimed at the centre.
pub fn rect_contact_set(s: &WrenchScenario) -> Result<Vec<FrictionContact>, WrenchError> {
    let ObjectShape::Rectangle { width, height } = s.object else {
        return Err(WrenchError::Invalid("rect_contact_set needs a rectangular object".into()));
    };
    let (hw, hh) = (0.5 * width, 0.5 * height);
    Ok(vec![
        FrictionContact::new([-hw, -hw], [1.0, 1.0], ContactKind::FrictionlessPoint),
        FrictionContact::new([hw, -hw], [-1.0, 1.0], ContactKind::FrictionlessPoint),
        FrictionContact::new([hw, hh], [0.0, -1.0], ContactKind::FrictionCone),
        FrictionContact::new([-hw, hh], [0.0, -1.0], ContactKind::FrictionCone),
    ])
}

/// External wrench with the palm-axis force bracketed by `[fy_min, fy_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExternalWrench {
    pub fx: f64,
    pub fy_min: f64,
    pub fy_max: f64,
    pub tau: f64,
}

impl ExternalWrench {
    pub fn endpoints(&self) -> [WrenchPlanar; 2] {
        [WrenchPlanar::new(self.fx, self.fy_min, self.tau), WrenchPlanar::new(self.fx, self.fy_max, self.tau)]
    }
}

pub fn external_wrench(s: &WrenchScenario) -> ExternalWrench {
    let w = s.weight();
    let tangential = w * s.tilt.sin();
    let tau = match s.object {
        ObjectShape::Circle { .. } => tangential * s.lever_arm(),
        ObjectShape::Rectangle { .. } => 0.0,
    };
    ExternalWrench { fx: -tangential, fy_min: 0.0, fy_max: (w * s.tilt.cos() - s.residual_thrust).max(0.0), tau }
}

/// One contact's contribution: any point of the polytope spanned by the
/// origin and `vertices` (segment for one vertex, triangle for two).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub label: String,
    pub vertices: Vec<WrenchPlanar>,
}

fn rotate(v: [f64; 2], a: f64) -> [f64; 2] {
    let (s, c) = a.sin_cos();
    [v[0] * c - v[1] * s, v[0] * s + v[1] * c]
}

fn wrench_at(p: [f64; 2], f: [f64; 2]) -> WrenchPlanar {
    WrenchPlanar::new(f[0], f[1], p[0] * f[1] - p[1] * f[0])
}

/// Cone contacts give two independent edge wrenches at ±α with magnitude
/// `μ f_g_max`. Tip contacts give one force of `tip_force` anywhere within the
/// loss cone; their small torques are neglected.
pub fn contact_wrenches(s: &WrenchScenario) -> Result<Vec<Generator>, WrenchError> {
    let contacts = s.contact_set()?;
    let alpha = s.cone_half_angle();
    let edge = s.friction * s.f_g_max();
    let mut out = Vec::new();
    for (i, c) in contacts.iter().enumerate() {
        let id = i + 1;
        match c.kind {
            ContactKind::FrictionCone => {
                for (j, a) in [-alpha, alpha].into_iter().enumerate() {
                    let d = rotate(c.normal, a);
                    out.push(Generator {
                        label: format!("w{id}{}", j + 1),
                        vertices: vec![wrench_at(c.position, [edge * d[0], edge * d[1]])],
                    });
                }
            }
            ContactKind::FrictionlessPoint => {
                let dirs: Vec<[f64; 2]> = if s.tip_loss_cone > 0.0 {
                    vec![rotate(c.normal, -s.tip_loss_cone), rotate(c.normal, s.tip_loss_cone)]
                } else {
                    vec![c.normal]
                };
                let vertices = dirs
                    .into_iter()
                    .map(|d| WrenchPlanar::new(s.tip_force * d[0], s.tip_force * d[1], 0.0))
                    .collect();
                out.push(Generator { label: format!("w{id}"), vertices });
            }
        }
    }
    Ok(out)
}

/// Nominal (loss-free) tip wrench for contact `index`.
pub fn nominal_tip_wrench(s: &WrenchScenario, index: usize) -> Result<WrenchPlanar, WrenchError> {
    let contacts = s.contact_set()?;
    let c = contacts.get(index).ok_or_else(|| WrenchError::Invalid(format!("no contact {index}")))?;
    Ok(WrenchPlanar::new(s.tip_force * c.normal[0], s.tip_force * c.normal[1], 0.0))
}

fn v3(w: &WrenchPlanar) -> Vector3<f64> {
    Vector3::new(w.fx, w.fy, w.tau)
}

fn check_generators(gens: &[Generator]) -> Result<(), WrenchError> {
    if gens.iter().all(|g| g.vertices.iter().all(|v| v.norm() == 0.0)) {
        return Err(WrenchError::Degenerate);
    }
    if gens.iter().any(|g| g.vertices.is_empty() || g.vertices.iter().any(|v| !v.is_finite())) {
        return Err(WrenchError::Invalid("generator with no or non-finite vertices".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Resistible,
    NotResistible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Certificate {
    /// Weight per generator vertex, in generator order.
    Coefficients(Vec<Vec<f64>>),
    /// Direction `n` with `n·target - h(n) = margin > 0`, `h` the hull support.
    Separator { normal: [f64; 3], margin: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Closure {
    pub verdict: Verdict,
    pub certificate: Certificate,
}

/// Whether `-external` is realised by the generators within their force
/// bounds.
pub fn force_closure(gens: &[Generator], external: WrenchPlanar) -> Result<Closure, WrenchError> {
    check_generators(gens)?;
    let target = (-external).as_array();
    if let Some(c) = solve_primal(gens, target)? {
        return Ok(Closure { verdict: Verdict::Resistible, certificate: Certificate::Coefficients(c) });
    }
    let (normal, margin) = solve_separator(gens, target)?;
    Ok(Closure { verdict: Verdict::NotResistible, certificate: Certificate::Separator { normal, margin } })
}

fn solve_primal(gens: &[Generator], target: [f64; 3]) -> Result<Option<Vec<Vec<f64>>>, WrenchError> {
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let vars: Vec<Vec<_>> =
        gens.iter().map(|g| g.vertices.iter().map(|_| lp.add_var(0.0, (0.0, 1.0))).collect()).collect();
    for (g, vs) in gens.iter().zip(&vars) {
        if vs.len() > 1 {
            lp.add_constraint(vs.iter().map(|&v| (v, 1.0)).collect::<Vec<_>>(), ComparisonOp::Le, 1.0);
        }
        debug_assert_eq!(g.vertices.len(), vs.len());
    }
    for k in 0..3 {
        let expr: Vec<_> = gens
            .iter()
            .zip(&vars)
            .flat_map(|(g, vs)| g.vertices.iter().zip(vs).map(move |(w, &v)| (v, w.as_array()[k])))
            .collect();
        lp.add_constraint(expr, ComparisonOp::Eq, target[k]);
    }
    match lp.solve() {
        Ok(sol) => Ok(Some(vars.iter().map(|vs| vs.iter().map(|&v| sol[v].clamp(0.0, 1.0)).collect()).collect())),
        Err(minilp::Error::Infeasible) => Ok(None),
        Err(e) => Err(WrenchError::Solver(e.to_string())),
    }
}

/// Dual of the primal: maximise `y·t - Σ s_i` with `s_i ≥ max(0, y·v)` over
/// vertices of generator `i`, `y` in the unit box.
fn solve_separator(gens: &[Generator], target: [f64; 3]) -> Result<([f64; 3], f64), WrenchError> {
    let mut lp = Problem::new(OptimizationDirection::Maximize);
    let y: Vec<_> = (0..3).map(|k| lp.add_var(target[k], (-1.0, 1.0))).collect();
    for g in gens {
        let s = lp.add_var(-1.0, (0.0, f64::INFINITY));
        for v in &g.vertices {
            let a = v.as_array();
            let mut expr = vec![(s, 1.0)];
            expr.extend((0..3).map(|k| (y[k], -a[k])));
            lp.add_constraint(expr, ComparisonOp::Ge, 0.0);
        }
    }
    let sol = lp.solve().map_err(|e| WrenchError::Solver(e.to_string()))?;
    Ok(([sol[y[0]], sol[y[1]], sol[y[2]]], sol.objective()))
}

/// Realisable wrench set: Minkowski sum of the generator polytopes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WrenchHull {
    pub vertices: Vec<WrenchPlanar>,
    /// Outward unit normal and offset: `n·w ≤ offset` inside.
    pub facets: Vec<([f64; 3], f64)>,
}

fn support(gens: &[Generator], n: &Vector3<f64>) -> f64 {
    gens.iter().map(|g| g.vertices.iter().map(|v| n.dot(&v3(v))).fold(0.0, f64::max)).sum()
}

impl WrenchHull {
    pub fn new(gens: &[Generator]) -> Result<Self, WrenchError> {
        check_generators(gens)?;
        let scale = gens.iter().flat_map(|g| g.vertices.iter()).map(|v| v.norm()).fold(0.0, f64::max);
        let tol = 1e-9 * scale.max(1.0) * gens.len() as f64;

        // Facet normals of a Minkowski sum are crosses of summand edges.
        let mut edges: Vec<Vector3<f64>> = Vec::new();
        for g in gens {
            let mut pts = vec![Vector3::zeros()];
            pts.extend(g.vertices.iter().map(v3));
            for i in 0..pts.len() {
                for j in i + 1..pts.len() {
                    let e = pts[j] - pts[i];
                    if e.norm() > 0.0 {
                        edges.push(e.normalize());
                    }
                }
            }
        }
        let mut normals: Vec<Vector3<f64>> = Vec::new();
        for i in 0..edges.len() {
            for j in i + 1..edges.len() {
                let c = edges[i].cross(&edges[j]);
                if c.norm() < 1e-10 {
                    continue;
                }
                for n in [c.normalize(), -c.normalize()] {
                    if !normals.iter().any(|m| (m - n).norm() < 1e-9) {
                        normals.push(n);
                    }
                }
            }
        }

        // Candidate points: one vertex (or the origin) per summand.
        let mut points = vec![Vector3::zeros()];
        for g in gens {
            let mut next = Vec::with_capacity(points.len() * (g.vertices.len() + 1));
            for p in &points {
                next.push(*p);
                next.extend(g.vertices.iter().map(|v| p + v3(v)));
            }
            points = next;
        }

        let planes: Vec<(Vector3<f64>, f64)> = normals.iter().map(|n| (*n, support(gens, n))).collect();
        let on = |p: &Vector3<f64>, (n, h): &(Vector3<f64>, f64)| (n.dot(p) - h).abs() <= tol;
        let mut vertices: Vec<WrenchPlanar> = Vec::new();
        for p in &points {
            let touching: Vec<Vector3<f64>> = planes.iter().filter(|pl| on(p, pl)).map(|(n, _)| *n).collect();
            if touching.len() < 3 || rank(&touching) < 3 {
                continue;
            }
            let w = WrenchPlanar::new(p.x, p.y, p.z);
            if !vertices.iter().any(|v| (*v - w).norm() <= tol) {
                vertices.push(w);
            }
        }
        let facets = planes
            .iter()
            .filter(|pl| vertices.iter().filter(|v| on(&v3(v), pl)).count() >= 3)
            .map(|(n, h)| ([n.x, n.y, n.z], *h))
            .collect();
        Ok(WrenchHull { vertices, facets })
    }

    pub fn is_full_dimensional(&self) -> bool {
        rank(&self.vertices.iter().map(v3).collect::<Vec<_>>()) == 3
    }

    /// Facet containment with slack `tol`.
    pub fn contains(&self, w: WrenchPlanar, tol: f64) -> bool {
        self.is_full_dimensional()
            && self.facets.iter().all(|(n, h)| n[0] * w.fx + n[1] * w.fy + n[2] * w.tau <= h + tol)
    }

    /// Smallest facet offset: positive iff the origin is strictly inside,
    /// i.e. every small enough wrench is resistible.
    pub fn origin_margin(&self) -> f64 {
        if !self.is_full_dimensional() {
            return 0.0;
        }
        self.facets.iter().map(|(_, h)| *h).fold(f64::INFINITY, f64::min)
    }
}

fn rank(vs: &[Vector3<f64>]) -> usize {
    if vs.is_empty() {
        return 0;
    }
    let m = nalgebra::DMatrix::from_fn(vs.len(), 3, |i, j| vs[i][j]);
    m.svd(false, false).rank(1e-9 * vs.iter().map(|v| v.norm()).fold(1.0, f64::max))
}

/// Scenario verdict: closure must hold at both ends of the palm-axis
/// bracket.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioAnalysis {
    pub name: String,
    pub external: ExternalWrench,
    pub generators: Vec<Generator>,
    pub endpoint_closures: Vec<Closure>,
    pub verdict: Verdict,
    pub hull: WrenchHull,
    pub origin_margin: f64,
}

pub fn analyze(s: &WrenchScenario) -> Result<ScenarioAnalysis, WrenchError> {
    s.validate()?;
    let external = external_wrench(s);
    let generators = contact_wrenches(s)?;
    let endpoint_closures =
        external.endpoints().iter().map(|e| force_closure(&generators, *e)).collect::<Result<Vec<_>, _>>()?;
    let verdict = if endpoint_closures.iter().all(|c| c.verdict == Verdict::Resistible) {
        Verdict::Resistible
    } else {
        Verdict::NotResistible
    };
    let hull = WrenchHull::new(&generators)?;
    let origin_margin = hull.origin_margin();
    Ok(ScenarioAnalysis { name: s.name.clone(), external, generators, endpoint_closures, verdict, hull, origin_margin })
}

/// Dense-grid oracle: smallest distance from `target` to sampled bounded
/// combinations, plus the worst-case grid resolution error.
pub fn grid_distance(gens: &[Generator], target: WrenchPlanar, steps: usize) -> (f64, f64) {
    let t = v3(&target);
    // Each summand is sampled on a barycentric grid over {0} ∪ vertices.
    let samples: Vec<Vec<Vector3<f64>>> = gens
        .iter()
        .map(|g| {
            let mut out = Vec::new();
            let vs: Vec<Vector3<f64>> = g.vertices.iter().map(v3).collect();
            barycentric(&vs, steps, &mut out);
            out
        })
        .collect();
    let resolution: f64 = gens
        .iter()
        .map(|g| g.vertices.iter().map(|v| v.norm()).fold(0.0, f64::max) * g.vertices.len() as f64)
        .sum::<f64>()
        / (2.0 * steps as f64);
    let mut best = f64::INFINITY;
    let mut stack = vec![(0usize, Vector3::zeros())];
    while let Some((i, acc)) = stack.pop() {
        if i == samples.len() {
            best = best.min((acc - t).norm());
            continue;
        }
        for s in &samples[i] {
            stack.push((i + 1, acc + s));
        }
    }
    (best, resolution)
}

fn barycentric(vs: &[Vector3<f64>], steps: usize, out: &mut Vec<Vector3<f64>>) {
    match vs.len() {
        1 => out.extend((0..=steps).map(|i| vs[0] * (i as f64 / steps as f64))),
        2 => {
            for i in 0..=steps {
                for j in 0..=steps - i {
                    out.push(vs[0] * (i as f64 / steps as f64) + vs[1] * (j as f64 / steps as f64));
                }
            }
        }
        _ => {
            // Higher-order summands: vertex-wise grid with the sum bound.
            let n = vs.len();
            let mut idx = vec![0usize; n];
            loop {
                if idx.iter().sum::<usize>() <= steps {
                    out.push(idx.iter().zip(vs).map(|(&k, v)| v * (k as f64 / steps as f64)).sum());
                }
                let mut d = 0;
                loop {
                    if d == n {
                        return;
                    }
                    idx[d] += 1;
                    if idx[d] <= steps {
                        break;
                    }
                    idx[d] = 0;
                    d += 1;
                }
            }
        }
    }
}

/// Grid oracle support in direction `n`: max of `n·w` over sampled points.
pub fn grid_support(gens: &[Generator], n: [f64; 3], steps: usize) -> f64 {
    let n = Vector3::from(n);
    gens.iter()
        .map(|g| {
            let mut out = Vec::new();
            barycentric(&g.vertices.iter().map(v3).collect::<Vec<_>>(), steps, &mut out);
            out.iter().map(|p| n.dot(p)).fold(f64::NEG_INFINITY, f64::max)
        })
        .sum()
}
