//! The component/arrow scene architecture: typed components, typed
//! links, structural validation with diagnostics, deterministic
//! topological execution, and the in-process registry for external
//! component kinds.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dynamics::{integrate, BodyState, DynamicsError, OdeSystem, RigidBody6D};
use crate::formula::{eval, infer, parse, Env, Expr, TypeTag, Value};
use crate::frames::{FrameForest, Pose6D};
use crate::geometry::{deform, make_box, make_plane, make_torus, Mesh};
use crate::math::{Mat3, Quat, Vec3};
use crate::render::{sample_field, Camera, Image, Rasterizer};
use crate::stars::{
    load_catalog, visual, AngleUnit, ColumnMap, StarVisual, StarsError, VisualConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Error,
    Warning,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Severity::Error => write!(f, "ERROR"),
            Severity::Warning => write!(f, "WARNING"),
        }
    }
}

/// One validation finding. Prints as `SEVERITY subject: message`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub severity: Severity,
    pub subject: String,
    pub message: String,
}

impl Diagnostic {
    fn error(subject: impl Into<String>, message: impl Into<String>) -> Diagnostic {
        Diagnostic { severity: Severity::Error, subject: subject.into(), message: message.into() }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}: {}", self.severity, self.subject, self.message)
    }
}

/// Addresses one named output or input of a component.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PortRef {
    pub component: String,
    pub port: String,
}

impl PortRef {
    pub fn new(component: impl Into<String>, port: impl Into<String>) -> PortRef {
        PortRef { component: component.into(), port: port.into() }
    }
}

impl fmt::Display for PortRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.component, self.port)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Link {
    /// Carries a value from a source output port to a target input port
    /// each step.
    Information { source: PortRef, target: PortRef },
    /// Declares `child`'s frame to be relative to `parent`'s frame.
    Positioning { child: String, parent: String },
    /// Declares that `camera` renders `target` (a shape or star source).
    Visibility { camera: String, target: String },
}

impl Link {
    fn subject(&self) -> String {
        match self {
            Link::Information { source, target } => format!("link {source} -> {target}"),
            Link::Positioning { child, parent } => format!("link {child} in {parent}"),
            Link::Visibility { camera, target } => format!("link {camera} sees {target}"),
        }
    }
}

// component parameter records; these double as the scene-file schema

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverEquation {
    pub state: String,
    pub rhs: String,
    #[serde(default)]
    pub initial: f64,
    /// 1 (default) or 2. Second-order equations are lowered to pairs of
    /// first-order states by the scene loader before reaching the graph.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_dot: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverParams {
    pub equations: Vec<SolverEquation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedFormula {
    pub name: String,
    pub formula: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformParams {
    pub formulas: Vec<NamedFormula>,
}

/// Local pose description shared by frame-bearing components:
/// translation plus an optional axis-angle rotation `[ax, ay, az,
/// degrees]`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PoseSpec {
    #[serde(default)]
    pub translation: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation: Option<[f64; 4]>,
}

impl PoseSpec {
    pub fn to_pose(&self) -> Result<Pose6D, String> {
        let t = Vec3::from_slice(&self.translation);
        let q = match self.rotation {
            None => Quat::IDENTITY,
            Some([ax, ay, az, deg]) => {
                let axis = Vec3::new(ax, ay, az);
                if deg != 0.0 && axis.norm() == 0.0 {
                    return Err("rotation axis must be nonzero".into());
                }
                if axis.norm() == 0.0 {
                    Quat::IDENTITY
                } else {
                    Quat::from_axis_angle(axis, deg.to_radians())
                }
            }
        };
        Ok(Pose6D::new(t, q))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FrameParams {
    #[serde(flatten)]
    pub pose: PoseSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum PrimitiveSpec {
    Plane { nx: usize, ny: usize, sx: f64, sy: f64 },
    Box { hx: f64, hy: f64, hz: f64 },
    Torus { major_radius: f64, minor_radius: f64, nu: usize, nv: usize },
}

impl PrimitiveSpec {
    pub fn build(&self) -> Result<Mesh, String> {
        match *self {
            PrimitiveSpec::Plane { nx, ny, sx, sy } => make_plane(nx, ny, sx, sy),
            PrimitiveSpec::Box { hx, hy, hz } => make_box(hx, hy, hz),
            PrimitiveSpec::Torus { major_radius, minor_radius, nu, nv } => {
                make_torus(major_radius, minor_radius, nu, nv)
            }
        }
        .map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeformSpec {
    pub fx: String,
    pub fy: String,
    pub fz: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeParams {
    #[serde(flatten)]
    pub pose: PoseSpec,
    pub primitive: PrimitiveSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deform: Option<DeformSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarpSpec {
    pub x: String,
    pub y: String,
}

fn default_fov() -> f64 {
    60.0
}
fn default_width() -> usize {
    640
}
fn default_height() -> usize {
    480
}
fn default_near() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraParams {
    #[serde(flatten)]
    pub pose: PoseSpec,
    #[serde(default = "default_fov")]
    pub fov_y_deg: f64,
    #[serde(default = "default_width")]
    pub width: usize,
    #[serde(default = "default_height")]
    pub height: usize,
    #[serde(default = "default_near")]
    pub near: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warp: Option<WarpSpec>,
}

impl Default for CameraParams {
    fn default() -> CameraParams {
        CameraParams {
            pose: PoseSpec::default(),
            fov_y_deg: default_fov(),
            width: default_width(),
            height: default_height(),
            near: default_near(),
            warp: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldParams {
    /// Id of the shape whose scalar channel this field fills.
    pub shape: String,
    /// Expression over world `x`, `y`, `z` and `t`, Real or Vector(3).
    pub value: String,
    /// Colormap range `[lo, hi]`.
    pub range: [f64; 2],
}

fn formula_zero_vec() -> String {
    "[0, 0, 0]".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigidBodyParams {
    pub mass: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inertia_diag: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inertia: Option<[[f64; 3]; 3]>,
    /// World-frame force, Vector(3).
    #[serde(default = "formula_zero_vec")]
    pub force: String,
    /// Body-frame torque, Vector(3).
    #[serde(default = "formula_zero_vec")]
    pub torque: String,
    #[serde(default)]
    pub initial_position: [f64; 3],
    #[serde(default)]
    pub initial_velocity: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_rotation: Option<[f64; 4]>,
    #[serde(default)]
    pub initial_omega: [f64; 3],
}

impl RigidBodyParams {
    pub fn inertia_matrix(&self) -> Result<Mat3, String> {
        match (self.inertia_diag, self.inertia) {
            (Some(d), None) => Ok(Mat3::diagonal(d[0], d[1], d[2])),
            (None, Some(m)) => Ok(Mat3 { m }),
            (None, None) => Err("one of inertia_diag or inertia is required".into()),
            (Some(_), Some(_)) => Err("give either inertia_diag or inertia, not both".into()),
        }
    }

    pub fn initial_state(&self) -> Result<BodyState, String> {
        let spec = PoseSpec {
            translation: self.initial_position,
            rotation: self.initial_rotation,
        };
        let pose = spec.to_pose()?;
        Ok(BodyState {
            position: pose.translation,
            velocity: Vec3::from_slice(&self.initial_velocity),
            orientation: pose.orientation,
            omega: Vec3::from_slice(&self.initial_omega),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AngleUnitSpec {
    Degrees,
    Radians,
}

impl Default for AngleUnitSpec {
    fn default() -> AngleUnitSpec {
        AngleUnitSpec::Degrees
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMapSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub ra: String,
    pub dec: String,
    pub parallax: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vt: Option<String>,
    #[serde(default)]
    pub units: AngleUnitSpec,
}

impl ColumnMapSpec {
    pub fn to_map(&self) -> ColumnMap {
        ColumnMap {
            id: self.id.clone(),
            ra: self.ra.clone(),
            dec: self.dec.clone(),
            parallax: self.parallax.clone(),
            bt: self.bt.clone(),
            vt: self.vt.clone(),
            angle_unit: match self.units {
                AngleUnitSpec::Degrees => AngleUnit::Degrees,
                AngleUnitSpec::Radians => AngleUnit::Radians,
            },
        }
    }
}

fn default_r_min() -> f64 {
    0.5
}
fn default_radius_k() -> f64 {
    4.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StarSourceParams {
    pub catalog: String,
    pub columns: ColumnMapSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter: Option<String>,
    #[serde(default = "default_r_min")]
    pub r_min: f64,
    #[serde(default = "default_radius_k")]
    pub k: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color: Option<String>,
}

impl StarSourceParams {
    pub fn visual_config(&self) -> Result<VisualConfig, StarsError> {
        Ok(VisualConfig {
            r_min: self.r_min,
            k: self.k,
            color: self
                .color
                .as_deref()
                .map(|src| parse(src).map_err(|e| StarsError::ColorFormula(e.to_string())))
                .transpose()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ComponentKind {
    Solver(SolverParams),
    RigidBody(RigidBodyParams),
    Transform(TransformParams),
    Frame(FrameParams),
    Shape(ShapeParams),
    Camera(CameraParams),
    Field(FieldParams),
    StarSource(StarSourceParams),
    External { kind: String, config: serde_json::Value },
}

impl ComponentKind {
    pub fn name(&self) -> &str {
        match self {
            ComponentKind::Solver(_) => "solver",
            ComponentKind::RigidBody(_) => "rigid-body",
            ComponentKind::Transform(_) => "transform",
            ComponentKind::Frame(_) => "frame",
            ComponentKind::Shape(_) => "shape",
            ComponentKind::Camera(_) => "camera",
            ComponentKind::Field(_) => "field",
            ComponentKind::StarSource(_) => "star-source",
            ComponentKind::External { kind, .. } => kind,
        }
    }

    /// Whether this kind owns a node in the frame forest.
    pub fn frame_bearing(&self) -> bool {
        matches!(
            self,
            ComponentKind::Frame(_)
                | ComponentKind::Shape(_)
                | ComponentKind::Camera(_)
                | ComponentKind::RigidBody(_)
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub id: String,
    pub kind: ComponentKind,
}

impl Component {
    pub fn new(id: impl Into<String>, kind: ComponentKind) -> Component {
        Component { id: id.into(), kind }
    }
}

/// Kind names reserved for the built-in components.
pub const BUILTIN_KINDS: [&str; 9] = [
    "solver",
    "rigid-body",
    "transform",
    "frame",
    "shape",
    "camera",
    "field",
    "star-source",
    "external",
];

/// Host-supplied behavior of an external component instance. `dt` is 0
/// for the initialization pass at t0, where implementations should
/// publish their initial outputs.
pub trait ExternalComponent {
    fn step(
        &mut self,
        t: f64,
        dt: f64,
        inputs: &HashMap<String, Value>,
    ) -> Result<HashMap<String, Value>, String>;
}

type ExternalFactory =
    Box<dyn Fn(&serde_json::Value) -> Result<Box<dyn ExternalComponent>, String>>;

/// Declaration of an externally implemented component kind.
pub struct ExternalKind {
    pub name: String,
    pub inputs: Vec<(String, TypeTag)>,
    pub outputs: Vec<(String, TypeTag)>,
    pub factory: ExternalFactory,
}

/// In-process table of registered external kinds.
#[derive(Default)]
pub struct ExternalRegistry {
    kinds: HashMap<String, ExternalKind>,
}

impl ExternalRegistry {
    pub fn new() -> ExternalRegistry {
        ExternalRegistry::default()
    }

    pub fn register(&mut self, kind: ExternalKind) -> Result<(), String> {
        if BUILTIN_KINDS.contains(&kind.name.as_str()) {
            return Err(format!("kind name `{}` is reserved for a built-in", kind.name));
        }
        if self.kinds.contains_key(&kind.name) {
            return Err(format!("kind `{}` is already registered", kind.name));
        }
        self.kinds.insert(kind.name.clone(), kind);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&ExternalKind> {
        self.kinds.get(name)
    }
}

/// Components plus links. Construction is permissive; [`SceneGraph::validate`]
/// reports every structural violation.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SceneGraph {
    pub components: Vec<Component>,
    pub links: Vec<Link>,
}

impl SceneGraph {
    pub fn new(components: Vec<Component>, links: Vec<Link>) -> SceneGraph {
        SceneGraph { components, links }
    }

    pub fn component(&self, id: &str) -> Option<&Component> {
        self.components.iter().find(|c| c.id == id)
    }

    fn information_edges(&self) -> BTreeSet<(String, String)> {
        self.links
            .iter()
            .filter_map(|l| match l {
                Link::Information { source, target } => {
                    Some((source.component.clone(), target.component.clone()))
                }
                _ => None,
            })
            .collect()
    }

    /// Output ports a component publishes, with their types.
    pub fn output_ports(
        &self,
        comp: &Component,
        registry: &ExternalRegistry,
    ) -> Vec<(String, TypeTag)> {
        match &comp.kind {
            ComponentKind::Solver(p) => p
                .equations
                .iter()
                .map(|e| (e.state.clone(), TypeTag::Real))
                .collect(),
            ComponentKind::RigidBody(_) => BodyState::COLUMNS
                .iter()
                .map(|n| (n.to_string(), TypeTag::Real))
                .collect(),
            ComponentKind::Transform(p) => {
                let inputs = transform_input_vars(p);
                let mut tags: HashMap<String, TypeTag> =
                    inputs.into_iter().map(|n| (n, TypeTag::Real)).collect();
                tags.insert("t".into(), TypeTag::Real);
                p.formulas
                    .iter()
                    .map(|nf| {
                        let tag = parse(&nf.formula)
                            .ok()
                            .and_then(|e| infer(&e, &tags).ok())
                            .unwrap_or(TypeTag::Real);
                        (nf.name.clone(), tag)
                    })
                    .collect()
            }
            ComponentKind::External { kind, .. } => registry
                .get(kind)
                .map(|k| k.outputs.clone())
                .unwrap_or_default(),
            _ => Vec::new(),
        }
    }

    /// Input ports a component accepts, with their types.
    pub fn input_ports(
        &self,
        comp: &Component,
        registry: &ExternalRegistry,
    ) -> Vec<(String, TypeTag)> {
        match &comp.kind {
            ComponentKind::Transform(p) => transform_input_vars(p)
                .into_iter()
                .map(|n| (n, TypeTag::Real))
                .collect(),
            ComponentKind::Frame(_) => ["tx", "ty", "tz", "angle"]
                .iter()
                .map(|n| (n.to_string(), TypeTag::Real))
                .collect(),
            ComponentKind::External { kind, .. } => registry
                .get(kind)
                .map(|k| k.inputs.clone())
                .unwrap_or_default(),
            _ => Vec::new(),
        }
    }

    /// Reports every structural violation. An empty result means the
    /// graph is executable.
    pub fn validate(&self, registry: &ExternalRegistry) -> Vec<Diagnostic> {
        let mut d = Vec::new();
        let mut seen = BTreeSet::new();
        for c in &self.components {
            if !seen.insert(c.id.as_str()) {
                d.push(Diagnostic::error(&c.id, "duplicate component id"));
            }
            if c.id.is_empty() {
                d.push(Diagnostic::error("(empty id)", "component id must be nonempty"));
            }
        }
        for c in &self.components {
            self.validate_component(c, registry, &mut d);
        }
        self.validate_links(registry, &mut d);
        self.validate_information_dag(&mut d);
        self.validate_positioning_forest(&mut d);
        self.validate_required_inputs(registry, &mut d);
        d
    }

    fn validate_component(
        &self,
        c: &Component,
        registry: &ExternalRegistry,
        d: &mut Vec<Diagnostic>,
    ) {
        let err = |msg: String| Diagnostic::error(&c.id, msg);
        let check_formula =
            |src: &str, what: &str, allowed: &[&str], d: &mut Vec<Diagnostic>| match parse(src) {
                Err(e) => {
                    d.push(err(format!("{what}: {e}")));
                    None
                }
                Ok(expr) => {
                    for v in expr.free_variables() {
                        if !allowed.contains(&v.as_str()) {
                            d.push(err(format!("{what}: unknown variable `{v}`")));
                        }
                    }
                    Some(expr)
                }
            };
        match &c.kind {
            ComponentKind::Solver(p) => {
                if p.equations.is_empty() {
                    d.push(err("solver needs at least one equation".into()));
                    return;
                }
                let states: Vec<&str> = p.equations.iter().map(|e| e.state.as_str()).collect();
                let mut allowed: Vec<&str> = states.clone();
                allowed.push("t");
                for e in &p.equations {
                    if let Some(order) = e.order {
                        if order != 1 {
                            d.push(err(format!(
                                "equation for `{}`: order {order} must be lowered before execution",
                                e.state
                            )));
                        }
                    }
                    if !e.initial.is_finite() {
                        d.push(err(format!("initial value of `{}` must be finite", e.state)));
                    }
                    check_formula(&e.rhs, &format!("rhs of `{}`", e.state), &allowed, d);
                }
                // delegate state bookkeeping (duplicates, time-variable
                // collisions) and delta extraction to the dynamics checks
                if let Err(e) = self.build_solver_system(p) {
                    d.push(err(e.to_string()));
                }
            }
            ComponentKind::Transform(p) => {
                if p.formulas.is_empty() {
                    d.push(err("transform needs at least one formula".into()));
                }
                let mut names = BTreeSet::new();
                for nf in &p.formulas {
                    if !names.insert(nf.name.as_str()) {
                        d.push(err(format!("duplicate output name `{}`", nf.name)));
                    }
                    if let Ok(expr) = parse(&nf.formula) {
                        let mut tags: HashMap<String, TypeTag> = transform_input_vars(p)
                            .into_iter()
                            .map(|n| (n, TypeTag::Real))
                            .collect();
                        tags.insert("t".into(), TypeTag::Real);
                        if let Err(e) = infer(&expr, &tags) {
                            d.push(err(format!("formula `{}`: {e}", nf.name)));
                        }
                    } else if let Err(e) = parse(&nf.formula) {
                        d.push(err(format!("formula `{}`: {e}", nf.name)));
                    }
                }
            }
            ComponentKind::Frame(p) => {
                if let Err(e) = p.pose.to_pose() {
                    d.push(err(e));
                }
            }
            ComponentKind::Shape(p) => {
                if let Err(e) = p.pose.to_pose() {
                    d.push(err(e));
                }
                if let Err(e) = p.primitive.build() {
                    d.push(err(e));
                }
                if let Some(spec) = &p.deform {
                    let allowed = ["x", "y", "z", "t"];
                    check_formula(&spec.fx, "deform fx", &allowed, d);
                    check_formula(&spec.fy, "deform fy", &allowed, d);
                    check_formula(&spec.fz, "deform fz", &allowed, d);
                }
            }
            ComponentKind::Camera(p) => {
                if let Err(e) = p.pose.to_pose() {
                    d.push(err(e));
                }
                if let Err(e) = Camera::new(p.fov_y_deg, p.width, p.height, p.near) {
                    d.push(err(e.to_string()));
                }
                if let Some(w) = &p.warp {
                    let allowed = ["x", "y"];
                    check_formula(&w.x, "warp x", &allowed, d);
                    check_formula(&w.y, "warp y", &allowed, d);
                }
            }
            ComponentKind::Field(p) => {
                match self.component(&p.shape) {
                    None => d.push(err(format!("field targets unknown shape `{}`", p.shape))),
                    Some(target) if !matches!(target.kind, ComponentKind::Shape(_)) => {
                        d.push(err(format!(
                            "field target `{}` is a {}, not a shape",
                            p.shape,
                            target.kind.name()
                        )));
                    }
                    _ => {}
                }
                if !(p.range[0] < p.range[1]) {
                    d.push(err(format!(
                        "field range [{}, {}] must satisfy lo < hi",
                        p.range[0], p.range[1]
                    )));
                }
                if let Some(expr) = check_formula(&p.value, "field value", &["x", "y", "z", "t"], d)
                {
                    let tags: HashMap<String, TypeTag> = ["x", "y", "z", "t"]
                        .iter()
                        .map(|n| (n.to_string(), TypeTag::Real))
                        .collect();
                    match infer(&expr, &tags) {
                        Ok(TypeTag::Real | TypeTag::Integer) => {}
                        Ok(TypeTag::Vector(Some(3)) | TypeTag::Vector(None)) => {}
                        Ok(other) => d.push(err(format!(
                            "field value must be Real or Vector(3), got {other}"
                        ))),
                        Err(e) => d.push(err(format!("field value: {e}"))),
                    }
                }
            }
            ComponentKind::RigidBody(p) => {
                let allowed = ["t", "position", "velocity", "quaternion", "omega"];
                let force = check_formula(&p.force, "force", &allowed, d);
                let torque = check_formula(&p.torque, "torque", &allowed, d);
                match p.inertia_matrix() {
                    Err(e) => d.push(err(e)),
                    Ok(inertia) => {
                        if let (Some(f), Some(tq)) = (force, torque) {
                            if let Err(e) = RigidBody6D::new(p.mass, inertia, f, tq, Env::new()) {
                                d.push(err(e.to_string()));
                            }
                        }
                    }
                }
                if let Err(e) = p.initial_state() {
                    d.push(err(e));
                }
            }
            ComponentKind::StarSource(p) => {
                if let Some(f) = &p.filter {
                    match crate::stars::parse_predicate(f) {
                        Err(e) => d.push(err(e.to_string())),
                        Ok(expr) => {
                            if let Err(e) = crate::stars::filter(&[], &expr) {
                                d.push(err(e.to_string()));
                            }
                        }
                    }
                }
                if let Err(e) = p.visual_config() {
                    d.push(err(e.to_string()));
                }
                if !(p.r_min >= 0.0) || !(p.k >= 0.0) {
                    d.push(err("r_min and k must be nonnegative".into()));
                }
                if !std::path::Path::new(&p.catalog).is_file() {
                    d.push(err(format!("catalog `{}` is not a readable file", p.catalog)));
                }
            }
            ComponentKind::External { kind, .. } => {
                if registry.get(kind).is_none() {
                    d.push(err(format!("unknown external kind `{kind}`")));
                }
            }
        }
    }

    fn validate_links(&self, registry: &ExternalRegistry, d: &mut Vec<Diagnostic>) {
        let mut fed: BTreeSet<(String, String)> = BTreeSet::new();
        for link in &self.links {
            let subject = link.subject();
            let missing = |id: &str| !self.components.iter().any(|c| c.id == id);
            match link {
                Link::Information { source, target } => {
                    for pr in [source, target] {
                        if missing(&pr.component) {
                            d.push(Diagnostic::error(
                                &subject,
                                format!("unknown component `{}`", pr.component),
                            ));
                        }
                    }
                    let (Some(sc), Some(tc)) =
                        (self.component(&source.component), self.component(&target.component))
                    else {
                        continue;
                    };
                    let outs = self.output_ports(sc, registry);
                    let ins = self.input_ports(tc, registry);
                    let out_tag = outs.iter().find(|(n, _)| *n == source.port).map(|(_, t)| t);
                    let in_tag = ins.iter().find(|(n, _)| *n == target.port).map(|(_, t)| t);
                    match (out_tag, in_tag) {
                        (None, _) => d.push(Diagnostic::error(
                            &subject,
                            format!("`{}` declares no output `{}`", source.component, source.port),
                        )),
                        (_, None) => d.push(Diagnostic::error(
                            &subject,
                            format!("`{}` declares no input `{}`", target.component, target.port),
                        )),
                        (Some(a), Some(b)) => {
                            if !a.unifies(b) {
                                d.push(Diagnostic::error(
                                    &subject,
                                    format!("type mismatch: {a} does not unify with {b}"),
                                ));
                            }
                        }
                    }
                    if !fed.insert((target.component.clone(), target.port.clone())) {
                        d.push(Diagnostic::error(
                            &subject,
                            format!("input `{target}` is fed by more than one link"),
                        ));
                    }
                }
                Link::Positioning { child, parent } => {
                    for id in [child, parent] {
                        if missing(id) {
                            d.push(Diagnostic::error(
                                &subject,
                                format!("unknown component `{id}`"),
                            ));
                        }
                    }
                    for id in [child, parent] {
                        if let Some(c) = self.component(id) {
                            if !c.kind.frame_bearing() {
                                d.push(Diagnostic::error(
                                    &subject,
                                    format!("`{id}` is a {}, which bears no frame", c.kind.name()),
                                ));
                            }
                        }
                    }
                    if child == parent {
                        d.push(Diagnostic::error(&subject, "component positioned in itself"));
                    }
                }
                Link::Visibility { camera, target } => {
                    for id in [camera, target] {
                        if missing(id) {
                            d.push(Diagnostic::error(
                                &subject,
                                format!("unknown component `{id}`"),
                            ));
                        }
                    }
                    if let Some(c) = self.component(camera) {
                        if !matches!(c.kind, ComponentKind::Camera(_)) {
                            d.push(Diagnostic::error(
                                &subject,
                                format!("`{camera}` is a {}, not a camera", c.kind.name()),
                            ));
                        }
                    }
                    if let Some(c) = self.component(target) {
                        if !matches!(c.kind, ComponentKind::Shape(_) | ComponentKind::StarSource(_))
                        {
                            d.push(Diagnostic::error(
                                &subject,
                                format!(
                                    "`{target}` is a {}, not a shape or star source",
                                    c.kind.name()
                                ),
                            ));
                        }
                    }
                }
            }
        }
    }

    fn validate_information_dag(&self, d: &mut Vec<Diagnostic>) {
        let edges = self.information_edges();
        let mut adjacency: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for (a, b) in &edges {
            adjacency.entry(a.as_str()).or_default().push(b.as_str());
        }
        // iterative DFS with an explicit path for cycle reporting
        let mut state: HashMap<&str, u8> = HashMap::new(); // 1 in progress, 2 done
        for start in adjacency.keys().copied().collect::<Vec<_>>() {
            if state.get(start).copied() == Some(2) {
                continue;
            }
            let mut path: Vec<&str> = Vec::new();
            let mut stack: Vec<(&str, usize)> = vec![(start, 0)];
            while let Some(&mut (node, ref mut next)) = stack.last_mut() {
                if *next == 0 {
                    state.insert(node, 1);
                    path.push(node);
                }
                let children = adjacency.get(node).map(|v| v.as_slice()).unwrap_or(&[]);
                if *next < children.len() {
                    let child = children[*next];
                    *next += 1;
                    match state.get(child).copied() {
                        Some(1) => {
                            let from = path.iter().position(|&n| n == child).unwrap_or(0);
                            let mut cycle: Vec<&str> = path[from..].to_vec();
                            cycle.push(child);
                            d.push(Diagnostic::error(
                                "information links",
                                format!("cycle: {}", cycle.join(" -> ")),
                            ));
                            return; // one cycle report is enough
                        }
                        Some(2) => {}
                        _ => stack.push((child, 0)),
                    }
                } else {
                    state.insert(node, 2);
                    path.pop();
                    stack.pop();
                }
            }
        }
    }

    fn validate_positioning_forest(&self, d: &mut Vec<Diagnostic>) {
        let mut parent_of: BTreeMap<&str, &str> = BTreeMap::new();
        for link in &self.links {
            if let Link::Positioning { child, parent } = link {
                if let Some(first) = parent_of.get(child.as_str()) {
                    d.push(Diagnostic::error(
                        child,
                        format!("positioned in both `{first}` and `{parent}`"),
                    ));
                } else {
                    parent_of.insert(child, parent);
                }
            }
        }
        for start in parent_of.keys() {
            let mut hops = 0;
            let mut cur = *start;
            while let Some(next) = parent_of.get(cur) {
                cur = next;
                hops += 1;
                if cur == *start {
                    d.push(Diagnostic::error(
                        *start,
                        "positioning links form a cycle through this component",
                    ));
                    break;
                }
                if hops > parent_of.len() {
                    break;
                }
            }
        }
    }

    fn validate_required_inputs(&self, registry: &ExternalRegistry, d: &mut Vec<Diagnostic>) {
        let mut fed: BTreeSet<(String, String)> = BTreeSet::new();
        for link in &self.links {
            if let Link::Information { target, .. } = link {
                fed.insert((target.component.clone(), target.port.clone()));
            }
        }
        for c in &self.components {
            let required: Vec<String> = match &c.kind {
                ComponentKind::Transform(p) => transform_input_vars(p),
                ComponentKind::External { kind, .. } => registry
                    .get(kind)
                    .map(|k| k.inputs.iter().map(|(n, _)| n.clone()).collect())
                    .unwrap_or_default(),
                _ => Vec::new(), // frame inputs are optional overrides
            };
            for port in required {
                if !fed.contains(&(c.id.clone(), port.clone())) {
                    d.push(Diagnostic::error(
                        &c.id,
                        format!("input `{port}` has no incoming information link"),
                    ));
                }
            }
        }
    }

    /// Deterministic execution order: Kahn's algorithm over information
    /// links, ready set drained in ascending id order.
    pub fn topo_order(&self) -> Result<Vec<String>, Diagnostic> {
        let edges = self.information_edges();
        let mut indegree: BTreeMap<&str, usize> =
            self.components.iter().map(|c| (c.id.as_str(), 0)).collect();
        let mut out: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for (a, b) in &edges {
            if !indegree.contains_key(a.as_str()) || !indegree.contains_key(b.as_str()) {
                continue;
            }
            *indegree.get_mut(b.as_str()).expect("checked") += 1;
            out.entry(a.as_str()).or_default().push(b.as_str());
        }
        let mut ready: BTreeSet<&str> =
            indegree.iter().filter(|(_, n)| **n == 0).map(|(id, _)| *id).collect();
        let mut order = Vec::with_capacity(self.components.len());
        while let Some(&id) = ready.iter().next() {
            ready.remove(id);
            order.push(id.to_string());
            for &next in out.get(id).map(|v| v.as_slice()).unwrap_or(&[]) {
                let n = indegree.get_mut(next).expect("edge endpoints exist");
                *n -= 1;
                if *n == 0 {
                    ready.insert(next);
                }
            }
        }
        if order.len() != self.components.len() {
            return Err(Diagnostic::error("information links", "cycle prevents ordering"));
        }
        Ok(order)
    }

    fn build_solver_system(&self, p: &SolverParams) -> Result<OdeSystem, DynamicsError> {
        let mut names = Vec::new();
        let mut rhs = Vec::new();
        let mut initial = Vec::new();
        for e in &p.equations {
            names.push(e.state.clone());
            rhs.push(parse(&e.rhs).map_err(|err| {
                DynamicsError::Config(format!("rhs of `{}`: {err}", e.state))
            })?);
            initial.push(e.initial);
        }
        OdeSystem::new("t", names, rhs, initial, Env::new())
    }
}

fn transform_input_vars(p: &TransformParams) -> Vec<String> {
    let mut vars = Vec::new();
    for nf in &p.formulas {
        if let Ok(expr) = parse(&nf.formula) {
            for v in expr.free_variables() {
                if v != "t" && !vars.contains(&v) {
                    vars.push(v);
                }
            }
        }
    }
    vars
}

/// A component failure during execution.
#[derive(Debug, Clone, PartialEq)]
pub struct StepError {
    pub time: f64,
    pub component: String,
    pub message: String,
    /// True when the failure is numeric (nonfinite state, division by
    /// zero) rather than structural.
    pub numeric: bool,
}

impl fmt::Display for StepError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "component `{}` at t = {}: {}", self.component, self.time, self.message)
    }
}

impl std::error::Error for StepError {}

enum Runtime {
    Solver {
        sys: OdeSystem,
        state: Vec<f64>,
    },
    RigidBody {
        body: RigidBody6D,
        state: BodyState,
    },
    Transform {
        formulas: Vec<(String, Expr)>,
    },
    Frame {
        translation: Vec3,
        axis: Vec3,
        angle_deg: f64,
    },
    Shape {
        base: Mesh,
        deform: Option<(Expr, Expr, Expr)>,
        current: Mesh,
        field_range: Option<(f64, f64)>,
    },
    Camera {
        camera: Camera,
    },
    Field {
        shape: String,
        value: Expr,
        range: (f64, f64),
    },
    StarSource {
        visuals: Vec<StarVisual>,
    },
    External {
        outputs: Vec<(String, TypeTag)>,
        instance: Box<dyn ExternalComponent>,
    },
}

/// Compiled, runnable form of a valid [`SceneGraph`].
pub struct Engine {
    order: Vec<String>,
    runtimes: HashMap<String, Runtime>,
    /// (component, input var) <- source port, resolved from information
    /// links.
    wiring: HashMap<String, Vec<(String, PortRef)>>,
    visibility: Vec<(String, String)>,
    forest: FrameForest,
    table: HashMap<String, HashMap<String, Value>>,
    field_ids: Vec<String>,
    time: f64,
    started: bool,
}

impl Engine {
    /// Validates and compiles. Any diagnostic fails compilation.
    pub fn compile(graph: &SceneGraph, registry: &ExternalRegistry) -> Result<Engine, Vec<Diagnostic>> {
        let diagnostics = graph.validate(registry);
        if !diagnostics.is_empty() {
            return Err(diagnostics);
        }
        let order = graph.topo_order().map_err(|d| vec![d])?;
        let mut parent_of: HashMap<&str, &str> = HashMap::new();
        for link in &graph.links {
            if let Link::Positioning { child, parent } = link {
                parent_of.insert(child, parent);
            }
        }
        let mut engine = Engine {
            order,
            runtimes: HashMap::new(),
            wiring: HashMap::new(),
            visibility: Vec::new(),
            forest: FrameForest::new(),
            table: HashMap::new(),
            field_ids: Vec::new(),
            time: 0.0,
            started: false,
        };
        let mut errs = Vec::new();
        for link in &graph.links {
            match link {
                Link::Information { source, target } => {
                    engine
                        .wiring
                        .entry(target.component.clone())
                        .or_default()
                        .push((target.port.clone(), source.clone()));
                }
                Link::Visibility { camera, target } => {
                    engine.visibility.push((camera.clone(), target.clone()));
                }
                Link::Positioning { .. } => {}
            }
        }
        for w in engine.wiring.values_mut() {
            w.sort_by(|a, b| a.0.cmp(&b.0));
        }
        // insert frame nodes parents-first so cycle checks in the forest
        // never fire spuriously
        let mut pending: Vec<&Component> =
            graph.components.iter().filter(|c| c.kind.frame_bearing()).collect();
        while !pending.is_empty() {
            let before = pending.len();
            pending.retain(|c| {
                let parent = parent_of.get(c.id.as_str()).copied();
                if let Some(p) = parent {
                    if !engine.forest.contains(p) {
                        return true;
                    }
                }
                match engine.forest.insert(&c.id, parent, Pose6D::IDENTITY) {
                    Ok(()) => false,
                    Err(e) => {
                        errs.push(Diagnostic::error(&c.id, e.to_string()));
                        false
                    }
                }
            });
            if pending.len() == before {
                for c in &pending {
                    errs.push(Diagnostic::error(&c.id, "unresolvable positioning parent"));
                }
                break;
            }
        }
        // static local poses; frames and rigid bodies refresh theirs on
        // every pass
        for c in &graph.components {
            let pose = match &c.kind {
                ComponentKind::Shape(p) => p.pose.to_pose(),
                ComponentKind::Camera(p) => p.pose.to_pose(),
                ComponentKind::Frame(p) => p.pose.to_pose(),
                ComponentKind::RigidBody(p) => p
                    .initial_state()
                    .map(|s| Pose6D::new(s.position, s.orientation)),
                _ => continue,
            };
            match pose {
                Ok(pose) => {
                    if let Err(e) = engine.forest.set_local(&c.id, pose) {
                        errs.push(Diagnostic::error(&c.id, e.to_string()));
                    }
                }
                Err(msg) => errs.push(Diagnostic::error(&c.id, msg)),
            }
        }
        for c in &graph.components {
            match Engine::build_runtime(graph, c, registry) {
                Ok(rt) => {
                    if matches!(rt, Runtime::Field { .. }) {
                        engine.field_ids.push(c.id.clone());
                    }
                    engine.runtimes.insert(c.id.clone(), rt);
                }
                Err(msg) => errs.push(Diagnostic::error(&c.id, msg)),
            }
        }
        engine.field_ids.sort();
        if !errs.is_empty() {
            return Err(errs);
        }
        Ok(engine)
    }

    fn build_runtime(
        graph: &SceneGraph,
        c: &Component,
        registry: &ExternalRegistry,
    ) -> Result<Runtime, String> {
        let p = |src: &str| parse(src).map_err(|e| e.to_string());
        Ok(match &c.kind {
            ComponentKind::Solver(params) => {
                let sys = graph.build_solver_system(params).map_err(|e| e.to_string())?;
                let state = sys.initial.clone();
                Runtime::Solver { sys, state }
            }
            ComponentKind::RigidBody(params) => {
                let body = RigidBody6D::new(
                    params.mass,
                    params.inertia_matrix()?,
                    p(&params.force)?,
                    p(&params.torque)?,
                    Env::new(),
                )
                .map_err(|e| e.to_string())?;
                Runtime::RigidBody { body, state: params.initial_state()? }
            }
            ComponentKind::Transform(params) => {
                let mut formulas = Vec::new();
                for nf in &params.formulas {
                    formulas.push((nf.name.clone(), p(&nf.formula)?));
                }
                Runtime::Transform { formulas }
            }
            ComponentKind::Frame(params) => {
                let (axis, angle_deg) = match params.pose.rotation {
                    Some([ax, ay, az, deg]) => (Vec3::new(ax, ay, az), deg),
                    None => (Vec3::new(0.0, 0.0, 1.0), 0.0),
                };
                Runtime::Frame {
                    translation: Vec3::from_slice(&params.pose.translation),
                    axis,
                    angle_deg,
                }
            }
            ComponentKind::Shape(params) => {
                let base = params.primitive.build()?;
                let deform = match &params.deform {
                    None => None,
                    Some(s) => Some((p(&s.fx)?, p(&s.fy)?, p(&s.fz)?)),
                };
                Runtime::Shape { current: base.clone(), base, deform, field_range: None }
            }
            ComponentKind::Camera(params) => {
                let mut camera =
                    Camera::new(params.fov_y_deg, params.width, params.height, params.near)
                        .map_err(|e| e.to_string())?;
                if let Some(w) = &params.warp {
                    camera.warp = Some((p(&w.x)?, p(&w.y)?));
                }
                Runtime::Camera { camera }
            }
            ComponentKind::Field(params) => Runtime::Field {
                shape: params.shape.clone(),
                value: p(&params.value)?,
                range: (params.range[0], params.range[1]),
            },
            ComponentKind::StarSource(params) => {
                let load = load_catalog(&params.catalog, &params.columns.to_map())
                    .map_err(|e| e.to_string())?;
                let records = match &params.filter {
                    None => load.records,
                    Some(src) => {
                        let predicate = crate::stars::parse_predicate(src).map_err(|e| e.to_string())?;
                        crate::stars::filter(&load.records, &predicate).map_err(|e| e.to_string())?
                    }
                };
                let config = params.visual_config().map_err(|e| e.to_string())?;
                let mut visuals = Vec::with_capacity(records.len());
                for r in &records {
                    visuals.push(visual(r, &config).map_err(|e| e.to_string())?);
                }
                Runtime::StarSource { visuals }
            }
            ComponentKind::External { kind, config } => {
                let decl = registry
                    .get(kind)
                    .ok_or_else(|| format!("unknown external kind `{kind}`"))?;
                let instance = (decl.factory)(config)?;
                Runtime::External { outputs: decl.outputs.clone(), instance }
            }
        })
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    /// Published value of `component.port` after the latest pass.
    pub fn value(&self, component: &str, port: &str) -> Option<&Value> {
        self.table.get(component).and_then(|m| m.get(port))
    }

    pub fn forest(&self) -> &FrameForest {
        &self.forest
    }

    /// Runs the initialization pass at `t0` (a step with dt = 0), after
    /// which every component has published its initial outputs.
    pub fn init(&mut self, t0: f64) -> Result<(), StepError> {
        self.time = t0;
        self.started = true;
        self.pass(t0, 0.0)
    }

    /// Advances the scene by one step of size `dt`.
    pub fn step(&mut self, dt: f64) -> Result<(), StepError> {
        assert!(self.started, "call init before step");
        let t = self.time;
        self.pass(t, dt)?;
        self.time = t + dt;
        Ok(())
    }

    fn pass(&mut self, t: f64, dt: f64) -> Result<(), StepError> {
        let t_new = t + dt;
        let fail = |component: &str, message: String, numeric: bool| StepError {
            time: t_new,
            component: component.to_string(),
            message,
            numeric,
        };
        for i in 0..self.order.len() {
            let id = self.order[i].clone();
            let inputs = self.gather_inputs(&id).map_err(|m| fail(&id, m, false))?;
            let rt = self.runtimes.get_mut(&id).expect("runtime exists for every component");
            let mut published: Vec<(String, Value)> = Vec::new();
            match rt {
                Runtime::Solver { sys, state } => {
                    if dt > 0.0 {
                        sys.initial = state.clone();
                        let traj = integrate(sys, t, t_new, dt)
                            .map_err(|e| fail(&id, e.to_string(), e.is_numeric()))?;
                        let (_, last) = traj.last_row().expect("trajectory is never empty");
                        *state = last.to_vec();
                    }
                    for (name, v) in sys.state_names.iter().zip(state.iter()) {
                        published.push((name.clone(), Value::Real(*v)));
                    }
                }
                Runtime::RigidBody { body, state } => {
                    if dt > 0.0 {
                        let traj = body
                            .integrate(state, t, t_new, dt)
                            .map_err(|e| fail(&id, e.to_string(), e.is_numeric()))?;
                        let (_, last) = traj.last_row().expect("trajectory is never empty");
                        *state = BodyState::from_flat(last);
                    }
                    let flat = state.to_flat();
                    for (name, v) in BodyState::COLUMNS.iter().zip(flat) {
                        published.push((name.to_string(), Value::Real(v)));
                    }
                    self.forest
                        .set_local(&id, Pose6D::new(state.position, state.orientation))
                        .map_err(|e| fail(&id, e.to_string(), false))?;
                }
                Runtime::Transform { formulas } => {
                    let mut env = Env::new();
                    env.set_real("t", t_new);
                    for (name, value) in &inputs {
                        env.set(name.clone(), value.clone());
                    }
                    for (name, expr) in formulas.iter() {
                        let v = eval(expr, &env).map_err(|e| {
                            fail(&id, format!("formula `{name}`: {e}"), e.is_numeric())
                        })?;
                        env.set(name.clone(), v.clone());
                        published.push((name.clone(), v));
                    }
                }
                Runtime::Frame { translation, axis, angle_deg } => {
                    let mut tr = *translation;
                    let mut deg = *angle_deg;
                    for (name, value) in &inputs {
                        let x = value.as_real().ok_or_else(|| {
                            fail(&id, format!("input `{name}` must be scalar"), false)
                        })?;
                        match name.as_str() {
                            "tx" => tr.x = x,
                            "ty" => tr.y = x,
                            "tz" => tr.z = x,
                            "angle" => deg = x,
                            _ => {}
                        }
                    }
                    let q = if deg == 0.0 || axis.norm() == 0.0 {
                        Quat::IDENTITY
                    } else {
                        Quat::from_axis_angle(*axis, deg.to_radians())
                    };
                    self.forest
                        .set_local(&id, Pose6D::new(tr, q))
                        .map_err(|e| fail(&id, e.to_string(), false))?;
                }
                Runtime::Shape { base, deform: df, current, field_range } => {
                    // the pose is static and installed at compile; only
                    // the deformation is time dependent
                    if let Some((fx, fy, fz)) = df {
                        let mut env = Env::new();
                        env.set_real("t", t_new);
                        *current = deform(base, fx, fy, fz, &env)
                            .map_err(|e| fail(&id, e.to_string(), true))?;
                        *field_range = None;
                    }
                }
                Runtime::Camera { .. } | Runtime::StarSource { .. } | Runtime::Field { .. } => {}
                Runtime::External { outputs, instance } => {
                    let input_map: HashMap<String, Value> = inputs.into_iter().collect();
                    let out = instance
                        .step(t_new, dt, &input_map)
                        .map_err(|m| fail(&id, m, false))?;
                    for (name, declared) in outputs.iter() {
                        let Some(v) = out.get(name) else {
                            return Err(fail(&id, format!("missing declared output `{name}`"), false));
                        };
                        let got = TypeTag::of(v);
                        if !got.unifies(declared) {
                            return Err(fail(
                                &id,
                                format!("output `{name}` is {got}, declared {declared}"),
                                false,
                            ));
                        }
                        published.push((name.clone(), v.clone()));
                    }
                }
            }
            if !published.is_empty() {
                self.table.insert(id.clone(), published.into_iter().collect());
            }
        }
        self.sample_fields(t_new)?;
        Ok(())
    }

    fn gather_inputs(&self, id: &str) -> Result<Vec<(String, Value)>, String> {
        let mut out = Vec::new();
        if let Some(wires) = self.wiring.get(id) {
            for (port, source) in wires {
                let v = self
                    .value(&source.component, &source.port)
                    .ok_or_else(|| format!("source `{source}` has not published"))?;
                out.push((port.clone(), v.clone()));
            }
        }
        Ok(out)
    }

    fn sample_fields(&mut self, t_new: f64) -> Result<(), StepError> {
        for i in 0..self.field_ids.len() {
            let id = self.field_ids[i].clone();
            let Some(Runtime::Field { shape, value, range }) = self.runtimes.get(&id) else {
                continue;
            };
            let shape_id = shape.clone();
            let value = value.clone();
            let range = *range;
            let absolute = self.forest.absolute(&shape_id).map_err(|e| StepError {
                time: t_new,
                component: id.clone(),
                message: e.to_string(),
                numeric: false,
            })?;
            let Some(Runtime::Shape { current, field_range, .. }) =
                self.runtimes.get_mut(&shape_id)
            else {
                continue;
            };
            let world = Mesh {
                vertices: current.vertices.iter().map(|&v| absolute.apply(v)).collect(),
                triangles: current.triangles.clone(),
                scalar: None,
            };
            let mut env = Env::new();
            env.set_real("t", t_new);
            let scalar = sample_field(&world, &value, &env).map_err(|e| StepError {
                time: t_new,
                component: id.clone(),
                message: e.to_string(),
                numeric: true,
            })?;
            current.scalar = Some(scalar);
            *field_range = Some(range);
        }
        Ok(())
    }

    /// Shapes and star sources connected to `camera_id` by visibility
    /// links, rendered back to front by the z-buffer. Unknown camera ids
    /// are an error.
    pub fn render(&self, camera_id: &str) -> Result<Image, String> {
        let Some(Runtime::Camera { camera }) = self.runtimes.get(camera_id) else {
            return Err(format!("unknown camera `{camera_id}`"));
        };
        let cam_pose = self
            .forest
            .absolute(camera_id)
            .map_err(|e| format!("camera `{camera_id}`: {e}"))?;
        let cam_from_world = cam_pose.invert();
        let mut targets: Vec<&str> = self
            .visibility
            .iter()
            .filter(|(c, _)| c == camera_id)
            .map(|(_, t)| t.as_str())
            .collect();
        targets.sort();
        let mut raster = Rasterizer::new(camera.width, camera.height);
        for id in &targets {
            if let Some(Runtime::StarSource { visuals }) = self.runtimes.get(*id) {
                let mut sprites = Vec::new();
                for v in visuals {
                    let dir_cam = cam_from_world.orientation.rotate(v.direction);
                    if dir_cam.z >= 0.0 {
                        continue;
                    }
                    let p = dir_cam * (2.0 * camera.near / -dir_cam.z);
                    if let Some(proj) =
                        camera.project(p).map_err(|e| format!("star source `{id}`: {e}"))?
                    {
                        sprites.push(v.sprite_at(proj.px, proj.py));
                    }
                }
                raster.draw_stars(&sprites);
            }
        }
        for id in &targets {
            if let Some(Runtime::Shape { current, field_range, .. }) = self.runtimes.get(*id) {
                let shape_pose = self
                    .forest
                    .absolute(id)
                    .map_err(|e| format!("shape `{id}`: {e}"))?;
                let to_camera = cam_from_world.compose(&shape_pose);
                raster
                    .draw_mesh(camera, &to_camera, current, *field_range)
                    .map_err(|e| format!("shape `{id}`: {e}"))?;
            }
        }
        Ok(raster.into_image())
    }

}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn solver1(id: &str, state: &str, rhs: &str, initial: f64) -> Component {
        Component::new(
            id,
            ComponentKind::Solver(SolverParams {
                equations: vec![SolverEquation {
                    state: state.into(),
                    rhs: rhs.into(),
                    initial,
                    order: None,
                    initial_dot: None,
                }],
            }),
        )
    }

    fn transform1(id: &str, name: &str, formula: &str) -> Component {
        Component::new(
            id,
            ComponentKind::Transform(TransformParams {
                formulas: vec![NamedFormula { name: name.into(), formula: formula.into() }],
            }),
        )
    }

    fn frame(id: &str) -> Component {
        Component::new(id, ComponentKind::Frame(FrameParams::default()))
    }

    fn plane_shape(id: &str) -> Component {
        Component::new(
            id,
            ComponentKind::Shape(ShapeParams {
                pose: PoseSpec::default(),
                primitive: PrimitiveSpec::Plane { nx: 1, ny: 1, sx: 1.0, sy: 1.0 },
                deform: None,
            }),
        )
    }

    fn camera(id: &str) -> Component {
        Component::new(id, ComponentKind::Camera(CameraParams::default()))
    }

    fn info(sc: &str, sp: &str, tc: &str, tp: &str) -> Link {
        Link::Information { source: PortRef::new(sc, sp), target: PortRef::new(tc, tp) }
    }

    fn positioned(child: &str, parent: &str) -> Link {
        Link::Positioning { child: child.into(), parent: parent.into() }
    }

    fn sees(camera: &str, target: &str) -> Link {
        Link::Visibility { camera: camera.into(), target: target.into() }
    }

    fn demo_graph() -> SceneGraph {
        SceneGraph::new(
            vec![
                solver1("driver", "x", "-x", 1.0),
                transform1("scale", "tx", "2 * x"),
                frame("pivot"),
                plane_shape("panel"),
                camera("eye"),
            ],
            vec![
                info("driver", "x", "scale", "x"),
                info("scale", "tx", "pivot", "tx"),
                positioned("panel", "pivot"),
                sees("eye", "panel"),
            ],
        )
    }

    #[test]
    fn demo_graph_validates_clean() {
        let reg = ExternalRegistry::new();
        let d = demo_graph().validate(&reg);
        assert!(d.is_empty(), "unexpected diagnostics: {d:?}");
    }

    #[test]
    fn information_cycle_is_reported_with_path() {
        let g = SceneGraph::new(
            vec![transform1("a", "y", "x + 1"), transform1("b", "y", "x + 1")],
            vec![info("a", "y", "b", "x"), info("b", "y", "a", "x")],
        );
        let d = g.validate(&ExternalRegistry::new());
        let cycle = d.iter().find(|di| di.message.contains("cycle")).expect("cycle diagnostic");
        assert!(cycle.message.contains("a -> b -> a") || cycle.message.contains("b -> a -> b"));
        assert!(g.topo_order().is_err());
    }

    #[test]
    fn multiple_parents_are_reported() {
        let g = SceneGraph::new(
            vec![frame("f1"), frame("f2"), plane_shape("s")],
            vec![positioned("s", "f1"), positioned("s", "f2")],
        );
        let d = g.validate(&ExternalRegistry::new());
        assert!(d.iter().any(|di| di.subject == "s" && di.message.contains("positioned in both")));
    }

    #[test]
    fn positioning_cycle_is_reported() {
        let g = SceneGraph::new(
            vec![frame("f1"), frame("f2")],
            vec![positioned("f1", "f2"), positioned("f2", "f1")],
        );
        let d = g.validate(&ExternalRegistry::new());
        assert!(d.iter().any(|di| di.message.contains("positioning links form a cycle")));
    }

    #[test]
    fn dangling_link_endpoint_is_reported() {
        let g = SceneGraph::new(
            vec![transform1("t", "y", "x * 2")],
            vec![info("ghost", "x", "t", "x")],
        );
        let d = g.validate(&ExternalRegistry::new());
        assert!(d.iter().any(|di| di.message.contains("unknown component `ghost`")));
    }

    #[test]
    fn visibility_endpoints_are_checked() {
        let g = SceneGraph::new(
            vec![camera("eye"), frame("f"), plane_shape("s")],
            vec![sees("eye", "f"), sees("f", "s")],
        );
        let d = g.validate(&ExternalRegistry::new());
        assert!(d.iter().any(|di| di.message.contains("not a shape or star source")));
        assert!(d.iter().any(|di| di.message.contains("not a camera")));
    }

    #[test]
    fn information_type_mismatch_is_reported() {
        let g = SceneGraph::new(
            vec![transform1("vec", "v", "[1.0, 2.0, 3.0]"), transform1("scalar", "y", "x + 1")],
            vec![info("vec", "v", "scalar", "x")],
        );
        let d = g.validate(&ExternalRegistry::new());
        assert!(
            d.iter().any(|di| di.message.contains("type mismatch")),
            "diagnostics: {d:?}"
        );
    }

    #[test]
    fn unknown_ports_are_reported() {
        let g = SceneGraph::new(
            vec![solver1("s", "x", "-x", 1.0), transform1("t", "y", "x * 2")],
            vec![
                info("s", "nope", "t", "x"),
                info("s", "x", "t", "nope"),
            ],
        );
        let d = g.validate(&ExternalRegistry::new());
        assert!(d.iter().any(|di| di.message.contains("no output `nope`")));
        assert!(d.iter().any(|di| di.message.contains("no input `nope`")));
    }

    #[test]
    fn unfed_transform_input_is_reported() {
        let g = SceneGraph::new(vec![transform1("t", "y", "x * 2")], vec![]);
        let d = g.validate(&ExternalRegistry::new());
        assert!(d
            .iter()
            .any(|di| di.subject == "t" && di.message.contains("no incoming information link")));
    }

    #[test]
    fn doubly_fed_input_is_reported() {
        let g = SceneGraph::new(
            vec![
                solver1("s1", "x", "-x", 1.0),
                solver1("s2", "x", "-x", 1.0),
                transform1("t", "y", "x * 2"),
            ],
            vec![info("s1", "x", "t", "x"), info("s2", "x", "t", "x")],
        );
        let d = g.validate(&ExternalRegistry::new());
        assert!(d.iter().any(|di| di.message.contains("more than one link")));
    }

    #[test]
    fn topo_order_follows_links_then_ids() {
        let g = demo_graph();
        let order = g.topo_order().unwrap();
        let pos = |id: &str| order.iter().position(|x| x == id).unwrap();
        assert!(pos("driver") < pos("scale"));
        assert!(pos("scale") < pos("pivot"));

        let tie = SceneGraph::new(vec![transform1("b", "y", "1.0"), frame("a")], vec![]);
        assert_eq!(tie.topo_order().unwrap(), vec!["a".to_string(), "b".to_string()]);

        assert!(SceneGraph::default().topo_order().unwrap().is_empty());
    }

    #[test]
    fn init_publishes_initial_values_through_links() {
        let g = SceneGraph::new(
            vec![solver1("s", "x", "-x", 3.0), transform1("t", "y", "2 * x")],
            vec![info("s", "x", "t", "x")],
        );
        let reg = ExternalRegistry::new();
        let mut engine = Engine::compile(&g, &reg).unwrap();
        engine.init(0.0).unwrap();
        assert_eq!(engine.value("s", "x"), Some(&Value::Real(3.0)));
        assert_eq!(engine.value("t", "y"), Some(&Value::Real(6.0)));
    }

    #[test]
    fn solver_publishes_rk4_step_result() {
        let g = SceneGraph::new(vec![solver1("s", "x", "-x", 1.0)], vec![]);
        let reg = ExternalRegistry::new();
        let mut engine = Engine::compile(&g, &reg).unwrap();
        engine.init(0.0).unwrap();
        engine.step(0.1).unwrap();
        let Some(Value::Real(x)) = engine.value("s", "x") else {
            panic!("solver did not publish x")
        };
        assert!((x - 0.9048375).abs() < 1e-15);
        assert!((engine.time() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn frame_inputs_move_the_frame() {
        let g = SceneGraph::new(
            vec![transform1("t", "out", "1.0"), frame("f"), plane_shape("s")],
            vec![info("t", "out", "f", "tx"), positioned("s", "f")],
        );
        let reg = ExternalRegistry::new();
        let mut engine = Engine::compile(&g, &reg).unwrap();
        engine.init(0.0).unwrap();
        let abs = engine.forest().absolute("s").unwrap();
        assert!((abs.translation.x - 1.0).abs() < 1e-15);
        assert_eq!(abs.translation.y, 0.0);
    }

    struct Lowpass {
        alpha: f64,
        y: f64,
    }

    impl ExternalComponent for Lowpass {
        fn step(
            &mut self,
            _t: f64,
            dt: f64,
            inputs: &HashMap<String, Value>,
        ) -> Result<HashMap<String, Value>, String> {
            let u = inputs
                .get("u")
                .and_then(|v| v.as_real())
                .ok_or_else(|| "missing input `u`".to_string())?;
            if dt > 0.0 {
                self.y += self.alpha * (u - self.y);
            }
            Ok(HashMap::from([("y".to_string(), Value::Real(self.y))]))
        }
    }

    fn lowpass_kind() -> ExternalKind {
        ExternalKind {
            name: "lowpass".into(),
            inputs: vec![("u".into(), TypeTag::Real)],
            outputs: vec![("y".into(), TypeTag::Real)],
            factory: Box::new(|config| {
                let alpha = config
                    .get("alpha")
                    .and_then(|v| v.as_f64())
                    .ok_or_else(|| "config needs a numeric `alpha`".to_string())?;
                Ok(Box::new(Lowpass { alpha, y: 0.0 }))
            }),
        }
    }

    #[test]
    fn external_component_runs_in_the_step_loop() {
        let mut reg = ExternalRegistry::new();
        reg.register(lowpass_kind()).unwrap();
        let g = SceneGraph::new(
            vec![
                transform1("one", "u", "1.0"),
                Component::new(
                    "lp",
                    ComponentKind::External {
                        kind: "lowpass".into(),
                        config: serde_json::json!({ "alpha": 0.3 }),
                    },
                ),
            ],
            vec![info("one", "u", "lp", "u")],
        );
        assert!(g.validate(&reg).is_empty());
        let mut engine = Engine::compile(&g, &reg).unwrap();
        engine.init(0.0).unwrap();
        assert_eq!(engine.value("lp", "y"), Some(&Value::Real(0.0)));
        for _ in 0..10 {
            engine.step(0.1).unwrap();
        }
        let Some(Value::Real(y)) = engine.value("lp", "y") else { panic!("no output") };
        let expected = 1.0 - 0.7f64.powi(10);
        assert!((y - expected).abs() < 1e-12, "{y} vs {expected}");
    }

    #[test]
    fn registry_rejects_builtin_and_duplicate_names() {
        let mut reg = ExternalRegistry::new();
        let mut named = lowpass_kind();
        named.name = "solver".into();
        assert!(reg.register(named).unwrap_err().contains("reserved"));
        reg.register(lowpass_kind()).unwrap();
        assert!(reg.register(lowpass_kind()).unwrap_err().contains("already registered"));
    }

    #[test]
    fn unregistered_external_kind_is_a_diagnostic() {
        let g = SceneGraph::new(
            vec![Component::new(
                "lp",
                ComponentKind::External { kind: "lowpass".into(), config: serde_json::json!({}) },
            )],
            vec![],
        );
        let d = g.validate(&ExternalRegistry::new());
        assert!(d.iter().any(|di| di.message.contains("unknown external kind `lowpass`")));
    }

    struct WrongShape;

    impl ExternalComponent for WrongShape {
        fn step(
            &mut self,
            _t: f64,
            _dt: f64,
            _inputs: &HashMap<String, Value>,
        ) -> Result<HashMap<String, Value>, String> {
            Ok(HashMap::from([("y".to_string(), Value::Boolean(true))]))
        }
    }

    #[test]
    fn external_output_type_is_checked_at_runtime() {
        let mut reg = ExternalRegistry::new();
        reg.register(ExternalKind {
            name: "liar".into(),
            inputs: vec![],
            outputs: vec![("y".into(), TypeTag::Real)],
            factory: Box::new(|_| Ok(Box::new(WrongShape))),
        })
        .unwrap();
        let g = SceneGraph::new(
            vec![Component::new(
                "w",
                ComponentKind::External { kind: "liar".into(), config: serde_json::json!({}) },
            )],
            vec![],
        );
        let mut engine = Engine::compile(&g, &reg).unwrap();
        let err = engine.init(0.0).unwrap_err();
        assert_eq!(err.component, "w");
        assert!(err.message.contains("declared Real"), "{}", err.message);
    }

    #[test]
    fn unrelated_components_do_not_change_results() {
        let reg = ExternalRegistry::new();
        let base = SceneGraph::new(
            vec![solver1("s", "x", "-x", 1.0), transform1("t", "y", "3 * x")],
            vec![info("s", "x", "t", "x")],
        );
        let mut extended = base.clone();
        extended.components.push(solver1("zz", "w", "t - w", 5.0));

        let run = |g: &SceneGraph| {
            let mut engine = Engine::compile(g, &reg).unwrap();
            engine.init(0.0).unwrap();
            for _ in 0..20 {
                engine.step(0.05).unwrap();
            }
            let Some(&Value::Real(y)) = engine.value("t", "y") else { panic!("no output") };
            y
        };
        assert_eq!(run(&base).to_bits(), run(&extended).to_bits());
    }

    #[test]
    fn engine_runs_are_bitwise_deterministic() {
        let reg = ExternalRegistry::new();
        let run = || {
            let mut engine = Engine::compile(&demo_graph(), &reg).unwrap();
            engine.init(0.0).unwrap();
            for _ in 0..100 {
                engine.step(0.01).unwrap();
            }
            let Some(&Value::Real(x)) = engine.value("driver", "x") else { panic!() };
            let Some(&Value::Real(tx)) = engine.value("scale", "tx") else { panic!() };
            let abs = engine.forest().absolute("panel").unwrap();
            (x.to_bits(), tx.to_bits(), abs.translation.x.to_bits())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn demo_graph_renders_through_the_camera() {
        let reg = ExternalRegistry::new();
        let mut g = demo_graph();
        // pull the camera back so the unit panel is in view
        if let ComponentKind::Camera(p) = &mut g.components[4].kind {
            p.pose.translation = [0.0, 0.0, 3.0];
            p.width = 64;
            p.height = 64;
        }
        let mut engine = Engine::compile(&g, &reg).unwrap();
        engine.init(0.0).unwrap();
        let image = engine.render("eye").unwrap();
        let lit = image.pixels.iter().filter(|p| **p != [0, 0, 0]).count();
        assert!(lit > 0, "panel should be visible");
        assert!(engine.render("panel").is_err());
    }

    #[test]
    fn random_valid_graphs_compile_and_run() {
        let mut rng = StdRng::seed_from_u64(20260814);
        let reg = ExternalRegistry::new();
        for round in 0..1000 {
            let mut components = Vec::new();
            let mut links = Vec::new();
            let mut ports: Vec<(String, String)> = Vec::new();

            let n_solvers = rng.random_range(1..=3usize);
            for i in 0..n_solvers {
                let id = format!("s{i}");
                let state = format!("x{i}");
                let rhs = match rng.random_range(0..3) {
                    0 => format!("-{state}"),
                    1 => format!("t - {state}"),
                    _ => format!("sin(t) - 0.5 * {state}"),
                };
                components.push(solver1(&id, &state, &rhs, rng.random_range(-2.0..2.0)));
                ports.push((id, state));
            }
            let n_transforms = rng.random_range(0..=3usize);
            for i in 0..n_transforms {
                let id = format!("t{i}");
                let c = rng.random_range(1..5);
                components.push(transform1(&id, "y", &format!("u * {c} + 1")));
                let (sc, sp) = ports[rng.random_range(0..ports.len())].clone();
                links.push(info(&sc, &sp, &id, "u"));
                ports.push((id, "y".into()));
            }
            let n_frames = rng.random_range(0..=3usize);
            for i in 0..n_frames {
                let id = format!("f{i}");
                components.push(frame(&id));
                if i > 0 && rng.random_range(0..2) == 0 {
                    links.push(positioned(&id, &format!("f{}", rng.random_range(0..i))));
                }
                if rng.random_range(0..2) == 0 {
                    let (sc, sp) = ports[rng.random_range(0..ports.len())].clone();
                    links.push(info(&sc, &sp, &id, "tz"));
                }
            }

            let g = SceneGraph::new(components, links);
            let d = g.validate(&reg);
            assert!(d.is_empty(), "round {round}: unexpected diagnostics {d:?}");
            let mut engine = Engine::compile(&g, &reg).unwrap_or_else(|e| {
                panic!("round {round}: compile failed {e:?}");
            });
            engine.init(0.0).unwrap();
            for _ in 0..10 {
                engine.step(0.05).unwrap();
            }
            for (c, p) in &ports {
                let Some(&Value::Real(v)) = engine.value(c, p) else {
                    panic!("round {round}: `{c}.{p}` unpublished");
                };
                assert!(v.is_finite(), "round {round}: `{c}.{p}` nonfinite");
            }
        }
    }
}
