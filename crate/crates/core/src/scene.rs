//! Scene files: the JSON serialization of a component graph together
//! with a time grid and output sinks, plus the batch run loop that
//! steps a compiled scene and writes trajectory CSVs and PPM frames.

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynamics::Trajectory;
use crate::graph::{
    Component, ComponentKind, Diagnostic, Engine, ExternalRegistry, FieldParams, FrameParams,
    Link, PortRef, RigidBodyParams, SceneGraph, ShapeParams, SolverEquation, SolverParams,
    StarSourceParams, StepError, TransformParams,
};

pub const SCENE_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum SceneError {
    #[error("{0}")]
    Io(#[from] io::Error),
    #[error("scene parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported scene version {0}, expected {SCENE_VERSION}")]
    Version(u32),
    #[error("{0}")]
    Structure(String),
    #[error("scene failed validation:\n{}", format_diagnostics(.0))]
    Diagnostics(Vec<Diagnostic>),
    #[error(transparent)]
    Step(#[from] StepError),
}

fn format_diagnostics(d: &[Diagnostic]) -> String {
    d.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("\n")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSpec {
    pub id: String,
    pub kind: String,
    #[serde(default)]
    pub parameters: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub kind: String,
    /// `component.port` for information links, a component id otherwise.
    pub source: String,
    /// `component.port` for information links; the parent for
    /// positioning; the seen component for visibility.
    pub target: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationSpec {
    #[serde(default)]
    pub t0: f64,
    pub t1: f64,
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySink {
    /// Output CSV path, relative to the run's output directory.
    pub path: String,
    /// Component whose outputs become the columns, in declared order.
    pub component: String,
}

fn default_stride() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSink {
    pub camera: String,
    /// A frame is written at the initial state and after every
    /// `stride`-th step.
    #[serde(default = "default_stride")]
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OutputsSpec {
    #[serde(default)]
    pub trajectories: Vec<TrajectorySink>,
    #[serde(default)]
    pub frames: Vec<FrameSink>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFile {
    pub version: u32,
    #[serde(default)]
    pub components: Vec<ComponentSpec>,
    #[serde(default)]
    pub links: Vec<LinkSpec>,
    pub simulation: SimulationSpec,
    #[serde(default)]
    pub outputs: OutputsSpec,
}

impl SceneFile {
    pub fn from_str(text: &str) -> Result<SceneFile, SceneError> {
        let scene: SceneFile = serde_json::from_str(text)?;
        if scene.version != SCENE_VERSION {
            return Err(SceneError::Version(scene.version));
        }
        Ok(scene)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<SceneFile, SceneError> {
        SceneFile::from_str(&fs::read_to_string(path)?)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene files always serialize")
    }

    /// Builds the component graph. Relative star-catalog paths stay as
    /// written; use [`SceneFile::to_graph_from`] to resolve them against
    /// the scene file's directory.
    pub fn to_graph(&self) -> Result<SceneGraph, SceneError> {
        self.to_graph_from(None)
    }

    pub fn to_graph_from(&self, base: Option<&Path>) -> Result<SceneGraph, SceneError> {
        let mut components = Vec::new();
        let mut links = Vec::new();
        for spec in &self.components {
            let bad = |e: &dyn fmt::Display| {
                SceneError::Structure(format!("component `{}`: {e}", spec.id))
            };
            let mut params = spec.parameters.clone();
            // frame-bearing kinds may carry their positioning parent as
            // a field; it lowers to a positioning link
            if matches!(spec.kind.as_str(), "frame" | "shape" | "camera" | "rigid-body") {
                if let Some(obj) = params.as_object_mut() {
                    if let Some(parent) = obj.remove("parent") {
                        let Some(parent) = parent.as_str() else {
                            return Err(bad(&"parent must be a component id string"));
                        };
                        links.push(Link::Positioning {
                            child: spec.id.clone(),
                            parent: parent.to_string(),
                        });
                    }
                }
            }
            let kind = match spec.kind.as_str() {
                "solver" => {
                    let p: SolverParams = serde_json::from_value(params).map_err(|e| bad(&e))?;
                    ComponentKind::Solver(lower_solver_orders(&spec.id, p)?)
                }
                "rigid-body" => ComponentKind::RigidBody(
                    serde_json::from_value::<RigidBodyParams>(params).map_err(|e| bad(&e))?,
                ),
                "transform" => ComponentKind::Transform(
                    serde_json::from_value::<TransformParams>(params).map_err(|e| bad(&e))?,
                ),
                "frame" => ComponentKind::Frame(
                    serde_json::from_value::<FrameParams>(params).map_err(|e| bad(&e))?,
                ),
                "shape" => ComponentKind::Shape(
                    serde_json::from_value::<ShapeParams>(params).map_err(|e| bad(&e))?,
                ),
                "camera" => ComponentKind::Camera(
                    serde_json::from_value::<crate::graph::CameraParams>(params)
                        .map_err(|e| bad(&e))?,
                ),
                "field" => ComponentKind::Field(
                    serde_json::from_value::<FieldParams>(params).map_err(|e| bad(&e))?,
                ),
                "star-source" => {
                    let mut p: StarSourceParams =
                        serde_json::from_value(params).map_err(|e| bad(&e))?;
                    if let Some(base) = base {
                        let given = Path::new(&p.catalog);
                        if given.is_relative() {
                            p.catalog = base.join(given).to_string_lossy().into_owned();
                        }
                    }
                    ComponentKind::StarSource(p)
                }
                other => ComponentKind::External { kind: other.to_string(), config: params },
            };
            components.push(Component::new(&spec.id, kind));
        }
        for spec in &self.links {
            let bad = |msg: String| {
                SceneError::Structure(format!(
                    "link {} -> {} ({}): {msg}",
                    spec.source, spec.target, spec.kind
                ))
            };
            let port_ref = |s: &str| -> Result<PortRef, SceneError> {
                match s.split_once('.') {
                    Some((c, p)) if !c.is_empty() && !p.is_empty() => Ok(PortRef::new(c, p)),
                    _ => Err(bad(format!("`{s}` is not of the form component.port"))),
                }
            };
            links.push(match spec.kind.as_str() {
                "information" => Link::Information {
                    source: port_ref(&spec.source)?,
                    target: port_ref(&spec.target)?,
                },
                "positioning" => Link::Positioning {
                    child: spec.source.clone(),
                    parent: spec.target.clone(),
                },
                "visibility" => Link::Visibility {
                    camera: spec.source.clone(),
                    target: spec.target.clone(),
                },
                other => return Err(bad(format!("unknown link kind `{other}`"))),
            });
        }
        Ok(SceneGraph::new(components, links))
    }
}

/// Rewrites every order-2 equation as a pair of first-order states: the
/// original state integrating its derivative, and `<state>_dot`
/// integrating the given rhs. The rhs may reference both names.
fn lower_solver_orders(id: &str, params: SolverParams) -> Result<SolverParams, SceneError> {
    let mut equations = Vec::with_capacity(params.equations.len());
    for eq in params.equations {
        match eq.order.unwrap_or(1) {
            1 => equations.push(SolverEquation { order: None, initial_dot: None, ..eq }),
            2 => {
                let dot = format!("{}_dot", eq.state);
                equations.push(SolverEquation {
                    state: eq.state.clone(),
                    rhs: dot.clone(),
                    initial: eq.initial,
                    order: None,
                    initial_dot: None,
                });
                equations.push(SolverEquation {
                    state: dot,
                    rhs: eq.rhs,
                    initial: eq.initial_dot.unwrap_or(0.0),
                    order: None,
                    initial_dot: None,
                });
            }
            o => {
                return Err(SceneError::Structure(format!(
                    "component `{id}`: equation for `{}`: unsupported order {o}",
                    eq.state
                )))
            }
        }
    }
    Ok(SolverParams { equations })
}

/// Command-line overrides for a scene run. `out_dir` receives every
/// file the run writes.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub t0: Option<f64>,
    pub t1: Option<f64>,
    pub dt: Option<f64>,
    pub out_dir: PathBuf,
}

impl RunConfig {
    pub fn new(out_dir: impl Into<PathBuf>) -> RunConfig {
        RunConfig { t0: None, t1: None, dt: None, out_dir: out_dir.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSummary {
    pub steps: usize,
    pub components: usize,
    pub frames: usize,
}

impl fmt::Display for RunSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "steps={} components={} frames={}", self.steps, self.components, self.frames)
    }
}

/// The uniform step grid for [t0, t1]: full `dt` steps with the last
/// one shortened to land exactly on t1.
fn step_grid(t0: f64, t1: f64, dt: f64) -> Result<Vec<f64>, SceneError> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(SceneError::Structure("dt must be positive".into()));
    }
    if !(t1 > t0) {
        return Err(SceneError::Structure(format!("empty time interval [{t0}, {t1}]")));
    }
    let raw = (t1 - t0) / dt;
    let n = if (raw - raw.round()).abs() < 1e-9 * raw.max(1.0) {
        raw.round() as usize
    } else {
        raw.ceil() as usize
    };
    let mut times = Vec::with_capacity(n);
    for i in 1..=n {
        let t = t0 + dt * i as f64;
        times.push(if i == n { t1 } else { t.min(t1) });
    }
    Ok(times)
}

struct TrajectoryRecorder {
    sink: TrajectorySink,
    columns: Vec<String>,
    trajectory: Trajectory,
}

impl TrajectoryRecorder {
    fn record(&mut self, engine: &Engine, t: f64) -> Result<(), SceneError> {
        let mut row = Vec::with_capacity(self.columns.len());
        for name in &self.columns {
            let value = engine.value(&self.sink.component, name).ok_or_else(|| {
                SceneError::Structure(format!(
                    "component `{}` published no output `{name}`",
                    self.sink.component
                ))
            })?;
            let x = value.as_real().ok_or_else(|| {
                SceneError::Structure(format!(
                    "trajectory column `{}.{name}` is not scalar",
                    self.sink.component
                ))
            })?;
            row.push(x);
        }
        self.trajectory.push(t, row, false);
        Ok(())
    }
}

fn relative_sink_path(out_dir: &Path, rel: &str) -> Result<PathBuf, SceneError> {
    let p = Path::new(rel);
    if p.is_absolute() || p.components().any(|c| matches!(c, std::path::Component::ParentDir)) {
        return Err(SceneError::Structure(format!(
            "output path `{rel}` must be relative to the output directory"
        )));
    }
    Ok(out_dir.join(p))
}

/// Runs the scene over its (possibly overridden) time grid, writing
/// every declared sink under `config.out_dir`.
pub fn run_scene(
    scene: &SceneFile,
    registry: &ExternalRegistry,
    config: &RunConfig,
    base: Option<&Path>,
) -> Result<RunSummary, SceneError> {
    let t0 = config.t0.unwrap_or(scene.simulation.t0);
    let t1 = config.t1.unwrap_or(scene.simulation.t1);
    let dt = config.dt.unwrap_or(scene.simulation.dt);
    let times = step_grid(t0, t1, dt)?;

    let graph = scene.to_graph_from(base)?;
    for sink in &scene.outputs.frames {
        if sink.stride == 0 {
            return Err(SceneError::Structure(format!(
                "frame sink for `{}`: stride must be at least 1",
                sink.camera
            )));
        }
        match graph.component(&sink.camera) {
            Some(c) if matches!(c.kind, ComponentKind::Camera(_)) => {}
            Some(_) => {
                return Err(SceneError::Structure(format!(
                    "frame sink target `{}` is not a camera",
                    sink.camera
                )))
            }
            None => {
                return Err(SceneError::Structure(format!(
                    "frame sink targets unknown camera `{}`",
                    sink.camera
                )))
            }
        }
    }
    let mut recorders = Vec::new();
    for sink in &scene.outputs.trajectories {
        let comp = graph.component(&sink.component).ok_or_else(|| {
            SceneError::Structure(format!(
                "trajectory sink targets unknown component `{}`",
                sink.component
            ))
        })?;
        let columns: Vec<String> = graph
            .output_ports(comp, registry)
            .into_iter()
            .map(|(name, _)| name)
            .collect();
        if columns.is_empty() {
            return Err(SceneError::Structure(format!(
                "trajectory sink target `{}` publishes no outputs",
                sink.component
            )));
        }
        relative_sink_path(&config.out_dir, &sink.path)?;
        let mut names = Vec::with_capacity(columns.len());
        names.extend(columns.iter().cloned());
        recorders.push(TrajectoryRecorder {
            sink: sink.clone(),
            columns,
            trajectory: Trajectory::new(names),
        });
    }

    let mut engine = Engine::compile(&graph, registry).map_err(SceneError::Diagnostics)?;
    engine.init(t0)?;
    for r in recorders.iter_mut() {
        r.record(&engine, t0)?;
    }

    fs::create_dir_all(&config.out_dir)?;
    let multi_camera = scene.outputs.frames.len() > 1;
    let mut frame_counts = vec![0usize; scene.outputs.frames.len()];
    let write_due_frames = |engine: &Engine,
                                step_index: usize,
                                counts: &mut [usize]|
     -> Result<(), SceneError> {
        for (i, sink) in scene.outputs.frames.iter().enumerate() {
            if step_index % sink.stride != 0 {
                continue;
            }
            counts[i] += 1;
            let image = engine.render(&sink.camera).map_err(SceneError::Structure)?;
            let prefix =
                if multi_camera { format!("{}_", sink.camera) } else { String::new() };
            let path = config.out_dir.join(format!("{prefix}frame_{:06}.ppm", counts[i]));
            let mut file = fs::File::create(path)?;
            image.write_ppm(&mut file)?;
        }
        Ok(())
    };
    write_due_frames(&engine, 0, &mut frame_counts)?;

    let mut prev = t0;
    for (i, &t) in times.iter().enumerate() {
        let h = t - prev;
        if h > 0.0 {
            engine.step(h)?;
        }
        prev = t;
        for r in recorders.iter_mut() {
            r.record(&engine, t)?;
        }
        write_due_frames(&engine, i + 1, &mut frame_counts)?;
    }

    for r in &recorders {
        let path = relative_sink_path(&config.out_dir, &r.sink.path)?;
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let mut file = fs::File::create(path)?;
        r.trajectory.write_csv(&mut file)?;
    }

    Ok(RunSummary {
        steps: times.len(),
        components: graph.components.len(),
        frames: frame_counts.iter().sum(),
    })
}

/// Steps the scene from t0 to `time` and renders one image through
/// `camera_id`.
pub fn render_scene_at(
    scene: &SceneFile,
    registry: &ExternalRegistry,
    time: f64,
    camera_id: &str,
    base: Option<&Path>,
) -> Result<crate::render::Image, SceneError> {
    let graph = scene.to_graph_from(base)?;
    match graph.component(camera_id) {
        Some(c) if matches!(c.kind, ComponentKind::Camera(_)) => {}
        Some(_) => {
            return Err(SceneError::Structure(format!("`{camera_id}` is not a camera")))
        }
        None => return Err(SceneError::Structure(format!("unknown camera `{camera_id}`"))),
    }
    let t0 = scene.simulation.t0;
    let mut engine = Engine::compile(&graph, registry).map_err(SceneError::Diagnostics)?;
    engine.init(t0)?;
    if time > t0 {
        let times = step_grid(t0, time, scene.simulation.dt)?;
        let mut prev = t0;
        for &t in &times {
            let h = t - prev;
            if h > 0.0 {
                engine.step(h)?;
            }
            prev = t;
        }
    }
    engine.render(camera_id).map_err(SceneError::Structure)
}
