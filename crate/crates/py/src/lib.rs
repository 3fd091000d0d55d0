//! Python bindings for the core library: formula evaluation, poses and
//! frame forests, mesh generation and deformation, ODE and rigid-body
//! integration, scene runs, and star catalogue processing.

use std::collections::HashMap;
use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};
use pyo3::IntoPyObjectExt;

use vrsim_core::dynamics::{BodyState, OdeSystem, RigidBody6D, Trajectory};
use vrsim_core::formula::{eval, parse, Env, Matrix, Value};
use vrsim_core::frames::{FrameForest, Pose6D};
use vrsim_core::geometry;
use vrsim_core::graph::ExternalRegistry;
use vrsim_core::math::{Mat3, Quat, Vec3};
use vrsim_core::render;
use vrsim_core::scene::{render_scene_at, run_scene, RunConfig, SceneFile};
use vrsim_core::stars;

fn verr(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn py_to_value(obj: &Bound<'_, PyAny>) -> PyResult<Value> {
    if let Ok(b) = obj.cast::<pyo3::types::PyBool>() {
        return Ok(Value::Boolean(b.is_true()));
    }
    if let Ok(i) = obj.extract::<i64>() {
        return Ok(Value::Integer(i));
    }
    if let Ok(x) = obj.extract::<f64>() {
        return Ok(Value::Real(x));
    }
    if let Ok(v) = obj.extract::<Vec<f64>>() {
        return Ok(Value::Vector(v));
    }
    if let Ok(rows) = obj.extract::<Vec<Vec<f64>>>() {
        let ncols = rows.first().map(Vec::len).unwrap_or(0);
        if rows.is_empty() || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
            return Err(verr("matrix rows must be nonempty and of equal length"));
        }
        return Ok(Value::Matrix(Matrix::from_rows(&rows)));
    }
    Err(verr(format!("cannot convert {} to a formula value", obj.get_type())))
}

fn value_to_py(py: Python<'_>, value: &Value) -> PyResult<Py<PyAny>> {
    match value {
        Value::Boolean(b) => b.into_py_any(py),
        Value::Integer(i) => i.into_py_any(py),
        Value::Real(x) => x.into_py_any(py),
        Value::Vector(v) => v.clone().into_py_any(py),
        Value::Matrix(m) => {
            let nested: Vec<Vec<f64>> = (0..m.rows())
                .map(|r| (0..m.cols()).map(|c| m.get(r, c)).collect())
                .collect();
            nested.into_py_any(py)
        }
        Value::Function(_) => value.to_string().into_py_any(py),
    }
}

/// Evaluates a formula with optional variable bindings and returns the
/// result as a native Python value.
#[pyfunction]
#[pyo3(signature = (expr, bindings=None))]
fn eval_formula(
    py: Python<'_>,
    expr: &str,
    bindings: Option<&Bound<'_, PyDict>>,
) -> PyResult<Py<PyAny>> {
    let mut env = Env::new();
    if let Some(bindings) = bindings {
        for (key, value) in bindings.iter() {
            let name: String = key.extract()?;
            env.set(name, py_to_value(&value)?);
        }
    }
    let parsed = parse(expr).map_err(verr)?;
    let value = eval(&parsed, &env).map_err(verr)?;
    value_to_py(py, &value)
}

/// Free variables of a formula in first-appearance order.
#[pyfunction]
fn free_variables(expr: &str) -> PyResult<Vec<String>> {
    Ok(parse(expr).map_err(verr)?.free_variables())
}

fn pose_from_parts(
    translation: (f64, f64, f64),
    rotation: Option<(f64, f64, f64, f64)>,
) -> PyResult<Pose6D> {
    let t = Vec3::new(translation.0, translation.1, translation.2);
    let q = match rotation {
        None => Quat::IDENTITY,
        Some((ax, ay, az, deg)) => {
            let axis = Vec3::new(ax, ay, az);
            if axis.norm() == 0.0 {
                if deg != 0.0 {
                    return Err(verr("rotation axis must be nonzero"));
                }
                Quat::IDENTITY
            } else {
                Quat::from_axis_angle(axis, deg.to_radians())
            }
        }
    };
    Ok(Pose6D::new(t, q))
}

/// A rigid transform: translation plus unit-quaternion rotation.
#[pyclass(from_py_object)]
#[derive(Clone)]
struct Pose {
    inner: Pose6D,
}

#[pymethods]
impl Pose {
    /// Builds a pose from a translation and an optional axis-angle
    /// rotation (ax, ay, az, degrees).
    #[new]
    #[pyo3(signature = (translation=(0.0, 0.0, 0.0), rotation=None))]
    fn new(
        translation: (f64, f64, f64),
        rotation: Option<(f64, f64, f64, f64)>,
    ) -> PyResult<Pose> {
        Ok(Pose { inner: pose_from_parts(translation, rotation)? })
    }

    #[getter]
    fn translation(&self) -> (f64, f64, f64) {
        let t = self.inner.translation;
        (t.x, t.y, t.z)
    }

    /// Orientation as (w, x, y, z).
    #[getter]
    fn quaternion(&self) -> (f64, f64, f64, f64) {
        let q = self.inner.orientation;
        (q.w, q.x, q.y, q.z)
    }

    /// self applied after other: the composed transform maps local
    /// coordinates through `other`, then through `self`.
    fn compose(&self, other: &Pose) -> Pose {
        Pose { inner: self.inner.compose(&other.inner) }
    }

    fn invert(&self) -> Pose {
        Pose { inner: self.inner.invert() }
    }

    fn apply(&self, point: (f64, f64, f64)) -> (f64, f64, f64) {
        let p = self.inner.apply(Vec3::new(point.0, point.1, point.2));
        (p.x, p.y, p.z)
    }

    fn __repr__(&self) -> String {
        let t = self.inner.translation;
        let q = self.inner.orientation;
        format!(
            "Pose(translation=({}, {}, {}), quaternion=({}, {}, {}, {}))",
            t.x, t.y, t.z, q.w, q.x, q.y, q.z
        )
    }
}

/// A forest of named reference frames with relative poses.
#[pyclass]
struct Forest {
    inner: FrameForest,
}

#[pymethods]
impl Forest {
    #[new]
    fn new() -> Forest {
        Forest { inner: FrameForest::new() }
    }

    #[pyo3(signature = (id, parent=None, pose=None))]
    fn insert(&mut self, id: &str, parent: Option<&str>, pose: Option<&Pose>) -> PyResult<()> {
        let local = pose.map(|p| p.inner).unwrap_or(Pose6D::IDENTITY);
        self.inner.insert(id, parent, local).map_err(verr)
    }

    fn set_local(&mut self, id: &str, pose: &Pose) -> PyResult<()> {
        self.inner.set_local(id, pose.inner).map_err(verr)
    }

    fn absolute(&self, id: &str) -> PyResult<Pose> {
        Ok(Pose { inner: self.inner.absolute(id).map_err(verr)? })
    }

    fn transform_point(
        &self,
        from: &str,
        to: &str,
        point: (f64, f64, f64),
    ) -> PyResult<(f64, f64, f64)> {
        let p = self
            .inner
            .transform_point(from, to, Vec3::new(point.0, point.1, point.2))
            .map_err(verr)?;
        Ok((p.x, p.y, p.z))
    }

    fn ids(&self) -> Vec<String> {
        self.inner.ids().into_iter().map(str::to_string).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// A triangle mesh with an optional per-vertex scalar channel.
#[pyclass(from_py_object)]
#[derive(Clone)]
struct Mesh {
    inner: geometry::Mesh,
}

#[pymethods]
impl Mesh {
    #[staticmethod]
    fn plane(nx: usize, ny: usize, sx: f64, sy: f64) -> PyResult<Mesh> {
        Ok(Mesh { inner: geometry::make_plane(nx, ny, sx, sy).map_err(verr)? })
    }

    #[staticmethod]
    #[pyo3(name = "box")]
    fn box_(hx: f64, hy: f64, hz: f64) -> PyResult<Mesh> {
        Ok(Mesh { inner: geometry::make_box(hx, hy, hz).map_err(verr)? })
    }

    #[staticmethod]
    fn torus(major_radius: f64, minor_radius: f64, nu: usize, nv: usize) -> PyResult<Mesh> {
        Ok(Mesh { inner: geometry::make_torus(major_radius, minor_radius, nu, nv).map_err(verr)? })
    }

    #[staticmethod]
    fn read_off(path: PathBuf) -> PyResult<Mesh> {
        let file = std::fs::File::open(&path).map_err(verr)?;
        Ok(Mesh { inner: geometry::read_off(std::io::BufReader::new(file)).map_err(verr)? })
    }

    #[getter]
    fn vertex_count(&self) -> usize {
        self.inner.vertices.len()
    }

    #[getter]
    fn triangle_count(&self) -> usize {
        self.inner.triangles.len()
    }

    #[getter]
    fn edge_count(&self) -> usize {
        self.inner.edge_count()
    }

    #[getter]
    fn euler_characteristic(&self) -> i64 {
        self.inner.euler_characteristic()
    }

    fn vertices(&self) -> Vec<(f64, f64, f64)> {
        self.inner.vertices.iter().map(|v| (v.x, v.y, v.z)).collect()
    }

    fn triangles(&self) -> Vec<(usize, usize, usize)> {
        self.inner.triangles.iter().map(|t| (t[0], t[1], t[2])).collect()
    }

    /// Scalar channel, or None when the mesh has none.
    fn scalar(&self) -> Option<Vec<f64>> {
        self.inner.scalar.clone()
    }

    /// Applies the vertex map (x, y, z) -> (fx, fy, fz) with `t` bound.
    #[pyo3(signature = (fx, fy, fz, t=0.0))]
    fn deform(&self, fx: &str, fy: &str, fz: &str, t: f64) -> PyResult<Mesh> {
        let fx = parse(fx).map_err(verr)?;
        let fy = parse(fy).map_err(verr)?;
        let fz = parse(fz).map_err(verr)?;
        let mut env = Env::new();
        env.set_real("t", t);
        Ok(Mesh { inner: geometry::deform(&self.inner, &fx, &fy, &fz, &env).map_err(verr)? })
    }

    /// Evaluates a field formula over x, y, z (and `t`) at every vertex
    /// and returns a new mesh with the result as its scalar channel.
    #[pyo3(signature = (field, t=0.0))]
    fn sample_field(&self, field: &str, t: f64) -> PyResult<Mesh> {
        let expr = parse(field).map_err(verr)?;
        let mut env = Env::new();
        env.set_real("t", t);
        let scalar = render::sample_field(&self.inner, &expr, &env).map_err(verr)?;
        let mut out = self.inner.clone();
        out.scalar = Some(scalar);
        Ok(Mesh { inner: out })
    }

    fn write_off(&self, path: PathBuf) -> PyResult<()> {
        let file = std::fs::File::create(&path).map_err(verr)?;
        geometry::write_off(&self.inner, file).map_err(verr)
    }

    fn __repr__(&self) -> String {
        format!(
            "Mesh(vertices={}, triangles={})",
            self.inner.vertices.len(),
            self.inner.triangles.len()
        )
    }
}

fn trajectory_to_py(py: Python<'_>, traj: &Trajectory) -> PyResult<Py<PyAny>> {
    let dict = PyDict::new(py);
    dict.set_item("names", traj.names.clone())?;
    dict.set_item("times", traj.times.clone())?;
    dict.set_item("rows", traj.rows.clone())?;
    dict.set_item("jumps", traj.jumps.clone())?;
    dict.into_py_any(py)
}

/// Integrates a first-order ODE system with RK4. Equations are
/// (state, rhs, initial) triples; rhs formulas may contain delta terms.
#[pyfunction]
fn integrate_ode(
    py: Python<'_>,
    equations: Vec<(String, String, f64)>,
    t0: f64,
    t1: f64,
    dt: f64,
) -> PyResult<Py<PyAny>> {
    let mut names = Vec::new();
    let mut rhs = Vec::new();
    let mut initial = Vec::new();
    for (state, source, init) in equations {
        names.push(state);
        rhs.push(parse(&source).map_err(verr)?);
        initial.push(init);
    }
    let sys = OdeSystem::new("t", names, rhs, initial, Env::new()).map_err(verr)?;
    let traj = vrsim_core::dynamics::integrate(&sys, t0, t1, dt).map_err(verr)?;
    trajectory_to_py(py, &traj)
}

/// Integrates Newton-Euler rigid-body dynamics. Force is a world-frame
/// Vector(3) formula, torque body-frame; both may reference t,
/// position, velocity, quaternion and omega.
#[pyfunction]
#[pyo3(signature = (mass, inertia_diag, force, torque, t0, t1, dt,
                    position=(0.0, 0.0, 0.0), velocity=(0.0, 0.0, 0.0),
                    rotation=None, omega=(0.0, 0.0, 0.0)))]
#[allow(clippy::too_many_arguments)]
fn integrate_rigid_body(
    py: Python<'_>,
    mass: f64,
    inertia_diag: (f64, f64, f64),
    force: &str,
    torque: &str,
    t0: f64,
    t1: f64,
    dt: f64,
    position: (f64, f64, f64),
    velocity: (f64, f64, f64),
    rotation: Option<(f64, f64, f64, f64)>,
    omega: (f64, f64, f64),
) -> PyResult<Py<PyAny>> {
    let body = RigidBody6D::new(
        mass,
        Mat3::diagonal(inertia_diag.0, inertia_diag.1, inertia_diag.2),
        parse(force).map_err(verr)?,
        parse(torque).map_err(verr)?,
        Env::new(),
    )
    .map_err(verr)?;
    let pose = pose_from_parts(position, rotation)?;
    let state = BodyState {
        position: pose.translation,
        velocity: Vec3::new(velocity.0, velocity.1, velocity.2),
        orientation: pose.orientation,
        omega: Vec3::new(omega.0, omega.1, omega.2),
    };
    let traj = body.integrate(&state, t0, t1, dt).map_err(verr)?;
    trajectory_to_py(py, &traj)
}

/// Blue-green-red colormap of v over [lo, hi].
#[pyfunction]
fn colormap(v: f64, lo: f64, hi: f64) -> (u8, u8, u8) {
    let c = render::colormap(v, lo, hi);
    (c[0], c[1], c[2])
}

/// Runs a scene file, writing its declared outputs under `out_dir`.
/// Returns a dict with the run summary.
#[pyfunction]
#[pyo3(signature = (path, out_dir, t0=None, t1=None, dt=None))]
fn run_scene_file(
    py: Python<'_>,
    path: PathBuf,
    out_dir: PathBuf,
    t0: Option<f64>,
    t1: Option<f64>,
    dt: Option<f64>,
) -> PyResult<Py<PyAny>> {
    let scene = SceneFile::from_path(&path).map_err(verr)?;
    let mut config = RunConfig::new(out_dir);
    config.t0 = t0;
    config.t1 = t1;
    config.dt = dt;
    let registry = ExternalRegistry::new();
    let summary = run_scene(&scene, &registry, &config, path.parent()).map_err(verr)?;
    let dict = PyDict::new(py);
    dict.set_item("steps", summary.steps)?;
    dict.set_item("components", summary.components)?;
    dict.set_item("frames", summary.frames)?;
    dict.into_py_any(py)
}

/// Steps a scene to `time` and renders one camera; returns PPM bytes.
#[pyfunction]
#[pyo3(signature = (path, camera, time=None))]
fn render_scene_file(
    py: Python<'_>,
    path: PathBuf,
    camera: &str,
    time: Option<f64>,
) -> PyResult<Py<PyBytes>> {
    let scene = SceneFile::from_path(&path).map_err(verr)?;
    let time = time.unwrap_or(scene.simulation.t0);
    let registry = ExternalRegistry::new();
    let image =
        render_scene_at(&scene, &registry, time, camera, path.parent()).map_err(verr)?;
    Ok(PyBytes::new(py, &image.to_ppm_bytes()).unbind())
}

fn column_map_from_dict(map: Option<HashMap<String, String>>) -> PyResult<stars::ColumnMap> {
    let Some(map) = map else {
        return Ok(stars::ColumnMap::canonical());
    };
    let mut out = stars::ColumnMap::canonical();
    out.id = None;
    out.bt = None;
    out.vt = None;
    let named = |key: &str| map.get(key).cloned();
    out.ra = named("ra").ok_or_else(|| verr("column map must name the `ra` column"))?;
    out.dec = named("dec").ok_or_else(|| verr("column map must name the `dec` column"))?;
    out.parallax =
        named("parallax").ok_or_else(|| verr("column map must name the `parallax` column"))?;
    out.id = named("id");
    out.bt = named("bt");
    out.vt = named("vt");
    out.angle_unit = match named("units").as_deref() {
        None | Some("radians") => stars::AngleUnit::Radians,
        Some("degrees") => stars::AngleUnit::Degrees,
        Some(other) => return Err(verr(format!("units must be degrees or radians, got `{other}`"))),
    };
    for key in map.keys() {
        if !matches!(key.as_str(), "id" | "ra" | "dec" | "parallax" | "bt" | "vt" | "units") {
            return Err(verr(format!("unknown column map key `{key}`")));
        }
    }
    Ok(out)
}

/// Loads a star catalogue, filters it, and returns the processed
/// records with their visual attributes.
#[pyfunction]
#[pyo3(signature = (path, map=None, filter=None, r_min=0.5, k=4.0))]
fn process_stars(
    py: Python<'_>,
    path: PathBuf,
    map: Option<HashMap<String, String>>,
    filter: Option<&str>,
    r_min: f64,
    k: f64,
) -> PyResult<Py<PyAny>> {
    let column_map = column_map_from_dict(map)?;
    let load = stars::load_catalog(&path, &column_map).map_err(verr)?;
    let read = load.rows_read();
    let skipped = load.skipped.len();
    let kept = match filter {
        Some(src) => {
            let predicate = stars::parse_predicate(src).map_err(verr)?;
            stars::filter(&load.records, &predicate).map_err(verr)?
        }
        None => load.records,
    };
    let config = stars::VisualConfig { r_min, k, color: None };
    let records = pyo3::types::PyList::empty(py);
    for rec in &kept {
        let vis = stars::visual(rec, &config).map_err(verr)?;
        let entry = PyDict::new(py);
        entry.set_item("id", rec.id.clone())?;
        entry.set_item("ra", rec.ra)?;
        entry.set_item("dec", rec.dec)?;
        entry.set_item("parallax", rec.parallax)?;
        entry.set_item("bt", rec.bt)?;
        entry.set_item("vt", rec.vt)?;
        entry.set_item("v_mag", vis.v_mag)?;
        entry.set_item("dist_pc", vis.distance_pc)?;
        entry.set_item(
            "direction",
            (vis.direction.x, vis.direction.y, vis.direction.z),
        )?;
        entry.set_item("color", (vis.color[0], vis.color[1], vis.color[2]))?;
        entry.set_item("radius_px", vis.radius_px)?;
        records.append(entry)?;
    }
    let dict = PyDict::new(py);
    dict.set_item("read", read)?;
    dict.set_item("kept", kept.len())?;
    dict.set_item("skipped", skipped)?;
    dict.set_item("stars", records)?;
    dict.into_py_any(py)
}

#[pymodule]
fn vrsim_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(eval_formula, m)?)?;
    m.add_function(wrap_pyfunction!(free_variables, m)?)?;
    m.add_function(wrap_pyfunction!(integrate_ode, m)?)?;
    m.add_function(wrap_pyfunction!(integrate_rigid_body, m)?)?;
    m.add_function(wrap_pyfunction!(colormap, m)?)?;
    m.add_function(wrap_pyfunction!(run_scene_file, m)?)?;
    m.add_function(wrap_pyfunction!(render_scene_file, m)?)?;
    m.add_function(wrap_pyfunction!(process_stars, m)?)?;
    m.add_class::<Pose>()?;
    m.add_class::<Forest>()?;
    m.add_class::<Mesh>()?;
    Ok(())
}
