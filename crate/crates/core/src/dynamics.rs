//! Time integration: first-order ODE systems driven by formulas (with
//! Dirac impulse terms) and Newton-Euler 6D rigid-body dynamics, both
//! advanced by fixed-step classical Runge-Kutta.

use std::io::Write;

use crate::formula::{eval, extract_delta_terms, Env, Expr, FormulaError, Value};
use crate::math::{Mat3, Quat, Vec3};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DynamicsError {
    #[error("{context}: {source}")]
    Formula { context: String, source: FormulaError },
    #[error("state became non-finite at t = {time}")]
    NonFinite { time: f64 },
    #[error("invalid inertia tensor: {0}")]
    InvalidInertia(String),
    #[error("{0}")]
    Config(String),
}

impl DynamicsError {
    /// True when the failure is numerical rather than structural.
    pub fn is_numeric(&self) -> bool {
        match self {
            DynamicsError::Formula { source, .. } => source.is_numeric(),
            DynamicsError::NonFinite { .. } => true,
            _ => false,
        }
    }
}

fn formula_err(context: impl Into<String>) -> impl FnOnce(FormulaError) -> DynamicsError {
    let context = context.into();
    move |source| DynamicsError::Formula { context, source }
}

/// An impulse attached to one state: at `time` the state jumps by the
/// coefficient evaluated on the pre-jump state.
#[derive(Debug, Clone)]
pub struct StateImpulse {
    pub state: usize,
    pub coefficient: Expr,
    pub time: f64,
}

/// First-order system ẏ = f(t, y) with optional impulse terms split off
/// the right-hand sides.
#[derive(Debug, Clone)]
pub struct OdeSystem {
    pub time_var: String,
    pub state_names: Vec<String>,
    pub rhs: Vec<Expr>,
    pub impulses: Vec<StateImpulse>,
    pub initial: Vec<f64>,
    /// Extra bindings (constants, functions) visible to every rhs.
    pub base_env: Env,
}

impl OdeSystem {
    /// Builds a system from per-state right-hand sides; `delta` terms are
    /// extracted here so the integrator only ever sees smooth formulas.
    pub fn new(
        time_var: &str,
        state_names: Vec<String>,
        rhs: Vec<Expr>,
        initial: Vec<f64>,
        base_env: Env,
    ) -> Result<OdeSystem, DynamicsError> {
        if state_names.len() != rhs.len() || state_names.len() != initial.len() {
            return Err(DynamicsError::Config(format!(
                "state count mismatch: {} names, {} equations, {} initial values",
                state_names.len(),
                rhs.len(),
                initial.len()
            )));
        }
        if state_names.is_empty() {
            return Err(DynamicsError::Config("system has no states".into()));
        }
        for (i, n) in state_names.iter().enumerate() {
            if n == time_var {
                return Err(DynamicsError::Config(format!(
                    "state name `{n}` collides with the time variable"
                )));
            }
            if state_names[..i].contains(n) {
                return Err(DynamicsError::Config(format!("duplicate state name `{n}`")));
            }
        }
        let mut smooth = Vec::with_capacity(rhs.len());
        let mut impulses = Vec::new();
        for (i, e) in rhs.into_iter().enumerate() {
            let (s, imps) = extract_delta_terms(&e, time_var)
                .map_err(formula_err(format!("equation for `{}`", state_names[i])))?;
            smooth.push(s);
            for imp in imps {
                impulses.push(StateImpulse { state: i, coefficient: imp.coefficient, time: imp.time });
            }
        }
        Ok(OdeSystem {
            time_var: time_var.to_string(),
            state_names,
            rhs: smooth,
            impulses,
            initial,
            base_env,
        })
    }

    fn bind(&self, t: f64, state: &[f64]) -> Env {
        let mut env = self.base_env.clone();
        env.set_real(self.time_var.clone(), t);
        for (n, v) in self.state_names.iter().zip(state) {
            env.set_real(n.clone(), *v);
        }
        env
    }

    fn eval_rhs(&self, t: f64, state: &[f64], stage: u8) -> Result<Vec<f64>, DynamicsError> {
        let env = self.bind(t, state);
        let mut out = Vec::with_capacity(self.rhs.len());
        for (name, e) in self.state_names.iter().zip(&self.rhs) {
            let v = eval(e, &env)
                .map_err(formula_err(format!("rhs of `{name}` at t = {t} (stage {stage})")))?;
            let x = v.as_real().ok_or_else(|| DynamicsError::Config(format!(
                "rhs of `{name}` must be a scalar, got {}",
                v.variant_name()
            )))?;
            out.push(x);
        }
        Ok(out)
    }
}

/// One classical RK4 step of the smooth part.
pub fn step_rk4(sys: &OdeSystem, t: f64, state: &[f64], dt: f64) -> Result<Vec<f64>, DynamicsError> {
    rk4(&mut |t, y, stage| sys.eval_rhs(t, y, stage), t, state, dt)
}

fn rk4(
    f: &mut impl FnMut(f64, &[f64], u8) -> Result<Vec<f64>, DynamicsError>,
    t: f64,
    y: &[f64],
    dt: f64,
) -> Result<Vec<f64>, DynamicsError> {
    let half = dt * 0.5;
    let k1 = f(t, y, 1)?;
    let y2: Vec<f64> = y.iter().zip(&k1).map(|(a, k)| a + half * k).collect();
    let k2 = f(t + half, &y2, 2)?;
    let y3: Vec<f64> = y.iter().zip(&k2).map(|(a, k)| a + half * k).collect();
    let k3 = f(t + half, &y3, 3)?;
    let y4: Vec<f64> = y.iter().zip(&k3).map(|(a, k)| a + dt * k).collect();
    let k4 = f(t + dt, &y4, 4)?;
    Ok(y
        .iter()
        .enumerate()
        .map(|(i, a)| a + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

/// Sampled solution. Times are increasing except that an impulse yields
/// two rows at its firing time: the pre-jump state and, flagged with
/// `jumps`, the post-jump state.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub names: Vec<String>,
    pub times: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
    pub jumps: Vec<bool>,
}

impl Trajectory {
    pub fn new(names: Vec<String>) -> Trajectory {
        Trajectory { names, times: Vec::new(), rows: Vec::new(), jumps: Vec::new() }
    }

    pub fn push(&mut self, t: f64, row: Vec<f64>, jump: bool) {
        self.times.push(t);
        self.rows.push(row);
        self.jumps.push(jump);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last_row(&self) -> Option<(f64, &[f64])> {
        match (self.times.last(), self.rows.last()) {
            (Some(t), Some(r)) => Some((*t, r.as_slice())),
            _ => None,
        }
    }

    /// CSV with header `t,<names...>`; rows that record the post-jump
    /// state of an impulse carry one extra trailing cell `jump=1`.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        write!(w, "t")?;
        for n in &self.names {
            write!(w, ",{n}")?;
        }
        writeln!(w)?;
        for i in 0..self.times.len() {
            write!(w, "{}", format_g17(self.times[i]))?;
            for v in &self.rows[i] {
                write!(w, ",{}", format_g17(*v))?;
            }
            if self.jumps[i] {
                write!(w, ",jump=1")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("csv output is ASCII")
    }
}

/// Shortest-representation `%.17g`-style formatting: decimal where the
/// exponent allows, scientific otherwise, trailing zeros stripped. The
/// 17 significant digits make the decimal text round-trip to the same
/// double.
pub fn format_g17(v: f64) -> String {
    if v.is_nan() {
        return "nan".to_string();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{v:.16e}");
    let exp: i32 = sci[sci.find('e').unwrap() + 1..].parse().unwrap();
    if (-4..17).contains(&exp) {
        let prec = (16 - exp).max(0) as usize;
        let s = format!("{v:.prec$}");
        strip_zeros(s)
    } else {
        let (mantissa, e) = sci.split_at(sci.find('e').unwrap());
        format!("{}{e}", strip_zeros(mantissa.to_string()))
    }
}

fn strip_zeros(s: String) -> String {
    if !s.contains('.') {
        return s;
    }
    let t = s.trim_end_matches('0').trim_end_matches('.');
    t.to_string()
}

/// Integrates over `[t0, t1]`, landing exactly on every impulse firing
/// time and on `t1`. At a firing time all coefficients are evaluated on
/// the pre-jump state, then applied jointly; the trajectory records both
/// rows. Impulses fire once each when `t0 < time <= t1`.
pub fn integrate(sys: &OdeSystem, t0: f64, t1: f64, dt: f64) -> Result<Trajectory, DynamicsError> {
    if !(t0 < t1) {
        return Err(DynamicsError::Config(format!("empty time interval [{t0}, {t1}]")));
    }
    if !(dt > 0.0) {
        return Err(DynamicsError::Config(format!("step size must be positive, got {dt}")));
    }
    let mut fire_times: Vec<f64> = sys
        .impulses
        .iter()
        .map(|i| i.time)
        .filter(|c| *c > t0 && *c <= t1)
        .collect();
    fire_times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    fire_times.dedup();

    let mut traj = Trajectory::new(sys.state_names.clone());
    let mut state = sys.initial.clone();
    traj.push(t0, state.clone(), false);

    let mut seg_start = t0;
    let mut boundaries = fire_times.clone();
    if boundaries.last() != Some(&t1) {
        boundaries.push(t1);
    }
    for &seg_end in &boundaries {
        let mut f = |t: f64, y: &[f64], stage: u8| sys.eval_rhs(t, y, stage);
        advance_segment(&mut f, seg_start, seg_end, dt, &mut state, |t, row| {
            traj.push(t, row.to_vec(), false);
            Ok(())
        })?;
        if fire_times.contains(&seg_end) {
            let env = sys.bind(seg_end, &state);
            let mut deltas = vec![0.0; state.len()];
            for imp in sys.impulses.iter().filter(|i| i.time == seg_end) {
                let name = &sys.state_names[imp.state];
                let v = eval(&imp.coefficient, &env).map_err(formula_err(format!(
                    "impulse coefficient of `{name}` at t = {seg_end}"
                )))?;
                deltas[imp.state] += v.as_real().ok_or_else(|| {
                    DynamicsError::Config(format!(
                        "impulse coefficient of `{name}` must be a scalar, got {}",
                        v.variant_name()
                    ))
                })?;
            }
            for (x, d) in state.iter_mut().zip(&deltas) {
                *x += d;
            }
            if state.iter().any(|x| !x.is_finite()) {
                return Err(DynamicsError::NonFinite { time: seg_end });
            }
            traj.push(seg_end, state.clone(), true);
        }
        seg_start = seg_end;
    }
    Ok(traj)
}

// fixed steps a + i*dt across one segment, the final step clamped to b;
// reports the state after every accepted step
fn advance_segment(
    f: &mut impl FnMut(f64, &[f64], u8) -> Result<Vec<f64>, DynamicsError>,
    a: f64,
    b: f64,
    dt: f64,
    state: &mut Vec<f64>,
    mut on_row: impl FnMut(f64, &[f64]) -> Result<(), DynamicsError>,
) -> Result<(), DynamicsError> {
    let eps = dt * 1e-9;
    let mut t = a;
    let mut i: u64 = 0;
    while t < b - eps {
        let mut next = a + (i + 1) as f64 * dt;
        if next > b - eps {
            next = b;
        }
        *state = rk4(f, t, state, next - t)?;
        if state.iter().any(|x| !x.is_finite()) {
            return Err(DynamicsError::NonFinite { time: next });
        }
        on_row(next, state)?;
        t = next;
        i += 1;
    }
    Ok(())
}

/// Rigid body with formula-driven force (world frame) and torque (body
/// frame). The inertia tensor is validated at construction.
#[derive(Debug, Clone)]
pub struct RigidBody6D {
    pub mass: f64,
    pub inertia: Mat3,
    inertia_inv: Mat3,
    pub force: Expr,
    pub torque: Expr,
    pub base_env: Env,
}

/// Instantaneous rigid-body state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyState {
    pub position: Vec3,
    pub velocity: Vec3,
    pub orientation: Quat,
    pub omega: Vec3,
}

impl BodyState {
    pub const COLUMNS: [&'static str; 13] =
        ["px", "py", "pz", "vx", "vy", "vz", "qw", "qx", "qy", "qz", "wx", "wy", "wz"];

    pub fn to_flat(&self) -> Vec<f64> {
        vec![
            self.position.x,
            self.position.y,
            self.position.z,
            self.velocity.x,
            self.velocity.y,
            self.velocity.z,
            self.orientation.w,
            self.orientation.x,
            self.orientation.y,
            self.orientation.z,
            self.omega.x,
            self.omega.y,
            self.omega.z,
        ]
    }

    pub fn from_flat(y: &[f64]) -> BodyState {
        BodyState {
            position: Vec3::new(y[0], y[1], y[2]),
            velocity: Vec3::new(y[3], y[4], y[5]),
            orientation: Quat::new(y[6], y[7], y[8], y[9]),
            omega: Vec3::new(y[10], y[11], y[12]),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BodyDerivative {
    pub dp: Vec3,
    pub dv: Vec3,
    pub dq: Quat,
    pub domega: Vec3,
}

impl RigidBody6D {
    pub fn new(
        mass: f64,
        inertia: Mat3,
        force: Expr,
        torque: Expr,
        base_env: Env,
    ) -> Result<RigidBody6D, DynamicsError> {
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(DynamicsError::Config(format!("mass must be positive, got {mass}")));
        }
        let m = &inertia.m;
        for i in 0..3 {
            for j in 0..3 {
                if (m[i][j] - m[j][i]).abs() > 1e-12 {
                    return Err(DynamicsError::InvalidInertia(format!(
                        "not symmetric at ({i}, {j}): {} vs {}",
                        m[i][j], m[j][i]
                    )));
                }
            }
        }
        // Sylvester's criterion on the leading principal minors
        let d1 = m[0][0];
        let d2 = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        let d3 = inertia.determinant();
        if d1 <= 0.0 || d2 <= 0.0 || d3 <= 0.0 {
            return Err(DynamicsError::InvalidInertia(format!(
                "not positive definite (leading minors {d1}, {d2}, {d3})"
            )));
        }
        let inertia_inv = inertia.inverse().expect("positive definite implies invertible");
        Ok(RigidBody6D { mass, inertia, inertia_inv, force, torque, base_env })
    }

    fn bind(&self, t: f64, s: &BodyState) -> Env {
        let mut env = self.base_env.clone();
        env.set_real("t", t);
        env.set("position", Value::Vector(s.position.to_array().to_vec()));
        env.set("velocity", Value::Vector(s.velocity.to_array().to_vec()));
        env.set(
            "quaternion",
            Value::Vector(vec![s.orientation.w, s.orientation.x, s.orientation.y, s.orientation.z]),
        );
        env.set("omega", Value::Vector(s.omega.to_array().to_vec()));
        env
    }

    fn eval_vec3(&self, e: &Expr, env: &Env, what: &str, t: f64) -> Result<Vec3, DynamicsError> {
        let v = eval(e, env).map_err(formula_err(format!("{what} at t = {t}")))?;
        match &v {
            Value::Vector(xs) if xs.len() == 3 => Ok(Vec3::from_slice(xs)),
            other => Err(DynamicsError::Config(format!(
                "{what} must evaluate to Vector(3), got {}",
                other.variant_name()
            ))),
        }
    }

    /// Newton-Euler derivative: ṗ = v, v̇ = F/m, ω̇ = I⁻¹(M − ω×(Iω)),
    /// q̇ = ½ q ⊗ (0, ω).
    pub fn derivative(&self, t: f64, s: &BodyState) -> Result<BodyDerivative, DynamicsError> {
        let env = self.bind(t, s);
        let force = self.eval_vec3(&self.force, &env, "force", t)?;
        let torque = self.eval_vec3(&self.torque, &env, "torque", t)?;
        let iw = self.inertia.mul_vec(s.omega);
        let domega = self.inertia_inv.mul_vec(torque - s.omega.cross(iw));
        let q = s.orientation;
        let omega_quat = Quat::new(0.0, s.omega.x, s.omega.y, s.omega.z);
        let dq = q.mul(omega_quat);
        Ok(BodyDerivative {
            dp: s.velocity,
            dv: force * (1.0 / self.mass),
            dq: Quat::new(dq.w * 0.5, dq.x * 0.5, dq.y * 0.5, dq.z * 0.5),
            domega,
        })
    }

    /// RK4 on the 13-dimensional flat state with quaternion
    /// renormalization after each accepted step.
    pub fn integrate(
        &self,
        initial: &BodyState,
        t0: f64,
        t1: f64,
        dt: f64,
    ) -> Result<Trajectory, DynamicsError> {
        if !(t0 < t1) {
            return Err(DynamicsError::Config(format!("empty time interval [{t0}, {t1}]")));
        }
        if !(dt > 0.0) {
            return Err(DynamicsError::Config(format!("step size must be positive, got {dt}")));
        }
        let names = BodyState::COLUMNS.iter().map(|s| s.to_string()).collect();
        let mut traj = Trajectory::new(names);
        let mut y = initial.to_flat();
        traj.push(t0, y.clone(), false);
        let mut f = |t: f64, y: &[f64], _stage: u8| {
            let d = self.derivative(t, &BodyState::from_flat(y))?;
            Ok(vec![
                d.dp.x, d.dp.y, d.dp.z, d.dv.x, d.dv.y, d.dv.z, d.dq.w, d.dq.x, d.dq.y, d.dq.z,
                d.domega.x, d.domega.y, d.domega.z,
            ])
        };
        advance_segment(&mut f, t0, t1, dt, &mut y, |t, row| {
            let mut row = row.to_vec();
            let q = Quat::new(row[6], row[7], row[8], row[9]).normalized();
            row[6] = q.w;
            row[7] = q.x;
            row[8] = q.y;
            row[9] = q.z;
            traj.push(t, row, false);
            Ok(())
        })?;
        // keep the returned trajectory and the caller-visible state in
        // sync: rows already hold renormalized quaternions, so nothing
        // further to fix up here
        for (i, row) in traj.rows.iter().enumerate().skip(1) {
            debug_assert!(
                (Quat::new(row[6], row[7], row[8], row[9]).norm() - 1.0).abs() < 1e-9,
                "quaternion drifted at row {i}"
            );
        }
        Ok(traj)
    }
}
