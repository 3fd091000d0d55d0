//! End-to-end acceptance suite. Runs ten independent criteria covering
//! the formula engine, integrators, frames, scenes, rendering and the
//! star pipeline, printing one line per criterion. The process exits
//! nonzero if any criterion fails.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use vrsim_core::dynamics::{integrate, BodyState, OdeSystem, RigidBody6D};
use vrsim_core::formula::{eval, parse, Env, Matrix, Value};
use vrsim_core::frames::{FrameForest, Pose6D};
use vrsim_core::geometry::make_torus;
use vrsim_core::graph::ExternalRegistry;
use vrsim_core::math::{Mat3, Quat, Vec3};
use vrsim_core::render::{colormap, sample_field};
use vrsim_core::scene::{render_scene_at, run_scene, RunConfig, SceneFile};
use vrsim_core::stars;

macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err(format!($($arg)+));
        }
    };
}

fn main() {
    let criteria: Vec<(&str, fn() -> Result<(), String>)> = vec![
        ("Kalman filter: formula-engine matrix forms match the scalar oracle", kalman_oracle),
        ("broadcasting: 10^4 fuzzed identities hold componentwise, bitwise", broadcasting_fuzz),
        ("RK4 order: error falls >= 14x per halved step, < 1e-8 at dt = 0.01", rk4_order),
        ("impulse exactness: delta(t - 1) integrates to bitwise 1.0 with a double row", impulse_exactness),
        ("rigid body: torque-free momentum and energy drift < 1e-6 over 10 s", rigid_body_conservation),
        ("frame algebra: 1000 random forests compose and round-trip within 1e-10", frame_algebra),
        ("demo scene: zero diagnostics, 100 steps, byte-identical reruns", demo_scene_determinism),
        ("deformation goldens: renders match committed bytes, warp moves >= 1% of pixels", deformation_goldens),
        ("field visualization: sampled channel matches per-vertex eval, colormap monotone", field_visualization),
        ("stars pipeline: unit directions, magnitude oracle, filter counts", stars_pipeline),
    ];

    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|payload| {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(()) => println!("pass  {:2}  {name}", i + 1),
            Err(msg) => {
                failed += 1;
                println!("FAIL  {:2}  {name}: {msg}", i + 1);
            }
        }
    }

    if failed > 0 {
        println!("acceptance: {failed} of 10 criteria failed");
        std::process::exit(1);
    }
    println!("acceptance: all 10 criteria passed");
}

fn scenes_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenes")
}

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn fmt_err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn scalar_of(v: &Value) -> Result<f64, String> {
    match v {
        Value::Real(x) => Ok(*x),
        Value::Integer(i) => Ok(*i as f64),
        Value::Vector(xs) if xs.len() == 1 => Ok(xs[0]),
        Value::Matrix(m) if m.rows() == 1 && m.cols() == 1 => Ok(m.get(0, 0)),
        other => Err(format!("expected a scalar-like value, got {other}")),
    }
}

fn matrix_1x1(v: &Value) -> Result<Value, String> {
    Ok(Value::Matrix(Matrix::from_rows(&[vec![scalar_of(v)?]])))
}

// 1. A one-dimensional Kalman filter in information form, run twice:
//    once with plain scalar arithmetic, once through the formula engine
//    on 1x1 matrices using transpose, products and nested inverses.
fn kalman_oracle() -> Result<(), String> {
    let start = Instant::now();
    let (a, w, hm, r) = (0.97_f64, 0.04_f64, 1.0_f64, 0.25_f64);
    let m1 = |x: f64| Value::Matrix(Matrix::from_rows(&[vec![x]]));

    let predict_x = parse("a * x").map_err(fmt_err)?;
    let predict_q = parse("a * q * a' + w").map_err(fmt_err)?;
    let information = parse("hm' * inv(r) * hm").map_err(fmt_err)?;
    let update_q = parse("inv(inv(q) + h)").map_err(fmt_err)?;
    let gain = parse("q * hm' * inv(r)").map_err(fmt_err)?;
    let update_x = parse("x + k * (z - hm * x)").map_err(fmt_err)?;

    let mut env = Env::new();
    env.set("a", m1(a));
    env.set("w", m1(w));
    env.set("hm", m1(hm));
    env.set("r", m1(r));

    let (mut x_ref, mut q_ref) = (0.0_f64, 1.0_f64);
    let (mut x_f, mut q_f) = (m1(0.0), m1(1.0));

    for step in 0..50 {
        let z = (0.3 * step as f64).sin() + 0.2 * (1.7 * step as f64).cos();

        // scalar oracle
        let xp = a * x_ref;
        let qp = a * q_ref * a + w;
        let h = hm * (1.0 / r) * hm;
        let qn = 1.0 / (1.0 / qp + h);
        let k = qn * hm * (1.0 / r);
        x_ref = xp + k * (z - hm * xp);
        q_ref = qn;

        // formula engine
        env.set("x", x_f.clone());
        env.set("q", q_f.clone());
        env.set("z", m1(z));
        let xp_f = eval(&predict_x, &env).map_err(fmt_err)?;
        let qp_f = eval(&predict_q, &env).map_err(fmt_err)?;
        env.set("x", matrix_1x1(&xp_f)?);
        env.set("q", matrix_1x1(&qp_f)?);
        let h_f = eval(&information, &env).map_err(fmt_err)?;
        env.set("h", matrix_1x1(&h_f)?);
        let qn_f = eval(&update_q, &env).map_err(fmt_err)?;
        env.set("q", matrix_1x1(&qn_f)?);
        let k_f = eval(&gain, &env).map_err(fmt_err)?;
        env.set("k", matrix_1x1(&k_f)?);
        let xn_f = eval(&update_x, &env).map_err(fmt_err)?;
        x_f = matrix_1x1(&xn_f)?;
        q_f = matrix_1x1(&qn_f)?;

        let xd = (scalar_of(&x_f)? - x_ref).abs();
        let qd = (scalar_of(&q_f)? - q_ref).abs();
        ensure!(xd < 1e-10, "step {step}: state differs by {xd:e}");
        ensure!(qd < 1e-10, "step {step}: variance differs by {qd:e}");
    }
    ensure!(start.elapsed() < Duration::from_secs(1), "took {:?}", start.elapsed());
    Ok(())
}

// 2. Fuzzed broadcasting identities: whole-collection evaluation must
//    equal element-at-a-time evaluation bit for bit.
fn broadcasting_fuzz() -> Result<(), String> {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(0x5eed_2026);
    let ops = ["+", "-", "*", "/"];
    let funcs = ["sin", "cos", "exp", "abs", "sign", "floor", "tan", "atan"];

    // magnitudes in [0.1, 10] so division never leaves the finite range
    let mut draw = |rng: &mut StdRng| -> f64 {
        let mag = rng.random_range(0.1..10.0);
        if rng.random_bool(0.5) {
            mag
        } else {
            -mag
        }
    };

    let eval_str = |src: &str, env: &Env| -> Result<Value, String> {
        eval(&parse(src).map_err(fmt_err)?, env).map_err(fmt_err)
    };
    let vec_of = |v: Value, src: &str| -> Result<Vec<f64>, String> {
        match v {
            Value::Vector(xs) => Ok(xs),
            other => Err(format!("`{src}` returned {other}, expected a vector")),
        }
    };

    for case in 0..10_000_u32 {
        let n = rng.random_range(1..=8);
        let v: Vec<f64> = (0..n).map(|_| draw(&mut rng)).collect();
        let w: Vec<f64> = (0..n).map(|_| draw(&mut rng)).collect();
        let s = draw(&mut rng);
        let op = ops[rng.random_range(0..ops.len())];

        let mut env = Env::new();
        env.set("v", Value::Vector(v.clone()));
        env.set("w", Value::Vector(w.clone()));
        env.set("s", Value::Real(s));

        match case % 5 {
            0 | 1 => {
                // vector (op) scalar, and scalar (op) vector
                let src =
                    if case % 5 == 0 { format!("v {op} s") } else { format!("s {op} v") };
                let got = vec_of(eval_str(&src, &env)?, &src)?;
                for i in 0..n {
                    let mut one = Env::new();
                    one.set("c", Value::Real(v[i]));
                    one.set("s", Value::Real(s));
                    let per = if case % 5 == 0 {
                        eval_str(&format!("c {op} s"), &one)?
                    } else {
                        eval_str(&format!("s {op} c"), &one)?
                    };
                    ensure!(
                        got[i].to_bits() == scalar_of(&per)?.to_bits(),
                        "case {case}: `{src}` component {i} disagrees"
                    );
                }
            }
            2 => {
                // vector (op) vector
                let src = format!("v {op} w");
                let got = vec_of(eval_str(&src, &env)?, &src)?;
                for i in 0..n {
                    let mut one = Env::new();
                    one.set("c", Value::Real(v[i]));
                    one.set("d", Value::Real(w[i]));
                    let per = eval_str(&format!("c {op} d"), &one)?;
                    ensure!(
                        got[i].to_bits() == scalar_of(&per)?.to_bits(),
                        "case {case}: `{src}` component {i} disagrees"
                    );
                }
            }
            3 => {
                // componentwise builtin on a vector
                let f = funcs[rng.random_range(0..funcs.len())];
                let src = format!("{f}(v)");
                let got = vec_of(eval_str(&src, &env)?, &src)?;
                for i in 0..n {
                    let mut one = Env::new();
                    one.set("c", Value::Real(v[i]));
                    let per = eval_str(&format!("{f}(c)"), &one)?;
                    ensure!(
                        got[i].to_bits() == scalar_of(&per)?.to_bits(),
                        "case {case}: `{src}` component {i} disagrees"
                    );
                }
            }
            _ => {
                // matrix (op) scalar
                let rows = rng.random_range(1..=3);
                let cols = rng.random_range(1..=3);
                let data: Vec<f64> = (0..rows * cols).map(|_| draw(&mut rng)).collect();
                let mut menv = Env::new();
                menv.set("m", Value::Matrix(Matrix::new(rows, cols, data.clone())));
                menv.set("s", Value::Real(s));
                let src = format!("m {op} s");
                let got = match eval_str(&src, &menv)? {
                    Value::Matrix(m) => m,
                    other => return Err(format!("`{src}` returned {other}")),
                };
                for (i, x) in data.iter().enumerate() {
                    let mut one = Env::new();
                    one.set("c", Value::Real(*x));
                    one.set("s", Value::Real(s));
                    let per = eval_str(&format!("c {op} s"), &one)?;
                    ensure!(
                        got.data()[i].to_bits() == scalar_of(&per)?.to_bits(),
                        "case {case}: `{src}` element {i} disagrees"
                    );
                }
            }
        }
    }
    ensure!(start.elapsed() < Duration::from_secs(10), "took {:?}", start.elapsed());
    Ok(())
}

// 3. Fourth-order convergence of the integrator on x' = -x.
fn rk4_order() -> Result<(), String> {
    let final_error = |dt: f64| -> Result<f64, String> {
        let sys = OdeSystem::new(
            "t",
            vec!["x".to_string()],
            vec![parse("-x").map_err(fmt_err)?],
            vec![1.0],
            Env::new(),
        )
        .map_err(fmt_err)?;
        let traj = integrate(&sys, 0.0, 1.0, dt).map_err(fmt_err)?;
        let last = traj.rows.last().ok_or("empty trajectory")?;
        Ok((last[0] - (-1.0_f64).exp()).abs())
    };

    let e1 = final_error(0.1)?;
    let e2 = final_error(0.05)?;
    let e3 = final_error(0.025)?;
    ensure!(e1 / e2 >= 14.0, "halving 0.1 -> 0.05 shrank error only {:.2}x", e1 / e2);
    ensure!(e2 / e3 >= 14.0, "halving 0.05 -> 0.025 shrank error only {:.2}x", e2 / e3);
    let e4 = final_error(0.01)?;
    ensure!(e4 < 1e-8, "error at dt = 0.01 is {e4:e}");
    Ok(())
}

// 4. A pure Dirac impulse adds its weight exactly once, exactly.
fn impulse_exactness() -> Result<(), String> {
    let sys = OdeSystem::new(
        "t",
        vec!["x".to_string()],
        vec![parse("delta(t - 1)").map_err(fmt_err)?],
        vec![0.0],
        Env::new(),
    )
    .map_err(fmt_err)?;
    let traj = integrate(&sys, 0.0, 2.0, 0.25).map_err(fmt_err)?;
    let last = traj.rows.last().ok_or("empty trajectory")?;
    ensure!(last[0].to_bits() == 1.0_f64.to_bits(), "x(2) = {:?}, not bitwise 1.0", last[0]);

    let csv = traj.to_csv_string();
    let at_one: Vec<&str> = csv.lines().filter(|l| l.starts_with("1,")).collect();
    ensure!(at_one.len() == 2, "expected a double row at t = 1, found {}", at_one.len());
    ensure!(
        at_one[1].ends_with(",jump=1"),
        "post-jump row is not marked: {}",
        at_one[1]
    );
    Ok(())
}

// 5. Torque-free asymmetric top: |L| in the world frame and the kinetic
//    energy are conserved; the quaternion stays unit length.
fn rigid_body_conservation() -> Result<(), String> {
    let start = Instant::now();
    let inertia = Mat3::diagonal(1.0, 2.0, 3.0);
    let body = RigidBody6D::new(
        1.0,
        inertia,
        parse("[0, 0, 0]").map_err(fmt_err)?,
        parse("[0, 0, 0]").map_err(fmt_err)?,
        Env::new(),
    )
    .map_err(fmt_err)?;
    let initial = BodyState {
        position: Vec3::ZERO,
        velocity: Vec3::ZERO,
        orientation: Quat::IDENTITY,
        omega: Vec3::new(0.1, 2.0, 0.1),
    };
    let traj = body.integrate(&initial, 0.0, 10.0, 1e-3).map_err(fmt_err)?;

    let l0 = inertia.mul_vec(initial.omega).norm();
    let e0 = 0.5 * initial.omega.dot(inertia.mul_vec(initial.omega));
    for (i, row) in traj.rows.iter().enumerate() {
        let q = Quat::new(row[6], row[7], row[8], row[9]);
        let omega = Vec3::new(row[10], row[11], row[12]);
        let qn = (q.norm() - 1.0).abs();
        ensure!(qn <= 1e-9, "row {i}: quaternion norm off by {qn:e}");
        let l = q.rotate(inertia.mul_vec(omega)).norm();
        let e = 0.5 * omega.dot(inertia.mul_vec(omega));
        let ld = ((l - l0) / l0).abs();
        let ed = ((e - e0) / e0).abs();
        ensure!(ld < 1e-6, "row {i}: |L| drifted by {ld:e} relative");
        ensure!(ed < 1e-6, "row {i}: energy drifted by {ed:e} relative");
    }
    ensure!(start.elapsed() < Duration::from_secs(5), "took {:?}", start.elapsed());
    Ok(())
}

// 6. Random frame forests: pose composition is associative and point
//    transforms invert each other.
fn frame_algebra() -> Result<(), String> {
    let mut rng = StdRng::seed_from_u64(0xf0_7e57);

    let mut random_pose = |rng: &mut StdRng| -> Pose6D {
        let t = Vec3::new(
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
        );
        let axis = loop {
            let a = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            if a.norm() > 1e-3 {
                break a;
            }
        };
        let angle = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        Pose6D::new(t, Quat::from_axis_angle(axis, angle))
    };

    for forest_no in 0..1000 {
        let n = rng.random_range(2..=12);
        let mut forest = FrameForest::new();
        let mut names = Vec::new();
        let mut depths = Vec::new();
        for i in 0..n {
            let name = format!("n{i}");
            let shallow: Vec<usize> =
                (0..names.len()).filter(|&j| depths[j] < 6).collect();
            let (parent, depth) = if shallow.is_empty() || rng.random_bool(0.3) {
                (None, 1)
            } else {
                let j = shallow[rng.random_range(0..shallow.len())];
                (Some(j), depths[j] + 1)
            };
            let parent_name: Option<&str> = parent.map(|j: usize| names[j].as_str());
            forest
                .insert(&name, parent_name, random_pose(&mut rng))
                .map_err(fmt_err)?;
            names.push(name);
            depths.push(depth);
        }

        let pick = |rng: &mut StdRng| names[rng.random_range(0..names.len())].clone();
        let p1 = forest.absolute(&pick(&mut rng)).map_err(fmt_err)?;
        let p2 = forest.absolute(&pick(&mut rng)).map_err(fmt_err)?;
        let p3 = forest.absolute(&pick(&mut rng)).map_err(fmt_err)?;
        let left = p1.compose(&p2).compose(&p3);
        let right = p1.compose(&p2.compose(&p3));
        let td = (left.translation - right.translation).norm();
        ensure!(td < 1e-10, "forest {forest_no}: associativity broke by {td:e}");
        let (ql, qr) = (left.orientation, right.orientation);
        let qd = ((ql.w - qr.w).abs())
            .max((ql.x - qr.x).abs())
            .max((ql.y - qr.y).abs())
            .max((ql.z - qr.z).abs());
        ensure!(qd < 1e-10, "forest {forest_no}: orientations differ by {qd:e}");

        let a = pick(&mut rng);
        let b = pick(&mut rng);
        let p = Vec3::new(
            rng.random_range(-3.0..3.0),
            rng.random_range(-3.0..3.0),
            rng.random_range(-3.0..3.0),
        );
        let there = forest.transform_point(&a, &b, p).map_err(fmt_err)?;
        let back = forest.transform_point(&b, &a, there).map_err(fmt_err)?;
        let rd = (back - p).norm();
        ensure!(rd < 1e-10, "forest {forest_no}: round trip {a} -> {b} off by {rd:e}");
    }
    Ok(())
}

// 7. The bundled demo scene validates cleanly and reruns are
//    byte-for-byte identical.
fn demo_scene_determinism() -> Result<(), String> {
    let base = scenes_dir();
    let scene = SceneFile::from_path(base.join("demo.scene")).map_err(fmt_err)?;
    let registry = ExternalRegistry::new();

    let graph = scene.to_graph_from(Some(&base)).map_err(fmt_err)?;
    let diagnostics = graph.validate(&registry);
    ensure!(
        diagnostics.is_empty(),
        "expected zero diagnostics, got {}: {}",
        diagnostics.len(),
        diagnostics.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; ")
    );

    let run_once = |dir: &Path| -> Result<Vec<(String, Vec<u8>)>, String> {
        let summary =
            run_scene(&scene, &registry, &RunConfig::new(dir), Some(&base)).map_err(fmt_err)?;
        ensure!(summary.steps == 100, "expected 100 steps, ran {}", summary.steps);
        let mut files = Vec::new();
        for entry in fs::read_dir(dir).map_err(fmt_err)? {
            let entry = entry.map_err(fmt_err)?;
            files.push((
                entry.file_name().to_string_lossy().into_owned(),
                fs::read(entry.path()).map_err(fmt_err)?,
            ));
        }
        files.sort();
        Ok(files)
    };

    let first_dir = tempfile::tempdir().map_err(fmt_err)?;
    let second_dir = tempfile::tempdir().map_err(fmt_err)?;
    let first = run_once(first_dir.path())?;
    let second = run_once(second_dir.path())?;

    ensure!(!first.is_empty(), "run produced no output files");
    ensure!(
        first.len() == second.len(),
        "runs produced {} vs {} files",
        first.len(),
        second.len()
    );
    for ((name_a, bytes_a), (name_b, bytes_b)) in first.iter().zip(&second) {
        ensure!(name_a == name_b, "file lists diverge: {name_a} vs {name_b}");
        ensure!(bytes_a == bytes_b, "{name_a} differs between reruns");
    }
    Ok(())
}

// 8. Deformed-geometry renders are stable against committed goldens,
//    and the view warp visibly changes the torus image.
fn deformation_goldens() -> Result<(), String> {
    let base = scenes_dir();
    let registry = ExternalRegistry::new();
    let mut rendered = Vec::new();

    for name in ["plane_wave", "torus_normal", "torus_warped"] {
        let scene =
            SceneFile::from_path(base.join(format!("{name}.scene"))).map_err(fmt_err)?;
        let once = render_scene_at(&scene, &registry, 0.0, "eye", Some(&base))
            .map_err(fmt_err)?
            .to_ppm_bytes();
        let again = render_scene_at(&scene, &registry, 0.0, "eye", Some(&base))
            .map_err(fmt_err)?
            .to_ppm_bytes();
        ensure!(once == again, "{name}: two renders in one process differ");

        let golden_path = golden_dir().join(format!("{name}.ppm"));
        let golden = fs::read(&golden_path)
            .map_err(|e| format!("{}: {e}", golden_path.display()))?;
        ensure!(
            once == golden,
            "{name}: render differs from {} ({} vs {} bytes)",
            golden_path.display(),
            once.len(),
            golden.len()
        );
        rendered.push(once);
    }

    let normal = &rendered[1];
    let warped = &rendered[2];
    ensure!(normal.len() == warped.len(), "torus renders have different sizes");
    let header = b"P6\n320 240\n255\n".len();
    let total = (normal.len() - header) / 3;
    let differing = normal[header..]
        .chunks(3)
        .zip(warped[header..].chunks(3))
        .filter(|(a, b)| a != b)
        .count();
    let fraction = differing as f64 / total as f64;
    ensure!(
        fraction >= 0.01,
        "warp changed only {:.3}% of pixels",
        fraction * 100.0
    );
    Ok(())
}

// 9. The field sampler agrees bit-for-bit with a direct per-vertex
//    evaluation, and the colormap is anchored and monotone.
fn field_visualization() -> Result<(), String> {
    let mesh = make_torus(1.5, 0.5, 48, 24).map_err(fmt_err)?;
    let field = parse("sin(3 * x) * cos(2 * y) + z").map_err(fmt_err)?;
    let mut env = Env::new();
    env.set_real("t", 0.0);
    let sampled = sample_field(&mesh, &field, &env).map_err(fmt_err)?;
    ensure!(
        sampled.len() == mesh.vertices.len(),
        "sampled {} values for {} vertices",
        sampled.len(),
        mesh.vertices.len()
    );
    for (i, v) in mesh.vertices.iter().enumerate() {
        let direct = (3.0 * v.x).sin() * (2.0 * v.y).cos() + v.z;
        ensure!(
            sampled[i].to_bits() == direct.to_bits(),
            "vertex {i}: sampler gave {}, direct eval {}",
            sampled[i],
            direct
        );
    }

    let (lo, hi) = (-1.5, 1.5);
    ensure!(colormap(lo, lo, hi) == [0, 0, 255], "low end is not pure blue");
    ensure!(colormap(hi, lo, hi) == [255, 0, 0], "high end is not pure red");
    ensure!(colormap(lo - 10.0, lo, hi) == [0, 0, 255], "below-range input not clamped");
    ensure!(colormap(hi + 10.0, lo, hi) == [255, 0, 0], "above-range input not clamped");
    let mut prev = colormap(lo, lo, hi);
    for i in 1..=2000 {
        let v = lo + (hi - lo) * i as f64 / 2000.0;
        let c = colormap(v, lo, hi);
        ensure!(c[0] >= prev[0], "red channel not monotone at value {v}");
        ensure!(c[2] <= prev[2], "blue channel not monotone at value {v}");
        prev = c;
    }
    Ok(())
}

// 10. Star catalogue fixture: geometry and photometry oracles, and the
//     predicate filter agrees with a hand scan of the records.
fn stars_pipeline() -> Result<(), String> {
    let map = stars::ColumnMap {
        id: Some("id".into()),
        ra: "ra_deg".into(),
        dec: "de_deg".into(),
        parallax: "plx_mas".into(),
        bt: Some("bt_mag".into()),
        vt: Some("vt_mag".into()),
        angle_unit: stars::AngleUnit::Degrees,
    };
    let load = stars::load_catalog(scenes_dir().join("stars.csv"), &map).map_err(fmt_err)?;
    ensure!(load.rows_read() == 10, "read {} rows, expected 10", load.rows_read());
    ensure!(load.skipped.len() == 3, "skipped {} rows, expected 3", load.skipped.len());
    ensure!(load.records.len() == 7, "kept {} rows, expected 7", load.records.len());

    let config = stars::VisualConfig::default();
    for rec in &load.records {
        let vis = stars::visual(rec, &config).map_err(fmt_err)?;
        let err = (vis.direction.norm() - 1.0).abs();
        ensure!(err <= 1e-12, "star {}: direction norm off by {err:e}", rec.id);
    }

    // row 101 has parallax 100 mas, BT 1.5, VT 1.0:
    //   distance = 1000 / 100 = 10 pc
    //   V  = VT - 0.090 (BT - VT) = 1.0 - 0.045 = 0.955
    //   B-V = 0.850 (BT - VT) = 0.425
    let star = load
        .records
        .iter()
        .find(|r| r.id == "101")
        .ok_or("row 101 missing from the fixture")?;
    let vis = stars::visual(star, &config).map_err(fmt_err)?;
    let dist = vis.distance_pc.ok_or("row 101 has no distance")?;
    ensure!((dist - 10.0).abs() < 1e-12, "distance {dist} pc, expected 10");
    ensure!((star.v_mag() - 0.955).abs() < 1e-12, "V = {}, expected 0.955", star.v_mag());
    ensure!((star.b_v() - 0.425).abs() < 1e-12, "B-V = {}, expected 0.425", star.b_v());

    // independent scan: recompute V for every record by hand
    let by_hand = |r: &stars::StarRecord| -> f64 {
        match (r.bt, r.vt) {
            (Some(bt), Some(vt)) => vt - 0.090 * (bt - vt),
            (None, Some(vt)) => vt,
            (Some(bt), None) => bt,
            (None, None) => f64::NAN,
        }
    };

    let bright = stars::parse_predicate("v_mag < 3").map_err(fmt_err)?;
    let kept = stars::filter(&load.records, &bright).map_err(fmt_err)?;
    let manual = load.records.iter().filter(|r| by_hand(r) < 3.0).count();
    ensure!(
        kept.len() == manual,
        "filter kept {} stars, hand scan found {manual}",
        kept.len()
    );
    ensure!(kept.len() == 4, "v_mag < 3 kept {}, expected 4", kept.len());

    let near = stars::parse_predicate("parallax > 30").map_err(fmt_err)?;
    let kept = stars::filter(&load.records, &near).map_err(fmt_err)?;
    let manual = load.records.iter().filter(|r| r.parallax > 30.0).count();
    ensure!(
        kept.len() == manual,
        "parallax filter kept {} stars, hand scan found {manual}",
        kept.len()
    );
    Ok(())
}
