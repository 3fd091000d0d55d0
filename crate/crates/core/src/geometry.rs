//! Triangle meshes: primitive generators (plane grid, box, torus),
//! formula-driven vertex deformation, and OFF import/export with an
//! optional scalar sidecar channel.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use crate::dynamics::format_g17;
use crate::formula::{eval, Env, Expr, FormulaError};
use crate::math::Vec3;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("invalid mesh parameter: {0}")]
    Param(String),
    #[error("vertex {vertex}: {source}")]
    Formula { vertex: usize, source: FormulaError },
    #[error("vertex {vertex}: deformation of `{axis}` must be scalar, got {got}")]
    NotScalar { vertex: usize, axis: char, got: &'static str },
    #[error("malformed OFF data: {0}")]
    Off(String),
}

/// Indexed triangle mesh with an optional per-vertex scalar channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
    pub scalar: Option<Vec<f64>>,
}

impl Mesh {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Mesh {
        let mesh = Mesh { vertices, triangles, scalar: None };
        debug_assert!(mesh.check().is_ok());
        mesh
    }

    fn check(&self) -> Result<(), GeometryError> {
        for (i, tri) in self.triangles.iter().enumerate() {
            if tri.iter().any(|&v| v >= self.vertices.len()) {
                return Err(GeometryError::Off(format!("triangle {i} references a missing vertex")));
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(GeometryError::Off(format!("triangle {i} repeats a vertex")));
            }
        }
        if let Some(s) = &self.scalar {
            if s.len() != self.vertices.len() {
                return Err(GeometryError::Off(
                    "scalar channel length differs from vertex count".into(),
                ));
            }
        }
        Ok(())
    }

    /// Number of distinct undirected edges in the triangle set.
    pub fn edge_count(&self) -> usize {
        let mut edges = BTreeSet::new();
        for t in &self.triangles {
            for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                edges.insert((a.min(b), a.max(b)));
            }
        }
        edges.len()
    }

    /// V - E + F, the Euler characteristic of the triangle complex.
    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edge_count() as i64 + self.triangles.len() as i64
    }

    /// Geometric (non-normalized) normal of triangle `i`.
    pub fn face_normal(&self, i: usize) -> Vec3 {
        let [a, b, c] = self.triangles[i];
        let (a, b, c) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        (b - a).cross(c - a)
    }
}

/// Grid of `nx` by `ny` cells spanning `sx` by `sy` meters on z = 0,
/// centered at the origin, wound so normals face +z.
pub fn make_plane(nx: usize, ny: usize, sx: f64, sy: f64) -> Result<Mesh, GeometryError> {
    if nx < 1 || ny < 1 {
        return Err(GeometryError::Param(format!("plane needs nx, ny >= 1, got {nx}, {ny}")));
    }
    if !(sx > 0.0) || !(sy > 0.0) {
        return Err(GeometryError::Param(format!("plane needs sx, sy > 0, got {sx}, {sy}")));
    }
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            vertices.push(Vec3::new(
                -sx / 2.0 + sx * i as f64 / nx as f64,
                -sy / 2.0 + sy * j as f64 / ny as f64,
                0.0,
            ));
        }
    }
    let at = |i: usize, j: usize| j * (nx + 1) + i;
    let mut triangles = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            triangles.push([at(i, j), at(i + 1, j), at(i + 1, j + 1)]);
            triangles.push([at(i, j), at(i + 1, j + 1), at(i, j + 1)]);
        }
    }
    Ok(Mesh::new(vertices, triangles))
}

/// Axis-aligned box of half-extents (hx, hy, hz) centered at the origin,
/// wound so normals face outward.
pub fn make_box(hx: f64, hy: f64, hz: f64) -> Result<Mesh, GeometryError> {
    if !(hx > 0.0) || !(hy > 0.0) || !(hz > 0.0) {
        return Err(GeometryError::Param(format!(
            "box needs positive half extents, got {hx}, {hy}, {hz}"
        )));
    }
    let mut vertices = Vec::with_capacity(8);
    for &z in &[-hz, hz] {
        for &y in &[-hy, hy] {
            for &x in &[-hx, hx] {
                vertices.push(Vec3::new(x, y, z));
            }
        }
    }
    // index bits: x + 2y + 4z
    let triangles = vec![
        [0, 2, 3], [0, 3, 1], // z = -hz, normal -z
        [4, 5, 7], [4, 7, 6], // z = +hz, normal +z
        [0, 1, 5], [0, 5, 4], // y = -hy
        [2, 6, 7], [2, 7, 3], // y = +hy
        [0, 4, 6], [0, 6, 2], // x = -hx
        [1, 3, 7], [1, 7, 5], // x = +hx
    ];
    Ok(Mesh::new(vertices, triangles))
}

/// Standard parametric torus: major radius `big_r`, tube radius `r`,
/// `nu` segments around the main ring and `nv` around the tube. Closed
/// surface with outward winding.
pub fn make_torus(big_r: f64, r: f64, nu: usize, nv: usize) -> Result<Mesh, GeometryError> {
    if !(big_r > r && r > 0.0) {
        return Err(GeometryError::Param(format!("torus needs R > r > 0, got R={big_r}, r={r}")));
    }
    if nu < 3 || nv < 3 {
        return Err(GeometryError::Param(format!("torus needs nu, nv >= 3, got {nu}, {nv}")));
    }
    let tau = std::f64::consts::TAU;
    let mut vertices = Vec::with_capacity(nu * nv);
    for i in 0..nu {
        let u = tau * i as f64 / nu as f64;
        for j in 0..nv {
            let v = tau * j as f64 / nv as f64;
            let ring = big_r + r * v.cos();
            vertices.push(Vec3::new(ring * u.cos(), ring * u.sin(), r * v.sin()));
        }
    }
    let at = |i: usize, j: usize| (i % nu) * nv + (j % nv);
    let mut triangles = Vec::with_capacity(2 * nu * nv);
    for i in 0..nu {
        for j in 0..nv {
            triangles.push([at(i, j), at(i + 1, j), at(i + 1, j + 1)]);
            triangles.push([at(i, j), at(i + 1, j + 1), at(i, j + 1)]);
        }
    }
    Ok(Mesh::new(vertices, triangles))
}

/// Vertex-wise remap (x, y, z) -> (fx, fy, fz). The expressions see the
/// original coordinates as `x`, `y`, `z` plus everything in `env`
/// (typically `t`). Connectivity and the scalar channel pass through.
pub fn deform(
    mesh: &Mesh,
    fx: &Expr,
    fy: &Expr,
    fz: &Expr,
    env: &Env,
) -> Result<Mesh, GeometryError> {
    let mut vertices = Vec::with_capacity(mesh.vertices.len());
    let mut work = env.clone();
    for (i, v) in mesh.vertices.iter().enumerate() {
        work.set_real("x", v.x);
        work.set_real("y", v.y);
        work.set_real("z", v.z);
        let mut coord = [0.0; 3];
        for (slot, (axis, e)) in coord.iter_mut().zip([('x', fx), ('y', fy), ('z', fz)]) {
            let value =
                eval(e, &work).map_err(|source| GeometryError::Formula { vertex: i, source })?;
            *slot = value.as_real().ok_or(GeometryError::NotScalar {
                vertex: i,
                axis,
                got: value.variant_name(),
            })?;
        }
        vertices.push(Vec3::new(coord[0], coord[1], coord[2]));
    }
    Ok(Mesh { vertices, triangles: mesh.triangles.clone(), scalar: mesh.scalar.clone() })
}

/// Serializes in OFF text format: `OFF`, a counts line, vertex lines,
/// then `3 i j k` face lines.
pub fn write_off(mesh: &Mesh, mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "OFF")?;
    writeln!(w, "{} {} {}", mesh.vertices.len(), mesh.triangles.len(), mesh.edge_count())?;
    for v in &mesh.vertices {
        writeln!(w, "{} {} {}", format_g17(v.x), format_g17(v.y), format_g17(v.z))?;
    }
    for t in &mesh.triangles {
        writeln!(w, "3 {} {} {}", t[0], t[1], t[2])?;
    }
    Ok(())
}

pub fn read_off(r: impl BufRead) -> Result<Mesh, GeometryError> {
    let mut lines = r
        .lines()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| GeometryError::Off(e.to_string()))?
        .into_iter()
        .map(|l| l.trim().to_string())
        .filter(|l| !l.is_empty() && !l.starts_with('#'));
    let header = lines.next().ok_or_else(|| GeometryError::Off("empty file".into()))?;
    if header != "OFF" {
        return Err(GeometryError::Off(format!("expected OFF header, got `{header}`")));
    }
    let counts = lines.next().ok_or_else(|| GeometryError::Off("missing counts line".into()))?;
    let counts: Vec<usize> = counts
        .split_whitespace()
        .map(|w| w.parse().map_err(|_| GeometryError::Off(format!("bad count `{w}`"))))
        .collect::<Result<_, _>>()?;
    if counts.len() < 2 {
        return Err(GeometryError::Off("counts line needs vertex and face counts".into()));
    }
    let (nv, nf) = (counts[0], counts[1]);
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let line = lines.next().ok_or_else(|| GeometryError::Off("missing vertex line".into()))?;
        let xs: Vec<f64> = line
            .split_whitespace()
            .map(|w| w.parse().map_err(|_| GeometryError::Off(format!("bad coordinate `{w}`"))))
            .collect::<Result<_, _>>()?;
        if xs.len() != 3 {
            return Err(GeometryError::Off(format!("vertex line needs 3 coordinates: `{line}`")));
        }
        vertices.push(Vec3::new(xs[0], xs[1], xs[2]));
    }
    let mut triangles = Vec::with_capacity(nf);
    for _ in 0..nf {
        let line = lines.next().ok_or_else(|| GeometryError::Off("missing face line".into()))?;
        let xs: Vec<usize> = line
            .split_whitespace()
            .map(|w| w.parse().map_err(|_| GeometryError::Off(format!("bad index `{w}`"))))
            .collect::<Result<_, _>>()?;
        if xs.len() != 4 || xs[0] != 3 {
            return Err(GeometryError::Off(format!("only triangle faces are supported: `{line}`")));
        }
        triangles.push([xs[1], xs[2], xs[3]]);
    }
    let mesh = Mesh { vertices, triangles, scalar: None };
    mesh.check()?;
    Ok(mesh)
}

/// Scalar sidecar: CSV `index,value`, one row per vertex.
pub fn write_scalar_csv(mesh: &Mesh, mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "index,value")?;
    if let Some(s) = &mesh.scalar {
        for (i, v) in s.iter().enumerate() {
            writeln!(w, "{i},{}", format_g17(*v))?;
        }
    }
    Ok(())
}
