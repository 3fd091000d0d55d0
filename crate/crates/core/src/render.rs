//! Deterministic software rasterization: pinhole projection with an
//! optional view warp, scalar field sampling on meshes, a blue-green-red
//! colormap, z-buffered triangle filling and binary PPM output.

use std::io::Write;

use crate::formula::{eval, Env, Expr, FormulaError, Value};
use crate::frames::Pose6D;
use crate::geometry::Mesh;
use crate::math::Vec3;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RenderError {
    #[error("invalid camera parameter: {0}")]
    Param(String),
    #[error("view warp: {0}")]
    Warp(FormulaError),
    #[error("view warp must produce scalars, got {0}")]
    WarpNotScalar(&'static str),
    #[error("field at vertex {vertex}: {source}")]
    Field { vertex: usize, source: FormulaError },
    #[error("field at vertex {vertex}: expected Real or Vector(3), got {got}")]
    FieldShape { vertex: usize, got: String },
}

/// Pinhole camera. Looks down -z with +y up in its own frame.
#[derive(Debug, Clone)]
pub struct Camera {
    pub fov_y_deg: f64,
    pub width: usize,
    pub height: usize,
    pub near: f64,
    /// Optional remap of normalized device coordinates, both expressions
    /// over `x` and `y` in [-1, 1].
    pub warp: Option<(Expr, Expr)>,
}

/// A vertex after projection: viewport pixel coordinates plus the
/// distance along the view axis used for depth testing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projected {
    pub px: f64,
    pub py: f64,
    pub depth: f64,
}

impl Camera {
    pub fn new(fov_y_deg: f64, width: usize, height: usize, near: f64) -> Result<Camera, RenderError> {
        if !(fov_y_deg > 0.0 && fov_y_deg < 180.0) {
            return Err(RenderError::Param(format!(
                "field of view must be in (0, 180) degrees, got {fov_y_deg}"
            )));
        }
        if width == 0 || height == 0 {
            return Err(RenderError::Param("image dimensions must be positive".into()));
        }
        if !(near > 0.0) {
            return Err(RenderError::Param(format!("near plane must be positive, got {near}")));
        }
        Ok(Camera { fov_y_deg, width, height, near, warp: None })
    }

    fn focal(&self) -> f64 {
        1.0 / (self.fov_y_deg.to_radians() / 2.0).tan()
    }

    /// Projects a point given in camera coordinates. Returns `None` for
    /// points at or in front of the near plane (z_cam >= -near).
    pub fn project(&self, p_cam: Vec3) -> Result<Option<Projected>, RenderError> {
        if p_cam.z >= -self.near {
            return Ok(None);
        }
        let f = self.focal();
        let aspect = self.width as f64 / self.height as f64;
        let inv_z = 1.0 / -p_cam.z;
        let mut x = f * p_cam.x * inv_z / aspect;
        let mut y = f * p_cam.y * inv_z;
        if let Some((wx, wy)) = &self.warp {
            let mut env = Env::new();
            env.set_real("x", x);
            env.set_real("y", y);
            let apply = |e: &Expr, env: &Env| -> Result<f64, RenderError> {
                let v = eval(e, env).map_err(RenderError::Warp)?;
                v.as_real().ok_or(RenderError::WarpNotScalar(v.variant_name()))
            };
            let nx = apply(wx, &env)?;
            let ny = apply(wy, &env)?;
            x = nx;
            y = ny;
        }
        Ok(Some(Projected {
            px: (x + 1.0) / 2.0 * self.width as f64,
            py: (1.0 - y) / 2.0 * self.height as f64,
            depth: -p_cam.z,
        }))
    }

    /// Projects a world-space point through the given world-to-camera
    /// transform.
    pub fn project_world(
        &self,
        cam_from_world: &Pose6D,
        p_world: Vec3,
    ) -> Result<Option<Projected>, RenderError> {
        self.project(cam_from_world.apply(p_world))
    }
}

/// Evaluates a field expression at every vertex of `mesh` (positions
/// bound as `x`, `y`, `z` on top of `env`, which typically carries `t`).
/// Vector(3) values reduce to their Euclidean norm.
pub fn sample_field(mesh: &Mesh, field: &Expr, env: &Env) -> Result<Vec<f64>, RenderError> {
    let mut out = Vec::with_capacity(mesh.vertices.len());
    let mut work = env.clone();
    for (i, v) in mesh.vertices.iter().enumerate() {
        work.set_real("x", v.x);
        work.set_real("y", v.y);
        work.set_real("z", v.z);
        let value = eval(field, &work).map_err(|source| RenderError::Field { vertex: i, source })?;
        let scalar = match &value {
            Value::Vector(c) if c.len() == 3 => (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt(),
            other => other.as_real().ok_or_else(|| RenderError::FieldShape {
                vertex: i,
                got: match other {
                    Value::Vector(c) => format!("Vector({})", c.len()),
                    other => other.variant_name().to_string(),
                },
            })?,
        };
        out.push(scalar);
    }
    Ok(out)
}

/// Rounds half-values toward negative infinity, the tie rule used for
/// every float-to-byte conversion in this module.
fn round_half_down(x: f64) -> u8 {
    (x - 0.5).ceil().clamp(0.0, 255.0) as u8
}

/// Piecewise-linear blue -> green -> red map over [lo, hi] with the
/// green peak at the midpoint. Values outside the range clamp.
pub fn colormap(v: f64, lo: f64, hi: f64) -> [u8; 3] {
    let u = if hi > lo { ((v - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.0 };
    if u <= 0.5 {
        let g = round_half_down(255.0 * 2.0 * u);
        [0, g, 255 - g]
    } else {
        let r = round_half_down(255.0 * (2.0 * u - 1.0));
        [r, 255 - r, 0]
    }
}

/// Row-major 8-bit RGB image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[u8; 3]>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Image {
        Image { width, height, pixels: vec![[0, 0, 0]; width * height] }
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        self.pixels[y * self.width + x]
    }

    /// Binary PPM: `P6`, dimensions, `255`, then raw RGB rows top to
    /// bottom.
    pub fn write_ppm(&self, mut w: impl Write) -> std::io::Result<()> {
        write!(w, "P6\n{} {}\n255\n", self.width, self.height)?;
        for px in &self.pixels {
            w.write_all(px)?;
        }
        Ok(())
    }

    pub fn to_ppm_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(self.width * self.height * 3 + 20);
        self.write_ppm(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }
}

/// A star ready for drawing: viewport position, disc radius in pixels
/// and color.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StarSprite {
    pub px: f64,
    pub py: f64,
    pub radius: f64,
    pub color: [u8; 3],
}

/// Z-buffered drawing surface. Stars form the far background (they never
/// write depth); triangles depth-test against each other with ties going
/// to the earlier submission.
pub struct Rasterizer {
    image: Image,
    depth: Vec<f64>,
}

const SHADE_AMBIENT: f64 = 0.15;

impl Rasterizer {
    pub fn new(width: usize, height: usize) -> Rasterizer {
        Rasterizer { image: Image::new(width, height), depth: vec![f64::INFINITY; width * height] }
    }

    pub fn into_image(self) -> Image {
        self.image
    }

    /// Paints filled discs in the order given; overlaps resolve to the
    /// later star. Meshes drawn afterwards always cover them.
    pub fn draw_stars(&mut self, stars: &[StarSprite]) {
        for s in stars {
            if !(s.radius > 0.0) || !s.px.is_finite() || !s.py.is_finite() {
                continue;
            }
            let r2 = s.radius * s.radius;
            let x0 = ((s.px - s.radius - 0.5).floor().max(0.0)) as usize;
            let y0 = ((s.py - s.radius - 0.5).floor().max(0.0)) as usize;
            let x1 = ((s.px + s.radius + 0.5).ceil()).min(self.image.width as f64) as usize;
            let y1 = ((s.py + s.radius + 0.5).ceil()).min(self.image.height as f64) as usize;
            for y in y0..y1 {
                for x in x0..x1 {
                    let dx = x as f64 + 0.5 - s.px;
                    let dy = y as f64 + 0.5 - s.py;
                    if dx * dx + dy * dy <= r2 {
                        self.image.pixels[y * self.image.width + x] = s.color;
                    }
                }
            }
        }
    }

    /// Projects and fills a mesh. `to_camera` carries vertices into the
    /// camera frame. With a scalar channel and a `range`, vertices are
    /// colored through [`colormap`] and blended barycentrically;
    /// otherwise triangles get flat headlight shading. Triangles with
    /// any unprojectable vertex are skipped.
    pub fn draw_mesh(
        &mut self,
        camera: &Camera,
        to_camera: &Pose6D,
        mesh: &Mesh,
        range: Option<(f64, f64)>,
    ) -> Result<(), RenderError> {
        let cam_pts: Vec<Vec3> = mesh.vertices.iter().map(|&v| to_camera.apply(v)).collect();
        let mut projected = Vec::with_capacity(cam_pts.len());
        for &p in &cam_pts {
            projected.push(camera.project(p)?);
        }
        let colors: Option<Vec<[u8; 3]>> = match (&mesh.scalar, range) {
            (Some(s), Some((lo, hi))) => Some(s.iter().map(|&v| colormap(v, lo, hi)).collect()),
            _ => None,
        };
        for (ti, tri) in mesh.triangles.iter().enumerate() {
            let (Some(a), Some(b), Some(c)) =
                (projected[tri[0]], projected[tri[1]], projected[tri[2]])
            else {
                continue;
            };
            let shade = match &colors {
                Some(cs) => TriangleShade::Vertex([cs[tri[0]], cs[tri[1]], cs[tri[2]]]),
                None => {
                    let n = mesh.face_normal(ti);
                    // rotate the normal into camera space; the headlight
                    // sits at the camera origin
                    let n_cam = to_camera.orientation.rotate(n).normalized();
                    let centroid =
                        (cam_pts[tri[0]] + cam_pts[tri[1]] + cam_pts[tri[2]]) * (1.0 / 3.0);
                    let d = centroid.normalized();
                    let lambert = n_cam.dot(d).abs();
                    let g = round_half_down(255.0 * (SHADE_AMBIENT + (1.0 - SHADE_AMBIENT) * lambert));
                    TriangleShade::Flat([g, g, g])
                }
            };
            self.fill_triangle([a, b, c], shade);
        }
        Ok(())
    }

    fn fill_triangle(&mut self, mut v: [Projected; 3], mut shade: TriangleShade) {
        let area2 = edge(&v[0], &v[1], v[2].px, v[2].py);
        if area2 == 0.0 || !area2.is_finite() {
            return;
        }
        if area2 < 0.0 {
            v.swap(1, 2);
            if let TriangleShade::Vertex(cs) = &mut shade {
                cs.swap(1, 2);
            }
        }
        let area2 = edge(&v[0], &v[1], v[2].px, v[2].py);
        let (w, h) = (self.image.width, self.image.height);
        let min_x = v.iter().map(|p| p.px).fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
        let min_y = v.iter().map(|p| p.py).fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
        let max_x = v.iter().map(|p| p.px).fold(0.0, f64::max).ceil().min(w as f64) as usize;
        let max_y = v.iter().map(|p| p.py).fold(0.0, f64::max).ceil().min(h as f64) as usize;
        // edge i runs opposite vertex i; a pixel center exactly on an
        // edge belongs to the triangle only for top and left edges
        let top_left = [
            is_top_left(&v[1], &v[2]),
            is_top_left(&v[2], &v[0]),
            is_top_left(&v[0], &v[1]),
        ];
        for y in min_y..max_y {
            for x in min_x..max_x {
                let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
                let ws = [
                    edge(&v[1], &v[2], cx, cy),
                    edge(&v[2], &v[0], cx, cy),
                    edge(&v[0], &v[1], cx, cy),
                ];
                let covered = ws
                    .iter()
                    .zip(top_left)
                    .all(|(&wi, tl)| wi > 0.0 || (wi == 0.0 && tl));
                if !covered {
                    continue;
                }
                let l = [ws[0] / area2, ws[1] / area2, ws[2] / area2];
                let depth = l[0] * v[0].depth + l[1] * v[1].depth + l[2] * v[2].depth;
                let idx = y * w + x;
                if depth < self.depth[idx] {
                    self.depth[idx] = depth;
                    self.image.pixels[idx] = match &shade {
                        TriangleShade::Flat(c) => *c,
                        TriangleShade::Vertex(cs) => {
                            let mut px = [0u8; 3];
                            for ch in 0..3 {
                                px[ch] = round_half_down(
                                    l[0] * cs[0][ch] as f64
                                        + l[1] * cs[1][ch] as f64
                                        + l[2] * cs[2][ch] as f64,
                                );
                            }
                            px
                        }
                    };
                }
            }
        }
    }
}

enum TriangleShade {
    Flat([u8; 3]),
    Vertex([[u8; 3]; 3]),
}

fn edge(a: &Projected, b: &Projected, px: f64, py: f64) -> f64 {
    (b.px - a.px) * (py - a.py) - (b.py - a.py) * (px - a.px)
}

/// Viewport y grows downward. For a positively oriented triangle the
/// interior lies on the positive side of each edge; top edges then run
/// rightward and left edges run upward.
fn is_top_left(a: &Projected, b: &Projected) -> bool {
    (b.py == a.py && b.px > a.px) || b.py < a.py
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formula::parse;
    use crate::geometry::{make_plane, make_torus};
    use crate::math::Quat;

    fn cam(w: usize, h: usize) -> Camera {
        Camera::new(90.0, w, h, 0.1).unwrap()
    }

    #[test]
    fn axial_point_hits_image_center() {
        let c = cam(640, 480);
        let p = c.project(Vec3::new(0.0, 0.0, -5.0)).unwrap().unwrap();
        assert_eq!(p.px, 320.0);
        assert_eq!(p.py, 240.0);
        assert_eq!(p.depth, 5.0);
    }

    #[test]
    fn points_behind_or_near_yield_none() {
        let c = cam(64, 64);
        assert_eq!(c.project(Vec3::new(0.0, 0.0, 1.0)).unwrap(), None);
        assert_eq!(c.project(Vec3::new(0.0, 0.0, 0.0)).unwrap(), None);
        assert_eq!(c.project(Vec3::new(0.0, 0.0, -0.05)).unwrap(), None);
        assert!(c.project(Vec3::new(0.0, 0.0, -0.2)).unwrap().is_some());
    }

    #[test]
    fn projection_is_pinhole_consistent() {
        // with fov 90 the focal factor is 1, so ndc_y = y / -z
        let c = cam(100, 100);
        let p = c.project(Vec3::new(0.0, 1.0, -2.0)).unwrap().unwrap();
        // ndc_y = 0.5 -> py = (1 - 0.5)/2 * 100 = 25
        assert!((p.py - 25.0).abs() < 1e-12);
        assert_eq!(p.px, 50.0);
        // +y in camera space is up on the image (smaller py)
        assert!(p.py < 50.0);
    }

    #[test]
    fn warp_squares_normalized_coords() {
        let mut c = cam(100, 100);
        c.warp = Some((
            parse("x ^ 2 * sign(x)").unwrap(),
            parse("y ^ 2 * sign(y)").unwrap(),
        ));
        // choose a camera point mapping to ndc (0.5, -0.5)
        let p = c.project(Vec3::new(0.5, -0.5, -1.0)).unwrap().unwrap();
        // warped ndc is (0.25, -0.25)
        assert!((p.px - (0.25 + 1.0) / 2.0 * 100.0).abs() < 1e-12);
        assert!((p.py - (1.0 + 0.25) / 2.0 * 100.0).abs() < 1e-12);
    }

    #[test]
    fn identity_warp_is_bitwise_no_warp() {
        let plain = cam(64, 64);
        let mut warped = cam(64, 64);
        warped.warp = Some((parse("x").unwrap(), parse("y").unwrap()));
        let mesh = make_torus(2.0, 0.5, 16, 8).unwrap();
        let pose = Pose6D::new(Vec3::new(0.0, 0.0, -6.0), Quat::IDENTITY);
        let mut r1 = Rasterizer::new(64, 64);
        r1.draw_mesh(&plain, &pose, &mesh, None).unwrap();
        let mut r2 = Rasterizer::new(64, 64);
        r2.draw_mesh(&warped, &pose, &mesh, None).unwrap();
        assert_eq!(r1.into_image(), r2.into_image());
    }

    #[test]
    fn colormap_endpoints_midpoint_and_quarter() {
        assert_eq!(colormap(-1.0, 0.0, 1.0), [0, 0, 255]);
        assert_eq!(colormap(0.0, 0.0, 1.0), [0, 0, 255]);
        assert_eq!(colormap(0.5, 0.0, 1.0), [0, 255, 0]);
        assert_eq!(colormap(1.0, 0.0, 1.0), [255, 0, 0]);
        assert_eq!(colormap(2.0, 0.0, 1.0), [255, 0, 0]);
        assert_eq!(colormap(0.25, 0.0, 1.0), [0, 127, 128]);
        assert_eq!(colormap(0.75, 0.0, 1.0), [127, 128, 0]);
    }

    #[test]
    fn colormap_is_monotone() {
        let mut last = colormap(0.0, 0.0, 1.0);
        for i in 1..=1000 {
            let c = colormap(i as f64 / 1000.0, 0.0, 1.0);
            assert!(c[0] >= last[0], "red must not decrease");
            assert!(c[2] <= last[2], "blue must not increase");
            last = c;
        }
    }

    #[test]
    fn sample_field_matches_direct_eval() {
        let mesh = make_plane(4, 4, 2.0, 2.0).unwrap();
        let mut env = Env::new();
        env.set_real("t", 0.25);
        let field = parse("x ^ 2 + t").unwrap();
        let s = sample_field(&mesh, &field, &env).unwrap();
        for (v, got) in mesh.vertices.iter().zip(&s) {
            assert_eq!(*got, v.x * v.x + 0.25);
        }
    }

    #[test]
    fn sample_field_vector_reduces_to_magnitude() {
        let mesh = make_plane(1, 1, 2.0, 2.0).unwrap();
        let field = parse("[x, y, 0]").unwrap();
        let s = sample_field(&mesh, &field, &Env::new()).unwrap();
        for (v, got) in mesh.vertices.iter().zip(&s) {
            assert!((got - (v.x * v.x + v.y * v.y).sqrt()).abs() < 1e-15);
        }
    }

    #[test]
    fn sample_field_rejects_wrong_shape() {
        let mesh = make_plane(1, 1, 2.0, 2.0).unwrap();
        let err = sample_field(&mesh, &parse("[x, y]").unwrap(), &Env::new()).unwrap_err();
        assert_eq!(err, RenderError::FieldShape { vertex: 0, got: "Vector(2)".into() });
    }

    #[test]
    fn ppm_header_and_layout() {
        let mut img = Image::new(2, 2);
        img.pixels[1] = [255, 0, 0];
        let bytes = img.to_ppm_bytes();
        assert!(bytes.starts_with(b"P6\n2 2\n255\n"));
        assert_eq!(bytes.len(), 11 + 12);
        // second pixel of the top row
        assert_eq!(&bytes[14..17], &[255, 0, 0]);
    }

    #[test]
    fn empty_scene_renders_black() {
        let img = Rasterizer::new(8, 8).into_image();
        assert!(img.pixels.iter().all(|p| *p == [0, 0, 0]));
    }

    #[test]
    fn shared_edge_pixels_are_claimed_once() {
        // two triangles sharing a diagonal, distinct flat colors; fill
        // both and count coverage of a grid of pixel centers
        let mut r = Rasterizer::new(16, 16);
        let q = |px: f64, py: f64, depth: f64| Projected { px, py, depth };
        r.fill_triangle(
            [q(0.0, 0.0, 1.0), q(16.0, 0.0, 1.0), q(16.0, 16.0, 1.0)],
            TriangleShade::Flat([10, 0, 0]),
        );
        r.fill_triangle(
            [q(0.0, 0.0, 1.0), q(16.0, 16.0, 1.0), q(0.0, 16.0, 1.0)],
            TriangleShade::Flat([0, 10, 0]),
        );
        let img = r.into_image();
        // every pixel covered exactly once: nothing black, nothing
        // double-painted (depth ties resolve to the first triangle)
        for y in 0..16 {
            for x in 0..16 {
                let p = img.get(x, y);
                assert!(p == [10, 0, 0] || p == [0, 10, 0], "pixel {x},{y} = {p:?}");
            }
        }
    }

    #[test]
    fn nearer_square_wins_depth_test() {
        let mut r = Rasterizer::new(8, 8);
        let q = |px: f64, py: f64, depth: f64| Projected { px, py, depth };
        // far red square drawn first, near green square overlapping
        for (d, color) in [(5.0, [200, 0, 0]), (2.0, [0, 200, 0])] {
            r.fill_triangle(
                [q(0.0, 0.0, d), q(8.0, 0.0, d), q(8.0, 8.0, d)],
                TriangleShade::Flat(color),
            );
            r.fill_triangle(
                [q(0.0, 0.0, d), q(8.0, 8.0, d), q(0.0, 8.0, d)],
                TriangleShade::Flat(color),
            );
        }
        let img = r.into_image();
        assert!(img.pixels.iter().all(|p| *p == [0, 200, 0]));
    }

    #[test]
    fn equal_depth_keeps_first_triangle() {
        let mut r = Rasterizer::new(8, 8);
        let q = |px: f64, py: f64, depth: f64| Projected { px, py, depth };
        for color in [[200, 0, 0], [0, 200, 0]] {
            r.fill_triangle(
                [q(0.0, 0.0, 3.0), q(8.0, 0.0, 3.0), q(8.0, 8.0, 3.0)],
                TriangleShade::Flat(color),
            );
        }
        let img = r.into_image();
        assert_eq!(img.get(4, 2), [200, 0, 0]);
    }

    #[test]
    fn stars_sit_behind_meshes() {
        let mut r = Rasterizer::new(16, 16);
        r.draw_stars(&[StarSprite { px: 8.0, py: 8.0, radius: 6.0, color: [50, 60, 70] }]);
        let cam = cam(16, 16);
        let mesh = make_plane(1, 1, 1.0, 1.0).unwrap();
        let pose = Pose6D::new(Vec3::new(0.0, 0.0, -2.0), Quat::IDENTITY);
        r.draw_mesh(&cam, &pose, &mesh, None).unwrap();
        let img = r.into_image();
        assert_ne!(img.get(8, 8), [50, 60, 70], "mesh must cover the star");
        assert_eq!(img.get(8, 3), [50, 60, 70], "star visible off the mesh");
        assert_eq!(img.get(0, 0), [0, 0, 0]);
    }

    #[test]
    fn star_painter_order_is_catalog_order() {
        let mut r = Rasterizer::new(8, 8);
        r.draw_stars(&[
            StarSprite { px: 4.0, py: 4.0, radius: 3.0, color: [10, 0, 0] },
            StarSprite { px: 4.0, py: 4.0, radius: 1.5, color: [0, 10, 0] },
        ]);
        let img = r.into_image();
        assert_eq!(img.get(4, 4), [0, 10, 0]);
        assert_eq!(img.get(4, 2), [10, 0, 0]);
    }

    #[test]
    fn scalar_channel_uses_colormap_at_vertices() {
        // one big triangle colored by scalar; the pixel nearest a vertex
        // holding the range maximum must be close to pure red
        let mut mesh = Mesh::new(
            vec![
                Vec3::new(-4.0, -4.0, 0.0),
                Vec3::new(4.0, -4.0, 0.0),
                Vec3::new(0.0, 4.0, 0.0),
            ],
            vec![[0, 1, 2]],
        );
        mesh.scalar = Some(vec![0.0, 0.0, 1.0]);
        let cam = cam(64, 64);
        let pose = Pose6D::new(Vec3::new(0.0, 0.0, -5.0), Quat::IDENTITY);
        let mut r = Rasterizer::new(64, 64);
        r.draw_mesh(&cam, &pose, &mesh, Some((0.0, 1.0))).unwrap();
        let img = r.into_image();
        // apex projects near (32, 6.4); sample just inside
        let p = img.get(32, 8);
        assert!(p[0] > 220 && p[2] < 40, "near-apex pixel {p:?} should be red");
        // bottom corners are blue
        let p = img.get(8, 55);
        assert!(p[2] > 220 && p[0] < 40, "bottom pixel {p:?} should be blue");
    }

    #[test]
    fn render_is_deterministic() {
        let run = || {
            let cam = cam(48, 48);
            let mesh = make_torus(2.0, 0.5, 24, 12).unwrap();
            let pose = Pose6D::new(
                Vec3::new(0.0, 0.0, -6.0),
                Quat::from_axis_angle(Vec3::new(1.0, 0.0, 0.0), 0.9),
            );
            let mut r = Rasterizer::new(48, 48);
            r.draw_mesh(&cam, &pose, &mesh, None).unwrap();
            r.into_image().to_ppm_bytes()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn backfaces_still_shade_positive() {
        // |n . d| keeps back-facing geometry visible rather than black
        let cam = cam(32, 32);
        let mesh = make_plane(1, 1, 2.0, 2.0).unwrap();
        // rotate the plane so its +z normal points away from the camera
        let pose = Pose6D::new(
            Vec3::new(0.0, 0.0, -3.0),
            Quat::from_axis_angle(Vec3::new(1.0, 0.0, 0.0), std::f64::consts::PI),
        );
        let mut r = Rasterizer::new(32, 32);
        r.draw_mesh(&cam, &pose, &mesh, None).unwrap();
        let img = r.into_image();
        let p = img.get(16, 16);
        assert!(p[0] > 200, "back-facing plane should be brightly lit, got {p:?}");
    }
}
