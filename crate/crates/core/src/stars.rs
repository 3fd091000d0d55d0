//! Star catalogue processing: tolerant CSV ingestion through a column
//! map, formula-predicate filtering, and the photometric pipeline from
//! catalogue magnitudes to renderable direction, size and color.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use crate::dynamics::format_g17;
use crate::formula::{eval, infer, parse, Env, Expr, TypeTag, Value};
use crate::math::Vec3;
use crate::render::StarSprite;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StarsError {
    #[error("cannot read catalogue: {0}")]
    Io(String),
    #[error("catalogue is missing mapped column `{0}`")]
    MissingColumn(String),
    #[error("filter predicate: {0}")]
    Predicate(String),
    #[error("color formula: {0}")]
    ColorFormula(String),
}

/// One catalogue row after unit normalization. Angles are radians,
/// parallax stays in milliarcseconds.
#[derive(Debug, Clone, PartialEq)]
pub struct StarRecord {
    pub id: String,
    pub ra: f64,
    pub dec: f64,
    pub parallax: f64,
    pub bt: Option<f64>,
    pub vt: Option<f64>,
}

impl StarRecord {
    /// Johnson V magnitude: VT - 0.090 (BT - VT) when both Tycho
    /// magnitudes are present, otherwise whichever one exists.
    pub fn v_mag(&self) -> f64 {
        match (self.bt, self.vt) {
            (Some(bt), Some(vt)) => vt - 0.090 * (bt - vt),
            (Some(bt), None) => bt,
            (None, Some(vt)) => vt,
            (None, None) => unreachable!("records always carry at least one magnitude"),
        }
    }

    /// Johnson B-V color index: 0.850 (BT - VT), or 0 with a single
    /// magnitude.
    pub fn b_v(&self) -> f64 {
        match (self.bt, self.vt) {
            (Some(bt), Some(vt)) => 0.850 * (bt - vt),
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AngleUnit {
    Degrees,
    Radians,
}

impl AngleUnit {
    fn to_radians(self, v: f64) -> f64 {
        match self {
            AngleUnit::Degrees => v.to_radians(),
            AngleUnit::Radians => v,
        }
    }
}

/// Names the source columns of a catalogue and the unit its angles use.
/// Parallax is always milliarcseconds.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnMap {
    pub id: Option<String>,
    pub ra: String,
    pub dec: String,
    pub parallax: String,
    pub bt: Option<String>,
    pub vt: Option<String>,
    pub angle_unit: AngleUnit,
}

impl ColumnMap {
    /// The schema this module itself exports: canonical names, radians.
    pub fn canonical() -> ColumnMap {
        ColumnMap {
            id: Some("id".into()),
            ra: "ra".into(),
            dec: "dec".into(),
            parallax: "parallax".into(),
            bt: Some("bt".into()),
            vt: Some("vt".into()),
            angle_unit: AngleUnit::Radians,
        }
    }
}

/// Result of an ingestion pass: parsed records plus one diagnostic line
/// per skipped row.
#[derive(Debug, Clone, PartialEq)]
pub struct CatalogLoad {
    pub records: Vec<StarRecord>,
    pub skipped: Vec<String>,
}

impl CatalogLoad {
    pub fn rows_read(&self) -> usize {
        self.records.len() + self.skipped.len()
    }
}

pub fn load_catalog(path: impl AsRef<Path>, map: &ColumnMap) -> Result<CatalogLoad, StarsError> {
    let file = std::fs::File::open(path.as_ref())
        .map_err(|e| StarsError::Io(format!("{}: {e}", path.as_ref().display())))?;
    load_catalog_reader(file, map)
}

pub fn load_catalog_reader(r: impl std::io::Read, map: &ColumnMap) -> Result<CatalogLoad, StarsError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let headers = reader.headers().map_err(|e| StarsError::Io(e.to_string()))?.clone();
    let col = |name: &str| -> Result<usize, StarsError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| StarsError::MissingColumn(name.to_string()))
    };
    let opt_col = |name: &Option<String>| -> Result<Option<usize>, StarsError> {
        name.as_deref().map(col).transpose()
    };
    let id_col = opt_col(&map.id)?;
    let ra_col = col(&map.ra)?;
    let dec_col = col(&map.dec)?;
    let plx_col = col(&map.parallax)?;
    let bt_col = opt_col(&map.bt)?;
    let vt_col = opt_col(&map.vt)?;

    let mut out = CatalogLoad { records: Vec::new(), skipped: Vec::new() };
    for (i, row) in reader.records().enumerate() {
        let line = i + 2; // 1-based, after the header
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                out.skipped.push(format!("row {line}: {e}"));
                continue;
            }
        };
        match parse_row(&row, line, id_col, ra_col, dec_col, plx_col, bt_col, vt_col, map) {
            Ok(rec) => out.records.push(rec),
            Err(msg) => out.skipped.push(msg),
        }
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn parse_row(
    row: &csv::StringRecord,
    line: usize,
    id_col: Option<usize>,
    ra_col: usize,
    dec_col: usize,
    plx_col: usize,
    bt_col: Option<usize>,
    vt_col: Option<usize>,
    map: &ColumnMap,
) -> Result<StarRecord, String> {
    let cell = |c: usize| row.get(c).unwrap_or("");
    let required = |c: usize, what: &str| -> Result<f64, String> {
        let text = cell(c);
        text.parse::<f64>().map_err(|_| format!("row {line}: bad {what} `{text}`"))
    };
    let optional = |c: Option<usize>, what: &str| -> Result<Option<f64>, String> {
        match c {
            None => Ok(None),
            Some(c) if cell(c).is_empty() => Ok(None),
            Some(c) => required(c, what).map(Some),
        }
    };
    let ra = map.angle_unit.to_radians(required(ra_col, "right ascension")?);
    let dec = map.angle_unit.to_radians(required(dec_col, "declination")?);
    let parallax = required(plx_col, "parallax")?;
    let bt = optional(bt_col, "BT magnitude")?;
    let vt = optional(vt_col, "VT magnitude")?;
    if !(0.0..std::f64::consts::TAU).contains(&ra) {
        return Err(format!("row {line}: right ascension {ra} rad out of [0, 2pi)"));
    }
    if !(-std::f64::consts::FRAC_PI_2..=std::f64::consts::FRAC_PI_2).contains(&dec) {
        return Err(format!("row {line}: declination {dec} rad out of [-pi/2, pi/2]"));
    }
    if !(parallax >= 0.0) || !parallax.is_finite() {
        return Err(format!("row {line}: parallax {parallax} mas must be >= 0"));
    }
    if bt.is_none() && vt.is_none() {
        return Err(format!("row {line}: neither BT nor VT magnitude present"));
    }
    let id = match id_col {
        Some(c) if !cell(c).is_empty() => cell(c).to_string(),
        _ => format!("row{}", line - 1),
    };
    Ok(StarRecord { id, ra, dec, parallax, bt, vt })
}

/// The variables a filter predicate may reference.
pub const FILTER_VARS: [&str; 6] = ["ra", "dec", "parallax", "bt", "vt", "v_mag"];

/// Keeps records where the predicate holds. The predicate must type as
/// Boolean over the [`FILTER_VARS`]; records missing a referenced
/// optional magnitude are excluded.
pub fn filter(records: &[StarRecord], predicate: &Expr) -> Result<Vec<StarRecord>, StarsError> {
    let free = predicate.free_variables();
    for name in &free {
        if !FILTER_VARS.contains(&name.as_str()) {
            return Err(StarsError::Predicate(format!("unknown variable `{name}`")));
        }
    }
    let mut tags: HashMap<String, TypeTag> = HashMap::new();
    for v in FILTER_VARS {
        tags.insert(v.to_string(), TypeTag::Real);
    }
    let tag = infer(predicate, &tags)
        .map_err(|e| StarsError::Predicate(e.to_string()))?;
    if tag != TypeTag::Boolean {
        return Err(StarsError::Predicate(format!("must be Boolean, got {tag}")));
    }
    let needs_bt = free.iter().any(|v| v == "bt");
    let needs_vt = free.iter().any(|v| v == "vt");
    let mut kept = Vec::new();
    for rec in records {
        if (needs_bt && rec.bt.is_none()) || (needs_vt && rec.vt.is_none()) {
            continue;
        }
        let mut env = Env::new();
        env.set_real("ra", rec.ra);
        env.set_real("dec", rec.dec);
        env.set_real("parallax", rec.parallax);
        env.set_real("v_mag", rec.v_mag());
        if let Some(bt) = rec.bt {
            env.set_real("bt", bt);
        }
        if let Some(vt) = rec.vt {
            env.set_real("vt", vt);
        }
        let value = eval(predicate, &env)
            .map_err(|e| StarsError::Predicate(format!("record `{}`: {e}", rec.id)))?;
        match value {
            Value::Boolean(true) => kept.push(rec.clone()),
            Value::Boolean(false) => {}
            other => {
                return Err(StarsError::Predicate(format!(
                    "must be Boolean, got {}",
                    other.variant_name()
                )))
            }
        }
    }
    Ok(kept)
}

/// Unit direction for equatorial coordinates:
/// (cos dec cos ra, cos dec sin ra, sin dec).
pub fn to_direction(ra: f64, dec: f64) -> Vec3 {
    Vec3::new(dec.cos() * ra.cos(), dec.cos() * ra.sin(), dec.sin())
}

/// Blackbody temperature for a B-V color index, in Kelvin.
pub fn color_index_temperature(b_v: f64) -> f64 {
    4600.0 * (1.0 / (0.92 * b_v + 1.7) + 1.0 / (0.92 * b_v + 0.62))
}

fn round_half_down_u8(x: f64) -> u8 {
    (x - 0.5).ceil().clamp(0.0, 255.0) as u8
}

/// Approximate RGB of a blackbody at temperature `t_k` Kelvin, after
/// Tanner Helland's piecewise log/power fit.
pub fn temperature_rgb(t_k: f64) -> [u8; 3] {
    let t = (t_k / 100.0).clamp(10.0, 400.0);
    let r = if t <= 66.0 { 255.0 } else { 329.698727446 * (t - 60.0).powf(-0.1332047592) };
    let g = if t <= 66.0 {
        99.4708025861 * t.ln() - 161.1195681661
    } else {
        288.1221695283 * (t - 60.0).powf(-0.0755148492)
    };
    let b = if t >= 66.0 {
        255.0
    } else if t <= 19.0 {
        0.0
    } else {
        138.5177312231 * (t - 10.0).ln() - 305.0447927307
    };
    [round_half_down_u8(r), round_half_down_u8(g), round_half_down_u8(b)]
}

/// Sizing and coloring knobs for [`visual`]. `color` may override the
/// default temperature mapping with a formula over `b_v`, `t` (Kelvin)
/// and `v_mag` returning a Vector(3) of 0..255 channel values.
#[derive(Debug, Clone)]
pub struct VisualConfig {
    pub r_min: f64,
    pub k: f64,
    pub color: Option<Expr>,
}

impl Default for VisualConfig {
    fn default() -> VisualConfig {
        VisualConfig { r_min: 0.5, k: 4.0, color: None }
    }
}

/// A star prepared for rendering.
#[derive(Debug, Clone, PartialEq)]
pub struct StarVisual {
    pub direction: Vec3,
    pub distance_pc: Option<f64>,
    pub v_mag: f64,
    pub color: [u8; 3],
    pub radius_px: f64,
}

/// Parallaxes at or below this many milliarcseconds give no usable
/// distance.
pub const PARALLAX_FLOOR_MAS: f64 = 0.1;

pub fn visual(rec: &StarRecord, config: &VisualConfig) -> Result<StarVisual, StarsError> {
    let v_mag = rec.v_mag();
    let b_v = rec.b_v();
    let temperature = color_index_temperature(b_v);
    let color = match &config.color {
        None => temperature_rgb(temperature),
        Some(expr) => {
            let mut env = Env::new();
            env.set_real("b_v", b_v);
            env.set_real("t", temperature);
            env.set_real("v_mag", v_mag);
            let value = eval(expr, &env).map_err(|e| StarsError::ColorFormula(e.to_string()))?;
            match value {
                Value::Vector(c) if c.len() == 3 => [
                    round_half_down_u8(c[0]),
                    round_half_down_u8(c[1]),
                    round_half_down_u8(c[2]),
                ],
                other => {
                    return Err(StarsError::ColorFormula(format!(
                        "expected Vector(3), got {}",
                        other.variant_name()
                    )))
                }
            }
        }
    };
    Ok(StarVisual {
        direction: to_direction(rec.ra, rec.dec),
        distance_pc: (rec.parallax > PARALLAX_FLOOR_MAS).then(|| 1000.0 / rec.parallax),
        v_mag,
        color,
        radius_px: config.r_min.max(config.k * 10f64.powf(-v_mag / 5.0)),
    })
}

impl StarVisual {
    /// Pairs this visual with a viewport position to make a drawable
    /// sprite.
    pub fn sprite_at(&self, px: f64, py: f64) -> StarSprite {
        StarSprite { px, py, radius: self.radius_px, color: self.color }
    }
}

/// Writes records in the canonical schema plus the computed columns:
/// `id,ra,dec,parallax,bt,vt,v_mag,dist_pc,r,g,b` with angles in
/// radians. Optional cells are left empty. Loading the output back with
/// [`ColumnMap::canonical`] reproduces the records exactly.
pub fn export_csv(
    records: &[StarRecord],
    config: &VisualConfig,
    mut w: impl Write,
) -> Result<(), StarsError> {
    let io_err = |e: std::io::Error| StarsError::Io(e.to_string());
    writeln!(w, "id,ra,dec,parallax,bt,vt,v_mag,dist_pc,r,g,b").map_err(io_err)?;
    for rec in records {
        let vis = visual(rec, config)?;
        let opt = |v: Option<f64>| v.map(format_g17).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{}",
            rec.id,
            format_g17(rec.ra),
            format_g17(rec.dec),
            format_g17(rec.parallax),
            opt(rec.bt),
            opt(rec.vt),
            format_g17(vis.v_mag),
            opt(vis.distance_pc),
            vis.color[0],
            vis.color[1],
            vis.color[2],
        )
        .map_err(io_err)?;
    }
    Ok(())
}

/// Parses predicate source for the CLI and scene file, mapping parse
/// failures into predicate errors.
pub fn parse_predicate(src: &str) -> Result<Expr, StarsError> {
    parse(src).map_err(|e| StarsError::Predicate(e.to_string()))
}
