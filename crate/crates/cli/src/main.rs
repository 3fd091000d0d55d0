//! The `vrsim` batch command line: evaluate formulas, run scenes,
//! render single frames, and process star catalogues.
//!
//! Exit codes: 0 success, 1 scene or structural error, 2 formula error,
//! 3 runtime numeric failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use vrsim_core::formula::{eval, parse, Env};
use vrsim_core::graph::ExternalRegistry;
use vrsim_core::scene::{render_scene_at, run_scene, RunConfig, SceneError, SceneFile};
use vrsim_core::stars::{
    export_csv, load_catalog, parse_predicate, AngleUnit, ColumnMap, StarsError, VisualConfig,
};

const EXIT_STRUCTURE: u8 = 1;
const EXIT_FORMULA: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(
    name = "vrsim",
    version,
    about = "Scene-driven simulation, rendering and star catalogue toolkit"
)]
struct Cli {
    /// Output location: a directory for `run`, a file for `render` and
    /// `stars`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Suppress the summary line on stdout.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate a formula and print the resulting value.
    Eval {
        /// Formula source text.
        expr: String,
        /// Variable bindings of the form `name=value`, where value is a
        /// formula literal: scalar, `[..]` vector or `[[..],[..]]`
        /// matrix.
        bindings: Vec<String>,
    },
    /// Run a scene over its time grid, writing trajectory CSVs and
    /// frame PPMs under --out.
    Run {
        scene: PathBuf,
        #[arg(long)]
        t0: Option<f64>,
        #[arg(long)]
        t1: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
    },
    /// Step a scene to a time and render one camera to a PPM file.
    Render {
        scene: PathBuf,
        /// Simulation time to render at; defaults to the scene's t0.
        #[arg(long)]
        time: Option<f64>,
        #[arg(long)]
        camera: String,
    },
    /// Load a star catalogue, filter it with a formula predicate, and
    /// export the processed subset.
    Stars {
        catalog: PathBuf,
        /// Boolean formula over ra, dec, parallax, bt, vt, v_mag.
        #[arg(long)]
        filter: Option<String>,
        /// Column map, e.g.
        /// `ra=ra_deg,dec=de_deg,parallax=plx,bt=bt_mag,vt=vt_mag,units=degrees`.
        /// Defaults to canonical columns id,ra,dec,parallax,bt,vt in
        /// radians.
        #[arg(long)]
        map: Option<String>,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Failure {
        Failure { code, message: message.into() }
    }
}

fn scene_failure(e: SceneError) -> Failure {
    match e {
        SceneError::Step(step) => Failure::new(EXIT_RUNTIME, step.to_string()),
        other => Failure::new(EXIT_STRUCTURE, other.to_string()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Eval { expr, bindings } => cmd_eval(&expr, &bindings),
        Command::Run { scene, t0, t1, dt } => {
            let out = cli.out.unwrap_or_else(|| PathBuf::from("out"));
            cmd_run(&scene, t0, t1, dt, &out, cli.quiet)
        }
        Command::Render { scene, time, camera } => {
            let out = cli.out.unwrap_or_else(|| PathBuf::from("render.ppm"));
            cmd_render(&scene, time, &camera, &out, cli.quiet)
        }
        Command::Stars { catalog, filter, map } => {
            let out = cli.out.unwrap_or_else(|| PathBuf::from("stars_out.csv"));
            cmd_stars(&catalog, filter.as_deref(), map.as_deref(), &out, cli.quiet)
        }
    }
}

fn cmd_eval(expr: &str, bindings: &[String]) -> Result<(), Failure> {
    let mut env = Env::new();
    for binding in bindings {
        let Some((name, literal)) = binding.split_once('=') else {
            return Err(Failure::new(
                EXIT_STRUCTURE,
                format!("binding `{binding}` must have the form name=value"),
            ));
        };
        let name = name.trim();
        if name.is_empty() {
            return Err(Failure::new(EXIT_STRUCTURE, format!("binding `{binding}` has no name")));
        }
        let parsed = parse(literal)
            .map_err(|e| Failure::new(EXIT_FORMULA, format!("binding `{name}`: {e}")))?;
        let value = eval(&parsed, &env)
            .map_err(|e| Failure::new(EXIT_FORMULA, format!("binding `{name}`: {e}")))?;
        env.set(name, value);
    }
    let parsed = parse(expr).map_err(|e| Failure::new(EXIT_FORMULA, e.to_string()))?;
    let value = eval(&parsed, &env).map_err(|e| Failure::new(EXIT_FORMULA, e.to_string()))?;
    println!("{value}");
    Ok(())
}

fn cmd_run(
    scene_path: &Path,
    t0: Option<f64>,
    t1: Option<f64>,
    dt: Option<f64>,
    out: &Path,
    quiet: bool,
) -> Result<(), Failure> {
    let scene = SceneFile::from_path(scene_path).map_err(scene_failure)?;
    let mut config = RunConfig::new(out);
    config.t0 = t0;
    config.t1 = t1;
    config.dt = dt;
    let registry = ExternalRegistry::new();
    let summary =
        run_scene(&scene, &registry, &config, scene_path.parent()).map_err(scene_failure)?;
    if !quiet {
        println!("{summary}");
    }
    Ok(())
}

fn cmd_render(
    scene_path: &Path,
    time: Option<f64>,
    camera: &str,
    out: &Path,
    quiet: bool,
) -> Result<(), Failure> {
    let scene = SceneFile::from_path(scene_path).map_err(scene_failure)?;
    let time = time.unwrap_or(scene.simulation.t0);
    let registry = ExternalRegistry::new();
    let image = render_scene_at(&scene, &registry, time, camera, scene_path.parent())
        .map_err(scene_failure)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)
            .map_err(|e| Failure::new(EXIT_STRUCTURE, format!("{}: {e}", dir.display())))?;
    }
    let mut file = fs::File::create(out)
        .map_err(|e| Failure::new(EXIT_STRUCTURE, format!("{}: {e}", out.display())))?;
    image
        .write_ppm(&mut file)
        .map_err(|e| Failure::new(EXIT_STRUCTURE, format!("{}: {e}", out.display())))?;
    if !quiet {
        println!("wrote {}", out.display());
    }
    Ok(())
}

fn parse_column_map(spec: &str) -> Result<ColumnMap, Failure> {
    let mut map = ColumnMap {
        id: None,
        ra: String::new(),
        dec: String::new(),
        parallax: String::new(),
        bt: None,
        vt: None,
        angle_unit: AngleUnit::Radians,
    };
    for part in spec.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let Some((key, value)) = part.split_once('=') else {
            return Err(Failure::new(
                EXIT_STRUCTURE,
                format!("column map entry `{part}` must have the form key=column"),
            ));
        };
        let value = value.trim().to_string();
        match key.trim() {
            "id" => map.id = Some(value),
            "ra" => map.ra = value,
            "dec" => map.dec = value,
            "parallax" => map.parallax = value,
            "bt" => map.bt = Some(value),
            "vt" => map.vt = Some(value),
            "units" => {
                map.angle_unit = match value.as_str() {
                    "degrees" => AngleUnit::Degrees,
                    "radians" => AngleUnit::Radians,
                    other => {
                        return Err(Failure::new(
                            EXIT_STRUCTURE,
                            format!("units must be degrees or radians, got `{other}`"),
                        ))
                    }
                }
            }
            other => {
                return Err(Failure::new(
                    EXIT_STRUCTURE,
                    format!("unknown column map key `{other}`"),
                ))
            }
        }
    }
    for (field, name) in [(&map.ra, "ra"), (&map.dec, "dec"), (&map.parallax, "parallax")] {
        if field.is_empty() {
            return Err(Failure::new(
                EXIT_STRUCTURE,
                format!("column map must name the `{name}` column"),
            ));
        }
    }
    Ok(map)
}

fn stars_failure(e: StarsError) -> Failure {
    match e {
        StarsError::Predicate(_) | StarsError::ColorFormula(_) => {
            Failure::new(EXIT_FORMULA, e.to_string())
        }
        other => Failure::new(EXIT_STRUCTURE, other.to_string()),
    }
}

fn cmd_stars(
    catalog: &Path,
    filter: Option<&str>,
    map: Option<&str>,
    out: &Path,
    quiet: bool,
) -> Result<(), Failure> {
    let map = match map {
        Some(spec) => parse_column_map(spec)?,
        None => ColumnMap::canonical(),
    };
    let load = load_catalog(catalog, &map).map_err(stars_failure)?;
    let read = load.rows_read();
    let skipped = load.skipped.len();
    let kept = match filter {
        Some(src) => {
            let predicate = parse_predicate(src).map_err(stars_failure)?;
            vrsim_core::stars::filter(&load.records, &predicate).map_err(stars_failure)?
        }
        None => load.records,
    };
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)
            .map_err(|e| Failure::new(EXIT_STRUCTURE, format!("{}: {e}", dir.display())))?;
    }
    let file = fs::File::create(out)
        .map_err(|e| Failure::new(EXIT_STRUCTURE, format!("{}: {e}", out.display())))?;
    export_csv(&kept, &VisualConfig::default(), file).map_err(stars_failure)?;
    if !quiet {
        println!("read={read} kept={} skipped={skipped}", kept.len());
    }
    Ok(())
}
