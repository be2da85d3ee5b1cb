//! Command-line front end.
//!
//! Upscale settings resolve in three layers: built-in defaults, then a flat
//! `key = value` file (or a previous `run.json`) given by `--config`, then
//! explicit flags.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::camera::{build_rig_with, ElevationRange, RigPreset};
use crate::error::{Error, Result};
use crate::geometry::{compute_tangents, normalize_mesh, write_obj, Mesh};
use crate::image::{encode_image, save_png16, save_png8, write_pfm};
use crate::lighting::{load_envmap, DirectionalLight, Light};
use crate::metrics::{evaluate, EvalOptions};
use crate::optimizer::{optimize, render_view, LossRecord, OptimConfig, OptimInputs};
use crate::oracle::{BicubicOracle, OracleSpec, SidecarClient, SrOracle};
use crate::renderer::ShadeOptions;
use crate::synth;
use crate::texture::TextureSet;

#[derive(Debug, Parser)]
#[command(name = "texup", version, about = "Upscale PBR texture sets by multi-view differentiable rendering")]
pub struct Cli {
    /// Worker threads (default: all hardware threads).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Log level filter (error, warn, info, debug).
    #[arg(long, global = true, default_value = "info")]
    pub log: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimize high-resolution textures for a mesh.
    Upscale(UpscaleArgs),
    /// Render a texture set from rig cameras.
    Render(RenderArgs),
    /// Compare a texture set against ground truth.
    Eval(EvalArgs),
    /// Write a camera rig as JSON.
    Rig(RigArgs),
    /// Generate a synthetic recovery fixture.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct UpscaleArgs {
    /// Flat key=value file or a previous run.json.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mesh: Option<PathBuf>,
    /// Low-resolution texture stem (`<stem>_albedo.png`, ...).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tex_lr: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scale: Option<usize>,
    /// Equirectangular environment map (PFM).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub env: Option<PathBuf>,
    /// `directional:dx,dy,dz,r,g,b,ar,ag,ab` instead of an environment map.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub light: Option<String>,
    /// bicubic | sharpen | identity | cheat:DIR | sidecar:HOST:PORT | sidecar-stdio:CMD
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<String>,
    /// Free-text prompt forwarded to sidecar oracles.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    /// Sidecar timeout in seconds.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_timeout: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iters: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr: Option<f32>,
    /// Learning rate of the per-view weight maps (default: --lr).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr_weights: Option<f32>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pseudo_res: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_pix: Option<f32>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_reg: Option<f32>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_pbr: Option<f32>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_tv: Option<f32>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_ssim: Option<f32>,
    /// sum | mean
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tv_normalization: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_every: Option<usize>,
    /// Keep pseudo ground truth on disk instead of in memory.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    /// Disable the learned weight maps (plain masked MSE).
    #[arg(long)]
    #[serde(skip)]
    pub no_robust: bool,
    #[arg(long)]
    #[serde(skip)]
    pub no_tv: bool,
    #[arg(long)]
    #[serde(skip)]
    pub no_pbr_loss: bool,
    /// Regenerate pseudo ground truth from the current textures on every visit.
    #[arg(long)]
    #[serde(skip)]
    pub refresh_pseudo_gt: bool,
    #[arg(long)]
    #[serde(skip)]
    pub flip_normal_green: bool,
}

/// Fully resolved upscale settings; written verbatim into `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub mesh: PathBuf,
    pub tex_lr: PathBuf,
    pub scale: usize,
    #[serde(default)]
    pub env: Option<PathBuf>,
    #[serde(default)]
    pub light: Option<String>,
    #[serde(default = "default_oracle")]
    pub oracle: String,
    #[serde(default)]
    pub prompt: Option<String>,
    #[serde(default = "default_timeout")]
    pub oracle_timeout: f64,
    pub out: PathBuf,
    #[serde(flatten)]
    pub optim: OptimConfig,
}

fn default_oracle() -> String {
    "bicubic".into()
}

fn default_timeout() -> f64 {
    crate::oracle::DEFAULT_TIMEOUT.as_secs_f64()
}

#[derive(Debug, Serialize)]
struct RunRecord<'a> {
    config: &'a RunConfig,
    log: Vec<LossRecord>,
    skipped_views: &'a [usize],
    attempted_views: usize,
}

/// Scalar text to JSON: numbers and booleans are typed, everything else is a string.
fn scalar(v: &str) -> Value {
    let v = v.trim();
    if let Ok(b) = v.parse::<bool>() {
        return Value::Bool(b);
    }
    if let Ok(i) = v.parse::<i64>() {
        return Value::from(i);
    }
    if let Ok(f) = v.parse::<f64>() {
        if f.is_finite() {
            return Value::from(f);
        }
    }
    if v.eq_ignore_ascii_case("none") || v.eq_ignore_ascii_case("null") {
        return Value::Null;
    }
    Value::String(v.trim_matches('"').to_string())
}

/// Parses `key = value` lines (`#` starts a comment; `-` in keys reads as `_`).
pub fn parse_flat_config(text: &str, path: &Path) -> Result<Map<String, Value>> {
    let mut map = Map::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(path, i + 1, "expected 'key = value'"))?;
        let key = k.trim().replace('-', "_");
        if key.is_empty() {
            return Err(Error::parse(path, i + 1, "empty key"));
        }
        map.insert(key, scalar(v));
    }
    Ok(map)
}

/// Reads `--config`: a run.json (its `config` object) or a flat file.
pub fn load_config_file(path: &Path) -> Result<Map<String, Value>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.trim_start().starts_with('{') {
        let v: Value = serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))?;
        let obj = v.get("config").unwrap_or(&v);
        return obj
            .as_object()
            .cloned()
            .ok_or_else(|| Error::parse(path, 1, "expected a JSON object"));
    }
    parse_flat_config(&text, path)
}

pub fn resolve_upscale(args: &UpscaleArgs) -> Result<RunConfig> {
    let mut map = serde_json::to_value(OptimConfig::default())
        .expect("config serializes")
        .as_object()
        .cloned()
        .expect("object");
    map.insert("oracle".into(), Value::from(default_oracle()));
    map.insert("oracle_timeout".into(), Value::from(default_timeout()));
    if let Some(p) = &args.config {
        let file = load_config_file(p)?;
        const RUN_KEYS: [&str; 7] = ["mesh", "tex_lr", "scale", "env", "light", "prompt", "out"];
        if let Some(k) = file.keys().find(|k| !map.contains_key(*k) && !RUN_KEYS.contains(&k.as_str())) {
            return Err(Error::Config(format!("unknown setting '{k}' in {}", p.display())));
        }
        map.extend(file);
    }
    let flags = serde_json::to_value(args).expect("args serialize");
    map.extend(flags.as_object().cloned().expect("object"));
    if args.no_robust {
        map.insert("robust".into(), Value::Bool(false));
    }
    if args.no_tv {
        map.insert("use_tv".into(), Value::Bool(false));
    }
    if args.no_pbr_loss {
        map.insert("use_pbr".into(), Value::Bool(false));
    }
    if args.refresh_pseudo_gt {
        map.insert("refresh_pseudo_gt".into(), Value::Bool(true));
    }
    if args.flip_normal_green {
        map.insert("flip_normal_green".into(), Value::Bool(true));
    }
    for key in ["mesh", "tex_lr", "scale", "out"] {
        if map.get(key).is_none_or(Value::is_null) {
            return Err(Error::Config(format!("missing required setting '{key}' (flag --{})", key.replace('_', "-"))));
        }
    }
    let cfg: RunConfig = serde_json::from_value(Value::Object(map)).map_err(|e| Error::Config(e.to_string()))?;
    if cfg.env.is_some() == cfg.light.is_some() {
        return Err(Error::Config("exactly one of --env or --light is required".into()));
    }
    if !matches!(cfg.scale, 2 | 4 | 8) {
        return Err(Error::Config(format!("scale must be 2, 4 or 8, got {}", cfg.scale)));
    }
    cfg.oracle.parse::<OracleSpec>().map_err(Error::Config)?;
    Ok(cfg)
}

pub fn load_light(env: Option<&Path>, light: Option<&str>) -> Result<Light> {
    match (env, light) {
        (Some(p), None) => Ok(Light::Environment(Arc::new(load_envmap(p)?))),
        (None, Some(s)) => {
            let spec = s.strip_prefix("directional:").ok_or_else(|| {
                Error::Config(format!("light must look like directional:dx,dy,dz,r,g,b,ar,ag,ab, got '{s}'"))
            })?;
            Ok(Light::Directional(DirectionalLight::parse(spec)?))
        }
        _ => Err(Error::Config("exactly one of --env or --light is required".into())),
    }
}

fn build_oracle(cfg: &RunConfig) -> Result<Box<dyn SrOracle>> {
    let spec: OracleSpec = cfg.oracle.parse().map_err(Error::Config)?;
    Ok(match spec {
        OracleSpec::Sidecar(ep) => {
            if !(cfg.oracle_timeout.is_finite() && cfg.oracle_timeout > 0.0) {
                return Err(Error::Config("oracle_timeout must be positive".into()));
            }
            Box::new(
                SidecarClient::new(ep)
                    .with_timeout(Duration::from_secs_f64(cfg.oracle_timeout))
                    .with_prompt(cfg.prompt.clone()),
            )
        }
        OracleSpec::Cheat(ref dir) if !dir.is_dir() => {
            return Err(Error::io(dir, std::io::Error::new(std::io::ErrorKind::NotFound, "cheat directory not found")))
        }
        s => s.build(),
    })
}

pub fn cmd_upscale(args: &UpscaleArgs) -> Result<()> {
    let cfg = resolve_upscale(args)?;
    let mesh = Mesh::load_prepared(&cfg.mesh)?;
    let lr = TextureSet::load(&cfg.tex_lr)?;
    let light = load_light(cfg.env.as_deref(), cfg.light.as_deref())?;
    let oracle = build_oracle(&cfg)?;
    // stored renderings cannot upscale a texture: initialize with bicubic
    let init: Option<&dyn SrOracle> = cfg.oracle.starts_with("cheat:").then_some(&BicubicOracle as &dyn SrOracle);
    std::fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    let result = optimize(
        &OptimInputs {
            mesh: &mesh,
            lr_textures: &lr,
            light: &light,
            scale: cfg.scale,
            oracle: oracle.as_ref(),
            init_oracle: init,
        },
        &cfg.optim,
    )?;
    result.textures.save(&cfg.out.join("sr"))?;
    let record = RunRecord {
        config: &cfg,
        log: result.log(cfg.optim.log_every),
        skipped_views: &result.skipped_views,
        attempted_views: result.attempted_views,
    };
    let p = cfg.out.join("run.json");
    let json = serde_json::to_string_pretty(&record).expect("record serializes");
    std::fs::write(&p, json + "\n").map_err(|e| Error::io(&p, e))?;
    log::info!("wrote {}", cfg.out.display());
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub mesh: PathBuf,
    /// Texture stem or directory holding exactly one `<stem>_albedo.png`.
    #[arg(long)]
    pub tex: PathBuf,
    #[arg(long)]
    pub env: Option<PathBuf>,
    #[arg(long)]
    pub light: Option<String>,
    #[arg(long, value_enum, default_value = "eval")]
    pub preset: RigPreset,
    #[arg(long, default_value_t = 0)]
    pub cam_index: usize,
    /// Render every camera of the preset into `--out` as `view_XXXX.png`.
    #[arg(long)]
    pub all: bool,
    #[arg(long, default_value_t = 1024)]
    pub res: usize,
    #[arg(long, default_value_t = 16, value_parser = parse_bits)]
    pub bits: u8,
    #[arg(long)]
    pub flip_normal_green: bool,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_bits(s: &str) -> std::result::Result<u8, String> {
    match s {
        "8" => Ok(8),
        "16" => Ok(16),
        _ => Err("bits must be 8 or 16".into()),
    }
}

/// Resolves a texture argument: a stem, or a directory with a single stem.
pub fn resolve_texture_stem(p: &Path) -> Result<PathBuf> {
    if !p.is_dir() {
        return Ok(p.to_path_buf());
    }
    let mut stems = Vec::new();
    for entry in std::fs::read_dir(p).map_err(|e| Error::io(p, e))? {
        let name = entry.map_err(|e| Error::io(p, e))?.file_name();
        if let Some(stem) = name.to_string_lossy().strip_suffix("_albedo.png") {
            stems.push(stem.to_string());
        }
    }
    stems.sort();
    match stems.as_slice() {
        [one] => Ok(p.join(one)),
        [] => Err(Error::io(p, std::io::Error::new(std::io::ErrorKind::NotFound, "no *_albedo.png in directory"))),
        many => Err(Error::Config(format!(
            "{} holds several texture sets ({}); pass a stem",
            p.display(),
            many.join(", ")
        ))),
    }
}

pub fn cmd_render(a: &RenderArgs) -> Result<()> {
    let mesh = Mesh::load_prepared(&a.mesh)?;
    let tex = TextureSet::load(&resolve_texture_stem(&a.tex)?)?;
    let light = load_light(a.env.as_deref(), a.light.as_deref())?;
    let rig = build_rig_with(a.preset, a.res, ElevationRange::default())?;
    let opts = ShadeOptions { flip_normal_green: a.flip_normal_green };
    let save = |img: &crate::image::Image, p: &Path| {
        let enc = encode_image(img);
        if a.bits == 8 {
            save_png8(&enc, p)
        } else {
            save_png16(&enc, p)
        }
    };
    if a.all {
        std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
        for (i, cam) in rig.cameras.iter().enumerate() {
            let r = render_view(&mesh, cam, &tex, &light, opts);
            save(&r.rgb, &crate::oracle::DirStore::path_for(&a.out, i as u64))?;
        }
        return Ok(());
    }
    let cam = rig.cameras.get(a.cam_index).ok_or_else(|| {
        Error::InvalidArgument(format!("camera index {} out of range (rig has {})", a.cam_index, rig.len()))
    })?;
    save(&render_view(&mesh, cam, &tex, &light, opts).rgb, &a.out)
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub sr: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub mesh: PathBuf,
    #[arg(long)]
    pub env: Option<PathBuf>,
    #[arg(long)]
    pub light: Option<String>,
    #[arg(long, default_value_t = 512)]
    pub res: usize,
    /// Restrict texture PSNR to texels covered by the UV chart.
    #[arg(long)]
    pub mask_uv: bool,
    #[arg(long)]
    pub flip_normal_green: bool,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let mesh = Mesh::load_prepared(&a.mesh)?;
    let sr = TextureSet::load(&resolve_texture_stem(&a.sr)?)?;
    let gt = TextureSet::load(&resolve_texture_stem(&a.gt)?)?;
    let light = load_light(a.env.as_deref(), a.light.as_deref())?;
    let report = evaluate(
        &sr,
        &gt,
        &mesh,
        &light,
        EvalOptions {
            resolution: a.res,
            mask_uv: a.mask_uv,
            shade: ShadeOptions { flip_normal_green: a.flip_normal_green },
        },
    )?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    std::fs::write(&a.out, json + "\n").map_err(|e| Error::io(&a.out, e))?;
    print!("{}", report.table());
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct RigArgs {
    #[arg(long, value_enum)]
    pub preset: RigPreset,
    #[arg(long)]
    pub dump: PathBuf,
    #[arg(long, default_value_t = 256)]
    pub res: usize,
    #[arg(long, default_value_t = -75.0, allow_hyphen_values = true)]
    pub elev_min: f32,
    #[arg(long, default_value_t = 75.0, allow_hyphen_values = true)]
    pub elev_max: f32,
}

pub fn cmd_rig(a: &RigArgs) -> Result<()> {
    let rig = build_rig_with(a.preset, a.res, ElevationRange { min_deg: a.elev_min, max_deg: a.elev_max })?;
    let cams: Vec<_> = rig.cameras.iter().map(|c| c.json()).collect();
    let json = serde_json::to_string_pretty(&cams).expect("cameras serialize");
    std::fs::write(&a.dump, json + "\n").map_err(|e| Error::io(&a.dump, e))
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 256)]
    pub gt_res: usize,
    #[arg(long, default_value_t = 4)]
    pub scale: usize,
    #[arg(long, default_value_t = 64)]
    pub cells: usize,
    #[arg(long, default_value_t = 8)]
    pub subdiv: usize,
    #[arg(long, default_value_t = 11)]
    pub seed: u64,
}

/// Writes `mesh.obj`, `gt_*.png`, `lr_*.png` and `env.pfm`.
pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    if a.scale == 0 || a.gt_res % a.scale != 0 || a.cells == 0 {
        return Err(Error::InvalidArgument("gt-res must be divisible by scale, cells >= 1".into()));
    }
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let mesh = compute_tangents(&normalize_mesh(&synth::cube(a.subdiv))?);
    write_obj(&mesh, &a.out.join("mesh.obj"))?;
    let gt = synth::procedural_textures(a.gt_res, a.cells, a.seed);
    gt.save(&a.out.join("gt"))?;
    synth::downsample_set(&gt, a.scale)?.save(&a.out.join("lr"))?;
    write_pfm(&synth::procedural_environment(128, 64), &a.out.join("env.pfm"))
}

/// Single-line error category and process exit code.
pub fn classify(e: &Error) -> (&'static str, i32) {
    match e {
        Error::Io { .. } => ("io", 3),
        Error::Image { .. } => ("image", 1),
        Error::Parse { .. } => ("parse", 1),
        Error::Config(_) | Error::InvalidArgument(_) => ("usage", 2),
        Error::Oracle(o) if o.is_unreachable() => ("oracle-unreachable", 4),
        Error::Oracle(_) | Error::TooManySkippedViews { .. } => ("oracle", 1),
        Error::MissingUv | Error::DegenerateMesh(_) => ("mesh", 1),
        Error::DimensionMismatch(_) => ("dimension", 1),
        Error::DegenerateWeights | Error::NonFiniteGradient { .. } => ("numeric", 1),
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let work = move || match &cli.command {
        Command::Upscale(a) => cmd_upscale(a),
        Command::Render(a) => cmd_render(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Rig(a) => cmd_rig(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match cli.threads {
        Some(0) => Err(Error::Config("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(work),
        None => work(),
    }
}

/// Entry point shared by the binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let _ = env_logger::Builder::new()
        .parse_filters(&std::env::var("RUST_LOG").unwrap_or_else(|_| cli.log.clone()))
        .format_timestamp(None)
        .try_init();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            let (cat, code) = classify(&e);
            let msg = e.to_string().replace('\n', " ");
            let _ = writeln!(std::io::stderr(), "error: {cat}: {msg}");
            code
        }
    }
}
