use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use tridef::assets::{read_obj, read_tensor, write_ppm, write_tensor, ImageBuffer, RngStream, TensorBlob};
use tridef::canonical::{canonical_render, invert, noise_analysis, InversionConfig, NeutralFrame};
use tridef::geometry::{MorphParams, SurfaceField, Vec3};
use tridef::regularize::{exact_frob_sq, fd_frob_sq, hutchinson_frob_sq, Matrix, ProbeSpec};
use tridef::render::{render_mesh_coords, Camera};
use tridef::train::{
    canonize, collapse_demo, load_bundles, train_loop, CanonizeConfig, CollapseConfig, GeneratorBundle, ModelConfig,
    MorphSpec, PipelineConfig, Stage, METRICS_FILE,
};

use crate::{Cli, Command, GlobalArgs};

pub fn run(cli: Cli) -> Result<Value> {
    if let Some(n) = cli.global.threads {
        if n == 0 {
            bail!(tridef::Error::Validation("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let g = &cli.global;
    match &cli.command {
        Command::Render(a) => render(g, a),
        Command::Deform(a) => deform(g, a),
        Command::EstimateJnorm(a) => estimate_jnorm(g, a),
        Command::Invert(a) => invert_cmd(g, a),
        Command::Canonize(a) => canonize_cmd(g, a),
        Command::Train(a) => train(g, a),
        Command::CollapseDemo(a) => collapse(g, a),
        Command::EmbedAnalyze(a) => analyze(g, a),
    }
}

fn log(g: &GlobalArgs, msg: impl AsRef<str>) {
    if g.verbose > 0 {
        eprintln!("{}", msg.as_ref());
    }
}

/// Strict JSON config; the type's defaults when no file is given.
fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text)
        .map_err(|e| tridef::Error::Config(format!("{}: {e}", path.display())))
        .map_err(Into::into)
}

fn create_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn rows(blob: &TensorBlob) -> Result<Vec<Vec<f64>>> {
    if blob.shape.len() != 2 {
        bail!(tridef::Error::Validation(format!("expected a 2-D tensor, got shape {:?}", blob.shape)));
    }
    Ok(blob.to_f64().chunks(blob.shape[1].max(1)).map(<[f64]>::to_vec).collect())
}

/// Orbit camera around the origin, looking at it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ViewConfig {
    pub azimuth: f64,
    pub elevation: f64,
    pub distance: f64,
}

impl Default for ViewConfig {
    fn default() -> Self {
        Self {
            azimuth: 0.0,
            elevation: 0.0,
            distance: 2.7,
        }
    }
}

impl ViewConfig {
    fn camera(&self, resolution: usize) -> tridef::Result<Camera> {
        let d = self.distance;
        Camera::orbit(self.azimuth, self.elevation, d, resolution as f64, resolution, resolution, d - 1.0, d + 1.0)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    /// Network sizes of a freshly initialized generator.
    pub model: ModelConfig,
    pub morph: MorphSpec,
    /// Trained run or checkpoint directory; replaces the fresh generator.
    pub generator: Option<PathBuf>,
    pub view: ViewConfig,
    /// Observation geometry; zero coefficients when absent.
    pub geo: Option<MorphParams>,
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// JSON config; defaults apply to missing fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

fn generator_for(model: &ModelConfig, dir: Option<&Path>, seed: u64) -> Result<GeneratorBundle> {
    Ok(match dir {
        Some(dir) => load_bundles(dir)?.0,
        None => GeneratorBundle::new(model, &RngStream::new(seed, 0))?,
    })
}

fn render(g: &GlobalArgs, a: &RenderArgs) -> Result<Value> {
    let mut cfg: RenderConfig = load_config(a.config.as_deref())?;
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    let gen = generator_for(&cfg.model, cfg.generator.as_deref(), cfg.seed)?;
    let model = cfg.morph.build()?;
    let geo = cfg.geo.clone().unwrap_or_else(|| MorphParams::zeros(model.dims()));
    let size = gen.cfg.image_size;
    let cam = cfg.view.camera(size)?;
    let z = RngStream::new(cfg.seed, 1).gaussian_vec(gen.cfg.z_dim);
    let samples = gen.ray_samples(&model, &cam, &geo)?;
    let pixels = gen.generate(&z, &vec![0.0; gen.cfg.r_dim], 0.0, &samples)?;
    let image = ImageBuffer::from_f64(size, size, gen.cfg.feature_dim, &pixels)?;
    let rdr = render_mesh_coords(&model.morph(&geo)?, &cam);
    create_out(&g.out)?;
    write_ppm(g.out.join("image.ppm"), &image)?;
    write_tensor(g.out.join("image.ntc"), &image.to_blob())?;
    write_tensor(g.out.join("rdr.ntc"), &rdr.to_blob())?;
    log(g, format!("rendered {size}x{size} into {}", g.out.display()));
    let mean = pixels.iter().sum::<f64>() / pixels.len() as f64;
    Ok(json!({
        "command": "render",
        "width": size,
        "height": size,
        "channels": gen.cfg.feature_dim,
        "mean": mean,
        "outputs": ["image.ppm", "image.ntc", "rdr.ntc"],
    }))
}

#[derive(Debug, Args)]
pub struct DeformArgs {
    /// Observation mesh (OBJ).
    #[arg(long)]
    pub obs: PathBuf,
    /// Canonical mesh (OBJ) with the observation mesh's connectivity.
    #[arg(long)]
    pub canon: PathBuf,
    /// Query points: NTC tensor of shape [N, 3].
    #[arg(long)]
    pub points: PathBuf,
}

fn deform(g: &GlobalArgs, a: &DeformArgs) -> Result<Value> {
    let sf = SurfaceField::new(read_obj(&a.obs)?, read_obj(&a.canon)?)?;
    let pts = read_tensor(&a.points)?;
    if pts.shape.len() != 2 || pts.shape[1] != 3 {
        bail!(tridef::Error::Validation(format!("points must have shape [N, 3], got {:?}", pts.shape)));
    }
    let input = pts.to_f64();
    let mut out = Vec::with_capacity(input.len());
    let mut max_disp = 0.0f64;
    for p in input.chunks_exact(3) {
        let q = sf.deform(Vec3::new(p[0], p[1], p[2]))?;
        max_disp = max_disp.max(((q.x - p[0]).powi(2) + (q.y - p[1]).powi(2) + (q.z - p[2]).powi(2)).sqrt());
        out.extend([q.x, q.y, q.z]);
    }
    create_out(&g.out)?;
    write_tensor(g.out.join("points.ntc"), &TensorBlob::from_f64(pts.shape.clone(), &out)?)?;
    Ok(json!({
        "command": "deform",
        "n_points": pts.shape[0],
        "identity": sf.is_identity(),
        "max_displacement": max_disp,
        "outputs": ["points.ntc"],
    }))
}

#[derive(Debug, Args)]
pub struct JnormArgs {
    /// Side of the square random map.
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
    /// Number of random probes per estimator.
    #[arg(long, default_value_t = 1)]
    pub probes: usize,
    /// Perturbation scale of the finite-difference estimator.
    #[arg(long, default_value_t = ProbeSpec::DEFAULT_SIGMA)]
    pub sigma: f64,
}

fn estimate_jnorm(g: &GlobalArgs, a: &JnormArgs) -> Result<Value> {
    if a.dim == 0 {
        bail!(tridef::Error::Validation("--dim must be at least 1".into()));
    }
    let seed = g.seed.unwrap_or(0);
    let root = RngStream::new(seed, 0);
    let j = Matrix::random(a.dim, a.dim, 1.0 / (a.dim as f64).sqrt(), &mut root.substream(0));
    let probes = ProbeSpec::new(root.substream(1)).with_sigma(a.sigma).with_probes(a.probes);
    let exact = exact_frob_sq(&j);
    let hutch = hutchinson_frob_sq(|v| j.matvec(v), a.dim, &probes)?;
    let x = root.substream(2).gaussian_vec(a.dim);
    let fd = fd_frob_sq(|v| j.matvec(v), &x, &probes)?;
    Ok(json!({
        "command": "estimate-jnorm",
        "dim": a.dim,
        "probes": a.probes,
        "sigma": a.sigma,
        "seed": seed,
        "exact": exact,
        "eq22": hutch.mean,
        "eq22_variance": hutch.variance,
        "eq23": fd.mean,
        "eq23_variance": fd.variance,
    }))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InvertConfig {
    pub morph: MorphSpec,
    /// Camera the target was captured with.
    pub view: ViewConfig,
    /// Geometry the target was captured with; zero coefficients when absent.
    pub geo: Option<MorphParams>,
    pub inversion: InversionConfig,
}

#[derive(Debug, Args)]
pub struct InvertArgs {
    /// Trained run or checkpoint directory.
    #[arg(long)]
    pub generator: PathBuf,
    /// Target image: NTC tensor of shape [H, W, C].
    #[arg(long)]
    pub target: PathBuf,
    /// JSON config; defaults apply to missing fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

fn invert_cmd(g: &GlobalArgs, a: &InvertArgs) -> Result<Value> {
    let mut cfg: InvertConfig = load_config(a.config.as_deref())?;
    if let Some(s) = g.seed {
        cfg.inversion.seed = s;
    }
    let (gen, _) = load_bundles(&a.generator)?;
    let model = cfg.morph.build()?;
    let target = ImageBuffer::from_blob(&read_tensor(&a.target)?)?;
    let geo = cfg.geo.clone().unwrap_or_else(|| MorphParams::zeros(model.dims()));
    let cam = cfg.view.camera(target.width)?;
    let inv = invert(&gen, &model, &target, &cam, &geo, &cfg.inversion)?;
    let samples = gen.ray_samples(&model, &cam, &geo)?;
    let size = gen.cfg.image_size;
    let recon = ImageBuffer::from_f64(size, size, gen.cfg.feature_dim, &gen.render_style(&inv.w.values, &samples)?)?;
    let canon = canonical_render(&gen, &inv.w, &NeutralFrame::new(&model, size)?)?;
    create_out(&g.out)?;
    write_tensor(g.out.join("w.ntc"), &TensorBlob::from_f64(vec![inv.w.values.len()], &inv.w.values)?)?;
    write_ppm(g.out.join("reconstruction.ppm"), &recon)?;
    write_ppm(g.out.join("canonical.ppm"), &canon)?;
    write_tensor(g.out.join("canonical.ntc"), &canon.to_blob())?;
    log(g, format!("inversion finished after {} steps", inv.steps));
    Ok(json!({
        "command": "invert",
        "residual": inv.residual,
        "steps": inv.steps,
        "converged": inv.converged,
        "psnr": recon.psnr(&target)?,
        "outputs": ["w.ntc", "reconstruction.ppm", "canonical.ppm", "canonical.ntc"],
    }))
}

#[derive(Debug, Args)]
pub struct CanonizeArgs {
    /// Stage-1 run or checkpoint directory.
    #[arg(long)]
    pub generator: PathBuf,
    /// JSON config; defaults apply to missing fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

fn canonize_cmd(g: &GlobalArgs, a: &CanonizeArgs) -> Result<Value> {
    let mut cfg: CanonizeConfig = load_config(a.config.as_deref())?;
    if let Some(s) = g.seed {
        cfg.pipeline.train.seed = s;
        cfg.inversion.seed = s;
    }
    let (gen, _) = load_bundles(&a.generator)?;
    let (set, records) = canonize(&cfg, &gen)?;
    create_out(&g.out)?;
    set.save(&g.out)?;
    let mean_residual = records.iter().map(|r| r.residual).sum::<f64>() / records.len().max(1) as f64;
    let report = json!({
        "command": "canonize",
        "n": set.len(),
        "dim": set.dim,
        "mean_residual": mean_residual,
        "records": records,
    });
    write_json(&g.out.join("canonize.json"), &report)?;
    log(g, format!("wrote {} embeddings to {}", set.len(), g.out.display()));
    Ok(report)
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training stage: 1 (unconditional) or 2 (aligned).
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub stage: u8,
    /// JSON config; defaults apply to missing fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run or checkpoint directory to continue from.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

fn train(g: &GlobalArgs, a: &TrainArgs) -> Result<Value> {
    let mut cfg: PipelineConfig = load_config(a.config.as_deref())?;
    if let Some(s) = g.seed {
        cfg.train.seed = s;
    }
    let stage = if a.stage == 1 { Stage::One } else { Stage::Two };
    log(g, format!("training stage {} for {} steps", a.stage, cfg.train.steps));
    let t = train_loop(&cfg, stage, &g.out, a.resume.as_deref())?;
    let log_text = fs::read_to_string(g.out.join(METRICS_FILE)).context("reading the metrics log")?;
    let last: Value = match log_text.lines().last() {
        Some(line) => serde_json::from_str(line)?,
        None => Value::Null,
    };
    Ok(json!({
        "command": "train",
        "stage": a.stage,
        "completed_steps": t.step,
        "last": last,
        "outputs": [METRICS_FILE, tridef::train::FINAL_DIR],
    }))
}

#[derive(Debug, Args)]
pub struct CollapseArgs {
    /// JSON config; defaults apply to missing fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

fn collapse(g: &GlobalArgs, a: &CollapseArgs) -> Result<Value> {
    let mut cfg: CollapseConfig = load_config(a.config.as_deref())?;
    if let Some(s) = g.seed {
        cfg.pipeline.train.seed = s;
    }
    let out = collapse_demo(&cfg)?;
    log(g, format!("collapse demo took {:.1} s", out.report.elapsed_secs));
    create_out(&g.out)?;
    write_json(&g.out.join("report.json"), &out.report)?;
    write_ppm(g.out.join("grid_unregularized.ppm"), &out.grids[0])?;
    write_ppm(g.out.join("grid_regularized.ppm"), &out.grids[1])?;
    let mut v = serde_json::to_value(&out.report)?;
    v["command"] = json!("collapse-demo");
    v["outputs"] = json!(["report.json", "grid_unregularized.ppm", "grid_regularized.ppm"]);
    Ok(v)
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Image embeddings: NTC tensor [N, d].
    #[arg(long)]
    pub images: PathBuf,
    /// Main prompt embedding per image: NTC tensor [N, d].
    #[arg(long)]
    pub main: PathBuf,
    /// Noise prompt embedding per image: NTC tensor [N, d].
    #[arg(long)]
    pub noise: PathBuf,
}

fn analyze(g: &GlobalArgs, a: &AnalyzeArgs) -> Result<Value> {
    let images = rows(&read_tensor(&a.images)?)?;
    let main = rows(&read_tensor(&a.main)?)?;
    let noise = rows(&read_tensor(&a.noise)?)?;
    let report = noise_analysis(&images, &main, &noise)?;
    create_out(&g.out)?;
    write_json(&g.out.join("analysis.json"), &report)?;
    let mut v = serde_json::to_value(&report)?;
    v["command"] = json!("embed-analyze");
    Ok(v)
}
