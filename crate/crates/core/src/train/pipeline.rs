use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize, Serializer};
use serde_json::json;

use crate::assets::{Checkpoint, ImageBuffer, RngStream};
use crate::canonical::{canonical_render, invert, EmbeddingSet, InversionConfig, NeutralFrame, ToyEmbedder};
use crate::error::{validate, Error, Result};
use crate::field::Parametric;
use crate::geometry::{MorphDims, ToyMorphModel};
use crate::regularize::ProbeSpec;

use super::adam::Adam;
use super::diagnostics::{bundle_sensitivity, diversity};
use super::discriminator::DiscriminatorBundle;
use super::generator::GeneratorBundle;
use super::model::ModelConfig;
use super::scene::{sample_scene, SceneConfig, SceneSampler};
use super::step::{draw_latent, gan_step, Optimizers, Stage, StepMetrics, TrainConfig, TrainItem};

/// Toy morphable model settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MorphSpec {
    pub seed: u64,
    pub subdivisions: u32,
    pub dims: MorphDims,
}

impl Default for MorphSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            subdivisions: 2,
            dims: MorphDims::default(),
        }
    }
}

impl MorphSpec {
    pub fn build(&self) -> Result<ToyMorphModel> {
        validate(self.subdivisions <= 5, || "at most 5 icosphere subdivisions".into())?;
        Ok(ToyMorphModel::synthetic(self.seed, self.subdivisions, self.dims))
    }
}

/// Everything a training run needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub model: ModelConfig,
    pub scene: SceneConfig,
    pub morph: MorphSpec,
    pub train: TrainConfig,
    pub dataset_size: usize,
    /// Save a checkpoint every this many steps (0: only the final one).
    pub checkpoint_every: usize,
    /// Compute diversity and sensitivity every this many steps (0: never).
    pub diagnostics_every: usize,
    pub diversity_samples: usize,
    pub sensitivity_probes: usize,
    /// Stage-1 run directory (or checkpoint) that Stage 2 starts from.
    pub stage1_checkpoint: Option<PathBuf>,
    /// Embedding cache directory holding one embedding per dataset id.
    pub embedding_cache: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            scene: SceneConfig::default(),
            morph: MorphSpec::default(),
            train: TrainConfig::default(),
            dataset_size: 32,
            checkpoint_every: 0,
            diagnostics_every: 100,
            diversity_samples: 4,
            sensitivity_probes: 4,
            stage1_checkpoint: None,
            embedding_cache: None,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.scene.validate()?;
        self.train.validate()?;
        validate(self.scene.resolution == self.model.image_size, || {
            format!(
                "scene resolution {} differs from model image size {}",
                self.scene.resolution, self.model.image_size
            )
        })?;
        validate(self.dataset_size >= 1, || "dataset_size must be at least 1".into())?;
        validate(self.diversity_samples >= 2, || "diversity_samples must be at least 2".into())?;
        validate(self.sensitivity_probes >= 1, || "sensitivity_probes must be at least 1".into())
    }
}

// Root stream ids.
const RNG_INIT: u64 = 0;
const RNG_DATA: u64 = 1;
const RNG_STEPS: u64 = 2;
const RNG_DIAG: u64 = 3;
const RNG_NOISE: u64 = 4;

/// Scene sampler and morph model of a config.
pub fn build_sampler(cfg: &PipelineConfig) -> Result<SceneSampler> {
    SceneSampler::new(cfg.morph.build()?, cfg.scene.clone())
}

/// Renders the dataset and pairs each record with its embedding (zeros when
/// `embeddings` is absent).
pub fn build_dataset(cfg: &PipelineConfig, g: &GeneratorBundle, embeddings: Option<&EmbeddingSet>) -> Result<Vec<TrainItem>> {
    let sampler = build_sampler(cfg)?;
    let rng = RngStream::new(cfg.train.seed, RNG_DATA);
    if let Some(e) = embeddings {
        validate(e.dim == cfg.model.r_dim, || {
            format!("embedding cache has dimension {}, model expects {}", e.dim, cfg.model.r_dim)
        })?;
    }
    (0..cfg.dataset_size as u64)
        .map(|id| {
            let rec = sample_scene(&sampler, id, &rng)?;
            let r = match embeddings {
                Some(e) => e.get(id)?.to_vec(),
                None => vec![0.0; cfg.model.r_dim],
            };
            TrainItem::from_record(&rec, g, &sampler.model, r)
        })
        .collect()
}

/// Toy embeddings of each record's ground-truth scene re-rendered in the
/// neutral frame; with `noise_dim > 0`, a unique random unit vector per id is
/// appended.
pub fn oracle_embeddings(cfg: &PipelineConfig, clean_dim: usize, noise_dim: usize, embed_seed: u64) -> Result<EmbeddingSet> {
    validate(clean_dim + noise_dim == cfg.model.r_dim, || {
        format!("clean {clean_dim} + noise {noise_dim} must equal r_dim {}", cfg.model.r_dim)
    })?;
    let sampler = build_sampler(cfg)?;
    let frame = NeutralFrame::new(&sampler.model, cfg.scene.resolution)?;
    let rng = RngStream::new(cfg.train.seed, RNG_DATA);
    let noise = RngStream::new(cfg.train.seed, RNG_NOISE);
    let embedder = if clean_dim > 0 { Some(ToyEmbedder::new(clean_dim, embed_seed)?) } else { None };
    let mut set = EmbeddingSet::new(cfg.model.r_dim);
    for id in 0..cfg.dataset_size as u64 {
        let rec = sample_scene(&sampler, id, &rng)?;
        let mut row = Vec::with_capacity(cfg.model.r_dim);
        if let Some(e) = &embedder {
            let mut scene = sampler.canonical_scene(rec.appearance_seed)?;
            if rec.flipped {
                scene = scene.mirrored_x();
            }
            row.extend(e.embed(&sampler.render(&scene, &frame.camera)?)?.values);
        }
        row.extend(noise_row(&noise, id, noise_dim));
        set.push(id, &row)?;
    }
    Ok(set)
}

fn noise_row(noise: &RngStream, id: u64, dim: usize) -> Vec<f64> {
    if dim == 0 {
        return Vec::new();
    }
    let v = noise.substream(id).gaussian_vec(dim);
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

/// Settings of the canonicalization preprocessing pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CanonizeConfig {
    pub pipeline: PipelineConfig,
    pub inversion: InversionConfig,
    /// Trailing embedding entries filled with a unique unit vector per id.
    pub noise_dim: usize,
    pub embed_seed: u64,
}

impl Default for CanonizeConfig {
    fn default() -> Self {
        Self {
            pipeline: PipelineConfig::default(),
            inversion: InversionConfig::default(),
            noise_dim: 0,
            embed_seed: 7,
        }
    }
}

/// Per-record outcome of [`canonize`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CanonizedRecord {
    pub id: u64,
    pub residual: f64,
    pub steps: usize,
    pub converged: bool,
}

/// Inverts every dataset record into `g`'s style space under the record's
/// camera and geometry, re-renders it in the neutral frame and embeds the
/// result with the toy embedder.
pub fn canonize(cfg: &CanonizeConfig, g: &GeneratorBundle) -> Result<(EmbeddingSet, Vec<CanonizedRecord>)> {
    cfg.pipeline.validate()?;
    let r_dim = cfg.pipeline.model.r_dim;
    validate(cfg.noise_dim < r_dim, || format!("noise_dim {} leaves no room in r_dim {r_dim}", cfg.noise_dim))?;
    let sampler = build_sampler(&cfg.pipeline)?;
    let frame = NeutralFrame::new(&sampler.model, cfg.pipeline.scene.resolution)?;
    let embedder = ToyEmbedder::new(r_dim - cfg.noise_dim, cfg.embed_seed)?;
    let rng = RngStream::new(cfg.pipeline.train.seed, RNG_DATA);
    let noise = RngStream::new(cfg.pipeline.train.seed, RNG_NOISE);
    let mut set = EmbeddingSet::new(r_dim);
    let mut records = Vec::new();
    for id in 0..cfg.pipeline.dataset_size as u64 {
        let rec = sample_scene(&sampler, id, &rng)?;
        let inv = invert(g, &sampler.model, &rec.image, &rec.camera, &rec.morph, &cfg.inversion)?;
        let mut row = embedder.embed(&canonical_render(g, &inv.w, &frame)?)?.values;
        row.extend(noise_row(&noise, id, cfg.noise_dim));
        set.push(id, &row)?;
        records.push(CanonizedRecord {
            id,
            residual: inv.residual,
            steps: inv.steps,
            converged: inv.converged,
        });
    }
    Ok((set, records))
}

fn finite_or_tag<S: Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        None => s.serialize_none(),
        Some(x) if x.is_finite() => s.serialize_f64(*x),
        Some(x) if x.is_nan() => s.serialize_str("nan"),
        Some(x) if *x > 0.0 => s.serialize_str("inf"),
        Some(_) => s.serialize_str("-inf"),
    }
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LogLine {
    pub stage: u8,
    #[serde(flatten)]
    pub metrics: StepMetrics,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diversity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", serialize_with = "finite_or_tag")]
    pub sensitivity_ratio: Option<f64>,
}

fn stage_number(stage: Stage) -> u8 {
    match stage {
        Stage::One => 1,
        Stage::Two => 2,
    }
}

/// Generator, discriminator, optimizer state and dataset of a run.
pub struct Trainer {
    pub cfg: PipelineConfig,
    pub stage: Stage,
    pub g: GeneratorBundle,
    pub d: DiscriminatorBundle,
    pub opt: Optimizers,
    /// Number of completed steps.
    pub step: u64,
    pub items: Vec<TrainItem>,
}

const GENERATOR_DIR: &str = "generator";
const DISCRIMINATOR_DIR: &str = "discriminator";
const OPTIMIZER_DIR: &str = "optimizer";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const FINAL_DIR: &str = "final";

fn adam_to(ck: &mut Checkpoint, name: &str, a: &Adam) -> Result<()> {
    ck.put(format!("{name}/m"), vec![a.m.len().max(1)], if a.m.is_empty() { &[0.0] } else { &a.m })?;
    ck.put(format!("{name}/v"), vec![a.v.len().max(1)], if a.v.is_empty() { &[0.0] } else { &a.v })
}

fn adam_from(ck: &Checkpoint, name: &str, meta: &serde_json::Value, n: usize) -> Result<Adam> {
    let f = |k: &str| -> Result<f64> {
        meta[k]
            .as_f64()
            .ok_or_else(|| Error::Format(format!("optimizer manifest lacks {name}.{k}")))
    };
    let mut a = Adam::new(n, f("lr")?, f("beta1")?, f("beta2")?);
    a.eps = f("eps")?;
    a.step = meta["step"]
        .as_u64()
        .ok_or_else(|| Error::Format(format!("optimizer manifest lacks {name}.step")))?;
    a.m = ck.get_f64(&format!("{name}/m"), n.max(1))?;
    a.v = ck.get_f64(&format!("{name}/v"), n.max(1))?;
    a.m.truncate(n);
    a.v.truncate(n);
    Ok(a)
}

fn adam_meta(a: &Adam) -> serde_json::Value {
    json!({ "lr": a.lr, "beta1": a.beta1, "beta2": a.beta2, "eps": a.eps, "step": a.step })
}

/// Locates the checkpoint inside a run directory: the directory itself if it
/// holds a generator, otherwise its `final` subdirectory.
pub fn resolve_checkpoint(dir: &Path) -> PathBuf {
    if dir.join(GENERATOR_DIR).is_dir() {
        dir.to_path_buf()
    } else {
        dir.join(FINAL_DIR)
    }
}

pub fn load_bundles(dir: &Path) -> Result<(GeneratorBundle, DiscriminatorBundle)> {
    let dir = resolve_checkpoint(dir);
    let g = GeneratorBundle::from_checkpoint(&Checkpoint::load(dir.join(GENERATOR_DIR))?)?;
    let d = DiscriminatorBundle::from_checkpoint(&Checkpoint::load(dir.join(DISCRIMINATOR_DIR))?)?;
    Ok((g, d))
}

impl Trainer {
    /// Fresh Stage-1 run, or a Stage-2 run initialized from the Stage-1
    /// checkpoint and embedding cache named in the config.
    pub fn new(cfg: PipelineConfig, stage: Stage) -> Result<Self> {
        cfg.validate()?;
        let (g, d, embeddings) = match stage {
            Stage::One => {
                let init = RngStream::new(cfg.train.seed, RNG_INIT);
                (GeneratorBundle::new(&cfg.model, &init)?, DiscriminatorBundle::new(&cfg.model, &init)?, None)
            }
            Stage::Two => {
                let ck = cfg
                    .stage1_checkpoint
                    .as_ref()
                    .ok_or_else(|| Error::Config("stage 2 needs stage1_checkpoint".into()))?;
                let cache = cfg
                    .embedding_cache
                    .as_ref()
                    .ok_or_else(|| Error::Config("stage 2 needs embedding_cache".into()))?;
                if !resolve_checkpoint(ck).join(GENERATOR_DIR).is_dir() {
                    return Err(Error::Config(format!("stage-1 checkpoint not found at {}", ck.display())));
                }
                let emb = EmbeddingSet::load(cache)
                    .map_err(|e| Error::Config(format!("embedding cache {}: {e}", cache.display())))?;
                let (g, d) = load_bundles(ck)?;
                validate(g.cfg == cfg.model, || "stage-1 checkpoint model differs from the config".into())?;
                (g, d, Some(emb))
            }
        };
        Self::from_parts(cfg, stage, g, d, embeddings.as_ref())
    }

    /// Run from explicit networks and embeddings.
    pub fn from_parts(
        cfg: PipelineConfig,
        stage: Stage,
        g: GeneratorBundle,
        d: DiscriminatorBundle,
        embeddings: Option<&EmbeddingSet>,
    ) -> Result<Self> {
        cfg.validate()?;
        let items = build_dataset(&cfg, &g, embeddings)?;
        let opt = Optimizers::new(&g, &d, &cfg.train);
        Ok(Self {
            cfg,
            stage,
            g,
            d,
            opt,
            step: 0,
            items,
        })
    }

    /// Continues a run from a checkpoint written by [`Trainer::save`].
    pub fn resume(cfg: PipelineConfig, stage: Stage, dir: &Path) -> Result<Self> {
        cfg.validate()?;
        let dir = resolve_checkpoint(dir);
        let (g, d) = load_bundles(&dir)?;
        validate(g.cfg == cfg.model, || "checkpoint model differs from the config".into())?;
        let ock = Checkpoint::load(dir.join(OPTIMIZER_DIR))?;
        let saved_stage = ock.meta["stage"].as_u64().unwrap_or(0);
        validate(saved_stage == stage_number(stage) as u64, || {
            format!("checkpoint is from stage {saved_stage}, resuming stage {}", stage_number(stage))
        })?;
        let embeddings = match stage {
            Stage::One => None,
            Stage::Two => {
                let cache = cfg
                    .embedding_cache
                    .as_ref()
                    .ok_or_else(|| Error::Config("stage 2 needs embedding_cache".into()))?;
                Some(EmbeddingSet::load(cache)?)
            }
        };
        let mut t = Self::from_parts(cfg, stage, g, d, embeddings.as_ref())?;
        t.opt = Optimizers {
            g: adam_from(&ock, "g", &ock.meta["g"], t.g.num_params())?,
            d: adam_from(&ock, "d", &ock.meta["d"], t.d.num_params())?,
        };
        t.step = ock.meta["completed_steps"]
            .as_u64()
            .ok_or_else(|| Error::Format("optimizer manifest lacks completed_steps".into()))?;
        Ok(t)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.g.to_checkpoint()?.save(dir.join(GENERATOR_DIR))?;
        self.d.to_checkpoint()?.save(dir.join(DISCRIMINATOR_DIR))?;
        let mut ck = Checkpoint::new(json!({
            "kind": "optimizer",
            "stage": stage_number(self.stage),
            "completed_steps": self.step,
            "g": adam_meta(&self.opt.g),
            "d": adam_meta(&self.opt.d),
        }));
        adam_to(&mut ck, "g", &self.opt.g)?;
        adam_to(&mut ck, "d", &self.opt.d)?;
        ck.save(dir.join(OPTIMIZER_DIR))
    }

    pub fn step_once(&mut self) -> Result<StepMetrics> {
        let rng = RngStream::new(self.cfg.train.seed, RNG_STEPS);
        let m = gan_step(
            &mut self.g,
            &mut self.d,
            &mut self.opt,
            &self.items,
            &self.cfg.train,
            self.stage,
            self.step,
            &rng,
        )?;
        self.step += 1;
        Ok(m)
    }

    /// Strength used by the diagnostics: 0 in Stage 1, the configured α in Stage 2.
    pub fn eval_alpha(&self) -> f64 {
        match self.stage {
            Stage::One => 0.0,
            Stage::Two => self.cfg.train.reg.alpha,
        }
    }

    /// Diversity over latents and the r/z sensitivity ratio for dataset item
    /// `k` (its embedding, camera and geometry).
    pub fn diagnostics(&self, k: usize) -> Result<(f64, f64)> {
        let it = &self.items[k % self.items.len()];
        let alpha = self.eval_alpha();
        let rng = RngStream::new(self.cfg.train.seed, RNG_DIAG);
        let div = diversity(&self.g, &it.embedding, alpha, self.cfg.diversity_samples, &it.samples, &rng.substream(0))?;
        let z = draw_latent(self.g.cfg.z_dim, 0, &rng.substream(1));
        let probes = ProbeSpec::new(rng.substream(2)).with_probes(self.cfg.sensitivity_probes);
        let sens = bundle_sensitivity(&self.g, &z, &it.embedding, alpha, &it.samples, &probes)?;
        Ok((div, sens))
    }

    /// Trains until `steps` are complete, logging every step and writing
    /// checkpoints into `out` (`step_NNNNNN/` periodically, `final/` at the end).
    pub fn run(&mut self, out: &Path) -> Result<()> {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let log_path = out.join(METRICS_FILE);
        let mut log = OpenOptions::new()
            .create(true)
            .append(self.step > 0)
            .write(true)
            .truncate(self.step == 0)
            .open(&log_path)
            .map_err(|e| Error::io(&log_path, e))?;
        let total = self.cfg.train.steps as u64;
        while self.step < total {
            let metrics = self.step_once()?;
            let mut line = LogLine {
                stage: stage_number(self.stage),
                metrics,
                diversity: None,
                sensitivity_ratio: None,
            };
            let every = self.cfg.diagnostics_every as u64;
            if every > 0 && (self.step % every == 0 || self.step == total) {
                let (div, sens) = self.diagnostics(0)?;
                line.diversity = Some(div);
                line.sensitivity_ratio = Some(sens);
            }
            let text = serde_json::to_string(&line).map_err(|e| Error::Format(e.to_string()))?;
            writeln!(log, "{text}").map_err(|e| Error::io(&log_path, e))?;
            let ck_every = self.cfg.checkpoint_every as u64;
            if ck_every > 0 && self.step % ck_every == 0 && self.step < total {
                self.save(&out.join(format!("step_{:06}", self.step)))?;
            }
        }
        self.save(&out.join(FINAL_DIR))
    }
}

/// Runs (or resumes) a training stage, writing checkpoints and the metrics
/// log into `out`.
pub fn train_loop(cfg: &PipelineConfig, stage: Stage, out: &Path, resume: Option<&Path>) -> Result<Trainer> {
    let mut t = match resume {
        Some(dir) => Trainer::resume(cfg.clone(), stage, dir)?,
        None => Trainer::new(cfg.clone(), stage)?,
    };
    t.run(out)?;
    Ok(t)
}

/// Settings of the paired collapse experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CollapseConfig {
    pub pipeline: PipelineConfig,
    pub stage1_steps: usize,
    pub stage2_steps: usize,
    /// Jacobian weight of the regularized run; the other run uses 0.
    pub lambda_jac: f64,
    /// Embedding entries from the toy embedder; the rest is per-sample noise.
    pub clean_dim: usize,
    pub embed_seed: u64,
    pub eval_every: usize,
    /// Dataset embeddings averaged in each diversity measurement.
    pub eval_items: usize,
    /// Latents per sample-grid row.
    pub grid_latents: usize,
    pub time_budget_secs: f64,
}

impl Default for CollapseConfig {
    fn default() -> Self {
        let mut pipeline = PipelineConfig {
            dataset_size: 8,
            diagnostics_every: 0,
            diversity_samples: 8,
            ..PipelineConfig::default()
        };
        pipeline.train.seed = 1;
        Self {
            pipeline,
            stage1_steps: 1000,
            stage2_steps: 2000,
            lambda_jac: 0.01,
            clean_dim: 16,
            embed_seed: 7,
            eval_every: 250,
            eval_items: 8,
            grid_latents: 4,
            time_budget_secs: 900.0,
        }
    }
}

/// Diversity curves of the paired Stage-2 runs.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CollapseReport {
    pub steps: Vec<u64>,
    pub diversity_unregularized: Vec<f64>,
    pub diversity_regularized: Vec<f64>,
    pub stage1_diversity: f64,
    pub final_ratio: f64,
    #[serde(serialize_with = "finite_or_tag_plain")]
    pub sensitivity_unregularized: f64,
    #[serde(serialize_with = "finite_or_tag_plain")]
    pub sensitivity_regularized: f64,
    pub lambda_jac: f64,
    /// Stage-2 steps each run completed; short of the configured count only
    /// when the time budget ran out.
    pub completed_steps: u64,
    pub within_budget: bool,
    /// Wall-clock time; kept out of the JSON so reports stay reproducible.
    #[serde(skip)]
    pub elapsed_secs: f64,
}

fn finite_or_tag_plain<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    finite_or_tag(&Some(*v), s)
}

/// Mean diversity over the first `n` dataset embeddings.
fn mean_diversity(t: &Trainer, n: usize) -> Result<f64> {
    let n = n.clamp(1, t.items.len());
    let mut s = 0.0;
    for k in 0..n {
        let it = &t.items[k];
        let rng = RngStream::new(t.cfg.train.seed, RNG_DIAG).substream(k as u64);
        s += diversity(&t.g, &it.embedding, t.eval_alpha(), t.cfg.diversity_samples, &it.samples, &rng)?;
    }
    Ok(s / n as f64)
}

/// Grid of generated images: one row per dataset item, one column per latent.
pub fn sample_grid(t: &Trainer, rows: usize, cols: usize) -> Result<ImageBuffer> {
    let rng = RngStream::new(t.cfg.train.seed, RNG_DIAG).substream(1 << 20);
    let size = t.cfg.model.image_size;
    let mut tiles = Vec::new();
    for k in 0..rows.min(t.items.len()) {
        let it = &t.items[k];
        for c in 0..cols {
            let z = rng.substream(c as u64).gaussian_vec(t.g.cfg.z_dim);
            let img = t.g.generate(&z, &it.embedding, t.eval_alpha(), &it.samples)?;
            tiles.push(ImageBuffer::from_f64(size, size, t.cfg.model.feature_dim, &img)?);
        }
    }
    ImageBuffer::tile(&tiles, cols)
}

/// Output of [`collapse_demo`]: the report and one sample grid per run
/// (unregularized first).
pub struct CollapseOutcome {
    pub report: CollapseReport,
    pub grids: [ImageBuffer; 2],
}

/// Stage-1 pretraining followed by paired Stage-2 runs with λ_jac = 0 and
/// λ_jac = `cfg.lambda_jac` on per-sample-unique noisy embeddings.
pub fn collapse_demo(cfg: &CollapseConfig) -> Result<CollapseOutcome> {
    let start = Instant::now();
    let base = &cfg.pipeline;
    validate(cfg.clean_dim <= base.model.r_dim, || "clean_dim exceeds r_dim".into())?;
    validate(cfg.eval_every >= 1, || "eval_every must be at least 1".into())?;
    let noise_dim = base.model.r_dim - cfg.clean_dim;
    validate(noise_dim > 0, || "the collapse demo needs per-sample noise (clean_dim < r_dim)".into())?;

    let mut s1cfg = base.clone();
    s1cfg.train.steps = cfg.stage1_steps;
    let mut stage1 = Trainer::new(s1cfg, Stage::One)?;
    while stage1.step < cfg.stage1_steps as u64 {
        stage1.step_once()?;
    }
    let stage1_diversity = mean_diversity(&stage1, cfg.eval_items)?;
    let embeddings = oracle_embeddings(base, cfg.clean_dim, noise_dim, cfg.embed_seed)?;

    let mut runs = Vec::new();
    for lambda in [0.0, cfg.lambda_jac] {
        let mut c = base.clone();
        c.train.steps = cfg.stage2_steps;
        c.train.reg.lambda_jac = lambda;
        runs.push(Trainer::from_parts(c, Stage::Two, stage1.g.clone(), stage1.d.clone(), Some(&embeddings))?);
    }
    let mut steps = Vec::new();
    let mut curves = [Vec::new(), Vec::new()];
    let mut within_budget = true;
    while runs[0].step < cfg.stage2_steps as u64 {
        for r in runs.iter_mut() {
            r.step_once()?;
        }
        let s = runs[0].step;
        within_budget = start.elapsed().as_secs_f64() <= cfg.time_budget_secs;
        if s % cfg.eval_every as u64 == 0 || s == cfg.stage2_steps as u64 || !within_budget {
            steps.push(s);
            for (curve, r) in curves.iter_mut().zip(&runs) {
                curve.push(mean_diversity(r, cfg.eval_items)?);
            }
        }
        if !within_budget {
            break;
        }
    }
    if steps.is_empty() {
        steps.push(0);
        for (curve, r) in curves.iter_mut().zip(&runs) {
            curve.push(mean_diversity(r, cfg.eval_items)?);
        }
    }
    let last = |c: &Vec<f64>| *c.last().expect("at least one evaluation");
    let (du, dr) = (last(&curves[0]), last(&curves[1]));
    let final_ratio = if du > 0.0 { dr / du } else { f64::INFINITY };
    let sens: Vec<f64> = runs.iter().map(|r| r.diagnostics(0).map(|x| x.1)).collect::<Result<_>>()?;
    let grids = [
        sample_grid(&runs[0], cfg.eval_items, cfg.grid_latents)?,
        sample_grid(&runs[1], cfg.eval_items, cfg.grid_latents)?,
    ];
    let elapsed = start.elapsed().as_secs_f64();
    let [diversity_unregularized, diversity_regularized] = curves;
    Ok(CollapseOutcome {
        report: CollapseReport {
            steps,
            diversity_unregularized,
            diversity_regularized,
            stage1_diversity,
            final_ratio,
            sensitivity_unregularized: sens[0],
            sensitivity_regularized: sens[1],
            lambda_jac: cfg.lambda_jac,
            completed_steps: runs[0].step,
            within_budget,
            elapsed_secs: elapsed,
        },
        grids,
    })
}
