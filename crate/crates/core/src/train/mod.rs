//! Desk-scale adversarial training: a synthetic blob-scene dataset, generator
//! and discriminator bundles, the alternating update with R1, alignment and
//! density regularizers, checkpointed training loops and collapse diagnostics.

mod adam;
mod conv;
mod diagnostics;
mod discriminator;
mod generator;
mod model;
mod pipeline;
mod scene;
mod step;

pub use adam::Adam;
pub use conv::{Conv2d, ConvStem, StemTrace};
pub use diagnostics::{bundle_sensitivity, diversity, diversity_fn, diversity_latents, mean_pairwise_distance, sensitivity_ratio};
pub use discriminator::{DiscTrace, DiscriminatorBundle, CAMERA_CONDITION_DIM, INPUT_CHANNELS};
pub use generator::{GenAdjoint, GenGradView, GenTrace, GeneratorBundle};
pub use model::ModelConfig;
pub use pipeline::{
    build_dataset, build_sampler, canonize, collapse_demo, load_bundles, oracle_embeddings, resolve_checkpoint,
    sample_grid, train_loop, CanonizeConfig, CanonizedRecord, CollapseConfig, CollapseOutcome, CollapseReport, LogLine,
    MorphSpec, PipelineConfig, Trainer, FINAL_DIR, METRICS_FILE,
};
pub use scene::{sample_scene, Appearance, BlobScene, SceneConfig, SceneRecord, SceneSampler};
pub use step::{
    density_reg, density_reg_backward, density_reg_fn, draw_alpha, draw_batch, draw_latent, gan_step, r1_penalty,
    Optimizers, Stage, StepMetrics, TrainConfig, TrainItem,
};
