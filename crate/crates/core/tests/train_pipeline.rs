use std::fs;
use std::path::Path;

use tridef::assets::{Checkpoint, RngStream};
use tridef::canonical::EmbeddingSet;
use tridef::field::Parametric;
use tridef::geometry::MorphDims;
use tridef::train::*;
use tridef::Error;

fn tiny() -> PipelineConfig {
    let mut cfg = PipelineConfig {
        model: ModelConfig {
            z_dim: 6,
            w_dim: 5,
            r_dim: 4,
            mapping_hidden: 7,
            plane_resolution: 4,
            plane_channels: 2,
            decoder_hidden: 5,
            align_width: 6,
            align_blocks: 1,
            u_dim: 4,
            stem_widths: vec![3, 4],
            camera_hidden: 5,
            image_size: 8,
            n_samples: 6,
            ..ModelConfig::default()
        },
        scene: SceneConfig {
            resolution: 8,
            n_samples: 8,
            n_blobs: 6,
            ..SceneConfig::default()
        },
        morph: MorphSpec {
            seed: 3,
            subdivisions: 1,
            dims: MorphDims {
                shape: 2,
                pose: 3,
                expression: 2,
            },
        },
        dataset_size: 5,
        diagnostics_every: 2,
        diversity_samples: 3,
        sensitivity_probes: 2,
        ..PipelineConfig::default()
    };
    cfg.train.batch_size = 2;
    cfg.train.steps = 4;
    cfg.train.seed = 11;
    cfg
}

fn embeddings(cfg: &PipelineConfig, dir: &Path) {
    oracle_embeddings(cfg, 2, 2, 5).unwrap().save(dir).unwrap();
}

fn stage1(cfg: &PipelineConfig, out: &Path) -> Trainer {
    train_loop(cfg, Stage::One, out, None).unwrap()
}

#[test]
fn zero_steps_saves_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny();
    cfg.train.steps = 0;
    stage1(&cfg, dir.path());
    let (g, d) = load_bundles(dir.path()).unwrap();
    let init = RngStream::new(cfg.train.seed, 0);
    assert_eq!(g, GeneratorBundle::new(&cfg.model, &init).unwrap());
    assert_eq!(d, DiscriminatorBundle::new(&cfg.model, &init).unwrap());
    assert_eq!(fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap(), "");
}

#[test]
fn metrics_log_is_deterministic_and_complete() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = tiny();
    stage1(&cfg, a.path());
    stage1(&cfg, b.path());
    let la = fs::read(a.path().join(METRICS_FILE)).unwrap();
    assert_eq!(la, fs::read(b.path().join(METRICS_FILE)).unwrap());
    let lines: Vec<serde_json::Value> = String::from_utf8(la)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 4);
    for (k, l) in lines.iter().enumerate() {
        assert_eq!(l["step"], k as u64);
        for key in ["loss_d", "loss_g", "r1", "r_jac", "r_norm", "density"] {
            assert!(l[key].is_number(), "{key} missing");
        }
    }
    assert!(lines[1]["diversity"].is_number());
    assert!(lines[1].get("sensitivity_ratio").is_some());
    assert!(lines[0].get("diversity").is_none());
}

#[test]
fn resume_matches_uninterrupted_run() {
    let full = tempfile::tempdir().unwrap();
    let part = tempfile::tempdir().unwrap();
    let mut cfg = tiny();
    cfg.checkpoint_every = 2;
    stage1(&cfg, full.path());
    let mut short = cfg.clone();
    short.train.steps = 2;
    stage1(&short, part.path());
    let resumed = train_loop(&cfg, Stage::One, part.path(), Some(&part.path().join(FINAL_DIR))).unwrap();
    assert_eq!(resumed.step, 4);
    let (g1, d1) = load_bundles(full.path()).unwrap();
    let (g2, d2) = load_bundles(part.path()).unwrap();
    assert_eq!(g1, g2);
    assert_eq!(d1, d2);
    assert_eq!(
        fs::read(full.path().join(METRICS_FILE)).unwrap(),
        fs::read(part.path().join(METRICS_FILE)).unwrap()
    );
    assert!(full.path().join("step_000002").join("generator").is_dir());
}

#[test]
fn stage_two_requires_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny();
    let err = Trainer::new(cfg.clone(), Stage::Two).err().unwrap();
    assert!(matches!(err, Error::Config(_)), "{err}");
    cfg.stage1_checkpoint = Some(dir.path().join("missing"));
    cfg.embedding_cache = Some(dir.path().join("cache"));
    embeddings(&cfg, &dir.path().join("cache"));
    let err = Trainer::new(cfg.clone(), Stage::Two).err().unwrap();
    assert!(matches!(err, Error::Config(_)), "{err}");
    stage1(&tiny(), &dir.path().join("s1"));
    cfg.stage1_checkpoint = Some(dir.path().join("s1"));
    cfg.embedding_cache = Some(dir.path().join("nothing"));
    let err = Trainer::new(cfg.clone(), Stage::Two).err().unwrap();
    assert!(matches!(err, Error::Config(_)), "{err}");
}

#[test]
fn stage_two_starts_where_stage_one_ended() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny();
    let s1 = stage1(&cfg, &dir.path().join("s1"));
    embeddings(&cfg, &dir.path().join("cache"));
    cfg.stage1_checkpoint = Some(dir.path().join("s1"));
    cfg.embedding_cache = Some(dir.path().join("cache"));
    let s2 = Trainer::new(cfg.clone(), Stage::Two).unwrap();
    assert!(s2.g.align.is_zero_init() && s2.d.align.is_zero_init());
    for (k, it) in s2.items.iter().enumerate() {
        let z = RngStream::new(1, k as u64).gaussian_vec(cfg.model.z_dim);
        let conditional = s2.g.generate(&z, &it.embedding, 1.0, &it.samples).unwrap();
        let plain = s1.g.generate(&z, &it.embedding, 0.0, &s1.items[k].samples).unwrap();
        assert_eq!(conditional, plain);
    }
}

#[test]
fn stage_two_without_conditioning_follows_stage_one() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny();
    cfg.train.steps = 2;
    let s1 = stage1(&cfg, &dir.path().join("s1"));
    let set = oracle_embeddings(&cfg, 2, 2, 5).unwrap();

    let mut one = Trainer::from_parts(cfg.clone(), Stage::One, s1.g.clone(), s1.d.clone(), None).unwrap();
    let mut c2 = cfg.clone();
    c2.train.reg.alpha_dropout = 1.0;
    let mut two = Trainer::from_parts(c2, Stage::Two, s1.g.clone(), s1.d.clone(), Some(&set)).unwrap();
    for _ in 0..3 {
        let a = one.step_once().unwrap();
        let b = two.step_once().unwrap();
        assert_eq!(b.alpha, 0.0);
        assert_eq!(a, b);
    }
    assert_eq!(one.g.mapping, two.g.mapping);
    assert_eq!(one.g.synthesis, two.g.synthesis);
    assert_eq!(one.g.decoder, two.g.decoder);
    assert_eq!(one.g.flat_params(), two.g.flat_params());
}

#[test]
fn conditioned_training_stays_bounded() {
    let mut cfg = tiny();
    cfg.train.reg.alpha_dropout = 0.0;
    cfg.train.steps = 60;
    let dir = tempfile::tempdir().unwrap();
    let s1 = stage1(&tiny(), &dir.path().join("s1"));
    let set = oracle_embeddings(&cfg, 2, 2, 5).unwrap();
    let mut t = Trainer::from_parts(cfg, Stage::Two, s1.g, s1.d, Some(&set)).unwrap();
    // Zero-init makes the step-0 value exactly 0, so the reference is taken
    // after warm-up.
    let mut reference = None;
    for k in 0..60 {
        let m = t.step_once().unwrap();
        if k == 10 {
            assert!(m.r_jac > 0.0);
            reference = Some(m.r_jac);
        }
        if let Some(r0) = reference {
            assert!(m.r_jac <= 100.0 * r0, "step {k}: r_jac {} vs warm-up {r0}", m.r_jac);
        }
        if k >= 10 {
            assert!(m.r_norm.sqrt() < 0.5 * m.w_norm, "step {k}: {} vs {}", m.r_norm.sqrt(), m.w_norm);
        }
    }
}

#[test]
fn embedding_cache_round_trips_for_training() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny();
    let set = oracle_embeddings(&cfg, 2, 2, 5).unwrap();
    set.save(dir.path()).unwrap();
    let back = EmbeddingSet::load(dir.path()).unwrap();
    assert_eq!(back.ids, (0..5).collect::<Vec<u64>>());
    for k in 0..5 {
        let row = back.row(k);
        let noise: f64 = row[2..].iter().map(|v| v * v).sum();
        assert!((noise - 1.0).abs() < 1e-6);
        let clean: f64 = row[..2].iter().map(|v| v * v).sum();
        assert!((clean - 1.0).abs() < 1e-6);
    }
    assert!(oracle_embeddings(&cfg, 3, 2, 5).is_err());
}

#[test]
fn checkpoints_are_ntc_directories() {
    let dir = tempfile::tempdir().unwrap();
    stage1(&tiny(), dir.path());
    let ck = Checkpoint::load(dir.path().join(FINAL_DIR).join("generator")).unwrap();
    assert_eq!(ck.meta["kind"], "generator");
    assert!(dir.path().join(FINAL_DIR).join("optimizer").join("manifest.json").is_file());
}

fn tiny_collapse() -> CollapseConfig {
    let mut pipeline = tiny();
    pipeline.diagnostics_every = 0;
    CollapseConfig {
        pipeline,
        stage1_steps: 2,
        stage2_steps: 3,
        clean_dim: 2,
        eval_every: 2,
        eval_items: 2,
        grid_latents: 2,
        ..CollapseConfig::default()
    }
}

#[test]
fn collapse_demo_without_training_has_unit_ratio() {
    let cfg = CollapseConfig {
        stage2_steps: 0,
        ..tiny_collapse()
    };
    let r = collapse_demo(&cfg).unwrap().report;
    assert_eq!(r.steps, vec![0]);
    assert_eq!(r.diversity_unregularized, r.diversity_regularized);
    assert_eq!(r.final_ratio, 1.0);
}

#[test]
fn collapse_demo_is_deterministic() {
    let a = collapse_demo(&tiny_collapse()).unwrap();
    let b = collapse_demo(&tiny_collapse()).unwrap();
    assert_eq!(a.report.steps, vec![2, 3]);
    assert_eq!(a.report.completed_steps, 3);
    assert!(a.report.within_budget);
    assert_eq!(serde_json::to_string(&a.report).unwrap(), serde_json::to_string(&b.report).unwrap());
    assert_eq!(a.grids[0], b.grids[0]);
    assert_eq!(a.grids[1], b.grids[1]);
    assert_eq!(a.grids[0].width, 2 * 8);
}

#[test]
fn collapse_demo_over_budget_reports_partial_curves() {
    let cfg = CollapseConfig {
        time_budget_secs: 0.0,
        ..tiny_collapse()
    };
    let r = collapse_demo(&cfg).unwrap().report;
    assert!(!r.within_budget);
    assert_eq!(r.completed_steps, 1);
    assert_eq!(r.steps, vec![1]);
    assert!(r.final_ratio.is_finite());
}
