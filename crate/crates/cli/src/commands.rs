use std::fs;
use std::path::{Path, PathBuf};

use a3gn::data::{load_image_dir, load_images, make_eval_pairs, save_image, synth_faces, write_dataset, IdentityDataset, PairingMode, TargetSet};
use a3gn::evaluation::{cosine_similarity, evaluate_attack, write_csv, Attack, AttackReport, EvalConfig, GeneratorAttack, IdentityAttack};
use a3gn::losses::LossWeights;
use a3gn::models::{
    train_reference_embedder, Ablation, Checkpoint, Embedder, EmbedderConfig, EmbedderTrainConfig, EncoderMode, InstanceDiscriminator,
    LatentCode, Mode, ModelConfig,
};
use a3gn::training::{load_checkpoint_dir, stored_config, train as run_training, TrainConfig, TrainData, TrainOptions, TrainState};
use a3gn::{Error, Tensor};
use log::info;
use serde_json::json;

use crate::config::RunConfig;
use crate::CliError;

pub const EMBEDDER_FILE: &str = "embedder.a3gn";
pub const SUMMARY_FILE: &str = "summary.json";
pub const MANIFEST_FILE: &str = "manifest.csv";
const IDENTITY_CHECKPOINT: &str = "identity";

pub const EMBED_TRAIN_KEYS: &[(&str, &str)] = &[
    ("out", ""),
    ("seed", "7"),
    ("data", ""),
    ("synth", "false"),
    ("synth_seed", "1"),
    ("synth_identities", "10"),
    ("synth_per_identity", "50"),
    ("image_size", "32"),
    ("arch", "desk"),
    ("epochs", "24"),
    ("batch_size", "32"),
    ("lr", "0.001"),
    ("logit_scale", "16"),
    ("holdout_per_identity", "10"),
];

pub const TRAIN_KEYS: &[(&str, &str)] = &[
    ("out", ""),
    ("seed", "3"),
    ("embedder", ""),
    ("data", ""),
    ("target", ""),
    ("target_count", "7"),
    ("pool_per_identity", "0"),
    ("iters", "5000"),
    ("batch_size", "16"),
    ("lr", "0.0001"),
    ("adam_beta1", "0.5"),
    ("adam_beta2", "0.999"),
    ("n_critic", "5"),
    ("lambda_rec", "10"),
    ("lambda_cos", "10"),
    ("lambda_gp", "10"),
    ("lambda_kl", "0"),
    ("model", "desk"),
    ("gen_base", ""),
    ("gen_res_blocks", ""),
    ("geometric_attention", "true"),
    ("channel_attention", "true"),
    ("checkpoint_every", "0"),
    ("resume", ""),
    ("stop_at", "0"),
];

pub const ATTACK_KEYS: &[(&str, &str)] = &[
    ("out", ""),
    ("checkpoint", ""),
    ("embedder", ""),
    ("target", ""),
    ("target_count", "7"),
    ("probes", ""),
    ("batch_size", "16"),
];

pub const EVALUATE_KEYS: &[(&str, &str)] = &[
    ("out", ""),
    ("checkpoint", ""),
    ("embedder", ""),
    ("blackbox_embedder", ""),
    ("target", ""),
    ("target_count", "7"),
    ("probes", ""),
    ("max_probes", "0"),
    ("protocol", "both"),
    ("match_threshold", "0.45"),
    ("ssim_threshold", "0.9"),
    ("exclude_target", "true"),
    ("batch_size", "16"),
    ("label", ""),
];

fn write_json(path: &Path, v: &serde_json::Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(v).map_err(Error::from)?;
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    Ok(())
}

fn load_embedder(path: &Path, mode: Mode) -> Result<InstanceDiscriminator<f32>, CliError> {
    if !path.is_file() {
        return Err(Error::Config(format!("embedder checkpoint {} not found", path.display())).into());
    }
    let c = Checkpoint::<f32>::load(path)?;
    Ok(InstanceDiscriminator::new(Embedder::from_checkpoint(&c)?, mode))
}

fn load_target(dir: &Path, image_size: usize, count: usize) -> Result<TargetSet, CliError> {
    let images: Vec<Tensor<f32>> = load_image_dir(dir, image_size)?.into_iter().map(|(_, t)| t).collect();
    let name = dir.file_name().unwrap_or_default().to_string_lossy().into_owned();
    Ok(TargetSet::from_images(&name, images, count)?)
}

pub fn embed_train(cfg: &RunConfig) -> Result<(), CliError> {
    let out = cfg.path("out")?;
    let size = cfg.usize("image_size")?;
    let ds = if cfg.bool("synth")? {
        let s = synth_faces(cfg.u64("synth_seed")?, cfg.usize("synth_identities")?, cfg.usize("synth_per_identity")?, size)?;
        // later commands read the same images from disk
        write_dataset(&s.dataset, &out.join("data"), "")?;
        s.dataset
    } else {
        let dir = cfg
            .opt_path("data")
            .ok_or_else(|| CliError::Usage("embed-train needs --data <dir> or --synth true".into()))?;
        load_images(&dir, size)?
    };
    let mut arch = match cfg.str("arch").as_str() {
        "desk" => EmbedderConfig::desk(),
        "transfer" => EmbedderConfig::desk_transfer(),
        a => return Err(CliError::Usage(format!("arch must be desk or transfer, got {a:?}"))),
    };
    arch.image_size = size;
    let tcfg = EmbedderTrainConfig {
        seed: cfg.u64("seed")?,
        epochs: cfg.usize("epochs")?,
        batch_size: cfg.usize("batch_size")?,
        lr: cfg.f64("lr")?,
        logit_scale: cfg.f64("logit_scale")?,
        holdout_per_identity: cfg.usize("holdout_per_identity")?,
    };
    cfg.echo(&out)?;
    info!("training {} embedder on {} images of {} identities", cfg.str("arch"), ds.len(), ds.num_identities());
    let (d2, summary) = train_reference_embedder(&ds, &arch, &tcfg)?;
    d2.embedder.to_checkpoint(tcfg.seed)?.save(&out.join(EMBEDDER_FILE))?;
    let v = serde_json::to_value(&summary).map_err(Error::from)?;
    write_json(&out.join(SUMMARY_FILE), &v)?;
    println!("{}", serde_json::to_string(&v).map_err(Error::from)?);
    Ok(())
}

fn train_config(cfg: &RunConfig) -> Result<TrainConfig, CliError> {
    let mut model = match cfg.str("model").as_str() {
        "desk" => ModelConfig::desk(),
        "full" => ModelConfig::full(),
        m => return Err(CliError::Usage(format!("model must be desk or full, got {m:?}"))),
    };
    if let Some(v) = cfg.opt_usize("gen_base")? {
        model.gen_base = v;
    }
    if let Some(v) = cfg.opt_usize("gen_res_blocks")? {
        model.gen_res_blocks = v;
    }
    model.ablation = Ablation { geometric_attention: cfg.bool("geometric_attention")?, channel_attention: cfg.bool("channel_attention")? };
    let every = cfg.u64("checkpoint_every")?;
    let t = TrainConfig {
        total_iters: cfg.u64("iters")?,
        batch_size: cfg.usize("batch_size")?,
        lr0: cfg.f64("lr")?,
        adam_beta1: cfg.f64("adam_beta1")?,
        adam_beta2: cfg.f64("adam_beta2")?,
        n_critic: cfg.usize("n_critic")?,
        weights: LossWeights {
            lambda_rec: cfg.f64("lambda_rec")?,
            lambda_cos: cfg.f64("lambda_cos")?,
            lambda_gp: cfg.f64("lambda_gp")?,
            lambda_kl: cfg.f64("lambda_kl")?,
        },
        model,
        seed: cfg.u64("seed")?,
        checkpoint_every: (every > 0).then_some(every),
    };
    t.validate()?;
    Ok(t)
}

pub fn train(cfg: &RunConfig) -> Result<(), CliError> {
    let out = cfg.path("out")?;
    let tcfg = train_config(cfg)?;
    let d2 = load_embedder(&cfg.path("embedder")?, Mode::WhiteBox)?;
    let size = d2.embedder.config.image_size;
    if size != tcfg.model.image_size {
        return Err(Error::Config(format!("embedder takes {size}×{size} images, model expects {0}×{0}", tcfg.model.image_size)).into());
    }
    let target = load_target(&cfg.path("target")?, size, cfg.usize("target_count")?)?;
    let all = load_images(&cfg.path("data")?, size)?;
    let per = cfg.usize("pool_per_identity")?;
    let pool: IdentityDataset = all.filter(|l, i| all.identities[l] != target.name && (per == 0 || i < per));
    if pool.is_empty() {
        return Err(Error::Config("no training images besides the target identity".into()).into());
    }
    let data = TrainData::new(&pool, &target)?;
    cfg.echo(&out)?;
    info!(
        "training {} variant for {} cycles on {} images, target {:?} ({} images), config {}",
        tcfg.model.ablation.label(),
        tcfg.total_iters,
        pool.len(),
        target.name,
        target.count(),
        &tcfg.hash()[..12]
    );
    let summary = |s: &TrainState<f32>| -> a3gn::Result<serde_json::Value> {
        let last = s.trace.last();
        Ok(json!({ "variant": tcfg.model.ablation.label(), "final": last.map(|r| r.values().to_vec()) }))
    };
    let stop = cfg.u64("stop_at")?;
    let opts = TrainOptions {
        out_dir: Some(out.clone()),
        resume: cfg.opt_path("resume"),
        stop_at: (stop > 0).then_some(stop),
        summary: Some(&summary),
    };
    let outcome = run_training(&tcfg, &data, &d2, &opts)?;
    for c in &outcome.checkpoints {
        println!("{}", c.display());
    }
    Ok(())
}

/// The attack named by `checkpoint`: a trained run directory, or `identity` for a no-op.
struct LoadedAttack {
    state: Option<TrainState<f32>>,
    z: LatentCode<f32>,
    label: String,
}

impl LoadedAttack {
    fn load(cfg: &RunConfig, target: &TargetSet) -> Result<Self, CliError> {
        let ck = cfg.path("checkpoint")?;
        if ck.as_os_str() == IDENTITY_CHECKPOINT {
            return Ok(Self { state: None, z: LatentCode::zeros(), label: "identity".into() });
        }
        let tcfg = stored_config(&ck)?;
        let state: TrainState<f32> = load_checkpoint_dir(&ck, &tcfg)?;
        let mut rng = a3gn::nn_core::seeded_rng(tcfg.seed);
        let z = state.encoder.encode_target(&target.images, EncoderMode::Inference, &mut rng)?;
        Ok(Self { state: Some(state), z, label: tcfg.model.ablation.label().to_string() })
    }

    fn attack(&self) -> Box<dyn Attack + '_> {
        match &self.state {
            Some(s) => Box::new(GeneratorAttack { g1: &s.g1, z: &self.z }),
            None => Box::new(IdentityAttack),
        }
    }
}

pub fn attack(cfg: &RunConfig) -> Result<(), CliError> {
    let out = cfg.path("out")?;
    let d2 = load_embedder(&cfg.path("embedder")?, Mode::WhiteBox)?;
    let size = d2.embedder.config.image_size;
    let target = load_target(&cfg.path("target")?, size, cfg.usize("target_count")?)?;
    let probes = load_images(&cfg.path("probes")?, size)?;
    let loaded = LoadedAttack::load(cfg, &target)?;
    let attack = loaded.attack();
    cfg.echo(&out)?;
    let te = d2.embed(target.canonical_image())?.remove(0);
    let idx: Vec<usize> = (0..probes.len()).collect();
    let mut rows = Vec::with_capacity(probes.len());
    for chunk in idx.chunks(cfg.usize("batch_size")?.max(1)) {
        let batch = probes.batch(chunk)?;
        let adv = attack.perturb(&batch)?;
        let before = d2.embed(&batch)?;
        let after = d2.embed(&adv)?;
        for (j, &i) in chunk.iter().enumerate() {
            let it = &probes.items[i];
            let stem = it.path.file_stem().unwrap_or_default().to_string_lossy();
            let dst = out.join(&probes.identities[it.label]).join(format!("{stem}_adv.png"));
            let img = adv.sample(j).reshape(&adv.shape()[1..])?;
            save_image(&img, &dst)?;
            rows.push(vec![
                it.path.display().to_string(),
                dst.display().to_string(),
                cosine_similarity(&before[j], &te)?.to_string(),
                cosine_similarity(&after[j], &te)?.to_string(),
            ]);
        }
    }
    write_csv(&out.join(MANIFEST_FILE), &["probe", "adv", "sim_before", "sim_after"], &rows)?;
    info!("wrote {} adversarial images ({}) to {}", rows.len(), loaded.label, out.display());
    Ok(())
}

fn protocols(v: &str) -> Result<Vec<PairingMode>, CliError> {
    match v {
        "both" => Ok(vec![PairingMode::SameImage, PairingMode::OtherImage]),
        "A->A" | "same" => Ok(vec![PairingMode::SameImage]),
        "A->A'" | "other" => Ok(vec![PairingMode::OtherImage]),
        _ => Err(CliError::Usage(format!("protocol must be A->A, A->A', same, other or both, got {v:?}"))),
    }
}

/// File stem for one report, e.g. `white-box_same`.
pub fn report_stem(mode: Mode, protocol: PairingMode) -> String {
    let p = match protocol {
        PairingMode::SameImage => "same",
        PairingMode::OtherImage => "other",
    };
    format!("{}_{p}", mode.label())
}

pub fn evaluate(cfg: &RunConfig) -> Result<(), CliError> {
    let out = cfg.path("out")?;
    let protos = protocols(&cfg.str("protocol"))?;
    let mut embedders = vec![load_embedder(&cfg.path("embedder")?, Mode::WhiteBox)?];
    if let Some(p) = cfg.opt_path("blackbox_embedder") {
        embedders.push(load_embedder(&p, Mode::BlackBox)?);
    }
    let size = embedders[0].embedder.config.image_size;
    if embedders.iter().any(|d| d.embedder.config.image_size != size) {
        return Err(Error::Config("embedders disagree on image size".into()).into());
    }
    let target = load_target(&cfg.path("target")?, size, cfg.usize("target_count")?)?;
    let mut probes = load_images(&cfg.path("probes")?, size)?;
    let max = cfg.usize("max_probes")?;
    if max > 0 {
        probes = probes.take(max);
    }
    let loaded = LoadedAttack::load(cfg, &target)?;
    let attack = loaded.attack();
    let label = match cfg.str("label") {
        s if s.is_empty() => loaded.label.clone(),
        s => s,
    };
    cfg.echo(&out)?;
    let mut reports: Vec<AttackReport> = Vec::new();
    for proto in protos {
        let pairs = make_eval_pairs(&probes, &target, proto, cfg.bool("exclude_target")?)?;
        for d2 in &embedders {
            let ecfg = EvalConfig {
                match_threshold: cfg.f64("match_threshold")?,
                ssim_threshold: cfg.f64("ssim_threshold")?,
                protocol: proto,
                label: label.clone(),
                batch_size: cfg.usize("batch_size")?,
            };
            let (report, _) = evaluate_attack(attack.as_ref(), d2, &pairs, &ecfg)?;
            let bad = report.invariant_violations();
            if !bad.is_empty() {
                return Err(Error::Numerical(format!("report violates its invariants: {}", bad.join("; "))).into());
            }
            let stem = report_stem(d2.mode, proto);
            report.write(&out, &stem)?;
            info!(
                "{stem}: real_acc {:.3} fake_acc {:.3} mAP {:.3} sim {:.3} -> {:.3} ssim_rate {:.3}",
                report.real_acc, report.fake_acc, report.map, report.sim_before, report.sim_after, report.ssim_rate
            );
            reports.push(report);
        }
    }
    let rows: Vec<Vec<String>> = reports.iter().map(|r| r.csv_row()).collect();
    write_csv(&out.join("reports.csv"), &AttackReport::csv_header(), &rows)?;
    let paths: Vec<PathBuf> = reports.iter().map(|r| out.join(format!("{}.json", report_stem(r.mode, r.protocol)))).collect();
    for p in paths {
        println!("{}", p.display());
    }
    Ok(())
}
