//! The eight pipeline stages. Each reads upstream artifacts from the output
//! directory, replaces its own subdirectory and records a manifest.

use std::fs;
use std::path::{Path, PathBuf};

use ocda_core::color::{self, StyleDescriptor, StyleTriple, MATCH_LEVELS};
use ocda_core::mixing::{self, Provenance};
use ocda_core::net::{self, NetworkParams};
use ocda_core::pipeline::{self, EvalReport, LossRecord, StudentInit, Teacher, TeacherEnsemble, TeacherRun, TrainConfig};
use ocda_core::purify::{self, PurifiedSubdomain};
use ocda_core::rng::{self, tag};
use ocda_core::separate::{self, SubdomainPartition};
use ocda_core::synth::{self, Profile, SceneSpec};
use ocda_core::{LabelMap, Sample};
use rand::Rng;

use crate::checkpoint::{self, Checkpoint, RngState};
use crate::config::{RunConfig, StudentInitName};
use crate::error::{CliError, StageContext};
use crate::io::{self, io_err};
use crate::manifest::{self, Manifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Stage {
    Synth,
    Separate,
    Purify,
    Mix,
    Train,
    Distill,
    Update,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 8] =
        [Stage::Synth, Stage::Separate, Stage::Purify, Stage::Mix, Stage::Train, Stage::Distill, Stage::Update, Stage::Eval];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Separate => "separate",
            Stage::Purify => "purify",
            Stage::Mix => "mix",
            Stage::Train => "train",
            Stage::Distill => "distill",
            Stage::Update => "update",
            Stage::Eval => "eval",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ran,
    UpToDate,
}

pub struct Context {
    pub cfg: RunConfig,
    pub out: PathBuf,
    pub train: TrainConfig,
}

impl Context {
    pub fn new(cfg: RunConfig) -> Self {
        let out = cfg.paths.out_dir.clone();
        let train = cfg.train_config();
        Self { cfg, out, train }
    }

    fn dir(&self, stage: Stage) -> PathBuf {
        self.out.join(stage.name())
    }

    fn synth_dir(&self) -> PathBuf {
        self.dir(Stage::Synth)
    }

    fn source_dir(&self) -> PathBuf {
        self.cfg.paths.source_dir.clone().unwrap_or_else(|| self.synth_dir().join("source"))
    }

    fn target_dir(&self) -> PathBuf {
        self.cfg.paths.target_dir.clone().unwrap_or_else(|| self.synth_dir().join("target"))
    }

    fn open_dir(&self) -> PathBuf {
        self.cfg.paths.open_dir.clone().unwrap_or_else(|| self.synth_dir().join("open"))
    }

    fn open_label_dir(&self) -> PathBuf {
        match &self.cfg.paths.open_dir {
            Some(d) => d.join("labels"),
            None => self.synth_dir().join("eval-only").join("open").join("labels"),
        }
    }

    fn validation_dir(&self) -> PathBuf {
        self.cfg.paths.validation_dir.clone().unwrap_or_else(|| self.synth_dir().join("eval-only").join("validation"))
    }

    /// Digest of the configuration without the output directory.
    fn config_digest(&self) -> String {
        let mut c = self.cfg.clone();
        c.paths.out_dir = PathBuf::new();
        manifest::sha256_bytes(c.to_toml().as_bytes())
    }

    fn styles_dir(&self) -> PathBuf {
        self.dir(Stage::Purify).join("styles")
    }

    fn style_path(&self, m: usize) -> PathBuf {
        self.styles_dir().join(format!("subdomain_{}.csv", m + 1))
    }

    fn teacher_path(&self, m: usize) -> PathBuf {
        self.dir(Stage::Train).join(format!("teacher_{}.ckpt", m + 1))
    }

    fn student_path(&self) -> PathBuf {
        self.dir(Stage::Distill).join("student.ckpt")
    }

    fn online_path(&self) -> PathBuf {
        self.dir(Stage::Update).join("student_online.ckpt")
    }
}

fn files_under(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut out = Vec::new();
    if !dir.exists() {
        return Ok(out);
    }
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).map_err(|e| io_err(&d, e))? {
            let p = entry.map_err(|e| io_err(&d, e))?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|n| n != manifest::FILE_NAME) {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

fn require(path: PathBuf) -> Result<PathBuf, CliError> {
    if path.exists() {
        Ok(path)
    } else {
        Err(CliError::MissingArtifact(path))
    }
}

fn require_images(dir: PathBuf) -> Result<Vec<PathBuf>, CliError> {
    let images = require(dir.join("images"))?;
    let files = files_under(&images)?;
    if files.is_empty() {
        return Err(CliError::MissingArtifact(images));
    }
    Ok(files)
}

fn require_samples(dir: PathBuf) -> Result<Vec<PathBuf>, CliError> {
    let mut files = require_images(dir.clone())?;
    files.extend(files_under(&require(dir.join("labels"))?)?);
    Ok(files)
}

/// Number of subdomains recorded by the purify stage.
fn subdomain_count(ctx: &Context) -> Result<usize, CliError> {
    let dir = require(ctx.styles_dir())?;
    let n = files_under(&dir)?.len();
    if n == 0 {
        return Err(CliError::MissingArtifact(ctx.style_path(0)));
    }
    Ok(n)
}

fn stage_inputs(ctx: &Context, stage: Stage) -> Result<Vec<PathBuf>, CliError> {
    Ok(match stage {
        Stage::Synth => Vec::new(),
        Stage::Separate => require_images(ctx.target_dir())?,
        Stage::Purify => {
            let mut v = require_images(ctx.target_dir())?;
            v.push(require(ctx.dir(Stage::Separate).join("partition.csv"))?);
            v
        }
        Stage::Mix | Stage::Train => {
            let mut v = require_samples(ctx.source_dir())?;
            let k = subdomain_count(ctx)?;
            for m in 0..k {
                v.push(require(ctx.style_path(m))?);
                let dir = require(ctx.dir(Stage::Purify).join(format!("subdomain_{}", m + 1)))?;
                v.extend(files_under(&dir)?);
            }
            v
        }
        Stage::Distill => {
            let mut v = require_images(ctx.target_dir())?;
            for m in 0..subdomain_count(ctx)? {
                v.push(require(ctx.teacher_path(m))?);
                v.push(require(ctx.style_path(m))?);
            }
            if ctx.cfg.distill.student_init == StudentInitName::BestTeacher {
                v.extend(require_samples(ctx.validation_dir())?);
            }
            v
        }
        Stage::Update => {
            let mut v = vec![require(ctx.student_path())?];
            for m in 0..subdomain_count(ctx)? {
                v.push(require(ctx.style_path(m))?);
            }
            if ctx.cfg.online.enabled {
                v.extend(require_images(ctx.open_dir())?);
            }
            v
        }
        Stage::Eval => {
            let mut v = vec![require(ctx.student_path())?];
            v.extend(require_samples(ctx.validation_dir())?);
            v.extend(require_images(ctx.open_dir())?);
            v.extend(files_under(&require(ctx.open_label_dir())?)?);
            for m in 0..subdomain_count(ctx)? {
                v.push(require(ctx.teacher_path(m))?);
            }
            v.extend(files_under(&ctx.dir(Stage::Update))?);
            for name in ["source_only.ckpt", "single_model.ckpt"] {
                let p = ctx.dir(Stage::Train).join(name);
                if p.is_file() {
                    v.push(p);
                }
            }
            v
        }
    })
}

/// Runs one stage unless its manifest shows identical inputs and intact outputs.
pub fn run_stage(ctx: &Context, stage: Stage) -> Result<Outcome, CliError> {
    let inputs = stage_inputs(ctx, stage)?;
    let input_entries = manifest::entries(&ctx.out, &inputs)?;
    let config_sha256 = ctx.config_digest();
    if let Some(old) = manifest::read(&ctx.out, stage.name())? {
        if old.seed == ctx.cfg.seed
            && old.config_sha256 == config_sha256
            && old.inputs == input_entries
            && manifest::outputs_intact(&ctx.out, &old)
        {
            return Ok(Outcome::UpToDate);
        }
    }
    let dir = ctx.dir(stage);
    if dir.exists() {
        fs::remove_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    }
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    match stage {
        Stage::Synth => synth_stage(ctx)?,
        Stage::Separate => separate_stage(ctx)?,
        Stage::Purify => purify_stage(ctx)?,
        Stage::Mix => mix_stage(ctx)?,
        Stage::Train => train_stage(ctx)?,
        Stage::Distill => distill_stage(ctx)?,
        Stage::Update => update_stage(ctx)?,
        Stage::Eval => eval_stage(ctx)?,
    }
    let outputs = manifest::entries(&ctx.out, &files_under(&dir)?)?;
    let m = Manifest {
        stage: stage.name().into(),
        seed: ctx.cfg.seed,
        config_sha256,
        inputs: input_entries,
        outputs,
    };
    manifest::write(&ctx.out, &m)?;
    Ok(Outcome::Ran)
}

pub fn scene_spec(cfg: &RunConfig) -> SceneSpec {
    SceneSpec { width: cfg.data.width, height: cfg.data.height, classes: cfg.data.classes, ..SceneSpec::default() }
}

fn ids_csv(path: &Path, names: &[String], ids: &[usize]) -> Result<(), CliError> {
    io::write_csv(
        path,
        &["image_path", "subdomain_index"],
        names.iter().zip(ids).map(|(n, &m)| [format!("images/{n}"), (m + 1).to_string()]),
    )
}

fn synth_stage(ctx: &Context) -> Result<(), CliError> {
    const S: &str = "synth";
    let d = &ctx.cfg.data;
    let spec = scene_spec(&ctx.cfg);
    let seed = |i| rng::derive_seed(ctx.cfg.seed, tag::SYNTH, i);
    let root = ctx.synth_dir();
    let hidden = root.join("eval-only");
    let source = synth::generate_source(&spec, d.n_source, seed(0)).stage(S)?;
    io::write_samples(&root.join("source"), &source)?;

    let target = synth::generate_compound_target(&spec, d.k_true, d.n_target, seed(1)).stage(S)?;
    let names: Vec<String> = (0..target.images.len()).map(io::image_name).collect();
    for (n, img) in names.iter().zip(&target.images) {
        io::write_png(&root.join("target/images").join(n), img)?;
    }
    for (n, l) in names.iter().zip(&target.hidden.labels) {
        io::write_label_png(&hidden.join("target/labels").join(n), l)?;
    }
    ids_csv(&hidden.join("target/subdomains.csv"), &names, &target.hidden.subdomains)?;

    let val = synth::generate_compound_target(&spec, d.k_true, d.n_validation.max(d.k_true), seed(2)).stage(S)?;
    io::write_samples(&hidden.join("validation"), &val.labeled())?;
    let val_names: Vec<String> = (0..val.images.len()).map(io::image_name).collect();
    ids_csv(&hidden.join("validation/subdomains.csv"), &val_names, &val.hidden.subdomains)?;

    let open = synth::generate_open(&spec, d.n_open, seed(3)).stage(S)?;
    for (i, (img, l)) in open.images.iter().zip(&open.hidden_labels).enumerate() {
        io::write_png(&root.join("open/images").join(io::image_name(i)), img)?;
        io::write_label_png(&hidden.join("open/labels").join(io::image_name(i)), l)?;
    }
    let profiles: Vec<&Profile> = spec.compound[..d.k_true].iter().chain([&spec.open]).collect();
    io::write_csv(
        &hidden.join("profiles.csv"),
        &["subdomain_index", "name", "l_gain", "l_offset", "a_gain", "a_offset", "b_gain", "b_offset", "noise"],
        profiles.iter().enumerate().map(|(i, p)| {
            let idx = if i < d.k_true { (i + 1).to_string() } else { "open".into() };
            [
                idx,
                p.name.clone(),
                p.l_gain.to_string(),
                p.l_offset.to_string(),
                p.a_gain.to_string(),
                p.a_offset.to_string(),
                p.b_gain.to_string(),
                p.b_offset.to_string(),
                p.noise.to_string(),
            ]
        }),
    )
}

fn separate_stage(ctx: &Context) -> Result<(), CliError> {
    const S: &str = "separate";
    let (names, images) = io::read_images(&ctx.target_dir())?;
    let bins = ctx.cfg.separate.bins;
    let descs: Vec<StyleDescriptor> = images.iter().map(|i| color::style_descriptor(i, bins)).collect();
    let (lo, hi) = separate::default_k_range(images.len());
    let k_min = ctx.cfg.separate.k_min.unwrap_or(lo);
    let k_max = ctx.cfg.separate.k_max.unwrap_or(hi).min(images.len().saturating_sub(1));
    let sep = separate::auto_separate(&descs, k_min, k_max, ctx.cfg.seed).stage(S)?;
    let dir = ctx.dir(Stage::Separate);
    io::write_csv(
        &dir.join("descriptors.csv"),
        &["image_path", "channel", "bin_index", "value"],
        names.iter().zip(&descs).flat_map(|(n, d)| {
            d.as_slice().iter().enumerate().map(move |(i, v)| {
                let ch = color::Channel::ALL[i / bins].name();
                [format!("images/{n}"), ch.to_string(), (i % bins).to_string(), v.to_string()]
            })
        }),
    )?;
    ids_csv(&dir.join("partition.csv"), &names, sep.partition.assignment())?;
    io::write_csv(
        &dir.join("sc_curve.csv"),
        &["k", "sc", "sc_mean"],
        sep.curve.iter().map(|p| [p.k.to_string(), p.score.to_string(), p.mean.to_string()]),
    )?;
    println!("separate: k* = {}", sep.partition.k());
    Ok(())
}

fn read_partition(ctx: &Context, names: &[String]) -> Result<SubdomainPartition, CliError> {
    let path = ctx.dir(Stage::Separate).join("partition.csv");
    let rows = io::read_csv(&path, &["image_path", "subdomain_index"])?;
    if rows.len() != names.len() {
        return Err(io_err(&path, format!("{} rows for {} target images", rows.len(), names.len())));
    }
    let mut assignment = Vec::with_capacity(rows.len());
    for (row, n) in rows.iter().zip(names) {
        if row[0] != format!("images/{n}") {
            return Err(io_err(&path, format!("row {} does not match image {n}", row[0])));
        }
        let m: usize = io::parse_field(&path, &row[1])?;
        if m == 0 {
            return Err(io_err(&path, "subdomain indices start at 1"));
        }
        assignment.push(m - 1);
    }
    let k = assignment.iter().max().map_or(0, |m| m + 1);
    SubdomainPartition::new(k, assignment).stage("purify")
}

fn purify_stage(ctx: &Context) -> Result<(), CliError> {
    let (names, images) = io::read_images(&ctx.target_dir())?;
    let part = read_partition(ctx, &names)?;
    let subs = purify::purify_partition(&images, &part).stage("purify")?;
    for sub in &subs {
        let dir = ctx.dir(Stage::Purify).join(format!("subdomain_{}", sub.index + 1));
        for (i, img) in part.members(sub.index).into_iter().zip(&sub.members) {
            io::write_png(&dir.join(&names[i]), img)?;
        }
        io::write_style(&ctx.style_path(sub.index), &sub.style)?;
    }
    Ok(())
}

fn load_subdomains(ctx: &Context) -> Result<Vec<PurifiedSubdomain>, CliError> {
    (0..subdomain_count(ctx)?)
        .map(|m| {
            let style = io::read_style(&ctx.style_path(m))?;
            let dir = ctx.dir(Stage::Purify).join(format!("subdomain_{}", m + 1));
            let members =
                io::list_pngs(&dir)?.iter().map(|n| io::read_png(&dir.join(n))).collect::<Result<Vec<_>, _>>()?;
            Ok(PurifiedSubdomain { index: m, style, members })
        })
        .collect()
}

fn mix_stage(ctx: &Context) -> Result<(), CliError> {
    const S: &str = "mix";
    let source = io::read_samples(&ctx.source_dir())?;
    let subs = load_subdomains(ctx)?;
    let dir = ctx.dir(Stage::Mix);
    let mut rows = Vec::new();
    for sub in &subs {
        if sub.members.is_empty() {
            continue;
        }
        // Pseudo-labels come from the teacher's momentum network at initialisation.
        let seed = pipeline::teacher_seed(ctx.cfg.seed, sub.index);
        let momentum = net::init_network(&ctx.train.arch, rng::derive_seed(seed, tag::INIT, 0)).stage(S)?;
        for j in 0..ctx.cfg.mix.samples {
            let index = (sub.index as u64) << 32 | j as u64;
            let mask_seed = rng::derive_seed(ctx.cfg.seed, tag::MIX, index);
            let mut r = rng::substream(ctx.cfg.seed, tag::MIX, index);
            let si = r.gen_range(0..source.len());
            let ti = r.gen_range(0..sub.members.len());
            let s = &source[si];
            let x_t = &sub.members[ti];
            let pseudo = net::pseudo_label(&momentum, x_t).stage(S)?;
            let prov = Provenance { source_id: si, target_id: ti, mask_seed };
            let psi = mixing::classmix_mask(&s.label, &mut r).stage(S)?;
            let s2t = mixing::mix_s2t(&s.image, &s.label, x_t, &pseudo, &psi, &sub.style, prov).stage(S)?;
            let phi = mixing::cutmix_mask(x_t.height(), x_t.width(), &mut r);
            let own = StyleTriple::of_image(&s.image, MATCH_LEVELS);
            let t2s = mixing::mix_t2s(&s.image, &s.label, x_t, &pseudo, &phi, &own, prov).stage(S)?;
            for sample in [s2t, t2s] {
                let stem = format!("subdomain_{}_{j:03}", sub.index + 1);
                let d = dir.join(sample.direction.tag());
                io::write_png(&d.join(format!("{stem}.png")), &sample.image)?;
                io::write_label_png(&d.join(format!("{stem}_label.png")), &sample.label)?;
                rows.push([
                    format!("{}/{stem}.png", sample.direction.tag()),
                    sample.direction.tag().to_string(),
                    (sub.index + 1).to_string(),
                    si.to_string(),
                    ti.to_string(),
                    mask_seed.to_string(),
                ]);
            }
        }
    }
    io::write_csv(&dir.join("mixes.csv"), &["file", "direction", "subdomain_index", "source_id", "target_id", "seed"], rows)
}

fn loss_csv(path: &Path, log: &[LossRecord]) -> Result<(), CliError> {
    io::write_csv(
        path,
        &["iter", "lr", "ce_source", "ce_s2t", "ce_t2s", "total"],
        log.iter().map(|r| {
            [
                r.iter.to_string(),
                r.lr.to_string(),
                r.ce_source.to_string(),
                r.ce_s2t.to_string(),
                r.ce_t2s.to_string(),
                r.total.to_string(),
            ]
        }),
    )
}

fn teacher_checkpoint(run: &TeacherRun, seed: u64) -> Checkpoint {
    Checkpoint {
        params: run.params.clone(),
        momentum: Some(run.momentum.clone()),
        optimizer: Some(run.optimizer.clone()),
        iteration: run.optimizer.iter,
        rng: RngState { seed, next_index: run.optimizer.iter },
    }
}

/// Trains every teacher on its own thread. Teachers share nothing mutable,
/// and results are collected in subdomain order.
pub fn train_teachers_parallel(
    source: &[Sample],
    subs: &[PurifiedSubdomain],
    cfg: &TrainConfig,
) -> Vec<ocda_core::Result<TeacherRun>> {
    std::thread::scope(|scope| {
        let handles: Vec<_> =
            subs.iter().map(|sub| scope.spawn(move || pipeline::train_teacher(source, sub, cfg))).collect();
        handles.into_iter().map(|h| h.join().expect("teacher thread panicked")).collect()
    })
}

fn train_stage(ctx: &Context) -> Result<(), CliError> {
    const S: &str = "train";
    let source = io::read_samples(&ctx.source_dir())?;
    let subs = load_subdomains(ctx)?;
    let dir = ctx.dir(Stage::Train);
    for (sub, run) in subs.iter().zip(train_teachers_parallel(&source, &subs, &ctx.train)) {
        let run = run.stage(S)?;
        let seed = pipeline::teacher_seed(ctx.cfg.seed, sub.index);
        checkpoint::save(&ctx.teacher_path(sub.index), &teacher_checkpoint(&run, seed))?;
        loss_csv(&dir.join(format!("loss_teacher_{}.csv", sub.index + 1)), &run.log)?;
    }
    if ctx.cfg.teacher.baselines {
        let seed = pipeline::teacher_seed(ctx.cfg.seed, 0);
        let so = pipeline::train_source_only(&source, &ctx.train).stage(S)?;
        checkpoint::save(&dir.join("source_only.ckpt"), &teacher_checkpoint(&so, seed))?;
        loss_csv(&dir.join("loss_source_only.csv"), &so.log)?;
        let single = pipeline::train_single_model(&source, &subs, &ctx.train).stage(S)?;
        checkpoint::save(&dir.join("single_model.ckpt"), &teacher_checkpoint(&single, seed))?;
        loss_csv(&dir.join("loss_single_model.csv"), &single.log)?;
    }
    Ok(())
}

fn load_ensemble(ctx: &Context) -> Result<TeacherEnsemble, CliError> {
    let teachers = (0..subdomain_count(ctx)?)
        .map(|m| {
            let path = ctx.teacher_path(m);
            let ck = checkpoint::load(&path)?;
            let arch = ck.params.architecture();
            if arch != &ctx.train.arch {
                return Err(CliError::Checkpoint { path, message: "architecture differs from the config".into() });
            }
            let momentum = ck.momentum.unwrap_or_else(|| ck.params.clone());
            Ok(Teacher { subdomain: m, params: ck.params, momentum, style: io::read_style(&ctx.style_path(m))? })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    TeacherEnsemble::new(teachers).stage("distill")
}

fn evaluate(params: &NetworkParams, set: &[Sample], classes: usize, domain: &str) -> Result<EvalReport, CliError> {
    pipeline::evaluate_miou(params, set, classes, domain).stage("eval")
}

fn distill_stage(ctx: &Context) -> Result<(), CliError> {
    const S: &str = "distill";
    let (names, target) = io::read_images(&ctx.target_dir())?;
    let ens = load_ensemble(ctx)?;
    let mut cfg = ctx.train.clone();
    if ctx.cfg.distill.student_init == StudentInitName::BestTeacher {
        let val = io::read_samples(&ctx.validation_dir())?;
        let mut best = (0, f64::NEG_INFINITY);
        for (m, t) in ens.teachers().iter().enumerate() {
            let miou = evaluate(&t.params, &val, ens.classes(), "compound")?.miou;
            if miou > best.1 {
                best = (m, miou);
            }
        }
        cfg.student_init = StudentInit::FromTeacher(best.0);
    }
    let fused = pipeline::fuse_all(&ens, &target, cfg.fusion).stage(S)?;
    let run = pipeline::distill_on_fused(&ens, &target, &fused, &cfg).stage(S)?;
    if run.degenerate_images > 0 {
        eprintln!("distill: {} images fell back to uniform fusion weights", run.degenerate_images);
    }
    let dir = ctx.dir(Stage::Distill);
    let ck = Checkpoint {
        params: run.params.clone(),
        momentum: None,
        optimizer: Some(run.optimizer.clone()),
        iteration: run.optimizer.iter,
        rng: RngState { seed: cfg.seed, next_index: run.optimizer.iter },
    };
    checkpoint::save(&ctx.student_path(), &ck)?;
    io::write_csv(
        &dir.join("loss_student.csv"),
        &["iter", "lr", "kl"],
        run.log.iter().map(|r| [r.iter.to_string(), r.lr.to_string(), r.kl.to_string()]),
    )?;
    io::write_csv(
        &dir.join("fusion_weights.csv"),
        &["image_path", "teacher", "weight", "uniform_fallback"],
        names.iter().zip(&fused).flat_map(|(n, f)| {
            f.weights.iter().enumerate().map(move |(m, w)| {
                [format!("images/{n}"), (m + 1).to_string(), w.to_string(), f.degenerate.to_string()]
            })
        }),
    )
}

fn read_styles(ctx: &Context) -> Result<Vec<StyleTriple>, CliError> {
    (0..subdomain_count(ctx)?).map(|m| io::read_style(&ctx.style_path(m))).collect()
}

fn update_stage(ctx: &Context) -> Result<(), CliError> {
    const S: &str = "update";
    if !ctx.cfg.online.enabled {
        return Ok(());
    }
    let student = checkpoint::load(&ctx.student_path())?;
    let styles = read_styles(ctx)?;
    let (_, open) = io::read_images(&ctx.open_dir())?;
    let run = pipeline::online_update(&student.params, &open, &styles, &ctx.train).stage(S)?;
    let dir = ctx.dir(Stage::Update);
    checkpoint::save(&ctx.online_path(), &Checkpoint::new(run.params.clone()))?;
    let mut rows = Vec::new();
    for (b, (trace, after)) in run.losses.iter().zip(&run.final_losses).enumerate() {
        for (step, l) in trace.iter().chain([after]).enumerate() {
            rows.push([b.to_string(), step.to_string(), l.to_string()]);
        }
    }
    io::write_csv(&dir.join("consistency.csv"), &["batch", "step", "loss"], rows)
}

fn report_csv(path: &Path, r: &EvalReport) -> Result<(), CliError> {
    io::write_csv(
        path,
        &["class", "iou"],
        r.per_class.iter().enumerate().map(|(c, v)| [c.to_string(), v.map(|x| x.to_string()).unwrap_or_default()]),
    )
}

fn read_hidden_ids(path: &Path, n: usize) -> Result<Option<Vec<usize>>, CliError> {
    if !path.is_file() {
        return Ok(None);
    }
    let rows = io::read_csv(path, &["image_path", "subdomain_index"])?;
    if rows.len() != n {
        return Ok(None);
    }
    rows.iter().map(|r| io::parse_field::<usize>(path, &r[1]).map(|m| m.saturating_sub(1))).collect::<Result<_, _>>().map(Some)
}

fn eval_stage(ctx: &Context) -> Result<(), CliError> {
    let classes = ctx.cfg.data.classes;
    let val = io::read_samples(&ctx.validation_dir())?;
    let (names, open_images) = io::read_images(&ctx.open_dir())?;
    let open = names
        .iter()
        .zip(open_images)
        .map(|(n, image)| {
            let label: LabelMap = io::read_label_png(&ctx.open_label_dir().join(n))?;
            Sample::new(image, label).stage("eval")
        })
        .collect::<Result<Vec<_>, _>>()?;
    let hidden = read_hidden_ids(&ctx.validation_dir().join("subdomains.csv"), val.len())?;
    let dir = ctx.dir(Stage::Eval);
    let mut summary: Vec<[String; 3]> = Vec::new();
    let mut record = |model: &str, domain: &str, r: &EvalReport| -> Result<(), CliError> {
        report_csv(&dir.join(format!("{model}_{domain}.csv")), r)?;
        summary.push([model.into(), domain.into(), r.miou.to_string()]);
        Ok(())
    };
    let mut models: Vec<(String, NetworkParams)> = vec![("student".into(), checkpoint::load(&ctx.student_path())?.params)];
    if ctx.online_path().is_file() {
        models.push(("student_online".into(), checkpoint::load(&ctx.online_path())?.params));
    }
    for m in 0..subdomain_count(ctx)? {
        models.push((format!("teacher_{}", m + 1), checkpoint::load(&ctx.teacher_path(m))?.params));
    }
    for name in ["source_only", "single_model"] {
        let p = ctx.dir(Stage::Train).join(format!("{name}.ckpt"));
        if p.is_file() {
            models.push((name.into(), checkpoint::load(&p)?.params));
        }
    }
    for (model, params) in &models {
        record(model, "compound", &evaluate(params, &val, classes, "compound")?)?;
        if let Some(ids) = &hidden {
            let k = ids.iter().max().map_or(0, |m| m + 1);
            for h in 0..k {
                let part: Vec<Sample> =
                    val.iter().zip(ids).filter(|(_, &i)| i == h).map(|(s, _)| s.clone()).collect();
                if !part.is_empty() {
                    let domain = format!("compound_{}", h + 1);
                    record(model, &domain, &evaluate(params, &part, classes, &domain)?)?;
                }
            }
        }
        record(model, "open", &evaluate(params, &open, classes, "open")?)?;
    }
    io::write_csv(&dir.join("summary.csv"), &["model", "domain", "miou"], summary)?;
    Ok(())
}

