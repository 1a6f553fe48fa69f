//! Training stages: per-subdomain teachers trained with bidirectional
//! photometric mixing, entropy-weighted fusion, student distillation, online
//! consistency updating and mIoU evaluation.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::color::{self, StyleTriple, DESCRIPTOR_BINS, MATCH_LEVELS};
use crate::error::{Error, Result};
use crate::image::{Image, Sample};
use crate::math;
use crate::metrics::ConfusionMatrix;
use crate::mixing::{self, AugmentConfig, MixedSample, Provenance};
use crate::net::{self, Architecture, KlDirection, NetworkParams, OptimizerState, OutputGrad, PredictionMap, SgdConfig};
use crate::purify::PurifiedSubdomain;
use crate::rng::{self, tag};

/// How teacher predictions are weighted when fused.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Fusion {
    /// `w_m = conf_m / Σ conf`, `conf_m = Σ p ln p`.
    #[default]
    Verbatim,
    /// `w_m ∝ mean(1 − H(p) / ln C)`.
    NegEntropy,
}

impl Fusion {
    pub fn name(self) -> &'static str {
        match self {
            Fusion::Verbatim => "verbatim",
            Fusion::NegEntropy => "negentropy",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum StudentInit {
    #[default]
    Random,
    /// Copy of the given teacher's segmentation network.
    FromTeacher(usize),
}

/// Which branches of the online consistency loss receive gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum ConsistencyGrad {
    /// Gradient flows through the restyled variants too.
    #[default]
    Both,
    /// Restyled variants are treated as constants.
    OpenOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub alpha: f64,
    pub beta: f64,
    pub ema_lambda: f64,
    /// Teacher optimiser; `max_iter` is the teacher iteration count.
    pub sgd: SgdConfig,
    pub batch_size: usize,
    /// Student optimiser; `max_iter` is the distillation iteration count.
    pub distill_sgd: SgdConfig,
    pub distill_batch: usize,
    pub online_steps: u64,
    pub online_lr_scale: f64,
    pub online_batch: usize,
    pub fusion: Fusion,
    pub kl_direction: KlDirection,
    pub student_init: StudentInit,
    pub consistency_grad: ConsistencyGrad,
    pub augment: AugmentConfig,
    pub arch: Architecture,
    pub seed: u64,
    pub k_min: Option<usize>,
    pub k_max: Option<usize>,
    pub bins: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            ema_lambda: 0.99,
            sgd: SgdConfig::default(),
            batch_size: 2,
            distill_sgd: SgdConfig::default(),
            distill_batch: 2,
            online_steps: 10,
            online_lr_scale: 0.1,
            online_batch: 2,
            fusion: Fusion::Verbatim,
            kl_direction: KlDirection::TargetStudent,
            student_init: StudentInit::Random,
            consistency_grad: ConsistencyGrad::Both,
            augment: AugmentConfig::default(),
            arch: Architecture::standard(5).expect("standard architecture"),
            seed: 0,
            k_min: None,
            k_max: None,
            bins: DESCRIPTOR_BINS,
        }
    }
}

fn invalid(field: &'static str, message: String) -> Error {
    Error::InvalidConfig { field, message }
}

fn check_sgd(prefix: &'static str, cfg: &SgdConfig) -> Result<()> {
    if !(cfg.lr0.is_finite() && cfg.lr0 > 0.0) {
        return Err(invalid(prefix, format!("lr0 = {} must be positive", cfg.lr0)));
    }
    if !(0.0..1.0).contains(&cfg.momentum) {
        return Err(invalid(prefix, format!("momentum = {} outside [0, 1)", cfg.momentum)));
    }
    if !(cfg.weight_decay >= 0.0) || !(cfg.power >= 0.0) {
        return Err(invalid(prefix, "weight decay and power must be >= 0".into()));
    }
    if cfg.max_iter == 0 {
        return Err(invalid(prefix, "max_iter must be >= 1".into()));
    }
    Ok(())
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(invalid("alpha", format!("{} must be >= 0", self.alpha)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(invalid("beta", format!("{} must be >= 0", self.beta)));
        }
        if !(0.0..=1.0).contains(&self.ema_lambda) {
            return Err(invalid("lambda", format!("{} outside [0, 1]", self.ema_lambda)));
        }
        if self.bins < 2 {
            return Err(invalid("bins", format!("{} must be >= 2", self.bins)));
        }
        if self.batch_size == 0 || self.distill_batch == 0 || self.online_batch == 0 {
            return Err(invalid("batch_size", "batch sizes must be >= 1".into()));
        }
        if !(self.online_lr_scale >= 0.0 && self.online_lr_scale.is_finite()) {
            return Err(invalid("online_lr_scale", format!("{} must be >= 0", self.online_lr_scale)));
        }
        if let (Some(lo), Some(hi)) = (self.k_min, self.k_max) {
            if lo > hi {
                return Err(invalid("k_min", format!("k_min = {lo} above k_max = {hi}")));
            }
        }
        if self.k_min.is_some_and(|k| k < 2) {
            return Err(invalid("k_min", "must be >= 2".into()));
        }
        check_sgd("sgd", &self.sgd)?;
        check_sgd("distill_sgd", &self.distill_sgd)
    }
}

/// One row of a training loss log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub iter: u64,
    pub lr: f64,
    pub ce_source: f64,
    pub ce_s2t: f64,
    pub ce_t2s: f64,
    pub total: f64,
}

/// A trained segmentation network `G` with its momentum copy `M`.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherRun {
    pub params: NetworkParams,
    pub momentum: NetworkParams,
    pub optimizer: OptimizerState,
    pub log: Vec<LossRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Teacher {
    pub subdomain: usize,
    pub params: NetworkParams,
    pub momentum: NetworkParams,
    pub style: StyleTriple,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherEnsemble {
    teachers: Vec<Teacher>,
}

impl TeacherEnsemble {
    pub fn new(teachers: Vec<Teacher>) -> Result<Self> {
        let first = teachers.first().ok_or(Error::EmptyDataset)?;
        let arch = first.params.architecture();
        for (i, t) in teachers.iter().enumerate() {
            if t.params.architecture() != arch || t.momentum.architecture() != arch {
                return Err(Error::ShapeMismatch(format!("teacher {i} architecture differs")));
            }
        }
        Ok(Self { teachers })
    }

    pub fn teachers(&self) -> &[Teacher] {
        &self.teachers
    }

    pub fn len(&self) -> usize {
        self.teachers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.teachers.is_empty()
    }

    pub fn styles(&self) -> Vec<StyleTriple> {
        self.teachers.iter().map(|t| t.style.clone()).collect()
    }

    pub fn classes(&self) -> usize {
        self.teachers[0].params.architecture().classes()
    }
}

fn image_grad(params: &NetworkParams, img: &Image, label: &crate::LabelMap, acc: &mut NetworkParams, weight: f64) -> Result<f64> {
    let cache = net::forward_cached(params, img)?;
    let (l, g) = net::cross_entropy(cache.prediction(), label)?;
    let grads = net::backward(params, &cache, &g)?;
    acc.add_scaled(&grads, weight)?;
    Ok(l)
}

fn ensure_finite(value: f64, what: &str, iter: u64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} = {value} at iteration {iter}")))
    }
}

/// Recipient style of source-to-target pastes.
#[derive(Debug, Clone, Copy)]
pub enum TargetStyle<'a> {
    /// Each target image's own histograms.
    Own,
    Shared(&'a StyleTriple),
    /// `styles[index[i]]` for target image `i`.
    PerImage { index: &'a [usize], styles: &'a [StyleTriple] },
}

/// Mixing-based training of one network. With `alpha = beta = 0` this is
/// plain source supervision.
pub fn train_bpm(
    source: &[Sample],
    target: &[Image],
    target_style: TargetStyle<'_>,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TeacherRun> {
    cfg.validate()?;
    let mixing = cfg.alpha > 0.0 || cfg.beta > 0.0;
    if source.is_empty() || (mixing && target.is_empty()) {
        return Err(Error::EmptyDataset);
    }
    if let TargetStyle::PerImage { index, styles } = target_style {
        if index.len() != target.len() || index.iter().any(|&i| i >= styles.len()) {
            return Err(Error::DimensionMismatch("per-image style index".into()));
        }
    }
    let mut params = net::init_network(&cfg.arch, rng::derive_seed(seed, tag::INIT, 0))?;
    let mut momentum = params.clone();
    let mut opt = OptimizerState::new(cfg.sgd, &params);
    let mut source_styles: Vec<Option<StyleTriple>> = vec![None; source.len()];
    let mut log = Vec::with_capacity(cfg.sgd.max_iter as usize);
    let batch = cfg.batch_size;
    let weight = 1.0 / batch as f64;
    for it in 0..cfg.sgd.max_iter {
        let lr = net::poly_lr(it, &cfg.sgd)?;
        let mut src_rng = rng::substream(seed, tag::SOURCE_BATCH, it);
        let mut tgt_rng = rng::substream(seed, tag::TARGET_BATCH, it);
        let mut grads = NetworkParams::zeros(&cfg.arch);
        let (mut ce_s, mut ce_psi, mut ce_phi) = (0.0, 0.0, 0.0);
        for b in 0..batch {
            let si = src_rng.gen_range(0..source.len());
            let s = &source[si];
            ce_s += weight * image_grad(&params, &s.image, &s.label, &mut grads, weight)?;
            if !mixing {
                continue;
            }
            let ti = tgt_rng.gen_range(0..target.len());
            let x_t = &target[ti];
            let pseudo = net::pseudo_label(&momentum, x_t)?;
            let index = it << 8 | b as u64;
            let mask_seed = rng::derive_seed(seed, tag::MIX, index);
            let provenance = Provenance { source_id: si, target_id: ti, mask_seed };
            let mut mix_rng = rng::substream(seed, tag::MIX, index);
            let mut aug_rng = rng::substream(seed, tag::AUGMENT, index);
            if cfg.alpha > 0.0 {
                let psi = mixing::classmix_mask(&s.label, &mut mix_rng)?;
                let own;
                let style = match target_style {
                    TargetStyle::Shared(st) => st,
                    TargetStyle::PerImage { index, styles } => &styles[index[ti]],
                    TargetStyle::Own => {
                        own = StyleTriple::of_image(x_t, MATCH_LEVELS);
                        &own
                    }
                };
                let mixed = mixing::mix_s2t(&s.image, &s.label, x_t, &pseudo, &psi, style, provenance)?;
                let mixed = mixing::augment(&mixed, &mut aug_rng, &cfg.augment);
                ce_psi += weight * image_grad(&params, &mixed.image, &mixed.label, &mut grads, weight * cfg.alpha)?;
            }
            if cfg.beta > 0.0 {
                let phi = mixing::cutmix_mask(x_t.height(), x_t.width(), &mut mix_rng);
                let style = source_styles[si].get_or_insert_with(|| StyleTriple::of_image(&s.image, MATCH_LEVELS));
                let mixed = mixing::mix_t2s(&s.image, &s.label, x_t, &pseudo, &phi, style, provenance)?;
                let mixed: MixedSample = mixing::augment(&mixed, &mut aug_rng, &cfg.augment);
                ce_phi += weight * image_grad(&params, &mixed.image, &mixed.label, &mut grads, weight * cfg.beta)?;
            }
        }
        let total = ce_s + cfg.alpha * ce_psi + cfg.beta * ce_phi;
        ensure_finite(total, "teacher loss", it)?;
        net::sgd_step(&mut params, &grads, &mut opt)?;
        net::ema_update(&mut momentum, &params, cfg.ema_lambda)?;
        log.push(LossRecord { iter: it, lr, ce_source: ce_s, ce_s2t: ce_psi, ce_t2s: ce_phi, total });
    }
    Ok(TeacherRun { params, momentum, optimizer: opt, log })
}

/// Seed of teacher `m` under a master seed.
pub fn teacher_seed(master: u64, subdomain: usize) -> u64 {
    rng::derive_seed(master, tag::TEACHER, subdomain as u64)
}

pub fn train_teacher(source: &[Sample], subdomain: &PurifiedSubdomain, cfg: &TrainConfig) -> Result<TeacherRun> {
    if subdomain.members.is_empty() {
        return Err(Error::EmptyDataset);
    }
    train_bpm(source, &subdomain.members, TargetStyle::Shared(&subdomain.style), cfg, teacher_seed(cfg.seed, subdomain.index))
}

pub fn into_teacher(run: TeacherRun, subdomain: &PurifiedSubdomain) -> Teacher {
    Teacher { subdomain: subdomain.index, params: run.params, momentum: run.momentum, style: subdomain.style.clone() }
}

/// Trains the teachers one after another. Each depends only on its own
/// subdomain and seed, so any execution order gives the same ensemble.
pub fn train_all_teachers(
    source: &[Sample],
    subdomains: &[PurifiedSubdomain],
    cfg: &TrainConfig,
) -> Result<(TeacherEnsemble, Vec<Vec<LossRecord>>)> {
    let mut teachers = Vec::with_capacity(subdomains.len());
    let mut logs = Vec::with_capacity(subdomains.len());
    for sub in subdomains {
        let mut run = train_teacher(source, sub, cfg)?;
        logs.push(core::mem::take(&mut run.log));
        teachers.push(into_teacher(run, sub));
    }
    Ok((TeacherEnsemble::new(teachers)?, logs))
}

/// Source-only baseline under the same seed derivation as teacher 0.
pub fn train_source_only(source: &[Sample], cfg: &TrainConfig) -> Result<TeacherRun> {
    let cfg = TrainConfig { alpha: 0.0, beta: 0.0, ..cfg.clone() };
    train_bpm(source, &[], TargetStyle::Own, &cfg, teacher_seed(cfg.seed, 0))
}

/// Ablation without multiple teachers: one network trained with mixing on
/// the union of all purified subdomains, each member pasted onto with its own
/// subdomain's standard style. Seeded like teacher 0.
pub fn train_single_model(source: &[Sample], subdomains: &[PurifiedSubdomain], cfg: &TrainConfig) -> Result<TeacherRun> {
    let mut members = Vec::new();
    let mut index = Vec::new();
    for (m, sub) in subdomains.iter().enumerate() {
        members.extend(sub.members.iter().cloned());
        index.extend(core::iter::repeat(m).take(sub.members.len()));
    }
    let styles: Vec<StyleTriple> = subdomains.iter().map(|s| s.style.clone()).collect();
    train_bpm(source, &members, TargetStyle::PerImage { index: &index, styles: &styles }, cfg, teacher_seed(cfg.seed, 0))
}

/// Fusion weights and the fused map.
#[derive(Debug, Clone, PartialEq)]
pub struct Fused {
    pub weights: Vec<f64>,
    pub map: PredictionMap,
    /// Weights fell back to uniform because every confidence was zero.
    pub degenerate: bool,
}

/// Fuses teacher prediction maps of one image.
pub fn fuse_maps(maps: &[PredictionMap], fusion: Fusion) -> Result<Fused> {
    let first = maps.first().ok_or(Error::EmptyDataset)?;
    for m in maps {
        first.check_shape(m)?;
    }
    let k = maps.len();
    let raw: Vec<f64> = match fusion {
        Fusion::Verbatim => maps.iter().map(net::prediction_confidence).collect(),
        Fusion::NegEntropy => {
            let ln_c = math::ln(first.classes() as f64);
            maps.iter()
                .map(|m| {
                    if ln_c == 0.0 {
                        return 1.0;
                    }
                    let h = -net::prediction_confidence(m) / m.pixels() as f64;
                    f64::max(1.0 - h / ln_c, 0.0)
                })
                .collect()
        }
    };
    let total: f64 = raw.iter().sum();
    let degenerate = total == 0.0 || !total.is_finite();
    let weights: Vec<f64> = if degenerate { vec![1.0 / k as f64; k] } else { raw.iter().map(|c| c / total).collect() };
    let mut probs = vec![0.0; first.probs().len()];
    for (w, m) in weights.iter().zip(maps) {
        for (acc, p) in probs.iter_mut().zip(m.probs()) {
            *acc += w * p;
        }
    }
    let map = PredictionMap::new(first.width(), first.height(), first.classes(), probs)?;
    Ok(Fused { weights, map, degenerate })
}

/// Runs every teacher's segmentation network on `x_t` and fuses the outputs.
pub fn fuse_predictions(ensemble: &TeacherEnsemble, x_t: &Image, fusion: Fusion) -> Result<Fused> {
    let maps = ensemble.teachers.iter().map(|t| net::forward(&t.params, x_t)).collect::<Result<Vec<_>>>()?;
    fuse_maps(&maps, fusion)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistillRecord {
    pub iter: u64,
    pub lr: f64,
    pub kl: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudentRun {
    pub params: NetworkParams,
    pub optimizer: OptimizerState,
    pub log: Vec<DistillRecord>,
    /// Images whose fusion weights fell back to uniform.
    pub degenerate_images: usize,
}

/// Minimises the KL divergence between the student and the fused teacher
/// output over target batches. Teachers are frozen, so the fused targets are
/// computed once.
pub fn distill_student(ensemble: &TeacherEnsemble, target: &[Image], cfg: &TrainConfig) -> Result<StudentRun> {
    cfg.validate()?;
    if target.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let fused = fuse_all(ensemble, target, cfg.fusion)?;
    distill_on_fused(ensemble, target, &fused, cfg)
}

pub fn fuse_all(ensemble: &TeacherEnsemble, target: &[Image], fusion: Fusion) -> Result<Vec<Fused>> {
    target.iter().map(|x| fuse_predictions(ensemble, x, fusion)).collect()
}

/// Distillation against precomputed fused targets, one per target image.
pub fn distill_on_fused(ensemble: &TeacherEnsemble, target: &[Image], fused: &[Fused], cfg: &TrainConfig) -> Result<StudentRun> {
    cfg.validate()?;
    if target.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if fused.len() != target.len() {
        return Err(Error::DimensionMismatch(format!("{} fused maps for {} images", fused.len(), target.len())));
    }
    let degenerate_images = fused.iter().filter(|f| f.degenerate).count();
    let targets: Vec<&PredictionMap> = fused.iter().map(|f| &f.map).collect();
    let arch = ensemble.teachers[0].params.architecture().clone();
    let mut params = match cfg.student_init {
        StudentInit::Random => net::init_network(&arch, rng::derive_seed(cfg.seed, tag::STUDENT, 0))?,
        StudentInit::FromTeacher(m) => ensemble
            .teachers
            .get(m)
            .ok_or_else(|| invalid("student_init", format!("no teacher {m}")))?
            .params
            .clone(),
    };
    let mut opt = OptimizerState::new(cfg.distill_sgd, &params);
    let mut log = Vec::with_capacity(cfg.distill_sgd.max_iter as usize);
    let weight = 1.0 / cfg.distill_batch as f64;
    for it in 0..cfg.distill_sgd.max_iter {
        let lr = net::poly_lr(it, &cfg.distill_sgd)?;
        let mut batch_rng = rng::substream(cfg.seed, tag::DISTILL_BATCH, it);
        let mut grads = NetworkParams::zeros(&arch);
        let mut kl = 0.0;
        for _ in 0..cfg.distill_batch {
            let i = batch_rng.gen_range(0..target.len());
            let cache = net::forward_cached(&params, &target[i])?;
            let (l, g) = net::kl_divergence(cache.prediction(), targets[i], cfg.kl_direction)?;
            grads.add_scaled(&net::backward(&params, &cache, &g)?, weight)?;
            kl += weight * l;
        }
        ensure_finite(kl, "distillation loss", it)?;
        net::sgd_step(&mut params, &grads, &mut opt)?;
        log.push(DistillRecord { iter: it, lr, kl });
    }
    Ok(StudentRun { params, optimizer: opt, log, degenerate_images })
}

/// `Σ_m L1(G(x^m), G(x))` for one open image and its restyled variants,
/// accumulating the parameter gradient into `acc` with `weight`.
fn consistency_step(
    params: &NetworkParams,
    x: &Image,
    variants: &[Image],
    grad_mode: ConsistencyGrad,
    acc: Option<(&mut NetworkParams, f64)>,
) -> Result<f64> {
    let base = net::forward_cached(params, x)?;
    let mut total = 0.0;
    let mut base_grad = vec![0.0; base.prediction().probs().len()];
    let mut acc = acc;
    for v in variants {
        let cache = net::forward_cached(params, v)?;
        let (l, gv, gx) = net::l1_consistency(cache.prediction(), base.prediction())?;
        total += l;
        if let Some((acc, w)) = acc.as_mut() {
            if let OutputGrad::Probs(g) = gx {
                base_grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
            }
            if grad_mode == ConsistencyGrad::Both {
                acc.add_scaled(&net::backward(params, &cache, &gv)?, *w)?;
            }
        }
    }
    if let Some((acc, w)) = acc {
        acc.add_scaled(&net::backward(params, &base, &OutputGrad::Probs(base_grad))?, w)?;
    }
    Ok(total)
}

/// Restyles `x` to every standard style.
pub fn restyle(x: &Image, styles: &[StyleTriple]) -> Result<Vec<Image>> {
    let lab = color::rgb_to_lab(x);
    styles.iter().map(|s| Ok(color::lab_to_rgb(&color::histogram_match(&lab, s)?))).collect()
}

/// Online consistency loss summed over images.
pub fn consistency_loss(params: &NetworkParams, open: &[Image], styles: &[StyleTriple]) -> Result<f64> {
    let mut total = 0.0;
    for x in open {
        let variants = restyle(x, styles)?;
        total += consistency_step(params, x, &variants, ConsistencyGrad::Both, None)?;
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnlineRun {
    pub params: NetworkParams,
    /// Batch-mean consistency loss before each step, per batch.
    pub losses: Vec<Vec<f64>>,
    /// Batch-mean loss after the last step, per batch.
    pub final_losses: Vec<f64>,
}

/// One pass over the open images in batches; each batch gets
/// `online_steps` SGD steps at the constant rate `online_lr_scale` times the distillation `lr0`.
pub fn online_update(
    student: &NetworkParams,
    open: &[Image],
    styles: &[StyleTriple],
    cfg: &TrainConfig,
) -> Result<OnlineRun> {
    cfg.validate()?;
    if styles.is_empty() {
        return Err(Error::EmptySubdomain);
    }
    let mut params = student.clone();
    let sgd = SgdConfig {
        lr0: cfg.distill_sgd.lr0 * cfg.online_lr_scale,
        power: 0.0,
        max_iter: cfg.online_steps.max(1),
        ..cfg.distill_sgd
    };
    let mut losses = Vec::new();
    let mut final_losses = Vec::new();
    if cfg.online_steps == 0 || cfg.online_lr_scale == 0.0 {
        return Ok(OnlineRun { params, losses, final_losses });
    }
    for batch in open.chunks(cfg.online_batch) {
        let variants = batch.iter().map(|x| restyle(x, styles)).collect::<Result<Vec<_>>>()?;
        let weight = 1.0 / batch.len() as f64;
        let mut opt = OptimizerState::new(sgd, &params);
        let mut trace = Vec::with_capacity(cfg.online_steps as usize);
        for step in 0..cfg.online_steps {
            let mut grads = NetworkParams::zeros(params.architecture());
            let mut l = 0.0;
            for (x, v) in batch.iter().zip(&variants) {
                l += weight * consistency_step(&params, x, v, cfg.consistency_grad, Some((&mut grads, weight)))?;
            }
            ensure_finite(l, "consistency loss", step)?;
            trace.push(l);
            net::sgd_step(&mut params, &grads, &mut opt)?;
        }
        let mut after = 0.0;
        for (x, v) in batch.iter().zip(&variants) {
            after += weight * consistency_step(&params, x, v, cfg.consistency_grad, None)?;
        }
        losses.push(trace);
        final_losses.push(after);
    }
    Ok(OnlineRun { params, losses, final_losses })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub domain: String,
    pub per_class: Vec<Option<f64>>,
    pub miou: f64,
    pub gt_pixels: Vec<u64>,
    pub pred_pixels: Vec<u64>,
}

pub fn evaluate_miou(params: &NetworkParams, labeled: &[Sample], classes: usize, domain: &str) -> Result<EvalReport> {
    if labeled.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if params.architecture().classes() != classes {
        return Err(Error::DimensionMismatch(format!(
            "network predicts {} classes, evaluation expects {classes}",
            params.architecture().classes()
        )));
    }
    let mut cm = ConfusionMatrix::new(classes);
    for s in labeled {
        s.label.validate(classes)?;
        let pred = net::pseudo_label(params, &s.image)?;
        cm.add(&pred, &s.label)?;
    }
    Ok(EvalReport {
        domain: domain.into(),
        per_class: cm.ious(),
        miou: cm.mean_iou()?,
        gt_pixels: (0..classes).map(|c| cm.gt_pixels(c)).collect(),
        pred_pixels: (0..classes).map(|c| cm.pred_pixels(c)).collect(),
    })
}
