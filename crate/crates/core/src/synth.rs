//! Deterministic synthetic compound-domain benchmark.
//!
//! Scenes are label maps built from simple shapes; each class has a base LAB
//! colour with per-pixel texture. A domain is a global photometric profile
//! (LAB gains, offsets and noise) applied on top, so geometry and labels are
//! independent of the domain and every domain gap is purely photometric.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::color::{self, StyleDescriptor, DESCRIPTOR_BINS};
use crate::error::{Error, Result};
use crate::image::{Image, LabelMap, Sample};
use crate::rng::{self, tag, PipelineRng};

/// Global LAB transform: `L' = 50 + g_L (L − 50) + o_L`, `a' = g_a a + o_a`,
/// `b' = g_b b + o_b`, plus Gaussian luminance noise.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    pub name: String,
    pub l_gain: f64,
    pub l_offset: f64,
    pub a_gain: f64,
    pub a_offset: f64,
    pub b_gain: f64,
    pub b_offset: f64,
    pub noise: f64,
}

impl Profile {
    #[allow(clippy::too_many_arguments)]
    pub fn new(name: &str, l_gain: f64, l_offset: f64, a_gain: f64, a_offset: f64, b_gain: f64, b_offset: f64, noise: f64) -> Self {
        Self { name: name.into(), l_gain, l_offset, a_gain, a_offset, b_gain, b_offset, noise }
    }

    pub fn identity(name: &str) -> Self {
        Self::new(name, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0)
    }

    #[inline]
    pub fn apply(&self, lab: [f64; 3]) -> [f64; 3] {
        [
            50.0 + self.l_gain * (lab[0] - 50.0) + self.l_offset,
            self.a_gain * lab[1] + self.a_offset,
            self.b_gain * lab[2] + self.b_offset,
        ]
    }

    /// The six built-in compound profiles.
    pub fn compound_presets() -> Vec<Profile> {
        vec![
            Profile::new("rain", 0.6, -18.0, 0.5, 0.0, 0.5, -25.0, 2.0),
            Profile::new("snow", 0.45, 28.0, 0.35, 0.0, 0.35, 0.0, 2.0),
            Profile::new("dusk", 0.9, -6.0, 0.8, 22.0, 0.8, 25.0, 2.0),
            Profile::new("night", 0.35, -30.0, 0.5, -8.0, 0.5, -10.0, 2.0),
            Profile::new("fog", 0.4, 12.0, 0.3, -20.0, 0.3, 5.0, 2.0),
            Profile::new("haze", 0.8, 0.0, 0.7, 30.0, 0.7, -20.0, 2.0),
        ]
    }

    pub fn open_preset() -> Profile {
        Profile::new("overcast", 0.7, 6.0, 0.6, -6.0, 0.6, -10.0, 2.0)
    }
}

/// Everything the generator needs; defaults give 64×64 scenes with 5 classes.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub classes: usize,
    /// Base LAB colour per class in the source domain.
    pub class_colors: Vec<[f64; 3]>,
    /// Per-pixel LAB texture standard deviation.
    pub texture: f64,
    /// Per-image luminance jitter standard deviation (intra-domain style spread).
    pub image_jitter: f64,
    /// Probability that a non-background class is drawn in an image.
    pub class_presence: f64,
    pub source: Profile,
    pub compound: Vec<Profile>,
    pub open: Profile,
    /// Minimum descriptor distance between distinct domain profiles.
    pub margin: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            classes: 5,
            class_colors: vec![
                [60.0, 0.0, -5.0],
                [35.0, 15.0, 25.0],
                [50.0, 55.0, 35.0],
                [80.0, -5.0, 70.0],
                [45.0, -45.0, 35.0],
                [25.0, 20.0, -40.0],
                [70.0, 35.0, -15.0],
                [90.0, 0.0, 0.0],
            ],
            texture: 3.0,
            image_jitter: 2.0,
            class_presence: 0.85,
            source: Profile::identity("source"),
            compound: Profile::compound_presets(),
            open: Profile::open_preset(),
            margin: 0.3,
        }
    }
}

const REFERENCE_SCENES: usize = 6;
const REFERENCE_SEED: u64 = 0x5eed;

const SOURCE_DOMAIN: u64 = 0;
const COMPOUND_DOMAIN: u64 = 1;
const OPEN_DOMAIN: u64 = 2;
const SHUFFLE: u64 = 3;

impl SceneSpec {
    fn validate_basic(&self) -> Result<()> {
        if self.width < 8 || self.height < 8 {
            return Err(Error::BadSpec(format!("scene {}x{} smaller than 8x8", self.width, self.height)));
        }
        if self.classes < 2 || self.classes > self.class_colors.len() {
            return Err(Error::BadSpec(format!(
                "{} classes with {} class colours",
                self.classes,
                self.class_colors.len()
            )));
        }
        if !(0.1..=1.0).contains(&self.class_presence) {
            return Err(Error::BadSpec("class presence must lie in [0.1, 1]".into()));
        }
        Ok(())
    }

    /// Descriptor distance between the reference scenes rendered under two profiles.
    pub fn profile_distance(&self, a: &Profile, b: &Profile) -> f64 {
        self.reference_centroid(a).distance(&self.reference_centroid(b))
    }

    fn reference_centroid(&self, profile: &Profile) -> StyleDescriptor {
        let mut acc = vec![0.0; 3 * DESCRIPTOR_BINS];
        for i in 0..REFERENCE_SCENES {
            let mut rng = rng::substream(REFERENCE_SEED, tag::SYNTH, i as u64);
            let (img, _) = self.render(profile, &mut rng);
            for (a, v) in acc.iter_mut().zip(color::style_descriptor(&img, DESCRIPTOR_BINS).as_slice()) {
                *a += v / REFERENCE_SCENES as f64;
            }
        }
        StyleDescriptor::from_vec(acc)
    }

    fn check_margins(&self, profiles: &[&Profile]) -> Result<()> {
        for i in 0..profiles.len() {
            for j in i + 1..profiles.len() {
                let d = self.profile_distance(profiles[i], profiles[j]);
                if d < self.margin {
                    return Err(Error::BadSpec(format!(
                        "profiles {} and {} are {d:.4} apart, below the margin {}",
                        profiles[i].name, profiles[j].name, self.margin
                    )));
                }
            }
        }
        Ok(())
    }

    /// Draws one scene: a label map and its rendering under `profile`.
    pub fn render(&self, profile: &Profile, rng: &mut PipelineRng) -> (Image, LabelMap) {
        let label = self.layout(rng);
        let jitter = self.image_jitter * rng::normal(rng);
        let mut data = Vec::with_capacity(label.len() * 3);
        for &class in label.data() {
            let base = self.class_colors[class as usize];
            let lab = [
                base[0] + jitter + self.texture * rng::normal(rng),
                base[1] + self.texture * rng::normal(rng),
                base[2] + self.texture * rng::normal(rng),
            ];
            let mut shifted = profile.apply(lab);
            shifted[0] += profile.noise * rng::normal(rng);
            data.extend_from_slice(&color::lab_to_srgb(shifted));
        }
        (Image::new(self.width, self.height, data).expect("spec dimensions"), label)
    }

    fn layout(&self, rng: &mut PipelineRng) -> LabelMap {
        let (w, h) = (self.width, self.height);
        let mut label = LabelMap::filled(w, h, 0);
        let d = label.data_mut();
        let short = w.min(h) as i64;
        for class in 1..self.classes {
            if rng::unit(rng) >= self.class_presence {
                continue;
            }
            let instances = rng.gen_range(1..=2);
            for _ in 0..instances {
                match (class - 1) % 4 {
                    0 => {
                        // rectangle
                        let rw = rng.gen_range(short / 8..=short * 3 / 8).max(2) as usize;
                        let rh = rng.gen_range(short / 8..=short * 3 / 8).max(2) as usize;
                        let x0 = rng.gen_range(0..w - rw.min(w - 1));
                        let y0 = rng.gen_range(0..h - rh.min(h - 1));
                        for y in y0..(y0 + rh).min(h) {
                            for x in x0..(x0 + rw).min(w) {
                                d[y * w + x] = class as u8;
                            }
                        }
                    }
                    1 => {
                        // disc
                        let r = rng.gen_range(short / 16..=short / 5).max(2);
                        let cx = rng.gen_range(0..w as i64);
                        let cy = rng.gen_range(0..h as i64);
                        for y in (cy - r).max(0)..(cy + r + 1).min(h as i64) {
                            for x in (cx - r).max(0)..(cx + r + 1).min(w as i64) {
                                if (x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r {
                                    d[y as usize * w + x as usize] = class as u8;
                                }
                            }
                        }
                    }
                    2 => {
                        // horizontal stripe
                        let t = rng.gen_range(short / 20..=short / 8).max(2) as usize;
                        let y0 = rng.gen_range(0..h - t);
                        for y in y0..y0 + t {
                            d[y * w..(y + 1) * w].iter_mut().for_each(|v| *v = class as u8);
                        }
                    }
                    _ => {
                        // vertical stripe
                        let t = rng.gen_range(short / 20..=short / 8).max(2) as usize;
                        let x0 = rng.gen_range(0..w - t);
                        for y in 0..h {
                            d[y * w + x0..y * w + x0 + t].iter_mut().for_each(|v| *v = class as u8);
                        }
                    }
                }
            }
        }
        label
    }

    fn render_set(&self, profile_of: impl Fn(usize) -> usize, profiles: &[&Profile], domain: u64, n: usize, seed: u64) -> Vec<(Image, LabelMap)> {
        (0..n)
            .map(|i| {
                let mut rng = rng::substream(seed, tag::SYNTH, domain << 32 | i as u64);
                self.render(profiles[profile_of(i)], &mut rng)
            })
            .collect()
    }
}

/// Labeled scenes under the source profile.
pub fn generate_source(spec: &SceneSpec, n: usize, seed: u64) -> Result<Vec<Sample>> {
    spec.validate_basic()?;
    if n == 0 {
        return Err(Error::BadSpec("need at least one source image".into()));
    }
    Ok(spec
        .render_set(|_| 0, &[&spec.source], SOURCE_DOMAIN, n, seed)
        .into_iter()
        .map(|(image, label)| Sample { image, label })
        .collect())
}

/// Evaluation-only ground truth of a generated target set.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenTruth {
    pub subdomains: Vec<usize>,
    pub labels: Vec<LabelMap>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompoundTarget {
    pub images: Vec<Image>,
    pub hidden: HiddenTruth,
}

impl CompoundTarget {
    /// Re-attaches the hidden labels; only for evaluation.
    pub fn labeled(&self) -> Vec<Sample> {
        self.images
            .iter()
            .zip(&self.hidden.labels)
            .map(|(image, label)| Sample { image: image.clone(), label: label.clone() })
            .collect()
    }
}

/// `n` images split evenly (in shuffled order) across the first `k_true`
/// compound profiles.
pub fn generate_compound_target(spec: &SceneSpec, k_true: usize, n: usize, seed: u64) -> Result<CompoundTarget> {
    spec.validate_basic()?;
    if !(2..=6).contains(&k_true) || k_true > spec.compound.len() {
        return Err(Error::BadSpec(format!("k_true = {k_true} outside [2, {}]", spec.compound.len().min(6))));
    }
    if n < k_true {
        return Err(Error::BadSpec(format!("{n} images cannot cover {k_true} subdomains")));
    }
    let profiles: Vec<&Profile> = spec.compound[..k_true].iter().collect();
    spec.check_margins(&profiles)?;
    let mut ids: Vec<usize> = (0..n).map(|i| i % k_true).collect();
    let mut rng = rng::substream(seed, tag::SYNTH, SHUFFLE << 32);
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        ids.swap(i, j);
    }
    let rendered = spec.render_set(|i| ids[i], &profiles, COMPOUND_DOMAIN, n, seed);
    let (images, labels) = rendered.into_iter().unzip();
    Ok(CompoundTarget { images, hidden: HiddenTruth { subdomains: ids, labels } })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpenDomain {
    pub images: Vec<Image>,
    pub hidden_labels: Vec<LabelMap>,
}

impl OpenDomain {
    pub fn labeled(&self) -> Vec<Sample> {
        self.images
            .iter()
            .zip(&self.hidden_labels)
            .map(|(image, label)| Sample { image: image.clone(), label: label.clone() })
            .collect()
    }
}

/// Scenes under the open profile, which must clear the margin against every
/// compound profile.
pub fn generate_open(spec: &SceneSpec, n: usize, seed: u64) -> Result<OpenDomain> {
    spec.validate_basic()?;
    if n == 0 {
        return Err(Error::BadSpec("need at least one open image".into()));
    }
    for p in &spec.compound {
        let d = spec.profile_distance(&spec.open, p);
        if d < spec.margin {
            return Err(Error::BadSpec(format!(
                "open profile {} is {d:.4} from compound profile {}, below the margin {}",
                spec.open.name, p.name, spec.margin
            )));
        }
    }
    let rendered = spec.render_set(|_| 0, &[&spec.open], OPEN_DOMAIN, n, seed);
    let (images, hidden_labels) = rendered.into_iter().unzip();
    Ok(OpenDomain { images, hidden_labels })
}
