//! Automatic domain separation: k-means over style descriptors, scored with
//! the summed silhouette coefficient, keeping the best-scoring cluster count.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::color::{euclidean, StyleDescriptor};
use crate::error::{Error, Result};
use crate::rng::{self, tag};

const RESTARTS: u64 = 10;
const MAX_ITERS: usize = 300;
const REL_SHIFT_TOL: f64 = 1e-6;
const MAX_RESEEDS: usize = 10;
/// Above this many images the silhouette is estimated on a subsample.
pub const SUBSAMPLE_ABOVE: usize = 5_000;
pub const SUBSAMPLE_SIZE: usize = 2_000;

/// Symmetric matrix of Euclidean descriptor distances.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    values: Vec<f64>,
}

impl DistanceMatrix {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }
}

pub fn pairwise_distances(descs: &[StyleDescriptor]) -> Result<DistanceMatrix> {
    let n = descs.len();
    if n < 2 {
        return Err(Error::TooFewImages { needed: 2, got: n });
    }
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = descs[i].distance(&descs[j]);
            values[i * n + j] = d;
            values[j * n + i] = d;
        }
    }
    Ok(DistanceMatrix { n, values })
}

/// Assignment of images to `k` subdomains (0-based indices).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubdomainPartition {
    k: usize,
    assignment: Vec<usize>,
    k_star: Option<usize>,
}

impl SubdomainPartition {
    /// Builds a partition; every index below `k` must be used.
    pub fn new(k: usize, assignment: Vec<usize>) -> Result<Self> {
        let mut used = vec![false; k];
        for &a in &assignment {
            if a >= k {
                return Err(Error::BadK { k: a + 1, min: 1, max: k });
            }
            used[a] = true;
        }
        if used.iter().any(|u| !u) {
            return Err(Error::EmptyClusterUnrecoverable { k });
        }
        Ok(Self { k, assignment, k_star: None })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn k_star(&self) -> Option<usize> {
        self.k_star
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &a in &self.assignment {
            s[a] += 1;
        }
        s
    }

    /// Indices of the images in cluster `m`.
    pub fn members(&self, m: usize) -> Vec<usize> {
        self.assignment.iter().enumerate().filter(|(_, &a)| a == m).map(|(i, _)| i).collect()
    }
}

fn check_partition(part: &SubdomainPartition, d: &DistanceMatrix) -> Result<()> {
    if part.len() != d.len() {
        return Err(Error::DimensionMismatch(alloc::format!(
            "partition of {} vs {} distances",
            part.len(),
            d.len()
        )));
    }
    Ok(())
}

/// Mean distance from image `i` to the other members of its cluster.
pub fn gamma(i: usize, part: &SubdomainPartition, d: &DistanceMatrix) -> Result<f64> {
    check_partition(part, d)?;
    let own = part.assignment[i];
    let (sum, count) = part
        .assignment
        .iter()
        .enumerate()
        .filter(|&(j, &a)| a == own && j != i)
        .fold((0.0, 0usize), |(s, c), (j, _)| (s + d.get(i, j), c + 1));
    if count == 0 {
        return Err(Error::SingletonCluster { index: i });
    }
    Ok(sum / count as f64)
}

/// Smallest mean distance from image `i` to any foreign cluster.
pub fn delta(i: usize, part: &SubdomainPartition, d: &DistanceMatrix) -> Result<f64> {
    check_partition(part, d)?;
    if part.k < 2 {
        return Err(Error::SingleCluster);
    }
    let own = part.assignment[i];
    let mut sums = vec![0.0; part.k];
    let mut counts = vec![0usize; part.k];
    for (j, &a) in part.assignment.iter().enumerate() {
        sums[a] += d.get(i, j);
        counts[a] += 1;
    }
    Ok((0..part.k)
        .filter(|&m| m != own && counts[m] > 0)
        .map(|m| sums[m] / counts[m] as f64)
        .fold(f64::INFINITY, f64::min))
}

/// Per-image silhouette terms `(δ − γ) / max(γ, δ)`. Singleton members and
/// the `0 / 0` case contribute 0.
pub fn silhouette_terms(part: &SubdomainPartition, d: &DistanceMatrix) -> Result<Vec<f64>> {
    check_partition(part, d)?;
    if part.k < 2 {
        return Err(Error::SingleCluster);
    }
    let sizes = part.cluster_sizes();
    let mut terms = Vec::with_capacity(part.len());
    let mut sums = vec![0.0; part.k];
    for i in 0..part.len() {
        let own = part.assignment[i];
        if sizes[own] < 2 {
            terms.push(0.0);
            continue;
        }
        sums.iter_mut().for_each(|s| *s = 0.0);
        for (j, &a) in part.assignment.iter().enumerate() {
            sums[a] += d.get(i, j);
        }
        let g = sums[own] / (sizes[own] - 1) as f64;
        let dl = (0..part.k)
            .filter(|&m| m != own && sizes[m] > 0)
            .map(|m| sums[m] / sizes[m] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = if g > dl { g } else { dl };
        terms.push(if denom > 0.0 { (dl - g) / denom } else { 0.0 });
    }
    Ok(terms)
}

/// Summed silhouette coefficient `SC(k)`.
pub fn silhouette_score(part: &SubdomainPartition, d: &DistanceMatrix) -> Result<f64> {
    Ok(silhouette_terms(part, d)?.iter().sum())
}

/// Mean silhouette, `SC(k) / n`.
pub fn silhouette_mean(part: &SubdomainPartition, d: &DistanceMatrix) -> Result<f64> {
    Ok(silhouette_score(part, d)? / part.len() as f64)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

struct KMeansRun {
    assignment: Vec<usize>,
    inertia: f64,
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn kmeans_plus_plus<R: Rng>(points: &[&[f64]], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = Vec::with_capacity(k);
    centroids.push(points[rng.gen_range(0..n)].to_vec());
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng::unit(rng) * total;
            let mut idx = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    idx = i;
                    break;
                }
                target -= w;
            }
            idx
        } else {
            rng.gen_range(0..n)
        };
        centroids.push(points[pick].to_vec());
        for (slot, p) in d2.iter_mut().zip(points) {
            let d = sq_dist(p, &centroids[centroids.len() - 1]);
            if d < *slot {
                *slot = d;
            }
        }
    }
    centroids
}

fn kmeans_once<R: Rng>(points: &[&[f64]], k: usize, rng: &mut R) -> Result<KMeansRun> {
    let dim = points[0].len();
    let mut centroids = kmeans_plus_plus(points, k, rng);
    let mut assignment = vec![0usize; points.len()];
    let mut reseeds = 0;
    for _ in 0..MAX_ITERS {
        let mut dists = vec![0.0; points.len()];
        for (i, p) in points.iter().enumerate() {
            let (c, d) = nearest(p, &centroids);
            assignment[i] = c;
            dists[i] = d;
        }
        let mut counts = vec![0usize; k];
        for &a in &assignment {
            counts[a] += 1;
        }
        if let Some(empty) = counts.iter().position(|&c| c == 0) {
            reseeds += 1;
            if reseeds > MAX_RESEEDS {
                return Err(Error::EmptyClusterUnrecoverable { k });
            }
            // Move the empty centroid onto the point worst served by its own
            // cluster, restricted to clusters that can spare a member.
            let far = (0..points.len())
                .filter(|&i| counts[assignment[i]] > 1)
                .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)));
            match far {
                Some(i) => centroids[empty] = points[i].to_vec(),
                None => return Err(Error::EmptyClusterUnrecoverable { k }),
            }
            continue;
        }
        let mut next = vec![vec![0.0; dim]; k];
        for (p, &a) in points.iter().zip(&assignment) {
            for (acc, v) in next[a].iter_mut().zip(p.iter()) {
                *acc += v;
            }
        }
        for (c, cnt) in next.iter_mut().zip(&counts) {
            c.iter_mut().for_each(|v| *v /= *cnt as f64);
        }
        let shift = centroids.iter().zip(&next).map(|(a, b)| euclidean(a, b)).fold(0.0, f64::max);
        let scale = next.iter().map(|c| crate::math::sqrt(sq_dist(c, &vec![0.0; dim]))).sum::<f64>() / k as f64;
        centroids = next;
        if shift <= REL_SHIFT_TOL * scale.max(f64::MIN_POSITIVE) {
            break;
        }
    }
    let mut inertia = 0.0;
    let mut counts = vec![0usize; k];
    for (i, p) in points.iter().enumerate() {
        let (c, d) = nearest(p, &centroids);
        assignment[i] = c;
        inertia += d;
        counts[c] += 1;
    }
    if counts.contains(&0) {
        return Err(Error::EmptyClusterUnrecoverable { k });
    }
    Ok(KMeansRun { assignment, inertia })
}

/// Seeded k-means (k-means++ seeding, best of 10 restarts by inertia).
pub fn cluster(descs: &[StyleDescriptor], k: usize, seed: u64) -> Result<SubdomainPartition> {
    let n = descs.len();
    if k < 2 || k > n {
        return Err(Error::BadK { k, min: 2, max: n });
    }
    let points: Vec<&[f64]> = descs.iter().map(|d| d.as_slice()).collect();
    let mut best: Option<KMeansRun> = None;
    let mut last_err = None;
    for restart in 0..RESTARTS {
        let mut rng = rng::substream(seed, tag::KMEANS, (k as u64) << 8 | restart);
        match kmeans_once(&points, k, &mut rng) {
            Ok(run) => {
                if best.as_ref().map_or(true, |b| run.inertia < b.inertia) {
                    best = Some(run);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    match best {
        Some(run) => SubdomainPartition::new(k, run.assignment),
        None => Err(last_err.unwrap_or(Error::EmptyClusterUnrecoverable { k })),
    }
}

/// One point of the SC-versus-k curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScPoint {
    pub k: usize,
    pub score: f64,
    pub mean: f64,
}

/// Outcome of [`auto_separate`]: the selected partition and the full curve.
#[derive(Debug, Clone, PartialEq)]
pub struct Separation {
    pub partition: SubdomainPartition,
    pub curve: Vec<ScPoint>,
}

/// Default search range `[2, min(8, n − 1)]`.
pub fn default_k_range(n: usize) -> (usize, usize) {
    (2, 8.min(n.saturating_sub(1)).max(2))
}

fn score_partition(descs: &[StyleDescriptor], part: &SubdomainPartition, seed: u64) -> Result<ScPoint> {
    let n = descs.len();
    if n <= SUBSAMPLE_ABOVE {
        let d = pairwise_distances(descs)?;
        let score = silhouette_score(part, &d)?;
        return Ok(ScPoint { k: part.k(), score, mean: score / n as f64 });
    }
    // Seeded uniform subsample; the sum is rescaled to the full population.
    let mut rng = rng::substream(seed, tag::SUBSAMPLE, part.k() as u64);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..SUBSAMPLE_SIZE {
        let j = rng.gen_range(i..n);
        idx.swap(i, j);
    }
    idx.truncate(SUBSAMPLE_SIZE);
    idx.sort_unstable();
    let sub: Vec<StyleDescriptor> = idx.iter().map(|&i| descs[i].clone()).collect();
    let mut labels: Vec<usize> = idx.iter().map(|&i| part.assignment()[i]).collect();
    // Relabel so the sample partition is dense.
    let mut remap = vec![usize::MAX; part.k()];
    let mut next = 0;
    for l in labels.iter_mut() {
        if remap[*l] == usize::MAX {
            remap[*l] = next;
            next += 1;
        }
        *l = remap[*l];
    }
    if next < 2 {
        return Ok(ScPoint { k: part.k(), score: 0.0, mean: 0.0 });
    }
    let sub_part = SubdomainPartition::new(next, labels)?;
    let d = pairwise_distances(&sub)?;
    let mean = silhouette_mean(&sub_part, &d)?;
    Ok(ScPoint { k: part.k(), score: mean * n as f64, mean })
}

/// Clusters for every `k` in `[k_min, k_max]` and keeps the argmax of the
/// summed silhouette; ties go to the smaller `k`.
pub fn auto_separate(descs: &[StyleDescriptor], k_min: usize, k_max: usize, seed: u64) -> Result<Separation> {
    let n = descs.len();
    if k_min < 2 || k_min > k_max || k_max + 1 > n {
        return Err(Error::BadK { k: if k_min < 2 { k_min } else { k_max }, min: 2, max: n.saturating_sub(1) });
    }
    let mut curve = Vec::with_capacity(k_max - k_min + 1);
    let mut best: Option<(f64, SubdomainPartition)> = None;
    for k in k_min..=k_max {
        let part = cluster(descs, k, seed)?;
        let point = score_partition(descs, &part, seed)?;
        curve.push(point);
        if best.as_ref().map_or(true, |(s, _)| point.score > *s) {
            best = Some((point.score, part));
        }
    }
    let (_, mut partition) = best.expect("range is non-empty");
    partition.k_star = Some(partition.k);
    Ok(Separation { partition, curve })
}
