//! Embedding extraction, pose vocabularies and the pose regressor.
//!
//! A frozen first-view stream turns an egocentric clip into one embedding per
//! frame. The regressor maps per-frame features (a weak base descriptor,
//! optionally concatenated with the embedding) to the 51 joint coordinates of
//! the aligned skeleton.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::flow::{build_stack, eligible_frames, normalize_stack, FlowProvider, WINDOW_FRAMES};
use crate::math;
use crate::net::{Embedding, Linear, SemiSiameseModel};
use crate::skeleton::{self, GroupName, JointGroup, Skeleton, POSE_DIM};
use crate::tensor::Clip;
use crate::train::Sgd;

/// Per-frame inputs of the pose regressor.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    /// Base descriptor per frame.
    pub base: Vec<Vec<f64>>,
    /// Embedding per frame, aligned with `base`.
    pub embeddings: Vec<Embedding>,
}

impl FeatureSequence {
    pub fn new(base: Vec<Vec<f64>>, embeddings: Vec<Embedding>) -> Result<Self> {
        if base.len() != embeddings.len() {
            return Err(Error::LengthMismatch { left: base.len(), right: embeddings.len() });
        }
        let s = Self { base, embeddings };
        if let (Some(b), Some(e)) = (s.base.first(), s.embeddings.first()) {
            let (bd, ed) = (b.len(), e.dim());
            for (x, z) in s.base.iter().zip(&s.embeddings) {
                if x.len() != bd {
                    return Err(Error::DimensionMismatch { expected: bd, got: x.len() });
                }
                if z.dim() != ed {
                    return Err(Error::DimensionMismatch { expected: ed, got: z.dim() });
                }
                if !x.iter().all(|v| v.is_finite()) || !z.is_finite() {
                    return Err(Error::InvalidConfig("non-finite feature".into()));
                }
            }
        }
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.base.len()
    }

    pub fn is_empty(&self) -> bool {
        self.base.is_empty()
    }

    /// Regressor input of frame `i`: the base descriptor, followed by the
    /// embedding when `use_embedding` is set.
    pub fn input(&self, i: usize, use_embedding: bool) -> Vec<f64> {
        let mut v = self.base[i].clone();
        if use_embedding {
            v.extend_from_slice(self.embeddings[i].as_slice());
        }
        v
    }

    /// Frames `[start, end)` of this sequence.
    pub fn slice(&self, start: usize, end: usize) -> FeatureSequence {
        FeatureSequence {
            base: self.base[start..end].to_vec(),
            embeddings: self.embeddings[start..end].to_vec(),
        }
    }
}

/// Pooled channel statistics of one frame: the mean and standard deviation
/// of every channel.
pub fn base_features(frame: &[f64], channels: usize) -> Vec<f64> {
    let n = frame.len() / channels.max(1);
    let mut out = Vec::with_capacity(2 * channels);
    for c in 0..channels {
        let plane = &frame[c * n..(c + 1) * n];
        let m = math::mean(plane);
        out.push(m);
        out.push(math::sqrt(plane.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n.max(1) as f64));
    }
    out
}

/// First-view embedding of every frame with a full window, in frame order.
/// The model is only read, never updated.
pub fn extract_embeddings(
    model: &SemiSiameseModel,
    clip: &Clip,
    provider: &dyn FlowProvider,
) -> Result<Vec<Embedding>> {
    if clip.len() < WINDOW_FRAMES {
        return Err(Error::ClipTooShort { frames: clip.len(), needed: WINDOW_FRAMES });
    }
    eligible_frames(clip.len())
        .map(|t| {
            let raw = build_stack(clip, t, provider)?;
            let stack = match &model.input_stats {
                Some(s) => normalize_stack(&raw, s)?,
                None => raw,
            };
            model.forward_first(&stack)
        })
        .collect()
}

/// Base descriptors plus embeddings for the eligible frames of a clip.
pub fn feature_sequence(
    model: &SemiSiameseModel,
    clip: &Clip,
    provider: &dyn FlowProvider,
) -> Result<FeatureSequence> {
    let embeddings = extract_embeddings(model, clip, provider)?;
    let base = eligible_frames(clip.len()).map(|t| base_features(clip.frame(t), clip.channels())).collect();
    FeatureSequence::new(base, embeddings)
}

/// Outcome of Lloyd's k-means.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub centers: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    /// Sum of squared distances to the assigned centers after each assignment step.
    pub objective: Vec<f64>,
}

pub const KMEANS_MAX_ITERATIONS: usize = 100;
pub const KMEANS_TOLERANCE: f64 = 1e-6;

/// Index of the nearest row, lowest index on ties.
pub fn nearest(centers: &[Vec<f64>], x: &[f64]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centers.iter().enumerate() {
        let d = math::sq_dist(c, x);
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

/// Lloyd iterations seeded with `k` distinct random samples.
pub fn kmeans(rows: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeans> {
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    for &i in &order {
        if centers.len() == k {
            break;
        }
        if !centers.iter().any(|c| c == &rows[i]) {
            centers.push(rows[i].clone());
        }
    }
    if k == 0 || centers.len() < k {
        return Err(Error::TooFewSamples { have: centers.len(), need: k.max(1) });
    }
    let dim = rows[0].len();
    let mut assignment = alloc::vec![usize::MAX; rows.len()];
    let mut objective = Vec::new();
    for _ in 0..KMEANS_MAX_ITERATIONS {
        let mut changed = false;
        let mut total = 0.0;
        for (a, x) in assignment.iter_mut().zip(rows) {
            let j = nearest(&centers, x);
            total += math::sq_dist(&centers[j], x);
            changed |= *a != j;
            *a = j;
        }
        let prev = objective.last().copied();
        objective.push(total);
        if !changed {
            break;
        }
        if let Some(p) = prev {
            if p - total <= KMEANS_TOLERANCE * p {
                break;
            }
        }
        let mut sums = alloc::vec![alloc::vec![0.0; dim]; k];
        let mut counts = alloc::vec![0usize; k];
        for (x, &a) in rows.iter().zip(&assignment) {
            counts[a] += 1;
            sums[a].iter_mut().zip(x).for_each(|(s, v)| *s += v);
        }
        for ((c, s), n) in centers.iter_mut().zip(sums).zip(counts) {
            // an empty cluster keeps its previous center
            if n > 0 {
                *c = s.into_iter().map(|v| v / n as f64).collect();
            }
        }
    }
    Ok(KMeans { centers, assignment, objective })
}

/// K cluster centers over the coordinates of one joint group.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseVocabulary {
    pub part: GroupName,
    pub seed: u64,
    /// Each center holds `3 × |group|` coordinates, joint-major.
    pub centers: Vec<Vec<f64>>,
}

impl PoseVocabulary {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.centers.first().map_or(0, |c| c.len())
    }

    /// Center `i` as a full skeleton; only for whole-body vocabularies.
    pub fn center_skeleton(&self, i: usize) -> Option<Skeleton> {
        if self.part != GroupName::All {
            return None;
        }
        Skeleton::from_flat(&self.centers[i]).ok()
    }
}

/// Upper-body and lower-body vocabularies quantized independently.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitVocabulary {
    pub upper: PoseVocabulary,
    pub lower: PoseVocabulary,
}

/// Whole-body pose vocabulary with the sample assignment. Inputs are expected
/// to be aligned already (see [`skeleton::align`]).
pub fn quantize_poses(skeletons: &[Skeleton], k: usize, seed: u64) -> Result<(PoseVocabulary, KMeans)> {
    quantize_part(skeletons, GroupName::All, k, seed)
}

pub fn quantize_part(
    skeletons: &[Skeleton],
    part: GroupName,
    k: usize,
    seed: u64,
) -> Result<(PoseVocabulary, KMeans)> {
    let group = JointGroup::by_name(part);
    let rows: Vec<Vec<f64>> = skeletons.iter().map(|s| group.extract(s)).collect();
    let km = kmeans(&rows, k, seed)?;
    Ok((PoseVocabulary { part, seed, centers: km.centers.clone() }, km))
}

pub fn quantize_split(skeletons: &[Skeleton], k_upper: usize, k_lower: usize, seed: u64) -> Result<SplitVocabulary> {
    Ok(SplitVocabulary {
        upper: quantize_part(skeletons, GroupName::Upper, k_upper, seed)?.0,
        lower: quantize_part(skeletons, GroupName::Lower, k_lower, seed)?.0,
    })
}

/// Nearest center to the skeleton's coordinates in the vocabulary's joint group.
///
/// # Panics
/// If the vocabulary is empty.
pub fn nearest_pose<'v>(vocab: &'v PoseVocabulary, s: &Skeleton) -> (usize, &'v [f64]) {
    assert!(!vocab.is_empty(), "empty pose vocabulary");
    let x = JointGroup::by_name(vocab.part).extract(s);
    let i = nearest(&vocab.centers, &x);
    (i, &vocab.centers[i])
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressorConfig {
    pub hidden_dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for RegressorConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 128,
            epochs: 60,
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 32,
            seed: 0,
        }
    }
}

/// One-hidden-layer ReLU network from standardized features to standardized
/// joint coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Regressor {
    pub use_embedding: bool,
    pub input_mean: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub target_mean: Vec<f64>,
    pub target_scale: Vec<f64>,
    pub hidden: Linear,
    pub output: Linear,
}

fn column_stats(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let d = rows[0].len();
    let n = rows.len() as f64;
    let mut mean = alloc::vec![0.0; d];
    for r in rows {
        mean.iter_mut().zip(r).for_each(|(m, v)| *m += v / n);
    }
    let mut var = alloc::vec![0.0; d];
    for r in rows {
        var.iter_mut().zip(r).zip(&mean).for_each(|((s, v), m)| *s += (v - m) * (v - m) / n);
    }
    // constant columns are only centered
    let scale = var.into_iter().map(|v| if v < 1e-16 { 1.0 } else { math::sqrt(v) }).collect();
    (mean, scale)
}

impl Regressor {
    pub fn input_dim(&self) -> usize {
        self.hidden.in_dim
    }

    fn hidden_act(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let xs: Vec<f64> = x
            .iter()
            .zip(&self.input_mean)
            .zip(&self.input_scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect();
        let mut h = self.hidden.forward(&xs);
        h.iter_mut().for_each(|v| *v = v.max(0.0));
        (xs, h)
    }

    /// Prediction in standardized target units.
    fn forward_std(&self, x: &[f64]) -> Vec<f64> {
        self.output.forward(&self.hidden_act(x).1)
    }

    /// Decodes one input row into an aligned-frame skeleton.
    pub fn predict_row(&self, x: &[f64]) -> Result<Skeleton> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), got: x.len() });
        }
        let y: Vec<f64> = self
            .forward_std(x)
            .iter()
            .zip(&self.target_mean)
            .zip(&self.target_scale)
            .map(|((v, m), s)| v * s + m)
            .collect();
        Skeleton::from_flat(&y)
    }
}

fn gather(
    sequences: &[FeatureSequence],
    gt: &[Vec<Skeleton>],
    use_embedding: bool,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    if sequences.len() != gt.len() {
        return Err(Error::DimensionMismatch { expected: sequences.len(), got: gt.len() });
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (seq, g) in sequences.iter().zip(gt) {
        if seq.len() != g.len() {
            return Err(Error::DimensionMismatch { expected: seq.len(), got: g.len() });
        }
        for (i, s) in g.iter().enumerate() {
            xs.push(seq.input(i, use_embedding));
            ys.push(skeleton::align(s)?.to_flat());
        }
    }
    if let Some(first) = xs.first() {
        let d = first.len();
        if let Some(bad) = xs.iter().find(|x| x.len() != d) {
            return Err(Error::DimensionMismatch { expected: d, got: bad.len() });
        }
    } else {
        return Err(Error::EmptySequence);
    }
    Ok((xs, ys))
}

/// Fits the regressor by minibatch SGD on mean squared error against the
/// aligned ground-truth skeletons.
pub fn train_regressor(
    sequences: &[FeatureSequence],
    gt: &[Vec<Skeleton>],
    use_embedding: bool,
    config: &RegressorConfig,
) -> Result<Regressor> {
    if config.hidden_dim == 0 || config.batch_size == 0 {
        return Err(Error::InvalidConfig("regressor hidden size and batch size must be >= 1".into()));
    }
    let (xs, ys) = gather(sequences, gt, use_embedding)?;
    let (input_mean, input_scale) = column_stats(&xs);
    let (target_mean, target_scale) = column_stats(&ys);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let hidden = Linear::new(&mut rng, xs[0].len(), config.hidden_dim);
    let output = Linear::new(&mut rng, config.hidden_dim, POSE_DIM).with_gain(0.5);
    let mut reg = Regressor { use_embedding, input_mean, input_scale, target_mean, target_scale, hidden, output };
    let targets: Vec<Vec<f64>> = ys
        .iter()
        .map(|y| y.iter().zip(&reg.target_mean).zip(&reg.target_scale).map(|((v, m), s)| (v - m) / s).collect())
        .collect();

    let mut opt = Sgd::new(config.learning_rate, config.momentum, config.weight_decay);
    let mut order: Vec<usize> = (0..xs.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            reg.hidden.zero_grad();
            reg.output.zero_grad();
            let scale = 2.0 / batch.len() as f64;
            for &i in batch {
                let (xs_i, h) = reg.hidden_act(&xs[i]);
                let pred = reg.output.forward(&h);
                let g: Vec<f64> = pred.iter().zip(&targets[i]).map(|(p, t)| scale * (p - t)).collect();
                let mut gh = reg.output.backward(&h, &g);
                gh.iter_mut().zip(&h).for_each(|(v, a)| {
                    if *a <= 0.0 {
                        *v = 0.0
                    }
                });
                reg.hidden.backward(&xs_i, &gh);
            }
            opt.step(|f| {
                reg.hidden.visit(f);
                reg.output.visit(f);
            });
        }
    }
    Ok(reg)
}

/// One skeleton per frame, in the aligned body frame.
pub fn predict_sequence(reg: &Regressor, seq: &FeatureSequence) -> Result<Vec<Skeleton>> {
    (0..seq.len()).map(|i| reg.predict_row(&seq.input(i, reg.use_embedding))).collect()
}
