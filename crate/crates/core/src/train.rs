//! Curriculum training of the semi-Siamese model.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{curriculum_batches, ClipPair, CurriculumConfig, Difficulty, DEFAULT_HARD_SHIFTS};
use crate::error::{Error, Result};
use crate::flow::{
    build_stack, eligible_frames, has_window, normalize_stack, ChannelStats, FlowProvider,
    FrameStack,
};
use crate::loss::{contrastive_loss_grad, DEFAULT_MARGIN};
use crate::net::{BackboneKind, Embedding, ModelConfig, SemiSiameseModel, Stream};
use crate::tensor::Clip;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub margin: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub backbone: BackboneKind,
    pub normalize_embeddings: bool,
    /// Distance between sampled center frames within a clip pair.
    pub frame_stride: usize,
    pub negatives_per_positive: f64,
    pub hard_shifts: Vec<i64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            margin: DEFAULT_MARGIN,
            learning_rate: 1e-4,
            momentum: 0.9,
            weight_decay: 5e-4,
            epochs: 2,
            batch_size: 16,
            seed: 0,
            backbone: BackboneKind::Tiny,
            normalize_embeddings: false,
            frame_stride: 4,
            negatives_per_positive: 1.0,
            hard_shifts: DEFAULT_HARD_SHIFTS.to_vec(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.margin > 0.0) {
            return bad("margin must be > 0");
        }
        if !(self.learning_rate >= 0.0) {
            return bad("learning rate must be >= 0");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight decay must be >= 0");
        }
        if self.epochs == 0 || self.batch_size == 0 || self.frame_stride == 0 {
            return bad("epochs, batch size and frame stride must be >= 1");
        }
        Ok(())
    }

    /// Model architecture implied by this config for `height × width` stacks.
    pub fn model_config(&self, height: usize, width: usize) -> ModelConfig {
        ModelConfig {
            backbone: self.backbone,
            height,
            width,
            normalize_embeddings: self.normalize_embeddings,
            seed: self.seed,
            ..ModelConfig::default()
        }
    }

    pub fn curriculum(&self) -> CurriculumConfig {
        CurriculumConfig { negatives_per_positive: self.negatives_per_positive, seed: self.seed }
    }
}

/// SGD with momentum and L2 weight decay:
/// `v ← μ v + (g + λ w)`, `w ← w − η v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(learning_rate: f64, momentum: f64, weight_decay: f64) -> Self {
        Self { learning_rate, momentum, weight_decay, velocity: Vec::new() }
    }

    /// Applies one update given a visitor over `(parameter, gradient)` buffers.
    pub fn step(&mut self, visit: impl FnOnce(&mut dyn FnMut(&mut [f64], &[f64]))) {
        let (lr, mu, wd) = (self.learning_rate, self.momentum, self.weight_decay);
        let velocity = &mut self.velocity;
        let mut slot = 0;
        visit(&mut |params, grads| {
            if velocity.len() <= slot {
                velocity.push(alloc::vec![0.0; params.len()]);
            }
            let v = &mut velocity[slot];
            for ((w, g), vi) in params.iter_mut().zip(grads).zip(v.iter_mut()) {
                *vi = mu * *vi + g + wd * *w;
                *w -= lr * *vi;
            }
            slot += 1;
        });
    }
}

/// One frame-level training pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameSample {
    pub first_clip: usize,
    pub third_clip: usize,
    pub first_frame: usize,
    pub third_frame: usize,
    pub synchronized: bool,
    pub difficulty: Difficulty,
}

/// Supplies frame pairs per epoch and the stacks they refer to.
pub trait PairSource {
    fn samples(&self, epoch: usize) -> Result<Vec<FrameSample>>;

    /// Network-ready stack (already standardized) of clip `clip` at frame `t`.
    fn stack(&self, clip: usize, t: usize) -> Result<FrameStack>;

    /// Human-readable identity of a sample for diagnostics.
    fn describe(&self, sample: &FrameSample) -> String;
}

/// Clips plus mined pairs, expanded to frame samples through the curriculum.
#[derive(Debug)]
pub struct PairDataset<'a, P: FlowProvider> {
    clips: &'a [Clip],
    index: BTreeMap<String, usize>,
    pairs: Vec<ClipPair>,
    provider: P,
    curriculum: CurriculumConfig,
    stride: usize,
    stats: Option<ChannelStats>,
}

impl<'a, P: FlowProvider> PairDataset<'a, P> {
    pub fn new(
        clips: &'a [Clip],
        pairs: Vec<ClipPair>,
        provider: P,
        curriculum: CurriculumConfig,
        stride: usize,
    ) -> Result<Self> {
        let index: BTreeMap<String, usize> =
            clips.iter().enumerate().map(|(i, c)| (c.id.clone(), i)).collect();
        for p in &pairs {
            for id in [&p.first.clip_id, &p.third.clip_id] {
                if !index.contains_key(id) {
                    return Err(Error::InvalidConfig(alloc::format!("no frames for clip `{id}`")));
                }
            }
        }
        if stride == 0 {
            return Err(Error::InvalidConfig("frame stride must be >= 1".into()));
        }
        Ok(Self { clips, index, pairs, provider, curriculum, stride, stats: None })
    }

    pub fn pairs(&self) -> &[ClipPair] {
        &self.pairs
    }

    pub fn provider(&self) -> &P {
        &self.provider
    }

    pub fn set_stats(&mut self, stats: Option<ChannelStats>) {
        self.stats = stats;
    }

    pub fn stats(&self) -> Option<&ChannelStats> {
        self.stats.as_ref()
    }

    pub fn clip_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Fits channel statistics on raw stacks from every clip referenced by the
    /// pairs, taking every `every`-th eligible frame.
    pub fn fit_stats(&mut self, every: usize) -> Result<ChannelStats> {
        let mut clips: Vec<usize> = self
            .pairs
            .iter()
            .flat_map(|p| [self.index[&p.first.clip_id], self.index[&p.third.clip_id]])
            .collect();
        clips.sort_unstable();
        clips.dedup();
        let mut stacks = Vec::new();
        for c in clips {
            for t in eligible_frames(self.clips[c].len()).step_by(every.max(1)) {
                stacks.push(build_stack(&self.clips[c], t, &self.provider)?);
            }
        }
        let stats = ChannelStats::from_stacks(&stacks)?;
        self.stats = Some(stats.clone());
        Ok(stats)
    }

    /// Frame samples of one clip pair; `offset` shifts the stride grid.
    pub fn expand(&self, pair: &ClipPair, offset: usize) -> Vec<FrameSample> {
        let fi = self.index[&pair.first.clip_id];
        let ti = self.index[&pair.third.clip_id];
        let (lf, lt) = (self.clips[fi].len(), self.clips[ti].len());
        let frames = eligible_frames(lf);
        let start = frames.start + offset % self.stride;
        (start..frames.end)
            .step_by(self.stride)
            .filter_map(|t| {
                let t3 = t as i64 + pair.time_shift;
                (t3 >= 0 && has_window(lt, t3 as usize)).then(|| FrameSample {
                    first_clip: fi,
                    third_clip: ti,
                    first_frame: t,
                    third_frame: t3 as usize,
                    synchronized: pair.synchronized,
                    difficulty: pair.difficulty,
                })
            })
            .collect()
    }

    /// Frame samples for an explicit pair list, unshuffled.
    pub fn expand_all(&self, pairs: &[ClipPair], offset: usize) -> Vec<FrameSample> {
        pairs.iter().flat_map(|p| self.expand(p, offset)).collect()
    }
}

impl<P: FlowProvider> PairSource for PairDataset<'_, P> {
    fn samples(&self, epoch: usize) -> Result<Vec<FrameSample>> {
        let pairs = curriculum_batches(&self.pairs, epoch, &self.curriculum)?;
        let mut out = self.expand_all(&pairs, epoch.saturating_sub(1));
        let mut rng = ChaCha8Rng::seed_from_u64(self.curriculum.seed.wrapping_add(epoch as u64) ^ 0x5A17);
        out.shuffle(&mut rng);
        Ok(out)
    }

    fn stack(&self, clip: usize, t: usize) -> Result<FrameStack> {
        let raw = build_stack(&self.clips[clip], t, &self.provider)?;
        match &self.stats {
            Some(s) => normalize_stack(&raw, s),
            None => Ok(raw),
        }
    }

    fn describe(&self, s: &FrameSample) -> String {
        alloc::format!(
            "{}@{}|{}@{}",
            self.clips[s.first_clip].id,
            s.first_frame,
            self.clips[s.third_clip].id,
            s.third_frame
        )
    }
}

/// One optimizer step of the loss history.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    /// Batch loss divided by the batch size.
    pub loss: f64,
    pub positives: usize,
    pub easy_negatives: usize,
    pub hard_negatives: usize,
}

/// Trains `model` in place over `config.epochs` curriculum epochs and returns
/// the per-step loss history.
pub fn train(
    model: &mut SemiSiameseModel,
    source: &dyn PairSource,
    config: &TrainConfig,
) -> Result<Vec<StepRecord>> {
    config.validate()?;
    let mut opt = Sgd::new(config.learning_rate, config.momentum, config.weight_decay);
    let mut history = Vec::new();
    let mut step = 0;
    for epoch in 1..=config.epochs {
        let samples = source.samples(epoch)?;
        if samples.is_empty() {
            return Err(Error::EmptyStream);
        }
        for batch in samples.chunks(config.batch_size) {
            model.zero_grad();
            let mut zf = Vec::with_capacity(batch.len());
            let mut zt = Vec::with_capacity(batch.len());
            let mut traces = Vec::with_capacity(batch.len());
            let mut labels = Vec::with_capacity(batch.len());
            for s in batch {
                let (a, ta) = model.forward_trace(Stream::First, &source.stack(s.first_clip, s.first_frame)?)?;
                let (b, tb) = model.forward_trace(Stream::Third, &source.stack(s.third_clip, s.third_frame)?)?;
                zf.push(a);
                zt.push(b);
                traces.push((ta, tb));
                labels.push(s.synchronized);
            }
            let lg = contrastive_loss_grad(&zf, &zt, &labels, config.margin)?;
            if !lg.loss.is_finite() {
                let pairs: Vec<String> = batch.iter().map(|s| source.describe(s)).collect();
                return Err(Error::NonFiniteLoss { step, pairs: pairs.join(",") });
            }
            for ((ta, tb), (gf, gt)) in traces.iter().zip(lg.grad_first.iter().zip(&lg.grad_third)) {
                model.backward(ta, gf);
                model.backward(tb, gt);
            }
            opt.step(|f| model.visit_params(f));
            let count = |d: Difficulty| batch.iter().filter(|s| s.difficulty == d).count();
            history.push(StepRecord {
                step,
                epoch,
                loss: lg.loss / batch.len() as f64,
                positives: count(Difficulty::Positive),
                easy_negatives: count(Difficulty::EasyNegative),
                hard_negatives: count(Difficulty::HardNegative),
            });
            step += 1;
        }
    }
    Ok(history)
}

/// Embedding distance of every sample, in order.
pub fn pair_distances(
    model: &SemiSiameseModel,
    source: &dyn PairSource,
    samples: &[FrameSample],
) -> Result<Vec<f64>> {
    samples
        .iter()
        .map(|s| {
            let a: Embedding = model.forward_first(&source.stack(s.first_clip, s.first_frame)?)?;
            let b = model.forward_third(&source.stack(s.third_clip, s.third_frame)?)?;
            Ok(a.distance(&b))
        })
        .collect()
}

/// Threshold on embedding distance that best separates synchronized
/// (`distance ≤ threshold`) from unsynchronized pairs, and its accuracy.
pub fn best_threshold(distances: &[f64], synchronized: &[bool]) -> (f64, f64) {
    let mut order: Vec<usize> = (0..distances.len()).collect();
    order.sort_by(|&a, &b| distances[a].total_cmp(&distances[b]));
    let n = distances.len().max(1) as f64;
    let total_neg = synchronized.iter().filter(|s| !**s).count();
    // threshold below everything: every pair called unsynchronized
    let mut correct = total_neg;
    let mut best = (correct, f64::NEG_INFINITY);
    for (k, &i) in order.iter().enumerate() {
        if synchronized[i] {
            correct += 1;
        } else {
            correct -= 1;
        }
        let next = order.get(k + 1).map(|&j| distances[j]);
        if next == Some(distances[i]) {
            continue;
        }
        let thr = match next {
            Some(d) => 0.5 * (distances[i] + d),
            None => distances[i],
        };
        if correct > best.0 {
            best = (correct, thr);
        }
    }
    (best.1, best.0 as f64 / n)
}

/// Accuracy of `distance ≤ threshold ⇔ synchronized`.
pub fn threshold_accuracy(distances: &[f64], synchronized: &[bool], threshold: f64) -> f64 {
    let hits = distances.iter().zip(synchronized).filter(|(d, s)| (**d <= threshold) == **s).count();
    hits as f64 / distances.len().max(1) as f64
}

/// Mean of the per-class accuracies of `distance ≤ threshold ⇔ synchronized`,
/// insensitive to how many negatives there are per positive.
pub fn balanced_accuracy(distances: &[f64], synchronized: &[bool], threshold: f64) -> f64 {
    let mut hit = [0usize; 2];
    let mut total = [0usize; 2];
    for (d, &s) in distances.iter().zip(synchronized) {
        total[s as usize] += 1;
        hit[s as usize] += ((*d <= threshold) == s) as usize;
    }
    let rates: Vec<f64> = (0..2).filter(|&k| total[k] > 0).map(|k| hit[k] as f64 / total[k] as f64).collect();
    rates.iter().sum::<f64>() / rates.len().max(1) as f64
}

/// Threshold maximizing [`balanced_accuracy`], taken midway between
/// consecutive distinct distances, and the accuracy it reaches.
pub fn best_balanced_threshold(distances: &[f64], synchronized: &[bool]) -> (f64, f64) {
    let mut order: Vec<usize> = (0..distances.len()).collect();
    order.sort_by(|&a, &b| distances[a].total_cmp(&distances[b]));
    let n_pos = synchronized.iter().filter(|s| **s).count().max(1) as f64;
    let n_neg = synchronized.iter().filter(|s| !**s).count().max(1) as f64;
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut best = (0.5, f64::NEG_INFINITY);
    for (k, &i) in order.iter().enumerate() {
        if synchronized[i] {
            tp += 1.0;
        } else {
            fp += 1.0;
        }
        let next = order.get(k + 1).map(|&j| distances[j]);
        if next == Some(distances[i]) {
            continue;
        }
        let acc = 0.5 * (tp / n_pos + (n_neg - fp) / n_neg);
        if acc > best.0 {
            best = (acc, next.map_or(distances[i], |d| 0.5 * (distances[i] + d)));
        }
    }
    (best.1, best.0)
}
