//! Pipeline stages over in-memory data. The command layer loads and saves
//! artifacts around these; tests call them directly.

use std::collections::BTreeMap;

use egosync_core::analysis::{self, ActivityClass, Transversal};
use egosync_core::data::synthetic::SyntheticDataset;
use egosync_core::data::{mine_negative_pairs, mine_positive_pairs, ClipPair, ClipRecord, Difficulty, NegativeKind, View};
use egosync_core::flow::{eligible_frames, GradientFlow, PrecomputedFlow, ZeroFlow, HALF_WINDOW};
use egosync_core::net::{Embedding, SemiSiameseModel};
use egosync_core::skeleton::{self, GroupName, Joint, JointGroup, Skeleton, NUM_JOINTS};
use egosync_core::tensor::Clip;
use egosync_core::train::{self, best_balanced_threshold, balanced_accuracy, pair_distances, PairDataset, StepRecord};
use egosync_core::transfer::{self, FeatureSequence, PoseVocabulary, Regressor, SplitVocabulary};

use crate::config::{FlowKind, RunConfig};
use crate::error::{AppError, Result};

/// Frame stride used when scoring pair distances for evaluation.
pub const EVAL_STRIDE: usize = 3;

/// Clips, their manifest records and per-recording ground-truth skeletons
/// keyed by `(person, activity)`.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub records: Vec<ClipRecord>,
    pub clips: Vec<Clip>,
    pub skeletons: BTreeMap<(u32, u32), Vec<Skeleton>>,
}

impl Corpus {
    pub fn from_synthetic(ds: SyntheticDataset) -> Self {
        let skeletons = ds.recordings.into_iter().map(|r| ((r.person_id, r.activity_id), r.skeletons)).collect();
        Corpus { records: ds.records, clips: ds.clips, skeletons }
    }

    pub fn clip(&self, id: &str) -> Option<&Clip> {
        self.clips.iter().find(|c| c.id == id)
    }

    pub fn people(&self) -> Vec<u32> {
        let mut p: Vec<u32> = self.records.iter().map(|r| r.person_id).collect();
        p.sort_unstable();
        p.dedup();
        p
    }

    /// First-view records, in manifest order.
    pub fn first_view(&self) -> impl Iterator<Item = &ClipRecord> {
        self.records.iter().filter(|r| r.view == View::First)
    }

    fn clip_of(&self, r: &ClipRecord) -> Result<&Clip> {
        self.clip(&r.clip_id).ok_or_else(|| AppError::Config(format!("no frames for clip `{}`", r.clip_id)))
    }

    /// Ground truth of the eligible frames of a first-view clip.
    pub fn frame_targets(&self, r: &ClipRecord) -> Result<Vec<Skeleton>> {
        let gt = self
            .skeletons
            .get(&(r.person_id, r.activity_id))
            .ok_or_else(|| AppError::Config(format!("no ground truth for person {} activity {}", r.person_id, r.activity_id)))?;
        let n = self.clip_of(r)?.len();
        if gt.len() != n {
            return Err(egosync_core::Error::LengthMismatch { left: n, right: gt.len() }.into());
        }
        Ok(gt[eligible_frames(n)].to_vec())
    }
}

/// Caches the configured flow of every clip.
pub fn flow_cache(corpus: &Corpus, kind: FlowKind) -> Result<PrecomputedFlow> {
    let mut cache = PrecomputedFlow::new();
    for c in &corpus.clips {
        match kind {
            FlowKind::Gradient => cache.cache_clip(c, &GradientFlow::default())?,
            FlowKind::Zero => cache.cache_clip(c, &ZeroFlow)?,
        }
    }
    Ok(cache)
}

/// Positives plus both kinds of negatives; the curriculum picks per epoch.
pub fn mine_all(records: &[ClipRecord], shifts: &[i64]) -> Result<Vec<ClipPair>> {
    let mut pairs = mine_positive_pairs(records);
    pairs.extend(mine_negative_pairs(records, NegativeKind::Easy, shifts)?);
    pairs.extend(mine_negative_pairs(records, NegativeKind::Hard, shifts)?);
    Ok(pairs)
}

fn split(corpus: &Corpus, test_person: u32) -> (Vec<ClipRecord>, Vec<ClipRecord>) {
    corpus.records.iter().cloned().partition(|r| r.person_id != test_person)
}

fn frame_shape(corpus: &Corpus) -> Result<(usize, usize)> {
    let c = corpus.clips.first().ok_or(egosync_core::Error::EmptyStream)?;
    Ok((c.height(), c.width()))
}

/// Trains the embedding network on every person but the held-out one. The
/// returned model carries the input statistics it was trained with.
pub fn train_embedding(
    corpus: &Corpus,
    flows: &PrecomputedFlow,
    cfg: &RunConfig,
) -> Result<(SemiSiameseModel, Vec<StepRecord>)> {
    let (train_records, _) = split(corpus, cfg.test_person());
    if train_records.is_empty() {
        return Err(AppError::Config("no training people left after holding one out".into()));
    }
    let pairs = mine_all(&train_records, &cfg.train.hard_shifts)?;
    let mut source = PairDataset::new(&corpus.clips, pairs, flows, cfg.train.curriculum(), cfg.train.frame_stride)?;
    let stats = source.fit_stats(cfg.stats_every)?;
    let (h, w) = frame_shape(corpus)?;
    let mut model = SemiSiameseModel::new(cfg.train.model_config(h, w))?;
    let history = train::train(&mut model, &source, &cfg.train)?;
    model.input_stats = Some(stats);
    Ok((model, history))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceSummary {
    pub difficulty: Difficulty,
    pub count: usize,
    pub mean: f64,
}

/// Synchronization verdicts on held-out pairs with a threshold chosen on
/// training pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct SyncReport {
    pub by_difficulty: Vec<DistanceSummary>,
    pub mean_positive: f64,
    pub mean_negative: f64,
    pub threshold: f64,
    pub train_balanced_accuracy: f64,
    pub test_balanced_accuracy: f64,
}

impl SyncReport {
    /// Mean negative distance over mean positive distance.
    pub fn margin_ratio(&self) -> f64 {
        self.mean_negative / self.mean_positive
    }
}

fn scored(
    model: &SemiSiameseModel,
    corpus: &Corpus,
    flows: &PrecomputedFlow,
    cfg: &RunConfig,
    records: &[ClipRecord],
) -> Result<(Vec<f64>, Vec<bool>, Vec<Difficulty>)> {
    let pairs = mine_all(records, &cfg.train.hard_shifts)?;
    let mut source = PairDataset::new(&corpus.clips, pairs, flows, cfg.train.curriculum(), EVAL_STRIDE)?;
    source.set_stats(model.input_stats.clone());
    let samples = source.expand_all(source.pairs(), 0);
    let d = pair_distances(model, &source, &samples)?;
    Ok((d, samples.iter().map(|s| s.synchronized).collect(), samples.iter().map(|s| s.difficulty).collect()))
}

pub fn evaluate_sync(
    model: &SemiSiameseModel,
    corpus: &Corpus,
    flows: &PrecomputedFlow,
    cfg: &RunConfig,
) -> Result<SyncReport> {
    let (train_records, test_records) = split(corpus, cfg.test_person());
    if test_records.is_empty() {
        return Err(AppError::Config(format!("held-out person {} has no clips", cfg.test_person())));
    }
    let (dtr, ytr, _) = scored(model, corpus, flows, cfg, &train_records)?;
    let (threshold, train_balanced_accuracy) = best_balanced_threshold(&dtr, &ytr);
    let (d, y, kinds) = scored(model, corpus, flows, cfg, &test_records)?;
    let mean_where = |f: &dyn Fn(usize) -> bool| {
        let v: Vec<f64> = (0..d.len()).filter(|&i| f(i)).map(|i| d[i]).collect();
        (v.len(), v.iter().sum::<f64>() / v.len().max(1) as f64)
    };
    let by_difficulty = [Difficulty::Positive, Difficulty::EasyNegative, Difficulty::HardNegative]
        .into_iter()
        .map(|k| {
            let (count, mean) = mean_where(&|i| kinds[i] == k);
            DistanceSummary { difficulty: k, count, mean }
        })
        .collect();
    Ok(SyncReport {
        by_difficulty,
        mean_positive: mean_where(&|i| y[i]).1,
        mean_negative: mean_where(&|i| !y[i]).1,
        threshold,
        train_balanced_accuracy,
        test_balanced_accuracy: balanced_accuracy(&d, &y, threshold),
    })
}

/// Regressor inputs of every first-view clip, keyed by clip id.
pub fn feature_sequences(
    model: &SemiSiameseModel,
    corpus: &Corpus,
    flows: &PrecomputedFlow,
) -> Result<BTreeMap<String, FeatureSequence>> {
    corpus
        .first_view()
        .map(|r| Ok((r.clip_id.clone(), transfer::feature_sequence(model, corpus.clip_of(r)?, flows)?)))
        .collect()
}

fn gather<'a>(
    corpus: &'a Corpus,
    features: &BTreeMap<String, FeatureSequence>,
    keep: impl Fn(&ClipRecord) -> bool,
) -> Result<(Vec<FeatureSequence>, Vec<Vec<Skeleton>>)> {
    let mut seqs = Vec::new();
    let mut gts = Vec::new();
    for r in corpus.first_view().filter(|r| keep(r)) {
        let f = features.get(&r.clip_id).ok_or_else(|| AppError::Config(format!("no features for `{}`", r.clip_id)))?;
        seqs.push(f.clone());
        gts.push(corpus.frame_targets(r)?);
    }
    Ok((seqs, gts))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseModels {
    pub baseline: Regressor,
    pub augmented: Regressor,
}

/// Baseline (base features only) and embedding-augmented regressors, trained
/// on the same frames with the same seed.
pub fn train_pose(corpus: &Corpus, features: &BTreeMap<String, FeatureSequence>, cfg: &RunConfig) -> Result<PoseModels> {
    let test = cfg.test_person();
    let (seqs, gts) = gather(corpus, features, |r| r.person_id != test)?;
    let rc = &cfg.transfer.regressor;
    Ok(PoseModels {
        baseline: transfer::train_regressor(&seqs, &gts, false, rc)?,
        augmented: transfer::train_regressor(&seqs, &gts, true, rc)?,
    })
}

/// Aligned ground truth of the training people, frame by frame.
pub fn training_poses(corpus: &Corpus, cfg: &RunConfig) -> Result<Vec<Skeleton>> {
    let test = cfg.test_person();
    let mut out = Vec::new();
    for r in corpus.first_view().filter(|r| r.person_id != test) {
        for s in corpus.frame_targets(r)? {
            out.push(skeleton::align(&s)?);
        }
    }
    Ok(out)
}

fn distinct(rows: &[Vec<f64>]) -> usize {
    let mut keys: Vec<Vec<u64>> = rows.iter().map(|r| r.iter().map(|v| v.to_bits()).collect()).collect();
    keys.sort_unstable();
    keys.dedup();
    keys.len()
}

/// Whole-body and split pose vocabularies over the training poses. Sizes
/// larger than the number of distinct poses are reduced with a warning.
pub fn build_vocabularies(poses: &[Skeleton], cfg: &RunConfig) -> Result<(PoseVocabulary, SplitVocabulary)> {
    let fit = |part: GroupName, k: usize| -> Result<PoseVocabulary> {
        let group = JointGroup::by_name(part);
        let n = distinct(&poses.iter().map(|s| group.extract(s)).collect::<Vec<_>>());
        let k_eff = k.min(n);
        if k_eff < k {
            log::warn!("vocabulary size {k} reduced to {k_eff} distinct {part:?} poses");
        }
        Ok(transfer::quantize_part(poses, part, k_eff, cfg.seed)?.0)
    };
    let all = fit(GroupName::All, cfg.transfer.vocab_k)?;
    let split = SplitVocabulary {
        upper: fit(GroupName::Upper, cfg.transfer.vocab_k_upper)?,
        lower: fit(GroupName::Lower, cfg.transfer.vocab_k_lower)?,
    };
    Ok((all, split))
}

/// Row labels of the per-joint error table.
pub const TABLE_ROWS: [&str; 9] =
    ["Shoulders", "Elbows", "Wrists", "Knees", "Ankles", "Feet", "Upper body", "Lower body", "All"];

/// Held-out errors in cm, one column per method, rows as [`TABLE_ROWS`].
#[derive(Debug, Clone, PartialEq)]
pub struct PoseEval {
    pub methods: Vec<String>,
    pub rows: Vec<[f64; 9]>,
    pub frames: usize,
}

impl PoseEval {
    /// Overall error of method `m`.
    pub fn overall(&self, m: usize) -> f64 {
        self.rows[m][8]
    }
}

fn error_row(preds: &[Skeleton], gts: &[Skeleton]) -> Result<[f64; 9]> {
    let per = skeleton::sequence_errors(preds, gts, &JointGroup::all())?.per_joint;
    let mut row = [0.0; 9];
    for (k, name) in TABLE_ROWS.iter().take(6).enumerate() {
        let js: Vec<usize> = Joint::ALL.iter().filter(|j| j.table_row() == *name).map(|j| j.index()).collect();
        row[k] = js.iter().map(|&j| per[j]).sum::<f64>() / js.len() as f64;
    }
    for (k, g) in [(6, JointGroup::upper()), (7, JointGroup::lower()), (8, JointGroup::all())] {
        row[k] = g.members.iter().map(|j| per[j.index()]).sum::<f64>() / g.members.len() as f64;
    }
    Ok(row)
}

/// Scores the regressors on the held-out person, plus the whole-body
/// vocabulary applied to the baseline output (nearest center).
pub fn evaluate_pose(
    corpus: &Corpus,
    features: &BTreeMap<String, FeatureSequence>,
    models: &PoseModels,
    vocab: Option<&PoseVocabulary>,
    cfg: &RunConfig,
) -> Result<PoseEval> {
    let test = cfg.test_person();
    let (seqs, gts) = gather(corpus, features, |r| r.person_id == test)?;
    let gt: Vec<Skeleton> = gts.concat();
    if gt.is_empty() {
        return Err(AppError::Config(format!("held-out person {test} has no first-view frames")));
    }
    let predict = |reg: &Regressor| -> Result<Vec<Skeleton>> {
        let mut out = Vec::with_capacity(gt.len());
        for s in &seqs {
            out.extend(transfer::predict_sequence(reg, s)?);
        }
        Ok(out)
    };
    let base = predict(&models.baseline)?;
    let aug = predict(&models.augmented)?;
    let mut methods = vec!["baseline".to_string(), "augmented".to_string()];
    let mut rows = vec![error_row(&base, &gt)?, error_row(&aug, &gt)?];
    if let Some(v) = vocab.filter(|v| v.part == GroupName::All) {
        let snapped: Vec<Skeleton> = base
            .iter()
            .map(|s| Skeleton::from_flat(transfer::nearest_pose(v, s).1))
            .collect::<std::result::Result<_, _>>()?;
        methods.push(format!("baseline_vocab{}", v.len()));
        rows.push(error_row(&snapped, &gt)?);
    }
    Ok(PoseEval { methods, rows, frames: gt.len() })
}

/// Per class, one group of rows per person.
pub type ClassGroups = Vec<Vec<Vec<Vec<f64>>>>;

/// First-view and front-view embeddings of every eligible frame, grouped by
/// activity class; each listed person contributes one paired group per class.
pub fn class_groups(
    model: &SemiSiameseModel,
    corpus: &Corpus,
    flows: &PrecomputedFlow,
    people: &[u32],
) -> Result<(ClassGroups, ClassGroups)> {
    let mut first: ClassGroups = vec![Vec::new(); 4];
    let mut third: ClassGroups = vec![Vec::new(); 4];
    for &p in people {
        let mut f: Vec<Vec<Vec<f64>>> = vec![Vec::new(); 4];
        let mut t: Vec<Vec<Vec<f64>>> = vec![Vec::new(); 4];
        for r in corpus.records.iter().filter(|r| r.person_id == p) {
            let dst = match r.view {
                View::First => &mut f,
                View::ThirdFront => &mut t,
                _ => continue,
            };
            let z = transfer::extract_embeddings(model, corpus.clip_of(r)?, flows)?;
            dst[ActivityClass::of_activity(r.activity_id).index()].extend(z.into_iter().map(|e| e.0));
        }
        for (c, (fc, tc)) in f.into_iter().zip(t).enumerate() {
            if !fc.is_empty() || !tc.is_empty() {
                first[c].push(fc);
                third[c].push(tc);
            }
        }
    }
    Ok((first, third))
}

/// 4×4 class CCA matrix over the given people.
pub fn class_cca(
    model: &SemiSiameseModel,
    corpus: &Corpus,
    flows: &PrecomputedFlow,
    people: &[u32],
) -> Result<[[f64; 4]; 4]> {
    let (first, third) = class_groups(model, corpus, flows, people)?;
    Ok(analysis::class_cca_matrix(&first, &third)?)
}

/// Embeddings (one row per kept frame) of the held-out person's first-view
/// clips, with the activity of each row.
pub fn scatter_rows(
    features: &BTreeMap<String, FeatureSequence>,
    corpus: &Corpus,
    cfg: &RunConfig,
) -> Result<(Vec<Vec<f64>>, Vec<u32>)> {
    let test = cfg.test_person();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for r in corpus.first_view().filter(|r| r.person_id == test) {
        let f = features.get(&r.clip_id).ok_or_else(|| AppError::Config(format!("no features for `{}`", r.clip_id)))?;
        for z in f.embeddings.iter().step_by(cfg.analysis.scatter_stride.max(1)) {
            rows.push(z.0.clone());
            labels.push(r.activity_id);
        }
    }
    Ok((rows, labels))
}

/// Transversal between the middle frames of the held-out person's first two
/// activities of different classes.
pub fn default_transversal(
    features: &BTreeMap<String, FeatureSequence>,
    corpus: &Corpus,
    regressor: &Regressor,
    cfg: &RunConfig,
) -> Result<Transversal> {
    let test = cfg.test_person();
    let clips: Vec<&ClipRecord> = corpus.first_view().filter(|r| r.person_id == test).collect();
    let a = clips.first().ok_or_else(|| AppError::Config(format!("held-out person {test} has no clips")))?;
    let b = clips
        .iter()
        .find(|r| ActivityClass::of_activity(r.activity_id) != ActivityClass::of_activity(a.activity_id))
        .or(clips.get(1))
        .ok_or_else(|| AppError::Config("transversal needs two first-view clips".into()))?;
    let end = |r: &ClipRecord| -> Result<(Embedding, Vec<f64>)> {
        let f = features.get(&r.clip_id).ok_or_else(|| AppError::Config(format!("no features for `{}`", r.clip_id)))?;
        let mid = f.len() / 2;
        Ok((f.embeddings[mid].clone(), f.base[mid].clone()))
    };
    let (zi, phii) = end(a)?;
    let (zj, phij) = end(b)?;
    Ok(analysis::build_transversal(&zi, &zj, &phii, &phij, cfg.analysis.transversal_step, regressor)?)
}

/// Frame index of the first eligible frame, for labelling exported sequences.
pub const FIRST_ELIGIBLE: usize = HALF_WINDOW;

/// Number of joints in each decoded skeleton row of a transversal table.
pub const SKELETON_COLUMNS: usize = 3 * NUM_JOINTS;
