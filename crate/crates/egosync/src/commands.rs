//! Subcommands: each loads its inputs from the run directory, calls the
//! matching pipeline stage and writes its outputs back under the same root.
//!
//! ```text
//! <out>/data/manifest.tsv          clip records
//! <out>/data/clips/<clip>.egt      frames [T, C, H, W], f32
//! <out>/data/skeletons/<rec>.skel  ground truth per recording
//! <out>/data/meta.txt              format version and generator settings
//! <out>/model/embed.ckpt           embedding network + input statistics
//! <out>/model/train_log.tsv
//! <out>/features/<clip>.z.egt      embeddings [T', 64]
//! <out>/features/<clip>.phi.egt    base features [T', 6]
//! <out>/pose/{baseline,augmented}.ckpt, pose/vocab_{all,upper,lower}.txt
//! <out>/eval/, <out>/analysis/{cca,pca,transversal}/   reports
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use egosync_core::analysis::{self, ActivityClass, ProjectionMethod};
use egosync_core::data::synthetic::generate_synthetic_dataset;
use egosync_core::data::View;
use egosync_core::net::{Embedding, SemiSiameseModel};
use egosync_core::tensor::{Clip, Tensor};
use egosync_core::transfer::FeatureSequence;

use crate::checkpoint::{load_model, load_regressor, save_model, save_regressor};
use crate::config::RunConfig;
use crate::error::{AppError, Result};
use crate::formats::{self, DType};
use crate::pipeline::{self, Corpus, PoseEval, PoseModels, SyncReport, TABLE_ROWS};
use crate::report::{emit_report, matrix_table, Plot, Report, Table};

pub const DATA_FORMAT_VERSION: u32 = 1;

/// Paths of every artifact under a run directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }
    pub fn manifest(&self) -> PathBuf {
        self.root.join("data/manifest.tsv")
    }
    pub fn meta(&self) -> PathBuf {
        self.root.join("data/meta.txt")
    }
    pub fn clip(&self, id: &str) -> PathBuf {
        self.root.join("data/clips").join(format!("{id}.egt"))
    }
    pub fn skeletons(&self, person: u32, activity: u32) -> PathBuf {
        self.root.join("data/skeletons").join(format!("p{person:02}_a{activity:02}.skel"))
    }
    pub fn model(&self) -> PathBuf {
        self.root.join("model/embed.ckpt")
    }
    pub fn train_log(&self) -> PathBuf {
        self.root.join("model/train_log.tsv")
    }
    pub fn embeddings(&self, clip: &str) -> PathBuf {
        self.root.join("features").join(format!("{clip}.z.egt"))
    }
    pub fn base_features(&self, clip: &str) -> PathBuf {
        self.root.join("features").join(format!("{clip}.phi.egt"))
    }
    pub fn regressor(&self, which: &str) -> PathBuf {
        self.root.join("pose").join(format!("{which}.ckpt"))
    }
    pub fn vocabulary(&self, part: &str) -> PathBuf {
        self.root.join("pose").join(format!("vocab_{part}.txt"))
    }
    pub fn eval_dir(&self) -> PathBuf {
        self.root.join("eval")
    }
    pub fn analysis_dir(&self, what: &str) -> PathBuf {
        self.root.join("analysis").join(what)
    }
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(AppError::MissingArtifact(path.to_path_buf()))
    }
}

/// Generates the synthetic corpus and writes it to disk.
pub fn synth_data(cfg: &RunConfig, layout: &Layout) -> Result<Corpus> {
    cfg.require(&["data.n_people", "data.n_activities", "data.n_frames"])?;
    let corpus = Corpus::from_synthetic(generate_synthetic_dataset(&cfg.data)?);
    for c in &corpus.clips {
        formats::write_tensor(&layout.clip(&c.id), c.tensor(), DType::F32)?;
    }
    for (&(p, a), frames) in &corpus.skeletons {
        formats::write_skeletons(&layout.skeletons(p, a), frames)?;
    }
    let d = &cfg.data;
    let meta = format!(
        "format_version = {DATA_FORMAT_VERSION}\nseed = {}\nn_people = {}\nn_activities = {}\nn_frames = {}\nheight = {}\nwidth = {}\nnoise = {}\nclip_dtype = f32\n",
        d.seed, d.n_people, d.n_activities, d.n_frames, d.height, d.width, d.noise
    );
    formats::write_atomic(&layout.meta(), meta.as_bytes())?;
    // the manifest goes last: its presence marks a complete data directory
    formats::save_manifest(&layout.manifest(), &corpus.records)?;
    Ok(corpus)
}

fn check_meta(layout: &Layout) -> Result<()> {
    let path = layout.meta();
    let text = formats::read_text(&path)?;
    let version = text
        .lines()
        .find_map(|l| l.strip_prefix("format_version = "))
        .and_then(|v| v.trim().parse::<u32>().ok())
        .ok_or_else(|| AppError::parse(&path, 1, "missing format_version"))?;
    if version != DATA_FORMAT_VERSION {
        return Err(AppError::VersionMismatch { path, found: version, expected: DATA_FORMAT_VERSION });
    }
    Ok(())
}

/// Reads manifest, clips and (where present) ground-truth skeletons.
pub fn load_corpus(layout: &Layout) -> Result<Corpus> {
    require(&layout.manifest())?;
    check_meta(layout)?;
    let records = formats::load_manifest(&layout.manifest())?;
    let mut clips = Vec::with_capacity(records.len());
    let mut skeletons = BTreeMap::new();
    for r in &records {
        let tensor = formats::read_tensor(&layout.clip(&r.clip_id))?;
        clips.push(Clip::new(r.clip_id.clone(), tensor)?);
        let key = (r.person_id, r.activity_id);
        let skel = layout.skeletons(key.0, key.1);
        if r.view == View::First && !skeletons.contains_key(&key) && skel.exists() {
            skeletons.insert(key, formats::read_skeletons(&skel)?);
        }
    }
    Ok(Corpus { records, clips, skeletons })
}

pub fn train_embed(cfg: &RunConfig, layout: &Layout) -> Result<SemiSiameseModel> {
    let corpus = load_corpus(layout)?;
    let flows = pipeline::flow_cache(&corpus, cfg.flow)?;
    let (model, history) = pipeline::train_embedding(&corpus, &flows, cfg)?;
    save_model(&layout.model(), &model)?;
    formats::write_atomic(&layout.train_log(), formats::format_train_log(&history).as_bytes())?;
    log::info!("trained {} steps, final loss {:?}", history.len(), history.last().map(|h| h.loss));
    Ok(model)
}

fn load_trained(layout: &Layout) -> Result<SemiSiameseModel> {
    require(&layout.model())?;
    load_model(&layout.model())
}

fn rows_tensor(rows: &[Vec<f64>]) -> Result<Tensor> {
    let d = rows.first().map_or(0, |r| r.len());
    Ok(Tensor::new(vec![rows.len(), d], rows.concat())?)
}

pub fn extract(cfg: &RunConfig, layout: &Layout) -> Result<BTreeMap<String, FeatureSequence>> {
    let model = load_trained(layout)?;
    let corpus = load_corpus(layout)?;
    let flows = pipeline::flow_cache(&corpus, cfg.flow)?;
    let features = pipeline::feature_sequences(&model, &corpus, &flows)?;
    for (id, f) in &features {
        let z: Vec<Vec<f64>> = f.embeddings.iter().map(|e| e.0.clone()).collect();
        formats::write_tensor(&layout.embeddings(id), &rows_tensor(&z)?, DType::F64)?;
        formats::write_tensor(&layout.base_features(id), &rows_tensor(&f.base)?, DType::F64)?;
    }
    Ok(features)
}

fn tensor_rows(t: &Tensor) -> Vec<Vec<f64>> {
    let d = t.shape().get(1).copied().unwrap_or(0).max(1);
    t.data().chunks(d).map(<[f64]>::to_vec).collect()
}

pub fn load_features(layout: &Layout, corpus: &Corpus) -> Result<BTreeMap<String, FeatureSequence>> {
    let mut out = BTreeMap::new();
    for r in corpus.first_view() {
        let zp = layout.embeddings(&r.clip_id);
        require(&zp)?;
        let z = tensor_rows(&formats::read_tensor(&zp)?).into_iter().map(Embedding).collect();
        let base = tensor_rows(&formats::read_tensor(&layout.base_features(&r.clip_id))?);
        out.insert(r.clip_id.clone(), FeatureSequence::new(base, z)?);
    }
    Ok(out)
}

pub fn train_pose(cfg: &RunConfig, layout: &Layout) -> Result<PoseModels> {
    let corpus = load_corpus(layout)?;
    let features = load_features(layout, &corpus)?;
    let models = pipeline::train_pose(&corpus, &features, cfg)?;
    save_regressor(&layout.regressor("baseline"), &models.baseline)?;
    save_regressor(&layout.regressor("augmented"), &models.augmented)?;
    let poses = pipeline::training_poses(&corpus, cfg)?;
    let (all, split) = pipeline::build_vocabularies(&poses, cfg)?;
    for (name, v) in [("all", &all), ("upper", &split.upper), ("lower", &split.lower)] {
        formats::write_atomic(&layout.vocabulary(name), formats::format_vocabulary(v).as_bytes())?;
    }
    Ok(models)
}

fn load_pose_models(layout: &Layout) -> Result<PoseModels> {
    let (b, a) = (layout.regressor("baseline"), layout.regressor("augmented"));
    require(&b)?;
    require(&a)?;
    Ok(PoseModels { baseline: load_regressor(&b)?, augmented: load_regressor(&a)? })
}

pub fn pose_table(eval: &PoseEval) -> Table {
    let mut header = vec!["joints"];
    header.extend(eval.methods.iter().map(String::as_str));
    let mut t = Table::new("pose_errors", &header);
    for (k, label) in TABLE_ROWS.iter().enumerate() {
        let mut row = vec![label.to_string()];
        row.extend(eval.rows.iter().map(|r| r[k].to_string()));
        t.push(row);
    }
    t
}

pub fn sync_table(s: &SyncReport) -> Table {
    let mut t = Table::new("sync", &["quantity", "value"]);
    for d in &s.by_difficulty {
        t.push(vec![format!("mean_distance_{}", d.difficulty.as_str()), d.mean.to_string()]);
        t.push(vec![format!("count_{}", d.difficulty.as_str()), d.count.to_string()]);
    }
    for (k, v) in [
        ("mean_distance_positive_all", s.mean_positive),
        ("mean_distance_negative_all", s.mean_negative),
        ("margin_ratio", s.margin_ratio()),
        ("threshold", s.threshold),
        ("train_balanced_accuracy", s.train_balanced_accuracy),
        ("test_balanced_accuracy", s.test_balanced_accuracy),
    ] {
        t.push(vec![k.to_string(), v.to_string()]);
    }
    t
}

/// Plain-text rendering of the per-joint error table.
pub fn format_pose_table(eval: &PoseEval) -> String {
    let mut out = format!("{:<12}", "cm");
    for m in &eval.methods {
        let _ = write!(out, "{m:>18}");
    }
    out.push('\n');
    for (k, label) in TABLE_ROWS.iter().enumerate() {
        if k == 0 || k == 3 || k == 6 {
            out.push_str(match k {
                0 => "-- upper body\n",
                3 => "-- lower body\n",
                _ => "-- average\n",
            });
        }
        let _ = write!(out, "{label:<12}");
        for r in &eval.rows {
            let _ = write!(out, "{:>18.2}", r[k]);
        }
        out.push('\n');
    }
    out
}

/// Held-out evaluation: synchronization accuracy and per-joint pose errors.
pub fn eval(cfg: &RunConfig, layout: &Layout) -> Result<(SyncReport, PoseEval)> {
    let model = load_trained(layout)?;
    let models = load_pose_models(layout)?;
    let corpus = load_corpus(layout)?;
    let features = load_features(layout, &corpus)?;
    let vocab_path = layout.vocabulary("all");
    let vocab = if vocab_path.exists() {
        Some(formats::parse_vocabulary(&formats::read_text(&vocab_path)?, &vocab_path)?)
    } else {
        None
    };
    let flows = pipeline::flow_cache(&corpus, cfg.flow)?;
    let sync = pipeline::evaluate_sync(&model, &corpus, &flows, cfg)?;
    let pose = pipeline::evaluate_pose(&corpus, &features, &models, vocab.as_ref(), cfg)?;
    let report = Report { tables: vec![sync_table(&sync), pose_table(&pose)], plots: vec![] };
    emit_report(&report, &layout.eval_dir())?;
    Ok((sync, pose))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Analysis {
    Cca,
    Pca,
    Transversal,
}

impl Analysis {
    pub fn as_str(self) -> &'static str {
        match self {
            Analysis::Cca => "cca",
            Analysis::Pca => "pca",
            Analysis::Transversal => "transversal",
        }
    }
}

pub fn analyze(cfg: &RunConfig, layout: &Layout, what: Analysis) -> Result<Report> {
    let report = match what {
        Analysis::Cca => {
            let model = load_trained(layout)?;
            let corpus = load_corpus(layout)?;
            let flows = pipeline::flow_cache(&corpus, cfg.flow)?;
            let m = pipeline::class_cca(&model, &corpus, &flows, &corpus.people())?;
            let names: Vec<&str> = ActivityClass::ALL.iter().map(|c| c.name()).collect();
            Report { tables: vec![matrix_table("cca", &names, &names, &m)], plots: vec![] }
        }
        Analysis::Pca => {
            let corpus = load_corpus(layout)?;
            let features = load_features(layout, &corpus)?;
            let (rows, labels) = pipeline::scatter_rows(&features, &corpus, cfg)?;
            let mut tables = Vec::new();
            let mut plots = Vec::new();
            let mut methods = vec![("pca", ProjectionMethod::Pca)];
            if cfg.analysis.tsne {
                methods.push((
                    "tsne",
                    ProjectionMethod::Tsne {
                        perplexity: cfg.analysis.tsne_perplexity,
                        iterations: cfg.analysis.tsne_iterations,
                        seed: cfg.seed,
                    },
                ));
            }
            for (name, method) in methods {
                let points = analysis::project_2d(&rows, method)?;
                let mut t = Table::new(name, &["activity", "class", "x", "y"]);
                for (p, &l) in points.iter().zip(&labels) {
                    t.push(vec![
                        l.to_string(),
                        ActivityClass::of_activity(l).name().to_string(),
                        p[0].to_string(),
                        p[1].to_string(),
                    ]);
                }
                tables.push(t);
                plots.push(Plot::Scatter { name: name.into(), points, labels: labels.clone() });
            }
            Report { tables, plots }
        }
        Analysis::Transversal => {
            let corpus = load_corpus(layout)?;
            let features = load_features(layout, &corpus)?;
            let models = load_pose_models(layout)?;
            let tr = pipeline::default_transversal(&features, &corpus, &models.augmented, cfg)?;
            let mut header = vec!["beta".to_string()];
            header.extend(egosync_core::skeleton::Joint::ALL.iter().flat_map(|j| {
                ["x", "y", "z"].map(|a| format!("{}_{a}", j.name()))
            }));
            let mut t = Table { name: "transversal".into(), header, rows: Vec::new() };
            for (b, s) in tr.betas.iter().zip(&tr.skeletons) {
                let mut row = vec![b.to_string()];
                row.extend(s.to_flat().iter().map(|v| v.to_string()));
                t.push(row);
            }
            let mut summary = Table::new("transversal_summary", &["quantity", "value"]);
            summary.push(vec!["points".into(), tr.betas.len().to_string()]);
            summary.push(vec!["smoothness_ratio".into(), tr.smoothness_ratio().to_string()]);
            Report {
                tables: vec![t, summary],
                plots: vec![Plot::Sticks { name: "transversal".into(), skeletons: tr.skeletons.clone() }],
            }
        }
    };
    emit_report(&report, &layout.analysis_dir(what.as_str()))?;
    Ok(report)
}
