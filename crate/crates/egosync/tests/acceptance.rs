//! End-to-end acceptance checks. Runs as a plain binary so that the
//! PASS/FAIL lines always reach stdout; exits non-zero if any check fails.

use std::collections::BTreeMap;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use egosync::checkpoint;
use egosync::config::RunConfig;
use egosync::pipeline::{self, Corpus, PoseModels};
use egosync_core::analysis::{build_transversal, cca_first_coefficient, is_diagonally_dominant, TRANSVERSAL_STEP};
use egosync_core::data::synthetic::{generate_synthetic_dataset, SyntheticConfig};
use egosync_core::data::{Difficulty, DEFAULT_HARD_SHIFTS};
use egosync_core::flow::{PrecomputedFlow, ZeroFlow};
use egosync_core::loss::{contrastive_loss, contrastive_loss_grad, DEFAULT_MARGIN};
use egosync_core::net::{Embedding, SemiSiameseModel};
use egosync_core::skeleton::{self, canonicalize, joint_error, mat_mul, rest_pose, rot_x, rot_y, rot_z, JointGroup, Skeleton};
use egosync_core::train::{PairDataset, PairSource};
use egosync_core::transfer::{extract_embeddings, kmeans, nearest_pose, predict_sequence, quantize_poses, FeatureSequence};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

// Pinned tolerances.
const GRAD_REL_TOL: f64 = 1e-4;
const INVARIANCE_TOL_CM: f64 = 1e-6;
const CANONICAL_TOL: f64 = 1e-9;
const CCA_SELF_TOL: f64 = 1e-6;
const CCA_NOISE_MAX: f64 = 0.2;
const TRANSVERSAL_TOL: f64 = 1e-9;
const SMOOTHNESS_MAX: f64 = 3.0;
const ROUND_TRIP_TOL: f64 = 1e-6;
const MARGIN_RATIO_MIN: f64 = 1.5;
const SYNC_ACCURACY_MIN: f64 = 0.90;
const TRANSFER_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const TRANSFER_WINS_MIN: usize = 4;

/// Five synthetic people (one held out), eight activities, tiny backbone, two
/// epochs.
const TRANSFER_CONFIG: &str = "\
data.n_people = 5
data.n_activities = 8
train.backbone = tiny
train.epochs = 2
train.learning_rate = 0.0005
train.batch_size = 8
train.frame_stride = 1
";

const CLI_CONFIG: &str = "\
seed = 3
data.n_people = 2
data.n_activities = 4
data.n_frames = 120
train.epochs = 2
train.frame_stride = 6
transfer.epochs = 3
transfer.vocab_k = 10
transfer.vocab_k_upper = 10
transfer.vocab_k_lower = 5
analysis.scatter_stride = 4
";

type Check = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn run(id: &str, name: &str, budget: Duration, f: impl FnOnce() -> Check) -> bool {
    let start = Instant::now();
    let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
        Err(format!("panicked: {}", msg.unwrap_or_default()))
    });
    let elapsed = start.elapsed();
    let (pass, detail) = match outcome {
        Ok(d) if elapsed <= budget => (true, d),
        Ok(d) => (false, format!("{d}; over the {budget:?} budget")),
        Err(d) => (false, d),
    };
    println!("{} {id} {name}: {detail} [{:.1}s]", if pass { "PASS" } else { "FAIL" }, elapsed.as_secs_f64());
    pass
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

// ---------------------------------------------------------------- 1. loss

fn loss_correctness() -> Check {
    let m = DEFAULT_MARGIN;
    // |(0.3, 0.4)| = 0.5, |(0.24, 0.32)| = 0.4, |(0.72, 0.96)| = 1.2
    let origin = Embedding(vec![0.0, 0.0]);
    let cases = [
        (Embedding(vec![0.1, -0.2]), Embedding(vec![0.1, -0.2]), true, 0.0),
        (origin.clone(), Embedding(vec![0.72, 0.96]), false, 0.0),
        (origin.clone(), Embedding(vec![0.24, 0.32]), false, 0.25),
        (origin.clone(), Embedding(vec![0.3, 0.4]), true, 0.25),
    ];
    for (a, b, y, want) in &cases {
        let got = contrastive_loss(&[a.clone()], &[b.clone()], &[*y], m).map_err(|e| e.to_string())?;
        // the inputs are chosen so that every case rounds to the exact value
        if (got - want).abs() > 1e-15 {
            return Err(format!("loss {got} for tabulated value {want}"));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    let mut points = 0;
    while points < 100 {
        let dim = rng.random_range(2..10);
        let a: Vec<f64> = (0..dim).map(|_| 0.4 * gaussian(&mut rng)).collect();
        let b: Vec<f64> = (0..dim).map(|_| 0.4 * gaussian(&mut rng)).collect();
        let y = rng.random_bool(0.5);
        let d = a.iter().zip(&b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
        if (d - m).abs() < 1e-3 || d < 1e-3 {
            continue;
        }
        points += 1;
        let loss = |a: &[f64], b: &[f64]| {
            contrastive_loss(&[Embedding(a.to_vec())], &[Embedding(b.to_vec())], &[y], m).unwrap()
        };
        let g = contrastive_loss_grad(&[Embedding(a.clone())], &[Embedding(b.clone())], &[y], m)
            .map_err(|e| e.to_string())?;
        let h = 1e-6;
        for side in 0..2 {
            for k in 0..dim {
                let (mut ap, mut am, mut bp, mut bm) = (a.clone(), a.clone(), b.clone(), b.clone());
                if side == 0 {
                    ap[k] += h;
                    am[k] -= h;
                } else {
                    bp[k] += h;
                    bm[k] -= h;
                }
                let numeric = (loss(&ap, &bp) - loss(&am, &bm)) / (2.0 * h);
                let analytic = if side == 0 { g.grad_first[0][k] } else { g.grad_third[0][k] };
                let rel = (numeric - analytic).abs() / analytic.abs().max(numeric.abs()).max(1e-3);
                worst = worst.max(rel);
            }
        }
    }
    ensure(worst <= GRAD_REL_TOL, format!("4 tabulated cases exact; worst relative gradient error {worst:.2e} over 100 points"))
}

// ---------------------------------------------------------- 2. curriculum

fn curriculum_contract() -> Check {
    let cfg = SyntheticConfig { n_people: 3, n_activities: 4, n_frames: 80, seed: 9, ..Default::default() };
    let ds = generate_synthetic_dataset(&cfg).map_err(|e| e.to_string())?;
    let pairs = pipeline::mine_all(&ds.records, &DEFAULT_HARD_SHIFTS).map_err(|e| e.to_string())?;
    let source = PairDataset::new(&ds.clips, pairs, ZeroFlow, Default::default(), 1).map_err(|e| e.to_string())?;
    let mut summary = Vec::new();
    for epoch in 1..=3 {
        let samples = source.samples(epoch).map_err(|e| e.to_string())?;
        let count = |d: Difficulty| samples.iter().filter(|s| s.difficulty == d).count();
        let (easy, hard) = (count(Difficulty::EasyNegative), count(Difficulty::HardNegative));
        let (forbidden, allowed) = if epoch == 1 { (hard, easy) } else { (easy, hard) };
        if forbidden != 0 || allowed == 0 {
            return Err(format!("epoch {epoch}: {easy} easy and {hard} hard negatives"));
        }
        summary.push(format!("epoch {epoch}: {} samples, {easy} easy, {hard} hard", samples.len()));
    }
    Ok(summary.join("; "))
}

// ---------------------------------------------------------- 3. invariance

fn random_skeleton(rng: &mut ChaCha8Rng) -> Skeleton {
    let v: Vec<f64> = rest_pose().to_flat().iter().map(|x| x + rng.random_range(-10.0..10.0)).collect();
    Skeleton::from_flat(&v).unwrap()
}

fn random_similarity(rng: &mut ChaCha8Rng, s: &Skeleton) -> Skeleton {
    let r = mat_mul(
        &rot_z(rng.random_range(-3.14..3.14)),
        &mat_mul(&rot_y(rng.random_range(-1.5..1.5)), &rot_x(rng.random_range(-3.14..3.14))),
    );
    let t = [rng.random_range(-300.0..300.0), rng.random_range(-300.0..300.0), rng.random_range(-300.0..300.0)];
    s.scaled(rng.random_range(0.5..2.0)).transformed(&r, t)
}

fn pairwise(s: &Skeleton) -> Vec<f64> {
    let j = s.joints();
    let mut out = Vec::new();
    for a in 0..j.len() {
        for b in a + 1..j.len() {
            out.push(((j[a][0] - j[b][0]).powi(2) + (j[a][1] - j[b][1]).powi(2) + (j[a][2] - j[b][2]).powi(2)).sqrt());
        }
    }
    out
}

fn metric_invariance() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let all = JointGroup::all();
    let (mut worst_err, mut worst_idem, mut worst_dist): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..1000 {
        let (a, b) = (random_skeleton(&mut rng), random_skeleton(&mut rng));
        let base = joint_error(&a, &b, &all).map_err(|e| e.to_string())?;
        let (ta, tb) = (random_similarity(&mut rng, &a), random_similarity(&mut rng, &b));
        for (p, g) in [(&ta, &b), (&a, &tb), (&ta, &tb)] {
            let e = joint_error(p, g, &all).map_err(|e| e.to_string())?;
            for (x, y) in base.per_joint.iter().zip(e.per_joint) {
                worst_err = worst_err.max((x - y).abs());
            }
        }
        let c = canonicalize(&ta).map_err(|e| e.to_string())?;
        let cc = canonicalize(&c).map_err(|e| e.to_string())?;
        for (x, y) in c.to_flat().iter().zip(cc.to_flat()) {
            worst_idem = worst_idem.max((x - y).abs());
        }
        for (x, y) in pairwise(&ta).iter().zip(pairwise(&c)) {
            worst_dist = worst_dist.max((x - y).abs() / x.max(1.0));
        }
    }
    ensure(
        worst_err <= INVARIANCE_TOL_CM && worst_idem <= CANONICAL_TOL && worst_dist <= CANONICAL_TOL,
        format!(
            "1000 pairs: max error change {worst_err:.1e} cm, idempotence {worst_idem:.1e}, distance change {worst_dist:.1e}"
        ),
    )
}

// ----------------------------------------------------------- 4. transfer

struct SeedRun {
    corpus: Corpus,
    flows: PrecomputedFlow,
    model: SemiSiameseModel,
    features: BTreeMap<String, FeatureSequence>,
    pose: PoseModels,
    cfg: RunConfig,
}

fn transfer_config(seed: u64) -> RunConfig {
    RunConfig::parse(TRANSFER_CONFIG, Path::new(".")).unwrap().with_seed(seed)
}

fn run_seed(seed: u64) -> Result<(SeedRun, f64, f64), String> {
    let cfg = transfer_config(seed);
    let corpus = Corpus::from_synthetic(generate_synthetic_dataset(&cfg.data).map_err(|e| e.to_string())?);
    let flows = pipeline::flow_cache(&corpus, cfg.flow).map_err(|e| e.to_string())?;
    let (model, _) = pipeline::train_embedding(&corpus, &flows, &cfg).map_err(|e| e.to_string())?;
    let features = pipeline::feature_sequences(&model, &corpus, &flows).map_err(|e| e.to_string())?;
    let pose = pipeline::train_pose(&corpus, &features, &cfg).map_err(|e| e.to_string())?;
    let eval = pipeline::evaluate_pose(&corpus, &features, &pose, None, &cfg).map_err(|e| e.to_string())?;
    let (base, aug) = (eval.overall(0), eval.overall(1));
    Ok((SeedRun { corpus, flows, model, features, pose, cfg }, base, aug))
}

fn synthetic_transfer(keep: &mut Option<SeedRun>) -> Check {
    let mut lines = Vec::new();
    let mut wins = 0;
    let mut sync_ok = false;
    for &seed in &TRANSFER_SEEDS {
        let (run, base, aug) = run_seed(seed)?;
        if aug < base {
            wins += 1;
        }
        lines.push(format!("seed {seed}: baseline {base:.2} cm, augmented {aug:.2} cm"));
        if seed == TRANSFER_SEEDS[0] {
            let s = pipeline::evaluate_sync(&run.model, &run.corpus, &run.flows, &run.cfg).map_err(|e| e.to_string())?;
            let ratio = s.margin_ratio();
            sync_ok = s.mean_positive < s.mean_negative
                && ratio >= MARGIN_RATIO_MIN
                && s.test_balanced_accuracy >= SYNC_ACCURACY_MIN;
            lines.push(format!(
                "(a) positive {:.3} vs negative {:.3}, ratio {ratio:.2}; (b) held-out accuracy {:.3}",
                s.mean_positive, s.mean_negative, s.test_balanced_accuracy
            ));
            *keep = Some(run);
        }
    }
    lines.push(format!("(c) augmented better in {wins}/{}", TRANSFER_SEEDS.len()));
    ensure(sync_ok && wins >= TRANSFER_WINS_MIN, lines.join("; "))
}

// ------------------------------------------------------- 5. quantization

fn quantization_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pool: Vec<Skeleton> = (0..2000).map(|_| skeleton::align(&random_skeleton(&mut rng)).unwrap()).collect();
    let (vocab, km) = quantize_poses(&pool, 64, 5).map_err(|e| e.to_string())?;
    let mut disagreements = 0;
    for _ in 0..10_000 {
        let q = skeleton::align(&random_skeleton(&mut rng)).unwrap().to_flat();
        let mut best = (0, f64::INFINITY);
        for (i, c) in vocab.centers.iter().enumerate() {
            let d: f64 = c.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best.1 {
                best = (i, d);
            }
        }
        if nearest_pose(&vocab, &Skeleton::from_flat(&q).unwrap()).0 != best.0 {
            disagreements += 1;
        }
    }
    let mut increases = 0;
    let mut runs = vec![km.objective.clone()];
    for seed in 0..10 {
        let rows: Vec<Vec<f64>> = (0..300).map(|_| (0..6).map(|_| gaussian(&mut rng)).collect()).collect();
        runs.push(kmeans(&rows, 2 + seed as usize, seed).map_err(|e| e.to_string())?.objective);
    }
    for obj in &runs {
        increases += obj.windows(2).filter(|w| w[1] > w[0]).count();
    }
    let small: Vec<Skeleton> = pool[..150].to_vec();
    let (full, _) = quantize_poses(&small, small.len(), 2).map_err(|e| e.to_string())?;
    let residual: f64 = small
        .iter()
        .map(|s| {
            let (_, c) = nearest_pose(&full, s);
            c.iter().zip(s.to_flat()).map(|(a, b)| (a - b).abs()).sum::<f64>()
        })
        .sum();
    ensure(
        disagreements == 0 && increases == 0 && residual == 0.0,
        format!(
            "{disagreements} disagreements in 10000 queries; {increases} objective increases over {} runs; K = N residual {residual}",
            runs.len()
        ),
    )
}

// ---------------------------------------------------------------- 6. CCA

fn cca_identities(run: Option<&SeedRun>) -> Check {
    let run = run.ok_or("no trained model from the transfer check")?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for _ in 0..500 {
        a.push((0..8).map(|_| gaussian(&mut rng)).collect::<Vec<f64>>());
        b.push((0..8).map(|_| gaussian(&mut rng)).collect::<Vec<f64>>());
    }
    let own = cca_first_coefficient(&a, &a).map_err(|e| e.to_string())?;
    let noise = cca_first_coefficient(&a, &b).map_err(|e| e.to_string())?;
    let m = pipeline::class_cca(&run.model, &run.corpus, &run.flows, &[run.cfg.test_person()]).map_err(|e| e.to_string())?;
    let diag: Vec<String> = (0..4).map(|i| format!("{:.2}", m[i][i])).collect();
    let off = (0..4).flat_map(|i| (0..4).filter(move |&k| k != i).map(move |k| (i, k))).map(|(i, k)| m[i][k]).fold(0.0, f64::max);
    ensure(
        (own - 1.0).abs() <= CCA_SELF_TOL && noise.abs() < CCA_NOISE_MAX && is_diagonally_dominant(&m),
        format!(
            "cca(A, A) = {own:.9}; independent noise {noise:.3}; class matrix diagonal [{}], largest off-diagonal {off:.2}",
            diag.join(", ")
        ),
    )
}

// --------------------------------------------------------- 7. transversal

fn transversal_contract(run: Option<&SeedRun>) -> Check {
    let run = run.ok_or("no trained regressor from the transfer check")?;
    let test = run.cfg.test_person();
    let clips: Vec<&FeatureSequence> = run
        .corpus
        .first_view()
        .filter(|r| r.person_id == test)
        .map(|r| &run.features[&r.clip_id])
        .take(2)
        .collect();
    let (fi, fj) = (clips[0], clips[1]);
    let (i, j) = (fi.len() / 2, fj.len() / 2);
    let (zi, zj) = (&fi.embeddings[i], &fj.embeddings[j]);
    let (pi, pj) = (&fi.base[i], &fj.base[j]);
    let reg = &run.pose.augmented;
    let tr = build_transversal(zi, zj, pi, pj, TRANSVERSAL_STEP, reg).map_err(|e| e.to_string())?;

    let direct = |seq: &FeatureSequence, k: usize| predict_sequence(reg, &seq.slice(k, k + 1)).unwrap()[0];
    let mut worst: f64 = 0.0;
    for (got, want) in [(&tr.skeletons[0], direct(fi, i)), (tr.skeletons.last().unwrap(), direct(fj, j))] {
        for (x, y) in got.to_flat().iter().zip(want.to_flat()) {
            worst = worst.max((x - y).abs());
        }
    }
    for (k, beta) in tr.betas.iter().enumerate() {
        // independent form of the segment: a + β (b − a)
        let check = |got: &[f64], a: &[f64], b: &[f64]| {
            got.iter().zip(a.iter().zip(b)).map(|(g, (x, y))| (g - (x + beta * (y - x))).abs()).fold(0.0, f64::max)
        };
        worst = worst.max(check(&tr.z[k].0, &zi.0, &zj.0)).max(check(&tr.phi[k], pi, pj));
    }
    let ratio = tr.smoothness_ratio();
    ensure(
        worst <= TRANSVERSAL_TOL && tr.skeletons.len() == 11 && ratio < SMOOTHNESS_MAX,
        format!("max identity deviation {worst:.1e}; {} decoded skeletons; smoothness ratio {ratio:.2}", tr.skeletons.len()),
    )
}

// --------------------------------------------------------- 8. determinism

fn cli(config: &Path, out: &Path, args: &[&str]) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_egosync"))
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !status.status.success() {
        return Err(format!("egosync {} failed: {}", args.join(" "), String::from_utf8_lossy(&status.stderr)));
    }
    Ok(())
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn determinism(run: Option<&SeedRun>) -> Check {
    const STAGES: [&[&str]; 8] = [
        &["synth-data"],
        &["train-embed"],
        &["extract"],
        &["train-pose"],
        &["eval"],
        &["analyze", "cca"],
        &["analyze", "pca"],
        &["analyze", "transversal"],
    ];
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = tmp.path().join("run.cfg");
    std::fs::write(&config, CLI_CONFIG).map_err(|e| e.to_string())?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for stage in STAGES {
        cli(&config, &a, stage)?;
        cli(&config, &b, stage)?;
    }
    let first = tree(&a);
    // every stage run a second time in place
    for stage in STAGES {
        cli(&config, &a, stage)?;
    }
    let (again, other) = (tree(&a), tree(&b));
    if first != again || first != other {
        let differing: Vec<&String> =
            first.keys().filter(|k| first.get(*k) != again.get(*k) || first.get(*k) != other.get(*k)).collect();
        return Err(format!("outputs differ: {differing:?}"));
    }

    let run = run.ok_or("no trained model from the transfer check")?;
    let path = tmp.path().join("embed.ckpt");
    checkpoint::save_model(&path, &run.model).map_err(|e| e.to_string())?;
    let loaded = checkpoint::load_model(&path).map_err(|e| e.to_string())?;
    let clip = run.corpus.first_view().next().map(|r| run.corpus.clip(&r.clip_id).unwrap()).unwrap();
    let before = extract_embeddings(&run.model, clip, &run.flows).map_err(|e| e.to_string())?;
    let after = extract_embeddings(&loaded, clip, &run.flows).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for (x, y) in before.iter().zip(&after) {
        for (p, q) in x.0.iter().zip(&y.0) {
            worst = worst.max((p - q).abs());
        }
    }
    let rpath = tmp.path().join("augmented.ckpt");
    checkpoint::save_regressor(&rpath, &run.pose.augmented).map_err(|e| e.to_string())?;
    let reg = checkpoint::load_regressor(&rpath).map_err(|e| e.to_string())?;
    let seq = &run.features[&run.corpus.first_view().next().unwrap().clip_id];
    let (p0, p1) = (predict_sequence(&run.pose.augmented, seq).unwrap(), predict_sequence(&reg, seq).unwrap());
    for (x, y) in p0.iter().zip(&p1) {
        for (p, q) in x.to_flat().iter().zip(y.to_flat()) {
            worst = worst.max((p - q).abs());
        }
    }
    ensure(
        worst <= ROUND_TRIP_TOL,
        format!("{} files byte-identical across reruns; checkpoint round-trip deviation {worst:.1e}", first.len()),
    )
}

fn main() -> ExitCode {
    let mut seed_run = None;
    let results = [
        run("1", "loss correctness", Duration::from_secs(10), loss_correctness),
        run("2", "curriculum contract", Duration::from_secs(10), curriculum_contract),
        run("3", "metric invariance", Duration::from_secs(30), metric_invariance),
        run("4", "synthetic end-to-end transfer", Duration::from_secs(15 * 60), || synthetic_transfer(&mut seed_run)),
        run("5", "quantization oracle", Duration::from_secs(60), quantization_oracle),
        run("6", "CCA identities and pattern", Duration::from_secs(120), || cca_identities(seed_run.as_ref())),
        run("7", "transversal contract", Duration::from_secs(30), || transversal_contract(seed_run.as_ref())),
        run("8", "determinism and persistence", Duration::from_secs(5 * 60), || determinism(seed_run.as_ref())),
    ];
    let passed = results.iter().filter(|p| **p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
