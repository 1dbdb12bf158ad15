//! On-disk formats.
//!
//! * Binary tensor (`.egt`): magic `EGTN`, `u32` version, `u8` dtype
//!   (0 = f32, 1 = f64), `u8` rank, two zero bytes, `rank × u64` dims, then
//!   the values; everything little-endian.
//! * Skeleton sequence (`.skel`): one header line of joint names, then one
//!   frame per line with 51 space-separated coordinates in cm.
//! * Manifest (`.tsv`): one clip per line,
//!   `clip_id view person activity scene start end uri`, tab-separated;
//!   blank lines and `#` comments are ignored.
//! * Vocabulary: `egosync-vocab <version> <part> <K> <dims> <seed>`, then one
//!   center per line.
//! * Training log: tab-separated with a header row.
//!
//! Floats are written in Rust's shortest round-trip notation, so text files
//! reproduce values bit-for-bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use egosync_core::data::{validate_manifest, ClipRecord, View};
use egosync_core::skeleton::{GroupName, Joint, Skeleton, POSE_DIM};
use egosync_core::tensor::Tensor;
use egosync_core::train::StepRecord;
use egosync_core::transfer::PoseVocabulary;

use crate::error::{io_at, AppError, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"EGTN";
pub const TENSOR_VERSION: u32 = 1;
pub const VOCAB_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// Writes `contents` only through a sibling temporary file, so readers never
/// observe a half-written artifact.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_at(dir))?;
    }
    let tmp = path.with_extension("partial");
    fs::write(&tmp, contents).map_err(io_at(&tmp))?;
    fs::rename(&tmp, path).map_err(io_at(path))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(io_at(path))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(io_at(path))
}

pub fn encode_tensor(t: &Tensor, dtype: DType) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 8 * t.shape().len() + dtype.width() * t.data().len());
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
    out.extend_from_slice(&[dtype.code(), t.shape().len() as u8, 0, 0]);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        match dtype {
            DType::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            DType::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
    out
}

pub fn decode_tensor(bytes: &[u8], path: &Path) -> Result<(Tensor, DType)> {
    let bad = |m: &str| AppError::parse(path, 0, format!("tensor header: {m}"));
    if bytes.len() < 12 || &bytes[..4] != TENSOR_MAGIC {
        return Err(bad("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != TENSOR_VERSION {
        return Err(AppError::VersionMismatch { path: path.to_path_buf(), found: version, expected: TENSOR_VERSION });
    }
    let dtype = match bytes[8] {
        0 => DType::F32,
        1 => DType::F64,
        c => return Err(bad(&format!("unknown dtype {c}"))),
    };
    let rank = bytes[9] as usize;
    let body = 12 + 8 * rank;
    if bytes.len() < body {
        return Err(bad("truncated shape"));
    }
    let shape: Vec<usize> = bytes[12..body]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")) as usize)
        .collect();
    let count = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| bad("shape overflow"))?;
    if bytes.len() - body != count * dtype.width() {
        return Err(bad(&format!("expected {count} values, found {} bytes", bytes.len() - body)));
    }
    let data: Vec<f64> = match dtype {
        DType::F32 => bytes[body..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect(),
        DType::F64 => bytes[body..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect(),
    };
    Ok((Tensor::new(shape, data)?, dtype))
}

pub fn write_tensor(path: &Path, t: &Tensor, dtype: DType) -> Result<()> {
    write_atomic(path, &encode_tensor(t, dtype))
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    Ok(decode_tensor(&read_bytes(path)?, path)?.0)
}

fn push_row(out: &mut String, values: &[f64]) {
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        write!(out, "{v}").expect("writing to a String");
    }
    out.push('\n');
}

fn parse_row(line: &str, path: &Path, lineno: usize) -> Result<Vec<f64>> {
    line.split_whitespace()
        .map(|tok| tok.parse::<f64>().map_err(|_| AppError::parse(path, lineno, format!("not a number: `{tok}`"))))
        .collect()
}

pub fn skeleton_header() -> String {
    Joint::ALL.iter().map(|j| j.name()).collect::<Vec<_>>().join(" ")
}

pub fn format_skeletons(frames: &[Skeleton]) -> String {
    let mut out = skeleton_header();
    out.push('\n');
    for s in frames {
        push_row(&mut out, &s.to_flat());
    }
    out
}

pub fn parse_skeletons(text: &str, path: &Path) -> Result<Vec<Skeleton>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.split_whitespace().eq(Joint::ALL.iter().map(|j| j.name())) => {}
        _ => return Err(AppError::parse(path, 1, "header must list the 17 joints in order")),
    }
    let mut frames = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let v = parse_row(line, path, i + 1)?;
        if v.len() != POSE_DIM {
            return Err(AppError::parse(path, i + 1, format!("expected {POSE_DIM} values, found {}", v.len())));
        }
        frames.push(Skeleton::from_flat(&v).map_err(|e| AppError::parse(path, i + 1, e.to_string()))?);
    }
    Ok(frames)
}

pub fn write_skeletons(path: &Path, frames: &[Skeleton]) -> Result<()> {
    write_atomic(path, format_skeletons(frames).as_bytes())
}

pub fn read_skeletons(path: &Path) -> Result<Vec<Skeleton>> {
    parse_skeletons(&read_text(path)?, path)
}

pub const MANIFEST_HEADER: &str = "# clip_id\tview\tperson\tactivity\tscene\tstart\tend\turi";

pub fn format_manifest(records: &[ClipRecord]) -> String {
    let mut out = String::from(MANIFEST_HEADER);
    out.push('\n');
    for r in records {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.clip_id, r.view, r.person_id, r.activity_id, r.scene_id, r.frame_range.start, r.frame_range.end, r.source_uri
        )
        .expect("writing to a String");
    }
    out
}

pub fn parse_manifest(text: &str, path: &Path) -> Result<Vec<ClipRecord>> {
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 8 {
            return Err(AppError::parse(path, lineno, format!("expected 8 tab-separated fields, found {}", f.len())));
        }
        let num = |k: usize, what: &str| -> Result<u64> {
            f[k].parse().map_err(|_| AppError::parse(path, lineno, format!("{what} `{}` is not a non-negative integer", f[k])))
        };
        let small = |k: usize, what: &str| -> Result<u32> {
            u32::try_from(num(k, what)?).map_err(|_| AppError::parse(path, lineno, format!("{what} out of range")))
        };
        let view = View::parse(f[1]).ok_or_else(|| AppError::parse(path, lineno, format!("unknown view `{}`", f[1])))?;
        let r = ClipRecord {
            clip_id: f[0].to_string(),
            view,
            person_id: small(2, "person")?,
            activity_id: small(3, "activity")?,
            scene_id: small(4, "scene")?,
            frame_range: num(5, "start")?..num(6, "end")?,
            source_uri: f[7].to_string(),
        };
        r.validate().map_err(|e| AppError::parse(path, lineno, e.to_string()))?;
        records.push(r);
    }
    validate_manifest(&records)?;
    Ok(records)
}

pub fn load_manifest(path: &Path) -> Result<Vec<ClipRecord>> {
    parse_manifest(&read_text(path)?, path)
}

pub fn save_manifest(path: &Path, records: &[ClipRecord]) -> Result<()> {
    write_atomic(path, format_manifest(records).as_bytes())
}

fn part_name(p: GroupName) -> &'static str {
    match p {
        GroupName::Upper => "upper",
        GroupName::Lower => "lower",
        GroupName::All => "all",
    }
}

pub fn format_vocabulary(v: &PoseVocabulary) -> String {
    let mut out = format!("egosync-vocab {VOCAB_VERSION} {} {} {} {}\n", part_name(v.part), v.len(), v.dims(), v.seed);
    for c in &v.centers {
        push_row(&mut out, c);
    }
    out
}

pub fn parse_vocabulary(text: &str, path: &Path) -> Result<PoseVocabulary> {
    let mut lines = text.lines();
    let head: Vec<&str> = lines.next().unwrap_or("").split_whitespace().collect();
    if head.len() != 6 || head[0] != "egosync-vocab" {
        return Err(AppError::parse(path, 1, "expected `egosync-vocab <version> <part> <K> <dims> <seed>`"));
    }
    let int = |s: &str| s.parse::<u64>().map_err(|_| AppError::parse(path, 1, format!("bad header field `{s}`")));
    let version = int(head[1])? as u32;
    if version != VOCAB_VERSION {
        return Err(AppError::VersionMismatch { path: path.to_path_buf(), found: version, expected: VOCAB_VERSION });
    }
    let part = match head[2] {
        "upper" => GroupName::Upper,
        "lower" => GroupName::Lower,
        "all" => GroupName::All,
        other => return Err(AppError::parse(path, 1, format!("unknown part `{other}`"))),
    };
    let (k, dims, seed) = (int(head[3])? as usize, int(head[4])? as usize, int(head[5])?);
    let mut centers = Vec::with_capacity(k);
    for (i, line) in lines.enumerate() {
        let row = parse_row(line, path, i + 2)?;
        if row.len() != dims {
            return Err(AppError::parse(path, i + 2, format!("expected {dims} values, found {}", row.len())));
        }
        centers.push(row);
    }
    if centers.len() != k || k == 0 {
        return Err(AppError::parse(path, 1, format!("header announces {k} centers, found {}", centers.len())));
    }
    Ok(PoseVocabulary { part, seed, centers })
}

pub const TRAIN_LOG_HEADER: &str = "step\tepoch\tloss\tpositives\teasy_negatives\thard_negatives";

pub fn format_train_log(history: &[StepRecord]) -> String {
    let mut out = format!("{TRAIN_LOG_HEADER}\n");
    for h in history {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            h.step, h.epoch, h.loss, h.positives, h.easy_negatives, h.hard_negatives
        )
        .expect("writing to a String");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use egosync_core::skeleton::rest_pose;

    #[test]
    fn tensor_round_trip_both_dtypes() {
        let t = Tensor::new(vec![2, 3], vec![0.1, -2.5, 1e-300, f64::MAX, 0.0, -0.0]).unwrap();
        let p = Path::new("t.egt");
        let (back, dt) = decode_tensor(&encode_tensor(&t, DType::F64), p).unwrap();
        assert_eq!(dt, DType::F64);
        assert!(back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(back.shape(), t.shape());
        let (small, _) = decode_tensor(&encode_tensor(&t, DType::F32), p).unwrap();
        assert_eq!(small.data()[1], -2.5);

        let bytes = encode_tensor(&t, DType::F64);
        assert!(matches!(decode_tensor(&bytes[..bytes.len() - 1], p), Err(AppError::Parse { .. })));
        let mut wrong = bytes.clone();
        wrong[4] = 9;
        assert!(matches!(decode_tensor(&wrong, p), Err(AppError::VersionMismatch { found: 9, .. })));
    }

    #[test]
    fn skeleton_text_is_bit_exact() {
        let s = rest_pose().scaled(1.0 / 3.0);
        let moved = s.transformed(&egosync_core::skeleton::rot_z(0.7), [1e-7, -3.3, 1234.5678]);
        let frames = vec![s, moved];
        let back = parse_skeletons(&format_skeletons(&frames), Path::new("x")).unwrap();
        for (a, b) in frames.iter().zip(&back) {
            assert!(a.to_flat().iter().zip(b.to_flat()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert!(parse_skeletons("Hip\n", Path::new("x")).is_err());
        let short = format!("{}\n1 2 3\n", skeleton_header());
        match parse_skeletons(&short, Path::new("x")) {
            Err(AppError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn manifest_errors_carry_line_numbers() {
        let p = Path::new("m.tsv");
        assert!(parse_manifest("", p).unwrap().is_empty());
        let good = "a\tfirst\t0\t1\t0\t0\t10\tsynthetic://a\n";
        assert_eq!(parse_manifest(good, p).unwrap().len(), 1);
        let text = format!("{MANIFEST_HEADER}\n{good}b\tfront\t0\t1\t0\t0\t10\tx\n");
        match parse_manifest(&text, p) {
            Err(AppError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let dup = format!("{good}{good}");
        assert!(matches!(parse_manifest(&dup, p), Err(AppError::Core(egosync_core::Error::DuplicateId(_)))));
    }

    #[test]
    fn vocabulary_round_trip() {
        let v = PoseVocabulary { part: GroupName::Lower, seed: 3, centers: vec![vec![0.5, 1.0 / 3.0], vec![-1e-9, 7.0]] };
        let back = parse_vocabulary(&format_vocabulary(&v), Path::new("v")).unwrap();
        assert_eq!(back, v);
        assert!(parse_vocabulary("egosync-vocab 1 all 3 2 0\n1 2\n", Path::new("v")).is_err());
    }
}
