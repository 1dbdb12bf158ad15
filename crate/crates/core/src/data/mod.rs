//! Clip records, pair mining and the two-stage negative curriculum.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub mod synthetic;

/// Default hard-negative offsets: one second at 25 fps either way.
pub const DEFAULT_HARD_SHIFTS: [i64; 2] = [25, -25];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum View {
    First,
    ThirdFront,
    ThirdSide,
    ThirdTop,
}

impl View {
    pub const ALL: [View; 4] = [View::First, View::ThirdFront, View::ThirdSide, View::ThirdTop];

    pub fn as_str(self) -> &'static str {
        match self {
            View::First => "first",
            View::ThirdFront => "third_front",
            View::ThirdSide => "third_side",
            View::ThirdTop => "third_top",
        }
    }

    pub fn parse(s: &str) -> Option<View> {
        View::ALL.iter().copied().find(|v| v.as_str() == s)
    }

    pub fn is_third(self) -> bool {
        self != View::First
    }
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One recorded clip of one view.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClipRecord {
    pub clip_id: String,
    pub view: View,
    pub person_id: u32,
    pub activity_id: u32,
    pub scene_id: u32,
    /// Half-open `[start, end)` frame indices.
    pub frame_range: Range<u64>,
    pub source_uri: String,
}

impl ClipRecord {
    pub fn validate(&self) -> Result<()> {
        if self.clip_id.is_empty() || self.clip_id.contains(|c: char| c.is_whitespace()) {
            return Err(Error::InvalidRecord(alloc::format!(
                "clip id `{}` must be non-empty without whitespace",
                self.clip_id
            )));
        }
        if self.frame_range.start >= self.frame_range.end {
            return Err(Error::InvalidRecord(alloc::format!(
                "clip `{}` has empty frame range {}..{}",
                self.clip_id,
                self.frame_range.start,
                self.frame_range.end
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> u64 {
        self.frame_range.end - self.frame_range.start
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Same recording: wearer, activity, scene and frame range all match.
    pub fn same_recording(&self, other: &ClipRecord) -> bool {
        self.person_id == other.person_id
            && self.activity_id == other.activity_id
            && self.scene_id == other.scene_id
            && self.frame_range == other.frame_range
    }
}

/// Validates every record and rejects duplicate ids.
pub fn validate_manifest(records: &[ClipRecord]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for r in records {
        r.validate()?;
        if !seen.insert(r.clip_id.as_str()) {
            return Err(Error::DuplicateId(r.clip_id.clone()));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Difficulty {
    Positive,
    EasyNegative,
    HardNegative,
}

impl Difficulty {
    pub fn as_str(self) -> &'static str {
        match self {
            Difficulty::Positive => "positive",
            Difficulty::EasyNegative => "easy_negative",
            Difficulty::HardNegative => "hard_negative",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NegativeKind {
    Easy,
    Hard,
}

/// A first-view clip paired with a third-view clip.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClipPair {
    pub first: ClipRecord,
    pub third: ClipRecord,
    pub synchronized: bool,
    pub difficulty: Difficulty,
    /// Third-view frame = first-view frame + `time_shift`.
    pub time_shift: i64,
}

impl ClipPair {
    /// Whether the metadata satisfies the pair's difficulty predicate.
    pub fn is_consistent(&self) -> bool {
        let (f, t) = (&self.first, &self.third);
        if f.view != View::First || !t.view.is_third() {
            return false;
        }
        let same_context = f.person_id == t.person_id && f.scene_id == t.scene_id;
        match self.difficulty {
            Difficulty::Positive => {
                self.synchronized && self.time_shift == 0 && f.same_recording(t)
            }
            Difficulty::EasyNegative => {
                !self.synchronized && same_context && f.activity_id != t.activity_id
            }
            Difficulty::HardNegative => {
                !self.synchronized
                    && same_context
                    && f.activity_id == t.activity_id
                    && self.time_shift != 0
            }
        }
    }

    pub fn id(&self) -> String {
        alloc::format!("{}|{}@{:+}", self.first.clip_id, self.third.clip_id, self.time_shift)
    }
}

fn first_views(records: &[ClipRecord]) -> impl Iterator<Item = &ClipRecord> {
    records.iter().filter(|r| r.view == View::First)
}

fn front_views(records: &[ClipRecord]) -> impl Iterator<Item = &ClipRecord> {
    records.iter().filter(|r| r.view == View::ThirdFront)
}

/// Synchronized (first, front) pairs from the same recording.
pub fn mine_positive_pairs(records: &[ClipRecord]) -> Vec<ClipPair> {
    let mut out = Vec::new();
    for f in first_views(records) {
        for t in front_views(records).filter(|t| f.same_recording(t)) {
            out.push(ClipPair {
                first: f.clone(),
                third: t.clone(),
                synchronized: true,
                difficulty: Difficulty::Positive,
                time_shift: 0,
            });
        }
    }
    out
}

/// Easy negatives pair a wearer's first view with their own front view of a
/// different activity in the same scene. Hard negatives pair the two views of
/// one recording with every offset in `shifts`.
pub fn mine_negative_pairs(
    records: &[ClipRecord],
    kind: NegativeKind,
    shifts: &[i64],
) -> Result<Vec<ClipPair>> {
    let mut out = Vec::new();
    match kind {
        NegativeKind::Easy => {
            for f in first_views(records) {
                for t in front_views(records).filter(|t| {
                    t.person_id == f.person_id
                        && t.scene_id == f.scene_id
                        && t.activity_id != f.activity_id
                }) {
                    out.push(ClipPair {
                        first: f.clone(),
                        third: t.clone(),
                        synchronized: false,
                        difficulty: Difficulty::EasyNegative,
                        time_shift: 0,
                    });
                }
            }
        }
        NegativeKind::Hard => {
            if shifts.is_empty() || shifts.contains(&0) {
                return Err(Error::InvalidShiftRange);
            }
            for pos in mine_positive_pairs(records) {
                for &s in shifts {
                    out.push(ClipPair {
                        synchronized: false,
                        difficulty: Difficulty::HardNegative,
                        time_shift: s,
                        ..pos.clone()
                    });
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurriculumConfig {
    /// Negatives drawn per positive in each epoch.
    pub negatives_per_positive: f64,
    pub seed: u64,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        Self { negatives_per_positive: 1.0, seed: 0 }
    }
}

/// Difficulty of the negatives used in a given (1-based) epoch.
pub fn epoch_negative_kind(epoch: usize) -> Difficulty {
    if epoch <= 1 {
        Difficulty::EasyNegative
    } else {
        Difficulty::HardNegative
    }
}

/// The pair list for one epoch: every positive plus negatives of the epoch's
/// difficulty (easy in epoch 1, hard afterwards), shuffled.
///
/// The negative pool is cycled when it is smaller than the requested count.
pub fn curriculum_batches(
    pairs: &[ClipPair],
    epoch: usize,
    config: &CurriculumConfig,
) -> Result<Vec<ClipPair>> {
    if epoch == 0 {
        return Err(Error::InvalidConfig("epochs are numbered from 1".into()));
    }
    if !(config.negatives_per_positive >= 0.0) {
        return Err(Error::InvalidConfig("negatives_per_positive must be >= 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9));
    let wanted = epoch_negative_kind(epoch);
    let mut out: Vec<ClipPair> =
        pairs.iter().filter(|p| p.difficulty == Difficulty::Positive).cloned().collect();
    let mut pool: Vec<&ClipPair> = pairs.iter().filter(|p| p.difficulty == wanted).collect();
    let n_neg = libm::round(out.len() as f64 * config.negatives_per_positive) as usize;
    if pool.is_empty() {
        if n_neg > 0 {
            log::warn!("epoch {epoch}: no {} pairs available, positives only", wanted.as_str());
        }
    } else {
        pool.shuffle(&mut rng);
        out.extend(pool.iter().cycle().take(n_neg).map(|p| (*p).clone()));
    }
    out.shuffle(&mut rng);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, view: View, person: u32, activity: u32, scene: u32) -> ClipRecord {
        ClipRecord {
            clip_id: id.into(),
            view,
            person_id: person,
            activity_id: activity,
            scene_id: scene,
            frame_range: 0..100,
            source_uri: alloc::format!("mem://{id}"),
        }
    }

    fn recording(person: u32, activity: u32, scene: u32) -> Vec<ClipRecord> {
        View::ALL
            .iter()
            .map(|v| rec(&alloc::format!("p{person}a{activity}{v}"), *v, person, activity, scene))
            .collect()
    }

    #[test]
    fn manifest_validation() {
        assert!(validate_manifest(&[]).is_ok());
        let a = rec("x", View::First, 0, 0, 0);
        assert_eq!(validate_manifest(&[a.clone(), a]), Err(Error::DuplicateId("x".into())));
        let mut bad = rec("y", View::First, 0, 0, 0);
        bad.frame_range = 5..5;
        assert!(matches!(validate_manifest(&[bad]), Err(Error::InvalidRecord(_))));
    }

    #[test]
    fn four_view_recording_shares_metadata() {
        let r = recording(1, 2, 3);
        assert_eq!(r.len(), 4);
        assert!(validate_manifest(&r).is_ok());
        assert!(r.iter().all(|c| (c.person_id, c.activity_id, c.scene_id) == (1, 2, 3)));
    }

    #[test]
    fn positive_mining() {
        let only_third: Vec<_> = recording(0, 0, 0).into_iter().filter(|r| r.view.is_third()).collect();
        assert!(mine_positive_pairs(&only_third).is_empty());

        let single = [rec("e", View::First, 0, 0, 0), rec("f", View::ThirdFront, 0, 0, 0)];
        assert_eq!(mine_positive_pairs(&single).len(), 1);

        let mut two = recording(0, 0, 0);
        two.extend(recording(0, 1, 0));
        let pos = mine_positive_pairs(&two);
        assert_eq!(pos.len(), 2);
        for p in &pos {
            assert_eq!(p.first.activity_id, p.third.activity_id);
            assert_eq!(p.third.view, View::ThirdFront);
            assert!(p.is_consistent());
        }
        assert_eq!(mine_positive_pairs(&two), pos);
    }

    #[test]
    fn easy_negative_mining() {
        let one = recording(0, 0, 0);
        assert!(mine_negative_pairs(&one, NegativeKind::Easy, &[]).unwrap().is_empty());

        let mut two = recording(0, 0, 0);
        two.extend(recording(0, 1, 0));
        let neg = mine_negative_pairs(&two, NegativeKind::Easy, &[]).unwrap();
        let mut got: Vec<_> =
            neg.iter().map(|p| (p.first.activity_id, p.third.activity_id)).collect();
        got.sort();
        assert_eq!(got, [(0, 1), (1, 0)]);
        assert!(neg.iter().all(|p| p.is_consistent() && !p.synchronized));
    }

    #[test]
    fn easy_negatives_stay_in_scene_and_person() {
        let mut r = recording(0, 0, 0);
        r.extend(recording(0, 1, 1));
        r.extend(recording(1, 1, 0));
        assert!(mine_negative_pairs(&r, NegativeKind::Easy, &[]).unwrap().is_empty());
    }

    #[test]
    fn hard_negative_mining() {
        let mut two = recording(0, 0, 0);
        two.extend(recording(0, 1, 0));
        let neg = mine_negative_pairs(&two, NegativeKind::Hard, &DEFAULT_HARD_SHIFTS).unwrap();
        assert_eq!(neg.len(), 4);
        for p in &neg {
            assert!(p.time_shift == 25 || p.time_shift == -25);
            assert_eq!(p.first.activity_id, p.third.activity_id);
            assert!(p.is_consistent());
        }
        assert_eq!(
            mine_negative_pairs(&two, NegativeKind::Hard, &[25, 0]),
            Err(Error::InvalidShiftRange)
        );
    }

    fn pool() -> Vec<ClipPair> {
        let mut r = Vec::new();
        for a in 0..3 {
            r.extend(recording(0, a, 0));
        }
        let mut pairs = mine_positive_pairs(&r);
        pairs.extend(mine_negative_pairs(&r, NegativeKind::Easy, &[]).unwrap());
        pairs.extend(mine_negative_pairs(&r, NegativeKind::Hard, &DEFAULT_HARD_SHIFTS).unwrap());
        pairs
    }

    #[test]
    fn curriculum_separates_difficulties() {
        let pairs = pool();
        let cfg = CurriculumConfig::default();
        let e1 = curriculum_batches(&pairs, 1, &cfg).unwrap();
        assert!(e1.iter().all(|p| p.difficulty != Difficulty::HardNegative));
        assert_eq!(e1.iter().filter(|p| p.difficulty == Difficulty::EasyNegative).count(), 3);
        let e2 = curriculum_batches(&pairs, 2, &cfg).unwrap();
        assert!(e2.iter().all(|p| p.difficulty != Difficulty::EasyNegative));
        assert_eq!(e2.iter().filter(|p| p.difficulty == Difficulty::Positive).count(), 3);
        assert!(curriculum_batches(&pairs, 0, &cfg).is_err());
    }

    #[test]
    fn curriculum_ratio_and_empty_pool() {
        let pairs = pool();
        let cfg = CurriculumConfig { negatives_per_positive: 2.0, seed: 3 };
        let e2 = curriculum_batches(&pairs, 2, &cfg).unwrap();
        assert_eq!(e2.iter().filter(|p| !p.synchronized).count(), 6);

        let positives: Vec<_> =
            pairs.iter().filter(|p| p.synchronized).cloned().collect();
        let e1 = curriculum_batches(&positives, 1, &CurriculumConfig::default()).unwrap();
        assert_eq!(e1.len(), 3);
        assert!(e1.iter().all(|p| p.synchronized));
    }
}
