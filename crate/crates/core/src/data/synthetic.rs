//! Synthetic paired-view recordings driven by a low-dimensional latent pose.
//!
//! Each recording is one wearer performing one activity. A 4-D latent
//! trajectory (left arm, right arm, legs, trunk) drives three things:
//!
//! * the ground-truth skeleton, through a fixed articulated model;
//! * four rendered views, each a different fixed function of the latent: every
//!   latent component moves a coloured blob along a view-specific direction,
//!   and the first-person camera additionally pans with the trunk component;
//! * nothing else. Person, scene and activity only shape the trajectory and
//!   add small appearance offsets.
//!
//! Frames are small multi-channel feature images, not photographs.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{ClipRecord, View};
use crate::error::{Error, Result};
use crate::math;
use crate::skeleton::{self, Joint, Skeleton, Vec3, NUM_JOINTS};
use crate::tensor::{Clip, Tensor};

pub const LATENT_DIM: usize = 4;
/// RGB-like channels per rendered frame.
pub const FRAME_CHANNELS: usize = 3;

/// Per-frame latent pose; every component lies in `[-1, 1]`.
pub type LatentPose = [f64; LATENT_DIM];

/// Seed of the fixed camera models; independent of the dataset seed so that
/// every dataset renders through the same view functions.
const CAMERA_SEED: u64 = 0x0E90_5EED;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub n_people: usize,
    pub n_activities: usize,
    pub n_frames: usize,
    pub height: usize,
    pub width: usize,
    /// Standard deviation of per-pixel Gaussian noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self { n_people: 3, n_activities: 8, n_frames: 240, height: 16, width: 16, noise: 0.02, seed: 0 }
    }
}

/// Activity class used for grouped analysis (activity id modulo 4).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ActivityClass {
    WholeBody,
    VerticalMovement,
    HandsFeet,
    Complex,
}

impl ActivityClass {
    pub const ALL: [ActivityClass; 4] = [
        ActivityClass::WholeBody,
        ActivityClass::VerticalMovement,
        ActivityClass::HandsFeet,
        ActivityClass::Complex,
    ];

    pub fn of_activity(activity_id: u32) -> Self {
        Self::ALL[activity_id as usize % 4]
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ActivityClass::WholeBody => "whole_body",
            ActivityClass::VerticalMovement => "vertical_movement",
            ActivityClass::HandsFeet => "hands_feet",
            ActivityClass::Complex => "complex",
        }
    }

    /// Relative motion amplitude per latent component.
    fn emphasis(self) -> LatentPose {
        match self {
            ActivityClass::WholeBody => [0.8, 0.8, 0.8, 0.6],
            ActivityClass::VerticalMovement => [0.3, 0.3, 0.4, 1.0],
            ActivityClass::HandsFeet => [1.0, 1.0, 0.9, 0.15],
            ActivityClass::Complex => [0.9, 0.5, 0.6, 0.7],
        }
    }
}

#[derive(Debug, Clone)]
struct ActivityMotion {
    offset: LatentPose,
    amplitude: LatentPose,
    period: LatentPose,
}

#[derive(Debug, Clone)]
struct PersonTraits {
    body_scale: f64,
    heading: f64,
    position: [f64; 2],
    tint: [f64; FRAME_CHANNELS],
    speed: f64,
    amplitude_scale: f64,
}

#[derive(Debug, Clone)]
struct Blob {
    base: [f64; 2],
    direction: [f64; 2],
    color: [f64; FRAME_CHANNELS],
}

/// Fixed rendering function of one view.
#[derive(Debug, Clone)]
pub struct Camera {
    view: View,
    blobs: [Blob; LATENT_DIM],
    background: [(f64, f64, f64); FRAME_CHANNELS],
}

impl Camera {
    pub fn new(view: View) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(CAMERA_SEED ^ (view as u64 + 1) * 0x1000_0001);
        let blobs = core::array::from_fn(|_| {
            let angle = rng.random_range(0.0..TAU);
            Blob {
                base: [rng.random_range(0.3..0.7), rng.random_range(0.3..0.7)],
                direction: [math::cos(angle), math::sin(angle)],
                color: core::array::from_fn(|_| rng.random_range(0.2..1.0)),
            }
        });
        let background = core::array::from_fn(|_| {
            (rng.random_range(0.05..0.15), rng.random_range(0.2..0.6), rng.random_range(0.2..0.6))
        });
        Self { view, blobs, background }
    }

    /// Noise-free frame for a latent pose, laid out `channel × row × col`.
    pub fn render(
        &self,
        latent: &LatentPose,
        scene: u32,
        tint: &[f64; FRAME_CHANNELS],
        height: usize,
        width: usize,
    ) -> Vec<f64> {
        let size = height.min(width) as f64;
        let reach = 0.22 * size;
        let sigma = 0.09 * size;
        let inv_two_sigma_sq = 1.0 / (2.0 * sigma * sigma);
        let scene_phase = scene as f64 * 1.7;
        // the head-mounted camera pans with the trunk
        let pan = if self.view == View::First { latent[3] * 0.15 * width as f64 } else { 0.0 };

        let centers: [[f64; 2]; LATENT_DIM] = core::array::from_fn(|k| {
            let b = &self.blobs[k];
            [
                b.base[0] * width as f64 + latent[k] * reach * b.direction[0],
                b.base[1] * height as f64 + latent[k] * reach * b.direction[1],
            ]
        });

        let mut out = alloc::vec![0.0; FRAME_CHANNELS * height * width];
        for (c, plane) in out.chunks_exact_mut(height * width).enumerate() {
            let (amp, fx, fy) = self.background[c];
            for row in 0..height {
                for col in 0..width {
                    let x = col as f64 + 0.5;
                    let y = row as f64 + 0.5;
                    let mut v = tint[c]
                        + amp * math::sin(fx * (x - pan) + scene_phase + c as f64)
                            * math::cos(fy * y + 0.5 * scene_phase);
                    for (k, center) in centers.iter().enumerate() {
                        let dx = x - center[0];
                        let dy = y - center[1];
                        v += self.blobs[k].color[c] * math::exp(-(dx * dx + dy * dy) * inv_two_sigma_sq);
                    }
                    plane[row * width + col] = v;
                }
            }
        }
        out
    }
}

/// One wearer performing one activity, seen from all four views.
#[derive(Debug, Clone)]
pub struct Recording {
    pub person_id: u32,
    pub activity_id: u32,
    pub scene_id: u32,
    pub latent: Vec<LatentPose>,
    pub skeletons: Vec<Skeleton>,
    /// Indices into [`SyntheticDataset::records`] / `clips`, ordered as [`View::ALL`].
    pub clips: [usize; 4],
}

impl Recording {
    pub fn clip(&self, view: View) -> usize {
        self.clips[view as usize]
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub config: SyntheticConfig,
    pub records: Vec<ClipRecord>,
    pub clips: Vec<Clip>,
    pub recordings: Vec<Recording>,
}

impl SyntheticDataset {
    pub fn recording_of_clip(&self, clip: usize) -> Option<&Recording> {
        self.recordings.iter().find(|r| r.clips.contains(&clip))
    }

    pub fn clip_index(&self, clip_id: &str) -> Option<usize> {
        self.records.iter().position(|r| r.clip_id == clip_id)
    }
}

fn activity_motion(seed: u64, activity: usize) -> ActivityMotion {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xAC71_0000 ^ (activity as u64 + 1) * 7919);
    let emphasis = ActivityClass::of_activity(activity as u32).emphasis();
    let amplitude: LatentPose = core::array::from_fn(|k| emphasis[k] * rng.random_range(0.55..0.8));
    let offset = core::array::from_fn(|k| {
        let room = (1.0 - amplitude[k] * 1.15).max(0.0).min(0.3);
        rng.random_range(-1.0..=1.0) * room
    });
    let period = core::array::from_fn(|_| rng.random_range(30.0..72.0));
    ActivityMotion { offset, amplitude, period }
}

fn person_traits(seed: u64, person: usize) -> PersonTraits {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9E50_0000 ^ (person as u64 + 1) * 104_729);
    PersonTraits {
        body_scale: rng.random_range(0.9..1.1),
        heading: rng.random_range(0.0..TAU),
        position: [rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0)],
        tint: core::array::from_fn(|_| rng.random_range(-0.05..0.05)),
        speed: rng.random_range(0.9..1.1),
        amplitude_scale: rng.random_range(0.85..1.0),
    }
}

fn trajectory(
    motion: &ActivityMotion,
    person: &PersonTraits,
    phases: &LatentPose,
    n_frames: usize,
) -> Vec<LatentPose> {
    (0..n_frames)
        .map(|t| {
            core::array::from_fn(|k| {
                let w = TAU * person.speed / motion.period[k];
                let v = motion.offset[k]
                    + motion.amplitude[k] * person.amplitude_scale * math::sin(w * t as f64 + phases[k]);
                v.clamp(-1.0, 1.0)
            })
        })
        .collect()
}

/// Articulated body driven by the latent pose, placed in the world.
pub fn skeleton_from_latent(
    latent: &LatentPose,
    body_scale: f64,
    heading: f64,
    position: [f64; 2],
) -> Skeleton {
    use Joint::*;
    let rest = skeleton::rest_pose();
    let trunk = skeleton::rot_y(0.35 * latent[3]);
    let hip_drop = 8.0 * (latent[3] + 1.0);
    let mut j: [Vec3; NUM_JOINTS] = [[0.0; 3]; NUM_JOINTS];
    let add = |a: Vec3, b: Vec3| [a[0] + b[0], a[1] + b[1], a[2] + b[2]];

    for joint in [Spine, Thorax, Neck, Head, LShoulder, RShoulder] {
        j[joint.index()] = skeleton::mat_vec(&trunk, rest.joint(joint));
    }
    for (shoulder, elbow, wrist, swing, side) in [
        (LShoulder, LElbow, LWrist, latent[0], 1.0),
        (RShoulder, RElbow, RWrist, latent[1], -1.0),
    ] {
        let upper = skeleton::mat_mul(&trunk, &skeleton::rot_y(-1.1 * swing));
        let fore = skeleton::mat_mul(&upper, &skeleton::rot_y(-0.3 - 0.5 * (swing + 1.0)));
        j[elbow.index()] = add(j[shoulder.index()], skeleton::mat_vec(&upper, [0.0, 2.0 * side, -28.0]));
        j[wrist.index()] = add(j[elbow.index()], skeleton::mat_vec(&fore, [0.0, 1.0 * side, -24.0]));
    }
    let bend = 0.2 + 0.6 * (latent[3] + 1.0) / 2.0;
    for (knee, ankle, foot, swing, side) in [
        (LKnee, LAnkle, LFoot, latent[2], 1.0),
        (RKnee, RAnkle, RFoot, -latent[2], -1.0),
    ] {
        let thigh = skeleton::rot_y(-0.6 * swing - bend);
        let shin = skeleton::rot_y(-0.6 * swing + bend);
        j[knee.index()] = add([0.0, 9.0 * side, 0.0], skeleton::mat_vec(&thigh, [0.0, 0.0, -45.0]));
        j[ankle.index()] = add(j[knee.index()], skeleton::mat_vec(&shin, [0.0, 0.0, -42.0]));
        j[foot.index()] = add(j[ankle.index()], skeleton::mat_vec(&shin, [12.0, 1.0 * side, -5.0]));
    }

    let heading_rot = skeleton::rot_z(heading);
    let lift = (95.0 - hip_drop) * body_scale;
    let local = Skeleton::new(j).expect("finite by construction").scaled(body_scale);
    local.transformed(&heading_rot, [position[0], position[1], lift])
}

/// Generates a deterministic paired-view dataset.
///
/// Every (person, activity) pair yields one recording with four clips
/// (`first`, `third_front`, `third_side`, `third_top`). Each person has their
/// own scene, so easy negatives exist whenever `n_activities ≥ 2`.
pub fn generate_synthetic_dataset(config: &SyntheticConfig) -> Result<SyntheticDataset> {
    let c = config;
    if c.n_people == 0 || c.n_activities == 0 || c.n_frames == 0 || c.height < 4 || c.width < 4 {
        return Err(Error::InvalidConfig(
            "synthetic sizes must be positive (frames ≥ 1, images ≥ 4×4)".into(),
        ));
    }
    if !(c.noise >= 0.0) {
        return Err(Error::InvalidConfig("noise must be >= 0".into()));
    }
    let cameras: [Camera; 4] = core::array::from_fn(|v| Camera::new(View::ALL[v]));
    let noise = Normal::new(0.0, c.noise.max(f64::MIN_POSITIVE))
        .map_err(|_| Error::InvalidConfig("bad noise".into()))?;

    let mut records = Vec::new();
    let mut clips = Vec::new();
    let mut recordings = Vec::new();
    for person in 0..c.n_people {
        let traits = person_traits(c.seed, person);
        let scene = person as u32;
        for activity in 0..c.n_activities {
            let motion = activity_motion(c.seed, activity);
            let mut rng = ChaCha8Rng::seed_from_u64(
                c.seed ^ ((person as u64) << 32 | activity as u64).wrapping_mul(0x2545_F491_4F6C_DD1D),
            );
            let phases: LatentPose = core::array::from_fn(|_| rng.random_range(0.0..TAU));
            let latent = trajectory(&motion, &traits, &phases, c.n_frames);
            let skeletons = latent
                .iter()
                .map(|z| skeleton_from_latent(z, traits.body_scale, traits.heading, traits.position))
                .collect();

            let mut idx = [0usize; 4];
            for (v, camera) in cameras.iter().enumerate() {
                let view = View::ALL[v];
                let clip_id = format!("p{person:02}_a{activity:02}_{view}");
                let frame_len = FRAME_CHANNELS * c.height * c.width;
                let mut data = Vec::with_capacity(c.n_frames * frame_len);
                for z in &latent {
                    let frame = camera.render(z, scene, &traits.tint, c.height, c.width);
                    if c.noise > 0.0 {
                        data.extend(frame.into_iter().map(|x| x + noise.sample(&mut rng)));
                    } else {
                        data.extend(frame);
                    }
                }
                let tensor =
                    Tensor::new(alloc::vec![c.n_frames, FRAME_CHANNELS, c.height, c.width], data)?;
                idx[v] = records.len();
                records.push(ClipRecord {
                    clip_id: clip_id.clone(),
                    view,
                    person_id: person as u32,
                    activity_id: activity as u32,
                    scene_id: scene,
                    frame_range: 0..c.n_frames as u64,
                    source_uri: format!("synthetic://{}/{clip_id}", c.seed),
                });
                clips.push(Clip::new(clip_id, tensor)?);
            }
            recordings.push(Recording {
                person_id: person as u32,
                activity_id: activity as u32,
                scene_id: scene,
                latent,
                skeletons,
                clips: idx,
            });
        }
    }
    Ok(SyntheticDataset { config: c.clone(), records, clips, recordings })
}
