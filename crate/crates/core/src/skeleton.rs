//! The 17-joint body model, canonical alignment and the per-joint error metric.
//!
//! Canonical frame: origin at the hip joint, `x` along the wearer's facing
//! direction, `y` toward the wearer's left, `z` along the spine (hip to thorax).
//! The facing axis is `shoulder × spine` where the shoulder axis runs from the
//! right to the left shoulder, which makes the frame right-handed and leaves
//! the shoulder segment with a zero `x` component, i.e. parallel to the `yz`
//! plane. All lengths are centimeters.

use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};
use crate::math;

pub const NUM_JOINTS: usize = 17;
/// Flattened coordinate count, `17 × 3`.
pub const POSE_DIM: usize = NUM_JOINTS * 3;
/// Reference shoulder width used by scale normalization.
pub const REF_SHOULDER_CM: f64 = 30.0;
/// Minimum length of the segments that define the canonical frame.
pub const SEGMENT_TOLERANCE_CM: f64 = 1e-3;

/// Joint index table. The order is part of the on-disk contract.
///
/// Error-table row labels map as: Head, Neck, Thorax, Spine, Shoulders
/// (L/R Shoulder), Elbows, Wrists (also reported as "Hands"), Hip, Knees,
/// Ankles, Feet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Joint {
    Hip = 0,
    Spine,
    Thorax,
    Neck,
    Head,
    LShoulder,
    LElbow,
    LWrist,
    RShoulder,
    RElbow,
    RWrist,
    LKnee,
    LAnkle,
    LFoot,
    RKnee,
    RAnkle,
    RFoot,
}

impl Joint {
    pub const ALL: [Joint; NUM_JOINTS] = [
        Joint::Hip,
        Joint::Spine,
        Joint::Thorax,
        Joint::Neck,
        Joint::Head,
        Joint::LShoulder,
        Joint::LElbow,
        Joint::LWrist,
        Joint::RShoulder,
        Joint::RElbow,
        Joint::RWrist,
        Joint::LKnee,
        Joint::LAnkle,
        Joint::LFoot,
        Joint::RKnee,
        Joint::RAnkle,
        Joint::RFoot,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Joint::Hip => "Hip",
            Joint::Spine => "Spine",
            Joint::Thorax => "Thorax",
            Joint::Neck => "Neck",
            Joint::Head => "Head",
            Joint::LShoulder => "LShoulder",
            Joint::LElbow => "LElbow",
            Joint::LWrist => "LWrist",
            Joint::RShoulder => "RShoulder",
            Joint::RElbow => "RElbow",
            Joint::RWrist => "RWrist",
            Joint::LKnee => "LKnee",
            Joint::LAnkle => "LAnkle",
            Joint::LFoot => "LFoot",
            Joint::RKnee => "RKnee",
            Joint::RAnkle => "RAnkle",
            Joint::RFoot => "RFoot",
        }
    }

    pub fn from_name(name: &str) -> Option<Joint> {
        Joint::ALL.iter().copied().find(|j| j.name() == name)
    }

    /// Row label in the grouped error table (left/right pairs share a row).
    pub fn table_row(self) -> &'static str {
        match self {
            Joint::Hip => "Hip",
            Joint::Spine => "Spine",
            Joint::Thorax => "Thorax",
            Joint::Neck => "Neck",
            Joint::Head => "Head",
            Joint::LShoulder | Joint::RShoulder => "Shoulders",
            Joint::LElbow | Joint::RElbow => "Elbows",
            Joint::LWrist | Joint::RWrist => "Wrists",
            Joint::LKnee | Joint::RKnee => "Knees",
            Joint::LAnkle | Joint::RAnkle => "Ankles",
            Joint::LFoot | Joint::RFoot => "Feet",
        }
    }
}

pub type Vec3 = [f64; 3];

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot3(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn len3(a: Vec3) -> f64 {
    math::sqrt(dot3(a, a))
}

fn scale3(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

/// 17 joint positions in centimeters, indexed by [`Joint`].
#[derive(Clone, Copy, PartialEq)]
pub struct Skeleton {
    joints: [Vec3; NUM_JOINTS],
}

impl fmt::Debug for Skeleton {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut m = f.debug_map();
        for j in Joint::ALL {
            m.entry(&j.name(), &self.joints[j.index()]);
        }
        m.finish()
    }
}

impl Skeleton {
    pub fn new(joints: [Vec3; NUM_JOINTS]) -> Result<Self> {
        if joints.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSkeleton("non-finite coordinate".into()));
        }
        Ok(Self { joints })
    }

    /// Builds a skeleton from 51 values laid out joint-major (`x, y, z` per joint).
    pub fn from_flat(values: &[f64]) -> Result<Self> {
        if values.len() != POSE_DIM {
            return Err(Error::InvalidSkeleton(alloc::format!(
                "expected {POSE_DIM} values, got {}",
                values.len()
            )));
        }
        let mut joints = [[0.0; 3]; NUM_JOINTS];
        for (j, chunk) in joints.iter_mut().zip(values.chunks_exact(3)) {
            j.copy_from_slice(chunk);
        }
        Self::new(joints)
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.joints.iter().flatten().copied().collect()
    }

    pub fn joints(&self) -> &[Vec3; NUM_JOINTS] {
        &self.joints
    }

    pub fn joint(&self, j: Joint) -> Vec3 {
        self.joints[j.index()]
    }

    pub fn shoulder_width(&self) -> f64 {
        len3(sub(self.joint(Joint::LShoulder), self.joint(Joint::RShoulder)))
    }

    /// Applies `p ↦ R p + t` to every joint; `rotation` is row-major.
    pub fn transformed(&self, rotation: &[[f64; 3]; 3], translation: Vec3) -> Skeleton {
        let mut out = *self;
        for p in out.joints.iter_mut() {
            let q = *p;
            for (r, row) in rotation.iter().enumerate() {
                p[r] = dot3(*row, q) + translation[r];
            }
        }
        out
    }

    /// Uniformly scales every joint about the origin.
    pub fn scaled(&self, factor: f64) -> Skeleton {
        let mut out = *self;
        for p in out.joints.iter_mut() {
            *p = scale3(*p, factor);
        }
        out
    }

    /// The rigid transform taking this skeleton to its canonical frame:
    /// returns the row-major rotation whose rows are the body axes.
    fn body_frame(&self) -> Result<[[f64; 3]; 3]> {
        let shoulder = sub(self.joint(Joint::LShoulder), self.joint(Joint::RShoulder));
        if len3(shoulder) < SEGMENT_TOLERANCE_CM {
            return Err(Error::DegenerateSkeleton("shoulder segment below tolerance"));
        }
        let spine = sub(self.joint(Joint::Thorax), self.joint(Joint::Hip));
        let spine_len = len3(spine);
        if spine_len < SEGMENT_TOLERANCE_CM {
            return Err(Error::DegenerateSkeleton("spine segment below tolerance"));
        }
        let z = scale3(spine, 1.0 / spine_len);
        // shoulder × spine only sees the part of the shoulder orthogonal to the spine
        let facing = cross(shoulder, z);
        let facing_len = len3(facing);
        if facing_len < SEGMENT_TOLERANCE_CM {
            return Err(Error::DegenerateSkeleton("shoulder axis parallel to spine"));
        }
        let x = scale3(facing, 1.0 / facing_len);
        let y = cross(z, x);
        Ok([x, y, z])
    }
}

/// Moves the hip to the origin and rotates the body axes onto `x, y, z`.
pub fn canonicalize(s: &Skeleton) -> Result<Skeleton> {
    let rotation = s.body_frame()?;
    let hip = s.joint(Joint::Hip);
    let mut out = *s;
    for p in out.joints.iter_mut() {
        let d = sub(*p, hip);
        *p = [dot3(rotation[0], d), dot3(rotation[1], d), dot3(rotation[2], d)];
    }
    Ok(out)
}

/// Scales about the hip so that the shoulder width equals `ref_shoulder`.
pub fn normalize_scale(s: &Skeleton, ref_shoulder: f64) -> Result<Skeleton> {
    let width = s.shoulder_width();
    if width < SEGMENT_TOLERANCE_CM {
        return Err(Error::DegenerateSkeleton("zero shoulder width"));
    }
    let factor = ref_shoulder / width;
    let hip = s.joint(Joint::Hip);
    let mut out = *s;
    for p in out.joints.iter_mut() {
        *p = [
            hip[0] + (p[0] - hip[0]) * factor,
            hip[1] + (p[1] - hip[1]) * factor,
            hip[2] + (p[2] - hip[2]) * factor,
        ];
    }
    Ok(out)
}

/// Canonical frame plus the 30 cm shoulder reference, the form every
/// comparison and every learning target uses.
pub fn align(s: &Skeleton) -> Result<Skeleton> {
    normalize_scale(&canonicalize(s)?, REF_SHOULDER_CM)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GroupName {
    Upper,
    Lower,
    All,
}

/// A named subset of joints used for grouped averages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JointGroup {
    pub name: GroupName,
    pub members: Vec<Joint>,
}

impl JointGroup {
    /// Neck, Head, Thorax, Spine, Shoulders, Elbows, Wrists.
    pub fn upper() -> Self {
        use Joint::*;
        Self {
            name: GroupName::Upper,
            members: alloc::vec![
                Spine, Thorax, Neck, Head, LShoulder, LElbow, LWrist, RShoulder, RElbow, RWrist,
            ],
        }
    }

    /// Hip, Knees, Ankles, Feet.
    pub fn lower() -> Self {
        use Joint::*;
        Self {
            name: GroupName::Lower,
            members: alloc::vec![Hip, LKnee, LAnkle, LFoot, RKnee, RAnkle, RFoot],
        }
    }

    pub fn all() -> Self {
        Self { name: GroupName::All, members: Joint::ALL.to_vec() }
    }

    pub fn by_name(name: GroupName) -> Self {
        match name {
            GroupName::Upper => Self::upper(),
            GroupName::Lower => Self::lower(),
            GroupName::All => Self::all(),
        }
    }

    /// Coordinates of the member joints, joint-major.
    pub fn extract(&self, s: &Skeleton) -> Vec<f64> {
        self.members.iter().flat_map(|j| s.joint(*j)).collect()
    }
}

/// Per-joint distances (indexed by [`Joint`], zero outside the group) and their
/// mean over the group members.
#[derive(Debug, Clone, PartialEq)]
pub struct JointErrors {
    pub per_joint: [f64; NUM_JOINTS],
    pub mean: f64,
}

/// Euclidean distance per joint after aligning both skeletons independently.
pub fn joint_error(pred: &Skeleton, gt: &Skeleton, group: &JointGroup) -> Result<JointErrors> {
    let p = align(pred)?;
    let g = align(gt)?;
    let mut per_joint = [0.0; NUM_JOINTS];
    let mut total = 0.0;
    for j in &group.members {
        let e = len3(sub(p.joint(*j), g.joint(*j)));
        per_joint[j.index()] = e;
        total += e;
    }
    let mean = if group.members.is_empty() { 0.0 } else { total / group.members.len() as f64 };
    Ok(JointErrors { per_joint, mean })
}

/// Frame-averaged [`joint_error`] means.
pub fn sequence_error(preds: &[Skeleton], gts: &[Skeleton], group: &JointGroup) -> Result<f64> {
    Ok(sequence_errors(preds, gts, group)?.mean)
}

/// Like [`sequence_error`] but keeps the per-joint averages for table output.
pub fn sequence_errors(
    preds: &[Skeleton],
    gts: &[Skeleton],
    group: &JointGroup,
) -> Result<JointErrors> {
    if preds.len() != gts.len() {
        return Err(Error::LengthMismatch { left: preds.len(), right: gts.len() });
    }
    if preds.is_empty() {
        return Err(Error::EmptySequence);
    }
    let n = preds.len() as f64;
    let mut per_joint = [0.0; NUM_JOINTS];
    let mut mean = 0.0;
    for (p, g) in preds.iter().zip(gts) {
        let e = joint_error(p, g, group)?;
        for (acc, v) in per_joint.iter_mut().zip(e.per_joint) {
            *acc += v / n;
        }
        mean += e.mean / n;
    }
    Ok(JointErrors { per_joint, mean })
}

/// Rotation matrix about the `z` axis.
pub fn rot_z(angle: f64) -> [[f64; 3]; 3] {
    let (s, c) = (math::sin(angle), math::cos(angle));
    [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
}

/// Rotation matrix about the `y` axis.
pub fn rot_y(angle: f64) -> [[f64; 3]; 3] {
    let (s, c) = (math::sin(angle), math::cos(angle));
    [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]]
}

/// Rotation matrix about the `x` axis.
pub fn rot_x(angle: f64) -> [[f64; 3]; 3] {
    let (s, c) = (math::sin(angle), math::cos(angle));
    [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]]
}

pub fn mat_mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for (r, row) in out.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = (0..3).map(|k| a[r][k] * b[k][c]).sum();
        }
    }
    out
}

pub fn mat_vec(a: &[[f64; 3]; 3], v: Vec3) -> Vec3 {
    [dot3(a[0], v), dot3(a[1], v), dot3(a[2], v)]
}

/// A plausible standing pose, already canonical with a 30 cm shoulder width.
pub fn rest_pose() -> Skeleton {
    use Joint::*;
    let mut j = [[0.0; 3]; NUM_JOINTS];
    let mut set = |joint: Joint, p: Vec3| j[joint.index()] = p;
    set(Hip, [0.0, 0.0, 0.0]);
    set(Spine, [0.0, 0.0, 22.0]);
    set(Thorax, [0.0, 0.0, 45.0]);
    set(Neck, [0.0, 0.0, 55.0]);
    set(Head, [2.0, 0.0, 70.0]);
    set(LShoulder, [0.0, 15.0, 47.0]);
    set(LElbow, [0.0, 17.0, 19.0]);
    set(LWrist, [3.0, 18.0, -5.0]);
    set(RShoulder, [0.0, -15.0, 47.0]);
    set(RElbow, [0.0, -17.0, 19.0]);
    set(RWrist, [3.0, -18.0, -5.0]);
    set(LKnee, [0.0, 9.0, -45.0]);
    set(LAnkle, [-2.0, 9.0, -87.0]);
    set(LFoot, [10.0, 10.0, -92.0]);
    set(RKnee, [0.0, -9.0, -45.0]);
    set(RAnkle, [-2.0, -9.0, -87.0]);
    set(RFoot, [10.0, -10.0, -92.0]);
    Skeleton { joints: j }
}
