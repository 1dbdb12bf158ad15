//! Frame stacks: the center RGB frame plus the ten inter-frame optical-flow
//! fields of the surrounding 11-frame window.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::{Clip, Tensor};

pub const RGB_CHANNELS: usize = 3;
pub const FLOW_FIELDS: usize = 10;
/// `3 + 2 × 10`.
pub const STACK_CHANNELS: usize = RGB_CHANNELS + 2 * FLOW_FIELDS;
/// Frames on each side of the center frame.
pub const HALF_WINDOW: usize = FLOW_FIELDS / 2;
/// Frames a clip needs for a single stack.
pub const WINDOW_FRAMES: usize = FLOW_FIELDS + 1;
pub const MIN_STD: f64 = 1e-8;

/// Network input: channels `[rgb(3), flow(t-5→t-4) (u, v), …, flow(t+4→t+5) (u, v)]`,
/// each channel `height × width`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameStack {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl FrameStack {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::ShapeMismatch { expected: channels * height * width, got: data.len() });
        }
        Ok(Self { height, width, channels, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn rgb(&self) -> &[f64] {
        &self.data[..RGB_CHANNELS * self.height * self.width]
    }

    /// Flow field `i` (`0..10`) as `2 × height × width`.
    pub fn flow(&self, i: usize) -> &[f64] {
        let n = self.height * self.width;
        let start = (RGB_CHANNELS + 2 * i) * n;
        &self.data[start..start + 2 * n]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Source of optical flow between consecutive clip frames.
pub trait FlowProvider {
    /// Short descriptor, used as the config key.
    fn name(&self) -> &str;

    /// Flow from frame `t` to frame `t + 1` as `2 × height × width`
    /// (horizontal then vertical displacement, pixels).
    fn flow(&self, clip: &Clip, t: usize) -> Result<Vec<f64>>;
}

impl<P: FlowProvider + ?Sized> FlowProvider for &P {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn flow(&self, clip: &Clip, t: usize) -> Result<Vec<f64>> {
        (**self).flow(clip, t)
    }
}

/// Always returns zero motion.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroFlow;

impl FlowProvider for ZeroFlow {
    fn name(&self) -> &str {
        "zero"
    }

    fn flow(&self, clip: &Clip, t: usize) -> Result<Vec<f64>> {
        check_pair(clip, t)?;
        Ok(alloc::vec![0.0; 2 * clip.height() * clip.width()])
    }
}

/// Local Lucas–Kanade estimate on the channel-averaged intensity.
///
/// Solves the 2×2 normal equations over a `(2r+1)²` window around each pixel;
/// spatial gradients are central differences of the two frames' mean.
#[derive(Debug, Clone, Copy)]
pub struct GradientFlow {
    pub radius: usize,
    /// Displacements are clipped to `±clip` pixels when set.
    pub clip: Option<f64>,
}

impl Default for GradientFlow {
    fn default() -> Self {
        Self { radius: 2, clip: None }
    }
}

impl FlowProvider for GradientFlow {
    fn name(&self) -> &str {
        "gradient"
    }

    fn flow(&self, clip: &Clip, t: usize) -> Result<Vec<f64>> {
        check_pair(clip, t)?;
        let (h, w) = (clip.height(), clip.width());
        let gray = |frame: &[f64]| -> Vec<f64> {
            let c = clip.channels();
            (0..h * w).map(|i| (0..c).map(|k| frame[k * h * w + i]).sum::<f64>() / c as f64).collect()
        };
        let i0 = gray(clip.frame(t));
        let i1 = gray(clip.frame(t + 1));
        let avg: Vec<f64> = i0.iter().zip(&i1).map(|(a, b)| 0.5 * (a + b)).collect();
        let at = |r: isize, c: isize| {
            let r = r.clamp(0, h as isize - 1) as usize;
            let c = c.clamp(0, w as isize - 1) as usize;
            avg[r * w + c]
        };
        let mut ix = alloc::vec![0.0; h * w];
        let mut iy = alloc::vec![0.0; h * w];
        for r in 0..h as isize {
            for c in 0..w as isize {
                let i = r as usize * w + c as usize;
                ix[i] = 0.5 * (at(r, c + 1) - at(r, c - 1));
                iy[i] = 0.5 * (at(r + 1, c) - at(r - 1, c));
            }
        }
        let it: Vec<f64> = i1.iter().zip(&i0).map(|(a, b)| a - b).collect();

        let rad = self.radius as isize;
        let mut out = alloc::vec![0.0; 2 * h * w];
        for r in 0..h as isize {
            for c in 0..w as isize {
                let (mut sxx, mut sxy, mut syy, mut sxt, mut syt) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for dr in -rad..=rad {
                    for dc in -rad..=rad {
                        let (rr, cc) = (r + dr, c + dc);
                        if rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize {
                            continue;
                        }
                        let i = rr as usize * w + cc as usize;
                        sxx += ix[i] * ix[i];
                        sxy += ix[i] * iy[i];
                        syy += iy[i] * iy[i];
                        sxt += ix[i] * it[i];
                        syt += iy[i] * it[i];
                    }
                }
                let det = sxx * syy - sxy * sxy;
                let i = r as usize * w + c as usize;
                if det.abs() > 1e-9 {
                    let mut u = (-syy * sxt + sxy * syt) / det;
                    let mut v = (sxy * sxt - sxx * syt) / det;
                    if let Some(lim) = self.clip {
                        u = u.clamp(-lim, lim);
                        v = v.clamp(-lim, lim);
                    }
                    out[i] = u;
                    out[h * w + i] = v;
                }
            }
        }
        Ok(out)
    }
}

/// Flows loaded from storage or cached from another provider, keyed by clip id.
/// Each entry is a `(frames − 1) × 2 × height × width` tensor.
#[derive(Debug, Clone, Default)]
pub struct PrecomputedFlow {
    flows: BTreeMap<String, Tensor>,
}

impl PrecomputedFlow {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, clip_id: impl Into<String>, flows: Tensor) {
        self.flows.insert(clip_id.into(), flows);
    }

    pub fn get(&self, clip_id: &str) -> Option<&Tensor> {
        self.flows.get(clip_id)
    }

    /// Runs `provider` over every consecutive frame pair of `clip` and caches the result.
    pub fn cache_clip(&mut self, clip: &Clip, provider: &dyn FlowProvider) -> Result<()> {
        let flows = compute_clip_flows(clip, provider)?;
        self.flows.insert(clip.id.clone(), flows);
        Ok(())
    }
}

impl FlowProvider for PrecomputedFlow {
    fn name(&self) -> &str {
        "precomputed"
    }

    fn flow(&self, clip: &Clip, t: usize) -> Result<Vec<f64>> {
        check_pair(clip, t)?;
        let flows = self.flows.get(&clip.id).ok_or_else(|| {
            Error::InvalidConfig(alloc::format!("no precomputed flow for clip `{}`", clip.id))
        })?;
        let expected = [clip.len() - 1, 2, clip.height(), clip.width()];
        if flows.shape() != expected {
            return Err(Error::ShapeMismatch {
                expected: expected.iter().product(),
                got: flows.data().len(),
            });
        }
        Ok(flows.outer(t).to_vec())
    }
}

/// All consecutive flows of a clip, `(frames − 1) × 2 × height × width`.
pub fn compute_clip_flows(clip: &Clip, provider: &dyn FlowProvider) -> Result<Tensor> {
    let n = clip.len().saturating_sub(1);
    let mut data = Vec::with_capacity(n * 2 * clip.height() * clip.width());
    for t in 0..n {
        data.extend(provider.flow(clip, t)?);
    }
    Tensor::new(alloc::vec![n, 2, clip.height(), clip.width()], data)
}

fn check_pair(clip: &Clip, t: usize) -> Result<()> {
    if t + 1 >= clip.len() {
        return Err(Error::WindowOutOfRange {
            start: t as isize,
            end: t as isize + 2,
            len: clip.len(),
        });
    }
    Ok(())
}

/// Whether frame `t` has a full 11-frame window.
pub fn has_window(clip_len: usize, t: usize) -> bool {
    t >= HALF_WINDOW && t + HALF_WINDOW < clip_len
}

/// Center frames with a full window, in order.
pub fn eligible_frames(clip_len: usize) -> core::ops::Range<usize> {
    if clip_len < WINDOW_FRAMES {
        0..0
    } else {
        HALF_WINDOW..clip_len - HALF_WINDOW
    }
}

/// Stacks frame `t` with the ten flows of the window `[t−5, t+5]`.
pub fn build_stack(clip: &Clip, t: usize, provider: &dyn FlowProvider) -> Result<FrameStack> {
    if clip.channels() != RGB_CHANNELS {
        return Err(Error::ShapeMismatch { expected: RGB_CHANNELS, got: clip.channels() });
    }
    if !has_window(clip.len(), t) {
        return Err(Error::WindowOutOfRange {
            start: t as isize - HALF_WINDOW as isize,
            end: (t + HALF_WINDOW + 1) as isize,
            len: clip.len(),
        });
    }
    let (h, w) = (clip.height(), clip.width());
    let mut data = Vec::with_capacity(STACK_CHANNELS * h * w);
    data.extend_from_slice(clip.frame(t));
    for s in t - HALF_WINDOW..t + HALF_WINDOW {
        let f = provider.flow(clip, s)?;
        if f.len() != 2 * h * w {
            return Err(Error::ShapeMismatch { expected: 2 * h * w, got: f.len() });
        }
        data.extend(f);
    }
    FrameStack::new(STACK_CHANNELS, h, w, data)
}

/// Per-channel mean and standard deviation over a set of stacks.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    pub fn from_stacks<'a>(stacks: impl IntoIterator<Item = &'a FrameStack>) -> Result<Self> {
        let mut sum: Vec<f64> = Vec::new();
        let mut sum_sq: Vec<f64> = Vec::new();
        let mut count = 0usize;
        let mut channels = None;
        for s in stacks {
            let c = *channels.get_or_insert(s.channels());
            if s.channels() != c {
                return Err(Error::ShapeMismatch { expected: c, got: s.channels() });
            }
            if sum.is_empty() {
                sum = alloc::vec![0.0; c];
                sum_sq = alloc::vec![0.0; c];
            }
            for k in 0..c {
                for v in s.channel(k) {
                    sum[k] += v;
                    sum_sq[k] += v * v;
                }
            }
            count += s.height() * s.width();
        }
        if count == 0 {
            return Err(Error::EmptySequence);
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sum_sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| math::sqrt((q / n - m * m).max(0.0)))
            .collect();
        Ok(Self { mean, std })
    }

    /// Channels whose spread is below [`MIN_STD`]; these are only centered.
    pub fn zero_std_channels(&self) -> Vec<usize> {
        self.std.iter().enumerate().filter(|(_, s)| **s < MIN_STD).map(|(i, _)| i).collect()
    }
}

/// Per-channel standardization with training-split statistics.
///
/// Channels with near-zero spread are centered only and a warning is logged.
pub fn normalize_stack(stack: &FrameStack, stats: &ChannelStats) -> Result<FrameStack> {
    if stats.mean.len() != stack.channels() || stats.std.len() != stack.channels() {
        return Err(Error::ShapeMismatch { expected: stack.channels(), got: stats.mean.len() });
    }
    let n = stack.height() * stack.width();
    let mut data = stack.data().to_vec();
    for (c, chunk) in data.chunks_exact_mut(n).enumerate() {
        let m = stats.mean[c];
        let s = stats.std[c];
        if s < MIN_STD {
            log::warn!("channel {c}: std {s:e} below {MIN_STD:e}, centering only");
            chunk.iter_mut().for_each(|v| *v -= m);
        } else {
            chunk.iter_mut().for_each(|v| *v = (*v - m) / s);
        }
    }
    FrameStack::new(stack.channels(), stack.height(), stack.width(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn clip_from(frames: usize, h: usize, w: usize, f: impl Fn(usize, usize, usize, usize) -> f64) -> Clip {
        let mut data = Vec::new();
        for t in 0..frames {
            for c in 0..3 {
                for r in 0..h {
                    for col in 0..w {
                        data.push(f(t, c, r, col));
                    }
                }
            }
        }
        Clip::new("c", Tensor::new(alloc::vec![frames, 3, h, w], data).unwrap()).unwrap()
    }

    #[test]
    fn static_clip_has_zero_flow() {
        let clip = clip_from(12, 8, 8, |_, c, r, col| (c + r * col) as f64 * 0.1);
        let s = build_stack(&clip, 6, &ZeroFlow).unwrap();
        assert_eq!(s.channels(), STACK_CHANNELS);
        assert!(s.data()[RGB_CHANNELS * 64..].iter().all(|v| *v == 0.0));
        assert_eq!(s.rgb(), clip.frame(6));
        let g = build_stack(&clip, 6, &GradientFlow::default()).unwrap();
        assert!(g.data()[RGB_CHANNELS * 64..].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn window_bounds() {
        let clip = clip_from(11, 4, 4, |_, _, _, _| 0.0);
        assert!(build_stack(&clip, 5, &ZeroFlow).is_ok());
        for t in [0, 4, 6, 10] {
            assert!(matches!(build_stack(&clip, t, &ZeroFlow), Err(Error::WindowOutOfRange { .. })));
        }
        assert_eq!(eligible_frames(11), 5..6);
        assert_eq!(eligible_frames(10), 0..0);
    }

    #[test]
    fn translation_recovers_one_pixel() {
        let k = TAU_OVER * 1.0;
        let clip = clip_from(12, 24, 24, |t, _, r, c| {
            math::sin(k * (c as f64 - t as f64)) + 0.7 * math::cos(k * 0.8 * r as f64 + 0.3)
        });
        let s = build_stack(&clip, 6, &GradientFlow::default()).unwrap();
        let n = 24 * 24;
        for i in 0..FLOW_FIELDS {
            let f = s.flow(i);
            let u = math::mean(&f[..n]);
            let v = math::mean(&f[n..]);
            assert!((u - 1.0).abs() < 0.2, "u = {u}");
            assert!(v.abs() < 0.2, "v = {v}");
        }
    }
    const TAU_OVER: f64 = core::f64::consts::TAU / 14.0;

    #[test]
    fn precomputed_matches_source_provider() {
        let clip = clip_from(14, 6, 6, |t, c, r, col| math::sin(0.3 * (t + c + r) as f64 + col as f64));
        let mut cache = PrecomputedFlow::new();
        cache.cache_clip(&clip, &GradientFlow::default()).unwrap();
        for t in eligible_frames(clip.len()) {
            assert_eq!(
                build_stack(&clip, t, &cache).unwrap(),
                build_stack(&clip, t, &GradientFlow::default()).unwrap()
            );
        }
        let other = Clip::new("missing", clip.tensor().clone()).unwrap();
        assert!(build_stack(&other, 6, &cache).is_err());
    }

    #[test]
    fn normalization() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let data: Vec<f64> = (0..STACK_CHANNELS * 25).map(|_| rng.random_range(-3.0..5.0)).collect();
        let stack = FrameStack::new(STACK_CHANNELS, 5, 5, data).unwrap();
        let stats = ChannelStats::from_stacks([&stack]).unwrap();
        let norm = normalize_stack(&stack, &stats).unwrap();
        for c in 0..STACK_CHANNELS {
            assert!(math::mean(norm.channel(c)).abs() < 1e-6);
        }

        let mean_stack = FrameStack::new(
            STACK_CHANNELS,
            5,
            5,
            stats.mean.iter().flat_map(|m| core::iter::repeat(*m).take(25)).collect(),
        )
        .unwrap();
        assert!(normalize_stack(&mean_stack, &stats).unwrap().data().iter().all(|v| v.abs() < 1e-12));

        let constant = FrameStack::new(STACK_CHANNELS, 5, 5, alloc::vec![2.0; STACK_CHANNELS * 25]).unwrap();
        let cstats = ChannelStats::from_stacks([&constant]).unwrap();
        assert_eq!(cstats.zero_std_channels().len(), STACK_CHANNELS);
        let centered = normalize_stack(&constant, &cstats).unwrap();
        assert!(centered.data().iter().all(|v| v.abs() < 1e-12));
    }
}
