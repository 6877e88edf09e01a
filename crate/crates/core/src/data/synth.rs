//! Synthetic labelled depth hands.
//!
//! Each frame holds a palm disk and five capsule fingers rendered under an
//! orthographic camera (depth is the camera-space z in millimetres). The
//! fingertip label is the visible surface point above the far end of the
//! finger axis, the palm label is the disk centre. Generation is a pure
//! function of `(seed, n, config)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::edges::EdgeExtractor;
use crate::error::{Error, Result};

use super::crop::{crop_and_normalize, Camera, DepthFrame};
use super::ftds::Sample;
use super::joints::{CropMeta, JointSet};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    /// Square frame side in pixels.
    pub frame_size: usize,
    pub mm_per_px: f64,
    pub cube_size: f64,
    pub palm_radius: f64,
    pub finger_radius: f64,
    /// Nominal finger length (mm), scaled per finger by `finger_scale`.
    pub finger_length: f64,
    /// Thumb, index, middle, ring, pinky.
    pub finger_scale: [f64; 5],
    /// Finger directions relative to the hand axis (degrees).
    pub fan_deg: [f64; 5],
    /// Per-finger angular jitter, uniform in `±spread_deg`.
    pub spread_deg: f64,
    /// Whole-hand in-plane rotation, uniform in `±rotation_deg`.
    pub rotation_deg: f64,
    /// Per-finger out-of-plane pitch, uniform in `±pitch_deg`.
    pub pitch_deg: f64,
    /// Relative finger length jitter, uniform in `±length_jitter`.
    pub length_jitter: f64,
    /// Palm depth range (mm).
    pub depth_min: f64,
    pub depth_max: f64,
    /// Palm centre offset from the optical axis, uniform in `±offset_mm`.
    pub offset_mm: f64,
    /// Crop centre noise around the palm, uniform in `±center_jitter_mm`.
    pub center_jitter_mm: f64,
    /// Maximum palm plane slope (dz/dx and dz/dy).
    pub palm_tilt: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            frame_size: 160,
            mm_per_px: 2.5,
            cube_size: 300.0,
            palm_radius: 40.0,
            finger_radius: 8.0,
            finger_length: 75.0,
            finger_scale: [0.8, 1.0, 1.1, 1.0, 0.8],
            fan_deg: [-60.0, -30.0, 0.0, 30.0, 60.0],
            spread_deg: 10.0,
            rotation_deg: 30.0,
            pitch_deg: 25.0,
            length_jitter: 0.15,
            depth_min: 500.0,
            depth_max: 700.0,
            offset_mm: 15.0,
            center_jitter_mm: 8.0,
            palm_tilt: 0.3,
        }
    }
}

impl SynthConfig {
    /// No random variation at all: a mirror-symmetric, upright hand.
    pub fn symmetric() -> Self {
        Self {
            spread_deg: 0.0,
            rotation_deg: 0.0,
            pitch_deg: 0.0,
            length_jitter: 0.0,
            offset_mm: 0.0,
            center_jitter_mm: 0.0,
            palm_tilt: 0.0,
            depth_min: 600.0,
            depth_max: 600.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("frame_size", self.frame_size as f64),
            ("mm_per_px", self.mm_per_px),
            ("cube_size", self.cube_size),
            ("palm_radius", self.palm_radius),
            ("finger_radius", self.finger_radius),
            ("finger_length", self.finger_length),
            ("depth_min", self.depth_min),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!(
                    "synth config: {name} must be positive, got {v}"
                )));
            }
        }
        if self.finger_scale.iter().any(|&s| s.is_nan() || s <= 0.0) {
            return Err(Error::invalid("synth config: zero-length finger"));
        }
        if self.length_jitter >= 1.0 || self.length_jitter < 0.0 {
            return Err(Error::invalid(
                "synth config: length_jitter must be in [0, 1)",
            ));
        }
        if self.depth_max < self.depth_min {
            return Err(Error::invalid("synth config: depth_max < depth_min"));
        }
        for (name, v) in [
            ("spread_deg", self.spread_deg),
            ("rotation_deg", self.rotation_deg),
            ("pitch_deg", self.pitch_deg),
            ("offset_mm", self.offset_mm),
            ("center_jitter_mm", self.center_jitter_mm),
            ("palm_tilt", self.palm_tilt),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!(
                    "synth config: {name} must be >= 0, got {v}"
                )));
            }
        }
        if self.pitch_deg >= 90.0 {
            return Err(Error::invalid("synth config: pitch_deg must be < 90"));
        }
        Ok(())
    }

    fn camera(&self) -> Camera {
        let c = (self.frame_size as f64 - 1.0) / 2.0;
        Camera::Orthographic {
            mm_per_px: self.mm_per_px,
            cx: c,
            cy: c,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Capsule {
    a: [f64; 3],
    b: [f64; 3],
    r: f64,
}

impl Capsule {
    /// Nearest surface depth along the viewing ray through `(x, y)`.
    fn front_z(&self, x: f64, y: f64) -> Option<f64> {
        let len = dist(self.a, self.b);
        let steps = (len / 0.25).ceil().max(1.0) as usize;
        let r2 = self.r * self.r;
        let mut best: Option<f64> = None;
        for i in 0..=steps {
            let t = i as f64 / steps as f64;
            let c = lerp(self.a, self.b, t);
            let rho2 = (x - c[0]).powi(2) + (y - c[1]).powi(2);
            if rho2 <= r2 {
                let z = c[2] - (r2 - rho2).sqrt();
                best = Some(best.map_or(z, |b: f64| b.min(z)));
            }
        }
        best
    }

    fn bbox(&self) -> ([f64; 2], [f64; 2]) {
        (
            [
                self.a[0].min(self.b[0]) - self.r,
                self.a[1].min(self.b[1]) - self.r,
            ],
            [
                self.a[0].max(self.b[0]) + self.r,
                self.a[1].max(self.b[1]) + self.r,
            ],
        )
    }
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn lerp(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [
        a[0] + t * (b[0] - a[0]),
        a[1] + t * (b[1] - a[1]),
        a[2] + t * (b[2] - a[2]),
    ]
}

/// One rendered hand before cropping.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthHand {
    pub frame: DepthFrame,
    /// Five fingertips then the palm, in millimetres.
    pub joints: JointSet,
    pub meta: CropMeta,
}

fn sym<R: Rng>(rng: &mut R, range: f64) -> f64 {
    if range > 0.0 {
        rng.random_range(-range..=range)
    } else {
        0.0
    }
}

fn render_one<R: Rng>(cfg: &SynthConfig, rng: &mut R, frame_id: u32) -> Result<SynthHand> {
    // draw every random quantity in a fixed order
    let px = sym(rng, cfg.offset_mm);
    let py = sym(rng, cfg.offset_mm);
    let pz = if cfg.depth_max > cfg.depth_min {
        rng.random_range(cfg.depth_min..cfg.depth_max)
    } else {
        cfg.depth_min
    };
    let tilt = [sym(rng, cfg.palm_tilt), sym(rng, cfg.palm_tilt)];
    let theta = sym(rng, cfg.rotation_deg).to_radians();
    let mut fingers = Vec::with_capacity(5);
    for i in 0..5 {
        let jitter = sym(rng, cfg.spread_deg).to_radians();
        let pitch = sym(rng, cfg.pitch_deg).to_radians();
        let scale = 1.0 + sym(rng, cfg.length_jitter);
        fingers.push((i, jitter, pitch, scale));
    }
    let jitter_c = [
        sym(rng, cfg.center_jitter_mm),
        sym(rng, cfg.center_jitter_mm),
        sym(rng, cfg.center_jitter_mm),
    ];

    let palm = [px, py, pz];
    let palm_z = |x: f64, y: f64| pz + tilt[0] * (x - px) + tilt[1] * (y - py);
    let base_r = 0.85 * cfg.palm_radius;
    let mut capsules = Vec::with_capacity(5);
    let mut tips = Vec::with_capacity(6);
    for (i, jitter, pitch, scale) in fingers {
        let base_angle = cfg.fan_deg[i].to_radians() + theta;
        let (sb, cb) = base_angle.sin_cos();
        let bx = px + base_r * sb;
        let by = py - base_r * cb;
        let a = [bx, by, palm_z(bx, by)];
        let dir_angle = base_angle + jitter;
        let (sd, cd) = dir_angle.sin_cos();
        let (sp, cp) = pitch.sin_cos();
        let dir = [cp * sd, -cp * cd, sp];
        let len = cfg.finger_length * cfg.finger_scale[i] * scale;
        let b = [
            a[0] + len * dir[0],
            a[1] + len * dir[1],
            a[2] + len * dir[2],
        ];
        capsules.push(Capsule {
            a,
            b,
            r: cfg.finger_radius,
        });
        tips.push([b[0] as f32, b[1] as f32, (b[2] - cfg.finger_radius) as f32]);
    }
    tips.push([px as f32, py as f32, pz as f32]);

    let n = cfg.frame_size;
    let camera = cfg.camera();
    let c = (n as f64 - 1.0) / 2.0;
    let to_x = |u: usize| (u as f64 - c) * cfg.mm_per_px;
    let mut depth = vec![f64::INFINITY; n * n];

    let r2 = cfg.palm_radius * cfg.palm_radius;
    let pix = |x: f64| x / cfg.mm_per_px + c;
    let clamp_px = |v: f64| v.clamp(0.0, (n - 1) as f64);
    {
        let (u_lo, u_hi) = (
            clamp_px(pix(px - cfg.palm_radius).floor()),
            clamp_px(pix(px + cfg.palm_radius).ceil()),
        );
        let (v_lo, v_hi) = (
            clamp_px(pix(py - cfg.palm_radius).floor()),
            clamp_px(pix(py + cfg.palm_radius).ceil()),
        );
        for v in v_lo as usize..=v_hi as usize {
            for u in u_lo as usize..=u_hi as usize {
                let (x, y) = (to_x(u), to_x(v));
                if (x - px).powi(2) + (y - py).powi(2) <= r2 {
                    let z = palm_z(x, y);
                    let d = &mut depth[v * n + u];
                    *d = d.min(z);
                }
            }
        }
    }
    for cap in &capsules {
        let (lo, hi) = cap.bbox();
        let (u_lo, u_hi) = (clamp_px(pix(lo[0]).floor()), clamp_px(pix(hi[0]).ceil()));
        let (v_lo, v_hi) = (clamp_px(pix(lo[1]).floor()), clamp_px(pix(hi[1]).ceil()));
        for v in v_lo as usize..=v_hi as usize {
            for u in u_lo as usize..=u_hi as usize {
                if let Some(z) = cap.front_z(to_x(u), to_x(v)) {
                    let d = &mut depth[v * n + u];
                    *d = d.min(z);
                }
            }
        }
    }
    let depth_mm = depth
        .into_iter()
        .map(|d| if d.is_finite() { d as f32 } else { 0.0 })
        .collect();

    let center = [
        (palm[0] + jitter_c[0]) as f32,
        (palm[1] + jitter_c[1]) as f32,
        (palm[2] + jitter_c[2]) as f32,
    ];
    Ok(SynthHand {
        frame: DepthFrame::new(n, n, depth_mm, camera)?,
        joints: JointSet::new(tips)?,
        meta: CropMeta::new(center, cfg.cube_size as f32, frame_id)?,
    })
}

/// Renders `n` raw hands (frames plus labels) deterministically from `seed`.
pub fn synth_hands(seed: u64, n: usize, config: &SynthConfig) -> Result<Vec<SynthHand>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| render_one(config, &mut rng, i as u32))
        .collect()
}

/// Streaming generator of cropped, labelled samples. Edge images are computed
/// with `edges` when given.
pub struct SynthGenerator<'a> {
    config: SynthConfig,
    rng: ChaCha8Rng,
    remaining: usize,
    next_id: u32,
    edges: Option<&'a dyn EdgeExtractor>,
}

impl<'a> SynthGenerator<'a> {
    pub fn new(
        seed: u64,
        n: usize,
        config: &SynthConfig,
        edges: Option<&'a dyn EdgeExtractor>,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("synth: n must be >= 1"));
        }
        config.validate()?;
        Ok(Self {
            config: config.clone(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            remaining: n,
            next_id: 0,
            edges,
        })
    }
}

impl Iterator for SynthGenerator<'_> {
    type Item = Result<Sample>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let id = self.next_id;
        self.next_id += 1;
        let hand = match render_one(&self.config, &mut self.rng, id) {
            Ok(h) => h,
            Err(e) => return Some(Err(e)),
        };
        Some(sample_from_hand(&hand, self.edges))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        (self.remaining, Some(self.remaining))
    }
}

pub fn sample_from_hand(hand: &SynthHand, edges: Option<&dyn EdgeExtractor>) -> Result<Sample> {
    let depth = crop_and_normalize(&hand.frame, &hand.meta)?;
    let edge = edges.map(|e| e.extract(&depth)).transpose()?;
    Ok(Sample {
        depth,
        edge,
        joints: hand.joints.clone(),
        meta: hand.meta,
    })
}

/// Collects `n` samples.
pub fn synth_generate(
    seed: u64,
    n: usize,
    config: &SynthConfig,
    edges: Option<&dyn EdgeExtractor>,
) -> Result<Vec<Sample>> {
    SynthGenerator::new(seed, n, config, edges)?.collect()
}
