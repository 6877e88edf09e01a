//! Joint sets and crop-normalized regression targets.

use crate::error::{Error, Result};

/// Joint order of the regression vector.
pub const JOINT_NAMES: [&str; 6] = ["thumb", "index", "middle", "ring", "pinky", "palm"];
pub const NUM_FINGERTIPS: usize = 5;
pub const PALM: usize = 5;

/// Default crop cube side in millimetres.
pub const DEFAULT_CUBE_MM: f32 = 300.0;

/// 3D joint positions in millimetres: five fingertips, optionally followed by
/// the palm.
#[derive(Debug, Clone, PartialEq)]
pub struct JointSet {
    pub points: Vec<[f32; 3]>,
}

impl JointSet {
    pub fn new(points: Vec<[f32; 3]>) -> Result<Self> {
        if points.len() != NUM_FINGERTIPS && points.len() != NUM_FINGERTIPS + 1 {
            return Err(Error::invalid(format!(
                "a joint set holds 5 or 6 points, got {}",
                points.len()
            )));
        }
        Ok(Self { points })
    }

    pub fn has_palm(&self) -> bool {
        self.points.len() == NUM_FINGERTIPS + 1
    }

    pub fn fingertips(&self) -> &[[f32; 3]] {
        &self.points[..NUM_FINGERTIPS]
    }

    /// Drops the palm if present.
    pub fn without_palm(&self) -> JointSet {
        JointSet {
            points: self.points[..NUM_FINGERTIPS].to_vec(),
        }
    }
}

/// Crop placement: the hand-centred cube the network sees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropMeta {
    /// Cube centre (mm).
    pub center: [f32; 3],
    /// Cube side (mm).
    pub cube_size: f32,
    /// Index of the source frame.
    pub frame_id: u32,
}

impl CropMeta {
    pub fn new(center: [f32; 3], cube_size: f32, frame_id: u32) -> Result<Self> {
        if !(cube_size > 0.0 && cube_size.is_finite()) {
            return Err(Error::invalid(format!(
                "cube_size must be positive, got {cube_size}"
            )));
        }
        if center.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("crop centre must be finite"));
        }
        Ok(Self {
            center,
            cube_size,
            frame_id,
        })
    }

    pub fn half(&self) -> f64 {
        self.cube_size as f64 / 2.0
    }
}

/// Crop-normalized target vector.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedJoints {
    pub values: Vec<f32>,
    /// Set when a joint fell outside the cube and was clamped to `[-1, 1]`.
    pub clamped: bool,
}

/// Per axis `(p - center) / (cube_size / 2)`, flattened in joint order.
pub fn normalize_joints(joints: &JointSet, meta: &CropMeta) -> Result<NormalizedJoints> {
    let half = meta.half();
    let mut clamped = false;
    let mut values = Vec::with_capacity(joints.points.len() * 3);
    for (j, p) in joints.points.iter().enumerate() {
        for (axis, &coord) in p.iter().enumerate() {
            if !coord.is_finite() {
                return Err(Error::invalid(format!(
                    "non-finite coordinate for joint {}",
                    JOINT_NAMES[j]
                )));
            }
            let v = (coord as f64 - meta.center[axis] as f64) / half;
            if v.abs() > 1.0 {
                clamped = true;
            }
            values.push(v.clamp(-1.0, 1.0) as f32);
        }
    }
    Ok(NormalizedJoints { values, clamped })
}

/// Inverse of [`normalize_joints`]; accepts 15 or 18 values.
pub fn denormalize_joints(values: &[f32], meta: &CropMeta) -> Result<JointSet> {
    if values.len() != 15 && values.len() != 18 {
        return Err(Error::invalid(format!(
            "expected 15 or 18 normalized values, got {}",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite normalized joint value"));
    }
    let half = meta.half();
    let points = values
        .chunks_exact(3)
        .map(|c| {
            let mut p = [0f32; 3];
            for axis in 0..3 {
                p[axis] = (c[axis] as f64 * half + meta.center[axis] as f64) as f32;
            }
            p
        })
        .collect();
    JointSet::new(points)
}
