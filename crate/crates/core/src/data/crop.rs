//! Cropping a hand-centred cube out of a depth frame.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::joints::CropMeta;

/// Side of the network input in pixels.
pub const CROP_SIZE: usize = 96;

/// Projection from camera space (mm) to pixel coordinates. Pixel `u` has its
/// centre at continuous coordinate `u`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Camera {
    /// `u = cx + x / mm_per_px`, `v = cy + y / mm_per_px`.
    Orthographic { mm_per_px: f64, cx: f64, cy: f64 },
    /// `u = cx + fx·x/z`, `v = cy + fy·y/z`.
    Pinhole { fx: f64, fy: f64, cx: f64, cy: f64 },
}

/// A depth raster in millimetres; zero or non-finite marks missing depth.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthFrame {
    pub width: usize,
    pub height: usize,
    pub depth_mm: Vec<f32>,
    pub camera: Camera,
}

impl DepthFrame {
    pub fn new(width: usize, height: usize, depth_mm: Vec<f32>, camera: Camera) -> Result<Self> {
        if depth_mm.len() != width * height {
            return Err(Error::shape(
                "depth frame",
                "pixel count",
                width * height,
                depth_mm.len(),
            ));
        }
        Ok(Self {
            width,
            height,
            depth_mm,
            camera,
        })
    }

    pub fn at(&self, u: usize, v: usize) -> f32 {
        self.depth_mm[v * self.width + u]
    }

    /// Pixel coordinates of a camera-space point.
    pub fn project(&self, p: [f64; 3]) -> Result<(f64, f64)> {
        match self.camera {
            Camera::Orthographic { mm_per_px, cx, cy } => {
                Ok((cx + p[0] / mm_per_px, cy + p[1] / mm_per_px))
            }
            Camera::Pinhole { fx, fy, cx, cy } => {
                if p[2] <= 0.0 {
                    return Err(Error::invalid(format!(
                        "point at z = {} is behind the camera",
                        p[2]
                    )));
                }
                Ok((cx + fx * p[0] / p[2], cy + fy * p[1] / p[2]))
            }
        }
    }
}

/// Continuous pixel-space window covered by a crop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropWindow {
    pub u0: f64,
    pub v0: f64,
    pub width: f64,
    pub height: f64,
}

impl CropWindow {
    pub fn for_meta(frame: &DepthFrame, meta: &CropMeta) -> Result<Self> {
        let c = meta.center.map(|v| v as f64);
        let (uc, vc) = frame.project(c)?;
        let half = meta.half();
        let (hu, hv) = match frame.camera {
            Camera::Orthographic { mm_per_px, .. } => (half / mm_per_px, half / mm_per_px),
            Camera::Pinhole { fx, fy, .. } => (fx * half / c[2], fy * half / c[2]),
        };
        let win = Self {
            u0: uc - hu,
            v0: vc - hv,
            width: 2.0 * hu,
            height: 2.0 * hv,
        };
        let inside_u = win.u0 < frame.width as f64 - 0.5 && win.u0 + win.width > -0.5;
        let inside_v = win.v0 < frame.height as f64 - 0.5 && win.v0 + win.height > -0.5;
        if !(win.width > 0.0 && win.height > 0.0 && inside_u && inside_v) {
            return Err(Error::invalid(format!(
                "empty crop window for centre {:?} in a {}x{} frame",
                meta.center, frame.width, frame.height
            )));
        }
        Ok(win)
    }

    /// Source pixel coordinates of output pixel `(row, col)` in a `size`² crop.
    pub fn source(&self, row: usize, col: usize, size: usize) -> (f64, f64) {
        let su = self.width / size as f64;
        let sv = self.height / size as f64;
        (
            self.u0 + (col as f64 + 0.5) * su,
            self.v0 + (row as f64 + 0.5) * sv,
        )
    }
}

/// Crops the cube around `meta.center`, resamples it to 96×96 by bilinear
/// interpolation and normalizes depth to `clamp((d - cz) / (cube/2), -1, 1)`.
/// Missing depth and pixels outside the frame read as `+1`.
pub fn crop_and_normalize(frame: &DepthFrame, meta: &CropMeta) -> Result<Tensor<f32>> {
    crop_and_normalize_to(frame, meta, CROP_SIZE)
}

pub fn crop_and_normalize_to(
    frame: &DepthFrame,
    meta: &CropMeta,
    size: usize,
) -> Result<Tensor<f32>> {
    let win = CropWindow::for_meta(frame, meta)?;
    let cz = meta.center[2] as f64;
    let half = meta.half();
    let norm = |u: isize, v: isize| -> f64 {
        if u < 0 || v < 0 || u >= frame.width as isize || v >= frame.height as isize {
            return 1.0;
        }
        let d = frame.at(u as usize, v as usize);
        if !(d > 0.0 && d.is_finite()) {
            return 1.0;
        }
        ((d as f64 - cz) / half).clamp(-1.0, 1.0)
    };
    let mut out = Vec::with_capacity(size * size);
    for row in 0..size {
        for col in 0..size {
            let (su, sv) = win.source(row, col, size);
            let (u0, v0) = (su.floor(), sv.floor());
            let (fu, fv) = (su - u0, sv - v0);
            let (u0, v0) = (u0 as isize, v0 as isize);
            let mut acc = (1.0 - fu) * (1.0 - fv) * norm(u0, v0);
            if fu > 0.0 {
                acc += fu * (1.0 - fv) * norm(u0 + 1, v0);
            }
            if fv > 0.0 {
                acc += (1.0 - fu) * fv * norm(u0, v0 + 1);
                if fu > 0.0 {
                    acc += fu * fv * norm(u0 + 1, v0 + 1);
                }
            }
            out.push(acc.clamp(-1.0, 1.0) as f32);
        }
    }
    Tensor::from_vec(vec![1, 1, size, size], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ortho_frame(w: usize, h: usize, f: impl Fn(usize, usize) -> f32) -> DepthFrame {
        let data = (0..w * h).map(|i| f(i % w, i / w)).collect();
        let camera = Camera::Orthographic {
            mm_per_px: 2.5,
            cx: (w as f64 - 1.0) / 2.0,
            cy: (h as f64 - 1.0) / 2.0,
        };
        DepthFrame::new(w, h, data, camera).unwrap()
    }

    #[test]
    fn flat_plane_at_center_is_zero() {
        let frame = ortho_frame(160, 160, |_, _| 600.0);
        let meta = CropMeta::new([0.0, 0.0, 600.0], 300.0, 0).unwrap();
        let crop = crop_and_normalize(&frame, &meta).unwrap();
        assert_eq!(crop.shape(), &[1, 1, 96, 96]);
        assert!(crop.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn near_face_maps_to_minus_one() {
        let frame = ortho_frame(160, 160, |_, _| 450.0);
        let meta = CropMeta::new([0.0, 0.0, 600.0], 300.0, 0).unwrap();
        let crop = crop_and_normalize(&frame, &meta).unwrap();
        assert!(crop.data().iter().all(|&v| v == -1.0));
    }

    #[test]
    fn missing_depth_is_far() {
        let frame = ortho_frame(160, 160, |_, _| 0.0);
        let meta = CropMeta::new([0.0, 0.0, 600.0], 300.0, 0).unwrap();
        let crop = crop_and_normalize(&frame, &meta).unwrap();
        assert!(crop.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn sloped_plane_matches_per_pixel_recomputation() {
        // d(u, v) = 560 + 0.4 u + 0.25 v: bilinear interpolation reproduces
        // a linear field exactly, so each crop pixel is the plane evaluated at
        // its source coordinate.
        let plane = |u: f64, v: f64| 560.0 + 0.4 * u + 0.25 * v;
        let frame = ortho_frame(200, 200, |u, v| plane(u as f64, v as f64) as f32);
        let meta = CropMeta::new([12.0, -7.0, 600.0], 300.0, 0).unwrap();
        let crop = crop_and_normalize(&frame, &meta).unwrap();
        let win = CropWindow::for_meta(&frame, &meta).unwrap();
        for row in 0..96 {
            for col in 0..96 {
                let (su, sv) = win.source(row, col, 96);
                let want = ((plane(su, sv) - 600.0) / 150.0).clamp(-1.0, 1.0);
                let got = crop.data()[row * 96 + col] as f64;
                assert!((got - want).abs() < 1e-5, "({row},{col}): {got} vs {want}");
            }
        }
    }

    #[test]
    fn pinhole_window_scales_with_distance() {
        let data = vec![700.0; 640 * 480];
        let cam = Camera::Pinhole {
            fx: 475.0,
            fy: 475.0,
            cx: 319.5,
            cy: 239.5,
        };
        let frame = DepthFrame::new(640, 480, data, cam).unwrap();
        let near =
            CropWindow::for_meta(&frame, &CropMeta::new([0.0, 0.0, 500.0], 300.0, 0).unwrap())
                .unwrap();
        let far = CropWindow::for_meta(
            &frame,
            &CropMeta::new([0.0, 0.0, 1000.0], 300.0, 0).unwrap(),
        )
        .unwrap();
        assert!((near.width - 2.0 * far.width).abs() < 1e-9);
        let crop = crop_and_normalize(&frame, &CropMeta::new([0.0, 0.0, 700.0], 300.0, 0).unwrap())
            .unwrap();
        assert!(crop.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn window_outside_frame_rejected() {
        let frame = ortho_frame(64, 64, |_, _| 600.0);
        let meta = CropMeta::new([5000.0, 0.0, 600.0], 300.0, 0).unwrap();
        assert!(crop_and_normalize(&frame, &meta).is_err());
        let cam = Camera::Pinhole {
            fx: 475.0,
            fy: 475.0,
            cx: 31.5,
            cy: 31.5,
        };
        let pin = DepthFrame::new(64, 64, vec![600.0; 64 * 64], cam).unwrap();
        assert!(
            crop_and_normalize(&pin, &CropMeta::new([0.0, 0.0, -10.0], 300.0, 0).unwrap()).is_err()
        );
    }
}
