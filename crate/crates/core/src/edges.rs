//! Edge images from depth crops.
//!
//! Extractors are looked up by name in an [`EdgeRegistry`]. The built-in
//! `gradient` extractor takes Sobel differences of the normalized depth crop
//! (replicate padding at the border), converts the gradient magnitude `m` to
//! `m / (m + k)` with saturation constant `k`, and zeroes background pixels
//! (normalized depth `>= 1`).

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Default saturation constant for the gradient extractor.
pub const DEFAULT_SATURATION: f32 = 0.5;

/// Name of the built-in extractor.
pub const GRADIENT: &str = "gradient";

/// Edge strength in `[0, 1]`, shaped like the depth crop it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeImage(Tensor<f32>);

impl EdgeImage {
    /// Wraps a tensor, rejecting values outside `[0, 1]`.
    pub fn new(t: Tensor<f32>) -> Result<Self> {
        if let Some(i) = t.data().iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid(format!(
                "edge value {} at index {i} is outside [0, 1]",
                t.data()[i]
            )));
        }
        Ok(Self(t))
    }

    pub fn tensor(&self) -> &Tensor<f32> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<f32> {
        self.0
    }
}

pub trait EdgeExtractor: Send + Sync {
    fn name(&self) -> &str;

    /// `depth` is a `[1,1,H,W]` crop normalized to `[-1, 1]`.
    fn extract(&self, depth: &Tensor<f32>) -> Result<EdgeImage>;
}

/// Sobel gradient magnitude with a soft saturation.
#[derive(Debug, Clone, Copy)]
pub struct GradientEdges {
    pub saturation: f32,
}

impl Default for GradientEdges {
    fn default() -> Self {
        Self {
            saturation: DEFAULT_SATURATION,
        }
    }
}

impl GradientEdges {
    pub fn new(saturation: f32) -> Result<Self> {
        if !(saturation > 0.0 && saturation.is_finite()) {
            return Err(Error::invalid(format!(
                "edge saturation must be positive, got {saturation}"
            )));
        }
        Ok(Self { saturation })
    }
}

impl EdgeExtractor for GradientEdges {
    fn name(&self) -> &str {
        GRADIENT
    }

    fn extract(&self, depth: &Tensor<f32>) -> Result<EdgeImage> {
        let (h, w) = match *depth.shape() {
            [1, 1, h, w] => (h, w),
            _ => {
                return Err(Error::shape(
                    "extract_edges",
                    "depth crop",
                    "[1, 1, H, W]",
                    format!("{:?}", depth.shape()),
                ))
            }
        };
        let d = depth.data();
        let at = |y: usize, x: usize| d[y * w + x];
        let k = self.saturation;
        let mut out = Vec::with_capacity(h * w);
        for y in 0..h {
            let (ym, yp) = (y.saturating_sub(1), (y + 1).min(h - 1));
            for x in 0..w {
                if at(y, x) >= 1.0 {
                    out.push(0.0);
                    continue;
                }
                let (xm, xp) = (x.saturating_sub(1), (x + 1).min(w - 1));
                let gx = (at(ym, xp) + 2.0 * at(y, xp) + at(yp, xp))
                    - (at(ym, xm) + 2.0 * at(y, xm) + at(yp, xm));
                let gy = (at(yp, xm) + 2.0 * at(yp, x) + at(yp, xp))
                    - (at(ym, xm) + 2.0 * at(ym, x) + at(ym, xp));
                let m = (gx * gx + gy * gy).sqrt();
                out.push(m / (m + k));
            }
        }
        EdgeImage::new(Tensor::from_vec(depth.shape().to_vec(), out)?)
    }
}

/// Named edge extractors.
pub struct EdgeRegistry {
    extractors: Vec<Box<dyn EdgeExtractor>>,
}

impl Default for EdgeRegistry {
    fn default() -> Self {
        Self {
            extractors: vec![Box::new(GradientEdges::default())],
        }
    }
}

impl EdgeRegistry {
    pub fn empty() -> Self {
        Self {
            extractors: Vec::new(),
        }
    }

    /// Default registry with the gradient extractor's saturation overridden.
    pub fn with_saturation(saturation: f32) -> Result<Self> {
        Ok(Self {
            extractors: vec![Box::new(GradientEdges::new(saturation)?)],
        })
    }

    /// Adds an extractor, replacing any with the same name.
    pub fn register(&mut self, extractor: Box<dyn EdgeExtractor>) {
        self.extractors.retain(|e| e.name() != extractor.name());
        self.extractors.push(extractor);
    }

    pub fn names(&self) -> Vec<String> {
        self.extractors
            .iter()
            .map(|e| e.name().to_owned())
            .collect()
    }

    pub fn get(&self, method: &str) -> Result<&dyn EdgeExtractor> {
        self.extractors
            .iter()
            .find(|e| e.name() == method)
            .map(|e| e.as_ref())
            .ok_or_else(|| Error::UnknownEdgeMethod {
                name: method.to_owned(),
                registered: self.names(),
            })
    }

    pub fn extract(&self, depth: &Tensor<f32>, method: &str) -> Result<EdgeImage> {
        self.get(method)?.extract(depth)
    }
}

/// Runs `method` from the default registry.
pub fn extract_edges(depth: &Tensor<f32>, method: &str) -> Result<EdgeImage> {
    EdgeRegistry::default().extract(depth, method)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn img(h: usize, w: usize, f: impl Fn(usize, usize) -> f32) -> Tensor<f32> {
        Tensor::from_fn(&[1, 1, h, w], |i| f(i / w, i % w))
    }

    /// Sobel via explicit 3×3 stencils over a replicate-padded copy.
    fn sobel_oracle(depth: &Tensor<f32>, k: f64) -> Vec<f64> {
        let (h, w) = (depth.shape()[2], depth.shape()[3]);
        let mut padded = vec![vec![0.0f64; w + 2]; h + 2];
        for (py, row) in padded.iter_mut().enumerate() {
            for (px, v) in row.iter_mut().enumerate() {
                let y = (py as isize - 1).clamp(0, h as isize - 1) as usize;
                let x = (px as isize - 1).clamp(0, w as isize - 1) as usize;
                *v = depth.data()[y * w + x] as f64;
            }
        }
        let kx = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
        let ky = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];
        let mut out = Vec::new();
        for y in 0..h {
            for x in 0..w {
                if depth.data()[y * w + x] >= 1.0 {
                    out.push(0.0);
                    continue;
                }
                let (mut gx, mut gy) = (0.0, 0.0);
                for i in 0..3 {
                    for j in 0..3 {
                        gx += kx[i][j] * padded[y + i][x + j];
                        gy += ky[i][j] * padded[y + i][x + j];
                    }
                }
                let m = (gx * gx + gy * gy).sqrt();
                out.push(m / (m + k));
            }
        }
        out
    }

    #[test]
    fn constant_depth_has_no_edges() {
        let e = extract_edges(&img(96, 96, |_, _| 0.3), GRADIENT).unwrap();
        assert_eq!(e.tensor().max_abs(), 0.0);
    }

    #[test]
    fn vertical_step_peaks_at_the_step() {
        let h = 0.4;
        let depth = img(96, 96, |_, x| if x < 48 { -0.2 } else { -0.2 + h });
        let e = extract_edges(&depth, GRADIENT).unwrap();
        let row = &e.tensor().data()[50 * 96..51 * 96];
        let max = row.iter().cloned().fold(0.0, f32::max);
        assert!(max > 0.0);
        assert_eq!(row[47], max);
        assert_eq!(row[48], max);
        assert!(row[..46].iter().chain(&row[50..]).all(|&v| v == 0.0));
    }

    #[test]
    fn matches_sobel_oracle() {
        let mut state = 12345u64;
        let vals: Vec<f32> = (0..96 * 96)
            .map(|_| {
                state = state
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                let u = (state >> 40) as f32 / (1u64 << 24) as f32;
                // a few background pixels too
                if u > 0.95 {
                    1.0
                } else {
                    u * 1.8 - 0.9
                }
            })
            .collect();
        let depth = Tensor::from_vec(vec![1, 1, 96, 96], vals).unwrap();
        let e = extract_edges(&depth, GRADIENT).unwrap();
        let want = sobel_oracle(&depth, DEFAULT_SATURATION as f64);
        for (a, b) in e.tensor().data().iter().zip(&want) {
            assert!((*a as f64 - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn background_is_zero() {
        let depth = img(16, 16, |y, x| {
            if (4..12).contains(&y) && (4..12).contains(&x) {
                0.0
            } else {
                1.0
            }
        });
        let e = extract_edges(&depth, GRADIENT).unwrap();
        for (d, v) in depth.data().iter().zip(e.tensor().data()) {
            if *d >= 1.0 {
                assert_eq!(*v, 0.0);
            }
        }
        // silhouette is marked on the hand side
        assert!(e.tensor().data()[4 * 16 + 4] > 0.5);
    }

    #[test]
    fn unknown_method_lists_registered() {
        let err = extract_edges(&img(4, 4, |_, _| 0.0), "forest").unwrap_err();
        match err {
            Error::UnknownEdgeMethod { name, registered } => {
                assert_eq!(name, "forest");
                assert_eq!(registered, vec![GRADIENT.to_owned()]);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn custom_extractor_registration() {
        struct Zero;
        impl EdgeExtractor for Zero {
            fn name(&self) -> &str {
                "zero"
            }
            fn extract(&self, depth: &Tensor<f32>) -> Result<EdgeImage> {
                EdgeImage::new(Tensor::zeros(depth.shape()))
            }
        }
        let mut reg = EdgeRegistry::default();
        reg.register(Box::new(Zero));
        assert_eq!(reg.names(), vec!["gradient", "zero"]);
        assert_eq!(
            reg.extract(&img(3, 3, |y, _| y as f32 * 0.1), "zero")
                .unwrap()
                .tensor()
                .max_abs(),
            0.0
        );
    }

    #[test]
    fn saturation_must_be_positive() {
        assert!(GradientEdges::new(0.0).is_err());
        assert!(GradientEdges::new(-1.0).is_err());
        assert!(EdgeRegistry::with_saturation(0.25).is_ok());
    }

    proptest! {
        #[test]
        fn output_in_unit_range(vals in proptest::collection::vec(-1.0f32..=1.0, 64)) {
            let depth = Tensor::from_vec(vec![1, 1, 8, 8], vals).unwrap();
            let e = extract_edges(&depth, GRADIENT).unwrap();
            prop_assert!(e.tensor().data().iter().all(|v| (0.0..=1.0).contains(v)));
        }

        #[test]
        fn translation_equivariant(vals in proptest::collection::vec(-0.9f32..0.9, 144)) {
            let depth = Tensor::from_vec(vec![1, 1, 12, 12], vals.clone()).unwrap();
            // shift right by one column
            let shifted = img(12, 12, |y, x| vals[y * 12 + x.saturating_sub(1)]);
            let e = extract_edges(&depth, GRADIENT).unwrap();
            let es = extract_edges(&shifted, GRADIENT).unwrap();
            for y in 1..11 {
                for x in 2..11 {
                    prop_assert_eq!(es.tensor().data()[y * 12 + x], e.tensor().data()[y * 12 + x - 1]);
                }
            }
        }

        #[test]
        fn saturation_is_monotone(step_a in 0.0f32..0.9, extra in 0.0f32..0.9) {
            let step_b = (step_a + extra).min(1.8);
            let mk = |s: f32| img(6, 6, move |_, x| if x < 3 { -0.9 } else { -0.9 + s });
            let ea = extract_edges(&mk(step_a), GRADIENT).unwrap();
            let eb = extract_edges(&mk(step_b), GRADIENT).unwrap();
            prop_assert!(eb.tensor().data()[2 * 6 + 2] >= ea.tensor().data()[2 * 6 + 2]);
        }
    }
}
