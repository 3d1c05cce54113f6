//! Synthetic slices with convex lesions, ground-truth masks and RECIST
//! annotations measured from those masks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mix_seed;
use crate::geometry::{self, Ellipse, Point2, RecistPair};
use crate::grid::{BinaryMask, SliceImage};
use crate::raster;

const MAX_ATTEMPTS: usize = 100;
/// Minimum clearance between lesions, in pixels.
const LESION_GAP: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Convexity {
    Ellipse,
    ConvexPolygon,
    /// Each lesion picks one of the two with equal probability.
    Mixed,
}

impl std::str::FromStr for Convexity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ellipse" => Ok(Self::Ellipse),
            "convex-polygon" | "polygon" => Ok(Self::ConvexPolygon),
            "mixed" => Ok(Self::Mixed),
            _ => Err(Error::InvalidConfig(format!("unknown convexity `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    /// Square canvas side in pixels.
    pub image_size: usize,
    /// Inclusive range of lesions per slice.
    pub lesions_per_slice: (usize, usize),
    /// Range of the generating ellipse's semi-major axis, pixels.
    pub radius_range: (f64, f64),
    /// Range of semi-minor / semi-major.
    pub aspect_range: (f64, f64),
    pub convexity: Convexity,
    /// Inclusive range of random outline points added to a polygon's four
    /// axis vertices.
    pub polygon_points: (usize, usize),
    /// Intensity added inside lesions.
    pub intensity_contrast: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            image_size: 64,
            lesions_per_slice: (1, 2),
            radius_range: (5.0, 14.0),
            aspect_range: (0.45, 1.0),
            convexity: Convexity::Mixed,
            polygon_points: (16, 30),
            intensity_contrast: 0.25,
            noise_sigma: 0.05,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        let (rmin, rmax) = self.radius_range;
        if self.image_size < 8 {
            return bad("image_size must be at least 8");
        }
        if !(rmin >= 2.0 && rmin <= rmax) {
            return bad("radius_range must satisfy 2 <= min <= max");
        }
        if 2.0 * rmax + 4.0 > self.image_size as f64 {
            return bad("radius_range does not fit inside the image");
        }
        let (amin, amax) = self.aspect_range;
        if !(amin > 0.0 && amin <= amax && amax <= 1.0) {
            return bad("aspect_range must satisfy 0 < min <= max <= 1");
        }
        let (lmin, lmax) = self.lesions_per_slice;
        if lmin == 0 || lmin > lmax {
            return bad("lesions_per_slice must satisfy 1 <= min <= max");
        }
        let (pmin, pmax) = self.polygon_points;
        if pmin > pmax {
            return bad("polygon_points must satisfy min <= max");
        }
        if !(self.intensity_contrast > 0.0) {
            return bad("intensity_contrast must be positive");
        }
        if !(self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be non-negative");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LesionShape {
    Ellipse(Ellipse),
    /// Convex polygon, vertices in hull order.
    Polygon { vertices: Vec<Point2> },
}

impl LesionShape {
    pub fn rasterize(&self, width: usize, height: usize) -> BinaryMask {
        match self {
            LesionShape::Ellipse(e) => raster::fill_ellipse(e, width, height),
            LesionShape::Polygon { vertices } => raster::fill_polygon(vertices, width, height),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SynthLesion {
    pub shape: LesionShape,
    pub mask: BinaryMask,
    pub recist: RecistPair,
}

#[derive(Clone, Debug)]
pub struct SynthSlice {
    pub id: String,
    pub image: SliceImage,
    pub gt: BinaryMask,
    pub lesions: Vec<SynthLesion>,
}

impl SynthSlice {
    pub fn recists(&self) -> Vec<RecistPair> {
        self.lesions.iter().map(|l| l.recist).collect()
    }
}

pub fn generate(spec: &SynthSpec, n_slices: usize) -> Result<Vec<SynthSlice>> {
    spec.validate()?;
    (0..n_slices)
        .map(|i| generate_slice(spec, i, &mut ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, i as u64))))
        .collect()
}

fn generate_slice(spec: &SynthSpec, index: usize, rng: &mut ChaCha8Rng) -> Result<SynthSlice> {
    let size = spec.image_size;
    let n_lesions = rng.gen_range(spec.lesions_per_slice.0..=spec.lesions_per_slice.1);
    // (center, outer radius) of placed lesions
    let mut placed: Vec<(Point2, f64)> = Vec::new();
    let mut lesions = Vec::with_capacity(n_lesions);
    for _ in 0..n_lesions {
        let mut attempts = 0;
        let lesion = loop {
            if attempts == MAX_ATTEMPTS {
                return Err(Error::InfeasiblePlacement { attempts });
            }
            attempts += 1;
            let a = rng.gen_range(spec.radius_range.0..=spec.radius_range.1);
            let b = a * rng.gen_range(spec.aspect_range.0..=spec.aspect_range.1);
            let lo = a + 2.0;
            let hi = size as f64 - a - 2.0;
            let center = Point2::new(rng.gen_range(lo..=hi), rng.gen_range(lo..=hi));
            if placed
                .iter()
                .any(|&(c, r)| c.dist(center) < r + a + LESION_GAP)
            {
                continue;
            }
            let angle = rng.gen_range(0.0..std::f64::consts::PI);
            let polygon = match spec.convexity {
                Convexity::Ellipse => false,
                Convexity::ConvexPolygon => true,
                Convexity::Mixed => rng.gen_bool(0.5),
            };
            let ellipse = Ellipse {
                center,
                semi_axes: (a, b),
                angle,
            };
            let shape = if polygon {
                random_polygon(&ellipse, spec.polygon_points, rng)
            } else {
                LesionShape::Ellipse(ellipse)
            };
            let mask = shape.rasterize(size, size);
            let extracted = geometry::extract_recist_from_mask(&mask)
                .and_then(|r| geometry::quad_from_recist(&r).map(|_| r));
            match extracted {
                Ok(recist) => {
                    placed.push((center, a));
                    break SynthLesion {
                        shape,
                        mask,
                        recist,
                    };
                }
                Err(
                    Error::TooSmall { .. } | Error::EmptyMask | Error::DegenerateAnnotation(_),
                ) => continue,
                Err(e) => return Err(e),
            }
        };
        lesions.push(lesion);
    }

    let mut gt = BinaryMask::filled(size, size, false);
    for l in &lesions {
        gt = gt.or(&l.mask)?;
    }
    let image = render_image(spec, &gt, rng);
    Ok(SynthSlice {
        id: format!("synth_{index:05}"),
        image,
        gt,
        lesions,
    })
}

/// Convex hull of the four axis vertices of `e` plus a random number of
/// random points on its outline. Keeping the axis vertices makes the ellipse axes the
/// polygon's RECIST diameters, so the polygon lies between Q and C.
fn random_polygon(e: &Ellipse, extra: (usize, usize), rng: &mut ChaCha8Rng) -> LesionShape {
    use std::f64::consts::{FRAC_PI_2, PI, TAU};
    let k = rng.gen_range(extra.0..=extra.1);
    let (sin, cos) = e.angle.sin_cos();
    let on_outline = |t: f64| {
        let (u, v) = (e.semi_axes.0 * t.cos(), e.semi_axes.1 * t.sin());
        Point2::new(e.center.x + u * cos - v * sin, e.center.y + u * sin + v * cos)
    };
    let points: Vec<Point2> = [0.0, FRAC_PI_2, PI, 3.0 * FRAC_PI_2]
        .into_iter()
        .chain((0..k).map(|_| rng.gen_range(0.0..TAU)))
        .map(on_outline)
        .collect();
    LesionShape::Polygon {
        vertices: geometry::convex_hull(&points),
    }
}

/// Low-frequency background (tilted plane plus a slow sinusoid), lesion
/// contrast, Gaussian noise, clamped to [0,1].
fn render_image(spec: &SynthSpec, gt: &BinaryMask, rng: &mut ChaCha8Rng) -> SliceImage {
    let size = spec.image_size as f64;
    let level = rng.gen_range(0.3..0.45);
    let (gx, gy) = (rng.gen_range(-0.15..0.15), rng.gen_range(-0.15..0.15));
    let wave_amp = rng.gen_range(0.0..0.08);
    let wave_dir = rng.gen_range(0.0..std::f64::consts::TAU);
    let wave_phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let wave_freq = rng.gen_range(0.5..1.5) * std::f64::consts::TAU / size;
    let noise = Normal::new(0.0, spec.noise_sigma).expect("sigma validated");
    let (wd_s, wd_c) = wave_dir.sin_cos();
    SliceImage::from_fn(spec.image_size, spec.image_size, |row, col| {
        let (x, y) = (col as f64 / size - 0.5, row as f64 / size - 0.5);
        let proj = (col as f64 * wd_c + row as f64 * wd_s) * wave_freq + wave_phase;
        let mut v = level + gx * x + gy * y + wave_amp * proj.sin();
        if *gt.get(row, col) {
            v += spec.intensity_contrast;
        }
        (v + noise.sample(rng)).clamp(0.0, 1.0)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let spec = SynthSpec { seed: 11, ..Default::default() };
        let a = generate(&spec, 10).unwrap();
        let b = generate(&spec, 10).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.image, y.image);
            assert_eq!(x.gt, y.gt);
            assert_eq!(x.recists(), y.recists());
        }
        let c = generate(&SynthSpec { seed: 12, ..Default::default() }, 1).unwrap();
        assert_ne!(a[0].image, c[0].image);
    }

    #[test]
    fn ellipse_lesions_match_fill_ellipse() {
        let spec = SynthSpec { convexity: Convexity::Ellipse, seed: 3, ..Default::default() };
        for slice in generate(&spec, 10).unwrap() {
            for l in &slice.lesions {
                let LesionShape::Ellipse(e) = &l.shape else { panic!("expected ellipse") };
                assert_eq!(l.mask, raster::fill_ellipse(e, 64, 64));
            }
        }
    }

    #[test]
    fn lesion_count_in_range() {
        let spec = SynthSpec { lesions_per_slice: (2, 3), seed: 5, ..Default::default() };
        for slice in generate(&spec, 8).unwrap() {
            assert!((2..=3).contains(&slice.lesions.len()));
            assert_eq!(raster::connected_components(&slice.gt).len(), slice.lesions.len());
        }
    }

    #[test]
    fn infeasible_placement_reported() {
        let spec = SynthSpec {
            image_size: 24,
            radius_range: (9.0, 10.0),
            lesions_per_slice: (3, 3),
            ..Default::default()
        };
        assert!(matches!(generate(&spec, 1), Err(Error::InfeasiblePlacement { .. })));
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(SynthSpec { intensity_contrast: 0.0, ..Default::default() }.validate().is_err());
        assert!(SynthSpec { radius_range: (5.0, 40.0), ..Default::default() }.validate().is_err());
    }
}
