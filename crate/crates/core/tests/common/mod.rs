#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use recist_core::{BinaryMask, Point2, RecistPair};

pub fn rng(seed: u64) -> ChaCha8Rng {
    rand::SeedableRng::seed_from_u64(seed)
}

/// Valid RECIST pair: perpendicular diameters crossing strictly inside both.
pub fn random_recist(rng: &mut ChaCha8Rng, canvas: f64) -> RecistPair {
    let major = rng.gen_range(5.0..canvas * 0.6);
    let minor = (major * rng.gen_range(0.2..1.0)).max(2.5);
    let theta: f64 = rng.gen_range(0.0..std::f64::consts::PI);
    let (u, v) = (Point2::new(theta.cos(), theta.sin()), Point2::new(-theta.sin(), theta.cos()));
    let cross = Point2::new(rng.gen_range(0.3..0.7) * canvas, rng.gen_range(0.3..0.7) * canvas);
    let s = rng.gen_range(0.2..0.8);
    let t = rng.gen_range(0.2..0.8);
    RecistPair::new(
        cross.sub(u.scale(s * major)),
        cross.add(u.scale((1.0 - s) * major)),
        cross.sub(v.scale(t * minor)),
        cross.add(v.scale((1.0 - t) * minor)),
    )
}

pub fn random_mask(rng: &mut ChaCha8Rng, w: usize, h: usize, p: f64) -> BinaryMask {
    BinaryMask::from_fn(w, h, |_, _| rng.gen_bool(p))
}

/// Union of a few random discs: blob-like, possibly disconnected.
pub fn random_blobs(rng: &mut ChaCha8Rng, w: usize, h: usize) -> BinaryMask {
    let n = rng.gen_range(1..=3);
    let discs: Vec<(f64, f64, f64)> = (0..n)
        .map(|_| {
            (
                rng.gen_range(0.0..w as f64),
                rng.gen_range(0.0..h as f64),
                rng.gen_range(1.0..w as f64 / 3.0),
            )
        })
        .collect();
    BinaryMask::from_fn(w, h, |r, c| {
        let (x, y) = (c as f64 + 0.5, r as f64 + 0.5);
        discs.iter().any(|&(cx, cy, rad)| (x - cx).hypot(y - cy) <= rad)
    })
}

/// `|a − b| / max(|a|, |b|)`, with a floor on the denominator so exact
/// zeros do not divide by zero.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}
