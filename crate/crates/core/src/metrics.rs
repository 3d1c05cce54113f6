//! Overlap and boundary metrics, plus aggregated evaluation reports.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::BinaryMask;
use crate::raster::boundary_pixels;

/// `(dice, jaccard)`; two empty masks agree perfectly.
pub fn dice_jaccard(pred: &BinaryMask, gt: &BinaryMask) -> Result<(f64, f64)> {
    let inter = pred.intersection_count(gt)?;
    let (np, ng) = (pred.count(), gt.count());
    if np + ng == 0 {
        return Ok((1.0, 1.0));
    }
    let union = np + ng - inter;
    Ok((
        2.0 * inter as f64 / (np + ng) as f64,
        inter as f64 / union as f64,
    ))
}

/// `|X ∩ G| / |G|`, or 1 when `gt` is empty.
pub fn recall(x: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    let inter = x.intersection_count(gt)?;
    let n = gt.count();
    Ok(if n == 0 { 1.0 } else { inter as f64 / n as f64 })
}

/// `|X ∩ G| / |X|`, or 1 when `x` is empty.
pub fn precision(x: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    let inter = x.intersection_count(gt)?;
    let n = x.count();
    Ok(if n == 0 { 1.0 } else { inter as f64 / n as f64 })
}

/// Nearest-rank index (1-based) of the 95th percentile of `n` values.
pub fn nearest_rank_95(n: usize) -> usize {
    (95 * n).div_ceil(100).max(1)
}

/// 95th percentile (nearest rank) of the pooled boundary-to-boundary
/// nearest-neighbour distances in both directions.
pub fn hd95(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    pred.check_same_dims(gt)?;
    let bp = boundary_pixels(pred);
    let bg = boundary_pixels(gt);
    if bp.is_empty() || bg.is_empty() {
        return Err(Error::UndefinedMetric("HD95 needs two non-empty masks"));
    }
    let (w, h) = pred.dims();
    let to_gt = squared_edt(&bg, w, h);
    let to_pred = squared_edt(&bp, w, h);
    let mut d2: Vec<f64> = bp
        .iter()
        .map(|&(r, c)| to_gt[r * w + c])
        .chain(bg.iter().map(|&(r, c)| to_pred[r * w + c]))
        .collect();
    d2.sort_by(f64::total_cmp);
    Ok(d2[nearest_rank_95(d2.len()) - 1].sqrt())
}

/// Exact squared Euclidean distance to the nearest feature pixel
/// (Felzenszwalb–Huttenlocher lower envelopes, columns then rows).
fn squared_edt(features: &[(usize, usize)], w: usize, h: usize) -> Vec<f64> {
    const INF: f64 = 1e20;
    let mut grid = vec![INF; w * h];
    for &(r, c) in features {
        grid[r * w + c] = 0.0;
    }
    let n = w.max(h);
    let mut f = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];
    for c in 0..w {
        for r in 0..h {
            f[r] = grid[r * w + c];
        }
        envelope_1d(&f[..h], &mut d[..h], &mut v, &mut z);
        for r in 0..h {
            grid[r * w + c] = d[r];
        }
    }
    for r in 0..h {
        f[..w].copy_from_slice(&grid[r * w..(r + 1) * w]);
        envelope_1d(&f[..w], &mut d[..w], &mut v, &mut z);
        grid[r * w..(r + 1) * w].copy_from_slice(&d[..w]);
    }
    grid
}

fn envelope_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let sq = |q: usize| (q * q) as f64;
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    let intersect = |q: usize, p: usize| ((f[q] + sq(q)) - (f[p] + sq(p))) / (2.0 * (q as f64 - p as f64));
    for q in 1..n {
        let mut s = intersect(q, v[k]);
        while s <= z[k] {
            k -= 1;
            s = intersect(q, v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let dq = q as f64 - p as f64;
        *o = dq * dq + f[p];
    }
}

/// Recall and precision of both pseudo-labels against a reference mask.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MaskQuality {
    pub recall_q: f64,
    pub precision_q: f64,
    pub recall_c: f64,
    pub precision_c: f64,
}

pub fn mask_quality(q: &BinaryMask, c: &BinaryMask, gt: &BinaryMask) -> Result<MaskQuality> {
    Ok(MaskQuality {
        recall_q: recall(q, gt)?,
        precision_q: precision(q, gt)?,
        recall_c: recall(c, gt)?,
        precision_c: precision(c, gt)?,
    })
}

/// Mean with its 95% half-width `1.96 · sd / √n` (sample sd).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Aggregate {
    pub mean: f64,
    /// `None` with fewer than two values.
    pub half_width: Option<f64>,
    pub n: usize,
}

impl Aggregate {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                half_width: None,
                n,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let half_width = (n >= 2).then(|| {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            1.96 * var.sqrt() / (n as f64).sqrt()
        });
        Self {
            mean,
            half_width,
            n,
        }
    }
}

impl std::fmt::Display for Aggregate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.half_width {
            Some(hw) => write!(f, "{:.4}±{:.4}", self.mean, hw),
            None => write!(f, "{:.4}", self.mean),
        }
    }
}

/// Metrics of one predicted slice.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SliceMetrics {
    pub slice_id: String,
    pub dice: f64,
    pub jaccard: f64,
    /// `None` when either mask is empty.
    pub hd95: Option<f64>,
    pub recall: f64,
    pub precision: f64,
}

pub fn evaluate_slice(slice_id: &str, pred: &BinaryMask, gt: &BinaryMask) -> Result<SliceMetrics> {
    let (dice, jaccard) = dice_jaccard(pred, gt)?;
    let hd = match hd95(pred, gt) {
        Ok(v) => Some(v),
        Err(Error::UndefinedMetric(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(SliceMetrics {
        slice_id: slice_id.to_string(),
        dice,
        jaccard,
        hd95: hd,
        recall: recall(pred, gt)?,
        precision: precision(pred, gt)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub dice: Aggregate,
    pub jaccard: Aggregate,
    /// Over slices where HD95 is defined.
    pub hd95: Aggregate,
    pub recall: Aggregate,
    pub precision: Aggregate,
    pub n_slices: usize,
    pub rows: Vec<SliceMetrics>,
}

impl EvalReport {
    /// Aggregates per-slice rows. Rows of lesion-free slices should be
    /// filtered out by the caller.
    pub fn from_rows(rows: Vec<SliceMetrics>) -> Self {
        let col = |f: fn(&SliceMetrics) -> f64| rows.iter().map(f).collect::<Vec<_>>();
        let hd: Vec<f64> = rows.iter().filter_map(|r| r.hd95).collect();
        Self {
            dice: Aggregate::of(&col(|r| r.dice)),
            jaccard: Aggregate::of(&col(|r| r.jaccard)),
            hd95: Aggregate::of(&hd),
            recall: Aggregate::of(&col(|r| r.recall)),
            precision: Aggregate::of(&col(|r| r.precision)),
            n_slices: rows.len(),
            rows,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("slice_id,dice,jaccard,hd95,recall,precision\n");
        for r in &self.rows {
            let hd = r.hd95.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.slice_id, r.dice, r.jaccard, hd, r.recall, r.precision
            ));
        }
        out
    }
}
