//! Soft Dice losses with exact gradients w.r.t. the predicted maps.
//!
//! With `r` the region indicator,
//! `N = 2·Σ r·p·t + ε`, `D = Σ r·p + Σ r·t + ε` and `L = 1 − N / D`:
//!
//! ```text
//! ∂L/∂p_i = r_i · (N − 2·t_i·D) / D²
//! ∂L/∂t_i = r_i · (N − 2·p_i·D) / D²
//! ```

use crate::error::Result;
use crate::grid::{BinaryMask, Grid, ProbMap};

/// Smoothing term of the soft Dice ratio.
pub const DICE_EPS: f64 = 1e-6;

/// Default weight of the consistency term.
pub const DEFAULT_LAMBDA: f64 = 0.4;

/// Loss value with gradients for the Q branch and, where applicable, the C
/// branch.
#[derive(Clone, Debug, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grad_q: Grid<f64>,
    pub grad_c: Option<Grid<f64>>,
    /// Number of evaluated Dice terms whose region was empty.
    pub empty_regions: usize,
}

/// Value and both partial gradients of one soft Dice term.
struct DiceTerm {
    value: f64,
    grad_pred: Vec<f64>,
    grad_target: Vec<f64>,
    empty_region: bool,
}

fn dice_term(pred: &[f64], target: &[f64], region: &[bool], want_target_grad: bool) -> DiceTerm {
    let n = pred.len();
    if !region.iter().any(|&r| r) {
        log::warn!("soft Dice evaluated on an empty region; returning zero loss");
        return DiceTerm {
            value: 0.0,
            grad_pred: vec![0.0; n],
            grad_target: vec![0.0; n],
            empty_region: true,
        };
    }
    let (mut inter, mut sum_p, mut sum_t) = (0.0, 0.0, 0.0);
    for i in 0..n {
        if region[i] {
            inter += pred[i] * target[i];
            sum_p += pred[i];
            sum_t += target[i];
        }
    }
    let num = 2.0 * inter + DICE_EPS;
    let den = sum_p + sum_t + DICE_EPS;
    let den2 = den * den;
    let grad = |other: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|i| {
                if region[i] {
                    (num - 2.0 * other[i] * den) / den2
                } else {
                    0.0
                }
            })
            .collect()
    };
    DiceTerm {
        value: 1.0 - num / den,
        grad_pred: grad(target),
        grad_target: if want_target_grad { grad(pred) } else { vec![0.0; n] },
        empty_region: false,
    }
}

/// `1 − (2·Σ p·t + ε) / (Σ p + Σ t + ε)` over `region`; the gradient is taken
/// w.r.t. `pred` only and lands in `grad_q`.
pub fn soft_dice(pred: &ProbMap, target: &ProbMap, region: &BinaryMask) -> Result<LossValue> {
    pred.check_same_dims(target)?;
    pred.check_same_dims(region)?;
    let t = dice_term(pred.as_slice(), target.as_slice(), region.as_slice(), false);
    let (w, h) = pred.dims();
    Ok(LossValue {
        value: t.value,
        grad_q: Grid::from_vec(w, h, t.grad_pred)?,
        grad_c: None,
        empty_regions: usize::from(t.empty_region),
    })
}

/// `soft_dice(q̂, Q, P) + soft_dice(ĉ, C, P)`.
pub fn supervised_loss(
    q_hat: &ProbMap,
    c_hat: &ProbMap,
    q: &BinaryMask,
    c: &BinaryMask,
) -> Result<LossValue> {
    q_hat.check_same_dims(c_hat)?;
    let all = BinaryMask::filled(q_hat.width(), q_hat.height(), true);
    let lq = soft_dice(q_hat, &q.to_prob(), &all)?;
    let lc = soft_dice(c_hat, &c.to_prob(), &all)?;
    Ok(LossValue {
        value: lq.value + lc.value,
        grad_q: lq.grad_q,
        grad_c: Some(lc.grad_q),
        empty_regions: lq.empty_regions + lc.empty_regions,
    })
}

/// Soft Dice between the two predictions over `region`, differentiated
/// through both arguments. `region = P` gives the whole-slice form,
/// `region = A` the region-constrained one.
pub fn consistency_loss(q_hat: &ProbMap, c_hat: &ProbMap, region: &BinaryMask) -> Result<LossValue> {
    q_hat.check_same_dims(c_hat)?;
    q_hat.check_same_dims(region)?;
    let t = dice_term(q_hat.as_slice(), c_hat.as_slice(), region.as_slice(), true);
    let (w, h) = q_hat.dims();
    Ok(LossValue {
        value: t.value,
        grad_q: Grid::from_vec(w, h, t.grad_pred)?,
        grad_c: Some(Grid::from_vec(w, h, t.grad_target)?),
        empty_regions: usize::from(t.empty_region),
    })
}

/// Total loss with its two components kept for logging.
#[derive(Clone, Debug, PartialEq)]
pub struct CombinedLoss {
    pub total: LossValue,
    pub supervised: f64,
    /// Unweighted consistency value; zero when `lambda == 0`.
    pub consistency: f64,
}

/// `supervised_loss + λ · consistency_loss(region)`.
///
/// With `lambda == 0` the consistency term is not evaluated, so the result is
/// bit-identical to [`supervised_loss`].
pub fn total_loss(
    q_hat: &ProbMap,
    c_hat: &ProbMap,
    q: &BinaryMask,
    c: &BinaryMask,
    region: &BinaryMask,
    lambda: f64,
) -> Result<CombinedLoss> {
    let sup = supervised_loss(q_hat, c_hat, q, c)?;
    if lambda == 0.0 {
        return Ok(CombinedLoss {
            supervised: sup.value,
            consistency: 0.0,
            total: sup,
        });
    }
    let con = consistency_loss(q_hat, c_hat, region)?;
    let add = |a: &Grid<f64>, b: &Grid<f64>| -> Grid<f64> {
        let data = a
            .as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(x, y)| x + lambda * y)
            .collect();
        Grid::from_vec(a.width(), a.height(), data).expect("same dims")
    };
    let sup_c = sup.grad_c.as_ref().expect("supervised loss has a C gradient");
    let con_c = con.grad_c.as_ref().expect("consistency loss has a C gradient");
    Ok(CombinedLoss {
        total: LossValue {
            value: sup.value + lambda * con.value,
            grad_q: add(&sup.grad_q, &con.grad_q),
            grad_c: Some(add(sup_c, con_c)),
            empty_regions: sup.empty_regions + con.empty_regions,
        },
        supervised: sup.value,
        consistency: con.value,
    })
}

/// Pixelwise `(q̂ + ĉ) / 2`.
pub fn ensemble(q_hat: &ProbMap, c_hat: &ProbMap) -> Result<ProbMap> {
    q_hat.check_same_dims(c_hat)?;
    let data = q_hat
        .as_slice()
        .iter()
        .zip(c_hat.as_slice())
        .map(|(a, b)| (a + b) / 2.0)
        .collect();
    Grid::from_vec(q_hat.width(), q_hat.height(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    fn map(w: usize, h: usize, v: &[f64]) -> ProbMap {
        Grid::from_vec(w, h, v.to_vec()).unwrap()
    }

    #[test]
    fn identical_binary_maps_give_zero() {
        let t = BinaryMask::from_fn(4, 4, |r, c| r > c);
        let all = BinaryMask::filled(4, 4, true);
        let l = soft_dice(&t.to_prob(), &t.to_prob(), &all).unwrap();
        assert!(l.value.abs() < 1e-6);
    }

    #[test]
    fn disjoint_maps_give_one() {
        let all = BinaryMask::filled(4, 4, true);
        let l = soft_dice(&ProbMap::filled(4, 4, 1.0), &ProbMap::filled(4, 4, 0.0), &all).unwrap();
        assert!((l.value - (1.0 - DICE_EPS / (16.0 + DICE_EPS))).abs() < 1e-15);
    }

    #[test]
    fn direct_formula_example() {
        let all = BinaryMask::filled(2, 1, true);
        let l = soft_dice(&map(2, 1, &[0.5, 1.0]), &map(2, 1, &[1.0, 0.0]), &all).unwrap();
        assert!((l.value - 0.6).abs() < 1e-6);
        let con = consistency_loss(&map(2, 1, &[0.5, 1.0]), &map(2, 1, &[1.0, 0.0]), &all).unwrap();
        assert!((con.value - 0.6).abs() < 1e-6);
    }

    #[test]
    fn empty_region_is_zero_with_flag() {
        let none = BinaryMask::filled(3, 3, false);
        let l = soft_dice(&ProbMap::filled(3, 3, 0.3), &ProbMap::filled(3, 3, 1.0), &none).unwrap();
        assert_eq!(l.value, 0.0);
        assert_eq!(l.empty_regions, 1);
        assert!(l.grad_q.as_slice().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn dims_checked() {
        let a = ProbMap::filled(3, 3, 0.3);
        let b = ProbMap::filled(3, 4, 0.3);
        let all = BinaryMask::filled(3, 3, true);
        assert!(matches!(soft_dice(&a, &b, &all), Err(Error::DimMismatch { .. })));
    }

    #[test]
    fn supervised_symmetric_case() {
        let q = BinaryMask::from_fn(4, 4, |r, _| r < 2);
        let half = ProbMap::filled(4, 4, 0.5);
        let all = BinaryMask::filled(4, 4, true);
        let single = soft_dice(&half, &q.to_prob(), &all).unwrap().value;
        let sup = supervised_loss(&half, &half, &q, &q).unwrap();
        assert_eq!(sup.value, 2.0 * single);
    }

    #[test]
    fn ensemble_arithmetic() {
        let e = ensemble(&ProbMap::filled(2, 2, 0.0), &ProbMap::filled(2, 2, 1.0)).unwrap();
        assert!(e.as_slice().iter().all(|&v| v == 0.5));
        let e = ensemble(&ProbMap::filled(2, 2, 0.2), &ProbMap::filled(2, 2, 0.6)).unwrap();
        assert!(e.as_slice().iter().all(|&v| (v - 0.4).abs() < 1e-15));
        let x = map(2, 1, &[0.1, 0.9]);
        assert_eq!(ensemble(&x, &x).unwrap(), x);
    }
}
