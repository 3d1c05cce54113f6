mod common;

use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use recist_core::losses::{consistency_loss, soft_dice, supervised_loss, total_loss};
use recist_core::model::{backward, forward, init_params, Layout};
use recist_core::{BinaryMask, Grid, ProbMap};

const STEP: f64 = 1e-4;
const REL_TOL: f64 = 1e-3;

fn random_prob(rng: &mut ChaCha8Rng, w: usize, h: usize) -> ProbMap {
    Grid::from_fn(w, h, |_, _| rng.gen_range(0.02..0.98))
}

fn random_dims(rng: &mut ChaCha8Rng) -> (usize, usize) {
    (rng.gen_range(6..=8), rng.gen_range(6..=8))
}

/// Non-empty random region.
fn random_region(rng: &mut ChaCha8Rng, w: usize, h: usize) -> BinaryMask {
    let mut m = common::random_mask(rng, w, h, 0.5);
    m.set(0, 0, true);
    m
}

/// Central differences of `f` at every entry of `x`, against `analytic`.
fn check_map(x: &ProbMap, analytic: &Grid<f64>, f: impl Fn(&ProbMap) -> f64, what: &str) {
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.as_mut_slice()[i] += STEP;
        let mut minus = x.clone();
        minus.as_mut_slice()[i] -= STEP;
        let numeric = (f(&plus) - f(&minus)) / (2.0 * STEP);
        let a = analytic.as_slice()[i];
        assert!(
            common::rel_err(a, numeric) < REL_TOL || (a - numeric).abs() < 1e-9,
            "{what}: entry {i}: analytic {a} numeric {numeric}"
        );
    }
}

#[test]
fn soft_dice_gradient() {
    let mut rng = common::rng(31);
    for _ in 0..100 {
        let (w, h) = random_dims(&mut rng);
        let p = random_prob(&mut rng, w, h);
        let t = common::random_mask(&mut rng, w, h, 0.4).to_prob();
        let region = random_region(&mut rng, w, h);
        let l = soft_dice(&p, &t, &region).unwrap();
        check_map(&p, &l.grad_q, |x| soft_dice(x, &t, &region).unwrap().value, "soft_dice");
    }
}

#[test]
fn supervised_gradient() {
    let mut rng = common::rng(32);
    for _ in 0..100 {
        let (w, h) = random_dims(&mut rng);
        let (qh, ch) = (random_prob(&mut rng, w, h), random_prob(&mut rng, w, h));
        let q = common::random_mask(&mut rng, w, h, 0.3);
        let c = q.or(&common::random_mask(&mut rng, w, h, 0.3)).unwrap();
        let l = supervised_loss(&qh, &ch, &q, &c).unwrap();
        check_map(&qh, &l.grad_q, |x| supervised_loss(x, &ch, &q, &c).unwrap().value, "sup/q");
        check_map(&ch, l.grad_c.as_ref().unwrap(), |x| supervised_loss(&qh, x, &q, &c).unwrap().value, "sup/c");
    }
}

#[test]
fn consistency_gradient_through_both_branches() {
    let mut rng = common::rng(33);
    for _ in 0..100 {
        let (w, h) = random_dims(&mut rng);
        let (qh, ch) = (random_prob(&mut rng, w, h), random_prob(&mut rng, w, h));
        let region = random_region(&mut rng, w, h);
        let l = consistency_loss(&qh, &ch, &region).unwrap();
        check_map(&qh, &l.grad_q, |x| consistency_loss(x, &ch, &region).unwrap().value, "con/q");
        check_map(&ch, l.grad_c.as_ref().unwrap(), |x| consistency_loss(&qh, x, &region).unwrap().value, "con/c");
    }
}

#[test]
fn total_loss_gradient() {
    let mut rng = common::rng(34);
    for _ in 0..100 {
        let (w, h) = random_dims(&mut rng);
        let (qh, ch) = (random_prob(&mut rng, w, h), random_prob(&mut rng, w, h));
        let q = common::random_mask(&mut rng, w, h, 0.3);
        let c = q.or(&common::random_mask(&mut rng, w, h, 0.3)).unwrap();
        let region = random_region(&mut rng, w, h);
        let lambda = rng.gen_range(0.1..1.0);
        let l = total_loss(&qh, &ch, &q, &c, &region, lambda).unwrap().total;
        let f = |a: &ProbMap, b: &ProbMap| total_loss(a, b, &q, &c, &region, lambda).unwrap().total.value;
        check_map(&qh, &l.grad_q, |x| f(x, &ch), "total/q");
        check_map(&ch, l.grad_c.as_ref().unwrap(), |x| f(&qh, x), "total/c");
    }
}

#[test]
fn model_pipeline_gradient() {
    let layout: Layout = "1-3-3-1".parse().unwrap();
    let (mut kinks, mut checks) = (0, 0);
    for seed in 0..20u64 {
        let mut rng = common::rng(100 + seed);
        let image = random_prob(&mut rng, 8, 8);
        let q = common::random_mask(&mut rng, 8, 8, 0.3);
        let c = q.or(&common::random_mask(&mut rng, 8, 8, 0.3)).unwrap();
        let region = c.and_not(&q).unwrap();
        let pq = init_params(2 * seed, &layout).unwrap();
        let pc = init_params(2 * seed + 1, &layout).unwrap();

        let loss = |pq: &recist_core::model::SegNetParams, pc: &recist_core::model::SegNetParams| {
            let (qh, _) = forward(pq, &image).unwrap();
            let (ch, _) = forward(pc, &image).unwrap();
            total_loss(&qh, &ch, &q, &c, &region, 0.4).unwrap().total.value
        };
        let (qh, cache_q) = forward(&pq, &image).unwrap();
        let (ch, cache_c) = forward(&pc, &image).unwrap();
        let l = total_loss(&qh, &ch, &q, &c, &region, 0.4).unwrap().total;
        let gq = backward(&pq, &cache_q, &l.grad_q).unwrap();
        let gc = backward(&pc, &cache_c, l.grad_c.as_ref().unwrap()).unwrap();

        for (which, grads) in [(0, &gq), (1, &gc)] {
            for (i, &a) in grads.iter().enumerate() {
                let at = |delta: f64| {
                    let (mut a, mut b) = (pq.clone(), pc.clone());
                    if which == 0 {
                        a.data[i] += delta;
                    } else {
                        b.data[i] += delta;
                    }
                    loss(&a, &b)
                };
                checks += 1;
                let numeric = (at(STEP) - at(-STEP)) / (2.0 * STEP);
                if common::rel_err(a, numeric) < REL_TOL || (a - numeric).abs() < 1e-9 {
                    continue;
                }
                // A leaky-ReLU kink inside [−h, h] breaks the central
                // difference. Accept only if the one-sided slopes disagree
                // and a much smaller step agrees with the analytic value.
                let f0 = at(0.0);
                let (right, left) = ((at(STEP) - f0) / STEP, (f0 - at(-STEP)) / STEP);
                let kink = common::rel_err(right, left) > 10.0 * REL_TOL;
                let fine = (at(1e-7) - at(-1e-7)) / 2e-7;
                assert!(
                    kink && common::rel_err(a, fine) < REL_TOL,
                    "seed {seed} net {which} param {i}: analytic {a} numeric {numeric} (fine step {fine})"
                );
                kinks += 1;
            }
        }
    }
    // kinks should be rare; a large share would point at a real error
    assert!(kinks * 100 <= checks, "{kinks} of {checks} parameters needed the kink fallback");
}

proptest! {
    #[test]
    fn lambda_zero_is_supervised_bit_for_bit(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let (w, h) = random_dims(&mut rng);
        let (qh, ch) = (random_prob(&mut rng, w, h), random_prob(&mut rng, w, h));
        let q = common::random_mask(&mut rng, w, h, 0.3);
        let c = q.or(&common::random_mask(&mut rng, w, h, 0.3)).unwrap();
        let region = c.and_not(&q).unwrap();
        let t = total_loss(&qh, &ch, &q, &c, &region, 0.0).unwrap();
        let s = supervised_loss(&qh, &ch, &q, &c).unwrap();
        prop_assert_eq!(t.total.value.to_bits(), s.value.to_bits());
        prop_assert_eq!(t.total, s);
    }

    #[test]
    fn consistency_ignores_pixels_outside_region(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let (w, h) = random_dims(&mut rng);
        let (qh, ch) = (random_prob(&mut rng, w, h), random_prob(&mut rng, w, h));
        let region = random_region(&mut rng, w, h);
        let (mut qh2, mut ch2) = (qh.clone(), ch.clone());
        for i in 0..qh.len() {
            if !region.as_slice()[i] {
                qh2.as_mut_slice()[i] = rng.gen_range(0.0..1.0);
                ch2.as_mut_slice()[i] = rng.gen_range(0.0..1.0);
            }
        }
        let a = consistency_loss(&qh, &ch, &region).unwrap();
        let b = consistency_loss(&qh2, &ch2, &region).unwrap();
        prop_assert_eq!(a.value.to_bits(), b.value.to_bits());
        prop_assert_eq!(&a.grad_q, &b.grad_q);
        prop_assert_eq!(&a.grad_c, &b.grad_c);
        for i in 0..qh.len() {
            if !region.as_slice()[i] {
                prop_assert_eq!(a.grad_q.as_slice()[i], 0.0);
                prop_assert_eq!(a.grad_c.as_ref().unwrap().as_slice()[i], 0.0);
            }
        }
    }

    #[test]
    fn soft_dice_symmetric_and_bounded(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let (w, h) = random_dims(&mut rng);
        let (p, t) = (random_prob(&mut rng, w, h), random_prob(&mut rng, w, h));
        let region = random_region(&mut rng, w, h);
        let a = soft_dice(&p, &t, &region).unwrap().value;
        let b = soft_dice(&t, &p, &region).unwrap().value;
        prop_assert_eq!(a, b);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn supervised_is_sum_of_two_dice(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let (qh, ch) = (random_prob(&mut rng, 4, 4), random_prob(&mut rng, 4, 4));
        let q = common::random_mask(&mut rng, 4, 4, 0.4);
        let c = q.or(&common::random_mask(&mut rng, 4, 4, 0.4)).unwrap();
        let all = BinaryMask::filled(4, 4, true);
        let want = soft_dice(&qh, &q.to_prob(), &all).unwrap().value + soft_dice(&ch, &c.to_prob(), &all).unwrap().value;
        prop_assert_eq!(supervised_loss(&qh, &ch, &q, &c).unwrap().value, want);
    }

    #[test]
    fn total_is_recomposed_sum(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let (qh, ch) = (random_prob(&mut rng, 8, 8), random_prob(&mut rng, 8, 8));
        let q = common::random_mask(&mut rng, 8, 8, 0.3);
        let c = q.or(&common::random_mask(&mut rng, 8, 8, 0.3)).unwrap();
        let a = c.and_not(&q).unwrap();
        let all = BinaryMask::filled(8, 8, true);
        let want = soft_dice(&qh, &q.to_prob(), &all).unwrap().value
            + soft_dice(&ch, &c.to_prob(), &all).unwrap().value
            + 0.4 * soft_dice(&qh, &ch, &a).unwrap().value;
        let got = total_loss(&qh, &ch, &q, &c, &a, 0.4).unwrap().total.value;
        prop_assert!((got - want).abs() <= 1e-15 * want.abs().max(1.0));
    }
}
