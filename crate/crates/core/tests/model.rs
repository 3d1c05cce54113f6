mod common;

use rand::Rng;
use recist_core::model::{forward, init_params, Layout, SegNetParams, LEAKY_SLOPE};
use recist_core::trainer::{self, SegModelPair};
use recist_core::{Grid, SliceImage};

/// Direct nested-loop evaluation: zero-padded 3×3 convolutions, leaky ReLU
/// between layers, sigmoid at the end.
fn naive_forward(p: &SegNetParams, image: &SliceImage) -> Vec<f64> {
    let (w, h) = image.dims();
    let mut maps: Vec<Vec<f64>> = vec![image.as_slice().to_vec()];
    let n = p.layout.n_layers();
    for l in 0..n {
        let (ci, co) = p.layout.layer(l);
        let (weights, bias) = p.layer(l);
        let mut next = vec![vec![0.0; w * h]; co];
        for o in 0..co {
            for r in 0..h as isize {
                for c in 0..w as isize {
                    let mut s = bias[o];
                    for i in 0..ci {
                        for ky in 0..3isize {
                            for kx in 0..3isize {
                                let (rr, cc) = (r + ky - 1, c + kx - 1);
                                if rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize {
                                    continue;
                                }
                                let wt = weights[((o * ci + i) * 3 + ky as usize) * 3 + kx as usize];
                                s += wt * maps[i][rr as usize * w + cc as usize];
                            }
                        }
                    }
                    next[o][r as usize * w + c as usize] = if l + 1 < n {
                        if s > 0.0 { s } else { LEAKY_SLOPE * s }
                    } else {
                        1.0 / (1.0 + (-s).exp())
                    };
                }
            }
        }
        maps = next;
    }
    maps.remove(0)
}

#[test]
fn forward_matches_naive_convolution() {
    let mut rng = common::rng(41);
    for seed in 0..10 {
        let layout: Layout = "1-4-3-1".parse().unwrap();
        let mut p = init_params(seed, &layout).unwrap();
        for b in 0..layout.n_layers() {
            for v in p.layer_mut(b).1.iter_mut() {
                *v = rng.gen_range(-0.3..0.3);
            }
        }
        let image = Grid::from_fn(6, 6, |_, _| rng.gen_range(0.0..1.0));
        let (got, _) = forward(&p, &image).unwrap();
        for (a, b) in got.as_slice().iter().zip(naive_forward(&p, &image)) {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }
}

#[test]
fn predict_is_threshold_of_ensemble() {
    let mut rng = common::rng(42);
    let layout: Layout = "1-4-4-1".parse().unwrap();
    let model = SegModelPair::init(5, &layout).unwrap();
    let image = Grid::from_fn(10, 10, |_, _| rng.gen_range(0.0..1.0));
    let (q, c, e) = trainer::predict_branches(&model, &image).unwrap();
    for t in [0.3, 0.5, 0.7] {
        let (m, mask) = trainer::predict(&model, &image, t).unwrap();
        assert_eq!(m, e);
        for i in 0..e.len() {
            assert_eq!(e.as_slice()[i], (q.as_slice()[i] + c.as_slice()[i]) / 2.0);
            assert_eq!(mask.as_slice()[i], e.as_slice()[i] >= t);
        }
    }
}
