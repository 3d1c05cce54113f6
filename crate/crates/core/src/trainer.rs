//! Two-phase co-training of the Q and C subnets, AdaMax updates and
//! ensemble inference.
//!
//! Epochs `[0, prepare_epochs)` minimize the supervised loss alone. The
//! remaining epochs add `λ ·` consistency over the whole slice or over the
//! ambiguous region. Both subnets step together from one combined loss.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, NonFiniteDiagnostic, Result};
use crate::grid::{BinaryMask, ProbMap, SliceImage};
use crate::labels::SliceLabels;
use crate::losses::{self, DEFAULT_LAMBDA};
use crate::metrics;
use crate::mix_seed;
use crate::model::{self, Layout, SegNetParams};

pub const ADAMAX_BETA1: f64 = 0.9;
pub const ADAMAX_BETA2: f64 = 0.999;
pub const ADAMAX_EPS: f64 = 1e-8;

/// Early switch fires when `L_sup` improved by less than this over the
/// last [`EARLY_SWITCH_WINDOW`] epochs.
pub const EARLY_SWITCH_DELTA: f64 = 1e-4;
pub const EARLY_SWITCH_WINDOW: usize = 5;

/// Where the consistency term is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegionMode {
    /// Every pixel of the slice.
    Whole,
    /// Only the ambiguous region `C − Q`.
    Ambiguous,
}

impl std::str::FromStr for RegionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "whole" | "p" => Ok(Self::Whole),
            "ambiguous" | "a" => Ok(Self::Ambiguous),
            _ => Err(Error::InvalidConfig(format!("unknown region mode `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda: f64,
    pub prepare_epochs: usize,
    pub total_epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub region_mode: RegionMode,
    pub flip_augment: bool,
    /// Leave the preparation phase early once `L_sup` stalls.
    pub early_switch: bool,
    pub layout: Layout,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            prepare_epochs: 30,
            total_epochs: 80,
            learning_rate: 1e-3,
            batch_size: 6,
            seed: 0,
            region_mode: RegionMode::Ambiguous,
            flip_augment: true,
            early_switch: false,
            layout: Layout::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be finite and non-negative");
        }
        if self.prepare_epochs > self.total_epochs {
            return bad("prepare_epochs must not exceed total_epochs");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        self.layout.validate()
    }
}

/// A training slice with precomputed pseudo-labels.
#[derive(Clone, Debug)]
pub struct TrainSample {
    pub id: String,
    pub image: SliceImage,
    pub labels: SliceLabels,
}

/// A slice with its reference mask.
#[derive(Clone, Debug)]
pub struct EvalSample {
    pub id: String,
    pub image: SliceImage,
    pub gt: BinaryMask,
}

/// The two subnets, `f_Q` and `f_C`, with one optimizer state each.
#[derive(Clone, Debug, PartialEq)]
pub struct SegModelPair {
    pub q: SegNetParams,
    pub c: SegNetParams,
    pub opt_q: AdamaxState,
    pub opt_c: AdamaxState,
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"RCSTCKPT";
const CHECKPOINT_VERSION: u32 = 1;

impl SegModelPair {
    /// Independent initializations for the two subnets, both derived from
    /// `seed`.
    pub fn init(seed: u64, layout: &Layout) -> Result<Self> {
        Ok(Self::fresh(
            model::init_params(mix_seed(seed, 1), layout)?,
            model::init_params(mix_seed(seed, 2), layout)?,
        ))
    }

    /// Pairs two parameter sets with zeroed optimizer state.
    pub fn fresh(q: SegNetParams, c: SegNetParams) -> Self {
        Self {
            opt_q: AdamaxState::new(q.param_count()),
            opt_c: AdamaxState::new(c.param_count()),
            q,
            c,
        }
    }

    /// Optimizer steps taken so far.
    pub fn step_count(&self) -> u64 {
        self.opt_q.t
    }

    /// Little-endian binary encoding of layouts, parameters and optimizer
    /// state; everything round-trips bit-exactly.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + 48 * self.q.data.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        for (net, opt) in [(&self.q, &self.opt_q), (&self.c, &self.opt_c)] {
            let ch = &net.layout.0;
            out.extend_from_slice(&(ch.len() as u32).to_le_bytes());
            for &w in ch {
                out.extend_from_slice(&(w as u32).to_le_bytes());
            }
            out.extend_from_slice(&(net.data.len() as u64).to_le_bytes());
            out.extend_from_slice(&opt.t.to_le_bytes());
            for v in net.data.iter().chain(&opt.m).chain(&opt.u) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(checkpoint_err("bad magic"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(checkpoint_err(&format!("unsupported version {version}")));
        }
        let mut read_net = || -> Result<(SegNetParams, AdamaxState)> {
            let n_ch = r.u32()? as usize;
            let layout = Layout((0..n_ch).map(|_| r.u32().map(|w| w as usize)).collect::<Result<_>>()?);
            layout.validate()?;
            let n = r.u64()? as usize;
            if n != layout.param_count() {
                return Err(checkpoint_err("parameter count does not match layout"));
            }
            let t = r.u64()?;
            let mut vec = || (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>();
            let data = vec()?;
            let m = vec()?;
            let u = vec()?;
            Ok((SegNetParams { layout, data }, AdamaxState { m, u, t }))
        };
        let (q, opt_q) = read_net()?;
        let (c, opt_c) = read_net()?;
        if r.pos != bytes.len() {
            return Err(checkpoint_err("trailing bytes"));
        }
        Ok(Self { q, c, opt_q, opt_c })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format { msg, .. } => Error::Format {
                path: path.into(),
                msg,
            },
            other => other,
        })
    }
}

fn checkpoint_err(msg: &str) -> Error {
    Error::Format {
        path: "<checkpoint>".into(),
        msg: format!("checkpoint: {msg}"),
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(checkpoint_err("truncated"));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// First moment, infinity norm and step count for one parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamaxState {
    pub m: Vec<f64>,
    pub u: Vec<f64>,
    pub t: u64,
}

impl AdamaxState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            u: vec![0.0; n],
            t: 0,
        }
    }
}

/// One AdaMax update in place.
pub fn adamax_step(params: &mut [f64], grads: &[f64], state: &mut AdamaxState, lr: f64) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() || state.u.len() != params.len() {
        return Err(Error::ShapeMismatch(format!(
            "adamax: {} params, {} grads, state of {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.t += 1;
    let step = lr / (1.0 - ADAMAX_BETA1.powi(state.t as i32));
    for (((p, &g), m), u) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.u.iter_mut())
    {
        *m = ADAMAX_BETA1 * *m + (1.0 - ADAMAX_BETA1) * g;
        *u = (ADAMAX_BETA2 * *u).max(g.abs());
        *p -= step * *m / (*u + ADAMAX_EPS);
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Prepare,
    CoTrain,
}

/// Means over the epoch's training slices, plus validation Dice when a
/// validation set was given.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    pub supervised: f64,
    /// Unweighted consistency value; zero whenever it was not evaluated.
    pub consistency: f64,
    pub val_dice_q: Option<f64>,
    pub val_dice_c: Option<f64>,
    pub val_dice_ensemble: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// First co-training epoch (`total_epochs` if none ran).
    pub switch_epoch: usize,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,phase,l_sup,l_con,val_dice_q,val_dice_c,val_dice_ensemble\n");
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        for r in &self.epochs {
            let phase = match r.phase {
                Phase::Prepare => "prepare",
                Phase::CoTrain => "co-train",
            };
            let _ = writeln!(
                s,
                "{},{phase},{:.8},{:.8},{},{},{}",
                r.epoch,
                r.supervised,
                r.consistency,
                opt(r.val_dice_q),
                opt(r.val_dice_c),
                opt(r.val_dice_ensemble)
            );
        }
        s
    }
}

/// Mean Dice of thresholded `q̂`, `ĉ` and ensemble over slices whose
/// reference mask is non-empty.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BranchDice {
    pub q: f64,
    pub c: f64,
    pub ensemble: f64,
    pub n: usize,
}

pub fn train(
    train_set: &[TrainSample],
    val_set: &[EvalSample],
    config: &TrainConfig,
) -> Result<(SegModelPair, TrainHistory)> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let dims = train_set[0].image.dims();
    for s in train_set {
        if s.image.dims() != dims || s.labels.q.dims() != dims {
            return Err(Error::DimMismatch {
                left: dims,
                right: s.image.dims(),
            });
        }
    }

    let mut model = SegModelPair::init(config.seed, &config.layout)?;
    let n_params = model.q.param_count();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 3));
    let whole = BinaryMask::filled(dims.0, dims.1, true);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = TrainHistory {
        epochs: Vec::with_capacity(config.total_epochs),
        switch_epoch: config.prepare_epochs,
    };
    let mut switched = config.prepare_epochs == 0;
    let mut step = 0u64;

    for epoch in 0..config.total_epochs {
        if !switched && epoch >= config.prepare_epochs {
            switched = true;
            history.switch_epoch = epoch;
        }
        if !switched && config.early_switch && stalled(&history.epochs) {
            log::info!("supervised loss stalled; starting co-training at epoch {epoch}");
            switched = true;
            history.switch_epoch = epoch;
        }
        let lambda = if switched { config.lambda } else { 0.0 };

        order.shuffle(&mut rng);
        let (mut sum_sup, mut sum_con) = (0.0, 0.0);
        for batch in order.chunks(config.batch_size) {
            let mut grad_q = vec![0.0; n_params];
            let mut grad_c = vec![0.0; n_params];
            let (mut batch_sup, mut batch_con) = (0.0, 0.0);
            for &i in batch {
                let sample = &train_set[i];
                let (flip_h, flip_v) = if config.flip_augment {
                    (rng.gen_bool(0.5), rng.gen_bool(0.5))
                } else {
                    (false, false)
                };
                let image = flip(&sample.image, flip_h, flip_v);
                let labels = if flip_h || flip_v {
                    std::borrow::Cow::Owned(sample.labels.flipped(flip_h, flip_v))
                } else {
                    std::borrow::Cow::Borrowed(&sample.labels)
                };
                let region = match config.region_mode {
                    RegionMode::Whole => &whole,
                    RegionMode::Ambiguous => &labels.ambiguous,
                };
                let (q_hat, cache_q) = model::forward(&model.q, &image)?;
                let (c_hat, cache_c) = model::forward(&model.c, &image)?;
                let loss = losses::total_loss(&q_hat, &c_hat, &labels.q, &labels.c, region, lambda)?;
                batch_sup += loss.supervised;
                batch_con += loss.consistency;
                let gq = model::backward(&model.q, &cache_q, &loss.total.grad_q)?;
                let gc_map = loss.total.grad_c.as_ref().expect("combined loss has a C gradient");
                let gc = model::backward(&model.c, &cache_c, gc_map)?;
                accumulate(&mut grad_q, &gq);
                accumulate(&mut grad_c, &gc);
            }
            step += 1;
            if !(batch_sup.is_finite() && batch_con.is_finite())
                || !grad_q.iter().chain(&grad_c).all(|g| g.is_finite())
            {
                return Err(Error::NonFiniteLoss(Box::new(NonFiniteDiagnostic {
                    epoch,
                    step,
                    supervised: batch_sup,
                    consistency: batch_con,
                    slice_ids: batch.iter().map(|&i| train_set[i].id.clone()).collect(),
                    max_abs_param_q: max_abs(&model.q.data),
                    max_abs_param_c: max_abs(&model.c.data),
                })));
            }
            let scale = 1.0 / batch.len() as f64;
            grad_q.iter_mut().chain(grad_c.iter_mut()).for_each(|g| *g *= scale);
            adamax_step(&mut model.q.data, &grad_q, &mut model.opt_q, config.learning_rate)?;
            adamax_step(&mut model.c.data, &grad_c, &mut model.opt_c, config.learning_rate)?;
            sum_sup += batch_sup;
            sum_con += batch_con;
        }

        let n = train_set.len() as f64;
        let val = if val_set.is_empty() {
            None
        } else {
            Some(evaluate_branches(&model, val_set, 0.5)?)
        };
        let record = EpochRecord {
            epoch,
            phase: if switched { Phase::CoTrain } else { Phase::Prepare },
            supervised: sum_sup / n,
            consistency: sum_con / n,
            val_dice_q: val.map(|v| v.q),
            val_dice_c: val.map(|v| v.c),
            val_dice_ensemble: val.map(|v| v.ensemble),
        };
        log::debug!(
            "epoch {epoch}: l_sup {:.5} l_con {:.5}",
            record.supervised,
            record.consistency
        );
        history.epochs.push(record);
    }
    if !switched {
        history.switch_epoch = config.total_epochs;
    }
    Ok((model, history))
}

fn stalled(epochs: &[EpochRecord]) -> bool {
    let n = epochs.len();
    n > EARLY_SWITCH_WINDOW
        && epochs[n - 1 - EARLY_SWITCH_WINDOW].supervised - epochs[n - 1].supervised < EARLY_SWITCH_DELTA
}

fn flip(image: &SliceImage, h: bool, v: bool) -> std::borrow::Cow<'_, SliceImage> {
    match (h, v) {
        (false, false) => std::borrow::Cow::Borrowed(image),
        (true, false) => std::borrow::Cow::Owned(image.flip_horizontal()),
        (false, true) => std::borrow::Cow::Owned(image.flip_vertical()),
        (true, true) => std::borrow::Cow::Owned(image.flip_horizontal().flip_vertical()),
    }
}

fn accumulate(acc: &mut [f64], g: &[f64]) {
    acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// `(q̂, ĉ, (q̂ + ĉ)/2)` for one image.
pub fn predict_branches(model: &SegModelPair, image: &SliceImage) -> Result<(ProbMap, ProbMap, ProbMap)> {
    let (q_hat, _) = model::forward(&model.q, image)?;
    let (c_hat, _) = model::forward(&model.c, image)?;
    let m_hat = losses::ensemble(&q_hat, &c_hat)?;
    Ok((q_hat, c_hat, m_hat))
}

/// Ensemble probability map and its mask (`m̂ ≥ threshold`).
pub fn predict(model: &SegModelPair, image: &SliceImage, threshold: f64) -> Result<(ProbMap, BinaryMask)> {
    let (_, _, m_hat) = predict_branches(model, image)?;
    let mask = m_hat.threshold(threshold);
    Ok((m_hat, mask))
}

pub fn evaluate_branches(model: &SegModelPair, samples: &[EvalSample], threshold: f64) -> Result<BranchDice> {
    let (mut q, mut c, mut e, mut n) = (0.0, 0.0, 0.0, 0usize);
    for s in samples.iter().filter(|s| s.gt.count() > 0) {
        let (q_hat, c_hat, m_hat) = predict_branches(model, &s.image)?;
        q += metrics::dice_jaccard(&q_hat.threshold(threshold), &s.gt)?.0;
        c += metrics::dice_jaccard(&c_hat.threshold(threshold), &s.gt)?.0;
        e += metrics::dice_jaccard(&m_hat.threshold(threshold), &s.gt)?.0;
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let k = n as f64;
    Ok(BranchDice {
        q: q / k,
        c: c / k,
        ensemble: e / k,
        n,
    })
}
