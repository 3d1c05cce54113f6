//! Multi-seed experiment drivers: the loss ablation and the λ sweep.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::labels::SliceLabels;
use crate::metrics::Aggregate;
use crate::synthgen::{self, SynthSpec};
use crate::trainer::{self, BranchDice, EvalSample, RegionMode, TrainConfig, TrainSample};

/// Training and held-out slices.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub train: Vec<TrainSample>,
    pub test: Vec<EvalSample>,
}

/// Generates `n_train + n_test` slices from `spec`; the first `n_train`
/// train on labels built from their RECIST pairs, the rest are held out.
pub fn synthetic_corpus(spec: &SynthSpec, n_train: usize, n_test: usize) -> Result<Corpus> {
    let slices = synthgen::generate(spec, n_train + n_test)?;
    let size = spec.image_size;
    let mut train = Vec::with_capacity(n_train);
    let mut test = Vec::with_capacity(n_test);
    for (i, s) in slices.into_iter().enumerate() {
        if i < n_train {
            train.push(TrainSample {
                labels: SliceLabels::from_recists(&s.recists(), size, size)?,
                id: s.id,
                image: s.image,
            });
        } else {
            test.push(EvalSample {
                id: s.id,
                image: s.image,
                gt: s.gt,
            });
        }
    }
    Ok(Corpus { train, test })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Variant {
    /// Supervised loss only (λ = 0).
    NoConsistency,
    /// Consistency over the whole slice.
    Whole,
    /// Consistency over the ambiguous region.
    Ambiguous,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::NoConsistency, Variant::Whole, Variant::Ambiguous];

    pub fn label(self) -> &'static str {
        match self {
            Variant::NoConsistency => "lambda0",
            Variant::Whole => "l_P",
            Variant::Ambiguous => "l_A",
        }
    }

    /// `base` with the loss switched to this variant.
    pub fn apply(self, base: &TrainConfig) -> TrainConfig {
        let mut c = base.clone();
        match self {
            Variant::NoConsistency => c.lambda = 0.0,
            Variant::Whole => c.region_mode = RegionMode::Whole,
            Variant::Ambiguous => c.region_mode = RegionMode::Ambiguous,
        }
        c
    }
}

/// Per-seed test Dice of one configuration and its aggregates.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeedRuns {
    pub seeds: Vec<u64>,
    pub per_seed: Vec<BranchDice>,
    pub q: Aggregate,
    pub c: Aggregate,
    pub ensemble: Aggregate,
}

impl SeedRuns {
    fn from_runs(seeds: &[u64], per_seed: Vec<BranchDice>) -> Self {
        let col = |f: fn(&BranchDice) -> f64| per_seed.iter().map(f).collect::<Vec<_>>();
        Self {
            seeds: seeds.to_vec(),
            q: Aggregate::of(&col(|d| d.q)),
            c: Aggregate::of(&col(|d| d.c)),
            ensemble: Aggregate::of(&col(|d| d.ensemble)),
            per_seed,
        }
    }
}

/// Trains `config` once per seed and scores it on `corpus.test`.
pub fn run_seeds(corpus: &Corpus, config: &TrainConfig, seeds: &[u64]) -> Result<SeedRuns> {
    if seeds.is_empty() {
        return Err(Error::InvalidConfig("at least one seed is required".into()));
    }
    let mut per_seed = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let cfg = TrainConfig {
            seed,
            ..config.clone()
        };
        let (model, _) = trainer::train(&corpus.train, &[], &cfg)?;
        let d = trainer::evaluate_branches(&model, &corpus.test, 0.5)?;
        log::info!(
            "lambda {} region {:?} seed {seed}: dice q {:.4} c {:.4} ensemble {:.4}",
            cfg.lambda,
            cfg.region_mode,
            d.q,
            d.c,
            d.ensemble
        );
        per_seed.push(d);
    }
    Ok(SeedRuns::from_runs(seeds, per_seed))
}

fn warn_single_seed(seeds: &[u64]) {
    if seeds.len() < 2 {
        log::warn!("confidence intervals need at least 2 seeds; reporting means only");
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub runs: SeedRuns,
}

/// Mean test Dice for every loss variant and prediction branch.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, v: Variant) -> Option<&SeedRuns> {
        self.rows.iter().find(|r| r.variant == v).map(|r| &r.runs)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("variant,q_mean,q_half_width,c_mean,c_half_width,ensemble_mean,ensemble_half_width,n_seeds\n");
        let hw = |a: &Aggregate| a.half_width.map(|h| format!("{h:.6}")).unwrap_or_default();
        for r in &self.rows {
            let x = &r.runs;
            let _ = writeln!(
                s,
                "{},{:.6},{},{:.6},{},{:.6},{},{}",
                r.variant.label(),
                x.q.mean,
                hw(&x.q),
                x.c.mean,
                hw(&x.c),
                x.ensemble.mean,
                hw(&x.ensemble),
                x.seeds.len()
            );
        }
        s
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| loss | Q̂ | Ĉ | ensemble |\n|---|---|---|---|\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} |",
                r.variant.label(),
                r.runs.q,
                r.runs.c,
                r.runs.ensemble
            );
        }
        s
    }
}

pub fn ablate(corpus: &Corpus, base: &TrainConfig, seeds: &[u64]) -> Result<AblationTable> {
    warn_single_seed(seeds);
    let rows = Variant::ALL
        .iter()
        .map(|&v| {
            Ok(AblationRow {
                variant: v,
                runs: run_seeds(corpus, &v.apply(base), seeds)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(AblationTable { rows })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepPoint {
    pub lambda: f64,
    pub runs: SeedRuns,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepTable {
    pub points: Vec<SweepPoint>,
}

impl SweepTable {
    /// `max − min` of the mean ensemble Dice over the grid.
    pub fn ensemble_spread(&self) -> f64 {
        let means = self.points.iter().map(|p| p.runs.ensemble.mean);
        let (lo, hi) = means.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), m| (lo.min(m), hi.max(m)));
        hi - lo
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("lambda,ensemble_mean,ensemble_half_width,q_mean,c_mean,n_seeds\n");
        for p in &self.points {
            let r = &p.runs;
            let hw = r.ensemble.half_width.map(|h| format!("{h:.6}")).unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{:.6},{hw},{:.6},{:.6},{}",
                p.lambda,
                r.ensemble.mean,
                r.q.mean,
                r.c.mean,
                r.seeds.len()
            );
        }
        s
    }
}

pub fn sweep_lambda(corpus: &Corpus, base: &TrainConfig, lambdas: &[f64], seeds: &[u64]) -> Result<SweepTable> {
    if lambdas.is_empty() {
        return Err(Error::InvalidConfig("lambda grid is empty".into()));
    }
    warn_single_seed(seeds);
    let points = lambdas
        .iter()
        .map(|&lambda| {
            let cfg = TrainConfig {
                lambda,
                ..base.clone()
            };
            Ok(SweepPoint {
                lambda,
                runs: run_seeds(corpus, &cfg, seeds)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(SweepTable { points })
}
