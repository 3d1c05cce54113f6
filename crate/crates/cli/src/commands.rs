use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::{info, warn};
use recist_core::dataio::{self, DatasetSlice, ManifestRecord, Split};
use recist_core::experiment::{self, Corpus};
use recist_core::labels::{self, LesionMasks, SliceLabels};
use recist_core::metrics::{self, Aggregate, EvalReport};
use recist_core::trainer::{self, EvalSample, SegModelPair, TrainSample};
use recist_core::{geometry, raster, synthgen, BinaryMask, Error as CoreError};
use serde::Serialize;

use crate::config::{RunConfig, SplitConfig};
use crate::{DataArgs, EvalArgs, GenLabelsArgs, MultiSeedArgs, OverlayArgs, SweepArgs, SynthArgs, TrainArgs, UsageError};

fn subdir(out: &Path, name: &str) -> Result<PathBuf> {
    let d = out.join(name);
    fs::create_dir_all(&d).with_context(|| format!("creating {}", d.display()))?;
    Ok(d)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).context("serializing report")?;
    s.push('\n');
    write(path, s)
}

/// Keeps ids usable as file names.
fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

fn seeds_from(first: u64, n: u64) -> Result<Vec<u64>> {
    if n == 0 {
        return Err(UsageError("--seeds must be at least 1".into()).into());
    }
    Ok((first..first + n).collect())
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let mut cfg = RunConfig::load(a.common.config.as_deref())?;
    a.synth.apply(&mut cfg.synth);
    a.split.apply(&mut cfg.split);
    cfg.synth.validate()?;
    let generated = synthgen::generate(&cfg.synth, a.n)?;

    let records: Vec<ManifestRecord> = generated
        .iter()
        .map(|s| ManifestRecord {
            slice_id: s.id.clone(),
            source_id: s.id.clone(),
            image_path: PathBuf::new(),
            mask_path: None,
            split: None,
        })
        .collect();
    let (train_ids, _) = dataio::split(&records, cfg.split.ratio, cfg.split.seed)?;
    let train_ids: std::collections::BTreeSet<_> = train_ids.into_iter().collect();
    let slices: Vec<DatasetSlice> = generated
        .into_iter()
        .map(|s| DatasetSlice {
            split: Some(if train_ids.contains(&s.id) { Split::Train } else { Split::Test }),
            recists: s.recists(),
            source_id: s.id.clone(),
            id: s.id,
            image: s.image,
            gt: Some(s.gt),
        })
        .collect();
    fs::create_dir_all(&a.common.out).with_context(|| format!("creating {}", a.common.out.display()))?;
    dataio::write_dataset(&a.common.out, &slices)?;
    cfg.snapshot("synth", &a.common.out)?;
    println!(
        "wrote {} slices ({} train, {} test) to {}",
        slices.len(),
        train_ids.len(),
        slices.len() - train_ids.len(),
        a.common.out.display()
    );
    Ok(())
}

pub fn gen_labels(a: &GenLabelsArgs) -> Result<()> {
    let cfg = RunConfig::load(a.common.config.as_deref())?;
    if a.width == 0 || a.height == 0 {
        return Err(UsageError("--width and --height must be positive".into()).into());
    }
    let rows = dataio::read_annotations(&a.annotations)?;
    if rows.is_empty() {
        warn!("{} has no annotations; nothing written", a.annotations.display());
        return Ok(());
    }
    let masks = subdir(&a.common.out, "masks")?;
    let reports = subdir(&a.common.out, "reports")?;
    let (w, h) = (a.width, a.height);
    let tol = geometry::RecistTolerance::default();
    let mut counts = String::from("scope,slice_id,lesion_id,q,c,ambiguous,agreement\n");
    let save_triplet = |stem: &str, q: &BinaryMask, c: &BinaryMask, amb: &BinaryMask| -> Result<()> {
        dataio::save_mask(&masks.join(format!("{stem}_q.pgm")), q)?;
        dataio::save_mask(&masks.join(format!("{stem}_c.pgm")), c)?;
        dataio::save_mask(&masks.join(format!("{stem}_a.pgm")), amb)?;
        Ok(())
    };

    let mut per_slice: Vec<(String, Vec<LesionMasks>)> = Vec::new();
    for ann in &rows {
        match ann.recist.validate(&tol) {
            Err(CoreError::InvalidAnnotation(msg)) => {
                warn!("slice {} lesion {}: {msg}", ann.slice_id, ann.lesion_id)
            }
            Err(e) => {
                return Err(e).with_context(|| format!("slice {} lesion {}", ann.slice_id, ann.lesion_id))
            }
            Ok(()) => {}
        }
        let lesion = LesionMasks::from_recist(&ann.recist, w, h)?;
        let regions = raster::region_algebra(&lesion.q, &lesion.c)?;
        let stem = format!("{}_{}", file_stem(&ann.slice_id), file_stem(&ann.lesion_id));
        save_triplet(&stem, &regions.q_clamped, &lesion.c, &regions.ambiguous)?;
        let _ = writeln!(
            counts,
            "lesion,{},{},{},{},{},{}",
            ann.slice_id,
            ann.lesion_id,
            regions.q_clamped.count(),
            lesion.c.count(),
            regions.ambiguous.count(),
            regions.agreement.count()
        );
        match per_slice.iter_mut().find(|(id, _)| *id == ann.slice_id) {
            Some((_, v)) => v.push(lesion),
            None => per_slice.push((ann.slice_id.clone(), vec![lesion])),
        }
    }
    for (id, lesions) in &per_slice {
        let labels = SliceLabels::from_lesions(lesions, w, h)?;
        save_triplet(&file_stem(id), &labels.q, &labels.c, &labels.ambiguous)?;
        let n = labels.counts();
        let _ = writeln!(counts, "slice,{id},,{},{},{},{}", n.q, n.c, n.ambiguous, n.agreement);
    }
    write(&reports.join("label_counts.csv"), counts)?;
    cfg.snapshot("gen-labels", &a.common.out)?;
    println!("wrote masks for {} lesions on {} slices", rows.len(), per_slice.len());
    Ok(())
}

/// Slices split into training and test sides. Stored split labels win;
/// otherwise the grouped split is computed from `split`.
fn load_split(dir: &Path, split: &SplitConfig) -> Result<(Vec<DatasetSlice>, Vec<DatasetSlice>)> {
    let slices = dataio::load_dataset(dir)?;
    if slices.is_empty() {
        return Err(CoreError::EmptyDataset.into());
    }
    let labelled = slices.iter().filter(|s| s.split.is_some()).count();
    if labelled == slices.len() {
        return Ok(slices.into_iter().partition(|s| s.split == Some(Split::Train)));
    }
    if labelled > 0 {
        bail!("manifest assigns a split to only {labelled} of {} slices", slices.len());
    }
    let records: Vec<ManifestRecord> = slices
        .iter()
        .map(|s| ManifestRecord {
            slice_id: s.id.clone(),
            source_id: s.source_id.clone(),
            image_path: PathBuf::new(),
            mask_path: None,
            split: None,
        })
        .collect();
    let (train_ids, _) = dataio::split(&records, split.ratio, split.seed)?;
    let train_ids: std::collections::BTreeSet<_> = train_ids.into_iter().collect();
    Ok(slices.into_iter().partition(|s| train_ids.contains(&s.id)))
}

fn train_samples(slices: &[DatasetSlice]) -> Result<Vec<TrainSample>> {
    let mut out = Vec::with_capacity(slices.len());
    for s in slices {
        if s.recists.is_empty() {
            warn!("training slice {} has no annotation; skipped", s.id);
            continue;
        }
        let (w, h) = s.image.dims();
        out.push(TrainSample {
            id: s.id.clone(),
            image: s.image.clone(),
            labels: SliceLabels::from_recists(&s.recists, w, h).with_context(|| format!("slice {}", s.id))?,
        });
    }
    Ok(out)
}

/// Test slices that carry a non-empty reference mask.
fn eval_samples(slices: &[DatasetSlice]) -> Vec<EvalSample> {
    slices
        .iter()
        .filter_map(|s| {
            let gt = s.gt.as_ref()?;
            (gt.count() > 0).then(|| EvalSample {
                id: s.id.clone(),
                image: s.image.clone(),
                gt: gt.clone(),
            })
        })
        .collect()
}

fn data_config(d: &DataArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(d.common.config.as_deref())?;
    d.split.apply(&mut cfg.split);
    Ok(cfg)
}

#[derive(Serialize)]
struct MaskQualityRow {
    slice_id: String,
    recall_q: f64,
    precision_q: f64,
    recall_c: f64,
    precision_c: f64,
    recall_ellipse: f64,
    precision_ellipse: f64,
}

#[derive(Serialize)]
struct MaskQualitySummary {
    n_slices: usize,
    recall_q: Aggregate,
    precision_q: Aggregate,
    recall_c: Aggregate,
    precision_c: Aggregate,
    recall_ellipse: Aggregate,
    precision_ellipse: Aggregate,
    /// Values measured on KiTS19, for orientation only.
    kits19_reference: [(&'static str, f64); 4],
}

pub fn validate_masks(a: &DataArgs) -> Result<()> {
    let cfg = data_config(a)?;
    let slices = dataio::load_dataset(&a.data)?;
    let reports = subdir(&a.common.out, "reports")?;
    let mut rows = Vec::new();
    for s in &slices {
        let Some(gt) = &s.gt else { continue };
        if s.recists.is_empty() || gt.count() == 0 {
            continue;
        }
        let (w, h) = gt.dims();
        let lab = SliceLabels::from_recists(&s.recists, w, h).with_context(|| format!("slice {}", s.id))?;
        let q = metrics::mask_quality(&lab.q, &lab.c, gt)?;
        let ell = labels::ellipse_union(&s.recists, w, h)?;
        rows.push(MaskQualityRow {
            slice_id: s.id.clone(),
            recall_q: q.recall_q,
            precision_q: q.precision_q,
            recall_c: q.recall_c,
            precision_c: q.precision_c,
            recall_ellipse: metrics::recall(&ell, gt)?,
            precision_ellipse: metrics::precision(&ell, gt)?,
        });
    }
    if rows.is_empty() {
        return Err(CoreError::EmptyDataset).context("no slice has both a reference mask and annotations");
    }
    let mut csv = String::from("slice_id,recall_q,precision_q,recall_c,precision_c,recall_ellipse,precision_ellipse\n");
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            r.slice_id, r.recall_q, r.precision_q, r.recall_c, r.precision_c, r.recall_ellipse, r.precision_ellipse
        );
    }
    let col = |f: fn(&MaskQualityRow) -> f64| Aggregate::of(&rows.iter().map(f).collect::<Vec<_>>());
    let summary = MaskQualitySummary {
        n_slices: rows.len(),
        recall_q: col(|r| r.recall_q),
        precision_q: col(|r| r.precision_q),
        recall_c: col(|r| r.recall_c),
        precision_c: col(|r| r.precision_c),
        recall_ellipse: col(|r| r.recall_ellipse),
        precision_ellipse: col(|r| r.precision_ellipse),
        kits19_reference: [
            ("recall_q", 0.715),
            ("precision_q", 0.990),
            ("recall_c", 0.982),
            ("precision_c", 0.802),
        ],
    };
    write(&reports.join("mask_quality.csv"), csv)?;
    write_json(&reports.join("mask_quality.json"), &summary)?;
    cfg.snapshot("validate-masks", &a.common.out)?;
    println!("slices: {}", summary.n_slices);
    println!("Q        recall {}  precision {}", summary.recall_q, summary.precision_q);
    println!("C        recall {}  precision {}", summary.recall_c, summary.precision_c);
    println!("ellipse  recall {}  precision {}", summary.recall_ellipse, summary.precision_ellipse);
    Ok(())
}

#[derive(Serialize)]
struct EvalSummary {
    threshold: f64,
    n_slices: usize,
    dice: Aggregate,
    jaccard: Aggregate,
    hd95: Aggregate,
    recall: Aggregate,
    precision: Aggregate,
    branch_dice: trainer::BranchDice,
}

fn evaluate(model: &SegModelPair, samples: &[EvalSample], threshold: f64) -> Result<(EvalReport, EvalSummary)> {
    if samples.is_empty() {
        return Err(CoreError::EmptyDataset).context("no test slice with a non-empty reference mask");
    }
    let mut rows = Vec::with_capacity(samples.len());
    for s in samples {
        let (_, mask) = trainer::predict(model, &s.image, threshold)?;
        rows.push(metrics::evaluate_slice(&s.id, &mask, &s.gt)?);
    }
    let report = EvalReport::from_rows(rows);
    let summary = EvalSummary {
        threshold,
        n_slices: report.n_slices,
        dice: report.dice,
        jaccard: report.jaccard,
        hd95: report.hd95,
        recall: report.recall,
        precision: report.precision,
        branch_dice: trainer::evaluate_branches(model, samples, threshold)?,
    };
    Ok((report, summary))
}

fn print_summary(s: &EvalSummary) {
    println!("slices: {}", s.n_slices);
    println!("dice {}  jaccard {}  hd95 {}", s.dice, s.jaccard, s.hd95);
    println!(
        "branch dice: q {:.4}  c {:.4}  ensemble {:.4}",
        s.branch_dice.q, s.branch_dice.c, s.branch_dice.ensemble
    );
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let mut cfg = data_config(&a.data)?;
    a.train.apply(&mut cfg.train);
    cfg.train.validate()?;
    let (train_slices, test_slices) = load_split(&a.data.data, &cfg.split)?;
    let train_set = train_samples(&train_slices)?;
    let val = eval_samples(&test_slices);
    let out = &a.data.common.out;
    let reports = subdir(out, "reports")?;
    let checkpoints = subdir(out, "checkpoints")?;
    cfg.snapshot("train", out)?;
    info!("training on {} slices, validating on {}", train_set.len(), val.len());

    let (model, history) = match trainer::train(&train_set, &val, &cfg.train) {
        Ok(r) => r,
        Err(CoreError::NonFiniteLoss(diag)) => {
            write_json(&reports.join("nonfinite.json"), &diag)?;
            return Err(CoreError::NonFiniteLoss(diag).into());
        }
        Err(e) => return Err(e.into()),
    };
    model.save(&checkpoints.join("model.ckpt"))?;
    write(&reports.join("history.csv"), history.to_csv())?;
    if val.is_empty() {
        warn!("no test slices with reference masks; final metrics skipped");
    } else {
        let (report, summary) = evaluate(&model, &val, 0.5)?;
        write(&reports.join("test_metrics.csv"), report.to_csv())?;
        write_json(&reports.join("metrics.json"), &summary)?;
        print_summary(&summary);
    }
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let cfg = data_config(&a.data)?;
    if !(0.0..=1.0).contains(&a.threshold) {
        warn!("threshold {} lies outside [0, 1]", a.threshold);
    }
    let model = SegModelPair::load(&a.checkpoint)?;
    let (_, test_slices) = load_split(&a.data.data, &cfg.split)?;
    let (report, summary) = evaluate(&model, &eval_samples(&test_slices), a.threshold)?;
    let reports = subdir(&a.data.common.out, "reports")?;
    write(&reports.join("eval.csv"), report.to_csv())?;
    write_json(&reports.join("eval.json"), &summary)?;
    cfg.snapshot("eval", &a.data.common.out)?;
    print_summary(&summary);
    Ok(())
}

fn corpus(a: &MultiSeedArgs) -> Result<(RunConfig, Corpus, Vec<u64>)> {
    let mut cfg = data_config(&a.data)?;
    a.train.apply(&mut cfg.train);
    cfg.train.validate()?;
    let seeds = seeds_from(cfg.train.seed, a.seeds)?;
    let (train_slices, test_slices) = load_split(&a.data.data, &cfg.split)?;
    let corpus = Corpus {
        train: train_samples(&train_slices)?,
        test: eval_samples(&test_slices),
    };
    if corpus.test.is_empty() {
        return Err(CoreError::EmptyDataset).context("no test slice with a non-empty reference mask");
    }
    Ok((cfg, corpus, seeds))
}

pub fn ablate(a: &MultiSeedArgs) -> Result<()> {
    let (cfg, corpus, seeds) = corpus(a)?;
    let reports = subdir(&a.data.common.out, "reports")?;
    cfg.snapshot("ablate", &a.data.common.out)?;
    let table = experiment::ablate(&corpus, &cfg.train, &seeds)?;
    write(&reports.join("ablation.csv"), table.to_csv())?;
    write(&reports.join("ablation.md"), table.to_markdown())?;
    write_json(&reports.join("ablation.json"), &table)?;
    print!("{}", table.to_markdown());
    Ok(())
}

pub fn sweep_lambda(a: &SweepArgs) -> Result<()> {
    if let Some(bad) = a.lambdas.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
        return Err(UsageError(format!("lambda {bad} must be finite and non-negative")).into());
    }
    let (cfg, corpus, seeds) = corpus(&a.multi)?;
    let out = &a.multi.data.common.out;
    let reports = subdir(out, "reports")?;
    cfg.snapshot("sweep-lambda", out)?;
    let table = experiment::sweep_lambda(&corpus, &cfg.train, &a.lambdas, &seeds)?;
    write(&reports.join("sweep_lambda.csv"), table.to_csv())?;
    write_json(&reports.join("sweep_lambda.json"), &table)?;
    print!("{}", table.to_csv());
    println!("ensemble dice spread (max - min): {:.4}", table.ensemble_spread());
    Ok(())
}

pub fn export_overlays(a: &OverlayArgs) -> Result<()> {
    let cfg = data_config(&a.data)?;
    let model = SegModelPair::load(&a.checkpoint)?;
    let (_, test_slices) = load_split(&a.data.data, &cfg.split)?;
    let overlays = subdir(&a.data.common.out, "overlays")?;
    let mut n = 0;
    for s in test_slices.iter().take(a.limit.unwrap_or(usize::MAX)) {
        let (_, pred) = trainer::predict(&model, &s.image, a.threshold)?;
        let empty;
        let gt = match &s.gt {
            Some(g) => g,
            None => {
                empty = BinaryMask::filled(s.image.width(), s.image.height(), false);
                &empty
            }
        };
        dataio::save_overlay(&overlays.join(format!("{}.png", file_stem(&s.id))), &s.image, gt, &pred, a.scale)?;
        n += 1;
    }
    cfg.snapshot("export-overlays", &a.data.common.out)?;
    println!("wrote {n} overlays to {}", overlays.display());
    Ok(())
}
