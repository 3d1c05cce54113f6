//! Files on disk: grayscale images and masks, annotation CSV, line-delimited
//! manifest, grouped train/test split and the dataset directory layout.
//!
//! A dataset directory holds `images/<id>.png` (16-bit gray), optional
//! `masks/<id>.pgm` (8-bit, 0/255), `annotations.csv` and
//! `manifest.jsonl`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ColorType, DynamicImage, ImageBuffer, ImageFormat, Luma};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point2, RecistPair};
use crate::grid::{BinaryMask, Grid, SliceImage};

/// Soft-tissue CT window, in HU.
pub const HU_WINDOW: (f64, f64) = (0.0, 400.0);

pub const DEFAULT_SPLIT_RATIO: f64 = 0.8;

/// `clamp((raw − lo) / (hi − lo), 0, 1)` per pixel.
pub fn window_hu(raw: &Grid<f64>, lo: f64, hi: f64) -> Result<SliceImage> {
    if !(hi > lo) {
        return Err(Error::InvalidConfig(format!("empty HU window [{lo}, {hi}]")));
    }
    Ok(raw.map(|&v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0)))
}

fn encode_pgm(path: &Path, width: usize, height: usize, data: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = PnmEncoder::new(BufWriter::new(file)).with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary));
    enc.encode(data, width as u32, height as u32, ColorType::L8)
        .map_err(|e| Error::Format {
            path: path.into(),
            msg: e.to_string(),
        })
}

fn decode(path: &Path) -> Result<DynamicImage> {
    let fmt = |msg: String| Error::Format {
        path: path.into(),
        msg,
    };
    let reader = image::io::Reader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    reader.decode().map_err(|e| fmt(e.to_string()))
}

/// Writes `image` as a 16-bit grayscale PNG, `round(v · 65535)`.
pub fn save_image(path: &Path, image: &SliceImage) -> Result<()> {
    let data: Vec<u16> = image
        .as_slice()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
        .collect();
    let buf: ImageBuffer<Luma<u16>, _> = ImageBuffer::from_raw(image.width() as u32, image.height() as u32, data)
        .expect("buffer matches dims");
    buf.save_with_format(path, ImageFormat::Png).map_err(|e| Error::Format {
        path: path.into(),
        msg: e.to_string(),
    })
}

/// Reads an 8- or 16-bit grayscale PGM or PNG and scales it to `[0, 1]`.
pub fn load_image(path: &Path) -> Result<SliceImage> {
    let img = decode(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = match img {
        DynamicImage::ImageLuma8(b) => b.into_raw().into_iter().map(|v| f64::from(v) / 255.0).collect(),
        DynamicImage::ImageLuma16(b) => b.into_raw().into_iter().map(|v| f64::from(v) / 65535.0).collect(),
        other => {
            return Err(Error::Format {
                path: path.into(),
                msg: format!("expected a graymap, found {:?}", other.color()),
            })
        }
    };
    Grid::from_vec(w, h, data)
}

/// Writes `mask` as an 8-bit graymap with values 0 and 255.
pub fn save_mask(path: &Path, mask: &BinaryMask) -> Result<()> {
    let data: Vec<u8> = mask.as_slice().iter().map(|&b| if b { 255 } else { 0 }).collect();
    encode_pgm(path, mask.width(), mask.height(), &data)
}

/// Reads a graymap mask; any non-zero sample is foreground.
pub fn load_mask(path: &Path) -> Result<BinaryMask> {
    let img = decode(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<bool> = match img {
        DynamicImage::ImageLuma8(b) => b.into_raw().into_iter().map(|v| v != 0).collect(),
        DynamicImage::ImageLuma16(b) => b.into_raw().into_iter().map(|v| v != 0).collect(),
        other => {
            return Err(Error::Format {
                path: path.into(),
                msg: format!("expected a graymap mask, found {:?}", other.color()),
            })
        }
    };
    Grid::from_vec(w, h, data)
}

pub const ANNOTATION_COLUMNS: [&str; 10] = [
    "slice_id", "lesion_id", "maj_ax", "maj_ay", "maj_bx", "maj_by", "min_ax", "min_ay", "min_bx", "min_by",
];

#[derive(Clone, Debug, PartialEq)]
pub struct Annotation {
    pub slice_id: String,
    pub lesion_id: String,
    pub recist: RecistPair,
}

/// Parses annotation CSV text. `path` only labels errors.
pub fn parse_annotations(reader: impl Read, path: &Path) -> Result<Vec<Annotation>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse {
            path: path.into(),
            line: 1,
            msg: e.to_string(),
        })?
        .clone();
    let mut idx = [0usize; 10];
    for (k, col) in ANNOTATION_COLUMNS.iter().enumerate() {
        idx[k] = headers
            .iter()
            .position(|h| h == *col)
            .ok_or_else(|| Error::Schema {
                path: path.into(),
                column: col.to_string(),
            })?;
    }
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse {
            path: path.into(),
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let parse_err = |msg: String| Error::Parse {
            path: path.into(),
            line,
            msg,
        };
        let mut v = [0.0f64; 8];
        for (k, slot) in v.iter_mut().enumerate() {
            let col = ANNOTATION_COLUMNS[k + 2];
            let raw = record.get(idx[k + 2]).unwrap_or("");
            *slot = raw
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| parse_err(format!("column `{col}`: `{raw}` is not a finite number")))?;
        }
        let slice_id = record.get(idx[0]).unwrap_or("").to_string();
        if slice_id.is_empty() {
            return Err(parse_err("empty slice_id".into()));
        }
        out.push(Annotation {
            slice_id,
            lesion_id: record.get(idx[1]).unwrap_or("").to_string(),
            recist: RecistPair::new(
                Point2::new(v[0], v[1]),
                Point2::new(v[2], v[3]),
                Point2::new(v[4], v[5]),
                Point2::new(v[6], v[7]),
            ),
        });
    }
    Ok(out)
}

pub fn read_annotations(path: &Path) -> Result<Vec<Annotation>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(BufReader::new(file), path)
}

pub fn write_annotations(path: &Path, rows: &[Annotation]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let csv_err = |e: csv::Error| Error::Format {
        path: path.into(),
        msg: e.to_string(),
    };
    w.write_record(ANNOTATION_COLUMNS).map_err(csv_err)?;
    for a in rows {
        let r = &a.recist;
        let mut rec = vec![a.slice_id.clone(), a.lesion_id.clone()];
        for p in r.endpoints() {
            // shortest representation that parses back to the same f64
            rec.push(format!("{}", p.x));
            rec.push(format!("{}", p.y));
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Annotations grouped by slice, in slice-id order.
pub fn group_by_slice(rows: &[Annotation]) -> BTreeMap<String, Vec<RecistPair>> {
    let mut map: BTreeMap<String, Vec<RecistPair>> = BTreeMap::new();
    for a in rows {
        map.entry(a.slice_id.clone()).or_default().push(a.recist);
    }
    map
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One line of `manifest.jsonl`. Paths are relative to the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub slice_id: String,
    /// Patient or volume the slice came from; splits never separate one.
    pub source_id: String,
    pub image_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let mut records = Vec::new();
        let mut seen = BTreeSet::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |msg: String| Error::Parse {
                path: path.into(),
                line: i as u64 + 1,
                msg,
            };
            let rec: ManifestRecord = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
            if !seen.insert(rec.slice_id.clone()) {
                return Err(parse_err(format!("duplicate slice_id `{}`", rec.slice_id)));
            }
            for p in std::iter::once(&rec.image_path).chain(rec.mask_path.as_ref()) {
                if !root.join(p).is_file() {
                    return Err(parse_err(format!("missing file {}", p.display())));
                }
            }
            records.push(rec);
        }
        let m = Self { root, records };
        m.check_splits(path)?;
        Ok(m)
    }

    /// Rejects a source whose slices sit in different splits.
    fn check_splits(&self, path: &Path) -> Result<()> {
        let mut by_source: BTreeMap<&str, Option<Split>> = BTreeMap::new();
        for r in &self.records {
            let prev = by_source.entry(&r.source_id).or_insert(r.split);
            if *prev != r.split {
                return Err(Error::Format {
                    path: path.into(),
                    msg: format!("source `{}` appears in more than one split", r.source_id),
                });
            }
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for r in &self.records {
            let line = serde_json::to_string(r).expect("manifest record serializes");
            writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.root.join(p)
    }
}

/// Shuffles the distinct sources with `seed` and sends the first
/// `round(ratio · n_sources)` to the training side. Returns slice ids.
pub fn split(records: &[ManifestRecord], ratio: f64, seed: u64) -> Result<(Vec<String>, Vec<String>)> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::InvalidConfig(format!("split ratio {ratio} outside [0, 1]")));
    }
    let mut sources: Vec<&str> = records
        .iter()
        .map(|r| r.source_id.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    sources.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (ratio * sources.len() as f64).round() as usize;
    let train_sources: BTreeSet<&str> = sources[..n_train].iter().copied().collect();
    if n_train == sources.len() {
        log::warn!("split ratio {ratio} leaves the test set empty");
    }
    let (train, test): (Vec<_>, Vec<_>) = records
        .iter()
        .partition(|r| train_sources.contains(r.source_id.as_str()));
    Ok((
        train.into_iter().map(|r| r.slice_id.clone()).collect(),
        test.into_iter().map(|r| r.slice_id.clone()).collect(),
    ))
}

/// A slice loaded from a dataset directory.
#[derive(Clone, Debug)]
pub struct DatasetSlice {
    pub id: String,
    pub source_id: String,
    pub image: SliceImage,
    pub gt: Option<BinaryMask>,
    pub recists: Vec<RecistPair>,
    pub split: Option<Split>,
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const ANNOTATIONS_FILE: &str = "annotations.csv";

/// Writes slices in the dataset layout. Each slice is its own source;
/// splits are assigned with [`split`].
pub fn write_dataset(dir: &Path, slices: &[DatasetSlice]) -> Result<()> {
    for sub in ["images", "masks"] {
        std::fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(dir.join(sub), e))?;
    }
    let mut records = Vec::with_capacity(slices.len());
    let mut annotations = Vec::new();
    for s in slices {
        let image_path = PathBuf::from("images").join(format!("{}.png", s.id));
        save_image(&dir.join(&image_path), &s.image)?;
        let mask_path = match &s.gt {
            Some(gt) => {
                let p = PathBuf::from("masks").join(format!("{}.pgm", s.id));
                save_mask(&dir.join(&p), gt)?;
                Some(p)
            }
            None => None,
        };
        records.push(ManifestRecord {
            slice_id: s.id.clone(),
            source_id: s.source_id.clone(),
            image_path,
            mask_path,
            split: s.split,
        });
        annotations.extend(s.recists.iter().enumerate().map(|(k, r)| Annotation {
            slice_id: s.id.clone(),
            lesion_id: k.to_string(),
            recist: *r,
        }));
    }
    Manifest {
        root: dir.to_path_buf(),
        records,
    }
    .write(&dir.join(MANIFEST_FILE))?;
    write_annotations(&dir.join(ANNOTATIONS_FILE), &annotations)
}

/// Loads every slice listed in the manifest, in manifest order.
pub fn load_dataset(dir: &Path) -> Result<Vec<DatasetSlice>> {
    let manifest = Manifest::read(&dir.join(MANIFEST_FILE))?;
    let ann_path = dir.join(ANNOTATIONS_FILE);
    let mut by_slice = if ann_path.exists() {
        group_by_slice(&read_annotations(&ann_path)?)
    } else {
        BTreeMap::new()
    };
    let mut out = Vec::with_capacity(manifest.records.len());
    for r in &manifest.records {
        let image = load_image(&manifest.resolve(&r.image_path))?;
        let gt = match &r.mask_path {
            Some(p) => {
                let m = load_mask(&manifest.resolve(p))?;
                image.check_same_dims(&m)?;
                Some(m)
            }
            None => None,
        };
        out.push(DatasetSlice {
            id: r.slice_id.clone(),
            source_id: r.source_id.clone(),
            image,
            gt,
            recists: by_slice.remove(&r.slice_id).unwrap_or_default(),
            split: r.split,
        });
    }
    if let Some(orphan) = by_slice.keys().next() {
        log::warn!("annotations for unknown slice `{orphan}` ignored");
    }
    Ok(out)
}

/// Writes an RGB PNG of `image` upscaled by `scale`, with the boundary of
/// `gt` in green and of `pred` in red (yellow where both coincide).
pub fn save_overlay(path: &Path, image: &SliceImage, gt: &BinaryMask, pred: &BinaryMask, scale: usize) -> Result<()> {
    image.check_same_dims(gt)?;
    image.check_same_dims(pred)?;
    let scale = scale.max(1);
    let edge = |m: &BinaryMask| {
        let mut e = BinaryMask::filled(m.width(), m.height(), false);
        for (r, c) in crate::raster::boundary_pixels(m) {
            e.set(r, c, true);
        }
        e
    };
    let (eg, ep) = (edge(gt), edge(pred));
    let (w, h) = image.dims();
    let out = image::RgbImage::from_fn((w * scale) as u32, (h * scale) as u32, |x, y| {
        let (r, c) = (y as usize / scale, x as usize / scale);
        let v = (image.get(r, c).clamp(0.0, 1.0) * 255.0).round() as u8;
        match (*eg.get(r, c), *ep.get(r, c)) {
            (true, true) => image::Rgb([255, 255, 0]),
            (true, false) => image::Rgb([0, 255, 0]),
            (false, true) => image::Rgb([255, 0, 0]),
            (false, false) => image::Rgb([v, v, v]),
        }
    });
    out.save_with_format(path, image::ImageFormat::Png).map_err(|e| Error::Format {
        path: path.into(),
        msg: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hu_window_examples() {
        let raw = Grid::from_vec(4, 1, vec![200.0, -100.0, 1000.0, 400.0]).unwrap();
        let w = window_hu(&raw, HU_WINDOW.0, HU_WINDOW.1).unwrap();
        assert_eq!(w.as_slice(), &[0.5, 0.0, 1.0, 1.0]);
        assert!(window_hu(&raw, 5.0, 5.0).is_err());
    }

    #[test]
    fn csv_row_parses() {
        let text = "slice_id,lesion_id,maj_ax,maj_ay,maj_bx,maj_by,min_ax,min_ay,min_bx,min_by\ns1,0,0,0,4,0,2,-2,2,2\n";
        let rows = parse_annotations(text.as_bytes(), Path::new("a.csv")).unwrap();
        assert_eq!(rows.len(), 1);
        let r = rows[0].recist;
        assert_eq!((r.major_a, r.major_b), (Point2::new(0., 0.), Point2::new(4., 0.)));
        assert_eq!((r.minor_a, r.minor_b), (Point2::new(2., -2.), Point2::new(2., 2.)));
    }

    #[test]
    fn missing_column_names_it() {
        let text = "slice_id,lesion_id,maj_ax,maj_ay,maj_bx,maj_by,min_ax,min_ay,min_bx\ns1,0,0,0,4,0,2,-2,2\n";
        match parse_annotations(text.as_bytes(), Path::new("a.csv")) {
            Err(Error::Schema { column, .. }) => assert_eq!(column, "min_by"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_number_reports_line() {
        let text = "slice_id,lesion_id,maj_ax,maj_ay,maj_bx,maj_by,min_ax,min_ay,min_bx,min_by\ns1,0,0,0,4,0,2,-2,2,2\ns1,1,0,0,x,0,2,-2,2,2\n";
        match parse_annotations(text.as_bytes(), Path::new("a.csv")) {
            Err(Error::Parse { line, msg, .. }) => {
                assert_eq!(line, 3);
                assert!(msg.contains("maj_bx"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    fn records(n: usize, per_source: usize) -> Vec<ManifestRecord> {
        (0..n)
            .map(|i| ManifestRecord {
                slice_id: format!("s{i}"),
                source_id: format!("src{}", i / per_source),
                image_path: PathBuf::from(format!("images/s{i}.pgm")),
                mask_path: None,
                split: None,
            })
            .collect()
    }

    #[test]
    fn split_sizes_and_determinism() {
        let recs = records(10, 1);
        let (tr, te) = split(&recs, 0.8, 7).unwrap();
        assert_eq!((tr.len(), te.len()), (8, 2));
        assert_eq!(split(&recs, 0.8, 7).unwrap(), (tr, te));
        let (tr, te) = split(&recs, 1.0, 7).unwrap();
        assert_eq!((tr.len(), te.len()), (10, 0));
    }

    #[test]
    fn split_keeps_sources_together() {
        let recs = records(30, 3);
        let (tr, te) = split(&recs, 0.8, 1).unwrap();
        let src = |id: &String| recs.iter().find(|r| &r.slice_id == id).unwrap().source_id.clone();
        let a: BTreeSet<_> = tr.iter().map(src).collect();
        let b: BTreeSet<_> = te.iter().map(src).collect();
        assert!(a.is_disjoint(&b));
        assert_eq!((a.len(), b.len()), (8, 2));
    }
}
