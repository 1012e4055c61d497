//! On-disk layout: PGM pairs plus a CSV manifest, and the CSV formats for
//! features, score matrices and probe truth.

use std::collections::HashMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Dataset, GroundTruth, HarnessError, Sample, Spectrum};
use crate::features::FeatureVector;
use crate::fusion::{Polarity, ScoreMatrix};
use crate::image::{load_image, load_mask, save_image, save_mask, BitDepth, GrayImage};
use crate::regions::RegionKind;
use crate::segmentation::SimilarityTransform;

/// One manifest line. Paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub user_id: u32,
    pub session: u32,
    pub sample: u32,
    pub vis_path: String,
    pub th_path: String,
    /// Ground-truth hand mask in the TH frame.
    #[serde(default)]
    pub mask_path: Option<String>,
    #[serde(default)]
    pub transform_path: Option<String>,
    #[serde(default)]
    pub vis_mask_path: Option<String>,
    #[serde(default)]
    pub labels_path: Option<String>,
    #[serde(default)]
    pub th_labels_path: Option<String>,
    /// Five 0/1 digits, thumb first.
    #[serde(default)]
    pub cold_fingers: Option<String>,
}

fn stem(s: &Sample) -> String {
    format!("u{:03}_s{}_{}", s.user_id, s.session, s.sample)
}

/// Writes every sample (VIS 8-bit, TH 16-bit) and `manifest.csv` into `dir`.
pub fn save_dataset(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<PathBuf, HarnessError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let manifest = dir.join("manifest.csv");
    let mut w = csv::Writer::from_path(&manifest)?;
    for s in dataset.samples() {
        let base = stem(s);
        let vis_path = format!("{base}_vis.pgm");
        let th_path = format!("{base}_th.pgm");
        save_image(&s.vis, dir.join(&vis_path), BitDepth::Eight)?;
        save_image(&s.th, dir.join(&th_path), BitDepth::Sixteen)?;
        let mut row = ManifestRow {
            user_id: s.user_id,
            session: s.session,
            sample: s.sample,
            vis_path,
            th_path,
            mask_path: None,
            transform_path: None,
            vis_mask_path: None,
            labels_path: None,
            th_labels_path: None,
            cold_fingers: None,
        };
        if let Some(t) = &s.transform {
            let p = format!("{base}_transform.txt");
            fs::write(dir.join(&p), t.to_string())?;
            row.transform_path = Some(p);
        }
        if let Some(truth) = &s.truth {
            let mask = format!("{base}_mask.pgm");
            let vis_mask = format!("{base}_vismask.pgm");
            let labels = format!("{base}_labels.pgm");
            let th_labels = format!("{base}_thlabels.pgm");
            save_mask(&truth.th_mask, dir.join(&mask))?;
            save_mask(&truth.vis_mask, dir.join(&vis_mask))?;
            save_labels(
                &truth.labels,
                truth.vis_mask.width(),
                truth.vis_mask.height(),
                &dir.join(&labels),
            )?;
            save_labels(
                &truth.th_labels,
                truth.th_mask.width(),
                truth.th_mask.height(),
                &dir.join(&th_labels),
            )?;
            row.mask_path = Some(mask);
            row.vis_mask_path = Some(vis_mask);
            row.labels_path = Some(labels);
            row.th_labels_path = Some(th_labels);
            row.cold_fingers = Some(
                truth
                    .cold_fingers
                    .iter()
                    .map(|&c| if c { '1' } else { '0' })
                    .collect(),
            );
        }
        w.serialize(&row)?;
    }
    w.flush()?;
    Ok(manifest)
}

pub fn load_dataset(manifest: impl AsRef<Path>) -> Result<Dataset, HarnessError> {
    let manifest = manifest.as_ref();
    let dir = manifest.parent().unwrap_or_else(|| Path::new("."));
    let mut reader = csv::Reader::from_path(manifest)?;
    let mut samples = Vec::new();
    for row in reader.deserialize::<ManifestRow>() {
        let row = row?;
        let resolve = |p: &str| dir.join(p);
        let vis = load_image(resolve(&row.vis_path), BitDepth::Eight)?;
        let th = load_image(resolve(&row.th_path), BitDepth::Sixteen)?;
        let transform = match &row.transform_path {
            Some(p) => {
                let text = fs::read_to_string(resolve(p))?;
                Some(
                    text.parse::<SimilarityTransform>()
                        .map_err(|e| HarnessError::Manifest(format!("{p}: {e}")))?,
                )
            }
            None => None,
        };
        let truth = match (
            &row.mask_path,
            &row.vis_mask_path,
            &row.labels_path,
            &row.th_labels_path,
        ) {
            (Some(m), Some(v), Some(l), Some(tl)) => {
                let labels = load_labels(&resolve(l))?;
                let th_labels = load_labels(&resolve(tl))?;
                let mut cold_fingers = [false; 5];
                if let Some(c) = &row.cold_fingers {
                    for (slot, ch) in cold_fingers.iter_mut().zip(c.chars()) {
                        *slot = ch == '1';
                    }
                }
                Some(GroundTruth {
                    vis_mask: load_mask(resolve(v))?,
                    th_mask: load_mask(resolve(m))?,
                    labels,
                    th_labels,
                    cold_fingers,
                })
            }
            _ => None,
        };
        if vis.width() != th.width() || vis.height() != th.height() {
            return Err(HarnessError::Manifest(format!(
                "{}: VIS {}x{} and TH {}x{} differ",
                row.vis_path,
                vis.width(),
                vis.height(),
                th.width(),
                th.height()
            )));
        }
        samples.push(Sample {
            user_id: row.user_id,
            session: row.session,
            sample: row.sample,
            vis,
            th,
            transform,
            truth,
        });
    }
    if samples.is_empty() {
        return Err(HarnessError::Manifest(format!(
            "{} lists no samples",
            manifest.display()
        )));
    }
    Ok(Dataset::new(samples))
}

fn save_labels(
    labels: &[u8],
    width: usize,
    height: usize,
    path: &Path,
) -> Result<(), HarnessError> {
    let img = GrayImage::new(
        width,
        height,
        labels.iter().map(|&l| l as f64 / 255.0).collect(),
    )?;
    Ok(save_image(&img, path, BitDepth::Eight)?)
}

fn load_labels(path: &Path) -> Result<Vec<u8>, HarnessError> {
    Ok(load_image(path, BitDepth::Eight)?
        .data()
        .iter()
        .map(|&x| (x * 255.0).round() as u8)
        .collect())
}

/// One extracted feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub user_id: u32,
    pub session: u32,
    pub sample: u32,
    pub region: RegionKind,
    pub spectrum: Spectrum,
    pub features: FeatureVector,
}

pub fn write_feature_csv<W: Write>(out: W, rows: &[FeatureRow]) -> Result<(), HarnessError> {
    let k = rows.first().map_or(0, |r| r.features.len());
    if rows.iter().any(|r| r.features.len() != k) {
        return Err(HarnessError::Csv(
            "feature rows have different lengths".into(),
        ));
    }
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = ["user_id", "session", "sample", "region", "spectrum"]
        .map(String::from)
        .to_vec();
    header.extend((1..=k).map(|i| format!("v{i}")));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.user_id.to_string(),
            r.session.to_string(),
            r.sample.to_string(),
            r.region.to_string(),
            r.spectrum.to_string(),
        ];
        rec.extend(r.features.values().iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_feature_csv<R: Read>(input: R) -> Result<Vec<FeatureRow>, HarnessError> {
    let mut reader = csv::Reader::from_reader(input);
    let headers = reader.headers()?.clone();
    let fixed = ["user_id", "session", "sample", "region", "spectrum"];
    if headers.len() < fixed.len() + 1 || fixed.iter().zip(headers.iter()).any(|(a, b)| *a != b) {
        return Err(HarnessError::Csv(format!(
            "feature header must start with {}",
            fixed.join(",")
        )));
    }
    let mut rows = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| HarnessError::Csv(format!("row {}: bad {what}", line + 2));
        let int = |i: usize, what: &str| rec[i].trim().parse::<u32>().map_err(|_| bad(what));
        let values = (fixed.len()..rec.len())
            .map(|i| {
                rec[i]
                    .trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| bad("value"))
            })
            .collect::<Result<Vec<f64>, _>>()?;
        rows.push(FeatureRow {
            user_id: int(0, "user_id")?,
            session: int(1, "session")?,
            sample: int(2, "sample")?,
            region: rec[3].trim().parse().map_err(|_| bad("region"))?,
            spectrum: rec[4].trim().parse().map_err(|_| bad("spectrum"))?,
            features: FeatureVector::from(values),
        });
    }
    Ok(rows)
}

#[derive(Debug, Serialize, Deserialize)]
struct ScoreRecord {
    probe_id: String,
    class_id: u32,
    score: f64,
}

/// Long format: one `(probe_id, class_id, score)` line per entry.
pub fn write_score_csv<W: Write>(out: W, m: &ScoreMatrix) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    for (p, probe_id) in m.probe_ids().iter().enumerate() {
        for (c, &class_id) in m.class_ids().iter().enumerate() {
            w.serialize(ScoreRecord {
                probe_id: probe_id.clone(),
                class_id,
                score: m.get(p, c),
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Probes and classes keep their first-appearance order; the grid must be complete.
pub fn read_score_csv<R: Read>(input: R, polarity: Polarity) -> Result<ScoreMatrix, HarnessError> {
    let mut reader = csv::Reader::from_reader(input);
    let mut probes: Vec<String> = Vec::new();
    let mut classes: Vec<u32> = Vec::new();
    let mut probe_index = HashMap::new();
    let mut class_index = HashMap::new();
    let mut entries = Vec::new();
    for rec in reader.deserialize::<ScoreRecord>() {
        let rec = rec?;
        let p = *probe_index.entry(rec.probe_id.clone()).or_insert_with(|| {
            probes.push(rec.probe_id.clone());
            probes.len() - 1
        });
        let c = *class_index.entry(rec.class_id).or_insert_with(|| {
            classes.push(rec.class_id);
            classes.len() - 1
        });
        entries.push((p, c, rec.score));
    }
    let (np, nc) = (probes.len(), classes.len());
    let mut scores = vec![f64::NAN; np * nc];
    for (p, c, s) in entries {
        if !scores[p * nc + c].is_nan() {
            return Err(HarnessError::Csv(format!(
                "duplicate score for probe {} class {}",
                probes[p], classes[c]
            )));
        }
        scores[p * nc + c] = s;
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(HarnessError::Csv(format!(
            "missing score for probe {} class {}",
            probes[i / nc],
            classes[i % nc]
        )));
    }
    Ok(ScoreMatrix::new(probes, classes, scores, polarity)?)
}

/// Identity and test index of each probe.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthRow {
    pub probe_id: String,
    pub user_id: u32,
    pub test: u32,
}

pub fn write_truth_csv<W: Write>(out: W, rows: &[TruthRow]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_truth_csv<R: Read>(input: R) -> Result<Vec<TruthRow>, HarnessError> {
    let mut reader = csv::Reader::from_reader(input);
    let rows = reader.deserialize().collect::<Result<Vec<TruthRow>, _>>()?;
    Ok(rows)
}
