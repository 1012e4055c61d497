//! Train on the first samples of every user, then score each held-out test
//! sample separately and report per-test identification rates.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Dataset, HarnessError, Sample, TruthRow};
use crate::bdm::{identify, train_bdm_with, BdmConfig, Gallery};
use crate::features::{extract_features, FeatureVector, ScanOrder};
use crate::fusion::{
    alpha_sweep, fuse_systems, identification_rate, normalize_scores, FusionRule, Normalization,
    Polarity, ScoreMatrix,
};
use crate::image::{apply_mask, BinaryMask, GrayImage};
use crate::par::{self, Execution};
use crate::regions::{extract_region_with, normalize_hand_with, RegionConfig, RegionKind};
use crate::segmentation::{
    apply_similarity, register_masks, segment_visible, RegistrationConfig, SegmentConfig,
    SimilarityTransform,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spectrum {
    Vis,
    Th,
}

impl Spectrum {
    pub fn as_str(self) -> &'static str {
        match self {
            Spectrum::Vis => "vis",
            Spectrum::Th => "th",
        }
    }
}

impl fmt::Display for Spectrum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Spectrum {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "vis" => Ok(Spectrum::Vis),
            "th" => Ok(Spectrum::Th),
            other => Err(HarnessError::Config(format!("unknown spectrum {other:?}"))),
        }
    }
}

/// Where the VIS to TH mapping for thermal segmentation comes from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformSource {
    /// The per-sample transform recorded with the data.
    #[default]
    Calibration,
    /// Simplex registration of the VIS mask onto the TH frame.
    Register,
}

/// A VIS + TH fusion row of the report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionSpec {
    #[serde(flatten)]
    pub rule: FusionRule,
    #[serde(default)]
    pub normalization: Normalization,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub regions: Vec<RegionKind>,
    pub spectra: Vec<Spectrum>,
    pub feature_lengths: Vec<usize>,
    pub bdm: BdmConfig,
    pub fusion: Vec<FusionSpec>,
    pub scan_order: ScanOrder,
    pub segmentation: SegmentConfig,
    pub region: RegionConfig,
    pub transform_source: TransformSource,
    pub registration: RegistrationConfig,
    pub train_samples: usize,
    pub test_samples: usize,
    pub execution: Execution,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            regions: vec![RegionKind::WholeHand],
            spectra: vec![Spectrum::Vis, Spectrum::Th],
            feature_lengths: vec![100],
            bdm: BdmConfig::default(),
            fusion: Vec::new(),
            scan_order: ScanOrder::Zigzag,
            segmentation: SegmentConfig::default(),
            region: RegionConfig::default(),
            transform_source: TransformSource::Calibration,
            registration: RegistrationConfig::default(),
            train_samples: 5,
            test_samples: 5,
            execution: Execution::default(),
        }
    }
}

impl EvaluationConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.into()));
        if self.regions.is_empty() || self.feature_lengths.is_empty() {
            return bad("regions and feature_lengths must be non-empty");
        }
        if self.spectra.is_empty() && self.fusion.is_empty() {
            return bad("nothing to evaluate: no spectra and no fusion rules");
        }
        if self.feature_lengths.contains(&0) {
            return bad("feature lengths must be positive");
        }
        if self.train_samples < 2 || self.test_samples == 0 {
            return bad("need at least 2 training samples and 1 test sample per user");
        }
        for f in &self.fusion {
            if let FusionRule::Weighted(a) = f.rule {
                if !(0.0..=1.0).contains(&a) {
                    return Err(HarnessError::Config(format!(
                        "fusion alpha {a} outside [0, 1]"
                    )));
                }
            }
        }
        Ok(())
    }

    fn needed_spectra(&self) -> Vec<Spectrum> {
        let mut s = self.spectra.clone();
        if !self.fusion.is_empty() {
            s.extend([Spectrum::Vis, Spectrum::Th]);
        }
        s.sort();
        s.dedup();
        s
    }
}

/// One report line: per-test rates (percent) with mean and population std.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub region: RegionKind,
    /// `vis`, `th` or `vis+th`.
    pub spectrum: String,
    /// `bdm` for single-spectrum rows, the fusion rule otherwise.
    pub rule: String,
    pub normalization: Normalization,
    pub feature_length: usize,
    /// Selected component count (`vis+th` for fused rows).
    pub selected: String,
    pub sigma_threshold: f64,
    pub rates: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl ReportRow {
    fn new(
        region: RegionKind,
        spectrum: String,
        rule: String,
        normalization: Normalization,
        feature_length: usize,
        selected: String,
        sigma_threshold: f64,
        rates: Vec<f64>,
    ) -> Self {
        let (mean, std) = mean_std(&rates);
        Self {
            region,
            spectrum,
            rule,
            normalization,
            feature_length,
            selected,
            sigma_threshold,
            rates,
            mean,
            std,
        }
    }
}

/// Arithmetic mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Raw BDM scores of one single-spectrum cell, one matrix per test.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    pub region: RegionKind,
    pub spectrum: Spectrum,
    pub feature_length: usize,
    pub tests: Vec<ScoreMatrix>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub rows: Vec<ReportRow>,
    pub scores: Vec<ScoreSet>,
    pub truth: Vec<TruthRow>,
}

/// Features of one sample for several regions, truncated to `max_len`.
pub fn extract_sample_features(
    sample: &Sample,
    spectrum: Spectrum,
    regions: &[RegionKind],
    max_len: usize,
    cfg: &EvaluationConfig,
) -> Result<Vec<FeatureVector>, HarnessError> {
    let vis_mask = segment_visible(&sample.vis, &cfg.segmentation)?;
    let (image, mask) = match spectrum {
        Spectrum::Vis => (masked(&sample.vis, &vis_mask, &cfg.region)?, vis_mask),
        Spectrum::Th => {
            let t = match cfg.transform_source {
                TransformSource::Calibration => {
                    sample.transform.ok_or(HarnessError::MissingTransform {
                        user: sample.user_id,
                        session: sample.session,
                        sample: sample.sample,
                    })?
                }
                TransformSource::Register => {
                    register_masks(
                        &vis_mask,
                        &sample.th,
                        &SimilarityTransform::identity(),
                        &cfg.registration,
                    )?
                    .transform
                }
            };
            let th_mask = apply_similarity(&vis_mask, &t, sample.th.width(), sample.th.height());
            (masked(&sample.th, &th_mask, &cfg.region)?, th_mask)
        }
    };
    let hand = normalize_hand_with(&image, &mask, &cfg.region)?;
    regions
        .iter()
        .map(|&kind| {
            let region = extract_region_with(&hand, kind, &cfg.region)?;
            Ok(extract_features(&region, max_len, cfg.scan_order)?)
        })
        .collect()
}

fn masked(
    image: &GrayImage,
    mask: &BinaryMask,
    region: &RegionConfig,
) -> Result<GrayImage, HarnessError> {
    if region.mask_background {
        Ok(apply_mask(image, mask)?)
    } else {
        Ok(image.clone())
    }
}

/// Per user (ascending id): the first `train` samples in `(session, sample)`
/// order and the following `test` samples.
pub fn split_protocol(
    dataset: &Dataset,
    train: usize,
    test: usize,
) -> Result<Vec<(u32, Vec<&Sample>, Vec<&Sample>)>, HarnessError> {
    let mut by_user: BTreeMap<u32, Vec<&Sample>> = BTreeMap::new();
    for s in dataset.samples() {
        by_user.entry(s.user_id).or_default().push(s);
    }
    if by_user.len() < 2 {
        return Err(HarnessError::TooFewUsers(by_user.len()));
    }
    by_user
        .into_iter()
        .map(|(user, mut samples)| {
            samples.sort_by_key(|s| (s.session, s.sample));
            if samples.len() < train + test {
                return Err(HarnessError::InsufficientSamples {
                    user,
                    have: samples.len(),
                    need: train + test,
                });
            }
            let test_part = samples[train..train + test].to_vec();
            samples.truncate(train);
            Ok((user, samples, test_part))
        })
        .collect()
}

fn probe_id(user: u32, test: usize) -> String {
    format!("{user}:{}", test + 1)
}

pub fn run_evaluation(
    dataset: &Dataset,
    cfg: &EvaluationConfig,
) -> Result<EvaluationReport, HarnessError> {
    cfg.validate()?;
    let split = split_protocol(dataset, cfg.train_samples, cfg.test_samples)?;
    let spectra = cfg.needed_spectra();
    let max_len = *cfg
        .feature_lengths
        .iter()
        .max()
        .expect("validated non-empty");

    // features[user][slot][spectrum][region], slot = train samples then test samples
    let jobs: Vec<(usize, usize, usize, &Sample)> = split
        .iter()
        .enumerate()
        .flat_map(|(u, (_, train, test))| {
            let spectra = &spectra;
            train
                .iter()
                .chain(test)
                .enumerate()
                .flat_map(move |(slot, s)| (0..spectra.len()).map(move |k| (u, slot, k, *s)))
        })
        .collect();
    let extracted = par::try_map(cfg.execution, &jobs, |&(_, _, k, s)| {
        extract_sample_features(s, spectra[k], &cfg.regions, max_len, cfg).map_err(|e| s.tag(e))
    })?;
    let slots = cfg.train_samples + cfg.test_samples;
    let feature = |u: usize, slot: usize, k: usize, r: usize, len: usize| -> FeatureVector {
        let v = &extracted[(u * slots + slot) * spectra.len() + k][r];
        FeatureVector::new(v.values()[..len].to_vec(), v.order())
    };
    let user_ids: Vec<u32> = split.iter().map(|(u, _, _)| *u).collect();

    // one cell per (region, length, spectrum)
    let (n_len, n_spec) = (cfg.feature_lengths.len(), spectra.len());
    let cells: Vec<(usize, usize, usize)> = (0..cfg.regions.len())
        .flat_map(|r| (0..n_len).flat_map(move |l| (0..n_spec).map(move |k| (r, l, k))))
        .collect();
    let cell_results = par::try_map(cfg.execution, &cells, |&(r, l, k)| {
        let len = cfg.feature_lengths[l];
        let gallery = Gallery::from_samples(
            (0..user_ids.len())
                .flat_map(|u| (0..cfg.train_samples).map(move |slot| (u, slot)))
                .map(|(u, slot)| (user_ids[u], feature(u, slot, k, r, len))),
        )?;
        let model = train_bdm_with(&gallery, &cfg.bdm)?;
        let tests = (0..cfg.test_samples)
            .map(|t| {
                let mut scores = Vec::with_capacity(user_ids.len() * user_ids.len());
                for u in 0..user_ids.len() {
                    let probe = feature(u, cfg.train_samples + t, k, r, len);
                    scores.extend(
                        identify(&probe, &gallery, &model)?
                            .scores
                            .into_iter()
                            .map(|(_, s)| s),
                    );
                }
                let probes = user_ids.iter().map(|&u| probe_id(u, t)).collect();
                Ok(ScoreMatrix::new(
                    probes,
                    gallery.user_ids(),
                    scores,
                    Polarity::LowerIsBetter,
                )?)
            })
            .collect::<Result<Vec<_>, HarnessError>>()?;
        Ok::<_, HarnessError>((model.selected().len(), tests))
    })?;

    let mut rows = Vec::new();
    let mut scores = Vec::new();
    let sigma = cfg.bdm.sigma_threshold;
    for (r, &region) in cfg.regions.iter().enumerate() {
        for (l, &len) in cfg.feature_lengths.iter().enumerate() {
            let cell =
                |k: usize| &cell_results[(r * cfg.feature_lengths.len() + l) * spectra.len() + k];
            for (k, &spectrum) in spectra.iter().enumerate() {
                let (selected, tests) = cell(k);
                if cfg.spectra.contains(&spectrum) {
                    let rates = tests
                        .iter()
                        .map(|m| identification_rate(&m.decisions(), &user_ids))
                        .collect();
                    rows.push(ReportRow::new(
                        region,
                        spectrum.to_string(),
                        "bdm".into(),
                        Normalization::None,
                        len,
                        selected.to_string(),
                        sigma,
                        rates,
                    ));
                }
                scores.push(ScoreSet {
                    region,
                    spectrum,
                    feature_length: len,
                    tests: tests.clone(),
                });
            }
            if !cfg.fusion.is_empty() {
                let find = |s: Spectrum| {
                    cell(
                        spectra
                            .iter()
                            .position(|&x| x == s)
                            .expect("fusion needs both"),
                    )
                };
                let (vis_sel, vis) = find(Spectrum::Vis);
                let (th_sel, th) = find(Spectrum::Th);
                for spec in &cfg.fusion {
                    let rates = vis
                        .iter()
                        .zip(th)
                        .map(|(v, t)| {
                            let fused = fuse_systems(
                                &[v.clone(), t.clone()],
                                spec.rule,
                                spec.normalization,
                            )?;
                            Ok(identification_rate(&fused.decisions(), &user_ids))
                        })
                        .collect::<Result<Vec<f64>, HarnessError>>()?;
                    rows.push(ReportRow::new(
                        region,
                        "vis+th".into(),
                        spec.rule.name(),
                        spec.normalization,
                        len,
                        format!("{vis_sel}+{th_sel}"),
                        sigma,
                        rates,
                    ));
                }
            }
        }
    }
    let truth = (0..cfg.test_samples)
        .flat_map(|t| {
            user_ids.iter().map(move |&u| TruthRow {
                probe_id: probe_id(u, t),
                user_id: u,
                test: t as u32 + 1,
            })
        })
        .collect();
    Ok(EvaluationReport {
        rows,
        scores,
        truth,
    })
}

fn normalization_name(n: Normalization) -> &'static str {
    match n {
        Normalization::None => "none",
        Normalization::ZScore => "zscore",
        Normalization::MinMax => "minmax",
    }
}

pub fn write_report_csv<W: Write>(out: W, report: &EvaluationReport) -> Result<(), HarnessError> {
    let tests = report.rows.first().map_or(0, |r| r.rates.len());
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = [
        "region",
        "spectrum",
        "rule",
        "normalization",
        "feature_length",
        "selected",
        "sigma_threshold",
    ]
    .map(String::from)
    .to_vec();
    header.extend((1..=tests).map(|t| format!("test{t}")));
    header.extend(["mean".to_string(), "std".to_string()]);
    w.write_record(&header)?;
    for r in &report.rows {
        let mut rec = vec![
            r.region.to_string(),
            r.spectrum.clone(),
            r.rule.clone(),
            normalization_name(r.normalization).to_string(),
            r.feature_length.to_string(),
            r.selected.clone(),
            r.sigma_threshold.to_string(),
        ];
        rec.extend(r.rates.iter().map(|v| v.to_string()));
        rec.extend([r.mean.to_string(), r.std.to_string()]);
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Weighted-rule rates at one alpha, grouped by test index.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub alpha: f64,
    /// `(test index, rate)` ascending by test.
    pub rates: Vec<(u32, f64)>,
    pub mean: f64,
    pub std: f64,
}

/// Normalizes both systems, sweeps alpha and reports per-test rates.
pub fn sweep_table(
    vis: &ScoreMatrix,
    th: &ScoreMatrix,
    truth: &[TruthRow],
    grid: &[f64],
    normalization: Normalization,
) -> Result<Vec<SweepRow>, HarnessError> {
    let by_probe: BTreeMap<&str, &TruthRow> =
        truth.iter().map(|t| (t.probe_id.as_str(), t)).collect();
    let rows = vis
        .probe_ids()
        .iter()
        .map(|p| {
            by_probe
                .get(p.as_str())
                .copied()
                .ok_or_else(|| HarnessError::Csv(format!("no truth for probe {p}")))
        })
        .collect::<Result<Vec<&TruthRow>, _>>()?;
    if th.probe_ids() != vis.probe_ids() {
        return Err(HarnessError::Csv(
            "VIS and TH score files list different probes".into(),
        ));
    }
    let labels: Vec<u32> = rows.iter().map(|t| t.user_id).collect();
    let vis = normalize_scores(vis, normalization)?;
    let th = normalize_scores(th, normalization)?;
    let sweep = alpha_sweep(&vis, &th, &labels, grid)?;
    let mut tests: Vec<u32> = rows.iter().map(|t| t.test).collect();
    tests.sort_unstable();
    tests.dedup();
    Ok(sweep
        .into_iter()
        .map(|point| {
            let rates: Vec<(u32, f64)> = tests
                .iter()
                .map(|&test| {
                    let (d, t): (Vec<u32>, Vec<u32>) = point
                        .decisions
                        .iter()
                        .zip(&rows)
                        .filter(|(_, r)| r.test == test)
                        .map(|(d, r)| (*d, r.user_id))
                        .unzip();
                    (test, identification_rate(&d, &t))
                })
                .collect();
            let (mean, std) = mean_std(&rates.iter().map(|r| r.1).collect::<Vec<_>>());
            SweepRow {
                alpha: point.alpha,
                rates,
                mean,
                std,
            }
        })
        .collect())
}

pub fn write_sweep_csv<W: Write>(out: W, rows: &[SweepRow]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["alpha".to_string()];
    if let Some(first) = rows.first() {
        header.extend(first.rates.iter().map(|(t, _)| format!("rate_test{t}")));
    }
    header.extend(["mean".to_string(), "std".to_string()]);
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.alpha.to_string()];
        rec.extend(r.rates.iter().map(|(_, v)| v.to_string()));
        rec.extend([r.mean.to_string(), r.std.to_string()]);
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
