//! Biometric Dispersion Matcher.
//!
//! Feature differences between two samples are modeled as zero-mean Gaussians
//! under two hypotheses: same user ("equal", E) and different users
//! ("unequal", U). Per component `k`, with within-user variance `σi²` and
//! between-user variance `σp²`:
//!
//! ```text
//! vE = 2 σi²            vU = 2 (σp² + σi²)
//! g(x) = Σ_k [ ln N(x_k | 0, vU) - ln N(x_k | 0, vE) ] + ln(P(U)/P(E))
//! ```
//!
//! Components whose ratio `σi² / (σp² + σi²)` exceeds the σ-threshold are
//! discarded. Large `g` favors "different users", so identification picks
//! the class with the lowest score.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureVector;

/// Below this a selected within-user variance is treated as singular.
pub const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum BdmError {
    #[error("gallery needs at least 2 users, got {0}")]
    TooFewUsers(usize),
    #[error("user {user_id} has {count} templates; at least 2 are needed")]
    TooFewTemplates { user_id: u32, count: usize },
    #[error("feature length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("duplicate user id {0}")]
    DuplicateUser(u32),
    #[error("no component passes σ-threshold {0}; raise the threshold")]
    EmptySelection(f64),
    #[error("σ-threshold {0} outside [0, 1]")]
    InvalidThreshold(f64),
    #[error("within-user variance of selected component {0} is singular")]
    SingularComponent(usize),
    #[error("non-finite feature difference")]
    NonFiniteDiff,
    #[error("gallery is empty")]
    EmptyGallery,
    #[error("invalid model: {0}")]
    InvalidModel(String),
}

/// Variance of the unequal-pair difference distribution.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnequalVariance {
    /// `2 (σp² + σi²)`: difference of two samples from different users.
    #[default]
    TwiceTotal,
    /// `2 σp² + σi²`.
    TwicePopulationPlusWithin,
}

/// How per-template scores are reduced to one class score.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Mean,
    Min,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Enrollment {
    pub user_id: u32,
    pub templates: Vec<FeatureVector>,
}

/// Enrolled templates, kept sorted by user id.
#[derive(Debug, Clone, PartialEq)]
pub struct Gallery {
    users: Vec<Enrollment>,
    dim: usize,
}

impl Gallery {
    pub fn new(mut users: Vec<Enrollment>) -> Result<Self, BdmError> {
        if users.len() < 2 {
            return Err(BdmError::TooFewUsers(users.len()));
        }
        users.sort_by_key(|u| u.user_id);
        for pair in users.windows(2) {
            if pair[0].user_id == pair[1].user_id {
                return Err(BdmError::DuplicateUser(pair[0].user_id));
            }
        }
        let dim = users[0].templates.first().map_or(0, FeatureVector::len);
        for u in &users {
            if u.templates.len() < 2 {
                return Err(BdmError::TooFewTemplates {
                    user_id: u.user_id,
                    count: u.templates.len(),
                });
            }
            for t in &u.templates {
                if t.len() != dim {
                    return Err(BdmError::LengthMismatch {
                        expected: dim,
                        actual: t.len(),
                    });
                }
            }
        }
        Ok(Self { users, dim })
    }

    /// Groups `(user_id, vector)` pairs into enrollments.
    pub fn from_samples(
        samples: impl IntoIterator<Item = (u32, FeatureVector)>,
    ) -> Result<Self, BdmError> {
        let mut users: Vec<Enrollment> = Vec::new();
        for (id, v) in samples {
            match users.iter_mut().find(|u| u.user_id == id) {
                Some(u) => u.templates.push(v),
                None => users.push(Enrollment {
                    user_id: id,
                    templates: vec![v],
                }),
            }
        }
        Self::new(users)
    }

    pub fn users(&self) -> &[Enrollment] {
        &self.users
    }

    pub fn user_ids(&self) -> Vec<u32> {
        self.users.iter().map(|u| u.user_id).collect()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dispersions {
    pub sigma_i_sq: Vec<f64>,
    pub sigma_p_sq: Vec<f64>,
}

/// Pooled unbiased within-user variance and unbiased variance of the user means.
pub fn estimate_dispersions(gallery: &Gallery) -> Dispersions {
    let d = gallery.dim;
    let mut within = vec![0.0; d];
    let mut dof = 0usize;
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(gallery.users.len());
    for u in &gallery.users {
        let n = u.templates.len() as f64;
        let mut mean = vec![0.0; d];
        for t in &u.templates {
            for (m, x) in mean.iter_mut().zip(t.values()) {
                *m += x / n;
            }
        }
        for t in &u.templates {
            for ((w, x), m) in within.iter_mut().zip(t.values()).zip(&mean) {
                *w += (x - m) * (x - m);
            }
        }
        dof += u.templates.len() - 1;
        means.push(mean);
    }
    within.iter_mut().for_each(|w| *w /= dof as f64);

    let g = means.len() as f64;
    let mut grand = vec![0.0; d];
    for m in &means {
        for (a, x) in grand.iter_mut().zip(m) {
            *a += x / g;
        }
    }
    let mut between = vec![0.0; d];
    for m in &means {
        for ((b, x), a) in between.iter_mut().zip(m).zip(&grand) {
            *b += (x - a) * (x - a);
        }
    }
    between.iter_mut().for_each(|b| *b /= g - 1.0);
    Dispersions {
        sigma_i_sq: within,
        sigma_p_sq: between,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BdmConfig {
    pub sigma_threshold: f64,
    pub log_prior_ratio: f64,
    pub unequal_variance: UnequalVariance,
    pub aggregation: Aggregation,
}

impl Default for BdmConfig {
    fn default() -> Self {
        Self {
            sigma_threshold: 0.5,
            log_prior_ratio: 0.0,
            unequal_variance: UnequalVariance::TwiceTotal,
            aggregation: Aggregation::Mean,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BdmModel {
    sigma_i_sq: Vec<f64>,
    sigma_p_sq: Vec<f64>,
    ratios: Vec<f64>,
    selected: Vec<usize>,
    sigma_threshold: f64,
    log_prior_ratio: f64,
    unequal_variance: UnequalVariance,
    aggregation: Aggregation,
}

impl BdmModel {
    /// Model with ratios computed and nothing selected yet.
    pub fn from_dispersions(d: Dispersions, config: &BdmConfig) -> Result<Self, BdmError> {
        if d.sigma_i_sq.len() != d.sigma_p_sq.len() {
            return Err(BdmError::LengthMismatch {
                expected: d.sigma_i_sq.len(),
                actual: d.sigma_p_sq.len(),
            });
        }
        if d.sigma_i_sq
            .iter()
            .chain(&d.sigma_p_sq)
            .any(|v| !v.is_finite() || *v < 0.0)
        {
            return Err(BdmError::InvalidModel(
                "variances must be finite and non-negative".into(),
            ));
        }
        let ratios = d
            .sigma_i_sq
            .iter()
            .zip(&d.sigma_p_sq)
            .map(|(&i, &p)| if i + p > 0.0 { i / (i + p) } else { 1.0 })
            .collect();
        Ok(Self {
            sigma_i_sq: d.sigma_i_sq,
            sigma_p_sq: d.sigma_p_sq,
            ratios,
            selected: Vec::new(),
            sigma_threshold: config.sigma_threshold,
            log_prior_ratio: config.log_prior_ratio,
            unequal_variance: config.unequal_variance,
            aggregation: config.aggregation,
        })
    }

    pub fn sigma_i_sq(&self) -> &[f64] {
        &self.sigma_i_sq
    }

    pub fn sigma_p_sq(&self) -> &[f64] {
        &self.sigma_p_sq
    }

    /// `σi² / (σp² + σi²)`; components with zero total variance report 1.
    pub fn ratios(&self) -> &[f64] {
        &self.ratios
    }

    pub fn selected(&self) -> &[usize] {
        &self.selected
    }

    pub fn sigma_threshold(&self) -> f64 {
        self.sigma_threshold
    }

    pub fn log_prior_ratio(&self) -> f64 {
        self.log_prior_ratio
    }

    pub fn unequal_variance(&self) -> UnequalVariance {
        self.unequal_variance
    }

    pub fn aggregation(&self) -> Aggregation {
        self.aggregation
    }

    pub fn feature_length(&self) -> usize {
        self.sigma_i_sq.len()
    }

    pub fn set_aggregation(&mut self, aggregation: Aggregation) {
        self.aggregation = aggregation;
    }

    /// Re-selects components at a new threshold.
    pub fn with_threshold(mut self, sigma_threshold: f64) -> Result<Self, BdmError> {
        self.selected = select_components(&self, sigma_threshold)?;
        self.sigma_threshold = sigma_threshold;
        Ok(self)
    }

    /// `(vE, vU)` for component `k`.
    pub fn variances(&self, k: usize) -> (f64, f64) {
        let (i, p) = (self.sigma_i_sq[k], self.sigma_p_sq[k]);
        let v_u = match self.unequal_variance {
            UnequalVariance::TwiceTotal => 2.0 * (p + i),
            UnequalVariance::TwicePopulationPlusWithin => 2.0 * p + i,
        };
        (2.0 * i, v_u)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ModelDocument::from(self)).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, BdmError> {
        let doc: ModelDocument =
            serde_json::from_str(text).map_err(|e| BdmError::InvalidModel(e.to_string()))?;
        doc.try_into()
    }
}

/// `{ k : ratio_k <= threshold }` over components with positive total variance.
pub fn select_components(model: &BdmModel, sigma_threshold: f64) -> Result<Vec<usize>, BdmError> {
    if !(0.0..=1.0).contains(&sigma_threshold) {
        return Err(BdmError::InvalidThreshold(sigma_threshold));
    }
    let selected: Vec<usize> = (0..model.ratios.len())
        .filter(|&k| {
            model.sigma_i_sq[k] + model.sigma_p_sq[k] > 0.0 && model.ratios[k] <= sigma_threshold
        })
        .collect();
    if selected.is_empty() {
        return Err(BdmError::EmptySelection(sigma_threshold));
    }
    Ok(selected)
}

pub fn train_bdm(gallery: &Gallery, sigma_threshold: f64) -> Result<BdmModel, BdmError> {
    train_bdm_with(
        gallery,
        &BdmConfig {
            sigma_threshold,
            ..BdmConfig::default()
        },
    )
}

pub fn train_bdm_with(gallery: &Gallery, config: &BdmConfig) -> Result<BdmModel, BdmError> {
    BdmModel::from_dispersions(estimate_dispersions(gallery), config)?
        .with_threshold(config.sigma_threshold)
}

/// Log-likelihood ratio of "unequal" over "equal" for a feature difference.
pub fn g_score(diff: &[f64], model: &BdmModel) -> Result<f64, BdmError> {
    if diff.len() != model.feature_length() {
        return Err(BdmError::LengthMismatch {
            expected: model.feature_length(),
            actual: diff.len(),
        });
    }
    if model.selected.is_empty() {
        return Err(BdmError::EmptySelection(model.sigma_threshold));
    }
    let mut g = model.log_prior_ratio;
    for &k in &model.selected {
        let x = diff[k];
        if !x.is_finite() {
            return Err(BdmError::NonFiniteDiff);
        }
        if model.sigma_i_sq[k] < VARIANCE_FLOOR {
            return Err(BdmError::SingularComponent(k));
        }
        let (v_e, v_u) = model.variances(k);
        g += 0.5 * (v_e / v_u).ln() + 0.5 * x * x * (1.0 / v_e - 1.0 / v_u);
    }
    Ok(g)
}

/// Gaussian log-density, for callers that need the two terms separately.
pub fn log_normal_density(x: f64, variance: f64) -> f64 {
    -0.5 * (2.0 * PI * variance).ln() - x * x / (2.0 * variance)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Identification {
    pub user_id: u32,
    /// `(user_id, class score)` in ascending user id order; lower is better.
    pub scores: Vec<(u32, f64)>,
}

impl Identification {
    /// User ids ranked best first (ties by lower id).
    pub fn ranking(&self) -> Vec<u32> {
        let mut r = self.scores.clone();
        r.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        r.into_iter().map(|(id, _)| id).collect()
    }
}

pub fn identify(
    probe: &FeatureVector,
    gallery: &Gallery,
    model: &BdmModel,
) -> Result<Identification, BdmError> {
    if gallery.users.is_empty() {
        return Err(BdmError::EmptyGallery);
    }
    let mut diff = vec![0.0; probe.len()];
    let mut scores = Vec::with_capacity(gallery.users.len());
    for u in &gallery.users {
        let mut acc = match model.aggregation {
            Aggregation::Mean => 0.0,
            Aggregation::Min => f64::INFINITY,
        };
        for t in &u.templates {
            if t.len() != probe.len() {
                return Err(BdmError::LengthMismatch {
                    expected: t.len(),
                    actual: probe.len(),
                });
            }
            for ((d, p), q) in diff.iter_mut().zip(probe.values()).zip(t.values()) {
                *d = p - q;
            }
            let g = g_score(&diff, model)?;
            acc = match model.aggregation {
                Aggregation::Mean => acc + g / u.templates.len() as f64,
                Aggregation::Min => acc.min(g),
            };
        }
        scores.push((u.user_id, acc));
    }
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if s.1 < scores[best].1 {
            best = i;
        }
    }
    Ok(Identification {
        user_id: scores[best].0,
        scores,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelDocument {
    sigma_threshold: f64,
    selected: Vec<usize>,
    sigma_i_sq: Vec<f64>,
    sigma_p_sq: Vec<f64>,
    log_prior_ratio: f64,
    feature_length: usize,
    #[serde(default)]
    unequal_variance: UnequalVariance,
    #[serde(default)]
    aggregation: Aggregation,
}

impl From<&BdmModel> for ModelDocument {
    fn from(m: &BdmModel) -> Self {
        Self {
            sigma_threshold: m.sigma_threshold,
            selected: m.selected.clone(),
            sigma_i_sq: m.sigma_i_sq.clone(),
            sigma_p_sq: m.sigma_p_sq.clone(),
            log_prior_ratio: m.log_prior_ratio,
            feature_length: m.feature_length(),
            unequal_variance: m.unequal_variance,
            aggregation: m.aggregation,
        }
    }
}

impl TryFrom<ModelDocument> for BdmModel {
    type Error = BdmError;

    fn try_from(doc: ModelDocument) -> Result<Self, BdmError> {
        if doc.sigma_i_sq.len() != doc.feature_length || doc.sigma_p_sq.len() != doc.feature_length
        {
            return Err(BdmError::InvalidModel(
                "variance vectors disagree with feature_length".into(),
            ));
        }
        let config = BdmConfig {
            sigma_threshold: doc.sigma_threshold,
            log_prior_ratio: doc.log_prior_ratio,
            unequal_variance: doc.unequal_variance,
            aggregation: doc.aggregation,
        };
        let mut model = BdmModel::from_dispersions(
            Dispersions {
                sigma_i_sq: doc.sigma_i_sq,
                sigma_p_sq: doc.sigma_p_sq,
            },
            &config,
        )?;
        let mut prev = None;
        for &k in &doc.selected {
            if k >= doc.feature_length || prev.is_some_and(|p| p >= k) {
                return Err(BdmError::InvalidModel(
                    "selected indices must be sorted and in range".into(),
                ));
            }
            if model.ratios[k] > doc.sigma_threshold {
                return Err(BdmError::InvalidModel(format!(
                    "component {k} exceeds the σ-threshold"
                )));
            }
            prev = Some(k);
        }
        model.selected = doc.selected;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fv(v: &[f64]) -> FeatureVector {
        FeatureVector::from(v.to_vec())
    }

    fn gallery(users: &[(u32, &[&[f64]])]) -> Gallery {
        Gallery::new(
            users
                .iter()
                .map(|(id, ts)| Enrollment {
                    user_id: *id,
                    templates: ts.iter().map(|t| fv(t)).collect(),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn dispersions_hand_example() {
        let g = gallery(&[(1, &[&[0.0], &[2.0]]), (2, &[&[10.0], &[12.0]])]);
        let d = estimate_dispersions(&g);
        assert_eq!(d.sigma_i_sq, vec![2.0]);
        assert_eq!(d.sigma_p_sq, vec![50.0]);
    }

    #[test]
    fn dispersions_of_identical_templates_are_zero() {
        let g = gallery(&[
            (1, &[&[1.0, 2.0], &[1.0, 2.0]]),
            (2, &[&[1.0, 2.0], &[1.0, 2.0]]),
        ]);
        let d = estimate_dispersions(&g);
        assert_eq!(d.sigma_i_sq, vec![0.0, 0.0]);
        assert_eq!(d.sigma_p_sq, vec![0.0, 0.0]);
        assert_eq!(
            train_bdm(&g, 1.0).unwrap_err(),
            BdmError::EmptySelection(1.0)
        );
    }

    #[test]
    fn dispersions_two_point_between() {
        let m1 = [1.0, -3.0];
        let m2 = [4.0, 5.0];
        let g = gallery(&[(1, &[&m1, &m1]), (2, &[&m2, &m2])]);
        let d = estimate_dispersions(&g);
        assert_eq!(d.sigma_i_sq, vec![0.0, 0.0]);
        assert_eq!(d.sigma_p_sq, vec![4.5, 32.0]);
    }

    #[test]
    fn gallery_validation() {
        let one = vec![Enrollment {
            user_id: 1,
            templates: vec![fv(&[0.0]), fv(&[1.0])],
        }];
        assert_eq!(Gallery::new(one).unwrap_err(), BdmError::TooFewUsers(1));
        let short = vec![
            Enrollment {
                user_id: 1,
                templates: vec![fv(&[0.0]), fv(&[1.0])],
            },
            Enrollment {
                user_id: 2,
                templates: vec![fv(&[0.0])],
            },
        ];
        assert_eq!(
            Gallery::new(short).unwrap_err(),
            BdmError::TooFewTemplates {
                user_id: 2,
                count: 1
            }
        );
    }

    fn model_with_ratios(ratios: &[f64]) -> BdmModel {
        // σi² = r, σp² = 1 - r gives ratio r exactly for these inputs
        let d = Dispersions {
            sigma_i_sq: ratios.to_vec(),
            sigma_p_sq: ratios.iter().map(|r| 1.0 - r).collect(),
        };
        BdmModel::from_dispersions(d, &BdmConfig::default()).unwrap()
    }

    #[test]
    fn selection_rules() {
        let m = model_with_ratios(&[0.2, 0.9, 0.5]);
        assert_eq!(select_components(&m, 0.5).unwrap(), vec![0, 2]);
        assert_eq!(select_components(&m, 1.0).unwrap(), vec![0, 1, 2]);
        assert_eq!(
            select_components(&m, 0.1).unwrap_err(),
            BdmError::EmptySelection(0.1)
        );
        assert_eq!(
            select_components(&m, 1.5).unwrap_err(),
            BdmError::InvalidThreshold(1.5)
        );
    }

    #[test]
    fn g_closed_form_single_component() {
        let d = Dispersions {
            sigma_i_sq: vec![1.0],
            sigma_p_sq: vec![4.0],
        };
        let m = BdmModel::from_dispersions(d, &BdmConfig::default())
            .unwrap()
            .with_threshold(1.0)
            .unwrap();
        let g = g_score(&[0.0], &m).unwrap();
        assert!((g - 0.5 * (0.2f64).ln()).abs() < 1e-12);
        assert!((g + 0.8047).abs() < 1e-4);
        assert!(g_score(&[1e6], &m).unwrap() > 1e10);
        assert!(g_score(&[-1e6], &m).unwrap() > 1e10);
        assert_eq!(
            g_score(&[f64::NAN], &m).unwrap_err(),
            BdmError::NonFiniteDiff
        );
    }

    #[test]
    fn singular_within_variance_is_an_error() {
        let d = Dispersions {
            sigma_i_sq: vec![0.0, 1.0],
            sigma_p_sq: vec![3.0, 1.0],
        };
        let m = BdmModel::from_dispersions(d, &BdmConfig::default())
            .unwrap()
            .with_threshold(0.6)
            .unwrap();
        assert_eq!(m.selected(), &[0, 1]);
        assert_eq!(
            g_score(&[0.0, 0.0], &m).unwrap_err(),
            BdmError::SingularComponent(0)
        );
    }

    #[test]
    fn identify_two_user_example() {
        // user A mean 0, user B mean 10, σi² = 1
        let g = gallery(&[(1, &[&[-1.0], &[1.0]]), (2, &[&[9.0], &[11.0]])]);
        let m = train_bdm(&g, 1.0).unwrap();
        assert_eq!(m.sigma_i_sq(), &[2.0]);
        let id = identify(&fv(&[1.0]), &g, &m).unwrap();
        assert_eq!(id.user_id, 1);
        assert_eq!(id.ranking(), vec![1, 2]);
    }

    #[test]
    fn identify_tie_goes_to_lower_id() {
        let g = gallery(&[(7, &[&[-1.0], &[1.0]]), (3, &[&[-1.0], &[1.0]])]);
        let m = train_bdm(&g, 1.0).unwrap();
        let id = identify(&fv(&[0.5]), &g, &m).unwrap();
        assert_eq!(id.scores[0].1, id.scores[1].1);
        assert_eq!(id.user_id, 3);
    }

    #[test]
    fn min_aggregation() {
        let g = gallery(&[(1, &[&[0.0], &[4.0]]), (2, &[&[10.0], &[14.0]])]);
        let mut m = train_bdm(&g, 1.0).unwrap();
        m.set_aggregation(Aggregation::Min);
        let id = identify(&fv(&[4.0]), &g, &m).unwrap();
        assert_eq!(id.user_id, 1);
        // exact template match yields the zero-difference score
        assert_eq!(id.scores[0].1, g_score(&[0.0], &m).unwrap());
    }

    #[test]
    fn json_round_trip() {
        let g = gallery(&[
            (1, &[&[0.0, 1.0], &[2.0, 1.5]]),
            (2, &[&[10.0, 0.0], &[12.0, 0.2]]),
        ]);
        let m = train_bdm(&g, 0.9).unwrap();
        let back = BdmModel::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
        let v: serde_json::Value = serde_json::from_str(&m.to_json()).unwrap();
        for key in [
            "sigma_threshold",
            "selected",
            "sigma_i_sq",
            "sigma_p_sq",
            "log_prior_ratio",
            "feature_length",
        ] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
    }

    #[test]
    fn displayed_variance_variant() {
        let d = Dispersions {
            sigma_i_sq: vec![1.0],
            sigma_p_sq: vec![4.0],
        };
        let cfg = BdmConfig {
            unequal_variance: UnequalVariance::TwicePopulationPlusWithin,
            ..Default::default()
        };
        let m = BdmModel::from_dispersions(d, &cfg)
            .unwrap()
            .with_threshold(1.0)
            .unwrap();
        assert_eq!(m.variances(0), (2.0, 9.0));
        assert!((g_score(&[0.0], &m).unwrap() - 0.5 * (2.0f64 / 9.0).ln()).abs() < 1e-12);
    }
}
