//! Score- and decision-level fusion of per-class match scores.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par::{self, Execution};

/// Lower clamp for the log-domain product rule.
pub const PRODUCT_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum FusionError {
    #[error("score matrix shape mismatch: {0}x{1} vs {2}x{3}")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("score matrices have different polarity")]
    PolarityMismatch,
    #[error("score matrices disagree on class ids")]
    ClassMismatch,
    #[error("need at least {needed} matrices, got {got}")]
    TooFewSystems { needed: usize, got: usize },
    #[error("product rule needs higher-is-better scores in [0, 1] (MinMax-normalized)")]
    ProductNeedsNormalized,
    #[error("probe {0} has constant scores; normalization undefined")]
    DegenerateRow(usize),
    #[error("alpha {0} outside [0, 1]")]
    InvalidAlpha(f64),
    #[error("truth has {truth} labels for {probes} probes")]
    TruthLength { truth: usize, probes: usize },
    #[error("non-finite score at probe {probe}, class {class}")]
    NonFinite { probe: usize, class: usize },
    #[error("invalid score matrix: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    LowerIsBetter,
    HigherIsBetter,
}

/// Probes x classes scores from one biometric system.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    probe_ids: Vec<String>,
    class_ids: Vec<u32>,
    scores: Vec<f64>,
    polarity: Polarity,
}

impl ScoreMatrix {
    pub fn new(
        probe_ids: Vec<String>,
        class_ids: Vec<u32>,
        scores: Vec<f64>,
        polarity: Polarity,
    ) -> Result<Self, FusionError> {
        let (p, c) = (probe_ids.len(), class_ids.len());
        if p == 0 || c == 0 {
            return Err(FusionError::Invalid("empty matrix".into()));
        }
        if scores.len() != p * c {
            return Err(FusionError::Invalid(format!(
                "{} scores for {p}x{c}",
                scores.len()
            )));
        }
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(FusionError::NonFinite {
                probe: i / c,
                class: i % c,
            });
        }
        Ok(Self {
            probe_ids,
            class_ids,
            scores,
            polarity,
        })
    }

    /// Matrix with generated probe ids `0..P`.
    pub fn from_rows(
        rows: &[Vec<f64>],
        class_ids: Vec<u32>,
        polarity: Polarity,
    ) -> Result<Self, FusionError> {
        let probe_ids = (0..rows.len()).map(|i| i.to_string()).collect();
        if rows.iter().any(|r| r.len() != class_ids.len()) {
            return Err(FusionError::Invalid(
                "row length differs from class count".into(),
            ));
        }
        Self::new(probe_ids, class_ids, rows.concat(), polarity)
    }

    pub fn probes(&self) -> usize {
        self.probe_ids.len()
    }

    pub fn classes(&self) -> usize {
        self.class_ids.len()
    }

    pub fn probe_ids(&self) -> &[String] {
        &self.probe_ids
    }

    pub fn class_ids(&self) -> &[u32] {
        &self.class_ids
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn polarity(&self) -> Polarity {
        self.polarity
    }

    pub fn row(&self, probe: usize) -> &[f64] {
        let c = self.classes();
        &self.scores[probe * c..(probe + 1) * c]
    }

    pub fn get(&self, probe: usize, class: usize) -> f64 {
        self.scores[probe * self.classes() + class]
    }

    /// Negated scores with flipped polarity.
    pub fn negated(&self) -> Self {
        Self {
            probe_ids: self.probe_ids.clone(),
            class_ids: self.class_ids.clone(),
            scores: self.scores.iter().map(|s| -s).collect(),
            polarity: match self.polarity {
                Polarity::LowerIsBetter => Polarity::HigherIsBetter,
                Polarity::HigherIsBetter => Polarity::LowerIsBetter,
            },
        }
    }

    /// Same scores expressed as higher-is-better.
    pub fn as_higher_is_better(&self) -> Self {
        match self.polarity {
            Polarity::HigherIsBetter => self.clone(),
            Polarity::LowerIsBetter => self.negated(),
        }
    }

    /// Best class index for a probe; ties resolve to the lowest index.
    pub fn best_index(&self, probe: usize) -> usize {
        let row = self.row(probe);
        let mut best = 0;
        for (i, &s) in row.iter().enumerate() {
            let better = match self.polarity {
                Polarity::LowerIsBetter => s < row[best],
                Polarity::HigherIsBetter => s > row[best],
            };
            if better {
                best = i;
            }
        }
        best
    }

    /// Class ids ordered best first.
    pub fn ranking(&self, probe: usize) -> Vec<u32> {
        let row = self.row(probe);
        let mut idx: Vec<usize> = (0..row.len()).collect();
        idx.sort_by(|&a, &b| {
            let ord = row[a].total_cmp(&row[b]);
            match self.polarity {
                Polarity::LowerIsBetter => ord,
                Polarity::HigherIsBetter => ord.reverse(),
            }
            .then(a.cmp(&b))
        });
        idx.into_iter().map(|i| self.class_ids[i]).collect()
    }

    /// Top-ranked class id per probe.
    pub fn decisions(&self) -> Vec<u32> {
        (0..self.probes())
            .map(|p| self.class_ids[self.best_index(p)])
            .collect()
    }

    fn check_compatible(&self, other: &ScoreMatrix) -> Result<(), FusionError> {
        if self.probes() != other.probes() || self.classes() != other.classes() {
            return Err(FusionError::ShapeMismatch(
                self.probes(),
                self.classes(),
                other.probes(),
                other.classes(),
            ));
        }
        if self.polarity != other.polarity {
            return Err(FusionError::PolarityMismatch);
        }
        if self.class_ids != other.class_ids {
            return Err(FusionError::ClassMismatch);
        }
        Ok(())
    }

    fn with_scores(&self, scores: Vec<f64>) -> Self {
        Self {
            probe_ids: self.probe_ids.clone(),
            class_ids: self.class_ids.clone(),
            scores,
            polarity: self.polarity,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    #[default]
    None,
    ZScore,
    MinMax,
}

/// Per-probe-row normalization. Polarity is preserved.
pub fn normalize_scores(
    m: &ScoreMatrix,
    scheme: Normalization,
) -> Result<ScoreMatrix, FusionError> {
    if scheme == Normalization::None {
        return Ok(m.clone());
    }
    let mut out = Vec::with_capacity(m.scores.len());
    for p in 0..m.probes() {
        let row = m.row(p);
        match scheme {
            Normalization::ZScore => {
                let n = row.len() as f64;
                let mean = row.iter().sum::<f64>() / n;
                let std = (row.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n).sqrt();
                if !(std > 0.0) {
                    return Err(FusionError::DegenerateRow(p));
                }
                out.extend(row.iter().map(|y| (y - mean) / std));
            }
            Normalization::MinMax => {
                let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if !(hi > lo) {
                    return Err(FusionError::DegenerateRow(p));
                }
                out.extend(row.iter().map(|y| ((y - lo) / (hi - lo)).clamp(0.0, 1.0)));
            }
            Normalization::None => unreachable!(),
        }
    }
    Ok(m.with_scores(out))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "rule", content = "alpha")]
pub enum FusionRule {
    Product,
    Mean,
    Median,
    Max,
    Min,
    #[serde(rename = "vote")]
    MajorityVote,
    Weighted(f64),
}

impl FusionRule {
    pub fn name(&self) -> String {
        match self {
            FusionRule::Product => "product".into(),
            FusionRule::Mean => "mean".into(),
            FusionRule::Median => "median".into(),
            FusionRule::Max => "max".into(),
            FusionRule::Min => "min".into(),
            FusionRule::MajorityVote => "vote".into(),
            FusionRule::Weighted(a) => format!("weighted({a})"),
        }
    }
}

/// Entrywise fixed-rule combination of two or more systems.
///
/// The product rule is evaluated as `exp(sum(ln(max(s, PRODUCT_FLOOR))))`
/// and requires MinMax-normalized, higher-is-better inputs.
pub fn combine_scores(
    matrices: &[ScoreMatrix],
    rule: FusionRule,
) -> Result<ScoreMatrix, FusionError> {
    if matrices.len() < 2 {
        return Err(FusionError::TooFewSystems {
            needed: 2,
            got: matrices.len(),
        });
    }
    let first = &matrices[0];
    for m in &matrices[1..] {
        first.check_compatible(m)?;
    }
    match rule {
        FusionRule::Weighted(alpha) if matrices.len() == 2 => {
            return weighted_combine(&matrices[0], &matrices[1], alpha)
        }
        FusionRule::Weighted(_) => {
            return Err(FusionError::Invalid(
                "weighted rule takes exactly two systems".into(),
            ))
        }
        FusionRule::MajorityVote => {
            return Err(FusionError::Invalid(
                "majority vote is a decision-level rule; use fuse_decisions".into(),
            ))
        }
        FusionRule::Product => {
            let normalized = matrices.iter().all(|m| {
                m.polarity == Polarity::HigherIsBetter
                    && m.scores.iter().all(|s| (0.0..=1.0).contains(s))
            });
            if !normalized {
                return Err(FusionError::ProductNeedsNormalized);
            }
        }
        _ => {}
    }
    let mut column = Vec::with_capacity(matrices.len());
    let scores = (0..first.scores.len())
        .map(|i| {
            column.clear();
            column.extend(matrices.iter().map(|m| m.scores[i]));
            match rule {
                FusionRule::Product => column
                    .iter()
                    .map(|s| s.max(PRODUCT_FLOOR).ln())
                    .sum::<f64>()
                    .exp(),
                // running mean: identical inputs come back unchanged
                FusionRule::Mean => column
                    .iter()
                    .enumerate()
                    .fold(0.0, |m, (k, s)| m + (s - m) / (k + 1) as f64),
                FusionRule::Median => median(&mut column),
                FusionRule::Max => column.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                FusionRule::Min => column.iter().copied().fold(f64::INFINITY, f64::min),
                FusionRule::MajorityVote | FusionRule::Weighted(_) => unreachable!(),
            }
        })
        .collect();
    Ok(first.with_scores(scores))
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// `alpha * vis + (1 - alpha) * th`, entrywise.
pub fn weighted_combine(
    vis: &ScoreMatrix,
    th: &ScoreMatrix,
    alpha: f64,
) -> Result<ScoreMatrix, FusionError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(FusionError::InvalidAlpha(alpha));
    }
    vis.check_compatible(th)?;
    let scores = vis
        .scores
        .iter()
        .zip(&th.scores)
        .map(|(v, t)| alpha * v + (1.0 - alpha) * t)
        .collect();
    Ok(vis.with_scores(scores))
}

/// Modal label; ties go to the tied label ranked best by `first_ranking`
/// (falling back to the earliest vote).
pub fn majority_vote(votes: &[u32], first_ranking: &[u32]) -> Option<u32> {
    let mut tally: Vec<(u32, usize, usize)> = Vec::new(); // (label, count, first position)
    for (pos, &v) in votes.iter().enumerate() {
        match tally.iter_mut().find(|t| t.0 == v) {
            Some(t) => t.1 += 1,
            None => tally.push((v, 1, pos)),
        }
    }
    let top = tally.iter().map(|t| t.1).max()?;
    let rank_of = |label: u32| {
        first_ranking
            .iter()
            .position(|&r| r == label)
            .unwrap_or(usize::MAX)
    };
    tally
        .iter()
        .filter(|t| t.1 == top)
        .min_by_key(|t| (rank_of(t.0), t.2))
        .map(|t| t.0)
}

/// Majority vote across systems for every probe.
pub fn fuse_decisions(matrices: &[ScoreMatrix]) -> Result<Vec<u32>, FusionError> {
    let first = matrices
        .first()
        .ok_or(FusionError::TooFewSystems { needed: 1, got: 0 })?;
    for m in &matrices[1..] {
        if m.probes() != first.probes() || m.class_ids != first.class_ids {
            return Err(FusionError::ShapeMismatch(
                first.probes(),
                first.classes(),
                m.probes(),
                m.classes(),
            ));
        }
    }
    Ok((0..first.probes())
        .map(|p| {
            let votes: Vec<u32> = matrices
                .iter()
                .map(|m| m.class_ids[m.best_index(p)])
                .collect();
            majority_vote(&votes, &first.ranking(p)).expect("at least one vote")
        })
        .collect())
}

/// Output of [`fuse_systems`]: a fused score matrix, or labels for the vote rule.
#[derive(Debug, Clone, PartialEq)]
pub enum Fused {
    Scores(ScoreMatrix),
    Decisions(Vec<u32>),
}

impl Fused {
    pub fn decisions(&self) -> Vec<u32> {
        match self {
            Fused::Scores(m) => m.decisions(),
            Fused::Decisions(d) => d.clone(),
        }
    }
}

/// Applies `rule` to raw per-system matrices.
///
/// Product, max and min act on similarities, so those inputs are first made
/// higher-is-better; the product rule additionally forces MinMax. Mean,
/// median and the weighted rule commute with negation and keep the input
/// polarity, so `Weighted(0)` with no normalization returns the second
/// system unchanged.
pub fn fuse_systems(
    systems: &[ScoreMatrix],
    rule: FusionRule,
    normalization: Normalization,
) -> Result<Fused, FusionError> {
    if rule == FusionRule::MajorityVote {
        return fuse_decisions(systems).map(Fused::Decisions);
    }
    let prepared = systems
        .iter()
        .map(|m| match rule {
            FusionRule::Product => {
                normalize_scores(&m.as_higher_is_better(), Normalization::MinMax)
            }
            FusionRule::Max | FusionRule::Min => {
                normalize_scores(&m.as_higher_is_better(), normalization)
            }
            _ => normalize_scores(m, normalization),
        })
        .collect::<Result<Vec<_>, _>>()?;
    combine_scores(&prepared, rule).map(Fused::Scores)
}

/// Percentage of probes whose top-ranked class equals the truth label.
pub fn identification_rate(decisions: &[u32], truth: &[u32]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let hits = decisions.iter().zip(truth).filter(|(d, t)| d == t).count();
    100.0 * hits as f64 / truth.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub alpha: f64,
    pub rate: f64,
    pub decisions: Vec<u32>,
}

/// Identification rate of the weighted rule over a grid of alphas.
pub fn alpha_sweep(
    vis: &ScoreMatrix,
    th: &ScoreMatrix,
    truth: &[u32],
    grid: &[f64],
) -> Result<Vec<SweepPoint>, FusionError> {
    alpha_sweep_with(Execution::default(), vis, th, truth, grid)
}

pub fn alpha_sweep_with(
    exec: Execution,
    vis: &ScoreMatrix,
    th: &ScoreMatrix,
    truth: &[u32],
    grid: &[f64],
) -> Result<Vec<SweepPoint>, FusionError> {
    if truth.len() != vis.probes() {
        return Err(FusionError::TruthLength {
            truth: truth.len(),
            probes: vis.probes(),
        });
    }
    vis.check_compatible(th)?;
    par::try_map(exec, grid, |&alpha| {
        let fused = weighted_combine(vis, th, alpha)?;
        let decisions = fused.decisions();
        Ok(SweepPoint {
            alpha,
            rate: identification_rate(&decisions, truth),
            decisions,
        })
    })
}

/// `start:step:end` inclusive grid; the end point is always included.
pub fn alpha_grid(start: f64, step: f64, end: f64) -> Vec<f64> {
    if !(step > 0.0) || end < start {
        return vec![start];
    }
    let n = ((end - start) / step + 1e-9).floor() as usize;
    let mut grid: Vec<f64> = (0..=n)
        .map(|i| start + i as f64 * step)
        .map(|a| a.min(end))
        .collect();
    if (grid[grid.len() - 1] - end).abs() > 1e-12 {
        grid.push(end);
    } else {
        *grid.last_mut().unwrap() = end;
    }
    grid
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[Vec<f64>], pol: Polarity) -> ScoreMatrix {
        let classes = (0..rows[0].len() as u32).collect();
        ScoreMatrix::from_rows(rows, classes, pol).unwrap()
    }

    #[test]
    fn minmax_and_zscore() {
        let s = m(&[vec![1.0, 2.0, 3.0]], Polarity::HigherIsBetter);
        assert_eq!(
            normalize_scores(&s, Normalization::MinMax)
                .unwrap()
                .scores(),
            &[0.0, 0.5, 1.0]
        );
        let z = normalize_scores(&s, Normalization::ZScore).unwrap();
        let mean: f64 = z.scores().iter().sum::<f64>() / 3.0;
        let var: f64 = z.scores().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
        let flat = m(&[vec![1.0, 2.0], vec![4.0, 4.0]], Polarity::LowerIsBetter);
        assert_eq!(
            normalize_scores(&flat, Normalization::ZScore).unwrap_err(),
            FusionError::DegenerateRow(1)
        );
        assert_eq!(
            normalize_scores(&flat, Normalization::MinMax).unwrap_err(),
            FusionError::DegenerateRow(1)
        );
    }

    #[test]
    fn fixed_rules() {
        let a = m(&[vec![0.1, 0.6]], Polarity::HigherIsBetter);
        let b = m(&[vec![0.5, 0.9]], Polarity::HigherIsBetter);
        let c = m(&[vec![0.9, 0.3]], Polarity::HigherIsBetter);
        assert_eq!(
            combine_scores(&[a.clone(), a.clone()], FusionRule::Mean).unwrap(),
            a
        );
        let p = combine_scores(&[a.clone(), b.clone()], FusionRule::Product).unwrap();
        assert!((p.get(0, 0) - 0.05).abs() < 1e-15 && (p.get(0, 1) - 0.54).abs() < 1e-15);
        let med = combine_scores(&[a.clone(), b.clone(), c.clone()], FusionRule::Median).unwrap();
        assert_eq!(med.get(0, 0), 0.5);
        assert_eq!(
            combine_scores(&[a.clone(), c.clone()], FusionRule::Max)
                .unwrap()
                .scores(),
            &[0.9, 0.6]
        );
        assert_eq!(
            combine_scores(&[a.clone(), c.clone()], FusionRule::Min)
                .unwrap()
                .scores(),
            &[0.1, 0.3]
        );
    }

    #[test]
    fn product_requires_normalized_similarities() {
        let raw = m(&[vec![3.0, -2.0]], Polarity::LowerIsBetter);
        assert_eq!(
            combine_scores(&[raw.clone(), raw.clone()], FusionRule::Product).unwrap_err(),
            FusionError::ProductNeedsNormalized
        );
        let other = m(&[vec![0.2, 0.3]], Polarity::HigherIsBetter);
        assert_eq!(
            combine_scores(&[raw, other], FusionRule::Mean).unwrap_err(),
            FusionError::PolarityMismatch
        );
        let tiny = m(&[vec![0.0, 1.0]], Polarity::HigherIsBetter);
        let p = combine_scores(&[tiny.clone(), tiny], FusionRule::Product).unwrap();
        assert!(p.get(0, 0) > 0.0 && p.get(0, 0) <= 1e-23);
    }

    #[test]
    fn weighted_endpoints_and_midpoint() {
        let vis = m(&[vec![0.2, 0.7]], Polarity::LowerIsBetter);
        let th = m(&[vec![0.6, 0.1]], Polarity::LowerIsBetter);
        assert_eq!(weighted_combine(&vis, &th, 0.0).unwrap(), th);
        assert_eq!(weighted_combine(&vis, &th, 1.0).unwrap(), vis);
        assert!((weighted_combine(&vis, &th, 0.5).unwrap().get(0, 0) - 0.4).abs() < 1e-15);
        assert_eq!(
            weighted_combine(&vis, &th, 1.5).unwrap_err(),
            FusionError::InvalidAlpha(1.5)
        );
    }

    #[test]
    fn votes() {
        assert_eq!(majority_vote(&[1, 1, 2], &[2, 1]), Some(1));
        assert_eq!(majority_vote(&[1, 2], &[1, 2]), Some(1));
        assert_eq!(majority_vote(&[1, 2], &[2, 1]), Some(2));
        assert_eq!(majority_vote(&[3], &[]), Some(3));
        assert_eq!(majority_vote(&[], &[]), None);
    }

    #[test]
    fn sweep_endpoints_match_single_systems() {
        let vis = m(
            &[vec![0.1, 0.9], vec![0.8, 0.2], vec![0.3, 0.4]],
            Polarity::LowerIsBetter,
        );
        let th = m(
            &[vec![0.9, 0.1], vec![0.7, 0.3], vec![0.2, 0.6]],
            Polarity::LowerIsBetter,
        );
        let truth = [0, 1, 0];
        let sweep = alpha_sweep(&vis, &th, &truth, &[0.0, 1.0]).unwrap();
        assert_eq!(sweep[0].decisions, th.decisions());
        assert_eq!(sweep[1].decisions, vis.decisions());
        assert_eq!(sweep[1].rate, 100.0);
    }

    #[test]
    fn grid_parsing() {
        let g = alpha_grid(0.0, 0.05, 1.0);
        assert_eq!(g.len(), 21);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[20], 1.0);
        assert_eq!(
            alpha_grid(0.0, 0.3, 1.0),
            vec![0.0, 0.3, 0.6, 0.8999999999999999, 1.0]
        );
    }

    #[test]
    fn ranking_respects_polarity() {
        let lo = m(&[vec![0.3, 0.1, 0.2]], Polarity::LowerIsBetter);
        assert_eq!(lo.ranking(0), vec![1, 2, 0]);
        assert_eq!(lo.negated().ranking(0), vec![1, 2, 0]);
        assert_eq!(lo.decisions(), vec![1]);
    }
}
