//! AUC / RMSE and the student-level k-fold cross-validation driver.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::Serialize;

use crate::bkt::{self, FitConfig};
use crate::error::{Error, Result};
use crate::features::{
    build_evidence_rows, by_student, compute_difficulty_table, EvidenceRow, FeatureValues,
    StudentTracker, DEFAULT_BINS,
};
use crate::ids::{ProblemId, StudentId};
use crate::ingest::{split_folds, FoldAssignment, InteractionRecord};
use crate::tan::{self, Explanation, Feature, TanStructure};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredPrediction {
    pub score: f64,
    pub label: bool,
    pub student: StudentId,
    pub seq_index: u32,
}

/// Area under the ROC curve from midranks (Mann-Whitney U), ties count 1/2.
pub fn auc(preds: &[ScoredPrediction]) -> Result<f64> {
    auc_scores(preds.iter().map(|p| (p.score, p.label)))
}

pub fn auc_scores<I: IntoIterator<Item = (f64, bool)>>(scored: I) -> Result<f64> {
    let mut scored: Vec<(f64, bool)> = scored.into_iter().collect();
    let positives = scored.iter().filter(|(_, l)| *l).count();
    let negatives = scored.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedAuc);
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut positive_rank_sum = 0.0;
    let mut i = 0;
    while i < scored.len() {
        let mut j = i + 1;
        while j < scored.len() && scored[j].0 == scored[i].0 {
            j += 1;
        }
        // Ranks i+1..=j share the midrank.
        let midrank = (i + 1 + j) as f64 / 2.0;
        let tied_positives = scored[i..j].iter().filter(|(_, l)| *l).count();
        positive_rank_sum += midrank * tied_positives as f64;
        i = j;
    }
    let (p, n) = (positives as f64, negatives as f64);
    Ok((positive_rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

pub fn rmse(preds: &[ScoredPrediction]) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let sse: f64 = preds
        .iter()
        .map(|p| (p.score - f64::from(u8::from(p.label))).powi(2))
        .sum();
    Ok((sse / preds.len() as f64).sqrt())
}

/// Mean of per-student AUCs over students with both outcomes present.
pub fn macro_auc(preds: &[ScoredPrediction]) -> Result<f64> {
    let mut by_student: BTreeMap<&StudentId, Vec<(f64, bool)>> = BTreeMap::new();
    for p in preds {
        by_student
            .entry(&p.student)
            .or_default()
            .push((p.score, p.label));
    }
    let per_student: Vec<f64> = by_student
        .into_values()
        .filter_map(|s| auc_scores(s).ok())
        .collect();
    if per_student.is_empty() {
        return Err(Error::UndefinedAuc);
    }
    Ok(per_student.iter().sum::<f64>() / per_student.len() as f64)
}

/// Everything besides the data and the root seed that shapes a pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineConfig {
    pub bins: usize,
    pub alpha: f64,
    /// `fit.seed` is replaced by the run's root seed.
    pub fit: FitConfig,
    pub learn_structure: bool,
    pub macro_auc: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            bins: DEFAULT_BINS,
            alpha: 1.0,
            fit: FitConfig::default(),
            learn_structure: false,
            macro_auc: false,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bins < 2 {
            return Err(Error::Config(format!(
                "bins must be at least 2, got {}",
                self.bins
            )));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        self.fit.validate()
    }
}

/// Models trained on one set of students.
#[derive(Debug, Clone)]
pub struct TrainedPipeline {
    pub bkt: bkt::BktModel,
    pub difficulty: crate::features::DifficultyTable,
    pub tan: tan::TanModel,
}

/// Fit BKT per skill, the difficulty table, and the TAN on `train`.
pub fn train_pipeline(
    train: &[&InteractionRecord],
    seed: u64,
    cfg: &PipelineConfig,
) -> Result<TrainedPipeline> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let fit = FitConfig {
        seed,
        ..cfg.fit.clone()
    };
    // Rounded to the serialized precision so a reloaded model scores identically.
    let bkt = bkt::fit_all_skills(train.iter().copied(), &fit)?.rounded();
    let mut difficulty = compute_difficulty_table(train.iter().copied());
    difficulty.seed = Some(seed);
    let rows = build_evidence_rows(train.iter().copied(), &difficulty, &bkt, cfg.bins)?;
    let structure = if cfg.learn_structure {
        tan::learn_structure_cmi(&rows, cfg.alpha, cfg.bins)?
    } else {
        TanStructure::eikt()
    };
    let mut tan = tan::fit_cpts(&rows, structure, cfg.alpha, cfg.bins)?;
    tan.seed = Some(seed);
    Ok(TrainedPipeline {
        bkt,
        difficulty,
        tan,
    })
}

/// A scored attempt together with the feature values and TAN factors behind it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExplainedPrediction {
    pub row: EvidenceRow,
    pub problem: ProblemId,
    pub values: FeatureValues,
    pub explanation: Explanation,
}

impl TrainedPipeline {
    /// Mastery bin count the TAN was trained with.
    pub fn bins(&self) -> usize {
        self.tan.cardinalities[Feature::Mastery.index()]
    }

    /// Score every interaction, replaying each student's history online.
    pub fn score<'a, I>(&self, records: I) -> Result<Vec<ScoredPrediction>>
    where
        I: IntoIterator<Item = &'a InteractionRecord>,
    {
        let rows = build_evidence_rows(records, &self.difficulty, &self.bkt, self.bins())?;
        Ok(rows
            .iter()
            .map(|r| ScoredPrediction {
                score: tan::predict(&self.tan, r),
                label: r.label,
                student: r.student.clone(),
                seq_index: r.seq_index,
            })
            .collect())
    }

    /// Like [`TrainedPipeline::score`], keeping the full explanation of every score.
    pub fn explain<'a, I>(&self, records: I) -> Result<Vec<ExplainedPrediction>>
    where
        I: IntoIterator<Item = &'a InteractionRecord>,
    {
        let mut out = Vec::new();
        for seq in by_student(records).into_values() {
            let mut tracker = StudentTracker::new(&self.bkt, &self.difficulty, self.bins())?;
            for r in seq {
                let (row, values) = tracker.evidence(r)?;
                tracker.observe(&r.skill, &r.problem, r.outcome);
                let explanation = self.tan.explain(&row);
                out.push(ExplainedPrediction {
                    row,
                    problem: r.problem.clone(),
                    values,
                    explanation,
                });
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub auc: f64,
    pub rmse: f64,
    pub train_students: usize,
    pub test_students: usize,
    pub test_interactions: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DatasetCounts {
    pub students: usize,
    pub interactions: usize,
    pub skills: usize,
    pub problems: usize,
}

impl DatasetCounts {
    pub fn of(records: &[InteractionRecord]) -> Self {
        DatasetCounts {
            students: records
                .iter()
                .map(|r| &r.student)
                .collect::<BTreeSet<_>>()
                .len(),
            interactions: records.len(),
            skills: records
                .iter()
                .map(|r| &r.skill)
                .collect::<BTreeSet<_>>()
                .len(),
            problems: records
                .iter()
                .map(|r| &r.problem)
                .collect::<BTreeSet<_>>()
                .len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<FoldMetrics>,
    pub avg_auc: f64,
    pub avg_rmse: f64,
    pub counts: DatasetCounts,
    pub config: PipelineConfig,
}

impl EvalReport {
    /// `fold,auc,rmse` with a trailing `avg` row.
    pub fn to_csv(&self) -> String {
        let mut out = format!("#seed={}\nfold,auc,rmse\n", self.seed);
        for f in &self.folds {
            let _ = writeln!(out, "{},{},{}", f.fold, f.auc, f.rmse);
        }
        let _ = writeln!(out, "avg,{},{}", self.avg_auc, self.avg_rmse);
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let c = &self.counts;
        let _ =
            writeln!(
            out,
            "{} students, {} interactions, {} skills, {} problems; k={} seed={} bins={} alpha={}",
            c.students, c.interactions, c.skills, c.problems, self.k, self.seed,
            self.config.bins, self.config.alpha
        );
        let _ = writeln!(
            out,
            "{:>5}  {:>7}  {:>7}  {:>6}",
            "fold", "AUC", "RMSE", "tests"
        );
        for f in &self.folds {
            let _ = writeln!(
                out,
                "{:>5}  {:>7.4}  {:>7.4}  {:>6}",
                f.fold, f.auc, f.rmse, f.test_interactions
            );
        }
        let _ = writeln!(
            out,
            "{:>5}  {:>7.4}  {:>7.4}",
            "avg", self.avg_auc, self.avg_rmse
        );
        out
    }
}

fn run_fold(
    records: &[InteractionRecord],
    folds: &FoldAssignment,
    fold: usize,
    cfg: &PipelineConfig,
) -> Result<FoldMetrics> {
    let (train, test) = folds.partition(records, fold);
    let pipeline = train_pipeline(&train, folds.seed, cfg)?;
    let preds = pipeline.score(test.iter().copied())?;
    let auc = if cfg.macro_auc {
        macro_auc(&preds)?
    } else {
        auc(&preds)?
    };
    let count_students =
        |rs: &[&InteractionRecord]| rs.iter().map(|r| &r.student).collect::<BTreeSet<_>>().len();
    Ok(FoldMetrics {
        fold,
        auc,
        rmse: rmse(&preds)?,
        train_students: count_students(&train),
        test_students: count_students(&test),
        test_interactions: test.len(),
    })
}

/// Cross-validate with an explicit fold assignment.
pub fn cross_validate_with_folds(
    records: &[InteractionRecord],
    folds: &FoldAssignment,
    cfg: &PipelineConfig,
) -> Result<EvalReport> {
    cfg.validate()?;
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }

    #[cfg(feature = "parallel")]
    let metrics: Vec<FoldMetrics> = {
        use rayon::prelude::*;
        (0..folds.k)
            .into_par_iter()
            .map(|f| run_fold(records, folds, f, cfg))
            .collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let metrics: Vec<FoldMetrics> = (0..folds.k)
        .map(|f| run_fold(records, folds, f, cfg))
        .collect::<Result<_>>()?;

    let k = metrics.len() as f64;
    let avg_auc = metrics.iter().map(|m| m.auc).sum::<f64>() / k;
    let avg_rmse = metrics.iter().map(|m| m.rmse).sum::<f64>() / k;
    let mut config = cfg.clone();
    config.fit.seed = folds.seed;
    Ok(EvalReport {
        k: folds.k,
        seed: folds.seed,
        folds: metrics,
        avg_auc,
        avg_rmse,
        counts: DatasetCounts::of(records),
        config,
    })
}

/// Student-level k-fold cross-validation: each fold trains every model on
/// the other folds' students and scores the held-out students online.
pub fn cross_validate(
    records: &[InteractionRecord],
    k: usize,
    seed: u64,
    cfg: &PipelineConfig,
) -> Result<EvalReport> {
    let folds = split_folds(records, k, seed)?;
    cross_validate_with_folds(records, &folds, cfg)
}
