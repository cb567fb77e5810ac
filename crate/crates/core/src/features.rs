//! The five evidence features fed to the TAN classifier.
//!
//! * skill id
//! * skill mastery: the BKT prior P(L_t) before the outcome at `t`, binned
//! * problem difficulty: first-attempt success rate of the problem on the
//!   training students, mapped to levels `0..=10` (5 when under-observed)
//! * `sr_profile`: the student's past success rate on the current skill
//! * `df_profile`: the student's past success rate on problems at the
//!   current problem's difficulty level
//!
//! Profiles only look at interactions strictly before the current one, and a
//! student with no relevant history gets the sentinel bin `B`.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::Serialize;

use crate::bkt::{self, BktModel};
use crate::error::{Error, Result};
use crate::ids::{ProblemId, SkillId, StudentId};
use crate::ingest::InteractionRecord;

pub const DIFFICULTY_LEVELS: usize = 11;
pub const DEFAULT_DIFFICULTY: u8 = 5;
/// Problems need at least this many first attempts to get a measured level.
pub const MIN_DIFFICULTY_ATTEMPTS: usize = 4;
pub const DEFAULT_BINS: usize = 10;

const TABLE_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DifficultyTable {
    pub levels: BTreeMap<ProblemId, u8>,
    pub default_level: u8,
    pub seed: Option<u64>,
}

impl Default for DifficultyTable {
    fn default() -> Self {
        DifficultyTable {
            levels: BTreeMap::new(),
            default_level: DEFAULT_DIFFICULTY,
            seed: None,
        }
    }
}

/// Success rate mapped onto `0..=10`.
pub fn difficulty_level(correct: usize, attempts: usize) -> u8 {
    debug_assert!(attempts > 0 && correct <= attempts);
    // Integer arithmetic keeps floor(rate * 10) exact.
    ((correct * 10) / attempts).min(10) as u8
}

impl DifficultyTable {
    pub fn level(&self, problem: &ProblemId) -> u8 {
        self.levels
            .get(problem)
            .copied()
            .unwrap_or(self.default_level)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("#version={TABLE_VERSION}\n");
        if let Some(seed) = self.seed {
            let _ = writeln!(out, "#seed={seed}");
        }
        let _ = writeln!(out, "#default={}", self.default_level);
        for (problem, level) in &self.levels {
            let _ = writeln!(out, "{problem}\t{level}");
        }
        out
    }

    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(self.to_text().as_bytes())
    }

    pub fn read<R: BufRead>(input: R) -> Result<DifficultyTable> {
        let mut table = DifficultyTable::default();
        let mut saw_version = false;
        for (i, line) in input.lines().enumerate() {
            let line_no = i + 1;
            let line = line.map_err(|e| Error::io("<difficulty table>", e))?;
            if !saw_version {
                let version = line
                    .strip_prefix("#version=")
                    .ok_or_else(|| Error::format(line_no, "expected #version header"))?;
                if version != TABLE_VERSION {
                    return Err(Error::VersionMismatch {
                        found: version.into(),
                        expected: TABLE_VERSION.into(),
                    });
                }
                saw_version = true;
                continue;
            }
            let parse_level = |s: &str| -> Result<u8> {
                s.parse::<u8>()
                    .ok()
                    .filter(|&l| usize::from(l) < DIFFICULTY_LEVELS)
                    .ok_or_else(|| Error::format(line_no, format!("bad difficulty level {s:?}")))
            };
            if let Some(seed) = line.strip_prefix("#seed=") {
                table.seed = Some(
                    seed.parse()
                        .map_err(|_| Error::format(line_no, "bad seed"))?,
                );
            } else if let Some(level) = line.strip_prefix("#default=") {
                table.default_level = parse_level(level)?;
            } else if !line.is_empty() && !line.starts_with('#') {
                let (problem, level) = line
                    .split_once('\t')
                    .ok_or_else(|| Error::format(line_no, "expected problem<TAB>level"))?;
                table
                    .levels
                    .insert(ProblemId::new(problem), parse_level(level)?);
            }
        }
        if !saw_version {
            return Err(Error::format(0, "empty difficulty table"));
        }
        Ok(table)
    }
}

/// Build the difficulty table from training interactions only.
pub fn compute_difficulty_table<'a, I>(train: I) -> DifficultyTable
where
    I: IntoIterator<Item = &'a InteractionRecord>,
{
    // Cleaned records already hold one first attempt per (student, problem).
    let mut tallies: BTreeMap<&ProblemId, (usize, usize)> = BTreeMap::new();
    for r in train {
        let t = tallies.entry(&r.problem).or_default();
        t.0 += usize::from(r.outcome);
        t.1 += 1;
    }
    let levels = tallies
        .into_iter()
        .filter(|(_, (_, n))| *n >= MIN_DIFFICULTY_ATTEMPTS)
        .map(|(p, (c, n))| (p.clone(), difficulty_level(c, n)))
        .collect();
    DifficultyTable {
        levels,
        ..Default::default()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Tally {
    pub correct: u32,
    pub attempts: u32,
}

impl Tally {
    fn record(&mut self, correct: bool) {
        self.attempts += 1;
        self.correct += u32::from(correct);
    }

    fn rate(&self) -> Option<f64> {
        (self.attempts > 0).then(|| f64::from(self.correct) / f64::from(self.attempts))
    }
}

/// One student's running history.
#[derive(Debug, Clone, Default)]
pub struct ProfileState {
    pub skills: HashMap<SkillId, Tally>,
    pub levels: [Tally; DIFFICULTY_LEVELS],
}

impl ProfileState {
    pub fn record(&mut self, skill: &SkillId, level: u8, correct: bool) {
        self.skills
            .entry(skill.clone())
            .or_default()
            .record(correct);
        self.levels[usize::from(level)].record(correct);
    }
}

/// Past success rate on `skill`; `None` when there is no history.
pub fn sr_profile(state: &ProfileState, skill: &SkillId) -> Option<f64> {
    state.skills.get(skill).and_then(Tally::rate)
}

/// Past success rate at difficulty `level`; `None` when there is no history.
pub fn df_profile(state: &ProfileState, level: u8) -> Option<f64> {
    state.levels.get(usize::from(level)).and_then(Tally::rate)
}

/// Equal-width bin of a probability: `floor(value * bins)`, with 1.0 in the last bin.
pub fn discretize(value: f64, bins: usize) -> Result<usize> {
    if bins < 2 {
        return Err(Error::Config(format!(
            "bin count must be at least 2, got {bins}"
        )));
    }
    if !(0.0..=1.0).contains(&value) {
        return Err(Error::InvalidInput(format!("value {value} outside [0, 1]")));
    }
    Ok(((value * bins as f64).floor() as usize).min(bins - 1))
}

/// Like [`discretize`], mapping "no history" to the sentinel bin `bins`.
pub fn discretize_profile(value: Option<f64>, bins: usize) -> Result<usize> {
    match value {
        Some(v) => discretize(v, bins),
        None if bins >= 2 => Ok(bins),
        None => discretize(0.0, bins),
    }
}

/// Discretized features and label of one attempt.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct EvidenceRow {
    pub student: StudentId,
    pub seq_index: u32,
    pub skill: SkillId,
    pub mastery_bin: usize,
    pub sr_bin: usize,
    pub df_bin: usize,
    pub difficulty: u8,
    pub label: bool,
}

/// Raw (unbinned) feature values, kept for explanations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureValues {
    pub mastery: f64,
    pub sr_profile: Option<f64>,
    pub df_profile: Option<f64>,
    pub difficulty: u8,
}

/// Online feature state for a single student. Model parameters are frozen;
/// the student's beliefs and tallies evolve with every observed outcome.
#[derive(Debug, Clone)]
pub struct StudentTracker<'m> {
    bkt: &'m BktModel,
    table: &'m DifficultyTable,
    bins: usize,
    beliefs: HashMap<SkillId, f64>,
    profile: ProfileState,
}

impl<'m> StudentTracker<'m> {
    pub fn new(bkt: &'m BktModel, table: &'m DifficultyTable, bins: usize) -> Result<Self> {
        if bins < 2 {
            return Err(Error::Config(format!(
                "bin count must be at least 2, got {bins}"
            )));
        }
        Ok(StudentTracker {
            bkt,
            table,
            bins,
            beliefs: HashMap::new(),
            profile: ProfileState::default(),
        })
    }

    /// Features for the next attempt, using history observed so far.
    pub fn features(&self, skill: &SkillId, problem: &ProblemId) -> FeatureValues {
        let difficulty = self.table.level(problem);
        let mastery = self
            .beliefs
            .get(skill)
            .copied()
            .unwrap_or_else(|| self.bkt.params(skill).p_init);
        FeatureValues {
            mastery,
            sr_profile: sr_profile(&self.profile, skill),
            df_profile: df_profile(&self.profile, difficulty),
            difficulty,
        }
    }

    pub fn evidence(&self, record: &InteractionRecord) -> Result<(EvidenceRow, FeatureValues)> {
        let values = self.features(&record.skill, &record.problem);
        let row = EvidenceRow {
            student: record.student.clone(),
            seq_index: record.seq_index,
            skill: record.skill.clone(),
            mastery_bin: discretize(values.mastery, self.bins)?,
            sr_bin: discretize_profile(values.sr_profile, self.bins)?,
            df_bin: discretize_profile(values.df_profile, self.bins)?,
            difficulty: values.difficulty,
            label: record.outcome,
        };
        Ok((row, values))
    }

    /// Fold the observed outcome into the student's state.
    pub fn observe(&mut self, skill: &SkillId, problem: &ProblemId, correct: bool) {
        let params = self.bkt.params(skill);
        let belief = self.beliefs.entry(skill.clone()).or_insert(params.p_init);
        *belief = bkt::advance(&params, *belief, correct);
        let level = self.table.level(problem);
        self.profile.record(skill, level, correct);
    }
}

/// Group records per student, each sorted by `seq_index`, students in id order.
pub fn by_student<'a, I>(records: I) -> BTreeMap<&'a StudentId, Vec<&'a InteractionRecord>>
where
    I: IntoIterator<Item = &'a InteractionRecord>,
{
    let mut grouped: BTreeMap<&StudentId, Vec<&InteractionRecord>> = BTreeMap::new();
    for r in records {
        grouped.entry(&r.student).or_default().push(r);
    }
    for seq in grouped.values_mut() {
        seq.sort_by_key(|r| r.seq_index);
    }
    grouped
}

fn student_rows(
    seq: &[&InteractionRecord],
    table: &DifficultyTable,
    bkt: &BktModel,
    bins: usize,
) -> Result<Vec<EvidenceRow>> {
    let mut tracker = StudentTracker::new(bkt, table, bins)?;
    seq.iter()
        .map(|r| {
            let (row, _) = tracker.evidence(r)?;
            tracker.observe(&r.skill, &r.problem, r.outcome);
            Ok(row)
        })
        .collect()
}

/// One evidence row per record, ordered by `(student, seq_index)`.
pub fn build_evidence_rows<'a, I>(
    records: I,
    table: &DifficultyTable,
    bkt: &BktModel,
    bins: usize,
) -> Result<Vec<EvidenceRow>>
where
    I: IntoIterator<Item = &'a InteractionRecord>,
{
    let grouped: Vec<Vec<&InteractionRecord>> = by_student(records).into_values().collect();

    #[cfg(feature = "parallel")]
    let per_student: Vec<Vec<EvidenceRow>> = {
        use rayon::prelude::*;
        grouped
            .par_iter()
            .map(|seq| student_rows(seq, table, bkt, bins))
            .collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let per_student: Vec<Vec<EvidenceRow>> = grouped
        .iter()
        .map(|seq| student_rows(seq, table, bkt, bins))
        .collect::<Result<_>>()?;

    Ok(per_student.into_iter().flatten().collect())
}

/// Debug dump: `student,seq_index,skill,mastery_bin,sr_bin,df_bin,difficulty,label`.
pub fn write_feature_dump<W: Write>(rows: &[EvidenceRow], out: W) -> Result<()> {
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    writer.write_record([
        "student",
        "seq_index",
        "skill",
        "mastery_bin",
        "sr_bin",
        "df_bin",
        "difficulty",
        "label",
    ])?;
    for r in rows {
        writer.write_record([
            r.student.to_string(),
            r.seq_index.to_string(),
            r.skill.to_string(),
            r.mastery_bin.to_string(),
            r.sr_bin.to_string(),
            r.df_bin.to_string(),
            r.difficulty.to_string(),
            u8::from(r.label).to_string(),
        ])?;
    }
    writer.flush().map_err(|e| Error::io("<feature dump>", e))?;
    Ok(())
}
