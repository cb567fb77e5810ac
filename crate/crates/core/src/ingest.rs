//! Reading tutoring-system logs into cleaned per-student interaction sequences,
//! and student-level fold assignment for cross-validation.
//!
//! Cleaning keeps, for every `(student, problem)` pair, only the chronologically
//! first attempt on an original problem with a known skill tag. The survivors
//! are re-indexed `1..=n` per student.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::{ProblemId, SkillId, StudentId};

/// Separator used by several public datasets for multi-skill tags.
const MULTI_SKILL_SEPARATOR: &str = "~~";

/// Column names of the raw log. Only `original` and `timestamp` are optional.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    pub order: String,
    pub student: String,
    pub problem: String,
    pub skill: String,
    pub correct: String,
    /// 0/1 flag marking original (non-scaffolding) problems.
    #[serde(default, rename = "original-flag", alias = "original")]
    pub original: Option<String>,
    /// Integer fallback ordering used when the order column is empty.
    #[serde(default)]
    pub timestamp: Option<String>,
}

impl Default for Schema {
    /// ASSISTments 2009-2010 skill-builder column names.
    fn default() -> Self {
        Schema {
            order: "order_id".into(),
            student: "user_id".into(),
            problem: "problem_id".into(),
            skill: "skill_id".into(),
            correct: "correct".into(),
            original: Some("original".into()),
            timestamp: None,
        }
    }
}

impl Schema {
    /// Schema of the normalized interactions file written by [`write_normalized`].
    pub fn normalized() -> Self {
        Schema {
            order: "seq_index".into(),
            student: "student".into(),
            problem: "problem".into(),
            skill: "skill".into(),
            correct: "outcome".into(),
            original: None,
            timestamp: None,
        }
    }
}

/// One data line of the raw log, before cleaning.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawRow {
    pub row_id: u64,
    pub student_id: String,
    pub problem_id: String,
    pub skill_id: String,
    pub outcome: u8,
    pub order_key: i64,
    pub original: Option<bool>,
}

impl RawRow {
    fn same_content(&self, other: &RawRow) -> bool {
        self.student_id == other.student_id
            && self.problem_id == other.problem_id
            && self.skill_id == other.skill_id
            && self.outcome == other.outcome
            && self.order_key == other.order_key
            && self.original == other.original
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseIssue {
    pub line: u64,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct ParseOutput {
    pub rows: Vec<RawRow>,
    pub issues: Vec<ParseIssue>,
}

/// A cleaned attempt. `seq_index` is 1-based and consecutive within a student.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub student: StudentId,
    pub problem: ProblemId,
    pub skill: SkillId,
    pub outcome: bool,
    pub seq_index: u32,
}

impl InteractionRecord {
    pub fn to_raw(&self, row_id: u64) -> RawRow {
        RawRow {
            row_id,
            student_id: self.student.to_string(),
            problem_id: self.problem.to_string(),
            skill_id: self.skill.to_string(),
            outcome: self.outcome as u8,
            order_key: i64::from(self.seq_index),
            original: None,
        }
    }
}

/// Why rows were dropped during cleaning.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CleanReport {
    pub input_rows: usize,
    pub missing_student: usize,
    pub missing_skill: usize,
    pub missing_problem: usize,
    pub non_original: usize,
    pub exact_duplicates: usize,
    pub repeat_attempts: usize,
    pub kept: usize,
}

impl CleanReport {
    pub fn dropped(&self) -> usize {
        self.input_rows - self.kept
    }
}

#[derive(Debug, Clone)]
pub struct CleanOutput {
    pub records: Vec<InteractionRecord>,
    pub report: CleanReport,
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::Config(format!("missing required column {name:?}")))
}

fn parse_order(field: &str) -> Option<i64> {
    let field = field.trim();
    field.parse::<i64>().ok().or_else(|| {
        field
            .parse::<f64>()
            .ok()
            .filter(|v| v.fract() == 0.0)
            .map(|v| v as i64)
    })
}

/// Parse a UTF-8 CSV log with a header row.
///
/// Lines starting with `#` are comments.
/// Row-level problems (bad outcome, unparsable order key, wrong field count)
/// are collected in [`ParseOutput::issues`] with their line numbers; a missing
/// required column is a configuration error.
pub fn parse_interactions<R: Read>(source: R, schema: &Schema) -> Result<ParseOutput> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .has_headers(true)
        .comment(Some(b'#'))
        .from_reader(source);
    let headers = reader.headers()?.clone();
    let order = column(&headers, &schema.order)?;
    let student = column(&headers, &schema.student)?;
    let problem = column(&headers, &schema.problem)?;
    let skill = column(&headers, &schema.skill)?;
    let correct = column(&headers, &schema.correct)?;
    let original = schema
        .original
        .as_deref()
        .and_then(|name| headers.iter().position(|h| h.trim() == name));
    let timestamp = match schema.timestamp.as_deref() {
        Some(name) => Some(column(&headers, name)?),
        None => None,
    };

    let mut out = ParseOutput::default();
    let mut record = csv::StringRecord::new();
    let mut row_id = 0u64;
    loop {
        match reader.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                out.issues.push(ParseIssue {
                    line,
                    message: e.to_string(),
                });
                continue;
            }
        }
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != headers.len() {
            out.issues.push(ParseIssue {
                line,
                message: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
            continue;
        }
        let outcome = match record[correct].trim() {
            "0" => 0,
            "1" => 1,
            other => {
                out.issues.push(ParseIssue {
                    line,
                    message: format!("outcome must be 0 or 1, found {other:?}"),
                });
                continue;
            }
        };
        let order_field = record[order].trim();
        let order_key = if order_field.is_empty() {
            timestamp.and_then(|i| parse_order(&record[i]))
        } else {
            parse_order(order_field)
        };
        let Some(order_key) = order_key else {
            out.issues.push(ParseIssue {
                line,
                message: format!("unparsable order key {order_field:?}"),
            });
            continue;
        };
        let original = match original.map(|i| record[i].trim()) {
            None | Some("") => None,
            Some("0") => Some(false),
            Some("1") => Some(true),
            Some(other) => {
                out.issues.push(ParseIssue {
                    line,
                    message: format!("original flag must be 0 or 1, found {other:?}"),
                });
                continue;
            }
        };
        let skill_id = record[skill]
            .split(MULTI_SKILL_SEPARATOR)
            .next()
            .unwrap_or("")
            .trim()
            .to_owned();
        out.rows.push(RawRow {
            row_id,
            student_id: record[student].trim().to_owned(),
            problem_id: record[problem].trim().to_owned(),
            skill_id,
            outcome,
            order_key,
            original,
        });
        row_id += 1;
    }
    Ok(out)
}

/// Clean raw rows into per-student ordered interaction sequences.
///
/// Output is sorted by `(student, seq_index)`.
pub fn clean(rows: Vec<RawRow>) -> CleanOutput {
    let mut report = CleanReport {
        input_rows: rows.len(),
        ..Default::default()
    };

    let mut rows: Vec<RawRow> = rows
        .into_iter()
        .filter(|r| {
            if r.student_id.is_empty() {
                report.missing_student += 1;
                false
            } else if r.skill_id.is_empty() {
                report.missing_skill += 1;
                false
            } else if r.problem_id.is_empty() {
                report.missing_problem += 1;
                false
            } else if r.original == Some(false) {
                report.non_original += 1;
                false
            } else {
                true
            }
        })
        .collect();

    // Chronological order within each student; ties fall back to the raw row id.
    rows.sort_by(|a, b| {
        (&a.student_id, a.order_key, a.row_id).cmp(&(&b.student_id, b.order_key, b.row_id))
    });

    let mut records = Vec::with_capacity(rows.len());
    let mut seen: HashMap<&str, &RawRow> = HashMap::new();
    let mut current_student: Option<&str> = None;
    let mut seq_index = 0u32;
    for row in &rows {
        if current_student != Some(row.student_id.as_str()) {
            current_student = Some(row.student_id.as_str());
            seen.clear();
            seq_index = 0;
        }
        if let Some(first) = seen.get(row.problem_id.as_str()) {
            if first.same_content(row) {
                report.exact_duplicates += 1;
            } else {
                report.repeat_attempts += 1;
            }
            continue;
        }
        seen.insert(row.problem_id.as_str(), row);
        seq_index += 1;
        records.push(InteractionRecord {
            student: StudentId::new(row.student_id.as_str()),
            problem: ProblemId::new(row.problem_id.as_str()),
            skill: SkillId::new(row.skill_id.as_str()),
            outcome: row.outcome == 1,
            seq_index,
        });
    }
    report.kept = records.len();
    CleanOutput { records, report }
}

/// Write the normalized interactions file: `student,problem,skill,outcome,seq_index`,
/// sorted by `(student, seq_index)`.
pub fn write_normalized<W: Write>(records: &[InteractionRecord], out: W) -> Result<()> {
    let mut sorted: Vec<&InteractionRecord> = records.iter().collect();
    sorted.sort_by(|a, b| (&a.student, a.seq_index).cmp(&(&b.student, b.seq_index)));
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    writer.write_record(["student", "problem", "skill", "outcome", "seq_index"])?;
    for r in sorted {
        writer.write_record([
            r.student.as_str(),
            r.problem.as_str(),
            r.skill.as_str(),
            if r.outcome { "1" } else { "0" },
            &r.seq_index.to_string(),
        ])?;
    }
    writer
        .flush()
        .map_err(|e| Error::io("<normalized output>", e))?;
    Ok(())
}

/// Read a normalized interactions file. Any malformed line is an error here,
/// since the file is expected to be produced by [`write_normalized`].
pub fn read_normalized<R: Read>(source: R) -> Result<Vec<InteractionRecord>> {
    let parsed = parse_interactions(source, &Schema::normalized())?;
    if let Some(issue) = parsed.issues.first() {
        return Err(Error::InvalidInput(format!(
            "line {}: {}",
            issue.line, issue.message
        )));
    }
    Ok(clean(parsed.rows).records)
}

/// Students sorted by id, each mapped to a fold in `0..k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub seed: u64,
    pub student_to_fold: BTreeMap<StudentId, usize>,
}

impl FoldAssignment {
    pub fn fold_of(&self, student: &StudentId) -> Option<usize> {
        self.student_to_fold.get(student).copied()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.student_to_fold.values() {
            sizes[f] += 1;
        }
        sizes
    }

    /// Split records into (train, test) for one fold.
    pub fn partition<'a>(
        &self,
        records: &'a [InteractionRecord],
        fold: usize,
    ) -> (Vec<&'a InteractionRecord>, Vec<&'a InteractionRecord>) {
        records
            .iter()
            .partition(|r| self.fold_of(&r.student) != Some(fold))
    }
}

/// Assign students (never individual interactions) to `k` folds.
///
/// The sorted student list is shuffled with a seeded PRNG and dealt
/// round-robin, so fold sizes differ by at most one.
pub fn split_folds(records: &[InteractionRecord], k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::Config(format!("k must be at least 2, got {k}")));
    }
    let mut students: Vec<&StudentId> = records
        .iter()
        .map(|r| &r.student)
        .collect::<HashSet<_>>()
        .into_iter()
        .collect();
    if students.len() < k {
        return Err(Error::NotEnoughStudents {
            students: students.len(),
            k,
        });
    }
    students.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    students.shuffle(&mut rng);
    let student_to_fold = students
        .into_iter()
        .enumerate()
        .map(|(i, s)| (s.clone(), i % k))
        .collect();
    Ok(FoldAssignment {
        k,
        seed,
        student_to_fold,
    })
}
