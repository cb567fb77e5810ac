//! Synthetic interaction logs sampled from known BKT parameters.
//!
//! Hidden knowledge states are sampled directly, so the generator shares no
//! code with the filtering or fitting routines it is used to check.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bkt::BktParams;
use crate::ids::{ProblemId, SkillId, StudentId};
use crate::ingest::InteractionRecord;

/// Sample one outcome sequence of length `len`.
pub fn sample_sequence<R: Rng>(params: &BktParams, len: usize, rng: &mut R) -> Vec<bool> {
    let mut known = rng.gen_bool(params.p_init);
    (0..len)
        .map(|_| {
            let correct = if known {
                !rng.gen_bool(params.p_slip)
            } else {
                rng.gen_bool(params.p_guess)
            };
            if !known {
                known = rng.gen_bool(params.p_learn);
            }
            correct
        })
        .collect()
}

pub fn sample_sequences(params: &BktParams, count: usize, len: usize, seed: u64) -> Vec<Vec<bool>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| sample_sequence(params, len, &mut rng))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub students: usize,
    /// Ground-truth parameters, one entry per skill.
    pub skills: Vec<BktParams>,
    pub attempts_per_skill: usize,
    /// Must be at least `attempts_per_skill` so every attempt is a new problem.
    pub problems_per_skill: usize,
    pub seed: u64,
}

impl SyntheticConfig {
    /// `skills` skills with parameters spread over a plausible range.
    pub fn with_skills(students: usize, skills: usize, seed: u64) -> Self {
        let skills = (0..skills)
            .map(|i| {
                let f = if skills > 1 {
                    i as f64 / (skills - 1) as f64
                } else {
                    0.5
                };
                BktParams::new(
                    0.15 + 0.3 * f,
                    0.3 - 0.15 * f,
                    0.1 + 0.1 * f,
                    0.05 + 0.1 * f,
                )
            })
            .collect();
        SyntheticConfig {
            students,
            skills,
            attempts_per_skill: 12,
            problems_per_skill: 40,
            seed,
        }
    }
}

pub fn skill_id(index: usize) -> SkillId {
    SkillId::new(format!("skill{index}"))
}

/// Cleaned records for every student, skills interleaved at random.
pub fn generate(cfg: &SyntheticConfig) -> Vec<InteractionRecord> {
    assert!(
        cfg.problems_per_skill >= cfg.attempts_per_skill,
        "need at least one problem per attempt"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let width = cfg.students.max(1).to_string().len();
    let mut records = Vec::with_capacity(cfg.students * cfg.skills.len() * cfg.attempts_per_skill);
    for s in 0..cfg.students {
        let student = StudentId::new(format!("student{s:0width$}"));
        let mut schedule: Vec<usize> = (0..cfg.skills.len())
            .flat_map(|k| std::iter::repeat_n(k, cfg.attempts_per_skill))
            .collect();
        schedule.shuffle(&mut rng);
        let outcomes: Vec<Vec<bool>> = cfg
            .skills
            .iter()
            .map(|p| sample_sequence(p, cfg.attempts_per_skill, &mut rng))
            .collect();
        let problems: Vec<Vec<usize>> = (0..cfg.skills.len())
            .map(|_| {
                let mut pool: Vec<usize> = (0..cfg.problems_per_skill).collect();
                pool.shuffle(&mut rng);
                pool
            })
            .collect();
        let mut next = vec![0usize; cfg.skills.len()];
        for (i, &k) in schedule.iter().enumerate() {
            let n = next[k];
            next[k] += 1;
            records.push(InteractionRecord {
                student: student.clone(),
                problem: ProblemId::new(format!("skill{k}-p{}", problems[k][n])),
                skill: skill_id(k),
                outcome: outcomes[k][n],
                seq_index: (i + 1) as u32,
            });
        }
    }
    records
}
