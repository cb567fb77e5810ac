//! Classical four-parameter Bayesian Knowledge Tracing.
//!
//! Each skill is a two-state hidden Markov model (unknown / known) with an
//! absorbing known state. Beliefs are updated with the Bayes rule on the
//! observed outcome and then pushed forward by the learning transition.
//! Parameters are estimated with Baum-Welch EM from several seeded restarts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::SkillId;
use crate::ingest::InteractionRecord;

/// Probability clamp used for fitted parameters and per-step likelihoods.
pub const PROB_EPS: f64 = 1e-3;

pub const MODEL_VERSION: &str = "1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BktParams {
    /// P(L0): the student already knows the skill before practice.
    pub p_init: f64,
    /// P(T): transition from unknown to known after an opportunity.
    pub p_learn: f64,
    /// P(G): correct answer without mastery.
    pub p_guess: f64,
    /// P(S): incorrect answer despite mastery.
    pub p_slip: f64,
}

impl Default for BktParams {
    /// Parameters assigned to skills with too little data to fit.
    fn default() -> Self {
        BktParams {
            p_init: 0.5,
            p_learn: 0.1,
            p_guess: 0.2,
            p_slip: 0.1,
        }
    }
}

impl BktParams {
    pub fn new(p_init: f64, p_learn: f64, p_guess: f64, p_slip: f64) -> Self {
        BktParams {
            p_init,
            p_learn,
            p_guess,
            p_slip,
        }
    }

    /// Project onto `[ε, 1−ε]` and the optional guess/slip caps.
    pub fn clamped(self, guess_cap: Option<f64>, slip_cap: Option<f64>) -> Self {
        let c = |v: f64| v.clamp(PROB_EPS, 1.0 - PROB_EPS);
        let cap = |v: f64, cap: Option<f64>| cap.map_or(v, |cap| v.min(cap.max(PROB_EPS)));
        BktParams {
            p_init: c(self.p_init),
            p_learn: c(self.p_learn),
            p_guess: cap(c(self.p_guess), guess_cap),
            p_slip: cap(c(self.p_slip), slip_cap),
        }
    }

    fn is_valid(&self) -> bool {
        [self.p_init, self.p_learn, self.p_guess, self.p_slip]
            .iter()
            .all(|p| (0.0..=1.0).contains(p))
    }
}

/// P(L_t | correct).
pub fn posterior_given_correct(params: &BktParams, p_l: f64) -> f64 {
    let known = p_l * (1.0 - params.p_slip);
    let denom = known + (1.0 - p_l) * params.p_guess;
    if denom > 0.0 {
        known / denom
    } else {
        p_l
    }
}

/// P(L_t | incorrect).
pub fn posterior_given_incorrect(params: &BktParams, p_l: f64) -> f64 {
    let known = p_l * params.p_slip;
    let denom = known + (1.0 - p_l) * (1.0 - params.p_guess);
    if denom > 0.0 {
        known / denom
    } else {
        p_l
    }
}

pub fn posterior(params: &BktParams, p_l: f64, correct: bool) -> f64 {
    if correct {
        posterior_given_correct(params, p_l)
    } else {
        posterior_given_incorrect(params, p_l)
    }
}

/// Learning transition applied to a posterior belief.
pub fn apply_learning(params: &BktParams, p_posterior: f64) -> f64 {
    p_posterior + (1.0 - p_posterior) * params.p_learn
}

/// Prior for the next opportunity after observing `correct` at belief `p_l`.
pub fn advance(params: &BktParams, p_l: f64, correct: bool) -> f64 {
    apply_learning(params, posterior(params, p_l, correct))
}

/// Probability of a correct answer at mastery belief `p_l`.
pub fn predict_correct(params: &BktParams, p_l: f64) -> f64 {
    p_l * (1.0 - params.p_slip) + (1.0 - p_l) * params.p_guess
}

/// Mastery priors P(L_t) for one student on one skill, each computed from
/// the outcomes strictly before `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct MasteryTrace {
    pub priors: Vec<f64>,
}

pub fn trace_mastery(params: &BktParams, outcomes: &[bool]) -> MasteryTrace {
    let mut priors = Vec::with_capacity(outcomes.len());
    let mut p_l = params.p_init;
    for &correct in outcomes {
        priors.push(p_l);
        p_l = advance(params, p_l, correct);
    }
    MasteryTrace { priors }
}

/// Total log-likelihood of the observed outcome sequences under `params`.
///
/// Each step's predicted probability is clamped to `[ε, 1−ε]` before the log.
pub fn log_likelihood<S: AsRef<[bool]>>(params: &BktParams, sequences: &[S]) -> f64 {
    let mut total = 0.0;
    for seq in sequences {
        let mut p_l = params.p_init;
        for &correct in seq.as_ref() {
            let p = predict_correct(params, p_l).clamp(PROB_EPS, 1.0 - PROB_EPS);
            total += if correct { p.ln() } else { (1.0 - p).ln() };
            p_l = advance(params, p_l, correct);
        }
    }
    total
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub restarts: usize,
    pub max_iters: usize,
    /// Convergence threshold on the change of total log-likelihood.
    pub tol: f64,
    pub seed: u64,
    /// `None` disables the cap.
    pub guess_cap: Option<f64>,
    pub slip_cap: Option<f64>,
    /// Skills with fewer total attempts get [`BktParams::default`].
    pub min_attempts: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            restarts: 5,
            max_iters: 200,
            tol: 1e-4,
            seed: 42,
            guess_cap: Some(0.3),
            slip_cap: Some(0.3),
            min_attempts: 5,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(Error::Config("restarts must be at least 1".into()));
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(Error::Config("tol must be positive".into()));
        }
        for cap in [self.guess_cap, self.slip_cap].into_iter().flatten() {
            if !(PROB_EPS..=1.0).contains(&cap) {
                return Err(Error::Config(format!("cap {cap} outside [{PROB_EPS}, 1]")));
            }
        }
        Ok(())
    }
}

/// One EM run from a single initialization.
#[derive(Debug, Clone)]
pub struct EmRun {
    pub initial: BktParams,
    pub params: BktParams,
    /// Log-likelihood of the initial parameters followed by the value after
    /// every completed iteration.
    pub history: Vec<f64>,
    pub converged: bool,
}

impl EmRun {
    pub fn final_log_likelihood(&self) -> f64 {
        *self
            .history
            .last()
            .expect("history always holds the initial value")
    }
}

#[derive(Debug, Clone)]
pub struct EmFit {
    pub best: BktParams,
    pub best_log_likelihood: f64,
    pub runs: Vec<EmRun>,
}

#[derive(Default)]
struct Expectations {
    log_likelihood: f64,
    sequences: f64,
    init_known: f64,
    learn_num: f64,
    learn_den: f64,
    guess_num: f64,
    guess_den: f64,
    slip_num: f64,
    slip_den: f64,
}

// Emission probabilities (unknown, known) for an outcome.
fn emissions(params: &BktParams, correct: bool) -> (f64, f64) {
    if correct {
        (params.p_guess, 1.0 - params.p_slip)
    } else {
        (1.0 - params.p_guess, params.p_slip)
    }
}

/// Scaled forward-backward over every sequence, accumulating expected counts.
fn expectations<S: AsRef<[bool]>>(params: &BktParams, sequences: &[S]) -> Expectations {
    let mut acc = Expectations::default();
    let t = params.p_learn;
    let mut alpha: Vec<(f64, f64)> = Vec::new();
    let mut scale: Vec<f64> = Vec::new();
    let mut beta: Vec<(f64, f64)> = Vec::new();
    for seq in sequences {
        let seq = seq.as_ref();
        let n = seq.len();
        if n == 0 {
            continue;
        }
        alpha.clear();
        scale.clear();
        let mut prev: Option<(f64, f64)> = None;
        for &obs in seq {
            let (bu, bk) = emissions(params, obs);
            let (pu, pk) = match prev {
                None => (1.0 - params.p_init, params.p_init),
                Some((au, ak)) => (au * (1.0 - t), ak + au * t),
            };
            let (u, k) = (pu * bu, pk * bk);
            let c = (u + k).max(f64::MIN_POSITIVE);
            scale.push(c);
            let a = (u / c, k / c);
            alpha.push(a);
            prev = Some(a);
        }
        acc.log_likelihood += scale.iter().map(|c| c.ln()).sum::<f64>();

        beta.clear();
        beta.resize(n, (1.0, 1.0));
        for i in (0..n - 1).rev() {
            let (bu, bk) = emissions(params, seq[i + 1]);
            let (nu, nk) = beta[i + 1];
            let c = scale[i + 1];
            beta[i] = (((1.0 - t) * bu * nu + t * bk * nk) / c, bk * nk / c);
        }

        acc.sequences += 1.0;
        for i in 0..n {
            let (au, ak) = alpha[i];
            let (bu_, bk_) = beta[i];
            let gu = au * bu_;
            let gk = ak * bk_;
            let norm = gu + gk;
            let (gu, gk) = if norm > 0.0 {
                (gu / norm, gk / norm)
            } else {
                (0.5, 0.5)
            };
            if i == 0 {
                acc.init_known += gk;
            }
            if i + 1 < n {
                let (_, bk) = emissions(params, seq[i + 1]);
                acc.learn_num += au * t * bk * beta[i + 1].1 / scale[i + 1];
                acc.learn_den += gu;
            }
            acc.guess_den += gu;
            acc.slip_den += gk;
            if seq[i] {
                acc.guess_num += gu;
            } else {
                acc.slip_num += gk;
            }
        }
    }
    acc
}

fn ratio_or(num: f64, den: f64, fallback: f64) -> f64 {
    if den > 1e-12 {
        num / den
    } else {
        fallback
    }
}

/// Run EM from `initial` until the log-likelihood gain drops below `cfg.tol`
/// or `cfg.max_iters` iterations complete.
///
/// The M-step maximizes each parameter's own Bernoulli term and projects it
/// onto the feasible box, so the log-likelihood never decreases.
pub fn em_run<S: AsRef<[bool]>>(sequences: &[S], initial: BktParams, cfg: &FitConfig) -> EmRun {
    let mut params = initial.clamped(cfg.guess_cap, cfg.slip_cap);
    let mut history = Vec::with_capacity(cfg.max_iters + 1);
    let mut acc = expectations(&params, sequences);
    history.push(acc.log_likelihood);
    let mut converged = false;
    for _ in 0..cfg.max_iters {
        params = BktParams {
            p_init: ratio_or(acc.init_known, acc.sequences, params.p_init),
            p_learn: ratio_or(acc.learn_num, acc.learn_den, params.p_learn),
            p_guess: ratio_or(acc.guess_num, acc.guess_den, params.p_guess),
            p_slip: ratio_or(acc.slip_num, acc.slip_den, params.p_slip),
        }
        .clamped(cfg.guess_cap, cfg.slip_cap);
        let previous = acc.log_likelihood;
        acc = expectations(&params, sequences);
        history.push(acc.log_likelihood);
        if (acc.log_likelihood - previous).abs() < cfg.tol {
            converged = true;
            break;
        }
    }
    EmRun {
        initial,
        params,
        history,
        converged,
    }
}

fn random_init(rng: &mut ChaCha8Rng, cfg: &FitConfig) -> BktParams {
    let upper = |cap: Option<f64>| cap.unwrap_or(0.95).clamp(0.05, 0.95);
    BktParams {
        p_init: rng.gen_range(0.05..=0.95),
        p_learn: rng.gen_range(0.05..=0.95),
        p_guess: rng.gen_range(0.05..=upper(cfg.guess_cap)),
        p_slip: rng.gen_range(0.05..=upper(cfg.slip_cap)),
    }
}

/// EM with `cfg.restarts` seeded random initializations, keeping every run.
pub fn fit_bkt_em_detailed<S: AsRef<[bool]>>(sequences: &[S], cfg: &FitConfig) -> Result<EmFit> {
    cfg.validate()?;
    if sequences.iter().all(|s| s.as_ref().is_empty()) {
        return Err(Error::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let runs: Vec<EmRun> = (0..cfg.restarts)
        .map(|_| {
            let init = random_init(&mut rng, cfg);
            em_run(sequences, init, cfg)
        })
        .collect();
    let mut best: Option<(BktParams, f64)> = None;
    for run in &runs {
        let ll = log_likelihood(&run.params, sequences);
        if best.is_none_or(|(_, b)| ll > b) {
            best = Some((run.params, ll));
        }
    }
    let (best, best_log_likelihood) = best.expect("restarts >= 1");
    Ok(EmFit {
        best,
        best_log_likelihood,
        runs,
    })
}

/// Best parameters over all restarts by final log-likelihood.
pub fn fit_bkt_em<S: AsRef<[bool]>>(sequences: &[S], cfg: &FitConfig) -> Result<BktParams> {
    fit_bkt_em_detailed(sequences, cfg).map(|fit| fit.best)
}

// FNV-1a, stable across platforms and releases unlike std's hasher.
fn stable_hash(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Seed of the PRNG stream used to fit `skill` under root seed `seed`.
pub fn skill_seed(seed: u64, skill: &SkillId) -> u64 {
    seed ^ stable_hash(skill.as_str())
}

/// Per-student outcome sequences for every skill, in `seq_index` order.
pub fn skill_sequences<'a, I>(records: I) -> BTreeMap<SkillId, Vec<Vec<bool>>>
where
    I: IntoIterator<Item = &'a InteractionRecord>,
{
    let mut sorted: Vec<&InteractionRecord> = records.into_iter().collect();
    sorted.sort_by(|a, b| (&a.student, a.seq_index).cmp(&(&b.student, b.seq_index)));
    let mut by_skill: BTreeMap<SkillId, BTreeMap<&str, Vec<bool>>> = BTreeMap::new();
    for r in sorted {
        by_skill
            .entry(r.skill.clone())
            .or_default()
            .entry(r.student.as_str())
            .or_default()
            .push(r.outcome);
    }
    by_skill
        .into_iter()
        .map(|(skill, students)| (skill, students.into_values().collect()))
        .collect()
}

fn fit_skill(skill: &SkillId, sequences: &[Vec<bool>], cfg: &FitConfig) -> BktParams {
    let attempts: usize = sequences.iter().map(Vec::len).sum();
    if attempts < cfg.min_attempts.max(1) {
        return BktParams::default();
    }
    let cfg = FitConfig {
        seed: skill_seed(cfg.seed, skill),
        ..cfg.clone()
    };
    fit_bkt_em(sequences, &cfg).unwrap_or_default()
}

/// Fit one parameter set per skill present in `records`.
pub fn fit_all_skills<'a, I>(records: I, cfg: &FitConfig) -> Result<BktModel>
where
    I: IntoIterator<Item = &'a InteractionRecord>,
{
    cfg.validate()?;
    let by_skill: Vec<(SkillId, Vec<Vec<bool>>)> = skill_sequences(records).into_iter().collect();

    #[cfg(feature = "parallel")]
    let fitted: Vec<(SkillId, BktParams)> = {
        use rayon::prelude::*;
        by_skill
            .into_par_iter()
            .map(|(skill, seqs)| {
                let p = fit_skill(&skill, &seqs, cfg);
                (skill, p)
            })
            .collect()
    };
    #[cfg(not(feature = "parallel"))]
    let fitted: Vec<(SkillId, BktParams)> = by_skill
        .into_iter()
        .map(|(skill, seqs)| {
            let p = fit_skill(&skill, &seqs, cfg);
            (skill, p)
        })
        .collect();

    Ok(BktModel {
        seed: Some(cfg.seed),
        skills: fitted.into_iter().collect(),
    })
}

/// Per-skill parameters with a default for unknown skills.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BktModel {
    pub seed: Option<u64>,
    pub skills: BTreeMap<SkillId, BktParams>,
}

impl BktModel {
    pub fn params(&self, skill: &SkillId) -> BktParams {
        self.skills.get(skill).copied().unwrap_or_default()
    }

    /// Parameters as they will read back from the text format (6 decimals).
    pub fn rounded(&self) -> BktModel {
        let r = |v: f64| format!("{v:.6}").parse::<f64>().expect("formatted float");
        BktModel {
            seed: self.seed,
            skills: self
                .skills
                .iter()
                .map(|(k, p)| {
                    (
                        k.clone(),
                        BktParams::new(r(p.p_init), r(p.p_learn), r(p.p_guess), r(p.p_slip)),
                    )
                })
                .collect(),
        }
    }

    /// Text format: `#version=1`, an optional `#seed=` line, then one
    /// `skill\tp_init\tp_learn\tp_guess\tp_slip` line per skill.
    pub fn to_text(&self) -> String {
        let mut out = format!("#version={MODEL_VERSION}\n");
        if let Some(seed) = self.seed {
            let _ = writeln!(out, "#seed={seed}");
        }
        for (skill, p) in &self.skills {
            let _ = writeln!(
                out,
                "{skill}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
                p.p_init, p.p_learn, p.p_guess, p.p_slip
            );
        }
        out
    }

    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(self.to_text().as_bytes())
    }

    pub fn read<R: BufRead>(input: R) -> Result<BktModel> {
        let mut model = BktModel::default();
        let mut saw_version = false;
        for (i, line) in input.lines().enumerate() {
            let line_no = i + 1;
            let line = line.map_err(|e| Error::io("<bkt model>", e))?;
            if !saw_version {
                let version = line
                    .strip_prefix("#version=")
                    .ok_or_else(|| Error::format(line_no, "expected #version header"))?;
                if version != MODEL_VERSION {
                    return Err(Error::VersionMismatch {
                        found: version.into(),
                        expected: MODEL_VERSION.into(),
                    });
                }
                saw_version = true;
                continue;
            }
            if let Some(seed) = line.strip_prefix("#seed=") {
                model.seed = Some(
                    seed.parse()
                        .map_err(|_| Error::format(line_no, "bad seed"))?,
                );
                continue;
            }
            if line.starts_with('#') || line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 5 {
                return Err(Error::format(line_no, "expected 5 tab-separated fields"));
            }
            let mut v = [0.0; 4];
            for (slot, field) in v.iter_mut().zip(&fields[1..]) {
                *slot = field
                    .parse()
                    .map_err(|_| Error::format(line_no, format!("bad probability {field:?}")))?;
            }
            let params = BktParams::new(v[0], v[1], v[2], v[3]);
            if !params.is_valid() {
                return Err(Error::format(line_no, "probability outside [0, 1]"));
            }
            model.skills.insert(SkillId::new(fields[0]), params);
        }
        if !saw_version {
            return Err(Error::format(0, "empty model file"));
        }
        Ok(model)
    }
}
