//! Browser bindings for the EIKT demo page.
//!
//! Every exported function returns a JSON string. The `*_json` functions hold
//! the logic and run natively, so they are tested without a browser.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use eikt::bkt::{self, BktParams, FitConfig};
use eikt::eval::{self, EvalReport, PipelineConfig};
use eikt::ingest::InteractionRecord;
use eikt::synth::{self, SyntheticConfig};
use eikt::tan::Explanation;

fn params(p_init: f64, p_learn: f64, p_guess: f64, p_slip: f64) -> Result<BktParams, String> {
    for (name, v) in [
        ("p_init", p_init),
        ("p_learn", p_learn),
        ("p_guess", p_guess),
        ("p_slip", p_slip),
    ] {
        if !(0.0..=1.0).contains(&v) {
            return Err(format!("{name} must be in [0, 1], got {v}"));
        }
    }
    Ok(BktParams::new(p_init, p_learn, p_guess, p_slip))
}

fn to_json<T: Serialize>(value: &T) -> Result<String, String> {
    serde_json::to_string(value).map_err(|e| e.to_string())
}

#[derive(Debug, Serialize)]
struct TraceOutput {
    /// P(L_t) before each outcome.
    priors: Vec<f64>,
    /// P(correct) before each outcome.
    predicted: Vec<f64>,
    /// Belief after the last outcome.
    last: f64,
}

/// Mastery trace for an outcome string such as `"0 1 1 0 1"`.
pub fn trace_json(
    p_init: f64,
    p_learn: f64,
    p_guess: f64,
    p_slip: f64,
    outcomes: &str,
) -> Result<String, String> {
    let p = params(p_init, p_learn, p_guess, p_slip)?;
    let outcomes: Vec<bool> = outcomes
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| match t {
            "1" => Ok(true),
            "0" => Ok(false),
            other => Err(format!("outcomes must be 0 or 1, found {other:?}")),
        })
        .collect::<Result<_, _>>()?;
    let trace = bkt::trace_mastery(&p, &outcomes);
    let last = outcomes
        .last()
        .zip(trace.priors.last())
        .map_or(p.p_init, |(&c, &prior)| bkt::advance(&p, prior, c));
    to_json(&TraceOutput {
        predicted: trace
            .priors
            .iter()
            .map(|&l| bkt::predict_correct(&p, l))
            .collect(),
        priors: trace.priors,
        last,
    })
}

#[derive(Debug, Serialize)]
struct FitOutput {
    truth: BktParams,
    fitted: BktParams,
    truth_log_likelihood: f64,
    /// Log-likelihood per iteration of the winning restart.
    history: Vec<f64>,
    restarts: usize,
}

/// Sample sequences from known parameters and recover them with EM.
pub fn fit_json(
    p_init: f64,
    p_learn: f64,
    p_guess: f64,
    p_slip: f64,
    sequences: usize,
    length: usize,
    seed: u64,
) -> Result<String, String> {
    let truth = params(p_init, p_learn, p_guess, p_slip)?;
    if sequences == 0 || length == 0 {
        return Err("need at least one sequence of length one".into());
    }
    let data = synth::sample_sequences(&truth, sequences, length, seed);
    let cfg = FitConfig {
        seed,
        ..FitConfig::default()
    };
    let fit = bkt::fit_bkt_em_detailed(&data, &cfg).map_err(|e| e.to_string())?;
    let history = fit
        .runs
        .iter()
        .find(|r| r.params == fit.best)
        .map(|r| r.history.clone())
        .unwrap_or_default();
    to_json(&FitOutput {
        truth,
        fitted: fit.best,
        truth_log_likelihood: bkt::log_likelihood(&truth, &data),
        history,
        restarts: fit.runs.len(),
    })
}

#[derive(Debug, Serialize)]
struct SampleExplanation {
    student: String,
    skill: String,
    seq_index: u32,
    label: bool,
    explanation: Explanation,
}

#[derive(Debug, Serialize)]
struct EvaluateOutput {
    report: EvalReport,
    sample: Option<SampleExplanation>,
}

/// Cross-validate on a synthetic population, then explain one prediction of a
/// model trained on every student.
pub fn evaluate_json(
    students: usize,
    skills: usize,
    folds: usize,
    seed: u64,
) -> Result<String, String> {
    if skills == 0 {
        return Err("need at least one skill".into());
    }
    let data = synth::generate(&SyntheticConfig::with_skills(students, skills, seed));
    let cfg = PipelineConfig::default();
    let report = eval::cross_validate(&data, folds, seed, &cfg).map_err(|e| e.to_string())?;
    let refs: Vec<&InteractionRecord> = data.iter().collect();
    let pipeline = eval::train_pipeline(&refs, seed, &cfg).map_err(|e| e.to_string())?;
    let first = data.first().map(|r| r.student.clone());
    let history: Vec<InteractionRecord> = data
        .iter()
        .filter(|r| Some(&r.student) == first.as_ref())
        .cloned()
        .collect();
    let sample = pipeline
        .explain(&history)
        .map_err(|e| e.to_string())?
        .pop()
        .map(|p| SampleExplanation {
            student: p.row.student.to_string(),
            skill: p.row.skill.to_string(),
            seq_index: p.row.seq_index,
            label: p.row.label,
            explanation: p.explanation,
        });
    to_json(&EvaluateOutput { report, sample })
}

fn js(result: Result<String, String>) -> Result<String, JsValue> {
    result.map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn trace(
    p_init: f64,
    p_learn: f64,
    p_guess: f64,
    p_slip: f64,
    outcomes: &str,
) -> Result<String, JsValue> {
    js(trace_json(p_init, p_learn, p_guess, p_slip, outcomes))
}

#[wasm_bindgen]
pub fn fit(
    p_init: f64,
    p_learn: f64,
    p_guess: f64,
    p_slip: f64,
    sequences: usize,
    length: usize,
    seed: u64,
) -> Result<String, JsValue> {
    js(fit_json(
        p_init, p_learn, p_guess, p_slip, sequences, length, seed,
    ))
}

#[wasm_bindgen]
pub fn evaluate(
    students: usize,
    skills: usize,
    folds: usize,
    seed: u64,
) -> Result<String, JsValue> {
    js(evaluate_json(students, skills, folds, seed))
}
