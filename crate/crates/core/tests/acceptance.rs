//! Acceptance criteria. Each criterion prints one PASS/FAIL line; the binary
//! exits non-zero if any required criterion fails.
//!
//! Run with `cargo test -p eikt --test acceptance`.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use eikt::bkt::{self, BktModel, BktParams, FitConfig};
use eikt::eval::{self, PipelineConfig, ScoredPrediction};
use eikt::features;
use eikt::ingest::{self, InteractionRecord};
use eikt::synth::{self, SyntheticConfig};
use eikt::tan::{Codes, Feature, TanModel, TanStructure, NUM_FEATURES};
use eikt::StudentId;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

// ---------------------------------------------------------------------------
// 1. Update equations and their properties.

fn criterion_equations() -> Check {
    let p = BktParams::new(0.5, 0.3, 0.2, 0.1);
    let post = bkt::posterior_given_correct(&p, 0.5);
    ensure((post - 0.45 / 0.55).abs() < 1e-9, || {
        format!("Eq.1 gave {post}")
    })?;
    ensure((post - 0.81818).abs() < 1e-5, || {
        format!("Eq.1 gave {post}")
    })?;
    let inc = bkt::posterior_given_incorrect(&p, 0.5);
    ensure((inc - 0.05 / 0.45).abs() < 1e-9, || {
        format!("Eq.2 gave {inc}")
    })?;
    let learned = bkt::apply_learning(&p, post);
    // 9/11 + (2/11) * 0.3 = 9.6/11
    ensure((learned - 9.6 / 11.0).abs() < 1e-9, || {
        format!("Eq.3 gave {learned}")
    })?;
    ensure((learned - 0.87273).abs() < 1e-5, || {
        format!("Eq.3 gave {learned}")
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let draws = 10_000;
    for _ in 0..draws {
        let prm = BktParams::new(rng.gen(), rng.gen(), rng.gen(), rng.gen());
        let pl: f64 = rng.gen();
        let pl2: f64 = rng.gen();
        let c = bkt::posterior_given_correct(&prm, pl);
        let i = bkt::posterior_given_incorrect(&prm, pl);
        let l = bkt::apply_learning(&prm, pl);
        for v in [c, i, l, bkt::predict_correct(&prm, pl)] {
            ensure((0.0..=1.0).contains(&v), || {
                format!("{v} out of [0,1] for {prm:?}, {pl}")
            })?;
        }
        ensure(l >= pl, || format!("learning decreased belief for {prm:?}"))?;
        // Learning is monotone in both the belief and P(T).
        let (lo, hi) = if pl <= pl2 { (pl, pl2) } else { (pl2, pl) };
        ensure(
            bkt::apply_learning(&prm, lo) <= bkt::apply_learning(&prm, hi) + 1e-15,
            || format!("learning not monotone in belief for {prm:?}"),
        )?;
        let more = BktParams {
            p_learn: (prm.p_learn + 0.1).min(1.0),
            ..prm
        };
        ensure(
            bkt::apply_learning(&prm, pl) <= bkt::apply_learning(&more, pl) + 1e-15,
            || format!("learning not monotone in P(T) for {prm:?}"),
        )?;
        if 1.0 - prm.p_slip > prm.p_guess {
            ensure(c >= pl - 1e-15, || {
                format!("correct answer lowered belief for {prm:?}")
            })?;
            ensure(i <= pl + 1e-15, || {
                format!("incorrect answer raised belief for {prm:?}")
            })?;
            let trace = bkt::trace_mastery(&prm, &[true; 8]).priors;
            ensure(trace.windows(2).all(|w| w[1] >= w[0] - 1e-15), || {
                format!("all-correct trace decreased for {prm:?}")
            })?;
        }
    }
    Ok(format!(
        "hand values exact to 1e-9; {draws} random draws satisfy bounds and monotonicity"
    ))
}

// ---------------------------------------------------------------------------
// 2. EM parameter recovery.

fn criterion_recovery() -> Check {
    let truth = BktParams::new(0.3, 0.2, 0.15, 0.1);
    let seqs = synth::sample_sequences(&truth, 500, 50, 42);
    let cfg = FitConfig {
        restarts: 5,
        seed: 42,
        ..FitConfig::default()
    };
    let fit = bkt::fit_bkt_em_detailed(&seqs, &cfg).map_err(|e| e.to_string())?;
    for run in &fit.runs {
        for (i, w) in run.history.windows(2).enumerate() {
            ensure(w[1] >= w[0] - 1e-9, || {
                format!("log-likelihood fell at iteration {i}: {} -> {}", w[0], w[1])
            })?;
        }
    }
    let got = fit.best;
    let pairs = [
        ("L0", got.p_init, truth.p_init),
        ("T", got.p_learn, truth.p_learn),
        ("G", got.p_guess, truth.p_guess),
        ("S", got.p_slip, truth.p_slip),
    ];
    for (name, g, t) in pairs {
        ensure((g - t).abs() <= 0.05, || {
            format!("{name} recovered {g:.4}, truth {t}")
        })?;
    }
    Ok(format!(
        "recovered L0={:.3} T={:.3} G={:.3} S={:.3}; EM monotone over {} restarts",
        got.p_init,
        got.p_learn,
        got.p_guess,
        got.p_slip,
        fit.runs.len()
    ))
}

// ---------------------------------------------------------------------------
// 3. Difficulty table and ability profiles on the hand-worked fixture.

fn read_records(name: &str) -> Result<Vec<InteractionRecord>, String> {
    let file = File::open(fixture(name)).map_err(|e| e.to_string())?;
    ingest::read_normalized(file).map_err(|e| e.to_string())
}

fn dump(rows: &[features::EvidenceRow]) -> Result<String, String> {
    let mut buf = Vec::new();
    features::write_feature_dump(rows, &mut buf).map_err(|e| e.to_string())?;
    String::from_utf8(buf).map_err(|e| e.to_string())
}

fn criterion_features() -> Check {
    let train = read_records("profile_train.csv")?;
    let student = read_records("profile_student.csv")?;
    let bkt = BktModel::read(BufReader::new(
        File::open(fixture("profile_bkt.tsv")).map_err(|e| e.to_string())?,
    ))
    .map_err(|e| e.to_string())?;
    let expected =
        std::fs::read_to_string(fixture("profile_expected.csv")).map_err(|e| e.to_string())?;

    let table = features::compute_difficulty_table(&train);
    ensure(table == features::compute_difficulty_table(&train), || {
        "table not deterministic".into()
    })?;
    // p2 has three first attempts and falls back to the default level.
    ensure(
        !table.levels.contains_key("p2") && table.level(&"p2".into()) == 5,
        || "fallback for N<4 not applied".into(),
    )?;
    for (problem, level) in [("p1", 7), ("p3", 0), ("p4", 10), ("p5", 5)] {
        ensure(table.level(&problem.into()) == level, || {
            format!(
                "{problem} level {} expected {level}",
                table.level(&problem.into())
            )
        })?;
    }

    let rows =
        features::build_evidence_rows(&student, &table, &bkt, 10).map_err(|e| e.to_string())?;
    let got = dump(&rows)?;
    ensure(got == expected, || {
        format!("feature rows differ:\n{got}\nexpected:\n{expected}")
    })?;

    // Deleting the student's interactions at seq_index >= t leaves row t-1 and
    // earlier unchanged.
    for t in 1..=student.len() {
        let prefix: Vec<_> = student
            .iter()
            .filter(|r| (r.seq_index as usize) <= t)
            .cloned()
            .collect();
        let partial =
            features::build_evidence_rows(&prefix, &table, &bkt, 10).map_err(|e| e.to_string())?;
        ensure(partial[..] == rows[..t], || {
            format!("row features changed when truncating at {t}")
        })?;
    }

    // A table rebuilt with the test student's own rows would shift the
    // features, so the golden rows above prove the training-only table is used.
    let mut leaked_train = train.clone();
    leaked_train.extend(student.iter().cloned());
    let leaked = features::compute_difficulty_table(&leaked_train);
    let leaked_rows =
        features::build_evidence_rows(&student, &leaked, &bkt, 10).map_err(|e| e.to_string())?;
    ensure(leaked_rows != rows, || {
        "probe is vacuous: test rows did not move any feature".into()
    })?;
    Ok(
        "difficulty fallback, floor levels, 6 expected rows and the no-leakage probe all exact"
            .into(),
    )
}

// ---------------------------------------------------------------------------
// 4. TAN inference against full-joint enumeration.

fn random_structure(rng: &mut ChaCha8Rng) -> TanStructure {
    let mut order = Feature::ALL.to_vec();
    order.shuffle(rng);
    let mut parents = [None; NUM_FEATURES];
    for i in 1..order.len() {
        parents[order[i].index()] = Some(order[rng.gen_range(0..i)]);
    }
    TanStructure::from_parents(parents).expect("random tree is valid")
}

fn all_assignments(cards: &[usize; NUM_FEATURES]) -> Vec<Codes> {
    let mut out = vec![[0; NUM_FEATURES]];
    for (f, &c) in cards.iter().enumerate() {
        out = out
            .into_iter()
            .flat_map(|codes| {
                (0..c).map(move |v| {
                    let mut next = codes;
                    next[f] = v;
                    next
                })
            })
            .collect();
    }
    out
}

/// Full joint table over (class, five features) from the raw CPT entries.
fn full_joint(model: &TanModel, assignments: &[Codes]) -> Vec<[f64; 2]> {
    assignments
        .iter()
        .map(|codes| {
            let mut joint = model.prior;
            for y in [false, true] {
                for f in Feature::ALL {
                    let cpt = model.cpt(f);
                    let pv = cpt.parent.map_or(0, |p| codes[p.index()]);
                    joint[usize::from(y)] *= cpt.distribution(y, pv)[codes[f.index()]];
                }
            }
            joint
        })
        .collect()
}

fn criterion_tan_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let models = 100;
    let mut checked = 0usize;
    for m in 0..models {
        let cards: [usize; NUM_FEATURES] = std::array::from_fn(|_| rng.gen_range(2..=4));
        let structure = random_structure(&mut rng);
        let n = rng.gen_range(1..60);
        let rows: Vec<(Codes, bool)> = (0..n)
            .map(|_| {
                (
                    std::array::from_fn(|f| rng.gen_range(0..cards[f])),
                    rng.gen(),
                )
            })
            .collect();
        let alpha = rng.gen_range(0.05..3.0);
        let model =
            TanModel::fit_coded(&rows, cards, structure, alpha).map_err(|e| e.to_string())?;

        let assignments = all_assignments(&cards);
        let joint = full_joint(&model, &assignments);
        let total: f64 = joint.iter().map(|j| j[0] + j[1]).sum();
        ensure((total - 1.0).abs() < 1e-10, || {
            format!("model {m}: full joint sums to {total}")
        })?;
        for (codes, j) in assignments.iter().zip(&joint) {
            let oracle = j[1] / (j[0] + j[1]);
            let c = codes.map(Some);
            let p1 = model.predict_coded(&c);
            ensure((p1 - oracle).abs() < 1e-10, || {
                format!("model {m}, row {codes:?}: predict {p1} vs enumeration {oracle}")
            })?;
            let j0 = model.joint_coded(&c, false);
            let j1 = model.joint_coded(&c, true);
            let p0 = j0 / (j0 + j1);
            ensure((p0 + p1 - 1.0).abs() < 1e-12, || {
                format!("model {m}: posterior sums to {}", p0 + p1)
            })?;
            checked += 1;
        }
    }
    Ok(format!(
        "{models} random models, {checked} rows match enumeration within 1e-10"
    ))
}

// ---------------------------------------------------------------------------
// 5. AUC against the pairwise definition.

fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

fn scored(scores: &[f64], labels: &[bool]) -> Vec<ScoredPrediction> {
    scores
        .iter()
        .zip(labels)
        .enumerate()
        .map(|(i, (&score, &label))| ScoredPrediction {
            score,
            label,
            student: StudentId::new("u"),
            seq_index: i as u32,
        })
        .collect()
}

fn criterion_auc() -> Check {
    let hand = eval::auc(&scored(&[0.9, 0.8, 0.4, 0.3], &[true, false, true, false]))
        .map_err(|e| e.to_string())?;
    ensure(hand == 0.75, || format!("hand case gave {hand}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let instances = 100;
    let mut done = 0;
    while done < instances {
        let n = rng.gen_range(2..=1000);
        // Coarse grids on some instances force heavy ties.
        let grid = [0.0, 10.0, 100.0][done % 3];
        let scores: Vec<f64> = (0..n)
            .map(|_| {
                let s: f64 = rng.gen();
                if grid > 0.0 {
                    (s * grid).round() / grid
                } else {
                    s
                }
            })
            .collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.gen()).collect();
        if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
            continue;
        }
        let fast = eval::auc(&scored(&scores, &labels)).map_err(|e| e.to_string())?;
        let slow = pairwise_auc(&scores, &labels);
        ensure((fast - slow).abs() < 1e-9, || {
            format!("instance {done}: rank {fast} vs pairwise {slow}")
        })?;
        done += 1;
    }
    Ok(format!(
        "hand case 0.75 exact; {instances} random instances within 1e-9"
    ))
}

// ---------------------------------------------------------------------------
// 6. End-to-end cross-validation on synthetic students.

fn criterion_end_to_end() -> Check {
    let data = synth::generate(&SyntheticConfig::with_skills(200, 5, 2024));
    let cfg = PipelineConfig::default();
    let first = eval::cross_validate(&data, 5, 7, &cfg).map_err(|e| e.to_string())?;
    let second = eval::cross_validate(&data, 5, 7, &cfg).map_err(|e| e.to_string())?;
    ensure(first == second, || {
        "repeated run produced a different report".into()
    })?;
    ensure(first.avg_auc >= 0.65, || {
        format!("average AUC {:.4} below 0.65", first.avg_auc)
    })?;
    let mean: f64 = first.folds.iter().map(|f| f.auc).sum::<f64>() / first.folds.len() as f64;
    ensure((mean - first.avg_auc).abs() < 1e-12, || {
        "average is not the fold mean".into()
    })?;
    Ok(format!(
        "average AUC {:.4}, RMSE {:.4} over 5 folds; deterministic",
        first.avg_auc, first.avg_rmse
    ))
}

// ---------------------------------------------------------------------------
// 7. Public-dataset reproduction (only when the data is supplied).

fn criterion_public_dataset() -> Option<Check> {
    let path = std::env::var_os("EIKT_ASSIST09")?;
    Some((|| {
        let file = File::open(&path).map_err(|e| format!("{}: {e}", Path::new(&path).display()))?;
        let parsed = ingest::parse_interactions(file, &ingest::Schema::default())
            .map_err(|e| e.to_string())?;
        let records = ingest::clean(parsed.rows).records;
        let report = eval::cross_validate(&records, 5, 42, &PipelineConfig::default())
            .map_err(|e| e.to_string())?;
        let summary = format!(
            "AUC {:.4} (reported 0.801, gap {:+.4}), RMSE {:.4} (reported 0.411, gap {:+.4})",
            report.avg_auc,
            report.avg_auc - 0.801,
            report.avg_rmse,
            report.avg_rmse - 0.411
        );
        ensure(report.avg_auc >= 0.77 && report.avg_rmse <= 0.43, || {
            summary.clone()
        })?;
        Ok(summary)
    })())
}

/// Number, title, time budget and check.
type Criterion = (&'static str, &'static str, Duration, fn() -> Check);

fn main() -> ExitCode {
    let criteria: [Criterion; 6] = [
        (
            "1",
            "update equations and property suite",
            Duration::from_secs(5),
            criterion_equations,
        ),
        (
            "2",
            "BKT parameter recovery",
            Duration::from_secs(30),
            criterion_recovery,
        ),
        (
            "3",
            "difficulty / profile fixture",
            Duration::from_secs(5),
            criterion_features,
        ),
        (
            "4",
            "TAN vs full-joint enumeration",
            Duration::from_secs(10),
            criterion_tan_oracle,
        ),
        (
            "5",
            "AUC vs pairwise oracle",
            Duration::from_secs(10),
            criterion_auc,
        ),
        (
            "6",
            "end-to-end synthetic signal",
            Duration::from_secs(60),
            criterion_end_to_end,
        ),
    ];
    let mut failed = 0;
    for (id, name, budget, run) in criteria {
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let outcome = outcome.and_then(|msg| {
            if elapsed <= budget {
                Ok(msg)
            } else {
                Err(format!("{msg}; took {elapsed:.2?}, budget {budget:?}"))
            }
        });
        match outcome {
            Ok(msg) => println!("[PASS] criterion {id}: {name} ({elapsed:.2?}) - {msg}"),
            Err(msg) => {
                failed += 1;
                println!("[FAIL] criterion {id}: {name} ({elapsed:.2?}) - {msg}");
            }
        }
    }
    match criterion_public_dataset() {
        None => println!("[SKIP] criterion 7: public dataset reproduction - set EIKT_ASSIST09 to the skill-builder CSV"),
        Some(Ok(msg)) => println!("[PASS] criterion 7: public dataset reproduction - {msg}"),
        // Informational only; never gates the suite.
        Some(Err(msg)) => println!("[FAIL] criterion 7: public dataset reproduction (non-gating) - {msg}"),
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
