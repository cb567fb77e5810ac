use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use eikt::bkt::{self, BktParams, FitConfig};
use eikt::synth::{self, SyntheticConfig};

/// Unnormalized forward pass over (unknown, known); the prior at step t is the
/// known share of the predicted state distribution before emitting outcome t.
fn forward_priors(p: &BktParams, outcomes: &[bool]) -> Vec<f64> {
    let mut alpha = [1.0 - p.p_init, p.p_init];
    let mut priors = Vec::new();
    for &o in outcomes {
        priors.push(alpha[1] / (alpha[0] + alpha[1]));
        let emit = if o {
            [p.p_guess, 1.0 - p.p_slip]
        } else {
            [1.0 - p.p_guess, p.p_slip]
        };
        let filtered = [alpha[0] * emit[0], alpha[1] * emit[1]];
        alpha = [
            filtered[0] * (1.0 - p.p_learn),
            filtered[1] + filtered[0] * p.p_learn,
        ];
    }
    priors
}

#[test]
fn trace_matches_forward_algorithm() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..2000 {
        let p = BktParams::new(
            rng.gen_range(0.01..0.99),
            rng.gen_range(0.01..0.99),
            rng.gen_range(0.01..0.99),
            rng.gen_range(0.01..0.99),
        );
        let len = rng.gen_range(0..=10);
        let outcomes: Vec<bool> = (0..len).map(|_| rng.gen()).collect();
        let trace = bkt::trace_mastery(&p, &outcomes).priors;
        let oracle = forward_priors(&p, &outcomes);
        assert_eq!(trace.len(), oracle.len());
        for (a, b) in trace.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b} for {p:?} {outcomes:?}");
        }
        if let Some(first) = trace.first() {
            assert_eq!(*first, p.p_init);
        }
    }
}

#[test]
fn two_skill_recovery() {
    let truths = vec![
        BktParams::new(0.3, 0.2, 0.15, 0.1),
        BktParams::new(0.6, 0.1, 0.25, 0.05),
    ];
    let cfg = SyntheticConfig {
        students: 500,
        skills: truths.clone(),
        attempts_per_skill: 50,
        problems_per_skill: 50,
        seed: 17,
    };
    let records = synth::generate(&cfg);
    let model = bkt::fit_all_skills(&records, &FitConfig::default()).unwrap();
    assert_eq!(model.skills.len(), 2);
    for (i, truth) in truths.iter().enumerate() {
        let got = model.params(&synth::skill_id(i));
        for (g, t) in [
            (got.p_init, truth.p_init),
            (got.p_learn, truth.p_learn),
            (got.p_guess, truth.p_guess),
            (got.p_slip, truth.p_slip),
        ] {
            assert!(
                (g - t).abs() <= 0.05,
                "skill {i}: got {got:?}, truth {truth:?}"
            );
        }
    }
}

#[test]
fn per_skill_fit_is_independent_of_other_skills() {
    let records = synth::generate(&SyntheticConfig::with_skills(40, 3, 9));
    let cfg = FitConfig::default();
    let all = bkt::fit_all_skills(&records, &cfg).unwrap();
    let only: Vec<_> = records
        .iter()
        .filter(|r| r.skill == synth::skill_id(1))
        .cloned()
        .collect();
    let single = bkt::fit_all_skills(&only, &cfg).unwrap();
    assert_eq!(
        all.params(&synth::skill_id(1)),
        single.params(&synth::skill_id(1))
    );
}

#[test]
fn em_history_is_monotone_without_caps() {
    let truth = BktParams::new(0.4, 0.15, 0.2, 0.12);
    let seqs = synth::sample_sequences(&truth, 100, 20, 5);
    let cfg = FitConfig {
        guess_cap: None,
        slip_cap: None,
        restarts: 3,
        ..FitConfig::default()
    };
    let fit = bkt::fit_bkt_em_detailed(&seqs, &cfg).unwrap();
    for run in &fit.runs {
        assert!(run.history.windows(2).all(|w| w[1] >= w[0] - 1e-9));
        // The forward pass likelihood agrees with the filtering likelihood.
        let ll = bkt::log_likelihood(&run.params, &seqs);
        assert!(ll >= run.final_log_likelihood() - 1e-6);
    }
}
