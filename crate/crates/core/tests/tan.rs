use approx::assert_abs_diff_eq;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use eikt::features::EvidenceRow;
use eikt::tan::{self, Codes, Feature, TanModel, TanStructure};

fn row(skill: &str, mastery: usize, sr: usize, df: usize, diff: u8, label: bool) -> EvidenceRow {
    EvidenceRow {
        student: "u".into(),
        seq_index: 1,
        skill: skill.into(),
        mastery_bin: mastery,
        sr_bin: sr,
        df_bin: df,
        difficulty: diff,
        label,
    }
}

fn eight_rows() -> Vec<EvidenceRow> {
    vec![
        row("a", 1, 1, 2, 7, true),
        row("a", 1, 2, 1, 7, true),
        row("b", 0, 0, 0, 3, false),
        row("a", 0, 1, 2, 7, false),
        row("b", 1, 1, 1, 3, true),
        row("b", 0, 0, 2, 5, false),
        row("a", 1, 1, 1, 7, true),
        row("b", 0, 2, 2, 3, true),
    ]
}

// Expected entries counted by hand (Laplace, alpha = 1, two bins).
#[test]
fn eight_row_fixture_cpts() {
    let m = tan::fit_cpts(&eight_rows(), TanStructure::eikt(), 1.0, 2).unwrap();
    assert_eq!(m.cardinalities, [2, 2, 3, 3, 11]);
    assert_abs_diff_eq!(m.prior[1], 3.0 / 5.0, epsilon = 1e-15);
    let df = m.cpt(Feature::DfProfile);
    assert_abs_diff_eq!(df.prob(true, None, Some(2)), 3.0 / 8.0, epsilon = 1e-15);
    assert_abs_diff_eq!(df.prob(true, None, Some(0)), 1.0 / 8.0, epsilon = 1e-15);
    let diff = m.cpt(Feature::Difficulty);
    assert_abs_diff_eq!(
        diff.prob(true, Some(1), Some(7)),
        3.0 / 14.0,
        epsilon = 1e-15
    );
    assert_abs_diff_eq!(
        diff.prob(false, Some(2), Some(3)),
        1.0 / 13.0,
        epsilon = 1e-15
    );
    let skill = m.cpt(Feature::Skill);
    assert_abs_diff_eq!(
        skill.prob(true, Some(7), Some(0)),
        4.0 / 5.0,
        epsilon = 1e-15
    );
    // Unseen parent configuration gives the uniform distribution.
    assert_abs_diff_eq!(skill.prob(false, Some(10), Some(0)), 0.5, epsilon = 1e-15);
    let mastery = m.cpt(Feature::Mastery);
    assert_abs_diff_eq!(
        mastery.prob(true, Some(0), Some(1)),
        4.0 / 5.0,
        epsilon = 1e-15
    );
    let sr = m.cpt(Feature::SrProfile);
    assert_abs_diff_eq!(sr.prob(false, Some(0), Some(1)), 1.0 / 3.0, epsilon = 1e-15);
}

#[test]
fn eight_row_fixture_prediction() {
    let m = tan::fit_cpts(&eight_rows(), TanStructure::eikt(), 1.0, 2).unwrap();
    let r = row("a", 1, 1, 1, 7, true);
    assert_abs_diff_eq!(
        tan::joint_probability(&m, &r, false),
        2.0 / 4455.0,
        epsilon = 1e-12
    );
    assert_abs_diff_eq!(
        tan::joint_probability(&m, &r, true),
        144.0 / 6125.0,
        epsilon = 1e-12
    );
    assert_abs_diff_eq!(tan::predict(&m, &r), 64152.0 / 65377.0, epsilon = 1e-12);
    let j0 = tan::joint_probability(&m, &r, false);
    let j1 = tan::joint_probability(&m, &r, true);
    assert_eq!(tan::predict(&m, &r), j1 / (j0 + j1));
}

#[test]
fn save_load_reproduces_predictions_bit_exactly() {
    let m = tan::fit_cpts(&eight_rows(), TanStructure::eikt(), 0.3, 2).unwrap();
    let back = TanModel::read(m.to_text().as_bytes()).unwrap();
    for r in eight_rows() {
        assert_eq!(
            tan::predict(&m, &r).to_bits(),
            tan::predict(&back, &r).to_bits()
        );
    }
}

fn chain_data(n: usize, seed: u64) -> Vec<(Codes, bool)> {
    // Sample from df -> difficulty -> skill -> mastery -> sr, where each child
    // copies its parent with probability 0.9.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let copy = |rng: &mut ChaCha8Rng, parent: usize| {
        if rng.gen_bool(0.9) {
            parent
        } else {
            rng.gen_range(0..3)
        }
    };
    (0..n)
        .map(|_| {
            let y = rng.gen_bool(0.5);
            let df = if y {
                rng.gen_range(1..3)
            } else {
                rng.gen_range(0..2)
            };
            let diff = copy(&mut rng, df);
            let skill = copy(&mut rng, diff);
            let mastery = copy(&mut rng, skill);
            let sr = copy(&mut rng, mastery);
            ([skill, mastery, sr, df, diff], y)
        })
        .collect()
}

#[test]
fn cmi_recovers_generating_chain() {
    let data = chain_data(4000, 3);
    let learned = tan::learn_structure_coded(&data, &[3; 5], 1.0).unwrap();
    assert_eq!(
        learned.undirected_edges(),
        TanStructure::eikt().undirected_edges()
    );
    assert_eq!(learned, TanStructure::eikt());
}

#[test]
fn cmi_independent_features_still_give_a_tree() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let data: Vec<(Codes, bool)> = (0..500)
        .map(|_| (std::array::from_fn(|_| rng.gen_range(0..3)), rng.gen()))
        .collect();
    let cmi = tan::conditional_mutual_information(&data, &[3; 5], 1.0);
    assert!(cmi.iter().flatten().all(|&w| (0.0..0.05).contains(&w)));
    let s = tan::learn_structure_coded(&data, &[3; 5], 1.0).unwrap();
    assert_eq!(s.undirected_edges().len(), 4);
    assert_eq!(s.order().len(), 5);
}
