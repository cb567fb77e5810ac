use std::fs::File;
use std::path::Path;

use proptest::prelude::*;

use eikt::ingest::{self, clean, parse_interactions, split_folds, RawRow, Schema};

fn fixture(name: &str) -> File {
    File::open(
        Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("tests/fixtures")
            .join(name),
    )
    .unwrap()
}

#[test]
fn three_line_fixture() {
    let out = parse_interactions(fixture("raw_three.csv"), &Schema::default()).unwrap();
    assert!(out.issues.is_empty());
    let expected = vec![
        RawRow {
            row_id: 0,
            student_id: "64525".into(),
            problem_id: "33139".into(),
            skill_id: "10".into(),
            outcome: 1,
            order_key: 33022537,
            original: Some(true),
        },
        RawRow {
            row_id: 1,
            student_id: "64525".into(),
            problem_id: "33150".into(),
            skill_id: "10".into(),
            outcome: 0,
            order_key: 33022709,
            original: Some(true),
        },
        RawRow {
            row_id: 2,
            student_id: "70363".into(),
            problem_id: "33159".into(),
            skill_id: "2".into(),
            outcome: 1,
            order_key: 35450204,
            original: Some(false),
        },
    ];
    assert_eq!(out.rows, expected);
    let cleaned = clean(out.rows);
    assert_eq!(cleaned.records.len(), 2);
    assert_eq!(cleaned.report.non_original, 1);
    assert_eq!(cleaned.report.dropped(), 1);
}

fn arb_rows() -> impl Strategy<Value = Vec<RawRow>> {
    prop::collection::vec(
        (
            0..5u8,
            0..6u8,
            prop::sample::select(vec!["", "s1", "s2"]),
            0..2u8,
            0..20i64,
        ),
        0..60,
    )
    .prop_map(|rows| {
        rows.into_iter()
            .enumerate()
            .map(|(i, (st, pr, sk, o, ord))| RawRow {
                row_id: i as u64,
                student_id: format!("u{st}"),
                problem_id: format!("p{pr}"),
                skill_id: sk.to_string(),
                outcome: o,
                order_key: ord,
                original: None,
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn clean_is_idempotent(rows in arb_rows()) {
        let once = clean(rows).records;
        let raws = once.iter().enumerate().map(|(i, r)| r.to_raw(i as u64)).collect();
        let twice = clean(raws).records;
        prop_assert_eq!(&once, &twice);

        let mut buf = Vec::new();
        ingest::write_normalized(&once, &mut buf).unwrap();
        prop_assert_eq!(ingest::read_normalized(buf.as_slice()).unwrap(), once);
    }

    #[test]
    fn clean_leaves_unique_problems_and_consecutive_indices(rows in arb_rows()) {
        let records = clean(rows).records;
        let mut seen = std::collections::HashSet::new();
        let mut last: Option<(&str, u32)> = None;
        for r in &records {
            prop_assert!(seen.insert((r.student.as_str(), r.problem.as_str())));
            let expected = match last {
                Some((s, i)) if s == r.student.as_str() => i + 1,
                _ => 1,
            };
            prop_assert_eq!(r.seq_index, expected);
            last = Some((r.student.as_str(), r.seq_index));
        }
    }

    #[test]
    fn folds_partition_students(rows in arb_rows(), k in 2usize..5, seed in any::<u64>()) {
        let records = clean(rows).records;
        let students: std::collections::BTreeSet<_> = records.iter().map(|r| r.student.clone()).collect();
        match split_folds(&records, k, seed) {
            Err(_) => prop_assert!(students.len() < k),
            Ok(folds) => {
                let assigned: std::collections::BTreeSet<_> = folds.student_to_fold.keys().cloned().collect();
                prop_assert_eq!(assigned, students);
                let sizes = folds.fold_sizes();
                prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
                for f in 0..k {
                    let (train, test) = folds.partition(&records, f);
                    prop_assert_eq!(train.len() + test.len(), records.len());
                    for t in &test {
                        prop_assert!(train.iter().all(|r| r.student != t.student));
                    }
                }
            }
        }
    }
}
