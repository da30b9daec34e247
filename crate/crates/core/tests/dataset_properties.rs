use std::collections::HashSet;

use grokking_core::datasets::{
    build_table, eval_op, inject_outliers, split, OperationKind, OperationSpec, Vocabulary,
};
use proptest::prelude::*;

fn kind() -> impl Strategy<Value = OperationKind> {
    prop::sample::select(OperationKind::ALL.to_vec())
}

fn prime() -> impl Strategy<Value = u64> {
    prop::sample::select(vec![2u64, 3, 5, 7, 11, 13, 23, 31])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tables_are_closed_and_complete(kind in kind(), p in prime()) {
        let spec = OperationSpec::new(kind, p).unwrap();
        let table = build_table(&spec).unwrap();
        let n = spec.num_elements();
        let vocab = Vocabulary::for_spec(&spec);
        let pairs: HashSet<(usize, usize)> = table.iter().map(|e| (e.a(), e.b())).collect();
        prop_assert_eq!(pairs.len(), table.len());
        let expected = if kind == OperationKind::ModDiv { n * (n - 1) } else { n * n };
        prop_assert_eq!(table.len(), expected);
        for e in &table {
            prop_assert!(e.c() < n);
            prop_assert_eq!(e.tokens[1], vocab.op_token());
            prop_assert_eq!(e.tokens[3], vocab.eq_token());
            prop_assert_eq!(e.c(), eval_op(&spec, e.a(), e.b()).unwrap());
        }
    }

    #[test]
    fn symmetric_operations_commute(p in prime()) {
        for kind in OperationKind::ALL.into_iter().filter(|k| k.is_symmetric()) {
            let spec = OperationSpec::new(kind, p).unwrap();
            for x in 0..p as usize {
                for y in 0..p as usize {
                    prop_assert_eq!(eval_op(&spec, x, y).unwrap(), eval_op(&spec, y, x).unwrap());
                }
            }
        }
    }

    #[test]
    fn split_partitions_the_table(fraction in 0.01f64..0.99, seed in any::<u64>(), p in prime()) {
        let spec = OperationSpec::new(OperationKind::ModSub, p).unwrap();
        let table = build_table(&spec).unwrap();
        let s = split(&table, fraction, seed).unwrap();
        prop_assert_eq!(s.train.len(), (fraction * table.len() as f64).round() as usize);
        let mut all: Vec<_> = s.train.iter().chain(&s.val).map(|e| e.tokens).collect();
        all.sort_unstable();
        let mut expected: Vec<_> = table.iter().map(|e| e.tokens).collect();
        expected.sort_unstable();
        prop_assert_eq!(all, expected);
        // deterministic in the seed
        prop_assert_eq!(s, split(&table, fraction, seed).unwrap());
    }

    #[test]
    fn outliers_only_touch_training_answers(k in 0usize..40, seed in any::<u64>()) {
        let spec = OperationSpec::new(OperationKind::ModAdd, 11).unwrap();
        let s = split(&build_table(&spec).unwrap(), 0.5, 3).unwrap();
        let o = inject_outliers(&s, k, seed).unwrap();
        prop_assert_eq!(&o.val, &s.val);
        prop_assert_eq!(o.train.iter().filter(|e| e.is_outlier).count(), k);
        let answers: HashSet<usize> = s.train.iter().map(|e| e.c()).collect();
        for (before, after) in s.train.iter().zip(&o.train) {
            prop_assert_eq!(&before.tokens[..4], &after.tokens[..4]);
            if !after.is_outlier {
                prop_assert_eq!(before.c(), after.c());
            }
            prop_assert!(answers.contains(&after.c()));
        }
    }
}

#[test]
fn invalid_fractions_are_rejected() {
    let table = build_table(&OperationSpec::new(OperationKind::ModAdd, 5).unwrap()).unwrap();
    for f in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
        assert!(split(&table, f, 0).is_err(), "{f}");
    }
}

#[test]
fn too_many_outliers_are_rejected() {
    let table = build_table(&OperationSpec::new(OperationKind::ModAdd, 5).unwrap()).unwrap();
    let s = split(&table, 0.4, 0).unwrap();
    assert!(inject_outliers(&s, s.train.len() + 1, 0).is_err());
}
