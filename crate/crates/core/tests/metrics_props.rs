use haystack_core::corpus::RelevanceJudgments;
use haystack_core::metrics::{
    classification_report, evaluate, hit_rate, ndcg_at, recall_eval, Mode,
};
use haystack_core::run::{QueryRun, RunFile};
use proptest::prelude::*;

/// Queries `q0..`, each with candidates `p0..p9` scored at random, half judged.
fn run_and_qrels() -> impl Strategy<Value = (RunFile, RelevanceJudgments)> {
    proptest::collection::vec(
        (
            proptest::collection::vec((0.0f64..1.0, any::<bool>()), 10),
            proptest::collection::btree_set(0usize..12, 1..4),
        ),
        1..8,
    )
    .prop_map(|queries| {
        let mut qrels = RelevanceJudgments::new();
        let mut runs = Vec::new();
        for (qi, (scored, rel)) in queries.into_iter().enumerate() {
            let qid = format!("q{qi}");
            for r in rel {
                qrels.insert(qid.clone(), format!("p{r}"));
            }
            let scored = scored
                .into_iter()
                .enumerate()
                .map(|(i, (s, pos))| (format!("p{i}"), s, pos))
                .collect();
            runs.push(QueryRun::ranked(qid, scored));
        }
        (RunFile { queries: runs }, qrels)
    })
}

proptest! {
    #[test]
    fn recall_is_a_fraction_and_grows_with_the_cutoff((run, qrels) in run_and_qrels()) {
        let mut last = 0.0;
        for k in [1, 2, 5, 10, 20] {
            let r = recall_eval(&run, &qrels, Some(k)).unwrap();
            prop_assert!((0.0..=1.0).contains(&r));
            prop_assert!(r >= last);
            last = r;
        }
        prop_assert_eq!(recall_eval(&run, &qrels, None).unwrap(), last);
        let h = hit_rate(&run, &qrels, None).unwrap();
        prop_assert!((0.0..=1.0).contains(&h));
    }

    #[test]
    fn ndcg_is_bounded((run, qrels) in run_and_qrels(), k in 1usize..15) {
        let v = ndcg_at(&run, &qrels, k).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
    }

    #[test]
    fn weighted_recall_is_accuracy(
        rows in proptest::collection::vec((-1.0f64..2.0, any::<bool>()), 1..200),
        threshold in 0.0f64..1.0,
    ) {
        let scores: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let labels: Vec<f32> = rows.iter().map(|r| if r.1 { 1.0 } else { 0.0 }).collect();
        let rep = classification_report(&scores, &labels, threshold).unwrap();
        prop_assert!((rep.weighted_avg.recall - rep.accuracy).abs() < 1e-12);
        prop_assert_eq!(rep.classes[0].support + rep.classes[1].support, rows.len());
    }

    #[test]
    fn lowering_the_threshold_never_loses_positive_predictions(
        rows in proptest::collection::vec((-1.0f64..2.0, any::<bool>()), 1..100),
        t in 0.0f64..1.0,
        dt in 0.0f64..0.5,
    ) {
        let scores: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let labels: Vec<f32> = rows.iter().map(|r| if r.1 { 1.0 } else { 0.0 }).collect();
        let hi = classification_report(&scores, &labels, t).unwrap();
        let lo = classification_report(&scores, &labels, t - dt).unwrap();
        prop_assert!(lo.classes[1].recall >= hi.classes[1].recall);
    }
}

#[test]
fn judged_queries_missing_from_the_run_count_as_misses() {
    let mut qrels = RelevanceJudgments::new();
    qrels.insert("a", "x");
    qrels.insert("b", "y");
    let run = RunFile {
        queries: vec![QueryRun::ranked("a".into(), vec![("x".into(), 1.0, true)])],
    };
    let ev = evaluate(&run, &qrels, Mode::Passage, &[1]).unwrap();
    assert_eq!(ev.recall, 0.5);
    assert_eq!(ev.mrr_at_10, 0.5);
    assert_eq!(ev.n_queries, 2);
}

#[test]
fn unjudged_run_queries_are_rejected() {
    let mut qrels = RelevanceJudgments::new();
    qrels.insert("a", "x");
    let run = RunFile {
        queries: vec![QueryRun::ranked("z".into(), vec![("x".into(), 1.0, true)])],
    };
    assert!(recall_eval(&run, &qrels, None).is_err());
}
