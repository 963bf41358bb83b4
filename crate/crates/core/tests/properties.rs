use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use proptest::prelude::*;

use kgdrive::corpus::{build_forest, load_corpus_dir, Forest};
use kgdrive::dataset::{build_desk_dataset, split, Dataset, DatasetConfig};
use kgdrive::kgraph::{build_graph, Lexicon};
use kgdrive::planner::{diversify, generate_candidates, start_point, PlannerConfig};
use kgdrive::retrieval::Retriever;
use kgdrive::sim::Knowledge;
use kgdrive::value::{aggregate, rank_weight};
use kgdrive::verbalizer::{EgoState, NavCommand, SceneState, SemanticGrid};

fn data() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn forest() -> &'static Forest {
    static F: OnceLock<Forest> = OnceLock::new();
    F.get_or_init(|| build_forest(&load_corpus_dir(&data().join("corpus")).unwrap()).unwrap())
}

fn knowledge() -> &'static Knowledge {
    static K: OnceLock<Knowledge> = OnceLock::new();
    K.get_or_init(|| Knowledge::new(build_graph(forest(), &Lexicon::driving_default()).unwrap(), Lexicon::driving_default()))
}

fn small_dataset() -> &'static Dataset {
    static D: OnceLock<Dataset> = OnceLock::new();
    D.get_or_init(|| {
        let cfg = DatasetConfig { per_scene: 6, ..Default::default() };
        build_desk_dataset(12, &cfg, knowledge(), 3).unwrap().0
    })
}

fn scene(speed: f64) -> SceneState {
    SceneState {
        timestamp: 0.0,
        ego: EgoState { position: [0.0, 0.0], heading: 0.0, speed, accel: 0.0 },
        instances: vec![],
        grid: SemanticGrid::new(4, 4, 1.0, [-2.0, -2.0]),
        concepts: Default::default(),
        nav_command: NavCommand::Keep,
        route: None,
        user_instruction: None,
        hidden: Default::default(),
        revealed: Default::default(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn aggregate_is_bounded_by_its_scores(
        scores in prop::collection::vec(-1.0f64..=1.0, 1..32),
        gamma in 1e-3f64..=1.0,
    ) {
        let v = aggregate(&scores, gamma).unwrap();
        let lo = scores.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
    }

    #[test]
    fn uniform_scores_aggregate_to_themselves(c in -1.0f64..=1.0, n in 1usize..64, gamma in 1e-3f64..=1.0) {
        prop_assert!((aggregate(&vec![c; n], gamma).unwrap() - c).abs() <= 1e-12);
    }

    #[test]
    fn rank_weights_decay(gamma in 1e-3f64..1.0, r in 1usize..40) {
        prop_assert_eq!(rank_weight(1, gamma), 1.0);
        prop_assert!(rank_weight(r + 1, gamma) < rank_weight(r, gamma));
    }

    #[test]
    fn diversify_never_raises_the_penalty(speed in 0.0f64..20.0, seed in 0u64..1000, n in 2usize..24, tau in 0.2f64..2.5) {
        let cfg = PlannerConfig::default();
        let s = scene(speed);
        let c = generate_candidates(&s, n, 1.0, seed, &cfg).unwrap();
        let (out, hist) = diversify(&start_point(&s.ego), &c, tau, 20, cfg.diversify_step, &cfg).unwrap();
        prop_assert_eq!(out.len(), c.len());
        prop_assert!(hist.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn retrieved_text_is_the_stored_clause(query in "\\PC{0,200}") {
        let k = knowledge();
        let retriever = Retriever::new(&k.graph, &k.lexicon, Default::default());
        let (_, items) = retriever.retrieve_text(&query);
        for it in items {
            let node = forest().nodes.get(&it.clause_id).unwrap();
            prop_assert_eq!(node.text(), it.verbatim_text.as_str());
        }
    }

    #[test]
    fn split_is_disjoint_by_scene(fraction in 0.05f64..0.95, seed in any::<u64>()) {
        let ds = small_dataset();
        let (train, held) = split(&ds.samples, fraction, seed).unwrap();
        prop_assert_eq!(train.len() + held.len(), ds.samples.len());
        let a: BTreeSet<_> = train.iter().map(|s| &s.scene_ref).collect();
        let b: BTreeSet<_> = held.iter().map(|s| &s.scene_ref).collect();
        prop_assert!(a.is_disjoint(&b));
    }
}

#[test]
fn labels_are_bounded_and_aligned_with_basis() {
    let ds = small_dataset();
    assert!(!ds.samples.is_empty());
    for s in &ds.samples {
        assert_eq!(s.labels.len(), s.basis.len());
        assert!(s.labels.iter().all(|l| (-1.0..=1.0).contains(l)), "{}", s.sample_id);
    }
}
