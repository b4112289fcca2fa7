use srnn_core::data::{gen_synthetic, AlbumTruth, PlantedTruth, SyntheticSpec};
use srnn_core::eval::{
    build_prediction_set, eval_prediction, storyline_recovery, transition_graph, Horizon, RandomPredictor,
    NUM_DISTRACTORS,
};
use srnn_core::{Dataset, RngStream, StoryIndices, StorySample};

fn concept(albums: usize) -> (Dataset, PlantedTruth) {
    let spec = SyntheticSpec {
        num_albums: albums,
        dim: 6,
        seed: 2,
        ..SyntheticSpec::default()
    };
    gen_synthetic(&spec).unwrap()
}

#[test]
fn random_predictor_is_at_chance() {
    let (ds, _) = concept(30);
    let inst = build_prediction_set(&ds, None, Horizon::Short, &RngStream::new(1, 0)).unwrap();
    let n = inst.len() as f64;
    let acc = eval_prediction(&RandomPredictor, &inst, &ds, &RngStream::new(1, 1))
        .unwrap()
        .metric("accuracy")
        .unwrap();
    let p = 1.0 / (NUM_DISTRACTORS + 1) as f64;
    let sigma = (p * (1.0 - p) / n).sqrt();
    assert!((acc - p).abs() < 3.0 * sigma, "accuracy {acc} over {n} instances");
}

#[test]
fn prediction_instances_are_well_formed() {
    let (ds, truth) = concept(10);
    for horizon in [Horizon::Long, Horizon::Short] {
        for inst in build_prediction_set(&ds, Some(&truth), horizon, &RngStream::new(3, 0)).unwrap() {
            let mut c = inst.candidates.clone();
            c.sort_unstable();
            c.dedup();
            assert_eq!(c.len(), NUM_DISTRACTORS + 1);
            assert!(!inst.candidates.contains(&inst.given));
            assert_eq!(inst.candidates[inst.answer_position()], inst.truth);
        }
    }
}

#[test]
fn graph_counts_every_transition() {
    let (ds, _) = concept(8);
    let mut rng = RngStream::new(5, 0);
    let stories: Vec<StorySample> = ds
        .albums
        .iter()
        .map(|a| {
            let mut z: Vec<usize> = (0..a.len()).filter(|_| rng.uniform() < 0.1).take(6).collect();
            if z.len() < 2 {
                z = vec![0, 1];
            }
            StorySample {
                album: a.id.clone(),
                z: StoryIndices::new(z, a.len()).unwrap(),
                loglik: 0.0,
            }
        })
        .collect();
    let expected: usize = stories.iter().map(|s| s.z.len() - 1).sum();
    let all = transition_graph(&stories, &ds, usize::MAX).unwrap();
    assert_eq!(all.total_transitions, expected);
    assert_eq!(all.edges.iter().map(|e| e.2).sum::<usize>(), expected);
    let top = transition_graph(&stories, &ds, 3).unwrap();
    assert_eq!(top.nodes.len(), 3);
    assert!(top.nodes.windows(2).all(|w| w[0].1 >= w[1].1));
}

#[test]
fn recovery_of_the_planted_summary_is_perfect() {
    let t = AlbumTruth {
        labels: vec![1, 1, 0, 2, 3, 3],
        summary: vec![0, 3, 4],
    };
    let m = storyline_recovery(&t.summary, &t, 3);
    assert_eq!(m.coverage, 1.0);
    assert_eq!(m.order_accuracy, Some(1.0));
    let rev = storyline_recovery(&[4, 3, 0], &t, 3);
    assert_eq!(rev.order_accuracy, Some(0.0));
    assert_eq!(storyline_recovery(&[2], &t, 3).coverage, 0.0);
}
