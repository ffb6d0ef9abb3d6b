use ipembed::embed::{infer_embeddings, percentile, EmbeddingSet};
use ipembed::model::ModelConfig;
use ipembed::synth::{make_experiment, Experiment, ExperimentConfig};
use ipembed::train::{read_model, train, write_model, ModelBundle, TrainConfig};

fn trained(seed: u64) -> (Experiment, ModelBundle) {
    let exp = make_experiment(&ExperimentConfig { seed, ..Default::default() }).unwrap();
    let cfg = ModelConfig {
        hidden: 16,
        decoder_hidden: 32,
        ..ModelConfig::for_vocab(&exp.vocab)
    };
    let tcfg = TrainConfig { epochs: 100, seed, ..Default::default() };
    let (model, _) = train(&exp.train_graphs, &cfg, &tcfg).unwrap();
    let bundle = ModelBundle::new(model, exp.vocab.clone(), exp.scaler.clone(), exp.holdout.clone()).unwrap();
    (exp, bundle)
}

#[test]
fn training_graphs_score_below_training_p95_for_most_nodes() {
    let (exp, bundle) = trained(4);
    let sets: Vec<EmbeddingSet> = exp
        .train_graphs
        .iter()
        .map(|g| infer_embeddings(&bundle.model, g).unwrap())
        .collect();
    let errors: Vec<f64> = sets.iter().flat_map(|s| s.edge_errors.clone()).collect();
    let p95 = percentile(&errors, 95.0).unwrap();
    let scores: Vec<f64> = sets.iter().flat_map(|s| s.anomaly.clone()).collect();
    let below = scores.iter().filter(|&&a| a <= p95).count() as f64 / scores.len() as f64;
    assert!(below >= 0.9, "only {below:.3} of nodes at or below p95 {p95}");
    assert!(scores.iter().all(|&a| a >= 0.0));
}

#[test]
fn unseen_graph_embeds_after_model_round_trip() {
    let (exp, bundle) = trained(5);
    let mut buf = Vec::new();
    write_model(&mut buf, &bundle).unwrap();
    let loaded = read_model(buf.as_slice()).unwrap();
    let g = &exp.test_graphs[0];
    let a = infer_embeddings(&bundle.model, g).unwrap();
    let b = infer_embeddings(&loaded.model, g).unwrap();
    assert_eq!(a.embeddings, b.embeddings);
    assert_eq!(a.len(), g.num_nodes());
    assert!(a.embeddings.is_finite());
    // held-out IPs never reached training yet receive embeddings from one graph
    let held = exp.holdout.iter().find(|ip| g.contains(ip)).expect("holdout in first test graph");
    assert!(a.get(held).is_some());
    for train_graph in &exp.train_graphs {
        assert!(!train_graph.contains(held));
    }
}
