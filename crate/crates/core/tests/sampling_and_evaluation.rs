use std::collections::BTreeMap;

use gcnphr::eval::{
    accuracy_at_k, build_queries, evaluate, precision_at_k, rank, recall_at_k, EvalQuery, GcnPhrScorer, Scorer,
};
use gcnphr::graph::{build_graph, Counts, TaggingTriple};
use gcnphr::model::{GcnPhr, ModelConfig};
use gcnphr::training::{fixture, sample_triplet};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const DRAWS: usize = 100_000;

/// Pearson statistic of `counts` against equal expected frequencies.
fn chi_square(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    let expected = n as f64 / counts.len() as f64;
    counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum()
}

// Upper 0.1% points of the chi-square distribution.
const CHI2_999_DF1: f64 = 10.828;
const CHI2_999_DF2: f64 = 13.816;
const CHI2_999_DF8: f64 = 26.124;

#[test]
fn triplet_sampling_is_uniform() {
    // One user, three videos, each tagged with its own hashtag.
    let triples: Vec<TaggingTriple> = (0..3).map(|k| TaggingTriple::new(0, k, k)).collect();
    let g = build_graph(Counts::new(1, 3, 3), &triples, &[(0, 0), (0, 1), (0, 2)]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut positives = [0usize; 3];
    let mut negatives: BTreeMap<usize, [usize; 3]> = BTreeMap::new();
    for _ in 0..DRAWS {
        let t = sample_triplet(&g, &mut rng).unwrap();
        assert!(!g.hashtags_of_user_video(t.user, t.video).contains(&t.negative));
        positives[t.positive] += 1;
        negatives.entry(t.positive).or_default()[t.negative] += 1;
    }
    assert!(chi_square(&positives) < CHI2_999_DF2, "{positives:?}");
    for (pos, counts) in negatives {
        let eligible: Vec<usize> = (0..3).filter(|&j| j != pos).map(|j| counts[j]).collect();
        assert!(chi_square(&eligible) < CHI2_999_DF1, "positive {pos}: {counts:?}");
    }
}

#[test]
fn query_negatives_are_uniform_over_eligible_hashtags() {
    // Ten hashtags, ground truth {0}; three negatives per query.
    let triples: Vec<TaggingTriple> = (0..10).map(|j| TaggingTriple::new(0, j, j)).collect();
    let uploads: Vec<(usize, usize)> = (0..10).map(|k| (0, k)).collect();
    let g = build_graph(Counts::new(1, 10, 10), &triples, &uploads).unwrap();
    let held_out = [TaggingTriple::new(0, 0, 0)];
    let mut counts = [0usize; 9];
    for seed in 0..(DRAWS / 3) as u64 {
        let q = &build_queries(&held_out, &g, 3, seed).unwrap()[0];
        assert_eq!(q.n_negatives, 3);
        for &j in &q.candidates {
            if j != 0 {
                counts[j - 1] += 1;
            }
        }
    }
    assert!(chi_square(&counts) < CHI2_999_DF8, "{counts:?}");
}

struct AntiPerfect;

impl Scorer for AntiPerfect {
    fn score_candidates(&self, _user: usize, video: usize, candidates: &[usize]) -> Vec<f64> {
        candidates.iter().map(|&j| if j == video { -1.0 } else { 0.0 }).collect()
    }
}

#[test]
fn antiperfect_scorer_scores_zero() {
    let queries: Vec<EvalQuery> = (0..6)
        .map(|v| EvalQuery {
            user: 0,
            video: v,
            ground_truth: vec![v],
            candidates: (0..12).collect(),
            n_negatives: 11,
        })
        .collect();
    let report = evaluate(&AntiPerfect, &queries, &[5, 10]).unwrap();
    for m in report.metrics {
        assert_eq!((m.precision, m.recall, m.accuracy), (0.0, 0.0, 0.0));
    }
}

#[test]
fn fixture_model_report_equals_query_by_query_evaluation() {
    let (graph, features) = fixture();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let model = GcnPhr::init(ModelConfig::new(4, features.cols()), graph.n_users(), graph.n_hashtags(), 0.5, &mut rng)
        .unwrap();
    let queries = build_queries(graph.triples(), &graph, 2, 5).unwrap();
    let scorer = GcnPhrScorer::new(&model, &graph, &features);
    let ks = [1, 2, 3];
    let report = evaluate(&scorer, &queries, &ks).unwrap();

    for (idx, &k) in ks.iter().enumerate() {
        let (mut p, mut r, mut a) = (0.0, 0.0, 0.0);
        for q in &queries {
            // Rank with the model's own scoring path, not the scorer's cache.
            let mut scored: Vec<(usize, f64)> = q
                .candidates
                .iter()
                .map(|&j| (j, model.score(&graph, &features, q.user, q.video, j).unwrap()))
                .collect();
            scored.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
            let ranked: Vec<usize> = scored.into_iter().map(|(j, _)| j).collect();
            assert_eq!(ranked, rank(&scorer, q.user, q.video, &q.candidates));
            p += precision_at_k(&ranked, &q.ground_truth, k).unwrap();
            r += recall_at_k(&ranked, &q.ground_truth, k).unwrap();
            a += accuracy_at_k(&ranked, &q.ground_truth, k).unwrap();
        }
        let n = queries.len() as f64;
        let m = report.metrics[idx];
        assert!((m.precision - p / n).abs() < 1e-15);
        assert!((m.recall - r / n).abs() < 1e-15);
        assert!((m.accuracy - a / n).abs() < 1e-15);
    }
}
