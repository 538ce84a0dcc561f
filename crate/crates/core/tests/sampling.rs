use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Binomial, DiscreteCDF};

use santext::mechanism::stream_rng;
use santext::{
    BuildOptions, Document, EmbeddingMatrix, Layout, MechanismConfig, ProbabilityModel,
    SensitivityPartition, Token, TokenId, Vocabulary,
};

fn vocab(n: usize) -> Vocabulary {
    Vocabulary::from_tokens((0..n).map(|i| Token::new(format!("t{i}")).unwrap()))
}

fn embeddings(n: usize, m: usize, seed: u64) -> Arc<EmbeddingMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n * m).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Arc::new(EmbeddingMatrix::from_rows(m, data).unwrap())
}

fn interval_99(n: u64, p: f64) -> (u64, u64) {
    let b = Binomial::new(p, n).unwrap();
    (b.inverse_cdf(0.005), b.inverse_cdf(0.995))
}

#[test]
fn epsilon_zero_draws_are_uniform_within_four_sigma() {
    let n = 10;
    let draws = 1_000_000u64;
    for layout in [Layout::FullMatrix, Layout::LazyRow] {
        let model = ProbabilityModel::build(
            &vocab(n),
            embeddings(n, 3, 1),
            None,
            &MechanismConfig::santext(0.0, 0).unwrap(),
            BuildOptions {
                layout: Some(layout),
                ..Default::default()
            },
        )
        .unwrap();
        let mut counts = vec![0u64; n];
        let mut rng = stream_rng(1, 2, 3);
        for _ in 0..draws {
            counts[model.sample(4, &mut rng) as usize] += 1;
        }
        let mean = draws as f64 / n as f64;
        let sd = (draws as f64 * 0.1 * 0.9).sqrt();
        for (y, &c) in counts.iter().enumerate() {
            assert!(
                (c as f64 - mean).abs() <= 4.0 * sd,
                "{layout:?}: output {y} drawn {c} times"
            );
        }
    }
}

#[test]
fn nonsensitive_positions_stay_with_probability_one_minus_p() {
    // ids 0..6 non-sensitive, 6..20 sensitive
    let n = 20;
    let mask: Vec<bool> = (0..n).map(|i| i >= 6).collect();
    let partition = SensitivityPartition::from_mask(mask, 0.7);
    let model = ProbabilityModel::build(
        &vocab(n),
        embeddings(n, 4, 2),
        Some(&partition),
        &MechanismConfig::santext_plus(1.5, 0.3, 0).unwrap(),
        BuildOptions::default(),
    )
    .unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let tokens: Vec<TokenId> = (0..50).map(|_| rng.gen_range(0..n as TokenId)).collect();
    let nonsensitive: Vec<usize> = (0..50).filter(|&i| tokens[i] < 6).collect();
    assert!(!nonsensitive.is_empty());

    let reps = 10_000u64;
    let mut unchanged = 0u64;
    for rep in 0..reps {
        let out = model.sanitize_document(&Document::new(tokens.clone(), rep), 17);
        assert_eq!(out.tokens.len(), 50);
        unchanged += nonsensitive
            .iter()
            .filter(|&&i| out.tokens[i] == tokens[i])
            .count() as u64;
        // sensitive inputs never land in V_N
        for (i, &y) in out.tokens.iter().enumerate() {
            if tokens[i] >= 6 {
                assert!(y >= 6);
            }
        }
    }
    let trials = reps * nonsensitive.len() as u64;
    let (lo, hi) = interval_99(trials, 0.7);
    assert!(
        (lo..=hi).contains(&unchanged),
        "{unchanged} of {trials} outside [{lo}, {hi}]"
    );
}

#[test]
fn sanitizing_a_document_replays_exactly() {
    let n = 30;
    let model = ProbabilityModel::build(
        &vocab(n),
        embeddings(n, 5, 3),
        None,
        &MechanismConfig::santext(1.0, 0).unwrap(),
        BuildOptions::default(),
    )
    .unwrap();
    let docs: Vec<Document> = (0..200)
        .map(|i| {
            Document::new(
                (0..25).map(|j| ((i * 7 + j) % n) as TokenId).collect(),
                i as u64,
            )
        })
        .collect();
    let a = model.sanitize_documents(&docs, 42);
    let b: Vec<_> = docs
        .iter()
        .map(|d| model.sanitize_document(d, 42))
        .collect();
    assert_eq!(a, b);
    let c = model.sanitize_documents(&docs, 43);
    assert_ne!(a, c);
}
