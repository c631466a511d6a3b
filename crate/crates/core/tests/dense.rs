mod common;

use std::fs::File;
use std::io::BufReader;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use triplet_retrieval::corpus::{build_corpus, parse_triplets, RelationTemplateTable};
use triplet_retrieval::dense::{build_dense_index, DenseIndex, VectorFile};
use triplet_retrieval::provider::{EmbedRole, EmbeddingProvider, HashingProvider, PrecomputedProvider};
use triplet_retrieval::ranking::Provenance;

fn random_rows(rng: &mut ChaCha8Rng, count: usize, dim: usize) -> Vec<Vec<f32>> {
    (0..count)
        .map(|_| (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect())
        .collect()
}

fn index_of(rows: &[Vec<f32>]) -> DenseIndex {
    let corpus = common::corpus_from_texts(&(0..rows.len()).map(|i| format!("p{i}")).collect::<Vec<_>>());
    DenseIndex::from_vectors(&corpus, VectorFile::from_rows(rows).unwrap(), "test".into()).unwrap()
}

#[test]
fn hundred_vectors_ten_queries_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rows = random_rows(&mut rng, 100, 16);
    let idx = index_of(&rows);
    for _ in 0..10 {
        let q: Vec<f32> = (0..16).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let scores = common::oracle_dot_matrix(&rows, &q);
        let hits = idx.search(&q, 100).unwrap();
        let ids: Vec<usize> = hits.iter().map(|h| h.passage_id).collect();
        assert_eq!(ids, common::oracle_rank(&scores, 100));
        for h in &hits {
            assert_eq!(h.score, scores[h.passage_id]);
            assert_eq!(h.provenance, Provenance::Dense);
        }
    }
}

#[test]
fn duplicate_rows_tie_break_by_id() {
    let rows = vec![vec![1.0, 0.0], vec![0.5, 0.5], vec![1.0, 0.0], vec![1.0, 0.0]];
    let ids: Vec<usize> = index_of(&rows)
        .search(&[2.0, 0.0], 3)
        .unwrap()
        .iter()
        .map(|h| h.passage_id)
        .collect();
    assert_eq!(ids, [0, 2, 3]);
}

#[test]
fn batching_does_not_change_index_bytes() {
    let triplets = parse_triplets(BufReader::new(File::open(common::toy_kg_path()).unwrap())).unwrap();
    let corpus = build_corpus(&triplets, &RelationTemplateTable::conceptnet()).unwrap();
    let provider = HashingProvider::new(48).unwrap();
    let bytes = |batch| {
        let mut buf = Vec::new();
        build_dense_index(&corpus, &provider, batch).unwrap().write_to(&mut buf).unwrap();
        buf
    };
    assert_eq!(bytes(1), bytes(64));
    assert_eq!(bytes(7), bytes(64));
}

#[test]
fn precomputed_vector_file_rows_become_index_rows() {
    let triplets = parse_triplets(BufReader::new(File::open(common::toy_kg_path()).unwrap())).unwrap();
    let corpus = build_corpus(&triplets, &RelationTemplateTable::conceptnet()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let rows = random_rows(&mut rng, corpus.len(), 24);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("toy.vec");
    VectorFile::from_rows(&rows).unwrap().save(&path).unwrap();

    let file = VectorFile::load(&path).unwrap();
    let provider = PrecomputedProvider::for_corpus(&corpus, &file).unwrap();
    let idx = build_dense_index(&corpus, &provider, 8).unwrap();
    assert_eq!(idx.len(), 50);
    for (i, row) in rows.iter().enumerate() {
        assert_eq!(idx.row(i), row.as_slice());
    }
    // raw little-endian f32 body right after the 24-byte header
    let raw = std::fs::read(&path).unwrap();
    assert_eq!(raw.len(), 24 + 50 * 24 * 4);
    let first = f32::from_le_bytes(raw[24..28].try_into().unwrap());
    assert_eq!(first, rows[0][0]);
}

#[test]
fn saved_index_reloads() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let rows = random_rows(&mut rng, 30, 8);
    let idx = index_of(&rows);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.idx");
    idx.save(&path).unwrap();
    assert_eq!(DenseIndex::load(&path).unwrap(), idx);
}

#[test]
fn hashing_provider_query_and_passage_agree() {
    let p = HashingProvider::new(16).unwrap();
    let q = p.embed(&["hair brush"], EmbedRole::Query).unwrap();
    let d = p.embed(&["hair brush"], EmbedRole::Passage).unwrap();
    assert_eq!(q, d);
}

fn instance() -> impl Strategy<Value = (Vec<Vec<f32>>, Vec<f32>, usize)> {
    (1usize..=64, 1usize..200).prop_flat_map(|(dim, count)| {
        // a coarse grid of values makes exact ties common
        let val = prop_oneof![(-4i32..=4).prop_map(|v| v as f32 * 0.25), -1.0f32..1.0];
        (
            proptest::collection::vec(proptest::collection::vec(val.clone(), dim), count),
            proptest::collection::vec(val, dim),
            1usize..=count + 3,
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn search_equals_stable_argsort((rows, q, n) in instance()) {
        let idx = index_of(&rows);
        let scores = common::oracle_dot_matrix(&rows, &q);
        let ids: Vec<usize> = idx.search(&q, n).unwrap().iter().map(|h| h.passage_id).collect();
        prop_assert_eq!(ids, common::oracle_rank(&scores, n));
    }

    #[test]
    fn positive_power_of_two_scaling_keeps_ranking((rows, q, n) in instance(), k in -6i32..6) {
        let idx = index_of(&rows);
        let c = 2f32.powi(k);
        let scaled: Vec<f32> = q.iter().map(|x| x * c).collect();
        let a: Vec<usize> = idx.search(&q, n).unwrap().iter().map(|h| h.passage_id).collect();
        let b: Vec<usize> = idx.search(&scaled, n).unwrap().iter().map(|h| h.passage_id).collect();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn top_n_is_prefix((rows, q, n) in instance()) {
        let idx = index_of(&rows);
        let short = idx.search(&q, n).unwrap();
        let long = idx.search(&q, n + 1).unwrap();
        prop_assert_eq!(&long[..short.len()], short.as_slice());
    }
}

#[test]
fn arbitrary_positive_scaling_keeps_well_separated_rankings() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..200 {
        let rows = random_rows(&mut rng, 50, 12);
        let q: Vec<f32> = (0..12).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let c: f32 = rng.gen_range(0.01..100.0);
        let scores = common::oracle_dot_matrix(&rows, &q);
        let mut sorted = scores.clone();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        if sorted.windows(2).any(|w| w[0] - w[1] < 1e-4) {
            continue;
        }
        let idx = index_of(&rows);
        let scaled: Vec<f32> = q.iter().map(|x| x * c).collect();
        let a: Vec<usize> = idx.search(&q, 50).unwrap().iter().map(|h| h.passage_id).collect();
        let b: Vec<usize> = idx.search(&scaled, 50).unwrap().iter().map(|h| h.passage_id).collect();
        assert_eq!(a, b);
    }
}
