use std::cmp::Ordering;
use std::time::Instant;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stonediag_core::gateway::mock_embedding;
use stonediag_core::rag::{
    approx_tokens, chunk_document, load_store, save_store, DocumentChunk, EmbeddedChunk, RagError,
    VectorStore,
};

const DIM: usize = 32;

fn words(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn chunks_reassemble_the_document(
        text in prop::collection::vec("[a-z]{1,6}|\\PC{1,4}", 0..400)
            .prop_map(|w| w.join(" ")),
        target in 2usize..120,
        overlap_frac in 0.0f64..0.95,
    ) {
        let overlap = ((target as f64) * overlap_frac) as usize;
        let window = target * 3 / 4;
        let overlap_words = overlap * 3 / 4;
        let result = chunk_document("doc", &text, target, overlap);
        if window == 0 || overlap_words >= window || overlap >= target {
            prop_assert!(matches!(result, Err(RagError::InvalidParameters(_))));
            return Ok(());
        }
        let chunks = result.unwrap();
        let original = words(&text);
        if original.is_empty() {
            prop_assert!(chunks.is_empty());
            return Ok(());
        }

        // Oracle: first chunk whole, then each later chunk minus its overlap.
        let mut rebuilt: Vec<&str> = Vec::new();
        for (i, chunk) in chunks.iter().enumerate() {
            let w = words(&chunk.text);
            prop_assert_eq!(chunk.text.clone(), w.join(" "));
            prop_assert_eq!(&chunk.chunk_id, &format!("doc#{i:05}"));
            prop_assert_eq!(chunk.approx_tokens, approx_tokens(w.len()));
            prop_assert!(chunk.approx_tokens <= target);
            if i + 1 < chunks.len() {
                prop_assert_eq!(w.len(), window);
                let next = words(&chunks[i + 1].text);
                prop_assert_eq!(&w[w.len() - overlap_words..], &next[..overlap_words]);
            }
            if i == 0 {
                rebuilt.extend(&w);
            } else {
                rebuilt.extend(&w[overlap_words..]);
            }
        }
        prop_assert_eq!(rebuilt, original);
    }
}

#[test]
fn token_estimate_rounds_up() {
    assert_eq!(approx_tokens(0), 0);
    assert_eq!(approx_tokens(1), 2);
    assert_eq!(approx_tokens(3), 4);
    assert_eq!(approx_tokens(384), 512);
    assert_eq!(approx_tokens(385), 514);
}

fn mock_store(count: usize, rng: &mut ChaCha8Rng) -> VectorStore {
    let mut store = VectorStore::new(DIM, "mock-hash-v1", 0);
    let mut ids: Vec<usize> = (0..count).collect();
    ids.shuffle(rng);
    let mut vectors: Vec<Vec<f64>> = Vec::new();
    for id in ids {
        let text = format!("passage {id} about weathering {}", rng.gen::<u32>());
        // Ids divisible by five reuse an earlier vector so ties occur.
        let vector = match vectors.choose(rng) {
            Some(v) if id % 5 == 0 => v.clone(),
            _ => mock_embedding(&text, DIM, 7),
        };
        vectors.push(vector.clone());
        store
            .upsert(EmbeddedChunk {
                chunk: DocumentChunk {
                    chunk_id: format!("src{}#{:05}", id % 3, id),
                    source_id: format!("src{}", id % 3),
                    text,
                    approx_tokens: 8,
                },
                vector,
            })
            .unwrap();
    }
    store
}

/// Full sort of every entry by descending score, then ascending chunk id.
fn oracle(store: &VectorStore, query: &[f64], k: usize) -> Vec<(String, f64)> {
    let mut all: Vec<(String, f64)> = store
        .entries()
        .iter()
        .map(|e| {
            let score = e.vector.iter().zip(query).map(|(a, b)| a * b).sum();
            (e.chunk.chunk_id.clone(), score)
        })
        .collect();
    all.sort_by(|a, b| match b.1.partial_cmp(&a.1).unwrap() {
        Ordering::Equal => a.0.cmp(&b.0),
        other => other,
    });
    all.truncate(k);
    all
}

#[test]
fn query_matches_full_sort_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for size in [10, 100, 1000] {
        let store = mock_store(size, &mut rng);
        for k in [1, 5, 50] {
            for q in 0..20 {
                let query = if q % 4 == 0 {
                    // A stored vector as query guarantees an exact top tie group.
                    store.entries()[rng.gen_range(0..size)].vector.clone()
                } else {
                    mock_embedding(&format!("query {q} weathering"), DIM, 7)
                };
                let started = Instant::now();
                let got = store.query(&query, k).unwrap();
                let elapsed = started.elapsed();
                if size == 1000 {
                    assert!(elapsed.as_secs_f64() < 1.0, "query took {elapsed:?}");
                }
                let got: Vec<(String, f64)> = got
                    .iter()
                    .map(|s| (s.entry.chunk.chunk_id.clone(), s.score))
                    .collect();
                assert_eq!(
                    got,
                    oracle(&store, &query, k),
                    "size {size} k {k} query {q}"
                );
            }
        }
    }
}

#[test]
fn query_rejects_bad_vectors() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let store = mock_store(10, &mut rng);
    assert!(matches!(
        store.query(&vec![0.0; DIM - 1], 1),
        Err(RagError::Dimension { .. })
    ));
    assert!(matches!(
        store.query(&vec![1.0; DIM], 1),
        Err(RagError::NotUnitNorm { .. })
    ));
    let unit = mock_embedding("x", DIM, 0);
    assert!(store.query(&unit, 0).is_err());
    assert_eq!(store.query(&unit, 500).unwrap().len(), 10);
}

#[test]
fn upsert_replaces_by_chunk_id() {
    let mut store = VectorStore::new(DIM, "m", 0);
    let entry = |text: &str| EmbeddedChunk {
        chunk: DocumentChunk {
            chunk_id: "a#00000".into(),
            source_id: "a".into(),
            text: text.into(),
            approx_tokens: 2,
        },
        vector: mock_embedding(text, DIM, 0),
    };
    store.upsert(entry("first")).unwrap();
    store.upsert(entry("second")).unwrap();
    assert_eq!(store.len(), 1);
    assert_eq!(store.get("a#00000").unwrap().chunk.text, "second");
}

fn unit_vector(raw: Vec<f64>) -> Vec<f64> {
    let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < 1e-3 {
        let mut v = vec![0.0; raw.len()];
        v[0] = 1.0;
        return v;
    }
    raw.into_iter().map(|x| x / norm).collect()
}

fn store_strategy() -> impl Strategy<Value = VectorStore> {
    (1usize..12, any::<i64>(), "\\PC{0,16}").prop_flat_map(|(dim, created_at, model)| {
        prop::collection::vec(
            (
                "\\PC{0,8}",
                "\\PC{1,40}",
                1usize..600,
                prop::collection::vec(-1.0f64..1.0, dim),
            ),
            0..20,
        )
        .prop_map(move |entries| {
            let mut store = VectorStore::new(dim, model.clone(), created_at);
            for (i, (source, text, tokens, raw)) in entries.into_iter().enumerate() {
                store
                    .upsert(EmbeddedChunk {
                        chunk: DocumentChunk {
                            chunk_id: format!("{source}#{i:05}"),
                            source_id: source,
                            text,
                            approx_tokens: tokens,
                        },
                        vector: unit_vector(raw),
                    })
                    .unwrap();
            }
            store
        })
    })
}

proptest! {
    #[test]
    fn store_bytes_round_trip(store in store_strategy()) {
        let bytes = store.to_bytes();
        let back = VectorStore::from_bytes(&bytes).unwrap();
        prop_assert_eq!(&back, &store);
        prop_assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn store_file_round_trip(store in store_strategy()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kb.store");
        save_store(&store, &path).unwrap();
        prop_assert_eq!(load_store(&path).unwrap(), store);
    }

    #[test]
    fn any_flipped_byte_is_detected(store in store_strategy(), position in any::<prop::sample::Index>(), bit in 0u8..8) {
        let mut bytes = store.to_bytes();
        let at = position.index(bytes.len());
        bytes[at] ^= 1 << bit;
        let detected = matches!(VectorStore::from_bytes(&bytes), Err(RagError::Integrity { .. }));
        prop_assert!(detected);
    }

    #[test]
    fn truncation_is_detected(store in store_strategy(), keep in any::<prop::sample::Index>()) {
        let bytes = store.to_bytes();
        let cut = keep.index(bytes.len());
        prop_assert!(VectorStore::from_bytes(&bytes[..cut]).is_err());
    }
}

#[test]
fn bad_magic_behind_valid_checksum_reports_offset() {
    use sha2::{Digest, Sha256};
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let store = mock_store(3, &mut rng);
    let bytes = store.to_bytes();
    let mut body = bytes[..bytes.len() - 32].to_vec();
    body[0] = b'X';
    let digest = Sha256::digest(&body);
    body.extend_from_slice(&digest);
    match VectorStore::from_bytes(&body) {
        Err(RagError::Integrity { offset, .. }) => assert_eq!(offset, 0),
        other => panic!("expected integrity error, got {other:?}"),
    }
}
