use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};

use proptest::prelude::*;

use super::*;

fn l2(values: &[f64]) -> f64 {
    let mut acc = 0.0;
    for v in values {
        acc += v * v;
    }
    acc.sqrt()
}

#[test]
fn local_encoder_is_unit_norm_at_requested_dimension() {
    let enc = HashingEncoder::new(64);
    let v = enc.embed("water policy").unwrap();
    assert_eq!(v.dimension(), 64);
    assert!((l2(v.values()) - 1.0).abs() <= 1e-9);
}

#[test]
fn empty_text_is_rejected() {
    let enc = HashingEncoder::new(8);
    assert_eq!(enc.embed(""), Err(EmbedError::EmptyText));
    assert_eq!(enc.embed(" \t\n"), Err(EmbedError::EmptyText));
    let err = enc.embed_batch(&["ok", ""]).unwrap_err();
    assert!(matches!(err, EmbedError::AtIndex { index: 1, .. }));
}

#[test]
fn embedding_is_deterministic_and_case_insensitive() {
    let enc = HashingEncoder::new(32);
    assert_eq!(enc.embed("Clean Water").unwrap(), enc.embed("Clean Water").unwrap());
    assert_eq!(enc.embed("Clean Water").unwrap(), enc.embed("clean   water").unwrap());
}

#[test]
fn token_disjoint_texts_with_disjoint_buckets_are_orthogonal() {
    let enc = HashingEncoder::new(4096);
    let a = enc.embed("schools need tablets").unwrap();
    let b = enc.embed("pandemic response plans").unwrap();
    let support = |v: &EmbeddingVector| -> Vec<usize> {
        v.values().iter().enumerate().filter(|(_, x)| **x != 0.0).map(|(i, _)| i).collect()
    };
    let (sa, sb) = (support(&a), support(&b));
    assert_eq!(sa.len(), 3);
    assert_eq!(sb.len(), 3);
    assert!(sa.iter().all(|i| !sb.contains(i)));
    let dot: f64 = a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum();
    assert_eq!(dot, 0.0);
}

#[test]
fn batch_matches_single_calls() {
    let enc = HashingEncoder::new(16);
    assert!(enc.embed_batch(&[]).unwrap().is_empty());
    let batch = enc.embed_batch(&["a", "b"]).unwrap();
    assert_eq!(batch, vec![enc.embed("a").unwrap(), enc.embed("b").unwrap()]);
}

struct Counting {
    inner: HashingEncoder,
    calls: AtomicUsize,
    texts: AtomicUsize,
}

impl Counting {
    fn new(dim: usize) -> Self {
        Self {
            inner: HashingEncoder::new(dim),
            calls: AtomicUsize::new(0),
            texts: AtomicUsize::new(0),
        }
    }
}

impl Embedder for Counting {
    fn provider_id(&self) -> &str {
        "counting"
    }

    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.texts.fetch_add(1, Ordering::SeqCst);
        self.inner.embed(text)
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.texts.fetch_add(texts.len(), Ordering::SeqCst);
        texts.iter().map(|t| self.inner.embed(t)).collect()
    }
}

#[test]
fn identical_texts_cost_one_provider_call() {
    let cached = CachedEmbedder::new(Counting::new(16));
    let texts = vec!["same words"; 1000];
    let out = cached.embed_batch(&texts).unwrap();
    assert_eq!(out.len(), 1000);
    assert_eq!(cached.provider_calls(), 1);
    assert_eq!(cached.inner().texts.load(Ordering::SeqCst), 1);
    assert_eq!(cached.embed("same words").unwrap(), out[0]);
    assert_eq!(cached.provider_calls(), 1);
}

#[test]
fn concurrent_embeds_store_one_value() {
    let cached = Arc::new(CachedEmbedder::new(Counting::new(16)));
    let handles: Vec<_> = (0..8)
        .map(|_| {
            let c = cached.clone();
            std::thread::spawn(move || c.embed("shared text").unwrap())
        })
        .collect();
    let results: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    assert!(results.windows(2).all(|w| w[0] == w[1]));
    assert_eq!(cached.inner().calls.load(Ordering::SeqCst), 1);
    assert_eq!(cached.len(), 1);
}

#[test]
fn cache_persists_and_checks_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cache.json");
    let cached = CachedEmbedder::new(HashingEncoder::new(8));
    let v = cached.embed("alpha beta").unwrap();
    cached.save(&path).unwrap();

    let loaded = EmbeddingCache::load(&path).unwrap();
    assert_eq!(loaded.entries[&content_key("alpha beta")], v);
    let bytes_a = std::fs::read(&path).unwrap();
    CachedEmbedder::with_cache(HashingEncoder::new(8), loaded.clone())
        .unwrap()
        .save(&path)
        .unwrap();
    assert_eq!(bytes_a, std::fs::read(&path).unwrap(), "save is byte-stable");

    assert!(matches!(
        CachedEmbedder::with_cache(HashingEncoder::new(16), loaded),
        Err(CacheError::Mismatch { .. })
    ));
}

#[test]
fn config_validation() {
    assert!(EmbedderConfig::local(1).build().is_err());
    assert!(EmbedderConfig::local(2).build().is_ok());
    let mut remote = EmbedderConfig::remote("http://x");
    remote.endpoint = None;
    assert!(remote.build().is_err());
    assert_eq!(EmbedderConfig::remote("http://x").dimension, 512);
}

fn serve_json_once(body: String) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/embed", listener.local_addr().unwrap());
    std::thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut len = 0usize;
        loop {
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                len = v.trim().parse().unwrap();
            }
            if line == "\r\n" {
                break;
            }
        }
        let mut sink = vec![0; len];
        reader.read_exact(&mut sink).unwrap();
        let mut stream = stream;
        write!(
            stream,
            "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{}",
            body.len(),
            body
        )
        .unwrap();
    });
    url
}

#[test]
fn remote_encoder_parses_rows_and_checks_dimension() {
    let url = serve_json_once("[[1.0, 0.0, 0.0], [0.0, 2.0, 0.0]]".into());
    let enc = RemoteEncoder::new(url, 3);
    let out = enc.embed_batch(&["a", "b"]).unwrap();
    assert_eq!(out[1].values(), &[0.0, 2.0, 0.0]);

    let url = serve_json_once("[[1.0, 0.0]]".into());
    let enc = RemoteEncoder::new(url, 3);
    assert_eq!(
        enc.embed("a"),
        Err(EmbedError::DimensionMismatch { expected: 3, found: 2 })
    );
}

#[test]
fn remote_encoder_unreachable() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let enc = RemoteEncoder::new(format!("http://127.0.0.1:{port}/"), 3);
    assert!(matches!(enc.embed("a"), Err(EmbedError::ProviderUnavailable(_))));
}

#[test]
fn warm_cache_serves_remote_embedder_offline() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let enc = RemoteEncoder::new(format!("http://127.0.0.1:{port}/"), 3);
    let mut cache = EmbeddingCache::new(enc.provider_id(), 3);
    cache.insert("hello", EmbeddingVector::new(vec![0.0, 1.0, 0.0]).unwrap());
    let cached = CachedEmbedder::with_cache(enc, cache).unwrap();
    assert_eq!(cached.embed("hello").unwrap().values(), &[0.0, 1.0, 0.0]);
    assert_eq!(cached.provider_calls(), 0);
    assert!(cached.embed("uncached").is_err());
}

#[test]
fn vectors_reject_non_finite_values() {
    assert_eq!(EmbeddingVector::new(vec![1.0, f64::NAN]), Err(EmbedError::NonFinite));
    assert!(EmbeddingVector::new(vec![]).is_err());
    assert!(serde_json::from_str::<EmbeddingVector>("[]").is_err());
}

proptest! {
    #[test]
    fn local_vectors_are_finite_unit_norm(text in "\\PC{0,80}", dim in 2usize..300) {
        let enc = HashingEncoder::new(dim);
        match enc.embed(&text) {
            Ok(v) => {
                prop_assert!(v.values().iter().all(|x| x.is_finite()));
                prop_assert!((l2(v.values()) - 1.0).abs() <= 1e-9);
            }
            Err(e) => {
                prop_assert_eq!(e, EmbedError::EmptyText);
                prop_assert!(text.trim().is_empty());
            }
        }
    }
}
