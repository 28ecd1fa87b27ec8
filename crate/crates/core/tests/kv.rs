use std::io::BufReader;

use edgelab::kv::trace::{from_capture, read_jsonl, replay, write_jsonl};
use edgelab::kv::{cache_bytes, EvictionPolicy, KvCache};
use edgelab::lm::Token;
use edgelab::{ModelConfig, TinyLM};

fn model() -> TinyLM {
    TinyLM::init(ModelConfig::new(40, 16, 2, 2, 1), 21).unwrap()
}

#[test]
fn captured_trace_replays_to_the_live_kept_set() {
    let m = model();
    let toks: Vec<Token> = (0..30).map(|i| (i * 7 % 40) as Token).collect();
    let mut live = KvCache::for_model(m.config());
    let out = m.forward(&toks, Some(&mut live), true).unwrap();
    let records = from_capture(out.attn_rows.as_ref().unwrap());
    assert_eq!(records.len(), 2 * 30);

    let mut buf = Vec::new();
    write_jsonl(&mut buf, &records).unwrap();
    let back = read_jsonl(BufReader::new(&buf[..])).unwrap();
    assert_eq!(back, records);

    for policy in [EvictionPolicy::HeavyHitter { recent: 4 }, EvictionPolicy::ObsWindow { obs: 4, pool_kernel: 3 }] {
        let (replayed, report) = replay(&back, &policy, 12, 16).unwrap();
        let mut l = live.clone();
        l.evict(&policy, 12).unwrap();
        for layer in 0..2 {
            assert_eq!(replayed.layer(layer).positions(), l.layer(layer).positions(), "{}", policy.name());
        }
        assert_eq!(report.eviction_ratio().unwrap(), 18.0 / 30.0);
    }
}

#[test]
fn replay_rejects_gaps() {
    let m = model();
    let out = m.forward(&[1, 2, 3], None, true).unwrap();
    let mut records = from_capture(out.attn_rows.as_ref().unwrap());
    records.remove(1);
    assert!(replay(&records, &EvictionPolicy::HeavyHitter { recent: 1 }, 2, 16).is_err());
}

#[test]
fn continuous_eviction_bounds_decode() {
    let m = model();
    let policy = EvictionPolicy::AttentionSink { sinks: 2, window: 6 };
    let mut cache = KvCache::for_model(m.config()).with_continuous_eviction(policy, 8).unwrap();
    let mut t: Token = 1;
    for _ in 0..40 {
        let logits = m.forward(&[t], Some(&mut cache), false).unwrap().logits;
        t = edgelab::tensor::argmax(logits.row(0)) as Token;
        for l in 0..2 {
            assert!(cache.layer(l).len() <= 8);
        }
    }
    let kept = cache.layer(0).positions();
    assert_eq!(&kept[..2], &[0, 1]);
    assert_eq!(*kept.last().unwrap(), 39);
    // 2 layers x 8 entries x (K + V) x 8 dims x 2 bytes
    assert_eq!(cache_bytes(&cache, 2), 2 * 8 * 2 * 8 * 2);
}

#[test]
fn full_budget_is_a_no_op() {
    let m = model();
    let mut cache = KvCache::for_model(m.config());
    m.forward(&[3, 1, 4, 1, 5, 9], Some(&mut cache), false).unwrap();
    let before = cache.clone();
    let report = cache.evict(&EvictionPolicy::Random { seed: 1 }, 6).unwrap();
    assert_eq!(report.eviction_ratio().unwrap(), 0.0);
    for l in 0..2 {
        assert_eq!(cache.layer(l).positions(), before.layer(l).positions());
    }
}
