use edgelab::adapters::{
    create_adapter, merge_model, planted_rank1, qalft_fit, AdapterRegistry, LoraAdapter, QalftConfig,
};
use edgelab::lm::{LayerSlot, SlotId};
use edgelab::quant::{ptq_model, quantize, PrecisionPlan, QuantSpec};
use edgelab::tensor::Matrix;
use edgelab::{Error, ModelConfig, TinyLM};

fn config(d: usize) -> ModelConfig {
    ModelConfig { tie_embeddings: false, ..ModelConfig::new(40, d, 2, 4, 2) }
}

fn base() -> TinyLM {
    let m = TinyLM::init(config(32), 3).unwrap();
    ptq_model(&m, &PrecisionPlan::uniform(&m, QuantSpec::symmetric_per_group(4, 16))).unwrap()
}

/// An adapter with nonzero `B`, so it actually changes the outputs.
fn trained(model: &TinyLM, name: &str, seed: u64) -> LoraAdapter {
    let targets = [SlotId::Layer(0, LayerSlot::Wq), SlotId::Layer(1, LayerSlot::WDown), SlotId::LmHead];
    let mut a = create_adapter(model, name, &targets, 2, 4.0, seed).unwrap();
    for (i, id) in targets.into_iter().enumerate() {
        let p = a.pair_mut(id).unwrap();
        for (j, v) in p.b.data.iter_mut().enumerate() {
            *v = (((j * 7 + i * 3 + seed as usize) % 11) as f32 - 5.0) * 0.01;
        }
    }
    a
}

const PROMPT: [u32; 9] = [1, 4, 9, 16, 25, 36, 9, 4, 1];

#[test]
fn saved_registry_reloads_against_the_same_base() {
    let dir = tempfile::tempdir().unwrap();
    let m = base();
    let mut reg = AdapterRegistry::new(m.clone());
    reg.register(trained(&m, "chat", 1)).unwrap();
    reg.register(trained(&m, "summarize", 2)).unwrap();
    let manifest = reg.save(dir.path()).unwrap();
    assert_eq!(manifest.adapters.len(), 2);

    let back = AdapterRegistry::load(m.clone(), dir.path()).unwrap();
    assert_eq!(back.names().collect::<Vec<_>>(), vec!["chat", "summarize"]);
    for n in ["chat", "summarize"] {
        assert_eq!(back.get(n), reg.get(n));
    }

    let other = TinyLM::init(config(32), 4).unwrap();
    assert!(matches!(AdapterRegistry::load(other, dir.path()), Err(Error::Contract(_))));
}

#[test]
fn on_the_fly_deltas_match_the_merged_model() {
    let m = base();
    let adapter = trained(&m, "chat", 7);
    let merged = merge_model(&m, &adapter).unwrap();
    let mut reg = AdapterRegistry::new(m.clone());
    reg.register(adapter).unwrap();
    reg.activate(Some("chat")).unwrap();
    let live = reg.apply_forward(&PROMPT, None).unwrap().logits;
    let dense = merged.logits(&PROMPT).unwrap();
    let base_logits = m.logits(&PROMPT).unwrap();
    let diff = |a: &Matrix, b: &Matrix| a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).fold(0.0f32, f32::max);
    assert!(diff(&live, &dense) < 1e-4, "{}", diff(&live, &dense));
    assert!(diff(&live, &base_logits) > 1e-3);

    reg.activate(None).unwrap();
    assert_eq!(reg.apply_forward(&PROMPT, None).unwrap().logits, base_logits);
    assert_eq!(reg.base().weights_hash(), m.weights_hash());
}

#[test]
fn fresh_adapters_leave_outputs_unchanged() {
    let m = base();
    let mut reg = AdapterRegistry::new(m.clone());
    reg.register(create_adapter(&m, "new", &[SlotId::Layer(0, LayerSlot::Wv)], 4, 8.0, 9).unwrap()).unwrap();
    reg.activate(Some("new")).unwrap();
    assert_eq!(reg.apply_forward(&PROMPT, None).unwrap().logits, m.logits(&PROMPT).unwrap());
}

#[test]
fn registry_rejects_bad_adapters() {
    let m = base();
    let mut reg = AdapterRegistry::new(m.clone());
    reg.register(trained(&m, "a", 1)).unwrap();
    assert!(reg.register(trained(&m, "a", 2)).is_err());
    assert!(reg.activate(Some("missing")).is_err());

    let wide = TinyLM::init(config(48), 3).unwrap();
    assert!(reg.register(trained(&wide, "wide", 1)).is_err());
    assert!(create_adapter(&m, "norm", &[SlotId::FinalNorm], 1, 1.0, 0).is_err());
    assert!(create_adapter(&m, "huge", &[SlotId::Layer(0, LayerSlot::Wq)], 33, 1.0, 0).is_err());
}

#[test]
fn qalft_descends_without_touching_the_base() {
    let w = Matrix::randn(12, 10, 0.5, &mut edgelab::tensor::keyed_rng(5, "w"));
    let w_q = quantize(&w, &QuantSpec::symmetric_per_group(3, 5)).unwrap().frozen();
    let (xs, ys) = planted_rank1(&w_q, 48, 11);
    for rank in [1, 2] {
        let fit = qalft_fit(&w_q, &xs, &ys, &QalftConfig { rank, steps: 500, ..Default::default() }).unwrap();
        assert!(fit.losses.windows(2).all(|p| p[1] <= p[0]));
        assert!(fit.final_loss < fit.losses[0] * 1e-3, "rank {rank}: {} vs {}", fit.final_loss, fit.losses[0]);
        assert_eq!(fit.base_hash.0, fit.base_hash.1);
        assert_eq!((fit.pair.a.rows, fit.pair.b.cols), (rank, rank));
    }
    assert!(qalft_fit(&w_q, &xs, &ys[..3], &QalftConfig::default()).is_err());
}
