use num_rational::Ratio;
use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal};

use super::config::{DraftSpec, ExperimentConfig, HeadInit, MethodSpec, TaskSpec};
use super::corpus::{
    copy_prompt, demo_lexicon, gen_dialogue, gen_needle, probe_model, tokenize_dialogue, NEEDLE_LEN, QUERY_LEN,
};
use super::report::{RunReport, TrialRow};
use crate::adapters::{create_adapter, merge_model, planted_rank1, qalft_fit, AdapterRegistry, QalftProblem};
use crate::error::{Error, Result};
use crate::kv::{cache_bytes, EvictionPolicy, KvCache};
use crate::lm::{greedy_decode, SlotId, TinyLM, Token};
use crate::metrics::{rouge_l, rouge_n, ROUGE_VARIANT};
use crate::quant::{assign_precision, model_bpw, ptq_model, top1_overlap, PrecisionPlan, QuantSpec, Scheme};
use crate::spec::{block_efficiency, decode_speculative_traced, random_head, write_trace, zero_head, DraftConfig};
use crate::tensor::{argmax, keyed_rng};

/// Per-trial seed derived from the master seed.
pub fn trial_seed(seed: u64, trial: usize) -> u64 {
    keyed_rng(seed, &format!("trial/{trial}")).next_u64()
}

/// Prompt for one trial of a non-needle task, in a vocabulary of `vocab`.
pub fn task_prompt(task: &TaskSpec, vocab: usize, seed: u64) -> Result<Vec<Token>> {
    match task {
        TaskSpec::Copy { len } => Ok(copy_prompt(*len, vocab, seed)),
        TaskSpec::Dialogue { turns, lexicon } => {
            let lex = lexicon.clone().unwrap_or_else(demo_lexicon);
            Ok(tokenize_dialogue(&gen_dialogue(*turns, &lex, seed), &lex, vocab))
        }
        TaskSpec::Needle { context_len, needle_pos } => {
            let pos = needle_pos.unwrap_or_else(|| keyed_rng(seed, "needle_pos").random_range(0..*context_len));
            let p = gen_needle(*context_len, pos, seed)?.prompt;
            if p.iter().any(|&t| t as usize >= vocab) {
                return Err(Error::Config("needle prompts need a vocabulary of at least 64".into()));
            }
            Ok(p)
        }
    }
}

/// One generated corpus item per trial, as JSON lines.
pub fn run_gen(config: &ExperimentConfig) -> Result<String> {
    let mut out = String::new();
    for trial in 0..config.trials {
        let seed = trial_seed(config.seed, trial);
        let item = match &config.task {
            TaskSpec::Needle { context_len, needle_pos } => {
                let pos = needle_pos.unwrap_or_else(|| keyed_rng(seed, "needle_pos").random_range(0..*context_len));
                let n = gen_needle(*context_len, pos, seed)?;
                serde_json::json!({"trial": trial, "needle_pos": n.needle_pos, "prompt": n.prompt,
                    "answer_span": [n.answer_span.start, n.answer_span.end], "answer": n.answer()})
            }
            TaskSpec::Dialogue { turns, lexicon } => {
                let lex = lexicon.clone().unwrap_or_else(demo_lexicon);
                let text = gen_dialogue(*turns, &lex, seed);
                let prompt = tokenize_dialogue(&text, &lex, config.model.vocab_size);
                serde_json::json!({"trial": trial, "text": text, "prompt": prompt})
            }
            TaskSpec::Copy { len } => {
                serde_json::json!({"trial": trial, "prompt": copy_prompt(*len, config.model.vocab_size, seed)})
            }
        };
        out.push_str(&serde_json::to_string(&item)?);
        out.push('\n');
    }
    Ok(out)
}

fn decode_from(model: &TinyLM, cache: &mut KvCache, first: Token, steps: usize) -> Result<Vec<Token>> {
    let mut out = Vec::with_capacity(steps);
    let mut next = first;
    for _ in 0..steps {
        out.push(next);
        let logits = model.forward(&[next], Some(cache), false)?.logits;
        next = argmax(logits.row(0)) as Token;
    }
    Ok(out)
}

fn with_seed(policy: &EvictionPolicy, seed: u64) -> EvictionPolicy {
    match policy {
        EvictionPolicy::Random { seed: s } => EvictionPolicy::Random { seed: s ^ seed },
        p => p.clone(),
    }
}

/// Prefill, one-shot eviction at each ratio, then greedy decoding compared
/// against the uncompressed cache. Needle tasks use the probe model and score
/// retrieval (every layer keeps the whole answer span).
pub fn run_evict_bench(config: &ExperimentConfig) -> Result<RunReport> {
    config.validate()?;
    let MethodSpec::Evict { policies, eviction_ratios, decode_len, bytes_per_element } = &config.method else {
        return Err(Error::Config("evict bench needs an evict method".into()));
    };
    let mut rows = Vec::new();
    for trial in 0..config.trials {
        let seed = trial_seed(config.seed, trial);
        let (model, prompt, answer) = match &config.task {
            TaskSpec::Needle { context_len, needle_pos } => {
                let pos = needle_pos.unwrap_or_else(|| keyed_rng(seed, "needle_pos").random_range(0..*context_len));
                let inst = gen_needle(*context_len, pos, seed)?;
                (probe_model(seed)?, inst.prompt, Some(inst.answer_span))
            }
            task => {
                let m = TinyLM::init(config.model.clone(), seed)?;
                let p = task_prompt(task, m.config().vocab_size, seed)?;
                (m, p, None)
            }
        };
        let mut full = KvCache::for_model(model.config());
        let logits = model.forward(&prompt, Some(&mut full), false)?.logits;
        let first = argmax(logits.row(logits.rows - 1)) as Token;
        let n = prompt.len();
        let bytes_full = cache_bytes(&full, *bytes_per_element);
        let baseline = decode_from(&model, &mut full.clone(), first, *decode_len)?;

        for policy in policies {
            let policy = with_seed(policy, seed);
            for &ratio in eviction_ratios {
                let evict = (ratio * n as f64).round() as usize;
                let budget = n - evict;
                let mut cache = full.clone();
                let report = cache.evict(&policy, budget)?;
                let bytes = cache_bytes(&cache, *bytes_per_element);
                let reduction = Ratio::new(bytes_full - bytes, bytes_full);
                if reduction != report.eviction_fraction()? {
                    return Err(Error::Contract("memory reduction differs from the eviction fraction".into()));
                }
                let hyp = decode_from(&model, &mut cache, first, *decode_len)?;
                let mut row = TrialRow::new(trial, format!("{}@{ratio}", policy.name()))
                    .metric("eviction_ratio", report.eviction_ratio()?)
                    .metric("memory_reduction", *reduction.numer() as f64 / *reduction.denom() as f64)
                    .metric("cache_bytes", bytes as f64)
                    .metric("cache_bytes_full", bytes_full as f64)
                    .metric("rouge1_f1", rouge_n(&baseline, &hyp, 1)?.f1)
                    .metric("rougeL_f1", rouge_l(&baseline, &hyp).f1);
                if let Some(span) = &answer {
                    let kept =
                        cache.layers().iter().all(|lc| span.clone().all(|p| lc.positions().binary_search(&p).is_ok()));
                    row = row.metric("retrieved", if kept { 1.0 } else { 0.0 }).info("needle_pos", span.start - 2);
                }
                rows.push(row);
            }
        }
    }
    let mut report = RunReport::new("evict", config, rows)
        .variant("rouge", ROUGE_VARIANT)
        .variant("rouge_reference", "greedy decode from the uncompressed cache, over token ids")
        .variant("retrieved", "1 when every layer keeps all answer-span entries after eviction");
    if matches!(config.task, TaskSpec::Needle { .. }) {
        report = report
            .variant("needle_layout", &format!("haystack ++ {NEEDLE_LEN}-token needle ++ {QUERY_LEN}-token query"));
    }
    Ok(report)
}

fn build_draft(spec: &DraftSpec, target: &TinyLM, k: usize, seed: u64) -> Result<DraftConfig> {
    Ok(match spec {
        DraftSpec::SelfDraft => DraftConfig::independent(target.clone(), k),
        DraftSpec::Independent { model, seed: s } => {
            DraftConfig::independent(TinyLM::init(model.clone(), keyed_rng(seed, &format!("draft/{s}")).next_u64())?, k)
        }
        DraftSpec::FeatureReuse { init: HeadInit::Zero } => DraftConfig::feature_reuse(zero_head(target), k),
        DraftSpec::FeatureReuse { init: HeadInit::Random } => DraftConfig::feature_reuse(random_head(target, seed), k),
    })
}

/// Speculative decoding sweep over draft kinds and draft lengths. Any
/// divergence from plain greedy decoding aborts the run.
pub fn run_spec_bench(config: &ExperimentConfig) -> Result<RunReport> {
    config.validate()?;
    let MethodSpec::Spec { drafts, k, max_new, trace } = &config.method else {
        return Err(Error::Config("spec bench needs a spec method".into()));
    };
    let mut rows = Vec::new();
    let mut traces = String::new();
    for trial in 0..config.trials {
        let seed = trial_seed(config.seed, trial);
        let target = TinyLM::init(config.model.clone(), seed)?;
        let prompt = task_prompt(&config.task, target.config().vocab_size, seed)?;
        let greedy = greedy_decode(&target, &prompt, *max_new)?;
        for spec in drafts {
            for &kk in k {
                let draft = build_draft(spec, &target, kk, seed)?;
                target.reset_forward_count();
                let (out, stats, rounds) = decode_speculative_traced(&target, &draft, &prompt, *max_new)?;
                if out != greedy {
                    return Err(Error::Contract(format!(
                        "speculative output diverged from greedy decoding (trial {trial}, draft {}, k {kk})",
                        spec.label()
                    )));
                }
                if target.forward_count() != stats.rounds {
                    return Err(Error::Contract("target forward count differs from rounds".into()));
                }
                let group = format!("{}@k{kk}", spec.label());
                if *trace {
                    for r in &rounds {
                        let line = serde_json::json!({"trial": trial, "group": group, "round": r.round,
                            "proposed": r.proposed, "accepted": r.accepted, "emitted": r.emitted});
                        traces.push_str(&serde_json::to_string(&line)?);
                        traces.push('\n');
                    }
                }
                rows.push(
                    TrialRow::new(trial, group)
                        .metric("block_efficiency", block_efficiency(&stats)?)
                        .metric("rounds", stats.rounds as f64)
                        .metric("proposed", stats.proposed as f64)
                        .metric("accepted", stats.accepted as f64)
                        .metric("emitted", stats.emitted as f64)
                        .metric("speedup_forwards", *max_new as f64 / stats.rounds as f64)
                        .metric("lossless", 1.0),
                );
            }
        }
    }
    let mut report = RunReport::new("spec", config, rows)
        .variant("block_efficiency", "emitted tokens per target forward; the batched verification pass counts as one")
        .variant("speedup_forwards", "greedy target forwards (max_new) over speculative target forwards");
    if *trace {
        report.attachments.push(("rounds.jsonl".into(), traces));
    }
    Ok(report)
}

fn calibration_set(config: &ExperimentConfig, vocab: usize, seed: u64, count: usize) -> Result<Vec<Vec<Token>>> {
    (0..count).map(|i| task_prompt(&config.task, vocab, trial_seed(seed, i))).collect()
}

/// Quantization plans: bits per weight, Top-1 overlap against the float
/// model, and an optional budgeted mixed-precision assignment.
pub fn run_quant_bench(config: &ExperimentConfig) -> Result<RunReport> {
    config.validate()?;
    let MethodSpec::Quant { plans, bpw_budget, calibration } = &config.method else {
        return Err(Error::Config("quant bench needs a quant method".into()));
    };
    let mut rows = Vec::new();
    for trial in 0..config.trials {
        let seed = trial_seed(config.seed, trial);
        let model = TinyLM::init(config.model.clone(), seed)?;
        let calib = calibration_set(config, model.config().vocab_size, seed, (*calibration).max(1))?;
        rows.push(
            TrialRow::new(trial, "float")
                .metric("bpw", model_bpw(&model))
                .metric("top1_overlap", top1_overlap(&model, &model, &calib)?),
        );
        for p in plans {
            let mut plan = PrecisionPlan::uniform(&model, p.spec);
            if let Some(s) = p.sparsity {
                plan = plan.with_sparsity(s);
            }
            let q = ptq_model(&model, &plan)?;
            rows.push(
                TrialRow::new(trial, p.name.clone())
                    .metric("bpw", plan.bpw(&model)?)
                    .metric("top1_overlap", top1_overlap(&model, &q, &calib)?)
                    .info("bit_map", plan.bit_map()),
            );
        }
        if let Some(budget) = bpw_budget {
            let template = plans.iter().map(|p| p.spec).next().unwrap_or(QuantSpec::new(
                8,
                Scheme::Symmetric,
                crate::quant::Granularity::PerRow,
            ));
            let plan = assign_precision(&model, &calib, *budget, template.with_bits(8))?;
            let bpw = plan.bpw(&model)?;
            if bpw > *budget {
                return Err(Error::Contract(format!("assigned plan uses {bpw} bpw over a budget of {budget}")));
            }
            let q = ptq_model(&model, &plan)?;
            rows.push(
                TrialRow::new(trial, "assigned")
                    .metric("bpw", bpw)
                    .metric("budget", *budget)
                    .metric("top1_overlap", top1_overlap(&model, &q, &calib)?)
                    .info("bit_map", plan.bit_map()),
            );
        }
    }
    Ok(RunReport::new("quant", config, rows)
        .variant("bpw", "exact stored bits (codes, 16-bit scales and zero-points, masks) per matrix weight")
        .variant("top1_overlap", "fraction of teacher-forced positions where argmax agrees with the float model"))
}

/// 1+N adapters over a quantized base: swap sequence with hash checks,
/// applied-versus-merged agreement, and a QALFT fit with gradient checks.
pub fn run_lora_demo(config: &ExperimentConfig) -> Result<RunReport> {
    config.validate()?;
    let MethodSpec::Lora { adapters, swaps, rank, alpha, targets, qalft, gradient_checks } = &config.method else {
        return Err(Error::Config("lora demo needs a lora method".into()));
    };
    let mut rows = Vec::new();
    for trial in 0..config.trials {
        let seed = trial_seed(config.seed, trial);
        let float = TinyLM::init(config.model.clone(), seed)?;
        let base = ptq_model(&float, &PrecisionPlan::uniform(&float, QuantSpec::symmetric_per_group(4, 16)))?;
        let mut reg = AdapterRegistry::new(base);
        let hash0 = reg.base_hash();
        let normal = Normal::new(0.0f32, 0.02).expect("finite std");
        for i in 0..*adapters {
            let mut a = create_adapter(reg.base(), &format!("scenario{i}"), targets, *rank, *alpha, seed ^ i as u64)?;
            let mut rng = keyed_rng(seed, &format!("adapter/{i}/b"));
            for id in a.target_slots() {
                let pair = a.pair_mut(id).expect("listed slot");
                pair.b.data.iter_mut().for_each(|v| *v = normal.sample(&mut rng));
            }
            reg.register(a)?;
        }
        let prompt = task_prompt(&config.task, reg.base().config().vocab_size, seed)?;
        let names: Vec<String> = reg.names().map(str::to_owned).collect();
        let mut rng = keyed_rng(seed, "swaps");
        let mut max_diff = 0.0f64;
        for _ in 0..*swaps {
            let pick = rng.random_range(0..=names.len());
            reg.activate(names.get(pick).map(String::as_str))?;
            let applied = reg.apply_forward(&prompt, None)?.logits;
            let reference = match reg.active() {
                Some(a) => merge_model(reg.base(), a)?.logits(&prompt)?,
                None => reg.base().logits(&prompt)?,
            };
            for (x, y) in applied.data.iter().zip(&reference.data) {
                max_diff = max_diff.max((x - y).abs() as f64);
            }
            if reg.base_hash() != hash0 {
                return Err(Error::Contract("base weights changed during adapter swaps".into()));
            }
        }
        rows.push(
            TrialRow::new(trial, "swaps")
                .metric("swaps", *swaps as f64)
                .metric("base_hash_constant", 1.0)
                .metric("max_apply_merge_diff", max_diff)
                .info("base_hash", crate::adapters::hex(&hash0)),
        );

        // QALFT on the first targeted slot of the frozen quantized base.
        let slot = targets.iter().copied().find(|s| matches!(s, SlotId::Layer(..))).unwrap_or(targets[0]);
        let w_q = reg
            .base()
            .weight(slot)
            .and_then(|w| w.quant())
            .ok_or_else(|| Error::Config(format!("slot `{slot}` is not quantized")))?
            .clone();
        let (xs, ys) = planted_rank1(&w_q, 64, seed);
        let fit = qalft_fit(&w_q, &xs, &ys, &crate::adapters::QalftConfig { seed, ..*qalft })?;
        let problem = QalftProblem::new(&w_q, &xs, &ys, qalft.rank, qalft.alpha)?;
        let ((r, inp), (out, _)) = problem.shapes();
        let mut worst = 0.0f64;
        let unit = Normal::new(0.0, 0.5).expect("finite std");
        for c in 0..*gradient_checks {
            let mut g = keyed_rng(seed, &format!("gradcheck/{c}"));
            let a: Vec<f64> = (0..r * inp).map(|_| unit.sample(&mut g)).collect();
            let b: Vec<f64> = (0..out * r).map(|_| unit.sample(&mut g)).collect();
            worst = worst.max(problem.gradient_check(&a, &b, 1e-4));
        }
        rows.push(
            TrialRow::new(trial, "qalft")
                .metric("initial_loss", fit.losses[0])
                .metric("final_loss", fit.final_loss)
                .metric("steps", (fit.losses.len() - 1) as f64)
                .metric("grad_check_max_rel_err", worst)
                .metric("base_hash_constant", if fit.base_hash.0 == fit.base_hash.1 { 1.0 } else { 0.0 })
                .info("slot", slot.to_string()),
        );
    }
    Ok(RunReport::new("lora-demo", config, rows)
        .variant("max_apply_merge_diff", "max |logit| difference between on-the-fly adapters and merged weights")
        .variant("grad_check_max_rel_err", "central differences with h = 1e-4, |a-b|/max(|a|,|b|)"))
}

/// Writes the per-round trace of one decode as JSON lines.
pub fn trace_to_string(trace: &[crate::spec::RoundTrace]) -> Result<String> {
    let mut buf = Vec::new();
    write_trace(&mut buf, trace)?;
    String::from_utf8(buf).map_err(|e| Error::Format(e.to_string()))
}
