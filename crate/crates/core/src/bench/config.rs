//! Experiment configuration.
//!
//! Configs are JSON documents described by `docs/experiment.schema.json`.
//! Parsing is strict (unknown fields are rejected) and every config passes
//! [`ExperimentConfig::validate`] before a run starts.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adapters::QalftConfig;
use crate::error::{Error, Result};
use crate::kv::{EvictionPolicy, HybridWeights};
use crate::lm::{LayerSlot, ModelConfig, SlotId};
use crate::quant::{Granularity, QuantSpec, Scheme, SparsitySpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskSpec {
    /// Key-value fact planted in filler; `needle_pos` is drawn per trial when absent.
    Needle {
        context_len: usize,
        #[serde(default)]
        needle_pos: Option<usize>,
    },
    /// Uniformly random prompt tokens.
    Copy { len: usize },
    /// Synthetic two-speaker dialogue over an entity lexicon.
    Dialogue {
        turns: usize,
        #[serde(default)]
        lexicon: Option<Vec<String>>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadInit {
    Zero,
    #[default]
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DraftSpec {
    /// Independent draft with the target's own weights.
    #[serde(rename = "self")]
    SelfDraft,
    Independent {
        model: ModelConfig,
        #[serde(default)]
        seed: u64,
    },
    FeatureReuse {
        #[serde(default)]
        init: HeadInit,
    },
}

impl DraftSpec {
    pub fn label(&self) -> &'static str {
        match self {
            DraftSpec::SelfDraft => "self",
            DraftSpec::Independent { .. } => "independent",
            DraftSpec::FeatureReuse { init: HeadInit::Zero } => "feature_reuse_zero",
            DraftSpec::FeatureReuse { init: HeadInit::Random } => "feature_reuse",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedPlan {
    pub name: String,
    pub spec: QuantSpec,
    #[serde(default)]
    pub sparsity: Option<SparsitySpec>,
}

fn default_decode_len() -> usize {
    8
}
fn default_bytes_per_element() -> u64 {
    2
}
fn default_calibration() -> usize {
    8
}
fn default_swaps() -> usize {
    100
}
fn default_gradient_checks() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MethodSpec {
    Evict {
        policies: Vec<EvictionPolicy>,
        eviction_ratios: Vec<f64>,
        #[serde(default = "default_decode_len")]
        decode_len: usize,
        #[serde(default = "default_bytes_per_element")]
        bytes_per_element: u64,
    },
    Spec {
        drafts: Vec<DraftSpec>,
        k: Vec<usize>,
        max_new: usize,
        #[serde(default)]
        trace: bool,
    },
    Quant {
        plans: Vec<NamedPlan>,
        #[serde(default)]
        bpw_budget: Option<f64>,
        #[serde(default = "default_calibration")]
        calibration: usize,
    },
    Lora {
        adapters: usize,
        #[serde(default = "default_swaps")]
        swaps: usize,
        rank: usize,
        alpha: f64,
        targets: Vec<SlotId>,
        #[serde(default)]
        qalft: QalftConfig,
        #[serde(default = "default_gradient_checks")]
        gradient_checks: usize,
    },
}

impl MethodSpec {
    pub fn name(&self) -> &'static str {
        match self {
            MethodSpec::Evict { .. } => "evict",
            MethodSpec::Spec { .. } => "spec",
            MethodSpec::Quant { .. } => "quant",
            MethodSpec::Lora { .. } => "lora",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default)]
    pub dir: Option<String>,
    #[serde(default)]
    pub format: OutputFormat,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub trials: usize,
    pub task: TaskSpec,
    pub method: MethodSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

impl ExperimentConfig {
    /// Strict parse followed by semantic validation.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("config does not match the schema: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.trials == 0 {
            return Err(Error::Config("trials must be ≥ 1".into()));
        }
        match &self.task {
            TaskSpec::Needle { context_len, needle_pos } => {
                if *context_len == 0 {
                    return Err(Error::Config("needle context_len must be ≥ 1".into()));
                }
                if let Some(p) = needle_pos {
                    if p >= context_len {
                        return Err(Error::Config(format!("needle_pos {p} must be below context_len {context_len}")));
                    }
                }
            }
            TaskSpec::Copy { len } if *len == 0 => return Err(Error::Config("copy len must be ≥ 1".into())),
            TaskSpec::Dialogue { turns, lexicon } if *turns == 0 || lexicon.as_ref().is_some_and(|l| l.is_empty()) => {
                return Err(Error::Config("dialogue needs turns ≥ 1 and a nonempty lexicon".into()))
            }
            _ => {}
        }
        match &self.method {
            MethodSpec::Evict { policies, eviction_ratios, bytes_per_element, .. } => {
                if policies.is_empty() || eviction_ratios.is_empty() {
                    return Err(Error::Config("evict needs at least one policy and one ratio".into()));
                }
                for p in policies {
                    p.validate()?;
                }
                if let Some(r) = eviction_ratios.iter().find(|r| !(0.0..1.0).contains(*r)) {
                    return Err(Error::Config(format!("eviction ratio {r} outside [0, 1)")));
                }
                if *bytes_per_element == 0 {
                    return Err(Error::Config("bytes_per_element must be ≥ 1".into()));
                }
            }
            MethodSpec::Spec { drafts, k, max_new, .. } => {
                if drafts.is_empty() || k.is_empty() || k.contains(&0) || *max_new == 0 {
                    return Err(Error::Config("spec needs drafts, k values ≥ 1 and max_new ≥ 1".into()));
                }
                for d in drafts {
                    if let DraftSpec::Independent { model, .. } = d {
                        model.validate()?;
                        if model.vocab_size != self.model.vocab_size {
                            return Err(Error::Config("independent draft must share the target vocabulary".into()));
                        }
                    }
                }
            }
            MethodSpec::Quant { plans, bpw_budget, .. } => {
                if plans.is_empty() {
                    return Err(Error::Config("quant needs at least one plan".into()));
                }
                for p in plans {
                    p.spec.validate()?;
                    if let Some(s) = &p.sparsity {
                        s.validate()?;
                    }
                }
                if let Some(b) = bpw_budget {
                    if !(*b > 0.0) {
                        return Err(Error::Config("bpw budget must be positive".into()));
                    }
                }
            }
            MethodSpec::Lora { adapters, rank, alpha, targets, qalft, .. } => {
                if *adapters == 0 || *rank == 0 || !(*alpha > 0.0) || targets.is_empty() {
                    return Err(Error::Config("lora needs adapters ≥ 1, rank ≥ 1, alpha > 0 and targets".into()));
                }
                if qalft.rank == 0 || !(qalft.alpha > 0.0) || !(qalft.learning_rate > 0.0) {
                    return Err(Error::Config("invalid qalft settings".into()));
                }
            }
        }
        Ok(())
    }

    /// Built-in config for a subcommand, used when `--config` is omitted.
    pub fn default_for(command: &str) -> Result<Self> {
        let base = |task, method| Self {
            model: ModelConfig { ffn_mult: 2, tie_embeddings: false, ..ModelConfig::new(64, 32, 2, 4, 2) },
            seed: 0,
            trials: 10,
            task,
            method,
            output: OutputSpec::default(),
        };
        Ok(match command {
            "evict" | "gen" => base(
                TaskSpec::Needle { context_len: 512, needle_pos: None },
                MethodSpec::Evict {
                    policies: vec![
                        EvictionPolicy::AttentionSink { sinks: 4, window: 28 },
                        EvictionPolicy::HeavyHitter { recent: 16 },
                        EvictionPolicy::ObsWindow { obs: 16, pool_kernel: 5 },
                        EvictionPolicy::Hybrid(HybridWeights::default()),
                        EvictionPolicy::Random { seed: 0 },
                    ],
                    eviction_ratios: vec![0.25, 0.5],
                    decode_len: default_decode_len(),
                    bytes_per_element: default_bytes_per_element(),
                },
            ),
            "spec" => base(
                TaskSpec::Copy { len: 8 },
                MethodSpec::Spec {
                    drafts: vec![
                        DraftSpec::SelfDraft,
                        DraftSpec::Independent {
                            model: ModelConfig { tie_embeddings: false, ..ModelConfig::new(64, 16, 1, 2, 1) },
                            seed: 1,
                        },
                        DraftSpec::FeatureReuse { init: HeadInit::Random },
                    ],
                    k: vec![1, 4, 8],
                    max_new: 36,
                    trace: false,
                },
            ),
            "quant" => base(
                TaskSpec::Copy { len: 16 },
                MethodSpec::Quant {
                    plans: [8u8, 4, 3, 2]
                        .iter()
                        .map(|&b| NamedPlan {
                            name: format!("int{b}_g16"),
                            spec: QuantSpec::new(b, Scheme::Symmetric, Granularity::PerGroup { g: 16 }),
                            sparsity: None,
                        })
                        .collect(),
                    bpw_budget: Some(3.5),
                    calibration: default_calibration(),
                },
            ),
            "lora-demo" => base(
                TaskSpec::Copy { len: 8 },
                MethodSpec::Lora {
                    adapters: 3,
                    swaps: default_swaps(),
                    rank: 2,
                    alpha: 4.0,
                    targets: vec![SlotId::Layer(0, LayerSlot::Wq), SlotId::Layer(1, LayerSlot::Wv)],
                    qalft: QalftConfig::default(),
                    gradient_checks: default_gradient_checks(),
                },
            ),
            other => return Err(Error::InvalidInput(format!("no built-in config for `{other}`"))),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        for c in ["evict", "spec", "quant", "lora-demo"] {
            let cfg = ExperimentConfig::default_for(c).unwrap();
            cfg.validate().unwrap();
            let text = serde_json::to_string(&cfg).unwrap();
            assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);
        }
    }

    #[test]
    fn unknown_fields_rejected() {
        let text = r#"{"task":{"kind":"copy","len":4},"method":{"kind":"spec","drafts":[{"kind":"self"}],"k":[2],"max_new":4},"bogus":1}"#;
        assert!(matches!(ExperimentConfig::from_json(text), Err(Error::Config(_))));
    }

    #[test]
    fn semantic_checks() {
        let text = r#"{"task":{"kind":"needle","context_len":10,"needle_pos":10},"method":{"kind":"evict","policies":[{"kind":"random","seed":0}],"eviction_ratios":[0.5]}}"#;
        assert!(ExperimentConfig::from_json(text).is_err());
        let text = r#"{"task":{"kind":"copy","len":4},"method":{"kind":"spec","drafts":[{"kind":"self"}],"k":[0],"max_new":4}}"#;
        assert!(ExperimentConfig::from_json(text).is_err());
    }
}
