use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::lora::LoraAdapter;
use crate::error::{Error, Result};
use crate::kv::KvCache;
use crate::lm::{ForwardOptions, ForwardOutput, TinyLM, Token};

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// One frozen base model plus `N` scenario adapters, at most one active.
///
/// The base sits behind an `Arc` and is never mutated; adapters are applied
/// on the fly during the forward pass.
#[derive(Debug, Clone)]
pub struct AdapterRegistry {
    base: Arc<TinyLM>,
    adapters: BTreeMap<String, LoraAdapter>,
    active: Option<String>,
}

/// On-disk pairing of a base model with its adapter files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistryManifest {
    pub base_hash: String,
    pub adapters: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub file: String,
}

impl AdapterRegistry {
    pub fn new(base: impl Into<Arc<TinyLM>>) -> Self {
        Self { base: base.into(), adapters: BTreeMap::new(), active: None }
    }

    pub fn base(&self) -> &TinyLM {
        &self.base
    }

    /// SHA-256 over the base weights, including any quantization encodings.
    pub fn base_hash(&self) -> [u8; 32] {
        self.base.weights_hash()
    }

    pub fn register(&mut self, adapter: LoraAdapter) -> Result<()> {
        adapter.check_fits(&self.base)?;
        if self.adapters.contains_key(&adapter.name) {
            return Err(Error::InvalidInput(format!("adapter `{}` already registered", adapter.name)));
        }
        self.adapters.insert(adapter.name.clone(), adapter);
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.adapters.keys().map(String::as_str)
    }

    pub fn get(&self, name: &str) -> Option<&LoraAdapter> {
        self.adapters.get(name)
    }

    /// Makes `name` the single active adapter, or deactivates with `None`.
    pub fn activate(&mut self, name: Option<&str>) -> Result<()> {
        match name {
            Some(n) if !self.adapters.contains_key(n) => Err(Error::InvalidInput(format!("unknown adapter `{n}`"))),
            _ => {
                self.active = name.map(str::to_owned);
                Ok(())
            }
        }
    }

    pub fn active(&self) -> Option<&LoraAdapter> {
        self.active.as_deref().and_then(|n| self.adapters.get(n))
    }

    /// Base forward with the active adapter's deltas added per use.
    pub fn apply_forward(&self, tokens: &[Token], cache: Option<&mut KvCache>) -> Result<ForwardOutput> {
        let opts = ForwardOptions { adapter: self.active(), ..Default::default() };
        self.base.forward_with(tokens, cache, &opts)
    }

    /// Writes one JSON file per adapter plus `manifest.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<RegistryManifest> {
        std::fs::create_dir_all(dir)?;
        let mut entries = Vec::new();
        for (name, adapter) in &self.adapters {
            let file = format!("{name}.lora.json");
            std::fs::write(dir.join(&file), adapter.to_json()?)?;
            entries.push(ManifestEntry { name: name.clone(), file });
        }
        let manifest = RegistryManifest { base_hash: hex(&self.base_hash()), adapters: entries };
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(manifest)
    }

    /// Loads adapters saved by [`save`](Self::save), refusing a manifest made
    /// for a different base.
    pub fn load(base: impl Into<Arc<TinyLM>>, dir: &Path) -> Result<Self> {
        let mut reg = Self::new(base);
        let manifest: RegistryManifest = serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
        let actual = hex(&reg.base_hash());
        if manifest.base_hash != actual {
            return Err(Error::Contract(format!(
                "manifest was built for base {}, this base is {actual}",
                manifest.base_hash
            )));
        }
        for e in manifest.adapters {
            let a = LoraAdapter::from_json(&std::fs::read_to_string(dir.join(&e.file))?)?;
            if a.name != e.name {
                return Err(Error::Format(format!("file `{}` holds adapter `{}`, not `{}`", e.file, a.name, e.name)));
            }
            reg.register(a)?;
        }
        Ok(reg)
    }
}
