//! Run manifests: enough metadata next to each run's outputs to replay it.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::Result;
use chrono::{DateTime, Utc};
use mex_core::kv;
use mex_core::oracle::QueryLedger;

pub struct ManifestBuilder {
    entries: BTreeMap<String, String>,
    started: DateTime<Utc>,
}

impl ManifestBuilder {
    pub fn start(command: &str) -> Self {
        let mut entries = BTreeMap::new();
        entries.insert("command".to_string(), command.to_string());
        entries.insert(
            "version".to_string(),
            env!("CARGO_PKG_VERSION").to_string(),
        );
        let started = Utc::now();
        entries.insert("started".to_string(), started.to_rfc3339());
        ManifestBuilder {
            entries,
            started,
        }
    }

    pub fn field(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.entries.insert(key.to_string(), value.to_string());
        self
    }

    pub fn ledger(&mut self, ledger: &QueryLedger) -> &mut Self {
        self.entries
            .insert("ledger.used".to_string(), ledger.used().to_string());
        if let Some(b) = ledger.budget() {
            self.entries.insert("ledger.budget".to_string(), b.to_string());
        }
        for (phase, count) in ledger.breakdown() {
            self.entries
                .insert(format!("ledger.phase.{phase}"), count.to_string());
        }
        self
    }

    pub fn finish(mut self, dir: &Path) -> Result<()> {
        let finished = Utc::now();
        self.entries
            .insert("finished".to_string(), finished.to_rfc3339());
        self.entries.insert(
            "elapsed_seconds".to_string(),
            (finished - self.started).num_seconds().to_string(),
        );
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("manifest.txt"), kv::format(&self.entries))?;
        Ok(())
    }
}
