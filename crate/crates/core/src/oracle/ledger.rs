//! Exact query accounting. Every image sent to the victim is charged to
//! exactly one phase; a batch that would overflow the budget is rejected
//! whole, leaving the ledger untouched.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryLedger {
    used: u64,
    budget: Option<u64>,
    phases: BTreeMap<String, u64>,
}

impl QueryLedger {
    pub fn new(budget: Option<u64>) -> Self {
        QueryLedger {
            used: 0,
            budget,
            phases: BTreeMap::new(),
        }
    }

    pub fn unlimited() -> Self {
        Self::new(None)
    }

    pub fn used(&self) -> u64 {
        self.used
    }

    pub fn budget(&self) -> Option<u64> {
        self.budget
    }

    pub fn remaining(&self) -> Option<u64> {
        self.budget.map(|b| b - self.used)
    }

    pub fn phase(&self, name: &str) -> u64 {
        self.phases.get(name).copied().unwrap_or(0)
    }

    pub fn breakdown(&self) -> &BTreeMap<String, u64> {
        &self.phases
    }

    /// Pre-charge check: does the budget admit `n` more queries?
    pub fn admits(&self, n: u64) -> bool {
        match self.budget {
            Some(b) => self.used + n <= b,
            None => true,
        }
    }

    /// Charges `n` queries to `phase`, or fails without changing anything.
    pub fn charge(&mut self, phase: &str, n: u64) -> Result<()> {
        if !self.admits(n) {
            return Err(Error::BudgetExhausted {
                requested: n,
                remaining: self.remaining().unwrap_or(0),
            });
        }
        self.used += n;
        *self.phases.entry(phase.to_string()).or_insert(0) += n;
        Ok(())
    }

    /// Internal consistency: the total always equals the phase sum.
    pub fn is_consistent(&self) -> bool {
        self.phases.values().sum::<u64>() == self.used
    }
}

/// Append-only persistence: one `phase count unix_timestamp` line per
/// charge, so totals survive restarts.
pub struct LedgerLog {
    path: PathBuf,
}

impl LedgerLog {
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)?;
        Ok(LedgerLog {
            path: path.to_path_buf(),
        })
    }

    pub fn append(&self, phase: &str, count: u64) -> Result<()> {
        let ts = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let mut f = std::fs::OpenOptions::new().append(true).open(&self.path)?;
        writeln!(f, "{phase} {count} {ts}")?;
        Ok(())
    }

    /// Rebuilds totals from the log, attaching the given budget.
    pub fn replay(path: &Path, budget: Option<u64>) -> Result<QueryLedger> {
        let mut ledger = QueryLedger::new(budget);
        if !path.exists() {
            return Ok(ledger);
        }
        for (lineno, line) in std::fs::read_to_string(path)?.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let phase = parts
                .next()
                .ok_or_else(|| Error::format(format!("ledger log line {}", lineno + 1)))?;
            let count: u64 = parts
                .next()
                .and_then(|c| c.parse().ok())
                .ok_or_else(|| Error::format(format!("ledger log line {}", lineno + 1)))?;
            ledger.charge(phase, count)?;
        }
        Ok(ledger)
    }
}

/// Thread-safe ledger for the served oracle: check-and-add under one lock,
/// optional append-only log on every successful charge.
pub struct SharedLedger {
    inner: Mutex<QueryLedger>,
    log: Option<LedgerLog>,
}

impl SharedLedger {
    pub fn new(ledger: QueryLedger, log: Option<LedgerLog>) -> Self {
        SharedLedger {
            inner: Mutex::new(ledger),
            log,
        }
    }

    /// Atomic check-and-add; returns the post-charge (used, remaining).
    pub fn charge(&self, phase: &str, n: u64) -> Result<(u64, Option<u64>)> {
        let mut guard = self.inner.lock().expect("ledger lock");
        guard.charge(phase, n)?;
        let used = guard.used();
        let remaining = guard.remaining();
        drop(guard);
        if let Some(log) = &self.log {
            log.append(phase, n)?;
        }
        Ok((used, remaining))
    }

    pub fn snapshot(&self) -> QueryLedger {
        self.inner.lock().expect("ledger lock").clone()
    }
}
