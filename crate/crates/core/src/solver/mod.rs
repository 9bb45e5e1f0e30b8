//! SAT solving backends.
//!
//! [`CdclSolver`] is the in-process incremental engine. [`ExternalSolver`]
//! shells out to any solver that reads DIMACS and prints the usual
//! `s SATISFIABLE` / `v ...` answer lines. Both implement [`SatBackend`],
//! which is all the explanation algorithms depend on.

mod cdcl;
mod external;

pub use cdcl::CdclSolver;
pub use external::{parse_solver_output, solve_external, ExternalSolver};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cnf::{Assignment, CnfError, CnfFormula, Lit};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error(transparent)]
    Clause(#[from] CnfError),
    #[error("assumption {0:?} is out of range")]
    OutOfRange(Lit),
    #[error("external solver: {0}")]
    Backend(String),
    #[error("external solver i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub seed: u64,
    /// VSIDS activity decay, in (0, 1).
    pub var_decay: f64,
    pub clause_decay: f64,
    /// Conflicts per Luby unit.
    pub restart_base: u32,
    /// Learned clauses with LBD at or below this are never deleted.
    pub keep_lbd: u32,
    /// Conflicts allowed per `solve` call.
    pub conflict_budget: Option<u64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            var_decay: 0.95,
            clause_decay: 0.999,
            restart_base: 64,
            keep_lbd: 3,
            conflict_budget: None,
        }
    }
}

impl SolverConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.var_decay > 0.0 && self.var_decay < 1.0) {
            return Err(format!("var_decay must be in (0,1), got {}", self.var_decay));
        }
        if !(self.clause_decay > 0.0 && self.clause_decay < 1.0) {
            return Err(format!("clause_decay must be in (0,1), got {}", self.clause_decay));
        }
        if self.restart_base < 1 {
            return Err("restart_base must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SolveResult {
    /// A total model, already checked against every clause.
    Sat(Assignment),
    Unsat,
    BudgetExhausted,
}

impl SolveResult {
    pub fn is_sat(&self) -> bool {
        matches!(self, SolveResult::Sat(_))
    }

    pub fn is_unsat(&self) -> bool {
        matches!(self, SolveResult::Unsat)
    }

    pub fn model(&self) -> Option<&Assignment> {
        match self {
            SolveResult::Sat(m) => Some(m),
            _ => None,
        }
    }

    pub fn into_model(self) -> Option<Assignment> {
        match self {
            SolveResult::Sat(m) => Some(m),
            _ => None,
        }
    }

    pub fn verdict(&self) -> Verdict {
        match self {
            SolveResult::Sat(_) => Verdict::Sat,
            SolveResult::Unsat => Verdict::Unsat,
            SolveResult::BudgetExhausted => Verdict::Unknown,
        }
    }
}

/// A solve outcome without the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Sat,
    Unsat,
    Unknown,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolverStats {
    pub solves: u64,
    pub conflicts: u64,
    pub decisions: u64,
    pub propagations: u64,
    pub restarts: u64,
    pub learned: u64,
    pub deleted: u64,
}

/// The incremental interface the query algorithms are written against.
pub trait SatBackend {
    /// Makes variables `1..=n` available.
    fn ensure_vars(&mut self, n: u32);
    fn add_clause(&mut self, clause: &[Lit]) -> Result<(), SolverError>;
    /// Solves under temporary unit assumptions. Clauses persist across calls.
    fn solve(&mut self, assumptions: &[Lit]) -> Result<SolveResult, SolverError>;
    fn stats(&self) -> SolverStats;
}

/// Which solver answers queries.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum BackendKind {
    #[default]
    Internal,
    /// Command line of an external DIMACS solver; the CNF path is appended.
    External(String),
}

impl std::str::FromStr for BackendKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "internal" {
            Ok(BackendKind::Internal)
        } else if let Some(cmd) = s.strip_prefix("external:") {
            if cmd.trim().is_empty() {
                Err("external backend needs a command, e.g. external:minisat".into())
            } else {
                Ok(BackendKind::External(cmd.to_string()))
            }
        } else {
            Err(format!("unknown backend '{s}' (expected internal or external:<command>)"))
        }
    }
}

impl BackendKind {
    /// A fresh backend loaded with `formula`.
    pub fn instantiate(&self, formula: &CnfFormula, config: &SolverConfig) -> Box<dyn SatBackend + Send> {
        match self {
            BackendKind::Internal => Box::new(CdclSolver::from_formula(formula, config.clone())),
            BackendKind::External(cmd) => Box::new(ExternalSolver::new(cmd, formula.clone())),
        }
    }
}

/// One-shot solve of a whole formula with the internal engine.
pub fn solve_formula(formula: &CnfFormula, config: &SolverConfig) -> SolveResult {
    CdclSolver::from_formula(formula, config.clone())
        .solve(&[])
        .expect("no assumptions to range-check")
}
