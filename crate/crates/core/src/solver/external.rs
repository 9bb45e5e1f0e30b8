use std::io::Write;
use std::process::Command;

use super::{SatBackend, SolveResult, SolverError, SolverStats};
use crate::cnf::{self, Assignment, CnfFormula, Lit, Var};

/// Runs a DIMACS solver as a subprocess for every `solve` call.
///
/// Assumptions become unit clauses of the file handed to the solver, so
/// nothing is reused between calls. Models are checked locally before they
/// are accepted.
#[derive(Debug, Clone)]
pub struct ExternalSolver {
    command: String,
    formula: CnfFormula,
    stats: SolverStats,
}

impl ExternalSolver {
    pub fn new(command: &str, formula: CnfFormula) -> Self {
        Self {
            command: command.to_string(),
            formula,
            stats: SolverStats::default(),
        }
    }
}

impl SatBackend for ExternalSolver {
    fn ensure_vars(&mut self, n: u32) {
        self.formula.ensure_vars(n);
    }

    fn add_clause(&mut self, clause: &[Lit]) -> Result<(), SolverError> {
        self.formula.add_clause(clause.iter().copied())?;
        Ok(())
    }

    fn solve(&mut self, assumptions: &[Lit]) -> Result<SolveResult, SolverError> {
        self.stats.solves += 1;
        let mut query = self.formula.clone();
        for &a in assumptions {
            if a.is_const() || a.var().0 > query.num_vars() {
                return Err(SolverError::OutOfRange(a));
            }
            query.add_clause([a])?;
        }
        solve_external(&query, &self.command)
    }

    fn stats(&self) -> SolverStats {
        self.stats.clone()
    }
}

/// Writes `formula` to a temporary DIMACS file, runs `command <file>` and
/// parses the competition-style answer.
pub fn solve_external(formula: &CnfFormula, command: &str) -> Result<SolveResult, SolverError> {
    let mut parts = command.split_whitespace();
    let program = parts
        .next()
        .ok_or_else(|| SolverError::Backend("empty solver command".into()))?;
    let mut file = tempfile::Builder::new().suffix(".cnf").tempfile()?;
    cnf::write_dimacs(formula, std::io::BufWriter::new(&mut file))?;
    file.flush()?;
    let output = Command::new(program)
        .args(parts)
        .arg(file.path())
        .output()
        .map_err(|e| SolverError::Backend(format!("cannot run '{command}': {e}")))?;
    let stdout = String::from_utf8_lossy(&output.stdout);
    let parsed = parse_solver_output(&stdout, formula.num_vars());
    let code = output.status.code();
    let result = match parsed {
        Ok(r) => r,
        Err(e) => {
            let stderr = String::from_utf8_lossy(&output.stderr);
            return Err(SolverError::Backend(format!(
                "{e} (exit status {code:?}; stderr: {})",
                stderr.trim()
            )));
        }
    };
    // 10/20 are the conventional SAT/UNSAT exit codes; 0 is also common.
    if !matches!(code, Some(0) | Some(10) | Some(20)) {
        log::warn!("external solver exited with {code:?} but printed a verdict");
    }
    if let SolveResult::Sat(model) = &result {
        if !cnf::evaluate(formula, model)? {
            return Err(SolverError::Backend(
                "external solver returned a model that does not satisfy the formula".into(),
            ));
        }
    }
    Ok(result)
}

/// Parses `s`/`v` lines. Variables missing from the `v` lines default to
/// false; the caller verifies the model.
pub fn parse_solver_output(text: &str, num_vars: u32) -> Result<SolveResult, SolverError> {
    let mut verdict = None;
    let mut model = Assignment::empty(num_vars);
    for line in text.lines() {
        let line = line.trim();
        if let Some(rest) = line.strip_prefix("s ") {
            verdict = Some(match rest.trim() {
                "SATISFIABLE" => 1,
                "UNSATISFIABLE" => 0,
                "UNKNOWN" => 2,
                other => return Err(SolverError::Backend(format!("unknown verdict '{other}'"))),
            });
        } else if let Some(rest) = line.strip_prefix("v ") {
            for tok in rest.split_whitespace() {
                let x: i64 = tok
                    .parse()
                    .map_err(|_| SolverError::Backend(format!("bad value token '{tok}'")))?;
                if x == 0 {
                    continue;
                }
                let v = x.unsigned_abs();
                if v > num_vars as u64 {
                    return Err(SolverError::Backend(format!("value for unknown variable {v}")));
                }
                model.set(Var(v as u32), x > 0);
            }
        }
    }
    match verdict {
        Some(1) => {
            for v in 1..=num_vars {
                if model.var_value(Var(v)).is_none() {
                    model.set(Var(v), false);
                }
            }
            Ok(SolveResult::Sat(model))
        }
        Some(0) => Ok(SolveResult::Unsat),
        Some(_) => Ok(SolveResult::BudgetExhausted),
        None => Err(SolverError::Backend("no 's' verdict line in solver output".into())),
    }
}
