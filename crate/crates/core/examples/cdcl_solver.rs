//! The built-in CDCL solver on a DIMACS file (or a small built-in
//! instance), including incremental solving under assumptions.
//!
//!     cargo run --example cdcl_solver [FILE.cnf]

use satxplain::cnf::{from_dimacs_str, read_dimacs, Lit};
use satxplain::solver::{CdclSolver, SatBackend, SolveResult, SolverConfig};

const PIGEONS: &str = "c three pigeons, two holes\np cnf 6 9\n1 2 0\n3 4 0\n5 6 0\n-1 -3 0\n-1 -5 0\n-3 -5 0\n-2 -4 0\n-2 -6 0\n-4 -6 0\n";

fn main() -> anyhow::Result<()> {
    let formula = match std::env::args().nth(1) {
        Some(path) => read_dimacs(std::io::BufReader::new(std::fs::File::open(path)?))?,
        None => from_dimacs_str(PIGEONS)?,
    };
    println!("{} variables, {} clauses", formula.num_vars(), formula.num_clauses());
    let mut solver = CdclSolver::from_formula(&formula, SolverConfig::default());
    match solver.solve(&[])? {
        SolveResult::Sat(m) => {
            let lits: Vec<i32> = m.true_lits().map(|l| l.to_dimacs()).collect();
            println!("SAT: {lits:?}");
        }
        other => println!("{:?}", other.verdict()),
    }

    // Drop the "pigeon 3 needs a hole" clause behind an activation literal
    // to show assumption-based incremental calls.
    if std::env::args().nth(1).is_none() {
        let mut relaxed = CdclSolver::new(SolverConfig::default());
        relaxed.ensure_vars(7);
        let guard = Lit::from_dimacs(7);
        for (i, c) in formula.clauses().iter().enumerate() {
            let mut c: Vec<Lit> = c.to_vec();
            if i == 2 {
                c.push(!guard);
            }
            relaxed.add_clause(&c)?;
        }
        for assume in [vec![], vec![guard]] {
            let r = relaxed.solve(&assume)?;
            println!("assuming {:?}: {:?}", assume.iter().map(|l| l.to_dimacs()).collect::<Vec<_>>(), r.verdict());
        }
        println!("{:?}", relaxed.stats());
    }
    Ok(())
}
