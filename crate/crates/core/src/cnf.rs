//! Clause database, variable roles and DIMACS interchange.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A Boolean variable, numbered from 1 as in DIMACS.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Var(pub u32);

impl Var {
    pub fn lit(self, positive: bool) -> Lit {
        Lit((self.0 << 1) | u32::from(!positive))
    }

    pub fn pos(self) -> Lit {
        self.lit(true)
    }

    /// Zero-based index for dense per-variable arrays.
    pub fn index(self) -> usize {
        self.0 as usize - 1
    }
}

/// A literal. Variable 0 is reserved for the constants [`Lit::TRUE`] and
/// [`Lit::FALSE`], which only ever live inside the circuit builder.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Lit(u32);

impl Lit {
    pub const TRUE: Lit = Lit(0);
    pub const FALSE: Lit = Lit(1);

    pub fn constant(value: bool) -> Lit {
        if value {
            Lit::TRUE
        } else {
            Lit::FALSE
        }
    }

    pub fn var(self) -> Var {
        Var(self.0 >> 1)
    }

    pub fn is_positive(self) -> bool {
        self.0 & 1 == 0
    }

    pub fn is_const(self) -> bool {
        self.0 < 2
    }

    /// `Some(b)` for the constants, `None` for real literals.
    pub fn const_value(self) -> Option<bool> {
        self.is_const().then(|| self == Lit::TRUE)
    }

    /// Dense index over both polarities of real variables (`2*(v-1) + neg`).
    pub fn code(self) -> usize {
        self.0 as usize - 2
    }

    pub fn from_code(code: usize) -> Lit {
        Lit(code as u32 + 2)
    }

    pub fn from_dimacs(x: i32) -> Lit {
        debug_assert!(x != 0);
        Var(x.unsigned_abs()).lit(x > 0)
    }

    pub fn to_dimacs(self) -> i32 {
        let v = self.var().0 as i32;
        if self.is_positive() {
            v
        } else {
            -v
        }
    }
}

impl std::ops::Not for Lit {
    type Output = Lit;
    fn not(self) -> Lit {
        Lit(self.0 ^ 1)
    }
}

impl std::ops::BitXor<bool> for Lit {
    type Output = Lit;
    fn bitxor(self, flip: bool) -> Lit {
        Lit(self.0 ^ u32::from(flip))
    }
}

impl fmt::Debug for Lit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.const_value() {
            Some(true) => write!(f, "T"),
            Some(false) => write!(f, "F"),
            None => write!(f, "{}", self.to_dimacs()),
        }
    }
}

impl Serialize for Lit {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_i32(self.to_dimacs())
    }
}

impl<'de> Deserialize<'de> for Lit {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let x = i32::deserialize(d)?;
        if x == 0 {
            return Err(serde::de::Error::custom("literal 0 is not a literal"));
        }
        Ok(Lit::from_dimacs(x))
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CnfError {
    #[error("tautological clause rejected: {0:?}")]
    Tautology(Vec<Lit>),
    #[error("literal {lit:?} out of range (num_vars = {num_vars})")]
    OutOfRange { lit: Lit, num_vars: u32 },
    #[error("constant literal inside a clause")]
    ConstantLiteral,
    #[error("assignment is partial: variable {0} unassigned")]
    PartialAssignment(u32),
}

#[derive(Debug, Error)]
pub enum DimacsError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// A CNF formula: no tautologies, no repeated literals, no constants.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CnfFormula {
    num_vars: u32,
    clauses: Vec<Vec<Lit>>,
}

impl CnfFormula {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_vars(num_vars: u32) -> Self {
        Self {
            num_vars,
            clauses: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> u32 {
        self.num_vars
    }

    pub fn num_clauses(&self) -> usize {
        self.clauses.len()
    }

    pub fn clauses(&self) -> &[Vec<Lit>] {
        &self.clauses
    }

    pub fn new_var(&mut self) -> Var {
        self.num_vars += 1;
        Var(self.num_vars)
    }

    pub fn ensure_vars(&mut self, n: u32) {
        self.num_vars = self.num_vars.max(n);
    }

    /// Appends a clause after removing repeated literals.
    pub fn add_clause<I: IntoIterator<Item = Lit>>(&mut self, lits: I) -> Result<(), CnfError> {
        let clause = normalize_clause(lits, self.num_vars)?;
        self.clauses.push(clause);
        Ok(())
    }
}

/// Deduplicates literals, preserving first-occurrence order, and rejects
/// tautologies, constants and out-of-range variables.
pub(crate) fn normalize_clause<I: IntoIterator<Item = Lit>>(
    lits: I,
    num_vars: u32,
) -> Result<Vec<Lit>, CnfError> {
    let mut seen = BTreeSet::new();
    let mut clause = Vec::new();
    for lit in lits {
        if lit.is_const() {
            return Err(CnfError::ConstantLiteral);
        }
        if lit.var().0 > num_vars {
            return Err(CnfError::OutOfRange { lit, num_vars });
        }
        if seen.insert(lit) {
            clause.push(lit);
        }
    }
    if clause.iter().any(|&l| seen.contains(&!l)) {
        return Err(CnfError::Tautology(clause));
    }
    Ok(clause)
}

/// A (possibly partial) truth assignment over variables `1..=n`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Assignment {
    values: Vec<Option<bool>>,
}

impl Assignment {
    pub fn empty(num_vars: u32) -> Self {
        Self {
            values: vec![None; num_vars as usize],
        }
    }

    pub fn total(values: Vec<bool>) -> Self {
        Self {
            values: values.into_iter().map(Some).collect(),
        }
    }

    pub fn num_vars(&self) -> u32 {
        self.values.len() as u32
    }

    pub fn set(&mut self, var: Var, value: bool) {
        if var.index() >= self.values.len() {
            self.values.resize(var.index() + 1, None);
        }
        self.values[var.index()] = Some(value);
    }

    pub fn var_value(&self, var: Var) -> Option<bool> {
        self.values.get(var.index()).copied().flatten()
    }

    /// Value of a literal; constants evaluate to themselves.
    pub fn value(&self, lit: Lit) -> Option<bool> {
        if let Some(c) = lit.const_value() {
            return Some(c);
        }
        self.var_value(lit.var()).map(|v| v == lit.is_positive())
    }

    pub fn is_total(&self) -> bool {
        self.values.iter().all(Option::is_some)
    }

    /// Literals true under the assignment, in variable order.
    pub fn true_lits(&self) -> impl Iterator<Item = Lit> + '_ {
        self.values
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|b| Var(i as u32 + 1).lit(b)))
    }
}

/// True iff every clause has a literal made true by a total assignment.
pub fn evaluate(formula: &CnfFormula, assignment: &Assignment) -> Result<bool, CnfError> {
    for v in 1..=formula.num_vars {
        if assignment.var_value(Var(v)).is_none() {
            return Err(CnfError::PartialAssignment(v));
        }
    }
    Ok(formula
        .clauses
        .iter()
        .all(|c| c.iter().any(|&l| assignment.value(l) == Some(true))))
}

pub fn write_dimacs<W: Write>(formula: &CnfFormula, mut out: W) -> io::Result<()> {
    writeln!(out, "p cnf {} {}", formula.num_vars, formula.clauses.len())?;
    for clause in &formula.clauses {
        for lit in clause {
            write!(out, "{} ", lit.to_dimacs())?;
        }
        writeln!(out, "0")?;
    }
    Ok(())
}

pub fn to_dimacs_string(formula: &CnfFormula) -> String {
    let mut buf = Vec::new();
    write_dimacs(formula, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("DIMACS output is ASCII")
}

/// Parses DIMACS CNF. Clauses may span lines; `c` lines are ignored.
/// Tautological input clauses are satisfied by every assignment and dropped.
pub fn read_dimacs<R: BufRead>(source: R) -> Result<CnfFormula, DimacsError> {
    let mut header: Option<(u32, usize)> = None;
    let mut formula = CnfFormula::new();
    let mut current: Vec<Lit> = Vec::new();
    let mut read_clauses = 0usize;
    let mut last_line = 0;
    for (idx, line) in source.lines().enumerate() {
        let line_no = idx + 1;
        last_line = line_no;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('c') || trimmed.starts_with('%') {
            continue;
        }
        let err = |msg: String| DimacsError::Parse { line: line_no, msg };
        if trimmed.starts_with('p') {
            if header.is_some() {
                return Err(err("duplicate header".into()));
            }
            let parts: Vec<&str> = trimmed.split_whitespace().collect();
            if parts.len() != 4 || parts[0] != "p" || parts[1] != "cnf" {
                return Err(err(format!("malformed header '{trimmed}'")));
            }
            let nv = parts[2]
                .parse::<u32>()
                .map_err(|_| err(format!("bad variable count '{}'", parts[2])))?;
            let nc = parts[3]
                .parse::<usize>()
                .map_err(|_| err(format!("bad clause count '{}'", parts[3])))?;
            header = Some((nv, nc));
            formula.ensure_vars(nv);
            continue;
        }
        let Some((num_vars, _)) = header else {
            return Err(err("clause before 'p cnf' header".into()));
        };
        for tok in trimmed.split_whitespace() {
            let x: i64 = tok
                .parse()
                .map_err(|_| err(format!("bad literal '{tok}'")))?;
            if x == 0 {
                read_clauses += 1;
                match normalize_clause(current.drain(..), num_vars) {
                    Ok(clause) => formula.clauses.push(clause),
                    Err(CnfError::Tautology(_)) => {}
                    Err(e) => return Err(err(e.to_string())),
                }
            } else {
                if x.unsigned_abs() > num_vars as u64 {
                    return Err(err(format!(
                        "literal {x} exceeds declared variable count {num_vars}"
                    )));
                }
                current.push(Lit::from_dimacs(x as i32));
            }
        }
    }
    let Some((_, expected)) = header else {
        return Err(DimacsError::Parse {
            line: last_line,
            msg: "missing 'p cnf' header".into(),
        });
    };
    if !current.is_empty() {
        return Err(DimacsError::Parse {
            line: last_line,
            msg: "last clause not terminated by 0".into(),
        });
    }
    if read_clauses != expected {
        return Err(DimacsError::Parse {
            line: last_line,
            msg: format!("header declares {expected} clauses, found {read_clauses}"),
        });
    }
    Ok(formula)
}

pub fn from_dimacs_str(text: &str) -> Result<CnfFormula, DimacsError> {
    read_dimacs(text.as_bytes())
}

/// What a variable stands for in the encoded model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "snake_case")]
pub enum VarRole {
    /// Bit `bit` (LSB = 0) of input feature `(frame, feature)`.
    InputFeatureBit { frame: u32, feature: u32, bit: u32 },
    /// Bit of a hidden unit's output in layer `layer`.
    ActivationBit { layer: u32, unit: u32, bit: u32 },
    /// Bit of a class logit.
    OutputLogitBit { class: u32, bit: u32 },
    /// Input change indicator; `bit` is `None` at feature granularity.
    FlipIndicator {
        frame: u32,
        feature: u32,
        bit: Option<u32>,
    },
    CardinalityAux,
    /// Activation literal switching a query constraint on.
    QueryGuard,
    TseitinAux,
}

/// A weight or bias compiled into the circuit as a constant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldedConstant {
    pub layer: u32,
    pub kind: ConstantKind,
    pub index: u32,
    pub mantissa: i64,
    pub bits: u32,
    pub frac: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstantKind {
    Weight,
    Bias,
}

/// Role of every variable plus the ledger of folded constants.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VarMap {
    roles: Vec<VarRole>,
    pub constants: Vec<FoldedConstant>,
}

impl VarMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.roles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roles.is_empty()
    }

    /// Registers the role of the next variable, which must be `var`.
    pub fn push(&mut self, var: Var, role: VarRole) {
        assert_eq!(var.index(), self.roles.len(), "roles must be registered in order");
        self.roles.push(role);
    }

    pub fn role(&self, var: Var) -> Option<VarRole> {
        self.roles.get(var.index()).copied()
    }

    pub fn set_role(&mut self, var: Var, role: VarRole) {
        self.roles[var.index()] = role;
    }

    pub fn iter(&self) -> impl Iterator<Item = (Var, VarRole)> + '_ {
        self.roles
            .iter()
            .enumerate()
            .map(|(i, r)| (Var(i as u32 + 1), *r))
    }

    /// Input bit variables keyed by `(frame, feature, bit)`, sorted.
    pub fn input_bits(&self) -> Vec<((u32, u32, u32), Var)> {
        let mut out: Vec<_> = self
            .iter()
            .filter_map(|(v, r)| match r {
                VarRole::InputFeatureBit {
                    frame,
                    feature,
                    bit,
                } => Some(((frame, feature, bit), v)),
                _ => None,
            })
            .collect();
        out.sort();
        out
    }

    /// Checks that the map covers `num_vars` variables and that no input
    /// triple is registered twice.
    pub fn validate(&self, num_vars: u32) -> Result<(), String> {
        if self.roles.len() != num_vars as usize {
            return Err(format!(
                "varmap covers {} variables, formula has {num_vars}",
                self.roles.len()
            ));
        }
        let bits = self.input_bits();
        for pair in bits.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(format!("input bit {:?} registered twice", pair[0].0));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn l(x: i32) -> Lit {
        Lit::from_dimacs(x)
    }

    fn threshold_neuron_cnf() -> CnfFormula {
        let mut f = CnfFormula::with_vars(3);
        f.add_clause([l(-1), l(-2), l(3)]).unwrap();
        f.add_clause([l(1), l(-3)]).unwrap();
        f.add_clause([l(2), l(-3)]).unwrap();
        f
    }

    #[test]
    fn literal_encoding() {
        assert_eq!(l(3).var(), Var(3));
        assert!(!l(-3).is_positive());
        assert_eq!(!l(5), l(-5));
        assert_eq!(l(-7).to_dimacs(), -7);
        assert_eq!(Lit::from_code(l(-2).code()), l(-2));
        assert_eq!(!Lit::TRUE, Lit::FALSE);
        assert_eq!(l(4) ^ true, l(-4));
    }

    #[test]
    fn evaluate_basics() {
        assert!(evaluate(&CnfFormula::new(), &Assignment::default()).unwrap());
        let mut f = CnfFormula::with_vars(1);
        f.add_clause([]).unwrap();
        assert!(!evaluate(&f, &Assignment::total(vec![true])).unwrap());

        let f = threshold_neuron_cnf();
        assert!(evaluate(&f, &Assignment::total(vec![true, true, true])).unwrap());
        assert!(!evaluate(&f, &Assignment::total(vec![true, true, false])).unwrap());
        assert!(matches!(
            evaluate(&f, &Assignment::empty(3)),
            Err(CnfError::PartialAssignment(1))
        ));
    }

    #[test]
    fn clause_insertion_rules() {
        let mut f = CnfFormula::with_vars(2);
        assert!(matches!(f.add_clause([l(1), l(-1)]), Err(CnfError::Tautology(_))));
        assert!(matches!(f.add_clause([l(3)]), Err(CnfError::OutOfRange { .. })));
        assert!(matches!(f.add_clause([Lit::TRUE]), Err(CnfError::ConstantLiteral)));
        f.add_clause([l(1), l(2), l(1)]).unwrap();
        assert_eq!(f.clauses()[0], vec![l(1), l(2)]);
    }

    #[test]
    fn dimacs_examples() {
        let mut f = CnfFormula::with_vars(1);
        f.add_clause([l(1)]).unwrap();
        assert_eq!(to_dimacs_string(&f), "p cnf 1 1\n1 0\n");

        let g = from_dimacs_str("p cnf 2 1\n1 -2 0\n").unwrap();
        assert_eq!(g.num_vars(), 2);
        assert_eq!(g.clauses(), &[vec![l(1), l(-2)]]);

        let h = from_dimacs_str("c comment\np cnf 3 2\n1 2\n 3 0 -1\n0\n").unwrap();
        assert_eq!(h.clauses(), &[vec![l(1), l(2), l(3)], vec![l(-1)]]);
    }

    #[test]
    fn dimacs_errors_carry_line_numbers() {
        let cases = [
            ("p cnf x 1\n1 0\n", 1),
            ("p cnf 2 1\n1 q 0\n", 2),
            ("1 0\n", 1),
            ("p cnf 1 1\n2 0\n", 2),
            ("p cnf 2 2\n1 0\n", 2),
            ("p cnf 2 1\n1 2\n", 2),
        ];
        for (text, line) in cases {
            match from_dimacs_str(text) {
                Err(DimacsError::Parse { line: got, .. }) => assert_eq!(got, line, "{text:?}"),
                other => panic!("expected parse error for {text:?}, got {other:?}"),
            }
        }
    }

    #[test]
    fn varmap_validation() {
        let mut m = VarMap::new();
        let role = VarRole::InputFeatureBit {
            frame: 0,
            feature: 0,
            bit: 0,
        };
        m.push(Var(1), role);
        m.push(Var(2), VarRole::TseitinAux);
        assert!(m.validate(2).is_ok());
        assert!(m.validate(3).is_err());
        m.push(Var(3), role);
        assert!(m.validate(3).is_err());
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(serde_json::from_str::<VarMap>(&json).unwrap(), m);
    }

    fn arb_formula() -> impl Strategy<Value = CnfFormula> {
        (1u32..12, proptest::collection::vec(proptest::collection::vec((1u32..12, any::<bool>()), 0..5), 0..20))
            .prop_map(|(n, raw)| {
                let mut f = CnfFormula::with_vars(n);
                for c in raw {
                    let lits = c.into_iter().map(|(v, p)| Var((v - 1) % n + 1).lit(p));
                    let _ = f.add_clause(lits);
                }
                f
            })
    }

    proptest! {
        #[test]
        fn dimacs_round_trip(f in arb_formula()) {
            let text = to_dimacs_string(&f);
            prop_assert_eq!(from_dimacs_str(&text).unwrap(), f);
        }
    }

    #[test]
    fn evaluate_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..300 {
            let n = rng.gen_range(1..8u32);
            let mut f = CnfFormula::with_vars(n);
            let mut raw = Vec::new();
            for _ in 0..rng.gen_range(0..10) {
                let c: Vec<i32> = (0..rng.gen_range(0..4))
                    .map(|_| {
                        let v = rng.gen_range(1..=n) as i32;
                        if rng.gen() { v } else { -v }
                    })
                    .collect();
                if f.add_clause(c.iter().map(|&x| l(x))).is_ok() {
                    raw.push(c);
                }
            }
            let bits: Vec<bool> = (0..n).map(|_| rng.gen()).collect();
            let naive = raw.iter().all(|c| {
                c.iter().any(|&x| bits[x.unsigned_abs() as usize - 1] == (x > 0))
            });
            assert_eq!(evaluate(&f, &Assignment::total(bits)).unwrap(), naive);
        }
    }
}
