//! Bit-level circuits compiled to CNF by Tseitin definitions.
//!
//! A [`Signal`] is a two's-complement word, least significant bit first,
//! whose bits are literals. Constant bits are [`Lit::TRUE`] / [`Lit::FALSE`]
//! and are folded away as gates are built, so multiplying by a constant
//! weight never creates a general multiplier and bits known to be zero cost
//! nothing. Every gate gets one fresh variable with the usual biconditional
//! clauses; structurally identical gates are shared.

use std::collections::HashMap;

use crate::cnf::{Assignment, CnfFormula, Lit, Var, VarMap, VarRole};
use crate::fixedpoint::FixedPointFormat;

/// A two's-complement word, LSB first. Never empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Signal {
    bits: Vec<Lit>,
}

impl Signal {
    pub fn new(bits: Vec<Lit>) -> Self {
        assert!(!bits.is_empty(), "a signal needs at least one bit");
        Self { bits }
    }

    /// `value` in `width` bits (wrapping).
    pub fn constant(value: i64, width: u32) -> Self {
        Self::new(
            (0..width)
                .map(|i| Lit::constant((value >> i.min(63)) & 1 == 1))
                .collect(),
        )
    }

    pub fn width(&self) -> u32 {
        self.bits.len() as u32
    }

    pub fn bits(&self) -> &[Lit] {
        &self.bits
    }

    pub fn sign(&self) -> Lit {
        *self.bits.last().expect("non-empty")
    }

    /// Bit `i`, sign-extended past the top.
    pub fn bit(&self, i: u32) -> Lit {
        self.bits.get(i as usize).copied().unwrap_or_else(|| self.sign())
    }

    /// Sign-extends or truncates to `width` bits.
    pub fn resized(&self, width: u32) -> Self {
        Self::new((0..width).map(|i| self.bit(i)).collect())
    }

    /// Multiplies by `2^k` by prepending zero bits (the width grows).
    pub fn shifted_left(&self, k: u32) -> Self {
        let mut bits = vec![Lit::FALSE; k as usize];
        bits.extend_from_slice(&self.bits);
        Self::new(bits)
    }

    pub fn is_constant(&self) -> bool {
        self.bits.iter().all(|b| b.is_const())
    }

    /// The word's value under `a`, or `None` if a bit is unassigned.
    pub fn value_in(&self, a: &Assignment) -> Option<i64> {
        let mut v: i64 = 0;
        for (i, &b) in self.bits.iter().enumerate() {
            let bit = match b.const_value() {
                Some(c) => c,
                None => a.value(b)?,
            };
            if bit {
                v |= 1i64 << i.min(63);
            }
        }
        let w = self.bits.len();
        if w < 64 && v >> (w - 1) & 1 == 1 {
            v -= 1i64 << w;
        }
        Some(v)
    }
}

/// Fewest two's-complement bits that hold `v`.
pub fn min_width(v: i64) -> u32 {
    let redundant = if v < 0 { v.leading_ones() } else { v.leading_zeros() };
    65 - redundant
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum GateKey {
    And(Lit, Lit),
    Xor(Lit, Lit),
    Maj(Lit, Lit, Lit),
    Ite(Lit, Lit, Lit),
}

impl GateKey {
    fn inputs(&self) -> Vec<Lit> {
        match *self {
            GateKey::And(a, b) | GateKey::Xor(a, b) => vec![a, b],
            GateKey::Maj(a, b, c) | GateKey::Ite(a, b, c) => vec![a, b, c],
        }
    }
}

/// Where a gate variable's definition lives.
#[derive(Debug, Clone)]
struct GateDef {
    inputs: Vec<Lit>,
    clauses: std::ops::Range<usize>,
}

/// Owns the formula and variable map while a circuit is being built.
#[derive(Debug, Clone, Default)]
pub struct CircuitBuilder {
    formula: CnfFormula,
    varmap: VarMap,
    cache: HashMap<GateKey, Lit>,
    /// Indexed by variable; `None` for inputs and query variables.
    defs: Vec<Option<GateDef>>,
}

impl CircuitBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Continues building on top of an existing formula.
    pub fn from_parts(formula: CnfFormula, varmap: VarMap) -> Self {
        assert_eq!(formula.num_vars() as usize, varmap.len());
        let defs = vec![None; formula.num_vars() as usize + 1];
        Self {
            formula,
            varmap,
            cache: HashMap::new(),
            defs,
        }
    }

    pub fn formula(&self) -> &CnfFormula {
        &self.formula
    }

    pub fn varmap(&self) -> &VarMap {
        &self.varmap
    }

    pub fn varmap_mut(&mut self) -> &mut VarMap {
        &mut self.varmap
    }

    pub fn into_parts(self) -> (CnfFormula, VarMap) {
        (self.formula, self.varmap)
    }

    pub fn new_var(&mut self, role: VarRole) -> Var {
        let v = self.formula.new_var();
        self.varmap.push(v, role);
        v
    }

    /// Fresh signal whose bits are new variables tagged by `role(bit)`.
    pub fn input_signal(&mut self, width: u32, mut role: impl FnMut(u32) -> VarRole) -> Signal {
        Signal::new((0..width).map(|i| self.new_var(role(i)).pos()).collect())
    }

    /// Adds a clause after simplifying constants. Satisfied clauses are
    /// dropped; an all-false clause becomes the empty clause.
    pub fn clause(&mut self, lits: &[Lit]) {
        let mut out: Vec<Lit> = Vec::with_capacity(lits.len());
        for &l in lits {
            match l.const_value() {
                Some(true) => return,
                Some(false) => continue,
                None => {
                    if out.contains(&!l) {
                        return;
                    }
                    if !out.contains(&l) {
                        out.push(l);
                    }
                }
            }
        }
        self.formula
            .add_clause(out)
            .expect("simplified clause is well-formed");
    }

    fn gate(&mut self, key: GateKey, define: impl FnOnce(&mut Self, Lit)) -> Lit {
        if let Some(&y) = self.cache.get(&key) {
            return y;
        }
        let y = self.defined_var(key.inputs(), |s, y| define(s, y));
        self.cache.insert(key, y);
        y
    }

    fn defined_var(&mut self, inputs: Vec<Lit>, define: impl FnOnce(&mut Self, Lit)) -> Lit {
        let y = self.new_var(VarRole::TseitinAux);
        let start = self.formula.num_clauses();
        define(self, y.pos());
        let end = self.formula.num_clauses();
        if self.defs.len() <= y.index() + 1 {
            self.defs.resize(y.index() + 2, None);
        }
        self.defs[y.index() + 1] = Some(GateDef {
            inputs,
            clauses: start..end,
        });
        y.pos()
    }

    /// Deletes the definitions of gates that no root depends on. Their
    /// variables stay allocated but become unconstrained. Returns the number
    /// of clauses removed.
    pub fn sweep(&mut self, roots: &[Lit]) -> usize {
        let n = self.formula.num_vars() as usize;
        let mut live = vec![false; n + 1];
        let mut stack: Vec<usize> = roots
            .iter()
            .filter(|l| !l.is_const())
            .map(|l| l.var().0 as usize)
            .collect();
        while let Some(v) = stack.pop() {
            if live[v] {
                continue;
            }
            live[v] = true;
            if let Some(Some(def)) = self.defs.get(v) {
                stack.extend(def.inputs.iter().filter(|l| !l.is_const()).map(|l| l.var().0 as usize));
            }
        }
        let mut keep = vec![true; self.formula.num_clauses()];
        for (v, def) in self.defs.iter().enumerate().take(n + 1).skip(1) {
            if let (false, Some(def)) = (live[v], def) {
                for i in def.clauses.clone() {
                    keep[i] = false;
                }
            }
        }
        let removed = keep.iter().filter(|k| !**k).count();
        if removed == 0 {
            return 0;
        }
        // new_pos[i] = index of clause i after compaction.
        let mut new_pos = Vec::with_capacity(keep.len() + 1);
        let mut next = 0;
        for &k in &keep {
            new_pos.push(next);
            next += usize::from(k);
        }
        new_pos.push(next);
        let mut formula = CnfFormula::with_vars(self.formula.num_vars());
        for (c, k) in self.formula.clauses().iter().zip(&keep) {
            if *k {
                formula.add_clause(c.iter().copied()).expect("clause was valid");
            }
        }
        self.formula = formula;
        for (v, slot) in self.defs.iter_mut().enumerate().take(n + 1).skip(1) {
            if !live[v] {
                *slot = None;
            } else if let Some(def) = slot {
                def.clauses = new_pos[def.clauses.start]..new_pos[def.clauses.end];
            }
        }
        let defs = &self.defs;
        self.cache
            .retain(|_, y| matches!(defs.get(y.var().0 as usize), Some(Some(_))));
        removed
    }

    pub fn and(&mut self, a: Lit, b: Lit) -> Lit {
        match (a.const_value(), b.const_value()) {
            (Some(false), _) | (_, Some(false)) => return Lit::FALSE,
            (Some(true), _) => return b,
            (_, Some(true)) => return a,
            _ => {}
        }
        if a == b {
            return a;
        }
        if a == !b {
            return Lit::FALSE;
        }
        let (a, b) = (a.min(b), a.max(b));
        self.gate(GateKey::And(a, b), |s, y| {
            s.clause(&[!a, !b, y]);
            s.clause(&[a, !y]);
            s.clause(&[b, !y]);
        })
    }

    pub fn or(&mut self, a: Lit, b: Lit) -> Lit {
        !self.and(!a, !b)
    }

    pub fn xor(&mut self, a: Lit, b: Lit) -> Lit {
        if let Some(c) = a.const_value() {
            return b ^ c;
        }
        if let Some(c) = b.const_value() {
            return a ^ c;
        }
        if a == b {
            return Lit::FALSE;
        }
        if a == !b {
            return Lit::TRUE;
        }
        // Canonical form on positive inputs; polarity moves to the output.
        let flip = !a.is_positive() ^ !b.is_positive();
        let (pa, pb) = (a.var().pos(), b.var().pos());
        let (pa, pb) = (pa.min(pb), pa.max(pb));
        let y = self.gate(GateKey::Xor(pa, pb), |s, y| {
            s.clause(&[!pa, !pb, !y]);
            s.clause(&[pa, pb, !y]);
            s.clause(&[pa, !pb, y]);
            s.clause(&[!pa, pb, y]);
        });
        y ^ flip
    }

    /// `s ? t : e`
    pub fn ite(&mut self, s: Lit, t: Lit, e: Lit) -> Lit {
        if let Some(c) = s.const_value() {
            return if c { t } else { e };
        }
        if t == e {
            return t;
        }
        if t == !e {
            return !self.xor(s, t);
        }
        match (t.const_value(), e.const_value()) {
            (Some(true), _) => return self.or(s, e),
            (Some(false), _) => return self.and(!s, e),
            (_, Some(true)) => return self.or(!s, t),
            (_, Some(false)) => return self.and(s, t),
            _ => {}
        }
        if s == t {
            return self.or(s, e);
        }
        if s == !t {
            return self.and(!s, e);
        }
        if s == e {
            return self.and(s, t);
        }
        if s == !e {
            return self.or(!s, t);
        }
        self.ite_gate(s, t, e)
    }

    fn ite_gate(&mut self, s: Lit, t: Lit, e: Lit) -> Lit {
        self.gate(GateKey::Ite(s, t, e), |b, y| {
            b.clause(&[!s, !t, y]);
            b.clause(&[!s, t, !y]);
            b.clause(&[s, !e, y]);
            b.clause(&[s, e, !y]);
            b.clause(&[!t, !e, y]);
            b.clause(&[t, e, !y]);
        })
    }

    /// Majority of three (the full-adder carry).
    pub fn maj(&mut self, a: Lit, b: Lit, c: Lit) -> Lit {
        let mut v = [a, b, c];
        v.sort();
        let [a, b, c] = v;
        for (x, y, z) in [(a, b, c), (b, c, a), (a, c, b)] {
            match x.const_value() {
                Some(true) => return self.or(y, z),
                Some(false) => return self.and(y, z),
                None => {}
            }
            if x == y {
                return x;
            }
            if x == !y {
                return z;
            }
        }
        self.gate(GateKey::Maj(a, b, c), |s, y| {
            s.clause(&[!a, !b, y]);
            s.clause(&[!a, !c, y]);
            s.clause(&[!b, !c, y]);
            s.clause(&[a, b, !y]);
            s.clause(&[a, c, !y]);
            s.clause(&[b, c, !y]);
        })
    }

    /// Returns `(sum, carry)`.
    pub fn full_adder(&mut self, a: Lit, b: Lit, c: Lit) -> (Lit, Lit) {
        let ab = self.xor(a, b);
        let sum = self.xor(ab, c);
        let carry = self.maj(a, b, c);
        (sum, carry)
    }

    pub fn and_all(&mut self, lits: &[Lit]) -> Lit {
        let mut ins: Vec<Lit> = Vec::new();
        for &l in lits {
            match l.const_value() {
                Some(false) => return Lit::FALSE,
                Some(true) => {}
                None => {
                    if ins.contains(&!l) {
                        return Lit::FALSE;
                    }
                    if !ins.contains(&l) {
                        ins.push(l);
                    }
                }
            }
        }
        match ins.len() {
            0 => Lit::TRUE,
            1 => ins[0],
            2 => self.and(ins[0], ins[1]),
            _ => self.defined_var(ins.clone(), |s, y| {
                for &l in &ins {
                    s.clause(&[l, !y]);
                }
                let mut big: Vec<Lit> = ins.iter().map(|&l| !l).collect();
                big.push(y);
                s.clause(&big);
            }),
        }
    }

    pub fn or_all(&mut self, lits: &[Lit]) -> Lit {
        let neg: Vec<Lit> = lits.iter().map(|&l| !l).collect();
        !self.and_all(&neg)
    }

    /// `a + b + carry_in` modulo `2^width`.
    fn add_with_carry(&mut self, a: &Signal, b: &Signal, carry_in: Lit, width: u32) -> Signal {
        let mut carry = carry_in;
        let mut bits = Vec::with_capacity(width as usize);
        for i in 0..width {
            let (s, c) = if i + 1 == width {
                // The final carry is dropped, so skip its gate.
                let ab = self.xor(a.bit(i), b.bit(i));
                (self.xor(ab, carry), Lit::FALSE)
            } else {
                self.full_adder(a.bit(i), b.bit(i), carry)
            };
            bits.push(s);
            carry = c;
        }
        Signal::new(bits)
    }

    /// `a + b` modulo `2^width` (ripple carry).
    pub fn add(&mut self, a: &Signal, b: &Signal, width: u32) -> Signal {
        self.add_with_carry(a, b, Lit::FALSE, width)
    }

    /// `a - b` modulo `2^width`.
    pub fn sub(&mut self, a: &Signal, b: &Signal, width: u32) -> Signal {
        let nb = Signal::new((0..width).map(|i| !b.bit(i)).collect());
        self.add_with_carry(a, &nb, Lit::TRUE, width)
    }

    pub fn neg(&mut self, a: &Signal, width: u32) -> Signal {
        self.sub(&Signal::constant(0, width), a, width)
    }

    /// Sum of `terms` modulo `2^width`; exact whenever the true sum fits.
    pub fn sum(&mut self, terms: &[Signal], width: u32) -> Signal {
        let mut acc = Signal::constant(0, width);
        for t in terms {
            acc = self.add(&acc, t, width);
        }
        acc
    }

    /// `c * x` in `width` bits by shift-and-add over the set bits of `|c|`.
    pub fn mul_const(&mut self, x: &Signal, c: i64, width: u32) -> Signal {
        let mag = c.unsigned_abs();
        let mut acc = Signal::constant(0, width);
        for k in 0..64 {
            if mag >> k & 1 == 1 && k < width {
                let shifted = x.shifted_left(k).resized(width);
                acc = self.add(&acc, &shifted, width);
            }
        }
        if c < 0 {
            acc = self.neg(&acc, width);
        }
        acc
    }

    pub fn relu(&mut self, x: &Signal) -> Signal {
        let sign = x.sign();
        let w = x.width();
        let mut bits: Vec<Lit> = (0..w - 1).map(|i| self.and(x.bit(i), !sign)).collect();
        bits.push(Lit::FALSE);
        Signal::new(bits)
    }

    /// `a >= b`, signed.
    pub fn ge(&mut self, a: &Signal, b: &Signal) -> Lit {
        let w = a.width().max(b.width()) + 1;
        let d = self.sub(a, b, w);
        !d.sign()
    }

    /// `a > b`, signed.
    pub fn gt(&mut self, a: &Signal, b: &Signal) -> Lit {
        !self.ge(b, a)
    }

    /// Reinterprets `x` (with `in_frac` fraction bits) in `out`: floor
    /// shift, then saturation to `out`'s range.
    pub fn requantize(&mut self, x: &Signal, in_frac: u32, out: FixedPointFormat) -> Signal {
        let n = out.total_bits();
        let y = if in_frac >= out.frac_bits() {
            let drop = in_frac - out.frac_bits();
            let w = x.width().saturating_sub(drop).max(1);
            Signal::new((0..w).map(|i| x.bit(i + drop)).collect())
        } else {
            x.shifted_left(out.frac_bits() - in_frac)
        };
        if y.width() <= n {
            return y.resized(n);
        }
        let sign = y.sign();
        let high: Vec<Lit> = (n - 1..y.width() - 1).map(|i| y.bit(i)).collect();
        let mut diffs = Vec::with_capacity(high.len());
        for h in high {
            diffs.push(self.xor(h, sign));
        }
        let overflow = self.or_all(&diffs);
        let mut bits: Vec<Lit> = (0..n - 1)
            .map(|i| self.ite(overflow, !sign, y.bit(i)))
            .collect();
        bits.push(sign);
        Signal::new(bits)
    }

    /// `one` where `x >= threshold`, else zero, in `width` bits.
    pub fn threshold(&mut self, x: &Signal, threshold: i64, one: i64, width: u32) -> Signal {
        let t = Signal::constant(threshold, min_width(threshold));
        let g = self.ge(x, &t);
        Signal::new(
            (0..width)
                .map(|i| if one >> i & 1 == 1 { g } else { Lit::FALSE })
                .collect(),
        )
    }

    /// Gives gate variables among `bits` a more specific role. Variables
    /// that already carry a non-auxiliary role keep it.
    pub fn tag(&mut self, bits: &[Lit], mut role: impl FnMut(u32) -> VarRole) {
        for (i, b) in bits.iter().enumerate() {
            if b.is_const() {
                continue;
            }
            if self.varmap.role(b.var()) == Some(VarRole::TseitinAux) {
                self.varmap.set_role(b.var(), role(i as u32));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::{CdclSolver, SatBackend, SolverConfig};

    /// Evaluates `out` for every assignment of the input signals by solving
    /// under input assumptions.
    fn eval_all(
        b: &CircuitBuilder,
        inputs: &[&Signal],
        outputs: &[Signal],
        mut check: impl FnMut(&[i64], &[i64]),
    ) {
        let mut solver = CdclSolver::from_formula(b.formula(), SolverConfig::default());
        let widths: Vec<u32> = inputs.iter().map(|s| s.width()).collect();
        let total: u32 = widths.iter().sum();
        for code in 0u64..1 << total {
            let mut assumptions = Vec::new();
            let mut values = Vec::new();
            let mut off = 0;
            for s in inputs {
                let w = s.width();
                let raw = (code >> off) & ((1 << w) - 1);
                off += w;
                for (i, &bit) in s.bits().iter().enumerate() {
                    assumptions.push(bit ^ (raw >> i & 1 == 0));
                }
                values.push(((raw << (64 - w)) as i64) >> (64 - w));
            }
            let model = solver.solve(&assumptions).unwrap().into_model().expect("circuit is total");
            let outs: Vec<i64> = outputs.iter().map(|o| o.value_in(&model).unwrap()).collect();
            check(&values, &outs);
        }
    }

    fn wrap(v: i64, w: u32) -> i64 {
        (v << (64 - w)) >> (64 - w)
    }

    fn input(b: &mut CircuitBuilder, w: u32) -> Signal {
        b.input_signal(w, |_| VarRole::TseitinAux)
    }

    #[test]
    fn min_width_is_tight() {
        assert_eq!(min_width(0), 1);
        assert_eq!(min_width(-1), 1);
        assert_eq!(min_width(1), 2);
        assert_eq!(min_width(-2), 2);
        assert_eq!(min_width(2), 3);
        assert_eq!(min_width(7), 4);
        assert_eq!(min_width(-8), 4);
        assert_eq!(min_width(i64::MIN), 64);
    }

    #[test]
    fn constant_signals_decode() {
        let a = Assignment::empty(0);
        for v in -8..8 {
            assert_eq!(Signal::constant(v, 4).value_in(&a), Some(v));
        }
        assert_eq!(Signal::constant(-3, 4).resized(7).value_in(&a), Some(-3));
        assert_eq!(Signal::constant(3, 4).shifted_left(2).value_in(&a), Some(12));
    }

    #[test]
    fn gates_fold_constants_without_new_vars() {
        let mut b = CircuitBuilder::new();
        let x = b.new_var(VarRole::TseitinAux).pos();
        assert_eq!(b.and(x, Lit::TRUE), x);
        assert_eq!(b.and(x, Lit::FALSE), Lit::FALSE);
        assert_eq!(b.or(x, Lit::TRUE), Lit::TRUE);
        assert_eq!(b.xor(x, Lit::TRUE), !x);
        assert_eq!(b.xor(x, x), Lit::FALSE);
        assert_eq!(b.maj(x, Lit::FALSE, Lit::TRUE), x);
        assert_eq!(b.ite(x, Lit::TRUE, Lit::FALSE), x);
        assert_eq!(b.formula().num_vars(), 1);
        assert_eq!(b.formula().num_clauses(), 0);
    }

    #[test]
    fn and_gate_is_three_clauses_and_shared() {
        let mut b = CircuitBuilder::new();
        let x = b.new_var(VarRole::TseitinAux).pos();
        let y = b.new_var(VarRole::TseitinAux).pos();
        let g = b.and(x, y);
        assert_eq!(b.and(y, x), g);
        assert_eq!(b.formula().num_clauses(), 3);
        let h = b.xor(!x, y);
        assert_eq!(b.xor(x, y), !h);
    }

    #[test]
    fn sweep_drops_dead_gates_only() {
        let mut b = CircuitBuilder::new();
        let x = b.new_var(VarRole::TseitinAux).pos();
        let y = b.new_var(VarRole::TseitinAux).pos();
        let dead = b.xor(x, y);
        let live = b.and(x, y);
        let top = b.or_all(&[live, x, !y]);
        assert_eq!(b.formula().num_clauses(), 4 + 3 + 4);
        assert_eq!(b.sweep(&[top]), 4);
        assert_eq!(b.formula().num_clauses(), 7);
        // A rebuilt xor gets a fresh definition rather than the deleted one.
        let again = b.xor(x, y);
        assert_ne!(again.var(), dead.var());
        assert_eq!(b.formula().num_clauses(), 11);
        assert_eq!(b.sweep(&[top, again]), 0);
    }

    #[test]
    fn basic_gates_exhaustive() {
        let mut b = CircuitBuilder::new();
        let (x, y, z) = (input(&mut b, 1), input(&mut b, 1), input(&mut b, 1));
        let (xl, yl, zl) = (x.bit(0), y.bit(0), z.bit(0));
        let gates = [
            b.and(xl, yl),
            b.or(xl, !yl),
            b.xor(xl, yl),
            b.ite(xl, yl, zl),
            b.maj(xl, !yl, zl),
            b.and_all(&[xl, yl, zl]),
            b.or_all(&[!xl, yl, zl]),
        ];
        let outs: Vec<Signal> = gates.iter().map(|&g| Signal::new(vec![g, Lit::FALSE])).collect();
        eval_all(&b, &[&x, &y, &z], &outs, |v, o| {
            let (x, y, z) = (v[0] != 0, v[1] != 0, v[2] != 0);
            let want = [
                x && y,
                x || !y,
                x ^ y,
                if x { y } else { z },
                (x as u8 + !y as u8 + z as u8) >= 2,
                x && y && z,
                !x || y || z,
            ];
            for (k, &w) in want.iter().enumerate() {
                assert_eq!(o[k] != 0, w, "gate {k} at {v:?}");
            }
        });
    }

    #[test]
    fn add_sub_neg_exhaustive_4bit() {
        let mut b = CircuitBuilder::new();
        let x = input(&mut b, 4);
        let y = input(&mut b, 4);
        let outs = vec![b.add(&x, &y, 5), b.sub(&x, &y, 5), b.neg(&x, 5), b.add(&x, &y, 3)];
        eval_all(&b, &[&x, &y], &outs, |v, o| {
            assert_eq!(o[0], v[0] + v[1]);
            assert_eq!(o[1], v[0] - v[1]);
            assert_eq!(o[2], -v[0]);
            assert_eq!(o[3], wrap(v[0] + v[1], 3));
        });
    }

    #[test]
    fn mul_by_every_constant_exhaustive() {
        for c in -16i64..16 {
            let mut b = CircuitBuilder::new();
            let x = input(&mut b, 4);
            let out = b.mul_const(&x, c, 9);
            eval_all(&b, &[&x], &[out], |v, o| assert_eq!(o[0], c * v[0], "c={c}"));
        }
    }

    #[test]
    fn sum_of_terms_exhaustive() {
        let mut b = CircuitBuilder::new();
        let xs: Vec<Signal> = (0..3).map(|_| input(&mut b, 3)).collect();
        let mut terms = xs.clone();
        terms.push(Signal::constant(-5, 4));
        let out = b.sum(&terms, 6);
        let refs: Vec<&Signal> = xs.iter().collect();
        eval_all(&b, &refs, &[out], |v, o| assert_eq!(o[0], v.iter().sum::<i64>() - 5));
    }

    #[test]
    fn relu_and_comparisons_exhaustive() {
        let mut b = CircuitBuilder::new();
        let x = input(&mut b, 4);
        let y = input(&mut b, 3);
        let r = b.relu(&x);
        let ge = b.ge(&x, &y);
        let gt = b.gt(&x, &y);
        let outs = vec![r, Signal::new(vec![ge, Lit::FALSE]), Signal::new(vec![gt, Lit::FALSE])];
        eval_all(&b, &[&x, &y], &outs, |v, o| {
            assert_eq!(o[0], v[0].max(0));
            assert_eq!(o[1] != 0, v[0] >= v[1]);
            assert_eq!(o[2] != 0, v[0] > v[1]);
        });
    }

    #[test]
    fn requantize_matches_reference_exhaustive() {
        use crate::fixedpoint::{requantize, QuantizedValue};
        let src = FixedPointFormat::widened(7, 3).unwrap();
        for (bits, frac) in [(4, 1), (4, 3), (3, 0), (5, 4), (8, 5), (7, 3)] {
            let out = FixedPointFormat::new(bits, frac).unwrap();
            let mut b = CircuitBuilder::new();
            let x = input(&mut b, 7);
            let r = b.requantize(&x, 3, out);
            assert_eq!(r.width(), bits);
            eval_all(&b, &[&x], &[r], |v, o| {
                let want = requantize(QuantizedValue::from_mantissa(src, v[0]).unwrap(), out);
                assert_eq!(o[0], want.mantissa(), "{v:?} -> {out}");
            });
        }
    }

    #[test]
    fn threshold_exhaustive() {
        for t in [-9i64, -3, 0, 2, 5, 20] {
            let mut b = CircuitBuilder::new();
            let x = input(&mut b, 5);
            let out = b.threshold(&x, t, 4, 4);
            eval_all(&b, &[&x], &[out], |v, o| {
                assert_eq!(o[0], if v[0] >= t { 4 } else { 0 }, "t={t}");
            });
        }
    }
}
