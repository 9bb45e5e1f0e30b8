//! Conflict-driven clause learning with two watched literals.
//!
//! The search follows the MiniSat design: VSIDS branching over a binary
//! heap, phase saving, first-UIP learning with local minimisation,
//! non-chronological backjumping, Luby restarts and LBD-based deletion of
//! learned clauses. Assumptions are decided first, in order, at levels
//! `1..=assumptions.len()`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{SatBackend, SolveResult, SolverConfig, SolverError, SolverStats};
use crate::cnf::{self, Assignment, CnfFormula, Lit, Var};

const UNDEF: i8 = 0;
const TRUE: i8 = 1;
const FALSE: i8 = -1;
const NO_REASON: u32 = u32::MAX;

#[derive(Debug, Clone)]
struct Clause {
    lits: Vec<Lit>,
    learnt: bool,
    lbd: u32,
    activity: f64,
    deleted: bool,
}

#[derive(Debug, Clone, Copy)]
struct Watcher {
    cref: u32,
    blocker: Lit,
}

/// Max-heap of variables keyed by activity.
#[derive(Debug, Clone, Default)]
struct VarHeap {
    heap: Vec<u32>,
    pos: Vec<Option<usize>>,
}

impl VarHeap {
    fn grow(&mut self, n: usize) {
        self.pos.resize(n, None);
    }

    fn contains(&self, v: u32) -> bool {
        self.pos[v as usize].is_some()
    }

    fn insert(&mut self, v: u32, act: &[f64]) {
        if self.contains(v) {
            return;
        }
        self.heap.push(v);
        self.pos[v as usize] = Some(self.heap.len() - 1);
        self.sift_up(self.heap.len() - 1, act);
    }

    fn increased(&mut self, v: u32, act: &[f64]) {
        if let Some(i) = self.pos[v as usize] {
            self.sift_up(i, act);
        }
    }

    fn pop(&mut self, act: &[f64]) -> Option<u32> {
        let top = *self.heap.first()?;
        let last = self.heap.pop().expect("non-empty");
        self.pos[top as usize] = None;
        if !self.heap.is_empty() {
            self.heap[0] = last;
            self.pos[last as usize] = Some(0);
            self.sift_down(0, act);
        }
        Some(top)
    }

    fn better(a: u32, b: u32, act: &[f64]) -> bool {
        let (x, y) = (act[a as usize], act[b as usize]);
        x > y || (x == y && a < b)
    }

    fn sift_up(&mut self, mut i: usize, act: &[f64]) {
        let v = self.heap[i];
        while i > 0 {
            let parent = (i - 1) / 2;
            let p = self.heap[parent];
            if !Self::better(v, p, act) {
                break;
            }
            self.heap[i] = p;
            self.pos[p as usize] = Some(i);
            i = parent;
        }
        self.heap[i] = v;
        self.pos[v as usize] = Some(i);
    }

    fn sift_down(&mut self, mut i: usize, act: &[f64]) {
        let v = self.heap[i];
        let n = self.heap.len();
        loop {
            let l = 2 * i + 1;
            if l >= n {
                break;
            }
            let r = l + 1;
            let child = if r < n && Self::better(self.heap[r], self.heap[l], act) {
                r
            } else {
                l
            };
            if !Self::better(self.heap[child], v, act) {
                break;
            }
            self.heap[i] = self.heap[child];
            self.pos[self.heap[i] as usize] = Some(i);
            i = child;
        }
        self.heap[i] = v;
        self.pos[v as usize] = Some(i);
    }
}

/// Reluctant doubling sequence 1,1,2,1,1,2,4,... scaled by powers of `y`.
fn luby(y: f64, mut x: u64) -> f64 {
    let mut size = 1u64;
    let mut seq = 0i32;
    while size < x + 1 {
        seq += 1;
        size = 2 * size + 1;
    }
    while size - 1 != x {
        size = (size - 1) >> 1;
        seq -= 1;
        x %= size;
    }
    y.powi(seq)
}

enum SearchOutcome {
    Sat,
    Unsat,
    Restart,
    Budget,
}

#[inline]
fn lit_value(assigns: &[i8], lit: Lit) -> i8 {
    let v = assigns[lit.var().index()];
    if lit.is_positive() {
        v
    } else {
        -v
    }
}

/// An incremental CDCL solver.
#[derive(Debug, Clone)]
pub struct CdclSolver {
    config: SolverConfig,
    num_vars: u32,
    original: Vec<Vec<Lit>>,
    clauses: Vec<Clause>,
    watches: Vec<Vec<Watcher>>,
    assigns: Vec<i8>,
    level: Vec<u32>,
    reason: Vec<u32>,
    polarity: Vec<bool>,
    activity: Vec<f64>,
    heap: VarHeap,
    seen: Vec<bool>,
    trail: Vec<Lit>,
    trail_lim: Vec<usize>,
    qhead: usize,
    var_inc: f64,
    cla_inc: f64,
    ok: bool,
    num_learnts: usize,
    next_reduce: u64,
    reductions: u64,
    rng: ChaCha8Rng,
    stats: SolverStats,
}

impl CdclSolver {
    pub fn new(config: SolverConfig) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Self {
            config,
            num_vars: 0,
            original: Vec::new(),
            clauses: Vec::new(),
            watches: Vec::new(),
            assigns: Vec::new(),
            level: Vec::new(),
            reason: Vec::new(),
            polarity: Vec::new(),
            activity: Vec::new(),
            heap: VarHeap::default(),
            seen: Vec::new(),
            trail: Vec::new(),
            trail_lim: Vec::new(),
            qhead: 0,
            var_inc: 1.0,
            cla_inc: 1.0,
            ok: true,
            num_learnts: 0,
            next_reduce: 2000,
            reductions: 0,
            rng,
            stats: SolverStats::default(),
        }
    }

    /// A solver preloaded with every clause of `formula`.
    pub fn from_formula(formula: &CnfFormula, config: SolverConfig) -> Self {
        let mut s = Self::new(config);
        s.ensure_vars(formula.num_vars());
        for c in formula.clauses() {
            s.add_clause(c).expect("formula clauses are normalised");
        }
        s
    }

    pub fn num_vars(&self) -> u32 {
        self.num_vars
    }

    /// Number of learned clauses currently kept.
    pub fn num_learnts(&self) -> usize {
        self.num_learnts
    }

    fn decision_level(&self) -> usize {
        self.trail_lim.len()
    }

    fn value(&self, lit: Lit) -> i8 {
        lit_value(&self.assigns, lit)
    }

    fn enqueue(&mut self, lit: Lit, reason: u32) {
        let v = lit.var().index();
        debug_assert_eq!(self.assigns[v], UNDEF);
        self.assigns[v] = if lit.is_positive() { TRUE } else { FALSE };
        self.level[v] = self.decision_level() as u32;
        self.reason[v] = reason;
        self.trail.push(lit);
    }

    fn new_decision_level(&mut self) {
        self.trail_lim.push(self.trail.len());
    }

    fn cancel_until(&mut self, level: usize) {
        if self.decision_level() <= level {
            return;
        }
        let start = self.trail_lim[level];
        for i in (start..self.trail.len()).rev() {
            let lit = self.trail[i];
            let v = lit.var().index();
            self.assigns[v] = UNDEF;
            self.reason[v] = NO_REASON;
            self.polarity[v] = lit.is_positive();
            self.heap.insert(v as u32, &self.activity);
        }
        self.trail.truncate(start);
        self.trail_lim.truncate(level);
        self.qhead = start;
    }

    fn attach(&mut self, lits: Vec<Lit>, learnt: bool, lbd: u32) -> u32 {
        debug_assert!(lits.len() >= 2);
        let cref = self.clauses.len() as u32;
        self.watches[lits[0].code()].push(Watcher {
            cref,
            blocker: lits[1],
        });
        self.watches[lits[1].code()].push(Watcher {
            cref,
            blocker: lits[0],
        });
        if learnt {
            self.num_learnts += 1;
        }
        self.clauses.push(Clause {
            lits,
            learnt,
            lbd,
            activity: 0.0,
            deleted: false,
        });
        cref
    }

    /// Unit propagation; returns a conflicting clause if one is found.
    fn propagate(&mut self) -> Option<u32> {
        let mut conflict = None;
        while self.qhead < self.trail.len() {
            let p = self.trail[self.qhead];
            self.qhead += 1;
            self.stats.propagations += 1;
            let false_lit = !p;
            let mut ws = std::mem::take(&mut self.watches[false_lit.code()]);
            let mut i = 0;
            let mut j = 0;
            while i < ws.len() {
                let w = ws[i];
                i += 1;
                if lit_value(&self.assigns, w.blocker) == TRUE {
                    ws[j] = w;
                    j += 1;
                    continue;
                }
                let clause = &mut self.clauses[w.cref as usize];
                if clause.deleted {
                    continue;
                }
                if clause.lits[0] == false_lit {
                    clause.lits.swap(0, 1);
                }
                let first = clause.lits[0];
                let kept = Watcher {
                    cref: w.cref,
                    blocker: first,
                };
                if first != w.blocker && lit_value(&self.assigns, first) == TRUE {
                    ws[j] = kept;
                    j += 1;
                    continue;
                }
                let mut moved = false;
                for k in 2..clause.lits.len() {
                    if lit_value(&self.assigns, clause.lits[k]) != FALSE {
                        clause.lits.swap(1, k);
                        self.watches[clause.lits[1].code()].push(kept);
                        moved = true;
                        break;
                    }
                }
                if moved {
                    continue;
                }
                ws[j] = kept;
                j += 1;
                if lit_value(&self.assigns, first) == FALSE {
                    conflict = Some(w.cref);
                    self.qhead = self.trail.len();
                    while i < ws.len() {
                        ws[j] = ws[i];
                        j += 1;
                        i += 1;
                    }
                } else {
                    let v = first.var().index();
                    self.assigns[v] = if first.is_positive() { TRUE } else { FALSE };
                    self.level[v] = self.trail_lim.len() as u32;
                    self.reason[v] = w.cref;
                    self.trail.push(first);
                }
            }
            ws.truncate(j);
            self.watches[false_lit.code()] = ws;
            if conflict.is_some() {
                break;
            }
        }
        conflict
    }

    fn bump_var(&mut self, v: usize) {
        self.activity[v] += self.var_inc;
        if self.activity[v] > 1e100 {
            for a in &mut self.activity {
                *a *= 1e-100;
            }
            self.var_inc *= 1e-100;
        }
        self.heap.increased(v as u32, &self.activity);
    }

    fn bump_clause(&mut self, cref: u32) {
        let c = &mut self.clauses[cref as usize];
        c.activity += self.cla_inc;
        if c.activity > 1e20 {
            for c in self.clauses.iter_mut().filter(|c| c.learnt) {
                c.activity *= 1e-20;
            }
            self.cla_inc *= 1e-20;
        }
    }

    /// First-UIP conflict analysis. Returns the learned clause (asserting
    /// literal first, highest remaining level second) and the backjump level.
    fn analyze(&mut self, mut confl: u32) -> (Vec<Lit>, usize) {
        let mut learnt = vec![Lit::TRUE];
        let mut path = 0usize;
        let mut p: Option<Lit> = None;
        let mut index = self.trail.len();
        let current = self.decision_level() as u32;
        loop {
            if self.clauses[confl as usize].learnt {
                self.bump_clause(confl);
            }
            let skip = usize::from(p.is_some());
            let lits = self.clauses[confl as usize].lits.clone();
            for &q in &lits[skip..] {
                let v = q.var().index();
                if !self.seen[v] && self.level[v] > 0 {
                    self.bump_var(v);
                    self.seen[v] = true;
                    if self.level[v] >= current {
                        path += 1;
                    } else {
                        learnt.push(q);
                    }
                }
            }
            loop {
                index -= 1;
                if self.seen[self.trail[index].var().index()] {
                    break;
                }
            }
            let lit = self.trail[index];
            let v = lit.var().index();
            p = Some(lit);
            confl = self.reason[v];
            self.seen[v] = false;
            path -= 1;
            if path == 0 {
                break;
            }
        }
        learnt[0] = !p.expect("conflict has a UIP");

        // Drop literals implied by the rest of the clause.
        let mut minimized = Vec::with_capacity(learnt.len());
        minimized.push(learnt[0]);
        for &q in &learnt[1..] {
            let r = self.reason[q.var().index()];
            let redundant = r != NO_REASON
                && self.clauses[r as usize].lits[1..].iter().all(|&x| {
                    let xv = x.var().index();
                    self.seen[xv] || self.level[xv] == 0
                });
            if !redundant {
                minimized.push(q);
            }
        }
        for q in &learnt[1..] {
            self.seen[q.var().index()] = false;
        }
        let mut learnt = minimized;

        let backjump = if learnt.len() == 1 {
            0
        } else {
            let mut max_i = 1;
            for i in 2..learnt.len() {
                if self.level[learnt[i].var().index()] > self.level[learnt[max_i].var().index()] {
                    max_i = i;
                }
            }
            learnt.swap(1, max_i);
            self.level[learnt[1].var().index()] as usize
        };
        (learnt, backjump)
    }

    fn lbd(&mut self, lits: &[Lit]) -> u32 {
        let mut levels: Vec<u32> = lits.iter().map(|l| self.level[l.var().index()]).collect();
        levels.sort_unstable();
        levels.dedup();
        levels.len() as u32
    }

    fn locked(&self, cref: u32) -> bool {
        let c = &self.clauses[cref as usize];
        let first = c.lits[0];
        self.reason[first.var().index()] == cref && self.value(first) == TRUE
    }

    /// Deletes the less useful half of the learned clauses (clauses with
    /// LBD at or below the keep threshold survive forever), then compacts
    /// the arena.
    fn reduce_db(&mut self) {
        let keep = self.config.keep_lbd;
        let mut candidates: Vec<u32> = (0..self.clauses.len() as u32)
            .filter(|&i| {
                let c = &self.clauses[i as usize];
                c.learnt && !c.deleted && c.lbd > keep && c.lits.len() > 2 && !self.locked(i)
            })
            .collect();
        candidates.sort_by(|&a, &b| {
            let (ca, cb) = (&self.clauses[a as usize], &self.clauses[b as usize]);
            cb.lbd
                .cmp(&ca.lbd)
                .then(ca.activity.total_cmp(&cb.activity))
                .then(a.cmp(&b))
        });
        let remove = candidates.len() / 2;
        for &i in &candidates[..remove] {
            self.clauses[i as usize].deleted = true;
            self.num_learnts -= 1;
            self.stats.deleted += 1;
        }
        self.compact();
    }

    fn compact(&mut self) {
        let mut remap = vec![NO_REASON; self.clauses.len()];
        let mut kept = Vec::with_capacity(self.clauses.len());
        for (i, c) in std::mem::take(&mut self.clauses).into_iter().enumerate() {
            if !c.deleted {
                remap[i] = kept.len() as u32;
                kept.push(c);
            }
        }
        self.clauses = kept;
        for r in &mut self.reason {
            if *r != NO_REASON {
                *r = remap[*r as usize];
            }
        }
        for ws in &mut self.watches {
            ws.retain_mut(|w| {
                w.cref = remap[w.cref as usize];
                w.cref != NO_REASON
            });
        }
    }

    fn pick_branch(&mut self) -> Option<Lit> {
        while let Some(v) = self.heap.pop(&self.activity) {
            if self.assigns[v as usize] == UNDEF {
                return Some(Var(v + 1).lit(self.polarity[v as usize]));
            }
        }
        None
    }

    fn search(&mut self, conflict_limit: u64, assumptions: &[Lit], budget_end: Option<u64>) -> SearchOutcome {
        let mut conflicts = 0u64;
        loop {
            if let Some(confl) = self.propagate() {
                self.stats.conflicts += 1;
                conflicts += 1;
                if self.decision_level() == 0 {
                    self.ok = false;
                    return SearchOutcome::Unsat;
                }
                let (learnt, backjump) = self.analyze(confl);
                self.cancel_until(backjump);
                if learnt.len() == 1 {
                    self.enqueue(learnt[0], NO_REASON);
                } else {
                    let lbd = self.lbd(&learnt);
                    let asserting = learnt[0];
                    let cref = self.attach(learnt, true, lbd);
                    self.bump_clause(cref);
                    self.enqueue(asserting, cref);
                }
                self.stats.learned += 1;
                self.var_inc /= self.config.var_decay;
                self.cla_inc /= self.config.clause_decay;
                if budget_end.is_some_and(|end| self.stats.conflicts >= end) {
                    return SearchOutcome::Budget;
                }
            } else {
                if conflicts >= conflict_limit {
                    self.cancel_until(0);
                    return SearchOutcome::Restart;
                }
                if self.stats.conflicts >= self.next_reduce {
                    self.reductions += 1;
                    self.next_reduce = self.stats.conflicts + 2000 + 300 * self.reductions;
                    self.reduce_db();
                }
                let mut next = None;
                while self.decision_level() < assumptions.len() {
                    let a = assumptions[self.decision_level()];
                    match self.value(a) {
                        TRUE => self.new_decision_level(),
                        FALSE => return SearchOutcome::Unsat,
                        _ => {
                            next = Some(a);
                            break;
                        }
                    }
                }
                let decision = match next {
                    Some(a) => a,
                    None => match self.pick_branch() {
                        Some(l) => l,
                        None => return SearchOutcome::Sat,
                    },
                };
                self.stats.decisions += 1;
                self.new_decision_level();
                self.enqueue(decision, NO_REASON);
            }
        }
    }

    fn model(&self) -> Assignment {
        Assignment::total(self.assigns.iter().map(|&v| v == TRUE).collect())
    }

    fn check_model(&self, model: &Assignment, assumptions: &[Lit]) {
        for c in &self.original {
            assert!(
                c.iter().any(|&l| model.value(l) == Some(true)),
                "solver produced a model violating clause {c:?}"
            );
        }
        for &a in assumptions {
            assert_eq!(model.value(a), Some(true), "model violates assumption {a:?}");
        }
    }
}

impl SatBackend for CdclSolver {
    fn ensure_vars(&mut self, n: u32) {
        while self.num_vars < n {
            self.num_vars += 1;
            self.assigns.push(UNDEF);
            self.level.push(0);
            self.reason.push(NO_REASON);
            self.polarity.push(false);
            self.activity.push(self.rng.gen::<f64>() * 1e-5);
            self.seen.push(false);
            self.watches.push(Vec::new());
            self.watches.push(Vec::new());
            self.heap.grow(self.num_vars as usize);
            self.heap.insert(self.num_vars - 1, &self.activity);
        }
    }

    fn add_clause(&mut self, clause: &[Lit]) -> Result<(), SolverError> {
        let clause = cnf::normalize_clause(clause.iter().copied(), self.num_vars)?;
        self.original.push(clause.clone());
        if !self.ok {
            return Ok(());
        }
        self.cancel_until(0);
        if clause.iter().any(|&l| self.value(l) == TRUE) {
            return Ok(());
        }
        let lits: Vec<Lit> = clause.into_iter().filter(|&l| self.value(l) != FALSE).collect();
        match lits.len() {
            0 => self.ok = false,
            1 => {
                self.enqueue(lits[0], NO_REASON);
                if self.propagate().is_some() {
                    self.ok = false;
                }
            }
            _ => {
                self.attach(lits, false, 0);
            }
        }
        Ok(())
    }

    fn solve(&mut self, assumptions: &[Lit]) -> Result<SolveResult, SolverError> {
        self.stats.solves += 1;
        for &a in assumptions {
            if a.is_const() || a.var().0 > self.num_vars {
                return Err(SolverError::OutOfRange(a));
            }
        }
        if !self.ok {
            return Ok(SolveResult::Unsat);
        }
        let budget_end = self.config.conflict_budget.map(|b| self.stats.conflicts + b);
        let mut restarts = 0u64;
        let outcome = loop {
            let limit = (luby(2.0, restarts) * self.config.restart_base as f64) as u64;
            match self.search(limit, assumptions, budget_end) {
                SearchOutcome::Restart => {
                    restarts += 1;
                    self.stats.restarts += 1;
                }
                other => break other,
            }
        };
        let result = match outcome {
            SearchOutcome::Sat => {
                let model = self.model();
                if cfg!(debug_assertions) {
                    self.check_model(&model, assumptions);
                }
                SolveResult::Sat(model)
            }
            SearchOutcome::Unsat => SolveResult::Unsat,
            SearchOutcome::Budget => SolveResult::BudgetExhausted,
            SearchOutcome::Restart => unreachable!(),
        };
        self.cancel_until(0);
        Ok(result)
    }

    fn stats(&self) -> SolverStats {
        self.stats.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn l(x: i32) -> Lit {
        Lit::from_dimacs(x)
    }

    fn solver(n: u32, clauses: &[&[i32]]) -> CdclSolver {
        let mut s = CdclSolver::new(SolverConfig::default());
        s.ensure_vars(n);
        for c in clauses {
            s.add_clause(&c.iter().map(|&x| l(x)).collect::<Vec<_>>()).unwrap();
        }
        s
    }

    #[test]
    fn luby_sequence() {
        let seq: Vec<f64> = (0..15).map(|i| luby(2.0, i)).collect();
        assert_eq!(seq, [1., 1., 2., 1., 1., 2., 4., 1., 1., 2., 1., 1., 2., 4., 8.]);
    }

    #[test]
    fn contradictory_units() {
        let mut s = solver(1, &[&[1], &[-1]]);
        assert!(s.solve(&[]).unwrap().is_unsat());
    }

    #[test]
    fn tautology_rejected() {
        let mut s = solver(2, &[]);
        assert!(matches!(s.add_clause(&[l(1), l(-1)]), Err(SolverError::Clause(_))));
        assert!(matches!(s.add_clause(&[l(3)]), Err(SolverError::Clause(_))));
    }

    #[test]
    fn units_force_model() {
        let mut s = solver(3, &[&[1], &[-2], &[3]]);
        let m = s.solve(&[]).unwrap().into_model().unwrap();
        assert_eq!(m, Assignment::total(vec![true, false, true]));
    }

    #[test]
    fn small_cases() {
        assert!(solver(0, &[]).solve(&[]).unwrap().is_sat());
        assert!(solver(2, &[&[1, 2], &[-1], &[-2]]).solve(&[]).unwrap().is_unsat());
        let mut s = solver(2, &[&[]]);
        assert!(s.solve(&[]).unwrap().is_unsat());
    }

    #[test]
    fn assumptions_are_temporary() {
        let mut s = solver(3, &[&[-1, 2], &[-2, 3]]);
        assert!(s.solve(&[l(1), l(-3)]).unwrap().is_unsat());
        let m = s.solve(&[l(1)]).unwrap().into_model().unwrap();
        assert_eq!(m.value(l(3)), Some(true));
        assert!(s.solve(&[l(-3)]).unwrap().is_sat());
        assert!(s.solve(&[l(4)]).is_err());
    }

    #[test]
    fn clauses_added_after_solving() {
        let mut s = solver(2, &[&[1, 2]]);
        assert!(s.solve(&[]).unwrap().is_sat());
        s.add_clause(&[l(-1)]).unwrap();
        s.ensure_vars(3);
        s.add_clause(&[l(-2), l(3)]).unwrap();
        let m = s.solve(&[]).unwrap().into_model().unwrap();
        assert_eq!(m.value(l(3)), Some(true));
        s.add_clause(&[l(-3)]).unwrap();
        assert!(s.solve(&[]).unwrap().is_unsat());
    }

    fn pigeonhole(holes: i32) -> CdclSolver {
        let pigeons = holes + 1;
        let var = |p: i32, h: i32| p * holes + h + 1;
        let mut s = CdclSolver::new(SolverConfig::default());
        s.ensure_vars((pigeons * holes) as u32);
        for p in 0..pigeons {
            s.add_clause(&(0..holes).map(|h| l(var(p, h))).collect::<Vec<_>>()).unwrap();
        }
        for h in 0..holes {
            for p in 0..pigeons {
                for q in p + 1..pigeons {
                    s.add_clause(&[l(-var(p, h)), l(-var(q, h))]).unwrap();
                }
            }
        }
        s
    }

    #[test]
    fn pigeonhole_is_unsat() {
        let mut s = pigeonhole(6);
        assert!(s.solve(&[]).unwrap().is_unsat());
        assert!(s.stats().conflicts > 0);
    }

    #[test]
    fn budget_is_reported() {
        let mut s = CdclSolver::new(SolverConfig {
            conflict_budget: Some(5),
            ..SolverConfig::default()
        });
        let mut p = pigeonhole(7);
        s.ensure_vars(p.num_vars());
        for c in std::mem::take(&mut p.original) {
            s.add_clause(&c).unwrap();
        }
        assert_eq!(s.solve(&[]).unwrap(), SolveResult::BudgetExhausted);
    }
}
