//! Semi-naive bottom-up evaluation with choice-domain support.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use super::dsl::{CatPart, Clause, Expr, Rule, Term};
use super::facts::{FactBase, Tuple, Value};
use super::report::canonical_assertion;

/// One row of a seven-column vulnerability relation.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VulnFinding {
    pub vuln_type: String,
    pub func: String,
    pub line: Value,
    pub instr: String,
    pub assertion: String,
    pub op1: String,
    pub op2: String,
}

#[derive(Debug, Clone)]
enum CTerm {
    Var(usize),
    Const(Value),
    Wild,
}

#[derive(Debug, Clone)]
enum CClause {
    Atom { rel: String, args: Vec<CTerm> },
    Assign { var: usize, expr: CExpr },
    Ne(CTerm, CTerm),
}

#[derive(Debug, Clone)]
enum CExpr {
    Term(CTerm),
    Cat(Vec<CTerm>),
}

#[derive(Debug, Clone)]
enum Step {
    Scan { clause: usize, delta: bool, bound_cols: Vec<usize> },
    Other(usize),
}

struct Compiled {
    head_rel: String,
    head: Vec<CTerm>,
    body: Vec<CClause>,
    nvars: usize,
    atoms: Vec<usize>,
    choice: Option<Vec<usize>>,
}

fn compile(rule: &Rule) -> Compiled {
    let mut vars: HashMap<String, usize> = HashMap::new();
    let mut term = |t: &Term| match t {
        Term::Var(v) => {
            let n = vars.len();
            CTerm::Var(*vars.entry(v.clone()).or_insert(n))
        }
        Term::Const(c) => CTerm::Const(c.clone()),
        Term::Wildcard => CTerm::Wild,
    };
    let mut body = Vec::new();
    for c in &rule.body {
        body.push(match c {
            Clause::Atom(a) => CClause::Atom {
                rel: a.relation.clone(),
                args: a.args.iter().map(&mut term).collect(),
            },
            Clause::Assign { var, expr } => {
                let v = match term(&Term::Var(var.clone())) {
                    CTerm::Var(v) => v,
                    _ => unreachable!(),
                };
                let expr = match expr {
                    Expr::Term(t) => CExpr::Term(term(t)),
                    Expr::Cat(parts) => CExpr::Cat(
                        parts
                            .iter()
                            .map(|p| match p {
                                CatPart::Term(t) | CatPart::ToString(t) => term(t),
                            })
                            .collect(),
                    ),
                };
                CClause::Assign { var: v, expr }
            }
            Clause::NotEqual(a, b) => CClause::Ne(term(a), term(b)),
        });
    }
    let head = rule.head.args.iter().map(&mut term).collect();
    let atoms = body
        .iter()
        .enumerate()
        .filter(|(_, c)| matches!(c, CClause::Atom { .. }))
        .map(|(k, _)| k)
        .collect();
    Compiled {
        head_rel: rule.head.relation.clone(),
        head,
        body,
        nvars: vars.len(),
        atoms,
        choice: rule.choice_positions.clone(),
    }
}

fn term_bound(t: &CTerm, bound: &[bool]) -> bool {
    match t {
        CTerm::Var(v) => bound[*v],
        _ => true,
    }
}

fn ready(c: &CClause, bound: &[bool]) -> bool {
    match c {
        CClause::Atom { .. } => false,
        CClause::Assign { var, expr: CExpr::Term(t) } => bound[*var] || term_bound(t, bound),
        CClause::Assign { expr: CExpr::Cat(parts), .. } => parts.iter().all(|t| term_bound(t, bound)),
        CClause::Ne(a, b) => term_bound(a, bound) && term_bound(b, bound),
    }
}

fn bind_clause(c: &CClause, bound: &mut [bool]) {
    match c {
        CClause::Atom { args, .. } => {
            for a in args {
                if let CTerm::Var(v) = a {
                    bound[*v] = true;
                }
            }
        }
        CClause::Assign { var, expr } => {
            bound[*var] = true;
            if let CExpr::Term(CTerm::Var(v)) = expr {
                bound[*v] = true;
            }
        }
        CClause::Ne(..) => {}
    }
}

fn schedule(rule: &Compiled, delta: Option<usize>) -> Vec<Step> {
    let mut bound = vec![false; rule.nvars];
    let mut pending: Vec<usize> = (0..rule.body.len()).collect();
    let mut steps = Vec::new();
    let scan = |k: usize, is_delta: bool, bound: &mut Vec<bool>, steps: &mut Vec<Step>| {
        let CClause::Atom { args, .. } = &rule.body[k] else { unreachable!() };
        let bound_cols = args
            .iter()
            .enumerate()
            .filter(|(_, a)| matches!(a, CTerm::Const(_)) || matches!(a, CTerm::Var(v) if bound[*v]))
            .map(|(i, _)| i)
            .collect();
        steps.push(Step::Scan { clause: k, delta: is_delta, bound_cols });
        bind_clause(&rule.body[k], bound);
    };
    if let Some(d) = delta {
        pending.retain(|&k| k != d);
        scan(d, true, &mut bound, &mut steps);
    }
    loop {
        let mut progress = true;
        while progress {
            progress = false;
            if let Some(pos) = pending.iter().position(|&k| ready(&rule.body[k], &bound)) {
                let k = pending.remove(pos);
                steps.push(Step::Other(k));
                bind_clause(&rule.body[k], &mut bound);
                progress = true;
            }
        }
        match pending.iter().position(|&k| matches!(rule.body[k], CClause::Atom { .. })) {
            Some(pos) => {
                let k = pending.remove(pos);
                scan(k, false, &mut bound, &mut steps);
            }
            None => break,
        }
    }
    // Anything left can never become ready; keep it so the rule yields nothing.
    steps.extend(pending.into_iter().map(Step::Other));
    steps
}

type Index = HashMap<Vec<Value>, Vec<usize>>;

#[derive(Default)]
struct Store {
    tuples: HashMap<String, Vec<Tuple>>,
    indexes: RefCell<HashMap<(String, Vec<usize>), Rc<Index>>>,
}

impl Store {
    fn from_relations<'a>(rels: impl Iterator<Item = (&'a String, &'a BTreeSet<Tuple>)>) -> Self {
        Store {
            tuples: rels.map(|(k, v)| (k.clone(), v.iter().cloned().collect())).collect(),
            indexes: RefCell::default(),
        }
    }

    fn index(&self, rel: &str, cols: &[usize]) -> Rc<Index> {
        let key = (rel.to_string(), cols.to_vec());
        if let Some(ix) = self.indexes.borrow().get(&key) {
            return Rc::clone(ix);
        }
        let mut ix: Index = HashMap::new();
        for (n, t) in self.tuples.get(rel).into_iter().flatten().enumerate() {
            if cols.iter().all(|&c| c < t.len()) {
                ix.entry(cols.iter().map(|&c| t[c].clone()).collect()).or_default().push(n);
            }
        }
        let ix = Rc::new(ix);
        self.indexes.borrow_mut().insert(key, Rc::clone(&ix));
        ix
    }

    fn extend(&mut self, rel: &str, new: impl IntoIterator<Item = Tuple>) {
        self.tuples.entry(rel.to_string()).or_default().extend(new);
        self.indexes.borrow_mut().retain(|(r, _), _| r != rel);
    }
}

fn value_of(t: &CTerm, b: &[Option<Value>]) -> Option<Value> {
    match t {
        CTerm::Var(v) => b[*v].clone(),
        CTerm::Const(c) => Some(c.clone()),
        CTerm::Wild => None,
    }
}

struct Run<'a> {
    rule: &'a Compiled,
    steps: &'a [Step],
    full: &'a Store,
    delta: &'a Store,
    out: &'a mut BTreeSet<Tuple>,
}

impl Run<'_> {
    fn go(&mut self, step: usize, b: &mut Vec<Option<Value>>) {
        let Some(s) = self.steps.get(step) else {
            let tuple: Option<Tuple> = self.rule.head.iter().map(|t| value_of(t, b)).collect();
            if let Some(t) = tuple {
                self.out.insert(t);
            }
            return;
        };
        match s {
            Step::Scan { clause, delta, bound_cols } => {
                let CClause::Atom { rel, args } = &self.rule.body[*clause] else { unreachable!() };
                let store = if *delta { self.delta } else { self.full };
                let Some(tuples) = store.tuples.get(rel) else { return };
                if bound_cols.is_empty() || *delta {
                    for t in tuples {
                        self.try_tuple(t, args, step, b);
                    }
                } else {
                    let key: Vec<Value> = bound_cols
                        .iter()
                        .map(|&c| value_of(&args[c], b).expect("bound column"))
                        .collect();
                    let ix = store.index(rel, bound_cols);
                    if let Some(rows) = ix.get(&key) {
                        for &n in rows {
                            self.try_tuple(&tuples[n], args, step, b);
                        }
                    }
                }
            }
            Step::Other(k) => match &self.rule.body[*k] {
                CClause::Ne(x, y) => {
                    if let (Some(x), Some(y)) = (value_of(x, b), value_of(y, b)) {
                        if x != y {
                            self.go(step + 1, b);
                        }
                    }
                }
                CClause::Assign { var, expr } => {
                    let computed = match expr {
                        CExpr::Term(t) => value_of(t, b),
                        CExpr::Cat(parts) => parts
                            .iter()
                            .map(|t| value_of(t, b).map(|v| v.to_string()))
                            .collect::<Option<String>>()
                            .map(Value::Sym),
                    };
                    match (&b[*var], computed) {
                        (Some(cur), Some(val)) => {
                            if *cur == val {
                                self.go(step + 1, b);
                            }
                        }
                        (None, Some(val)) => {
                            b[*var] = Some(val);
                            self.go(step + 1, b);
                            b[*var] = None;
                        }
                        (Some(cur), None) => {
                            if let CExpr::Term(CTerm::Var(other)) = expr {
                                b[*other] = Some(cur.clone());
                                self.go(step + 1, b);
                                b[*other] = None;
                            }
                        }
                        (None, None) => {}
                    }
                }
                CClause::Atom { .. } => unreachable!(),
            },
        }
    }

    fn try_tuple(&mut self, t: &Tuple, args: &[CTerm], step: usize, b: &mut Vec<Option<Value>>) {
        if t.len() != args.len() {
            return;
        }
        let mut newly = Vec::new();
        let mut ok = true;
        for (a, v) in args.iter().zip(t) {
            match a {
                CTerm::Wild => {}
                CTerm::Const(c) => {
                    if c != v {
                        ok = false;
                        break;
                    }
                }
                CTerm::Var(x) => match &b[*x] {
                    Some(cur) => {
                        if cur != v {
                            ok = false;
                            break;
                        }
                    }
                    None => {
                        b[*x] = Some(v.clone());
                        newly.push(*x);
                    }
                },
            }
        }
        if ok {
            self.go(step + 1, b);
        }
        for x in newly {
            b[x] = None;
        }
    }
}

/// Least fixpoint of `rules` over `facts`, returning all relations.
///
/// Each round collects candidate head tuples, sorts them and admits a tuple of
/// a choice-domain relation only when its key has not been taken.
pub fn evaluate_fixpoint(facts: &FactBase, rules: &[Rule]) -> FactBase {
    let compiled: Vec<Compiled> = rules.iter().map(compile).collect();
    let mut db = facts.clone();
    let mut full = Store::from_relations(db.relations().iter());
    let mut taken: HashSet<(String, Vec<Value>)> = HashSet::new();
    for c in &compiled {
        if let (Some(pos), Some(existing)) = (&c.choice, db.relation(&c.head_rel)) {
            for t in existing {
                if let Some(key) = pos.iter().map(|&p| t.get(p).cloned()).collect::<Option<Vec<_>>>() {
                    taken.insert((c.head_rel.clone(), key));
                }
            }
        }
    }
    let mut plans: Vec<(usize, Vec<Step>, Option<usize>)> = Vec::new();
    for (r, c) in compiled.iter().enumerate() {
        plans.push((r, schedule(c, None), None));
        for &a in &c.atoms {
            plans.push((r, schedule(c, Some(a)), Some(a)));
        }
    }
    let mut delta = Store::default();
    let mut first = true;
    loop {
        let mut candidates: BTreeMap<String, BTreeSet<Tuple>> = BTreeMap::new();
        for (r, steps, delta_atom) in &plans {
            let c = &compiled[*r];
            if first != delta_atom.is_none() {
                continue;
            }
            if let Some(a) = delta_atom {
                let CClause::Atom { rel, .. } = &c.body[*a] else { unreachable!() };
                if delta.tuples.get(rel).is_none_or(Vec::is_empty) {
                    continue;
                }
            }
            let out = candidates.entry(c.head_rel.clone()).or_default();
            let mut b = vec![None; c.nvars];
            Run { rule: c, steps, full: &full, delta: &delta, out }.go(0, &mut b);
        }
        let mut next: BTreeMap<String, Vec<Tuple>> = BTreeMap::new();
        for (rel, tuples) in candidates {
            let choice = compiled.iter().find(|c| c.head_rel == rel).and_then(|c| c.choice.clone());
            let existing = db.relations_mut().entry(rel.clone()).or_default();
            for t in tuples {
                if existing.contains(&t) {
                    continue;
                }
                if let Some(pos) = &choice {
                    let Some(key) = pos.iter().map(|&p| t.get(p).cloned()).collect::<Option<Vec<_>>>() else {
                        continue;
                    };
                    if !taken.insert((rel.clone(), key)) {
                        continue;
                    }
                }
                existing.insert(t.clone());
                next.entry(rel.clone()).or_default().push(t);
            }
        }
        if next.is_empty() {
            break;
        }
        for (rel, tuples) in &next {
            full.extend(rel, tuples.iter().cloned());
        }
        delta = Store {
            tuples: next.into_iter().collect(),
            indexes: RefCell::default(),
        };
        first = false;
    }
    db
}

/// Seven-column rows of `.output` relations (or of every rule head when no
/// rule is marked for output), sorted by type, function, line and instruction.
pub fn extract_findings(db: &FactBase, rules: &[Rule]) -> Vec<VulnFinding> {
    let any_output = rules.iter().any(|r| r.is_output);
    let rels: BTreeSet<&str> = rules
        .iter()
        .filter(|r| r.is_output || !any_output)
        .map(|r| r.head.relation.as_str())
        .collect();
    let mut out = Vec::new();
    for rel in rels {
        for t in db.relation(rel).into_iter().flatten() {
            if t.len() != 7 {
                continue;
            }
            out.push(VulnFinding {
                vuln_type: t[0].to_string(),
                assertion: canonical_assertion(&t[1].to_string()),
                func: t[2].to_string(),
                op1: t[3].to_string(),
                op2: t[4].to_string(),
                instr: t[5].to_string(),
                line: t[6].clone(),
            });
        }
    }
    out.sort();
    out
}

pub fn evaluate_rules(facts: &FactBase, rules: &[Rule]) -> Vec<VulnFinding> {
    extract_findings(&evaluate_fixpoint(facts, rules), rules)
}
