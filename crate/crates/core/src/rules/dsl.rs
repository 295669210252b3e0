//! Parser for the rule language: `.decl` with optional `choice-domain`,
//! `.output`, and Horn clauses whose bodies hold positive atoms, `?v = "lit"`,
//! `?v = cat(...)` (with `to_string(...)` arguments), `?a = ?b` and `?a != ?b`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::facts::Value;
use super::RuleError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Term {
    Var(String),
    Const(Value),
    Wildcard,
}

impl Term {
    pub fn var(&self) -> Option<&str> {
        match self {
            Term::Var(v) => Some(v),
            _ => None,
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Var(v) => write!(f, "?{v}"),
            Term::Const(Value::Int(i)) => write!(f, "{i}"),
            Term::Const(Value::Sym(s)) => write!(f, "{s:?}"),
            Term::Wildcard => f.write_str("_"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Atom {
    pub relation: String,
    pub args: Vec<Term>,
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.relation)?;
        for (k, a) in self.args.iter().enumerate() {
            if k > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{a}")?;
        }
        f.write_str(")")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum CatPart {
    Term(Term),
    ToString(Term),
}

impl CatPart {
    fn term(&self) -> &Term {
        match self {
            CatPart::Term(t) | CatPart::ToString(t) => t,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Expr {
    Term(Term),
    Cat(Vec<CatPart>),
}

impl Expr {
    pub fn vars(&self) -> Vec<&str> {
        match self {
            Expr::Term(t) => t.var().into_iter().collect(),
            Expr::Cat(parts) => parts.iter().filter_map(|p| p.term().var()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Clause {
    Atom(Atom),
    Assign { var: String, expr: Expr },
    NotEqual(Term, Term),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ClauseGroup {
    Literal,
    Computed,
    Atoms,
    Constraints,
}

impl Clause {
    pub fn group(&self) -> ClauseGroup {
        match self {
            Clause::Atom(_) => ClauseGroup::Atoms,
            Clause::Assign { expr: Expr::Term(Term::Const(_)), .. } => ClauseGroup::Literal,
            Clause::Assign { expr: Expr::Cat(_), .. } => ClauseGroup::Computed,
            Clause::Assign { .. } | Clause::NotEqual(..) => ClauseGroup::Constraints,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rule {
    pub head: Atom,
    pub body: Vec<Clause>,
    /// Head variables forming the choice key.
    pub choice_domain: Option<Vec<String>>,
    /// Head argument positions forming the choice key.
    pub choice_positions: Option<Vec<usize>>,
    pub is_output: bool,
    pub line: usize,
}

impl Rule {
    /// Non-empty clause groups in a fixed order.
    pub fn clause_groups(&self) -> Vec<(ClauseGroup, Vec<&Clause>)> {
        let mut groups: BTreeMap<ClauseGroup, Vec<&Clause>> = BTreeMap::new();
        for c in &self.body {
            groups.entry(c.group()).or_default().push(c);
        }
        groups.into_iter().collect()
    }

    /// Literal `?type = "..."` binding of the given head variable, if any.
    pub fn literal_binding(&self, var: &str) -> Option<&Value> {
        self.body.iter().find_map(|c| match c {
            Clause::Assign { var: v, expr: Expr::Term(Term::Const(val)) } if v == var => Some(val),
            _ => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Var(String),
    Str(String),
    Int(i64),
    Directive(String),
    ChoiceDomain,
    LParen,
    RParen,
    Comma,
    Dot,
    Turnstile,
    Eq,
    Ne,
    Colon,
    Underscore,
    Other(char),
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

fn syntax(line: usize, col: usize, message: impl Into<String>) -> RuleError {
    RuleError::Syntax {
        line,
        col,
        message: message.into(),
    }
}

fn lex(text: &str) -> Result<Vec<Spanned>, RuleError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    let advance = |i: &mut usize, line: &mut usize, col: &mut usize, n: usize, chars: &[char]| {
        for _ in 0..n {
            if chars.get(*i) == Some(&'\n') {
                *line += 1;
                *col = 1;
            } else {
                *col += 1;
            }
            *i += 1;
        }
    };
    while i < chars.len() {
        let c = chars[i];
        let (l0, c0) = (line, col);
        let push = |out: &mut Vec<Spanned>, tok| out.push(Spanned { tok, line: l0, col: c0 });
        if c.is_whitespace() {
            advance(&mut i, &mut line, &mut col, 1, &chars);
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'/') || c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                advance(&mut i, &mut line, &mut col, 1, &chars);
            }
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'*') {
            advance(&mut i, &mut line, &mut col, 2, &chars);
            while i < chars.len() && !(chars[i] == '*' && chars.get(i + 1) == Some(&'/')) {
                advance(&mut i, &mut line, &mut col, 1, &chars);
            }
            if i >= chars.len() {
                return Err(syntax(l0, c0, "unterminated comment"));
            }
            advance(&mut i, &mut line, &mut col, 2, &chars);
            continue;
        }
        if c == '"' {
            let mut s = String::new();
            advance(&mut i, &mut line, &mut col, 1, &chars);
            loop {
                match chars.get(i) {
                    None | Some('\n') => return Err(syntax(l0, c0, "unterminated string")),
                    Some('"') => break,
                    Some('\\') => {
                        let esc = chars.get(i + 1).copied().unwrap_or('\\');
                        s.push(match esc {
                            'n' => '\n',
                            't' => '\t',
                            other => other,
                        });
                        advance(&mut i, &mut line, &mut col, 2, &chars);
                    }
                    Some(&ch) => {
                        s.push(ch);
                        advance(&mut i, &mut line, &mut col, 1, &chars);
                    }
                }
            }
            advance(&mut i, &mut line, &mut col, 1, &chars);
            push(&mut out, Tok::Str(s));
            continue;
        }
        let word_len = |start: usize| {
            chars[start..]
                .iter()
                .take_while(|ch| ch.is_alphanumeric() || **ch == '_')
                .count()
        };
        if c == '?' {
            let n = word_len(i + 1);
            if n == 0 {
                return Err(syntax(l0, c0, "expected variable name after `?`"));
            }
            let name: String = chars[i + 1..i + 1 + n].iter().collect();
            advance(&mut i, &mut line, &mut col, n + 1, &chars);
            push(&mut out, Tok::Var(name));
            continue;
        }
        if c == '.' && chars.get(i + 1).is_some_and(|ch| ch.is_alphabetic()) {
            let n = word_len(i + 1);
            let name: String = chars[i + 1..i + 1 + n].iter().collect();
            advance(&mut i, &mut line, &mut col, n + 1, &chars);
            push(&mut out, Tok::Directive(name));
            continue;
        }
        if c.is_ascii_digit() || (c == '-' && chars.get(i + 1).is_some_and(char::is_ascii_digit)) {
            let n = 1 + chars[i + 1..].iter().take_while(|ch| ch.is_ascii_digit()).count();
            let s: String = chars[i..i + n].iter().collect();
            let v = s.parse().map_err(|_| syntax(l0, c0, format!("integer out of range: {s}")))?;
            advance(&mut i, &mut line, &mut col, n, &chars);
            push(&mut out, Tok::Int(v));
            continue;
        }
        if c.is_alphabetic() || c == '_' {
            let n = word_len(i);
            let name: String = chars[i..i + n].iter().collect();
            let rest: String = chars[i..chars.len().min(i + 13)].iter().collect();
            if rest == "choice-domain" {
                advance(&mut i, &mut line, &mut col, 13, &chars);
                push(&mut out, Tok::ChoiceDomain);
                continue;
            }
            advance(&mut i, &mut line, &mut col, n, &chars);
            push(&mut out, if name == "_" { Tok::Underscore } else { Tok::Ident(name) });
            continue;
        }
        let (tok, n) = match (c, chars.get(i + 1)) {
            (':', Some('-')) => (Tok::Turnstile, 2),
            ('!', Some('=')) => (Tok::Ne, 2),
            (':', _) => (Tok::Colon, 1),
            ('=', _) => (Tok::Eq, 1),
            ('(', _) => (Tok::LParen, 1),
            (')', _) => (Tok::RParen, 1),
            (',', _) => (Tok::Comma, 1),
            ('.', _) => (Tok::Dot, 1),
            (other, _) => (Tok::Other(other), 1),
        };
        advance(&mut i, &mut line, &mut col, n, &chars);
        push(&mut out, tok);
    }
    Ok(out)
}

struct Decl {
    params: Vec<String>,
    choice: Option<Vec<String>>,
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
    end: (usize, usize),
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|s| &s.tok)
    }

    fn here(&self) -> (usize, usize) {
        self.toks.get(self.pos).map_or(self.end, |s| (s.line, s.col))
    }

    fn err(&self, message: impl Into<String>) -> RuleError {
        let (l, c) = self.here();
        syntax(l, c, message)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|s| s.tok.clone());
        self.pos += 1;
        t
    }

    fn expect(&mut self, want: &Tok, what: &str) -> Result<(), RuleError> {
        if self.peek() == Some(want) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(format!("expected {what}")))
        }
    }

    fn ident(&mut self) -> Result<String, RuleError> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => Err(self.err("expected identifier")),
        }
    }

    fn skip_balanced(&mut self) -> Result<(), RuleError> {
        self.expect(&Tok::LParen, "`(`")?;
        let mut depth = 1;
        while depth > 0 {
            match self.next() {
                Some(Tok::LParen) => depth += 1,
                Some(Tok::RParen) => depth -= 1,
                Some(_) => {}
                None => return Err(self.err("unbalanced parentheses")),
            }
        }
        Ok(())
    }

    fn param_name(&mut self) -> Result<String, RuleError> {
        match self.next() {
            Some(Tok::Var(v)) | Some(Tok::Ident(v)) => Ok(v),
            _ => {
                self.pos -= 1;
                Err(self.err("expected parameter name"))
            }
        }
    }

    fn decl(&mut self) -> Result<(String, Decl), RuleError> {
        let name = self.ident()?;
        self.expect(&Tok::LParen, "`(`")?;
        let mut params = Vec::new();
        if self.peek() != Some(&Tok::RParen) {
            loop {
                params.push(self.param_name()?);
                self.expect(&Tok::Colon, "`:` and a type")?;
                self.ident()?;
                match self.next() {
                    Some(Tok::Comma) => continue,
                    Some(Tok::RParen) => break,
                    _ => {
                        self.pos -= 1;
                        return Err(self.err("expected `,` or `)`"));
                    }
                }
            }
        } else {
            self.pos += 1;
        }
        let mut choice = None;
        if self.peek() == Some(&Tok::ChoiceDomain) {
            self.pos += 1;
            self.expect(&Tok::LParen, "`(` after choice-domain")?;
            let mut vars = Vec::new();
            loop {
                let (l, c) = self.here();
                let v = self.param_name()?;
                if !params.contains(&v) {
                    return Err(syntax(l, c, format!("choice-domain names unknown attribute `{v}`")));
                }
                vars.push(v);
                match self.next() {
                    Some(Tok::Comma) => continue,
                    Some(Tok::RParen) => break,
                    _ => {
                        self.pos -= 1;
                        return Err(self.err("expected `,` or `)`"));
                    }
                }
            }
            choice = Some(vars);
        }
        Ok((name, Decl { params, choice }))
    }

    fn term(&mut self) -> Result<Term, RuleError> {
        match self.next() {
            Some(Tok::Var(v)) => Ok(Term::Var(v)),
            Some(Tok::Str(s)) => Ok(Term::Const(Value::Sym(s))),
            Some(Tok::Int(i)) => Ok(Term::Const(Value::Int(i))),
            Some(Tok::Underscore) => Ok(Term::Wildcard),
            _ => {
                self.pos -= 1;
                Err(self.err("expected variable, string, integer or `_`"))
            }
        }
    }

    fn atom_args(&mut self) -> Result<Vec<Term>, RuleError> {
        self.expect(&Tok::LParen, "`(`")?;
        let mut args = Vec::new();
        if self.peek() == Some(&Tok::RParen) {
            self.pos += 1;
            return Ok(args);
        }
        loop {
            args.push(self.term()?);
            match self.next() {
                Some(Tok::Comma) => continue,
                Some(Tok::RParen) => return Ok(args),
                _ => {
                    self.pos -= 1;
                    return Err(self.err("expected `,` or `)`"));
                }
            }
        }
    }

    fn cat_part(&mut self) -> Result<CatPart, RuleError> {
        if let Some(Tok::Ident(f)) = self.peek() {
            if f == "to_string" {
                self.pos += 1;
                self.expect(&Tok::LParen, "`(` after to_string")?;
                let t = self.term()?;
                self.expect(&Tok::RParen, "`)`")?;
                return Ok(CatPart::ToString(t));
            }
            return Err(self.err(format!("unknown function `{f}`")));
        }
        Ok(CatPart::Term(self.term()?))
    }

    fn expr(&mut self) -> Result<Expr, RuleError> {
        if let Some(Tok::Ident(f)) = self.peek() {
            if f != "cat" {
                return Err(self.err(format!("unknown function `{f}`")));
            }
            self.pos += 1;
            self.expect(&Tok::LParen, "`(` after cat")?;
            let mut parts = Vec::new();
            loop {
                parts.push(self.cat_part()?);
                match self.next() {
                    Some(Tok::Comma) => continue,
                    Some(Tok::RParen) => return Ok(Expr::Cat(parts)),
                    _ => {
                        self.pos -= 1;
                        return Err(self.err("expected `,` or `)`"));
                    }
                }
            }
        }
        Ok(Expr::Term(self.term()?))
    }

    fn clause(&mut self) -> Result<Clause, RuleError> {
        match self.peek() {
            Some(Tok::Ident(_)) => {
                let relation = self.ident()?;
                let args = self.atom_args()?;
                Ok(Clause::Atom(Atom { relation, args }))
            }
            Some(Tok::Var(_)) => {
                let Term::Var(var) = self.term()? else { unreachable!() };
                match self.next() {
                    Some(Tok::Eq) => Ok(Clause::Assign { var, expr: self.expr()? }),
                    Some(Tok::Ne) => Ok(Clause::NotEqual(Term::Var(var), self.term()?)),
                    _ => {
                        self.pos -= 1;
                        Err(self.err("expected `=` or `!=`"))
                    }
                }
            }
            _ => Err(self.err("expected body clause")),
        }
    }

    fn rule(&mut self) -> Result<Rule, RuleError> {
        let (line, _) = self.here();
        let relation = self.ident()?;
        let args = self.atom_args()?;
        let head = Atom { relation, args };
        let mut body = Vec::new();
        match self.next() {
            Some(Tok::Dot) => {}
            Some(Tok::Turnstile) => loop {
                body.push(self.clause()?);
                match self.next() {
                    Some(Tok::Comma) => continue,
                    Some(Tok::Dot) => break,
                    _ => {
                        self.pos -= 1;
                        return Err(self.err("expected `,` or `.`"));
                    }
                }
            },
            _ => {
                self.pos -= 1;
                return Err(self.err("expected `:-` or `.`"));
            }
        }
        Ok(Rule {
            head,
            body,
            choice_domain: None,
            choice_positions: None,
            is_output: false,
            line,
        })
    }
}

/// Variables bound by the body once every clause has been applied.
fn bound_vars(body: &[Clause]) -> BTreeSet<&str> {
    let mut bound: BTreeSet<&str> = BTreeSet::new();
    for c in body {
        if let Clause::Atom(a) = c {
            bound.extend(a.args.iter().filter_map(Term::var));
        }
    }
    loop {
        let before = bound.len();
        for c in body {
            if let Clause::Assign { var, expr } = c {
                let inputs = expr.vars();
                if inputs.iter().all(|v| bound.contains(v)) {
                    bound.insert(var);
                } else if bound.contains(var.as_str()) && inputs.len() == 1 && matches!(expr, Expr::Term(_)) {
                    bound.insert(inputs[0]);
                }
            }
        }
        if bound.len() == before {
            return bound;
        }
    }
}

fn check_range_restriction(rule: &Rule) -> Result<(), RuleError> {
    let bound = bound_vars(&rule.body);
    let err = |what: String| syntax(rule.line, 1, what);
    for a in &rule.head.args {
        match a {
            Term::Var(v) if !bound.contains(v.as_str()) => {
                return Err(err(format!("head variable ?{v} is not bound in the body")))
            }
            Term::Wildcard => return Err(err("`_` is not allowed in a rule head".into())),
            _ => {}
        }
    }
    for c in &rule.body {
        let used: Vec<&str> = match c {
            Clause::Atom(_) => Vec::new(),
            Clause::Assign { var, expr } => expr.vars().into_iter().chain([var.as_str()]).collect(),
            Clause::NotEqual(a, b) => a.var().into_iter().chain(b.var()).collect(),
        };
        if let Some(v) = used.into_iter().find(|v| !bound.contains(v)) {
            return Err(err(format!("variable ?{v} is never bound")));
        }
    }
    Ok(())
}

/// Parses rule text into rules, attaching declared choice domains and
/// `.output` markers to the rules whose head they name.
pub fn parse_rules(text: &str) -> Result<Vec<Rule>, RuleError> {
    let toks = lex(text)?;
    let end = toks.last().map_or((1, 1), |t| (t.line, t.col + 1));
    let mut p = Parser { toks, pos: 0, end };
    let mut decls: BTreeMap<String, Decl> = BTreeMap::new();
    let mut outputs: BTreeSet<String> = BTreeSet::new();
    let mut rules = Vec::new();
    while let Some(tok) = p.peek().cloned() {
        match tok {
            Tok::Directive(d) => {
                let line = p.toks[p.pos].line;
                p.pos += 1;
                match d.as_str() {
                    "decl" => {
                        let (name, decl) = p.decl()?;
                        decls.insert(name, decl);
                    }
                    "output" => {
                        let name = p.ident()?;
                        if p.peek() == Some(&Tok::LParen) {
                            p.skip_balanced()?;
                        }
                        outputs.insert(name);
                    }
                    _ => {
                        while p.pos < p.toks.len() && p.toks[p.pos].line == line {
                            p.pos += 1;
                        }
                    }
                }
            }
            Tok::Ident(_) => rules.push(p.rule()?),
            _ => return Err(p.err("expected directive or rule")),
        }
    }
    for r in &mut rules {
        check_range_restriction(r)?;
        r.is_output = outputs.contains(&r.head.relation);
        let Some(decl) = decls.get(&r.head.relation) else {
            continue;
        };
        if decl.params.len() != r.head.args.len() {
            return Err(syntax(
                r.line,
                1,
                format!(
                    "head of `{}` has {} arguments, declared with {}",
                    r.head.relation,
                    r.head.args.len(),
                    decl.params.len()
                ),
            ));
        }
        if let Some(choice) = &decl.choice {
            let positions: Vec<usize> = choice
                .iter()
                .map(|c| decl.params.iter().position(|p| p == c).expect("checked at decl"))
                .collect();
            r.choice_domain = Some(
                positions
                    .iter()
                    .map(|&k| match &r.head.args[k] {
                        Term::Var(v) => v.clone(),
                        other => other.to_string(),
                    })
                    .collect(),
            );
            r.choice_positions = Some(positions);
        }
    }
    Ok(rules)
}

#[cfg(test)]
mod tests {
    use super::*;

    const LISTING: &str = r#".decl out_of_bounds_primitive(?type: symbol, ?assertion: symbol, ?func: Function, ?op1: Operand, ?op2: Operand, ?instr: Instruction, ?line:LineNumber) choice-domain (?func, ?line)
.output out_of_bounds_primitive(delimiter=",")
out_of_bounds_primitive(?type, ?assertion, ?func, ?op1, ?op2, ?instr, ?line) :-
    ?type = "Out-of-Bounds-Vulnerability",
    ?assertion = cat("0 <= ", to_string(?op2), "<=SIZEOF(", to_string(?op1), ")"),
    instr_func(?instr, ?func),
    indexaccessinstructions(?op1, ?op2, ?instr),
    instr_pos(?instr, ?line, ?col).
"#;

    #[test]
    fn oob_rule_shape() {
        let rules = parse_rules(LISTING).unwrap();
        assert_eq!(rules.len(), 1);
        let r = &rules[0];
        assert_eq!(r.clause_groups().len(), 3);
        assert_eq!(r.choice_domain.as_deref(), Some(&["func".to_string(), "line".to_string()][..]));
        assert_eq!(r.choice_positions.as_deref(), Some(&[2usize, 6][..]));
        assert!(r.is_output);
        assert_eq!(r.literal_binding("type"), Some(&Value::sym("Out-of-Bounds-Vulnerability")));
    }

    #[test]
    fn empty_and_comment_only() {
        assert!(parse_rules("").unwrap().is_empty());
        assert!(parse_rules("// nothing\n/* here */\n").unwrap().is_empty());
    }

    #[test]
    fn unbound_head_variable() {
        let err = parse_rules("r(?x, ?y) :- s(?x).").unwrap_err();
        assert!(matches!(err, RuleError::Syntax { line: 1, .. }), "{err}");
        let err = parse_rules("r(?x) :- s(?x), ?z = cat(to_string(?w)).").unwrap_err();
        assert!(matches!(err, RuleError::Syntax { .. }));
    }

    #[test]
    fn syntax_error_position() {
        let err = parse_rules("r(?x) :- s(?x)\nt(?y).").unwrap_err();
        match err {
            RuleError::Syntax { line, col, .. } => assert_eq!((line, col), (2, 1)),
            other => panic!("{other}"),
        }
        assert!(parse_rules("r(?x) :- s(?x), ?x = foo(?x).").is_err());
    }

    #[test]
    fn equality_and_disequality() {
        let rules = parse_rules("r(?a, ?b) :- s(?a, ?i), s(?a, ?j), ?i != ?j, ?b = ?a.").unwrap();
        assert_eq!(rules[0].body.len(), 4);
        let rules = parse_rules("r(?b) :- s(?a), ?a = ?b.").unwrap();
        assert_eq!(rules[0].clause_groups()[1].0, ClauseGroup::Constraints);
    }

    #[test]
    fn ground_facts_and_other_directives() {
        let rules = parse_rules(".type Operand <: symbol\nedge(\"a\", 1).\n").unwrap();
        assert_eq!(rules[0].head.args[1], Term::Const(Value::Int(1)));
        assert!(rules[0].body.is_empty());
    }
}
