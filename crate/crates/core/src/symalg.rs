//! Symbolic calculus for words in T, T-dagger (written Td), P and I modulo
//! the relation Td T = I, with the "finite-rank + Laurent" normal form, the
//! invertible dilation W, and numeric evaluation against truncations.
//!
//! Sign convention: evaluate("Td T - T Td") = P.

use std::collections::BTreeMap;
use std::fmt;

use num_complex::Complex64;

use crate::basis::{schauder_basis, LeftInverse};
use crate::numerics::{svd_factor, CMatrix};
use crate::opmodel::OperatorSpec;
use crate::pseudoinv::{left_inverse_family, moore_penrose, SquareModel};
use crate::{Error, Result};

const ZERO_EPS: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Atom {
    T,
    D,
    P,
    I,
}

impl Atom {
    fn name(self) -> &'static str {
        match self {
            Atom::T => "T",
            Atom::D => "Td",
            Atom::P => "P",
            Atom::I => "I",
        }
    }
}

/// A product of atoms with positive powers.
pub type Word = Vec<(Atom, u32)>;

#[derive(Debug, Clone)]
pub struct Term {
    pub scalar: Complex64,
    pub word: Word,
}

/// Sum of scalar-weighted words.
#[derive(Debug, Clone)]
pub struct Expr {
    pub terms: Vec<Term>,
}

impl Expr {
    pub fn product(&self, other: &Expr) -> Expr {
        let mut terms = Vec::with_capacity(self.terms.len() * other.terms.len());
        for a in &self.terms {
            for b in &other.terms {
                let mut word = a.word.clone();
                word.extend(b.word.iter().copied());
                terms.push(Term { scalar: a.scalar * b.scalar, word });
            }
        }
        Expr { terms }
    }

    pub fn sub(&self, other: &Expr) -> Expr {
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().map(|t| Term { scalar: -t.scalar, word: t.word.clone() }));
        Expr { terms }
    }

    /// Largest number of atom factors in any single word.
    pub fn max_factors(&self) -> usize {
        self.terms
            .iter()
            .map(|t| t.word.iter().map(|&(_, p)| p as usize).sum())
            .max()
            .unwrap_or(0)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0*I");
        }
        for (idx, term) in self.terms.iter().enumerate() {
            if idx > 0 {
                write!(f, " + ")?;
            }
            write!(f, "({},{})*", term.scalar.re, term.scalar.im)?;
            if term.word.is_empty() {
                write!(f, "I")?;
            }
            for (k, &(a, p)) in term.word.iter().enumerate() {
                if k > 0 {
                    write!(f, " ")?;
                }
                if p == 1 {
                    write!(f, "{}", a.name())?;
                } else {
                    write!(f, "{}^{}", a.name(), p)?;
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// parser

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Atom(Atom),
    Num(f64),
    Plus,
    Minus,
    Star,
    Caret,
    LParen,
    RParen,
    Comma,
}

struct Lexer {
    toks: Vec<(Tok, usize)>,
    pos: usize,
}

fn lex(text: &str) -> Result<Lexer> {
    let bytes: Vec<char> = text.chars().collect();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let ch = bytes[i];
        let at = i;
        match ch {
            c if c.is_whitespace() => {
                i += 1;
            }
            '+' => {
                toks.push((Tok::Plus, at));
                i += 1;
            }
            '-' => {
                toks.push((Tok::Minus, at));
                i += 1;
            }
            '*' => {
                toks.push((Tok::Star, at));
                i += 1;
            }
            '^' => {
                toks.push((Tok::Caret, at));
                i += 1;
            }
            '(' => {
                toks.push((Tok::LParen, at));
                i += 1;
            }
            ')' => {
                toks.push((Tok::RParen, at));
                i += 1;
            }
            ',' => {
                toks.push((Tok::Comma, at));
                i += 1;
            }
            'T' => {
                if i + 1 < bytes.len() && bytes[i + 1] == 'd' {
                    toks.push((Tok::Atom(Atom::D), at));
                    i += 2;
                } else {
                    toks.push((Tok::Atom(Atom::T), at));
                    i += 1;
                }
            }
            'P' => {
                toks.push((Tok::Atom(Atom::P), at));
                i += 1;
            }
            'I' => {
                toks.push((Tok::Atom(Atom::I), at));
                i += 1;
            }
            c if c.is_ascii_digit() || c == '.' => {
                let start = i;
                while i < bytes.len()
                    && (bytes[i].is_ascii_digit()
                        || bytes[i] == '.'
                        || bytes[i] == 'e'
                        || bytes[i] == 'E'
                        || ((bytes[i] == '+' || bytes[i] == '-')
                            && i > start
                            && (bytes[i - 1] == 'e' || bytes[i - 1] == 'E')))
                {
                    i += 1;
                }
                let text: String = bytes[start..i].iter().collect();
                let value = text.parse::<f64>().map_err(|_| Error::Syntax {
                    position: start,
                    message: format!("malformed number '{text}'"),
                })?;
                toks.push((Tok::Num(value), start));
            }
            other => {
                return Err(Error::Syntax {
                    position: at,
                    message: format!("unexpected character '{other}'"),
                })
            }
        }
    }
    Ok(Lexer { toks, pos: 0 })
}

impl Lexer {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn peek_at(&self, ahead: usize) -> Option<&Tok> {
        self.toks.get(self.pos + ahead).map(|(t, _)| t)
    }

    fn here(&self) -> usize {
        self.toks.get(self.pos).map(|&(_, p)| p).unwrap_or(usize::MAX)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(t, _)| t.clone());
        self.pos += 1;
        t
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<()> {
        let at = self.here();
        match self.bump() {
            Some(t) if t == want => Ok(()),
            _ => Err(Error::Syntax { position: at, message: format!("expected {what}") }),
        }
    }
}

/// Parses the expression grammar. `Td` denotes T-dagger.
pub fn parse(text: &str) -> Result<Expr> {
    let mut lx = lex(text)?;
    if lx.toks.is_empty() {
        return Err(Error::EmptyInput);
    }
    let expr = parse_expr(&mut lx)?;
    if lx.pos < lx.toks.len() {
        return Err(Error::Syntax { position: lx.here(), message: "trailing input".into() });
    }
    Ok(expr)
}

fn parse_expr(lx: &mut Lexer) -> Result<Expr> {
    let mut terms = Vec::new();
    let mut negate = false;
    if matches!(lx.peek(), Some(Tok::Minus)) {
        lx.bump();
        negate = true;
    } else if matches!(lx.peek(), Some(Tok::Plus)) {
        lx.bump();
    }
    loop {
        let term = parse_term(lx)?;
        let sign = if negate { -1.0 } else { 1.0 };
        for t in term.terms {
            terms.push(Term { scalar: t.scalar * sign, word: t.word });
        }
        match lx.peek() {
            Some(Tok::Plus) => {
                lx.bump();
                negate = false;
            }
            Some(Tok::Minus) => {
                lx.bump();
                negate = true;
            }
            _ => break,
        }
    }
    Ok(Expr { terms })
}

/// Is the upcoming parenthesis a complex scalar "(re,im)"?
fn peeks_complex_scalar(lx: &Lexer) -> bool {
    if !matches!(lx.peek(), Some(Tok::LParen)) {
        return false;
    }
    let mut k = 1;
    if matches!(lx.peek_at(k), Some(Tok::Minus) | Some(Tok::Plus)) {
        k += 1;
    }
    if !matches!(lx.peek_at(k), Some(Tok::Num(_))) {
        return false;
    }
    k += 1;
    matches!(lx.peek_at(k), Some(Tok::Comma))
}

fn parse_scalar(lx: &mut Lexer) -> Result<Complex64> {
    if peeks_complex_scalar(lx) {
        lx.bump();
        let re = parse_signed_number(lx)?;
        lx.expect(Tok::Comma, "','")?;
        let im = parse_signed_number(lx)?;
        lx.expect(Tok::RParen, "')'")?;
        Ok(Complex64::new(re, im))
    } else {
        Ok(Complex64::new(parse_signed_number(lx)?, 0.0))
    }
}

fn parse_signed_number(lx: &mut Lexer) -> Result<f64> {
    let mut sign = 1.0;
    if matches!(lx.peek(), Some(Tok::Minus)) {
        lx.bump();
        sign = -1.0;
    } else if matches!(lx.peek(), Some(Tok::Plus)) {
        lx.bump();
    }
    let at = lx.here();
    match lx.bump() {
        Some(Tok::Num(v)) => Ok(sign * v),
        _ => Err(Error::Syntax { position: at, message: "expected number".into() }),
    }
}

fn parse_term(lx: &mut Lexer) -> Result<Expr> {
    let mut acc = Expr { terms: vec![Term { scalar: Complex64::new(1.0, 0.0), word: vec![] }] };
    // optional leading scalar followed by '*'
    let scalar_ahead = matches!(lx.peek(), Some(Tok::Num(_))) || peeks_complex_scalar(lx);
    if scalar_ahead {
        let s = parse_scalar(lx)?;
        lx.expect(Tok::Star, "'*' after scalar")?;
        acc.terms[0].scalar = s;
    }
    let mut factors = 0usize;
    loop {
        match lx.peek() {
            Some(Tok::Atom(_)) | Some(Tok::LParen) => {
                let f = parse_factor(lx)?;
                acc = acc.product(&f);
                factors += 1;
            }
            _ => break,
        }
    }
    if factors == 0 {
        return Err(Error::Syntax { position: lx.here(), message: "expected a factor".into() });
    }
    Ok(acc)
}

fn parse_factor(lx: &mut Lexer) -> Result<Expr> {
    let at = lx.here();
    match lx.bump() {
        Some(Tok::Atom(a)) => {
            let power = parse_optional_power(lx)?;
            let word = if a == Atom::I { vec![] } else { vec![(a, power)] };
            Ok(Expr { terms: vec![Term { scalar: Complex64::new(1.0, 0.0), word }] })
        }
        Some(Tok::LParen) => {
            let inner = parse_expr(lx)?;
            lx.expect(Tok::RParen, "')'")?;
            let power = parse_optional_power(lx)?;
            let mut acc = inner.clone();
            for _ in 1..power {
                acc = acc.product(&inner);
            }
            Ok(acc)
        }
        _ => Err(Error::Syntax { position: at, message: "expected T, Td, P, I or '('".into() }),
    }
}

fn parse_optional_power(lx: &mut Lexer) -> Result<u32> {
    if !matches!(lx.peek(), Some(Tok::Caret)) {
        return Ok(1);
    }
    lx.bump();
    let at = lx.here();
    match lx.bump() {
        Some(Tok::Num(v)) if v.fract() == 0.0 && v >= 1.0 && v <= 64.0 => Ok(v as u32),
        _ => Err(Error::Syntax { position: at, message: "expected a positive integer power".into() }),
    }
}

// ---------------------------------------------------------------------------
// normal form

/// Laurent part (k > 0 -> T^k, k < 0 -> Td^(-k), 0 -> I) plus the
/// finite-rank part spanned by T^i P Td^j.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NormalForm {
    pub laurent: BTreeMap<i64, Complex64>,
    pub finite_rank: BTreeMap<(u64, u64), Complex64>,
}

impl NormalForm {
    fn add_laurent(&mut self, k: i64, c: Complex64) {
        let entry = self.laurent.entry(k).or_default();
        *entry += c;
        if entry.norm() <= ZERO_EPS {
            self.laurent.remove(&k);
        }
    }

    fn add_finite_rank(&mut self, i: u64, j: u64, c: Complex64) {
        let entry = self.finite_rank.entry((i, j)).or_default();
        *entry += c;
        if entry.norm() <= ZERO_EPS {
            self.finite_rank.remove(&(i, j));
        }
    }

    fn add_monomial(&mut self, m: u64, n: u64, c: Complex64) {
        // T^m Td^n = T^(m-n) - sum_{k=max(0,m-n)}^{m-1} T^k P Td^(k+n-m)
        self.add_laurent(m as i64 - n as i64, c);
        let lo = (m as i64 - n as i64).max(0) as u64;
        for k in lo..m {
            self.add_finite_rank(k, k + n - m, -c);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.laurent.is_empty() && self.finite_rank.is_empty()
    }

    pub fn approx_eq(&self, other: &NormalForm, tol: f64) -> bool {
        let keys_l: std::collections::BTreeSet<_> =
            self.laurent.keys().chain(other.laurent.keys()).collect();
        for k in keys_l {
            let a = self.laurent.get(k).copied().unwrap_or_default();
            let b = other.laurent.get(k).copied().unwrap_or_default();
            if (a - b).norm() > tol {
                return false;
            }
        }
        let keys_f: std::collections::BTreeSet<_> =
            self.finite_rank.keys().chain(other.finite_rank.keys()).collect();
        for k in keys_f {
            let a = self.finite_rank.get(k).copied().unwrap_or_default();
            let b = other.finite_rank.get(k).copied().unwrap_or_default();
            if (a - b).norm() > tol {
                return false;
            }
        }
        true
    }

    /// Product through the monomial laws; independent of the Expr route.
    pub fn product(&self, other: &NormalForm) -> NormalForm {
        let mut out = NormalForm::default();
        let to_mn = |k: i64| if k >= 0 { (k as u64, 0u64) } else { (0u64, (-k) as u64) };
        // laurent x laurent
        for (&ka, &ca) in &self.laurent {
            for (&kb, &cb) in &other.laurent {
                let (m1, n1) = to_mn(ka);
                let (m2, n2) = to_mn(kb);
                // collapse Td^n1 T^m2
                let (m, n) = if m2 >= n1 {
                    (m1 + (m2 - n1), n2)
                } else {
                    (m1, n2 + (n1 - m2))
                };
                out.add_monomial(m, n, ca * cb);
            }
        }
        // laurent x finite-rank: T^m Td^n T^i P Td^j
        for (&ka, &ca) in &self.laurent {
            for (&(i, j), &cb) in &other.finite_rank {
                let (m, n) = to_mn(ka);
                if i >= n {
                    out.add_finite_rank(m + (i - n), j, ca * cb);
                } else if n - i >= 1 {
                    // Td^(n-i) P = 0
                }
            }
        }
        // finite-rank x laurent: T^i P Td^j T^m Td^n
        for (&(i, j), &ca) in &self.finite_rank {
            for (&kb, &cb) in &other.laurent {
                let (m, n) = to_mn(kb);
                if m <= j {
                    out.add_finite_rank(i, (j - m) + n, ca * cb);
                }
                // m > j: P T^(m-j) = 0
            }
        }
        // finite-rank x finite-rank: pairing delta_{j,k}
        for (&(i, j), &ca) in &self.finite_rank {
            for (&(k, l), &cb) in &other.finite_rank {
                if j == k {
                    out.add_finite_rank(i, l, ca * cb);
                }
            }
        }
        out
    }

    /// JSON per the interface: empty maps are omitted.
    pub fn to_json(&self) -> String {
        use serde_json::{json, Map, Value};
        let mut root = Map::new();
        if !self.laurent.is_empty() {
            let mut m = Map::new();
            for (k, c) in &self.laurent {
                m.insert(k.to_string(), json!([c.re, c.im]));
            }
            root.insert("laurent".into(), Value::Object(m));
        }
        if !self.finite_rank.is_empty() {
            let mut m = Map::new();
            for ((i, j), c) in &self.finite_rank {
                m.insert(format!("{i},{j}"), json!([c.re, c.im]));
            }
            root.insert("finite_rank".into(), Value::Object(m));
        }
        serde_json::to_string(&Value::Object(root)).expect("normal form json")
    }

    pub fn from_json(text: &str) -> Result<NormalForm> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let mut nf = NormalForm::default();
        let bad = |msg: &str| Error::SpecInvalid(format!("normal form json: {msg}"));
        let pair = |v: &serde_json::Value| -> Result<Complex64> {
            let arr = v.as_array().ok_or_else(|| bad("coefficient must be [re, im]"))?;
            if arr.len() != 2 {
                return Err(bad("coefficient must be [re, im]"));
            }
            Ok(Complex64::new(
                arr[0].as_f64().ok_or_else(|| bad("re not a number"))?,
                arr[1].as_f64().ok_or_else(|| bad("im not a number"))?,
            ))
        };
        if let Some(obj) = value.get("laurent").and_then(|v| v.as_object()) {
            for (k, v) in obj {
                let key: i64 = k.parse().map_err(|_| bad("laurent key"))?;
                nf.add_laurent(key, pair(v)?);
            }
        }
        if let Some(obj) = value.get("finite_rank").and_then(|v| v.as_object()) {
            for (k, v) in obj {
                let mut it = k.split(',');
                let i: u64 = it
                    .next()
                    .and_then(|s| s.trim().parse().ok())
                    .ok_or_else(|| bad("finite_rank key"))?;
                let j: u64 = it
                    .next()
                    .and_then(|s| s.trim().parse().ok())
                    .ok_or_else(|| bad("finite_rank key"))?;
                nf.add_finite_rank(i, j, pair(v)?);
            }
        }
        Ok(nf)
    }
}

/// True iff the element lies in the commutator ideal (closed span of
/// T^n P Td^m).
pub fn in_commutator_ideal(nf: &NormalForm) -> bool {
    nf.laurent.is_empty()
}

/// Rewrites an expression to its normal form. P is eliminated on entry as
/// I - T Td, words collapse through Td T = I, and each monomial T^m Td^n
/// splits into its Laurent and finite-rank parts.
pub fn normalize(e: &Expr) -> NormalForm {
    let mut nf = NormalForm::default();
    for term in &e.terms {
        for (scalar, word) in expand_p(term) {
            let (m, n) = collapse(&word);
            nf.add_monomial(m, n, scalar);
        }
    }
    nf
}

/// Expands every P factor as I - T Td, producing signed T/D words.
fn expand_p(term: &Term) -> Vec<(Complex64, Vec<(Atom, u32)>)> {
    let mut branches: Vec<(Complex64, Vec<(Atom, u32)>)> = vec![(term.scalar, Vec::new())];
    for &(atom, power) in &term.word {
        match atom {
            Atom::I => {}
            Atom::T | Atom::D => {
                for b in branches.iter_mut() {
                    b.1.push((atom, power));
                }
            }
            Atom::P => {
                for _ in 0..power {
                    let mut next = Vec::with_capacity(branches.len() * 2);
                    for (c, w) in &branches {
                        next.push((*c, w.clone()));
                        let mut with_td = w.clone();
                        with_td.push((Atom::T, 1));
                        with_td.push((Atom::D, 1));
                        next.push((-c, with_td));
                    }
                    branches = next;
                }
            }
        }
    }
    branches
}

/// Collapses a T/D word to the unique monomial T^m Td^n using Td T = I.
fn collapse(word: &[(Atom, u32)]) -> (u64, u64) {
    let mut m: u64 = 0; // leading T power
    let mut n: u64 = 0; // trailing Td power
    for &(atom, power) in word {
        match atom {
            Atom::T => {
                let p = power as u64;
                if n >= p {
                    n -= p;
                } else {
                    m += p - n;
                    n = 0;
                }
            }
            Atom::D => n += power as u64,
            _ => unreachable!("P and I are expanded before collapse"),
        }
    }
    (m, n)
}

// ---------------------------------------------------------------------------
// numeric evaluation

/// Numeric model: the square truncation with its certified window.
pub struct EvalModel {
    pub model: SquareModel,
}

impl EvalModel {
    pub fn build(spec: &OperatorSpec, n: usize) -> Result<Self> {
        let pkg = moore_penrose(spec, n)?;
        Ok(EvalModel { model: SquareModel::from_package(&pkg) })
    }

    pub fn window(&self, factors: usize) -> Result<usize> {
        self.model.window(factors.max(2))
    }

    fn atom_matrix(&self, atom: Atom) -> &CMatrix {
        match atom {
            Atom::T => &self.model.t,
            Atom::D => &self.model.d,
            Atom::P => &self.model.p,
            Atom::I => unreachable!("identity factors carry no matrix"),
        }
    }

    pub fn evaluate_expr(&self, e: &Expr) -> CMatrix {
        let n = self.model.dim;
        let mut acc = CMatrix::zeros(n, n);
        for term in &e.terms {
            let mut m = CMatrix::identity(n);
            for &(atom, power) in &term.word {
                if atom == Atom::I {
                    continue;
                }
                let f = self.atom_matrix(atom);
                for _ in 0..power {
                    m = m.mul(f);
                }
            }
            acc = acc.add(&m.scale(term.scalar));
        }
        acc
    }

    pub fn evaluate_nf(&self, nf: &NormalForm) -> CMatrix {
        let n = self.model.dim;
        let mut acc = CMatrix::zeros(n, n);
        for (&k, &c) in &nf.laurent {
            let m = if k >= 0 {
                self.model.pow(&self.model.t, k as usize)
            } else {
                self.model.pow(&self.model.d, (-k) as usize)
            };
            acc = acc.add(&m.scale(c));
        }
        for (&(i, j), &c) in &nf.finite_rank {
            let mut m = self.model.pow(&self.model.t, i as usize).mul(&self.model.p);
            m = m.mul(&self.model.pow(&self.model.d, j as usize));
            acc = acc.add(&m.scale(c));
        }
        acc
    }
}

/// The normalize-then-evaluate vs evaluate-directly deviation on the
/// certified window. The module's core oracle.
pub fn soundness_deviation(e: &Expr, spec: &OperatorSpec, n: usize) -> Result<f64> {
    let nf = normalize(e);
    let factors = e
        .max_factors()
        .max(nf.finite_rank.keys().map(|&(i, j)| (i + j + 1) as usize).max().unwrap_or(0))
        .max(nf.laurent.keys().map(|&k| k.unsigned_abs() as usize).max().unwrap_or(0));
    let ev = EvalModel::build(spec, n)?;
    let w = ev.window(factors)?;
    let direct = ev.evaluate_expr(e);
    let through = ev.evaluate_nf(&nf);
    Ok(direct.sub(&through).window_norm(w))
}

// ---------------------------------------------------------------------------
// dilation

/// The invertible dilation W = [[Td, 0], [P, T]] with W^-1 = [[T, P], [0, Td]]
/// and the D_k cache.
pub struct DilationPackage {
    pub w: CMatrix,
    pub w_inv: CMatrix,
    pub d_n_cache: BTreeMap<usize, CMatrix>,
    /// Worst deviation over the inverse identity and the k-th power block
    /// formulas, measured on the certified window.
    pub max_power_deviation: f64,
    pub window: usize,
}

fn two_by_two(blocks: [[&CMatrix; 2]; 2], n: usize) -> CMatrix {
    CMatrix::from_fn(2 * n, 2 * n, |i, j| blocks[i / n][j / n].get(i % n, j % n))
        .expect("block assembly")
}

fn block_window_dev(big: &CMatrix, blocks: [[&CMatrix; 2]; 2], n: usize, w: usize) -> f64 {
    let mut worst = 0.0f64;
    for bi in 0..2 {
        for bj in 0..2 {
            for i in 0..w {
                for j in 0..w {
                    let a = big.get(bi * n + i, bj * n + j);
                    let b = blocks[bi][bj].get(i, j);
                    worst = worst.max((a - b).norm());
                }
            }
        }
    }
    worst
}

/// D_k = sum_{j=0}^{k-1} T^j P Td^(k-1-j).
pub fn d_k_matrix(model: &SquareModel, k: usize) -> CMatrix {
    let n = model.dim;
    let mut acc = CMatrix::zeros(n, n);
    for j in 0..k {
        let m = model
            .pow(&model.t, j)
            .mul(&model.p)
            .mul(&model.pow(&model.d, k - 1 - j));
        acc = acc.add(&m);
    }
    acc
}

pub fn dilation(spec: &OperatorSpec, n: usize, k_max: usize) -> Result<DilationPackage> {
    let pkg = moore_penrose(spec, n)?;
    let model = SquareModel::from_package(&pkg);
    let window = model.window(k_max.max(2) + 1)?;
    let zero = CMatrix::zeros(n, n);
    let ident = CMatrix::identity(n);
    let w = two_by_two([[&model.d, &zero], [&model.p, &model.t]], n);
    let w_inv = two_by_two([[&model.t, &model.p], [&zero, &model.d]], n);

    let mut max_power_deviation =
        block_window_dev(&w.mul(&w_inv), [[&ident, &zero], [&zero, &ident]], n, window);
    max_power_deviation = max_power_deviation
        .max(block_window_dev(&w_inv.mul(&w), [[&ident, &zero], [&zero, &ident]], n, window));

    let mut d_n_cache = BTreeMap::new();
    let mut wk = CMatrix::identity(2 * n);
    let mut wk_inv = CMatrix::identity(2 * n);
    for k in 1..=k_max {
        wk = wk.mul(&w);
        wk_inv = wk_inv.mul(&w_inv);
        let dk = d_k_matrix(&model, k);
        let tk = model.pow(&model.t, k);
        let dgk = model.pow(&model.d, k);
        max_power_deviation =
            max_power_deviation.max(block_window_dev(&wk, [[&dgk, &zero], [&dk, &tk]], n, window));
        max_power_deviation = max_power_deviation
            .max(block_window_dev(&wk_inv, [[&tk, &dk], [&zero, &dgk]], n, window));
        d_n_cache.insert(k, dk);
    }
    Ok(DilationPackage { w, w_inv, d_n_cache, max_power_deviation, window })
}

// ---------------------------------------------------------------------------
// rank-one factors and commutator compactness

/// Random expression with at most three terms and at most six atom factors
/// per word; the workhorse of the soundness trials.
pub fn random_expr(rng: &mut impl rand::Rng) -> Expr {
    let atoms = [Atom::T, Atom::D, Atom::P, Atom::I];
    let n_terms = rng.gen_range(1..=3);
    let mut terms = Vec::new();
    for _ in 0..n_terms {
        let mut word = Vec::new();
        let mut budget = 6u32;
        while budget > 0 && rng.gen::<f64>() < 0.8 {
            let a = atoms[rng.gen_range(0..atoms.len())];
            let p = rng.gen_range(1..=budget.min(3));
            word.push((a, p));
            budget -= p;
        }
        let scalar = Complex64::new(rng.gen::<f64>() * 2.0 - 1.0, rng.gen::<f64>() * 2.0 - 1.0);
        terms.push(Term { scalar, word });
    }
    Expr { terms }
}

#[derive(Debug)]
pub struct RankOneReport {
    pub matrix: CMatrix,
    pub rank_one_deviation: f64,
    pub second_singular_ratio: f64,
}

/// F = T^n_idx (I - T Td) L^m_idx, compared against the rank one operator
/// theta_{x_{n_idx}, x'_{m_idx}}.
pub fn rank_one_factors(
    spec: &OperatorSpec,
    n_idx: usize,
    m_idx: usize,
    left_inverse: LeftInverse,
    n: usize,
) -> Result<RankOneReport> {
    let pkg = moore_penrose(spec, n)?;
    let model = SquareModel::from_package(&pkg);
    let count = n_idx.max(m_idx) + 1;
    let pair = schauder_basis(spec, left_inverse.clone(), count, n)?;
    let l_sq = match &left_inverse {
        LeftInverse::Dagger => model.d.clone(),
        LeftInverse::Custom(a) => left_inverse_family(&pkg, a).block(n, n),
    };
    let f = model
        .pow(&model.t, n_idx)
        .mul(&model.p)
        .mul(&model.pow(&l_sq, m_idx));
    let w = model.window(n_idx + m_idx + 2)?;
    let xn = &pair.x[n_idx];
    let xm = &pair.x_dual[m_idx];
    let mut dev = 0.0f64;
    for i in 0..w {
        for j in 0..w {
            let theta = xn[i] * xm[j].conj();
            dev = dev.max((f.get(i, j) - theta).norm());
        }
    }
    let sv = svd_factor(&f.block(w, w)).singular_values;
    let ratio = if sv.len() >= 2 && sv[0] > 0.0 { sv[1] / sv[0] } else { 0.0 };
    Ok(RankOneReport { matrix: f, rank_one_deviation: dev, second_singular_ratio: ratio })
}

#[derive(Debug)]
pub struct CommutatorReport {
    pub rank_estimate: usize,
    pub sigma_profile: Vec<f64>,
    pub symbolic_support: usize,
}

/// Singular-value profile of eval(xy - yx) on the certified window, bounded
/// by the symbolic finite-rank support of its normal form.
pub fn commutator_compactness(
    x: &Expr,
    y: &Expr,
    spec: &OperatorSpec,
    n: usize,
) -> Result<CommutatorReport> {
    let commutator = x.product(y).sub(&y.product(x));
    let nf = normalize(&commutator);
    if !in_commutator_ideal(&nf) {
        return Err(Error::CrossCheckFailed(
            "commutator normal form has a Laurent part".into(),
        ));
    }
    let ev = EvalModel::build(spec, n)?;
    let w = ev.window(commutator.max_factors())?;
    let m = ev.evaluate_expr(&commutator).block(w, w);
    let sv = svd_factor(&m).singular_values;
    let cutoff = 1e-9 * sv.first().copied().unwrap_or(0.0).max(1.0);
    let rank_estimate = sv.iter().filter(|&&s| s > cutoff).count();
    Ok(CommutatorReport {
        rank_estimate,
        sigma_profile: sv,
        symbolic_support: nf.finite_rank.len(),
    })
}
