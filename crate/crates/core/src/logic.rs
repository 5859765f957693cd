//! Propositional guards: vocabularies, formulas, interpretations and traces.
//!
//! Interpretations are total assignments stored as a 64-bit mask, so a
//! vocabulary holds at most [`MAX_VARIABLES`] variables. Unlisted variables
//! are false.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

/// Upper bound on vocabulary size (one bit per variable in an [`Interpretation`]).
pub const MAX_VARIABLES: usize = 64;

/// Largest vocabulary [`enumerate_models`] will walk.
pub const MAX_ENUMERATION_VARIABLES: usize = 24;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LogicError {
    #[error("syntax error at offset {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("undeclared variable `{name}` at offset {pos}")]
    UndeclaredVariable { name: String, pos: usize },
    #[error("duplicate variable `{0}` in vocabulary")]
    DuplicateVariable(String),
    #[error("invalid variable name `{0}`")]
    InvalidVariableName(String),
    #[error("vocabulary of {size} variables exceeds the limit of {max}")]
    VocabularyTooLarge { size: usize, max: usize },
    #[error("vocabulary mismatch: expected {expected} variables, found {found}")]
    VocabularyMismatch { expected: usize, found: usize },
}

pub type Result<T> = std::result::Result<T, LogicError>;

/// A declared propositional variable.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Variable {
    pub name: String,
    pub index: usize,
}

/// Ordered set of uniquely named variables.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    names: Vec<String>,
    lookup: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Vocabulary::default();
        for name in names {
            vocab.push(name.into())?;
        }
        Ok(vocab)
    }

    fn push(&mut self, name: String) -> Result<()> {
        if !is_identifier(&name) || is_keyword(&name) {
            return Err(LogicError::InvalidVariableName(name));
        }
        if self.lookup.contains_key(&name) {
            return Err(LogicError::DuplicateVariable(name));
        }
        if self.names.len() == MAX_VARIABLES {
            return Err(LogicError::VocabularyTooLarge {
                size: MAX_VARIABLES + 1,
                max: MAX_VARIABLES,
            });
        }
        self.lookup.insert(name.clone(), self.names.len());
        self.names.push(name);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.lookup.get(name).copied()
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn variables(&self) -> impl Iterator<Item = Variable> + '_ {
        self.names.iter().enumerate().map(|(index, name)| Variable {
            name: name.clone(),
            index,
        })
    }
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn is_keyword(s: &str) -> bool {
    s == "true" || s == "false"
}

/// Propositional formula over variable indices.
///
/// `And`/`Or` built through [`Formula::and`] and [`Formula::or`] are flattened
/// and hold at least two children.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Formula {
    True,
    False,
    Var(usize),
    Not(Box<Formula>),
    And(Vec<Formula>),
    Or(Vec<Formula>),
}

impl Formula {
    pub fn var(index: usize) -> Formula {
        Formula::Var(index)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(f: Formula) -> Formula {
        Formula::Not(Box::new(f))
    }

    pub fn and<I: IntoIterator<Item = Formula>>(children: I) -> Formula {
        Self::nary(children, true)
    }

    pub fn or<I: IntoIterator<Item = Formula>>(children: I) -> Formula {
        Self::nary(children, false)
    }

    pub fn implies(a: Formula, b: Formula) -> Formula {
        Formula::or([Formula::not(a), b])
    }

    fn nary<I: IntoIterator<Item = Formula>>(children: I, conj: bool) -> Formula {
        let mut flat = Vec::new();
        for child in children {
            match (child, conj) {
                (Formula::And(inner), true) | (Formula::Or(inner), false) => flat.extend(inner),
                (other, _) => flat.push(other),
            }
        }
        match flat.len() {
            0 if conj => Formula::True,
            0 => Formula::False,
            1 => flat.pop().unwrap(),
            _ if conj => Formula::And(flat),
            _ => Formula::Or(flat),
        }
    }

    /// Largest variable index mentioned, if any.
    pub fn max_var(&self) -> Option<usize> {
        match self {
            Formula::True | Formula::False => None,
            Formula::Var(i) => Some(*i),
            Formula::Not(c) => c.max_var(),
            Formula::And(cs) | Formula::Or(cs) => cs.iter().filter_map(Formula::max_var).max(),
        }
    }

    /// Sorted, deduplicated variables mentioned by the formula.
    pub fn support(&self) -> Vec<usize> {
        let mut mask = 0u64;
        self.collect_support(&mut mask);
        (0..MAX_VARIABLES).filter(|i| mask >> i & 1 == 1).collect()
    }

    pub(crate) fn support_mask(&self) -> u64 {
        let mut mask = 0u64;
        self.collect_support(&mut mask);
        mask
    }

    fn collect_support(&self, mask: &mut u64) {
        match self {
            Formula::True | Formula::False => {}
            Formula::Var(i) => *mask |= 1 << i,
            Formula::Not(c) => c.collect_support(mask),
            Formula::And(cs) | Formula::Or(cs) => cs.iter().for_each(|c| c.collect_support(mask)),
        }
    }

    /// Evaluates without checking the interpretation width.
    pub(crate) fn eval_bits(&self, bits: u64) -> bool {
        match self {
            Formula::True => true,
            Formula::False => false,
            Formula::Var(i) => bits >> i & 1 == 1,
            Formula::Not(c) => !c.eval_bits(bits),
            Formula::And(cs) => cs.iter().all(|c| c.eval_bits(bits)),
            Formula::Or(cs) => cs.iter().any(|c| c.eval_bits(bits)),
        }
    }

    /// Renders the formula with names from `vocab`.
    pub fn display<'a>(&'a self, vocab: &'a Vocabulary) -> FormulaDisplay<'a> {
        FormulaDisplay {
            formula: self,
            vocab: Some(vocab),
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Formula::Or(_) => 1,
            Formula::And(_) => 2,
            Formula::Not(_) => 3,
            _ => 4,
        }
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        FormulaDisplay {
            formula: self,
            vocab: None,
        }
        .fmt(f)
    }
}

pub struct FormulaDisplay<'a> {
    formula: &'a Formula,
    vocab: Option<&'a Vocabulary>,
}

impl FormulaDisplay<'_> {
    fn write(&self, node: &Formula, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match node {
            Formula::True => f.write_str("true"),
            Formula::False => f.write_str("false"),
            Formula::Var(i) => match self.vocab {
                Some(v) if *i < v.len() => f.write_str(v.name(*i)),
                _ => write!(f, "x{i}"),
            },
            Formula::Not(c) => {
                f.write_str("!")?;
                self.write_child(c, node.precedence(), f)
            }
            Formula::And(cs) | Formula::Or(cs) => {
                let sep = if matches!(node, Formula::And(_)) { " & " } else { " | " };
                for (k, c) in cs.iter().enumerate() {
                    if k > 0 {
                        f.write_str(sep)?;
                    }
                    self.write_child(c, node.precedence(), f)?;
                }
                Ok(())
            }
        }
    }

    fn write_child(&self, child: &Formula, parent: u8, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if child.precedence() < parent {
            f.write_str("(")?;
            self.write(child, f)?;
            f.write_str(")")
        } else {
            self.write(child, f)
        }
    }
}

impl fmt::Display for FormulaDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write(self.formula, f)
    }
}

/// Total truth assignment; bit `i` is the value of variable `i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Interpretation {
    bits: u64,
    len: usize,
}

impl Interpretation {
    /// All-false assignment.
    pub fn new(len: usize) -> Self {
        assert!(len <= MAX_VARIABLES, "interpretation width {len} > {MAX_VARIABLES}");
        Interpretation { bits: 0, len }
    }

    pub fn from_bits(bits: u64, len: usize) -> Self {
        assert!(len <= MAX_VARIABLES, "interpretation width {len} > {MAX_VARIABLES}");
        let mask = if len == 64 { u64::MAX } else { (1u64 << len) - 1 };
        Interpretation {
            bits: bits & mask,
            len,
        }
    }

    pub fn from_bools(values: &[bool]) -> Self {
        let mut it = Interpretation::new(values.len());
        for (i, &v) in values.iter().enumerate() {
            it.set(i, v);
        }
        it
    }

    /// Assignment where exactly the listed variables are true.
    pub fn from_true_vars<I: IntoIterator<Item = usize>>(len: usize, vars: I) -> Self {
        let mut it = Interpretation::new(len);
        for v in vars {
            it.set(v, true);
        }
        it
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn bits(&self) -> u64 {
        self.bits
    }

    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len);
        self.bits >> i & 1 == 1
    }

    pub fn set(&mut self, i: usize, value: bool) {
        assert!(i < self.len);
        if value {
            self.bits |= 1 << i;
        } else {
            self.bits &= !(1 << i);
        }
    }

    pub fn true_vars(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len).filter(|&i| self.get(i))
    }

    pub fn to_bools(&self) -> Vec<bool> {
        (0..self.len).map(|i| self.get(i)).collect()
    }

    /// Shorthand rendering listing the true variables, e.g. `{tired, blocked}`.
    pub fn display(&self, vocab: &Vocabulary) -> String {
        let names: Vec<&str> = self.true_vars().map(|i| vocab.name(i)).collect();
        format!("{{{}}}", names.join(", "))
    }
}

/// Sequence of interpretations over one vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Trace(Vec<Interpretation>);

impl Trace {
    pub fn new(steps: Vec<Interpretation>) -> Result<Self> {
        if let Some(first) = steps.first() {
            if let Some(bad) = steps.iter().find(|s| s.len() != first.len()) {
                return Err(LogicError::VocabularyMismatch {
                    expected: first.len(),
                    found: bad.len(),
                });
            }
        }
        Ok(Trace(steps))
    }

    pub fn steps(&self) -> &[Interpretation] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `ω ⊨ f`. Fails when `f` mentions a variable outside `ω`.
pub fn evaluate(f: &Formula, omega: &Interpretation) -> Result<bool> {
    check_width(f, omega.len())?;
    Ok(f.eval_bits(omega.bits))
}

fn check_width(f: &Formula, width: usize) -> Result<()> {
    match f.max_var() {
        Some(i) if i >= width => Err(LogicError::VocabularyMismatch {
            expected: i + 1,
            found: width,
        }),
        _ => Ok(()),
    }
}

/// All models of `f` over a vocabulary of `vocab_size` variables, in
/// increasing bit order. Exponential; intended as a reference oracle.
pub fn enumerate_models(f: &Formula, vocab_size: usize) -> Result<Vec<Interpretation>> {
    if vocab_size > MAX_ENUMERATION_VARIABLES {
        return Err(LogicError::VocabularyTooLarge {
            size: vocab_size,
            max: MAX_ENUMERATION_VARIABLES,
        });
    }
    check_width(f, vocab_size)?;
    Ok((0..1u64 << vocab_size)
        .filter(|&bits| f.eval_bits(bits))
        .map(|bits| Interpretation::from_bits(bits, vocab_size))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Ident(String),
    True,
    False,
    Not,
    And,
    Or,
    Implies,
    LParen,
    RParen,
}

fn tokenize(text: &str) -> Result<Vec<(Token, usize)>> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let tok = match c {
            b' ' | b'\t' | b'\r' | b'\n' => {
                i += 1;
                continue;
            }
            b'!' => Token::Not,
            b'&' => Token::And,
            b'|' => Token::Or,
            b'(' => Token::LParen,
            b')' => Token::RParen,
            b'-' if bytes.get(i + 1) == Some(&b'>') => {
                out.push((Token::Implies, i));
                i += 2;
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                let word = &text[start..i];
                let tok = match word {
                    "true" => Token::True,
                    "false" => Token::False,
                    _ => Token::Ident(word.to_string()),
                };
                out.push((tok, start));
                continue;
            }
            _ => {
                let ch = text[i..].chars().next().unwrap_or('?');
                return Err(LogicError::Syntax {
                    pos: i,
                    msg: format!("unexpected character `{ch}`"),
                });
            }
        };
        out.push((tok, i));
        i += 1;
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<(Token, usize)>,
    pos: usize,
    end: usize,
    vocab: &'a Vocabulary,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|(t, _)| t)
    }

    fn offset(&self) -> usize {
        self.tokens.get(self.pos).map_or(self.end, |(_, p)| *p)
    }

    fn eat(&mut self, tok: &Token) -> bool {
        if self.peek() == Some(tok) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn error<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(LogicError::Syntax {
            pos: self.offset(),
            msg: msg.into(),
        })
    }

    fn implication(&mut self) -> Result<Formula> {
        let lhs = self.disjunction()?;
        if self.eat(&Token::Implies) {
            let rhs = self.disjunction()?;
            return Ok(Formula::implies(lhs, rhs));
        }
        Ok(lhs)
    }

    fn disjunction(&mut self) -> Result<Formula> {
        let mut parts = vec![self.conjunction()?];
        while self.eat(&Token::Or) {
            parts.push(self.conjunction()?);
        }
        Ok(Formula::or(parts))
    }

    fn conjunction(&mut self) -> Result<Formula> {
        let mut parts = vec![self.negation()?];
        while self.eat(&Token::And) {
            parts.push(self.negation()?);
        }
        Ok(Formula::and(parts))
    }

    fn negation(&mut self) -> Result<Formula> {
        if self.eat(&Token::Not) {
            return Ok(Formula::not(self.negation()?));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Formula> {
        let at = self.offset();
        match self.peek().cloned() {
            Some(Token::True) => {
                self.pos += 1;
                Ok(Formula::True)
            }
            Some(Token::False) => {
                self.pos += 1;
                Ok(Formula::False)
            }
            Some(Token::Ident(name)) => {
                self.pos += 1;
                match self.vocab.index_of(&name) {
                    Some(i) => Ok(Formula::Var(i)),
                    None => Err(LogicError::UndeclaredVariable { name, pos: at }),
                }
            }
            Some(Token::LParen) => {
                self.pos += 1;
                let inner = self.implication()?;
                if !self.eat(&Token::RParen) {
                    return self.error("expected `)`");
                }
                Ok(inner)
            }
            Some(_) => self.error("expected a variable, constant or `(`"),
            None => self.error("unexpected end of expression"),
        }
    }
}

/// Parses a guard expression (`!`, `&`, `|`, `->`, parentheses, `true`,
/// `false`) against `vocab`. Precedence from tightest: `!`, `&`, `|`, `->`.
pub fn parse_formula(text: &str, vocab: &Vocabulary) -> Result<Formula> {
    let mut parser = Parser {
        tokens: tokenize(text)?,
        pos: 0,
        end: text.len(),
        vocab,
    };
    let formula = parser.implication()?;
    if parser.pos != parser.tokens.len() {
        return parser.error("unexpected trailing input");
    }
    Ok(formula)
}
