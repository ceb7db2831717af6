//! A small s-expression language for round payloads and policies.
//!
//! Grammar: `( ... )` lists, whitespace separation, decimal integers
//! (`-?[0-9]+`, 64-bit), `#x<hex>` byte strings, and symbols (any other
//! token). `true` and `false` evaluate to booleans. The builtins are
//! `+ * - and or not >= <= = threshold`; there are no lambdas or bindings.
//!
//! An expression's content address is the root of a Merkle tree with one
//! leaf per token of its canonical printed form, parentheses included.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::hashtree::{Digest, MerkleTree};

/// A validated symbol: non-empty, no whitespace or parentheses, and not
/// readable as an integer or byte string.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Symbol(String);

impl Symbol {
    pub fn new(name: &str) -> Result<Self, ParseError> {
        match classify(name, 0)? {
            Expr::Symbol(sym) => Ok(sym),
            _ => Err(ParseError {
                offset: 0,
                kind: ParseErrorKind::InvalidToken(name.to_string()),
            }),
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Expr {
    Int(i64),
    Symbol(Symbol),
    Bytes(Vec<u8>),
    List(Vec<Expr>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Value {
    Int(i64),
    Bool(bool),
    Bytes(Vec<u8>),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("parse error at byte {offset}: {kind}")]
pub struct ParseError {
    pub offset: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    #[error("empty input")]
    Empty,
    #[error("unbalanced ')'")]
    UnexpectedClose,
    #[error("unclosed '('")]
    Unclosed,
    #[error("invalid token {0:?}")]
    InvalidToken(String),
    #[error("input continues after a complete expression")]
    TrailingInput,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvalError {
    #[error("unknown symbol `{0}`")]
    UnknownSymbol(String),
    #[error("`{op}` takes {expected} argument(s), got {got}")]
    Arity {
        op: &'static str,
        expected: &'static str,
        got: usize,
    },
    #[error("`{op}` expected {expected}, got {got}")]
    TypeMismatch {
        op: &'static str,
        expected: &'static str,
        got: String,
    },
    #[error("integer overflow in `{0}`")]
    Overflow(&'static str),
    #[error("cannot evaluate an empty list")]
    EmptyList,
    #[error("list head is not a builtin: {0}")]
    NotCallable(String),
    #[error("`threshold` needs a non-negative count, got {0}")]
    NegativeThreshold(i64),
}

fn is_delimiter(c: char) -> bool {
    c.is_whitespace() || c == '(' || c == ')'
}

fn invalid(offset: usize, token: &str) -> ParseError {
    ParseError {
        offset,
        kind: ParseErrorKind::InvalidToken(token.to_string()),
    }
}

fn classify(token: &str, offset: usize) -> Result<Expr, ParseError> {
    if token.is_empty() || token.chars().any(is_delimiter) {
        return Err(invalid(offset, token));
    }
    if let Some(hex_part) = token.strip_prefix("#x") {
        return hex::decode(hex_part)
            .map(Expr::Bytes)
            .map_err(|_| invalid(offset, token));
    }
    if token.starts_with('#') {
        return Err(invalid(offset, token));
    }
    let digits = token.strip_prefix('-').unwrap_or(token);
    if digits.starts_with(|c: char| c.is_ascii_digit()) {
        if !digits.bytes().all(|b| b.is_ascii_digit()) {
            return Err(invalid(offset, token));
        }
        return token
            .parse::<i64>()
            .map(Expr::Int)
            .map_err(|_| invalid(offset, token));
    }
    Ok(Expr::Symbol(Symbol(token.to_string())))
}

pub fn parse(text: &str) -> Result<Expr, ParseError> {
    let mut stack: Vec<Vec<Expr>> = Vec::new();
    let mut done: Option<Expr> = None;
    let mut chars = text.char_indices().peekable();

    while let Some(&(offset, c)) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
            continue;
        }
        if done.is_some() {
            return Err(ParseError {
                offset,
                kind: ParseErrorKind::TrailingInput,
            });
        }
        let item = match c {
            '(' => {
                chars.next();
                stack.push(Vec::new());
                continue;
            }
            ')' => {
                chars.next();
                match stack.pop() {
                    Some(items) => Expr::List(items),
                    None => {
                        return Err(ParseError {
                            offset,
                            kind: ParseErrorKind::UnexpectedClose,
                        })
                    }
                }
            }
            _ => {
                let mut end = offset;
                while let Some(&(i, c)) = chars.peek() {
                    if is_delimiter(c) {
                        break;
                    }
                    end = i + c.len_utf8();
                    chars.next();
                }
                classify(&text[offset..end], offset)?
            }
        };
        match stack.last_mut() {
            Some(parent) => parent.push(item),
            None => done = Some(item),
        }
    }

    if !stack.is_empty() {
        return Err(ParseError {
            offset: text.len(),
            kind: ParseErrorKind::Unclosed,
        });
    }
    done.ok_or(ParseError {
        offset: text.len(),
        kind: ParseErrorKind::Empty,
    })
}

impl Expr {
    pub fn symbol(name: &str) -> Result<Expr, ParseError> {
        Symbol::new(name).map(Expr::Symbol)
    }

    pub fn list(items: impl IntoIterator<Item = Expr>) -> Expr {
        Expr::List(items.into_iter().collect())
    }

    pub fn boolean(b: bool) -> Expr {
        Expr::Symbol(Symbol(if b { "true" } else { "false" }.to_string()))
    }

    /// Tokens of the canonical printed form.
    pub fn tokens(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.push_tokens(&mut out);
        out
    }

    fn push_tokens(&self, out: &mut Vec<String>) {
        match self {
            Expr::List(items) => {
                out.push("(".to_string());
                for item in items {
                    item.push_tokens(out);
                }
                out.push(")".to_string());
            }
            atom => out.push(atom.to_string()),
        }
    }

    /// Replaces every subexpression for which `f` returns `Some`.
    pub fn substitute(&self, f: &impl Fn(&Expr) -> Option<Expr>) -> Expr {
        if let Some(replacement) = f(self) {
            return replacement;
        }
        match self {
            Expr::List(items) => Expr::List(items.iter().map(|e| e.substitute(f)).collect()),
            other => other.clone(),
        }
    }

    pub fn content_address(&self) -> Digest {
        encode_tree(self).root()
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Int(n) => write!(f, "{n}"),
            Expr::Symbol(s) => f.write_str(&s.0),
            Expr::Bytes(b) => write!(f, "#x{}", hex::encode(b)),
            Expr::List(items) => {
                f.write_str("(")?;
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" ")?;
                    }
                    write!(f, "{item}")?;
                }
                f.write_str(")")
            }
        }
    }
}

impl std::str::FromStr for Expr {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse(s)
    }
}

impl Serialize for Expr {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Expr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        parse(&text).map_err(serde::de::Error::custom)
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(n) => write!(f, "{n}"),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Bytes(b) => write!(f, "#x{}", hex::encode(b)),
        }
    }
}

/// One leaf per canonical token, in order.
pub fn encode_tree(expr: &Expr) -> MerkleTree {
    let leaves = expr.tokens().into_iter().map(String::into_bytes).collect();
    MerkleTree::new(leaves).expect("an expression has at least one token")
}

fn describe(v: &Value) -> String {
    match v {
        Value::Int(_) => "integer".into(),
        Value::Bool(_) => "boolean".into(),
        Value::Bytes(_) => "byte string".into(),
    }
}

fn want_int(op: &'static str, v: Value) -> Result<i64, EvalError> {
    match v {
        Value::Int(n) => Ok(n),
        other => Err(EvalError::TypeMismatch {
            op,
            expected: "integer",
            got: describe(&other),
        }),
    }
}

fn want_bool(op: &'static str, v: Value) -> Result<bool, EvalError> {
    match v {
        Value::Bool(b) => Ok(b),
        other => Err(EvalError::TypeMismatch {
            op,
            expected: "boolean",
            got: describe(&other),
        }),
    }
}

fn arity(op: &'static str, expected: &'static str, got: usize, ok: bool) -> Result<(), EvalError> {
    if ok {
        Ok(())
    } else {
        Err(EvalError::Arity { op, expected, got })
    }
}

pub fn eval(expr: &Expr) -> Result<Value, EvalError> {
    match expr {
        Expr::Int(n) => Ok(Value::Int(*n)),
        Expr::Bytes(b) => Ok(Value::Bytes(b.clone())),
        Expr::Symbol(s) => match s.as_str() {
            "true" => Ok(Value::Bool(true)),
            "false" => Ok(Value::Bool(false)),
            other => Err(EvalError::UnknownSymbol(other.to_string())),
        },
        Expr::List(items) => {
            let (head, rest) = items.split_first().ok_or(EvalError::EmptyList)?;
            let Expr::Symbol(op) = head else {
                return Err(EvalError::NotCallable(head.to_string()));
            };
            let args = rest.iter().map(eval).collect::<Result<Vec<_>, _>>()?;
            apply(op.as_str(), args)
        }
    }
}

fn apply(op: &str, args: Vec<Value>) -> Result<Value, EvalError> {
    let n = args.len();
    match op {
        "+" => {
            let mut acc: i64 = 0;
            for v in args {
                acc = acc.checked_add(want_int("+", v)?).ok_or(EvalError::Overflow("+"))?;
            }
            Ok(Value::Int(acc))
        }
        "*" => {
            let mut acc: i64 = 1;
            for v in args {
                acc = acc.checked_mul(want_int("*", v)?).ok_or(EvalError::Overflow("*"))?;
            }
            Ok(Value::Int(acc))
        }
        "-" => {
            arity("-", "at least 1", n, n >= 1)?;
            let mut it = args.into_iter();
            let first = want_int("-", it.next().expect("checked arity"))?;
            if n == 1 {
                return first.checked_neg().map(Value::Int).ok_or(EvalError::Overflow("-"));
            }
            let mut acc = first;
            for v in it {
                acc = acc.checked_sub(want_int("-", v)?).ok_or(EvalError::Overflow("-"))?;
            }
            Ok(Value::Int(acc))
        }
        "and" => {
            let mut acc = true;
            for v in args {
                acc &= want_bool("and", v)?;
            }
            Ok(Value::Bool(acc))
        }
        "or" => {
            let mut acc = false;
            for v in args {
                acc |= want_bool("or", v)?;
            }
            Ok(Value::Bool(acc))
        }
        "not" => {
            arity("not", "1", n, n == 1)?;
            let b = want_bool("not", args.into_iter().next().expect("checked arity"))?;
            Ok(Value::Bool(!b))
        }
        ">=" | "<=" => {
            let name = if op == ">=" { ">=" } else { "<=" };
            arity(name, "2", n, n == 2)?;
            let mut it = args.into_iter();
            let a = want_int(name, it.next().expect("checked arity"))?;
            let b = want_int(name, it.next().expect("checked arity"))?;
            Ok(Value::Bool(if op == ">=" { a >= b } else { a <= b }))
        }
        "=" => {
            arity("=", "2", n, n == 2)?;
            let (a, b) = (&args[0], &args[1]);
            if std::mem::discriminant(a) != std::mem::discriminant(b) {
                return Err(EvalError::TypeMismatch {
                    op: "=",
                    expected: "operands of one type",
                    got: format!("{} and {}", describe(a), describe(b)),
                });
            }
            Ok(Value::Bool(a == b))
        }
        "threshold" => {
            arity("threshold", "at least 1", n, n >= 1)?;
            let mut it = args.into_iter();
            let m = want_int("threshold", it.next().expect("checked arity"))?;
            if m < 0 {
                return Err(EvalError::NegativeThreshold(m));
            }
            let mut count: i64 = 0;
            for v in it {
                if want_bool("threshold", v)? {
                    count += 1;
                }
            }
            Ok(Value::Bool(count >= m))
        }
        other => Err(EvalError::UnknownSymbol(other.to_string())),
    }
}
