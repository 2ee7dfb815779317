//! Tools callable through the tool-use intrinsic function.

use std::collections::BTreeMap;
use std::sync::Arc;

use num_rational::Ratio;
use num_traits::{CheckedAdd, CheckedDiv, CheckedMul, CheckedSub};

pub trait Tool: Send + Sync {
    fn name(&self) -> &str;
    fn description(&self) -> &str;
    /// Runs the tool; an `Err` is shown to the agent, not raised.
    fn run(&self, args: &str) -> Result<String, String>;
}

#[derive(Clone, Default)]
pub struct ToolRegistry {
    tools: BTreeMap<String, Arc<dyn Tool>>,
}

impl ToolRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registry holding only the `calc` tool.
    pub fn with_calculator() -> Self {
        let mut r = Self::new();
        r.register(Arc::new(Calculator));
        r
    }

    pub fn register(&mut self, tool: Arc<dyn Tool>) {
        self.tools.insert(tool.name().to_string(), tool);
    }

    pub fn get(&self, name: &str) -> Option<&Arc<dyn Tool>> {
        self.tools.get(name)
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    pub fn menu(&self) -> String {
        self.tools
            .values()
            .map(|t| format!("{}: {}", t.name(), t.description()))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

impl std::fmt::Debug for ToolRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.tools.keys()).finish()
    }
}

/// Exact rational arithmetic over `+ - * / ( )`; `×`, `÷` and `−` are accepted too.
pub struct Calculator;

impl Tool for Calculator {
    fn name(&self) -> &str {
        "calc"
    }

    fn description(&self) -> &str {
        "evaluate an arithmetic expression with + - * / and parentheses, e.g. calc(3*(4+5))"
    }

    fn run(&self, args: &str) -> Result<String, String> {
        let value = evaluate(args)?;
        Ok(if *value.denom() == 1 {
            value.numer().to_string()
        } else {
            format!("{}/{}", value.numer(), value.denom())
        })
    }
}

type Q = Ratio<i128>;

pub fn evaluate(expr: &str) -> Result<Q, String> {
    let tokens = lex(expr)?;
    let mut p = Parser { tokens, pos: 0 };
    let v = p.expr()?;
    if p.pos != p.tokens.len() {
        return Err(format!("unexpected {:?}", p.tokens[p.pos]));
    }
    Ok(v)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Tok {
    Num(i128),
    Op(char),
    Open,
    Close,
}

fn lex(s: &str) -> Result<Vec<Tok>, String> {
    let mut out = Vec::new();
    let mut chars = s.chars().peekable();
    while let Some(&c) = chars.peek() {
        match c {
            c if c.is_whitespace() => {
                chars.next();
            }
            '0'..='9' => {
                let mut n: i128 = 0;
                while let Some(d) = chars.peek().and_then(|c| c.to_digit(10)) {
                    n = n
                        .checked_mul(10)
                        .and_then(|n| n.checked_add(d as i128))
                        .ok_or("number too large")?;
                    chars.next();
                }
                out.push(Tok::Num(n));
            }
            '+' => {
                chars.next();
                out.push(Tok::Op('+'));
            }
            '-' | '−' => {
                chars.next();
                out.push(Tok::Op('-'));
            }
            '*' | '×' => {
                chars.next();
                out.push(Tok::Op('*'));
            }
            '/' | '÷' => {
                chars.next();
                out.push(Tok::Op('/'));
            }
            '(' => {
                chars.next();
                out.push(Tok::Open);
            }
            ')' => {
                chars.next();
                out.push(Tok::Close);
            }
            other => return Err(format!("unexpected character {other:?}")),
        }
    }
    if out.is_empty() {
        return Err("empty expression".into());
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<Tok> {
        self.tokens.get(self.pos).copied()
    }

    fn expr(&mut self) -> Result<Q, String> {
        let mut acc = self.term()?;
        while let Some(Tok::Op(op @ ('+' | '-'))) = self.peek() {
            self.pos += 1;
            let rhs = self.term()?;
            acc = if op == '+' { acc.checked_add(&rhs) } else { acc.checked_sub(&rhs) }.ok_or("overflow")?;
        }
        Ok(acc)
    }

    fn term(&mut self) -> Result<Q, String> {
        let mut acc = self.factor()?;
        while let Some(Tok::Op(op @ ('*' | '/'))) = self.peek() {
            self.pos += 1;
            let rhs = self.factor()?;
            acc = if op == '*' {
                acc.checked_mul(&rhs).ok_or("overflow")?
            } else {
                if rhs == Q::from_integer(0) {
                    return Err("division by zero".into());
                }
                acc.checked_div(&rhs).ok_or("overflow")?
            };
        }
        Ok(acc)
    }

    fn factor(&mut self) -> Result<Q, String> {
        match self.peek() {
            Some(Tok::Op('-')) => {
                self.pos += 1;
                Ok(-self.factor()?)
            }
            Some(Tok::Op('+')) => {
                self.pos += 1;
                self.factor()
            }
            Some(Tok::Num(n)) => {
                self.pos += 1;
                Ok(Q::from_integer(n))
            }
            Some(Tok::Open) => {
                self.pos += 1;
                let v = self.expr()?;
                if self.peek() != Some(Tok::Close) {
                    return Err("missing ')'".into());
                }
                self.pos += 1;
                Ok(v)
            }
            other => Err(format!("unexpected {other:?}")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic() {
        let c = Calculator;
        assert_eq!(c.run("3*(4+5)").unwrap(), "27");
        assert_eq!(c.run("7 ÷ 2").unwrap(), "7/2");
        assert_eq!(c.run("−3 × 2 + 10").unwrap(), "4");
        assert_eq!(c.run("1/3 + 2/3").unwrap(), "1");
    }

    #[test]
    fn errors_are_values() {
        let c = Calculator;
        assert!(c.run("1/0").unwrap_err().contains("division by zero"));
        assert!(c.run("2 +").is_err());
        assert!(c.run("import os").is_err());
        assert!(c.run("(1").is_err());
    }
}
