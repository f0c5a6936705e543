//! Parser for line-oriented programs such as
//!
//! ```text
//! BOX0=LOC(image=IMAGE,object='chair')
//! ANSWER0=VQA(image=BOX0,question='what color?')
//! FINAL=EVAL(expr='{ANSWER0}')
//! ```
//!
//! Each line becomes one subtask node. A line depends on an earlier line when
//! one of its arguments names that line's output, either as a bare identifier
//! or as a `{NAME}` template inside a quoted string. `IMAGE` is reserved for
//! the raw input, which the virtual node already carries.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::graph::{ModelZoo, TaskGraph};

/// Identifier bound to the virtual input node.
pub const INPUT_IDENT: &str = "IMAGE";

#[derive(Clone, Debug, PartialEq)]
pub enum ArgValue {
    Ident(String),
    Str(String),
    Number(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProgramLine {
    pub output_name: String,
    pub function_name: String,
    pub args: Vec<(String, ArgValue)>,
}

impl ProgramLine {
    /// Names this line reads, in argument order (duplicates kept).
    pub fn references(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (_, v) in &self.args {
            match v {
                ArgValue::Ident(name) => out.push(name.clone()),
                ArgValue::Str(s) => out.extend(brace_refs(s)),
                ArgValue::Number(_) => {}
            }
        }
        out
    }
}

/// `{NAME}` templates inside a string literal.
fn brace_refs(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = s;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) => {
                let name = &after[..close];
                if is_identifier(name) {
                    out.push(name.to_string());
                }
                rest = &after[close + 1..];
            }
            None => break,
        }
    }
    out
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

struct Cursor<'a> {
    chars: Vec<char>,
    pos: usize,
    line: usize,
    _src: &'a str,
}

impl<'a> Cursor<'a> {
    fn new(src: &'a str, line: usize) -> Self {
        Self {
            chars: src.chars().collect(),
            pos: 0,
            line,
            _src: src,
        }
    }

    fn err(&self, message: impl Into<String>) -> Error {
        Error::Syntax {
            line: self.line,
            column: self.pos + 1,
            message: message.into(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.chars.len() && self.chars[self.pos].is_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.chars.get(self.pos).copied()
    }

    fn expect(&mut self, c: char) -> Result<()> {
        match self.peek() {
            Some(x) if x == c => {
                self.pos += 1;
                Ok(())
            }
            Some(x) => Err(self.err(format!("expected `{c}`, found `{x}`"))),
            None => Err(self.err(format!("expected `{c}`, found end of line"))),
        }
    }

    fn ident(&mut self, what: &str) -> Result<String> {
        self.skip_ws();
        let start = self.pos;
        match self.chars.get(self.pos) {
            Some(&c) if c.is_ascii_alphabetic() || c == '_' => self.pos += 1,
            Some(&c) => return Err(self.err(format!("expected {what}, found `{c}`"))),
            None => return Err(self.err(format!("expected {what}, found end of line"))),
        }
        while self.pos < self.chars.len()
            && (self.chars[self.pos].is_ascii_alphanumeric() || self.chars[self.pos] == '_')
        {
            self.pos += 1;
        }
        Ok(self.chars[start..self.pos].iter().collect())
    }

    fn value(&mut self) -> Result<ArgValue> {
        match self.peek() {
            Some(q @ ('\'' | '"')) => {
                let open = self.pos;
                self.pos += 1;
                let start = self.pos;
                while self.pos < self.chars.len() && self.chars[self.pos] != q {
                    self.pos += 1;
                }
                if self.pos >= self.chars.len() {
                    self.pos = open;
                    return Err(self.err("unterminated string literal"));
                }
                let s: String = self.chars[start..self.pos].iter().collect();
                self.pos += 1;
                Ok(ArgValue::Str(s))
            }
            Some(c) if c.is_ascii_digit() || c == '-' || c == '+' || c == '.' => {
                let start = self.pos;
                self.pos += 1;
                while self.pos < self.chars.len() {
                    let c = self.chars[self.pos];
                    let exp_sign =
                        (c == '-' || c == '+') && matches!(self.chars[self.pos - 1], 'e' | 'E');
                    if c.is_ascii_digit() || c == '.' || c == 'e' || c == 'E' || exp_sign {
                        self.pos += 1;
                    } else {
                        break;
                    }
                }
                let text: String = self.chars[start..self.pos].iter().collect();
                if text.parse::<f64>().is_err() {
                    self.pos = start;
                    return Err(self.err(format!("malformed number `{text}`")));
                }
                Ok(ArgValue::Number(text))
            }
            Some(_) => Ok(ArgValue::Ident(self.ident("a value")?)),
            None => Err(self.err("expected a value, found end of line")),
        }
    }
}

/// Parses one program line (`line_no` is 1-based and only used in errors).
pub fn tokenize_line(line: &str, line_no: usize) -> Result<ProgramLine> {
    let mut cur = Cursor::new(line, line_no);
    let output_name = cur.ident("an output name")?;
    cur.expect('=')?;
    let function_name = cur.ident("a function name")?;
    cur.expect('(')?;
    let mut args = Vec::new();
    if cur.peek() == Some(')') {
        cur.pos += 1;
    } else {
        loop {
            let key = cur.ident("an argument name")?;
            cur.expect('=')?;
            let value = cur.value()?;
            args.push((key, value));
            match cur.peek() {
                Some(',') => cur.pos += 1,
                Some(')') => {
                    cur.pos += 1;
                    break;
                }
                Some(c) => return Err(cur.err(format!("expected `,` or `)`, found `{c}`"))),
                None => return Err(cur.err("unclosed `(`")),
            }
        }
    }
    if let Some(c) = cur.peek() {
        return Err(cur.err(format!("unexpected `{c}` after `)`")));
    }
    Ok(ProgramLine {
        output_name,
        function_name,
        args,
    })
}

/// Splits `text` into lines (`\n` or `\r\n`), skipping blank ones, and
/// tokenizes each. Returns `(source line number, line)` pairs.
pub fn parse_lines(text: &str) -> Result<Vec<(usize, ProgramLine)>> {
    let mut out = Vec::new();
    for (i, raw) in text.split('\n').enumerate() {
        let raw = raw.strip_suffix('\r').unwrap_or(raw);
        if raw.trim().is_empty() {
            continue;
        }
        out.push((i + 1, tokenize_line(raw, i + 1)?));
    }
    if out.is_empty() {
        return Err(Error::Syntax {
            line: 1,
            column: 1,
            message: "empty program".into(),
        });
    }
    Ok(out)
}

/// Parses a program into an augmented, validated task graph.
pub fn parse_program(text: &str, zoo: &ModelZoo) -> Result<TaskGraph> {
    let lines = parse_lines(text)?;
    let mut node_of: HashMap<String, usize> = HashMap::new();
    let mut node_types = Vec::with_capacity(lines.len());
    let mut edges = Vec::new();
    for (k, (line_no, line)) in lines.iter().enumerate() {
        let node = k + 1;
        let t = zoo
            .type_by_name(&line.function_name)
            .ok_or_else(|| Error::UnknownFunction {
                line: *line_no,
                name: line.function_name.clone(),
            })?;
        for name in line.references() {
            if name == INPUT_IDENT {
                continue;
            }
            let &u = node_of
                .get(&name)
                .ok_or_else(|| Error::UndefinedReference {
                    line: *line_no,
                    name: name.clone(),
                })?;
            if !edges.contains(&(u, node)) {
                edges.push((u, node));
            }
        }
        if line.output_name == INPUT_IDENT
            || node_of.insert(line.output_name.clone(), node).is_some()
        {
            return Err(Error::DuplicateDefinition {
                line: *line_no,
                name: line.output_name.clone(),
            });
        }
        node_types.push(t);
    }
    let graph = TaskGraph::new(String::new(), node_types, edges).augment_virtual_node();
    graph.validate_and_topo_sort()?;
    Ok(graph)
}

/// Canonical text for parsed lines; parsing it again yields the same graph.
pub fn format_program(lines: &[ProgramLine]) -> String {
    let mut out = String::new();
    for (i, line) in lines.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let _ = write!(out, "{}={}(", line.output_name, line.function_name);
        for (a, (key, value)) in line.args.iter().enumerate() {
            if a > 0 {
                out.push(',');
            }
            let _ = match value {
                ArgValue::Ident(s) | ArgValue::Number(s) => write!(out, "{key}={s}"),
                ArgValue::Str(s) if s.contains('\'') => write!(out, "{key}=\"{s}\""),
                ArgValue::Str(s) => write!(out, "{key}='{s}'"),
            };
        }
        out.push(')');
    }
    out
}
