//! `.tir` reader.
//!
//! ```text
//! # comment
//! entry main                 # optional, defaults to `main`
//! targets t1, t2             # optional default target list
//!
//! func f(x: int, cb: fn(int) -> int) -> int {
//! b0:
//!   v = read_input
//!   c = eq v, 71
//!   br c, b1, b2
//! b1:
//!   r = call_indirect fn(int) -> int cb(x)
//!   ret r
//! b2:
//!   ret 0
//! }
//! ```
//!
//! `marker` and `pruned_exit` are only accepted in trusted mode.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

use super::validate::validate;
use super::{
    BasicBlock, BinOp, Function, InstrId, InstrKind, Instruction, Operand, Param, Program,
    Signature, Type,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{line}:{col}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub message: String,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ParseOptions {
    /// Accept pass-inserted instructions (`marker`, `pruned_exit`).
    pub trusted: bool,
}

/// Parses and validates untrusted source.
pub fn parse_program(text: &str) -> Result<Program, ParseError> {
    parse_program_with(text, ParseOptions::default())
}

pub fn parse_program_with(text: &str, opts: ParseOptions) -> Result<Program, ParseError> {
    let tokens = lex(text)?;
    let mut parser = Parser {
        tokens,
        pos: 0,
        opts,
        next_source: 0,
        next_synthetic: 0,
        spans: HashMap::new(),
    };
    let program = parser.program()?;
    if let Some(v) = validate(&program).into_iter().next() {
        let (line, col) = v
            .instr
            .and_then(|id| parser.spans.get(&id).copied())
            .unwrap_or((0, 0));
        return Err(ParseError {
            line,
            col,
            message: v.message,
        });
    }
    Ok(program)
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    Str(String),
    Punct(&'static str),
    Newline,
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::Int(n) => write!(f, "`{n}`"),
            Tok::Str(s) => write!(f, "\"{s}\""),
            Tok::Punct(p) => write!(f, "`{p}`"),
            Tok::Newline => f.write_str("end of line"),
            Tok::Eof => f.write_str("end of input"),
        }
    }
}

struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

fn lex(text: &str) -> Result<Vec<Token>, ParseError> {
    let mut out = Vec::new();
    for (li, line) in text.lines().enumerate() {
        let line_no = li + 1;
        let chars: Vec<char> = line.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let col = i + 1;
            let err = |message: String| ParseError {
                line: line_no,
                col,
                message,
            };
            if c == '#' {
                break;
            }
            if c.is_whitespace() {
                i += 1;
                continue;
            }
            if c.is_ascii_alphabetic() || c == '_' {
                let start = i;
                while i < chars.len()
                    && (chars[i].is_ascii_alphanumeric() || chars[i] == '_' || chars[i] == '.')
                {
                    i += 1;
                }
                out.push(Token {
                    tok: Tok::Ident(chars[start..i].iter().collect()),
                    line: line_no,
                    col,
                });
                continue;
            }
            let negative_number =
                c == '-' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit());
            if c.is_ascii_digit() || negative_number {
                let start = i;
                i += 1;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
                let s: String = chars[start..i].iter().collect();
                let n = s
                    .parse::<i64>()
                    .map_err(|_| err(format!("integer literal `{s}` out of range")))?;
                out.push(Token {
                    tok: Tok::Int(n),
                    line: line_no,
                    col,
                });
                continue;
            }
            if c == '"' {
                let start = i + 1;
                i += 1;
                while i < chars.len() && chars[i] != '"' {
                    i += 1;
                }
                if i == chars.len() {
                    return Err(err("unterminated string".into()));
                }
                out.push(Token {
                    tok: Tok::Str(chars[start..i].iter().collect()),
                    line: line_no,
                    col,
                });
                i += 1;
                continue;
            }
            let punct = match c {
                '-' if chars.get(i + 1) == Some(&'>') => "->",
                '(' => "(",
                ')' => ")",
                '{' => "{",
                '}' => "}",
                ',' => ",",
                ':' => ":",
                '=' => "=",
                _ => return Err(err(format!("unexpected character `{c}`"))),
            };
            i += punct.len();
            out.push(Token {
                tok: Tok::Punct(punct),
                line: line_no,
                col,
            });
        }
        out.push(Token {
            tok: Tok::Newline,
            line: line_no,
            col: chars.len() + 1,
        });
    }
    let line = out.last().map_or(1, |t| t.line);
    out.push(Token {
        tok: Tok::Eof,
        line,
        col: 1,
    });
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    opts: ParseOptions,
    next_source: u32,
    next_synthetic: u32,
    spans: HashMap<InstrId, (usize, usize)>,
}

type PResult<T> = Result<T, ParseError>;

impl Parser {
    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        let i = (self.pos + k).min(self.tokens.len() - 1);
        &self.tokens[i].tok
    }

    fn here(&self) -> (usize, usize) {
        let t = &self.tokens[self.pos];
        (t.line, t.col)
    }

    fn bump(&mut self) -> Tok {
        let t = self.tokens[self.pos].tok.clone();
        if self.pos < self.tokens.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn error<T>(&self, message: impl Into<String>) -> PResult<T> {
        let (line, col) = self.here();
        Err(ParseError {
            line,
            col,
            message: message.into(),
        })
    }

    fn unexpected<T>(&self, wanted: &str) -> PResult<T> {
        self.error(format!("expected {wanted}, found {}", self.peek()))
    }

    fn eat_punct(&mut self, p: &str) -> bool {
        if matches!(self.peek(), Tok::Punct(q) if *q == p) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_punct(&mut self, p: &str) -> PResult<()> {
        if self.eat_punct(p) {
            Ok(())
        } else {
            self.unexpected(&format!("`{p}`"))
        }
    }

    fn ident(&mut self) -> PResult<String> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok(s)
            }
            _ => self.unexpected("identifier"),
        }
    }

    fn keyword(&mut self, kw: &str) -> PResult<()> {
        match self.peek() {
            Tok::Ident(s) if s == kw => {
                self.bump();
                Ok(())
            }
            _ => self.unexpected(&format!("`{kw}`")),
        }
    }

    fn int(&mut self) -> PResult<i64> {
        match self.peek().clone() {
            Tok::Int(n) => {
                self.bump();
                Ok(n)
            }
            _ => self.unexpected("integer"),
        }
    }

    fn skip_newlines(&mut self) {
        while matches!(self.peek(), Tok::Newline) {
            self.bump();
        }
    }

    fn end_of_statement(&mut self) -> PResult<()> {
        match self.peek() {
            Tok::Newline => {
                self.bump();
                Ok(())
            }
            Tok::Punct("}") | Tok::Eof => Ok(()),
            _ => self.unexpected("end of line"),
        }
    }

    fn program(&mut self) -> PResult<Program> {
        let mut functions = Vec::new();
        let mut entry = None;
        let mut declared_targets = Vec::new();
        loop {
            self.skip_newlines();
            match self.peek().clone() {
                Tok::Eof => break,
                Tok::Ident(kw) if kw == "func" => functions.push(self.function()?),
                Tok::Ident(kw) if kw == "entry" => {
                    self.bump();
                    if entry.is_some() {
                        return self.error("duplicate `entry` directive");
                    }
                    entry = Some(self.ident()?);
                    self.end_of_statement()?;
                }
                Tok::Ident(kw) if kw == "targets" => {
                    self.bump();
                    loop {
                        declared_targets.push(self.ident()?);
                        if !self.eat_punct(",") {
                            break;
                        }
                    }
                    self.end_of_statement()?;
                }
                _ => return self.unexpected("`func`, `entry` or `targets`"),
            }
        }
        Ok(Program {
            functions,
            entry: entry.unwrap_or_else(|| "main".to_string()),
            declared_targets,
        })
    }

    fn ty(&mut self) -> PResult<Type> {
        match self.peek().clone() {
            Tok::Ident(s) if s == "int" => {
                self.bump();
                Ok(Type::Int)
            }
            Tok::Ident(s) if s == "fn" => Ok(Type::fn_ptr(self.signature()?)),
            _ => self.unexpected("type"),
        }
    }

    fn ret_type(&mut self) -> PResult<Option<Type>> {
        if matches!(self.peek(), Tok::Ident(s) if s == "void") {
            self.bump();
            Ok(None)
        } else {
            self.ty().map(Some)
        }
    }

    fn signature(&mut self) -> PResult<Signature> {
        self.keyword("fn")?;
        self.expect_punct("(")?;
        let mut params = Vec::new();
        if !self.eat_punct(")") {
            loop {
                params.push(self.ty()?);
                if self.eat_punct(")") {
                    break;
                }
                self.expect_punct(",")?;
            }
        }
        self.expect_punct("->")?;
        let ret = self.ret_type()?;
        Ok(Signature { params, ret })
    }

    fn function(&mut self) -> PResult<Function> {
        self.keyword("func")?;
        let name = self.ident()?;
        self.expect_punct("(")?;
        let mut params = Vec::new();
        if !self.eat_punct(")") {
            loop {
                let pname = self.ident()?;
                self.expect_punct(":")?;
                let ty = self.ty()?;
                params.push(Param { name: pname, ty });
                if self.eat_punct(")") {
                    break;
                }
                self.expect_punct(",")?;
            }
        }
        self.expect_punct("->")?;
        let ret = self.ret_type()?;
        self.expect_punct("{")?;
        let mut blocks: Vec<BasicBlock> = Vec::new();
        loop {
            self.skip_newlines();
            if self.eat_punct("}") {
                break;
            }
            if matches!(self.peek(), Tok::Eof) {
                return self.unexpected("`}`");
            }
            if matches!(self.peek(), Tok::Ident(_)) && matches!(self.peek_at(1), Tok::Punct(":"))
            {
                let label = self.ident()?;
                self.bump();
                blocks.push(BasicBlock {
                    label,
                    instructions: Vec::new(),
                });
                continue;
            }
            let Some(block) = blocks.last_mut() else {
                return self.error("instruction outside of a labelled block");
            };
            let (line, col) = self.here();
            let kind = self.instruction()?;
            let id = if kind.is_synthetic() {
                self.next_synthetic += 1;
                InstrId::Synthetic(self.next_synthetic - 1)
            } else {
                self.next_source += 1;
                InstrId::Source(self.next_source - 1)
            };
            self.spans.insert(id, (line, col));
            block.instructions.push(Instruction { id, kind });
            self.end_of_statement()?;
        }
        Ok(Function {
            name,
            params,
            ret,
            blocks,
        })
    }

    fn operand(&mut self) -> PResult<Operand> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok(Operand::Value(s))
            }
            Tok::Int(n) => {
                self.bump();
                Ok(Operand::Imm(n))
            }
            _ => self.unexpected("value or integer"),
        }
    }

    fn args(&mut self) -> PResult<Vec<Operand>> {
        self.expect_punct("(")?;
        let mut args = Vec::new();
        if self.eat_punct(")") {
            return Ok(args);
        }
        loop {
            args.push(self.operand()?);
            if self.eat_punct(")") {
                return Ok(args);
            }
            self.expect_punct(",")?;
        }
    }

    fn call(&mut self, dst: Option<String>) -> PResult<InstrKind> {
        let kw = self.ident()?;
        match kw.as_str() {
            "call" => {
                let callee = self.ident()?;
                let args = self.args()?;
                Ok(InstrKind::Call { dst, callee, args })
            }
            "call_indirect" => {
                let signature = self.signature()?;
                let pointer = self.ident()?;
                let args = self.args()?;
                Ok(InstrKind::CallIndirect {
                    dst,
                    signature,
                    pointer,
                    args,
                })
            }
            _ => unreachable!("caller checked the keyword"),
        }
    }

    fn instruction(&mut self) -> PResult<InstrKind> {
        if matches!(self.peek_at(1), Tok::Punct("=")) {
            let dst = self.ident()?;
            self.bump();
            let op = match self.peek().clone() {
                Tok::Ident(s) => s,
                _ => return self.unexpected("instruction"),
            };
            return match op.as_str() {
                "const" => {
                    self.bump();
                    let value = self.int()?;
                    Ok(InstrKind::Const { dst, value })
                }
                "read_input" => {
                    self.bump();
                    Ok(InstrKind::ReadInput { dst })
                }
                "fnaddr" => {
                    self.bump();
                    let function = self.ident()?;
                    Ok(InstrKind::FnAddr { dst, function })
                }
                "call" | "call_indirect" => self.call(Some(dst)),
                other => match BinOp::from_mnemonic(other) {
                    Some(op) => {
                        self.bump();
                        let lhs = self.operand()?;
                        self.expect_punct(",")?;
                        let rhs = self.operand()?;
                        Ok(InstrKind::BinOp { dst, op, lhs, rhs })
                    }
                    None => self.error(format!("unknown operation `{other}`")),
                },
            };
        }
        let kw = match self.peek().clone() {
            Tok::Ident(s) => s,
            _ => return self.unexpected("instruction"),
        };
        match kw.as_str() {
            "call" | "call_indirect" => self.call(None),
            "br" => {
                self.bump();
                let cond = self.operand()?;
                self.expect_punct(",")?;
                let then_label = self.ident()?;
                self.expect_punct(",")?;
                let else_label = self.ident()?;
                Ok(InstrKind::Br {
                    cond,
                    then_label,
                    else_label,
                })
            }
            "jmp" => {
                self.bump();
                Ok(InstrKind::Jmp {
                    label: self.ident()?,
                })
            }
            "ret" => {
                self.bump();
                let value = match self.peek() {
                    Tok::Newline | Tok::Punct("}") | Tok::Eof => None,
                    _ => Some(self.operand()?),
                };
                Ok(InstrKind::Ret { value })
            }
            "exit" => {
                self.bump();
                let code = self.int()?;
                Ok(InstrKind::Exit {
                    code,
                    pruned: false,
                })
            }
            "target" => {
                self.bump();
                Ok(InstrKind::Target { id: self.ident()? })
            }
            "bug" => {
                self.bump();
                let id = self.ident()?;
                let kind = match self.peek().clone() {
                    Tok::Str(s) => {
                        self.bump();
                        Some(s)
                    }
                    _ => None,
                };
                Ok(InstrKind::Bug { id, kind })
            }
            "marker" | "pruned_exit" if !self.opts.trusted => self.error(format!(
                "`{kw}` is inserted by the analysis passes and is not allowed in source"
            )),
            "marker" => {
                self.bump();
                Ok(InstrKind::Marker)
            }
            "pruned_exit" => {
                self.bump();
                Ok(InstrKind::Exit {
                    code: 0,
                    pruned: true,
                })
            }
            other => self.error(format!("unknown instruction `{other}`")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_program() {
        let p = parse_program("func main() -> int { b0: v = const 0 \n ret v }").unwrap();
        assert_eq!(p.functions.len(), 1);
        assert_eq!(p.functions[0].blocks.len(), 1);
        assert_eq!(p.functions[0].blocks[0].instructions.len(), 2);
        assert_eq!(p.entry, "main");
    }

    #[test]
    fn missing_return_value() {
        let err = parse_program("func main() -> int { b0: ret }").unwrap_err();
        assert!(err.message.contains("return arity mismatch"), "{err}");
        assert_eq!(err.line, 1);
    }

    #[test]
    fn marker_rejected_unless_trusted() {
        let src = "func main() -> void {\nb0:\n  marker\n  ret\n}\n";
        let err = parse_program(src).unwrap_err();
        assert_eq!((err.line, err.col), (3, 3));
        let p = parse_program_with(src, ParseOptions { trusted: true }).unwrap();
        assert_eq!(
            p.functions[0].blocks[0].instructions[0].id,
            InstrId::Synthetic(0)
        );
        assert_eq!(
            p.functions[0].blocks[0].instructions[1].id,
            InstrId::Source(0)
        );
    }

    #[test]
    fn syntax_error_has_position() {
        let err = parse_program("func main() -> int {\nb0:\n  v = const\n  ret v\n}").unwrap_err();
        assert_eq!(err.line, 3);
        assert!(err.message.contains("expected integer"), "{err}");
    }

    #[test]
    fn structural_errors() {
        let dup_fn = "func main() -> void {\nb0:\n ret\n}\nfunc main() -> void {\nb0:\n ret\n}";
        assert!(parse_program(dup_fn)
            .unwrap_err()
            .message
            .contains("duplicate function"));
        let dup_block = "func main() -> void {\nb0:\n jmp b0\nb0:\n ret\n}";
        assert!(parse_program(dup_block)
            .unwrap_err()
            .message
            .contains("duplicate block"));
        let bad_callee = "func main() -> void {\nb0:\n call nope()\n ret\n}";
        assert!(parse_program(bad_callee)
            .unwrap_err()
            .message
            .contains("unknown function"));
        let bad_label = "func main() -> void {\nb0:\n jmp nowhere\n}";
        assert!(parse_program(bad_label)
            .unwrap_err()
            .message
            .contains("unknown label"));
    }

    #[test]
    fn indirect_pointer_type_mismatch() {
        let src = "\
func f(x: int) -> int {
b0:
  ret x
}
func main() -> int {
b0:
  p = fnaddr f
  r = call_indirect fn() -> int p()
  ret r
}";
        let err = parse_program(src).unwrap_err();
        assert_eq!(err.line, 8);
        assert!(err.message.contains("pointer"), "{err}");
    }

    #[test]
    fn three_functions_one_indirect_site() {
        // f and g share fn(int) -> int; h does not.
        let src = "\
func f(x: int) -> int {
b0:
  ret x
}
func g(x: int) -> int {
b0:
  y = add x, 1
  ret y
}
func main() -> int {
b0:
  v = read_input
  p = fnaddr g
  r = call_indirect fn(int) -> int p(v)
  ret r
}";
        let p = parse_program(src).unwrap();
        let sig = p
            .instructions()
            .find_map(|(_, i)| match &i.kind {
                InstrKind::CallIndirect { signature, .. } => Some(signature.clone()),
                _ => None,
            })
            .unwrap();
        let matching: Vec<&str> = p
            .functions
            .iter()
            .filter(|f| f.signature() == sig)
            .map(|f| f.name.as_str())
            .collect();
        assert_eq!(matching, ["f", "g"]);
    }

    #[test]
    fn directives() {
        let src = "entry start\ntargets t1, t2\nfunc start() -> void {\nb0:\n target t1\n target t2\n ret\n}";
        let p = parse_program(src).unwrap();
        assert_eq!(p.entry, "start");
        assert_eq!(p.declared_targets, ["t1", "t2"]);
    }
}
