//! Text format for IR programs (`.uir` files).
//!
//! ```text
//! maj[a, b, c] := {
//!   t :=p dup[a]
//!   x :=p CX[b](t)
//!   r0 :=p dup[b] if !x
//!   r1 :=p dup[c] if x
//!   r :=p select[x](r0, r1)
//!   :=p forget(x)
//! } > r
//! ```
//!
//! Conserved arguments sit in brackets, consumed arguments in parentheses.
//! Classical variables are prefixed with `$`, garbage variables with `%`,
//! quantum variables are bare. `:=p`, `:=q`, `:=m` declare the statement
//! effect. `#` starts a line comment. Statements are separated by newlines
//! or `;`. Classical computations are written as infix expressions
//! (`$j :=p $n - 1 - $i`). Mode suffixes are `^adj`, `^G` and `^O`;
//! structural builtins spell their inner adjoint with a dedicated name
//! (`undup`, `distribute`, `unnew_0`, `uncat_n`, `undispose`).
//!
//! `parse_program` followed by [`print_program`] is the identity on
//! canonically formatted sources, and `print_program` output always
//! re-parses to an equal program.

use std::collections::BTreeMap;
use std::fmt;

use unfab_core::ir::{
    normalize_condition, Angle, Atom, BinDir, CBinOp, CExpr, Effect, FuncName, FunctionDef,
    Literal, Mode, OpTarget, Operation, Param, Program, Statement, Var, VarKind,
};

/// A position in the source text, 1-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SourceSpan {
    pub line: u32,
    pub col: u32,
}

impl fmt::Display for SourceSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

/// A syntax error with its location.
#[derive(Clone, Debug, thiserror::Error, PartialEq, Eq)]
#[error("{span}: {message}")]
pub struct ParseError {
    pub message: String,
    pub span: SourceSpan,
}

/// Parse result: the program plus source spans for diagnostics.
#[derive(Clone, Debug)]
pub struct ParsedProgram {
    pub program: Program,
    /// Span of each statement, keyed by (function display name, statement id).
    pub stmt_spans: BTreeMap<(String, u64), SourceSpan>,
    /// Span of each function header.
    pub func_spans: BTreeMap<String, SourceSpan>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Tok {
    Ident(String),
    CVar(String),
    GVar(String),
    Int(i64),
    Assign,
    Colon,
    Comma,
    Semi,
    Newline,
    LBrace,
    RBrace,
    LBrack,
    RBrack,
    LParen,
    RParen,
    Gt,
    Bang,
    Amp,
    Caret,
    Plus,
    Minus,
    Star,
    EqEq,
    NeEq,
    Lt,
    Le,
    Ge,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::CVar(s) => format!("classical variable `${s}`"),
            Tok::GVar(s) => format!("garbage variable `%{s}`"),
            Tok::Int(v) => format!("integer `{v}`"),
            Tok::Assign => "`:=`".into(),
            Tok::Colon => "`:`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Semi => "`;`".into(),
            Tok::Newline => "end of line".into(),
            Tok::LBrace => "`{`".into(),
            Tok::RBrace => "`}`".into(),
            Tok::LBrack => "`[`".into(),
            Tok::RBrack => "`]`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Gt => "`>`".into(),
            Tok::Bang => "`!`".into(),
            Tok::Amp => "`&`".into(),
            Tok::Caret => "`^`".into(),
            Tok::Plus => "`+`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Star => "`*`".into(),
            Tok::EqEq => "`==`".into(),
            Tok::NeEq => "`!=`".into(),
            Tok::Lt => "`<`".into(),
            Tok::Le => "`<=`".into(),
            Tok::Ge => "`>=`".into(),
        }
    }
}

fn lex(src: &str) -> Result<Vec<(Tok, SourceSpan)>, ParseError> {
    let mut toks = Vec::new();
    let mut line: u32 = 1;
    let mut col: u32 = 1;
    let chars: Vec<char> = src.chars().collect();
    let mut i = 0usize;
    let err = |m: String, line: u32, col: u32| ParseError {
        message: m,
        span: SourceSpan { line, col },
    };
    while i < chars.len() {
        let c = chars[i];
        let span = SourceSpan { line, col };
        let adv = |i: &mut usize, col: &mut u32| {
            *i += 1;
            *col += 1;
        };
        match c {
            '\n' => {
                toks.push((Tok::Newline, span));
                i += 1;
                line += 1;
                col = 1;
            }
            ' ' | '\t' | '\r' => adv(&mut i, &mut col),
            '#' => {
                while i < chars.len() && chars[i] != '\n' {
                    adv(&mut i, &mut col);
                }
            }
            '{' => {
                toks.push((Tok::LBrace, span));
                adv(&mut i, &mut col)
            }
            '}' => {
                toks.push((Tok::RBrace, span));
                adv(&mut i, &mut col)
            }
            '[' => {
                toks.push((Tok::LBrack, span));
                adv(&mut i, &mut col)
            }
            ']' => {
                toks.push((Tok::RBrack, span));
                adv(&mut i, &mut col)
            }
            '(' => {
                toks.push((Tok::LParen, span));
                adv(&mut i, &mut col)
            }
            ')' => {
                toks.push((Tok::RParen, span));
                adv(&mut i, &mut col)
            }
            ',' => {
                toks.push((Tok::Comma, span));
                adv(&mut i, &mut col)
            }
            ';' => {
                toks.push((Tok::Semi, span));
                adv(&mut i, &mut col)
            }
            '&' => {
                toks.push((Tok::Amp, span));
                adv(&mut i, &mut col)
            }
            '^' => {
                toks.push((Tok::Caret, span));
                adv(&mut i, &mut col)
            }
            '+' => {
                toks.push((Tok::Plus, span));
                adv(&mut i, &mut col)
            }
            '-' => {
                toks.push((Tok::Minus, span));
                adv(&mut i, &mut col)
            }
            '*' => {
                toks.push((Tok::Star, span));
                adv(&mut i, &mut col)
            }
            ':' => {
                if chars.get(i + 1) == Some(&'=') {
                    toks.push((Tok::Assign, span));
                    i += 2;
                    col += 2;
                } else {
                    toks.push((Tok::Colon, span));
                    adv(&mut i, &mut col)
                }
            }
            '=' => {
                if chars.get(i + 1) == Some(&'=') {
                    toks.push((Tok::EqEq, span));
                    i += 2;
                    col += 2;
                } else {
                    return Err(err("stray `=` (did you mean `:=` or `==`?)".into(), line, col));
                }
            }
            '!' => {
                if chars.get(i + 1) == Some(&'=') {
                    toks.push((Tok::NeEq, span));
                    i += 2;
                    col += 2;
                } else {
                    toks.push((Tok::Bang, span));
                    adv(&mut i, &mut col)
                }
            }
            '<' => {
                if chars.get(i + 1) == Some(&'=') {
                    toks.push((Tok::Le, span));
                    i += 2;
                    col += 2;
                } else {
                    toks.push((Tok::Lt, span));
                    adv(&mut i, &mut col)
                }
            }
            '>' => {
                if chars.get(i + 1) == Some(&'=') {
                    toks.push((Tok::Ge, span));
                    i += 2;
                    col += 2;
                } else {
                    toks.push((Tok::Gt, span));
                    adv(&mut i, &mut col)
                }
            }
            '$' | '%' => {
                let sigil = c;
                adv(&mut i, &mut col);
                let start = i;
                while i < chars.len() && is_ident_char(chars[i], i > start) {
                    adv(&mut i, &mut col);
                }
                if start == i {
                    return Err(err(format!("`{sigil}` must be followed by a name"), line, col));
                }
                let name: String = chars[start..i].iter().collect();
                let tok = if sigil == '$' { Tok::CVar(name) } else { Tok::GVar(name) };
                toks.push((tok, span));
            }
            c if c.is_ascii_digit() => {
                let start = i;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    adv(&mut i, &mut col);
                }
                let text: String = chars[start..i].iter().collect();
                let v: i64 = text
                    .parse()
                    .map_err(|_| err(format!("integer out of range: {text}"), line, col))?;
                toks.push((Tok::Int(v), span));
            }
            c if is_ident_char(c, false) => {
                let start = i;
                while i < chars.len() && is_ident_char(chars[i], true) {
                    adv(&mut i, &mut col);
                }
                let mut name: String = chars[start..i].iter().collect();
                // Phase names embed an angle: keep consuming the angle
                // characters (`-`, `*`, `/`, digits, `pi`) that the plain
                // identifier rule stops at.
                if name.starts_with("phase_") {
                    while i < chars.len()
                        && matches!(chars[i], '-' | '*' | '/' | '0'..='9' | 'p' | 'i')
                    {
                        name.push(chars[i]);
                        adv(&mut i, &mut col);
                    }
                }
                toks.push((Tok::Ident(name), span));
            }
            other => return Err(err(format!("unexpected character `{other}`"), line, col)),
        }
    }
    Ok(toks)
}

fn is_ident_char(c: char, continuation: bool) -> bool {
    c.is_ascii_alphabetic()
        || c == '_'
        || (continuation && (c.is_ascii_digit() || c == '\''))
}

struct Parser {
    toks: Vec<(Tok, SourceSpan)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn span(&self) -> SourceSpan {
        self.toks
            .get(self.pos)
            .or_else(|| self.toks.last())
            .map(|(_, s)| *s)
            .unwrap_or(SourceSpan { line: 1, col: 1 })
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(t, _)| t.clone());
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, message: impl Into<String>) -> ParseError {
        ParseError { message: message.into(), span: self.span() }
    }

    fn expect(&mut self, want: Tok) -> Result<(), ParseError> {
        match self.peek() {
            Some(t) if *t == want => {
                self.pos += 1;
                Ok(())
            }
            Some(t) => Err(self.error(format!("expected {}, found {}", want.describe(), t.describe()))),
            None => Err(self.error(format!("expected {}, found end of input", want.describe()))),
        }
    }

    fn skip_separators(&mut self) {
        while matches!(self.peek(), Some(Tok::Newline) | Some(Tok::Semi)) {
            self.pos += 1;
        }
    }

    fn skip_newlines(&mut self) {
        while matches!(self.peek(), Some(Tok::Newline)) {
            self.pos += 1;
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, ParseError> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            Some(t) => Err(self.error(format!("expected {what}, found {}", t.describe()))),
            None => Err(self.error(format!("expected {what}, found end of input"))),
        }
    }

    /// Parses mode suffixes after a name: `^adj`, `^G`, `^O` in canonical
    /// order (inner adjoint, garbage, outer adjoint).
    fn mode_suffixes(&mut self, inner_from_alias: bool) -> Result<Mode, ParseError> {
        let mut mode = Mode { inner_adjoint: inner_from_alias, ..Mode::PLAIN };
        while matches!(self.peek(), Some(Tok::Caret)) {
            self.pos += 1;
            let word = self.ident("mode suffix (`adj`, `G` or `O`)")?;
            match word.as_str() {
                "adj" => {
                    if mode.garbage {
                        if mode.outer_adjoint {
                            return Err(self.error("duplicate `^adj` suffix"));
                        }
                        mode.outer_adjoint = true;
                    } else {
                        if mode.inner_adjoint {
                            return Err(self.error("duplicate `^adj` suffix"));
                        }
                        mode.inner_adjoint = true;
                    }
                }
                "G" => {
                    if mode.garbage {
                        return Err(self.error("duplicate `^G` suffix"));
                    }
                    mode.garbage = true;
                }
                "O" => {
                    if !mode.is_plain() {
                        return Err(self.error("`^O` cannot combine with other suffixes"));
                    }
                    mode.classical_only = true;
                }
                other => return Err(self.error(format!("unknown mode suffix `^{other}`"))),
            }
        }
        Ok(mode)
    }

    fn var(&mut self) -> Result<Var, ParseError> {
        match self.peek().cloned() {
            Some(Tok::Ident(s)) => {
                self.pos += 1;
                Ok(Var::q(s))
            }
            Some(Tok::CVar(s)) => {
                self.pos += 1;
                Ok(Var::c(s))
            }
            Some(Tok::GVar(s)) => {
                self.pos += 1;
                Ok(Var::g(s))
            }
            Some(t) => Err(self.error(format!("expected variable, found {}", t.describe()))),
            None => Err(self.error("expected variable, found end of input")),
        }
    }

    fn var_list(&mut self) -> Result<Vec<Var>, ParseError> {
        let mut out = vec![self.var()?];
        while matches!(self.peek(), Some(Tok::Comma)) {
            self.pos += 1;
            out.push(self.var()?);
        }
        Ok(out)
    }

    fn param_list(&mut self, end: Tok) -> Result<Vec<Param>, ParseError> {
        let mut out = Vec::new();
        if self.peek() == Some(&end) {
            return Ok(out);
        }
        loop {
            let var = self.var()?;
            let mut width = None;
            if matches!(self.peek(), Some(Tok::Colon)) {
                self.pos += 1;
                if var.kind != VarKind::Quantum {
                    return Err(self.error("only quantum parameters carry a width"));
                }
                width = Some(self.cexpr()?);
            }
            out.push(Param { var, width });
            if matches!(self.peek(), Some(Tok::Comma)) {
                self.pos += 1;
            } else {
                break;
            }
        }
        Ok(out)
    }

    fn atom(&mut self) -> Result<Atom, ParseError> {
        match self.peek().cloned() {
            Some(Tok::Int(v)) => {
                self.pos += 1;
                Ok(Atom::Int(v))
            }
            Some(Tok::Minus) => {
                self.pos += 1;
                match self.next() {
                    Some(Tok::Int(v)) => Ok(Atom::Int(-v)),
                    _ => Err(self.error("expected integer after `-`")),
                }
            }
            _ => Ok(Atom::Var(self.var()?)),
        }
    }

    fn cexpr(&mut self) -> Result<CExpr, ParseError> {
        let lhs = self.cexpr_addsub()?;
        let op = match self.peek() {
            Some(Tok::EqEq) => Some(CBinOp::Eq),
            Some(Tok::NeEq) => Some(CBinOp::Ne),
            Some(Tok::Lt) => Some(CBinOp::Lt),
            Some(Tok::Le) => Some(CBinOp::Le),
            Some(Tok::Gt) => Some(CBinOp::Gt),
            Some(Tok::Ge) => Some(CBinOp::Ge),
            _ => None,
        };
        if let Some(op) = op {
            self.pos += 1;
            let rhs = self.cexpr_addsub()?;
            return Ok(CExpr::bin(op, lhs, rhs));
        }
        Ok(lhs)
    }

    fn cexpr_addsub(&mut self) -> Result<CExpr, ParseError> {
        let mut e = self.cexpr_mul()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Plus) => CBinOp::Add,
                Some(Tok::Minus) => CBinOp::Sub,
                _ => break,
            };
            self.pos += 1;
            let rhs = self.cexpr_mul()?;
            e = CExpr::bin(op, e, rhs);
        }
        Ok(e)
    }

    fn cexpr_mul(&mut self) -> Result<CExpr, ParseError> {
        let mut e = self.cexpr_atom()?;
        while matches!(self.peek(), Some(Tok::Star)) {
            self.pos += 1;
            let rhs = self.cexpr_atom()?;
            e = CExpr::bin(CBinOp::Mul, e, rhs);
        }
        Ok(e)
    }

    fn cexpr_atom(&mut self) -> Result<CExpr, ParseError> {
        match self.peek().cloned() {
            Some(Tok::Int(v)) => {
                self.pos += 1;
                Ok(CExpr::Int(v))
            }
            Some(Tok::Minus) => {
                self.pos += 1;
                let inner = self.cexpr_atom()?;
                match inner {
                    CExpr::Int(v) => Ok(CExpr::Int(-v)),
                    other => Ok(CExpr::bin(CBinOp::Sub, CExpr::Int(0), other)),
                }
            }
            Some(Tok::CVar(n)) => {
                self.pos += 1;
                Ok(CExpr::var(n))
            }
            Some(Tok::Ident(w)) if w == "true" => {
                self.pos += 1;
                Ok(CExpr::Bool(true))
            }
            Some(Tok::Ident(w)) if w == "false" => {
                self.pos += 1;
                Ok(CExpr::Bool(false))
            }
            Some(Tok::LParen) => {
                self.pos += 1;
                let e = self.cexpr()?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            Some(t) => Err(self.error(format!(
                "expected classical expression, found {}",
                t.describe()
            ))),
            None => Err(self.error("expected classical expression, found end of input")),
        }
    }

    fn condition(&mut self) -> Result<Vec<Literal>, ParseError> {
        let mut lits = Vec::new();
        loop {
            let negated = if matches!(self.peek(), Some(Tok::Bang)) {
                self.pos += 1;
                true
            } else {
                false
            };
            let var = self.var()?;
            if var.kind == VarKind::Garbage {
                return Err(self.error("garbage variables cannot appear in conditions"));
            }
            lits.push(Literal { var, negated });
            if matches!(self.peek(), Some(Tok::Amp)) {
                self.pos += 1;
            } else {
                break;
            }
        }
        normalize_condition(&mut lits);
        Ok(lits)
    }

    /// Resolves an operation name (with alias handling) to a target and the
    /// inner-adjoint flag implied by the alias.
    fn resolve_op_name(&self, name: &str) -> Result<(OpTarget, bool), ParseError> {
        let t = |t| Ok((t, false));
        let ta = |t| Ok((t, true));
        match name {
            "new_0" => t(OpTarget::New { one: false }),
            "new_1" => t(OpTarget::New { one: true }),
            "unnew_0" => ta(OpTarget::New { one: false }),
            "unnew_1" => ta(OpTarget::New { one: true }),
            "X" => t(OpTarget::X),
            "H" => t(OpTarget::H),
            "CX" => t(OpTarget::CX),
            "measure" => t(OpTarget::Measure),
            "forget" => t(OpTarget::Forget),
            "dispose" => t(OpTarget::Dispose),
            "undispose" => ta(OpTarget::Dispose),
            "dup" => t(OpTarget::Dup),
            "undup" => ta(OpTarget::Dup),
            "select" => t(OpTarget::Select),
            "distribute" => ta(OpTarget::Select),
            "if" | "true" | "false" => {
                Err(self.error(format!("`{name}` is reserved and cannot name an operation")))
            }
            _ => {
                if let Some(rest) = name.strip_prefix("cat_") {
                    let n: usize = rest
                        .parse()
                        .map_err(|_| self.error(format!("bad arity in `{name}`")))?;
                    return t(OpTarget::Cat { n });
                }
                if let Some(rest) = name.strip_prefix("uncat_") {
                    let n: usize = rest
                        .parse()
                        .map_err(|_| self.error(format!("bad arity in `{name}`")))?;
                    return ta(OpTarget::Cat { n });
                }
                if let Some(rest) = name.strip_prefix("phase_") {
                    let angle = parse_angle(rest)
                        .ok_or_else(|| self.error(format!("bad angle in `{name}`")))?;
                    return t(OpTarget::Phase(angle));
                }
                t(OpTarget::Call(name.to_string()))
            }
        }
    }

    fn statement(&mut self, fun: &mut FunctionDef) -> Result<(Statement, SourceSpan), ParseError> {
        let span = self.span();
        let lhs = if matches!(self.peek(), Some(Tok::Assign)) {
            Vec::new()
        } else {
            self.var_list()?
        };
        self.expect(Tok::Assign)?;
        let effect = match self.ident("effect letter `p`, `q` or `m`")?.as_str() {
            "p" => Effect::Pure,
            "q" => Effect::Quantum,
            "m" => Effect::Measure,
            other => return Err(self.error(format!("unknown effect `{other}`"))),
        };
        let (op, conserved, consumed) = match self.peek() {
            Some(Tok::CVar(_)) | Some(Tok::Int(_)) | Some(Tok::LParen) | Some(Tok::Minus) => {
                let e = self.cexpr()?;
                (Operation::plain(OpTarget::Classical(e)), Vec::new(), Vec::new())
            }
            Some(Tok::Ident(w)) if w == "true" || w == "false" => {
                let e = self.cexpr()?;
                (Operation::plain(OpTarget::Classical(e)), Vec::new(), Vec::new())
            }
            _ => {
                let name = self.ident("operation name")?;
                let (target, inner) = self.resolve_op_name(&name)?;
                let mode = self.mode_suffixes(inner)?;
                mode.validate().map_err(|e| self.error(e.message.clone()))?;
                let mut conserved = Vec::new();
                if matches!(self.peek(), Some(Tok::LBrack)) {
                    self.pos += 1;
                    if !matches!(self.peek(), Some(Tok::RBrack)) {
                        conserved.push(self.atom()?);
                        while matches!(self.peek(), Some(Tok::Comma)) {
                            self.pos += 1;
                            conserved.push(self.atom()?);
                        }
                    }
                    self.expect(Tok::RBrack)?;
                }
                let mut consumed = Vec::new();
                if matches!(self.peek(), Some(Tok::LParen)) {
                    self.pos += 1;
                    if !matches!(self.peek(), Some(Tok::RParen)) {
                        consumed = self.var_list()?;
                    }
                    self.expect(Tok::RParen)?;
                }
                (Operation::with_mode(target, mode), conserved, consumed)
            }
        };
        let mut condition = Vec::new();
        if let Some(Tok::Ident(w)) = self.peek() {
            if w == "if" {
                self.pos += 1;
                condition = self.condition()?;
            }
        }
        let (produced_classical, produced): (Vec<Var>, Vec<Var>) =
            lhs.into_iter().partition(|v| v.kind == VarKind::Classical);
        Ok((
            Statement {
                id: fun.fresh_stmt_id(),
                produced_classical,
                produced,
                effect,
                op,
                conserved,
                consumed,
                condition,
                pair: None,
            },
            span,
        ))
    }

    fn function(
        &mut self,
    ) -> Result<(FunctionDef, SourceSpan, Vec<(u64, SourceSpan)>), ParseError> {
        let span = self.span();
        let base = self.ident("function name")?;
        if base == "if" || base == "true" || base == "false" {
            return Err(self.error(format!("`{base}` is reserved and cannot name a function")));
        }
        let mode = self.mode_suffixes(false)?;
        mode.validate().map_err(|e| self.error(e.message.clone()))?;
        let name = FuncName::with_mode(base, mode);
        let mut fun = FunctionDef::new(name.clone());
        if matches!(self.peek(), Some(Tok::LBrack)) {
            self.pos += 1;
            fun.conserved_params = self.param_list(Tok::RBrack)?;
            self.expect(Tok::RBrack)?;
        }
        if matches!(self.peek(), Some(Tok::LParen)) {
            self.pos += 1;
            fun.consumed_params = self.param_list(Tok::RParen)?;
            self.expect(Tok::RParen)?;
        }
        self.expect(Tok::Assign)?;
        self.skip_newlines();
        self.expect(Tok::LBrace)?;
        let mut spans = Vec::new();
        loop {
            self.skip_separators();
            if matches!(self.peek(), Some(Tok::RBrace)) {
                self.pos += 1;
                break;
            }
            if self.peek().is_none() {
                return Err(self.error("unterminated function body (missing `}`)"));
            }
            let (stmt, sspan) = self.statement(&mut fun)?;
            spans.push((stmt.id.0, sspan));
            fun.body.push(stmt);
        }
        if matches!(self.peek(), Some(Tok::Gt)) {
            self.pos += 1;
            fun.returned = self.var_list()?;
        }
        // Identify the bin variable implied by a garbage-mode name.
        if name.mode.produces_bin() {
            let bins: Vec<&Var> =
                fun.returned.iter().filter(|v| v.kind == VarKind::Garbage).collect();
            match bins.as_slice() {
                [b] => fun.bin = Some(((*b).clone(), BinDir::Out)),
                _ => {
                    return Err(self.error(format!(
                        "`{name}` must return exactly one garbage bin variable"
                    )))
                }
            }
        } else if name.mode.consumes_bin() {
            let bins: Vec<&Var> = fun
                .consumed_params
                .iter()
                .map(|p| &p.var)
                .filter(|v| v.kind == VarKind::Garbage)
                .collect();
            match bins.as_slice() {
                [b] => fun.bin = Some(((*b).clone(), BinDir::In)),
                _ => {
                    return Err(self.error(format!(
                        "`{name}` must consume exactly one garbage bin variable"
                    )))
                }
            }
        }
        Ok((fun, span, spans))
    }
}

/// Parses a whole source file.
pub fn parse_program(src: &str) -> Result<ParsedProgram, ParseError> {
    let toks = lex(src)?;
    let mut p = Parser { toks, pos: 0 };
    let mut program = Program::new();
    let mut stmt_spans = BTreeMap::new();
    let mut func_spans = BTreeMap::new();
    loop {
        p.skip_separators();
        if p.peek().is_none() {
            break;
        }
        let (fun, span, spans) = p.function()?;
        let fname = fun.name.to_string();
        func_spans.insert(fname.clone(), span);
        for (id, s) in spans {
            stmt_spans.insert((fname.clone(), id), s);
        }
        program
            .add_function(fun)
            .map_err(|e| ParseError { message: e.message, span })?;
    }
    Ok(ParsedProgram { program, stmt_spans, func_spans })
}

fn parse_angle(s: &str) -> Option<Angle> {
    if s == "0" {
        return Some(Angle::new(0, 1));
    }
    let (neg, rest) = match s.strip_prefix('-') {
        Some(r) => (true, r),
        None => (false, s),
    };
    let (num_text, rest) = match rest.find("pi") {
        Some(0) => ("1", &rest[2..]),
        Some(idx) => {
            let head = &rest[..idx];
            let head = head.strip_suffix('*')?;
            (head, &rest[idx + 2..])
        }
        None => return None,
    };
    let num: i64 = num_text.parse().ok()?;
    let den: i64 = match rest.strip_prefix('/') {
        Some(d) => d.parse().ok()?,
        None if rest.is_empty() => 1,
        None => return None,
    };
    Some(Angle::new(if neg { -num } else { num }, den))
}

fn prec(op: CBinOp) -> u8 {
    match op {
        CBinOp::Eq | CBinOp::Ne | CBinOp::Lt | CBinOp::Le | CBinOp::Gt | CBinOp::Ge => 1,
        CBinOp::Add | CBinOp::Sub => 2,
        CBinOp::Mul => 3,
    }
}

fn print_cexpr(e: &CExpr, min_prec: u8, out: &mut String) {
    match e {
        CExpr::Int(v) => out.push_str(&v.to_string()),
        CExpr::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        CExpr::Var(n) => {
            out.push('$');
            out.push_str(n);
        }
        CExpr::Bin(op, a, b) => {
            let p = prec(*op);
            let parens = p < min_prec;
            if parens {
                out.push('(');
            }
            print_cexpr(a, p, out);
            out.push(' ');
            out.push_str(op.symbol());
            out.push(' ');
            print_cexpr(b, p + 1, out);
            if parens {
                out.push(')');
            }
        }
    }
}

/// Prints one statement in canonical form (no trailing newline).
pub fn print_statement(s: &Statement) -> String {
    let mut out = String::new();
    let lhs: Vec<String> = s
        .produced_classical
        .iter()
        .chain(s.produced.iter())
        .map(|v| v.to_string())
        .collect();
    if !lhs.is_empty() {
        out.push_str(&lhs.join(", "));
        out.push(' ');
    }
    out.push_str(":=");
    out.push(s.effect.letter());
    out.push(' ');
    match &s.op.target {
        OpTarget::Classical(e) => print_cexpr(e, 0, &mut out),
        _ => {
            out.push_str(&s.op.display_name());
            if !s.conserved.is_empty() {
                out.push('[');
                let parts: Vec<String> = s.conserved.iter().map(|a| a.to_string()).collect();
                out.push_str(&parts.join(", "));
                out.push(']');
            }
            if !s.consumed.is_empty() {
                out.push('(');
                let parts: Vec<String> = s.consumed.iter().map(|v| v.to_string()).collect();
                out.push_str(&parts.join(", "));
                out.push(')');
            }
        }
    }
    if !s.condition.is_empty() {
        out.push_str(" if ");
        let parts: Vec<String> = s.condition.iter().map(|l| l.to_string()).collect();
        out.push_str(&parts.join(" & "));
    }
    out
}

fn print_param(p: &Param) -> String {
    match &p.width {
        None => p.var.to_string(),
        Some(w) => {
            let mut out = format!("{}: ", p.var);
            print_cexpr(w, 0, &mut out);
            out
        }
    }
}

/// Prints one function in canonical form.
pub fn print_function(f: &FunctionDef) -> String {
    let mut out = String::new();
    out.push_str(&f.name.to_string());
    if !f.conserved_params.is_empty() {
        out.push('[');
        let parts: Vec<String> = f.conserved_params.iter().map(print_param).collect();
        out.push_str(&parts.join(", "));
        out.push(']');
    }
    if !f.consumed_params.is_empty() {
        out.push('(');
        let parts: Vec<String> = f.consumed_params.iter().map(print_param).collect();
        out.push_str(&parts.join(", "));
        out.push(')');
    }
    out.push_str(" := {\n");
    for s in &f.body {
        out.push_str("  ");
        out.push_str(&print_statement(s));
        out.push('\n');
    }
    out.push('}');
    if !f.returned.is_empty() {
        out.push_str(" > ");
        let parts: Vec<String> = f.returned.iter().map(|v| v.to_string()).collect();
        out.push_str(&parts.join(", "));
    }
    out.push('\n');
    out
}

/// Prints a whole program in canonical form; functions appear in definition
/// order separated by blank lines. The output re-parses to an equal program.
pub fn print_program(p: &Program) -> String {
    let parts: Vec<String> = p.functions().map(print_function).collect();
    parts.join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    const MAJ: &str = "\
# Majority of three wires, with a declaratively forgotten scratch bit.
maj[a, b, c] := {
  t :=p dup[a]
  x :=p CX[b](t)
  r0 :=p dup[b] if !x
  r1 :=p dup[c] if x
  r :=p select[x](r0, r1)
  :=p forget(x)
} > r
";

    #[test]
    fn parses_and_reprints_maj() {
        let parsed = parse_program(MAJ).unwrap();
        let f = parsed.program.get(&FuncName::plain("maj")).unwrap();
        assert_eq!(f.conserved_params.len(), 3);
        assert_eq!(f.body.len(), 6);
        assert_eq!(f.returned, vec![Var::q("r")]);
        let printed = print_program(&parsed.program);
        let reparsed = parse_program(&printed).unwrap();
        assert_eq!(reparsed.program, parsed.program);
    }

    #[test]
    fn statement_spans_point_at_lines() {
        let parsed = parse_program(MAJ).unwrap();
        let span = parsed.stmt_spans[&("maj".to_string(), 0)];
        assert_eq!(span.line, 3);
    }

    #[test]
    fn parses_classical_expressions_with_precedence() {
        let src = "f[$n, $i] := {\n  $j :=p $n - 1 - $i\n  $k :=p ($n - 1) * $i\n  $z :=p $n == 0\n}\n";
        let parsed = parse_program(src).unwrap();
        let printed = print_program(&parsed.program);
        assert!(printed.contains("$j :=p $n - 1 - $i"));
        assert!(printed.contains("$k :=p ($n - 1) * $i"));
        assert!(printed.contains("$z :=p $n == 0"));
        let reparsed = parse_program(&printed).unwrap();
        assert_eq!(reparsed.program, parsed.program);
    }

    #[test]
    fn parses_modes_and_aliases() {
        let src = "g[a](b, c) := {\n  d :=p undup^G[a](b)\n  e :=p dup^G^adj[a](c, %x)\n} > d, e\n";
        // %x is undefined and dup^G^adj would need a bin; syntax-level parse
        // still succeeds (semantic checks are the verifier's job).
        let parsed = parse_program(src).unwrap();
        let f = parsed.program.get(&FuncName::plain("g")).unwrap();
        assert_eq!(f.body[0].op.display_name(), "undup^G");
        assert_eq!(f.body[1].op.display_name(), "dup^G^adj");
        let printed = print_program(&parsed.program);
        let reparsed = parse_program(&printed).unwrap();
        assert_eq!(reparsed.program, parsed.program);
    }

    #[test]
    fn parses_phase_angles() {
        for (text, num, den) in [
            ("phase_pi", 1i64, 1i64),
            ("phase_-pi", -1, 1),
            ("phase_pi/4", 1, 4),
            ("phase_-pi/2", -1, 2),
            ("phase_3*pi/4", 3, 4),
            ("phase_0", 0, 1),
        ] {
            let src = format!("z[a] := {{\n  :=q {text} if a\n}}\n");
            let parsed = parse_program(&src).unwrap();
            let f = parsed.program.get(&FuncName::plain("z")).unwrap();
            match &f.body[0].op.target {
                OpTarget::Phase(a) => assert_eq!((a.num, a.den), (num, den), "{text}"),
                other => panic!("expected phase, got {other:?}"),
            }
            let printed = print_program(&parsed.program);
            assert!(printed.contains(text), "{printed} should contain {text}");
        }
    }

    #[test]
    fn parses_garbage_function_signatures() {
        let src = "f^G[a](b) := {\n  c :=p CX[a](b)\n  :=p dispose(c)\n} > %bin\n";
        let parsed = parse_program(src).unwrap();
        let f = parsed
            .program
            .get(&FuncName::with_mode("f", Mode::garbage()))
            .unwrap();
        assert_eq!(f.bin, Some((Var::g("bin"), BinDir::Out)));
        let src2 = "f^G^adj[a](b, %bin) := {\n  c :=p undispose()\n  :=p undup[a](c)\n} > b\n";
        // Not semantically valid (b unconsumed etc.), but the signature and
        // bin direction must parse.
        let parsed2 = parse_program(src2).unwrap();
        let name = FuncName::with_mode("f", Mode { garbage: true, outer_adjoint: true, ..Mode::PLAIN });
        let f2 = parsed2.program.get(&name).unwrap();
        assert_eq!(f2.bin, Some((Var::g("bin"), BinDir::In)));
    }

    #[test]
    fn rejects_syntax_errors_with_spans() {
        let bad = "f[a] := {\n  t := dup[a]\n}\n";
        let err = parse_program(bad).unwrap_err();
        assert_eq!(err.span.line, 2);
        let bad2 = "f[a] := {\n  t :=p dup[a\n}\n";
        assert!(parse_program(bad2).is_err());
        let bad3 = "f[a] = { }\n";
        assert!(parse_program(bad3).is_err());
    }

    #[test]
    fn conditions_are_normalized() {
        let src = "f[a, b](x) := {\n  y :=p X(x) if b & a & b\n} > y\n";
        let parsed = parse_program(src).unwrap();
        let f = parsed.program.get(&FuncName::plain("f")).unwrap();
        assert_eq!(f.body[0].condition.len(), 2);
        let printed = print_program(&parsed.program);
        assert!(printed.contains("if a & b"));
    }

    #[test]
    fn width_annotations_roundtrip() {
        let src = "extract[$n, $i](a: $n) := {\n  $j :=p $n - 1 - $i\n  x, y, z :=p uncat_3[$i, 1, $j](a)\n  a' :=p cat_2[$i, $j](x, z)\n} > a', y\n";
        let parsed = parse_program(src).unwrap();
        let printed = print_program(&parsed.program);
        let reparsed = parse_program(&printed).unwrap();
        assert_eq!(reparsed.program, parsed.program);
        assert!(printed.contains("a: $n"));
    }
}
