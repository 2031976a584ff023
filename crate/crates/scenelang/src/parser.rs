//! Recursive-descent parser and import loader.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use crate::ast::*;
use crate::error::{PlxError, Result};
use crate::lexer::{tokenize, Keyword, Tok, Token};

/// Resolves import paths to source units.
pub trait UnitRegistry {
    /// `from` is the path of the importing unit; relative imports are
    /// interpreted against it.
    fn load(&self, path: &str, from: &str) -> Option<SourceUnit>;
}

/// Registry over an in-memory map, keyed by the literal import string.
#[derive(Debug, Default, Clone)]
pub struct MemoryRegistry {
    units: HashMap<String, String>,
}

impl MemoryRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, path: &str, text: &str) -> Self {
        self.insert(path, text);
        self
    }

    pub fn insert(&mut self, path: &str, text: &str) {
        self.units.insert(path.to_string(), text.to_string());
    }

    pub fn unit(&self, path: &str) -> Option<SourceUnit> {
        self.units.get(path).map(|t| SourceUnit::new(path, t.clone()))
    }
}

impl UnitRegistry for MemoryRegistry {
    fn load(&self, path: &str, _from: &str) -> Option<SourceUnit> {
        self.unit(path)
    }
}

/// Registry over the filesystem. Imports are relative to the importing file.
#[derive(Debug, Default, Clone)]
pub struct FsRegistry;

impl FsRegistry {
    pub fn read(path: &Path) -> Result<SourceUnit> {
        let io = |e: std::io::Error| PlxError::Io { path: path.display().to_string(), message: e.to_string() };
        let full = std::fs::canonicalize(path).map_err(io)?;
        let text = std::fs::read_to_string(&full).map_err(io)?;
        Ok(SourceUnit::new(full.display().to_string(), text))
    }
}

impl UnitRegistry for FsRegistry {
    fn load(&self, path: &str, from: &str) -> Option<SourceUnit> {
        let base = Path::new(from).parent().map(Path::to_path_buf).unwrap_or_default();
        let full: PathBuf = std::fs::canonicalize(base.join(path)).ok()?;
        let text = std::fs::read_to_string(&full).ok()?;
        Some(SourceUnit::new(full.display().to_string(), text))
    }
}

/// Parses `unit` and, transitively, everything it imports.
///
/// URDF files (`.urdf`) may be imported as well; each becomes one model.
pub fn parse_source(unit: &SourceUnit, registry: &dyn UnitRegistry) -> Result<Forest> {
    let mut forest = Forest::default();
    let mut stack: Vec<String> = Vec::new();
    let mut done: HashMap<String, ()> = HashMap::new();
    load_rec(unit.clone(), registry, &mut stack, &mut done, &mut forest)?;

    let mut seen: HashMap<&str, ()> = HashMap::new();
    for m in forest.models() {
        if seen.insert(m.name.as_str(), ()).is_some() {
            return Err(PlxError::DuplicateModel(m.name.clone()));
        }
    }
    Ok(forest)
}

fn load_rec(
    unit: SourceUnit,
    registry: &dyn UnitRegistry,
    stack: &mut Vec<String>,
    done: &mut HashMap<String, ()>,
    forest: &mut Forest,
) -> Result<()> {
    stack.push(unit.path.clone());
    let parsed = if unit.path.ends_with(".urdf") {
        crate::urdf::import_urdf(&unit)?
    } else {
        parse_unit(&unit.path, &unit.text)?
    };
    for imp in &parsed.imports {
        let child = registry
            .load(imp, &unit.path)
            .ok_or_else(|| PlxError::UnknownImport(imp.clone()))?;
        if let Some(pos) = stack.iter().position(|p| *p == child.path) {
            let mut chain: Vec<String> = stack[pos..].to_vec();
            chain.push(child.path.clone());
            return Err(PlxError::CyclicImport(chain));
        }
        if done.contains_key(&child.path) {
            continue;
        }
        load_rec(child, registry, stack, done, forest)?;
    }
    stack.pop();
    done.insert(unit.path.clone(), ());
    forest.units.push(parsed);
    Ok(())
}

/// Parses a single unit without following imports.
pub fn parse_unit(path: &str, text: &str) -> Result<ParsedUnit> {
    let tokens = tokenize(path, text)?;
    let mut p = Parser { unit: path, toks: tokens, pos: 0 };
    p.unit()
}

struct Parser<'a> {
    unit: &'a str,
    toks: Vec<Token>,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, n: usize) -> &Tok {
        let i = (self.pos + n).min(self.toks.len() - 1);
        &self.toks[i].tok
    }

    fn span(&self) -> Span {
        self.toks[self.pos].span
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos < self.toks.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T> {
        let s = self.span();
        Err(PlxError::Syntax { unit: self.unit.to_string(), line: s.line, col: s.col, message: message.into() })
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<Token> {
        if *self.peek() == tok {
            Ok(self.bump())
        } else {
            self.err(format!("expected {what}, found {}", describe(self.peek())))
        }
    }

    fn ident(&mut self, what: &str) -> Result<String> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok(s)
            }
            other => self.err(format!("expected {what}, found {}", describe(&other))),
        }
    }

    fn unit(&mut self) -> Result<ParsedUnit> {
        let mut imports = Vec::new();
        let mut models = Vec::new();
        loop {
            match self.peek().clone() {
                Tok::Eof => break,
                Tok::Newline => {
                    self.bump();
                }
                Tok::Kw(Keyword::Import) => {
                    self.bump();
                    match self.peek().clone() {
                        Tok::Str(s) => {
                            self.bump();
                            imports.push(s);
                        }
                        other => return self.err(format!("expected import path string, found {}", describe(&other))),
                    }
                    self.end_of_line()?;
                }
                Tok::Kw(Keyword::Model) => models.push(self.model()?),
                other => return self.err(format!("expected `model` or `import`, found {}", describe(&other))),
            }
        }
        Ok(ParsedUnit { path: self.unit.to_string(), imports, models })
    }

    fn end_of_line(&mut self) -> Result<()> {
        match self.peek() {
            Tok::Newline => {
                self.bump();
                Ok(())
            }
            Tok::Eof | Tok::Dedent => Ok(()),
            other => {
                let d = describe(other);
                self.err(format!("expected end of line, found {d}"))
            }
        }
    }

    fn model(&mut self) -> Result<ModelDecl> {
        let span = self.span();
        self.bump();
        let name = self.ident("model name")?;
        let mut decl = ModelDecl::new(name);
        decl.span = span;
        if *self.peek() == Tok::Kw(Keyword::Extends) {
            self.bump();
            decl.base = Some(self.ident("base model name")?);
        }
        if *self.peek() == Tok::Kw(Keyword::With) {
            self.bump();
            decl.traits.push(self.ident("trait name")?);
            while *self.peek() == Tok::Comma {
                self.bump();
                decl.traits.push(self.ident("trait name")?);
            }
        }
        self.expect(Tok::Colon, "`:` after model header")?;
        self.end_of_line()?;
        if *self.peek() != Tok::Indent {
            return Ok(decl);
        }
        self.bump();
        loop {
            match self.peek().clone() {
                Tok::Dedent => {
                    self.bump();
                    break;
                }
                Tok::Eof => break,
                Tok::Newline => {
                    self.bump();
                }
                Tok::Kw(Keyword::Mate) => {
                    let m = self.mate()?;
                    decl.mates.push(m);
                    self.end_of_line()?;
                }
                Tok::Kw(kw @ (Keyword::Input | Keyword::Output)) => {
                    let span = self.span();
                    self.bump();
                    let name = self.ident("signal name")?;
                    self.expect(Tok::Colon, "`:` after signal name")?;
                    let ty = self.ident("signal type")?;
                    let direction = if kw == Keyword::Input { SignalDirection::Input } else { SignalDirection::Output };
                    decl.signals.push(SignalDecl { direction, name, ty, span });
                    self.end_of_line()?;
                }
                Tok::Ident(_) => {
                    let f = self.field()?;
                    decl.fields.push(f);
                    self.end_of_line()?;
                }
                other => return self.err(format!("expected field, mate or signal, found {}", describe(&other))),
            }
        }
        Ok(decl)
    }

    fn field(&mut self) -> Result<FieldDecl> {
        let span = self.span();
        let name = self.ident("field name")?;
        self.expect(Tok::Colon, "`:` after field name")?;
        let ty = self.ident("type name")?;
        self.expect(Tok::Eq, "`=` in field declaration")?;
        let value = self.expr()?;
        Ok(FieldDecl { name, ty, value, span })
    }

    fn mate(&mut self) -> Result<MateDecl> {
        let span = self.span();
        self.bump();
        let kind_name = self.ident("mate kind")?;
        let kind = match MateKind::parse(&kind_name) {
            Some(k) => k,
            None => return self.err(format!("unknown mate kind `{kind_name}` (expected rigid, hinge or prismatic)")),
        };
        self.expect(Tok::LParen, "`(` after mate kind")?;
        let frame_a = self.frame()?;
        self.expect(Tok::Comma, "`,` between mate frames")?;
        let frame_b = self.frame()?;
        let mut options = Vec::new();
        while *self.peek() == Tok::Comma {
            self.bump();
            let name = self.ident("mate option name")?;
            if !matches!(name.as_str(), "axis" | "actuated" | "initial") {
                return self.err(format!("unknown mate option `{name}`"));
            }
            self.expect(Tok::Eq, "`=` after mate option")?;
            let value = self.expr()?;
            options.push((name, value));
        }
        self.expect(Tok::RParen, "`)` closing mate")?;
        Ok(MateDecl { kind, frame_a, frame_b, options, span })
    }

    fn frame(&mut self) -> Result<FrameRef> {
        let span = self.span();
        let mut body = vec![self.ident("body reference")?];
        while *self.peek() == Tok::Dot {
            self.bump();
            body.push(self.ident("body reference")?);
        }
        let mut position = None;
        let mut rotation = None;
        if *self.peek() == Tok::At {
            self.bump();
            position = Some(self.unary()?);
        }
        if let Tok::Ident(s) = self.peek() {
            if s == "rot" {
                self.bump();
                rotation = Some(self.unary()?);
            }
        }
        Ok(FrameRef { body, position, rotation, span })
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => break,
            };
            let span = self.span();
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::new(ExprKind::Binary(op, Box::new(lhs), Box::new(rhs)), span);
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => break,
            };
            let span = self.span();
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::new(ExprKind::Binary(op, Box::new(lhs), Box::new(rhs)), span);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr> {
        if *self.peek() == Tok::Minus {
            let span = self.span();
            self.bump();
            let inner = self.unary()?;
            return Ok(Expr::new(ExprKind::Neg(Box::new(inner)), span));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr> {
        let span = self.span();
        match self.peek().clone() {
            Tok::Number(v) => {
                self.bump();
                Ok(Expr::new(ExprKind::Number(v), span))
            }
            Tok::Str(s) => {
                self.bump();
                Ok(Expr::new(ExprKind::Str(s), span))
            }
            Tok::Kw(Keyword::True) => {
                self.bump();
                Ok(Expr::new(ExprKind::Bool(true), span))
            }
            Tok::Kw(Keyword::False) => {
                self.bump();
                Ok(Expr::new(ExprKind::Bool(false), span))
            }
            Tok::LParen => {
                self.bump();
                let first = self.expr()?;
                if *self.peek() == Tok::Comma {
                    let mut items = vec![first];
                    while *self.peek() == Tok::Comma {
                        self.bump();
                        items.push(self.expr()?);
                    }
                    self.expect(Tok::RParen, "`)` closing tuple")?;
                    Ok(Expr::new(ExprKind::Tuple(items), span))
                } else {
                    self.expect(Tok::RParen, "`)`")?;
                    Ok(first)
                }
            }
            Tok::Ident(name) => {
                self.bump();
                if *self.peek() == Tok::LParen {
                    self.bump();
                    let mut args = Vec::new();
                    if *self.peek() != Tok::RParen {
                        loop {
                            let arg_name = match (self.peek(), self.peek_at(1)) {
                                (Tok::Ident(n), Tok::Eq) => {
                                    let n = n.clone();
                                    self.bump();
                                    self.bump();
                                    Some(n)
                                }
                                _ => None,
                            };
                            let value = self.expr()?;
                            args.push(Arg { name: arg_name, value });
                            if *self.peek() == Tok::Comma {
                                self.bump();
                            } else {
                                break;
                            }
                        }
                    }
                    self.expect(Tok::RParen, "`)` closing call")?;
                    return Ok(Expr::new(ExprKind::Call(name, args), span));
                }
                let mut path = vec![name];
                while *self.peek() == Tok::Dot {
                    self.bump();
                    path.push(self.ident("field name after `.`")?);
                }
                Ok(Expr::new(ExprKind::Ref(path), span))
            }
            other => self.err(format!("expected expression, found {}", describe(&other))),
        }
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(s) => format!("identifier `{s}`"),
        Tok::Number(v) => format!("number `{v}`"),
        Tok::Str(_) => "string literal".into(),
        Tok::Kw(k) => format!("keyword `{}`", k.as_str()),
        Tok::Newline => "end of line".into(),
        Tok::Indent => "indentation".into(),
        Tok::Dedent => "dedent".into(),
        Tok::Eof => "end of file".into(),
        Tok::Colon => "`:`".into(),
        Tok::Eq => "`=`".into(),
        Tok::LParen => "`(`".into(),
        Tok::RParen => "`)`".into(),
        Tok::Comma => "`,`".into(),
        Tok::Plus => "`+`".into(),
        Tok::Minus => "`-`".into(),
        Tok::Star => "`*`".into(),
        Tok::Slash => "`/`".into(),
        Tok::Dot => "`.`".into(),
        Tok::At => "`@`".into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_declaration() {
        let u = parse_unit("a.plx", "model Wheel:\n  radius: Real = 0.15").unwrap();
        assert_eq!(u.models.len(), 1);
        let m = &u.models[0];
        assert_eq!(m.name, "Wheel");
        assert_eq!(m.fields.len(), 1);
        assert_eq!(m.fields[0].name, "radius");
        assert_eq!(m.fields[0].value.kind, ExprKind::Number(0.15));
    }

    #[test]
    fn header_with_base_and_traits() {
        let u = parse_unit("a.plx", "model Rover extends Vehicle with Steerable, Powered:\n  x: Real = 1\n").unwrap();
        let m = &u.models[0];
        assert_eq!(m.base.as_deref(), Some("Vehicle"));
        assert_eq!(m.traits, vec!["Steerable".to_string(), "Powered".to_string()]);
    }

    #[test]
    fn two_node_import_cycle() {
        let reg = MemoryRegistry::new()
            .with("A", "import \"B\"\nmodel X:\n  a: Real = 1\n")
            .with("B", "import \"A\"\nmodel Y:\n  b: Real = 1\n");
        let err = parse_source(&reg.unit("A").unwrap(), &reg).unwrap_err();
        assert_eq!(err, PlxError::CyclicImport(vec!["A".into(), "B".into(), "A".into()]));
    }

    #[test]
    fn unknown_import() {
        let reg = MemoryRegistry::new().with("A", "import \"nope.plx\"\n");
        let err = parse_source(&reg.unit("A").unwrap(), &reg).unwrap_err();
        assert_eq!(err, PlxError::UnknownImport("nope.plx".into()));
    }

    #[test]
    fn syntax_error_reports_position() {
        let err = parse_unit("a.plx", "model A:\n  x Real = 1\n").unwrap_err();
        match err {
            PlxError::Syntax { line, col, .. } => {
                assert_eq!((line, col), (2, 5));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn mate_with_options() {
        let src = "model M:\n  mate hinge(a @ (1, 0, 0), b, axis=(0, 0, 1), actuated=true)\n";
        let u = parse_unit("m", src).unwrap();
        let mate = &u.models[0].mates[0];
        assert_eq!(mate.kind, MateKind::Hinge);
        assert_eq!(mate.frame_a.body, vec!["a".to_string()]);
        assert!(mate.frame_a.position.is_some());
        assert!(mate.frame_b.position.is_none());
        assert_eq!(mate.options.len(), 2);
    }

    #[test]
    fn precedence() {
        let u = parse_unit("m", "model M:\n  x: Real = 1 + 2 * 3\n").unwrap();
        match &u.models[0].fields[0].value.kind {
            ExprKind::Binary(BinOp::Add, _, rhs) => {
                assert!(matches!(rhs.kind, ExprKind::Binary(BinOp::Mul, _, _)))
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
