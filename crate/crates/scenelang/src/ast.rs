//! Syntax tree produced by the parser. No names are resolved at this stage.

use std::fmt;

/// Source position (1-based). Spans never take part in equality so that two
/// forests parsed from differently formatted text compare equal.
#[derive(Debug, Clone, Copy, Default)]
pub struct Span {
    pub line: u32,
    pub col: u32,
}

impl Span {
    pub fn new(line: u32, col: u32) -> Self {
        Span { line, col }
    }
}

impl PartialEq for Span {
    fn eq(&self, _other: &Self) -> bool {
        true
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

/// One `.plx` file as handed to the parser.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceUnit {
    pub path: String,
    pub text: String,
    pub imports: Vec<String>,
}

impl SourceUnit {
    pub fn new(path: impl Into<String>, text: impl Into<String>) -> Self {
        SourceUnit { path: path.into(), text: text.into(), imports: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    pub fn symbol(&self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Arg {
    pub name: Option<String>,
    pub value: Expr,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExprKind {
    Number(f64),
    Str(String),
    Bool(bool),
    /// Dotted reference such as `half_track` or `left.rocker_length`.
    Ref(Vec<String>),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Tuple(Vec<Expr>),
    Call(String, Vec<Arg>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    pub kind: ExprKind,
    pub span: Span,
}

impl Expr {
    pub fn new(kind: ExprKind, span: Span) -> Self {
        Expr { kind, span }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldDecl {
    pub name: String,
    pub ty: String,
    pub value: Expr,
    pub span: Span,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MateKind {
    Rigid,
    Hinge,
    Prismatic,
}

impl MateKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "rigid" => Some(MateKind::Rigid),
            "hinge" => Some(MateKind::Hinge),
            "prismatic" => Some(MateKind::Prismatic),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MateKind::Rigid => "rigid",
            MateKind::Hinge => "hinge",
            MateKind::Prismatic => "prismatic",
        }
    }
}

/// Body-relative frame reference: `path [@ position] [rot orientation]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRef {
    pub body: Vec<String>,
    pub position: Option<Expr>,
    pub rotation: Option<Expr>,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MateDecl {
    pub kind: MateKind,
    pub frame_a: FrameRef,
    pub frame_b: FrameRef,
    /// Trailing `name=value` options (`axis`, `actuated`, `initial`).
    pub options: Vec<(String, Expr)>,
    pub span: Span,
}

impl MateDecl {
    pub fn option(&self, name: &str) -> Option<&Expr> {
        self.options.iter().find(|(n, _)| n == name).map(|(_, e)| e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignalDirection {
    Input,
    Output,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalDecl {
    pub direction: SignalDirection,
    pub name: String,
    pub ty: String,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelDecl {
    pub name: String,
    pub base: Option<String>,
    pub traits: Vec<String>,
    pub fields: Vec<FieldDecl>,
    pub mates: Vec<MateDecl>,
    pub signals: Vec<SignalDecl>,
    pub span: Span,
}

impl ModelDecl {
    pub fn new(name: impl Into<String>) -> Self {
        ModelDecl {
            name: name.into(),
            base: None,
            traits: Vec::new(),
            fields: Vec::new(),
            mates: Vec::new(),
            signals: Vec::new(),
            span: Span::default(),
        }
    }

    pub fn field(&self, name: &str) -> Option<&FieldDecl> {
        self.fields.iter().find(|f| f.name == name)
    }
}

/// Declarations parsed from one unit.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedUnit {
    pub path: String,
    pub imports: Vec<String>,
    pub models: Vec<ModelDecl>,
}

/// All units reachable from a root unit, in dependency order (imports first).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Forest {
    pub units: Vec<ParsedUnit>,
}

impl Forest {
    pub fn model(&self, name: &str) -> Option<&ModelDecl> {
        self.units.iter().flat_map(|u| u.models.iter()).find(|m| m.name == name)
    }

    pub fn models(&self) -> impl Iterator<Item = &ModelDecl> {
        self.units.iter().flat_map(|u| u.models.iter())
    }

    /// The last model declared in the root unit; used when no model is named.
    pub fn default_model(&self) -> Option<&ModelDecl> {
        self.units.last().and_then(|u| u.models.last())
    }
}
