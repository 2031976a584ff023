//! Inheritance flattening and expression evaluation.

use std::collections::{BTreeMap, HashMap};
use std::rc::Rc;
use std::sync::Arc;

use crate::ast::*;
use crate::error::{PlxError, Result};
use crate::tree::{BodyNode, Frame, Mate, ModelTree, RandomParam, Signal, TreeNode, Value, MODEL_TREE_FORMAT};

/// Name of the builtin rigid-body model.
pub const BODY_MODEL: &str = "Body";

fn builtin_body() -> ModelDecl {
    let mut m = ModelDecl::new(BODY_MODEL);
    m.fields.push(FieldDecl {
        name: "mass".into(),
        ty: "Real".into(),
        value: Expr::new(ExprKind::Number(1.0), Span::default()),
        span: Span::default(),
    });
    m
}

const SCALAR_TYPES: &[&str] = &["Real", "Int", "Bool", "String", "Vec3", "Quat"];

#[derive(Debug, Clone)]
struct FlatField {
    decl: FieldDecl,
    origin: String,
}

#[derive(Debug)]
struct FlatModel {
    name: String,
    fields: Vec<FlatField>,
    mates: Vec<MateDecl>,
    signals: Vec<SignalDecl>,
    is_body: bool,
    /// The model itself followed by its base chain.
    lineage: Vec<String>,
}

struct Flattener<'f> {
    forest: &'f Forest,
    body: ModelDecl,
    cache: HashMap<String, Rc<FlatModel>>,
}

impl<'f> Flattener<'f> {
    fn new(forest: &'f Forest) -> Self {
        Flattener { forest, body: builtin_body(), cache: HashMap::new() }
    }

    fn decl(&self, name: &str) -> Option<&ModelDecl> {
        self.forest.model(name).or(if name == BODY_MODEL { Some(&self.body) } else { None })
    }

    fn is_model(&self, name: &str) -> bool {
        self.decl(name).is_some()
    }

    fn flat(&mut self, name: &str) -> Result<Rc<FlatModel>> {
        let mut stack = Vec::new();
        self.flat_rec(name, &mut stack)
    }

    fn flat_rec(&mut self, name: &str, stack: &mut Vec<String>) -> Result<Rc<FlatModel>> {
        if let Some(f) = self.cache.get(name) {
            return Ok(f.clone());
        }
        if stack.iter().any(|s| s == name) {
            let mut chain = stack.clone();
            chain.push(name.to_string());
            return Err(PlxError::CyclicInheritance(chain));
        }
        let decl = self.decl(name).cloned().ok_or_else(|| PlxError::UnknownModel(name.to_string()))?;
        stack.push(name.to_string());

        for (i, f) in decl.fields.iter().enumerate() {
            if decl.fields[..i].iter().any(|g| g.name == f.name) {
                return Err(PlxError::DuplicateField { model: decl.name.clone(), field: f.name.clone() });
            }
        }

        let mut fields: Vec<FlatField> = Vec::new();
        let mut mates = Vec::new();
        let mut signals: Vec<SignalDecl> = Vec::new();
        let mut is_body = name == BODY_MODEL;
        let mut lineage = vec![name.to_string()];

        if let Some(base) = &decl.base {
            if !self.is_model(base) {
                return Err(PlxError::UnknownBase { model: decl.name.clone(), base: base.clone() });
            }
            let b = self.flat_rec(base, stack)?;
            fields = b.fields.clone();
            mates = b.mates.clone();
            signals = b.signals.clone();
            is_body |= b.is_body;
            lineage.extend(b.lineage.iter().cloned());
        }

        let mut trait_fields: Vec<FlatField> = Vec::new();
        for t in &decl.traits {
            if !self.is_model(t) {
                return Err(PlxError::UnknownTrait { model: decl.name.clone(), name: t.clone() });
            }
            let tf = self.flat_rec(t, stack)?;
            for f in &tf.fields {
                if let Some(prev) = trait_fields.iter().find(|p| p.decl.name == f.decl.name) {
                    if prev.origin != f.origin {
                        return Err(PlxError::TraitConflict(f.decl.name.clone()));
                    }
                    continue;
                }
                trait_fields.push(f.clone());
            }
            mates.extend(tf.mates.iter().cloned());
            merge_signals(&mut signals, &tf.signals);
        }
        for f in trait_fields {
            override_field(&mut fields, f);
        }
        for f in &decl.fields {
            override_field(&mut fields, FlatField { decl: f.clone(), origin: decl.name.clone() });
        }
        mates.extend(decl.mates.iter().cloned());
        merge_signals(&mut signals, &decl.signals);

        stack.pop();
        let flat = Rc::new(FlatModel { name: name.to_string(), fields, mates, signals, is_body, lineage });
        self.cache.insert(name.to_string(), flat.clone());
        Ok(flat)
    }
}

fn override_field(fields: &mut Vec<FlatField>, f: FlatField) {
    match fields.iter_mut().find(|g| g.decl.name == f.decl.name) {
        Some(slot) => *slot = f,
        None => fields.push(f),
    }
}

fn merge_signals(into: &mut Vec<SignalDecl>, from: &[SignalDecl]) {
    for s in from {
        match into.iter_mut().find(|g| g.name == s.name) {
            Some(slot) => *slot = s.clone(),
            None => into.push(s.clone()),
        }
    }
}

/// Returns `name` with inheritance and traits merged into one declaration.
///
/// Body models keep `Body` as their base so that the result still resolves
/// to a body; applying `flatten` to its own output is the identity.
pub fn flatten(name: &str, forest: &Forest) -> Result<ModelDecl> {
    let mut fl = Flattener::new(forest);
    let flat = fl.flat(name)?;
    let span = fl.decl(name).map(|d| d.span).unwrap_or_default();
    Ok(ModelDecl {
        name: flat.name.clone(),
        base: if flat.is_body && name != BODY_MODEL { Some(BODY_MODEL.to_string()) } else { None },
        traits: Vec::new(),
        fields: flat.fields.iter().map(|f| f.decl.clone()).collect(),
        mates: flat.mates.clone(),
        signals: flat.signals.clone(),
        span,
    })
}

/// Supplies values for `random(lo, hi)` parameters; gets the parameter path.
pub type Sampler<'a> = &'a dyn Fn(&str, f64, f64) -> f64;

/// Resolves `model` into a tree whose non-anchor transforms are unassigned.
/// Randomized parameters take the midpoint of their range.
pub fn resolve(model: &str, forest: &Forest) -> Result<ModelTree> {
    resolve_with(model, forest, None)
}

pub fn resolve_with(model: &str, forest: &Forest, sampler: Option<Sampler<'_>>) -> Result<ModelTree> {
    let mut r = Resolver {
        fl: Flattener::new(forest),
        insts: Vec::new(),
        sampler,
        randomized: Vec::new(),
    };
    let root = r.instantiate(model, String::new(), model.to_string(), None, Vec::new())?;
    r.force_all(root)?;
    let mut tree = r.build(root, model)?;
    tree.source = Some(Arc::new(forest.clone()));
    Ok(tree)
}

#[derive(Debug, Clone)]
enum Val {
    V(Value),
    Inst(usize),
}

#[derive(Debug)]
enum Slot {
    Pending { expr: Expr, scope: usize },
    Busy,
    Done(Val),
}

struct Inst {
    name: String,
    path: String,
    flat: Rc<FlatModel>,
    parent: Option<usize>,
    names: Vec<String>,
    types: Vec<String>,
    slots: Vec<Slot>,
    position: Option<(Expr, usize)>,
    orientation: Option<(Expr, usize)>,
    children: Vec<usize>,
}

struct Resolver<'f, 's> {
    fl: Flattener<'f>,
    insts: Vec<Inst>,
    sampler: Option<Sampler<'s>>,
    randomized: Vec<RandomParam>,
}

fn join(path: &str, name: &str) -> String {
    if path.is_empty() {
        name.to_string()
    } else {
        format!("{path}.{name}")
    }
}

impl<'f, 's> Resolver<'f, 's> {
    fn instantiate(
        &mut self,
        model: &str,
        path: String,
        name: String,
        parent: Option<usize>,
        overrides: Vec<(String, Expr, usize)>,
    ) -> Result<usize> {
        let flat = self.fl.flat(model)?;
        let id = self.insts.len();
        let mut inst = Inst {
            name,
            path,
            flat: flat.clone(),
            parent,
            names: Vec::new(),
            types: Vec::new(),
            slots: Vec::new(),
            position: None,
            orientation: None,
            children: Vec::new(),
        };
        for f in &flat.fields {
            inst.names.push(f.decl.name.clone());
            inst.types.push(f.decl.ty.clone());
            inst.slots.push(Slot::Pending { expr: f.decl.value.clone(), scope: id });
        }
        for (arg, expr, scope) in overrides {
            if let Some(i) = inst.names.iter().position(|n| *n == arg) {
                inst.slots[i] = Slot::Pending { expr, scope };
            } else if flat.is_body && arg == "position" {
                inst.position = Some((expr, scope));
            } else if flat.is_body && arg == "orientation" {
                inst.orientation = Some((expr, scope));
            } else {
                return Err(PlxError::InvalidArgument {
                    message: format!("model `{model}` has no field `{arg}`"),
                    span: expr.span,
                });
            }
        }
        self.insts.push(inst);
        Ok(id)
    }

    fn force_all(&mut self, id: usize) -> Result<()> {
        for i in 0..self.insts[id].slots.len() {
            if let Val::Inst(child) = self.get_slot(id, i)? {
                self.force_all(child)?;
            }
        }
        Ok(())
    }

    fn field_index(&self, id: usize, name: &str) -> Option<usize> {
        self.insts[id].names.iter().position(|n| n == name)
    }

    fn get_slot(&mut self, id: usize, idx: usize) -> Result<Val> {
        let slot = std::mem::replace(&mut self.insts[id].slots[idx], Slot::Busy);
        match slot {
            Slot::Done(v) => {
                self.insts[id].slots[idx] = Slot::Done(v.clone());
                Ok(v)
            }
            Slot::Busy => {
                let p = join(&self.insts[id].path, &self.insts[id].names[idx]);
                Err(PlxError::CyclicReference(p))
            }
            Slot::Pending { expr, scope } => {
                let v = self.eval_field(id, idx, &expr, scope)?;
                self.insts[id].slots[idx] = Slot::Done(v.clone());
                Ok(v)
            }
        }
    }

    fn eval_field(&mut self, id: usize, idx: usize, expr: &Expr, scope: usize) -> Result<Val> {
        let ty = self.insts[id].types[idx].clone();
        let name = self.insts[id].names[idx].clone();
        let path = join(&self.insts[id].path, &name);

        if !SCALAR_TYPES.contains(&ty.as_str()) {
            if !self.fl.is_model(&ty) {
                return Err(PlxError::UnknownModel(ty));
            }
            let (model, args) = match &expr.kind {
                ExprKind::Call(m, args) if self.fl.is_model(m) => (m.clone(), args.clone()),
                _ => {
                    return Err(PlxError::TypeMismatch {
                        name: path,
                        expected: ty,
                        found: "expression".into(),
                        span: expr.span,
                    })
                }
            };
            let flat = self.fl.flat(&model)?;
            if !flat.lineage.contains(&ty) {
                return Err(PlxError::TypeMismatch { name: path, expected: ty, found: model, span: expr.span });
            }
            let mut overrides = Vec::new();
            for a in args {
                let Some(n) = a.name.clone() else {
                    return Err(PlxError::InvalidArgument {
                        message: format!("arguments to `{model}` must be named"),
                        span: a.value.span,
                    });
                };
                overrides.push((n, a.value, scope));
            }
            let child = self.instantiate(&model, path, name, Some(id), overrides)?;
            self.insts[id].children.push(child);
            return Ok(Val::Inst(child));
        }

        if let ExprKind::Call(f, args) = &expr.kind {
            if f == "random" {
                if ty != "Real" {
                    return Err(PlxError::TypeMismatch { name: path, expected: ty, found: "random range".into(), span: expr.span });
                }
                let value = self.sample(path, args, expr.span, scope)?;
                return Ok(Val::V(Value::Number(value)));
            }
        }

        let v = self.eval(expr, scope)?;
        let Val::V(value) = v else {
            return Err(PlxError::TypeMismatch { name: path, expected: ty, found: "model instance".into(), span: expr.span });
        };
        check_type(&path, &ty, &value, expr.span)?;
        Ok(Val::V(value))
    }

    fn sample(&mut self, path: String, args: &[Arg], span: Span, scope: usize) -> Result<f64> {
        if args.len() != 2 || args.iter().any(|a| a.name.is_some()) {
            return Err(PlxError::InvalidArgument { message: "random takes (lo, hi)".into(), span });
        }
        let lo = self.eval_number(&args[0].value, scope)?;
        let hi = self.eval_number(&args[1].value, scope)?;
        if !(lo <= hi) {
            return Err(PlxError::InvalidArgument { message: format!("empty range [{lo}, {hi}]"), span });
        }
        let value = match self.sampler {
            Some(s) => s(&path, lo, hi),
            None => 0.5 * (lo + hi),
        };
        self.randomized.push(RandomParam { path, lo, hi, value });
        Ok(value)
    }

    fn eval_number(&mut self, e: &Expr, scope: usize) -> Result<f64> {
        match self.eval(e, scope)? {
            Val::V(Value::Number(v)) => Ok(v),
            other => Err(PlxError::TypeMismatch {
                name: crate::printer::expr(e),
                expected: "Real".into(),
                found: val_type(&other).into(),
                span: e.span,
            }),
        }
    }

    /// Looks `name` up in `scope` and then its ancestors.
    fn lookup(&mut self, scope: usize, name: &str, span: Span) -> Result<Val> {
        let mut cur = Some(scope);
        while let Some(id) = cur {
            if let Some(idx) = self.field_index(id, name) {
                return self.get_slot(id, idx);
            }
            cur = self.insts[id].parent;
        }
        match name {
            "pi" => Ok(Val::V(Value::Number(std::f64::consts::PI))),
            _ => Err(PlxError::UnboundReference { name: name.to_string(), span }),
        }
    }

    fn eval_path(&mut self, scope: usize, path: &[String], span: Span) -> Result<Val> {
        let mut v = self.lookup(scope, &path[0], span)?;
        for seg in &path[1..] {
            let Val::Inst(id) = v else {
                return Err(PlxError::UnboundReference { name: path.join("."), span });
            };
            let idx = self
                .field_index(id, seg)
                .ok_or_else(|| PlxError::UnboundReference { name: path.join("."), span })?;
            v = self.get_slot(id, idx)?;
        }
        Ok(v)
    }

    fn eval(&mut self, e: &Expr, scope: usize) -> Result<Val> {
        let span = e.span;
        Ok(Val::V(match &e.kind {
            ExprKind::Number(v) => Value::Number(*v),
            ExprKind::Str(s) => Value::Str(s.clone()),
            ExprKind::Bool(b) => Value::Bool(*b),
            ExprKind::Ref(path) => return self.eval_path(scope, path, span),
            ExprKind::Neg(inner) => match self.eval(inner, scope)? {
                Val::V(Value::Number(v)) => Value::Number(-v),
                Val::V(Value::Vec3([x, y, z])) => Value::Vec3([-x, -y, -z]),
                other => return Err(mismatch("-", "Real or Vec3", &other, span)),
            },
            ExprKind::Binary(op, l, r) => {
                let a = self.eval(l, scope)?;
                let b = self.eval(r, scope)?;
                binary(op, a, b, span)?
            }
            ExprKind::Tuple(items) => {
                let mut xs = Vec::with_capacity(items.len());
                for it in items {
                    xs.push(self.eval_number(it, scope)?);
                }
                match xs.len() {
                    3 => Value::Vec3([xs[0], xs[1], xs[2]]),
                    4 => Value::Quat([xs[0], xs[1], xs[2], xs[3]]),
                    n => {
                        return Err(PlxError::TypeMismatch {
                            name: "tuple".into(),
                            expected: "3 or 4 components".into(),
                            found: format!("{n} components"),
                            span,
                        })
                    }
                }
            }
            ExprKind::Call(f, args) => {
                if self.fl.is_model(f) {
                    return Err(PlxError::InvalidArgument {
                        message: format!("model `{f}` can only be instantiated as a field value"),
                        span,
                    });
                }
                if args.iter().any(|a| a.name.is_some()) {
                    return Err(PlxError::InvalidArgument { message: format!("`{f}` takes positional arguments"), span });
                }
                let mut xs = Vec::with_capacity(args.len());
                for a in args {
                    xs.push(self.eval_number(&a.value, scope)?);
                }
                Value::Number(call(f, &xs, span)?)
            }
        }))
    }

    fn build(&mut self, root: usize, model: &str) -> Result<ModelTree> {
        let mut bodies = Vec::new();
        let mut mates = Vec::new();
        let mut parameters = BTreeMap::new();
        let mut signals = Vec::new();
        let node = self.collect(root, &mut bodies, &mut mates, &mut parameters, &mut signals)?;
        Ok(ModelTree {
            format: MODEL_TREE_FORMAT.to_string(),
            model: model.to_string(),
            root: node,
            bodies,
            mates,
            parameters,
            signals,
            randomized: std::mem::take(&mut self.randomized),
            seed: None,
            source: None,
        })
    }

    fn collect(
        &mut self,
        id: usize,
        bodies: &mut Vec<BodyNode>,
        mates: &mut Vec<Mate>,
        params: &mut BTreeMap<String, Value>,
        signals: &mut Vec<Signal>,
    ) -> Result<TreeNode> {
        let path = self.insts[id].path.clone();
        let flat = self.insts[id].flat.clone();
        if flat.is_body {
            let mass = match self.lookup(id, "mass", Span::default()) {
                Ok(Val::V(Value::Number(m))) => m,
                _ => 1.0,
            };
            let mut transform = None;
            if let Some((e, scope)) = self.insts[id].position.clone() {
                let p = self.eval_vec3(&e, scope, "position")?;
                let mut frame = Frame { position: p, ..Frame::default() };
                if let Some((q, qs)) = self.insts[id].orientation.clone() {
                    frame.orientation = self.eval_quat(&q, qs)?;
                }
                transform = Some(frame);
            }
            bodies.push(BodyNode {
                path: path.clone(),
                model: flat.name.clone(),
                mass,
                explicit: transform.is_some(),
                transform,
            });
        }

        let mut children = Vec::new();
        for i in 0..self.insts[id].slots.len() {
            let v = self.get_slot(id, i)?;
            let p = join(&path, &self.insts[id].names[i]);
            match v {
                Val::V(value) => {
                    params.insert(p, value);
                }
                Val::Inst(c) => children.push(self.collect(c, bodies, mates, params, signals)?),
            }
        }

        for (k, m) in flat.mates.iter().enumerate() {
            let a = self.body_path(id, &m.frame_a)?;
            let b = self.body_path(id, &m.frame_b)?;
            let frame_a = self.eval_frame(id, &m.frame_a)?;
            let frame_b = self.eval_frame(id, &m.frame_b)?;
            let axis = match m.option("axis") {
                Some(e) => self.eval_vec3(e, id, "axis")?,
                None => [0.0, 0.0, 1.0],
            };
            let norm = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
            if (norm - 1.0).abs() > 1e-9 {
                return Err(PlxError::InvalidAxis { norm, span: m.span });
            }
            let actuated = match m.option("actuated") {
                Some(e) => match self.eval(e, id)? {
                    Val::V(Value::Bool(b)) => b,
                    other => return Err(mismatch("actuated", "Bool", &other, e.span)),
                },
                None => false,
            };
            let name = join(&path, &format!("mate{k}"));
            let initial = match m.option("initial") {
                Some(Expr { kind: ExprKind::Call(f, args), span }) if f == "random" => {
                    self.sample(format!("{name}.initial"), args, *span, id)?
                }
                Some(e) => self.eval_number(e, id)?,
                None => 0.0,
            };
            mates.push(Mate {
                name,
                kind: m.kind,
                body_a: a,
                body_b: b,
                frame_a,
                frame_b,
                axis,
                actuated,
                initial,
                coordinate: None,
            });
        }

        for s in &flat.signals {
            signals.push(Signal { path: join(&path, &s.name), direction: s.direction, ty: s.ty.clone() });
        }

        let inst = &self.insts[id];
        Ok(TreeNode { name: inst.name.clone(), model: flat.name.clone(), path, body: flat.is_body, children })
    }

    fn body_path(&mut self, scope: usize, f: &FrameRef) -> Result<String> {
        let v = self.eval_path(scope, &f.body, f.span).map_err(|_| PlxError::UnknownBody {
            path: f.body.join("."),
            span: f.span,
        })?;
        match v {
            Val::Inst(id) if self.insts[id].flat.is_body => Ok(self.insts[id].path.clone()),
            _ => Err(PlxError::UnknownBody { path: f.body.join("."), span: f.span }),
        }
    }

    fn eval_frame(&mut self, scope: usize, f: &FrameRef) -> Result<Frame> {
        let mut frame = Frame::default();
        if let Some(p) = &f.position {
            frame.position = self.eval_vec3(p, scope, "frame position")?;
        }
        if let Some(r) = &f.rotation {
            frame.orientation = self.eval_quat(r, scope)?;
        }
        Ok(frame)
    }

    fn eval_vec3(&mut self, e: &Expr, scope: usize, what: &str) -> Result<[f64; 3]> {
        match self.eval(e, scope)? {
            Val::V(Value::Vec3(v)) => Ok(v),
            other => Err(mismatch(what, "Vec3", &other, e.span)),
        }
    }

    fn eval_quat(&mut self, e: &Expr, scope: usize) -> Result<[f64; 4]> {
        match self.eval(e, scope)? {
            Val::V(Value::Quat(q)) => {
                let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
                if n < 1e-12 {
                    return Err(PlxError::InvalidArgument { message: "zero quaternion".into(), span: e.span });
                }
                Ok([q[0] / n, q[1] / n, q[2] / n, q[3] / n])
            }
            other => Err(mismatch("orientation", "Quat", &other, e.span)),
        }
    }
}

fn val_type(v: &Val) -> &'static str {
    match v {
        Val::V(v) => v.type_name(),
        Val::Inst(_) => "model instance",
    }
}

fn mismatch(name: &str, expected: &str, found: &Val, span: Span) -> PlxError {
    PlxError::TypeMismatch { name: name.into(), expected: expected.into(), found: val_type(found).into(), span }
}

fn check_type(path: &str, ty: &str, v: &Value, span: Span) -> Result<()> {
    let ok = match (ty, v) {
        ("Real", Value::Number(_)) => true,
        ("Int", Value::Number(x)) => x.fract() == 0.0,
        ("Bool", Value::Bool(_)) => true,
        ("String", Value::Str(_)) => true,
        ("Vec3", Value::Vec3(_)) => true,
        ("Quat", Value::Quat(_)) => true,
        _ => false,
    };
    if ok {
        Ok(())
    } else {
        let found = match (ty, v) {
            ("Int", Value::Number(x)) => format!("non-integer {x}"),
            _ => v.type_name().to_string(),
        };
        Err(PlxError::TypeMismatch { name: path.into(), expected: ty.into(), found, span })
    }
}

fn binary(op: &BinOp, a: Val, b: Val, span: Span) -> Result<Value> {
    use Value::*;
    let (Val::V(a), Val::V(b)) = (a, b) else {
        return Err(PlxError::TypeMismatch {
            name: op.symbol().into(),
            expected: "values".into(),
            found: "model instance".into(),
            span,
        });
    };
    let out = match (op, &a, &b) {
        (BinOp::Div, _, Number(y)) if *y == 0.0 => return Err(PlxError::DivisionByZero(span)),
        (BinOp::Add, Number(x), Number(y)) => Number(x + y),
        (BinOp::Sub, Number(x), Number(y)) => Number(x - y),
        (BinOp::Mul, Number(x), Number(y)) => Number(x * y),
        (BinOp::Div, Number(x), Number(y)) => Number(x / y),
        (BinOp::Add, Vec3(x), Vec3(y)) => Vec3([x[0] + y[0], x[1] + y[1], x[2] + y[2]]),
        (BinOp::Sub, Vec3(x), Vec3(y)) => Vec3([x[0] - y[0], x[1] - y[1], x[2] - y[2]]),
        (BinOp::Mul, Vec3(x), Number(s)) | (BinOp::Mul, Number(s), Vec3(x)) => Vec3([x[0] * s, x[1] * s, x[2] * s]),
        (BinOp::Div, Vec3(x), Number(s)) => Vec3([x[0] / s, x[1] / s, x[2] / s]),
        (BinOp::Add, Str(x), Str(y)) => Str(format!("{x}{y}")),
        _ => {
            return Err(PlxError::TypeMismatch {
                name: op.symbol().into(),
                expected: "compatible operands".into(),
                found: format!("{} {} {}", a.type_name(), op.symbol(), b.type_name()),
                span,
            })
        }
    };
    Ok(out)
}

fn call(f: &str, xs: &[f64], span: Span) -> Result<f64> {
    let arity = |n: usize| -> Result<()> {
        if xs.len() == n {
            Ok(())
        } else {
            Err(PlxError::InvalidArgument { message: format!("`{f}` takes {n} argument(s), got {}", xs.len()), span })
        }
    };
    Ok(match f {
        "sqrt" => {
            arity(1)?;
            if xs[0] < 0.0 {
                return Err(PlxError::InvalidArgument { message: "sqrt of a negative number".into(), span });
            }
            xs[0].sqrt()
        }
        "sin" => {
            arity(1)?;
            xs[0].sin()
        }
        "cos" => {
            arity(1)?;
            xs[0].cos()
        }
        "tan" => {
            arity(1)?;
            xs[0].tan()
        }
        "abs" => {
            arity(1)?;
            xs[0].abs()
        }
        "rad" => {
            arity(1)?;
            xs[0].to_radians()
        }
        "deg" => {
            arity(1)?;
            xs[0].to_degrees()
        }
        "atan2" => {
            arity(2)?;
            xs[0].atan2(xs[1])
        }
        "min" => {
            arity(2)?;
            xs[0].min(xs[1])
        }
        "max" => {
            arity(2)?;
            xs[0].max(xs[1])
        }
        other => return Err(PlxError::UnboundReference { name: format!("{other}()"), span }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::{parse_source, MemoryRegistry};

    fn forest(src: &str) -> Forest {
        let reg = MemoryRegistry::new().with("main.plx", src);
        parse_source(&reg.unit("main.plx").unwrap(), &reg).unwrap()
    }

    #[test]
    fn derived_overrides_base() {
        let f = forest("model Base:\n  radius: Real = 0.15\nmodel Derived extends Base:\n  radius: Real = 0.20\n");
        let t = resolve("Derived", &f).unwrap();
        assert_eq!(t.number("radius"), Some(0.20));
    }

    #[test]
    fn expression_evaluation() {
        let f = forest("model M:\n  half_track: Real = 0.4\n  track_width: Real = 2 * half_track\n");
        let t = resolve("M", &f).unwrap();
        assert_eq!(t.number("track_width"), Some(0.8));
    }

    #[test]
    fn trait_conflict() {
        let f = forest(
            "model A:\n  mass: Real = 1\nmodel B:\n  mass: Real = 2\nmodel C with A, B:\n  x: Real = 0\n",
        );
        assert_eq!(resolve("C", &f).unwrap_err(), PlxError::TraitConflict("mass".into()));
    }

    #[test]
    fn shared_trait_ancestry_is_not_a_conflict() {
        let f = forest(
            "model Massive:\n  mass: Real = 1\nmodel A extends Massive:\n  a: Real = 1\nmodel B extends Massive:\n  b: Real = 2\nmodel C with A, B:\n  x: Real = 0\n",
        );
        let t = resolve("C", &f).unwrap();
        assert_eq!(t.number("mass"), Some(1.0));
    }

    #[test]
    fn division_by_zero() {
        let f = forest("model M:\n  z: Real = 0\n  x: Real = 1 / z\n");
        assert!(matches!(resolve("M", &f).unwrap_err(), PlxError::DivisionByZero(_)));
    }

    #[test]
    fn unbound_reference() {
        let f = forest("model M:\n  x: Real = y + 1\n");
        assert!(matches!(resolve("M", &f).unwrap_err(), PlxError::UnboundReference { ref name, .. } if name == "y"));
    }

    #[test]
    fn type_mismatch() {
        let f = forest("model M:\n  x: Bool = 1 + 2\n");
        assert!(matches!(resolve("M", &f).unwrap_err(), PlxError::TypeMismatch { .. }));
    }

    #[test]
    fn unknown_base() {
        let f = forest("model M extends Nope:\n  x: Real = 1\n");
        assert!(matches!(resolve("M", &f).unwrap_err(), PlxError::UnknownBase { .. }));
    }

    #[test]
    fn cyclic_reference() {
        let f = forest("model M:\n  a: Real = b\n  b: Real = a\n");
        assert!(matches!(resolve("M", &f).unwrap_err(), PlxError::CyclicReference(_)));
    }

    #[test]
    fn ancestor_lookup_and_instances() {
        let f = forest(
            "model Wheel extends Body:\n  radius: Real = scale * 0.1\nmodel Cart:\n  scale: Real = 2\n  w: Wheel = Wheel(mass = 3)\n  r: Real = w.radius\n",
        );
        let t = resolve("Cart", &f).unwrap();
        assert_eq!(t.number("w.radius"), Some(0.2));
        assert_eq!(t.number("r"), Some(0.2));
        assert_eq!(t.body("w").unwrap().mass, 3.0);
    }

    #[test]
    fn flatten_is_idempotent() {
        let f = forest(
            "model T:\n  t: Real = 1\nmodel B extends Body:\n  b: Real = 2\nmodel D extends B with T:\n  b: Real = 3\n  d: Real = b\n",
        );
        let once = flatten("D", &f).unwrap();
        let mut f2 = f.clone();
        for u in &mut f2.units {
            for m in &mut u.models {
                if m.name == "D" {
                    *m = once.clone();
                }
            }
        }
        let twice = flatten("D", &f2).unwrap();
        assert_eq!(once, twice);
        assert_eq!(resolve("D", &f).unwrap(), resolve("D", &f2).unwrap());
    }
}
