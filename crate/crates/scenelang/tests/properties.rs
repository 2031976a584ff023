use proptest::prelude::*;
use scenelang::assemble::sample_param;
use scenelang::ast::*;
use scenelang::printer::print_unit;
use scenelang::*;

fn arb_expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (0.0f64..1e6).prop_map(|v| Expr::new(ExprKind::Number(v), Span::default())),
        "[a-z][a-z0-9_]{0,6}"
            .prop_filter("keyword", |s| !matches!(s.as_str(), "model" | "extends" | "with" | "mate" | "input" | "output" | "import" | "true" | "false" | "rot"))
            .prop_map(|s| Expr::new(ExprKind::Ref(vec![s]), Span::default())),
        any::<bool>().prop_map(|b| Expr::new(ExprKind::Bool(b), Span::default())),
        "[ -~]{0,8}".prop_map(|s| Expr::new(ExprKind::Str(s), Span::default())),
    ];
    leaf.prop_recursive(4, 24, 3, |inner| {
        prop_oneof![
            inner.clone().prop_map(|e| Expr::new(ExprKind::Neg(Box::new(e)), Span::default())),
            (inner.clone(), inner.clone(), 0..4u8).prop_map(|(a, b, op)| {
                let op = [BinOp::Add, BinOp::Sub, BinOp::Mul, BinOp::Div][op as usize].clone();
                Expr::new(ExprKind::Binary(op, Box::new(a), Box::new(b)), Span::default())
            }),
            (inner.clone(), inner.clone(), inner.clone())
                .prop_map(|(a, b, c)| Expr::new(ExprKind::Tuple(vec![a, b, c]), Span::default())),
            proptest::collection::vec(inner, 0..3).prop_map(|xs| Expr::new(
                ExprKind::Call("max".into(), xs.into_iter().map(|value| Arg { name: None, value }).collect()),
                Span::default()
            )),
        ]
    })
}

fn arb_unit() -> impl Strategy<Value = ParsedUnit> {
    proptest::collection::vec(arb_expr(), 1..6).prop_map(|exprs| {
        let mut m = ModelDecl::new("Generated");
        m.base = Some("Base".into());
        m.traits = vec!["T1".into(), "T2".into()];
        for (i, value) in exprs.into_iter().enumerate() {
            m.fields.push(FieldDecl { name: format!("f{i}"), ty: "Real".into(), value, span: Span::default() });
        }
        m.mates.push(MateDecl {
            kind: MateKind::Hinge,
            frame_a: FrameRef {
                body: vec!["a".into(), "b".into()],
                position: Some(Expr::new(ExprKind::Ref(vec!["p".into()]), Span::default())),
                rotation: None,
                span: Span::default(),
            },
            frame_b: FrameRef { body: vec!["c".into()], position: None, rotation: None, span: Span::default() },
            options: vec![("actuated".into(), Expr::new(ExprKind::Bool(true), Span::default()))],
            span: Span::default(),
        });
        ParsedUnit { path: "gen.plx".into(), imports: vec!["lib.plx".into()], models: vec![m] }
    })
}

proptest! {
    #[test]
    fn print_then_parse_is_identity(unit in arb_unit()) {
        let text = print_unit(&unit);
        let back = parse_unit("gen.plx", &text).unwrap_or_else(|e| panic!("{e}\n{text}"));
        prop_assert_eq!(back, unit);
    }

    #[test]
    fn loop_free_chains_assemble_exactly(
        links in proptest::collection::vec(((-2.0f64..2.0), (-2.0f64..2.0), (-3.2f64..3.2), 0..3usize), 1..8),
        seed in any::<u64>(),
    ) {
        let mut src = String::from("model Chain:\n  b0: Body = Body(position = (0.5, -1, 2))\n");
        for (i, (x, y, q, kind)) in links.iter().enumerate() {
            src.push_str(&format!("  b{}: Body = Body()\n", i + 1));
            let k = ["hinge", "prismatic", "rigid"][*kind];
            src.push_str(&format!(
                "  mate {k}(b{i} @ ({x:?}, {y:?}, 0.1), b{} @ (0.2, 0, 0), axis=(0, 0.6, 0.8), initial={q:?})\n",
                i + 1
            ));
        }
        let reg = MemoryRegistry::new().with("c.plx", &src);
        let forest = parse_source(&reg.unit("c.plx").unwrap(), &reg).unwrap();
        let tree = resolve("Chain", &forest).unwrap();
        let a = assemble(&tree, DEFAULT_TOLERANCE, seed).unwrap();
        prop_assert!(max_mate_residual(&a) < 1e-12);
        let b = assemble(&tree, DEFAULT_TOLERANCE, seed).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn randomization_stays_in_range_and_varies() {
    let src = "model R:\n  a: Real = random(0.14, 0.16)\n  b: Real = random(-3, 5)\n  base: Body = Body(position = (0, 0, a))\n";
    let reg = MemoryRegistry::new().with("r.plx", src);
    let forest = parse_source(&reg.unit("r.plx").unwrap(), &reg).unwrap();
    let tree = resolve("R", &forest).unwrap();
    let mut seen_a = Vec::new();
    let mut seen_b = Vec::new();
    for seed in 0..1000u64 {
        let t = assemble(&tree, DEFAULT_TOLERANCE, seed).unwrap();
        let a = t.number("a").unwrap();
        let b = t.number("b").unwrap();
        assert!((0.14..=0.16).contains(&a));
        assert!((-3.0..=5.0).contains(&b));
        assert_eq!(t.body("base").unwrap().transform.unwrap().position[2], a);
        seen_a.push(a);
        seen_b.push(b);
    }
    assert!(seen_a.iter().any(|v| *v != seen_a[0]));
    assert!(seen_b.iter().any(|v| *v != seen_b[0]));
}

#[test]
fn sample_param_streams_are_independent_of_other_parameters() {
    assert_eq!(sample_param(5, "x", 0.0, 1.0), sample_param(5, "x", 0.0, 1.0));
    assert_ne!(sample_param(5, "x", 0.0, 1.0), sample_param(5, "y", 0.0, 1.0));
}

#[test]
fn resolving_a_flattened_model_changes_nothing() {
    let src = "model T:\n  t: Real = 1\nmodel Base extends Body:\n  r: Real = 0.1\nmodel D extends Base with T:\n  r: Real = 2 * t\n  base: Body = Body(position = (0, 0, 0))\n";
    let reg = MemoryRegistry::new().with("f.plx", src);
    let forest = parse_source(&reg.unit("f.plx").unwrap(), &reg).unwrap();
    let flat = flatten("D", &forest).unwrap();
    let mut forest2 = forest.clone();
    forest2.units[0].models.retain(|m| m.name != "D");
    forest2.units[0].models.push(flat.clone());
    assert_eq!(flatten("D", &forest2).unwrap(), flat);
    assert_eq!(resolve("D", &forest).unwrap(), resolve("D", &forest2).unwrap());
}

#[test]
fn json_round_trip() {
    let tree = build_file(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/golden/08_fourbar.plx"), None, 0).unwrap();
    let back = ModelTree::from_json(&tree.to_json()).unwrap();
    assert_eq!(back, tree);
}
