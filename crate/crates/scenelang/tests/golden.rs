//! Runs every `tests/golden/NN_*.plx` file against the expectations written
//! in its leading `#` comment lines.
//!
//! Directives:
//! `expect: ok | error <Variant>`, `model: <name>`, `seed: <n>`,
//! `value: <path> = <number>`, `position: <body> = <x> <y> <z>`,
//! `census: <total> <actuated>`, `residual-below: <tol>`,
//! `fourbar: <ground> <crank> <coupler> <rocker> <crank angle>`,
//! `random-range: <path> <lo> <hi>`, `signals: <count>`.
//!
//! Files that assemble are also compared with `expected/<stem>.json`;
//! set `UPDATE_GOLDEN=1` to rewrite those snapshots.

use std::path::{Path, PathBuf};

use nalgebra::{Point3, Vector2};
use scenelang::printer::print_unit;
use scenelang::*;

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn cases() -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(golden_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| {
            let name = p.file_name().unwrap().to_string_lossy().to_string();
            name.ends_with(".plx") && name.as_bytes()[0].is_ascii_digit()
        })
        .collect();
    v.sort();
    v
}

struct Directives {
    lines: Vec<(String, String)>,
}

impl Directives {
    fn read(text: &str) -> Self {
        let lines = text
            .lines()
            .take_while(|l| l.starts_with('#'))
            .filter_map(|l| {
                let body = l.trim_start_matches('#').trim();
                let (k, v) = body.split_once(':')?;
                Some((k.trim().to_string(), v.trim().to_string()))
            })
            .collect();
        Directives { lines }
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.lines.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    fn all<'a>(&'a self, key: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.lines.iter().filter(move |(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

fn nums(s: &str) -> Vec<f64> {
    s.split_whitespace().map(|t| t.parse().unwrap()).collect()
}

fn variant(e: &PlxError) -> String {
    let dbg = format!("{e:?}");
    dbg.split(['(', ' ', '{']).next().unwrap().to_string()
}

fn run(path: &Path, seed: u64, model: Option<&str>) -> Result<ModelTree> {
    let forest = load_file(path)?;
    build(&forest, model, seed)
}

/// Circle–circle intersection: the coupler/rocker joint of a planar four-bar
/// with ground pivots at (0,0) and (g,0) and crank angle `theta`.
fn fourbar_joint(g: f64, a: f64, b: f64, c: f64, theta: f64) -> [Vector2<f64>; 2] {
    let p = Vector2::new(a * theta.cos(), a * theta.sin());
    let q = Vector2::new(g, 0.0);
    let d = (q - p).norm();
    let along = (b * b - c * c + d * d) / (2.0 * d);
    let h = (b * b - along * along).sqrt();
    let u = (q - p) / d;
    let n = Vector2::new(-u.y, u.x);
    let m = p + u * along;
    [m + n * h, m - n * h]
}

fn check_case(path: &Path) {
    let name = path.file_name().unwrap().to_string_lossy().to_string();
    let text = std::fs::read_to_string(path).unwrap();
    let d = Directives::read(&text);
    let seed: u64 = d.get("seed").map(|s| s.parse().unwrap()).unwrap_or(0);
    let model = d.get("model");
    let expect = d.get("expect").unwrap_or_else(|| panic!("{name}: missing expect"));
    let result = run(path, seed, model);

    if let Some(err) = expect.strip_prefix("error ") {
        match result {
            Ok(_) => panic!("{name}: expected {err}, got success"),
            Err(e) => assert_eq!(variant(&e), err, "{name}: wrong error: {e}"),
        }
        return;
    }
    assert_eq!(expect, "ok", "{name}");
    let tree = result.unwrap_or_else(|e| panic!("{name}: {e}"));

    for v in d.all("value") {
        let (p, x) = v.split_once('=').unwrap();
        let (p, x) = (p.trim(), x.trim().parse::<f64>().unwrap());
        let got = match p.rsplit_once('.') {
            Some((base, comp @ ("x" | "y" | "z"))) if tree.vec3(base).is_some() => {
                tree.vec3(base).unwrap()[["x", "y", "z"].iter().position(|c| *c == comp).unwrap()]
            }
            _ => tree.number(p).unwrap_or_else(|| panic!("{name}: no numeric parameter {p}")),
        };
        assert!((got - x).abs() <= 1e-12, "{name}: {p} = {got}, expected {x}");
    }
    for v in d.all("position") {
        let (p, xyz) = v.split_once('=').unwrap();
        let xyz = nums(xyz);
        let t = tree.body(p.trim()).unwrap_or_else(|| panic!("{name}: no body {p}")).transform.unwrap();
        for k in 0..3 {
            assert!((t.position[k] - xyz[k]).abs() < 1e-9, "{name}: {p} at {:?}", t.position);
        }
    }
    if let Some(c) = d.get("census") {
        let c = nums(c);
        let census = validate_machine(&tree);
        assert_eq!((census.total as f64, census.actuated as f64), (c[0], c[1]), "{name}");
    }
    if let Some(s) = d.get("signals") {
        assert_eq!(tree.signals.len(), s.parse::<usize>().unwrap(), "{name}");
    }
    if let Some(tol) = d.get("residual-below") {
        let tol: f64 = tol.parse().unwrap();
        let r = max_mate_residual(&tree);
        assert!(r < tol, "{name}: residual {r}");
    }
    if let Some(fb) = d.get("fourbar") {
        let [g, a, b, c, theta] = nums(fb)[..] else { panic!("{name}: fourbar needs 5 numbers") };
        let coupler = tree.body("coupler").unwrap().transform.unwrap().isometry();
        let rocker = tree.body("rocker").unwrap().transform.unwrap().isometry();
        let tip = coupler * Point3::new(b, 0.0, 0.0);
        let rocker_tip = rocker * Point3::new(c, 0.0, 0.0);
        assert!((tip - rocker_tip).norm() < 1e-6, "{name}: loop open");
        let sols = fourbar_joint(g, a, b, c, theta);
        let best = sols.iter().map(|s| (Vector2::new(tip.x, tip.y) - s).norm()).fold(f64::INFINITY, f64::min);
        assert!(best < 1e-6, "{name}: joint {tip:?} not in {sols:?}");
        assert!(tip.z.abs() < 1e-9);
    }
    for r in d.all("random-range") {
        let parts: Vec<&str> = r.split_whitespace().collect();
        let (p, lo, hi) = (parts[0], parts[1].parse::<f64>().unwrap(), parts[2].parse::<f64>().unwrap());
        let rp = tree.randomized.iter().find(|x| x.path == p).unwrap_or_else(|| panic!("{name}: {p} not randomized"));
        assert_eq!((rp.lo, rp.hi), (lo, hi));
        assert!(rp.value >= lo && rp.value <= hi);
    }

    let again = run(path, seed, model).unwrap();
    assert_eq!(tree.to_json(), again.to_json(), "{name}: flatten not reproducible");

    let stem = path.file_stem().unwrap().to_string_lossy().to_string();
    let snapshot = golden_dir().join("expected").join(format!("{stem}.json"));
    let json = tree.to_json();
    // Paths in the tree are model paths, never file paths, so snapshots are portable.
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(snapshot.parent().unwrap()).unwrap();
        std::fs::write(&snapshot, &json).unwrap();
    } else {
        let want = std::fs::read_to_string(&snapshot)
            .unwrap_or_else(|_| panic!("{name}: missing snapshot, run with UPDATE_GOLDEN=1"));
        assert_eq!(json, want, "{name}: output differs from snapshot");
    }
}

#[test]
fn corpus_has_at_least_fifteen_cases() {
    assert!(cases().len() >= 15, "only {} golden cases", cases().len());
}

#[test]
fn golden_corpus() {
    for path in cases() {
        check_case(&path);
    }
}

#[test]
fn golden_sources_round_trip_through_printer() {
    for path in cases() {
        let text = std::fs::read_to_string(&path).unwrap();
        let Ok(unit) = parse_unit("x.plx", &text) else { continue };
        let printed = print_unit(&unit);
        let reparsed = parse_unit("x.plx", &printed).unwrap();
        assert_eq!(unit, reparsed, "{}", path.display());
    }
}

#[test]
fn four_bar_oracle_self_check() {
    // Both intersection points are at the right distances from the pivots.
    let (g, a, b, c, t): (f64, f64, f64, f64, f64) = (4.0, 1.0, 3.5, 2.5, 0.7);
    let p = Vector2::new(a * t.cos(), a * t.sin());
    for s in fourbar_joint(g, a, b, c, t) {
        assert!(((s - p).norm() - b).abs() < 1e-12);
        assert!(((s - Vector2::new(g, 0.0)).norm() - c).abs() < 1e-12);
    }
}

#[test]
fn flatten_cli_is_bit_identical_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let src = golden_dir().join("21_randomized.plx");
    let out = |seed: u64, file: &str| {
        let p = dir.path().join(file);
        let status = std::process::Command::new(env!("CARGO_BIN_EXE_plx"))
            .args(["flatten", src.to_str().unwrap(), "--model", "Rover", "--seed", &seed.to_string(), "-o"])
            .arg(&p)
            .status()
            .unwrap();
        assert!(status.success());
        std::fs::read(p).unwrap()
    };
    assert_eq!(out(3, "a.json"), out(3, "b.json"));
    assert_ne!(out(3, "c.json"), out(4, "d.json"));
}

#[test]
fn check_cli_exit_codes() {
    let check = |file: &str| {
        std::process::Command::new(env!("CARGO_BIN_EXE_plx"))
            .args(["check", golden_dir().join(file).to_str().unwrap()])
            .output()
            .unwrap()
    };
    assert!(check("04_traits.plx").status.success());
    let bad = check("05_trait_conflict.plx");
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("trait conflict"));
}
