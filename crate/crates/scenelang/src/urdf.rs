//! Minimal URDF import: links become bodies, joints become mates.
//!
//! Only kinematic structure and link masses are read. Visuals, collisions,
//! limits and transmissions are ignored.

use nalgebra::UnitQuaternion;

use crate::ast::*;
use crate::error::{PlxError, Result};

fn ident(raw: &str) -> String {
    let mut s: String = raw.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' }).collect();
    if s.is_empty() || s.starts_with(|c: char| c.is_ascii_digit()) {
        s.insert(0, '_');
    }
    s
}

fn num(v: f64) -> Expr {
    if v < 0.0 {
        Expr::new(ExprKind::Neg(Box::new(num(-v))), Span::default())
    } else {
        Expr::new(ExprKind::Number(v), Span::default())
    }
}

fn tuple(xs: &[f64]) -> Expr {
    Expr::new(ExprKind::Tuple(xs.iter().map(|&v| num(v)).collect()), Span::default())
}

fn triple(attr: Option<&str>, default: [f64; 3]) -> Result<[f64; 3]> {
    let Some(text) = attr else { return Ok(default) };
    let xs: Vec<f64> = text
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| PlxError::Urdf(format!("bad number `{t}`"))))
        .collect::<Result<_>>()?;
    if xs.len() != 3 {
        return Err(PlxError::Urdf(format!("expected 3 numbers, got `{text}`")));
    }
    Ok([xs[0], xs[1], xs[2]])
}

fn child<'a, 'i>(node: roxmltree::Node<'a, 'i>, name: &str) -> Option<roxmltree::Node<'a, 'i>> {
    node.children().find(|c| c.has_tag_name(name))
}

/// Converts a URDF document into one model named after the robot.
/// No link is anchored; the including model mates the root link to its own
/// bodies.
pub fn import_urdf(unit: &SourceUnit) -> Result<ParsedUnit> {
    let doc = roxmltree::Document::parse(&unit.text).map_err(|e| PlxError::Urdf(e.to_string()))?;
    let robot = doc.root_element();
    if !robot.has_tag_name("robot") {
        return Err(PlxError::Urdf("root element is not <robot>".into()));
    }
    let name = ident(robot.attribute("name").unwrap_or("Robot"));
    let mut model = ModelDecl::new(name);

    let mut links = Vec::new();
    for link in robot.children().filter(|c| c.has_tag_name("link")) {
        let lname = link.attribute("name").ok_or_else(|| PlxError::Urdf("link without name".into()))?;
        let mass = child(link, "inertial")
            .and_then(|i| child(i, "mass"))
            .and_then(|m| m.attribute("value"))
            .map(|v| v.parse::<f64>().map_err(|_| PlxError::Urdf(format!("bad mass `{v}`"))))
            .transpose()?;
        links.push((lname.to_string(), mass));
    }

    let mut children = Vec::new();
    for joint in robot.children().filter(|c| c.has_tag_name("joint")) {
        let jname = joint.attribute("name").unwrap_or("joint");
        let kind = match joint.attribute("type") {
            Some("fixed") => MateKind::Rigid,
            Some("revolute") | Some("continuous") => MateKind::Hinge,
            Some("prismatic") => MateKind::Prismatic,
            other => return Err(PlxError::Urdf(format!("joint `{jname}` has unsupported type {other:?}"))),
        };
        let parent = child(joint, "parent").and_then(|p| p.attribute("link"));
        let childl = child(joint, "child").and_then(|p| p.attribute("link"));
        let (Some(parent), Some(childl)) = (parent, childl) else {
            return Err(PlxError::Urdf(format!("joint `{jname}` lacks parent or child")));
        };
        for l in [parent, childl] {
            if !links.iter().any(|(n, _)| n == l) {
                return Err(PlxError::Urdf(format!("joint `{jname}` references unknown link `{l}`")));
            }
        }
        children.push(childl.to_string());
        let origin = child(joint, "origin");
        let xyz = triple(origin.and_then(|o| o.attribute("xyz")), [0.0; 3])?;
        let rpy = triple(origin.and_then(|o| o.attribute("rpy")), [0.0; 3])?;
        let q = UnitQuaternion::from_euler_angles(rpy[0], rpy[1], rpy[2]);
        let frame_a = FrameRef {
            body: vec![ident(parent)],
            position: (xyz != [0.0; 3]).then(|| tuple(&xyz)),
            rotation: (rpy != [0.0; 3]).then(|| tuple(&[q.w, q.i, q.j, q.k])),
            span: Span::default(),
        };
        let frame_b = FrameRef { body: vec![ident(childl)], position: None, rotation: None, span: Span::default() };
        let mut options = Vec::new();
        if kind != MateKind::Rigid {
            let axis = triple(child(joint, "axis").and_then(|a| a.attribute("xyz")), [1.0, 0.0, 0.0])?;
            let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
            if n == 0.0 {
                return Err(PlxError::Urdf(format!("joint `{jname}` has a zero axis")));
            }
            options.push(("axis".to_string(), tuple(&[axis[0] / n, axis[1] / n, axis[2] / n])));
            let actuated = child(joint, "mimic").is_none();
            options.push(("actuated".to_string(), Expr::new(ExprKind::Bool(actuated), Span::default())));
        }
        model.mates.push(MateDecl { kind, frame_a, frame_b, options, span: Span::default() });
    }

    if !links.iter().any(|(n, _)| !children.contains(n)) {
        return Err(PlxError::Urdf("no root link".into()));
    }
    for (lname, mass) in &links {
        let mut args = Vec::new();
        if let Some(m) = mass {
            args.push(Arg { name: Some("mass".into()), value: num(*m) });
        }
        model.fields.push(FieldDecl {
            name: ident(lname),
            ty: "Body".into(),
            value: Expr::new(ExprKind::Call("Body".into(), args), Span::default()),
            span: Span::default(),
        });
    }
    Ok(ParsedUnit { path: unit.path.clone(), imports: Vec::new(), models: vec![model] })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_link_arm() {
        let text = r#"<robot name="arm">
  <link name="base"><inertial><mass value="5"/></inertial></link>
  <link name="upper"/>
  <joint name="shoulder" type="revolute">
    <parent link="base"/><child link="upper"/>
    <origin xyz="0 0 0.5" rpy="0 0 0"/>
    <axis xyz="0 2 0"/>
  </joint>
</robot>"#;
        let u = import_urdf(&SourceUnit::new("arm.urdf", text)).unwrap();
        let m = &u.models[0];
        assert_eq!(m.name, "arm");
        assert_eq!(m.fields.len(), 2);
        assert_eq!(m.mates.len(), 1);
        assert_eq!(m.mates[0].kind, MateKind::Hinge);
    }
}
