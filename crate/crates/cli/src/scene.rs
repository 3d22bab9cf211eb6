//! Scene files: a JSON list of bodies, each a capsule or a padded polygon.

use std::path::Path;

use diffprox::geometry::{Capsule, PaddedPolygon, Pose};
use diffprox::Shape;
use nalgebra::{DMatrix, DVector, Vector3, Vector4};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneFile {
    bodies: Vec<BodySpec>,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
enum BodyKind {
    Capsule,
    PaddedPolygon,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegularNgon {
    n: usize,
    circumradius: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BodySpec {
    name: String,
    kind: BodyKind,
    r: [f64; 3],
    q: [f64; 4],
    #[serde(rename = "R")]
    radius: f64,
    #[serde(rename = "L")]
    length: Option<f64>,
    #[serde(rename = "C")]
    c: Option<Vec<[f64; 2]>>,
    d: Option<Vec<f64>>,
    regular_ngon: Option<RegularNgon>,
}

#[derive(Debug, Clone)]
pub struct Body {
    pub name: String,
    pub shape: Shape,
}

/// 1-based line of the body's `"name"` entry, for error messages.
fn line_of(text: &str, name: &str) -> Option<usize> {
    let needle = format!("\"{name}\"");
    text.lines()
        .position(|l| l.contains("\"name\"") && l.contains(&needle))
        .map(|i| i + 1)
}

impl BodySpec {
    fn build(&self) -> Result<Shape, String> {
        let q = Vector4::from(self.q);
        let norm = q.norm();
        if (norm - 1.0).abs() > diffprox::geometry::UNIT_QUAT_TOL {
            return Err(format!("quaternion q has norm {norm}, expected 1"));
        }
        let pose = Pose::new(Vector3::from(self.r), q).map_err(|e| e.to_string())?;
        match self.kind {
            BodyKind::Capsule => {
                if self.c.is_some() || self.d.is_some() || self.regular_ngon.is_some() {
                    return Err("capsule takes L only, not C, d or regular_ngon".into());
                }
                let length = self.length.ok_or("capsule needs a length L")?;
                Capsule::new(pose, length, self.radius)
                    .map(Shape::from)
                    .map_err(|e| e.to_string())
            }
            BodyKind::PaddedPolygon => {
                if self.length.is_some() {
                    return Err("padded_polygon does not take L".into());
                }
                let poly = match (&self.c, &self.d, &self.regular_ngon) {
                    (Some(c), Some(d), None) => {
                        if c.len() != d.len() {
                            return Err(format!("C has {} rows but d has {} entries", c.len(), d.len()));
                        }
                        let cm = DMatrix::from_fn(c.len(), 2, |i, j| c[i][j]);
                        PaddedPolygon::new(pose, cm, DVector::from_vec(d.clone()), self.radius)
                    }
                    (None, None, Some(ngon)) => PaddedPolygon::regular(pose, ngon.n, ngon.circumradius, self.radius),
                    _ => return Err("padded_polygon needs either C and d, or regular_ngon".into()),
                };
                poly.map(Shape::from).map_err(|e| e.to_string())
            }
        }
    }
}

pub fn parse_scene(text: &str) -> Result<Vec<Body>, CliError> {
    let scene: SceneFile = serde_json::from_str(text)
        .map_err(|e| CliError::Validation(format!("invalid scene (line {}, column {}): {e}", e.line(), e.column())))?;
    scene
        .bodies
        .iter()
        .map(|spec| {
            spec.build()
                .map(|shape| Body {
                    name: spec.name.clone(),
                    shape,
                })
                .map_err(|msg| {
                    let at = line_of(text, &spec.name).map(|l| format!(" (line {l})")).unwrap_or_default();
                    CliError::Validation(format!("body '{}'{at}: {msg}", spec.name))
                })
        })
        .collect()
}

pub fn load_scene(path: &Path) -> Result<Vec<Body>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
    parse_scene(&text).map_err(|e| match e {
        CliError::Validation(msg) => CliError::Validation(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// The two bodies of a pair query.
pub fn load_pair(path: &Path) -> Result<(Body, Body), CliError> {
    let mut bodies = load_scene(path)?;
    if bodies.len() != 2 {
        return Err(CliError::Validation(format!(
            "{}: pair queries need exactly 2 bodies, found {}",
            path.display(),
            bodies.len()
        )));
    }
    let b = bodies.pop().expect("two bodies");
    let a = bodies.pop().expect("two bodies");
    Ok((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_CAPSULES: &str = r#"{
  "bodies": [
    {"name": "a", "kind": "capsule", "r": [0, 0, 0], "q": [1, 0, 0, 0], "R": 0.5, "L": 2},
    {"name": "b", "kind": "capsule", "r": [3, 0, 0], "q": [1, 0, 0, 0], "R": 0.5, "L": 2}
  ]
}"#;

    #[test]
    fn parses_capsules() {
        let bodies = parse_scene(TWO_CAPSULES).unwrap();
        assert_eq!(bodies.len(), 2);
        assert_eq!(bodies[1].name, "b");
        assert!(matches!(bodies[0].shape, Shape::Capsule(_)));
    }

    #[test]
    fn parses_polygons_both_ways() {
        let text = r#"{"bodies": [
            {"name": "sq", "kind": "padded_polygon", "r": [0,0,0], "q": [1,0,0,0], "R": 0.1,
             "C": [[1,0],[0,1],[-1,0],[0,-1]], "d": [0.5,0.5,0.5,0.5]},
            {"name": "hex", "kind": "padded_polygon", "r": [0,0,2], "q": [1,0,0,0], "R": 0.1,
             "regular_ngon": {"n": 6, "circumradius": 1.0}}
        ]}"#;
        let bodies = parse_scene(text).unwrap();
        match &bodies[1].shape {
            Shape::Polygon(p) => assert_eq!(p.num_sides(), 6),
            _ => panic!("expected a polygon"),
        }
    }

    #[test]
    fn bad_quaternion_names_the_body_and_line() {
        let text = TWO_CAPSULES.replace(r#""r": [3, 0, 0], "q": [1, 0, 0, 0]"#, r#""r": [3, 0, 0], "q": [0.9, 0, 0, 0]"#);
        match parse_scene(&text) {
            Err(CliError::Validation(msg)) => {
                assert!(msg.contains("'b'"), "{msg}");
                assert!(msg.contains("line 4"), "{msg}");
                assert!(msg.contains("norm"), "{msg}");
            }
            other => panic!("expected a validation error, got {other:?}"),
        }
    }

    #[test]
    fn syntax_errors_carry_position() {
        match parse_scene("{\n  \"bodies\": [\n    {\"name\": }\n") {
            Err(CliError::Validation(msg)) => assert!(msg.contains("line 3"), "{msg}"),
            other => panic!("expected a validation error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_mixed_polygon_specs() {
        let text = r#"{"bodies": [{"name": "p", "kind": "padded_polygon", "r": [0,0,0], "q": [1,0,0,0], "R": 0.1,
            "regular_ngon": {"n": 4, "circumradius": 1.0}, "d": [1,1,1,1]}]}"#;
        assert!(matches!(parse_scene(text), Err(CliError::Validation(_))));
    }

    #[test]
    fn rejects_unknown_fields() {
        let text = r#"{"bodies": [{"name": "a", "kind": "capsule", "r": [0,0,0], "q": [1,0,0,0], "R": 0.1, "L": 1, "mass": 2}]}"#;
        assert!(matches!(parse_scene(text), Err(CliError::Validation(_))));
    }
}
