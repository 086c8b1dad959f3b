//! Human-readable scene descriptions (TOML).
//!
//! ```toml
//! background = [0.0, 0.0, 0.0]      # optional, defaults to black
//!
//! [[primitive]]
//! kind = "sphere"                   # sphere | box | plane | medium
//! center = [0.0, 0.0, 2.5]
//! radius = 0.8
//! amplitude = 40.0                  # peak density
//! softness = 0.02                   # boundary ramp width (solids)
//! texture = { kind = "checker", scale = 0.25,
//!             color_a = [0.9, 0.2, 0.2], color_b = [0.1, 0.1, 0.8] }
//! ```
//!
//! `box`/`medium` take `min`/`max`; `plane` takes `center`, `normal`,
//! `radius`, `thickness`. Texture kinds: `constant { color }`,
//! `checker { scale, color_a, color_b }`,
//! `noise { scale, seed, base, span }`.

use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::analytic::{AnalyticScene, Primitive, Shape};
use super::texture::Texture;

#[derive(Debug, Error)]
pub enum SceneFileError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("scene parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid scene: {0}")]
    Invalid(String),
}

#[derive(Debug, Serialize, Deserialize)]
struct SceneDoc {
    #[serde(default = "black")]
    background: [f64; 3],
    #[serde(rename = "primitive", default)]
    primitives: Vec<PrimitiveDoc>,
}

fn black() -> [f64; 3] {
    [0.0, 0.0, 0.0]
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PrimitiveDoc {
    kind: String,
    #[serde(default)]
    center: Option<[f64; 3]>,
    #[serde(default)]
    radius: Option<f64>,
    #[serde(default)]
    min: Option<[f64; 3]>,
    #[serde(default)]
    max: Option<[f64; 3]>,
    #[serde(default)]
    normal: Option<[f64; 3]>,
    #[serde(default)]
    thickness: Option<f64>,
    amplitude: f64,
    #[serde(default)]
    softness: f64,
    texture: Texture,
}

fn vec3(a: [f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

fn need<T: Copy>(v: Option<T>, kind: &str, field: &str) -> Result<T, SceneFileError> {
    v.ok_or_else(|| SceneFileError::Invalid(format!("{kind} primitive needs `{field}`")))
}

pub fn load_scene_str(text: &str) -> Result<AnalyticScene, SceneFileError> {
    let doc: SceneDoc = toml::from_str(text)?;
    if doc.primitives.is_empty() {
        return Err(SceneFileError::Invalid("scene has no primitives".into()));
    }
    let mut primitives = Vec::new();
    for (i, p) in doc.primitives.iter().enumerate() {
        let label = format!("primitive {i} ({})", p.kind);
        if !p.amplitude.is_finite() || p.amplitude < 0.0 {
            return Err(SceneFileError::Invalid(format!(
                "{label}: amplitude must be finite and non-negative"
            )));
        }
        if p.softness < 0.0 {
            return Err(SceneFileError::Invalid(format!("{label}: negative softness")));
        }
        let shape = match p.kind.as_str() {
            "sphere" => {
                let radius = need(p.radius, &p.kind, "radius")?;
                if radius <= 0.0 {
                    return Err(SceneFileError::Invalid(format!("{label}: radius must be > 0")));
                }
                Shape::Sphere {
                    center: vec3(need(p.center, &p.kind, "center")?),
                    radius,
                }
            }
            "box" | "medium" => {
                let min = vec3(need(p.min, &p.kind, "min")?);
                let max = vec3(need(p.max, &p.kind, "max")?);
                if (0..3).any(|a| min[a] >= max[a]) {
                    return Err(SceneFileError::Invalid(format!(
                        "{label}: min must be strictly below max on every axis"
                    )));
                }
                if p.kind == "box" {
                    Shape::Box { min, max }
                } else {
                    Shape::Medium { min, max }
                }
            }
            "plane" => {
                let normal = vec3(need(p.normal, &p.kind, "normal")?);
                if normal.norm() < 1e-12 {
                    return Err(SceneFileError::Invalid(format!("{label}: zero normal")));
                }
                let radius = need(p.radius, &p.kind, "radius")?;
                let thickness = need(p.thickness, &p.kind, "thickness")?;
                if radius <= 0.0 || thickness <= 0.0 {
                    return Err(SceneFileError::Invalid(format!(
                        "{label}: radius and thickness must be > 0"
                    )));
                }
                Shape::Plane {
                    center: vec3(need(p.center, &p.kind, "center")?),
                    normal: normal.normalize(),
                    radius,
                    thickness,
                }
            }
            other => {
                return Err(SceneFileError::Invalid(format!(
                    "primitive {i}: unknown kind {other:?} (expected sphere, box, plane, or medium)"
                )))
            }
        };
        primitives.push(Primitive {
            shape,
            amplitude: p.amplitude,
            softness: p.softness,
            texture: p.texture.clone(),
        });
    }
    Ok(AnalyticScene {
        primitives,
        background: doc.background,
    })
}

pub fn load_scene(path: &Path) -> Result<AnalyticScene, SceneFileError> {
    let text = std::fs::read_to_string(path).map_err(|e| SceneFileError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    load_scene_str(&text)
}

pub fn save_scene_string(scene: &AnalyticScene) -> String {
    let primitives = scene
        .primitives
        .iter()
        .map(|p| {
            let mut doc = PrimitiveDoc {
                kind: String::new(),
                center: None,
                radius: None,
                min: None,
                max: None,
                normal: None,
                thickness: None,
                amplitude: p.amplitude,
                softness: p.softness,
                texture: p.texture.clone(),
            };
            match &p.shape {
                Shape::Sphere { center, radius } => {
                    doc.kind = "sphere".into();
                    doc.center = Some([center.x, center.y, center.z]);
                    doc.radius = Some(*radius);
                }
                Shape::Box { min, max } => {
                    doc.kind = "box".into();
                    doc.min = Some([min.x, min.y, min.z]);
                    doc.max = Some([max.x, max.y, max.z]);
                }
                Shape::Medium { min, max } => {
                    doc.kind = "medium".into();
                    doc.min = Some([min.x, min.y, min.z]);
                    doc.max = Some([max.x, max.y, max.z]);
                }
                Shape::Plane { center, normal, radius, thickness } => {
                    doc.kind = "plane".into();
                    doc.center = Some([center.x, center.y, center.z]);
                    doc.normal = Some([normal.x, normal.y, normal.z]);
                    doc.radius = Some(*radius);
                    doc.thickness = Some(*thickness);
                }
            }
            doc
        })
        .collect();
    let doc = SceneDoc {
        background: scene.background,
        primitives,
    };
    toml::to_string_pretty(&doc).expect("scene serialization cannot fail")
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"
background = [0.05, 0.05, 0.05]

[[primitive]]
kind = "sphere"
center = [0.0, 0.0, 2.5]
radius = 0.8
amplitude = 40.0
softness = 0.02
texture = { kind = "constant", color = [0.9, 0.4, 0.1] }

[[primitive]]
kind = "plane"
center = [0.0, 0.6, 3.0]
normal = [0.0, 1.0, 0.0]
radius = 5.0
thickness = 0.05
amplitude = 60.0
softness = 0.01
texture = { kind = "checker", scale = 0.4, color_a = [0.9, 0.9, 0.9], color_b = [0.2, 0.2, 0.2] }
"#;

    #[test]
    fn parses_and_roundtrips() {
        let scene = load_scene_str(EXAMPLE).unwrap();
        assert_eq!(scene.primitives.len(), 2);
        assert_eq!(scene.background, [0.05, 0.05, 0.05]);
        let text = save_scene_string(&scene);
        let again = load_scene_str(&text).unwrap();
        assert_eq!(scene, again);
    }

    #[test]
    fn missing_fields_name_the_problem() {
        let bad = r#"
[[primitive]]
kind = "sphere"
amplitude = 1.0
texture = { kind = "constant", color = [1.0, 1.0, 1.0] }
"#;
        let err = load_scene_str(bad).unwrap_err().to_string();
        assert!(
            err.contains("sphere") && (err.contains("radius") || err.contains("center")),
            "error should name the primitive and a missing field: {err}"
        );
    }

    #[test]
    fn rejects_unknown_kind_and_bad_geometry() {
        let unknown = r#"
[[primitive]]
kind = "torus"
amplitude = 1.0
texture = { kind = "constant", color = [1.0, 1.0, 1.0] }
"#;
        assert!(load_scene_str(unknown).unwrap_err().to_string().contains("torus"));
        let inverted = r#"
[[primitive]]
kind = "box"
min = [1.0, 0.0, 0.0]
max = [0.0, 1.0, 1.0]
amplitude = 1.0
texture = { kind = "constant", color = [1.0, 1.0, 1.0] }
"#;
        assert!(load_scene_str(inverted).is_err());
        assert!(load_scene_str("").is_err(), "empty scene rejected");
    }
}
