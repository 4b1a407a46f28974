//! JSON-lines scene files. One scene per line; category, attribute and
//! predicate tokens are stored as names and resolved against a semantic
//! graph on load. Instance ids are positional (0..n within a scene).

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::action_graph::SemanticGraph;
use crate::environment::{BoundingBox, GroundTruth, ObjectInstance, Scene};
use crate::error::{Result, VrlError};

#[derive(Debug, Serialize, Deserialize)]
struct RawInstance {
    /// [cx, cy, w, h]
    #[serde(rename = "box")]
    bbox: [f64; 4],
    scores: BTreeMap<String, f64>,
    objectness: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawGtObject {
    cat: String,
    #[serde(rename = "box")]
    bbox: [f64; 4],
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct RawGroundTruth {
    objects: Vec<RawGtObject>,
    #[serde(default)]
    attr_phrases: Vec<(usize, String)>,
    #[serde(default)]
    pred_phrases: Vec<(usize, String, usize)>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawScene {
    id: String,
    #[serde(default)]
    image_feature_key: String,
    instances: Vec<RawInstance>,
    gt: RawGroundTruth,
}

fn to_bbox(b: [f64; 4], line: usize) -> Result<BoundingBox> {
    BoundingBox::new(b[0], b[1], b[2], b[3]).map_err(|e| VrlError::Ingest {
        line,
        msg: e.to_string(),
    })
}

fn resolve_scene(raw: RawScene, graph: &SemanticGraph, line: usize) -> Result<Scene> {
    let cat = |name: &str| {
        graph.category_id(name).ok_or(VrlError::UnknownToken {
            kind: "category",
            token: name.to_string(),
            line,
        })
    };
    let mut instances = Vec::with_capacity(raw.instances.len());
    for (i, ri) in raw.instances.into_iter().enumerate() {
        let mut scores = BTreeMap::new();
        for (name, conf) in ri.scores {
            scores.insert(cat(&name)?, conf);
        }
        instances.push(ObjectInstance {
            id: i as u32,
            bbox: to_bbox(ri.bbox, line)?,
            category_scores: scores,
            objectness: ri.objectness,
        });
    }
    let mut gt = GroundTruth::default();
    for o in raw.gt.objects {
        gt.objects.push((cat(&o.cat)?, to_bbox(o.bbox, line)?));
    }
    for (i, name) in raw.gt.attr_phrases {
        let a = graph.attribute_id(&name).ok_or(VrlError::UnknownToken {
            kind: "attribute",
            token: name,
            line,
        })?;
        gt.attr_phrases.insert((i, a));
    }
    for (i, name, j) in raw.gt.pred_phrases {
        let p = graph.predicate_id(&name).ok_or(VrlError::UnknownToken {
            kind: "predicate",
            token: name,
            line,
        })?;
        gt.pred_phrases.insert((i, p, j));
    }
    let scene = Scene {
        image_feature_key: if raw.image_feature_key.is_empty() {
            raw.id.clone()
        } else {
            raw.image_feature_key
        },
        id: raw.id,
        instances,
        gt,
    };
    scene.validate().map_err(|e| VrlError::Ingest {
        line,
        msg: e.to_string(),
    })?;
    Ok(scene)
}

fn to_raw(scene: &Scene, graph: &SemanticGraph) -> Result<RawScene> {
    let mut instances = Vec::new();
    for inst in &scene.instances {
        let mut scores = BTreeMap::new();
        for (&c, &s) in &inst.category_scores {
            scores.insert(graph.category_name(c)?.to_string(), s);
        }
        instances.push(RawInstance {
            bbox: [inst.bbox.cx, inst.bbox.cy, inst.bbox.w, inst.bbox.h],
            scores,
            objectness: inst.objectness,
        });
    }
    let mut gt = RawGroundTruth::default();
    for (c, b) in &scene.gt.objects {
        gt.objects.push(RawGtObject {
            cat: graph.category_name(*c)?.to_string(),
            bbox: [b.cx, b.cy, b.w, b.h],
        });
    }
    for &(i, a) in &scene.gt.attr_phrases {
        gt.attr_phrases
            .push((i, graph.attribute_name(a)?.to_string()));
    }
    for &(i, p, j) in &scene.gt.pred_phrases {
        gt.pred_phrases
            .push((i, graph.predicate_name(p)?.to_string(), j));
    }
    Ok(RawScene {
        id: scene.id.clone(),
        image_feature_key: scene.image_feature_key.clone(),
        instances,
        gt,
    })
}

/// Load scenes, resolving all tokens against `graph`. Instances are capped to
/// the `instance_cap` highest-objectness ones per scene when given.
pub fn load_scenes(
    path: impl AsRef<Path>,
    graph: &SemanticGraph,
    instance_cap: Option<usize>,
) -> Result<Vec<Scene>> {
    let path = path.as_ref();
    let file =
        std::fs::File::open(path).map_err(|e| VrlError::io(path.display().to_string(), e))?;
    let mut scenes = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| VrlError::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawScene = serde_json::from_str(&line).map_err(|e| VrlError::Ingest {
            line: lineno,
            msg: e.to_string(),
        })?;
        let mut scene = resolve_scene(raw, graph, lineno)?;
        if let Some(cap) = instance_cap {
            scene.cap_instances(cap);
        }
        scenes.push(scene);
    }
    Ok(scenes)
}

pub fn save_scenes(path: impl AsRef<Path>, scenes: &[Scene], graph: &SemanticGraph) -> Result<()> {
    let path = path.as_ref();
    let mut file =
        std::fs::File::create(path).map_err(|e| VrlError::io(path.display().to_string(), e))?;
    for scene in scenes {
        let raw = to_raw(scene, graph)?;
        let line = serde_json::to_string(&raw).map_err(|e| VrlError::Json {
            path: path.display().to_string(),
            source: e,
        })?;
        writeln!(file, "{line}").map_err(|e| VrlError::io(path.display().to_string(), e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action_graph::{build_graph, PhraseCounts};
    use crate::synth::{generate_scene_set, SynthParams};

    fn test_graph() -> SemanticGraph {
        let counts = PhraseCounts {
            attribute_phrases: vec![
                ("girl".into(), "young".into(), 5),
                ("horse".into(), "brown".into(), 5),
            ],
            predicate_phrases: vec![
                ("girl".into(), "riding".into(), "horse".into(), 5),
                ("horse".into(), "near".into(), "girl".into(), 5),
            ],
        };
        build_graph(&counts, 1).unwrap()
    }

    #[test]
    fn round_trip_preserves_scenes() {
        let g = test_graph();
        let scenes = generate_scene_set(&g, 11, 5, &SynthParams::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.jsonl");
        save_scenes(&path, &scenes, &g).unwrap();
        let loaded = load_scenes(&path, &g, None).unwrap();
        assert_eq!(scenes, loaded);
    }

    #[test]
    fn unknown_predicate_names_line() {
        let g = test_graph();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        let good = r#"{"id":"a","instances":[{"box":[0,0,1,1],"scores":{"girl":0.9},"objectness":0.9}],"gt":{"objects":[{"cat":"girl","box":[0,0,1,1]}]}}"#;
        let bad = r#"{"id":"b","instances":[],"gt":{"objects":[{"cat":"girl","box":[0,0,1,1]}],"pred_phrases":[[0,"flying",0]]}}"#;
        std::fs::write(&path, format!("{good}\n{bad}\n")).unwrap();
        let err = load_scenes(&path, &g, None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("flying") && msg.contains("line 2"), "{msg}");
    }

    #[test]
    fn validator_pass_on_generated_set() {
        let g = test_graph();
        let scenes = generate_scene_set(&g, 3, 50, &SynthParams::default()).unwrap();
        for s in &scenes {
            s.validate().unwrap();
        }
    }
}
