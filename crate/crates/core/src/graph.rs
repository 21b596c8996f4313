//! Semantic scene graph: objects with attribute sets, directed relation
//! triples and a client-supplied salience ranking; salient-object 3D
//! bounding boxes from labeled point clouds; object-centric text
//! decoding.
//!
//! The graph itself comes from a pluggable client (a remote service or a
//! deterministic fixture-backed mock); this module validates the payload
//! and owns everything downstream of it.

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::pano::azimuth_of;
use crate::raycast::Aabb;
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::PathBuf;

/// Wire format of a scene graph payload.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphPayload {
    pub objects: Vec<ObjectRecord>,
    #[serde(default)]
    pub attributes: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub relations: Vec<[String; 3]>,
    #[serde(default)]
    pub ranking: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ObjectRecord {
    pub id: String,
    pub category: String,
}

/// Validated scene graph. Attributes are kept sorted and relations in a
/// canonical order so every consumer sees one deterministic view.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneGraph {
    objects: Vec<ObjectRecord>,
    attributes: BTreeMap<String, Vec<String>>,
    relations: Vec<(String, String, String)>,
    ranking: Vec<String>,
}

impl SceneGraph {
    /// Validates a payload: unique ids, existing relation endpoints and
    /// attribute keys, ranking a permutation of the objects. Errors name
    /// the offending field path.
    pub fn from_payload(payload: GraphPayload) -> Result<Self> {
        let mut ids = BTreeSet::new();
        for (i, o) in payload.objects.iter().enumerate() {
            if o.id.is_empty() {
                return Err(Error::parse(format!("objects[{i}].id: empty id")));
            }
            if !ids.insert(o.id.clone()) {
                return Err(Error::parse(format!("objects[{i}].id: duplicate id '{}'", o.id)));
            }
        }
        for key in payload.attributes.keys() {
            if !ids.contains(key) {
                return Err(Error::parse(format!("attributes.{key}: unknown object id")));
            }
        }
        for (i, rel) in payload.relations.iter().enumerate() {
            if !ids.contains(&rel[0]) {
                return Err(Error::parse(format!(
                    "relations[{i}].source: unknown object id '{}'",
                    rel[0]
                )));
            }
            if !ids.contains(&rel[2]) {
                return Err(Error::parse(format!(
                    "relations[{i}].target: unknown object id '{}'",
                    rel[2]
                )));
            }
        }
        let ranking = if payload.ranking.is_empty() && payload.objects.is_empty() {
            Vec::new()
        } else {
            let rank_set: BTreeSet<&String> = payload.ranking.iter().collect();
            if rank_set.len() != payload.ranking.len() {
                return Err(Error::parse("ranking: contains duplicates"));
            }
            if rank_set.len() != ids.len() || !payload.ranking.iter().all(|r| ids.contains(r)) {
                return Err(Error::parse("ranking: must be a permutation of the object ids"));
            }
            payload.ranking
        };
        let mut attributes = payload.attributes;
        for v in attributes.values_mut() {
            v.sort();
            v.dedup();
        }
        let mut relations: Vec<(String, String, String)> = payload
            .relations
            .into_iter()
            .map(|[s, r, t]| (s, r, t))
            .collect();
        relations.sort();
        relations.dedup();
        Ok(SceneGraph { objects: payload.objects, attributes, relations, ranking })
    }

    pub fn parse_json(json: &str) -> Result<Self> {
        let payload: GraphPayload =
            serde_json::from_str(json).map_err(|e| Error::parse(format!("graph payload: {e}")))?;
        Self::from_payload(payload)
    }

    pub fn to_payload(&self) -> GraphPayload {
        GraphPayload {
            objects: self.objects.clone(),
            attributes: self.attributes.clone(),
            relations: self
                .relations
                .iter()
                .map(|(s, r, t)| [s.clone(), r.clone(), t.clone()])
                .collect(),
            ranking: self.ranking.clone(),
        }
    }

    pub fn objects(&self) -> &[ObjectRecord] {
        &self.objects
    }

    pub fn relations(&self) -> &[(String, String, String)] {
        &self.relations
    }

    pub fn attributes_of(&self, id: &str) -> &[String] {
        self.attributes.get(id).map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn category_of(&self, id: &str) -> Option<&str> {
        self.objects.iter().find(|o| o.id == id).map(|o| o.category.as_str())
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    /// First min(k, |O|) ids of the client-supplied salience ranking.
    pub fn select_salient(&self, k: usize) -> Vec<&str> {
        self.ranking.iter().take(k).map(|s| s.as_str()).collect()
    }

    /// Deterministic one-line description of an object, its attributes
    /// and all incident relations (sorted by relation label, then the
    /// other endpoint's id).
    pub fn subgraph_to_text(&self, id: &str) -> Result<String> {
        let category = self
            .category_of(id)
            .ok_or_else(|| Error::domain(format!("unknown object id '{id}'")))?;
        let mut text = String::from("a ");
        for attr in self.attributes_of(id) {
            text.push_str(attr);
            text.push(' ');
        }
        text.push_str(category);

        #[derive(PartialEq, Eq, PartialOrd, Ord)]
        struct Incident<'a> {
            rel: &'a str,
            other: &'a str,
            outgoing: bool,
        }
        let mut incident: Vec<Incident> = Vec::new();
        for (s, r, t) in &self.relations {
            if s == id {
                incident.push(Incident { rel: r, other: t, outgoing: true });
            } else if t == id {
                incident.push(Incident { rel: r, other: s, outgoing: false });
            }
        }
        incident.sort();
        for (i, inc) in incident.iter().enumerate() {
            let other_cat = self.category_of(inc.other).unwrap_or(inc.other);
            if i > 0 {
                text.push(',');
            }
            if inc.outgoing {
                text.push_str(&format!(" {} a {}", inc.rel, other_cat));
            } else {
                text.push_str(&format!(" with a {} {} it", other_cat, inc.rel));
            }
        }
        Ok(text)
    }
}

/// Boundary to the scene-graph provider.
pub trait VlmClient {
    /// Returns a serialized [`GraphPayload`] for the panorama + prompt.
    fn request(&self, panorama_ref: &str, prompt: &str) -> Result<String>;
}

/// Deterministic mock: returns the fixture file contents regardless of
/// the inputs (pure by construction).
pub struct MockVlmClient {
    pub fixture: PathBuf,
}

impl VlmClient for MockVlmClient {
    fn request(&self, _panorama_ref: &str, _prompt: &str) -> Result<String> {
        std::fs::read_to_string(&self.fixture)
            .map_err(|e| Error::Transport(format!("fixture {}: {e}", self.fixture.display())))
    }
}

/// Minimal HTTP POST client for a remote graph service (http only).
/// The request body is a JSON object {"panorama": ..., "prompt": ...};
/// the response body must be a graph payload.
pub struct HttpVlmClient {
    pub endpoint: String,
}

impl VlmClient for HttpVlmClient {
    fn request(&self, panorama_ref: &str, prompt: &str) -> Result<String> {
        let rest = self.endpoint.strip_prefix("http://").ok_or_else(|| {
            Error::Transport(format!("endpoint must be http://..., got {}", self.endpoint))
        })?;
        let (host, path) = match rest.find('/') {
            Some(i) => (&rest[..i], &rest[i..]),
            None => (rest, "/"),
        };
        let body = serde_json::json!({ "panorama": panorama_ref, "prompt": prompt }).to_string();
        let mut stream = std::net::TcpStream::connect(host)
            .map_err(|e| Error::Transport(format!("connect {host}: {e}")))?;
        stream
            .set_read_timeout(Some(std::time::Duration::from_secs(30)))
            .map_err(|e| Error::Transport(e.to_string()))?;
        let request = format!(
            "POST {path} HTTP/1.1\r\nHost: {host}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
            body.len()
        );
        stream
            .write_all(request.as_bytes())
            .map_err(|e| Error::Transport(format!("send: {e}")))?;
        let mut response = String::new();
        stream
            .read_to_string(&mut response)
            .map_err(|e| Error::Transport(format!("recv: {e}")))?;
        let (head, payload) = response
            .split_once("\r\n\r\n")
            .ok_or_else(|| Error::Transport("malformed HTTP response".to_string()))?;
        let status = head.lines().next().unwrap_or_default();
        if !status.contains(" 200") {
            return Err(Error::Transport(format!("service returned '{status}'")));
        }
        Ok(payload.to_string())
    }
}

/// Requests, parses and validates a scene graph.
pub fn build_graph(client: &dyn VlmClient, panorama_ref: &str, prompt: &str) -> Result<SceneGraph> {
    let payload = client.request(panorama_ref, prompt)?;
    SceneGraph::parse_json(&payload)
}

/// A salient object with its recovered 3D extent.
#[derive(Debug, Clone)]
pub struct SalientObject {
    pub id: String,
    pub bbox: Aabb,
    /// Box center; the y component comes from the box center as well.
    pub centroid: Vector3<f64>,
    /// Horizontal-plane diagonal of the box.
    pub diag_scale: f64,
    /// Azimuth of the centroid in [0, 2*pi).
    pub azimuth: f64,
}

/// Fraction of farthest points discarded before the extent computation,
/// guarding boxes against label bleed.
pub const BBOX_TRIM_FRACTION: f64 = 0.02;

/// Axis-aligned bounding boxes of labeled objects in a per-pixel point
/// cloud. `salient` pairs each label value with its graph object id;
/// labels with no pixels or a degenerate extent are dropped with a
/// warning.
pub fn object_bboxes(
    labels: &Grid<u32>,
    cloud: &Grid<[f32; 3]>,
    salient: &[(u32, String)],
) -> Result<Vec<SalientObject>> {
    if labels.width() != cloud.width() || labels.height() != cloud.height() {
        return Err(Error::contract("labels and cloud must share a resolution"));
    }
    let mut out = Vec::new();
    for (label, id) in salient {
        let mut points: Vec<Vector3<f64>> = Vec::new();
        for v in 0..labels.height() {
            for u in 0..labels.width() {
                if labels.get(u, v) == *label {
                    let p = cloud.get(u, v);
                    points.push(Vector3::new(p[0] as f64, p[1] as f64, p[2] as f64));
                }
            }
        }
        if points.is_empty() {
            log::warn!("salient object '{id}' (label {label}) has no labeled pixels; dropped");
            continue;
        }
        let mean = points.iter().sum::<Vector3<f64>>() / points.len() as f64;
        // Discard the farthest 2% of points (ties broken by coordinates so
        // the result is permutation invariant).
        points.sort_by(|a, b| {
            let da = (a - mean).norm();
            let db = (b - mean).norm();
            da.partial_cmp(&db)
                .unwrap()
                .then(a.x.partial_cmp(&b.x).unwrap())
                .then(a.y.partial_cmp(&b.y).unwrap())
                .then(a.z.partial_cmp(&b.z).unwrap())
        });
        let keep = points.len() - (BBOX_TRIM_FRACTION * points.len() as f64).ceil() as usize;
        let keep = keep.max(1);
        let mut bbox = Aabb::empty();
        for p in &points[..keep] {
            bbox.grow_point(p);
        }
        let ext = bbox.extent();
        let diag = (ext.x * ext.x + ext.z * ext.z).sqrt();
        if diag <= 1e-12 {
            log::warn!("salient object '{id}' (label {label}) has a degenerate box; dropped");
            continue;
        }
        let centroid = bbox.center();
        out.push(SalientObject {
            id: id.clone(),
            bbox,
            centroid,
            diag_scale: diag,
            azimuth: azimuth_of(&Vector3::new(centroid.x, 0.0, centroid.z)),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture_path() -> PathBuf {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/graph_livingroom.json")
    }

    #[test]
    fn fixture_parses_with_expected_shape() {
        let client = MockVlmClient { fixture: fixture_path() };
        let g = build_graph(&client, "pano.png", "describe the scene").unwrap();
        assert_eq!(g.objects().len(), 3);
        assert_eq!(g.relations().len(), 1);
        assert_eq!(
            g.relations()[0],
            ("coffeetable_0".to_string(), "on".to_string(), "rug_0".to_string())
        );
    }

    #[test]
    fn empty_graph_is_valid() {
        let g = SceneGraph::parse_json(r#"{"objects": []}"#).unwrap();
        assert!(g.is_empty());
        assert!(g.select_salient(5).is_empty());
    }

    #[test]
    fn dangling_relation_rejected_with_field_path() {
        let err = SceneGraph::parse_json(
            r#"{"objects": [{"id": "a", "category": "sofa"}],
                "relations": [["a", "on", "ghost"]],
                "ranking": ["a"]}"#,
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("relations[0].target"), "{msg}");
    }

    #[test]
    fn duplicate_ids_rejected() {
        let err = SceneGraph::parse_json(
            r#"{"objects": [{"id": "a", "category": "sofa"}, {"id": "a", "category": "rug"}],
                "ranking": ["a", "a"]}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("objects[1].id"));
    }

    #[test]
    fn ranking_must_be_permutation() {
        let err = SceneGraph::parse_json(
            r#"{"objects": [{"id": "a", "category": "sofa"}, {"id": "b", "category": "rug"}],
                "ranking": ["a"]}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("ranking"));
    }

    #[test]
    fn salient_selection_is_a_prefix_function() {
        let g = SceneGraph::parse_json(
            r#"{"objects": [{"id": "a", "category": "x"}, {"id": "b", "category": "y"},
                            {"id": "c", "category": "z"}],
                "ranking": ["b", "a", "c"]}"#,
        )
        .unwrap();
        assert!(g.select_salient(0).is_empty());
        assert_eq!(g.select_salient(2), vec!["b", "a"]);
        assert_eq!(g.select_salient(9), vec!["b", "a", "c"]);
        for k in 0..3 {
            assert_eq!(g.select_salient(k), g.select_salient(k + 1)[..k].to_vec());
        }
    }

    #[test]
    fn subgraph_text_matches_template() {
        let client = MockVlmClient { fixture: fixture_path() };
        let g = build_graph(&client, "p", "q").unwrap();
        assert_eq!(g.subgraph_to_text("coffeetable_0").unwrap(), "a wooden coffeetable on a rug");
        assert_eq!(g.subgraph_to_text("sofa_0").unwrap(), "a red sofa");
        assert_eq!(g.subgraph_to_text("rug_0").unwrap(), "a rug with a coffeetable on it");
        assert!(g.subgraph_to_text("ghost").is_err());
    }

    #[test]
    fn subgraph_text_orders_relations_deterministically() {
        let g = SceneGraph::parse_json(
            r#"{"objects": [{"id": "t", "category": "table"}, {"id": "r", "category": "rug"},
                            {"id": "w", "category": "wall"}],
                "relations": [["t", "near", "w"], ["t", "on", "r"]],
                "ranking": ["t", "r", "w"]}"#,
        )
        .unwrap();
        assert_eq!(g.subgraph_to_text("t").unwrap(), "a table near a wall, on a rug");
    }

    #[test]
    fn bbox_diagonal_analytic() {
        // Points spanning x in [0,2], z in [0,1] -> S = sqrt(5).
        let n = 10usize;
        let labels = Grid::filled(n, n, 1u32);
        let cloud = Grid::from_fn(n, n, |u, v| {
            [2.0 * u as f32 / (n - 1) as f32, 0.5, v as f32 / (n - 1) as f32]
        });
        let boxes = object_bboxes(&labels, &cloud, &[(1, "obj".into())]).unwrap();
        assert_eq!(boxes.len(), 1);
        assert!((boxes[0].diag_scale - 5.0f64.sqrt()).abs() < 0.1);
    }

    #[test]
    fn degenerate_and_missing_objects_dropped() {
        let mut labels = Grid::filled(4, 4, 0u32);
        labels.set(1, 1, 1); // single pixel: degenerate box
        let cloud = Grid::filled(4, 4, [1.0f32, 0.0, 1.0]);
        let boxes =
            object_bboxes(&labels, &cloud, &[(1, "dot".into()), (2, "ghost".into())]).unwrap();
        assert!(boxes.is_empty());
    }

    #[test]
    fn bboxes_invariant_under_pixel_permutation() {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let n = 16usize;
        let mut vals: Vec<(u32, [f32; 3])> = (0..n * n)
            .map(|i| {
                let x = (i % n) as f32 * 0.1;
                let z = (i / n) as f32 * 0.07;
                (if i % 3 == 0 { 1 } else { 0 }, [x, 0.3, z])
            })
            .collect();
        let build = |vals: &[(u32, [f32; 3])]| {
            let labels = Grid::from_vec(n, n, vals.iter().map(|v| v.0).collect());
            let cloud = Grid::from_vec(n, n, vals.iter().map(|v| v.1).collect());
            object_bboxes(&labels, &cloud, &[(1, "o".into())]).unwrap()
        };
        let a = build(&vals);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        vals.shuffle(&mut rng);
        let b = build(&vals);
        assert!((a[0].bbox.min - b[0].bbox.min).norm() < 1e-12);
        assert!((a[0].bbox.max - b[0].bbox.max).norm() < 1e-12);
        assert_eq!(a[0].diag_scale, b[0].diag_scale);
    }

    #[test]
    fn synthetic_room_bbox_recovered_within_tolerance() {
        use crate::pano::{pixel_to_direction, CameraPose};
        use crate::scene::SyntheticScene;
        let true_box = Aabb::new(Vector3::new(0.9, -1.25, -0.6), Vector3::new(1.7, -0.3, 0.6));
        let scene = SyntheticScene::box_room(4.0, 2.5, 3.0).with_object("crate", &[], true_box);
        let (w, h) = (256, 128);
        let mut labels = Grid::filled(w, h, 0u32);
        let mut cloud = Grid::filled(w, h, [0.0f32; 3]);
        let pose = CameraPose::identity();
        for v in 0..h {
            for u in 0..w {
                let d = pixel_to_direction(u as f64, v as f64, w, h).unwrap();
                if let Some(hit) = scene.raycast(&pose.position, &d) {
                    labels.set(u, v, hit.object.map_or(0, |i| i as u32 + 1));
                    cloud.set(u, v, [hit.point.x as f32, hit.point.y as f32, hit.point.z as f32]);
                }
            }
        }
        let boxes = object_bboxes(&labels, &cloud, &[(1, "crate".into())]).unwrap();
        assert_eq!(boxes.len(), 1);
        let b = &boxes[0];
        // The recovered box must sit inside the true box (within 3% of the
        // extent) and recover the visible silhouette extents.
        let ext_true = true_box.extent();
        for i in 0..3 {
            assert!(
                b.bbox.min[i] >= true_box.min[i] - 0.03 * ext_true[i]
                    && b.bbox.max[i] <= true_box.max[i] + 0.03 * ext_true[i],
                "axis {i}: recovered [{}, {}] vs true [{}, {}]",
                b.bbox.min[i],
                b.bbox.max[i],
                true_box.min[i],
                true_box.max[i]
            );
        }
        assert!((b.bbox.min.x - true_box.min.x).abs() < 0.03 * ext_true.x);
        assert!((b.bbox.min.z - true_box.min.z).abs() < 0.05 + 0.03 * ext_true.z);
        assert!((b.bbox.max.z - true_box.max.z).abs() < 0.05 + 0.03 * ext_true.z);
    }

    #[test]
    fn unreachable_service_is_a_transport_error() {
        let client = HttpVlmClient { endpoint: "http://127.0.0.1:9".to_string() };
        match client.request("p", "q") {
            Err(Error::Transport(_)) => {}
            other => panic!("expected transport error, got {other:?}"),
        }
    }
}
