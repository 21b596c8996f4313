//! Pipeline configuration: one file collecting every stage's parameters,
//! validated against documented ranges before any stage runs.

use nalgebra::Vector3;
use roam_core::error::{Error, Result};
use roam_core::field::{FieldConfig, FitConfig};
use roam_core::graph::SalientObject;
use roam_core::raycast::Aabb;
use roam_core::scene::{Opening, SyntheticScene};
use roam_core::trajectory::{ModulationParams, TrajectoryConfig};
use serde::{Deserialize, Serialize};
use std::path::Path;

fn default_seed() -> u64 {
    0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub scene: SceneSpec,
    #[serde(default)]
    pub stages: StageSpec,
    #[serde(default)]
    pub fit: FitSpec,
    #[serde(default)]
    pub graph: GraphSpec,
    #[serde(default)]
    pub trajectory: TrajectorySpec,
    #[serde(default)]
    pub dataset: DatasetSpec,
}

/// Analytic scene description for self-contained runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneSpec {
    /// Room extents (x, y, z), centered at the origin.
    pub room: [f64; 3],
    #[serde(default)]
    pub objects: Vec<ObjectSpec>,
    #[serde(default)]
    pub openings: Vec<OpeningSpec>,
    /// Optional relation triples for the generated scene graph.
    #[serde(default)]
    pub relations: Vec<[String; 3]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub category: String,
    #[serde(default)]
    pub attributes: Vec<String>,
    pub min: [f64; 3],
    pub max: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OpeningSpec {
    pub face: usize,
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageSpec {
    /// Panorama height for captures, renders and the mesh grid.
    pub pano_height: usize,
    /// Tangent-view resolution fed to the field fitter.
    pub view_res: usize,
    pub view_fov_deg: f64,
    pub edge_threshold: f64,
    pub fuse_tol: f64,
    /// Run the dataset stage.
    pub with_dataset: bool,
}

impl Default for StageSpec {
    fn default() -> Self {
        StageSpec {
            pano_height: 128,
            view_res: 64,
            view_fov_deg: roam_core::pano::ICOSA_DEFAULT_FOV_DEG,
            edge_threshold: roam_core::mesh::DEFAULT_EDGE_THRESHOLD,
            fuse_tol: roam_core::mesh::DEFAULT_FUSE_TOL,
            with_dataset: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitSpec {
    pub iters: usize,
    pub samples_per_view: usize,
    pub levels: usize,
    pub base_res: usize,
    pub max_res: usize,
    pub lr_affine: f64,
    pub lr_field: f64,
    pub lambda_n: f64,
    pub lambda_reg: f64,
    pub lambda_tv: f64,
}

impl Default for FitSpec {
    fn default() -> Self {
        FitSpec {
            iters: 250,
            samples_per_view: 512,
            levels: 5,
            base_res: 16,
            max_res: 128,
            lr_affine: 1e-1,
            lr_field: 1e-2,
            lambda_n: 0.01,
            lambda_reg: 0.1,
            lambda_tv: 0.01,
        }
    }
}

impl FitSpec {
    pub fn to_fit_config(&self, seed: u64) -> FitConfig {
        FitConfig {
            iters: self.iters,
            samples_per_view: self.samples_per_view,
            lr_affine: self.lr_affine,
            lr_field: self.lr_field,
            lambda_n: self.lambda_n,
            lambda_reg: self.lambda_reg,
            lambda_tv: self.lambda_tv,
            field: FieldConfig { levels: self.levels, base_res: self.base_res, max_res: self.max_res },
            seed,
            ..FitConfig::default()
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphSpec {
    /// Number of salient objects to keep.
    pub k: usize,
    /// Optional fixture path; when absent the run synthesizes a payload
    /// from the scene spec.
    pub fixture: Option<String>,
    pub prompt: String,
}

impl Default for GraphSpec {
    fn default() -> Self {
        GraphSpec { k: 5, fixture: None, prompt: "list the scene objects and relations".into() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub gamma: f64,
    pub knots: usize,
    pub views: usize,
    pub margin: f64,
    pub c_lambda: f64,
    pub c_sigma: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub perturb_lateral: f64,
    pub perturb_vertical: f64,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        let t = TrajectoryConfig::default();
        TrajectorySpec {
            gamma: t.gamma,
            knots: t.knots,
            views: t.views,
            margin: t.margin,
            c_lambda: t.modulation.c_lambda,
            c_sigma: t.modulation.c_sigma,
            sigma_min: t.modulation.sigma_min,
            sigma_max: t.modulation.sigma_max,
            perturb_lateral: t.perturb_lateral,
            perturb_vertical: t.perturb_vertical,
        }
    }
}

impl TrajectorySpec {
    pub fn to_trajectory_config(&self) -> TrajectoryConfig {
        TrajectoryConfig {
            gamma: self.gamma,
            knots: self.knots,
            views: self.views,
            margin: self.margin,
            modulation: ModulationParams {
                c_lambda: self.c_lambda,
                c_sigma: self.c_sigma,
                sigma_min: self.sigma_min,
                sigma_max: self.sigma_max,
                margin: self.margin,
            },
            perturb_lateral: self.perturb_lateral,
            perturb_vertical: self.perturb_vertical,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub trajectories: usize,
    pub points: usize,
    pub pano_height: usize,
    pub face_res: usize,
    pub clearance: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec { trajectories: 2, points: 5, pano_height: 128, face_res: 128, clearance: 0.25 }
    }
}

impl DatasetSpec {
    pub fn to_dataset_config(&self) -> roam_core::dataset::DatasetConfig {
        roam_core::dataset::DatasetConfig {
            pano_height: self.pano_height,
            face_res: self.face_res,
            clearance: self.clearance,
            ..roam_core::dataset::DatasetConfig::default()
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let config: PipelineConfig =
            toml::from_str(&text).map_err(|e| Error::parse(format!("{}: {e}", path.display())))?;
        Ok(config)
    }

    /// Range validation; runs before any stage.
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.trajectory.gamma && self.trajectory.gamma < 1.0) {
            return Err(Error::contract(format!(
                "trajectory.gamma must lie in (0, 1), got {}",
                self.trajectory.gamma
            )));
        }
        if self.trajectory.views == 0 || self.trajectory.knots < 4 {
            return Err(Error::contract("trajectory needs views >= 1 and knots >= 4"));
        }
        if self.stages.pano_height < 16 || self.stages.pano_height > 2048 {
            return Err(Error::contract("stages.pano_height must lie in [16, 2048]"));
        }
        if self.stages.view_res < 8 {
            return Err(Error::contract("stages.view_res must be at least 8"));
        }
        if !(self.stages.edge_threshold >= 0.0 && self.stages.fuse_tol >= 0.0) {
            return Err(Error::contract("thresholds must be non-negative"));
        }
        if self.fit.iters == 0 || self.fit.samples_per_view == 0 {
            return Err(Error::contract("fit.iters and fit.samples_per_view must be positive"));
        }
        if self.scene.room.iter().any(|&e| !(e > 0.0)) {
            return Err(Error::contract("scene.room extents must be positive"));
        }
        if self.dataset.trajectories == 0 || self.dataset.points == 0 {
            return Err(Error::contract("dataset.trajectories and dataset.points must be positive"));
        }
        self.build_scene()?.validate()?;
        self.fit.to_fit_config(self.seed).validate()?;
        Ok(())
    }

    pub fn build_scene(&self) -> Result<SyntheticScene> {
        let [ex, ey, ez] = self.scene.room;
        let mut scene = SyntheticScene::box_room(ex, ey, ez);
        for o in &self.scene.objects {
            let attrs: Vec<&str> = o.attributes.iter().map(|s| s.as_str()).collect();
            scene = scene.with_object(
                &o.category,
                &attrs,
                Aabb::new(Vector3::from_column_slice(&o.min), Vector3::from_column_slice(&o.max)),
            );
        }
        for op in &self.scene.openings {
            if op.face >= 6 {
                return Err(Error::contract(format!("opening face {} out of range", op.face)));
            }
            scene = scene.with_opening(Opening { face: op.face, lo: op.lo, hi: op.hi });
        }
        Ok(scene)
    }

    /// Scene-graph payload synthesized from the scene spec (used when no
    /// fixture is configured): object ids are "{category}_{index}" and
    /// the ranking follows the declaration order.
    pub fn synthesize_graph_payload(&self) -> serde_json::Value {
        let objects: Vec<serde_json::Value> = self
            .scene
            .objects
            .iter()
            .enumerate()
            .map(|(i, o)| {
                serde_json::json!({ "id": format!("{}_{i}", o.category), "category": o.category })
            })
            .collect();
        let mut attributes = serde_json::Map::new();
        for (i, o) in self.scene.objects.iter().enumerate() {
            if !o.attributes.is_empty() {
                attributes.insert(
                    format!("{}_{i}", o.category),
                    serde_json::json!(o.attributes.clone()),
                );
            }
        }
        let ranking: Vec<String> = self
            .scene
            .objects
            .iter()
            .enumerate()
            .map(|(i, o)| format!("{}_{i}", o.category))
            .collect();
        serde_json::json!({
            "objects": objects,
            "attributes": attributes,
            "relations": self.scene.relations,
            "ranking": ranking,
        })
    }
}

/// Serializable mirror of a salient object (bounding-box JSON format).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoxRecord {
    pub id: String,
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl From<&SalientObject> for BoxRecord {
    fn from(o: &SalientObject) -> Self {
        BoxRecord {
            id: o.id.clone(),
            min: [o.bbox.min.x, o.bbox.min.y, o.bbox.min.z],
            max: [o.bbox.max.x, o.bbox.max.y, o.bbox.max.z],
        }
    }
}

impl BoxRecord {
    pub fn to_salient(&self) -> SalientObject {
        let bbox = Aabb::new(
            Vector3::from_column_slice(&self.min),
            Vector3::from_column_slice(&self.max),
        );
        let centroid = bbox.center();
        let ext = bbox.extent();
        SalientObject {
            id: self.id.clone(),
            bbox,
            centroid,
            diag_scale: (ext.x * ext.x + ext.z * ext.z).sqrt(),
            azimuth: roam_core::pano::azimuth_of(&Vector3::new(centroid.x, 0.0, centroid.z)),
        }
    }
}

pub fn save_boxes(path: &Path, boxes: &[SalientObject]) -> Result<()> {
    let records: Vec<BoxRecord> = boxes.iter().map(BoxRecord::from).collect();
    std::fs::write(path, serde_json::to_string_pretty(&records)?)?;
    Ok(())
}

pub fn load_boxes(path: &Path) -> Result<Vec<SalientObject>> {
    let records: Vec<BoxRecord> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    Ok(records.iter().map(BoxRecord::to_salient).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_toml() -> &'static str {
        r#"
seed = 7
[scene]
room = [4.0, 2.5, 3.0]
[[scene.objects]]
category = "crate"
attributes = ["wooden"]
min = [0.9, -1.25, -0.5]
max = [1.6, -0.2, 0.5]
"#
    }

    #[test]
    fn toml_parses_with_defaults() {
        let config: PipelineConfig = toml::from_str(minimal_toml()).unwrap();
        config.validate().unwrap();
        assert_eq!(config.seed, 7);
        assert_eq!(config.trajectory.views, 24);
        assert_eq!(config.graph.k, 5);
    }

    #[test]
    fn gamma_out_of_range_rejected() {
        let mut config: PipelineConfig = toml::from_str(minimal_toml()).unwrap();
        config.trajectory.gamma = 1.5;
        let err = config.validate().unwrap_err();
        assert!(err.to_string().contains("gamma"));
    }

    #[test]
    fn synthesized_graph_payload_is_valid() {
        let config: PipelineConfig = toml::from_str(minimal_toml()).unwrap();
        let payload = config.synthesize_graph_payload();
        let graph = roam_core::graph::SceneGraph::parse_json(&payload.to_string()).unwrap();
        assert_eq!(graph.objects().len(), 1);
        assert_eq!(graph.select_salient(5), vec!["crate_0"]);
        assert_eq!(graph.subgraph_to_text("crate_0").unwrap(), "a wooden crate");
    }

    #[test]
    fn box_records_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let config: PipelineConfig = toml::from_str(minimal_toml()).unwrap();
        let scene = config.build_scene().unwrap();
        let obj = &scene.objects[0];
        let salient = BoxRecord {
            id: "crate_0".into(),
            min: [obj.aabb.min.x, obj.aabb.min.y, obj.aabb.min.z],
            max: [obj.aabb.max.x, obj.aabb.max.y, obj.aabb.max.z],
        }
        .to_salient();
        let path = dir.path().join("boxes.json");
        save_boxes(&path, &[salient]).unwrap();
        let back = load_boxes(&path).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].id, "crate_0");
        assert!((back[0].diag_scale - (0.7f64.powi(2) + 1.0).sqrt()).abs() < 1e-12);
    }
}
