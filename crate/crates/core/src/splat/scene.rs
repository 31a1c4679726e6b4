use std::path::Path;

use serde::{Deserialize, Serialize};

use super::camera::Camera;
use crate::diffcore::{ParamId, ParamStore};
use crate::error::{Error, Result};

fn ones() -> [f64; 3] {
    [1.0; 3]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub mu: [f64; 3],
    pub log_scales: [f64; 3],
    /// `(w, x, y, z)`; normalized before use.
    pub quat: [f64; 4],
    pub opacity_logit: f64,
    pub color: [f64; 3],
    #[serde(default = "ones")]
    pub gain: [f64; 3],
    #[serde(default)]
    pub offset: [f64; 3],
    /// Stable tag used to break depth ties; defaults to the file position.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<u64>,
}

impl Gaussian {
    pub fn new(mu: [f64; 3], scale: f64, opacity_logit: f64, color: [f64; 3]) -> Self {
        Self {
            mu,
            log_scales: [scale.ln(); 3],
            quat: [1.0, 0.0, 0.0, 0.0],
            opacity_logit,
            color,
            gain: [1.0; 3],
            offset: [0.0; 3],
            id: None,
        }
    }

    pub fn opacity(&self) -> f64 {
        crate::diffcore::sigmoid_value(self.opacity_logit)
    }

    fn validate(&self, index: usize) -> Result<()> {
        let finite = self
            .mu
            .iter()
            .chain(&self.log_scales)
            .chain(&self.quat)
            .chain(&self.color)
            .chain(&self.gain)
            .chain(&self.offset)
            .chain(std::iter::once(&self.opacity_logit))
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidScene(format!(
                "gaussian {index} has non-finite fields"
            )));
        }
        if self.quat.iter().map(|v| v * v).sum::<f64>() < 1e-12 {
            return Err(Error::InvalidScene(format!(
                "gaussian {index} has a zero quaternion"
            )));
        }
        Ok(())
    }
}

/// Gaussians with resolved stable ids.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GaussianCloud {
    pub gaussians: Vec<Gaussian>,
}

impl GaussianCloud {
    pub fn new(mut gaussians: Vec<Gaussian>) -> Self {
        for (i, g) in gaussians.iter_mut().enumerate() {
            g.id.get_or_insert(i as u64);
        }
        Self { gaussians }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn ids(&self) -> Vec<u64> {
        self.gaussians
            .iter()
            .enumerate()
            .map(|(i, g)| g.id.unwrap_or(i as u64))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub gaussians: Vec<Gaussian>,
    pub cameras: Vec<Camera>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background: Option<[f64; 3]>,
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        for (i, g) in self.gaussians.iter().enumerate() {
            g.validate(i)?;
        }
        if self.cameras.is_empty() {
            return Err(Error::InvalidScene("scene has no cameras".into()));
        }
        for c in &self.cameras {
            c.validate()?;
        }
        let mut ids: Vec<usize> = self.cameras.iter().map(|c| c.view_id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidScene("duplicate view_id".into()));
        }
        Ok(())
    }

    pub fn cloud(&self) -> GaussianCloud {
        GaussianCloud::new(self.gaussians.clone())
    }

    pub fn training_cameras(&self) -> Vec<&Camera> {
        self.cameras.iter().filter(|c| !c.held_out).collect()
    }

    pub fn held_out_cameras(&self) -> Vec<&Camera> {
        self.cameras.iter().filter(|c| c.held_out).collect()
    }

    pub fn background(&self) -> [f64; 3] {
        self.background.unwrap_or([0.0; 3])
    }
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<Scene> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let scene: Scene = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    scene.validate()?;
    Ok(scene)
}

pub fn save_scene(scene: &Scene, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(scene).map_err(|e| Error::json(path, e))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Handles of the per-Gaussian attributes inside a [`ParamStore`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SplatParams {
    pub count: usize,
    pub ids: Vec<u64>,
    pub means: ParamId,
    pub log_scales: ParamId,
    pub quats: ParamId,
    pub opacity_logits: ParamId,
    pub colors: ParamId,
    pub gains: ParamId,
    pub offsets: ParamId,
}

impl SplatParams {
    pub fn register(store: &mut ParamStore, cloud: &GaussianCloud) -> Self {
        let n = cloud.len();
        let gs = &cloud.gaussians;
        let flat = |f: &dyn Fn(&Gaussian) -> Vec<f64>| gs.iter().flat_map(f).collect::<Vec<f64>>();
        Self {
            count: n,
            ids: cloud.ids(),
            means: store.add("splat.means", flat(&|g| g.mu.to_vec()), &[n, 3]),
            log_scales: store.add(
                "splat.log_scales",
                flat(&|g| g.log_scales.to_vec()),
                &[n, 3],
            ),
            quats: store.add("splat.quats", flat(&|g| g.quat.to_vec()), &[n, 4]),
            opacity_logits: store.add(
                "splat.opacity_logits",
                flat(&|g| vec![g.opacity_logit]),
                &[n],
            ),
            colors: store.add("splat.colors", flat(&|g| g.color.to_vec()), &[n, 3]),
            gains: store.add("splat.gains", flat(&|g| g.gain.to_vec()), &[n, 3]),
            offsets: store.add("splat.offsets", flat(&|g| g.offset.to_vec()), &[n, 3]),
        }
    }

    pub fn geometry_ids(&self) -> [ParamId; 3] {
        [self.means, self.log_scales, self.quats]
    }

    pub fn cloud(&self, store: &ParamStore) -> GaussianCloud {
        let v3 = |id: ParamId, i: usize| {
            let s = &store.values(id)[i * 3..i * 3 + 3];
            [s[0], s[1], s[2]]
        };
        let gaussians = (0..self.count)
            .map(|i| {
                let q = &store.values(self.quats)[i * 4..i * 4 + 4];
                Gaussian {
                    mu: v3(self.means, i),
                    log_scales: v3(self.log_scales, i),
                    quat: [q[0], q[1], q[2], q[3]],
                    opacity_logit: store.values(self.opacity_logits)[i],
                    color: v3(self.colors, i),
                    gain: v3(self.gains, i),
                    offset: v3(self.offsets, i),
                    id: Some(self.ids[i]),
                }
            })
            .collect();
        GaussianCloud { gaussians }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::splat::look_at;

    fn scene() -> Scene {
        Scene {
            gaussians: vec![Gaussian::new([0.0; 3], 0.2, 0.5, [0.2, 0.4, 0.6])],
            cameras: vec![Camera {
                fx: 10.0,
                fy: 10.0,
                cx: 4.0,
                cy: 4.0,
                width: 8,
                height: 8,
                world_to_camera: look_at([0.0, 0.0, -2.0], [0.0; 3], [0.0, -1.0, 0.0]),
                near: 0.01,
                view_id: 3,
                held_out: false,
            }],
            background: None,
        }
    }

    #[test]
    fn json_round_trip_and_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scene.json");
        let s = scene();
        save_scene(&s, &path).unwrap();
        assert_eq!(load_scene(&path).unwrap(), s);

        let minimal = r#"{"gaussians":[{"mu":[0,0,0],"log_scales":[-1,-1,-1],"quat":[1,0,0,0],
            "opacity_logit":0.0,"color":[0.5,0.5,0.5]}],
            "cameras":[{"fx":10,"fy":10,"cx":4,"cy":4,"width":8,"height":8,
            "world_to_camera":[1,0,0,0, 0,1,0,0, 0,0,1,2, 0,0,0,1],"view_id":0}]}"#;
        std::fs::write(&path, minimal).unwrap();
        let s = load_scene(&path).unwrap();
        assert_eq!(s.gaussians[0].gain, [1.0; 3]);
        assert_eq!(s.gaussians[0].offset, [0.0; 3]);
        assert_eq!(s.cameras[0].near, 0.01);
        assert_eq!(s.cloud().ids(), vec![0]);
    }

    #[test]
    fn rejects_invalid_scenes() {
        let mut s = scene();
        s.gaussians[0].quat = [0.0; 4];
        assert!(s.validate().is_err());
        let mut s = scene();
        s.cameras.push(s.cameras[0].clone());
        assert!(s.validate().is_err());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(&path, "{").unwrap();
        assert!(matches!(load_scene(&path), Err(Error::Json { .. })));
    }

    #[test]
    fn params_round_trip() {
        let mut store = ParamStore::new();
        let cloud = scene().cloud();
        let p = SplatParams::register(&mut store, &cloud);
        assert_eq!(p.cloud(&store), cloud);
    }
}
