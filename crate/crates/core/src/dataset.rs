//! Synthetic multi-view datasets: clean renders of a scene plus their
//! degraded counterparts.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::degrade::{sample_view_params, DegradationParams, JitterRanges, Profile};
use crate::error::{Error, Result};
use crate::imaging::{load_image, save_image, Image};
use crate::splat::{load_scene, render, save_scene, Camera, RenderSettings, Scene};
use crate::trainer::TrainingView;

pub const CLEAN_DIR: &str = "clean";
pub const DEGRADED_DIR: &str = "degraded";
pub const SCENE_FILE: &str = "scene.json";
pub const PARAMS_FILE: &str = "params.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewRecord {
    pub view_id: usize,
    pub held_out: bool,
    pub file: String,
    pub params: DegradationParams,
}

/// Contents of `params.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub profile: String,
    pub seed: u64,
    pub views: Vec<ViewRecord>,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub scene: Scene,
    pub manifest: DatasetManifest,
    /// Indexed like `scene.cameras`.
    pub clean: Vec<Image>,
    pub degraded: Vec<Image>,
}

/// `view_XXX.png`, the file name of a view inside `clean/` and `degraded/`.
pub fn file_name(view_id: usize) -> String {
    format!("view_{view_id:03}.png")
}

/// Clean render of every camera, clamped to `[0, 1]`.
pub fn render_clean(scene: &Scene) -> Vec<Image> {
    let cloud = scene.cloud();
    let settings = RenderSettings::default().with_background(scene.background());
    scene
        .cameras
        .iter()
        .map(|c| render(&cloud, c, &settings).clamped())
        .collect()
}

/// Renders the scene and degrades each view with parameters drawn for
/// `profile` from `seed`.
pub fn synthesize(
    scene: &Scene,
    profile: Profile,
    seed: u64,
    jitter: &JitterRanges,
) -> Result<Dataset> {
    let params = sample_view_params(profile, seed, scene.cameras.len(), jitter);
    synthesize_with(scene, profile.name(), seed, &params)
}

/// Like [`synthesize`] with explicit per-camera parameters.
pub fn synthesize_with(
    scene: &Scene,
    profile: &str,
    seed: u64,
    params: &[DegradationParams],
) -> Result<Dataset> {
    scene.validate()?;
    degrade_views(scene, render_clean(scene), profile, seed, params)
}

/// Degrades supplied clean images (indexed like `scene.cameras`) instead of
/// rendering them.
pub fn synthesize_from_clean(
    scene: &Scene,
    clean: Vec<Image>,
    profile: Profile,
    seed: u64,
    jitter: &JitterRanges,
) -> Result<Dataset> {
    scene.validate()?;
    if clean.len() != scene.cameras.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} clean images for {} cameras",
            clean.len(),
            scene.cameras.len()
        )));
    }
    for (img, cam) in clean.iter().zip(&scene.cameras) {
        if (img.width(), img.height()) != (cam.width, cam.height) {
            return Err(Error::DimensionMismatch(format!(
                "clean image for view {} is {}x{}, camera is {}x{}",
                cam.view_id,
                img.width(),
                img.height(),
                cam.width,
                cam.height
            )));
        }
    }
    let params = sample_view_params(profile, seed, scene.cameras.len(), jitter);
    degrade_views(scene, clean, profile.name(), seed, &params)
}

fn degrade_views(
    scene: &Scene,
    clean: Vec<Image>,
    profile: &str,
    seed: u64,
    params: &[DegradationParams],
) -> Result<Dataset> {
    if params.len() != scene.cameras.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} degradation parameter sets for {} cameras",
            params.len(),
            scene.cameras.len()
        )));
    }
    let degraded = clean
        .iter()
        .zip(params)
        .map(|(img, p)| p.apply(img))
        .collect::<Result<Vec<_>>>()?;
    let views = scene
        .cameras
        .iter()
        .zip(params)
        .map(|(c, p)| ViewRecord {
            view_id: c.view_id,
            held_out: c.held_out,
            file: file_name(c.view_id),
            params: *p,
        })
        .collect();
    Ok(Dataset {
        scene: scene.clone(),
        manifest: DatasetManifest {
            profile: profile.to_string(),
            seed,
            views,
        },
        clean,
        degraded,
    })
}

impl Dataset {
    /// Degraded observations of the non-held-out cameras.
    pub fn training_views(&self) -> Vec<TrainingView> {
        self.scene
            .cameras
            .iter()
            .zip(&self.degraded)
            .filter(|(c, _)| !c.held_out)
            .map(|(c, img)| TrainingView {
                camera: c.clone(),
                image: img.clone(),
            })
            .collect()
    }

    /// Held-out cameras with their clean ground truth.
    pub fn held_out(&self) -> (Vec<Camera>, Vec<Image>) {
        self.scene
            .cameras
            .iter()
            .zip(&self.clean)
            .filter(|(c, _)| c.held_out)
            .map(|(c, img)| (c.clone(), img.clone()))
            .unzip()
    }

    /// Writes `scene.json`, `params.json`, `clean/` and `degraded/`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        for sub in [CLEAN_DIR, DEGRADED_DIR] {
            let d = dir.join(sub);
            std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
        save_scene(&self.scene, dir.join(SCENE_FILE))?;
        let path = dir.join(PARAMS_FILE);
        let text =
            serde_json::to_string_pretty(&self.manifest).map_err(|e| Error::json(&path, e))?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        for (rec, (c, d)) in self
            .manifest
            .views
            .iter()
            .zip(self.clean.iter().zip(&self.degraded))
        {
            save_image(c, dir.join(CLEAN_DIR).join(&rec.file))?;
            save_image(d, dir.join(DEGRADED_DIR).join(&rec.file))?;
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let scene = load_scene(dir.join(SCENE_FILE))?;
        let path = dir.join(PARAMS_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
        let ids: Vec<usize> = scene.cameras.iter().map(|c| c.view_id).collect();
        let listed: Vec<usize> = manifest.views.iter().map(|v| v.view_id).collect();
        if ids != listed {
            return Err(Error::InvalidScene(format!(
                "{}: views {listed:?} do not match scene cameras {ids:?}",
                path.display()
            )));
        }
        let mut clean = Vec::new();
        let mut degraded = Vec::new();
        for (rec, cam) in manifest.views.iter().zip(&scene.cameras) {
            let c = load_image(dir.join(CLEAN_DIR).join(&rec.file))?;
            let d = load_image(dir.join(DEGRADED_DIR).join(&rec.file))?;
            for img in [&c, &d] {
                if (img.width(), img.height()) != (cam.width, cam.height) {
                    return Err(Error::DimensionMismatch(format!(
                        "{}: image size does not match camera {}",
                        rec.file, cam.view_id
                    )));
                }
            }
            clean.push(c);
            degraded.push(d);
        }
        Ok(Self {
            scene,
            manifest,
            clean,
            degraded,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::splat::{demo_scene, DemoOptions};

    fn small_scene() -> Scene {
        demo_scene(&DemoOptions {
            size: 16,
            wall_grid: 4,
            objects: 4,
            train_views: 3,
            held_out_views: 1,
            ..Default::default()
        })
    }

    #[test]
    fn none_profile_keeps_clean_images() {
        let ds = synthesize(&small_scene(), Profile::None, 3, &JitterRanges::default()).unwrap();
        assert_eq!(ds.clean, ds.degraded);
        assert_eq!(ds.training_views().len(), 3);
        assert_eq!(ds.held_out().0.len(), 1);
    }

    #[test]
    fn supplied_clean_images_are_degraded() {
        let scene = small_scene();
        let clean: Vec<Image> = scene
            .cameras
            .iter()
            .map(|c| Image::filled(c.width, c.height, [0.4, 0.5, 0.6]))
            .collect();
        let ds = synthesize_from_clean(
            &scene,
            clean.clone(),
            Profile::LowLight,
            1,
            &JitterRanges::default(),
        )
        .unwrap();
        assert_eq!(ds.clean, clean);
        let expected = ds.manifest.views[0].params.apply(&clean[0]).unwrap();
        assert_eq!(ds.degraded[0], expected);
        assert!(ds.degraded[0].mean() < clean[0].mean());
        assert!(synthesize_from_clean(
            &scene,
            clean[1..].to_vec(),
            Profile::LowLight,
            1,
            &JitterRanges::default()
        )
        .is_err());
    }

    #[test]
    fn varying_profile_differs_across_views() {
        let ds = synthesize(
            &small_scene(),
            Profile::Varying,
            3,
            &JitterRanges::default(),
        )
        .unwrap();
        let k: Vec<f64> = ds.manifest.views.iter().map(|v| v.params.k).collect();
        assert!(k.windows(2).any(|w| w[0] != w[1]));
    }

    #[test]
    fn save_load_round_trip_is_byte_identical() {
        let ds = synthesize(&small_scene(), Profile::Warm, 5, &JitterRanges::default()).unwrap();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        ds.save(a.path()).unwrap();
        synthesize(&small_scene(), Profile::Warm, 5, &JitterRanges::default())
            .unwrap()
            .save(b.path())
            .unwrap();
        for sub in [CLEAN_DIR, DEGRADED_DIR] {
            let f = file_name(0);
            let x = std::fs::read(a.path().join(sub).join(&f)).unwrap();
            let y = std::fs::read(b.path().join(sub).join(&f)).unwrap();
            assert_eq!(x, y);
        }
        let loaded = Dataset::load(a.path()).unwrap();
        assert_eq!(loaded.manifest, ds.manifest);
        for (l, o) in loaded.degraded.iter().zip(&ds.degraded) {
            for (p, q) in l.data().iter().zip(o.data()) {
                assert!((p - q).abs() <= 0.5 / 255.0 + 1e-12);
            }
        }
    }
}
