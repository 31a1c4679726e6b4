use std::io::Write;
use std::path::Path;

use super::adam::Adam;
use super::checkpoint::{Checkpoint, CHECKPOINT_VERSION};
use super::model::Model;
use super::{Method, TrainConfig};
use crate::colorxform::{cdf_curve, det3, DET_GUARD, LUT_SIZE};
use crate::diffcore::{ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::losses::{
    loss_3dgs_var, loss_cc_var, loss_curve_var, loss_reg_var, loss_spa_var, loss_total_var,
    loss_tv_var, omega_at, LossComponents, LossTerms, LossWeights,
};
use crate::refine::pseudo_enhance_var;
use crate::splat::{render_dual_var, Camera, DualRender, RenderSettings, Scene};
use crate::viewadapt::{generate_curve_bias, generate_view_scalars, input_vars, pool_input};

/// A training camera and its (degraded) observation.
#[derive(Clone, Debug)]
pub struct TrainingView {
    pub camera: Camera,
    pub image: Image,
}

struct ViewCache {
    camera: Camera,
    image: Image,
    pooled: Image,
    cdf: Vec<f64>,
}

pub struct Trainer {
    config: TrainConfig,
    model: Model,
    optimizer: Adam,
    iteration: usize,
    views: Vec<ViewCache>,
    settings: RenderSettings,
    log: Vec<LossComponents>,
}

fn check_views(views: &[TrainingView]) -> Result<()> {
    if views.is_empty() {
        return Err(Error::InvalidConfig(
            "training needs at least one view".into(),
        ));
    }
    for v in views {
        v.camera.validate()?;
        if (v.image.width(), v.image.height()) != (v.camera.width, v.camera.height) {
            return Err(Error::DimensionMismatch(format!(
                "view {}: image is {}x{}, camera is {}x{}",
                v.camera.view_id,
                v.image.width(),
                v.image.height(),
                v.camera.width,
                v.camera.height
            )));
        }
    }
    Ok(())
}

fn cache_views(views: Vec<TrainingView>, cdf: Option<Vec<Vec<f64>>>) -> Vec<ViewCache> {
    let cdf = cdf.unwrap_or_else(|| {
        views
            .iter()
            .map(|v| cdf_curve(&v.image).into_entries())
            .collect()
    });
    views
        .into_iter()
        .zip(cdf)
        .map(|(v, cdf)| ViewCache {
            pooled: pool_input(&v.image),
            camera: v.camera,
            image: v.image,
            cdf,
        })
        .collect()
}

impl Trainer {
    pub fn new(scene: &Scene, views: Vec<TrainingView>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        scene.validate()?;
        check_views(&views)?;
        let model = Model::new(&scene.cloud(), views.len(), &config);
        Ok(Self {
            settings: RenderSettings::default().with_background(scene.background()),
            views: cache_views(views, None),
            config,
            model,
            optimizer: Adam::new(),
            iteration: 0,
            log: Vec::new(),
        })
    }

    /// Continues a run. `views` must be the training views of the
    /// original run, in the same order.
    pub fn resume(checkpoint: Checkpoint, views: Vec<TrainingView>) -> Result<Self> {
        check_views(&views)?;
        let ids: Vec<usize> = views.iter().map(|v| v.camera.view_id).collect();
        if ids != checkpoint.view_ids {
            return Err(Error::Checkpoint(format!(
                "training views {ids:?} do not match the checkpoint's {:?}",
                checkpoint.view_ids
            )));
        }
        let Checkpoint {
            config,
            model,
            optimizer,
            iteration,
            cdf,
            background,
            log,
            ..
        } = checkpoint;
        Ok(Self {
            settings: RenderSettings::default().with_background(background),
            views: cache_views(views, Some(cdf)),
            config,
            model,
            optimizer,
            iteration,
            log,
        })
    }

    /// Changes the iteration budget (the trajectory is unaffected).
    pub fn with_iterations(mut self, iterations: usize) -> Self {
        self.config.iterations = iterations;
        self
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn log(&self) -> &[LossComponents] {
        &self.log
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config_hash: self.config.hash(),
            config: self.config.clone(),
            iteration: self.iteration,
            model: self.model.clone(),
            optimizer: self.optimizer.clone(),
            view_ids: self.views.iter().map(|v| v.camera.view_id).collect(),
            cdf: self.views.iter().map(|v| v.cdf.clone()).collect(),
            background: self.settings.background,
            log: self.log.clone(),
        }
    }

    /// Runs until the configured iteration count.
    pub fn run(&mut self) -> Result<()> {
        while self.iteration < self.config.iterations {
            self.step()?;
        }
        Ok(())
    }

    /// Evaluates the objective for the view scheduled at the current
    /// iteration without updating anything.
    pub fn evaluate_objective(&self) -> Result<LossComponents> {
        let mut tape = Tape::new();
        Ok(self.objective(&mut tape, &self.model.store)?.1)
    }

    /// Builds the current iteration's objective reading parameter values
    /// from `store` (which must share the model's layout).
    pub(crate) fn objective(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
    ) -> Result<(Var, LossComponents)> {
        let view = &self.views[self.iteration % self.views.len()];
        let render = render_dual_var(
            tape,
            store,
            &self.model.splats,
            &view.camera,
            &self.settings,
            self.config.optimize_geometry,
        );
        let (w, h) = (view.image.width(), view.image.height());
        let c_in = tape.constant(view.image.data().to_vec(), &[h, w, 3]);
        match self.config.method {
            Method::Baseline => {
                let reg = loss_3dgs_var(tape, render.c_in, c_in, self.config.lambda)?;
                let value = tape.item(reg);
                if !value.is_finite() {
                    return Err(Error::NonFiniteComponent("reg", value));
                }
                let parts = LossComponents {
                    reg: value,
                    total: value,
                    ..Default::default()
                };
                Ok((reg, parts))
            }
            Method::Full => self.full_objective(tape, store, view, render, c_in),
        }
    }

    fn full_objective(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        view: &ViewCache,
        render: DualRender,
        c_in: Var,
    ) -> Result<(Var, LossComponents)> {
        let k = self.iteration % self.views.len();
        let adapter = &self.model.adapter;
        let (pooled, cam) = input_vars(tape, &view.pooled, &view.camera.world_to_camera)?;
        let bias = generate_curve_bias(tape, store, &adapter.curve, pooled, cam)?;
        let global_lut = tape.param(store, self.model.global_lut);
        let lut = tape.add(global_lut, bias);
        let scalars = generate_view_scalars(tape, store, &adapter.scalars, pooled, cam)?;

        let m = tape.param(store, self.model.matrices[k]);
        let flat = tape.reshape(c_in, &[view.image.pixel_count(), 3]);
        let global = tape.global_adjust(flat, m, lut)?;
        let c_out = pseudo_enhance_var(tape, store, &self.model.residual, c_in, global)?;

        let lambda = self.config.lambda;
        let reg = loss_reg_var(tape, render.c_in, c_in, render.c_out, c_out, lambda)?;
        let spa = loss_spa_var(tape, render.c_out, &view.image)?;
        let tv = loss_tv_var(tape, lut)?;
        let cdf = tape.constant(view.cdf.clone(), &[LUT_SIZE]);
        let power = tape.power_curve(scalars.g);
        let s_curve = tape.s_curve(scalars.a, scalars.b);
        let omega = omega_at(self.iteration, self.config.omega_switch);
        let curve = loss_curve_var(tape, lut, cdf, power, s_curve, omega)?;
        let cc = loss_cc_var(tape, &[(render.c_out, scalars.s)])?;
        let weights = LossWeights {
            lambda,
            eta: self.config.eta(),
            omega,
        };
        loss_total_var(
            tape,
            &LossTerms {
                reg,
                spa,
                tv,
                curve,
                cc,
            },
            &weights,
        )
    }

    /// One optimization step on the next view in round-robin order.
    pub fn step(&mut self) -> Result<LossComponents> {
        let mut tape = Tape::new();
        let (total, parts) = self.objective(&mut tape, &self.model.store)?;
        self.model.store.zero_grad();
        tape.backward(total, &mut self.model.store)?;
        drop(tape);
        self.apply_updates();
        self.iteration += 1;
        self.log.push(parts);
        Ok(parts)
    }

    fn apply_updates(&mut self) {
        let groups = self.model.param_groups(&self.config);
        let store = &mut self.model.store;
        for (id, lr) in groups {
            let p = store.get(id);
            if !p.touched {
                continue;
            }
            let new = self.optimizer.update(id, &p.values, &p.grad, lr);
            // A matrix step that would make M_k (nearly) singular is dropped.
            if self.model.matrices.contains(&id) && !(det3(&new).abs() >= DET_GUARD) {
                continue;
            }
            store.values_mut(id).copy_from_slice(&new);
        }
        store
            .values_mut(self.model.splats.colors)
            .iter_mut()
            .for_each(|c| *c = c.clamp(0.0, 1.0));
    }
}

/// Trains from scratch for `config.iterations` steps.
pub fn train(
    scene: &Scene,
    views: Vec<TrainingView>,
    config: TrainConfig,
) -> Result<(Checkpoint, Vec<LossComponents>)> {
    let mut trainer = Trainer::new(scene, views, config)?;
    trainer.run()?;
    Ok((trainer.checkpoint(), trainer.log().to_vec()))
}

pub fn write_loss_csv(path: impl AsRef<Path>, log: &[LossComponents]) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::with_capacity(64 * (log.len() + 1));
    text.push_str(LossComponents::CSV_HEADER);
    text.push('\n');
    for (i, parts) in log.iter().enumerate() {
        text.push_str(&parts.csv_row(i));
        text.push('\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}
