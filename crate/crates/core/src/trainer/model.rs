use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Method, TrainConfig};
use crate::colorxform::{ColorMatrix3, LUT_SIZE};
use crate::diffcore::{ParamId, ParamStore};
use crate::refine::ResidualBranch;
use crate::splat::{GaussianCloud, SplatParams};
use crate::viewadapt::ViewAdapter;

/// Every learnable array of a run and the handles that locate them.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Model {
    pub store: ParamStore,
    pub splats: SplatParams,
    /// Shared tone curve `L^g`.
    pub global_lut: ParamId,
    /// One color matrix `M_k` per training view, in training order.
    pub matrices: Vec<ParamId>,
    pub adapter: ViewAdapter,
    pub residual: ResidualBranch,
}

impl Model {
    pub fn new(cloud: &GaussianCloud, n_views: usize, config: &TrainConfig) -> Self {
        let mut cloud = cloud.clone();
        if let Some(gray) = config.init_gray {
            for g in &mut cloud.gaussians {
                g.color = [gray; 3];
            }
        }
        for g in &mut cloud.gaussians {
            g.gain = [1.0; 3];
            g.offset = [0.0; 3];
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let splats = SplatParams::register(&mut store, &cloud);
        let identity: Vec<f64> = (0..LUT_SIZE).map(crate::colorxform::grid).collect();
        let global_lut = store.add("lut.global", identity, &[LUT_SIZE]);
        let matrices = (0..n_views)
            .map(|k| {
                store.add(
                    format!("matrix.{k}"),
                    ColorMatrix3::identity().flat().to_vec(),
                    &[3, 3],
                )
            })
            .collect();
        let adapter = ViewAdapter::new(&mut store, &mut rng);
        let residual = ResidualBranch::new(&mut store, config.scenario.residual_clip(), &mut rng);
        Self {
            store,
            splats,
            global_lut,
            matrices,
            adapter,
            residual,
        }
    }

    pub fn cloud(&self) -> GaussianCloud {
        self.splats.cloud(&self.store)
    }

    /// `(parameter, learning rate)` for everything the method optimizes.
    pub fn param_groups(&self, config: &TrainConfig) -> Vec<(ParamId, f64)> {
        let lr = &config.lr;
        let s = &self.splats;
        let mut groups = vec![(s.colors, lr.colors), (s.opacity_logits, lr.opacity)];
        if config.optimize_geometry {
            groups.extend([
                (s.means, lr.means),
                (s.log_scales, lr.scales),
                (s.quats, lr.rotations),
            ]);
        }
        if config.method == Method::Full {
            groups.extend([
                (s.gains, lr.adjust),
                (s.offsets, lr.adjust),
                (self.global_lut, lr.lut),
            ]);
            groups.extend(self.matrices.iter().map(|&m| (m, lr.matrices)));
            groups.extend(
                self.adapter
                    .param_ids()
                    .into_iter()
                    .map(|id| (id, lr.networks)),
            );
            groups.extend(
                self.residual
                    .param_ids()
                    .into_iter()
                    .map(|id| (id, lr.networks)),
            );
        }
        groups
    }
}
