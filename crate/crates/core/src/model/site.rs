use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ModelError, StepContext};
use crate::dropout::{
    apply_dropcluster, apply_fad, apply_wfad, apply_wfd, fit_clusters, score_channels, ClusterConfig, ClusterMap,
    ClusterSelection, DropoutConfig, DropoutError, Mode, ScheduleState, Technique,
};
use crate::nn::Tensor;

/// One technique instance at one site, with its own random stream.
#[derive(Debug, Clone)]
struct SiteOp {
    cfg: DropoutConfig,
    multiplier: f64,
    rng: ChaCha8Rng,
    clusters: ClusterMap,
    fitted_epoch: Option<u32>,
}

/// A dropout insertion point; empty sites are free identities.
#[derive(Debug, Clone)]
pub struct DropoutSite {
    pub name: String,
    ops: Vec<SiteOp>,
    /// Gradient masks of the last forward pass, in application order.
    scales: Vec<Option<Vec<f64>>>,
}

impl DropoutSite {
    pub fn empty(name: impl Into<String>) -> Self {
        Self { name: name.into(), ops: Vec::new(), scales: Vec::new() }
    }

    /// `stream` must be unique per op across the model.
    pub(crate) fn push(&mut self, cfg: DropoutConfig, multiplier: f64, seed: u64, stream: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        self.ops.push(SiteOp { cfg, multiplier, rng, clusters: ClusterMap::default(), fitted_epoch: None });
    }

    pub fn is_active(&self) -> bool {
        !self.ops.is_empty()
    }

    pub fn labels(&self) -> Vec<String> {
        self.ops.iter().map(|o| o.cfg.label()).collect()
    }

    pub fn forward(&mut self, x: Tensor, mode: Mode, ctx: StepContext) -> Result<Tensor, ModelError> {
        self.scales.clear();
        let mut h = x;
        for i in 0..self.ops.len() {
            let (out, scale) = self.apply_op(i, &h, mode, ctx)?;
            if let Some(out) = out {
                h = out;
            }
            self.scales.push(scale);
        }
        Ok(h)
    }

    fn apply_op(
        &mut self,
        i: usize,
        x: &Tensor,
        mode: Mode,
        ctx: StepContext,
    ) -> Result<(Option<Tensor>, Option<Vec<f64>>), ModelError> {
        let site = self.name.clone();
        let wrap = |e: DropoutError| ModelError::Dropout { site: site.clone(), source: e };
        let op = &mut self.ops[i];
        if mode == Mode::Eval {
            return Ok((None, None));
        }
        let sched = ScheduleState::new(ctx.epoch, ctx.total_epochs, op.cfg.activation_epoch);
        let lambda = sched.lambda().map_err(&wrap)?;
        if lambda == 0.0 {
            return Ok((None, None));
        }
        let p_max = op.cfg.p_max * op.multiplier;
        let res = match op.cfg.technique {
            Technique::Fad => apply_fad(x, p_max * lambda, mode, &mut op.rng),
            Technique::Wfd | Technique::Wfad => {
                let scores = match score_channels(x, op.cfg.q_threshold, p_max, lambda, op.cfg.threshold_mode) {
                    Err(DropoutError::DegenerateActivations) => {
                        log::debug!("{site}: all-zero activations, skipping");
                        return Ok((None, None));
                    }
                    other => other.map_err(&wrap)?,
                };
                if op.cfg.technique == Technique::Wfd {
                    apply_wfd(x, &scores, mode, &mut op.rng)
                } else {
                    apply_wfad(x, &scores, mode, &mut op.rng)
                }
            }
            Technique::DropCluster => {
                if op.fitted_epoch != Some(ctx.epoch) {
                    match fit_clusters(x, &ClusterConfig::default()) {
                        Ok(map) => {
                            op.clusters = map;
                            if op.cfg.cluster_selection == ClusterSelection::Frozen {
                                op.clusters.freeze(&mut op.rng);
                            }
                            op.fitted_epoch = Some(ctx.epoch);
                        }
                        // A short trailing batch keeps the previous map.
                        Err(DropoutError::BatchTooSmall { .. }) if op.clusters.is_fitted() => {}
                        Err(DropoutError::BatchTooSmall { .. }) => return Ok((None, None)),
                        Err(e) => return Err(wrap(e)),
                    }
                }
                if op.clusters.length != x.len {
                    return Ok((None, None));
                }
                apply_dropcluster(x, &op.clusters, p_max, lambda, op.cfg.cluster_selection, mode, &mut op.rng)
            }
        };
        let r = res.map_err(&wrap)?;
        Ok((Some(r.output), r.grad_scale))
    }

    /// Channel ratings are treated as constants, so the backward pass is the
    /// elementwise mask of each op.
    pub fn backward(&mut self, mut g: Tensor) -> Tensor {
        for s in self.scales.iter().rev().flatten() {
            g.data.iter_mut().zip(s).for_each(|(v, k)| *v *= k);
        }
        g
    }
}
