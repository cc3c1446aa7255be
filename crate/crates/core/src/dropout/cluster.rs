use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DropResult, DropoutError, Mode};
use crate::nn::Tensor;

/// Contiguous run of positions `[start, start + len)` within one channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cluster {
    pub start: usize,
    pub len: usize,
}

/// How clusters are picked for dropping.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterSelection {
    /// Fresh Bernoulli draw per cluster, sample and step.
    #[default]
    Bernoulli,
    /// One draw per cluster at fit time, reused for every sample and step
    /// until the map is refitted, so the same features are dropped
    /// consistently.
    Frozen,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    /// Adjacent clusters merge while their correlation is at least this.
    pub similarity_threshold: f64,
    pub min_batch: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self { similarity_threshold: 0.5, min_batch: 8 }
    }
}

/// Per-channel partition of the length axis.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClusterMap {
    pub length: usize,
    pub clusters: Vec<Vec<Cluster>>,
    /// Uniform draws for [`ClusterSelection::Frozen`], one per cluster.
    pub frozen: Vec<Vec<f64>>,
}

impl ClusterMap {
    pub fn is_fitted(&self) -> bool {
        !self.clusters.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.clusters.len()
    }

    pub fn counts(&self) -> Vec<usize> {
        self.clusters.iter().map(|c| c.len()).collect()
    }

    /// Draws the per-cluster uniforms used by frozen selection.
    pub fn freeze<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.frozen = self.clusters.iter().map(|cs| cs.iter().map(|_| rng.random()).collect()).collect();
    }
}

/// Correlation of two vectors; zero-variance pairs count as perfectly
/// similar, a single zero-variance side as unrelated.
fn similarity(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    let tiny = 1e-24;
    match (saa <= tiny, sbb <= tiny) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => sab / (saa * sbb).sqrt(),
    }
}

/// Agglomerative clustering of adjacent positions. Each position is a
/// vector of its activations across the batch; the most correlated pair of
/// neighbouring clusters (by their summed vectors) merges first, until no
/// pair reaches the threshold.
pub fn fit_clusters(features: &Tensor, cfg: &ClusterConfig) -> Result<ClusterMap, DropoutError> {
    let (c, b, l) = features.shape();
    if b < cfg.min_batch {
        return Err(DropoutError::BatchTooSmall { need: cfg.min_batch, got: b });
    }
    if l == 0 {
        return Err(DropoutError::Shape("empty length axis".into()));
    }
    if !features.is_finite() {
        return Err(DropoutError::NonFinite);
    }
    let mut clusters = Vec::with_capacity(c);
    for ch in 0..c {
        // Summed activation vector across the batch per live cluster.
        let mut sums: Vec<Vec<f64>> = (0..l).map(|pos| (0..b).map(|s| features.lane(ch, s)[pos]).collect()).collect();
        let mut spans: Vec<Cluster> = (0..l).map(|pos| Cluster { start: pos, len: 1 }).collect();
        let mut sim: Vec<f64> = (0..l.saturating_sub(1)).map(|i| similarity(&sums[i], &sums[i + 1])).collect();
        loop {
            let best = sim
                .iter()
                .enumerate()
                .fold(None, |acc: Option<(usize, f64)>, (i, &s)| match acc {
                    Some((_, bs)) if bs >= s => acc,
                    _ => Some((i, s)),
                });
            let Some((i, s)) = best else { break };
            if s < cfg.similarity_threshold {
                break;
            }
            let right = sums.remove(i + 1);
            sums[i].iter_mut().zip(&right).for_each(|(a, r)| *a += r);
            let rspan = spans.remove(i + 1);
            spans[i].len += rspan.len;
            sim.remove(i);
            if i > 0 {
                sim[i - 1] = similarity(&sums[i - 1], &sums[i]);
            }
            if i < sim.len() {
                sim[i] = similarity(&sums[i], &sums[i + 1]);
            }
        }
        clusters.push(spans);
    }
    Ok(ClusterMap { length: l, clusters, frozen: Vec::new() })
}

/// Drops whole clusters at rate `p_max * lambda_sched * size / length`,
/// rescaling surviving values by the inverse keep probability.
pub fn apply_dropcluster<R: Rng + ?Sized>(
    x: &Tensor,
    map: &ClusterMap,
    p_max: f64,
    lambda_sched: f64,
    selection: ClusterSelection,
    mode: Mode,
    rng: &mut R,
) -> Result<DropResult, DropoutError> {
    if !map.is_fitted() {
        return Err(DropoutError::Unfitted);
    }
    if map.channels() != x.channels || map.length != x.len {
        return Err(DropoutError::Shape(format!(
            "map fitted on {}x{}, input is {}x{}",
            map.channels(),
            map.length,
            x.channels,
            x.len
        )));
    }
    let base = p_max * lambda_sched;
    if !(0.0..=1.0).contains(&base) {
        return Err(DropoutError::Rate(base));
    }
    if mode == Mode::Eval || base == 0.0 {
        return Ok(DropResult::identity(x));
    }
    if selection == ClusterSelection::Frozen && map.frozen.len() != map.channels() {
        return Err(DropoutError::Unfitted);
    }
    let (c, b, _) = x.shape();
    let mut out = x.clone();
    let mut scale = vec![1.0; x.data.len()];
    let mut dropped = Vec::new();
    for ch in 0..c {
        let cs = &map.clusters[ch];
        for s in 0..b {
            for (k, cl) in cs.iter().enumerate() {
                let rate = base * cl.len as f64 / map.length as f64;
                let u = match selection {
                    ClusterSelection::Bernoulli => rng.random::<f64>(),
                    ClusterSelection::Frozen => map.frozen[ch][k],
                };
                let drop = u < rate;
                dropped.push(drop);
                let factor = if drop {
                    0.0
                } else if rate < 1.0 {
                    1.0 / (1.0 - rate)
                } else {
                    0.0
                };
                let start = x.idx(ch, s, cl.start);
                out.data[start..start + cl.len].iter_mut().for_each(|v| *v *= factor);
                scale[start..start + cl.len].fill(factor);
            }
        }
    }
    Ok(DropResult { output: out, grad_scale: Some(scale), dropped })
}
