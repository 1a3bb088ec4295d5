use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{LmError, LmParams, Proj, Result};

/// Low-rank update `scale * B A` for one weight matrix (`d_out x d_in`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraTarget {
    pub layer: usize,
    pub proj: Proj,
    /// `rank x d_in`
    pub a: Array2<f64>,
    /// `d_out x rank`
    pub b: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraAdapter {
    pub rank: usize,
    pub alpha: f64,
    pub targets: Vec<LoraTarget>,
}

impl LoraAdapter {
    /// `alpha / rank`
    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    pub fn get(&self, layer: usize, proj: Proj) -> Option<&LoraTarget> {
        self.targets.iter().find(|t| t.layer == layer && t.proj == proj)
    }

    pub fn get_mut(&mut self, layer: usize, proj: Proj) -> Option<&mut LoraTarget> {
        self.targets.iter_mut().find(|t| t.layer == layer && t.proj == proj)
    }

    pub fn zeros_like(&self) -> Self {
        LoraAdapter {
            rank: self.rank,
            alpha: self.alpha,
            targets: self
                .targets
                .iter()
                .map(|t| LoraTarget {
                    layer: t.layer,
                    proj: t.proj,
                    a: Array2::zeros(t.a.dim()),
                    b: Array2::zeros(t.b.dim()),
                })
                .collect(),
        }
    }

    pub fn n_params(&self) -> usize {
        self.targets.iter().map(|t| t.a.len() + t.b.len()).sum()
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        self.targets
            .iter()
            .flat_map(|t| [t.a.as_slice().unwrap(), t.b.as_slice().unwrap()])
            .collect()
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.targets
            .iter_mut()
            .flat_map(|t| [t.a.as_slice_mut().unwrap(), t.b.as_slice_mut().unwrap()])
            .collect()
    }
}

/// Base parameters that adapter training may read but never write.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenBase(LmParams);

impl FrozenBase {
    pub fn new(params: LmParams) -> Self {
        FrozenBase(params)
    }

    pub fn params(&self) -> &LmParams {
        &self.0
    }

    pub fn into_inner(self) -> LmParams {
        self.0
    }
}

/// Freezes `params` and creates an adapter on `targets` in every layer.
/// `A` starts uniform in `±1/sqrt(d_in)`, `B` at zero.
pub fn lora_attach(
    params: LmParams,
    rank: usize,
    alpha: f64,
    targets: &[Proj],
    seed: u64,
) -> Result<(FrozenBase, LoraAdapter)> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(LmError::Config(format!("LoRA alpha must be positive, got {alpha}")));
    }
    if targets.is_empty() {
        return Err(LmError::Config("LoRA needs at least one target projection".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (li, layer) in params.layers.iter().enumerate() {
        for &proj in targets {
            let (w, _) = layer.proj(proj);
            let (d_out, d_in) = w.dim();
            if rank == 0 || rank > d_out.min(d_in) {
                return Err(LmError::Rank { rank, d_out, d_in });
            }
            let bound = 1.0 / (d_in as f64).sqrt();
            let a = Array2::from_shape_fn((rank, d_in), |_| rng.gen_range(-bound..bound));
            out.push(LoraTarget {
                layer: li,
                proj,
                a,
                b: Array2::zeros((d_out, rank)),
            });
        }
    }
    Ok((
        FrozenBase(params),
        LoraAdapter {
            rank,
            alpha,
            targets: out,
        },
    ))
}

/// Folds the adapter into the base weights: `W' = W + (alpha/rank) B A`.
pub fn lora_merge(base: FrozenBase, adapter: LoraAdapter) -> Result<LmParams> {
    let mut params = base.0;
    let scale = adapter.scale();
    for t in &adapter.targets {
        let layer = params
            .layers
            .get_mut(t.layer)
            .ok_or_else(|| LmError::Merge(format!("layer {} does not exist", t.layer)))?;
        let w = layer.proj_weight_mut(t.proj);
        let (d_out, d_in) = w.dim();
        if t.a.dim() != (adapter.rank, d_in) || t.b.dim() != (d_out, adapter.rank) {
            return Err(LmError::Merge(format!(
                "{:?} in layer {}: A {:?} / B {:?} vs W {:?}",
                t.proj,
                t.layer,
                t.a.dim(),
                t.b.dim(),
                w.dim()
            )));
        }
        w.scaled_add(scale, &t.b.dot(&t.a));
    }
    Ok(params)
}
