//! Network architectures and their hand-written differentiable computation:
//! the two-branch lifter (pose + camera), the KCS-augmented Wasserstein
//! critic, parameter containers and the checkpoint format.

pub mod checkpoint;
pub mod critic;
pub mod layers;
pub mod lifter;
pub mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest};
pub use critic::{CriticConfig, CriticNetwork};
pub use layers::{Linear, Mat, ResBlock};
pub use lifter::{LifterConfig, LifterNetwork};
pub use params::{NamedTensor, ParamTensors, ParameterSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::skeleton::SkeletonSpec;

/// Fan-in-scaled Gaussian init for every weight tensor (biases stay zero),
/// with the variance correction for leaky-ReLU gain. Deterministic under the
/// seed; the result lands on the f32 grid like all persistent state.
fn init_params<T: ParamTensors>(params: &mut T, slope: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in params.tensors_mut() {
        if t.name.ends_with(".w") {
            let std = init_std(slope, t.cols);
            for v in t.data.iter_mut() {
                let g: f64 = StandardNormal.sample(&mut rng);
                *v = std * g;
            }
        }
    }
    params.quantize_f32();
}

/// Target standard deviation for a weight with the given fan-in.
pub fn init_std(slope: f64, fan_in: usize) -> f64 {
    (2.0 / ((1.0 + slope * slope) * fan_in as f64)).sqrt()
}

pub fn init_lifter(cfg: &LifterConfig, seed: u64) -> Result<LifterNetwork> {
    let mut net = LifterNetwork::new(cfg.clone())?;
    init_params(&mut net, cfg.leaky_slope, seed);
    Ok(net)
}

pub fn init_critic(cfg: &CriticConfig, skeleton: &SkeletonSpec, seed: u64) -> Result<CriticNetwork> {
    let mut net = CriticNetwork::new(cfg.clone(), skeleton)?;
    init_params(&mut net, cfg.leaky_slope, seed);
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let cfg = LifterConfig::new(17);
        let a = init_lifter(&cfg, 3).unwrap();
        let b = init_lifter(&cfg, 3).unwrap();
        let c = init_lifter(&cfg, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn init_weight_variance_tracks_fan_in_target() {
        let cfg = LifterConfig::new(17);
        let net = init_lifter(&cfg, 11).unwrap();
        for t in net.tensors() {
            if t.name.ends_with(".w") && t.data.len() >= 10_000 {
                let mean = t.data.iter().sum::<f64>() / t.data.len() as f64;
                let var = t.data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                    / t.data.len() as f64;
                let target = init_std(cfg.leaky_slope, t.cols).powi(2);
                assert!(
                    (var - target).abs() / target < 0.1,
                    "{}: var {var}, target {target}",
                    t.name
                );
            }
        }
    }

    #[test]
    fn init_lands_on_the_f32_grid() {
        let net = init_lifter(&LifterConfig::new(17), 5).unwrap();
        for t in net.tensors() {
            assert!(t.data.iter().all(|&v| v == v as f32 as f64));
        }
    }
}
