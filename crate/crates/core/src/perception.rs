//! Simulated object detector.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::scene::fmt3;
use crate::sim::SimState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectedObject {
    pub label: String,
    pub position: [f64; 3],
    pub yaw: f64,
    pub extents: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    pub enabled: bool,
    /// Half-width of the uniform position error, per axis.
    pub position_bound_m: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            position_bound_m: 0.005,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerceptionConfig {
    pub noise: NoiseConfig,
    pub include_held: bool,
}

/// Detections in label order. `call_index` decorrelates noise between calls
/// while keeping a run reproducible from the seed.
pub fn perceive(state: &SimState, config: &PerceptionConfig, call_index: u64) -> Vec<DetectedObject> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.noise.seed ^ call_index.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let held = state.held_label();
    let mut objs: Vec<_> = state
        .scene
        .objects
        .iter()
        .filter(|o| config.include_held || Some(o.label.as_str()) != held)
        .collect();
    objs.sort_by(|a, b| a.label.cmp(&b.label));
    objs.into_iter()
        .map(|o| {
            let mut position = o.position;
            if config.noise.enabled && config.noise.position_bound_m > 0.0 {
                let b = config.noise.position_bound_m;
                for p in &mut position {
                    *p += rng.random_range(-b..=b);
                }
            }
            DetectedObject {
                label: o.label.clone(),
                position,
                yaw: o.yaw,
                extents: o.extents,
            }
        })
        .collect()
}

/// One line per detection, or `none`.
pub fn object_list_text(objects: &[DetectedObject]) -> String {
    if objects.is_empty() {
        return "none".into();
    }
    let mut sorted: Vec<_> = objects.iter().collect();
    sorted.sort_by(|a, b| a.label.cmp(&b.label));
    sorted
        .iter()
        .map(|o| {
            format!(
                "- {}: position ({}, {}, {}), angle {} rad, extents ({}, {}, {})",
                o.label,
                fmt3(o.position[0]),
                fmt3(o.position[1]),
                fmt3(o.position[2]),
                fmt3(o.yaw),
                fmt3(o.extents[0]),
                fmt3(o.extents[1]),
                fmt3(o.extents[2]),
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}
