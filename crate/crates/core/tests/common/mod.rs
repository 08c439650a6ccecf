#![allow(dead_code)]

use himloco::config::{parse_config, TrainConfig};

/// Small enough to train a few iterations in well under a second.
pub const TINY: &str = r#"
num_envs = 16
rollout_length = 8
num_iterations = 6
checkpoint_every = 3

[terrain]
tile_rows = 4
tile_cols = 4
tile_side = 4.0

[ppo]
actor_hidden = [32]
critic_hidden = [32]

[him]
encoder_hidden = [32]
target_hidden = [16]
"#;

pub fn tiny() -> TrainConfig {
    parse_config(TINY).unwrap()
}
