//! Runtime configuration. Every tunable default lives here as a named key
//! so it can be overridden from a single JSON file.

use serde::{Deserialize, Serialize};

/// Network architecture sizes.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Square input patch side; 25 makes the conv stack land on a 3×3 grid.
    pub patch_size: usize,
    pub img_channels: usize,
    /// Output channels of the three front-end convs (kernels 5,3,3 and
    /// strides 2,2,1).
    pub conv_channels: [usize; 3],
    /// Channels of the offset regressor's 3×3 conv.
    pub deform_channels: usize,
    /// Hidden width of the gate's first fc layer.
    pub gate_hidden: usize,
    /// Widths of the first two classifier fc layers (the third outputs 2).
    pub head_widths: [usize; 2],
}

impl Default for ModelConfig {
    fn default() -> ModelConfig {
        ModelConfig {
            patch_size: 25,
            img_channels: 1,
            conv_channels: [8, 16, 64],
            deform_channels: 16,
            gate_hidden: 64,
            head_widths: [256, 128],
        }
    }
}

impl ModelConfig {
    /// Small sizes for fast desk-scale experiments and tests.
    pub fn small() -> ModelConfig {
        ModelConfig {
            patch_size: 25,
            img_channels: 1,
            conv_channels: [4, 8, 8],
            deform_channels: 4,
            gate_hidden: 16,
            head_widths: [32, 16],
        }
    }

    /// Spatial extent of the fused feature grid implied by the conv stack.
    pub fn feature_grid(&self) -> usize {
        let after = |e: usize, k: usize, s: usize| (e - k) / s + 1;
        after(after(after(self.patch_size, 5, 2), 3, 2), 3, 1)
    }
}

/// Offline training schedule.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Iterations per training step (desk-scale replacement for 200K).
    pub iters_per_step: usize,
    pub batch_pos: usize,
    pub batch_neg: usize,
    /// Negatives scored per iteration before mining.
    pub neg_pool: usize,
    pub lr_conv: f64,
    pub lr_fc: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Samples collected per annotated frame.
    pub pos_per_frame: usize,
    pub neg_per_frame: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            iters_per_step: 800,
            batch_pos: 32,
            batch_neg: 96,
            neg_pool: 1024,
            lr_conv: 1e-3,
            lr_fc: 3e-3,
            momentum: 0.9,
            weight_decay: 0.0005,
            pos_per_frame: 50,
            neg_per_frame: 200,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn small() -> TrainConfig {
        TrainConfig {
            iters_per_step: 800,
            batch_pos: 8,
            batch_neg: 24,
            neg_pool: 128,
            pos_per_frame: 15,
            neg_per_frame: 40,
            ..TrainConfig::default()
        }
    }
}

/// Online tracking schedule.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackConfig {
    /// Candidate boxes drawn per frame.
    pub candidates: usize,
    /// Top-scoring candidates averaged into the frame estimate.
    pub top_k: usize,
    /// Translation jitter std as a fraction of the box size.
    pub trans_std_frac: f64,
    /// Scale jitter: factor scale_base^N(0, scale_std).
    pub scale_base: f64,
    pub scale_std: f64,
    /// Aspect jitter: w is multiplied and h divided by
    /// scale_base^N(0, aspect_std), letting the box track aspect changes.
    pub aspect_std: f64,
    /// Bounding-box regression applies only above this confidence.
    pub bbox_reg_threshold: f64,
    /// Update samples are collected only above this confidence, so a lost
    /// tracker does not poison its memories.
    pub update_conf_threshold: f64,
    /// Online update fires every this many frames.
    pub update_interval: usize,
    pub update_iters: usize,
    /// First-frame fine-tune schedule.
    pub init_iters: usize,
    pub init_lr: f64,
    pub init_head_last_lr: f64,
    /// Learning rate of the fusion modules during online updates.
    pub update_lr_fusion: f64,
    pub update_lr_head: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_pos: usize,
    pub batch_neg: usize,
    pub neg_pool: usize,
    pub pos_memory: usize,
    pub neg_memory: usize,
    /// First-frame sample counts (training set for init fine-tune).
    pub init_pos_samples: usize,
    pub init_neg_samples: usize,
    /// Samples collected around each per-frame estimate.
    pub update_pos_per_frame: usize,
    pub update_neg_per_frame: usize,
    pub ridge_lambda: f64,
    pub seed: u64,
}

impl Default for TrackConfig {
    fn default() -> TrackConfig {
        TrackConfig {
            candidates: 256,
            top_k: 8,
            trans_std_frac: 0.2,
            scale_base: 1.05,
            scale_std: 0.25,
            aspect_std: 0.25,
            bbox_reg_threshold: 0.5,
            update_conf_threshold: 0.5,
            update_interval: 10,
            update_iters: 10,
            init_iters: 40,
            init_lr: 3e-4,
            init_head_last_lr: 1e-3,
            update_lr_fusion: 3e-3,
            update_lr_head: 1e-3,
            momentum: 0.9,
            weight_decay: 0.0005,
            batch_pos: 32,
            batch_neg: 96,
            neg_pool: 1024,
            pos_memory: 500,
            neg_memory: 5000,
            init_pos_samples: 500,
            init_neg_samples: 2000,
            update_pos_per_frame: 50,
            update_neg_per_frame: 200,
            ridge_lambda: 1e-3,
            seed: 0,
        }
    }
}

/// Top-level config file contents.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub track: TrackConfig,
}

impl Config {
    pub fn small() -> Config {
        Config {
            model: ModelConfig::small(),
            train: TrainConfig::small(),
            track: TrackConfig::default(),
        }
    }
}
