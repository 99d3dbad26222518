//! Reduced sweep used by the pipeline tests.

use dpcandle::experiment::ExperimentConfig;

pub const REDUCED: &str = r#"
format = "dpcandle-config-1"
seed = 99
seeds_per_cell = 2

[dataset]
per_class_train = 10
per_class_test = 4

[model]
epochs = 3
batch_size = 16

[dpsgd]
clip_bounds = [1.5]
noise_multipliers = [0.5, 1.0]
group_size = 16
epochs = 2

[pate]
teacher_counts = [2, 4]
laplace_scales = [1.0, 100.0]
teacher_eval_every = 1
teacher_eval_samples = 16
"#;

pub fn reduced() -> ExperimentConfig {
    ExperimentConfig::from_toml(REDUCED).expect("reduced config is valid")
}
