use crate::grid::RedundancyLevel;
use crate::scenario::{generate_dataset, Dataset, ScenarioConfig};

/// Small dataset for fast estimator tests.
pub fn small_dataset(case: &str, level: RedundancyLevel, pool: usize, noise: bool) -> Dataset {
    let mut config = ScenarioConfig::desk(case, level);
    config.pool_size = pool;
    config.test_size = 5;
    config.window_size = 20;
    config.k = 4;
    config.grid_cardinality = 6;
    config.master_seed = 17;
    if !noise {
        config.sigma_power = 0.0;
        config.sigma_voltage = 0.0;
    }
    generate_dataset(&config).unwrap()
}
