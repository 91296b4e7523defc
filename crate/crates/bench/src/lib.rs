//! Fixtures shared by the criterion benchmarks under `benches/`.

use nlvar_core::synthetic::{generate_dataset, Dataset, SyntheticConfig};
use nlvar_core::{ModelShape, RangeBounds};

/// Reference-sized dataset: ten nodes, order 2, five units, 1000 rows.
pub fn reference_dataset() -> Dataset {
    generate_dataset(&SyntheticConfig {
        noise_std: 0.5,
        ..SyntheticConfig::reference()
    })
    .expect("reference configuration is valid")
}

/// Dataset with an arbitrary shape and `rows` samples.
pub fn dataset(shape: ModelShape, rows: usize, seed: u64) -> Dataset {
    generate_dataset(&SyntheticConfig {
        shape,
        ranges: vec![
            RangeBounds {
                lower: -1.0,
                upper: 1.0
            };
            shape.n_nodes
        ],
        t_total: rows,
        noise_std: 0.5,
        seed,
        ..SyntheticConfig::reference()
    })
    .expect("valid configuration")
}
