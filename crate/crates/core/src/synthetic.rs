//! Seeded synthetic data: stable random VAR coefficients, random feasible
//! node maps, latent simulation and nonlinear observation.

use rand::Rng;

use crate::error::{Error, Result};
use crate::monotone::eval_f;
use crate::rng;
use crate::types::{
    ModelShape, NlVarModel, NodeMap, PanelRole, RangeBounds, TimeSeriesPanel, VarCoefficients,
};
use crate::var::{self, InnovationSpec, DEFAULT_BURN_IN, DEFAULT_TARGET_RADIUS};

/// Standard-normal entries rescaled so the companion spectral radius equals
/// `target_radius`.
pub fn random_var_coeffs(
    shape: &ModelShape,
    target_radius: f64,
    seed: u64,
) -> Result<VarCoefficients> {
    let mut rng = rng::seeded(seed);
    let entries = (0..shape.order * shape.n_nodes * shape.n_nodes)
        .map(|_| rng::standard_normal(&mut rng))
        .collect();
    let raw = VarCoefficients::from_vec(shape.order, shape.n_nodes, entries)?;
    var::stabilize(&raw, target_radius)
}

/// Random feasible maps: `alpha` uniform then rescaled to the span,
/// `w ~ U[0.5, 2]`, `k ~ U[-2, 2]`, `b` at the lower bound.
pub fn random_node_maps(
    shape: &ModelShape,
    ranges: &[RangeBounds],
    seed: u64,
) -> Result<Vec<NodeMap>> {
    if ranges.len() != shape.n_nodes {
        return Err(Error::Dimension(format!(
            "{} ranges for {} nodes",
            ranges.len(),
            shape.n_nodes
        )));
    }
    let m = shape.n_units;
    let mut rng = rng::seeded(seed);
    Ok(ranges
        .iter()
        .map(|&range| {
            // open interval keeps every unit active
            let raw: Vec<f64> = (0..m)
                .map(|_| loop {
                    let u: f64 = rng.random();
                    if u > 0.0 {
                        break u;
                    }
                })
                .collect();
            let total: f64 = raw.iter().sum();
            let alpha = raw.iter().map(|a| a * range.span() / total).collect();
            let w = (0..m).map(|_| rng.random_range(0.5..=2.0)).collect();
            let k = (0..m).map(|_| rng.random_range(-2.0..=2.0)).collect();
            NodeMap {
                alpha,
                w,
                k,
                b: range.lower,
                range,
            }
        })
        .collect())
}

/// Everything needed to regenerate a synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub shape: ModelShape,
    pub target_radius: f64,
    pub noise_std: f64,
    pub ranges: Vec<RangeBounds>,
    pub t_total: usize,
    pub burn_in: usize,
    pub seed: u64,
}

impl SyntheticConfig {
    /// Ten sensors, latent order 2, 1000 samples, five units per map,
    /// images `(-1, 1)`.
    pub fn reference() -> Self {
        let shape = ModelShape {
            n_nodes: 10,
            order: 2,
            n_units: 5,
        };
        Self {
            shape,
            target_radius: DEFAULT_TARGET_RADIUS,
            noise_std: DEFAULT_NOISE_STD,
            ranges: vec![
                RangeBounds {
                    lower: -1.0,
                    upper: 1.0
                };
                shape.n_nodes
            ],
            t_total: 1000,
            burn_in: DEFAULT_BURN_IN,
            seed: 0,
        }
    }

    pub fn var_seed(&self) -> u64 {
        rng::stage_seed(self.seed, 1)
    }

    pub fn maps_seed(&self) -> u64 {
        rng::stage_seed(self.seed, 2)
    }

    pub fn innovation_seed(&self) -> u64 {
        rng::stage_seed(self.seed, 3)
    }
}

pub const DEFAULT_NOISE_STD: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub ground_truth: NlVarModel,
    pub observed: TimeSeriesPanel,
    pub latent: TimeSeriesPanel,
}

pub fn generate_dataset(config: &SyntheticConfig) -> Result<Dataset> {
    let shape = config.shape;
    let var = random_var_coeffs(&shape, config.target_radius, config.var_seed())?;
    let maps = random_node_maps(&shape, &config.ranges, config.maps_seed())?;
    let innovation = InnovationSpec::new(config.noise_std, config.innovation_seed())?;
    let latent = var::simulate_var(&var, &innovation, config.t_total, config.burn_in)?;
    let ground_truth = NlVarModel::new(shape, var, maps)?;
    let n = shape.n_nodes;
    let observed: Vec<f64> = latent
        .as_slice()
        .iter()
        .enumerate()
        .map(|(idx, &y)| eval_f(&ground_truth.maps[idx % n], y))
        .collect();
    let observed = TimeSeriesPanel::new(config.t_total, n, observed, PanelRole::Observed)?;
    Ok(Dataset {
        ground_truth,
        observed,
        latent,
    })
}
