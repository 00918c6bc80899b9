//! The standard gradient-check battery: every layer kind in isolation plus
//! the full network, with `f32` analytic gradients compared against central
//! differences of an `f64` copy of the same objective.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::model::network::{build_paper_network, ForwardMode};
use crate::nn::gradcheck::{
    gradient_check_with_reference, BatchNormProbe, ConvProbe, Differentiable, GradCheckError, GradCheckOptions,
    LinearProbe, NetworkObjective, NetworkProbe, PoolProbe, ReluProbe, SignFlipped, SoftmaxProbe, DEFAULT_THRESHOLD,
};
use crate::nn::params::LayerParams;
use crate::tensor::{Shape, Tensor};

/// Probe names in the order they run.
pub const SUITE_PROBES: [&str; 9] = [
    "conv",
    "batchnorm_train",
    "batchnorm_inference",
    "relu",
    "maxpool",
    "fully_connected",
    "softmax_cross_entropy",
    "network_batch_statistics",
    "network_inference",
];

#[derive(Clone, Debug)]
pub struct SuiteOptions {
    pub check: GradCheckOptions,
    pub threshold: f64,
    /// Seed for inputs and parameters.
    pub seed: u64,
    /// Negate the analytic gradient of this probe (fault injection).
    pub sign_flip: Option<String>,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self { check: GradCheckOptions::default(), threshold: DEFAULT_THRESHOLD, seed: 11, sign_flip: None }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteEntry {
    pub name: String,
    pub checked: usize,
    pub skipped: usize,
    pub max_relative_error: f64,
    /// Worst group within the probe.
    pub worst_group: String,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteReport {
    pub threshold: f64,
    pub entries: Vec<SuiteEntry>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn max_relative_error(&self) -> f64 {
        self.entries.iter().map(|e| e.max_relative_error).fold(0.0, f64::max)
    }
}

fn normal(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor<f32> {
    Tensor::from_fn(shape, |_, _, _, _| {
        let z: f64 = StandardNormal.sample(rng);
        z as f32
    })
}

fn unit(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor<f32> {
    Tensor::from_fn(shape, |_, _, _, _| rng.random::<f32>())
}

fn batch_norm_params(channels: usize, rng: &mut ChaCha8Rng) -> LayerParams<f32> {
    let mut p = LayerParams::batch_norm(channels);
    for g in p.weights.data_mut() {
        *g = 0.5 + rng.random::<f32>();
    }
    for b in &mut p.bias {
        *b = rng.random::<f32>() - 0.5;
    }
    let s = p.norm.as_mut().expect("batch norm has statistics");
    for m in &mut s.running_mean {
        *m = rng.random::<f32>() - 0.5;
    }
    for v in &mut s.running_var {
        *v = 0.5 + rng.random::<f32>();
    }
    p
}

fn run_one<P>(
    name: &str,
    probe: P,
    reference: &dyn Differentiable<f64>,
    opts: &SuiteOptions,
) -> Result<SuiteEntry, GradCheckError>
where
    P: Differentiable<f32>,
{
    let report = if opts.sign_flip.as_deref() == Some(name) {
        gradient_check_with_reference(&SignFlipped(probe), reference, &opts.check)?
    } else {
        gradient_check_with_reference(&probe, reference, &opts.check)?
    };
    let worst = report
        .groups
        .iter()
        .max_by(|a, b| a.max_relative_error.total_cmp(&b.max_relative_error))
        .map(|g| g.name.clone())
        .unwrap_or_default();
    let max = report.max_relative_error();
    log::info!("gradcheck {name}: max relative error {max:.3e} ({} coordinates)", report.checked());
    Ok(SuiteEntry {
        name: name.to_string(),
        checked: report.checked(),
        skipped: report.skipped,
        max_relative_error: max,
        worst_group: worst,
        passed: max <= opts.threshold && report.checked() > 0,
    })
}

/// Runs every probe in [`SUITE_PROBES`].
pub fn run_gradient_suite(opts: &SuiteOptions) -> Result<SuiteReport, GradCheckError> {
    if let Some(f) = &opts.sign_flip {
        if !SUITE_PROBES.contains(&f.as_str()) {
            return Err(GradCheckError::CheckInvalid(format!("unknown probe {f:?} for fault injection")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut entries = Vec::with_capacity(SUITE_PROBES.len());

    let conv = ConvProbe::new(
        normal(Shape::new(2, 3, 8, 8), &mut rng),
        LayerParams::kaiming_conv(8, 3, 3, &mut rng),
        1,
        1,
        rng.random(),
    )?;
    entries.push(run_one("conv", conv.cast::<f32>(), &conv.cast::<f64>(), opts)?);

    let bn_input = normal(Shape::new(4, 6, 5, 5), &mut rng);
    let bn_params = batch_norm_params(6, &mut rng);
    for (name, training) in [("batchnorm_train", true), ("batchnorm_inference", false)] {
        let p = BatchNormProbe::new(bn_input.clone(), bn_params.clone(), training, rng.random());
        entries.push(run_one(name, p.cast::<f32>(), &p.cast::<f64>(), opts)?);
    }

    let relu = ReluProbe::new(normal(Shape::new(2, 4, 6, 6), &mut rng), rng.random());
    entries.push(run_one("relu", relu.cast::<f32>(), &relu.cast::<f64>(), opts)?);

    let pool = PoolProbe::new(normal(Shape::new(2, 4, 8, 8), &mut rng), 2, 2, rng.random())?;
    entries.push(run_one("maxpool", pool.cast::<f32>(), &pool.cast::<f64>(), opts)?);

    let fc = LinearProbe::new(
        normal(Shape::new(2, 64, 8, 8), &mut rng),
        LayerParams::kaiming_fully_connected(2, 64 * 8 * 8, &mut rng),
        rng.random(),
    )?;
    entries.push(run_one("fully_connected", fc.cast::<f32>(), &fc.cast::<f64>(), opts)?);

    let sm = SoftmaxProbe { logits: normal(Shape::new(4, 2, 1, 1), &mut rng), labels: vec![0, 1, 1, 0] };
    entries.push(run_one("softmax_cross_entropy", sm.cast::<f32>(), &sm.cast::<f64>(), opts)?);

    let mut net = build_paper_network::<f32>(2, rng.random()).map_err(|e| GradCheckError::CheckInvalid(e.to_string()))?;
    let input = unit(Shape::new(2, 3, 32, 32), &mut rng);
    let p = NetworkProbe::new(
        net.clone(),
        input.clone(),
        ForwardMode::BatchStatistics,
        NetworkObjective::WeightedLogits(rng.random()),
    )?;
    entries.push(run_one("network_batch_statistics", p.cast::<f32>(), &p.cast::<f64>(), opts)?);

    // populate running statistics so inference mode is not the identity
    let warm = unit(Shape::new(4, 3, 32, 32), &mut rng);
    for _ in 0..3 {
        net.forward_train(&warm)?;
    }
    let p = NetworkProbe::new(net, input, ForwardMode::Inference, NetworkObjective::CrossEntropy(vec![0, 1]))?;
    entries.push(run_one("network_inference", p.cast::<f32>(), &p.cast::<f64>(), opts)?);

    Ok(SuiteReport { threshold: opts.threshold, entries })
}
