//! Seeded experiment setup: configuration, random networks, input sampling and report files.
//!
//! Weights are drawn i.i.d. from `N(0, 1)` and scaled by `1/sqrt(fan_in)`; biases are drawn
//! the same way and then shaped by [`BiasMode`]. Inputs are drawn from `N(0, I)` and rejected
//! until the explained logit exceeds the threshold. Network and input streams come from
//! separate ChaCha8 streams of the same seed, so changing the sample count never changes the
//! network.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::diagnostics::{RegionTolerances, Table1Options, Table1Report};
use crate::engine::TieBreak;
use crate::error::{Error, Result};
use crate::net::{Activation, LayerSpec, Network, FD_STEP};
use crate::rules::RuleKind;

/// One-line description of the random initialization, repeated in every report.
pub const INIT_NOTE: &str =
    "weights ~ N(0,1)/sqrt(fan_in); biases ~ N(0,1)/sqrt(fan_in) shaped by bias_mode; inputs ~ N(0,I) with rejection on f_class(x) > min_output";

const NETWORK_STREAM: u64 = 0;
const SAMPLE_STREAM: u64 = 1;
const UNIFORM_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum BiasMode {
    /// `b = −|b₀|`
    NonPositive,
    Unrestricted,
    /// All biases zero.
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ActivationKind {
    Relu,
    /// Linear override: every layer is affine, so the network has a single region.
    Identity,
    /// Softplus with `β = 1`.
    Softplus,
}

impl ActivationKind {
    pub fn to_activation(self) -> Activation {
        match self {
            ActivationKind::Relu => Activation::Relu,
            ActivationKind::Identity => Activation::Identity,
            ActivationKind::Softplus => Activation::Softplus { beta: 1.0 },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub gradient: f64,
    pub output: f64,
    pub fd_step: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        let region = RegionTolerances::default();
        Self {
            gradient: region.gradient,
            output: region.output,
            fd_step: FD_STEP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Layer widths `d_1, …, d_{n+1}`.
    pub dims: Vec<usize>,
    pub bias_mode: BiasMode,
    pub activation: ActivationKind,
    pub rules: Vec<RuleKind>,
    pub n_samples: usize,
    pub min_output: f64,
    /// Explained logit `ξ`.
    pub class: usize,
    pub tolerances: Tolerances,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dims: vec![10, 10, 10, 10],
            bias_mode: BiasMode::NonPositive,
            activation: ActivationKind::Relu,
            rules: vec![RuleKind::Lrp0, RuleKind::Gamma(1.0), RuleKind::W2, RuleKind::ZPlus],
            n_samples: 1000,
            min_output: 0.1,
            class: 0,
            tolerances: Tolerances::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.dims.len() < 2 {
            return bad(format!("dims needs at least two widths, got {:?}", self.dims));
        }
        if self.dims.contains(&0) {
            return bad(format!("dims must be positive, got {:?}", self.dims));
        }
        if self.n_samples == 0 {
            return bad("n_samples must be at least 1".into());
        }
        if !(self.min_output >= 0.0 && self.min_output.is_finite()) {
            return bad(format!("min_output must be >= 0, got {}", self.min_output));
        }
        if self.rules.is_empty() {
            return bad("at least one rule is required".into());
        }
        let t = &self.tolerances;
        if ![t.gradient, t.output, t.fd_step].iter().all(|v| *v > 0.0 && v.is_finite()) {
            return bad(format!("tolerances must be > 0, got {t:?}"));
        }
        if self.class >= *self.dims.last().expect("checked length") {
            return Err(Error::ClassIndex {
                class: self.class,
                outputs: *self.dims.last().expect("checked length"),
            });
        }
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(s)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization cannot fail")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json_string() + "\n")?;
        Ok(())
    }

    pub fn table1_options(&self) -> Table1Options {
        Table1Options {
            samples: self.n_samples,
            min_output: self.min_output,
            seed: self.seed,
            class: self.class,
            tolerances: RegionTolerances {
                gradient: self.tolerances.gradient,
                output: self.tolerances.output,
            },
        }
    }
}

fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn generate_network(config: &ExperimentConfig) -> Result<Network> {
    config.validate()?;
    generate_network_with(&config.dims, config.bias_mode, config.activation.to_activation(), config.seed)
}

/// Random dense network with widths `dims`, the same activation on every layer.
pub fn generate_network_with(dims: &[usize], bias_mode: BiasMode, activation: Activation, seed: u64) -> Result<Network> {
    if dims.len() < 2 {
        return Err(Error::InvalidNetwork(format!("dims needs at least two widths, got {dims:?}")));
    }
    let mut rng = stream(seed, NETWORK_STREAM);
    let mut draw = |scale: f64| {
        let v: f64 = StandardNormal.sample(&mut rng);
        v * scale
    };
    let layers = dims
        .windows(2)
        .map(|pair| {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            if fan_in == 0 || fan_out == 0 {
                return Err(Error::InvalidNetwork(format!("dims must be positive, got {dims:?}")));
            }
            let scale = 1.0 / (fan_in as f64).sqrt();
            let weights = (0..fan_in * fan_out).map(|_| draw(scale)).collect();
            let bias = (0..fan_out)
                .map(|_| {
                    let b = draw(scale);
                    match bias_mode {
                        BiasMode::NonPositive => -b.abs(),
                        BiasMode::Unrestricted => b,
                        BiasMode::Zero => 0.0,
                    }
                })
                .collect();
            LayerSpec::from_row_major(fan_out, fan_in, weights, bias, activation)
        })
        .collect::<Result<Vec<_>>>()?;
    Network::new(dims[0], layers)
}

pub fn sample_inputs(net: &Network, config: &ExperimentConfig) -> Result<Vec<Vec<f64>>> {
    sample_inputs_seeded(net, config.n_samples, config.min_output, config.class, config.seed)
}

/// Rejection sampling from `N(0, I)` until `n` inputs have `f_class(x) > min_output`. Gives up
/// after `100·n` draws.
pub fn sample_inputs_seeded(net: &Network, n: usize, min_output: f64, class: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    net.check_class(class)?;
    let mut rng = stream(seed, SAMPLE_STREAM);
    let max_draws = 100 * n;
    let mut accepted = Vec::with_capacity(n);
    let mut draws = 0;
    while accepted.len() < n {
        if draws == max_draws {
            return Err(Error::SamplerExhausted {
                accepted: accepted.len(),
                requested: n,
                draws,
            });
        }
        draws += 1;
        let x: Vec<f64> = (0..net.input_dim()).map(|_| StandardNormal.sample(&mut rng)).collect();
        if net.output(&x)?[class] > min_output {
            accepted.push(x);
        }
    }
    Ok(accepted)
}

/// `n` inputs from `N(0, I)` without a threshold.
pub fn sample_normal_inputs(dim: usize, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let mut rng = stream(seed, SAMPLE_STREAM);
    Ok((0..n).map(|_| (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect()).collect())
}

/// `n` inputs with i.i.d. `U(0, 1)` coordinates.
pub fn sample_uniform_inputs(dim: usize, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let mut rng = stream(seed, UNIFORM_STREAM);
    let unit = Uniform::new(0.0, 1.0).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok((0..n).map(|_| (0..dim).map(|_| unit.sample(&mut rng)).collect()).collect())
}

pub const TABLE1_CSV_HEADER: &str = "rule,samples,frac_same_region,frac_same_output,seed";

/// CSV with a header row, `.` decimals and LF line endings.
pub fn write_table1_csv(reports: &[Table1Report], mut out: impl Write) -> Result<()> {
    writeln!(out, "{TABLE1_CSV_HEADER}")?;
    for r in reports {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.rule, r.samples, r.frac_same_region, r.frac_same_output, r.seed
        )?;
    }
    Ok(())
}

/// Plain-text table: the two headline rows first, then the supplementary rows.
pub fn format_table1(reports: &[Table1Report]) -> String {
    let mut s = format!("{:<34}", "evaluation \\ rule");
    for r in reports {
        s += &format!("{:>12}", r.rule.to_string());
    }
    s.push('\n');
    type Column = fn(&Table1Report) -> f64;
    let rows: [(&str, Column); 5] = [
        ("same local linear region", |r| r.frac_same_region),
        ("same network output", |r| r.frac_same_output),
        ("same activation pattern", |r| r.frac_same_fingerprint),
        ("inputs with all roots in region", |r| r.input_frac_same_region),
        ("inputs with an output-keeping root", |r| r.input_frac_same_output),
    ];
    for (name, get) in rows {
        s += &format!("{name:<34}");
        for r in reports {
            s += &format!("{:>11.2}%", 100.0 * get(r));
        }
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionCell {
    pub x: f64,
    pub y: f64,
    /// Regions are numbered by first appearance in raster order.
    pub region_id: usize,
    pub region_hash: u64,
    pub grad_x: f64,
    pub grad_y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionMap {
    pub resolution: usize,
    pub bounds: (f64, f64),
    pub regions: usize,
    pub cells: Vec<RegionCell>,
}

/// Labels the cell centers of a `resolution × resolution` grid over `[lo, hi]²` by activation
/// region and records the gradient of `f_class` at each. Rows run along `y`, with `x` varying
/// fastest.
pub fn region_map(net: &Network, bounds: (f64, f64), resolution: usize, class: usize) -> Result<RegionMap> {
    if net.input_dim() != 2 {
        return Err(Error::Unsupported(format!(
            "region maps need a 2-dimensional input, the network has {}",
            net.input_dim()
        )));
    }
    let (lo, hi) = bounds;
    if !(lo < hi && lo.is_finite() && hi.is_finite()) {
        return Err(Error::InvalidArgument(format!("bounds must satisfy lo < hi, got {lo},{hi}")));
    }
    if resolution == 0 {
        return Err(Error::InvalidArgument("resolution must be at least 1".into()));
    }
    net.check_class(class)?;
    let step = (hi - lo) / resolution as f64;
    let ties = TieBreak::active_convention(net);
    let mut ids = std::collections::HashMap::new();
    let mut cells = Vec::with_capacity(resolution * resolution);
    for iy in 0..resolution {
        for ix in 0..resolution {
            let p = [lo + (ix as f64 + 0.5) * step, lo + (iy as f64 + 0.5) * step];
            let fp = ties.fingerprint(1, &p);
            let next = ids.len();
            let region_id = *ids.entry(fp.clone()).or_insert(next);
            let (_, g) = ties.suffix_value_and_gradient(1, &p, class);
            cells.push(RegionCell {
                x: p[0],
                y: p[1],
                region_id,
                region_hash: fp.stable_hash(),
                grad_x: g[0],
                grad_y: g[1],
            });
        }
    }
    Ok(RegionMap {
        resolution,
        bounds,
        regions: ids.len(),
        cells,
    })
}

pub const REGION_CSV_HEADER: &str = "x,y,region_id,grad_x,grad_y";

pub fn write_region_csv(map: &RegionMap, mut out: impl Write) -> Result<()> {
    writeln!(out, "{REGION_CSV_HEADER}")?;
    for c in &map.cells {
        writeln!(out, "{},{},{},{},{}", c.x, c.y, c.region_id, c.grad_x, c.grad_y)?;
    }
    Ok(())
}
