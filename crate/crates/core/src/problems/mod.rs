//! Benchmark problem instances: reference models, data sets, domains and
//! prior-knowledge constraints.

mod constraints;
mod dataset;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use constraints::{
    constraint_samples, constraint_violation, ConstraintGroup, ConstraintKind, ConstraintSample, ConstraintSet,
    ConstraintSpec, Curvature, Direction, PointTarget, Region, DEFAULT_SAMPLE_COUNT, NON_FINITE_PENALTY,
};
pub use dataset::Dataset;

use crate::error::{Error, Result};
use crate::losses::TrainingData;
use crate::topology::TopologySpec;

/// Relative standard deviation of the additive noise on resistor targets.
pub const RESISTORS_NOISE: f64 = 0.02;

/// Slip-force constants (b, c, d, e) of the tire model.
pub const MAGIC_BCDE: (f64, f64, f64, f64) = (55.56, 1.35, 0.4, 0.52);
pub const MAGIC_MASS: f64 = 407.75;
pub const MAGIC_GRAVITY: f64 = 9.81;

/// Positions of the magnetic manipulator are expressed in centimetres. In
/// metres the whole operating region spans 0.15, and the features of the force
/// curve are far too small for the initial weight range to resolve.
pub const MAGMAN_LENGTH_SCALE: f64 = 100.0;
/// Location of the force extremum of the magnetic manipulator model (0.008 m).
pub const MAGMAN_EXTREMUM: f64 = 0.008 * MAGMAN_LENGTH_SCALE;
/// Denominator constant placing the extremum at [`MAGMAN_EXTREMUM`].
pub const MAGMAN_C2: f64 = 5.0 * MAGMAN_EXTREMUM * MAGMAN_EXTREMUM;
/// Peak force magnitude at the default coil current.
pub const MAGMAN_PEAK: f64 = 0.3;
pub const MAGMAN_CURRENT: f64 = 1.0;

pub const QUAD_VX_GAIN: f64 = 0.985;
pub const QUAD_THETA_GAIN: f64 = 0.473;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemName {
    Resistors,
    Magic,
    Magman,
    Quadcopter,
}

impl ProblemName {
    pub const ALL: [ProblemName; 4] =
        [ProblemName::Resistors, ProblemName::Magic, ProblemName::Magman, ProblemName::Quadcopter];

    pub fn as_str(self) -> &'static str {
        match self {
            ProblemName::Resistors => "resistors",
            ProblemName::Magic => "magic",
            ProblemName::Magman => "magman",
            ProblemName::Quadcopter => "quadcopter",
        }
    }

    pub fn input_dim(self) -> usize {
        match self {
            ProblemName::Resistors | ProblemName::Quadcopter => 2,
            ProblemName::Magic | ProblemName::Magman => 1,
        }
    }

    pub fn default_master(self) -> MasterSelector {
        match self {
            ProblemName::Resistors | ProblemName::Magman => MasterSelector::MasterA,
            ProblemName::Magic => MasterSelector::MasterB,
            ProblemName::Quadcopter => MasterSelector::Quadcopter,
        }
    }

    /// Ground-truth model.
    pub fn reference(self, x: &[f64]) -> f64 {
        match self {
            ProblemName::Resistors => resistors_reference(x[0], x[1]),
            ProblemName::Magic => magic_reference(x[0]),
            ProblemName::Magman => magman_reference(x[0]),
            ProblemName::Quadcopter => QUAD_VX_GAIN * x[0] + QUAD_THETA_GAIN * x[1],
        }
    }
}

impl fmt::Display for ProblemName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProblemName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ProblemName::ALL
            .into_iter()
            .find(|p| p.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::UnknownProblem(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MasterSelector {
    #[serde(rename = "mastera")]
    MasterA,
    #[serde(rename = "masterb")]
    MasterB,
    Quadcopter,
}

impl MasterSelector {
    pub fn spec(self, input_dim: usize) -> TopologySpec {
        match self {
            MasterSelector::MasterA => TopologySpec::master_a(input_dim),
            MasterSelector::MasterB => TopologySpec::master_b(input_dim),
            MasterSelector::Quadcopter => TopologySpec::quadcopter(input_dim),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MasterSelector::MasterA => "mastera",
            MasterSelector::MasterB => "masterb",
            MasterSelector::Quadcopter => "quadcopter",
        }
    }
}

impl FromStr for MasterSelector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mastera" => Ok(MasterSelector::MasterA),
            "masterb" => Ok(MasterSelector::MasterB),
            "quadcopter" => Ok(MasterSelector::Quadcopter),
            other => Err(Error::Config(format!("unknown master topology `{other}`"))),
        }
    }
}

pub fn resistors_reference(r1: f64, r2: f64) -> f64 {
    r1 * r2 / (r1 + r2)
}

/// Longitudinal tire force divided by `m * g`.
pub fn magic_reference(kappa: f64) -> f64 {
    let (b, c, d, e) = MAGIC_BCDE;
    d * (c * (b * (1.0 - e) * kappa + e * (b * kappa).atan()).atan()).sin()
}

pub fn magman_c1() -> f64 {
    let den = MAGMAN_EXTREMUM * MAGMAN_EXTREMUM + MAGMAN_C2;
    MAGMAN_PEAK * den * den * den / (MAGMAN_CURRENT * MAGMAN_EXTREMUM)
}

pub fn magman_reference(x: f64) -> f64 {
    magman_model(x, MAGMAN_CURRENT, magman_c1(), MAGMAN_C2)
}

/// Empirical magnet force model `-i c1 x / (x^2 + c2)^3`.
pub fn magman_model(x: f64, current: f64, c1: f64, c2: f64) -> f64 {
    let den = x * x + c2;
    -current * c1 * x / (den * den * den)
}

/// Tunable generator settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProblemOptions {
    /// Noise standard deviation on resistor targets, relative to the clean
    /// target's standard deviation.
    pub resistors_noise: f64,
    pub magman_c1: f64,
    pub magman_c2: f64,
    pub magman_current: f64,
    /// Samples per constraint.
    pub constraint_samples: usize,
}

impl Default for ProblemOptions {
    fn default() -> Self {
        Self {
            resistors_noise: RESISTORS_NOISE,
            magman_c1: magman_c1(),
            magman_c2: MAGMAN_C2,
            magman_current: MAGMAN_CURRENT,
            constraint_samples: DEFAULT_SAMPLE_COUNT,
        }
    }
}

/// Input intervals of the training, interpolation and extrapolation domains.
/// Each entry lists the intervals of one region; multi-input problems use
/// the same intervals for every input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domains {
    pub train: Vec<[f64; 2]>,
    pub interpolation: Vec<[f64; 2]>,
    pub extrapolation: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemInstance {
    pub name: ProblemName,
    pub seed: u64,
    pub train: Dataset,
    pub valid: Dataset,
    pub constraints: ConstraintSet,
    /// Labeled points spanning the interpolation and extrapolation domains
    /// (or a held-out test set).
    pub test: Dataset,
    pub domains: Domains,
    pub master: MasterSelector,
    pub options: ProblemOptions,
    /// Set when the data are synthetic stand-ins for measurements.
    pub synthetic_note: Option<String>,
}

impl ProblemInstance {
    pub fn input_dim(&self) -> usize {
        self.name.input_dim()
    }

    pub fn training_data(&self) -> TrainingData<'_> {
        TrainingData { train: &self.train, valid: &self.valid, constraints: &self.constraints }
    }

    pub fn reference(&self, x: &[f64]) -> f64 {
        match self.name {
            ProblemName::Magman => {
                let o = &self.options;
                magman_model(x[0], o.magman_current, o.magman_c1, o.magman_c2)
            }
            other => other.reference(x),
        }
    }

    /// RMSE of `model` over the interpolation + extrapolation test points.
    pub fn rmse_int_ext<F: Fn(&[f64]) -> f64>(&self, model: F) -> f64 {
        self.test.rmse(model)
    }

    /// RMS of the reference model over the test points.
    pub fn target_rms(&self) -> f64 {
        crate::stats::rms(self.test.targets())
    }
}

pub fn generate_problem(name: ProblemName, seed: u64) -> Result<ProblemInstance> {
    generate_problem_with(name, seed, &ProblemOptions::default())
}

pub fn generate_problem_with(name: ProblemName, seed: u64, options: &ProblemOptions) -> Result<ProblemInstance> {
    if options.constraint_samples == 0 {
        return Err(Error::Config("constraint_samples must be positive".into()));
    }
    if !(options.resistors_noise >= 0.0) {
        return Err(Error::Config("resistors_noise must be non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = match name {
        ProblemName::Resistors => resistors(seed, &mut rng, options),
        ProblemName::Magic => magic(seed, &mut rng, options),
        ProblemName::Magman => magman(seed, &mut rng, options),
        ProblemName::Quadcopter => quadcopter(seed, &mut rng),
    }?;
    p.options = *options;
    Ok(p)
}

fn sized(specs: Vec<ConstraintSpec>, options: &ProblemOptions) -> Vec<ConstraintSpec> {
    specs.into_iter().map(|s| s.with_count(options.constraint_samples)).collect()
}

fn names(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

fn uniform_in_union<R: Rng>(rng: &mut R, intervals: &[[f64; 2]]) -> f64 {
    let total: f64 = intervals.iter().map(|[lo, hi]| hi - lo).sum();
    let mut u = rng.gen_range(0.0..total);
    for &[lo, hi] in intervals {
        if u < hi - lo {
            return lo + u;
        }
        u -= hi - lo;
    }
    intervals.last().map(|i| i[1]).unwrap_or(0.0)
}

fn grid(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| if n == 1 { lo } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 })
}

fn labeled<F: Fn(&[f64]) -> f64>(reference: F, inputs: &[&str], target: &str, xs: impl Iterator<Item = Vec<f64>>) -> Dataset {
    let mut ds = Dataset::new(names(inputs), target);
    for x in xs {
        let y = reference(&x);
        ds.push(&x, y);
    }
    ds
}

fn resistors(seed: u64, rng: &mut ChaCha8Rng, options: &ProblemOptions) -> Result<ProblemInstance> {
    let name = ProblemName::Resistors;
    let train_dom = [0.0001, 20.0];
    let ext_dom = [20.0001, 40.0];
    let inputs = ["r1", "r2"];

    let draw = |rng: &mut ChaCha8Rng, n: usize| -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| vec![rng.gen_range(train_dom[0]..train_dom[1]), rng.gen_range(train_dom[0]..train_dom[1])])
            .collect()
    };
    let xt = draw(rng, 400);
    let xv = draw(rng, 100);
    let clean: Vec<f64> = xt.iter().chain(&xv).map(|x| name.reference(x)).collect();
    let mean = clean.iter().sum::<f64>() / clean.len() as f64;
    let std = (clean.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / clean.len() as f64).sqrt();
    let noise = Normal::new(0.0, options.resistors_noise * std).expect("valid sigma");
    let noisy = |xs: &[Vec<f64>], rng: &mut ChaCha8Rng| {
        let mut ds = Dataset::new(names(&inputs), "r");
        for x in xs {
            ds.push(x, name.reference(x) + noise.sample(rng));
        }
        ds
    };
    let train = noisy(&xt, rng);
    let valid = noisy(&xv, rng);

    let full = [train_dom[0], ext_dom[1]];
    let specs = vec![
        ConstraintSpec::new(
            "symmetry",
            ConstraintKind::Symmetry { vars: [0, 1] },
            Region::Box { bounds: vec![full, full] },
        ),
        ConstraintSpec::new(
            "diagonal",
            ConstraintKind::PointEquality { target: PointTarget::ScaledInput { var: 0, factor: 0.5 } },
            Region::Diagonal { dim: 2, lo: full[0], hi: full[1] },
        ),
        ConstraintSpec::new("upper_bound", ConstraintKind::UpperBound, Region::Box { bounds: vec![full, full] }),
    ];
    let constraints = ConstraintSet::generate(&sized(specs, options), rng)?;

    let n = 32;
    let int_pts = grid(train_dom[0], train_dom[1], n).flat_map(|a| grid(train_dom[0], train_dom[1], n).map(move |b| vec![a, b]));
    let ext_pts = grid(ext_dom[0], ext_dom[1], n).flat_map(|a| grid(ext_dom[0], ext_dom[1], n).map(move |b| vec![a, b]));
    let test = labeled(|x| name.reference(x), &inputs, "r", int_pts.chain(ext_pts));

    Ok(ProblemInstance {
        name,
        seed,
        train,
        valid,
        constraints,
        test,
        domains: Domains { train: vec![train_dom], interpolation: vec![train_dom], extrapolation: vec![ext_dom] },
        master: name.default_master(),
        options: ProblemOptions::default(),
        synthetic_note: None,
    })
}

fn magic(seed: u64, rng: &mut ChaCha8Rng, options: &ProblemOptions) -> Result<ProblemInstance> {
    let name = ProblemName::Magic;
    let int = [[0.0, 0.02], [0.2, 0.99]];
    let ext = [[0.03, 0.1]];
    let mut xs: Vec<Vec<f64>> = (0..100).map(|_| vec![uniform_in_union(rng, &int)]).collect();
    xs.extend((0..10).map(|_| vec![uniform_in_union(rng, &ext)]));
    xs.shuffle(rng);
    let (xt, xv) = xs.split_at(88);
    let train = labeled(|x| name.reference(x), &["kappa"], "force", xt.iter().cloned());
    let valid = labeled(|x| name.reference(x), &["kappa"], "force", xv.iter().cloned());

    let delta = 5e-3;
    let specs = vec![
        ConstraintSpec::new(
            "zero_at_origin",
            ConstraintKind::PointEquality { target: PointTarget::Constant { value: 0.0 } },
            Region::Point { x: vec![0.0] },
        ),
        ConstraintSpec::new(
            "convex_right",
            ConstraintKind::SecondDerivative { var: 0, curvature: Curvature::Convex, delta },
            Region::Box { bounds: vec![int[1]] },
        ),
        ConstraintSpec::new(
            "concave_ext",
            ConstraintKind::SecondDerivative { var: 0, curvature: Curvature::Concave, delta },
            Region::Box { bounds: vec![ext[0]] },
        ),
    ];
    let constraints = ConstraintSet::generate(&sized(specs, options), rng)?;

    let step = 1e-3;
    let mut pts = Vec::new();
    for &[lo, hi] in int.iter().chain(&ext) {
        let n = ((hi - lo) / step).round() as usize + 1;
        pts.extend(grid(lo, hi, n).map(|k| vec![k]));
    }
    let test = labeled(|x| name.reference(x), &["kappa"], "force", pts.into_iter());

    Ok(ProblemInstance {
        name,
        seed,
        train,
        valid,
        constraints,
        test,
        domains: Domains { train: vec![[0.0, 1.0]], interpolation: int.to_vec(), extrapolation: ext.to_vec() },
        master: name.default_master(),
        options: ProblemOptions::default(),
        synthetic_note: Some("force normalized by m*g".into()),
    })
}

fn magman(seed: u64, rng: &mut ChaCha8Rng, options: &ProblemOptions) -> Result<ProblemInstance> {
    let (current, c1, c2) = (options.magman_current, options.magman_c1, options.magman_c2);
    let model = move |x: &[f64]| magman_model(x[0], current, c1, c2);
    let int = [-0.027 * MAGMAN_LENGTH_SCALE, 0.027 * MAGMAN_LENGTH_SCALE];
    let whole = [-0.075 * MAGMAN_LENGTH_SCALE, 0.075 * MAGMAN_LENGTH_SCALE];
    let draw = |rng: &mut ChaCha8Rng, n: usize| -> Vec<Vec<f64>> {
        (0..n).map(|_| vec![rng.gen_range(int[0]..=int[1])]).collect()
    };
    let xt = draw(rng, 400);
    let xv = draw(rng, 201);
    let train = labeled(model, &["x"], "force", xt.into_iter());
    let valid = labeled(model, &["x"], "force", xv.into_iter());

    let delta = 1e-3 * MAGMAN_LENGTH_SCALE;
    // Force extrema sit where x^2 = c2 / 5.
    let x0 = (c2 / 5.0).sqrt();
    let inc = |lo: f64, hi: f64, label: &str| {
        ConstraintSpec::new(
            label,
            ConstraintKind::Monotonic { var: 0, direction: Direction::Increasing, delta },
            Region::Box { bounds: vec![[lo, hi]] },
        )
    };
    let decay = magman_model(-x0, current, c1, c2).abs() * 0.01;
    let specs = vec![
        ConstraintSpec::new("odd", ConstraintKind::Oddness, Region::Box { bounds: vec![whole] }),
        inc(whole[0], -x0, "increasing_left"),
        inc(x0, whole[1], "increasing_right"),
        ConstraintSpec::new(
            "decreasing_center",
            ConstraintKind::Monotonic { var: 0, direction: Direction::Decreasing, delta },
            Region::Box { bounds: vec![[-x0, x0]] },
        ),
        ConstraintSpec::new(
            "origin",
            ConstraintKind::PointEquality { target: PointTarget::Constant { value: 0.0 } },
            Region::Point { x: vec![0.0] },
        ),
        ConstraintSpec::new(
            "decay_right",
            ConstraintKind::Decay { threshold: decay },
            Region::Box { bounds: vec![[whole[1], 2.0 * whole[1]]] },
        ),
        ConstraintSpec::new(
            "decay_left",
            ConstraintKind::Decay { threshold: decay },
            Region::Box { bounds: vec![[2.0 * whole[0], whole[0]]] },
        ),
    ];
    let constraints = ConstraintSet::generate(&sized(specs, options), rng)?;
    let test = labeled(model, &["x"], "force", grid(whole[0], whole[1], 301).map(|x| vec![x]));

    Ok(ProblemInstance {
        name: ProblemName::Magman,
        seed,
        train,
        valid,
        constraints,
        test,
        domains: Domains {
            train: vec![int],
            interpolation: vec![int],
            extrapolation: vec![[whole[0], int[0]], [int[1], whole[1]]],
        },
        master: ProblemName::Magman.default_master(),
        options: ProblemOptions::default(),
        synthetic_note: Some(format!(
            "synthetic data from the empirical force model, x in cm, c1={:.6e}, c2={:.6e}, i={}",
            c1, c2, current
        )),
    })
}

fn quadcopter(seed: u64, rng: &mut ChaCha8Rng) -> Result<ProblemInstance> {
    let name = ProblemName::Quadcopter;
    let n = 498;
    // Pitch excitation: a few sinusoids with random phases.
    let components: Vec<(f64, f64, f64)> = [(0.08, 80.0), (0.04, 27.0), (0.02, 11.0)]
        .iter()
        .map(|&(amp, period)| (amp, period, rng.gen_range(0.0..std::f64::consts::TAU)))
        .collect();
    let theta = |k: usize| -> f64 {
        components
            .iter()
            .map(|&(a, p, phase)| a * (std::f64::consts::TAU * k as f64 / p + phase).sin())
            .sum()
    };
    let mut vx = 0.0;
    let mut rows = Vec::with_capacity(n);
    for k in 0..n {
        let th = theta(k);
        let next = name.reference(&[vx, th]);
        rows.push((vec![vx, th], next));
        vx = next;
    }
    let inputs = names(&["v_x", "theta"]);
    let train = Dataset::from_rows(inputs.clone(), "v_x_next", &rows[..360]);
    let valid = Dataset::from_rows(inputs.clone(), "v_x_next", &rows[360..450]);
    let test = Dataset::from_rows(inputs, "v_x_next", &rows[450..]);
    Ok(ProblemInstance {
        name,
        seed,
        train,
        valid,
        constraints: ConstraintSet::default(),
        test,
        domains: Domains { train: vec![], interpolation: vec![], extrapolation: vec![] },
        master: name.default_master(),
        options: ProblemOptions::default(),
        synthetic_note: Some("synthetic trajectory simulated from the linear velocity model".into()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_spot_values() {
        assert_eq!(resistors_reference(1.0, 1.0), 0.5);
        assert_eq!(magic_reference(0.0), 0.0);
        for x in [0.001, 0.01, 0.03, 0.07] {
            assert_eq!(magman_reference(x), -magman_reference(-x));
        }
        assert!((magman_reference(-MAGMAN_EXTREMUM) - MAGMAN_PEAK).abs() < 1e-12);
    }

    #[test]
    fn magman_extremum_is_stationary() {
        let h = 1e-7;
        for x0 in [-MAGMAN_EXTREMUM, MAGMAN_EXTREMUM] {
            let d = (magman_reference(x0 + h) - magman_reference(x0 - h)) / (2.0 * h);
            assert!(d.abs() < 1e-4 * MAGMAN_PEAK / MAGMAN_EXTREMUM, "slope {d}");
        }
    }

    #[test]
    fn dataset_sizes() {
        let sizes = |p: &ProblemInstance| (p.train.len(), p.valid.len());
        assert_eq!(sizes(&generate_problem(ProblemName::Resistors, 0).unwrap()), (400, 100));
        assert_eq!(sizes(&generate_problem(ProblemName::Magic, 0).unwrap()), (88, 22));
        assert_eq!(sizes(&generate_problem(ProblemName::Magman, 0).unwrap()), (400, 201));
        let q = generate_problem(ProblemName::Quadcopter, 0).unwrap();
        assert_eq!((q.train.len(), q.valid.len(), q.test.len()), (360, 90, 48));
    }

    #[test]
    fn train_and_valid_are_disjoint() {
        for name in ProblemName::ALL {
            let p = generate_problem(name, 3).unwrap();
            for (xv, _) in p.valid.rows() {
                assert!(p.train.rows().all(|(xt, _)| xt != xv), "{name}");
            }
        }
    }

    #[test]
    fn generation_is_seeded() {
        let a = generate_problem(ProblemName::Magic, 7).unwrap();
        let b = generate_problem(ProblemName::Magic, 7).unwrap();
        let c = generate_problem(ProblemName::Magic, 8).unwrap();
        assert_eq!(a.train, b.train);
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn reference_models_satisfy_their_constraints() {
        for name in ProblemName::ALL {
            let p = generate_problem(name, 1).unwrap();
            let v = p.constraints.rms_violation(|x| name.reference(x));
            assert!(v < 1e-9, "{name}: {v}");
            assert_eq!(p.rmse_int_ext(|x| name.reference(x)), 0.0);
        }
    }

    #[test]
    fn constant_offset_rmse() {
        let p = generate_problem(ProblemName::Magman, 0).unwrap();
        let c = 0.125;
        assert!((p.rmse_int_ext(|x| magman_reference(x[0]) + c) - c).abs() < 1e-12);
    }

    #[test]
    fn unknown_problem_name() {
        assert!(matches!("pendulum".parse::<ProblemName>(), Err(Error::UnknownProblem(_))));
    }
}
