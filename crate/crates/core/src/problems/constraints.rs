//! Prior-knowledge constraints, their synthetic samples, and per-sample
//! violation formulas.
//!
//! Each constraint is evaluated on small structures of model queries: single
//! points, ordered pairs, or centered finite-difference triples. A violation
//! is always nonnegative and exactly zero when the constraint holds.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Penalty recorded when a model output is not finite.
pub const NON_FINITE_PENALTY: f64 = 1e6;

/// Default number of samples generated per constraint.
pub const DEFAULT_SAMPLE_COUNT: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Increasing,
    Decreasing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Curvature {
    /// Positive second derivative.
    Convex,
    /// Negative second derivative.
    Concave,
}

/// Value a model must take at a point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PointTarget {
    Constant { value: f64 },
    /// `factor * x[var]`, e.g. the diagonal property `f(r, r) = r / 2`.
    ScaledInput { var: usize, factor: f64 },
}

impl PointTarget {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match *self {
            PointTarget::Constant { value } => value,
            PointTarget::ScaledInput { var, factor } => factor * x[var],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ConstraintKind {
    /// `f(.., a, .., b, ..) = f(.., b, .., a, ..)` for the two listed inputs.
    Symmetry { vars: [usize; 2] },
    PointEquality { target: PointTarget },
    /// `f(x) <= min_i x_i`.
    UpperBound,
    Monotonic { var: usize, direction: Direction, delta: f64 },
    /// `f(-x) = -f(x)`.
    Oddness,
    SecondDerivative { var: usize, curvature: Curvature, delta: f64 },
    /// `|f(x)| <= threshold` on the sampled region.
    Decay { threshold: f64 },
}

impl ConstraintKind {
    pub fn name(&self) -> &'static str {
        match self {
            ConstraintKind::Symmetry { .. } => "symmetry",
            ConstraintKind::PointEquality { .. } => "point_equality",
            ConstraintKind::UpperBound => "upper_bound",
            ConstraintKind::Monotonic { .. } => "monotonic",
            ConstraintKind::Oddness => "oddness",
            ConstraintKind::SecondDerivative { .. } => "derivative_sign",
            ConstraintKind::Decay { .. } => "decay",
        }
    }

    /// Number of model queries per sample.
    pub fn points_per_sample(&self) -> usize {
        match self {
            ConstraintKind::PointEquality { .. }
            | ConstraintKind::UpperBound
            | ConstraintKind::Decay { .. } => 1,
            ConstraintKind::Symmetry { .. }
            | ConstraintKind::Monotonic { .. }
            | ConstraintKind::Oddness => 2,
            ConstraintKind::SecondDerivative { .. } => 3,
        }
    }

    /// Violation of one sample given the model outputs at its points, and the
    /// derivative of the violation with respect to each output.
    pub fn violation(&self, outputs: &[f64], target: f64) -> (f64, [f64; 3]) {
        if outputs.iter().any(|v| !v.is_finite()) {
            return (NON_FINITE_PENALTY, [0.0; 3]);
        }
        let hinge = |v: f64, d: [f64; 3]| if v > 0.0 { (v, d) } else { (0.0, [0.0; 3]) };
        match *self {
            ConstraintKind::Symmetry { .. } => {
                let diff = outputs[0] - outputs[1];
                let s = sign(diff);
                (diff.abs(), [s, -s, 0.0])
            }
            ConstraintKind::PointEquality { .. } => {
                let diff = outputs[0] - target;
                (diff.abs(), [sign(diff), 0.0, 0.0])
            }
            ConstraintKind::UpperBound => hinge(outputs[0] - target, [1.0, 0.0, 0.0]),
            ConstraintKind::Decay { threshold } => {
                let f = outputs[0];
                hinge(f.abs() - threshold, [sign(f), 0.0, 0.0])
            }
            ConstraintKind::Monotonic { direction, .. } => match direction {
                Direction::Increasing => hinge(outputs[0] - outputs[1], [1.0, -1.0, 0.0]),
                Direction::Decreasing => hinge(outputs[1] - outputs[0], [-1.0, 1.0, 0.0]),
            },
            ConstraintKind::Oddness => {
                let sum = outputs[0] + outputs[1];
                let s = sign(sum);
                (sum.abs(), [s, s, 0.0])
            }
            ConstraintKind::SecondDerivative { curvature, delta, .. } => {
                let h2 = delta * delta;
                let second = (outputs[0] - 2.0 * outputs[1] + outputs[2]) / h2;
                let d = [1.0 / h2, -2.0 / h2, 1.0 / h2];
                match curvature {
                    Curvature::Convex => hinge(-second, [-d[0], -d[1], -d[2]]),
                    Curvature::Concave => hinge(second, d),
                }
            }
        }
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Where sample anchors are drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Region {
    /// Axis-aligned box, one interval per input.
    Box { bounds: Vec<[f64; 2]> },
    /// Points `(t, t, .., t)` with `t` uniform in `[lo, hi]`.
    Diagonal { dim: usize, lo: f64, hi: f64 },
    /// A single fixed point.
    Point { x: Vec<f64> },
}

impl Region {
    pub fn dim(&self) -> usize {
        match self {
            Region::Box { bounds } => bounds.len(),
            Region::Diagonal { dim, .. } => *dim,
            Region::Point { x } => x.len(),
        }
    }

    fn is_empty(&self) -> bool {
        match self {
            Region::Box { bounds } => bounds.is_empty() || bounds.iter().any(|[lo, hi]| !(lo <= hi)),
            Region::Diagonal { dim, lo, hi } => *dim == 0 || !(lo <= hi),
            Region::Point { x } => x.is_empty(),
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let uniform = |rng: &mut R, lo: f64, hi: f64| if lo < hi { rng.gen_range(lo..hi) } else { lo };
        match self {
            Region::Box { bounds } => bounds.iter().map(|&[lo, hi]| uniform(rng, lo, hi)).collect(),
            Region::Diagonal { dim, lo, hi } => vec![uniform(rng, *lo, *hi); *dim],
            Region::Point { x } => x.clone(),
        }
    }

    /// Shrinks the upper edge of `var` so that `x + span` stays inside.
    fn shrink_upper(&self, var: usize, span: f64) -> Region {
        let mut r = self.clone();
        if let Region::Box { bounds } = &mut r {
            bounds[var][1] -= span;
        }
        r
    }

    fn shrink_both(&self, var: usize, span: f64) -> Region {
        let mut r = self.clone();
        if let Region::Box { bounds } = &mut r {
            bounds[var][0] += span;
            bounds[var][1] -= span;
        }
        r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSpec {
    pub name: String,
    pub kind: ConstraintKind,
    pub region: Region,
    pub count: usize,
    /// Relative weight of this constraint's samples in the pooled RMS.
    #[serde(default = "default_weight")]
    pub weight: f64,
}

fn default_weight() -> f64 {
    1.0
}

impl ConstraintSpec {
    pub fn new(name: impl Into<String>, kind: ConstraintKind, region: Region) -> Self {
        Self { name: name.into(), kind, region, count: DEFAULT_SAMPLE_COUNT, weight: 1.0 }
    }

    pub fn with_count(mut self, count: usize) -> Self {
        self.count = count;
        self
    }
}

/// One constraint sample: the query points and the kind-specific target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSample {
    pub points: Vec<Vec<f64>>,
    #[serde(default)]
    pub target: f64,
}

/// Generates the samples of one constraint.
pub fn constraint_samples<R: Rng + ?Sized>(spec: &ConstraintSpec, rng: &mut R) -> Result<Vec<ConstraintSample>> {
    let region = match &spec.kind {
        ConstraintKind::Monotonic { var, delta, .. } => spec.region.shrink_upper(*var, *delta),
        ConstraintKind::SecondDerivative { var, delta, .. } => spec.region.shrink_both(*var, *delta),
        _ => spec.region.clone(),
    };
    if region.is_empty() {
        return Err(Error::EmptyRegion(spec.name.clone()));
    }
    let mut samples = Vec::with_capacity(spec.count);
    for _ in 0..spec.count {
        let x = region.sample(rng);
        let sample = match &spec.kind {
            ConstraintKind::Symmetry { vars: [a, b] } => {
                let mut y = x.clone();
                y.swap(*a, *b);
                ConstraintSample { points: vec![x, y], target: 0.0 }
            }
            ConstraintKind::PointEquality { target } => {
                let t = target.eval(&x);
                ConstraintSample { points: vec![x], target: t }
            }
            ConstraintKind::UpperBound => {
                let t = x.iter().copied().fold(f64::INFINITY, f64::min);
                ConstraintSample { points: vec![x], target: t }
            }
            ConstraintKind::Monotonic { var, delta, .. } => {
                let mut y = x.clone();
                y[*var] += delta;
                ConstraintSample { points: vec![x, y], target: 0.0 }
            }
            ConstraintKind::Oddness => {
                let y: Vec<f64> = x.iter().map(|v| -v).collect();
                ConstraintSample { points: vec![x, y], target: 0.0 }
            }
            ConstraintKind::SecondDerivative { var, delta, .. } => {
                let mut lo = x.clone();
                let mut hi = x.clone();
                lo[*var] -= delta;
                hi[*var] += delta;
                ConstraintSample { points: vec![lo, x, hi], target: 0.0 }
            }
            ConstraintKind::Decay { .. } => ConstraintSample { points: vec![x], target: 0.0 },
        };
        samples.push(sample);
    }
    Ok(samples)
}

/// Per-sample violations of a model on one constraint's samples.
pub fn constraint_violation<F>(model: F, spec: &ConstraintSpec, samples: &[ConstraintSample]) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    samples
        .iter()
        .map(|s| {
            let outputs: Vec<f64> = s.points.iter().map(|p| model(p)).collect();
            spec.kind.violation(&outputs, s.target).0
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintGroup {
    pub spec: ConstraintSpec,
    pub samples: Vec<ConstraintSample>,
}

/// The constraint data set: every constraint with its generated samples.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub groups: Vec<ConstraintGroup>,
}

impl ConstraintSet {
    pub fn generate<R: Rng + ?Sized>(specs: &[ConstraintSpec], rng: &mut R) -> Result<Self> {
        let groups = specs
            .iter()
            .map(|spec| {
                Ok(ConstraintGroup { spec: spec.clone(), samples: constraint_samples(spec, rng)? })
            })
            .collect::<Result<_>>()?;
        Ok(Self { groups })
    }

    pub fn is_empty(&self) -> bool {
        self.groups.iter().all(|g| g.samples.is_empty())
    }

    pub fn n_samples(&self) -> usize {
        self.groups.iter().map(|g| g.samples.len()).sum()
    }

    /// Every query point of every sample, in group/sample/point order.
    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.groups
            .iter()
            .flat_map(|g| g.samples.iter().flat_map(|s| s.points.iter().map(|p| p.as_slice())))
    }

    /// Pooled weighted RMS of all violations of `model`.
    pub fn rms_violation<F>(&self, model: F) -> f64
    where
        F: Fn(&[f64]) -> f64,
    {
        let mut acc = 0.0;
        let mut n = 0usize;
        for g in &self.groups {
            for v in constraint_violation(&model, &g.spec, &g.samples) {
                acc += g.spec.weight * v * v;
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            (acc / n as f64).sqrt()
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}
