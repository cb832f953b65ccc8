//! Loss terms and the three composite training losses.
//!
//! * `Fit` = training RMSE + singularity loss
//! * `Constrained` = `Fit` + constraint-violation loss
//! * `Regularized` = `Constrained` + smoothed L0.5 sparsity penalty

use serde::{Deserialize, Serialize};

use crate::autodiff::{backward_into, divide_units, forward_into, singularity_penalty, DEFAULT_THETA_DIV};
use crate::error::{Error, Result};
use crate::problems::{ConstraintSet, Dataset, NON_FINITE_PENALTY};
use crate::topology::Subtopology;

pub const DEFAULT_L05_KNOT: f64 = 0.01;
/// Large enough that the penalty keeps pulling dense templates toward sparse
/// subnetworks within the step budget.
pub const DEFAULT_LAMBDA_REG: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Training RMSE plus singularity loss.
    Fit,
    /// `Fit` plus constraint loss.
    Constrained,
    /// `Constrained` plus regularization.
    Regularized,
}

impl LossKind {
    pub fn includes_constraints(self) -> bool {
        self >= LossKind::Constrained
    }

    pub fn includes_regularization(self) -> bool {
        self == LossKind::Regularized
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSettings {
    pub theta_div: f64,
    /// Knot `a` of the smoothed L0.5 penalty.
    pub l05_knot: f64,
    pub lambda_reg: f64,
}

impl Default for LossSettings {
    fn default() -> Self {
        Self { theta_div: DEFAULT_THETA_DIV, l05_knot: DEFAULT_L05_KNOT, lambda_reg: DEFAULT_LAMBDA_REG }
    }
}

/// Datasets a loss is computed on.
#[derive(Debug, Clone, Copy)]
pub struct TrainingData<'a> {
    pub train: &'a Dataset,
    pub valid: &'a Dataset,
    pub constraints: &'a ConstraintSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_tr: f64,
    pub l_su: f64,
    pub l_cve: f64,
    pub l_reg: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn with_total(mut self, kind: LossKind) -> Self {
        self.total = self.l_tr + self.l_su;
        if kind.includes_constraints() {
            self.total += self.l_cve;
        }
        if kind.includes_regularization() {
            self.total += self.l_reg;
        }
        self
    }
}

/// Smoothed L0.5 penalty: `sqrt|w|` outside `(-a, a)` and the square root of
/// a quartic that matches value and slope at `|w| = a` inside.
pub fn smoothed_l05(w: f64, a: f64) -> f64 {
    let aw = w.abs();
    if aw >= a {
        aw.sqrt()
    } else {
        let w2 = w * w;
        (-w2 * w2 / (8.0 * a * a * a) + 3.0 * w2 / (4.0 * a) + 3.0 * a / 8.0).sqrt()
    }
}

pub fn smoothed_l05_grad(w: f64, a: f64) -> f64 {
    let aw = w.abs();
    if aw >= a {
        w.signum() / (2.0 * aw.sqrt())
    } else {
        let w2 = w * w;
        let inner = -w2 * w2 / (8.0 * a * a * a) + 3.0 * w2 / (4.0 * a) + 3.0 * a / 8.0;
        let d_inner = -w * w2 / (2.0 * a * a * a) + 3.0 * w / (2.0 * a);
        d_inner / (2.0 * inner.sqrt())
    }
}

#[derive(Debug, Clone, Copy)]
struct Terms {
    tr: bool,
    su: bool,
    cve: bool,
    reg: bool,
}

impl Terms {
    fn of(kind: LossKind) -> Self {
        Self { tr: true, su: true, cve: kind.includes_constraints(), reg: kind.includes_regularization() }
    }

    fn all() -> Self {
        Self { tr: true, su: true, cve: true, reg: true }
    }
}

/// Computes the requested terms; when `grad` is given, accumulates the
/// gradient of their sum into it (disabled entries zeroed).
fn evaluate(
    sub: &Subtopology,
    data: &TrainingData<'_>,
    settings: &LossSettings,
    terms: Terms,
    mut grad: Option<&mut [f64]>,
) -> Result<LossBreakdown> {
    let master = sub.master();
    let theta = settings.theta_div;
    let activity = sub.activity();
    let active_divs: Vec<(usize, usize)> =
        divide_units(sub).filter(|(id, _)| activity.active_units[*id]).collect();

    let use_tr = terms.tr;
    if use_tr && data.train.is_empty() {
        return Err(Error::EmptyDataset("training"));
    }
    let use_su = terms.su && !active_divs.is_empty();
    let use_cve = terms.cve && !data.constraints.is_empty();

    // Query points: training rows, then (for the singularity loss) validation
    // rows, then constraint points.
    let mut points: Vec<&[f64]> = Vec::new();
    if use_tr || use_su {
        points.extend(data.train.rows().map(|(x, _)| x));
    }
    let n_train = points.len();
    if use_su {
        points.extend(data.valid.rows().map(|(x, _)| x));
    }
    let constraint_start = points.len();
    if use_su || use_cve {
        points.extend(data.constraints.points());
    }
    let n_points = points.len();

    let n_acts = master.n_acts();
    let n_z = master.n_znodes();
    let mut acts = vec![0.0; n_points * n_acts];
    let mut zbuf = vec![0.0; n_points * n_z];
    let mut finite = vec![true; n_points];
    for (i, x) in points.iter().enumerate() {
        let a = &mut acts[i * n_acts..(i + 1) * n_acts];
        forward_into(sub, x, theta, a, &mut zbuf[i * n_z..(i + 1) * n_z]);
        finite[i] = a.iter().all(|v| v.is_finite());
    }
    let output = |i: usize| acts[(i + 1) * n_acts - 1];

    let want_grad = grad.is_some();
    let mut out_seeds = vec![0.0; if want_grad { n_points } else { 0 }];
    let mut z_seeds: Vec<Vec<(usize, f64)>> = vec![Vec::new(); if want_grad { n_points } else { 0 }];
    let mut breakdown = LossBreakdown::default();

    if use_tr {
        let residuals: Vec<f64> = (0..n_train)
            .map(|i| {
                let r = output(i) - data.train.target(i);
                if finite[i] && r.is_finite() {
                    r
                } else {
                    NON_FINITE_PENALTY
                }
            })
            .collect();
        let n = n_train as f64;
        let l = (residuals.iter().map(|r| r * r).sum::<f64>() / n).sqrt();
        breakdown.l_tr = l;
        if want_grad && l > 0.0 {
            for (i, r) in residuals.iter().enumerate() {
                if finite[i] {
                    out_seeds[i] += r / (n * l);
                }
            }
        }
    }

    if use_su {
        let m = (n_points * active_divs.len()) as f64;
        let mut acc = 0.0;
        for i in 0..n_points {
            for &(_, z1) in &active_divs {
                let p = singularity_penalty(zbuf[i * n_z + z1], theta);
                acc += p * p;
            }
        }
        let l = (acc / m).sqrt();
        breakdown.l_su = l;
        if want_grad && l > 0.0 {
            for i in (0..n_points).filter(|&i| finite[i]) {
                for &(_, z1) in &active_divs {
                    let p = singularity_penalty(zbuf[i * n_z + z1], theta);
                    if p > 0.0 {
                        z_seeds[i].push((z1, -p / (m * l)));
                    }
                }
            }
        }
    }

    if use_cve {
        let mut acc = 0.0;
        let mut count = 0usize;
        // (point index, weight, violation, d violation / d output)
        let mut parts: Vec<(usize, f64, f64, [f64; 3])> = Vec::new();
        let mut p = constraint_start;
        for group in &data.constraints.groups {
            for sample in &group.samples {
                let k = sample.points.len();
                let outs: Vec<f64> = (p..p + k)
                    .map(|i| if finite[i] { output(i) } else { f64::NAN })
                    .collect();
                let (v, dv) = group.spec.kind.violation(&outs, sample.target);
                acc += group.spec.weight * v * v;
                count += 1;
                if want_grad && v > 0.0 {
                    parts.push((p, group.spec.weight, v, dv));
                }
                p += k;
            }
        }
        let l = if count > 0 { (acc / count as f64).sqrt() } else { 0.0 };
        breakdown.l_cve = l;
        if want_grad && l > 0.0 {
            let denom = count as f64 * l;
            for (start, weight, v, dv) in parts {
                for (k, d) in dv.iter().enumerate().filter(|(_, d)| **d != 0.0) {
                    out_seeds[start + k] += weight * v / denom * d;
                }
            }
        }
    }

    if terms.reg {
        let a = settings.l05_knot;
        let w = sub.weights();
        let mut total = 0.0;
        for (p, _) in activity.active_params.iter().enumerate().filter(|(_, &on)| on) {
            total += smoothed_l05(w[p], a);
            if let Some(g) = grad.as_deref_mut() {
                g[p] += settings.lambda_reg * smoothed_l05_grad(w[p], a);
            }
        }
        breakdown.l_reg = settings.lambda_reg * total;
    }

    if let Some(g) = grad {
        let mut gacts = vec![0.0; n_acts];
        for i in 0..n_points {
            if !finite[i] || (out_seeds[i] == 0.0 && z_seeds[i].is_empty()) {
                continue;
            }
            backward_into(
                sub,
                &acts[i * n_acts..(i + 1) * n_acts],
                &zbuf[i * n_z..(i + 1) * n_z],
                out_seeds[i],
                &z_seeds[i],
                theta,
                &mut gacts,
                g,
            );
        }
        for (v, &on) in g.iter_mut().zip(sub.enabled()) {
            if !on {
                *v = 0.0;
            }
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
    }
    Ok(breakdown)
}

/// RMSE of the model on the training set.
pub fn training_loss(sub: &Subtopology, train: &Dataset, settings: &LossSettings) -> Result<f64> {
    if train.is_empty() {
        return Err(Error::EmptyDataset("training"));
    }
    let empty_v = Dataset::new(train.input_names.clone(), train.target_name.clone());
    let empty_c = ConstraintSet::default();
    let data = TrainingData { train, valid: &empty_v, constraints: &empty_c };
    let terms = Terms { tr: true, su: false, cve: false, reg: false };
    Ok(evaluate(sub, &data, settings, terms, None)?.l_tr)
}

/// Root-mean-square singularity error of all active divide units over every
/// training, validation and constraint point.
pub fn singularity_loss(sub: &Subtopology, data: &TrainingData<'_>, settings: &LossSettings) -> f64 {
    let terms = Terms { tr: false, su: true, cve: false, reg: false };
    evaluate(sub, data, settings, terms, None).map(|b| b.l_su).unwrap_or(0.0)
}

/// Pooled RMS of the per-sample constraint violations.
pub fn constraint_loss(sub: &Subtopology, constraints: &ConstraintSet, settings: &LossSettings) -> f64 {
    let theta = settings.theta_div;
    constraints.rms_violation(|x| crate::autodiff::predict(sub, x, theta))
}

/// Smoothed L0.5 penalty over the active learnable links, scaled by `lambda_reg`.
pub fn regularization_loss(sub: &Subtopology, settings: &LossSettings) -> f64 {
    let activity = sub.activity();
    let w = sub.weights();
    settings.lambda_reg
        * activity
            .active_params
            .iter()
            .enumerate()
            .filter(|(_, &on)| on)
            .map(|(p, _)| smoothed_l05(w[p], settings.l05_knot))
            .sum::<f64>()
}

/// Every term, with `total` summing the ones selected by `kind`.
pub fn composite_loss(
    kind: LossKind,
    sub: &Subtopology,
    data: &TrainingData<'_>,
    settings: &LossSettings,
) -> Result<LossBreakdown> {
    Ok(evaluate(sub, data, settings, Terms::all(), None)?.with_total(kind))
}

/// Value of the composite loss `kind`; its gradient is added into `grad`.
pub fn loss_and_gradient(
    sub: &Subtopology,
    kind: LossKind,
    data: &TrainingData<'_>,
    settings: &LossSettings,
    grad: &mut [f64],
) -> Result<f64> {
    if grad.len() != sub.master().n_params() {
        return Err(Error::ShapeMismatch { expected: sub.master().n_params(), found: grad.len() });
    }
    let b = evaluate(sub, data, settings, Terms::of(kind), Some(grad))?.with_total(kind);
    if !b.total.is_finite() {
        return Err(Error::NonFinite);
    }
    Ok(b.total)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::problems::{ConstraintKind, ConstraintSpec, Region};
    use crate::topology::{ActivationKind, MasterTopology, TopologySpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single_ident() -> Arc<MasterTopology> {
        Arc::new(MasterTopology::build(TopologySpec::new(1, vec![vec![ActivationKind::Identity]])).unwrap())
    }

    fn one_d(rows: &[(f64, f64)]) -> Dataset {
        Dataset::from_rows(
            vec!["x".into()],
            "y",
            &rows.iter().map(|&(x, y)| (vec![x], y)).collect::<Vec<_>>(),
        )
    }

    #[test]
    fn training_rmse_cases() {
        let s = LossSettings::default();
        let zero = Subtopology::empty(single_ident());
        assert_eq!(training_loss(&zero, &one_d(&[(0.0, 1.0), (5.0, -1.0)]), &s).unwrap(), 1.0);
        let ident = Subtopology::with_weights(single_ident(), vec![1.0, 0.0, 1.0, 0.0]);
        assert_eq!(training_loss(&ident, &one_d(&[(0.5, 0.5), (-2.0, -2.0)]), &s).unwrap(), 0.0);
        assert!(matches!(training_loss(&ident, &one_d(&[]), &s), Err(Error::EmptyDataset(_))));
    }

    #[test]
    fn smoothed_l05_values() {
        assert!((smoothed_l05(0.04, 0.01) - 0.2).abs() < 1e-15);
        let a = 0.01;
        let inner = |w: f64| (-w.powi(4) / (8.0 * a * a * a) + 3.0 * w * w / (4.0 * a) + 3.0 * a / 8.0).sqrt();
        assert!((inner(a) - a.sqrt()).abs() < 1e-15);
        assert_eq!(smoothed_l05(a, a), a.sqrt());
        assert!(smoothed_l05(0.0, a) > 0.0);
    }

    #[test]
    fn singularity_rms_of_constant_penalty() {
        // one divide unit whose denominator is theta/2 everywhere
        let m = Arc::new(MasterTopology::build(TopologySpec::new(1, vec![vec![ActivationKind::Divide]])).unwrap());
        let s = LossSettings::default();
        let half = s.theta_div / 2.0;
        // z0 = x (w=1, b=0); z1 = half (w=0, b=half); output w = 1
        let sub = Subtopology::with_weights(m, vec![1.0, 0.0, 0.0, half, 1.0, 0.0]);
        let train = one_d(&[(1.0, 0.0), (2.0, 0.0)]);
        let valid = one_d(&[(3.0, 0.0)]);
        let cs = ConstraintSet::default();
        let data = TrainingData { train: &train, valid: &valid, constraints: &cs };
        assert!((singularity_loss(&sub, &data, &s) - half).abs() < 1e-15);
    }

    #[test]
    fn no_active_divides_no_singularity_loss() {
        let sub = Subtopology::with_weights(single_ident(), vec![1.0, 0.0, 1.0, 0.0]);
        let train = one_d(&[(1.0, 0.0)]);
        let cs = ConstraintSet::default();
        let data = TrainingData { train: &train, valid: &train, constraints: &cs };
        assert_eq!(singularity_loss(&sub, &data, &LossSettings::default()), 0.0);
    }

    #[test]
    fn composite_nesting() {
        let m = Arc::new(MasterTopology::build(TopologySpec::master_a(1)).unwrap());
        let sub = Subtopology::init(m, &mut ChaCha8Rng::seed_from_u64(2));
        let train = one_d(&[(0.1, 0.3), (0.5, -0.2), (1.5, 1.0)]);
        let valid = one_d(&[(0.7, 0.1)]);
        let spec = ConstraintSpec::new("odd", ConstraintKind::Oddness, Region::Box { bounds: vec![[-1.0, 1.0]] });
        let cs = ConstraintSet::generate(&[spec], &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let data = TrainingData { train: &train, valid: &valid, constraints: &cs };
        let s = LossSettings::default();
        let l1 = composite_loss(LossKind::Fit, &sub, &data, &s).unwrap();
        let l2 = composite_loss(LossKind::Constrained, &sub, &data, &s).unwrap();
        let l3 = composite_loss(LossKind::Regularized, &sub, &data, &s).unwrap();
        assert!(l1.total <= l2.total && l2.total <= l3.total);
        assert_eq!(l1.total, l1.l_tr + l1.l_su);
        assert!(l1.l_cve > 0.0 && l1.l_reg > 0.0);
        assert!((l2.total - (l3.total - l3.l_reg)).abs() < 1e-12);
    }

    #[test]
    fn zero_model_regularized_total() {
        let sub = Subtopology::empty(single_ident());
        let train = one_d(&[(1.0, 2.0)]);
        let cs = ConstraintSet::default();
        let data = TrainingData { train: &train, valid: &train, constraints: &cs };
        let b = composite_loss(LossKind::Regularized, &sub, &data, &LossSettings::default()).unwrap();
        assert_eq!(b.l_reg, 0.0);
        assert_eq!(b.l_su, 0.0);
        assert_eq!(b.total, b.l_tr + b.l_su);
    }

    #[test]
    fn identity_gradient_matches_hand_value() {
        // RMSE of one sample (x=1, y=0) is |w + b|; d/dw at w=1 is 1.
        let sub = Subtopology::with_weights(single_ident(), vec![1.0, 0.0, 1.0, 0.0]);
        let train = one_d(&[(1.0, 0.0)]);
        let cs = ConstraintSet::default();
        let data = TrainingData { train: &train, valid: &train, constraints: &cs };
        let g = crate::autodiff::gradients(&sub, LossKind::Fit, &data, &LossSettings::default()).unwrap();
        assert!((g.values[0] - 1.0).abs() < 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn l05_is_c1_at_knot(a in 1e-4f64..1.0) {
            let eps = 1e-12 * a;
            proptest::prop_assert!((smoothed_l05(a - eps, a) - smoothed_l05(a, a)).abs() < 1e-9);
            proptest::prop_assert!((smoothed_l05_grad(a - eps, a) - smoothed_l05_grad(a, a)).abs() < 1e-9);
            proptest::prop_assert!((smoothed_l05_grad(-a + eps, a) - smoothed_l05_grad(-a, a)).abs() < 1e-9);
        }
    }
}
