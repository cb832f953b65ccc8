//! Forward evaluation of a subtopology and reverse-mode gradients.
//!
//! Activations live in one flat buffer: the model inputs first, then the
//! outputs of every layer in order, so the output unit's value is the last
//! entry. Pre-activations (z-nodes) live in a second buffer indexed by the
//! global z-node id.

use crate::error::{Error, Result};
use crate::losses::{self, LossKind, LossSettings, TrainingData};
use crate::topology::{ActivationKind, Subtopology, UnitSpec};

/// Divide units return 0 when their denominator does not exceed this.
pub const DEFAULT_THETA_DIV: f64 = 1e-3;

#[inline]
fn activate(kind: ActivationKind, z0: f64, z1: f64, theta_div: f64) -> f64 {
    match kind {
        ActivationKind::Identity => z0,
        ActivationKind::Sin => z0.sin(),
        ActivationKind::Cos => z0.cos(),
        ActivationKind::Tanh => z0.tanh(),
        ActivationKind::Arctan => z0.atan(),
        ActivationKind::Cube => z0 * z0 * z0,
        ActivationKind::Multiply => z0 * z1,
        ActivationKind::Divide => protected_div(z0, z1, theta_div),
    }
}

/// `z0 / z1` when `z1 > theta`, else 0.
#[inline]
pub fn protected_div(z0: f64, z1: f64, theta: f64) -> f64 {
    if z1 > theta {
        z0 / z1
    } else {
        0.0
    }
}

/// Per-sample singularity error of a divide unit.
#[inline]
pub fn singularity_penalty(z1: f64, theta: f64) -> f64 {
    (theta - z1).max(0.0)
}

/// Partial derivatives of a unit's output with respect to its z-nodes.
#[inline]
fn activation_grad(kind: ActivationKind, z0: f64, z1: f64, y: f64, theta_div: f64) -> (f64, f64) {
    match kind {
        ActivationKind::Identity => (1.0, 0.0),
        ActivationKind::Sin => (z0.cos(), 0.0),
        ActivationKind::Cos => (-z0.sin(), 0.0),
        ActivationKind::Tanh => (1.0 - y * y, 0.0),
        ActivationKind::Arctan => (1.0 / (1.0 + z0 * z0), 0.0),
        ActivationKind::Cube => (3.0 * z0 * z0, 0.0),
        ActivationKind::Multiply => (z1, z0),
        ActivationKind::Divide => {
            if z1 > theta_div {
                (1.0 / z1, -z0 / (z1 * z1))
            } else {
                (0.0, 0.0)
            }
        }
    }
}

/// Values computed by one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// Inputs, then every layer's unit outputs.
    pub acts: Vec<f64>,
    /// Pre-activations by global z-node id.
    pub z: Vec<f64>,
    /// `(unit id, penalty)` for every divide unit of the template.
    pub singularity: Vec<(usize, f64)>,
}

impl ForwardTrace {
    pub fn output(&self) -> f64 {
        *self.acts.last().expect("non-empty trace")
    }

    /// Output of the unit at (layer, index).
    pub fn unit_output(&self, sub: &Subtopology, layer: usize, index: usize) -> f64 {
        self.acts[sub.master().layers()[layer].act_offset + index]
    }
}

/// Forward pass with input validation.
pub fn forward(sub: &Subtopology, x: &[f64], theta_div: f64) -> Result<ForwardTrace> {
    let master = sub.master();
    if x.len() != master.input_dim() {
        return Err(Error::InputDimension { expected: master.input_dim(), found: x.len() });
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput(i));
    }
    let mut acts = vec![0.0; master.n_acts()];
    let mut z = vec![0.0; master.n_znodes()];
    forward_into(sub, x, theta_div, &mut acts, &mut z);
    let singularity = divide_units(sub)
        .map(|(id, z1)| (id, singularity_penalty(z[z1], theta_div)))
        .collect();
    Ok(ForwardTrace { acts, z, singularity })
}

/// Model output at `x`, without validation.
pub fn predict(sub: &Subtopology, x: &[f64], theta_div: f64) -> f64 {
    let master = sub.master();
    let mut acts = vec![0.0; master.n_acts()];
    let mut z = vec![0.0; master.n_znodes()];
    forward_into(sub, x, theta_div, &mut acts, &mut z);
    acts[acts.len() - 1]
}

/// `(unit id, z-node id of the denominator)` for every divide unit.
pub(crate) fn divide_units(sub: &Subtopology) -> impl Iterator<Item = (usize, usize)> + '_ {
    sub.master().layers().iter().flat_map(|layer| {
        layer.units.iter().enumerate().filter_map(move |(pos, u)| match u {
            UnitSpec::Learnable { kind: ActivationKind::Divide, znodes } => {
                Some((layer.unit_offset + pos, znodes[1].id))
            }
            _ => None,
        })
    })
}

pub(crate) fn forward_into(sub: &Subtopology, x: &[f64], theta_div: f64, acts: &mut [f64], z: &mut [f64]) {
    let master = sub.master();
    let w = sub.weights();
    acts[..x.len()].copy_from_slice(x);
    for layer in master.layers() {
        let input = layer.input_range();
        for (pos, unit) in layer.units.iter().enumerate() {
            let y = match unit {
                UnitSpec::Learnable { kind, znodes } => {
                    let mut zv = [0.0; 2];
                    for (k, zn) in znodes.iter().enumerate() {
                        let dot: f64 = w[zn.weights()]
                            .iter()
                            .zip(&acts[input.clone()])
                            .map(|(a, b)| a * b)
                            .sum();
                        let value = dot + w[zn.bias()];
                        z[zn.id] = value;
                        zv[k] = value;
                    }
                    activate(*kind, zv[0], zv[1], theta_div)
                }
                UnitSpec::Copy { source, skip } => {
                    if sub.skips()[*skip] {
                        acts[input.start + source]
                    } else {
                        0.0
                    }
                }
            };
            acts[layer.act_offset + pos] = y;
        }
    }
}

/// Accumulates into `grad` the gradient of `out_seed * y_hat + sum(seed * z)`
/// where the second term runs over `z_seeds` (extra seeds on individual
/// z-nodes, used for the singularity loss). `gacts` is scratch space.
pub(crate) fn backward_into(
    sub: &Subtopology,
    acts: &[f64],
    z: &[f64],
    out_seed: f64,
    z_seeds: &[(usize, f64)],
    theta_div: f64,
    gacts: &mut [f64],
    grad: &mut [f64],
) {
    let master = sub.master();
    let w = sub.weights();
    gacts.iter_mut().for_each(|g| *g = 0.0);
    let n = gacts.len();
    gacts[n - 1] = out_seed;

    for layer in master.layers().iter().rev() {
        let input = layer.input_range();
        for (pos, unit) in layer.units.iter().enumerate().rev() {
            let g = gacts[layer.act_offset + pos];
            match unit {
                UnitSpec::Learnable { kind, znodes } => {
                    let z0 = z[znodes[0].id];
                    let z1 = znodes.get(1).map(|zn| z[zn.id]).unwrap_or(0.0);
                    let (d0, d1) = if g != 0.0 {
                        activation_grad(*kind, z0, z1, acts[layer.act_offset + pos], theta_div)
                    } else {
                        (0.0, 0.0)
                    };
                    for (k, zn) in znodes.iter().enumerate() {
                        let mut dz = g * if k == 0 { d0 } else { d1 };
                        for &(id, seed) in z_seeds {
                            if id == zn.id {
                                dz += seed;
                            }
                        }
                        if dz == 0.0 {
                            continue;
                        }
                        let ws = zn.weights();
                        for (j, p) in ws.clone().enumerate() {
                            grad[p] += dz * acts[input.start + j];
                            gacts[input.start + j] += dz * w[p];
                        }
                        grad[zn.bias()] += dz;
                    }
                }
                UnitSpec::Copy { source, skip } => {
                    if g != 0.0 && sub.skips()[*skip] {
                        gacts[input.start + source] += g;
                    }
                }
            }
        }
    }
}

/// Dense gradient aligned with the parameter vector. Entries of disabled
/// weights are absent (stored as exact zeros and skipped by
/// [`Gradient::enabled_entries`]).
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
}

impl Gradient {
    pub fn enabled_entries(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.values
            .iter()
            .zip(&self.mask)
            .enumerate()
            .filter(|(_, (_, &m))| m)
            .map(|(i, (&g, _))| (i, g))
    }

    pub fn get(&self, param: usize) -> Option<f64> {
        self.mask[param].then(|| self.values[param])
    }
}

/// Gradient of the composite loss `kind` with respect to the enabled weights.
pub fn gradients(
    sub: &Subtopology,
    kind: LossKind,
    data: &TrainingData<'_>,
    settings: &LossSettings,
) -> Result<Gradient> {
    let mut values = vec![0.0; sub.master().n_params()];
    losses::loss_and_gradient(sub, kind, data, settings, &mut values)?;
    Ok(Gradient { values, mask: sub.enabled().to_vec() })
}
