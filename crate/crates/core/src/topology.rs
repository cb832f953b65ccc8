//! Master topology template and the subtopology data model.
//!
//! A [`MasterTopology`] is a layered, fully connected network of typed units.
//! Every hidden layer after the first also holds one *copy unit* per unit of
//! the previous layer; a copy unit forwards its source's output through a
//! binary skip connection. The output layer is a single identity unit that
//! computes a weighted sum of the last hidden layer plus a bias.
//!
//! A [`Subtopology`] carves a candidate model out of the template by zeroing
//! and disabling learnable weights and by clearing skip bits.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::optimizer::AdamState;

/// Default half-width of the uniform weight initializer.
pub const INIT_BOUND: f64 = 0.5;

/// Default pruning threshold.
pub const DEFAULT_THETA_A: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    Identity,
    Sin,
    Cos,
    Tanh,
    Arctan,
    Cube,
    Multiply,
    Divide,
}

impl ActivationKind {
    pub const ALL: [ActivationKind; 8] = [
        ActivationKind::Identity,
        ActivationKind::Sin,
        ActivationKind::Cos,
        ActivationKind::Tanh,
        ActivationKind::Arctan,
        ActivationKind::Cube,
        ActivationKind::Multiply,
        ActivationKind::Divide,
    ];

    pub fn arity(self) -> usize {
        match self {
            ActivationKind::Multiply | ActivationKind::Divide => 2,
            _ => 1,
        }
    }

    /// Units whose output is undefined for some operand values.
    pub fn is_singular(self) -> bool {
        matches!(self, ActivationKind::Divide)
    }

    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::Identity => "ident",
            ActivationKind::Sin => "sin",
            ActivationKind::Cos => "cos",
            ActivationKind::Tanh => "tanh",
            ActivationKind::Arctan => "arctan",
            ActivationKind::Cube => "cube",
            ActivationKind::Multiply => "mul",
            ActivationKind::Divide => "div",
        }
    }
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ActivationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ident" | "identity" | "id" => Ok(ActivationKind::Identity),
            "sin" => Ok(ActivationKind::Sin),
            "cos" => Ok(ActivationKind::Cos),
            "tanh" => Ok(ActivationKind::Tanh),
            "arctan" | "atan" => Ok(ActivationKind::Arctan),
            "cube" => Ok(ActivationKind::Cube),
            "mul" | "multiply" | "*" => Ok(ActivationKind::Multiply),
            "div" | "divide" | "/" => Ok(ActivationKind::Divide),
            other => Err(Error::UnknownActivation(other.to_string())),
        }
    }
}

/// Layer-by-layer list of learnable unit kinds. Copy units are implied.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologySpec {
    pub input_dim: usize,
    pub hidden: Vec<Vec<ActivationKind>>,
}

impl TopologySpec {
    pub fn new(input_dim: usize, hidden: Vec<Vec<ActivationKind>>) -> Self {
        Self { input_dim, hidden }
    }

    /// Parses the compact layer notation used in configuration files, e.g.
    /// `"sin*2,tanh*2,ident*2,mul*2 | sin*2,tanh*2,ident*2,mul*2"`.
    pub fn parse_layers(input_dim: usize, text: &str) -> Result<Self> {
        let mut hidden = Vec::new();
        for layer in text.split('|') {
            let layer = layer.trim();
            if layer.is_empty() {
                continue;
            }
            let mut kinds = Vec::new();
            for item in layer.split(',') {
                let item = item.trim();
                let (name, count) = match item.split_once('*') {
                    Some((name, count)) => {
                        let count = count.trim().parse::<usize>().map_err(|_| {
                            Error::InvalidTopology(format!("bad repeat count in `{item}`"))
                        })?;
                        (name, count)
                    }
                    None => (item, 1),
                };
                let kind: ActivationKind = name.parse()?;
                kinds.extend(std::iter::repeat(kind).take(count));
            }
            hidden.push(kinds);
        }
        Ok(Self { input_dim, hidden })
    }

    /// Inverse of [`TopologySpec::parse_layers`].
    pub fn layers_string(&self) -> String {
        self.hidden
            .iter()
            .map(|layer| {
                let mut parts: Vec<String> = Vec::new();
                let mut i = 0;
                while i < layer.len() {
                    let mut j = i;
                    while j < layer.len() && layer[j] == layer[i] {
                        j += 1;
                    }
                    if j - i == 1 {
                        parts.push(layer[i].name().to_string());
                    } else {
                        parts.push(format!("{}*{}", layer[i].name(), j - i));
                    }
                    i = j;
                }
                parts.join(",")
            })
            .collect::<Vec<_>>()
            .join(" | ")
    }

    fn elementary(set: [ActivationKind; 4], extra: Option<ActivationKind>) -> Vec<ActivationKind> {
        let mut layer: Vec<ActivationKind> = set.iter().flat_map(|&k| [k, k]).collect();
        layer.extend(extra);
        layer
    }

    /// Three hidden layers of {sin, tanh, ident, mul} ×2; the third adds one divide unit.
    pub fn master_a(input_dim: usize) -> Self {
        use ActivationKind::*;
        let base = [Sin, Tanh, Identity, Multiply];
        Self::new(
            input_dim,
            vec![
                Self::elementary(base, None),
                Self::elementary(base, None),
                Self::elementary(base, Some(Divide)),
            ],
        )
    }

    /// As [`TopologySpec::master_a`] with arctan in place of tanh.
    pub fn master_b(input_dim: usize) -> Self {
        use ActivationKind::*;
        let base = [Sin, Arctan, Identity, Multiply];
        Self::new(
            input_dim,
            vec![
                Self::elementary(base, None),
                Self::elementary(base, None),
                Self::elementary(base, Some(Divide)),
            ],
        )
    }

    /// Two hidden layers of {sin, cos, ident×2, mul×2}.
    pub fn quadcopter(input_dim: usize) -> Self {
        use ActivationKind::*;
        let layer = vec![Sin, Cos, Identity, Identity, Multiply, Multiply];
        Self::new(input_dim, vec![layer.clone(), layer])
    }

    /// Stable digest of the template, stored in checkpoints.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(format!("inputs={};layers={}", self.input_dim, self.layers_string()));
        hex::encode(hasher.finalize())
    }
}

/// Position of a unit: `layer` is the hidden-layer index, with the output
/// unit at `layer == hidden_layers`; `index` is the position in that layer's
/// output vector (learnable units first, then copy units).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct UnitAddr {
    pub layer: usize,
    pub index: usize,
}

impl UnitAddr {
    pub fn new(layer: usize, index: usize) -> Self {
        Self { layer, index }
    }
}

impl fmt::Display for UnitAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.layer, self.index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnitRole {
    Learnable,
    Copy,
}

/// One affine pre-activation: `fan_in` weights followed by a bias, stored
/// contiguously in the flat parameter vector starting at `offset`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ZNode {
    /// Global z-node index (position in a forward trace's z buffer).
    pub id: usize,
    pub offset: usize,
    pub fan_in: usize,
}

impl ZNode {
    pub fn weights(&self) -> Range<usize> {
        self.offset..self.offset + self.fan_in
    }

    pub fn bias(&self) -> usize {
        self.offset + self.fan_in
    }

    pub fn params(&self) -> Range<usize> {
        self.offset..self.offset + self.fan_in + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum UnitSpec {
    Learnable {
        kind: ActivationKind,
        znodes: Vec<ZNode>,
    },
    Copy {
        /// Index of the mirrored unit in the previous layer's outputs.
        source: usize,
        /// Index into the subtopology's skip-bit vector.
        skip: usize,
    },
}

impl UnitSpec {
    pub fn role(&self) -> UnitRole {
        match self {
            UnitSpec::Learnable { .. } => UnitRole::Learnable,
            UnitSpec::Copy { .. } => UnitRole::Copy,
        }
    }

    pub fn kind(&self) -> ActivationKind {
        match self {
            UnitSpec::Learnable { kind, .. } => *kind,
            UnitSpec::Copy { .. } => ActivationKind::Identity,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Layer {
    /// Width of the vector this layer reads (input dim or previous layer width).
    pub input_width: usize,
    pub units: Vec<UnitSpec>,
    pub n_learnable: usize,
    /// Offset of this layer's outputs in a flat activation buffer whose first
    /// `input_dim` slots hold the model inputs.
    pub act_offset: usize,
    /// Offset of this layer's first z-node in a flat z buffer.
    pub z_offset: usize,
    /// Global id of this layer's first unit.
    pub unit_offset: usize,
}

impl Layer {
    pub fn width(&self) -> usize {
        self.units.len()
    }

    pub fn input_range(&self) -> Range<usize> {
        // Inputs of layer k are the outputs of layer k-1, which sit directly
        // before this layer's outputs in the activation buffer.
        self.act_offset - self.input_width..self.act_offset
    }
}

#[derive(Debug, Clone)]
pub struct MasterTopology {
    spec: TopologySpec,
    /// Hidden layers followed by the output layer.
    layers: Vec<Layer>,
    addrs: Vec<UnitAddr>,
    n_params: usize,
    n_skips: usize,
    n_znodes: usize,
    n_acts: usize,
    /// Per parameter: owning unit id.
    param_unit: Vec<usize>,
    /// Per parameter: true when it is a bias slot.
    param_is_bias: Vec<bool>,
    digest: String,
}

impl MasterTopology {
    pub fn build(spec: TopologySpec) -> Result<Self> {
        if spec.hidden.is_empty() {
            return Err(Error::InvalidTopology("at least one hidden layer is required".into()));
        }
        if spec.input_dim == 0 {
            return Err(Error::InvalidTopology("input dimension must be positive".into()));
        }
        if let Some(k) = spec.hidden.iter().position(|l| l.is_empty()) {
            return Err(Error::InvalidTopology(format!("hidden layer {k} has no units")));
        }

        let mut layers = Vec::with_capacity(spec.hidden.len() + 1);
        let mut addrs = Vec::new();
        let mut param_unit = Vec::new();
        let mut param_is_bias = Vec::new();
        let mut n_params = 0;
        let mut n_skips = 0;
        let mut n_znodes = 0;
        let mut act_offset = spec.input_dim;
        let mut prev_width = spec.input_dim;

        let layer_kinds = spec
            .hidden
            .iter()
            .map(|l| (l.clone(), true))
            .chain(std::iter::once((vec![ActivationKind::Identity], false)));

        for (layer_idx, (kinds, hidden)) in layer_kinds.enumerate() {
            let unit_offset = addrs.len();
            let z_offset = n_znodes;
            let mut units = Vec::new();
            for &kind in &kinds {
                let unit_id = addrs.len();
                let mut znodes = Vec::with_capacity(kind.arity());
                for _ in 0..kind.arity() {
                    znodes.push(ZNode { id: n_znodes, offset: n_params, fan_in: prev_width });
                    param_unit.extend(std::iter::repeat(unit_id).take(prev_width + 1));
                    param_is_bias.extend(std::iter::repeat(false).take(prev_width));
                    param_is_bias.push(true);
                    n_params += prev_width + 1;
                    n_znodes += 1;
                }
                addrs.push(UnitAddr::new(layer_idx, units.len()));
                units.push(UnitSpec::Learnable { kind, znodes });
            }
            let n_learnable = units.len();
            if hidden && layer_idx > 0 {
                for source in 0..prev_width {
                    addrs.push(UnitAddr::new(layer_idx, units.len()));
                    units.push(UnitSpec::Copy { source, skip: n_skips });
                    n_skips += 1;
                }
            }
            let width = units.len();
            layers.push(Layer {
                input_width: prev_width,
                units,
                n_learnable,
                act_offset,
                z_offset,
                unit_offset,
            });
            act_offset += width;
            prev_width = width;
        }

        let digest = spec.digest();
        Ok(Self {
            spec,
            layers,
            addrs,
            n_params,
            n_skips,
            n_znodes,
            n_acts: act_offset,
            param_unit,
            param_is_bias,
            digest,
        })
    }

    pub fn spec(&self) -> &TopologySpec {
        &self.spec
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn hidden_layers(&self) -> usize {
        self.layers.len() - 1
    }

    /// Hidden layers followed by the output layer.
    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn output_layer(&self) -> &Layer {
        self.layers.last().expect("output layer")
    }

    pub fn output_addr(&self) -> UnitAddr {
        UnitAddr::new(self.hidden_layers(), 0)
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn n_skips(&self) -> usize {
        self.n_skips
    }

    pub fn n_znodes(&self) -> usize {
        self.n_znodes
    }

    pub fn n_acts(&self) -> usize {
        self.n_acts
    }

    pub fn n_units(&self) -> usize {
        self.addrs.len()
    }

    pub fn unit_addrs(&self) -> &[UnitAddr] {
        &self.addrs
    }

    pub fn unit_id(&self, addr: UnitAddr) -> Option<usize> {
        let layer = self.layers.get(addr.layer)?;
        (addr.index < layer.width()).then_some(layer.unit_offset + addr.index)
    }

    pub fn unit(&self, addr: UnitAddr) -> Option<&UnitSpec> {
        self.layers.get(addr.layer)?.units.get(addr.index)
    }

    pub fn unit_by_id(&self, id: usize) -> &UnitSpec {
        let addr = self.addrs[id];
        &self.layers[addr.layer].units[addr.index]
    }

    /// Parameter range of a learnable unit (its z-nodes are contiguous).
    pub fn unit_params(&self, addr: UnitAddr) -> Option<Range<usize>> {
        match self.unit(addr)? {
            UnitSpec::Learnable { znodes, .. } => {
                let first = znodes.first()?.offset;
                let last = znodes.last()?.params().end;
                Some(first..last)
            }
            UnitSpec::Copy { .. } => None,
        }
    }

    pub fn param_unit(&self, param: usize) -> usize {
        self.param_unit[param]
    }

    pub fn is_bias(&self, param: usize) -> bool {
        self.param_is_bias[param]
    }

    /// Addresses of every learnable unit, output unit included.
    pub fn learnable_addrs(&self) -> impl Iterator<Item = UnitAddr> + '_ {
        self.addrs
            .iter()
            .copied()
            .filter(move |&a| matches!(self.unit(a), Some(UnitSpec::Learnable { .. })))
    }

    /// Learnable units of the hidden layers only.
    pub fn hidden_learnable_addrs(&self) -> impl Iterator<Item = UnitAddr> + '_ {
        let out = self.hidden_layers();
        self.learnable_addrs().filter(move |a| a.layer < out)
    }

    pub fn copy_addrs(&self) -> impl Iterator<Item = UnitAddr> + '_ {
        self.addrs
            .iter()
            .copied()
            .filter(move |&a| matches!(self.unit(a), Some(UnitSpec::Copy { .. })))
    }

    /// (learnable, copy) unit counts of one layer.
    pub fn layer_counts(&self, layer: usize) -> (usize, usize) {
        let l = &self.layers[layer];
        (l.n_learnable, l.width() - l.n_learnable)
    }
}

/// Where freshly enabled unit weights come from.
#[derive(Debug, Clone, Copy)]
pub enum WeightSource<'a> {
    /// Flat z-node values (weights then bias, per z-node) taken from memory.
    Memory(&'a [f64]),
    Random,
    Zero,
}

/// Address of a link: a learnable parameter slot or a skip connection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LinkAddr {
    Param(usize),
    Skip(usize),
}

/// One candidate model carved out of a master topology.
#[derive(Debug, Clone)]
pub struct Subtopology {
    master: Arc<MasterTopology>,
    pub(crate) weights: Vec<f64>,
    pub(crate) enabled: Vec<bool>,
    pub(crate) skips: Vec<bool>,
    pub(crate) adam: AdamState,
    pub(crate) fitness: Option<crate::evolution::FitnessVector>,
}

impl Subtopology {
    /// Fresh subtopology: everything enabled, skip bits set, uniform random weights.
    pub fn init<R: Rng + ?Sized>(master: Arc<MasterTopology>, rng: &mut R) -> Self {
        let weights = (0..master.n_params())
            .map(|_| rng.gen_range(-INIT_BOUND..=INIT_BOUND))
            .collect();
        Self::with_weights(master, weights)
    }

    /// Everything enabled, skip bits set, the given weights.
    pub fn with_weights(master: Arc<MasterTopology>, weights: Vec<f64>) -> Self {
        assert_eq!(weights.len(), master.n_params(), "weight vector length");
        let n = master.n_params();
        let skips = vec![true; master.n_skips()];
        Self {
            adam: AdamState::new(n),
            enabled: vec![true; n],
            skips,
            weights,
            master,
            fitness: None,
        }
    }

    /// All weights zero and disabled, all skip bits cleared.
    pub fn empty(master: Arc<MasterTopology>) -> Self {
        let n = master.n_params();
        Self {
            adam: AdamState::new(n),
            enabled: vec![false; n],
            skips: vec![false; master.n_skips()],
            weights: vec![0.0; n],
            master,
            fitness: None,
        }
    }

    /// Rebuilds from serialized parts; enable flags follow nonzero weights
    /// unless given explicitly.
    pub fn from_parts(
        master: Arc<MasterTopology>,
        weights: Vec<f64>,
        enabled: Vec<bool>,
        skips: Vec<bool>,
    ) -> Result<Self> {
        if weights.len() != master.n_params()
            || enabled.len() != master.n_params()
            || skips.len() != master.n_skips()
        {
            return Err(Error::ShapeMismatch {
                expected: master.n_params(),
                found: weights.len(),
            });
        }
        let mut sub = Self {
            adam: AdamState::new(master.n_params()),
            enabled,
            skips,
            weights,
            master,
            fitness: None,
        };
        sub.enforce_disabled_zero();
        Ok(sub)
    }

    pub fn master(&self) -> &Arc<MasterTopology> {
        &self.master
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn enabled(&self) -> &[bool] {
        &self.enabled
    }

    pub fn skips(&self) -> &[bool] {
        &self.skips
    }

    pub fn skip_value(&self, skip: usize) -> f64 {
        if self.skips[skip] {
            1.0
        } else {
            0.0
        }
    }

    pub fn adam(&self) -> &AdamState {
        &self.adam
    }

    pub fn fitness(&self) -> Option<&crate::evolution::FitnessVector> {
        self.fitness.as_ref()
    }

    pub fn set_fitness(&mut self, fitness: crate::evolution::FitnessVector) {
        self.fitness = Some(fitness);
    }

    pub fn invalidate_fitness(&mut self) {
        self.fitness = None;
    }

    pub fn reset_optimizer(&mut self) {
        self.adam = AdamState::new(self.master.n_params());
    }

    /// Sets an enabled weight; writes to disabled slots are ignored.
    pub fn set_weight(&mut self, param: usize, value: f64) {
        if self.enabled[param] {
            self.weights[param] = value;
            self.fitness = None;
        }
    }

    /// Sets a weight and enables its link.
    pub fn force_weight(&mut self, param: usize, value: f64) {
        self.enabled[param] = true;
        self.weights[param] = value;
        self.fitness = None;
    }

    pub fn disable_param(&mut self, param: usize) {
        self.enabled[param] = false;
        self.weights[param] = 0.0;
        self.adam.reset_entry(param);
        self.fitness = None;
    }

    pub fn set_skip(&mut self, skip: usize, on: bool) {
        self.skips[skip] = on;
        self.fitness = None;
    }

    /// A learnable unit is enabled while at least one of its links is enabled.
    pub fn unit_enabled(&self, addr: UnitAddr) -> bool {
        match self.master.unit_params(addr) {
            Some(range) => self.enabled[range].iter().any(|&e| e),
            None => self
                .master
                .unit(addr)
                .map(|u| match u {
                    UnitSpec::Copy { skip, .. } => self.skips[*skip],
                    UnitSpec::Learnable { .. } => false,
                })
                .unwrap_or(false),
        }
    }

    /// Flat z-node values (weights and bias per z-node) of a learnable unit.
    pub fn unit_weights(&self, addr: UnitAddr) -> Option<&[f64]> {
        self.master.unit_params(addr).map(|r| &self.weights[r])
    }

    pub fn unit_enable_mask(&self, addr: UnitAddr) -> Option<&[bool]> {
        self.master.unit_params(addr).map(|r| &self.enabled[r])
    }

    /// Overwrites a learnable unit's weights and enable flags together.
    pub fn set_unit_weights(&mut self, addr: UnitAddr, values: &[f64], enabled: &[bool]) -> Result<()> {
        let range = self.learnable_range(addr)?;
        if values.len() != range.len() || enabled.len() != range.len() {
            return Err(Error::ShapeMismatch { expected: range.len(), found: values.len() });
        }
        for (k, p) in range.enumerate() {
            self.enabled[p] = enabled[k];
            self.weights[p] = if enabled[k] { values[k] } else { 0.0 };
            self.adam.reset_entry(p);
        }
        self.fitness = None;
        Ok(())
    }

    fn learnable_range(&self, addr: UnitAddr) -> Result<Range<usize>> {
        match self.master.unit(addr) {
            None => Err(Error::UnitOutOfRange(addr)),
            Some(UnitSpec::Copy { .. }) => Err(Error::NotLearnable(addr)),
            Some(UnitSpec::Learnable { .. }) => Ok(self.master.unit_params(addr).expect("learnable")),
        }
    }

    /// Enables or disables a learnable unit.
    ///
    /// Disabling zeroes every input weight of the unit and clears its enable
    /// flags. Enabling fills the weights from `source`: random values enable
    /// every link, memory values enable exactly the links that are nonzero in
    /// the record, and zero leaves the links enabled at 0.
    pub fn set_unit_state<R: Rng + ?Sized>(
        &mut self,
        addr: UnitAddr,
        enable: bool,
        source: WeightSource<'_>,
        rng: &mut R,
    ) -> Result<()> {
        let range = self.learnable_range(addr)?;
        let n = range.len();
        if !enable {
            return self.set_unit_weights(addr, &vec![0.0; n], &vec![false; n]);
        }
        match source {
            WeightSource::Zero => self.set_unit_weights(addr, &vec![0.0; n], &vec![true; n]),
            WeightSource::Random => {
                let values: Vec<f64> = (0..n).map(|_| rng.gen_range(-INIT_BOUND..=INIT_BOUND)).collect();
                self.set_unit_weights(addr, &values, &vec![true; n])
            }
            WeightSource::Memory(values) => {
                if values.len() != n {
                    return Err(Error::ShapeMismatch { expected: n, found: values.len() });
                }
                let mask: Vec<bool> = values.iter().map(|&v| v != 0.0).collect();
                self.set_unit_weights(addr, values, &mask)
            }
        }
    }

    /// Disables every enabled learnable weight with `|w| < theta`. Returns the
    /// number of links disabled by this call.
    pub fn prune(&mut self, theta: f64) -> usize {
        let mut count = 0;
        for p in 0..self.weights.len() {
            if self.enabled[p] && self.weights[p].abs() < theta {
                self.disable_param(p);
                count += 1;
            }
        }
        count
    }

    /// Zeroes any disabled weight. Operators call this as a final step.
    pub fn enforce_disabled_zero(&mut self) {
        for (w, &e) in self.weights.iter_mut().zip(&self.enabled) {
            if !e {
                *w = 0.0;
            }
        }
    }

    /// True when every disabled weight reads exactly zero.
    pub fn disabled_are_zero(&self) -> bool {
        self.weights
            .iter()
            .zip(&self.enabled)
            .all(|(&w, &e)| e || w == 0.0)
    }

    pub fn n_enabled(&self) -> usize {
        self.enabled.iter().filter(|&&e| e).count()
    }

    pub fn activity(&self) -> ActivitySet {
        ActivitySet::analyze(self)
    }
}

/// Active units and links of a subtopology.
///
/// A link is active when its weight is nonzero and it feeds an active unit.
/// A unit is active when it has at least one nonzero non-bias input link and
/// either is the output unit or feeds an active unit through a nonzero link.
/// Bias links are counted only for active units.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivitySet {
    pub active_units: Vec<bool>,
    pub active_params: Vec<bool>,
    pub active_skips: Vec<bool>,
    pub n_active_units: usize,
    pub n_active_links: usize,
}

impl ActivitySet {
    pub fn analyze(sub: &Subtopology) -> Self {
        let master = sub.master();
        let layers = master.layers();
        let mut active_units = vec![false; master.n_units()];
        let mut active_params = vec![false; master.n_params()];
        let mut active_skips = vec![false; master.n_skips()];

        // consumed[j]: output j of the current layer feeds an active unit of
        // the next layer through a nonzero link.
        let mut consumed: Vec<bool> = vec![true];
        for layer in layers.iter().rev() {
            let mut feeds = vec![false; layer.input_width];
            for (pos, unit) in layer.units.iter().enumerate() {
                if !consumed[pos] {
                    continue;
                }
                let id = layer.unit_offset + pos;
                match unit {
                    UnitSpec::Learnable { znodes, .. } => {
                        let has_input = znodes
                            .iter()
                            .any(|z| sub.weights[z.weights()].iter().any(|&w| w != 0.0));
                        if !has_input {
                            continue;
                        }
                        active_units[id] = true;
                        for z in znodes {
                            for (j, p) in z.weights().enumerate() {
                                if sub.weights[p] != 0.0 {
                                    active_params[p] = true;
                                    feeds[j] = true;
                                }
                            }
                            if sub.weights[z.bias()] != 0.0 {
                                active_params[z.bias()] = true;
                            }
                        }
                    }
                    UnitSpec::Copy { source, skip } => {
                        if sub.skips[*skip] {
                            active_units[id] = true;
                            active_skips[*skip] = true;
                            feeds[*source] = true;
                        }
                    }
                }
            }
            consumed = feeds;
        }

        let n_active_units = active_units.iter().filter(|&&a| a).count();
        let n_active_links = active_params.iter().filter(|&&a| a).count()
            + active_skips.iter().filter(|&&a| a).count();
        Self { active_units, active_params, active_skips, n_active_units, n_active_links }
    }

    pub fn is_unit_active(&self, master: &MasterTopology, addr: UnitAddr) -> bool {
        master.unit_id(addr).map(|id| self.active_units[id]).unwrap_or(false)
    }

    pub fn is_link_active(&self, link: LinkAddr) -> bool {
        match link {
            LinkAddr::Param(p) => self.active_params[p],
            LinkAddr::Skip(s) => self.active_skips[s],
        }
    }

    pub fn active_links(&self) -> impl Iterator<Item = LinkAddr> + '_ {
        let params = self
            .active_params
            .iter()
            .enumerate()
            .filter(|(_, &a)| a)
            .map(|(p, _)| LinkAddr::Param(p));
        let skips = self
            .active_skips
            .iter()
            .enumerate()
            .filter(|(_, &a)| a)
            .map(|(s, _)| LinkAddr::Skip(s));
        params.chain(skips)
    }

    /// (active units, active links).
    pub fn complexity(&self) -> (usize, usize) {
        (self.n_active_units, self.n_active_links)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn master_a() -> Arc<MasterTopology> {
        Arc::new(MasterTopology::build(TopologySpec::master_a(2)).unwrap())
    }

    fn single_ident() -> Arc<MasterTopology> {
        Arc::new(
            MasterTopology::build(TopologySpec::new(1, vec![vec![ActivationKind::Identity]])).unwrap(),
        )
    }

    #[test]
    fn arity_and_singularity() {
        for k in ActivationKind::ALL {
            let binary = matches!(k, ActivationKind::Multiply | ActivationKind::Divide);
            assert_eq!(k.arity(), if binary { 2 } else { 1 });
            assert_eq!(k.is_singular(), k == ActivationKind::Divide);
            assert_eq!(k.name().parse::<ActivationKind>().unwrap(), k);
        }
        assert!(matches!("exp".parse::<ActivationKind>(), Err(Error::UnknownActivation(_))));
    }

    #[test]
    fn master_a_layer_shapes() {
        let m = master_a();
        assert_eq!(m.hidden_layers(), 3);
        assert_eq!(m.layer_counts(0), (8, 0));
        assert_eq!(m.layer_counts(1), (8, 8));
        assert_eq!(m.layer_counts(2), (9, 16));
        assert_eq!(m.layer_counts(3), (1, 0));
        // z-node fan-in follows full connectivity to the previous layer.
        let UnitSpec::Learnable { znodes, .. } = m.unit(UnitAddr::new(2, 8)).unwrap() else {
            panic!("expected divide unit");
        };
        assert_eq!(znodes.len(), 2);
        assert!(znodes.iter().all(|z| z.fan_in == 16));
        assert_eq!(m.output_layer().input_width, 25);
        // copy units mirror the previous layer in order
        for (i, unit) in m.layers()[2].units[9..].iter().enumerate() {
            assert!(matches!(unit, UnitSpec::Copy { source, .. } if *source == i));
        }
    }

    #[test]
    fn smallest_template() {
        let m = single_ident();
        assert_eq!(m.layer_counts(0), (1, 0));
        assert_eq!(m.n_skips(), 0);
        assert_eq!(m.output_layer().input_width, 1);
        assert_eq!(m.n_params(), 2 + 2);
    }

    #[test]
    fn quadcopter_template() {
        let m = MasterTopology::build(TopologySpec::quadcopter(2)).unwrap();
        assert_eq!(m.layer_counts(0), (6, 0));
        assert_eq!(m.layer_counts(1), (6, 6));
    }

    #[test]
    fn build_errors() {
        assert!(matches!(
            MasterTopology::build(TopologySpec::new(2, vec![])),
            Err(Error::InvalidTopology(_))
        ));
        assert!(TopologySpec::parse_layers(2, "sin, exp").is_err());
    }

    #[test]
    fn layer_notation_round_trip() {
        let spec = TopologySpec::master_a(2);
        let text = spec.layers_string();
        assert_eq!(TopologySpec::parse_layers(2, &text).unwrap(), spec);
        assert_eq!(spec.digest(), TopologySpec::parse_layers(2, &text).unwrap().digest());
    }

    #[test]
    fn init_is_fully_enabled_and_deterministic() {
        let m = master_a();
        let a = Subtopology::init(m.clone(), &mut ChaCha8Rng::seed_from_u64(0));
        let b = Subtopology::init(m, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(a.enabled().iter().all(|&e| e));
        assert!(a.skips().iter().all(|&s| s));
        assert!(a.weights().iter().all(|w| w.abs() <= INIT_BOUND));
        assert_eq!(a.weights(), b.weights());
    }

    #[test]
    fn activity_of_zero_network() {
        let sub = Subtopology::empty(master_a());
        let act = sub.activity();
        assert_eq!(act.complexity(), (0, 0));
    }

    #[test]
    fn activity_of_identity_chain() {
        let m = single_ident();
        // params: hidden w, hidden b, output w, output b
        let sub = Subtopology::with_weights(m, vec![0.5, 0.0, 1.0, 0.0]);
        assert_eq!(sub.activity().complexity(), (2, 2));
        let sub = Subtopology::with_weights(sub.master().clone(), vec![0.5, 0.3, 1.0, 0.2]);
        assert_eq!(sub.activity().complexity(), (2, 4));
    }

    #[test]
    fn unit_without_consumer_is_inactive() {
        let m = Arc::new(
            MasterTopology::build(TopologySpec::new(
                1,
                vec![vec![ActivationKind::Identity, ActivationKind::Sin]],
            ))
            .unwrap(),
        );
        // ident: w=1,b=0 | sin: w=1,b=0 | output: w_ident=1, w_sin=0, b=0
        let sub = Subtopology::with_weights(m.clone(), vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
        let act = sub.activity();
        assert!(act.is_unit_active(&m, UnitAddr::new(0, 0)));
        assert!(!act.is_unit_active(&m, UnitAddr::new(0, 1)));
        assert_eq!(act.complexity(), (2, 2));
    }

    #[test]
    fn bias_only_unit_is_inactive() {
        let m = single_ident();
        let sub = Subtopology::with_weights(m, vec![0.0, 0.7, 1.0, 0.0]);
        assert_eq!(sub.activity().complexity(), (1, 1));
    }

    #[test]
    fn prune_threshold_is_strict() {
        let m = single_ident();
        let mut sub = Subtopology::with_weights(m.clone(), vec![0.5, 0.009, -0.011, 0.2]);
        assert_eq!(sub.prune(0.01), 1);
        assert_eq!(sub.weights(), &[0.5, 0.0, -0.011, 0.2]);
        assert!(!sub.enabled()[1]);
        assert_eq!(sub.prune(0.01), 0);

        let mut sub = Subtopology::with_weights(m, vec![0.0, 0.009, -0.011, 0.2]);
        assert_eq!(sub.prune(0.0), 0);
    }

    #[test]
    fn prune_cascades_to_unit() {
        let m = master_a();
        let mut sub = Subtopology::init(m.clone(), &mut ChaCha8Rng::seed_from_u64(3));
        let mul = UnitAddr::new(1, 6);
        let range = m.unit_params(mul).unwrap();
        for p in range {
            sub.weights[p] = 1e-4;
        }
        assert!(sub.unit_enabled(mul));
        sub.prune(0.01);
        assert!(!sub.unit_enabled(mul));
        assert!(sub.unit_weights(mul).unwrap().iter().all(|&w| w == 0.0));
    }

    #[test]
    fn unit_state_transitions() {
        let m = master_a();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut sub = Subtopology::init(m.clone(), &mut rng);
        let addr = UnitAddr::new(0, 2);
        sub.set_unit_state(addr, false, WeightSource::Random, &mut rng).unwrap();
        assert!(sub.unit_weights(addr).unwrap().iter().all(|&w| w == 0.0));
        assert!(!sub.unit_enabled(addr));

        sub.set_unit_state(addr, true, WeightSource::Zero, &mut rng).unwrap();
        assert!(sub.unit_enabled(addr));
        assert!(!sub.activity().is_unit_active(&m, addr));

        sub.set_unit_state(addr, true, WeightSource::Random, &mut rng).unwrap();
        sub.prune(0.0);
        assert!(sub.unit_enabled(addr));
        assert!(sub.activity().is_unit_active(&m, addr));

        let copy = m.copy_addrs().next().unwrap();
        assert!(matches!(
            sub.set_unit_state(copy, true, WeightSource::Random, &mut rng),
            Err(Error::NotLearnable(_))
        ));
        assert!(matches!(
            sub.set_unit_state(UnitAddr::new(9, 0), true, WeightSource::Random, &mut rng),
            Err(Error::UnitOutOfRange(_))
        ));
    }
}
