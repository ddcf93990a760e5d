//! Component catalog, genotype encoding, validity rules and the fixed-size
//! state embedding fed to the controller.
//!
//! A genotype is laid out over [`SLOT_COUNT`] positions: two global slots
//! followed by [`LAYER_SLOTS`] for each of up to [`MAX_LAYERS`] layers. The
//! position order is also the autoregressive sampling order, and every
//! condition refers only to earlier positions.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::tensor::{ActivationKind, Tensor};

pub const MIN_LAYERS: usize = 2;
pub const MAX_LAYERS: usize = 3;
pub const GLOBAL_SLOTS: usize = 2;
pub const SLOTS_PER_LAYER: usize = 13;
pub const SLOT_COUNT: usize = GLOBAL_SLOTS + SLOTS_PER_LAYER * MAX_LAYERS;
pub const EMBED_DIM: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BlockKind {
    Patching,
    #[serde(rename = "Dnonlinear_Avgpool")]
    DnonlinearAvgpool,
    #[serde(rename = "Dnonlinear_Conv")]
    DnonlinearConv,
    MTSMixer,
    TSMixer,
}

impl BlockKind {
    pub const ALL: [BlockKind; 5] = [
        BlockKind::Patching,
        BlockKind::DnonlinearAvgpool,
        BlockKind::DnonlinearConv,
        BlockKind::MTSMixer,
        BlockKind::TSMixer,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BlockKind::Patching => "Patching",
            BlockKind::DnonlinearAvgpool => "Dnonlinear_Avgpool",
            BlockKind::DnonlinearConv => "Dnonlinear_Conv",
            BlockKind::MTSMixer => "MTSMixer",
            BlockKind::TSMixer => "TSMixer",
        }
    }

    pub fn uses_hidden_units(self) -> bool {
        matches!(self, BlockKind::Patching | BlockKind::MTSMixer | BlockKind::TSMixer)
    }

    pub fn is_decomposition(self) -> bool {
        matches!(self, BlockKind::DnonlinearAvgpool | BlockKind::DnonlinearConv)
    }

    pub fn has_second_activation(self) -> bool {
        self != BlockKind::Patching
    }
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BlockKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        BlockKind::ALL
            .into_iter()
            .find(|b| b.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| config_err!("unknown block `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MergeOp {
    Add,
    Average,
    Multiply,
    None,
}

impl MergeOp {
    pub const ALL: [MergeOp; 4] = [MergeOp::Add, MergeOp::Average, MergeOp::Multiply, MergeOp::None];

    pub fn name(self) -> &'static str {
        match self {
            MergeOp::Add => "add",
            MergeOp::Average => "average",
            MergeOp::Multiply => "multiply",
            MergeOp::None => "none",
        }
    }
}

/// One (possibly two-component) activation function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActivationGene {
    pub component_a: ActivationKind,
    pub merge: MergeOp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub component_b: Option<ActivationKind>,
}

impl ActivationGene {
    pub fn single(kind: ActivationKind) -> Self {
        ActivationGene {
            component_a: kind,
            merge: MergeOp::None,
            component_b: None,
        }
    }

    pub fn pair(a: ActivationKind, merge: MergeOp, b: ActivationKind) -> Self {
        ActivationGene {
            component_a: a,
            merge,
            component_b: Some(b),
        }
    }

    /// Scalar evaluation, used by tests and as the reference for the graph path.
    pub fn eval(&self, x: f64) -> f64 {
        let a = self.component_a.forward(x);
        match (self.merge, self.component_b) {
            (MergeOp::None, _) | (_, None) => a,
            (MergeOp::Add, Some(b)) => a + b.forward(x),
            (MergeOp::Average, Some(b)) => 0.5 * (a + b.forward(x)),
            (MergeOp::Multiply, Some(b)) => a * b.forward(x),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerGene {
    pub block: BlockKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden_units: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel_size: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patch_length: Option<u32>,
    pub dropout: f64,
    pub activation1: ActivationGene,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activation2: Option<ActivationGene>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skip: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Genotype {
    pub num_layers: usize,
    pub linear_projections: bool,
    pub layers: Vec<LayerGene>,
}

/// Catalog identifiers; also the JSON field names of a genotype.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentId {
    NumLayers,
    LinearProjections,
    Block,
    HiddenUnits,
    KernelSize,
    Stride,
    PatchLength,
    Dropout,
    Activation,
    Merge,
    Skip,
}

impl ComponentId {
    pub const ALL: [ComponentId; 11] = [
        ComponentId::NumLayers,
        ComponentId::LinearProjections,
        ComponentId::Block,
        ComponentId::HiddenUnits,
        ComponentId::KernelSize,
        ComponentId::Stride,
        ComponentId::PatchLength,
        ComponentId::Dropout,
        ComponentId::Activation,
        ComponentId::Merge,
        ComponentId::Skip,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ComponentId::NumLayers => "num_layers",
            ComponentId::LinearProjections => "linear_projections",
            ComponentId::Block => "block",
            ComponentId::HiddenUnits => "hidden_units",
            ComponentId::KernelSize => "kernel_size",
            ComponentId::Stride => "stride",
            ComponentId::PatchLength => "patch_length",
            ComponentId::Dropout => "dropout",
            ComponentId::Activation => "activation",
            ComponentId::Merge => "merge",
            ComponentId::Skip => "skip",
        }
    }

    pub fn spec(self) -> ComponentSpec {
        let numeric = |min: f64, max: f64, step: f64| ComponentValues::Numeric { min, max, step };
        let cat = |v: Vec<&str>| ComponentValues::Categorical(v.into_iter().map(String::from).collect());
        let (values, condition) = match self {
            ComponentId::NumLayers => (numeric(2.0, 3.0, 1.0), None),
            ComponentId::LinearProjections => (cat(vec!["false", "true"]), None),
            ComponentId::Block => (cat(BlockKind::ALL.iter().map(|b| b.name()).collect()), None),
            ComponentId::HiddenUnits => (
                numeric(200.0, 2000.0, 100.0),
                Some("block in {Patching, MTSMixer, TSMixer}"),
            ),
            ComponentId::KernelSize => (
                numeric(3.0, 35.0, 2.0),
                Some("block in {Dnonlinear_Avgpool, Dnonlinear_Conv}"),
            ),
            ComponentId::Stride => (numeric(4.0, 18.0, 2.0), Some("block == Patching")),
            ComponentId::PatchLength => (numeric(8.0, 36.0, 4.0), Some("block == Patching")),
            ComponentId::Dropout => (numeric(0.1, 0.5, 0.1), None),
            ComponentId::Activation => (
                cat(ActivationKind::ALL.iter().map(|a| a.name()).collect()),
                Some("second component only when merge != none; second activation only when block != Patching"),
            ),
            ComponentId::Merge => (
                cat(MergeOp::ALL.iter().map(|m| m.name()).collect()),
                Some("second activation only when block != Patching"),
            ),
            ComponentId::Skip => (numeric(1.0, 2.0, 1.0), Some("layer index in {2, 3}")),
        };
        ComponentSpec {
            id: self,
            values,
            condition: condition.map(String::from),
        }
    }

    pub fn cardinality(self) -> usize {
        self.spec().values.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ComponentValues {
    Categorical(Vec<String>),
    Numeric { min: f64, max: f64, step: f64 },
}

impl ComponentValues {
    pub fn len(&self) -> usize {
        match self {
            ComponentValues::Categorical(v) => v.len(),
            ComponentValues::Numeric { min, max, step } => ((max - min) / step).round() as usize + 1,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The grid value at `index` of a numeric component.
    pub fn numeric_at(&self, index: usize) -> Option<f64> {
        match self {
            ComponentValues::Numeric { min, step, .. } if index < self.len() => {
                Some(round_grid(min + step * index as f64))
            }
            _ => None,
        }
    }

    /// Index of a numeric value on the grid, if it lies on it.
    pub fn numeric_index(&self, value: f64) -> Option<usize> {
        match self {
            ComponentValues::Numeric { min, step, .. } => {
                let k = ((value - min) / step).round();
                (k >= 0.0 && (k as usize) < self.len() && (min + step * k - value).abs() < 1e-9)
                    .then_some(k as usize)
            }
            ComponentValues::Categorical(_) => None,
        }
    }
}

fn round_grid(v: f64) -> f64 {
    (v * 1e9).round() / 1e9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSpec {
    pub id: ComponentId,
    pub values: ComponentValues,
    /// Human-readable condition on earlier components.
    pub condition: Option<String>,
}

pub fn catalog() -> Vec<ComponentSpec> {
    ComponentId::ALL.iter().map(|c| c.spec()).collect()
}

/// Positions inside one layer, in sampling order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerSlot {
    Block,
    HiddenUnits,
    KernelSize,
    Stride,
    PatchLength,
    Dropout,
    Act1A,
    Act1Merge,
    Act1B,
    Act2A,
    Act2Merge,
    Act2B,
    Skip,
}

pub const LAYER_SLOTS: [LayerSlot; SLOTS_PER_LAYER] = [
    LayerSlot::Block,
    LayerSlot::HiddenUnits,
    LayerSlot::KernelSize,
    LayerSlot::Stride,
    LayerSlot::PatchLength,
    LayerSlot::Dropout,
    LayerSlot::Act1A,
    LayerSlot::Act1Merge,
    LayerSlot::Act1B,
    LayerSlot::Act2A,
    LayerSlot::Act2Merge,
    LayerSlot::Act2B,
    LayerSlot::Skip,
];

impl LayerSlot {
    pub fn component(self) -> ComponentId {
        match self {
            LayerSlot::Block => ComponentId::Block,
            LayerSlot::HiddenUnits => ComponentId::HiddenUnits,
            LayerSlot::KernelSize => ComponentId::KernelSize,
            LayerSlot::Stride => ComponentId::Stride,
            LayerSlot::PatchLength => ComponentId::PatchLength,
            LayerSlot::Dropout => ComponentId::Dropout,
            LayerSlot::Act1A | LayerSlot::Act1B | LayerSlot::Act2A | LayerSlot::Act2B => ComponentId::Activation,
            LayerSlot::Act1Merge | LayerSlot::Act2Merge => ComponentId::Merge,
            LayerSlot::Skip => ComponentId::Skip,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LayerSlot::Block => "block",
            LayerSlot::HiddenUnits => "hidden_units",
            LayerSlot::KernelSize => "kernel_size",
            LayerSlot::Stride => "stride",
            LayerSlot::PatchLength => "patch_length",
            LayerSlot::Dropout => "dropout",
            LayerSlot::Act1A => "activation1.component_a",
            LayerSlot::Act1Merge => "activation1.merge",
            LayerSlot::Act1B => "activation1.component_b",
            LayerSlot::Act2A => "activation2.component_a",
            LayerSlot::Act2Merge => "activation2.merge",
            LayerSlot::Act2B => "activation2.component_b",
            LayerSlot::Skip => "skip",
        }
    }
}

/// One of the [`SLOT_COUNT`] positions of the genotype layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Slot {
    NumLayers,
    LinearProjections,
    Layer { index: usize, slot: LayerSlot },
}

impl Slot {
    pub fn all() -> impl Iterator<Item = Slot> {
        (0..SLOT_COUNT).map(Slot::from_row)
    }

    pub fn row(self) -> usize {
        match self {
            Slot::NumLayers => 0,
            Slot::LinearProjections => 1,
            Slot::Layer { index, slot } => {
                GLOBAL_SLOTS + index * SLOTS_PER_LAYER + LAYER_SLOTS.iter().position(|s| *s == slot).unwrap()
            }
        }
    }

    pub fn from_row(row: usize) -> Slot {
        match row {
            0 => Slot::NumLayers,
            1 => Slot::LinearProjections,
            r => {
                let r = r - GLOBAL_SLOTS;
                Slot::Layer {
                    index: r / SLOTS_PER_LAYER,
                    slot: LAYER_SLOTS[r % SLOTS_PER_LAYER],
                }
            }
        }
    }

    pub fn component(self) -> ComponentId {
        match self {
            Slot::NumLayers => ComponentId::NumLayers,
            Slot::LinearProjections => ComponentId::LinearProjections,
            Slot::Layer { slot, .. } => slot.component(),
        }
    }

    pub fn cardinality(self) -> usize {
        self.component().cardinality()
    }

    pub fn label(self) -> String {
        match self {
            Slot::NumLayers => "num_layers".into(),
            Slot::LinearProjections => "linear_projections".into(),
            Slot::Layer { index, slot } => format!("layer{}.{}", index + 1, slot.name()),
        }
    }
}

/// Choice index per slot; `None` marks a slot that is not sampled.
pub type Choices = [Option<usize>; SLOT_COUNT];

const MERGE_NONE: usize = 3;

/// Whether the slot at `row` is sampled, given the choices at earlier rows.
pub fn applicable(choices: &Choices, row: usize) -> bool {
    let Slot::Layer { index, slot } = Slot::from_row(row) else {
        return true;
    };
    let Some(nl) = choices[0] else { return false };
    if index >= MIN_LAYERS + nl {
        return false;
    }
    let at = |s: LayerSlot| choices[Slot::Layer { index, slot: s }.row()];
    if slot == LayerSlot::Block {
        return true;
    }
    let Some(block) = at(LayerSlot::Block).map(|b| BlockKind::ALL[b]) else {
        return false;
    };
    match slot {
        LayerSlot::Block | LayerSlot::Dropout | LayerSlot::Act1A | LayerSlot::Act1Merge => true,
        LayerSlot::HiddenUnits => block.uses_hidden_units(),
        LayerSlot::KernelSize => block.is_decomposition(),
        LayerSlot::Stride | LayerSlot::PatchLength => block == BlockKind::Patching,
        LayerSlot::Act1B => at(LayerSlot::Act1Merge).is_some_and(|m| m != MERGE_NONE),
        LayerSlot::Act2A | LayerSlot::Act2Merge => block.has_second_activation(),
        LayerSlot::Act2B => block.has_second_activation() && at(LayerSlot::Act2Merge).is_some_and(|m| m != MERGE_NONE),
        LayerSlot::Skip => index >= 1,
    }
}

/// First row at or after `from` that still needs a choice.
pub fn next_open_row(choices: &Choices, from: usize) -> Option<usize> {
    (from..SLOT_COUNT).find(|&r| choices[r].is_none() && applicable(choices, r))
}

impl Genotype {
    /// Assemble a genotype from per-slot choice indices.
    pub fn from_choices(choices: &Choices) -> Result<Genotype> {
        let get = |row: usize| choices[row].ok_or_else(|| config_err!("missing choice for {}", Slot::from_row(row).label()));
        let num_layers = MIN_LAYERS + get(0)?;
        let linear_projections = get(1)? == 1;
        let mut layers = Vec::with_capacity(num_layers);
        for index in 0..num_layers {
            let pick = |slot: LayerSlot| choices[Slot::Layer { index, slot }.row()];
            let num = |slot: LayerSlot| {
                pick(slot).map(|i| slot.component().spec().values.numeric_at(i).expect("numeric slot") as u32)
            };
            let act = |a: LayerSlot, m: LayerSlot, b: LayerSlot| {
                pick(a).map(|ai| {
                    let merge = MergeOp::ALL[pick(m).unwrap_or(MERGE_NONE)];
                    ActivationGene {
                        component_a: ActivationKind::ALL[ai],
                        merge,
                        component_b: if merge == MergeOp::None {
                            None
                        } else {
                            pick(b).map(|bi| ActivationKind::ALL[bi])
                        },
                    }
                })
            };
            let block = BlockKind::ALL[pick(LayerSlot::Block).ok_or_else(|| config_err!("layer {} has no block", index + 1))?];
            layers.push(LayerGene {
                block,
                hidden_units: num(LayerSlot::HiddenUnits),
                kernel_size: num(LayerSlot::KernelSize),
                stride: num(LayerSlot::Stride),
                patch_length: num(LayerSlot::PatchLength),
                dropout: pick(LayerSlot::Dropout)
                    .and_then(|i| ComponentId::Dropout.spec().values.numeric_at(i))
                    .ok_or_else(|| config_err!("layer {} has no dropout", index + 1))?,
                activation1: act(LayerSlot::Act1A, LayerSlot::Act1Merge, LayerSlot::Act1B)
                    .ok_or_else(|| config_err!("layer {} has no first activation", index + 1))?,
                activation2: act(LayerSlot::Act2A, LayerSlot::Act2Merge, LayerSlot::Act2B),
                skip: num(LayerSlot::Skip),
            });
        }
        Ok(Genotype {
            num_layers,
            linear_projections,
            layers,
        })
    }

    /// Per-slot choice indices. Fails for genotypes with values off the grid.
    pub fn to_choices(&self) -> Result<Choices> {
        let mut c: Choices = [None; SLOT_COUNT];
        if !(MIN_LAYERS..=MAX_LAYERS).contains(&self.num_layers) || self.layers.len() != self.num_layers {
            return Err(config_err!("num_layers {} with {} layers", self.num_layers, self.layers.len()));
        }
        c[0] = Some(self.num_layers - MIN_LAYERS);
        c[1] = Some(self.linear_projections as usize);
        for (index, l) in self.layers.iter().enumerate() {
            let mut set = |slot: LayerSlot, v: Option<usize>| c[Slot::Layer { index, slot }.row()] = v;
            let grid = |slot: LayerSlot, v: Option<f64>| -> Result<Option<usize>> {
                v.map(|x| {
                    slot.component()
                        .spec()
                        .values
                        .numeric_index(x)
                        .ok_or_else(|| config_err!("layer {}: {} = {x} is off the grid", index + 1, slot.name()))
                })
                .transpose()
            };
            set(LayerSlot::Block, BlockKind::ALL.iter().position(|b| *b == l.block));
            set(LayerSlot::HiddenUnits, grid(LayerSlot::HiddenUnits, l.hidden_units.map(f64::from))?);
            set(LayerSlot::KernelSize, grid(LayerSlot::KernelSize, l.kernel_size.map(f64::from))?);
            set(LayerSlot::Stride, grid(LayerSlot::Stride, l.stride.map(f64::from))?);
            set(LayerSlot::PatchLength, grid(LayerSlot::PatchLength, l.patch_length.map(f64::from))?);
            set(LayerSlot::Dropout, grid(LayerSlot::Dropout, Some(l.dropout))?);
            set(LayerSlot::Skip, grid(LayerSlot::Skip, l.skip.map(f64::from))?);
            let act_idx = |k: ActivationKind| ActivationKind::ALL.iter().position(|a| *a == k);
            let merge_idx = |m: MergeOp| MergeOp::ALL.iter().position(|x| *x == m);
            set(LayerSlot::Act1A, act_idx(l.activation1.component_a));
            set(LayerSlot::Act1Merge, merge_idx(l.activation1.merge));
            set(LayerSlot::Act1B, l.activation1.component_b.and_then(act_idx));
            if let Some(a2) = &l.activation2 {
                set(LayerSlot::Act2A, act_idx(a2.component_a));
                set(LayerSlot::Act2Merge, merge_idx(a2.merge));
                set(LayerSlot::Act2B, a2.component_b.and_then(act_idx));
            }
        }
        Ok(c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("genotype serializes")
    }

    pub fn from_json(s: &str) -> Result<Genotype> {
        serde_json::from_str(s).map_err(|e| config_err!("invalid genotype JSON: {e}"))
    }
}

/// A violated constraint of a genotype.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    /// 1-based layer index, `None` for genotype-level problems.
    pub layer: Option<usize>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.layer {
            Some(l) => write!(f, "layer {l}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

/// Every violated range or conditional constraint of `g`.
pub fn validate(g: &Genotype) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |layer: Option<usize>, message: String| out.push(Violation { layer, message });
    if !(MIN_LAYERS..=MAX_LAYERS).contains(&g.num_layers) {
        push(None, format!("num_layers must be 2 or 3, got {}", g.num_layers));
    }
    if g.layers.len() != g.num_layers {
        push(None, format!("num_layers is {} but {} layers are given", g.num_layers, g.layers.len()));
    }
    for (i, l) in g.layers.iter().enumerate() {
        let idx = Some(i + 1);
        let check_num = |push: &mut dyn FnMut(Option<usize>, String), id: ComponentId, v: Option<f64>, required: bool, reason: &str| {
            match (v, required) {
                (Some(x), true) => {
                    if id.spec().values.numeric_index(x).is_none() {
                        push(idx, format!("{} = {x} is outside the catalog grid", id.name()));
                    }
                }
                (Some(_), false) => push(idx, format!("{} requires {reason}", id.name())),
                (None, true) => push(idx, format!("{} is missing for block {}", id.name(), l.block)),
                (None, false) => {}
            }
        };
        check_num(&mut push, ComponentId::HiddenUnits, l.hidden_units.map(f64::from), l.block.uses_hidden_units(), "a patching or mixer block");
        check_num(&mut push, ComponentId::KernelSize, l.kernel_size.map(f64::from), l.block.is_decomposition(), "a decomposition block");
        check_num(&mut push, ComponentId::Stride, l.stride.map(f64::from), l.block == BlockKind::Patching, "a patching block");
        check_num(&mut push, ComponentId::PatchLength, l.patch_length.map(f64::from), l.block == BlockKind::Patching, "a patching block");
        check_num(&mut push, ComponentId::Dropout, Some(l.dropout), true, "");
        if i == 0 {
            if l.skip.is_some() {
                push(idx, "skip requires layer index ≥ 2".into());
            }
        } else {
            check_num(&mut push, ComponentId::Skip, l.skip.map(f64::from), true, "");
        }
        let check_act = |push: &mut dyn FnMut(Option<usize>, String), name: &str, a: &ActivationGene| match (a.merge, a.component_b) {
            (MergeOp::None, Some(_)) => push(idx, format!("{name}.component_b requires a merge other than none")),
            (m, None) if m != MergeOp::None => push(idx, format!("{name}.component_b is missing for merge {}", m.name())),
            _ => {}
        };
        check_act(&mut push, "activation1", &l.activation1);
        match (&l.activation2, l.block.has_second_activation()) {
            (Some(a), true) => check_act(&mut push, "activation2", a),
            (Some(_), false) => push(idx, "activation2 requires a block other than Patching".into()),
            (None, true) => push(idx, format!("activation2 is missing for block {}", l.block)),
            (None, false) => {}
        }
    }
    out
}

/// Uniformly sample each applicable component in slot order.
pub fn random_genotype<R: Rng + ?Sized>(rng: &mut R) -> Genotype {
    let mut c: Choices = [None; SLOT_COUNT];
    let mut row = 0;
    while let Some(r) = next_open_row(&c, row) {
        c[r] = Some(rng.gen_range(0..Slot::from_row(r).cardinality()));
        row = r + 1;
    }
    Genotype::from_choices(&c).expect("constructive sampling is complete")
}

/// Fixed embedding tables: one value table per component and one
/// "none" row per slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateEmbedding {
    pub dim: usize,
    /// Indexed by the position of the component in [`ComponentId::ALL`].
    values: Vec<Tensor>,
    none: Tensor,
}

impl StateEmbedding {
    /// Draw every table once from a standard normal distribution.
    pub fn new(dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut draw = |rows: usize| {
            let data = (0..rows * dim).map(|_| StandardNormal.sample(rng)).collect();
            Tensor::new(vec![rows, dim], data).expect("table shape")
        };
        let values = ComponentId::ALL.iter().map(|c| draw(c.cardinality())).collect();
        let none = draw(SLOT_COUNT);
        StateEmbedding { dim, values, none }
    }

    pub fn rows(&self) -> usize {
        SLOT_COUNT
    }

    pub fn value_row(&self, component: ComponentId, index: usize) -> &[f64] {
        let t = &self.values[ComponentId::ALL.iter().position(|c| *c == component).unwrap()];
        &t.data()[index * self.dim..(index + 1) * self.dim]
    }

    pub fn none_row(&self, row: usize) -> &[f64] {
        &self.none.data()[row * self.dim..(row + 1) * self.dim]
    }

    /// `SLOT_COUNT x dim` matrix: value embeddings for sampled slots and
    /// none-embeddings elsewhere.
    pub fn encode_choices(&self, choices: &Choices) -> Tensor {
        let mut data = Vec::with_capacity(SLOT_COUNT * self.dim);
        for (row, c) in choices.iter().enumerate() {
            match c {
                Some(i) => data.extend_from_slice(self.value_row(Slot::from_row(row).component(), *i)),
                None => data.extend_from_slice(self.none_row(row)),
            }
        }
        Tensor::new(vec![SLOT_COUNT, self.dim], data).expect("state shape")
    }

    pub fn encode(&self, g: &Genotype) -> Result<Tensor> {
        Ok(self.encode_choices(&g.to_choices()?))
    }
}
