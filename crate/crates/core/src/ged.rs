//! Normalized graph edit distance between chain-structured genotypes.
//!
//! Layers are matched one-to-one so the summed layer edit distance is
//! minimal; every layer of the longer genotype left over costs 1. The total is
//! divided by the larger layer count. The genotype-level `linear_projections`
//! flag enters every matched pair as one extra categorical slot, which keeps
//! the measure symmetric.

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::search_space::{ComponentSpec, ComponentValues, Genotype, LayerGene, LayerSlot, MergeOp, LAYER_SLOTS};

/// Value occupying one component slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ComponentValue {
    Numeric(f64),
    Categorical(String),
}

/// Distance between two values of one slot, either of which may be absent.
///
/// Numeric values are scaled by the catalog range; against an absent value
/// the range is taken as `[0, max]` and the absent value as 0. Categorical
/// values are 0 when equal and 1 otherwise, absence included.
pub fn component_distance(a: Option<&ComponentValue>, b: Option<&ComponentValue>, spec: &ComponentSpec) -> Result<f64> {
    let range = || match spec.values {
        ComponentValues::Numeric { min, max, .. } if max > min => Ok((min, max)),
        _ => Err(config_err!("component `{}` has no numeric range", spec.id.name())),
    };
    Ok(match (a, b) {
        (None, None) => 0.0,
        (Some(ComponentValue::Numeric(x)), Some(ComponentValue::Numeric(y))) => {
            let (min, max) = range()?;
            (x - y).abs() / (max - min)
        }
        (Some(ComponentValue::Numeric(x)), None) | (None, Some(ComponentValue::Numeric(x))) => {
            let (_, max) = range()?;
            x.abs() / max
        }
        (Some(ComponentValue::Categorical(x)), Some(ComponentValue::Categorical(y))) => {
            if x == y {
                0.0
            } else {
                1.0
            }
        }
        (Some(ComponentValue::Categorical(_)), None) | (None, Some(ComponentValue::Categorical(_))) => 1.0,
        _ => return Err(config_err!("mixed value kinds for component `{}`", spec.id.name())),
    })
}

/// The value a layer holds in `slot`, or `None` if the slot is unoccupied.
///
/// A merge of `none` means there is no composite activation, so neither the
/// merge slot nor the second component is occupied.
pub fn slot_value(layer: &LayerGene, slot: LayerSlot) -> Option<ComponentValue> {
    use ComponentValue::{Categorical as C, Numeric as N};
    let act = |a: Option<&crate::search_space::ActivationGene>, part: u8| {
        a.and_then(|a| match part {
            0 => Some(C(a.component_a.name().into())),
            1 => (a.merge != MergeOp::None).then(|| C(a.merge.name().into())),
            _ => (a.merge != MergeOp::None).then(|| a.component_b.map(|b| C(b.name().into()))).flatten(),
        })
    };
    match slot {
        LayerSlot::Block => Some(C(layer.block.name().into())),
        LayerSlot::HiddenUnits => layer.hidden_units.map(|v| N(v.into())),
        LayerSlot::KernelSize => layer.kernel_size.map(|v| N(v.into())),
        LayerSlot::Stride => layer.stride.map(|v| N(v.into())),
        LayerSlot::PatchLength => layer.patch_length.map(|v| N(v.into())),
        LayerSlot::Dropout => Some(N(layer.dropout)),
        LayerSlot::Act1A => act(Some(&layer.activation1), 0),
        LayerSlot::Act1Merge => act(Some(&layer.activation1), 1),
        LayerSlot::Act1B => act(Some(&layer.activation1), 2),
        LayerSlot::Act2A => act(layer.activation2.as_ref(), 0),
        LayerSlot::Act2Merge => act(layer.activation2.as_ref(), 1),
        LayerSlot::Act2B => act(layer.activation2.as_ref(), 2),
        LayerSlot::Skip => layer.skip.map(|v| N(v.into())),
    }
}

/// Summed slot distance and number of slots occupied by either layer.
fn slot_sum(a: &LayerGene, b: &LayerGene) -> (f64, usize) {
    let mut sum = 0.0;
    let mut n = 0;
    for slot in LAYER_SLOTS {
        let (x, y) = (slot_value(a, slot), slot_value(b, slot));
        if x.is_none() && y.is_none() {
            continue;
        }
        n += 1;
        sum += component_distance(x.as_ref(), y.as_ref(), &slot.component().spec()).expect("catalog slots have ranges");
    }
    (sum, n)
}

/// Mean component distance over the slots occupied by either layer.
pub fn layer_edit_distance(a: &LayerGene, b: &LayerGene) -> f64 {
    let (s, n) = slot_sum(a, b);
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

fn pair_distance(a: &LayerGene, b: &LayerGene, flag: f64) -> f64 {
    let (s, n) = slot_sum(a, b);
    (s + flag) / (n + 1) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    /// 1-based layer index in the first genotype.
    pub first: usize,
    /// 1-based layer index in the second genotype.
    pub second: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnmatchedLayer {
    /// 1 or 2: which genotype the layer belongs to.
    pub genotype: u8,
    /// 1-based layer index.
    pub layer: usize,
    pub penalty: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GedReport {
    pub total: f64,
    pub matched_pairs: Vec<MatchedPair>,
    pub unmatched: Vec<UnmatchedLayer>,
}

/// Sum in ascending order, so equal multisets give bit-identical totals
/// regardless of argument order.
fn sorted_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.iter().sum()
}

/// All ordered selections of `k` distinct indices from `0..n`.
fn injections(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in 0..n {
            if !cur.contains(&i) {
                cur.push(i);
                rec(n, k, cur, out);
                cur.pop();
            }
        }
    }
    let mut out = Vec::new();
    rec(n, k, &mut Vec::with_capacity(k), &mut out);
    out
}

pub fn architecture_ged(a: &Genotype, b: &Genotype) -> GedReport {
    let flag = if a.linear_projections == b.linear_projections { 0.0 } else { 1.0 };
    let (n1, n2) = (a.layers.len(), b.layers.len());
    let n = n1.max(n2);
    if n == 0 {
        return GedReport {
            total: 0.0,
            matched_pairs: Vec::new(),
            unmatched: Vec::new(),
        };
    }
    // Map each layer of the shorter genotype into the longer one.
    let swap = n1 > n2;
    let (short, long) = if swap { (&b.layers, &a.layers) } else { (&a.layers, &b.layers) };
    let cost: Vec<Vec<f64>> = short
        .iter()
        .map(|s| long.iter().map(|l| if swap { pair_distance(l, s, flag) } else { pair_distance(s, l, flag) }).collect())
        .collect();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for m in injections(long.len(), short.len()) {
        let c = sorted_sum(m.iter().enumerate().map(|(i, &j)| cost[i][j]));
        if best.as_ref().map_or(true, |(bc, _)| c < *bc) {
            best = Some((c, m));
        }
    }
    let (sum, m) = best.expect("at least one assignment");
    let mut matched_pairs: Vec<MatchedPair> = m
        .iter()
        .enumerate()
        .map(|(i, &j)| {
            let (first, second) = if swap { (j, i) } else { (i, j) };
            MatchedPair {
                first: first + 1,
                second: second + 1,
                distance: cost[i][j],
            }
        })
        .collect();
    matched_pairs.sort_by_key(|p| (p.first, p.second));
    let unmatched: Vec<UnmatchedLayer> = (0..long.len())
        .filter(|j| !m.contains(j))
        .map(|j| UnmatchedLayer {
            genotype: if swap { 1 } else { 2 },
            layer: j + 1,
            penalty: 1.0,
        })
        .collect();
    let total = (sum + unmatched.len() as f64) / n as f64;
    debug_assert!((0.0..=1.0 + 1e-12).contains(&total));
    GedReport {
        total,
        matched_pairs,
        unmatched,
    }
}

/// Shorthand for `architecture_ged(a, b).total`.
pub fn ged(a: &Genotype, b: &Genotype) -> f64 {
    architecture_ged(a, b).total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search_space::{random_genotype, ComponentId, ActivationGene, BlockKind};
    use crate::tensor::ActivationKind;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn num(x: f64) -> ComponentValue {
        ComponentValue::Numeric(x)
    }

    #[test]
    fn component_distance_examples() {
        let k = ComponentId::KernelSize.spec();
        assert_eq!(component_distance(Some(&num(3.0)), Some(&num(35.0)), &k).unwrap(), 1.0);
        let m = ComponentId::Merge.spec();
        let add = ComponentValue::Categorical("add".into());
        assert_eq!(component_distance(Some(&add), Some(&add), &m).unwrap(), 0.0);
        let p = ComponentId::PatchLength.spec();
        let d = component_distance(Some(&num(16.0)), None, &p).unwrap();
        assert!((d - 16.0 / 36.0).abs() < 1e-15);
        assert!(component_distance(Some(&num(1.0)), Some(&num(2.0)), &m).is_err());
    }

    fn patching() -> LayerGene {
        LayerGene {
            block: BlockKind::Patching,
            hidden_units: Some(400),
            kernel_size: None,
            stride: Some(8),
            patch_length: Some(16),
            dropout: 0.1,
            activation1: ActivationGene::single(ActivationKind::ReLU),
            activation2: None,
            skip: None,
        }
    }

    #[test]
    fn layer_distance_examples() {
        let a = patching();
        assert_eq!(layer_edit_distance(&a, &a), 0.0);
        // block, hidden, stride, patch length, dropout, first activation
        let mut b = a.clone();
        b.activation1.component_a = ActivationKind::GELU;
        assert!((layer_edit_distance(&a, &b) - 1.0 / 6.0).abs() < 1e-15);

        // extremes: every occupied slot at maximal distance
        let p = LayerGene {
            hidden_units: Some(2000),
            stride: Some(18),
            patch_length: Some(36),
            dropout: 0.5,
            ..patching()
        };
        let d = LayerGene {
            block: BlockKind::DnonlinearAvgpool,
            hidden_units: None,
            kernel_size: Some(35),
            stride: None,
            patch_length: None,
            dropout: 0.1,
            activation1: ActivationGene::single(ActivationKind::Tanh),
            activation2: Some(ActivationGene::single(ActivationKind::Sine)),
            skip: None,
        };
        // block 1, hidden 1, kernel 1, stride 1, patch 1, dropout 1, act1 1, act2 1
        assert!((layer_edit_distance(&p, &d) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_vs_three_exact_match() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut three = random_genotype(&mut rng);
        while three.num_layers != 3 {
            three = random_genotype(&mut rng);
        }
        let two = Genotype {
            num_layers: 2,
            linear_projections: three.linear_projections,
            layers: three.layers[..2].to_vec(),
        };
        let r = architecture_ged(&two, &three);
        assert!((r.total - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.unmatched.len(), 1);
        assert!((architecture_ged(&three, &two).total - 1.0 / 3.0).abs() < 1e-12);
    }

    /// Independent oracle: try every function from the shorter genotype's
    /// layers to the longer one's, keep the injective ones.
    fn oracle(a: &Genotype, b: &Genotype) -> f64 {
        let flag = (a.linear_projections != b.linear_projections) as u8 as f64;
        let (n1, n2) = (a.layers.len(), b.layers.len());
        let n = n1.max(n2);
        let k = n1.min(n2);
        let mut best = f64::INFINITY;
        for code in 0..n.pow(k as u32) {
            let mut map = Vec::new();
            let mut c = code;
            for _ in 0..k {
                map.push(c % n);
                c /= n;
            }
            let mut sorted = map.clone();
            sorted.sort();
            sorted.dedup();
            if sorted.len() != k {
                continue;
            }
            let mut total = 0.0;
            for (i, &j) in map.iter().enumerate() {
                let (x, y) = if n1 <= n2 { (&a.layers[i], &b.layers[j]) } else { (&a.layers[j], &b.layers[i]) };
                let mut s = flag;
                let mut cnt = 1;
                for slot in LAYER_SLOTS {
                    let (u, v) = (slot_value(x, slot), slot_value(y, slot));
                    if u.is_some() || v.is_some() {
                        cnt += 1;
                        s += component_distance(u.as_ref(), v.as_ref(), &slot.component().spec()).unwrap();
                    }
                }
                total += s / cnt as f64;
            }
            best = best.min(total);
        }
        (best + (n - k) as f64) / n as f64
    }

    #[test]
    fn matches_exhaustive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..300 {
            let a = random_genotype(&mut rng);
            let b = random_genotype(&mut rng);
            let r = architecture_ged(&a, &b);
            assert!((r.total - oracle(&a, &b)).abs() < 1e-12);
            assert_eq!(r.total, architecture_ged(&b, &a).total);
            assert!((0.0..=1.0).contains(&r.total));
            assert_eq!(r.matched_pairs.len() + r.unmatched.len(), a.num_layers.max(b.num_layers));
        }
    }
}
