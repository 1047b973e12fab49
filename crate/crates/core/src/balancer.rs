//! Inverted value indexes and balanced yes/no sampling.
//!
//! Images are interned to dense indices in sorted `image_id` order and every
//! positive, negative and universe set is a bitset over those indices. Set
//! iteration is therefore always in image-id order, which keeps sampling
//! independent of catalog order and machine.
//!
//! The lifecycle is [`build_index`] → [`ValueIndex::merge_synonyms`] →
//! [`ValueIndex::compute_negatives`]; combination queries need the last step.

use std::collections::{BTreeMap, BTreeSet};

use fixedbitset::FixedBitSet;
use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::FashionItem;
use crate::keyed::keyed_rng;
use crate::taxonomy::Taxonomy;
use crate::template::BoundValue;

pub type ImageSet = FixedBitSet;

/// `(attribute, value)` pair; value names are unique within an attribute.
pub type ValueKey = (String, String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Built,
    Merged,
    Negatives,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValueIndex {
    images: Vec<String>,
    /// Images labeled for each attribute.
    pub universe: BTreeMap<String, ImageSet>,
    /// Observed value names per attribute.
    pub observed: BTreeMap<String, BTreeSet<String>>,
    pub p_value: BTreeMap<ValueKey, ImageSet>,
    pub n_value: BTreeMap<ValueKey, ImageSet>,
    pub categories: BTreeSet<String>,
    pub p_cat: BTreeMap<String, ImageSet>,
    pub n_cat: BTreeMap<String, ImageSet>,
    /// Images carrying a category label.
    pub cat_universe: ImageSet,
    stage: Stage,
}

fn empty_set(n: usize) -> ImageSet {
    FixedBitSet::with_capacity(n)
}

fn union_into(target: &mut ImageSet, other: &ImageSet) {
    target.union_with(other);
}

fn intersect(a: &ImageSet, b: &ImageSet) -> ImageSet {
    let mut out = a.clone();
    out.intersect_with(b);
    out
}

fn difference(a: &ImageSet, b: &ImageSet) -> ImageSet {
    let mut out = a.clone();
    out.difference_with(b);
    out
}

impl ValueIndex {
    fn empty(images: Vec<String>) -> Self {
        let n = images.len();
        ValueIndex {
            images,
            universe: BTreeMap::new(),
            observed: BTreeMap::new(),
            p_value: BTreeMap::new(),
            n_value: BTreeMap::new(),
            categories: BTreeSet::new(),
            p_cat: BTreeMap::new(),
            n_cat: BTreeMap::new(),
            cat_universe: empty_set(n),
            stage: Stage::Built,
        }
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    /// Interned image ids, sorted.
    pub fn images(&self) -> &[String] {
        &self.images
    }

    pub fn image_index(&self, image_id: &str) -> Option<usize> {
        self.images.binary_search_by(|i| i.as_str().cmp(image_id)).ok()
    }

    pub fn ids(&self, set: &ImageSet) -> Vec<String> {
        set.ones().map(|i| self.images[i].clone()).collect()
    }

    pub fn empty_set(&self) -> ImageSet {
        empty_set(self.images.len())
    }

    fn absorb(&mut self, other: ValueIndex) {
        for (a, s) in other.universe {
            union_into(self.universe.entry(a).or_insert_with(|| empty_set(s.len())), &s);
        }
        for (a, vs) in other.observed {
            self.observed.entry(a).or_default().extend(vs);
        }
        for (k, s) in other.p_value {
            union_into(self.p_value.entry(k).or_insert_with(|| empty_set(s.len())), &s);
        }
        self.categories.extend(other.categories);
        for (c, s) in other.p_cat {
            union_into(self.p_cat.entry(c).or_insert_with(|| empty_set(s.len())), &s);
        }
        union_into(&mut self.cat_universe, &other.cat_universe);
    }

    /// Union positives of each value's synonyms into it, for values and
    /// categories alike. Synonym sets are transitively closed and the union
    /// reads from a snapshot, so the result is order-independent and a second
    /// application changes nothing.
    pub fn merge_synonyms(mut self, taxonomy: &Taxonomy) -> ValueIndex {
        let snapshot = self.p_value.clone();
        for ((attr, value), positives) in self.p_value.iter_mut() {
            let Ok(synonyms) = taxonomy.synonyms_of(attr, value) else { continue };
            for s in synonyms {
                if let Some(other) = snapshot.get(&(attr.clone(), s.clone())) {
                    union_into(positives, other);
                }
            }
        }
        let snapshot = self.p_cat.clone();
        for (cat, positives) in self.p_cat.iter_mut() {
            let Ok(synonyms) = taxonomy.category_synonyms_of(cat) else { continue };
            for s in synonyms {
                if let Some(other) = snapshot.get(s) {
                    union_into(positives, other);
                }
            }
        }
        self.stage = self.stage.max(Stage::Merged);
        self
    }

    /// Negatives as complements within each universe: the attribute's
    /// labeled images for values, all categorized images for categories.
    pub fn compute_negatives(mut self) -> ValueIndex {
        self.n_value = self
            .p_value
            .iter()
            .map(|(k, p)| (k.clone(), difference(&self.universe[&k.0], p)))
            .collect();
        self.n_cat = self
            .p_cat
            .iter()
            .map(|(c, p)| (c.clone(), difference(&self.cat_universe, p)))
            .collect();
        self.stage = Stage::Negatives;
        self
    }

    fn require_negatives(&self) -> Result<()> {
        if self.stage < Stage::Negatives {
            return Err(Error::Input("index negatives have not been computed".into()));
        }
        Ok(())
    }

    fn value_sets(&self, v: &BoundValue) -> Result<(&ImageSet, &ImageSet, &ImageSet)> {
        let key = (v.attribute.clone(), v.value.clone());
        let p = self
            .p_value
            .get(&key)
            .ok_or_else(|| Error::miss("indexed value", format!("{}/{}", v.attribute, v.value)))?;
        Ok((p, &self.n_value[&key], &self.universe[&v.attribute]))
    }

    fn category_sets(&self, category: &str) -> Result<(&ImageSet, &ImageSet)> {
        let p = self.p_cat.get(category).ok_or_else(|| Error::miss("indexed category", category))?;
        Ok((p, &self.n_cat[category]))
    }

    /// Positives and negatives for one value and a category.
    pub fn combine(&self, value: &BoundValue, category: &str) -> Result<ComboSets> {
        self.require_negatives()?;
        let (pv, nv, _) = self.value_sets(value)?;
        let (pc, nc) = self.category_sets(category)?;
        let pos = intersect(pv, pc);
        let mut neg = intersect(pv, nc);
        union_into(&mut neg, &intersect(nv, pc));
        union_into(&mut neg, &intersect(nv, nc));
        Ok(ComboSets {
            values: vec![value.clone()],
            category: category.to_string(),
            pos,
            neg,
        })
    }

    /// Positives and negatives for up to two values of distinct attributes
    /// and a category.
    ///
    /// `neg` is the union over every positive/negative membership pattern
    /// except all-positive; it equals the intersection of the universes
    /// minus `pos`, which is asserted in debug builds.
    pub fn combine_multi(&self, values: &[BoundValue], category: &str) -> Result<ComboSets> {
        self.require_negatives()?;
        if values.len() > 2 {
            return Err(Error::InvalidCombination(format!("{} values; at most 2 allowed", values.len())));
        }
        for (i, v) in values.iter().enumerate() {
            if values[..i].iter().any(|u| u.attribute == v.attribute) {
                return Err(Error::InvalidCombination(format!(
                    "two values of attribute `{}`",
                    v.attribute
                )));
            }
        }
        let mut factors: Vec<(&ImageSet, &ImageSet)> = Vec::with_capacity(values.len() + 1);
        for v in values {
            let (p, n, _) = self.value_sets(v)?;
            factors.push((p, n));
        }
        factors.push(self.category_sets(category)?);

        let term = |mask: usize| {
            let mut acc: Option<ImageSet> = None;
            for (bit, (p, n)) in factors.iter().enumerate() {
                let s = if mask & (1 << bit) == 0 { *p } else { *n };
                acc = Some(match acc {
                    None => s.clone(),
                    Some(a) => intersect(&a, s),
                });
            }
            acc.unwrap()
        };
        let pos = term(0);
        let mut neg = self.empty_set();
        for mask in 1..(1usize << factors.len()) {
            union_into(&mut neg, &term(mask));
        }
        debug_assert_eq!(neg, {
            let mut u = self.cat_universe.clone();
            for v in values {
                u.intersect_with(self.value_sets(v).unwrap().2);
            }
            difference(&u, &pos)
        });
        Ok(ComboSets {
            values: values.to_vec(),
            category: category.to_string(),
            pos,
            neg,
        })
    }

    /// Per-image judgement of a (values, category) question using the merged
    /// labels. See [`judge_image`](ValueIndex::judge_image).
    pub fn image_based_combo(&self, values: &[BoundValue], category: &str) -> Result<ComboSets> {
        self.require_negatives()?;
        let (pc, nc) = self.category_sets(category)?;
        let mut pos = pc.clone();
        let mut neg = nc.clone();
        for v in values {
            let (p, n, _) = self.value_sets(v)?;
            pos.intersect_with(p);
            union_into(&mut neg, n);
        }
        Ok(ComboSets {
            values: values.to_vec(),
            category: category.to_string(),
            pos,
            neg,
        })
    }

    /// Yes when the image holds every bound value and the category (after
    /// synonym merging); no when it is labeled for some bound attribute or
    /// category but lacks the bound value; unknown otherwise. Values never
    /// observed in the index are outside the vocabulary and count as unknown.
    pub fn judge_image(&self, image_id: &str, values: &[BoundValue], category: &str) -> Judgement {
        let Some(i) = self.image_index(image_id) else {
            return Judgement::Unknown;
        };
        let mut all_yes = true;
        let mut any_no = false;
        let cat = self.p_cat.get(category).zip(self.n_cat.get(category));
        match cat {
            Some((p, _)) if p.contains(i) => {}
            Some((_, n)) if n.contains(i) => any_no = true,
            _ => all_yes = false,
        }
        for v in values {
            let key = (v.attribute.clone(), v.value.clone());
            match (self.p_value.get(&key), self.n_value.get(&key)) {
                (Some(p), _) if p.contains(i) => {}
                (_, Some(n)) if n.contains(i) => any_no = true,
                _ => all_yes = false,
            }
        }
        if any_no {
            Judgement::No
        } else if all_yes {
            Judgement::Yes
        } else {
            Judgement::Unknown
        }
    }

    /// Per-value positive/negative counts for debugging.
    pub fn report(&self) -> IndexReport {
        IndexReport {
            images: self.images.len(),
            values: self
                .p_value
                .iter()
                .map(|((a, v), p)| SetCounts {
                    attribute: Some(a.clone()),
                    name: v.clone(),
                    positives: p.count_ones(..),
                    negatives: self.n_value.get(&(a.clone(), v.clone())).map(|n| n.count_ones(..)),
                })
                .collect(),
            categories: self
                .p_cat
                .iter()
                .map(|(c, p)| SetCounts {
                    attribute: None,
                    name: c.clone(),
                    positives: p.count_ones(..),
                    negatives: self.n_cat.get(c).map(|n| n.count_ones(..)),
                })
                .collect(),
        }
    }
}

/// Index the items: attribute universes, observed values, value positives
/// and category positives. Every categorized item is a category positive,
/// whether or not it carries attribute labels.
pub fn build_index(items: &[FashionItem]) -> ValueIndex {
    let mut images: Vec<String> = items.iter().map(|i| i.image_id.clone()).collect();
    images.sort_unstable();
    images.dedup();
    let n = images.len();
    let position = |id: &str| images.binary_search_by(|i| i.as_str().cmp(id)).unwrap();

    const CHUNK: usize = 4096;
    let partial = items
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut idx = ValueIndex::empty(Vec::new());
            idx.cat_universe = empty_set(n);
            for item in chunk {
                let i = position(&item.image_id);
                idx.categories.insert(item.category.clone());
                idx.p_cat.entry(item.category.clone()).or_insert_with(|| empty_set(n)).insert(i);
                idx.cat_universe.insert(i);
                for (attr, values) in &item.values {
                    if values.is_empty() {
                        continue;
                    }
                    idx.universe.entry(attr.clone()).or_insert_with(|| empty_set(n)).insert(i);
                    for v in values {
                        idx.observed.entry(attr.clone()).or_default().insert(v.clone());
                        idx.p_value
                            .entry((attr.clone(), v.clone()))
                            .or_insert_with(|| empty_set(n))
                            .insert(i);
                    }
                }
            }
            idx
        })
        .reduce_with(|mut a, b| {
            a.absorb(b);
            a
        });
    let mut index = ValueIndex::empty(images);
    if let Some(p) = partial {
        index.absorb(p);
    }
    index
}

/// Build, merge synonyms and compute negatives in one call.
pub fn prepare_index(items: &[FashionItem], taxonomy: &Taxonomy) -> ValueIndex {
    build_index(items).merge_synonyms(taxonomy).compute_negatives()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComboSets {
    pub values: Vec<BoundValue>,
    pub category: String,
    pub pos: ImageSet,
    pub neg: ImageSet,
}

impl ComboSets {
    pub fn key(&self) -> String {
        combo_key(&self.values, &self.category)
    }

    pub fn capacity(&self) -> usize {
        self.pos.count_ones(..).min(self.neg.count_ones(..))
    }
}

/// Canonical combination key: `attr=value&attr=value|category`, or just the
/// category when no values are bound.
pub fn combo_key(values: &[BoundValue], category: &str) -> String {
    if values.is_empty() {
        return category.to_string();
    }
    let vals: Vec<String> = values.iter().map(|v| format!("{}={}", v.attribute, v.value)).collect();
    format!("{}|{category}", vals.join("&"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Judgement {
    Yes,
    No,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BalancedSample {
    pub yes: Vec<String>,
    pub no: Vec<String>,
}

impl BalancedSample {
    pub fn len(&self) -> usize {
        self.yes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.yes.is_empty()
    }
}

/// Draw `k = min(quota, |pos|, |neg|)` positives and `k` negatives without
/// replacement. Draws come from a generator keyed by `(seed, rng_key)` over
/// image-id-sorted candidates; results are returned in image-id order.
pub fn emit_balanced(index: &ValueIndex, combo: &ComboSets, quota: usize, seed: u64, rng_key: &str) -> BalancedSample {
    let pos: Vec<usize> = combo.pos.ones().collect();
    let neg: Vec<usize> = combo.neg.ones().collect();
    let k = quota.min(pos.len()).min(neg.len());
    if k == 0 {
        return BalancedSample {
            yes: Vec::new(),
            no: Vec::new(),
        };
    }
    let mut rng = keyed_rng(seed, &format!("emit|{rng_key}"));
    let mut pick = |from: &[usize]| {
        let mut chosen: Vec<usize> = sample(&mut rng, from.len(), k).into_iter().map(|j| from[j]).collect();
        chosen.sort_unstable();
        chosen.into_iter().map(|i| index.images[i].clone()).collect::<Vec<_>>()
    };
    let yes = pick(&pos);
    let no = pick(&neg);
    BalancedSample { yes, no }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetCounts {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attribute: Option<String>,
    pub name: String,
    pub positives: usize,
    pub negatives: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexReport {
    pub images: usize,
    pub values: Vec<SetCounts>,
    pub categories: Vec<SetCounts>,
}
