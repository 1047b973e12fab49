//! End-to-end dataset generation.
//!
//! Images are split first; each split is then generated from its own images
//! only, so no image can leak across splits. Non-binary questions are asked
//! per item and attribute. Binary questions come from (values, category)
//! combinations in three difficulty tiers (0, 1 or 2 attribute values), each
//! balanced to equal yes/no counts and sized by the tier weights.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::balancer::{combo_key, emit_balanced, prepare_index, ComboSets, ValueIndex};
use crate::error::{Error, Result};
use crate::ingest::FashionItem;
use crate::keyed::{keyed_rng, keyed_unit};
use crate::taxonomy::{agreement_forms, Category, Taxonomy};
use crate::template::{
    diversify, render, AnswerType, Binding, BoundCategory, BoundValue, DiversifyPolicy, QuestionTemplate, Slot,
    TemplateLibrary,
};

pub const STATS_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub const ALL: [Split; 2] = [Split::Train, Split::Val];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            _ => Err(Error::Input(format!("unknown split `{s}` (expected train or val)"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Positives and negatives from the inverted value index.
    #[default]
    AttributeBased,
    /// Each image judged against the question on its own labels.
    ImageBased,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    pub qid: String,
    pub image_id: String,
    pub question: String,
    pub answer: String,
    pub answer_type: AnswerType,
    pub question_type: String,
    pub template_id: String,
    /// Number of attribute values in a binary question; `None` for
    /// non-binary questions.
    pub difficulty_tier: Option<u8>,
    pub split: Split,
    pub noise_flag: bool,
    /// Slot values the question was rendered from.
    pub binding: Binding,
}

// ---------------------------------------------------------------------------
// Configuration

fn default_split_ratio() -> f64 {
    0.816
}
fn default_tiers() -> BTreeMap<u8, f64> {
    BTreeMap::from([(2, 134.0), (1, 6.0), (0, 1.0)])
}
fn default_quota() -> usize {
    4
}
fn default_one() -> usize {
    1
}
fn default_shard_size() -> usize {
    10_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationConfig {
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_split_ratio")]
    pub split_ratio: f64,
    /// Relative weight of binary pairs per tier; tiers left out are not
    /// generated.
    #[serde(default = "default_tiers")]
    pub tier_proportions: BTreeMap<u8, f64>,
    /// Yes/no pairs per question in the heaviest tier.
    #[serde(default = "default_quota")]
    pub per_question_quota: usize,
    #[serde(default)]
    pub diversify_policy: DiversifyPolicy,
    #[serde(default)]
    pub strategy: Strategy,
    #[serde(default = "default_one")]
    pub binary_templates_per_combination: usize,
    #[serde(default = "default_one")]
    pub non_binary_templates_per_attribute: usize,
    #[serde(default)]
    pub enable_context_values: bool,
    #[serde(default = "default_shard_size")]
    pub shard_size: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

impl GenerationConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::json("generation config", e))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::Config(format!("split_ratio {} is outside (0, 1)", self.split_ratio)));
        }
        if self.tier_proportions.is_empty() {
            return Err(Error::Config("tier_proportions is empty".into()));
        }
        for (tier, w) in &self.tier_proportions {
            if *tier > 2 {
                return Err(Error::Config(format!("tier {tier} outside 0..=2")));
            }
            if !(w.is_finite() && *w > 0.0) {
                return Err(Error::Config(format!("tier {tier} weight {w} must be positive")));
            }
        }
        if self.per_question_quota == 0 {
            return Err(Error::Config("per_question_quota must be at least 1".into()));
        }
        if self.binary_templates_per_combination == 0 || self.non_binary_templates_per_attribute == 0 {
            return Err(Error::Config("templates per combination/attribute must be at least 1".into()));
        }
        if self.shard_size == 0 {
            return Err(Error::Config("shard_size must be at least 1".into()));
        }
        self.diversify_policy.validate()
    }

    /// Diversification policy seeded from the master seed.
    pub fn policy(&self) -> DiversifyPolicy {
        DiversifyPolicy {
            rng_seed: self.master_seed,
            ..self.diversify_policy.clone()
        }
    }
}

/// Parse `2:134,1:6,0:1`.
pub fn parse_tier_weights(text: &str) -> Result<BTreeMap<u8, f64>> {
    text.split(',')
        .map(|part| {
            let (t, w) = part
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("tier weight `{part}` is not tier:weight")))?;
            let t: u8 = t.trim().parse().map_err(|_| Error::Config(format!("bad tier `{t}`")))?;
            let w: f64 = w.trim().parse().map_err(|_| Error::Config(format!("bad weight `{w}`")))?;
            Ok((t, w))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Splitting

/// Assign each image to train when its keyed hash falls below `ratio`.
pub fn split_images<'a>(
    image_ids: impl IntoIterator<Item = &'a str>,
    ratio: f64,
    master_seed: u64,
) -> BTreeMap<String, Split> {
    image_ids
        .into_iter()
        .map(|id| {
            let split = if keyed_unit(master_seed, &format!("split|{id}")) < ratio {
                Split::Train
            } else {
                Split::Val
            };
            (id.to_string(), split)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Non-binary generation

fn choose<'t>(templates: Vec<&'t QuestionTemplate>, k: usize, seed: u64, key: &str) -> Vec<&'t QuestionTemplate> {
    if templates.len() <= k {
        return templates;
    }
    let mut idx = sample(&mut keyed_rng(seed, key), templates.len(), k).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| templates[i]).collect()
}

fn usable(template: &QuestionTemplate, has_location: bool, config: &GenerationConfig) -> bool {
    (has_location || !template.pattern.slot_is_mandatory(Slot::Location))
        && (config.enable_context_values || !template.context_values)
}

/// Non-binary triplets for items of one split: one per labeled attribute
/// value and selected template variant.
pub fn generate_non_binary(
    items: &[FashionItem],
    split: Split,
    library: &TemplateLibrary,
    taxonomy: &Taxonomy,
    config: &GenerationConfig,
) -> Result<Vec<Triplet>> {
    let policy = config.policy();
    let per_item: Result<Vec<Vec<Triplet>>> = items
        .par_iter()
        .map(|item| non_binary_for_item(item, split, library, taxonomy, config, &policy))
        .collect();
    let mut out: Vec<Triplet> = per_item?.into_iter().flatten().collect();
    out.sort_by(|a, b| a.qid.cmp(&b.qid));
    Ok(out)
}

fn non_binary_for_item(
    item: &FashionItem,
    split: Split,
    library: &TemplateLibrary,
    taxonomy: &Taxonomy,
    config: &GenerationConfig,
    policy: &DiversifyPolicy,
) -> Result<Vec<Triplet>> {
    let category = taxonomy.category(&item.category)?;
    let location = category.location_for(item.has_person);
    let agreement = agreement_forms(item.piece_count, category.is_paired, &category.singular_form)?;
    let mut out = Vec::new();
    for attribute in taxonomy.attributes() {
        let Some(values) = item.values.get(&attribute.name).filter(|v| !v.is_empty()) else { continue };
        let candidates: Vec<&QuestionTemplate> = library
            .templates_for(taxonomy, Some(&attribute.name), category, AnswerType::NonBinary)
            .into_iter()
            .filter(|t| usable(t, location.is_some(), config))
            .collect();
        let context = context_value(item, &attribute.name, taxonomy);
        let candidates: Vec<&QuestionTemplate> =
            candidates.into_iter().filter(|t| t.arity == 0 || context.is_some()).collect();
        let key = format!("nb|{}|{}", item.image_id, attribute.name);
        let chosen = choose(candidates, config.non_binary_templates_per_attribute, config.master_seed, &key);
        for template in chosen {
            for variant in diversify(template, policy, &format!("{}|{}", item.image_id, attribute.name)) {
                for value in values {
                    let binding = Binding {
                        category: Some(BoundCategory::from(category)),
                        attr_values: if variant.arity > 0 {
                            context.iter().cloned().collect()
                        } else {
                            Vec::new()
                        },
                        attribute_name: Some(attribute.name.clone()),
                        location,
                        agreement,
                        part: attribute.name.strip_prefix("number of ").map(String::from),
                        conjunction: None,
                    };
                    let question = render(&variant, &binding)?;
                    out.push(Triplet {
                        qid: format!(
                            "{split}/n/{}/{}/{}/{}",
                            item.image_id, attribute.name, value, variant.template_id
                        ),
                        image_id: item.image_id.clone(),
                        question: question.0,
                        answer: value.clone(),
                        answer_type: AnswerType::NonBinary,
                        question_type: variant.question_type.clone(),
                        template_id: variant.template_id.clone(),
                        difficulty_tier: None,
                        split,
                        noise_flag: variant.noise,
                        binding,
                    });
                }
            }
        }
    }
    Ok(out)
}

/// A value of another attribute, used to describe the item in questions
/// that do not ask about it.
fn context_value(item: &FashionItem, asked: &str, taxonomy: &Taxonomy) -> Option<BoundValue> {
    taxonomy
        .attributes()
        .filter(|a| a.name != asked && !a.name.starts_with("number of "))
        .find_map(|a| {
            let v = item.values.get(&a.name)?.iter().next()?;
            Some(BoundValue::new(a.name.clone(), v.clone()))
        })
}

// ---------------------------------------------------------------------------
// Binary generation

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComboSpec {
    pub tier: u8,
    pub values: Vec<BoundValue>,
    pub category: String,
}

impl ComboSpec {
    pub fn key(&self) -> String {
        combo_key(&self.values, &self.category)
    }
}

fn binary_templates<'l>(
    library: &'l TemplateLibrary,
    taxonomy: &Taxonomy,
    values: &[BoundValue],
    category: &Category,
) -> Vec<&'l QuestionTemplate> {
    let arity = values.len() as u8;
    match values {
        [] => library.templates_for(taxonomy, None, category, AnswerType::Binary),
        [first, rest @ ..] => library
            .templates_for(taxonomy, Some(&first.attribute), category, AnswerType::Binary)
            .into_iter()
            .filter(|t| t.arity == arity && rest.iter().all(|v| t.accepts_attribute(&v.attribute)))
            .collect(),
    }
}

/// Combinations with at least one positive image, in canonical order.
pub fn enumerate_combos(
    index: &ValueIndex,
    taxonomy: &Taxonomy,
    library: &TemplateLibrary,
    tiers: &BTreeSet<u8>,
) -> Vec<ComboSpec> {
    let mut out = Vec::new();
    for cat_name in &index.categories {
        let Ok(category) = taxonomy.category(cat_name) else { continue };
        let p_cat = &index.p_cat[cat_name];
        if tiers.contains(&0) {
            out.push(ComboSpec {
                tier: 0,
                values: Vec::new(),
                category: cat_name.clone(),
            });
        }
        if !tiers.contains(&1) && !tiers.contains(&2) {
            continue;
        }
        let attrs: Vec<&str> = taxonomy
            .attributes()
            .filter(|a| index.observed.contains_key(&a.name))
            .filter(|a| {
                let probe = [BoundValue::new(a.name.clone(), "")];
                !binary_templates(library, taxonomy, &probe, category).is_empty()
            })
            .map(|a| a.name.as_str())
            .collect();
        for (i, a1) in attrs.iter().enumerate() {
            for v1 in &index.observed[*a1] {
                let mut pos1 = index.p_value[&(a1.to_string(), v1.clone())].clone();
                pos1.intersect_with(p_cat);
                if pos1.is_clear() {
                    continue;
                }
                let bv1 = BoundValue::new(*a1, v1.clone());
                if tiers.contains(&1) {
                    out.push(ComboSpec {
                        tier: 1,
                        values: vec![bv1.clone()],
                        category: cat_name.clone(),
                    });
                }
                if !tiers.contains(&2) {
                    continue;
                }
                for a2 in &attrs[i + 1..] {
                    for v2 in &index.observed[*a2] {
                        let p2 = &index.p_value[&(a2.to_string(), v2.clone())];
                        if pos1.is_disjoint(p2) {
                            continue;
                        }
                        out.push(ComboSpec {
                            tier: 2,
                            values: vec![bv1.clone(), BoundValue::new(*a2, v2.clone())],
                            category: cat_name.clone(),
                        });
                    }
                }
            }
        }
    }
    out
}

fn combo_sets(index: &ValueIndex, spec: &ComboSpec, strategy: Strategy) -> Result<ComboSets> {
    match strategy {
        Strategy::AttributeBased => index.combine_multi(&spec.values, &spec.category),
        Strategy::ImageBased => index.image_based_combo(&spec.values, &spec.category),
    }
}

#[derive(Debug, Clone)]
struct PlannedQuestion {
    template: QuestionTemplate,
    binding: Binding,
    text: String,
    pairs: usize,
}

#[derive(Debug, Clone)]
struct PlannedCombo {
    spec: ComboSpec,
    capacity: usize,
    questions: Vec<PlannedQuestion>,
}

/// Binary pairs requested and allocated for one tier of one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierPlan {
    pub split: Split,
    pub tier: u8,
    pub weight: f64,
    pub combinations: usize,
    pub questions: usize,
    /// Sum over questions of min(|pos|, |neg|).
    pub capacity: usize,
    /// Requested yes/no pairs.
    pub target: usize,
    /// Pairs actually allocated: min(target, capacity).
    pub allocated: usize,
}

/// Spread `target` units over slots with the given capacities as evenly as
/// possible. Leftover units go to the slots that can still take one, in
/// keyed-hash order of their keys.
pub fn water_fill(capacities: &[usize], keys: &[String], target: usize, seed: u64) -> Vec<usize> {
    let total: usize = capacities.iter().sum();
    if total <= target {
        return capacities.to_vec();
    }
    let filled = |level: usize| capacities.iter().map(|c| (*c).min(level)).sum::<usize>();
    let (mut lo, mut hi) = (0usize, capacities.iter().copied().max().unwrap_or(0));
    while lo < hi {
        let mid = lo + (hi - lo).div_ceil(2);
        if filled(mid) <= target {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    let mut alloc: Vec<usize> = capacities.iter().map(|c| (*c).min(lo)).collect();
    let mut remainder = target - alloc.iter().sum::<usize>();
    let mut open: Vec<usize> = (0..capacities.len()).filter(|&i| capacities[i] > lo).collect();
    open.sort_by(|&a, &b| {
        keyed_unit(seed, &format!("fill|{}", keys[a]))
            .total_cmp(&keyed_unit(seed, &format!("fill|{}", keys[b])))
            .then(keys[a].cmp(&keys[b]))
    });
    for i in open {
        if remainder == 0 {
            break;
        }
        alloc[i] += 1;
        remainder -= 1;
    }
    alloc
}

/// Allocate pairs per question. The heaviest tier with capacity is the
/// anchor: each of its questions gets `min(per_question_quota, capacity)`.
/// Every other tier gets `round(anchor total × weight / anchor weight)`
/// pairs, water-filled over its questions.
fn allocate(plans: &mut [PlannedCombo], split: Split, config: &GenerationConfig) -> Vec<TierPlan> {
    let mut tiers: BTreeMap<u8, TierPlan> = BTreeMap::new();
    for (&tier, &weight) in &config.tier_proportions {
        tiers.insert(
            tier,
            TierPlan {
                split,
                tier,
                weight,
                combinations: 0,
                questions: 0,
                capacity: 0,
                target: 0,
                allocated: 0,
            },
        );
    }
    for p in plans.iter() {
        let t = tiers.get_mut(&p.spec.tier).expect("combos only for configured tiers");
        t.combinations += 1;
        t.questions += p.questions.len();
        t.capacity += p.capacity * p.questions.len();
    }
    let anchor = tiers
        .values()
        .filter(|t| t.capacity > 0)
        .max_by(|a, b| a.weight.total_cmp(&b.weight).then(a.tier.cmp(&b.tier)))
        .map(|t| (t.tier, t.weight));
    let Some((anchor_tier, anchor_weight)) = anchor else {
        return tiers.into_values().collect();
    };
    let quota = config.per_question_quota;
    let anchor_total: usize = plans
        .iter()
        .filter(|p| p.spec.tier == anchor_tier)
        .map(|p| p.capacity.min(quota) * p.questions.len())
        .sum();
    for t in tiers.values_mut() {
        t.target = if t.tier == anchor_tier {
            anchor_total
        } else {
            (anchor_total as f64 * t.weight / anchor_weight).round() as usize
        };
    }
    for (tier, plan) in tiers.iter_mut() {
        let mut slots: Vec<(usize, usize)> = Vec::new();
        let mut caps = Vec::new();
        let mut keys = Vec::new();
        for (ci, p) in plans.iter().enumerate().filter(|(_, p)| p.spec.tier == *tier) {
            for (qi, q) in p.questions.iter().enumerate() {
                slots.push((ci, qi));
                caps.push(if *tier == anchor_tier { p.capacity.min(quota) } else { p.capacity });
                keys.push(format!("{}|{}", q.template.template_id, p.spec.key()));
            }
        }
        let alloc = water_fill(&caps, &keys, plan.target, config.master_seed);
        for ((ci, qi), a) in slots.into_iter().zip(alloc) {
            plans[ci].questions[qi].pairs = a;
            plan.allocated += a;
        }
    }
    tiers.into_values().collect()
}

/// Binary triplets for the items of one split, plus the per-tier plan.
pub fn generate_binary(
    items: &[FashionItem],
    split: Split,
    library: &TemplateLibrary,
    taxonomy: &Taxonomy,
    config: &GenerationConfig,
) -> Result<(Vec<Triplet>, Vec<TierPlan>)> {
    let index = prepare_index(items, taxonomy);
    let tiers: BTreeSet<u8> = config.tier_proportions.keys().copied().collect();
    let specs = enumerate_combos(&index, taxonomy, library, &tiers);
    let policy = config.policy();

    let planned: Result<Vec<Option<PlannedCombo>>> = specs
        .into_par_iter()
        .map(|spec| {
            let sets = combo_sets(&index, &spec, config.strategy)?;
            let capacity = sets.capacity();
            if capacity == 0 {
                return Ok(None);
            }
            let category = taxonomy.category(&spec.category)?;
            // one question string serves positive and negative images, so
            // it is rendered in the canonical singular without reference to
            // any single image
            let location = category.location_for(true);
            let key = spec.key();
            let candidates: Vec<&QuestionTemplate> = binary_templates(library, taxonomy, &spec.values, category)
                .into_iter()
                .filter(|t| usable(t, location.is_some(), config))
                .collect();
            let chosen = choose(
                candidates,
                config.binary_templates_per_combination,
                config.master_seed,
                &format!("bin|{key}"),
            );
            let mut questions = Vec::new();
            for template in chosen {
                for variant in diversify(template, &policy, &key) {
                    let binding = Binding {
                        category: Some(BoundCategory::from(category)),
                        attr_values: spec.values.clone(),
                        attribute_name: None,
                        location,
                        agreement: agreement_forms(1, category.is_paired, &category.singular_form)?,
                        part: None,
                        conjunction: None,
                    };
                    let text = render(&variant, &binding)?.0;
                    questions.push(PlannedQuestion {
                        template: variant,
                        binding,
                        text,
                        pairs: 0,
                    });
                }
            }
            Ok((!questions.is_empty()).then_some(PlannedCombo {
                spec,
                capacity,
                questions,
            }))
        })
        .collect();
    let mut plans: Vec<PlannedCombo> = planned?.into_iter().flatten().collect();
    let tier_plan = allocate(&mut plans, split, config);

    let emitted: Result<Vec<Vec<Triplet>>> = plans
        .par_iter()
        .filter(|p| p.questions.iter().any(|q| q.pairs > 0))
        .map(|p| {
            let sets = combo_sets(&index, &p.spec, config.strategy)?;
            let key = p.spec.key();
            let mut out = Vec::new();
            for q in p.questions.iter().filter(|q| q.pairs > 0) {
                let rng_key = format!("{}|{key}", q.template.template_id);
                let drawn = emit_balanced(&index, &sets, q.pairs, config.master_seed, &rng_key);
                for (i, (yes, no)) in drawn.yes.iter().zip(&drawn.no).enumerate() {
                    for (image, answer) in [(yes, "yes"), (no, "no")] {
                        out.push(Triplet {
                            qid: format!("{split}/b/{}/{key}/{i:05}/{answer}", q.template.template_id),
                            image_id: image.clone(),
                            question: q.text.clone(),
                            answer: answer.into(),
                            answer_type: AnswerType::Binary,
                            question_type: q.template.question_type.clone(),
                            template_id: q.template.template_id.clone(),
                            difficulty_tier: Some(p.spec.tier),
                            split,
                            noise_flag: q.template.noise,
                            binding: q.binding.clone(),
                        });
                    }
                }
            }
            Ok(out)
        })
        .collect();
    let mut out: Vec<Triplet> = emitted?.into_iter().flatten().collect();
    out.sort_by(|a, b| a.qid.cmp(&b.qid));
    Ok((out, tier_plan))
}

// ---------------------------------------------------------------------------
// Vocabulary, bundle and statistics

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AnswerVocabulary {
    pub answers: Vec<String>,
}

impl AnswerVocabulary {
    pub fn index_of(&self, answer: &str) -> Option<usize> {
        self.answers.binary_search_by(|a| a.as_str().cmp(answer)).ok()
    }

    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }
}

/// Sorted unique answers; an answer's index is its position.
pub fn build_vocabulary<'a>(triplets: impl IntoIterator<Item = &'a Triplet>) -> AnswerVocabulary {
    let set: BTreeSet<&str> = triplets.into_iter().map(|t| t.answer.as_str()).collect();
    AnswerVocabulary {
        answers: set.into_iter().map(String::from).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub tool: String,
    pub version: String,
    pub config: GenerationConfig,
}

impl ConfigEcho {
    pub fn new(config: &GenerationConfig) -> Self {
        ConfigEcho {
            tool: "vqagen".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config: config.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub triplets: BTreeMap<Split, Vec<Triplet>>,
    pub vocabulary: AnswerVocabulary,
    pub stats: StatsReport,
    pub config_echo: ConfigEcho,
}

impl DatasetBundle {
    pub fn split(&self, split: Split) -> &[Triplet] {
        self.triplets.get(&split).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn all(&self) -> impl Iterator<Item = &Triplet> {
        self.triplets.values().flatten()
    }

    pub fn len(&self) -> usize {
        self.triplets.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SplitStats {
    pub triplets: usize,
    pub non_binary: usize,
    pub binary: usize,
    pub images: usize,
    pub questions: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BalanceCheck {
    pub ok: bool,
    pub binary_questions: usize,
    /// Up to 20 offending `split: question` entries.
    pub imbalanced: Vec<String>,
    pub imbalanced_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub schema_version: u32,
    pub total: usize,
    pub splits: BTreeMap<Split, SplitStats>,
    pub answer_types: BTreeMap<AnswerType, usize>,
    pub binary_by_tier: BTreeMap<u8, usize>,
    pub question_types: BTreeMap<String, usize>,
    pub vocabulary_size: usize,
    pub noise_flagged: usize,
    /// Images appearing in more than one split.
    pub split_overlap: usize,
    pub balance: BalanceCheck,
    #[serde(default)]
    pub tier_plan: Vec<TierPlan>,
}

/// Summary counts and the yes/no balance audit for a set of triplets.
pub fn stats<'a>(
    triplets: impl IntoIterator<Item = &'a Triplet>,
    vocabulary: &AnswerVocabulary,
    tier_plan: Vec<TierPlan>,
) -> StatsReport {
    let mut splits: BTreeMap<Split, SplitStats> = BTreeMap::new();
    let mut answer_types = BTreeMap::new();
    let mut binary_by_tier = BTreeMap::new();
    let mut question_types = BTreeMap::new();
    let mut images: BTreeMap<Split, BTreeSet<&str>> = BTreeMap::new();
    let mut questions: BTreeMap<Split, BTreeSet<&str>> = BTreeMap::new();
    let mut balance: BTreeMap<(Split, &str), (usize, usize)> = BTreeMap::new();
    let mut total = 0;
    let mut noise_flagged = 0;
    for t in triplets {
        total += 1;
        let s = splits.entry(t.split).or_default();
        s.triplets += 1;
        match t.answer_type {
            AnswerType::Binary => {
                s.binary += 1;
                *binary_by_tier.entry(t.difficulty_tier.unwrap_or(0)).or_insert(0) += 1;
                let e = balance.entry((t.split, t.question.as_str())).or_default();
                match t.answer.as_str() {
                    "yes" => e.0 += 1,
                    _ => e.1 += 1,
                }
            }
            AnswerType::NonBinary => s.non_binary += 1,
        }
        *answer_types.entry(t.answer_type).or_insert(0) += 1;
        *question_types.entry(t.question_type.clone()).or_insert(0) += 1;
        images.entry(t.split).or_default().insert(&t.image_id);
        questions.entry(t.split).or_default().insert(&t.question);
        noise_flagged += usize::from(t.noise_flag);
    }
    for (split, s) in splits.iter_mut() {
        s.images = images.get(split).map_or(0, BTreeSet::len);
        s.questions = questions.get(split).map_or(0, BTreeSet::len);
    }
    let split_overlap = match (images.get(&Split::Train), images.get(&Split::Val)) {
        (Some(a), Some(b)) => a.intersection(b).count(),
        _ => 0,
    };
    let bad: Vec<String> = balance
        .iter()
        .filter(|(_, (y, n))| y != n)
        .map(|((s, q), (y, n))| format!("{s}: {q} (yes {y}, no {n})"))
        .collect();
    StatsReport {
        schema_version: STATS_SCHEMA_VERSION,
        total,
        splits,
        answer_types,
        binary_by_tier,
        question_types,
        vocabulary_size: vocabulary.len(),
        noise_flagged,
        split_overlap,
        balance: BalanceCheck {
            ok: bad.is_empty(),
            binary_questions: balance.len(),
            imbalanced_count: bad.len(),
            imbalanced: bad.into_iter().take(20).collect(),
        },
        tier_plan,
    }
}

/// Full pipeline on canonical items: split, generate both answer types per
/// split, build the vocabulary and statistics. `workers` bounds the thread
/// pool; output is identical for every worker count.
pub fn generate(
    items: &[FashionItem],
    taxonomy: &Taxonomy,
    library: &TemplateLibrary,
    config: &GenerationConfig,
    workers: usize,
) -> Result<DatasetBundle> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| {
        let assignment = split_images(
            items.iter().map(|i| i.image_id.as_str()),
            config.split_ratio,
            config.master_seed,
        );
        let mut triplets = BTreeMap::new();
        let mut plan = Vec::new();
        for split in Split::ALL {
            let mine: Vec<FashionItem> = items
                .iter()
                .filter(|i| assignment[&i.image_id] == split)
                .cloned()
                .collect();
            let mut all = generate_non_binary(&mine, split, library, taxonomy, config)?;
            let (binary, tier_plan) = generate_binary(&mine, split, library, taxonomy, config)?;
            tracing::info!(
                split = split.as_str(),
                items = mine.len(),
                non_binary = all.len(),
                binary = binary.len(),
                "generated split"
            );
            all.extend(binary);
            all.sort_by(|a, b| a.qid.cmp(&b.qid));
            plan.extend(tier_plan);
            triplets.insert(split, all);
        }
        let vocabulary = build_vocabulary(triplets.values().flatten());
        let stats = stats(triplets.values().flatten(), &vocabulary, plan);
        Ok(DatasetBundle {
            triplets,
            vocabulary,
            stats,
            config_echo: ConfigEcho::new(config),
        })
    })
}

// ---------------------------------------------------------------------------
// Subsampling and random listing

/// Requested triplet counts per split and answer type. Strata without an
/// entry are kept whole.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SubsampleQuotas(pub BTreeMap<Split, BTreeMap<AnswerType, usize>>);

impl SubsampleQuotas {
    pub fn get(&self, split: Split, answer_type: AnswerType) -> Option<usize> {
        self.0.get(&split)?.get(&answer_type).copied()
    }

    pub fn set(&mut self, split: Split, answer_type: AnswerType, n: usize) {
        self.0.entry(split).or_default().insert(answer_type, n);
    }
}

impl FromStr for SubsampleQuotas {
    type Err = Error;
    /// `train:non_binary=110,train:binary=90`
    fn from_str(s: &str) -> Result<Self> {
        let mut q = SubsampleQuotas::default();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let bad = || Error::Config(format!("quota `{part}` is not split:answer_type=count"));
            let (stratum, n) = part.split_once('=').ok_or_else(bad)?;
            let (split, at) = stratum.split_once(':').ok_or_else(bad)?;
            let split: Split = split.trim().parse().map_err(|_| bad())?;
            let at = match at.trim() {
                "binary" => AnswerType::Binary,
                "non_binary" => AnswerType::NonBinary,
                _ => return Err(bad()),
            };
            q.set(split, at, n.trim().parse().map_err(|_| bad())?);
        }
        Ok(q)
    }
}

fn sample_sorted(n: usize, k: usize, seed: u64, key: &str) -> Vec<usize> {
    if k >= n {
        return (0..n).collect();
    }
    let mut idx = sample(&mut keyed_rng(seed, key), n, k).into_vec();
    idx.sort_unstable();
    idx
}

/// Uniform without-replacement sample per stratum. Binary triplets are
/// sampled as yes/no pairs of the same question, so the quota is counted in
/// triplets and an odd quota is rounded down. The vocabulary is kept.
pub fn subsample(bundle: &DatasetBundle, quotas: &SubsampleQuotas, seed: u64) -> DatasetBundle {
    let mut triplets = BTreeMap::new();
    for (&split, all) in &bundle.triplets {
        let mut kept: Vec<Triplet> = Vec::new();

        let non_binary: Vec<&Triplet> = all.iter().filter(|t| t.answer_type == AnswerType::NonBinary).collect();
        let want = quotas.get(split, AnswerType::NonBinary).unwrap_or(non_binary.len());
        if want > non_binary.len() {
            tracing::warn!(split = split.as_str(), want, available = non_binary.len(), "non-binary quota clamped");
        }
        let key = format!("subsample|{split}|non_binary");
        kept.extend(sample_sorted(non_binary.len(), want, seed, &key).into_iter().map(|i| non_binary[i].clone()));

        let mut by_question: BTreeMap<&str, (Vec<&Triplet>, Vec<&Triplet>)> = BTreeMap::new();
        for t in all.iter().filter(|t| t.answer_type == AnswerType::Binary) {
            let e = by_question.entry(t.question.as_str()).or_default();
            if t.answer == "yes" {
                e.0.push(t);
            } else {
                e.1.push(t);
            }
        }
        let mut pairs: Vec<(&Triplet, &Triplet)> = Vec::new();
        for (question, (yes, no)) in by_question {
            if yes.len() != no.len() {
                tracing::warn!(split = split.as_str(), question, "unpaired binary triplets dropped");
            }
            pairs.extend(yes.into_iter().zip(no));
        }
        let want = quotas.get(split, AnswerType::Binary).map_or(pairs.len(), |q| {
            if q % 2 == 1 {
                tracing::warn!(split = split.as_str(), quota = q, "odd binary quota rounded down to whole pairs");
            }
            q / 2
        });
        if want > pairs.len() {
            tracing::warn!(split = split.as_str(), want_pairs = want, available = pairs.len(), "binary quota clamped");
        }
        let key = format!("subsample|{split}|binary");
        for i in sample_sorted(pairs.len(), want, seed, &key) {
            kept.push(pairs[i].0.clone());
            kept.push(pairs[i].1.clone());
        }
        kept.sort_by(|a, b| a.qid.cmp(&b.qid));
        triplets.insert(split, kept);
    }
    let stats = stats(triplets.values().flatten(), &bundle.vocabulary, Vec::new());
    DatasetBundle {
        triplets,
        vocabulary: bundle.vocabulary.clone(),
        stats,
        config_echo: bundle.config_echo.clone(),
    }
}

/// `n` triplets drawn uniformly under `seed`, in qid order.
pub fn sample_triplets<'a>(triplets: &[&'a Triplet], n: usize, seed: u64) -> Vec<&'a Triplet> {
    sample_sorted(triplets.len(), n, seed, "sample")
        .into_iter()
        .map(|i| triplets[i])
        .collect()
}
