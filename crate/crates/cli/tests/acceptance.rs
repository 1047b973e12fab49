//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line per
//! criterion and exits non-zero if any failed.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::io::Cursor;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vqagen::balancer::{prepare_index, ValueIndex};
use vqagen::dataset::{generate, split_images, subsample, DatasetBundle, GenerationConfig, Split, SubsampleQuotas, Triplet};
use vqagen::ingest::{ingest_catalog, FashionItem, NormalizationRules};
use vqagen::metrics::{score, Prediction, ScoreOptions};
use vqagen::output::{self, RunManifest};
use vqagen::taxonomy::{agreement_forms, LocationPhrase, Taxonomy, TaxonomyDocument};
use vqagen::template::{
    diversify, render, AnswerType, Binding, BoundCategory, BoundValue, DiversifyPolicy, Pattern, QuestionTemplate,
    Slot, TemplateLibrary,
};

type Outcome = Result<String, String>;
type Closures = (BTreeMap<(String, String), BTreeSet<String>>, BTreeMap<String, BTreeSet<String>>);
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

// ---------------------------------------------------------------------------
// Synthetic catalogs

/// Raw catalog lines: random categories, applicable attributes labeled with
/// probability 0.6, occasionally two colors, mixed piece counts.
fn synthetic_catalog(taxonomy: &Taxonomy, n: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let categories: Vec<_> = taxonomy.categories().collect();
    let mut out = String::new();
    for i in 0..n {
        let cat = categories.choose(&mut rng).unwrap();
        let mut attrs = serde_json::Map::new();
        for a in taxonomy.attributes().filter(|a| a.applies_to(cat.super_category)) {
            if !rng.random_bool(0.6) {
                continue;
            }
            let mut vals: Vec<&String> = vec![a.value_names.choose(&mut rng).unwrap()];
            if a.name == "color" && rng.random_bool(0.15) {
                vals.push(a.value_names.choose(&mut rng).unwrap());
            }
            attrs.insert(a.name.clone(), serde_json::json!(vals));
        }
        let record = serde_json::json!({
            "item_id": format!("item-{i:05}"),
            "image_id": format!("img-{i:05}"),
            "category": cat.name,
            "attributes": attrs,
            "has_person": rng.random_bool(0.5),
            "piece_count": *[1u32, 1, 1, 2, 3].choose(&mut rng).unwrap(),
        });
        out.push_str(&record.to_string());
        out.push('\n');
    }
    out
}

fn ingest(text: &str, taxonomy: &Taxonomy) -> Vec<FashionItem> {
    let (items, report) = ingest_catalog(Cursor::new(text), &NormalizationRules::builtin(), taxonomy).unwrap();
    assert_eq!(report.rejected, 0, "{:?}", report.rejects);
    items
}

struct Fixture {
    taxonomy: Taxonomy,
    library: TemplateLibrary,
    catalog: String,
    items: Vec<FashionItem>,
    config: GenerationConfig,
    bundle: DatasetBundle,
    elapsed: Duration,
}

fn fixture() -> Fixture {
    let taxonomy = Taxonomy::builtin();
    let library = TemplateLibrary::builtin();
    let catalog = synthetic_catalog(&taxonomy, 1000, 2024);
    let items = ingest(&catalog, &taxonomy);
    let config = GenerationConfig {
        master_seed: 7,
        ..Default::default()
    };
    let started = Instant::now();
    let bundle = generate(&items, &taxonomy, &library, &config, 1).unwrap();
    let elapsed = started.elapsed();
    Fixture {
        taxonomy,
        library,
        catalog,
        items,
        config,
        bundle,
        elapsed,
    }
}

fn yes_no_by_question<'a>(triplets: impl IntoIterator<Item = &'a Triplet>) -> BTreeMap<&'a str, (usize, usize)> {
    let mut m: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for t in triplets.into_iter().filter(|t| t.answer_type == AnswerType::Binary) {
        let e = m.entry(t.question.as_str()).or_default();
        match t.answer.as_str() {
            "yes" => e.0 += 1,
            "no" => e.1 += 1,
            other => panic!("binary answer {other}"),
        }
    }
    m
}

// ---------------------------------------------------------------------------
// 1. Balance

fn criterion_1(f: &Fixture) -> Outcome {
    let attrs: BTreeSet<&String> = f.items.iter().flat_map(|i| i.values.keys()).collect();
    let values: BTreeSet<(&String, &String)> =
        f.items.iter().flat_map(|i| i.values.iter().flat_map(|(a, vs)| vs.iter().map(move |v| (a, v)))).collect();
    ensure!(f.items.len() == 1000, "{} items", f.items.len());
    ensure!(attrs.len() >= 8 && values.len() >= 30, "{} attributes, {} values", attrs.len(), values.len());

    let balance = yes_no_by_question(f.bundle.all());
    let unbalanced = balance.values().filter(|(y, n)| y != n).count();
    ensure!(unbalanced == 0, "{unbalanced} binary questions with yes != no");
    ensure!(!balance.is_empty(), "no binary questions generated");

    let mut accuracies = Vec::new();
    for split in Split::ALL {
        let gold: Vec<Triplet> =
            f.bundle.split(split).iter().filter(|t| t.answer_type == AnswerType::Binary).cloned().collect();
        let preds: Vec<Prediction> = gold
            .iter()
            .map(|t| Prediction {
                qid: t.qid.clone(),
                predicted_answer: "yes".into(),
            })
            .collect();
        let r = score(&preds, &gold, ScoreOptions::default()).map_err(|e| e.to_string())?;
        ensure!(r.binary.accuracy == Some(0.5), "{split}: constant-yes binary accuracy {:?}", r.binary.accuracy);
        accuracies.push(format!("{split} {:.3} (n={})", 0.5, r.binary.n));
    }
    ensure!(f.elapsed < Duration::from_secs(60), "generation took {:?}", f.elapsed);
    Ok(format!(
        "{} attributes, {} values, {} binary questions balanced; constant-yes accuracy {}; generated in {:.2?} on 1 worker",
        attrs.len(),
        values.len(),
        balance.len(),
        accuracies.join(", "),
        f.elapsed
    ))
}

// ---------------------------------------------------------------------------
// 2. Set-algebra oracle

/// Values counted as positives of each (attribute, value): itself, its
/// alternatives and hierarchical descendants, closed transitively. Built
/// from the raw registry records.
fn oracle_closure(doc: &TaxonomyDocument) -> Closures {
    let mut value_edges: BTreeMap<(String, String), BTreeSet<String>> = BTreeMap::new();
    for v in &doc.values {
        let key = (v.attribute.clone(), v.name.clone());
        value_edges.entry(key.clone()).or_default().extend(v.alternatives.iter().cloned());
        for p in &v.parents {
            value_edges.entry((v.attribute.clone(), p.clone())).or_default().insert(v.name.clone());
        }
    }
    let mut values = BTreeMap::new();
    for v in &doc.values {
        let mut seen = BTreeSet::from([v.name.clone()]);
        let mut queue = VecDeque::from([v.name.clone()]);
        while let Some(n) = queue.pop_front() {
            for m in value_edges.get(&(v.attribute.clone(), n)).into_iter().flatten() {
                if seen.insert(m.clone()) {
                    queue.push_back(m.clone());
                }
            }
        }
        values.insert((v.attribute.clone(), v.name.clone()), seen);
    }
    let mut cat_edges: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for c in &doc.categories {
        cat_edges.entry(c.name.clone()).or_default().extend(c.alternatives.iter().cloned());
        if let Some(p) = &c.parent {
            cat_edges.entry(p.clone()).or_default().insert(c.name.clone());
        }
    }
    let mut cats = BTreeMap::new();
    for c in &doc.categories {
        let mut seen = BTreeSet::from([c.name.clone()]);
        let mut queue = VecDeque::from([c.name.clone()]);
        while let Some(n) = queue.pop_front() {
            for m in cat_edges.get(&n).into_iter().flatten() {
                if seen.insert(m.clone()) {
                    queue.push_back(m.clone());
                }
            }
        }
        cats.insert(c.name.clone(), seen);
    }
    (values, cats)
}

struct Oracle {
    values: BTreeMap<(String, String), BTreeSet<String>>,
    cats: BTreeMap<String, BTreeSet<String>>,
}

impl Oracle {
    /// Per-image truth table: `None` when the image is outside some universe,
    /// otherwise one membership bit per bound value and the category.
    fn row(&self, item: &FashionItem, values: &[BoundValue], category: &str) -> Option<Vec<bool>> {
        let mut row = Vec::new();
        for v in values {
            let labels = item.values.get(&v.attribute).filter(|s| !s.is_empty())?;
            let accepted = &self.values[&(v.attribute.clone(), v.value.clone())];
            row.push(labels.iter().any(|l| accepted.contains(l)));
        }
        row.push(self.cats[category].contains(&item.category));
        Some(row)
    }

    fn sets(&self, items: &[FashionItem], values: &[BoundValue], category: &str) -> (BTreeSet<String>, BTreeSet<String>, BTreeSet<String>) {
        let mut pos = BTreeSet::new();
        let mut neg_terms = BTreeSet::new();
        let mut neg_complement = BTreeSet::new();
        for item in items {
            let Some(row) = self.row(item, values, category) else { continue };
            // union over every truth-table term with at least one negative
            let all = row.iter().all(|b| *b);
            for mask in 1u32..(1 << row.len()) {
                let matches = row.iter().enumerate().all(|(k, b)| *b == (mask & (1 << k) == 0));
                if matches {
                    neg_terms.insert(item.image_id.clone());
                }
            }
            if all {
                pos.insert(item.image_id.clone());
            } else {
                neg_complement.insert(item.image_id.clone());
            }
        }
        (pos, neg_terms, neg_complement)
    }
}

fn random_small_catalog(rng: &mut ChaCha8Rng, taxonomy: &Taxonomy) -> Vec<FashionItem> {
    const CATS: [&str; 9] = ["shirt", "t-shirt", "blouse", "pants", "sweatpants", "jogger pants", "lounge pants", "dress", "a-line dress"];
    const COLORS: [&str; 7] = ["blue", "light blue", "sky blue", "dark blue", "navy blue", "red", "white"];
    const PATTERNS: [&str; 3] = ["solid", "stripes", "floral print"];
    const FITS: [&str; 3] = ["relaxed fit", "oversized", "slim fit"];
    let n = rng.random_range(1..=20);
    (0..n)
        .map(|i| {
            let mut values: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
            for (attr, pool) in [("color", &COLORS[..]), ("pattern", &PATTERNS[..]), ("fit type", &FITS[..])] {
                if rng.random_bool(0.7) {
                    let k = rng.random_range(1..=2);
                    values.insert(attr.into(), (0..k).map(|_| pool.choose(rng).unwrap().to_string()).collect());
                }
            }
            let category = CATS.choose(rng).unwrap().to_string();
            assert!(taxonomy.category(&category).is_ok());
            FashionItem {
                image_id: format!("i{i:02}"),
                category,
                values,
                has_person: false,
                piece_count: 1,
                image_ref: None,
            }
        })
        .collect()
}

fn criterion_2() -> Outcome {
    let doc = TaxonomyDocument::from_json(vqagen::builtin::TAXONOMY).unwrap();
    let taxonomy = Taxonomy::from_document(&doc).unwrap();
    let (values, cats) = oracle_closure(&doc);
    let oracle = Oracle { values, cats };
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    let mut checks = 0usize;
    let mut mismatches = Vec::new();
    for round in 0..500 {
        let items = random_small_catalog(&mut rng, &taxonomy);
        let index: ValueIndex = prepare_index(&items, &taxonomy);
        let observed: Vec<BoundValue> = index
            .observed
            .iter()
            .flat_map(|(a, vs)| vs.iter().map(move |v| BoundValue::new(a.clone(), v.clone())))
            .collect();
        let mut queries: Vec<Vec<BoundValue>> = observed.iter().map(|v| vec![v.clone()]).collect();
        for (i, a) in observed.iter().enumerate() {
            for b in &observed[i + 1..] {
                if a.attribute != b.attribute {
                    queries.push(vec![a.clone(), b.clone()]);
                }
            }
        }
        for category in &index.categories {
            for q in &queries {
                let (pos, neg_terms, neg_complement) = oracle.sets(&items, q, category);
                let got = if q.len() == 1 {
                    index.combine(&q[0], category)
                } else {
                    index.combine_multi(q, category)
                }
                .map_err(|e| e.to_string())?;
                let got_pos: BTreeSet<String> = index.ids(&got.pos).into_iter().collect();
                let got_neg: BTreeSet<String> = index.ids(&got.neg).into_iter().collect();
                checks += 1;
                if got_pos != pos || got_neg != neg_terms || neg_terms != neg_complement {
                    mismatches.push(format!("round {round}: {q:?} | {category}"));
                }
                if q.len() == 1 {
                    let multi = index.combine_multi(q, category).map_err(|e| e.to_string())?;
                    if multi != got {
                        mismatches.push(format!("round {round}: combine_multi != combine for {q:?} | {category}"));
                    }
                }
            }
        }
    }
    ensure!(mismatches.is_empty(), "{} mismatches, first: {}", mismatches.len(), mismatches[0]);
    Ok(format!(
        "500 random catalogs, {checks} combinations: 0 mismatches against truth-table and complement oracles"
    ))
}

// ---------------------------------------------------------------------------
// 3. Determinism across worker counts

/// Digest listing fingerprint for the seeded 1,000-item catalog, frozen from
/// a reference run.
const GOLDEN_FINGERPRINT: &str = "4ec07a6199e34ef3f29210ecfc789f41ba56f35209f06fb00a79ca850beb5c8c";

fn run_generate(catalog: &Path, out: &Path, workers: usize) -> Result<RunManifest, String> {
    let status = Command::new(env!("CARGO_BIN_EXE_vqagen"))
        .args(["generate", "--seed", "11", "--workers", &workers.to_string(), "--catalog"])
        .arg(catalog)
        .arg("--out")
        .arg(out)
        .env("RUST_LOG", "warn")
        .status()
        .map_err(|e| e.to_string())?;
    ensure!(status.success(), "vqagen generate --workers {workers} exited with {status}");
    output::read_manifest(out).map_err(|e| e.to_string())
}

fn shard_digests(m: &RunManifest) -> Vec<(String, String)> {
    m.outputs.iter().map(|d| (d.path.clone(), d.sha256.clone())).collect()
}

fn criterion_3(f: &Fixture) -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let catalog = dir.path().join("catalog.jsonl");
    std::fs::write(&catalog, &f.catalog).map_err(|e| e.to_string())?;
    let one = run_generate(&catalog, &dir.path().join("w1"), 1)?;
    let eight = run_generate(&catalog, &dir.path().join("w8"), 8)?;
    let (a, b) = (shard_digests(&one), shard_digests(&eight));
    ensure!(a == b, "digests differ between --workers 1 and --workers 8");
    for d in &one.outputs {
        let bytes = std::fs::read(dir.path().join("w1").join(&d.path)).map_err(|e| e.to_string())?;
        ensure!(vqagen::keyed::sha256_hex(&bytes) == d.sha256, "manifest digest of {} is stale", d.path);
    }
    let listing: String = a.iter().map(|(p, h)| format!("{p} {h}\n")).collect();
    let fingerprint = vqagen::keyed::sha256_hex(listing.as_bytes());
    ensure!(fingerprint == GOLDEN_FINGERPRINT, "output fingerprint {fingerprint} differs from the frozen build");
    let shards = a.iter().filter(|(p, _)| p.starts_with("triplets/")).count();
    Ok(format!(
        "{shards} shards + {} documents byte-identical for --workers 1 and 8; fingerprint {} matches frozen value",
        a.len() - shards,
        &fingerprint[..12]
    ))
}

// ---------------------------------------------------------------------------
// 4. Tier proportions

fn criterion_4(f: &Fixture) -> Outcome {
    let weights = &f.config.tier_proportions;
    let mut lines = Vec::new();
    for split in Split::ALL {
        let mut realized: BTreeMap<u8, usize> = BTreeMap::new();
        let mut per_question: BTreeMap<(u8, String), usize> = BTreeMap::new();
        for t in f.bundle.split(split).iter().filter(|t| t.answer_type == AnswerType::Binary && t.answer == "yes") {
            let tier = t.difficulty_tier.unwrap();
            *realized.entry(tier).or_default() += 1;
            let combo = t.qid.rsplitn(3, '/').nth(2).unwrap().to_string();
            *per_question.entry((tier, combo)).or_default() += 1;
        }
        let plans: Vec<_> = f.bundle.stats.tier_plan.iter().filter(|p| p.split == split).collect();
        let anchor = plans.iter().filter(|p| p.capacity > 0).max_by(|a, b| a.weight.total_cmp(&b.weight)).unwrap();
        let anchor_pairs = realized.get(&anchor.tier).copied().unwrap_or(0);

        // anchor tier: every question gets min(quota, capacity), recomputed
        // from an independent index over this split's items
        let assignment = split_images(f.items.iter().map(|i| i.image_id.as_str()), f.config.split_ratio, f.config.master_seed);
        let mine: Vec<FashionItem> = f.items.iter().filter(|i| assignment[&i.image_id] == split).cloned().collect();
        let index = prepare_index(&mine, &f.taxonomy);
        let quota = f.config.per_question_quota;
        let mut anchor_off = 0;
        for ((tier, _), n) in &per_question {
            ensure!(*tier != anchor.tier || *n <= quota, "anchor question exceeds quota");
        }
        for t in f.bundle.split(split).iter().filter(|t| t.difficulty_tier == Some(anchor.tier) && t.answer == "yes") {
            let values = &t.binding.attr_values;
            let category = &t.binding.category.as_ref().unwrap().name;
            let cap = index.combine_multi(values, category).map_err(|e| e.to_string())?;
            let want = quota.min(cap.capacity());
            let prefix = t.qid.rsplitn(3, '/').nth(2).unwrap();
            let got = per_question[&(anchor.tier, prefix.to_string())];
            anchor_off += usize::from(got != want);
        }
        ensure!(anchor_off == 0, "{split}: {anchor_off} anchor questions off their quota");

        for p in &plans {
            let got = realized.get(&p.tier).copied().unwrap_or(0);
            let requested = (anchor_pairs as f64 * weights[&p.tier] / weights[&anchor.tier]).round() as usize;
            let expected = requested.min(p.capacity);
            ensure!(
                got.abs_diff(expected) <= p.combinations.max(1),
                "{split} tier {}: realized {got} pairs, requested {expected} over {} combinations",
                p.tier,
                p.combinations
            );
            ensure!(got == p.allocated, "{split} tier {}: realized {got} != allocated {}", p.tier, p.allocated);
            lines.push(format!("{split} t{}={got}/{requested}", p.tier));
        }
    }
    Ok(format!("realized/requested pairs: {}", lines.join(", ")))
}

// ---------------------------------------------------------------------------
// 5. Split integrity

fn criterion_5(f: &Fixture) -> Outcome {
    let ids: Vec<String> = (0..20_000).map(|i| format!("image-{i:06}")).collect();
    let assignment = split_images(ids.iter().map(String::as_str), 0.816, 99);
    let train = assignment.values().filter(|s| **s == Split::Train).count();
    let frac = train as f64 / ids.len() as f64;
    let off = (frac - 0.816).abs();
    ensure!(off.le(&0.01), "train fraction {frac:.4}");
    let again = split_images(ids.iter().map(String::as_str), 0.816, 99);
    ensure!(again == assignment, "split is not reproducible");

    let train_images: BTreeSet<&str> = f.bundle.split(Split::Train).iter().map(|t| t.image_id.as_str()).collect();
    let val_images: BTreeSet<&str> = f.bundle.split(Split::Val).iter().map(|t| t.image_id.as_str()).collect();
    let overlap = train_images.intersection(&val_images).count();
    ensure!(overlap == 0, "{overlap} images in both splits");
    let mislabeled = f.bundle.all().filter(|t| t.qid.split('/').next() != Some(t.split.as_str())).count();
    ensure!(mislabeled == 0, "{mislabeled} triplets in the wrong split");
    Ok(format!(
        "train fraction {frac:.4} over 20000 ids; 0 overlap between {} train and {} val images",
        train_images.len(),
        val_images.len()
    ))
}

// ---------------------------------------------------------------------------
// 6. Grammar

fn template(id: &str, answer_type: AnswerType, qt: &str, pattern: &str, arity: u8, perm: u8) -> QuestionTemplate {
    QuestionTemplate {
        template_id: id.into(),
        answer_type,
        question_type: qt.into(),
        pattern: Pattern::parse(pattern).unwrap(),
        arity,
        permutation_id: perm,
        attributes: vec![],
        exclude_attributes: vec![],
        context_values: arity > 0 && answer_type == AnswerType::NonBinary,
        noise: false,
    }
}

fn reference_binding(taxonomy: &Taxonomy, category: &str, values: &[(&str, &str)], attribute: Option<&str>, location: Option<LocationPhrase>) -> Binding {
    let c = taxonomy.category(category).unwrap();
    Binding {
        category: Some(BoundCategory::from(c)),
        attr_values: values.iter().map(|(a, v)| BoundValue::new(*a, *v)).collect(),
        attribute_name: attribute.map(String::from),
        location,
        agreement: agreement_forms(1, c.is_paired, &c.singular_form).unwrap(),
        part: None,
        conjunction: None,
    }
}

fn reference_rows(f: &Fixture) -> Result<usize, String> {
    let tax = &f.taxonomy;
    let top = Some(LocationPhrase::OnTheTop);
    let rows: [(QuestionTemplate, &str, Binding, &str); 5] = [
        (
            template("t1", AnswerType::Binary, "is/are", "is this a {ATTR1} {CATEGORY} with {ATTR2}?", 2, 2),
            "is.2.2",
            reference_binding(tax, "shirt", &[("color", "white"), ("sleeve length type", "long sleeves")], None, None),
            "is this a white shirt with long sleeves?",
        ),
        (
            template("t2", AnswerType::Binary, "is/are", "on the top a {CATEGORY} with {ATTR1} and in {ATTR2} design?", 2, 4),
            "is.2.4.loc",
            reference_binding(tax, "sweater", &[("pattern", "floral print"), ("neckline type", "v neck")], None, top),
            "on the top a sweater with floral print and in v neck design?",
        ),
        (
            template("t3", AnswerType::NonBinary, "what {attribute}", "what {ATTRIBUTE_NAME} is this {CATEGORY} the person wearing {LOCATION}?", 0, 0),
            "nb.generic.what",
            reference_binding(tax, "a-line dress", &[], Some("color"), top),
            "what color is this a-line dress the person wearing on the top?",
        ),
        (
            template("t4", AnswerType::NonBinary, "what {attribute}", "what {ATTRIBUTE_NAME} is the one {LOCATION}?", 0, 0),
            "nb.generic.one",
            reference_binding(tax, "shirt", &[], Some("color"), top),
            "what color is the one on the top?",
        ),
        (
            template("t5", AnswerType::NonBinary, "when", "when is a good time to wear this {ATTR1} {CATEGORY}?", 1, 0),
            "nb.occasion.context",
            reference_binding(tax, "dress", &[("color", "yellow")], Some("occasion"), None),
            "when is a good time to wear this yellow dress?",
        ),
    ];
    for (literal, shipped_id, binding, want) in &rows {
        let got = render(literal, binding).map_err(|e| e.to_string())?.0;
        ensure!(got == *want, "reference pattern `{}` rendered `{got}`", literal.pattern);
        let shipped = f.library.get(shipped_id).ok_or(format!("no shipped template {shipped_id}"))?;
        let got = render(shipped, binding).map_err(|e| e.to_string())?.0;
        ensure!(got == *want, "shipped `{shipped_id}` rendered `{got}`");
    }
    Ok(rows.len())
}

/// Agreement checks on rendered text for an un-noised question.
fn agreement_problems(text: &str, binding: &Binding, template: &QuestionTemplate) -> Option<String> {
    let words: Vec<&str> = text.trim_end_matches('?').split(' ').collect();
    let plural = binding.agreement.noun_form == vqagen::taxonomy::Number::Plural;
    let has = |w: &str| words.contains(&w);
    if template.pattern.has_slot(Slot::Demonstrative) {
        let (want, bad) = if plural { ("these", "this") } else { ("this", "these") };
        if has(bad) || !has(want) {
            return Some(format!("demonstrative: `{text}`"));
        }
    }
    if template.pattern.has_slot(Slot::Copula) || template.question_type == "is/are" {
        let bad = if plural { "is" } else { "are" };
        let literal = template.pattern.pieces().iter().any(|p| p.token == vqagen::template::Token::Word(bad.into()));
        if has(bad) && !literal {
            return Some(format!("copula: `{text}`"));
        }
    }
    let pairs_of = text.contains("pairs of");
    let pair_of = text.contains("pair of") && !pairs_of;
    if plural && pair_of || !plural && pairs_of {
        return Some(format!("pair phrase: `{text}`"));
    }
    if let Some(c) = &binding.category {
        let noun = if plural { &c.plural } else { &c.singular };
        if template.pattern.has_slot(Slot::Category) && !text.contains(noun.as_str()) {
            return Some(format!("noun form `{noun}`: `{text}`"));
        }
    }
    for (i, w) in words.iter().enumerate() {
        if *w == "a" || *w == "an" {
            let Some(next) = words.get(i + 1) else { return Some(format!("dangling article: `{text}`")) };
            let vowel = next.starts_with(['a', 'e', 'i', 'o', 'u']);
            if vowel != (*w == "an") {
                return Some(format!("article: `{text}`"));
            }
        }
    }
    if plural && template.pattern.has_slot(Slot::Article) && words.iter().zip(words.iter().skip(1)).any(|(a, b)| (*a == "a" || *a == "an") && *b != "good") {
        return Some(format!("article with plural: `{text}`"));
    }
    None
}

fn criterion_6(f: &Fixture) -> Outcome {
    let rows = reference_rows(f)?;
    let tax = &f.taxonomy;
    let templates: Vec<&QuestionTemplate> = f.library.iter().collect();
    let categories: Vec<_> = tax.categories().collect();
    let policy = DiversifyPolicy {
        drop_phrase_prob: 0.5,
        conjunction_swap_prob: 0.5,
        truncate_prob: 0.5,
        agreement_noise_prob: 0.3,
        rng_seed: 5,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut rendered, mut noised) = (0usize, 0usize);
    let mut attempts = 0;
    while rendered < 10_000 {
        attempts += 1;
        ensure!(attempts < 1_000_000, "could not draw enough bindings");
        let t = *templates.choose(&mut rng).unwrap();
        let c = *categories.choose(&mut rng).unwrap();
        let applicable: Vec<_> = tax
            .attributes()
            .filter(|a| a.applies_to(c.super_category) && t.accepts_attribute(&a.name))
            .collect();
        let asked = applicable.choose(&mut rng).copied();
        if t.answer_type == AnswerType::NonBinary && asked.is_none() {
            continue;
        }
        let mut values = Vec::new();
        let mut pool: Vec<_> = applicable.iter().filter(|a| Some(a.name.as_str()) != asked.map(|a| a.name.as_str()) || t.answer_type == AnswerType::Binary).collect();
        while values.len() < t.arity as usize && !pool.is_empty() {
            let a = pool.remove(rng.random_range(0..pool.len()));
            values.push(BoundValue::new(a.name.clone(), a.value_names.choose(&mut rng).unwrap().clone()));
        }
        if values.len() < t.arity as usize {
            continue;
        }
        let pieces = *[1u32, 1, 2, 3].choose(&mut rng).unwrap();
        let location = c.location_for(rng.random_bool(0.5));
        if location.is_none() && t.pattern.slot_is_mandatory(Slot::Location) {
            continue;
        }
        let binding = Binding {
            category: Some(BoundCategory::from(c)),
            attr_values: values,
            attribute_name: asked.map(|a| a.name.clone()),
            location,
            agreement: agreement_forms(pieces, c.is_paired, &c.singular_form).unwrap(),
            part: asked.and_then(|a| a.name.strip_prefix("number of ").map(String::from)),
            conjunction: None,
        };
        let variants = diversify(t, &policy, &format!("fuzz-{attempts}"));
        let v = variants.choose(&mut rng).unwrap();
        let text = render(v, &binding).map_err(|e| format!("{}: {e}", v.template_id))?.0;
        rendered += 1;
        ensure!(!text.contains("  "), "double space: `{text}`");
        ensure!(text.trim() == text && !text.is_empty(), "untrimmed: `{text}`");
        ensure!(text.ends_with('?') && text.matches('?').count() == 1, "terminal punctuation: `{text}`");
        ensure!(!text.contains(" ?"), "space before `?`: `{text}`");
        ensure!(text == text.to_lowercase(), "not lowercase: `{text}`");
        if v.answer_type == AnswerType::NonBinary {
            let first = text.split(' ').next().unwrap();
            ensure!(["what", "why", "when", "how"].contains(&first), "non-binary opener: `{text}`");
        }
        if v.noise {
            noised += 1;
            let flipped = Binding {
                agreement: binding.agreement.flipped(),
                ..binding.clone()
            };
            if let Some(p) = agreement_problems(&text, &flipped, v) {
                return Err(format!("noised variant {} not flipped consistently: {p}", v.template_id));
            }
        } else if let Some(p) = agreement_problems(&text, &binding, v) {
            return Err(format!("{} (pieces {pieces}): {p}", v.template_id));
        }
    }
    Ok(format!(
        "{rendered} questions fuzz-checked ({noised} noise-flagged checked as flipped); {rows} reference sentences byte-exact"
    ))
}

// ---------------------------------------------------------------------------
// 7. Algorithm fixture

fn toy_item(id: &str, category: &str, color: &str) -> FashionItem {
    FashionItem {
        image_id: id.into(),
        category: category.into(),
        values: BTreeMap::from([("color".to_string(), BTreeSet::from([color.to_string()]))]),
        has_person: false,
        piece_count: 1,
        image_ref: None,
    }
}

fn criterion_7() -> Outcome {
    let taxonomy = Taxonomy::builtin();
    let items = [
        toy_item("A", "shirt", "red"),
        toy_item("B", "shirt", "blue"),
        toy_item("C", "dress", "red"),
        toy_item("D", "dress", "blue"),
    ];
    let index = prepare_index(&items, &taxonomy);
    let red = BoundValue::new("color", "red");
    let combo = index.combine(&red, "shirt").map_err(|e| e.to_string())?;
    let pos = index.ids(&combo.pos);
    let neg = index.ids(&combo.neg);
    let n_red = index.ids(&index.n_value[&("color".to_string(), "red".to_string())]);
    ensure!(pos == ["A"], "pos = {pos:?}");
    ensure!(neg == ["B", "C", "D"], "neg = {neg:?}");
    ensure!(n_red == ["B", "D"], "N_value[red] = {n_red:?}");
    Ok("combine(red, shirt) = pos {A}, neg {B, C, D}; N_value[red] = {B, D}".into())
}

// ---------------------------------------------------------------------------
// 8. Mini subsampling

fn criterion_8(f: &Fixture) -> Outcome {
    let quotas: SubsampleQuotas = "train:non_binary=110,train:binary=90".parse().map_err(|e: vqagen::Error| e.to_string())?;
    let mini = subsample(&f.bundle, &quotas, 3);
    let train = mini.split(Split::Train);
    let nb = train.iter().filter(|t| t.answer_type == AnswerType::NonBinary).count();
    let b = train.iter().filter(|t| t.answer_type == AnswerType::Binary).count();
    ensure!(nb == 110 && b == 90, "train strata {nb}:{b}");
    let unbalanced = yes_no_by_question(train).values().filter(|(y, n)| y != n).count();
    ensure!(unbalanced == 0, "{unbalanced} questions lost their pairing");
    ensure!(mini.split(Split::Val) == f.bundle.split(Split::Val), "unlisted stratum changed");
    let again = subsample(&f.bundle, &quotas, 3);
    ensure!(again == mini, "subsample not deterministic");
    let parent: BTreeSet<&str> = f.bundle.all().map(|t| t.qid.as_str()).collect();
    ensure!(train.iter().all(|t| parent.contains(t.qid.as_str())), "subsample invented triplets");
    let full = subsample(&f.bundle, &SubsampleQuotas::default(), 3);
    ensure!(full.triplets == f.bundle.triplets, "full quota is not the identity");
    Ok(format!("train 110 non-binary : 90 binary exact; {} binary questions keep yes == no", yes_no_by_question(train).len()))
}

fn main() {
    let f = fixture();
    let criteria: [Criterion; 8] = [
        ("1 balance invariant", Box::new(|| criterion_1(&f))),
        ("2 set-algebra oracle", Box::new(criterion_2)),
        ("3 determinism across workers", Box::new(|| criterion_3(&f))),
        ("4 tier proportions", Box::new(|| criterion_4(&f))),
        ("5 split integrity", Box::new(|| criterion_5(&f))),
        ("6 grammar properties", Box::new(|| criterion_6(&f))),
        ("7 algorithm fixture", Box::new(criterion_7)),
        ("8 mini subsampling", Box::new(|| criterion_8(&f))),
    ];
    let mut failed = 0;
    for (name, check) in &criteria {
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(check))
            .unwrap_or_else(|p| Err(format!("panicked: {:?}", p.downcast_ref::<String>().map(String::as_str).or(p.downcast_ref::<&str>().copied()))));
        match outcome {
            Ok(detail) => println!("PASS criterion {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
