#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vqagen::ingest::FashionItem;
use vqagen::taxonomy::Taxonomy;

/// Canonical items over the whole taxonomy.
pub fn random_items(taxonomy: &Taxonomy, n: usize, seed: u64) -> Vec<FashionItem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let categories: Vec<_> = taxonomy.categories().collect();
    (0..n)
        .map(|i| {
            let cat = categories.choose(&mut rng).unwrap();
            let mut values: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
            for a in taxonomy.attributes().filter(|a| a.applies_to(cat.super_category)) {
                if rng.random_bool(0.6) {
                    let k = if a.name == "color" { rng.random_range(1..=2) } else { 1 };
                    let vs = (0..k).map(|_| a.value_names.choose(&mut rng).unwrap().clone()).collect();
                    values.insert(a.name.clone(), vs);
                }
            }
            FashionItem {
                image_id: format!("img-{i:04}"),
                category: cat.name.clone(),
                values,
                has_person: rng.random_bool(0.5),
                piece_count: *[1u32, 1, 2].choose(&mut rng).unwrap(),
                image_ref: None,
            }
        })
        .collect()
}

pub fn item(id: &str, category: &str, values: &[(&str, &str)]) -> FashionItem {
    let mut map: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for (a, v) in values {
        map.entry(a.to_string()).or_default().insert(v.to_string());
    }
    FashionItem {
        image_id: id.into(),
        category: category.into(),
        values: map,
        has_person: false,
        piece_count: 1,
        image_ref: None,
    }
}

/// Small catalogs drawn from value and category families with synonyms.
pub fn synonym_items(rng: &mut ChaCha8Rng) -> Vec<FashionItem> {
    const CATS: [&str; 8] = ["shirt", "t-shirt", "pants", "sweatpants", "jogger pants", "lounge pants", "dress", "a-line dress"];
    const COLORS: [&str; 6] = ["blue", "light blue", "sky blue", "navy blue", "red", "white"];
    const PATTERNS: [&str; 3] = ["solid", "stripes", "floral print"];
    let n = rng.random_range(1..=16);
    (0..n)
        .map(|i| {
            let mut values: Vec<(&str, &str)> = Vec::new();
            if rng.random_bool(0.8) {
                values.push(("color", COLORS.choose(rng).unwrap()));
                if rng.random_bool(0.3) {
                    values.push(("color", COLORS.choose(rng).unwrap()));
                }
            }
            if rng.random_bool(0.6) {
                values.push(("pattern", PATTERNS.choose(rng).unwrap()));
            }
            item(&format!("i{i:02}"), CATS.choose(rng).unwrap(), &values)
        })
        .collect()
}
