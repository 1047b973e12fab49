//! Catalog ingestion: raw product records to canonical [`FashionItem`]s.
//!
//! Raw records carry attribute keys under many spellings, values that mix
//! several attributes ("black/stripes") and vague vendor terms ("olive
//! night"). [`NormalizationRules`] resolve all three. Values no rule can
//! place are dropped and counted, items whose category cannot be resolved
//! are rejected with a reason code. Rejection is a data outcome, not an error.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::BufRead;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::taxonomy::{Diagnostic, SuperCategory, Taxonomy};

pub const RULES_SCHEMA_VERSION: u32 = 1;
pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(String),
    Many(Vec<String>),
}

impl OneOrMany {
    pub fn iter(&self) -> impl Iterator<Item = &String> {
        match self {
            OneOrMany::One(s) => std::slice::from_ref(s).iter(),
            OneOrMany::Many(v) => v.iter(),
        }
    }
}

fn default_piece_count() -> u32 {
    1
}

/// One catalog record as it arrives on disk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawItem {
    pub item_id: String,
    pub image_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
    /// Category path or alternatives, most general first.
    pub category: OneOrMany,
    #[serde(default)]
    pub attributes: BTreeMap<String, OneOrMany>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub has_person: Option<bool>,
    #[serde(default = "default_piece_count")]
    pub piece_count: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FashionItem {
    pub image_id: String,
    pub category: String,
    pub values: BTreeMap<String, BTreeSet<String>>,
    pub has_person: bool,
    pub piece_count: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
}

impl FashionItem {
    pub fn has_value(&self, attribute: &str, value: &str) -> bool {
        self.values.get(attribute).is_some_and(|vs| vs.contains(value))
    }

    /// Inverse of parsing under identity rules.
    pub fn to_raw(&self, item_id: impl Into<String>) -> RawItem {
        RawItem {
            item_id: item_id.into(),
            image_id: self.image_id.clone(),
            image_ref: self.image_ref.clone(),
            category: OneOrMany::One(self.category.clone()),
            attributes: self
                .values
                .iter()
                .map(|(k, vs)| (k.clone(), OneOrMany::Many(vs.iter().cloned().collect())))
                .collect(),
            has_person: Some(self.has_person),
            piece_count: self.piece_count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRule {
    pub delimiter: String,
    /// Attribute for each delimited part, in order.
    pub targets: Vec<String>,
    /// Canonical attribute keys the rule applies to; empty means all.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub keys: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MappedValue {
    pub attribute: String,
    pub value: String,
}

fn default_has_person() -> BTreeMap<SuperCategory, bool> {
    SuperCategory::ALL
        .into_iter()
        .map(|s| (s, s != SuperCategory::Accessories))
        .collect()
}

fn rules_version() -> u32 {
    RULES_SCHEMA_VERSION
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalizationRules {
    #[serde(default = "rules_version")]
    pub schema_version: u32,
    /// Raw attribute key (case-insensitive) to canonical attribute.
    #[serde(default)]
    pub key_aliases: BTreeMap<String, String>,
    /// Raw category text (case-insensitive) to canonical category.
    #[serde(default)]
    pub category_aliases: BTreeMap<String, String>,
    #[serde(default)]
    pub split_rules: Vec<SplitRule>,
    /// Raw value (case-insensitive) to one or more canonical values.
    #[serde(default)]
    pub value_map: BTreeMap<String, Vec<MappedValue>>,
    /// Used when a record does not say whether a person is in the image.
    #[serde(default = "default_has_person")]
    pub default_has_person: BTreeMap<SuperCategory, bool>,
}

impl Default for NormalizationRules {
    fn default() -> Self {
        NormalizationRules {
            schema_version: RULES_SCHEMA_VERSION,
            key_aliases: BTreeMap::new(),
            category_aliases: BTreeMap::new(),
            split_rules: Vec::new(),
            value_map: BTreeMap::new(),
            default_has_person: default_has_person(),
        }
    }
}

impl NormalizationRules {
    pub fn from_json(text: &str) -> Result<Self> {
        let mut rules: Self = serde_json::from_str(text).map_err(|e| Error::json("normalization rules", e))?;
        if rules.schema_version != RULES_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                what: "normalization rules",
                found: rules.schema_version,
                expected: RULES_SCHEMA_VERSION,
            });
        }
        rules.key_aliases = rules.key_aliases.into_iter().map(|(k, v)| (normalize_text(&k), v)).collect();
        rules.category_aliases = rules
            .category_aliases
            .into_iter()
            .map(|(k, v)| (normalize_text(&k), v))
            .collect();
        rules.value_map = rules.value_map.into_iter().map(|(k, v)| (normalize_text(&k), v)).collect();
        Ok(rules)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn builtin() -> Self {
        Self::from_json(crate::builtin::RULES).expect("shipped rules are valid")
    }

    /// Every rule target must exist in the taxonomy.
    pub fn validate(&self, taxonomy: &Taxonomy) -> Vec<Diagnostic> {
        let mut out = Vec::new();
        let mut err = |code: &str, msg: String| out.push(Diagnostic::error("rules", code, msg));
        for (raw, attr) in &self.key_aliases {
            if taxonomy.attribute(attr).is_err() {
                err("dangling-reference", format!("key alias `{raw}` targets unknown attribute `{attr}`"));
            }
        }
        for (raw, cat) in &self.category_aliases {
            if taxonomy.category(cat).is_err() {
                err("dangling-reference", format!("category alias `{raw}` targets unknown category `{cat}`"));
            }
        }
        for (i, rule) in self.split_rules.iter().enumerate() {
            if rule.delimiter.is_empty() {
                err("schema", format!("split rule #{i} has an empty delimiter"));
            }
            if rule.targets.is_empty() {
                err("schema", format!("split rule #{i} has no targets"));
            }
            for a in rule.targets.iter().chain(&rule.keys) {
                if taxonomy.attribute(a).is_err() {
                    err("dangling-reference", format!("split rule #{i} references unknown attribute `{a}`"));
                }
            }
        }
        for (raw, targets) in &self.value_map {
            if targets.is_empty() {
                err("schema", format!("value map entry `{raw}` has no targets"));
            }
            for t in targets {
                if !taxonomy.has_value(&t.attribute, &t.value) {
                    err(
                        "dangling-reference",
                        format!("value map entry `{raw}` targets unregistered value `{}`/`{}`", t.attribute, t.value),
                    );
                }
            }
        }
        out
    }
}

/// Lowercase, trim and collapse internal whitespace.
pub fn normalize_text(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    Malformed,
    UnknownCategory,
    Duplicate,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::Malformed => "malformed",
            RejectReason::UnknownCategory => "unknown-category",
            RejectReason::Duplicate => "duplicate",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectRecord {
    pub line: usize,
    pub item_id: Option<String>,
    pub image_id: Option<String>,
    pub reason: RejectReason,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DropReason {
    UnknownKey,
    UnmappedValue,
    InapplicableAttribute,
}

impl DropReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DropReason::UnknownKey => "unknown-key",
            DropReason::UnmappedValue => "unmapped-value",
            DropReason::InapplicableAttribute => "inapplicable-attribute",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedValue {
    pub key: String,
    pub value: String,
    pub reason: DropReason,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedItem {
    pub item: FashionItem,
    pub dropped: Vec<DroppedValue>,
    pub has_person_defaulted: bool,
}

/// Canonicalize one raw record.
pub fn parse_item(
    raw: &RawItem,
    rules: &NormalizationRules,
    taxonomy: &Taxonomy,
) -> std::result::Result<ParsedItem, RejectRecord> {
    let reject = |reason, detail: String| RejectRecord {
        line: 0,
        item_id: Some(raw.item_id.clone()),
        image_id: Some(raw.image_id.clone()),
        reason,
        detail,
    };
    if raw.item_id.trim().is_empty() || raw.image_id.trim().is_empty() {
        return Err(reject(RejectReason::Malformed, "empty item_id or image_id".into()));
    }
    if raw.piece_count < 1 {
        return Err(reject(RejectReason::Malformed, "piece_count must be >= 1".into()));
    }

    // the most specific resolvable category wins; ties go to the later entry
    let category = raw
        .category
        .iter()
        .filter_map(|text| resolve_category(text, rules, taxonomy))
        .enumerate()
        .max_by_key(|(i, c)| (taxonomy.category_depth(c), *i))
        .map(|(_, c)| c);
    let Some(category) = category else {
        let shown: Vec<&str> = raw.category.iter().map(String::as_str).collect();
        return Err(reject(RejectReason::UnknownCategory, format!("no registered category in {shown:?}")));
    };
    let super_category = taxonomy.category(&category).expect("resolved").super_category;

    let mut values: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let mut dropped = Vec::new();
    for (raw_key, raw_values) in &raw.attributes {
        let key = normalize_text(raw_key);
        let attribute = rules
            .key_aliases
            .get(&key)
            .cloned()
            .or_else(|| taxonomy.attribute(&key).ok().map(|a| a.name.clone()));
        for raw_value in raw_values.iter() {
            let Some(attribute) = &attribute else {
                dropped.push(DroppedValue {
                    key: raw_key.clone(),
                    value: raw_value.clone(),
                    reason: DropReason::UnknownKey,
                });
                continue;
            };
            let (resolved, unresolved) = resolve_value(attribute, raw_value, rules, taxonomy);
            for part in unresolved {
                dropped.push(DroppedValue {
                    key: raw_key.clone(),
                    value: part,
                    reason: DropReason::UnmappedValue,
                });
            }
            for mv in resolved {
                let applicable = taxonomy
                    .attribute(&mv.attribute)
                    .map(|a| a.applies_to(super_category))
                    .unwrap_or(false);
                if applicable {
                    values.entry(mv.attribute).or_default().insert(mv.value);
                } else {
                    dropped.push(DroppedValue {
                        key: raw_key.clone(),
                        value: format!("{}={}", mv.attribute, mv.value),
                        reason: DropReason::InapplicableAttribute,
                    });
                }
            }
        }
    }
    for d in &dropped {
        tracing::info!(image_id = %raw.image_id, key = %d.key, value = %d.value, reason = d.reason.as_str(), "dropped value");
    }

    let (has_person, has_person_defaulted) = match raw.has_person {
        Some(flag) => (flag, false),
        None => {
            let flag = rules.default_has_person.get(&super_category).copied().unwrap_or(true);
            tracing::debug!(image_id = %raw.image_id, has_person = flag, "has_person defaulted");
            (flag, true)
        }
    };

    Ok(ParsedItem {
        item: FashionItem {
            image_id: raw.image_id.clone(),
            category,
            values,
            has_person,
            piece_count: raw.piece_count,
            image_ref: raw.image_ref.clone(),
        },
        dropped,
        has_person_defaulted,
    })
}

fn resolve_category(text: &str, rules: &NormalizationRules, taxonomy: &Taxonomy) -> Option<String> {
    let key = normalize_text(text);
    if let Some(c) = rules.category_aliases.get(&key) {
        return Some(c.clone());
    }
    taxonomy.category(&key).ok().map(|c| c.name.clone())
}

/// Split, then map, then exact lookup. Returns resolved values and the
/// parts nothing could place.
fn resolve_value(
    attribute: &str,
    raw_value: &str,
    rules: &NormalizationRules,
    taxonomy: &Taxonomy,
) -> (Vec<MappedValue>, Vec<String>) {
    let value = normalize_text(raw_value);
    let rule = rules.split_rules.iter().find(|r| {
        !r.delimiter.is_empty()
            && value.contains(r.delimiter.as_str())
            && (r.keys.is_empty() || r.keys.iter().any(|k| k == attribute))
    });
    let parts: Vec<(String, Vec<&str>)> = match rule {
        Some(rule) => value
            .split(rule.delimiter.as_str())
            .map(normalize_text)
            .filter(|p| !p.is_empty())
            .enumerate()
            .map(|(i, part)| {
                let mut candidates: Vec<&str> = Vec::new();
                if let Some(t) = rule.targets.get(i) {
                    candidates.push(t);
                }
                candidates.extend(rule.targets.iter().map(String::as_str));
                candidates.push(attribute);
                (part, candidates)
            })
            .collect(),
        None => vec![(value, vec![attribute])],
    };

    let mut resolved = Vec::new();
    let mut unresolved = Vec::new();
    for (part, candidates) in parts {
        if let Some(mapped) = rules.value_map.get(&part) {
            resolved.extend(mapped.iter().cloned());
        } else if let Some(attr) = candidates.iter().find(|a| taxonomy.has_value(a, &part)) {
            resolved.push(MappedValue {
                attribute: attr.to_string(),
                value: part,
            });
        } else {
            unresolved.push(part);
        }
    }
    (resolved, unresolved)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub schema_version: u32,
    pub records_read: u64,
    pub accepted: u64,
    pub rejected: u64,
    pub rejected_by_reason: BTreeMap<String, u64>,
    pub dropped_values: u64,
    pub dropped_by_reason: BTreeMap<String, u64>,
    pub has_person_defaulted: u64,
    pub rejects: Vec<RejectRecord>,
}

/// Parse a line-delimited catalog. Blank lines are skipped; every other line
/// is one record. Output order equals input order.
pub fn ingest_catalog<R: BufRead>(
    reader: R,
    rules: &NormalizationRules,
    taxonomy: &Taxonomy,
) -> Result<(Vec<FashionItem>, IngestReport)> {
    let mut lines = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<catalog>", e))?;
        if !line.trim().is_empty() {
            lines.push((i + 1, line));
        }
    }

    let parsed: Vec<std::result::Result<ParsedItem, RejectRecord>> = lines
        .par_iter()
        .map(|(line_no, line)| {
            let raw: RawItem = serde_json::from_str(line).map_err(|e| RejectRecord {
                line: *line_no,
                item_id: None,
                image_id: None,
                reason: RejectReason::Malformed,
                detail: e.to_string(),
            })?;
            parse_item(&raw, rules, taxonomy).map_err(|mut r| {
                r.line = *line_no;
                r
            })
        })
        .collect();

    let mut report = IngestReport {
        schema_version: REPORT_SCHEMA_VERSION,
        ..Default::default()
    };
    let mut items = Vec::new();
    let mut seen = HashSet::new();
    for (outcome, (line_no, _)) in parsed.into_iter().zip(&lines) {
        report.records_read += 1;
        let outcome = outcome.and_then(|p| {
            if seen.insert(p.item.image_id.clone()) {
                Ok(p)
            } else {
                Err(RejectRecord {
                    line: *line_no,
                    item_id: None,
                    image_id: Some(p.item.image_id.clone()),
                    reason: RejectReason::Duplicate,
                    detail: "image_id already accepted".into(),
                })
            }
        });
        match outcome {
            Ok(p) => {
                report.accepted += 1;
                report.dropped_values += p.dropped.len() as u64;
                for d in &p.dropped {
                    *report.dropped_by_reason.entry(d.reason.as_str().into()).or_default() += 1;
                }
                report.has_person_defaulted += u64::from(p.has_person_defaulted);
                items.push(p.item);
            }
            Err(r) => {
                tracing::warn!(line = r.line, reason = r.reason.as_str(), detail = %r.detail, "rejected record");
                report.rejected += 1;
                *report.rejected_by_reason.entry(r.reason.as_str().into()).or_default() += 1;
                report.rejects.push(r);
            }
        }
    }
    Ok((items, report))
}

pub fn ingest_file(
    path: impl AsRef<Path>,
    rules: &NormalizationRules,
    taxonomy: &Taxonomy,
) -> Result<(Vec<FashionItem>, IngestReport)> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_catalog(std::io::BufReader::new(file), rules, taxonomy).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn taxonomy() -> Taxonomy {
        Taxonomy::builtin()
    }

    fn raw(image_id: &str, category: &str, attrs: &[(&str, &[&str])]) -> RawItem {
        RawItem {
            item_id: format!("item-{image_id}"),
            image_id: image_id.into(),
            image_ref: None,
            category: OneOrMany::One(category.into()),
            attributes: attrs
                .iter()
                .map(|(k, vs)| (k.to_string(), OneOrMany::Many(vs.iter().map(|s| s.to_string()).collect())))
                .collect(),
            has_person: Some(false),
            piece_count: 1,
        }
    }

    #[test]
    fn entangled_value_is_split_across_attributes() {
        let t = taxonomy();
        let rules = NormalizationRules::builtin();
        let p = parse_item(&raw("a", "shirt", &[("Product Color", &["Black/Stripes"])]), &rules, &t).unwrap();
        assert_eq!(p.item.values["color"], BTreeSet::from(["black".to_string()]));
        assert_eq!(p.item.values["pattern"], BTreeSet::from(["stripes".to_string()]));
        assert!(p.dropped.is_empty());
    }

    #[test]
    fn vague_value_is_mapped() {
        let t = taxonomy();
        let rules = NormalizationRules::builtin();
        let p = parse_item(&raw("a", "shirt", &[("Color Name", &["olive night"])]), &rules, &t).unwrap();
        assert_eq!(p.item.values["color"], BTreeSet::from(["olive green".to_string()]));
    }

    #[test]
    fn empty_attributes_pass_through() {
        let t = taxonomy();
        let p = parse_item(&raw("a", "dress", &[]), &NormalizationRules::default(), &t).unwrap();
        assert!(p.item.values.is_empty());
        assert_eq!(p.item.category, "dress");
    }

    #[test]
    fn unknown_category_rejects() {
        let t = taxonomy();
        let r = parse_item(&raw("a", "spaceship", &[]), &NormalizationRules::default(), &t).unwrap_err();
        assert_eq!(r.reason, RejectReason::UnknownCategory);
    }

    #[test]
    fn unresolvable_values_are_dropped_not_rejected() {
        let t = taxonomy();
        let p = parse_item(
            &raw(
                "a",
                "pants",
                &[("color", &["red", "plasma"]), ("warranty", &["2y"]), ("sleeve length type", &["long sleeves"])],
            ),
            &NormalizationRules::default(),
            &t,
        )
        .unwrap();
        assert_eq!(p.item.values.len(), 1);
        let reasons: Vec<_> = p.dropped.iter().map(|d| d.reason).collect();
        assert!(reasons.contains(&DropReason::UnmappedValue));
        assert!(reasons.contains(&DropReason::UnknownKey));
        assert!(reasons.contains(&DropReason::InapplicableAttribute));
    }

    #[test]
    fn most_specific_category_wins() {
        let t = taxonomy();
        let mut r = raw("a", "x", &[]);
        r.category = OneOrMany::Many(vec!["Pants".into(), "Sweatpants".into(), "unknown".into()]);
        let p = parse_item(&r, &NormalizationRules::default(), &t).unwrap();
        assert_eq!(p.item.category, "sweatpants");
    }

    #[test]
    fn has_person_defaults_by_super() {
        let t = taxonomy();
        let rules = NormalizationRules::default();
        let mut r = raw("a", "shirt", &[]);
        r.has_person = None;
        let p = parse_item(&r, &rules, &t).unwrap();
        assert!(p.item.has_person && p.has_person_defaulted);
        let mut r = raw("b", "scarf", &[]);
        r.has_person = None;
        assert!(!parse_item(&r, &rules, &t).unwrap().item.has_person);
    }

    #[test]
    fn catalog_edge_cases() {
        let t = taxonomy();
        let rules = NormalizationRules::default();
        let (items, report) = ingest_catalog("".as_bytes(), &rules, &t).unwrap();
        assert!(items.is_empty());
        assert_eq!((report.records_read, report.accepted, report.rejected), (0, 0, 0));

        let text = [
            r#"{"item_id":"1","image_id":"x","category":"shirt"}"#,
            r#"{"item_id":"2","image_id":"x","category":"dress"}"#,
            r#"{"item_id":"3","image_id":"y","category":"shirt","piece_count":0}"#,
            r#"not json"#,
        ]
        .join("\n");
        let (items, report) = ingest_catalog(text.as_bytes(), &rules, &t).unwrap();
        assert_eq!(items.len(), 1);
        assert_eq!(report.records_read, 4);
        assert_eq!(report.accepted + report.rejected, report.records_read);
        assert_eq!(report.rejected_by_reason["duplicate"], 1);
        assert_eq!(report.rejected_by_reason["malformed"], 2);
        assert_eq!(report.rejects[0].line, 2);
    }

    #[test]
    fn shipped_rules_validate() {
        assert!(NormalizationRules::builtin().validate(&taxonomy()).is_empty());
        let mut rules = NormalizationRules::default();
        rules.key_aliases.insert("hue".into(), "chroma".into());
        assert_eq!(rules.validate(&taxonomy()).len(), 1);
    }
}
