use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tracing_subscriber::EnvFilter;

use vqagen::dataset::{self, GenerationConfig, Split, Strategy, SubsampleQuotas};
use vqagen::ingest::{ingest_file, IngestReport, NormalizationRules};
use vqagen::keyed::sha256_hex;
use vqagen::metrics::{score, Prediction, ScoreOptions};
use vqagen::output::{self, FileDigest, RunManifest, MANIFEST_SCHEMA_VERSION};
use vqagen::taxonomy::{has_errors, Diagnostic, Severity, Taxonomy, TaxonomyDocument};
use vqagen::template::{TemplateDocument, TemplateLibrary};
use vqagen::{builtin, Error};

#[derive(Parser)]
#[command(name = "vqagen", version, about = "Balanced VQA dataset synthesis from attribute-labeled fashion catalogs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the taxonomy, template library and normalization rules.
    Validate(Inputs),
    /// Normalize a raw catalog into canonical items.
    Ingest {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a dataset bundle from a raw catalog.
    Generate(GenerateArgs),
    /// Draw a smaller bundle from an existing one.
    Subsample {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Per-stratum triplet counts, e.g. `train:non_binary=110,train:binary=90`.
        #[arg(long)]
        mini_quotas: SubsampleQuotas,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Recompute and print bundle statistics.
    Stats {
        #[arg(long)]
        bundle: PathBuf,
    },
    /// Print randomly chosen triplets.
    Sample {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, default_value_t = 4)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        split: Option<Split>,
    },
    /// Score a predictions file against one split of a bundle.
    Score {
        #[arg(long)]
        bundle: PathBuf,
        /// Line-delimited `{"qid": ..., "predicted_answer": ...}` records.
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long, default_value = "val")]
        split: Split,
        #[arg(long)]
        exclude_noise: bool,
    },
}

/// Registry files; the shipped defaults are used when omitted.
#[derive(Args, Clone)]
struct Inputs {
    #[arg(long)]
    taxonomy: Option<PathBuf>,
    #[arg(long)]
    templates: Option<PathBuf>,
    #[arg(long)]
    rules: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Attribute,
    Image,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[arg(long)]
    catalog: PathBuf,
    /// Generation config (JSON); flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, value_enum)]
    strategy: Option<StrategyArg>,
    #[arg(long)]
    split_ratio: Option<f64>,
    /// Yes/no pairs per question in the heaviest tier.
    #[arg(long)]
    quota: Option<usize>,
    /// e.g. `2:134,1:6,0:1`
    #[arg(long)]
    tier_weights: Option<String>,
    /// Also write a subsampled bundle to `<out>/mini`.
    #[arg(long)]
    mini_quotas: Option<SubsampleQuotas>,
}

/// Text of a registry file, or the shipped copy.
struct Source {
    label: String,
    text: String,
}

impl Source {
    fn read(path: Option<&Path>, builtin: &str, name: &str) -> Result<Source, Error> {
        match path {
            Some(p) => Ok(Source {
                label: p.display().to_string(),
                text: std::fs::read_to_string(p).map_err(|e| Error::Io {
                    path: p.to_path_buf(),
                    source: e,
                })?,
            }),
            None => Ok(Source {
                label: format!("builtin:{name}"),
                text: builtin.to_string(),
            }),
        }
    }

    fn digest(&self) -> FileDigest {
        FileDigest::of_bytes(self.label.clone(), self.text.as_bytes(), None)
    }
}

struct Registry {
    taxonomy: Taxonomy,
    library: TemplateLibrary,
    rules: NormalizationRules,
    sources: Vec<Source>,
}

impl Inputs {
    fn sources(&self) -> Result<[Source; 3], Error> {
        Ok([
            Source::read(self.taxonomy.as_deref(), builtin::TAXONOMY, "taxonomy.json")?,
            Source::read(self.templates.as_deref(), builtin::TEMPLATES, "templates.json")?,
            Source::read(self.rules.as_deref(), builtin::RULES, "rules.json")?,
        ])
    }

    fn load(&self) -> Result<Registry, Error> {
        let [tax, tpl, rules] = self.sources()?;
        let taxonomy = Taxonomy::from_json(&tax.text)?;
        let library = TemplateLibrary::from_json(&tpl.text)?;
        let rules_doc = NormalizationRules::from_json(&rules.text)?;
        let diagnostics = rules_doc.validate(&taxonomy);
        if has_errors(&diagnostics) {
            return Err(Error::Validation(diagnostics));
        }
        Ok(Registry {
            taxonomy,
            library,
            rules: rules_doc,
            sources: vec![tax, tpl, rules],
        })
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Validation(_) => 1,
        Error::Input(_)
        | Error::Io { .. }
        | Error::Json { .. }
        | Error::SchemaVersion { .. }
        | Error::Config(_)
        | Error::RegistryMiss { .. }
        | Error::InvalidItem(_) => 2,
        Error::MissingSlot { .. } | Error::Pattern(_) | Error::InvalidCombination(_) => 3,
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Input(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn create_dir(dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write_text(path: &Path, bytes: &[u8]) -> Result<(), Error> {
    std::fs::write(path, bytes).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn cmd_validate(inputs: &Inputs) -> Result<(), Error> {
    let [tax, tpl, rules] = inputs.sources()?;
    let mut diagnostics: Vec<Diagnostic> = Vec::new();
    let tax_doc = TaxonomyDocument::from_json(&tax.text)?;
    diagnostics.extend(tax_doc.validate());
    let taxonomy = Taxonomy::from_document(&tax_doc).ok();
    diagnostics.extend(TemplateDocument::from_json(&tpl.text)?.validate(taxonomy.as_ref()));
    let rules_doc = NormalizationRules::from_json(&rules.text)?;
    if let Some(t) = &taxonomy {
        diagnostics.extend(rules_doc.validate(t));
    }
    for d in &diagnostics {
        println!("{d}");
    }
    let errors = diagnostics.iter().filter(|d| d.severity == Severity::Error).count();
    println!("{} error(s), {} warning(s)", errors, diagnostics.len() - errors);
    if errors > 0 {
        return Err(Error::Validation(diagnostics));
    }
    Ok(())
}

fn cmd_ingest(inputs: &Inputs, catalog: &Path, out: &Path) -> Result<(), Error> {
    let reg = inputs.load()?;
    let (items, report) = ingest_file(catalog, &reg.rules, &reg.taxonomy)?;
    create_dir(out)?;
    let mut bytes = Vec::new();
    for item in &items {
        serde_json::to_writer(&mut bytes, item).map_err(|e| Error::Input(e.to_string()))?;
        bytes.push(b'\n');
    }
    write_text(&out.join("items.jsonl"), &bytes)?;
    let report_text = serde_json::to_vec_pretty(&report).map_err(|e| Error::Input(e.to_string()))?;
    write_text(&out.join("ingest_report.json"), &report_text)?;
    log_ingest(&report);
    Ok(())
}

fn log_ingest(report: &IngestReport) {
    tracing::info!(
        read = report.records_read,
        accepted = report.accepted,
        rejected = report.rejected,
        dropped_values = report.dropped_values,
        "ingested catalog"
    );
}

fn effective_config(args: &GenerateArgs) -> Result<GenerationConfig, Error> {
    let mut config = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Io {
                path: p.clone(),
                source: e,
            })?;
            GenerationConfig::from_json(&text)?
        }
        None => GenerationConfig::default(),
    };
    if let Some(s) = args.seed {
        config.master_seed = s;
    }
    if let Some(s) = args.strategy {
        config.strategy = match s {
            StrategyArg::Attribute => Strategy::AttributeBased,
            StrategyArg::Image => Strategy::ImageBased,
        };
    }
    if let Some(r) = args.split_ratio {
        config.split_ratio = r;
    }
    if let Some(q) = args.quota {
        config.per_question_quota = q;
    }
    if let Some(w) = &args.tier_weights {
        config.tier_proportions = dataset::parse_tier_weights(w)?;
    }
    config.validate()?;
    Ok(config)
}

fn cmd_generate(args: &GenerateArgs) -> Result<(), Error> {
    let started = Instant::now();
    let config = effective_config(args)?;
    let reg = args.inputs.load()?;
    let (items, report) = ingest_file(&args.catalog, &reg.rules, &reg.taxonomy)?;
    log_ingest(&report);
    let bundle = dataset::generate(&items, &reg.taxonomy, &reg.library, &config, args.workers)?;
    if !bundle.stats.balance.ok {
        let diagnostics = bundle
            .stats
            .balance
            .imbalanced
            .iter()
            .map(|q| Diagnostic::error("bundle", "imbalanced-question", q.clone()))
            .collect();
        return Err(Error::Validation(diagnostics));
    }

    let mut inputs = vec![FileDigest::of_file(&args.catalog)?];
    inputs.extend(reg.sources.iter().map(Source::digest));
    if let Some(p) = &args.config {
        inputs.push(FileDigest::of_file(p)?);
    }
    let config_text = serde_json::to_vec(&bundle.config_echo).map_err(|e| Error::Input(e.to_string()))?;

    let write = |bundle: &dataset::DatasetBundle, dir: &Path, command: &str| -> Result<(), Error> {
        create_dir(dir)?;
        let outputs = output::write_bundle(bundle, dir)?;
        let mut records = std::collections::BTreeMap::new();
        for (split, ts) in &bundle.triplets {
            records.insert(split.to_string(), ts.len());
        }
        records.insert("vocabulary".into(), bundle.vocabulary.len());
        records.insert("items".into(), items.len());
        let manifest = RunManifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            tool: "vqagen".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config_sha256: sha256_hex(&config_text),
            inputs: inputs.clone(),
            outputs,
            records,
            workers: args.workers,
            wall_time_seconds: started.elapsed().as_secs_f64(),
        };
        output::write_manifest(dir, &manifest)
    };
    write(&bundle, &args.out, "generate")?;
    if let Some(q) = &args.mini_quotas {
        let mini = dataset::subsample(&bundle, q, config.master_seed);
        write(&mini, &args.out.join("mini"), "generate --mini-quotas")?;
    }
    tracing::info!(
        triplets = bundle.len(),
        vocabulary = bundle.vocabulary.len(),
        out = %args.out.display(),
        "wrote bundle"
    );
    Ok(())
}

fn cmd_subsample(bundle: &Path, out: &Path, quotas: &SubsampleQuotas, seed: u64) -> Result<(), Error> {
    let started = Instant::now();
    let parent = output::load_bundle(bundle)?;
    let mini = dataset::subsample(&parent, quotas, seed);
    create_dir(out)?;
    let outputs = output::write_bundle(&mini, out)?;
    let mut inputs = Vec::new();
    for p in output::shard_paths(bundle)? {
        inputs.push(FileDigest::of_file(&p)?);
    }
    let config_text = serde_json::to_vec(&mini.config_echo).map_err(|e| Error::Input(e.to_string()))?;
    let mut records = std::collections::BTreeMap::new();
    for (split, ts) in &mini.triplets {
        records.insert(split.to_string(), ts.len());
    }
    output::write_manifest(
        out,
        &RunManifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            tool: "vqagen".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: "subsample".into(),
            config_sha256: sha256_hex(&config_text),
            inputs,
            outputs,
            records,
            workers: 1,
            wall_time_seconds: started.elapsed().as_secs_f64(),
        },
    )
}

fn cmd_stats(bundle: &Path) -> Result<(), Error> {
    let b = output::load_bundle(bundle)?;
    let report = dataset::stats(b.all(), &b.vocabulary, b.stats.tier_plan.clone());
    print_json(&report)
}

fn cmd_sample(bundle: &Path, n: usize, seed: u64, split: Option<Split>) -> Result<(), Error> {
    let b = output::load_bundle(bundle)?;
    let pool: Vec<_> = b.all().filter(|t| split.is_none_or(|s| t.split == s)).collect();
    if n > pool.len() {
        tracing::warn!(requested = n, available = pool.len(), "sample size clamped");
    }
    for t in dataset::sample_triplets(&pool, n, seed) {
        let tier = t.difficulty_tier.map_or("-".to_string(), |t| t.to_string());
        println!("question: {}", t.question);
        println!("answer:   {}", t.answer);
        println!("image_id: {}", t.image_id);
        println!("tier:     {tier}");
        println!("qid:      {}", t.qid);
        println!();
    }
    Ok(())
}

fn cmd_score(bundle: &Path, predictions: &Path, split: Split, exclude_noise: bool) -> Result<(), Error> {
    let b = output::load_bundle(bundle)?;
    let preds: Vec<Prediction> = output::read_jsonl(predictions)?;
    let report = score(&preds, b.split(split), ScoreOptions { exclude_noise })?;
    print_json(&report)
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Validate(inputs) => cmd_validate(&inputs),
        Command::Ingest { inputs, catalog, out } => cmd_ingest(&inputs, &catalog, &out),
        Command::Generate(args) => cmd_generate(&args),
        Command::Subsample {
            bundle,
            out,
            mini_quotas,
            seed,
        } => cmd_subsample(&bundle, &out, &mini_quotas, seed),
        Command::Stats { bundle } => cmd_stats(&bundle),
        Command::Sample { bundle, n, seed, split } => cmd_sample(&bundle, n, seed, split),
        Command::Score {
            bundle,
            predictions,
            split,
            exclude_noise,
        } => cmd_score(&bundle, &predictions, split, exclude_noise),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .json()
        .with_writer(std::io::stderr)
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            match &e {
                Error::Validation(diagnostics) => {
                    for d in diagnostics.iter().filter(|d| d.severity == Severity::Error) {
                        tracing::error!(code = %d.code, source_file = %d.source, "{}", d.message);
                    }
                    tracing::error!(exit_code = code, "{e}");
                }
                _ => tracing::error!(exit_code = code, "{e}"),
            }
            ExitCode::from(code)
        }
    }
}
