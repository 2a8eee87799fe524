//! Command-line front end. Every subcommand writes its outputs atomically
//! into `--out` together with `run_manifest.json`, which records the resolved
//! configuration and the checksum of every input.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::Serialize;

use crate::corpus::{load_dictionary, load_parallel_corpus};
use crate::error::{Error, Result};
use crate::extract::{extract_pairs_directed, extraction_stats, Direction, SkipCounts};
use crate::pairfile::{items_to_jsonl, pairs_to_jsonl, read_items, read_pairs};
use crate::precision::{
    links_from_pairs, load_pharaoh, plan_population_items, precision, similarity_distributions,
    DistributionSpec, Population, PrecisionReport,
};
use crate::retrieval::{evaluate_layers, EvalConfig, EvalOptions, LayerReport, RetrievalReport};
use crate::sentence::{cls_similarity_curve, evaluate_sentences, CurvePoint, SentenceEvalConfig};
use crate::similarity::Criterion;
use crate::store::{sha256_hex, EmbeddingReader, ItemKind, LayerSource, MANIFEST_FILE};

pub const RUN_MANIFEST: &str = "run_manifest.json";

#[derive(Debug, Parser, Serialize)]
#[command(name = "ctxalign", version, about = "Word-level multilingual alignment evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    #[serde(skip)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Extract translated-in-context word pairs.
    Extract(ExtractArgs),
    /// Weak and strong retrieval scores per layer.
    EvalRetrieval(RetrievalArgs),
    /// Precision of extracted or externally aligned pairs against gold alignments.
    EvalPrecision(PrecisionArgs),
    /// List the word pairs a distribution analysis needs embedded.
    PlanDistributions(PlanArgs),
    /// Similarity histograms of pair populations at one layer.
    Distributions(DistributionArgs),
    /// Sentence-level retrieval and CLS similarity curve.
    EvalSentences(SentenceArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct LangArgs {
    #[arg(long, default_value = "src")]
    pub src_lang: String,
    #[arg(long, default_value = "tgt")]
    pub tgt_lang: String,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CriterionArg {
    Cosine,
    Csls,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DirectionArg {
    Src2tgt,
    Tgt2src,
}

#[derive(Debug, Args, Serialize)]
pub struct ExtractArgs {
    #[arg(long)]
    pub src: PathBuf,
    #[arg(long)]
    pub tgt: PathBuf,
    #[arg(long)]
    pub dict: PathBuf,
    #[command(flatten)]
    pub langs: LangArgs,
    #[arg(long, value_enum, default_value_t = DirectionArg::Src2tgt)]
    pub direction: DirectionArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long, value_enum, default_value_t = CriterionArg::Csls)]
    pub criterion: CriterionArg,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long, default_value_t = 5000)]
    pub n: usize,
    #[arg(long, default_value_t = 10)]
    pub runs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl EvalArgs {
    fn criterion(&self) -> Result<Criterion> {
        match self.criterion {
            CriterionArg::Cosine => Ok(Criterion::Cosine),
            CriterionArg::Csls => Criterion::csls(self.k),
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct RetrievalArgs {
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long)]
    pub embeddings_src: PathBuf,
    #[arg(long)]
    pub embeddings_tgt: PathBuf,
    #[command(flatten)]
    pub eval: EvalArgs,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub distinct_types: bool,
    /// Skip the strong score.
    #[arg(long)]
    pub weak_only: bool,
    /// Also write every retrieval mistake to failures.jsonl.
    #[arg(long)]
    pub failures: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct PrecisionArgs {
    #[arg(long)]
    pub gold: PathBuf,
    /// Extracted pair file to score.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    /// External aligner output (Pharaoh) to score.
    #[arg(long)]
    pub external_alignments: Option<PathBuf>,
    /// Optional corpus, used to check link bounds.
    #[arg(long, requires = "tgt")]
    pub src: Option<PathBuf>,
    #[arg(long, requires = "src")]
    pub tgt: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_population(s: &str) -> std::result::Result<Population, String> {
    s.trim().parse::<Population>().map_err(|e| e.to_string())
}

#[derive(Debug, Args, Serialize)]
pub struct PlanArgs {
    #[arg(long)]
    pub src: PathBuf,
    #[arg(long)]
    pub tgt: PathBuf,
    #[command(flatten)]
    pub langs: LangArgs,
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long)]
    pub external_alignments: Option<PathBuf>,
    /// Comma-separated subset of extracted,external,random_in_sentence,random_global.
    #[arg(
        long,
        value_parser = parse_population,
        value_delimiter = ',',
        default_value = "extracted,random_in_sentence,random_global"
    )]
    pub populations: Vec<Population>,
    #[arg(long, default_value_t = 5000)]
    pub sample_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct DistributionArgs {
    /// Pair file or population plan the embeddings were produced for.
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long)]
    pub embeddings_src: PathBuf,
    #[arg(long)]
    pub embeddings_tgt: PathBuf,
    #[arg(long)]
    pub layer: usize,
    #[arg(long, default_value_t = 40)]
    pub bins: usize,
    /// Defaults to every population present in the pair file, plus random_global.
    #[arg(long, value_parser = parse_population, value_delimiter = ',')]
    pub populations: Option<Vec<Population>>,
    #[arg(long, default_value_t = 5000)]
    pub sample_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SentenceKindArg {
    Avg,
    Cls,
}

#[derive(Debug, Args, Serialize)]
pub struct SentenceArgs {
    #[arg(long)]
    pub embeddings_src: PathBuf,
    #[arg(long)]
    pub embeddings_tgt: PathBuf,
    /// Expected representation; defaults to the kind recorded in the manifest.
    #[arg(long, value_enum)]
    pub kind: Option<SentenceKindArg>,
    #[command(flatten)]
    pub eval: EvalArgs,
    /// Also compute the translated-vs-random similarity curve with this many random pairs.
    #[arg(long)]
    pub num_random: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    use std::io::Write;
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

#[derive(Serialize)]
struct InputChecksum {
    path: PathBuf,
    sha256: String,
}

fn checksum(path: &Path) -> Result<InputChecksum> {
    let file = if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    };
    let bytes = std::fs::read(&file).map_err(|e| Error::io(&file, e))?;
    Ok(InputChecksum {
        path: path.to_path_buf(),
        sha256: sha256_hex(&bytes),
    })
}

#[derive(Serialize)]
struct RunManifest<'a> {
    tool: &'static str,
    version: &'static str,
    threads: usize,
    command: &'a Command,
    inputs: Vec<InputChecksum>,
}

fn require_inputs(paths: &[&Path]) -> Result<()> {
    for p in paths {
        if !p.exists() {
            return Err(Error::io(
                *p,
                std::io::Error::new(std::io::ErrorKind::NotFound, "input does not exist"),
            ));
        }
    }
    Ok(())
}

fn prepare_out(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))
}

#[derive(Serialize)]
struct ExtractSummary {
    direction: Direction,
    sentences: usize,
    #[serde(flatten)]
    stats: crate::extract::ExtractionStats,
    skipped: SkipCounts,
}

fn cmd_extract(args: &ExtractArgs) -> Result<Vec<PathBuf>> {
    let corpus = load_parallel_corpus(&args.src, &args.tgt, &args.langs.src_lang, &args.langs.tgt_lang)?;
    let dict = load_dictionary(&args.dict, &args.langs.src_lang, &args.langs.tgt_lang)?;
    let direction = match args.direction {
        DirectionArg::Src2tgt => Direction::Src2Tgt,
        DirectionArg::Tgt2src => Direction::Tgt2Src,
    };
    let extraction = extract_pairs_directed(&corpus, &dict, direction);
    let stats = extraction_stats(&extraction.pairs, &corpus);
    info!(
        "extracted {} pairs from {} sentences ({} source tokens skipped)",
        stats.pair_count,
        corpus.len(),
        extraction.skipped.total()
    );
    write_atomic(&args.out.join("pairs.jsonl"), pairs_to_jsonl(&extraction.pairs).as_bytes())?;
    write_json(
        &args.out.join("summary.json"),
        &ExtractSummary {
            direction,
            sentences: corpus.len(),
            stats,
            skipped: extraction.skipped,
        },
    )?;
    Ok(vec![args.src.clone(), args.tgt.clone(), args.dict.clone()])
}

#[derive(Serialize)]
struct LayerRecord<'a> {
    kind: ItemKind,
    criterion: Criterion,
    n: usize,
    runs: usize,
    seed: u64,
    #[serde(flatten)]
    layer: &'a LayerReport,
}

/// One JSON record per layer.
pub fn report_to_jsonl(report: &RetrievalReport) -> String {
    let mut out = String::new();
    for layer in &report.layers {
        let record = LayerRecord {
            kind: report.kind,
            criterion: report.config.criterion,
            n: report.config.n,
            runs: report.config.runs,
            seed: report.config.seed,
            layer,
        };
        out.push_str(&serde_json::to_string(&record).expect("report serializes"));
        out.push('\n');
    }
    out
}

/// Flat `layer,metric,mean,std,ci95` table.
pub fn report_to_csv(report: &RetrievalReport) -> String {
    let mut out = String::from("layer,metric,mean,std,ci95\n");
    for l in &report.layers {
        for (metric, s) in [("weak", Some(&l.weak)), ("strong", l.strong.as_ref())] {
            if let Some(s) = s {
                out.push_str(&format!("{},{metric},{},{},{}\n", l.layer, s.mean, s.std, s.ci95));
            }
        }
    }
    out
}

fn write_report(out: &Path, report: &RetrievalReport) -> Result<()> {
    write_atomic(&out.join("report.jsonl"), report_to_jsonl(report).as_bytes())?;
    write_atomic(&out.join("report.csv"), report_to_csv(report).as_bytes())
}

fn cmd_eval_retrieval(args: &RetrievalArgs) -> Result<Vec<PathBuf>> {
    let pairs = read_pairs(&args.pairs)?;
    let src = EmbeddingReader::open(&args.embeddings_src)?;
    let tgt = EmbeddingReader::open(&args.embeddings_tgt)?;
    let config = EvalConfig {
        n: args.eval.n,
        runs: args.eval.runs,
        criterion: args.eval.criterion()?,
        seed: args.eval.seed,
        distinct_types: args.distinct_types,
    };
    let report = evaluate_layers(
        &src,
        &tgt,
        &pairs,
        &config,
        EvalOptions {
            strong: !args.weak_only,
            record_failures: args.failures,
        },
    )?;
    write_report(&args.out, &report)?;
    if args.failures {
        let mut text = String::new();
        for f in &report.failures {
            text.push_str(&serde_json::to_string(f)?);
            text.push('\n');
        }
        write_atomic(&args.out.join("failures.jsonl"), text.as_bytes())?;
    }
    Ok(vec![args.pairs.clone(), args.embeddings_src.clone(), args.embeddings_tgt.clone()])
}

#[derive(Serialize)]
struct PrecisionOutput {
    #[serde(skip_serializing_if = "Option::is_none")]
    extracted: Option<PrecisionReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    external: Option<PrecisionReport>,
}

fn cmd_eval_precision(args: &PrecisionArgs) -> Result<Vec<PathBuf>> {
    if args.pairs.is_none() && args.external_alignments.is_none() {
        return Err(Error::Config("give --pairs and/or --external-alignments to score".into()));
    }
    let gold = load_pharaoh(&args.gold)?;
    let mut inputs = vec![args.gold.clone()];
    let external = args.external_alignments.as_ref().map(load_pharaoh).transpose()?;
    if let (Some(src), Some(tgt)) = (&args.src, &args.tgt) {
        let corpus = load_parallel_corpus(src, tgt, "src", "tgt")?;
        gold.validate_against(&corpus)?;
        if let Some(ext) = &external {
            ext.validate_against(&corpus)?;
        }
        inputs.extend([src.clone(), tgt.clone()]);
    }
    let extracted = match &args.pairs {
        Some(p) => {
            inputs.push(p.clone());
            Some(precision(&links_from_pairs(&read_pairs(p)?), &gold)?)
        }
        None => None,
    };
    let external = match (&external, &args.external_alignments) {
        (Some(ext), Some(p)) => {
            inputs.push(p.clone());
            Some(precision(&ext.links(), &gold)?)
        }
        _ => None,
    };
    write_json(&args.out.join("precision.json"), &PrecisionOutput { extracted, external })?;
    Ok(inputs)
}

fn cmd_plan(args: &PlanArgs) -> Result<Vec<PathBuf>> {
    let corpus = load_parallel_corpus(&args.src, &args.tgt, &args.langs.src_lang, &args.langs.tgt_lang)?;
    let pairs = read_pairs(&args.pairs)?;
    let external = args.external_alignments.as_ref().map(load_pharaoh).transpose()?;
    let spec = DistributionSpec {
        layer: 0,
        populations: args.populations.clone(),
        bins: 2,
        sample_size: args.sample_size,
        seed: args.seed,
    };
    let items = plan_population_items(&corpus, &pairs, external.as_ref(), &spec)?;
    write_atomic(&args.out.join("items.jsonl"), items_to_jsonl(&items).as_bytes())?;
    let mut inputs = vec![args.src.clone(), args.tgt.clone(), args.pairs.clone()];
    inputs.extend(args.external_alignments.clone());
    Ok(inputs)
}

fn cmd_distributions(args: &DistributionArgs) -> Result<Vec<PathBuf>> {
    let items = read_items(&args.pairs)?;
    let src = EmbeddingReader::open(&args.embeddings_src)?;
    let tgt = EmbeddingReader::open(&args.embeddings_tgt)?;
    let populations = match &args.populations {
        Some(p) => p.clone(),
        None => {
            let mut present: Vec<Population> = items.iter().map(|i| i.population).collect();
            present.push(Population::RandomGlobal);
            present.sort();
            present.dedup();
            present
        }
    };
    let spec = DistributionSpec {
        layer: args.layer,
        populations,
        bins: args.bins,
        sample_size: args.sample_size,
        seed: args.seed,
    };
    let report = similarity_distributions(&src, &tgt, &items, &spec)?;
    write_atomic(&args.out.join("histogram.csv"), report.to_csv().as_bytes())?;
    write_json(&args.out.join("distribution_summary.json"), &report)?;
    Ok(vec![args.pairs.clone(), args.embeddings_src.clone(), args.embeddings_tgt.clone()])
}

fn curve_to_csv(curve: &[CurvePoint]) -> String {
    let mut out = String::from("layer,translated_mean,translated_ci95,random_mean,random_ci95\n");
    for p in curve {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            p.layer, p.translated_mean, p.translated_ci95, p.random_mean, p.random_ci95
        ));
    }
    out
}

fn cmd_eval_sentences(args: &SentenceArgs) -> Result<Vec<PathBuf>> {
    let src = EmbeddingReader::open(&args.embeddings_src)?;
    let tgt = EmbeddingReader::open(&args.embeddings_tgt)?;
    let kind = match args.kind {
        Some(SentenceKindArg::Avg) => ItemKind::SentenceAvg,
        Some(SentenceKindArg::Cls) => ItemKind::SentenceCls,
        None => src.manifest().kind,
    };
    let config = SentenceEvalConfig {
        kind,
        eval: EvalConfig {
            n: args.eval.n,
            runs: args.eval.runs,
            criterion: args.eval.criterion()?,
            seed: args.eval.seed,
            distinct_types: false,
        },
    };
    let report = evaluate_sentences(&src, &tgt, &config)?;
    write_report(&args.out, &report)?;
    if let Some(num_random) = args.num_random {
        let curve = cls_similarity_curve(&src, &tgt, num_random, args.eval.seed)?;
        write_atomic(&args.out.join("cls_curve.csv"), curve_to_csv(&curve).as_bytes())?;
    }
    Ok(vec![args.embeddings_src.clone(), args.embeddings_tgt.clone()])
}

fn declared_inputs(command: &Command) -> Vec<&Path> {
    match command {
        Command::Extract(a) => vec![&a.src, &a.tgt, &a.dict],
        Command::EvalRetrieval(a) => vec![&a.pairs, &a.embeddings_src, &a.embeddings_tgt],
        Command::EvalPrecision(a) => {
            let mut v: Vec<&Path> = vec![&a.gold];
            v.extend(a.pairs.as_deref());
            v.extend(a.external_alignments.as_deref());
            v.extend(a.src.as_deref());
            v.extend(a.tgt.as_deref());
            v
        }
        Command::PlanDistributions(a) => {
            let mut v: Vec<&Path> = vec![&a.src, &a.tgt, &a.pairs];
            v.extend(a.external_alignments.as_deref());
            v
        }
        Command::Distributions(a) => vec![&a.pairs, &a.embeddings_src, &a.embeddings_tgt],
        Command::EvalSentences(a) => vec![&a.embeddings_src, &a.embeddings_tgt],
    }
}

fn out_dir(command: &Command) -> &Path {
    match command {
        Command::Extract(a) => &a.out,
        Command::EvalRetrieval(a) => &a.out,
        Command::EvalPrecision(a) => &a.out,
        Command::PlanDistributions(a) => &a.out,
        Command::Distributions(a) => &a.out,
        Command::EvalSentences(a) => &a.out,
    }
}

fn execute(command: &Command, threads: usize) -> Result<()> {
    require_inputs(&declared_inputs(command))?;
    let out = out_dir(command);
    prepare_out(out)?;
    let inputs = match command {
        Command::Extract(a) => cmd_extract(a)?,
        Command::EvalRetrieval(a) => cmd_eval_retrieval(a)?,
        Command::EvalPrecision(a) => cmd_eval_precision(a)?,
        Command::PlanDistributions(a) => cmd_plan(a)?,
        Command::Distributions(a) => cmd_distributions(a)?,
        Command::EvalSentences(a) => cmd_eval_sentences(a)?,
    };
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        threads,
        command,
        inputs: inputs.iter().map(|p| checksum(p)).collect::<Result<_>>()?,
    };
    write_json(&out.join(RUN_MANIFEST), &manifest)
}

/// Runs a parsed command line on a dedicated worker pool.
pub fn run(cli: &Cli) -> Result<()> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let threads = pool.current_num_threads();
    pool.install(|| execute(&cli.command, threads))
}

/// Parses `args` (including the program name) and runs them.
pub fn run_from<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::Config(e.to_string()))?;
    run(&cli)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::ScoreSummary;
    use clap::CommandFactory;

    #[test]
    fn clap_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn population_lists_parse() {
        let cli = Cli::try_parse_from([
            "ctxalign", "distributions", "--pairs", "p", "--embeddings-src", "s", "--embeddings-tgt", "t",
            "--layer", "3", "--populations", "extracted,random_global", "--out", "o",
        ])
        .unwrap();
        let Command::Distributions(args) = cli.command else { panic!() };
        assert_eq!(args.populations, Some(vec![Population::Extracted, Population::RandomGlobal]));
        assert!(Cli::try_parse_from([
            "ctxalign", "distributions", "--pairs", "p", "--embeddings-src", "s", "--embeddings-tgt", "t",
            "--layer", "3", "--populations", "extracted,bogus", "--out", "o",
        ])
        .is_err());
    }

    #[test]
    fn report_csv_layout() {
        let summary = |x: f64| ScoreSummary { mean: x, std: 0.0, ci95: 0.0, runs: vec![x] };
        let report = RetrievalReport {
            kind: ItemKind::Word,
            config: EvalConfig::default(),
            layers: vec![LayerReport { layer: 0, weak: summary(0.5), strong: None, warnings: vec![] }],
            failures: vec![],
        };
        assert_eq!(report_to_csv(&report), "layer,metric,mean,std,ci95\n0,weak,0.5,0,0\n");
        let line = report_to_jsonl(&report);
        let v: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
        assert_eq!((v["layer"].as_u64(), v["weak"]["mean"].as_f64()), (Some(0), Some(0.5)));
    }
}
