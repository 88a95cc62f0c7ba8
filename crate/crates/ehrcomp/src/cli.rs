//! The `ehrcomp` command line.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ehrcomp_core::analyzer::{self, Attention, CostModel, PlanAnalysis, PlanDefect};
use ehrcomp_core::audit::{self, TripleSet};
use ehrcomp_core::corpus::{self, Corpus, GeneratorConfig, DEFAULT_WINDOW_HOURS, MIN_COHORT_EVENTS};
use ehrcomp_core::metrics;
use ehrcomp_core::planner::{self, Backbone, HierDims, InputVolume, LatentSpec, LayerPlan, Shape, StageOptions};
use ehrcomp_core::privacy::{self, AttackConfig};
use ehrcomp_core::serializer::{self, ReconstructedEvent, SerializerConfig, Vocabulary};
use ehrcomp_core::vq::{self, Codebook, PIECES};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus_io::{load_corpus, write_corpus, LoadOptions};
use crate::formats::{read_json, read_streams, read_toml, read_vocab, write_csv, write_json, write_streams, write_vocab, StreamRecord};
use crate::manifest::ManifestBuilder;

#[derive(Debug, Parser)]
#[command(name = "ehrcomp", version, about = "Serialize, plan, quantize and audit EHR event data")]
pub struct Cli {
    /// Seed for every randomized step; overrides a seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default `out`). For `plan`, the target shape `NxD`.
    #[arg(long, global = true)]
    out: Option<String>,
    /// Config file for the subcommand's module (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus.
    Gen(GenArgs),
    /// Load a corpus, apply the cohort rules and summarize it.
    Load(LoadArgs),
    /// Build a vocabulary and token streams from a corpus.
    Serialize(SerializeArgs),
    /// Build encoder/decoder layer plans and their costs.
    Plan(PlanArgs),
    /// Validate a plan file and recompute its costs.
    Analyze(AnalyzeArgs),
    /// Quantize a latent against a codebook.
    Quantize(QuantizeArgs),
    /// Score generated events against triples learned from real data.
    Audit(AuditArgs),
    /// Run the distance-based membership attack.
    Privacy(PrivacyArgs),
    /// Token accuracy or AUROC.
    #[command(subcommand)]
    Metrics(MetricsCommand),
}

#[derive(Debug, Args)]
struct GenArgs {
    /// Patients to generate when no config is given.
    #[arg(long, default_value_t = 100)]
    patients: usize,
}

#[derive(Debug, Args)]
struct LoadArgs {
    corpus: PathBuf,
    #[arg(long, default_value_t = MIN_COHORT_EVENTS)]
    min_events: usize,
    #[arg(long, default_value_t = DEFAULT_WINDOW_HOURS)]
    window_hours: u32,
}

#[derive(Debug, Args)]
struct SerializeArgs {
    corpus: PathBuf,
    /// Drop vocabulary units seen fewer times than this.
    #[arg(long, default_value_t = 1)]
    min_count: usize,
    /// Use an existing vocabulary instead of building one.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Train:valid:test ratios, e.g. `0.8:0.1:0.1`.
    #[arg(long)]
    split: Option<String>,
    /// Label task to stratify the split on.
    #[arg(long, requires = "split")]
    stratify: Option<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BackboneArg {
    Cnn,
    Transformer,
}

impl From<BackboneArg> for Backbone {
    fn from(b: BackboneArg) -> Self {
        match b {
            BackboneArg::Cnn => Backbone::Cnn,
            BackboneArg::Transformer => Backbone::Transformer,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AttentionArg {
    Full,
    Linear,
}

impl From<AttentionArg> for Attention {
    fn from(a: AttentionArg) -> Self {
        match a {
            AttentionArg::Full => Attention::Full,
            AttentionArg::Linear => Attention::Linear,
        }
    }
}

#[derive(Debug, Args)]
struct CostArgs {
    /// Convolution kernel size.
    #[arg(long, default_value_t = 5)]
    kernel: u64,
    /// Attention cost; defaults to full for hierarchical and single plans,
    /// linear for flattened grid plans.
    #[arg(long, value_enum)]
    attention: Option<AttentionArg>,
}

impl CostArgs {
    fn model(&self, default: Attention) -> Result<CostModel> {
        let model = CostModel {
            kernel: self.kernel,
            attention: self.attention.map_or(default, Attention::from),
            ..CostModel::default()
        };
        model.validate()?;
        Ok(model)
    }
}

#[derive(Debug, Args)]
struct PlanArgs {
    #[arg(long, value_enum, default_value_t = BackboneArg::Cnn)]
    backbone: BackboneArg,
    /// Input shape `NxD`.
    #[arg(long = "in")]
    input: Option<String>,
    /// Transformer layer count (default 4 flat, 2 per hierarchical stage).
    #[arg(long)]
    layers: Option<u32>,
    /// Hierarchical input `EVENTSxTOKENSxWIDTH`; needs `--latent`.
    #[arg(long, requires = "latent")]
    hier: Option<String>,
    /// Latent shape `TxC` for `--hier`.
    #[arg(long)]
    latent: Option<String>,
    /// Search grid `LMIN:LMAX` over latent sizes.
    #[arg(long, conflicts_with_all = ["input", "hier"])]
    grid: Option<String>,
    /// Where to write the plan files.
    #[arg(long, default_value = "out")]
    dir: PathBuf,
    #[command(flatten)]
    cost: CostArgs,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    plan: PathBuf,
    #[command(flatten)]
    cost: CostArgs,
}

#[derive(Debug, Args)]
struct QuantizeArgs {
    /// JSON array of fibers, each of `c` numbers.
    #[arg(long)]
    latent: PathBuf,
    /// Codebook JSON; otherwise a random one of `--codes` entries.
    #[arg(long, conflicts_with = "codes")]
    codebook: Option<PathBuf>,
    #[arg(long, default_value_t = 512)]
    codes: usize,
    #[arg(long, default_value_t = 0.99)]
    decay: f64,
    /// EMA codebook updates on the latent before the final assignment.
    #[arg(long, default_value_t = 0)]
    ema_steps: usize,
    /// Commitment weight.
    #[arg(long, default_value_t = 0.25)]
    beta: f64,
}

#[derive(Debug, Args)]
struct AuditArgs {
    /// Real corpus directory the triples are learned from.
    #[arg(long)]
    real: PathBuf,
    /// Generated token streams (JSON lines) or a generated corpus directory.
    #[arg(long)]
    generated: PathBuf,
    /// Vocabulary the streams were written with; built from `--real` if absent.
    #[arg(long)]
    vocab: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PrivacyArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    heldout: PathBuf,
    #[arg(long)]
    synthetic: PathBuf,
    /// Records sampled from each of train and held-out.
    #[arg(long)]
    n_r: usize,
    /// Normalized distance thresholds; repeatable.
    #[arg(long = "threshold", default_values_t = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5])]
    thresholds: Vec<f64>,
}

#[derive(Debug, Subcommand)]
enum MetricsCommand {
    /// Token accuracy between two stream files, line by line.
    Accuracy {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        hypothesis: PathBuf,
        #[arg(long)]
        include_pads: bool,
    },
    /// AUROC from a CSV with `score` and `label` (0/1) columns.
    Auroc {
        #[arg(long)]
        scores: PathBuf,
    },
}

/// Parses `args` and runs the command. Usage errors print and exit through
/// clap; everything else is returned.
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).unwrap_or_else(|e| e.exit());
    let out_dir = || PathBuf::from(cli.out.as_deref().unwrap_or("out"));
    match &cli.command {
        Command::Gen(a) => gen(&cli, a, &out_dir()),
        Command::Load(a) => load(&cli, a, &out_dir()),
        Command::Serialize(a) => serialize(&cli, a, &out_dir()),
        Command::Plan(a) => plan(&cli, a),
        Command::Analyze(a) => analyze(&cli, a, &out_dir()),
        Command::Quantize(a) => quantize(&cli, a, &out_dir()),
        Command::Audit(a) => audit(&cli, a, &out_dir()),
        Command::Privacy(a) => privacy(&cli, a, &out_dir()),
        Command::Metrics(m) => metrics(&cli, m, &out_dir()),
    }
}

fn gen(cli: &Cli, args: &GenArgs, out: &Path) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => read_toml::<GeneratorConfig>(path)?,
        None => GeneratorConfig::three_tables(0, args.patients),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.validate()?;
    let corpus = corpus::generate_corpus(&config)?;

    let mut manifest = ManifestBuilder::new("gen", out, Some(config.seed), &config);
    if let Some(path) = &cli.config {
        manifest.input(path)?;
    }
    for path in write_corpus(out, &corpus)? {
        manifest.output(&path);
    }
    manifest.finish()?;
    println!("{} patients, {} events -> {}", corpus.patients.len(), corpus.event_count(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct LoadSummary {
    patients: usize,
    events: usize,
    tables: usize,
    stats: crate::corpus_io::LoadStats,
}

fn load(cli: &Cli, args: &LoadArgs, out: &Path) -> Result<()> {
    let options = LoadOptions {
        min_events: args.min_events,
        window_seconds: u64::from(args.window_hours) * 3600,
    };
    let (corpus, stats) = load_corpus(&args.corpus, &options)?;
    let summary = LoadSummary {
        patients: corpus.patients.len(),
        events: corpus.event_count(),
        tables: corpus.schema.tables.len(),
        stats,
    };
    let mut manifest = ManifestBuilder::new("load", out, cli.seed, &options);
    manifest.input(&args.corpus)?;
    let path = out.join("summary.json");
    write_json(&path, &summary)?;
    manifest.output(&path);
    manifest.finish()?;
    println!("kept {} of {} patients", summary.stats.patients_kept, summary.stats.patients_read);
    Ok(())
}

fn serializer_config(cli: &Cli) -> Result<SerializerConfig> {
    let config = match &cli.config {
        Some(path) => read_toml(path)?,
        None => SerializerConfig::default(),
    };
    config.validate()?;
    Ok(config)
}

fn load_default(dir: &Path) -> Result<Corpus> {
    Ok(load_corpus(dir, &LoadOptions::default())?.0)
}

#[derive(Debug, Default, Serialize)]
struct RoundtripReport {
    patients: usize,
    /// Events that fit the grid untruncated and were compared.
    events_compared: usize,
    events_matched: usize,
    events_truncated: usize,
    exact: bool,
    /// Up to ten mismatches as `(patient, event index)`.
    mismatches: Vec<(String, usize)>,
}

/// Detokenizes each patient's hierarchical stream and compares every event
/// that was serialized in full with its expected reconstruction.
fn roundtrip(
    corpus: &Corpus,
    streams: &[(String, serializer::TokenStream)],
    vocab: &Vocabulary,
    config: &SerializerConfig,
) -> Result<RoundtripReport> {
    let mut report = RoundtripReport {
        patients: corpus.patients.len(),
        ..RoundtripReport::default()
    };
    for (patient, (_, hier)) in corpus.patients.iter().zip(streams) {
        let decoded = serializer::detokenize_events(hier, vocab, None);
        let mut prev = None;
        for (i, event) in patient.events.iter().enumerate() {
            let prev_ts = prev.replace(event.timestamp);
            let len = serializer::serialize_event(event, prev_ts, vocab, &corpus.definitions, config)?.len();
            if i >= config.n_events || len > config.tokens_per_event {
                report.events_truncated += 1;
                continue;
            }
            report.events_compared += 1;
            let expected = serializer::reference_event(event, prev_ts, &corpus.definitions, config)?;
            if decoded.get(i) == Some(&expected) {
                report.events_matched += 1;
            } else if report.mismatches.len() < 10 {
                report.mismatches.push((patient.id.clone(), i));
            }
        }
    }
    report.exact = report.events_matched == report.events_compared;
    Ok(report)
}

fn parse_ratios(text: &str) -> Result<(f64, f64, f64)> {
    let parts: Vec<f64> = text
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("split `{text}` is not `a:b:c`"))?;
    match parts[..] {
        [a, b, c] => Ok((a, b, c)),
        _ => bail!("split `{text}` needs three ratios"),
    }
}

fn serialize(cli: &Cli, args: &SerializeArgs, out: &Path) -> Result<()> {
    let config = serializer_config(cli)?;
    let corpus = load_default(&args.corpus)?;
    let vocab = match &args.vocab {
        Some(path) => read_vocab(path)?,
        None => serializer::corpus_vocabulary(&corpus, &config, args.min_count)?,
    };
    ensure!(
        vocab.timegap_count() == config.timegap_tokens(),
        "vocabulary has {} time-gap tokens, config needs {}",
        vocab.timegap_count(),
        config.timegap_tokens()
    );

    let mut hier = Vec::with_capacity(corpus.patients.len());
    let mut flat = Vec::with_capacity(corpus.patients.len());
    for p in &corpus.patients {
        let h = serializer::build_hierarchical(p, &vocab, &corpus.definitions, &config)?;
        flat.push(StreamRecord::new(&p.id, &serializer::flatten(&h, config.n_tokens)?));
        hier.push((p.id.clone(), h));
    }
    let report = roundtrip(&corpus, &hier, &vocab, &config)?;

    let mut manifest = ManifestBuilder::new("serialize", out, cli.seed, &config);
    manifest.input(&args.corpus)?;
    if let Some(v) = &args.vocab {
        manifest.input(v)?;
    }
    let mut put = |name: &str| {
        let path = out.join(name);
        manifest.output(&path);
        path
    };
    write_vocab(&put("vocab.txt"), &vocab)?;
    let hier_records: Vec<StreamRecord> = hier.iter().map(|(id, s)| StreamRecord::new(id, s)).collect();
    write_streams(&put("streams_hier.jsonl"), &hier_records)?;
    write_streams(&put("streams_flat.jsonl"), &flat)?;
    write_json(&put("roundtrip.json"), &report)?;

    if let Some(text) = &args.split {
        let seed = cli.seed.unwrap_or(0);
        let split = corpus::split_cohort(&corpus, parse_ratios(text)?, seed, args.stratify.as_deref())?;
        for (name, part) in [("train", &split.train), ("valid", &split.valid), ("test", &split.test)] {
            let records: Vec<StreamRecord> = flat
                .iter()
                .filter(|r| part.patients.iter().any(|p| p.id == r.patient_id))
                .cloned()
                .collect();
            write_streams(&put(&format!("streams_flat_{name}.jsonl")), &records)?;
        }
    }
    manifest.finish()?;
    println!(
        "{} patients, vocabulary {}, roundtrip {}/{} events",
        corpus.patients.len(),
        vocab.len(),
        report.events_matched,
        report.events_compared
    );
    Ok(())
}

fn parse_dims(text: &str, n: usize) -> Result<Vec<u64>> {
    let dims: Vec<u64> = text
        .split(['x', 'X'])
        .map(|p| p.trim().parse::<u64>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("`{text}` is not a list of sizes separated by `x`"))?;
    ensure!(dims.len() == n, "`{text}` needs {n} sizes");
    Ok(dims)
}

fn parse_shape(text: &str) -> Result<Shape> {
    let d = parse_dims(text, 2)?;
    Ok(Shape::new(d[0], d[1]))
}

/// A plan file: encoder, its mirrored decoder and their costs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanDocument {
    pub cost_model: CostModel,
    pub encoder: LayerPlan,
    pub decoder: LayerPlan,
    pub encoder_analysis: PlanAnalysis,
    pub decoder_analysis: PlanAnalysis,
}

impl PlanDocument {
    fn build(encoder: LayerPlan, model: CostModel) -> Result<Self> {
        let decoder = planner::mirror_decoder(&encoder)?;
        Ok(PlanDocument {
            cost_model: model,
            encoder_analysis: analyzer::analyze(&encoder, &model)?,
            decoder_analysis: analyzer::analyze(&decoder, &model)?,
            encoder,
            decoder,
        })
    }
}

/// `layer,type,output` rows for an encoder.
fn layer_rows(analysis: &PlanAnalysis) -> Vec<[String; 3]> {
    analysis
        .trace
        .steps
        .iter()
        .map(|s| [(s.index + 1).to_string(), s.op.to_string(), s.shape.to_string()])
        .collect()
}

fn plan(cli: &Cli, args: &PlanArgs) -> Result<()> {
    let backbone = Backbone::from(args.backbone);
    let dir = &args.dir;
    if let Some(grid) = &args.grid {
        return plan_grid(cli, args, grid);
    }
    if let Some(hier) = &args.hier {
        let d = parse_dims(hier, 3)?;
        let dims = HierDims {
            events: d[0],
            tokens_per_event: d[1],
            width: d[2],
        };
        let l = parse_shape(args.latent.as_deref().unwrap_or_default())?;
        let latent = LatentSpec::new(l.len, l.width)?;
        let mut options = StageOptions::fitting(latent);
        if let Some(n) = args.layers {
            options.text_layers = n;
            options.event_layers = n;
        }
        let plan = planner::hierarchical_plan(dims, latent, backbone, options)?;
        let model = args.cost.model(Attention::Full)?;
        let cost = analyzer::hierarchical_cost(&plan, &model)?;
        let text = PlanDocument::build(plan.text.clone(), model)?;
        let event = PlanDocument::build(plan.event.clone(), model)?;
        let rate = planner::compression_rate(InputVolume::Hierarchical(dims), latent.size())?;

        #[derive(Serialize)]
        struct HierDocument<'a> {
            dims: HierDims,
            latent: LatentSpec,
            event_width: u64,
            compression_rate: u64,
            params: u64,
            flops: u64,
            text: &'a PlanDocument,
            event: &'a PlanDocument,
        }
        let doc = HierDocument {
            dims,
            latent,
            event_width: plan.event_width,
            compression_rate: rate,
            params: cost.params(),
            flops: cost.flops(),
            text: &text,
            event: &event,
        };
        let mut manifest = ManifestBuilder::new("plan", dir, cli.seed, &(backbone, dims, latent, options, model));
        let json = dir.join("plan.json");
        write_json(&json, &doc)?;
        manifest.output(&json);
        let mut rows = Vec::new();
        for (stage, d) in [("text", &text), ("event", &event)] {
            for [i, op, shape] in layer_rows(&d.encoder_analysis) {
                rows.push([stage.to_string(), i, op, shape]);
            }
        }
        let csv = dir.join("plan.csv");
        write_csv(&csv, &["stage", "layer", "type", "output"], &rows)?;
        manifest.output(&csv);
        manifest.finish()?;
        for r in &rows {
            println!("{}", r.join(","));
        }
        println!("compression rate {rate}, params {}, flops {}", cost.params(), cost.flops());
        return Ok(());
    }

    let (Some(input), Some(output)) = (args.input.as_deref(), cli.out.as_deref()) else {
        bail!("plan needs `--in NxD --out NxD`, `--hier ... --latent TxC` or `--grid LMIN:LMAX`");
    };
    let (input, output) = (parse_shape(input)?, parse_shape(output)?);
    let encoder = match backbone {
        Backbone::Cnn => planner::cnn_plan(input, output)?,
        Backbone::Transformer => {
            planner::transformer_plan(input, output, args.layers.unwrap_or(planner::FLAT_TRANSFORMER_LAYERS))?
        }
    };
    let model = args.cost.model(Attention::Full)?;
    let doc = PlanDocument::build(encoder, model)?;
    let rate = planner::compression_rate(InputVolume::Flattened(input), output.volume())?;

    let mut manifest = ManifestBuilder::new("plan", dir, cli.seed, &(backbone, input, output, args.layers, model));
    let json = dir.join("plan.json");
    write_json(&json, &doc)?;
    manifest.output(&json);
    let rows = layer_rows(&doc.encoder_analysis);
    let csv = dir.join("plan.csv");
    write_csv(&csv, &["layer", "type", "output"], &rows)?;
    manifest.output(&csv);
    manifest.finish()?;
    for r in &rows {
        println!("{}", r.join(","));
    }
    println!(
        "compression rate {rate}, params {}, flops {}",
        doc.encoder_analysis.params, doc.encoder_analysis.flops
    );
    Ok(())
}

/// One row of the search-grid report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridRow {
    pub latent_size: u64,
    pub temporal: u64,
    pub channels: u64,
    pub input: String,
    pub backbone: String,
    pub compression_rate: u64,
    pub params: u64,
    pub flops: u64,
}

/// Hierarchical plans use full attention and fitted per-event widths;
/// flattened plans use linear attention.
pub fn grid_rows(l_min: u64, l_max: u64, kernel: u64) -> Result<Vec<GridRow>> {
    let hier_model = CostModel { kernel, ..CostModel::default() };
    let flat_model = CostModel { kernel, ..CostModel::linear() };
    let mut rows = Vec::new();
    for latent in planner::search_grid(l_min, l_max)? {
        for backbone in [Backbone::Cnn, Backbone::Transformer] {
            let name = match backbone {
                Backbone::Cnn => "cnn",
                Backbone::Transformer => "transformer",
            };
            let hp = planner::hierarchical_plan(planner::DEFAULT_HIER, latent, backbone, StageOptions::fitting(latent))?;
            let hc = analyzer::hierarchical_cost(&hp, &hier_model)?;
            let fp = planner::flat_plan(planner::DEFAULT_FLAT, latent, backbone, planner::FLAT_TRANSFORMER_LAYERS)?;
            let fa = analyzer::analyze(&fp, &flat_model)?;
            let row = |input: &str, rate, params, flops| GridRow {
                latent_size: latent.size(),
                temporal: latent.temporal,
                channels: latent.channels,
                input: input.to_string(),
                backbone: name.to_string(),
                compression_rate: rate,
                params,
                flops,
            };
            rows.push(row(
                "hierarchical",
                planner::compression_rate(InputVolume::Hierarchical(planner::DEFAULT_HIER), latent.size())?,
                hc.params(),
                hc.flops(),
            ));
            rows.push(row(
                "flattened",
                planner::compression_rate(InputVolume::Flattened(planner::DEFAULT_FLAT), latent.size())?,
                fa.params,
                fa.flops,
            ));
        }
    }
    Ok(rows)
}

fn plan_grid(cli: &Cli, args: &PlanArgs, grid: &str) -> Result<()> {
    let (lo, hi) = grid
        .split_once(':')
        .with_context(|| format!("grid `{grid}` is not `LMIN:LMAX`"))?;
    let (lo, hi): (u64, u64) = (lo.trim().parse()?, hi.trim().parse()?);
    let rows = grid_rows(lo, hi, args.cost.kernel)?;
    let dir = &args.dir;
    let mut manifest = ManifestBuilder::new("plan", dir, cli.seed, &(lo, hi, args.cost.kernel));
    let csv = dir.join("grid.csv");
    write_csv(
        &csv,
        &["latent_size", "temporal", "channels", "input", "backbone", "compression_rate", "params", "flops"],
        rows.iter().map(|r| {
            [
                r.latent_size.to_string(),
                r.temporal.to_string(),
                r.channels.to_string(),
                r.input.clone(),
                r.backbone.clone(),
                r.compression_rate.to_string(),
                r.params.to_string(),
                r.flops.to_string(),
            ]
        }),
    )?;
    manifest.output(&csv);
    manifest.finish()?;
    println!("{} grid rows -> {}", rows.len(), csv.display());
    Ok(())
}

#[derive(Deserialize)]
#[serde(untagged)]
enum PlanFile {
    Document(Box<PlanDocument>),
    Plan(LayerPlan),
}

#[derive(Serialize)]
struct AnalyzeReport {
    valid: bool,
    defects: Vec<PlanDefect>,
    analysis: Option<PlanAnalysis>,
}

fn analyze(cli: &Cli, args: &AnalyzeArgs, out: &Path) -> Result<()> {
    let plan = match read_json::<PlanFile>(&args.plan)? {
        PlanFile::Document(d) => d.encoder,
        PlanFile::Plan(p) => p,
    };
    let model = args.cost.model(Attention::Full)?;
    let defects = analyzer::validate_plan(&plan);
    let report = AnalyzeReport {
        valid: defects.is_empty(),
        analysis: analyzer::analyze(&plan, &model).ok(),
        defects,
    };
    let mut manifest = ManifestBuilder::new("analyze", out, cli.seed, &model);
    manifest.input(&args.plan)?;
    let path = out.join("analysis.json");
    write_json(&path, &report)?;
    manifest.output(&path);
    manifest.finish()?;
    if !report.valid {
        bail!("plan is invalid: {:?}", report.defects);
    }
    if let Some(a) = &report.analysis {
        println!("output {}, params {}, flops {}", a.trace.output(), a.params, a.flops);
    }
    Ok(())
}

#[derive(Serialize)]
struct QuantizeReport {
    fibers: usize,
    codes: usize,
    ema_steps: usize,
    indices: Vec<[usize; PIECES]>,
    commitment_distance: f64,
    commitment_loss: f64,
}

fn quantize(cli: &Cli, args: &QuantizeArgs, out: &Path) -> Result<()> {
    let z: Vec<Vec<f64>> = read_json(&args.latent)?;
    ensure!(!z.is_empty(), "{}: latent has no fibers", args.latent.display());
    let c = z[0].len();
    if let Some(bad) = z.iter().find(|f| f.len() % PIECES != 0) {
        bail!("latent channel count {} is not divisible by {PIECES}", bad.len());
    }
    ensure!(z.iter().all(|f| f.len() == c), "latent fibers differ in length");

    let mut book = match &args.codebook {
        Some(path) => read_json::<Codebook>(path)?,
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(cli.seed.unwrap_or(0));
            Codebook::random(args.codes, c / PIECES, args.decay, &mut rng)?
        }
    };
    book.check()?;
    for _ in 0..args.ema_steps {
        let result = vq::quantize(&z, &book)?;
        let width = book.width();
        let assignments: Vec<(usize, &[f64])> = result
            .indices
            .iter()
            .zip(&z)
            .flat_map(|(ids, fiber)| ids.iter().copied().zip(fiber.chunks_exact(width)))
            .collect();
        book.ema_update(&assignments)?;
    }
    let result = vq::quantize(&z, &book)?;
    let report = QuantizeReport {
        fibers: z.len(),
        codes: book.len(),
        ema_steps: args.ema_steps,
        commitment_loss: args.beta * result.commitment_distance,
        commitment_distance: result.commitment_distance,
        indices: result.indices.clone(),
    };

    #[derive(Serialize)]
    struct Settings {
        codes: usize,
        decay: f64,
        ema_steps: usize,
        beta: f64,
    }
    let settings = Settings {
        codes: args.codes,
        decay: args.decay,
        ema_steps: args.ema_steps,
        beta: args.beta,
    };
    let mut manifest = ManifestBuilder::new("quantize", out, cli.seed, &settings);
    manifest.input(&args.latent)?;
    if let Some(p) = &args.codebook {
        manifest.input(p)?;
    }
    for (name, value) in [
        ("quantize.json", serde_json::to_value(&report)?),
        ("quantized.json", serde_json::to_value(&result.quantized)?),
        ("codebook.json", serde_json::to_value(&book)?),
    ] {
        let path = out.join(name);
        write_json(&path, &value)?;
        manifest.output(&path);
    }
    manifest.finish()?;
    println!("{} fibers, commitment distance {}", report.fibers, report.commitment_distance);
    Ok(())
}

/// Reconstructed events of generated data, one sample per patient.
fn generated_samples(
    path: &Path,
    vocab: &Vocabulary,
    triples: &TripleSet,
    config: &SerializerConfig,
) -> Result<Vec<Vec<ReconstructedEvent>>> {
    if path.is_dir() {
        let generated = load_default(path)?;
        generated
            .patients
            .iter()
            .map(|p| {
                let s = serializer::build_hierarchical(p, vocab, &generated.definitions, config)?;
                Ok(serializer::detokenize_events(&s, vocab, None))
            })
            .collect()
    } else {
        let lexicon = triples.lexicon();
        Ok(read_streams(path)?
            .iter()
            .map(|(_, s)| serializer::detokenize_events(s, vocab, Some(&lexicon)))
            .collect())
    }
}

fn audit(cli: &Cli, args: &AuditArgs, out: &Path) -> Result<()> {
    let config = serializer_config(cli)?;
    let real = load_default(&args.real)?;
    let vocab = match &args.vocab {
        Some(path) => read_vocab(path)?,
        None => serializer::corpus_vocabulary(&real, &config, 1)?,
    };
    let triples = audit::build_triples(&real, &vocab)?;
    let samples = generated_samples(&args.generated, &vocab, &triples, &config)?;
    let report = audit::score(&samples, &triples, &vocab);

    let mut manifest = ManifestBuilder::new("audit", out, cli.seed, &config);
    manifest.input(&args.real)?;
    manifest.input(&args.generated)?;
    if let Some(v) = &args.vocab {
        manifest.input(v)?;
    }
    let path = out.join("audit.json");
    write_json(&path, &report)?;
    manifest.output(&path);
    let path = out.join("triples.json");
    write_json(&path, &triples)?;
    manifest.output(&path);
    manifest.finish()?;
    let show = |x: Option<f64>| x.map_or("n/a".to_string(), |v| format!("{v:.4}"));
    println!("RCE {} RUE {} RCS {}", show(report.rce), show(report.rue), show(report.rcs));
    Ok(())
}

fn token_records(path: &Path) -> Result<Vec<Vec<u32>>> {
    Ok(read_streams(path)?.into_iter().map(|(_, s)| s.tokens).collect())
}

fn privacy(cli: &Cli, args: &PrivacyArgs, out: &Path) -> Result<()> {
    let mut thresholds = args.thresholds.clone();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    let config = AttackConfig {
        n_r: args.n_r,
        thresholds,
        seed: cli.seed.unwrap_or(0),
    };
    let report = privacy::membership_attack(
        &token_records(&args.train)?,
        &token_records(&args.heldout)?,
        &token_records(&args.synthetic)?,
        &config,
    )?;

    let mut manifest = ManifestBuilder::new("privacy", out, Some(config.seed), &config);
    for p in [&args.train, &args.heldout, &args.synthetic] {
        manifest.input(p)?;
    }
    let path = out.join("privacy.json");
    write_json(&path, &report)?;
    manifest.output(&path);
    let curve = out.join("privacy_curve.csv");
    write_csv(
        &curve,
        &["threshold", "flagged", "true_positives", "precision", "recall"],
        report.results.iter().map(|r| {
            [
                r.threshold.to_string(),
                r.flagged_count.to_string(),
                r.true_positives.to_string(),
                r.precision.to_string(),
                r.recall.to_string(),
            ]
        }),
    )?;
    manifest.output(&curve);
    manifest.finish()?;
    for r in &report.results {
        println!("threshold {}: precision {} recall {}", r.threshold, r.precision, r.recall);
    }
    Ok(())
}

#[derive(Serialize)]
struct AccuracyReport {
    include_pads: bool,
    mean: Option<f64>,
    records: Vec<(String, Option<f64>)>,
}

#[derive(Deserialize)]
struct ScoreRow {
    score: f64,
    label: u8,
}

fn metrics(cli: &Cli, command: &MetricsCommand, out: &Path) -> Result<()> {
    match command {
        MetricsCommand::Accuracy {
            reference,
            hypothesis,
            include_pads,
        } => {
            let refs = read_streams(reference)?;
            let hyps = read_streams(hypothesis)?;
            ensure!(
                refs.len() == hyps.len(),
                "{} has {} records, {} has {}",
                reference.display(),
                refs.len(),
                hypothesis.display(),
                hyps.len()
            );
            let mut records = Vec::with_capacity(refs.len());
            for (i, ((id, r), (_, h))) in refs.iter().zip(&hyps).enumerate() {
                let acc = metrics::token_accuracy(r, h, *include_pads).with_context(|| format!("record {}", i + 1))?;
                records.push((id.clone(), acc));
            }
            let scored: Vec<f64> = records.iter().filter_map(|(_, a)| *a).collect();
            let report = AccuracyReport {
                include_pads: *include_pads,
                mean: (!scored.is_empty()).then(|| scored.iter().sum::<f64>() / scored.len() as f64),
                records,
            };
            let mut manifest = ManifestBuilder::new("metrics accuracy", out, cli.seed, &report.include_pads);
            manifest.input(reference)?;
            manifest.input(hypothesis)?;
            let path = out.join("accuracy.json");
            write_json(&path, &report)?;
            manifest.output(&path);
            manifest.finish()?;
            println!("mean token accuracy {:?}", report.mean);
        }
        MetricsCommand::Auroc { scores } => {
            let mut reader = csv::Reader::from_path(scores).with_context(|| scores.display().to_string())?;
            let mut data = Vec::new();
            for (i, row) in reader.deserialize::<ScoreRow>().enumerate() {
                let row = row.with_context(|| format!("{}, row {}", scores.display(), i + 1))?;
                ensure!(row.label <= 1, "{}, row {}: label must be 0 or 1", scores.display(), i + 1);
                data.push((row.score, row.label == 1));
            }
            let value = metrics::auroc(&data)?;

            #[derive(Serialize)]
            struct AurocReport {
                auroc: f64,
                positives: usize,
                negatives: usize,
            }
            let positives = data.iter().filter(|d| d.1).count();
            let report = AurocReport {
                auroc: value,
                positives,
                negatives: data.len() - positives,
            };
            let mut manifest = ManifestBuilder::new("metrics auroc", out, cli.seed, &());
            manifest.input(scores)?;
            let path = out.join("auroc.json");
            write_json(&path, &report)?;
            manifest.output(&path);
            manifest.finish()?;
            println!("AUROC {value}");
        }
    }
    Ok(())
}
