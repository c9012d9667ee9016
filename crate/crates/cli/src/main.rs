use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use vcd_core::bench::{bench_runtime, overall_ratio, BenchOptions, RuntimeRow};
use vcd_core::dataset::{
    build_heal_pairs, build_pope_split, generate_scenes, ingest_dataset, write_pairs, write_queries, write_scenes,
    DatasetFormat, SplitSpec,
};
use vcd_core::decoder::{decode_baseline, decode_vcd, session_cache_check, DecodeConfig, DecodeTrace, Strategy};
use vcd_core::distortion::{apply_distortion, DistortionSpec, Preset};
use vcd_core::experiment::{
    distort_scene, run_heal_eval, run_pope_eval, Benchmark, EvalOptions, EvalOutput, ProviderSpec, RunManifest,
    MANIFEST_SCHEMA_VERSION,
};
use vcd_core::lexicon::Lexicon;
use vcd_core::metrics::write_reports;
use vcd_core::plot::{plot_chair_bars, plot_runtime, plot_split_bars};
use vcd_core::provider::LogitProvider;
use vcd_core::reference::{presence_target, ReferenceModel, ReferenceModelParams};
use vcd_core::remote::HttpProvider;
use vcd_core::scene::{build_prompt, HealProbe, Presence, Profile, Query, SceneGraph, Split};

/// Failure with the process exit code it maps to.
#[derive(Debug)]
enum CliError {
    /// Bad flags, missing inputs, invalid configuration.
    Usage(String),
    /// Anything that went wrong while running.
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn usage(e: impl fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn runtime(e: impl fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Parser)]
#[command(
    name = "vcd",
    version,
    about = "Dual-context contrastive decoding over 3D scene graphs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Apply a distortion to one scene file.
    Distort(DistortArgs),
    /// Generate a synthetic corpus: scenes, presence questions and task pairs.
    Generate(GenerateArgs),
    /// Run baseline and dual-context decoding over a dataset and score both.
    Eval(EvalArgs),
    /// Answer one question about one scene, with and without the distorted context.
    Decode(DecodeArgs),
    /// Time single- and dual-context decoding over scene sizes.
    BenchRuntime(BenchArgs),
    /// Check that a provider answers and that its sessions agree with replay.
    CheckProvider(CheckArgs),
}

#[derive(Args, Clone)]
struct DistortionArgs {
    /// Distortion preset tag, e.g. Low-SemSub-Geom.
    #[arg(long, default_value = "Low-SemSub-Geom")]
    preset: String,
    /// Distortion spec JSON; overrides --preset.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Noise level for every geometric component.
    #[arg(long)]
    sigma: Option<f64>,
    /// Affected fraction for every fraction-driven component.
    #[arg(long)]
    fraction: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl DistortionArgs {
    fn spec(&self) -> CliResult<DistortionSpec> {
        let mut spec = match &self.spec {
            Some(path) => {
                let text = read(path)?;
                let spec: DistortionSpec =
                    serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
                spec.with_seed(self.seed)
            }
            None => self.preset.parse::<Preset>().map_err(usage)?.spec(self.seed),
        };
        if let Some(s) = self.sigma {
            spec.override_sigma(s);
        }
        if let Some(f) = self.fraction {
            spec.override_fraction(f);
        }
        spec.validate().map_err(usage)?;
        Ok(spec)
    }
}

#[derive(Args, Clone)]
struct ProviderArgs {
    /// Remote logit provider base URL.
    #[arg(long, env = "VCD_PROVIDER_URL")]
    provider_url: Option<String>,
    /// Reference model preset, used when no provider URL is given.
    #[arg(long, default_value = "over-affirming")]
    model: String,
    /// Reference model parameters as JSON; overrides --model.
    #[arg(long)]
    model_params: Option<PathBuf>,
}

impl ProviderArgs {
    fn spec(&self) -> CliResult<ProviderSpec> {
        if let Some(url) = &self.provider_url {
            return Ok(ProviderSpec::Remote { url: url.clone() });
        }
        let (preset, params) = match &self.model_params {
            Some(path) => {
                let params: ReferenceModelParams =
                    serde_json::from_str(&read(path)?).map_err(|e| usage(format!("{}: {e}", path.display())))?;
                ("custom".to_string(), params)
            }
            None => {
                let params = ReferenceModelParams::preset(&self.model).ok_or_else(|| {
                    usage(format!(
                        "unknown model preset {:?}; expected one of {}",
                        self.model,
                        ReferenceModelParams::PRESETS.join(", ")
                    ))
                })?;
                (self.model.clone(), params)
            }
        };
        Ok(ProviderSpec::Reference { preset, params })
    }
}

fn connect(spec: &ProviderSpec) -> CliResult<Box<dyn LogitProvider>> {
    match spec {
        ProviderSpec::Reference { params, .. } => Ok(Box::new(ReferenceModel::new(params.clone()).map_err(usage)?)),
        ProviderSpec::Remote { url } => Ok(Box::new(
            HttpProvider::connect(url).map_err(|e| runtime(format!("provider {url}: {e}")))?,
        )),
    }
}

#[derive(Args, Clone)]
struct DecodeFlags {
    /// Contrast strength; 0 reproduces plain decoding.
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    #[arg(long, default_value_t = 32)]
    max_tokens: usize,
    #[arg(long, value_enum, default_value_t = StrategyArg::Greedy)]
    strategy: StrategyArg,
    /// Recompute every step from scratch instead of stepping sessions.
    #[arg(long)]
    no_cache: bool,
    /// Issue the two contexts' provider calls one at a time.
    #[arg(long)]
    no_batch: bool,
    /// Keep per-step logits in decode traces.
    #[arg(long)]
    retain_logits: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Greedy,
    Sample,
}

impl DecodeFlags {
    fn config(&self, seed: u64) -> CliResult<DecodeConfig> {
        let cfg = DecodeConfig {
            alpha: self.alpha,
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            strategy: match self.strategy {
                StrategyArg::Greedy => Strategy::Greedy,
                StrategyArg::Sample => Strategy::Sample,
            },
            use_cache: !self.no_cache,
            batch_dual: !self.no_batch,
            sample_seed: seed,
            retain_logits: self.retain_logits,
            ..DecodeConfig::default()
        };
        cfg.validate().map_err(usage)?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct DistortArgs {
    /// Scene JSON file.
    #[arg(long)]
    scene: PathBuf,
    #[command(flatten)]
    distortion: DistortionArgs,
    /// Output scene JSON file.
    #[arg(long)]
    out: PathBuf,
    /// Also write the resolved distortion spec next to the output.
    #[arg(long)]
    write_spec: bool,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    scenes: usize,
    #[arg(long, default_value_t = 5)]
    min_objects: usize,
    #[arg(long, default_value_t = 50)]
    max_objects: usize,
    /// Absent-object questions per scene and split.
    #[arg(long, default_value_t = 3)]
    negatives: usize,
    /// Question splits to build; all three by default.
    #[arg(long, value_delimiter = ',', default_value = "random,popular,adversarial")]
    splits: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum BenchmarkArg {
    Pope,
    Heal,
}

#[derive(Args)]
struct EvalArgs {
    /// Query or pair JSONL file with a `scenes/` directory beside it.
    #[arg(long, required_unless_present = "manifest")]
    dataset: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = BenchmarkArg::Pope)]
    benchmark: BenchmarkArg,
    /// Repeat the run recorded in a manifest; other run flags are ignored.
    #[arg(long, conflicts_with = "dataset")]
    manifest: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    provider: ProviderArgs,
    #[command(flatten)]
    distortion: DistortionArgs,
    #[command(flatten)]
    decode: DecodeFlags,
    /// Answer checking: `decision` ignores the grounding reference.
    #[arg(long, value_enum, default_value_t = RuleArg::Reference)]
    rule: RuleArg,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Dual-context jobs per batched provider round trip.
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    /// Write SVG charts next to the reports.
    #[arg(long)]
    plot: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum RuleArg {
    Reference,
    Decision,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long)]
    scene: PathBuf,
    /// Question or task text.
    #[arg(long)]
    question: String,
    #[arg(long, value_enum, default_value_t = ProfileArg::Geometry)]
    profile: ProfileArg,
    #[command(flatten)]
    provider: ProviderArgs,
    #[command(flatten)]
    distortion: DistortionArgs,
    #[command(flatten)]
    decode: DecodeFlags,
    /// Write both traces as JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Geometry,
    State,
}

#[derive(Args)]
struct BenchArgs {
    /// Scene sizes in objects.
    #[arg(long, value_delimiter = ',', default_value = "5,10,20,35,50")]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 30)]
    repeats: usize,
    #[arg(long, default_value_t = 5)]
    warmup: usize,
    #[command(flatten)]
    provider: ProviderArgs,
    #[command(flatten)]
    distortion: DistortionArgs,
    #[command(flatten)]
    decode: DecodeFlags,
    /// Directory for runtime.json / runtime.csv (and runtime.svg with --plot).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    plot: bool,
}

#[derive(Args)]
struct CheckArgs {
    #[command(flatten)]
    provider: ProviderArgs,
    /// Tokens fed when comparing stepped and replayed logits.
    #[arg(long, default_value_t = 8)]
    tokens: usize,
}

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult {
    let text = serde_json::to_string_pretty(value).map_err(runtime)?;
    fs::write(path, text + "\n").map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> CliResult {
    fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339()
}

fn cmd_distort(a: DistortArgs) -> CliResult {
    let scene = SceneGraph::load(&a.scene).map_err(|e| usage(format!("{}: {e}", a.scene.display())))?;
    let spec = a.distortion.spec()?;
    let out = apply_distortion(&scene, &spec).map_err(runtime)?;
    out.save(&a.out)
        .map_err(|e| runtime(format!("{}: {e}", a.out.display())))?;
    if a.write_spec {
        write_json(&a.out.with_extension("spec.json"), &spec)?;
    }
    let changed = out
        .objects
        .iter()
        .filter(|o| scene.objects.iter().any(|x| x.id == o.id && x != *o))
        .count();
    println!(
        "{}: {} -> {} objects, {changed} kept objects changed",
        a.out.display(),
        scene.len(),
        out.len()
    );
    Ok(())
}

fn cmd_generate(a: GenerateArgs) -> CliResult {
    if a.min_objects == 0 || a.min_objects > a.max_objects {
        return Err(usage("need 1 <= --min-objects <= --max-objects"));
    }
    let splits: Vec<Split> = a
        .splits
        .iter()
        .map(|s| match s.parse::<Split>() {
            Ok(split @ (Split::Random | Split::Popular | Split::Adversarial)) => Ok(split),
            _ => Err(usage(format!(
                "unknown split {s:?}; expected random, popular or adversarial"
            ))),
        })
        .collect::<CliResult<_>>()?;
    let lex = Lexicon::builtin();
    let scenes = generate_scenes(a.scenes, a.min_objects..=a.max_objects, lex, a.seed).map_err(runtime)?;
    create_dir(&a.out)?;
    write_scenes(&a.out, &scenes).map_err(runtime)?;
    let mut queries = Vec::new();
    for split in splits {
        let spec = SplitSpec::from_corpus(&scenes, split, a.negatives, lex);
        queries.extend(build_pope_split(&scenes, &spec, a.seed).map_err(runtime)?);
    }
    write_queries(&a.out.join("queries.jsonl"), &queries).map_err(runtime)?;
    let mut pairs = Vec::new();
    for probe in HealProbe::ALL {
        pairs.extend(build_heal_pairs(&scenes, probe, lex, a.seed).map_err(runtime)?);
    }
    write_pairs(&a.out.join("heal.jsonl"), &pairs).map_err(runtime)?;
    println!(
        "{}: {} scenes, {} questions, {} task pairs",
        a.out.display(),
        scenes.len(),
        queries.len(),
        pairs.len()
    );
    Ok(())
}

fn run_manifest(m: &RunManifest) -> CliResult<EvalOutput> {
    if !m.dataset.is_file() {
        return Err(usage(format!("dataset not found: {}", m.dataset.display())));
    }
    let provider = connect(&m.provider)?;
    let (format, what) = match m.benchmark {
        Benchmark::Pope => (DatasetFormat::Queries, "questions"),
        Benchmark::Heal => (DatasetFormat::HealPairs, "task pairs"),
    };
    let corpus = ingest_dataset(&m.dataset, format).map_err(usage)?;
    let n = match m.benchmark {
        Benchmark::Pope => corpus.queries.len(),
        Benchmark::Heal => corpus.pairs.len(),
    };
    if n == 0 {
        return Err(usage(format!("{} holds no {what}", m.dataset.display())));
    }
    log::info!("{n} {what} from {}", m.dataset.display());
    let out = match m.benchmark {
        Benchmark::Pope => run_pope_eval(provider.as_ref(), &corpus.scenes, &corpus.queries, &m.options),
        Benchmark::Heal => run_heal_eval(provider.as_ref(), &corpus.pairs, &m.options),
    };
    out.map_err(runtime)
}

fn manifest_from_flags(a: &EvalArgs) -> CliResult<RunManifest> {
    let dataset = a.dataset.clone().ok_or_else(|| usage("--dataset is required"))?;
    let mut decode = a.decode.config(a.distortion.seed)?;
    decode.retain_logits = a.decode.retain_logits;
    let options = EvalOptions {
        decode,
        distortion: a.distortion.spec()?,
        rule: match a.rule {
            RuleArg::Reference => vcd_core::metrics::CorrectnessRule::DecisionAndReference,
            RuleArg::Decision => vcd_core::metrics::CorrectnessRule::DecisionOnly,
        },
        jobs: a.jobs,
        batch_size: a.batch_size,
    };
    options.validate().map_err(usage)?;
    Ok(RunManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        benchmark: match a.benchmark {
            BenchmarkArg::Pope => Benchmark::Pope,
            BenchmarkArg::Heal => Benchmark::Heal,
        },
        dataset,
        provider: a.provider.spec()?,
        options,
        started_at: String::new(),
        finished_at: String::new(),
    })
}

fn cmd_eval(a: EvalArgs) -> CliResult {
    let mut manifest = match &a.manifest {
        Some(path) => {
            let m: RunManifest =
                serde_json::from_str(&read(path)?).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            m.options.validate().map_err(usage)?;
            m
        }
        None => manifest_from_flags(&a)?,
    };
    manifest.started_at = now();
    let out = run_manifest(&manifest)?;
    manifest.finished_at = now();

    create_dir(&a.out)?;
    write_reports(&a.out, "report", &[out.baseline.clone(), out.vcd.clone()]).map_err(runtime)?;
    let mut transcripts = Vec::new();
    for t in &out.transcripts {
        transcripts.push(serde_json::to_string(t).map_err(runtime)?);
    }
    fs::write(a.out.join("transcripts.jsonl"), transcripts.join("\n") + "\n").map_err(runtime)?;
    write_json(&a.out.join("manifest.json"), &manifest)?;
    if a.plot {
        let result = match manifest.benchmark {
            Benchmark::Pope => plot_split_bars(&a.out.join("splits.svg"), &out.baseline, &out.vcd),
            Benchmark::Heal => plot_chair_bars(&a.out.join("chair.svg"), &out.baseline, &out.vcd),
        };
        result.map_err(|e| runtime(format!("plot: {e}")))?;
    }
    print_summary(&out);
    let total = out.transcripts.len() / 2;
    let failed = out.baseline.failed_jobs + out.vcd.failed_jobs;
    if failed > 0 {
        eprintln!("warning: {failed} decode jobs failed; see transcripts.jsonl");
    }
    if total > 0 && out.baseline.failed_jobs == total && out.vcd.failed_jobs == total {
        return Err(runtime("every decode job failed"));
    }
    Ok(())
}

fn print_summary(out: &EvalOutput) {
    for r in [&out.baseline, &out.vcd] {
        if let Some(all) = r.splits.get("all") {
            let m = &all.metrics;
            println!(
                "{:<8} acc {:.4}  P {:.4}  R {:.4}  F1 {:.4}  yes {:.4}  (n={})",
                r.label,
                m.accuracy,
                m.precision,
                m.recall,
                m.f1,
                m.yes_rate,
                all.counts.total()
            );
        }
        if let Some(c) = &r.chair {
            println!(
                "{:<8} C_O {:.4} ({}/{})  C_S {:.4} ({}/{})",
                r.label,
                c.objects.rate,
                c.objects.hallucinated,
                c.objects.mentioned,
                c.states.rate,
                c.states.hallucinated,
                c.states.mentioned
            );
        }
    }
}

#[derive(Serialize)]
struct DecodeOutput<'a> {
    original_prompt: &'a str,
    distorted_prompt: &'a str,
    baseline: TraceOut,
    vcd: TraceOut,
}

#[derive(Serialize)]
struct TraceOut {
    text: String,
    trace: DecodeTrace,
}

fn cmd_decode(a: DecodeArgs) -> CliResult {
    let scene = SceneGraph::load(&a.scene).map_err(|e| usage(format!("{}: {e}", a.scene.display())))?;
    let spec = a.distortion.spec()?;
    let cfg = a.decode.config(a.distortion.seed)?;
    let provider = connect(&a.provider.spec()?)?;
    let profile = match a.profile {
        ProfileArg::Geometry => Profile::Geometry,
        ProfileArg::State => Profile::State,
    };
    // Only the text reaches the prompt; the target matters for scoring.
    let target = presence_target(&a.question).unwrap_or_else(|| a.question.clone());
    let query = Query {
        text: a.question.clone(),
        ..Query::presence(&target, Presence::Absent, Split::Random)
    };
    let distorted = distort_scene(&scene, &spec).map_err(runtime)?;
    let original = build_prompt(&scene, &query, profile).map_err(usage)?;
    let contrast = build_prompt(&distorted, &query, profile).map_err(usage)?;
    let base = decode_baseline(provider.as_ref(), &original, &cfg).map_err(runtime)?;
    let vcd = decode_vcd(provider.as_ref(), &original, &contrast, &cfg).map_err(runtime)?;
    let vocab = provider.vocabulary();
    let out = DecodeOutput {
        original_prompt: &original,
        distorted_prompt: &contrast,
        baseline: TraceOut {
            text: vocab.decode(&base.tokens),
            trace: base,
        },
        vcd: TraceOut {
            text: vocab.decode(&vcd.tokens),
            trace: vcd,
        },
    };
    println!("baseline: {}", out.baseline.text);
    println!("vcd:      {}", out.vcd.text);
    if let Some(path) = &a.out {
        write_json(path, &out)?;
    }
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> CliResult {
    if a.sizes.is_empty() {
        return Err(usage("--sizes needs at least one scene size"));
    }
    let opts = BenchOptions {
        sizes: a.sizes.clone(),
        repeats: a.repeats,
        warmup: a.warmup,
        decode: a.decode.config(a.distortion.seed)?,
        distortion: a.distortion.spec()?,
        seed: a.distortion.seed,
    };
    let provider = connect(&a.provider.spec()?)?;
    let rows = bench_runtime(provider.as_ref(), &opts).map_err(|e| match e {
        vcd_core::experiment::ExperimentError::Config(m) => usage(m),
        other => runtime(other),
    })?;
    println!("objects  single_ms  dual_ms  ratio");
    for r in &rows {
        println!(
            "{:>7}  {:>9.3}  {:>7.3}  {:.3}",
            r.objects, r.single_median_ms, r.dual_median_ms, r.ratio
        );
    }
    println!("overall dual/single: {:.3}", overall_ratio(&rows));
    if let Some(dir) = &a.out {
        create_dir(dir)?;
        write_json(&dir.join("runtime.json"), &rows)?;
        write_runtime_csv(&dir.join("runtime.csv"), &rows)?;
        if a.plot {
            plot_runtime(&dir.join("runtime.svg"), &rows).map_err(|e| runtime(format!("plot: {e}")))?;
        }
    } else if a.plot {
        return Err(usage("--plot needs --out"));
    }
    Ok(())
}

fn write_runtime_csv(path: &Path, rows: &[RuntimeRow]) -> CliResult {
    let mut f = fs::File::create(path).map_err(runtime)?;
    let mut text = String::from("objects,repeats,single_median_ms,dual_median_ms,single_mean_ms,dual_mean_ms,ratio\n");
    for r in rows {
        text += &format!(
            "{},{},{},{},{},{},{}\n",
            r.objects, r.repeats, r.single_median_ms, r.dual_median_ms, r.single_mean_ms, r.dual_mean_ms, r.ratio
        );
    }
    f.write_all(text.as_bytes()).map_err(runtime)
}

fn cmd_check(a: CheckArgs) -> CliResult {
    let provider = connect(&a.provider.spec()?)?;
    let vocab = provider.vocabulary();
    println!(
        "vocabulary: {} tokens, eos {:?}",
        vocab.len(),
        vocab.token(vocab.eos()).unwrap_or("?")
    );
    let scene = generate_scenes(1, 5..=5, Lexicon::builtin(), 0)
        .map_err(runtime)?
        .remove(0);
    let query = Query::presence(&scene.objects[0].category, Presence::Present, Split::Random);
    let prompt = build_prompt(&scene, &query, Profile::Geometry).map_err(runtime)?;
    if !session_cache_check(provider.as_ref(), &prompt, a.tokens) {
        return Err(runtime("stepped logits disagree with replayed logits"));
    }
    println!("session replay check: ok over {} tokens", a.tokens);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Distort(a) => cmd_distort(a),
        Command::Generate(a) => cmd_generate(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Decode(a) => cmd_decode(a),
        Command::BenchRuntime(a) => cmd_bench(a),
        Command::CheckProvider(a) => cmd_check(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
