use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use crimelink::evaluation::{
    cost_weight, evaluate, grid_search, pick_threshold, roc_curve, split, write_roc_csv, CostSpec, GridCell, GridSpec,
    ThresholdSource,
};
use crimelink::explain::{background_sample, global_shap};
use crimelink::harness::{
    self, prepare_unknown, suggested_ladders, train_method, verify_manifest, MethodConfig, PipelineConfig,
};
use crimelink::ingest::{load_cases, load_linkage, preprocess, Codebook, PreprocessConfig};
use crimelink::models::{predict, Family, ModelFile};
use crimelink::network::{build_graph, louvain, prevalence, LinkGraph};
use crimelink::pairing::{build_pairs, build_pairs_summarized, PairwiseDataset};
use crimelink::synth::{self, SynthConfig, VictimDistribution};

#[derive(Parser)]
#[command(name = "crimelink", version, about = "Pairwise crime linkage under class imbalance")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic cases, codebook and linkage register CSVs.
    Synth(SynthArgs),
    /// Drop homogeneous and sparse features, then impute the rest.
    Preprocess(PreprocessArgs),
    /// Build the pairwise match-vector dataset.
    Pairs(PairsArgs),
    /// Fit one method and save the model.
    Train(TrainArgs),
    /// Rank a parameter grid for one method.
    Grid(GridArgs),
    /// Score a labeled dataset with a saved model.
    Eval(EvalArgs),
    /// Mean kernel SHAP attributions of a saved model.
    Explain(ExplainArgs),
    /// Score all pairs of unknown-status cases and keep those above a threshold.
    Predict(PredictArgs),
    /// Louvain communities and prevalence table of a predicted link graph.
    Cluster(ClusterArgs),
    /// Run the full configured pipeline into a run directory, or verify one.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Victims per suspect, comma separated; defaults to the solved-data shape.
    #[arg(long, value_delimiter = ',', conflicts_with_all = ["geometric_mean", "unknown"])]
    histogram: Option<Vec<usize>>,
    /// Draw victim counts as 1 + Geometric with this mean.
    #[arg(long, requires = "n_suspects")]
    geometric_mean: Option<f64>,
    #[arg(long)]
    n_suspects: Option<usize>,
    /// Use the 300-case unknown-status shape.
    #[arg(long)]
    unknown: bool,
    #[arg(long, default_value_t = 51)]
    n_features: usize,
    #[arg(long, default_value_t = 0.3)]
    signature_density: f64,
    #[arg(long, default_value_t = 0.1)]
    noise_flip: f64,
    #[arg(long, default_value_t = 0.05)]
    missing_rate: f64,
    #[arg(long, default_value = "case")]
    id_prefix: String,
}

#[derive(Args)]
struct PreprocessArgs {
    #[arg(long)]
    cases: PathBuf,
    #[arg(long)]
    codebook: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.25)]
    missing_threshold: f64,
    /// Feature kept regardless of missingness; repeatable.
    #[arg(long)]
    exempt: Vec<String>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct PairsArgs {
    #[arg(long)]
    cases: PathBuf,
    #[arg(long)]
    codebook: PathBuf,
    #[arg(long)]
    linkage: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

/// A labeled pairwise dataset, either a pairs CSV or complete cases to pair.
/// LR1 and LR6 need the cases form.
#[derive(Args)]
struct DataArgs {
    #[arg(long, conflicts_with_all = ["cases", "codebook"])]
    pairs: Option<PathBuf>,
    /// Complete (preprocessed) cases CSV.
    #[arg(long, requires = "codebook")]
    cases: Option<PathBuf>,
    #[arg(long)]
    codebook: Option<PathBuf>,
    #[arg(long)]
    linkage: Option<PathBuf>,
}

impl DataArgs {
    fn load(&self) -> Result<(PairwiseDataset, Option<Codebook>)> {
        if let Some(p) = &self.pairs {
            let file = fs::File::open(p).with_context(|| format!("opening {}", p.display()))?;
            return Ok((PairwiseDataset::from_reader(file, &p.display().to_string())?, None));
        }
        let (Some(cases), Some(codebook)) = (&self.cases, &self.codebook) else {
            bail!("pass --pairs or --cases with --codebook");
        };
        let (table, codebook) = load_cases(cases, codebook)?;
        let register = self.linkage.as_deref().map(load_linkage).transpose()?;
        Ok((build_pairs_summarized(&table, register.as_ref(), &codebook)?, Some(codebook)))
    }
}

#[derive(Args)]
struct MethodArgs {
    /// LR1, LR6, EN, SVM, RF or XGB.
    #[arg(long)]
    family: Family,
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    kf: bool,
    #[arg(long)]
    rose: bool,
    #[arg(long)]
    smote: bool,
    /// Parameter as KEY=VALUE, e.g. c=0.014 or kf_k=1; repeatable.
    #[arg(long = "param", value_parser = parse_param)]
    params: Vec<(String, f64)>,
}

impl MethodArgs {
    fn method(&self) -> Result<MethodConfig> {
        let mut m = MethodConfig::new(self.name.clone().unwrap_or_else(|| self.family.to_string()), self.family);
        m.kf = self.kf;
        m.rose = self.rose;
        m.smote = self.smote;
        m.params = self.params.iter().cloned().collect();
        m.validate()?;
        Ok(m)
    }
}

fn parse_param(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or("expected KEY=VALUE")?;
    let v = v.trim().parse::<f64>().map_err(|e| format!("{k}: {e}"))?;
    Ok((k.trim().to_string(), v))
}

fn parse_ladder(s: &str) -> Result<(String, Vec<f64>), String> {
    let (k, v) = s.split_once('=').ok_or("expected KEY=V1,V2,...")?;
    let values = v
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| format!("{k}: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((k.trim().to_string(), values))
}

#[derive(Args)]
struct CostArgs {
    #[arg(long, default_value_t = 1690.0)]
    fn_cost: f64,
    #[arg(long, default_value_t = 1040.0)]
    fp_cost: f64,
    /// Linked-pair prevalence; the dataset's when omitted.
    #[arg(long)]
    prevalence: Option<f64>,
}

impl CostArgs {
    fn weight(&self, data: &PairwiseDataset) -> Result<f64> {
        Ok(cost_weight(&CostSpec {
            fn_cost: self.fn_cost,
            fp_cost: self.fp_cost,
            prevalence: self.prevalence.unwrap_or_else(|| data.prevalence()),
        })?)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    method: MethodArgs,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GridArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    method: MethodArgs,
    #[command(flatten)]
    cost: CostArgs,
    /// Ladder as KEY=V1,V2,...; repeatable. Defaults to the suggested ladders.
    #[arg(long = "ladder", value_parser = parse_ladder)]
    ladders: Vec<(String, Vec<f64>)>,
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
    /// Rank cells and pick thresholds on the held-out split itself.
    #[arg(long)]
    paper_mode: bool,
    #[arg(long, default_value_t = 3)]
    threshold_folds: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    cost: CostArgs,
    /// Fixed threshold; otherwise the cost-weighted optimum on this data.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    roc: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExplainArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 1024)]
    n_coalitions: usize,
    #[arg(long, default_value_t = 100)]
    background: usize,
    #[arg(long, default_value_t = 100)]
    max_instances: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Unknown-status cases CSV; missing cells are imputed.
    #[arg(long)]
    cases: PathBuf,
    #[arg(long)]
    codebook: PathBuf,
    #[arg(long)]
    threshold: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ClusterArgs {
    /// graph.json written by `predict`.
    #[arg(long)]
    graph: PathBuf,
    #[arg(long, default_value_t = 2.0)]
    resolution: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// TOML pipeline configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    paper_mode: bool,
    /// Method to run, by name; repeatable. All configured methods by default.
    #[arg(long = "method")]
    methods: Vec<String>,
    /// Write the effective configuration to this file and exit.
    #[arg(long)]
    write_config: Option<PathBuf>,
    /// Re-hash a run directory against its manifest instead of running.
    #[arg(long, conflicts_with_all = ["config", "out", "write_config"])]
    verify: Option<PathBuf>,
}

fn write_json<T: serde::Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn create(path: &Path) -> Result<fs::File> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::File::create(path).with_context(|| format!("creating {}", path.display()))
}

fn synth_cmd(a: SynthArgs) -> Result<()> {
    let (n_suspects, victims) = if a.unknown {
        let h = synth::unknown_histogram();
        (h.len(), VictimDistribution::Histogram(h))
    } else if let Some(mean) = a.geometric_mean {
        (a.n_suspects.expect("required by clap"), VictimDistribution::Geometric { mean })
    } else {
        let h = a.histogram.unwrap_or_else(|| synth::DEFAULT_HISTOGRAM.to_vec());
        (h.len(), VictimDistribution::Histogram(h))
    };
    let cfg = SynthConfig {
        n_suspects,
        victims_per_suspect: victims,
        n_features: a.n_features,
        signature_density: a.signature_density,
        noise_flip: a.noise_flip,
        missing_rate: a.missing_rate,
        seed: a.seed,
        id_prefix: a.id_prefix,
    };
    let data = synth::generate(&cfg)?;
    fs::create_dir_all(&a.out)?;
    data.table.to_writer(create(&a.out.join("cases.csv"))?)?;
    data.codebook.to_writer(create(&a.out.join("codebook.csv"))?)?;
    data.register.to_writer(create(&a.out.join("linkage.csv"))?)?;
    eprintln!(
        "{} cases, {} suspects, {} features -> {}",
        data.table.n_cases(),
        data.register.n_suspects(),
        data.codebook.len(),
        a.out.display()
    );
    Ok(())
}

fn preprocess_cmd(a: PreprocessArgs) -> Result<()> {
    let (table, codebook) = load_cases(&a.cases, &a.codebook)?;
    let cfg = PreprocessConfig {
        missing_threshold: a.missing_threshold,
        exempt: a.exempt.into_iter().collect(),
        seed: a.seed,
    };
    let (table, codebook, report) = preprocess(&table, &codebook, &cfg)?;
    fs::create_dir_all(&a.out)?;
    table.to_writer(create(&a.out.join("cases.csv"))?)?;
    codebook.to_writer(create(&a.out.join("codebook.csv"))?)?;
    write_json(Some(&a.out.join("preprocess_report.json")), &report)?;
    eprintln!(
        "{} of {} features retained, {} cells imputed",
        report.retained_features, report.initial_features, report.imputed_cells
    );
    Ok(())
}

fn pairs_cmd(a: PairsArgs) -> Result<()> {
    let (table, _) = load_cases(&a.cases, &a.codebook)?;
    let register = a.linkage.as_deref().map(load_linkage).transpose()?;
    let pairs = build_pairs(&table, register.as_ref())?;
    pairs.to_writer(create(&a.out)?)?;
    eprintln!("{} pairs ({} linked)", pairs.len(), pairs.n_linked());
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let (data, codebook) = a.data.load()?;
    let method = a.method.method()?;
    let model = train_method(&method, &GridCell::new(), codebook.as_ref(), &data, a.seed)?;
    ModelFile::new(model, data.feature_names.clone(), a.seed).save(&a.out)?;
    eprintln!("{} trained on {} pairs -> {}", method.name, data.len(), a.out.display());
    Ok(())
}

fn grid_cmd(a: GridArgs) -> Result<()> {
    let (data, codebook) = a.data.load()?;
    let mut method = a.method.method()?;
    method.grid = if a.ladders.is_empty() {
        suggested_ladders(&method)
    } else {
        a.ladders.into_iter().collect::<BTreeMap<_, _>>()
    };
    method.validate()?;
    if method.grid.is_empty() {
        bail!("{} has no tunable parameters", method.family);
    }
    let r = a.cost.weight(&data)?;
    let (train, held_out) = split(&data, a.train_fraction, a.seed, true)?;
    let source = if a.paper_mode {
        ThresholdSource::EvalSet
    } else {
        ThresholdSource::HeldOut { folds: a.threshold_folds }
    };
    let spec = GridSpec {
        family: method.family,
        ladders: method.grid.clone(),
        seed: a.seed,
    };
    let results = grid_search(&spec, &train, &held_out, r, source, |cell, d, s| {
        train_method(&method, cell, codebook.as_ref(), d, s)
    })?;
    if let Some(best) = results.first() {
        eprintln!(
            "{} cells; best {:?}: SE {:?} SP {:?}",
            results.len(),
            best.params,
            best.metrics.se,
            best.metrics.sp
        );
    }
    write_json(a.out.as_deref(), &results)
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let model = ModelFile::load(&a.model)?;
    let (data, _) = a.data.load()?;
    let scores = predict(&model.model, &data)?;
    let labels = data.labels();
    let threshold = match a.threshold {
        Some(t) => t,
        None => pick_threshold(&labels, &scores, a.cost.weight(&data)?)?.threshold,
    };
    let report = evaluate(&labels, &scores, threshold)?;
    if let Some(p) = &a.roc {
        write_roc_csv(create(p)?, &roc_curve(&labels, &scores)?)?;
    }
    write_json(a.out.as_deref(), &report)
}

fn explain_cmd(a: ExplainArgs) -> Result<()> {
    let model = ModelFile::load(&a.model)?;
    let scorer = model.model.as_match_scorer()?;
    let (data, _) = a.data.load()?;
    let background = background_sample(&data, a.background, crimelink::seed::derive_seed(a.seed, "shap-background", 0));
    let instances = background_sample(&data, a.max_instances, crimelink::seed::derive_seed(a.seed, "shap-instances", 0));
    let g = global_shap(scorer, &instances, &background, a.n_coalitions, a.seed)?;
    match &a.out {
        Some(p) => g.to_csv(create(p)?)?,
        None => g.to_csv(std::io::stdout())?,
    }
    Ok(())
}

fn predict_cmd(a: PredictArgs) -> Result<()> {
    let file = ModelFile::load(&a.model)?;
    let (table, codebook) = load_cases(&a.cases, &a.codebook)?;
    let retained = codebook.restrict(&file.feature_names)?;
    let table = prepare_unknown(&table, &retained, a.seed)?;
    let pairs = build_pairs_summarized(&table, None, &retained)?;
    let scores = predict(&file.model, &pairs)?;
    let graph = build_graph(&pairs, &scores, a.threshold)?;
    fs::create_dir_all(&a.out)?;
    let mut w = csv::Writer::from_writer(create(&a.out.join("scores.csv"))?);
    w.write_record(["a", "b", "score"])?;
    for (row, s) in pairs.rows.iter().zip(&scores) {
        w.write_record([row.a.as_str(), row.b.as_str(), &s.to_string()])?;
    }
    w.flush()?;
    graph.write_edges_csv(create(&a.out.join("edges.csv"))?)?;
    write_json(Some(&a.out.join("graph.json")), &graph)?;
    eprintln!("{} pairs scored, {} above threshold", pairs.len(), graph.n_edges());
    Ok(())
}

fn cluster_cmd(a: ClusterArgs) -> Result<()> {
    let graph: LinkGraph = serde_json::from_str(&fs::read_to_string(&a.graph)?)?;
    let partition = louvain(&graph, a.resolution, a.seed)?;
    let table = prevalence(&partition);
    fs::create_dir_all(&a.out)?;
    write_json(Some(&a.out.join("partition.json")), &partition)?;
    table.write_csv(create(&a.out.join("prevalence.csv"))?)?;
    fs::write(a.out.join("graph.dot"), graph.to_dot(Some(&partition), "links"))?;
    eprintln!(
        "{} cases in {} communities (modularity {:.4})",
        graph.n_nodes(),
        partition.n_communities(),
        partition.modularity
    );
    Ok(())
}

fn report_cmd(a: ReportArgs) -> Result<()> {
    if let Some(dir) = &a.verify {
        let problems = verify_manifest(dir)?;
        if problems.is_empty() {
            println!("manifest verified: {}", dir.display());
            return Ok(());
        }
        for p in &problems {
            println!("{p}");
        }
        bail!("{} manifest problem(s)", problems.len());
    }
    let mut cfg = match &a.config {
        Some(p) => PipelineConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => PipelineConfig::default(),
    };
    if let Some(out) = a.out {
        cfg.output_dir = out;
    }
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    cfg.paper_mode |= a.paper_mode;
    if !a.methods.is_empty() {
        for m in &a.methods {
            if cfg.method(m).is_none() {
                bail!("no configured method named `{m}`");
            }
        }
        cfg.methods.retain(|m| a.methods.contains(&m.name));
        let kept = |name: &String| a.methods.contains(name);
        cfg.explain.enabled &= kept(&cfg.explain.method);
        cfg.network.methods.retain(kept);
    }
    if let Some(p) = &a.write_config {
        fs::write(p, cfg.to_toml()?)?;
        return Ok(());
    }
    let run = harness::run_experiment(&cfg)?;
    print!("{}", run.report.summary());
    eprintln!("outputs and manifest in {}", cfg.output_dir.display());
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Synth(a) => synth_cmd(a),
        Command::Preprocess(a) => preprocess_cmd(a),
        Command::Pairs(a) => pairs_cmd(a),
        Command::Train(a) => train_cmd(a),
        Command::Grid(a) => grid_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Explain(a) => explain_cmd(a),
        Command::Predict(a) => predict_cmd(a),
        Command::Cluster(a) => cluster_cmd(a),
        Command::Report(a) => report_cmd(a),
    }
}
