use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use serde_json::{json, Value};

use clustlm::baselines::{fit_alternating_sample, fit_iht, fit_ls, fit_lsk};
use clustlm::cg::{cg_fit, CGConfig, PsiKind, PsiProblem};
use clustlm::harness::cv::Task;
use clustlm::harness::metrics::half_mse;
use clustlm::harness::{
    cross_validate, generate_feature_clustered, generate_sample_clustered, run_experiment, CVConfig,
    ExperimentConfig, Method, SyntheticSpecFeatures, SyntheticSpecSamples, Table,
};
use clustlm::losses::LossKind;
use clustlm::model::{Dataset, Hyperparams, Partition, TargetSpec};
use clustlm::pgd::{pgd_fit, Init, PGDConfig, StepRule, Variant};
use clustlm::projections::{project_clustered, project_sparse_clustered, ProjectionMode};
use clustlm::theory;
use clustlm::{Error, Result};

#[derive(Parser)]
#[command(name = "clustlm", version, about = "Regression and classification with clustered weights or samples")]
struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, env = "CLUSTLM_SEED", default_value_t = 0)]
    seed: u64,
    /// Write the JSON report here instead of stdout.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic dataset with a known clustering.
    Generate(GenerateArgs),
    /// Fit a model to a CSV file.
    Fit(FitArgs),
    /// Project a vector onto clustered (optionally sparse) vectors.
    Project(ProjectArgs),
    /// Cross-validate a method on a CSV file.
    Cv(CvArgs),
    /// Run one of the synthetic benchmark tables.
    Bench(BenchArgs),
    /// Check the convergence bound and the subspace counts numerically.
    Theory(TheoryArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Samples,
    Features,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, value_enum, default_value = "features")]
    kind: Kind,
    /// CSV destination for the (training) data.
    #[arg(long)]
    out: PathBuf,
    /// CSV destination for the test split (samples only).
    #[arg(long)]
    test_out: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    q: Option<usize>,
    /// Label noise.
    #[arg(long)]
    sigma: Option<f64>,
    /// Noise features appended to each sample.
    #[arg(long, default_value_t = 0)]
    noise_dims: usize,
    #[arg(long)]
    value_range: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FitMethod {
    Pg,
    Cg,
    Am,
    Ls,
    Lsk,
    Iht,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    FeatureCluster,
    FeatureClusterMulticlass,
    SampleCluster,
    SparseFeatureCluster,
    Multitask,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::FeatureCluster => Variant::FeatureCluster,
            VariantArg::FeatureClusterMulticlass => Variant::FeatureClusterMulticlass,
            VariantArg::SampleCluster => Variant::SampleCluster,
            VariantArg::SparseFeatureCluster => Variant::SparseFeatureCluster,
            VariantArg::Multitask => Variant::Multitask,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Squared,
    Logistic,
    MulticlassSquared,
    MulticlassLogistic,
}

impl From<LossArg> for LossKind {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::Squared => LossKind::Squared,
            LossArg::Logistic => LossKind::Logistic,
            LossArg::MulticlassSquared => LossKind::MulticlassSquared,
            LossArg::MulticlassLogistic => LossKind::MulticlassLogistic,
        }
    }
}

#[derive(Args)]
struct DataArgs {
    /// CSV file with a header row.
    #[arg(long)]
    data: PathBuf,
    /// Target column; comma separated for several tasks.
    #[arg(long)]
    target: String,
    /// Treat the target column as class labels.
    #[arg(long)]
    classes: bool,
}

impl DataArgs {
    fn load(&self) -> Result<Dataset> {
        let cols: Vec<String> = self.target.split(',').map(|s| s.trim().to_owned()).collect();
        let spec = match (cols.len(), self.classes) {
            (1, false) => TargetSpec::Regression(cols[0].clone()),
            (1, true) => TargetSpec::Classification(cols[0].clone()),
            (_, false) => TargetSpec::Tasks(cols),
            (_, true) => return Err(Error::InvalidInput("--classes takes a single target column".into())),
        };
        Dataset::from_csv_path(&self.data, &spec)
    }
}

#[derive(Args)]
struct HyperArgs {
    #[arg(long, default_value_t = 2)]
    q: usize,
    /// Sparsity level for sparse variants and IHT.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    #[arg(long, default_value_t = 0.0)]
    lambda_m: f64,
    #[arg(long, default_value_t = 0.0)]
    lambda_b: f64,
    #[arg(long, default_value_t = 0.0)]
    lambda_w: f64,
    #[arg(long, default_value_t = 1e-8)]
    epsilon: f64,
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    #[arg(long)]
    fit_intercept: bool,
}

impl HyperArgs {
    fn hyper(&self, seed: u64) -> Hyperparams {
        Hyperparams {
            q: self.q,
            k: self.k,
            lambda: self.lambda,
            lambda_m: self.lambda_m,
            lambda_b: self.lambda_b,
            lambda_w: self.lambda_w,
            epsilon: self.epsilon,
            max_iter: self.max_iter,
            seed,
            fit_intercept: self.fit_intercept,
        }
    }
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    hyper: HyperArgs,
    #[arg(long, value_enum, default_value = "pg")]
    method: FitMethod,
    #[arg(long, value_enum, default_value = "feature-cluster")]
    variant: VariantArg,
    #[arg(long, value_enum)]
    loss: Option<LossArg>,
    /// Constant step size from a zero start instead of backtracking (PG).
    #[arg(long)]
    step_size: Option<f64>,
    /// Starting partition for AM: JSON array of arrays of row indices.
    #[arg(long)]
    init_partition: Option<PathBuf>,
}

#[derive(Args)]
struct ProjectArgs {
    /// Comma separated values.
    #[arg(long, allow_hyphen_values = true, conflicts_with = "input")]
    values: Option<String>,
    /// File of numbers separated by commas, spaces or newlines.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    q: usize,
    /// Keep at most k nonzeros.
    #[arg(long)]
    k: Option<usize>,
    /// Use k-means++ instead of the exact 1-D solver (no sparsity).
    #[arg(long)]
    kmeans: bool,
}

#[derive(Args)]
struct CvArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "pg")]
    method: String,
    /// Cluster samples instead of features.
    #[arg(long)]
    samples: bool,
    #[arg(long, value_delimiter = ',', default_values_t = [1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0])]
    lambdas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [2usize])]
    qs: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    ks: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    folds: usize,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    table: String,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    /// Override the sweep values.
    #[arg(long, value_delimiter = ',')]
    columns: Vec<f64>,
    /// Restrict the methods (names as in the table rows).
    #[arg(long, value_delimiter = ',')]
    methods: Vec<String>,
    /// Skip cross-validation and use --lambda everywhere.
    #[arg(long)]
    no_cv: bool,
    #[arg(long)]
    lambda: Option<f64>,
    /// Training samples for table 1.
    #[arg(long)]
    n_train: Option<usize>,
    /// Also write tableN.csv and tableN.json here.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct TheoryArgs {
    #[arg(long, default_value_t = 8)]
    d: usize,
    #[arg(long, default_value_t = 2)]
    q: usize,
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, default_value_t = 0.1)]
    sigma: f64,
    /// Independent designs to test.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    #[arg(long, default_value_t = 30)]
    iterations: usize,
    /// Random triples when d > 10.
    #[arg(long, default_value_t = 20000)]
    samples: usize,
}

fn emit(output: Option<&Path>, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match output {
        Some(p) => fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn generate(args: &GenerateArgs, seed: u64) -> Result<Value> {
    match args.kind {
        Kind::Features => {
            let base = SyntheticSpecFeatures::default();
            let spec = SyntheticSpecFeatures {
                n: args.n.unwrap_or(base.n),
                d: args.d.unwrap_or(base.d),
                q: args.q.unwrap_or(base.q),
                sigma: args.sigma.unwrap_or(base.sigma),
                value_range: args.value_range.unwrap_or(base.value_range),
                seed,
                ..base
            };
            let f = generate_feature_clustered(&spec)?;
            f.data.write_csv(fs::File::create(&args.out)?)?;
            Ok(json!({
                "command": "generate",
                "spec": spec,
                "w_star": f.w_star.as_slice(),
                "partition": f.partition,
                "values": f.values,
            }))
        }
        Kind::Samples => {
            let base = SyntheticSpecSamples::default();
            let spec = SyntheticSpecSamples {
                n_train: args.n.unwrap_or(base.n_train),
                d: args.d.unwrap_or(base.d),
                q: args.q.unwrap_or(base.q),
                sigma_y: args.sigma.unwrap_or(base.sigma_y),
                d_noise: args.noise_dims,
                seed,
                ..base
            };
            let s = generate_sample_clustered(&spec)?;
            s.train.write_csv(fs::File::create(&args.out)?)?;
            if let Some(p) = &args.test_out {
                s.test.write_csv(fs::File::create(p)?)?;
            }
            let experts: Vec<Vec<f64>> = s.experts.column_iter().map(|c| c.iter().copied().collect()).collect();
            Ok(json!({
                "command": "generate",
                "spec": spec,
                "experts": experts,
                "partition": s.train_partition,
                "test_partition": s.test_partition,
            }))
        }
    }
}

fn fit(args: &FitArgs, seed: u64) -> Result<Value> {
    let data = args.data.load()?;
    let hyper = args.hyper.hyper(seed);
    let variant: Variant = args.variant.into();
    let mut out = json!({ "command": "fit", "hyperparams": hyper });
    match args.method {
        FitMethod::Pg => {
            let mut cfg = PGDConfig::new(variant, hyper);
            if let Some(l) = args.loss {
                cfg.loss = l.into();
            }
            if let Some(alpha) = args.step_size {
                cfg.step = StepRule::Constant;
                cfg.init = Init::Zeros;
                cfg.line_search.alpha0 = alpha;
            }
            let (model, report) = pgd_fit(&data, &cfg)?;
            out["model"] = serde_json::to_value(model)?;
            out["report"] = serde_json::to_value(report)?;
        }
        FitMethod::Cg => {
            let kind = match (variant, data.y().is_some()) {
                (Variant::FeatureCluster, true) => PsiKind::FeatureRegression,
                (Variant::SampleCluster, true) => PsiKind::SampleRegression,
                (Variant::FeatureClusterMulticlass, false) => PsiKind::FeatureClassification,
                (Variant::SampleCluster, false) => PsiKind::SampleClassification,
                _ => return Err(Error::UnsupportedMode(format!("no relaxation for {variant:?} on this target"))),
            };
            let problem = PsiProblem::new(kind, &data, hyper.lambda)?;
            let cfg = CGConfig {
                max_iter: hyper.max_iter,
                seed,
                ..CGConfig::new(hyper.q)
            };
            out["model"] = serde_json::to_value(cg_fit(&problem, &cfg)?)?;
        }
        FitMethod::Am => {
            let warm: Option<Partition> = match &args.init_partition {
                Some(p) => Some(serde_json::from_str(&fs::read_to_string(p)?)?),
                None => None,
            };
            let fit = fit_alternating_sample(&data, hyper.q, hyper.lambda, seed, warm.as_ref())?;
            out["model"] = serde_json::to_value(fit)?;
        }
        FitMethod::Ls => {
            let w = fit_ls(&data, hyper.lambda)?;
            let cols: Vec<Vec<f64>> = w.column_iter().map(|c| c.iter().copied().collect()).collect();
            out["model"] = json!({ "weights": cols });
            if data.y().is_some() {
                out["train_half_mse"] = json!(half_mse(&data, &w.column(0).into_owned())?);
            }
        }
        FitMethod::Lsk => {
            let model = fit_lsk(&data, hyper.q, hyper.lambda, seed)?;
            if data.y().is_some() {
                out["train_half_mse"] = json!(half_mse(&data, &model.weights().column(0).into_owned())?);
            }
            out["model"] = serde_json::to_value(model)?;
        }
        FitMethod::Iht => {
            let (model, report) = fit_iht(&data, &hyper)?;
            out["train_half_mse"] = json!(half_mse(&data, &DVector::from_column_slice(&model.weights))?);
            out["model"] = serde_json::to_value(model)?;
            out["report"] = serde_json::to_value(report)?;
        }
    }
    Ok(out)
}

fn parse_numbers(text: &str) -> Result<Vec<f64>> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| Error::InvalidInput(format!("not a number: {s:?}")))
        })
        .collect()
}

fn project(args: &ProjectArgs, seed: u64) -> Result<Value> {
    let x = match (&args.values, &args.input) {
        (Some(v), _) => parse_numbers(v)?,
        (None, Some(p)) => parse_numbers(&fs::read_to_string(p)?)?,
        (None, None) => return Err(Error::InvalidInput("pass --values or --input".into())),
    };
    if x.is_empty() || x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("the vector must be nonempty and finite".into()));
    }
    if args.q == 0 {
        return Err(Error::InvalidInput("Q must be at least 1".into()));
    }
    match args.k {
        Some(k) => Ok(json!({ "command": "project", "k": k, "q": args.q, "result": project_sparse_clustered(&x, k, args.q) })),
        None => {
            let mode = if args.kmeans { ProjectionMode::KMeansPP } else { ProjectionMode::Exact1d };
            let p = project_clustered(&DMatrix::from_column_slice(x.len(), 1, &x), args.q, mode, seed)?;
            Ok(json!({
                "command": "project",
                "q": args.q,
                "mode": mode,
                "result": {
                    "w": p.projected.as_slice(),
                    "partition": p.partition,
                    "barycenters": p.centroids.as_slice(),
                    "distance2": p.distance2,
                }
            }))
        }
    }
}

fn cv(args: &CvArgs, seed: u64) -> Result<Value> {
    let data = args.data.load()?;
    let method: Method = args.method.parse()?;
    let cfg = CVConfig {
        folds: args.folds,
        lambdas: args.lambdas.clone(),
        qs: args.qs.clone(),
        ks: if args.ks.is_empty() { vec![None] } else { args.ks.iter().map(|&k| Some(k)).collect() },
        task: if args.samples { Task::Samples } else { Task::Features },
        ..CVConfig::default()
    };
    let outcome = cross_validate(&data, method, &cfg, seed)?;
    Ok(json!({ "command": "cv", "method": method, "config": cfg, "outcome": outcome }))
}

fn bench(args: &BenchArgs, seed: u64) -> Result<Value> {
    let table: Table = args.table.parse()?;
    let mut cfg = ExperimentConfig::desk(table);
    cfg.seed = seed;
    cfg.trials = args.trials;
    if !args.columns.is_empty() {
        cfg.columns = args.columns.clone();
    }
    if !args.methods.is_empty() {
        cfg.methods = args.methods.iter().map(|m| m.parse()).collect::<Result<_>>()?;
    }
    if args.no_cv {
        cfg.cv = None;
    }
    if let Some(l) = args.lambda {
        cfg.lambda = l;
    }
    if let Some(n) = args.n_train {
        cfg.samples.n_train = n;
    }
    let result = run_experiment(&cfg)?;
    if let Some(dir) = &args.out_dir {
        fs::create_dir_all(dir)?;
        let stem = format!("table{}", args.table);
        fs::write(dir.join(format!("{stem}.csv")), result.to_csv())?;
        fs::write(dir.join(format!("{stem}.json")), result.to_json()?)?;
    }
    eprint!("{}", result.to_csv());
    Ok(serde_json::to_value(result)?)
}

fn run_theory(args: &TheoryArgs, seed: u64) -> Result<Value> {
    let mut runs = Vec::new();
    for s in 0..args.seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(s));
        let x = DMatrix::from_fn(args.n, args.d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let w = theory::random_clustered_vector(args.d, args.q, &mut rng);
        let constants = if args.d <= 10 {
            theory::contraction_constants(&x, args.q)?
        } else {
            theory::contraction_constants_sampled(&x, args.q, args.samples, rng.random())?
        };
        let report = theory::verify_convergence_bound(&x, &w, args.sigma, args.q, args.iterations, rng.random(), Some(&constants))?;
        runs.push(json!({
            "rho": constants.rho,
            "nu": constants.nu,
            "exact": constants.exact,
            "triples_checked": constants.triples_checked,
            "vacuous": report.vacuous,
            "violations": report.violations,
            "min_margin": if report.vacuous { Value::Null } else { json!(report.min_margin) },
            "final_error": report.errors.last(),
        }));
    }
    let enumerated = if args.d <= theory::MAX_ENUMERATION {
        Some(theory::enumerate_partitions(args.d, args.q, theory::EnumerationMode::Exactly)?.count())
    } else {
        None
    };
    Ok(json!({
        "command": "theory",
        "d": args.d,
        "q": args.q,
        "n": args.n,
        "sigma": args.sigma,
        "partitions": {
            "stirling": theory::stirling2(args.d, args.q).to_string(),
            "enumerated": enumerated,
            "bounds": theory::stirling_bounds(args.d, args.q),
        },
        "runs": runs,
    }))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let seed = cli.seed;
    let result = match &cli.command {
        Command::Generate(a) => generate(a, seed),
        Command::Fit(a) => fit(a, seed),
        Command::Project(a) => project(a, seed),
        Command::Cv(a) => cv(a, seed),
        Command::Bench(a) => bench(a, seed),
        Command::Theory(a) => run_theory(a, seed),
    }
    .and_then(|mut v| {
        v["seed"] = json!(seed);
        emit(cli.output.as_deref(), &v)
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Diverged { .. }) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
