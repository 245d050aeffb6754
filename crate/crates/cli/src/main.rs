use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use cknn::adaptive::importance_report;
use cknn::ndarray::Array2;
use cknn::dataset::{load_arm_column, load_covariates_csv, load_csv, write_csv};
use cknn::persist::{load_model, to_json, ExtF64, ModelMeta};
use cknn::simulation::{generate, run_replicates, Scenario, ScenarioSpec, SimMethod, SimOptions, SimulationSummary};
use cknn::tuning::{default_grid, format_delta, tune_and_fit, DEFAULT_FOLDS};
use cknn::value::ipw_value;
use cknn::{Arm, CsvSchema, DecisionPolicy, Error, Method, RegimeModel, Result, TrialDataset};

/// Seed used whenever `--seed` is not given.
const DEFAULT_SEED: u64 = 20_160_101;

#[derive(Parser)]
#[command(name = "cknn", version, about = "Causal k-nearest-neighbor treatment regimes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run replicated simulations and print a summary row.
    Simulate(SimulateArgs),
    /// Tune by cross-validation and save the fitted regime.
    Fit(FitArgs),
    /// Recommend an arm for every row of a covariate file.
    Predict(PredictArgs),
    /// Estimate the value of a model's (or a stored) regime on labeled data.
    Evaluate(EvaluateArgs),
    /// Per-covariate importance scores and metric weights.
    Importance(ImportanceArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Cnn,
    Acnn,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Cnn => Method::Cnn,
            MethodArg::Acnn => Method::Acnn,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SimMethodArg {
    Cnn,
    Acnn,
    /// Unit metric with k = ceil(sqrt(n)), no tuning.
    CnnSqrtN,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    /// Arms absent from the neighborhood cannot be recommended.
    Default,
    /// Absent arms compete with an estimate of zero.
    Literal,
}

impl From<PolicyArg> for DecisionPolicy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Default => DecisionPolicy::Default,
            PolicyArg::Literal => DecisionPolicy::Literal,
        }
    }
}

#[derive(Args)]
struct SchemaArgs {
    /// Treatment column (arm labels 1..L).
    #[arg(long, default_value = "treatment")]
    treatment_col: String,
    /// Outcome column (larger is better).
    #[arg(long, default_value = "outcome")]
    outcome_col: String,
    /// Propensity column; empirical arm shares are used when absent.
    #[arg(long, default_value = "propensity")]
    propensity_col: String,
    /// Columns to skip, comma separated.
    #[arg(long, value_delimiter = ',')]
    ignore: Vec<String>,
}

impl SchemaArgs {
    fn schema(&self, extra_ignore: Option<&str>) -> CsvSchema {
        let mut ignore = self.ignore.clone();
        ignore.extend(extra_ignore.map(str::to_owned));
        CsvSchema {
            treatment: self.treatment_col.clone(),
            outcome: self.outcome_col.clone(),
            propensity: self.propensity_col.clone(),
            ignore,
            n_arms: None,
        }
    }
}

#[derive(Args)]
struct GridArgs {
    /// Candidate neighborhood sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    k_grid: Option<Vec<usize>>,
    /// Candidate thresholds, comma separated; `-inf` means the unit metric.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, value_parser = parse_delta)]
    delta_grid: Option<Vec<f64>>,
    #[arg(long, default_value_t = DEFAULT_FOLDS)]
    folds: usize,
}

fn parse_delta(s: &str) -> std::result::Result<f64, String> {
    match s.trim() {
        "-inf" => Ok(f64::NEG_INFINITY),
        t => t
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| format!("`{t}` is not a finite number or -inf")),
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=5))]
    scenario: u8,
    #[arg(long, default_value_t = 5)]
    p: usize,
    /// Correlated normal covariates (pairwise covariance 0.5).
    #[arg(long)]
    correlated: bool,
    /// Training sample size.
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 50)]
    reps: usize,
    /// Test sample size; 10000 for two arms, 30000 for three by default.
    #[arg(long)]
    test_n: Option<usize>,
    #[arg(long, value_enum, default_value = "cnn")]
    method: SimMethodArg,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, value_enum, default_value = "default")]
    policy: PolicyArg,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Summary TSV (appended to stdout as well).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-replicate TSV.
    #[arg(long)]
    replicates_out: Option<PathBuf>,
    /// Write one generated training and test trial (from `--seed`) to this
    /// directory as train.csv and test.csv, then exit.
    #[arg(long)]
    write_data: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "acnn")]
    method: MethodArg,
    #[command(flatten)]
    grid: GridArgs,
    #[command(flatten)]
    schema: SchemaArgs,
    #[arg(long, value_enum, default_value = "default")]
    policy: PolicyArg,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Model file to write.
    #[arg(long)]
    out: PathBuf,
    /// Cross-validation table.
    #[arg(long)]
    cv_out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Covariate CSV; columns are matched to the model by name when possible.
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    schema: SchemaArgs,
    /// Assignment CSV with a single `arm` column; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Model whose recommendations are evaluated.
    #[arg(long, required_unless_present = "regime_column")]
    model: Option<PathBuf>,
    /// Labeled CSV.
    #[arg(long)]
    data: PathBuf,
    /// Evaluate the arms stored in this column instead of a model.
    #[arg(long)]
    regime_column: Option<String>,
    #[command(flatten)]
    schema: SchemaArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ImportanceArgs {
    #[arg(long)]
    data: PathBuf,
    /// Neighborhood size of the univariate regimes; ceil(sqrt(n)) by default.
    #[arg(long)]
    k: Option<usize>,
    /// Threshold for the reported metric weights.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true, value_parser = parse_delta)]
    delta: f64,
    #[command(flatten)]
    schema: SchemaArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes through a temporary file in the target directory, then renames.
fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io_error(path, e))?;
    tmp.write_all(contents).map_err(|e| io_error(path, e))?;
    tmp.persist(path).map_err(|e| io_error(path, e.error))?;
    Ok(())
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let scenario = Scenario::from_id(args.scenario)?;
    let mut spec = ScenarioSpec::new(scenario, args.p, args.correlated, args.n, args.seed);
    if let Some(t) = args.test_n {
        spec = spec.with_test_n(t);
    }
    if let Some(dir) = &args.write_data {
        std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
        let (train, test) = generate(&spec)?;
        for (name, ds) in [("train.csv", &train), ("test.csv", &test)] {
            let truth: Vec<Arm> = (0..ds.n()).map(|i| scenario.true_regime(ds.row(i))).collect();
            let mut buf = Vec::new();
            write_csv(ds, &mut buf, &[("true_arm", &truth)])?;
            write_atomic(&dir.join(name), &buf)?;
        }
        println!("wrote {} and {}", dir.join("train.csv").display(), dir.join("test.csv").display());
        return Ok(());
    }
    let method = match args.method {
        SimMethodArg::Cnn => SimMethod::Tuned(Method::Cnn),
        SimMethodArg::Acnn => SimMethod::Tuned(Method::Acnn),
        SimMethodArg::CnnSqrtN => SimMethod::CnnSqrtN,
    };
    let options = SimOptions {
        folds: args.grid.folds,
        policy: args.policy.into(),
        k_grid: args.grid.k_grid,
        delta_grid: args.grid.delta_grid,
    };
    let summary = run_replicates(&spec, method, args.reps, args.seed, &options)?;
    for r in &summary.reports {
        if let Err(e) = &r.outcome {
            eprintln!("warning: replicate {} failed: {e}", r.replicate);
        }
    }
    if let Some(p) = &args.replicates_out {
        write_atomic(p, summary.replicates_tsv().as_bytes())?;
    }
    let table = format!("{}\n{}\n", SimulationSummary::SUMMARY_HEADER, summary.summary_row());
    if let Some(p) = &args.out {
        write_atomic(p, table.as_bytes())?;
    }
    print!("{table}");
    Ok(())
}

fn fit(args: FitArgs) -> Result<()> {
    let data = load_csv(&args.data, &args.schema.schema(None))?;
    let method: Method = args.method.into();
    let mut grid = default_grid(&data, method, args.grid.folds, args.seed)?;
    if let Some(ks) = args.grid.k_grid {
        grid.k_values = ks;
    }
    if let Some(ds) = args.grid.delta_grid {
        grid.delta_values = ds;
    }
    let (report, model, importance) = tune_and_fit(&data, &grid, method, args.policy.into())?;
    let delta = report.chosen_delta();
    let meta = ModelMeta {
        method: Some(method),
        delta: (method == Method::Acnn).then_some(ExtF64(delta)),
        importance: importance.as_ref().map(|r| r.t.iter().map(|&t| ExtF64(t)).collect()),
    };
    write_atomic(&args.out, to_json(&model, &meta)?.as_bytes())?;
    if let Some(p) = &args.cv_out {
        write_atomic(p, report.to_tsv().as_bytes())?;
    }

    let mut s = String::new();
    let _ = writeln!(s, "method\t{method}");
    let _ = writeln!(s, "k\t{}", report.chosen_k());
    let _ = writeln!(s, "delta\t{}", format_delta(delta));
    let _ = writeln!(s, "cv_value\t{}", report.chosen_cell().score());
    match &model {
        RegimeModel::Constant { arm, .. } => {
            let _ = writeln!(s, "regime\tconstant arm {arm}");
        }
        RegimeModel::Cnn(m) => {
            let _ = writeln!(s, "regime\tneighbors");
            s.push_str("j\tcovariate\tsigma2\n");
            for (j, (name, w)) in data.covariate_names().iter().zip(m.metric().sigma2()).enumerate() {
                let _ = writeln!(s, "{}\t{name}\t{w}", j + 1);
            }
        }
    }
    print!("{s}");
    Ok(())
}

fn model_names(model: &RegimeModel) -> Option<&[String]> {
    match model {
        RegimeModel::Cnn(m) => Some(m.training().covariate_names()),
        RegimeModel::Constant { .. } => None,
    }
}

/// Covariates of `path` in the model's column order.
fn model_covariates(model: &RegimeModel, path: &Path, schema: &CsvSchema) -> Result<Array2<f64>> {
    let (names, x) = load_covariates_csv(path, schema)?;
    if let Some(wanted) = model_names(model) {
        let pos: Option<Vec<usize>> = wanted.iter().map(|w| names.iter().position(|n| n == w)).collect();
        if let Some(pos) = pos {
            return Ok(select_columns(&x, &pos));
        }
    }
    if x.ncols() != model.p() {
        return Err(Error::DimensionMismatch {
            expected: model.p(),
            got: x.ncols(),
        });
    }
    Ok(x)
}

fn select_columns(x: &Array2<f64>, columns: &[usize]) -> Array2<f64> {
    Array2::from_shape_fn((x.nrows(), columns.len()), |(i, j)| x[[i, columns[j]]])
}

fn predict(args: PredictArgs) -> Result<()> {
    let (model, _) = load_model(&args.model)?;
    let x = model_covariates(&model, &args.data, &args.schema.schema(None))?;
    let arms = model.predict_many(x.view())?;
    let mut s = String::from("arm\n");
    for a in arms {
        let _ = writeln!(s, "{a}");
    }
    emit(args.out.as_deref(), &s)
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let schema = args.schema.schema(args.regime_column.as_deref());
    let data: TrialDataset = load_csv(&args.data, &schema)?;
    let assignments = match (&args.regime_column, &args.model) {
        (Some(col), _) => load_arm_column(&args.data, col, data.n_arms())?,
        (None, Some(path)) => {
            let (model, _) = load_model(path)?;
            if model.n_arms() != data.n_arms() {
                return Err(Error::InvalidParameter(format!(
                    "model has {} arms, data has {}",
                    model.n_arms(),
                    data.n_arms()
                )));
            }
            let x = model_covariates(&model, &args.data, &schema)?;
            model.predict_many(x.view())?
        }
        (None, None) => unreachable!("clap requires --model or --regime-column"),
    };
    let report = ipw_value(&data, &assignments)?;
    let s = format!(
        "value\t{}\nmatched_weight\t{}\nmatched_count\t{}\nn\t{}\n",
        report.value,
        report.matched_weight,
        report.matched_count,
        data.n()
    );
    emit(args.out.as_deref(), &s)
}

fn importance(args: ImportanceArgs) -> Result<()> {
    let data = load_csv(&args.data, &args.schema.schema(None))?;
    let k = args
        .k
        .unwrap_or_else(|| ((data.n() as f64).sqrt().ceil() as usize).min(data.n().saturating_sub(1)).max(1));
    let report = importance_report(&data, k, args.delta)?;
    let mut s = String::from("j\tcovariate\tT\tsigma2\n");
    for (j, name) in data.covariate_names().iter().enumerate() {
        let _ = writeln!(s, "{}\t{name}\t{}\t{}", j + 1, report.t[j], report.sigma2[j]);
    }
    emit(args.out.as_deref(), &s)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a),
        Command::Predict(a) => predict(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Importance(a) => importance(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            ExitCode::FAILURE
        }
    }
}
