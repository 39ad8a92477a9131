//! `mlqe` command-line front end.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mlqe_core::experiments::{run_study, write_records, write_rows, ExperimentSpec, RunOptions, Study};
use mlqe_core::families::{glm_model, ExponentialModel, FamilyModel, GlmLink, GlmSpec, MvnModel};
use mlqe_core::lq::{rescaled_estimate, solve_mlqe, DistortionParam, FitResult, SolverOptions};
use mlqe_core::tail::{plugin_tail_estimate, select_q};
use mlqe_core::LqError;
use nalgebra::{DMatrix, DVector};
use serde_json::{json, Value};

#[derive(Parser, Debug)]
#[command(name = "mlqe", version, about = "Maximum Lq-likelihood estimation and simulation studies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit one sample and print the result as JSON.
    Estimate(EstimateArgs),
    /// Data-driven q for exponential tail estimation.
    SelectQ(SelectQArgs),
    /// MSE ratio of MLE to MLqE tail estimates.
    MseRatio(StudyArgs),
    /// Coverage of asymptotic and bootstrap intervals.
    Coverage(StudyArgs),
    /// Covariance loss ratio for the multivariate normal.
    MvnLoss(StudyArgs),
    /// Prediction-error ratio for logistic and exponential regression.
    GlmPe(StudyArgs),
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Family {
    Exponential,
    Normal,
    Logistic,
    ExpReg,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    #[arg(long, value_enum)]
    family: Family,
    /// Distortion parameter.
    #[arg(long, default_value_t = 1.0)]
    q: f64,
    /// Whitespace or comma separated numbers, one observation per line.
    /// Regression rows are `y x1 ... xp`.
    #[arg(long)]
    data: PathBuf,
    /// Threshold for a plug-in tail estimate (exponential only).
    #[arg(long)]
    x: Option<f64>,
}

#[derive(Args, Debug)]
struct SelectQArgs {
    /// Rate estimate; taken from the MLE of `--data` when absent.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Sample size; defaults to the size of `--data`.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, conflicts_with = "alpha")]
    x: Option<f64>,
    /// Target tail probability, `x = −log(α)/λ`.
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Args, Debug)]
struct StudyArgs {
    /// JSON experiment spec.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Summary CSV; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-replicate records in long format.
    #[arg(long)]
    records: Option<PathBuf>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

fn exit_code(err: &LqError) -> u8 {
    match err {
        LqError::Config(_) | LqError::Io(_) | LqError::Csv(_) | LqError::Json(_) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Estimate(a) => estimate(&a),
        Command::SelectQ(a) => select(&a),
        Command::MseRatio(a) => study(Study::MseRatio, &a),
        Command::Coverage(a) => study(Study::Coverage, &a),
        Command::MvnLoss(a) => study(Study::MvnLoss, &a),
        Command::GlmPe(a) => study(Study::GlmPe, &a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mlqe: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn read_table(path: &Path, rectangular: bool) -> Result<Vec<Vec<f64>>, LqError> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| LqError::Config(format!("{}:{}: not a number: {t}", path.display(), i + 1)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if let Some(first) = rows.first().map(Vec::len).filter(|_| rectangular) {
            if first != row.len() {
                return Err(LqError::Config(format!("{}:{}: ragged row", path.display(), i + 1)));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(LqError::Config(format!("{}: no data", path.display())));
    }
    Ok(rows)
}

fn emit(value: &Value) -> Result<(), LqError> {
    let text = serde_json::to_string_pretty(value)?;
    match writeln!(io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn flatten(rows: &[Vec<f64>]) -> Vec<f64> {
    rows.iter().flatten().copied().collect()
}

fn fit_json(fit: &FitResult) -> Value {
    json!({
        "theta": fit.theta.as_slice(),
        "q": fit.q.value(),
        "converged": fit.converged,
        "iterations": fit.iterations,
        "objective": fit.objective,
        "score_norm": fit.score_norm,
        "start": format!("{:?}", fit.start),
        "n": fit.n,
    })
}

fn fit<M: FamilyModel>(model: &M, sample: &[M::Obs], q: DistortionParam) -> Result<FitResult, LqError> {
    solve_mlqe(sample, model, q, &SolverOptions::default())?.into_converged()
}

fn estimate(a: &EstimateArgs) -> Result<(), LqError> {
    let q = DistortionParam::new(a.q).map_err(|e| LqError::Config(e.to_string()))?;
    let rows = read_table(&a.data, !matches!(a.family, Family::Exponential))?;
    let mut out = json!({ "family": format!("{:?}", a.family).to_lowercase() });
    match a.family {
        Family::Exponential => {
            let sample = flatten(&rows);
            let f = fit(&ExponentialModel, &sample, q)?;
            out["rescaled"] = json!(rescaled_estimate(&f, &ExponentialModel)?.as_slice());
            if let Some(x) = a.x {
                out["tail"] = serde_json::to_value(plugin_tail_estimate(&f, &ExponentialModel, x, sample.len())?)?;
            }
            out["fit"] = fit_json(&f);
        }
        Family::Normal => {
            let p = rows[0].len();
            let model = MvnModel::new(p)?;
            let sample: Vec<DVector<f64>> = rows.iter().map(|r| DVector::from_column_slice(r)).collect();
            let f = fit(&model, &sample, q)?;
            let (mu, sigma) = model.unpack(&f.theta)?;
            out["mu"] = json!(mu.as_slice());
            out["sigma"] = json!(sigma.row_iter().map(|r| r.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>());
            out["fit"] = fit_json(&f);
        }
        Family::Logistic | Family::ExpReg => {
            if rows[0].len() < 2 {
                return Err(LqError::Config("regression rows need a response and at least one covariate".into()));
            }
            let p = rows[0].len() - 1;
            let spec = GlmSpec {
                design: DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j + 1]),
                response: DVector::from_fn(rows.len(), |i, _| rows[i][0]),
                link: if matches!(a.family, Family::Logistic) { GlmLink::Logistic } else { GlmLink::ExpReg },
            };
            let model = glm_model(&spec)?;
            let f = fit(&model, &spec.observations(), q)?;
            out["fit"] = fit_json(&f);
        }
    }
    emit(&out)
}

fn select(a: &SelectQArgs) -> Result<(), LqError> {
    let sample = a.data.as_deref().map(|p| read_table(p, false)).transpose()?.map(|r| flatten(&r));
    let lambda = match (a.lambda, &sample) {
        (Some(l), _) => l,
        (None, Some(s)) => ExponentialModel.mle(s)?[0],
        (None, None) => return Err(LqError::Config("need --lambda or --data".into())),
    };
    let n = a
        .n
        .or(sample.as_ref().map(Vec::len))
        .ok_or_else(|| LqError::Config("need --n or --data".into()))?;
    let x = match (a.x, a.alpha) {
        (Some(x), _) => x,
        (None, Some(alpha)) if alpha > 0.0 && alpha < 1.0 => -alpha.ln() / lambda,
        (None, Some(alpha)) => return Err(LqError::Config(format!("alpha must lie in (0, 1), got {alpha}"))),
        (None, None) => return Err(LqError::Config("need --x or --alpha".into())),
    };
    let sel = select_q(lambda, x, n)?;
    let mut out = serde_json::to_value(sel)?;
    out["x"] = json!(x);
    out["n"] = json!(n);
    emit(&out)
}

fn study(kind: Study, a: &StudyArgs) -> Result<(), LqError> {
    let mut spec = ExperimentSpec::from_path(&a.config)?;
    if spec.study != kind {
        return Err(LqError::Config(format!(
            "config is for study {}, not {}",
            spec.study.as_str(),
            kind.as_str()
        )));
    }
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    if let Some(b) = a.replicates {
        spec.replicates = b;
    }
    if a.workers == 0 {
        return Err(LqError::Config("--workers must be at least 1".into()));
    }
    spec.validate()?;
    let output = run_study(&spec, &RunOptions { workers: a.workers })?;
    if let Some(path) = &a.records {
        write_records(BufWriter::new(File::create(path)?), &output.records)?;
    }
    match &a.out {
        Some(path) => write_rows(BufWriter::new(File::create(path)?), &output.rows)?,
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            write_rows(&mut lock, &output.rows)?;
            lock.flush()?;
        }
    }
    Ok(())
}
