use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dgn_spline::density::{entropy, likelihood_report, logdet_histogram};
use dgn_spline::dropout::{ensemble_dimensions, DropoutSpec, NoiseMode};
use dgn_spline::experiments::{
    angle_study, generate_random_net, linear_capacity_study, logdet_study, random_subspace_angles, AngleRow,
    AngleSource, CapacitySpec, LogDetStudySpec, RandomNetSpec, RescaleMode,
};
use dgn_spline::geometry::{dimension_upper_bound, principal_angle, region_dimension, InverseSearch};
use dgn_spline::io::{load_model, save_document, ModelDocument};
use dgn_spline::linalg::DEFAULT_REL_TOL;
use dgn_spline::partition::{adjacent_pairs, sample_regions};
use dgn_spline::{Activation, ActivationKind, Error, GeneratorNetwork, LatentDistribution};
use nalgebra::DVector;
use serde::Serialize;
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "dgn", version, about = "Region-wise geometry, density and entropy of piecewise-affine generators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a model file.
    #[command(subcommand)]
    Gen(GenCommand),
    /// Per-region analyses of a model.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// Density, likelihood and entropy of a model.
    #[command(subcommand)]
    Density(DensityCommand),
    /// Training-free studies on random networks.
    #[command(subcommand)]
    Study(StudyCommand),
}

#[derive(Subcommand)]
enum GenCommand {
    /// Random Xavier-uniform network with zero biases and a linear output layer.
    Random {
        #[command(flatten)]
        net: NetArgs,
        #[arg(short = 'o', long = "out")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct NetArgs {
    #[arg(long)]
    latent: usize,
    #[arg(long)]
    output: usize,
    /// Hidden widths, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    widths: Vec<usize>,
    #[arg(long, value_enum, default_value_t = ActArg::LeakyRelu)]
    activation: ActArg,
    /// Negative-side slope for leaky_relu.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum ActArg {
    Relu,
    LeakyRelu,
    Abs,
}

#[derive(Clone, Copy, ValueEnum)]
enum DistArg {
    Gaussian,
    Uniform,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineArg {
    RandomSubspace,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Dropout,
    Dropconnect,
}

#[derive(Clone, Copy, ValueEnum)]
enum RescaleArg {
    Values,
    InitBound,
}

#[derive(Args)]
struct Output {
    /// Write to this file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum AnalyzeCommand {
    /// Distinct regions met by latent samples (JSON).
    Regions {
        model: PathBuf,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = DistArg::Gaussian)]
        dist: DistArg,
        #[command(flatten)]
        output: Output,
    },
    /// Dimension and upper bound per sampled region (CSV).
    Dims {
        model: PathBuf,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = DEFAULT_REL_TOL)]
        tol: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = DistArg::Gaussian)]
        dist: DistArg,
        #[command(flatten)]
        output: Output,
    },
    /// Largest principal angles between adjacent regions (CSV).
    Angles {
        model: PathBuf,
        #[arg(long, default_value_t = 500)]
        pairs: usize,
        #[arg(long, value_enum)]
        baseline: Option<BaselineArg>,
        #[arg(long)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = DistArg::Gaussian)]
        dist: DistArg,
        #[command(flatten)]
        output: Output,
    },
    /// Log volume scale per sampled region (CSV).
    Logdet {
        model: PathBuf,
        #[arg(long, default_value_t = 2000)]
        regions: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = DistArg::Gaussian)]
        dist: DistArg,
        #[command(flatten)]
        output: Output,
    },
    /// Region dimensions of dropout or dropconnect realizations (CSV).
    Dropout {
        model: PathBuf,
        #[arg(long, value_enum, default_value_t = ModeArg::Dropout)]
        mode: ModeArg,
        #[arg(long)]
        p: f64,
        #[arg(long, default_value_t = 200)]
        realizations: usize,
        /// Latent samples per realization.
        #[arg(long, default_value_t = 50)]
        regions: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = DistArg::Gaussian)]
        dist: DistArg,
        #[command(flatten)]
        output: Output,
    },
}

#[derive(Subcommand)]
enum DensityCommand {
    /// Differential entropy of the output distribution (JSON).
    Entropy {
        model: PathBuf,
        #[arg(long, value_enum, default_value_t = DistArg::Gaussian)]
        dist: DistArg,
        #[arg(long, default_value_t = 100_000)]
        mc: usize,
        #[arg(long)]
        seed: u64,
        #[command(flatten)]
        output: Output,
    },
    /// Log-likelihood or off-manifold residual per point (JSON).
    Eval {
        model: PathBuf,
        /// JSON list of points, or an object with a "points" list.
        #[arg(long)]
        points: PathBuf,
        #[arg(long, value_enum, default_value_t = DistArg::Gaussian)]
        dist: DistArg,
        #[arg(long, default_value_t = 32)]
        restarts: usize,
        #[arg(long)]
        seed: u64,
        #[command(flatten)]
        output: Output,
    },
}

#[derive(Subcommand)]
enum StudyCommand {
    /// Adjacent-region angles of a random net against random subspaces (CSV).
    Angles {
        #[command(flatten)]
        net: NetArgs,
        #[arg(long, default_value_t = 500)]
        pairs: usize,
        #[command(flatten)]
        output: Output,
    },
    /// Log volume scales of a random net with half its weights rescaled (CSV).
    Logdet {
        #[arg(long)]
        sigma1: f64,
        #[arg(long)]
        sigma2: f64,
        #[arg(long, default_value_t = 2000)]
        regions: usize,
        #[arg(long, value_enum, default_value_t = RescaleArg::Values)]
        rescale: RescaleArg,
        #[arg(long)]
        seed: u64,
        #[command(flatten)]
        output: Output,
    },
    /// Best rank-S affine fit error against dataset size (CSV).
    Capacity {
        #[arg(long, default_value_t = 5)]
        s_star: usize,
        #[arg(long, default_value_t = 10)]
        data_dim: usize,
        #[arg(long, value_delimiter = ',')]
        s_range: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        n_range: Option<Vec<usize>>,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 30)]
        trials: usize,
        #[arg(long)]
        seed: u64,
        #[command(flatten)]
        output: Output,
    },
}

#[derive(Debug)]
enum CliError {
    Lib(Error),
    Usage(String),
    Other(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Lib(e) if e.is_parameter_error() => 2,
            CliError::Lib(e) if e.is_degenerate_model() => 3,
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Lib(e) => write!(f, "{e}"),
            CliError::Usage(m) | CliError::Other(m) => f.write_str(m),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn sink(output: &Output) -> CliResult<Box<dyn Write>> {
    Ok(match &output.out {
        Some(path) => Box::new(File::create(path).map_err(|e| CliError::Other(format!("{}: {e}", path.display())))?),
        None => Box::new(io::stdout().lock()),
    })
}

fn write_json(output: &Output, value: &impl Serialize) -> CliResult<()> {
    let mut w = sink(output)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Other(e.to_string()))?;
    writeln!(w)?;
    Ok(())
}

fn write_csv<R: Serialize>(output: &Output, rows: impl IntoIterator<Item = R>) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(sink(output)?);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

fn activation(kind: ActArg, alpha: Option<f64>) -> CliResult<Activation> {
    let kind = match kind {
        ActArg::Relu => ActivationKind::Relu,
        ActArg::LeakyRelu => ActivationKind::LeakyRelu,
        ActArg::Abs => ActivationKind::Abs,
    };
    let alpha = match kind {
        ActivationKind::LeakyRelu => Some(alpha.unwrap_or(dgn_spline::network::DEFAULT_LEAKY_ALPHA)),
        _ => alpha,
    };
    Ok(Activation::new(kind, alpha)?)
}

fn net_spec(args: &NetArgs) -> CliResult<RandomNetSpec> {
    Ok(RandomNetSpec::new(
        args.latent,
        args.output,
        args.widths.clone(),
        activation(args.activation, args.alpha)?,
        args.seed,
    ))
}

fn latent(dist: DistArg, net: &GeneratorNetwork) -> LatentDistribution {
    match dist {
        DistArg::Gaussian => LatentDistribution::gaussian(net.latent_dim()),
        DistArg::Uniform => LatentDistribution::uniform(net.latent_dim()),
    }
}

fn positive(name: &str, v: usize) -> CliResult<()> {
    if v == 0 {
        return Err(CliError::Usage(format!("--{name} must be at least 1")));
    }
    Ok(())
}

fn read_points(path: &Path, dim: usize) -> CliResult<Vec<DVector<f64>>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Other(format!("{}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| {
        CliError::Usage(format!("{}: line {} column {}: {e}", path.display(), e.line(), e.column()))
    })?;
    let list = match &value {
        Value::Object(map) => map.get("points"),
        other => Some(other),
    }
    .and_then(Value::as_array)
    .ok_or_else(|| CliError::Usage("points file must be a list or an object with a \"points\" list".into()))?;
    list.iter()
        .enumerate()
        .map(|(i, p)| {
            let coords = p
                .as_array()
                .and_then(|a| a.iter().map(Value::as_f64).collect::<Option<Vec<f64>>>())
                .ok_or_else(|| CliError::Usage(format!("point {i} is not a list of numbers")))?;
            if coords.len() != dim {
                return Err(CliError::Usage(format!(
                    "point {i} has length {}, model output dimension is {dim}",
                    coords.len()
                )));
            }
            Ok(DVector::from_vec(coords))
        })
        .collect()
}

#[derive(Serialize)]
struct RegionOut {
    code_hash: String,
    count: usize,
    witness: Vec<f64>,
}

#[derive(Serialize)]
struct DimRow {
    region_hash: String,
    dim: usize,
    upper_bound: usize,
}

#[derive(Serialize)]
struct LogDetRow {
    region_hash: String,
    log_det: f64,
}

#[derive(Serialize)]
struct StudyLogDetRow {
    sigma1: f64,
    sigma2: f64,
    region_hash: String,
    log_det: f64,
}

fn run_gen(cmd: GenCommand) -> CliResult<()> {
    let GenCommand::Random { net, out } = cmd;
    let spec = net_spec(&net)?;
    let mut doc = ModelDocument::new(generate_random_net(&spec)?);
    doc.metadata.insert(
        "generator".into(),
        json!({
            "init": "xavier_uniform",
            "seed": net.seed,
            "widths": net.widths,
            "activation": spec.activation.kind().to_string(),
            "alpha": spec.activation.alpha(),
        }),
    );
    save_document(&doc, &out)?;
    Ok(())
}

fn run_analyze(cmd: AnalyzeCommand) -> CliResult<()> {
    match cmd {
        AnalyzeCommand::Regions {
            model,
            samples,
            seed,
            dist,
            output,
        } => {
            let net = load_model(&model)?;
            let regions = sample_regions(&net, &latent(dist, &net), samples, seed)?;
            let out: Vec<RegionOut> = regions
                .into_iter()
                .map(|r| RegionOut {
                    code_hash: r.code.hash_hex(),
                    count: r.count,
                    witness: r.witness.iter().copied().collect(),
                })
                .collect();
            write_json(&output, &out)
        }
        AnalyzeCommand::Dims {
            model,
            samples,
            tol,
            seed,
            dist,
            output,
        } => {
            if !(tol > 0.0 && tol < 1.0) {
                return Err(CliError::Usage(format!("--tol must lie in (0, 1), got {tol}")));
            }
            let net = load_model(&model)?;
            let rows = sample_regions(&net, &latent(dist, &net), samples, seed)?
                .iter()
                .map(|r| {
                    Ok(DimRow {
                        region_hash: r.code.hash_hex(),
                        dim: region_dimension(&net.affine_params(&r.code)?, tol),
                        upper_bound: dimension_upper_bound(&net, &r.code, tol)?,
                    })
                })
                .collect::<CliResult<Vec<_>>>()?;
            write_csv(&output, rows)
        }
        AnalyzeCommand::Angles {
            model,
            pairs,
            baseline,
            seed,
            dist,
            output,
        } => {
            let net = load_model(&model)?;
            let found = adjacent_pairs(&net, &latent(dist, &net), pairs, seed)?;
            let mut rows = Vec::with_capacity(2 * pairs);
            let mut skipped = 0;
            for (a, b) in &found {
                let ma = net.affine_params(&a.code)?;
                let mb = net.affine_params(&b.code)?;
                match principal_angle(&ma, &mb, DEFAULT_REL_TOL) {
                    Ok(angle) => rows.push(AngleRow {
                        angle,
                        source: AngleSource::Dgn,
                    }),
                    Err(Error::NotInvertible { .. }) => skipped += 1,
                    Err(e) => return Err(e.into()),
                }
            }
            if skipped > 0 {
                eprintln!("skipped {skipped} rank-deficient pairs");
            }
            if baseline.is_some() {
                let random = random_subspace_angles(net.output_dim(), net.latent_dim(), pairs, seed.wrapping_add(1));
                rows.extend(random.into_iter().map(|angle| AngleRow {
                    angle,
                    source: AngleSource::Random,
                }));
            }
            write_csv(&output, rows)
        }
        AnalyzeCommand::Logdet {
            model,
            regions,
            seed,
            dist,
            output,
        } => {
            let net = load_model(&model)?;
            let sample = logdet_histogram(&net, &latent(dist, &net), regions, seed, DEFAULT_REL_TOL)?;
            if sample.degenerate > 0 {
                eprintln!("{} rank-deficient regions omitted", sample.degenerate);
            }
            write_csv(
                &output,
                sample.regions.into_iter().map(|r| LogDetRow {
                    region_hash: r.code_hash,
                    log_det: r.log_det,
                }),
            )
        }
        AnalyzeCommand::Dropout {
            model,
            mode,
            p,
            realizations,
            regions,
            seed,
            dist,
            output,
        } => {
            let mode = match mode {
                ModeArg::Dropout => NoiseMode::Dropout,
                ModeArg::Dropconnect => NoiseMode::Dropconnect,
            };
            let spec = DropoutSpec::new(mode, p, seed)?;
            let net = load_model(&model)?;
            let dims =
                ensemble_dimensions(&net, &spec, &latent(dist, &net), realizations, regions, seed, DEFAULT_REL_TOL)?;
            write_csv(&output, dims)
        }
    }
}

fn run_density(cmd: DensityCommand) -> CliResult<()> {
    match cmd {
        DensityCommand::Entropy {
            model,
            dist,
            mc,
            seed,
            output,
        } => {
            let net = load_model(&model)?;
            let est = entropy(&net, &latent(dist, &net), mc, seed, DEFAULT_REL_TOL)?;
            write_json(
                &output,
                &json!({
                    "entropy": est.entropy,
                    "std_err": est.std_err,
                    "degenerate_fraction": est.degenerate_fraction,
                }),
            )
        }
        DensityCommand::Eval {
            model,
            points,
            dist,
            restarts,
            seed,
            output,
        } => {
            let net = load_model(&model)?;
            let xs = read_points(&points, net.output_dim())?;
            let dist = latent(dist, &net);
            let search = InverseSearch::new(dist, seed).with_restarts(restarts);
            let reports = xs
                .iter()
                .map(|x| likelihood_report(&net, &dist, x, &search))
                .collect::<dgn_spline::Result<Vec<_>>>()?;
            write_json(&output, &reports)
        }
    }
}

fn run_study(cmd: StudyCommand) -> CliResult<()> {
    match cmd {
        StudyCommand::Angles { net, pairs, output } => {
            positive("pairs", pairs)?;
            let study = angle_study(&net_spec(&net)?, pairs, net.seed)?;
            if study.skipped > 0 {
                eprintln!("skipped {} rank-deficient pairs", study.skipped);
            }
            write_csv(&output, study.rows)
        }
        StudyCommand::Logdet {
            sigma1,
            sigma2,
            regions,
            rescale,
            seed,
            output,
        } => {
            let spec = LogDetStudySpec {
                net: LogDetStudySpec::default_net(seed),
                sigma1,
                sigma2,
                rescale: match rescale {
                    RescaleArg::Values => RescaleMode::Values,
                    RescaleArg::InitBound => RescaleMode::InitBound,
                },
            };
            let study = logdet_study(&spec, regions, seed)?;
            if study.degenerate > 0 {
                eprintln!("{} rank-deficient regions omitted", study.degenerate);
            }
            write_csv(
                &output,
                study.rows.into_iter().map(|r| StudyLogDetRow {
                    sigma1,
                    sigma2,
                    region_hash: r.code_hash,
                    log_det: r.log_det,
                }),
            )
        }
        StudyCommand::Capacity {
            s_star,
            data_dim,
            s_range,
            n_range,
            noise,
            trials,
            seed,
            output,
        } => {
            let standard = CapacitySpec::standard();
            let spec = CapacitySpec {
                s_star,
                data_dim,
                s_range: s_range.unwrap_or(standard.s_range),
                n_range: n_range.unwrap_or(standard.n_range),
                noise,
                trials,
            };
            write_csv(&output, linear_capacity_study(&spec, seed)?)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(c) => run_gen(c),
        Command::Analyze(c) => run_analyze(c),
        Command::Density(c) => run_density(c),
        Command::Study(c) => run_study(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
