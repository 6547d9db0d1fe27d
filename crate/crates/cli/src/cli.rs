//! Argument parsing and the subcommand drivers.
//!
//! Indices typed on the command line (variables, locations) and printed in
//! text reports (levels, locations) count from 1. Variables may also be
//! named.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use mbgl_core::analysis::{self, FittedModel, ZERO_TOL};
use mbgl_core::cv::{cross_validate_stats, CvPlan, CvStage, DEFAULT_FOLDS};
use mbgl_core::dc::{dc_fit_with, mle_fit_with, FitReport};
use mbgl_core::eof::build_pooled_eof_basis_with;
use mbgl_core::model::{default_names, standardize};
use mbgl_core::noise::{estimate_all_noise_with, NoiseEstimate, NoiseFitConfig};
use mbgl_core::simulate::{simulate_with, SimulateOptions};
use mbgl_core::suffstats::compute_suffstats_with;
use mbgl_core::{DMatrix, Dataset, NoiseModel, PenaltyConfig};

use crate::archive::{
    creation_time, BasisDir, FitMode, Manifest, ModelArchive, ARCHIVE_VERSION, TOOL_VERSION,
};
use crate::dataio::{self, read_dataset, read_matrix, write_dataset, write_matrix, write_text};
use crate::error::CliError;
use crate::exec::{Progress, RayonExecutor, THREADS_ENV};
use crate::matfile::MatrixFile;

#[derive(Debug, Parser)]
#[command(name = "mbgl", version, about = "Multivariate basis graphical lasso")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = THREADS_ENV)]
    pub threads: Option<usize>,
    /// Per-iteration progress on stderr.
    #[arg(long, short, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Standardize data and build a pooled EOF basis.
    Basis(BasisArgs),
    /// Fit precision blocks with the DC algorithm.
    Fit(FitArgs),
    /// Choose (λ, ρ) by k-fold cross-validation.
    Cv(CvArgs),
    /// Draw realizations from a fitted model.
    Simulate(SimulateArgs),
    /// Summaries and fields derived from a fitted model.
    Diagnose(DiagnoseArgs),
    /// Convert between .mbgl and CSV.
    Convert(ConvertArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Dataset: 3-D .mbgl (p×n×m) or CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Variable names, one per line.
    #[arg(long)]
    pub names: Option<PathBuf>,
    /// n×d location coordinates (.mbgl or CSV).
    #[arg(long)]
    pub locations: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct NoiseArgs {
    /// Known noise variances τ² as a p×1 matrix.
    #[arg(long, conflicts_with = "estimate_noise")]
    pub noise: Option<PathBuf>,
    /// Estimate τ² per variable (the default when --noise is absent).
    #[arg(long)]
    pub estimate_noise: bool,
}

#[derive(Debug, Args)]
pub struct BasisArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub levels: usize,
    /// Standardize each (variable, location) series before the EOFs.
    #[arg(long)]
    pub standardize: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Directory written by `basis`.
    #[arg(long)]
    pub basis: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0.0)]
    pub rho: f64,
    /// Unpenalized maximum likelihood.
    #[arg(long, conflicts_with_all = ["lambda", "rho"])]
    pub mle: bool,
    /// Relative-change stopping tolerance for the DC loop.
    #[arg(long, default_value_t = 0.05)]
    pub tol: f64,
    #[arg(long, default_value_t = 100)]
    pub max_iterations: usize,
    #[command(flatten)]
    pub noise: NoiseArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CvArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub basis: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    pub lambda_grid: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub rho_grid: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_FOLDS)]
    pub folds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.05)]
    pub tol: f64,
    #[command(flatten)]
    pub noise: NoiseArgs,
    /// Score table (tab separated).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub realizations: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub no_noise: bool,
    /// Map back to original units with the model's standardization.
    #[arg(long)]
    pub destandardize: bool,
    /// Dataset output (.mbgl or CSV).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// marginal-precisions | edges | neighbors:<var> | independence |
    /// local-sd:<var> | local-corr:<var>,<var> | corr-map:<var>,<var>,<anchor>
    #[arg(long)]
    pub report: String,
    /// Add τ² to the variances behind sd and correlation fields.
    #[arg(long)]
    pub include_noise: bool,
    /// Entries at or below this magnitude count as zero.
    #[arg(long, default_value_t = ZERO_TOL)]
    pub zero_tol: f64,
    /// Output file; fields go to a MatrixFile when it ends in .mbgl.
    /// Text reports print to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    pub input: PathBuf,
    pub output: PathBuf,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let exec = RayonExecutor::new(cli.threads)?;
    match cli.command {
        Command::Basis(a) => cmd_basis(a),
        Command::Fit(a) => cmd_fit(a, &exec, cli.verbose),
        Command::Cv(a) => cmd_cv(a, &exec),
        Command::Simulate(a) => cmd_simulate(a, &exec),
        Command::Diagnose(a) => cmd_diagnose(a),
        Command::Convert(a) => cmd_convert(a),
    }
}

fn cmd_basis(a: BasisArgs) -> Result<(), CliError> {
    let data = read_dataset(
        &a.data.data,
        a.data.names.as_deref(),
        a.data.locations.as_deref(),
    )?;
    let (work, fields) = if a.standardize {
        let (z, f) = standardize(&data)?;
        (z, Some(f))
    } else {
        (data.clone(), None)
    };
    let basis = build_pooled_eof_basis_with(&work, a.levels, Default::default())?;
    BasisDir {
        basis,
        fields,
        locations: a.data.locations.is_some().then(|| data.locations().clone()),
        names: data.variable_names().to_vec(),
    }
    .save(&a.out)
}

/// Reads the data for `fit`/`cv` and applies the basis directory's
/// standardization, if any.
fn load_fit_inputs(d: &DataArgs, basis_dir: &Path) -> Result<(Dataset, BasisDir), CliError> {
    let bd = BasisDir::load(basis_dir)?;
    let mut data = read_dataset(&d.data, d.names.as_deref(), d.locations.as_deref())?;
    let unnamed =
        d.names.is_none() && data.variable_names() == default_names(data.n_vars()).as_slice();
    if unnamed && bd.names.len() == data.n_vars() {
        data = Dataset::new(
            data.n_vars(),
            data.n_locations(),
            data.n_realizations(),
            data.values().to_vec(),
            data.locations().clone(),
            bd.names.clone(),
        )?;
    }
    if let Some(f) = &bd.fields {
        data = f.apply(&data)?;
    }
    Ok((data, bd))
}

fn load_noise(
    a: &NoiseArgs,
    data: &Dataset,
    bd: &BasisDir,
    exec: &RayonExecutor,
) -> Result<(NoiseModel, Vec<NoiseEstimate>), CliError> {
    match &a.noise {
        Some(path) => {
            let m = read_matrix(path)?;
            if m.ncols() != 1 || m.nrows() != data.n_vars() {
                return Err(CliError::validation(format!(
                    "{}: noise must be {}×1, got {}×{}",
                    path.display(),
                    data.n_vars(),
                    m.nrows(),
                    m.ncols()
                )));
            }
            Ok((NoiseModel::new(m.as_slice().to_vec())?, Vec::new()))
        }
        None => Ok(estimate_all_noise_with(
            data,
            &bd.basis,
            &NoiseFitConfig::default(),
            exec,
        )?),
    }
}

fn report_text(
    report: &FitReport,
    names: &[String],
    noise: &NoiseModel,
    fits: &[NoiseEstimate],
) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "converged\t{}", report.converged);
    let _ = writeln!(s, "dc_iterations\t{}", report.n_dc_iterations);
    let _ = writeln!(s, "lambda\t{}", report.penalty.lambda);
    let _ = writeln!(s, "rho\t{}", report.penalty.rho);
    let _ = writeln!(s, "dc_tolerance\t{}", report.penalty.dc_tolerance);
    s.push_str("\niteration\tobjective\trelative_change\n");
    for (k, f) in report.objective_trace.iter().enumerate() {
        let change = k.checked_sub(1).map_or(String::new(), |i| {
            report.relative_change_trace[i].to_string()
        });
        let _ = writeln!(s, "{k}\t{f}\t{change}");
    }
    s.push_str("\nvariable\ttau_sq");
    if !fits.is_empty() {
        s.push_str("\ta\tb\tobjective\tconverged\tboundary_hit");
    }
    s.push('\n');
    for (v, name) in names.iter().enumerate() {
        let _ = write!(s, "{name}\t{}", noise.tau_sq()[v]);
        if let Some(e) = fits.get(v) {
            let _ = write!(
                s,
                "\t{}\t{}\t{}\t{}\t{}",
                e.params.a, e.params.b, e.objective, e.converged, e.boundary_hit
            );
        }
        s.push('\n');
    }
    s
}

fn cmd_fit(a: FitArgs, exec: &RayonExecutor, verbose: bool) -> Result<(), CliError> {
    let (data, bd) = load_fit_inputs(&a.data, &a.basis)?;
    let (noise, fits) = load_noise(&a.noise, &data, &bd, exec)?;
    let stats = compute_suffstats_with(&data, &bd.basis, &noise, exec)?;
    let mut progress = Progress::new(verbose);
    let (q, report, mode) = if a.mle {
        let (q, r) = mle_fit_with(&stats, &noise, a.tol, None, exec, &mut progress)?;
        (q, r, FitMode::Mle)
    } else {
        let penalty = PenaltyConfig {
            dc_tolerance: a.tol,
            max_dc_iterations: a.max_iterations,
            ..PenaltyConfig::new(a.lambda, a.rho)
        };
        let (q, r) = dc_fit_with(&stats, &noise, &penalty, None, exec, &mut progress)?;
        (q, r, FitMode::Penalized)
    };
    eprintln!(
        "fit: {} DC iterations, converged={}, wall time {:.3} s",
        report.n_dc_iterations, report.converged, report.wall_time_seconds
    );
    let names = data.variable_names().to_vec();
    let text = report_text(&report, &names, &noise, &fits);
    let manifest = Manifest {
        archive_version: ARCHIVE_VERSION,
        tool_version: TOOL_VERSION.into(),
        created: creation_time(),
        p: q.p(),
        levels: q.n_levels(),
        n: bd.basis.n_locations(),
        mode,
        lambda: report.penalty.lambda,
        rho: report.penalty.rho,
        dc_tolerance: report.penalty.dc_tolerance,
        dc_iterations: report.n_dc_iterations,
        converged: report.converged,
    };
    let mut model = FittedModel::new(bd.basis, q, noise, bd.fields, names)?;
    if let Some(loc) = bd.locations {
        model = model.with_locations(loc)?;
    }
    ModelArchive { model, manifest }.save(&a.out)?;
    write_text(&a.out.join("report.tsv"), &text)
}

fn cmd_cv(a: CvArgs, exec: &RayonExecutor) -> Result<(), CliError> {
    let (data, bd) = load_fit_inputs(&a.data, &a.basis)?;
    let (noise, _) = load_noise(&a.noise, &data, &bd, exec)?;
    let stats = compute_suffstats_with(&data, &bd.basis, &noise, exec)?;
    let plan = CvPlan::new(
        data.n_realizations(),
        a.folds,
        a.lambda_grid,
        a.rho_grid,
        a.seed,
    )?;
    let base = PenaltyConfig {
        dc_tolerance: a.tol,
        ..PenaltyConfig::default()
    };
    let outcome = cross_validate_stats(&stats, &noise, &plan, &base, exec)?;
    let mut s = String::from("stage\tlambda\trho\tmean_score");
    for f in 1..=plan.k {
        let _ = write!(s, "\tfold_{f}");
    }
    s.push_str("\tstatus\n");
    for c in &outcome.table {
        let stage = match c.stage {
            CvStage::Sparsity => "sparsity",
            CvStage::Fusion => "fusion",
        };
        let mean = c.mean_score.map_or("NA".into(), |v| v.to_string());
        let _ = write!(s, "{stage}\t{}\t{}\t{mean}", c.lambda, c.rho);
        for f in 0..plan.k {
            let v = c.fold_scores.get(f).map_or("NA".into(), |v| v.to_string());
            let _ = write!(s, "\t{v}");
        }
        let status = c
            .failure
            .as_deref()
            .map_or("ok".into(), |e| e.replace(['\t', '\n'], " "));
        let _ = writeln!(s, "\t{status}");
    }
    let sel = &outcome.selected;
    let _ = writeln!(
        s,
        "selected\t{}\t{}\t{}",
        sel.lambda, sel.rho, outcome.selected_score
    );
    write_text(&a.out, &s)?;
    println!(
        "selected lambda={} rho={} score={}",
        sel.lambda, sel.rho, outcome.selected_score
    );
    Ok(())
}

fn cmd_simulate(a: SimulateArgs, exec: &RayonExecutor) -> Result<(), CliError> {
    let archive = ModelArchive::load(&a.model)?;
    let opts = SimulateOptions {
        add_noise: !a.no_noise,
        destandardize: a.destandardize,
    };
    let sim = simulate_with(&archive.model, a.realizations, a.seed, opts, exec)?;
    write_dataset(&a.out, &sim)
}

fn parse_var(model: &FittedModel, token: &str) -> Result<usize, CliError> {
    let token = token.trim();
    if let Some(i) = model.variable_names().iter().position(|n| n == token) {
        return Ok(i);
    }
    match token.parse::<usize>() {
        Ok(i) if (1..=model.p()).contains(&i) => Ok(i - 1),
        _ => Err(CliError::validation(format!(
            "unknown variable {token:?} (use a name or 1..={})",
            model.p()
        ))),
    }
}

fn parse_loc(model: &FittedModel, token: &str) -> Result<usize, CliError> {
    match token.trim().parse::<usize>() {
        Ok(s) if (1..=model.n_locations()).contains(&s) => Ok(s - 1),
        _ => Err(CliError::validation(format!(
            "location must be in 1..={}, got {token:?}",
            model.n_locations()
        ))),
    }
}

enum Output {
    Text(String),
    Field(Vec<f64>),
}

fn field_text(model: &FittedModel, values: &[f64]) -> String {
    let d = model.locations().map_or(0, |l| l.ncols());
    let mut s = String::from("location");
    for k in 1..=d {
        let _ = write!(s, "\tx{k}");
    }
    s.push_str("\tvalue\n");
    for (t, v) in values.iter().enumerate() {
        let _ = write!(s, "{}", t + 1);
        if let Some(loc) = model.locations() {
            for k in 0..d {
                let _ = write!(s, "\t{}", loc[(t, k)]);
            }
        }
        let _ = writeln!(s, "\t{v}");
    }
    s
}

fn diagnose_report(a: &DiagnoseArgs, model: &FittedModel) -> Result<Output, CliError> {
    let names = model.variable_names();
    let q = model.q();
    let (kind, arg) = a.report.split_once(':').unwrap_or((a.report.as_str(), ""));
    let args: Vec<&str> = if arg.is_empty() {
        Vec::new()
    } else {
        arg.split(',').collect()
    };
    let want = |k: usize| {
        if args.len() == k {
            Ok(())
        } else {
            Err(CliError::validation(format!(
                "report {kind} takes {k} argument(s), got {:?}",
                arg
            )))
        }
    };
    let mut s = String::new();
    match kind {
        "marginal-precisions" => {
            want(0)?;
            let mp = analysis::marginal_precisions(q);
            let _ = writeln!(s, "level\t{}", names.join("\t"));
            for l in 0..mp.nrows() {
                let row: Vec<String> = mp.row(l).iter().map(|v| v.to_string()).collect();
                let _ = writeln!(s, "{}\t{}", l + 1, row.join("\t"));
            }
        }
        "edges" => {
            want(0)?;
            s.push_str("level\tedges\n");
            for (l, c) in analysis::edge_counts_by_level(q, a.zero_tol)
                .iter()
                .enumerate()
            {
                let _ = writeln!(s, "{}\t{c}", l + 1);
            }
        }
        "neighbors" => {
            want(1)?;
            let i = parse_var(model, args[0])?;
            let trace = analysis::neighbor_trace(q, i, a.zero_tol)?;
            let _ = writeln!(s, "level\t{}", names.join("\t"));
            for (l, row) in trace.iter().enumerate() {
                let cells: Vec<&str> = row.iter().map(|b| if *b { "1" } else { "0" }).collect();
                let _ = writeln!(s, "{}\t{}", l + 1, cells.join("\t"));
            }
        }
        "independence" => {
            want(0)?;
            s.push_str("variable\tindependent_from_level\n");
            for (name, l) in names
                .iter()
                .zip(analysis::independence_level(q, a.zero_tol))
            {
                let _ = writeln!(s, "{name}\t{l}");
            }
        }
        "local-sd" => {
            want(1)?;
            let i = parse_var(model, args[0])?;
            return Ok(Output::Field(model.local_sd_field(i, a.include_noise)?));
        }
        "local-corr" => {
            want(2)?;
            let (i, j) = (parse_var(model, args[0])?, parse_var(model, args[1])?);
            return Ok(Output::Field(model.local_cross_correlation_field(
                i,
                j,
                a.include_noise,
            )?));
        }
        "corr-map" => {
            want(3)?;
            let (i, j) = (parse_var(model, args[0])?, parse_var(model, args[1])?);
            let anchor = parse_loc(model, args[2])?;
            return Ok(Output::Field(model.correlation_map(
                i,
                j,
                anchor,
                a.include_noise,
            )?));
        }
        other => return Err(CliError::validation(format!("unknown report {other:?}"))),
    }
    Ok(Output::Text(s))
}

fn cmd_diagnose(a: DiagnoseArgs) -> Result<(), CliError> {
    let archive = ModelArchive::load(&a.model)?;
    let model = &archive.model;
    let out = diagnose_report(&a, model)?;
    let to_mbgl = a
        .out
        .as_deref()
        .is_some_and(|p| p.extension().is_some_and(|e| e == "mbgl"));
    let text = match out {
        Output::Field(v) if to_mbgl => {
            let path = a.out.as_deref().unwrap();
            return write_matrix(path, &DMatrix::from_column_slice(v.len(), 1, &v));
        }
        Output::Field(v) => field_text(model, &v),
        Output::Text(_) if to_mbgl => {
            return Err(CliError::validation(format!(
                "report {} is text, not a field",
                a.report
            )));
        }
        Output::Text(t) => t,
    };
    match &a.out {
        Some(path) => write_text(path, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_convert(a: ConvertArgs) -> Result<(), CliError> {
    let csv_in = a
        .input
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let dataset_in = if csv_in {
        dataio::read_text(&a.input)?
            .trim_start()
            .to_ascii_lowercase()
            .starts_with("realization")
    } else {
        MatrixFile::read(&a.input)?.dims().len() == 3
    };
    if dataset_in {
        write_dataset(&a.output, &read_dataset(&a.input, None, None)?)
    } else {
        write_matrix(&a.output, &read_matrix(&a.input)?)
    }
}
