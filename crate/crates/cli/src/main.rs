use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Parser, Subcommand, ValueEnum};

use fracbox::assembly::{BilinearFormKind, CoefficientField, InnerProductKind, OperatorBundle, LOAD_TOLERANCE};
use fracbox::config::load_experiment;
use fracbox::dual::DualCells;
use fracbox::fracop::{frac_solve_with, FracMethod, FracOperator, FracSolveSpec, LoadKind};
use fracbox::harness::run_experiment;
use fracbox::mesh::{BoundaryCondition, Mesh};
use fracbox::{reference, Error};

mod verify;

#[derive(Parser)]
#[command(name = "fracbox", version, about = "Fractional elliptic problems with finite element and box discretizations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one fractional problem and write the nodal solution.
    Solve(SolveArgs),
    /// Run a property suite.
    Verify {
        #[arg(value_enum)]
        suite: verify::Suite,
    },
    /// Run a refinement study from a configuration file.
    Experiment {
        config: PathBuf,
        /// `key=value` overrides applied after the file.
        overrides: Vec<String>,
    },
    /// Print mesh statistics.
    MeshInfo {
        #[arg(long)]
        mesh: MeshArg,
        #[arg(long, default_value = "dirichlet")]
        bc: BoundaryCondition,
    },
}

#[derive(Clone, Debug)]
enum MeshArg {
    Interval(usize),
    Square(usize),
    File(PathBuf),
}

impl FromStr for MeshArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let (kind, rest) = s.split_once(':').ok_or("expected interval:N, square:N or file:PATH")?;
        let count = || rest.parse::<usize>().map_err(|_| format!("`{rest}` is not a cell count"));
        match kind {
            "interval" => Ok(Self::Interval(count()?)),
            "square" => Ok(Self::Square(count()?)),
            "file" => Ok(Self::File(PathBuf::from(rest))),
            _ => Err(format!("unknown mesh kind `{kind}`")),
        }
    }
}

impl MeshArg {
    fn build(&self, bc: BoundaryCondition) -> fracbox::Result<Mesh> {
        match self {
            Self::Interval(n) => Mesh::uniform_interval(*n, bc),
            Self::Square(n) => Mesh::unit_square(*n, bc),
            Self::File(p) => Mesh::read_text(BufReader::new(File::open(p)?), bc),
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LoadFn {
    Indicator,
    Singular,
    Checkerboard,
    ConstantOne,
}

impl LoadFn {
    fn eval(self) -> fn(&[f64]) -> f64 {
        match self {
            Self::Indicator => reference::indicator_load,
            Self::Singular => reference::singular_load,
            Self::Checkerboard => reference::checkerboard_load,
            Self::ConstantOne => |_| 1.0,
        }
    }
}

#[derive(clap::Args)]
struct SolveArgs {
    #[arg(long)]
    mesh: MeshArg,
    #[arg(long, default_value = "dirichlet")]
    bc: BoundaryCondition,
    #[arg(long)]
    beta: f64,
    /// exact-l2, mixed, lumped or banded:I
    #[arg(long, default_value = "lumped")]
    ip: InnerProductKind,
    #[arg(long, default_value = "box")]
    load: LoadKind,
    #[arg(long, value_enum, default_value = "indicator")]
    f: LoadFn,
    /// eig, sinc:K or contour:A:B[:r:R]
    #[arg(long, default_value = "sinc:0.2")]
    method: FracMethod,
    #[arg(long, default_value = "box-averaged")]
    form: BilinearFormKind,
    /// Reaction coefficient.
    #[arg(long, default_value_t = 1.0)]
    kappa: f64,
    /// Solution file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory receiving K.mtx, M.mtx, F.txt and FQ.txt.
    #[arg(long)]
    export: Option<PathBuf>,
}

fn solve(args: &SolveArgs) -> fracbox::Result<()> {
    let spec = FracSolveSpec {
        beta: args.beta,
        method: args.method,
        inner_product: args.ip,
        bilinear_form: args.form,
        load: args.load,
    };
    spec.validate()?;
    let mesh = args.mesh.build(args.bc)?;
    let dual = DualCells::build(&mesh)?;
    let coeff = CoefficientField::laplacian(args.kappa);
    let f = args.f.eval();
    let bundle = OperatorBundle::assemble(&mesh, &dual, &coeff, args.form, args.ip, &f, LOAD_TOLERANCE)?;
    if let Some(dir) = &args.export {
        std::fs::create_dir_all(dir)?;
        bundle.export(dir)?;
    }
    let op = FracOperator::new(&bundle.k, &bundle.m)?;
    let (u, diag) = frac_solve_with(&op, &bundle, &spec)?;
    eprintln!(
        "{} unknowns, method {}, {} solves{}",
        bundle.n,
        diag.method,
        diag.solves,
        diag.bracket.map(|(r, big_r)| format!(", bracket ({r:e}, {big_r:e})")).unwrap_or_default()
    );
    let mut out: Box<dyn Write> = match &args.out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    for v in 0..mesh.n_vertices() {
        let Some(i) = mesh.dof(v) else { continue };
        let coords: Vec<String> = mesh.vertex(v).iter().map(|x| format!("{x:.15e}")).collect();
        writeln!(out, "{} {:.15e}", coords.join(" "), u[i])?;
    }
    out.flush()?;
    Ok(())
}

fn experiment(config: &PathBuf, overrides: &[String]) -> fracbox::Result<bool> {
    let spec = load_experiment(config, overrides)?;
    let report = run_experiment(&spec)?;
    match &spec.output_path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            report.write_csv(BufWriter::new(File::create(p)?))?;
            for line in report.summary() {
                println!("{line}");
            }
        }
        None => {
            report.write_csv(io::stdout().lock())?;
            for line in report.summary() {
                eprintln!("{line}");
            }
        }
    }
    if let Some(row) = report.first_failure() {
        eprintln!(
            "error: beta={} ip={} load={} level={} failed: {}",
            row.beta,
            row.inner_product,
            row.load,
            row.level,
            row.failure.as_deref().unwrap_or_default()
        );
        return Ok(false);
    }
    Ok(true)
}

fn mesh_info(mesh: &MeshArg, bc: BoundaryCondition) -> fracbox::Result<()> {
    let mesh = mesh.build(bc)?;
    let dual = DualCells::build(&mesh)?;
    let dual_total: f64 = dual.volumes().iter().sum();
    println!("dimension {}", mesh.dim());
    println!("vertices {}", mesh.n_vertices());
    println!("elements {}", mesh.n_elements());
    println!("boundary vertices {}", mesh.boundary().len());
    println!("unknowns {} ({})", mesh.n_active(), mesh.bc());
    println!("mesh size {:.6e}", mesh.h());
    println!("measure {:.15e}", mesh.total_measure());
    println!("dual cell volume sum {:.15e}", dual_total);
    Ok(())
}

fn exit_code(e: &Error) -> ExitCode {
    match e {
        Error::InvalidArgument(_) | Error::Parse { .. } | Error::Io(_) => ExitCode::from(2),
        _ => ExitCode::from(1),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Solve(args) => solve(args).map(|_| true),
        Command::Verify { suite } => verify::run(*suite),
        Command::Experiment { config, overrides } => experiment(config, overrides),
        Command::MeshInfo { mesh, bc } => mesh_info(mesh, *bc).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
