//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use fracbox::assembly::{
    assemble_mass, banded, lump, BilinearFormKind, CoefficientField, InnerProductKind, OperatorBundle, LOAD_TOLERANCE,
};
use fracbox::dual::{reference_simplex_flux_check, DualCells};
use fracbox::fracop::{
    frac_solve, generalized_eig, intrinsic_box_solve, symmetric_eig, FracMethod, FracOperator, FracSolveSpec, LoadKind,
};
use fracbox::harness::{compare_inner_products, run_experiment, theoretical_rate, ExperimentKind, ExperimentSpec};
use fracbox::mesh::{BoundaryCondition, Mesh};
use fracbox::projection::ph_projection_tests;
use fracbox::reference::{checkerboard_load, indicator_load};
use fracbox::sparse::CsrMatrix;
use fracbox::Result;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Result<Outcome> {
    Ok(Outcome { passed, detail: detail.into() })
}

fn bundle(mesh: &Mesh, ip: InnerProductKind, f: &(dyn Fn(&[f64]) -> f64 + Sync)) -> Result<OperatorBundle> {
    let dual = DualCells::build(mesh)?;
    OperatorBundle::assemble(
        mesh,
        &dual,
        &CoefficientField::laplacian(1.0),
        BilinearFormKind::BoxAveraged,
        ip,
        f,
        LOAD_TOLERANCE,
    )
}

fn box_spec(beta: f64, ip: InnerProductKind, method: FracMethod) -> FracSolveSpec {
    FracSolveSpec {
        beta,
        method,
        inner_product: ip,
        bilinear_form: BilinearFormKind::BoxAveraged,
        load: LoadKind::Box,
    }
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn min_eig(a: &CsrMatrix) -> Result<f64> {
    let (values, _) = symmetric_eig(&a.to_dense())?;
    Ok(values[0])
}

fn geometry() -> Result<Outcome> {
    let reports: Vec<_> = (1..=3).map(reference_simplex_flux_check).collect();
    let worst = reports.iter().map(|r| r.max_defect).fold(0.0, f64::max);
    let passed = reports.iter().all(|r| r.passed && r.max_defect <= 1e-13);
    outcome(passed, format!("max flux defect {worst:.2e} over d = 1, 2, 3"))
}

fn loewner() -> Result<Outcome> {
    let mut meshes = Vec::new();
    for n in [4, 16, 64, 128] {
        meshes.push(Mesh::uniform_interval(n, BoundaryCondition::Dirichlet)?);
        meshes.push(Mesh::uniform_interval(n, BoundaryCondition::Neumann)?);
    }
    for n in [2, 4, 8] {
        meshes.push(Mesh::unit_square(n, BoundaryCondition::Dirichlet)?);
        meshes.push(Mesh::unit_square(n, BoundaryCondition::Neumann)?);
    }
    let mut worst = f64::INFINITY;
    let mut exact = true;
    let mut checked = 0;
    for mesh in &meshes {
        let dual = DualCells::build(mesh)?;
        let m = assemble_mass(mesh, &dual, InnerProductKind::ExactL2)?;
        let l = lump(&m)?;
        let n = m.nrows();
        for i in 0..n {
            let mi = banded(&m, i)?;
            worst = worst.min(min_eig(&mi.linear_combination(1.0, &m, -1.0))?);
            worst = worst.min(min_eig(&l.linear_combination(1.0, &mi, -1.0))?);
            checked += 1;
        }
        exact &= banded(&m, n - 1)?.max_abs_diff(&m) == 0.0;
        exact &= banded(&m, 0)?.max_abs_diff(&l) == 0.0;
        exact &= assemble_mass(mesh, &dual, InnerProductKind::Banded(0))?.max_abs_diff(&l) == 0.0;
    }
    outcome(
        worst >= -1e-12 && exact,
        format!("{checked} bandwidths on {} meshes, smallest sandwich eigenvalue {worst:.2e}, end points exact: {exact}", meshes.len()),
    )
}

fn invariance() -> Result<Outcome> {
    let mesh = Mesh::uniform_interval(32, BoundaryCondition::Dirichlet)?;
    let mut solutions = Vec::new();
    for ip in [InnerProductKind::ExactL2, InnerProductKind::Lumped, InnerProductKind::Banded(1)] {
        let b = bundle(&mesh, ip, &indicator_load)?;
        solutions.push(frac_solve(&b, &box_spec(1.0, ip, FracMethod::EigOracle))?);
    }
    let spread = max_diff(&solutions[0], &solutions[1]).max(max_diff(&solutions[0], &solutions[2]));
    let mesh = Mesh::uniform_interval(16, BoundaryCondition::Dirichlet)?;
    let mut half = Vec::new();
    for ip in [InnerProductKind::ExactL2, InnerProductKind::Lumped] {
        let b = bundle(&mesh, ip, &indicator_load)?;
        half.push(frac_solve(&b, &box_spec(0.5, ip, FracMethod::EigOracle))?);
    }
    let witness = max_diff(&half[0], &half[1]);
    outcome(
        spread <= 1e-11 && witness > 1e-6,
        format!("beta = 1 spread {spread:.2e}, beta = 0.5 difference {witness:.2e}"),
    )
}

fn intrinsic() -> Result<Outcome> {
    let meshes = [
        (Mesh::uniform_interval(16, BoundaryCondition::Dirichlet)?, indicator_load as fn(&[f64]) -> f64),
        (Mesh::unit_square(4, BoundaryCondition::Dirichlet)?, checkerboard_load),
        (Mesh::unit_square(4, BoundaryCondition::Neumann)?, checkerboard_load),
    ];
    let mut worst: f64 = 0.0;
    for (mesh, f) in &meshes {
        let b = bundle(mesh, InnerProductKind::Lumped, f)?;
        for beta in [0.3, 0.5, 1.0, 1.7] {
            let intrinsic = intrinsic_box_solve(&b, beta)?;
            for method in [FracMethod::EigOracle, FracMethod::Sinc { step: 0.2 }] {
                let u = frac_solve(&b, &box_spec(beta, InnerProductKind::Lumped, method))?;
                worst = worst.max(max_diff(&u, &intrinsic.u));
            }
        }
    }
    outcome(worst <= 1e-9, format!("max nodal difference {worst:.2e}"))
}

fn decays(log_errors: &[f64]) -> bool {
    log_errors.windows(2).all(|w| w[0] - w[1] >= 1.0)
}

fn methods() -> Result<Outcome> {
    let mesh = Mesh::uniform_interval(64, BoundaryCondition::Dirichlet)?;
    let b = bundle(&mesh, InnerProductKind::Lumped, &indicator_load)?;
    let op = FracOperator::new(&b.k, &b.m)?;
    let n = op.dim();
    let relative_error = |beta: f64, method: FracMethod| -> Result<f64> {
        let (mut num, mut den) = (0.0, 0.0);
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            let (want, _) = op.apply(beta, &e, FracMethod::EigOracle)?;
            let (got, _) = op.apply(beta, &e, method)?;
            num += want.iter().zip(&got).map(|(a, c)| (a - c) * (a - c)).sum::<f64>();
            den += want.iter().map(|a| a * a).sum::<f64>();
        }
        Ok((num / den).sqrt())
    };
    let mut passed = true;
    let mut detail = Vec::new();
    for beta in [0.25, 0.5, 0.75] {
        let families: [(&str, Vec<FracMethod>); 2] = [
            ("sinc", (1..=6).map(|j| FracMethod::Sinc { step: 1.0 / j as f64 }).collect()),
            (
                "contour",
                (0..6)
                    .map(|j| FracMethod::Contour { n_line: 8 + 6 * j, n_circle: 4 + 3 * j, bracket: None })
                    .collect(),
            ),
        ];
        for (name, seq) in families {
            let logs: Vec<f64> = seq.iter().map(|&m| relative_error(beta, m).map(f64::ln)).collect::<Result<_>>()?;
            let terminal = logs.last().unwrap().exp();
            let ok = decays(&logs) && terminal <= 1e-8;
            passed &= ok;
            detail.push(format!("{name}({beta}) terminal {terminal:.1e}{}", if ok { "" } else { " [fail]" }));
        }
    }
    outcome(passed, detail.join(", "))
}

fn indicator() -> Result<Outcome> {
    let spec = ExperimentSpec::defaults(ExperimentKind::Indicator1D);
    let report = run_experiment(&spec)?;
    let mut passed = true;
    let mut detail = Vec::new();
    for &beta in &spec.betas {
        let fem = report.group(beta, InnerProductKind::Lumped, LoadKind::Fem);
        let bx = report.group(beta, InnerProductKind::Lumped, LoadKind::Box);
        let identical = fem.iter().zip(&bx).all(|(a, b)| (a.l2_error - b.l2_error).abs() <= 1e-12);
        let eoc = report.terminal_eoc(beta, InnerProductKind::Lumped, LoadKind::Box);
        let in_band = eoc.is_some_and(|e| theoretical_rate(spec.experiment, beta).contains(e, 0.15));
        passed &= identical && in_band;
        detail.push(format!("beta {beta}: EOC {:.3}, fem = box {identical}", eoc.unwrap_or(f64::NAN)));
    }
    outcome(passed, detail.join(", "))
}

fn singular() -> Result<Outcome> {
    let spec = ExperimentSpec::defaults(ExperimentKind::Singular1D);
    let report = run_experiment(&spec)?;
    let bx = report.terminal_eoc(1.0, InnerProductKind::Lumped, LoadKind::Box).unwrap_or(f64::NAN);
    let fem = report.terminal_eoc(1.0, InnerProductKind::Lumped, LoadKind::Fem).unwrap_or(f64::NAN);
    outcome(
        bx > 1.5 && bx < 2.0 && fem >= bx - 0.05,
        format!("box EOC {bx:.3}, fem EOC {fem:.3}"),
    )
}

fn checkerboard() -> Result<Outcome> {
    let spec = ExperimentSpec::defaults(ExperimentKind::Checker2D);
    let cmp = compare_inner_products(&spec)?;
    let mut passed = cmp.terminal_differences.iter().all(|d| d.4 <= 0.1);
    let mut detail = Vec::new();
    for &beta in &spec.betas {
        let rate = theoretical_rate(spec.experiment, beta);
        for &ip in &spec.inner_products {
            let eoc = cmp.report.terminal_eoc(beta, ip, LoadKind::Box);
            passed &= eoc.is_some_and(|e| rate.contains(e, 0.2));
            let group = cmp.report.group(beta, ip, LoadKind::Box);
            let pre = group.iter().rev().nth(1).and_then(|r| r.eoc).unwrap_or(f64::NAN);
            detail.push(format!("beta {beta} {ip}: {:.3} (previous pair {pre:.3})", eoc.unwrap_or(f64::NAN)));
        }
    }
    let spread = cmp.terminal_differences.iter().map(|d| d.4).fold(0.0, f64::max);
    detail.push(format!("max pairwise difference {spread:.3}"));
    outcome(passed, detail.join(", "))
}

fn spectral() -> Result<Outcome> {
    let mut passed = true;
    let mut detail = Vec::new();
    for ip in [InnerProductKind::Lumped, InnerProductKind::ExactL2] {
        let mut lo = Vec::new();
        let mut hi = Vec::new();
        for level in 3..=9 {
            let n = 1usize << level;
            let mesh = Mesh::uniform_interval(n, BoundaryCondition::Dirichlet)?;
            let b = bundle(&mesh, ip, &indicator_load)?;
            let eig = generalized_eig(&b.k, &b.m, 4096)?;
            let h = mesh.h();
            lo.push(eig.eigenvalues[0]);
            hi.push(eig.eigenvalues.last().unwrap() * h * h);
        }
        let (lmin, lmax) = (lo.iter().cloned().fold(f64::INFINITY, f64::min), lo.iter().cloned().fold(0.0, f64::max));
        let c = hi.iter().cloned().fold(0.0, f64::max);
        let (cmin, cmax) = (hi.iter().cloned().fold(f64::INFINITY, f64::min), c);
        passed &= lmin > 0.0 && lmax / lmin <= 2.0 && cmax / cmin <= 2.0 && c <= 13.0;
        detail.push(format!("{ip}: lambda_min in [{lmin:.4}, {lmax:.4}], lambda_max h^2 in [{cmin:.3}, {cmax:.3}]"));
    }
    outcome(passed, detail.join(", "))
}

fn projection() -> Result<Outcome> {
    let meshes = [
        Mesh::uniform_interval(8, BoundaryCondition::Dirichlet)?,
        Mesh::uniform_interval(8, BoundaryCondition::Neumann)?,
        Mesh::unit_square(4, BoundaryCondition::Dirichlet)?,
        Mesh::unit_square(4, BoundaryCondition::Neumann)?,
    ];
    let mut passed = true;
    let mut witness = f64::INFINITY;
    let mut kernel: f64 = 0.0;
    for mesh in &meshes {
        let r = ph_projection_tests(mesh, &DualCells::build(mesh)?)?;
        passed &= r.passed;
        witness = witness.min(r.asymmetry_witness);
        kernel = kernel.max(r.kernel_defect.max(r.averaging_defect));
    }
    outcome(passed, format!("kernel and averaging defects {kernel:.2e}, smallest asymmetry witness {witness:.2e}"))
}

type Check = fn() -> Result<Outcome>;

fn main() -> ExitCode {
    let criteria: [(&str, Check, Duration); 10] = [
        ("geometry exactness", geometry, Duration::from_secs(1)),
        ("Loewner sandwich", loewner, Duration::from_secs(10)),
        ("beta = 1 inner-product invariance", invariance, Duration::from_secs(5)),
        ("intrinsic characterization", intrinsic, Duration::from_secs(30)),
        ("fractional-method cross-validation", methods, Duration::from_secs(60)),
        ("indicator 1D EOC", indicator, Duration::from_secs(120)),
        ("singular 1D EOC", singular, Duration::from_secs(180)),
        ("2D checkerboard EOC", checkerboard, Duration::from_secs(900)),
        ("spectral bounds", spectral, Duration::from_secs(10)),
        ("projection laws", projection, Duration::from_secs(5)),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.trim_start_matches('C').parse().ok()).collect();
    let mut failures = 0;
    for (i, (name, check, budget)) in criteria.iter().enumerate() {
        if !only.is_empty() && !only.contains(&(i + 1)) {
            continue;
        }
        let start = Instant::now();
        let result = check();
        let elapsed = start.elapsed();
        let (passed, detail) = match result {
            Ok(o) => (o.passed && elapsed <= *budget, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        failures += usize::from(!passed);
        println!(
            "C{} {} {name}: {detail} ({:.2} s, budget {} s)",
            i + 1,
            if passed { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
