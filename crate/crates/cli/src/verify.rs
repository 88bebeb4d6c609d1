use clap::ValueEnum;

use fracbox::assembly::{
    assemble_mass, banded, lump, BilinearFormKind, CoefficientField, InnerProductKind, OperatorBundle, LOAD_TOLERANCE,
};
use fracbox::dual::{reference_simplex_flux_check, DualCells};
use fracbox::fracop::{frac_solve, generalized_eig, intrinsic_box_solve, symmetric_eig, FracMethod, FracSolveSpec, LoadKind};
use fracbox::mesh::{BoundaryCondition, Mesh};
use fracbox::projection::ph_projection_tests;
use fracbox::reference::{checkerboard_load, indicator_load};
use fracbox::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Geometry,
    Loewner,
    Projection,
    Intrinsic,
    Spectral,
    All,
}

struct Check {
    name: String,
    passed: bool,
    detail: String,
}

fn check(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Check {
    Check { name: name.into(), passed, detail: detail.into() }
}

fn small_meshes() -> Result<Vec<(String, Mesh)>> {
    let mut out = Vec::new();
    for bc in [BoundaryCondition::Dirichlet, BoundaryCondition::Neumann] {
        out.push((format!("interval:16 {bc}"), Mesh::uniform_interval(16, bc)?));
        out.push((format!("square:4 {bc}"), Mesh::unit_square(4, bc)?));
    }
    Ok(out)
}

fn geometry() -> Result<Vec<Check>> {
    let mut out: Vec<Check> = (1..=3)
        .map(|d| {
            let r = reference_simplex_flux_check(d);
            check(format!("reference simplex fluxes d={d}"), r.passed, format!("max defect {:.2e}", r.max_defect))
        })
        .collect();
    for (name, mesh) in small_meshes()? {
        let dual = DualCells::build(&mesh)?;
        let total: f64 = dual.volumes().iter().sum();
        let defect = (total - mesh.total_measure()).abs();
        out.push(check(format!("dual cells tile {name}"), defect <= 1e-13, format!("volume defect {defect:.2e}")));
    }
    Ok(out)
}

fn loewner() -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for (name, mesh) in small_meshes()? {
        let dual = DualCells::build(&mesh)?;
        let m = assemble_mass(&mesh, &dual, InnerProductKind::ExactL2)?;
        let l = lump(&m)?;
        let mut worst = f64::INFINITY;
        for i in 0..m.nrows() {
            let mi = banded(&m, i)?;
            for d in [mi.linear_combination(1.0, &m, -1.0), l.linear_combination(1.0, &mi, -1.0)] {
                worst = worst.min(symmetric_eig(&d.to_dense())?.0[0]);
            }
        }
        let ends = banded(&m, m.nrows() - 1)?.max_abs_diff(&m) == 0.0 && banded(&m, 0)?.max_abs_diff(&l) == 0.0;
        out.push(check(
            format!("mass sandwich on {name}"),
            worst >= -1e-12 && ends,
            format!("smallest eigenvalue {worst:.2e}, end points exact: {ends}"),
        ));
    }
    Ok(out)
}

fn projection() -> Result<Vec<Check>> {
    small_meshes()?
        .into_iter()
        .map(|(name, mesh)| {
            let r = ph_projection_tests(&mesh, &DualCells::build(&mesh)?)?;
            Ok(check(
                format!("pseudo-projection laws on {name}"),
                r.passed,
                format!(
                    "kernel {:.2e}, averaging {:.2e}, asymmetry witness {:.2e}",
                    r.kernel_defect, r.averaging_defect, r.asymmetry_witness
                ),
            ))
        })
        .collect()
}

fn lumped_bundle(mesh: &Mesh) -> Result<OperatorBundle> {
    let f = if mesh.dim() == 1 { indicator_load } else { checkerboard_load };
    OperatorBundle::assemble(
        mesh,
        &DualCells::build(mesh)?,
        &CoefficientField::laplacian(1.0),
        BilinearFormKind::BoxAveraged,
        InnerProductKind::Lumped,
        &f,
        LOAD_TOLERANCE,
    )
}

fn intrinsic() -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for (name, mesh) in small_meshes()? {
        let b = lumped_bundle(&mesh)?;
        let mut worst: f64 = 0.0;
        for beta in [0.3, 0.5, 1.0, 1.7] {
            let spec = FracSolveSpec {
                beta,
                method: FracMethod::EigOracle,
                inner_product: InnerProductKind::Lumped,
                bilinear_form: BilinearFormKind::BoxAveraged,
                load: LoadKind::Box,
            };
            let u = frac_solve(&b, &spec)?;
            let v = intrinsic_box_solve(&b, beta)?.u;
            worst = worst.max(u.iter().zip(&v).map(|(a, c)| (a - c).abs()).fold(0.0, f64::max));
        }
        out.push(check(format!("lumped characterization on {name}"), worst <= 1e-9, format!("max difference {worst:.2e}")));
    }
    Ok(out)
}

fn spectral() -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for ip in [InnerProductKind::Lumped, InnerProductKind::ExactL2] {
        let mut lo = Vec::new();
        let mut hi = Vec::new();
        for level in 3..=7 {
            let mesh = Mesh::uniform_interval(1 << level, BoundaryCondition::Dirichlet)?;
            let dual = DualCells::build(&mesh)?;
            let coeff = CoefficientField::laplacian(1.0);
            let b = OperatorBundle::assemble(&mesh, &dual, &coeff, BilinearFormKind::BoxAveraged, ip, &indicator_load, LOAD_TOLERANCE)?;
            let e = generalized_eig(&b.k, &b.m, 1 << 12)?.eigenvalues;
            lo.push(e[0]);
            hi.push(e[e.len() - 1] * mesh.h() * mesh.h());
        }
        let ratio = |v: &[f64]| v.iter().cloned().fold(0.0, f64::max) / v.iter().cloned().fold(f64::INFINITY, f64::min);
        let (rl, rh) = (ratio(&lo), ratio(&hi));
        out.push(check(
            format!("spectral bounds with {ip}"),
            lo[0] > 0.0 && rl <= 2.0 && rh <= 2.0,
            format!("lambda_min spread {rl:.4}, lambda_max h^2 spread {rh:.4}"),
        ));
    }
    Ok(out)
}

pub fn run(suite: Suite) -> Result<bool> {
    let suites = match suite {
        Suite::All => vec![Suite::Geometry, Suite::Loewner, Suite::Projection, Suite::Intrinsic, Suite::Spectral],
        s => vec![s],
    };
    let mut all = true;
    for s in suites {
        let checks = match s {
            Suite::Geometry => geometry(),
            Suite::Loewner => loewner(),
            Suite::Projection => projection(),
            Suite::Intrinsic => intrinsic(),
            Suite::Spectral | Suite::All => spectral(),
        }?;
        for c in checks {
            all &= c.passed;
            println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        }
    }
    Ok(all)
}
