//! Matrix checks of the pseudo-projection `P_h`, defined through
//! `⟨P_h f, χ⟩_h = (f, Qχ)` for all `χ ∈ V_h`.

use faer::linalg::solvers::Solve;
use faer::{Mat, Side};

use crate::assembly::{assemble_load_box, assemble_mass, InnerProductKind};
use crate::dual::{DualCells, Subregion};
use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::quadrature::{triangle_area, Point2, Tolerance};
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone)]
pub struct ProjectionReport {
    /// `max |M_h⁻¹ M_mix − I|` per inner product; zero exactly when
    /// `P_h` restricted to `V_h` is the identity.
    pub identity_defects: Vec<(InnerProductKind, f64)>,
    /// Largest `|P_h g|` over inputs annihilated by `Π_{0,h}`.
    pub kernel_defect: f64,
    /// Largest `|P_h f − P_h Π_{0,h} f|` for smooth `f`.
    pub averaging_defect: f64,
    /// Largest `|(e_i, P_h φ_j) − (P_h e_i, φ_j)|` for the mixed product,
    /// with `e_i` the dual-cell indicators.
    pub asymmetry_witness: f64,
    pub passed: bool,
}

fn dense_solve(a: &CsrMatrix, b: &Mat<f64>) -> Result<Mat<f64>> {
    let llt = a
        .to_dense()
        .llt(Side::Lower)
        .map_err(|e| Error::Factorization(format!("inner product matrix is not positive definite ({e:?})")))?;
    Ok(llt.solve(b))
}

/// `[P_h χ] = M_h⁻¹ M_mix [χ]` on `V_h`.
pub fn projection_matrix(mesh: &Mesh, dual: &DualCells, kind: InnerProductKind) -> Result<Mat<f64>> {
    let mh = assemble_mass(mesh, dual, kind)?;
    let mix = assemble_mass(mesh, dual, InnerProductKind::Mixed)?;
    dense_solve(&mh, &mix.to_dense())
}

fn in_triangle(t: &[Point2; 3], p: &[f64]) -> bool {
    let area = triangle_area(t);
    (0..3).all(|i| {
        let (a, b) = (t[i], t[(i + 1) % 3]);
        let s = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
        s * area >= 0.0
    })
}

fn in_subregion(sub: &Subregion, p: &[f64]) -> bool {
    match sub {
        Subregion::Interval(lo, hi) => *lo <= p[0] && p[0] <= *hi,
        Subregion::Quad(tris) => tris.iter().any(|t| in_triangle(t, p)),
    }
}

/// Integral over each active cell of a function that has zero mean on
/// every piece `A_z(K)`: on an interval piece a full sine period, on a
/// triangle the difference of two barycentric coordinates.
fn zero_mean_fq(mesh: &Mesh, dual: &DualCells, tol: Tolerance) -> Result<Vec<f64>> {
    let mut out = vec![0.0; mesh.n_active()];
    for k in 0..mesh.n_elements() {
        for (z, &v) in mesh.element(k).iter().enumerate() {
            let Some(i) = mesh.dof(v) else { continue };
            out[i] += match dual.subregion(k, z) {
                Subregion::Interval(lo, hi) => crate::quadrature::integrate(
                    |x| (2.0 * std::f64::consts::PI * (x - lo) / (hi - lo)).sin(),
                    lo,
                    hi,
                    tol,
                )?
                .value,
                Subregion::Quad(tris) => {
                    let mut s = 0.0;
                    for t in tris {
                        let area = triangle_area(&t);
                        let bary1 = |p: Point2| {
                            let sub = [t[0], p, t[2]];
                            triangle_area(&sub) / area
                        };
                        let bary2 = |p: Point2| {
                            let sub = [t[0], t[1], p];
                            triangle_area(&sub) / area
                        };
                        s += crate::quadrature::integrate_triangle(|p| bary1(p) - bary2(p), t, tol)?.value;
                    }
                    s
                }
            };
        }
    }
    Ok(out)
}

pub fn ph_projection_tests(mesh: &Mesh, dual: &DualCells) -> Result<ProjectionReport> {
    let n = mesh.n_active();
    let tol = Tolerance::new(1e-13, 1e-16);
    let mut kinds = vec![InnerProductKind::Mixed, InnerProductKind::ExactL2, InnerProductKind::Lumped];
    if n > 1 {
        kinds.push(InnerProductKind::Banded(1));
    }
    let mut identity_defects = Vec::new();
    for &kind in &kinds {
        let p = projection_matrix(mesh, dual, kind)?;
        let mut d: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let id = if i == j { 1.0 } else { 0.0 };
                d = d.max((p[(i, j)] - id).abs());
            }
        }
        identity_defects.push((kind, d));
    }

    // kernel: zero-mean pieces, and indicators of eliminated boundary cells
    let mix = assemble_mass(mesh, dual, InnerProductKind::Mixed)?;
    let lumped = assemble_mass(mesh, dual, InnerProductKind::Lumped)?;
    let apply_ph = |mh: &CsrMatrix, fq: &[f64]| -> Result<Vec<f64>> {
        let rhs = Mat::from_fn(n, 1, |i, _| fq[i]);
        let x = dense_solve(mh, &rhs)?;
        Ok((0..n).map(|i| x[(i, 0)]).collect())
    };
    let mut kernel_inputs = vec![zero_mean_fq(mesh, dual, tol)?];
    for &v in mesh.boundary() {
        if mesh.dof(v).is_some() {
            continue;
        }
        let pieces: Vec<Subregion> = (0..mesh.n_elements())
            .flat_map(|k| mesh.element(k).iter().enumerate().filter(move |(_, &w)| w == v).map(move |(z, _)| (k, z)))
            .map(|(k, z)| dual.subregion(k, z))
            .collect();
        let indicator = move |p: &[f64]| if pieces.iter().any(|s| in_subregion(s, p)) { 1.0 } else { 0.0 };
        kernel_inputs.push(assemble_load_box(mesh, dual, &indicator, tol)?);
    }
    let mut kernel_defect: f64 = 0.0;
    for fq in &kernel_inputs {
        for mh in [&mix, &lumped] {
            kernel_defect = kernel_defect.max(crate::sparse::max_abs(&apply_ph(mh, fq)?));
        }
    }

    // P_h f against P_h Π_0 f with cell averages from a fixed Gauss rule
    let smooth = |p: &[f64]| (3.0 * p[0]).sin() + p.iter().map(|x| x * x).sum::<f64>();
    let fq = assemble_load_box(mesh, dual, &smooth, tol)?;
    let mut averaged = vec![0.0; n];
    for k in 0..mesh.n_elements() {
        for (z, &v) in mesh.element(k).iter().enumerate() {
            let Some(i) = mesh.dof(v) else { continue };
            averaged[i] += match dual.subregion(k, z) {
                Subregion::Interval(lo, hi) => {
                    let (xs, ws) = crate::quadrature::gauss_legendre_on(20, lo, hi);
                    xs.iter().zip(&ws).map(|(x, w)| w * smooth(&[*x])).sum()
                }
                Subregion::Quad(tris) => tris
                    .iter()
                    .map(|t| {
                        crate::quadrature::integrate_triangle(|p| smooth(&p), *t, Tolerance::new(1e-14, 1e-17))
                            .map(|e| e.value)
                    })
                    .sum::<Result<f64>>()?,
            };
        }
    }
    let mut averaging_defect: f64 = 0.0;
    for mh in [&mix, &lumped] {
        let a = apply_ph(mh, &fq)?;
        let b = apply_ph(mh, &averaged)?;
        averaging_defect = averaging_defect.max(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max));
    }

    // (e_i, P_h φ_j) = M_mix[i][j] against (P_h e_i, φ_j) = |b_i| (M M_mix⁻¹)_{ji}
    let exact = assemble_mass(mesh, dual, InnerProductKind::ExactL2)?;
    let mix_t_inv_exact = dense_solve(&mix.transpose(), &exact.to_dense())?;
    let vol = dual.active_volumes(mesh);
    let mut asymmetry_witness: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            // (M M_mix⁻¹)_{ji} = (M_mix⁻ᵀ M)_{ij}
            let rhs = vol[i] * mix_t_inv_exact[(i, j)];
            asymmetry_witness = asymmetry_witness.max((mix.get(i, j) - rhs).abs());
        }
    }

    let mixed_ok = identity_defects.iter().all(|&(k, d)| if k == InnerProductKind::Mixed { d <= 1e-12 } else { d > 1e-6 });
    let passed = mixed_ok && kernel_defect <= 1e-12 && averaging_defect <= 1e-12 && asymmetry_witness > 1e-6;
    Ok(ProjectionReport {
        identity_defects,
        kernel_defect,
        averaging_defect,
        asymmetry_witness,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::BoundaryCondition::*;

    #[test]
    fn projection_laws_1d_and_2d() {
        for (mesh, what) in [
            (Mesh::uniform_interval(4, Dirichlet).unwrap(), "1d dirichlet"),
            (Mesh::uniform_interval(6, Neumann).unwrap(), "1d neumann"),
            (Mesh::unit_square(4, Dirichlet).unwrap(), "2d dirichlet"),
            (Mesh::unit_square(3, Neumann).unwrap(), "2d neumann"),
        ] {
            let dual = DualCells::build(&mesh).unwrap();
            let r = ph_projection_tests(&mesh, &dual).unwrap();
            assert!(r.passed, "{what}: {r:?}");
        }
    }

    #[test]
    fn lumped_projection_moves_a_hat() {
        let mesh = Mesh::uniform_interval(4, Dirichlet).unwrap();
        let dual = DualCells::build(&mesh).unwrap();
        let p = projection_matrix(&mesh, &dual, InnerProductKind::Lumped).unwrap();
        // P_h φ_1 = (1/8, 3/4, 1/8) ... scaled by h/h: column 1 of diag(h)^{-1} M_mix
        assert!((p[(0, 1)] - 0.125).abs() < 1e-14);
        assert!((p[(1, 1)] - 0.75).abs() < 1e-14);
    }
}
