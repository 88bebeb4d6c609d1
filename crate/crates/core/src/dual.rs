//! Barycentric dual mesh: control volumes `b_z`, the per-element pieces
//! `A_z(K)` and the integrated interface normals, all from exact polygon
//! coordinates.

use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::quadrature::Point2;

/// One piece `A_z(K)` of a control volume.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Subregion {
    /// Segment between the vertex and the element midpoint, as `(lo, hi)`.
    Interval(f64, f64),
    /// Quadrilateral `(z, m1, g, m2)` split into two triangles through `z–g`.
    Quad([[Point2; 3]; 2]),
}

#[derive(Debug, Clone)]
pub struct DualCells {
    dim: usize,
    volumes: Vec<f64>,
    normals: Vec<[f64; 2]>,
    subregions: Vec<Subregion>,
    subregion_measure: Vec<f64>,
}

impl DualCells {
    pub fn build(mesh: &Mesh) -> Result<Self> {
        let dim = mesh.dim();
        let nl = dim + 1;
        let mut volumes = vec![0.0; mesh.n_vertices()];
        let mut normals = Vec::with_capacity(mesh.n_elements() * nl);
        let mut subregions = Vec::with_capacity(mesh.n_elements() * nl);
        let mut subregion_measure = Vec::with_capacity(mesh.n_elements());
        for k in 0..mesh.n_elements() {
            let vol = mesh.measure(k);
            if vol <= 0.0 || !vol.is_finite() {
                return Err(Error::Geometry(format!("element {k} has zero measure")));
            }
            let el = mesh.element(k);
            let piece = vol / nl as f64;
            subregion_measure.push(piece);
            match dim {
                1 => {
                    let (a, b) = (mesh.vertex(el[0])[0], mesh.vertex(el[1])[0]);
                    let mid = 0.5 * (a + b);
                    for (local, &z) in [a, b].iter().enumerate() {
                        normals.push([(mid - z).signum(), 0.0]);
                        subregions.push(Subregion::Interval(z.min(mid), z.max(mid)));
                        volumes[el[local]] += piece;
                    }
                }
                _ => {
                    let p: [Point2; 3] = std::array::from_fn(|a| {
                        let v = mesh.vertex(el[a]);
                        [v[0], v[1]]
                    });
                    for (i, n) in triangle_interface_normals(&p).into_iter().enumerate() {
                        normals.push(n);
                        subregions.push(triangle_subregion(&p, i));
                        volumes[el[i]] += piece;
                    }
                }
            }
        }
        Ok(Self {
            dim,
            volumes,
            normals,
            subregions,
            subregion_measure,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `|b_z|` for every vertex, active or not.
    pub fn volume(&self, v: usize) -> f64 {
        self.volumes[v]
    }

    pub fn volumes(&self) -> &[f64] {
        &self.volumes
    }

    /// Volumes of the active cells in matrix order.
    pub fn active_volumes(&self, mesh: &Mesh) -> Vec<f64> {
        mesh.active().iter().map(|&v| self.volumes[v]).collect()
    }

    /// `∫_{Γ_{z,K}} η ds` for local vertex `local` of element `k`.
    pub fn interface_normal(&self, k: usize, local: usize) -> [f64; 2] {
        self.normals[k * (self.dim + 1) + local]
    }

    pub fn subregion(&self, k: usize, local: usize) -> Subregion {
        self.subregions[k * (self.dim + 1) + local]
    }

    /// `|A_z(K)|`, the same for every local vertex of `k`.
    pub fn subregion_measure(&self, k: usize) -> f64 {
        self.subregion_measure[k]
    }

    /// Transfer nodal values on the active vertices to the piecewise constant
    /// function on the dual mesh taking those values.
    pub fn transfer_q(&self, mesh: &Mesh, nodal: &[f64]) -> Result<DualField> {
        if nodal.len() != mesh.n_active() {
            return Err(Error::invalid(format!(
                "expected {} nodal values, got {}",
                mesh.n_active(),
                nodal.len()
            )));
        }
        Ok(DualField {
            values: nodal.to_vec(),
            volumes: self.active_volumes(mesh),
        })
    }
}

/// Integrated interface normals of a counter-clockwise triangle.
pub fn triangle_interface_normals(p: &[Point2; 3]) -> [[f64; 2]; 3] {
    std::array::from_fn(|i| {
        let (a, b, c) = (p[i], p[(i + 1) % 3], p[(i + 2) % 3]);
        let m1 = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
        let m2 = [0.5 * (a[0] + c[0]), 0.5 * (a[1] + c[1])];
        [m2[1] - m1[1], m1[0] - m2[0]]
    })
}

fn triangle_subregion(p: &[Point2; 3], i: usize) -> Subregion {
    let (a, b, c) = (p[i], p[(i + 1) % 3], p[(i + 2) % 3]);
    let m1 = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
    let m2 = [0.5 * (a[0] + c[0]), 0.5 * (a[1] + c[1])];
    let g = [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0];
    Subregion::Quad([[a, m1, g], [a, g, m2]])
}

type Point3 = [f64; 3];

fn sub3(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: Point3, b: Point3) -> Point3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn dot3(a: Point3, b: Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn mean(points: &[Point3]) -> Point3 {
    let n = points.len() as f64;
    std::array::from_fn(|c| points.iter().map(|p| p[c]).sum::<f64>() / n)
}

/// Area vectors of the three interface quadrilaterals of vertex `z` in a
/// tetrahedron, oriented away from `z`. Each quadrilateral joins the
/// midpoint of an edge at `z`, the centroids of the two faces containing
/// that edge, and the centroid of the tetrahedron.
pub fn tetrahedron_interface_quads(t: &[Point3; 4], z: usize) -> [Point3; 3] {
    let others: Vec<usize> = (0..4).filter(|&a| a != z).collect();
    let g = mean(t);
    std::array::from_fn(|e| {
        let a = others[e];
        let (b, c) = (others[(e + 1) % 3], others[(e + 2) % 3]);
        let m = mean(&[t[z], t[a]]);
        let f1 = mean(&[t[z], t[a], t[b]]);
        let f2 = mean(&[t[z], t[a], t[c]]);
        let v = cross(sub3(g, m), sub3(f2, f1));
        let area = [0.5 * v[0], 0.5 * v[1], 0.5 * v[2]];
        if dot3(area, sub3(m, t[z])) < 0.0 {
            [-area[0], -area[1], -area[2]]
        } else {
            area
        }
    })
}

/// Signed volume and barycentric gradients of a tetrahedron.
pub fn tetrahedron_gradients(t: &[Point3; 4]) -> (f64, [Point3; 4]) {
    let (e1, e2, e3) = (sub3(t[1], t[0]), sub3(t[2], t[0]), sub3(t[3], t[0]));
    let det = dot3(e1, cross(e2, e3));
    let g1 = cross(e2, e3).map(|x| x / det);
    let g2 = cross(e3, e1).map(|x| x / det);
    let g3 = cross(e1, e2).map(|x| x / det);
    let g0 = std::array::from_fn(|c| -(g1[c] + g2[c] + g3[c]));
    (det / 6.0, [g0, g1, g2, g3])
}

#[derive(Debug, Clone)]
pub struct FluxReport {
    pub dim: usize,
    pub passed: bool,
    pub max_defect: f64,
    pub diagnostics: Vec<String>,
}

/// Check `−∫_{Γ_{z,K}} p·η ds = |K| p·∇φ_z` on the reference simplex for
/// every vertex and every coordinate direction `p`, together with the
/// explicit reference values.
pub fn reference_simplex_flux_check(dim: usize) -> FluxReport {
    const TOL: f64 = 1e-13;
    let mut diagnostics = Vec::new();
    let mut max_defect: f64 = 0.0;
    let mut record = |what: String, got: f64, want: f64, diags: &mut Vec<String>| {
        let d = (got - want).abs();
        max_defect = max_defect.max(d);
        if d > TOL {
            diags.push(format!("{what}: got {got:e}, expected {want:e}"));
        }
    };
    match dim {
        1 => {
            let mesh_pts = [0.0f64, 1.0];
            let mid = 0.5f64;
            let grads = [-1.0, 1.0];
            for z in 0..2 {
                let n = (mid - mesh_pts[z]).signum();
                record(format!("vertex {z} flux"), -n, 1.0 * grads[z], &mut diagnostics);
            }
            record("left normal".into(), (mid - mesh_pts[0]).signum(), 1.0, &mut diagnostics);
        }
        2 => {
            let p = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
            let normals = triangle_interface_normals(&p);
            let grads = [[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]];
            for z in 0..3 {
                for c in 0..2 {
                    record(format!("vertex {z} direction {c}"), -normals[z][c], 0.5 * grads[z][c], &mut diagnostics);
                }
            }
            for c in 0..2 {
                record(format!("origin normal component {c}"), normals[0][c], 0.5, &mut diagnostics);
            }
        }
        3 => {
            let t = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
            let (vol, grads) = tetrahedron_gradients(&t);
            for z in 0..4 {
                let quads = tetrahedron_interface_quads(&t, z);
                let total = mean(&quads).map(|x| 3.0 * x);
                for c in 0..3 {
                    record(format!("vertex {z} direction {c}"), -total[c], vol * grads[z][c], &mut diagnostics);
                }
            }
            let quads = tetrahedron_interface_quads(&t, 0);
            let mut seen = [false; 3];
            for q in quads {
                // (1/12, 1/24, 1/24) up to a permutation with the large entry
                // along the edge direction
                let big = (0..3).max_by(|&a, &b| q[a].total_cmp(&q[b])).unwrap();
                seen[big] = true;
                for c in 0..3 {
                    let want = if c == big { 1.0 / 12.0 } else { 1.0 / 24.0 };
                    record(format!("origin quad component {c}"), q[c], want, &mut diagnostics);
                }
            }
            if seen != [true; 3] {
                diagnostics.push("origin quads are not permutations of each other".into());
            }
            let total = mean(&quads).map(|x| 3.0 * x);
            for c in 0..3 {
                record(format!("origin total component {c}"), total[c], 1.0 / 6.0, &mut diagnostics);
            }
        }
        _ => diagnostics.push(format!("dimension {dim} is not supported")),
    }
    FluxReport {
        dim,
        passed: diagnostics.is_empty(),
        max_defect,
        diagnostics,
    }
}

/// A function that is constant on each active control volume.
#[derive(Debug, Clone, PartialEq)]
pub struct DualField {
    pub values: Vec<f64>,
    pub volumes: Vec<f64>,
}

impl DualField {
    /// Exact `L²` pairing `Σ χ(z) ψ(z) |b_z|`.
    pub fn inner(&self, other: &DualField) -> f64 {
        assert_eq!(self.values.len(), other.values.len());
        self.values
            .iter()
            .zip(&other.values)
            .zip(&self.volumes)
            .map(|((a, b), w)| a * b * w)
            .sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.inner(self)
    }

    /// Nodal vector recovered from the cell values.
    pub fn to_nodal(&self) -> Vec<f64> {
        self.values.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::BoundaryCondition::*;
    use proptest::prelude::*;

    #[test]
    fn interval_volumes() {
        let m = Mesh::uniform_interval(4, Dirichlet).unwrap();
        let d = DualCells::build(&m).unwrap();
        assert_eq!(d.volumes(), &[0.125, 0.25, 0.25, 0.25, 0.125]);
    }

    #[test]
    fn reference_triangle_normal() {
        let n = triangle_interface_normals(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        assert_eq!(n[0], [0.5, 0.5]);
    }

    #[test]
    fn flux_checks_pass() {
        for d in 1..=3 {
            let r = reference_simplex_flux_check(d);
            assert!(r.passed, "{:?}", r.diagnostics);
        }
        assert!(!reference_simplex_flux_check(4).passed);
    }

    #[test]
    fn partitions_and_equal_split() {
        for n in [2, 3, 8] {
            let m = Mesh::unit_square(n, Neumann).unwrap();
            let d = DualCells::build(&m).unwrap();
            let total: f64 = d.volumes().iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
            for k in 0..m.n_elements() {
                let want = m.measure(k) / 3.0;
                for z in 0..3 {
                    let Subregion::Quad(tris) = d.subregion(k, z) else { panic!() };
                    let area: f64 = tris.iter().map(crate::quadrature::triangle_area).sum();
                    assert!((area - want).abs() < 1e-13 * want.max(1.0));
                }
                let s: Vec<f64> = (0..2)
                    .map(|c| (0..3).map(|z| d.interface_normal(k, z)[c]).sum())
                    .collect();
                assert!(s.iter().all(|x| x.abs() < 1e-15));
            }
        }
    }

    #[test]
    fn q_transfer() {
        let m = Mesh::uniform_interval(8, Neumann).unwrap();
        let d = DualCells::build(&m).unwrap();
        let one = d.transfer_q(&m, &vec![1.0; 9]).unwrap();
        assert!((one.norm_sq() - 1.0).abs() < 1e-14);
        let m = Mesh::uniform_interval(8, Dirichlet).unwrap();
        let d = DualCells::build(&m).unwrap();
        let mut hat = vec![0.0; 7];
        hat[3] = 1.0;
        let q = d.transfer_q(&m, &hat).unwrap();
        assert!((q.norm_sq() - 0.125).abs() < 1e-15);
        assert_eq!(q.to_nodal(), hat);
        assert!(matches!(d.transfer_q(&m, &[1.0]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn q_norm_equivalence_is_level_independent() {
        // ratios ‖Qχ‖/‖χ‖ for hats and oscillating vectors stay in a fixed band
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        for n in [4, 8, 16, 32] {
            let m = Mesh::unit_square(n, Neumann).unwrap();
            let d = DualCells::build(&m).unwrap();
            let mass = crate::assembly::assemble_mass(&m, &d, crate::assembly::InnerProductKind::ExactL2).unwrap();
            for seed in 0..5u64 {
                let chi: Vec<f64> = (0..m.n_active())
                    .map(|i| (((i as u64 + 1) * (seed + 7) * 2654435761) % 1000) as f64 / 500.0 - 1.0)
                    .collect();
                let q = d.transfer_q(&m, &chi).unwrap();
                let l2 = crate::sparse::dot(&chi, &mass.matvec(&chi));
                let r = (q.norm_sq() / l2).sqrt();
                lo = lo.min(r);
                hi = hi.max(r);
            }
        }
        assert!(lo > 0.9 && hi < 2.0, "band [{lo}, {hi}]");
    }

    proptest! {
        #[test]
        fn flux_identity_on_affine_triangles(
            a in prop::array::uniform2(-2.0f64..2.0),
            b in prop::array::uniform2(-2.0f64..2.0),
            c in prop::array::uniform2(-2.0f64..2.0),
            p in prop::array::uniform2(-3.0f64..3.0),
        ) {
            let mut t = [a, b, c];
            let area = crate::quadrature::triangle_area(&t);
            prop_assume!(area.abs() > 1e-3);
            if area < 0.0 {
                t.swap(0, 1);
            }
            let m = Mesh::new(
                2,
                t.iter().flatten().copied().collect(),
                vec![0, 1, 2],
                [0, 1, 2].into_iter().collect(),
                Neumann,
            ).unwrap();
            let grads = m.gradients(0);
            let vol = m.measure(0);
            let normals = triangle_interface_normals(&t);
            for z in 0..3 {
                let lhs = -(p[0] * normals[z][0] + p[1] * normals[z][1]);
                let rhs = vol * (p[0] * grads[z][0] + p[1] * grads[z][1]);
                prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
            }
        }

        #[test]
        fn flux_identity_on_affine_tetrahedra(
            pts in prop::array::uniform4(prop::array::uniform3(-1.0f64..1.0)),
        ) {
            let (vol, grads) = tetrahedron_gradients(&pts);
            prop_assume!(vol.abs() > 1e-3);
            for z in 0..4 {
                let quads = tetrahedron_interface_quads(&pts, z);
                for c in 0..3 {
                    let total: f64 = quads.iter().map(|q| q[c]).sum();
                    let want = -vol.abs() * grads[z][c];
                    prop_assert!((total - want).abs() <= 1e-12 * (1.0 + want.abs()));
                }
            }
        }
    }
}
