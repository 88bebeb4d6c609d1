//! Primal simplicial meshes in one and two dimensions.
//!
//! Vertices are numbered left to right on intervals and row-major on the
//! structured square; the active-vertex numbering used for all matrices
//! follows the vertex numbering with boundary vertices skipped (Dirichlet)
//! or kept (Neumann).

use std::collections::{BTreeSet, HashMap};
use std::io::BufRead;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoundaryCondition {
    Dirichlet,
    Neumann,
}

impl std::str::FromStr for BoundaryCondition {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dirichlet" => Ok(Self::Dirichlet),
            "neumann" => Ok(Self::Neumann),
            other => Err(Error::invalid(format!("unknown boundary condition `{other}`"))),
        }
    }
}

impl std::fmt::Display for BoundaryCondition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Dirichlet => "dirichlet",
            Self::Neumann => "neumann",
        })
    }
}

/// A conforming simplicial mesh with positively oriented elements.
#[derive(Debug, Clone)]
pub struct Mesh {
    dim: usize,
    coords: Vec<f64>,
    elements: Vec<usize>,
    boundary: BTreeSet<usize>,
    bc: BoundaryCondition,
    active: Vec<usize>,
    dof: Vec<Option<usize>>,
}

impl Mesh {
    /// Build and validate a mesh from raw parts. Negatively oriented elements
    /// are reoriented; degenerate ones are rejected.
    pub fn new(
        dim: usize,
        coords: Vec<f64>,
        mut elements: Vec<usize>,
        boundary: BTreeSet<usize>,
        bc: BoundaryCondition,
    ) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::invalid(format!("dimension {dim} is not supported")));
        }
        if coords.len() % dim != 0 || elements.len() % (dim + 1) != 0 {
            return Err(Error::invalid("coordinate or element array has the wrong length"));
        }
        let nv = coords.len() / dim;
        let nl = dim + 1;
        for (k, el) in elements.chunks_mut(nl).enumerate() {
            for (a, &i) in el.iter().enumerate() {
                if i >= nv {
                    return Err(Error::Geometry(format!("element {k} references vertex {i} of {nv}")));
                }
                if el[..a].contains(&i) {
                    return Err(Error::Geometry(format!("element {k} repeats vertex {i}")));
                }
            }
            let vol = signed_measure(dim, &coords, el);
            if vol == 0.0 || !vol.is_finite() {
                return Err(Error::Geometry(format!("element {k} has zero measure")));
            }
            if vol < 0.0 {
                el.swap(0, 1);
            }
        }
        if let Some(&b) = boundary.iter().find(|&&b| b >= nv) {
            return Err(Error::Geometry(format!("boundary vertex {b} out of range")));
        }
        let topological = topological_boundary(dim, nv, &elements)?;
        if topological != boundary {
            return Err(Error::Geometry(format!(
                "listed boundary vertices do not match the mesh boundary ({} listed, {} found)",
                boundary.len(),
                topological.len()
            )));
        }
        let mut active = Vec::new();
        let mut dof = vec![None; nv];
        for v in 0..nv {
            if bc == BoundaryCondition::Neumann || !boundary.contains(&v) {
                dof[v] = Some(active.len());
                active.push(v);
            }
        }
        if active.is_empty() {
            return Err(Error::invalid("mesh has no active vertex"));
        }
        Ok(Self {
            dim,
            coords,
            elements,
            boundary,
            bc,
            active,
            dof,
        })
    }

    /// Uniform partition of [0, 1] into `n_cells` intervals.
    pub fn uniform_interval(n_cells: usize, bc: BoundaryCondition) -> Result<Self> {
        if n_cells < 2 {
            return Err(Error::invalid("an interval mesh needs at least two cells"));
        }
        let coords = (0..=n_cells).map(|i| i as f64 / n_cells as f64).collect();
        let elements = (0..n_cells).flat_map(|i| [i, i + 1]).collect();
        let boundary = BTreeSet::from([0, n_cells]);
        Self::new(1, coords, elements, boundary, bc)
    }

    /// Uniform grid on [0, 1]² with every cell cut along the diagonal from
    /// its lower-left to its upper-right corner.
    pub fn unit_square(n_per_side: usize, bc: BoundaryCondition) -> Result<Self> {
        if n_per_side < 2 {
            return Err(Error::invalid("a square mesh needs at least two cells per side"));
        }
        let n = n_per_side;
        let idx = |i: usize, j: usize| j * (n + 1) + i;
        let mut coords = Vec::with_capacity(2 * (n + 1) * (n + 1));
        let mut boundary = BTreeSet::new();
        for j in 0..=n {
            for i in 0..=n {
                coords.push(i as f64 / n as f64);
                coords.push(j as f64 / n as f64);
                if i == 0 || j == 0 || i == n || j == n {
                    boundary.insert(idx(i, j));
                }
            }
        }
        let mut elements = Vec::with_capacity(6 * n * n);
        for j in 0..n {
            for i in 0..n {
                let (v00, v10, v01, v11) = (idx(i, j), idx(i + 1, j), idx(i, j + 1), idx(i + 1, j + 1));
                elements.extend_from_slice(&[v00, v10, v11]);
                elements.extend_from_slice(&[v00, v11, v01]);
            }
        }
        Self::new(2, coords, elements, boundary, bc)
    }

    /// Parse the plain text format: `dim n_vertices n_elements`, then the
    /// vertex coordinates, the element vertex lists (0-based), and a final
    /// line with the boundary vertex indices.
    pub fn read_text(r: impl BufRead, bc: BoundaryCondition) -> Result<Self> {
        let mut lines = r
            .lines()
            .enumerate()
            .map(|(n, l)| l.map(|l| (n + 1, l)))
            .filter(|l| l.as_ref().map_or(true, |(_, s)| !s.trim().is_empty()));
        let mut next = |what: &str| -> Result<(usize, String)> {
            lines
                .next()
                .transpose()?
                .ok_or_else(|| Error::Parse { line: 0, msg: format!("unexpected end of file, expected {what}") })
        };
        fn fields<T: std::str::FromStr>(line: usize, s: &str, count: Option<usize>) -> Result<Vec<T>>
        where
            T::Err: std::fmt::Display,
        {
            let v: Vec<T> = s
                .split_whitespace()
                .map(|t| t.parse::<T>().map_err(|e| Error::Parse { line, msg: format!("`{t}`: {e}") }))
                .collect::<Result<_>>()?;
            match count {
                Some(c) if v.len() != c => Err(Error::Parse {
                    line,
                    msg: format!("expected {c} values, found {}", v.len()),
                }),
                _ => Ok(v),
            }
        }
        let (ln, header) = next("header")?;
        let h: Vec<usize> = fields(ln, &header, Some(3))?;
        let (dim, nv, ne) = (h[0], h[1], h[2]);
        if !(1..=2).contains(&dim) {
            return Err(Error::Parse { line: ln, msg: format!("unsupported dimension {dim}") });
        }
        let mut coords = Vec::with_capacity(nv * dim);
        for _ in 0..nv {
            let (ln, s) = next("vertex coordinates")?;
            coords.extend(fields::<f64>(ln, &s, Some(dim))?);
        }
        let mut elements = Vec::with_capacity(ne * (dim + 1));
        for _ in 0..ne {
            let (ln, s) = next("element indices")?;
            elements.extend(fields::<usize>(ln, &s, Some(dim + 1))?);
        }
        let (ln, s) = next("boundary vertex list")?;
        let boundary: BTreeSet<usize> = fields::<usize>(ln, &s, None)?.into_iter().collect();
        Self::new(dim, coords, elements, boundary, bc)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bc(&self) -> BoundaryCondition {
        self.bc
    }

    pub fn n_vertices(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len() / (self.dim + 1)
    }

    pub fn vertex(&self, v: usize) -> &[f64] {
        &self.coords[v * self.dim..(v + 1) * self.dim]
    }

    pub fn element(&self, k: usize) -> &[usize] {
        let nl = self.dim + 1;
        &self.elements[k * nl..(k + 1) * nl]
    }

    pub fn elements(&self) -> impl Iterator<Item = &[usize]> {
        self.elements.chunks(self.dim + 1)
    }

    pub fn boundary(&self) -> &BTreeSet<usize> {
        &self.boundary
    }

    /// Active vertices in matrix order.
    pub fn active(&self) -> &[usize] {
        &self.active
    }

    pub fn n_active(&self) -> usize {
        self.active.len()
    }

    /// Matrix row of a vertex, `None` for eliminated Dirichlet vertices.
    pub fn dof(&self, v: usize) -> Option<usize> {
        self.dof[v]
    }

    pub fn measure(&self, k: usize) -> f64 {
        signed_measure(self.dim, &self.coords, self.element(k))
    }

    pub fn total_measure(&self) -> f64 {
        (0..self.n_elements()).map(|k| self.measure(k)).sum()
    }

    pub fn diameter(&self, k: usize) -> f64 {
        let el = self.element(k);
        let mut d: f64 = 0.0;
        for a in 0..el.len() {
            for b in a + 1..el.len() {
                let (p, q) = (self.vertex(el[a]), self.vertex(el[b]));
                let s: f64 = p.iter().zip(q).map(|(x, y)| (x - y) * (x - y)).sum();
                d = d.max(s.sqrt());
            }
        }
        d
    }

    /// Largest element diameter.
    pub fn h(&self) -> f64 {
        (0..self.n_elements()).map(|k| self.diameter(k)).fold(0.0, f64::max)
    }

    /// Gradients of the local barycentric coordinates on element `k`,
    /// one `dim`-vector per local vertex.
    pub fn gradients(&self, k: usize) -> Vec<[f64; 2]> {
        let el = self.element(k);
        match self.dim {
            1 => {
                let h = self.vertex(el[1])[0] - self.vertex(el[0])[0];
                vec![[-1.0 / h, 0.0], [1.0 / h, 0.0]]
            }
            _ => {
                let p: Vec<&[f64]> = el.iter().map(|&v| self.vertex(v)).collect();
                let two_area = 2.0 * self.measure(k);
                (0..3)
                    .map(|i| {
                        let (b, c) = (p[(i + 1) % 3], p[(i + 2) % 3]);
                        [(b[1] - c[1]) / two_area, (c[0] - b[0]) / two_area]
                    })
                    .collect()
            }
        }
    }

    /// Full-length vertex vector from values on the active vertices, with
    /// zeros at eliminated Dirichlet vertices.
    pub fn extend_to_vertices(&self, active_values: &[f64]) -> Vec<f64> {
        assert_eq!(active_values.len(), self.n_active());
        let mut full = vec![0.0; self.n_vertices()];
        for (i, &v) in self.active.iter().enumerate() {
            full[v] = active_values[i];
        }
        full
    }
}

fn signed_measure(dim: usize, coords: &[f64], el: &[usize]) -> f64 {
    let p = |v: usize| &coords[v * dim..(v + 1) * dim];
    match dim {
        1 => p(el[1])[0] - p(el[0])[0],
        _ => {
            let (a, b, c) = (p(el[0]), p(el[1]), p(el[2]));
            0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
        }
    }
}

/// Vertices on facets that belong to a single element, after checking
/// conformity: every facet is shared by at most two elements and the
/// complex has the Euler characteristic of a disc (or segment).
fn topological_boundary(dim: usize, nv: usize, elements: &[usize]) -> Result<BTreeSet<usize>> {
    let nl = dim + 1;
    let ne = elements.len() / nl;
    let mut facets: HashMap<Vec<usize>, usize> = HashMap::new();
    for el in elements.chunks(nl) {
        for skip in 0..nl {
            let mut f: Vec<usize> = (0..nl).filter(|&a| a != skip).map(|a| el[a]).collect();
            f.sort_unstable();
            *facets.entry(f).or_default() += 1;
        }
    }
    if let Some((f, c)) = facets.iter().find(|(_, &c)| c > 2) {
        return Err(Error::Geometry(format!("facet {f:?} is shared by {c} elements")));
    }
    let used: BTreeSet<usize> = elements.iter().copied().collect();
    if used.len() != nv {
        return Err(Error::Geometry(format!("{} vertices belong to no element", nv - used.len())));
    }
    let euler = match dim {
        1 => nv as i64 - ne as i64,
        _ => {
            let mut edges = BTreeSet::new();
            for el in elements.chunks(3) {
                for (a, b) in [(el[0], el[1]), (el[1], el[2]), (el[2], el[0])] {
                    edges.insert((a.min(b), a.max(b)));
                }
            }
            nv as i64 - edges.len() as i64 + ne as i64
        }
    };
    if euler != 1 {
        return Err(Error::Geometry(format!(
            "mesh is not a conforming triangulation of a simply connected domain (Euler characteristic {euler})"
        )));
    }
    Ok(facets
        .into_iter()
        .filter(|(_, c)| *c == 1)
        .flat_map(|(f, _)| f)
        .collect())
}
