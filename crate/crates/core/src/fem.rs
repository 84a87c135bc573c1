//! Piecewise-linear finite element forward models on a [`TriMesh`]:
//! the complete electrode model (EIT), the one-parameter diffusion model with
//! Robin boundary (DOT) and the Dirichlet absorption model whose absorbed
//! energy is rasterized on a 16x16 grid (QPAT).
//!
//! Coefficients are piecewise constant per triangle. Each solver owns the
//! per-mesh symbolic data (orderings, assembly slots, constant boundary
//! terms); every call assembles and factors afresh.

use std::f64::consts::PI;
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::mesh::{centroids, signed_area, ElectrodeLayout, TriMesh};
use crate::sparse::{Profile, SkylineMatrix, SolveError};

/// Side length of the QPAT observation raster and of the surrogate output.
pub const RASTER: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FemError {
    #[error("coefficient {value} at element {index} is not strictly positive")]
    NonPositive { index: usize, value: f64 },
    #[error("coefficient {value} at element {index} outside admissible band [{lower}, {upper}]")]
    OutOfBand {
        index: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },
    #[error("singular system: {0}")]
    Singular(#[from] SolveError),
    #[error("field has {got} values, mesh needs {expected}")]
    MeshMismatch { expected: usize, got: usize },
    #[error("invalid current patterns: {0}")]
    InvalidPatterns(String),
    #[error("noise level must be non-negative, got {0}")]
    NegativeNoiseLevel(f64),
    #[error("measurement file: {0}")]
    Format(String),
    #[error("measurement i/o: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProblemKind {
    Eit,
    Dot,
    Qpat,
}

impl ProblemKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProblemKind::Eit => "eit",
            ProblemKind::Dot => "dot",
            ProblemKind::Qpat => "qpat",
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            ProblemKind::Eit => 0,
            ProblemKind::Dot => 1,
            ProblemKind::Qpat => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(ProblemKind::Eit),
            1 => Some(ProblemKind::Dot),
            2 => Some(ProblemKind::Qpat),
            _ => None,
        }
    }
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ProblemKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "eit" => Ok(ProblemKind::Eit),
            "dot" => Ok(ProblemKind::Dot),
            "qpat" => Ok(ProblemKind::Qpat),
            other => Err(format!("unknown problem {other:?} (expected eit, dot or qpat)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    Conductivity,
    Absorption,
    QpatAbsorption,
    Latent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Support {
    Triangles,
    Nodes,
}

/// A coefficient field: one value per triangle (physical fields) or per
/// node (latent level-set functions).
#[derive(Debug, Clone, PartialEq)]
pub struct ParamField {
    pub kind: FieldKind,
    pub support: Support,
    pub values: Vec<f64>,
}

impl ParamField {
    pub fn per_triangle(kind: FieldKind, values: Vec<f64>) -> Self {
        ParamField {
            kind,
            support: Support::Triangles,
            values,
        }
    }

    pub fn constant(kind: FieldKind, mesh: &TriMesh, value: f64) -> Self {
        Self::per_triangle(kind, vec![value; mesh.tri_count()])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn check_len(&self, mesh: &TriMesh) -> Result<(), FemError> {
        let expected = match self.support {
            Support::Triangles => mesh.tri_count(),
            Support::Nodes => mesh.node_count(),
        };
        if self.values.len() != expected {
            return Err(FemError::MeshMismatch {
                expected,
                got: self.values.len(),
            });
        }
        Ok(())
    }

    pub fn check_positive(&self) -> Result<(), FemError> {
        match self
            .values
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v > 0.0) || !v.is_finite())
        {
            Some((index, &value)) => Err(FemError::NonPositive { index, value }),
            None => Ok(()),
        }
    }

    pub fn check_band(&self, lower: f64, upper: f64) -> Result<(), FemError> {
        match self
            .values
            .iter()
            .enumerate()
            .find(|(_, &v)| !(v >= lower && v <= upper))
        {
            Some((index, &value)) => Err(FemError::OutOfBand {
                index,
                value,
                lower,
                upper,
            }),
            None => Ok(()),
        }
    }
}

/// Zero-sum electrode current patterns, one row per pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct CurrentPatterns {
    pub patterns: Vec<Vec<f64>>,
}

impl CurrentPatterns {
    /// `L - 1` trigonometric patterns `cos(kθ_l)`, `sin(kθ_l)` evaluated at
    /// the electrode centres, ordered cos 1, sin 1, cos 2, ...
    pub fn trigonometric(layout: &ElectrodeLayout) -> Self {
        let l = layout.count();
        let mut patterns = Vec::with_capacity(l.saturating_sub(1));
        let mut k = 1;
        while patterns.len() + 1 < l {
            patterns.push(layout.centers.iter().map(|&t| (k as f64 * t).cos()).collect());
            if patterns.len() + 1 < l {
                patterns.push(layout.centers.iter().map(|&t| (k as f64 * t).sin()).collect());
            }
            k += 1;
        }
        CurrentPatterns { patterns }
    }

    /// `L - 1` adjacent-pair patterns `e_l - e_{l+1}`.
    pub fn adjacent(l: usize) -> Self {
        let patterns = (0..l.saturating_sub(1))
            .map(|j| {
                let mut p = vec![0.0; l];
                p[j] = 1.0;
                p[j + 1] = -1.0;
                p
            })
            .collect();
        CurrentPatterns { patterns }
    }

    pub fn count(&self) -> usize {
        self.patterns.len()
    }

    pub fn electrodes(&self) -> usize {
        self.patterns.first().map_or(0, Vec::len)
    }

    /// Zero sums (to 1e-12) and linear independence.
    pub fn validate(&self, electrodes: usize) -> Result<(), FemError> {
        if self.patterns.is_empty() {
            return Err(FemError::InvalidPatterns("no patterns".into()));
        }
        for (j, p) in self.patterns.iter().enumerate() {
            if p.len() != electrodes {
                return Err(FemError::InvalidPatterns(format!(
                    "pattern {j} has {} entries, layout has {electrodes} electrodes",
                    p.len()
                )));
            }
            let s: f64 = p.iter().sum();
            if s.abs() > 1e-12 {
                return Err(FemError::InvalidPatterns(format!("pattern {j} sums to {s:e}")));
            }
        }
        if numeric_rank(&self.patterns) < self.patterns.len() {
            return Err(FemError::InvalidPatterns("patterns are linearly dependent".into()));
        }
        Ok(())
    }
}

fn numeric_rank(rows: &[Vec<f64>]) -> usize {
    let mut m: Vec<Vec<f64>> = rows.to_vec();
    let cols = m.first().map_or(0, Vec::len);
    let scale = m
        .iter()
        .flatten()
        .fold(0.0f64, |a, &b| a.max(b.abs()))
        .max(f64::MIN_POSITIVE);
    let mut rank = 0;
    for c in 0..cols {
        let Some(piv) = (rank..m.len()).max_by(|&a, &b| m[a][c].abs().total_cmp(&m[b][c].abs()))
        else {
            break;
        };
        if m[piv][c].abs() <= 1e-10 * scale {
            continue;
        }
        m.swap(rank, piv);
        for r in rank + 1..m.len() {
            let f = m[r][c] / m[rank][c];
            for k in c..cols {
                m[r][k] -= f * m[rank][k];
            }
        }
        rank += 1;
    }
    rank
}

/// Forward-model output: J x L boundary data (EIT/DOT) or a 16x16 raster (QPAT).
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub kind: ProblemKind,
    pub rows: usize,
    pub cols: usize,
    /// Row-major.
    pub data: Vec<f64>,
    pub noise_sigma: f64,
}

impl Measurement {
    pub fn new(kind: ProblemKind, rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len());
        Measurement {
            kind,
            rows,
            cols,
            data,
            noise_sigma: 0.0,
        }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn rms(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        (self.data.iter().map(|v| v * v).sum::<f64>() / self.data.len() as f64).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Self {
        let mut data = vec![0.0; self.data.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        Measurement {
            kind: self.kind,
            rows: self.cols,
            cols: self.rows,
            data,
            noise_sigma: self.noise_sigma,
        }
    }

    /// Writes the CSV exchange format: a column-name line
    /// `kind,rows,cols,noise_sigma`, the corresponding value line, then one
    /// line per data row with shortest round-trip doubles.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), FemError> {
        let io = |e: std::io::Error| FemError::Io(e.to_string());
        writeln!(w, "kind,rows,cols,noise_sigma").map_err(io)?;
        writeln!(w, "{},{},{},{:?}", self.kind, self.rows, self.cols, self.noise_sigma).map_err(io)?;
        for r in 0..self.rows {
            let row: Vec<String> = self.data[r * self.cols..(r + 1) * self.cols]
                .iter()
                .map(|v| format!("{v:?}"))
                .collect();
            writeln!(w, "{}", row.join(",")).map_err(io)?;
        }
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self, FemError> {
        let mut lines = BufReader::new(r).lines();
        let mut next = || -> Result<String, FemError> {
            lines
                .next()
                .ok_or_else(|| FemError::Format("unexpected end of file".into()))?
                .map_err(|e| FemError::Io(e.to_string()))
        };
        if next()?.trim() != "kind,rows,cols,noise_sigma" {
            return Err(FemError::Format("missing header".into()));
        }
        let meta = next()?;
        let f: Vec<&str> = meta.trim().split(',').collect();
        if f.len() != 4 {
            return Err(FemError::Format(format!("bad metadata line {meta:?}")));
        }
        let kind: ProblemKind = f[0].parse().map_err(FemError::Format)?;
        let bad = |s: &str| FemError::Format(format!("bad number {s:?}"));
        let rows: usize = f[1].parse().map_err(|_| bad(f[1]))?;
        let cols: usize = f[2].parse().map_err(|_| bad(f[2]))?;
        let noise_sigma: f64 = f[3].parse().map_err(|_| bad(f[3]))?;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let line = next()?;
            let vals: Vec<f64> = line
                .trim()
                .split(',')
                .map(|s| s.parse::<f64>().map_err(|_| bad(s)))
                .collect::<Result<_, _>>()?;
            if vals.len() != cols {
                return Err(FemError::Format(format!("row has {} values, expected {cols}", vals.len())));
            }
            data.extend(vals);
        }
        Ok(Measurement {
            kind,
            rows,
            cols,
            data,
            noise_sigma,
        })
    }
}

/// Adds i.i.d. Gaussian noise with standard deviation `level * rms(m)`.
pub fn add_noise<R: Rng + ?Sized>(
    m: &Measurement,
    level: f64,
    rng: &mut R,
) -> Result<Measurement, FemError> {
    if !(level >= 0.0) {
        return Err(FemError::NegativeNoiseLevel(level));
    }
    let sigma = level * m.rms();
    let mut out = m.clone();
    out.noise_sigma = sigma;
    if sigma > 0.0 {
        for v in &mut out.data {
            let z: f64 = rng.sample(StandardNormal);
            *v += sigma * z;
        }
    }
    Ok(out)
}

/// Per-triangle geometric quantities shared by all three solvers.
#[derive(Debug, Clone)]
pub struct ElementGeometry {
    pub area: Vec<f64>,
    /// Unit-coefficient P1 stiffness, lower triangle: (00, 10, 11, 20, 21, 22).
    pub stiffness: Vec<[f64; 6]>,
}

const LOWER: [(usize, usize); 6] = [(0, 0), (1, 0), (1, 1), (2, 0), (2, 1), (2, 2)];

impl ElementGeometry {
    pub fn new(mesh: &TriMesh) -> Self {
        let mut area = Vec::with_capacity(mesh.tri_count());
        let mut stiffness = Vec::with_capacity(mesh.tri_count());
        for &[a, b, c] in &mesh.triangles {
            let p = [mesh.nodes[a], mesh.nodes[b], mesh.nodes[c]];
            let ar = signed_area(p[0], p[1], p[2]);
            let grad: [[f64; 2]; 3] = std::array::from_fn(|i| {
                let (q, r) = (p[(i + 1) % 3], p[(i + 2) % 3]);
                [q[1] - r[1], r[0] - q[0]]
            });
            let k = LOWER.map(|(i, j)| {
                (grad[i][0] * grad[j][0] + grad[i][1] * grad[j][1]) / (4.0 * ar)
            });
            area.push(ar);
            stiffness.push(k);
        }
        ElementGeometry { area, stiffness }
    }

    /// Consistent P1 mass, lower triangle, for unit coefficient.
    pub fn mass(&self, t: usize) -> [f64; 6] {
        let a = self.area[t];
        LOWER.map(|(i, j)| if i == j { a / 6.0 } else { a / 12.0 })
    }
}

fn mesh_adjacency(mesh: &TriMesh, extra: usize) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); mesh.node_count() + extra];
    for tri in &mesh.triangles {
        for k in 0..3 {
            let (a, b) = (tri[k], tri[(k + 1) % 3]);
            adj[a].push(b);
            adj[b].push(a);
        }
    }
    for a in &mut adj {
        a.sort_unstable();
        a.dedup();
    }
    adj
}

fn triangle_slots(mesh: &TriMesh, profile: &Profile, map: impl Fn(usize) -> usize) -> Vec<[usize; 6]> {
    mesh.triangles
        .iter()
        .map(|tri| LOWER.map(|(i, j)| profile.slot(map(tri[i]), map(tri[j]))))
        .collect()
}

/// `∫_{e} φ_i` accumulated over the edges of every electrode.
fn electrode_loads(mesh: &TriMesh, layout: &ElectrodeLayout) -> Vec<Vec<(usize, f64)>> {
    layout
        .electrode_edges
        .iter()
        .map(|edges| {
            let mut acc: Vec<(usize, f64)> = Vec::new();
            for &e in edges {
                let [a, b] = mesh.boundary_edges[e];
                let h = mesh.edge_length([a, b]);
                for node in [a, b] {
                    match acc.iter_mut().find(|(n, _)| *n == node) {
                        Some((_, v)) => *v += 0.5 * h,
                        None => acc.push((node, 0.5 * h)),
                    }
                }
            }
            acc
        })
        .collect()
}

fn check_layout(mesh: &TriMesh, layout: &ElectrodeLayout) -> Result<(), FemError> {
    layout
        .validate(mesh)
        .map_err(|e| FemError::InvalidPatterns(format!("electrode layout: {e}")))
}

/// Complete electrode model solver.
///
/// Unknowns are the nodal potentials followed by `L - 1` coordinates `β` of
/// the electrode voltages in the zero-sum basis `U = Cβ`, with columns of `C`
/// equal to `e_0 - e_{j+1}`. This fixes the ground (`Σ U_l = 0`) and makes
/// the system positive definite.
#[derive(Debug, Clone)]
pub struct CemSolver {
    nodes: usize,
    electrodes: usize,
    geometry: ElementGeometry,
    profile: Profile,
    slots: Vec<[usize; 6]>,
    constant: Vec<f64>,
}

impl CemSolver {
    pub fn new(mesh: &TriMesh, layout: &ElectrodeLayout) -> Result<Self, FemError> {
        check_layout(mesh, layout)?;
        let n = mesh.node_count();
        let l = layout.count();
        if l < 2 {
            return Err(FemError::InvalidPatterns("need at least two electrodes".into()));
        }
        let nb = l - 1;
        let loads = electrode_loads(mesh, layout);
        let lengths = layout.lengths(mesh);
        let z = &layout.contact_impedances;

        let mut adj = mesh_adjacency(mesh, nb);
        let beta = |j: usize| n + j;
        let link = |a: usize, b: usize, adj: &mut Vec<Vec<usize>>| {
            if !adj[a].contains(&b) {
                adj[a].push(b);
                adj[b].push(a);
            }
        };
        for (el, load) in loads.iter().enumerate() {
            for &(node, _) in load {
                if el == 0 {
                    for j in 0..nb {
                        link(node, beta(j), &mut adj);
                    }
                } else {
                    link(node, beta(el - 1), &mut adj);
                }
            }
        }
        for i in 0..nb {
            for j in 0..i {
                link(beta(i), beta(j), &mut adj);
            }
        }
        let profile = Profile::new(&adj, nb);
        let slots = triangle_slots(mesh, &profile, |i| i);

        let mut constant = profile.zeros();
        for (el, edges) in layout.electrode_edges.iter().enumerate() {
            let zi = 1.0 / z[el];
            for &e in edges {
                let [a, b] = mesh.boundary_edges[e];
                let h = mesh.edge_length([a, b]);
                constant[profile.slot(a, a)] += zi * h / 3.0;
                constant[profile.slot(b, b)] += zi * h / 3.0;
                constant[profile.slot(a, b)] += zi * h / 6.0;
            }
        }
        // A_uβ = A_uU C with A_uU[i, l] = -∫_{e_l} φ_i / z_l.
        for &(node, v) in &loads[0] {
            for j in 0..nb {
                constant[profile.slot(node, beta(j))] -= v / z[0];
            }
        }
        for (el, load) in loads.iter().enumerate().skip(1) {
            for &(node, v) in load {
                constant[profile.slot(node, beta(el - 1))] += v / z[el];
            }
        }
        // Cᵀ D C with D = diag(|e_l| / z_l).
        let d: Vec<f64> = lengths.iter().zip(z).map(|(len, z)| len / z).collect();
        for i in 0..nb {
            for j in 0..=i {
                let mut v = d[0];
                if i == j {
                    v += d[i + 1];
                }
                constant[profile.slot(beta(i), beta(j))] += v;
            }
        }
        Ok(CemSolver {
            nodes: n,
            electrodes: l,
            geometry: ElementGeometry::new(mesh),
            profile,
            slots,
            constant,
        })
    }

    pub fn electrodes(&self) -> usize {
        self.electrodes
    }

    pub fn unknowns(&self) -> usize {
        self.profile.dim()
    }

    fn assemble(&self, sigma: &ParamField) -> Result<SkylineMatrix<'_>, FemError> {
        if sigma.support != Support::Triangles || sigma.len() != self.slots.len() {
            return Err(FemError::MeshMismatch {
                expected: self.slots.len(),
                got: sigma.len(),
            });
        }
        sigma.check_positive()?;
        let mut values = self.constant.clone();
        for (t, slot) in self.slots.iter().enumerate() {
            let s = sigma.values[t];
            let k = &self.geometry.stiffness[t];
            for m in 0..6 {
                values[slot[m]] += s * k[m];
            }
        }
        let mut a = SkylineMatrix::from_values(&self.profile, values);
        a.factor()?;
        Ok(a)
    }

    fn voltages(&self, factored: &SkylineMatrix<'_>, current: &[f64]) -> Result<Vec<f64>, FemError> {
        let nb = self.electrodes - 1;
        let mut rhs = vec![0.0; self.profile.dim()];
        for j in 0..nb {
            rhs[self.nodes + j] = current[0] - current[j + 1];
        }
        let x = factored.solve(&rhs)?;
        let beta = &x[self.nodes..];
        let mut u = Vec::with_capacity(self.electrodes);
        u.push(beta.iter().sum());
        u.extend(beta.iter().map(|b| -b));
        Ok(u)
    }

    /// Electrode voltages for each pattern, as a J x L measurement.
    pub fn solve(&self, sigma: &ParamField, patterns: &CurrentPatterns) -> Result<Measurement, FemError> {
        patterns.validate(self.electrodes)?;
        let a = self.assemble(sigma)?;
        let mut data = Vec::with_capacity(patterns.count() * self.electrodes);
        for p in &patterns.patterns {
            data.extend(self.voltages(&a, p)?);
        }
        Ok(Measurement::new(ProblemKind::Eit, patterns.count(), self.electrodes, data))
    }

    /// The L x L resistivity matrix `R = C S⁻¹ Cᵀ`, where `S` is the Schur
    /// complement of the nodal block; `U = R I` for every zero-sum `I`.
    pub fn resistivity_matrix(&self, sigma: &ParamField) -> Result<Vec<Vec<f64>>, FemError> {
        let a = self.assemble(sigma)?;
        let nb = self.electrodes - 1;
        let mut s_inv = vec![vec![0.0; nb]; nb];
        for k in 0..nb {
            let mut rhs = vec![0.0; self.profile.dim()];
            rhs[self.nodes + k] = 1.0;
            let x = a.solve(&rhs)?;
            for j in 0..nb {
                s_inv[j][k] = x[self.nodes + j];
            }
        }
        // C[0][j] = 1, C[j+1][j] = -1
        let c = |row: usize, col: usize| -> f64 {
            if row == 0 {
                1.0
            } else if row == col + 1 {
                -1.0
            } else {
                0.0
            }
        };
        let l = self.electrodes;
        let mut cs = vec![vec![0.0; nb]; l];
        for r in 0..l {
            for k in 0..nb {
                cs[r][k] = (0..nb).map(|j| c(r, j) * s_inv[j][k]).sum();
            }
        }
        let mut res = vec![vec![0.0; l]; l];
        for r in 0..l {
            for q in 0..l {
                res[r][q] = (0..nb).map(|k| cs[r][k] * c(q, k)).sum();
            }
        }
        Ok(res)
    }
}

/// Convenience wrapper building a [`CemSolver`] for a single solve.
pub fn solve_cem(
    mesh: &TriMesh,
    layout: &ElectrodeLayout,
    sigma: &ParamField,
    patterns: &CurrentPatterns,
) -> Result<Measurement, FemError> {
    sigma.check_len(mesh)?;
    CemSolver::new(mesh, layout)?.solve(sigma, patterns)
}

pub fn resistivity_matrix(
    mesh: &TriMesh,
    layout: &ElectrodeLayout,
    sigma: &ParamField,
) -> Result<Vec<Vec<f64>>, FemError> {
    sigma.check_len(mesh)?;
    CemSolver::new(mesh, layout)?.resistivity_matrix(sigma)
}

/// Diffusion model `-∇·(ρ∇u) + μu = 0` with `u + 2ρ ∂u/∂ν = f`. Sources are
/// the current patterns applied as piecewise-constant Robin data on the
/// electrode arcs; readings are arc averages of `u`.
#[derive(Debug, Clone)]
pub struct DotSolver {
    rho: f64,
    geometry: ElementGeometry,
    profile: Profile,
    slots: Vec<[usize; 6]>,
    constant: Vec<f64>,
    loads: Vec<Vec<(usize, f64)>>,
    lengths: Vec<f64>,
}

impl DotSolver {
    pub fn new(mesh: &TriMesh, layout: &ElectrodeLayout, rho: f64) -> Result<Self, FemError> {
        check_layout(mesh, layout)?;
        if !(rho > 0.0) {
            return Err(FemError::NonPositive { index: 0, value: rho });
        }
        let adj = mesh_adjacency(mesh, 0);
        let profile = Profile::new(&adj, 0);
        let slots = triangle_slots(mesh, &profile, |i| i);
        let mut constant = profile.zeros();
        for &[a, b] in &mesh.boundary_edges {
            let h = mesh.edge_length([a, b]);
            constant[profile.slot(a, a)] += h / 6.0;
            constant[profile.slot(b, b)] += h / 6.0;
            constant[profile.slot(a, b)] += h / 12.0;
        }
        Ok(DotSolver {
            rho,
            geometry: ElementGeometry::new(mesh),
            profile,
            slots,
            constant,
            loads: electrode_loads(mesh, layout),
            lengths: layout.lengths(mesh),
        })
    }

    pub fn solve(&self, mu: &ParamField, sources: &CurrentPatterns) -> Result<Measurement, FemError> {
        if mu.support != Support::Triangles || mu.len() != self.slots.len() {
            return Err(FemError::MeshMismatch {
                expected: self.slots.len(),
                got: mu.len(),
            });
        }
        mu.check_positive()?;
        let l = self.loads.len();
        if sources.patterns.iter().any(|p| p.len() != l) || sources.patterns.is_empty() {
            return Err(FemError::InvalidPatterns(format!("sources must have {l} entries")));
        }
        let mut values = self.constant.clone();
        for (t, slot) in self.slots.iter().enumerate() {
            let k = &self.geometry.stiffness[t];
            let m = self.geometry.mass(t);
            let mu_t = mu.values[t];
            for s in 0..6 {
                values[slot[s]] += self.rho * k[s] + mu_t * m[s];
            }
        }
        let mut a = SkylineMatrix::from_values(&self.profile, values);
        a.factor()?;
        let mut data = Vec::with_capacity(sources.count() * l);
        for f in &sources.patterns {
            let mut rhs = vec![0.0; self.profile.dim()];
            for (el, load) in self.loads.iter().enumerate() {
                for &(node, v) in load {
                    rhs[node] += 0.5 * f[el] * v;
                }
            }
            let u = a.solve(&rhs)?;
            for (el, load) in self.loads.iter().enumerate() {
                let integral: f64 = load.iter().map(|&(node, v)| v * u[node]).sum();
                data.push(integral / self.lengths[el]);
            }
        }
        Ok(Measurement::new(ProblemKind::Dot, sources.count(), l, data))
    }
}

pub fn solve_dot(
    mesh: &TriMesh,
    layout: &ElectrodeLayout,
    mu: &ParamField,
    rho: f64,
    sources: &CurrentPatterns,
) -> Result<Measurement, FemError> {
    mu.check_len(mesh)?;
    DotSolver::new(mesh, layout, rho)?.solve(mu, sources)
}

/// Location of one raster cell centre inside the mesh.
#[derive(Debug, Clone, Copy)]
struct CellProbe {
    tri: usize,
    bary: [f64; 3],
}

/// Absorption model `-∇·(ρ∇u) + γu = 0`, `u = g` on the boundary. The
/// observation is `H = γu` sampled at the centres of a 16x16 grid over
/// `[-1, 1]²`; row 0 is the top (`y` near 1), column 0 the left edge. Cells
/// whose centre lies outside the unit disk read exactly zero.
#[derive(Debug, Clone)]
pub struct QpatSolver {
    rho: f64,
    geometry: ElementGeometry,
    triangles: Vec<[usize; 3]>,
    nodes: Vec<[f64; 2]>,
    /// Interior unknown index per node, `None` for boundary nodes.
    interior: Vec<Option<usize>>,
    profile: Profile,
    probes: Vec<Option<CellProbe>>,
}

impl QpatSolver {
    pub fn new(mesh: &TriMesh, rho: f64) -> Result<Self, FemError> {
        if !(rho > 0.0) {
            return Err(FemError::NonPositive { index: 0, value: rho });
        }
        let n = mesh.node_count();
        let mut on_boundary = vec![false; n];
        for e in &mesh.boundary_edges {
            on_boundary[e[0]] = true;
            on_boundary[e[1]] = true;
        }
        let mut interior = vec![None; n];
        let mut count = 0;
        for i in 0..n {
            if !on_boundary[i] {
                interior[i] = Some(count);
                count += 1;
            }
        }
        let full = mesh_adjacency(mesh, 0);
        let mut adj = vec![Vec::new(); count];
        for i in 0..n {
            if let Some(a) = interior[i] {
                adj[a] = full[i].iter().filter_map(|&j| interior[j]).collect();
            }
        }
        let profile = Profile::new(&adj, 0);
        Ok(QpatSolver {
            rho,
            geometry: ElementGeometry::new(mesh),
            triangles: mesh.triangles.clone(),
            nodes: mesh.nodes.clone(),
            interior,
            profile,
            probes: raster_probes(mesh),
        })
    }

    /// Nodal solution `u` for absorption `gamma` and boundary data `g`.
    pub fn solve_field(
        &self,
        gamma: &ParamField,
        g: &dyn Fn([f64; 2]) -> f64,
    ) -> Result<Vec<f64>, FemError> {
        if gamma.support != Support::Triangles || gamma.len() != self.triangles.len() {
            return Err(FemError::MeshMismatch {
                expected: self.triangles.len(),
                got: gamma.len(),
            });
        }
        gamma.check_positive()?;
        let mut u: Vec<f64> = self
            .nodes
            .iter()
            .zip(&self.interior)
            .map(|(&p, int)| if int.is_none() { g(p) } else { 0.0 })
            .collect();
        let mut values = self.profile.zeros();
        let mut rhs = vec![0.0; self.profile.dim()];
        for (t, tri) in self.triangles.iter().enumerate() {
            let k = &self.geometry.stiffness[t];
            let m = self.geometry.mass(t);
            let gt = gamma.values[t];
            for (s, &(i, j)) in LOWER.iter().enumerate() {
                let a = self.rho * k[s] + gt * m[s];
                let (ni, nj) = (tri[i], tri[j]);
                match (self.interior[ni], self.interior[nj]) {
                    (Some(ii), Some(jj)) => values[self.profile.slot(ii, jj)] += a,
                    (Some(ii), None) => rhs[ii] -= a * u[nj],
                    (None, Some(jj)) => rhs[jj] -= a * u[ni],
                    (None, None) => {}
                }
            }
        }
        let mut a = SkylineMatrix::from_values(&self.profile, values);
        a.factor()?;
        let x = a.solve(&rhs)?;
        for (i, int) in self.interior.iter().enumerate() {
            if let Some(k) = int {
                u[i] = x[*k];
            }
        }
        Ok(u)
    }

    pub fn solve(
        &self,
        gamma: &ParamField,
        g: &dyn Fn([f64; 2]) -> f64,
    ) -> Result<Measurement, FemError> {
        let u = self.solve_field(gamma, g)?;
        let data = self
            .probes
            .iter()
            .map(|probe| match probe {
                None => 0.0,
                Some(CellProbe { tri, bary }) => {
                    let t = self.triangles[*tri];
                    let ut: f64 = (0..3).map(|k| bary[k] * u[t[k]]).sum();
                    gamma.values[*tri] * ut
                }
            })
            .collect();
        Ok(Measurement::new(ProblemKind::Qpat, RASTER, RASTER, data))
    }
}

/// Raster cell centre `(row, col)`.
pub fn raster_center(row: usize, col: usize) -> [f64; 2] {
    let h = 2.0 / RASTER as f64;
    [-1.0 + (col as f64 + 0.5) * h, 1.0 - (row as f64 + 0.5) * h]
}

fn raster_probes(mesh: &TriMesh) -> Vec<Option<CellProbe>> {
    let cents = centroids(mesh);
    let mut probes = Vec::with_capacity(RASTER * RASTER);
    for row in 0..RASTER {
        for col in 0..RASTER {
            let x = raster_center(row, col);
            if x[0].hypot(x[1]) >= 1.0 {
                probes.push(None);
                continue;
            }
            let mut found = None;
            for (t, tri) in mesh.triangles.iter().enumerate() {
                let b = barycentric(mesh, *tri, x);
                if b.iter().all(|&v| v >= -1e-12) {
                    found = Some(CellProbe { tri: t, bary: b });
                    break;
                }
            }
            // Centres between the polygonal boundary and the circle use the
            // nearest triangle, clamped to it.
            let probe = found.unwrap_or_else(|| {
                let t = (0..mesh.tri_count())
                    .min_by(|&a, &b| {
                        dist2(cents[a], x).total_cmp(&dist2(cents[b], x))
                    })
                    .expect("mesh has triangles");
                let mut b = barycentric(mesh, mesh.triangles[t], x).map(|v| v.max(0.0));
                let s: f64 = b.iter().sum();
                b.iter_mut().for_each(|v| *v /= s);
                CellProbe { tri: t, bary: b }
            });
            probes.push(Some(probe));
        }
    }
    probes
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn barycentric(mesh: &TriMesh, tri: [usize; 3], x: [f64; 2]) -> [f64; 3] {
    let [a, b, c] = tri.map(|i| mesh.nodes[i]);
    let area = signed_area(a, b, c);
    [
        signed_area(x, b, c) / area,
        signed_area(a, x, c) / area,
        signed_area(a, b, x) / area,
    ]
}

pub fn solve_qpat(
    mesh: &TriMesh,
    gamma: &ParamField,
    rho: f64,
    g: &dyn Fn([f64; 2]) -> f64,
) -> Result<Measurement, FemError> {
    gamma.check_len(mesh)?;
    QpatSolver::new(mesh, rho)?.solve(gamma, g)
}

/// Angle of the raster cells' centres; used by tests and phantom helpers.
pub fn polar_angle(p: [f64; 2]) -> f64 {
    p[1].atan2(p[0]).rem_euclid(2.0 * PI)
}
