//! Problem setups: mesh, prior, parametrization and forward solver for each
//! of EIT, DOT and QPAT, plus the FEM and surrogate backends built on them.
//!
//! Every problem works with three representations of the unknown:
//! the latent vector sampled by MCMC, the *input* vector fed to the
//! surrogate (the physical coefficient on the input support), and the
//! per-triangle physical field used by the FEM solver.

use thiserror::Error;

use crate::fem::{
    CemSolver, CurrentPatterns, DotSolver, FemError, FieldKind, Measurement, ParamField, ProblemKind, QpatSolver,
    Support,
};
use crate::mcmc::{BackendError, BackendKind, EvalCounter, ForwardBackend};
use crate::mesh::{assign_electrodes, build_disk_mesh, centroids, ElectrodeLayout, MeshError, TriMesh};
use crate::prior::{
    build_prior, nodal_to_triangles, star_prior_variances, FourierSeries, GaussianPrior, LevelSetSpec, MaternParams,
    PriorError, StarShapeSpec,
};
use crate::surrogate::{SurrogateNet, PLANE, SIDE};

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Prior(#[from] PriorError),
    #[error("invalid problem configuration: {0}")]
    Config(String),
}

impl From<ProblemError> for BackendError {
    fn from(e: ProblemError) -> Self {
        match e {
            ProblemError::Fem(f) => BackendError::Fem(f),
            ProblemError::Prior(p) => BackendError::Prior(p),
            other => BackendError::Other(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DotParams {
    pub rho: f64,
    pub mu_background: f64,
    /// `μ = μ_bg · exp(latent_scale · w)`, clamped to `[mu_min, mu_max]`.
    pub latent_scale: f64,
    pub mu_min: f64,
    pub mu_max: f64,
    /// Value inside circular phantoms.
    pub mu_anomaly: f64,
}

impl Default for DotParams {
    fn default() -> Self {
        DotParams {
            rho: 0.2,
            mu_background: 1.0,
            latent_scale: 0.5,
            mu_min: 0.05,
            mu_max: 20.0,
            mu_anomaly: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpatParams {
    pub rho: f64,
    /// Inclusion value followed by background value.
    pub kappa_inclusion: f64,
    pub kappa_background: f64,
    pub centers: Vec<[f64; 2]>,
    pub base_radius: f64,
    /// Multiplier of the Fourier series in the log-radius.
    pub amplitude: f64,
    pub order: usize,
    pub decay: f64,
    pub const_std: f64,
}

impl Default for QpatParams {
    fn default() -> Self {
        QpatParams {
            rho: 0.05,
            kappa_inclusion: 0.15,
            kappa_background: 0.05,
            centers: vec![[-0.35, 0.2], [0.35, -0.25]],
            base_radius: 0.25,
            amplitude: 0.2,
            order: 16,
            decay: 2.0,
            const_std: 1.0,
        }
    }
}

impl QpatParams {
    pub fn coeffs_per_inclusion(&self) -> usize {
        2 * self.order + 1
    }

    /// Star-shape spec for a latent coefficient vector.
    pub fn star_spec(&self, latent: &[f64]) -> StarShapeSpec {
        let per = self.coeffs_per_inclusion();
        let radial = latent
            .chunks(per)
            .map(|c| {
                let mut s = FourierSeries::from_slice(c);
                s.a0 = self.base_radius.ln() + self.amplitude * s.a0;
                s.cos.iter_mut().chain(s.sin.iter_mut()).for_each(|v| *v *= self.amplitude);
                s
            })
            .collect();
        StarShapeSpec {
            centers: self.centers.clone(),
            radial,
            kappas: self.kappas(),
        }
    }

    pub fn kappas(&self) -> Vec<f64> {
        let mut k = vec![self.kappa_inclusion; self.centers.len()];
        k.push(self.kappa_background);
        k
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemConfig {
    pub kind: ProblemKind,
    pub refinement: u32,
    pub electrodes: usize,
    pub coverage: f64,
    pub contact_impedance: f64,
    pub matern: MaternParams,
    pub jitter: f64,
    pub level_set: LevelSetSpec,
    pub dot: DotParams,
    pub qpat: QpatParams,
}

impl ProblemConfig {
    pub fn new(kind: ProblemKind) -> Self {
        ProblemConfig {
            kind,
            refinement: match kind {
                ProblemKind::Dot => 2,
                _ => 3,
            },
            electrodes: 16,
            coverage: 0.5,
            contact_impedance: crate::mesh::DEFAULT_CONTACT_IMPEDANCE,
            matern: MaternParams::default(),
            jitter: 0.0,
            level_set: LevelSetSpec::binary(1.0, 2.0),
            dot: DotParams::default(),
            qpat: QpatParams::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ProblemError> {
        self.matern.validate()?;
        self.level_set.validate()?;
        let bad = |m: &str| Err(ProblemError::Config(m.to_string()));
        if !(self.coverage > 0.0 && self.coverage <= 1.0) {
            return bad("coverage must lie in (0, 1]");
        }
        if !(self.contact_impedance > 0.0) {
            return bad("contact impedance must be positive");
        }
        let d = &self.dot;
        if !(d.rho > 0.0 && d.mu_background > 0.0 && d.mu_min > 0.0 && d.mu_min < d.mu_max && d.mu_anomaly > 0.0) {
            return bad("DOT parameters must be positive with mu_min < mu_max");
        }
        let q = &self.qpat;
        if !(q.rho > 0.0 && q.kappa_inclusion > 0.0 && q.kappa_background > 0.0 && q.base_radius > 0.0) {
            return bad("QPAT parameters must be positive");
        }
        if self.kind == ProblemKind::Qpat && q.centers.is_empty() {
            return bad("QPAT needs at least one inclusion centre");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum Solver {
    Cem(CemSolver, CurrentPatterns),
    Dot(DotSolver, CurrentPatterns),
    Qpat(QpatSolver),
}

/// Ground-truth phantoms with known physical fields.
#[derive(Debug, Clone, PartialEq)]
pub enum Phantom {
    /// Disks with the anomaly value over the background (EIT, DOT, QPAT).
    Circles(Vec<Circle>),
    /// Explicit star-shaped inclusions (QPAT).
    Stars(StarShapeSpec),
    /// A latent vector pushed through the problem's parametrization.
    Latent(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Circle {
    pub center: [f64; 2],
    pub radius: f64,
}

impl Circle {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        (p[0] - self.center[0]).hypot(p[1] - self.center[1]) <= self.radius
    }
}

#[derive(Debug, Clone)]
pub struct Problem {
    pub cfg: ProblemConfig,
    pub mesh: TriMesh,
    pub layout: ElectrodeLayout,
    pub prior: GaussianPrior,
    centroids: Vec<[f64; 2]>,
    solver: Solver,
}

impl Problem {
    pub fn new(cfg: ProblemConfig) -> Result<Self, ProblemError> {
        cfg.validate()?;
        let mesh = build_disk_mesh(cfg.refinement)?;
        let layout =
            assign_electrodes(&mesh, cfg.electrodes, cfg.coverage)?.with_contact_impedance(cfg.contact_impedance);
        let cents = centroids(&mesh);
        let prior = match cfg.kind {
            ProblemKind::Eit => build_prior(&mesh.nodes, cfg.matern, cfg.jitter)?,
            ProblemKind::Dot => build_prior(&cents, cfg.matern, cfg.jitter)?,
            ProblemKind::Qpat => {
                let q = &cfg.qpat;
                let per = star_prior_variances(q.order, q.decay, q.const_std);
                let all: Vec<f64> = per.iter().copied().cycle().take(per.len() * q.centers.len()).collect();
                GaussianPrior::from_variances(&all)?
            }
        };
        let solver = match cfg.kind {
            ProblemKind::Eit => Solver::Cem(CemSolver::new(&mesh, &layout)?, CurrentPatterns::trigonometric(&layout)),
            ProblemKind::Dot => {
                Solver::Dot(DotSolver::new(&mesh, &layout, cfg.dot.rho)?, CurrentPatterns::trigonometric(&layout))
            }
            ProblemKind::Qpat => Solver::Qpat(QpatSolver::new(&mesh, cfg.qpat.rho)?),
        };
        Ok(Problem {
            cfg,
            mesh,
            layout,
            prior,
            centroids: cents,
            solver,
        })
    }

    pub fn kind(&self) -> ProblemKind {
        self.cfg.kind
    }

    pub fn latent_dim(&self) -> usize {
        self.prior.dim()
    }

    pub fn input_support(&self) -> Support {
        match self.cfg.kind {
            ProblemKind::Eit => Support::Nodes,
            _ => Support::Triangles,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self.input_support() {
            Support::Nodes => self.mesh.node_count(),
            Support::Triangles => self.mesh.tri_count(),
        }
    }

    /// Points carrying the input values (nodes or centroids).
    pub fn input_points(&self) -> &[[f64; 2]] {
        match self.input_support() {
            Support::Nodes => &self.mesh.nodes,
            Support::Triangles => &self.centroids,
        }
    }

    pub fn centroids(&self) -> &[[f64; 2]] {
        &self.centroids
    }

    /// `(rows, cols)` of the measurement.
    pub fn measurement_shape(&self) -> (usize, usize) {
        match &self.solver {
            Solver::Cem(_, p) | Solver::Dot(_, p) => (p.count(), self.layout.count()),
            Solver::Qpat(_) => (crate::fem::RASTER, crate::fem::RASTER),
        }
    }

    pub fn field_kind(&self) -> FieldKind {
        match self.cfg.kind {
            ProblemKind::Eit => FieldKind::Conductivity,
            ProblemKind::Dot => FieldKind::Absorption,
            ProblemKind::Qpat => FieldKind::QpatAbsorption,
        }
    }

    /// Admissible range of the physical coefficient.
    pub fn band(&self) -> (f64, f64) {
        match self.cfg.kind {
            ProblemKind::Eit => (self.cfg.level_set.lower(), self.cfg.level_set.upper()),
            ProblemKind::Dot => (self.cfg.dot.mu_min, self.cfg.dot.mu_max),
            ProblemKind::Qpat => {
                let k = self.cfg.qpat.kappas();
                (
                    k.iter().copied().fold(f64::INFINITY, f64::min),
                    k.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                )
            }
        }
    }

    fn background(&self) -> f64 {
        match self.cfg.kind {
            ProblemKind::Eit => self.cfg.level_set.values[0],
            ProblemKind::Dot => self.cfg.dot.mu_background,
            ProblemKind::Qpat => self.cfg.qpat.kappa_background,
        }
    }

    fn anomaly(&self) -> f64 {
        match self.cfg.kind {
            ProblemKind::Eit => *self.cfg.level_set.values.last().expect("validated"),
            ProblemKind::Dot => self.cfg.dot.mu_anomaly,
            ProblemKind::Qpat => self.cfg.qpat.kappa_inclusion,
        }
    }

    /// Surrogate input for a latent vector.
    pub fn latent_to_input(&self, q: &[f64]) -> Result<Vec<f64>, ProblemError> {
        if q.len() != self.latent_dim() {
            return Err(PriorError::Dimension {
                expected: self.latent_dim(),
                got: q.len(),
            }
            .into());
        }
        Ok(match self.cfg.kind {
            ProblemKind::Eit => q.iter().map(|&w| self.cfg.level_set.value(w)).collect(),
            ProblemKind::Dot => {
                let d = &self.cfg.dot;
                q.iter()
                    .map(|&w| (d.mu_background * (d.latent_scale * w).exp()).clamp(d.mu_min, d.mu_max))
                    .collect()
            }
            ProblemKind::Qpat => {
                let spec = self.cfg.qpat.star_spec(q);
                self.centroids.iter().map(|&c| spec.value_at(c)).collect()
            }
        })
    }

    /// Surrogate input for a phantom.
    pub fn phantom_input(&self, phantom: &Phantom) -> Result<Vec<f64>, ProblemError> {
        match phantom {
            Phantom::Latent(q) => self.latent_to_input(q),
            Phantom::Circles(circles) => {
                let (bg, an) = (self.background(), self.anomaly());
                Ok(self
                    .input_points()
                    .iter()
                    .map(|&p| if circles.iter().any(|c| c.contains(p)) { an } else { bg })
                    .collect())
            }
            Phantom::Stars(spec) => {
                spec.validate()?;
                Ok(self.input_points().iter().map(|&p| spec.value_at(p)).collect())
            }
        }
    }

    /// Per-triangle physical field for a surrogate input; nodal inputs are
    /// averaged over each triangle's vertices.
    pub fn input_to_field(&self, input: &[f64]) -> Result<ParamField, ProblemError> {
        if input.len() != self.input_dim() {
            return Err(FemError::MeshMismatch {
                expected: self.input_dim(),
                got: input.len(),
            }
            .into());
        }
        let values = match self.input_support() {
            Support::Nodes => nodal_to_triangles(&self.mesh, input),
            Support::Triangles => input.to_vec(),
        };
        Ok(ParamField::per_triangle(self.field_kind(), values))
    }

    pub fn latent_to_field(&self, q: &[f64]) -> Result<ParamField, ProblemError> {
        self.input_to_field(&self.latent_to_input(q)?)
    }

    pub fn phantom_field(&self, phantom: &Phantom) -> Result<ParamField, ProblemError> {
        self.input_to_field(&self.phantom_input(phantom)?)
    }

    /// Noiseless FEM measurement for a physical field.
    pub fn forward_field(&self, field: &ParamField) -> Result<Measurement, ProblemError> {
        let (lo, hi) = self.band();
        field.check_band(lo, hi)?;
        Ok(match &self.solver {
            Solver::Cem(s, p) => s.solve(field, p)?,
            Solver::Dot(s, p) => s.solve(field, p)?,
            Solver::Qpat(s) => s.solve(field, &|_| 1.0)?,
        })
    }

    pub fn forward_input(&self, input: &[f64]) -> Result<Measurement, ProblemError> {
        self.forward_field(&self.input_to_field(input)?)
    }

    pub fn forward_latent(&self, q: &[f64]) -> Result<Measurement, ProblemError> {
        self.forward_input(&self.latent_to_input(q)?)
    }

    /// Measurement embedded in the 16×16 surrogate plane (zero padded).
    pub fn to_plane(&self, m: &Measurement) -> Vec<f64> {
        to_plane(m)
    }

    /// Crops a surrogate plane to this problem's measurement.
    pub fn from_plane(&self, plane: &[f64]) -> Measurement {
        let (rows, cols) = self.measurement_shape();
        from_plane(self.kind(), plane, rows, cols)
    }
}

/// Top-left embedding of a measurement into the 16×16 plane.
pub fn to_plane(m: &Measurement) -> Vec<f64> {
    assert!(m.rows <= SIDE && m.cols <= SIDE, "measurement larger than the plane");
    let mut plane = vec![0.0; PLANE];
    for r in 0..m.rows {
        plane[r * SIDE..r * SIDE + m.cols].copy_from_slice(&m.data[r * m.cols..(r + 1) * m.cols]);
    }
    plane
}

pub fn from_plane(kind: ProblemKind, plane: &[f64], rows: usize, cols: usize) -> Measurement {
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        data.extend_from_slice(&plane[r * SIDE..r * SIDE + cols]);
    }
    Measurement::new(kind, rows, cols, data)
}

/// Rotates a star-shaped boundary by `alpha` about its own centre.
pub fn rotate_series(s: &FourierSeries, alpha: f64) -> FourierSeries {
    let mut out = s.clone();
    for k in 0..s.order() {
        let (sn, cs) = (((k + 1) as f64) * alpha).sin_cos();
        out.cos[k] = s.cos[k] * cs - s.sin[k] * sn;
        out.sin[k] = s.cos[k] * sn + s.sin[k] * cs;
    }
    out
}

/// Two-inclusion QPAT phantom (an elongated and a round inclusion), rotated
/// by `alpha` about the origin.
pub fn two_inclusion_phantom(q: &QpatParams, alpha: f64) -> StarShapeSpec {
    let mut elongated = FourierSeries::constant((0.22f64).ln());
    elongated.cos = vec![0.0, 0.35];
    elongated.sin = vec![0.0, 0.0];
    let round = FourierSeries::constant((0.17f64).ln());
    let (sn, cs) = alpha.sin_cos();
    let centers = [[-0.35, 0.2], [0.35, -0.25]].map(|c| [cs * c[0] - sn * c[1], sn * c[0] + cs * c[1]]);
    StarShapeSpec {
        centers: centers.to_vec(),
        radial: vec![rotate_series(&elongated, alpha), rotate_series(&round, alpha)],
        kappas: vec![q.kappa_inclusion, q.kappa_inclusion, q.kappa_background],
    }
}

/// Default single-anomaly phantom used for inversions.
pub fn single_circle() -> Phantom {
    Phantom::Circles(vec![Circle {
        center: [0.3, 0.2],
        radius: 0.3,
    }])
}

/// Exact FEM forward map.
#[derive(Debug)]
pub struct FemBackend<'a> {
    pub problem: &'a Problem,
    counter: EvalCounter,
}

impl<'a> FemBackend<'a> {
    pub fn new(problem: &'a Problem) -> Self {
        FemBackend {
            problem,
            counter: EvalCounter::default(),
        }
    }
}

impl ForwardBackend for FemBackend<'_> {
    fn evaluate(&self, q: &[f64]) -> Result<Measurement, BackendError> {
        self.counter.bump();
        Ok(self.problem.forward_latent(q)?)
    }

    fn kind(&self) -> BackendKind {
        BackendKind::Fem
    }

    fn eval_count(&self) -> u64 {
        self.counter.get()
    }
}

/// What a surrogate backend evaluates.
#[derive(Debug, Clone)]
pub enum SurrogateModel {
    Network(SurrogateNet),
    /// A perfect surrogate: the FEM map itself behind the surrogate interface.
    Exact,
}

#[derive(Debug)]
pub struct SurrogateBackend<'a> {
    pub problem: &'a Problem,
    pub model: SurrogateModel,
    counter: EvalCounter,
}

impl<'a> SurrogateBackend<'a> {
    pub fn new(problem: &'a Problem, net: SurrogateNet) -> Self {
        SurrogateBackend {
            problem,
            model: SurrogateModel::Network(net),
            counter: EvalCounter::default(),
        }
    }

    pub fn exact(problem: &'a Problem) -> Self {
        SurrogateBackend {
            problem,
            model: SurrogateModel::Exact,
            counter: EvalCounter::default(),
        }
    }

    /// Prediction for a surrogate input (physical coefficient).
    pub fn predict_input(&self, input: &[f64]) -> Result<Measurement, BackendError> {
        match &self.model {
            SurrogateModel::Network(net) => Ok(self.problem.from_plane(&net.forward(input)?)),
            SurrogateModel::Exact => Ok(self.problem.forward_input(input)?),
        }
    }
}

impl ForwardBackend for SurrogateBackend<'_> {
    fn evaluate(&self, q: &[f64]) -> Result<Measurement, BackendError> {
        self.counter.bump();
        let input = self.problem.latent_to_input(q)?;
        self.predict_input(&input)
    }

    fn kind(&self) -> BackendKind {
        BackendKind::Surrogate
    }

    fn eval_count(&self) -> u64 {
        self.counter.get()
    }
}
