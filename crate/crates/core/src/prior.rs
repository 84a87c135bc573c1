//! Gaussian priors with Matérn covariance, and the two maps that turn latent
//! draws into admissible coefficient fields: thresholded level sets and
//! star-shaped inclusions.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::fem::{FieldKind, ParamField, Support};
use crate::mesh::{centroids, TriMesh};

/// Diagonal jitters tried in turn when the covariance is numerically singular.
pub const JITTER_LADDER: [f64; 3] = [1e-10, 1e-8, 1e-6];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PriorError {
    #[error("Cholesky factorization failed even with jitter {0:e}")]
    Factorization(f64),
    #[error("invalid Matérn parameters: nu={nu}, ell={ell}")]
    InvalidMatern { nu: f64, ell: f64 },
    #[error("prior needs at least one point")]
    NoPoints,
    #[error("negative jitter {0}")]
    NegativeJitter(f64),
    #[error("level-set thresholds must be strictly increasing with one more entry than values")]
    InvalidThresholds,
    #[error("level-set values must be strictly positive")]
    InvalidValues,
    #[error("star-shape spec: {0}")]
    InvalidStarShape(String),
    #[error("latent vector has {got} entries, expected {expected}")]
    Dimension { expected: usize, got: usize },
}

/// Coefficients of `1/Γ(z)` (Abramowitz & Stegun 6.1.34), used for the
/// `Γ(1 ± μ)` terms of Temme's series with `|μ| ≤ 1/2`.
const RECIP_GAMMA: [f64; 26] = [
    1.0,
    0.577_215_664_901_532_9,
    -0.655_878_071_520_253_8,
    -0.042_002_635_034_095_2,
    0.166_538_611_382_291_5,
    -0.042_197_734_555_544_3,
    -0.009_621_971_527_877_0,
    0.007_218_943_246_663_0,
    -0.001_165_167_591_859_1,
    -0.000_215_241_674_114_9,
    0.000_128_050_282_388_2,
    -0.000_020_134_854_780_7,
    -0.000_001_250_493_482_1,
    0.000_001_133_027_232_0,
    -0.000_000_205_633_841_7,
    0.000_000_006_116_095_0,
    0.000_000_005_002_007_5,
    -0.000_000_001_181_274_6,
    0.000_000_000_104_342_7,
    0.000_000_000_007_782_3,
    -0.000_000_000_003_696_8,
    0.000_000_000_000_510_0,
    -0.000_000_000_000_020_6,
    -0.000_000_000_000_005_4,
    0.000_000_000_000_001_4,
    0.000_000_000_000_000_1,
];

/// `1/Γ(1+z)` for `|z| ≤ 1/2`.
fn recip_gamma_1p(z: f64) -> f64 {
    RECIP_GAMMA.iter().rev().fold(0.0, |acc, &c| acc * z + c)
}

/// Modified Bessel function of the second kind `K_ν(x)` for `ν ≥ 0`, `x > 0`.
///
/// Temme's method: `K_μ` and `K_{μ+1}` with `|μ| ≤ 1/2` from a power series
/// (`x < 2`) or Steed's continued fraction (`x ≥ 2`), then forward recurrence
/// in the order, which is stable for `K`.
pub fn bessel_k(nu: f64, x: f64) -> f64 {
    assert!(nu >= 0.0 && x > 0.0, "bessel_k needs nu >= 0 and x > 0");
    const EPS: f64 = 1e-16;
    const MAXIT: usize = 100_000;
    let nl = (nu + 0.5).floor() as usize;
    let mu = nu - nl as f64;
    let mu2 = mu * mu;
    let xi = 1.0 / x;
    let xi2 = 2.0 * xi;

    let (mut k_mu, mut k_mu1);
    if x < 2.0 {
        let x2 = 0.5 * x;
        let pimu = PI * mu;
        let fact = if pimu.abs() < EPS { 1.0 } else { pimu / pimu.sin() };
        let d = -x2.ln();
        let e = mu * d;
        let fact2 = if e.abs() < EPS { 1.0 } else { e.sinh() / e };
        let gampl = recip_gamma_1p(mu);
        let gammi = recip_gamma_1p(-mu);
        // gam1 = (1/Γ(1-μ) - 1/Γ(1+μ)) / (2μ): odd part of the series.
        let gam1 = -RECIP_GAMMA
            .iter()
            .enumerate()
            .skip(1)
            .step_by(2)
            .rev()
            .fold(0.0, |acc, (_, &c)| acc * mu2 + c);
        let gam2 = 0.5 * (gammi + gampl);
        let mut ff = fact * (gam1 * e.cosh() + gam2 * fact2 * d);
        let mut sum = ff;
        let ee = e.exp();
        let mut p = 0.5 * ee / gampl;
        let mut q = 0.5 / (ee * gammi);
        let mut c = 1.0;
        let dd = x2 * x2;
        let mut sum1 = p;
        for i in 1..=MAXIT {
            let fi = i as f64;
            ff = (fi * ff + p + q) / (fi * fi - mu2);
            c *= dd / fi;
            p /= fi - mu;
            q /= fi + mu;
            let del = c * ff;
            sum += del;
            sum1 += c * (p - fi * ff);
            if del.abs() < sum.abs() * EPS {
                break;
            }
        }
        k_mu = sum;
        k_mu1 = sum1 * xi2;
    } else {
        let mut b = 2.0 * (1.0 + x);
        let mut d = 1.0 / b;
        let mut delh = d;
        let mut h = d;
        let mut q1 = 0.0;
        let mut q2 = 1.0;
        let a1 = 0.25 - mu2;
        let mut q = a1;
        let mut c = a1;
        let mut a = -a1;
        let mut s = 1.0 + q * delh;
        for i in 2..=MAXIT {
            let fi = i as f64;
            a -= 2.0 * (fi - 1.0);
            c = -a * c / fi;
            let qnew = (q1 - b * q2) / a;
            q1 = q2;
            q2 = qnew;
            q += c * qnew;
            b += 2.0;
            d = 1.0 / (b + a * d);
            delh *= b * d - 1.0;
            h += delh;
            let dels = q * delh;
            s += dels;
            if (dels / s).abs() < EPS {
                break;
            }
        }
        h *= a1;
        k_mu = (PI / (2.0 * x)).sqrt() * (-x).exp() / s;
        k_mu1 = k_mu * (mu + x + 0.5 - h) * xi;
    }
    for i in 1..=nl {
        let next = (mu + i as f64) * xi2 * k_mu1 + k_mu;
        k_mu = k_mu1;
        k_mu1 = next;
    }
    k_mu
}

/// Matérn smoothness and length scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaternParams {
    pub nu: f64,
    pub ell: f64,
}

impl MaternParams {
    pub fn new(nu: f64, ell: f64) -> Result<Self, PriorError> {
        let p = MaternParams { nu, ell };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), PriorError> {
        if !(self.nu > 0.0 && self.ell > 0.0 && self.nu.is_finite() && self.ell.is_finite()) {
            return Err(PriorError::InvalidMatern {
                nu: self.nu,
                ell: self.ell,
            });
        }
        Ok(())
    }
}

impl Default for MaternParams {
    fn default() -> Self {
        MaternParams { nu: 3.0, ell: 0.4 }
    }
}

/// Matérn correlation `2^{1-ν}/Γ(ν) (d√(2ν)/ℓ)^ν K_ν(d√(2ν)/ℓ)`, equal to 1 at
/// `d = 0`.
pub fn matern(d: f64, p: MaternParams) -> f64 {
    let x = d * (2.0 * p.nu).sqrt() / p.ell;
    if x <= 0.0 {
        return 1.0;
    }
    if x > 700.0 {
        return 0.0;
    }
    // log form avoids overflow of x^ν for large ν
    let log_k = (1.0 - p.nu) * std::f64::consts::LN_2 - ln_gamma(p.nu)
        + p.nu * x.ln()
        + bessel_k(p.nu, x).ln();
    log_k.exp().min(1.0)
}

/// Zero-mean Gaussian prior `N(0, C)` with its lower Cholesky factor.
#[derive(Debug, Clone)]
pub struct GaussianPrior {
    pub points: Vec<[f64; 2]>,
    /// Covariance without jitter.
    pub cov: DMatrix<f64>,
    /// Lower-triangular factor of `cov + jitter·I`.
    pub chol: DMatrix<f64>,
    pub jitter: f64,
    // packed rows of `chol` for fast sampling
    packed: Vec<f64>,
}

impl GaussianPrior {
    /// Factors `cov + jitter·I`, climbing [`JITTER_LADDER`] on failure.
    pub fn from_covariance(
        points: Vec<[f64; 2]>,
        cov: DMatrix<f64>,
        jitter: f64,
    ) -> Result<Self, PriorError> {
        if cov.nrows() == 0 {
            return Err(PriorError::NoPoints);
        }
        if !(jitter >= 0.0) {
            return Err(PriorError::NegativeJitter(jitter));
        }
        let n = cov.nrows();
        let mut last = jitter;
        for j in std::iter::once(jitter).chain(JITTER_LADDER.into_iter().filter(|&j| j > jitter)) {
            last = j;
            let mut m = cov.clone();
            for i in 0..n {
                m[(i, i)] += j;
            }
            if let Some(c) = nalgebra::Cholesky::new(m) {
                let chol = c.unpack();
                let mut packed = Vec::with_capacity(n * (n + 1) / 2);
                for i in 0..n {
                    for k in 0..=i {
                        packed.push(chol[(i, k)]);
                    }
                }
                return Ok(GaussianPrior {
                    points,
                    cov,
                    chol,
                    jitter: j,
                    packed,
                });
            }
        }
        Err(PriorError::Factorization(last))
    }

    /// Independent components with the given variances.
    pub fn from_variances(variances: &[f64]) -> Result<Self, PriorError> {
        let cov = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(variances));
        GaussianPrior::from_covariance(vec![[0.0, 0.0]; variances.len()], cov, 0.0)
    }

    pub fn dim(&self) -> usize {
        self.cov.nrows()
    }

    pub fn cov_with_jitter(&self) -> DMatrix<f64> {
        let mut m = self.cov.clone();
        for i in 0..self.dim() {
            m[(i, i)] += self.jitter;
        }
        m
    }

    /// `chol · z` for a given standard-normal vector `z`.
    pub fn transform(&self, z: &[f64]) -> Vec<f64> {
        let n = self.dim();
        assert_eq!(z.len(), n);
        let mut out = Vec::with_capacity(n);
        let mut off = 0;
        for i in 0..n {
            let row = &self.packed[off..off + i + 1];
            out.push(crate::sparse::dot(row, &z[..=i]));
            off += i + 1;
        }
        out
    }

    /// One draw `chol · z`, `z ~ N(0, I)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z: Vec<f64> = (0..self.dim()).map(|_| rng.sample(StandardNormal)).collect();
        self.transform(&z)
    }

    /// `chol · z` for each of `zs` as one matrix product over row panels of
    /// the factor. Agrees with [`Self::transform`] up to summation order.
    pub fn transform_many(&self, zs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = self.dim();
        let z = DMatrix::from_fn(n, zs.len(), |i, j| zs[j][i]);
        let mut prod = DMatrix::zeros(n, zs.len());
        let mut i0 = 0;
        while i0 < n {
            let i1 = (i0 + PANEL_ROWS).min(n);
            let lhs = self.chol.view((i0, 0), (i1 - i0, i1));
            let rhs = z.view((0, 0), (i1, zs.len()));
            prod.view_mut((i0, 0), (i1 - i0, zs.len())).gemm(1.0, &lhs, &rhs, 0.0);
            i0 = i1;
        }
        prod.column_iter().map(|c| c.iter().copied().collect()).collect()
    }
}

// rows of the factor multiplied at once; skips most of the zero upper triangle
const PANEL_ROWS: usize = 256;

/// Vectors transformed together by [`GaussianPrior::transform_many`].
pub const DRAW_BLOCK: usize = 16;

/// Prior draws from a dedicated stream, computed a block at a time. The
/// standard normals are consumed in the same order as repeated
/// [`GaussianPrior::sample`] calls on that stream.
#[derive(Debug, Clone)]
pub struct BlockSampler<R> {
    rng: R,
    ready: std::vec::IntoIter<Vec<f64>>,
}

impl<R: Rng> BlockSampler<R> {
    pub fn new(rng: R) -> Self {
        BlockSampler {
            rng,
            ready: Vec::new().into_iter(),
        }
    }

    pub fn next_draw(&mut self, prior: &GaussianPrior) -> Vec<f64> {
        if let Some(d) = self.ready.next() {
            return d;
        }
        let zs: Vec<Vec<f64>> = (0..DRAW_BLOCK)
            .map(|_| (0..prior.dim()).map(|_| self.rng.sample(StandardNormal)).collect())
            .collect();
        self.ready = prior.transform_many(&zs).into_iter();
        self.ready.next().expect("block is nonempty")
    }
}

/// Matérn covariance over `points`, factored with the jitter ladder.
pub fn build_prior(
    points: &[[f64; 2]],
    params: MaternParams,
    jitter: f64,
) -> Result<GaussianPrior, PriorError> {
    params.validate()?;
    if points.is_empty() {
        return Err(PriorError::NoPoints);
    }
    let n = points.len();
    let mut cov = DMatrix::zeros(n, n);
    for i in 0..n {
        cov[(i, i)] = 1.0;
        for j in 0..i {
            let d = (points[i][0] - points[j][0]).hypot(points[i][1] - points[j][1]);
            let k = matern(d, params);
            cov[(i, j)] = k;
            cov[(j, i)] = k;
        }
    }
    GaussianPrior::from_covariance(points.to_vec(), cov, jitter)
}

/// Draws one latent field from the prior on the given support.
pub fn sample_gp<R: Rng + ?Sized>(prior: &GaussianPrior, support: Support, rng: &mut R) -> ParamField {
    ParamField {
        kind: FieldKind::Latent,
        support,
        values: prior.sample(rng),
    }
}

/// Thresholds `c_0 < … < c_M` and band values `σ_1 … σ_M`.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSetSpec {
    pub thresholds: Vec<f64>,
    pub values: Vec<f64>,
}

impl LevelSetSpec {
    pub fn new(thresholds: Vec<f64>, values: Vec<f64>) -> Result<Self, PriorError> {
        let s = LevelSetSpec { thresholds, values };
        s.validate()?;
        Ok(s)
    }

    /// Two bands split at zero: background below, anomaly above.
    pub fn binary(background: f64, anomaly: f64) -> Self {
        LevelSetSpec {
            thresholds: vec![-1e9, 0.0, 1e9],
            values: vec![background, anomaly],
        }
    }

    pub fn validate(&self) -> Result<(), PriorError> {
        if self.values.is_empty() || self.thresholds.len() != self.values.len() + 1 {
            return Err(PriorError::InvalidThresholds);
        }
        if self.thresholds.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(PriorError::InvalidThresholds);
        }
        if self.values.iter().any(|&v| !(v > 0.0)) {
            return Err(PriorError::InvalidValues);
        }
        Ok(())
    }

    /// `σ_i` for `c_{i-1} ≤ w < c_i`, clamped to the end bands outside `[c_0, c_M)`.
    pub fn value(&self, w: f64) -> f64 {
        let inner = &self.thresholds[1..self.thresholds.len() - 1];
        let band = inner.partition_point(|&c| c <= w);
        self.values[band]
    }

    pub fn lower(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn upper(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Applies the level-set map elementwise; the output keeps the support of `w`.
pub fn level_set_map(w: &ParamField, spec: &LevelSetSpec) -> Result<ParamField, PriorError> {
    spec.validate()?;
    Ok(ParamField {
        kind: FieldKind::Conductivity,
        support: w.support,
        values: w.values.iter().map(|&v| spec.value(v)).collect(),
    })
}

/// Per-triangle averages of a nodal field (its value at each centroid).
pub fn nodal_to_triangles(mesh: &TriMesh, nodal: &[f64]) -> Vec<f64> {
    mesh.triangles
        .iter()
        .map(|t| (nodal[t[0]] + nodal[t[1]] + nodal[t[2]]) / 3.0)
        .collect()
}

/// Truncated Fourier series `ψ(θ) = a_0 + Σ a_k cos kθ + b_k sin kθ`.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierSeries {
    pub a0: f64,
    pub cos: Vec<f64>,
    pub sin: Vec<f64>,
}

impl FourierSeries {
    pub fn constant(a0: f64) -> Self {
        FourierSeries {
            a0,
            cos: Vec::new(),
            sin: Vec::new(),
        }
    }

    pub fn order(&self) -> usize {
        self.cos.len()
    }

    pub fn eval(&self, theta: f64) -> f64 {
        let mut s = self.a0;
        for (k, (a, b)) in self.cos.iter().zip(&self.sin).enumerate() {
            let kt = (k + 1) as f64 * theta;
            s += a * kt.cos() + b * kt.sin();
        }
        s
    }

    /// `[a_0, a_1..a_K, b_1..b_K]`
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![self.a0];
        v.extend(&self.cos);
        v.extend(&self.sin);
        v
    }

    pub fn from_slice(v: &[f64]) -> Self {
        let k = (v.len() - 1) / 2;
        FourierSeries {
            a0: v[0],
            cos: v[1..=k].to_vec(),
            sin: v[k + 1..=2 * k].to_vec(),
        }
    }
}

/// Star-shaped inclusions `A_i = x_i + {s·exp(ψ_i(θ))ν(θ)}` with values
/// `κ_1..κ_N` and background `κ_{N+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct StarShapeSpec {
    pub centers: Vec<[f64; 2]>,
    pub radial: Vec<FourierSeries>,
    pub kappas: Vec<f64>,
}

impl StarShapeSpec {
    pub fn validate(&self) -> Result<(), PriorError> {
        if self.radial.len() != self.centers.len() || self.kappas.len() != self.centers.len() + 1 {
            return Err(PriorError::InvalidStarShape(
                "need one radial function per centre and N+1 kappas".into(),
            ));
        }
        if self.centers.iter().any(|c| c[0].hypot(c[1]) >= 1.0) {
            return Err(PriorError::InvalidStarShape("centre outside the domain".into()));
        }
        if self.kappas.iter().any(|&k| !(k > 0.0)) {
            return Err(PriorError::InvalidStarShape("kappa must be positive".into()));
        }
        Ok(())
    }

    /// Value at `x`: the first inclusion containing it, else background.
    pub fn value_at(&self, x: [f64; 2]) -> f64 {
        for (i, (c, psi)) in self.centers.iter().zip(&self.radial).enumerate() {
            let (dx, dy) = (x[0] - c[0], x[1] - c[1]);
            let r = dx.hypot(dy);
            if r <= psi.eval(dy.atan2(dx)).exp() {
                return self.kappas[i];
            }
        }
        self.kappas[self.centers.len()]
    }
}

/// Per-triangle field with triangle values decided by centroid membership.
pub fn star_shape_map(mesh: &TriMesh, spec: &StarShapeSpec) -> Result<ParamField, PriorError> {
    spec.validate()?;
    Ok(ParamField::per_triangle(
        FieldKind::QpatAbsorption,
        centroids(mesh).into_iter().map(|c| spec.value_at(c)).collect(),
    ))
}

/// Independent Gaussian coefficients: `a_k, b_k ~ N(0, k^{-2·decay})`,
/// `a_0 ~ N(0, const_std²)`.
pub fn sample_star_prior<R: Rng + ?Sized>(
    order: usize,
    decay: f64,
    const_std: f64,
    rng: &mut R,
) -> FourierSeries {
    let a0 = const_std * rng.sample::<f64, _>(StandardNormal);
    let mut cos = Vec::with_capacity(order);
    let mut sin = Vec::with_capacity(order);
    for k in 1..=order {
        let sd = (k as f64).powf(-decay);
        cos.push(sd * rng.sample::<f64, _>(StandardNormal));
        sin.push(sd * rng.sample::<f64, _>(StandardNormal));
    }
    FourierSeries { a0, cos, sin }
}

/// Variances of the coefficient vector layout `[a_0, a_1..a_K, b_1..b_K]`.
pub fn star_prior_variances(order: usize, decay: f64, const_std: f64) -> Vec<f64> {
    let mut v = vec![const_std * const_std];
    let tail: Vec<f64> = (1..=order).map(|k| (k as f64).powf(-2.0 * decay)).collect();
    v.extend(&tail);
    v.extend(&tail);
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_disk_mesh;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bessel_reference_values() {
        // Abramowitz & Stegun tables.
        let cases = [
            (0.0, 1.0, 0.421_024_438_240_708_3),
            (1.0, 1.0, 0.601_907_230_197_234_6),
            (0.0, 0.1, 2.427_069_024_702_017),
            (1.0, 2.0, 0.139_865_881_816_522_4),
            (0.0, 5.0, 0.003_691_098_334_042_594),
            (2.0, 1.0, 1.624_838_898_635_177_5),
            (3.0, 1.0, 7.101_262_824_737_944),
        ];
        for (nu, x, want) in cases {
            let got = bessel_k(nu, x);
            assert!((got - want).abs() / want < 1e-12, "K_{nu}({x}) = {got}, want {want}");
        }
        // Half-integer closed form K_{1/2}(x) = sqrt(pi/(2x)) e^{-x}.
        for x in [0.05, 0.7, 1.9, 2.1, 9.0] {
            let want = (PI / (2.0 * x)).sqrt() * (-x).exp();
            assert!((bessel_k(0.5, x) - want).abs() / want < 1e-13);
        }
    }

    #[test]
    fn matern_closed_forms() {
        assert_eq!(matern(0.0, MaternParams { nu: 3.0, ell: 0.4 }), 1.0);
        let ell = 0.7;
        for d in [0.01, 0.3, 1.0, 2.5] {
            let half = matern(d, MaternParams { nu: 0.5, ell });
            assert!((half - (-d / ell).exp()).abs() < 1e-13);
        }
        let p = MaternParams { nu: 1.5, ell: 0.4 };
        let want = (1.0 + 3f64.sqrt()) * (-(3f64.sqrt())).exp();
        assert!((matern(0.4, p) - want).abs() < 1e-13);
        let p = MaternParams { nu: 2.5, ell: 1.0 };
        let d: f64 = 0.8;
        let s = 5f64.sqrt() * d;
        let want = (1.0 + s + s * s / 3.0) * (-s).exp();
        assert!((matern(d, p) - want).abs() < 1e-13);
    }

    #[test]
    fn matern_nonincreasing() {
        for nu in [0.5, 1.5, 3.0, 4.2] {
            for ell in [0.2, 0.4, 1.0] {
                let p = MaternParams { nu, ell };
                let mut prev = 1.0;
                for i in 0..=200 {
                    let d = 5.0 * ell * i as f64 / 200.0;
                    let k = matern(d, p);
                    assert!(k <= prev + 1e-15, "nu={nu} ell={ell} d={d}");
                    prev = k;
                }
            }
        }
    }

    #[test]
    fn single_point_prior() {
        let pr = build_prior(&[[0.1, 0.2]], MaternParams::default(), 0.0).unwrap();
        assert_eq!(pr.cov[(0, 0)], 1.0);
        assert_eq!(pr.chol[(0, 0)], 1.0);
        assert_eq!(pr.jitter, 0.0);
    }

    #[test]
    fn coincident_points_need_jitter() {
        let pr = build_prior(&[[0.3, 0.3], [0.3, 0.3]], MaternParams::default(), 0.0).unwrap();
        assert!(pr.jitter > 0.0);
    }

    #[test]
    fn random_points_prior() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<[f64; 2]> = (0..100)
            .map(|_| loop {
                let p = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                if p[0] * p[0] + p[1] * p[1] < 1.0 {
                    break p;
                }
            })
            .collect();
        let pr = build_prior(&pts, MaternParams::new(3.0, 0.4).unwrap(), 0.0).unwrap();
        let full = pr.cov_with_jitter();
        for i in 0..100 {
            assert_eq!(full[(i, i)], 1.0 + pr.jitter);
            for j in 0..100 {
                assert!(pr.cov[(i, j)] > 0.0 && pr.cov[(i, j)] <= 1.0);
                assert_eq!(pr.cov[(i, j)], pr.cov[(j, i)]);
            }
        }
        let rec = &pr.chol * pr.chol.transpose();
        let resid = (&rec - &full).norm() / full.norm();
        assert!(resid < 1e-8);
        for i in 0..100 {
            for j in i + 1..100 {
                assert_eq!(pr.chol[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn block_draws_match_single_draws() {
        let mesh = build_disk_mesh(3).unwrap();
        let pr = build_prior(&mesh.nodes, MaternParams::default(), 0.0).unwrap();
        let mut single = ChaCha8Rng::seed_from_u64(4);
        let mut block = BlockSampler::new(ChaCha8Rng::seed_from_u64(4));
        // spans a block boundary
        for _ in 0..DRAW_BLOCK + 3 {
            let a = pr.sample(&mut single);
            let b = block.next_draw(&pr);
            let scale = a.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            let err = a.iter().zip(&b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
            assert!(err <= 1e-12 * scale, "{err}");
        }
    }

    #[test]
    fn sampling_deterministic() {
        let pr = build_prior(&[[0.0, 0.0], [0.5, 0.0]], MaternParams::default(), 0.0).unwrap();
        let a = pr.sample(&mut ChaCha8Rng::seed_from_u64(4));
        let b = pr.sample(&mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(a, b);
    }

    #[test]
    fn level_set_bands() {
        let one = LevelSetSpec::new(vec![-1.0, 1.0], vec![2.5]).unwrap();
        assert_eq!(one.value(-100.0), 2.5);
        assert_eq!(one.value(0.3), 2.5);
        let two = LevelSetSpec::new(vec![-10.0, 0.0, 10.0], vec![1.0, 2.0]).unwrap();
        assert_eq!(two.value(-5.0), 1.0);
        assert_eq!(two.value(0.0), 2.0);
        assert_eq!(two.value(11.0), 2.0);
        assert_eq!(two.value(-11.0), 1.0);
        assert!(LevelSetSpec::new(vec![0.0, 0.0, 1.0], vec![1.0, 2.0]).is_err());
        assert!(LevelSetSpec::new(vec![0.0, 1.0], vec![-1.0]).is_err());
    }

    #[test]
    fn level_set_midpoint_gives_first_band() {
        let spec = LevelSetSpec::new(vec![0.0, 1.0, 2.0], vec![1.0, 3.0]).unwrap();
        let w = ParamField::per_triangle(FieldKind::Latent, vec![0.5; 7]);
        let s = level_set_map(&w, &spec).unwrap();
        assert!(s.values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn star_shape_unit_and_empty() {
        let mesh = build_disk_mesh(3).unwrap();
        let spec = StarShapeSpec {
            centers: vec![[0.0, 0.0]],
            radial: vec![FourierSeries::constant(0.0)],
            kappas: vec![0.15, 0.05],
        };
        let f = star_shape_map(&mesh, &spec).unwrap();
        assert!(f.values.iter().all(|&v| v == 0.15));
        let none = StarShapeSpec {
            centers: vec![],
            radial: vec![],
            kappas: vec![0.05],
        };
        let f = star_shape_map(&mesh, &none).unwrap();
        assert!(f.values.iter().all(|&v| v == 0.05));
    }

    #[test]
    fn star_shape_disk_area() {
        let mesh = build_disk_mesh(3).unwrap();
        let spec = StarShapeSpec {
            centers: vec![[0.0, 0.0]],
            radial: vec![FourierSeries::constant(0.3f64.ln())],
            kappas: vec![0.15, 0.05],
        };
        let f = star_shape_map(&mesh, &spec).unwrap();
        let area: f64 = (0..mesh.tri_count())
            .filter(|&t| f.values[t] == 0.15)
            .map(|t| mesh.signed_area(t))
            .sum();
        let want = PI * 0.09;
        assert!((area - want).abs() / want < 0.05, "{area} vs {want}");
    }

    #[test]
    fn star_prior_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 10_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| sample_star_prior(4, 2.0, 1.0, &mut rng).cos[1])
            .collect();
        let var = draws.iter().map(|v| v * v).sum::<f64>() / n as f64;
        let want = 2f64.powi(-4);
        assert!((var - want).abs() / want < 0.1, "{var}");
        let a = sample_star_prior(3, 2.0, 1.0, &mut ChaCha8Rng::seed_from_u64(9));
        let b = sample_star_prior(3, 2.0, 1.0, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        let c = sample_star_prior(0, 2.0, 1.0, &mut rng);
        let r0 = c.eval(0.0);
        assert!((0..10).all(|i| c.eval(i as f64) == r0));
    }

    #[test]
    fn fourier_vec_round_trip() {
        let s = FourierSeries {
            a0: 0.1,
            cos: vec![1.0, 2.0],
            sin: vec![3.0, 4.0],
        };
        assert_eq!(FourierSeries::from_slice(&s.to_vec()), s);
    }
}
