//! Post-processing of chains: reconstructions, credible bounds, error
//! metrics, Hellinger and L²(μ) estimates, and the timing study.

use std::io::Write;
use std::time::Instant;

use rand::Rng;
use thiserror::Error;

use crate::fem::{ParamField, ProblemKind};
use crate::mcmc::{mean_of, run_chain, BackendError, BackendKind, Chain, ForwardBackend, McmcError, PcnConfig};
use crate::prior::GaussianPrior;
use crate::problem::{FemBackend, Phantom, Problem, ProblemConfig, ProblemError, SurrogateBackend};
use crate::surrogate::{Architecture, SurrogateError, SurrogateNet};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("chain has no samples")]
    EmptyChain,
    #[error("credible level {0} outside (0, 0.5)")]
    InvalidLevel(f64),
    #[error("support mismatch: expected {expected} values, got {got}")]
    SupportMismatch { expected: usize, got: usize },
    #[error("need at least {min} samples, got {got}")]
    TooFewSamples { min: usize, got: usize },
    #[error("potential is NaN at draw {0}")]
    NonFinitePotential(usize),
    #[error("both posterior normalizers underflow to zero")]
    Underflow,
    #[error("scaling study needs at least 3 refinement levels, got {0}")]
    TooFewLevels(usize),
    #[error("scaling study failed at refinement {level}: {message}")]
    Level { level: u32, message: String },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Mcmc(#[from] McmcError),
    #[error(transparent)]
    Surrogate(#[from] SurrogateError),
}

/// Linearly interpolated quantile of sorted data (type 7).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Per-element `level` and `1 − level` quantiles of mapped samples.
pub fn credible_bounds<F>(samples: &[Vec<f64>], map: F, level: f64) -> Result<(Vec<f64>, Vec<f64>), AnalysisError>
where
    F: Fn(&[f64]) -> Result<Vec<f64>, AnalysisError>,
{
    if !(level > 0.0 && level < 0.5) {
        return Err(AnalysisError::InvalidLevel(level));
    }
    let mapped = samples.iter().map(|s| map(s)).collect::<Result<Vec<_>, _>>()?;
    let first = mapped.first().ok_or(AnalysisError::EmptyChain)?;
    let n = first.len();
    if let Some(bad) = mapped.iter().find(|m| m.len() != n) {
        return Err(AnalysisError::SupportMismatch {
            expected: n,
            got: bad.len(),
        });
    }
    let mut column = vec![0.0; mapped.len()];
    let (mut lower, mut upper) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for e in 0..n {
        column.iter_mut().zip(&mapped).for_each(|(c, m)| *c = m[e]);
        column.sort_by(f64::total_cmp);
        lower.push(quantile_sorted(&column, level));
        upper.push(quantile_sorted(&column, 1.0 - level));
    }
    Ok((lower, upper))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ErrorReport {
    pub mae: f64,
    pub mse: f64,
    pub linf: f64,
    pub inv_time_seconds: f64,
}

impl ErrorReport {
    pub const CSV_HEADER: &'static str = "mae,mse,linf,mse_over_mae,inv_time_seconds";

    /// `mae,mse,linf,mse_over_mae,inv_time_seconds`
    pub fn csv_row(&self) -> String {
        let ratio = if self.mae > 0.0 { self.mse / self.mae } else { 0.0 };
        format!(
            "{:e},{:e},{:e},{:e},{:e}",
            self.mae, self.mse, self.linf, ratio, self.inv_time_seconds
        )
    }
}

pub fn error_metrics(recon: &[f64], truth: &[f64]) -> Result<ErrorReport, AnalysisError> {
    if recon.len() != truth.len() || recon.is_empty() {
        return Err(AnalysisError::SupportMismatch {
            expected: truth.len(),
            got: recon.len(),
        });
    }
    let n = recon.len() as f64;
    let (mut abs, mut sq, mut max) = (0.0, 0.0, 0.0f64);
    for (r, t) in recon.iter().zip(truth) {
        let d = (r - t).abs();
        abs += d;
        sq += d * d;
        max = max.max(d);
    }
    Ok(ErrorReport {
        mae: abs / n,
        mse: sq / n,
        linf: max,
        inv_time_seconds: 0.0,
    })
}

/// MAE over the elements where `mask` holds.
pub fn masked_mae(recon: &[f64], truth: &[f64], mask: &[bool]) -> f64 {
    let (sum, count) = recon
        .iter()
        .zip(truth)
        .zip(mask)
        .filter(|(_, &m)| m)
        .fold((0.0, 0usize), |(s, c), ((r, t), _)| (s + (r - t).abs(), c + 1));
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub field: ParamField,
    pub lower: ParamField,
    pub upper: ParamField,
    pub problem: ProblemKind,
    pub backend: BackendKind,
    pub seconds: f64,
}

/// Posterior mean mapped to the physical field, with credible bounds of the
/// mapped samples.
pub fn reconstruct(
    problem: &Problem,
    chain: &Chain,
    backend: BackendKind,
    level: f64,
) -> Result<Reconstruction, AnalysisError> {
    let mean = mean_of(&chain.samples).map_err(|_| AnalysisError::EmptyChain)?;
    let field = problem.latent_to_field(&mean)?;
    let (lower, upper) = credible_bounds(&chain.samples, |q| Ok(problem.latent_to_field(q)?.values), level)?;
    let kind = field.kind;
    Ok(Reconstruction {
        field,
        lower: ParamField::per_triangle(kind, lower),
        upper: ParamField::per_triangle(kind, upper),
        problem: problem.kind(),
        backend,
        seconds: chain.wall_time,
    })
}

/// `element_id,x_centroid,y_centroid,value`
pub fn write_field_csv<W: Write>(centroids: &[[f64; 2]], values: &[f64], mut w: W) -> std::io::Result<()> {
    writeln!(w, "element_id,x_centroid,y_centroid,value")?;
    for (i, (c, v)) in centroids.iter().zip(values).enumerate() {
        writeln!(w, "{i},{:e},{:e},{:e}", c[0], c[1], v)?;
    }
    Ok(())
}

/// Hellinger distance between the posteriors with potentials `phi` and
/// `phi_theta` evaluated on the same prior draws (self-normalized).
pub fn hellinger_from_potentials(phi: &[f64], phi_theta: &[f64]) -> Result<f64, AnalysisError> {
    if phi.len() != phi_theta.len() {
        return Err(AnalysisError::SupportMismatch {
            expected: phi.len(),
            got: phi_theta.len(),
        });
    }
    if let Some(i) = phi.iter().zip(phi_theta).position(|(a, b)| a.is_nan() || b.is_nan()) {
        return Err(AnalysisError::NonFinitePotential(i));
    }
    let weights = |p: &[f64]| -> Option<Vec<f64>> {
        let m = p.iter().copied().fold(f64::INFINITY, f64::min);
        if !m.is_finite() {
            return None;
        }
        let w: Vec<f64> = p.iter().map(|v| (m - v).exp()).collect();
        let z = w.iter().sum::<f64>() / w.len() as f64;
        Some(w.into_iter().map(|v| (v / z).sqrt()).collect())
    };
    let (a, b) = match (weights(phi), weights(phi_theta)) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(AnalysisError::Underflow),
    };
    let h2 = 0.5 * a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64;
    Ok(h2.sqrt())
}

pub const MIN_HELLINGER_SAMPLES: usize = 100;

/// Monte Carlo Hellinger distance between the posteriors with potentials
/// `phi` and `phi_theta` under `prior`.
pub fn hellinger_estimate<R, F, G>(
    prior: &GaussianPrior,
    phi: F,
    phi_theta: G,
    n_samples: usize,
    rng: &mut R,
) -> Result<f64, AnalysisError>
where
    R: Rng + ?Sized,
    F: Fn(&[f64]) -> Result<f64, AnalysisError>,
    G: Fn(&[f64]) -> Result<f64, AnalysisError>,
{
    if n_samples < MIN_HELLINGER_SAMPLES {
        return Err(AnalysisError::TooFewSamples {
            min: MIN_HELLINGER_SAMPLES,
            got: n_samples,
        });
    }
    let (mut p, mut pt) = (Vec::with_capacity(n_samples), Vec::with_capacity(n_samples));
    for _ in 0..n_samples {
        let w = prior.sample(rng);
        p.push(phi(&w)?);
        pt.push(phi_theta(&w)?);
    }
    hellinger_from_potentials(&p, &pt)
}

/// Root mean squared Frobenius mismatch of two backends over given draws.
pub fn l2mu_error_on(
    draws: &[Vec<f64>],
    exact: &dyn ForwardBackend,
    approx: &dyn ForwardBackend,
) -> Result<f64, AnalysisError> {
    if draws.is_empty() {
        return Err(AnalysisError::TooFewSamples { min: 1, got: 0 });
    }
    let mut total = 0.0;
    for q in draws {
        let (a, b) = (exact.evaluate(q)?, approx.evaluate(q)?);
        if a.data.len() != b.data.len() {
            return Err(AnalysisError::SupportMismatch {
                expected: a.data.len(),
                got: b.data.len(),
            });
        }
        total += a.data.iter().zip(&b.data).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    }
    Ok((total / draws.len() as f64).sqrt())
}

/// L²(μ) surrogate error over `n_samples` fresh prior draws.
pub fn surrogate_l2mu_error<R: Rng + ?Sized>(
    exact: &dyn ForwardBackend,
    approx: &dyn ForwardBackend,
    prior: &GaussianPrior,
    n_samples: usize,
    rng: &mut R,
) -> Result<f64, AnalysisError> {
    let draws: Vec<Vec<f64>> = (0..n_samples).map(|_| prior.sample(rng)).collect();
    l2mu_error_on(&draws, exact, approx)
}

/// Average ranks (ties share the mean rank).
fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        idx[i..=j].iter().for_each(|&k| r[k] = avg);
        i = j + 1;
    }
    r
}

/// Spearman rank correlation; NaN if either input is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "spearman needs paired data");
    let (rx, ry) = (ranks(x), ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

/// Standard error of the mean of a correlated series by non-overlapping
/// batch means.
pub fn batch_means_se(series: &[f64], batches: usize) -> f64 {
    let size = series.len() / batches;
    assert!(size >= 2, "too few values per batch");
    let means: Vec<f64> = series
        .chunks_exact(size)
        .take(batches)
        .map(|c| c.iter().sum::<f64>() / size as f64)
        .collect();
    let m = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|b| (b - m).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (var / batches as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingRow {
    pub refinement: u32,
    pub dim: usize,
    pub fem_seconds: f64,
    pub net_seconds: f64,
}

/// Identical chains timed per backend and level; the fastest run is kept.
pub const SCALING_REPEATS: usize = 3;

/// Times fixed-length chains with the FEM and an (untrained) surrogate of
/// the given width at each refinement level.
pub fn scaling_study(
    base: &ProblemConfig,
    levels: &[u32],
    iterations: usize,
    channels: usize,
    seed: u64,
) -> Result<Vec<ScalingRow>, AnalysisError> {
    if levels.len() < 3 {
        return Err(AnalysisError::TooFewLevels(levels.len()));
    }
    levels
        .iter()
        .map(|&level| {
            scaling_level(base, level, iterations, channels, seed).map_err(|e| AnalysisError::Level {
                level,
                message: e.to_string(),
            })
        })
        .collect()
}

fn scaling_level(
    base: &ProblemConfig,
    level: u32,
    iterations: usize,
    channels: usize,
    seed: u64,
) -> Result<ScalingRow, AnalysisError> {
    use rand::SeedableRng;
    let cfg = ProblemConfig {
        refinement: level,
        ..base.clone()
    };
    let problem = Problem::new(cfg)?;
    let y = problem.forward_input(&problem.phantom_input(&crate::problem::single_circle())?)?;
    let pcn = PcnConfig {
        burn_in: 0,
        samples: iterations,
        noise_sigma: 0.01 * y.rms().max(f64::MIN_POSITIVE),
        seed,
        ..PcnConfig::default()
    };
    let q0 = vec![0.0; problem.latent_dim()];
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let net = SurrogateNet::he_init(Architecture::new(problem.input_dim(), channels), &mut rng)
?;
    let time = |backend: &dyn ForwardBackend| -> Result<f64, AnalysisError> {
        let mut best = f64::INFINITY;
        for _ in 0..SCALING_REPEATS {
            let t = Instant::now();
            run_chain(&pcn, &problem.prior, backend, &y, &q0).map_err(|f| f.error)?;
            best = best.min(t.elapsed().as_secs_f64());
        }
        Ok(best)
    };
    let fem_seconds = time(&FemBackend::new(&problem))?;
    let net_seconds = time(&SurrogateBackend::new(&problem, net))?;
    Ok(ScalingRow {
        refinement: level,
        dim: problem.latent_dim(),
        fem_seconds,
        net_seconds,
    })
}

/// `dim,fem_seconds,net_seconds`
pub fn write_scaling_csv<W: Write>(rows: &[ScalingRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "dim,fem_seconds,net_seconds")?;
    for r in rows {
        writeln!(w, "{},{:e},{:e}", r.dim, r.fem_seconds, r.net_seconds)?;
    }
    Ok(())
}

/// Field of a phantom on the reconstruction mesh, and which elements lie
/// inside its anomaly.
pub fn phantom_truth(problem: &Problem, phantom: &Phantom) -> Result<(ParamField, Vec<bool>), AnalysisError> {
    let field = problem.phantom_field(phantom)?;
    let background = problem.phantom_field(&Phantom::Circles(Vec::new()))?;
    let mask = field.values.iter().zip(&background.values).map(|(a, b)| a != b).collect();
    Ok((field, mask))
}
