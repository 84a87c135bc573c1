//! Preconditioned Crank–Nicolson sampling over a latent vector with a
//! pluggable forward backend.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::fem::{FemError, Measurement, ProblemKind};
use crate::prior::{BlockSampler, GaussianPrior, PriorError};
use crate::surrogate::SurrogateError;

pub const MIN_DELTA: f64 = 1e-6;
pub const MAX_DELTA: f64 = 0.5 - 1e-6;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Surrogate(#[from] SurrogateError),
    #[error(transparent)]
    Prior(#[from] PriorError),
    #[error("latent has {got} entries, backend expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("measurement shape {got:?} does not match observation {expected:?}")]
    Shape {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Error)]
pub enum McmcError {
    #[error("invalid sampler configuration: {0}")]
    Config(String),
    #[error("initial state has {got} entries, prior has {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("chain holds no samples")]
    EmptyChain,
    #[error("backend failed at iteration {iteration}: {source}")]
    Backend {
        iteration: usize,
        #[source]
        source: BackendError,
    },
    #[error("malformed chain file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    Fem,
    Surrogate,
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendKind::Fem => "fem",
            BackendKind::Surrogate => "surrogate",
        })
    }
}

/// Thread-safe evaluation counter shared by backends.
#[derive(Debug, Default)]
pub struct EvalCounter(AtomicU64);

impl EvalCounter {
    pub fn bump(&self) {
        self.0.fetch_add(1, Ordering::Relaxed);
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.0.store(0, Ordering::Relaxed);
    }
}

/// Forward map from latent vector to predicted measurement.
pub trait ForwardBackend: Send + Sync {
    /// Deterministic in `q`; counts one evaluation per call.
    fn evaluate(&self, q: &[f64]) -> Result<Measurement, BackendError>;
    fn kind(&self) -> BackendKind;
    fn eval_count(&self) -> u64;
}

/// `G(q) = A q` reshaped to `rows × cols`.
#[derive(Debug)]
pub struct LinearBackend {
    /// Row-major `(rows·cols) × dim`.
    pub matrix: Vec<f64>,
    pub dim: usize,
    pub rows: usize,
    pub cols: usize,
    counter: EvalCounter,
}

impl LinearBackend {
    pub fn new(matrix: Vec<f64>, dim: usize, rows: usize, cols: usize) -> Self {
        assert_eq!(matrix.len(), rows * cols * dim);
        LinearBackend {
            matrix,
            dim,
            rows,
            cols,
            counter: EvalCounter::default(),
        }
    }
}

impl ForwardBackend for LinearBackend {
    fn evaluate(&self, q: &[f64]) -> Result<Measurement, BackendError> {
        if q.len() != self.dim {
            return Err(BackendError::Dimension {
                expected: self.dim,
                got: q.len(),
            });
        }
        self.counter.bump();
        let data = self.matrix.chunks(self.dim).map(|row| crate::sparse::dot(row, q)).collect();
        Ok(Measurement::new(ProblemKind::Eit, self.rows, self.cols, data))
    }

    fn kind(&self) -> BackendKind {
        BackendKind::Fem
    }

    fn eval_count(&self) -> u64 {
        self.counter.get()
    }
}

/// Output independent of the latent: the posterior equals the prior.
#[derive(Debug)]
pub struct ConstantBackend {
    pub output: Measurement,
    pub dim: usize,
    counter: EvalCounter,
}

impl ConstantBackend {
    pub fn new(output: Measurement, dim: usize) -> Self {
        ConstantBackend {
            output,
            dim,
            counter: EvalCounter::default(),
        }
    }
}

impl ForwardBackend for ConstantBackend {
    fn evaluate(&self, q: &[f64]) -> Result<Measurement, BackendError> {
        if q.len() != self.dim {
            return Err(BackendError::Dimension {
                expected: self.dim,
                got: q.len(),
            });
        }
        self.counter.bump();
        Ok(self.output.clone())
    }

    fn kind(&self) -> BackendKind {
        BackendKind::Fem
    }

    fn eval_count(&self) -> u64 {
        self.counter.get()
    }
}

/// `‖y_obs − model‖²_F`.
pub fn misfit(y_obs: &Measurement, model: &Measurement) -> Result<f64, BackendError> {
    if (y_obs.rows, y_obs.cols) != (model.rows, model.cols) {
        return Err(BackendError::Shape {
            expected: (y_obs.rows, y_obs.cols),
            got: (model.rows, model.cols),
        });
    }
    Ok(y_obs.data.iter().zip(&model.data).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// `L(q) = −‖y_obs − G(q)‖²_F / (2σ²)`.
pub fn log_likelihood(
    y_obs: &Measurement,
    backend: &dyn ForwardBackend,
    q: &[f64],
    sigma: f64,
) -> Result<f64, BackendError> {
    if !(sigma > 0.0) {
        return Err(BackendError::Other(format!("noise sigma must be positive, got {sigma}")));
    }
    let model = backend.evaluate(q)?;
    Ok(-misfit(y_obs, &model)? / (2.0 * sigma * sigma))
}

/// Current point of a chain and its log-likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct PcnState {
    pub q: Vec<f64>,
    pub loglik: f64,
}

/// One pCN transition. Draws the prior sample first, then the uniform.
#[allow(clippy::too_many_arguments)]
pub fn pcn_step<R: Rng + ?Sized>(
    state: &PcnState,
    prior: &GaussianPrior,
    backend: &dyn ForwardBackend,
    y_obs: &Measurement,
    sigma: f64,
    delta: f64,
    rng: &mut R,
) -> Result<(PcnState, bool), BackendError> {
    let xi = prior.sample(rng);
    let u: f64 = rng.random();
    pcn_move(state, &xi, u, backend, y_obs, sigma, delta)
}

/// The pCN move for a given prior draw `xi` and uniform `u`.
pub fn pcn_move(
    state: &PcnState,
    xi: &[f64],
    u: f64,
    backend: &dyn ForwardBackend,
    y_obs: &Measurement,
    sigma: f64,
    delta: f64,
) -> Result<(PcnState, bool), BackendError> {
    debug_assert!(delta > 0.0 && delta < 0.5);
    let a = (1.0 - 2.0 * delta).sqrt();
    let b = (2.0 * delta).sqrt();
    let proposal: Vec<f64> = state.q.iter().zip(xi).map(|(q, x)| a * q + b * x).collect();
    let loglik = log_likelihood(y_obs, backend, &proposal, sigma)?;
    let log_alpha = loglik - state.loglik;
    if log_alpha >= 0.0 || u < log_alpha.exp() {
        Ok((PcnState { q: proposal, loglik }, true))
    } else {
        Ok((state.clone(), false))
    }
}

/// Multiplicative step-size update toward the target acceptance rate.
pub fn adapt_delta(delta: f64, rate: f64, target: f64) -> f64 {
    (delta * (rate - target).exp()).clamp(MIN_DELTA, MAX_DELTA)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcnConfig {
    pub delta: f64,
    pub target_accept: f64,
    pub adapt_window: usize,
    pub burn_in: usize,
    pub samples: usize,
    /// Keep every `thin`-th post-burn-in state.
    pub thin: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for PcnConfig {
    fn default() -> Self {
        PcnConfig {
            delta: 0.05,
            target_accept: 0.25,
            adapt_window: 100,
            burn_in: 5000,
            samples: 5000,
            thin: 1,
            noise_sigma: 1e-2,
            seed: 0,
        }
    }
}

impl PcnConfig {
    pub fn validate(&self) -> Result<(), McmcError> {
        let bad = |m: String| Err(McmcError::Config(m));
        if !(self.delta > 0.0 && self.delta < 0.5) {
            return bad(format!("delta must lie in (0, 1/2), got {}", self.delta));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return bad(format!("target_accept must lie in (0, 1), got {}", self.target_accept));
        }
        if self.adapt_window == 0 || self.thin == 0 {
            return bad("adapt_window and thin must be positive".into());
        }
        if !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma must be positive, got {}", self.noise_sigma));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Chain {
    pub dim: usize,
    pub samples: Vec<Vec<f64>>,
    /// Log-likelihood of the current state after each iteration.
    pub loglik_trace: Vec<f64>,
    pub accept_flags: Vec<bool>,
    /// `(iteration, Δ)` with the initial value at iteration 0.
    pub delta_history: Vec<(usize, f64)>,
    pub burn_in: usize,
    pub wall_time: f64,
}

impl Chain {
    pub fn iterations(&self) -> usize {
        self.accept_flags.len()
    }

    /// Step size in force at `iteration` (1-based).
    pub fn delta_at(&self, iteration: usize) -> f64 {
        self.delta_history
            .iter()
            .take_while(|(i, _)| *i < iteration)
            .last()
            .map_or(f64::NAN, |&(_, d)| d)
    }

    /// Acceptance rate over iterations `from..to` (0-based, half-open).
    pub fn acceptance_rate(&self, from: usize, to: usize) -> f64 {
        let s = &self.accept_flags[from.min(to)..to];
        if s.is_empty() {
            return f64::NAN;
        }
        s.iter().filter(|&&a| a).count() as f64 / s.len() as f64
    }

    pub fn post_burn_in_acceptance(&self) -> f64 {
        self.acceptance_rate(self.burn_in.min(self.iterations()), self.iterations())
    }

    pub fn thinned(&self, every: usize) -> Chain {
        Chain {
            samples: self.samples.iter().step_by(every.max(1)).cloned().collect(),
            ..self.clone()
        }
    }

    /// `iter,loglik,accepted,delta`
    pub fn write_trace_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "iter,loglik,accepted,delta")?;
        let mut hist = self.delta_history.iter().peekable();
        let mut delta = f64::NAN;
        for (i, (l, a)) in self.loglik_trace.iter().zip(&self.accept_flags).enumerate() {
            let it = i + 1;
            while let Some(&&(at, d)) = hist.peek() {
                if at < it {
                    delta = d;
                    hist.next();
                } else {
                    break;
                }
            }
            writeln!(w, "{it},{l:?},{},{delta:?}", u8::from(*a))?;
        }
        Ok(())
    }

    /// `u64 dim, u64 count`, then samples as little-endian doubles.
    pub fn write_samples<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(&(self.dim as u64).to_le_bytes())?;
        w.write_all(&(self.samples.len() as u64).to_le_bytes())?;
        for s in &self.samples {
            for v in s {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Writes `trace.csv` and `samples.bin` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<(), McmcError> {
        std::fs::create_dir_all(dir)?;
        let mut t = BufWriter::new(File::create(dir.join("trace.csv"))?);
        self.write_trace_csv(&mut t)?;
        t.flush()?;
        let mut s = BufWriter::new(File::create(dir.join("samples.bin"))?);
        self.write_samples(&mut s)?;
        s.flush()?;
        Ok(())
    }
}

/// Reads a sample store written by [`Chain::write_samples`].
pub fn read_samples<R: Read>(mut r: R) -> Result<Vec<Vec<f64>>, McmcError> {
    let mut b8 = [0u8; 8];
    let mut next = |r: &mut R, what: &str| -> Result<[u8; 8], McmcError> {
        r.read_exact(&mut b8)
            .map_err(|_| McmcError::Format(format!("truncated while reading {what}")))?;
        Ok(b8)
    };
    let dim = u64::from_le_bytes(next(&mut r, "dim")?) as usize;
    let count = u64::from_le_bytes(next(&mut r, "count")?) as usize;
    let mut out = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let mut s = Vec::with_capacity(dim);
        for _ in 0..dim {
            s.push(f64::from_le_bytes(next(&mut r, "samples")?));
        }
        out.push(s);
    }
    Ok(out)
}

pub fn read_samples_file(path: &Path) -> Result<Vec<Vec<f64>>, McmcError> {
    read_samples(BufReader::new(File::open(path)?))
}

/// A failed run together with everything recorded before the failure.
#[derive(Debug)]
pub struct ChainFailure {
    pub error: McmcError,
    pub partial: Chain,
}

impl fmt::Display for ChainFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (after {} iterations)", self.error, self.partial.iterations())
    }
}

impl std::error::Error for ChainFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<McmcError> for ChainFailure {
    fn from(error: McmcError) -> Self {
        ChainFailure {
            error,
            partial: Chain::default(),
        }
    }
}

/// Runs `burn_in + samples` pCN iterations from `q0`.
#[allow(clippy::result_large_err)]
pub fn run_chain(
    cfg: &PcnConfig,
    prior: &GaussianPrior,
    backend: &dyn ForwardBackend,
    y_obs: &Measurement,
    q0: &[f64],
) -> Result<Chain, ChainFailure> {
    cfg.validate()?;
    if q0.len() != prior.dim() {
        return Err(McmcError::Dimension {
            expected: prior.dim(),
            got: q0.len(),
        }
        .into());
    }
    let start = Instant::now();
    let total = cfg.burn_in + cfg.samples;
    let mut chain = Chain {
        dim: q0.len(),
        burn_in: cfg.burn_in,
        delta_history: vec![(0, cfg.delta)],
        ..Chain::default()
    };
    chain.loglik_trace.reserve(total);
    chain.accept_flags.reserve(total);
    let fail = |chain: Chain, iteration: usize, source: BackendError, start: Instant| {
        let mut partial = chain;
        partial.wall_time = start.elapsed().as_secs_f64();
        ChainFailure {
            error: McmcError::Backend { iteration, source },
            partial,
        }
    };
    // proposals and accept/reject uniforms come from separate streams so that
    // prior draws can be computed in blocks
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut draw_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    draw_rng.set_stream(1);
    let mut draws = BlockSampler::new(draw_rng);
    let loglik = match log_likelihood(y_obs, backend, q0, cfg.noise_sigma) {
        Ok(l) => l,
        Err(e) => return Err(fail(chain, 0, e, start)),
    };
    let mut state = PcnState { q: q0.to_vec(), loglik };
    let mut delta = cfg.delta;
    let mut window_accepts = 0usize;
    for it in 1..=total {
        let xi = draws.next_draw(prior);
        let u: f64 = rng.random();
        let (next, accepted) = match pcn_move(&state, &xi, u, backend, y_obs, cfg.noise_sigma, delta) {
            Ok(r) => r,
            Err(e) => return Err(fail(chain, it, e, start)),
        };
        state = next;
        chain.loglik_trace.push(state.loglik);
        chain.accept_flags.push(accepted);
        window_accepts += usize::from(accepted);
        if it <= cfg.burn_in && it % cfg.adapt_window == 0 {
            let rate = window_accepts as f64 / cfg.adapt_window as f64;
            delta = adapt_delta(delta, rate, cfg.target_accept);
            chain.delta_history.push((it, delta));
            window_accepts = 0;
        }
        if it > cfg.burn_in && (it - cfg.burn_in - 1).is_multiple_of(cfg.thin) {
            chain.samples.push(state.q.clone());
        }
    }
    chain.wall_time = start.elapsed().as_secs_f64();
    Ok(chain)
}

/// Componentwise mean of the stored samples.
pub fn posterior_mean(chain: &Chain) -> Result<Vec<f64>, McmcError> {
    mean_of(&chain.samples)
}

pub(crate) fn mean_of(samples: &[Vec<f64>]) -> Result<Vec<f64>, McmcError> {
    let first = samples.first().ok_or(McmcError::EmptyChain)?;
    let mut m = vec![0.0; first.len()];
    for s in samples {
        m.iter_mut().zip(s).for_each(|(a, v)| *a += v);
    }
    let n = samples.len() as f64;
    m.iter_mut().for_each(|a| *a /= n);
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prior::GaussianPrior;

    fn toy() -> (GaussianPrior, LinearBackend, Measurement) {
        let prior = GaussianPrior::from_variances(&[1.0, 0.5, 2.0]).unwrap();
        let a = vec![1.0, 0.0, 0.5, 0.0, 1.0, -1.0];
        let backend = LinearBackend::new(a, 3, 1, 2);
        let y = Measurement::new(ProblemKind::Eit, 1, 2, vec![0.3, -0.2]);
        (prior, backend, y)
    }

    #[test]
    fn likelihood_cases() {
        let y = Measurement::new(ProblemKind::Eit, 1, 2, vec![1.0, 2.0]);
        let exact = ConstantBackend::new(y.clone(), 1);
        assert_eq!(log_likelihood(&y, &exact, &[0.0], 0.1).unwrap(), 0.0);
        let off = ConstantBackend::new(Measurement::new(ProblemKind::Eit, 1, 2, vec![1.0, 2.5]), 1);
        assert_eq!(log_likelihood(&y, &off, &[0.0], 1.0).unwrap(), -0.125);
        assert!(log_likelihood(&y, &off, &[0.0], 0.0).is_err());
        let yt = y.transpose();
        let offt = ConstantBackend::new(off.output.transpose(), 1);
        assert_eq!(
            log_likelihood(&yt, &offt, &[0.0], 0.3).unwrap(),
            log_likelihood(&y, &off, &[0.0], 0.3).unwrap()
        );
    }

    #[test]
    fn improving_proposals_always_accepted() {
        let (prior, _, y) = toy();
        let flat = ConstantBackend::new(y.clone(), 3);
        let state = PcnState {
            q: vec![0.0; 3],
            loglik: -1.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let (_, acc) = pcn_step(&state, &prior, &flat, &y, 1.0, 0.2, &mut rng).unwrap();
            assert!(acc);
        }
    }

    #[test]
    fn tiny_step_barely_moves() {
        let (prior, backend, y) = toy();
        let q = vec![0.2, -0.1, 0.4];
        let loglik = log_likelihood(&y, &backend, &q, 0.5).unwrap();
        let state = PcnState { q: q.clone(), loglik };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (next, acc) = pcn_step(&state, &prior, &backend, &y, 0.5, 1e-12, &mut rng).unwrap();
        assert!(acc);
        assert!(next.q.iter().zip(&q).all(|(a, b)| (a - b).abs() < 1e-5));
    }

    #[test]
    fn step_is_reproducible() {
        let (prior, backend, y) = toy();
        let state = PcnState {
            q: vec![0.0; 3],
            loglik: log_likelihood(&y, &backend, &[0.0; 3], 0.2).unwrap(),
        };
        let run = || pcn_step(&state, &prior, &backend, &y, 0.2, 0.1, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(run(), run());
    }

    #[test]
    fn adaptation_rule() {
        assert_eq!(adapt_delta(0.1, 0.25, 0.25), 0.1);
        assert!(adapt_delta(0.1, 1.0, 0.25) > 0.1);
        assert!(adapt_delta(0.1, 0.0, 0.25) < 0.1);
        let mut d = 0.1;
        for _ in 0..10_000 {
            d = adapt_delta(d, 0.0, 0.25);
        }
        assert_eq!(d, MIN_DELTA);
        assert_eq!(adapt_delta(0.49, 1.0, 0.25), MAX_DELTA);
    }

    #[test]
    fn burn_in_only_chain() {
        let (prior, backend, y) = toy();
        let cfg = PcnConfig {
            burn_in: 250,
            samples: 0,
            noise_sigma: 0.3,
            ..Default::default()
        };
        let chain = run_chain(&cfg, &prior, &backend, &y, &[0.0; 3]).unwrap();
        assert!(chain.samples.is_empty());
        assert_eq!(chain.accept_flags.len(), 250);
        assert_eq!(backend.eval_count(), 251);
        assert_eq!(chain.delta_history.len(), 3);
        assert!(chain.delta_history.iter().all(|&(_, d)| d > 0.0 && d < 0.5));
        assert!(matches!(posterior_mean(&chain), Err(McmcError::EmptyChain)));
    }

    #[test]
    fn delta_frozen_after_burn_in() {
        let (prior, backend, y) = toy();
        let cfg = PcnConfig {
            burn_in: 300,
            samples: 400,
            thin: 3,
            noise_sigma: 0.3,
            seed: 5,
            ..Default::default()
        };
        let chain = run_chain(&cfg, &prior, &backend, &y, &[0.0; 3]).unwrap();
        assert!(chain.delta_history.iter().all(|&(i, _)| i <= 300));
        assert_eq!(chain.samples.len(), 134);
        assert_eq!(chain.delta_at(301), chain.delta_at(700));
        let again = run_chain(&cfg, &prior, &backend, &y, &[0.0; 3]).unwrap();
        assert_eq!(chain.samples, again.samples);
        assert_eq!(chain.loglik_trace, again.loglik_trace);
    }

    #[test]
    fn mean_cases() {
        let mut chain = Chain {
            dim: 2,
            samples: vec![vec![1.0, -2.0]],
            ..Chain::default()
        };
        assert_eq!(posterior_mean(&chain).unwrap(), vec![1.0, -2.0]);
        chain.samples.push(vec![-1.0, 2.0]);
        assert_eq!(posterior_mean(&chain).unwrap(), vec![0.0, 0.0]);
        assert_eq!(posterior_mean(&chain.thinned(1)).unwrap(), posterior_mean(&chain).unwrap());
    }

    struct Failing {
        after: u64,
        counter: EvalCounter,
    }

    impl ForwardBackend for Failing {
        fn evaluate(&self, _q: &[f64]) -> Result<Measurement, BackendError> {
            self.counter.bump();
            if self.counter.get() > self.after {
                return Err(BackendError::Other("solver diverged".into()));
            }
            Ok(Measurement::new(ProblemKind::Eit, 1, 1, vec![0.0]))
        }
        fn kind(&self) -> BackendKind {
            BackendKind::Fem
        }
        fn eval_count(&self) -> u64 {
            self.counter.get()
        }
    }

    #[test]
    fn failure_keeps_partial_chain() {
        let prior = GaussianPrior::from_variances(&[1.0]).unwrap();
        let backend = Failing {
            after: 11,
            counter: EvalCounter::default(),
        };
        let y = Measurement::new(ProblemKind::Eit, 1, 1, vec![0.0]);
        let cfg = PcnConfig {
            burn_in: 5,
            samples: 20,
            ..Default::default()
        };
        let err = run_chain(&cfg, &prior, &backend, &y, &[0.0]).unwrap_err();
        assert_eq!(err.partial.iterations(), 10);
        assert_eq!(err.partial.samples.len(), 5);
        assert!(matches!(err.error, McmcError::Backend { iteration: 11, .. }));
        let dir = tempfile::tempdir().unwrap();
        err.partial.write_dir(dir.path()).unwrap();
        let back = read_samples_file(&dir.path().join("samples.bin")).unwrap();
        assert_eq!(back, err.partial.samples);
    }

    #[test]
    fn trace_csv_rows() {
        let (prior, backend, y) = toy();
        let cfg = PcnConfig {
            burn_in: 200,
            samples: 10,
            noise_sigma: 0.3,
            ..Default::default()
        };
        let chain = run_chain(&cfg, &prior, &backend, &y, &[0.0; 3]).unwrap();
        let mut buf = Vec::new();
        chain.write_trace_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "iter,loglik,accepted,delta");
        assert_eq!(lines.len(), 211);
        let d101: f64 = lines[101].split(',').nth(3).unwrap().parse().unwrap();
        assert_eq!(d101, chain.delta_history[1].1);
        let d100: f64 = lines[100].split(',').nth(3).unwrap().parse().unwrap();
        assert_eq!(d100, cfg.delta);
    }

    #[test]
    fn truncated_sample_store() {
        let chain = Chain {
            dim: 2,
            samples: vec![vec![1.0, 2.0], vec![3.0, 4.0]],
            ..Chain::default()
        };
        let mut buf = Vec::new();
        chain.write_samples(&mut buf).unwrap();
        assert_eq!(read_samples(buf.as_slice()).unwrap(), chain.samples);
        assert!(read_samples(&buf[..buf.len() - 3]).is_err());
    }
}
