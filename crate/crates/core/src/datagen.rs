//! Training data: (surrogate input, noiseless measurement) pairs drawn from
//! a phantom mix, with a binary on-disk format.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::fem::{Measurement, ProblemKind};
use crate::problem::{two_inclusion_phantom, Circle, Phantom, Problem, ProblemError};

pub const DATASET_MAGIC: &[u8; 8] = b"MCNETDAT";
pub const DATASET_VERSION: u32 = 1;
/// Abort once retries exceed this fraction of the requested count.
pub const MAX_RETRY_FRACTION: f64 = 0.05;

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("dataset must contain at least one pair")]
    Empty,
    #[error("invalid phantom mix: {0}")]
    InvalidMix(String),
    #[error("{retries} forward-solve failures for {requested} pairs exceeds the retry budget; last error: {last}")]
    TooManyFailures {
        retries: usize,
        requested: usize,
        last: String,
    },
    #[error("holdout fraction {0} must lie in (0, 1)")]
    InvalidFraction(f64),
    #[error("split of {n} pairs with fraction {fraction} leaves one side empty")]
    DegenerateSplit { n: usize, fraction: f64 },
    #[error("pair {index} has shape mismatch")]
    Shape { index: usize },
    #[error("malformed dataset file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PhantomSource {
    /// One or two random disks.
    Circles,
    /// A draw from the problem's prior pushed through its parametrization.
    Prior,
    /// The two-inclusion QPAT phantom rotated by a random angle.
    RotatedInclusions,
}

/// Sampling weights over phantom sources.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomMix(pub Vec<(PhantomSource, f64)>);

impl PhantomMix {
    pub fn default_for(kind: ProblemKind) -> Self {
        use PhantomSource::*;
        PhantomMix(match kind {
            ProblemKind::Qpat => vec![(Circles, 0.4), (RotatedInclusions, 0.3), (Prior, 0.3)],
            _ => vec![(Circles, 0.5), (Prior, 0.5)],
        })
    }

    pub fn only(source: PhantomSource) -> Self {
        PhantomMix(vec![(source, 1.0)])
    }

    pub fn validate(&self, kind: ProblemKind) -> Result<(), DatagenError> {
        let bad = |m: String| Err(DatagenError::InvalidMix(m));
        if self.0.iter().any(|(_, w)| !(w.is_finite() && *w >= 0.0)) {
            return bad("weights must be finite and nonnegative".into());
        }
        if self.0.iter().map(|(_, w)| w).sum::<f64>() <= 0.0 {
            return bad("weights sum to zero".into());
        }
        if kind != ProblemKind::Qpat && self.0.iter().any(|(s, w)| *s == PhantomSource::RotatedInclusions && *w > 0.0) {
            return bad(format!("rotated inclusions are only defined for qpat, not {}", kind.as_str()));
        }
        Ok(())
    }

    fn pick<R: Rng + ?Sized>(&self, rng: &mut R) -> PhantomSource {
        let total: f64 = self.0.iter().map(|(_, w)| w).sum();
        let mut u = rng.random::<f64>() * total;
        for &(s, w) in &self.0 {
            if u < w {
                return s;
            }
            u -= w;
        }
        self.0.iter().rev().find(|(_, w)| *w > 0.0).expect("validated").0
    }
}

/// Radius range and centre bound of random circular anomalies.
pub const CIRCLE_RADIUS: (f64, f64) = (0.1, 0.4);
pub const CIRCLE_CENTER_BOUND: f64 = 0.6;

pub fn random_circle<R: Rng + ?Sized>(rng: &mut R) -> Circle {
    let r = CIRCLE_CENTER_BOUND * rng.random::<f64>().sqrt();
    let theta = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    Circle {
        center: [r * theta.cos(), r * theta.sin()],
        radius: rng.random_range(CIRCLE_RADIUS.0..CIRCLE_RADIUS.1),
    }
}

pub fn random_phantom<R: Rng + ?Sized>(problem: &Problem, source: PhantomSource, rng: &mut R) -> Phantom {
    match source {
        PhantomSource::Circles => {
            let count = rng.random_range(1..=2);
            Phantom::Circles((0..count).map(|_| random_circle(rng)).collect())
        }
        PhantomSource::Prior => Phantom::Latent(problem.prior.sample(rng)),
        PhantomSource::RotatedInclusions => {
            let alpha = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            Phantom::Stars(two_inclusion_phantom(&problem.cfg.qpat, alpha))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSet {
    pub problem: ProblemKind,
    pub input_dim: usize,
    pub output_rows: usize,
    pub output_cols: usize,
    pub inputs: Vec<Vec<f64>>,
    pub outputs: Vec<Vec<f64>>,
    /// SHA-256 of the generating configuration.
    pub config_hash: [u8; 32],
    pub seed: u64,
}

impl DataSet {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn measurement(&self, i: usize) -> Measurement {
        Measurement::new(self.problem, self.output_rows, self.output_cols, self.outputs[i].clone())
    }

    pub fn validate(&self) -> Result<(), DatagenError> {
        if self.is_empty() {
            return Err(DatagenError::Empty);
        }
        if self.inputs.len() != self.outputs.len() {
            return Err(DatagenError::Shape { index: self.inputs.len().min(self.outputs.len()) });
        }
        let out = self.output_rows * self.output_cols;
        match self
            .inputs
            .iter()
            .zip(&self.outputs)
            .position(|(x, y)| x.len() != self.input_dim || y.len() != out)
        {
            Some(index) => Err(DatagenError::Shape { index }),
            None => Ok(()),
        }
    }

    fn subset(&self, idx: &[usize]) -> DataSet {
        DataSet {
            problem: self.problem,
            input_dim: self.input_dim,
            output_rows: self.output_rows,
            output_cols: self.output_cols,
            inputs: idx.iter().map(|&i| self.inputs[i].clone()).collect(),
            outputs: idx.iter().map(|&i| self.outputs[i].clone()).collect(),
            config_hash: self.config_hash,
            seed: self.seed,
        }
    }
}

/// Hash identifying a problem configuration and mix.
pub fn config_hash(problem: &Problem, mix: &PhantomMix) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(format!("{:?}|{:?}", problem.cfg, mix).as_bytes());
    h.finalize().into()
}

/// Stream for pair `index`; pairs are reproducible individually.
fn pair_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedPair {
    pub input: Vec<f64>,
    pub output: Vec<f64>,
    /// Failed solves before this pair succeeded.
    pub failures: usize,
}

/// Retry budget exhausted; `last` describes the final failure.
#[derive(Debug, Clone, PartialEq)]
pub struct PairFailure {
    pub failures: usize,
    pub last: String,
}

/// One pair from its own substream, retrying failed solves on the same
/// stream.
pub fn generate_pair(
    problem: &Problem,
    mix: &PhantomMix,
    seed: u64,
    index: usize,
    max_retries: usize,
) -> Result<GeneratedPair, PairFailure> {
    let mut rng = pair_rng(seed, index);
    let mut failures = 0;
    loop {
        let phantom = random_phantom(problem, mix.pick(&mut rng), &mut rng);
        let attempt = problem
            .phantom_input(&phantom)
            .and_then(|x| problem.forward_input(&x).map(|m| (x, m)));
        let err = match attempt {
            Ok((x, m)) if m.is_finite() => {
                return Ok(GeneratedPair {
                    input: x,
                    output: m.data,
                    failures,
                })
            }
            Ok(_) => "non-finite measurement".to_string(),
            Err(e) => e.to_string(),
        };
        failures += 1;
        if failures > max_retries {
            return Err(PairFailure { failures, last: err });
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct GenerationStats {
    pub retries: usize,
}

pub fn generate_dataset(
    problem: &Problem,
    n: usize,
    mix: &PhantomMix,
    seed: u64,
) -> Result<(DataSet, GenerationStats), DatagenError> {
    if n == 0 {
        return Err(DatagenError::Empty);
    }
    mix.validate(problem.kind())?;
    let budget = (MAX_RETRY_FRACTION * n as f64).floor() as usize;
    let (rows, cols) = problem.measurement_shape();
    let mut ds = DataSet {
        problem: problem.kind(),
        input_dim: problem.input_dim(),
        output_rows: rows,
        output_cols: cols,
        inputs: Vec::with_capacity(n),
        outputs: Vec::with_capacity(n),
        config_hash: config_hash(problem, mix),
        seed,
    };
    let mut stats = GenerationStats::default();
    for i in 0..n {
        let left = budget - stats.retries;
        match generate_pair(problem, mix, seed, i, left) {
            Ok(pair) => {
                stats.retries += pair.failures;
                ds.inputs.push(pair.input);
                ds.outputs.push(pair.output);
            }
            Err(f) => {
                return Err(DatagenError::TooManyFailures {
                    retries: stats.retries + f.failures,
                    requested: n,
                    last: f.last,
                })
            }
        }
    }
    Ok((ds, stats))
}

/// Seeded disjoint split into (train, validation).
pub fn split(ds: &DataSet, holdout_fraction: f64, seed: u64) -> Result<(DataSet, DataSet), DatagenError> {
    if !(holdout_fraction > 0.0 && holdout_fraction < 1.0) {
        return Err(DatagenError::InvalidFraction(holdout_fraction));
    }
    let n = ds.len();
    let n_val = (holdout_fraction * n as f64).round() as usize;
    if n_val == 0 || n_val == n {
        return Err(DatagenError::DegenerateSplit {
            n,
            fraction: holdout_fraction,
        });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (val, train) = idx.split_at_mut(n_val);
    val.sort_unstable();
    train.sort_unstable();
    Ok((ds.subset(train), ds.subset(val)))
}

pub fn write_dataset<W: Write>(ds: &DataSet, mut w: W) -> Result<(), DatagenError> {
    ds.validate()?;
    w.write_all(DATASET_MAGIC)?;
    w.write_all(&DATASET_VERSION.to_le_bytes())?;
    w.write_all(&[ds.problem.tag()])?;
    for v in [ds.input_dim, ds.output_rows, ds.output_cols, ds.len()] {
        w.write_all(&(v as u64).to_le_bytes())?;
    }
    w.write_all(&ds.seed.to_le_bytes())?;
    w.write_all(&ds.config_hash)?;
    for (x, y) in ds.inputs.iter().zip(&ds.outputs) {
        for v in x.iter().chain(y) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_dataset<R: Read>(mut r: R) -> Result<DataSet, DatagenError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    if cur.take(8)? != DATASET_MAGIC {
        return Err(DatagenError::Format("bad magic".into()));
    }
    let version = u32::from_le_bytes(cur.take(4)?.try_into().expect("4 bytes"));
    if version != DATASET_VERSION {
        return Err(DatagenError::Format(format!(
            "version {version}, expected {DATASET_VERSION}"
        )));
    }
    let tag = cur.take(1)?[0];
    let problem = ProblemKind::from_tag(tag).ok_or_else(|| DatagenError::Format(format!("unknown problem tag {tag}")))?;
    let input_dim = cur.u64()? as usize;
    let output_rows = cur.u64()? as usize;
    let output_cols = cur.u64()? as usize;
    let count = cur.u64()? as usize;
    let seed = cur.u64()?;
    let config_hash: [u8; 32] = cur.take(32)?.try_into().expect("32 bytes");
    let out = output_rows * output_cols;
    let expected = count
        .checked_mul(input_dim + out)
        .and_then(|v| v.checked_mul(8))
        .ok_or_else(|| DatagenError::Format("declared sizes overflow".into()))?;
    if bytes.len() - cur.pos != expected {
        return Err(DatagenError::Format(format!(
            "payload has {} bytes, header declares {expected}",
            bytes.len() - cur.pos
        )));
    }
    let mut inputs = Vec::with_capacity(count);
    let mut outputs = Vec::with_capacity(count);
    for _ in 0..count {
        inputs.push(cur.f64s(input_dim)?);
        outputs.push(cur.f64s(out)?);
    }
    let ds = DataSet {
        problem,
        input_dim,
        output_rows,
        output_cols,
        inputs,
        outputs,
        config_hash,
        seed,
    };
    ds.validate()?;
    Ok(ds)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DatagenError> {
        let end = self.pos + n;
        let s = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| DatagenError::Format(format!("truncated at byte {}", self.pos)))?;
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64, DatagenError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, DatagenError> {
        Ok(self
            .take(8 * n)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn save_dataset(ds: &DataSet, path: &Path) -> Result<(), DatagenError> {
    let mut buf = Vec::new();
    write_dataset(ds, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<DataSet, DatagenError> {
    read_dataset(fs::File::open(path)?)
}
