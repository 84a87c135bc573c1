//! End-to-end runs shared by the CLI and the acceptance suite: synthetic
//! data for a phantom, inversion with either backend, surrogate training.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::analysis::{
    error_metrics, hellinger_from_potentials, masked_mae, phantom_truth, reconstruct, AnalysisError, ErrorReport,
    Reconstruction,
};
use crate::datagen::DataSet;
use crate::fem::{add_noise, Measurement};
use crate::mcmc::{misfit, run_chain, Chain, ForwardBackend, PcnConfig};
use crate::problem::{to_plane, FemBackend, Phantom, Problem, ProblemConfig, ProblemError, SurrogateBackend};
use crate::surrogate::{Architecture, EpochRecord, Scaling, SurrogateError, SurrogateNet, TrainConfig, Trainer};

/// Default credible level of reported bounds.
pub const CREDIBLE_LEVEL: f64 = 0.2;

/// Noisy observation of a phantom simulated `finer` refinement levels above
/// the inversion mesh; noise std is `level` times the RMS of the clean
/// measurement.
pub fn observe(
    problem: &Problem,
    phantom: &Phantom,
    level: f64,
    finer: u32,
    seed: u64,
) -> Result<Measurement, AnalysisError> {
    let clean = if finer == 0 {
        problem.forward_input(&problem.phantom_input(phantom)?)?
    } else {
        let fine = Problem::new(ProblemConfig {
            refinement: problem.cfg.refinement + finer,
            ..problem.cfg.clone()
        })?;
        fine.forward_input(&fine.phantom_input(phantom)?)?
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(add_noise(&clean, level, &mut rng).map_err(ProblemError::from)?)
}

#[derive(Debug, Clone)]
pub struct Inversion {
    pub chain: Chain,
    pub recon: Reconstruction,
    pub report: ErrorReport,
    /// MAE over the elements inside the true anomaly.
    pub support_mae: f64,
    /// The same restricted MAE for a constant-background reconstruction.
    pub baseline_support_mae: f64,
}

/// pCN inversion of `y` against `phantom`'s ground truth. The chain starts
/// at the prior mean.
pub fn invert(
    problem: &Problem,
    backend: &dyn ForwardBackend,
    y: &Measurement,
    phantom: &Phantom,
    pcn: &PcnConfig,
) -> Result<Inversion, AnalysisError> {
    let q0 = vec![0.0; problem.latent_dim()];
    let pcn = PcnConfig {
        noise_sigma: y.noise_sigma,
        ..pcn.clone()
    };
    let chain = run_chain(&pcn, &problem.prior, backend, y, &q0).map_err(|f| f.error)?;
    let recon = reconstruct(problem, &chain, backend.kind(), CREDIBLE_LEVEL)?;
    let (truth, mask) = phantom_truth(problem, phantom)?;
    let mut report = error_metrics(&recon.field.values, &truth.values)?;
    report.inv_time_seconds = chain.wall_time;
    let background = problem.phantom_field(&Phantom::Circles(Vec::new()))?;
    Ok(Inversion {
        support_mae: masked_mae(&recon.field.values, &truth.values, &mask),
        baseline_support_mae: masked_mae(&background.values, &truth.values, &mask),
        chain,
        recon,
        report,
    })
}

pub fn invert_fem(problem: &Problem, y: &Measurement, phantom: &Phantom, pcn: &PcnConfig) -> Result<Inversion, AnalysisError> {
    invert(problem, &FemBackend::new(problem), y, phantom, pcn)
}

pub fn invert_net(
    problem: &Problem,
    net: &SurrogateNet,
    y: &Measurement,
    phantom: &Phantom,
    pcn: &PcnConfig,
) -> Result<Inversion, AnalysisError> {
    invert(problem, &SurrogateBackend::new(problem, net.clone()), y, phantom, pcn)
}

/// Dataset measurements embedded in the surrogate's output plane.
pub fn plane_targets(ds: &DataSet) -> Vec<Vec<f64>> {
    (0..ds.len()).map(|i| to_plane(&ds.measurement(i))).collect()
}

/// Fresh He-initialized net with scaling fitted to `ds`.
pub fn init_surrogate(ds: &DataSet, arch: Architecture, seed: u64) -> Result<SurrogateNet, SurrogateError> {
    let mut net = SurrogateNet::he_init(arch, &mut ChaCha8Rng::seed_from_u64(seed))?;
    net.scaling = Scaling::fit(&ds.inputs, &plane_targets(ds));
    Ok(net)
}

/// Trains a surrogate on `ds`, calling `checkpoint` after every epoch.
pub fn train_surrogate<F, E>(
    ds: &DataSet,
    arch: Architecture,
    cfg: &TrainConfig,
    mut checkpoint: F,
) -> Result<(SurrogateNet, Vec<EpochRecord>), E>
where
    F: FnMut(&Trainer) -> Result<(), E>,
    E: From<SurrogateError>,
{
    let targets = plane_targets(ds);
    let net = init_surrogate(ds, arch, cfg.seed)?;
    let mut trainer = Trainer::new(net, cfg.clone())?;
    while trainer.epochs_done() < cfg.epochs {
        trainer.run_epoch(&ds.inputs, &targets)?;
        checkpoint(&trainer)?;
    }
    Ok((trainer.net, trainer.history))
}

/// Surrogate accuracy and posterior distance after a number of epochs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckpointRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub l2mu: f64,
    pub hellinger: f64,
}

/// Fixed prior draws with their FEM predictions, reused at every checkpoint.
#[derive(Debug, Clone)]
pub struct PosteriorProbe {
    pub draws: Vec<Vec<f64>>,
    pub exact: Vec<Measurement>,
    pub y: Measurement,
    pub sigma: f64,
    /// Leading draws used for the L²(μ) error.
    pub l2_samples: usize,
}

impl PosteriorProbe {
    pub fn new(
        problem: &Problem,
        y: Measurement,
        samples: usize,
        l2_samples: usize,
        seed: u64,
    ) -> Result<Self, AnalysisError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draws: Vec<Vec<f64>> = (0..samples.max(l2_samples)).map(|_| problem.prior.sample(&mut rng)).collect();
        let exact = draws
            .iter()
            .map(|q| problem.forward_latent(q))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(PosteriorProbe {
            draws,
            exact,
            sigma: y.noise_sigma,
            y,
            l2_samples,
        })
    }

    /// `(L²(μ) error, Hellinger distance)` of `approx` against the stored FEM
    /// predictions.
    pub fn evaluate(&self, approx: &dyn ForwardBackend) -> Result<(f64, f64), AnalysisError> {
        let two_var = 2.0 * self.sigma * self.sigma;
        let (mut sq, mut phi, mut phi_theta) = (0.0, Vec::new(), Vec::new());
        for (i, (q, g)) in self.draws.iter().zip(&self.exact).enumerate() {
            let a = approx.evaluate(q)?;
            if i < self.l2_samples {
                sq += misfit(g, &a)?;
            }
            phi.push(misfit(&self.y, g)? / two_var);
            phi_theta.push(misfit(&self.y, &a)? / two_var);
        }
        let l2 = (sq / self.l2_samples.max(1) as f64).sqrt();
        Ok((l2, hellinger_from_potentials(&phi, &phi_theta)?))
    }
}

/// Trains on `ds` and evaluates the surrogate at each epoch in `checkpoints`.
pub fn checkpoint_study(
    problem: &Problem,
    ds: &DataSet,
    arch: Architecture,
    cfg: &TrainConfig,
    checkpoints: &[usize],
    probe: &PosteriorProbe,
) -> Result<Vec<CheckpointRow>, AnalysisError> {
    let last = checkpoints.iter().copied().max().unwrap_or(0);
    let cfg = TrainConfig {
        epochs: last,
        ..cfg.clone()
    };
    let mut rows = Vec::new();
    train_surrogate(ds, arch, &cfg, |t| -> Result<(), AnalysisError> {
        let epoch = t.epochs_done();
        if checkpoints.contains(&epoch) {
            let (l2mu, hellinger) = probe.evaluate(&SurrogateBackend::new(problem, t.net.clone()))?;
            rows.push(CheckpointRow {
                epoch,
                train_loss: t.history.last().map_or(f64::NAN, |r| r.loss),
                l2mu,
                hellinger,
            });
        }
        Ok(())
    })?;
    Ok(rows)
}

/// `epoch,train_loss,l2mu,hellinger`
pub fn write_checkpoint_csv<W: Write>(rows: &[CheckpointRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "epoch,train_loss,l2mu,hellinger")?;
    for r in rows {
        writeln!(w, "{},{:e},{:e},{:e}", r.epoch, r.train_loss, r.l2mu, r.hellinger)?;
    }
    Ok(())
}
