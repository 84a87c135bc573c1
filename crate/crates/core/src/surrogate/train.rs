use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{AdamState, SurrogateError, SurrogateNet, PLANE};
#[cfg(doc)]
use super::Scaling;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub minibatch: usize,
    pub lr: f64,
    pub lr_drop_factor: f64,
    pub lr_drop_period: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            minibatch: 128,
            lr: 1e-3,
            lr_drop_factor: 1.0,
            lr_drop_period: 50,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), SurrogateError> {
        let bad = |m: &str| Err(SurrogateError::InvalidConfig(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if self.minibatch == 0 {
            return bad("minibatch must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(self.lr_drop_factor > 0.0 && self.lr_drop_factor <= 1.0) {
            return bad("lr_drop_factor must lie in (0, 1]");
        }
        if self.lr_drop_period == 0 {
            return bad("lr_drop_period must be positive");
        }
        Ok(())
    }

    /// Learning rate of 1-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let drops = (epoch.saturating_sub(1) / self.lr_drop_period) as i32;
        self.lr * self.lr_drop_factor.powi(drops)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean squared error over the epoch's minibatches, per output entry.
    pub loss: f64,
    pub lr: f64,
}

/// Minibatch Adam training that can be stopped and resumed epoch by epoch.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub net: SurrogateNet,
    pub cfg: TrainConfig,
    adam: AdamState,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    epoch: usize,
    pub history: Vec<EpochRecord>,
}

impl Trainer {
    pub fn new(net: SurrogateNet, cfg: TrainConfig) -> Result<Self, SurrogateError> {
        cfg.validate()?;
        Ok(Trainer {
            adam: AdamState::new(net.params.len()),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            net,
            cfg,
            order: Vec::new(),
            epoch: 0,
            history: Vec::new(),
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    /// One pass over shuffled minibatches; the last partial batch is kept.
    /// Inputs and targets are standardized with the net's [`Scaling`].
    pub fn run_epoch(&mut self, inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<EpochRecord, SurrogateError> {
        if inputs.is_empty() {
            return Err(SurrogateError::EmptyDataset);
        }
        if inputs.len() != targets.len() {
            return Err(SurrogateError::Shape {
                expected: inputs.len(),
                got: targets.len(),
            });
        }
        if let Some(t) = targets.iter().find(|t| t.len() != PLANE) {
            return Err(SurrogateError::Shape {
                expected: PLANE,
                got: t.len(),
            });
        }
        self.epoch += 1;
        let lr = self.cfg.lr_at(self.epoch);
        if self.order.len() != inputs.len() {
            self.order = (0..inputs.len()).collect();
        }
        self.order.shuffle(&mut self.rng);
        let mut grads = vec![0.0; self.net.params.len()];
        let mut gout = vec![0.0; PLANE];
        let (mut x, mut t) = (Vec::new(), Vec::new());
        let scaling = self.net.scaling.clone();
        let mut sse = 0.0;
        for batch in self.order.chunks(self.cfg.minibatch) {
            grads.iter_mut().for_each(|g| *g = 0.0);
            let scale = 2.0 / (PLANE * batch.len()) as f64;
            for &i in batch {
                scaling.normalize_input(&inputs[i], &mut x);
                scaling.normalize_target(&targets[i], &mut t);
                let cache = self.net.forward_cached(&x)?;
                for ((g, &o), &t) in gout.iter_mut().zip(cache.output()).zip(&t) {
                    let r = o - t;
                    sse += r * r;
                    *g = scale * r;
                }
                self.net.backward_into(&cache, &gout, &mut grads)?;
            }
            self.adam.step(&mut self.net.params, &grads, lr)?;
        }
        // reported in physical units
        let loss = sse / (PLANE * inputs.len()) as f64 * scaling.output_std.powi(2);
        if !loss.is_finite() {
            return Err(SurrogateError::NonFiniteLoss { epoch: self.epoch, lr });
        }
        let rec = EpochRecord {
            epoch: self.epoch,
            loss,
            lr,
        };
        self.history.push(rec);
        Ok(rec)
    }

    /// Runs the remaining configured epochs.
    pub fn run(&mut self, inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<(), SurrogateError> {
        while self.epoch < self.cfg.epochs {
            self.run_epoch(inputs, targets)?;
        }
        Ok(())
    }
}

/// Trains `net` for `cfg.epochs` epochs; returns the net and its loss history.
pub fn train(
    net: SurrogateNet,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    cfg: &TrainConfig,
) -> Result<(SurrogateNet, Vec<EpochRecord>), SurrogateError> {
    let mut t = Trainer::new(net, cfg.clone())?;
    t.run(inputs, targets)?;
    Ok((t.net, t.history))
}

/// Mean squared error per output entry over a dataset.
pub fn dataset_mse(net: &SurrogateNet, inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<f64, SurrogateError> {
    if inputs.is_empty() {
        return Err(SurrogateError::EmptyDataset);
    }
    let mut sse = 0.0;
    for (x, t) in inputs.iter().zip(targets) {
        sse += net
            .forward(x)?
            .iter()
            .zip(t)
            .map(|(o, t)| (o - t).powi(2))
            .sum::<f64>();
    }
    Ok(sse / (PLANE * inputs.len()) as f64)
}

/// `epoch,loss,lr` rows.
pub fn write_loss_csv<W: Write>(history: &[EpochRecord], mut w: W) -> std::io::Result<()> {
    writeln!(w, "epoch,loss,lr")?;
    for r in history {
        writeln!(w, "{},{:e},{:e}", r.epoch, r.loss, r.lr)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surrogate::{Architecture, Scaling};
    use rand::Rng;

    fn toy_data(n: usize, dim: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let targets = inputs
            .iter()
            .map(|x| {
                (0..PLANE)
                    .map(|k| 0.1 * x[k % dim] + 0.05 * (k as f64 / 40.0).sin())
                    .collect()
            })
            .collect();
        (inputs, targets)
    }

    #[test]
    fn single_pair_memorized() {
        let (x, t) = toy_data(1, 20, 1);
        let mut net = SurrogateNet::he_init(Architecture::new(20, 16), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        net.scaling = Scaling::fit_scalar(&x, &t);
        let cfg = TrainConfig {
            epochs: 200,
            minibatch: 1,
            lr: 3e-3,
            ..Default::default()
        };
        let (net, hist) = train(net, &x, &t, &cfg).unwrap();
        assert_eq!(hist.len(), 200);
        let mse = dataset_mse(&net, &x, &t).unwrap();
        assert!(mse < 1e-6, "final mse {mse}");
    }

    #[test]
    fn training_is_deterministic_and_finite() {
        let (x, t) = toy_data(20, 6, 2);
        let run = || {
            let net = SurrogateNet::he_init(Architecture::new(6, 3), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
            let cfg = TrainConfig {
                epochs: 10,
                minibatch: 7,
                lr: 1e-3,
                seed: 9,
                ..Default::default()
            };
            train(net, &x, &t, &cfg).unwrap()
        };
        let (n1, h1) = run();
        let (n2, h2) = run();
        assert_eq!(h1, h2);
        assert_eq!(n1.params, n2.params);
        assert!(h1.iter().all(|r| r.loss.is_finite()));
        let min = h1.iter().map(|r| r.loss).fold(f64::INFINITY, f64::min);
        assert!(min <= h1[0].loss);
    }

    #[test]
    fn lr_schedule() {
        let flat = TrainConfig {
            lr_drop_factor: 1.0,
            ..Default::default()
        };
        assert!((1..500).all(|e| flat.lr_at(e) == flat.lr));
        let step = TrainConfig {
            lr: 1.0,
            lr_drop_factor: 0.1,
            lr_drop_period: 20,
            ..Default::default()
        };
        assert_eq!(step.lr_at(1), 1.0);
        assert_eq!(step.lr_at(20), 1.0);
        assert!((step.lr_at(21) - 0.1).abs() < 1e-15);
        assert!((step.lr_at(41) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn empty_and_invalid() {
        let net = SurrogateNet::zeros(Architecture::new(2, 1)).unwrap();
        assert!(matches!(
            train(net.clone(), &[], &[], &TrainConfig::default()),
            Err(SurrogateError::EmptyDataset)
        ));
        let bad = TrainConfig {
            lr_drop_factor: 1.5,
            ..Default::default()
        };
        assert!(Trainer::new(net, bad).is_err());
    }

    #[test]
    fn diverging_run_reports_epoch() {
        let (x, mut t) = toy_data(2, 3, 5);
        t[0][0] = f64::INFINITY;
        let net = SurrogateNet::he_init(Architecture::new(3, 2), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let err = train(net, &x, &t, &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, SurrogateError::NonFiniteLoss { epoch: 1, .. }));
    }

    #[test]
    fn loss_csv_header() {
        let mut buf = Vec::new();
        write_loss_csv(&[EpochRecord { epoch: 1, loss: 0.5, lr: 1e-3 }], &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("epoch,loss,lr\n1,"));
    }
}
