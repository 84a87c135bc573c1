//! INI run configuration. Every key is optional; unknown sections and keys
//! are rejected with their `section.key` path.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use ini::Ini;
use thiserror::Error;

use crate::datagen::{PhantomMix, PhantomSource};
use crate::fem::ProblemKind;
use crate::mcmc::PcnConfig;
use crate::prior::LevelSetSpec;
use crate::problem::{two_inclusion_phantom, single_circle, Circle, Phantom, ProblemConfig};
use crate::surrogate::{Architecture, TrainConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Io { path: String, message: String },
    #[error("config syntax error: {0}")]
    Syntax(String),
    #[error("unknown config section [{0}]")]
    UnknownSection(String),
    #[error("unknown config key {0}")]
    UnknownKey(String),
    #[error("invalid value for {key}: {message}")]
    Invalid { key: String, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetSettings {
    pub channels: usize,
    pub conv_count: usize,
    pub final_relu: bool,
}

impl NetSettings {
    pub fn architecture(&self, input_dim: usize) -> Architecture {
        Architecture {
            input_dim,
            channels: self.channels,
            conv_count: self.conv_count,
            final_relu: self.final_relu,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSettings {
    pub count: usize,
    pub full_count: usize,
    pub holdout: f64,
    pub mix: PhantomMix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchSettings {
    pub levels: Vec<u32>,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HellingerSettings {
    pub samples: usize,
    /// Training epochs after which the surrogate is evaluated.
    pub checkpoints: Vec<usize>,
    /// Prior draws for the L²(μ) error.
    pub l2_samples: usize,
    /// Relative noise of the observation whose posteriors are compared.
    pub noise_level: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Paths {
    pub dataset: PathBuf,
    pub model: PathBuf,
    pub output: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub noise_level: f64,
    /// Refinement levels between the observation mesh and the inversion mesh.
    pub finer: u32,
    pub problem: ProblemConfig,
    pub mcmc: PcnConfig,
    pub train: TrainConfig,
    pub net: NetSettings,
    pub data: DataSettings,
    pub phantom: Phantom,
    pub bench: BenchSettings,
    pub hellinger: HellingerSettings,
    pub paths: Paths,
}

impl RunConfig {
    pub fn defaults(kind: ProblemKind) -> Self {
        let mut problem = ProblemConfig::new(kind);
        let (count, full_count, train) = match kind {
            ProblemKind::Eit => (
                800,
                7200,
                TrainConfig {
                    epochs: 40,
                    minibatch: 32,
                    lr: 1e-3,
                    lr_drop_factor: 0.3,
                    lr_drop_period: 10,
                    seed: 0,
                },
            ),
            ProblemKind::Dot => {
                problem.matern.ell = 0.2;
                (
                    800,
                    6400,
                    TrainConfig {
                        epochs: 100,
                        minibatch: 8,
                        lr: 1e-3,
                        lr_drop_factor: 0.1,
                        lr_drop_period: 50,
                        seed: 0,
                    },
                )
            }
            ProblemKind::Qpat => (
                600,
                4800,
                TrainConfig {
                    epochs: 100,
                    minibatch: 8,
                    lr: 1e-3,
                    lr_drop_factor: 0.1,
                    lr_drop_period: 20,
                    seed: 0,
                },
            ),
        };
        let phantom = match kind {
            ProblemKind::Qpat => Phantom::Stars(two_inclusion_phantom(&problem.qpat, 0.0)),
            _ => single_circle(),
        };
        RunConfig {
            seed: 0,
            noise_level: 0.01,
            finer: 1,
            problem,
            mcmc: PcnConfig::default(),
            train,
            net: NetSettings {
                channels: 16,
                conv_count: 4,
                final_relu: false,
            },
            data: DataSettings {
                count,
                full_count,
                holdout: 0.1,
                mix: PhantomMix::default_for(kind),
            },
            phantom,
            bench: BenchSettings {
                levels: vec![2, 3, 4],
                iterations: 200,
            },
            hellinger: HellingerSettings {
                samples: 2000,
                checkpoints: vec![1, 5, 20, 50],
                l2_samples: 100,
                noise_level: 0.5,
            },
            paths: Paths {
                dataset: PathBuf::from("dataset.bin"),
                model: PathBuf::from("model.bin"),
                output: PathBuf::from("runs"),
            },
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_str(&text)
    }

    /// Dataset size for the requested scale.
    pub fn dataset_count(&self, full_scale: bool) -> usize {
        if full_scale {
            self.data.full_count
        } else {
            self.data.count
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |key: &str, e: &dyn std::fmt::Display| ConfigError::Invalid {
            key: key.into(),
            message: e.to_string(),
        };
        self.problem.validate().map_err(|e| invalid("problem", &e))?;
        self.mcmc.validate().map_err(|e| invalid("mcmc", &e))?;
        self.train.validate().map_err(|e| invalid("train", &e))?;
        self.net
            .architecture(1)
            .validate()
            .map_err(|e| invalid("net", &e))?;
        self.data
            .mix
            .validate(self.problem.kind)
            .map_err(|e| invalid("data.mix", &e))?;
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return Err(invalid("run.noise_level", &"must be a nonnegative fraction"));
        }
        if !(self.data.holdout > 0.0 && self.data.holdout < 1.0) {
            return Err(invalid("data.holdout", &"must lie in (0, 1)"));
        }
        if self.data.count == 0 || self.data.full_count == 0 {
            return Err(invalid("data.count", &"must be positive"));
        }
        if self.bench.levels.len() < 3 {
            return Err(invalid("bench.levels", &"need at least 3 levels"));
        }
        if self.bench.iterations == 0 {
            return Err(invalid("bench.iterations", &"must be positive"));
        }
        if self.hellinger.samples < crate::analysis::MIN_HELLINGER_SAMPLES {
            return Err(invalid("hellinger.samples", &"must be at least 100"));
        }
        if self.hellinger.checkpoints.is_empty() || self.hellinger.checkpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("hellinger.checkpoints", &"must be strictly increasing and nonempty"));
        }
        if self.hellinger.checkpoints[0] == 0 || self.hellinger.l2_samples == 0 {
            return Err(invalid("hellinger", &"checkpoints and l2_samples must be positive"));
        }
        if !(self.hellinger.noise_level > 0.0 && self.hellinger.noise_level.is_finite()) {
            return Err(invalid("hellinger.noise_level", &"must be positive"));
        }
        if let Phantom::Stars(s) = &self.phantom {
            s.validate().map_err(|e| invalid("phantom", &e))?;
        }
        Ok(())
    }
}

/// Parses one section, tracking which keys were consumed.
struct Section<'a> {
    name: &'a str,
    props: Vec<(&'a str, &'a str)>,
    used: Vec<bool>,
}

impl<'a> Section<'a> {
    fn key(&self, k: &str) -> String {
        format!("{}.{}", self.name, k)
    }

    fn raw(&mut self, k: &str) -> Option<&'a str> {
        let i = self.props.iter().position(|(key, _)| *key == k)?;
        self.used[i] = true;
        Some(self.props[i].1.trim())
    }

    fn set<T: FromStr>(&mut self, k: &str, slot: &mut T) -> Result<(), ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        if let Some(v) = self.raw(k) {
            *slot = v.parse().map_err(|e: T::Err| ConfigError::Invalid {
                key: self.key(k),
                message: format!("{e} (got {v:?})"),
            })?;
        }
        Ok(())
    }

    fn list<T: FromStr>(&mut self, k: &str, sep: char) -> Result<Option<Vec<T>>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        let Some(v) = self.raw(k) else { return Ok(None) };
        v.split(sep)
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse().map_err(|e: T::Err| ConfigError::Invalid {
                    key: self.key(k),
                    message: format!("{e} (got {s:?})"),
                })
            })
            .collect::<Result<Vec<T>, _>>()
            .map(Some)
    }

    fn invalid(&self, k: &str, message: impl Into<String>) -> ConfigError {
        ConfigError::Invalid {
            key: self.key(k),
            message: message.into(),
        }
    }

    fn finish(self) -> Result<(), ConfigError> {
        match self.used.iter().position(|u| !u) {
            Some(i) => Err(ConfigError::UnknownKey(self.key(self.props[i].0))),
            None => Ok(()),
        }
    }
}

fn parse_kind(s: &str) -> Option<ProblemKind> {
    match s {
        "eit" => Some(ProblemKind::Eit),
        "dot" => Some(ProblemKind::Dot),
        "qpat" => Some(ProblemKind::Qpat),
        _ => None,
    }
}

/// Groups of `n` whitespace-separated numbers separated by `;`.
fn tuples(sec: &mut Section, k: &str, n: usize) -> Result<Option<Vec<Vec<f64>>>, ConfigError> {
    let Some(v) = sec.raw(k) else { return Ok(None) };
    let mut out = Vec::new();
    for group in v.split(';').map(str::trim).filter(|g| !g.is_empty()) {
        let nums = group
            .split_whitespace()
            .map(|s| s.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| sec.invalid(k, format!("{e} in {group:?}")))?;
        if nums.len() != n {
            return Err(sec.invalid(k, format!("expected {n} numbers per group, got {group:?}")));
        }
        out.push(nums);
    }
    Ok(Some(out))
}

impl FromStr for RunConfig {
    type Err = ConfigError;

    fn from_str(text: &str) -> Result<Self, ConfigError> {
        let ini = Ini::load_from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        let mut sections: Vec<Section> = Vec::new();
        for (name, props) in ini.iter() {
            let props: Vec<(&str, &str)> = props.iter().collect();
            match name {
                None if props.is_empty() => continue,
                None => return Err(ConfigError::UnknownKey(props[0].0.to_string())),
                Some(n) => sections.push(Section {
                    name: n,
                    used: vec![false; props.len()],
                    props,
                }),
            }
        }
        const KNOWN: [&str; 11] = [
            "run", "mesh", "prior", "dot", "qpat", "mcmc", "train", "data", "phantom", "bench", "hellinger",
        ];
        const PATHS: &str = "paths";
        if let Some(s) = sections.iter().find(|s| !KNOWN.contains(&s.name) && s.name != PATHS) {
            return Err(ConfigError::UnknownSection(s.name.to_string()));
        }
        let take = |name: &'static str| -> Section {
            let props: Vec<(&str, &str)> = sections
                .iter()
                .filter(|s| s.name == name)
                .flat_map(|s| s.props.iter().copied())
                .collect();
            Section {
                name,
                used: vec![false; props.len()],
                props,
            }
        };

        let mut run = take("run");
        let kind = match run.raw("problem") {
            None => ProblemKind::Eit,
            Some(v) => parse_kind(v).ok_or_else(|| run.invalid("problem", format!("expected eit, dot or qpat, got {v:?}")))?,
        };
        let mut cfg = RunConfig::defaults(kind);
        run.set("seed", &mut cfg.seed)?;
        run.set("noise_level", &mut cfg.noise_level)?;
        run.set("finer", &mut cfg.finer)?;
        run.finish()?;

        let p = &mut cfg.problem;
        let mut s = take("mesh");
        s.set("refinement", &mut p.refinement)?;
        s.set("electrodes", &mut p.electrodes)?;
        s.set("coverage", &mut p.coverage)?;
        s.set("contact_impedance", &mut p.contact_impedance)?;
        s.finish()?;

        let mut s = take("prior");
        s.set("nu", &mut p.matern.nu)?;
        s.set("ell", &mut p.matern.ell)?;
        s.set("jitter", &mut p.jitter)?;
        let thresholds = s.list::<f64>("thresholds", ',')?;
        let values = s.list::<f64>("values", ',')?;
        if thresholds.is_some() || values.is_some() {
            let spec = LevelSetSpec {
                thresholds: thresholds.unwrap_or_else(|| p.level_set.thresholds.clone()),
                values: values.unwrap_or_else(|| p.level_set.values.clone()),
            };
            spec.validate().map_err(|e| s.invalid("thresholds", e.to_string()))?;
            p.level_set = spec;
        }
        s.finish()?;

        let mut s = take("dot");
        let d = &mut p.dot;
        s.set("rho", &mut d.rho)?;
        s.set("mu_background", &mut d.mu_background)?;
        s.set("latent_scale", &mut d.latent_scale)?;
        s.set("mu_min", &mut d.mu_min)?;
        s.set("mu_max", &mut d.mu_max)?;
        s.set("mu_anomaly", &mut d.mu_anomaly)?;
        s.finish()?;

        let mut s = take("qpat");
        let q = &mut p.qpat;
        s.set("rho", &mut q.rho)?;
        s.set("kappa_inclusion", &mut q.kappa_inclusion)?;
        s.set("kappa_background", &mut q.kappa_background)?;
        s.set("base_radius", &mut q.base_radius)?;
        s.set("amplitude", &mut q.amplitude)?;
        s.set("order", &mut q.order)?;
        s.set("decay", &mut q.decay)?;
        s.set("const_std", &mut q.const_std)?;
        if let Some(c) = tuples(&mut s, "centers", 2)? {
            q.centers = c.into_iter().map(|v| [v[0], v[1]]).collect();
        }
        s.finish()?;

        let mut s = take("mcmc");
        let m = &mut cfg.mcmc;
        s.set("delta", &mut m.delta)?;
        s.set("target_accept", &mut m.target_accept)?;
        s.set("adapt_window", &mut m.adapt_window)?;
        s.set("burn_in", &mut m.burn_in)?;
        s.set("samples", &mut m.samples)?;
        s.set("thin", &mut m.thin)?;
        s.finish()?;
        cfg.mcmc.seed = cfg.seed;

        let mut s = take("train");
        let t = &mut cfg.train;
        s.set("epochs", &mut t.epochs)?;
        s.set("minibatch", &mut t.minibatch)?;
        s.set("lr", &mut t.lr)?;
        s.set("lr_drop_factor", &mut t.lr_drop_factor)?;
        s.set("lr_drop_period", &mut t.lr_drop_period)?;
        s.set("channels", &mut cfg.net.channels)?;
        s.set("conv_count", &mut cfg.net.conv_count)?;
        s.set("final_relu", &mut cfg.net.final_relu)?;
        s.finish()?;
        cfg.train.seed = cfg.seed;

        let mut s = take("data");
        s.set("count", &mut cfg.data.count)?;
        s.set("full_count", &mut cfg.data.full_count)?;
        s.set("holdout", &mut cfg.data.holdout)?;
        if let Some(parts) = s.list::<String>("mix", ',')? {
            let mut mix = Vec::new();
            for part in parts {
                let (name, w) = part
                    .split_once(':')
                    .ok_or_else(|| s.invalid("mix", format!("expected source:weight, got {part:?}")))?;
                let source = match name.trim() {
                    "circles" => PhantomSource::Circles,
                    "prior" => PhantomSource::Prior,
                    "rotated" => PhantomSource::RotatedInclusions,
                    other => return Err(s.invalid("mix", format!("unknown source {other:?}"))),
                };
                let w: f64 = w.trim().parse().map_err(|_| s.invalid("mix", format!("bad weight in {part:?}")))?;
                mix.push((source, w));
            }
            cfg.data.mix = PhantomMix(mix);
        }
        s.finish()?;

        let mut s = take("phantom");
        let kind_key = s.raw("kind");
        let circles = tuples(&mut s, "circles", 3)?;
        let mut angle = 0.0f64;
        s.set("angle", &mut angle)?;
        match kind_key {
            None | Some("circles") if circles.is_some() => {
                cfg.phantom = Phantom::Circles(
                    circles
                        .expect("checked")
                        .into_iter()
                        .map(|v| Circle {
                            center: [v[0], v[1]],
                            radius: v[2],
                        })
                        .collect(),
                )
            }
            None => {}
            Some("circles") => return Err(s.invalid("circles", "circle phantom needs `circles = x y r; ...`")),
            Some("stars") => cfg.phantom = Phantom::Stars(two_inclusion_phantom(&cfg.problem.qpat, angle)),
            Some(other) => return Err(s.invalid("kind", format!("expected circles or stars, got {other:?}"))),
        }
        s.finish()?;

        let mut s = take("bench");
        if let Some(levels) = s.list::<u32>("levels", ',')? {
            cfg.bench.levels = levels;
        }
        s.set("iterations", &mut cfg.bench.iterations)?;
        s.finish()?;

        let mut s = take("hellinger");
        s.set("samples", &mut cfg.hellinger.samples)?;
        s.set("l2_samples", &mut cfg.hellinger.l2_samples)?;
        s.set("noise_level", &mut cfg.hellinger.noise_level)?;
        if let Some(c) = s.list::<usize>("checkpoints", ',')? {
            cfg.hellinger.checkpoints = c;
        }
        s.finish()?;

        let mut s = take(PATHS);
        for (k, slot) in [
            ("dataset", &mut cfg.paths.dataset),
            ("model", &mut cfg.paths.model),
            ("output", &mut cfg.paths.output),
        ] {
            if let Some(v) = s.raw(k) {
                *slot = PathBuf::from(v);
            }
        }
        s.finish()?;

        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gives_eit_defaults() {
        let cfg: RunConfig = "".parse().unwrap();
        assert_eq!(cfg, RunConfig::defaults(ProblemKind::Eit));
    }

    #[test]
    fn values_are_read() {
        let text = "[run]\nproblem = dot\nseed = 9\nnoise_level = 0.04\nfiner = 0\n\
                    [mesh]\nrefinement = 2\n[mcmc]\nburn_in = 10\nsamples = 20\n\
                    [train]\nepochs = 3\nchannels = 4\n[data]\nmix = circles:1\n\
                    [phantom]\ncircles = 0.1 0.2 0.3; -0.2 0 0.15\n\
                    [bench]\nlevels = 1,2,3\n[paths]\noutput = out/x\n";
        let cfg: RunConfig = text.parse().unwrap();
        assert_eq!(cfg.problem.kind, ProblemKind::Dot);
        assert_eq!((cfg.seed, cfg.mcmc.seed, cfg.train.seed), (9, 9, 9));
        assert_eq!((cfg.noise_level, cfg.finer), (0.04, 0));
        assert_eq!(cfg.problem.refinement, 2);
        assert_eq!((cfg.mcmc.burn_in, cfg.mcmc.samples), (10, 20));
        assert_eq!((cfg.train.epochs, cfg.net.channels), (3, 4));
        assert_eq!(cfg.data.mix, PhantomMix::only(PhantomSource::Circles));
        match &cfg.phantom {
            Phantom::Circles(c) => assert_eq!(c.len(), 2),
            p => panic!("{p:?}"),
        }
        assert_eq!(cfg.bench.levels, vec![1, 2, 3]);
        assert_eq!(cfg.paths.output, PathBuf::from("out/x"));
        assert_eq!(cfg.problem.matern.ell, 0.2);
    }

    #[test]
    fn unknown_keys_name_their_path() {
        let err = "[mcmc]\nburnin = 3\n".parse::<RunConfig>().unwrap_err();
        assert!(err.to_string().contains("mcmc.burnin"), "{err}");
        let err = "[nope]\nx = 1\n".parse::<RunConfig>().unwrap_err();
        assert!(matches!(err, ConfigError::UnknownSection(ref s) if s == "nope"));
        let err = "stray = 1\n".parse::<RunConfig>().unwrap_err();
        assert!(matches!(err, ConfigError::UnknownKey(_)));
    }

    #[test]
    fn invalid_values_name_their_path() {
        let err = "[mcmc]\ndelta = abc\n".parse::<RunConfig>().unwrap_err();
        assert!(err.to_string().contains("mcmc.delta"), "{err}");
        let err = "[run]\nproblem = mri\n".parse::<RunConfig>().unwrap_err();
        assert!(err.to_string().contains("run.problem"), "{err}");
        let err = "[data]\nholdout = 1.5\n".parse::<RunConfig>().unwrap_err();
        assert!(err.to_string().contains("data.holdout"), "{err}");
        let err = "[phantom]\ncircles = 0.1 0.2\n".parse::<RunConfig>().unwrap_err();
        assert!(err.to_string().contains("phantom.circles"), "{err}");
        assert!("[mcmc]\ndelta = 0.7\n".parse::<RunConfig>().is_err());
    }
}
