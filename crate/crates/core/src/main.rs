use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};
use thiserror::Error;

use mcmcnet::analysis::{scaling_study, write_field_csv, write_scaling_csv, AnalysisError, ErrorReport};
use mcmcnet::config::{ConfigError, RunConfig};
use mcmcnet::datagen::{config_hash, generate_dataset, load_dataset, save_dataset, split, DataSet, DatagenError};
use mcmcnet::experiment::{
    checkpoint_study, invert_fem, invert_net, observe, plane_targets, train_surrogate, write_checkpoint_csv,
    Inversion, PosteriorProbe,
};
use mcmcnet::fem::{FemError, ProblemKind};
use mcmcnet::mcmc::McmcError;
use mcmcnet::mesh::MeshError;
use mcmcnet::problem::{Problem, ProblemError};
use mcmcnet::surrogate::{dataset_mse, load_model, save_model, SurrogateError, SurrogateNet};

const NOISE_STREAM: u64 = 0x6e_6f_69_73_65;
const PROBE_STREAM: u64 = 0x70_72_6f_62_65;

#[derive(Parser, Debug)]
#[command(name = "mcmcnet", version, about = "pCN inversion with FEM or surrogate forward models")]
struct Cli {
    /// INI run configuration; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `paths.output`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Use the full dataset size instead of the desk-scale one.
    #[arg(long, global = true)]
    full_scale: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the reconstruction mesh.
    Mesh,
    /// Generate the training dataset.
    Datagen,
    /// Train the surrogate on the dataset.
    Train,
    /// Invert the configured phantom with one backend.
    Invert {
        #[arg(long, value_enum, default_value_t = BackendArg::Fem)]
        backend: BackendArg,
    },
    /// Invert the configured phantom with both backends.
    Compare,
    /// Time fixed-length chains across refinement levels.
    Bench,
    /// L²(μ) error and Hellinger distance over training checkpoints.
    Hellinger,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum BackendArg {
    Fem,
    Net,
}

impl BackendArg {
    fn name(self) -> &'static str {
        match self {
            BackendArg::Fem => "fem",
            BackendArg::Net => "net",
        }
    }
}

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("missing {what} {path}; {hint}")]
    Missing {
        what: &'static str,
        path: PathBuf,
        hint: &'static str,
    },
    #[error("{0}")]
    Mismatch(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Datagen(#[from] DatagenError),
    #[error(transparent)]
    Surrogate(#[from] SurrogateError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Mcmc(#[from] McmcError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Fem(#[from] FemError),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Missing { .. } | CliError::Mismatch(_) => 3,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Everything a run was derived from; written as `manifest.txt`.
struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    fn new(command: &str, cli: &Cli, cfg: &RunConfig, config_text: &str) -> Self {
        let mut m = Manifest { entries: Vec::new() };
        m.push("command", command);
        m.push("version", env!("CARGO_PKG_VERSION"));
        m.push("problem", cfg.problem.kind.as_str());
        m.push("seed", cfg.seed.to_string());
        m.push("full_scale", cli.full_scale.to_string());
        m.push(
            "config",
            cli.config.as_ref().map_or("defaults".into(), |p| p.display().to_string()),
        );
        m.push("config_sha256", sha256_hex(config_text.as_bytes()));
        m
    }

    fn push(&mut self, key: &str, value: impl Into<String>) {
        self.entries.push((key.to_string(), value.into()));
    }

    fn input_file(&mut self, key: &str, path: &Path) -> Result<(), CliError> {
        let bytes = fs::read(path).map_err(io_err(path))?;
        self.push(&format!("{key}_path"), path.display().to_string());
        self.push(&format!("{key}_sha256"), sha256_hex(&bytes));
        Ok(())
    }

    fn write(&self, dir: &Path) -> Result<(), CliError> {
        let path = dir.join("manifest.txt");
        let text: String = self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
        fs::write(&path, text).map_err(io_err(&path))
    }
}

struct Run {
    cfg: RunConfig,
    out: PathBuf,
    manifest: Manifest,
}

impl Run {
    fn create(&self, name: &str) -> Result<BufWriter<File>, CliError> {
        let path = self.out.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        Ok(BufWriter::new(File::create(&path).map_err(io_err(&path))?))
    }

    fn write_with<F>(&self, name: &str, body: F) -> Result<(), CliError>
    where
        F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
    {
        let path = self.out.join(name);
        let mut w = self.create(name)?;
        body(&mut w).and_then(|_| w.flush()).map_err(io_err(&path))
    }

    fn problem(&self) -> Result<Problem, CliError> {
        Ok(Problem::new(self.cfg.problem.clone())?)
    }

    fn dataset(&mut self, problem: &Problem) -> Result<DataSet, CliError> {
        let path = self.cfg.paths.dataset.clone();
        if !path.exists() {
            return Err(CliError::Missing {
                what: "dataset",
                path,
                hint: "run `mcmcnet datagen` first",
            });
        }
        let ds = load_dataset(&path)?;
        if ds.problem != problem.kind() || ds.input_dim != problem.input_dim() {
            return Err(CliError::Mismatch(format!(
                "dataset {} holds {} pairs with input size {}, configuration expects {} with input size {}",
                path.display(),
                ds.problem,
                ds.input_dim,
                problem.kind(),
                problem.input_dim()
            )));
        }
        if ds.config_hash != config_hash(problem, &self.cfg.data.mix) {
            return Err(CliError::Mismatch(format!(
                "dataset {} was generated from a different problem or mix configuration",
                path.display()
            )));
        }
        self.manifest.input_file("dataset", &path)?;
        Ok(ds)
    }

    fn model(&mut self, problem: &Problem) -> Result<SurrogateNet, CliError> {
        let path = self.cfg.paths.model.clone();
        if !path.exists() {
            return Err(CliError::Missing {
                what: "model",
                path,
                hint: "run `mcmcnet train` first",
            });
        }
        let net = load_model(&path)?;
        if net.arch.input_dim != problem.input_dim() {
            return Err(CliError::Mismatch(format!(
                "model {} takes {} inputs, the problem has {}",
                path.display(),
                net.arch.input_dim,
                problem.input_dim()
            )));
        }
        self.manifest.input_file("model", &path)?;
        Ok(net)
    }

    fn inversion(&self, problem: &Problem, net: Option<&SurrogateNet>, prefix: &str) -> Result<Inversion, CliError> {
        let cfg = &self.cfg;
        let y = observe(problem, &cfg.phantom, cfg.noise_level, cfg.finer, cfg.seed ^ NOISE_STREAM)?;
        self.write_with("observation.csv", |w| {
            y.write_csv(w).map_err(|e| std::io::Error::other(e.to_string()))
        })?;
        let inv = match net {
            None => invert_fem(problem, &y, &cfg.phantom, &cfg.mcmc)?,
            Some(net) => invert_net(problem, net, &y, &cfg.phantom, &cfg.mcmc)?,
        };
        inv.chain.write_dir(&self.out.join("chain").join(prefix))?;
        let c = problem.centroids();
        let r = &inv.recon;
        let (truth, _) = mcmcnet::analysis::phantom_truth(problem, &self.cfg.phantom)?;
        for (name, values) in [
            ("mean", &r.field.values),
            ("lower", &r.lower.values),
            ("upper", &r.upper.values),
            ("truth", &truth.values),
        ] {
            self.write_with(&format!("fields/{prefix}_{name}.csv"), |w| write_field_csv(c, values, w))?;
        }
        Ok(inv)
    }
}

const METRICS_HEADER: &str = "backend,acceptance,support_mae,baseline_support_mae";

fn metrics_row(backend: BackendArg, inv: &Inversion) -> String {
    format!(
        "{},{:e},{:e},{:e},{}",
        backend.name(),
        inv.chain.post_burn_in_acceptance(),
        inv.support_mae,
        inv.baseline_support_mae,
        inv.report.csv_row()
    )
}

fn cmd_mesh(run: &mut Run) -> Result<(), CliError> {
    let problem = run.problem()?;
    run.manifest.push("triangles", problem.mesh.tri_count().to_string());
    run.write_with("mesh.txt", |w| {
        problem.mesh.write_text(w).map_err(|e| std::io::Error::other(e.to_string()))
    })
}

fn cmd_datagen(run: &mut Run, full_scale: bool) -> Result<(), CliError> {
    let problem = run.problem()?;
    let n = run.cfg.dataset_count(full_scale);
    let (ds, stats) = generate_dataset(&problem, n, &run.cfg.data.mix, run.cfg.seed)?;
    if stats.retries > 0 {
        eprintln!("datagen: {} draws resampled after FEM failures", stats.retries);
    }
    let path = &run.cfg.paths.dataset;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    save_dataset(&ds, path)?;
    run.manifest.push("pairs", n.to_string());
    run.manifest.push("retries", stats.retries.to_string());
    run.manifest.input_file("dataset", path)
}

fn cmd_train(run: &mut Run) -> Result<(), CliError> {
    let problem = run.problem()?;
    let ds = run.dataset(&problem)?;
    let (train, val) = split(&ds, run.cfg.data.holdout, run.cfg.seed)?;
    let val_targets = plane_targets(&val);
    let arch = run.cfg.net.architecture(problem.input_dim());
    let mut val_loss = Vec::new();
    let (net, history) = train_surrogate(&train, arch, &run.cfg.train, |t| -> Result<(), SurrogateError> {
        val_loss.push(dataset_mse(&t.net, &val.inputs, &val_targets)?);
        Ok(())
    })?;
    let path = &run.cfg.paths.model;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    save_model(&net, path)?;
    run.write_with("loss.csv", |w| {
        writeln!(w, "epoch,train_loss,val_loss,lr")?;
        for (r, v) in history.iter().zip(&val_loss) {
            writeln!(w, "{},{:e},{:e},{:e}", r.epoch, r.loss, v, r.lr)?;
        }
        Ok(())
    })?;
    run.manifest.push("train_pairs", train.len().to_string());
    run.manifest.push("validation_pairs", val.len().to_string());
    run.manifest.input_file("model", path)
}

fn cmd_invert(run: &mut Run, backend: BackendArg) -> Result<(), CliError> {
    let problem = run.problem()?;
    run.manifest.push("backend", backend.name());
    let net = match backend {
        BackendArg::Fem => None,
        BackendArg::Net => Some(run.model(&problem)?),
    };
    let inv = run.inversion(&problem, net.as_ref(), backend.name())?;
    let row = metrics_row(backend, &inv);
    run.write_with("metrics.csv", |w| {
        writeln!(w, "{METRICS_HEADER},{}", ErrorReport::CSV_HEADER)?;
        writeln!(w, "{row}")
    })
}

fn cmd_compare(run: &mut Run) -> Result<(), CliError> {
    let problem = run.problem()?;
    let net = run.model(&problem)?;
    let mut rows = Vec::new();
    for (backend, net) in [(BackendArg::Fem, None), (BackendArg::Net, Some(&net))] {
        let inv = run.inversion(&problem, net, backend.name())?;
        rows.push(metrics_row(backend, &inv));
    }
    run.write_with("metrics.csv", |w| {
        writeln!(w, "{METRICS_HEADER},{}", ErrorReport::CSV_HEADER)?;
        rows.iter().try_for_each(|r| writeln!(w, "{r}"))
    })
}

fn cmd_bench(run: &mut Run) -> Result<(), CliError> {
    let b = &run.cfg.bench;
    let rows = scaling_study(&run.cfg.problem, &b.levels, b.iterations, run.cfg.net.channels, run.cfg.seed)?;
    run.write_with("scaling.csv", |w| write_scaling_csv(&rows, w))
}

fn cmd_hellinger(run: &mut Run) -> Result<(), CliError> {
    let problem = run.problem()?;
    let ds = run.dataset(&problem)?;
    let cfg = &run.cfg;
    let h = &cfg.hellinger;
    let y = observe(&problem, &cfg.phantom, h.noise_level, cfg.finer, cfg.seed ^ NOISE_STREAM)?;
    let probe = PosteriorProbe::new(&problem, y, h.samples, h.l2_samples, cfg.seed ^ PROBE_STREAM)?;
    let arch = cfg.net.architecture(problem.input_dim());
    let rows = checkpoint_study(&problem, &ds, arch, &cfg.train, &h.checkpoints, &probe)?;
    run.write_with("hellinger.csv", |w| write_checkpoint_csv(&rows, w))
}

fn load_config(cli: &Cli) -> Result<(RunConfig, String), CliError> {
    let (mut cfg, text) = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| ConfigError::Io {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
            (text.parse::<RunConfig>()?, text)
        }
        None => (RunConfig::defaults(ProblemKind::Eit), String::new()),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.mcmc.seed = seed;
        cfg.train.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.paths.output = out.clone();
    }
    Ok((cfg, text))
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let (cfg, text) = load_config(cli)?;
    let name = match cli.command {
        Command::Mesh => "mesh",
        Command::Datagen => "datagen",
        Command::Train => "train",
        Command::Invert { .. } => "invert",
        Command::Compare => "compare",
        Command::Bench => "bench",
        Command::Hellinger => "hellinger",
    };
    let out = cfg.paths.output.clone();
    fs::create_dir_all(&out).map_err(io_err(&out))?;
    if cli.config.is_some() {
        let copy = out.join("config.ini");
        fs::write(&copy, &text).map_err(io_err(&copy))?;
    }
    let mut run = Run {
        manifest: Manifest::new(name, cli, &cfg, &text),
        cfg,
        out,
    };
    match cli.command {
        Command::Mesh => cmd_mesh(&mut run)?,
        Command::Datagen => cmd_datagen(&mut run, cli.full_scale)?,
        Command::Train => cmd_train(&mut run)?,
        Command::Invert { backend } => cmd_invert(&mut run, backend)?,
        Command::Compare => cmd_compare(&mut run)?,
        Command::Bench => cmd_bench(&mut run)?,
        Command::Hellinger => cmd_hellinger(&mut run)?,
    }
    run.manifest.write(&run.out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
