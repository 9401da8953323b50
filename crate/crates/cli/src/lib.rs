//! The `amvdsn` command-line pipeline: `synth → pretrain → train → cluster
//! → eval`, plus `ablate` for the shortcut / consistent-layer variants.
//!
//! Every stage reads one TOML [`RunConfig`] and writes its artifacts into
//! the output directory, overwriting earlier runs byte for byte.

pub mod config;
pub mod error;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use amvdsn::clustering::{affinity, spectral_cluster};
use amvdsn::data::{read_labels, save_dataset, write_labels};
use amvdsn::metrics::{evaluate, MetricsReport};
use amvdsn::model::ModelParams;
use amvdsn::numerics::OptimizerKind;
use amvdsn::training::{
    self, load_checkpoint, load_pretrained, run_log, save_checkpoint, save_pretrained, Checkpoint, Init, Pretrained,
};
use clap::{Args, Parser, Subcommand, ValueEnum};

pub use config::{DataFormat, DataSection, RunConfig};
pub use error::{CliError, Result};

pub const DATA_DIR: &str = "data";
pub const SYNTH_SPEC_FILE: &str = "synth.toml";
pub const PRETRAIN_FILE: &str = "pretrain.ckpt";
pub const MODEL_FILE: &str = "model.ckpt";
pub const TRAIN_LOG: &str = "train.log";
pub const LABELS_PRED_FILE: &str = "labels_pred.csv";
pub const METRICS_FILE: &str = "metrics.toml";
pub const ABLATION_FILE: &str = "ablation.csv";

pub fn pretrain_log_file(v: usize) -> String {
    format!("pretrain_view{v}.log")
}

#[derive(Debug, Parser)]
#[command(name = "amvdsn", version, about = "Attentive multi-view deep subspace clustering")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct CommonArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OptimizerArg {
    Adam,
    Sgd,
}

impl From<OptimizerArg> for OptimizerKind {
    fn from(o: OptimizerArg) -> Self {
        match o {
            OptimizerArg::Adam => OptimizerKind::Adam,
            OptimizerArg::Sgd => OptimizerKind::Sgd,
        }
    }
}

#[derive(Debug, Args, Clone, Default)]
pub struct VariantArgs {
    /// Drop the shortcut connections.
    #[arg(long)]
    pub no_shortcut: bool,
    /// Drop the consistent attentive layer.
    #[arg(long)]
    pub no_consistent: bool,
    #[arg(long, value_enum)]
    pub optimizer: Option<OptimizerArg>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a union-of-subspaces dataset.
    Synth {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Pretrain each view's autoencoder.
    Pretrain {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        variant: VariantArgs,
    },
    /// Train the joint model, from scratch or from pretrained weights.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Pretrained checkpoint; encoders stay frozen when given.
        #[arg(long)]
        from_pretrain: Option<PathBuf>,
        #[command(flatten)]
        variant: VariantArgs,
    },
    /// Cluster the samples from a trained checkpoint.
    Cluster {
        #[command(flatten)]
        common: CommonArgs,
        /// Defaults to `<out>/model.ckpt`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Score predicted labels against ground truth.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        /// Defaults to `<out>/labels_pred.csv`.
        #[arg(long)]
        pred: Option<PathBuf>,
        /// Defaults to the labels of the configured dataset.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Train and score all four shortcut / consistent-layer variants.
    Ablate {
        #[command(flatten)]
        common: CommonArgs,
        /// Train every variant from scratch instead of from pretrained weights.
        #[arg(long)]
        scratch: bool,
        #[arg(long, value_enum)]
        optimizer: Option<OptimizerArg>,
    },
}

/// A config with command-line overrides applied.
#[derive(Debug, Clone)]
pub struct Run {
    pub config: RunConfig,
    pub out: PathBuf,
}

impl Run {
    pub fn new(mut config: RunConfig, common: &CommonArgs, variant: &VariantArgs) -> Result<Self> {
        if let Some(seed) = common.seed {
            config.set_seed(seed);
        }
        if let Some(out) = &common.out {
            config.out = out.clone();
        }
        if variant.no_shortcut {
            config.model.use_shortcut = false;
        }
        if variant.no_consistent {
            config.model.use_consistent_layer = false;
        }
        if let Some(o) = variant.optimizer {
            config.train.optimizer = o.into();
        }
        config.validate()?;
        let out = config.out.clone();
        Ok(Run { config, out })
    }

    pub fn load(common: &CommonArgs, variant: &VariantArgs) -> Result<Self> {
        let path = common
            .config
            .as_ref()
            .ok_or_else(|| CliError::Config("--config is required for this command".into()))?;
        Run::new(RunConfig::load(path)?, common, variant)
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.out.join(file)
    }

    fn ensure_out(&self) -> Result<()> {
        fs::create_dir_all(&self.out).map_err(CliError::io(&self.out))
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(CliError::io(path))
}

/// Writes the generated dataset to `<out>/data` with its generator settings beside it.
pub fn cmd_synth(run: &Run) -> Result<PathBuf> {
    let spec = run
        .config
        .synth
        .as_ref()
        .ok_or_else(|| CliError::Config("synth: the config has no [synth] section".into()))?;
    let dataset = amvdsn::data::synth_subspaces(spec)?;
    let dir = run.path(DATA_DIR);
    save_dataset(&dataset, &dir)?;
    let text = toml::to_string(spec).map_err(|e| CliError::Config(e.to_string()))?;
    write_text(&dir.join(SYNTH_SPEC_FILE), &text)?;
    Ok(dir)
}

/// Pretrains, then writes the checkpoint and one loss log per view.
pub fn cmd_pretrain(run: &Run) -> Result<Pretrained> {
    let mut config = run.config.clone();
    let dataset = config.dataset()?;
    let pre = training::pretrain(&dataset, &config.model, &config.train)?;
    run.ensure_out()?;
    for (v, view) in pre.views.iter().enumerate() {
        let mut log = String::new();
        for (epoch, loss) in view.history.iter().enumerate() {
            writeln!(log, "{},{loss}", epoch + 1).expect("writing to a String");
        }
        write_text(&run.path(&pretrain_log_file(v)), &log)?;
    }
    save_pretrained(&pre, run.path(PRETRAIN_FILE))?;
    Ok(pre)
}

fn check_pretrained(pre: &Pretrained, config: &RunConfig, n: usize) -> Result<()> {
    let (a, b) = (&pre.model_config, &config.model);
    if a.view_dims != b.view_dims || a.hidden_dim != b.hidden_dim || a.encoder_depth != b.encoder_depth {
        return Err(CliError::Config(format!(
            "pretrained checkpoint has view_dims {:?}, hidden_dim {}, encoder_depth {}; the config has {:?}, {}, {}",
            a.view_dims, a.hidden_dim, a.encoder_depth, b.view_dims, b.hidden_dim, b.encoder_depth
        )));
    }
    let expected = ModelParams::zeros(b, n)?;
    for (v, view) in pre.views.iter().enumerate() {
        let want: Vec<_> = expected
            .encoder(v)
            .iter()
            .chain(expected.decoder(v).iter())
            .map(|m| m.shape())
            .collect();
        let have: Vec<_> = view.encoder.iter().chain(&view.decoder).map(|m| m.shape()).collect();
        if want != have {
            return Err(CliError::Config(format!(
                "pretrained view {v} has layer shapes {have:?}, expected {want:?}"
            )));
        }
    }
    Ok(())
}

/// Trains from scratch, or in frozen-encoder mode from a pretrained
/// checkpoint, then writes the model checkpoint and the loss log.
pub fn cmd_train(run: &Run, from_pretrain: Option<&Path>) -> Result<Checkpoint> {
    let mut config = run.config.clone();
    let dataset = config.dataset()?;
    let pre = from_pretrain.map(load_pretrained).transpose()?;
    if let Some(pre) = &pre {
        check_pretrained(pre, &config, dataset.n_samples())?;
    }
    let init = pre.as_ref().map_or(Init::Scratch, Init::Pretrained);
    let ckpt = training::train(&dataset, &config.model, &config.train, init)?;
    run.ensure_out()?;
    write_text(&run.path(TRAIN_LOG), &run_log(&ckpt.history))?;
    save_checkpoint(&ckpt, run.path(MODEL_FILE))?;
    Ok(ckpt)
}

/// Labels from the learned coefficients of a checkpoint.
pub fn cluster_checkpoint(ckpt: &Checkpoint, config: &RunConfig) -> Result<Vec<usize>> {
    let a = affinity(ckpt.params.coefficients(), &config.affinity)?;
    Ok(spectral_cluster(&a, config.k, config.seed)?)
}

pub fn cmd_cluster(run: &Run, checkpoint: Option<&Path>) -> Result<Vec<usize>> {
    let path = checkpoint.map_or_else(|| run.path(MODEL_FILE), Path::to_path_buf);
    let ckpt = load_checkpoint(&path)?;
    let labels = cluster_checkpoint(&ckpt, &run.config)?;
    run.ensure_out()?;
    write_labels(&run.path(LABELS_PRED_FILE), &labels)?;
    Ok(labels)
}

/// Scores `pred` against `truth` and writes the report to `<out>`.
pub fn cmd_eval(out: &Path, pred: &Path, truth: &[usize]) -> Result<MetricsReport> {
    let labels = read_labels(pred, None)?;
    let report = evaluate(truth, &labels)?;
    fs::create_dir_all(out).map_err(CliError::io(out))?;
    write_text(&out.join(METRICS_FILE), &report.to_toml())?;
    Ok(report)
}

/// Ground truth of the configured dataset.
pub fn config_labels(config: &RunConfig) -> Result<Vec<usize>> {
    let mut config = config.clone();
    let dataset = config.dataset()?;
    dataset
        .labels()
        .map(<[usize]>::to_vec)
        .ok_or_else(|| CliError::Config("the dataset has no labels; pass --truth".into()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: &'static str,
    pub shortcut: bool,
    pub consistent: bool,
    pub final_loss: f64,
    pub report: MetricsReport,
}

pub const VARIANTS: [(&str, bool, bool); 4] = [
    ("full", true, true),
    ("no_shortcut", false, true),
    ("no_consistent", true, false),
    ("no_shortcut_no_consistent", false, false),
];

/// Trains and scores every variant; pretraining, when used, runs once and
/// is shared since the autoencoders do not depend on the variant.
pub fn cmd_ablate(run: &Run, scratch: bool) -> Result<Vec<AblationRow>> {
    let mut config = run.config.clone();
    let dataset = config.dataset()?;
    let truth = dataset
        .labels()
        .ok_or_else(|| CliError::Config("ablation needs a labelled dataset".into()))?;
    let pre = if scratch {
        None
    } else {
        Some(training::pretrain(&dataset, &config.model, &config.train)?)
    };
    let mut rows = Vec::new();
    for (variant, shortcut, consistent) in VARIANTS {
        let mut c = config.clone();
        c.model.use_shortcut = shortcut;
        c.model.use_consistent_layer = consistent;
        let init = pre.as_ref().map_or(Init::Scratch, Init::Pretrained);
        let ckpt = training::train(&dataset, &c.model, &c.train, init)?;
        let labels = cluster_checkpoint(&ckpt, &c)?;
        rows.push(AblationRow {
            variant,
            shortcut,
            consistent,
            final_loss: ckpt.history.last().map_or(f64::NAN, |t| t.total),
            report: evaluate(truth, &labels)?,
        });
    }
    let mut csv = String::from("variant,shortcut,consistent,final_loss,acc,nmi,ari,precision,recall,f_score\n");
    for r in &rows {
        let m = &r.report;
        writeln!(
            csv,
            "{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.variant, r.shortcut, r.consistent, r.final_loss, m.acc, m.nmi, m.ari, m.precision, m.recall, m.f_score
        )
        .expect("writing to a String");
    }
    run.ensure_out()?;
    write_text(&run.path(ABLATION_FILE), &csv)?;
    Ok(rows)
}

/// Executes one parsed command line.
pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { common } => {
            let dir = cmd_synth(&Run::load(&common, &VariantArgs::default())?)?;
            println!("wrote {}", dir.display());
        }
        Command::Pretrain { common, variant } => {
            let run = Run::load(&common, &variant)?;
            let pre = cmd_pretrain(&run)?;
            for (v, view) in pre.views.iter().enumerate() {
                println!(
                    "view {v}: {} epochs, best loss {:.6e}",
                    view.history.len(),
                    view.best_loss
                );
            }
        }
        Command::Train {
            common,
            from_pretrain,
            variant,
        } => {
            let run = Run::load(&common, &variant)?;
            let ckpt = cmd_train(&run, from_pretrain.as_deref())?;
            if let Some(last) = ckpt.history.last() {
                println!("{} epochs, final loss {:.6e}", ckpt.history.len(), last.total);
            }
        }
        Command::Cluster { common, checkpoint } => {
            let run = Run::load(&common, &VariantArgs::default())?;
            let labels = cmd_cluster(&run, checkpoint.as_deref())?;
            println!("clustered {} samples", labels.len());
        }
        Command::Eval { common, pred, truth } => {
            let run = match &common.config {
                Some(_) => Some(Run::load(&common, &VariantArgs::default())?),
                None => None,
            };
            let out = common
                .out
                .clone()
                .or_else(|| run.as_ref().map(|r| r.out.clone()))
                .unwrap_or_else(|| PathBuf::from("."));
            let truth = match (truth, &run) {
                (Some(path), _) => read_labels(&path, None)?,
                (None, Some(run)) => config_labels(&run.config)?,
                (None, None) => return Err(CliError::Config("eval needs --truth or --config".into())),
            };
            let pred = pred.unwrap_or_else(|| out.join(LABELS_PRED_FILE));
            print!("{}", cmd_eval(&out, &pred, &truth)?.to_toml());
        }
        Command::Ablate {
            common,
            scratch,
            optimizer,
        } => {
            let variant = VariantArgs {
                optimizer,
                ..VariantArgs::default()
            };
            let run = Run::load(&common, &variant)?;
            for r in cmd_ablate(&run, scratch)? {
                println!("{}: loss {:.6e}, acc {:.6}", r.variant, r.final_loss, r.report.acc);
            }
        }
    }
    Ok(())
}
