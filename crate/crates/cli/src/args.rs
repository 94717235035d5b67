use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use semtree_core::semantics::Split;
use semtree_core::training::{Objective, TrainConfig};
use semtree_core::Mode;

#[derive(Debug, Parser)]
#[command(name = "semtree", version, about = "Tree-encoded semantic representations for dialogue generation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Delexicalize a corpus and write a data-quality report.
    Prepare(PrepareArgs),
    /// Train a model from scratch.
    Train(TrainArgs),
    /// Fine-tune a checkpoint on a fraction of another domain.
    Adapt(AdaptArgs),
    /// Decode SRs with a checkpoint.
    Generate(GenerateArgs),
    /// Score generated text, or a checkpoint on a corpus split.
    Evaluate(EvaluateArgs),
    /// Run the adaptation matrix over modes, fractions and seeds.
    Sweep(SweepArgs),
    /// Export the attention distributions of one decoded SR.
    Trace(TraceArgs),
    /// Compare analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Emit a synthetic corpus and its ontology.
    Synth(SynthArgs),
}

/// Overrides for fields of the training config. Flags win over the file.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// JSON training config; missing fields take the defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub embed: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub lr_scratch: Option<f64>,
    #[arg(long)]
    pub lr_adapt: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Gradient-norm bound; 0 disables clipping.
    #[arg(long)]
    pub grad_clip: Option<f64>,
    #[arg(long)]
    pub beam: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long, value_enum)]
    pub objective: Option<ObjectiveArg>,
    #[arg(long, value_enum)]
    pub monitor: Option<SplitArg>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long)]
    pub target_ser: Option<f64>,
    #[arg(long)]
    pub target_bleu: Option<f64>,
}

impl ConfigArgs {
    pub fn apply(&self, mut cfg: TrainConfig) -> TrainConfig {
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { cfg.$field = v; })*
            };
        }
        set!(mode, hidden, embed, layers, dropout, lr_scratch, lr_adapt, batch_size, max_epochs, patience, seed, beam, max_len, eval_every);
        if let Some(c) = self.grad_clip {
            cfg.grad_clip = (c > 0.0).then_some(c);
        }
        if let Some(o) = self.objective {
            cfg.objective = Some(o.into());
        }
        if let Some(m) = self.monitor {
            cfg.monitor = m.into();
        }
        if self.target_ser.is_some() {
            cfg.target_ser = self.target_ser;
        }
        if self.target_bleu.is_some() {
            cfg.target_bleu = self.target_bleu;
        }
        cfg
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ObjectiveArg {
    Nll,
    Att,
}

impl From<ObjectiveArg> for Objective {
    fn from(o: ObjectiveArg) -> Self {
        match o {
            ObjectiveArg::Nll => Objective::Nll,
            ObjectiveArg::Att => Objective::Att,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Dev,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Dev => Split::Dev,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub ontology: PathBuf,
    /// Output directory for `delex.jsonl` and `report.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub ontology: PathBuf,
    /// Train on this domain only.
    #[arg(long)]
    pub domain: Option<String>,
    /// Output directory for `checkpoint.json` and `epochs.jsonl`.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct AdaptArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Must match the checkpoint's ontology when given.
    #[arg(long)]
    pub ontology: Option<PathBuf>,
    /// Target domain.
    #[arg(long)]
    pub domain: String,
    /// Fraction of the target training split, in (0, 1].
    #[arg(long)]
    pub fraction: f64,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// JSON Lines with an `sr` field per record (corpus files qualify).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub ontology: Option<PathBuf>,
    /// Only records of this split.
    #[arg(long, value_enum)]
    pub split: Option<SplitArg>,
    #[arg(long)]
    pub beam: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Output JSON Lines file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Reference corpus (JSON Lines with `sr`, `text`, `split`).
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub ontology: Option<PathBuf>,
    /// Generated text aligned line by line with the selected references:
    /// records with `text`, or `generate` output.
    #[arg(long, conflicts_with = "checkpoint")]
    pub hypotheses: Option<PathBuf>,
    /// Decode the references' SRs with this checkpoint instead.
    #[arg(long, required_unless_present = "hypotheses")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub split: Option<SplitArg>,
    #[arg(long)]
    pub domain: Option<String>,
    /// Beam size; greedy decoding when absent.
    #[arg(long)]
    pub beam: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Also report seen and unseen SRs separately (against the train split).
    #[arg(long)]
    pub seen_unseen: bool,
    /// Metrics file; `.csv` selects CSV, anything else JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub ontology: PathBuf,
    #[arg(long)]
    pub source: String,
    #[arg(long)]
    pub target: String,
    #[arg(long, value_delimiter = ',', default_values_t = [0.0125, 0.05, 0.1])]
    pub fractions: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 3, 4, 5])]
    pub seeds: Vec<u64>,
    #[arg(long, value_delimiter = ',', default_values_t = [Mode::TreeAtt, Mode::Flat])]
    pub modes: Vec<Mode>,
    /// Also score every beam hypothesis.
    #[arg(long)]
    pub beam_metrics: bool,
    /// Output directory for `results.csv` and the source checkpoints.
    #[arg(long)]
    pub out: PathBuf,
    /// Training config for the source models; `--config` when absent.
    /// Flag overrides apply to both.
    #[arg(long)]
    pub source_config: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct TraceArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// JSON file holding an SR (a list of entries) or a record with `sr`.
    #[arg(long)]
    pub sr: PathBuf,
    #[arg(long)]
    pub ontology: Option<PathBuf>,
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Output directory for the per-layer CSV matrices and `trace.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Ontology and corpus to take the sentence from; the built-in synthetic
    /// corpus when absent.
    #[arg(long, requires = "corpus")]
    pub ontology: Option<PathBuf>,
    #[arg(long, requires = "ontology")]
    pub corpus: Option<PathBuf>,
    /// 0-based record index of the sentence.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [Mode::TreeAtt, Mode::Tree, Mode::Flat])]
    pub modes: Vec<Mode>,
    #[arg(long, default_value_t = 5)]
    pub hidden: usize,
    /// Parameters are redrawn from U(-s, s); gradients at the training init
    /// are mostly too small to compare against finite differences.
    #[arg(long, default_value_t = 0.5)]
    pub init_scale: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Generator spec (JSON); the built-in two-domain spec when absent.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Output directory for `corpus.jsonl` and `ontology.json`.
    #[arg(long)]
    pub out: PathBuf,
}
