use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context as _, Result};
use clap::{Args, Parser, Subcommand};
use emrkg_cli::config::{ConfigError, Overrides, PipelineConfig};
use emrkg_cli::stages::{self, files, Context};
use emrkg_cli::{exit_code, EXIT_OK, EXIT_USAGE};
use emrkg_core::fusion::FusionConfig;
use emrkg_core::graph;

#[derive(Parser)]
#[command(name = "emrkg", version, about = "Build a disease knowledge graph from annotated clinical records")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Pipeline configuration file (TOML).
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    corpus_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    kb: Option<PathBuf>,
    #[arg(long, global = true)]
    model: Option<PathBuf>,
    /// Minimum cosine similarity for an alignment.
    #[arg(long, global = true)]
    threshold: Option<f64>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// Train without entity replacement and masking.
    #[arg(long, global = true)]
    no_derm: bool,
    /// More log output; repeat for more.
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Convert standoff annotations to BIO.
    Convert,
    /// Split the BIO corpus 8:1:1 and build the augmentation dictionary.
    Split,
    /// Write one epoch of augmented training data with provenance.
    Augment,
    /// Train the tagger.
    Train,
    /// Recognize entities in every record.
    Tag,
    /// Score the tagger on the test split.
    Evaluate,
    /// Load the knowledge base into a graph.
    KbLoad,
    /// Align EMR entities to knowledge-base names.
    Align(AlignArgs),
    /// Merge aligned nodes into the knowledge-base graph.
    Fuse,
    /// Write Cypher statements and CSV files for the fused graph.
    Export,
    /// Follow relations from one node and print the names reached.
    Query(QueryArgs),
    /// Run every stage in order.
    Pipeline,
}

#[derive(Args)]
struct AlignArgs {
    /// Align the names in this file (one per line) instead of the pipeline graph.
    #[arg(long)]
    names: Option<PathBuf>,
    /// Entity type of the names given with --names.
    #[arg(long, default_value = "Disease", requires = "names")]
    label: String,
    /// Write the table here instead of standard output (with --names).
    #[arg(long, requires = "names")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    label: String,
    #[arg(long)]
    name: String,
    /// Relation to follow; repeat to chain hops.
    #[arg(long = "relation", required = true)]
    relations: Vec<String>,
    /// Graph file; defaults to the fused graph in the output directory.
    #[arg(long)]
    graph: Option<PathBuf>,
}

impl Global {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            corpus_dir: self.corpus_dir.clone(),
            kb_file: self.kb.clone(),
            output_dir: self.output_dir.clone(),
            model_file: self.model.clone(),
            threshold: self.threshold,
            epochs: self.epochs,
            no_derm: self.no_derm,
        }
    }

    fn config(&self) -> Result<PipelineConfig> {
        let path = self.config.as_ref().ok_or_else(|| ConfigError::Invalid("this command needs --config".into()))?;
        let mut config = PipelineConfig::load(path)?;
        config.apply(&self.overrides());
        Ok(config)
    }

    fn context(&self) -> Result<Context> {
        Context::new(self.config()?)
    }
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match cli.command {
        Command::Convert => stages::convert(&g.context()?),
        Command::Split => stages::split(&g.context()?),
        Command::Augment => stages::augment(&g.context()?),
        Command::Train => stages::train_stage(&g.context()?),
        Command::Tag => stages::tag(&g.context()?),
        Command::Evaluate => stages::evaluate(&g.context()?),
        Command::KbLoad => stages::kb_load(&g.context()?),
        Command::Align(a) => match &a.names {
            Some(names) => align_names(g, &a, names),
            None => stages::align_stage(&g.context()?),
        },
        Command::Fuse => stages::fuse_stage(&g.context()?),
        Command::Export => stages::export(&g.context()?),
        Command::Query(q) => query(g, &q),
        Command::Pipeline => stages::pipeline(&g.context()?),
    }
}

fn align_names(g: &Global, a: &AlignArgs, names: &PathBuf) -> Result<()> {
    let (kb, mut fusion) = match (&g.kb, &g.config) {
        (Some(kb), None) => (kb.clone(), FusionConfig::default()),
        _ => {
            let c = g.config()?;
            (c.paths.kb_file, c.fusion)
        }
    };
    if let Some(t) = g.threshold {
        fusion.threshold = t;
    }
    let text = std::fs::read_to_string(names).with_context(|| format!("reading {}", names.display()))?;
    let table = stages::align_names(&kb, &a.label, &text, &fusion)?;
    match &a.out {
        Some(path) => std::fs::write(path, table).with_context(|| format!("writing {}", path.display())),
        None => Ok(std::io::stdout().write_all(table.as_bytes())?),
    }
}

fn query(g: &Global, q: &QueryArgs) -> Result<()> {
    let path = match &q.graph {
        Some(p) => p.clone(),
        None => g.config()?.paths.output_dir.join(files::GRAPH),
    };
    let kg = graph::load(&path).with_context(|| format!("loading graph {}", path.display()))?;
    let relations: Vec<&str> = q.relations.iter().map(String::as_str).collect();
    let mut stdout = std::io::stdout().lock();
    for node in graph::pattern_query_chain(&kg, &q.label, &q.name, &relations) {
        writeln!(stdout, "{}", node.name)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { EXIT_OK });
        }
    };
    let level = match cli.global.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::from(EXIT_OK),
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
