//! Command surface for the captioning pipeline. Every subcommand reads its
//! inputs from files written by earlier subcommands.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dcc::caption::{CaptionTrainConfig, Regime};
use dcc::checkpoint::{load_caption, load_language_model, load_lexical, save_caption, save_language_model, save_lexical};
use dcc::config::RunConfig;
use dcc::corpus::{
    default_stopwords, generate_synthetic_dataset, load_paired, load_text, mine_concepts, save_concepts, tokenize,
    SyntheticConfig,
};
use dcc::embeddings::EmbeddingTable;
use dcc::eval::{evaluate_captions, evaluate_run, generate_all};
use dcc::pipeline::{
    caption_stage, caption_vocabulary, embedding_stage, language_model_stage, lexical_stage, paired_words, run_pipeline,
    Corpora,
};
use dcc::transfer::{apply_transfer, build_transfer_plan, TransferOptions, TransferPlan};

#[derive(Parser, Debug)]
#[command(name = "dcc", version, about = "Compositional captioning with weight transfer to novel words")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Run configuration (JSON); stage hyperparameters are taken from it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn run_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
            None => {
                let mut c = RunConfig::default();
                c.apply_env()?;
                c
            }
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg.effective())
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic corpora.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Emit frame lists instead of single feature vectors.
        #[arg(long)]
        video: bool,
    },
    /// Pick concept words from caption text by frequency.
    MineConcepts {
        /// Caption text, one sentence per line.
        #[arg(long)]
        text: PathBuf,
        #[arg(long)]
        top_k: usize,
        /// Comma-separated novel words appended to the concept set.
        #[arg(long, value_delimiter = ',')]
        novel: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train word embeddings on the unpaired text of a data directory.
    TrainEmbeddings {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the lexical concept classifier.
    TrainLexical {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the language model on unpaired text.
    TrainLm {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the multimodal caption unit on paired data.
    TrainCaption {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        lexical: PathBuf,
        #[arg(long)]
        lm: PathBuf,
        #[arg(long, default_value = "direct")]
        regime: Regime,
        #[arg(long)]
        out: PathBuf,
    },
    /// Transfer weights from paired source words to the novel words.
    Transfer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "direct")]
        method: Regime,
        #[arg(long, default_value_t = 1)]
        n: usize,
        /// `auto` ranks sources by embedding similarity; otherwise a plan file.
        #[arg(long, default_value = "auto")]
        plan: String,
        /// Embeddings, required with `--plan auto`.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Data directory, required with `--plan auto`.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Where to write the plan that was applied.
        #[arg(long)]
        plan_out: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Caption every example of a JSONL file.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        max_len: Option<usize>,
        /// Defaults to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a model (or a captions file) against references.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Model to caption with; alternatively pass `--captions`.
        #[arg(long, conflicts_with = "captions")]
        model: Option<PathBuf>,
        /// Captions as written by `generate` (`id<TAB>caption` per line).
        #[arg(long)]
        captions: Option<PathBuf>,
        /// Test examples with reference captions.
        #[arg(long)]
        refs: PathBuf,
        /// Novel words to score; defaults to the model's novel concepts.
        #[arg(long, value_delimiter = ',')]
        novel: Vec<String>,
        #[arg(long)]
        max_len: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every stage from one config and write report.json.
    Pipeline {
        #[command(flatten)]
        common: Common,
        /// Overrides the configured output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parses `argv` (including the program name) and runs the command.
/// Returns 0 on success, 2 on a usage error and 1 when a stage fails.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            1
        }
    }
}

fn read_captions(path: &Path) -> Result<Vec<(String, Vec<String>)>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| match l.split_once('\t') {
            Some((id, cap)) => (id.to_string(), tokenize(cap)),
            None => (String::new(), tokenize(l)),
        })
        .collect())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth { common, out, video } => {
            let cfg = common.run_config()?;
            let mut synth: SyntheticConfig = cfg.synth;
            if video && synth.frames.is_none() {
                synth.frames = Some(dcc::corpus::FrameSpec { min: 3, max: 6 });
            }
            generate_synthetic_dataset(&synth)?.save(&out)?;
        }
        Command::MineConcepts { text, top_k, novel, out } => {
            let sentences = load_text(&text)?;
            let concepts = mine_concepts(&sentences, top_k, &default_stopwords(), &novel)?;
            save_concepts(&concepts, &out)?;
        }
        Command::TrainEmbeddings { common, data, out } => {
            let cfg = common.run_config()?;
            let corpora = Corpora::load(&data)?;
            let vocab = caption_vocabulary(&corpora.unpaired_text, &corpora.paired, cfg.vocab_min_count);
            embedding_stage(&corpora, &vocab, &cfg.embeddings)?.save(&out)?;
        }
        Command::TrainLexical { common, data, out } => {
            let cfg = common.run_config()?;
            let corpora = Corpora::load(&data)?;
            let params = lexical_stage(&corpora, &cfg.lexical)?;
            save_lexical(&params, serde_json::to_value(&cfg.lexical)?, &out)?;
        }
        Command::TrainLm { common, data, out } => {
            let cfg = common.run_config()?;
            let corpora = Corpora::load(&data)?;
            let vocab = caption_vocabulary(&corpora.unpaired_text, &corpora.paired, cfg.vocab_min_count);
            let lm = language_model_stage(&corpora, &vocab, &cfg.lm)?;
            save_language_model(&lm, &vocab, serde_json::to_value(&cfg.lm)?, &out)?;
        }
        Command::TrainCaption { common, data, lexical, lm, regime, out } => {
            let cfg = common.run_config()?;
            let corpora = Corpora::load(&data)?;
            corpora.check_heldout()?;
            let lexical = load_lexical(&lexical)?;
            let (lm, vocab) = load_language_model(&lm)?;
            let caption_cfg = CaptionTrainConfig { regime, ..cfg.caption };
            let model = caption_stage(&corpora, &lexical, &lm, &vocab, &caption_cfg)?;
            save_caption(&model, serde_json::to_value(&caption_cfg)?, &out)?;
        }
        Command::Transfer { common, model, method, n, plan, embeddings, data, plan_out, out } => {
            let cfg = common.run_config()?;
            let params = load_caption(&model)?;
            let plan = if plan == "auto" {
                let (Some(emb), Some(data)) = (embeddings, data) else {
                    bail!("--plan auto needs --embeddings and --data");
                };
                let table = EmbeddingTable::load(&emb)?;
                let paired = load_paired(&data.join("paired.jsonl"))?;
                let novel: Vec<String> = params.concepts().novel_words().map(String::from).collect();
                build_transfer_plan(&novel, &table, params.vocab(), params.concepts(), &paired_words(&paired), method, n)?
            } else {
                let p = TransferPlan::load(Path::new(&plan)).with_context(|| format!("reading plan {plan}"))?;
                if p.method != method {
                    bail!("plan method is {} but --method is {method}", p.method);
                }
                p
            };
            let edited = apply_transfer(&params, &plan, TransferOptions { delta_bias: cfg.transfer.delta_bias })?;
            if let Some(p) = plan_out {
                plan.save(&p)?;
            }
            save_caption(&edited, serde_json::to_value(&plan)?, &out)?;
        }
        Command::Generate { common, model, input, max_len, out } => {
            let cfg = common.run_config()?;
            let params = load_caption(&model)?;
            let examples = load_paired(&input)?;
            let captions = generate_all(&params, &examples, max_len.unwrap_or(cfg.max_len))?;
            let mut text = String::new();
            for (ex, cap) in examples.iter().zip(&captions) {
                text.push_str(&format!("{}\t{}\n", ex.id, cap.join(" ")));
            }
            match out {
                Some(p) => std::fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{text}"),
            }
        }
        Command::Evaluate { common, model, captions, refs, novel, max_len, out } => {
            let cfg = common.run_config()?;
            let test = load_paired(&refs)?;
            let references: Vec<Vec<Vec<String>>> = test.iter().map(|e| e.captions.clone()).collect();
            let echo = serde_json::json!({"refs": refs, "max_len": max_len.unwrap_or(cfg.max_len)});
            let report = match (model, captions) {
                (Some(m), None) => {
                    let params = load_caption(&m)?;
                    let novel = if novel.is_empty() {
                        params.concepts().novel_words().map(String::from).collect()
                    } else {
                        novel
                    };
                    evaluate_run(&params, &test, &novel, max_len.unwrap_or(cfg.max_len), echo)?.0
                }
                (None, Some(c)) => {
                    if novel.is_empty() {
                        bail!("--captions needs --novel");
                    }
                    let hyps: Vec<Vec<String>> = read_captions(&c)?.into_iter().map(|(_, t)| t).collect();
                    evaluate_captions(&hyps, &references, &novel, echo)?
                }
                _ => bail!("pass exactly one of --model or --captions"),
            };
            match out {
                Some(p) => report.save(&p)?,
                None => println!("{}", report.to_json()),
            }
        }
        Command::Pipeline { common, out } => {
            let mut cfg = match &common.config {
                Some(p) => RunConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
                None => {
                    let mut c = RunConfig::default();
                    c.apply_env()?;
                    c
                }
            };
            if let Some(s) = common.seed {
                cfg.seed = s;
            }
            if let Some(o) = out {
                cfg.out_dir = o;
            }
            let outcome = run_pipeline(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&outcome.summary())?);
        }
    }
    Ok(())
}
