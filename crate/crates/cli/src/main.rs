use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};
use protok::benchtasks::{self, Split, TaskManifest};
use protok::corpus::{self, Corpus, FastaOptions, SplitSpec};
use protok::metrics::compression_stats;
use protok::mlm::{self, MaskConfig, DEFAULT_ALPHA, DEFAULT_MASK_RATE};
use protok::synth::SynthConfig;
use protok::tokenizer::{Method, Tokenizer};
use protok::vocab::BASE_VOCAB_SIZE;

mod tokens;

const SWEEP_SIZES: [usize; 7] = [50, 100, 200, 400, 800, 1600, 3200];

/// Train and evaluate protein sub-word tokenizers.
///
/// Log verbosity follows RUST_LOG (default: warn).
#[derive(Parser, Debug)]
#[command(name = "protok", version)]
struct Cli {
    /// Seed for every randomized step; printed in output headers.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Io {
    /// Input file, `-` for stdin.
    #[arg(long = "in", default_value = "-")]
    input: PathBuf,
    /// Output file; stdout when omitted.
    #[arg(long = "out")]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct Fasta {
    /// Truncate longer sequences to this many residues (0 disables).
    #[arg(long, default_value_t = corpus::DEFAULT_MAX_LEN)]
    max_len: usize,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a tokenizer on a FASTA corpus and write the model file.
    Train {
        #[arg(long)]
        method: Method,
        #[arg(long, default_value_t = BASE_VOCAB_SIZE)]
        vocab_size: usize,
        #[command(flatten)]
        io: Io,
        #[command(flatten)]
        fasta: Fasta,
    },
    /// Encode FASTA sequences into token-id lines.
    Encode {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        io: Io,
        #[command(flatten)]
        fasta: Fasta,
    },
    /// Decode token-id lines back into FASTA.
    Decode {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        io: Io,
        /// FASTA line width.
        #[arg(long, default_value_t = 60)]
        width: usize,
    },
    /// Mask token-id lines and write the masking plan.
    Mask {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        io: Io,
        /// Plan file: masked positions and original ids per sequence.
        #[arg(long)]
        plan: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MASK_RATE)]
        mask_rate: f64,
        /// Replace 80% with <mask>, 10% with a random token, keep 10%.
        #[arg(long)]
        bert_split: bool,
    },
    /// Compression report of a model over a FASTA corpus.
    Stats {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        io: Io,
        #[command(flatten)]
        fasta: Fasta,
    },
    /// Perplexity sweep over methods and vocabulary sizes.
    Sweep(SweepArgs),
    /// Benchmark-task manifests.
    Manifest {
        #[command(subcommand)]
        command: ManifestCommand,
    },
    /// Score predictions against a split's labels with the manifest metric.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        /// One prediction per line, in the split file's label grammar.
        #[arg(long)]
        predictions: PathBuf,
        /// Split CSV with the labels; defaults to the manifest's split under --root.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        root: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
    },
    /// Print corpus statistics for a FASTA file.
    Summary {
        #[command(flatten)]
        io: Io,
        #[command(flatten)]
        fasta: Fasta,
    },
    /// Split a FASTA file into training and held-out files.
    Split {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        validation: PathBuf,
        #[arg(long)]
        holdout: usize,
        #[command(flatten)]
        fasta: Fasta,
    },
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Training corpus (FASTA). Without it a synthetic corpus is generated.
    #[arg(long)]
    train: Option<PathBuf>,
    /// Validation corpus; when omitted, --holdout sequences are drawn from the training corpus.
    #[arg(long)]
    validation: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    holdout: usize,
    /// Number of synthetic sequences when no training corpus is given.
    #[arg(long, default_value_t = 10_000)]
    synthetic: usize,
    #[arg(long, value_delimiter = ',', default_value = "bpe,unigram")]
    methods: Vec<Method>,
    #[arg(long, value_delimiter = ',', default_values_t = SWEEP_SIZES)]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    /// Output table; stdout when omitted.
    #[arg(long = "out")]
    output: Option<PathBuf>,
    /// Also write the rows as metric records.
    #[arg(long)]
    records: Option<PathBuf>,
    #[command(flatten)]
    fasta: Fasta,
}

#[derive(Subcommand, Debug)]
enum ManifestCommand {
    /// Load each manifest (files or directories of *.manifest files).
    Validate {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        /// Also load every split file relative to this dataset root.
        #[arg(long)]
        root: Option<PathBuf>,
    },
}

fn display(p: &Path) -> String {
    if p == Path::new("-") {
        "<stdin>".into()
    } else {
        p.display().to_string()
    }
}

fn read_input(p: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    if p == Path::new("-") {
        std::io::stdin().read_to_end(&mut buf).context("<stdin>")?;
    } else {
        buf = std::fs::read(p).with_context(|| display(p))?;
    }
    Ok(buf)
}

fn write_output(p: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match p {
        Some(p) => std::fs::write(p, bytes).with_context(|| display(p)),
        None => std::io::stdout().lock().write_all(bytes).context("<stdout>"),
    }
}

fn check_distinct(input: &Path, output: Option<&Path>) -> Result<()> {
    if let Some(out) = output {
        ensure!(input != out || input == Path::new("-"), "{}: input and output paths must differ", display(out));
    }
    Ok(())
}

fn read_fasta(p: &Path, fasta: &Fasta) -> Result<Corpus> {
    let opts = FastaOptions { max_len: (fasta.max_len > 0).then_some(fasta.max_len), source: display(p) };
    let (c, _) = corpus::parse_fasta_with(&read_input(p)?, &opts).with_context(|| display(p))?;
    Ok(c)
}

fn read_model(p: &Path) -> Result<Tokenizer> {
    Tokenizer::load(&read_input(p)?).with_context(|| display(p))
}

fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Train { method, vocab_size, io, fasta } => {
            check_distinct(&io.input, io.output.as_deref())?;
            let Some(out) = io.output.as_deref() else { bail!("train needs --out") };
            let c = read_fasta(&io.input, &fasta)?;
            let trained = Tokenizer::train(method, &c, vocab_size)?;
            if let Some(missing) = trained.shortfall {
                log::warn!("{method}: corpus supports only {} of {vocab_size} pieces ({missing} short)", vocab_size - missing);
            }
            write_output(Some(out), &trained.model.save())?;
        }
        Command::Encode { model, io, fasta } => {
            check_distinct(&io.input, io.output.as_deref())?;
            let tok = read_model(&model)?;
            let c = read_fasta(&io.input, &fasta)?;
            let mut out = tokens::header(&[
                ("seed", seed.to_string()),
                ("method", tok.method().to_string()),
                ("vocab_size", tok.vocab().size().to_string()),
            ]);
            for s in c.iter() {
                tokens::write_line(&mut out, s.id(), &tok.encode(s).ids);
            }
            write_output(io.output.as_deref(), out.as_bytes())?;
        }
        Command::Decode { model, io, width } => {
            check_distinct(&io.input, io.output.as_deref())?;
            let tok = read_model(&model)?;
            let file = display(&io.input);
            let text = String::from_utf8(read_input(&io.input)?).with_context(|| file.clone())?;
            let mut out = String::new();
            for t in tokens::parse(&text, &file, tok.vocab().size())? {
                let residues = tok.decode(&t.ids).with_context(|| format!("{file}: record {}", t.source_id))?;
                out.push('>');
                out.push_str(&t.source_id);
                out.push('\n');
                let bytes = residues.as_bytes();
                for chunk in bytes.chunks(width.max(1)) {
                    out.push_str(std::str::from_utf8(chunk).unwrap());
                    out.push('\n');
                }
            }
            write_output(io.output.as_deref(), out.as_bytes())?;
        }
        Command::Mask { model, io, plan, mask_rate, bert_split } => {
            check_distinct(&io.input, io.output.as_deref())?;
            ensure!(io.output.as_deref() != Some(plan.as_path()), "{}: plan and output paths must differ", plan.display());
            ensure!(mask_rate > 0.0 && mask_rate <= 1.0, "--mask-rate must be in (0, 1], got {mask_rate}");
            let tok = read_model(&model)?;
            let vocab = tok.vocab();
            let file = display(&io.input);
            let text = String::from_utf8(read_input(&io.input)?).with_context(|| file.clone())?;
            let cfg = MaskConfig { rate: mask_rate, bert_split };
            let fields = [
                ("seed", seed.to_string()),
                ("mask_rate", mask_rate.to_string()),
                ("bert_split", bert_split.to_string()),
                ("vocab_size", vocab.size().to_string()),
            ];
            let mut out = tokens::header(&fields);
            let mut plan_text = tokens::header(&fields).replacen("protok-tokens", "protok-mask-plan", 1);
            for (i, t) in tokens::parse(&text, &file, vocab.size())?.iter().enumerate() {
                // Each sequence gets its own stream so plans do not depend on batching.
                let (masked, p) = mlm::mask_tokens_with(t, vocab, &cfg, seed.wrapping_add(i as u64))
                    .with_context(|| format!("{file}: record {}", t.source_id))?;
                tokens::write_line(&mut out, &t.source_id, &masked.ids);
                plan_text.push_str(&format!(
                    "{}\t{}\t{}\n",
                    t.source_id,
                    tokens::join(&p.masked_positions),
                    tokens::join(&p.original_ids)
                ));
            }
            write_output(io.output.as_deref(), out.as_bytes())?;
            write_output(Some(&plan), plan_text.as_bytes())?;
        }
        Command::Stats { model, io, fasta } => {
            check_distinct(&io.input, io.output.as_deref())?;
            let tok = read_model(&model)?;
            let c = read_fasta(&io.input, &fasta)?;
            let stats = compression_stats(&tok, &c).with_context(|| display(&io.input))?;
            let out = format!(
                "# seed={seed}\tmethod={}\tvocab_size={}\n{}",
                tok.method(),
                tok.vocab().size(),
                stats.to_tsv()
            );
            write_output(io.output.as_deref(), out.as_bytes())?;
        }
        Command::Sweep(args) => sweep(args, seed)?,
        Command::Manifest { command: ManifestCommand::Validate { paths, root } } => {
            let mut out = String::new();
            for p in &paths {
                let found = if p.is_dir() {
                    benchtasks::load_manifest_dir(p)?
                } else {
                    vec![(p.clone(), load_manifest_file(p)?)]
                };
                for (path, m) in found {
                    if let Some(root) = &root {
                        for s in Split::ALL {
                            let n = benchtasks::load_split(&m, s, root).with_context(|| path.display().to_string())?.len();
                            log::info!("{}: {s}: {n} examples", path.display());
                        }
                    }
                    out.push_str(&format!("ok\t{}\t{}\t{}\n", path.display(), m.task, m.dataset));
                }
            }
            write_output(None, out.as_bytes())?;
        }
        Command::Eval { manifest, predictions, labels, root, split } => {
            let m = load_manifest_file(&manifest)?;
            let examples = match &labels {
                Some(p) => benchtasks::parse_split(&m, &read_input(p)?, p)?,
                None => benchtasks::load_split(&m, split, &root)?,
            };
            let file = display(&predictions);
            let text = String::from_utf8(read_input(&predictions)?).with_context(|| file.clone())?;
            let preds = text
                .lines()
                .enumerate()
                .filter(|(_, l)| !l.starts_with('#'))
                .map(|(i, l)| benchtasks::parse_label(&m, l.trim_end_matches('\r'), &predictions, i as u64 + 1))
                .collect::<Result<Vec<_>, _>>()?;
            ensure!(
                preds.len() == examples.len(),
                "{file}: {} predictions for {} labelled examples",
                preds.len(),
                examples.len()
            );
            let labels: Vec<_> = examples.into_iter().map(|e| e.label).collect();
            let value = benchtasks::evaluate(&m, &preds, &labels).with_context(|| display(&manifest))?;
            let out = format!("{}.{}.{}\t{value:.16e}\t{}\n", m.task, m.dataset, m.metric, labels.len());
            write_output(None, out.as_bytes())?;
        }
        Command::Summary { io, fasta } => {
            let c = read_fasta(&io.input, &fasta)?;
            write_output(io.output.as_deref(), format!("{}\n", c.summary()).as_bytes())?;
        }
        Command::Split { input, train, validation, holdout, fasta } => {
            ensure!(train != validation && train != input && validation != input, "split paths must all differ");
            let c = read_fasta(&input, &fasta)?;
            let (t, v) = corpus::split_holdout(&c, SplitSpec { holdout_count: holdout, seed }).with_context(|| display(&input))?;
            write_output(Some(&train), t.to_fasta(60).as_bytes())?;
            write_output(Some(&validation), v.to_fasta(60).as_bytes())?;
        }
    }
    Ok(())
}

fn load_manifest_file(p: &Path) -> Result<TaskManifest> {
    benchtasks::load_manifest(&read_input(p)?).with_context(|| display(p))
}

fn sweep(args: SweepArgs, seed: u64) -> Result<()> {
    ensure!(args.alpha > 0.0 && args.alpha.is_finite(), "--alpha must be positive, got {}", args.alpha);
    let full = match &args.train {
        Some(p) => read_fasta(p, &args.fasta)?,
        None => SynthConfig { sequences: args.synthetic, seed, ..Default::default() }.generate(),
    };
    let (train, val) = match &args.validation {
        Some(p) => (full, read_fasta(p, &args.fasta)?),
        None => corpus::split_holdout(&full, SplitSpec { holdout_count: args.holdout, seed }).context("--holdout")?,
    };
    let mut specs = Vec::new();
    for &m in &args.methods {
        if m == Method::PerAa {
            specs.push((m, BASE_VOCAB_SIZE));
        } else {
            specs.extend(args.sizes.iter().map(|&v| (m, v)));
        }
    }
    let rows = mlm::perplexity_sweep(&train, &val, &specs, args.alpha)?;
    let table = format!(
        "# seed={seed}\talpha={}\ttrain={}\tvalidation={}\n{}",
        args.alpha,
        train.source(),
        val.source(),
        mlm::sweep_table(&rows)
    );
    write_output(args.output.as_deref(), table.as_bytes())?;
    if let Some(p) = &args.records {
        let mut out = format!("# seed={seed}\n");
        for r in mlm::sweep_records(&rows) {
            out.push_str(&format!("{r}\n"));
        }
        write_output(Some(p), out.as_bytes())?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("protok: error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
