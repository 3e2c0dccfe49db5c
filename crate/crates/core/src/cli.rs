//! The `adcopy` command line.
//!
//! Exit codes: 0 success, 1 data error, 2 usage error. Results go to the
//! output file or stdout, diagnostics to stderr.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::corpus::{load_corpus, write_corpus, Corpus};
use crate::error::{Error, Result};
use crate::faithfulness::{
    judge_corpus, read_ratings, write_verdicts_tsv, CoreLabelSet, FaithfulnessReport,
};
use crate::filter::{filter_corpus, record_overlap, write_audit, DEFAULT_THRESHOLD};
use crate::metrics::{evaluate_corpus, EvalOptions, MetricSet, DEFAULT_BETA};
use crate::neural::gradcheck::{GradOp, DEFAULT_EPS, PASS_THRESHOLD};
use crate::ontology::{build_ontology, conceptualize, deconceptualize, prioritize_keys, Ontology};
use crate::text::{tokenize, tokenize_with_placeholders, Language};

pub const WORKERS_ENV: &str = "ADCOPY_WORKERS";

#[derive(Debug, Parser)]
#[command(
    name = "adcopy",
    version,
    about = "Advertisement copywriting corpus toolkit"
)]
pub struct Cli {
    /// Worker threads for record-parallel stages.
    #[arg(long, global = true, env = WORKERS_ENV, value_parser = clap::value_parser!(u16).range(1..))]
    pub workers: Option<u16>,

    /// Tokenize as this language instead of the corpus tag.
    #[arg(long, global = true)]
    pub lang: Option<Language>,

    /// Fail on the first invalid input line instead of skipping it.
    #[arg(long, global = true)]
    pub strict: bool,

    /// Report format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Tsv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Field {
    Caption,
    Generated,
}

#[derive(Debug, Args)]
pub struct Io {
    /// Input file.
    pub input: PathBuf,
    /// Output file; standard output when absent.
    pub output: Option<PathBuf>,
    /// Write results here (same as the positional OUTPUT).
    #[arg(long = "output", short = 'o', conflicts_with = "output")]
    pub output_flag: Option<PathBuf>,
}

impl Io {
    fn output(&self) -> Option<&Path> {
        self.output.as_deref().or(self.output_flag.as_deref())
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Keep records whose caption mentions at least N structured-info values.
    Filter {
        #[command(flatten)]
        io: Io,
        /// Minimum number of structured-info values the caption must mention.
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: usize,
        /// Write `id, overlap, kept` rows here.
        #[arg(long)]
        audit: Option<PathBuf>,
    },
    /// Replace attribute values in captions with key placeholders.
    Conceptualize {
        #[command(flatten)]
        io: Io,
    },
    /// Restore attribute values from key placeholders.
    Deconceptualize {
        #[command(flatten)]
        io: Io,
        #[arg(long, value_enum, default_value_t = Field::Caption)]
        field: Field,
    },
    /// Export the key census and value lexicon as sorted TSV.
    BuildOntology {
        #[command(flatten)]
        io: Io,
    },
    /// Score generated text against captions.
    Eval {
        #[command(flatten)]
        io: Io,
        /// Comma-separated subset of bleu, rouge, cider.
        #[arg(long, default_value = "bleu,rouge,cider")]
        metrics: MetricSet,
        /// ROUGE-L recall weight.
        #[arg(long, default_value_t = DEFAULT_BETA)]
        beta: f64,
        /// Include per-record ROUGE-L and CIDEr rows.
        #[arg(long)]
        per_record: bool,
    },
    /// Attribute-level correct/error/unknown rates.
    Faithfulness {
        #[command(flatten)]
        io: Io,
        /// Keys whose contradiction counts as an error [default: brand,color,material,people,time,season].
        #[arg(long, value_delimiter = ',')]
        core_labels: Option<Vec<String>>,
        /// Lexicon TSV from `build-ontology`; built from the input when absent.
        #[arg(long)]
        ontology: Option<PathBuf>,
        /// Write per-mention verdict rows here.
        #[arg(long)]
        verdicts: Option<PathBuf>,
    },
    /// Finite-difference check of every differentiable operation.
    Gradcheck {
        /// Central-difference step, within [1e-7, 1e-4].
        #[arg(long, default_value_t = DEFAULT_EPS)]
        eps: f64,
        /// Seed for the random parameters and inputs.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, short = 'o')]
        output: Option<PathBuf>,
    },
    /// Corpus size, caption length, structured-info size and overlap means.
    Stats {
        #[command(flatten)]
        io: Io,
    },
    /// Per-rater pass percentages from `rater, sample, passed` rows.
    PassRate {
        #[command(flatten)]
        io: Io,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusStats {
    pub records: usize,
    pub mean_caption_tokens: f64,
    pub mean_si_entries: f64,
    pub mean_overlap: f64,
}

/// Record count and the per-record means of caption length, structured-info
/// size and caption/structured-info overlap.
pub fn corpus_stats(corpus: &Corpus) -> Result<CorpusStats> {
    use rayon::prelude::*;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let lang = corpus.language;
    let (lens, overlaps): (Vec<usize>, Vec<usize>) = corpus
        .records
        .par_iter()
        .map(|r| (tokenize(&r.caption, lang).len(), record_overlap(r, lang)))
        .unzip();
    let n = corpus.len() as f64;
    let si: usize = corpus.records.iter().map(|r| r.structured_info.len()).sum();
    Ok(CorpusStats {
        records: corpus.len(),
        mean_caption_tokens: lens.iter().sum::<usize>() as f64 / n,
        mean_si_entries: si as f64 / n,
        mean_overlap: overlaps.iter().sum::<usize>() as f64 / n,
    })
}

enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

/// Parses `argv` (including the program name) and runs the subcommand.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = io::stdout();
    let stderr = io::stderr();
    run_with(argv, &mut stdout.lock(), &mut stderr.lock())
}

pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let rendered = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = out.write_all(rendered.as_bytes());
                    0
                }
                _ => {
                    let _ = err.write_all(rendered.as_bytes());
                    2
                }
            };
        }
    };
    let pool = match cli.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n as usize)
            .build(),
        None => rayon::ThreadPoolBuilder::new().build(),
    };
    let pool = match pool {
        Ok(p) => p,
        Err(e) => {
            let _ = writeln!(err, "error: cannot start worker pool: {e}");
            return 1;
        }
    };
    let (mut obuf, mut ebuf) = (Vec::new(), Vec::new());
    let result = pool.install(|| execute(&cli, &mut obuf, &mut ebuf));
    let _ = out.write_all(&obuf).and_then(|_| out.flush());
    let _ = err.write_all(&ebuf);
    match result {
        Ok(code) => code,
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            2
        }
        Err(Failure::Data(e)) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}

fn load(cli: &Cli, path: &Path, err: &mut dyn Write) -> Result<Corpus> {
    let loaded = load_corpus(path, cli.strict)?;
    for d in &loaded.dropped {
        let _ = writeln!(
            err,
            "warning: {}:{}: dropped: {}",
            path.display(),
            d.line,
            d.reason
        );
    }
    if !loaded.dropped.is_empty() {
        let _ = writeln!(
            err,
            "warning: dropped {} line(s) from {}",
            loaded.dropped.len(),
            path.display()
        );
    }
    let mut corpus = loaded.corpus;
    if let Some(lang) = cli.lang {
        corpus.language = lang;
    }
    Ok(corpus)
}

/// Runs `f` against the output file, or stdout when none is given.
fn emit(
    path: Option<&Path>,
    out: &mut dyn Write,
    f: impl FnOnce(&mut dyn Write) -> io::Result<()>,
) -> Result<()> {
    match path {
        Some(p) => {
            let file = File::create(p).map_err(|e| Error::io(p, e))?;
            let mut w = BufWriter::new(file);
            f(&mut w)
                .and_then(|_| w.flush())
                .map_err(|e| Error::io(p, e))
        }
        None => f(out).map_err(|e| Error::io("<stdout>", e)),
    }
}

fn emit_json<S: Serialize>(path: Option<&Path>, out: &mut dyn Write, value: &S) -> Result<()> {
    emit(path, out, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)
    })
}

fn execute(
    cli: &Cli,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> std::result::Result<i32, Failure> {
    match &cli.command {
        Command::Filter {
            io,
            threshold,
            audit,
        } => {
            let corpus = load(cli, &io.input, err)?;
            let (kept, decisions) = filter_corpus(&corpus, *threshold);
            emit(io.output(), out, |w| write_corpus(&kept, w))?;
            if let Some(p) = audit {
                emit(Some(p), out, |w| write_audit(&decisions, w))?;
            }
            let _ = writeln!(
                err,
                "kept {} of {} records (threshold {threshold})",
                kept.len(),
                corpus.len()
            );
        }
        Command::Conceptualize { io } => {
            let mut corpus = load(cli, &io.input, err)?;
            let lang = corpus.language;
            for r in &mut corpus.records {
                let si = prioritize_keys(&r.structured_info, &tokenize(&r.summary, lang));
                let (tokens, _) = conceptualize(&tokenize(&r.caption, lang), &si);
                r.caption = tokens.join();
                r.structured_info = si;
            }
            emit(io.output(), out, |w| write_corpus(&corpus, w))?;
        }
        Command::Deconceptualize { io, field } => {
            let mut corpus = load(cli, &io.input, err)?;
            let lang = corpus.language;
            for r in &mut corpus.records {
                let text = match field {
                    Field::Caption => Some(&mut r.caption),
                    Field::Generated => r.generated.as_mut(),
                };
                if let Some(text) = text {
                    let restored = deconceptualize(
                        &tokenize_with_placeholders(text, lang),
                        &r.structured_info,
                    );
                    *text = restored.join();
                }
            }
            emit(io.output(), out, |w| write_corpus(&corpus, w))?;
        }
        Command::BuildOntology { io } => {
            let corpus = load(cli, &io.input, err)?;
            let ont = build_ontology(&corpus)?;
            emit(io.output(), out, |w| ont.write_tsv(w))?;
            let _ = writeln!(
                err,
                "{} keys, {} value phrases",
                ont.keys.len(),
                ont.value_lexicon.len()
            );
        }
        Command::Eval {
            io,
            metrics,
            beta,
            per_record,
        } => {
            if beta.is_nan() || *beta <= 0.0 || beta.is_infinite() {
                return Err(Failure::Usage(format!(
                    "--beta must be positive, got {beta}"
                )));
            }
            let corpus = load(cli, &io.input, err)?;
            let opts = EvalOptions {
                metrics: *metrics,
                beta: *beta,
                per_record: *per_record,
            };
            let report = evaluate_corpus(&corpus, &opts)?;
            match cli.format {
                Format::Json => emit_json(io.output(), out, &report)?,
                Format::Tsv => emit(io.output(), out, |w| report.write_tsv(w))?,
            }
        }
        Command::Faithfulness {
            io,
            core_labels,
            ontology,
            verdicts,
        } => {
            let core = match core_labels {
                Some(labels) => {
                    CoreLabelSet::new(labels).map_err(|e| Failure::Usage(e.to_string()))?
                }
                None => CoreLabelSet::default(),
            };
            let corpus = load(cli, &io.input, err)?;
            let ont = match ontology {
                Some(p) => {
                    let f = File::open(p).map_err(|e| Error::io(p, e))?;
                    Ontology::read_tsv(BufReader::new(f))?
                }
                None => build_ontology(&corpus)?,
            };
            let judged = judge_corpus(&corpus, &ont, &core)?;
            if let Some(p) = verdicts {
                emit(Some(p), out, |w| write_verdicts_tsv(&judged, w))?;
            }
            let report = FaithfulnessReport::from_verdicts(&judged)?;
            match cli.format {
                Format::Json => emit_json(io.output(), out, &report)?,
                Format::Tsv => emit(io.output(), out, |w| {
                    writeln!(w, "metric\tvalue")?;
                    writeln!(w, "correct_rate\t{}", report.correct_rate)?;
                    writeln!(w, "error_rate\t{}", report.error_rate)?;
                    writeln!(w, "unknown_rate\t{}", report.unknown_rate)?;
                    writeln!(w, "total_mentions\t{}", report.total_mentions)
                })?,
            }
        }
        Command::Gradcheck { eps, seed, output } => {
            if !(1e-7..=1e-4).contains(eps) {
                return Err(Failure::Usage("--eps must lie in [1e-7, 1e-4]".into()));
            }
            let mut all_pass = true;
            let mut lines = Vec::new();
            for op in GradOp::ALL {
                let line = match op.check(*seed, *eps) {
                    Ok(e) => {
                        let pass = e < PASS_THRESHOLD;
                        all_pass &= pass;
                        format!(
                            "{}\t{e:.3e}\t{}",
                            op.name(),
                            if pass { "pass" } else { "FAIL" }
                        )
                    }
                    Err(e) => {
                        all_pass = false;
                        format!("{}\t-\tFAIL ({e})", op.name())
                    }
                };
                lines.push(line);
            }
            emit(output.as_deref(), out, |w| {
                writeln!(w, "operation\tmax_rel_error\tstatus")?;
                lines.iter().try_for_each(|l| writeln!(w, "{l}"))
            })?;
            return Ok(if all_pass { 0 } else { 1 });
        }
        Command::Stats { io } => {
            let corpus = load(cli, &io.input, err)?;
            let s = corpus_stats(&corpus)?;
            match cli.format {
                Format::Json => emit_json(io.output(), out, &s)?,
                Format::Tsv => emit(io.output(), out, |w| {
                    writeln!(w, "statistic\tvalue")?;
                    writeln!(w, "records\t{}", s.records)?;
                    writeln!(w, "mean_caption_tokens\t{}", s.mean_caption_tokens)?;
                    writeln!(w, "mean_si_entries\t{}", s.mean_si_entries)?;
                    writeln!(w, "mean_overlap\t{}", s.mean_overlap)
                })?,
            }
        }
        Command::PassRate { io } => {
            let f = File::open(&io.input).map_err(|e| Error::io(&io.input, e))?;
            let rates = crate::faithfulness::pass_rate(&read_ratings(BufReader::new(f))?)?;
            match cli.format {
                Format::Json => emit_json(io.output(), out, &rates)?,
                Format::Tsv => emit(io.output(), out, |w| {
                    writeln!(w, "rater\tpass_rate")?;
                    rates.iter().try_for_each(|(k, v)| writeln!(w, "{k}\t{v}"))
                })?,
            }
        }
    }
    Ok(0)
}
