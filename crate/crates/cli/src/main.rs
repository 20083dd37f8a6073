mod files;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use infoflow::event::write_events;
use infoflow::generate::generate;
use infoflow::harness::{batch_score, build_pairs, positional_bias, self_enhancement, Label};
use infoflow::oracle::{exact_flow, pipeline_flow, JointMarkovSpec, PipelineOptions};
use infoflow::piece::write_notes;
use infoflow::{decode, encode, information_flow, Config, ContextModel, EntropyMode, Normalization, Piece, Track};
use serde::Serialize;

use files::{collect, emit, is_midi, read_corpus, read_events, read_piece, select_tracks, source_id, write_atomic};

#[derive(Parser)]
#[command(name = "infoflow", version, about = "Information flow between the voices of MIDI pieces")]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

/// Settings that override the config file.
#[derive(Args)]
struct Overrides {
    /// TOML config file; flags below take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Grid steps per beat.
    #[arg(long, global = true)]
    r: Option<u32>,
    #[arg(long, global = true)]
    max_beat: Option<u32>,
    #[arg(long, global = true)]
    max_dur: Option<u32>,
    /// Context-model order.
    #[arg(long, short = 'k', global = true)]
    order: Option<usize>,
    #[arg(long, global = true)]
    lambda: Option<f64>,
    #[arg(long, global = true)]
    context_len: Option<usize>,
    #[arg(long, global = true)]
    burn_in: Option<usize>,
    #[arg(long, global = true)]
    mode: Option<ModeArg>,
    #[arg(long, global = true)]
    normalization: Option<NormArg>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    remap_shared_program: bool,
    #[arg(long, global = true)]
    include_drums: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Nll,
    Predictive,
}

#[derive(Clone, Copy, ValueEnum)]
enum NormArg {
    PerBeat,
    PerEvent,
}

#[derive(Clone, Copy, ValueEnum)]
enum Canonical {
    Independent,
    Copy,
    Instantaneous,
}

#[derive(Subcommand)]
enum Command {
    /// Convert MIDI files to event-sequence text files.
    Tokenize {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
        /// Also write one sequence per track (`<name>.track<i>.events`).
        #[arg(long)]
        voices: bool,
    },
    /// Train a context model on a directory of `.events` files.
    Train {
        corpus: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Information flow between the two tracks of one MIDI file.
    Score {
        model: PathBuf,
        midi: PathBuf,
        #[arg(long, short)]
        out: Option<PathBuf>,
        /// Use these two tracks (0-based, X first) instead of requiring exactly two.
        #[arg(long, value_parser = parse_pair)]
        tracks: Option<(usize, usize)>,
        /// Report in bits instead of nats.
        #[arg(long)]
        bits: bool,
    },
    /// Build original and shuffled voice pairs from a MIDI corpus.
    Pairs {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, value_parser = parse_pair)]
        tracks: Option<(usize, usize)>,
    },
    /// Score original and shuffled pairs of a MIDI corpus.
    Batch {
        model: PathBuf,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Per-(pair, field) rows.
        #[arg(long)]
        csv: PathBuf,
        /// Summary report; standard output when omitted.
        #[arg(long, short)]
        out: Option<PathBuf>,
        #[arg(long, value_parser = parse_pair)]
        tracks: Option<(usize, usize)>,
    },
    /// Flow differences when the two voices are swapped.
    Bias {
        model: PathBuf,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, short)]
        out: Option<PathBuf>,
        #[arg(long, value_parser = parse_pair)]
        tracks: Option<(usize, usize)>,
    },
    /// Whether each of two models prefers its own continuations.
    Selfbias {
        model_a: PathBuf,
        model_b: PathBuf,
        /// Prime melodies: `.events` files or MIDI (first track used).
        #[arg(required = true)]
        primes: Vec<PathBuf>,
        #[arg(long, default_value_t = 200)]
        steps: usize,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Continue a prime by sampling from a model.
    Generate {
        model: PathBuf,
        /// `.events` file or MIDI file.
        prime: PathBuf,
        #[arg(long, default_value_t = 200)]
        steps: usize,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Exact flow of a joint Markov chain, optionally checked against the pipeline.
    Oracle {
        /// Spec file: `nx ny`, the row-major transition table, optional initial distribution.
        spec: Option<PathBuf>,
        #[arg(long, conflicts_with = "spec")]
        canonical: Option<Canonical>,
        /// Alphabet size for canonical specs.
        #[arg(long, default_value_t = 2)]
        alphabet: usize,
        /// Also sample paths, train and estimate flow.
        #[arg(long)]
        pipeline: bool,
        #[arg(long, default_value_t = 100_000)]
        steps: usize,
        #[arg(long, default_value_t = 500)]
        chunk_len: usize,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

fn parse_pair(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or("expected two indices like `0,1`")?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("`{v}`: {e}"));
    Ok((parse(a)?, parse(b)?))
}

impl Overrides {
    fn resolve(&self) -> Result<Config> {
        let mut c = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                Config::from_toml(&text).with_context(|| format!("in {}", path.display()))?
            }
            None => Config::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field {
                    c.$field = v;
                }
            )*};
        }
        set!(r, max_beat, max_dur, order, lambda, context_len, burn_in, seed, workers);
        if let Some(m) = self.mode {
            c.mode = match m {
                ModeArg::Nll => EntropyMode::Nll,
                ModeArg::Predictive => EntropyMode::Predictive,
            };
        }
        if let Some(n) = self.normalization {
            c.normalization = match n {
                NormArg::PerBeat => Normalization::PerBeat,
                NormArg::PerEvent => Normalization::PerEvent,
            };
        }
        c.remap_shared_program |= self.remap_shared_program;
        c.include_drums |= self.include_drums;
        c.validate()?;
        Ok(c)
    }
}

/// Every report carries the settings that produced it.
#[derive(Serialize)]
struct Record<'a, T: Serialize> {
    config: &'a Config,
    report: T,
}

fn record<T: Serialize>(config: &Config, report: T) -> Result<String> {
    Ok(toml::to_string(&Record { config, report })?)
}

fn load_model(path: &Path, config: &mut Config) -> Result<ContextModel> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let model = ContextModel::from_bytes(&bytes).with_context(|| format!("loading {}", path.display()))?;
    // The model fixes the grid and order; the report should say so.
    let grid = model.grid();
    config.r = grid.r;
    config.max_beat = grid.max_beat;
    config.max_dur = grid.max_dur;
    config.order = model.order();
    config.lambda = model.lambda();
    Ok(model)
}

fn load_prime(path: &Path, config: &Config) -> Result<Track> {
    if is_midi(path) {
        let piece = read_piece(path, config)?;
        piece
            .tracks
            .into_iter()
            .next()
            .ok_or_else(|| infoflow::Error::EmptySequence.into())
    } else {
        Ok(Track::new(decode(&read_events(path, config)?)))
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut config = cli.overrides.resolve()?;
    if config.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build_global()
            .context("starting worker pool")?;
    }
    match cli.command {
        Command::Tokenize { inputs, out, voices } => {
            let paths = collect(&inputs, &["mid", "midi"])?;
            let mut failed: Vec<infoflow::Error> = Vec::new();
            for path in &paths {
                let name = source_id(path);
                let piece = match read_piece(path, &config) {
                    Ok(p) => p,
                    Err(e) => {
                        eprintln!("skipping {}: {e}", path.display());
                        failed.push(e);
                        continue;
                    }
                };
                let refs: Vec<&Track> = piece.tracks.iter().collect();
                match encode(&refs, config.grid()) {
                    Ok(seq) => write_atomic(&out.join(format!("{name}.events")), write_events(&seq).as_bytes())?,
                    Err(e) => {
                        eprintln!("skipping {}: {e}", path.display());
                        failed.push(e);
                        continue;
                    }
                }
                if voices && refs.len() > 1 {
                    for (i, track) in refs.iter().enumerate() {
                        let seq = encode(&[track], config.grid())?;
                        write_atomic(&out.join(format!("{name}.track{i}.events")), write_events(&seq).as_bytes())?;
                    }
                }
                if piece.dropped_notes > 0 {
                    eprintln!("{}: dropped {} note(s) beyond the beat limit", path.display(), piece.dropped_notes);
                }
            }
            eprintln!("tokenized {} of {} file(s)", paths.len() - failed.len(), paths.len());
            let count = failed.len();
            if let Some(first) = failed.into_iter().next() {
                return Err(anyhow::Error::new(first).context(format!("{count} file(s) could not be tokenized")));
            }
        }
        Command::Train { corpus, out } => {
            let paths = collect(&[corpus], &["events"])?;
            if paths.is_empty() {
                bail!(infoflow::Error::CorpusTooSmall("no .events files found".into()));
            }
            let seqs = paths
                .iter()
                .map(|p| read_events(p, &config))
                .collect::<Result<Vec<_>>>()?;
            let model = ContextModel::train(&seqs, config.order, config.lambda)?;
            write_atomic(&out, &model.to_bytes())?;
            eprintln!(
                "trained order-{} model on {} sequence(s), {} events, {} contexts, id {}",
                model.order(),
                seqs.len(),
                model.trained_events(),
                model.context_count(),
                model.id()
            );
        }
        Command::Score {
            model,
            midi,
            out,
            tracks,
            bits,
        } => {
            let model = load_model(&model, &mut config)?;
            let piece = select_tracks(read_piece(&midi, &config)?, tracks)?;
            let (x, y) = piece.split_tracks()?;
            let mut report = information_flow(&model, &piece.source_id, x, y, &config.flow_params())?;
            if bits {
                report = report.to_bits();
            }
            emit(out.as_deref(), &record(&config, report)?)?;
        }
        Command::Pairs { inputs, out, tracks } => {
            let (pieces, mut skipped) = read_corpus(&inputs, &config, tracks)?;
            let set = build_pairs(&pieces, config.seed)?;
            skipped.extend(set.skipped.iter().cloned());
            let mut manifest = String::from("index,piece_id,label,donor_id,x_notes,y_notes\n");
            for (i, pair) in set.pairs.iter().enumerate() {
                let stem = format!("{i:05}_{}", pair.label.as_str());
                write_atomic(&out.join(format!("{stem}.x.notes")), write_notes(&pair.x).as_bytes())?;
                write_atomic(&out.join(format!("{stem}.y.notes")), write_notes(&pair.y).as_bytes())?;
                let _ = writeln!(
                    manifest,
                    "{i},{},{},{},{},{}",
                    pair.piece_id,
                    pair.label.as_str(),
                    pair.donor_id.as_deref().unwrap_or(""),
                    pair.x.len(),
                    pair.y.len()
                );
            }
            write_atomic(&out.join("manifest.csv"), manifest.as_bytes())?;
            #[derive(Serialize)]
            struct PairsReport {
                pairs: usize,
                positives: usize,
                negatives: usize,
                skipped: Vec<infoflow::harness::Skipped>,
            }
            let report = PairsReport {
                pairs: set.pairs.len(),
                positives: set.with_label(Label::Positive).count(),
                negatives: set.with_label(Label::Negative).count(),
                skipped,
            };
            print!("{}", record(&config, report)?);
        }
        Command::Batch {
            model,
            inputs,
            csv,
            out,
            tracks,
        } => {
            let model = load_model(&model, &mut config)?;
            let (pieces, skipped) = read_corpus(&inputs, &config, tracks)?;
            let set = build_pairs(&pieces, config.seed)?;
            let mut report = batch_score(&model, &set, &config.flow_params());
            report.skipped.splice(0..0, skipped);
            let mut buf = Vec::new();
            report.write_csv(&mut buf)?;
            write_atomic(&csv, &buf)?;
            emit(out.as_deref(), &record(&config, report.summary())?)?;
        }
        Command::Bias {
            model,
            inputs,
            out,
            tracks,
        } => {
            let model = load_model(&model, &mut config)?;
            let (pieces, skipped) = read_corpus(&inputs, &config, tracks)?;
            let eligible: Vec<Piece> = pieces.into_iter().filter(Piece::is_eligible).collect();
            if eligible.is_empty() {
                bail!(infoflow::Error::CorpusTooSmall("no two-track pieces to compare".into()));
            }
            #[derive(Serialize)]
            struct Bias {
                #[serde(flatten)]
                bias: infoflow::harness::BiasReport,
                skipped: Vec<infoflow::harness::Skipped>,
            }
            let bias = positional_bias(&model, &eligible, &config.flow_params());
            emit(out.as_deref(), &record(&config, Bias { bias, skipped })?)?;
        }
        Command::Selfbias {
            model_a,
            model_b,
            primes,
            steps,
            out,
        } => {
            let a = load_model(&model_a, &mut config)?;
            let b = load_model(&model_b, &mut config)?;
            let paths = collect(&primes, &["events", "mid", "midi"])?;
            let primes = paths
                .iter()
                .map(|p| load_prime(p, &config))
                .collect::<Result<Vec<_>>>()?;
            let report = self_enhancement(&a, &b, &primes, steps, &config.flow_params(), config.seed)?;
            emit(out.as_deref(), &record(&config, report)?)?;
        }
        Command::Generate {
            model,
            prime,
            steps,
            out,
        } => {
            let model = load_model(&model, &mut config)?;
            let prime = if is_midi(&prime) {
                let piece = read_piece(&prime, &config)?;
                let refs: Vec<&Track> = piece.tracks.iter().collect();
                encode(&refs, model.grid())?
            } else {
                read_events(&prime, &config)?
            };
            let seq = generate(&model, prime.without_end(), steps, config.seed)?;
            emit(out.as_deref(), &write_events(&seq))?;
        }
        Command::Oracle {
            spec,
            canonical,
            alphabet,
            pipeline,
            steps,
            chunk_len,
            out,
        } => {
            let spec = match (spec, canonical) {
                (Some(path), _) => {
                    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                    JointMarkovSpec::from_text(&text).with_context(|| format!("in {}", path.display()))?
                }
                (None, Some(Canonical::Independent)) => JointMarkovSpec::independent_uniform(alphabet)?,
                (None, Some(Canonical::Copy)) => JointMarkovSpec::copy(alphabet)?,
                (None, Some(Canonical::Instantaneous)) => JointMarkovSpec::instantaneous(alphabet)?,
                (None, None) => bail!("give a spec file or --canonical"),
            };
            let text = if pipeline {
                let opts = PipelineOptions {
                    steps,
                    seed: config.seed,
                    chunk_len,
                    order: config.order,
                    lambda: config.lambda,
                    params: config.flow_params(),
                };
                record(&config, pipeline_flow(&spec, &opts)?)?
            } else {
                record(&config, exact_flow(&spec)?)?
            };
            emit(out.as_deref(), &text)?;
        }
    }
    Ok(())
}

/// 2 for unreadable input, 3 for pieces or corpora that cannot be scored,
/// 4 for chains without a stationary distribution, 1 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    use infoflow::Error as E;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::MidiParse { .. } | E::TextFormat { .. } | E::ModelFormat(_) | E::Structure { .. } => 2,
                E::IneligiblePiece { .. } | E::TooShort { .. } | E::EmptySequence | E::CorpusTooSmall(_) => 3,
                E::NonConvergent(_) => 4,
                _ => 1,
            };
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
