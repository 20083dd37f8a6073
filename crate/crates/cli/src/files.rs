use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use infoflow::event::parse_events;
use infoflow::harness::Skipped;
use infoflow::{parse_midi, Config, EventSequence, ParseOptions, Piece};
use walkdir::WalkDir;

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Writes to `path`, or to standard output when there is none.
pub fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn has_extension(path: &Path, exts: &[&str]) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| exts.iter().any(|x| e.eq_ignore_ascii_case(x)))
}

pub fn is_midi(path: &Path) -> bool {
    has_extension(path, &["mid", "midi"])
}

/// Files under each input (recursively for directories) with one of the
/// extensions, sorted so runs are reproducible.
pub fn collect(inputs: &[PathBuf], exts: &[&str]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for input in inputs {
        if input.is_dir() {
            for entry in WalkDir::new(input).sort_by_file_name() {
                let entry = entry?;
                if entry.file_type().is_file() && has_extension(entry.path(), exts) {
                    out.push(entry.into_path());
                }
            }
        } else {
            out.push(input.clone());
        }
    }
    Ok(out)
}

pub fn source_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

pub fn read_piece(path: &Path, config: &Config) -> Result<Piece, infoflow::Error> {
    let bytes = fs::read(path)?;
    let file = parse_midi(
        &bytes,
        &ParseOptions {
            include_drums: config.include_drums,
        },
    )?;
    Ok(Piece::from_midi(&file, config.grid(), source_id(path)))
}

/// Keeps the two chosen tracks, in that order, when `tracks` is given.
pub fn select_tracks(mut piece: Piece, tracks: Option<(usize, usize)>) -> Result<Piece, infoflow::Error> {
    if let Some((x, y)) = tracks {
        let n = piece.tracks.len();
        if x >= n || y >= n || x == y {
            return Err(infoflow::Error::IneligiblePiece {
                source_id: piece.source_id,
                reason: format!("cannot select tracks {x} and {y} from {n} non-empty track(s)"),
            });
        }
        piece.tracks = vec![piece.tracks[x].clone(), piece.tracks[y].clone()];
    }
    Ok(piece)
}

/// Reads every MIDI file under `inputs`; unreadable ones are reported in
/// the skip list instead of failing the run.
pub fn read_corpus(
    inputs: &[PathBuf],
    config: &Config,
    tracks: Option<(usize, usize)>,
) -> Result<(Vec<Piece>, Vec<Skipped>)> {
    let mut pieces = Vec::new();
    let mut skipped = Vec::new();
    for path in collect(inputs, &["mid", "midi"])? {
        match read_piece(&path, config).and_then(|p| select_tracks(p, tracks)) {
            Ok(piece) => pieces.push(piece),
            Err(e) => skipped.push(Skipped {
                source_id: source_id(&path),
                reason: e.to_string(),
            }),
        }
    }
    Ok((pieces, skipped))
}

pub fn read_events(path: &Path, config: &Config) -> Result<EventSequence> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_events(&text, config.grid()).with_context(|| format!("parsing {}", path.display()))
}
