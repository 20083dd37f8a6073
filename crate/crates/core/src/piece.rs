//! Quantized notes, tracks, and two-voice pieces.

use std::fmt::Write as _;
use std::ops::Deref;

use crate::config::Grid;
use crate::error::{Error, Result};
use crate::midi::{MidiFile, RawNote};

/// A note snapped to the beat grid.
///
/// The derived ordering is the canonical one: (beat, position, pitch,
/// duration, program). It carries no track identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct QuantNote {
    pub beat: u32,
    pub position: u32,
    pub pitch: u8,
    pub duration: u32,
    pub program: u8,
}

impl QuantNote {
    pub fn onset_steps(&self, grid: &Grid) -> u64 {
        grid.onset(self.beat, self.position)
    }

    pub fn end_steps(&self, grid: &Grid) -> u64 {
        self.onset_steps(grid) + self.duration as u64
    }

    pub fn fits(&self, grid: &Grid) -> bool {
        self.beat < grid.max_beat
            && self.position < grid.r
            && self.pitch < 128
            && self.program < 128
            && (1..=grid.max_dur).contains(&self.duration)
    }
}

/// `round(numerator / denominator)` with halves rounded away from zero.
fn div_round(numerator: u64, denominator: u64) -> u64 {
    (2 * numerator + denominator) / (2 * denominator)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Quantized {
    pub notes: Vec<QuantNote>,
    /// Notes whose beat fell at or beyond `max_beat`.
    pub dropped: usize,
}

/// Snaps one note to the grid; `None` when its beat is out of range.
pub fn quantize_note(note: &RawNote, ticks_per_beat: u32, grid: &Grid) -> Option<QuantNote> {
    let tpb = ticks_per_beat as u64;
    let r = grid.r as u64;
    let onset = div_round(note.onset_ticks * r, tpb);
    let beat = onset / r;
    if beat >= grid.max_beat as u64 {
        return None;
    }
    let duration = div_round(note.duration_ticks * r, tpb).clamp(1, grid.max_dur as u64);
    Some(QuantNote {
        beat: beat as u32,
        position: (onset % r) as u32,
        pitch: note.pitch,
        duration: duration as u32,
        program: note.program,
    })
}

/// Quantizes notes in input order, dropping (and counting) those past the last beat.
pub fn quantize(notes: &[RawNote], ticks_per_beat: u32, grid: &Grid) -> Quantized {
    assert!(ticks_per_beat > 0, "ticks_per_beat must be positive");
    let mut out = Vec::with_capacity(notes.len());
    let mut dropped = 0;
    for note in notes {
        match quantize_note(note, ticks_per_beat, grid) {
            Some(q) => out.push(q),
            None => dropped += 1,
        }
    }
    Quantized { notes: out, dropped }
}

/// A voice: notes kept in canonical order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Track {
    notes: Vec<QuantNote>,
}

impl Track {
    pub fn new(mut notes: Vec<QuantNote>) -> Self {
        notes.sort_unstable();
        Track { notes }
    }

    pub fn notes(&self) -> &[QuantNote] {
        &self.notes
    }

    pub fn into_notes(self) -> Vec<QuantNote> {
        self.notes
    }

    /// Distinct programs, ascending.
    pub fn programs(&self) -> Vec<u8> {
        let mut programs: Vec<u8> = self.notes.iter().map(|n| n.program).collect();
        programs.sort_unstable();
        programs.dedup();
        programs
    }

    pub fn last_onset(&self, grid: &Grid) -> Option<u64> {
        self.notes.iter().map(|n| n.onset_steps(grid)).max()
    }

    /// Keeps only notes whose onset is at or before `onset_steps`.
    pub fn truncated(&self, onset_steps: u64, grid: &Grid) -> Track {
        Track {
            notes: self
                .notes
                .iter()
                .copied()
                .filter(|n| n.onset_steps(grid) <= onset_steps)
                .collect(),
        }
    }

    /// Shifts every program by one (mod 128) when it also occurs in `other`.
    pub fn remapped_against(&self, other: &Track) -> Track {
        let taken = other.programs();
        Track::new(
            self.notes
                .iter()
                .map(|n| {
                    let mut n = *n;
                    if taken.binary_search(&n.program).is_ok() {
                        n.program = (n.program + 1) % 128;
                    }
                    n
                })
                .collect(),
        )
    }
}

impl Deref for Track {
    type Target = [QuantNote];

    fn deref(&self) -> &[QuantNote] {
        &self.notes
    }
}

impl FromIterator<QuantNote> for Track {
    fn from_iter<I: IntoIterator<Item = QuantNote>>(iter: I) -> Self {
        Track::new(iter.into_iter().collect())
    }
}

/// Multiset union in canonical order. Symmetric in its arguments.
pub fn merge_tracks(x: &Track, y: &Track) -> Track {
    let mut notes = Vec::with_capacity(x.len() + y.len());
    notes.extend_from_slice(x);
    notes.extend_from_slice(y);
    Track::new(notes)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Piece {
    pub source_id: String,
    pub ticks_per_beat: u32,
    pub grid: Grid,
    /// Non-empty tracks in file order.
    pub tracks: Vec<Track>,
    /// Notes lost to the beat bound during quantization.
    pub dropped_notes: usize,
}

impl Piece {
    pub fn from_midi(file: &MidiFile, grid: Grid, source_id: impl Into<String>) -> Piece {
        let mut per_track: Vec<Vec<QuantNote>> = vec![Vec::new(); file.track_count];
        let mut dropped = 0;
        for note in &file.notes {
            match quantize_note(note, file.ticks_per_beat, &grid) {
                Some(q) => per_track[note.track_index].push(q),
                None => dropped += 1,
            }
        }
        Piece {
            source_id: source_id.into(),
            ticks_per_beat: file.ticks_per_beat,
            grid,
            tracks: per_track.into_iter().filter(|t| !t.is_empty()).map(Track::new).collect(),
            dropped_notes: dropped,
        }
    }

    pub fn from_tracks(source_id: impl Into<String>, grid: Grid, tracks: Vec<Track>) -> Piece {
        Piece {
            source_id: source_id.into(),
            ticks_per_beat: grid.r,
            grid,
            tracks,
            dropped_notes: 0,
        }
    }

    pub fn is_eligible(&self) -> bool {
        self.tracks.len() == 2 && self.tracks.iter().all(|t| !t.is_empty())
    }

    /// The (X, Y) voices: first and second track.
    pub fn split_tracks(&self) -> Result<(&Track, &Track)> {
        let ineligible = |reason: String| Error::IneligiblePiece {
            source_id: self.source_id.clone(),
            reason,
        };
        if self.tracks.len() != 2 {
            return Err(ineligible(format!("expected 2 tracks, found {}", self.tracks.len())));
        }
        if let Some(i) = self.tracks.iter().position(|t| t.is_empty()) {
            return Err(ineligible(format!("track {i} has no notes")));
        }
        Ok((&self.tracks[0], &self.tracks[1]))
    }
}

/// One note per line: `beat position pitch duration program`.
pub fn write_notes(notes: &[QuantNote]) -> String {
    let mut out = String::new();
    for n in notes {
        writeln!(out, "{} {} {} {} {}", n.beat, n.position, n.pitch, n.duration, n.program).unwrap();
    }
    out
}

/// Inverse of [`write_notes`]; blank lines and `#` comments are skipped.
pub fn parse_notes(text: &str) -> Result<Vec<QuantNote>> {
    let mut notes = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let values = parse_ints(line, 5, i + 1)?;
        let byte = |v: u64, what: &str| {
            u8::try_from(v)
                .ok()
                .filter(|b| *b < 128)
                .ok_or_else(|| Error::text(i + 1, format!("{what} {v} out of range")))
        };
        notes.push(QuantNote {
            beat: values[0] as u32,
            position: values[1] as u32,
            pitch: byte(values[2], "pitch")?,
            duration: values[3] as u32,
            program: byte(values[4], "program")?,
        });
    }
    Ok(notes)
}

pub(crate) fn parse_ints(line: &str, expected: usize, line_no: usize) -> Result<Vec<u64>> {
    let values = line
        .split_whitespace()
        .map(|t| {
            t.parse::<u32>()
                .map(u64::from)
                .map_err(|_| Error::text(line_no, format!("not a non-negative integer: `{t}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    if values.len() != expected {
        return Err(Error::text(
            line_no,
            format!("expected {expected} integers, found {}", values.len()),
        ));
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn raw(onset: u64, duration: u64) -> RawNote {
        RawNote {
            track_index: 0,
            onset_ticks: onset,
            duration_ticks: duration,
            pitch: 60,
            program: 0,
            channel: 0,
        }
    }

    fn note(beat: u32, position: u32, pitch: u8) -> QuantNote {
        QuantNote {
            beat,
            position,
            pitch,
            duration: 12,
            program: 0,
        }
    }

    #[test]
    fn exact_grid_alignment() {
        let q = quantize_note(&raw(480, 480), 480, &Grid::default()).unwrap();
        assert_eq!((q.beat, q.position, q.duration), (1, 0, 12));
    }

    #[test]
    fn half_step_rounds_away_from_zero() {
        // 20 ticks * 12 / 480 = 0.5 steps.
        let q = quantize_note(&raw(20, 480), 480, &Grid::default()).unwrap();
        assert_eq!((q.beat, q.position), (0, 1));
        // 19 ticks is just under half a step.
        let q = quantize_note(&raw(19, 480), 480, &Grid::default()).unwrap();
        assert_eq!((q.beat, q.position), (0, 0));
    }

    #[test]
    fn duration_clamped_to_bounds() {
        let grid = Grid::default();
        assert_eq!(quantize_note(&raw(0, 1), 480, &grid).unwrap().duration, 1);
        assert_eq!(quantize_note(&raw(0, 480 * 40), 480, &grid).unwrap().duration, 96);
    }

    #[test]
    fn notes_past_last_beat_are_counted() {
        let grid = Grid::new(4, 2, 8).unwrap();
        let q = quantize(&[raw(0, 10), raw(100, 10), raw(200, 10)], 100, &grid);
        assert_eq!(q.notes.len(), 2);
        assert_eq!(q.dropped, 1);
    }

    #[test]
    fn merge_orders_same_onset_by_pitch() {
        let x = Track::new(vec![note(0, 0, 64)]);
        let y = Track::new(vec![note(0, 0, 60)]);
        let merged = merge_tracks(&x, &y);
        assert_eq!(merged.iter().map(|n| n.pitch).collect::<Vec<_>>(), vec![60, 64]);
    }

    #[test]
    fn merge_with_empty_is_identity() {
        let x = Track::new(vec![note(3, 1, 70), note(0, 0, 64), note(1, 5, 62)]);
        assert_eq!(merge_tracks(&x, &Track::default()), x);
        assert_eq!(merge_tracks(&Track::default(), &x), x);
    }

    #[test]
    fn merge_keeps_duplicates() {
        let x = Track::new(vec![note(0, 0, 60)]);
        assert_eq!(merge_tracks(&x, &x).len(), 2);
    }

    #[test]
    fn split_requires_two_nonempty_tracks() {
        let grid = Grid::default();
        let one = Piece::from_tracks("solo", grid, vec![Track::new(vec![note(0, 0, 60)])]);
        match one.split_tracks() {
            Err(Error::IneligiblePiece { source_id, .. }) => assert_eq!(source_id, "solo"),
            other => panic!("unexpected {other:?}"),
        }
        let hollow = Piece::from_tracks(
            "hollow",
            grid,
            vec![Track::new(vec![note(0, 0, 60)]), Track::default()],
        );
        assert!(hollow.split_tracks().is_err());
        let duo = Piece::from_tracks(
            "duo",
            grid,
            vec![Track::new(vec![note(0, 0, 60)]), Track::new(vec![note(0, 0, 48)])],
        );
        let (x, y) = duo.split_tracks().unwrap();
        assert_eq!((x[0].pitch, y[0].pitch), (60, 48));
    }

    #[test]
    fn remap_only_touches_shared_programs() {
        let x = Track::new(vec![note(0, 0, 60)]);
        let mut other = note(1, 0, 50);
        other.program = 33;
        let y = Track::new(vec![note(0, 0, 48), other]);
        let remapped = y.remapped_against(&x);
        assert_eq!(remapped.programs(), vec![1, 33]);
    }

    #[test]
    fn notes_text_round_trip() {
        let notes = vec![note(0, 0, 60), note(2, 11, 127)];
        assert_eq!(parse_notes(&write_notes(&notes)).unwrap(), notes);
        assert!(parse_notes("0 0 200 1 0").is_err());
        assert!(parse_notes("0 0 60 1").is_err());
    }

    fn arb_note() -> impl Strategy<Value = QuantNote> {
        (0u32..64, 0u32..12, 0u8..128, 1u32..=96, 0u8..128).prop_map(
            |(beat, position, pitch, duration, program)| QuantNote {
                beat,
                position,
                pitch,
                duration,
                program,
            },
        )
    }

    proptest! {
        #[test]
        fn merge_commutes_and_associates(
            a in prop::collection::vec(arb_note(), 0..20),
            b in prop::collection::vec(arb_note(), 0..20),
            c in prop::collection::vec(arb_note(), 0..20),
        ) {
            let (a, b, c) = (Track::new(a), Track::new(b), Track::new(c));
            prop_assert_eq!(write_notes(&merge_tracks(&a, &b)), write_notes(&merge_tracks(&b, &a)));
            prop_assert_eq!(
                merge_tracks(&merge_tracks(&a, &b), &c),
                merge_tracks(&a, &merge_tracks(&b, &c))
            );
        }

        #[test]
        fn quantize_idempotent_on_grid(steps in 0u64..5000, dur in 1u64..96, tpb_mult in 1u64..80) {
            let grid = Grid::default();
            let tpb = grid.r as u64 * tpb_mult;
            let first = quantize_note(&raw(steps * tpb_mult, dur * tpb_mult), tpb as u32, &grid);
            if let Some(q) = first {
                prop_assert_eq!(q.onset_steps(&grid), steps);
                prop_assert_eq!(q.duration as u64, dur);
                // Re-expressing the quantized note in ticks and snapping again is a no-op.
                let again = quantize_note(
                    &raw(q.onset_steps(&grid) * tpb_mult, q.duration as u64 * tpb_mult),
                    tpb as u32,
                    &grid,
                );
                prop_assert_eq!(again, Some(q));
            }
        }
    }
}
