//! Six-field event sequences.
//!
//! Every event is a tuple `(type, beat, position, pitch, duration,
//! instrument)`. A sequence opens with a start event, lists the instruments
//! it uses, marks the start of notes, carries the notes in canonical order,
//! and closes with an end event:
//!
//! | type | meaning                         | non-zero fields                       |
//! |------|---------------------------------|---------------------------------------|
//! | 0    | start of the piece              | none                                  |
//! | 1    | an instrument used in the piece | instrument                            |
//! | 2    | end of instruments, notes begin | none                                  |
//! | 3    | a note                          | beat, position, pitch, duration, instrument |
//! | 4    | end of the piece                | none                                  |
//!
//! A note's onset in grid steps is `beat * r + position`.

use std::fmt::{self, Write as _};
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::config::Grid;
use crate::error::{Error, Result};
use crate::piece::{merge_tracks, parse_ints, QuantNote, Track};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Field {
    Type,
    Beat,
    Position,
    Pitch,
    Duration,
    Instrument,
}

impl Field {
    pub const ALL: [Field; 6] = [
        Field::Type,
        Field::Beat,
        Field::Position,
        Field::Pitch,
        Field::Duration,
        Field::Instrument,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Field::Type => "type",
            Field::Beat => "beat",
            Field::Position => "position",
            Field::Pitch => "pitch",
            Field::Duration => "duration",
            Field::Instrument => "instrument",
        }
    }

    /// Number of values the field can take under `grid`.
    ///
    /// Duration includes 0 because non-note events carry it.
    pub fn vocab_size(self, grid: &Grid) -> usize {
        match self {
            Field::Type => 5,
            Field::Beat => grid.max_beat as usize,
            Field::Position => grid.r as usize,
            Field::Pitch => 128,
            Field::Duration => grid.max_dur as usize + 1,
            Field::Instrument => 128,
        }
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One value per event field.
///
/// Serializes as a table keyed by field name.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "Named<T>", into = "Named<T>", bound(serialize = "T: Clone + Serialize", deserialize = "T: Deserialize<'de>"))]
pub struct PerField<T>(pub [T; 6]);

#[derive(Serialize, Deserialize)]
struct Named<T> {
    r#type: T,
    beat: T,
    position: T,
    pitch: T,
    duration: T,
    instrument: T,
}

impl<T> From<Named<T>> for PerField<T> {
    fn from(n: Named<T>) -> Self {
        PerField([n.r#type, n.beat, n.position, n.pitch, n.duration, n.instrument])
    }
}

impl<T> From<PerField<T>> for Named<T> {
    fn from(PerField([r#type, beat, position, pitch, duration, instrument]): PerField<T>) -> Self {
        Named {
            r#type,
            beat,
            position,
            pitch,
            duration,
            instrument,
        }
    }
}

impl<T> Index<Field> for PerField<T> {
    type Output = T;

    fn index(&self, field: Field) -> &T {
        &self.0[field.index()]
    }
}

impl<T> IndexMut<Field> for PerField<T> {
    fn index_mut(&mut self, field: Field) -> &mut T {
        &mut self.0[field.index()]
    }
}

impl<T: Copy> PerField<T> {
    pub fn from_fn(mut f: impl FnMut(Field) -> T) -> Self {
        PerField(Field::ALL.map(&mut f))
    }

    pub fn map<U: Copy>(&self, mut f: impl FnMut(Field, T) -> U) -> PerField<U> {
        PerField::from_fn(|field| f(field, self[field]))
    }
}

impl PerField<f64> {
    /// Sum in field order.
    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum EventKind {
    Start = 0,
    Instrument = 1,
    StartOfNotes = 2,
    Note = 3,
    End = 4,
}

impl EventKind {
    pub fn from_code(code: u32) -> Option<EventKind> {
        Some(match code {
            0 => EventKind::Start,
            1 => EventKind::Instrument,
            2 => EventKind::StartOfNotes,
            3 => EventKind::Note,
            4 => EventKind::End,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Event {
    pub kind: EventKind,
    pub beat: u32,
    pub position: u32,
    pub pitch: u32,
    pub duration: u32,
    pub instrument: u32,
}

impl Event {
    const fn marker(kind: EventKind) -> Event {
        Event {
            kind,
            beat: 0,
            position: 0,
            pitch: 0,
            duration: 0,
            instrument: 0,
        }
    }

    pub const fn start() -> Event {
        Event::marker(EventKind::Start)
    }

    pub const fn start_of_notes() -> Event {
        Event::marker(EventKind::StartOfNotes)
    }

    pub const fn end() -> Event {
        Event::marker(EventKind::End)
    }

    pub fn instrument(program: u8) -> Event {
        Event {
            instrument: program as u32,
            ..Event::marker(EventKind::Instrument)
        }
    }

    pub fn note(note: &QuantNote) -> Event {
        Event {
            kind: EventKind::Note,
            beat: note.beat,
            position: note.position,
            pitch: note.pitch as u32,
            duration: note.duration,
            instrument: note.program as u32,
        }
    }

    pub fn is_note(&self) -> bool {
        self.kind == EventKind::Note
    }

    pub fn get(&self, field: Field) -> u32 {
        match field {
            Field::Type => self.kind as u32,
            Field::Beat => self.beat,
            Field::Position => self.position,
            Field::Pitch => self.pitch,
            Field::Duration => self.duration,
            Field::Instrument => self.instrument,
        }
    }

    pub fn fields(&self) -> [u32; 6] {
        Field::ALL.map(|f| self.get(f))
    }

    pub fn from_fields(values: [u32; 6]) -> Option<Event> {
        Some(Event {
            kind: EventKind::from_code(values[0])?,
            beat: values[1],
            position: values[2],
            pitch: values[3],
            duration: values[4],
            instrument: values[5],
        })
    }

    /// The note this event carries, if it is a note event.
    pub fn to_note(&self) -> Option<QuantNote> {
        self.is_note().then_some(QuantNote {
            beat: self.beat,
            position: self.position,
            pitch: self.pitch as u8,
            duration: self.duration,
            program: self.instrument as u8,
        })
    }

    fn note_key(&self) -> (u32, u32, u32, u32, u32) {
        (self.beat, self.position, self.pitch, self.duration, self.instrument)
    }
}

/// A structurally valid event sequence.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EventSequence {
    events: Vec<Event>,
    grid: Grid,
}

impl EventSequence {
    /// Validates `events` against the sequence structure and the grid bounds.
    pub fn new(events: Vec<Event>, grid: Grid) -> Result<Self> {
        validate(&events, &grid, true)?;
        Ok(EventSequence { events, grid })
    }

    /// Builds a sequence from an instrument list and notes; both are canonicalized.
    pub fn from_parts(instruments: &[u8], notes: &[QuantNote], grid: Grid) -> Result<Self> {
        let mut programs: Vec<u8> = instruments.to_vec();
        programs.extend(notes.iter().map(|n| n.program));
        programs.sort_unstable();
        programs.dedup();
        let mut notes = notes.to_vec();
        notes.sort_unstable();
        let mut events = Vec::with_capacity(programs.len() + notes.len() + 3);
        events.push(Event::start());
        events.extend(programs.into_iter().map(Event::instrument));
        events.push(Event::start_of_notes());
        events.extend(notes.iter().map(Event::note));
        events.push(Event::end());
        EventSequence::new(events, grid)
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn note_count(&self) -> usize {
        self.events.iter().filter(|e| e.is_note()).count()
    }

    /// Programs listed in the header.
    pub fn instruments(&self) -> Vec<u8> {
        self.events
            .iter()
            .take_while(|e| e.kind != EventKind::StartOfNotes)
            .filter(|e| e.kind == EventKind::Instrument)
            .map(|e| e.instrument as u8)
            .collect()
    }

    /// Everything but the end event: a valid generation prime.
    pub fn without_end(&self) -> &[Event] {
        &self.events[..self.events.len() - 1]
    }

    /// Musical span in beats, from the first onset to the latest note end.
    pub fn span_beats(&self) -> f64 {
        span_beats(&decode(self), &self.grid)
    }
}

pub fn span_beats(notes: &[QuantNote], grid: &Grid) -> f64 {
    let start = notes.iter().map(|n| n.onset_steps(grid)).min();
    let end = notes.iter().map(|n| n.end_steps(grid)).max();
    match (start, end) {
        (Some(s), Some(e)) => (e - s) as f64 / grid.r as f64,
        _ => 0.0,
    }
}

/// Checks the header/notes/end structure and the field bounds.
///
/// With `complete = false` the end event is forbidden instead of required,
/// which is what a generation prime looks like.
pub fn validate(events: &[Event], grid: &Grid, complete: bool) -> Result<()> {
    let fail = |i: usize, reason: &str| Err(Error::structure(i, reason));
    let zero_except = |e: &Event, keep: Option<Field>| {
        Field::ALL
            .iter()
            .filter(|f| **f != Field::Type && Some(**f) != keep)
            .all(|f| e.get(*f) == 0)
    };

    let mut i = 0;
    match events.first() {
        Some(e) if e.kind == EventKind::Start && zero_except(e, None) => i += 1,
        Some(_) => return fail(0, "sequence must open with a bare start event"),
        None => return fail(0, "empty sequence"),
    }

    let mut last_instrument: Option<u32> = None;
    while let Some(e) = events.get(i) {
        if e.kind != EventKind::Instrument {
            break;
        }
        if !zero_except(e, Some(Field::Instrument)) || e.instrument >= 128 {
            return fail(i, "instrument event must carry only a program below 128");
        }
        if last_instrument.is_some_and(|p| p >= e.instrument) {
            return fail(i, "instruments must be strictly ascending");
        }
        last_instrument = Some(e.instrument);
        i += 1;
    }
    if last_instrument.is_none() {
        return fail(i, "at least one instrument event required");
    }

    match events.get(i) {
        Some(e) if e.kind == EventKind::StartOfNotes && zero_except(e, None) => i += 1,
        Some(_) => return fail(i, "expected a bare start-of-notes event"),
        None => return fail(i, "sequence ends inside the header"),
    }

    let mut previous: Option<&Event> = None;
    while let Some(e) = events.get(i) {
        if e.kind != EventKind::Note {
            break;
        }
        let in_range = e.beat < grid.max_beat
            && e.position < grid.r
            && e.pitch < 128
            && (1..=grid.max_dur).contains(&e.duration)
            && e.instrument < 128;
        if !in_range {
            return fail(i, "note field out of range");
        }
        if previous.is_some_and(|p| p.note_key() > e.note_key()) {
            return fail(i, "notes out of canonical order");
        }
        previous = Some(e);
        i += 1;
    }

    if complete {
        match events.get(i) {
            Some(e) if e.kind == EventKind::End && zero_except(e, None) => i += 1,
            Some(_) => return fail(i, "expected a note or a bare end event"),
            None => return fail(i, "missing end event"),
        }
    }
    if i != events.len() {
        return fail(i, "trailing events");
    }
    Ok(())
}

/// Encodes one or more tracks as a single sequence.
///
/// The header lists the distinct programs in ascending order and the notes
/// are merged canonically, so the result does not depend on track order.
pub fn encode(tracks: &[&Track], grid: Grid) -> Result<EventSequence> {
    let merged = tracks.iter().fold(Track::default(), |acc, t| merge_tracks(&acc, t));
    if merged.is_empty() {
        return Err(Error::EmptySequence);
    }
    if let Some(i) = merged.iter().position(|n| !n.fits(&grid)) {
        return Err(Error::structure(i, "note does not fit the grid"));
    }
    EventSequence::from_parts(&[], &merged, grid)
}

/// The notes of a sequence, in order.
pub fn decode(seq: &EventSequence) -> Vec<QuantNote> {
    seq.events.iter().filter_map(Event::to_note).collect()
}

/// Text form: an optional `#grid r max_beat max_dur` line, then one event
/// per line as six space-separated integers.
pub fn write_events(seq: &EventSequence) -> String {
    let g = seq.grid;
    let mut out = format!("#grid {} {} {}\n", g.r, g.max_beat, g.max_dur);
    for e in &seq.events {
        let [a, b, c, d, f, h] = e.fields();
        writeln!(out, "{a} {b} {c} {d} {f} {h}").unwrap();
    }
    out
}

/// Parses [`write_events`] output. A `#grid` line overrides `default_grid`.
pub fn parse_events(text: &str, default_grid: Grid) -> Result<EventSequence> {
    let mut grid = default_grid;
    let mut events = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if let Some(rest) = trimmed.strip_prefix("#grid") {
            let v = parse_ints(rest, 3, i + 1)?;
            grid = Grid::new(v[0] as u32, v[1] as u32, v[2] as u32)
                .map_err(|e| Error::text(i + 1, e.to_string()))?;
            continue;
        }
        let content = trimmed.split('#').next().unwrap().trim();
        if content.is_empty() {
            continue;
        }
        let v = parse_ints(content, 6, i + 1)?;
        let fields = [0, 1, 2, 3, 4, 5].map(|k| v[k] as u32);
        let event = Event::from_fields(fields)
            .ok_or_else(|| Error::text(i + 1, format!("unknown event type {}", fields[0])))?;
        events.push(event);
    }
    EventSequence::new(events, grid)
}
