//! Standard MIDI File reading (format 0 and 1) and a small writer for fixtures.
//!
//! Only what the scorer needs is decoded: note-on/note-off pairs, program
//! changes, and track boundaries. Tempo and meter are skipped because the
//! downstream grid is beat-relative. Errors carry the byte offset at which
//! the file stopped making sense.

use std::collections::{HashMap, VecDeque};

use crate::error::{Error, Result};

/// General MIDI percussion channel (channel 10, zero-based 9).
pub const DRUM_CHANNEL: u8 = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RawNote {
    pub track_index: usize,
    pub onset_ticks: u64,
    pub duration_ticks: u64,
    pub pitch: u8,
    pub program: u8,
    pub channel: u8,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ParseOptions {
    pub include_drums: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MidiFile {
    pub format: u16,
    pub ticks_per_beat: u32,
    /// Number of `MTrk` chunks read.
    pub track_count: usize,
    /// Sorted by (track, onset, pitch).
    pub notes: Vec<RawNote>,
    /// Note-ons still open at end of track; each was closed at the track end.
    pub unmatched_note_ons: usize,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn u8(&mut self) -> Result<u8> {
        let b = *self
            .bytes
            .get(self.pos)
            .ok_or_else(|| Error::midi(self.pos, "unexpected end of data"))?;
        self.pos += 1;
        Ok(b)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::midi(
                self.pos,
                format!("needed {n} bytes, {} left", self.remaining()),
            ));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    /// Variable-length quantity, at most four bytes.
    fn vlq(&mut self) -> Result<u32> {
        let start = self.pos;
        let mut value = 0u32;
        for _ in 0..4 {
            let b = self.u8()?;
            value = (value << 7) | (b & 0x7F) as u32;
            if b & 0x80 == 0 {
                return Ok(value);
            }
        }
        Err(Error::midi(start, "variable-length quantity longer than 4 bytes"))
    }
}

enum TrackEvent {
    NoteOn { channel: u8, pitch: u8 },
    NoteOff { channel: u8, pitch: u8 },
    Program { channel: u8, program: u8 },
}

struct TrackData {
    events: Vec<(u64, TrackEvent)>,
    end_tick: u64,
}

/// Parses a Standard MIDI File into notes.
///
/// Note-offs (including note-on with velocity 0) close the earliest open
/// note-on with the same channel and pitch. A note's program is the latest
/// program change on its channel at or before its onset, across all tracks;
/// program 0 when none precedes it.
pub fn parse_midi(bytes: &[u8], options: &ParseOptions) -> Result<MidiFile> {
    let mut reader = Reader::new(bytes);
    let magic = reader.take(4)?;
    if magic != b"MThd" {
        return Err(Error::midi(0, "missing MThd header"));
    }
    let header_len = reader.u32()? as usize;
    if header_len < 6 {
        return Err(Error::midi(4, format!("header length {header_len} < 6")));
    }
    let header_start = reader.pos;
    let format = reader.u16()?;
    if format > 1 {
        return Err(Error::midi(header_start, format!("unsupported SMF format {format}")));
    }
    let declared_tracks = reader.u16()?;
    let division_at = reader.pos;
    let division = reader.u16()?;
    if division & 0x8000 != 0 {
        return Err(Error::midi(division_at, "SMPTE time division has no beat grid"));
    }
    if division == 0 {
        return Err(Error::midi(division_at, "ticks per beat is zero"));
    }
    reader.take(header_len - 6)?;

    let mut tracks = Vec::new();
    while reader.remaining() > 0 {
        let chunk_at = reader.pos;
        let kind = reader.take(4)?;
        let len = reader.u32()? as usize;
        if reader.remaining() < len {
            return Err(Error::midi(
                chunk_at,
                format!("chunk declares {len} bytes, {} available", reader.remaining()),
            ));
        }
        let body_start = reader.pos;
        let body = reader.take(len)?;
        if kind == b"MTrk" {
            tracks.push(parse_track(body, body_start)?);
        }
    }
    if tracks.len() < declared_tracks as usize {
        return Err(Error::midi(
            bytes.len(),
            format!("header declares {declared_tracks} tracks, found {}", tracks.len()),
        ));
    }

    // Program state is per channel and global across tracks, so resolve it
    // against a merged timeline.
    let mut changes: HashMap<u8, Vec<(u64, usize, usize, u8)>> = HashMap::new();
    for (t, track) in tracks.iter().enumerate() {
        for (i, (tick, event)) in track.events.iter().enumerate() {
            if let TrackEvent::Program { channel, program } = *event {
                changes.entry(channel).or_default().push((*tick, t, i, program));
            }
        }
    }
    for list in changes.values_mut() {
        list.sort_unstable();
    }
    let program_at = |channel: u8, tick: u64| -> u8 {
        changes
            .get(&channel)
            .and_then(|list| {
                let idx = list.partition_point(|&(t, ..)| t <= tick);
                idx.checked_sub(1).map(|i| list[i].3)
            })
            .unwrap_or(0)
    };

    let mut notes = Vec::new();
    let mut unmatched = 0;
    for (t, track) in tracks.iter().enumerate() {
        let mut open: HashMap<(u8, u8), VecDeque<u64>> = HashMap::new();
        let mut emit = |channel: u8, pitch: u8, onset: u64, end: u64| {
            if channel == DRUM_CHANNEL && !options.include_drums {
                return;
            }
            notes.push(RawNote {
                track_index: t,
                onset_ticks: onset,
                duration_ticks: end.saturating_sub(onset).max(1),
                pitch,
                program: program_at(channel, onset),
                channel,
            });
        };
        for (tick, event) in &track.events {
            match *event {
                TrackEvent::NoteOn { channel, pitch } => {
                    open.entry((channel, pitch)).or_default().push_back(*tick);
                }
                TrackEvent::NoteOff { channel, pitch } => {
                    if let Some(onset) = open.get_mut(&(channel, pitch)).and_then(|q| q.pop_front()) {
                        emit(channel, pitch, onset, *tick);
                    }
                }
                TrackEvent::Program { .. } => {}
            }
        }
        let mut leftovers: Vec<_> = open
            .into_iter()
            .flat_map(|((channel, pitch), q)| q.into_iter().map(move |onset| (onset, channel, pitch)))
            .collect();
        leftovers.sort_unstable();
        unmatched += leftovers.len();
        for (onset, channel, pitch) in leftovers {
            emit(channel, pitch, onset, track.end_tick);
        }
    }
    notes.sort_unstable_by_key(|n| (n.track_index, n.onset_ticks, n.pitch, n.duration_ticks, n.channel));

    Ok(MidiFile {
        format,
        ticks_per_beat: division as u32,
        track_count: tracks.len(),
        notes,
        unmatched_note_ons: unmatched,
    })
}

fn parse_track(body: &[u8], base: usize) -> Result<TrackData> {
    let mut reader = Reader::new(body);
    let at = |r: &Reader| base + r.pos;
    let mut tick = 0u64;
    let mut running: Option<u8> = None;
    let mut events = Vec::new();
    while reader.remaining() > 0 {
        tick += reader.vlq().map_err(|e| rebase(e, base))? as u64;
        let status_at = at(&reader);
        let first = reader.u8().map_err(|e| rebase(e, base))?;
        let (status, first_data) = if first & 0x80 != 0 {
            (first, None)
        } else {
            match running {
                Some(s) => (s, Some(first)),
                None => return Err(Error::midi(status_at, "data byte without running status")),
            }
        };
        match status {
            0xFF => {
                running = None;
                let kind = reader.u8().map_err(|e| rebase(e, base))?;
                let len = reader.vlq().map_err(|e| rebase(e, base))? as usize;
                reader.take(len).map_err(|e| rebase(e, base))?;
                if kind == 0x2F {
                    break;
                }
            }
            0xF0 | 0xF7 => {
                running = None;
                let len = reader.vlq().map_err(|e| rebase(e, base))? as usize;
                reader.take(len).map_err(|e| rebase(e, base))?;
            }
            0x80..=0xEF => {
                running = Some(status);
                let channel = status & 0x0F;
                let mut pending = first_data;
                let mut data = |reader: &mut Reader| -> Result<u8> {
                    let b = match pending.take() {
                        Some(b) => b,
                        None => reader.u8().map_err(|e| rebase(e, base))?,
                    };
                    if b & 0x80 != 0 {
                        return Err(Error::midi(base + reader.pos - 1, "status byte where data expected"));
                    }
                    Ok(b)
                };
                match status & 0xF0 {
                    0x80 => {
                        let pitch = data(&mut reader)?;
                        data(&mut reader)?;
                        events.push((tick, TrackEvent::NoteOff { channel, pitch }));
                    }
                    0x90 => {
                        let pitch = data(&mut reader)?;
                        let velocity = data(&mut reader)?;
                        let event = if velocity == 0 {
                            TrackEvent::NoteOff { channel, pitch }
                        } else {
                            TrackEvent::NoteOn { channel, pitch }
                        };
                        events.push((tick, event));
                    }
                    0xC0 => {
                        let program = data(&mut reader)?;
                        events.push((tick, TrackEvent::Program { channel, program }));
                    }
                    0xD0 => {
                        data(&mut reader)?;
                    }
                    _ => {
                        data(&mut reader)?;
                        data(&mut reader)?;
                    }
                }
            }
            other => {
                return Err(Error::midi(status_at, format!("unexpected status byte {other:#04x} in track")))
            }
        }
    }
    Ok(TrackData { events, end_tick: tick })
}

fn rebase(error: Error, base: usize) -> Error {
    match error {
        Error::MidiParse { offset, message } => Error::MidiParse {
            offset: offset + base,
            message,
        },
        other => other,
    }
}

/// Builds format-1 files for tests and fixtures.
#[derive(Debug, Clone)]
pub struct SmfBuilder {
    ticks_per_beat: u16,
    tracks: Vec<Vec<(u64, u8, Vec<u8>)>>,
}

impl SmfBuilder {
    pub fn new(ticks_per_beat: u16) -> Self {
        SmfBuilder {
            ticks_per_beat,
            tracks: Vec::new(),
        }
    }

    /// Starts a new track; subsequent events go to it.
    pub fn track(&mut self) -> &mut Self {
        self.tracks.push(Vec::new());
        self
    }

    fn push(&mut self, tick: u64, priority: u8, bytes: Vec<u8>) -> &mut Self {
        if self.tracks.is_empty() {
            self.tracks.push(Vec::new());
        }
        self.tracks.last_mut().unwrap().push((tick, priority, bytes));
        self
    }

    pub fn program(&mut self, tick: u64, channel: u8, program: u8) -> &mut Self {
        self.push(tick, 1, vec![0xC0 | channel, program])
    }

    pub fn note(&mut self, onset: u64, duration: u64, channel: u8, pitch: u8) -> &mut Self {
        self.push(onset, 2, vec![0x90 | channel, pitch, 100]);
        self.push(onset + duration, 0, vec![0x80 | channel, pitch, 64])
    }

    pub fn build(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(b"MThd");
        out.extend_from_slice(&6u32.to_be_bytes());
        out.extend_from_slice(&1u16.to_be_bytes());
        out.extend_from_slice(&(self.tracks.len() as u16).to_be_bytes());
        out.extend_from_slice(&self.ticks_per_beat.to_be_bytes());
        for track in &self.tracks {
            let mut events = track.clone();
            events.sort_by_key(|(tick, priority, _)| (*tick, *priority));
            let mut body = Vec::new();
            let mut last = 0u64;
            for (tick, _, bytes) in &events {
                write_vlq(&mut body, (tick - last) as u32);
                body.extend_from_slice(bytes);
                last = *tick;
            }
            body.extend_from_slice(&[0x00, 0xFF, 0x2F, 0x00]);
            out.extend_from_slice(b"MTrk");
            out.extend_from_slice(&(body.len() as u32).to_be_bytes());
            out.extend_from_slice(&body);
        }
        out
    }
}

fn write_vlq(out: &mut Vec<u8>, mut value: u32) {
    let mut stack = [0u8; 4];
    let mut n = 0;
    loop {
        stack[n] = (value & 0x7F) as u8;
        n += 1;
        value >>= 7;
        if value == 0 {
            break;
        }
    }
    for i in (0..n).rev() {
        out.push(if i > 0 { stack[i] | 0x80 } else { stack[i] });
    }
}
