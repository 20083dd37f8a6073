//! Seeded synthetic corpora for experiments and tests.
//!
//! [`echo_corpus`] builds two-voice pieces where the second voice repeats
//! the first one beat later. [`style_corpus`] builds single-voice melodies in
//! one of two distinct idioms, used to train models with clearly different
//! habits.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::Grid;
use crate::piece::{Piece, QuantNote, Track};

const MAJOR: [u8; 7] = [0, 2, 4, 5, 7, 9, 11];
const PENTATONIC: [u8; 5] = [0, 3, 5, 7, 10];

pub const ECHO_LEAD_PROGRAM: u8 = 0;
pub const ECHO_FOLLOW_PROGRAM: u8 = 40;

/// Pitch of scale degree `degree` (may exceed one octave) above `root`.
fn scale_pitch(scale: &[u8], root: u8, degree: i32) -> u8 {
    let len = scale.len() as i32;
    let octave = degree.div_euclid(len);
    let step = scale[degree.rem_euclid(len) as usize] as i32;
    (root as i32 + 12 * octave + step).clamp(0, 127) as u8
}

/// A random-walk melody on the major scale: mostly quarter and eighth
/// notes, some half notes, an occasional rest.
fn walk_melody(rng: &mut ChaCha8Rng, beats: u32, program: u8) -> Track {
    let r = Grid::default().r;
    let mut notes = Vec::new();
    let mut onset = 0u32;
    let mut degree: i32 = rng.gen_range(0..7);
    while onset < beats * r {
        let duration = *[r / 2, r / 2, r, r, r, 2 * r].choose(rng).unwrap();
        if rng.gen_bool(0.1) {
            onset += duration;
            continue;
        }
        degree = (degree + rng.gen_range(-2..=2)).clamp(-5, 12);
        notes.push(QuantNote {
            beat: onset / r,
            position: onset % r,
            pitch: scale_pitch(&MAJOR, 60, degree),
            duration,
            program,
        });
        onset += duration;
    }
    Track::new(notes)
}

/// Two-voice pieces: a lead melody and a follower that plays every lead
/// note again one beat later, an octave lower, on another instrument.
pub fn echo_corpus(pieces: usize, beats: u32, seed: u64) -> Vec<Piece> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..pieces)
        .map(|i| {
            let lead = walk_melody(&mut rng, beats, ECHO_LEAD_PROGRAM);
            let follow: Track = lead
                .iter()
                .map(|n| QuantNote {
                    beat: n.beat + 1,
                    pitch: n.pitch - 12,
                    program: ECHO_FOLLOW_PROGRAM,
                    ..*n
                })
                .collect();
            Piece::from_tracks(format!("echo-{i:03}"), Grid::default(), vec![lead, follow])
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Style {
    /// Stepwise major-scale lines in quarter notes, piano.
    Stepwise,
    /// Leaping pentatonic lines in eighth notes, guitar.
    Leaping,
}

/// Single-voice melodies of `notes` notes each.
pub fn style_corpus(style: Style, pieces: usize, notes: usize, seed: u64) -> Vec<Track> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = Grid::default().r;
    (0..pieces)
        .map(|_| {
            let mut degree: i32 = 0;
            (0..notes)
                .map(|i| {
                    let (pitch, duration, program) = match style {
                        Style::Stepwise => {
                            degree = (degree + *[-1, 1, 1, -1, 0].choose(&mut rng).unwrap()).clamp(-3, 10);
                            (scale_pitch(&MAJOR, 60, degree), r, 0)
                        }
                        Style::Leaping => {
                            degree = (degree + *[-3, 3, 2, -2, 4].choose(&mut rng).unwrap()).clamp(-4, 12);
                            (scale_pitch(&PENTATONIC, 57, degree), r / 2, 24)
                        }
                    };
                    let onset = i as u32 * duration;
                    QuantNote {
                        beat: onset / r,
                        position: onset % r,
                        pitch,
                        duration,
                        program,
                    }
                })
                .collect()
        })
        .collect()
}
