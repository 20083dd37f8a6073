//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::f64::consts::LN_2;
use std::time::Instant;

use infoflow::event::{parse_events, validate, write_events};
use infoflow::flow::{conditional_entropy, EntropyMode, Normalization};
use infoflow::harness::{batch_score, build_pairs, positional_bias, self_enhancement, training_sequences, Label};
use infoflow::midi::SmfBuilder;
use infoflow::oracle::{exact_flow, pipeline_flow, stationary, JointMarkovSpec, PipelineOptions};
use infoflow::synth::{echo_corpus, style_corpus, Style};
use infoflow::{
    decode, encode, information_flow, parse_midi, ContextModel, EventKind, Field, FlowParams, Grid,
    ParseOptions, Piece, QuantNote, Track,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<(bool, String), Box<dyn std::error::Error>>;
type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 7] = [
        ("1 flow identity on 100 random chains (tol 1e-9 nats)", criterion_1),
        ("2 pipeline vs exact flow (tol max(10% rel, 0.02 nats))", criterion_2),
        ("3 positive > negative flow on 100 echo pieces (t > 3, pitch too)", criterion_3),
        ("4 positional bias MSE == 0, swapped reports bit-exact (>= 50 pieces)", criterion_4),
        ("5 self-enhancement 2x2 matrix, deterministic (20 primes, 200 steps)", criterion_5),
        ("6 entropy sanity (periodic < 0.02, iid within 3% of ln 4, ln 128 exact)", criterion_6),
        ("7 representation round trips (10^4 sequences) and golden MIDI", criterion_7),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let start = Instant::now();
        let (pass, detail) = match run() {
            Ok(outcome) => outcome,
            Err(e) => (false, format!("error: {e}")),
        };
        failed += usize::from(!pass);
        println!(
            "criterion {name}: {} [{detail}] ({:.1}s)",
            if pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}

// Independent reference for the chain quantities: the stationary law from a
// high matrix power, every term from joint entropies of
// (x0, y0, x1, y1).
struct Reference {
    te_xy: f64,
    te_yx: f64,
    inst: f64,
    flow: f64,
    pi: Vec<f64>,
}

fn reference(spec: &JointMarkovSpec) -> Reference {
    let s = spec.states();
    let mut m: Vec<f64> = spec.transition().to_vec();
    for _ in 0..20 {
        let mut sq = vec![0.0; s * s];
        for i in 0..s {
            for k in 0..s {
                let a = m[i * s + k];
                if a != 0.0 {
                    for j in 0..s {
                        sq[i * s + j] += a * m[k * s + j];
                    }
                }
            }
        }
        m = sq;
    }
    let pi: Vec<f64> = m[..s].to_vec();
    let (nx, ny) = (spec.nx(), spec.ny());
    let mut joint = Vec::new();
    for (from, &mass) in pi.iter().enumerate() {
        for to in 0..s {
            let p = mass * spec.p(from, to);
            joint.push(([from / ny, from % ny, to / ny, to % ny], p));
        }
    }
    let h = |keep: [bool; 4]| -> f64 {
        let dims = [nx, ny, nx, ny];
        let mut size = 1;
        for d in 0..4 {
            if keep[d] {
                size *= dims[d];
            }
        }
        let mut marg = vec![0.0; size];
        for (idx, p) in &joint {
            let mut key = 0;
            for d in 0..4 {
                if keep[d] {
                    key = key * dims[d] + idx[d];
                }
            }
            marg[key] += p;
        }
        marg.iter().filter(|&&p| p > 0.0).map(|p| -p * p.ln()).sum()
    };
    let (t, f) = (true, false);
    let h_x0y0 = h([t, t, f, f]);
    let te_xy = h([f, t, f, t]) - h([f, t, f, f]) - h([t, t, f, t]) + h_x0y0;
    let te_yx = h([t, f, t, f]) - h([t, f, f, f]) - h([t, t, t, f]) + h_x0y0;
    let inst = h([t, t, t, f]) + h([t, t, f, t]) - h([t, t, t, t]) - h_x0y0;
    let flow = (h([t, f, t, f]) - h([t, f, f, f])) + (h([f, t, f, t]) - h([f, t, f, f]))
        - (h([t, t, t, t]) - h_x0y0);
    Reference {
        te_xy,
        te_yx,
        inst,
        flow,
        pi,
    }
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_identity: f64 = 0.0;
    let mut worst_reference: f64 = 0.0;
    for _ in 0..100 {
        let nx = rng.gen_range(1..=8);
        let ny = rng.gen_range(1..=8);
        let spec = JointMarkovSpec::random(nx, ny, &mut rng)?;
        let exact = exact_flow(&spec)?;
        let r = reference(&spec);
        let pi = stationary(&spec)?;
        worst_identity = worst_identity.max(exact.identity_residual().abs());
        worst_identity = worst_identity.max((r.flow - (r.te_xy + r.te_yx + r.inst)).abs());
        for (a, b) in [
            (exact.te_x_to_y, r.te_xy),
            (exact.te_y_to_x, r.te_yx),
            (exact.instantaneous, r.inst),
            (exact.flow, r.flow),
        ] {
            worst_reference = worst_reference.max((a - b).abs());
        }
        for (a, b) in pi.iter().zip(&r.pi) {
            worst_reference = worst_reference.max((a - b).abs());
        }
    }
    Ok((
        worst_identity <= 1e-9 && worst_reference <= 1e-9,
        format!("max identity residual {worst_identity:.2e}, max deviation from reference {worst_reference:.2e}"),
    ))
}

fn criterion_2() -> Outcome {
    let specs = [
        ("independent", JointMarkovSpec::independent_uniform(2)?, 0.0),
        ("copy", JointMarkovSpec::copy(2)?, LN_2),
        ("instantaneous", JointMarkovSpec::instantaneous(2)?, LN_2),
    ];
    let opts = PipelineOptions {
        steps: 100_000,
        seed: 2,
        ..PipelineOptions::default()
    };
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, spec, target) in specs {
        let est = pipeline_flow(&spec, &opts)?;
        let tol = (0.1 * target).max(0.02);
        let ok = (est.exact.flow - target).abs() < 1e-12 && (est.estimated.total_flow - target).abs() <= tol;
        pass &= ok;
        parts.push(format!(
            "{name}: exact {:.4}, estimated {:.4} (pitch {:.4})",
            est.exact.flow,
            est.estimated.total_flow,
            est.estimated.flow[Field::Pitch]
        ));
    }
    Ok((pass, parts.join("; ")))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn var(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
}

fn criterion_3() -> Outcome {
    let train = echo_corpus(200, 64, 31);
    let test = echo_corpus(100, 64, 32);
    let model = ContextModel::train(&training_sequences(&train)?, 4, 1.0)?;
    let pairs = build_pairs(&test, 33)?;
    let report = batch_score(&model, &pairs, &FlowParams::default());
    let flows = |label: Label, field: Option<Field>| -> Vec<f64> {
        report
            .rows
            .iter()
            .filter(|r| r.label == label)
            .map(|r| field.map_or(r.report.total_flow, |f| r.report.flow[f]))
            .collect()
    };
    let (pos, neg) = (flows(Label::Positive, None), flows(Label::Negative, None));
    let t = (mean(&pos) - mean(&neg)) / (var(&pos) / pos.len() as f64 + var(&neg) / neg.len() as f64).sqrt();
    let (pp, np) = (flows(Label::Positive, Some(Field::Pitch)), flows(Label::Negative, Some(Field::Pitch)));
    let pass = report.failures.is_empty() && pos.len() == 100 && t > 3.0 && mean(&pp) > mean(&np);
    Ok((
        pass,
        format!(
            "positives {} mean {:.3}, negatives {} mean {:.3}, t = {t:.1}; pitch {:.3} vs {:.3}; failures {}",
            pos.len(),
            mean(&pos),
            neg.len(),
            mean(&neg),
            mean(&pp),
            mean(&np),
            report.failures.len()
        ),
    ))
}

fn criterion_4() -> Outcome {
    let mut pieces = echo_corpus(40, 48, 41);
    // Unrelated voices, including shared programs and identical tracks.
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for i in 0..20 {
        let voice = |rng: &mut ChaCha8Rng, program: u8| -> Track {
            (0..rng.gen_range(20..60))
                .map(|_| QuantNote {
                    beat: rng.gen_range(0..48),
                    position: rng.gen_range(0..12),
                    pitch: rng.gen_range(40..90),
                    duration: rng.gen_range(1..30),
                    program,
                })
                .collect()
        };
        let (px, py) = (rng.gen_range(0..3), rng.gen_range(0..3));
        let x = voice(&mut rng, px);
        let y = if i % 5 == 0 { x.clone() } else { voice(&mut rng, py) };
        pieces.push(Piece::from_tracks(format!("mixed-{i}"), Grid::default(), vec![x, y]));
    }
    let model = ContextModel::train(&training_sequences(&pieces)?, 4, 1.0)?;
    let mut exact_swaps = 0;
    for piece in &pieces {
        let (x, y) = piece.split_tracks()?;
        for params in [
            FlowParams::default(),
            FlowParams {
                mode: EntropyMode::Predictive,
                normalization: Normalization::PerEvent,
                ..FlowParams::default()
            },
        ] {
            let xy = information_flow(&model, &piece.source_id, x, y, &params)?;
            let yx = information_flow(&model, &piece.source_id, y, x, &params)?;
            let same_flow = Field::ALL.iter().all(|&f| xy.flow[f].to_bits() == yx.flow[f].to_bits());
            if xy == yx.swapped() && same_flow {
                exact_swaps += 1;
            }
        }
    }
    let bias = positional_bias(&model, &pieces, &FlowParams::default());
    let zero = Field::ALL.iter().all(|&f| bias.mse[f] == 0.0) && bias.mse_total == 0.0;
    let pass = zero && bias.pieces == pieces.len() && exact_swaps == 2 * pieces.len();
    Ok((
        pass,
        format!(
            "{} pieces, MSE per field {:?}, {exact_swaps}/{} swapped reports identical",
            bias.pieces,
            bias.mse.0,
            2 * pieces.len()
        ),
    ))
}

fn criterion_5() -> Outcome {
    let to_pieces = |tracks: Vec<Track>| -> Vec<Piece> {
        tracks
            .into_iter()
            .enumerate()
            .map(|(i, t)| Piece::from_tracks(format!("m{i}"), Grid::default(), vec![t]))
            .collect()
    };
    let model_a = ContextModel::train(
        &training_sequences(&to_pieces(style_corpus(Style::Stepwise, 100, 64, 51)))?,
        4,
        1.0,
    )?;
    let model_b = ContextModel::train(
        &training_sequences(&to_pieces(style_corpus(Style::Leaping, 100, 64, 52)))?,
        4,
        1.0,
    )?;
    let mut primes = style_corpus(Style::Stepwise, 10, 32, 53);
    primes.extend(style_corpus(Style::Leaping, 10, 32, 54));
    let params = FlowParams::default();
    let first = self_enhancement(&model_a, &model_b, &primes, 200, &params, 55)?;
    let second = self_enhancement(&model_a, &model_b, &primes, 200, &params, 55)?;
    let m = first.matrix;
    let pass = first == second && first.primes_used == 20 && m.iter().flatten().all(|v| v.is_finite());
    Ok((
        pass,
        format!(
            "matrix [scorer][generator] = [[{:.3}, {:.3}], [{:.3}, {:.3}]], A prefers own: {}, B prefers own: {}, deterministic: {}",
            m[0][0],
            m[0][1],
            m[1][0],
            m[1][1],
            first.prefers_own[0],
            first.prefers_own[1],
            first == second
        ),
    ))
}

fn melody(pitches: impl IntoIterator<Item = u8>) -> Track {
    pitches
        .into_iter()
        .enumerate()
        .map(|(i, pitch)| QuantNote {
            beat: i as u32,
            position: 0,
            pitch,
            duration: 12,
            program: 0,
        })
        .collect()
}

fn criterion_6() -> Outcome {
    let grid = Grid::default();
    let nll = |model: &ContextModel, seqs: &[infoflow::EventSequence]| -> Result<(f64, f64), infoflow::Error> {
        let mut total = 0.0;
        let mut pitch = 0.0;
        let mut n = 0.0;
        for seq in seqs {
            let trace = conditional_entropy(model, seq, 64, 16, EntropyMode::Nll)?;
            for step in &trace.steps {
                total += step.total();
                pitch += step[Field::Pitch];
                n += 1.0;
            }
        }
        Ok((total / n, pitch / n))
    };

    // (a) period-4 arpeggio, 20 x 500 = 10^4 training events.
    let cycle = [60u8, 64, 67, 72];
    let periodic: Vec<_> = (0..20)
        .map(|_| encode(&[&melody((0..500).map(|i| cycle[i % 4]))], grid))
        .collect::<Result<_, _>>()?;
    let model = ContextModel::train(&periodic, 4, 1.0)?;
    let (periodic_total, _) = nll(&model, &periodic[..1])?;
    let a = periodic_total < 0.02;

    // (b) i.i.d. uniform over 4 pitches, 10^5 training events, held-out scoring.
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let mut iid = |pieces: usize| -> Result<Vec<_>, infoflow::Error> {
        (0..pieces)
            .map(|_| {
                let pitches: Vec<u8> = (0..500).map(|_| cycle[rng.gen_range(0..4)]).collect();
                encode(&[&melody(pitches)], grid)
            })
            .collect()
    };
    let train = iid(200)?;
    let held_out = iid(20)?;
    let model = ContextModel::train(&train, 4, 1.0)?;
    let (_, iid_pitch) = nll(&model, &held_out)?;
    let rel = (iid_pitch - 4f64.ln()).abs() / 4f64.ln();
    let b = rel <= 0.03;

    // (c) untrained model, predictive mode.
    let untrained = ContextModel::new(4, 1.0, grid)?;
    let trace = conditional_entropy(&untrained, &held_out[0], 64, 16, EntropyMode::Predictive)?;
    let worst = trace
        .steps
        .iter()
        .map(|s| (s[Field::Pitch] - 128f64.ln()).abs())
        .fold(0.0, f64::max);
    let c = worst <= 1e-12;

    Ok((
        a && b && c,
        format!(
            "(a) {periodic_total:.4} nats/event; (b) pitch {iid_pitch:.4} vs ln 4 = {:.4} ({:.2}%); (c) max |H - ln 128| = {worst:.1e}",
            4f64.ln(),
            100.0 * rel
        ),
    ))
}

fn random_tracks(rng: &mut ChaCha8Rng) -> Vec<Track> {
    let n_tracks = rng.gen_range(1..=3);
    (0..n_tracks)
        .map(|_| {
            // A narrow range half the time, so tracks often share a program.
            let program = if rng.gen_bool(0.5) { rng.gen_range(0..3u8) } else { rng.gen_range(0..128u8) };
            let mut kept: Vec<QuantNote> = Vec::new();
            for _ in 0..rng.gen_range(1..30) {
                let note = QuantNote {
                    beat: rng.gen_range(0..200),
                    position: rng.gen_range(0..12),
                    pitch: rng.gen_range(0..128),
                    duration: rng.gen_range(1..=96),
                    program,
                };
                // Same-pitch notes on one channel must not overlap, or a
                // note-off cannot be attributed to one of them.
                let g = Grid::default();
                let clash = kept.iter().any(|k| {
                    k.pitch == note.pitch
                        && k.onset_steps(&g) < note.end_steps(&g)
                        && note.onset_steps(&g) < k.end_steps(&g)
                });
                if !clash {
                    kept.push(note);
                }
            }
            Track::new(kept)
        })
        .collect()
}

fn criterion_7() -> Outcome {
    let grid = Grid::default();
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    let mut failures = Vec::new();
    for case in 0..10_000 {
        let tracks = random_tracks(&mut rng);
        let refs: Vec<&Track> = tracks.iter().collect();
        let seq = encode(&refs, grid)?;
        let events = seq.events();

        let mut all: Vec<QuantNote> = tracks.iter().flat_map(|t| t.iter().copied()).collect();
        all.sort();
        let mut programs: Vec<u32> = all.iter().map(|n| n.program as u32).collect();
        programs.sort();
        programs.dedup();

        let header: Vec<u32> = events[1..1 + programs.len()].iter().map(|e| e.instrument).collect();
        let structure = events[0].kind == EventKind::Start
            && events[1..1 + programs.len()].iter().all(|e| e.kind == EventKind::Instrument)
            && header == programs
            && events[1 + programs.len()].kind == EventKind::StartOfNotes
            && events[2 + programs.len()..events.len() - 1].iter().all(|e| e.kind == EventKind::Note)
            && events.last().map(|e| e.kind) == Some(EventKind::End)
            && events.len() == all.len() + programs.len() + 3
            && validate(events, &grid, true).is_ok();
        if !structure {
            failures.push(format!("case {case}: structure"));
        }
        if decode(&seq) != all {
            failures.push(format!("case {case}: decode"));
        }
        let reversed: Vec<&Track> = tracks.iter().rev().collect();
        if encode(&reversed, grid)? != seq {
            failures.push(format!("case {case}: track order"));
        }
        if parse_events(&write_events(&seq), Grid::new(4, 8, 8)?)? != seq {
            failures.push(format!("case {case}: text"));
        }

        // Through a MIDI file: one channel per track, everything on the grid.
        let mut smf = SmfBuilder::new(480);
        for (i, track) in tracks.iter().enumerate() {
            let channel = i as u8;
            smf.track();
            smf.program(0, channel, track[0].program);
            for n in track.iter() {
                smf.note(n.onset_steps(&grid) * 40, n.duration as u64 * 40, channel, n.pitch);
            }
        }
        let file = parse_midi(&smf.build(), &ParseOptions::default())?;
        if Piece::from_midi(&file, grid, "rt").tracks != tracks {
            failures.push(format!("case {case}: midi"));
        }
    }

    let bytes = include_bytes!("fixtures/two_voice.mid");
    let file = parse_midi(bytes, &ParseOptions::default())?;
    let piece = Piece::from_midi(&file, grid, "two_voice");
    let q = |beat, position, pitch, duration, program| QuantNote {
        beat,
        position,
        pitch,
        duration,
        program,
    };
    let expected = vec![
        Track::new(vec![q(0, 0, 60, 12, 0), q(1, 0, 62, 6, 0), q(1, 6, 64, 6, 0), q(2, 0, 65, 24, 0)]),
        Track::new(vec![q(0, 0, 48, 12, 32), q(1, 0, 43, 12, 32), q(2, 0, 48, 3, 32), q(2, 4, 45, 21, 32)]),
    ];
    let golden = piece.tracks == expected && file.unmatched_note_ons == 0 && piece.dropped_notes == 0;
    if !golden {
        failures.push(format!("golden fixture: got {:?}", piece.tracks));
    }
    Ok((
        failures.is_empty(),
        if failures.is_empty() {
            "10000 sequences, golden fixture exact".to_string()
        } else {
            format!("{} failure(s), first: {}", failures.len(), failures[0])
        },
    ))
}
