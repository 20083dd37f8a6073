//! Small joint Markov chains with exactly computable transfer entropies.
//!
//! A [`JointMarkovSpec`] is an order-1 chain on pairs `(x, y)` with
//! `x < nx`, `y < ny` and both alphabets at most 8. [`exact_flow`] sums over
//! the stationary joint of `(x_{t-1}, y_{t-1}, x_t, y_t)` to get both
//! transfer entropies, the instantaneous coupling term and the flow
//! quantity
//!
//! ```text
//! H(X_t | X_{t-1}) + H(Y_t | Y_{t-1}) - H(X_t Y_t | X_{t-1} Y_{t-1})
//!     = T(X→Y) + T(Y→X) + I(X_t ; Y_t | X_{t-1}, Y_{t-1})
//! ```
//!
//! so the estimator can be checked against a known answer, and the gap
//! between flow and the sum of transfer entropies is visible exactly.
//!
//! [`sample_paths`] draws symbol paths; [`SymbolPaths::to_tracks`] embeds
//! them in note pitches so they can go through the full pipeline
//! ([`pipeline_flow`]).

use std::fmt::Write as _;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::encode;
use crate::flow::{information_flow, pool_reports, FlowParams, PooledFlow};
use crate::model::ContextModel;
use crate::piece::{merge_tracks, QuantNote, Track};
use crate::config::Grid;

pub const MAX_ALPHABET: usize = 8;
const SUM_TOLERANCE: f64 = 1e-12;

/// Joint transition table `P(x_t, y_t | x_{t-1}, y_{t-1})`.
///
/// States are numbered `x * ny + y`; `transition` is row-major with one
/// row per previous state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointMarkovSpec {
    nx: usize,
    ny: usize,
    initial: Vec<f64>,
    transition: Vec<f64>,
}

impl JointMarkovSpec {
    pub fn new(nx: usize, ny: usize, transition: Vec<f64>, initial: Option<Vec<f64>>) -> Result<Self> {
        let states = nx * ny;
        let spec = JointMarkovSpec {
            nx,
            ny,
            initial: initial.unwrap_or_else(|| vec![1.0 / states as f64; states]),
            transition,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        if !(1..=MAX_ALPHABET).contains(&self.nx) || !(1..=MAX_ALPHABET).contains(&self.ny) {
            return bad(format!("alphabet sizes must be 1..={MAX_ALPHABET}, got {}x{}", self.nx, self.ny));
        }
        let s = self.states();
        if self.transition.len() != s * s {
            return bad(format!("transition table needs {} entries, got {}", s * s, self.transition.len()));
        }
        if self.initial.len() != s {
            return bad(format!("initial distribution needs {s} entries, got {}", self.initial.len()));
        }
        let check = |row: &[f64], what: String| -> Result<()> {
            if let Some(p) = row.iter().find(|p| !p.is_finite() || **p < 0.0) {
                return bad(format!("{what} has invalid entry {p}"));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > SUM_TOLERANCE {
                return bad(format!("{what} sums to {sum}"));
            }
            Ok(())
        };
        check(&self.initial, "initial distribution".into())?;
        for (i, row) in self.transition.chunks(s).enumerate() {
            check(row, format!("transition row {i}"))?;
        }
        Ok(())
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn states(&self) -> usize {
        self.nx * self.ny
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn transition(&self) -> &[f64] {
        &self.transition
    }

    pub fn p(&self, from: usize, to: usize) -> f64 {
        self.transition[from * self.states() + to]
    }

    fn split(&self, state: usize) -> (usize, usize) {
        (state / self.ny, state % self.ny)
    }

    /// Two independent chains: `P = P_X ⊗ P_Y`.
    pub fn independent(px: &[f64], nx: usize, py: &[f64], ny: usize) -> Result<Self> {
        if px.len() != nx * nx || py.len() != ny * ny {
            return Err(Error::InvalidSpec("marginal chains must be square".into()));
        }
        let s = nx * ny;
        let mut t = vec![0.0; s * s];
        for from in 0..s {
            let (x0, y0) = (from / ny, from % ny);
            for to in 0..s {
                let (x1, y1) = (to / ny, to % ny);
                t[from * s + to] = px[x0 * nx + x1] * py[y0 * ny + y1];
            }
        }
        JointMarkovSpec::new(nx, ny, t, None)
    }

    /// X and Y each i.i.d. uniform on `n` symbols, independent of each other.
    pub fn independent_uniform(n: usize) -> Result<Self> {
        let u = vec![1.0 / n as f64; n * n];
        JointMarkovSpec::independent(&u, n, &u, n)
    }

    /// X i.i.d. uniform on `n` symbols and `Y_t = X_{t-1}`.
    pub fn copy(n: usize) -> Result<Self> {
        let s = n * n;
        let mut t = vec![0.0; s * s];
        for from in 0..s {
            let x0 = from / n;
            for x1 in 0..n {
                t[from * s + x1 * n + x0] = 1.0 / n as f64;
            }
        }
        JointMarkovSpec::new(n, n, t, None)
    }

    /// X i.i.d. uniform on `n` symbols and `Y_t = X_t`.
    pub fn instantaneous(n: usize) -> Result<Self> {
        let s = n * n;
        let mut t = vec![0.0; s * s];
        for from in 0..s {
            for x1 in 0..n {
                t[from * s + x1 * n + x1] = 1.0 / n as f64;
            }
        }
        JointMarkovSpec::new(n, n, t, None)
    }

    /// Rows drawn from a flat Dirichlet, so every transition is possible.
    pub fn random<R: Rng>(nx: usize, ny: usize, rng: &mut R) -> Result<Self> {
        let s = nx * ny;
        let mut t = Vec::with_capacity(s * s);
        for _ in 0..s {
            let row: Vec<f64> = (0..s).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
            let sum: f64 = row.iter().sum();
            t.extend(row.iter().map(|v| v / sum));
        }
        JointMarkovSpec::new(nx, ny, t, None)
    }

    /// Parses `nx ny`, then the row-major transition table, then an optional
    /// initial distribution (uniform when absent). `#` starts a comment.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut tokens = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("");
            for tok in line.split_whitespace() {
                tokens.push((i + 1, tok));
            }
        }
        let mut it = tokens.into_iter();
        let mut size = |what: &str| -> Result<usize> {
            let (line, tok) = it
                .next()
                .ok_or_else(|| Error::InvalidSpec(format!("missing {what}")))?;
            tok.parse()
                .map_err(|_| Error::TextFormat { line, message: format!("bad {what} `{tok}`") })
        };
        let nx = size("nx")?;
        let ny = size("ny")?;
        if !(1..=MAX_ALPHABET).contains(&nx) || !(1..=MAX_ALPHABET).contains(&ny) {
            return Err(Error::InvalidSpec(format!("alphabet sizes must be 1..={MAX_ALPHABET}, got {nx}x{ny}")));
        }
        let values = it
            .map(|(line, tok)| {
                tok.parse::<f64>()
                    .map_err(|_| Error::TextFormat { line, message: format!("bad probability `{tok}`") })
            })
            .collect::<Result<Vec<f64>>>()?;
        let s = nx * ny;
        match values.len() {
            n if n == s * s => JointMarkovSpec::new(nx, ny, values, None),
            n if n == s * s + s => {
                let (t, init) = values.split_at(s * s);
                JointMarkovSpec::new(nx, ny, t.to_vec(), Some(init.to_vec()))
            }
            n => Err(Error::InvalidSpec(format!(
                "expected {} or {} probabilities for {nx}x{ny}, got {n}",
                s * s,
                s * s + s
            ))),
        }
    }

    pub fn to_text(&self) -> String {
        let s = self.states();
        let mut out = format!("{} {}\n", self.nx, self.ny);
        for row in self.transition.chunks(s) {
            let cells: Vec<String> = row.iter().map(|p| format!("{p:?}")).collect();
            let _ = writeln!(out, "{}", cells.join(" "));
        }
        out.push_str("# initial\n");
        let cells: Vec<String> = self.initial.iter().map(|p| format!("{p:?}")).collect();
        let _ = writeln!(out, "{}", cells.join(" "));
        out
    }
}

/// Whether some power of the chain has a column that is positive in every
/// row, i.e. every start state can reach a common state at a common time.
/// This holds exactly when the chain has a single recurrent class and it is
/// aperiodic, which is what makes the stationary distribution unique and
/// power iteration convergent.
fn has_unique_limit(spec: &JointMarkovSpec) -> bool {
    let s = spec.states();
    let mut reach: Vec<bool> = spec.transition.iter().map(|&p| p > 0.0).collect();
    // 2^13 steps exceeds every bound on the exponent for 64 states.
    for _ in 0..13 {
        let mut next = vec![false; s * s];
        for i in 0..s {
            for k in 0..s {
                if reach[i * s + k] {
                    for j in 0..s {
                        next[i * s + j] |= reach[k * s + j];
                    }
                }
            }
        }
        reach = next;
    }
    (0..s).any(|j| (0..s).all(|i| reach[i * s + j]))
}

/// Stationary distribution over joint states `x * ny + y`.
pub fn stationary(spec: &JointMarkovSpec) -> Result<Vec<f64>> {
    if !has_unique_limit(spec) {
        return Err(Error::NonConvergent(
            "chain is reducible or periodic; no unique stationary distribution".into(),
        ));
    }
    let s = spec.states();
    let mut pi = vec![1.0 / s as f64; s];
    for _ in 0..1_000_000 {
        let mut next = vec![0.0; s];
        for (i, &mass) in pi.iter().enumerate() {
            for (j, slot) in next.iter_mut().enumerate() {
                *slot += mass * spec.p(i, j);
            }
        }
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|v| *v /= total);
        let residual: f64 = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
        pi = next;
        if residual < 1e-12 {
            return Ok(pi);
        }
    }
    Err(Error::NonConvergent("power iteration did not converge in 10^6 steps".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExactFlowResult {
    pub te_x_to_y: f64,
    pub te_y_to_x: f64,
    /// `I(X_t ; Y_t | X_{t-1}, Y_{t-1})`.
    pub instantaneous: f64,
    pub h_x: f64,
    pub h_y: f64,
    pub h_xy: f64,
    /// `h_x + h_y - h_xy`.
    pub flow: f64,
}

impl ExactFlowResult {
    /// `flow - (te_x_to_y + te_y_to_x + instantaneous)`; zero up to rounding.
    pub fn identity_residual(&self) -> f64 {
        self.flow - (self.te_x_to_y + self.te_y_to_x + self.instantaneous)
    }
}

fn plogp_ratio(p: f64, q: f64) -> f64 {
    if p > 0.0 {
        p * (p / q).ln()
    } else {
        0.0
    }
}

fn entropy(probs: impl IntoIterator<Item = f64>) -> f64 {
    probs.into_iter().filter(|&p| p > 0.0).map(|p| -p * p.ln()).sum()
}

/// All terms in nats per step at stationarity.
///
/// Transfer entropies and the instantaneous term are summed directly as
/// expected log ratios; the flow quantity comes from the three conditional
/// entropies. The two routes share only the stationary joint.
pub fn exact_flow(spec: &JointMarkovSpec) -> Result<ExactFlowResult> {
    let pi = stationary(spec)?;
    let (nx, ny, s) = (spec.nx, spec.ny, spec.states());

    // joint[(x0, y0, x1, y1)] = pi(x0, y0) P(x1, y1 | x0, y0)
    let joint = |from: usize, to: usize| pi[from] * spec.p(from, to);

    // Marginal pieces of the four-variable joint.
    let mut p_x0y0x1 = vec![0.0; s * nx];
    let mut p_x0y0y1 = vec![0.0; s * ny];
    let mut p_x0x1 = vec![0.0; nx * nx];
    let mut p_y0y1 = vec![0.0; ny * ny];
    let mut p_x0 = vec![0.0; nx];
    let mut p_y0 = vec![0.0; ny];
    for from in 0..s {
        let (x0, y0) = spec.split(from);
        p_x0[x0] += pi[from];
        p_y0[y0] += pi[from];
        for to in 0..s {
            let (x1, y1) = spec.split(to);
            let p = joint(from, to);
            p_x0y0x1[from * nx + x1] += p;
            p_x0y0y1[from * ny + y1] += p;
            p_x0x1[x0 * nx + x1] += p;
            p_y0y1[y0 * ny + y1] += p;
        }
    }

    // T(X→Y) = Σ p(x0,y0,y1) ln[ p(y1|x0,y0) / p(y1|y0) ]
    let mut te_x_to_y = 0.0;
    for from in 0..s {
        let (_, y0) = spec.split(from);
        for y1 in 0..ny {
            let p = p_x0y0y1[from * ny + y1];
            if p > 0.0 {
                let cond_full = p / pi[from];
                let cond_own = p_y0y1[y0 * ny + y1] / p_y0[y0];
                te_x_to_y += p * (cond_full / cond_own).ln();
            }
        }
    }
    let mut te_y_to_x = 0.0;
    for from in 0..s {
        let (x0, _) = spec.split(from);
        for x1 in 0..nx {
            let p = p_x0y0x1[from * nx + x1];
            if p > 0.0 {
                let cond_full = p / pi[from];
                let cond_own = p_x0x1[x0 * nx + x1] / p_x0[x0];
                te_y_to_x += p * (cond_full / cond_own).ln();
            }
        }
    }
    // I(X1;Y1|X0,Y0) = Σ p(x0,y0,x1,y1) ln[ p(x1,y1|s) / (p(x1|s) p(y1|s)) ]
    let mut instantaneous = 0.0;
    for from in 0..s {
        if pi[from] == 0.0 {
            continue;
        }
        for to in 0..s {
            let (x1, y1) = spec.split(to);
            let p = joint(from, to);
            let px = p_x0y0x1[from * nx + x1] / pi[from];
            let py = p_x0y0y1[from * ny + y1] / pi[from];
            instantaneous += plogp_ratio(p, pi[from] * px * py);
        }
    }

    let h_x = entropy(p_x0x1.iter().copied()) - entropy(p_x0.iter().copied());
    let h_y = entropy(p_y0y1.iter().copied()) - entropy(p_y0.iter().copied());
    let h_xy = entropy((0..s * s).map(|i| joint(i / s, i % s))) - entropy(pi.iter().copied());
    Ok(ExactFlowResult {
        te_x_to_y,
        te_y_to_x,
        instantaneous,
        h_x,
        h_y,
        h_xy,
        flow: h_x + h_y - h_xy,
    })
}

/// Paired symbol paths drawn from a spec.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymbolPaths {
    pub x: Vec<u8>,
    pub y: Vec<u8>,
}

/// Pitch of X symbol 0 in the note embedding.
pub const X_PITCH_BASE: u8 = 60;
/// Pitch of Y symbol 0; the two ranges never overlap.
pub const Y_PITCH_BASE: u8 = 40;
pub const X_PROGRAM: u8 = 0;
pub const Y_PROGRAM: u8 = 32;

impl SymbolPaths {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// One note per step on consecutive beats, symbol added to a fixed pitch
    /// base, every other field constant. The paths are cut into excerpts of
    /// `chunk_len` steps so beats stay inside the grid.
    pub fn to_tracks(&self, chunk_len: usize) -> Vec<(Track, Track)> {
        let voice = |symbols: &[u8], base: u8, program: u8| -> Track {
            symbols
                .iter()
                .enumerate()
                .map(|(i, &s)| QuantNote {
                    beat: i as u32,
                    position: 0,
                    pitch: base + s,
                    duration: 12,
                    program,
                })
                .collect()
        };
        self.x
            .chunks(chunk_len)
            .zip(self.y.chunks(chunk_len))
            .map(|(xs, ys)| (voice(xs, X_PITCH_BASE, X_PROGRAM), voice(ys, Y_PITCH_BASE, Y_PROGRAM)))
            .collect()
    }
}

/// Samples `length` steps, starting from the spec's initial distribution.
pub fn sample_paths(spec: &JointMarkovSpec, length: usize, seed: u64) -> SymbolPaths {
    let s = spec.states();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Option<WeightedIndex<f64>>> = spec
        .transition
        .chunks(s)
        .map(|row| WeightedIndex::new(row).ok())
        .collect();
    let mut state = WeightedIndex::new(&spec.initial)
        .expect("validated initial distribution")
        .sample(&mut rng);
    let mut paths = SymbolPaths {
        x: Vec::with_capacity(length),
        y: Vec::with_capacity(length),
    };
    for _ in 0..length {
        let (x, y) = spec.split(state);
        paths.x.push(x as u8);
        paths.y.push(y as u8);
        state = rows[state]
            .as_ref()
            .expect("validated rows have mass")
            .sample(&mut rng);
    }
    paths
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineOptions {
    pub steps: usize,
    pub seed: u64,
    pub chunk_len: usize,
    pub order: usize,
    pub lambda: f64,
    pub params: FlowParams,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            steps: 100_000,
            seed: 0,
            chunk_len: 500,
            order: 4,
            lambda: 1.0,
            params: FlowParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineEstimate {
    pub exact: ExactFlowResult,
    pub estimated: PooledFlow,
    pub chunks: usize,
}

/// Runs sampled paths through training and scoring and pools the flow over
/// excerpts. Per-beat units make the estimate comparable with the exact
/// per-step value, since each voice has one note per beat.
///
/// The model is trained on the solo encodings of both voices and on their
/// merge, the same material it is later asked to score.
pub fn pipeline_flow(spec: &JointMarkovSpec, opts: &PipelineOptions) -> Result<PipelineEstimate> {
    let exact = exact_flow(spec)?;
    let grid = Grid::default();
    if opts.chunk_len == 0 || opts.chunk_len >= grid.max_beat as usize {
        return Err(Error::Config(format!("chunk length must be in 1..{}", grid.max_beat)));
    }
    let paths = sample_paths(spec, opts.steps, opts.seed);
    let pairs = paths.to_tracks(opts.chunk_len);
    let mut corpus = Vec::with_capacity(pairs.len() * 3);
    for (x, y) in &pairs {
        corpus.push(encode(&[x], grid)?);
        corpus.push(encode(&[y], grid)?);
        corpus.push(encode(&[&merge_tracks(x, y)], grid)?);
    }
    let model = ContextModel::train(&corpus, opts.order, opts.lambda)?;
    let reports = pairs
        .iter()
        .enumerate()
        .filter(|(_, (x, _))| x.len() > opts.params.burn_in)
        .map(|(i, (x, y))| information_flow(&model, &format!("chunk-{i}"), x, y, &opts.params))
        .collect::<Result<Vec<_>>>()?;
    Ok(PipelineEstimate {
        exact,
        estimated: pool_reports(&reports),
        chunks: reports.len(),
    })
}
