//! Run configuration shared by the library entry points and the CLI.
//!
//! A [`Config`] is read from a TOML file; every key is optional and falls
//! back to the defaults below. Reports embed the resolved config so a run
//! can be reproduced from its output alone.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{EntropyMode, FlowParams, Normalization};

/// Positions per beat.
pub const DEFAULT_RESOLUTION: u32 = 12;
/// Beats representable in one sequence.
pub const DEFAULT_MAX_BEAT: u32 = 1024;
/// Longest note, in grid steps (8 beats at the default resolution).
pub const DEFAULT_MAX_DURATION: u32 = 96;

/// The quantization grid and the value bounds it implies for each event field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Grid {
    /// Temporal resolution: positions per beat.
    pub r: u32,
    pub max_beat: u32,
    pub max_dur: u32,
}

impl Default for Grid {
    fn default() -> Self {
        Grid {
            r: DEFAULT_RESOLUTION,
            max_beat: DEFAULT_MAX_BEAT,
            max_dur: DEFAULT_MAX_DURATION,
        }
    }
}

impl Grid {
    pub fn new(r: u32, max_beat: u32, max_dur: u32) -> Result<Self> {
        let grid = Grid { r, max_beat, max_dur };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.r == 0 || self.max_beat == 0 || self.max_dur == 0 {
            return Err(Error::Config(format!(
                "grid bounds must be positive (r={}, max_beat={}, max_dur={})",
                self.r, self.max_beat, self.max_dur
            )));
        }
        Ok(())
    }

    /// Onset in grid steps of a (beat, position) pair.
    pub fn onset(&self, beat: u32, position: u32) -> u64 {
        beat as u64 * self.r as u64 + position as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub r: u32,
    pub max_beat: u32,
    pub max_dur: u32,
    /// Context-model order k.
    pub order: usize,
    /// Back-off interpolation weight.
    pub lambda: f64,
    pub context_len: usize,
    pub burn_in: usize,
    pub mode: EntropyMode,
    pub normalization: Normalization,
    pub seed: u64,
    /// Worker threads; 0 lets the pool decide.
    pub workers: usize,
    pub remap_shared_program: bool,
    pub include_drums: bool,
}

impl Default for Config {
    fn default() -> Self {
        let grid = Grid::default();
        let flow = FlowParams::default();
        Config {
            r: grid.r,
            max_beat: grid.max_beat,
            max_dur: grid.max_dur,
            order: crate::model::DEFAULT_ORDER,
            lambda: crate::model::DEFAULT_LAMBDA,
            context_len: flow.context_len,
            burn_in: flow.burn_in,
            mode: flow.mode,
            normalization: flow.normalization,
            seed: 0,
            workers: 0,
            remap_shared_program: flow.remap_shared_program,
            include_drums: false,
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Config =
            toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.grid().validate()?;
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be positive, got {}", self.lambda)));
        }
        if self.context_len == 0 {
            return Err(Error::Config("context_len must be positive".into()));
        }
        if self.burn_in == 0 {
            return Err(Error::Config("burn_in must be at least 1".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> Grid {
        Grid {
            r: self.r,
            max_beat: self.max_beat,
            max_dur: self.max_dur,
        }
    }

    pub fn flow_params(&self) -> FlowParams {
        FlowParams {
            context_len: self.context_len,
            burn_in: self.burn_in,
            mode: self.mode,
            normalization: self.normalization,
            remap_shared_program: self.remap_shared_program,
        }
    }
}
