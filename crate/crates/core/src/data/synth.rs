use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::table::TimeSeriesTable;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const SINE_PERIOD: f64 = 24.0;
const AUX_PERIOD: f64 = 17.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SynthKind {
    Trend,
    Sine,
    TrendSine,
    Mutation,
}

impl SynthKind {
    pub const ALL: [SynthKind; 4] = [SynthKind::Trend, SynthKind::Sine, SynthKind::TrendSine, SynthKind::Mutation];

    pub fn as_str(self) -> &'static str {
        match self {
            SynthKind::Trend => "trend",
            SynthKind::Sine => "sine",
            SynthKind::TrendSine => "trend+sine",
            SynthKind::Mutation => "mutation",
        }
    }
}

impl fmt::Display for SynthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| {
            Error::Config(format!("unknown series kind '{s}' (expected trend, sine, trend+sine, mutation)"))
        })
    }
}

/// A level change of the mutation series: from index `at` onward the level
/// is `level`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jump {
    pub at: usize,
    pub level: f64,
}

/// Jump times and levels of the mutation series of length `len`, a pure
/// function of `seed`. Every jump moves the level by at least 0.3.
pub fn mutation_schedule(len: usize, seed: u64) -> Vec<Jump> {
    if len < 2 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let count = rng.random_range(len / 40..=len / 20).clamp(1, len - 1);
    let mut times: Vec<usize> = rand::seq::index::sample(&mut rng, len - 1, count).into_iter().map(|t| t + 1).collect();
    times.sort_unstable();
    let mut level = 0.0;
    times
        .into_iter()
        .map(|at| {
            let step = rng.random_range(0.3..1.0);
            let up = rng.random_bool(0.5);
            level += if (up && level + step <= 1.5) || level - step < -1.5 { step } else { -step };
            Jump { at, level }
        })
        .collect()
}

/// Synthetic three-column table: `target` follows `kind`, `aux_mix` blends
/// the target with an independent oscillation, and `aux_lag` trails the
/// target by one step. Gaussian noise of standard deviation `noise` is added
/// to every column.
pub fn synth_series(kind: SynthKind, len: usize, noise: f64, seed: u64) -> Result<TimeSeriesTable> {
    if len < 8 {
        return Err(Error::Config(format!("synthetic series need at least 8 rows, got {len}")));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::Config(format!("noise level must be finite and non-negative, got {noise}")));
    }
    let span = (len - 1) as f64;
    let target: Vec<f64> = match kind {
        SynthKind::Trend => (0..len).map(|t| 1.0 + 2.0 * t as f64 / span).collect(),
        SynthKind::Sine => (0..len).map(|t| (TAU * t as f64 / SINE_PERIOD).sin()).collect(),
        SynthKind::TrendSine => {
            (0..len).map(|t| 2.0 * t as f64 / span + 0.5 * (TAU * t as f64 / SINE_PERIOD).sin()).collect()
        }
        SynthKind::Mutation => {
            let jumps = mutation_schedule(len, seed);
            let mut level = 0.0;
            let mut next = jumps.iter().peekable();
            (0..len)
                .map(|t| {
                    while let Some(j) = next.next_if(|j| j.at <= t) {
                        level = j.level;
                    }
                    level
                })
                .collect()
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let normal = Normal::new(0.0, noise).map_err(|e| Error::Config(e.to_string()))?;
    let mut jitter = || if noise > 0.0 { normal.sample(&mut rng) } else { 0.0 };
    let mut data = Vec::with_capacity(len * 3);
    for t in 0..len {
        let y = target[t];
        let mix = 0.5 * y + 0.5 * (TAU * t as f64 / AUX_PERIOD).sin();
        let lag = target[t.saturating_sub(1)];
        data.extend_from_slice(&[y + jitter(), mix + jitter(), lag + jitter()]);
    }
    let names = ["target", "aux_mix", "aux_lag"].map(String::from).to_vec();
    TimeSeriesTable::new(names, Tensor::new(len, 3, data)?)
}
