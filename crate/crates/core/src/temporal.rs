//! Time transforms: log-bucketed gaps for embeddings, normalised intervals
//! for the ODE step size, and the gap-token vocabulary used in prompts.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const HOUR: i64 = 3_600;
pub const DAY: i64 = 86_400;

/// Maps a gap in seconds to `min(⌊a·log₂(Δ+2)⌋, buckets − 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapBucketizer {
    pub scale: f64,
    pub buckets: usize,
}

impl Default for GapBucketizer {
    fn default() -> Self {
        Self { scale: 2.0, buckets: 64 }
    }
}

impl GapBucketizer {
    pub fn new(scale: f64, buckets: usize) -> Result<Self> {
        if !(scale > 0.0) || buckets == 0 {
            return Err(Error::Config(format!("gap bucketizer needs scale > 0 and buckets > 0, got {scale}, {buckets}")));
        }
        Ok(Self { scale, buckets })
    }

    pub fn discretize(&self, gap: i64) -> Result<usize> {
        if gap < -1 {
            return Err(Error::invalid(format!("gap {gap} below the start sentinel -1")));
        }
        let pos = (self.scale * ((gap + 2) as f64).log2()).floor() as usize;
        Ok(pos.min(self.buckets - 1))
    }
}

/// `Δ̃ = log₂(Δ+2) / log₂(Δ_max+2)`, clamped to 1 above `Δ_max`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalNormalizer {
    pub max_gap: i64,
}

impl IntervalNormalizer {
    pub fn new(max_gap: i64) -> Result<Self> {
        if max_gap < 1 {
            return Err(Error::invalid(format!("maximum gap must be ≥ 1 second, got {max_gap}")));
        }
        Ok(Self { max_gap })
    }

    /// Fits the maximum over observed gaps (sentinels ignored).
    pub fn fit(gaps: impl IntoIterator<Item = i64>) -> Self {
        let max_gap = gaps.into_iter().filter(|g| *g >= 0).max().unwrap_or(1).max(1);
        Self { max_gap }
    }

    pub fn normalize(&self, gap: i64) -> f64 {
        let gap = gap.max(-1);
        let v = ((gap + 2) as f64).log2() / ((self.max_gap + 2) as f64).log2();
        v.min(1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GapToken {
    SeqStart,
    UnderHour,
    HourToDay,
    OneToThreeDays,
    ThreeToSevenDays,
    OneToFourWeeks,
    OneToThreeMonths,
    ThreeToTwelveMonths,
    OverYear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GapGroup {
    Short,
    Medium,
    Long,
}

impl GapGroup {
    pub const ALL: [GapGroup; 3] = [GapGroup::Short, GapGroup::Medium, GapGroup::Long];

    pub fn tokens(self) -> &'static [GapToken] {
        use GapToken::*;
        match self {
            GapGroup::Short => &[UnderHour, HourToDay, OneToThreeDays],
            GapGroup::Medium => &[ThreeToSevenDays, OneToFourWeeks],
            GapGroup::Long => &[OneToThreeMonths, ThreeToTwelveMonths, OverYear],
        }
    }
}

impl GapToken {
    /// Duration tokens in increasing order, with their inclusive lower bound in seconds.
    pub const DURATIONS: [(GapToken, i64); 8] = [
        (GapToken::UnderHour, 0),
        (GapToken::HourToDay, HOUR),
        (GapToken::OneToThreeDays, DAY),
        (GapToken::ThreeToSevenDays, 3 * DAY),
        (GapToken::OneToFourWeeks, 7 * DAY),
        (GapToken::OneToThreeMonths, 28 * DAY),
        (GapToken::ThreeToTwelveMonths, 90 * DAY),
        (GapToken::OverYear, 365 * DAY),
    ];

    pub fn from_gap(gap: i64) -> GapToken {
        if gap < 0 {
            return GapToken::SeqStart;
        }
        Self::DURATIONS
            .iter()
            .rev()
            .find(|(_, lo)| gap >= *lo)
            .map(|(t, _)| *t)
            .expect("boundaries start at 0")
    }

    pub fn label(self) -> &'static str {
        match self {
            GapToken::SeqStart => "SEQ_START",
            GapToken::UnderHour => "<1h",
            GapToken::HourToDay => "1h–1d",
            GapToken::OneToThreeDays => "1–3d",
            GapToken::ThreeToSevenDays => "3–7d",
            GapToken::OneToFourWeeks => "1–4w",
            GapToken::OneToThreeMonths => "1–3mo",
            GapToken::ThreeToTwelveMonths => "3–12mo",
            GapToken::OverYear => ">1yr",
        }
    }

    /// Bracketed prompt form, e.g. `[1–3d]`.
    pub fn prompt_form(self) -> String {
        format!("[{}]", self.label())
    }

    pub fn from_prompt_form(text: &str) -> Option<GapToken> {
        let inner = text.strip_prefix('[')?.strip_suffix(']')?;
        std::iter::once(GapToken::SeqStart)
            .chain(Self::DURATIONS.iter().map(|(t, _)| *t))
            .find(|t| t.label() == inner)
    }

    pub fn group(self) -> Result<GapGroup> {
        GapGroup::ALL
            .into_iter()
            .find(|g| g.tokens().contains(&self))
            .ok_or_else(|| Error::invalid("the sequence-start token has no duration group"))
    }

    /// A duration inside this token's range, used when a perturbed token has
    /// to be rendered as a number.
    pub fn representative_gap(self) -> i64 {
        match self {
            GapToken::SeqStart => -1,
            GapToken::UnderHour => HOUR / 2,
            GapToken::HourToDay => 6 * HOUR,
            GapToken::OneToThreeDays => 2 * DAY,
            GapToken::ThreeToSevenDays => 5 * DAY,
            GapToken::OneToFourWeeks => 14 * DAY,
            GapToken::OneToThreeMonths => 60 * DAY,
            GapToken::ThreeToTwelveMonths => 180 * DAY,
            GapToken::OverYear => 500 * DAY,
        }
    }
}

impl fmt::Display for GapToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Everything that determines how gaps are rendered into prompts. Its hash
/// is stamped into embedding caches so they are invalidated when it changes.
#[derive(Clone, Debug, Serialize)]
pub struct VocabConfig {
    pub tokens: Vec<(String, i64)>,
    pub groups: Vec<(GapGroup, Vec<String>)>,
    pub bucketizer: GapBucketizer,
}

impl VocabConfig {
    pub fn current(bucketizer: GapBucketizer) -> Self {
        Self {
            tokens: GapToken::DURATIONS.iter().map(|(t, lo)| (t.label().to_string(), *lo)).collect(),
            groups: GapGroup::ALL
                .iter()
                .map(|g| (*g, g.tokens().iter().map(|t| t.label().to_string()).collect()))
                .collect(),
            bucketizer,
        }
    }

    pub fn hash(&self) -> String {
        crate::util::canonical_hash(self)
    }
}
