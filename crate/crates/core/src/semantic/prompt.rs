use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::Domain;
use crate::temporal::{GapToken, DAY, HOUR};

pub const PROMPT_PREFIX: &str = "You will act as a time-aware preference interpreter. Please extract the time-aware semantic preferences from the following interaction sequence: ";

/// How elapsed time appears between interactions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    /// Discrete gap tokens such as `[1–3d]`.
    Tokens,
    /// Raw durations such as `5 days`.
    ExactTime,
    /// No time information at all.
    TitleOnly,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PromptToken {
    Domain(Domain),
    Title(String),
    Gap(GapToken),
    /// Exact duration in seconds.
    Exact(i64),
}

impl PromptToken {
    /// Duration token a gap position stands for, if this is a gap position.
    pub fn gap_token(&self) -> Option<GapToken> {
        match self {
            PromptToken::Gap(t) => Some(*t),
            PromptToken::Exact(s) => Some(GapToken::from_gap(*s)),
            _ => None,
        }
    }
}

pub fn domain_token(d: Domain) -> String {
    format!("[{d}_Domain]")
}

/// Human-readable duration, rounded to the coarsest fitting unit.
pub fn exact_duration(seconds: i64) -> String {
    let (n, unit) = if seconds >= DAY {
        ((seconds as f64 / DAY as f64).round() as i64, "day")
    } else if seconds >= HOUR {
        ((seconds as f64 / HOUR as f64).round() as i64, "hour")
    } else {
        ((seconds as f64 / 60.0).round() as i64, "minute")
    };
    if n == 1 {
        format!("1 {unit}")
    } else {
        format!("{n} {unit}s")
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Prompt {
    pub tokens: Vec<PromptToken>,
}

impl Prompt {
    pub fn render(&self) -> String {
        let mut out = String::from(PROMPT_PREFIX);
        for (i, tok) in self.tokens.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            match tok {
                PromptToken::Domain(d) => out.push_str(&domain_token(*d)),
                PromptToken::Title(t) => out.push_str(t),
                PromptToken::Gap(g) => out.push_str(&g.prompt_form()),
                PromptToken::Exact(s) => out.push_str(&exact_duration(*s)),
            }
        }
        out
    }

    pub fn gap_count(&self) -> usize {
        self.tokens.iter().filter(|t| t.gap_token().is_some()).count()
    }
}

/// Interleaves `[Domain] Title [Gap] [Domain] Title ...`. `gaps[i]` is the
/// gap preceding interaction `i` (the first is the start sentinel and is not
/// rendered).
pub fn build_prompt(events: &[(Domain, String)], gaps: &[i64], mode: PromptMode) -> Result<Prompt> {
    if events.is_empty() {
        return Err(Error::invalid("cannot build a prompt for an empty sequence"));
    }
    if gaps.len() != events.len() {
        return Err(Error::invalid("prompt gaps must align with events"));
    }
    let mut tokens = Vec::with_capacity(events.len() * 3);
    for (i, (domain, title)) in events.iter().enumerate() {
        if i > 0 {
            match mode {
                PromptMode::Tokens => tokens.push(PromptToken::Gap(GapToken::from_gap(gaps[i]))),
                PromptMode::ExactTime => tokens.push(PromptToken::Exact(gaps[i])),
                PromptMode::TitleOnly => {}
            }
        }
        tokens.push(PromptToken::Domain(*domain));
        tokens.push(PromptToken::Title(title.clone()));
    }
    Ok(Prompt { tokens })
}
