use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::prompt::{Prompt, PromptToken};
use crate::temporal::{GapGroup, GapToken};
use crate::util::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PerturbMode {
    /// Replace within the token's own duration group.
    Small,
    /// Replace with a token from one of the other groups.
    Big,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PerturbStats {
    /// Gap positions seen.
    pub gaps: usize,
    pub replaced: usize,
    /// Positions drawn for replacement but left alone (single-token group).
    pub skipped: usize,
}

fn candidates(tok: GapToken, mode: PerturbMode) -> Vec<GapToken> {
    let group = tok.group().expect("duration token");
    match mode {
        PerturbMode::Small => group.tokens().iter().copied().filter(|t| *t != tok).collect(),
        PerturbMode::Big => GapGroup::ALL
            .iter()
            .filter(|g| **g != group)
            .flat_map(|g| g.tokens().iter().copied())
            .collect(),
    }
}

/// Replaces each gap position independently with probability `alpha`.
/// Titles and domain tokens are never touched. Raw durations are swapped
/// for the representative duration of the drawn token.
pub fn perturb(prompt: &Prompt, mode: PerturbMode, alpha: f64, rng: &mut Rng) -> (Prompt, PerturbStats) {
    let mut stats = PerturbStats::default();
    let tokens = prompt
        .tokens
        .iter()
        .map(|tok| {
            let Some(gap) = tok.gap_token() else { return tok.clone() };
            stats.gaps += 1;
            if !rng.gen_bool(alpha) {
                return tok.clone();
            }
            let pool = candidates(gap, mode);
            let Some(&new) = pool.choose(rng) else {
                stats.skipped += 1;
                log::debug!("gap token {} has no same-group alternative", gap.label());
                return tok.clone();
            };
            stats.replaced += 1;
            match tok {
                PromptToken::Exact(_) => PromptToken::Exact(new.representative_gap()),
                _ => PromptToken::Gap(new),
            }
        })
        .collect();
    (Prompt { tokens }, stats)
}
