use std::collections::{BTreeMap, HashSet};

use rand::Rng as _;

use super::{Domain, Interaction, InteractionLog};
use crate::error::{Error, Result};
use crate::util::rng_for;

/// Inserts `round(ratio * n)` random interactions into the training users'
/// histories, where `n` counts their existing interactions. Each noise event
/// picks a training user, an item uniformly from both domains and a timestamp
/// uniformly inside that user's observed time range.
pub fn inject_noise(
    log: &InteractionLog,
    train_users: &[String],
    ratio: f64,
    seed: u64,
) -> Result<InteractionLog> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::invalid(format!("noise ratio must be in [0, 1], got {ratio}")));
    }
    let train: HashSet<&str> = train_users.iter().map(String::as_str).collect();
    let mut ranges: BTreeMap<&str, (i64, i64)> = BTreeMap::new();
    for it in log.interactions().iter().filter(|it| train.contains(it.user_id.as_str())) {
        let r = ranges.entry(&it.user_id).or_insert((it.timestamp, it.timestamp));
        r.0 = r.0.min(it.timestamp);
        r.1 = r.1.max(it.timestamp);
    }
    let total: usize = log.interactions().iter().filter(|it| train.contains(it.user_id.as_str())).count();
    let count = (ratio * total as f64).round() as usize;
    if count == 0 {
        return Ok(log.clone());
    }

    let users: Vec<(&str, (i64, i64))> = ranges.into_iter().collect();
    let mut items: Vec<(Domain, String, Option<String>)> = Vec::new();
    for d in Domain::BOTH {
        let vocab = log.vocab(d);
        for idx in 1..=vocab.len() {
            items.push((d, vocab.id(idx).to_string(), vocab.title(idx).map(str::to_string)));
        }
    }
    let mut taken: HashSet<(String, String, i64)> = log
        .interactions()
        .iter()
        .map(|it| (it.user_id.clone(), it.item_id.clone(), it.timestamp))
        .collect();
    let mut rng = rng_for(seed, "noise");
    let mut out = log.interactions().to_vec();
    let mut added = 0;
    while added < count {
        let (user, (lo, hi)) = users[rng.gen_range(0..users.len())];
        let (domain, item, title) = &items[rng.gen_range(0..items.len())];
        let ts = rng.gen_range(lo..=hi);
        if !taken.insert((user.to_string(), item.clone(), ts)) {
            continue;
        }
        out.push(Interaction {
            user_id: user.to_string(),
            item_id: item.clone(),
            domain: *domain,
            timestamp: ts,
            title: title.clone(),
        });
        added += 1;
    }
    InteractionLog::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{generate_synthetic, SynthConfig};

    fn setup() -> (InteractionLog, Vec<String>) {
        let cfg = SynthConfig { users: 30, items_a: 40, items_b: 40, ..SynthConfig::desk(1) };
        let log = generate_synthetic(&cfg, 1).unwrap();
        let users: Vec<String> = log.user_events().keys().take(20).cloned().collect();
        (log, users)
    }

    fn train_count(log: &InteractionLog, users: &[String]) -> usize {
        log.interactions().iter().filter(|i| users.contains(&i.user_id)).count()
    }

    #[test]
    fn zero_ratio_is_identity() {
        let (log, users) = setup();
        let out = inject_noise(&log, &users, 0.0, 3).unwrap();
        assert_eq!(out.interactions(), log.interactions());
    }

    #[test]
    fn inserts_rounded_count_into_train_users_only() {
        let (log, users) = setup();
        let n = train_count(&log, &users);
        let out = inject_noise(&log, &users, 0.1, 3).unwrap();
        let expected = (0.1 * n as f64).round() as usize;
        assert_eq!(out.len(), log.len() + expected);
        assert_eq!(train_count(&out, &users), n + expected);
    }

    #[test]
    fn exact_count_on_round_numbers() {
        let its: Vec<Interaction> = (0..1000)
            .map(|k| Interaction {
                user_id: format!("u{}", k % 10),
                item_id: format!("i{}", k % 37),
                domain: if k % 2 == 0 { Domain::A } else { Domain::B },
                timestamp: k as i64 * 100,
                title: None,
            })
            .collect();
        let log = InteractionLog::new(its).unwrap();
        let users: Vec<String> = (0..10).map(|u| format!("u{u}")).collect();
        assert_eq!(inject_noise(&log, &users, 0.1, 0).unwrap().len(), 1100);
    }

    #[test]
    fn deterministic_under_seed() {
        let (log, users) = setup();
        let a = inject_noise(&log, &users, 0.2, 9).unwrap();
        let b = inject_noise(&log, &users, 0.2, 9).unwrap();
        assert_eq!(a.interactions(), b.interactions());
    }

    #[test]
    fn rejects_out_of_range_ratio() {
        let (log, users) = setup();
        assert!(inject_noise(&log, &users, 1.5, 0).is_err());
    }
}
