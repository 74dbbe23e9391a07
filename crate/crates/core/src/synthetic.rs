//! Planted-preference data with nested click ⊇ favor ⊇ buy behaviors.
//!
//! Items belong to topics and every user likes a few topics. Clicks mix
//! liked items with uniformly random noise; favorites are drawn from the
//! liked clicks and purchases from the favorites with the highest affinity,
//! so stronger behaviors are cleaner signals of the planted preference.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{Dataset, InteractionLog};

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedSpec {
    pub n_users: usize,
    pub n_items: usize,
    pub n_topics: usize,
    pub topics_per_user: usize,
    /// Clicks per user, of which `noise_clicks` are uniform over all items.
    pub clicks: usize,
    pub noise_clicks: usize,
    pub favors: usize,
    pub buys: usize,
    /// Standard deviation of the per-pair affinity jitter.
    pub jitter: f64,
}

impl Default for PlantedSpec {
    /// 200 users, 300 items, 100 events per user.
    fn default() -> Self {
        PlantedSpec {
            n_users: 200,
            n_items: 300,
            n_topics: 10,
            topics_per_user: 2,
            clicks: 70,
            noise_clicks: 30,
            favors: 20,
            buys: 10,
            jitter: 0.5,
        }
    }
}

impl PlantedSpec {
    pub fn small(n_users: usize) -> Self {
        PlantedSpec {
            n_users,
            n_items: 60,
            n_topics: 6,
            clicks: 14,
            noise_clicks: 6,
            favors: 6,
            buys: 3,
            ..Self::default()
        }
    }

    pub fn levels() -> Vec<Vec<String>> {
        vec![vec!["click".into()], vec!["favor".into()], vec!["buy".into()]]
    }
}

/// Generates the three behavior logs. Timestamps increase in generation
/// order, so temporal splits work on the output too.
pub fn planted(spec: &PlantedSpec, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let topic_of: Vec<usize> = (0..spec.n_items).map(|_| rng.random_range(0..spec.n_topics)).collect();
    let jitter = Normal::new(0.0, spec.jitter).expect("finite jitter");
    let topics: Vec<usize> = (0..spec.n_topics).collect();

    let mut logs: Vec<InteractionLog> =
        ["click", "favor", "buy"].iter().map(|b| InteractionLog::with_timestamps(*b, vec![], vec![])).collect();
    let mut clock = 0i64;
    for u in 0..spec.n_users as u32 {
        let liked_topics: Vec<usize> = topics.choose_multiple(&mut rng, spec.topics_per_user).copied().collect();
        let affinity: Vec<f64> =
            topic_of.iter().map(|t| f64::from(u8::from(liked_topics.contains(t))) + jitter.sample(&mut rng)).collect();
        let mut liked: Vec<u32> =
            (0..spec.n_items as u32).filter(|&i| liked_topics.contains(&topic_of[i as usize])).collect();
        liked.shuffle(&mut rng);

        let mut clicks: Vec<u32> = liked.iter().copied().take(spec.clicks.saturating_sub(spec.noise_clicks)).collect();
        let mut pool: Vec<u32> = (0..spec.n_items as u32).filter(|i| !clicks.contains(i)).collect();
        pool.shuffle(&mut rng);
        clicks.extend(pool.into_iter().take(spec.clicks.saturating_sub(clicks.len())));
        clicks.shuffle(&mut rng);

        let mut favors: Vec<u32> = clicks.iter().copied().filter(|i| liked.contains(i)).collect();
        favors.shuffle(&mut rng);
        favors.truncate(spec.favors);
        let mut buys = favors.clone();
        buys.sort_by(|a, b| affinity[*b as usize].total_cmp(&affinity[*a as usize]).then(a.cmp(b)));
        buys.truncate(spec.buys);
        buys.shuffle(&mut rng);

        for (log, items) in logs.iter_mut().zip([&clicks, &favors, &buys]) {
            for &i in items {
                log.pairs.push((u, i));
                log.timestamps.as_mut().expect("timestamped").push(clock);
                clock += 1;
            }
        }
    }
    Dataset::new(spec.n_users, spec.n_items, logs).expect("generated indices are in range")
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn default_size_and_nesting() {
        let d = planted(&PlantedSpec::default(), 7);
        assert_eq!(d.interaction_count(), 20_000);
        let set = |b: &str| d.log(b).unwrap().pairs.iter().copied().collect::<HashSet<_>>();
        let (c, f, b) = (set("click"), set("favor"), set("buy"));
        assert!(b.is_subset(&f) && f.is_subset(&c));
        assert_eq!(b.len(), 2000);
    }

    #[test]
    fn seeded() {
        let spec = PlantedSpec::small(20);
        assert_eq!(planted(&spec, 1), planted(&spec, 1));
        assert_ne!(planted(&spec, 1), planted(&spec, 2));
    }
}
