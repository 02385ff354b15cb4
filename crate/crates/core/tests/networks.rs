mod support;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sustain_core::graph::{
    aggregate_snapshots, build_social_range, build_technical_range, Flavor, ListPatterns, ProjectWindow,
};
use sustain_core::ingest::resolve_identities;
use support::*;

fn window() -> ProjectWindow<'static> {
    ProjectWindow { project_id: PROJECT, incubation_start: start_date() }
}

#[test]
fn social_and_technical_match_brute_force() {
    let patterns = ListPatterns::default();
    for seed in 0..150 {
        let c = random_corpus(seed);
        let ids = resolve_identities(&c.emails, &c.commits, None).identities;
        for m in 1..=c.months {
            let s = build_social_range(&c.emails, &ids, &patterns, window(), m, m);
            assert_eq!(snapshot_weights(&s), oracle_social(&c, &ids, m, m), "social seed {seed} month {m}");
            s.validate().unwrap();
            let t = build_technical_range(&c.commits, &ids, window(), m, m);
            assert_eq!(snapshot_weights(&t), oracle_technical(&c, &ids, m, m), "tech seed {seed} month {m}");
            t.validate().unwrap();
        }
    }
}

#[test]
fn ranges_equal_aggregated_months() {
    let patterns = ListPatterns::default();
    for seed in 0..100 {
        let c = random_corpus(seed);
        let ids = resolve_identities(&c.emails, &c.commits, None).identities;
        for from in 1..=c.months {
            for to in from..=c.months {
                let singles: Vec<_> =
                    (from..=to).map(|m| build_social_range(&c.emails, &ids, &patterns, window(), m, m)).collect();
                let range = build_social_range(&c.emails, &ids, &patterns, window(), from, to);
                assert_eq!(aggregate_snapshots(&singles).unwrap(), range, "social seed {seed} {from}..{to}");
                assert_eq!(snapshot_weights(&range), oracle_social(&c, &ids, from, to));

                let singles: Vec<_> =
                    (from..=to).map(|m| build_technical_range(&c.commits, &ids, window(), m, m)).collect();
                let range = build_technical_range(&c.commits, &ids, window(), from, to);
                assert_eq!(aggregate_snapshots(&singles).unwrap(), range, "tech seed {seed} {from}..{to}");
            }
        }
    }
}

#[test]
fn aggregation_ignores_input_order() {
    let patterns = ListPatterns::default();
    let c = random_corpus(7);
    let ids = resolve_identities(&c.emails, &c.commits, None).identities;
    let mut singles: Vec<_> =
        (1..=c.months).map(|m| build_social_range(&c.emails, &ids, &patterns, window(), m, m)).collect();
    let expected = aggregate_snapshots(&singles).unwrap();
    singles.reverse();
    assert_eq!(aggregate_snapshots(&singles).unwrap(), expected);
    assert_eq!(expected.flavor, Flavor::Social);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn record_order_does_not_matter(seed in 0u64..10_000, shuffle in any::<u64>()) {
        let patterns = ListPatterns::default();
        let c = random_corpus(seed);
        let ids = resolve_identities(&c.emails, &c.commits, None).identities;
        let mut rng = ChaCha8Rng::seed_from_u64(shuffle);
        let mut emails = c.emails.clone();
        let mut commits = c.commits.clone();
        emails.shuffle(&mut rng);
        commits.shuffle(&mut rng);

        let shuffled_ids = resolve_identities(&emails, &commits, None).identities;
        prop_assert_eq!(&shuffled_ids, &ids);
        for m in 1..=c.months {
            prop_assert_eq!(
                build_social_range(&emails, &ids, &patterns, window(), m, m),
                build_social_range(&c.emails, &ids, &patterns, window(), m, m)
            );
            prop_assert_eq!(
                build_technical_range(&commits, &ids, window(), m, m),
                build_technical_range(&c.commits, &ids, window(), m, m)
            );
        }
    }

    #[test]
    fn every_address_resolves_to_a_known_developer(seed in 0u64..10_000) {
        let c = random_corpus(seed);
        let ids = resolve_identities(&c.emails, &c.commits, None).identities;
        let addresses = c.emails.iter().flat_map(|e| std::iter::once(&e.sender).chain(&e.recipients))
            .chain(c.commits.iter().map(|c| &c.author));
        for a in addresses {
            let id = ids.resolve(a).expect("address is registered");
            prop_assert!(ids.developers.contains_key(id));
            // canonical ids are fixed points
            prop_assert_eq!(ids.resolve(id.as_str()), Some(id));
        }
    }
}
