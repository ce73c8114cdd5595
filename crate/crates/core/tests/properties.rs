use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use intercom_core::corpus::{EventKind, Window, DAY, HOUR};
use intercom_core::impact::{activity_delta_between, assign_deciles, mann_whitney_u, DefenseOutcome, TestConfig};
use intercom_core::predictor::auc;
use intercom_core::replynet::{group_pagerank, Group, PageRankConfig, ReplyGraph, TeleportSet};
use intercom_core::sentiment::{extract_text_features, strip_shared_words, train_forest};
use intercom_core::text::tokenize;
use intercom_core::{
    extract_crosslinks, matched_post, Corpus, CrosslinkConfig, Detector, DetectorConfig, Event, FeatureVector,
    ForestConfig, Lexicon,
};

const T0: i64 = 40 * DAY;

fn event(kind: EventKind, id: String, author: String, community: String, timestamp: i64) -> Event {
    Event {
        kind,
        id,
        author,
        community,
        timestamp,
        thread_id: None,
        parent_id: None,
        body: String::new(),
    }
}

/// Posts spread over six weeks with a share of them linking other posts, plus reply
/// trees under them. Users mostly comment in their home community `u % communities`.
fn random_corpus(seed: u64, communities: usize, users: usize, posts: usize, comments: usize) -> Corpus {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut events = Vec::new();
    let mut made: Vec<(String, String, i64)> = Vec::new();
    for i in 0..posts {
        let community = format!("c{}", r.gen_range(0..communities));
        let ts = T0 + r.gen_range(0..42 * DAY);
        let id = format!("p{i:04}");
        let mut e = event(EventKind::Post, id.clone(), format!("u{}", r.gen_range(0..users)), community.clone(), ts);
        if !made.is_empty() && r.gen_bool(0.3) {
            let (target, target_community, _) = &made[r.gen_range(0..made.len())];
            // occasionally name the wrong community
            let named = if r.gen_bool(0.1) { format!("c{}", r.gen_range(0..communities)) } else { target_community.clone() };
            e.body = format!("look at r/{named}/comments/{target} now");
        } else {
            e.body = "just a post".into();
        }
        events.push(e);
        made.push((id, community, ts));
    }
    let mut threads: Vec<Vec<(String, i64)>> = vec![Vec::new(); made.len()];
    for i in 0..comments {
        let k = r.gen_range(0..made.len());
        let (post, community, post_ts) = &made[k];
        let (parent, parent_ts) = if threads[k].is_empty() || r.gen_bool(0.4) {
            (post.clone(), *post_ts)
        } else {
            threads[k][r.gen_range(0..threads[k].len())].clone()
        };
        let ts = parent_ts + r.gen_range(1..8 * DAY);
        let id = format!("k{i:05}");
        let mut author = r.gen_range(0..users);
        if r.gen_bool(0.85) {
            let home: usize = community[1..].parse().unwrap();
            let locals: Vec<usize> = (0..users).filter(|u| u % communities == home).collect();
            if !locals.is_empty() {
                author = locals[r.gen_range(0..locals.len())];
            }
        }
        let mut e = event(EventKind::Comment, id.clone(), format!("u{author}"), community.clone(), ts);
        e.thread_id = Some(post.clone());
        e.parent_id = Some(parent);
        e.body = "a reply".into();
        events.push(e);
        threads[k].push((id, ts));
    }
    let (corpus, report) = Corpus::from_events(events);
    assert_eq!(report.rejected, 0, "{report:?}");
    corpus
}

fn corpus_strategy() -> impl Strategy<Value = Corpus> {
    (any::<u64>(), 2usize..5, 3usize..12, 5usize..40, 0usize..400)
        .prop_map(|(seed, c, u, p, k)| random_corpus(seed, c, u, p, k))
}

fn random_graph(seed: u64, n: usize, density: f64) -> ReplyGraph {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut groups: Vec<Group> = (0..n)
        .map(|_| match r.gen_range(0..3) {
            0 => Group::Attacker,
            1 => Group::Defender,
            _ => Group::Other,
        })
        .collect();
    groups[0] = Group::Attacker;
    groups[1] = Group::Defender;
    let nodes = groups.iter().enumerate().map(|(i, g)| (format!("n{i:02}"), *g)).collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j && r.gen_bool(density) {
                edges.push((i, j, r.gen_range(1..=4) as f64));
            }
        }
    }
    ReplyGraph::from_edges(nodes, &edges).unwrap()
}

fn graph_strategy() -> impl Strategy<Value = ReplyGraph> {
    (any::<u64>(), 2usize..25, 0.0f64..0.6).prop_map(|(s, n, d)| random_graph(s, n, d))
}

const TELEPORTS: [TeleportSet; 3] = [TeleportSet::Attackers, TeleportSet::Defenders, TeleportSet::All];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pagerank_is_a_distribution(g in graph_strategy()) {
        let cfg = PageRankConfig::default();
        for t in TELEPORTS {
            let pr = group_pagerank(&g, t, &cfg).unwrap();
            prop_assert_eq!(pr.scores.len(), g.len());
            prop_assert!(pr.scores.iter().all(|&s| s >= 0.0));
            prop_assert!((pr.scores.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn pagerank_ignores_weight_scale(g in graph_strategy(), factor in 0.01f64..100.0) {
        let cfg = PageRankConfig { tol: 1e-13, ..PageRankConfig::default() };
        let scaled = g.scaled(factor);
        for t in TELEPORTS {
            let a = group_pagerank(&g, t, &cfg).unwrap().scores;
            let b = group_pagerank(&scaled, t, &cfg).unwrap().scores;
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-10, "{} vs {}", x, y);
            }
        }
    }

    #[test]
    fn pagerank_teleport_members_are_positive(g in graph_strategy()) {
        let cfg = PageRankConfig::default();
        for (t, group) in [(TeleportSet::Attackers, Group::Attacker), (TeleportSet::Defenders, Group::Defender)] {
            let pr = group_pagerank(&g, t, &cfg).unwrap();
            for i in 0..g.len() {
                if g.group(i) == group {
                    prop_assert!(pr.scores[i] > 0.0);
                }
            }
        }
    }

    #[test]
    fn pagerank_group_swap_is_symmetric(g in graph_strategy()) {
        let cfg = PageRankConfig::default();
        let swapped = g.swap_groups();
        let a = group_pagerank(&g, TeleportSet::Attackers, &cfg).unwrap().scores;
        let b = group_pagerank(&swapped, TeleportSet::Defenders, &cfg).unwrap().scores;
        prop_assert_eq!(a, b);
    }

    #[test]
    fn mann_whitney_statistics_complement(
        a in prop::collection::vec(0i32..8, 1..15),
        b in prop::collection::vec(0i32..8, 1..15),
    ) {
        let a: Vec<f64> = a.into_iter().map(f64::from).collect();
        let b: Vec<f64> = b.into_iter().map(f64::from).collect();
        let cfg = TestConfig::default();
        let ab = mann_whitney_u(&a, &b, &cfg).unwrap();
        let ba = mann_whitney_u(&b, &a, &cfg).unwrap();
        prop_assert_eq!(ab.statistic + ba.statistic, (a.len() * b.len()) as f64);
    }

    #[test]
    fn mann_whitney_p_is_rank_invariant(
        a in prop::collection::vec(-10i32..10, 1..30),
        b in prop::collection::vec(-10i32..10, 1..30),
    ) {
        let f = |x: &i32| f64::from(*x);
        let g = |x: &i32| f64::from(*x).powi(3) * 2.0 + 5.0;
        let cfg = TestConfig::default();
        let plain = mann_whitney_u(&a.iter().map(f).collect::<Vec<_>>(), &b.iter().map(f).collect::<Vec<_>>(), &cfg).unwrap();
        let moved = mann_whitney_u(&a.iter().map(g).collect::<Vec<_>>(), &b.iter().map(g).collect::<Vec<_>>(), &cfg).unwrap();
        prop_assert_eq!(plain.statistic, moved.statistic);
        prop_assert_eq!(plain.p_value, moved.p_value);
    }

    #[test]
    fn auc_is_rank_invariant_and_flips(
        data in prop::collection::vec((-5i32..5, any::<bool>()), 2..60),
    ) {
        let labels: Vec<bool> = data.iter().map(|d| d.1).collect();
        prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
        let s: Vec<f64> = data.iter().map(|d| f64::from(d.0)).collect();
        let t: Vec<f64> = s.iter().map(|x| x.powi(3) + 0.5 * x + 1.0).collect();
        let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
        let a = auc(&s, &labels).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert_eq!(a, auc(&t, &labels).unwrap());
        prop_assert!((a + auc(&s, &flipped).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn deciles_are_balanced(scores in prop::collection::vec(-3i32..3, 1..250)) {
        let mut outcomes: Vec<DefenseOutcome> = scores
            .iter()
            .enumerate()
            .map(|(i, &s)| DefenseOutcome { mobilization: format!("m{i:03}"), success_score: f64::from(s), decile: 0 })
            .collect();
        assign_deciles(&mut outcomes);
        let mut sizes = [0usize; 10];
        for o in &outcomes {
            prop_assert!((1..=10).contains(&o.decile));
            sizes[usize::from(o.decile) - 1] += 1;
        }
        if outcomes.len() >= 10 {
            let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
            prop_assert!(hi - lo <= 1, "{:?}", sizes);
        }
        for x in &outcomes {
            for y in &outcomes {
                if x.success_score < y.success_score {
                    prop_assert!(x.decile <= y.decile);
                }
            }
        }
    }

    #[test]
    fn lexicon_rates_are_fractions(text in "[a-zA-Z!?. ]{0,40}( (hate|angry|love|idiots|great|awful))*[ !]{0,3}") {
        let fv = extract_text_features(&text, &[Lexicon::builtin()]);
        for (name, v) in fv.iter() {
            if name.starts_with("lex.") || name == "caps_fraction" {
                prop_assert!((0.0..=1.0).contains(&v), "{} = {}", name, v);
            }
        }
    }

    #[test]
    fn stripping_removes_exactly_the_shared_words(
        source in prop::collection::vec("[a-eA-E]{1,3}[!.,-]{0,1}[a-e]{0,2}", 0..12),
        target in prop::collection::vec("[a-e]{1,3}", 0..6),
    ) {
        let source = source.join(" ");
        let target = target.join(" ");
        let shared: BTreeSet<String> = tokenize(&target).into_iter().collect();
        let out = strip_shared_words(&source, &target);
        let mut kept = out.split_whitespace().peekable();
        for word in source.split_whitespace() {
            let tokens = tokenize(word);
            let drop = !tokens.is_empty() && tokens.iter().all(|t| shared.contains(t));
            if drop {
                continue;
            }
            prop_assert_eq!(kept.next(), Some(word));
        }
        prop_assert_eq!(kept.next(), None);
        // single-token words never survive when shared
        for word in out.split_whitespace() {
            let tokens = tokenize(word);
            if tokens.len() == 1 {
                prop_assert!(!shared.contains(&tokens[0]));
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn forest_probabilities_are_fractions(
        seed in any::<u64>(),
        rows in prop::collection::vec((prop::collection::vec(-5.0f64..5.0, 3), any::<bool>()), 4..40),
        probes in prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 3), 1..10),
    ) {
        let labels: Vec<bool> = rows.iter().map(|r| r.1).collect();
        prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
        let fv = |xs: &[f64]| {
            let mut v = FeatureVector::new();
            for (i, x) in xs.iter().enumerate() {
                v.push(format!("f{i}"), *x);
            }
            v
        };
        let x: Vec<FeatureVector> = rows.iter().map(|r| fv(&r.0)).collect();
        let forest = train_forest(&x, &labels, &ForestConfig { trees: 15, seed, ..ForestConfig::default() }).unwrap();
        for p in probes.iter().chain(rows.iter().map(|r| &r.0)) {
            let prob = forest.predict_proba(&fv(p)).unwrap();
            prop_assert!((0.0..=1.0).contains(&prob));
        }
    }

    #[test]
    fn community_members_are_exclusive(corpus in corpus_strategy(), day in 40i64..85) {
        let communities: Vec<&String> = corpus.communities().iter().collect();
        for a in &communities {
            for b in &communities {
                if a != b {
                    let ab = corpus.members(a, day * DAY, b);
                    let ba = corpus.members(b, day * DAY, a);
                    prop_assert!(ab.is_disjoint(&ba));
                    prop_assert!(ab.is_subset(&corpus.members(a, day * DAY, "absent")));
                }
            }
        }
    }

    #[test]
    fn crosslink_extraction_is_deterministic(corpus in corpus_strategy()) {
        let cfg = CrosslinkConfig::default();
        let first = extract_crosslinks(&corpus, &cfg);
        let second = extract_crosslinks(&corpus, &cfg);
        prop_assert_eq!(&first.links, &second.links);
        prop_assert_eq!(&first.involved_posts, &second.involved_posts);
        // reloading the corpus from its own events changes nothing
        let (reloaded, _) = Corpus::from_events(corpus.to_events());
        let third = extract_crosslinks(&reloaded, &cfg);
        prop_assert_eq!(&first.links, &third.links);
        prop_assert_eq!(first.overlapping, third.overlapping);
        for l in &first.links {
            prop_assert_ne!(&l.source_community, &l.target_community);
            prop_assert!(first.involved_posts.contains(&l.source_post));
            prop_assert!(first.involved_posts.contains(&l.target_post));
        }
    }

    #[test]
    fn matched_posts_are_uninvolved_and_nearest(corpus in corpus_strategy()) {
        let ex = extract_crosslinks(&corpus, &CrosslinkConfig::default());
        for link in &ex.links {
            let subject = corpus.post(&link.source_post).unwrap();
            let best = corpus
                .posts()
                .iter()
                .filter(|q| q.community == subject.community && q.id != subject.id && !ex.involved_posts.contains(&q.id))
                .map(|q| (q.timestamp - subject.timestamp).abs())
                .min();
            match matched_post(&corpus, &ex.involved_posts, &link.source_post) {
                Ok(m) => {
                    prop_assert!(!ex.involved_posts.contains(&m.match_id));
                    let q = corpus.post(&m.match_id).unwrap();
                    prop_assert_eq!(&q.community, &subject.community);
                    prop_assert_eq!(m.match_distance, (q.timestamp - subject.timestamp).abs());
                    prop_assert_eq!(Some(m.match_distance), best);
                }
                Err(_) => prop_assert_eq!(best, None),
            }
        }
    }

    #[test]
    fn attackers_and_defenders_never_overlap(corpus in corpus_strategy()) {
        let ex = extract_crosslinks(&corpus, &CrosslinkConfig::default());
        let det = Detector::new(&corpus, &ex.involved_posts, DetectorConfig::default());
        for link in &ex.links {
            if let Ok(rec) = det.detect(link, 1.6) {
                prop_assert!(rec.attackers.is_disjoint(&rec.defenders));
            }
        }
    }

    #[test]
    fn activity_delta_flips_with_windows(
        corpus in corpus_strategy(),
        user in 0usize..12,
        community in 0usize..5,
        (s1, s2) in (0i64..500, 0i64..500),
        (w1, w2) in (1i64..200, 1i64..200),
        exclude in prop::option::of((0i64..500, 1i64..100)),
    ) {
        let (user, community) = (format!("u{user}"), format!("c{community}"));
        let a = Window::new(T0 + s1 * HOUR, T0 + (s1 + w1) * HOUR);
        let b = Window::new(T0 + s2 * HOUR, T0 + (s2 + w2) * HOUR);
        let ex = exclude.map(|(s, w)| Window::new(T0 + s * HOUR, T0 + (s + w) * HOUR));
        let fwd = activity_delta_between(&corpus, &user, &community, a, b, ex);
        let back = activity_delta_between(&corpus, &user, &community, b, a, ex);
        prop_assert_eq!(fwd.delta, -back.delta);
        prop_assert_eq!(fwd.before, back.after);
        prop_assert_eq!(fwd.low_support, back.low_support);
        prop_assert!((-1.0..=1.0).contains(&fwd.delta));
    }
}

#[test]
fn random_corpora_are_not_degenerate() {
    let corpus = random_corpus(1, 3, 9, 40, 400);
    let ex = extract_crosslinks(&corpus, &CrosslinkConfig::default());
    assert!(ex.links.len() >= 3, "{}", ex.links.len());
    let det = Detector::new(&corpus, &ex.involved_posts, DetectorConfig::default());
    let records: Vec<_> = ex.links.iter().filter_map(|l| det.detect(l, 1.6).ok()).collect();
    assert!(!records.is_empty());
    let d = |l: &intercom_core::CrossLink| intercom_core::corpus::day_of(l.t0);
    assert!(ex.links.iter().any(|l| {
        !corpus.members(&l.source_community, d(l), &l.target_community).is_empty()
            && !corpus.members(&l.target_community, d(l), &l.source_community).is_empty()
    }));
}
