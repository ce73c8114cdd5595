//! Synthetic event logs with planted cross-links, comment bursts, and sentiment.
//!
//! Every user has a home community and comments there every few days, so membership is
//! well defined from day 30 on. Each planted cross-link gets a target thread, a control
//! thread created five minutes after it (the matched post), and source-member comments
//! on both in the twelve hours around `t0` with chosen smoothed after/before ratios.
//! Pre-link thread sizes of target and control are equalized so every pair is eligible
//! for the null model.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Event, EventKind, DAY, HOUR, MEMBERSHIP_WINDOW};
use crate::error::{Error, Result};
use crate::mobilization::Sentiment;
use crate::rng::{substream, Rng as StreamRng};
use crate::sentiment::Lexicon;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_communities: usize,
    pub users_per_community: usize,
    /// Days between a user's background comments in their home community.
    pub comment_every_days: usize,
    pub n_crosslinks: usize,
    /// Smoothed after/before ratio of source-member comments on mobilized target threads.
    pub burst_ratio: f64,
    /// Same ratio for the remaining cross-links.
    pub quiet_ratio: f64,
    /// Mean smoothed ratio on control threads, i.e. the baseline the null model should find.
    pub matched_ratio: f64,
    /// Probability that a link from a hostile community mobilizes; communities with an
    /// even index are hostile.
    pub hostile_mobilization_rate: f64,
    pub calm_mobilization_rate: f64,
    /// Probability of negative source text given a mobilizing / quiet link.
    pub negative_given_mobilization: f64,
    pub negative_given_quiet: f64,
    /// Defender comments per mobilized target thread.
    pub defenders_per_link: usize,
    pub days_after: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_communities: 20,
            users_per_community: 40,
            comment_every_days: 3,
            n_crosslinks: 200,
            burst_ratio: 5.0,
            quiet_ratio: 0.5,
            matched_ratio: 1.6,
            hostile_mobilization_rate: 0.8,
            calm_mobilization_rate: 0.2,
            negative_given_mobilization: 0.7,
            negative_given_quiet: 0.1,
            defenders_per_link: 4,
            days_after: 35,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(format!("synthetic spec: {m}")));
        if !(self.burst_ratio > 0.0 && self.quiet_ratio > 0.0 && self.matched_ratio > 0.0) {
            return bad("ratios must be positive");
        }
        if self.n_crosslinks > 0 && self.n_communities < 2 {
            return bad("cross-links need at least two communities");
        }
        if self.users_per_community == 0 && self.n_communities > 0 {
            return bad("communities need users");
        }
        if self.comment_every_days == 0 || self.comment_every_days > 29 {
            return bad("comment_every_days must be in 1..=29");
        }
        for p in [
            self.hostile_mobilization_rate,
            self.calm_mobilization_rate,
            self.negative_given_mobilization,
            self.negative_given_quiet,
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad("probabilities must be in [0, 1]");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedLink {
    pub source_post: String,
    pub target_post: String,
    pub control_post: String,
    pub source_community: String,
    pub target_community: String,
    pub author: String,
    pub t0: i64,
    pub before: usize,
    pub after: usize,
    pub ratio: f64,
    pub matched_before: usize,
    pub matched_after: usize,
    pub matched_ratio: f64,
    pub mobilization: bool,
    pub sentiment: Sentiment,
    pub attackers: BTreeSet<String>,
    pub defenders: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: SynthSpec,
    pub links: Vec<PlantedLink>,
    pub mean_matched_ratio: f64,
}

impl Manifest {
    pub fn mobilizations(&self) -> impl Iterator<Item = &PlantedLink> {
        self.links.iter().filter(|l| l.mobilization)
    }
}

#[derive(Debug, Clone)]
pub struct Synthetic {
    pub events: Vec<Event>,
    pub manifest: Manifest,
}

const NEUTRAL_WORDS: &[&str] = &[
    "look",
    "thread",
    "people",
    "discussion",
    "here",
    "check",
    "post",
    "about",
    "this",
    "another",
    "community",
    "talking",
    "over",
    "there",
    "see",
    "what",
    "they",
    "think",
    "topic",
    "question",
];

/// Smallest `before` in 0..=10 whose rounded `after` gives a ratio closest to `r`.
pub fn counts_for_ratio(r: f64) -> (usize, usize) {
    let mut best = (0, 0, f64::INFINITY);
    for b in 0..=10usize {
        let a = (r * (b + 1) as f64 - 1.0).round().max(0.0) as usize;
        let err = ((a + 1) as f64 / (b + 1) as f64 - r).abs();
        if err < best.2 - 1e-12 {
            best = (b, a, err);
        }
    }
    (best.0, best.1)
}

struct Builder {
    events: Vec<Event>,
    next_post: usize,
    next_comment: usize,
    /// (user, community) -> comment times
    times: HashMap<(usize, usize), Vec<i64>>,
}

impl Builder {
    fn post(&mut self, author: &str, community: &str, t: i64, body: String) -> String {
        let id = format!("p{:06}", self.next_post);
        self.next_post += 1;
        self.events.push(Event {
            kind: EventKind::Post,
            id: id.clone(),
            author: author.to_owned(),
            community: community.to_owned(),
            timestamp: t,
            thread_id: None,
            parent_id: None,
            body,
        });
        id
    }

    #[allow(clippy::too_many_arguments)]
    fn comment(
        &mut self,
        user: usize,
        users: &[String],
        community: usize,
        communities: &[String],
        t: i64,
        thread: &str,
        parent: &str,
        body: String,
    ) -> String {
        let id = format!("c{:07}", self.next_comment);
        self.next_comment += 1;
        self.events.push(Event {
            kind: EventKind::Comment,
            id: id.clone(),
            author: users[user].clone(),
            community: communities[community].clone(),
            timestamp: t,
            thread_id: Some(thread.to_owned()),
            parent_id: Some(parent.to_owned()),
            body,
        });
        self.times.entry((user, community)).or_default().push(t);
        id
    }

    fn commented_in(&self, user: usize, community: usize, from: i64, to: i64) -> bool {
        self.times
            .get(&(user, community))
            .is_some_and(|ts| ts.iter().any(|&t| t >= from && t < to))
    }
}

fn words(rng: &mut StreamRng, pool: &[&str], lo: usize, hi: usize) -> Vec<String> {
    let n = rng.gen_range(lo..=hi);
    (0..n)
        .map(|_| pool[rng.gen_range(0..pool.len())].to_owned())
        .collect()
}

pub fn generate(spec: &SynthSpec) -> Result<Synthetic> {
    spec.validate()?;
    let nc = spec.n_communities;
    let upc = spec.users_per_community;
    let communities: Vec<String> = (0..nc).map(|c| format!("comm{c:02}")).collect();
    let users: Vec<String> = (0..nc * upc).map(|u| format!("u{u:05}")).collect();
    let home = |u: usize| u / upc;
    let anger: Vec<String> = Lexicon::builtin()
        .category("anger")
        .map(|s| s.iter().cloned().collect())
        .unwrap_or_default();
    let anger: Vec<&str> = anger.iter().map(String::as_str).collect();
    let topic: Vec<Vec<String>> = (0..nc)
        .map(|c| (0..12).map(|k| format!("topic{c}w{k}")).collect())
        .collect();

    let step = 2.max((31 + nc - 2) / (nc - 1).max(1));
    let link_days = if spec.n_crosslinks == 0 {
        0
    } else {
        (spec.n_crosslinks.div_ceil(nc.max(1)) - 1) * step + 1
    };
    let days = 31 + link_days + spec.days_after;

    let mut b = Builder {
        events: Vec::new(),
        next_post: 0,
        next_comment: 0,
        times: HashMap::new(),
    };

    // background: one post per community per day at noon, periodic comments by every user
    let mut rng = substream(spec.seed, "synth.background");
    let mut daily: Vec<Vec<String>> = vec![Vec::with_capacity(days); nc];
    for day in 0..days as i64 {
        for c in 0..nc {
            let author = c * upc + rng.gen_range(0..upc);
            let t = day * DAY + 12 * HOUR;
            let topic_words: Vec<&str> = topic[c].iter().map(String::as_str).collect();
            let body = words(&mut rng, &topic_words, 4, 10).join(" ");
            let id = b.post(&users[author], &communities[c], t, body);
            daily[c].push(id);
        }
    }
    let every = spec.comment_every_days as i64;
    for u in 0..users.len() {
        let c = home(u);
        let phase = rng.gen_range(0..every);
        let mut day = 1 + phase;
        while day < days as i64 {
            let t = day * DAY + rng.gen_range(0..DAY);
            // latest background post created at or before t
            let post_day = if t >= day * DAY + 12 * HOUR {
                day
            } else {
                day - 1
            };
            let thread = daily[c][post_day as usize].clone();
            let topic_words: Vec<&str> = topic[c].iter().map(String::as_str).collect();
            let body = words(&mut rng, &topic_words, 2, 8).join(" ");
            b.comment(u, &users, c, &communities, t, &thread, &thread, body);
            day += every;
        }
    }

    // planted cross-links, in time order
    let mut rng = substream(spec.seed, "synth.links");
    let mut plan = Vec::with_capacity(spec.n_crosslinks);
    for k in 0..spec.n_crosslinks {
        let j = k / nc;
        let target = k % nc;
        let source = (target + 1 + j % (nc - 1)) % nc;
        let day = (31 + j * step) as i64;
        let t0 = day * DAY + 13 * HOUR + rng.gen_range(0..10 * HOUR);
        plan.push((t0, source, target, day));
    }
    plan.sort();

    let mut links = Vec::with_capacity(plan.len());
    for (t0, s, t, day) in plan {
        let d = day * DAY;
        let window_start = d - MEMBERSHIP_WINDOW;
        let mut source_members: Vec<usize> = (s * upc..(s + 1) * upc)
            .filter(|&u| !b.commented_in(u, t, window_start, d))
            .collect();
        let mut target_members: Vec<usize> = (t * upc..(t + 1) * upc)
            .filter(|&u| !b.commented_in(u, s, window_start, d))
            .collect();
        let hostile = s % 2 == 0;
        let rate = if hostile {
            spec.hostile_mobilization_rate
        } else {
            spec.calm_mobilization_rate
        };
        let mobilization = rng.gen_bool(rate);
        let ratio_goal = if mobilization {
            spec.burst_ratio
        } else {
            spec.quiet_ratio
        };
        let (before, after) = counts_for_ratio(ratio_goal);
        let mb = rng.gen_range(2..=6usize);
        let ma = (spec.matched_ratio * (mb + 1) as f64 - 1.0)
            .round()
            .max(0.0) as usize;
        let need = before.max(after).max(mb).max(ma) + 1;
        if need > source_members.len() {
            return Err(Error::InvalidInput(format!(
                "synthetic spec infeasible: a burst needs {need} source members but only {} are available",
                source_members.len()
            )));
        }
        if target_members.is_empty() {
            return Err(Error::InvalidInput(
                "synthetic spec infeasible: no target members".into(),
            ));
        }
        source_members.shuffle(&mut rng);
        target_members.shuffle(&mut rng);
        let author = source_members[0];
        let pool = &source_members[1..];

        let negative = rng.gen_bool(if mobilization {
            spec.negative_given_mobilization
        } else {
            spec.negative_given_quiet
        });
        let mut text = if negative {
            let mut w = words(&mut rng, &anger, 3, 5);
            w.extend(words(&mut rng, NEUTRAL_WORDS, 1, 3));
            w
        } else {
            words(&mut rng, NEUTRAL_WORDS, 4, 8)
        };
        text.shuffle(&mut rng);

        let target_time = t0 - 14 * HOUR;
        let tw: Vec<&str> = topic[t].iter().map(String::as_str).collect();
        let target_body = words(&mut rng, &tw, 4, 10).join(" ");
        let control_body = words(&mut rng, &tw, 4, 10).join(" ");
        let target_post = b.post(
            &users[target_members[0]],
            &communities[t],
            target_time,
            target_body,
        );
        let control_post = b.post(
            &users[target_members[target_members.len() - 1]],
            &communities[t],
            target_time + 300,
            control_body,
        );
        let body = format!(
            "{} https://www.reddit.com/r/{}/comments/{}",
            text.join(" "),
            communities[t],
            target_post
        );
        let source_post = b.post(&users[author], &communities[s], t0, body);

        let in_before = |rng: &mut StreamRng| t0 - rng.gen_range(1..12 * HOUR);
        let in_after = |rng: &mut StreamRng| t0 + rng.gen_range(0..12 * HOUR);
        // equalize pre-link thread sizes with target-member comments
        let pre_total = before.max(mb) + rng.gen_range(0..3usize);
        for (thread, own) in [(&target_post, before), (&control_post, mb)] {
            for _ in own..pre_total {
                let u = target_members[rng.gen_range(0..target_members.len())];
                let tt = target_time + 600 + rng.gen_range(0..(t0 - target_time - 600));
                let body = words(&mut rng, &tw, 2, 6).join(" ");
                b.comment(u, &users, t, &communities, tt, thread, thread, body);
            }
        }
        for (thread, count, window) in [
            (&target_post, before, 0),
            (&control_post, mb, 0),
            (&control_post, ma, 1),
        ] {
            let mut chosen: Vec<usize> = pool.to_vec();
            chosen.shuffle(&mut rng);
            for &u in chosen.iter().take(count) {
                let tt = if window == 0 {
                    in_before(&mut rng)
                } else {
                    in_after(&mut rng)
                };
                let body = words(&mut rng, NEUTRAL_WORDS, 2, 6).join(" ");
                b.comment(u, &users, t, &communities, tt, thread, thread, body);
            }
        }

        // the burst on the target thread: attackers, then defenders replying to them
        let mut attackers_v: Vec<usize> = pool.to_vec();
        attackers_v.shuffle(&mut rng);
        attackers_v.truncate(after);
        let mut attack_comments = Vec::new();
        for &u in &attackers_v {
            let tt = in_after(&mut rng);
            let mut w = words(&mut rng, NEUTRAL_WORDS, 2, 5);
            if negative {
                w.extend(words(&mut rng, &anger, 1, 2));
            }
            let id = b.comment(
                u,
                &users,
                t,
                &communities,
                tt,
                &target_post,
                &target_post,
                w.join(" "),
            );
            attack_comments.push((id, tt, u));
        }
        let mut defenders = BTreeSet::new();
        if mobilization && !attack_comments.is_empty() {
            for k in 0..spec.defenders_per_link.min(target_members.len()) {
                let u = target_members[k];
                let (parent, pt, attacker) =
                    attack_comments[rng.gen_range(0..attack_comments.len())].clone();
                let end = t0 + 12 * HOUR;
                if pt + 1 >= end {
                    continue;
                }
                let tt = rng.gen_range(pt + 1..end);
                let body = words(&mut rng, NEUTRAL_WORDS, 2, 6).join(" ");
                let reply = b.comment(u, &users, t, &communities, tt, &target_post, &parent, body);
                defenders.insert(users[u].clone());
                // the attacker answers back after the window, outside the counted burst
                if rng.gen_bool(0.5) {
                    let at = end + rng.gen_range(0..12 * HOUR);
                    let mut w = words(&mut rng, NEUTRAL_WORDS, 1, 3);
                    w.extend(words(&mut rng, &anger, 0, 2));
                    b.comment(attacker, &users, t, &communities, at, &target_post, &reply, w.join(" "));
                }
            }
        }

        let ratio = (after + 1) as f64 / (before + 1) as f64;
        links.push(PlantedLink {
            source_post,
            target_post,
            control_post,
            source_community: communities[s].clone(),
            target_community: communities[t].clone(),
            author: users[author].clone(),
            t0,
            before,
            after,
            ratio,
            matched_before: mb,
            matched_after: ma,
            matched_ratio: (ma + 1) as f64 / (mb + 1) as f64,
            mobilization: ratio > spec.matched_ratio,
            sentiment: if negative {
                Sentiment::Negative
            } else {
                Sentiment::Neutral
            },
            attackers: attackers_v.iter().map(|&u| users[u].clone()).collect(),
            defenders,
        });
    }

    let mean_matched_ratio = if links.is_empty() {
        0.0
    } else {
        links.iter().map(|l| l.matched_ratio).sum::<f64>() / links.len() as f64
    };
    let mut events = b.events;
    events.sort_by(|x, y| {
        x.timestamp
            .cmp(&y.timestamp)
            .then_with(|| (x.kind == EventKind::Comment).cmp(&(y.kind == EventKind::Comment)))
            .then_with(|| x.id.cmp(&y.id))
    });
    Ok(Synthetic {
        events,
        manifest: Manifest {
            spec: spec.clone(),
            links,
            mean_matched_ratio,
        },
    })
}

/// Write events as one JSON object per line.
pub fn write_events(events: &[Event], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for e in events {
        serde_json::to_writer(&mut w, e).map_err(|e| Error::Format(e.to_string()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Generate into `dir`, writing `events.jsonl` and `manifest.json`.
pub fn generate_corpus(spec: &SynthSpec, dir: impl AsRef<Path>) -> Result<(PathBuf, PathBuf)> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let synth = generate(spec)?;
    let events = dir.join("events.jsonl");
    write_events(&synth.events, &events)?;
    let manifest = dir.join("manifest.json");
    let json =
        serde_json::to_string_pretty(&synth.manifest).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(&manifest, json + "\n").map_err(|e| Error::io(&manifest, e))?;
    Ok((events, manifest))
}

/// Planted sentiment labels in the label-file shape used by the classifier.
pub fn sentiment_labels(manifest: &Manifest) -> BTreeMap<String, Sentiment> {
    manifest
        .links
        .iter()
        .map(|l| (l.source_post.clone(), l.sentiment))
        .collect()
}
