//! Null-model mobilization detector.
//!
//! A cross-link mobilizes its source community when source members' comments on the
//! target thread grow, from the 12 hours before the link to the 12 hours after, by more
//! than they grow on matched control threads. Ratios use add-one smoothing,
//! `(after + 1) / (before + 1)`, so links with no prior activity are still classifiable;
//! this moves borderline verdicts relative to an unsmoothed ratio.

use std::collections::BTreeSet;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{day_of, Corpus, CrossLink, PostId, UserId, Window, HOUR};
use crate::error::{Error, Result};
use crate::matching::{matched_post, MatchedPair};

/// Baseline used when the null model has no eligible pairs.
pub const DEFAULT_BASELINE: f64 = 1.6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineStatistic {
    Mean,
    Median,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    /// Width of the before/after windows in seconds.
    pub window: i64,
    /// Pairs qualify for the null model when pre-link thread sizes differ by less than this.
    pub pre_count_tolerance: usize,
    /// Pseudo-count added to both sides of the ratio.
    pub smoothing: f64,
    pub statistic: BaselineStatistic,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            window: 12 * HOUR,
            pre_count_tolerance: 5,
            smoothing: 1.0,
            statistic: BaselineStatistic::Mean,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Mobilization,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Sentiment {
    Negative,
    Neutral,
    #[default]
    Unlabeled,
}

impl fmt::Display for Sentiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sentiment::Negative => "negative",
            Sentiment::Neutral => "neutral",
            Sentiment::Unlabeled => "unlabeled",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MobilizationRecord {
    pub crosslink: CrossLink,
    pub before_count: usize,
    pub after_count: usize,
    pub matched_post: Option<PostId>,
    pub matched_before: Option<usize>,
    pub matched_after: Option<usize>,
    pub ratio: f64,
    pub baseline: f64,
    pub verdict: Verdict,
    pub attackers: BTreeSet<UserId>,
    pub defenders: BTreeSet<UserId>,
    pub sentiment: Sentiment,
}

impl MobilizationRecord {
    pub fn id(&self) -> &str {
        self.crosslink.id()
    }

    pub fn is_mobilization(&self) -> bool {
        self.verdict == Verdict::Mobilization
    }

    pub fn is_negative_mobilization(&self) -> bool {
        self.is_mobilization() && self.sentiment == Sentiment::Negative
    }
}

/// Null-model estimate and the pairs it was computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineEstimate {
    pub value: f64,
    pub statistic: BaselineStatistic,
    pub eligible_pairs: usize,
    pub candidate_pairs: usize,
    /// Mean smoothed ratio on the cross-linked target threads of the same pairs.
    pub target_mean_ratio: f64,
}

pub fn smoothed_ratio(before: usize, after: usize, smoothing: f64) -> f64 {
    (after as f64 + smoothing) / (before as f64 + smoothing)
}

pub struct Detector<'a> {
    corpus: &'a Corpus,
    involved: &'a BTreeSet<PostId>,
    config: DetectorConfig,
}

impl<'a> Detector<'a> {
    /// `involved` is every post with cross-link involvement; such posts never serve as controls.
    pub fn new(corpus: &'a Corpus, involved: &'a BTreeSet<PostId>, config: DetectorConfig) -> Self {
        Detector {
            corpus,
            involved,
            config,
        }
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn source_members(&self, link: &CrossLink) -> BTreeSet<UserId> {
        self.corpus.members(
            &link.source_community,
            day_of(link.t0),
            &link.target_community,
        )
    }

    pub fn target_members(&self, link: &CrossLink) -> BTreeSet<UserId> {
        self.corpus.members(
            &link.target_community,
            day_of(link.t0),
            &link.source_community,
        )
    }

    fn counts_on(&self, thread: &str, members: &BTreeSet<UserId>, t0: i64) -> (usize, usize) {
        let before = Window::before(t0, self.config.window);
        let after = Window::after(t0, self.config.window);
        let mut counts = (0, 0);
        for c in self.corpus.thread(thread) {
            if !members.contains(&c.author) {
                continue;
            }
            if before.contains(c.timestamp) {
                counts.0 += 1;
            } else if after.contains(c.timestamp) {
                counts.1 += 1;
            }
        }
        counts
    }

    /// Source-member comments on the target thread before and after the link.
    pub fn window_counts(&self, link: &CrossLink) -> (usize, usize) {
        let members = self.source_members(link);
        self.counts_on(&link.target_post, &members, link.t0)
    }

    pub fn matched_thread(&self, link: &CrossLink) -> Option<MatchedPair> {
        matched_post(self.corpus, self.involved, &link.target_post).ok()
    }

    fn pre_count(&self, thread: &str, t0: i64) -> usize {
        self.corpus
            .thread(thread)
            .take_while(|c| c.timestamp < t0)
            .count()
    }

    /// Expected after-to-before growth of source-member comments on matched threads.
    ///
    /// Only pairs whose target and matched threads had near-equal comment counts before
    /// the link contribute.
    pub fn baseline_ratio(&self, links: &[CrossLink]) -> Result<BaselineEstimate> {
        let pairs: Vec<Option<Option<(f64, f64)>>> = links
            .par_iter()
            .map(|link| {
                let matched = self.matched_thread(link)?;
                Some(self.matched_pair_ratios(link, &matched))
            })
            .collect();
        let candidate_pairs = pairs.iter().filter(|p| p.is_some()).count();
        let pairs: Vec<(f64, f64)> = pairs.into_iter().flatten().flatten().collect();
        let mut matched: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let targets: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        if matched.is_empty() {
            return Err(Error::NoBaseline {
                default: DEFAULT_BASELINE,
            });
        }
        let value = match self.config.statistic {
            BaselineStatistic::Mean => mean(&matched),
            BaselineStatistic::Median => median(&mut matched),
        };
        Ok(BaselineEstimate {
            value,
            statistic: self.config.statistic,
            eligible_pairs: matched.len(),
            candidate_pairs,
            target_mean_ratio: mean(&targets),
        })
    }

    fn matched_pair_ratios(&self, link: &CrossLink, matched: &MatchedPair) -> Option<(f64, f64)> {
        let target_pre = self.pre_count(&link.target_post, link.t0);
        let matched_pre = self.pre_count(&matched.match_id, link.t0);
        if target_pre.abs_diff(matched_pre) >= self.config.pre_count_tolerance {
            return None;
        }
        let members = self.source_members(link);
        let (mb, ma) = self.counts_on(&matched.match_id, &members, link.t0);
        let (tb, ta) = self.counts_on(&link.target_post, &members, link.t0);
        Some((
            smoothed_ratio(mb, ma, self.config.smoothing),
            smoothed_ratio(tb, ta, self.config.smoothing),
        ))
    }

    /// Classify one cross-link against `baseline`.
    pub fn detect(&self, link: &CrossLink, baseline: f64) -> Result<MobilizationRecord> {
        if !(baseline.is_finite() && baseline > 0.0) {
            return Err(Error::InvalidInput(format!(
                "baseline must be positive, got {baseline}"
            )));
        }
        let source = self.source_members(link);
        let target = self.target_members(link);
        let (before_count, after_count) = self.counts_on(&link.target_post, &source, link.t0);
        let matched = self.matched_thread(link);
        let (matched_before, matched_after) = match &matched {
            Some(m) => {
                let (b, a) = self.counts_on(&m.match_id, &source, link.t0);
                (Some(b), Some(a))
            }
            None => (None, None),
        };
        let ratio = smoothed_ratio(before_count, after_count, self.config.smoothing);
        let verdict = if ratio > baseline {
            Verdict::Mobilization
        } else {
            Verdict::None
        };
        let after = Window::after(link.t0, self.config.window);
        let mut attackers = BTreeSet::new();
        let mut defenders = BTreeSet::new();
        for c in self.corpus.thread(&link.target_post) {
            if !after.contains(c.timestamp) {
                continue;
            }
            if source.contains(&c.author) {
                attackers.insert(c.author.clone());
            } else if target.contains(&c.author) {
                defenders.insert(c.author.clone());
            }
        }
        Ok(MobilizationRecord {
            crosslink: link.clone(),
            before_count,
            after_count,
            matched_post: matched.map(|m| m.match_id),
            matched_before,
            matched_after,
            ratio,
            baseline,
            verdict,
            attackers,
            defenders,
            sentiment: Sentiment::Unlabeled,
        })
    }

    /// Classify every link; output order follows `links`.
    pub fn detect_all(
        &self,
        links: &[CrossLink],
        baseline: f64,
    ) -> Result<Vec<MobilizationRecord>> {
        links.par_iter().map(|l| self.detect(l, baseline)).collect()
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Event, DAY};
    use crate::testutil::{comment, post};
    use proptest::prelude::*;

    const T0: i64 = 50 * DAY + 18 * HOUR;

    fn link() -> CrossLink {
        CrossLink {
            source_post: "src".into(),
            target_post: "tgt".into(),
            source_community: "S".into(),
            target_community: "T".into(),
            t0: T0,
            author: "op".into(),
        }
    }

    /// Users s0..s{n} are members of S, d0..d{m} of T.
    fn base_events(n_source: usize, n_target: usize) -> Vec<Event> {
        let mut ev = vec![
            post("shome", "x", "S", 0, ""),
            post("thome", "x", "T", 0, ""),
            post("tgt", "x", "T", T0 - 14 * HOUR, ""),
            post("ctl", "x", "T", T0 - 14 * HOUR + 300, ""),
            post("src", "op", "S", T0, "r/T/comments/tgt"),
        ];
        for i in 0..n_source {
            ev.push(comment(
                &format!("sh{i}"),
                &format!("s{i}"),
                "S",
                40 * DAY,
                "shome",
                "shome",
            ));
        }
        for i in 0..n_target {
            ev.push(comment(
                &format!("th{i}"),
                &format!("d{i}"),
                "T",
                40 * DAY,
                "thome",
                "thome",
            ));
        }
        ev
    }

    fn involved() -> BTreeSet<PostId> {
        ["src".to_string(), "tgt".to_string()].into()
    }

    #[test]
    fn no_activity_counts_zero_and_is_not_mobilized() {
        let (corpus, _) = Corpus::from_events(base_events(3, 3));
        let inv = involved();
        let det = Detector::new(&corpus, &inv, DetectorConfig::default());
        assert_eq!(det.window_counts(&link()), (0, 0));
        let rec = det.detect(&link(), 1.6).unwrap();
        assert_eq!(rec.ratio, 1.0);
        assert_eq!(rec.verdict, Verdict::None);
    }

    #[test]
    fn planted_two_before_nine_after() {
        // Enumerated by hand: s0,s1 comment before t0; s2..s10 after; d0 after (defender);
        // s11 comments 13h before (outside window); "z" is not a member of anything.
        let mut ev = base_events(12, 2);
        ev.push(comment("b0", "s0", "T", T0 - 2 * HOUR, "tgt", "tgt"));
        ev.push(comment("b1", "s1", "T", T0 - 11 * HOUR, "tgt", "tgt"));
        for i in 2..11 {
            ev.push(comment(
                &format!("a{i}"),
                &format!("s{i}"),
                "T",
                T0 + i as i64 * HOUR,
                "tgt",
                "tgt",
            ));
        }
        ev.push(comment("old", "s11", "T", T0 - 13 * HOUR, "tgt", "tgt"));
        ev.push(comment("def", "d0", "T", T0 + HOUR, "tgt", "a2"));
        ev.push(comment("out", "z", "T", T0 + HOUR, "tgt", "tgt"));
        let (corpus, _) = Corpus::from_events(ev);
        let inv = involved();
        let det = Detector::new(&corpus, &inv, DetectorConfig::default());
        assert_eq!(det.window_counts(&link()), (2, 9));
        let rec = det.detect(&link(), 1.6).unwrap();
        assert!((rec.ratio - 10.0 / 3.0).abs() < 1e-12);
        assert_eq!(rec.verdict, Verdict::Mobilization);
        assert_eq!(rec.attackers.len(), 9);
        assert_eq!(rec.defenders.iter().collect::<Vec<_>>(), vec!["d0"]);
        assert!(rec.attackers.is_disjoint(&rec.defenders));
        assert_eq!(rec.matched_post.as_deref(), Some("ctl"));
    }

    #[test]
    fn comment_at_t0_counts_after() {
        let mut ev = base_events(1, 0);
        ev.push(comment("edge", "s0", "T", T0, "tgt", "tgt"));
        let (corpus, _) = Corpus::from_events(ev);
        let inv = involved();
        let det = Detector::new(&corpus, &inv, DetectorConfig::default());
        assert_eq!(det.window_counts(&link()), (0, 1));
    }

    #[test]
    fn baseline_from_identity_matched_threads() {
        let mut ev = base_events(4, 0);
        ev.push(comment("m0", "s0", "T", T0 - HOUR, "ctl", "ctl"));
        ev.push(comment("m1", "s1", "T", T0 + HOUR, "ctl", "ctl"));
        let (corpus, _) = Corpus::from_events(ev);
        let inv = involved();
        let det = Detector::new(&corpus, &inv, DetectorConfig::default());
        let est = det.baseline_ratio(&[link()]).unwrap();
        assert_eq!(est.value, 1.0);
        assert_eq!(est.eligible_pairs, 1);
    }

    #[test]
    fn baseline_is_mean_of_smoothed_ratios() {
        // Second link with its own target/control; control ratios 1.0 and 3.0.
        let mut ev = base_events(6, 0);
        let t1 = T0 + 5 * DAY;
        ev.push(post("tgt2", "x", "T", t1 - 14 * HOUR, ""));
        ev.push(post("ctl2", "x", "T", t1 - 14 * HOUR + 300, ""));
        ev.push(post("src2", "op", "S", t1, "r/T/comments/tgt2"));
        ev.push(comment("m0", "s0", "T", T0 + HOUR, "ctl", "ctl"));
        ev.push(comment("m1", "s1", "T", T0 - HOUR, "ctl", "ctl"));
        // 0 before, 2 after -> 3.0; s2/s3 are still S-members on day(t1)
        ev.push(comment("n0", "s2", "S", t1 - DAY, "shome", "shome"));
        ev.push(comment("m2", "s2", "T", t1 + HOUR, "ctl2", "ctl2"));
        ev.push(comment("m3", "s3", "T", t1 + 2 * HOUR, "ctl2", "ctl2"));
        let (corpus, _) = Corpus::from_events(ev);
        let inv: BTreeSet<PostId> = ["src", "tgt", "src2", "tgt2"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let det = Detector::new(&corpus, &inv, DetectorConfig::default());
        let mut l2 = link();
        l2.source_post = "src2".into();
        l2.target_post = "tgt2".into();
        l2.t0 = t1;
        let est = det.baseline_ratio(&[link(), l2]).unwrap();
        assert_eq!(est.eligible_pairs, 2);
        assert!((est.value - 2.0).abs() < 1e-12);
    }

    #[test]
    fn baseline_without_pairs_is_an_error() {
        let (corpus, _) = Corpus::from_events(vec![
            post("tgt", "x", "T", T0 - HOUR, ""),
            post("src", "op", "S", T0, "r/T/comments/tgt"),
        ]);
        let inv = involved();
        let det = Detector::new(&corpus, &inv, DetectorConfig::default());
        assert!(matches!(
            det.baseline_ratio(&[link()]),
            Err(Error::NoBaseline { default }) if default == DEFAULT_BASELINE
        ));
    }

    #[test]
    fn pre_count_tolerance_excludes_unbalanced_pairs() {
        let mut ev = base_events(1, 6);
        for i in 0..5 {
            ev.push(comment(
                &format!("p{i}"),
                &format!("d{i}"),
                "T",
                T0 - 3 * HOUR,
                "tgt",
                "tgt",
            ));
        }
        let (corpus, _) = Corpus::from_events(ev);
        let inv = involved();
        let det = Detector::new(&corpus, &inv, DetectorConfig::default());
        assert!(det.baseline_ratio(&[link()]).is_err());
    }

    #[test]
    fn median_option() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn rejects_nonpositive_baseline() {
        let (corpus, _) = Corpus::from_events(base_events(1, 1));
        let inv = involved();
        let det = Detector::new(&corpus, &inv, DetectorConfig::default());
        assert!(det.detect(&link(), 0.0).is_err());
    }

    proptest! {
        #[test]
        fn verdict_is_monotone_in_after(before in 0usize..50, after in 0usize..50, extra in 0usize..50, baseline in 0.1f64..10.0) {
            let r1 = smoothed_ratio(before, after, 1.0);
            let r2 = smoothed_ratio(before, after + extra, 1.0);
            prop_assert!(!(r1 > baseline && r2 <= baseline));
        }
    }
}
