//! Longer-term effects of mobilizations on participants' activity, and defense success.

pub mod stats;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Activity, Corpus, UserId, Window, MEMBERSHIP_WINDOW};
use crate::error::{Error, Result};
use crate::matching::{history_exclusion, Side, UserMatcher, HISTORY_EXCLUSION};
use crate::mobilization::MobilizationRecord;

pub use stats::{mann_whitney_u, midranks, pearson, wilcoxon_signed_rank, TestConfig, TestResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Attacker,
    Defender,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActivityDelta {
    pub before: Activity,
    pub after: Activity,
    /// after.fraction - before.fraction
    pub delta: f64,
    /// Set when either window holds no comments.
    pub low_support: bool,
}

/// The 30-day windows compared around `t0`: `[t0 - 30d, t0)` and `[t0 + 3d, t0 + 33d)`.
pub fn delta_windows(t0: i64) -> (Window, Window) {
    let start = t0 + HISTORY_EXCLUSION;
    (
        Window::before(t0, MEMBERSHIP_WINDOW),
        Window::after(start, MEMBERSHIP_WINDOW),
    )
}

/// Change in the fraction of `user`'s comments made in `community`, ignoring comments
/// within three days of `t0`.
pub fn activity_delta(corpus: &Corpus, user: &str, community: &str, t0: i64) -> ActivityDelta {
    let (before, after) = delta_windows(t0);
    activity_delta_between(
        corpus,
        user,
        community,
        before,
        after,
        Some(history_exclusion(t0)),
    )
}

pub fn activity_delta_between(
    corpus: &Corpus,
    user: &str,
    community: &str,
    before: Window,
    after: Window,
    exclude: Option<Window>,
) -> ActivityDelta {
    let b = corpus.user_activity_excluding(user, community, before, exclude);
    let a = corpus.user_activity_excluding(user, community, after, exclude);
    ActivityDelta {
        before: b,
        after: a,
        delta: a.fraction - b.fraction,
        low_support: a.total == 0 || b.total == 0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactRecord {
    pub mobilization: String,
    pub user: UserId,
    pub role: Role,
    /// Change in the fraction of comments in the target community.
    pub delta: f64,
    pub low_support: bool,
    pub matched_user: Option<UserId>,
    pub matched_delta: Option<f64>,
}

/// Target-community activity deltas for every attacker and defender of `record`, each
/// paired with a matched user from the same side.
pub fn impact_records<R: Rng + ?Sized>(
    corpus: &Corpus,
    record: &MobilizationRecord,
    rng: &mut R,
) -> Vec<ImpactRecord> {
    let link = &record.crosslink;
    let community = &link.target_community;
    let mut out = Vec::new();
    for (role, side, users) in [
        (Role::Attacker, Side::Source, &record.attackers),
        (Role::Defender, Side::Target, &record.defenders),
    ] {
        if users.is_empty() {
            continue;
        }
        let matcher = UserMatcher::new(corpus, link, side);
        for user in users {
            let d = activity_delta(corpus, user, community, link.t0);
            let matched = matcher.match_user(corpus, user, rng).ok();
            let matched_delta = matched
                .as_ref()
                .map(|m| activity_delta(corpus, &m.match_id, community, link.t0).delta);
            out.push(ImpactRecord {
                mobilization: record.id().to_owned(),
                user: user.clone(),
                role,
                delta: d.delta,
                low_support: d.low_support,
                matched_user: matched.map(|m| m.match_id),
                matched_delta,
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SuccessMode {
    /// Defender deltas minus their matched users' deltas.
    #[default]
    Adjusted,
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefenseOutcome {
    pub mobilization: String,
    pub success_score: f64,
    /// 1..=10 once assigned; 0 before.
    pub decile: u8,
}

/// Mean defender delta minus mean matched delta (or the raw mean defender delta).
pub fn defense_success(
    mobilization: &str,
    impacts: &[ImpactRecord],
    mode: SuccessMode,
) -> Result<DefenseOutcome> {
    let defenders: Vec<&ImpactRecord> = impacts
        .iter()
        .filter(|r| r.role == Role::Defender && r.mobilization == mobilization)
        .collect();
    if defenders.is_empty() {
        return Err(Error::InvalidInput(format!(
            "mobilization {mobilization} has no defenders"
        )));
    }
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let deltas: Vec<f64> = defenders.iter().map(|r| r.delta).collect();
    let mut score = mean(&deltas);
    if mode == SuccessMode::Adjusted {
        let matched: Vec<f64> = defenders.iter().filter_map(|r| r.matched_delta).collect();
        if !matched.is_empty() {
            score -= mean(&matched);
        }
    }
    Ok(DefenseOutcome {
        mobilization: mobilization.to_owned(),
        success_score: score,
        decile: 0,
    })
}

/// Assign deciles by success score (ties broken by id); bin sizes differ by at most one.
pub fn assign_deciles(outcomes: &mut [DefenseOutcome]) {
    let n = outcomes.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        outcomes[i]
            .success_score
            .total_cmp(&outcomes[j].success_score)
            .then_with(|| outcomes[i].mobilization.cmp(&outcomes[j].mobilization))
    });
    for (rank, i) in order.into_iter().enumerate() {
        outcomes[i].decile = (rank * 10 / n + 1) as u8;
    }
}

/// Centered moving average over `±half` neighbours, truncated at the ends.
pub fn moving_average(ys: &[f64], half: usize) -> Vec<f64> {
    (0..ys.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(ys.len() - 1);
            ys[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    /// Mean success score per bucket.
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub smoothed: bool,
}

/// Bucket `(success, metric)` points by success into `buckets` near-equal bins, average the
/// metric per bin, and smooth with a `±half` moving average when there are enough bins.
pub fn success_series(points: &[(f64, f64)], buckets: usize, half: usize) -> Series {
    let mut pts: Vec<(f64, f64)> = points
        .iter()
        .copied()
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let k = buckets.min(pts.len());
    let mut x = Vec::with_capacity(k);
    let mut y = Vec::with_capacity(k);
    for b in 0..k {
        let lo = b * pts.len() / k;
        let hi = (b + 1) * pts.len() / k;
        let bin = &pts[lo..hi];
        x.push(bin.iter().map(|p| p.0).sum::<f64>() / bin.len() as f64);
        y.push(bin.iter().map(|p| p.1).sum::<f64>() / bin.len() as f64);
    }
    let smoothed = k > 2 * half;
    if smoothed {
        y = moving_average(&y, half);
    }
    Series { x, y, smoothed }
}

/// [`success_series`] of a per-conflict metric against defense success. Outcomes whose
/// metric is undefined are left out.
pub fn decile_series(
    outcomes: &[DefenseOutcome],
    metric: impl Fn(&DefenseOutcome) -> Option<f64>,
    buckets: usize,
    half: usize,
) -> Series {
    let points: Vec<(f64, f64)> = outcomes
        .iter()
        .filter_map(|o| Some((o.success_score, metric(o)?)))
        .collect();
    success_series(&points, buckets, half)
}
