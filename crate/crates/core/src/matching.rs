//! Matched comparison posts and users for the null-model controls.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{day_of, Corpus, CrossLink, PostId, UserId, Window, DAY, MEMBERSHIP_WINDOW};
use crate::error::{Error, Result};

/// Half-width of the exclusion zone around a cross-link for history counts.
pub const HISTORY_EXCLUSION: i64 = 3 * DAY;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub subject_id: String,
    pub match_id: String,
    /// Seconds between creation times (posts) or comment-count difference (users).
    pub match_distance: i64,
}

/// The post in `p`'s community closest in creation time to `p` that is not involved in any
/// cross-link. Ties go to the earlier post.
pub fn matched_post(corpus: &Corpus, involved: &BTreeSet<PostId>, p: &str) -> Result<MatchedPair> {
    let subject = corpus
        .post(p)
        .ok_or_else(|| Error::UnknownId(format!("post {p}")))?;
    corpus
        .community_posts(&subject.community)
        .filter(|q| q.id != subject.id && !involved.contains(&q.id))
        .map(|q| ((q.timestamp - subject.timestamp).abs(), q.timestamp, &q.id))
        .min()
        .map(|(distance, _, id)| MatchedPair {
            subject_id: subject.id.clone(),
            match_id: id.clone(),
            match_distance: distance,
        })
        .ok_or_else(|| Error::NoMatch(format!("post {p}")))
}

/// Which side of a cross-link a user belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Source,
    Target,
}

/// Comments in the 30 days before day `d`, excluding the ±3-day zone around `t0`.
pub fn history_count(corpus: &Corpus, user: &str, t0: i64) -> usize {
    let d = day_of(t0);
    corpus.user_comment_count(
        user,
        Window::before(d, MEMBERSHIP_WINDOW),
        Some(history_exclusion(t0)),
    )
}

pub fn history_exclusion(t0: i64) -> Window {
    Window::new(t0 - HISTORY_EXCLUSION, t0 + HISTORY_EXCLUSION)
}

/// Candidate pool for matching the members of one side of a cross-link.
///
/// Candidates are members of the side's community on the cross-link day who never
/// commented on the target thread.
#[derive(Debug, Clone)]
pub struct UserMatcher {
    t0: i64,
    // (id, history count), ordered by id
    candidates: Vec<(UserId, usize)>,
}

impl UserMatcher {
    pub fn new(corpus: &Corpus, link: &CrossLink, side: Side) -> Self {
        let (community, counterpart) = match side {
            Side::Source => (&link.source_community, &link.target_community),
            Side::Target => (&link.target_community, &link.source_community),
        };
        let commenters: BTreeSet<&str> = corpus
            .thread(&link.target_post)
            .map(|c| c.author.as_str())
            .collect();
        let candidates = corpus
            .members(community, day_of(link.t0), counterpart)
            .into_iter()
            .filter(|u| !commenters.contains(u.as_str()))
            .map(|u| {
                let n = history_count(corpus, &u, link.t0);
                (u, n)
            })
            .collect();
        UserMatcher {
            t0: link.t0,
            candidates,
        }
    }

    pub fn candidates(&self) -> &[(UserId, usize)] {
        &self.candidates
    }

    /// The candidate whose history count is closest to `user`'s; ties broken uniformly by `rng`.
    pub fn match_user<R: Rng + ?Sized>(
        &self,
        corpus: &Corpus,
        user: &str,
        rng: &mut R,
    ) -> Result<MatchedPair> {
        let target = history_count(corpus, user, self.t0) as i64;
        let mut best = i64::MAX;
        let mut tied: Vec<&str> = Vec::new();
        for (id, n) in &self.candidates {
            if id == user {
                continue;
            }
            let dist = (*n as i64 - target).abs();
            if dist < best {
                best = dist;
                tied.clear();
            }
            if dist == best {
                tied.push(id);
            }
        }
        if tied.is_empty() {
            return Err(Error::NoMatch(format!("user {user}")));
        }
        let pick = tied[rng.gen_range(0..tied.len())];
        Ok(MatchedPair {
            subject_id: user.to_owned(),
            match_id: pick.to_owned(),
            match_distance: best,
        })
    }
}

/// Convenience wrapper building the candidate pool for a single query.
pub fn matched_user<R: Rng + ?Sized>(
    corpus: &Corpus,
    link: &CrossLink,
    side: Side,
    user: &str,
    rng: &mut R,
) -> Result<MatchedPair> {
    UserMatcher::new(corpus, link, side).match_user(corpus, user, rng)
}
