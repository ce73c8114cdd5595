//! Event-log ingestion, indexing, cross-link extraction, and community membership.
//!
//! The event log is line-delimited JSON, one post or comment per line. Once
//! loaded, a [`Corpus`] is immutable; every query on it is a pure read.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use log::warn;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const HOUR: i64 = 3_600;
pub const DAY: i64 = 86_400;
/// Look-back used for membership and activity history.
pub const MEMBERSHIP_WINDOW: i64 = 30 * DAY;

pub type UserId = String;
pub type CommunityId = String;
pub type PostId = String;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Post,
    Comment,
}

/// One line of the event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub kind: EventKind,
    pub id: String,
    pub author: UserId,
    pub community: CommunityId,
    pub timestamp: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thread_id: Option<PostId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_id: Option<String>,
    #[serde(default)]
    pub body: String,
}

// Every field optional so that schema violations are counted rather than fatal.
#[derive(Deserialize)]
struct RawEvent {
    kind: Option<EventKind>,
    id: Option<String>,
    author: Option<String>,
    community: Option<String>,
    timestamp: Option<i64>,
    thread_id: Option<String>,
    parent_id: Option<String>,
    body: Option<String>,
}

impl RawEvent {
    fn validate(self) -> std::result::Result<Event, &'static str> {
        let kind = self.kind.ok_or("missing kind")?;
        let id = self.id.filter(|s| !s.is_empty()).ok_or("missing id")?;
        let author = self
            .author
            .filter(|s| !s.is_empty())
            .ok_or("missing author")?;
        let community = self
            .community
            .filter(|s| !s.is_empty())
            .ok_or("missing community")?;
        let timestamp = self.timestamp.ok_or("missing timestamp")?;
        if timestamp < 0 {
            return Err("negative timestamp");
        }
        let (thread_id, parent_id) = match kind {
            EventKind::Post => (None, None),
            EventKind::Comment => (
                Some(self.thread_id.ok_or("comment without thread_id")?),
                Some(self.parent_id.ok_or("comment without parent_id")?),
            ),
        };
        Ok(Event {
            kind,
            id,
            author,
            community,
            timestamp,
            thread_id,
            parent_id,
            body: self.body.unwrap_or_default(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Post {
    pub id: PostId,
    pub author: UserId,
    pub community: CommunityId,
    pub timestamp: i64,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comment {
    pub id: String,
    pub author: UserId,
    pub community: CommunityId,
    pub timestamp: i64,
    pub thread_id: PostId,
    pub parent_id: String,
    pub body: String,
}

impl Comment {
    /// True when the comment replies directly to the thread's post.
    pub fn is_top_level(&self) -> bool {
        self.parent_id == self.thread_id
    }
}

/// Half-open time interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: i64,
    pub end: i64,
}

impl Window {
    pub fn new(start: i64, end: i64) -> Self {
        Window { start, end }
    }

    /// The `span` seconds strictly before `t`.
    pub fn before(t: i64, span: i64) -> Self {
        Window::new(t - span, t)
    }

    /// The `span` seconds starting at `t`.
    pub fn after(t: i64, span: i64) -> Self {
        Window::new(t, t + span)
    }

    pub fn contains(&self, t: i64) -> bool {
        self.start <= t && t < self.end
    }

    pub fn shifted(&self, by: i64) -> Self {
        Window::new(self.start + by, self.end + by)
    }
}

/// Start of the UTC day containing `t`.
pub fn day_of(t: i64) -> i64 {
    t.div_euclid(DAY) * DAY
}

/// Line and rejection counts from a load.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    pub lines: usize,
    pub posts: usize,
    pub comments: usize,
    /// Malformed JSON or schema violations.
    pub rejected: usize,
    /// Second occurrence of an id within the same kind.
    pub duplicates: usize,
    /// Comments whose thread post is absent or lives in another community.
    pub orphaned: usize,
}

/// Immutable indexed store of posts and comments.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    posts: Vec<Post>,
    comments: Vec<Comment>,
    post_index: HashMap<PostId, usize>,
    comment_index: HashMap<String, usize>,
    thread_comments: HashMap<PostId, Vec<usize>>,
    user_comments: HashMap<UserId, Vec<usize>>,
    user_posts: HashMap<UserId, Vec<usize>>,
    community_comments: HashMap<CommunityId, Vec<usize>>,
    community_posts: HashMap<CommunityId, Vec<usize>>,
    // user -> community -> sorted comment timestamps
    user_community_times: HashMap<UserId, HashMap<CommunityId, Vec<i64>>>,
    communities: BTreeSet<CommunityId>,
}

/// Read a line-delimited event log. Unreadable files are fatal; bad lines are counted and skipped.
pub fn load_events(path: impl AsRef<Path>) -> Result<(Corpus, LoadReport)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut events = Vec::new();
    let mut report = LoadReport::default();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        report.lines += 1;
        match serde_json::from_str::<RawEvent>(&line) {
            Ok(raw) => match raw.validate() {
                Ok(ev) => events.push(ev),
                Err(why) => {
                    warn!("{}:{}: {}", path.display(), lineno + 1, why);
                    report.rejected += 1;
                }
            },
            Err(e) => {
                warn!("{}:{}: malformed record: {}", path.display(), lineno + 1, e);
                report.rejected += 1;
            }
        }
    }
    let (corpus, built) = Corpus::from_events(events);
    report.duplicates = built.duplicates;
    report.orphaned = built.orphaned;
    report.posts = built.posts;
    report.comments = built.comments;
    Ok((corpus, report))
}

impl Corpus {
    /// Build a corpus from already-validated events.
    pub fn from_events(events: impl IntoIterator<Item = Event>) -> (Corpus, LoadReport) {
        let mut report = LoadReport::default();
        let mut posts = Vec::new();
        let mut comments = Vec::new();
        let mut seen_posts = BTreeSet::new();
        let mut seen_comments = BTreeSet::new();
        for ev in events {
            report.lines += 1;
            match ev.kind {
                EventKind::Post => {
                    if !seen_posts.insert(ev.id.clone()) {
                        report.duplicates += 1;
                        continue;
                    }
                    posts.push(Post {
                        id: ev.id,
                        author: ev.author,
                        community: ev.community,
                        timestamp: ev.timestamp,
                        body: ev.body,
                    });
                }
                EventKind::Comment => {
                    let (Some(thread_id), Some(parent_id)) = (ev.thread_id, ev.parent_id) else {
                        report.rejected += 1;
                        continue;
                    };
                    if !seen_comments.insert(ev.id.clone()) {
                        report.duplicates += 1;
                        continue;
                    }
                    comments.push(Comment {
                        id: ev.id,
                        author: ev.author,
                        community: ev.community,
                        timestamp: ev.timestamp,
                        thread_id,
                        parent_id,
                        body: ev.body,
                    });
                }
            }
        }
        posts.sort_by(|a, b| (a.timestamp, &a.id).cmp(&(b.timestamp, &b.id)));
        let post_community: HashMap<&str, &str> = posts
            .iter()
            .map(|p| (p.id.as_str(), p.community.as_str()))
            .collect();
        let before = comments.len();
        comments
            .retain(|c| post_community.get(c.thread_id.as_str()) == Some(&c.community.as_str()));
        report.orphaned = before - comments.len();
        comments.sort_by(|a, b| (a.timestamp, &a.id).cmp(&(b.timestamp, &b.id)));
        report.posts = posts.len();
        report.comments = comments.len();

        let mut corpus = Corpus {
            posts,
            comments,
            ..Corpus::default()
        };
        corpus.build_indices();
        (corpus, report)
    }

    fn build_indices(&mut self) {
        for (i, p) in self.posts.iter().enumerate() {
            self.post_index.insert(p.id.clone(), i);
            self.user_posts.entry(p.author.clone()).or_default().push(i);
            self.community_posts
                .entry(p.community.clone())
                .or_default()
                .push(i);
            self.communities.insert(p.community.clone());
        }
        for (i, c) in self.comments.iter().enumerate() {
            self.comment_index.insert(c.id.clone(), i);
            self.thread_comments
                .entry(c.thread_id.clone())
                .or_default()
                .push(i);
            self.user_comments
                .entry(c.author.clone())
                .or_default()
                .push(i);
            self.community_comments
                .entry(c.community.clone())
                .or_default()
                .push(i);
            self.user_community_times
                .entry(c.author.clone())
                .or_default()
                .entry(c.community.clone())
                .or_default()
                .push(c.timestamp);
            self.communities.insert(c.community.clone());
        }
    }

    /// All events, posts first, in the order they are stored.
    pub fn to_events(&self) -> Vec<Event> {
        let posts = self.posts.iter().map(|p| Event {
            kind: EventKind::Post,
            id: p.id.clone(),
            author: p.author.clone(),
            community: p.community.clone(),
            timestamp: p.timestamp,
            thread_id: None,
            parent_id: None,
            body: p.body.clone(),
        });
        let comments = self.comments.iter().map(|c| Event {
            kind: EventKind::Comment,
            id: c.id.clone(),
            author: c.author.clone(),
            community: c.community.clone(),
            timestamp: c.timestamp,
            thread_id: Some(c.thread_id.clone()),
            parent_id: Some(c.parent_id.clone()),
            body: c.body.clone(),
        });
        posts.chain(comments).collect()
    }

    pub fn posts(&self) -> &[Post] {
        &self.posts
    }

    pub fn comments(&self) -> &[Comment] {
        &self.comments
    }

    pub fn post(&self, id: &str) -> Option<&Post> {
        self.post_index.get(id).map(|&i| &self.posts[i])
    }

    pub fn comment(&self, id: &str) -> Option<&Comment> {
        self.comment_index.get(id).map(|&i| &self.comments[i])
    }

    pub fn communities(&self) -> &BTreeSet<CommunityId> {
        &self.communities
    }

    pub fn has_community(&self, community: &str) -> bool {
        self.communities.contains(community)
    }

    /// Time-ordered comments on a thread.
    pub fn thread(&self, post_id: &str) -> impl Iterator<Item = &Comment> + '_ {
        self.thread_comments
            .get(post_id)
            .into_iter()
            .flatten()
            .map(|&i| &self.comments[i])
    }

    pub fn thread_len(&self, post_id: &str) -> usize {
        self.thread_comments.get(post_id).map_or(0, Vec::len)
    }

    pub fn thread_count(&self) -> usize {
        self.thread_comments.len()
    }

    /// Time-ordered posts in a community.
    pub fn community_posts(&self, community: &str) -> impl Iterator<Item = &Post> + '_ {
        self.community_posts
            .get(community)
            .into_iter()
            .flatten()
            .map(|&i| &self.posts[i])
    }

    /// Time-ordered posts by a user.
    pub fn user_posts(&self, user: &str) -> impl Iterator<Item = &Post> + '_ {
        self.user_posts
            .get(user)
            .into_iter()
            .flatten()
            .map(|&i| &self.posts[i])
    }

    /// A user's comments inside `window`, time-ordered.
    pub fn user_comments_in(
        &self,
        user: &str,
        window: Window,
    ) -> impl Iterator<Item = &Comment> + '_ {
        let idx = self.user_comments.get(user).map_or(&[][..], Vec::as_slice);
        let lo = idx.partition_point(|&i| self.comments[i].timestamp < window.start);
        let hi = idx.partition_point(|&i| self.comments[i].timestamp < window.end);
        idx[lo..hi.max(lo)].iter().map(|&i| &self.comments[i])
    }

    /// Comments posted in a community inside `window`, time-ordered.
    pub fn community_comments_in(
        &self,
        community: &str,
        window: Window,
    ) -> impl Iterator<Item = &Comment> + '_ {
        let idx = self
            .community_comments
            .get(community)
            .map_or(&[][..], Vec::as_slice);
        let lo = idx.partition_point(|&i| self.comments[i].timestamp < window.start);
        let hi = idx.partition_point(|&i| self.comments[i].timestamp < window.end);
        idx[lo..hi.max(lo)].iter().map(|&i| &self.comments[i])
    }

    /// Number of comments `user` made in `community` during `window`.
    pub fn user_community_count(&self, user: &str, community: &str, window: Window) -> usize {
        let Some(times) = self
            .user_community_times
            .get(user)
            .and_then(|m| m.get(community))
        else {
            return 0;
        };
        let lo = times.partition_point(|&t| t < window.start);
        let hi = times.partition_point(|&t| t < window.end);
        hi.saturating_sub(lo)
    }

    /// Comment count inside `window`, ignoring comments inside `exclude`.
    pub fn user_comment_count(&self, user: &str, window: Window, exclude: Option<Window>) -> usize {
        self.user_comments_in(user, window)
            .filter(|c| !exclude.is_some_and(|x| x.contains(c.timestamp)))
            .count()
    }

    /// Users with at least one comment in `community` during `[d - 30 days, d)` and none in
    /// `excluded` during the same window.
    pub fn members(&self, community: &str, d: i64, excluded: &str) -> BTreeSet<UserId> {
        if !self.has_community(community) {
            warn!("members: unknown community {community}");
            return BTreeSet::new();
        }
        let window = Window::before(d, MEMBERSHIP_WINDOW);
        self.community_comments_in(community, window)
            .map(|c| c.author.as_str())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .filter(|u| self.user_community_count(u, excluded, window) == 0)
            .map(str::to_owned)
            .collect()
    }

    /// Comment activity of `user` in `community` over `window`.
    pub fn user_activity(&self, user: &str, community: &str, window: Window) -> Activity {
        self.user_activity_excluding(user, community, window, None)
    }

    pub fn user_activity_excluding(
        &self,
        user: &str,
        community: &str,
        window: Window,
        exclude: Option<Window>,
    ) -> Activity {
        debug_assert!(window.start <= window.end);
        let mut in_community = 0;
        let mut total = 0;
        for c in self.user_comments_in(user, window) {
            if exclude.is_some_and(|x| x.contains(c.timestamp)) {
                continue;
            }
            total += 1;
            if c.community == community {
                in_community += 1;
            }
        }
        Activity::new(in_community, total)
    }

    /// Earliest and latest event timestamps.
    pub fn time_range(&self) -> Option<(i64, i64)> {
        let first = self
            .posts
            .first()
            .map(|p| p.timestamp)
            .into_iter()
            .chain(self.comments.first().map(|c| c.timestamp))
            .min()?;
        let last = self
            .posts
            .last()
            .map(|p| p.timestamp)
            .into_iter()
            .chain(self.comments.last().map(|c| c.timestamp))
            .max()?;
        Some((first, last))
    }

    pub fn is_empty(&self) -> bool {
        self.posts.is_empty() && self.comments.is_empty()
    }
}

/// In-community and total comment counts over a window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Activity {
    pub in_community: usize,
    pub total: usize,
    pub fraction: f64,
}

impl Activity {
    pub fn new(in_community: usize, total: usize) -> Self {
        let fraction = if total == 0 {
            0.0
        } else {
            in_community as f64 / total as f64
        };
        Activity {
            in_community,
            total,
            fraction,
        }
    }
}

/// A post in one community linking a post in another.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrossLink {
    pub source_post: PostId,
    pub target_post: PostId,
    pub source_community: CommunityId,
    pub target_community: CommunityId,
    /// Creation time of the source post.
    pub t0: i64,
    pub author: UserId,
}

impl CrossLink {
    /// Cross-links are keyed by their source post (one link per post).
    pub fn id(&self) -> &str {
        &self.source_post
    }
}

#[derive(Debug, Clone, Default)]
pub struct CrosslinkConfig {
    /// Accepted URL hosts. `None` accepts any host and bare `r/...` references.
    pub hosts: Option<Vec<String>>,
    /// Half-width of the analysis window used for overlap removal.
    pub window: Option<i64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CrosslinkExtraction {
    pub links: Vec<CrossLink>,
    /// Every post that is the source or target of a resolvable cross-community link,
    /// counted before overlap removal.
    pub involved_posts: BTreeSet<PostId>,
    pub missing_target: usize,
    pub self_links: usize,
    pub community_mismatch: usize,
    pub overlapping: usize,
}

fn link_pattern() -> Regex {
    Regex::new(r"(?i)(?:https?://([a-z0-9.\-]+)/)?\br/([a-z0-9_]+)/comments/([a-z0-9_]+)")
        .expect("static pattern")
}

/// Find cross-community post links, then drop later links whose analysis windows overlap an
/// earlier kept link to the same target.
pub fn extract_crosslinks(corpus: &Corpus, config: &CrosslinkConfig) -> CrosslinkExtraction {
    let pattern = link_pattern();
    let half = config.window.unwrap_or(12 * HOUR);
    let hosts: Option<Vec<String>> = config
        .hosts
        .as_ref()
        .map(|hs| hs.iter().map(|h| h.to_lowercase()).collect());
    let mut out = CrosslinkExtraction::default();
    let mut raw = Vec::new();

    for post in corpus.posts() {
        let mut resolved = None;
        let mut failure = None;
        for cap in pattern.captures_iter(&post.body) {
            if let Some(allowed) = &hosts {
                let host = cap.get(1).map(|m| m.as_str().to_lowercase());
                if !host.is_some_and(|h| allowed.contains(&h)) {
                    continue;
                }
            }
            let community = &cap[2];
            let target_id = &cap[3];
            let Some(target) = corpus.post(target_id) else {
                failure.get_or_insert(Failure::Missing);
                continue;
            };
            if !target.community.eq_ignore_ascii_case(community) {
                failure.get_or_insert(Failure::Mismatch);
                continue;
            }
            if target.community == post.community {
                failure.get_or_insert(Failure::SelfLink);
                continue;
            }
            resolved = Some(target);
            break;
        }
        match (resolved, failure) {
            (Some(target), _) => {
                out.involved_posts.insert(post.id.clone());
                out.involved_posts.insert(target.id.clone());
                raw.push(CrossLink {
                    source_post: post.id.clone(),
                    target_post: target.id.clone(),
                    source_community: post.community.clone(),
                    target_community: target.community.clone(),
                    t0: post.timestamp,
                    author: post.author.clone(),
                });
            }
            (None, Some(Failure::Missing)) => out.missing_target += 1,
            (None, Some(Failure::Mismatch)) => out.community_mismatch += 1,
            (None, Some(Failure::SelfLink)) => out.self_links += 1,
            (None, None) => {}
        }
    }

    raw.sort_by(|a, b| (a.t0, &a.source_post).cmp(&(b.t0, &b.source_post)));
    let mut last_kept: BTreeMap<PostId, i64> = BTreeMap::new();
    for link in raw {
        // windows [t - half, t + half) intersect iff |dt| < 2 * half
        match last_kept.get(&link.target_post) {
            Some(&t) if link.t0 - t < 2 * half => out.overlapping += 1,
            _ => {
                last_kept.insert(link.target_post.clone(), link.t0);
                out.links.push(link);
            }
        }
    }
    out
}

enum Failure {
    Missing,
    Mismatch,
    SelfLink,
}
