//! User-user reply graphs for target threads and group-restricted PageRank.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, UserId};
use crate::error::{Error, Result};
use crate::sentiment::Lexicon;
use crate::text::tokenize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Attacker,
    Defender,
    Other,
}

impl Group {
    pub fn as_str(self) -> &'static str {
        match self {
            Group::Attacker => "attacker",
            Group::Defender => "defender",
            Group::Other => "other",
        }
    }

    fn swapped(self) -> Group {
        match self {
            Group::Attacker => Group::Defender,
            Group::Defender => Group::Attacker,
            Group::Other => Group::Other,
        }
    }
}

/// One direct reply: comment `comment` by node `from` to a comment by node `to`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reply {
    pub comment: String,
    pub from: usize,
    pub to: usize,
}

/// Directed reply graph. `w(i -> j)` counts i's comments whose parent comment is j's.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplyGraph {
    nodes: Vec<UserId>,
    groups: Vec<Group>,
    /// Out-adjacency per node, sorted by target.
    out: Vec<Vec<(usize, f64)>>,
    replies: Vec<Reply>,
    pub self_loops: usize,
    /// Comments whose parent could not be resolved.
    pub dangling_parents: usize,
}

/// Build the reply graph of the thread under `post_id`.
///
/// Every thread commenter is a node, as is every listed attacker and defender. Replies to
/// the post itself add no edge.
pub fn build_reply_graph(
    corpus: &Corpus,
    post_id: &str,
    attackers: &BTreeSet<UserId>,
    defenders: &BTreeSet<UserId>,
) -> ReplyGraph {
    let mut users: BTreeSet<&str> = corpus.thread(post_id).map(|c| c.author.as_str()).collect();
    users.extend(attackers.iter().map(String::as_str));
    users.extend(defenders.iter().map(String::as_str));
    let nodes: Vec<UserId> = users.into_iter().map(str::to_owned).collect();
    let groups = nodes
        .iter()
        .map(|u| {
            if attackers.contains(u) {
                Group::Attacker
            } else if defenders.contains(u) {
                Group::Defender
            } else {
                Group::Other
            }
        })
        .collect();
    let index: HashMap<&str, usize> = nodes
        .iter()
        .enumerate()
        .map(|(i, u)| (u.as_str(), i))
        .collect();

    let mut replies = Vec::new();
    let mut dangling_parents = 0;
    for c in corpus.thread(post_id) {
        if c.is_top_level() {
            continue;
        }
        let Some(parent) = corpus
            .comment(&c.parent_id)
            .filter(|p| p.thread_id == c.thread_id)
        else {
            dangling_parents += 1;
            continue;
        };
        replies.push(Reply {
            comment: c.id.clone(),
            from: index[c.author.as_str()],
            to: index[parent.author.as_str()],
        });
    }
    ReplyGraph::assemble(nodes, groups, replies, dangling_parents)
}

impl ReplyGraph {
    fn assemble(
        nodes: Vec<UserId>,
        groups: Vec<Group>,
        replies: Vec<Reply>,
        dangling_parents: usize,
    ) -> Self {
        let mut weights: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for r in &replies {
            *weights.entry((r.from, r.to)).or_default() += 1.0;
        }
        let mut out = vec![Vec::new(); nodes.len()];
        let mut self_loops = 0;
        for ((i, j), w) in weights {
            if i == j {
                self_loops += 1;
            }
            out[i].push((j, w));
        }
        ReplyGraph {
            nodes,
            groups,
            out,
            replies,
            self_loops,
            dangling_parents,
        }
    }

    /// Graph from explicit nodes and weighted edges (weights must be positive and finite).
    pub fn from_edges(nodes: Vec<(UserId, Group)>, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let n = nodes.len();
        let mut out = vec![Vec::new(); n];
        let mut self_loops = 0;
        let mut seen = BTreeSet::new();
        for &(i, j, w) in edges {
            if i >= n || j >= n {
                return Err(Error::InvalidInput(format!("edge {i}->{j} out of range")));
            }
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::InvalidInput(format!("edge {i}->{j} has weight {w}")));
            }
            if !seen.insert((i, j)) {
                return Err(Error::InvalidInput(format!("duplicate edge {i}->{j}")));
            }
            if i == j {
                self_loops += 1;
            }
            out[i].push((j, w));
        }
        for row in &mut out {
            row.sort_by_key(|&(j, _)| j);
        }
        let (nodes, groups) = nodes.into_iter().unzip();
        Ok(ReplyGraph {
            nodes,
            groups,
            out,
            replies: Vec::new(),
            self_loops,
            dangling_parents: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[UserId] {
        &self.nodes
    }

    pub fn group(&self, i: usize) -> Group {
        self.groups[i]
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn out_edges(&self, i: usize) -> &[(usize, f64)] {
        &self.out[i]
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.out
            .iter()
            .enumerate()
            .flat_map(|(i, row)| row.iter().map(move |&(j, w)| (i, j, w)))
    }

    pub fn edge_count(&self) -> usize {
        self.out.iter().map(Vec::len).sum()
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.out[i]
            .binary_search_by_key(&j, |&(k, _)| k)
            .map_or(0.0, |p| self.out[i][p].1)
    }

    pub fn index_of(&self, user: &str) -> Option<usize> {
        self.nodes.iter().position(|u| u == user)
    }

    pub fn replies(&self) -> &[Reply] {
        &self.replies
    }

    /// The same graph with attacker and defender tags exchanged.
    pub fn swap_groups(&self) -> ReplyGraph {
        let mut g = self.clone();
        for t in &mut g.groups {
            *t = t.swapped();
        }
        g
    }

    /// Multiply every edge weight by `factor`.
    pub fn scaled(&self, factor: f64) -> ReplyGraph {
        let mut g = self.clone();
        for row in &mut g.out {
            for e in row {
                e.1 *= factor;
            }
        }
        g
    }

    /// Total reply weight from group `from` to group `to`.
    pub fn group_weight(&self, from: Group, to: Group) -> f64 {
        self.edges()
            .filter(|&(i, j, _)| self.groups[i] == from && self.groups[j] == to)
            .map(|(_, _, w)| w)
            .fold(0.0, |a, w| a + w)
    }

    /// Edge list lines `src dst weight group(src) group(dst)`.
    pub fn to_edge_list(&self) -> String {
        let mut s = String::new();
        for (i, j, w) in self.edges() {
            let _ = writeln!(
                s,
                "{} {} {} {} {}",
                self.nodes[i],
                self.nodes[j],
                w,
                self.groups[i].as_str(),
                self.groups[j].as_str()
            );
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TeleportSet {
    Attackers,
    Defenders,
    All,
}

impl TeleportSet {
    fn contains(self, g: Group) -> bool {
        match self {
            TeleportSet::Attackers => g == Group::Attacker,
            TeleportSet::Defenders => g == Group::Defender,
            TeleportSet::All => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PageRankConfig {
    /// Teleport probability per step.
    pub alpha: f64,
    /// Convergence threshold on the L1 change between iterates.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PageRankConfig {
    fn default() -> Self {
        PageRankConfig {
            alpha: 0.25,
            tol: 1e-10,
            max_iter: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupPageRank {
    /// Score per node, in graph node order.
    pub scores: Vec<f64>,
    pub teleport_set: TeleportSet,
    pub alpha: f64,
    pub iterations: usize,
}

impl GroupPageRank {
    pub fn by_user<'a>(&'a self, graph: &'a ReplyGraph) -> BTreeMap<&'a str, f64> {
        graph
            .nodes()
            .iter()
            .map(String::as_str)
            .zip(self.scores.iter().copied())
            .collect()
    }
}

/// Power iteration for PageRank whose restarts, including those from dangling nodes,
/// land uniformly on `teleport`.
pub fn group_pagerank(
    graph: &ReplyGraph,
    teleport: TeleportSet,
    config: &PageRankConfig,
) -> Result<GroupPageRank> {
    if !(config.alpha > 0.0 && config.alpha <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "alpha {} outside (0, 1]",
            config.alpha
        )));
    }
    let n = graph.len();
    let members: Vec<usize> = (0..n)
        .filter(|&i| teleport.contains(graph.groups[i]))
        .collect();
    if members.is_empty() {
        return Err(Error::InvalidInput(format!(
            "teleport set {teleport:?} is empty"
        )));
    }
    let mut t = vec![0.0; n];
    for &i in &members {
        t[i] = 1.0 / members.len() as f64;
    }
    let out_weight: Vec<f64> = graph
        .out
        .iter()
        .map(|row| row.iter().map(|e| e.1).sum())
        .collect();
    let follow = 1.0 - config.alpha;

    let mut x = t.clone();
    let mut next = vec![0.0; n];
    let mut delta = f64::INFINITY;
    for iter in 1..=config.max_iter {
        let mut restart = config.alpha;
        next.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            if out_weight[i] == 0.0 {
                restart += follow * x[i];
                continue;
            }
            let scale = follow * x[i] / out_weight[i];
            for &(j, w) in &graph.out[i] {
                next[j] += scale * w;
            }
        }
        for &i in &members {
            next[i] += restart * t[i];
        }
        // guard against drift
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|v| *v /= total);
        delta = x.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut x, &mut next);
        if delta < config.tol {
            return Ok(GroupPageRank {
                scores: x,
                teleport_set: teleport,
                alpha: config.alpha,
                iterations: iter,
            });
        }
    }
    Err(Error::NotConverged {
        iterations: config.max_iter,
        delta,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EchoReport {
    pub attackers: usize,
    pub defenders: usize,
    pub attacker_to_attacker: f64,
    pub attacker_to_defender: f64,
    pub defender_to_defender: f64,
    pub defender_to_attacker: f64,
    /// Within-group over cross-group weight; `None` when there is no cross-group weight.
    pub attacker_echo_ratio: Option<f64>,
    pub defender_echo_ratio: Option<f64>,
    /// Cross-group share of each group's outgoing weight to attackers and defenders.
    pub attacker_cross_fraction: Option<f64>,
    pub defender_cross_fraction: Option<f64>,
    /// Defenders whose A-PageRank is exactly zero (no inflow reachable from attackers).
    pub defender_zero_apr_fraction: f64,
    /// Defenders whose A-PageRank is at least ten times the mean over attackers and defenders.
    pub defender_high_apr_fraction: f64,
    pub mean_defender_apr: f64,
    pub mean_attacker_dpr: f64,
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den > 0.0).then(|| num / den)
}

pub fn echo_metrics(graph: &ReplyGraph, config: &PageRankConfig) -> Result<EchoReport> {
    let attackers: Vec<usize> = (0..graph.len())
        .filter(|&i| graph.groups[i] == Group::Attacker)
        .collect();
    let defenders: Vec<usize> = (0..graph.len())
        .filter(|&i| graph.groups[i] == Group::Defender)
        .collect();
    if attackers.is_empty() || defenders.is_empty() {
        return Err(Error::InvalidInput(
            "echo metrics need at least one attacker and one defender".into(),
        ));
    }
    let aa = graph.group_weight(Group::Attacker, Group::Attacker);
    let ad = graph.group_weight(Group::Attacker, Group::Defender);
    let dd = graph.group_weight(Group::Defender, Group::Defender);
    let da = graph.group_weight(Group::Defender, Group::Attacker);

    let apr = group_pagerank(graph, TeleportSet::Attackers, config)?.scores;
    let dpr = group_pagerank(graph, TeleportSet::Defenders, config)?.scores;
    let both = attackers.len() + defenders.len();
    let mean_apr = attackers
        .iter()
        .chain(&defenders)
        .map(|&i| apr[i])
        .sum::<f64>()
        / both as f64;
    let nd = defenders.len() as f64;
    let frac = |pred: &dyn Fn(f64) -> bool| {
        defenders.iter().filter(|&&i| pred(apr[i])).count() as f64 / nd
    };

    Ok(EchoReport {
        attackers: attackers.len(),
        defenders: defenders.len(),
        attacker_to_attacker: aa,
        attacker_to_defender: ad,
        defender_to_defender: dd,
        defender_to_attacker: da,
        attacker_echo_ratio: ratio(aa, ad),
        defender_echo_ratio: ratio(dd, da),
        attacker_cross_fraction: ratio(ad, aa + ad),
        defender_cross_fraction: ratio(da, dd + da),
        defender_zero_apr_fraction: frac(&|s| s == 0.0),
        defender_high_apr_fraction: frac(&|s| s >= 10.0 * mean_apr),
        mean_defender_apr: defenders.iter().map(|&i| apr[i]).sum::<f64>() / nd,
        mean_attacker_dpr: attackers.iter().map(|&i| dpr[i]).sum::<f64>() / attackers.len() as f64,
    })
}

/// Anger-token rate over direct replies from `from` to `to`; `None` when there are no such replies.
pub fn anger_rate(
    graph: &ReplyGraph,
    corpus: &Corpus,
    lexicon: &Lexicon,
    from: Group,
    to: Group,
) -> Result<Option<f64>> {
    if lexicon.category("anger").is_none() {
        return Err(Error::InvalidInput(format!(
            "lexicon {} has no anger category",
            lexicon.name
        )));
    }
    let mut any = false;
    let mut hits = 0;
    let mut tokens = 0;
    for r in graph
        .replies()
        .iter()
        .filter(|r| graph.groups[r.from] == from && graph.groups[r.to] == to)
    {
        let Some(c) = corpus.comment(&r.comment) else {
            continue;
        };
        any = true;
        let toks = tokenize(&c.body);
        hits += lexicon.hits("anger", &toks);
        tokens += toks.len();
    }
    Ok(match (any, tokens) {
        (false, _) => None,
        (true, 0) => Some(0.0),
        (true, n) => Some(hits as f64 / n as f64),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{comment, post, reply};

    fn set(xs: &[&str]) -> BTreeSet<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn reply_to_post_makes_no_edge() {
        let (corpus, _) = Corpus::from_events(vec![
            post("p", "o", "T", 0, ""),
            comment("c1", "i", "T", 1, "p", "p"),
        ]);
        let g = build_reply_graph(&corpus, "p", &set(&[]), &set(&[]));
        assert_eq!(g.edge_count(), 0);
        assert_eq!(g.len(), 1);
    }

    #[test]
    fn chain_counts_each_direction() {
        let (corpus, _) = Corpus::from_events(vec![
            post("p", "o", "T", 0, ""),
            comment("c1", "j", "T", 1, "p", "p"),
            comment("c2", "i", "T", 2, "p", "c1"),
            comment("c3", "j", "T", 3, "p", "c2"),
            comment("c4", "i", "T", 4, "p", "c1"),
            comment("c5", "i", "T", 5, "p", "ghost"),
        ]);
        let g = build_reply_graph(&corpus, "p", &set(&["i"]), &set(&["j"]));
        let (i, j) = (g.index_of("i").unwrap(), g.index_of("j").unwrap());
        assert_eq!(g.weight(i, j), 2.0);
        assert_eq!(g.weight(j, i), 1.0);
        assert_eq!(g.dangling_parents, 1);
        assert_eq!(g.group(i), Group::Attacker);
        assert!(g.to_edge_list().contains("i j 2 attacker defender"));
    }

    fn graph(groups: &[Group], edges: &[(usize, usize, f64)]) -> ReplyGraph {
        let nodes = groups
            .iter()
            .enumerate()
            .map(|(i, g)| (format!("n{i}"), *g))
            .collect();
        ReplyGraph::from_edges(nodes, edges).unwrap()
    }

    #[test]
    fn single_node() {
        let g = graph(&[Group::Attacker], &[]);
        let pr = group_pagerank(&g, TeleportSet::Attackers, &PageRankConfig::default()).unwrap();
        assert_eq!(pr.scores, vec![1.0]);
    }

    #[test]
    fn two_attackers_into_one_defender() {
        // a1 -> d1, a2 -> d1, teleport {a1, a2}; d1 dangles back to the teleport set.
        // Stationary: a = 0.25/2 + 0.5 d... solved by hand: x_a1 = x_a2 = 2/7, x_d1 = 3/7.
        let g = graph(
            &[Group::Attacker, Group::Attacker, Group::Defender],
            &[(0, 2, 1.0), (1, 2, 1.0)],
        );
        let pr = group_pagerank(&g, TeleportSet::Attackers, &PageRankConfig::default()).unwrap();
        let expected = [2.0 / 7.0, 2.0 / 7.0, 3.0 / 7.0];
        for (s, e) in pr.scores.iter().zip(expected) {
            assert!((s - e).abs() < 1e-9, "{s} vs {e}");
        }
    }

    #[test]
    fn empty_teleport_set_is_an_error() {
        let g = graph(&[Group::Attacker], &[]);
        assert!(group_pagerank(&g, TeleportSet::Defenders, &PageRankConfig::default()).is_err());
    }

    #[test]
    fn no_inflow_outside_teleport_is_exactly_zero() {
        let g = graph(
            &[Group::Attacker, Group::Defender, Group::Defender],
            &[(0, 1, 1.0), (2, 1, 1.0)],
        );
        let pr = group_pagerank(&g, TeleportSet::Attackers, &PageRankConfig::default()).unwrap();
        assert_eq!(pr.scores[2], 0.0);
        assert!(pr.scores[0] > 0.0);
    }

    #[test]
    fn star_into_one_defender() {
        // every attacker replies once to d*; 1 + 2 other defenders
        for (n_att, flagged) in [(20usize, false), (21, true)] {
            let mut groups = vec![Group::Attacker; n_att];
            groups.extend([Group::Defender; 3]);
            let dstar = n_att;
            let edges: Vec<_> = (0..n_att).map(|a| (a, dstar, 1.0)).collect();
            let g = graph(&groups, &edges);
            let r = echo_metrics(&g, &PageRankConfig::default()).unwrap();
            assert_eq!(
                r.defender_high_apr_fraction > 0.0,
                flagged,
                "{n_att} attackers"
            );
            assert!((r.defender_zero_apr_fraction - 2.0 / 3.0).abs() < 1e-12);
            assert_eq!(r.attacker_cross_fraction, Some(1.0));
        }
    }

    #[test]
    fn only_attacker_edges_have_no_cross_weight() {
        let g = graph(
            &[Group::Attacker, Group::Attacker, Group::Defender],
            &[(0, 1, 1.0), (1, 0, 2.0)],
        );
        let r = echo_metrics(&g, &PageRankConfig::default()).unwrap();
        assert_eq!(r.attacker_cross_fraction, Some(0.0));
        assert_eq!(r.attacker_echo_ratio, None);
        let g = graph(&[Group::Attacker, Group::Other], &[]);
        assert!(echo_metrics(&g, &PageRankConfig::default()).is_err());
    }

    #[test]
    fn anger_rates() {
        let (corpus, _) = Corpus::from_events(vec![
            post("p", "o", "T", 0, ""),
            reply("c1", "d", "T", 1, "p", "p", "hello"),
            reply("c2", "a", "T", 2, "p", "c1", "hate this"),
            reply("c3", "a", "T", 3, "p", "c2", "calm words"),
        ]);
        let g = build_reply_graph(&corpus, "p", &set(&["a"]), &set(&["d"]));
        let lex = Lexicon::builtin();
        assert_eq!(
            anger_rate(&g, &corpus, &lex, Group::Attacker, Group::Defender).unwrap(),
            Some(0.5)
        );
        assert_eq!(
            anger_rate(&g, &corpus, &lex, Group::Attacker, Group::Attacker).unwrap(),
            Some(0.0)
        );
        assert_eq!(
            anger_rate(&g, &corpus, &lex, Group::Defender, Group::Attacker).unwrap(),
            None
        );
    }
}
