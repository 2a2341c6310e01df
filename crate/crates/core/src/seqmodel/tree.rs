use std::collections::{HashMap, VecDeque};
use std::fmt::Write as _;

use super::{SequenceModel, Token};
use crate::error::{Error, Result};
use crate::stable_math::LogValue;

const SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone)]
struct Child {
    token: Token,
    node: usize,
    logp: LogValue,
}

#[derive(Debug, Clone)]
struct Node {
    id: u64,
    children: Vec<Child>,
}

/// A sequence distribution given as an explicit probability tree.
///
/// Internal nodes are partial sequences, leaves are complete ones. Each
/// edge carries a token and the conditional probability of taking it.
/// Tree file format, one edge per line:
///
/// ```text
/// # parent_id child_id token_id cond_prob
/// 0 1 0 0.6
/// 0 2 1 0.4
/// ```
#[derive(Debug, Clone)]
pub struct ExplicitTreeModel {
    nodes: Vec<Node>,
    vocab_size: usize,
    max_len: usize,
}

impl ExplicitTreeModel {
    /// Parses the tree file format.
    pub fn parse(text: &str) -> Result<Self> {
        let mut edges = Vec::new();
        let mut lines = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| Error::Format {
                line: lineno + 1,
                msg,
            };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 4 {
                return Err(err(format!("expected 4 fields, found {}", fields.len())));
            }
            let parent: u64 = fields[0].parse().map_err(|_| err(format!("bad parent id {:?}", fields[0])))?;
            let child: u64 = fields[1].parse().map_err(|_| err(format!("bad child id {:?}", fields[1])))?;
            let token: u32 = fields[2].parse().map_err(|_| err(format!("bad token id {:?}", fields[2])))?;
            let prob: f64 = fields[3].parse().map_err(|_| err(format!("bad probability {:?}", fields[3])))?;
            edges.push((parent, child, token, prob));
            lines.push(lineno + 1);
        }
        Self::build(&edges, &lines)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Builds from `(parent_id, child_id, token_id, cond_prob)` edges.
    pub fn from_edges(edges: &[(u64, u64, u32, f64)]) -> Result<Self> {
        let lines: Vec<usize> = (1..=edges.len()).collect();
        Self::build(edges, &lines)
    }

    fn build(edges: &[(u64, u64, u32, f64)], lines: &[usize]) -> Result<Self> {
        let fail = |line: usize, msg: String| Error::Format { line, msg };
        if edges.is_empty() {
            return Err(fail(0, "tree has no edges".into()));
        }
        let mut index: HashMap<u64, usize> = HashMap::new();
        let mut nodes: Vec<Node> = Vec::new();
        let mut has_parent: Vec<bool> = Vec::new();
        let mut first_line: Vec<usize> = Vec::new();
        let mut intern = |id: u64, nodes: &mut Vec<Node>, has_parent: &mut Vec<bool>, first_line: &mut Vec<usize>| {
            *index.entry(id).or_insert_with(|| {
                nodes.push(Node { id, children: Vec::new() });
                has_parent.push(false);
                first_line.push(0);
                nodes.len() - 1
            })
        };
        intern(0, &mut nodes, &mut has_parent, &mut first_line);

        for (&(parent, child, token, prob), &line) in edges.iter().zip(lines) {
            if !(prob.is_finite() && (0.0..=1.0 + SUM_TOLERANCE).contains(&prob)) {
                return Err(fail(line, format!("probability {prob} outside [0, 1]")));
            }
            if child == 0 {
                return Err(fail(line, "root 0 cannot be a child (cycle)".into()));
            }
            if parent == child {
                return Err(fail(line, format!("self loop on node {parent}")));
            }
            let p = intern(parent, &mut nodes, &mut has_parent, &mut first_line);
            let c = intern(child, &mut nodes, &mut has_parent, &mut first_line);
            if has_parent[c] {
                return Err(fail(line, format!("node {child} has more than one parent")));
            }
            has_parent[c] = true;
            if nodes[p].children.iter().any(|ch| ch.token.0 == token) {
                return Err(fail(line, format!("node {parent} has two edges with token {token}")));
            }
            if first_line[p] == 0 {
                first_line[p] = line;
            }
            nodes[p].children.push(Child {
                token: Token(token),
                node: c,
                logp: prob.ln(),
            });
        }

        // Every node has at most one parent and the root none, so any cycle
        // is unreachable from the root.
        let mut depth = vec![usize::MAX; nodes.len()];
        depth[0] = 0;
        let mut queue = VecDeque::from([0usize]);
        let mut max_len = 0;
        while let Some(n) = queue.pop_front() {
            max_len = max_len.max(depth[n]);
            for ch in &nodes[n].children {
                depth[ch.node] = depth[n] + 1;
                queue.push_back(ch.node);
            }
        }
        if let Some(bad) = depth.iter().position(|&d| d == usize::MAX) {
            return Err(fail(0, format!("node {} is unreachable from the root (cycle or orphan)", nodes[bad].id)));
        }

        for (n, node) in nodes.iter_mut().enumerate() {
            if node.children.is_empty() {
                continue;
            }
            let sum: f64 = node.children.iter().map(|c| c.logp.exp()).sum();
            if (sum - 1.0).abs() > SUM_TOLERANCE {
                return Err(fail(
                    first_line[n],
                    format!("conditionals of node {} sum to {sum}, not 1", node.id),
                ));
            }
            let log_sum = sum.ln();
            for c in node.children.iter_mut() {
                c.logp -= log_sum;
            }
            node.children.sort_by_key(|c| c.token);
        }

        let vocab_size = nodes
            .iter()
            .flat_map(|n| n.children.iter().map(|c| c.token.index() + 1))
            .max()
            .unwrap_or(1);
        Ok(Self {
            nodes,
            vocab_size,
            max_len,
        })
    }

    /// The eight-leaf, depth-three binary tree used throughout the tests and
    /// bundled as `data/example.tree`.
    ///
    /// Leaf probabilities, left to right: 0.05, 0.15, 0.15, 0.25, 0.20,
    /// 0.10, 0.05, 0.05.
    pub fn demo() -> Self {
        Self::parse(DEMO_TREE).expect("bundled tree is valid")
    }

    fn node_at(&self, prefix: &[Token]) -> Option<usize> {
        let mut n = 0;
        for &t in prefix {
            n = self.nodes[n].children.iter().find(|c| c.token == t)?.node;
        }
        Some(n)
    }

    /// Serializes back to the tree file format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for node in &self.nodes {
            for c in &node.children {
                let _ = writeln!(out, "{} {} {} {}", node.id, self.nodes[c.node].id, c.token.0, c.logp.exp());
            }
        }
        out
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }
}

pub(crate) const DEMO_TREE: &str = "\
# Eight-leaf example tree: parent child token cond_prob
0 1 0 0.6
0 2 1 0.4
1 3 0 0.3333333333333333
1 4 1 0.6666666666666666
2 5 0 0.75
2 6 1 0.25
3 7 0 0.25
3 8 1 0.75
4 9 0 0.375
4 10 1 0.625
5 11 0 0.6666666666666666
5 12 1 0.3333333333333333
6 13 0 0.5
6 14 1 0.5
";

impl SequenceModel for ExplicitTreeModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn max_len(&self) -> usize {
        self.max_len
    }

    /// Stored conditional log-probabilities serve as logits.
    fn logits(&self, prefix: &[Token]) -> Vec<LogValue> {
        let mut out = vec![f64::NEG_INFINITY; self.vocab_size];
        if let Some(n) = self.node_at(prefix) {
            for c in &self.nodes[n].children {
                out[c.token.index()] = c.logp;
            }
        }
        out
    }

    fn step(&self, prefix: &[Token]) -> Vec<LogValue> {
        self.logits(prefix)
    }

    /// Leaves are complete; prefixes that leave the tree are dead ends and
    /// count as complete too.
    fn is_complete(&self, prefix: &[Token]) -> bool {
        self.node_at(prefix).is_none_or(|n| self.nodes[n].children.is_empty())
    }
}
