//! Extraction of a probabilistic symbolic graph from trained actors.
//!
//! Pipeline: enumerate every state under greedy quantized execution into a
//! [`MappingTable`], merge similar message tuples with [`cluster_srs`], then
//! count `sr → action` frequencies with [`build_graph`]. The graph keeps raw
//! counts; every probability is `edge count / node support`, so probabilities
//! are exact integer ratios and sum to one per node up to one rounding step.
//!
//! Graphs print as ProbLog clauses `p::action_<id> :- sr_<label>.`, as DOT, and
//! as a JSON dump with counts.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::sample_index;
use crate::marl::{act, Actors, MarlError, Quantization, ReferentialEnv};

#[derive(Debug, Error)]
pub enum SymbolicError {
    #[error(transparent)]
    Marl(#[from] MarlError),
    #[error("enumeration refused: {states} states exceed the cap of {cap}")]
    EnumerationRefused { states: usize, cap: usize },
    #[error("invalid mapping table: {0}")]
    InvalidTable(String),
    #[error("mapping table is empty")]
    EmptyTable,
    #[error("unknown sr node sr_{0}")]
    UnknownSr(usize),
    #[error("unknown action action_{0}")]
    UnknownAction(usize),
    #[error("state {0} is not covered by the graph")]
    UncoveredState(usize),
    #[error("infeasible edit: forbidding action_{action} leaves sr_{sr} without actions")]
    InfeasibleEdit { sr: usize, action: usize },
    #[error("sr label sr_{0} already in use")]
    LabelInUse(usize),
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("parse error at line {line}, column {column}: {reason}")]
    Parse { line: usize, column: usize, reason: String },
}

pub type Result<T, E = SymbolicError> = std::result::Result<T, E>;

pub const DEFAULT_STATE_CAP: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingRow {
    pub state: usize,
    pub cells: Vec<usize>,
    pub action: usize,
}

/// One row per state of greedy quantized execution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingTable {
    rows: Vec<MappingRow>,
    levels: usize,
}

impl MappingTable {
    pub fn new(rows: Vec<MappingRow>, levels: usize) -> Result<Self> {
        let width = rows.first().map_or(0, |r| r.cells.len());
        let mut seen = std::collections::BTreeSet::new();
        for r in &rows {
            if !seen.insert(r.state) {
                return Err(SymbolicError::InvalidTable(format!("state {} appears twice", r.state)));
            }
            if r.cells.len() != width {
                return Err(SymbolicError::InvalidTable(format!(
                    "state {} has {} cells, expected {width}",
                    r.state,
                    r.cells.len()
                )));
            }
            if let Some(c) = r.cells.iter().find(|&&c| c >= levels) {
                return Err(SymbolicError::InvalidTable(format!(
                    "state {} has cell {c} outside {levels} levels",
                    r.state
                )));
            }
        }
        Ok(Self { rows, levels })
    }

    pub fn rows(&self) -> &[MappingRow] {
        &self.rows
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Feeds every state through greedy execution with an `levels`-cell quantizer.
pub fn enumerate_mappings(actors: &Actors, env: &ReferentialEnv, levels: usize, cap: usize) -> Result<MappingTable> {
    if env.state_count() > cap {
        return Err(SymbolicError::EnumerationRefused {
            states: env.state_count(),
            cap,
        });
    }
    let q = Quantization::levels(levels)?;
    let rows = (0..env.state_count())
        .map(|s| {
            let step = act(actors, env, s, &q)?;
            Ok(MappingRow {
                state: s,
                cells: step.cells.expect("quantized execution records cells"),
                action: step.action,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    MappingTable::new(rows, levels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MergeRule {
    ExactCell,
    /// Single-linkage within Chebyshev distance `r` cells.
    Radius { r: usize },
}

/// Raw cell tuple → cluster label. Labels are ranks of each cluster's
/// lexicographically smallest member.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterDictionary {
    labels: BTreeMap<Vec<usize>, usize>,
}

#[derive(Serialize)]
struct DictionaryEntry<'a> {
    cells: &'a [usize],
    label: usize,
}

impl Serialize for ClusterDictionary {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(self.iter().map(|(cells, label)| DictionaryEntry { cells, label }))
    }
}

impl ClusterDictionary {
    pub fn label_of(&self, cells: &[usize]) -> Option<usize> {
        self.labels.get(cells).copied()
    }

    pub fn members(&self, label: usize) -> Vec<&[usize]> {
        self.labels
            .iter()
            .filter(|(_, &l)| l == label)
            .map(|(k, _)| k.as_slice())
            .collect()
    }

    pub fn n_clusters(&self) -> usize {
        self.labels.values().max().map_or(0, |m| m + 1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[usize], usize)> {
        self.labels.iter().map(|(k, &l)| (k.as_slice(), l))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClusteredRow {
    pub state: usize,
    pub cells: Vec<usize>,
    pub cluster: usize,
    pub action: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClusteredTable {
    pub rows: Vec<ClusteredRow>,
    pub dictionary: ClusterDictionary,
}

fn chebyshev(a: &[usize], b: &[usize]) -> usize {
    a.iter().zip(b).map(|(x, y)| x.abs_diff(*y)).max().unwrap_or(0)
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

pub fn cluster_srs(table: &MappingTable, rule: MergeRule) -> ClusteredTable {
    let radius = match rule {
        MergeRule::ExactCell => 0,
        MergeRule::Radius { r } => r,
    };
    // Sorted distinct tuples; index order is lexicographic.
    let distinct: Vec<Vec<usize>> = table
        .rows
        .iter()
        .map(|r| r.cells.clone())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut parent: Vec<usize> = (0..distinct.len()).collect();
    if radius > 0 {
        for i in 0..distinct.len() {
            for j in i + 1..distinct.len() {
                if chebyshev(&distinct[i], &distinct[j]) <= radius {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    // Keep the smaller index as root so roots are lexicographic minima.
                    if a != b {
                        parent[a.max(b)] = a.min(b);
                    }
                }
            }
        }
    }
    let mut root_label: BTreeMap<usize, usize> = BTreeMap::new();
    let mut labels = BTreeMap::new();
    for (i, t) in distinct.iter().enumerate() {
        let root = find(&mut parent, i);
        let next = root_label.len();
        let label = *root_label.entry(root).or_insert(next);
        labels.insert(t.clone(), label);
    }
    let rows = table
        .rows
        .iter()
        .map(|r| ClusteredRow {
            state: r.state,
            cells: r.cells.clone(),
            cluster: labels[&r.cells],
            action: r.action,
        })
        .collect();
    ClusteredTable {
        rows,
        dictionary: ClusterDictionary { labels },
    }
}

/// `state → sr` (deterministic) and counted `sr → action` edges.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "GraphDump", into = "GraphDump")]
pub struct SymbolicGraph {
    state_sr: BTreeMap<usize, usize>,
    edges: BTreeMap<usize, BTreeMap<usize, u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub sr: usize,
    pub action: usize,
    pub count: u64,
    pub probability: f64,
}

pub fn build_graph(table: &ClusteredTable) -> Result<SymbolicGraph> {
    if table.rows.is_empty() {
        return Err(SymbolicError::EmptyTable);
    }
    let mut g = SymbolicGraph {
        state_sr: BTreeMap::new(),
        edges: BTreeMap::new(),
    };
    for r in &table.rows {
        g.state_sr.insert(r.state, r.cluster);
        *g.edges.entry(r.cluster).or_default().entry(r.action).or_default() += 1;
    }
    Ok(g)
}

impl SymbolicGraph {
    pub fn sr_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.edges.keys().copied()
    }

    pub fn states(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.state_sr.iter().map(|(&s, &sr)| (s, sr))
    }

    pub fn actions(&self) -> Vec<usize> {
        let set: std::collections::BTreeSet<usize> = self.edges.values().flat_map(|m| m.keys().copied()).collect();
        set.into_iter().collect()
    }

    pub fn sr_of(&self, state: usize) -> Result<usize> {
        self.state_sr.get(&state).copied().ok_or(SymbolicError::UncoveredState(state))
    }

    pub fn support(&self, sr: usize) -> Result<u64> {
        Ok(self.node(sr)?.values().sum())
    }

    fn node(&self, sr: usize) -> Result<&BTreeMap<usize, u64>> {
        self.edges.get(&sr).ok_or(SymbolicError::UnknownSr(sr))
    }

    /// Outgoing `(action, count, probability)` of one sr node, action order.
    pub fn outgoing(&self, sr: usize) -> Result<Vec<(usize, u64, f64)>> {
        let node = self.node(sr)?;
        let support: u64 = node.values().sum();
        Ok(node
            .iter()
            .map(|(&a, &c)| (a, c, c as f64 / support as f64))
            .collect())
    }

    pub fn edges(&self) -> Vec<Edge> {
        self.edges
            .keys()
            .flat_map(|&sr| {
                self.outgoing(sr)
                    .expect("node exists")
                    .into_iter()
                    .map(move |(action, count, probability)| Edge {
                        sr,
                        action,
                        count,
                        probability,
                    })
            })
            .collect()
    }

    pub fn action_distribution(&self, state: usize) -> Result<Vec<(usize, f64)>> {
        let sr = self.sr_of(state)?;
        Ok(self.outgoing(sr)?.into_iter().map(|(a, _, p)| (a, p)).collect())
    }

    pub fn to_dot(&self) -> String {
        let mut s = String::from("digraph symbolic {\n  rankdir=LR;\n");
        for (st, _) in self.states() {
            let _ = writeln!(s, "  state_{st} [shape=box];");
        }
        for sr in self.sr_nodes() {
            let _ = writeln!(s, "  sr_{sr} [shape=ellipse];");
        }
        for a in self.actions() {
            let _ = writeln!(s, "  action_{a} [shape=diamond];");
        }
        for (st, sr) in self.states() {
            let _ = writeln!(s, "  state_{st} -> sr_{sr};");
        }
        for e in self.edges() {
            let _ = writeln!(s, "  sr_{} -> action_{} [label=\"{:.4}\"];", e.sr, e.action, e.probability);
        }
        s.push_str("}\n");
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StateNode {
    state: usize,
    sr: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SrNode {
    label: usize,
    support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphDump {
    states: Vec<StateNode>,
    sr_nodes: Vec<SrNode>,
    edges: Vec<Edge>,
}

impl From<SymbolicGraph> for GraphDump {
    fn from(g: SymbolicGraph) -> Self {
        GraphDump {
            states: g.states().map(|(state, sr)| StateNode { state, sr }).collect(),
            sr_nodes: g
                .sr_nodes()
                .map(|label| SrNode {
                    label,
                    support: g.support(label).expect("node exists"),
                })
                .collect(),
            edges: g.edges(),
        }
    }
}

impl TryFrom<GraphDump> for SymbolicGraph {
    type Error = SymbolicError;

    fn try_from(d: GraphDump) -> Result<Self> {
        let mut edges: BTreeMap<usize, BTreeMap<usize, u64>> = BTreeMap::new();
        for e in &d.edges {
            if e.count == 0 {
                return Err(SymbolicError::InvalidGraph(format!("edge sr_{} -> action_{} has zero count", e.sr, e.action)));
            }
            if edges.entry(e.sr).or_default().insert(e.action, e.count).is_some() {
                return Err(SymbolicError::InvalidGraph(format!("duplicate edge sr_{} -> action_{}", e.sr, e.action)));
            }
        }
        for n in &d.sr_nodes {
            let support: u64 = edges.get(&n.label).map_or(0, |m| m.values().sum());
            if support != n.support {
                return Err(SymbolicError::InvalidGraph(format!("sr_{} support {} != edge total {support}", n.label, n.support)));
            }
        }
        let mut state_sr = BTreeMap::new();
        for s in &d.states {
            if !edges.contains_key(&s.sr) {
                return Err(SymbolicError::UnknownSr(s.sr));
            }
            state_sr.insert(s.state, s.sr);
        }
        Ok(SymbolicGraph { state_sr, edges })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GraphEdit {
    ForbidAction { action: usize },
    RelabelSr { old: usize, new: usize },
}

pub fn edit_graph(graph: &SymbolicGraph, edit: GraphEdit) -> Result<SymbolicGraph> {
    let mut g = graph.clone();
    match edit {
        GraphEdit::ForbidAction { action } => {
            if !g.edges.values().any(|m| m.contains_key(&action)) {
                return Err(SymbolicError::UnknownAction(action));
            }
            for (&sr, node) in g.edges.iter_mut() {
                if node.contains_key(&action) {
                    if node.len() == 1 {
                        return Err(SymbolicError::InfeasibleEdit { sr, action });
                    }
                    // Support is the sum of remaining counts, which renormalizes.
                    node.remove(&action);
                }
            }
        }
        GraphEdit::RelabelSr { old, new } => {
            if !g.edges.contains_key(&old) {
                return Err(SymbolicError::UnknownSr(old));
            }
            if old != new {
                if g.edges.contains_key(&new) {
                    return Err(SymbolicError::LabelInUse(new));
                }
                let node = g.edges.remove(&old).expect("checked");
                g.edges.insert(new, node);
                g.state_sr.values_mut().filter(|v| **v == old).for_each(|v| *v = new);
            }
        }
    }
    Ok(g)
}

/// Shannon entropy in bits of one sr node's action distribution.
pub fn expression_entropy(graph: &SymbolicGraph, sr: usize) -> Result<f64> {
    Ok(graph
        .outgoing(sr)?
        .iter()
        .map(|&(_, _, p)| p * (1.0 / p).log2())
        .sum())
}

/// `-log2 p` of one clause.
pub fn clause_surprisal(graph: &SymbolicGraph, sr: usize, action: usize) -> Result<f64> {
    let p = graph
        .outgoing(sr)?
        .into_iter()
        .find(|&(a, _, _)| a == action)
        .ok_or(SymbolicError::UnknownAction(action))?
        .2;
    Ok((1.0 / p).log2())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    Uniform,
    #[default]
    Support,
}

/// Mean node entropy, uniform over nodes or weighted by node support.
pub fn graph_entropy(graph: &SymbolicGraph, weighting: Weighting) -> f64 {
    let mut total = 0.0;
    let mut weight = 0.0;
    for sr in graph.sr_nodes() {
        let h = expression_entropy(graph, sr).expect("node exists");
        let w = match weighting {
            Weighting::Uniform => 1.0,
            Weighting::Support => graph.support(sr).expect("node exists") as f64,
        };
        total += w * h;
        weight += w;
    }
    if weight == 0.0 {
        0.0
    } else {
        total / weight
    }
}

/// Samples an action for `state`; nodes with a single edge never touch `rng`.
pub fn replay<R: Rng + ?Sized>(graph: &SymbolicGraph, state: usize, rng: &mut R) -> Result<usize> {
    let dist = graph.action_distribution(state)?;
    if dist.len() == 1 {
        return Ok(dist[0].0);
    }
    let weights: Vec<f64> = dist.iter().map(|&(_, p)| p).collect();
    Ok(dist[sample_index(&weights, rng)].0)
}

/// Max over states of the total-variation distance between the graph's
/// action distribution and the reference point mass.
pub fn fidelity_against(graph: &SymbolicGraph, reference: &MappingTable) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for row in reference.rows() {
        let p = graph
            .action_distribution(row.state)?
            .into_iter()
            .find(|&(a, _)| a == row.action)
            .map_or(0.0, |(_, p)| p);
        worst = worst.max(1.0 - p);
    }
    Ok(worst)
}

pub fn fidelity(graph: &SymbolicGraph, actors: &Actors, env: &ReferentialEnv, levels: usize) -> Result<f64> {
    fidelity_against(graph, &enumerate_mappings(actors, env, levels, DEFAULT_STATE_CAP)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Clause {
    pub probability: f64,
    pub action: usize,
    pub sr: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ProbLogProgram {
    pub clauses: Vec<Clause>,
}

impl ProbLogProgram {
    pub fn from_graph(graph: &SymbolicGraph) -> Self {
        Self {
            clauses: graph
                .edges()
                .into_iter()
                .map(|e| Clause {
                    probability: e.probability,
                    action: e.action,
                    sr: e.sr,
                })
                .collect(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for c in &self.clauses {
            let _ = writeln!(s, "{:.12}::action_{} :- sr_{}.", c.probability, c.action, c.sr);
        }
        s
    }
}

pub fn emit_problog(graph: &SymbolicGraph) -> String {
    ProbLogProgram::from_graph(graph).to_text()
}

struct Cursor<'a> {
    line: usize,
    text: &'a str,
    pos: usize,
}

impl Cursor<'_> {
    fn err(&self, reason: impl Into<String>) -> SymbolicError {
        SymbolicError::Parse {
            line: self.line,
            column: self.text[..self.pos].chars().count() + 1,
            reason: reason.into(),
        }
    }

    fn rest(&self) -> &str {
        &self.text[self.pos..]
    }

    fn skip_ws(&mut self) {
        let rest = self.rest();
        self.pos += rest.len() - rest.trim_start().len();
    }

    fn expect(&mut self, lit: &str) -> Result<()> {
        if self.rest().starts_with(lit) {
            self.pos += lit.len();
            Ok(())
        } else {
            Err(self.err(format!("expected `{lit}`")))
        }
    }

    fn take_while(&mut self, f: impl Fn(char) -> bool) -> &str {
        let start = self.pos;
        let len = self.rest().find(|c| !f(c)).unwrap_or(self.rest().len());
        self.pos += len;
        &self.text[start..self.pos]
    }

    fn index(&mut self) -> Result<usize> {
        let at = self.pos;
        let parsed = self.take_while(|c| c.is_ascii_digit()).parse::<usize>();
        parsed.map_err(|_| {
            self.pos = at;
            self.err("expected an index")
        })
    }
}

/// Parses clause lines; blank lines and `%` comments are skipped.
pub fn parse_problog(text: &str) -> Result<ProbLogProgram> {
    let mut clauses = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let mut c = Cursor {
            line: i + 1,
            text: raw,
            pos: 0,
        };
        c.skip_ws();
        if c.rest().is_empty() || c.rest().starts_with('%') {
            continue;
        }
        let at = c.pos;
        let number = c.take_while(|ch| ch.is_ascii_digit() || matches!(ch, '.' | 'e' | 'E' | '+' | '-'));
        let probability: f64 = match number.parse() {
            Ok(p) => p,
            Err(_) => {
                c.pos = at;
                return Err(c.err("expected a probability"));
            }
        };
        if !(probability > 0.0 && probability <= 1.0) {
            c.pos = at;
            return Err(c.err(format!("probability {probability} outside (0, 1]")));
        }
        c.expect("::")?;
        c.expect("action_")?;
        let action = c.index()?;
        c.skip_ws();
        c.expect(":-")?;
        c.skip_ws();
        c.expect("sr_")?;
        let sr = c.index()?;
        c.skip_ws();
        c.expect(".")?;
        c.skip_ws();
        if !c.rest().is_empty() && !c.rest().starts_with('%') {
            return Err(c.err("trailing input after clause"));
        }
        clauses.push(Clause { probability, action, sr });
    }
    Ok(ProbLogProgram { clauses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn table(rows: &[(usize, &[usize], usize)], levels: usize) -> MappingTable {
        MappingTable::new(
            rows.iter()
                .map(|&(state, cells, action)| MappingRow {
                    state,
                    cells: cells.to_vec(),
                    action,
                })
                .collect(),
            levels,
        )
        .unwrap()
    }

    fn graph_of(rows: &[(usize, &[usize], usize)], rule: MergeRule) -> SymbolicGraph {
        build_graph(&cluster_srs(&table(rows, 8), rule)).unwrap()
    }

    #[test]
    fn table_invariants() {
        let dup = MappingTable::new(
            vec![
                MappingRow { state: 0, cells: vec![0], action: 0 },
                MappingRow { state: 0, cells: vec![1], action: 0 },
            ],
            2,
        );
        assert!(matches!(dup, Err(SymbolicError::InvalidTable(_))));
        let range = MappingTable::new(vec![MappingRow { state: 0, cells: vec![2], action: 0 }], 2);
        assert!(matches!(range, Err(SymbolicError::InvalidTable(_))));
    }

    #[test]
    fn single_linkage_by_hand() {
        let t = table(&[(0, &[0, 0], 0), (1, &[0, 1], 1), (2, &[5, 5], 2)], 8);
        let c = cluster_srs(&t, MergeRule::Radius { r: 1 });
        assert_eq!(c.dictionary.n_clusters(), 2);
        assert_eq!(c.dictionary.label_of(&[0, 0]), Some(0));
        assert_eq!(c.dictionary.label_of(&[0, 1]), Some(0));
        assert_eq!(c.dictionary.label_of(&[5, 5]), Some(1));
        // Chain (0,0)-(0,1)-(0,2) links even though the ends are 2 apart.
        let chain = table(&[(0, &[0, 0], 0), (1, &[0, 1], 0), (2, &[0, 2], 0)], 8);
        assert_eq!(cluster_srs(&chain, MergeRule::Radius { r: 1 }).dictionary.n_clusters(), 1);
    }

    #[test]
    fn radius_zero_is_exact_cell() {
        let t = table(&[(0, &[3, 1], 0), (1, &[0, 1], 1), (2, &[3, 1], 1), (3, &[7, 7], 0)], 8);
        assert_eq!(cluster_srs(&t, MergeRule::Radius { r: 0 }), cluster_srs(&t, MergeRule::ExactCell));
        let c = cluster_srs(&t, MergeRule::ExactCell);
        // Labels follow lexicographic order of the smallest member.
        assert_eq!(c.dictionary.label_of(&[0, 1]), Some(0));
        assert_eq!(c.dictionary.label_of(&[3, 1]), Some(1));
        assert_eq!(c.dictionary.label_of(&[7, 7]), Some(2));
    }

    #[test]
    fn deterministic_graph_is_exact() {
        let g = graph_of(&[(0, &[0], 0), (1, &[1], 1), (2, &[2], 2)], MergeRule::ExactCell);
        assert!(g.edges().iter().all(|e| e.probability == 1.0));
        assert_eq!(graph_entropy(&g, Weighting::Support), 0.0);
        assert_eq!(graph_entropy(&g, Weighting::Uniform), 0.0);
        let t = table(&[(0, &[0], 0), (1, &[1], 1), (2, &[2], 2)], 8);
        assert_eq!(fidelity_against(&g, &t).unwrap(), 0.0);
        let mut rng = seeded(0);
        for _ in 0..10 {
            assert_eq!(replay(&g, 1, &mut rng).unwrap(), 1);
        }
        assert!(matches!(replay(&g, 9, &mut rng), Err(SymbolicError::UncoveredState(9))));
    }

    #[test]
    fn merged_srs_split_probability() {
        // Three states; the first two merge and disagree on the action.
        let rows: &[(usize, &[usize], usize)] = &[(0, &[0, 0], 1), (1, &[0, 1], 2), (2, &[6, 6], 2)];
        let g = graph_of(rows, MergeRule::Radius { r: 1 });
        let e = g.edges();
        assert_eq!(e.len(), 3);
        assert_eq!((e[0].sr, e[0].action, e[0].count, e[0].probability), (0, 1, 1, 0.5));
        assert_eq!((e[1].sr, e[1].action, e[1].count, e[1].probability), (0, 2, 1, 0.5));
        assert_eq!((e[2].sr, e[2].action, e[2].count, e[2].probability), (1, 2, 1, 1.0));
        assert_eq!(g.support(0).unwrap(), 2);
        assert_eq!(fidelity_against(&g, &table(rows, 8)).unwrap(), 0.5);
        assert_eq!(expression_entropy(&g, 0).unwrap(), 1.0);
        assert_eq!(clause_surprisal(&g, 0, 2).unwrap(), 1.0);
        assert!((graph_entropy(&g, Weighting::Support) - 2.0 / 3.0).abs() < 1e-15);
        assert!((graph_entropy(&g, Weighting::Uniform) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn quarter_three_quarter_entropy() {
        let g = graph_of(
            &[(0, &[0], 0), (1, &[0], 1), (2, &[0], 1), (3, &[0], 1)],
            MergeRule::ExactCell,
        );
        let oracle = -(0.25f64 * 0.25f64.log2() + 0.75 * 0.75f64.log2());
        assert!((expression_entropy(&g, 0).unwrap() - oracle).abs() < 1e-12);
        assert!((expression_entropy(&g, 0).unwrap() - 0.811278124459).abs() < 1e-12);
    }

    #[test]
    fn forbid_renormalizes() {
        let g = graph_of(&[(0, &[0], 0), (1, &[0], 1)], MergeRule::ExactCell);
        let f = edit_graph(&g, GraphEdit::ForbidAction { action: 1 }).unwrap();
        assert_eq!(f.outgoing(0).unwrap(), vec![(0, 1, 1.0)]);

        let g = graph_of(&[(0, &[0], 0), (1, &[0], 1), (2, &[0], 2), (3, &[0], 2)], MergeRule::ExactCell);
        let f = edit_graph(&g, GraphEdit::ForbidAction { action: 0 }).unwrap();
        let out = f.outgoing(0).unwrap();
        assert_eq!((out[0].0, out[0].2), (1, 1.0 / 3.0));
        assert_eq!((out[1].0, out[1].2), (2, 2.0 / 3.0));

        let only = graph_of(&[(0, &[0], 0), (1, &[1], 1)], MergeRule::ExactCell);
        assert!(matches!(
            edit_graph(&only, GraphEdit::ForbidAction { action: 1 }),
            Err(SymbolicError::InfeasibleEdit { sr: 1, action: 1 })
        ));
        assert!(matches!(
            edit_graph(&only, GraphEdit::ForbidAction { action: 7 }),
            Err(SymbolicError::UnknownAction(7))
        ));
    }

    #[test]
    fn relabel_round_trips() {
        let g = graph_of(&[(0, &[0], 0), (1, &[3], 1)], MergeRule::ExactCell);
        let r = edit_graph(&g, GraphEdit::RelabelSr { old: 1, new: 9 }).unwrap();
        assert_eq!(r.sr_of(1).unwrap(), 9);
        assert!(emit_problog(&r).contains(":- sr_9."));
        assert_eq!(edit_graph(&r, GraphEdit::RelabelSr { old: 9, new: 1 }).unwrap(), g);
        assert!(matches!(
            edit_graph(&g, GraphEdit::RelabelSr { old: 0, new: 1 }),
            Err(SymbolicError::LabelInUse(1))
        ));
    }

    #[test]
    fn problog_text() {
        let g = graph_of(&[(0, &[0], 0)], MergeRule::ExactCell);
        assert_eq!(emit_problog(&g), "1.000000000000::action_0 :- sr_0.\n");
        let p = parse_problog("0.5::action_1 :- sr_2.").unwrap();
        assert_eq!(
            p.clauses,
            vec![Clause {
                probability: 0.5,
                action: 1,
                sr: 2
            }]
        );
        let g = graph_of(&[(0, &[0], 0), (1, &[0], 1), (2, &[0], 1), (3, &[2], 1)], MergeRule::ExactCell);
        let text = emit_problog(&g);
        assert_eq!(parse_problog(&text).unwrap().to_text(), text);
    }

    #[test]
    fn problog_errors_carry_position() {
        let err = parse_problog("1.0::action_0 :- sr_0.\n0.5::actoin_1 :- sr_2.").unwrap_err();
        assert!(matches!(err, SymbolicError::Parse { line: 2, column: 6, .. }), "{err}");
        let err = parse_problog("1.5::action_0 :- sr_0.").unwrap_err();
        assert!(matches!(err, SymbolicError::Parse { line: 1, column: 1, .. }));
        let err = parse_problog("1::action_0 :- sr_0").unwrap_err();
        assert!(matches!(err, SymbolicError::Parse { line: 1, column: 20, .. }), "{err}");
        assert!(parse_problog("% comment\n\n").unwrap().clauses.is_empty());
    }

    #[test]
    fn json_dump_round_trips() {
        let g = graph_of(&[(0, &[0, 0], 1), (1, &[0, 1], 2), (2, &[6, 6], 2)], MergeRule::Radius { r: 1 });
        let json = serde_json::to_string(&g).unwrap();
        assert!(json.contains("\"count\""));
        let back: SymbolicGraph = serde_json::from_str(&json).unwrap();
        assert_eq!(back, g);
        let dot = g.to_dot();
        assert!(dot.contains("sr_0 -> action_1 [label=\"0.5000\"];"));
        assert!(dot.contains("state_2 [shape=box];"));
    }

    #[test]
    fn enumeration_respects_cap() {
        let env = ReferentialEnv::new(4).unwrap();
        let actors = Actors::random(&env, 2, 4, &mut seeded(1)).unwrap();
        assert!(matches!(
            enumerate_mappings(&actors, &env, 2, 3),
            Err(SymbolicError::EnumerationRefused { states: 4, cap: 3 })
        ));
        let t = enumerate_mappings(&actors, &env, 2, DEFAULT_STATE_CAP).unwrap();
        assert_eq!(t, enumerate_mappings(&actors, &env, 2, DEFAULT_STATE_CAP).unwrap());
        let exec = crate::marl::execute(&actors, &env, 4, &Quantization::levels(2).unwrap()).unwrap();
        for (row, step) in t.rows().iter().zip(&exec.log) {
            assert_eq!(Some(&row.cells), step.cells.as_ref());
            assert_eq!(row.action, step.action);
        }
        let single = ReferentialEnv::new(1).unwrap();
        let a1 = Actors::random(&single, 2, 4, &mut seeded(1)).unwrap();
        assert_eq!(enumerate_mappings(&a1, &single, 2, 10).unwrap().len(), 1);
        let g = build_graph(&cluster_srs(&t, MergeRule::ExactCell)).unwrap();
        assert_eq!(fidelity(&g, &actors, &env, 2).unwrap(), 0.0);
    }
}
