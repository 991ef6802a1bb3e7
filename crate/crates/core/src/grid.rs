//! Radial distribution network in per-unit, built from a feeder topology file in
//! physical units.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("line {from}-{to} closes a cycle")]
    CycleDetected { from: usize, to: usize },
    #[error("node {0} is not connected to the slack")]
    Disconnected(usize),
    #[error("more than one slack node ({0} and {1})")]
    MultipleSlack(usize, usize),
    #[error("no slack node")]
    NoSlack,
    #[error("nonpositive base: {0}")]
    NonPositiveBase(String),
    #[error("zero or nonpositive base")]
    ZeroBase,
    #[error("unknown node {0}")]
    UnknownNode(usize),
    #[error("duplicate node {0}")]
    DuplicateNode(usize),
    #[error("line {from}-{to} joins different voltage levels")]
    VoltageLevelMismatch { from: usize, to: usize },
    #[error("invalid data: {0}")]
    Invalid(String),
    #[error("feeder file: {0}")]
    Parse(String),
    #[error("io: {0}")]
    Io(String),
}

/// Converts a physical quantity to per-unit.
///
/// ```
/// use lem_core::grid::to_per_unit;
/// assert_eq!(to_per_unit(500.0, 1000.0).unwrap(), 0.5);
/// assert!(to_per_unit(1.0, 0.0).is_err());
/// ```
pub fn to_per_unit(value: f64, base: f64) -> Result<f64, GridError> {
    if base > 0.0 && base.is_finite() {
        Ok(value / base)
    } else {
        Err(GridError::ZeroBase)
    }
}

pub fn to_physical(value_pu: f64, base: f64) -> Result<f64, GridError> {
    if base > 0.0 && base.is_finite() {
        Ok(value_pu * base)
    } else {
        Err(GridError::ZeroBase)
    }
}

/// Impedance base in ohms, kV²/MVA.
pub fn impedance_base(v_base_kv: f64, s_base_mva: f64) -> Result<f64, GridError> {
    if v_base_kv <= 0.0 {
        return Err(GridError::NonPositiveBase(format!("v_base_kv = {v_base_kv}")));
    }
    if s_base_mva <= 0.0 {
        return Err(GridError::NonPositiveBase(format!("s_base_mva = {s_base_mva}")));
    }
    Ok(v_base_kv * v_base_kv / s_base_mva)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Slack,
    Smo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const UNBOUNDED: Interval = Interval {
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
    };

    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn intersect(&self, other: &Interval) -> Interval {
        Interval {
            lo: self.lo.max(other.lo),
            hi: self.hi.min(other.hi),
        }
    }

    fn scaled(&self, k: f64) -> Interval {
        Interval {
            lo: self.lo * k,
            hi: self.hi * k,
        }
    }
}

/// Network node; all quantities per-unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: usize,
    pub kind: NodeKind,
    pub v_base_kv: f64,
    pub v_min_sq: f64,
    pub v_max_sq: f64,
    pub p_gen: Interval,
    pub q_gen: Interval,
    pub p_load: Interval,
    pub q_load: Interval,
}

/// Line oriented away from the slack; impedances and limit per-unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    /// Apparent-power limit; infinite when the file gives none.
    pub s_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadialNetwork {
    /// Sorted by id.
    pub nodes: Vec<Node>,
    /// Ordered breadth-first from the slack, children sorted by id.
    pub lines: Vec<Line>,
    pub s_base_mva: f64,
    slack: usize,
    index: HashMap<usize, usize>,
    children: HashMap<usize, Vec<usize>>,
    parent_line: HashMap<usize, usize>,
    depth: BTreeMap<usize, usize>,
}

impl RadialNetwork {
    pub fn slack_id(&self) -> usize {
        self.slack
    }

    pub fn s_base_kw(&self) -> f64 {
        self.s_base_mva * 1000.0
    }

    pub fn node(&self, id: usize) -> Result<&Node, GridError> {
        self.index
            .get(&id)
            .map(|&i| &self.nodes[i])
            .ok_or(GridError::UnknownNode(id))
    }

    pub fn contains(&self, id: usize) -> bool {
        self.index.contains_key(&id)
    }

    /// Children of `id` in tree orientation, sorted by id.
    pub fn downstream_children(&self, id: usize) -> Result<&[usize], GridError> {
        if !self.contains(id) {
            return Err(GridError::UnknownNode(id));
        }
        Ok(self.children.get(&id).map(Vec::as_slice).unwrap_or(&[]))
    }

    /// The line feeding `id` (none for the slack).
    pub fn parent_line(&self, id: usize) -> Option<&Line> {
        self.parent_line.get(&id).map(|&k| &self.lines[k])
    }

    pub fn depth_map(&self) -> &BTreeMap<usize, usize> {
        &self.depth
    }

    /// Non-slack node ids in ascending order.
    pub fn smo_ids(&self) -> Vec<usize> {
        self.nodes
            .iter()
            .filter(|n| n.kind == NodeKind::Smo)
            .map(|n| n.id)
            .collect()
    }

    /// Node ids in breadth-first order from the slack.
    pub fn bfs_order(&self) -> Vec<usize> {
        let mut out = vec![self.slack];
        out.extend(self.lines.iter().map(|l| l.to));
        out
    }

    pub fn set_line_limit(&mut self, to: usize, s_max: f64) -> Result<(), GridError> {
        let k = *self.parent_line.get(&to).ok_or(GridError::UnknownNode(to))?;
        if !(s_max > 0.0) {
            return Err(GridError::Invalid(format!("s_max {s_max} on line into {to}")));
        }
        self.lines[k].s_max = s_max;
        Ok(())
    }
}

fn default_v_min() -> f64 {
    0.95
}

fn default_v_max() -> f64 {
    1.05
}

fn neg_inf() -> f64 {
    f64::NEG_INFINITY
}

fn pos_inf() -> f64 {
    f64::INFINITY
}

/// One node record of the feeder file (physical units).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: usize,
    pub kind: NodeKind,
    pub v_base_kv: f64,
    /// Voltage magnitude limits in kV; default 0.95 and 1.05 of the base.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_min_kv: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_max_kv: Option<f64>,
    #[serde(default = "neg_inf", skip_serializing_if = "is_neg_inf")]
    pub p_gen_min_kw: f64,
    #[serde(default = "pos_inf", skip_serializing_if = "is_pos_inf")]
    pub p_gen_max_kw: f64,
    #[serde(default = "neg_inf", skip_serializing_if = "is_neg_inf")]
    pub q_gen_min_kvar: f64,
    #[serde(default = "pos_inf", skip_serializing_if = "is_pos_inf")]
    pub q_gen_max_kvar: f64,
    #[serde(default = "neg_inf", skip_serializing_if = "is_neg_inf")]
    pub p_load_min_kw: f64,
    #[serde(default = "pos_inf", skip_serializing_if = "is_pos_inf")]
    pub p_load_max_kw: f64,
    #[serde(default = "neg_inf", skip_serializing_if = "is_neg_inf")]
    pub q_load_min_kvar: f64,
    #[serde(default = "pos_inf", skip_serializing_if = "is_pos_inf")]
    pub q_load_max_kvar: f64,
}

fn is_neg_inf(v: &f64) -> bool {
    *v == f64::NEG_INFINITY
}

fn is_pos_inf(v: &f64) -> bool {
    *v == f64::INFINITY
}

impl NodeSpec {
    pub fn new(id: usize, kind: NodeKind, v_base_kv: f64) -> Self {
        Self {
            id,
            kind,
            v_base_kv,
            v_min_kv: None,
            v_max_kv: None,
            p_gen_min_kw: f64::NEG_INFINITY,
            p_gen_max_kw: f64::INFINITY,
            q_gen_min_kvar: f64::NEG_INFINITY,
            q_gen_max_kvar: f64::INFINITY,
            p_load_min_kw: f64::NEG_INFINITY,
            p_load_max_kw: f64::INFINITY,
            q_load_min_kvar: f64::NEG_INFINITY,
            q_load_max_kvar: f64::INFINITY,
        }
    }
}

/// One line record of the feeder file (ohms, kVA).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineSpec {
    pub from: usize,
    pub to: usize,
    pub r_ohm: f64,
    pub x_ohm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_max_kva: Option<f64>,
}

/// Feeder topology in physical units, as stored on disk (TOML, one `[[node]]`
/// table per node and one `[[line]]` table per line).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeederSpec {
    pub s_base_mva: f64,
    #[serde(rename = "node")]
    pub nodes: Vec<NodeSpec>,
    #[serde(rename = "line")]
    pub lines: Vec<LineSpec>,
}

impl FeederSpec {
    pub fn from_toml_str(s: &str) -> Result<Self, GridError> {
        toml::from_str(s).map_err(|e| GridError::Parse(e.to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String, GridError> {
        toml::to_string(self).map_err(|e| GridError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, GridError> {
        let text = std::fs::read_to_string(path).map_err(|e| GridError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), GridError> {
        std::fs::write(path, self.to_toml_string()?).map_err(|e| GridError::Io(format!("{}: {e}", path.display())))
    }
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, mut i: usize) -> usize {
        while self.0[i] != i {
            self.0[i] = self.0[self.0[i]];
            i = self.0[i];
        }
        i
    }
}

/// Validates the topology and converts it to per-unit.
pub fn build_feeder(spec: &FeederSpec) -> Result<RadialNetwork, GridError> {
    if !(spec.s_base_mva > 0.0) {
        return Err(GridError::NonPositiveBase(format!("s_base_mva = {}", spec.s_base_mva)));
    }
    let s_base_kw = spec.s_base_mva * 1000.0;

    let mut specs: Vec<&NodeSpec> = spec.nodes.iter().collect();
    specs.sort_by_key(|n| n.id);
    let mut index = HashMap::new();
    let mut slack = None;
    let mut nodes = Vec::with_capacity(specs.len());
    for (i, n) in specs.iter().enumerate() {
        if index.insert(n.id, i).is_some() {
            return Err(GridError::DuplicateNode(n.id));
        }
        if !(n.v_base_kv > 0.0) {
            return Err(GridError::NonPositiveBase(format!("v_base_kv = {} at node {}", n.v_base_kv, n.id)));
        }
        if n.kind == NodeKind::Slack {
            if let Some(s) = slack {
                return Err(GridError::MultipleSlack(s, n.id));
            }
            slack = Some(n.id);
        }
        let v_min = n.v_min_kv.unwrap_or(default_v_min() * n.v_base_kv) / n.v_base_kv;
        let v_max = n.v_max_kv.unwrap_or(default_v_max() * n.v_base_kv) / n.v_base_kv;
        let node = Node {
            id: n.id,
            kind: n.kind,
            v_base_kv: n.v_base_kv,
            v_min_sq: v_min * v_min,
            v_max_sq: v_max * v_max,
            p_gen: Interval::new(n.p_gen_min_kw, n.p_gen_max_kw).scaled(1.0 / s_base_kw),
            q_gen: Interval::new(n.q_gen_min_kvar, n.q_gen_max_kvar).scaled(1.0 / s_base_kw),
            p_load: Interval::new(n.p_load_min_kw, n.p_load_max_kw).scaled(1.0 / s_base_kw),
            q_load: Interval::new(n.q_load_min_kvar, n.q_load_max_kvar).scaled(1.0 / s_base_kw),
        };
        let ordered = [node.p_gen, node.q_gen, node.p_load, node.q_load]
            .iter()
            .all(|iv| iv.lo <= iv.hi);
        if !(node.v_min_sq > 0.0 && node.v_min_sq <= node.v_max_sq && ordered) {
            return Err(GridError::Invalid(format!("bounds at node {}", n.id)));
        }
        nodes.push(node);
    }
    let slack = slack.ok_or(GridError::NoSlack)?;

    // structural checks on the undirected graph
    let mut uf = UnionFind((0..nodes.len()).collect());
    let mut adj: HashMap<usize, Vec<(usize, usize)>> = HashMap::new();
    for (k, l) in spec.lines.iter().enumerate() {
        let a = *index.get(&l.from).ok_or(GridError::UnknownNode(l.from))?;
        let b = *index.get(&l.to).ok_or(GridError::UnknownNode(l.to))?;
        let (ra, rb) = (uf.find(a), uf.find(b));
        if ra == rb {
            return Err(GridError::CycleDetected { from: l.from, to: l.to });
        }
        uf.0[ra] = rb;
        if nodes[a].v_base_kv != nodes[b].v_base_kv {
            return Err(GridError::VoltageLevelMismatch { from: l.from, to: l.to });
        }
        if !(l.r_ohm >= 0.0) || !l.x_ohm.is_finite() || l.s_max_kva.is_some_and(|s| !(s > 0.0)) {
            return Err(GridError::Invalid(format!("line {}-{}", l.from, l.to)));
        }
        adj.entry(l.from).or_default().push((l.to, k));
        adj.entry(l.to).or_default().push((l.from, k));
    }

    // orient breadth-first from the slack, visiting children in id order
    let mut depth = BTreeMap::new();
    let mut children: HashMap<usize, Vec<usize>> = HashMap::new();
    let mut parent_line = HashMap::new();
    let mut lines = Vec::with_capacity(spec.lines.len());
    depth.insert(slack, 0);
    let mut queue = VecDeque::from([slack]);
    while let Some(u) = queue.pop_front() {
        let mut nbrs: Vec<(usize, usize)> = adj
            .get(&u)
            .map(|v| v.iter().copied().filter(|(w, _)| !depth.contains_key(w)).collect())
            .unwrap_or_default();
        nbrs.sort();
        for (w, k) in nbrs {
            let l = &spec.lines[k];
            let z_base = impedance_base(nodes[index[&w]].v_base_kv, spec.s_base_mva)?;
            depth.insert(w, depth[&u] + 1);
            children.entry(u).or_default().push(w);
            parent_line.insert(w, lines.len());
            lines.push(Line {
                from: u,
                to: w,
                r: l.r_ohm / z_base,
                x: l.x_ohm / z_base,
                s_max: l.s_max_kva.map_or(f64::INFINITY, |s| s / s_base_kw),
            });
            queue.push_back(w);
        }
    }
    if let Some(n) = nodes.iter().find(|n| !depth.contains_key(&n.id)) {
        return Err(GridError::Disconnected(n.id));
    }

    Ok(RadialNetwork {
        nodes,
        lines,
        s_base_mva: spec.s_base_mva,
        slack,
        index,
        children,
        parent_line,
        depth,
    })
}
