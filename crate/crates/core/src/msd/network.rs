use std::collections::{HashMap, HashSet, VecDeque};
use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Node {
    pub mass: f64,
    pub x0: f64,
    pub y0: f64,
    pub pinned: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    /// Stiffness, N/m.
    pub k: f64,
    /// Damping of the parallel dashpot, N s/m.
    pub c: f64,
    /// Rest length, m.
    pub l0: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkMeta {
    pub seed: Option<u64>,
    pub generator_config: Option<GeneratorConfig>,
}

/// Uniform gravitational field. The potential of a mass `m` at `(x, y)` is
/// `m g (x sin(theta) + y cos(theta))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GravityField {
    pub g: f64,
    pub theta: f64,
}

impl GravityField {
    pub fn new(g: f64, theta: f64) -> Result<Self> {
        if !(g >= 0.0) || !g.is_finite() || !theta.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "gravity must have finite g >= 0 and finite theta (g={g}, theta={theta})"
            )));
        }
        Ok(Self {
            g,
            theta: theta.rem_euclid(TAU),
        })
    }

    pub fn zero() -> Self {
        Self { g: 0.0, theta: 0.0 }
    }

    /// Per-unit-mass potential gradient `(g sin(theta), g cos(theta))`.
    pub fn unit_gradient(&self) -> (f64, f64) {
        (self.g * self.theta.sin(), self.g * self.theta.cos())
    }
}

/// Planar mass-spring-damper network. Pinned nodes are fixed at their rest
/// position and carry no degrees of freedom: the configuration vector `q`
/// holds `x, y` of each free node, in node order.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "NetworkFile", into = "NetworkFile")]
pub struct MassSpringNetwork {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    meta: NetworkMeta,
    dof_of: Vec<Option<usize>>,
    free_nodes: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkFile {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    meta: NetworkMeta,
}

impl TryFrom<NetworkFile> for MassSpringNetwork {
    type Error = Error;
    fn try_from(f: NetworkFile) -> Result<Self> {
        MassSpringNetwork::new(f.nodes, f.edges, f.meta)
    }
}

impl From<MassSpringNetwork> for NetworkFile {
    fn from(n: MassSpringNetwork) -> Self {
        NetworkFile {
            nodes: n.nodes,
            edges: n.edges,
            meta: n.meta,
        }
    }
}

impl PartialEq for MassSpringNetwork {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes && self.edges == other.edges && self.meta == other.meta
    }
}

impl MassSpringNetwork {
    pub fn new(nodes: Vec<Node>, edges: Vec<Edge>, meta: NetworkMeta) -> Result<Self> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if nodes.is_empty() {
            return bad("network has no nodes".into());
        }
        for (idx, n) in nodes.iter().enumerate() {
            if !(n.mass > 0.0) || !n.mass.is_finite() || !n.x0.is_finite() || !n.y0.is_finite() {
                return bad(format!("node {idx}: mass must be positive and coordinates finite"));
            }
        }
        let mut seen = HashSet::new();
        for (idx, e) in edges.iter().enumerate() {
            if e.i >= nodes.len() || e.j >= nodes.len() {
                return Err(Error::IndexOutOfRange {
                    index: e.i.max(e.j),
                    count: nodes.len(),
                });
            }
            if e.i == e.j {
                return bad(format!("edge {idx} connects node {} to itself", e.i));
            }
            if !(e.k > 0.0 && e.c >= 0.0 && e.l0 > 0.0) || !(e.k + e.c + e.l0).is_finite() {
                return bad(format!("edge {idx}: need k > 0, c >= 0, l0 > 0"));
            }
            if !seen.insert((e.i.min(e.j), e.i.max(e.j))) {
                return bad(format!("edge {idx} duplicates ({}, {})", e.i, e.j));
            }
        }
        if !is_connected(nodes.len(), &edges) {
            return bad("network graph is not connected".into());
        }
        let mut dof_of = Vec::with_capacity(nodes.len());
        let mut free_nodes = Vec::new();
        for (idx, n) in nodes.iter().enumerate() {
            if n.pinned {
                dof_of.push(None);
            } else {
                dof_of.push(Some(2 * free_nodes.len()));
                free_nodes.push(idx);
            }
        }
        if free_nodes.is_empty() {
            return bad("every node is pinned".into());
        }
        Ok(Self {
            nodes,
            edges,
            meta,
            dof_of,
            free_nodes,
        })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn meta(&self) -> &NetworkMeta {
        &self.meta
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Number of configuration degrees of freedom `n`.
    pub fn dof(&self) -> usize {
        2 * self.free_nodes.len()
    }

    /// Index of the `x` coordinate of `node` in `q`, or `None` if pinned.
    pub fn dof_of(&self, node: usize) -> Option<usize> {
        self.dof_of.get(node).copied().flatten()
    }

    pub fn free_nodes(&self) -> &[usize] {
        &self.free_nodes
    }

    /// Rest geometry of the free nodes as a configuration vector.
    pub fn rest_configuration(&self) -> Vec<f64> {
        self.free_nodes
            .iter()
            .flat_map(|&i| [self.nodes[i].x0, self.nodes[i].y0])
            .collect()
    }

    /// Position of `node` under configuration `q`.
    #[inline]
    pub fn position(&self, q: &[f64], node: usize) -> (f64, f64) {
        match self.dof_of[node] {
            Some(d) => (q[d], q[d + 1]),
            None => (self.nodes[node].x0, self.nodes[node].y0),
        }
    }

    pub(crate) fn check_dims(&self, context: &'static str, v: &[f64]) -> Result<()> {
        if v.len() != self.dof() {
            return Err(Error::dims(context, self.dof(), v.len()));
        }
        Ok(())
    }
}

fn is_connected(n: usize, edges: &[Edge]) -> bool {
    let mut adj = vec![Vec::new(); n];
    for e in edges {
        adj[e.i].push(e.j);
        adj[e.j].push(e.i);
    }
    let mut visited = vec![false; n];
    let mut queue = VecDeque::from([0]);
    visited[0] = true;
    let mut count = 1;
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if !visited[v] {
                visited[v] = true;
                count += 1;
                queue.push_back(v);
            }
        }
    }
    count == n
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Interval {
    pub min: f64,
    pub max: f64,
}

impl Interval {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    fn validate(&self, name: &str, allow_zero: bool) -> Result<()> {
        let lower_ok = if allow_zero { self.min >= 0.0 } else { self.min > 0.0 };
        if !lower_ok || !(self.min <= self.max) || !self.max.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "{name} range [{}, {}] is empty or has an invalid lower bound",
                self.min, self.max
            )));
        }
        Ok(())
    }

    pub(crate) fn sample<R: rand::Rng>(&self, rng: &mut R) -> f64 {
        if self.min == self.max {
            self.min
        } else {
            rng.random_range(self.min..=self.max)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub n_base_cells: usize,
    pub lateral_attach_probability: f64,
    /// Side length of every cell, m.
    pub cell_size: f64,
    pub mass_range: Interval,
    pub stiffness_range: Interval,
    pub damping_range: Interval,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_base_cells: 5,
            lateral_attach_probability: 0.5,
            cell_size: 1.0,
            mass_range: Interval::new(0.05, 0.2),
            stiffness_range: Interval::new(50.0, 150.0),
            damping_range: Interval::new(0.5, 2.0),
        }
    }
}

impl GeneratorConfig {
    /// A 19-node, 32-DOF body used for the desk-scale experiments.
    pub fn desk_scale() -> Self {
        Self {
            n_base_cells: 6,
            ..Self::default()
        }
    }

    /// Roughly 200 masses.
    pub fn large_scale(seed: u64) -> Self {
        Self {
            seed,
            n_base_cells: 52,
            lateral_attach_probability: 0.9,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_base_cells == 0 {
            return Err(Error::InvalidConfig("n_base_cells must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.lateral_attach_probability) {
            return Err(Error::InvalidConfig(
                "lateral_attach_probability must lie in [0, 1]".into(),
            ));
        }
        if !(self.cell_size > 0.0) || !self.cell_size.is_finite() {
            return Err(Error::InvalidConfig("cell_size must be positive".into()));
        }
        self.mass_range.validate("mass", false)?;
        self.stiffness_range.validate("stiffness", false)?;
        self.damping_range.validate("damping", true)
    }
}

/// Grid corner `(column, row)`; rows grow downwards.
type Corner = (i64, i64);

#[derive(Clone, Copy, Debug)]
enum CellKind {
    Square,
    /// Triangle spanning three corners of its grid square.
    Triangle([Corner; 3]),
}

struct CellBuilder {
    ids: HashMap<Corner, usize>,
    corners: Vec<Corner>,
    edges: Vec<(usize, usize)>,
    edge_set: HashSet<(usize, usize)>,
}

impl CellBuilder {
    fn new() -> Self {
        Self {
            ids: HashMap::new(),
            corners: Vec::new(),
            edges: Vec::new(),
            edge_set: HashSet::new(),
        }
    }

    fn node(&mut self, corner: Corner) -> usize {
        let next = self.corners.len();
        *self.ids.entry(corner).or_insert_with(|| {
            self.corners.push(corner);
            next
        })
    }

    fn edge(&mut self, a: Corner, b: Corner) {
        let (a, b) = (self.node(a), self.node(b));
        if self.edge_set.insert((a.min(b), a.max(b))) {
            self.edges.push((a, b));
        }
    }

    fn add(&mut self, col: i64, row: i64, kind: CellKind) {
        let tl = (col, row);
        let tr = (col + 1, row);
        let bl = (col, row + 1);
        let br = (col + 1, row + 1);
        match kind {
            CellKind::Square => {
                for c in [tl, tr, br, bl] {
                    self.node(c);
                }
                self.edge(tl, tr);
                self.edge(tr, br);
                self.edge(br, bl);
                self.edge(bl, tl);
                if (col + row).rem_euclid(2) == 0 {
                    self.edge(tl, br);
                } else {
                    self.edge(tr, bl);
                }
            }
            CellKind::Triangle([a, b, c]) => {
                for v in [a, b, c] {
                    self.node(v);
                }
                self.edge(a, b);
                self.edge(b, c);
                self.edge(c, a);
            }
        }
    }
}

/// Builds a hanging soft body: a vertical chain of alternating square and
/// triangular cells (first cell square), with lateral cells attached to
/// either side of each chain cell with the configured probability. Cells
/// sharing grid corners share nodes. Every node on the top row is pinned.
pub fn generate_network(cfg: &GeneratorConfig) -> Result<MassSpringNetwork> {
    use rand::{Rng, SeedableRng};
    cfg.validate()?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut builder = CellBuilder::new();

    for r in 0..cfg.n_base_cells as i64 {
        let kind = if r % 2 == 0 {
            CellKind::Square
        } else {
            // top side shared with the cell above; alternate the bottom corner
            let bottom = if r % 4 == 1 { (1, r + 1) } else { (0, r + 1) };
            CellKind::Triangle([(0, r), (1, r), bottom])
        };
        builder.add(0, r, kind);

        for side in [-1i64, 1] {
            if !rng.random_bool(cfg.lateral_attach_probability) {
                continue;
            }
            let col = if side < 0 { -1 } else { 1 };
            // the vertical side shared with the chain cell
            let inner = if side < 0 { 0 } else { 1 };
            let outer = if side < 0 { -1 } else { 2 };
            let kind = if rng.random_bool(0.5) {
                CellKind::Square
            } else {
                let outer_row = if rng.random_bool(0.5) { r } else { r + 1 };
                CellKind::Triangle([(inner, r), (inner, r + 1), (outer, outer_row)])
            };
            builder.add(col, r, kind);
        }
    }

    let s = cfg.cell_size;
    let nodes: Vec<Node> = builder
        .corners
        .iter()
        .map(|&(c, r)| Node {
            mass: cfg.mass_range.sample(&mut rng),
            x0: c as f64 * s,
            y0: -(r as f64) * s,
            pinned: r == 0,
        })
        .collect();
    let edges = builder
        .edges
        .iter()
        .map(|&(i, j)| {
            let l0 = ((nodes[i].x0 - nodes[j].x0).powi(2) + (nodes[i].y0 - nodes[j].y0).powi(2))
                .sqrt();
            Edge {
                i,
                j,
                k: cfg.stiffness_range.sample(&mut rng),
                c: cfg.damping_range.sample(&mut rng),
                l0,
            }
        })
        .collect();
    MassSpringNetwork::new(
        nodes,
        edges,
        NetworkMeta {
            seed: Some(cfg.seed),
            generator_config: Some(cfg.clone()),
        },
    )
}
