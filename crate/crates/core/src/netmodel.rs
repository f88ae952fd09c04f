//! Network data model: nodes, pipelines, planning problems.
//!
//! Networks are described by a JSON document with a fixed `units` block
//! (flows in Mm3/day, squared pressures in bar^2, costs in EUR/Mm3, carbon
//! intensity in kg/m3, diameters in mm). The loader is strict: unknown keys,
//! unknown units, or dangling endpoint references are errors, not warnings.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

/// A network node: junction, demand off-take, and/or supply point.
///
/// A pure junction is a node with `supply_max == 0` and `demand == 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Node {
    pub id: String,
    /// Gas off-take at this node, Mm3/day. Non-negative.
    pub demand: f64,
    /// Marginal supply cost, EUR/Mm3.
    #[serde(default)]
    pub supply_cost: f64,
    /// Supply bounds, Mm3/day.
    #[serde(default)]
    pub supply_min: f64,
    #[serde(default)]
    pub supply_max: f64,
    /// Squared-pressure box, bar^2.
    pub pressure_min: f64,
    pub pressure_max: f64,
    /// Carbon intensity of gas supplied here, kg CO2 per m3.
    #[serde(default)]
    pub carbon_intensity: f64,
}

/// A pipeline between two nodes.
///
/// `friction` is the Weymouth coefficient omega in `phi*|phi| = omega*(pi_i - pi_j)`;
/// `friction_per_diameter` is the diameter-normalized coefficient omega_hat with
/// `omega = omega_hat * diameter`, used when the diameter becomes a decision
/// variable in expansion planning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pipeline {
    pub id: String,
    pub from: String,
    pub to: String,
    /// Weymouth coefficient omega (>0), (Mm3/day)^2 per bar^2.
    pub friction: f64,
    /// Diameter-normalized coefficient omega_hat (>0), omega per mm.
    pub friction_per_diameter: f64,
    /// Current diameter, mm.
    pub diameter: f64,
    /// Diameter box for expansion planning; defaults to the current diameter.
    #[serde(default)]
    pub diameter_min: Option<f64>,
    #[serde(default)]
    pub diameter_max: Option<f64>,
    /// Signed flow box, Mm3/day. Must straddle zero: flow_min < 0 < flow_max.
    pub flow_min: f64,
    pub flow_max: f64,
    /// Marginal expansion cost lambda, EUR per mm of diameter.
    #[serde(default)]
    pub expansion_cost: f64,
}

impl Pipeline {
    /// Lower diameter bound (defaults to the installed diameter).
    pub fn d_min(&self) -> f64 {
        self.diameter_min.unwrap_or(self.diameter)
    }

    /// Upper diameter bound (defaults to the installed diameter).
    pub fn d_max(&self) -> f64 {
        self.diameter_max.unwrap_or(self.diameter)
    }
}

/// Planning mode: operate the network as-is, or also size pipeline diameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Operational,
    Expansion,
}

/// A validated gas network: nodes, pipelines, and resolved endpoint indices.
#[derive(Debug, Clone, PartialEq)]
pub struct GasNetwork {
    pub nodes: Vec<Node>,
    pub pipelines: Vec<Pipeline>,
    /// Per pipeline: (index of `from` node, index of `to` node).
    endpoints: Vec<(usize, usize)>,
}

/// A planning problem: a network plus objective/constraint context.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanningProblem {
    pub network: GasNetwork,
    pub mode: Mode,
    /// Emission cap in kT/day (eps: carbon intensity [kg/m3] x flow [Mm3/day]
    /// = 1e6 kg/day = 1 kT/day). `None` means uncapped.
    pub emission_cap: Option<f64>,
    /// Node id whose pressure anchors Newton restoration.
    pub reference_node: String,
}

#[derive(Debug, Error)]
pub enum NetModelError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("failed to parse network document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported unit for {field}: expected {expected:?}, got {got:?}")]
    BadUnit {
        field: &'static str,
        expected: String,
        got: String,
    },
    #[error("network is invalid: {0}")]
    Invalid(String),
    #[error("pipeline {pipe} references unknown node {node}")]
    UnknownEndpoint { pipe: String, node: String },
    #[error("duplicate node id {0}")]
    DuplicateNode(String),
    #[error("duplicate pipeline id {0}")]
    DuplicatePipeline(String),
}

/// Fixed units block. Every field must match exactly; the loader refuses to
/// convert between unit systems.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Units {
    pub flow: String,
    pub pressure_squared: String,
    pub cost: String,
    pub emission: String,
    pub diameter: String,
}

impl Units {
    pub fn canonical() -> Self {
        Units {
            flow: "Mm3/day".into(),
            pressure_squared: "bar2".into(),
            cost: "EUR/Mm3".into(),
            emission: "kg/m3".into(),
            diameter: "mm".into(),
        }
    }

    fn check(&self) -> Result<(), NetModelError> {
        let want = Units::canonical();
        let pairs: [(&'static str, &str, &str); 5] = [
            ("units.flow", &self.flow, &want.flow),
            ("units.pressure_squared", &self.pressure_squared, &want.pressure_squared),
            ("units.cost", &self.cost, &want.cost),
            ("units.emission", &self.emission, &want.emission),
            ("units.diameter", &self.diameter, &want.diameter),
        ];
        for (field, got, expected) in pairs {
            if got != expected {
                return Err(NetModelError::BadUnit {
                    field,
                    expected: expected.to_string(),
                    got: got.to_string(),
                });
            }
        }
        Ok(())
    }
}

/// Emission cap as stored on disk: a positive number (kT/day) or the string
/// "inf" / null for an uncapped problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum CapDoc {
    Number(f64),
    Text(String),
    None,
}

/// On-disk document shape. Field names mirror the domain types one-to-one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkDoc {
    units: Units,
    mode: Mode,
    reference_node: String,
    emission_cap: CapDoc,
    nodes: Vec<Node>,
    pipelines: Vec<Pipeline>,
}

impl GasNetwork {
    /// Build a network from parts, resolving endpoint references.
    pub fn new(nodes: Vec<Node>, pipelines: Vec<Pipeline>) -> Result<Self, NetModelError> {
        let mut index: BTreeMap<&str, usize> = BTreeMap::new();
        for (i, n) in nodes.iter().enumerate() {
            if index.insert(n.id.as_str(), i).is_some() {
                return Err(NetModelError::DuplicateNode(n.id.clone()));
            }
        }
        let mut seen_pipes: BTreeMap<&str, ()> = BTreeMap::new();
        let mut endpoints = Vec::with_capacity(pipelines.len());
        for p in &pipelines {
            if seen_pipes.insert(p.id.as_str(), ()).is_some() {
                return Err(NetModelError::DuplicatePipeline(p.id.clone()));
            }
            let from = *index.get(p.from.as_str()).ok_or_else(|| NetModelError::UnknownEndpoint {
                pipe: p.id.clone(),
                node: p.from.clone(),
            })?;
            let to = *index.get(p.to.as_str()).ok_or_else(|| NetModelError::UnknownEndpoint {
                pipe: p.id.clone(),
                node: p.to.clone(),
            })?;
            endpoints.push((from, to));
        }
        Ok(GasNetwork { nodes, pipelines, endpoints })
    }

    /// Number of nodes n.
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Number of pipelines l.
    pub fn pipe_count(&self) -> usize {
        self.pipelines.len()
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    /// Resolved (from, to) node indices of pipeline `l`.
    pub fn endpoints(&self, l: usize) -> (usize, usize) {
        self.endpoints[l]
    }

    /// Node-pipeline incidence matrix A (n x l): +1 at the sending node of a
    /// pipe, -1 at the receiving node, 0 elsewhere. Column sums are zero.
    pub fn incidence_matrix(&self) -> DMatrix<f64> {
        let n = self.node_count();
        let l = self.pipe_count();
        let mut a = DMatrix::zeros(n, l);
        for (j, &(from, to)) in self.endpoints.iter().enumerate() {
            a[(from, j)] = 1.0;
            a[(to, j)] = -1.0;
        }
        a
    }

    pub fn total_demand(&self) -> f64 {
        self.nodes.iter().map(|n| n.demand).sum()
    }

    pub fn total_supply_capacity(&self) -> f64 {
        self.nodes.iter().map(|n| n.supply_max).sum()
    }

    /// Whether the undirected graph is connected (trivially true for n <= 1).
    pub fn is_connected(&self) -> bool {
        let n = self.node_count();
        if n <= 1 {
            return true;
        }
        let mut adj = vec![Vec::new(); n];
        for &(a, b) in &self.endpoints {
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(v) = stack.pop() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    count += 1;
                    stack.push(w);
                }
            }
        }
        count == n
    }

    /// Check every structural invariant; returns one human-readable entry per
    /// violation (empty = valid). Entries name the offending node/pipeline.
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        for n in &self.nodes {
            if n.demand < 0.0 {
                out.push(format!("node {}: demand must be non-negative", n.id));
            }
            if n.supply_min > n.supply_max {
                out.push(format!("node {}: supply_min exceeds supply_max", n.id));
            }
            if !(n.pressure_min < n.pressure_max) {
                out.push(format!("node {}: pressure_min must be strictly below pressure_max", n.id));
            }
            if n.carbon_intensity < 0.0 {
                out.push(format!("node {}: carbon_intensity must be non-negative", n.id));
            }
        }
        for p in &self.pipelines {
            if !(p.friction > 0.0) {
                out.push(format!("pipeline {}: friction must be positive", p.id));
            }
            if !(p.friction_per_diameter > 0.0) {
                out.push(format!("pipeline {}: friction_per_diameter must be positive", p.id));
            }
            if !(p.d_min() > 0.0) {
                out.push(format!("pipeline {}: diameter lower bound must be positive", p.id));
            }
            if !(p.d_min() <= p.diameter && p.diameter <= p.d_max()) {
                out.push(format!("pipeline {}: diameter must lie within its bounds", p.id));
            }
            if !(p.flow_min < 0.0 && 0.0 < p.flow_max) {
                out.push(format!("pipeline {}: flow box must straddle zero (flow_min < 0 < flow_max)", p.id));
            }
            // In a consistent data set omega == omega_hat * d for the installed diameter.
            let omega_from_dyn = p.friction_per_diameter * p.diameter;
            let scale = p.friction.abs().max(1.0);
            if (p.friction - omega_from_dyn).abs() > 1e-9 * scale {
                out.push(format!(
                    "pipeline {}: friction must equal friction_per_diameter * diameter (got {} vs {})",
                    p.id, p.friction, omega_from_dyn
                ));
            }
        }
        if !self.is_connected() {
            out.push("network: graph is not connected".to_string());
        }
        if self.total_demand() > self.total_supply_capacity() {
            out.push(format!(
                "network: total demand {} exceeds total supply capacity {} (infeasible by construction)",
                self.total_demand(),
                self.total_supply_capacity()
            ));
        }
        out
    }
}

impl PlanningProblem {
    pub fn new(
        network: GasNetwork,
        mode: Mode,
        emission_cap: Option<f64>,
        reference_node: String,
    ) -> Result<Self, NetModelError> {
        let p = PlanningProblem { network, mode, emission_cap, reference_node };
        let issues = p.validate();
        if issues.is_empty() {
            Ok(p)
        } else {
            Err(NetModelError::Invalid(issues.join("; ")))
        }
    }

    /// Problem-level validation: network invariants plus cap/reference checks.
    pub fn validate(&self) -> Vec<String> {
        let mut out = self.network.validate();
        if let Some(cap) = self.emission_cap {
            if !(cap > 0.0) {
                out.push("problem: emission_cap must be positive or unbounded".to_string());
            }
        }
        if self.network.node_index(&self.reference_node).is_none() {
            out.push(format!("problem: reference_node {} does not exist", self.reference_node));
        }
        out
    }

    /// Index of the reference node (panics if validation was skipped).
    pub fn reference_index(&self) -> usize {
        self.network
            .node_index(&self.reference_node)
            .expect("reference node validated at construction")
    }

    /// Serialize back to the on-disk document format.
    pub fn to_json(&self) -> String {
        let doc = NetworkDoc {
            units: Units::canonical(),
            mode: self.mode,
            reference_node: self.reference_node.clone(),
            emission_cap: match self.emission_cap {
                Some(v) => CapDoc::Number(v),
                None => CapDoc::Text("inf".to_string()),
            },
            nodes: self.network.nodes.clone(),
            pipelines: self.network.pipelines.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("network documents always serialize")
    }
}

/// Load and validate a planning problem from a JSON document.
pub fn load_problem(path: impl AsRef<Path>) -> Result<PlanningProblem, NetModelError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| NetModelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_problem(&text)
}

/// Parse a planning problem from JSON text (same rules as [`load_problem`]).
pub fn parse_problem(text: &str) -> Result<PlanningProblem, NetModelError> {
    let doc: NetworkDoc = serde_json::from_str(text)?;
    doc.units.check()?;
    let cap = match doc.emission_cap {
        CapDoc::Number(v) => Some(v),
        CapDoc::None => None,
        CapDoc::Text(s) => {
            if s == "inf" {
                None
            } else {
                return Err(NetModelError::Invalid(format!(
                    "emission_cap must be a number or \"inf\", got \"{s}\""
                )));
            }
        }
    };
    let network = GasNetwork::new(doc.nodes, doc.pipelines)?;
    PlanningProblem::new(network, doc.mode, cap, doc.reference_node)
}

/// Load just the network from a problem document.
pub fn load_network(path: impl AsRef<Path>) -> Result<GasNetwork, NetModelError> {
    Ok(load_problem(path)?.network)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn two_node_json() -> String {
        r#"{
            "units": {"flow":"Mm3/day","pressure_squared":"bar2","cost":"EUR/Mm3","emission":"kg/m3","diameter":"mm"},
            "mode": "operational",
            "reference_node": "s",
            "emission_cap": "inf",
            "nodes": [
                {"id":"s","demand":0.0,"supply_cost":50.0,"supply_min":0.0,"supply_max":10.0,
                 "pressure_min":900.0,"pressure_max":3600.0,"carbon_intensity":1.0},
                {"id":"d","demand":4.0,"pressure_min":900.0,"pressure_max":3600.0}
            ],
            "pipelines": [
                {"id":"p1","from":"s","to":"d","friction":1.0,"friction_per_diameter":0.002,
                 "diameter":500.0,"flow_min":-10.0,"flow_max":10.0}
            ]
        }"#
        .to_string()
    }

    #[test]
    fn two_node_document_loads() {
        let p = parse_problem(&two_node_json()).unwrap();
        assert_eq!(p.network.node_count(), 2);
        assert_eq!(p.network.pipe_count(), 1);
        assert_eq!(p.emission_cap, None);
        assert_eq!(p.reference_index(), 0);
    }

    #[test]
    fn toy7_fixture_loads() {
        let p = load_problem(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/toy7.json")).unwrap();
        assert_eq!(p.network.node_count(), 7);
        assert_eq!(p.network.pipe_count(), 8);
        assert!(p.validate().is_empty());
    }

    #[test]
    fn unknown_endpoint_is_an_error_naming_the_node() {
        let text = two_node_json().replace("\"to\":\"d\"", "\"to\":\"X\"");
        let err = parse_problem(&text).unwrap_err();
        match err {
            NetModelError::UnknownEndpoint { pipe, node } => {
                assert_eq!(pipe, "p1");
                assert_eq!(node, "X");
            }
            other => panic!("expected UnknownEndpoint, got {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = two_node_json().replace("\"mode\"", "\"extra\": 1, \"mode\"");
        assert!(matches!(parse_problem(&text), Err(NetModelError::Parse(_))));
    }

    #[test]
    fn unknown_units_are_rejected() {
        let text = two_node_json().replace("Mm3/day", "m3/h");
        match parse_problem(&text) {
            Err(NetModelError::BadUnit { field, .. }) => assert_eq!(field, "units.flow"),
            other => panic!("expected BadUnit, got {other:?}"),
        }
    }

    #[test]
    fn incidence_of_single_pipe_is_plus_minus_one() {
        let p = parse_problem(&two_node_json()).unwrap();
        let a = p.network.incidence_matrix();
        assert_eq!(a.nrows(), 2);
        assert_eq!(a.ncols(), 1);
        assert_eq!(a[(0, 0)], 1.0);
        assert_eq!(a[(1, 0)], -1.0);
    }

    #[test]
    fn incidence_of_three_node_path() {
        // a -> b -> c gives columns [[1,0],[-1,1],[0,-1]].
        let nodes = vec![
            node("a", 0.0, 10.0),
            node("b", 2.0, 0.0),
            node("c", 3.0, 0.0),
        ];
        let pipes = vec![pipe("p1", "a", "b"), pipe("p2", "b", "c")];
        let net = GasNetwork::new(nodes, pipes).unwrap();
        let a = net.incidence_matrix();
        let expected = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, -1.0, 1.0, 0.0, -1.0]);
        assert_eq!(a, expected);
        // Column sums are zero for any incidence matrix.
        for j in 0..a.ncols() {
            assert_eq!(a.column(j).sum(), 0.0);
        }
    }

    #[test]
    fn validation_flags_bad_diameter_bound() {
        let p = parse_problem(&two_node_json()).unwrap();
        let mut net = p.network;
        net.pipelines[0].diameter_min = Some(0.0);
        let issues = net.validate();
        assert!(issues.iter().any(|m| m.contains("diameter lower bound")), "{issues:?}");
    }

    #[test]
    fn validation_flags_disconnected_graph() {
        let nodes = vec![
            node("a", 0.0, 10.0),
            node("b", 2.0, 0.0),
            node("c", 0.0, 5.0),
            node("d", 3.0, 0.0),
        ];
        let pipes = vec![pipe("p1", "a", "b"), pipe("p2", "c", "d")];
        let net = GasNetwork::new(nodes, pipes).unwrap();
        let issues = net.validate();
        assert!(issues.iter().any(|m| m.contains("not connected")), "{issues:?}");
    }

    #[test]
    fn validation_flags_demand_exceeding_supply() {
        let nodes = vec![node("a", 0.0, 1.0), node("b", 5.0, 0.0)];
        let pipes = vec![pipe("p1", "a", "b")];
        let net = GasNetwork::new(nodes, pipes).unwrap();
        let issues = net.validate();
        assert!(issues.iter().any(|m| m.contains("exceeds total supply")), "{issues:?}");
    }

    #[test]
    fn round_trip_preserves_structure() {
        let p = load_problem(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/toy7.json")).unwrap();
        let text = p.to_json();
        let q = parse_problem(&text).unwrap();
        assert_eq!(p, q);
    }

    pub(crate) fn node(id: &str, demand: f64, supply_max: f64) -> Node {
        Node {
            id: id.to_string(),
            demand,
            supply_cost: 50.0,
            supply_min: 0.0,
            supply_max,
            pressure_min: 900.0,
            pressure_max: 3600.0,
            carbon_intensity: 1.0,
        }
    }

    pub(crate) fn pipe(id: &str, from: &str, to: &str) -> Pipeline {
        Pipeline {
            id: id.to_string(),
            from: from.to_string(),
            to: to.to_string(),
            friction: 1.0,
            friction_per_diameter: 0.002,
            diameter: 500.0,
            diameter_min: None,
            diameter_max: None,
            flow_min: -10.0,
            flow_max: 10.0,
            expansion_cost: 0.0,
        }
    }
}
