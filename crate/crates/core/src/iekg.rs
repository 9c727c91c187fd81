//! Interface-embedded knowledge graph.
//!
//! Nodes are soft-control screen elements with pixel coordinates and a
//! hierarchy depth; edges are the navigation transitions an operator can
//! take between them. The graph is built once (single writer) and then
//! shared read-only.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("duplicate element id `{0}`")]
    DuplicateId(String),
    #[error("element `{id}` references missing parent `{parent}`")]
    MissingParent { id: String, parent: String },
    #[error("unknown element `{0}`")]
    UnknownElement(String),
    #[error("element `{id}` at ({x}, {y}) lies outside the {width}x{height} screen")]
    OutOfBounds {
        id: String,
        x: f64,
        y: f64,
        width: f64,
        height: f64,
    },
    #[error("element `{id}` declares layer {declared} but its parent implies {expected}")]
    LayerMismatch { id: String, declared: u32, expected: u32 },
    #[error("self-loop on `{0}`")]
    SelfLoop(String),
    #[error("no navigation route from `{from}` to `{to}`")]
    Unreachable { from: String, to: String },
    #[error("unsupported export format `{0}`")]
    UnsupportedFormat(String),
    #[error("malformed graph document: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementKind {
    Screen,
    Panel,
    Button,
    Toggle,
    ValveControl,
    Indicator,
    Lookup,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NavAction {
    Click,
    Toggle,
    Lookup,
    Navigate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coords {
    pub x: f64,
    pub y: f64,
}

impl Coords {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Coords) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterfaceElement {
    pub id: String,
    pub label: String,
    pub kind: ElementKind,
    pub x: f64,
    pub y: f64,
    /// Depth in the navigation hierarchy. When omitted on input it is
    /// derived from the parent.
    #[serde(default)]
    pub layer: Option<u32>,
    #[serde(default)]
    pub parent: Option<String>,
}

impl InterfaceElement {
    pub fn new(id: &str, label: &str, kind: ElementKind, x: f64, y: f64) -> Self {
        Self {
            id: id.to_string(),
            label: label.to_string(),
            kind,
            x,
            y,
            layer: None,
            parent: None,
        }
    }

    pub fn with_parent(mut self, parent: &str) -> Self {
        self.parent = Some(parent.to_string());
        self
    }

    pub fn coords(&self) -> Coords {
        Coords::new(self.x, self.y)
    }

    /// Layer after insertion into a graph; always set for stored elements.
    pub fn depth(&self) -> u32 {
        self.layer.unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NavigationEdge {
    pub from: String,
    pub to: String,
    pub action: NavAction,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScreenBounds {
    pub width: f64,
    pub height: f64,
}

impl Default for ScreenBounds {
    fn default() -> Self {
        Self {
            width: 1920.0,
            height: 1080.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Json,
    Dot,
}

impl std::str::FromStr for ExportFormat {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(Self::Json),
            "dot" => Ok(Self::Dot),
            other => Err(GraphError::UnsupportedFormat(other.to_string())),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct GraphDocument {
    #[serde(default)]
    elements: Vec<InterfaceElement>,
    #[serde(default)]
    edges: Vec<NavigationEdge>,
}

/// The interface graph. Element insertion order is preserved so exports are
/// stable.
#[derive(Debug, Clone, Default)]
pub struct InterfaceGraph {
    bounds: ScreenBounds,
    elements: Vec<InterfaceElement>,
    index: HashMap<String, usize>,
    edges: Vec<NavigationEdge>,
    // adjacency: element index -> sorted outgoing neighbour ids
    out: BTreeMap<String, Vec<String>>,
}

impl PartialEq for InterfaceGraph {
    fn eq(&self, other: &Self) -> bool {
        self.elements == other.elements && self.edges == other.edges
    }
}

impl InterfaceGraph {
    pub fn new() -> Self {
        Self::with_bounds(ScreenBounds::default())
    }

    pub fn with_bounds(bounds: ScreenBounds) -> Self {
        Self {
            bounds,
            ..Self::default()
        }
    }

    pub fn bounds(&self) -> ScreenBounds {
        self.bounds
    }

    pub fn add_element(&mut self, mut element: InterfaceElement) -> Result<&InterfaceElement, GraphError> {
        if self.index.contains_key(&element.id) {
            return Err(GraphError::DuplicateId(element.id));
        }
        let expected = match &element.parent {
            Some(parent) => {
                let p = self.get(parent).ok_or_else(|| GraphError::MissingParent {
                    id: element.id.clone(),
                    parent: parent.clone(),
                })?;
                p.depth() + 1
            }
            None => 0,
        };
        if let Some(declared) = element.layer {
            if declared != expected {
                return Err(GraphError::LayerMismatch {
                    id: element.id,
                    declared,
                    expected,
                });
            }
        }
        element.layer = Some(expected);
        let b = self.bounds;
        if !(0.0..=b.width).contains(&element.x) || !(0.0..=b.height).contains(&element.y) {
            return Err(GraphError::OutOfBounds {
                id: element.id,
                x: element.x,
                y: element.y,
                width: b.width,
                height: b.height,
            });
        }
        let idx = self.elements.len();
        self.index.insert(element.id.clone(), idx);
        self.elements.push(element);
        Ok(&self.elements[idx])
    }

    pub fn add_edge(&mut self, from: &str, to: &str, action: NavAction) -> Result<(), GraphError> {
        if from == to {
            return Err(GraphError::SelfLoop(from.to_string()));
        }
        for id in [from, to] {
            if !self.index.contains_key(id) {
                return Err(GraphError::UnknownElement(id.to_string()));
            }
        }
        let edge = NavigationEdge {
            from: from.to_string(),
            to: to.to_string(),
            action,
        };
        if self.edges.contains(&edge) {
            return Ok(());
        }
        let succ = self.out.entry(edge.from.clone()).or_default();
        if let Err(pos) = succ.binary_search(&edge.to) {
            succ.insert(pos, edge.to.clone());
        }
        self.edges.push(edge);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&InterfaceElement> {
        self.index.get(id).map(|&i| &self.elements[i])
    }

    pub fn elements(&self) -> &[InterfaceElement] {
        &self.elements
    }

    pub fn edges(&self) -> &[NavigationEdge] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn has_edge(&self, from: &str, to: &str) -> bool {
        self.out
            .get(from)
            .is_some_and(|succ| succ.binary_search(&to.to_string()).is_ok())
    }

    pub fn edge_action(&self, from: &str, to: &str) -> Option<NavAction> {
        self.edges
            .iter()
            .find(|e| e.from == from && e.to == to)
            .map(|e| e.action)
    }

    /// Shortest (fewest hops) directed route from `from` to `to`, both
    /// endpoints included. Neighbours are expanded in id order so the route
    /// is deterministic when several shortest routes exist.
    pub fn resolve_path(&self, from: &str, to: &str) -> Result<Vec<String>, GraphError> {
        for id in [from, to] {
            if !self.index.contains_key(id) {
                return Err(GraphError::UnknownElement(id.to_string()));
            }
        }
        if from == to {
            return Ok(vec![from.to_string()]);
        }
        let mut prev: HashMap<&str, &str> = HashMap::new();
        let mut queue = VecDeque::from([from]);
        prev.insert(from, from);
        while let Some(node) = queue.pop_front() {
            let Some(succ) = self.out.get(node) else {
                continue;
            };
            for next in succ {
                if prev.contains_key(next.as_str()) {
                    continue;
                }
                prev.insert(next, node);
                if next == to {
                    let mut path = vec![to.to_string()];
                    let mut cur = to;
                    while cur != from {
                        cur = prev[cur];
                        path.push(cur.to_string());
                    }
                    path.reverse();
                    return Ok(path);
                }
                queue.push_back(next);
            }
        }
        Err(GraphError::Unreachable {
            from: from.to_string(),
            to: to.to_string(),
        })
    }

    /// Hit test: nearest element within `tolerance_px`. Ties go to the deeper
    /// layer, then to the lexicographically smaller id.
    pub fn element_at(&self, at: Coords, tolerance_px: f64) -> Option<&str> {
        let tolerance = tolerance_px.max(0.0);
        self.elements
            .iter()
            .map(|e| (e.coords().distance(&at), e))
            .filter(|(d, _)| *d <= tolerance)
            .min_by(|(da, a), (db, b)| {
                da.total_cmp(db)
                    .then_with(|| b.depth().cmp(&a.depth()))
                    .then_with(|| a.id.cmp(&b.id))
            })
            .map(|(_, e)| e.id.as_str())
    }

    /// Number of parent hops from `id` up to its root.
    pub fn root_distance(&self, id: &str) -> Option<u32> {
        let mut cur = self.get(id)?;
        let mut hops = 0;
        while let Some(parent) = &cur.parent {
            cur = self.get(parent)?;
            hops += 1;
            if hops > self.elements.len() as u32 {
                return None;
            }
        }
        Some(hops)
    }

    pub fn max_layer(&self) -> u32 {
        self.elements.iter().map(|e| e.depth()).max().unwrap_or(0)
    }

    pub fn export(&self, format: ExportFormat) -> Vec<u8> {
        match format {
            ExportFormat::Json => self.to_json().into_bytes(),
            ExportFormat::Dot => self.to_dot().into_bytes(),
        }
    }

    pub fn to_json(&self) -> String {
        let doc = GraphDocument {
            elements: self.elements.clone(),
            edges: self.edges.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("graph serializes")
    }

    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph iekg {\n");
        for e in &self.elements {
            let _ = writeln!(
                out,
                "  \"{}\" [label=\"{} ({}, {})\", layer={}];",
                escape_dot(&e.id),
                escape_dot(&e.label),
                e.x,
                e.y,
                e.depth()
            );
        }
        for edge in &self.edges {
            let _ = writeln!(
                out,
                "  \"{}\" -> \"{}\" [label=\"{}\"];",
                escape_dot(&edge.from),
                escape_dot(&edge.to),
                serde_json::to_value(edge.action)
                    .ok()
                    .and_then(|v| v.as_str().map(str::to_string))
                    .unwrap_or_default()
            );
        }
        out.push_str("}\n");
        out
    }

    pub fn from_json(text: &str) -> Result<Self, GraphError> {
        Self::from_json_with_bounds(text, ScreenBounds::default())
    }

    /// Elements may appear in any order in the document; parents are
    /// inserted before their children.
    pub fn from_json_with_bounds(text: &str, bounds: ScreenBounds) -> Result<Self, GraphError> {
        let doc: GraphDocument = serde_json::from_str(text).map_err(|e| GraphError::Malformed(e.to_string()))?;
        let mut graph = Self::with_bounds(bounds);
        let mut pending = doc.elements;
        while !pending.is_empty() {
            let before = pending.len();
            let mut rest = Vec::new();
            for el in pending {
                let ready = match &el.parent {
                    Some(p) => graph.index.contains_key(p),
                    None => true,
                };
                if ready {
                    graph.add_element(el)?;
                } else {
                    rest.push(el);
                }
            }
            if rest.len() == before {
                // Either a parent is absent or parent links form a cycle.
                let el = rest.swap_remove(0);
                return Err(GraphError::MissingParent {
                    parent: el.parent.clone().unwrap_or_default(),
                    id: el.id,
                });
            }
            pending = rest;
        }
        for edge in doc.edges {
            graph.add_edge(&edge.from, &edge.to, edge.action)?;
        }
        Ok(graph)
    }
}

fn escape_dot(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lookup_graph() -> InterfaceGraph {
        let mut g = InterfaceGraph::new();
        g.add_element(InterfaceElement::new(
            "screen_lookup",
            "Screen Lookup",
            ElementKind::Lookup,
            1390.0,
            87.0,
        ))
        .unwrap();
        g.add_element(
            InterfaceElement::new("reactor", "Reactor", ElementKind::Screen, 1393.0, 126.0)
                .with_parent("screen_lookup"),
        )
        .unwrap();
        g.add_element(
            InterfaceElement::new(
                "conventional_island",
                "Conventional Island",
                ElementKind::Screen,
                1341.0,
                237.0,
            )
            .with_parent("reactor"),
        )
        .unwrap();
        g.add_edge("screen_lookup", "reactor", NavAction::Navigate).unwrap();
        g.add_edge("reactor", "conventional_island", NavAction::Navigate)
            .unwrap();
        g
    }

    #[test]
    fn root_and_child_layers() {
        let g = lookup_graph();
        assert_eq!(g.get("screen_lookup").unwrap().depth(), 0);
        assert_eq!(g.get("reactor").unwrap().depth(), 1);
        assert_eq!(g.get("conventional_island").unwrap().depth(), 2);
    }

    #[test]
    fn missing_parent_and_duplicate() {
        let mut g = lookup_graph();
        let err = g
            .add_element(InterfaceElement::new("x", "X", ElementKind::Button, 1.0, 1.0).with_parent("nope"))
            .unwrap_err();
        assert!(matches!(err, GraphError::MissingParent { .. }));
        let err = g
            .add_element(InterfaceElement::new(
                "reactor",
                "Reactor",
                ElementKind::Screen,
                1.0,
                1.0,
            ))
            .unwrap_err();
        assert_eq!(err, GraphError::DuplicateId("reactor".into()));
    }

    #[test]
    fn bounds_are_enforced() {
        let mut g = InterfaceGraph::new();
        let err = g
            .add_element(InterfaceElement::new("far", "Far", ElementKind::Button, 1921.0, 10.0))
            .unwrap_err();
        assert!(matches!(err, GraphError::OutOfBounds { .. }));
        let mut wide = InterfaceGraph::with_bounds(ScreenBounds {
            width: 3840.0,
            height: 2160.0,
        });
        wide.add_element(InterfaceElement::new("far", "Far", ElementKind::Button, 1921.0, 10.0))
            .unwrap();
    }

    #[test]
    fn declared_layer_must_match_parent() {
        let mut g = lookup_graph();
        let mut el = InterfaceElement::new("deep", "Deep", ElementKind::Button, 5.0, 5.0).with_parent("reactor");
        el.layer = Some(5);
        assert!(matches!(
            g.add_element(el).unwrap_err(),
            GraphError::LayerMismatch { .. }
        ));
    }

    #[test]
    fn edges_reject_self_loops_and_unknown_endpoints() {
        let mut g = lookup_graph();
        assert_eq!(
            g.add_edge("reactor", "reactor", NavAction::Click),
            Err(GraphError::SelfLoop("reactor".into()))
        );
        assert!(g.add_edge("reactor", "ghost", NavAction::Click).is_err());
    }

    #[test]
    fn resolve_identity_and_chain() {
        let g = lookup_graph();
        assert_eq!(g.resolve_path("reactor", "reactor").unwrap(), vec!["reactor"]);
        assert_eq!(
            g.resolve_path("screen_lookup", "conventional_island").unwrap(),
            vec!["screen_lookup", "reactor", "conventional_island"]
        );
    }

    #[test]
    fn resolve_unreachable() {
        let mut g = lookup_graph();
        g.add_element(InterfaceElement::new(
            "island",
            "Island",
            ElementKind::Panel,
            10.0,
            10.0,
        ))
        .unwrap();
        assert!(matches!(
            g.resolve_path("screen_lookup", "island"),
            Err(GraphError::Unreachable { .. })
        ));
        // edges are directed as authored
        assert!(g.resolve_path("conventional_island", "screen_lookup").is_err());
    }

    #[test]
    fn hit_testing() {
        let g = lookup_graph();
        assert_eq!(g.element_at(Coords::new(1390.0, 87.0), 5.0), Some("screen_lookup"));
        assert_eq!(g.element_at(Coords::new(10.0, 1000.0), 5.0), None);
    }

    #[test]
    fn hit_test_tie_prefers_deeper_layer() {
        // (100,100) root and (110,100) child; query at (105,100) is 5px from both.
        let mut g = InterfaceGraph::new();
        g.add_element(InterfaceElement::new(
            "b_root",
            "Root",
            ElementKind::Screen,
            100.0,
            100.0,
        ))
        .unwrap();
        g.add_element(
            InterfaceElement::new("a_child", "Child", ElementKind::Button, 110.0, 100.0).with_parent("b_root"),
        )
        .unwrap();
        assert_eq!(g.element_at(Coords::new(105.0, 100.0), 6.0), Some("a_child"));
        // same layer, same distance: smaller id wins
        g.add_element(InterfaceElement::new("a_twin", "Twin", ElementKind::Button, 105.0, 95.0).with_parent("b_root"))
            .unwrap();
        g.add_element(InterfaceElement::new("c_twin", "Twin", ElementKind::Button, 105.0, 105.0).with_parent("b_root"))
            .unwrap();
        assert_eq!(g.element_at(Coords::new(105.0, 100.0), 6.0), Some("a_child"));
    }

    #[test]
    fn empty_graph_exports() {
        let g = InterfaceGraph::new();
        let json = String::from_utf8(g.export(ExportFormat::Json)).unwrap();
        let back = InterfaceGraph::from_json(&json).unwrap();
        assert!(back.is_empty());
        assert_eq!(g.to_dot(), "digraph iekg {\n}\n");
        assert!("svg".parse::<ExportFormat>().is_err());
    }

    #[test]
    fn dot_has_one_node_line_per_element() {
        let g = lookup_graph();
        let dot = g.to_dot();
        let node_lines = dot
            .lines()
            .filter(|l| l.contains("[label=") && !l.contains("->"))
            .count();
        assert_eq!(node_lines, 3);
        assert_eq!(dot.lines().filter(|l| l.contains("->")).count(), 2);
    }

    #[test]
    fn json_accepts_children_before_parents() {
        let text = r#"{"elements":[
            {"id":"c","label":"C","kind":"button","x":1,"y":1,"parent":"p"},
            {"id":"p","label":"P","kind":"screen","x":2,"y":2}
        ],"edges":[{"from":"p","to":"c","action":"click"}]}"#;
        let g = InterfaceGraph::from_json(text).unwrap();
        assert_eq!(g.get("c").unwrap().depth(), 1);
    }

    #[test]
    fn json_rejects_parent_cycles() {
        let text = r#"{"elements":[
            {"id":"a","label":"A","kind":"button","x":1,"y":1,"parent":"b"},
            {"id":"b","label":"B","kind":"button","x":2,"y":2,"parent":"a"}
        ],"edges":[]}"#;
        assert!(matches!(
            InterfaceGraph::from_json(text),
            Err(GraphError::MissingParent { .. })
        ));
    }
}
