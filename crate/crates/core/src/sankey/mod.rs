//! Workflow sankey graphs at session and unit level.
//!
//! Nodes are session versions or units; links run from parent to child and
//! are split into per-category segments counting the child's newly
//! performed actions. Node color follows the dominant action category of
//! the node's full history.

mod layout;
mod svg;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use layout::{layout, LayoutError};
pub use svg::to_svg;

use crate::clock::Millis;
use crate::error::{EngineError, Result};
use crate::ids::{ActionId, NodeRef, SessionId};
use crate::model::Workspace;
use crate::registry::ActionCategory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GraphLevel {
    Session,
    Unit,
}

/// Fixed category colors, shipped with every graph.
pub fn category_color(category: ActionCategory) -> &'static str {
    match category {
        ActionCategory::Management => "#4e79a7",
        ActionCategory::Analysis => "#59a14f",
        ActionCategory::Annotation => "#f28e2b",
        ActionCategory::History => "#b07aa1",
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LegendEntry {
    pub category: ActionCategory,
    pub color: String,
}

pub fn legend() -> Vec<LegendEntry> {
    ActionCategory::ALL
        .iter()
        .map(|&category| LegendEntry {
            category,
            color: category_color(category).to_string(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SankeyNode {
    pub id: NodeRef,
    pub label: String,
    pub depth: usize,
    pub x: f64,
    pub y: f64,
    pub height: f64,
    pub dominant_category: ActionCategory,
    pub category_histogram: BTreeMap<ActionCategory, usize>,
    /// Actions newly performed at this node.
    pub delta_count: usize,
    pub starred: bool,
    pub broken: bool,
    pub bookmarked: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub glyph: Option<String>,
    pub created_at: Millis,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_action_at: Option<Millis>,
}

impl SankeyNode {
    pub fn total_count(&self) -> usize {
        self.category_histogram.values().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkSegment {
    pub category: ActionCategory,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SankeyLink {
    pub source: NodeRef,
    pub target: NodeRef,
    /// In category order; categories with no actions are left out.
    pub segments: Vec<LinkSegment>,
    pub width: f64,
}

impl SankeyLink {
    pub fn total(&self) -> usize {
        self.segments.iter().map(|s| s.count).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SankeyGraph {
    pub level: GraphLevel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub focus: Option<SessionId>,
    pub nodes: Vec<SankeyNode>,
    pub links: Vec<SankeyLink>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overview: Option<Box<SankeyGraph>>,
    pub legend: Vec<LegendEntry>,
}

impl SankeyGraph {
    pub fn node(&self, id: NodeRef) -> Option<&SankeyNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    /// Nodes whose incoming segment total differs from their delta count.
    /// Roots have no incoming link and are not checked.
    pub fn conservation_violations(&self) -> Vec<NodeRef> {
        self.nodes
            .iter()
            .filter_map(|n| {
                let incoming: Vec<&SankeyLink> = self.links.iter().filter(|l| l.target == n.id).collect();
                if incoming.is_empty() {
                    return None;
                }
                let total: usize = incoming.iter().map(|l| l.total()).sum();
                (total != n.delta_count).then_some(n.id)
            })
            .collect()
    }
}

fn histogram(ws: &Workspace, records: &[ActionId]) -> BTreeMap<ActionCategory, usize> {
    let mut counts: BTreeMap<ActionCategory, usize> = ActionCategory::ALL.iter().map(|&c| (c, 0)).collect();
    for r in records {
        *counts.entry(ws.records[r].category).or_default() += 1;
    }
    counts
}

/// Most frequent category; ties go to the earlier category.
pub fn dominant(histogram: &BTreeMap<ActionCategory, usize>) -> ActionCategory {
    let mut best = ActionCategory::Management;
    let mut best_count = 0;
    for &c in &ActionCategory::ALL {
        let n = histogram.get(&c).copied().unwrap_or(0);
        if n > best_count {
            best = c;
            best_count = n;
        }
    }
    best
}

fn segments(hist: &BTreeMap<ActionCategory, usize>) -> Vec<LinkSegment> {
    ActionCategory::ALL
        .iter()
        .filter_map(|&category| {
            let count = hist.get(&category).copied().unwrap_or(0);
            (count > 0).then_some(LinkSegment { category, count })
        })
        .collect()
}

fn make_node(
    ws: &Workspace,
    id: NodeRef,
    label: String,
    full: &[ActionId],
    delta: &[ActionId],
    created_at: Millis,
) -> SankeyNode {
    let category_histogram = histogram(ws, full);
    SankeyNode {
        id,
        label,
        depth: 0,
        x: 0.0,
        y: 0.0,
        height: 0.0,
        dominant_category: dominant(&category_histogram),
        category_histogram,
        delta_count: delta.len(),
        starred: ws.is_starred(id),
        broken: false,
        bookmarked: false,
        glyph: None,
        created_at,
        last_action_at: full.iter().map(|r| ws.records[r].timestamp).max(),
    }
}

fn session_graph(ws: &Workspace) -> Result<SankeyGraph> {
    let mut nodes = Vec::new();
    let mut links = Vec::new();
    for s in ws.sessions.values() {
        let mut full = s.actions.clone();
        for u in &s.units {
            full.extend(&ws.units[u].local_actions);
        }
        let delta = ws.session_delta(s.id)?;
        let mut node = make_node(ws, NodeRef::Session(s.id), s.display_name(), &full, &delta, s.created_at);
        node.broken = s.units.iter().any(|u| ws.units[u].broken);
        node.bookmarked = s.units.iter().any(|u| ws.units[u].bookmarked);
        nodes.push(node);
        if let Some(parent) = s.parent {
            links.push(SankeyLink {
                source: NodeRef::Session(parent),
                target: NodeRef::Session(s.id),
                segments: segments(&histogram(ws, &delta)),
                width: 0.0,
            });
        }
    }
    layout(SankeyGraph {
        level: GraphLevel::Session,
        focus: None,
        nodes,
        links,
        overview: None,
        legend: legend(),
    })
    .map_err(|e| EngineError::Integrity(e.to_string()))
}

fn unit_graph(ws: &Workspace, focus: SessionId) -> Result<SankeyGraph> {
    let session = ws.session(focus)?;
    let mut nodes = Vec::new();
    let mut links = Vec::new();
    for &u in &session.units {
        let unit = &ws.units[&u];
        let full = ws.effective_history(u)?;
        let mut node = make_node(ws, NodeRef::Unit(u), unit.name.clone(), &full, &unit.local_actions, unit.created_at);
        node.broken = unit.broken;
        node.bookmarked = unit.bookmarked;
        let records: Vec<_> = full.iter().map(|r| &ws.records[r]).collect();
        node.glyph = ws.registry.plugins().iter().find_map(|p| p.glyph(&records));
        nodes.push(node);
        if let Some(parent) = unit.branch_parent {
            links.push(SankeyLink {
                source: NodeRef::Unit(parent.unit),
                target: NodeRef::Unit(u),
                segments: segments(&histogram(ws, &unit.local_actions)),
                width: 0.0,
            });
        }
    }
    let mut graph = layout(SankeyGraph {
        level: GraphLevel::Unit,
        focus: Some(focus),
        nodes,
        links,
        overview: None,
        legend: legend(),
    })
    .map_err(|e| EngineError::Integrity(e.to_string()))?;
    graph.overview = Some(Box::new(session_graph(ws)?));
    Ok(graph)
}

/// Builds and lays out the workflow graph. Unit level needs a focus
/// session.
pub fn build_graph(ws: &Workspace, level: GraphLevel, focus: Option<SessionId>) -> Result<SankeyGraph> {
    match level {
        GraphLevel::Session => {
            if let Some(f) = focus {
                ws.session(f)?;
            }
            let mut graph = session_graph(ws)?;
            graph.focus = focus;
            Ok(graph)
        }
        GraphLevel::Unit => {
            let focus = focus
                .or_else(|| ws.sessions.keys().next_back().copied())
                .ok_or_else(|| EngineError::Integrity("workspace has no session".into()))?;
            unit_graph(ws, focus)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HighlightRole {
    Start,
    End,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Highlight {
    pub node: NodeRef,
    pub role: HighlightRole,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RangeSelection {
    pub actions: Vec<ActionId>,
    pub highlights: Vec<Highlight>,
}

/// Actions between two nodes of `graph`, with start/end roles for display.
pub fn range_selection(ws: &Workspace, graph: &SankeyGraph, start: NodeRef, end: NodeRef) -> Result<RangeSelection> {
    for node in [start, end] {
        if graph.node(node).is_none() {
            return Err(match node {
                NodeRef::Session(s) => EngineError::UnknownSession(s),
                NodeRef::Unit(u) => EngineError::UnknownUnit(u),
            });
        }
    }
    let actions = ws.actions_between(start, end)?;
    Ok(RangeSelection {
        actions,
        highlights: vec![
            Highlight {
                node: start,
                role: HighlightRole::Start,
            },
            Highlight {
                node: end,
                role: HighlightRole::End,
            },
        ],
    })
}
