//! Layered layout: longest-path columns, barycenter ordering, and parents
//! centered on their children.

use std::collections::BTreeMap;

use super::SankeyGraph;
use crate::ids::NodeRef;

pub const COLUMN_GAP: f64 = 160.0;
pub const NODE_GAP: f64 = 24.0;
pub const MARGIN: f64 = 40.0;
pub const MIN_HEIGHT: f64 = 12.0;
pub const HEIGHT_PER_ACTION: f64 = 4.0;
pub const WIDTH_PER_ACTION: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LayoutError {
    #[error("workflow graph has a cycle through {0}")]
    Cycle(NodeRef),
    #[error("link refers to unknown node {0}")]
    DanglingLink(NodeRef),
}

/// Assigns depth, x, y, height and link widths. Output depends only on the
/// graph content.
pub fn layout(mut graph: SankeyGraph) -> Result<SankeyGraph, LayoutError> {
    let index: BTreeMap<NodeRef, usize> = graph.nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect();
    let n = graph.nodes.len();
    let mut parents = vec![Vec::new(); n];
    let mut children = vec![Vec::new(); n];
    for link in &graph.links {
        let s = *index.get(&link.source).ok_or(LayoutError::DanglingLink(link.source))?;
        let t = *index.get(&link.target).ok_or(LayoutError::DanglingLink(link.target))?;
        parents[t].push(s);
        children[s].push(t);
    }

    // Longest-path depth by Kahn's algorithm; leftovers mean a cycle.
    let mut indegree: Vec<usize> = parents.iter().map(Vec::len).collect();
    let mut ready: Vec<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
    let mut depth = vec![0usize; n];
    let mut seen = 0;
    while let Some(i) = ready.pop() {
        seen += 1;
        for &c in &children[i] {
            depth[c] = depth[c].max(depth[i] + 1);
            indegree[c] -= 1;
            if indegree[c] == 0 {
                ready.push(c);
            }
        }
    }
    if seen < n {
        let culprit = (0..n).find(|&i| indegree[i] > 0).expect("some node left");
        return Err(LayoutError::Cycle(graph.nodes[culprit].id));
    }

    let max_depth = depth.iter().copied().max().unwrap_or(0);
    let mut columns: Vec<Vec<usize>> = vec![Vec::new(); if n == 0 { 0 } else { max_depth + 1 }];
    let mut by_id: Vec<usize> = (0..n).collect();
    by_id.sort_by_key(|&i| graph.nodes[i].id);
    for i in by_id {
        columns[depth[i]].push(i);
    }

    let mut position = vec![0.0f64; n];
    let record = |columns: &Vec<Vec<usize>>, position: &mut Vec<f64>| {
        for col in columns {
            for (k, &i) in col.iter().enumerate() {
                position[i] = k as f64;
            }
        }
    };
    record(&columns, &mut position);

    // Down sweep: order by mean parent position, ties by id.
    for d in 1..columns.len() {
        let mut keyed: Vec<(f64, NodeRef, usize)> = columns[d]
            .iter()
            .map(|&i| {
                let ps = &parents[i];
                let key = ps.iter().map(|&p| position[p]).sum::<f64>() / ps.len().max(1) as f64;
                (key, graph.nodes[i].id, i)
            })
            .collect();
        keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        columns[d] = keyed.into_iter().map(|(_, _, i)| i).collect();
        record(&columns, &mut position);
    }

    // Up sweep: nodes with children are re-sorted among their own slots by
    // mean child position; childless nodes stay where they are.
    for d in (0..columns.len().saturating_sub(1)).rev() {
        let slots: Vec<usize> = (0..columns[d].len())
            .filter(|&k| !children[columns[d][k]].is_empty())
            .collect();
        let mut movers: Vec<(f64, NodeRef, usize)> = slots
            .iter()
            .map(|&k| {
                let i = columns[d][k];
                let cs = &children[i];
                let key = cs.iter().map(|&c| position[c]).sum::<f64>() / cs.len() as f64;
                (key, graph.nodes[i].id, i)
            })
            .collect();
        movers.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for (slot, (_, _, i)) in slots.into_iter().zip(movers) {
            columns[d][slot] = i;
        }
        record(&columns, &mut position);
    }

    for node in graph.nodes.iter_mut() {
        node.height = MIN_HEIGHT.max(node.total_count() as f64 * HEIGHT_PER_ACTION);
    }

    // Vertical placement from the deepest column up, centering parents on
    // their children where that does not overlap the node above.
    let mut top = vec![0.0f64; n];
    for d in (0..columns.len()).rev() {
        let mut cursor = f64::NEG_INFINITY;
        for &i in &columns[d] {
            let h = graph.nodes[i].height;
            let desired = if children[i].is_empty() {
                cursor
            } else {
                let centre = children[i]
                    .iter()
                    .map(|&c| top[c] + graph.nodes[c].height / 2.0)
                    .sum::<f64>()
                    / children[i].len() as f64;
                centre - h / 2.0
            };
            let floor = if cursor.is_finite() { cursor } else { 0.0 };
            let t = if desired.is_finite() { desired.max(floor) } else { floor };
            top[i] = t;
            cursor = t + h + NODE_GAP;
        }
    }
    let min_top = top.iter().copied().fold(f64::INFINITY, f64::min);
    let shift = if min_top.is_finite() { MARGIN - min_top } else { 0.0 };

    for (i, node) in graph.nodes.iter_mut().enumerate() {
        node.depth = depth[i];
        node.x = MARGIN + depth[i] as f64 * COLUMN_GAP;
        node.y = top[i] + shift;
    }
    for link in graph.links.iter_mut() {
        link.width = link.total() as f64 * WIDTH_PER_ACTION;
    }
    Ok(graph)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::UnitId;
    use crate::registry::ActionCategory;
    use crate::sankey::{legend, GraphLevel, LinkSegment, SankeyLink, SankeyNode};

    fn node(id: u64, actions: usize) -> SankeyNode {
        SankeyNode {
            id: NodeRef::Unit(UnitId(id)),
            label: format!("u{id}"),
            depth: 0,
            x: 0.0,
            y: 0.0,
            height: 0.0,
            dominant_category: ActionCategory::Analysis,
            category_histogram: [(ActionCategory::Analysis, actions)].into_iter().collect(),
            delta_count: actions,
            starred: false,
            broken: false,
            bookmarked: false,
            glyph: None,
            created_at: 0,
            last_action_at: None,
        }
    }

    fn link(s: u64, t: u64) -> SankeyLink {
        SankeyLink {
            source: NodeRef::Unit(UnitId(s)),
            target: NodeRef::Unit(UnitId(t)),
            segments: vec![LinkSegment {
                category: ActionCategory::Analysis,
                count: 1,
            }],
            width: 0.0,
        }
    }

    fn graph(nodes: Vec<SankeyNode>, links: Vec<SankeyLink>) -> SankeyGraph {
        SankeyGraph {
            level: GraphLevel::Unit,
            focus: None,
            nodes,
            links,
            overview: None,
            legend: legend(),
        }
    }

    fn centre(n: &SankeyNode) -> f64 {
        n.y + n.height / 2.0
    }

    #[test]
    fn chain_is_one_band() {
        let g = layout(graph(vec![node(1, 3), node(2, 3), node(3, 3)], vec![link(1, 2), link(2, 3)])).unwrap();
        let depths: Vec<_> = g.nodes.iter().map(|n| n.depth).collect();
        assert_eq!(depths, vec![0, 1, 2]);
        assert!(g.nodes.iter().all(|n| centre(n) == centre(&g.nodes[0])));
    }

    #[test]
    fn parent_centred_on_two_children() {
        let g = layout(graph(vec![node(1, 2), node(2, 5), node(3, 1)], vec![link(1, 2), link(1, 3)])).unwrap();
        let (p, a, b) = (&g.nodes[0], &g.nodes[1], &g.nodes[2]);
        assert!(a.y + a.height <= b.y, "children stacked in id order");
        assert_eq!(a.x, b.x);
        assert!((centre(p) - (centre(a) + centre(b)) / 2.0).abs() < 1e-9);
    }

    #[test]
    fn layout_is_repeatable() {
        let g = graph(
            vec![node(1, 2), node(2, 5), node(3, 1), node(4, 7)],
            vec![link(1, 2), link(1, 3), link(3, 4)],
        );
        assert_eq!(layout(g.clone()).unwrap(), layout(g).unwrap());
    }

    #[test]
    fn cycles_are_rejected() {
        let g = graph(vec![node(1, 1), node(2, 1)], vec![link(1, 2), link(2, 1)]);
        assert!(matches!(layout(g), Err(LayoutError::Cycle(_))));
    }

    #[test]
    fn new_leaf_keeps_sibling_order() {
        let base = vec![node(1, 1), node(2, 1), node(3, 1), node(4, 1)];
        let links = vec![link(1, 2), link(1, 3), link(2, 4)];
        let before = layout(graph(base.clone(), links.clone())).unwrap();
        let mut nodes = base;
        nodes.push(node(5, 1));
        let mut more = links;
        more.push(link(1, 5));
        let after = layout(graph(nodes, more)).unwrap();
        let order = |g: &SankeyGraph| g.nodes[1].y < g.nodes[2].y;
        assert_eq!(order(&before), order(&after));
        assert!(after.nodes[2].y < after.nodes[4].y);
    }
}
