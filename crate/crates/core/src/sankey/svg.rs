//! Deterministic SVG rendering of a laid-out graph.

use std::fmt::Write;

use super::layout::{MARGIN, NODE_GAP};
use super::{category_color, SankeyGraph};

const NODE_WIDTH: f64 = 18.0;
const LEGEND_ROW: f64 = 18.0;

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Renders nodes as category-colored bars and links as stacked,
/// category-colored bands. Same graph, same bytes.
pub fn to_svg(graph: &SankeyGraph) -> String {
    let width = graph.nodes.iter().map(|n| n.x).fold(0.0, f64::max) + NODE_WIDTH + MARGIN + 120.0;
    let height = graph
        .nodes
        .iter()
        .map(|n| n.y + n.height)
        .fold(0.0, f64::max)
        .max(graph.legend.len() as f64 * LEGEND_ROW)
        + MARGIN
        + NODE_GAP;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.2}" height="{height:.2}" viewBox="0 0 {width:.2} {height:.2}">"#
    );

    for link in &graph.links {
        let (Some(src), Some(dst)) = (graph.node(link.source), graph.node(link.target)) else {
            continue;
        };
        let total = link.total().max(1) as f64;
        let x0 = src.x + NODE_WIDTH;
        let x1 = dst.x;
        let mid = (x0 + x1) / 2.0;
        let mut offset = 0.0;
        for seg in &link.segments {
            let band = link.width * seg.count as f64 / total;
            let y0 = src.y + src.height / 2.0 - link.width / 2.0 + offset + band / 2.0;
            let y1 = dst.y + dst.height / 2.0 - link.width / 2.0 + offset + band / 2.0;
            let _ = writeln!(
                out,
                r#"  <path class="link" data-source="{}" data-target="{}" d="M{x0:.2},{y0:.2} C{mid:.2},{y0:.2} {mid:.2},{y1:.2} {x1:.2},{y1:.2}" stroke="{}" stroke-width="{band:.2}" fill="none" stroke-opacity="0.5"/>"#,
                link.source,
                link.target,
                category_color(seg.category)
            );
            offset += band;
        }
        if link.segments.is_empty() {
            let y0 = src.y + src.height / 2.0;
            let y1 = dst.y + dst.height / 2.0;
            let _ = writeln!(
                out,
                r##"  <path class="link" data-source="{}" data-target="{}" d="M{x0:.2},{y0:.2} C{mid:.2},{y0:.2} {mid:.2},{y1:.2} {x1:.2},{y1:.2}" stroke="#bbbbbb" stroke-width="1.00" fill="none" stroke-dasharray="3,3"/>"##,
                link.source, link.target
            );
        }
    }

    for node in &graph.nodes {
        let _ = writeln!(
            out,
            r#"  <rect class="node" data-id="{}" x="{:.2}" y="{:.2}" width="{NODE_WIDTH:.2}" height="{:.2}" fill="{}"/>"#,
            node.id,
            node.x,
            node.y,
            node.height,
            category_color(node.dominant_category)
        );
        let mut label = escape(&node.label);
        if let Some(glyph) = &node.glyph {
            let _ = write!(label, " [{}]", escape(glyph));
        }
        let _ = writeln!(
            out,
            r#"  <text x="{:.2}" y="{:.2}" font-size="11">{label}</text>"#,
            node.x + NODE_WIDTH + 4.0,
            node.y + node.height / 2.0 + 4.0
        );
        if node.starred {
            let _ = writeln!(
                out,
                r##"  <text class="star" x="{:.2}" y="{:.2}" font-size="12" fill="#e15759">*</text>"##,
                node.x + 4.0,
                node.y - 3.0
            );
        }
        if node.broken {
            let _ = writeln!(
                out,
                r##"  <rect class="broken" x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#e15759" stroke-width="2.00"/>"##,
                node.x - 2.0,
                node.y - 2.0,
                NODE_WIDTH + 4.0,
                node.height + 4.0
            );
        }
    }

    let lx = width - 110.0;
    for (k, entry) in graph.legend.iter().enumerate() {
        let y = MARGIN / 2.0 + k as f64 * LEGEND_ROW;
        let _ = writeln!(
            out,
            r#"  <rect class="legend" x="{lx:.2}" y="{y:.2}" width="10.00" height="10.00" fill="{}"/>"#,
            entry.color
        );
        let _ = writeln!(
            out,
            r#"  <text x="{:.2}" y="{:.2}" font-size="10">{}</text>"#,
            lx + 14.0,
            y + 9.0,
            entry.category.as_str()
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Workspace;
    use crate::sankey::{build_graph, GraphLevel};

    #[test]
    fn svg_is_stable_and_escaped() {
        let mut ws = Workspace::new("t");
        let a = ws.new_session("a<b>", 0).unwrap();
        ws.save_session_version(a, 1, "t").unwrap();
        let g = build_graph(&ws, GraphLevel::Session, None).unwrap();
        let svg = to_svg(&g);
        assert_eq!(svg, to_svg(&g));
        assert!(svg.contains("a&lt;b&gt;_v0"));
        assert_eq!(svg.matches("class=\"node\"").count(), 2);
        assert_eq!(svg.matches("class=\"legend\"").count(), 4);
    }
}
