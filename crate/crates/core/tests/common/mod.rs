#![allow(dead_code)]

use rand::Rng;
use serde_json::Value;
use unitflow_core::fuzz::random_domain_action;
use unitflow_core::model::Params;
use unitflow_core::{ActionId, SessionId, UnitId, Workspace};

pub fn params(v: Value) -> Params {
    match v {
        Value::Object(m) => m.into_iter().collect(),
        other => panic!("params must be an object, got {other}"),
    }
}

/// A workspace with one session and one empty unit.
pub fn single_unit() -> (Workspace, SessionId, UnitId) {
    let mut ws = Workspace::new("test");
    let s = ws.new_session("sessionA", 0).unwrap();
    let u = ws.create_unit(s, "main", 1, "test").unwrap();
    (ws, s, u)
}

pub fn append(ws: &mut Workspace, unit: UnitId, ty: &str, p: Value) -> ActionId {
    let ts = ws.records.len() as i64 + 10;
    ws.append_action(unit, ty, params(p), ts, "test").unwrap().0
}

/// Appends `n` random reference-domain actions, some of them undone or
/// skipped afterwards. Returns the domain records appended.
pub fn random_history(ws: &mut Workspace, unit: UnitId, n: usize, rng: &mut impl Rng) -> Vec<ActionId> {
    let mut ids = Vec::new();
    for _ in 0..n {
        let (ty, p) = random_domain_action(rng);
        let ts = ws.records.len() as i64 + 10;
        ids.push(ws.append_action(unit, &ty, p, ts, "test").unwrap().0);
        match rng.gen_range(0..8) {
            0 => {
                let _ = ws.undo(unit, ts + 1, "test");
            }
            1 => {
                let pick = ids[rng.gen_range(0..ids.len())];
                let _ = ws.skip(unit, pick, ts + 1, "test");
            }
            _ => {}
        }
    }
    ids
}

/// Sum of squared distances to each group's mean.
pub fn partition_cost(points: &[Vec<f64>], groups: &[Vec<usize>]) -> f64 {
    let mut total = 0.0;
    for g in groups.iter().filter(|g| !g.is_empty()) {
        let dim = points[g[0]].len();
        let mut mean = vec![0.0; dim];
        for &i in g {
            for (m, x) in mean.iter_mut().zip(&points[i]) {
                *m += x;
            }
        }
        for m in &mut mean {
            *m /= g.len() as f64;
        }
        for &i in g {
            total += points[i].iter().zip(&mean).map(|(x, m)| (x - m) * (x - m)).sum::<f64>();
        }
    }
    total
}

/// Minimum cost over every partition of the points into exactly `k`
/// non-empty groups (restricted-growth enumeration).
pub fn exhaustive_min_cost(points: &[Vec<f64>], k: usize) -> f64 {
    fn go(points: &[Vec<f64>], k: usize, labels: &mut Vec<usize>, used: usize, best: &mut f64) {
        let n = points.len();
        if labels.len() == n {
            if used == k {
                let mut groups = vec![Vec::new(); k];
                for (i, &l) in labels.iter().enumerate() {
                    groups[l].push(i);
                }
                *best = best.min(partition_cost(points, &groups));
            }
            return;
        }
        if k - used > n - labels.len() {
            return;
        }
        for l in 0..=used.min(k - 1) {
            labels.push(l);
            go(points, k, labels, used.max(l + 1), best);
            labels.pop();
        }
    }
    let mut best = f64::INFINITY;
    go(points, k, &mut Vec::new(), 0, &mut best);
    best
}
