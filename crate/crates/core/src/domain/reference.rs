//! Reference domain: tabular exploration with region selection, row
//! filters, clustering, parameters and color schemes.

use serde_json::Value;

use super::{
    kmeans, DomainContext, DomainPlugin, MissingPrecondition, SchemaError, TabularDataset,
    BUNDLED_CARS,
};
use crate::model::{ActionRecord, Params};
use crate::registry::{ActionCategory, ActionType, Capability};
use crate::state::{Clusters, DatasetHandle, DerivedResult, FilterOp, Region, RowFilter, UnitState};

pub const DATA_LOADED: &str = "data-loaded";
pub const REGION_SELECTED: &str = "region-selected";
pub const ALGORITHM_SELECTED: &str = "algorithm-selected";

pub const LOAD_DATA: &str = "load-data";
pub const SELECT_REGION: &str = "select-region";
pub const SELECT_ALGORITHM: &str = "select-algorithm";
pub const SET_PARAMETER: &str = "set-parameter";
pub const RUN_CLUSTERING: &str = "run-clustering";
pub const SET_COLOR_SCHEME: &str = "set-color-scheme";
pub const FILTER_ROWS: &str = "filter-rows";
pub const SET_WIDGET: &str = "set-widget";

pub const ALGORITHMS: &[&str] = &["kmeans", "threshold"];
pub const COLOR_SCHEMES: &[&str] = &["viridis", "magma", "red", "blue", "greys"];
pub const DEFAULT_COLOR_SCHEME: &str = "viridis";

const DEFAULT_K: usize = 2;
const DEFAULT_SEED: u64 = 42;
const MAX_K: i64 = 16;

#[derive(Debug, Clone, Default)]
pub struct ReferenceDomain;

impl ReferenceDomain {
    pub fn new() -> Self {
        ReferenceDomain
    }

    fn resolve<'a>(name: &str, ctx: DomainContext<'a>) -> Option<std::borrow::Cow<'a, TabularDataset>> {
        if let Some(ds) = ctx.datasets.get(name) {
            return Some(std::borrow::Cow::Borrowed(ds));
        }
        (name == BUNDLED_CARS).then(|| std::borrow::Cow::Owned(TabularDataset::bundled_cars()))
    }
}

fn only_keys(ty: &str, params: &Params, allowed: &[&str]) -> Result<(), SchemaError> {
    match params.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(SchemaError::new(ty, format!("unexpected parameter `{k}`"))),
        None => Ok(()),
    }
}

fn required<'p>(ty: &str, params: &'p Params, key: &str) -> Result<&'p Value, SchemaError> {
    params
        .get(key)
        .ok_or_else(|| SchemaError::new(ty, format!("missing parameter `{key}`")))
}

fn required_str<'p>(ty: &str, params: &'p Params, key: &str) -> Result<&'p str, SchemaError> {
    required(ty, params, key)?
        .as_str()
        .filter(|s| !s.is_empty())
        .ok_or_else(|| SchemaError::new(ty, format!("`{key}` must be a non-empty string")))
}

fn required_index(ty: &str, params: &Params, key: &str) -> Result<u64, SchemaError> {
    required(ty, params, key)?
        .as_u64()
        .ok_or_else(|| SchemaError::new(ty, format!("`{key}` must be a non-negative integer")))
}

fn is_scalar(v: &Value) -> bool {
    match v {
        Value::Bool(_) | Value::String(_) => true,
        Value::Number(n) => n.as_f64().is_some_and(f64::is_finite),
        _ => false,
    }
}

fn index_param(params: &Params, key: &str) -> usize {
    params.get(key).and_then(Value::as_u64).unwrap_or(0) as usize
}

fn filter_from(params: &Params) -> RowFilter {
    RowFilter {
        column: index_param(params, "column"),
        op: params
            .get("op")
            .and_then(Value::as_str)
            .and_then(FilterOp::parse)
            .unwrap_or(FilterOp::Gt),
        value: params.get("value").and_then(Value::as_f64).unwrap_or(0.0),
    }
}

impl DomainPlugin for ReferenceDomain {
    fn name(&self) -> &str {
        "reference"
    }

    fn capabilities(&self) -> Vec<Capability> {
        [DATA_LOADED, REGION_SELECTED, ALGORITHM_SELECTED]
            .into_iter()
            .map(Capability::new)
            .collect()
    }

    fn action_types(&self) -> Vec<ActionType> {
        use ActionCategory::*;
        vec![
            ActionType::new(LOAD_DATA, Analysis)
                .provides(&[DATA_LOADED])
                .override_fixed("dataset"),
            ActionType::new(SELECT_REGION, Analysis)
                .requires(&[DATA_LOADED])
                .provides(&[REGION_SELECTED])
                .override_fixed("region"),
            ActionType::new(SELECT_ALGORITHM, Analysis)
                .requires(&[DATA_LOADED])
                .provides(&[ALGORITHM_SELECTED])
                .override_fixed("algorithm"),
            ActionType::new(SET_PARAMETER, Analysis)
                .requires(&[ALGORITHM_SELECTED])
                .override_per_param("param", "name"),
            ActionType::new(RUN_CLUSTERING, Analysis)
                .requires(&[ALGORITHM_SELECTED])
                .override_fixed("run"),
            ActionType::new(SET_COLOR_SCHEME, Analysis)
                .requires(&[DATA_LOADED])
                .override_fixed("color"),
            ActionType::new(FILTER_ROWS, Analysis).requires(&[DATA_LOADED]),
            ActionType::new(SET_WIDGET, Management).override_per_param("widget", "name"),
        ]
    }

    fn validate_params(&self, ty: &str, params: &Params, ctx: DomainContext<'_>) -> Result<(), SchemaError> {
        match ty {
            LOAD_DATA => {
                only_keys(ty, params, &["dataset"])?;
                let name = required_str(ty, params, "dataset")?;
                if Self::resolve(name, ctx).is_none() {
                    return Err(SchemaError::new(ty, format!("unknown dataset `{name}`")));
                }
            }
            SELECT_REGION => {
                let keys = ["row_start", "row_end", "col_start", "col_end"];
                only_keys(ty, params, &keys)?;
                let [rs, re, cs, ce] = [
                    required_index(ty, params, keys[0])?,
                    required_index(ty, params, keys[1])?,
                    required_index(ty, params, keys[2])?,
                    required_index(ty, params, keys[3])?,
                ];
                if rs >= re || cs >= ce {
                    return Err(SchemaError::new(ty, "region bounds must be non-empty half-open ranges"));
                }
            }
            SELECT_ALGORITHM => {
                only_keys(ty, params, &["name"])?;
                let name = required_str(ty, params, "name")?;
                if !ALGORITHMS.contains(&name) {
                    return Err(SchemaError::new(ty, format!("unknown algorithm `{name}`")));
                }
            }
            SET_PARAMETER => {
                only_keys(ty, params, &["name", "value"])?;
                let name = required_str(ty, params, "name")?;
                let value = required(ty, params, "value")?;
                if !is_scalar(value) {
                    return Err(SchemaError::new(ty, "`value` must be a scalar"));
                }
                match name {
                    "k" if !value.as_i64().is_some_and(|k| (1..=MAX_K).contains(&k)) => {
                        return Err(SchemaError::new(ty, format!("`k` must be an integer in 1..={MAX_K}")));
                    }
                    "seed" if value.as_u64().is_none() => {
                        return Err(SchemaError::new(ty, "`seed` must be a non-negative integer"));
                    }
                    _ => {}
                }
            }
            RUN_CLUSTERING => only_keys(ty, params, &[])?,
            SET_COLOR_SCHEME => {
                only_keys(ty, params, &["scheme"])?;
                let scheme = required_str(ty, params, "scheme")?;
                if !COLOR_SCHEMES.contains(&scheme) {
                    return Err(SchemaError::new(ty, format!("unknown color scheme `{scheme}`")));
                }
            }
            FILTER_ROWS => {
                only_keys(ty, params, &["column", "op", "value"])?;
                required_index(ty, params, "column")?;
                let op = required_str(ty, params, "op")?;
                if FilterOp::parse(op).is_none() {
                    return Err(SchemaError::new(ty, format!("unknown filter op `{op}`")));
                }
                if !required(ty, params, "value")?.as_f64().is_some_and(f64::is_finite) {
                    return Err(SchemaError::new(ty, "`value` must be a finite number"));
                }
            }
            SET_WIDGET => {
                only_keys(ty, params, &["name", "value"])?;
                required_str(ty, params, "name")?;
                if !is_scalar(required(ty, params, "value")?) {
                    return Err(SchemaError::new(ty, "`value` must be a scalar"));
                }
            }
            other => return Err(SchemaError::new(other, "not a reference-domain action")),
        }
        Ok(())
    }

    fn precondition(&self, state: &UnitState, record: &ActionRecord) -> Result<(), MissingPrecondition> {
        let missing = |cap: &str| Err(MissingPrecondition(Capability::new(cap)));
        match record.action_type.as_str() {
            SELECT_REGION | SELECT_ALGORITHM | SET_COLOR_SCHEME | FILTER_ROWS if state.dataset.is_none() => {
                missing(DATA_LOADED)
            }
            SET_PARAMETER | RUN_CLUSTERING if state.algorithm.is_none() => missing(ALGORITHM_SELECTED),
            _ => Ok(()),
        }
    }

    fn apply(&self, state: &mut UnitState, record: &ActionRecord) {
        let params = &record.params;
        let text = |key: &str| params.get(key).and_then(Value::as_str).unwrap_or_default().to_string();
        match record.action_type.as_str() {
            LOAD_DATA => {
                state.dataset = Some(DatasetHandle {
                    name: text("dataset"),
                    checksum: None,
                })
            }
            SELECT_REGION => {
                state.selection = Some(Region {
                    row_start: index_param(params, "row_start"),
                    row_end: index_param(params, "row_end"),
                    col_start: index_param(params, "col_start"),
                    col_end: index_param(params, "col_end"),
                })
            }
            SELECT_ALGORITHM => state.algorithm = Some(text("name")),
            SET_PARAMETER => {
                if let Some(value) = params.get("value") {
                    state.parameters.insert(text("name"), value.clone());
                }
            }
            RUN_CLUSTERING => state.clustering_requested = true,
            SET_COLOR_SCHEME => state.color_scheme = text("scheme"),
            FILTER_ROWS => state.filters.push(filter_from(params)),
            SET_WIDGET => {
                if let Some(value) = params.get("value") {
                    state.widget_settings.insert(text("name"), value.clone());
                }
            }
            _ => {}
        }
    }

    fn finalize(&self, state: &mut UnitState, ctx: DomainContext<'_>) {
        let Some(handle) = state.dataset.as_mut() else {
            return;
        };
        let Some(data) = Self::resolve(&handle.name, ctx) else {
            state.derived_result = Some(DerivedResult::Unavailable {
                reason: format!("dataset `{}` is not available", handle.name),
            });
            return;
        };
        handle.checksum = Some(data.checksum());
        if !state.clustering_requested {
            return;
        }
        let Some(algorithm) = state.algorithm.clone() else {
            return;
        };
        state.derived_result = Some(compute(&data, state, &algorithm));
    }

    fn glyph(&self, history: &[&ActionRecord]) -> Option<String> {
        history
            .iter()
            .any(|r| r.is_active() && r.action_type == RUN_CLUSTERING)
            .then(|| "clusters".to_string())
    }
}

/// Rows inside the selected region that pass every filter, and the
/// selected columns.
pub fn visible_cells(data: &TabularDataset, state: &UnitState) -> (Vec<usize>, Vec<usize>) {
    let (rows, cols) = match &state.selection {
        Some(r) => (
            r.row_start.min(data.n_rows())..r.row_end.min(data.n_rows()),
            r.col_start.min(data.n_cols())..r.col_end.min(data.n_cols()),
        ),
        None => (0..data.n_rows(), 0..data.n_cols()),
    };
    let rows = rows
        .filter(|&i| state.filters.iter().all(|f| f.accepts(&data.rows[i])))
        .collect();
    (rows, cols.collect())
}

fn compute(data: &TabularDataset, state: &UnitState, algorithm: &str) -> DerivedResult {
    let (rows, cols) = visible_cells(data, state);
    if rows.is_empty() || cols.is_empty() {
        return DerivedResult::Unavailable {
            reason: "selection is empty".to_string(),
        };
    }
    let points: Vec<Vec<f64>> = rows
        .iter()
        .map(|&i| cols.iter().map(|&j| data.rows[i][j]).collect())
        .collect();
    let clustering = match algorithm {
        "threshold" => threshold_split(&points),
        _ => {
            let k = state
                .parameters
                .get("k")
                .and_then(Value::as_u64)
                .map_or(DEFAULT_K, |k| k as usize);
            let seed = state
                .parameters
                .get("seed")
                .and_then(Value::as_u64)
                .unwrap_or(DEFAULT_SEED);
            match kmeans(&points, k, seed) {
                Ok(c) => c,
                Err(e) => {
                    return DerivedResult::Unavailable {
                        reason: e.to_string(),
                    }
                }
            }
        }
    };
    DerivedResult::Clusters(Clusters {
        rows,
        assignments: clustering.assignments,
        centroids: clustering.centroids,
        wcss: clustering.wcss,
    })
}

/// Two groups split at the mean of per-row means.
fn threshold_split(points: &[Vec<f64>]) -> super::Clustering {
    let means: Vec<f64> = points
        .iter()
        .map(|p| p.iter().sum::<f64>() / p.len() as f64)
        .collect();
    let cut = means.iter().sum::<f64>() / means.len() as f64;
    let raw: Vec<usize> = means.iter().map(|&m| usize::from(m > cut)).collect();
    let first = raw[0];
    let assignments: Vec<usize> = raw.iter().map(|&c| usize::from(c != first)).collect();
    let k = assignments.iter().max().map_or(1, |m| m + 1);
    let dim = points[0].len();
    let mut centroids = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &c) in points.iter().zip(&assignments) {
        counts[c] += 1;
        for (s, v) in centroids[c].iter_mut().zip(p) {
            *s += v;
        }
    }
    for (c, n) in centroids.iter_mut().zip(&counts) {
        c.iter_mut().for_each(|s| *s /= *n as f64);
    }
    let wcss = points
        .iter()
        .zip(&assignments)
        .map(|(p, &c)| p.iter().zip(&centroids[c]).map(|(x, y)| (x - y) * (x - y)).sum::<f64>())
        .sum();
    super::Clustering {
        assignments,
        centroids,
        wcss,
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::ids::ActionId;
    use crate::model::ActionStatus;

    fn record(ty: &str, params: serde_json::Value) -> ActionRecord {
        ActionRecord::new(
            ActionId(1),
            ty,
            ActionCategory::Analysis,
            serde_json::from_value(params).unwrap(),
            0,
            "t",
        )
    }

    fn ctx(datasets: &BTreeMap<String, TabularDataset>) -> DomainContext<'_> {
        DomainContext { datasets }
    }

    #[test]
    fn load_sets_dataset_only() {
        let domain = ReferenceDomain::new();
        let state = domain
            .interpret(&UnitState::default(), &record(LOAD_DATA, serde_json::json!({"dataset": "cars"})))
            .unwrap();
        assert_eq!(state.dataset.as_ref().unwrap().name, "cars");
        let expected = UnitState {
            dataset: state.dataset.clone(),
            ..UnitState::default()
        };
        assert_eq!(state, expected);
    }

    #[test]
    fn algorithm_without_data_is_missing_precondition() {
        let domain = ReferenceDomain::new();
        let err = domain
            .interpret(
                &UnitState::default(),
                &record(SELECT_ALGORITHM, serde_json::json!({"name": "kmeans"})),
            )
            .unwrap_err();
        assert_eq!(err, MissingPrecondition(Capability::new(DATA_LOADED)));
    }

    #[test]
    fn schema_checks() {
        let domain = ReferenceDomain::new();
        let none = BTreeMap::new();
        let check = |ty: &str, v: serde_json::Value| {
            domain.validate_params(ty, &serde_json::from_value(v).unwrap(), ctx(&none))
        };
        assert!(check(LOAD_DATA, serde_json::json!({"dataset": "cars"})).is_ok());
        assert!(check(LOAD_DATA, serde_json::json!({"dataset": "nope"})).is_err());
        assert!(check(SET_PARAMETER, serde_json::json!({"name": "k", "value": 0})).is_err());
        assert!(check(SET_PARAMETER, serde_json::json!({"name": "k", "value": 3})).is_ok());
        assert!(check(SET_PARAMETER, serde_json::json!({"name": "metric", "value": "l2"})).is_ok());
        assert!(check(SELECT_REGION, serde_json::json!({"row_start": 2, "row_end": 2, "col_start": 0, "col_end": 1})).is_err());
        assert!(check(FILTER_ROWS, serde_json::json!({"column": 0, "op": "gt", "value": 20})).is_ok());
        assert!(check(FILTER_ROWS, serde_json::json!({"column": 0, "op": "ne", "value": 20})).is_err());
        assert!(check(RUN_CLUSTERING, serde_json::json!({"extra": 1})).is_err());
        assert!(check("undo", serde_json::json!({})).is_err());
    }

    fn run_to_state(records: &[ActionRecord]) -> UnitState {
        let domain = ReferenceDomain::new();
        let none = BTreeMap::new();
        let mut state = UnitState::default();
        for r in records {
            state = domain.interpret(&state, r).unwrap();
        }
        domain.finalize(&mut state, ctx(&none));
        state
    }

    #[test]
    fn region_and_filter_commute() {
        let load = record(LOAD_DATA, serde_json::json!({"dataset": "cars"}));
        let algo = record(SELECT_ALGORITHM, serde_json::json!({"name": "kmeans"}));
        let run = record(RUN_CLUSTERING, serde_json::json!({}));
        let region = record(
            SELECT_REGION,
            serde_json::json!({"row_start": 0, "row_end": 16, "col_start": 0, "col_end": 4}),
        );
        let filter = record(FILTER_ROWS, serde_json::json!({"column": 1, "op": "ge", "value": 6}));
        let a = run_to_state(&[load.clone(), region.clone(), filter.clone(), algo.clone(), run.clone()]);
        let b = run_to_state(&[load, filter, region, algo, run]);
        assert_eq!(a.derived_result, b.derived_result);
        let Some(DerivedResult::Clusters(c)) = &a.derived_result else {
            panic!("expected clusters");
        };
        // rows 0..16 of the table with cyl >= 6
        assert_eq!(c.rows, vec![0, 1, 3, 4, 5, 6, 9, 10, 11, 12, 13, 14, 15]);
    }

    #[test]
    fn glyph_marks_clustering_units() {
        let domain = ReferenceDomain::new();
        let mut run = record(RUN_CLUSTERING, serde_json::json!({}));
        assert_eq!(domain.glyph(&[&run]).as_deref(), Some("clusters"));
        run.status = ActionStatus::Undone;
        assert_eq!(domain.glyph(&[&run]), None);
    }
}
