//! Randomized edit scripts and the checks run against them.
//!
//! Each script drives a fresh workspace through up to `max_len` commands
//! chosen from the current state (appends, every edit operation, branches,
//! saves, fixes). After every committed step the checker's verdict for
//! each unit of the working session is compared with strict re-execution
//! by the domain interpreter, and every offered fix is applied to a copy
//! to confirm it repairs the unit.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::checker::ValidationStatus;
use crate::command::{apply, Command};
use crate::ids::{ActionId, SessionId, UnitId};
use crate::model::{Params, Workspace};
use crate::state::first_interpreter_failure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FuzzConfig {
    pub seed: u64,
    pub scripts: usize,
    pub max_len: usize,
    pub max_units: usize,
    pub max_branch_depth: usize,
}

impl Default for FuzzConfig {
    fn default() -> Self {
        FuzzConfig {
            seed: 7,
            scripts: 10_000,
            max_len: 50,
            max_units: 4,
            max_branch_depth: 2,
        }
    }
}

/// A checker verdict that differs from re-execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Disagreement {
    pub script: usize,
    pub step: usize,
    pub unit: UnitId,
    pub checker: Option<usize>,
    pub oracle: Option<usize>,
    pub commands: Vec<Command>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixFailure {
    pub script: usize,
    pub step: usize,
    pub unit: UnitId,
    pub fix: crate::checker::SuggestedFix,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FuzzStats {
    pub scripts: usize,
    pub steps: usize,
    pub committed: usize,
    pub rejected: usize,
    pub verdicts: usize,
    pub non_ok_verdicts: usize,
    pub disagreements: Vec<Disagreement>,
    /// Units whose stored status differs from a fresh check.
    pub stale_flags: usize,
    pub fixes_checked: usize,
    pub fix_failures: Vec<FixFailure>,
    pub unresolvable_records: usize,
    pub saved_versions: usize,
    pub recover_mismatches: usize,
    pub ops: BTreeMap<String, usize>,
}

impl FuzzStats {
    pub fn clean(&self) -> bool {
        self.disagreements.is_empty()
            && self.fix_failures.is_empty()
            && self.stale_flags == 0
            && self.unresolvable_records == 0
            && self.recover_mismatches == 0
    }
}

const SCHEMES: &[&str] = &["viridis", "magma", "red", "blue", "greys"];

fn params(v: serde_json::Value) -> Params {
    serde_json::from_value(v).expect("object literal")
}

/// A random, schema-valid reference-domain action.
pub fn random_domain_action(rng: &mut impl Rng) -> (String, Params) {
    let (ty, p) = match rng.gen_range(0..10) {
        0..=2 => ("load-data", json!({"dataset": "cars"})),
        3 => (
            "select-algorithm",
            json!({"name": if rng.gen_bool(0.7) { "kmeans" } else { "threshold" }}),
        ),
        4 => ("set-parameter", json!({"name": "k", "value": rng.gen_range(1..=4)})),
        5 => ("run-clustering", json!({})),
        6 => ("set-color-scheme", json!({"scheme": SCHEMES[rng.gen_range(0..SCHEMES.len())]})),
        7 => (
            "filter-rows",
            json!({"column": rng.gen_range(0..4), "op": if rng.gen_bool(0.5) { "gt" } else { "lt" }, "value": rng.gen_range(0..30)}),
        ),
        8 => {
            let rs = rng.gen_range(0..20);
            let cs = rng.gen_range(0..3);
            (
                "select-region",
                json!({"row_start": rs, "row_end": rs + rng.gen_range(2..12), "col_start": cs, "col_end": cs + rng.gen_range(1..4)}),
            )
        }
        _ => ("set-widget", json!({"name": "zoom", "value": rng.gen_range(1..4)})),
    };
    (ty.to_string(), params(p))
}

fn unit_depth(ws: &Workspace, mut u: UnitId) -> usize {
    let mut d = 0;
    while let Some(p) = ws.units[&u].branch_parent {
        d += 1;
        u = p.unit;
    }
    d
}

fn live_units(ws: &Workspace, s: SessionId) -> Vec<UnitId> {
    ws.sessions[&s]
        .units
        .iter()
        .copied()
        .filter(|u| !ws.units[u].deleted)
        .collect()
}

fn pick<T: Copy>(rng: &mut impl Rng, items: &[T]) -> Option<T> {
    items.choose(rng).copied()
}

/// Chooses the next command for `session` given the workspace's state.
pub fn next_command(rng: &mut impl Rng, ws: &Workspace, session: SessionId, config: &FuzzConfig) -> Command {
    let units = live_units(ws, session);
    let Some(unit) = pick(rng, &units) else {
        return Command::CreateUnit {
            session,
            name: "unit".into(),
        };
    };
    let history = ws.effective_history(unit).unwrap_or_default();
    let local = &ws.units[&unit].local_actions;
    let any_record = |rng: &mut ChaCha8Rng| pick(rng, &history).unwrap_or(ActionId(0));
    let mut local_rng = ChaCha8Rng::seed_from_u64(rng.gen());
    let r = &mut local_rng;
    match rng.gen_range(0..100) {
        0..=33 => {
            let (action_type, params) = random_domain_action(r);
            Command::Append {
                unit,
                action_type,
                params,
            }
        }
        34..=39 => {
            if units.len() < config.max_units && unit_depth(ws, unit) < config.max_branch_depth {
                Command::BranchUnit {
                    unit,
                    name: "branch".into(),
                }
            } else if units.len() < config.max_units {
                Command::CreateUnit {
                    session,
                    name: "unit".into(),
                }
            } else {
                Command::Undo { unit }
            }
        }
        40..=47 => Command::Undo { unit },
        48..=53 => Command::Redo { unit, record: None },
        54..=59 => Command::SelectiveUndo {
            unit,
            record: any_record(r),
        },
        60..=64 => Command::Skip {
            unit,
            record: any_record(r),
        },
        65..=69 => Command::Unskip {
            unit,
            record: any_record(r),
        },
        70..=73 => Command::DeleteAction {
            unit,
            record: pick(r, local).unwrap_or(ActionId(0)),
            confirmed: r.gen_bool(0.7),
        },
        74..=77 => {
            let (action_type, params) = random_domain_action(r);
            let lo = ws.shared_local_len(unit);
            Command::InsertAction {
                unit,
                at: r.gen_range(lo..=local.len().max(lo)),
                action_type,
                params,
            }
        }
        78..=85 => {
            let dst = pick(r, &units).unwrap_or(unit);
            let len = history.len();
            let start = r.gen_range(0..=len);
            let end = r.gen_range(start..=len);
            let dst_local = ws.units[&dst].local_actions.len();
            let lo = ws.shared_local_len(dst);
            let at = r.gen_range(lo..=dst_local.max(lo));
            match r.gen_range(0..4) {
                0 | 1 => Command::CopyRange {
                    src: unit,
                    start,
                    end,
                    dst,
                    at,
                },
                2 => Command::MoveRange {
                    src: unit,
                    start,
                    end,
                    dst,
                    at,
                    confirmed: r.gen_bool(0.7),
                },
                _ => Command::CutRange {
                    src: unit,
                    start,
                    end,
                    confirmed: r.gen_bool(0.7),
                },
            }
        }
        86..=87 => {
            let lo = ws.shared_local_len(unit);
            Command::Paste {
                dst: unit,
                at: r.gen_range(lo..=local.len().max(lo)),
            }
        }
        88..=90 => {
            let edits: Vec<ActionId> = local.iter().copied().filter(|r| ws.records[r].edit.is_some()).collect();
            Command::RevertEdit {
                unit,
                edit: pick(r, &edits).unwrap_or(ActionId(0)),
            }
        }
        91..=95 => match ws.validate(unit) {
            Ok(report) => match report.suggestion.or(report.undo_last_edit) {
                Some(fix) => Command::ApplyFix { unit, fix },
                None => Command::Undo { unit },
            },
            Err(_) => Command::Undo { unit },
        },
        96..=97 => Command::SaveSession { session },
        _ => Command::BranchSession {
            session,
            base_name: format!("b{}", ws.ids.session + 1),
        },
    }
}

/// Checks every unit of `session` against the oracle and its fixes.
fn check_session(
    ws: &Workspace,
    session: SessionId,
    script: usize,
    step: usize,
    commands: &[Command],
    stats: &mut FuzzStats,
) {
    for unit in live_units(ws, session) {
        let report = ws.validate(unit).expect("live unit validates");
        let records = ws.effective_records(unit).expect("live unit");
        let oracle = first_interpreter_failure(&ws.registry, &records);
        stats.verdicts += 1;
        let checker_index = (report.status != ValidationStatus::Ok).then(|| report.failures[0].index);
        let oracle_index = oracle.map(|f| f.index);
        if checker_index != oracle_index {
            stats.disagreements.push(Disagreement {
                script,
                step,
                unit,
                checker: checker_index,
                oracle: oracle_index,
                commands: commands.to_vec(),
            });
        }
        if ws.units[&unit].status != report.status {
            stats.stale_flags += 1;
        }
        if report.status == ValidationStatus::Ok {
            continue;
        }
        stats.non_ok_verdicts += 1;
        for fix in [report.suggestion, report.undo_last_edit].into_iter().flatten() {
            stats.fixes_checked += 1;
            let mut trial = ws.clone();
            let reason = match trial.apply_fix(unit, fix, 0, "fuzz") {
                Ok(_) => match trial.validate(unit) {
                    Ok(r) if r.status == ValidationStatus::Ok => continue,
                    Ok(r) => format!("re-validated to {:?}", r.status),
                    Err(e) => e.to_string(),
                },
                Err(e) => e.to_string(),
            };
            stats.fix_failures.push(FixFailure {
                script,
                step,
                unit,
                fix,
                reason,
            });
        }
    }
}

/// Runs one script; returns the final workspace.
pub fn run_script(index: usize, config: &FuzzConfig, stats: &mut FuzzStats) -> Workspace {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let mut ws = Workspace::new("fuzz");
    let mut session = ws.new_session("main", 0).expect("fresh workspace");
    ws.create_unit(session, "unit", 0, "fuzz").expect("fresh session");
    let len = rng.gen_range(1..=config.max_len);
    let mut commands = Vec::with_capacity(len);
    let mut saved: BTreeMap<SessionId, BTreeMap<UnitId, String>> = BTreeMap::new();
    for step in 0..len {
        let command = next_command(&mut rng, &ws, session, config);
        *stats.ops.entry(command.name().to_string()).or_default() += 1;
        stats.steps += 1;
        let before = ws.clone();
        let ts = step as i64 + 1;
        let hashes_before = match &command {
            Command::SaveSession { session } | Command::BranchSession { session, .. } => Some(
                live_units(&ws, *session)
                    .into_iter()
                    .map(|u| (u, ws.state_hash(u).expect("live unit")))
                    .collect::<BTreeMap<_, _>>(),
            ),
            _ => None,
        };
        match apply(&mut ws, &command, ts, "fuzz") {
            Ok(outcome) => {
                stats.committed += 1;
                commands.push(command.clone());
                if let (Some(new), Some(hashes)) = (outcome.session, hashes_before) {
                    saved.entry(session).or_insert(hashes);
                    session = new;
                }
            }
            Err(_) => {
                stats.rejected += 1;
                ws = before;
            }
        }
        check_session(&ws, session, index, step, &commands, stats);
    }

    for id in 1..=ws.ids.action {
        if ws.record(ActionId(id)).is_err() {
            stats.unresolvable_records += 1;
        }
    }
    for (s, hashes) in &saved {
        stats.saved_versions += 1;
        match ws.recover_session(*s) {
            Ok(snap) => {
                let live: BTreeMap<UnitId, String> = snap
                    .hashes
                    .iter()
                    .filter(|(u, _)| hashes.contains_key(u))
                    .map(|(u, h)| (*u, h.clone()))
                    .collect();
                if &live != hashes {
                    stats.recover_mismatches += 1;
                }
            }
            Err(_) => stats.recover_mismatches += 1,
        }
    }
    stats.scripts += 1;
    ws
}

pub fn run_fuzz(config: &FuzzConfig) -> FuzzStats {
    let mut stats = FuzzStats::default();
    for i in 0..config.scripts {
        run_script(i, config, &mut stats);
    }
    stats
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_run_is_clean_and_repeatable() {
        let config = FuzzConfig {
            scripts: 60,
            ..FuzzConfig::default()
        };
        let a = run_fuzz(&config);
        assert!(a.clean(), "{:#?}", (&a.disagreements.first(), &a.fix_failures.first(), a.stale_flags));
        assert_eq!(a, run_fuzz(&config));
        assert!(a.non_ok_verdicts > 0);
    }
}
