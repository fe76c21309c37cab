use std::collections::VecDeque;
use std::time::{SystemTime, UNIX_EPOCH};

/// Wall-clock milliseconds since the Unix epoch.
pub type Millis = i64;

/// Source of timestamps for recorded actions.
pub trait Clock: Send {
    fn now(&mut self) -> Millis;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&mut self) -> Millis {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as Millis)
            .unwrap_or(0)
    }
}

/// Deterministic clock advancing by a fixed step on every read.
#[derive(Debug, Clone, Copy)]
pub struct StepClock {
    next: Millis,
    step: Millis,
}

impl StepClock {
    pub fn new(start: Millis, step: Millis) -> Self {
        Self { next: start, step }
    }
}

impl Default for StepClock {
    fn default() -> Self {
        Self::new(1_700_000_000_000, 1_000)
    }
}

impl Clock for StepClock {
    fn now(&mut self) -> Millis {
        let t = self.next;
        self.next += self.step;
        t
    }
}

/// Replays recorded timestamps in order; falls back to the last one when
/// exhausted.
#[derive(Debug, Clone, Default)]
pub struct ReplayClock {
    queue: VecDeque<Millis>,
    last: Millis,
}

impl ReplayClock {
    pub fn new(stamps: impl IntoIterator<Item = Millis>) -> Self {
        Self {
            queue: stamps.into_iter().collect(),
            last: 0,
        }
    }
}

impl Clock for ReplayClock {
    fn now(&mut self) -> Millis {
        if let Some(t) = self.queue.pop_front() {
            self.last = t;
        }
        self.last
    }
}
