//! Policy-side API: read the specialization space, apply configurations
//! through specialize, optimize and install, explore a list of
//! configurations one measurement window each, and watch the metric for a
//! drop that calls for re-exploration.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::engine::{Counters, EngineError, Runtime};
use crate::ir::{HostState, Value};
use crate::optimizer::{default_pipeline, run_pipeline_with_diagnostics, PassPipeline};
use crate::spec::{collect_spec_points, ConfigId, SpecConfig, SpecSpace};
use crate::specializer::{specialize, CustomRegistry, SpecializeError};

/// Fraction of each window discarded as warm-up after a switch.
pub const DEFAULT_WARMUP: f64 = 0.10;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error(transparent)]
    Specialize(#[from] SpecializeError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("no configurations to explore")]
    NoConfigs,
}

/// Time source for reports: wall-clock milliseconds or logical time.
pub type Clock = Arc<dyn Fn() -> u64 + Send + Sync>;

pub fn wall_clock() -> Clock {
    let start = Instant::now();
    Arc::new(move || start.elapsed().as_millis() as u64)
}

/// One measured window.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub start: u64,
    pub len: u64,
    pub metric: f64,
    pub invocations: u64,
    pub ops: u64,
    pub guard_failures: u64,
    pub phase: String,
}

impl Window {
    /// A window carrying only a metric value.
    pub fn metric_only(metric: f64) -> Window {
        Window {
            start: 0,
            len: 1,
            metric,
            invocations: 0,
            ops: 0,
            guard_failures: 0,
            phase: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricSample {
    pub config: SpecConfig,
    pub config_id: ConfigId,
    pub window: Window,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    InstrumentStart,
    ExploreStart,
    ConfigSwitch,
    Settle,
    ReExploreTrigger,
}

impl EventKind {
    pub fn name(self) -> &'static str {
        match self {
            EventKind::InstrumentStart => "instrument-start",
            EventKind::ExploreStart => "explore-start",
            EventKind::ConfigSwitch => "config-switch",
            EventKind::Settle => "settle",
            EventKind::ReExploreTrigger => "re-explore-trigger",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimelineEvent {
    pub time: u64,
    pub kind: EventKind,
    pub config: SpecConfig,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExplorationReport {
    pub samples: Vec<MetricSample>,
    /// Index into `samples` of the winner; first encountered on ties.
    pub best: Option<usize>,
    pub timeline: Vec<TimelineEvent>,
}

impl ExplorationReport {
    pub fn best_sample(&self) -> Option<&MetricSample> {
        self.best.map(|i| &self.samples[i])
    }

    pub fn best_config(&self) -> Option<&SpecConfig> {
        self.best_sample().map(|s| &s.config)
    }
}

/// Drives one handler of a runtime.
pub struct Policy {
    rt: Arc<Runtime>,
    handler: String,
    registry: CustomRegistry,
    pipeline: PassPipeline,
    clock: Clock,
}

impl Policy {
    pub fn new(
        rt: Arc<Runtime>,
        handler: &str,
        registry: CustomRegistry,
    ) -> Result<Policy, PolicyError> {
        if !rt.has_handler(handler) {
            return Err(EngineError::UnknownHandler(handler.to_string()).into());
        }
        Ok(Policy {
            rt,
            handler: handler.to_string(),
            registry,
            pipeline: default_pipeline(),
            clock: wall_clock(),
        })
    }

    pub fn with_pipeline(mut self, p: PassPipeline) -> Self {
        self.pipeline = p;
        self
    }

    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }

    pub fn runtime(&self) -> &Arc<Runtime> {
        &self.rt
    }

    pub fn handler(&self) -> &str {
        &self.handler
    }

    pub fn now(&self) -> u64 {
        (self.clock)()
    }

    /// Points of the loaded module with a snapshot of current profiles.
    pub fn spec_space(&self) -> SpecSpace {
        let mut space = collect_spec_points(self.rt.generic_module());
        space.profiles = self.rt.profiles();
        space
    }

    /// Specializes, optimizes and installs `c`. On error the previously
    /// active version stays in place.
    pub fn apply(&self, c: &SpecConfig) -> Result<u64, PolicyError> {
        let profiles = self.rt.profiles();
        let sm = specialize(self.rt.generic_module(), c, &self.registry, &profiles)?;
        let (sm, diags) = run_pipeline_with_diagnostics(&sm, &self.pipeline);
        for d in diags {
            log::debug!("{d}");
        }
        let id = self.rt.install(&self.handler, sm)?;
        log::info!("`{}` now runs {{{c}}} as version {id}", self.handler);
        Ok(id)
    }

    /// Applies each configuration in order and measures one window with
    /// `measure`, then re-applies the best. A configuration that fails to
    /// apply scores negative infinity and is not measured.
    pub fn explore_exhaustive(
        &self,
        configs: &[SpecConfig],
        measure: &mut dyn FnMut(&SpecConfig) -> Window,
    ) -> Result<ExplorationReport, PolicyError> {
        if configs.is_empty() {
            return Err(PolicyError::NoConfigs);
        }
        let mut report = ExplorationReport::default();
        report.timeline.push(TimelineEvent {
            time: self.now(),
            kind: EventKind::ExploreStart,
            config: SpecConfig::new(),
        });
        for c in configs {
            let window = match self.apply(c) {
                Ok(_) => {
                    report.timeline.push(TimelineEvent {
                        time: self.now(),
                        kind: EventKind::ConfigSwitch,
                        config: c.clone(),
                    });
                    measure(c)
                }
                Err(e) => {
                    log::warn!("skipping {{{c}}}: {e}");
                    Window {
                        start: self.now(),
                        metric: f64::NEG_INFINITY,
                        ..Window::metric_only(0.0)
                    }
                }
            };
            let i = report.samples.len();
            let better = match report.best {
                None => window.metric > f64::NEG_INFINITY,
                Some(b) => window.metric > report.samples[b].window.metric,
            };
            if better {
                report.best = Some(i);
            }
            report.samples.push(MetricSample {
                config: c.clone(),
                config_id: c.id(),
                window,
            });
        }
        match report.best_config().cloned() {
            Some(best) => {
                self.apply(&best)?;
                report.timeline.push(TimelineEvent {
                    time: self.now(),
                    kind: EventKind::Settle,
                    config: best,
                });
            }
            None => {
                self.rt.reset_to_generic(&self.handler)?;
            }
        }
        Ok(report)
    }
}

/// Fires when a window's metric falls below `(1 - threshold)` of the
/// settled metric, or every `interval` windows if set. Silent while an
/// exploration is running.
#[derive(Debug, Clone)]
pub struct Watchdog {
    pub threshold: f64,
    pub interval: Option<u64>,
    settled: Option<f64>,
    exploring: bool,
    windows_since_settle: u64,
}

impl Watchdog {
    pub fn new(threshold: f64, interval: Option<u64>) -> Watchdog {
        assert!(
            threshold > 0.0 && threshold < 1.0,
            "threshold must lie in (0, 1)"
        );
        Watchdog {
            threshold,
            interval,
            settled: None,
            exploring: false,
            windows_since_settle: 0,
        }
    }

    pub fn begin_exploration(&mut self) {
        self.exploring = true;
    }

    /// Ends an exploration with the metric of the chosen configuration.
    pub fn settle(&mut self, metric: f64) {
        self.exploring = false;
        self.settled = Some(metric);
        self.windows_since_settle = 0;
    }

    pub fn settled(&self) -> Option<f64> {
        self.settled
    }

    /// Feeds one window; true means re-explore now.
    pub fn check(&mut self, metric: f64) -> bool {
        if self.exploring {
            return false;
        }
        self.windows_since_settle += 1;
        let dropped = self
            .settled
            .is_some_and(|s| metric < (1.0 - self.threshold) * s);
        let due = self
            .interval
            .is_some_and(|n| self.windows_since_settle >= n);
        dropped || due
    }

    /// Like [`Watchdog::check`], calling `on_trigger` when it fires.
    pub fn observe(&mut self, metric: f64, on_trigger: impl FnOnce()) -> bool {
        let fire = self.check(metric);
        if fire {
            on_trigger();
        }
        fire
    }
}

/// A deterministic invocation source: the fixed code that prepares host
/// state and arguments for each call.
pub trait Workload: Send {
    /// Prepares host state for invocation number `i` and returns its
    /// arguments, or `None` when the workload is exhausted.
    fn next(&mut self, i: u64, host: &mut HostState) -> Option<Vec<Value>>;
    /// Work units credited for a call that returned `result`.
    fn units(&self, result: &Value) -> u64 {
        let _ = result;
        1
    }
    /// Name of the phase invocation `i` belongs to.
    fn phase(&self, i: u64) -> String {
        let _ = i;
        String::from("0")
    }
    fn total(&self) -> u64;
}

/// Source of measurement windows over a running workload.
pub trait WindowSource {
    /// Measures the next `len` invocations. The first warm-up fraction is
    /// not measured; the metric is work units per million ops over the
    /// rest.
    fn window(&mut self, len: u64) -> Result<Window, EngineError>;
    /// Invocations left in the workload.
    fn remaining(&self) -> u64;
    /// Clock used for window start times.
    fn clock(&self) -> Clock;
    /// Waits for the workload to end and reports any error it hit.
    fn finish(&mut self) -> Result<(), EngineError> {
        Ok(())
    }
}

fn metric_of(d: &Counters) -> f64 {
    if d.ops_executed == 0 {
        0.0
    } else {
        d.work_units as f64 * 1e6 / d.ops_executed as f64
    }
}

fn warmup_len(len: u64, warmup: f64) -> u64 {
    (len as f64 * warmup).floor() as u64
}

/// Runs a workload in the caller's thread. Logical time is the number of
/// invocations issued so far, so every report is reproducible.
pub struct WindowRunner {
    rt: Arc<Runtime>,
    handler: String,
    workload: Box<dyn Workload>,
    issued: Arc<AtomicU64>,
    pub warmup: f64,
}

impl WindowRunner {
    pub fn new(rt: Arc<Runtime>, handler: &str, workload: Box<dyn Workload>) -> WindowRunner {
        WindowRunner {
            rt,
            handler: handler.to_string(),
            workload,
            issued: Arc::new(AtomicU64::new(0)),
            warmup: DEFAULT_WARMUP,
        }
    }

    pub fn issued(&self) -> u64 {
        self.issued.load(Ordering::Relaxed)
    }

    pub fn phase(&self) -> String {
        self.workload.phase(self.issued())
    }

    /// Issues one invocation; false once the workload is exhausted.
    pub fn step(&mut self) -> Result<bool, EngineError> {
        let i = self.issued();
        let Some(args) = self.rt.with_host(|h| self.workload.next(i, h)) else {
            return Ok(false);
        };
        let r = self.rt.invoke(&self.handler, &args)?;
        self.rt
            .record_work(&self.handler, self.workload.units(&r))?;
        self.issued.store(i + 1, Ordering::Relaxed);
        Ok(true)
    }
}

impl WindowSource for WindowRunner {
    fn window(&mut self, len: u64) -> Result<Window, EngineError> {
        let start = self.issued();
        let phase = self.phase();
        let warm = warmup_len(len, self.warmup);
        for _ in 0..warm {
            if !self.step()? {
                break;
            }
        }
        let before = self.rt.stats(&self.handler)?;
        for _ in warm..len {
            if !self.step()? {
                break;
            }
        }
        let d = self.rt.stats(&self.handler)?.since(&before);
        Ok(Window {
            start,
            len: self.issued() - start,
            metric: metric_of(&d),
            invocations: d.invocations,
            ops: d.ops_executed,
            guard_failures: d.guard_failures,
            phase,
        })
    }

    fn remaining(&self) -> u64 {
        self.workload.total().saturating_sub(self.issued())
    }

    fn clock(&self) -> Clock {
        let issued = self.issued.clone();
        Arc::new(move || issued.load(Ordering::Relaxed))
    }
}

struct LiveState {
    issued: AtomicU64,
    finished: AtomicBool,
    phase: Mutex<String>,
    error: Mutex<Option<EngineError>>,
}

/// Runs a workload on its own thread while the caller measures windows
/// from counter snapshots. Times are wall-clock milliseconds.
pub struct LiveRunner {
    rt: Arc<Runtime>,
    handler: String,
    state: Arc<LiveState>,
    total: u64,
    clock: Clock,
    worker: Option<JoinHandle<()>>,
    pub warmup: f64,
}

impl LiveRunner {
    pub fn spawn(rt: Arc<Runtime>, handler: &str, mut workload: Box<dyn Workload>) -> LiveRunner {
        let state = Arc::new(LiveState {
            issued: AtomicU64::new(0),
            finished: AtomicBool::new(false),
            phase: Mutex::new(workload.phase(0)),
            error: Mutex::new(None),
        });
        let total = workload.total();
        let worker = {
            let (rt, state, handler) = (rt.clone(), state.clone(), handler.to_string());
            std::thread::spawn(move || {
                let mut i = 0;
                while let Some(args) = rt.with_host(|h| workload.next(i, h)) {
                    let done = rt
                        .invoke(&handler, &args)
                        .and_then(|r| rt.record_work(&handler, workload.units(&r)));
                    if let Err(e) = done {
                        *state.error.lock().unwrap_or_else(|p| p.into_inner()) = Some(e);
                        break;
                    }
                    i += 1;
                    state.issued.store(i, Ordering::Release);
                    let phase = workload.phase(i.min(total.saturating_sub(1)));
                    let mut cur = state.phase.lock().unwrap_or_else(|p| p.into_inner());
                    if *cur != phase {
                        *cur = phase;
                    }
                }
                state.finished.store(true, Ordering::Release);
            })
        };
        LiveRunner {
            rt,
            handler: handler.to_string(),
            state,
            total,
            clock: wall_clock(),
            worker: Some(worker),
            warmup: DEFAULT_WARMUP,
        }
    }

    fn issued(&self) -> u64 {
        self.state.issued.load(Ordering::Acquire)
    }

    fn wait_until(&self, target: u64) {
        while self.issued() < target && !self.state.finished.load(Ordering::Acquire) {
            std::thread::sleep(Duration::from_micros(100));
        }
    }

    fn take_error(&self) -> Result<(), EngineError> {
        match self
            .state
            .error
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .take()
        {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}

impl WindowSource for LiveRunner {
    fn window(&mut self, len: u64) -> Result<Window, EngineError> {
        let start_count = self.issued();
        let start = (self.clock)();
        let phase = self
            .state
            .phase
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .clone();
        self.wait_until(start_count + warmup_len(len, self.warmup));
        let before = self.rt.stats(&self.handler)?;
        self.wait_until(start_count + len);
        let d = self.rt.stats(&self.handler)?.since(&before);
        self.take_error()?;
        Ok(Window {
            start,
            len: (self.clock)() - start,
            metric: metric_of(&d),
            invocations: d.invocations,
            ops: d.ops_executed,
            guard_failures: d.guard_failures,
            phase,
        })
    }

    fn remaining(&self) -> u64 {
        if self.state.finished.load(Ordering::Acquire) {
            0
        } else {
            self.total.saturating_sub(self.issued())
        }
    }

    fn clock(&self) -> Clock {
        self.clock.clone()
    }

    fn finish(&mut self) -> Result<(), EngineError> {
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
        self.take_error()
    }
}

impl Drop for LiveRunner {
    fn drop(&mut self) {
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

/// Everything that happened in an adaptive session.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Session {
    pub rounds: Vec<ExplorationReport>,
    /// Windows measured while settled, with the active configuration.
    pub settled: Vec<MetricSample>,
    /// Number of settled windows following each round.
    pub settled_per_round: Vec<usize>,
    pub triggers: Vec<TimelineEvent>,
}

/// Explores `configs`, then keeps measuring settled windows and
/// re-explores whenever the watchdog fires, until the workload ends.
pub fn run_adaptive(
    policy: &Policy,
    runner: &mut dyn WindowSource,
    configs: &[SpecConfig],
    window: u64,
    watchdog: &mut Watchdog,
) -> Result<Session, PolicyError> {
    let mut session = Session::default();
    let mut failed: Option<EngineError> = None;
    loop {
        watchdog.begin_exploration();
        let report = policy.explore_exhaustive(configs, &mut |_| match runner.window(window) {
            Ok(w) => w,
            Err(e) => {
                failed.get_or_insert(e);
                Window::metric_only(f64::NEG_INFINITY)
            }
        })?;
        if let Some(e) = failed.take() {
            return Err(e.into());
        }
        let settled_cfg = report.best_config().cloned().unwrap_or_default();
        watchdog.settle(report.best_sample().map_or(0.0, |s| s.window.metric));
        session.rounds.push(report);
        session.settled_per_round.push(0);
        loop {
            if runner.remaining() == 0 {
                return Ok(session);
            }
            let w = runner.window(window)?;
            let metric = w.metric;
            session.settled.push(MetricSample {
                config_id: settled_cfg.id(),
                config: settled_cfg.clone(),
                window: w,
            });
            *session
                .settled_per_round
                .last_mut()
                .expect("round pushed above") += 1;
            if watchdog.check(metric) {
                log::info!("metric {metric:.3} fell below the settled level; re-exploring");
                session.triggers.push(TimelineEvent {
                    time: policy.now(),
                    kind: EventKind::ReExploreTrigger,
                    config: settled_cfg.clone(),
                });
                break;
            }
        }
        if runner.remaining() == 0 {
            return Ok(session);
        }
    }
}
