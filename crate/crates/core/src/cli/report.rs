//! Timeline rows and the CSV writer.

use std::io::Write;
use std::path::Path;

use crate::policy::{ExplorationReport, MetricSample, Session, TimelineEvent, Window};
use crate::profile::Profiles;
use crate::spec::SpecConfig;

pub const HEADER: [&str; 10] = [
    "time_ms",
    "handler",
    "config_id",
    "config",
    "phase",
    "event",
    "metric",
    "invocations",
    "ops_executed",
    "guard_failures",
];

/// One CSV row. Event rows leave the window columns empty.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub time: u64,
    pub config: SpecConfig,
    pub phase: Option<String>,
    pub event: String,
    pub window: Option<Window>,
}

impl Row {
    pub fn event(e: &TimelineEvent) -> Row {
        Row {
            time: e.time,
            config: e.config.clone(),
            phase: None,
            event: e.kind.name().to_string(),
            window: None,
        }
    }

    pub fn sample(s: &MetricSample, event: &str) -> Row {
        Row {
            time: s.window.start,
            config: s.config.clone(),
            phase: Some(s.window.phase.clone()),
            event: event.to_string(),
            window: Some(s.window.clone()),
        }
    }

    pub fn window(w: &Window, config: &SpecConfig, event: &str) -> Row {
        Row {
            time: w.start,
            config: config.clone(),
            phase: Some(w.phase.clone()),
            event: event.to_string(),
            window: Some(w.clone()),
        }
    }
}

/// Rows of one exploration round: start, then each switch followed by its
/// measurement, then the settle event. The winner's row is `explore-best`.
pub fn exploration_rows(r: &ExplorationReport) -> Vec<Row> {
    let mut rows = Vec::new();
    let mut events = r.timeline.iter().peekable();
    if let Some(e) = events.next_if(|e| e.kind.name() == "explore-start") {
        rows.push(Row::event(e));
    }
    for (i, s) in r.samples.iter().enumerate() {
        if s.window.metric > f64::NEG_INFINITY {
            if let Some(e) = events.next_if(|e| e.kind.name() == "config-switch") {
                rows.push(Row::event(e));
            }
        }
        rows.push(Row::sample(
            s,
            if r.best == Some(i) {
                "explore-best"
            } else {
                "explore"
            },
        ));
    }
    rows.extend(events.map(Row::event));
    rows
}

/// Rows of an adaptive session in time order.
pub fn session_rows(s: &Session) -> Vec<Row> {
    let mut rows: Vec<Row> = Vec::new();
    let mut settled = s.settled.iter();
    let mut triggers = s.triggers.iter();
    for (round, &n) in s.rounds.iter().zip(&s.settled_per_round) {
        rows.extend(exploration_rows(round));
        rows.extend(settled.by_ref().take(n).map(|w| Row::sample(w, "window")));
        if let Some(t) = triggers.next() {
            rows.push(Row::event(t));
        }
    }
    rows
}

/// Gives event rows the phase of the nearest following window, or of the
/// last one before them.
pub fn fill_phases(rows: &mut [Row]) {
    let mut next: Option<String> = None;
    for r in rows.iter_mut().rev() {
        match &r.phase {
            Some(p) => next = Some(p.clone()),
            None => r.phase = next.clone(),
        }
    }
    let mut prev = String::new();
    for r in rows.iter_mut() {
        match &r.phase {
            Some(p) => prev = p.clone(),
            None => r.phase = Some(prev.clone()),
        }
    }
}

fn fmt_metric(m: f64) -> String {
    if m.is_finite() {
        format!("{m:.6}")
    } else if m < 0.0 {
        "-inf".into()
    } else {
        "inf".into()
    }
}

pub fn to_csv(handler: &str, rows: &[Row]) -> Result<Vec<u8>, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(HEADER)?;
    for r in rows {
        let (metric, inv, ops, gf) = match &r.window {
            Some(w) => (
                fmt_metric(w.metric),
                w.invocations.to_string(),
                w.ops.to_string(),
                w.guard_failures.to_string(),
            ),
            None => Default::default(),
        };
        w.write_record([
            r.time.to_string(),
            handler.to_string(),
            r.config.id().to_string(),
            r.config.canonical(),
            r.phase.clone().unwrap_or_default(),
            r.event.clone(),
            metric,
            inv,
            ops,
            gf,
        ])?;
    }
    w.into_inner().map_err(|e| e.into_error().into())
}

/// Profile sidecar: one `label,value,count` row per entry. Histogram rows
/// carry each bucket's lower bound.
pub fn profiles_csv(profiles: &Profiles) -> Result<Vec<u8>, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["label", "value", "count"])?;
    for (label, p) in profiles {
        if let Some(f) = p.as_frequency() {
            for (v, c) in f.entries() {
                w.write_record([label.clone(), v.to_string(), c.to_string()])?;
            }
        } else if let Some(h) = p.as_histogram() {
            for (i, &c) in h.buckets().iter().enumerate() {
                w.write_record([
                    label.clone(),
                    h.bucket_range(i).0.to_string(),
                    c.to_string(),
                ])?;
            }
        }
    }
    w.into_inner().map_err(|e| e.into_error().into())
}

/// Writes `bytes` to `path` through a temporary file in the same
/// directory, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}
