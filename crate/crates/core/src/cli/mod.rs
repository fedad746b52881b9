//! Command-line driver: benches, exploration, adaptation and IR dumps.

pub mod report;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::cases::{self, BenchKind, WorkloadPhase};
use crate::custom::{parse_rules, LpmRule};
use crate::ir::print_module;
use crate::optimizer::{run_pipeline, PassPipeline};
use crate::policy::{
    run_adaptive, EventKind, LiveRunner, Policy, TimelineEvent, Watchdog, WindowRunner,
    WindowSource,
};
use crate::profile::Profiles;
use crate::spec::SpecConfig;
use crate::specializer::specialize;
use report::Row;

#[derive(Debug, Parser)]
#[command(
    name = "specforge",
    version,
    about = "Workload-guided runtime specialization of handler code"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a bench under one configuration, instrumenting first when the
    /// configuration uses a profile-driven generator.
    Bench(RunArgs),
    /// Measure every candidate configuration once, then stay on the best.
    Explore(RunArgs),
    /// Explore, settle, and re-explore when the metric drops (two phases
    /// by default).
    Adapt(RunArgs),
    /// Print the specialized, optimized IR of a bench.
    DumpIr(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// mmul, lpm, simple or batch.
    pub bench: BenchKind,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Configuration as `label=value;label2=assume;...`.
    #[arg(long)]
    pub config: Option<String>,
    /// Comma-separated pass list; `default` or `none`.
    #[arg(long, default_value = "default")]
    pub passes: String,
    /// LPM rule file, one `A.B.C.D/len value` per line.
    #[arg(long)]
    pub rules: Option<PathBuf>,
    /// Guard every constant decision.
    #[arg(long, overrides_with = "no_guard")]
    pub guard: bool,
    /// Leave every constant decision unguarded.
    #[arg(long, overrides_with = "guard")]
    pub no_guard: bool,
}

impl CommonArgs {
    fn guard_override(&self) -> Option<bool> {
        if self.guard {
            Some(true)
        } else if self.no_guard {
            Some(false)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Total invocations (ignored when --phases is given).
    #[arg(long)]
    pub duration: Option<u64>,
    /// Write the timeline here instead of stdout.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Phase file, one `key=value ...` line per phase.
    #[arg(long)]
    pub phases: Option<PathBuf>,
    /// Record every k-th value during instrumentation.
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    pub sample_every: u64,
    /// Relative metric drop that triggers re-exploration.
    #[arg(long, default_value_t = 0.25)]
    pub watch_threshold: f64,
    /// Also re-explore every this many settled windows.
    #[arg(long)]
    pub watch_interval: Option<u64>,
    /// Invocations per measurement window.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub window: Option<u64>,
    /// Single thread, logical time: output depends only on the flags.
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let mut out = std::io::stdout().lock();
    match execute(&cli.command, &mut out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs a parsed command, writing CSV or IR to `out` when no file is given.
pub fn execute(cmd: &Command, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    match cmd {
        Command::DumpIr(c) => {
            let text = dump_ir(c)?;
            out.write_all(text.as_bytes()).map_err(runtime)
        }
        Command::Bench(a) => emit(a, bench(a)?, out),
        Command::Explore(a) => emit(a, explore(a)?, out),
        Command::Adapt(a) => emit(a, adapt(a)?, out),
    }
}

/// Timeline rows plus the profiles gathered while instrumenting.
pub struct Outcome {
    pub rows: Vec<Row>,
    pub profiles: Profiles,
}

/// Writes the timeline to --csv (or `out`), and `profiles.csv` beside
/// --csv when anything was instrumented.
fn emit(a: &RunArgs, o: Outcome, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    let mut rows = o.rows;
    report::fill_phases(&mut rows);
    let bytes = report::to_csv(a.common.bench.handler(), &rows).map_err(runtime)?;
    let write = |p: &Path, bytes: &[u8]| {
        report::write_atomic(p, bytes).map_err(|e| runtime(format!("{}: {e}", p.display())))
    };
    match &a.csv {
        Some(p) => {
            write(p, &bytes)?;
            if !o.profiles.is_empty() {
                let side = p.with_file_name("profiles.csv");
                write(&side, &report::profiles_csv(&o.profiles).map_err(runtime)?)?;
            }
            Ok(())
        }
        None => out.write_all(&bytes).map_err(runtime),
    }
}

/// Invocations run when --duration is not given.
pub fn default_duration(kind: BenchKind) -> u64 {
    match kind {
        BenchKind::Mmul => 200,
        BenchKind::Lpm | BenchKind::Simple | BenchKind::Batch => 20_000,
    }
}

fn load_rules(c: &CommonArgs) -> Result<Vec<LpmRule>, CliError> {
    match &c.rules {
        Some(p) => {
            let text = read(p)?;
            parse_rules(&text).map_err(|e| runtime(format!("{}: {e}", p.display())))
        }
        None if c.bench == BenchKind::Lpm => Ok(cases::default_rules(c.seed)),
        None => Ok(Vec::new()),
    }
}

fn load_phases(a: &RunArgs, two_phase: bool) -> Result<Vec<WorkloadPhase>, CliError> {
    let kind = a.common.bench;
    if let Some(p) = &a.phases {
        let text = read(p)?;
        return cases::parse_phases(kind, &text, a.common.seed)
            .map_err(|e| runtime(format!("{}: {e}", p.display())));
    }
    let duration = a.duration.unwrap_or_else(|| default_duration(kind));
    if duration == 0 {
        return Err(usage("--duration must be positive"));
    }
    Ok(if two_phase {
        cases::default_two_phases(kind, duration, a.common.seed)
    } else {
        vec![cases::default_phase(kind, duration, a.common.seed)]
    })
}

fn read(p: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(p).map_err(|e| runtime(format!("{}: {e}", p.display())))
}

/// Parses --config and applies --guard/--no-guard to its decisions.
fn parse_config(c: &CommonArgs) -> Result<SpecConfig, CliError> {
    let mut cfg = match &c.config {
        Some(text) => SpecConfig::parse(text).map_err(|e| usage(format!("--config: {e}")))?,
        None => SpecConfig::new(),
    };
    if let Some(g) = c.guard_override() {
        let labels: Vec<String> = cfg.decisions().keys().cloned().collect();
        for l in labels {
            cfg.set_guard(&l, g);
        }
    }
    Ok(cfg)
}

/// A loaded bench with its policy and window source.
struct Session {
    kind: BenchKind,
    policy: Policy,
    source: Box<dyn WindowSource>,
    total: u64,
    rows: Vec<Row>,
    profiles: Profiles,
}

impl Session {
    fn start(a: &RunArgs, two_phase: bool) -> Result<Session, CliError> {
        let kind = a.common.bench;
        let rules = load_rules(&a.common)?;
        let phases = load_phases(a, two_phase)?;
        let total = phases.iter().map(|p| p.duration).sum();
        let pipeline =
            PassPipeline::parse(&a.common.passes).map_err(|e| usage(format!("--passes: {e}")))?;
        let (rt, registry, workload) = cases::setup(kind, phases, &rules, a.common.seed)
            .and_then(|s| s.load())
            .map_err(runtime)?;
        let rt = Arc::new(rt);
        let source: Box<dyn WindowSource> = if a.deterministic {
            Box::new(WindowRunner::new(rt.clone(), kind.handler(), workload))
        } else {
            Box::new(LiveRunner::spawn(rt.clone(), kind.handler(), workload))
        };
        let policy = Policy::new(rt, kind.handler(), registry)
            .map_err(runtime)?
            .with_pipeline(pipeline)
            .with_clock(source.clock());
        Ok(Session {
            kind,
            policy,
            source,
            total,
            rows: Vec::new(),
            profiles: Profiles::new(),
        })
    }

    fn event(&mut self, kind: EventKind, config: &SpecConfig) {
        let e = TimelineEvent {
            time: self.policy.now(),
            kind,
            config: config.clone(),
        };
        self.rows.push(Row::event(&e));
    }

    fn apply(&mut self, c: &SpecConfig) -> Result<(), CliError> {
        self.policy.apply(c).map_err(runtime)?;
        self.event(EventKind::ConfigSwitch, c);
        Ok(())
    }

    /// Runs `len` invocations with `labels` sampled every `k`-th time, on
    /// an otherwise generic handler. Profiles start empty.
    fn instrument(&mut self, labels: &[&str], k: u64, len: u64) -> Result<(), CliError> {
        if labels.is_empty() || len == 0 {
            return Ok(());
        }
        let cfg = labels
            .iter()
            .fold(SpecConfig::new(), |c, l| c.with_sampling(l, k));
        self.policy.runtime().reset_profiles();
        self.event(EventKind::InstrumentStart, &cfg);
        self.apply(&cfg)?;
        let w = self.source.window(len).map_err(runtime)?;
        self.rows.push(Row::window(&w, &cfg, "window"));
        self.profiles = self.policy.runtime().profiles();
        Ok(())
    }

    /// Measures windows under the active configuration until the
    /// workload ends.
    fn drain(&mut self, config: &SpecConfig, len: u64) -> Result<(), CliError> {
        while self.source.remaining() > 0 {
            let w = self.source.window(len).map_err(runtime)?;
            self.rows.push(Row::window(&w, config, "window"));
        }
        self.source.finish().map_err(runtime)
    }

    fn outcome(self) -> Outcome {
        Outcome {
            rows: self.rows,
            profiles: self.profiles,
        }
    }

    fn validate(&self, c: &SpecConfig) -> Result<(), CliError> {
        c.validate(&self.policy.spec_space())
            .map_err(|e| usage(format!("--config: {e}")))
    }
}

fn instrument_len(total: u64) -> u64 {
    (total / 10).max(1)
}

fn bench(a: &RunArgs) -> Result<Outcome, CliError> {
    let mut s = Session::start(a, false)?;
    let cfg = parse_config(&a.common)?;
    s.validate(&cfg)?;
    let window = a.window.unwrap_or((s.total / 20).max(1));
    let profiled: Vec<&str> = cases::instrument_labels(s.kind)
        .iter()
        .copied()
        .filter(|l| !matches!(cfg.decision(l), crate::spec::Decision::Disabled))
        .collect();
    s.instrument(&profiled, a.sample_every, instrument_len(s.total))?;
    s.apply(&cfg)?;
    s.drain(&cfg, window)?;
    Ok(s.outcome())
}

/// Explored configurations with --config merged into each.
fn candidates(s: &Session, a: &RunArgs) -> Result<Vec<SpecConfig>, CliError> {
    let base = parse_config(&a.common)?;
    s.validate(&base)?;
    let profiles = s.policy.runtime().profiles();
    cases::explore_configs(s.kind, a.common.guard_override(), &profiles)
        .iter()
        .map(|c| base.merge(c).map_err(|e| usage(format!("--config: {e}"))))
        .collect()
}

fn explore(a: &RunArgs) -> Result<Outcome, CliError> {
    let mut s = Session::start(a, false)?;
    s.instrument(
        cases::instrument_labels(s.kind),
        a.sample_every,
        instrument_len(s.total),
    )?;
    let configs = candidates(&s, a)?;
    let window = a
        .window
        .unwrap_or((s.source.remaining() / (configs.len() as u64 + 3)).max(1));
    let source = &mut s.source;
    let mut failed = None;
    let report = s
        .policy
        .explore_exhaustive(&configs, &mut |_| match source.window(window) {
            Ok(w) => w,
            Err(e) => {
                failed.get_or_insert(e);
                crate::policy::Window::metric_only(f64::NEG_INFINITY)
            }
        })
        .map_err(runtime)?;
    if let Some(e) = failed {
        return Err(runtime(e));
    }
    s.rows.extend(report::exploration_rows(&report));
    let best = report.best_config().cloned().unwrap_or_default();
    match report.best_sample() {
        Some(b) => log::info!("settled on {{{best}}} with metric {:.3}", b.window.metric),
        None => log::warn!("every configuration failed; running generic code"),
    }
    s.drain(&best, window)?;
    Ok(s.outcome())
}

fn adapt(a: &RunArgs) -> Result<Outcome, CliError> {
    if !(a.watch_threshold > 0.0 && a.watch_threshold < 1.0) {
        return Err(usage("--watch-threshold must be in (0, 1)"));
    }
    let mut s = Session::start(a, true)?;
    s.instrument(
        cases::instrument_labels(s.kind),
        a.sample_every,
        instrument_len(s.total),
    )?;
    let configs = candidates(&s, a)?;
    let window = a.window.unwrap_or((s.total / 50).max(1));
    let mut watchdog = Watchdog::new(a.watch_threshold, a.watch_interval);
    let session = run_adaptive(
        &s.policy,
        s.source.as_mut(),
        &configs,
        window,
        &mut watchdog,
    )
    .map_err(runtime)?;
    s.source.finish().map_err(runtime)?;
    log::info!(
        "{} exploration rounds, {} re-exploration triggers",
        session.rounds.len(),
        session.triggers.len()
    );
    s.rows.extend(report::session_rows(&session));
    Ok(s.outcome())
}

fn dump_ir(c: &CommonArgs) -> Result<String, CliError> {
    let rules = load_rules(c)?;
    let pipeline = PassPipeline::parse(&c.passes).map_err(|e| usage(format!("--passes: {e}")))?;
    let phase = cases::default_phase(c.bench, 1, c.seed);
    let setup = cases::setup(c.bench, vec![phase], &rules, c.seed).map_err(runtime)?;
    let cfg = parse_config(c)?;
    cfg.validate(&crate::spec::collect_spec_points(&setup.module))
        .map_err(|e| usage(format!("--config: {e}")))?;
    let sm =
        specialize(&setup.module, &cfg, &setup.registry, &Default::default()).map_err(runtime)?;
    Ok(print_module(&run_pipeline(&sm, &pipeline).module))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_to_string(args: &[&str]) -> Result<String, CliError> {
        let cli = Cli::try_parse_from(std::iter::once("specforge").chain(args.iter().copied()))
            .map_err(usage)?;
        let mut out = Vec::new();
        execute(&cli.command, &mut out)?;
        Ok(String::from_utf8(out).unwrap())
    }

    #[test]
    fn exit_codes() {
        assert_eq!(run(["specforge", "frobnicate"]), 2);
        assert_eq!(run(["specforge", "bench", "mmul", "--bogus"]), 2);
        assert_eq!(run(["specforge", "bench", "nope"]), 2);
        assert_eq!(run(["specforge", "dump-ir", "mmul", "--config", "B=="]), 2);
        assert_eq!(
            run(["specforge", "dump-ir", "mmul", "--passes", "inline"]),
            2
        );
        assert_eq!(
            run([
                "specforge",
                "bench",
                "lpm",
                "--rules",
                "/nonexistent/rules.txt"
            ]),
            1
        );
    }

    #[test]
    fn dump_ir_is_stable_and_specialized() {
        let a =
            run_to_string(&["dump-ir", "mmul", "--config", "B=8", "--passes", "default"]).unwrap();
        let b =
            run_to_string(&["dump-ir", "mmul", "--config", "B=8", "--passes", "default"]).unwrap();
        assert_eq!(a, b);
        assert!(a.contains("guard"));
        assert!(!a.contains("spec-enum"));
        let generic = run_to_string(&["dump-ir", "mmul", "--passes", "none"]).unwrap();
        assert_ne!(a, generic);
    }

    #[test]
    fn guard_flags_override_config() {
        let c = CommonArgs {
            bench: BenchKind::Mmul,
            seed: 1,
            config: Some("B=8".into()),
            passes: "default".into(),
            rules: None,
            guard: false,
            no_guard: true,
        };
        assert!(!parse_config(&c).unwrap().guard("B"));
        assert!(parse_config(&CommonArgs {
            no_guard: false,
            ..c
        })
        .unwrap()
        .guard("B"));
    }

    #[test]
    fn bench_lpm_instruments_then_switches() {
        let csv = run_to_string(&[
            "bench",
            "lpm",
            "--config",
            "fp=on",
            "--duration",
            "400",
            "--window",
            "100",
            "--deterministic",
        ])
        .unwrap();
        let events: Vec<&str> = csv
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(5).unwrap())
            .collect();
        assert_eq!(
            &events[..4],
            [
                "instrument-start",
                "config-switch",
                "window",
                "config-switch"
            ]
        );
        assert!(events[4..].iter().all(|e| *e == "window"));
    }

    #[test]
    fn csv_file_and_profile_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let code = run([
            "specforge",
            "explore",
            "simple",
            "--duration",
            "2000",
            "--deterministic",
            "--csv",
            p.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
        let csv = std::fs::read_to_string(&p).unwrap();
        assert!(csv.starts_with(&report::HEADER.join(",")));
        assert!(csv.contains("explore-best"));
        let side = std::fs::read_to_string(dir.path().join("profiles.csv")).unwrap();
        assert!(side.starts_with("label,value,count\na,"));
    }

    #[test]
    fn unknown_label_is_usage_error() {
        let e = run_to_string(&[
            "bench",
            "mmul",
            "--config",
            "Q=1",
            "--duration",
            "2",
            "--deterministic",
        ])
        .unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }
}
