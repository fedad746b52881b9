//! Handler runtime: one trampoline per handler function that dispatches to
//! the most recently installed version, with guard failures diverted to
//! the generic version after an optional cleanup hook.
//!
//! Host state and profiles sit behind one lock, so handler executions are
//! serialized and counters are exact. Installing swaps an `Arc` under a
//! write lock; invocations clone the `Arc` first and finish on the version
//! they started with.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};
use std::time::Instant;

use thiserror::Error;

use crate::ir::{
    validate_module, Diagnostic, ExecCtx, ExecError, HandlerModule, HostState, Program, Value,
};
use crate::profile::Profiles;
use crate::spec::{ConfigId, SpecConfig};
use crate::specializer::SpecializedModule;

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

fn next_version() -> u64 {
    NEXT_VERSION.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("unknown handler `{0}`")]
    UnknownHandler(String),
    #[error("module is invalid: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Diagnostic>),
    #[error("cannot bind module: {0}")]
    Bind(ExecError),
    #[error("installed module does not provide `{0}` with the generic signature")]
    NameMismatch(String),
    #[error("handler trapped: {0}")]
    Trap(ExecError),
}

/// One executable version of a handler.
#[derive(Debug)]
pub struct FunctionVersion {
    pub version_id: u64,
    pub handler: String,
    /// `None` for the generic version.
    pub module: Option<SpecializedModule>,
    pub config_id: ConfigId,
    pub installed_at: Instant,
    program: Arc<Program>,
}

impl FunctionVersion {
    pub fn is_generic(&self) -> bool {
        self.module.is_none()
    }

    pub fn config(&self) -> SpecConfig {
        self.module
            .as_ref()
            .map(|m| m.config.clone())
            .unwrap_or_default()
    }
}

/// Cumulative per-handler counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counters {
    pub invocations: u64,
    pub specialized_hits: u64,
    pub guard_failures: u64,
    pub ops_executed: u64,
    /// Application work units reported by the fixed code.
    pub work_units: u64,
}

impl Counters {
    /// Field-wise difference `self - earlier`.
    pub fn since(&self, earlier: &Counters) -> Counters {
        Counters {
            invocations: self.invocations - earlier.invocations,
            specialized_hits: self.specialized_hits - earlier.specialized_hits,
            guard_failures: self.guard_failures - earlier.guard_failures,
            ops_executed: self.ops_executed - earlier.ops_executed,
            work_units: self.work_units - earlier.work_units,
        }
    }
}

/// Called once per guard failure with the host state and the original
/// arguments, before the generic version runs.
pub type CleanupHook = Arc<dyn Fn(&mut HostState, &[Value]) + Send + Sync>;

struct Handler {
    active: RwLock<Arc<FunctionVersion>>,
    counters: Mutex<Counters>,
    cleanup: RwLock<Option<CleanupHook>>,
}

struct Shared {
    host: HostState,
    profiles: Profiles,
}

pub struct Runtime {
    generic: HandlerModule,
    generic_program: Arc<Program>,
    shared: Mutex<Shared>,
    handlers: BTreeMap<String, Handler>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

impl Runtime {
    /// Validates and binds `m` against `host`. Every function becomes a
    /// handler running its generic version.
    pub fn load_generic(m: HandlerModule, host: HostState) -> Result<Runtime, EngineError> {
        validate_module(&m).map_err(EngineError::Invalid)?;
        let program = Arc::new(Program::compile(&m, &host).map_err(EngineError::Bind)?);
        let handlers = m
            .functions
            .iter()
            .map(|f| {
                let v = FunctionVersion {
                    version_id: next_version(),
                    handler: f.name.clone(),
                    module: None,
                    config_id: SpecConfig::new().id(),
                    installed_at: Instant::now(),
                    program: program.clone(),
                };
                let h = Handler {
                    active: RwLock::new(Arc::new(v)),
                    counters: Mutex::new(Counters::default()),
                    cleanup: RwLock::new(None),
                };
                (f.name.clone(), h)
            })
            .collect();
        Ok(Runtime {
            generic: m,
            generic_program: program,
            shared: Mutex::new(Shared {
                host,
                profiles: Profiles::new(),
            }),
            handlers,
        })
    }

    pub fn generic_module(&self) -> &HandlerModule {
        &self.generic
    }

    pub fn handler_names(&self) -> impl Iterator<Item = &str> {
        self.handlers.keys().map(String::as_str)
    }

    fn handler(&self, name: &str) -> Result<&Handler, EngineError> {
        self.handlers
            .get(name)
            .ok_or_else(|| EngineError::UnknownHandler(name.to_string()))
    }

    pub fn has_handler(&self, name: &str) -> bool {
        self.handlers.contains_key(name)
    }

    /// Makes `sm` the active version of `name` and returns its version id.
    pub fn install(&self, name: &str, sm: SpecializedModule) -> Result<u64, EngineError> {
        let h = self.handler(name)?;
        let generic = self
            .generic
            .function(name)
            .expect("handler names come from the module");
        match sm.module.function(name) {
            Some(f) if f.params == generic.params && f.ret == generic.ret => {}
            _ => return Err(EngineError::NameMismatch(name.to_string())),
        }
        validate_module(&sm.module).map_err(EngineError::Invalid)?;
        let program = {
            let shared = lock(&self.shared);
            Program::compile(&sm.module, &shared.host).map_err(EngineError::Bind)?
        };
        let v = FunctionVersion {
            version_id: next_version(),
            handler: name.to_string(),
            config_id: sm.config.id(),
            module: Some(sm),
            installed_at: Instant::now(),
            program: Arc::new(program),
        };
        let id = v.version_id;
        *h.active.write().unwrap_or_else(|p| p.into_inner()) = Arc::new(v);
        log::debug!("installed version {id} of `{name}`");
        Ok(id)
    }

    /// Reverts `name` to its generic version.
    pub fn reset_to_generic(&self, name: &str) -> Result<u64, EngineError> {
        let h = self.handler(name)?;
        let v = FunctionVersion {
            version_id: next_version(),
            handler: name.to_string(),
            module: None,
            config_id: SpecConfig::new().id(),
            installed_at: Instant::now(),
            program: self.generic_program.clone(),
        };
        let id = v.version_id;
        *h.active.write().unwrap_or_else(|p| p.into_inner()) = Arc::new(v);
        Ok(id)
    }

    pub fn active_version(&self, name: &str) -> Result<Arc<FunctionVersion>, EngineError> {
        Ok(self
            .handler(name)?
            .active
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .clone())
    }

    pub fn register_cleanup(&self, name: &str, hook: CleanupHook) -> Result<(), EngineError> {
        *self
            .handler(name)?
            .cleanup
            .write()
            .unwrap_or_else(|p| p.into_inner()) = Some(hook);
        Ok(())
    }

    /// Runs `name` through its trampoline. Guard failures never reach the
    /// caller: the cleanup hook runs and the generic version answers.
    pub fn invoke(&self, name: &str, args: &[Value]) -> Result<Value, EngineError> {
        let h = self.handler(name)?;
        let version = h.active.read().unwrap_or_else(|p| p.into_inner()).clone();
        let mut shared = lock(&self.shared);
        let Shared { host, profiles } = &mut *shared;
        let mut ctx = ExecCtx::new(host, profiles);
        let first = version.program.call(name, args, &mut ctx);
        let mut ops = ctx.ops;
        let mut guard_failed = false;
        let result = match first {
            Err(e) if e.is_guard_fail() => {
                guard_failed = true;
                log::trace!("`{name}` v{}: {e}; falling back", version.version_id);
                let hook = h.cleanup.read().unwrap_or_else(|p| p.into_inner()).clone();
                if let Some(hook) = hook {
                    hook(host, args);
                }
                let mut ctx = ExecCtx::new(host, profiles);
                let r = self.generic_program.call(name, args, &mut ctx);
                ops += ctx.ops;
                r
            }
            other => other,
        };
        let mut c = lock(&h.counters);
        c.invocations += 1;
        c.ops_executed += ops;
        if guard_failed {
            c.guard_failures += 1;
        } else if !version.is_generic() && result.is_ok() {
            c.specialized_hits += 1;
        }
        drop(c);
        result.map_err(EngineError::Trap)
    }

    /// Adds application work units to `name`'s counters.
    pub fn record_work(&self, name: &str, units: u64) -> Result<(), EngineError> {
        lock(&self.handler(name)?.counters).work_units += units;
        Ok(())
    }

    pub fn stats(&self, name: &str) -> Result<Counters, EngineError> {
        Ok(*lock(&self.handler(name)?.counters))
    }

    pub fn reset_counters(&self, name: &str) -> Result<(), EngineError> {
        *lock(&self.handler(name)?.counters) = Counters::default();
        Ok(())
    }

    /// Runs `f` with exclusive access to host state, between invocations.
    pub fn with_host<R>(&self, f: impl FnOnce(&mut HostState) -> R) -> R {
        f(&mut lock(&self.shared).host)
    }

    /// Snapshot copy of all profiles.
    pub fn profiles(&self) -> Profiles {
        lock(&self.shared).profiles.clone()
    }

    pub fn reset_profiles(&self) {
        lock(&self.shared).profiles.clear();
    }
}

impl std::fmt::Debug for Runtime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Runtime")
            .field("handlers", &self.handlers.keys().collect::<Vec<_>>())
            .finish()
    }
}
