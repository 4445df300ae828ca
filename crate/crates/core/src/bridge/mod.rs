//! Runtime-loaded native compute library.
//!
//! The bridge forwards calls into a library that is loaded on first use and
//! may be unloaded whenever it is idle. Every call takes the shared side of a
//! reader-preferred usage lock and then the state mutex (always in that
//! order), loads the library if it was evicted, resolves the symbol if this
//! load generation has not seen it yet, drops the mutex, and only then enters
//! the library. [`NativeBridge::unload_library`] takes the exclusive side, so
//! it waits for in-flight calls and never overlaps one.
//!
//! Readers win under contention: with a writer-first policy a steady stream of
//! calls would reload the library right after every unload.

mod loader;
mod virtual_lib;

pub use virtual_lib::{LibraryProbe, VirtualLibrary, VirtualLibraryBuilder};

use std::any::Any;
use std::collections::HashMap;
use std::ffi::c_void;
use std::fmt;
use std::path::PathBuf;
use std::ptr::NonNull;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use crate::sync::{Preference, PreferenceRwLock};

/// Prefix that selects a registered [`VirtualLibrary`] instead of a file.
pub const VIRTUAL_PREFIX: &str = "virtual:";

/// Opaque argument block passed to a virtual entry point.
pub type ArgBlock = dyn Any + Send;

/// Entry point of a virtual library. Returns a status code, 0 on success.
pub type VirtualFn = Arc<dyn Fn(&mut ArgBlock) -> i32 + Send + Sync>;

/// Address of a symbol in an OS shared library.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NativeSymbol(NonNull<c_void>);

// SAFETY: a code address carries no thread affinity.
unsafe impl Send for NativeSymbol {}
unsafe impl Sync for NativeSymbol {}

impl NativeSymbol {
    pub fn as_ptr(self) -> *mut c_void {
        self.0.as_ptr()
    }
}

#[derive(Clone)]
pub enum EntryPoint {
    Virtual(VirtualFn),
    Native(NativeSymbol),
}

impl fmt::Debug for EntryPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EntryPoint::Virtual(_) => f.write_str("EntryPoint::Virtual"),
            EntryPoint::Native(s) => write!(f, "EntryPoint::Native({:p})", s.as_ptr()),
        }
    }
}

pub(crate) trait LoadedLibrary: Send {
    fn resolve(&self, symbol: &str) -> Option<EntryPoint>;
    fn describe(&self) -> String;
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BridgeError {
    #[error("library path must not be empty")]
    InvalidPath,
    #[error("no library path has been configured")]
    NotConfigured,
    #[error("cannot change the library path while `{0}` is loaded")]
    PathChangeWhileLoaded(String),
    #[error("failed to load `{path}`: {reason}")]
    LoadFailed { path: String, reason: String },
    #[error("symbol `{0}` cannot be resolved")]
    SymbolUnresolved(String),
    #[error("`{symbol}` returned status {status}")]
    CallFailed { symbol: String, status: i32 },
    #[error("`{0}` is a native entry point and needs a typed call")]
    NativeEntry(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum LibraryPath {
    Os(PathBuf),
    Virtual(String),
}

impl fmt::Display for LibraryPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LibraryPath::Os(p) => write!(f, "{}", p.display()),
            LibraryPath::Virtual(name) => write!(f, "{VIRTUAL_PREFIX}{name}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoadState {
    NeverLoaded,
    Loaded,
    Unloaded,
}

/// Snapshot of the bridge taken under the state mutex.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LibraryState {
    pub state: LoadState,
    pub path: Option<LibraryPath>,
    /// Successful loads so far.
    pub generation: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnloadOutcome {
    Unloaded,
    AlreadyUnloaded,
    /// Nothing was ever loaded. Informational, not an error.
    NotLoaded,
}

struct BridgeInner {
    state: LoadState,
    path: Option<LibraryPath>,
    library: Option<Box<dyn LoadedLibrary>>,
    symbols: HashMap<String, Option<EntryPoint>>,
    generation: u64,
    resolutions: u64,
    virtuals: HashMap<String, Arc<VirtualLibrary>>,
}

pub struct NativeBridge {
    usage: PreferenceRwLock,
    inner: Mutex<BridgeInner>,
}

impl Default for NativeBridge {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for NativeBridge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NativeBridge")
            .field("state", &self.library_state())
            .finish()
    }
}

impl NativeBridge {
    pub fn new() -> Self {
        NativeBridge {
            usage: PreferenceRwLock::new(Preference::Reader),
            inner: Mutex::new(BridgeInner {
                state: LoadState::NeverLoaded,
                path: None,
                library: None,
                symbols: HashMap::new(),
                generation: 0,
                resolutions: 0,
                virtuals: HashMap::new(),
            }),
        }
    }

    fn inner(&self) -> MutexGuard<'_, BridgeInner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Makes `lib` loadable as `virtual:<name>`.
    pub fn register_virtual(&self, lib: Arc<VirtualLibrary>) {
        self.inner().virtuals.insert(lib.name().to_string(), lib);
    }

    /// Records where to load the library from. Nothing is loaded until the
    /// first call. The path cannot change while a library is loaded.
    pub fn configure_library_path(&self, path: &str) -> Result<(), BridgeError> {
        let path = path.trim();
        if path.is_empty() {
            return Err(BridgeError::InvalidPath);
        }
        let path = match path.strip_prefix(VIRTUAL_PREFIX) {
            Some("") => return Err(BridgeError::InvalidPath),
            Some(name) => LibraryPath::Virtual(name.to_string()),
            None => LibraryPath::Os(PathBuf::from(path)),
        };
        let mut inner = self.inner();
        if inner.state == LoadState::Loaded && inner.path.as_ref() != Some(&path) {
            let current = inner
                .path
                .as_ref()
                .map(|p| p.to_string())
                .unwrap_or_default();
            return Err(BridgeError::PathChangeWhileLoaded(current));
        }
        inner.path = Some(path);
        Ok(())
    }

    /// Runs `call` with the resolved entry point for `symbol`.
    ///
    /// The library is (re)loaded if needed. `call` runs with the usage lock
    /// held in shared mode but without the state mutex, so calls proceed
    /// concurrently.
    pub fn invoke_with<R>(
        &self,
        symbol: &str,
        call: impl FnOnce(&EntryPoint) -> R,
    ) -> Result<R, BridgeError> {
        self.invoke_timed(symbol, call).map(|(r, _)| r)
    }

    /// Like [`NativeBridge::invoke_with`], also returning the time spent
    /// acquiring the usage lock and the state mutex.
    pub fn invoke_timed<R>(
        &self,
        symbol: &str,
        call: impl FnOnce(&EntryPoint) -> R,
    ) -> Result<(R, Duration), BridgeError> {
        let started = Instant::now();
        let _usage = self.usage.read();
        let (entry, lock_wait) = {
            let mut inner = self.inner();
            let lock_wait = started.elapsed();
            Self::ensure_loaded(&mut inner)?;
            (Self::resolve(&mut inner, symbol)?, lock_wait)
        };
        Ok((call(&entry), lock_wait))
    }

    /// Calls a virtual entry point with an opaque argument block. Non-zero
    /// status codes become [`BridgeError::CallFailed`].
    pub fn call(&self, symbol: &str, args: &mut ArgBlock) -> Result<(), BridgeError> {
        self.call_timed(symbol, args).map(|_| ())
    }

    pub fn call_timed(&self, symbol: &str, args: &mut ArgBlock) -> Result<Duration, BridgeError> {
        let (status, wait) = self.invoke_timed(symbol, |entry| match entry {
            EntryPoint::Virtual(f) => Some(f(args)),
            EntryPoint::Native(_) => None,
        })?;
        match status {
            None => Err(BridgeError::NativeEntry(symbol.to_string())),
            Some(0) => Ok(wait),
            Some(status) => Err(BridgeError::CallFailed {
                symbol: symbol.to_string(),
                status,
            }),
        }
    }

    fn ensure_loaded(inner: &mut BridgeInner) -> Result<(), BridgeError> {
        if inner.state == LoadState::Loaded {
            return Ok(());
        }
        let path = inner.path.clone().ok_or(BridgeError::NotConfigured)?;
        let library =
            match &path {
                LibraryPath::Virtual(name) => match inner.virtuals.get(name) {
                    Some(lib) => lib.open(),
                    None => {
                        return Err(BridgeError::LoadFailed {
                            path: path.to_string(),
                            reason: "no virtual library registered under that name".into(),
                        })
                    }
                },
                LibraryPath::Os(p) => Box::new(loader::OsLibrary::open(p).map_err(|reason| {
                    BridgeError::LoadFailed {
                        path: path.to_string(),
                        reason,
                    }
                })?),
            };
        log::debug!("loaded {}", library.describe());
        inner.symbols.clear();
        inner.library = Some(library);
        inner.state = LoadState::Loaded;
        inner.generation += 1;
        Ok(())
    }

    fn resolve(inner: &mut BridgeInner, symbol: &str) -> Result<EntryPoint, BridgeError> {
        if let Some(cached) = inner.symbols.get(symbol) {
            return cached
                .clone()
                .ok_or_else(|| BridgeError::SymbolUnresolved(symbol.to_string()));
        }
        let lib = inner
            .library
            .as_ref()
            .expect("resolve requires a loaded library");
        let entry = lib.resolve(symbol);
        inner.resolutions += 1;
        inner.symbols.insert(symbol.to_string(), entry.clone());
        entry.ok_or_else(|| BridgeError::SymbolUnresolved(symbol.to_string()))
    }

    /// Evicts the library once no call is in flight. The next call reloads it
    /// from the stored path.
    pub fn unload_library(&self) -> UnloadOutcome {
        let _exclusive = self.usage.write();
        let mut inner = self.inner();
        match inner.state {
            LoadState::NeverLoaded => UnloadOutcome::NotLoaded,
            LoadState::Unloaded => UnloadOutcome::AlreadyUnloaded,
            LoadState::Loaded => {
                inner.state = LoadState::Unloaded;
                inner.symbols.clear();
                if let Some(lib) = inner.library.take() {
                    log::debug!("unloading {}", lib.describe());
                }
                UnloadOutcome::Unloaded
            }
        }
    }

    pub fn library_state(&self) -> LibraryState {
        let inner = self.inner();
        LibraryState {
            state: inner.state,
            path: inner.path.clone(),
            generation: inner.generation,
        }
    }

    /// Total symbol lookups performed against loaded libraries.
    pub fn resolution_count(&self) -> u64 {
        self.inner().resolutions
    }

    /// Calls currently holding the usage lock.
    pub fn in_flight(&self) -> usize {
        self.usage.readers()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::thread;

    fn echo_lib(name: &str) -> Arc<VirtualLibrary> {
        VirtualLibrary::builder(name)
            .entry("double", |args| match args.downcast_mut::<i64>() {
                Some(v) => {
                    *v *= 2;
                    0
                }
                None => -30,
            })
            .entry("fail", |_| -5)
            .build()
    }

    fn bridge_with(lib: &Arc<VirtualLibrary>) -> NativeBridge {
        let b = NativeBridge::new();
        b.register_virtual(lib.clone());
        b
    }

    #[test]
    fn fresh_bridge_is_never_loaded() {
        let b = NativeBridge::new();
        assert_eq!(b.library_state().state, LoadState::NeverLoaded);
        assert_eq!(b.unload_library(), UnloadOutcome::NotLoaded);
    }

    #[test]
    fn invoke_before_configure_is_not_configured() {
        let b = NativeBridge::new();
        let mut v = 1i64;
        assert_eq!(b.call("double", &mut v), Err(BridgeError::NotConfigured));
    }

    #[test]
    fn empty_path_rejected() {
        let b = NativeBridge::new();
        assert_eq!(b.configure_library_path(""), Err(BridgeError::InvalidPath));
        assert_eq!(
            b.configure_library_path("virtual:"),
            Err(BridgeError::InvalidPath)
        );
    }

    #[test]
    fn configure_is_lazy() {
        let lib = echo_lib("echo");
        let b = bridge_with(&lib);
        b.configure_library_path("/vendor/lib64/libOpenCL.so")
            .unwrap();
        assert_eq!(b.library_state().state, LoadState::NeverLoaded);
        b.configure_library_path("virtual:echo").unwrap();
        assert_eq!(b.library_state().state, LoadState::NeverLoaded);
        assert_eq!(lib.probe().generation(), 0);

        let mut v = 21i64;
        b.call("double", &mut v).unwrap();
        assert_eq!(v, 42);
        let s = b.library_state();
        assert_eq!(s.state, LoadState::Loaded);
        assert_eq!(s.path, Some(LibraryPath::Virtual("echo".into())));
    }

    #[test]
    fn unload_then_invoke_reloads_once() {
        let lib = echo_lib("echo");
        let b = bridge_with(&lib);
        b.configure_library_path("virtual:echo").unwrap();
        let mut v = 1i64;
        b.call("double", &mut v).unwrap();
        assert_eq!(b.unload_library(), UnloadOutcome::Unloaded);
        assert_eq!(b.library_state().state, LoadState::Unloaded);
        assert!(!lib.probe().is_loaded());
        assert_eq!(b.unload_library(), UnloadOutcome::AlreadyUnloaded);

        b.call("double", &mut v).unwrap();
        b.call("double", &mut v).unwrap();
        assert_eq!(v, 8);
        assert_eq!(lib.probe().generation(), 2);
        assert_eq!(b.library_state().generation, 2);
        assert_eq!(lib.probe().resolutions_of("double", 1), 1);
        assert_eq!(lib.probe().resolutions_of("double", 2), 1);
    }

    #[test]
    fn unresolved_symbol_is_cached() {
        let lib = echo_lib("echo");
        let b = bridge_with(&lib);
        b.configure_library_path("virtual:echo").unwrap();
        let mut v = 0i64;
        for _ in 0..3 {
            assert_eq!(
                b.call("no_such_symbol", &mut v),
                Err(BridgeError::SymbolUnresolved("no_such_symbol".into()))
            );
        }
        assert_eq!(lib.probe().resolutions_of("no_such_symbol", 1), 1);
        assert_eq!(b.resolution_count(), 1);
    }

    #[test]
    fn status_codes_pass_through() {
        let lib = echo_lib("echo");
        let b = bridge_with(&lib);
        b.configure_library_path("virtual:echo").unwrap();
        let mut v = 0u8;
        assert_eq!(
            b.call("fail", &mut v),
            Err(BridgeError::CallFailed {
                symbol: "fail".into(),
                status: -5
            })
        );
        assert_eq!(
            b.call("double", &mut v),
            Err(BridgeError::CallFailed {
                symbol: "double".into(),
                status: -30
            })
        );
    }

    #[test]
    fn unknown_virtual_name_fails_to_load() {
        let b = NativeBridge::new();
        b.configure_library_path("virtual:missing").unwrap();
        let mut v = 0i64;
        assert!(matches!(
            b.call("double", &mut v),
            Err(BridgeError::LoadFailed { .. })
        ));
        assert_eq!(b.library_state().state, LoadState::NeverLoaded);
    }

    #[test]
    fn path_change_requires_unload() {
        let lib = echo_lib("echo");
        let b = bridge_with(&lib);
        b.register_virtual(echo_lib("other"));
        b.configure_library_path("virtual:echo").unwrap();
        let mut v = 1i64;
        b.call("double", &mut v).unwrap();
        assert!(matches!(
            b.configure_library_path("virtual:other"),
            Err(BridgeError::PathChangeWhileLoaded(_))
        ));
        b.configure_library_path("virtual:echo").unwrap();
        b.unload_library();
        b.configure_library_path("virtual:other").unwrap();
        b.call("double", &mut v).unwrap();
        assert_eq!(lib.probe().generation(), 1);
    }

    #[test]
    fn missing_os_library_fails_to_load() {
        let b = NativeBridge::new();
        b.configure_library_path("/nonexistent/libnothing.so")
            .unwrap();
        let err = b.invoke_with("anything", |_| ()).unwrap_err();
        assert!(matches!(err, BridgeError::LoadFailed { .. }));
    }

    #[test]
    fn unload_waits_for_in_flight_calls() {
        let gate = Arc::new(std::sync::Barrier::new(5));
        let g2 = gate.clone();
        let lib = VirtualLibrary::builder("slow")
            .entry("work", move |_| {
                g2.wait();
                thread::sleep(Duration::from_millis(50));
                0
            })
            .build();
        let b = Arc::new(bridge_with(&lib));
        b.configure_library_path("virtual:slow").unwrap();
        let done = Arc::new(AtomicUsize::new(0));
        let workers: Vec<_> = (0..4)
            .map(|_| {
                let (b, done) = (b.clone(), done.clone());
                thread::spawn(move || {
                    b.call("work", &mut ()).unwrap();
                    done.fetch_add(1, Ordering::SeqCst);
                })
            })
            .collect();
        gate.wait();
        assert_eq!(b.unload_library(), UnloadOutcome::Unloaded);
        assert_eq!(lib.probe().active_entries(), 0);
        assert_eq!(lib.probe().peak_active_entries(), 4);
        for w in workers {
            w.join().unwrap();
        }
        assert_eq!(done.load(Ordering::SeqCst), 4);
        assert_eq!(lib.probe().entries_while_unloaded(), 0);
    }
}
