//! In-process stand-in for a shared library.
//!
//! A [`VirtualLibrary`] maps symbol names to Rust closures and records every
//! load, resolution and entry so tests can check the bridge's safety
//! properties without an OS loader.

use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use super::{ArgBlock, EntryPoint, LoadedLibrary, VirtualFn};

/// Counters shared by a virtual library and every entry point it hands out.
#[derive(Debug, Default)]
pub struct LibraryProbe {
    loaded: AtomicBool,
    generation: AtomicU64,
    active: AtomicUsize,
    peak_active: AtomicUsize,
    total_entries: AtomicU64,
    entries_while_unloaded: AtomicU64,
    resolutions: Mutex<HashMap<(String, u64), u32>>,
}

impl LibraryProbe {
    pub fn is_loaded(&self) -> bool {
        self.loaded.load(Ordering::SeqCst)
    }

    /// Number of loads so far.
    pub fn generation(&self) -> u64 {
        self.generation.load(Ordering::SeqCst)
    }

    /// Calls currently executing inside the library.
    pub fn active_entries(&self) -> usize {
        self.active.load(Ordering::SeqCst)
    }

    pub fn peak_active_entries(&self) -> usize {
        self.peak_active.load(Ordering::SeqCst)
    }

    pub fn total_entries(&self) -> u64 {
        self.total_entries.load(Ordering::SeqCst)
    }

    /// Entries observed while the library was not loaded. Must stay zero.
    pub fn entries_while_unloaded(&self) -> u64 {
        self.entries_while_unloaded.load(Ordering::SeqCst)
    }

    /// How often `symbol` was looked up during load generation `generation`.
    pub fn resolutions_of(&self, symbol: &str, generation: u64) -> u32 {
        let map = self.resolutions.lock().unwrap();
        map.get(&(symbol.to_string(), generation))
            .copied()
            .unwrap_or(0)
    }

    /// Largest resolution count over all (symbol, generation) pairs.
    pub fn max_resolutions_per_generation(&self) -> u32 {
        let map = self.resolutions.lock().unwrap();
        map.values().copied().max().unwrap_or(0)
    }

    pub fn distinct_resolutions(&self) -> usize {
        self.resolutions.lock().unwrap().len()
    }
}

pub struct VirtualLibrary {
    name: String,
    entries: HashMap<String, VirtualFn>,
    probe: Arc<LibraryProbe>,
}

impl fmt::Debug for VirtualLibrary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut symbols: Vec<_> = self.entries.keys().collect();
        symbols.sort();
        f.debug_struct("VirtualLibrary")
            .field("name", &self.name)
            .field("symbols", &symbols)
            .finish()
    }
}

impl VirtualLibrary {
    pub fn builder(name: impl Into<String>) -> VirtualLibraryBuilder {
        VirtualLibraryBuilder {
            name: name.into(),
            entries: HashMap::new(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn probe(&self) -> &Arc<LibraryProbe> {
        &self.probe
    }

    pub(crate) fn open(self: &Arc<Self>) -> Box<dyn LoadedLibrary> {
        let generation = self.probe.generation.fetch_add(1, Ordering::SeqCst) + 1;
        self.probe.loaded.store(true, Ordering::SeqCst);
        Box::new(VirtualHandle {
            lib: self.clone(),
            generation,
        })
    }
}

pub struct VirtualLibraryBuilder {
    name: String,
    entries: HashMap<String, VirtualFn>,
}

impl VirtualLibraryBuilder {
    pub fn entry<F>(mut self, symbol: &str, f: F) -> Self
    where
        F: Fn(&mut ArgBlock) -> i32 + Send + Sync + 'static,
    {
        self.entries.insert(symbol.to_string(), Arc::new(f));
        self
    }

    pub fn build(self) -> Arc<VirtualLibrary> {
        Arc::new(VirtualLibrary {
            name: self.name,
            entries: self.entries,
            probe: Arc::new(LibraryProbe::default()),
        })
    }
}

struct VirtualHandle {
    lib: Arc<VirtualLibrary>,
    generation: u64,
}

impl LoadedLibrary for VirtualHandle {
    fn resolve(&self, symbol: &str) -> Option<EntryPoint> {
        let probe = self.lib.probe.clone();
        *probe
            .resolutions
            .lock()
            .unwrap()
            .entry((symbol.to_string(), self.generation))
            .or_insert(0) += 1;
        let inner = self.lib.entries.get(symbol)?.clone();
        let wrapped: VirtualFn = Arc::new(move |args: &mut ArgBlock| {
            if !probe.is_loaded() {
                probe.entries_while_unloaded.fetch_add(1, Ordering::SeqCst);
            }
            let now = probe.active.fetch_add(1, Ordering::SeqCst) + 1;
            probe.peak_active.fetch_max(now, Ordering::SeqCst);
            probe.total_entries.fetch_add(1, Ordering::SeqCst);
            let status = inner(args);
            probe.active.fetch_sub(1, Ordering::SeqCst);
            status
        });
        Some(EntryPoint::Virtual(wrapped))
    }

    fn describe(&self) -> String {
        format!("virtual:{} (generation {})", self.lib.name, self.generation)
    }
}

impl Drop for VirtualHandle {
    fn drop(&mut self) {
        self.lib.probe.loaded.store(false, Ordering::SeqCst);
    }
}
