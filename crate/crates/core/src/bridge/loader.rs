//! OS shared libraries through the platform runtime loader.

use std::ffi::c_void;
use std::path::Path;
use std::ptr::NonNull;

use super::{EntryPoint, LoadedLibrary, NativeSymbol};

pub(crate) struct OsLibrary {
    path: String,
    lib: libloading::Library,
}

impl OsLibrary {
    pub(crate) fn open(path: &Path) -> Result<Self, String> {
        // SAFETY: loading runs the library's initializers. The bridge only
        // loads paths the caller configured explicitly.
        let lib = unsafe { libloading::Library::new(path) }.map_err(|e| e.to_string())?;
        Ok(OsLibrary {
            path: path.display().to_string(),
            lib,
        })
    }
}

impl LoadedLibrary for OsLibrary {
    fn resolve(&self, symbol: &str) -> Option<EntryPoint> {
        // SAFETY: the symbol is read as an untyped address; callers cast it to
        // the real signature before calling.
        let sym = unsafe { self.lib.get::<*mut c_void>(symbol.as_bytes()) }.ok()?;
        NonNull::new(*sym).map(|p| EntryPoint::Native(NativeSymbol(p)))
    }

    fn describe(&self) -> String {
        self.path.clone()
    }
}
