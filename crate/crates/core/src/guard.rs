//! Stop/resume gate for device work.
//!
//! Guarded work takes the shared side of a writer-preferred gate, then the
//! flag mutex, and proceeds only if the stop flag is clear. [`LifecycleGuard::stop`]
//! sets the flag under the mutex (without holding the gate), then takes the
//! exclusive side. Because the writer wins, new arrivals queue behind it
//! instead of starving it, and once it is through they all see the flag and
//! back out. The exclusive side is released straight away and the native
//! library is unloaded.
//!
//! A running kernel cannot be cancelled, so long pipelines poll
//! [`LifecycleGuard::checkpoint`] between stages.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread;
use std::time::{Duration, Instant};

use crate::bridge::{NativeBridge, UnloadOutcome};
use crate::sync::{Preference, PreferenceRwLock};

/// Default bound on how long [`LifecycleGuard::stop`] waits for guarded work.
pub const DEFAULT_STOP_DEADLINE: Duration = Duration::from_secs(5);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GuardError {
    #[error("stopped: device work is not permitted until resume")]
    Stopped,
    #[error("guard token already released")]
    AlreadyReleased,
    #[error("guard token belongs to a different guard")]
    ForeignToken,
    #[error("stop timed out after {deadline:?}; outstanding tokens: {}", list(.outstanding))]
    StopTimeout {
        deadline: Duration,
        outstanding: Vec<TokenInfo>,
    },
}

fn list(tokens: &[TokenInfo]) -> String {
    tokens
        .iter()
        .map(|t| t.to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

/// Who holds a token, for diagnosing a stuck shutdown.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenInfo {
    pub id: u64,
    pub thread: String,
    pub held_for: Duration,
}

impl fmt::Display for TokenInfo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "#{} entered on {} {:?} ago",
            self.id, self.thread, self.held_for
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Checkpoint {
    Continue,
    AbortRequested,
}

struct Shared {
    gate: PreferenceRwLock,
    stop_flag: Mutex<bool>,
    tokens: Mutex<BTreeMap<u64, (String, Instant)>>,
    next_id: AtomicU64,
    bridge: Arc<NativeBridge>,
    deadline: Duration,
}

impl Shared {
    fn flag(&self) -> MutexGuard<'_, bool> {
        self.stop_flag.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn tokens(&self) -> MutexGuard<'_, BTreeMap<u64, (String, Instant)>> {
        self.tokens.lock().unwrap_or_else(|e| e.into_inner())
    }
}

/// Cheap to clone; clones share one gate.
#[derive(Clone)]
pub struct LifecycleGuard {
    shared: Arc<Shared>,
}

impl fmt::Debug for LifecycleGuard {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LifecycleGuard")
            .field("stopping", &self.is_stopping())
            .field("outstanding", &self.outstanding_tokens())
            .finish()
    }
}

impl LifecycleGuard {
    pub fn new(bridge: Arc<NativeBridge>) -> Self {
        Self::with_deadline(bridge, DEFAULT_STOP_DEADLINE)
    }

    pub fn with_deadline(bridge: Arc<NativeBridge>, deadline: Duration) -> Self {
        LifecycleGuard {
            shared: Arc::new(Shared {
                gate: PreferenceRwLock::new(Preference::Writer),
                stop_flag: Mutex::new(false),
                tokens: Mutex::new(BTreeMap::new()),
                next_id: AtomicU64::new(1),
                bridge,
                deadline,
            }),
        }
    }

    pub fn bridge(&self) -> &Arc<NativeBridge> {
        &self.shared.bridge
    }

    pub fn deadline(&self) -> Duration {
        self.shared.deadline
    }

    /// Grants a token unless a stop is pending. On `Stopped` nothing is held.
    pub fn enter_guarded(&self) -> Result<GuardToken, GuardError> {
        self.shared.gate.lock_shared();
        let flag = self.shared.flag();
        if *flag {
            drop(flag);
            self.shared.gate.unlock_shared();
            return Err(GuardError::Stopped);
        }
        let id = self.shared.next_id.fetch_add(1, Ordering::Relaxed);
        let name = thread::current().name().map(str::to_string);
        let who = name.unwrap_or_else(|| format!("{:?}", thread::current().id()));
        self.shared.tokens().insert(id, (who, Instant::now()));
        drop(flag);
        Ok(GuardToken {
            shared: Some(self.shared.clone()),
            id,
        })
    }

    /// Releases `token`. Rejects tokens that were already released.
    pub fn leave_guarded(&self, token: &mut GuardToken) -> Result<(), GuardError> {
        match &token.shared {
            None => Err(GuardError::AlreadyReleased),
            Some(s) if !Arc::ptr_eq(s, &self.shared) => Err(GuardError::ForeignToken),
            Some(_) => token.leave(),
        }
    }

    /// Reports whether a stop is pending. Work in flight should free its
    /// resources, leave, and return an error when it sees `AbortRequested`.
    pub fn checkpoint(&self, _token: &GuardToken) -> Checkpoint {
        if *self.shared.flag() {
            Checkpoint::AbortRequested
        } else {
            Checkpoint::Continue
        }
    }

    /// Stops device work: refuses new entries, waits for every token to be
    /// released (up to the deadline), then unloads the native library.
    /// Calling it again is harmless.
    pub fn stop(&self) -> Result<UnloadOutcome, GuardError> {
        *self.shared.flag() = true;
        let deadline = Instant::now() + self.shared.deadline;
        match self.shared.gate.write_until(deadline) {
            Some(exclusive) => drop(exclusive),
            None => {
                return Err(GuardError::StopTimeout {
                    deadline: self.shared.deadline,
                    outstanding: self.outstanding(),
                })
            }
        }
        Ok(self.shared.bridge.unload_library())
    }

    /// Clears the stop flag. The library reloads on the next bridge call.
    pub fn resume(&self) {
        *self.shared.flag() = false;
    }

    pub fn is_stopping(&self) -> bool {
        *self.shared.flag()
    }

    pub fn outstanding_tokens(&self) -> usize {
        self.shared.tokens().len()
    }

    pub fn outstanding(&self) -> Vec<TokenInfo> {
        self.shared
            .tokens()
            .iter()
            .map(|(&id, (thread, since))| TokenInfo {
                id,
                thread: thread.clone(),
                held_for: since.elapsed(),
            })
            .collect()
    }
}

/// Proof of shared gate ownership. May be moved to another thread and
/// released there. Dropping an unreleased token releases it.
#[must_use = "dropping the token leaves the guarded section"]
pub struct GuardToken {
    shared: Option<Arc<Shared>>,
    id: u64,
}

impl fmt::Debug for GuardToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GuardToken")
            .field("id", &self.id)
            .field("live", &self.is_live())
            .finish()
    }
}

impl GuardToken {
    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn is_live(&self) -> bool {
        self.shared.is_some()
    }

    pub fn leave(&mut self) -> Result<(), GuardError> {
        let shared = self.shared.take().ok_or(GuardError::AlreadyReleased)?;
        shared.tokens().remove(&self.id);
        shared.gate.unlock_shared();
        Ok(())
    }
}

impl Drop for GuardToken {
    fn drop(&mut self) {
        let _ = self.leave();
    }
}
