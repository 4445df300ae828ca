//! Shared/exclusive lock with an explicit preference policy.
//!
//! `std::sync::RwLock` leaves the policy to the platform. The library unload
//! protocol needs readers to win under contention and the stop protocol needs
//! the writer to win, so both are built on this lock instead.

use std::sync::{Condvar, Mutex, MutexGuard};
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preference {
    /// New readers enter while a writer waits; the writer gets in once
    /// readers drain.
    Reader,
    /// A waiting writer blocks new readers.
    Writer,
}

#[derive(Debug, Default)]
struct State {
    readers: usize,
    writer: bool,
    writers_waiting: usize,
}

#[derive(Debug)]
pub struct PreferenceRwLock {
    preference: Preference,
    state: Mutex<State>,
    changed: Condvar,
}

impl PreferenceRwLock {
    pub fn new(preference: Preference) -> Self {
        PreferenceRwLock {
            preference,
            state: Mutex::new(State::default()),
            changed: Condvar::new(),
        }
    }

    pub fn preference(&self) -> Preference {
        self.preference
    }

    fn state(&self) -> MutexGuard<'_, State> {
        // The protected counters are updated atomically under the mutex, so a
        // panic elsewhere cannot leave them half-written.
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn reader_may_enter(&self, s: &State) -> bool {
        !s.writer && (self.preference == Preference::Reader || s.writers_waiting == 0)
    }

    pub fn read(&self) -> SharedGuard<'_> {
        self.lock_shared();
        SharedGuard { lock: self }
    }

    pub fn write(&self) -> ExclusiveGuard<'_> {
        let acquired = self.lock_exclusive_until(None);
        debug_assert!(acquired);
        ExclusiveGuard { lock: self }
    }

    /// Exclusive acquisition with a deadline. `None` on timeout; the attempt
    /// is withdrawn so readers blocked behind it may proceed.
    pub fn write_until(&self, deadline: Instant) -> Option<ExclusiveGuard<'_>> {
        self.lock_exclusive_until(Some(deadline))
            .then_some(ExclusiveGuard { lock: self })
    }

    pub(crate) fn lock_shared(&self) {
        let mut s = self.state();
        while !self.reader_may_enter(&s) {
            s = self.changed.wait(s).unwrap_or_else(|e| e.into_inner());
        }
        s.readers += 1;
    }

    pub(crate) fn unlock_shared(&self) {
        let mut s = self.state();
        assert!(s.readers > 0, "shared unlock without a matching lock");
        s.readers -= 1;
        if s.readers == 0 {
            self.changed.notify_all();
        }
    }

    fn lock_exclusive_until(&self, deadline: Option<Instant>) -> bool {
        let mut s = self.state();
        s.writers_waiting += 1;
        while s.writer || s.readers > 0 {
            match deadline {
                None => s = self.changed.wait(s).unwrap_or_else(|e| e.into_inner()),
                Some(d) => {
                    let now = Instant::now();
                    if now >= d {
                        s.writers_waiting -= 1;
                        self.changed.notify_all();
                        return false;
                    }
                    s = self
                        .changed
                        .wait_timeout(s, d - now)
                        .unwrap_or_else(|e| e.into_inner())
                        .0;
                }
            }
        }
        s.writers_waiting -= 1;
        s.writer = true;
        true
    }

    fn unlock_exclusive(&self) {
        let mut s = self.state();
        s.writer = false;
        self.changed.notify_all();
    }

    /// Number of current shared holders.
    pub fn readers(&self) -> usize {
        self.state().readers
    }

    pub fn writers_waiting(&self) -> usize {
        self.state().writers_waiting
    }
}

#[must_use]
pub struct SharedGuard<'a> {
    lock: &'a PreferenceRwLock,
}

impl Drop for SharedGuard<'_> {
    fn drop(&mut self) {
        self.lock.unlock_shared();
    }
}

#[must_use]
pub struct ExclusiveGuard<'a> {
    lock: &'a PreferenceRwLock,
}

impl Drop for ExclusiveGuard<'_> {
    fn drop(&mut self) {
        self.lock.unlock_exclusive();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
    use std::sync::{mpsc, Arc};
    use std::thread;
    use std::time::Duration;

    #[test]
    fn readers_share() {
        let l = PreferenceRwLock::new(Preference::Writer);
        let a = l.read();
        let b = l.read();
        assert_eq!(l.readers(), 2);
        drop((a, b));
        assert_eq!(l.readers(), 0);
        let _w = l.write();
    }

    #[test]
    fn write_until_times_out_and_withdraws() {
        let l = PreferenceRwLock::new(Preference::Writer);
        let r = l.read();
        assert!(l
            .write_until(Instant::now() + Duration::from_millis(20))
            .is_none());
        assert_eq!(l.writers_waiting(), 0);
        // A new reader is not blocked by the withdrawn writer.
        let r2 = l.read();
        drop((r, r2));
        assert!(l
            .write_until(Instant::now() + Duration::from_millis(20))
            .is_some());
    }

    fn reader_blocked_behind_waiting_writer(pref: Preference) -> bool {
        let l = Arc::new(PreferenceRwLock::new(pref));
        let held = l.read();
        let l2 = l.clone();
        let writer = thread::spawn(move || {
            let _w = l2.write();
        });
        while l.writers_waiting() == 0 {
            thread::yield_now();
        }
        let entered = Arc::new(AtomicBool::new(false));
        let (tx, rx) = mpsc::channel();
        let (l3, e3) = (l.clone(), entered.clone());
        let reader = thread::spawn(move || {
            let _r = l3.read();
            e3.store(true, Ordering::SeqCst);
            tx.send(()).unwrap();
        });
        let got_in = rx.recv_timeout(Duration::from_millis(100)).is_ok();
        drop(held);
        writer.join().unwrap();
        reader.join().unwrap();
        !got_in
    }

    #[test]
    fn writer_preference_blocks_new_readers() {
        assert!(reader_blocked_behind_waiting_writer(Preference::Writer));
    }

    #[test]
    fn reader_preference_admits_new_readers() {
        assert!(!reader_blocked_behind_waiting_writer(Preference::Reader));
    }

    #[test]
    fn exclusive_is_exclusive() {
        let l = Arc::new(PreferenceRwLock::new(Preference::Reader));
        let inside = Arc::new(AtomicUsize::new(0));
        let handles: Vec<_> = (0..4)
            .map(|_| {
                let (l, inside) = (l.clone(), inside.clone());
                thread::spawn(move || {
                    for _ in 0..200 {
                        let _w = l.write();
                        assert_eq!(inside.fetch_add(1, Ordering::SeqCst), 0);
                        inside.fetch_sub(1, Ordering::SeqCst);
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
    }
}
