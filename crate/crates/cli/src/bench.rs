use std::fs;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc};
use std::thread;
use std::time::{Duration, Instant};

use anyhow::Context;
use mandelbench::backends::BackendKind;
use mandelbench::fractal::{Precision, Window};
use mandelbench::harness::{Harness, SampleFile};
use mandelbench::report::{file_stem, RunMatrix};

use crate::host::DeviceHost;
use crate::BenchArgs;

/// Exit status after an interrupt, as shells report SIGINT.
const INTERRUPTED: u8 = 130;

/// Splits a backend list on commas, keeping `vector:L,threads:N` together.
pub fn split_backends(list: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for part in list.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match out.last_mut() {
            Some(prev) if part.starts_with("threads:") => {
                prev.push(',');
                prev.push_str(part);
            }
            _ => out.push(part.to_string()),
        }
    }
    out
}

fn parse_list<T: std::str::FromStr>(list: &str, what: &str) -> anyhow::Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    list.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.parse::<T>()
                .map_err(|e| anyhow::anyhow!("{what} `{p}`: {e}"))
        })
        .collect()
}

/// Sleeps in short slices so an interrupt cuts a pause short.
fn interruptible_pause(flag: &AtomicBool, length: Duration) {
    let end = Instant::now() + length;
    while !flag.load(Ordering::SeqCst) {
        let now = Instant::now();
        if now >= end {
            break;
        }
        thread::sleep((end - now).min(Duration::from_millis(20)));
    }
}

pub fn run(args: BenchArgs) -> anyhow::Result<ExitCode> {
    let backends = split_backends(&args.backends)
        .iter()
        .map(|b| b.parse::<BackendKind>())
        .collect::<Result<Vec<_>, _>>()?;
    let windows = match args.rect.window()? {
        Some(w) => vec![w],
        None => parse_list::<usize>(&args.windows, "window")?
            .into_iter()
            .map(Window::builtin)
            .collect::<Result<_, _>>()?,
    };
    let precisions = parse_list::<Precision>(&args.precisions, "precision")?;
    let mut configs = RunMatrix::expand(&backends, &windows, &precisions, args.profile)?
        .configs()
        .to_vec();
    for c in &mut configs {
        if let Some(d) = args.dims {
            c.dims = d;
        }
        if let Some(r) = args.repetitions {
            c.repetitions = r;
        }
    }
    let matrix = RunMatrix::from_configs(configs)?;

    let host = match backends.iter().any(BackendKind::is_device) {
        true => Some(DeviceHost::new(args.lib.as_deref())?),
        false => None,
    };
    if let (Some(ms), Some(d)) = (
        args.launch_delay_ms,
        host.as_ref().and_then(|h| h.virtual_device.as_ref()),
    ) {
        d.set_launch_delay(Duration::from_millis(ms));
    }
    let harness = match &host {
        Some(h) => Harness::with_guard(h.guard.clone()),
        None => Harness::cpu_only(),
    };

    let interrupted = Arc::new(AtomicBool::new(false));
    let (stopped_tx, stopped_rx) = mpsc::channel::<String>();
    {
        let interrupted = interrupted.clone();
        let guard = host.as_ref().map(|h| h.guard.clone());
        ctrlc::set_handler(move || {
            if interrupted.swap(true, Ordering::SeqCst) {
                return;
            }
            let outcome = match &guard {
                Some(g) => match g.stop() {
                    Ok(o) => format!("guard drained, library {o:?}"),
                    Err(e) => format!("stop failed: {e}"),
                },
                None => "no device in use".to_string(),
            };
            let _ = stopped_tx.send(outcome);
        })
        .context("installing interrupt handler")?;
    }

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut failures = 0;
    for config in matrix.configs() {
        if interrupted.load(Ordering::SeqCst) {
            break;
        }
        let stem = file_stem(config);
        log::info!("running {stem}");
        let flag = interrupted.clone();
        let mut pauser = move |d: Duration| interruptible_pause(&flag, d);
        match harness.run_series_with(config, &mut pauser) {
            Ok(series) => {
                let path = args.out.join(format!("{stem}.samples"));
                let file = SampleFile::new(*config, series.samples);
                mandelbench::harness::persist_samples(&file, &path)?;
                println!("wrote {}", path.display());
            }
            Err(e) => {
                failures += 1;
                println!("error: {stem}: {e}");
            }
        }
    }

    if interrupted.load(Ordering::SeqCst) {
        let wait =
            host.as_ref().map_or(Duration::ZERO, |h| h.guard.deadline()) + Duration::from_secs(1);
        match stopped_rx.recv_timeout(wait) {
            Ok(outcome) => eprintln!("interrupted: {outcome}"),
            Err(_) => eprintln!("warning: guard stop did not finish within {wait:?}"),
        }
    }
    if let Some(h) = &host {
        for w in h.leak_warnings() {
            eprintln!("warning: {w}");
        }
    }
    if interrupted.load(Ordering::SeqCst) {
        println!("error: interrupted");
        return Ok(ExitCode::from(INTERRUPTED));
    }
    Ok(if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backend_lists_keep_thread_suffix() {
        assert_eq!(
            split_backends("scalar, vector:4,threads:2,threaded:4,vector:8"),
            vec!["scalar", "vector:4,threads:2", "threaded:4", "vector:8"]
        );
        assert!(split_backends(" , ").is_empty());
    }
}
