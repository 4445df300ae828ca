//! Sample files.
//!
//! ```text
//! # mandelbench samples v1
//! # backend=vector:4
//! # window=-2,1,1,-1
//! # max_iter=80
//! # dims=400x268
//! # precision=single
//! # repetitions=10
//! # pause_every=10
//! # pause_seconds=0
//! # config_hash=<16 hex digits>
//! # note=free text            (any further keys are kept as notes)
//! index,wall_ms,boundary_ms,lock_ms,setup_ms,compute_ms
//! 0,12.345678,,,,
//! 1,0.91,0.02,0.004,0.5,0.386
//! ```
//!
//! Header lines start with `# ` and hold one `key=value` pair each; the first
//! is the format tag. The column line follows the header. Every record has
//! six comma-separated fields; the four breakdown fields are either all
//! empty or all present. Numbers use the shortest decimal form that parses
//! back to the same `f64`, so a load after a persist is bit-exact. Every
//! line ends with a newline; a final record without one is treated as
//! truncated.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use super::{BenchConfig, BenchSample, OverheadBreakdown};
use crate::backends::BackendKind;
use crate::fractal::{GridDims, Precision, Window};

const FORMAT_TAG: &str = "# mandelbench samples v1";

/// The column line.
pub const SAMPLE_COLUMNS: &str = "index,wall_ms,boundary_ms,lock_ms,setup_ms,compute_ms";

const CONFIG_KEYS: [&str; 9] = [
    "backend",
    "window",
    "max_iter",
    "dims",
    "precision",
    "repetitions",
    "pause_every",
    "pause_seconds",
    "config_hash",
];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SampleFileError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("line {line}, field `{field}`: {message}")]
    Parse {
        line: usize,
        field: String,
        message: String,
    },
    #[error("config hash mismatch: file has {in_file}, config has {given}")]
    HashMismatch { in_file: String, given: String },
}

fn parse_err(line: usize, field: &str, message: impl Into<String>) -> SampleFileError {
    SampleFileError::Parse {
        line,
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleFile {
    pub config: BenchConfig,
    pub samples: Vec<BenchSample>,
    /// Header keys beyond the configuration.
    pub notes: BTreeMap<String, String>,
}

impl SampleFile {
    pub fn new(config: BenchConfig, samples: Vec<BenchSample>) -> Self {
        SampleFile {
            config,
            samples,
            notes: BTreeMap::new(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(FORMAT_TAG);
        out.push('\n');
        for (k, v) in self.config.to_pairs() {
            let _ = writeln!(out, "# {k}={v}");
        }
        let _ = writeln!(out, "# config_hash={}", self.config.config_hash());
        for (k, v) in &self.notes {
            let _ = writeln!(out, "# {k}={}", v.replace('\n', " "));
        }
        out.push_str(SAMPLE_COLUMNS);
        out.push('\n');
        for s in &self.samples {
            out.push_str(&record(s));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, SampleFileError> {
        let total = text.lines().count();
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, l)) if l.trim_end() == FORMAT_TAG => {}
            _ => return Err(parse_err(1, "header", format!("expected `{FORMAT_TAG}`"))),
        }
        let mut header: BTreeMap<String, (usize, String)> = BTreeMap::new();
        let mut columns_seen = false;
        let mut samples = Vec::new();
        let mut last_line = 1;
        for (n, line) in lines {
            last_line = n;
            if !columns_seen {
                if let Some(pair) = line.strip_prefix("# ") {
                    let (k, v) = pair
                        .split_once('=')
                        .ok_or_else(|| parse_err(n, "header", "expected key=value"))?;
                    if header.insert(k.to_string(), (n, v.to_string())).is_some() {
                        return Err(parse_err(n, k, "duplicate key"));
                    }
                    continue;
                }
                if line.trim_end() != SAMPLE_COLUMNS {
                    return Err(parse_err(
                        n,
                        "columns",
                        format!("expected `{SAMPLE_COLUMNS}`"),
                    ));
                }
                columns_seen = true;
                continue;
            }
            if line.is_empty() {
                continue;
            }
            if n == total && !text.ends_with('\n') {
                return Err(parse_err(
                    n,
                    "record",
                    "truncated record (no line terminator)",
                ));
            }
            samples.push(parse_record(n, line)?);
        }
        if !columns_seen {
            return Err(parse_err(
                last_line + 1,
                "columns",
                "file ends before the column line",
            ));
        }
        let config = config_from_header(&header, last_line)?;
        let (hash_line, hash) = &header["config_hash"];
        if *hash != config.config_hash() {
            return Err(parse_err(
                *hash_line,
                "config_hash",
                format!(
                    "header says {hash}, configuration hashes to {}",
                    config.config_hash()
                ),
            ));
        }
        let notes = header
            .into_iter()
            .filter(|(k, _)| !CONFIG_KEYS.contains(&k.as_str()))
            .map(|(k, (_, v))| (k, v))
            .collect();
        Ok(SampleFile {
            config,
            samples,
            notes,
        })
    }
}

fn record(s: &BenchSample) -> String {
    match &s.breakdown {
        None => format!("{},{},,,,\n", s.index, s.wall_ms),
        Some(b) => format!(
            "{},{},{},{},{},{}\n",
            s.index, s.wall_ms, b.boundary_ms, b.lock_ms, b.setup_ms, b.compute_ms
        ),
    }
}

fn parse_record(n: usize, line: &str) -> Result<BenchSample, SampleFileError> {
    let fields: Vec<&str> = line.split(',').collect();
    let names: Vec<&str> = SAMPLE_COLUMNS.split(',').collect();
    if fields.len() != names.len() {
        return Err(parse_err(
            n,
            names.get(fields.len()).copied().unwrap_or("record"),
            format!("expected {} fields, found {}", names.len(), fields.len()),
        ));
    }
    let index = fields[0]
        .parse::<usize>()
        .map_err(|e| parse_err(n, names[0], e.to_string()))?;
    let num = |i: usize| -> Result<f64, SampleFileError> {
        let v = fields[i]
            .parse::<f64>()
            .map_err(|e| parse_err(n, names[i], e.to_string()))?;
        if !(v.is_finite() && v >= 0.0) {
            return Err(parse_err(n, names[i], "must be finite and >= 0"));
        }
        Ok(v)
    };
    let wall_ms = num(1)?;
    let breakdown = if fields[2..].iter().all(|f| f.is_empty()) {
        None
    } else {
        if let Some(i) = (2..6).find(|&i| fields[i].is_empty()) {
            return Err(parse_err(
                n,
                names[i],
                "breakdown fields must be all empty or all present",
            ));
        }
        Some(OverheadBreakdown {
            boundary_ms: num(2)?,
            lock_ms: num(3)?,
            setup_ms: num(4)?,
            compute_ms: num(5)?,
        })
    };
    Ok(BenchSample {
        index,
        wall_ms,
        breakdown,
    })
}

fn config_from_header(
    h: &BTreeMap<String, (usize, String)>,
    last_line: usize,
) -> Result<BenchConfig, SampleFileError> {
    let get = |key: &str| -> Result<(usize, &str), SampleFileError> {
        h.get(key)
            .map(|(n, v)| (*n, v.as_str()))
            .ok_or_else(|| parse_err(last_line, key, "missing header key"))
    };
    fn field<T, E: ToString>(
        (n, v): (usize, &str),
        key: &str,
        r: Result<T, E>,
    ) -> Result<T, SampleFileError> {
        r.map_err(|e| parse_err(n, key, format!("`{v}`: {}", e.to_string())))
    }
    let b = get("backend")?;
    let backend = field(b, "backend", b.1.parse::<BackendKind>())?;
    let w = get("window")?;
    let corners = field(
        w,
        "window",
        w.1.split(',')
            .map(str::parse::<f64>)
            .collect::<Result<Vec<_>, _>>(),
    )?;
    if corners.len() != 4 {
        return Err(parse_err(w.0, "window", "expected x1,y1,x2,y2"));
    }
    let m = get("max_iter")?;
    let max_iter = field(m, "max_iter", m.1.parse::<u32>())?;
    let window = field(
        w,
        "window",
        Window::new(corners[0], corners[1], corners[2], corners[3], max_iter),
    )?;
    let d = get("dims")?;
    let dims = field(d, "dims", d.1.parse::<GridDims>())?;
    let p = get("precision")?;
    let precision = field(p, "precision", p.1.parse::<Precision>())?;
    let r = get("repetitions")?;
    let repetitions = field(r, "repetitions", r.1.parse::<usize>())?;
    let e = get("pause_every")?;
    let pause_every = field(e, "pause_every", e.1.parse::<usize>())?;
    let s = get("pause_seconds")?;
    let pause_seconds = field(s, "pause_seconds", s.1.parse::<f64>())?;
    get("config_hash")?;
    let config = BenchConfig {
        backend,
        window,
        dims,
        precision,
        repetitions,
        pause_every,
        pause_seconds,
    };
    config
        .validate()
        .map_err(|e| parse_err(last_line, "config", e.to_string()))?;
    Ok(config)
}

fn io_err(path: &Path, e: std::io::Error) -> SampleFileError {
    SampleFileError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

pub fn persist_samples(file: &SampleFile, path: &Path) -> Result<(), SampleFileError> {
    fs::write(path, file.to_text()).map_err(|e| io_err(path, e))
}

pub fn load_samples(path: &Path) -> Result<SampleFile, SampleFileError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    SampleFile::parse(&text)
}

/// Appends `samples` to an existing file recorded under the same
/// configuration.
pub fn append_samples(
    path: &Path,
    config: &BenchConfig,
    samples: &[BenchSample],
) -> Result<(), SampleFileError> {
    let existing = load_samples(path)?;
    let (in_file, given) = (existing.config.config_hash(), config.config_hash());
    if in_file != given {
        return Err(SampleFileError::HashMismatch { in_file, given });
    }
    let mut f = fs::OpenOptions::new()
        .append(true)
        .open(path)
        .map_err(|e| io_err(path, e))?;
    let text: String = samples.iter().map(record).collect();
    f.write_all(text.as_bytes()).map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> BenchConfig {
        BenchConfig {
            backend: BackendKind::Vector {
                lanes: 4,
                threads: 2,
            },
            window: Window::builtin(2).unwrap(),
            dims: GridDims::new(400, 268).unwrap(),
            precision: Precision::Single,
            repetitions: 50,
            pause_every: 10,
            pause_seconds: 0.25,
        }
    }

    fn samples() -> Vec<BenchSample> {
        (0..50)
            .map(|i| BenchSample {
                index: i,
                wall_ms: 1.0 / (i as f64 + 3.0) + 1e-300 * i as f64,
                breakdown: (i % 2 == 1).then(|| OverheadBreakdown {
                    boundary_ms: 0.1 + i as f64,
                    lock_ms: 3.0e-5,
                    setup_ms: std::f64::consts::PI,
                    compute_ms: 1e10 / 7.0,
                }),
            })
            .collect()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut f = SampleFile::new(config(), samples());
        f.notes.insert("note".into(), "WLAN disabled".into());
        let back = SampleFile::parse(&f.to_text()).unwrap();
        assert_eq!(back, f);
        for (a, b) in back.samples.iter().zip(&f.samples) {
            assert_eq!(a.wall_ms.to_bits(), b.wall_ms.to_bits());
        }
    }

    #[test]
    fn truncated_record_names_field() {
        let text = SampleFile::new(config(), samples()).to_text();
        let cut = &text[..text.len() - 12];
        let last = cut.lines().count();
        match SampleFile::parse(cut) {
            Err(SampleFileError::Parse { line, .. }) => assert_eq!(line, last),
            other => panic!("{other:?}"),
        }
        let err = SampleFile::parse(&text.replace("\n3,", "\n3,abc")).unwrap_err();
        assert!(
            matches!(err, SampleFileError::Parse { ref field, .. } if field == "wall_ms"),
            "{err}"
        );
    }

    #[test]
    fn header_errors() {
        let text = SampleFile::new(config(), vec![]).to_text();
        assert!(SampleFile::parse(&text.replace("dims=400x268", "dims=400")).is_err());
        assert!(SampleFile::parse(&text.replace("# pause_every=10\n", "")).is_err());
        assert!(SampleFile::parse(&text.replacen(FORMAT_TAG, "# other", 1)).is_err());
        let tampered = text.replace("repetitions=50", "repetitions=49");
        assert!(matches!(
            SampleFile::parse(&tampered),
            Err(SampleFileError::Parse { ref field, .. }) if field == "config_hash"
        ));
        let no_columns: String = text
            .lines()
            .take_while(|l| l.starts_with('#'))
            .map(|l| format!("{l}\n"))
            .collect();
        assert!(SampleFile::parse(&no_columns).is_err());
    }

    #[test]
    fn partial_breakdown_rejected() {
        let text = SampleFile::new(config(), vec![]).to_text() + "0,1.5,0.1,,0.2,0.3\n";
        assert!(matches!(
            SampleFile::parse(&text),
            Err(SampleFileError::Parse { ref field, .. }) if field == "lock_ms"
        ));
    }

    #[test]
    fn append_checks_hash() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let all = samples();
        persist_samples(&SampleFile::new(config(), all[..20].to_vec()), &path).unwrap();
        append_samples(&path, &config(), &all[20..]).unwrap();
        assert_eq!(load_samples(&path).unwrap().samples, all);
        let mut other = config();
        other.precision = Precision::Double;
        assert!(matches!(
            append_samples(&path, &other, &all),
            Err(SampleFileError::HashMismatch { .. })
        ));
        assert!(matches!(
            load_samples(&dir.path().join("missing")),
            Err(SampleFileError::Io { .. })
        ));
    }
}
