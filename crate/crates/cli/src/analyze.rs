use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use mandelbench::harness::load_samples;
use mandelbench::report::{chart_csv, chart_svg, Report};

use crate::AnalyzeArgs;

fn collect(inputs: &[PathBuf]) -> anyhow::Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(input)
                .with_context(|| format!("reading {}", input.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "samples"))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(input.clone());
        }
    }
    anyhow::ensure!(!files.is_empty(), "no sample files found");
    Ok(files)
}

/// Window labels made safe for file names.
fn slug(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect()
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn run(args: AnalyzeArgs) -> anyhow::Result<ExitCode> {
    let files = collect(&args.inputs)?
        .iter()
        .map(|p| load_samples(p))
        .collect::<Result<Vec<_>, _>>()?;
    let report = Report::build(&files)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;

    let mut text = String::new();
    for window in report.windows() {
        let table = report.text_table(&window);
        let slug = slug(&window);
        write(&args.out.join(format!("table_{slug}.txt")), &table)?;
        write(
            &args.out.join(format!("chart_{slug}.svg")),
            &chart_svg(&report, &window),
        )?;
        write(
            &args.out.join(format!("chart_{slug}.csv")),
            &chart_csv(&report, &window),
        )?;
        text.push_str(&table);
        text.push('\n');
    }
    text.push_str(&report.window_comparison_text());
    write(&args.out.join("report.txt"), &text)?;
    write(&args.out.join("report.csv"), &report.csv())?;
    print!("{text}");
    Ok(ExitCode::SUCCESS)
}
