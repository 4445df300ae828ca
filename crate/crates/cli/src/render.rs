use std::process::ExitCode;

use anyhow::Context;
use mandelbench::backends::render_device;
use mandelbench::fractal::Window;
use mandelbench::report::export_ppm;

use crate::host::DeviceHost;
use crate::RenderArgs;

pub fn run(args: RenderArgs) -> anyhow::Result<ExitCode> {
    let window = match args.rect.window()? {
        Some(w) => w,
        None => Window::builtin(args.window)?,
    };
    let grid = match args.backend {
        mandelbench::backends::BackendKind::Device { vector_width } => {
            let host = DeviceHost::new(args.lib.as_deref())?;
            let grid = render_device(
                &host.guard,
                &window,
                args.dims,
                args.precision,
                vector_width,
            )?;
            for w in host.leak_warnings() {
                eprintln!("warning: {w}");
            }
            grid
        }
        kind => kind.render_cpu(&window, args.dims, args.precision)?,
    };
    export_ppm(&grid, &args.out).with_context(|| format!("writing {}", args.out.display()))?;
    println!("checksum {}", grid.checksum());
    println!("wrote {}", args.out.display());
    Ok(ExitCode::SUCCESS)
}
