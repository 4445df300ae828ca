//! In-process stand-in for a vendor compute library.
//!
//! Serves the entry points [`super::device::ComputeApi`] uses, builds
//! programs by reading the generated kernel's `#define`s, and executes the
//! kernel with host arithmetic in the requested precision. Counts live device
//! objects and kernel launches so tests can check teardown.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread;
use std::time::Duration;

use super::device::{Access, DeviceRequest, Handle, KernelArg, ObjectKind, INVALID_VALUE};
use super::kernel::{KernelParams, KERNEL_NAME};
use super::lanes::escape_strip;
use super::DEVICE_WIDTHS;
use crate::bridge::{ArgBlock, NativeBridge, VirtualLibrary, VIRTUAL_PREFIX};
use crate::fractal::{Precision, Real};

const BUILD_PROGRAM_FAILURE: i32 = -11;
const INVALID_CONTEXT: i32 = -34;
const INVALID_COMMAND_QUEUE: i32 = -36;
const INVALID_MEM_OBJECT: i32 = -38;
const INVALID_PROGRAM: i32 = -44;
const INVALID_PROGRAM_EXECUTABLE: i32 = -45;
const INVALID_KERNEL_NAME: i32 = -46;
const INVALID_KERNEL: i32 = -48;
const INVALID_ARG_INDEX: i32 = -49;
const INVALID_KERNEL_ARGS: i32 = -52;
const INVALID_WORK_SIZE: i32 = -63;

const PLATFORM: Handle = Handle(1);
const DEVICE: Handle = Handle(2);

enum Object {
    Context,
    Queue,
    Program {
        source: String,
        built: Option<KernelParams>,
    },
    Kernel {
        params: KernelParams,
        args: [Option<KernelArg>; 5],
    },
    Buffer {
        access: Access,
        bytes: Vec<u8>,
    },
}

impl Object {
    fn kind(&self) -> ObjectKind {
        match self {
            Object::Context => ObjectKind::Context,
            Object::Queue => ObjectKind::Queue,
            Object::Program { .. } => ObjectKind::Program,
            Object::Kernel { .. } => ObjectKind::Kernel,
            Object::Buffer { .. } => ObjectKind::Buffer,
        }
    }
}

struct State {
    next: usize,
    objects: HashMap<Handle, Object>,
    failures: HashMap<String, i32>,
    launch_delay: Duration,
}

#[derive(Default)]
struct Stats {
    peak_live: AtomicUsize,
    launches: AtomicU64,
    completed: AtomicU64,
}

struct Device {
    state: Mutex<State>,
    stats: Stats,
}

impl Device {
    fn state(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn insert(&self, obj: Object) -> Handle {
        let mut s = self.state();
        s.next += 1;
        let h = Handle(s.next);
        s.objects.insert(h, obj);
        self.stats
            .peak_live
            .fetch_max(s.objects.len(), Ordering::SeqCst);
        h
    }

    fn serve(&self, symbol: &str, req: &mut DeviceRequest) -> i32 {
        if let Some(status) = self.state().failures.remove(symbol) {
            return status;
        }
        match req {
            DeviceRequest::GetPlatform { platform } => {
                *platform = Some(PLATFORM);
                0
            }
            DeviceRequest::GetDevice { platform, device } => {
                if *platform != PLATFORM {
                    return INVALID_VALUE;
                }
                *device = Some(DEVICE);
                0
            }
            DeviceRequest::CreateContext { device, context } => {
                if *device != DEVICE {
                    return INVALID_VALUE;
                }
                *context = Some(self.insert(Object::Context));
                0
            }
            DeviceRequest::CreateQueue {
                context,
                device,
                queue,
            } => {
                if *device != DEVICE || !self.is(*context, ObjectKind::Context) {
                    return INVALID_CONTEXT;
                }
                *queue = Some(self.insert(Object::Queue));
                0
            }
            DeviceRequest::CreateProgram {
                context,
                source,
                program,
            } => {
                if !self.is(*context, ObjectKind::Context) {
                    return INVALID_CONTEXT;
                }
                *program = Some(self.insert(Object::Program {
                    source: source.clone(),
                    built: None,
                }));
                0
            }
            DeviceRequest::BuildProgram { program, .. } => {
                match self.state().objects.get_mut(program) {
                    Some(Object::Program { source, built }) => {
                        match KernelParams::from_source(source) {
                            Ok(p) if DEVICE_WIDTHS.contains(&p.vector_width) => {
                                *built = Some(p);
                                0
                            }
                            Ok(_) | Err(_) => BUILD_PROGRAM_FAILURE,
                        }
                    }
                    _ => INVALID_PROGRAM,
                }
            }
            DeviceRequest::CreateKernel {
                program,
                name,
                kernel,
            } => {
                let params = match self.state().objects.get(program) {
                    Some(Object::Program { built: Some(p), .. }) => *p,
                    Some(Object::Program { built: None, .. }) => return INVALID_PROGRAM_EXECUTABLE,
                    _ => return INVALID_PROGRAM,
                };
                if name != KERNEL_NAME {
                    return INVALID_KERNEL_NAME;
                }
                *kernel = Some(self.insert(Object::Kernel {
                    params,
                    args: [None; 5],
                }));
                0
            }
            DeviceRequest::CreateBuffer {
                context,
                access,
                size,
                init,
                buffer,
            } => {
                if !self.is(*context, ObjectKind::Context) {
                    return INVALID_CONTEXT;
                }
                let bytes = match init.take() {
                    Some(b) if b.len() == *size => b,
                    Some(_) => return INVALID_VALUE,
                    None => vec![0; *size],
                };
                *buffer = Some(self.insert(Object::Buffer {
                    access: *access,
                    bytes,
                }));
                0
            }
            DeviceRequest::SetKernelArg {
                kernel,
                index,
                value,
            } => {
                let mut s = self.state();
                if let KernelArg::Buffer(b) = value {
                    if !matches!(s.objects.get(b), Some(Object::Buffer { .. })) {
                        return INVALID_MEM_OBJECT;
                    }
                }
                match s.objects.get_mut(kernel) {
                    Some(Object::Kernel { args, .. }) => match args.get_mut(*index as usize) {
                        Some(slot) => {
                            *slot = Some(*value);
                            0
                        }
                        None => INVALID_ARG_INDEX,
                    },
                    _ => INVALID_KERNEL,
                }
            }
            DeviceRequest::EnqueueKernel {
                queue,
                kernel,
                global,
            } => self.launch(*queue, *kernel, *global),
            DeviceRequest::ReadBuffer { queue, buffer, out } => {
                let s = self.state();
                if !matches!(s.objects.get(queue), Some(Object::Queue)) {
                    return INVALID_COMMAND_QUEUE;
                }
                match s.objects.get(buffer) {
                    Some(Object::Buffer { bytes, .. }) => {
                        *out = bytes.clone();
                        0
                    }
                    _ => INVALID_MEM_OBJECT,
                }
            }
            DeviceRequest::Finish { queue } => {
                if self.is(*queue, ObjectKind::Queue) {
                    0
                } else {
                    INVALID_COMMAND_QUEUE
                }
            }
            DeviceRequest::Release { kind, object } => {
                let mut s = self.state();
                match s.objects.get(object) {
                    Some(o) if o.kind() == *kind => {
                        s.objects.remove(object);
                        0
                    }
                    _ => INVALID_VALUE,
                }
            }
        }
    }

    fn is(&self, h: Handle, kind: ObjectKind) -> bool {
        self.state().objects.get(&h).map(Object::kind) == Some(kind)
    }

    fn launch(&self, queue: Handle, kernel: Handle, global: [usize; 2]) -> i32 {
        let (params, cre, cim, out, width, height, delay) = {
            let s = self.state();
            if !matches!(s.objects.get(&queue), Some(Object::Queue)) {
                return INVALID_COMMAND_QUEUE;
            }
            let (params, args) = match s.objects.get(&kernel) {
                Some(Object::Kernel { params, args }) => (*params, *args),
                _ => return INVALID_KERNEL,
            };
            let (
                [Some(KernelArg::Buffer(cre)), Some(KernelArg::Buffer(cim)), Some(KernelArg::Buffer(out)), Some(KernelArg::Int(w)), Some(KernelArg::Int(h))],
            ) = (args,)
            else {
                return INVALID_KERNEL_ARGS;
            };
            let read = |b: Handle| match s.objects.get(&b) {
                Some(Object::Buffer { bytes, .. }) => Some(params.precision.decode(bytes)),
                _ => None,
            };
            let (Some(cre_v), Some(cim_v)) = (read(cre), read(cim)) else {
                return INVALID_MEM_OBJECT;
            };
            if !matches!(
                s.objects.get(&out),
                Some(Object::Buffer {
                    access: Access::WriteOnly,
                    ..
                })
            ) {
                return INVALID_MEM_OBJECT;
            }
            if w < 0 || h < 0 {
                return INVALID_VALUE;
            }
            (
                params,
                cre_v,
                cim_v,
                out,
                w as usize,
                h as usize,
                s.launch_delay,
            )
        };
        if cre.len() < width || cim.len() < height {
            return INVALID_MEM_OBJECT;
        }
        if global != [width.div_ceil(params.vector_width), height] {
            return INVALID_WORK_SIZE;
        }
        self.stats.launches.fetch_add(1, Ordering::SeqCst);
        if !delay.is_zero() {
            thread::sleep(delay);
        }
        let counts = execute(params, &cre[..width], &cim[..height]);

        let mut s = self.state();
        match s.objects.get_mut(&out) {
            Some(Object::Buffer { bytes, .. }) if bytes.len() >= counts.len() * 4 => {
                for (dst, c) in bytes.chunks_exact_mut(4).zip(&counts) {
                    dst.copy_from_slice(&(*c as i32).to_le_bytes());
                }
                self.stats.completed.fetch_add(1, Ordering::SeqCst);
                0
            }
            Some(Object::Buffer { .. }) => INVALID_VALUE,
            _ => INVALID_MEM_OBJECT,
        }
    }
}

/// One work item per strip of `vector_width` pixels, as in the kernel.
fn execute(params: KernelParams, cre: &[f64], cim: &[f64]) -> Vec<u32> {
    fn run<T: Real>(params: KernelParams, cre: &[f64], cim: &[f64]) -> Vec<u32> {
        let w = params.vector_width;
        let cr: Vec<T> = cre.iter().map(|&v| T::from_f64(v)).collect();
        let mut out = vec![0u32; cre.len() * cim.len()];
        for (row, &ci) in out.chunks_mut(cre.len().max(1)).zip(cim) {
            let ci = [T::from_f64(ci); 16];
            for (strip, dst) in cr.chunks(w).zip(row.chunks_mut(w)) {
                escape_strip(strip, &ci[..strip.len()], params.max_iter, dst);
            }
        }
        out
    }
    match params.precision {
        Precision::Half => run::<crate::fractal::Half>(params, cre, cim),
        Precision::Single => run::<f32>(params, cre, cim),
        Precision::Double => run::<f64>(params, cre, cim),
    }
}

/// Symbols the virtual device exports.
pub const DEVICE_SYMBOLS: [&str; 17] = [
    "clGetPlatformIDs",
    "clGetDeviceIDs",
    "clCreateContext",
    "clCreateCommandQueue",
    "clCreateProgramWithSource",
    "clBuildProgram",
    "clCreateKernel",
    "clCreateBuffer",
    "clSetKernelArg",
    "clEnqueueNDRangeKernel",
    "clEnqueueReadBuffer",
    "clFinish",
    "clReleaseMemObject",
    "clReleaseKernel",
    "clReleaseProgram",
    "clReleaseCommandQueue",
    "clReleaseContext",
];

/// Instrumented virtual compute device.
#[derive(Clone)]
pub struct VirtualDevice {
    library: Arc<VirtualLibrary>,
    device: Arc<Device>,
}

impl std::fmt::Debug for VirtualDevice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VirtualDevice")
            .field("name", &self.library.name())
            .field("live_objects", &self.live_objects())
            .finish()
    }
}

impl VirtualDevice {
    pub fn new(name: &str) -> Self {
        let device = Arc::new(Device {
            state: Mutex::new(State {
                next: DEVICE.0,
                objects: HashMap::new(),
                failures: HashMap::new(),
                launch_delay: Duration::ZERO,
            }),
            stats: Stats::default(),
        });
        let mut builder = VirtualLibrary::builder(name);
        for symbol in DEVICE_SYMBOLS {
            let device = device.clone();
            builder = builder.entry(symbol, move |args: &mut ArgBlock| {
                match args.downcast_mut::<DeviceRequest>() {
                    Some(req) => device.serve(symbol, req),
                    None => INVALID_VALUE,
                }
            });
        }
        VirtualDevice {
            library: builder.build(),
            device,
        }
    }

    pub fn library(&self) -> &Arc<VirtualLibrary> {
        &self.library
    }

    /// The path to configure on a bridge, `virtual:<name>`.
    pub fn path(&self) -> String {
        format!("{VIRTUAL_PREFIX}{}", self.library.name())
    }

    /// Registers the device with `bridge` and points the bridge at it.
    pub fn install(&self, bridge: &NativeBridge) -> Result<(), crate::bridge::BridgeError> {
        bridge.register_virtual(self.library.clone());
        bridge.configure_library_path(&self.path())
    }

    /// Device objects (contexts, queues, programs, kernels, buffers) not yet
    /// released.
    pub fn live_objects(&self) -> usize {
        self.device.state().objects.len()
    }

    pub fn peak_live_objects(&self) -> usize {
        self.device.stats.peak_live.load(Ordering::SeqCst)
    }

    pub fn kernel_launches(&self) -> u64 {
        self.device.stats.launches.load(Ordering::SeqCst)
    }

    pub fn completed_launches(&self) -> u64 {
        self.device.stats.completed.load(Ordering::SeqCst)
    }

    /// Makes every kernel launch take at least `delay`.
    pub fn set_launch_delay(&self, delay: Duration) {
        self.device.state().launch_delay = delay;
    }

    /// The next call to `symbol` returns `status` without doing anything.
    pub fn fail_next(&self, symbol: &str, status: i32) {
        self.device
            .state()
            .failures
            .insert(symbol.to_string(), status);
    }
}
