//! Device offload through the native bridge.
//!
//! [`ComputeApi`] is a typed facade over the dozen OpenCL entry points the
//! backend needs. Each call goes through [`NativeBridge::invoke_timed`]; a
//! virtual library receives a [`DeviceRequest`] block, a vendor library is
//! called through its C signature.

use std::ffi::{c_void, CString};
use std::fmt;
use std::ptr;
use std::time::{Duration, Instant};

use super::kernel::{KernelParams, KernelSource, KERNEL_NAME};
use super::DEVICE_WIDTHS;
use crate::bridge::{BridgeError, EntryPoint, NativeBridge};
use crate::fractal::{GridDims, IterationGrid, Precision, Window};
use crate::guard::{Checkpoint, GuardError, GuardToken, LifecycleGuard};

/// Status a virtual entry returns for a request block of the wrong shape
/// (`CL_INVALID_VALUE`).
pub const INVALID_VALUE: i32 = -30;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DeviceError {
    #[error("invalid device configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Bridge(#[from] BridgeError),
    #[error(transparent)]
    Guard(#[from] GuardError),
    #[error("device run aborted by stop request before {0}")]
    Aborted(&'static str),
    #[error("device returned a malformed result: {0}")]
    Protocol(String),
}

/// Device object: a table index for the virtual device, the object pointer
/// for a vendor library.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Handle(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Access {
    ReadOnly,
    WriteOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelArg {
    Buffer(Handle),
    Int(i32),
}

/// What a device object is, for the release entry points.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectKind {
    Context,
    Queue,
    Program,
    Kernel,
    Buffer,
}

impl ObjectKind {
    pub fn release_symbol(self) -> &'static str {
        match self {
            ObjectKind::Context => "clReleaseContext",
            ObjectKind::Queue => "clReleaseCommandQueue",
            ObjectKind::Program => "clReleaseProgram",
            ObjectKind::Kernel => "clReleaseKernel",
            ObjectKind::Buffer => "clReleaseMemObject",
        }
    }
}

/// Argument block handed to virtual entry points. Output fields start empty
/// and are filled by the callee.
#[derive(Debug, Clone, PartialEq)]
pub enum DeviceRequest {
    GetPlatform {
        platform: Option<Handle>,
    },
    GetDevice {
        platform: Handle,
        device: Option<Handle>,
    },
    CreateContext {
        device: Handle,
        context: Option<Handle>,
    },
    CreateQueue {
        context: Handle,
        device: Handle,
        queue: Option<Handle>,
    },
    CreateProgram {
        context: Handle,
        source: String,
        program: Option<Handle>,
    },
    BuildProgram {
        program: Handle,
        options: String,
    },
    CreateKernel {
        program: Handle,
        name: String,
        kernel: Option<Handle>,
    },
    CreateBuffer {
        context: Handle,
        access: Access,
        size: usize,
        init: Option<Vec<u8>>,
        buffer: Option<Handle>,
    },
    SetKernelArg {
        kernel: Handle,
        index: u32,
        value: KernelArg,
    },
    EnqueueKernel {
        queue: Handle,
        kernel: Handle,
        global: [usize; 2],
    },
    ReadBuffer {
        queue: Handle,
        buffer: Handle,
        out: Vec<u8>,
    },
    Finish {
        queue: Handle,
    },
    Release {
        kind: ObjectKind,
        object: Handle,
    },
}

/// Time spent inside bridge calls, split by what the call was for.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DeviceTimings {
    /// Guard entry plus bridge lock acquisition.
    pub lock: Duration,
    /// Environment build, data transfer and teardown.
    pub setup: Duration,
    /// Kernel enqueue until finish.
    pub compute: Duration,
}

impl DeviceTimings {
    pub fn total(&self) -> Duration {
        self.lock + self.setup + self.compute
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Setup,
    Compute,
}

type ClHandle = *mut c_void;
const CL_TRUE: u32 = 1;
const CL_DEVICE_TYPE_DEFAULT: u64 = 1;
const CL_MEM_WRITE_ONLY: u64 = 1 << 1;
const CL_MEM_READ_ONLY: u64 = 1 << 2;
const CL_MEM_COPY_HOST_PTR: u64 = 1 << 5;

fn raw(h: Handle) -> ClHandle {
    h.0 as ClHandle
}

fn handle(p: ClHandle) -> Handle {
    Handle(p as usize)
}

fn missing(symbol: &str) -> DeviceError {
    DeviceError::Protocol(format!("{symbol} did not fill its output"))
}

/// Typed facade over the bridge. Accumulates per-call timings.
pub struct ComputeApi<'b> {
    bridge: &'b NativeBridge,
    timings: DeviceTimings,
    phase: Phase,
}

impl fmt::Debug for ComputeApi<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ComputeApi")
            .field("timings", &self.timings)
            .finish()
    }
}

impl<'b> ComputeApi<'b> {
    pub fn new(bridge: &'b NativeBridge) -> Self {
        ComputeApi {
            bridge,
            timings: DeviceTimings::default(),
            phase: Phase::Setup,
        }
    }

    pub fn timings(&self) -> DeviceTimings {
        self.timings
    }

    /// Calls `symbol` with `req` on a virtual entry, or with `native` on a
    /// vendor entry. `extract` pulls the output out of the request block.
    fn dispatch<T>(
        &mut self,
        symbol: &'static str,
        req: DeviceRequest,
        extract: impl FnOnce(DeviceRequest) -> Option<T>,
        native: impl FnOnce(*mut c_void) -> (i32, Option<T>),
    ) -> Result<T, DeviceError> {
        let started = Instant::now();
        let ((status, out), wait) = self.bridge.invoke_timed(symbol, move |entry| match entry {
            EntryPoint::Virtual(f) => {
                let mut req = req;
                let status = f(&mut req);
                (status, if status == 0 { extract(req) } else { None })
            }
            EntryPoint::Native(sym) => native(sym.as_ptr()),
        })?;
        let span = started.elapsed();
        self.timings.lock += wait;
        let work = span.saturating_sub(wait);
        match self.phase {
            Phase::Setup => self.timings.setup += work,
            Phase::Compute => self.timings.compute += work,
        }
        if status != 0 {
            return Err(BridgeError::CallFailed {
                symbol: symbol.to_string(),
                status,
            }
            .into());
        }
        out.ok_or_else(|| missing(symbol))
    }

    pub fn platform(&mut self) -> Result<Handle, DeviceError> {
        self.dispatch(
            "clGetPlatformIDs",
            DeviceRequest::GetPlatform { platform: None },
            |r| match r {
                DeviceRequest::GetPlatform { platform } => platform,
                _ => None,
            },
            |p| unsafe {
                type F = unsafe extern "C" fn(u32, *mut ClHandle, *mut u32) -> i32;
                let f: F = std::mem::transmute(p);
                let mut out = ptr::null_mut();
                let status = f(1, &mut out, ptr::null_mut());
                (status, Some(handle(out)))
            },
        )
    }

    pub fn device(&mut self, platform: Handle) -> Result<Handle, DeviceError> {
        self.dispatch(
            "clGetDeviceIDs",
            DeviceRequest::GetDevice {
                platform,
                device: None,
            },
            |r| match r {
                DeviceRequest::GetDevice { device, .. } => device,
                _ => None,
            },
            |p| unsafe {
                type F = unsafe extern "C" fn(ClHandle, u64, u32, *mut ClHandle, *mut u32) -> i32;
                let f: F = std::mem::transmute(p);
                let mut out = ptr::null_mut();
                let status = f(
                    raw(platform),
                    CL_DEVICE_TYPE_DEFAULT,
                    1,
                    &mut out,
                    ptr::null_mut(),
                );
                (status, Some(handle(out)))
            },
        )
    }

    pub fn create_context(&mut self, device: Handle) -> Result<Handle, DeviceError> {
        self.dispatch(
            "clCreateContext",
            DeviceRequest::CreateContext {
                device,
                context: None,
            },
            |r| match r {
                DeviceRequest::CreateContext { context, .. } => context,
                _ => None,
            },
            |p| unsafe {
                type F = unsafe extern "C" fn(
                    *const isize,
                    u32,
                    *const ClHandle,
                    *const c_void,
                    *mut c_void,
                    *mut i32,
                ) -> ClHandle;
                let f: F = std::mem::transmute(p);
                let dev = raw(device);
                let mut err = 0;
                let ctx = f(ptr::null(), 1, &dev, ptr::null(), ptr::null_mut(), &mut err);
                (err, Some(handle(ctx)))
            },
        )
    }

    pub fn create_queue(&mut self, context: Handle, device: Handle) -> Result<Handle, DeviceError> {
        self.dispatch(
            "clCreateCommandQueue",
            DeviceRequest::CreateQueue {
                context,
                device,
                queue: None,
            },
            |r| match r {
                DeviceRequest::CreateQueue { queue, .. } => queue,
                _ => None,
            },
            |p| unsafe {
                type F = unsafe extern "C" fn(ClHandle, ClHandle, u64, *mut i32) -> ClHandle;
                let f: F = std::mem::transmute(p);
                let mut err = 0;
                let q = f(raw(context), raw(device), 0, &mut err);
                (err, Some(handle(q)))
            },
        )
    }

    pub fn create_program(&mut self, context: Handle, source: &str) -> Result<Handle, DeviceError> {
        let text = CString::new(source).map_err(|e| DeviceError::InvalidConfig(e.to_string()))?;
        self.dispatch(
            "clCreateProgramWithSource",
            DeviceRequest::CreateProgram {
                context,
                source: source.to_string(),
                program: None,
            },
            |r| match r {
                DeviceRequest::CreateProgram { program, .. } => program,
                _ => None,
            },
            |p| unsafe {
                type F = unsafe extern "C" fn(
                    ClHandle,
                    u32,
                    *const *const i8,
                    *const usize,
                    *mut i32,
                ) -> ClHandle;
                let f: F = std::mem::transmute(p);
                let strings = [text.as_ptr()];
                let lengths = [text.as_bytes().len()];
                let mut err = 0;
                let prog = f(
                    raw(context),
                    1,
                    strings.as_ptr(),
                    lengths.as_ptr(),
                    &mut err,
                );
                (err, Some(handle(prog)))
            },
        )
    }

    pub fn build_program(&mut self, program: Handle, options: &str) -> Result<(), DeviceError> {
        let opts = CString::new(options).map_err(|e| DeviceError::InvalidConfig(e.to_string()))?;
        self.dispatch(
            "clBuildProgram",
            DeviceRequest::BuildProgram {
                program,
                options: options.to_string(),
            },
            |_| Some(()),
            |p| unsafe {
                type F = unsafe extern "C" fn(
                    ClHandle,
                    u32,
                    *const ClHandle,
                    *const i8,
                    *const c_void,
                    *mut c_void,
                ) -> i32;
                let f: F = std::mem::transmute(p);
                let status = f(
                    raw(program),
                    0,
                    ptr::null(),
                    opts.as_ptr(),
                    ptr::null(),
                    ptr::null_mut(),
                );
                (status, Some(()))
            },
        )
    }

    pub fn create_kernel(&mut self, program: Handle, name: &str) -> Result<Handle, DeviceError> {
        let cname = CString::new(name).map_err(|e| DeviceError::InvalidConfig(e.to_string()))?;
        self.dispatch(
            "clCreateKernel",
            DeviceRequest::CreateKernel {
                program,
                name: name.to_string(),
                kernel: None,
            },
            |r| match r {
                DeviceRequest::CreateKernel { kernel, .. } => kernel,
                _ => None,
            },
            |p| unsafe {
                type F = unsafe extern "C" fn(ClHandle, *const i8, *mut i32) -> ClHandle;
                let f: F = std::mem::transmute(p);
                let mut err = 0;
                let k = f(raw(program), cname.as_ptr(), &mut err);
                (err, Some(handle(k)))
            },
        )
    }

    /// Input buffers are created from `init`; output buffers are `size`
    /// bytes of device memory.
    pub fn create_buffer(
        &mut self,
        context: Handle,
        access: Access,
        size: usize,
        init: Option<Vec<u8>>,
    ) -> Result<Handle, DeviceError> {
        let host = init.clone();
        self.dispatch(
            "clCreateBuffer",
            DeviceRequest::CreateBuffer {
                context,
                access,
                size,
                init,
                buffer: None,
            },
            |r| match r {
                DeviceRequest::CreateBuffer { buffer, .. } => buffer,
                _ => None,
            },
            move |p| unsafe {
                type F =
                    unsafe extern "C" fn(ClHandle, u64, usize, *mut c_void, *mut i32) -> ClHandle;
                let f: F = std::mem::transmute(p);
                let mut host = host;
                let (flags, host_ptr) = match (access, host.as_mut()) {
                    (Access::ReadOnly, Some(h)) => (
                        CL_MEM_READ_ONLY | CL_MEM_COPY_HOST_PTR,
                        h.as_mut_ptr() as *mut c_void,
                    ),
                    (Access::ReadOnly, None) => (CL_MEM_READ_ONLY, ptr::null_mut()),
                    (Access::WriteOnly, _) => (CL_MEM_WRITE_ONLY, ptr::null_mut()),
                };
                let mut err = 0;
                let m = f(raw(context), flags, size, host_ptr, &mut err);
                (err, Some(handle(m)))
            },
        )
    }

    pub fn set_kernel_arg(
        &mut self,
        kernel: Handle,
        index: u32,
        value: KernelArg,
    ) -> Result<(), DeviceError> {
        self.dispatch(
            "clSetKernelArg",
            DeviceRequest::SetKernelArg {
                kernel,
                index,
                value,
            },
            |_| Some(()),
            |p| unsafe {
                type F = unsafe extern "C" fn(ClHandle, u32, usize, *const c_void) -> i32;
                let f: F = std::mem::transmute(p);
                let status = match value {
                    KernelArg::Buffer(b) => {
                        let mem = raw(b);
                        f(
                            raw(kernel),
                            index,
                            std::mem::size_of::<ClHandle>(),
                            &mem as *const _ as *const c_void,
                        )
                    }
                    KernelArg::Int(v) => {
                        f(raw(kernel), index, 4, &v as *const i32 as *const c_void)
                    }
                };
                (status, Some(()))
            },
        )
    }

    pub fn enqueue_kernel(
        &mut self,
        queue: Handle,
        kernel: Handle,
        global: [usize; 2],
    ) -> Result<(), DeviceError> {
        self.dispatch(
            "clEnqueueNDRangeKernel",
            DeviceRequest::EnqueueKernel {
                queue,
                kernel,
                global,
            },
            |_| Some(()),
            |p| unsafe {
                type F = unsafe extern "C" fn(
                    ClHandle,
                    ClHandle,
                    u32,
                    *const usize,
                    *const usize,
                    *const usize,
                    u32,
                    *const ClHandle,
                    *mut ClHandle,
                ) -> i32;
                let f: F = std::mem::transmute(p);
                let status = f(
                    raw(queue),
                    raw(kernel),
                    2,
                    ptr::null(),
                    global.as_ptr(),
                    ptr::null(),
                    0,
                    ptr::null(),
                    ptr::null_mut(),
                );
                (status, Some(()))
            },
        )
    }

    pub fn finish(&mut self, queue: Handle) -> Result<(), DeviceError> {
        self.dispatch(
            "clFinish",
            DeviceRequest::Finish { queue },
            |_| Some(()),
            |p| unsafe {
                type F = unsafe extern "C" fn(ClHandle) -> i32;
                let f: F = std::mem::transmute(p);
                (f(raw(queue)), Some(()))
            },
        )
    }

    /// Blocking read of `size` bytes from the start of `buffer`.
    pub fn read_buffer(
        &mut self,
        queue: Handle,
        buffer: Handle,
        size: usize,
    ) -> Result<Vec<u8>, DeviceError> {
        let bytes = self.dispatch(
            "clEnqueueReadBuffer",
            DeviceRequest::ReadBuffer {
                queue,
                buffer,
                out: Vec::new(),
            },
            |r| match r {
                DeviceRequest::ReadBuffer { out, .. } => Some(out),
                _ => None,
            },
            |p| unsafe {
                type F = unsafe extern "C" fn(
                    ClHandle,
                    ClHandle,
                    u32,
                    usize,
                    usize,
                    *mut c_void,
                    u32,
                    *const ClHandle,
                    *mut ClHandle,
                ) -> i32;
                let f: F = std::mem::transmute(p);
                let mut out = vec![0u8; size];
                let status = f(
                    raw(queue),
                    raw(buffer),
                    CL_TRUE,
                    0,
                    size,
                    out.as_mut_ptr() as *mut c_void,
                    0,
                    ptr::null(),
                    ptr::null_mut(),
                );
                (status, Some(out))
            },
        )?;
        if bytes.len() != size {
            return Err(DeviceError::Protocol(format!(
                "read {} bytes, expected {size}",
                bytes.len()
            )));
        }
        Ok(bytes)
    }

    pub fn release(&mut self, kind: ObjectKind, object: Handle) -> Result<(), DeviceError> {
        self.dispatch(
            kind.release_symbol(),
            DeviceRequest::Release { kind, object },
            |_| Some(()),
            |p| unsafe {
                type F = unsafe extern "C" fn(ClHandle) -> i32;
                let f: F = std::mem::transmute(p);
                (f(raw(object)), Some(()))
            },
        )
    }
}

/// Result of one device render.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceRun {
    pub grid: IterationGrid,
    pub timings: DeviceTimings,
}

/// Renders on the device behind `guard`'s bridge.
pub fn render_device(
    guard: &LifecycleGuard,
    window: &Window,
    dims: GridDims,
    precision: Precision,
    vector_width: usize,
) -> Result<IterationGrid, DeviceError> {
    render_device_timed(guard, window, dims, precision, vector_width).map(|r| r.grid)
}

/// Like [`render_device`], also reporting where the time went. A stop
/// request seen between stages frees every device object and returns
/// [`DeviceError::Aborted`].
pub fn render_device_timed(
    guard: &LifecycleGuard,
    window: &Window,
    dims: GridDims,
    precision: Precision,
    vector_width: usize,
) -> Result<DeviceRun, DeviceError> {
    if !DEVICE_WIDTHS.contains(&vector_width) {
        return Err(DeviceError::InvalidConfig(format!(
            "vector width {vector_width} not in {DEVICE_WIDTHS:?}"
        )));
    }
    if dims.width > i32::MAX as usize || dims.height > i32::MAX as usize {
        return Err(DeviceError::InvalidConfig(format!(
            "{dims} exceeds the kernel's int range"
        )));
    }
    let entered = Instant::now();
    let mut token = guard.enter_guarded()?;
    let guard_wait = entered.elapsed();

    let mut api = ComputeApi::new(guard.bridge());
    let mut owned = Vec::new();
    let params = KernelParams {
        precision,
        vector_width,
        max_iter: window.max_iter(),
    };
    let result = pipeline(&mut api, guard, &token, window, dims, params, &mut owned);
    api.phase = Phase::Setup;
    let mut release_error = None;
    for (kind, h) in owned.into_iter().rev() {
        if let Err(e) = api.release(kind, h) {
            log::warn!("releasing {kind:?} failed: {e}");
            release_error.get_or_insert(e);
        }
    }
    token.leave()?;

    let grid = result?;
    if let Some(e) = release_error {
        return Err(e);
    }
    let mut timings = api.timings();
    timings.lock += guard_wait;
    Ok(DeviceRun { grid, timings })
}

fn pipeline(
    api: &mut ComputeApi<'_>,
    guard: &LifecycleGuard,
    token: &GuardToken,
    window: &Window,
    dims: GridDims,
    params: KernelParams,
    owned: &mut Vec<(ObjectKind, Handle)>,
) -> Result<IterationGrid, DeviceError> {
    let checkpoint = |stage| match guard.checkpoint(token) {
        Checkpoint::Continue => Ok(()),
        Checkpoint::AbortRequested => Err(DeviceError::Aborted(stage)),
    };
    let mut keep = |kind, h: Handle| {
        owned.push((kind, h));
        h
    };

    let platform = api.platform()?;
    let device = api.device(platform)?;
    let context = keep(ObjectKind::Context, api.create_context(device)?);
    let queue = keep(ObjectKind::Queue, api.create_queue(context, device)?);
    checkpoint("program build")?;

    let source = KernelSource::generate(params);
    let program = keep(
        ObjectKind::Program,
        api.create_program(context, &source.text)?,
    );
    api.build_program(program, "")?;
    let kernel = keep(ObjectKind::Kernel, api.create_kernel(program, KERNEL_NAME)?);
    checkpoint("data transfer")?;

    let p = params.precision;
    let mut cre = Vec::with_capacity(dims.width * p.byte_width());
    for col in 0..dims.width {
        p.encode_into(window.column_re(dims, col), &mut cre);
    }
    let mut cim = Vec::with_capacity(dims.height * p.byte_width());
    for row in 0..dims.height {
        p.encode_into(window.row_im(dims, row), &mut cim);
    }
    let out_bytes = dims.pixels() * 4;
    let cre_buf = keep(
        ObjectKind::Buffer,
        api.create_buffer(context, Access::ReadOnly, cre.len(), Some(cre))?,
    );
    let cim_buf = keep(
        ObjectKind::Buffer,
        api.create_buffer(context, Access::ReadOnly, cim.len(), Some(cim))?,
    );
    let out_buf = keep(
        ObjectKind::Buffer,
        api.create_buffer(context, Access::WriteOnly, out_bytes, None)?,
    );
    api.set_kernel_arg(kernel, 0, KernelArg::Buffer(cre_buf))?;
    api.set_kernel_arg(kernel, 1, KernelArg::Buffer(cim_buf))?;
    api.set_kernel_arg(kernel, 2, KernelArg::Buffer(out_buf))?;
    api.set_kernel_arg(kernel, 3, KernelArg::Int(dims.width as i32))?;
    api.set_kernel_arg(kernel, 4, KernelArg::Int(dims.height as i32))?;
    checkpoint("kernel launch")?;

    api.phase = Phase::Compute;
    api.enqueue_kernel(queue, kernel, [source.strips(dims.width), dims.height])?;
    api.finish(queue)?;
    api.phase = Phase::Setup;
    checkpoint("result transfer")?;

    let bytes = api.read_buffer(queue, out_buf, out_bytes)?;
    let counts = bytes
        .chunks_exact(4)
        .map(|b| i32::from_le_bytes(b.try_into().unwrap()))
        .map(|v| u32::try_from(v).map_err(|_| DeviceError::Protocol(format!("negative count {v}"))))
        .collect::<Result<Vec<u32>, _>>()?;
    IterationGrid::from_counts(dims, params.max_iter, counts)
        .map_err(|e| DeviceError::Protocol(e.to_string()))
}
