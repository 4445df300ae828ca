//! Bridge, guard and device wiring for device backends.

use std::sync::Arc;

use mandelbench::backends::VirtualDevice;
use mandelbench::bridge::NativeBridge;
use mandelbench::guard::LifecycleGuard;

pub struct DeviceHost {
    pub guard: LifecycleGuard,
    /// Present when no native library was given.
    pub virtual_device: Option<VirtualDevice>,
}

impl DeviceHost {
    pub fn new(lib: Option<&str>) -> anyhow::Result<Self> {
        let bridge = Arc::new(NativeBridge::new());
        let virtual_device = match lib {
            Some(path) => {
                bridge.configure_library_path(path)?;
                None
            }
            None => {
                let device = VirtualDevice::new("device");
                device.install(&bridge)?;
                Some(device)
            }
        };
        Ok(DeviceHost {
            guard: LifecycleGuard::new(bridge),
            virtual_device,
        })
    }

    /// Complains about device objects or guard tokens still alive.
    pub fn leak_warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Some(d) = &self.virtual_device {
            if d.live_objects() > 0 {
                out.push(format!("{} device objects not released", d.live_objects()));
            }
        }
        if self.guard.outstanding_tokens() > 0 {
            out.push(format!(
                "{} guard tokens outstanding",
                self.guard.outstanding_tokens()
            ));
        }
        out
    }
}
