//! Device kernel source, generated at run time from a text template.

use std::fmt;

use crate::fractal::Precision;

/// OpenCL C template; see the header comment for its placeholders.
pub const KERNEL_TEMPLATE: &str = include_str!("mandel.cl");

/// Entry point defined by [`KERNEL_TEMPLATE`].
pub const KERNEL_NAME: &str = "mandel";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct KernelParams {
    pub precision: Precision,
    pub vector_width: usize,
    pub max_iter: u32,
}

impl KernelParams {
    fn real(&self) -> &'static str {
        match self.precision {
            Precision::Half => "half",
            Precision::Single => "float",
            Precision::Double => "double",
        }
    }

    fn mask(&self) -> &'static str {
        match self.precision {
            Precision::Half => "short",
            Precision::Single => "int",
            Precision::Double => "long",
        }
    }

    fn extension(&self) -> &'static str {
        match self.precision {
            Precision::Half => "#pragma OPENCL EXTENSION cl_khr_fp16 : enable",
            Precision::Single => "",
            Precision::Double => "#pragma OPENCL EXTENSION cl_khr_fp64 : enable",
        }
    }

    /// Recovers the parameters from generated source by reading its
    /// `#define` lines.
    pub fn from_source(source: &str) -> Result<Self, String> {
        let define = |name: &str| {
            source
                .lines()
                .filter_map(|l| l.trim().strip_prefix("#define "))
                .find_map(|l| {
                    let (key, value) = l.split_once(char::is_whitespace)?;
                    (key == name).then(|| value.trim().to_string())
                })
                .ok_or_else(|| format!("missing #define {name}"))
        };
        let precision = match define("REAL")?.as_str() {
            "half" => Precision::Half,
            "float" => Precision::Single,
            "double" => Precision::Double,
            other => return Err(format!("unsupported REAL `{other}`")),
        };
        let vector_width = define("VECTOR_WIDTH")?
            .parse()
            .map_err(|e| format!("VECTOR_WIDTH: {e}"))?;
        let max_iter = define("MAX_ITER")?
            .parse()
            .map_err(|e| format!("MAX_ITER: {e}"))?;
        Ok(KernelParams {
            precision,
            vector_width,
            max_iter,
        })
    }
}

/// Kernel text with every placeholder substituted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KernelSource {
    pub params: KernelParams,
    pub text: String,
}

impl KernelSource {
    pub fn generate(params: KernelParams) -> Self {
        let text = KERNEL_TEMPLATE
            .replace("@EXTENSION@", params.extension())
            .replace("@REAL@", params.real())
            .replace("@MASK@", params.mask())
            .replace("@VECTOR_WIDTH@", &params.vector_width.to_string())
            .replace("@MAX_ITER@", &params.max_iter.to_string());
        KernelSource { params, text }
    }

    /// Work items per row for an image `width` pixels wide.
    pub fn strips(&self, width: usize) -> usize {
        width.div_ceil(self.params.vector_width)
    }
}

impl fmt::Display for KernelSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_placeholder_is_substituted() {
        for precision in Precision::ALL {
            for vector_width in [1, 2, 4, 8, 16] {
                let params = KernelParams {
                    precision,
                    vector_width,
                    max_iter: 1500,
                };
                let src = KernelSource::generate(params);
                assert!(!src.text.contains('@'), "{params:?}");
                assert!(src.text.contains("#pragma OPENCL FP_CONTRACT OFF"));
                assert_eq!(KernelParams::from_source(&src.text).unwrap(), params);
            }
        }
    }

    #[test]
    fn width_selects_vector_types() {
        let src = KernelSource::generate(KernelParams {
            precision: Precision::Double,
            vector_width: 8,
            max_iter: 80,
        });
        assert!(src.text.contains("#define REAL double"));
        assert!(src.text.contains("#define VECTOR_WIDTH 8"));
        assert!(src.text.contains("cl_khr_fp64"));
        assert_eq!(src.strips(401), 51);
    }

    #[test]
    fn malformed_source_rejected() {
        assert!(KernelParams::from_source("#define REAL float\n").is_err());
        assert!(KernelParams::from_source(
            "#define REAL quad\n#define VECTOR_WIDTH 1\n#define MAX_ITER 1\n"
        )
        .is_err());
    }
}
