use crate::error::{Result, VoxError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PaddingMode {
    Zero,
    Reflect,
}

/// Geometry of a 3D convolution layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub padding_mode: PaddingMode,
    /// Extra trailing extent for transposed convolutions; ignored by `conv3d`.
    pub output_padding: [usize; 3],
}

impl ConvSpec {
    /// Cubic kernel, isotropic stride and padding.
    pub fn cubic(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        padding_mode: PaddingMode,
    ) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel: [kernel; 3],
            stride: [stride; 3],
            padding: [padding; 3],
            padding_mode,
            output_padding: [0; 3],
        }
    }

    pub fn with_output_padding(mut self, output_padding: usize) -> Self {
        self.output_padding = [output_padding; 3];
        self
    }

    pub fn validate(&self) -> Result<()> {
        const OP: &str = "conv_spec";
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(VoxError::config(OP, "channel counts must be >= 1"));
        }
        for axis in 0..3 {
            if self.kernel[axis] == 0 || self.stride[axis] == 0 {
                return Err(VoxError::config(
                    OP,
                    format!("kernel and stride must be >= 1 on axis {axis}"),
                ));
            }
            if self.padding[axis] >= self.kernel[axis] {
                return Err(VoxError::config(
                    OP,
                    format!(
                        "padding {} must be smaller than kernel {} on axis {axis}",
                        self.padding[axis], self.kernel[axis]
                    ),
                ));
            }
        }
        Ok(())
    }

    /// Spatial output extents of the forward convolution.
    pub fn conv_output(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        self.validate()?;
        let mut out = [0; 3];
        for axis in 0..3 {
            let padded = input[axis] + 2 * self.padding[axis];
            if padded < self.kernel[axis] {
                return Err(VoxError::config(
                    "conv3d",
                    format!(
                        "axis {axis}: padded extent {padded} is smaller than kernel {}",
                        self.kernel[axis]
                    ),
                ));
            }
            out[axis] = (padded - self.kernel[axis]) / self.stride[axis] + 1;
        }
        Ok(out)
    }

    /// Spatial output extents of the transposed convolution.
    pub fn transpose_output(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        self.validate()?;
        let mut out = [0; 3];
        for axis in 0..3 {
            if input[axis] == 0 {
                return Err(VoxError::config("conv_transpose3d", "empty input extent"));
            }
            let full = (input[axis] - 1) * self.stride[axis] + self.kernel[axis];
            let total = full + self.output_padding[axis];
            if total <= 2 * self.padding[axis] {
                return Err(VoxError::config(
                    "conv_transpose3d",
                    format!("axis {axis}: output extent would be non-positive"),
                ));
            }
            out[axis] = total - 2 * self.padding[axis];
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Tanh,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stride_two_halves() {
        let s = ConvSpec::cubic(1, 4, 3, 2, 1, PaddingMode::Zero);
        assert_eq!(s.conv_output([32, 32, 16]).unwrap(), [16, 16, 8]);
    }

    #[test]
    fn transpose_doubles() {
        let s = ConvSpec::cubic(1, 4, 3, 2, 1, PaddingMode::Zero).with_output_padding(1);
        assert_eq!(s.transpose_output([8, 8, 4]).unwrap(), [16, 16, 8]);
    }

    #[test]
    fn padding_must_be_below_kernel() {
        let s = ConvSpec::cubic(1, 1, 3, 1, 3, PaddingMode::Zero);
        assert!(s.validate().is_err());
        let s = ConvSpec::cubic(0, 1, 3, 1, 1, PaddingMode::Zero);
        assert!(s.validate().is_err());
    }
}
