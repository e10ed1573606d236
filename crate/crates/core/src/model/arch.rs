use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// U-Net shape. `levels` counts the bottleneck, so there are `levels - 1`
/// pooling stages and as many decoder stages.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub levels: usize,
    pub pool_widths: Vec<usize>,
    pub channels: Vec<usize>,
    pub kernel_size: usize,
    pub dilations: Vec<usize>,
    /// Kernel of the convolution that follows each nearest-neighbour upsampling.
    pub up_kernel_size: usize,
    /// Moving-average width (samples) used when extracting events.
    pub smoothing_width: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            levels: 3,
            pool_widths: vec![4, 4],
            channels: vec![16, 32, 64],
            kernel_size: 7,
            dilations: vec![1, 1, 1],
            up_kernel_size: 4,
            smoothing_width: 42,
        }
    }
}

impl ArchConfig {
    /// Two-level configuration used for gradient checks and smoke tests.
    pub fn tiny() -> Self {
        Self {
            levels: 2,
            pool_widths: vec![4],
            channels: vec![2, 4],
            kernel_size: 7,
            dilations: vec![1, 1],
            up_kernel_size: 4,
            smoothing_width: 42,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.levels < 1 {
            return bad("levels must be >= 1".into());
        }
        if self.pool_widths.len() != self.levels - 1 {
            return bad(format!("need {} pool widths, got {}", self.levels - 1, self.pool_widths.len()));
        }
        if self.channels.len() != self.levels {
            return bad(format!("need {} channel counts, got {}", self.levels, self.channels.len()));
        }
        if self.dilations.len() != self.levels {
            return bad(format!("need {} dilations, got {}", self.levels, self.dilations.len()));
        }
        let all = self.pool_widths.iter().chain(&self.channels).chain(&self.dilations);
        if all.copied().any(|v| v == 0)
            || self.kernel_size == 0
            || self.up_kernel_size == 0
            || self.smoothing_width == 0
        {
            return bad("all sizes must be >= 1".into());
        }
        Ok(())
    }

    /// Shortest input the encoder accepts.
    pub fn min_input_len(&self) -> usize {
        self.pool_widths.iter().product()
    }

    /// Learnable parameter count in closed form.
    pub fn param_count(&self) -> usize {
        let conv = |o: usize, i: usize, k: usize| o * i * k + o;
        let composite = |o: usize, i: usize| conv(o, i, self.kernel_size) + 2 * o;
        let mut n = 0;
        let mut prev = 1;
        for &c in &self.channels {
            n += composite(c, prev) + composite(c, c);
            prev = c;
        }
        for l in (0..self.levels - 1).rev() {
            let (deep, c) = (self.channels[l + 1], self.channels[l]);
            n += conv(c, deep, self.up_kernel_size);
            n += composite(c, 2 * c) + composite(c, c);
        }
        n + conv(2, self.channels[0], 1)
    }

    /// Receptive field of one bottleneck activation, in input samples.
    pub fn bottleneck_receptive_field(&self) -> usize {
        let mut rf = 1;
        let mut jump = 1;
        for l in 0..self.levels {
            rf += 2 * (self.kernel_size - 1) * self.dilations[l] * jump;
            if l + 1 < self.levels {
                rf += (self.pool_widths[l] - 1) * jump;
                jump *= self.pool_widths[l];
            }
        }
        rf
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        ArchConfig::default().validate().unwrap();
        ArchConfig::tiny().validate().unwrap();
        assert_eq!(ArchConfig::default().min_input_len(), 16);
    }

    #[test]
    fn inconsistent_lists_rejected() {
        let a = ArchConfig { pool_widths: vec![4], ..Default::default() };
        assert!(matches!(a.validate(), Err(Error::Config(_))));
        let mut a = ArchConfig::default();
        a.channels[1] = 0;
        assert!(a.validate().is_err());
        let a: std::result::Result<ArchConfig, _> = serde_json::from_str(r#"{"levels": 3, "bogus": 1}"#);
        assert!(a.is_err());
    }

    #[test]
    fn default_receptive_field() {
        // 1 + 12 | pool +3 | +48 | pool +12 | +192
        assert_eq!(ArchConfig::default().bottleneck_receptive_field(), 268);
    }
}
