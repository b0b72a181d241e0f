//! Channel-group shift operator for `[N, T, H, W, C]` tensors.
//!
//! A [`ShiftSpec`] splits the channel dimension into contiguous groups, each
//! translated by `+offset` or `-offset` positions along one of the time,
//! height or width axes. Vacated positions are zero-filled and channels past
//! the last group are copied through untouched. The operator has no
//! parameters and performs no arithmetic, so its adjoint is the same
//! translation with every offset negated.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Axis of a `[N, T, H, W, C]` tensor a shift group moves along.
///
/// The declaration order is the canonical partition order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShiftAxis {
    Time,
    Height,
    Width,
}

impl ShiftAxis {
    pub const ALL: [ShiftAxis; 3] = [ShiftAxis::Time, ShiftAxis::Height, ShiftAxis::Width];

    /// Index of this axis in the `[N, T, H, W, C]` layout.
    pub fn tensor_axis(self) -> usize {
        match self {
            ShiftAxis::Time => 1,
            ShiftAxis::Height => 2,
            ShiftAxis::Width => 3,
        }
    }
}

/// Non-negative rational number, written `num/den` in configs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Fraction {
    pub num: u32,
    pub den: u32,
}

impl Fraction {
    pub const ZERO: Fraction = Fraction { num: 0, den: 1 };

    pub fn new(num: u32, den: u32) -> Result<Self> {
        if den == 0 {
            return Err(Error::Config("fraction with zero denominator".into()));
        }
        Ok(Self { num, den })
    }

    /// `floor(self * n)` computed exactly.
    pub fn floor_mul(self, n: usize) -> usize {
        (n as u64 * self.num as u64 / self.den as u64) as usize
    }

    pub fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl fmt::Display for Fraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl FromStr for Fraction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("cannot parse fraction {s:?}, expected e.g. \"1/3\""));
        match s.split_once('/') {
            Some((n, d)) => Fraction::new(
                n.trim().parse().map_err(|_| bad())?,
                d.trim().parse().map_err(|_| bad())?,
            ),
            None => Fraction::new(s.trim().parse().map_err(|_| bad())?, 1),
        }
    }
}

impl Serialize for Fraction {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Fraction {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Channel-independent part of a shift configuration.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftPolicy {
    pub axes: Vec<ShiftAxis>,
    pub fraction: Fraction,
    #[serde(default = "default_offset")]
    pub offset: usize,
}

fn default_offset() -> usize {
    1
}

impl ShiftPolicy {
    /// One third of the channels over height and width.
    pub fn image() -> Self {
        Self {
            axes: vec![ShiftAxis::Height, ShiftAxis::Width],
            fraction: Fraction { num: 1, den: 3 },
            offset: 1,
        }
    }

    /// Half of the channels over time, height and width.
    pub fn video() -> Self {
        Self {
            axes: ShiftAxis::ALL.to_vec(),
            fraction: Fraction { num: 1, den: 2 },
            offset: 1,
        }
    }

    pub fn none() -> Self {
        Self {
            axes: Vec::new(),
            fraction: Fraction::ZERO,
            offset: 1,
        }
    }

    /// Same policy with `axis` dropped; the fraction is kept and re-split
    /// over the remaining axes.
    pub fn without_axis(&self, axis: ShiftAxis) -> Self {
        Self {
            axes: self.axes.iter().copied().filter(|&a| a != axis).collect(),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.fraction.den == 0 {
            return Err(Error::Config("shift fraction has zero denominator".into()));
        }
        if self.fraction.num > self.fraction.den {
            return Err(Error::Config(format!(
                "shift fraction {} exceeds 1",
                self.fraction
            )));
        }
        if self.offset == 0 {
            return Err(Error::Config("shift offset must be positive".into()));
        }
        Ok(())
    }
}

/// Shift configuration bound to a channel count.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShiftSpec {
    pub policy: ShiftPolicy,
    pub channels: usize,
}

/// One contiguous block of channels moved along a single axis.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShiftGroup {
    pub channels: Range<usize>,
    pub axis: ShiftAxis,
    pub offset: isize,
}

impl ShiftSpec {
    pub fn new(policy: ShiftPolicy, channels: usize) -> Result<Self> {
        policy.validate()?;
        if channels == 0 {
            return Err(Error::Config("shift over zero channels".into()));
        }
        Ok(Self { policy, channels })
    }

    pub fn image(channels: usize) -> Result<Self> {
        Self::new(ShiftPolicy::image(), channels)
    }

    pub fn video(channels: usize) -> Result<Self> {
        Self::new(ShiftPolicy::video(), channels)
    }

    /// Splits the channels into shift groups.
    ///
    /// `floor(C * fraction)` channels are shifted, divided evenly (floor) over
    /// the distinct axes in time, height, width order. Within an axis the
    /// negative group gets `floor(n / 2)` channels and the positive group the
    /// rest, positive first. Channels left over stay in place at the tail.
    /// Empty groups are omitted.
    pub fn partition(&self) -> Result<Vec<ShiftGroup>> {
        self.policy.validate()?;
        let mut axes = self.policy.axes.clone();
        axes.sort();
        axes.dedup();
        if axes.is_empty() {
            return Ok(Vec::new());
        }
        let shifted = self.policy.fraction.floor_mul(self.channels);
        let per_axis = shifted / axes.len();
        let minus = per_axis / 2;
        let plus = per_axis - minus;
        let magnitude = self.policy.offset as isize;

        let mut groups = Vec::new();
        let mut start = 0;
        for axis in axes {
            for (count, offset) in [(plus, magnitude), (minus, -magnitude)] {
                if count > 0 {
                    groups.push(ShiftGroup {
                        channels: start..start + count,
                        axis,
                        offset,
                    });
                    start += count;
                }
            }
        }
        debug_assert!(start <= self.channels);
        Ok(groups)
    }

    pub fn shifted_channels(&self) -> Result<usize> {
        Ok(self.partition()?.iter().map(|g| g.channels.len()).sum())
    }
}

/// Translates each group by its offset: `out[i] = x[i - offset]` along the
/// group's axis, zero where `i - offset` falls outside the tensor.
pub fn shift(x: &Tensor, spec: &ShiftSpec) -> Result<Tensor> {
    apply_groups(x, spec, 1)
}

/// Adjoint of [`shift`]: the same translation with every offset negated.
pub fn shift_vjp(grad_out: &Tensor, spec: &ShiftSpec) -> Result<Tensor> {
    apply_groups(grad_out, spec, -1)
}

fn apply_groups(x: &Tensor, spec: &ShiftSpec, sign: isize) -> Result<Tensor> {
    let dims = x.dims5()?;
    if dims[4] != spec.channels {
        return Err(Error::Shape(format!(
            "shift spec expects {} channels, tensor has shape {:?}",
            spec.channels,
            x.shape()
        )));
    }
    let groups = spec.partition()?;
    Ok(translate_groups(x, dims, &groups, sign))
}

pub(crate) fn translate_groups(
    x: &Tensor,
    dims: [usize; 5],
    groups: &[ShiftGroup],
    sign: isize,
) -> Tensor {
    let [n, t, h, w, c] = dims;
    let mut out = x.clone();
    if groups.is_empty() {
        return out;
    }
    let src = x.data();
    let dst = out.data_mut();
    let extents = [t as isize, h as isize, w as isize];
    for b in 0..n {
        for ti in 0..t {
            for hi in 0..h {
                for wi in 0..w {
                    let pos = [ti as isize, hi as isize, wi as isize];
                    let base = (((b * t + ti) * h + hi) * w + wi) * c;
                    for g in groups {
                        let ax = g.axis.tensor_axis() - 1;
                        let mut from = pos;
                        from[ax] -= sign * g.offset;
                        let out_slice = &mut dst[base + g.channels.start..base + g.channels.end];
                        if from[ax] < 0 || from[ax] >= extents[ax] {
                            out_slice.fill(0.0);
                        } else {
                            let sbase = (((b * t + from[0] as usize) * h + from[1] as usize) * w
                                + from[2] as usize)
                                * c;
                            out_slice.copy_from_slice(
                                &src[sbase + g.channels.start..sbase + g.channels.end],
                            );
                        }
                    }
                }
            }
        }
    }
    out
}
