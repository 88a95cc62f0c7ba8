//! Encoder and decoder layer schedules.
//!
//! CNN encoders halve the temporal axis, the channel axis or both per layer
//! and interleave the two kinds of compression; Transformer encoders shrink
//! channels in every layer and finish with adaptive pooling to the target
//! length. Decoders mirror the encoder back to the input shape.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("{what} = {value} is not a power of two")]
    NotPowerOfTwo { what: &'static str, value: u64 },
    #[error("cannot compress {from} into the larger shape {to}")]
    Expansion { from: Shape, to: Shape },
    #[error("layer counts mix temporal-only and channel-only layers")]
    InconsistentCounts,
    #[error("a transformer plan needs at least one layer")]
    NoLayers,
    #[error("plan is already a decoder")]
    AlreadyDecoder,
    #[error("latent size {latent} does not divide the input volume {volume}")]
    NonDividing { volume: u64, latent: u64 },
    #[error("latent temporal size {0} is too small for the search rule")]
    GridTooSmall(u64),
    #[error("intermediate width {0} is not a power of two")]
    Intermediate(u64),
}

/// `(length, width)`: sequence length `n` and channel width `d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub len: u64,
    pub width: u64,
}

impl Shape {
    pub const fn new(len: u64, width: u64) -> Self {
        Shape { len, width }
    }

    pub fn volume(&self) -> u64 {
        self.len * self.width
    }

    fn require_pow2(&self) -> Result<(), PlanError> {
        pow2("length", self.len)?;
        pow2("width", self.width)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.len, self.width)
    }
}

fn pow2(what: &'static str, value: u64) -> Result<(), PlanError> {
    if value.is_power_of_two() {
        Ok(())
    } else {
        Err(PlanError::NotPowerOfTwo { what, value })
    }
}

fn log2(value: u64) -> u32 {
    value.trailing_zeros()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backbone {
    Cnn,
    Transformer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Encode,
    Decode,
}

/// One layer of a plan. Serialized names follow the usual shorthand:
/// `Ln`, `Ld`, `Lnd` for halving layers, `Ld1`/`Ld2` for transformer channel
/// reductions, `Un`, `Ud`, `Und` for their expanding mirrors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "op")]
pub enum LayerOp {
    #[serde(rename = "Ln")]
    HalveLength,
    #[serde(rename = "Ld")]
    HalveWidth,
    #[serde(rename = "Lnd")]
    HalveBoth,
    /// Transformer layer dividing the width by the larger factor `2^(q+1)`.
    #[serde(rename = "Ld1")]
    ReduceWidthMajor { factor: u64 },
    /// Transformer layer dividing the width by `2^q` (possibly 1).
    #[serde(rename = "Ld2")]
    ReduceWidthMinor { factor: u64 },
    #[serde(rename = "Pool")]
    AdaptivePool { len: u64 },
    #[serde(rename = "Un")]
    DoubleLength,
    #[serde(rename = "Ud")]
    DoubleWidth,
    #[serde(rename = "Und")]
    DoubleBoth,
    /// Transformer decoder block: cross-attention to the latent, then a
    /// linear layer doubling the placeholder width.
    #[serde(rename = "XAttn")]
    CrossAttention,
    /// Learnable placeholder sequence of the target length.
    #[serde(rename = "Placeholder")]
    Placeholder { len: u64 },
}

impl LayerOp {
    pub fn code(&self) -> &'static str {
        match self {
            LayerOp::HalveLength => "Ln",
            LayerOp::HalveWidth => "Ld",
            LayerOp::HalveBoth => "Lnd",
            LayerOp::ReduceWidthMajor { .. } => "Ld1",
            LayerOp::ReduceWidthMinor { .. } => "Ld2",
            LayerOp::AdaptivePool { .. } => "Pool",
            LayerOp::DoubleLength => "Un",
            LayerOp::DoubleWidth => "Ud",
            LayerOp::DoubleBoth => "Und",
            LayerOp::CrossAttention => "XAttn",
            LayerOp::Placeholder { .. } => "Placeholder",
        }
    }

    /// Output shape, or `None` when a dimension would stop being a positive
    /// integer.
    pub fn apply(&self, s: Shape) -> Option<Shape> {
        let halve = |x: u64| (x >= 2 && x.is_multiple_of(2)).then_some(x / 2);
        let divide = |x: u64, f: u64| (f >= 1 && x.is_multiple_of(f) && x / f >= 1).then(|| x / f);
        Some(match *self {
            LayerOp::HalveLength => Shape::new(halve(s.len)?, s.width),
            LayerOp::HalveWidth => Shape::new(s.len, halve(s.width)?),
            LayerOp::HalveBoth => Shape::new(halve(s.len)?, halve(s.width)?),
            LayerOp::ReduceWidthMajor { factor } | LayerOp::ReduceWidthMinor { factor } => {
                Shape::new(s.len, divide(s.width, factor)?)
            }
            LayerOp::AdaptivePool { len } | LayerOp::Placeholder { len } => {
                if len == 0 {
                    return None;
                }
                Shape::new(len, s.width)
            }
            LayerOp::DoubleLength => Shape::new(s.len.checked_mul(2)?, s.width),
            LayerOp::DoubleWidth | LayerOp::CrossAttention => Shape::new(s.len, s.width.checked_mul(2)?),
            LayerOp::DoubleBoth => Shape::new(s.len.checked_mul(2)?, s.width.checked_mul(2)?),
        })
    }

    /// Expanding counterpart of a CNN compression layer.
    pub fn inverse(&self) -> Option<LayerOp> {
        match self {
            LayerOp::HalveLength => Some(LayerOp::DoubleLength),
            LayerOp::HalveWidth => Some(LayerOp::DoubleWidth),
            LayerOp::HalveBoth => Some(LayerOp::DoubleBoth),
            _ => None,
        }
    }

    pub fn is_convolution(&self) -> bool {
        matches!(
            self,
            LayerOp::HalveLength
                | LayerOp::HalveWidth
                | LayerOp::HalveBoth
                | LayerOp::DoubleLength
                | LayerOp::DoubleWidth
                | LayerOp::DoubleBoth
        )
    }
}

impl fmt::Display for LayerOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerOp::ReduceWidthMajor { factor } | LayerOp::ReduceWidthMinor { factor } => {
                write!(f, "{}(/{factor})", self.code())
            }
            LayerOp::AdaptivePool { len } | LayerOp::Placeholder { len } => write!(f, "{}(->{len})", self.code()),
            _ => f.write_str(self.code()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerPlan {
    pub backbone: Backbone,
    pub direction: Direction,
    pub input: Shape,
    pub output: Shape,
    pub ops: Vec<LayerOp>,
}

impl LayerPlan {
    pub fn codes(&self) -> Vec<&'static str> {
        self.ops.iter().map(LayerOp::code).collect()
    }
}

/// Number of CNN layers of each kind needed for a compression.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCounts {
    /// Layers halving both axes.
    pub both: u32,
    /// Layers halving only the temporal axis.
    pub length_only: u32,
    /// Layers halving only the channel axis.
    pub width_only: u32,
}

impl LayerCounts {
    /// log2 of the temporal reduction.
    pub fn length_halvings(&self) -> u32 {
        self.both + self.length_only
    }

    /// log2 of the channel reduction.
    pub fn width_halvings(&self) -> u32 {
        self.both + self.width_only
    }

    pub fn layers(&self) -> u32 {
        self.both + self.length_only + self.width_only
    }

    /// Tally of an op list; ops other than the three halving kinds are ignored.
    pub fn tally(ops: &[LayerOp]) -> Self {
        let mut c = LayerCounts::default();
        for op in ops {
            match op {
                LayerOp::HalveBoth => c.both += 1,
                LayerOp::HalveLength => c.length_only += 1,
                LayerOp::HalveWidth => c.width_only += 1,
                _ => {}
            }
        }
        c
    }
}

/// Layer counts by kind for compressing `input` into `output`: as many
/// both-axis layers as the smaller of the two reductions, the surplus on
/// the other axis as single-axis layers.
pub fn cnn_layer_counts(input: Shape, output: Shape) -> Result<LayerCounts, PlanError> {
    input.require_pow2()?;
    output.require_pow2()?;
    if output.len > input.len || output.width > input.width {
        return Err(PlanError::Expansion {
            from: input,
            to: output,
        });
    }
    let r_n = log2(input.len / output.len);
    let r_d = log2(input.width / output.width);
    Ok(LayerCounts {
        both: r_n.min(r_d),
        length_only: r_n.saturating_sub(r_d),
        width_only: r_d.saturating_sub(r_n),
    })
}

fn repeat(op: LayerOp, n: u32) -> impl Iterator<Item = LayerOp> {
    core::iter::repeat_n(op, n as usize)
}

/// Orders CNN layers so temporal and channel compression alternate.
///
/// With surplus temporal layers, the `r_n - r_d` length-only layers are
/// spread over the `r_d + 1` gaps around the both-axis layers, the remainder
/// going to the last gaps. With surplus channel layers, both-axis layers are
/// paired with channel-only layers and any unpaired layers are placed first
/// (or split around the pairs when channel-only layers dominate).
pub fn cnn_layer_order(counts: LayerCounts) -> Result<Vec<LayerOp>, PlanError> {
    use LayerOp::{HalveBoth as Lnd, HalveLength as Ln, HalveWidth as Ld};
    if counts.length_only > 0 && counts.width_only > 0 {
        return Err(PlanError::InconsistentCounts);
    }
    let r_n = counts.length_halvings();
    let r_d = counts.width_halvings();
    let n_l = counts.layers();
    let mut ops = Vec::with_capacity(n_l as usize);

    if counts.length_only > 0 {
        let surplus = r_n - r_d;
        let per_gap = surplus / (r_d + 1);
        let extra = surplus % (r_d + 1);
        // [Ln]*per_gap + [Lnd], repeated; the last `extra` groups get one more Ln
        for _ in 0..r_d - extra {
            ops.extend(repeat(Ln, per_gap));
            ops.push(Lnd);
        }
        for _ in 0..extra {
            ops.extend(repeat(Ln, per_gap));
            ops.push(Lnd);
            ops.push(Ln);
        }
        ops.extend(repeat(Ln, per_gap));
    } else if counts.width_only > 0 {
        if 2 * r_n + 1 < r_d {
            let odd = n_l % 2;
            ops.extend(repeat(Ld, odd));
            for _ in 0..r_n {
                ops.extend([Lnd, Ld]);
            }
            ops.extend(repeat(Ld, n_l - 2 * r_n - odd));
        } else {
            let pairs = if 2 * r_n >= r_d { r_d - r_n } else { r_n.min(r_d / 2) };
            if r_n - pairs == r_d - 2 * pairs {
                ops.extend(repeat(Lnd, r_n - pairs));
            } else {
                ops.extend(repeat(Ld, r_d - 2 * pairs));
            }
            for _ in 0..pairs {
                ops.extend([Lnd, Ld]);
            }
        }
    } else {
        ops.extend(repeat(Lnd, n_l));
    }
    Ok(ops)
}

/// CNN encoder compressing `input` into `output`.
pub fn cnn_plan(input: Shape, output: Shape) -> Result<LayerPlan, PlanError> {
    let ops = cnn_layer_order(cnn_layer_counts(input, output)?)?;
    Ok(LayerPlan {
        backbone: Backbone::Cnn,
        direction: Direction::Encode,
        input,
        output,
        ops,
    })
}

/// Transformer encoder of `layers` channel-reducing layers plus adaptive
/// pooling. With `r = log2(d/d')`, `q = r / layers` and `m = r % layers`, the
/// first `m` layers divide the width by `2^(q+1)` and the rest by `2^q`.
pub fn transformer_plan(input: Shape, output: Shape, layers: u32) -> Result<LayerPlan, PlanError> {
    pow2("width", input.width)?;
    pow2("output width", output.width)?;
    if layers == 0 {
        return Err(PlanError::NoLayers);
    }
    if output.width > input.width || output.len == 0 {
        return Err(PlanError::Expansion {
            from: input,
            to: output,
        });
    }
    let r_d = log2(input.width / output.width);
    let q = r_d / layers;
    let m = r_d % layers;
    let mut ops: Vec<LayerOp> = Vec::with_capacity(layers as usize + 1);
    ops.extend(repeat(LayerOp::ReduceWidthMajor { factor: 1 << (q + 1) }, m));
    ops.extend(repeat(LayerOp::ReduceWidthMinor { factor: 1 << q }, layers - m));
    ops.push(LayerOp::AdaptivePool { len: output.len });
    Ok(LayerPlan {
        backbone: Backbone::Transformer,
        direction: Direction::Encode,
        input,
        output,
        ops,
    })
}

/// Decoder returning an encoder's output shape to its input shape.
///
/// CNN decoders reverse the encoder, replacing each halving layer by the
/// matching doubling layer. Transformer decoders start from a placeholder
/// sequence of the input length at the latent width and apply one
/// cross-attention block per channel doubling.
pub fn mirror_decoder(encoder: &LayerPlan) -> Result<LayerPlan, PlanError> {
    if encoder.direction == Direction::Decode {
        return Err(PlanError::AlreadyDecoder);
    }
    let ops = match encoder.backbone {
        Backbone::Cnn => encoder
            .ops
            .iter()
            .rev()
            .map(|op| op.inverse().ok_or(PlanError::InconsistentCounts))
            .collect::<Result<Vec<_>, _>>()?,
        Backbone::Transformer => {
            pow2("width", encoder.input.width)?;
            pow2("output width", encoder.output.width)?;
            if encoder.output.width > encoder.input.width {
                return Err(PlanError::Expansion {
                    from: encoder.input,
                    to: encoder.output,
                });
            }
            let doublings = log2(encoder.input.width / encoder.output.width);
            let mut ops = vec![LayerOp::Placeholder {
                len: encoder.input.len,
            }];
            ops.extend(repeat(LayerOp::CrossAttention, doublings));
            ops
        }
    };
    Ok(LayerPlan {
        backbone: encoder.backbone,
        direction: Direction::Decode,
        input: encoder.output,
        output: encoder.input,
        ops,
    })
}

/// Latent `z` of shape `temporal × channels`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LatentSpec {
    pub temporal: u64,
    pub channels: u64,
}

impl LatentSpec {
    pub fn new(temporal: u64, channels: u64) -> Result<Self, PlanError> {
        pow2("latent temporal", temporal)?;
        pow2("latent channels", channels)?;
        Ok(LatentSpec { temporal, channels })
    }

    pub fn size(&self) -> u64 {
        self.temporal * self.channels
    }

    pub fn shape(&self) -> Shape {
        Shape::new(self.temporal, self.channels)
    }
}

/// Dimensions of the hierarchical input `n_e × n_{t/e} × d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HierDims {
    pub events: u64,
    pub tokens_per_event: u64,
    pub width: u64,
}

pub const DEFAULT_HIER: HierDims = HierDims {
    events: 256,
    tokens_per_event: 128,
    width: 256,
};

/// Flattened input `n_t × d`.
pub const DEFAULT_FLAT: Shape = Shape::new(8192, 256);

/// Transformer layers per stage of the hierarchical encoder.
pub const HIER_TRANSFORMER_LAYERS: u32 = 2;

/// Transformer layers of the one-stage flattened encoder.
pub const FLAT_TRANSFORMER_LAYERS: u32 = 4;

/// Per-event output of the text stage before flattening.
pub const DEFAULT_PER_EVENT: Shape = Shape::new(1, 128);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageOptions {
    /// Shape each event is compressed to by the text stage; flattened it
    /// gives the event stage's input width.
    pub per_event: Shape,
    pub text_layers: u32,
    pub event_layers: u32,
}

impl Default for StageOptions {
    fn default() -> Self {
        StageOptions {
            per_event: DEFAULT_PER_EVENT,
            text_layers: HIER_TRANSFORMER_LAYERS,
            event_layers: HIER_TRANSFORMER_LAYERS,
        }
    }
}

impl StageOptions {
    /// Default options, with the per-event width raised to the latent
    /// channel count when that exceeds it so the event stage only compresses.
    pub fn fitting(latent: LatentSpec) -> Self {
        let mut opts = StageOptions::default();
        if latent.channels > opts.per_event.volume() {
            opts.per_event = Shape::new(1, latent.channels);
        }
        opts
    }
}

/// Two-stage encoder: a text stage shared across events, then an event
/// stage over the concatenated per-event vectors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HierarchicalPlan {
    pub text: LayerPlan,
    pub event: LayerPlan,
    /// Flattened per-event width feeding the event stage.
    pub event_width: u64,
}

fn stage_plan(backbone: Backbone, input: Shape, output: Shape, layers: u32) -> Result<LayerPlan, PlanError> {
    match backbone {
        Backbone::Cnn => cnn_plan(input, output),
        Backbone::Transformer => transformer_plan(input, output, layers),
    }
}

pub fn hierarchical_plan(
    dims: HierDims,
    latent: LatentSpec,
    backbone: Backbone,
    options: StageOptions,
) -> Result<HierarchicalPlan, PlanError> {
    pow2("events", dims.events)?;
    let event_width = options.per_event.volume();
    if !event_width.is_power_of_two() {
        return Err(PlanError::Intermediate(event_width));
    }
    let text = stage_plan(
        backbone,
        Shape::new(dims.tokens_per_event, dims.width),
        options.per_event,
        options.text_layers,
    )?;
    let event = stage_plan(
        backbone,
        Shape::new(dims.events, event_width),
        latent.shape(),
        options.event_layers,
    )?;
    Ok(HierarchicalPlan {
        text,
        event,
        event_width,
    })
}

/// One-stage encoder compressing the flattened input directly.
pub fn flat_plan(input: Shape, latent: LatentSpec, backbone: Backbone, layers: u32) -> Result<LayerPlan, PlanError> {
    stage_plan(backbone, input, latent.shape(), layers)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InputVolume {
    Hierarchical(HierDims),
    Flattened(Shape),
}

impl InputVolume {
    pub fn volume(&self) -> u64 {
        match self {
            InputVolume::Hierarchical(h) => h.events * h.tokens_per_event * h.width,
            InputVolume::Flattened(s) => s.volume(),
        }
    }
}

/// How many times the input embedding is larger than a latent of size `l`.
pub fn compression_rate(input: InputVolume, latent_size: u64) -> Result<u64, PlanError> {
    let volume = input.volume();
    if latent_size == 0 || !volume.is_multiple_of(latent_size) {
        return Err(PlanError::NonDividing {
            volume,
            latent: latent_size,
        });
    }
    Ok(volume / latent_size)
}

/// Latent shapes searched for every `l = 2^p` in `[l_min, l_max]`: with
/// `p = 2i - 1` or `p = 2i`, five temporal sizes `2^(i-2) ..= 2^(i+2)`.
pub fn search_grid(l_min: u64, l_max: u64) -> Result<Vec<LatentSpec>, PlanError> {
    pow2("l_min", l_min)?;
    pow2("l_max", l_max)?;
    if l_min > l_max {
        return Err(PlanError::Expansion {
            from: Shape::new(l_min, 1),
            to: Shape::new(l_max, 1),
        });
    }
    let mut grid = Vec::new();
    for p in log2(l_min)..=log2(l_max) {
        let i = p.div_ceil(2);
        if i < 2 || i + 2 > p {
            return Err(PlanError::GridTooSmall(1 << p));
        }
        for e in i - 2..=i + 2 {
            grid.push(LatentSpec {
                temporal: 1 << e,
                channels: 1 << (p - e),
            });
        }
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;
    use LayerOp::{HalveBoth as Lnd, HalveLength as Ln, HalveWidth as Ld};

    #[test]
    fn counts_table_example() {
        let c = cnn_layer_counts(Shape::new(8192, 256), Shape::new(64, 8)).unwrap();
        assert_eq!(
            c,
            LayerCounts {
                both: 5,
                length_only: 2,
                width_only: 0
            }
        );
        assert_eq!(c.layers(), 7);
    }

    #[test]
    fn counts_identity_and_channel_heavy() {
        let s = Shape::new(64, 32);
        assert_eq!(cnn_layer_counts(s, s).unwrap(), LayerCounts::default());
        let c = cnn_layer_counts(Shape::new(256, 256), Shape::new(16, 4)).unwrap();
        assert_eq!(
            c,
            LayerCounts {
                both: 4,
                length_only: 0,
                width_only: 2
            }
        );
    }

    #[test]
    fn counts_errors() {
        assert!(matches!(
            cnn_layer_counts(Shape::new(100, 256), Shape::new(10, 8)),
            Err(PlanError::NotPowerOfTwo { .. })
        ));
        assert!(matches!(
            cnn_layer_counts(Shape::new(64, 8), Shape::new(128, 8)),
            Err(PlanError::Expansion { .. })
        ));
    }

    #[test]
    fn order_table_example() {
        let c = cnn_layer_counts(Shape::new(8192, 256), Shape::new(64, 8)).unwrap();
        assert_eq!(cnn_layer_order(c).unwrap(), [Lnd, Lnd, Lnd, Lnd, Ln, Lnd, Ln]);
    }

    #[test]
    fn order_balanced_and_channel_heavy() {
        let balanced = LayerCounts {
            both: 3,
            ..LayerCounts::default()
        };
        assert_eq!(cnn_layer_order(balanced).unwrap(), [Lnd, Lnd, Lnd]);
        let c = LayerCounts {
            both: 4,
            length_only: 0,
            width_only: 2,
        };
        assert_eq!(cnn_layer_order(c).unwrap(), [Lnd, Lnd, Lnd, Ld, Lnd, Ld]);
    }

    #[test]
    fn order_rejects_mixed_counts() {
        let c = LayerCounts {
            both: 1,
            length_only: 1,
            width_only: 1,
        };
        assert_eq!(cnn_layer_order(c), Err(PlanError::InconsistentCounts));
    }

    #[test]
    fn transformer_table_example() {
        let p = transformer_plan(Shape::new(8192, 256), Shape::new(64, 8), 4).unwrap();
        assert_eq!(
            p.ops,
            [
                LayerOp::ReduceWidthMajor { factor: 4 },
                LayerOp::ReduceWidthMinor { factor: 2 },
                LayerOp::ReduceWidthMinor { factor: 2 },
                LayerOp::ReduceWidthMinor { factor: 2 },
                LayerOp::AdaptivePool { len: 64 },
            ]
        );
    }

    #[test]
    fn transformer_without_channel_reduction() {
        let p = transformer_plan(Shape::new(128, 64), Shape::new(8, 64), 3).unwrap();
        assert_eq!(p.ops[..3], [LayerOp::ReduceWidthMinor { factor: 1 }; 3]);
        assert_eq!(p.ops[3], LayerOp::AdaptivePool { len: 8 });
    }

    #[test]
    fn transformer_remainder_layers() {
        // r_d = 7 over 4 layers: q = 1, r = 3
        let p = transformer_plan(Shape::new(64, 256), Shape::new(8, 2), 4).unwrap();
        let factors: Vec<u64> = p
            .ops
            .iter()
            .filter_map(|op| match op {
                LayerOp::ReduceWidthMajor { factor } | LayerOp::ReduceWidthMinor { factor } => Some(*factor),
                _ => None,
            })
            .collect();
        assert_eq!(factors, [4, 4, 4, 2]);
        assert_eq!(transformer_plan(Shape::new(64, 8), Shape::new(8, 16), 2).unwrap_err(), PlanError::Expansion {
            from: Shape::new(64, 8),
            to: Shape::new(8, 16)
        });
        assert_eq!(transformer_plan(Shape::new(64, 8), Shape::new(8, 4), 0), Err(PlanError::NoLayers));
    }

    #[test]
    fn cnn_mirror() {
        let enc = cnn_plan(Shape::new(8192, 256), Shape::new(64, 8)).unwrap();
        let dec = mirror_decoder(&enc).unwrap();
        assert_eq!(dec.codes(), ["Un", "Und", "Un", "Und", "Und", "Und", "Und"]);
        assert_eq!((dec.input, dec.output), (Shape::new(64, 8), Shape::new(8192, 256)));
        assert_eq!(mirror_decoder(&dec), Err(PlanError::AlreadyDecoder));

        let empty = cnn_plan(Shape::new(8, 8), Shape::new(8, 8)).unwrap();
        assert!(mirror_decoder(&empty).unwrap().ops.is_empty());
    }

    #[test]
    fn transformer_mirror() {
        let enc = transformer_plan(Shape::new(8192, 256), Shape::new(64, 8), 4).unwrap();
        let dec = mirror_decoder(&enc).unwrap();
        assert_eq!(dec.ops[0], LayerOp::Placeholder { len: 8192 });
        assert_eq!(dec.ops[1..], [LayerOp::CrossAttention; 5]);
    }

    #[test]
    fn hierarchical_defaults() {
        let latent = LatentSpec::new(256, 8).unwrap();
        let h = hierarchical_plan(DEFAULT_HIER, latent, Backbone::Cnn, StageOptions::default()).unwrap();
        assert_eq!((h.text.input, h.text.output), (Shape::new(128, 256), Shape::new(1, 128)));
        assert_eq!((h.event.input, h.event.output), (Shape::new(256, 128), Shape::new(256, 8)));
        assert_eq!(h.event_width, 128);

        let identity = LatentSpec::new(256, 128).unwrap();
        let h = hierarchical_plan(DEFAULT_HIER, identity, Backbone::Cnn, StageOptions::default()).unwrap();
        assert!(h.event.ops.is_empty());

        let odd = StageOptions {
            per_event: Shape::new(3, 32),
            ..StageOptions::default()
        };
        assert!(hierarchical_plan(DEFAULT_HIER, latent, Backbone::Cnn, odd).is_err());
    }

    #[test]
    fn flat_one_stage() {
        let latent = LatentSpec::new(64, 8).unwrap();
        let p = flat_plan(DEFAULT_FLAT, latent, Backbone::Cnn, 0).unwrap();
        assert_eq!((p.input, p.output), (Shape::new(8192, 256), Shape::new(64, 8)));
    }

    #[test]
    fn fitting_widens_per_event_width() {
        let wide = LatentSpec::new(16, 256).unwrap();
        assert_eq!(StageOptions::fitting(wide).per_event, Shape::new(1, 256));
        let narrow = LatentSpec::new(64, 32).unwrap();
        assert_eq!(StageOptions::fitting(narrow).per_event, DEFAULT_PER_EVENT);
    }

    #[test]
    fn compression_rates() {
        assert_eq!(compression_rate(InputVolume::Hierarchical(DEFAULT_HIER), 2048), Ok(4096));
        assert_eq!(compression_rate(InputVolume::Flattened(DEFAULT_FLAT), 4096), Ok(512));
        assert_eq!(compression_rate(InputVolume::Flattened(DEFAULT_FLAT), 8192 * 256), Ok(1));
        assert!(compression_rate(InputVolume::Flattened(DEFAULT_FLAT), 0).is_err());
        assert!(compression_rate(InputVolume::Flattened(DEFAULT_FLAT), 3).is_err());
    }

    #[test]
    fn grid_points() {
        let t = |l| -> Vec<u64> { search_grid(l, l).unwrap().iter().map(|s| s.temporal).collect() };
        assert_eq!(t(2048), [16, 32, 64, 128, 256]);
        assert_eq!(t(256), [4, 8, 16, 32, 64]);
        let grid = search_grid(256, 4096).unwrap();
        assert_eq!(grid.len(), 25);
        assert!(grid.iter().all(|s| s.size().is_power_of_two()));
        assert!(search_grid(300, 4096).is_err());
        assert!(search_grid(4, 4).is_err());
    }
}
