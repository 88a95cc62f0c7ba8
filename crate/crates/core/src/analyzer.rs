//! Symbolic execution of layer plans: shape traces, parameter counts and
//! FLOP estimates.
//!
//! Convolutions are 1-D over the temporal axis with the width as channels.
//! Transformer layers count only the dominant matrix products and biases.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::planner::{Backbone, Direction, HierarchicalPlan, LayerOp, LayerPlan, Shape};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnalyzeError {
    #[error("plan expects input {expected}, got {found}")]
    InputMismatch { expected: Shape, found: Shape },
    #[error("layer {index} ({op}) cannot be applied to {shape}")]
    NonIntegral { index: usize, op: LayerOp, shape: Shape },
    #[error("invalid cost model: {0}")]
    InvalidCostModel(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Attention {
    Full,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostModel {
    pub kernel: u64,
    pub heads: u32,
    pub ffn_multiplier: u64,
    pub attention: Attention,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            kernel: 5,
            heads: 4,
            ffn_multiplier: 4,
            attention: Attention::Full,
        }
    }
}

impl CostModel {
    /// Default model with linear attention, as used for flattened inputs.
    pub fn linear() -> Self {
        CostModel {
            attention: Attention::Linear,
            ..CostModel::default()
        }
    }

    pub fn validate(&self) -> Result<(), AnalyzeError> {
        if self.kernel.is_multiple_of(2) {
            return Err(AnalyzeError::InvalidCostModel("kernel size must be odd"));
        }
        if self.heads == 0 {
            return Err(AnalyzeError::InvalidCostModel("need at least one head"));
        }
        if self.ffn_multiplier == 0 {
            return Err(AnalyzeError::InvalidCostModel("ffn multiplier must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceStep {
    pub index: usize,
    pub op: LayerOp,
    pub shape: Shape,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapeTrace {
    pub input: Shape,
    pub steps: Vec<TraceStep>,
}

impl ShapeTrace {
    /// Input shape followed by the shape after every layer.
    pub fn shapes(&self) -> Vec<Shape> {
        core::iter::once(self.input)
            .chain(self.steps.iter().map(|s| s.shape))
            .collect()
    }

    pub fn output(&self) -> Shape {
        self.steps.last().map_or(self.input, |s| s.shape)
    }
}

fn trace_from(ops: &[LayerOp], input: Shape) -> Result<ShapeTrace, AnalyzeError> {
    let mut shape = input;
    let mut steps = Vec::with_capacity(ops.len());
    for (index, op) in ops.iter().enumerate() {
        shape = op
            .apply(shape)
            .ok_or(AnalyzeError::NonIntegral { index, op: *op, shape })?;
        steps.push(TraceStep {
            index,
            op: *op,
            shape,
        });
    }
    Ok(ShapeTrace { input, steps })
}

pub fn propagate_shapes(plan: &LayerPlan, input: Shape) -> Result<ShapeTrace, AnalyzeError> {
    if input != plan.input {
        return Err(AnalyzeError::InputMismatch {
            expected: plan.input,
            found: input,
        });
    }
    trace_from(&plan.ops, input)
}

fn transformer_params(d_in: u64, d_out: u64, model: &CostModel) -> u64 {
    let hidden = model.ffn_multiplier * d_in;
    let weights = 4 * d_in * d_in + d_in * d_out + 2 * d_in * hidden;
    let biases = 4 * d_in + d_out + hidden + d_in;
    weights + biases
}

/// FLOPs of one attention layer with `queries` positions attending over
/// `keys` positions at width `d_in`, then projecting to `d_out`.
fn transformer_flops(queries: u64, keys: u64, d_in: u64, d_out: u64, model: &CostModel) -> u64 {
    let n = queries;
    let d = d_in;
    let mixing = match model.attention {
        Attention::Full => 4 * n * keys * d,
        Attention::Linear => 4 * n * d * d,
    };
    8 * n * d * d + mixing + 4 * n * d * (model.ffn_multiplier * d) + 2 * n * d * d_out
}

fn layer_params(op: &LayerOp, before: Shape, after: Shape, model: &CostModel) -> u64 {
    match op {
        op if op.is_convolution() => model.kernel * before.width * after.width + after.width,
        LayerOp::ReduceWidthMajor { .. } | LayerOp::ReduceWidthMinor { .. } | LayerOp::CrossAttention => {
            transformer_params(before.width, after.width, model)
        }
        LayerOp::Placeholder { len } => len * before.width,
        _ => 0,
    }
}

fn layer_flops(op: &LayerOp, before: Shape, after: Shape, context: u64, model: &CostModel) -> u64 {
    match op {
        op if op.is_convolution() => 2 * model.kernel * before.width * after.width * after.len,
        LayerOp::ReduceWidthMajor { .. } | LayerOp::ReduceWidthMinor { .. } => {
            transformer_flops(before.len, before.len, before.width, after.width, model)
        }
        LayerOp::CrossAttention => transformer_flops(before.len, context, before.width, after.width, model),
        _ => 0,
    }
}

/// Per-layer `(params, flops)` along the plan's trace.
pub fn layer_costs(plan: &LayerPlan, model: &CostModel) -> Result<Vec<(u64, u64)>, AnalyzeError> {
    model.validate()?;
    let trace = propagate_shapes(plan, plan.input)?;
    // cross-attention in a decoder attends over the latent it starts from
    let context = plan.input.len;
    let shapes = trace.shapes();
    Ok(trace
        .steps
        .iter()
        .zip(shapes.windows(2))
        .map(|(step, w)| {
            (
                layer_params(&step.op, w[0], w[1], model),
                layer_flops(&step.op, w[0], w[1], context, model),
            )
        })
        .collect())
}

pub fn count_params(plan: &LayerPlan, model: &CostModel) -> Result<u64, AnalyzeError> {
    Ok(layer_costs(plan, model)?.iter().map(|c| c.0).sum())
}

pub fn count_flops(plan: &LayerPlan, input: Shape, model: &CostModel) -> Result<u64, AnalyzeError> {
    if input != plan.input {
        return Err(AnalyzeError::InputMismatch {
            expected: plan.input,
            found: input,
        });
    }
    Ok(layer_costs(plan, model)?.iter().map(|c| c.1).sum())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "defect", rename_all = "snake_case")]
pub enum PlanDefect {
    NonIntegral { layer: usize, op: LayerOp, shape: Shape },
    BadFactor { layer: usize, factor: u64 },
    WrongBackbone { layer: usize, op: LayerOp },
    WrongDirection { layer: usize, op: LayerOp },
    TerminalMismatch { declared: Shape, reached: Shape },
}

/// Every constraint the plan violates; empty when it is sound.
pub fn validate_plan(plan: &LayerPlan) -> Vec<PlanDefect> {
    let mut defects = Vec::new();
    for (layer, op) in plan.ops.iter().enumerate() {
        if let LayerOp::ReduceWidthMajor { factor } | LayerOp::ReduceWidthMinor { factor } = op {
            if !factor.is_power_of_two() {
                defects.push(PlanDefect::BadFactor {
                    layer,
                    factor: *factor,
                });
            }
        }
        let backbone_ok = match plan.backbone {
            Backbone::Cnn => op.is_convolution(),
            Backbone::Transformer => !op.is_convolution(),
        };
        if !backbone_ok {
            defects.push(PlanDefect::WrongBackbone { layer, op: *op });
        }
        let decoding = matches!(
            op,
            LayerOp::DoubleLength
                | LayerOp::DoubleWidth
                | LayerOp::DoubleBoth
                | LayerOp::CrossAttention
                | LayerOp::Placeholder { .. }
        );
        if decoding != (plan.direction == Direction::Decode) {
            defects.push(PlanDefect::WrongDirection { layer, op: *op });
        }
    }
    match trace_from(&plan.ops, plan.input) {
        Ok(trace) if trace.output() != plan.output => defects.push(PlanDefect::TerminalMismatch {
            declared: plan.output,
            reached: trace.output(),
        }),
        Ok(_) => {}
        Err(AnalyzeError::NonIntegral { index, op, shape }) => {
            defects.push(PlanDefect::NonIntegral { layer: index, op, shape })
        }
        Err(_) => unreachable!("trace_from only fails on integrality"),
    }
    defects
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanAnalysis {
    pub trace: ShapeTrace,
    pub params: u64,
    pub flops: u64,
}

pub fn analyze(plan: &LayerPlan, model: &CostModel) -> Result<PlanAnalysis, AnalyzeError> {
    let costs = layer_costs(plan, model)?;
    Ok(PlanAnalysis {
        trace: propagate_shapes(plan, plan.input)?,
        params: costs.iter().map(|c| c.0).sum(),
        flops: costs.iter().map(|c| c.1).sum(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HierarchicalCost {
    pub text_params: u64,
    pub event_params: u64,
    /// FLOPs of the text stage on a single event.
    pub text_flops_per_event: u64,
    pub event_flops: u64,
    pub events: u64,
}

impl HierarchicalCost {
    pub fn params(&self) -> u64 {
        self.text_params + self.event_params
    }

    /// The text stage runs once per event row.
    pub fn flops(&self) -> u64 {
        self.text_flops_per_event * self.events + self.event_flops
    }
}

pub fn hierarchical_cost(plan: &HierarchicalPlan, model: &CostModel) -> Result<HierarchicalCost, AnalyzeError> {
    let text = analyze(&plan.text, model)?;
    let event = analyze(&plan.event, model)?;
    Ok(HierarchicalCost {
        text_params: text.params,
        event_params: event.params,
        text_flops_per_event: text.flops,
        event_flops: event.flops,
        events: plan.event.input.len,
    })
}
