//! Builders for the two convolutional architectures.
//!
//! Both builders return plain [`LayerSpec`] lists and validate them by shape
//! inference before handing them out. Inputs are square H x W x 3 tensors.
//!
//! The AlexNet-style stack is implemented exactly as printed in its source
//! description — it omits the canonical second 5x5 conv stage, hence the
//! "variant" name — and requires an input of at least 67 px so the final
//! feature map stays at least 3x3.

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::model::{infer_shapes, InputShape, LayerSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    ThreeConvNn,
    AlexNetVariant,
}

impl ModelKind {
    pub fn default_input_hw(self) -> usize {
        match self {
            ModelKind::ThreeConvNn => 256,
            ModelKind::AlexNetVariant => 227,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::ThreeConvNn => "3convnn",
            ModelKind::AlexNetVariant => "alexnet",
        }
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<ModelKind> {
        match s {
            "3convnn" => Ok(ModelKind::ThreeConvNn),
            "alexnet" => Ok(ModelKind::AlexNetVariant),
            other => Err(Error::InvalidArgument(format!(
                "unknown model kind `{other}` (expected 3convnn or alexnet)"
            ))),
        }
    }
}

pub const ALEXNET_VARIANT_MIN_INPUT: usize = 67;
pub const THREE_CONVNN_MIN_INPUT: usize = 16;

fn scaled(filters: usize, width_mult: f64) -> usize {
    ((filters as f64 * width_mult).round() as usize).max(1)
}

/// Three conv/pool stages into a 3-way dense head. `width_mult` scales the
/// filter counts for desk-scale runs; 1.0 reproduces the printed network.
pub fn build_3convnn(input_hw: usize, width_mult: f64) -> Result<Vec<LayerSpec>> {
    if input_hw < THREE_CONVNN_MIN_INPUT {
        return Err(Error::Shape(format!(
            "3convnn input {input_hw} is below the minimum {THREE_CONVNN_MIN_INPUT}"
        )));
    }
    if !(width_mult > 0.0) || !width_mult.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "width multiplier must be positive, got {width_mult}"
        )));
    }
    let conv = |filters: usize| LayerSpec::Conv2d {
        filters,
        kernel_h: 3,
        kernel_w: 3,
        stride: 1,
        padding: 0,
    };
    let specs = vec![
        conv(scaled(32, width_mult)),
        LayerSpec::Relu,
        LayerSpec::MaxPool { size: 2, stride: 2 },
        conv(scaled(32, width_mult)),
        LayerSpec::Relu,
        LayerSpec::MaxPool { size: 2, stride: 2 },
        conv(scaled(64, width_mult)),
        LayerSpec::Relu,
        LayerSpec::MaxPool { size: 2, stride: 2 },
        LayerSpec::Flatten,
        LayerSpec::Dropout { rate: 0.5 },
        LayerSpec::Dense { units: 3 },
        LayerSpec::Softmax,
    ];
    validate(&specs, input_hw)?;
    Ok(specs)
}

/// The printed AlexNet-style stack: one 11x11/4 stem, three padded 3x3
/// convs, two 4096-unit dense layers with dropout, 3-way softmax.
pub fn build_alexnet_variant(input_hw: usize) -> Result<Vec<LayerSpec>> {
    if input_hw < ALEXNET_VARIANT_MIN_INPUT {
        return Err(Error::Shape(format!(
            "alexnet variant input {input_hw} is below the minimum {ALEXNET_VARIANT_MIN_INPUT}"
        )));
    }
    let conv3 = |filters: usize| LayerSpec::Conv2d {
        filters,
        kernel_h: 3,
        kernel_w: 3,
        stride: 1,
        padding: 0,
    };
    let specs = vec![
        LayerSpec::Conv2d {
            filters: 96,
            kernel_h: 11,
            kernel_w: 11,
            stride: 4,
            padding: 0,
        },
        LayerSpec::Relu,
        LayerSpec::MaxPool { size: 3, stride: 2 },
        LayerSpec::BatchNorm,
        LayerSpec::ZeroPad { size: 1 },
        conv3(384),
        LayerSpec::Relu,
        LayerSpec::ZeroPad { size: 1 },
        conv3(384),
        LayerSpec::Relu,
        LayerSpec::ZeroPad { size: 1 },
        conv3(256),
        LayerSpec::Relu,
        LayerSpec::MaxPool { size: 3, stride: 2 },
        LayerSpec::Flatten,
        LayerSpec::Dense { units: 4096 },
        LayerSpec::Relu,
        LayerSpec::Dropout { rate: 0.5 },
        LayerSpec::Dense { units: 4096 },
        LayerSpec::Relu,
        LayerSpec::Dropout { rate: 0.5 },
        LayerSpec::Dense { units: 3 },
        LayerSpec::Softmax,
    ];
    validate(&specs, input_hw)?;
    Ok(specs)
}

pub fn build(kind: ModelKind, input_hw: usize, width_mult: f64) -> Result<Vec<LayerSpec>> {
    match kind {
        ModelKind::ThreeConvNn => build_3convnn(input_hw, width_mult),
        ModelKind::AlexNetVariant => {
            if (width_mult - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidArgument(
                    "the alexnet variant has no width multiplier".into(),
                ));
            }
            build_alexnet_variant(input_hw)
        }
    }
}

fn validate(specs: &[LayerSpec], input_hw: usize) -> Result<()> {
    let shapes = infer_shapes(
        specs,
        InputShape::Hwc {
            h: input_hw,
            w: input_hw,
            c: 3,
        },
    )?;
    match shapes.last() {
        Some(InputShape::Flat { d: 3 }) => Ok(()),
        other => Err(Error::Shape(format!(
            "stack must end in 3 classes, got {other:?}"
        ))),
    }
}
