//! Tiny ONNX graphs built directly from the protobuf types.
#![allow(dead_code)]

use std::path::Path;

use prost::Message;
use tract_onnx::pb::attribute_proto::AttributeType;
use tract_onnx::pb::tensor_proto::DataType;
use tract_onnx::pb::tensor_shape_proto::{dimension, Dimension};
use tract_onnx::pb::type_proto::{self, Tensor};
use tract_onnx::pb::{
    AttributeProto, GraphProto, ModelProto, NodeProto, OperatorSetIdProto, TensorProto, TensorShapeProto, TypeProto,
    ValueInfoProto,
};

pub enum Dim {
    Fixed(i64),
    Sym(&'static str),
}

fn value_info(name: &str, dims: &[Dim]) -> ValueInfoProto {
    let dim = dims
        .iter()
        .map(|d| Dimension {
            value: Some(match d {
                Dim::Fixed(v) => dimension::Value::DimValue(*v),
                Dim::Sym(s) => dimension::Value::DimParam(s.to_string()),
            }),
            ..Default::default()
        })
        .collect();
    ValueInfoProto {
        name: name.into(),
        r#type: Some(TypeProto {
            value: Some(type_proto::Value::TensorType(Tensor {
                elem_type: DataType::Float as i32,
                shape: Some(TensorShapeProto { dim }),
            })),
            ..Default::default()
        }),
        ..Default::default()
    }
}

fn reduce_mean(input: &str, output: &str) -> NodeProto {
    NodeProto {
        input: vec![input.into()],
        output: vec![output.into()],
        name: "pool".into(),
        op_type: "ReduceMean".into(),
        attribute: vec![
            AttributeProto {
                name: "axes".into(),
                r#type: AttributeType::Ints as i32,
                ints: vec![2, 3],
                ..Default::default()
            },
            AttributeProto {
                name: "keepdims".into(),
                r#type: AttributeType::Int as i32,
                i: 0,
                ..Default::default()
            },
        ],
        ..Default::default()
    }
}

fn write_model(path: &Path, graph: GraphProto) {
    let model = ModelProto {
        ir_version: 8,
        opset_import: vec![OperatorSetIdProto {
            domain: String::new(),
            version: 13,
        }],
        producer_name: "slidespin-tests".into(),
        graph: Some(graph),
        ..Default::default()
    };
    std::fs::write(path, model.encode_to_vec()).unwrap();
}

/// `[batch, 3, S, S] -> [batch, 3]`: per-channel spatial mean of the
/// normalized input.
pub fn channel_mean(path: &Path, batch: Dim, size: i64) {
    write_model(
        path,
        GraphProto {
            name: "channel_mean".into(),
            node: vec![reduce_mean("x", "y")],
            input: vec![value_info(
                "x",
                &[batch, Dim::Fixed(3), Dim::Fixed(size), Dim::Fixed(size)],
            )],
            output: vec![value_info("y", &[Dim::Sym("N"), Dim::Fixed(3)])],
            ..Default::default()
        },
    );
}

/// Channel means projected to `out_dim` features by a fixed matrix whose
/// entry `(c, j)` is `(c + 1) * 0.01 * (j % 7)`.
pub fn projected(path: &Path, size: i64, out_dim: usize) {
    let weights: Vec<f32> = (0..3)
        .flat_map(|c| (0..out_dim).map(move |j| (c + 1) as f32 * 0.01 * (j % 7) as f32))
        .collect();
    write_model(
        path,
        GraphProto {
            name: "projected".into(),
            node: vec![
                reduce_mean("x", "m"),
                NodeProto {
                    input: vec!["m".into(), "w".into()],
                    output: vec!["y".into()],
                    name: "proj".into(),
                    op_type: "MatMul".into(),
                    ..Default::default()
                },
            ],
            initializer: vec![TensorProto {
                dims: vec![3, out_dim as i64],
                data_type: DataType::Float as i32,
                float_data: weights,
                name: "w".into(),
                ..Default::default()
            }],
            input: vec![value_info(
                "x",
                &[Dim::Sym("N"), Dim::Fixed(3), Dim::Fixed(size), Dim::Fixed(size)],
            )],
            output: vec![value_info("y", &[Dim::Sym("N"), Dim::Fixed(out_dim as i64)])],
            ..Default::default()
        },
    );
}
