//! ONNX encoder backend (tract).

use std::path::Path;
use std::sync::Arc;

use tract_onnx::prelude::*;
use tract_onnx::tract_hir::infer::Factoid;

use super::{normalize_into, EncoderError, EncoderSpec, PatchEncoder};
use crate::slide::RasterPatch;

type Plan = Arc<TypedRunnableModel>;

pub(crate) struct OnnxEncoder {
    spec: EncoderSpec,
    plan: Plan,
    /// Some(k) when the model declares a concrete batch dimension.
    fixed_batch: Option<usize>,
}

fn shape_err(msg: impl std::fmt::Display) -> EncoderError {
    EncoderError::ShapeMismatch(msg.to_string())
}

impl OnnxEncoder {
    pub fn load(spec: &EncoderSpec, path: &Path) -> Result<Self, EncoderError> {
        let s = spec.input_size as i64;
        let model = tract_onnx::onnx()
            .model_for_path(path)
            .map_err(|e| EncoderError::UnknownEncoder(format!("{}: {e}", path.display())))?;
        if model.inputs.len() != 1 || model.outputs.len() != 1 {
            return Err(shape_err(format!(
                "expected one input and one output, model has {} and {}",
                model.inputs.len(),
                model.outputs.len()
            )));
        }

        let declared = model.input_fact(0).map_err(shape_err)?.clone();
        let mut fixed_batch = None;
        if let Some(rank) = declared.shape.rank().concretize() {
            if rank != 4 {
                return Err(shape_err(format!("input rank {rank}, expected 4 (NCHW)")));
            }
            let want = [None, Some(3), Some(s), Some(s)];
            for (axis, dim) in declared.shape.dims().enumerate() {
                let Some(value) = dim.concretize().and_then(|d| d.to_i64().ok()) else {
                    continue;
                };
                match want[axis] {
                    None => fixed_batch = Some(value as usize),
                    Some(w) if w != value => {
                        return Err(shape_err(format!(
                            "input axis {axis} is {value}, expected {w} for 3x{s}x{s} input"
                        )));
                    }
                    _ => {}
                }
            }
        }

        let batch: TDim = match fixed_batch {
            Some(k) => (k as i64).into(),
            None => model.sym("N").into(),
        };
        let dims: TVec<TDim> = tvec![batch, 3.into(), s.into(), s.into()];
        let fact = InferenceFact::dt_shape(f32::datum_type(), dims);
        let typed = model
            .with_input_fact(0, fact)
            .and_then(|m| m.into_optimized())
            .map_err(|e| shape_err(format!("{}: {e}", path.display())))?;

        let out = typed.output_fact(0).map_err(shape_err)?;
        if out.rank() != 2 {
            return Err(shape_err(format!("output rank {}, expected 2", out.rank())));
        }
        match out.shape[1].to_i64() {
            Ok(d) if d as usize == spec.embed_dim => {}
            Ok(d) => {
                return Err(shape_err(format!(
                    "model output dim {d} does not match embed_dim {}",
                    spec.embed_dim
                )));
            }
            Err(_) => return Err(shape_err("model output dim is not concrete")),
        }
        let plan = typed.into_runnable().map_err(shape_err)?;
        Ok(OnnxEncoder {
            spec: spec.clone(),
            plan,
            fixed_batch,
        })
    }

    fn run(&self, patches: &[RasterPatch], first_index: usize) -> Result<Vec<Vec<f32>>, EncoderError> {
        let s = self.spec.input_size as usize;
        let per = 3 * s * s;
        let mut data = vec![0f32; patches.len() * per];
        for (p, chunk) in patches.iter().zip(data.chunks_exact_mut(per)) {
            normalize_into(p, &self.spec, chunk);
        }
        let backend = |e: TractError| EncoderError::Backend {
            index: first_index,
            message: e.to_string(),
        };
        let input = Tensor::from_shape(&[patches.len(), 3, s, s], &data).map_err(backend)?;
        let outputs = self.plan.run(tvec!(input.into())).map_err(backend)?;
        let view = outputs[0].to_plain_array_view::<f32>().map_err(backend)?;
        let shape = view.shape().to_vec();
        if shape.len() != 2 || shape[0] != patches.len() || shape[1] != self.spec.embed_dim {
            return Err(EncoderError::ShapeMismatch(format!(
                "output shape {shape:?} for batch of {}",
                patches.len()
            )));
        }
        Ok(view.outer_iter().map(|r| r.iter().copied().collect()).collect())
    }
}

impl PatchEncoder for OnnxEncoder {
    fn embed_dim(&self) -> usize {
        self.spec.embed_dim
    }

    fn encode(&self, patches: &[RasterPatch], first_index: usize) -> Result<Vec<Vec<f32>>, EncoderError> {
        match self.fixed_batch {
            None => self.run(patches, first_index),
            Some(k) => {
                let mut rows = Vec::with_capacity(patches.len());
                for (c, chunk) in patches.chunks(k).enumerate() {
                    if chunk.len() == k {
                        rows.extend(self.run(chunk, first_index + c * k)?);
                    } else {
                        // Pad the tail batch by repeating its last patch.
                        let mut padded = chunk.to_vec();
                        padded.resize(k, chunk[chunk.len() - 1].clone());
                        let mut out = self.run(&padded, first_index + c * k)?;
                        out.truncate(chunk.len());
                        rows.extend(out);
                    }
                }
                Ok(rows)
            }
        }
    }
}
