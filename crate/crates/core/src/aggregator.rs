//! Attention-based multiple-instance aggregation.
//!
//! Given patch embeddings `h_k`, each patch gets an attention logit
//! `e_k = w · tanh(V h_k)` (or `w · (tanh(V h_k) ⊙ sigmoid(U h_k))` for the
//! gated variant). Attention is `softmax(e)` over patches, the slide
//! embedding is `z = Σ a_k h_k`, and `logits = W_out z + b_out`.
//!
//! Weights are stored as `f32`; every intermediate is evaluated in `f64`.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::encoder::EmbeddingMatrix;

#[derive(Debug, thiserror::Error)]
pub enum AggregatorError {
    #[error("cannot parse aggregator document: {0}")]
    Parse(String),
    #[error("missing tensor or field `{0}`")]
    MissingTensor(String),
    #[error("shape mismatch in `{tensor}`: expected {expected}, got {got}")]
    ShapeMismatch {
        tensor: String,
        expected: String,
        got: String,
    },
    #[error("non-finite weight in `{0}`")]
    NonFiniteWeight(String),
    #[error("embedding dim {got} does not match aggregator D={expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("cannot aggregate an empty bag")]
    EmptyBag,
    #[error("non-finite input")]
    NonFiniteInput,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionKind {
    Tanh,
    Gated,
}

/// Validated aggregator parameters. Matrices are row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatorWeights {
    pub embed_dim: usize,
    pub attention_dim: usize,
    pub n_classes: usize,
    pub attention: AttentionKind,
    /// `L x D` attention projection.
    pub v: Vec<f32>,
    /// `L x D` gate projection, gated attention only.
    pub u: Option<Vec<f32>>,
    /// Attention scorer, length `L`.
    pub w: Vec<f32>,
    /// `C x D` classifier.
    pub w_out: Vec<f32>,
    pub b_out: Vec<f32>,
    pub class_names: Vec<String>,
}

impl AggregatorWeights {
    /// Checks shapes, class count and finiteness.
    pub fn validate(&self) -> Result<(), AggregatorError> {
        let (d, l, c) = (self.embed_dim, self.attention_dim, self.n_classes);
        if c < 2 {
            return Err(shape("C", "at least 2 classes", c));
        }
        if d == 0 || l == 0 {
            return Err(shape("dims", "D >= 1 and L >= 1", format!("D={d}, L={l}")));
        }
        check_len("V", &self.v, l * d, format!("{l}x{d}"))?;
        check_len("w", &self.w, l, l.to_string())?;
        check_len("W_out", &self.w_out, c * d, format!("{c}x{d}"))?;
        check_len("b_out", &self.b_out, c, c.to_string())?;
        if self.class_names.len() != c {
            return Err(shape("class_names", c, self.class_names.len()));
        }
        match (self.attention, &self.u) {
            (AttentionKind::Gated, None) => return Err(AggregatorError::MissingTensor("U".into())),
            (AttentionKind::Gated, Some(u)) => check_len("U", u, l * d, format!("{l}x{d}"))?,
            (AttentionKind::Tanh, _) => {}
        }
        let tensors: [(&str, Option<&Vec<f32>>); 5] = [
            ("V", Some(&self.v)),
            ("U", self.u.as_ref()),
            ("w", Some(&self.w)),
            ("W_out", Some(&self.w_out)),
            ("b_out", Some(&self.b_out)),
        ];
        for (name, t) in tensors {
            if t.is_some_and(|t| t.iter().any(|v| !v.is_finite())) {
                return Err(AggregatorError::NonFiniteWeight(name.into()));
            }
        }
        Ok(())
    }

    /// Serializes back into the `aggregator.json` document layout.
    pub fn to_document(&self) -> Value {
        let rows =
            |m: &[f32], cols: usize| -> Value { Value::Array(m.chunks(cols).map(|r| serde_json::json!(r)).collect()) };
        let mut doc = serde_json::json!({
            "dims": {"D": self.embed_dim, "L": self.attention_dim, "C": self.n_classes},
            "attention": self.attention,
            "class_names": self.class_names,
            "V": rows(&self.v, self.embed_dim),
            "w": self.w,
            "W_out": rows(&self.w_out, self.embed_dim),
            "b_out": self.b_out,
        });
        if let Some(u) = &self.u {
            doc["U"] = rows(u, self.embed_dim);
        }
        doc
    }
}

fn shape(tensor: &str, expected: impl ToString, got: impl ToString) -> AggregatorError {
    AggregatorError::ShapeMismatch {
        tensor: tensor.into(),
        expected: expected.to_string(),
        got: got.to_string(),
    }
}

fn check_len(name: &str, t: &[f32], want: usize, desc: String) -> Result<(), AggregatorError> {
    if t.len() != want {
        return Err(shape(name, desc, format!("{} values", t.len())));
    }
    Ok(())
}

fn number(v: &Value) -> Option<f32> {
    match v {
        Value::Number(n) => n.as_f64().map(|x| x as f32),
        // Non-finite values as written by common JSON encoders.
        Value::String(s) => match s.as_str() {
            "NaN" | "nan" => Some(f32::NAN),
            "Infinity" | "inf" => Some(f32::INFINITY),
            "-Infinity" | "-inf" => Some(f32::NEG_INFINITY),
            _ => None,
        },
        _ => None,
    }
}

fn vector(doc: &Value, name: &str) -> Result<Vec<f32>, AggregatorError> {
    let arr = doc
        .get(name)
        .ok_or_else(|| AggregatorError::MissingTensor(name.into()))?
        .as_array()
        .ok_or_else(|| shape(name, "array of numbers", "non-array"))?;
    arr.iter()
        .map(|v| number(v).ok_or_else(|| shape(name, "array of numbers", v.to_string())))
        .collect()
}

fn matrix(doc: &Value, name: &str, rows: usize, cols: usize) -> Result<Vec<f32>, AggregatorError> {
    let arr = doc
        .get(name)
        .ok_or_else(|| AggregatorError::MissingTensor(name.into()))?
        .as_array()
        .ok_or_else(|| shape(name, format!("{rows}x{cols} nested array"), "non-array"))?;
    if arr.len() != rows {
        return Err(shape(name, format!("{rows}x{cols}"), format!("{} rows", arr.len())));
    }
    let mut out = Vec::with_capacity(rows * cols);
    for (i, row) in arr.iter().enumerate() {
        let row = row
            .as_array()
            .ok_or_else(|| shape(name, format!("{rows}x{cols}"), format!("row {i} is not an array")))?;
        if row.len() != cols {
            return Err(shape(
                name,
                format!("{rows}x{cols}"),
                format!("row {i} has {} columns", row.len()),
            ));
        }
        for v in row {
            out.push(number(v).ok_or_else(|| shape(name, "numbers", v.to_string()))?);
        }
    }
    Ok(out)
}

fn dim(dims: &Value, key: &str) -> Result<usize, AggregatorError> {
    dims.get(key)
        .ok_or_else(|| AggregatorError::MissingTensor(format!("dims.{key}")))?
        .as_u64()
        .map(|v| v as usize)
        .ok_or_else(|| shape(&format!("dims.{key}"), "non-negative integer", dims[key].to_string()))
}

/// Parses and validates an `aggregator.json` document.
pub fn load_aggregator(doc: &Value) -> Result<AggregatorWeights, AggregatorError> {
    let dims = doc
        .get("dims")
        .ok_or_else(|| AggregatorError::MissingTensor("dims".into()))?;
    let (d, l, c) = (dim(dims, "D")?, dim(dims, "L")?, dim(dims, "C")?);
    let attention = match doc.get("attention") {
        None | Some(Value::Null) => AttentionKind::Tanh,
        Some(v) => {
            serde_json::from_value(v.clone()).map_err(|_| shape("attention", "\"tanh\" or \"gated\"", v.to_string()))?
        }
    };
    let class_names: Vec<String> = match doc.get("class_names") {
        None => return Err(AggregatorError::MissingTensor("class_names".into())),
        Some(v) => {
            serde_json::from_value(v.clone()).map_err(|_| shape("class_names", "array of strings", v.to_string()))?
        }
    };
    let u = match (attention, doc.get("U")) {
        (_, Some(Value::Null)) | (_, None) => None,
        (_, Some(_)) => Some(matrix(doc, "U", l, d)?),
    };
    let weights = AggregatorWeights {
        embed_dim: d,
        attention_dim: l,
        n_classes: c,
        attention,
        v: matrix(doc, "V", l, d)?,
        u,
        w: vector(doc, "w")?,
        w_out: matrix(doc, "W_out", c, d)?,
        b_out: vector(doc, "b_out")?,
        class_names,
    };
    weights.validate()?;
    Ok(weights)
}

/// Parses `aggregator.json` text.
pub fn load_aggregator_str(text: &str) -> Result<AggregatorWeights, AggregatorError> {
    let doc: Value = serde_json::from_str(text).map_err(|e| AggregatorError::Parse(e.to_string()))?;
    load_aggregator(&doc)
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(x: &[f64]) -> Result<Vec<f64>, AggregatorError> {
    if x.is_empty() || x.iter().any(|v| !v.is_finite()) {
        return Err(AggregatorError::NonFiniteInput);
    }
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

fn check_bag(weights: &AggregatorWeights, h: &EmbeddingMatrix) -> Result<(), AggregatorError> {
    if h.dim != weights.embed_dim {
        return Err(AggregatorError::DimMismatch {
            expected: weights.embed_dim,
            got: h.dim,
        });
    }
    if h.n_patches == 0 {
        return Err(AggregatorError::EmptyBag);
    }
    Ok(())
}

fn dot(row: &[f32], h: &[f32]) -> f64 {
    row.iter().zip(h).map(|(&a, &b)| a as f64 * b as f64).sum()
}

/// Unnormalized attention logits `e_k`, one per patch.
pub fn attention_logits(weights: &AggregatorWeights, h: &EmbeddingMatrix) -> Result<Vec<f64>, AggregatorError> {
    check_bag(weights, h)?;
    let d = weights.embed_dim;
    let logits = h
        .rows()
        .map(|hk| {
            let mut e = 0.0;
            for l in 0..weights.attention_dim {
                let mut hidden = dot(&weights.v[l * d..(l + 1) * d], hk).tanh();
                if let (AttentionKind::Gated, Some(u)) = (weights.attention, &weights.u) {
                    let g = dot(&u[l * d..(l + 1) * d], hk);
                    hidden *= 1.0 / (1.0 + (-g).exp());
                }
                e += weights.w[l] as f64 * hidden;
            }
            e
        })
        .collect();
    Ok(logits)
}

/// Attention weights over patches; non-negative and summing to 1.
pub fn attention_scores(weights: &AggregatorWeights, h: &EmbeddingMatrix) -> Result<Vec<f64>, AggregatorError> {
    softmax(&attention_logits(weights, h)?)
}

/// Specimen-level prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceResult {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    /// `None` only for the no-tissue result.
    pub predicted_index: Option<usize>,
    /// One weight per patch, in plan order.
    pub attention: Vec<f64>,
    pub class_names: Vec<String>,
}

impl InferenceResult {
    /// Uniform probabilities and no prediction, used when no patch survives planning.
    pub fn indeterminate(class_names: &[String]) -> Self {
        let c = class_names.len();
        InferenceResult {
            logits: vec![0.0; c],
            probs: vec![1.0 / c as f64; c],
            predicted_index: None,
            attention: Vec::new(),
            class_names: class_names.to_vec(),
        }
    }

    pub fn predicted_class(&self) -> Option<&str> {
        self.predicted_index.map(|i| self.class_names[i].as_str())
    }
}

/// First index of the maximum; ties go to the smallest index.
pub fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in x.iter().enumerate() {
        if v > x[best] {
            best = i;
        }
    }
    best
}

pub fn forward(weights: &AggregatorWeights, h: &EmbeddingMatrix) -> Result<InferenceResult, AggregatorError> {
    let attention = attention_scores(weights, h)?;
    let d = weights.embed_dim;
    let mut z = vec![0f64; d];
    for (a, hk) in attention.iter().zip(h.rows()) {
        for (zj, &hj) in z.iter_mut().zip(hk) {
            *zj += a * hj as f64;
        }
    }
    let logits: Vec<f64> = (0..weights.n_classes)
        .map(|c| {
            let row = &weights.w_out[c * d..(c + 1) * d];
            row.iter().zip(&z).map(|(&w, &zj)| w as f64 * zj).sum::<f64>() + weights.b_out[c] as f64
        })
        .collect();
    let probs = softmax(&logits)?;
    Ok(InferenceResult {
        predicted_index: Some(argmax(&logits)),
        logits,
        probs,
        attention,
        class_names: weights.class_names.clone(),
    })
}
