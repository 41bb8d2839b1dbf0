//! Model persistence: JSON with row-major matrices and a SHA-256 payload
//! checksum. Numbers round-trip bit-exactly (shortest-representation floats
//! with exact parsing).

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::KoopmanModel;
use crate::dataset::Normalization;
use crate::diffnet::{Activation, Encoder, KoopmanNet, Layer};
use crate::error::{CoreError, Result};

const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct MatrixJson {
    rows: usize,
    cols: usize,
    /// Row-major entries.
    data: Vec<f64>,
}

impl MatrixJson {
    fn from_matrix(m: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(m.len());
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                data.push(m[(r, c)]);
            }
        }
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }

    fn to_matrix(&self) -> Result<DMatrix<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(CoreError::ModelFormat(format!(
                "matrix payload has {} entries for a {}x{} shape",
                self.data.len(),
                self.rows,
                self.cols
            )));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

#[derive(Serialize, Deserialize)]
struct LayerJson {
    w: MatrixJson,
    b: Vec<f64>,
    activation: Activation,
}

#[derive(Serialize, Deserialize)]
struct EncoderJson {
    layers: Vec<LayerJson>,
}

#[derive(Serialize, Deserialize)]
struct ModelJson {
    schema_version: u32,
    d: usize,
    n: usize,
    m: usize,
    dt: f64,
    encoder: EncoderJson,
    f: MatrixJson,
    g: Vec<MatrixJson>,
    cx: MatrixJson,
    normalization: Normalization,
    hover_offset: f64,
    checksum: String,
}

fn checksum(json: &ModelJson) -> String {
    let mut hasher = Sha256::new();
    let push_u64 = |h: &mut Sha256, v: u64| h.update(v.to_le_bytes());
    let push_f64s = |h: &mut Sha256, vs: &[f64]| {
        for v in vs {
            h.update(v.to_le_bytes());
        }
    };
    push_u64(&mut hasher, json.d as u64);
    push_u64(&mut hasher, json.n as u64);
    push_u64(&mut hasher, json.m as u64);
    hasher.update(json.dt.to_le_bytes());
    for layer in &json.encoder.layers {
        push_f64s(&mut hasher, &layer.w.data);
        push_f64s(&mut hasher, &layer.b);
        hasher.update([match layer.activation {
            Activation::Tanh => 1u8,
            Activation::Linear => 2u8,
        }]);
    }
    push_f64s(&mut hasher, &json.f.data);
    for g in &json.g {
        push_f64s(&mut hasher, &g.data);
    }
    push_f64s(&mut hasher, &json.normalization.x_mean);
    push_f64s(&mut hasher, &json.normalization.x_scale);
    push_f64s(&mut hasher, &json.normalization.u_offset);
    push_f64s(&mut hasher, &json.normalization.u_scale);
    hasher.update(json.hover_offset.to_le_bytes());
    hex_string(&hasher.finalize())
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn projection_matrix(d: usize, n: usize) -> DMatrix<f64> {
    let mut cx = DMatrix::zeros(d, n);
    for i in 0..d {
        cx[(i, i)] = 1.0;
    }
    cx
}

pub fn save(model: &KoopmanModel, path: &Path) -> Result<()> {
    let d = model.state_dim();
    let n = model.lifted_dim();
    let mut json = ModelJson {
        schema_version: SCHEMA_VERSION,
        d,
        n,
        m: model.input_dim(),
        dt: model.dt,
        encoder: EncoderJson {
            layers: model
                .net
                .encoder
                .layers
                .iter()
                .map(|l| LayerJson {
                    w: MatrixJson::from_matrix(&l.w),
                    b: l.b.as_slice().to_vec(),
                    activation: l.activation,
                })
                .collect(),
        },
        f: MatrixJson::from_matrix(&model.net.f),
        g: model.net.g.iter().map(MatrixJson::from_matrix).collect(),
        cx: MatrixJson::from_matrix(&projection_matrix(d, n)),
        normalization: model.normalization.clone(),
        hover_offset: model.normalization.u_offset[0],
        checksum: String::new(),
    };
    json.checksum = checksum(&json);
    let file = File::create(path)?;
    serde_json::to_writer(BufWriter::new(file), &json)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<KoopmanModel> {
    let file = File::open(path)?;
    let json: ModelJson = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| CoreError::ModelFormat(format!("parse failure: {e}")))?;
    if json.schema_version != SCHEMA_VERSION {
        return Err(CoreError::ModelFormat(format!(
            "schema version {} unsupported (expected {SCHEMA_VERSION})",
            json.schema_version
        )));
    }
    let expected = checksum(&json);
    if json.checksum != expected {
        return Err(CoreError::ModelFormat(
            "checksum mismatch: payload corrupted".into(),
        ));
    }

    let layers: Vec<Layer> = json
        .encoder
        .layers
        .iter()
        .map(|l| {
            Ok(Layer {
                w: l.w.to_matrix()?,
                b: DVector::from_column_slice(&l.b),
                activation: l.activation,
            })
        })
        .collect::<Result<_>>()?;
    let f = json.f.to_matrix()?;
    let g: Vec<DMatrix<f64>> = json
        .g
        .iter()
        .map(MatrixJson::to_matrix)
        .collect::<Result<_>>()?;

    let mut net = KoopmanNet::new_seeded(json.d, &[], 0, json.m, 0);
    net.encoder = Encoder { layers };
    net.f = f;
    net.g = g;
    if net.lifted_dim() != json.n
        || net.f.nrows() != json.n
        || net.f.ncols() != json.n
        || net.g.len() != json.m
        || net.g.iter().any(|g| g.nrows() != json.n || g.ncols() != json.n)
    {
        return Err(CoreError::ModelFormat(
            "matrix shapes inconsistent with declared dimensions".into(),
        ));
    }
    KoopmanModel::new(net, json.normalization, json.dt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Normalization;

    fn model() -> KoopmanModel {
        let net = KoopmanNet::new_seeded(3, &[5], 2, 2, 42);
        let mut norm = Normalization::identity(3, 2);
        norm.u_offset[0] = 0.1234567890123456;
        KoopmanModel::new(net, norm, 0.02).unwrap()
    }

    #[test]
    fn save_load_is_bit_exact() {
        let m = model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save(&m, &path).unwrap();
        let loaded = load(&path).unwrap();
        assert_eq!(m, loaded);
        assert_eq!(m.net.params_flat(), loaded.net.params_flat());
    }

    #[test]
    fn schema_version_mismatch_rejected() {
        let m = model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save(&m, &path).unwrap();
        let mut text = std::fs::read_to_string(&path).unwrap();
        text = text.replace("\"schema_version\":1", "\"schema_version\":9");
        std::fs::write(&path, text).unwrap();
        match load(&path) {
            Err(CoreError::ModelFormat(msg)) => assert!(msg.contains("schema")),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn checksum_detects_payload_corruption() {
        let m = model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save(&m, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        // Flip one mantissa digit inside the F data payload.
        let at = text.find("\"f\":{").unwrap();
        let data_at = text[at..].find("\"data\":[").unwrap() + at + "\"data\":[".len();
        let digit_at = text[data_at..]
            .find(|c: char| c.is_ascii_digit())
            .unwrap()
            + data_at;
        let mut bytes = text.into_bytes();
        bytes[digit_at] = if bytes[digit_at] == b'9' { b'8' } else { b'9' };
        std::fs::write(&path, bytes).unwrap();
        match load(&path) {
            Err(CoreError::ModelFormat(msg)) => {
                assert!(msg.contains("checksum") || msg.contains("parse"))
            }
            other => panic!("expected checksum error, got {other:?}"),
        }
    }
}
