//! SSPM model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "SSPM"  u8 version  u32 stage_count
//! u8 stream (0 saliency, 1 parsing)  u32 tap_stage  u32 input_height  u32 input_width
//! stage_count x {
//!     u8 kind (0 conv, 1 linear)  u32 out  u32 in  u32 kernel_h  u32 kernel_w  u32 stride  u32 padding
//!     weights as f32, then out biases as f32
//! }
//! ```
//!
//! Convolution weights are ordered `[out][ky][kx][in]`, linear weights
//! `[out][in]`. The identity classifier is the final, linear stage.

use std::path::Path;

use sspreid_core::model::{BackboneConfig, Conv2d, Linear, StreamKind, StreamModel, ToyBackbone};

use crate::bytes::Reader;
use crate::error::{DecodeError, Error, Result};
use crate::fsutil;

pub const MAGIC: &[u8; 4] = b"SSPM";
pub const VERSION: u8 = 1;

const CONV: u8 = 0;
const LINEAR: u8 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_f32s(out: &mut Vec<u8>, v: &[f32]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn encode(model: &StreamModel<f32>) -> Vec<u8> {
    let bb = &model.backbone;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    put_u32(&mut out, bb.stages.len() + 1);
    out.push(model.kind.code());
    put_u32(&mut out, bb.tap_stage);
    put_u32(&mut out, bb.input_height);
    put_u32(&mut out, bb.input_width);
    for c in &bb.stages {
        out.push(CONV);
        for v in [
            c.out_channels,
            c.in_channels,
            c.kernel,
            c.kernel,
            c.stride,
            c.padding,
        ] {
            put_u32(&mut out, v);
        }
        put_f32s(&mut out, &c.weight);
        put_f32s(&mut out, &c.bias);
    }
    let l = &model.classifier;
    out.push(LINEAR);
    for v in [l.out_dim, l.in_dim, 1, 1, 1, 0] {
        put_u32(&mut out, v);
    }
    put_f32s(&mut out, &l.weight);
    put_f32s(&mut out, &l.bias);
    out
}

fn header(msg: impl Into<String>) -> DecodeError {
    DecodeError::Header(msg.into())
}

pub fn decode(bytes: &[u8]) -> std::result::Result<StreamModel<f32>, DecodeError> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    let stage_count = r.u32()? as usize;
    let kind = StreamKind::from_code(r.u8()?).ok_or_else(|| header("unknown stream kind"))?;
    let tap_stage = r.u32()? as usize;
    let input_height = r.u32()? as usize;
    let input_width = r.u32()? as usize;
    if stage_count < 3 {
        return Err(header(format!(
            "{stage_count} stages; need at least two conv stages and a classifier"
        )));
    }

    let mut stages = Vec::with_capacity(stage_count - 1);
    let mut classifier = None;
    for i in 0..stage_count {
        let kind_byte = r.u8()?;
        let mut dims = [0usize; 6];
        for d in &mut dims {
            *d = r.u32()? as usize;
        }
        let [out, inp, kh, kw, stride, padding] = dims;
        let is_last = i + 1 == stage_count;
        match (kind_byte, is_last) {
            (CONV, false) => {
                if kh != kw || kh == 0 || stride == 0 || out == 0 || inp == 0 {
                    return Err(header(format!(
                        "stage {i}: bad conv shape {kh}x{kw} stride {stride}"
                    )));
                }
                let n = out
                    .checked_mul(kh * kw)
                    .and_then(|n| n.checked_mul(inp))
                    .ok_or_else(|| header("declared size overflows"))?;
                stages.push(Conv2d {
                    in_channels: inp,
                    out_channels: out,
                    kernel: kh,
                    stride,
                    padding,
                    weight: r.f32s(n)?,
                    bias: r.f32s(out)?,
                });
            }
            (LINEAR, true) => {
                let n = out
                    .checked_mul(inp)
                    .ok_or_else(|| header("declared size overflows"))?;
                classifier = Some(Linear {
                    in_dim: inp,
                    out_dim: out,
                    weight: r.f32s(n)?,
                    bias: r.f32s(out)?,
                });
            }
            (k, _) => return Err(header(format!("stage {i}: unexpected stage kind {k}"))),
        }
    }
    r.finish()?;
    let classifier = classifier.expect("last stage is linear");

    let cfg = BackboneConfig {
        input_height,
        input_width,
        input_channels: stages[0].in_channels,
        stage_channels: stages.iter().map(|c| c.out_channels).collect(),
        tap_stage,
    };
    cfg.validate().map_err(|e| header(e.to_string()))?;
    for (i, w) in stages.windows(2).enumerate() {
        if w[1].in_channels != w[0].out_channels {
            return Err(DecodeError::Content(format!(
                "stage {} expects {} channels but stage {i} produces {}",
                i + 1,
                w[1].in_channels,
                w[0].out_channels
            )));
        }
    }
    let backbone = ToyBackbone {
        input_height,
        input_width,
        input_channels: cfg.input_channels,
        stages,
        tap_stage,
    };
    let feat = backbone.global_dim() + kind.guided_dim(backbone.tap_channels());
    if classifier.in_dim != feat || classifier.out_dim == 0 {
        return Err(DecodeError::Content(format!(
            "classifier takes {} inputs, stream feature has {feat}",
            classifier.in_dim
        )));
    }
    Ok(StreamModel {
        kind,
        backbone,
        classifier,
    })
}

pub fn load(path: &Path) -> Result<StreamModel<f32>> {
    let bytes = fsutil::read(path)?;
    decode(&bytes).map_err(|e| Error::decode(path, e))
}

pub fn save(path: &Path, model: &StreamModel<f32>) -> Result<()> {
    fsutil::write_atomic(path, &encode(model))
}
