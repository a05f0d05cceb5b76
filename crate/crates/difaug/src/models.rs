//! Desk-scale ×4 SR generator and patch discriminator.
//!
//! The generator runs residual conv blocks at LR resolution, two nearest-
//! upsample+conv stages, and a final conv, added onto the bicubic upsample
//! of its input (global residual). The discriminator is a strided conv stack
//! with leaky-relu, global average pooling, and an affine map to one logit.
//! No normalization layers anywhere.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::augment::upsample_lr;
use crate::error::{DifaugError, Result};
use crate::rng::derive_rng;
use crate::tensor::{ParamStore, Tape, Tensor, VarId};

pub const SR_SCALE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorSpec {
    pub base_channels: usize,
    pub num_blocks: usize,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec { base_channels: 16, num_blocks: 2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscriminatorSpec {
    pub base_channels: usize,
    pub num_downsamples: usize,
}

impl Default for DiscriminatorSpec {
    fn default() -> Self {
        DiscriminatorSpec { base_channels: 16, num_downsamples: 3 }
    }
}

/// (name, shape) registry of one conv layer's kernel and bias.
fn conv_layer(defs: &mut Vec<(String, Vec<usize>)>, name: &str, c_out: usize, c_in: usize, k: usize) {
    defs.push((format!("{name}.w"), vec![c_out, c_in, k, k]));
    defs.push((format!("{name}.b"), vec![c_out]));
}

impl GeneratorSpec {
    fn up_channels(&self) -> usize {
        (self.base_channels / 2).max(1)
    }

    pub fn param_defs(&self) -> Vec<(String, Vec<usize>)> {
        let c = self.base_channels;
        let uc = self.up_channels();
        let mut defs = Vec::new();
        conv_layer(&mut defs, "head", c, 3, 3);
        for i in 0..self.num_blocks {
            conv_layer(&mut defs, &format!("block{i}.conv1"), c, c, 3);
            conv_layer(&mut defs, &format!("block{i}.conv2"), c, c, 3);
        }
        conv_layer(&mut defs, "up1", uc, c, 3);
        conv_layer(&mut defs, "up2", uc, uc, 3);
        conv_layer(&mut defs, "tail", 3, uc, 3);
        defs
    }
}

impl DiscriminatorSpec {
    pub fn param_defs(&self) -> Vec<(String, Vec<usize>)> {
        let c = self.base_channels;
        let mut defs = Vec::new();
        conv_layer(&mut defs, "head", c, 3, 3);
        for i in 0..self.num_downsamples {
            conv_layer(&mut defs, &format!("down{i}"), c, c, 3);
        }
        defs.push(("fc.w".to_string(), vec![1, c]));
        defs.push(("fc.b".to_string(), vec![1]));
        defs
    }
}

/// Kaiming fan-in normal init for weights, zero biases. Deterministic per
/// (seed, parameter index).
pub fn init_params(defs: &[(String, Vec<usize>)], seed: u64) -> ParamStore {
    let mut store = ParamStore::new();
    for (idx, (name, shape)) in defs.iter().enumerate() {
        let numel: usize = shape.iter().product();
        let data = if name.ends_with(".b") {
            vec![0.0; numel]
        } else {
            let fan_in: usize = shape[1..].iter().product();
            let std = (2.0 / fan_in as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("valid std");
            let mut rng = derive_rng(seed, "init", &[idx as u64]);
            (0..numel).map(|_| normal.sample(&mut rng)).collect()
        };
        store.add(name.clone(), Tensor::from_vec(shape.clone(), data).expect("registry shape"));
    }
    store
}

/// Check a store against a spec's registry (names, order, shapes).
pub fn validate_params(defs: &[(String, Vec<usize>)], store: &ParamStore) -> Result<()> {
    if store.len() != defs.len() {
        return Err(DifaugError::Shape(format!(
            "param store has {} tensors, spec expects {}",
            store.len(),
            defs.len()
        )));
    }
    for (i, (name, shape)) in defs.iter().enumerate() {
        let got = store.tensor(i);
        if store.index_of(name) != Some(i) || got.shape() != &shape[..] {
            return Err(DifaugError::Shape(format!(
                "param {i} expected {name:?} {shape:?}, got shape {:?}",
                got.shape()
            )));
        }
    }
    Ok(())
}

struct Binder<'a> {
    store: &'a ParamStore,
    bound: &'a [VarId],
}

impl<'a> Binder<'a> {
    fn var(&self, name: &str) -> Result<VarId> {
        self.store
            .index_of(name)
            .map(|i| self.bound[i])
            .ok_or_else(|| DifaugError::Shape(format!("missing parameter {name:?}")))
    }
}

fn conv_block(
    tape: &mut Tape,
    b: &Binder,
    name: &str,
    x: VarId,
    stride: usize,
) -> Result<VarId> {
    let w = b.var(&format!("{name}.w"))?;
    let bias = b.var(&format!("{name}.b"))?;
    let c = tape.conv2d(x, w, stride, 1)?;
    tape.bias_add(c, bias)
}

/// Generator forward pass on a tape. `bound` must be the store's vars in
/// store order (from `ParamStore::bind` or `bind_frozen`).
pub fn generator_forward(
    spec: &GeneratorSpec,
    store: &ParamStore,
    tape: &mut Tape,
    bound: &[VarId],
    lr: VarId,
) -> Result<VarId> {
    validate_params(&spec.param_defs(), store)?;
    let binder = Binder { store, bound };
    let shape = tape.value(lr).shape().to_vec();
    if shape.len() != 3 || shape[0] != 3 {
        return Err(DifaugError::Shape(format!("generator input must be [3,h,w], got {shape:?}")));
    }
    // constant global residual: bicubic ×4 of the input, no gradient
    let bicubic = upsample_lr(tape.value(lr))?;
    let residual = tape.leaf(bicubic);

    let head = conv_block(tape, &binder, "head", lr, 1)?;
    let mut x = tape.leaky_relu(head);
    for i in 0..spec.num_blocks {
        let c1 = conv_block(tape, &binder, &format!("block{i}.conv1"), x, 1)?;
        let a1 = tape.leaky_relu(c1);
        let c2 = conv_block(tape, &binder, &format!("block{i}.conv2"), a1, 1)?;
        x = tape.add(x, c2)?;
    }
    let u1 = tape.upsample_nearest2(x)?;
    let c1 = conv_block(tape, &binder, "up1", u1, 1)?;
    let a1 = tape.leaky_relu(c1);
    let u2 = tape.upsample_nearest2(a1)?;
    let c2 = conv_block(tape, &binder, "up2", u2, 1)?;
    let a2 = tape.leaky_relu(c2);
    let tail = conv_block(tape, &binder, "tail", a2, 1)?;
    tape.add(tail, residual)
}

/// Discriminator forward pass; returns the raw scalar logit (shape [1]).
pub fn discriminator_forward(
    spec: &DiscriminatorSpec,
    store: &ParamStore,
    tape: &mut Tape,
    bound: &[VarId],
    x: VarId,
) -> Result<VarId> {
    validate_params(&spec.param_defs(), store)?;
    let binder = Binder { store, bound };
    let shape = tape.value(x).shape().to_vec();
    if shape.len() != 3 || shape[0] != 3 {
        return Err(DifaugError::Shape(format!(
            "discriminator input must be [3,H,W], got {shape:?}"
        )));
    }
    let div = 1 << spec.num_downsamples;
    if shape[1] % div != 0 || shape[2] % div != 0 {
        return Err(DifaugError::Shape(format!(
            "discriminator input {}x{} not divisible by 2^{}",
            shape[1], shape[2], spec.num_downsamples
        )));
    }
    let head = conv_block(tape, &binder, "head", x, 1)?;
    let mut h = tape.leaky_relu(head);
    for i in 0..spec.num_downsamples {
        let c = conv_block(tape, &binder, &format!("down{i}"), h, 2)?;
        h = tape.leaky_relu(c);
    }
    // global average pool: [C,H,W] -> [C,1] via matmul with 1/(HW)
    let hs = tape.value(h).shape().to_vec();
    let (c, hw) = (hs[0], hs[1] * hs[2]);
    let flat = tape.reshape(h, vec![c, hw])?;
    let ones = tape.leaf(Tensor::from_vec(vec![hw, 1], vec![1.0 / hw as f64; hw])?);
    let pooled = tape.matmul(flat, ones)?;
    let fc_w = binder.var("fc.w")?;
    let fc_b = binder.var("fc.b")?;
    let out = tape.matmul(fc_w, pooled)?;
    let out = tape.reshape(out, vec![1])?;
    tape.add(out, fc_b)
}
