//! The network: per-modality MLP encoders, a fusion layer, projection
//! heads with l2 output, a labelled classification head and a clustering
//! head.
//!
//! ```text
//!   x_v -> f_v -> z_v --+-- h_v -> l2 -> zhat_v
//!                       |
//!                concat z -> fusion -> zbar -> head_l -> logits_l
//!                       |                   \-> head_u -> softmax -> probs_u
//!   x_a -> f_a -> z_a --+-- h_a -> l2 -> zhat_a
//! ```
//!
//! In single-modal mode the audio branch is absent and the fusion layer is
//! the identity, so `zbar == z_v`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{NcdError, Result};
use crate::numerics::{Param, Rng, Tape, Tensor, Var};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"NCDK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Layer widths of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub d_v: usize,
    /// `None` selects single-modal mode.
    pub d_a: Option<usize>,
    /// Encoder hidden width and output width.
    pub feature: usize,
    /// Width of the fused representation `zbar`.
    pub fused: usize,
    pub proj_hidden: usize,
    pub proj: usize,
    pub num_labelled: usize,
    pub num_unlabelled: usize,
    /// Optional hidden layer inside the clustering head.
    pub head_u_hidden: Option<usize>,
}

impl ModelDims {
    pub fn multimodal(&self) -> bool {
        self.d_a.is_some()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_v", self.d_v),
            ("feature_dim", self.feature),
            ("fused_dim", self.fused),
            ("proj_hidden", self.proj_hidden),
            ("proj_dim", self.proj),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(NcdError::Config(format!("{name} must be positive")));
            }
        }
        if self.d_a == Some(0) || self.head_u_hidden == Some(0) {
            return Err(NcdError::Config(
                "d_a and head_u_hidden must be positive when set".into(),
            ));
        }
        if self.num_unlabelled < 2 {
            return Err(NcdError::Config(format!(
                "need at least 2 unlabelled classes, got {}",
                self.num_unlabelled
            )));
        }
        if !self.multimodal() && self.fused != self.feature {
            return Err(NcdError::Config(format!(
                "single-modal fusion is the identity, so fused_dim ({}) must equal feature_dim ({})",
                self.fused, self.feature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Linear {
    w: usize,
    b: usize,
}

/// Affine layers with ReLU between consecutive layers.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Mlp {
    layers: Vec<Linear>,
}

/// Which classification heads a forward pass evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadMode {
    Labelled,
    Unlabelled,
    Both,
}

impl HeadMode {
    fn labelled(self) -> bool {
        matches!(self, HeadMode::Labelled | HeadMode::Both)
    }
    fn unlabelled(self) -> bool {
        matches!(self, HeadMode::Unlabelled | HeadMode::Both)
    }
}

/// Tape handles of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    pub z: Var,
    pub z_bar: Var,
    pub zhat_v: Option<Var>,
    pub zhat_a: Option<Var>,
    pub logits_l: Option<Var>,
    pub probs_u: Option<Var>,
}

/// Values of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutputs {
    pub z: Tensor,
    pub z_bar: Tensor,
    pub zhat_v: Option<Tensor>,
    pub zhat_a: Option<Tensor>,
    pub logits_l: Option<Tensor>,
    pub probs_u: Option<Tensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    dims: ModelDims,
    params: Vec<Param>,
    names: Vec<String>,
    encoder_v: Mlp,
    encoder_a: Option<Mlp>,
    fusion: Option<Linear>,
    proj_v: Mlp,
    proj_a: Option<Mlp>,
    head_l: Option<Linear>,
    head_u: Mlp,
}

struct Builder<'r> {
    params: Vec<Param>,
    names: Vec<String>,
    rng: &'r mut Rng,
}

impl Builder<'_> {
    /// He-uniform weights, zero bias.
    fn linear(&mut self, name: &str, d_in: usize, d_out: usize) -> Linear {
        let bound = (6.0 / d_in as f64).sqrt();
        let w: Vec<f64> = (0..d_in * d_out)
            .map(|_| self.rng.uniform_range(-bound, bound))
            .collect();
        self.params
            .push(Param::new(Tensor::from_parts(vec![d_in, d_out], w)));
        self.names.push(format!("{name}.weight"));
        self.params.push(Param::new(Tensor::zeros(&[d_out])));
        self.names.push(format!("{name}.bias"));
        Linear {
            w: self.params.len() - 2,
            b: self.params.len() - 1,
        }
    }

    fn mlp(&mut self, name: &str, widths: &[usize]) -> Mlp {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| self.linear(&format!("{name}.{i}"), w[0], w[1]))
            .collect();
        Mlp { layers }
    }
}

impl ModelState {
    pub fn init(dims: ModelDims, rng: &mut Rng) -> Result<Self> {
        dims.validate()?;
        let mut b = Builder {
            params: Vec::new(),
            names: Vec::new(),
            rng,
        };
        let f = dims.feature;
        let encoder_v = b.mlp("encoder_v", &[dims.d_v, f, f, f]);
        let encoder_a = dims.d_a.map(|d_a| b.mlp("encoder_a", &[d_a, f, f, f]));
        let fusion = dims.d_a.map(|_| b.linear("fusion", 2 * f, dims.fused));
        let proj_v = b.mlp("proj_v", &[f, dims.proj_hidden, dims.proj]);
        let proj_a = dims
            .d_a
            .map(|_| b.mlp("proj_a", &[f, dims.proj_hidden, dims.proj]));
        let head_l =
            (dims.num_labelled > 0).then(|| b.linear("head_l", dims.fused, dims.num_labelled));
        let head_u = match dims.head_u_hidden {
            Some(h) => b.mlp("head_u", &[dims.fused, h, dims.num_unlabelled]),
            None => b.mlp("head_u", &[dims.fused, dims.num_unlabelled]),
        };
        Ok(ModelState {
            dims,
            params: b.params,
            names: b.names,
            encoder_v,
            encoder_a,
            fusion,
            proj_v,
            proj_a,
            head_l,
            head_u,
        })
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(Param::len).sum()
    }

    fn linear_on(&self, tape: &mut Tape, x: Var, l: Linear) -> Result<Var> {
        let w = tape.param(l.w, &self.params);
        let b = tape.param(l.b, &self.params);
        tape.affine(x, w, b)
    }

    fn mlp_on(&self, tape: &mut Tape, mut x: Var, mlp: &Mlp) -> Result<Var> {
        let last = mlp.layers.len() - 1;
        for (i, &l) in mlp.layers.iter().enumerate() {
            x = self.linear_on(tape, x, l)?;
            if i < last {
                x = tape.relu(x);
            }
        }
        Ok(x)
    }

    fn check_input(&self, x: &Tensor, d: usize, what: &str) -> Result<()> {
        let (_, cols) = x.dims2()?;
        if cols != d {
            return Err(NcdError::Dimension(format!(
                "{what} input has {cols} features, model expects {d}"
            )));
        }
        Ok(())
    }

    /// Records the forward pass for inputs already on `tape`. The projection
    /// heads only run when `projections` is set, since they fail on inputs
    /// whose projection is exactly zero.
    pub fn forward_on(
        &self,
        tape: &mut Tape,
        xv: Var,
        xa: Option<Var>,
        heads: HeadMode,
        projections: bool,
    ) -> Result<ForwardVars> {
        self.check_input(tape.value(xv), self.dims.d_v, "visual")?;
        let z_v = self.mlp_on(tape, xv, &self.encoder_v)?;
        let zhat_v = if projections {
            let h = self.mlp_on(tape, z_v, &self.proj_v)?;
            Some(tape.l2_normalize(h)?)
        } else {
            None
        };
        let (z, z_bar, zhat_a) = match (&self.encoder_a, xa) {
            (Some(enc_a), Some(xa)) => {
                self.check_input(tape.value(xa), self.dims.d_a.unwrap_or(0), "audio")?;
                if tape.value(xa).rows() != tape.value(xv).rows() {
                    return Err(NcdError::Input(
                        "visual and audio inputs differ in row count".into(),
                    ));
                }
                let z_a = self.mlp_on(tape, xa, enc_a)?;
                let z = tape.concat_cols(z_v, z_a)?;
                let z_bar = self.linear_on(
                    tape,
                    z,
                    self.fusion.expect("fusion exists with audio encoder"),
                )?;
                let zhat_a = if projections {
                    let proj_a = self
                        .proj_a
                        .as_ref()
                        .expect("audio projection exists with audio encoder");
                    let h = self.mlp_on(tape, z_a, proj_a)?;
                    Some(tape.l2_normalize(h)?)
                } else {
                    None
                };
                (z, z_bar, zhat_a)
            }
            (Some(_), None) => {
                return Err(NcdError::Input(
                    "multi-modal model needs an audio input".into(),
                ));
            }
            (None, Some(_)) => {
                return Err(NcdError::Input(
                    "single-modal model got an audio input".into(),
                ));
            }
            (None, None) => (z_v, z_v, None),
        };
        let logits_l = match (heads.labelled(), self.head_l) {
            (true, Some(l)) => Some(self.linear_on(tape, z_bar, l)?),
            _ => None,
        };
        let probs_u = if heads.unlabelled() {
            let logits = self.mlp_on(tape, z_bar, &self.head_u)?;
            Some(tape.softmax(logits)?)
        } else {
            None
        };
        Ok(ForwardVars {
            z,
            z_bar,
            zhat_v,
            zhat_a,
            logits_l,
            probs_u,
        })
    }

    pub fn forward(
        &self,
        xv: &Tensor,
        xa: Option<&Tensor>,
        heads: HeadMode,
        projections: bool,
    ) -> Result<ForwardOutputs> {
        let mut tape = Tape::new();
        let v = tape.constant(xv.clone());
        let a = xa.map(|x| tape.constant(x.clone()));
        let f = self.forward_on(&mut tape, v, a, heads, projections)?;
        let get = |v: Var| tape.value(v).clone();
        Ok(ForwardOutputs {
            z: get(f.z),
            z_bar: get(f.z_bar),
            zhat_v: f.zhat_v.map(get),
            zhat_a: f.zhat_a.map(get),
            logits_l: f.logits_l.map(get),
            probs_u: f.probs_u.map(get),
        })
    }

    /// Cluster ids for the given inputs.
    pub fn predict(&self, xv: &Tensor, xa: Option<&Tensor>) -> Result<Vec<usize>> {
        let out = self.forward(xv, xa, HeadMode::Unlabelled, false)?;
        Ok(assign_cluster(
            out.probs_u.as_ref().expect("unlabelled head requested"),
        ))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_checkpoint(&mut buf)
            .map_err(|e| NcdError::io(path, e))?;
        std::fs::write(path, buf).map_err(|e| NcdError::io(path, e))
    }

    /// Writes the binary checkpoint: magic, version, then every parameter
    /// as `u32` name length, name bytes, `u32` rank, `u64` dims and `f64`
    /// values, all little-endian.
    pub fn write_checkpoint<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        for (name, p) in self.names.iter().zip(&self.params) {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            let shape = p.value.shape();
            w.write_all(&(shape.len() as u32).to_le_bytes())?;
            for &d in shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in p.value.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Loads parameters into a freshly built model of the given shape.
    pub fn load(dims: ModelDims, path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| NcdError::io(path, e))?;
        Self::from_checkpoint_bytes(dims, &bytes)
    }

    pub fn from_checkpoint_bytes(dims: ModelDims, bytes: &[u8]) -> Result<Self> {
        let entries = read_checkpoint(&mut &bytes[..])?;
        let mut model = ModelState::init(dims, &mut Rng::new(0))?;
        if entries.len() != model.params.len() {
            return Err(NcdError::Checkpoint(format!(
                "checkpoint has {} parameters, model expects {}",
                entries.len(),
                model.params.len()
            )));
        }
        for ((name, value), (expected, p)) in entries
            .into_iter()
            .zip(model.names.iter().zip(&mut model.params))
        {
            if &name != expected {
                return Err(NcdError::Checkpoint(format!(
                    "parameter {name:?} where {expected:?} was expected"
                )));
            }
            if value.shape() != p.value.shape() {
                return Err(NcdError::Checkpoint(format!(
                    "{name}: shape {:?}, model expects {:?}",
                    value.shape(),
                    p.value.shape()
                )));
            }
            *p = Param::new(value);
        }
        Ok(model)
    }
}

/// Parses a checkpoint into `(name, tensor)` pairs, validating the header.
pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<Vec<(String, Tensor)>> {
    let bad = |msg: &str| NcdError::Checkpoint(msg.to_string());
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| bad("truncated header"))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(bad("bad magic"));
    }
    let version = read_u32(r).map_err(|_| bad("truncated header"))?;
    if version != CHECKPOINT_VERSION {
        return Err(NcdError::Checkpoint(format!(
            "unsupported version {version}"
        )));
    }
    let mut out = Vec::new();
    loop {
        let mut len = [0u8; 4];
        match read_exact_or_eof(r, &mut len) {
            Ok(false) => break,
            Ok(true) => {}
            Err(_) => return Err(bad("truncated entry")),
        }
        let len = u32::from_le_bytes(len) as usize;
        if len > 4096 {
            return Err(bad("implausible name length"));
        }
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(|_| bad("truncated name"))?;
        let name = String::from_utf8(name).map_err(|_| bad("name is not UTF-8"))?;
        let rank = read_u32(r).map_err(|_| bad("truncated rank"))? as usize;
        if rank == 0 || rank > 8 {
            return Err(NcdError::Checkpoint(format!(
                "{name}: implausible rank {rank}"
            )));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut d = [0u8; 8];
            r.read_exact(&mut d).map_err(|_| bad("truncated shape"))?;
            shape.push(u64::from_le_bytes(d) as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| bad("shape overflow"))?;
        if n > (1 << 28) {
            return Err(bad("implausible tensor size"));
        }
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            let mut v = [0u8; 8];
            r.read_exact(&mut v).map_err(|_| bad("truncated data"))?;
            data.push(f64::from_le_bytes(v));
        }
        let t =
            Tensor::new(shape, data).map_err(|e| NcdError::Checkpoint(format!("{name}: {e}")))?;
        out.push((name, t));
    }
    Ok(out)
}

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// `Ok(false)` on a clean end of stream before the first byte.
fn read_exact_or_eof<R: Read>(r: &mut R, buf: &mut [u8]) -> std::io::Result<bool> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..])? {
            0 if filled == 0 => return Ok(false),
            0 => return Err(std::io::ErrorKind::UnexpectedEof.into()),
            n => filled += n,
        }
    }
    Ok(true)
}

/// Row-wise argmax; ties go to the smallest index.
pub fn assign_cluster(probs: &Tensor) -> Vec<usize> {
    (0..probs.rows())
        .map(|r| {
            let row = probs.row(r);
            let mut best = 0;
            for (k, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}
