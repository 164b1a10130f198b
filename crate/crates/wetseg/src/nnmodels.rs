//! The convolutional autoencoder and U-Net, the checkpoint container, and
//! encoder weight transfer between the two.
//!
//! Both models share one encoder implementation and one parameter naming
//! scheme, so transfer-by-name is exact:
//!
//! ```text
//! enc{i}.conv{1,2}.{weight,bias}    i = 1..=depth, channels base * 2^(i-1)
//! bridge.conv{1,2}.{weight,bias}
//! dec{i}.conv{1,2}.{weight,bias}    decoder mirror
//! head.conv.{weight,bias}           1x1 projection
//! ```
//!
//! Each block is Conv3x3(same) -> ReLU -> Conv3x3(same) -> ReLU -> Dropout.
//! Downsampling is 2x2 max pooling; upsampling is nearest-neighbor. The
//! U-Net concatenates the matching encoder activation before each decoder
//! block; the autoencoder does not.

use std::collections::BTreeSet;
use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use tensorcore::{he_uniform, init_rng, Graph, NodeId, ParamStore, Tensor};

use crate::error::{Result, WetsegError};

/// Geometry of the shared encoder trunk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderSpec {
    pub in_channels: usize,
    pub base_channels: usize,
    pub depth: usize,
    pub bridge_channels: usize,
    pub dropout_p: f32,
}

impl AutoencoderSpec {
    /// Defaults for the 9-band medium-resolution imagery.
    pub fn medium_res() -> Self {
        AutoencoderSpec { in_channels: 9, base_channels: 64, depth: 4, bridge_channels: 512, dropout_p: 0.15 }
    }

    /// Defaults for the 4-band high-resolution imagery.
    pub fn high_res() -> Self {
        AutoencoderSpec { in_channels: 4, ..Self::medium_res() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.base_channels == 0 || self.bridge_channels == 0 {
            return Err(WetsegError::Config("channel counts must be nonzero".into()));
        }
        if self.depth == 0 {
            return Err(WetsegError::Config("depth must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(WetsegError::Config(format!("dropout_p {} outside [0,1)", self.dropout_p)));
        }
        Ok(())
    }

    fn encoder(&self) -> EncoderSpec {
        EncoderSpec {
            in_channels: self.in_channels,
            base_channels: self.base_channels,
            depth: self.depth,
            bridge_channels: self.bridge_channels,
            dropout_p: self.dropout_p,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UNetSpec {
    pub in_channels: usize,
    pub num_classes: usize,
    pub base_channels: usize,
    pub depth: usize,
    pub bridge_channels: usize,
    pub dropout_p: f32,
}

impl UNetSpec {
    /// Defaults for 9-band imagery segmented into the 9-class scheme.
    pub fn medium_res() -> Self {
        UNetSpec {
            in_channels: 9,
            num_classes: 9,
            base_channels: 64,
            depth: 4,
            bridge_channels: 512,
            dropout_p: 0.15,
        }
    }

    /// A U-Net whose encoder matches `ae`, emitting `num_classes` logits.
    pub fn matching_autoencoder(ae: &AutoencoderSpec, num_classes: usize) -> Self {
        UNetSpec {
            in_channels: ae.in_channels,
            num_classes,
            base_channels: ae.base_channels,
            depth: ae.depth,
            bridge_channels: ae.bridge_channels,
            dropout_p: ae.dropout_p,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(WetsegError::Config("num_classes must be nonzero".into()));
        }
        self.encoder().validate_inner()
    }

    fn encoder(&self) -> EncoderSpec {
        EncoderSpec {
            in_channels: self.in_channels,
            base_channels: self.base_channels,
            depth: self.depth,
            bridge_channels: self.bridge_channels,
            dropout_p: self.dropout_p,
        }
    }
}

/// Internal: the trunk both models share.
#[derive(Debug, Clone, Copy, PartialEq)]
struct EncoderSpec {
    in_channels: usize,
    base_channels: usize,
    depth: usize,
    bridge_channels: usize,
    dropout_p: f32,
}

impl EncoderSpec {
    fn validate_inner(&self) -> Result<()> {
        AutoencoderSpec {
            in_channels: self.in_channels,
            base_channels: self.base_channels,
            depth: self.depth,
            bridge_channels: self.bridge_channels,
            dropout_p: self.dropout_p,
        }
        .validate()
    }

    /// Channels of enc1..enc{depth}: base, 2*base, ..., base * 2^(depth-1).
    fn enc_channels(&self) -> Vec<usize> {
        (0..self.depth).map(|i| self.base_channels << i).collect()
    }
}

fn conv_shapes(out_ch: usize, in_ch: usize, k: usize) -> ([usize; 4], [usize; 4]) {
    ([out_ch, in_ch, k, k], [1, out_ch, 1, 1])
}

fn insert_conv(
    store: &mut ParamStore,
    name: &str,
    out_ch: usize,
    in_ch: usize,
    k: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<()> {
    let (wshape, bshape) = conv_shapes(out_ch, in_ch, k);
    let fan_in = in_ch * k * k;
    store.insert(format!("{name}.weight"), he_uniform(wshape, fan_in, rng))?;
    store.insert(format!("{name}.bias"), Tensor::zeros(bshape))?;
    Ok(())
}

fn insert_block(
    store: &mut ParamStore,
    prefix: &str,
    in_ch: usize,
    out_ch: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<()> {
    insert_conv(store, &format!("{prefix}.conv1"), out_ch, in_ch, 3, rng)?;
    insert_conv(store, &format!("{prefix}.conv2"), out_ch, out_ch, 3, rng)?;
    Ok(())
}

fn build_encoder_params(
    store: &mut ParamStore,
    spec: &EncoderSpec,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<()> {
    let chans = spec.enc_channels();
    let mut prev = spec.in_channels;
    for (i, &c) in chans.iter().enumerate() {
        insert_block(store, &format!("enc{}", i + 1), prev, c, rng)?;
        prev = c;
    }
    insert_block(store, "bridge", prev, spec.bridge_channels, rng)?;
    Ok(())
}

fn lease(g: &mut Graph, store: &ParamStore, name: &str) -> Result<NodeId> {
    let param = store
        .get(name)
        .ok_or_else(|| WetsegError::CheckpointFormat(format!("missing parameter {name:?}")))?;
    Ok(g.param(name, param.value.clone(), param.trainable)?)
}

fn conv_block(
    g: &mut Graph,
    store: &ParamStore,
    prefix: &str,
    x: NodeId,
    dropout_p: f32,
) -> Result<NodeId> {
    let w1 = lease(g, store, &format!("{prefix}.conv1.weight"))?;
    let b1 = lease(g, store, &format!("{prefix}.conv1.bias"))?;
    let h1 = g.conv2d(x, w1, Some(b1), 1, 1)?;
    let a1 = g.relu(h1)?;
    let w2 = lease(g, store, &format!("{prefix}.conv2.weight"))?;
    let b2 = lease(g, store, &format!("{prefix}.conv2.bias"))?;
    let h2 = g.conv2d(a1, w2, Some(b2), 1, 1)?;
    let a2 = g.relu(h2)?;
    Ok(g.dropout(a2, dropout_p)?)
}

/// Encoder forward shared verbatim by both models: returns the per-depth
/// skip activations (pre-pooling) and the bridge output.
fn forward_encoder(
    g: &mut Graph,
    store: &ParamStore,
    spec: &EncoderSpec,
    input: NodeId,
) -> Result<(Vec<NodeId>, NodeId)> {
    let [_, c, h, w] = g.value(input).shape();
    if c != spec.in_channels {
        return Err(WetsegError::Data(format!(
            "input has {c} channels, model expects {}",
            spec.in_channels
        )));
    }
    let div = 1usize << spec.depth;
    if h % div != 0 || w % div != 0 || h / div == 0 || w / div == 0 {
        return Err(WetsegError::Data(format!(
            "spatial dims {h}x{w} not divisible by 2^{} down to >= 1",
            spec.depth
        )));
    }
    let mut x = input;
    let mut skips = Vec::with_capacity(spec.depth);
    for i in 1..=spec.depth {
        x = conv_block(g, store, &format!("enc{i}"), x, spec.dropout_p)?;
        skips.push(x);
        x = g.maxpool2(x)?;
    }
    let bridge = conv_block(g, store, "bridge", x, spec.dropout_p)?;
    Ok((skips, bridge))
}

/// Fully convolutional autoencoder. The decoder mirrors the encoder without
/// skip connections; the head is a 1x1 conv followed by a sigmoid.
#[derive(Debug, Clone)]
pub struct Autoencoder {
    pub spec: AutoencoderSpec,
    pub params: ParamStore,
}

impl Autoencoder {
    pub fn build(spec: AutoencoderSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = init_rng(seed);
        let mut store = ParamStore::new();
        let enc = spec.encoder();
        build_encoder_params(&mut store, &enc, &mut rng)?;
        let chans = enc.enc_channels();
        let mut below = spec.bridge_channels;
        for i in (1..=spec.depth).rev() {
            let c = chans[i - 1];
            insert_block(&mut store, &format!("dec{i}"), below, c, &mut rng)?;
            below = c;
        }
        insert_conv(&mut store, "head.conv", spec.in_channels, chans[0], 1, &mut rng)?;
        Ok(Autoencoder { spec, params: store })
    }

    /// Forward pass; output shape equals input shape, values in (0, 1).
    pub fn forward(&self, g: &mut Graph, input: NodeId) -> Result<NodeId> {
        let enc = self.spec.encoder();
        let (_skips, bridge) = forward_encoder(g, &self.params, &enc, input)?;
        let mut x = bridge;
        for i in (1..=self.spec.depth).rev() {
            x = g.upsample2(x)?;
            x = conv_block(g, &self.params, &format!("dec{i}"), x, self.spec.dropout_p)?;
        }
        let w = lease(g, &self.params, "head.conv.weight")?;
        let b = lease(g, &self.params, "head.conv.bias")?;
        let logits = g.conv2d(x, w, Some(b), 1, 0)?;
        Ok(g.sigmoid(logits)?)
    }

    /// Bridge activation for a given input (eval mode).
    pub fn bridge_activation(&self, input: &Tensor) -> Result<Tensor> {
        let mut g = Graph::eval();
        let x = g.input(input.clone())?;
        let (_, bridge) = forward_encoder(&mut g, &self.params, &self.spec.encoder(), x)?;
        Ok(g.value(bridge).clone())
    }

    /// Encoder activations (skips then bridge), eval mode. Used to audit
    /// encoder sharing between models.
    pub fn encoder_activations(&self, input: &Tensor) -> Result<Vec<Tensor>> {
        let mut g = Graph::eval();
        let x = g.input(input.clone())?;
        let (skips, bridge) = forward_encoder(&mut g, &self.params, &self.spec.encoder(), x)?;
        let mut out: Vec<Tensor> = skips.into_iter().map(|id| g.value(id).clone()).collect();
        out.push(g.value(bridge).clone());
        Ok(out)
    }

    /// Eval-mode reconstruction of a single batch tensor.
    pub fn reconstruct(&self, input: &Tensor) -> Result<Tensor> {
        let mut g = Graph::eval();
        let x = g.input(input.clone())?;
        let y = self.forward(&mut g, x)?;
        Ok(g.value(y).clone())
    }
}

/// U-Net for semantic segmentation; same encoder as [`Autoencoder`], skip
/// concatenation in the decoder, raw class logits out.
#[derive(Debug, Clone)]
pub struct UNet {
    pub spec: UNetSpec,
    pub params: ParamStore,
}

impl UNet {
    pub fn build(spec: UNetSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = init_rng(seed);
        let mut store = ParamStore::new();
        let enc = spec.encoder();
        build_encoder_params(&mut store, &enc, &mut rng)?;
        let chans = enc.enc_channels();
        let mut below = spec.bridge_channels;
        for i in (1..=spec.depth).rev() {
            let c = chans[i - 1];
            // decoder block consumes upsampled features concatenated with the skip
            insert_block(&mut store, &format!("dec{i}"), below + c, c, &mut rng)?;
            below = c;
        }
        insert_conv(&mut store, "head.conv", spec.num_classes, chans[0], 1, &mut rng)?;
        Ok(UNet { spec, params: store })
    }

    /// Forward pass to per-pixel class logits (N, num_classes, H, W).
    pub fn forward(&self, g: &mut Graph, input: NodeId) -> Result<NodeId> {
        let enc = self.spec.encoder();
        let (skips, bridge) = forward_encoder(g, &self.params, &enc, input)?;
        let mut x = bridge;
        for i in (1..=self.spec.depth).rev() {
            x = g.upsample2(x)?;
            x = g.concat_channels(x, skips[i - 1])?;
            x = conv_block(g, &self.params, &format!("dec{i}"), x, self.spec.dropout_p)?;
        }
        let w = lease(g, &self.params, "head.conv.weight")?;
        let b = lease(g, &self.params, "head.conv.bias")?;
        Ok(g.conv2d(x, w, Some(b), 1, 0)?)
    }

    /// Eval-mode logits for a batch tensor.
    pub fn logits(&self, input: &Tensor) -> Result<Tensor> {
        let mut g = Graph::eval();
        let x = g.input(input.clone())?;
        let y = self.forward(&mut g, x)?;
        Ok(g.value(y).clone())
    }

    /// Eval-mode softmax probabilities.
    pub fn probabilities(&self, input: &Tensor) -> Result<Tensor> {
        let mut g = Graph::eval();
        let x = g.input(input.clone())?;
        let y = self.forward(&mut g, x)?;
        let p = g.softmax_channels(y)?;
        Ok(g.value(p).clone())
    }

    /// Encoder activations (skips then bridge), eval mode.
    pub fn encoder_activations(&self, input: &Tensor) -> Result<Vec<Tensor>> {
        let mut g = Graph::eval();
        let x = g.input(input.clone())?;
        let (skips, bridge) = forward_encoder(&mut g, &self.params, &self.spec.encoder(), x)?;
        let mut out: Vec<Tensor> = skips.into_iter().map(|id| g.value(id).clone()).collect();
        out.push(g.value(bridge).clone());
        Ok(out)
    }
}

/// Closed-form parameter count for a conv block pair.
fn block_param_count(in_ch: usize, out_ch: usize) -> usize {
    (out_ch * in_ch * 9 + out_ch) + (out_ch * out_ch * 9 + out_ch)
}

/// Total parameter count implied by an autoencoder spec.
pub fn autoencoder_param_count(spec: &AutoencoderSpec) -> usize {
    let chans: Vec<usize> = (0..spec.depth).map(|i| spec.base_channels << i).collect();
    let mut total = 0;
    let mut prev = spec.in_channels;
    for &c in &chans {
        total += block_param_count(prev, c);
        prev = c;
    }
    total += block_param_count(prev, spec.bridge_channels);
    let mut below = spec.bridge_channels;
    for i in (0..spec.depth).rev() {
        total += block_param_count(below, chans[i]);
        below = chans[i];
    }
    total + (spec.in_channels * chans[0] + spec.in_channels)
}

/// Total parameter count implied by a U-Net spec.
pub fn unet_param_count(spec: &UNetSpec) -> usize {
    let chans: Vec<usize> = (0..spec.depth).map(|i| spec.base_channels << i).collect();
    let mut total = 0;
    let mut prev = spec.in_channels;
    for &c in &chans {
        total += block_param_count(prev, c);
        prev = c;
    }
    total += block_param_count(prev, spec.bridge_channels);
    let mut below = spec.bridge_channels;
    for i in (0..spec.depth).rev() {
        total += block_param_count(below + chans[i], chans[i]);
        below = chans[i];
    }
    total + (spec.num_classes * chans[0] + spec.num_classes)
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

const CKPT_MAGIC: &[u8; 4] = b"WSCK";
const CKPT_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Autoencoder,
    UNet,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelKind::Autoencoder => f.write_str("autoencoder"),
            ModelKind::UNet => f.write_str("unet"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CheckpointSpec {
    Autoencoder(AutoencoderSpec),
    UNet(UNetSpec),
}

impl CheckpointSpec {
    pub fn kind(&self) -> ModelKind {
        match self {
            CheckpointSpec::Autoencoder(_) => ModelKind::Autoencoder,
            CheckpointSpec::UNet(_) => ModelKind::UNet,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingProvenance {
    pub epochs: u32,
    pub seed: u64,
    pub config_hash: String,
}

/// Named-tensor weight store with the spec and provenance needed to rebuild
/// the exact model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub version: u16,
    pub spec: CheckpointSpec,
    pub provenance: TrainingProvenance,
    pub tensors: std::collections::BTreeMap<String, Tensor>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    spec: CheckpointSpec,
    provenance: TrainingProvenance,
}

impl ModelCheckpoint {
    pub fn kind(&self) -> ModelKind {
        self.spec.kind()
    }

    pub fn from_autoencoder(model: &Autoencoder, provenance: TrainingProvenance) -> Self {
        let tensors = model
            .params
            .iter()
            .map(|(name, p)| (name.to_string(), p.value.clone()))
            .collect();
        ModelCheckpoint {
            version: CKPT_VERSION,
            spec: CheckpointSpec::Autoencoder(model.spec),
            provenance,
            tensors,
        }
    }

    pub fn from_unet(model: &UNet, provenance: TrainingProvenance) -> Self {
        let tensors = model
            .params
            .iter()
            .map(|(name, p)| (name.to_string(), p.value.clone()))
            .collect();
        ModelCheckpoint {
            version: CKPT_VERSION,
            spec: CheckpointSpec::UNet(model.spec),
            provenance,
            tensors,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        buf.extend_from_slice(CKPT_MAGIC);
        buf.extend_from_slice(&self.version.to_le_bytes());
        let meta = CheckpointMeta { spec: self.spec.clone(), provenance: self.provenance.clone() };
        let json = serde_json::to_vec(&meta)
            .map_err(|e| WetsegError::CheckpointFormat(format!("meta encode: {e}")))?;
        buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
        buf.extend_from_slice(&json);
        buf.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, tensor) in &self.tensors {
            let nb = name.as_bytes();
            buf.extend_from_slice(&(nb.len() as u16).to_le_bytes());
            buf.extend_from_slice(nb);
            let shape = tensor.shape();
            buf.push(4u8); // rank
            for d in shape {
                buf.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in tensor.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor::new(bytes);
        let mut magic = [0u8; 4];
        cur.read_exact(&mut magic)
            .map_err(|_| WetsegError::CheckpointFormat("file shorter than magic".into()))?;
        if &magic != CKPT_MAGIC {
            return Err(WetsegError::CheckpointFormat(format!("bad magic {magic:?}")));
        }
        let version = read_u16(&mut cur)?;
        if version != CKPT_VERSION {
            return Err(WetsegError::CheckpointFormat(format!(
                "unsupported version {version} (expected {CKPT_VERSION})"
            )));
        }
        let json_len = read_u32(&mut cur)? as usize;
        let mut json = vec![0u8; json_len];
        cur.read_exact(&mut json)
            .map_err(|_| WetsegError::CheckpointFormat("meta block truncated".into()))?;
        let meta: CheckpointMeta = serde_json::from_slice(&json)
            .map_err(|e| WetsegError::CheckpointFormat(format!("meta parse: {e}")))?;
        let count = read_u32(&mut cur)? as usize;
        let mut tensors = std::collections::BTreeMap::new();
        for _ in 0..count {
            let name_len = read_u16(&mut cur)? as usize;
            let mut name = vec![0u8; name_len];
            cur.read_exact(&mut name)
                .map_err(|_| WetsegError::CheckpointFormat("tensor name truncated".into()))?;
            let name = String::from_utf8(name)
                .map_err(|_| WetsegError::CheckpointFormat("tensor name not UTF-8".into()))?;
            let rank = read_u8(&mut cur)?;
            if rank != 4 {
                return Err(WetsegError::CheckpointFormat(format!("unsupported rank {rank}")));
            }
            let mut shape = [0usize; 4];
            for d in &mut shape {
                *d = read_u32(&mut cur)? as usize;
            }
            let numel: usize = shape.iter().product();
            let mut data = Vec::with_capacity(numel);
            for _ in 0..numel {
                data.push(f32::from_bits(read_u32(&mut cur)?));
            }
            let tensor = Tensor::new(shape, data)
                .map_err(|e| WetsegError::CheckpointFormat(format!("tensor {name}: {e}")))?;
            if tensors.insert(name.clone(), tensor).is_some() {
                return Err(WetsegError::CheckpointFormat(format!("duplicate tensor {name:?}")));
            }
        }
        if cur.position() as usize != bytes.len() {
            return Err(WetsegError::CheckpointFormat("trailing bytes".into()));
        }
        Ok(ModelCheckpoint { version, spec: meta.spec, provenance: meta.provenance, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        let mut f = fs::File::create(path).map_err(|e| WetsegError::io(path, e))?;
        f.write_all(&bytes).map_err(|e| WetsegError::io(path, e))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| WetsegError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn read_u8(cur: &mut Cursor<&[u8]>) -> Result<u8> {
    let mut b = [0u8; 1];
    cur.read_exact(&mut b).map_err(|_| WetsegError::CheckpointFormat("truncated".into()))?;
    Ok(b[0])
}
fn read_u16(cur: &mut Cursor<&[u8]>) -> Result<u16> {
    let mut b = [0u8; 2];
    cur.read_exact(&mut b).map_err(|_| WetsegError::CheckpointFormat("truncated".into()))?;
    Ok(u16::from_le_bytes(b))
}
fn read_u32(cur: &mut Cursor<&[u8]>) -> Result<u32> {
    let mut b = [0u8; 4];
    cur.read_exact(&mut b).map_err(|_| WetsegError::CheckpointFormat("truncated".into()))?;
    Ok(u32::from_le_bytes(b))
}

/// Restore parameter values from a checkpoint into a fresh parameter store.
/// Every spec-declared parameter must be present exactly once.
fn restore_params(store: &mut ParamStore, ckpt: &ModelCheckpoint) -> Result<()> {
    let expected: BTreeSet<String> = store.names().map(str::to_owned).collect();
    let got: BTreeSet<String> = ckpt.tensors.keys().cloned().collect();
    if expected != got {
        let missing: Vec<String> = expected.difference(&got).cloned().collect();
        let unexpected: Vec<String> = got.difference(&expected).cloned().collect();
        return Err(WetsegError::CheckpointFormat(format!(
            "parameter set mismatch: missing {missing:?}, unexpected {unexpected:?}"
        )));
    }
    for (name, tensor) in &ckpt.tensors {
        store.set_value(name, tensor.clone())?;
    }
    Ok(())
}

/// Rebuild an autoencoder from its checkpoint; loading a different kind or a
/// mismatched spec fails loudly.
pub fn autoencoder_from_checkpoint(ckpt: &ModelCheckpoint) -> Result<Autoencoder> {
    let CheckpointSpec::Autoencoder(spec) = &ckpt.spec else {
        return Err(WetsegError::KindMismatch {
            expected: ModelKind::Autoencoder.to_string(),
            got: ckpt.kind().to_string(),
        });
    };
    let mut model = Autoencoder::build(*spec, 0)?;
    restore_params(&mut model.params, ckpt)?;
    Ok(model)
}

pub fn unet_from_checkpoint(ckpt: &ModelCheckpoint) -> Result<UNet> {
    let CheckpointSpec::UNet(spec) = &ckpt.spec else {
        return Err(WetsegError::KindMismatch {
            expected: ModelKind::UNet.to_string(),
            got: ckpt.kind().to_string(),
        });
    };
    let mut model = UNet::build(*spec, 0)?;
    restore_params(&mut model.params, ckpt)?;
    Ok(model)
}

/// True for parameters belonging to the shared trunk (encoder blocks and
/// bridge) that weight transfer moves between models.
pub fn is_encoder_param(name: &str) -> bool {
    name.starts_with("enc") || name.starts_with("bridge.")
}

/// Copy every encoder parameter from an autoencoder checkpoint into the
/// U-Net, bit-exact. Decoder parameters are untouched. With `freeze`, the
/// transferred parameters are excluded from optimizer updates.
pub fn transfer_encoder(ckpt: &ModelCheckpoint, unet: &mut UNet, freeze: bool) -> Result<()> {
    if ckpt.kind() != ModelKind::Autoencoder {
        return Err(WetsegError::KindMismatch {
            expected: ModelKind::Autoencoder.to_string(),
            got: ckpt.kind().to_string(),
        });
    }
    let ckpt_names: BTreeSet<String> =
        ckpt.tensors.keys().filter(|n| is_encoder_param(n)).cloned().collect();
    let model_names: BTreeSet<String> =
        unet.params.names().filter(|n| is_encoder_param(n)).map(str::to_owned).collect();
    if ckpt_names != model_names {
        return Err(WetsegError::TransferNames {
            missing: model_names.difference(&ckpt_names).cloned().collect(),
            unexpected: ckpt_names.difference(&model_names).cloned().collect(),
        });
    }
    // validate all shapes before mutating anything
    for name in &model_names {
        let src = &ckpt.tensors[name];
        let dst = unet.params.value(name)?;
        if src.shape() != dst.shape() {
            return Err(WetsegError::TransferShape {
                name: name.clone(),
                ckpt: src.shape(),
                model: dst.shape(),
            });
        }
    }
    for name in &model_names {
        unet.params.set_value(name, ckpt.tensors[name].clone())?;
    }
    if freeze {
        unet.params.set_trainable_by_prefix("enc", false);
        unet.params.set_trainable_by_prefix("bridge.", false);
    }
    Ok(())
}
