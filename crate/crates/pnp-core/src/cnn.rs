//! Inference for a residual convolutional denoiser: a chain of 3x3
//! zero-padded convolutions with per-layer bias and optional ReLU, loaded
//! from the PNPW weights file.
//!
//! PNPW layout (all integers little-endian):
//! magic "PNPW", version u32 = 1, input_channels u32, residual u8,
//! layer_count u32; then per layer: in_ch u32, out_ch u32, relu u8,
//! f32 weights in [out][in][row][col] order, f32 biases [out].
//!
//! Batch-normalization is not represented: exporters must fold scale/shift
//! into the convolution, w'_o = w_o * g_o / sqrt(var_o + eps) and
//! b'_o = (b_o - mean_o) * g_o / sqrt(var_o + eps) + shift_o.

use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::Image;

pub const PNPW_MAGIC: &[u8; 4] = b"PNPW";
pub const PNPW_VERSION: u32 = 1;

/// One 3x3 convolution layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub in_ch: usize,
    pub out_ch: usize,
    pub relu: bool,
    /// 3x3 taps in [out][in][row][col] order, length out_ch*in_ch*9.
    pub weights: Vec<f32>,
    /// One bias per output channel.
    pub biases: Vec<f32>,
}

impl ConvLayer {
    pub fn new(in_ch: usize, out_ch: usize, relu: bool, weights: Vec<f32>, biases: Vec<f32>) -> Result<ConvLayer> {
        if in_ch == 0 || out_ch == 0 {
            return Err(Error::InvalidArgument("layer channel counts must be >= 1".into()));
        }
        if weights.len() != out_ch * in_ch * 9 {
            return Err(Error::ShapeMismatch(format!(
                "layer weights {} != {out_ch}x{in_ch}x3x3",
                weights.len()
            )));
        }
        if biases.len() != out_ch {
            return Err(Error::ShapeMismatch(format!("layer biases {} != {out_ch}", biases.len())));
        }
        if !weights.iter().all(|w| w.is_finite()) || !biases.iter().all(|b| b.is_finite()) {
            return Err(Error::NonFinite("layer weights".into()));
        }
        Ok(ConvLayer { in_ch, out_ch, relu, weights, biases })
    }
}

/// A validated layer chain, optionally residual (output = input - net(input)).
#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel {
    input_channels: usize,
    residual: bool,
    layers: Vec<ConvLayer>,
}

impl CnnModel {
    pub fn new(input_channels: usize, residual: bool, layers: Vec<ConvLayer>) -> Result<CnnModel> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("model needs at least one layer".into()));
        }
        if layers[0].in_ch != input_channels {
            return Err(Error::ChannelMismatch(format!(
                "first layer expects {} channels, model declares {input_channels}",
                layers[0].in_ch
            )));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_ch != pair[1].in_ch {
                return Err(Error::ChannelMismatch(format!(
                    "layer {i} outputs {} channels but layer {} expects {}",
                    pair[0].out_ch,
                    i + 1,
                    pair[1].in_ch
                )));
            }
        }
        let last = layers.last().unwrap();
        if last.out_ch != input_channels {
            return Err(Error::ChannelMismatch(format!(
                "last layer outputs {} channels, model declares {input_channels}",
                last.out_ch
            )));
        }
        if last.relu {
            return Err(Error::InvalidArgument("last layer must not apply relu".into()));
        }
        Ok(CnnModel { input_channels, residual, layers })
    }

    pub fn input_channels(&self) -> usize {
        self.input_channels
    }

    pub fn residual(&self) -> bool {
        self.residual
    }

    pub fn layers(&self) -> &[ConvLayer] {
        &self.layers
    }

    /// Forward pass; zero padding keeps the spatial shape.
    pub fn infer(&self, x: &Image) -> Result<Image> {
        if x.channels() != self.input_channels {
            return Err(Error::ChannelMismatch(format!(
                "model expects {} channels, image has {}",
                self.input_channels,
                x.channels()
            )));
        }
        let (w, h, _) = x.shape();
        let mut features: Vec<f64> = x.data().to_vec();
        for layer in &self.layers {
            features = conv3x3(layer, &features, w, h);
        }
        let net = Image::from_data(w, h, self.input_channels, features)?;
        if self.residual {
            x.sub(&net)
        } else {
            Ok(net)
        }
    }
}

/// 3x3 zero-padded convolution + bias + optional relu over planar features.
fn conv3x3(layer: &ConvLayer, input: &[f64], w: usize, h: usize) -> Vec<f64> {
    let n = w * h;
    let mut out = vec![0.0f64; layer.out_ch * n];
    out.par_chunks_mut(n).enumerate().for_each(|(o, plane)| {
        let bias = layer.biases[o] as f64;
        for y in 0..h {
            for x in 0..w {
                let mut acc = bias;
                for i in 0..layer.in_ch {
                    let wbase = ((o * layer.in_ch) + i) * 9;
                    let iplane = &input[i * n..(i + 1) * n];
                    for dy in 0..3usize {
                        let sy = y as isize + dy as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for dx in 0..3usize {
                            let sx = x as isize + dx as isize - 1;
                            if sx < 0 || sx >= w as isize {
                                continue;
                            }
                            acc += layer.weights[wbase + dy * 3 + dx] as f64
                                * iplane[sy as usize * w + sx as usize];
                        }
                    }
                }
                plane[y * w + x] = if layer.relu { acc.max(0.0) } else { acc };
            }
        }
    });
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(self.path, format!("truncated file at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn f32s(&mut self, count: usize) -> Result<Vec<f32>> {
        let b = self.take(4 * count)?;
        Ok(b.chunks_exact(4).map(|q| f32::from_le_bytes([q[0], q[1], q[2], q[3]])).collect())
    }
}

/// Load and fully validate a PNPW weights file.
pub fn load_model(path: &Path) -> Result<CnnModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader { bytes: &bytes, pos: 0, path };
    if r.take(4)? != PNPW_MAGIC {
        return Err(Error::format(path, "bad magic (expected PNPW)"));
    }
    let version = r.u32()?;
    if version != PNPW_VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let input_channels = r.u32()? as usize;
    let residual = match r.u8()? {
        0 => false,
        1 => true,
        v => return Err(Error::format(path, format!("bad residual flag {v}"))),
    };
    let layer_count = r.u32()? as usize;
    if layer_count == 0 || layer_count > 1024 {
        return Err(Error::format(path, format!("implausible layer count {layer_count}")));
    }
    let mut layers = Vec::with_capacity(layer_count);
    for li in 0..layer_count {
        let in_ch = r.u32()? as usize;
        let out_ch = r.u32()? as usize;
        if in_ch == 0 || out_ch == 0 || in_ch > 65536 || out_ch > 65536 {
            return Err(Error::format(path, format!("implausible channels in layer {li}")));
        }
        let relu = match r.u8()? {
            0 => false,
            1 => true,
            v => return Err(Error::format(path, format!("bad relu flag {v} in layer {li}"))),
        };
        let weights = r.f32s(out_ch * in_ch * 9)?;
        let biases = r.f32s(out_ch)?;
        layers.push(
            ConvLayer::new(in_ch, out_ch, relu, weights, biases)
                .map_err(|e| Error::format(path, format!("layer {li}: {e}")))?,
        );
    }
    if r.pos != bytes.len() {
        return Err(Error::format(path, format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    CnnModel::new(input_channels, residual, layers).map_err(|e| Error::format(path, e.to_string()))
}

/// Serialize the model in the exact PNPW byte layout.
pub fn model_bytes(m: &CnnModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(PNPW_MAGIC);
    out.extend_from_slice(&PNPW_VERSION.to_le_bytes());
    out.extend_from_slice(&(m.input_channels as u32).to_le_bytes());
    out.push(m.residual as u8);
    out.extend_from_slice(&(m.layers.len() as u32).to_le_bytes());
    for layer in &m.layers {
        out.extend_from_slice(&(layer.in_ch as u32).to_le_bytes());
        out.extend_from_slice(&(layer.out_ch as u32).to_le_bytes());
        out.push(layer.relu as u8);
        for w in &layer.weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
        for b in &layer.biases {
            out.extend_from_slice(&b.to_le_bytes());
        }
    }
    out
}

pub fn save_model(path: &Path, m: &CnnModel) -> Result<()> {
    std::fs::write(path, model_bytes(m)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{uniform, RngSeed};

    fn rand_img(w: usize, h: usize, c: usize, seed: u64) -> Image {
        let mut img = Image::zeros(w, h, c);
        for (i, v) in img.data_mut().iter_mut().enumerate() {
            *v = uniform(RngSeed(seed), i as u64) - 0.5;
        }
        img
    }

    fn rand_f32s(count: usize, seed: u64) -> Vec<f32> {
        (0..count).map(|i| (uniform(RngSeed(seed), i as u64) as f32 - 0.5) * 0.4).collect()
    }

    fn small_model(in_ch: usize, hidden: usize, residual: bool, seed: u64) -> CnnModel {
        let l1 = ConvLayer::new(in_ch, hidden, true, rand_f32s(hidden * in_ch * 9, seed), rand_f32s(hidden, seed + 1)).unwrap();
        let l2 = ConvLayer::new(hidden, in_ch, false, rand_f32s(in_ch * hidden * 9, seed + 2), rand_f32s(in_ch, seed + 3)).unwrap();
        CnnModel::new(in_ch, residual, vec![l1, l2]).unwrap()
    }

    #[test]
    fn zero_weight_residual_is_identity() {
        let l1 = ConvLayer::new(1, 4, true, vec![0.0; 36], vec![0.0; 4]).unwrap();
        let l2 = ConvLayer::new(4, 1, false, vec![0.0; 36], vec![0.0; 1]).unwrap();
        let m = CnnModel::new(1, true, vec![l1, l2]).unwrap();
        let x = rand_img(7, 5, 1, 1);
        assert_eq!(m.infer(&x).unwrap(), x);
    }

    #[test]
    fn delta_kernel_selects_channel() {
        // single non-residual layer, delta tap on channel 0, no bias/relu
        let mut w = vec![0.0f32; 2 * 9];
        w[4] = 1.0; // center tap of input channel 0
        let layer = ConvLayer::new(2, 2, false, [w.clone(), vec![0.0; 18]].concat(), vec![0.0; 2]).unwrap();
        // second output channel all zero; to keep the chain valid use out=2
        let m = CnnModel::new(2, false, vec![layer]).unwrap();
        let x = rand_img(6, 4, 2, 2);
        let y = m.infer(&x).unwrap();
        for i in 0..24 {
            assert_eq!(y.plane(0)[i], x.plane(0)[i]);
            assert_eq!(y.plane(1)[i], 0.0);
        }
    }

    /// Direct quadruple-loop oracle over (out, in, dy, dx) with explicit
    /// zero padding; independent of the production path.
    fn infer_oracle(m: &CnnModel, x: &Image) -> Image {
        let (w, h, _) = x.shape();
        let mut cur: Vec<Vec<f64>> =
            (0..x.channels()).map(|c| x.plane(c).to_vec()).collect();
        for layer in m.layers() {
            let mut next = vec![vec![0.0f64; w * h]; layer.out_ch];
            for o in 0..layer.out_ch {
                for y in 0..h as isize {
                    for xx in 0..w as isize {
                        let mut acc = layer.biases[o] as f64;
                        for i in 0..layer.in_ch {
                            for dy in -1isize..=1 {
                                for dx in -1isize..=1 {
                                    let (sy, sx) = (y + dy, xx + dx);
                                    if sy < 0 || sy >= h as isize || sx < 0 || sx >= w as isize {
                                        continue;
                                    }
                                    let tap = layer.weights
                                        [((o * layer.in_ch + i) * 3 + (dy + 1) as usize) * 3
                                            + (dx + 1) as usize];
                                    acc += tap as f64 * cur[i][sy as usize * w + sx as usize];
                                }
                            }
                        }
                        next[o][(y * w as isize + xx) as usize] =
                            if layer.relu { acc.max(0.0) } else { acc };
                    }
                }
            }
            cur = next;
        }
        let mut out = Image::zeros(w, h, m.input_channels());
        for c in 0..m.input_channels() {
            out.plane_mut(c).copy_from_slice(&cur[c]);
        }
        if m.residual() {
            x.sub(&out).unwrap()
        } else {
            out
        }
    }

    #[test]
    fn infer_matches_quadruple_loop_oracle() {
        for seed in [10u64, 20, 30] {
            let m = small_model(3, 5, seed % 20 == 0, seed);
            let x = rand_img(8, 8, 3, seed + 4);
            let fast = m.infer(&x).unwrap();
            let slow = infer_oracle(&m, &x);
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn linearity_without_relu_or_bias() {
        let l = ConvLayer::new(1, 1, false, rand_f32s(9, 40), vec![0.0]).unwrap();
        let m = CnnModel::new(1, false, vec![l]).unwrap();
        let x = rand_img(6, 6, 1, 41);
        let a = 2.75;
        let lhs = m.infer(&x.scale(a)).unwrap();
        let rhs = m.infer(&x).unwrap().scale(a);
        for (p, q) in lhs.data().iter().zip(rhs.data()) {
            assert!((p - q).abs() < 1e-10);
        }
    }

    #[test]
    fn infer_is_deterministic_and_shape_preserving() {
        let m = small_model(1, 8, true, 50);
        let x = rand_img(9, 7, 1, 51);
        let a = m.infer(&x).unwrap();
        let b = m.infer(&x).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.shape(), x.shape());
        assert!(m.infer(&rand_img(4, 4, 3, 52)).is_err());
    }

    fn tmp(name: &str) -> std::path::PathBuf {
        let mut p = std::env::temp_dir();
        p.push(format!("pnp-cnn-{}-{}", std::process::id(), name));
        p
    }

    #[test]
    fn pnpw_round_trip_is_byte_identical() {
        let m = small_model(3, 4, true, 60);
        let p = tmp("a.pnpw");
        save_model(&p, &m).unwrap();
        let loaded = load_model(&p).unwrap();
        assert_eq!(loaded, m);
        let p2 = tmp("b.pnpw");
        save_model(&p2, &loaded).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn pnpw_known_bytes_parse_exactly() {
        // hand-built 2-layer single-channel file
        let mut bytes: Vec<u8> = Vec::new();
        bytes.extend_from_slice(b"PNPW");
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes()); // input channels
        bytes.push(0); // residual
        bytes.extend_from_slice(&2u32.to_le_bytes()); // layers
        let w1: Vec<f32> = (0..18).map(|i| i as f32 * 0.5).collect();
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.push(1);
        for v in &w1 {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes.extend_from_slice(&0.25f32.to_le_bytes());
        bytes.extend_from_slice(&(-0.5f32).to_le_bytes());
        let w2: Vec<f32> = (0..18).map(|i| -(i as f32) * 0.125).collect();
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.push(0);
        for v in &w2 {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes.extend_from_slice(&1.5f32.to_le_bytes());
        let p = tmp("c.pnpw");
        std::fs::write(&p, &bytes).unwrap();
        let m = load_model(&p).unwrap();
        assert_eq!(m.layers()[0].weights, w1);
        assert_eq!(m.layers()[0].biases, vec![0.25, -0.5]);
        assert_eq!(m.layers()[1].weights, w2);
        assert_eq!(m.layers()[1].biases, vec![1.5]);
        assert!(!m.residual());
    }

    #[test]
    fn pnpw_validation_errors() {
        let m = small_model(1, 3, false, 70);
        let good = model_bytes(&m);

        let p = tmp("d.pnpw");
        std::fs::write(&p, &good[..good.len() - 3]).unwrap();
        assert!(matches!(load_model(&p), Err(Error::Format { .. })), "truncated");

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        std::fs::write(&p, &bad_magic).unwrap();
        assert!(matches!(load_model(&p), Err(Error::Format { .. })), "magic");

        let mut bad_version = good.clone();
        bad_version[4] = 9;
        std::fs::write(&p, &bad_version).unwrap();
        assert!(matches!(load_model(&p), Err(Error::Format { .. })), "version");

        // channel-chain mismatch: claim layer 2 takes 4 inputs
        let l1 = ConvLayer::new(1, 3, true, vec![0.0; 27], vec![0.0; 3]).unwrap();
        let l2 = ConvLayer::new(4, 1, false, vec![0.0; 36], vec![0.0; 1]).unwrap();
        assert!(CnnModel::new(1, false, vec![l1, l2]).is_err());
    }
}
