//! Bit-exact functional semantics of the quantized convolution datapath:
//! tensors, weight packing into 256-bit blocks, bit-serial arithmetic,
//! requantization, and a naive reference convolution used as the oracle
//! for all equivalence tests.

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum QnnError {
    #[error("weight {value} does not fit in {qw}-bit offset-binary range [{min}, {max}]")]
    PrecisionOverflow {
        value: i32,
        qw: u8,
        min: i32,
        max: i32,
    },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad vector file: {0}")]
    Format(String),
}

/// Convolution modes supported by the accelerator datapath.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Dense3x3,
    Depthwise3x3,
    Pointwise1x1,
}

impl Mode {
    pub fn kernel(self) -> usize {
        match self {
            Mode::Pointwise1x1 => 1,
            _ => 3,
        }
    }

    /// Output-pixel tile computed by one accelerator job.
    pub fn job_dim(self) -> usize {
        match self {
            Mode::Pointwise1x1 => 8,
            _ => 6,
        }
    }

    /// Input-channel chunk width consumed in parallel.
    pub fn chunk(self) -> usize {
        match self {
            Mode::Pointwise1x1 => 32,
            // 28 channels x 9 taps = 252 payload bits within the 256-bit block.
            _ => 28,
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            Mode::Dense3x3 => "dense3x3",
            Mode::Depthwise3x3 => "dw3x3",
            Mode::Pointwise1x1 => "pw1x1",
        }
    }

    pub fn parse(s: &str) -> Option<Mode> {
        match s {
            "dense3x3" => Some(Mode::Dense3x3),
            "dw3x3" => Some(Mode::Depthwise3x3),
            "pw1x1" => Some(Mode::Pointwise1x1),
            _ => None,
        }
    }
}

/// Unsigned 8-bit activation tensor in height-width-channel (HWC) layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QTensor {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl QTensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<u8>) -> Result<Self, QnnError> {
        if data.len() != height * width * channels {
            return Err(QnnError::ShapeMismatch(format!(
                "data length {} != {}x{}x{}",
                data.len(),
                height,
                width,
                channels
            )));
        }
        Ok(QTensor { height, width, channels, data })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        QTensor { height, width, channels, data: vec![0; height * width * channels] }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Zero-padded read at signed coordinates.
    #[inline]
    pub fn get_padded(&self, y: isize, x: isize, c: usize) -> u8 {
        if y < 0 || x < 0 || y as usize >= self.height || x as usize >= self.width {
            0
        } else {
            self.get(y as usize, x as usize, c)
        }
    }
}

/// Signed 32-bit tensor (raw accumulator outputs), HWC layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tensor32 {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<i32>,
}

impl Tensor32 {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Tensor32 { height, width, channels, data: vec![0; height * width * channels] }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> i32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: i32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }
}

/// Per-output-channel requantization parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequantParams {
    pub scale: Vec<u32>,
    pub bias: Vec<i32>,
    /// Right-shift amounts, each in [0, 31].
    pub shift: Vec<u8>,
}

impl RequantParams {
    pub fn new(scale: Vec<u32>, bias: Vec<i32>, shift: Vec<u8>) -> Result<Self, QnnError> {
        if scale.len() != bias.len() || scale.len() != shift.len() {
            return Err(QnnError::ShapeMismatch(
                "scale/bias/shift must have one entry per output channel".into(),
            ));
        }
        if let Some(s) = shift.iter().find(|&&s| s > 31) {
            return Err(QnnError::IndexOutOfRange(format!("shift {s} > 31")));
        }
        Ok(RequantParams { scale, bias, shift })
    }

    /// Identity projection for `c` channels (scale 1, bias 0, shift 0).
    pub fn identity(c: usize) -> Self {
        RequantParams { scale: vec![1; c], bias: vec![0; c], shift: vec![0; c] }
    }
}

/// One convolution layer as seen by the datapath.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub mode: Mode,
    pub c_in: usize,
    pub c_out: usize,
    /// Weight precision in bits, 2..=8.
    pub qw: u8,
    pub stride: usize,
    /// Zero padding, pixels per side.
    pub padding: usize,
    pub requant: Option<RequantParams>,
    /// When set, outputs are the raw 32-bit accumulators and the whole
    /// requantization stage is bypassed.
    pub raw_output: bool,
}

impl LayerSpec {
    pub fn new(
        mode: Mode,
        c_in: usize,
        c_out: usize,
        qw: u8,
        stride: usize,
        padding: usize,
        requant: Option<RequantParams>,
        raw_output: bool,
    ) -> Result<Self, QnnError> {
        if mode == Mode::Depthwise3x3 && c_in != c_out {
            return Err(QnnError::ShapeMismatch(format!(
                "depthwise requires c_out == c_in ({c_out} != {c_in})"
            )));
        }
        if !(2..=8).contains(&qw) {
            return Err(QnnError::ShapeMismatch(format!("qw {qw} outside [2, 8]")));
        }
        if !(1..=2).contains(&stride) {
            return Err(QnnError::ShapeMismatch(format!("stride {stride} outside {{1, 2}}")));
        }
        if raw_output && requant.is_some() {
            return Err(QnnError::ShapeMismatch(
                "raw_output and requant are mutually exclusive".into(),
            ));
        }
        if let Some(rq) = &requant {
            if rq.scale.len() != c_out {
                return Err(QnnError::ShapeMismatch(format!(
                    "requant has {} channels, layer has {c_out}",
                    rq.scale.len()
                )));
            }
        }
        Ok(LayerSpec { mode, c_in, c_out, qw, stride, padding, requant, raw_output })
    }

    /// Number of raw weight values: c_out x c_in x k x k (c x 9 for depthwise).
    pub fn weight_count(&self) -> usize {
        match self.mode {
            Mode::Dense3x3 => self.c_out * self.c_in * 9,
            Mode::Depthwise3x3 => self.c_out * 9,
            Mode::Pointwise1x1 => self.c_out * self.c_in,
        }
    }

    /// Output spatial size for an `h` (or `w`) input extent.
    pub fn out_dim(&self, h: usize) -> usize {
        let k = self.mode.kernel();
        (h + 2 * self.padding - k) / self.stride + 1
    }
}

const BLOCK_BITS: usize = 256;

/// One 256-bit weight block.
pub type Block = [u64; 4];

#[inline]
fn block_set(b: &mut Block, bit: usize, v: bool) {
    if v {
        b[bit / 64] |= 1u64 << (bit % 64);
    }
}

#[inline]
pub(crate) fn block_get(b: &Block, bit: usize) -> bool {
    (b[bit / 64] >> (bit % 64)) & 1 == 1
}

/// Per-layer weights packed into 256-bit blocks in the accelerator fetch order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightStream {
    pub blocks: Vec<Block>,
    pub mode: Mode,
    pub c_in: usize,
    pub c_out: usize,
    pub qw: u8,
    /// Total payload bits actually carried (excludes unused lanes).
    pub bit_count: usize,
}

impl WeightStream {
    pub fn bytes(&self) -> usize {
        self.blocks.len() * BLOCK_BITS / 8
    }
}

pub fn div_ceil(a: usize, b: usize) -> usize {
    a.div_ceil(b)
}

#[inline]
fn offset(qw: u8) -> i32 {
    1 << (qw - 1)
}

fn encode(w: i8, qw: u8) -> Result<u32, QnnError> {
    let off = offset(qw);
    let (min, max) = (-off, off - 1);
    let w = w as i32;
    if w < min || w > max {
        return Err(QnnError::PrecisionOverflow { value: w, qw, min, max });
    }
    Ok((w + off) as u32)
}

/// Raw weight indexing: dense `[c_out][c_in][9]`, depthwise `[c][9]`,
/// pointwise `[c_out][c_in]`, all row-major.
fn raw_index(spec: &LayerSpec, oc: usize, ic: usize, tap: usize) -> usize {
    match spec.mode {
        Mode::Dense3x3 => (oc * spec.c_in + ic) * 9 + tap,
        Mode::Depthwise3x3 => oc * 9 + tap,
        Mode::Pointwise1x1 => oc * spec.c_in + ic,
    }
}

/// Pack raw signed weights into the 256-bit block stream, offset-binary
/// encoded, enumerating exactly the accelerator fetch order:
///
/// * `Dense3x3`: per output channel, per 28-input-channel chunk, per
///   bit-plane `b = 0..qw-1`; payload bit `lane * 9 + tap`.
/// * `Depthwise3x3`: per 32-channel group, per 28-channel chunk of the
///   group, per bit-plane; same payload layout.
/// * `Pointwise1x1`: per 32-input-channel chunk, per output channel, one
///   block holding all qw bits of 32 lanes interleaved as `lane * qw + b`.
pub fn pack_weights(raw: &[i8], spec: &LayerSpec) -> Result<WeightStream, QnnError> {
    if raw.len() != spec.weight_count() {
        return Err(QnnError::ShapeMismatch(format!(
            "expected {} weights, got {}",
            spec.weight_count(),
            raw.len()
        )));
    }
    let qw = spec.qw as usize;
    let mut blocks = Vec::new();
    let mut bit_count = 0usize;
    match spec.mode {
        Mode::Dense3x3 => {
            let chunks = div_ceil(spec.c_in, 28);
            for oc in 0..spec.c_out {
                for ch in 0..chunks {
                    let lanes = (spec.c_in - ch * 28).min(28);
                    for b in 0..qw {
                        let mut blk: Block = [0; 4];
                        for lane in 0..lanes {
                            let ic = ch * 28 + lane;
                            for tap in 0..9 {
                                let enc = encode(raw[raw_index(spec, oc, ic, tap)], spec.qw)?;
                                block_set(&mut blk, lane * 9 + tap, (enc >> b) & 1 == 1);
                            }
                        }
                        blocks.push(blk);
                        bit_count += lanes * 9;
                    }
                }
            }
        }
        Mode::Depthwise3x3 => {
            for g in 0..div_ceil(spec.c_out, 32) {
                let gsize = (spec.c_out - g * 32).min(32);
                for ch in 0..div_ceil(gsize, 28) {
                    let lanes = (gsize - ch * 28).min(28);
                    for b in 0..qw {
                        let mut blk: Block = [0; 4];
                        for lane in 0..lanes {
                            let c = g * 32 + ch * 28 + lane;
                            for tap in 0..9 {
                                let enc = encode(raw[raw_index(spec, c, 0, tap)], spec.qw)?;
                                block_set(&mut blk, lane * 9 + tap, (enc >> b) & 1 == 1);
                            }
                        }
                        blocks.push(blk);
                        bit_count += lanes * 9;
                    }
                }
            }
        }
        Mode::Pointwise1x1 => {
            for ch in 0..div_ceil(spec.c_in, 32) {
                let lanes = (spec.c_in - ch * 32).min(32);
                for oc in 0..spec.c_out {
                    let mut blk: Block = [0; 4];
                    for lane in 0..lanes {
                        let ic = ch * 32 + lane;
                        let enc = encode(raw[raw_index(spec, oc, ic, 0)], spec.qw)?;
                        for b in 0..qw {
                            block_set(&mut blk, lane * qw + b, (enc >> b) & 1 == 1);
                        }
                    }
                    blocks.push(blk);
                    bit_count += lanes * qw;
                }
            }
        }
    }
    Ok(WeightStream { blocks, mode: spec.mode, c_in: spec.c_in, c_out: spec.c_out, qw: spec.qw, bit_count })
}

/// Invert [`pack_weights`]; returns the raw signed weight array.
pub fn unpack_weights(ws: &WeightStream, spec: &LayerSpec) -> Result<Vec<i8>, QnnError> {
    if ws.mode != spec.mode || ws.c_in != spec.c_in || ws.c_out != spec.c_out || ws.qw != spec.qw {
        return Err(QnnError::ShapeMismatch("stream layout differs from spec".into()));
    }
    let qw = spec.qw as usize;
    let off = offset(spec.qw);
    let mut raw = vec![0i8; spec.weight_count()];
    let mut bi = 0usize;
    let read = |blocks: &[Block], bi: &mut usize| {
        let b = blocks[*bi];
        *bi += 1;
        b
    };
    match spec.mode {
        Mode::Dense3x3 => {
            for oc in 0..spec.c_out {
                for ch in 0..div_ceil(spec.c_in, 28) {
                    let lanes = (spec.c_in - ch * 28).min(28);
                    let planes: Vec<Block> = (0..qw).map(|_| read(&ws.blocks, &mut bi)).collect();
                    for lane in 0..lanes {
                        for tap in 0..9 {
                            let mut enc = 0u32;
                            for (b, pl) in planes.iter().enumerate() {
                                enc |= (block_get(pl, lane * 9 + tap) as u32) << b;
                            }
                            raw[raw_index(spec, oc, ch * 28 + lane, tap)] = (enc as i32 - off) as i8;
                        }
                    }
                }
            }
        }
        Mode::Depthwise3x3 => {
            for g in 0..div_ceil(spec.c_out, 32) {
                let gsize = (spec.c_out - g * 32).min(32);
                for ch in 0..div_ceil(gsize, 28) {
                    let lanes = (gsize - ch * 28).min(28);
                    let planes: Vec<Block> = (0..qw).map(|_| read(&ws.blocks, &mut bi)).collect();
                    for lane in 0..lanes {
                        let c = g * 32 + ch * 28 + lane;
                        for tap in 0..9 {
                            let mut enc = 0u32;
                            for (b, pl) in planes.iter().enumerate() {
                                enc |= (block_get(pl, lane * 9 + tap) as u32) << b;
                            }
                            raw[raw_index(spec, c, 0, tap)] = (enc as i32 - off) as i8;
                        }
                    }
                }
            }
        }
        Mode::Pointwise1x1 => {
            for ch in 0..div_ceil(spec.c_in, 32) {
                let lanes = (spec.c_in - ch * 32).min(32);
                for oc in 0..spec.c_out {
                    let blk = read(&ws.blocks, &mut bi);
                    for lane in 0..lanes {
                        let mut enc = 0u32;
                        for b in 0..qw {
                            enc |= (block_get(&blk, lane * qw + b) as u32) << b;
                        }
                        raw[raw_index(spec, oc, ch * 32 + lane, 0)] = (enc as i32 - off) as i8;
                    }
                }
            }
        }
    }
    Ok(raw)
}

/// Extract one bit-plane of a 3x3-mode weight chunk (up to 28 channels x
/// 9 taps, offset-binary encoded) as a 252-bit plane.
pub fn extract_bitplane(chunk: &[i8], qw: u8, b: u8) -> Result<Block, QnnError> {
    if b >= qw {
        return Err(QnnError::IndexOutOfRange(format!("bit {b} >= qw {qw}")));
    }
    if chunk.len() > 252 {
        return Err(QnnError::ShapeMismatch(format!("chunk has {} > 252 weights", chunk.len())));
    }
    let mut plane: Block = [0; 4];
    for (j, &w) in chunk.iter().enumerate() {
        let enc = encode(w, qw)?;
        block_set(&mut plane, j, (enc >> b) & 1 == 1);
    }
    Ok(plane)
}

/// Naive reference convolution: zero padding, 64-bit intermediate sums,
/// truncated to the 32-bit accumulator width. Independent of the packed
/// stream and of the bit-serial execution order.
pub fn conv_ref(input: &QTensor, raw: &[i8], spec: &LayerSpec) -> Result<Tensor32, QnnError> {
    if input.channels != spec.c_in {
        return Err(QnnError::ShapeMismatch(format!(
            "input has {} channels, spec.c_in = {}",
            input.channels, spec.c_in
        )));
    }
    if raw.len() != spec.weight_count() {
        return Err(QnnError::ShapeMismatch("weight count mismatch".into()));
    }
    let k = spec.mode.kernel() as isize;
    let oh = spec.out_dim(input.height);
    let ow = spec.out_dim(input.width);
    let mut out = Tensor32::zeros(oh, ow, spec.c_out);
    for oy in 0..oh {
        for ox in 0..ow {
            let iy0 = (oy * spec.stride) as isize - spec.padding as isize;
            let ix0 = (ox * spec.stride) as isize - spec.padding as isize;
            for oc in 0..spec.c_out {
                let mut acc: i64 = 0;
                match spec.mode {
                    Mode::Dense3x3 => {
                        for ic in 0..spec.c_in {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let a = input.get_padded(iy0 + ky, ix0 + kx, ic) as i64;
                                    let w = raw[raw_index(spec, oc, ic, (ky * 3 + kx) as usize)] as i64;
                                    acc += a * w;
                                }
                            }
                        }
                    }
                    Mode::Depthwise3x3 => {
                        for ky in 0..k {
                            for kx in 0..k {
                                let a = input.get_padded(iy0 + ky, ix0 + kx, oc) as i64;
                                let w = raw[raw_index(spec, oc, 0, (ky * 3 + kx) as usize)] as i64;
                                acc += a * w;
                            }
                        }
                    }
                    Mode::Pointwise1x1 => {
                        for ic in 0..spec.c_in {
                            let a = input.get_padded(iy0, ix0, ic) as i64;
                            let w = raw[raw_index(spec, oc, ic, 0)] as i64;
                            acc += a * w;
                        }
                    }
                }
                out.set(oy, ox, oc, acc as i32);
            }
        }
    }
    Ok(out)
}

/// Requantize one 32-bit accumulator: `clamp_[0,255]((acc * scale + bias) >> shift)`
/// with the product in 64 bits and an arithmetic right shift (no rounding).
#[inline]
pub fn requantize(acc: i32, scale: u32, bias: i32, shift: u8) -> u8 {
    debug_assert!(shift <= 31);
    let v = (acc as i64) * (scale as i64) + (bias as i64);
    (v >> shift).clamp(0, 255) as u8
}

/// Outputs of the accelerator datapath.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NeurekaOutput {
    Quantized(QTensor),
    Raw(Tensor32),
}

/// Execute the accelerator's documented job loop on a packed weight
/// stream: spatial jobs of 6x6 (3x3 modes) or 8x8 (pointwise) output
/// pixels, 32-output-channel groups, 28/32-channel input chunks, with
/// bit-serial (3x3) or bit-parallel (pointwise) accumulation in wrapping
/// 32-bit arithmetic, then requantization (unless `raw_output`).
///
/// Strides are realized as output-position subsampling of the stride-1
/// result; the offset-binary encoding is compensated by subtracting
/// `offset x sum(activations)` once per accumulator.
pub fn conv_neureka(input: &QTensor, ws: &WeightStream, spec: &LayerSpec) -> Result<NeurekaOutput, QnnError> {
    if ws.mode != spec.mode || ws.c_in != spec.c_in || ws.c_out != spec.c_out || ws.qw != spec.qw {
        return Err(QnnError::ShapeMismatch("stream was not packed for this spec".into()));
    }
    if input.channels != spec.c_in {
        return Err(QnnError::ShapeMismatch(format!(
            "input has {} channels, spec.c_in = {}",
            input.channels, spec.c_in
        )));
    }
    if !spec.raw_output && spec.requant.is_none() {
        return Err(QnnError::ShapeMismatch("quantized output requires requant params".into()));
    }
    let qw = spec.qw as usize;
    let off = offset(spec.qw) as i64;
    let oh = spec.out_dim(input.height);
    let ow = spec.out_dim(input.width);
    let jd = spec.mode.job_dim();
    let mut raw_out = Tensor32::zeros(oh, ow, spec.c_out);

    // Block index helpers mirroring the pack_weights enumeration.
    let dense_chunks = div_ceil(spec.c_in, 28);
    let dense_idx = |oc: usize, ch: usize, b: usize| (oc * dense_chunks + ch) * qw + b;
    let dw_idx = |c: usize| {
        // Blocks before channel c's chunk, plus plane offset added by caller.
        let g = c / 32;
        let gin = c % 32;
        let full_groups_blocks: usize = (0..g)
            .map(|gg| div_ceil((spec.c_out - gg * 32).min(32), 28) * qw)
            .sum();
        full_groups_blocks + (gin / 28) * qw
    };
    let pw_idx = |ch: usize, oc: usize| ch * spec.c_out + oc;

    for g in 0..div_ceil(spec.c_out, 32) {
        let oc0 = g * 32;
        let oc_n = (spec.c_out - oc0).min(32);
        for jy in 0..div_ceil(oh, jd) {
            for jx in 0..div_ceil(ow, jd) {
                for oy in jy * jd..((jy + 1) * jd).min(oh) {
                    for ox in jx * jd..((jx + 1) * jd).min(ow) {
                        let iy0 = (oy * spec.stride) as isize - spec.padding as isize;
                        let ix0 = (ox * spec.stride) as isize - spec.padding as isize;
                        for oci in 0..oc_n {
                            let oc = oc0 + oci;
                            let mut acc: i32 = 0;
                            let mut act_sum: i64 = 0;
                            match spec.mode {
                                Mode::Dense3x3 => {
                                    for ch in 0..dense_chunks {
                                        let lanes = (spec.c_in - ch * 28).min(28);
                                        for b in 0..qw {
                                            let blk = &ws.blocks[dense_idx(oc, ch, b)];
                                            let mut partial: u32 = 0;
                                            for lane in 0..lanes {
                                                let ic = ch * 28 + lane;
                                                for tap in 0..9 {
                                                    if block_get(blk, lane * 9 + tap) {
                                                        let (ky, kx) = ((tap / 3) as isize, (tap % 3) as isize);
                                                        partial += input.get_padded(iy0 + ky, ix0 + kx, ic) as u32;
                                                    }
                                                }
                                            }
                                            acc = acc.wrapping_add((partial as i32) << b);
                                        }
                                    }
                                    for ic in 0..spec.c_in {
                                        for tap in 0..9 {
                                            let (ky, kx) = ((tap / 3) as isize, (tap % 3) as isize);
                                            act_sum += input.get_padded(iy0 + ky, ix0 + kx, ic) as i64;
                                        }
                                    }
                                }
                                Mode::Depthwise3x3 => {
                                    let base = dw_idx(oc);
                                    let lane = (oc % 32) % 28;
                                    for b in 0..qw {
                                        let blk = &ws.blocks[base + b];
                                        let mut partial: u32 = 0;
                                        for tap in 0..9 {
                                            if block_get(blk, lane * 9 + tap) {
                                                let (ky, kx) = ((tap / 3) as isize, (tap % 3) as isize);
                                                partial += input.get_padded(iy0 + ky, ix0 + kx, oc) as u32;
                                            }
                                        }
                                        acc = acc.wrapping_add((partial as i32) << b);
                                    }
                                    for tap in 0..9 {
                                        let (ky, kx) = ((tap / 3) as isize, (tap % 3) as isize);
                                        act_sum += input.get_padded(iy0 + ky, ix0 + kx, oc) as i64;
                                    }
                                }
                                Mode::Pointwise1x1 => {
                                    for ch in 0..div_ceil(spec.c_in, 32) {
                                        let lanes = (spec.c_in - ch * 32).min(32);
                                        let blk = &ws.blocks[pw_idx(ch, oc)];
                                        for lane in 0..lanes {
                                            let ic = ch * 32 + lane;
                                            let mut enc = 0u32;
                                            for b in 0..qw {
                                                enc |= (block_get(blk, lane * qw + b) as u32) << b;
                                            }
                                            let a = input.get_padded(iy0, ix0, ic) as u32;
                                            acc = acc.wrapping_add((enc * a) as i32);
                                            act_sum += a as i64;
                                        }
                                    }
                                }
                            }
                            // Offset-binary compensation, folded like a bias.
                            acc = acc.wrapping_sub((off * act_sum) as i32);
                            raw_out.set(oy, ox, oc, acc);
                        }
                    }
                }
            }
        }
    }

    if spec.raw_output {
        return Ok(NeurekaOutput::Raw(raw_out));
    }
    let rq = spec.requant.as_ref().unwrap();
    let mut q = QTensor::zeros(oh, ow, spec.c_out);
    for i in 0..raw_out.data.len() {
        let c = i % spec.c_out;
        q.data[i] = requantize(raw_out.data[i], rq.scale[c], rq.bias[c], rq.shift[c]);
    }
    Ok(NeurekaOutput::Quantized(q))
}

/// Apply requantization to a raw reference output (the oracle-side
/// counterpart of the accelerator's fused normquant stage).
pub fn requantize_tensor(t: &Tensor32, rq: &RequantParams) -> QTensor {
    let mut q = QTensor::zeros(t.height, t.width, t.channels);
    for i in 0..t.data.len() {
        let c = i % t.channels;
        q.data[i] = requantize(t.data[i], rq.scale[c], rq.bias[c], rq.shift[c]);
    }
    q
}

// ---------------------------------------------------------------------------
// Binary test-vector files.
//
// 16-byte little-endian header:
//   bytes 0-1   magic 0x5154 ("TQ")
//   bytes 2-3   dtype: 1 = u8, 2 = i8, 3 = i32
//   bytes 4-15  three u32 dimensions (height, width, channels)
// followed by the flat HWC data, little-endian.
// ---------------------------------------------------------------------------

const VEC_MAGIC: u16 = 0x5154;

fn write_header<W: Write>(w: &mut W, dtype: u16, dims: [u32; 3]) -> Result<(), QnnError> {
    w.write_all(&VEC_MAGIC.to_le_bytes())?;
    w.write_all(&dtype.to_le_bytes())?;
    for d in dims {
        w.write_all(&d.to_le_bytes())?;
    }
    Ok(())
}

fn read_header<R: Read>(r: &mut R) -> Result<(u16, [u32; 3]), QnnError> {
    let mut h = [0u8; 16];
    r.read_exact(&mut h)?;
    let magic = u16::from_le_bytes([h[0], h[1]]);
    if magic != VEC_MAGIC {
        return Err(QnnError::Format(format!("bad magic {magic:#06x}")));
    }
    let dtype = u16::from_le_bytes([h[2], h[3]]);
    let dims = [
        u32::from_le_bytes([h[4], h[5], h[6], h[7]]),
        u32::from_le_bytes([h[8], h[9], h[10], h[11]]),
        u32::from_le_bytes([h[12], h[13], h[14], h[15]]),
    ];
    Ok((dtype, dims))
}

pub fn save_qtensor(path: &Path, t: &QTensor) -> Result<(), QnnError> {
    let mut f = std::fs::File::create(path)?;
    write_header(&mut f, 1, [t.height as u32, t.width as u32, t.channels as u32])?;
    f.write_all(&t.data)?;
    Ok(())
}

pub fn load_qtensor(path: &Path) -> Result<QTensor, QnnError> {
    let mut f = std::fs::File::open(path)?;
    let (dtype, dims) = read_header(&mut f)?;
    if dtype != 1 {
        return Err(QnnError::Format(format!("dtype {dtype} is not u8")));
    }
    let n = (dims[0] * dims[1] * dims[2]) as usize;
    let mut data = vec![0u8; n];
    f.read_exact(&mut data)?;
    QTensor::new(dims[0] as usize, dims[1] as usize, dims[2] as usize, data)
}

/// Weights are stored as dtype 2 (i8) with dims (c_out, c_in, taps).
pub fn save_weights(path: &Path, raw: &[i8], dims: [u32; 3]) -> Result<(), QnnError> {
    if raw.len() != (dims[0] * dims[1] * dims[2]) as usize {
        return Err(QnnError::ShapeMismatch("weight dims mismatch".into()));
    }
    let mut f = std::fs::File::create(path)?;
    write_header(&mut f, 2, dims)?;
    let bytes: Vec<u8> = raw.iter().map(|&w| w as u8).collect();
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<(Vec<i8>, [u32; 3]), QnnError> {
    let mut f = std::fs::File::open(path)?;
    let (dtype, dims) = read_header(&mut f)?;
    if dtype != 2 {
        return Err(QnnError::Format(format!("dtype {dtype} is not i8")));
    }
    let n = (dims[0] * dims[1] * dims[2]) as usize;
    let mut data = vec![0u8; n];
    f.read_exact(&mut data)?;
    Ok((data.iter().map(|&b| b as i8).collect(), dims))
}

pub fn save_tensor32(path: &Path, t: &Tensor32) -> Result<(), QnnError> {
    let mut f = std::fs::File::create(path)?;
    write_header(&mut f, 3, [t.height as u32, t.width as u32, t.channels as u32])?;
    for v in &t.data {
        f.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn load_tensor32(path: &Path) -> Result<Tensor32, QnnError> {
    let mut f = std::fs::File::open(path)?;
    let (dtype, dims) = read_header(&mut f)?;
    if dtype != 3 {
        return Err(QnnError::Format(format!("dtype {dtype} is not i32")));
    }
    let n = (dims[0] * dims[1] * dims[2]) as usize * 4;
    let mut bytes = vec![0u8; n];
    f.read_exact(&mut bytes)?;
    let data = bytes
        .chunks_exact(4)
        .map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Tensor32 { height: dims[0] as usize, width: dims[1] as usize, channels: dims[2] as usize, data })
}
