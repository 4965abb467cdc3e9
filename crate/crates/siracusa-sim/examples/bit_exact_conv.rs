//! Pack a random quantized layer, run it through the accelerator model,
//! and verify it against the reference convolution bit for bit.
//!
//! `cargo run --example bit_exact_conv`

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use siracusa_sim::qnn::{
    conv_neureka, conv_ref, pack_weights, requantize_tensor, LayerSpec, Mode, NeurekaOutput,
    QTensor, RequantParams,
};

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let (c_in, c_out, qw) = (56, 32, 3);
    let spec = LayerSpec::new(
        Mode::Dense3x3,
        c_in,
        c_out,
        qw,
        1,
        1,
        Some(RequantParams::identity(c_out)),
        false,
    )
    .unwrap();

    let mut x = QTensor::zeros(16, 16, c_in);
    rng.fill(&mut x.data[..]);
    let lim = 1i32 << (qw - 1);
    let raw: Vec<i8> =
        (0..spec.weight_count()).map(|_| rng.gen_range(-lim..lim) as i8).collect();

    let stream = pack_weights(&raw, &spec).unwrap();
    println!(
        "packed {} weights into {} bytes ({} blocks of 256 bits)",
        raw.len(),
        stream.bytes(),
        stream.blocks.len()
    );

    let got = match conv_neureka(&x, &stream, &spec).unwrap() {
        NeurekaOutput::Quantized(q) => q,
        NeurekaOutput::Raw(_) => unreachable!(),
    };
    let want = requantize_tensor(
        &conv_ref(&x, &raw, &spec).unwrap(),
        spec.requant.as_ref().unwrap(),
    );
    assert_eq!(got.data, want.data);
    println!(
        "bit-exact: {}x{}x{} output matches the reference",
        got.height, got.width, got.channels
    );
}
