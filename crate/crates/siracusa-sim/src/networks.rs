//! Built-in network descriptions.

use crate::qnn::{LayerSpec, Mode};
use crate::runner::{NetLayer, NetworkDesc};

fn layer(name: &str, mode: Mode, h: usize, c_in: usize, c_out: usize, stride: usize) -> NetLayer {
    let pad = if mode == Mode::Pointwise1x1 { 0 } else { 1 };
    NetLayer {
        name: name.into(),
        spec: LayerSpec::new(mode, c_in, c_out, 8, stride, pad, None, true).unwrap(),
        h,
        w: h,
    }
}

/// MobileNet-V2 (width 1.0, 224x224 input): the 52 convolution layers,
/// 8-bit weights throughout. Pooling and the classifier run on the cores
/// and are out of scope.
pub fn mobilenet_v2() -> NetworkDesc {
    mobilenet_v2_with_stages().0
}

/// The network plus, for each of the seven bottleneck stages, the indices
/// of its convolution layers (the stem and final 1x1 are in no stage).
pub fn mobilenet_v2_with_stages() -> (NetworkDesc, Vec<Vec<usize>>) {
    let mut layers = vec![layer("conv1", Mode::Dense3x3, 224, 3, 32, 2)];
    // Per stage: expansion factor, output channels, repeats, first stride.
    let cfg = [
        (1, 16, 1, 1),
        (6, 24, 2, 2),
        (6, 32, 3, 2),
        (6, 64, 4, 2),
        (6, 96, 3, 1),
        (6, 160, 3, 2),
        (6, 320, 1, 1),
    ];
    let mut h = 112;
    let mut c_in = 32;
    let mut blk = 0;
    let mut stages = Vec::new();
    for (t, c, n, s) in cfg {
        let mut idxs = Vec::new();
        for i in 0..n {
            let stride = if i == 0 { s } else { 1 };
            blk += 1;
            if t != 1 {
                layers.push(layer(&format!("b{blk}_exp"), Mode::Pointwise1x1, h, c_in, c_in * t, 1));
                idxs.push(layers.len() - 1);
            }
            let hid = c_in * t;
            layers.push(layer(&format!("b{blk}_dw"), Mode::Depthwise3x3, h, hid, hid, stride));
            idxs.push(layers.len() - 1);
            h = h.div_ceil(stride);
            layers.push(layer(&format!("b{blk}_proj"), Mode::Pointwise1x1, h, hid, c, 1));
            idxs.push(layers.len() - 1);
            c_in = c;
        }
        stages.push(idxs);
    }
    layers.push(layer("conv_last", Mode::Pointwise1x1, 7, 320, 1280, 1));
    (NetworkDesc { name: "mobilenet_v2_1.0_224".into(), layers }, stages)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runner::{parse_network, render_network};

    #[test]
    fn mobilenet_shape() {
        let (net, stages) = mobilenet_v2_with_stages();
        assert_eq!(net.layers.len(), 52);
        assert_eq!(net.weight_params(), 2_189_760);
        assert_eq!(net.packed_weight_bytes(), 2_251_776);
        assert_eq!(stages.len(), 7);
        assert_eq!(stages.iter().map(Vec::len).sum::<usize>(), 50);
        // Shapes compose (re-parse runs the composition checks).
        let rt = parse_network(&render_network(&net), "mbv2.net").unwrap();
        assert_eq!(rt.layers.len(), 52);
        // Final layer sees a 7x7 map.
        let last = net.layers.last().unwrap();
        assert_eq!((last.h, last.spec.c_in, last.spec.c_out), (7, 320, 1280));
    }
}
