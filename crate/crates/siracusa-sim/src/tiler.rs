//! Per-layer tile planning under the double-buffered L1 capacity
//! constraint, the step timeline (compute vs transfer overlap), energy
//! accounting, and execution-regime classification.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::cal::CalibrationSet;
use crate::mem::KIB;
use crate::qnn::{div_ceil, LayerSpec, Mode};
use crate::timing::{region_cycles, CycleBreakdown, OperatingPoint, WeightSource};
use crate::xfer::{link, transfer_energy, transfer_time, LinkId};

#[derive(Debug, Error)]
pub enum TilerError {
    #[error("layer unschedulable: {0}")]
    Unschedulable(String),
}

/// The four NVM integration scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scenario {
    /// Weights in off-chip Flash, staged L3 -> L2 -> L1.
    L3Flash,
    /// Weights in on-chip MRAM used as an L3 background memory.
    L3Mram,
    /// Weights in MRAM mapped as L2, staged L2 -> L1.
    L2Mram,
    /// Weights streamed straight from MRAM over the dedicated port;
    /// activations staged from the in-cluster tile SRAM.
    L1Mram,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [Scenario::L3Flash, Scenario::L3Mram, Scenario::L2Mram, Scenario::L1Mram];

    pub fn token(self) -> &'static str {
        match self {
            Scenario::L3Flash => "l3flash",
            Scenario::L3Mram => "l3mram",
            Scenario::L2Mram => "l2mram",
            Scenario::L1Mram => "l1mram",
        }
    }

    pub fn parse(s: &str) -> Option<Scenario> {
        Scenario::ALL.into_iter().find(|sc| sc.token() == s)
    }

    pub fn weight_source(self) -> WeightSource {
        match self {
            Scenario::L1Mram => WeightSource::Mram,
            _ => WeightSource::L1,
        }
    }

    /// The cluster-DMA link activations (and staged weights) ride on.
    pub fn dma_link(self) -> LinkId {
        match self {
            Scenario::L1Mram => LinkId::TileToL1,
            _ => LinkId::L2ToL1,
        }
    }

    /// The upstream link feeding weights into L2, if any.
    pub fn weight_upstream(self) -> Option<LinkId> {
        match self {
            Scenario::L3Flash => Some(LinkId::OffchipToL2),
            Scenario::L3Mram => Some(LinkId::L3MramToL2),
            _ => None,
        }
    }
}

/// Packed weight bytes of a layer (or of a `c_out` slice of it): the
/// 256-bit block count times 32.
pub fn packed_weight_bytes(spec: &LayerSpec, c_out: usize) -> usize {
    let qw = spec.qw as usize;
    let blocks = match spec.mode {
        Mode::Dense3x3 => div_ceil(spec.c_in, 28) * c_out * qw,
        Mode::Depthwise3x3 => (0..div_ceil(c_out, 32))
            .map(|g| div_ceil((c_out - g * 32).min(32), 28) * qw)
            .sum(),
        Mode::Pointwise1x1 => div_ceil(spec.c_in, 32) * c_out,
    };
    blocks * 32
}

/// One double-buffered pipeline step.
#[derive(Debug, Clone)]
pub struct TileStep {
    pub compute: CycleBreakdown,
    pub bytes_in: usize,
    pub bytes_out: usize,
    /// Weight bytes staged over the cluster DMA for this step (only on
    /// the first spatial tile of each output-channel slice; the slice's
    /// weights stay resident afterwards).
    pub bytes_w: usize,
}

/// A planned per-layer tile loop.
#[derive(Debug, Clone)]
pub struct TileSchedule {
    pub layer: usize,
    pub tile_h: usize,
    pub tile_w: usize,
    pub c_in_tile: usize,
    pub c_out_tile: usize,
    pub tiles_h: usize,
    pub tiles_w: usize,
    pub tiles_cout: usize,
    pub steps: Vec<TileStep>,
    /// Full packed weight volume moved once per inference.
    pub weight_bytes_total: usize,
}

impl TileSchedule {
    pub fn total_compute(&self) -> CycleBreakdown {
        let mut sum = CycleBreakdown::default();
        for s in &self.steps {
            sum.add(&s.compute);
        }
        sum
    }

    pub fn bytes_in(&self) -> usize {
        self.steps.iter().map(|s| s.bytes_in).sum()
    }

    pub fn bytes_out(&self) -> usize {
        self.steps.iter().map(|s| s.bytes_out).sum()
    }

    pub fn bytes_w_dma(&self) -> usize {
        self.steps.iter().map(|s| s.bytes_w).sum()
    }
}

const L1_BYTES: usize = 256 * KIB;

fn in_extent(spec: &LayerSpec, out_px: usize) -> usize {
    (out_px - 1) * spec.stride + spec.mode.kernel()
}

/// Clipped input-pixel extent covered by output rows [o0, o0+n) along one
/// axis of an `extent`-pixel input.
fn clipped_in(spec: &LayerSpec, o0: usize, n: usize, extent: usize) -> usize {
    let k = spec.mode.kernel() as isize;
    let lo = (o0 * spec.stride) as isize - spec.padding as isize;
    let hi = ((o0 + n - 1) * spec.stride) as isize - spec.padding as isize + k; // exclusive
    let lo = lo.max(0) as usize;
    let hi = (hi.max(0) as usize).min(extent);
    hi.saturating_sub(lo)
}

/// Plan a layer's tile loop: full input depth always; output-channel
/// slices only when forced; spatial extent as large as the double-buffer
/// constraint `2 x (in + out + staged weights) <= 256 KiB` allows, larger
/// tile height preferred over width.
pub fn plan_tiles(
    layer: usize,
    spec: &LayerSpec,
    h: usize,
    w: usize,
    scenario: Scenario,
    cal: &CalibrationSet,
) -> Result<TileSchedule, TilerError> {
    let oh = spec.out_dim(h);
    let ow = spec.out_dim(w);
    let jd = spec.mode.job_dim();
    let stage_weights = scenario.weight_source() == WeightSource::L1;

    let fits = |th: usize, tw: usize, ct: usize| -> bool {
        let in_b = in_extent(spec, th).min(h) * in_extent(spec, tw).min(w) * spec.c_in;
        let out_b = th * tw * ct;
        let w_b = if stage_weights { packed_weight_bytes(spec, ct) } else { 0 };
        2 * (in_b + out_b + w_b) <= L1_BYTES
    };

    // Candidate c_out slices: the full layer first, then multiples of 32.
    let mut ct_candidates = vec![spec.c_out];
    let mut ct = div_ceil(spec.c_out, 32) / 2 * 32;
    while ct >= 32 {
        ct_candidates.push(ct);
        ct /= 2;
    }
    if *ct_candidates.last().unwrap() != 32 {
        ct_candidates.push(32);
    }

    let max_th = div_ceil(oh, jd) * jd;
    let max_tw = div_ceil(ow, jd) * jd;
    let mut chosen = None;
    'outer: for &ct in &ct_candidates {
        if spec.mode == Mode::Depthwise3x3 && ct != spec.c_out && ct % 32 != 0 {
            continue;
        }
        let mut th = max_th;
        while th >= jd {
            let mut tw = max_tw.min(th);
            while tw >= jd {
                if fits(th, tw, ct) {
                    chosen = Some((th, tw, ct));
                    break 'outer;
                }
                tw -= jd;
            }
            th -= jd;
        }
    }
    let (tile_h, tile_w, c_out_tile) = chosen.ok_or_else(|| {
        TilerError::Unschedulable(format!(
            "minimal {jd}x{jd}x{}->32 tile exceeds the {} KiB double-buffered L1",
            spec.c_in,
            L1_BYTES / KIB
        ))
    })?;

    let tiles_h = div_ceil(oh, tile_h);
    let tiles_w = div_ceil(ow, tile_w);
    let tiles_cout = div_ceil(spec.c_out, c_out_tile);
    let ws = scenario.weight_source();

    let mut steps = Vec::new();
    for g in 0..tiles_cout {
        let ct = (spec.c_out - g * c_out_tile).min(c_out_tile);
        // Sub-spec restricted to this output-channel slice.
        let mut sub = spec.clone();
        sub.c_out = ct;
        if spec.mode == Mode::Depthwise3x3 {
            sub.c_in = ct;
        }
        for ty in 0..tiles_h {
            for tx in 0..tiles_w {
                let th_eff = (oh - ty * tile_h).min(tile_h);
                let tw_eff = (ow - tx * tile_w).min(tile_w);
                let first = g == 0 && ty == 0 && tx == 0;
                let compute = region_cycles(&sub, th_eff, tw_eff, ws, first, cal)
                    .map_err(|e| TilerError::Unschedulable(e.to_string()))?;
                let c_in_moved = if spec.mode == Mode::Depthwise3x3 { ct } else { spec.c_in };
                let bytes_in = clipped_in(spec, ty * tile_h, th_eff, h)
                    * clipped_in(spec, tx * tile_w, tw_eff, w)
                    * c_in_moved;
                let bytes_out = th_eff * tw_eff * ct;
                let bytes_w = if stage_weights && ty == 0 && tx == 0 {
                    packed_weight_bytes(spec, ct)
                } else {
                    0
                };
                steps.push(TileStep { compute, bytes_in, bytes_out, bytes_w });
            }
        }
    }

    Ok(TileSchedule {
        layer,
        tile_h,
        tile_w,
        c_in_tile: spec.c_in,
        c_out_tile,
        tiles_h,
        tiles_w,
        tiles_cout,
        steps,
        weight_bytes_total: packed_weight_bytes(spec, spec.c_out),
    })
}

/// Execution regime of a layer or aggregate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    WellBalanced,
    ComputeDominated,
    WeightMemoryBound,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::WellBalanced => "well_balanced",
            Regime::ComputeDominated => "compute_dominated",
            Regime::WeightMemoryBound => "weight_memory_bound",
        }
    }
}

/// Threshold: a side must exceed the other by 1.2x to leave the
/// well-balanced band.
pub const REGIME_THRESHOLD: f64 = 1.2;

/// Classify from compute time and per-link transfer times;
/// `weight_frac` gives, per link, the fraction of its traffic that is
/// weights.
pub fn classify(compute_s: f64, transfers: &[(LinkId, f64, f64)]) -> Regime {
    let max_t = transfers.iter().map(|t| t.1).fold(0.0, f64::max);
    let dominant = transfers
        .iter()
        .filter(|t| t.1 > REGIME_THRESHOLD * compute_s)
        .max_by(|a, b| a.1.total_cmp(&b.1));
    if let Some(&(_, _, wfrac)) = dominant {
        if wfrac > 0.5 {
            return Regime::WeightMemoryBound;
        }
    }
    if compute_s > REGIME_THRESHOLD * max_t {
        Regime::ComputeDominated
    } else {
        Regime::WellBalanced
    }
}

/// Energy split of one layer, joules.
#[derive(Debug, Clone, Copy, Default)]
pub struct EnergyBreakdown {
    pub compute: f64,
    pub l1: f64,
    pub l2_l1: f64,
    pub l3_l2: f64,
    pub offchip: f64,
    pub mram: f64,
    pub idle: f64,
}

impl EnergyBreakdown {
    pub fn total(&self) -> f64 {
        self.compute + self.l1 + self.l2_l1 + self.l3_l2 + self.offchip + self.mram + self.idle
    }

    pub fn add(&mut self, o: &EnergyBreakdown) {
        self.compute += o.compute;
        self.l1 += o.l1;
        self.l2_l1 += o.l2_l1;
        self.l3_l2 += o.l3_l2;
        self.offchip += o.offchip;
        self.mram += o.mram;
        self.idle += o.idle;
    }
}

#[derive(Debug, Clone)]
pub struct LayerReport {
    pub layer: usize,
    pub latency_s: f64,
    pub compute_s: f64,
    pub cycles: CycleBreakdown,
    pub energy: EnergyBreakdown,
    pub regime: Regime,
    /// Bytes moved per link.
    pub bytes: BTreeMap<&'static str, usize>,
    /// Transfer time per link in seconds.
    pub transfer_s: BTreeMap<&'static str, f64>,
}

/// Double-buffered analytic latency of a step pipeline, in the unit of
/// the inputs: fill (first transfer), then compute of step i overlapped
/// with the transfer of step i+1, then the drain (last compute).
pub fn analytic_pipeline(compute: &[f64], transfer: &[f64]) -> f64 {
    assert_eq!(compute.len(), transfer.len());
    let n = compute.len();
    if n == 0 {
        return 0.0;
    }
    transfer[0]
        + (0..n - 1).map(|i| compute[i].max(transfer[i + 1])).sum::<f64>()
        + compute[n - 1]
}

/// Discrete-event replay of the same two-buffer pipeline: transfer of
/// step i may start once buffer (i mod 2) is free, i.e. compute of step
/// i-2 has finished; compute of step i needs its transfer done and the
/// engine free.
pub fn simulate_double_buffer(compute: &[f64], transfer: &[f64]) -> f64 {
    assert_eq!(compute.len(), transfer.len());
    let n = compute.len();
    let mut xfer_done = vec![0.0f64; n];
    let mut comp_done = vec![0.0f64; n];
    for i in 0..n {
        let engine_free = if i > 0 { xfer_done[i - 1] } else { 0.0 };
        let buffer_free = if i >= 2 { comp_done[i - 2] } else { 0.0 };
        xfer_done[i] = engine_free.max(buffer_free) + transfer[i];
        let compute_free = if i > 0 { comp_done[i - 1] } else { 0.0 };
        comp_done[i] = compute_free.max(xfer_done[i]) + compute[i];
    }
    comp_done.last().copied().unwrap_or(0.0)
}

/// Build the layer's latency/energy report from its tile schedule.
pub fn layer_timeline(
    ts: &TileSchedule,
    scenario: Scenario,
    opp: &OperatingPoint,
    cal: &CalibrationSet,
) -> LayerReport {
    let f = opp.cluster_freq;
    let dma = link(cal, scenario.dma_link());
    let comp_total = ts.total_compute();
    let comp_s = comp_total.total as f64 / f;

    // Cluster-side rate balance: the DMA streams activations (and, on the
    // L1-sourced scenarios, weight blocks) at job granularity while the
    // accelerator executes, so the layer runs at the slower of the two
    // rates rather than serializing tile loads against compute.
    let xfer_s: Vec<f64> = ts
        .steps
        .iter()
        .map(|s| transfer_time(&dma, s.bytes_in + s.bytes_out + s.bytes_w, opp))
        .collect();
    let dma_total_s: f64 = xfer_s.iter().sum();
    let cluster_s = comp_s.max(dma_total_s);

    // Upstream weight staging runs concurrently with the cluster pipeline.
    let mut transfer_map = BTreeMap::new();
    let mut bytes_map = BTreeMap::new();
    let dma_bytes = ts.bytes_in() + ts.bytes_out() + ts.bytes_w_dma();
    bytes_map.insert(dma.id.name(), dma_bytes);
    transfer_map.insert(dma.id.name(), dma_total_s);

    let mut latency = cluster_s;
    let mut e = EnergyBreakdown::default();
    let mut regime_links: Vec<(LinkId, f64, f64)> = vec![(
        dma.id,
        dma_total_s,
        ts.bytes_w_dma() as f64 / dma_bytes.max(1) as f64,
    )];

    if let Some(up_id) = scenario.weight_upstream() {
        let up = link(cal, up_id);
        let t_up = transfer_time(&up, ts.weight_bytes_total, opp);
        latency = latency.max(t_up);
        bytes_map.insert(up.id.name(), ts.weight_bytes_total);
        transfer_map.insert(up.id.name(), t_up);
        regime_links.push((up.id, t_up, 1.0));
        let e_up = transfer_energy(&up, ts.weight_bytes_total);
        match up_id {
            LinkId::OffchipToL2 => e.offchip = e_up,
            _ => e.l3_l2 = e_up,
        }
    }

    // Weight stream over the dedicated MRAM port (hidden under execute).
    let stream_bits = comp_total.weight_traffic as usize * 256;
    if scenario.weight_source() == WeightSource::Mram {
        bytes_map.insert(LinkId::MramPort.name(), stream_bits / 8);
        e.mram = stream_bits as f64 * cal.e_mram_read();
    }

    // Compute energy: digital power scaled by execute duty, anchored at
    // the benchmark duty the peak power was measured at.
    let active = comp_total.execute
        + if scenario.weight_source() == WeightSource::L1 { comp_total.weight_traffic } else { 0 };
    let duty = (active as f64 / comp_total.total.max(1) as f64).min(1.0);
    let sfr = cal.static_power_frac();
    let norm = sfr + (1.0 - sfr) * cal.duty_ref();
    let p_dig = opp.digital_power();
    e.compute = comp_s * p_dig * (sfr + (1.0 - sfr) * duty) / norm;
    e.idle = (latency - comp_s).max(0.0) * cal.idle_power_frac() * p_dig;

    // Accelerator-side TCDM traffic: activations, plus the weight stream
    // when it rides the shared L1 port.
    let l1_bits = (ts.bytes_in() + ts.bytes_out()) * 8
        + if scenario.weight_source() == WeightSource::L1 { stream_bits } else { 0 };
    e.l1 = l1_bits as f64 * cal.e_l1_acc();
    e.l2_l1 = transfer_energy(&dma, dma_bytes);

    let regime = classify(comp_s, &regime_links);
    LayerReport {
        layer: ts.layer,
        latency_s: latency,
        compute_s: comp_s,
        cycles: comp_total,
        energy: e,
        regime,
        bytes: bytes_map,
        transfer_s: transfer_map,
    }
}

/// Classify an already-built report.
pub fn classify_regime(report: &LayerReport) -> Regime {
    report.regime
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qnn::Mode;

    fn cal() -> CalibrationSet {
        CalibrationSet::default()
    }

    fn spec(mode: Mode, c_in: usize, c_out: usize) -> LayerSpec {
        let pad = if mode == Mode::Pointwise1x1 { 0 } else { 1 };
        LayerSpec::new(mode, c_in, c_out, 8, 1, pad, None, true).unwrap()
    }

    #[test]
    fn single_tile_layer_has_no_weight_dma_in_l1mram() {
        let s = spec(Mode::Dense3x3, 28, 32);
        let ts = plan_tiles(0, &s, 8, 8, Scenario::L1Mram, &cal()).unwrap();
        assert_eq!(ts.steps.len(), 1);
        assert_eq!(ts.bytes_w_dma(), 0);
    }

    #[test]
    fn tile_grid_covers_layer_exactly() {
        let s = spec(Mode::Pointwise1x1, 32, 64);
        let ts = plan_tiles(0, &s, 112, 112, Scenario::L2Mram, &cal()).unwrap();
        let out_px: usize = ts
            .steps
            .iter()
            .map(|st| st.bytes_out)
            .sum::<usize>();
        assert_eq!(out_px, 112 * 112 * 64);
        assert_eq!(ts.tiles_h * ts.tile_h >= 112 && ts.tile_h * (ts.tiles_h - 1) < 112, true);
    }

    #[test]
    fn volume_conservation_with_halo() {
        // Transferred input equals the union of clipped receptive fields:
        // for stride 1, pad 1, 3x3, interior tiles carry a 1-pixel halo.
        let s = spec(Mode::Dense3x3, 16, 32);
        let ts = plan_tiles(0, &s, 48, 48, Scenario::L2Mram, &cal()).unwrap();
        let exact = 48 * 48 * 16;
        let moved = ts.bytes_in();
        assert!(moved >= exact);
        // Halo overhead is bounded by 2 extra rows/cols per tile edge.
        let bound = (48 + 2 * ts.tiles_h) * (48 + 2 * ts.tiles_w) * 16;
        assert!(moved <= bound, "{moved} > {bound}");
    }

    #[test]
    fn capacity_constraint_holds() {
        for (mode, c_in, c_out, h) in [
            (Mode::Dense3x3, 3, 32, 224),
            (Mode::Pointwise1x1, 320, 1280, 7),
            (Mode::Depthwise3x3, 960, 960, 7),
            (Mode::Pointwise1x1, 96, 576, 14),
        ] {
            let s = spec(mode, c_in, c_out, );
            for sc in Scenario::ALL {
                let ts = plan_tiles(0, &s, h, h, sc, &cal()).unwrap();
                let stage_w = sc.weight_source() == WeightSource::L1;
                let in_b = in_extent(&s, ts.tile_h).min(h) * in_extent(&s, ts.tile_w).min(h) * s.c_in;
                let out_b = ts.tile_h * ts.tile_w * ts.c_out_tile;
                let w_b = if stage_w { packed_weight_bytes(&s, ts.c_out_tile) } else { 0 };
                assert!(2 * (in_b + out_b + w_b) <= L1_BYTES, "{mode:?} {sc:?}");
            }
        }
    }

    #[test]
    fn all_data_resident_means_latency_equals_compute() {
        let steps = [3.0, 5.0, 2.0];
        let lat = analytic_pipeline(&steps, &[0.0, 0.0, 0.0]);
        assert_eq!(lat, 10.0);
    }

    #[test]
    fn trivial_regimes() {
        let c = classify(10.0, &[(LinkId::L2ToL1, 1.0, 0.0)]);
        assert_eq!(c, Regime::ComputeDominated);
        let w = classify(1.0, &[(LinkId::OffchipToL2, 10.0, 1.0)]);
        assert_eq!(w, Regime::WeightMemoryBound);
        let b = classify(1.0, &[(LinkId::L2ToL1, 1.1, 0.2)]);
        assert_eq!(b, Regime::WellBalanced);
    }

    #[test]
    fn analytic_matches_event_for_uniform_steps() {
        let c = vec![4.0; 20];
        let t = vec![4.0; 20];
        let a = analytic_pipeline(&c, &t);
        let e = simulate_double_buffer(&c, &t);
        assert!((a - e).abs() <= t[0] + 1e-9, "{a} vs {e}");
    }

    #[test]
    fn energy_parts_sum_to_total() {
        let s = spec(Mode::Pointwise1x1, 96, 576);
        let c = cal();
        let opp = OperatingPoint::nominal(&c);
        let ts = plan_tiles(0, &s, 14, 14, Scenario::L3Flash, &c).unwrap();
        let r = layer_timeline(&ts, Scenario::L3Flash, &opp, &c);
        let total = r.energy.total();
        let sum = r.energy.compute
            + r.energy.l1
            + r.energy.l2_l1
            + r.energy.l3_l2
            + r.energy.offchip
            + r.energy.mram
            + r.energy.idle;
        assert!((total - sum).abs() < 1e-15);
        assert!(r.latency_s >= r.compute_s);
    }
}
