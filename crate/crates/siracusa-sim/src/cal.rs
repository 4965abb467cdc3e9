//! Calibration set: every constant the cost model depends on, each with a
//! unit and a provenance tag, plus the `.cal` text format
//! (`key = value unit # provenance`).

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CalError {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Where a calibration value comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    /// Quoted directly from the published measurements.
    Paper,
    /// Fitted or derived from published aggregates.
    DerivedFit,
    /// Modeling choice with no published counterpart.
    Default,
}

impl Provenance {
    pub fn token(self) -> &'static str {
        match self {
            Provenance::Paper => "paper",
            Provenance::DerivedFit => "derived-fit",
            Provenance::Default => "default",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "paper" => Some(Provenance::Paper),
            "derived-fit" => Some(Provenance::DerivedFit),
            "default" => Some(Provenance::Default),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Entry {
    pub value: f64,
    pub unit: &'static str,
    pub provenance: Provenance,
}

macro_rules! cal_keys {
    ($(($key:ident, $unit:literal, $default:expr, $prov:ident, $doc:literal)),+ $(,)?) => {
        /// All recognized calibration keys, in file order.
        pub const KEYS: &[(&str, &str, f64, Provenance, &str)] = &[
            $((stringify!($key), $unit, $default, Provenance::$prov, $doc)),+
        ];

        impl CalibrationSet {
            $(
                #[doc = $doc]
                pub fn $key(&self) -> f64 {
                    self.get(stringify!($key))
                }
            )+
        }
    };
}

cal_keys![
    // Operating points (published silicon characterization).
    (nominal_cluster_freq, "Hz", 360e6, Paper, "Nominal cluster clock."),
    (nominal_mram_freq, "Hz", 180e6, Paper, "Nominal MRAM macro clock (cluster / 2)."),
    (nominal_cluster_power, "W", 0.332, Paper, "Peak cluster power at nominal, MRAM included."),
    (nominal_mram_power, "W", 0.069, Paper, "MRAM macro power at nominal."),
    (nominal_voltage, "V", 0.8, Paper, "Nominal supply voltage."),
    (low_power_cluster_freq, "Hz", 210e6, Paper, "Low-power cluster clock."),
    (low_power_mram_freq, "Hz", 105e6, Paper, "Low-power MRAM macro clock."),
    (low_power_cluster_power, "W", 0.151, Paper, "Peak cluster power at low-power point."),
    (low_power_mram_power, "W", 0.040, Paper, "MRAM macro power at low-power point."),
    (low_power_voltage, "V", 0.65, Paper, "Low-power supply voltage."),
    // Per-job cycle overheads. Only the sum K = launch + first_prefetch +
    // normquant + streamout is fitted (from the two published dense-kernel
    // throughputs); the split across phases is a modeling choice.
    (launch_cycles, "cycle", 34.0, Default, "Job launch/config overhead."),
    (first_prefetch_cycles, "cycle", 64.0, DerivedFit, "Input-buffer fill for the first chunk (8x8x32 B at 32 B/cycle)."),
    (nq_cycles_per_channel, "cycle", 8.0, DerivedFit, "Normquant cycles per resident output channel."),
    (dma_setup_cycles, "cycle", 50.0, Default, "Per-DMA-job setup cost."),
    (miss_service_cycles, "cycle", 200.0, Default, "Firmware latency to service a page-miss interrupt."),
    // Compute power model.
    (static_power_frac, "ratio", 0.46, DerivedFit, "Static share of cluster compute power."),
    (duty_ref, "ratio", 0.855, DerivedFit, "Execute-duty of the dense-8b benchmark the peak power is quoted at."),
    (idle_power_frac, "ratio", 0.12, DerivedFit, "Idle power fraction of digital peak while transfer-stalled."),
    // Transfer links.
    (offchip_bw, "bit/s", 2.9e9, DerivedFit, "Sustained off-chip HyperBus bandwidth (frequency-independent)."),
    (l3mram_port_bits, "bit/cycle", 10.0, DerivedFit, "Sustained on-chip L3-MRAM-to-L2 width per cluster cycle."),
    (dma_eff_cdc, "ratio", 0.80, DerivedFit, "Sustained fraction of cluster-DMA peak through the IO-domain CDC."),
    (dma_eff_tile, "ratio", 0.95, DerivedFit, "Sustained fraction of cluster-DMA peak from in-cluster tile SRAM."),
    // Per-bit transfer energies.
    (e_offchip, "J/bit", 116e-12, DerivedFit, "Off-chip HyperBus access energy."),
    (e_l2_l1, "J/bit", 2.0e-12, DerivedFit, "Cluster-DMA path through the IO-domain CDC."),
    (e_tile_l1, "J/bit", 0.8e-12, DerivedFit, "Cluster-DMA path from in-cluster tile SRAM."),
    (e_l3m_l2, "J/bit", 2.0e-12, DerivedFit, "On-chip L3 MRAM to L2 transfer."),
    (e_mram_read, "J/bit", 0.75e-12, DerivedFit, "MRAM streaming read (69 mW / 92.16 Gbit/s)."),
    (e_l1_acc, "J/bit", 1.0e-12, DerivedFit, "Accelerator-side TCDM traffic."),
    // Interconnect arbitration defaults.
    (min_share_shallow, "ratio", 0.75, Default, "Bank-bandwidth share guaranteed to the accelerator branch."),
    (min_share_log, "ratio", 0.25, Default, "Bank-bandwidth share guaranteed to the core/DMA branch."),
    // Sensitivity switch: zero the launch overhead to emulate perfect
    // dual-context task queueing.
    (zero_launch, "bool", 0.0, Default, "When 1, job launch cycles are hidden entirely."),
];

/// The full calibration set. Values are stored per key; unknown keys are
/// rejected at load time.
#[derive(Debug, Clone)]
pub struct CalibrationSet {
    entries: Vec<(&'static str, Entry)>,
}

impl Default for CalibrationSet {
    fn default() -> Self {
        CalibrationSet {
            entries: KEYS
                .iter()
                .map(|&(k, unit, v, prov, _)| (k, Entry { value: v, unit, provenance: prov }))
                .collect(),
        }
    }
}

impl CalibrationSet {
    pub fn get(&self, key: &str) -> f64 {
        self.entries
            .iter()
            .find(|(k, _)| *k == key)
            .unwrap_or_else(|| panic!("unknown calibration key {key}"))
            .1
            .value
    }

    pub fn entry(&self, key: &str) -> &Entry {
        &self.entries.iter().find(|(k, _)| *k == key).expect("unknown key").1
    }

    pub fn set(&mut self, key: &str, value: f64, provenance: Provenance) {
        let e = self
            .entries
            .iter_mut()
            .find(|(k, _)| *k == key)
            .unwrap_or_else(|| panic!("unknown calibration key {key}"));
        e.1.value = value;
        e.1.provenance = provenance;
    }

    pub fn iter(&self) -> impl Iterator<Item = (&'static str, &Entry)> {
        self.entries.iter().map(|(k, e)| (*k, e))
    }

    /// Parse a `.cal` file. Lines are `key = value unit # provenance`;
    /// blank lines and `#` comment lines are skipped; unknown keys are an
    /// error; keys not present keep their defaults.
    pub fn parse(text: &str) -> Result<Self, CalError> {
        let mut cal = CalibrationSet::default();
        for (i, raw_line) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = raw_line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (head, prov_str) = match line.split_once('#') {
                Some((h, p)) => (h.trim(), p.trim()),
                None => (line, ""),
            };
            let (key, rest) = head.split_once('=').ok_or_else(|| CalError::Parse {
                line: lineno,
                msg: "expected `key = value unit`".into(),
            })?;
            let key = key.trim();
            let known = KEYS.iter().find(|(k, ..)| *k == key).ok_or_else(|| CalError::Parse {
                line: lineno,
                msg: format!("unknown key `{key}`"),
            })?;
            let mut parts = rest.split_whitespace();
            let value: f64 = parts
                .next()
                .ok_or_else(|| CalError::Parse { line: lineno, msg: "missing value".into() })?
                .parse()
                .map_err(|e| CalError::Parse { line: lineno, msg: format!("bad value: {e}") })?;
            let unit = parts.next().unwrap_or("");
            if !unit.is_empty() && unit != known.1 {
                return Err(CalError::Parse {
                    line: lineno,
                    msg: format!("unit `{unit}` for `{key}`, expected `{}`", known.1),
                });
            }
            let provenance = if prov_str.is_empty() {
                known.3
            } else {
                Provenance::parse(prov_str).ok_or_else(|| CalError::Parse {
                    line: lineno,
                    msg: format!("unknown provenance `{prov_str}`"),
                })?
            };
            cal.set(key, value, provenance);
        }
        Ok(cal)
    }

    pub fn load(path: &Path) -> Result<Self, CalError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Render in the `.cal` format; `parse(render(x))` round-trips.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (key, e) in self.iter() {
            writeln!(out, "{key} = {} {} # {}", e.value, e.unit, e.provenance.token()).unwrap();
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), CalError> {
        std::fs::write(path, self.render())?;
        Ok(())
    }

    /// Fitted per-job fixed overhead K = launch + first_prefetch +
    /// normquant(32 ch) + streamout of the benchmark job.
    pub fn job_overhead_k(&self) -> f64 {
        self.launch_cycles() + self.first_prefetch_cycles() + 32.0 * self.nq_cycles_per_channel() + 36.0
    }
}
