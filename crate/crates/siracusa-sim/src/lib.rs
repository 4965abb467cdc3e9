//! Transaction-level functional, performance, and energy simulator of the
//! Siracusa heterogeneous edge cluster: eight RISC-V cores, the N-EUREKA
//! quantized-convolution accelerator, and an on-chip MRAM weight memory,
//! across four non-volatile-memory integration scenarios (off-chip Flash
//! behind L2, on-chip MRAM behind L2, MRAM as cluster-adjacent tile
//! memory, and MRAM on a dedicated accelerator port).
//!
//! The functional model ([`qnn`]) is bit-exact against a reference
//! integer convolution; the timing model ([`timing`], [`mem`], [`xfer`],
//! [`paging`], [`tiler`]) reproduces published kernel throughputs and the
//! end-to-end MobileNet-V2 latency/energy comparison ([`runner`]).
//!
//! ```
//! use siracusa_sim::cal::CalibrationSet;
//! use siracusa_sim::networks::mobilenet_v2;
//! use siracusa_sim::runner::run_network;
//! use siracusa_sim::tiler::Scenario;
//! use siracusa_sim::timing::OperatingPoint;
//!
//! let cal = CalibrationSet::default();
//! let opp = OperatingPoint::nominal(&cal);
//! let report = run_network(&mobilenet_v2(), Scenario::L1Mram, &opp, &cal).unwrap();
//! assert!(report.latency_s < 0.010 && report.mj_per_inference < 2.0);
//! ```

pub mod cal;
#[cfg(doctest)]
mod guide;
pub mod mem;
pub mod networks;
pub mod paging;
pub mod qnn;
pub mod runner;
pub mod tiler;
pub mod timing;
pub mod xfer;
