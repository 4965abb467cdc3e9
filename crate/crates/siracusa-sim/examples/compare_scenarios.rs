//! Run MobileNet-V2 through all four NVM scenarios and print the
//! per-scenario latency/energy plus the headline ratios.
//!
//! `cargo run --example compare_scenarios`

use siracusa_sim::cal::CalibrationSet;
use siracusa_sim::networks::mobilenet_v2;
use siracusa_sim::runner::compare_scenarios;
use siracusa_sim::timing::OperatingPoint;

fn main() {
    let cal = CalibrationSet::default();
    let net = mobilenet_v2();
    for opp in [OperatingPoint::nominal(&cal), OperatingPoint::low_power(&cal)] {
        println!("--- {} ---", opp.name);
        let table = compare_scenarios(&net, &opp, &cal).expect("schedulable");
        print!("{}", table.render());
    }
}
