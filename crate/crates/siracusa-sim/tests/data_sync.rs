//! The files shipped under `data/` must stay in sync with the built-in
//! definitions. Regenerate them with
//! `REGEN_DATA=1 cargo test --test data_sync`.

use std::path::Path;

use siracusa_sim::cal::CalibrationSet;
use siracusa_sim::networks::mobilenet_v2;
use siracusa_sim::runner::{parse_network, render_network};

fn check_or_regen(path: &str, content: &str) {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join(path);
    if std::env::var_os("REGEN_DATA").is_some() {
        std::fs::write(&p, content).unwrap();
        return;
    }
    let on_disk = std::fs::read_to_string(&p)
        .unwrap_or_else(|e| panic!("{} missing ({e}); regenerate with REGEN_DATA=1", p.display()));
    assert_eq!(on_disk, content, "{} is stale; regenerate with REGEN_DATA=1", p.display());
}

#[test]
fn network_file_matches_builtin() {
    let net = mobilenet_v2();
    let rendered = render_network(&net);
    check_or_regen("data/mobilenet_v2_1.0_224.net", &rendered);
    // And it round-trips.
    let parsed = parse_network(&rendered, "mobilenet_v2_1.0_224.net").unwrap();
    assert_eq!(parsed.layers.len(), net.layers.len());
}

#[test]
fn calibration_file_matches_defaults() {
    let cal = CalibrationSet::default();
    check_or_regen("data/default.cal", &cal.render());
    let parsed = CalibrationSet::parse(&cal.render()).unwrap();
    for (key, e) in cal.iter() {
        assert_eq!(parsed.get(key), e.value, "{key}");
    }
}
