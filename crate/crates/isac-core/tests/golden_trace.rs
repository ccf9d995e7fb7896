//! Golden-file pin on the trace CSV schema.
//!
//! A short continuous-sensing run is rendered to CSV and compared
//! byte-for-byte against a committed reference.  Any change to the column
//! set, the float formatting, the event names, the random-stream layout or
//! the slot stitching shows up here as a diff, which is the point: the trace
//! format is a versioned interface, and changing it must be a deliberate
//! act that updates the reference file.
//!
//! To regenerate after an intentional format change:
//!
//! ```text
//! GOLDEN_REGENERATE=1 cargo test -p isac-core --test golden_trace
//! ```

use isac_core::harness::{run_single, trace_csv_bytes, SystemConfig};
use isac_core::schemes::SchemeKind;

/// Committed reference trace: continuous sensing, 8×8 panel, seed 42,
/// 10 slots (establishment plus the first connected slots).
const GOLDEN_PATH: &str = concat!(
    env!("CARGO_MANIFEST_DIR"),
    "/tests/data/rb_8x8_seed42_10slots.csv"
);

fn golden_run_csv() -> Vec<u8> {
    let mut cfg = SystemConfig::default_config();
    cfg.run.n_slots = 10;
    let out = run_single(&cfg, SchemeKind::Rb, 42).expect("golden run must succeed");
    trace_csv_bytes(&out.trace)
}

#[test]
fn trace_csv_matches_the_committed_golden_file() {
    let produced = golden_run_csv();
    if std::env::var_os("GOLDEN_REGENERATE").is_some() {
        std::fs::write(GOLDEN_PATH, &produced).expect("write golden file");
        return;
    }
    let committed = std::fs::read(GOLDEN_PATH).expect(
        "golden file missing — run once with GOLDEN_REGENERATE=1 to create it",
    );
    assert_eq!(
        produced,
        committed,
        "trace CSV bytes drifted from the committed schema \
         (regenerate deliberately with GOLDEN_REGENERATE=1 if intended)"
    );
}

#[test]
fn golden_run_is_reproducible_within_a_process() {
    assert_eq!(golden_run_csv(), golden_run_csv());
}
