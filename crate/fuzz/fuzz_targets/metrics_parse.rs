#![no_main]

use capformer::trainer::{metrics_csv, parse_metrics};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(rows) = parse_metrics(text, "fuzz") {
        parse_metrics(&metrics_csv(&rows), "fuzz").expect("written metrics parse back");
    }
});
