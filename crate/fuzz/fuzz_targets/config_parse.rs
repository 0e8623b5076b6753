#![no_main]

use capformer::config::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(c) = RunConfig::parse(text, "fuzz") {
        let _ = c.validate();
    }
});
