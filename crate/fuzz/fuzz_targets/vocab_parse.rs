#![no_main]

use capformer::textpipe::Vocab;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(v) = Vocab::from_text(text) {
        assert_eq!(Vocab::from_text(&v.to_text()).unwrap(), v);
    }
});
