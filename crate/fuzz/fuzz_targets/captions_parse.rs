#![no_main]

use capformer::datapipe::{parse_captions, CaptionFormat};
use capformer::textpipe::LengthFilter;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    let filter = LengthFilter::default();
    let detected = CaptionFormat::detect(text);
    for format in [detected, CaptionFormat::Flickr30kPipe, CaptionFormat::Tsv] {
        let _ = parse_captions(text, format, &filter, "fuzz");
    }
});
