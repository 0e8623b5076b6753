#![no_main]

use capformer::datapipe::capf;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(t) = capf::decode(data) {
        assert_eq!(capf::encode(&t), data);
    }
});
