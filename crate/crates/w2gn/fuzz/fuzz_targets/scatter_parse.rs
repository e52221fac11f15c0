//! Scatter CSV parsing must fail cleanly on any input.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = w2gn::data::parse_scatter_str(text);
    }
});
