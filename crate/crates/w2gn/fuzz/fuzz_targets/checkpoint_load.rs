//! Checkpoint decoding must reject arbitrary bytes without panicking or
//! allocating unboundedly.

#![no_main]

use libfuzzer_sys::fuzz_target;
use std::path::Path;

fuzz_target!(|data: &[u8]| {
    let _ = w2gn::checkpoint::load_bytes(data, Path::new("fuzz.ckpt"));
});
