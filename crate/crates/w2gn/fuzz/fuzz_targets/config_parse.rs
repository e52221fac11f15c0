//! Experiment and benchmark config parsing must fail cleanly on any input.

#![no_main]

use libfuzzer_sys::fuzz_target;
use std::path::Path;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = w2gn::config::parse_config(text, Path::new("fuzz.toml"));
        let _ = w2gn::config::parse_benchmark_config(text, Path::new("fuzz.toml"));
    }
});
