#![no_main]
use libfuzzer_sys::fuzz_target;
use mimu_core::vimu::{build_fusion, VimuSidecar};

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(side) = VimuSidecar::from_json(text) {
            let _ = build_fusion(&side.config);
        }
    }
});
