#![no_main]
use libfuzzer_sys::fuzz_target;
use mimu_core::harness::ExperimentPlan;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = ExperimentPlan::from_toml_str(text, &[]);
    }
});
