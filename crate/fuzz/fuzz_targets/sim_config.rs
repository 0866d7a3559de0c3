#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        // Split off `key=value` override lines after a `---` marker.
        let (body, overrides) = text.split_once("\n---\n").unwrap_or((text, ""));
        let overrides: Vec<String> = overrides.lines().map(str::to_owned).collect();
        if let Ok(cfg) = mimu_core::SimConfig::from_toml_str(body, &overrides) {
            let _ = cfg.sample_count();
        }
    }
});
