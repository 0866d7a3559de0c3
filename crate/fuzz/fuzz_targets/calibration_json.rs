#![no_main]
use libfuzzer_sys::fuzz_target;
use mimu_core::calib::CalibrationResult;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(res) = CalibrationResult::from_json(text) {
            let again = serde_json::to_string(&res).unwrap();
            assert_eq!(CalibrationResult::from_json(&again).unwrap(), res);
        }
    }
});
