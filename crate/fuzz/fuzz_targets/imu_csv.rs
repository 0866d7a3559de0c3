#![no_main]
use libfuzzer_sys::fuzz_target;
use mimu_core::ImuSeries;

fuzz_target!(|data: &[u8]| {
    if let Ok(series) = ImuSeries::parse_csv(data) {
        // Timestamps are rewritten on the regular grid; samples must survive exactly.
        let mut buf = Vec::new();
        series.write_csv(&mut buf).unwrap();
        let back = ImuSeries::parse_csv(&buf).unwrap();
        assert_eq!((&back.gyro, &back.accel), (&series.gyro, &series.accel));
        let _ = mimu_core::vimu::VirtualSeries::from_imu_series(&series);
    }
});
