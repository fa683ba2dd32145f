#![no_main]
use libfuzzer_sys::fuzz_target;
use origin_audit::report::VerdictReport;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(report) = VerdictReport::from_json(text) {
        let back = VerdictReport::from_json(&report.to_json()).expect("round trip");
        assert_eq!(back.records.len(), report.records.len());
        let _ = report.truth();
    }
});
