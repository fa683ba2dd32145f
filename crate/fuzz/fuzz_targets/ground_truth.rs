#![no_main]
use libfuzzer_sys::fuzz_target;
use origin_audit::report::{load_truth_from_reader, write_truth};

fuzz_target!(|data: &[u8]| {
    if let Ok(truth) = load_truth_from_reader(data) {
        let mut buf = Vec::new();
        write_truth(&truth, &mut buf).expect("write");
        assert_eq!(load_truth_from_reader(&buf[..]).expect("re-read"), truth);
    }
});
