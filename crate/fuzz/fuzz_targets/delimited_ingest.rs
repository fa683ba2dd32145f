#![no_main]
use libfuzzer_sys::fuzz_target;
use origin_audit::ingest::{load_delimited_from_reader, DatasetSchema};

fuzz_target!(|data: &[u8]| {
    let schema = DatasetSchema::default();
    if let Ok(ds) = load_delimited_from_reader(data, &schema) {
        assert!(ds.origins().len() <= ds.len());
    }
});
