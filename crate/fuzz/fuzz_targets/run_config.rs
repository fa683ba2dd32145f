#![no_main]
use libfuzzer_sys::fuzz_target;
use origin_audit_cli::config::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = RunConfig::from_toml(text) {
        let _ = cfg.synth_spec();
        let _ = cfg.target_model().map(|m| cfg.experiment(&m));
        let _ = cfg.to_canonical_json();
    }
});
