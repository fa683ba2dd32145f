#![no_main]
use libfuzzer_sys::fuzz_target;
use origin_audit::checkpoint;

fuzz_target!(|data: &[u8]| {
    if let Ok(model) = checkpoint::load(data) {
        // Anything that loads must survive a save/load round trip.
        let again = checkpoint::load(&checkpoint::save(&model)).expect("re-load");
        assert_eq!(checkpoint::save(&again), checkpoint::save(&model));
    }
});
