#![no_main]
use ftncfm::harness::PipelineConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = PipelineConfig::from_toml(text) {
        let back = PipelineConfig::from_toml(&cfg.to_toml()).expect("round trip");
        assert_eq!(back.hash(), cfg.hash());
    }
});
