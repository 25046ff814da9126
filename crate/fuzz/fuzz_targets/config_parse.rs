#![no_main]

use libfuzzer_sys::fuzz_target;
use villani_cli::config::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = ExperimentConfig::parse(text) {
        // an accepted config survives its own canonical form
        let again = ExperimentConfig::parse(&cfg.to_toml()).expect("canonical config parses");
        assert_eq!(again.hash(), cfg.hash());
    }
});
