#![no_main]

use libfuzzer_sys::fuzz_target;
use piwno::config::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    // lines starting with `set ` are treated as overrides
    let (overrides, body): (Vec<&str>, Vec<&str>) = text.lines().partition(|l| l.starts_with("set "));
    let overrides: Vec<String> = overrides.iter().map(|l| l[4..].to_string()).collect();
    if let Ok(cfg) = ExperimentConfig::from_toml(&body.join("\n"), &overrides) {
        let again = ExperimentConfig::from_toml(&cfg.to_toml().expect("serializes"), &[]).expect("round-trips");
        assert_eq!(again, cfg);
    }
});
