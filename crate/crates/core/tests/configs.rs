use std::path::Path;

use cbo_core::harness::ExperimentConfig;

#[test]
fn checked_in_presets_match_the_built_in_ones() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) != Some("toml") {
            continue;
        }
        let cfg = ExperimentConfig::load(&path).unwrap();
        let preset = ExperimentConfig::preset(cfg.experiment, cfg.method).unwrap();
        assert_eq!(cfg, preset, "{}", path.display());
        seen += 1;
    }
    assert_eq!(seen, 8);
}
