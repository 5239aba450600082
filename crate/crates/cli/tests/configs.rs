use std::fs;
use std::path::PathBuf;

use balance_core::config::{parse_config, ConfigDocument};
use balance_core::simloop::Scenario;

fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn documented_defaults_equal_built_in_defaults() {
    let text = fs::read_to_string(configs_dir().join("default.toml")).unwrap();
    assert_eq!(parse_config(&text).unwrap(), Scenario::default());
    assert_eq!(ConfigDocument::parse(&text).unwrap(), ConfigDocument::default());
}

#[test]
fn shipped_configs_are_valid() {
    let mut count = 0;
    for entry in fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let text = fs::read_to_string(&path).unwrap();
            let doc = ConfigDocument::parse(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            doc.to_scenario().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            count += 1;
        }
    }
    assert!(count >= 5);
}
